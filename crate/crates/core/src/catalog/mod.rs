//! The track catalog: a single immutable relational table plus the SQL
//! subset that filters it.

mod exec;
mod lexer;
mod parser;
mod query;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exec::execute_sql;
pub use parser::parse_sql;
pub use query::{CmpOp, Column, ColumnKind, Expr, Literal, OrderBy, Projection, SqlError, SqlQuery};

/// Length every track identifier must have.
pub const TRACK_ID_LEN: usize = 22;

/// One row of the `tracks` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: String,
    pub title: String,
    pub artist: String,
    pub album: String,
    pub popularity: u32,
    pub release_date: NaiveDate,
    pub tempo: f64,
    pub key: String,
    pub lyrics: String,
    /// Lowercase tags: genre, mood, instrument, theme, usage.
    pub attributes: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate track_id {track_id:?}")]
    DuplicateId { line: usize, track_id: String },
    #[error("line {line}: track_id {track_id:?} must be exactly 22 characters")]
    InvalidTrackId { line: usize, track_id: String },
    #[error("line {line}: invalid release_date {value:?}")]
    InvalidDate { line: usize, value: String },
    #[error("line {line}: invalid tempo {value} for track {track_id:?}")]
    InvalidTempo {
        line: usize,
        track_id: String,
        value: f64,
    },
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Wire shape of a catalog line. Dates are parsed by hand so that a bad date
/// is reported as such rather than as a generic decode failure.
#[derive(Deserialize)]
struct RawTrack {
    track_id: String,
    title: String,
    artist: String,
    album: String,
    popularity: u32,
    release_date: String,
    tempo: f64,
    key: String,
    lyrics: String,
    attributes: Vec<String>,
}

/// Immutable, in-memory track table.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tracks: Vec<Track>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    /// Builds a catalog from already-typed tracks, checking every row
    /// invariant. Line numbers in errors are 1-based positions in `tracks`.
    pub fn from_tracks(tracks: Vec<Track>) -> Result<Self, CatalogError> {
        let mut catalog = Catalog {
            tracks: Vec::with_capacity(tracks.len()),
            by_id: HashMap::with_capacity(tracks.len()),
        };
        for (i, track) in tracks.into_iter().enumerate() {
            catalog.push(i + 1, track)?;
        }
        Ok(catalog)
    }

    /// Reads one JSON object per line. Blank lines are skipped.
    pub fn ingest<R: BufRead>(reader: R) -> Result<Self, CatalogError> {
        let mut catalog = Catalog::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawTrack =
                serde_json::from_str(&line).map_err(|e| CatalogError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let release_date = NaiveDate::parse_from_str(raw.release_date.trim(), "%Y-%m-%d")
                .map_err(|_| CatalogError::InvalidDate {
                    line: line_no,
                    value: raw.release_date.clone(),
                })?;
            let track = Track {
                track_id: raw.track_id,
                title: raw.title,
                artist: raw.artist,
                album: raw.album,
                popularity: raw.popularity,
                release_date,
                tempo: raw.tempo,
                key: raw.key,
                lyrics: raw.lyrics,
                attributes: raw.attributes,
            };
            catalog.push(line_no, track)?;
        }
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let file = File::open(path)?;
        Self::ingest(BufReader::new(file))
    }

    fn push(&mut self, line: usize, mut track: Track) -> Result<(), CatalogError> {
        if track.track_id.chars().count() != TRACK_ID_LEN {
            return Err(CatalogError::InvalidTrackId {
                line,
                track_id: track.track_id,
            });
        }
        if !(track.tempo.is_finite() && track.tempo > 0.0) {
            return Err(CatalogError::InvalidTempo {
                line,
                track_id: track.track_id,
                value: track.tempo,
            });
        }
        if self.by_id.contains_key(&track.track_id) {
            return Err(CatalogError::DuplicateId {
                line,
                track_id: track.track_id,
            });
        }
        for tag in &mut track.attributes {
            *tag = tag.to_lowercase();
        }
        self.by_id.insert(track.track_id.clone(), self.tracks.len());
        self.tracks.push(track);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, track_id: &str) -> Option<&Track> {
        self.by_id.get(track_id).map(|&i| &self.tracks[i])
    }

    pub fn contains(&self, track_id: &str) -> bool {
        self.by_id.contains_key(track_id)
    }

    /// Rows in ingest order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track_ids(&self) -> impl Iterator<Item = &str> {
        self.tracks.iter().map(|t| t.track_id.as_str())
    }

    /// Track ids in the default result order: popularity descending, then
    /// track_id ascending.
    pub fn popularity_order(&self) -> Vec<String> {
        let mut rows: Vec<&Track> = self.tracks.iter().collect();
        rows.sort_by(|a, b| {
            b.popularity
                .cmp(&a.popularity)
                .then_with(|| a.track_id.cmp(&b.track_id))
        });
        rows.into_iter().map(|t| t.track_id.clone()).collect()
    }

    /// Writes the catalog in its ingest format.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for track in &self.tracks {
            serde_json::to_writer(&mut w, track)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
