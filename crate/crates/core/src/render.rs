use serde::{Deserialize, Serialize};

use crate::catalog::Track;
use crate::semantic_id::{SemanticId, SemanticIndex};

/// Everything a prompt or client shows about one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRendering {
    pub track_id: String,
    pub title: String,
    pub artist: String,
    pub album: String,
    pub tags: Vec<String>,
    pub tempo: f64,
    pub key: String,
    pub release_date: String,
    pub popularity: u32,
    pub semantic_ids: Vec<SemanticId>,
}

impl TrackRendering {
    pub fn new(track: &Track, semantic: &SemanticIndex) -> Self {
        Self {
            track_id: track.track_id.clone(),
            title: track.title.clone(),
            artist: track.artist.clone(),
            album: track.album.clone(),
            tags: track.attributes.clone(),
            tempo: track.tempo,
            key: track.key.clone(),
            release_date: track.release_date.format("%Y-%m-%d").to_string(),
            popularity: track.popularity,
            semantic_ids: semantic.codes_for(&track.track_id),
        }
    }

    /// Two-line text form: metadata, then one entry per semantic ID.
    pub fn to_prompt_text(&self) -> String {
        let mut s = format!(
            "TrackID: {}, title: {}, artist: {}, album: {}, tags: {}, tempo: {:.2}, key: {}, release_date: {}",
            self.track_id,
            self.title,
            self.artist,
            self.album,
            self.tags.join(", "),
            self.tempo,
            self.key,
            self.release_date,
        );
        if !self.semantic_ids.is_empty() {
            s.push('\n');
            let ids: Vec<String> = self.semantic_ids.iter().map(SemanticId::render).collect();
            s.push_str(&ids.join(", "));
        }
        s
    }
}
