//! BM25 inverted indexes over the five text projections of the catalog.
//!
//! ```text
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf(t,D)·(k1+1) / (tf(t,D) + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Query terms are deduplicated before scoring. The idf above is strictly
//! positive, so every document sharing a term with the query scores > 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Track};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusType {
    Title,
    Artist,
    Album,
    Lyrics,
    Attributes,
}

impl CorpusType {
    pub const ALL: [CorpusType; 5] = [
        CorpusType::Title,
        CorpusType::Artist,
        CorpusType::Album,
        CorpusType::Lyrics,
        CorpusType::Attributes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusType::Title => "title",
            CorpusType::Artist => "artist",
            CorpusType::Album => "album",
            CorpusType::Lyrics => "lyrics",
            CorpusType::Attributes => "attributes",
        }
    }

    /// The raw text this corpus indexes for a track. Tags are joined with
    /// spaces, so multi-word tags contribute one token per word.
    pub fn document(self, track: &Track) -> String {
        match self {
            CorpusType::Title => track.title.clone(),
            CorpusType::Artist => track.artist.clone(),
            CorpusType::Album => track.album.clone(),
            CorpusType::Lyrics => track.lyrics.clone(),
            CorpusType::Attributes => track.attributes.join(" "),
        }
    }
}

impl fmt::Display for CorpusType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorpusType::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown corpus {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty catalog")]
    EmptyCatalog,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    corpus: CorpusType,
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(catalog: &Catalog, corpus: CorpusType) -> Result<Self, IndexError> {
        Self::build_with(catalog, corpus, Bm25Params::default())
    }

    pub fn build_with(
        catalog: &Catalog,
        corpus: CorpusType,
        params: Bm25Params,
    ) -> Result<Self, IndexError> {
        if catalog.is_empty() {
            return Err(IndexError::EmptyCatalog);
        }
        let mut doc_ids = Vec::with_capacity(catalog.len());
        let mut doc_lengths = Vec::with_capacity(catalog.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for (doc, track) in catalog.tracks().iter().enumerate() {
            let tokens = tokenize(&corpus.document(track));
            doc_ids.push(track.track_id.clone());
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
        }
        Ok(Self::assemble(corpus, params, doc_ids, doc_lengths, postings))
    }

    fn assemble(
        corpus: CorpusType,
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: HashMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Bm25Index {
            corpus,
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        }
    }

    pub fn corpus(&self) -> CorpusType {
        self.corpus
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, track_id: &str) -> Option<u32> {
        self.doc_ids
            .iter()
            .position(|d| d == track_id)
            .map(|i| self.doc_lengths[i])
    }

    /// Postings for a term as (track_id, tf) pairs.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.doc_ids[p.doc as usize].as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Ranked ids with positive scores, best first; ties by track_id.
    pub fn search(&self, query: &str, topk: usize) -> Vec<String> {
        self.search_scored(query, topk)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    pub fn search_scored(&self, query: &str, topk: usize) -> Vec<(String, f64)> {
        let mut seen = HashSet::new();
        let terms: Vec<String> = tokenize(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        let mut scores = vec![0.0f64; self.doc_count()];
        let Bm25Params { k1, b } = self.params;
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let tf = p.tf as f64;
                let len = self.doc_lengths[p.doc as usize] as f64;
                let norm = 1.0 - b + b * len / self.avg_doc_length;
                scores[p.doc as usize] += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s > 0.0)
            .collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        ranked.truncate(topk);
        ranked
            .into_iter()
            .map(|(d, s)| (self.doc_ids[d].clone(), s))
            .collect()
    }

    /// Versioned snapshot: a header line, a documents line, then one line
    /// per term in sorted order.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            corpus: self.corpus,
            k1: self.params.k1,
            b: self.params.b,
            doc_count: self.doc_count(),
            term_count: self.term_count(),
        };
        let json = |e: serde_json::Error| IndexError::Snapshot(e.to_string());
        serde_json::to_writer(&mut w, &header).map_err(json)?;
        w.write_all(b"\n")?;
        let docs: Vec<(&str, u32)> = self
            .doc_ids
            .iter()
            .map(String::as_str)
            .zip(self.doc_lengths.iter().copied())
            .collect();
        serde_json::to_writer(&mut w, &docs).map_err(json)?;
        w.write_all(b"\n")?;
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        for term in terms {
            let list: Vec<(u32, u32)> = self.postings[term].iter().map(|p| (p.doc, p.tf)).collect();
            serde_json::to_writer(&mut w, &(term, list)).map_err(json)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(r: R) -> Result<Self, IndexError> {
        let bad = |m: String| IndexError::Snapshot(m);
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let header: SnapshotHeader =
            serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
            return Err(bad(format!(
                "unsupported snapshot {} v{}",
                header.format, header.version
            )));
        }
        let docs_line = lines.next().ok_or_else(|| bad("missing documents".into()))??;
        let docs: Vec<(String, u32)> =
            serde_json::from_str(&docs_line).map_err(|e| bad(format!("documents: {e}")))?;
        if docs.len() != header.doc_count || docs.is_empty() {
            return Err(bad(format!(
                "header declares {} documents, found {}",
                header.doc_count,
                docs.len()
            )));
        }
        let (doc_ids, doc_lengths): (Vec<String>, Vec<u32>) = docs.into_iter().unzip();
        let mut postings = HashMap::with_capacity(header.term_count);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (term, list): (String, Vec<(u32, u32)>) =
                serde_json::from_str(&line).map_err(|e| bad(format!("postings: {e}")))?;
            let list: Vec<Posting> = list
                .into_iter()
                .map(|(doc, tf)| {
                    if (doc as usize) < doc_ids.len() {
                        Ok(Posting { doc, tf })
                    } else {
                        Err(bad(format!("posting for {term:?} points past the document table")))
                    }
                })
                .collect::<Result<_, _>>()?;
            postings.insert(term, list);
        }
        if postings.len() != header.term_count {
            return Err(bad(format!(
                "header declares {} terms, found {}",
                header.term_count,
                postings.len()
            )));
        }
        let params = Bm25Params {
            k1: header.k1,
            b: header.b,
        };
        Ok(Self::assemble(header.corpus, params, doc_ids, doc_lengths, postings))
    }
}

const SNAPSHOT_FORMAT: &str = "muse-bm25-snapshot";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    corpus: CorpusType,
    k1: f64,
    b: f64,
    doc_count: usize,
    term_count: usize,
}
