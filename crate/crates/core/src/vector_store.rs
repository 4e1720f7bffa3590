//! Dense embedding tables and exact (full-scan) similarity search.
//!
//! Text-to-item and item-to-item retrieval rank by cosine similarity;
//! user-to-item ranks by raw dot product, which is the score BPR factors
//! are trained for.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityType {
    Text,
    Audio,
    Image,
    Cf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorDbType {
    Metadata,
    Lyrics,
    Attributes,
    Audio,
    Image,
    Cf,
}

impl ModalityType {
    pub const ALL: [ModalityType; 4] = [
        ModalityType::Text,
        ModalityType::Audio,
        ModalityType::Image,
        ModalityType::Cf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityType::Text => "text",
            ModalityType::Audio => "audio",
            ModalityType::Image => "image",
            ModalityType::Cf => "cf",
        }
    }
}

impl VectorDbType {
    pub const ALL: [VectorDbType; 6] = [
        VectorDbType::Metadata,
        VectorDbType::Lyrics,
        VectorDbType::Attributes,
        VectorDbType::Audio,
        VectorDbType::Image,
        VectorDbType::Cf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VectorDbType::Metadata => "metadata",
            VectorDbType::Lyrics => "lyrics",
            VectorDbType::Attributes => "attributes",
            VectorDbType::Audio => "audio",
            VectorDbType::Image => "image",
            VectorDbType::Cf => "cf",
        }
    }
}

impl FromStr for ModalityType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModalityType::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

impl FromStr for VectorDbType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VectorDbType::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown vector db {s:?}"))
    }
}

/// Names one embedding space, rendered as `modality:vector_db`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpaceId {
    pub modality: ModalityType,
    pub db: VectorDbType,
}

impl SpaceId {
    pub const fn new(modality: ModalityType, db: VectorDbType) -> Self {
        Self { modality, db }
    }

    pub const TEXT_METADATA: SpaceId = SpaceId::new(ModalityType::Text, VectorDbType::Metadata);
    pub const TEXT_LYRICS: SpaceId = SpaceId::new(ModalityType::Text, VectorDbType::Lyrics);
    pub const TEXT_ATTRIBUTES: SpaceId = SpaceId::new(ModalityType::Text, VectorDbType::Attributes);
    pub const AUDIO: SpaceId = SpaceId::new(ModalityType::Audio, VectorDbType::Audio);
    pub const IMAGE: SpaceId = SpaceId::new(ModalityType::Image, VectorDbType::Image);
    pub const CF: SpaceId = SpaceId::new(ModalityType::Cf, VectorDbType::Cf);
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.modality.as_str(), self.db.as_str())
    }
}

impl FromStr for SpaceId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, d) = s
            .split_once(':')
            .ok_or_else(|| format!("space {s:?} is not modality:vector_db"))?;
        Ok(SpaceId::new(m.parse()?, d.parse()?))
    }
}

impl Serialize for SpaceId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpaceId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("line {line}: malformed embedding record: {message}")]
    Malformed { line: usize, message: String },
    #[error("vector for {id:?} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("vector for {id:?} has a non-finite component")]
    NonFinite { id: String },
    #[error("duplicate embedding id {id:?}")]
    DuplicateId { id: String },
    #[error("embedding table for {space} is empty")]
    EmptyTable { space: SpaceId },
    #[error("query vector has dimension {found}, table expects {expected}")]
    QueryDimension { expected: usize, found: usize },
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("no embedding table loaded for space {0}")]
    UnknownSpace(SpaceId),
    #[error("space {0} is not valid for this tool")]
    InvalidSpace(SpaceId),
    #[error("track {id:?} not found in space {space}")]
    UnknownTrack { id: String, space: SpaceId },
    #[error("user {0:?} has no collaborative-filtering embedding")]
    UnknownUser(String),
    #[error("embedding provider failed for {space}: {message}")]
    Provider { space: SpaceId, message: String },
    #[error("embedding i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl VectorError {
    pub fn kind(&self) -> &'static str {
        match self {
            VectorError::UnknownTrack { .. } => "unknown_track",
            VectorError::UnknownUser(_) => "unknown_user",
            VectorError::UnknownSpace(_) => "unknown_space",
            VectorError::InvalidSpace(_) => "invalid_space",
            VectorError::Provider { .. } => "provider",
            VectorError::ZeroQuery => "zero_query",
            _ => "vector",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
}

/// Immutable table of same-dimension vectors keyed by id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    space: SpaceId,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    norms: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn from_records<I, S>(space: SpaceId, records: I) -> Result<Self, VectorError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = EmbeddingTable {
            space,
            dim: 0,
            ids: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            index: HashMap::new(),
        };
        for (id, v) in records {
            table.push(id.into(), v)?;
        }
        if table.ids.is_empty() {
            return Err(VectorError::EmptyTable { space });
        }
        Ok(table)
    }

    fn push(&mut self, id: String, v: Vec<f64>) -> Result<(), VectorError> {
        if self.ids.is_empty() {
            if v.is_empty() {
                return Err(VectorError::DimensionMismatch {
                    id,
                    expected: 1,
                    found: 0,
                });
            }
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(VectorError::DimensionMismatch {
                id,
                expected: self.dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(VectorError::NonFinite { id });
        }
        if self.index.contains_key(&id) {
            return Err(VectorError::DuplicateId { id });
        }
        self.norms.push(norm(&v));
        self.data.extend_from_slice(&v);
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        Ok(())
    }

    /// Reads `{"id": ..., "vector": [...]}` lines.
    pub fn load<R: BufRead>(reader: R, space: SpaceId) -> Result<Self, VectorError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord =
                serde_json::from_str(&line).map_err(|e| VectorError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push((rec.id, rec.vector));
        }
        Self::from_records(space, records)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            let rec = EmbeddingRecord {
                id: id.clone(),
                vector: self.row(i).to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    /// Same vectors under a different space label.
    pub fn relabel(mut self, space: SpaceId) -> Self {
        self.space = space;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), self.row(i)))
    }

    fn check_query(&self, query: &[f64]) -> Result<(), VectorError> {
        if query.len() != self.dim {
            return Err(VectorError::QueryDimension {
                expected: self.dim,
                found: query.len(),
            });
        }
        Ok(())
    }

    /// Ids by cosine similarity, best first, ties by id. Stored zero
    /// vectors score 0.
    pub fn cosine_topk(
        &self,
        query: &[f64],
        topk: usize,
        exclude: Option<&HashSet<String>>,
    ) -> Result<Vec<(String, f64)>, VectorError> {
        self.check_query(query)?;
        let qn = norm(query);
        if qn == 0.0 {
            return Err(VectorError::ZeroQuery);
        }
        Ok(self.rank(topk, exclude, |i| {
            let n = self.norms[i];
            if n == 0.0 {
                0.0
            } else {
                dot(query, self.row(i)) / (qn * n)
            }
        }))
    }

    /// Ids by inner product with `query`, best first, ties by id.
    pub fn dot_topk(&self, query: &[f64], topk: usize) -> Result<Vec<(String, f64)>, VectorError> {
        self.check_query(query)?;
        Ok(self.rank(topk, None, |i| dot(query, self.row(i))))
    }

    fn rank(
        &self,
        topk: usize,
        exclude: Option<&HashSet<String>>,
        score: impl Fn(usize) -> f64,
    ) -> Vec<(String, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.ids.len())
            .filter(|&i| exclude.is_none_or(|ex| !ex.contains(&self.ids[i])))
            .map(|i| (i, score(i)))
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        };
        if topk < scored.len() {
            if topk == 0 {
                return Vec::new();
            }
            scored.select_nth_unstable_by(topk - 1, by_rank);
            scored.truncate(topk);
        }
        scored.sort_by(by_rank);
        scored
            .into_iter()
            .map(|(i, s)| (self.ids[i].clone(), s))
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Maps a text query into an embedding space. Implementations must be
/// deterministic for a fixed configuration.
pub trait EmbeddingProvider: Send + Sync {
    /// Whether this provider can encode text into `space`.
    fn supports(&self, space: SpaceId) -> bool;

    fn embed(&self, text: &str, space: SpaceId) -> Result<Vec<f64>, ProviderError>;
}

/// Offline provider: every token maps to a seeded Gaussian vector, a text
/// is the L2-normalized sum of its tokens' vectors. Texts sharing tokens
/// land close together, which is all the fixtures need.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    seed: u64,
    spaces: HashMap<SpaceId, usize>,
}

impl HashingProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            spaces: HashMap::new(),
        }
    }

    pub fn with_space(mut self, space: SpaceId, dim: usize) -> Self {
        self.spaces.insert(space, dim);
        self
    }

    /// Registers the three text spaces at one dimension.
    pub fn with_text_spaces(self, dim: usize) -> Self {
        self.with_space(SpaceId::TEXT_METADATA, dim)
            .with_space(SpaceId::TEXT_LYRICS, dim)
            .with_space(SpaceId::TEXT_ATTRIBUTES, dim)
    }

    pub fn embed_dim(&self, text: &str, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for token in tokenize(text) {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, token.as_bytes()));
            for x in v.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x += g;
            }
        }
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl EmbeddingProvider for HashingProvider {
    fn supports(&self, space: SpaceId) -> bool {
        self.spaces.contains_key(&space)
    }

    fn embed(&self, text: &str, space: SpaceId) -> Result<Vec<f64>, ProviderError> {
        let dim = self
            .spaces
            .get(&space)
            .ok_or_else(|| ProviderError(format!("no encoder registered for {space}")))?;
        Ok(self.embed_dim(text, *dim))
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Remote encoder: `POST {"query", "space"}` returning `{"vector": [...]}`.
pub struct HttpEmbeddingProvider {
    url: String,
    spaces: HashSet<SpaceId>,
    // Built on first use: the blocking client must not be created on an
    // async worker thread.
    client: OnceLock<reqwest::blocking::Client>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    query: &'a str,
    space: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, spaces: impl IntoIterator<Item = SpaceId>) -> Self {
        Self {
            url: url.into(),
            spaces: spaces.into_iter().collect(),
            client: OnceLock::new(),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn supports(&self, space: SpaceId) -> bool {
        self.spaces.contains(&space)
    }

    fn embed(&self, text: &str, space: SpaceId) -> Result<Vec<f64>, ProviderError> {
        let body = EmbedRequest {
            query: text,
            space: space.to_string(),
        };
        let client = self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("http client")
        });
        let parsed: EmbedResponse = client
            .post(&self.url)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| ProviderError(e.to_string()))?;
        Ok(parsed.vector)
    }
}

/// All loaded embedding tables. The cf space has two sub-tables: items live
/// under [`SpaceId::CF`] with the other item tables, users separately.
#[derive(Debug, Clone, Default)]
pub struct VectorStores {
    tables: HashMap<SpaceId, EmbeddingTable>,
    cf_users: Option<EmbeddingTable>,
}

impl VectorStores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: EmbeddingTable) {
        self.tables.insert(table.space(), table);
    }

    pub fn set_cf_users(&mut self, users: EmbeddingTable) -> Result<(), VectorError> {
        if let Some(items) = self.tables.get(&SpaceId::CF) {
            if items.dim() != users.dim() {
                return Err(VectorError::DimensionMismatch {
                    id: "<cf users>".to_string(),
                    expected: items.dim(),
                    found: users.dim(),
                });
            }
        }
        self.cf_users = Some(users);
        Ok(())
    }

    pub fn table(&self, space: SpaceId) -> Option<&EmbeddingTable> {
        self.tables.get(&space)
    }

    pub fn cf_users(&self) -> Option<&EmbeddingTable> {
        self.cf_users.as_ref()
    }

    pub fn spaces(&self) -> Vec<SpaceId> {
        let mut s: Vec<SpaceId> = self.tables.keys().copied().collect();
        s.sort();
        s
    }

    fn require(&self, space: SpaceId) -> Result<&EmbeddingTable, VectorError> {
        self.tables.get(&space).ok_or(VectorError::UnknownSpace(space))
    }

    /// Encodes `query` with the provider and ranks the target table by
    /// cosine similarity. The cf space is not a text target.
    pub fn text_to_item(
        &self,
        provider: &dyn EmbeddingProvider,
        query: &str,
        modality: ModalityType,
        db: VectorDbType,
        topk: usize,
    ) -> Result<Vec<String>, VectorError> {
        let space = SpaceId::new(modality, db);
        if modality == ModalityType::Cf || db == VectorDbType::Cf {
            return Err(VectorError::InvalidSpace(space));
        }
        let table = self.require(space)?;
        if !provider.supports(space) {
            return Err(VectorError::Provider {
                space,
                message: "no text encoder registered for this space".to_string(),
            });
        }
        let v = provider.embed(query, space).map_err(|e| VectorError::Provider {
            space,
            message: e.0,
        })?;
        Ok(ids(table.cosine_topk(&v, topk, None)?))
    }

    /// Neighbors of a stored track, the seed itself excluded.
    pub fn item_to_item(
        &self,
        track_id: &str,
        modality: ModalityType,
        db: VectorDbType,
        topk: usize,
    ) -> Result<Vec<String>, VectorError> {
        let space = SpaceId::new(modality, db);
        if !matches!(
            modality,
            ModalityType::Audio | ModalityType::Image | ModalityType::Cf
        ) {
            return Err(VectorError::InvalidSpace(space));
        }
        let table = self.require(space)?;
        let seed = table.get(track_id).ok_or_else(|| VectorError::UnknownTrack {
            id: track_id.to_string(),
            space,
        })?;
        let exclude = HashSet::from([track_id.to_string()]);
        Ok(ids(table.cosine_topk(seed, topk, Some(&exclude))?))
    }

    /// Items ranked by dot product with the user's cf vector.
    pub fn user_to_item(&self, user_id: &str, topk: usize) -> Result<Vec<String>, VectorError> {
        let users = self
            .cf_users
            .as_ref()
            .ok_or_else(|| VectorError::UnknownUser(user_id.to_string()))?;
        let u = users
            .get(user_id)
            .ok_or_else(|| VectorError::UnknownUser(user_id.to_string()))?;
        let items = self.require(SpaceId::CF)?;
        Ok(ids(items.dot_topk(u, topk)?))
    }
}

fn ids(scored: Vec<(String, f64)>) -> Vec<String> {
    scored.into_iter().map(|(id, _)| id).collect()
}
