//! Residual vector quantization into 4-code semantic IDs, plus an inverted
//! index for exact and Hamming-near lookup.

mod kmeans;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector_store::{EmbeddingTable, SpaceId};

pub const LAYERS: usize = 4;
pub const CODEBOOK_SIZE: usize = 64;
const MODEL_FORMAT: &str = "muse-rvq";
const MODEL_VERSION: u32 = 1;

/// Which item representation a semantic ID was quantized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidModality {
    Audio,
    Image,
    Metadata,
    Lyrics,
    Attributes,
    CfItem,
}

impl SidModality {
    pub const ALL: [SidModality; 6] = [
        SidModality::Audio,
        SidModality::Image,
        SidModality::Metadata,
        SidModality::Lyrics,
        SidModality::Attributes,
        SidModality::CfItem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SidModality::Audio => "audio",
            SidModality::Image => "image",
            SidModality::Metadata => "metadata",
            SidModality::Lyrics => "lyrics",
            SidModality::Attributes => "attributes",
            SidModality::CfItem => "cf_item",
        }
    }

    /// Embedding space the quantizer for this modality is trained on.
    pub fn source_space(self) -> SpaceId {
        match self {
            SidModality::Audio => SpaceId::AUDIO,
            SidModality::Image => SpaceId::IMAGE,
            SidModality::Metadata => SpaceId::TEXT_METADATA,
            SidModality::Lyrics => SpaceId::TEXT_LYRICS,
            SidModality::Attributes => SpaceId::TEXT_ATTRIBUTES,
            SidModality::CfItem => SpaceId::CF,
        }
    }
}

impl fmt::Display for SidModality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SidModality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SidModality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown semantic-id modality {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticId {
    pub modality: SidModality,
    pub indices: [u8; LAYERS],
}

impl SemanticId {
    pub fn new(modality: SidModality, indices: &[i64]) -> Result<Self, SidError> {
        if indices.len() != LAYERS {
            return Err(SidError::BadLength(indices.len()));
        }
        let mut out = [0u8; LAYERS];
        for (slot, &code) in out.iter_mut().zip(indices) {
            if !(0..CODEBOOK_SIZE as i64).contains(&code) {
                return Err(SidError::CodeOutOfRange(code));
            }
            *slot = code as u8;
        }
        Ok(Self {
            modality,
            indices: out,
        })
    }

    /// Prompt rendering, e.g. `'audio:semanticID': [0, 39, 63, 53]`.
    pub fn render(&self) -> String {
        let [a, b, c, d] = self.indices;
        format!("'{}:semanticID': [{a}, {b}, {c}, {d}]", self.modality)
    }
}

pub fn hamming(a: &[u8; LAYERS], b: &[u8; LAYERS]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

pub fn common_prefix(a: &[u8; LAYERS], b: &[u8; LAYERS]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[derive(Debug, Error)]
pub enum SidError {
    #[error("semantic id needs exactly {LAYERS} codes, got {0}")]
    BadLength(usize),
    #[error("code {0} is outside [0, {CODEBOOK_SIZE})")]
    CodeOutOfRange(i64),
    #[error("training vectors contain a non-finite value")]
    NonFinite,
    #[error("cannot train on an empty table")]
    Empty,
    #[error("vector has dimension {found}, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("{} tracks have no {modality} vector: {}", .missing.len(), preview(.missing))]
    MissingVectors {
        modality: SidModality,
        missing: Vec<String>,
    },
    #[error("no semantic index for modality {0}")]
    UnknownModality(SidModality),
    #[error("malformed model file: {0}")]
    Model(String),
    #[error("line {line}: malformed semantic-id record: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 5 {
        s.push_str(", ...");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqConfig {
    /// Kept for a gradient-trained variant; k-means training minimizes the
    /// quantization error directly and ignores it.
    pub commitment_weight: f64,
    pub kmeans_iters: usize,
    pub rng_seed: u64,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self {
            commitment_weight: 0.25,
            kmeans_iters: 25,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqModel {
    pub modality: SidModality,
    pub dimension: usize,
    pub commitment_weight: f64,
    /// `codebooks[layer]` is a flat `CODEBOOK_SIZE × dimension` matrix.
    pub codebooks: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqReport {
    /// Mean squared residual norm after each layer.
    pub layer_mse: Vec<f64>,
    /// Fraction of codes assigned at least one training vector, per layer.
    pub utilization: Vec<f64>,
    pub duplicate_centroids: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: RvqModel,
}

/// Fits the quantizer layer by layer: layer ℓ runs k-means on the residuals
/// left after layers 0..ℓ.
pub fn train_rvq(
    table: &EmbeddingTable,
    modality: SidModality,
    config: &RvqConfig,
) -> Result<(RvqModel, RvqReport), SidError> {
    let dim = table.dim();
    let n = table.len();
    if n == 0 {
        return Err(SidError::Empty);
    }
    let mut residual: Vec<f64> = Vec::with_capacity(n * dim);
    for (_, v) in table.rows() {
        residual.extend_from_slice(v);
    }
    if residual.iter().any(|x| !x.is_finite()) {
        return Err(SidError::NonFinite);
    }
    if n < CODEBOOK_SIZE {
        log::warn!(
            "{modality}: {n} training vectors for {CODEBOOK_SIZE} codes, centroids will repeat"
        );
    }
    let mut codebooks = Vec::with_capacity(LAYERS);
    let mut report = RvqReport {
        layer_mse: Vec::with_capacity(LAYERS),
        utilization: Vec::with_capacity(LAYERS),
        duplicate_centroids: false,
    };
    for layer in 0..LAYERS {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(layer as u64));
        let fit = kmeans::fit(&residual, dim, CODEBOOK_SIZE, config.kmeans_iters, &mut rng);
        report.duplicate_centroids |= fit.duplicated;
        let mut used = vec![false; CODEBOOK_SIZE];
        for r in residual.chunks_exact_mut(dim) {
            let (c, _) = kmeans::nearest(r, &fit.centroids, dim);
            used[c] = true;
            for (x, m) in r.iter_mut().zip(&fit.centroids[c * dim..(c + 1) * dim]) {
                *x -= m;
            }
        }
        report.layer_mse.push(kmeans::mean_sq_norm(&residual, dim));
        report
            .utilization
            .push(used.iter().filter(|&&u| u).count() as f64 / CODEBOOK_SIZE as f64);
        codebooks.push(fit.centroids);
    }
    if report.duplicate_centroids {
        log::warn!("{modality}: k-means++ seeding produced duplicate centroids");
    }
    Ok((
        RvqModel {
            modality,
            dimension: dim,
            commitment_weight: config.commitment_weight,
            codebooks,
        },
        report,
    ))
}

impl RvqModel {
    fn check_dim(&self, v: &[f64]) -> Result<(), SidError> {
        if v.len() != self.dimension {
            return Err(SidError::Dimension {
                expected: self.dimension,
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn centroid(&self, layer: usize, code: usize) -> &[f64] {
        &self.codebooks[layer][code * self.dimension..(code + 1) * self.dimension]
    }

    /// Greedy residual assignment, returning the codes and final residual.
    pub fn encode_with_residual(&self, v: &[f64]) -> Result<(SemanticId, Vec<f64>), SidError> {
        self.check_dim(v)?;
        let mut residual = v.to_vec();
        let mut indices = [0u8; LAYERS];
        for (layer, book) in self.codebooks.iter().enumerate() {
            let (c, _) = kmeans::nearest(&residual, book, self.dimension);
            indices[layer] = c as u8;
            for (x, m) in residual.iter_mut().zip(self.centroid(layer, c)) {
                *x -= m;
            }
        }
        Ok((
            SemanticId {
                modality: self.modality,
                indices,
            },
            residual,
        ))
    }

    pub fn encode(&self, v: &[f64]) -> Result<SemanticId, SidError> {
        Ok(self.encode_with_residual(v)?.0)
    }

    /// Sum of the selected centroids.
    pub fn decode(&self, id: &SemanticId) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for (layer, &c) in id.indices.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.centroid(layer, c as usize)) {
                *o += m;
            }
        }
        out
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), SidError> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(w, &file).map_err(|e| SidError::Model(e.to_string()))
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self, SidError> {
        let file: ModelFile =
            serde_json::from_reader(r).map_err(|e| SidError::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(SidError::Model(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let m = file.model;
        if m.codebooks.len() != LAYERS
            || m.codebooks
                .iter()
                .any(|b| b.len() != CODEBOOK_SIZE * m.dimension)
        {
            return Err(SidError::Model("codebook shape mismatch".into()));
        }
        if m.codebooks.iter().flatten().any(|x| !x.is_finite()) {
            return Err(SidError::NonFinite);
        }
        Ok(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarRecord {
    track_id: String,
    modality: SidModality,
    indices: [u8; LAYERS],
}

/// Writes `{"track_id", "modality", "indices"}` lines, sorted by track id.
pub fn write_sidecar<W: Write>(
    codes: &BTreeMap<String, SemanticId>,
    mut w: W,
) -> std::io::Result<()> {
    for (track_id, id) in codes {
        let rec = SidecarRecord {
            track_id: track_id.clone(),
            modality: id.modality,
            indices: id.indices,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sidecar<R: BufRead>(r: R) -> Result<Vec<(String, SemanticId)>, SidError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: serde_json::Value = serde_json::from_str(&line).map_err(|e| SidError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        let malformed = |message: String| SidError::Malformed {
            line: i + 1,
            message,
        };
        let track_id = rec["track_id"]
            .as_str()
            .ok_or_else(|| malformed("missing track_id".into()))?
            .to_string();
        let modality: SidModality = rec["modality"]
            .as_str()
            .ok_or_else(|| malformed("missing modality".into()))?
            .parse()
            .map_err(malformed)?;
        let indices: Vec<i64> = rec["indices"]
            .as_array()
            .ok_or_else(|| malformed("missing indices".into()))?
            .iter()
            .map(|x| x.as_i64().ok_or_else(|| malformed("non-integer code".into())))
            .collect::<Result<_, _>>()?;
        out.push((track_id, SemanticId::new(modality, &indices)?));
    }
    Ok(out)
}

/// Encodes every listed track. Fails listing all tracks without a vector.
pub fn encode_tracks(
    model: &RvqModel,
    table: &EmbeddingTable,
    track_ids: &[String],
) -> Result<BTreeMap<String, SemanticId>, SidError> {
    let missing: Vec<String> = track_ids
        .iter()
        .filter(|t| !table.contains(t))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(SidError::MissingVectors {
            modality: model.modality,
            missing,
        });
    }
    track_ids
        .iter()
        .map(|t| Ok((t.clone(), model.encode(table.get(t).expect("checked"))?)))
        .collect()
}

/// One modality's postings. Track ordinals index into `ids`, which is
/// sorted, so ordinal order equals id order.
#[derive(Debug, Clone, Default)]
struct ModalityIndex {
    ids: Vec<String>,
    codes: Vec<[u8; LAYERS]>,
    positional: Vec<Vec<Vec<u32>>>,
    exact: HashMap<[u8; LAYERS], Vec<u32>>,
}

impl ModalityIndex {
    fn build(mut entries: Vec<(String, [u8; LAYERS])>) -> Self {
        entries.sort();
        entries.dedup_by(|a, b| a.0 == b.0);
        let mut ix = ModalityIndex {
            positional: vec![vec![Vec::new(); CODEBOOK_SIZE]; LAYERS],
            ..Default::default()
        };
        for (ord, (id, code)) in entries.into_iter().enumerate() {
            for (layer, &c) in code.iter().enumerate() {
                ix.positional[layer][c as usize].push(ord as u32);
            }
            ix.exact.entry(code).or_default().push(ord as u32);
            ix.ids.push(id);
            ix.codes.push(code);
        }
        ix
    }
}

#[derive(Debug, Clone, Default)]
pub struct SemanticIndex {
    modalities: BTreeMap<SidModality, ModalityIndex>,
    by_track: HashMap<String, BTreeMap<SidModality, [u8; LAYERS]>>,
}

impl SemanticIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the modality's postings with `codes`.
    pub fn insert_modality(&mut self, modality: SidModality, codes: impl IntoIterator<Item = (String, [u8; LAYERS])>) {
        if let Some(old) = self.modalities.remove(&modality) {
            for id in &old.ids {
                if let Some(m) = self.by_track.get_mut(id) {
                    m.remove(&modality);
                }
            }
        }
        let ix = ModalityIndex::build(codes.into_iter().collect());
        for (id, code) in ix.ids.iter().zip(&ix.codes) {
            self.by_track
                .entry(id.clone())
                .or_default()
                .insert(modality, *code);
        }
        self.modalities.insert(modality, ix);
    }

    /// Encodes `track_ids` with `model` and indexes the result.
    pub fn build_modality(
        &mut self,
        model: &RvqModel,
        table: &EmbeddingTable,
        track_ids: &[String],
    ) -> Result<BTreeMap<String, SemanticId>, SidError> {
        let codes = encode_tracks(model, table, track_ids)?;
        self.insert_modality(
            model.modality,
            codes.iter().map(|(t, id)| (t.clone(), id.indices)),
        );
        Ok(codes)
    }

    pub fn modalities(&self) -> Vec<SidModality> {
        self.modalities.keys().copied().collect()
    }

    pub fn code(&self, track_id: &str, modality: SidModality) -> Option<SemanticId> {
        self.by_track
            .get(track_id)?
            .get(&modality)
            .map(|&indices| SemanticId { modality, indices })
    }

    /// All of a track's semantic IDs in modality order.
    pub fn codes_for(&self, track_id: &str) -> Vec<SemanticId> {
        self.by_track
            .get(track_id)
            .map(|m| {
                m.iter()
                    .map(|(&modality, &indices)| SemanticId { modality, indices })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Tracks under one (layer, code) posting, in id order.
    pub fn posting(&self, modality: SidModality, layer: usize, code: u8) -> Vec<&str> {
        self.modalities
            .get(&modality)
            .map(|ix| {
                ix.positional[layer][code as usize]
                    .iter()
                    .map(|&o| ix.ids[o as usize].as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Tracks whose full tuple equals `indices`, in id order.
    pub fn exact(&self, modality: SidModality, indices: &[u8; LAYERS]) -> Vec<&str> {
        self.modalities
            .get(&modality)
            .and_then(|ix| ix.exact.get(indices).map(|v| (ix, v)))
            .map(|(ix, v)| v.iter().map(|&o| ix.ids[o as usize].as_str()).collect())
            .unwrap_or_default()
    }

    /// Ranked by Hamming distance ascending, then common-prefix length
    /// descending, then track id. Only distances ≤ `max_hamming` qualify.
    pub fn lookup(
        &self,
        id: &SemanticId,
        topk: usize,
        max_hamming: usize,
    ) -> Result<Vec<String>, SidError> {
        let ix = self
            .modalities
            .get(&id.modality)
            .ok_or(SidError::UnknownModality(id.modality))?;
        if id.indices.iter().any(|&c| c as usize >= CODEBOOK_SIZE) {
            return Err(SidError::CodeOutOfRange(
                *id.indices.iter().max().expect("four codes") as i64,
            ));
        }
        let min_matches = LAYERS.saturating_sub(max_hamming);
        let mut matches = vec![0u8; ix.ids.len()];
        for (layer, &c) in id.indices.iter().enumerate() {
            for &o in &ix.positional[layer][c as usize] {
                matches[o as usize] += 1;
            }
        }
        let mut hits: Vec<(usize, usize, u32)> = matches
            .iter()
            .enumerate()
            .filter(|(_, &m)| m as usize >= min_matches)
            .map(|(o, &m)| {
                let lcp = common_prefix(&ix.codes[o], &id.indices);
                (LAYERS - m as usize, LAYERS - lcp, o as u32)
            })
            .collect();
        hits.sort_unstable();
        Ok(hits
            .into_iter()
            .take(topk)
            .map(|(_, _, o)| ix.ids[o as usize].clone())
            .collect())
    }
}
