//! On-disk layout of a data directory and assembly of a [`ToolEnv`] from it.
//!
//! ```text
//! catalog.jsonl          tracks
//! interactions.jsonl     user listening events
//! embeddings/*.jsonl     one table per space, e.g. text_attributes.jsonl
//! embeddings/cf_users.jsonl
//! bm25/<corpus>.jsonl    index snapshots
//! rvq/<modality>.json    quantizer models
//! semantic_ids.jsonl     sidecar with every track's codes
//! conversations.jsonl    eval fixtures
//! ```
//!
//! Everything except the catalog is optional.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::cf_trainer::{read_interactions, write_interactions, CfError, Interaction};
use crate::semantic_id::{
    read_sidecar, train_rvq, write_sidecar, RvqConfig, RvqModel, RvqReport, SemanticId, SemanticIndex,
    SidError, SidModality,
};
use crate::sparse_index::{Bm25Index, CorpusType, IndexError};
use crate::vector_store::{EmbeddingProvider, EmbeddingTable, SpaceId, VectorError, VectorStores};
use crate::tool_env::ToolEnv;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Catalog { path: PathBuf, source: CatalogError },
    #[error("{path}: {source}")]
    Vector { path: PathBuf, source: VectorError },
    #[error("{path}: {source}")]
    Index { path: PathBuf, source: IndexError },
    #[error("{path}: {source}")]
    Cf { path: PathBuf, source: CfError },
    #[error("{path}: {source}")]
    Sid { path: PathBuf, source: SidError },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Sid(#[from] SidError),
}

/// Paths inside a data directory.
#[derive(Debug, Clone)]
pub struct DataLayout {
    root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog.jsonl")
    }

    pub fn interactions(&self) -> PathBuf {
        self.root.join("interactions.jsonl")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn embedding(&self, space: SpaceId) -> PathBuf {
        self.embeddings_dir()
            .join(format!("{}_{}.jsonl", space.modality.as_str(), space.db.as_str()))
    }

    pub fn cf_users(&self) -> PathBuf {
        self.embeddings_dir().join("cf_users.jsonl")
    }

    pub fn bm25(&self, corpus: CorpusType) -> PathBuf {
        self.root.join("bm25").join(format!("{corpus}.jsonl"))
    }

    pub fn rvq(&self, modality: SidModality) -> PathBuf {
        self.root.join("rvq").join(format!("{modality}.json"))
    }

    pub fn semantic_ids(&self) -> PathBuf {
        self.root.join("semantic_ids.jsonl")
    }

    pub fn conversations(&self) -> PathBuf {
        self.root.join("conversations.jsonl")
    }
}

/// Every item space a data directory may hold.
pub const ITEM_SPACES: [SpaceId; 6] = [
    SpaceId::TEXT_METADATA,
    SpaceId::TEXT_LYRICS,
    SpaceId::TEXT_ATTRIBUTES,
    SpaceId::AUDIO,
    SpaceId::IMAGE,
    SpaceId::CF,
];

/// Text a track contributes to each text embedding space.
pub fn text_document(track: &crate::catalog::Track, space: SpaceId) -> Option<String> {
    match space {
        SpaceId::TEXT_METADATA => Some(format!("{} {} {}", track.title, track.artist, track.album)),
        SpaceId::TEXT_LYRICS => Some(track.lyrics.clone()),
        SpaceId::TEXT_ATTRIBUTES => Some(track.attributes.join(", ")),
        _ => None,
    }
}

/// Embeds every track's text for `space` with `provider`.
pub fn embed_catalog(
    catalog: &Catalog,
    provider: &dyn EmbeddingProvider,
    space: SpaceId,
) -> Result<EmbeddingTable, VectorError> {
    let mut records = Vec::with_capacity(catalog.len());
    for track in catalog.tracks() {
        let text = text_document(track, space).ok_or(VectorError::InvalidSpace(space))?;
        let v = provider.embed(&text, space).map_err(|e| VectorError::Provider {
            space,
            message: e.0,
        })?;
        records.push((track.track_id.clone(), v));
    }
    EmbeddingTable::from_records(space, records)
}

/// Everything loaded from a data directory.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub catalog: Catalog,
    pub interactions: Vec<Interaction>,
    pub tables: BTreeMap<SpaceId, EmbeddingTable>,
    pub cf_users: Option<EmbeddingTable>,
    pub bm25: Vec<Bm25Index>,
    pub rvq: BTreeMap<SidModality, RvqModel>,
    pub semantic_ids: Vec<(String, SemanticId)>,
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    File::create(path).map(BufWriter::new).map_err(io)
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), DataError> {
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl DataBundle {
    pub fn new(catalog: Catalog) -> Self {
        Self {
            catalog,
            interactions: Vec::new(),
            tables: BTreeMap::new(),
            cf_users: None,
            bm25: Vec::new(),
            rvq: BTreeMap::new(),
            semantic_ids: Vec::new(),
        }
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self, DataError> {
        let layout = DataLayout::new(root.as_ref());
        let path = layout.catalog();
        let catalog = Catalog::load(&path).map_err(|source| DataError::Catalog { path, source })?;
        let mut bundle = DataBundle::new(catalog);

        let path = layout.interactions();
        if path.exists() {
            bundle.interactions =
                read_interactions(open(&path)?).map_err(|source| DataError::Cf { path, source })?;
        }
        for space in ITEM_SPACES {
            let path = layout.embedding(space);
            if path.exists() {
                let table = EmbeddingTable::load(open(&path)?, space)
                    .map_err(|source| DataError::Vector { path, source })?;
                bundle.tables.insert(space, table);
            }
        }
        let path = layout.cf_users();
        if path.exists() {
            bundle.cf_users = Some(
                EmbeddingTable::load(open(&path)?, SpaceId::CF)
                    .map_err(|source| DataError::Vector { path, source })?,
            );
        }
        for corpus in CorpusType::ALL {
            let path = layout.bm25(corpus);
            if path.exists() {
                let index = Bm25Index::read_snapshot(open(&path)?)
                    .map_err(|source| DataError::Index { path: path.clone(), source })?;
                if index.corpus() != corpus {
                    return Err(DataError::Invalid {
                        path,
                        message: format!("snapshot holds the {} corpus", index.corpus()),
                    });
                }
                bundle.bm25.push(index);
            }
        }
        for modality in SidModality::ALL {
            let path = layout.rvq(modality);
            if path.exists() {
                let model = RvqModel::read_json(open(&path)?)
                    .map_err(|source| DataError::Sid { path, source })?;
                bundle.rvq.insert(modality, model);
            }
        }
        let path = layout.semantic_ids();
        if path.exists() {
            bundle.semantic_ids =
                read_sidecar(open(&path)?).map_err(|source| DataError::Sid { path, source })?;
        }
        Ok(bundle)
    }

    /// Writes every populated part; parts that are empty are left alone.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<(), DataError> {
        let layout = DataLayout::new(root.as_ref());
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DataError::Io { path, source }
        };
        let path = layout.catalog();
        let mut w = create(&path)?;
        self.catalog.write_jsonl(&mut w).map_err(io(&path))?;
        finish(w, &path)?;
        if !self.interactions.is_empty() {
            let path = layout.interactions();
            let mut w = create(&path)?;
            write_interactions(&self.interactions, &mut w).map_err(io(&path))?;
            finish(w, &path)?;
        }
        for (space, table) in &self.tables {
            let path = layout.embedding(*space);
            let mut w = create(&path)?;
            table.write_jsonl(&mut w).map_err(io(&path))?;
            finish(w, &path)?;
        }
        if let Some(users) = &self.cf_users {
            let path = layout.cf_users();
            let mut w = create(&path)?;
            users.write_jsonl(&mut w).map_err(io(&path))?;
            finish(w, &path)?;
        }
        for index in &self.bm25 {
            let path = layout.bm25(index.corpus());
            let mut w = create(&path)?;
            index
                .write_snapshot(&mut w)
                .map_err(|source| DataError::Index { path: path.clone(), source })?;
            finish(w, &path)?;
        }
        for (modality, model) in &self.rvq {
            let path = layout.rvq(*modality);
            let mut w = create(&path)?;
            model
                .write_json(&mut w)
                .map_err(|source| DataError::Sid { path: path.clone(), source })?;
            finish(w, &path)?;
        }
        if !self.semantic_ids.is_empty() {
            let path = layout.semantic_ids();
            let mut w = create(&path)?;
            let mut by_modality: BTreeMap<SidModality, BTreeMap<String, SemanticId>> = BTreeMap::new();
            for (track, id) in &self.semantic_ids {
                by_modality.entry(id.modality).or_default().insert(track.clone(), *id);
            }
            for codes in by_modality.values() {
                write_sidecar(codes, &mut w).map_err(io(&path))?;
            }
            finish(w, &path)?;
        }
        Ok(())
    }

    /// Trains a quantizer for every modality that has an item table but
    /// no model yet, then encodes the whole catalog into the sidecar.
    pub fn train_semantic_ids(&mut self, config: &RvqConfig) -> Result<BTreeMap<SidModality, RvqReport>, BuildError> {
        let mut reports = BTreeMap::new();
        for modality in SidModality::ALL {
            if self.rvq.contains_key(&modality) {
                continue;
            }
            let Some(table) = self.tables.get(&modality.source_space()) else {
                continue;
            };
            let (model, report) = train_rvq(table, modality, config)?;
            log::info!(
                "rvq {modality}: layer mse {:?}, utilization {:?}",
                report.layer_mse,
                report.utilization
            );
            self.rvq.insert(modality, model);
            reports.insert(modality, report);
        }
        self.encode_semantic_ids()?;
        Ok(reports)
    }

    /// Re-encodes the sidecar from the current models.
    pub fn encode_semantic_ids(&mut self) -> Result<(), BuildError> {
        let ids: Vec<String> = self.catalog.track_ids().map(str::to_string).collect();
        let mut out = Vec::new();
        for (modality, model) in &self.rvq {
            let Some(table) = self.tables.get(&modality.source_space()) else {
                continue;
            };
            // Tracks without a vector in this space simply get no code.
            let present: Vec<String> = ids.iter().filter(|t| table.contains(t)).cloned().collect();
            let codes = crate::semantic_id::encode_tracks(model, table, &present)?;
            out.extend(codes);
        }
        self.semantic_ids = out;
        Ok(())
    }

    pub fn semantic_index(&self) -> SemanticIndex {
        let mut by_modality: BTreeMap<SidModality, Vec<(String, [u8; 4])>> = BTreeMap::new();
        for (track, id) in &self.semantic_ids {
            by_modality.entry(id.modality).or_default().push((track.clone(), id.indices));
        }
        let mut index = SemanticIndex::new();
        for (modality, codes) in by_modality {
            index.insert_modality(modality, codes);
        }
        index
    }

    pub fn vector_stores(&self) -> Result<VectorStores, VectorError> {
        let mut stores = VectorStores::new();
        for table in self.tables.values() {
            stores.insert(table.clone());
        }
        if let Some(users) = &self.cf_users {
            stores.set_cf_users(users.clone())?;
        }
        Ok(stores)
    }

    /// Assembles the tool environment. BM25 snapshots replace the freshly
    /// built indexes for their corpus.
    pub fn build_env(&self, provider: Arc<dyn EmbeddingProvider>) -> Result<ToolEnv, BuildError> {
        let mut env = ToolEnv::new(self.catalog.clone(), provider)?
            .with_vectors(self.vector_stores()?)
            .with_semantic_index(self.semantic_index());
        for index in &self.bm25 {
            env = env.with_bm25(index.clone());
        }
        Ok(env)
    }
}
