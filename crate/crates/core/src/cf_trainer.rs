//! Bayesian Personalized Ranking on implicit feedback.
//!
//! Each sampled triple (user u, observed item i, unobserved item j) has loss
//!
//! ```text
//! x     = p_u · (q_i − q_j)
//! loss  = −ln σ(x) + λ (‖p_u‖² + ‖q_i‖² + ‖q_j‖²)
//! ```
//!
//! and SGD steps every parameter of the triple against the exact gradient
//! of that loss. Training is single-threaded so a fixed seed reproduces the
//! tables bit for bit.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector_store::{dot, EmbeddingTable, SpaceId, VectorError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub track_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BprConfig {
    pub dimension: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub rng_seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        Self {
            dimension: 64,
            learning_rate: 0.05,
            regularization: 0.002,
            epochs: 30,
            negatives_per_positive: 1,
            rng_seed: 0,
        }
    }
}

/// Standard deviation of the zero-mean Gaussian used for initialization.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CfError {
    #[error("no interactions to split")]
    EmptyInput,
    #[error("boundary fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("user {0:?} has no training interactions")]
    UserWithoutInteractions(String),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("interaction references unknown track {0:?}")]
    UnknownTrack(String),
    #[error("interaction for {0:?} has a negative timestamp")]
    NegativeTimestamp(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot export an empty {0} table")]
    EmptyTable(&'static str),
    #[error("line {line}: malformed interaction: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads `{"user_id", "track_id", "timestamp"}` lines.
pub fn read_interactions<R: BufRead>(reader: R) -> Result<Vec<Interaction>, CfError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Interaction = serde_json::from_str(&line).map_err(|e| CfError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.timestamp < 0 {
            return Err(CfError::NegativeTimestamp(rec.track_id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_interactions<W: Write>(interactions: &[Interaction], mut w: W) -> std::io::Result<()> {
    for rec in interactions {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
    /// Largest timestamp that went to train.
    pub cutoff: i64,
}

/// Splits at the `boundary_fraction` quantile of timestamps: everything at
/// or before the cutoff trains, everything after tests. Ties at the
/// boundary go to train, so every train timestamp precedes every test one.
pub fn chronological_split(
    interactions: &[Interaction],
    boundary_fraction: f64,
) -> Result<Split, CfError> {
    if interactions.is_empty() {
        return Err(CfError::EmptyInput);
    }
    if !(boundary_fraction > 0.0 && boundary_fraction < 1.0) {
        return Err(CfError::BadFraction(boundary_fraction));
    }
    let mut ts: Vec<i64> = interactions.iter().map(|r| r.timestamp).collect();
    ts.sort_unstable();
    let rank = ((boundary_fraction * ts.len() as f64).ceil() as usize).clamp(1, ts.len());
    let cutoff = ts[rank - 1];
    let (train, test): (Vec<_>, Vec<_>) = interactions
        .iter()
        .cloned()
        .partition(|r| r.timestamp <= cutoff);
    if test.is_empty() {
        log::warn!(
            "chronological split at fraction {boundary_fraction} left the test set empty (timestamps tie at {cutoff})"
        );
    }
    Ok(Split {
        train,
        test,
        cutoff,
    })
}

/// Indexed training data: users sorted by id, items in the given universe
/// order, deduplicated (user, item) positives.
#[derive(Debug, Clone)]
pub struct BprData {
    users: Vec<String>,
    items: Vec<String>,
    positives: Vec<(u32, u32)>,
    user_items: Vec<HashSet<u32>>,
}

impl BprData {
    /// Users are exactly those appearing in `interactions`.
    pub fn from_interactions(interactions: &[Interaction], items: &[String]) -> Result<Self, CfError> {
        let mut users: Vec<String> = interactions.iter().map(|r| r.user_id.clone()).collect();
        users.sort();
        users.dedup();
        Self::with_users(&users, items, interactions)
    }

    /// Fails if any listed user has no interaction.
    pub fn with_users(
        users: &[String],
        items: &[String],
        interactions: &[Interaction],
    ) -> Result<Self, CfError> {
        if items.len() < 2 {
            return Err(CfError::TooFewItems(items.len()));
        }
        let mut users: Vec<String> = users.to_vec();
        users.sort();
        users.dedup();
        let user_ix: HashMap<&str, u32> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i as u32))
            .collect();
        let item_ix: HashMap<&str, u32> = items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        let mut user_items = vec![HashSet::new(); users.len()];
        for r in interactions {
            let &i = item_ix
                .get(r.track_id.as_str())
                .ok_or_else(|| CfError::UnknownTrack(r.track_id.clone()))?;
            let Some(&u) = user_ix.get(r.user_id.as_str()) else {
                continue;
            };
            user_items[u as usize].insert(i);
        }
        if let Some(u) = user_items.iter().position(HashSet::is_empty) {
            return Err(CfError::UserWithoutInteractions(users[u].clone()));
        }
        let mut positives: Vec<(u32, u32)> = user_items
            .iter()
            .enumerate()
            .flat_map(|(u, set)| set.iter().map(move |&i| (u as u32, i)))
            .collect();
        positives.sort_unstable();
        Ok(Self {
            users,
            items: items.to_vec(),
            positives,
            user_items,
        })
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn positive_count(&self) -> usize {
        self.positives.len()
    }

    pub fn has_interacted(&self, user: usize, item: usize) -> bool {
        self.user_items[user].contains(&(item as u32))
    }

    /// Uniform draw over items the user has not interacted with. `None`
    /// when the user has interacted with everything.
    fn sample_negative(&self, user: usize, rng: &mut ChaCha8Rng) -> Option<u32> {
        let seen = &self.user_items[user];
        if seen.len() >= self.items.len() {
            return None;
        }
        loop {
            let j = rng.random_range(0..self.items.len() as u32);
            if !seen.contains(&j) {
                return Some(j);
            }
        }
    }
}

/// User and item factors as flat row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BprModel {
    pub dimension: usize,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean triple loss over each epoch's samples, measured before each step.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss of one (u, i, j) triple.
pub fn triple_loss(user: &[f64], pos: &[f64], neg: &[f64], reg: f64) -> f64 {
    let x: f64 = user.iter().zip(pos.iter().zip(neg)).map(|(p, (a, b))| p * (a - b)).sum();
    let sq = |v: &[f64]| dot(v, v);
    softplus(-x) + reg * (sq(user) + sq(pos) + sq(neg))
}

/// Exact gradient of [`triple_loss`] with respect to (user, pos, neg).
pub fn triple_gradient(
    user: &[f64],
    pos: &[f64],
    neg: &[f64],
    reg: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x: f64 = user.iter().zip(pos.iter().zip(neg)).map(|(p, (a, b))| p * (a - b)).sum();
    // d(−ln σ(x))/dx = −σ(−x)
    let g = -sigmoid(-x);
    let gu = user
        .iter()
        .zip(pos.iter().zip(neg))
        .map(|(p, (a, b))| g * (a - b) + 2.0 * reg * p)
        .collect();
    let gi = user.iter().zip(pos).map(|(p, a)| g * p + 2.0 * reg * a).collect();
    let gj = user.iter().zip(neg).map(|(p, b)| -g * p + 2.0 * reg * b).collect();
    (gu, gi, gj)
}

impl BprModel {
    /// Seeded N(0, 0.1²) initialization; users first, then items.
    pub fn initialize(data: &BprData, config: &BprConfig) -> Result<Self, CfError> {
        validate(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let d = config.dimension;
        let user_factors = (0..data.users.len() * d).map(|_| normal.sample(&mut rng)).collect();
        let item_factors = (0..data.items.len() * d).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            dimension: d,
            users: data.users.clone(),
            items: data.items.clone(),
            user_factors,
            item_factors,
        })
    }

    pub fn user_vector(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.dimension..(u + 1) * self.dimension]
    }

    pub fn item_vector(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user_vector(u), self.item_vector(i))
    }

    /// One SGD step on a triple; returns the loss before the step.
    pub fn sgd_step(&mut self, u: usize, i: usize, j: usize, lr: f64, reg: f64) -> f64 {
        let d = self.dimension;
        let pu = self.user_vector(u).to_vec();
        let qi = self.item_vector(i).to_vec();
        let qj = self.item_vector(j).to_vec();
        let loss = triple_loss(&pu, &qi, &qj, reg);
        let (gu, gi, gj) = triple_gradient(&pu, &qi, &qj, reg);
        for k in 0..d {
            self.user_factors[u * d + k] = pu[k] - lr * gu[k];
            self.item_factors[i * d + k] = qi[k] - lr * gi[k];
            self.item_factors[j * d + k] = qj[k] - lr * gj[k];
        }
        loss
    }

    /// Mean triple loss over `samples` uniformly drawn triples.
    pub fn sampled_loss(&self, data: &BprData, samples: usize, seed: u64, reg: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        let mut n = 0usize;
        for _ in 0..samples {
            let (u, i) = data.positives[rng.random_range(0..data.positives.len())];
            if let Some(j) = data.sample_negative(u as usize, &mut rng) {
                total += triple_loss(
                    self.user_vector(u as usize),
                    self.item_vector(i as usize),
                    self.item_vector(j as usize),
                    reg,
                );
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Splits the model into the two cf sub-tables (users, items).
    pub fn into_tables(self) -> Result<CfTables, CfError> {
        let d = self.dimension;
        let users = EmbeddingTable::from_records(
            SpaceId::CF,
            self.users
                .iter()
                .enumerate()
                .map(|(u, id)| (id.clone(), self.user_factors[u * d..(u + 1) * d].to_vec())),
        )?;
        let items = EmbeddingTable::from_records(
            SpaceId::CF,
            self.items
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), self.item_factors[i * d..(i + 1) * d].to_vec())),
        )?;
        Ok(CfTables { users, items })
    }
}

fn validate(config: &BprConfig) -> Result<(), CfError> {
    if config.dimension == 0 {
        return Err(CfError::Config("dimension must be positive".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(CfError::Config("learning_rate must be finite and non-negative".into()));
    }
    if !(config.regularization >= 0.0 && config.regularization.is_finite()) {
        return Err(CfError::Config("regularization must be non-negative".into()));
    }
    if config.epochs == 0 || config.negatives_per_positive == 0 {
        return Err(CfError::Config("epochs and negatives_per_positive must be positive".into()));
    }
    Ok(())
}

/// Runs `config.epochs` passes; each pass visits every positive in a
/// seeded shuffled order and draws `negatives_per_positive` negatives.
pub fn train_bpr(data: &BprData, config: &BprConfig) -> Result<(BprModel, TrainReport), CfError> {
    let mut model = BprModel::initialize(data, config)?;
    // Separate stream from initialization so changing epochs never
    // perturbs the initial factors.
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.positives.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n = 0usize;
        for &p in &order {
            let (u, i) = data.positives[p];
            for _ in 0..config.negatives_per_positive {
                let Some(j) = data.sample_negative(u as usize, &mut rng) else {
                    break;
                };
                total += model.sgd_step(
                    u as usize,
                    i as usize,
                    j as usize,
                    config.learning_rate,
                    config.regularization,
                );
                n += 1;
            }
        }
        epoch_losses.push(if n == 0 { 0.0 } else { total / n as f64 });
    }
    Ok((model, TrainReport { epoch_losses }))
}

#[derive(Debug, Clone)]
pub struct CfTables {
    pub users: EmbeddingTable,
    pub items: EmbeddingTable,
}

/// Writes both sub-tables in the embedding file format.
pub fn export_cf_tables<W1: Write, W2: Write>(
    tables: &CfTables,
    users: W1,
    items: W2,
) -> Result<(), CfError> {
    if tables.users.is_empty() {
        return Err(CfError::EmptyTable("user"));
    }
    if tables.items.is_empty() {
        return Err(CfError::EmptyTable("item"));
    }
    tables.users.write_jsonl(users)?;
    tables.items.write_jsonl(items)?;
    Ok(())
}
