//! Executes tool plans as a retrieve-then-rerank pipeline, with retries,
//! a total fallback, and per-attempt traces.

mod registry;

pub use registry::{
    ParamSpec, ParamType, PlanError, SchemaError, Stage, ToolCall, ToolName, ToolPlan,
    ToolRegistry, ToolRequest, ToolSpec, COLD_START_DIRECTIVE, MAX_PLAN_CALLS,
};

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::catalog::{execute_sql, parse_sql, Catalog};
use crate::semantic_id::SemanticIndex;
use crate::sparse_index::{Bm25Index, CorpusType, IndexError};
use crate::vector_store::{EmbeddingProvider, VectorStores};

pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_MAX_HAMMING: usize = 1;

/// Why a call attempt failed. `kind` is a stable machine-readable tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub kind: String,
    pub message: String,
}

impl ToolError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ToolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

/// What the executor knows about the turn that issued a plan.
#[derive(Debug, Clone, Default)]
pub struct CallContext {
    pub raw_query: String,
    pub cold_start: bool,
}

/// Fails calls to chosen tools with a fixed probability, from one seeded
/// stream shared by all executions.
#[derive(Debug)]
pub struct FailureInjector {
    probabilities: BTreeMap<ToolName, f64>,
    rng: Mutex<ChaCha8Rng>,
}

impl FailureInjector {
    pub fn new(seed: u64) -> Self {
        Self {
            probabilities: BTreeMap::new(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn with_probability(mut self, tool: ToolName, p: f64) -> Self {
        self.probabilities.insert(tool, p.clamp(0.0, 1.0));
        self
    }

    /// Draws only for tools with a configured probability, so adding an
    /// injection for one tool never shifts another tool's draws.
    fn should_fail(&self, tool: ToolName) -> bool {
        match self.probabilities.get(&tool) {
            Some(&p) => self.rng.lock().expect("injector lock").random::<f64>() < p,
            None => false,
        }
    }
}

/// Supplies a replacement for a failed call. Returning `None` gives up and
/// sends the call straight to the fallback.
pub trait CallRepairer {
    fn repair(&self, request: &RepairRequest<'_>) -> Option<ToolCall>;
}

pub struct RepairRequest<'a> {
    pub call: &'a ToolCall,
    pub stage: Stage,
    pub error: &'a ToolError,
    /// 1-based number of the attempt that just failed.
    pub attempt: u32,
    pub query: &'a str,
}

/// Re-issues the failed call unchanged. Transient failures recover; a
/// deterministic error exhausts the retries and reaches the fallback.
pub struct ResubmitRepairer;

impl CallRepairer for ResubmitRepairer {
    fn repair(&self, request: &RepairRequest<'_>) -> Option<ToolCall> {
        Some(request.call.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Replacement {
    Retry(ToolCall),
    Fallback(ToolCall),
}

/// The fallback: BM25 over attributes with the user's raw words.
pub fn fallback_call(raw_query: &str, final_k: usize) -> ToolCall {
    ToolCall::bm25(raw_query, CorpusType::Attributes, final_k.max(1))
}

/// Asks the repairer for another try while attempts remain, otherwise
/// substitutes the fallback call.
#[allow(clippy::too_many_arguments)]
pub fn retry_or_fallback(
    failed: &ToolCall,
    stage: Stage,
    error: &ToolError,
    repairer: &dyn CallRepairer,
    attempt: u32,
    max_retries: u32,
    raw_query: &str,
    final_k: usize,
) -> Replacement {
    if attempt < max_retries {
        let request = RepairRequest {
            call: failed,
            stage,
            error,
            attempt,
            query: raw_query,
        };
        if let Some(call) = repairer.repair(&request) {
            return Replacement::Retry(call);
        }
    }
    Replacement::Fallback(fallback_call(raw_query, final_k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { returned: usize },
    Error { kind: String, message: String },
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok { .. })
    }
}

/// One executed attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call_index: usize,
    pub stage: Stage,
    pub tool_name: ToolName,
    pub tool_args: Map<String, Value>,
    /// 1-based; the fallback continues the count.
    pub attempt: u32,
    pub first_attempt: bool,
    pub retry_count: u32,
    pub fallback: bool,
    pub outcome: Outcome,
    pub pool_before: usize,
    pub pool_after: usize,
    pub wall_time_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub records: Vec<CallRecord>,
    pub fallback_used: bool,
}

impl ExecutionTrace {
    pub fn retries(&self) -> usize {
        self.records.iter().filter(|r| !r.first_attempt).count()
    }
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub ranked: Vec<String>,
    pub trace: ExecutionTrace,
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub max_retries: u32,
    pub max_hamming: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_retries: DEFAULT_MAX_RETRIES,
            max_hamming: DEFAULT_MAX_HAMMING,
        }
    }
}

/// Everything the tools read. Immutable once built, so one environment
/// serves concurrent sessions.
pub struct ToolEnv {
    catalog: Catalog,
    bm25: HashMap<CorpusType, Bm25Index>,
    vectors: VectorStores,
    provider: Arc<dyn EmbeddingProvider>,
    semantic: SemanticIndex,
    registry: ToolRegistry,
    config: EnvConfig,
    injector: Option<FailureInjector>,
}

impl ToolEnv {
    /// Builds all five BM25 indexes over the catalog.
    pub fn new(catalog: Catalog, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, IndexError> {
        let mut bm25 = HashMap::new();
        for corpus in CorpusType::ALL {
            bm25.insert(corpus, Bm25Index::build(&catalog, corpus)?);
        }
        Ok(Self {
            catalog,
            bm25,
            vectors: VectorStores::new(),
            provider,
            semantic: SemanticIndex::new(),
            registry: ToolRegistry::standard(),
            config: EnvConfig::default(),
            injector: None,
        })
    }

    pub fn with_vectors(mut self, vectors: VectorStores) -> Self {
        self.vectors = vectors;
        self
    }

    pub fn with_semantic_index(mut self, index: SemanticIndex) -> Self {
        self.semantic = index;
        self
    }

    /// Swaps in a prebuilt index, e.g. one read from a snapshot.
    pub fn with_bm25(mut self, index: Bm25Index) -> Self {
        self.bm25.insert(index.corpus(), index);
        self
    }

    pub fn with_config(mut self, config: EnvConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_failure_injection(mut self, injector: FailureInjector) -> Self {
        self.injector = Some(injector);
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn bm25(&self, corpus: CorpusType) -> &Bm25Index {
        &self.bm25[&corpus]
    }

    pub fn vectors(&self) -> &VectorStores {
        &self.vectors
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    pub fn semantic(&self) -> &SemanticIndex {
        &self.semantic
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Validates and runs one call against the full catalog.
    pub fn run_call(&self, call: &ToolCall, ctx: &CallContext) -> Result<Vec<String>, ToolError> {
        let request = self
            .registry
            .validate_call(call)
            .map_err(|e| ToolError::new("schema", e.to_string()))?;
        if request.tool_name().is_personal() && ctx.cold_start {
            return Err(ToolError::new(
                "cold_start",
                "user_to_item_similarity is not available for cold-start users",
            ));
        }
        if let Some(inj) = &self.injector {
            if inj.should_fail(request.tool_name()) {
                return Err(ToolError::new("injected", "injected failure"));
            }
        }
        self.run_request(&request)
    }

    pub fn run_request(&self, request: &ToolRequest) -> Result<Vec<String>, ToolError> {
        let ids = match request {
            ToolRequest::Sql { sql_query, topk } => {
                let q = parse_sql(sql_query).map_err(|e| ToolError::new(e.kind(), e.to_string()))?;
                execute_sql(&self.catalog, &q, *topk)
            }
            ToolRequest::Bm25 { query, corpus, topk } => self.bm25[corpus].search(query, *topk),
            ToolRequest::TextToItem {
                query,
                modality,
                db,
                topk,
            } => self
                .vectors
                .text_to_item(self.provider.as_ref(), query, *modality, *db, *topk)
                .map_err(|e| ToolError::new(e.kind(), e.to_string()))?,
            ToolRequest::ItemToItem {
                track_id,
                modality,
                db,
                topk,
            } => self
                .vectors
                .item_to_item(track_id, *modality, *db, *topk)
                .map_err(|e| ToolError::new(e.kind(), e.to_string()))?,
            ToolRequest::UserToItem { user_id, topk } => self
                .vectors
                .user_to_item(user_id, *topk)
                .map_err(|e| ToolError::new(e.kind(), e.to_string()))?,
            ToolRequest::SemanticId { id, topk } => self
                .semantic
                .lookup(id, *topk, self.config.max_hamming)
                .map_err(|e| ToolError::new("semantic_id", e.to_string()))?,
        };
        Ok(ids.into_iter().filter(|id| self.catalog.contains(id)).collect())
    }

    /// Runs `plan` in order. Call 1 sets the pool; each later call reorders
    /// it (see [`rerank`]). Failed attempts go through [`retry_or_fallback`].
    /// The result is cut to `final_k`.
    pub fn execute_plan(
        &self,
        plan: &ToolPlan,
        ctx: &CallContext,
        final_k: usize,
        repairer: &dyn CallRepairer,
    ) -> Execution {
        let mut pool: Vec<String> = Vec::new();
        let mut trace = ExecutionTrace::default();
        for (index, original) in plan.calls().iter().enumerate() {
            let stage = ToolPlan::stage(index);
            let mut call = original.clone();
            let mut attempt = 1u32;
            loop {
                let started = Instant::now();
                let result = self.run_call(&call, ctx).and_then(|ids| {
                    if stage == Stage::Retrieval && ids.is_empty() {
                        Err(ToolError::new("empty_result", "retrieval returned no tracks"))
                    } else {
                        Ok(ids)
                    }
                });
                let pool_before = pool.len();
                let outcome = match &result {
                    Ok(ids) => {
                        pool = apply_stage(stage, &pool, ids);
                        Outcome::Ok { returned: ids.len() }
                    }
                    Err(e) => Outcome::Error {
                        kind: e.kind.clone(),
                        message: e.message.clone(),
                    },
                };
                trace.records.push(CallRecord {
                    call_index: index,
                    stage,
                    tool_name: call.tool_name,
                    tool_args: call.tool_args.clone(),
                    attempt,
                    first_attempt: attempt == 1,
                    retry_count: attempt - 1,
                    fallback: false,
                    outcome,
                    pool_before,
                    pool_after: pool.len(),
                    wall_time_us: started.elapsed().as_micros() as u64,
                });
                let Err(error) = result else { break };
                match retry_or_fallback(
                    &call,
                    stage,
                    &error,
                    repairer,
                    attempt,
                    self.config.max_retries,
                    &ctx.raw_query,
                    final_k,
                ) {
                    Replacement::Retry(next) => {
                        call = next;
                        attempt += 1;
                    }
                    Replacement::Fallback(fb) => {
                        attempt += 1;
                        let record = self.run_fallback(index, stage, &fb, attempt, final_k, &mut pool);
                        trace.records.push(record);
                        trace.fallback_used = true;
                        break;
                    }
                }
            }
        }
        pool.truncate(final_k);
        Execution {
            ranked: pool,
            trace,
        }
    }

    /// Never fails: a retrieval fallback with no BM25 hits is filled from
    /// popularity order; a rerank fallback with no hits leaves the pool.
    fn run_fallback(
        &self,
        index: usize,
        stage: Stage,
        call: &ToolCall,
        attempt: u32,
        final_k: usize,
        pool: &mut Vec<String>,
    ) -> CallRecord {
        let started = Instant::now();
        let pool_before = pool.len();
        let mut ids = self
            .registry
            .validate_call(call)
            .ok()
            .and_then(|r| self.run_request(&r).ok())
            .unwrap_or_default();
        let returned = ids.len();
        if stage == Stage::Retrieval && ids.len() < final_k {
            let have: std::collections::HashSet<String> = ids.iter().cloned().collect();
            let fill: Vec<String> = self
                .catalog
                .popularity_order()
                .into_iter()
                .filter(|id| !have.contains(id))
                .take(final_k - ids.len())
                .collect();
            ids.extend(fill);
        }
        *pool = apply_stage(stage, pool, &ids);
        CallRecord {
            call_index: index,
            stage,
            tool_name: call.tool_name,
            tool_args: call.tool_args.clone(),
            attempt,
            first_attempt: false,
            retry_count: attempt - 1,
            fallback: true,
            outcome: Outcome::Ok { returned },
            pool_before,
            pool_after: pool.len(),
            wall_time_us: started.elapsed().as_micros() as u64,
        }
    }
}

fn apply_stage(stage: Stage, pool: &[String], ids: &[String]) -> Vec<String> {
    match stage {
        Stage::Retrieval => dedup(ids),
        Stage::Reranking => rerank(pool, ids),
    }
}

fn dedup(ids: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    ids.iter().filter(|id| seen.insert(id.as_str())).cloned().collect()
}

/// Pool members found in `ranked` come first in `ranked` order; the rest
/// keep their prior order. Membership never changes.
pub fn rerank(pool: &[String], ranked: &[String]) -> Vec<String> {
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, id) in ranked.iter().enumerate() {
        position.entry(id.as_str()).or_insert(i);
    }
    let mut hits: Vec<(usize, &String)> = Vec::new();
    let mut rest: Vec<&String> = Vec::new();
    for id in pool {
        match position.get(id.as_str()) {
            Some(&p) => hits.push((p, id)),
            None => rest.push(id),
        }
    }
    hits.sort_by_key(|(p, _)| *p);
    hits.into_iter().map(|(_, id)| id).chain(rest).cloned().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolStat {
    pub first_attempt_calls: u64,
    pub first_attempt_successes: u64,
    /// Share of all first-attempt calls that went to this tool.
    pub frequency: f64,
    pub success_rate: f64,
}

/// First-attempt usage and success per tool, keyed by canonical name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStats {
    pub total_first_attempts: u64,
    pub tools: BTreeMap<String, ToolStat>,
}

/// Aggregates first attempts only; retries and fallbacks are excluded.
pub fn tool_stats<'a>(traces: impl IntoIterator<Item = &'a ExecutionTrace>) -> ToolStats {
    let mut counts: BTreeMap<ToolName, (u64, u64)> =
        ToolName::ALL.into_iter().map(|t| (t, (0, 0))).collect();
    for trace in traces {
        for r in trace.records.iter().filter(|r| r.first_attempt) {
            let slot = counts.get_mut(&r.tool_name).expect("all tools present");
            slot.0 += 1;
            slot.1 += r.outcome.is_ok() as u64;
        }
    }
    let total: u64 = counts.values().map(|c| c.0).sum();
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    ToolStats {
        total_first_attempts: total,
        tools: counts
            .into_iter()
            .map(|(t, (calls, ok))| {
                (
                    t.as_str().to_string(),
                    ToolStat {
                        first_attempt_calls: calls,
                        first_attempt_successes: ok,
                        frequency: ratio(calls, total),
                        success_rate: ratio(ok, calls),
                    },
                )
            })
            .collect(),
    }
}
