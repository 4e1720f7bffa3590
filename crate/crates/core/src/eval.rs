//! Offline replay of fixture conversations and Hit@K scoring.
//!
//! Replay is teacher-forced: after each turn the history records the
//! ground-truth track as what was recommended, the way a logged dialogue
//! would, whatever the backend actually returned. Each turn is scored
//! independently against its own truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_service::Agent;
use crate::fixtures::{EvalConversation, TurnKind};
use crate::planner::{
    template_response, ConversationState, Planner, ProfileError, RulePlanner, TraceSummary, Turn, UserProfile,
};
use crate::render::TrackRendering;
use crate::sparse_index::CorpusType;
use crate::tool_env::{tool_stats, ExecutionTrace, ToolCall, ToolEnv, ToolPlan, ToolStats};

pub const DEFAULT_KS: [usize; 3] = [1, 10, 20];

/// 1 when `truth` is among the first `min(k, len)` recommendations.
pub fn hit_at_k(recommendations: &[String], truth: &str, k: usize) -> u8 {
    assert!(k >= 1, "k must be at least 1");
    recommendations.iter().take(k).any(|r| r == truth) as u8
}

#[derive(Debug, Clone, Default)]
pub struct BackendTurn {
    pub ranked: Vec<String>,
    pub plan: Option<ToolPlan>,
    pub trace: Option<ExecutionTrace>,
}

/// Anything that turns a query in context into a ranked list.
pub trait EvalBackend: Send + Sync {
    fn name(&self) -> &str;

    fn recommend(
        &self,
        query: &str,
        state: &ConversationState,
        profile: &UserProfile,
        depth: usize,
    ) -> Result<BackendTurn, String>;

    /// Whether the report should include tool statistics.
    fn uses_tools(&self) -> bool {
        false
    }
}

/// The lexical baseline: the raw query against the attributes corpus.
pub struct Bm25OnlyBackend {
    env: Arc<ToolEnv>,
}

impl Bm25OnlyBackend {
    pub const CORPUS: CorpusType = CorpusType::Attributes;

    pub fn new(env: Arc<ToolEnv>) -> Self {
        Self { env }
    }
}

impl EvalBackend for Bm25OnlyBackend {
    fn name(&self) -> &str {
        "bm25_only"
    }

    fn recommend(
        &self,
        query: &str,
        _state: &ConversationState,
        _profile: &UserProfile,
        depth: usize,
    ) -> Result<BackendTurn, String> {
        let ranked = self.env.bm25(Self::CORPUS).search(query, depth);
        let plan = ToolPlan::new(vec![ToolCall::bm25(query, Self::CORPUS, depth)]).map_err(|e| e.to_string())?;
        Ok(BackendTurn {
            ranked,
            plan: Some(plan),
            trace: None,
        })
    }
}

/// A planner driving the full tool environment.
pub struct ToolsBackend {
    agent: Agent,
    name: String,
}

impl ToolsBackend {
    pub fn new(env: Arc<ToolEnv>, planner: Arc<dyn Planner>, name: impl Into<String>) -> Self {
        Self {
            agent: Agent::new(env, planner),
            name: name.into(),
        }
    }

    /// The offline configuration: rule planner, template responses.
    pub fn rules(env: Arc<ToolEnv>) -> Self {
        Self::new(env, Arc::new(RulePlanner), "planner_tools")
    }
}

impl EvalBackend for ToolsBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn recommend(
        &self,
        query: &str,
        state: &ConversationState,
        profile: &UserProfile,
        depth: usize,
    ) -> Result<BackendTurn, String> {
        let out = self.agent.run_turn(query, state, profile, depth);
        Ok(BackendTurn {
            ranked: out.turn.recommendations.iter().map(|r| r.track_id.clone()).collect(),
            plan: Some(out.turn.plan),
            trace: Some(out.execution),
        })
    }

    fn uses_tools(&self) -> bool {
        true
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k values must be positive and non-empty, got {0:?}")]
    BadKs(Vec<usize>),
    #[error("conversation {conversation}: {source}")]
    Profile {
        conversation: String,
        source: ProfileError,
    },
    #[error("conversation {conversation} turn {turn}: truth {truth:?} is not in the catalog")]
    UnknownTruth {
        conversation: String,
        turn: usize,
        truth: String,
    },
    #[error("conversation {conversation} turn {turn}: backend failed: {message}")]
    Backend {
        conversation: String,
        turn: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetric {
    pub k: usize,
    pub hits: u64,
    /// Mean over all turns.
    pub micro: f64,
    /// Mean over conversations of each conversation's turn mean.
    #[serde(rename = "macro")]
    pub macro_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMetric {
    pub turns: u64,
    /// Hit@k per k, in the report's k order.
    pub hit_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: String,
    pub conversations: usize,
    pub turns: usize,
    pub metrics: Vec<KMetric>,
    pub per_kind: BTreeMap<String, KindMetric>,
    pub turns_with_fallback: u64,
    pub tool_stats: Option<ToolStats>,
}

impl EvalReport {
    pub fn metric(&self, k: usize) -> Option<&KMetric> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "backend {} | {} conversations, {} turns",
            self.backend, self.conversations, self.turns
        );
        let _ = writeln!(s, "{:<8}{:>8}{:>10}{:>10}", "k", "hits", "micro", "macro");
        for m in &self.metrics {
            let _ = writeln!(s, "{:<8}{:>8}{:>10.4}{:>10.4}", m.k, m.hits, m.micro, m.macro_avg);
        }
        if !self.per_kind.is_empty() {
            let ks: Vec<String> = self.metrics.iter().map(|m| format!("hit@{}", m.k)).collect();
            let _ = writeln!(s, "\n{:<12}{:>7}{}", "turn kind", "turns", ks.iter().map(|k| format!("{k:>9}")).collect::<String>());
            for (kind, km) in &self.per_kind {
                let rates: String = km.hit_rate.iter().map(|r| format!("{r:>9.4}")).collect();
                let _ = writeln!(s, "{kind:<12}{:>7}{rates}", km.turns);
            }
        }
        if let Some(stats) = &self.tool_stats {
            let _ = writeln!(
                s,
                "\n{:<30}{:>8}{:>11}{:>10}",
                "tool", "calls", "frequency", "success"
            );
            for (tool, st) in &stats.tools {
                let _ = writeln!(
                    s,
                    "{tool:<30}{:>8}{:>11.4}{:>10.4}",
                    st.first_attempt_calls, st.frequency, st.success_rate
                );
            }
            let _ = writeln!(s, "turns with fallback: {}", self.turns_with_fallback);
        }
        s
    }
}

struct ConversationResult {
    kinds: Vec<TurnKind>,
    /// `hits[turn][k_index]`
    hits: Vec<Vec<u8>>,
    traces: Vec<ExecutionTrace>,
}

fn truth_turn(query: &str, truth: TrackRendering, plan: ToolPlan) -> Turn {
    let response = template_response(&truth);
    Turn {
        query: query.to_string(),
        recommendations: vec![truth],
        response,
        plan,
        rationale: String::new(),
        trace: None::<TraceSummary>,
    }
}

fn run_conversation(
    conv: &EvalConversation,
    backend: &dyn EvalBackend,
    env: &ToolEnv,
    ks: &[usize],
) -> Result<ConversationResult, EvalError> {
    let depth = *ks.iter().max().expect("non-empty ks");
    let profile = conv
        .profile
        .resolve(env.catalog(), env.semantic())
        .map_err(|source| EvalError::Profile {
            conversation: conv.conversation_id.clone(),
            source,
        })?;
    let mut state = ConversationState::default();
    let mut result = ConversationResult {
        kinds: Vec::new(),
        hits: Vec::new(),
        traces: Vec::new(),
    };
    for (i, turn) in conv.turns.iter().enumerate() {
        let truth = env.catalog().get(&turn.truth).ok_or_else(|| EvalError::UnknownTruth {
            conversation: conv.conversation_id.clone(),
            turn: i,
            truth: turn.truth.clone(),
        })?;
        let out = backend
            .recommend(&turn.query, &state, &profile, depth)
            .map_err(|message| EvalError::Backend {
                conversation: conv.conversation_id.clone(),
                turn: i,
                message,
            })?;
        result.hits.push(ks.iter().map(|&k| hit_at_k(&out.ranked, &turn.truth, k)).collect());
        result.kinds.push(turn.label.kind);
        if let Some(t) = out.trace {
            result.traces.push(t);
        }
        let plan = out.plan.unwrap_or_else(|| {
            ToolPlan::new(vec![ToolCall::bm25(&turn.query, CorpusType::Attributes, depth)]).expect("one call")
        });
        state
            .turns
            .push(truth_turn(&turn.query, TrackRendering::new(truth, env.semantic()), plan));
    }
    Ok(result)
}

/// Replays every conversation and aggregates Hit@k for each `k`.
/// Conversations run on up to `threads` workers; the report does not
/// depend on the thread count.
pub fn run_eval(
    conversations: &[EvalConversation],
    backend: &dyn EvalBackend,
    env: &ToolEnv,
    ks: &[usize],
    threads: usize,
) -> Result<EvalReport, EvalError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::BadKs(ks.to_vec()));
    }
    let threads = threads.clamp(1, conversations.len().max(1));
    let mut slots: Vec<Option<Result<ConversationResult, EvalError>>> =
        (0..conversations.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                scope.spawn(move || {
                    (w..conversations.len())
                        .step_by(threads)
                        .map(|i| (i, run_conversation(&conversations[i], backend, env, ks)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("eval worker panicked") {
                slots[i] = Some(r);
            }
        }
    });

    let mut hits = vec![0u64; ks.len()];
    let mut per_conv: Vec<(String, Vec<f64>)> = Vec::new();
    let mut per_kind: BTreeMap<String, (u64, Vec<u64>)> = BTreeMap::new();
    let mut traces: Vec<ExecutionTrace> = Vec::new();
    let mut turns = 0usize;
    for (conv, slot) in conversations.iter().zip(slots) {
        let r = slot.expect("every conversation evaluated")?;
        let mut conv_hits = vec![0u64; ks.len()];
        for (kind, h) in r.kinds.iter().zip(&r.hits) {
            let entry = per_kind
                .entry(kind.as_str().to_string())
                .or_insert_with(|| (0, vec![0; ks.len()]));
            entry.0 += 1;
            for (j, &x) in h.iter().enumerate() {
                conv_hits[j] += x as u64;
                entry.1[j] += x as u64;
            }
        }
        turns += r.hits.len();
        for (total, c) in hits.iter_mut().zip(&conv_hits) {
            *total += c;
        }
        let n = r.hits.len().max(1) as f64;
        per_conv.push((
            conv.conversation_id.clone(),
            conv_hits.iter().map(|&c| c as f64 / n).collect(),
        ));
        traces.extend(r.traces);
    }
    // Summing in id order keeps the macro mean independent of input order.
    per_conv.sort_by(|a, b| a.0.cmp(&b.0));
    let metrics = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| KMetric {
            k,
            hits: hits[j],
            micro: if turns == 0 { 0.0 } else { hits[j] as f64 / turns as f64 },
            macro_avg: if per_conv.is_empty() {
                0.0
            } else {
                per_conv.iter().map(|(_, m)| m[j]).sum::<f64>() / per_conv.len() as f64
            },
        })
        .collect();
    let per_kind = per_kind
        .into_iter()
        .map(|(kind, (n, h))| {
            (
                kind,
                KindMetric {
                    turns: n,
                    hit_rate: h.iter().map(|&x| x as f64 / n as f64).collect(),
                },
            )
        })
        .collect();
    let turns_with_fallback = traces.iter().filter(|t| t.fallback_used).count() as u64;
    Ok(EvalReport {
        backend: backend.name().to_string(),
        conversations: conversations.len(),
        turns,
        metrics,
        per_kind,
        turns_with_fallback,
        tool_stats: backend.uses_tools().then(|| tool_stats(&traces)),
    })
}
