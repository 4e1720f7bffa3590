//! Multi-turn sessions: plan, execute, respond, persist.
//!
//! Each session owns an append-only journal (`<dir>/<session_id>.jsonl`):
//! a `created` event followed by one `turn` event per answered message.
//! Opening a service over an existing directory replays every journal.

mod http;

pub use http::{router, serve};

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{
    ConversationState, PlanContext, Planner, PlannerRepairer, ProfileError, ProfileSpec, Responder,
    TemplateResponder, TraceSummary, Turn, UserProfile,
};
use crate::render::TrackRendering;
use crate::tool_env::{
    fallback_call, tool_stats, CallContext, ExecutionTrace, ToolEnv, ToolPlan, ToolStats,
};

pub const DEFAULT_FINAL_K: usize = 20;
/// Plan attempts before the agent gives up on the planner for a turn.
pub const DEFAULT_PLANNING_ATTEMPTS: usize = 3;

/// Plans, executes and answers one turn. Holds no per-session state.
pub struct Agent {
    env: Arc<ToolEnv>,
    planner: Arc<dyn Planner>,
    responder: Arc<dyn Responder>,
    planning_attempts: usize,
}

/// Everything one turn produced, including the full execution trace.
#[derive(Debug, Clone)]
pub struct TurnOutput {
    pub turn: Turn,
    pub execution: ExecutionTrace,
}

impl Agent {
    pub fn new(env: Arc<ToolEnv>, planner: Arc<dyn Planner>) -> Self {
        Self {
            env,
            planner,
            responder: Arc::new(TemplateResponder),
            planning_attempts: DEFAULT_PLANNING_ATTEMPTS,
        }
    }

    pub fn with_responder(mut self, responder: Arc<dyn Responder>) -> Self {
        self.responder = responder;
        self
    }

    pub fn with_planning_attempts(mut self, attempts: usize) -> Self {
        self.planning_attempts = attempts.max(1);
        self
    }

    pub fn env(&self) -> &ToolEnv {
        &self.env
    }

    pub fn render(&self, ids: &[String]) -> Vec<TrackRendering> {
        let catalog = self.env.catalog();
        ids.iter()
            .filter_map(|id| catalog.get(id))
            .map(|t| TrackRendering::new(t, self.env.semantic()))
            .collect()
    }

    /// Plans with feedback on failure; after `planning_attempts` failures
    /// the turn runs the single-call fallback plan.
    pub fn plan(&self, ctx: &PlanContext<'_>, final_k: usize) -> (ToolPlan, String, usize) {
        let mut feedback: Option<String> = None;
        for attempt in 0..self.planning_attempts {
            match self.planner.plan(ctx, feedback.as_deref()) {
                Ok(out) => return (out.plan, out.rationale, attempt),
                Err(e) => {
                    log::debug!("planning attempt {} failed: {e}", attempt + 1);
                    feedback = Some(e.to_string());
                }
            }
        }
        let plan = ToolPlan::new(vec![fallback_call(ctx.query, final_k)]).expect("one call");
        (
            plan,
            "planner failed; searching track attributes for the raw query".to_string(),
            self.planning_attempts,
        )
    }

    pub fn run_turn(
        &self,
        query: &str,
        state: &ConversationState,
        profile: &UserProfile,
        final_k: usize,
    ) -> TurnOutput {
        let ctx = PlanContext {
            query,
            state,
            profile,
            registry: self.env.registry(),
        };
        let (plan, rationale, planning_failures) = self.plan(&ctx, final_k);
        let call_ctx = CallContext {
            raw_query: query.to_string(),
            cold_start: profile.is_cold_start(),
        };
        let repairer = PlannerRepairer {
            planner: self.planner.as_ref(),
            ctx,
        };
        let execution = self.env.execute_plan(&plan, &call_ctx, final_k, &repairer);
        let recommendations = self.render(&execution.ranked);
        let response = self
            .responder
            .respond(&recommendations, query, state, profile)
            .unwrap_or_else(|_| "I could not find any tracks for that request.".to_string());
        let trace = &execution.trace;
        let summary = TraceSummary {
            attempts: trace.records.len(),
            retries: trace.retries(),
            fallback_used: trace.fallback_used,
            planning_failures,
        };
        TurnOutput {
            turn: Turn {
                query: query.to_string(),
                recommendations,
                response,
                plan,
                rationale,
                trace: Some(summary),
            },
            execution: execution.trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub profile: UserProfile,
    pub state: ConversationState,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub final_k: usize,
}

/// What `post_message` returns to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostResult {
    pub session_id: String,
    pub turn_index: usize,
    pub plan: ToolPlan,
    pub rationale: String,
    pub recommendations: Vec<TrackRendering>,
    pub response: String,
    pub trace: TraceSummary,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown track {0:?}")]
    UnknownTrack(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(#[from] ProfileError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("journal {path}: {message}")]
    Journal { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownTrack(_) => "not_found",
            ServiceError::InvalidProfile(_) => "invalid_profile",
            ServiceError::InvalidRequest(_) => "invalid_request",
            ServiceError::Journal { .. } => "journal",
            ServiceError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Created {
        session_id: String,
        profile: UserProfile,
        final_k: usize,
        created_at: DateTime<Utc>,
    },
    Turn {
        turn: Box<Turn>,
        execution: ExecutionTrace,
        at: DateTime<Utc>,
    },
}

struct Slot {
    /// Serializes posts within one session.
    post: Mutex<Option<File>>,
    snapshot: RwLock<Arc<Session>>,
}

pub struct SessionService {
    agent: Agent,
    journal_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    traces: Mutex<Vec<ExecutionTrace>>,
}

impl SessionService {
    /// In-memory only.
    pub fn new(agent: Agent) -> Self {
        Self {
            agent,
            journal_dir: None,
            sessions: RwLock::new(HashMap::new()),
            traces: Mutex::new(Vec::new()),
        }
    }

    /// Journals into `dir`, replaying whatever is already there.
    pub fn open(agent: Agent, dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        let mut sessions = HashMap::new();
        let mut traces = Vec::new();
        for path in entries {
            let (session, mut session_traces) = replay(&path)?;
            traces.append(&mut session_traces);
            let file = OpenOptions::new().append(true).open(&path)?;
            sessions.insert(
                session.session_id.clone(),
                Arc::new(Slot {
                    post: Mutex::new(Some(file)),
                    snapshot: RwLock::new(Arc::new(session)),
                }),
            );
        }
        log::info!("replayed {} sessions from {}", sessions.len(), dir.display());
        Ok(Self {
            agent,
            journal_dir: Some(dir),
            sessions: RwLock::new(sessions),
            traces: Mutex::new(traces),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn create_session(&self, spec: &ProfileSpec, final_k: Option<usize>) -> Result<String, ServiceError> {
        let final_k = final_k.unwrap_or(DEFAULT_FINAL_K);
        if final_k == 0 {
            return Err(ServiceError::InvalidRequest("final_k must be positive".into()));
        }
        let env = self.agent.env();
        let profile = spec.resolve(env.catalog(), env.semantic())?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let now = Utc::now();
        let file = match &self.journal_dir {
            Some(dir) => {
                let path = dir.join(format!("{session_id}.jsonl"));
                let mut f = OpenOptions::new().create_new(true).append(true).open(&path)?;
                let event = JournalEvent::Created {
                    session_id: session_id.clone(),
                    profile: profile.clone(),
                    final_k,
                    created_at: now,
                };
                append_event(&mut f, &event)?;
                Some(f)
            }
            None => None,
        };
        let session = Session {
            session_id: session_id.clone(),
            profile,
            state: ConversationState::default(),
            created_at: now,
            updated_at: now,
            final_k,
        };
        let slot = Arc::new(Slot {
            post: Mutex::new(file),
            snapshot: RwLock::new(Arc::new(session)),
        });
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session_id.clone(), slot);
        Ok(session_id)
    }

    fn slot(&self, session_id: &str) -> Result<Arc<Slot>, ServiceError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    pub fn get_session(&self, session_id: &str) -> Result<Arc<Session>, ServiceError> {
        let slot = self.slot(session_id)?;
        let snapshot = slot.snapshot.read().expect("snapshot lock").clone();
        Ok(snapshot)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Runs one turn. Posts to the same session wait for each other; the
    /// new snapshot is published only once the turn is complete.
    pub fn post_message(&self, session_id: &str, query: &str) -> Result<PostResult, ServiceError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(ServiceError::InvalidRequest("query must not be empty".into()));
        }
        let slot = self.slot(session_id)?;
        let mut journal = slot.post.lock().expect("post lock");
        let current = slot.snapshot.read().expect("snapshot lock").clone();
        let out = self
            .agent
            .run_turn(query, &current.state, &current.profile, current.final_k);
        let now = Utc::now();
        if let Some(f) = journal.as_mut() {
            let event = JournalEvent::Turn {
                turn: Box::new(out.turn.clone()),
                execution: out.execution.clone(),
                at: now,
            };
            append_event(f, &event)?;
        }
        let mut next = (*current).clone();
        next.state.turns.push(out.turn.clone());
        next.updated_at = now;
        let turn_index = next.state.turns.len() - 1;
        *slot.snapshot.write().expect("snapshot lock") = Arc::new(next);
        self.traces.lock().expect("traces lock").push(out.execution);
        let turn = out.turn;
        Ok(PostResult {
            session_id: session_id.to_string(),
            turn_index,
            plan: turn.plan,
            rationale: turn.rationale,
            recommendations: turn.recommendations,
            response: turn.response,
            trace: turn.trace.unwrap_or_default(),
        })
    }

    pub fn track(&self, track_id: &str) -> Result<TrackRendering, ServiceError> {
        let env = self.agent.env();
        env.catalog()
            .get(track_id)
            .map(|t| TrackRendering::new(t, env.semantic()))
            .ok_or_else(|| ServiceError::UnknownTrack(track_id.to_string()))
    }

    pub fn tool_stats(&self) -> ToolStats {
        tool_stats(self.traces.lock().expect("traces lock").iter())
    }
}

fn append_event(f: &mut File, event: &JournalEvent) -> Result<(), ServiceError> {
    let line = serde_json::to_string(event).expect("journal events serialize");
    writeln!(f, "{line}")?;
    f.flush()?;
    Ok(())
}

fn replay(path: &Path) -> Result<(Session, Vec<ExecutionTrace>), ServiceError> {
    let err = |message: String| ServiceError::Journal {
        path: path.to_path_buf(),
        message,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut session: Option<Session> = None;
    let mut traces = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: JournalEvent = match serde_json::from_str(&line) {
            Ok(e) => e,
            // A torn final line from a crash mid-write is dropped.
            Err(e) if e.is_eof() => {
                log::warn!("{}: ignoring truncated line {}", path.display(), n + 1);
                continue;
            }
            Err(e) => return Err(err(format!("line {}: {e}", n + 1))),
        };
        match (event, session.as_mut()) {
            (
                JournalEvent::Created {
                    session_id,
                    profile,
                    final_k,
                    created_at,
                },
                None,
            ) => {
                session = Some(Session {
                    session_id,
                    profile,
                    state: ConversationState::default(),
                    created_at,
                    updated_at: created_at,
                    final_k,
                })
            }
            (JournalEvent::Turn { turn, execution, at }, Some(s)) => {
                s.state.turns.push(*turn);
                s.updated_at = at;
                traces.push(execution);
            }
            (JournalEvent::Created { .. }, Some(_)) => return Err(err(format!("line {}: second created event", n + 1))),
            (JournalEvent::Turn { .. }, None) => return Err(err("turn before created event".into())),
        }
    }
    let session = session.ok_or_else(|| err("empty journal".into()))?;
    Ok((session, traces))
}
