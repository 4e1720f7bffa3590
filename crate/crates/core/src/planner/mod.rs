//! Turns a user query plus conversation context into a tool plan, either
//! through a chat model or through deterministic rules.

mod parse;
mod prompt;
mod provider;
mod response;
mod rules;

pub use parse::{parse_plan, ParseError};
pub use prompt::{
    build_response_prompt, build_tool_prompt, Message, PromptDocument, Role, HISTORY_TRACKS_PER_TURN,
    SYSTEM_PROMPT,
};
pub use provider::{
    AuditLog, ChatProvider, GenerationParams, HttpChatProvider, LlmPlanner, ScriptedProvider,
};
pub use response::{template_response, LlmResponder, Responder, TemplateResponder};
pub use rules::{RulePlanner, DESCRIPTORS, RERANK_TOPK, RETRIEVAL_TOPK};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::render::TrackRendering;
use crate::semantic_id::SemanticIndex;
use crate::tool_env::{CallRepairer, RepairRequest, ToolCall, ToolPlan, ToolRegistry};

pub const MAX_RECENT_TRACKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserType {
    Known,
    ColdStart,
}

/// Resolved profile as planners see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: Option<String>,
    pub user_type: UserType,
    pub age_group: String,
    pub gender: String,
    pub country: String,
    pub recent_tracks: Vec<TrackRendering>,
}

/// Profile as clients and fixtures supply it: recent tracks by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(default)]
    pub user_type: Option<UserType>,
    #[serde(default)]
    pub age_group: String,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub country: String,
    #[serde(default)]
    pub recent_track_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("a cold-start profile cannot carry a user_id")]
    ColdStartWithId,
    #[error("a known user needs a non-empty user_id")]
    KnownWithoutId,
    #[error("at most {MAX_RECENT_TRACKS} recent tracks, got {0}")]
    TooManyRecent(usize),
    #[error("recent track {0:?} is not in the catalog")]
    UnknownTrack(String),
}

impl ProfileSpec {
    pub fn cold_start() -> Self {
        Self {
            user_type: Some(UserType::ColdStart),
            ..Default::default()
        }
    }

    pub fn known(user_id: impl Into<String>) -> Self {
        Self {
            user_id: Some(user_id.into()),
            user_type: Some(UserType::Known),
            ..Default::default()
        }
    }

    /// Checks the invariants and renders the recent tracks. A missing
    /// user_type is inferred from whether a user_id is present.
    pub fn resolve(&self, catalog: &Catalog, semantic: &SemanticIndex) -> Result<UserProfile, ProfileError> {
        let user_id = self.user_id.clone().filter(|u| !u.trim().is_empty());
        let user_type = self.user_type.unwrap_or(if user_id.is_some() {
            UserType::Known
        } else {
            UserType::ColdStart
        });
        match (user_type, &user_id) {
            (UserType::ColdStart, Some(_)) => return Err(ProfileError::ColdStartWithId),
            (UserType::Known, None) => return Err(ProfileError::KnownWithoutId),
            _ => {}
        }
        if self.recent_track_ids.len() > MAX_RECENT_TRACKS {
            return Err(ProfileError::TooManyRecent(self.recent_track_ids.len()));
        }
        let recent_tracks = self
            .recent_track_ids
            .iter()
            .map(|id| {
                catalog
                    .get(id)
                    .map(|t| TrackRendering::new(t, semantic))
                    .ok_or_else(|| ProfileError::UnknownTrack(id.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(UserProfile {
            user_id,
            user_type,
            age_group: self.age_group.clone(),
            gender: self.gender.clone(),
            country: self.country.clone(),
            recent_tracks,
        })
    }
}

impl UserProfile {
    pub fn is_cold_start(&self) -> bool {
        self.user_type == UserType::ColdStart
    }
}

/// Compact record of how a turn's plan executed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub attempts: usize,
    pub retries: usize,
    pub fallback_used: bool,
    pub planning_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub recommendations: Vec<TrackRendering>,
    pub response: String,
    pub plan: ToolPlan,
    pub rationale: String,
    #[serde(default)]
    pub trace: Option<TraceSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub turns: Vec<Turn>,
}

impl ConversationState {
    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// Most recent top recommendation, the usual seed for "more like this".
    pub fn last_track(&self) -> Option<&TrackRendering> {
        self.turns.iter().rev().find_map(|t| t.recommendations.first())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub plan: ToolPlan,
    pub rationale: String,
    /// Provider transcript; empty for the rule planner.
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("could not parse a plan: {0}")]
    Parse(#[from] ParseError),
    #[error("chat provider failed: {0}")]
    Provider(String),
    #[error("no recommendations to respond to")]
    EmptyRecommendations,
}

/// Inputs shared by planning and repair.
#[derive(Clone, Copy)]
pub struct PlanContext<'a> {
    pub query: &'a str,
    pub state: &'a ConversationState,
    pub profile: &'a UserProfile,
    pub registry: &'a ToolRegistry,
}

pub trait Planner: Send + Sync {
    /// `feedback` carries the previous planning error, if any.
    fn plan(&self, ctx: &PlanContext<'_>, feedback: Option<&str>) -> Result<PlannerOutput, PlannerError>;

    /// A replacement for a failed call, or `None` to give up on it.
    fn repair(&self, ctx: &PlanContext<'_>, request: &RepairRequest<'_>) -> Option<ToolCall>;
}

/// Binds a planner and its context into the executor's repair hook.
pub struct PlannerRepairer<'a> {
    pub planner: &'a dyn Planner,
    pub ctx: PlanContext<'a>,
}

impl CallRepairer for PlannerRepairer<'_> {
    fn repair(&self, request: &RepairRequest<'_>) -> Option<ToolCall> {
        self.planner.repair(&self.ctx, request)
    }
}
