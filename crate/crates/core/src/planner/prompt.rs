use serde::{Deserialize, Serialize};

use super::{ConversationState, PlannerError, UserProfile};
use crate::render::TrackRendering;
use crate::tool_env::{ToolRegistry, COLD_START_DIRECTIVE};

/// How many of a prior turn's recommendations the history shows.
pub const HISTORY_TRACKS_PER_TURN: usize = 3;

pub const SYSTEM_PROMPT: &str = "\
You recommend music by calling the tools listed below.
Begin with a short rationale: what the listener asked for, what the profile and earlier \
turns add, and which tools fit.
The first call is the retrieval call. It searches the whole catalog and returns a \
candidate pool.
Every later call is a rerank call. It reorders that pool and never adds tracks, so it \
should use evidence the first call ignored, not repeat the same kind of match.
Then print the calls as a JSON array of objects with the keys \
\"tool_name\" and \"tool_args\", following each schema exactly.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub messages: Vec<Message>,
}

impl PromptDocument {
    /// All message contents joined, handy for inspection and tests.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn profile_block(profile: &UserProfile) -> String {
    let mut s = String::from("User profile\n");
    match (&profile.user_id, profile.is_cold_start()) {
        (Some(id), false) => s.push_str(&format!("user_id: {id}\nuser_type: known\n")),
        _ => s.push_str("user_id: none\nuser_type: cold_start\n"),
    }
    s.push_str(&format!(
        "age_group: {}\ngender: {}\ncountry: {}\n",
        or_unknown(&profile.age_group),
        or_unknown(&profile.gender),
        or_unknown(&profile.country)
    ));
    if !profile.recent_tracks.is_empty() {
        s.push_str("Recently played:\n");
        for t in &profile.recent_tracks {
            s.push_str(&t.to_prompt_text());
            s.push('\n');
        }
    }
    if profile.is_cold_start() {
        s.push_str(COLD_START_DIRECTIVE);
        s.push('\n');
    }
    s.trim_end().to_string()
}

fn or_unknown(s: &str) -> &str {
    if s.is_empty() {
        "unknown"
    } else {
        s
    }
}

fn assistant_turn(recs: &[TrackRendering], response: &str) -> String {
    let mut s = String::new();
    for t in recs.iter().take(HISTORY_TRACKS_PER_TURN) {
        s.push_str(&t.to_prompt_text());
        s.push('\n');
    }
    s.push_str(response);
    s
}

fn context_messages(profile: &UserProfile, state: &ConversationState) -> Vec<Message> {
    let mut messages = vec![Message::new(Role::System, profile_block(profile))];
    for turn in &state.turns {
        messages.push(Message::new(Role::User, turn.query.clone()));
        messages.push(Message::new(
            Role::Assistant,
            assistant_turn(&turn.recommendations, &turn.response),
        ));
    }
    messages
}

/// System prompt, tool schemas, profile, history, then the query.
pub fn build_tool_prompt(
    query: &str,
    state: &ConversationState,
    profile: &UserProfile,
    registry: &ToolRegistry,
) -> PromptDocument {
    let mut messages = vec![
        Message::new(Role::System, SYSTEM_PROMPT),
        Message::new(Role::System, format!("Tools:\n{}", registry.schema_document())),
    ];
    messages.extend(context_messages(profile, state));
    messages.push(Message::new(Role::User, query));
    PromptDocument { messages }
}

const RESPONSE_SYSTEM: &str = "\
You are a music recommendation assistant. The tools have already chosen the tracks below. \
Present the first one to the user in two or three friendly sentences and say why it fits \
the request, using only the facts given.";

/// Prompt for the user-facing reply about the top-ranked track.
pub fn build_response_prompt(
    recommendations: &[TrackRendering],
    query: &str,
    state: &ConversationState,
    profile: &UserProfile,
) -> Result<PromptDocument, PlannerError> {
    let top = recommendations.first().ok_or(PlannerError::EmptyRecommendations)?;
    let mut messages = vec![Message::new(Role::System, RESPONSE_SYSTEM)];
    messages.extend(context_messages(profile, state));
    messages.push(Message::new(Role::User, query));
    messages.push(Message::new(
        Role::System,
        format!("Recommended track:\n{}", top.to_prompt_text()),
    ));
    Ok(PromptDocument { messages })
}
