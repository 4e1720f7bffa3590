use super::prompt::build_response_prompt;
use super::provider::{ChatProvider, GenerationParams};
use super::{ConversationState, PlannerError, UserProfile};
use crate::render::TrackRendering;

/// Offline reply naming the top track.
pub fn template_response(top: &TrackRendering) -> String {
    let mut s = format!("You might like \"{}\" by {}", top.title, top.artist);
    if !top.album.is_empty() {
        s.push_str(&format!(", from {}", top.album));
    }
    s.push('.');
    if !top.tags.is_empty() {
        let tags: Vec<&str> = top.tags.iter().take(4).map(String::as_str).collect();
        s.push_str(&format!(" It is tagged {}.", tags.join(", ")));
    }
    s
}

pub trait Responder: Send + Sync {
    fn respond(
        &self,
        recommendations: &[TrackRendering],
        query: &str,
        state: &ConversationState,
        profile: &UserProfile,
    ) -> Result<String, PlannerError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateResponder;

impl Responder for TemplateResponder {
    fn respond(
        &self,
        recommendations: &[TrackRendering],
        _query: &str,
        _state: &ConversationState,
        _profile: &UserProfile,
    ) -> Result<String, PlannerError> {
        recommendations
            .first()
            .map(template_response)
            .ok_or(PlannerError::EmptyRecommendations)
    }
}

/// Asks a chat model for the reply; falls back to the template when the
/// provider fails or answers with nothing.
pub struct LlmResponder {
    provider: Box<dyn ChatProvider>,
    params: GenerationParams,
}

impl LlmResponder {
    pub fn new(provider: Box<dyn ChatProvider>) -> Self {
        Self {
            provider,
            params: GenerationParams::default(),
        }
    }
}

impl Responder for LlmResponder {
    fn respond(
        &self,
        recommendations: &[TrackRendering],
        query: &str,
        state: &ConversationState,
        profile: &UserProfile,
    ) -> Result<String, PlannerError> {
        let doc = build_response_prompt(recommendations, query, state, profile)?;
        match self.provider.complete(&doc.messages, &self.params) {
            Ok(text) if !text.trim().is_empty() => Ok(text.trim().to_string()),
            Ok(_) => Ok(template_response(&recommendations[0])),
            Err(e) => {
                log::warn!("response provider failed, using template: {e}");
                Ok(template_response(&recommendations[0]))
            }
        }
    }
}
