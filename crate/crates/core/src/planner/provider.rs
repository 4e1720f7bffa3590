use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompt::{build_tool_prompt, Message, Role};
use super::{parse_plan, PlanContext, Planner, PlannerError, PlannerOutput};
use crate::tool_env::{RepairRequest, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.95,
        }
    }
}

/// A chat model behind some transport.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, String>;
}

/// `POST {"messages", "temperature", "top_p"}` returning `{"content"}`.
pub struct HttpChatProvider {
    url: String,
    token: Option<String>,
    timeout: Duration,
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpChatProvider {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        Self {
            url: url.into(),
            token,
            timeout: Duration::from_secs(120),
            client: OnceLock::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, String> {
        let client = self.client.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .expect("http client")
        });
        let body = json!({
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
        });
        let mut req = client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp: ChatResponse = req
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| e.to_string())?;
        Ok(resp.content)
    }
}

/// Replays canned completions in order, then errors. For tests and demos.
#[derive(Default)]
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<Vec<Message>>>,
}

impl ScriptedProvider {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Every message list the provider was called with.
    pub fn requests(&self) -> Vec<Vec<Message>> {
        self.seen.lock().expect("lock").clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, messages: &[Message], _params: &GenerationParams) -> Result<String, String> {
        self.seen.lock().expect("lock").push(messages.to_vec());
        self.replies
            .lock()
            .expect("lock")
            .pop_front()
            .ok_or_else(|| "script exhausted".to_string())
    }
}

/// Appends one JSON object per provider invocation.
pub struct AuditLog {
    file: Mutex<File>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn record(&self, kind: &str, messages: &[Message], result: &Result<String, String>) {
        let entry = json!({
            "kind": kind,
            "timestamp": chrono::Utc::now().to_rfc3339(),
            "messages": messages,
            "output": result.as_ref().ok(),
            "error": result.as_ref().err(),
        });
        let mut f = self.file.lock().expect("audit lock");
        if let Err(e) = writeln!(f, "{entry}") {
            log::warn!("audit log write failed: {e}");
        }
    }
}

/// Plans by prompting a chat model and parsing its JSON array.
pub struct LlmPlanner {
    provider: Box<dyn ChatProvider>,
    params: GenerationParams,
    audit: Option<AuditLog>,
}

impl LlmPlanner {
    pub fn new(provider: Box<dyn ChatProvider>) -> Self {
        Self {
            provider,
            params: GenerationParams::default(),
            audit: None,
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    fn call(&self, kind: &str, messages: &[Message]) -> Result<String, String> {
        let out = self.provider.complete(messages, &self.params);
        if let Some(a) = &self.audit {
            a.record(kind, messages, &out);
        }
        out
    }
}

impl Planner for LlmPlanner {
    fn plan(&self, ctx: &PlanContext<'_>, feedback: Option<&str>) -> Result<PlannerOutput, PlannerError> {
        let mut doc = build_tool_prompt(ctx.query, ctx.state, ctx.profile, ctx.registry);
        if let Some(err) = feedback {
            doc.messages.push(Message::new(
                Role::System,
                format!("Your previous answer could not be used: {err}. Reply again with a valid JSON array of tool calls."),
            ));
        }
        let raw = self.call("plan", &doc.messages).map_err(PlannerError::Provider)?;
        let (plan, rationale) = parse_plan(&raw, ctx.registry)?;
        Ok(PlannerOutput {
            plan,
            rationale,
            raw,
        })
    }

    fn repair(&self, ctx: &PlanContext<'_>, request: &RepairRequest<'_>) -> Option<ToolCall> {
        let mut doc = build_tool_prompt(ctx.query, ctx.state, ctx.profile, ctx.registry);
        let stage = match request.stage {
            crate::tool_env::Stage::Retrieval => "retrieval",
            crate::tool_env::Stage::Reranking => "reranking",
        };
        doc.messages.push(Message::new(
            Role::System,
            format!(
                "The {stage} call {} failed (attempt {}): {}. Reply with a JSON array holding one corrected call for the same stage.",
                serde_json::to_string(request.call).unwrap_or_default(),
                request.attempt,
                request.error,
            ),
        ));
        let raw = self.call("repair", &doc.messages).ok()?;
        parse_plan(&raw, ctx.registry)
            .ok()
            .map(|(plan, _)| plan.calls()[0].clone())
    }
}
