use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;
use thiserror::Error;

use crate::tool_env::{PlanError, SchemaError, ToolCall, ToolPlan, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no JSON array of tool calls found")]
    NoPlan,
    #[error("invalid tool call: {0}")]
    BadCall(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

fn looks_like_plan(v: &Value) -> bool {
    v.as_array().is_some_and(|a| {
        !a.is_empty()
            && a.iter().all(|c| {
                c.as_object()
                    .is_some_and(|o| o.contains_key("tool_name") || o.contains_key("tool"))
            })
    })
}

/// A key missing its opening quote, as in `{"a": 1,b": 2}`.
static HALF_QUOTED_KEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"([{,]\s*)([A-Za-z_][A-Za-z0-9_]*)"(\s*:)"#).expect("valid regex"));

/// Finds the first JSON array of tool-call objects anywhere in `text`,
/// canonicalizes it and validates every call. Returns the plan and the
/// text before the array, which planners use as the rationale. Text with
/// no strict match gets one retry with half-quoted keys repaired.
pub fn parse_plan(text: &str, registry: &ToolRegistry) -> Result<(ToolPlan, String), ParseError> {
    match parse_strict(text, registry) {
        Err(ParseError::NoPlan) => {
            let repaired = HALF_QUOTED_KEY.replace_all(text, "$1\"$2\"$3");
            if repaired == text {
                return Err(ParseError::NoPlan);
            }
            parse_strict(&repaired, registry)
        }
        other => other,
    }
}

fn parse_strict(text: &str, registry: &ToolRegistry) -> Result<(ToolPlan, String), ParseError> {
    for (start, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        if !looks_like_plan(&value) {
            continue;
        }
        let calls = value
            .as_array()
            .expect("checked array")
            .iter()
            .map(ToolCall::from_loose_json)
            .collect::<Result<Vec<_>, _>>()
            .map_err(ParseError::BadCall)?;
        let plan = ToolPlan::new(calls)?;
        registry.validate_plan(&plan)?;
        return Ok((plan, text[..start].trim().to_string()));
    }
    Err(ParseError::NoPlan)
}
