//! Tool names, argument schemas, and the call/plan types a planner emits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::semantic_id::{SemanticId, SidModality};
use crate::sparse_index::CorpusType;
use crate::vector_store::{ModalityType, VectorDbType};

pub const MAX_PLAN_CALLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ToolName {
    #[serde(rename = "sql")]
    Sql,
    #[serde(rename = "bm25")]
    Bm25,
    #[serde(rename = "text_to_item_similarity")]
    TextToItem,
    #[serde(rename = "item_to_item_similarity")]
    ItemToItem,
    #[serde(rename = "user_to_item_similarity")]
    UserToItem,
    #[serde(rename = "semantic_id_matching")]
    SemanticIdMatching,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::Sql,
        ToolName::Bm25,
        ToolName::TextToItem,
        ToolName::ItemToItem,
        ToolName::UserToItem,
        ToolName::SemanticIdMatching,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::Sql => "sql",
            ToolName::Bm25 => "bm25",
            ToolName::TextToItem => "text_to_item_similarity",
            ToolName::ItemToItem => "item_to_item_similarity",
            ToolName::UserToItem => "user_to_item_similarity",
            ToolName::SemanticIdMatching => "semantic_id_matching",
        }
    }

    /// Canonical name or one of the short forms planners tend to emit.
    pub fn from_alias(s: &str) -> Option<ToolName> {
        let s = s.trim().to_ascii_lowercase();
        Some(match s.as_str() {
            "sql" => ToolName::Sql,
            "bm25" => ToolName::Bm25,
            "text_to_item_similarity" | "text_to_item" => ToolName::TextToItem,
            "item_to_item_similarity" | "item_to_item" => ToolName::ItemToItem,
            "user_to_item_similarity" | "user_to_item" => ToolName::UserToItem,
            "semantic_id_matching" | "semantic_id" => ToolName::SemanticIdMatching,
            _ => return None,
        })
    }

    /// Whether this tool needs a known user.
    pub fn is_personal(self) -> bool {
        self == ToolName::UserToItem
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolName::from_alias(s).ok_or_else(|| format!("unknown tool {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    String,
    Integer,
    IntegerList,
}

impl ParamType {
    fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::IntegerList => "array<integer>",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: &'static str,
    pub ty: ParamType,
    pub description: &'static str,
    pub allowed: Option<Vec<&'static str>>,
}

#[derive(Debug, Clone)]
pub struct ToolSpec {
    pub name: ToolName,
    pub description: &'static str,
    pub params: Vec<ParamSpec>,
}

fn param(name: &'static str, ty: ParamType, description: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        ty,
        description,
        allowed: None,
    }
}

fn choice(name: &'static str, description: &'static str, allowed: &[&'static str]) -> ParamSpec {
    ParamSpec {
        name,
        ty: ParamType::String,
        description,
        allowed: Some(allowed.to_vec()),
    }
}

const TOPK: &str = "Maximum number of track ids to return (at least 1).";

/// Instruction attached to the personalization tool and repeated in the
/// profile block for cold-start users.
pub const COLD_START_DIRECTIVE: &str =
    "Never select user_to_item_similarity when user_type is \"cold_start\".";

/// The six tools with their argument schemas.
#[derive(Debug, Clone)]
pub struct ToolRegistry {
    tools: Vec<ToolSpec>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl ToolRegistry {
    pub fn standard() -> Self {
        use ParamType::*;
        let tools = vec![
            ToolSpec {
                name: ToolName::Sql,
                description: "Boolean filtering over the tracks table. The query must select \
                              track_id, e.g. SELECT track_id FROM tracks WHERE tempo > 120 \
                              ORDER BY release_date DESC. Columns: track_id, title, artist, album \
                              (text), popularity (integer), release_date (date YYYY-MM-DD), \
                              tempo (real), key (text).",
                params: vec![
                    param("sql_query", String, "A single SELECT statement over the tracks table."),
                    param("topk", Integer, TOPK),
                ],
            },
            ToolSpec {
                name: ToolName::Bm25,
                description: "Lexical BM25 search over one lowercased text field per track.",
                params: vec![
                    param("query", String, "Search terms."),
                    choice(
                        "corpus_type",
                        "Which field to search.",
                        &["title", "artist", "album", "lyrics", "attributes"],
                    ),
                    param("topk", Integer, TOPK),
                ],
            },
            ToolSpec {
                name: ToolName::TextToItem,
                description: "Embeds a free-text description and ranks tracks by cosine \
                              similarity in the chosen vector database.",
                params: vec![
                    param("query", String, "Natural-language description."),
                    choice("modality_type", "Encoder modality.", &["text", "audio", "image"]),
                    choice(
                        "vector_db_type",
                        "Vector database to rank.",
                        &["metadata", "lyrics", "attributes", "audio", "image"],
                    ),
                    param("topk", Integer, TOPK),
                ],
            },
            ToolSpec {
                name: ToolName::ItemToItem,
                description: "Tracks closest to a seed track in the chosen embedding space; \
                              the seed itself is excluded.",
                params: vec![
                    param("track_id", String, "22-character id of the seed track."),
                    choice("modality_type", "Embedding modality.", &["audio", "image", "cf"]),
                    choice("vector_db_type", "Vector database.", &["audio", "image", "cf"]),
                    param("topk", Integer, TOPK),
                ],
            },
            ToolSpec {
                name: ToolName::UserToItem,
                description: "Personalized ranking from the user's collaborative-filtering \
                              vector. Take user_id from the profile block only. Never select \
                              this tool when user_type is \"cold_start\".",
                params: vec![
                    param("user_id", String, "User identifier from the profile."),
                    param("topk", Integer, TOPK),
                ],
            },
            ToolSpec {
                name: ToolName::SemanticIdMatching,
                description: "Looks up tracks whose 4-code semantic id equals or nearly \
                              equals the given codes.",
                params: vec![
                    choice(
                        "modality_type",
                        "Which semantic id to match.",
                        &["audio", "image", "metadata", "lyrics", "attributes", "cf_item"],
                    ),
                    param("indices", IntegerList, "Four codebook indices, each in [0, 64)."),
                    param("topk", Integer, TOPK),
                ],
            },
        ];
        Self { tools }
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn spec(&self, name: ToolName) -> &ToolSpec {
        self.tools
            .iter()
            .find(|t| t.name == name)
            .expect("standard registry has every tool")
    }

    /// Machine-readable schema document, the exact text planners see.
    pub fn schema_document(&self) -> String {
        let tools: Vec<Value> = self
            .tools
            .iter()
            .map(|t| {
                let mut props = Map::new();
                for p in &t.params {
                    let mut v = json!({ "type": p.ty.as_str(), "description": p.description });
                    if let Some(allowed) = &p.allowed {
                        v["enum"] = json!(allowed);
                    }
                    props.insert(p.name.to_string(), v);
                }
                json!({
                    "name": t.name.as_str(),
                    "description": t.description,
                    "parameters": props,
                    "required": t.params.iter().map(|p| p.name).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&tools).expect("static schema serializes")
    }

    /// Checks a call against its schema and builds the typed request.
    pub fn validate_call(&self, call: &ToolCall) -> Result<ToolRequest, SchemaError> {
        let spec = self.spec(call.tool_name);
        for key in call.tool_args.keys() {
            if !spec.params.iter().any(|p| p.name == key) {
                return Err(SchemaError::UnknownArg {
                    tool: call.tool_name,
                    arg: key.clone(),
                });
            }
        }
        let args = Args {
            tool: call.tool_name,
            map: &call.tool_args,
        };
        for p in &spec.params {
            args.check(p)?;
        }
        let topk = args.topk()?;
        Ok(match call.tool_name {
            ToolName::Sql => ToolRequest::Sql {
                sql_query: args.string("sql_query")?,
                topk,
            },
            ToolName::Bm25 => ToolRequest::Bm25 {
                query: args.string("query")?,
                corpus: args.string("corpus_type")?.parse().expect("enum checked"),
                topk,
            },
            ToolName::TextToItem => ToolRequest::TextToItem {
                query: args.string("query")?,
                modality: args.string("modality_type")?.parse().expect("enum checked"),
                db: args.string("vector_db_type")?.parse().expect("enum checked"),
                topk,
            },
            ToolName::ItemToItem => ToolRequest::ItemToItem {
                track_id: args.string("track_id")?,
                modality: args.string("modality_type")?.parse().expect("enum checked"),
                db: args.string("vector_db_type")?.parse().expect("enum checked"),
                topk,
            },
            ToolName::UserToItem => ToolRequest::UserToItem {
                user_id: args.string("user_id")?,
                topk,
            },
            ToolName::SemanticIdMatching => {
                let modality: SidModality =
                    args.string("modality_type")?.parse().expect("enum checked");
                let codes: Vec<i64> = call.tool_args["indices"]
                    .as_array()
                    .expect("type checked")
                    .iter()
                    .map(|v| v.as_i64().expect("type checked"))
                    .collect();
                let id = SemanticId::new(modality, &codes).map_err(|e| SchemaError::InvalidValue {
                    tool: call.tool_name,
                    arg: "indices".into(),
                    message: e.to_string(),
                })?;
                ToolRequest::SemanticId { id, topk }
            }
        })
    }

    pub fn validate_plan(&self, plan: &ToolPlan) -> Result<Vec<ToolRequest>, SchemaError> {
        plan.calls.iter().map(|c| self.validate_call(c)).collect()
    }
}

struct Args<'a> {
    tool: ToolName,
    map: &'a Map<String, Value>,
}

impl Args<'_> {
    fn check(&self, p: &ParamSpec) -> Result<(), SchemaError> {
        let v = self.map.get(p.name).ok_or_else(|| SchemaError::MissingArg {
            tool: self.tool,
            arg: p.name.to_string(),
        })?;
        let type_ok = match p.ty {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64(),
            ParamType::IntegerList => v
                .as_array()
                .is_some_and(|a| a.iter().all(Value::is_i64)),
        };
        if !type_ok {
            return Err(SchemaError::TypeMismatch {
                tool: self.tool,
                arg: p.name.to_string(),
                expected: p.ty.as_str(),
            });
        }
        if let (Some(allowed), Some(s)) = (&p.allowed, v.as_str()) {
            if !allowed.contains(&s) {
                return Err(SchemaError::EnumViolation {
                    tool: self.tool,
                    arg: p.name.to_string(),
                    value: s.to_string(),
                });
            }
        }
        Ok(())
    }

    fn string(&self, name: &str) -> Result<String, SchemaError> {
        Ok(self.map[name].as_str().expect("type checked").to_string())
    }

    fn topk(&self) -> Result<usize, SchemaError> {
        let k = self.map["topk"].as_i64().expect("type checked");
        if k < 1 {
            return Err(SchemaError::BadTopk { tool: self.tool, topk: k });
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("{tool}: unknown argument {arg:?}")]
    UnknownArg { tool: ToolName, arg: String },
    #[error("{tool}: missing argument {arg:?}")]
    MissingArg { tool: ToolName, arg: String },
    #[error("{tool}: argument {arg:?} must be {expected}")]
    TypeMismatch {
        tool: ToolName,
        arg: String,
        expected: &'static str,
    },
    #[error("{tool}: {value:?} is not an allowed value for {arg:?}")]
    EnumViolation {
        tool: ToolName,
        arg: String,
        value: String,
    },
    #[error("{tool}: invalid {arg:?}: {message}")]
    InvalidValue {
        tool: ToolName,
        arg: String,
        message: String,
    },
    #[error("{tool}: topk must be at least 1, got {topk}")]
    BadTopk { tool: ToolName, topk: i64 },
}

/// One planner-issued call. Arguments stay as JSON until validation so a
/// malformed call can still be traced and retried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: ToolName,
    pub tool_args: Map<String, Value>,
}

impl ToolCall {
    pub fn new(tool_name: ToolName, args: Value) -> Self {
        let tool_args = match args {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            tool_name,
            tool_args,
        }
    }

    pub fn sql(sql_query: &str, topk: usize) -> Self {
        Self::new(ToolName::Sql, json!({ "sql_query": sql_query, "topk": topk }))
    }

    pub fn bm25(query: &str, corpus: CorpusType, topk: usize) -> Self {
        Self::new(
            ToolName::Bm25,
            json!({ "query": query, "corpus_type": corpus.as_str(), "topk": topk }),
        )
    }

    pub fn text_to_item(query: &str, modality: ModalityType, db: VectorDbType, topk: usize) -> Self {
        Self::new(
            ToolName::TextToItem,
            json!({
                "query": query,
                "modality_type": modality.as_str(),
                "vector_db_type": db.as_str(),
                "topk": topk,
            }),
        )
    }

    pub fn item_to_item(track_id: &str, modality: ModalityType, db: VectorDbType, topk: usize) -> Self {
        Self::new(
            ToolName::ItemToItem,
            json!({
                "track_id": track_id,
                "modality_type": modality.as_str(),
                "vector_db_type": db.as_str(),
                "topk": topk,
            }),
        )
    }

    pub fn user_to_item(user_id: &str, topk: usize) -> Self {
        Self::new(ToolName::UserToItem, json!({ "user_id": user_id, "topk": topk }))
    }

    pub fn semantic_id(id: &SemanticId, topk: usize) -> Self {
        Self::new(
            ToolName::SemanticIdMatching,
            json!({
                "modality_type": id.modality.as_str(),
                "indices": id.indices,
                "topk": topk,
            }),
        )
    }

    /// Builds a call from loosely formed planner JSON: tool-name and
    /// argument aliases map to canonical names, and an integer user id
    /// becomes a string. Canonical keys win over aliases.
    pub fn from_loose_json(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("tool call is not an object")?;
        let name = obj
            .get("tool_name")
            .or_else(|| obj.get("tool"))
            .or_else(|| obj.get("name"))
            .and_then(Value::as_str)
            .ok_or("tool call has no tool_name")?;
        let tool_name: ToolName = name.parse()?;
        let raw = obj
            .get("tool_args")
            .or_else(|| obj.get("arguments"))
            .or_else(|| obj.get("args"))
            .and_then(Value::as_object)
            .ok_or("tool call has no tool_args object")?;
        let aliases: &[(&str, &str)] = match tool_name {
            ToolName::Sql => &[("query", "sql_query"), ("sql", "sql_query")],
            ToolName::Bm25 => &[("corpus", "corpus_type")],
            ToolName::TextToItem | ToolName::ItemToItem => &[
                ("corpus_type", "vector_db_type"),
                ("vector_db", "vector_db_type"),
                ("item_modality", "modality_type"),
                ("modality", "modality_type"),
            ],
            ToolName::SemanticIdMatching => {
                &[("item_modality", "modality_type"), ("modality", "modality_type")]
            }
            ToolName::UserToItem => &[],
        };
        let mut args = Map::new();
        for (k, v) in raw {
            let key = aliases
                .iter()
                .find(|(alias, canon)| alias == k && !raw.contains_key(*canon))
                .map_or(k.as_str(), |(_, canon)| canon);
            args.insert(key.to_string(), v.clone());
        }
        if tool_name == ToolName::UserToItem {
            if let Some(id) = args.get("user_id").and_then(Value::as_i64) {
                args.insert("user_id".into(), Value::String(id.to_string()));
            }
        }
        Ok(Self {
            tool_name,
            tool_args: args,
        })
    }
}

/// Typed, validated form of a [`ToolCall`].
#[derive(Debug, Clone, PartialEq)]
pub enum ToolRequest {
    Sql {
        sql_query: String,
        topk: usize,
    },
    Bm25 {
        query: String,
        corpus: CorpusType,
        topk: usize,
    },
    TextToItem {
        query: String,
        modality: ModalityType,
        db: VectorDbType,
        topk: usize,
    },
    ItemToItem {
        track_id: String,
        modality: ModalityType,
        db: VectorDbType,
        topk: usize,
    },
    UserToItem {
        user_id: String,
        topk: usize,
    },
    SemanticId {
        id: SemanticId,
        topk: usize,
    },
}

impl ToolRequest {
    pub fn tool_name(&self) -> ToolName {
        match self {
            ToolRequest::Sql { .. } => ToolName::Sql,
            ToolRequest::Bm25 { .. } => ToolName::Bm25,
            ToolRequest::TextToItem { .. } => ToolName::TextToItem,
            ToolRequest::ItemToItem { .. } => ToolName::ItemToItem,
            ToolRequest::UserToItem { .. } => ToolName::UserToItem,
            ToolRequest::SemanticId { .. } => ToolName::SemanticIdMatching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Reranking,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("a plan needs at least one call")]
    Empty,
    #[error("a plan has at most {MAX_PLAN_CALLS} calls, got {0}")]
    TooLong(usize),
}

/// Ordered calls: the first retrieves, the rest rerank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolPlan {
    calls: Vec<ToolCall>,
}

impl ToolPlan {
    pub fn new(calls: Vec<ToolCall>) -> Result<Self, PlanError> {
        match calls.len() {
            0 => Err(PlanError::Empty),
            n if n > MAX_PLAN_CALLS => Err(PlanError::TooLong(n)),
            _ => Ok(Self { calls }),
        }
    }

    pub fn calls(&self) -> &[ToolCall] {
        &self.calls
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn stage(index: usize) -> Stage {
        if index == 0 {
            Stage::Retrieval
        } else {
            Stage::Reranking
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(&self.calls).expect("plan serializes")
    }

    /// Compact JSON array of `{"tool_name", "tool_args"}` objects.
    pub fn render(&self) -> String {
        serde_json::to_string(&self.calls).expect("plan serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> ToolRegistry {
        ToolRegistry::standard()
    }

    #[test]
    fn bm25_corpus_enum() {
        let ok = ToolCall::bm25("apparat", CorpusType::Artist, 20);
        assert!(reg().validate_call(&ok).is_ok());
        let mut bad = ok.clone();
        bad.tool_args.insert("corpus_type".into(), json!("genre"));
        assert!(matches!(
            reg().validate_call(&bad),
            Err(SchemaError::EnumViolation { value, .. }) if value == "genre"
        ));
    }

    #[test]
    fn missing_unknown_and_type_errors() {
        let no_topk = ToolCall::new(ToolName::Sql, json!({ "sql_query": "SELECT * FROM tracks" }));
        assert!(matches!(
            reg().validate_call(&no_topk),
            Err(SchemaError::MissingArg { arg, .. }) if arg == "topk"
        ));
        let mut extra = ToolCall::sql("SELECT * FROM tracks", 5);
        extra.tool_args.insert("limit".into(), json!(3));
        assert!(matches!(reg().validate_call(&extra), Err(SchemaError::UnknownArg { .. })));
        let zero = ToolCall::sql("SELECT * FROM tracks", 0);
        assert!(matches!(reg().validate_call(&zero), Err(SchemaError::BadTopk { topk: 0, .. })));
        let float_k = ToolCall::new(ToolName::Sql, json!({ "sql_query": "x", "topk": 2.5 }));
        assert!(matches!(reg().validate_call(&float_k), Err(SchemaError::TypeMismatch { .. })));
        let bad_code = ToolCall::new(
            ToolName::SemanticIdMatching,
            json!({ "modality_type": "audio", "indices": [1, 2, 3, 64], "topk": 3 }),
        );
        assert!(matches!(reg().validate_call(&bad_code), Err(SchemaError::InvalidValue { .. })));
    }

    #[test]
    fn loose_json_is_canonicalized() {
        let v = json!({
            "tool_name": "text_to_item",
            "tool_args": { "query": "instrumental, ambient", "modality_type": "text",
                           "corpus_type": "attributes", "topk": 20 }
        });
        let call = ToolCall::from_loose_json(&v).unwrap();
        assert_eq!(call, ToolCall::text_to_item("instrumental, ambient", ModalityType::Text, VectorDbType::Attributes, 20));
        let u = ToolCall::from_loose_json(&json!({"tool_name": "user_to_item", "tool_args": {"user_id": 10021, "topk": 5}})).unwrap();
        assert_eq!(u, ToolCall::user_to_item("10021", 5));
        assert!(ToolCall::from_loose_json(&json!({"tool_name": "spotify"})).is_err());
    }

    #[test]
    fn plan_bounds_and_render() {
        assert_eq!(ToolPlan::new(vec![]), Err(PlanError::Empty));
        let c = ToolCall::sql("SELECT * FROM tracks", 5);
        assert_eq!(ToolPlan::new(vec![c.clone(); 5]), Err(PlanError::TooLong(5)));
        let plan = ToolPlan::new(vec![c]).unwrap();
        assert_eq!(
            plan.render(),
            r#"[{"tool_name":"sql","tool_args":{"sql_query":"SELECT * FROM tracks","topk":5}}]"#
        );
    }

    #[test]
    fn schema_document_lists_every_tool() {
        let doc: Value = serde_json::from_str(&reg().schema_document()).unwrap();
        let names: Vec<&str> = doc.as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
        assert_eq!(names, ToolName::ALL.map(ToolName::as_str));
        assert_eq!(reg().schema_document(), reg().schema_document());
    }
}
