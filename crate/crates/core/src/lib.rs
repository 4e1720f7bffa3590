//! Conversational music recommendation through tool calls.
//!
//! A planner turns each user message into a short plan: one retrieval
//! call over the whole catalog, then up to three calls that only reorder
//! the candidates. The tools are a SQL subset over track metadata, BM25 over
//! text fields, dense similarity (text, item and user vectors) and
//! semantic-ID lookup over residual-quantized embeddings.
//!
//! [`agent_service`] wraps it in sessions and an HTTP API; [`eval`] replays
//! synthetic conversations from [`fixtures`] and reports Hit@K.

pub mod agent_service;
pub mod catalog;
pub mod cf_trainer;
pub mod data;
pub mod eval;
pub mod fixtures;
pub mod planner;
pub mod render;
pub mod semantic_id;
pub mod sparse_index;
pub mod text;
pub mod tool_env;
pub mod vector_store;

pub use agent_service::{Agent, PostResult, ServiceError, Session, SessionService, DEFAULT_FINAL_K};
pub use catalog::{Catalog, CatalogError, SqlError, SqlQuery, Track};
pub use cf_trainer::{train_bpr, BprConfig, BprData, BprModel, CfTables, Interaction};
pub use data::{DataBundle, DataError, DataLayout};
pub use eval::{hit_at_k, run_eval, Bm25OnlyBackend, EvalBackend, EvalReport, ToolsBackend};
pub use fixtures::{generate_fixture_suite, EvalConversation, FixtureSizes, FixtureSuite};
pub use planner::{
    ConversationState, LlmPlanner, Planner, ProfileSpec, RulePlanner, Turn, UserProfile, UserType,
};
pub use render::TrackRendering;
pub use semantic_id::{train_rvq, RvqConfig, RvqModel, SemanticId, SemanticIndex, SidModality};
pub use sparse_index::{Bm25Index, CorpusType};
pub use tool_env::{
    CallContext, Execution, ExecutionTrace, ToolCall, ToolEnv, ToolName, ToolPlan, ToolRegistry,
    ToolStats,
};
pub use vector_store::{
    EmbeddingProvider, EmbeddingTable, HashingProvider, HttpEmbeddingProvider, ModalityType, SpaceId,
    VectorDbType, VectorStores,
};
