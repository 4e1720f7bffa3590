//! Shared setup for the benchmarks: one generated fixture per process.

use std::sync::{Arc, OnceLock};

use muse_core::fixtures::{generate_fixture_suite, stub_provider, FixtureSizes};
use muse_core::semantic_id::RvqConfig;
use muse_core::{DataBundle, EvalConversation, ToolEnv};

pub struct Fixture {
    pub bundle: DataBundle,
    pub env: Arc<ToolEnv>,
    pub conversations: Vec<EvalConversation>,
}

/// The default-size suite with semantic IDs trained for every modality.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut suite = generate_fixture_suite(7, &FixtureSizes::default());
        suite
            .bundle
            .train_semantic_ids(&RvqConfig::default())
            .expect("fixture tables quantize");
        let env = Arc::new(suite.bundle.build_env(Arc::new(stub_provider())).expect("fixture env"));
        Fixture {
            bundle: suite.bundle,
            env,
            conversations: suite.conversations,
        }
    })
}
