mod common;

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::{Arc, Mutex, OnceLock};

use common::binomial_ci;
use muse_core::eval::{hit_at_k, run_eval, BackendTurn, Bm25OnlyBackend, EvalBackend, EvalError, ToolsBackend};
use muse_core::fixtures::{
    audit_recoverability, generate_fixture_suite, kind_counts, labeled_tools, read_conversations, stub_provider,
    write_conversations, EvalConversation, FixtureSizes, TurnKind,
};
use muse_core::planner::{ConversationState, UserProfile};
use muse_core::ToolEnv;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Suite {
    env: Arc<ToolEnv>,
    conversations: Vec<EvalConversation>,
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let s = generate_fixture_suite(7, &FixtureSizes::default());
        let env = Arc::new(s.bundle.build_env(Arc::new(stub_provider())).unwrap());
        Suite { env, conversations: s.conversations }
    })
}

fn small() -> FixtureSizes {
    FixtureSizes { tracks: 250, artists: 30, users: 20, conversations: 12, turns: 4 }
}

/// Identifies a turn by everything a backend can see.
fn turn_key(query: &str, state: &ConversationState, profile: &UserProfile) -> String {
    let mut key = serde_json::to_string(profile).unwrap();
    for t in &state.turns {
        key.push('\u{1}');
        key.push_str(&t.query);
    }
    key.push('\u{2}');
    key.push_str(query);
    key
}

/// Replays the key of every turn of `c` without running any backend.
fn keys_of(env: &ToolEnv, c: &EvalConversation) -> Vec<String> {
    let profile = c.profile.resolve(env.catalog(), env.semantic()).unwrap();
    let mut prior: Vec<String> = Vec::new();
    c.turns
        .iter()
        .map(|t| {
            let mut key = serde_json::to_string(&profile).unwrap();
            for q in &prior {
                key.push('\u{1}');
                key.push_str(q);
            }
            key.push('\u{2}');
            key.push_str(&t.query);
            prior.push(t.query.clone());
            key
        })
        .collect()
}

/// Knows every answer.
struct Oracle(HashMap<String, String>);

impl EvalBackend for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }
    fn recommend(&self, q: &str, s: &ConversationState, p: &UserProfile, _: usize) -> Result<BackendTurn, String> {
        let truth = self.0.get(&turn_key(q, s, p)).ok_or("unseen turn")?;
        Ok(BackendTurn { ranked: vec![truth.clone()], ..Default::default() })
    }
}

/// A uniformly random ranking, seeded per turn so threads cannot matter.
struct Shuffle {
    ids: Vec<String>,
    salt: u64,
}

impl EvalBackend for Shuffle {
    fn name(&self) -> &str {
        "shuffle"
    }
    fn recommend(&self, q: &str, s: &ConversationState, p: &UserProfile, depth: usize) -> Result<BackendTurn, String> {
        let mut h = DefaultHasher::new();
        (self.salt, turn_key(q, s, p)).hash(&mut h);
        let mut ids = self.ids.clone();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(h.finish()));
        ids.truncate(depth);
        Ok(BackendTurn { ranked: ids, ..Default::default() })
    }
}

/// Wraps a backend and remembers what it returned for each turn.
struct Recording<B> {
    inner: B,
    seen: Mutex<HashMap<String, Vec<String>>>,
}

impl<B: EvalBackend> EvalBackend for Recording<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn recommend(&self, q: &str, s: &ConversationState, p: &UserProfile, depth: usize) -> Result<BackendTurn, String> {
        let out = self.inner.recommend(q, s, p, depth)?;
        self.seen.lock().unwrap().insert(turn_key(q, s, p), out.ranked.clone());
        Ok(out)
    }
    fn uses_tools(&self) -> bool {
        self.inner.uses_tools()
    }
}

#[test]
fn hit_at_k_boundaries() {
    let recs: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    assert_eq!(hit_at_k(&recs, "a", 1), 1);
    assert_eq!(hit_at_k(&recs, "b", 1), 0);
    assert_eq!(hit_at_k(&recs, "c", 2), 0);
    assert_eq!(hit_at_k(&recs, "c", 3), 1);
    assert_eq!(hit_at_k(&recs, "c", 50), 1);
    assert_eq!(hit_at_k(&recs, "z", 50), 0);
    assert_eq!(hit_at_k(&[], "a", 20), 0);
}

#[test]
#[should_panic]
fn hit_at_zero_is_a_bug() {
    hit_at_k(&["a".to_string()], "a", 0);
}

#[test]
fn fixture_suite_shape_and_audit() {
    let s = suite();
    assert_eq!(s.conversations.len(), 100);
    assert_eq!(s.conversations.iter().map(|c| c.turns.len()).sum::<usize>(), 800);
    assert!(audit_recoverability(&s.env, &s.conversations).is_empty());
    let kinds = kind_counts(&s.conversations);
    for k in [TurnKind::Artist, TurnKind::Attributes, TurnKind::Filter, TurnKind::Similar, TurnKind::Personal] {
        assert!(kinds.get(&k).copied().unwrap_or(0) > 0, "{k:?}");
    }
    assert!(labeled_tools(&s.conversations).len() >= 4);
    for c in &s.conversations {
        assert!(c.turns.iter().all(|t| s.env.catalog().get(&t.truth).is_some()));
    }
}

#[test]
fn fixtures_are_byte_identical_per_seed() {
    let bytes = |seed| {
        let s = generate_fixture_suite(seed, &small());
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = walk(dir.path())
            .into_iter()
            .map(|p| (p.strip_prefix(dir.path()).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    let a = bytes(3);
    assert!(a.len() >= 5, "{:?}", a.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(a, bytes(3));
    assert_ne!(a, bytes(4));
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn conversations_round_trip_through_jsonl() {
    let s = suite();
    let mut buf = Vec::new();
    write_conversations(&s.conversations, &mut buf).unwrap();
    assert_eq!(read_conversations(buf.as_slice()).unwrap(), s.conversations);
    assert!(read_conversations(&b"{\"conversation_id\":\"x\",\"profile\":{},\"turns\":[]}\n"[..]).is_err());
}

#[test]
fn oracle_backend_scores_one() {
    let s = suite();
    let mut truths: HashMap<String, String> = HashMap::new();
    let mut clashes = std::collections::HashSet::new();
    for c in &s.conversations {
        for (key, t) in keys_of(&s.env, c).into_iter().zip(&c.turns) {
            if truths.insert(key.clone(), t.truth.clone()).is_some_and(|old| old != t.truth) {
                clashes.insert(key);
            }
        }
    }
    let usable: Vec<EvalConversation> = s
        .conversations
        .iter()
        .filter(|c| keys_of(&s.env, c).iter().all(|k| !clashes.contains(k)))
        .cloned()
        .collect();
    assert!(usable.len() >= 90);
    let report = run_eval(&usable, &Oracle(truths), &s.env, &[1, 10, 20], 4).unwrap();
    for m in &report.metrics {
        assert_eq!(m.micro, 1.0);
        assert_eq!(m.macro_avg, 1.0);
    }
    assert!(report.tool_stats.is_none());
}

#[test]
fn random_rankings_hit_at_chance() {
    let s = suite();
    let ids: Vec<String> = s.env.catalog().track_ids().map(str::to_string).collect();
    let n = ids.len() as f64;
    let ks = [1, 10, 20];
    let mut hits = [0u64; 3];
    let mut trials = 0;
    for salt in 0..10 {
        let backend = Shuffle { ids: ids.clone(), salt };
        let report = run_eval(&s.conversations, &backend, &s.env, &ks, 4).unwrap();
        trials += report.turns;
        for (h, m) in hits.iter_mut().zip(&report.metrics) {
            *h += m.hits;
        }
    }
    for (&k, &h) in ks.iter().zip(&hits) {
        let p = k as f64 / n;
        let rate = h as f64 / trials as f64;
        let (lo, hi) = binomial_ci(p, trials);
        // Widen the 95% half-width to three standard errors.
        let half = (hi - lo) / 2.0 * 3.0 / 1.96;
        assert!((rate - p).abs() <= half, "k={k} rate {rate} vs {p} ± {half}");
    }
}

#[test]
fn report_matches_an_independent_recount() {
    let s = suite();
    let backend = Recording { inner: ToolsBackend::rules(s.env.clone()), seen: Mutex::new(HashMap::new()) };
    let ks = [1, 5, 10, 20];
    let report = run_eval(&s.conversations, &backend, &s.env, &ks, 3).unwrap();
    let seen = backend.seen.into_inner().unwrap();
    for (j, &k) in ks.iter().enumerate() {
        let mut hits = 0u64;
        let mut conv_means = Vec::new();
        for c in &s.conversations {
            let mut h = 0u64;
            for (key, t) in keys_of(&s.env, c).iter().zip(&c.turns) {
                let ranked = &seen[key];
                h += ranked.iter().take(k).any(|id| *id == t.truth) as u64;
            }
            hits += h;
            conv_means.push(h as f64 / c.turns.len() as f64);
        }
        let m = &report.metrics[j];
        assert_eq!(m.k, k);
        assert_eq!(m.hits, hits);
        assert!((m.micro - hits as f64 / 800.0).abs() < 1e-12);
        assert!((m.macro_avg - conv_means.iter().sum::<f64>() / conv_means.len() as f64).abs() < 1e-12);
    }
    let per_kind_turns: u64 = report.per_kind.values().map(|k| k.turns).sum();
    assert_eq!(per_kind_turns, 800);
    let stats = report.tool_stats.as_ref().unwrap();
    assert!(stats.total_first_attempts >= 800);
}

#[test]
fn reports_ignore_threads_and_order() {
    let s = suite();
    let subset: Vec<EvalConversation> = s.conversations[..30].to_vec();
    let tools = ToolsBackend::rules(s.env.clone());
    let base = run_eval(&subset, &tools, &s.env, &[1, 10, 20], 1).unwrap();
    for threads in [2, 7, 64] {
        let again = run_eval(&subset, &tools, &s.env, &[1, 10, 20], threads).unwrap();
        assert_eq!(again.to_json(), base.to_json(), "threads {threads}");
    }
    let mut shuffled = subset.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(run_eval(&shuffled, &tools, &s.env, &[1, 10, 20], 3).unwrap().to_json(), base.to_json());
}

#[test]
fn bm25_backend_is_a_direct_attribute_search() {
    let s = suite();
    let backend = Bm25OnlyBackend::new(s.env.clone());
    let profile = s.conversations[0].profile.resolve(s.env.catalog(), s.env.semantic()).unwrap();
    for t in s.conversations.iter().flat_map(|c| &c.turns).take(100) {
        let out = backend.recommend(&t.query, &ConversationState::default(), &profile, 20).unwrap();
        assert_eq!(out.ranked, s.env.bm25(Bm25OnlyBackend::CORPUS).search(&t.query, 20));
    }
}

#[test]
fn tools_beat_lexical_baseline() {
    let s = suite();
    let ks = [1, 10, 20];
    let tools = run_eval(&s.conversations, &ToolsBackend::rules(s.env.clone()), &s.env, &ks, 4).unwrap();
    let bm25 = run_eval(&s.conversations, &Bm25OnlyBackend::new(s.env.clone()), &s.env, &ks, 4).unwrap();
    for r in [&tools, &bm25] {
        assert!(r.metrics.windows(2).all(|w| w[0].micro <= w[1].micro && w[0].macro_avg <= w[1].macro_avg));
        assert!(r.to_table().contains(&r.backend));
    }
    assert!(tools.metric(20).unwrap().micro >= bm25.metric(20).unwrap().micro);
}

#[test]
fn invalid_inputs_are_reported() {
    let s = suite();
    let backend = Bm25OnlyBackend::new(s.env.clone());
    let convs = &s.conversations[..2];
    assert!(matches!(run_eval(convs, &backend, &s.env, &[], 1), Err(EvalError::BadKs(_))));
    assert!(matches!(run_eval(convs, &backend, &s.env, &[0, 5], 1), Err(EvalError::BadKs(_))));
    let mut broken = convs.to_vec();
    broken[1].turns[0].truth = "no-such-track".into();
    assert!(matches!(run_eval(&broken, &backend, &s.env, &[5], 2), Err(EvalError::UnknownTruth { turn: 0, .. })));
    let empty = run_eval(&[], &backend, &s.env, &[5], 2).unwrap();
    assert_eq!((empty.turns, empty.metrics[0].micro), (0, 0.0));
}
