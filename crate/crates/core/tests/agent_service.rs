use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use muse_core::agent_service::{router, Agent, ServiceError, SessionService};
use muse_core::fixtures::{generate_fixture_suite, stub_provider, FixtureSizes};
use muse_core::planner::{ProfileSpec, RulePlanner};
use muse_core::ToolEnv;
use serde_json::{json, Value};

fn env() -> Arc<ToolEnv> {
    static ENV: OnceLock<Arc<ToolEnv>> = OnceLock::new();
    ENV.get_or_init(|| {
        let sizes = FixtureSizes { tracks: 300, artists: 40, users: 30, conversations: 2, turns: 2 };
        let suite = generate_fixture_suite(11, &sizes);
        Arc::new(suite.bundle.build_env(Arc::new(stub_provider())).unwrap())
    })
    .clone()
}

fn agent() -> Agent {
    Agent::new(env(), Arc::new(RulePlanner))
}

fn known_user() -> String {
    let env = env();
    let users = env.vectors().cf_users().expect("fixture has cf users");
    users.ids()[0].clone()
}

const QUERIES: [&str; 8] = [
    "some ambient tracks please",
    "anything faster than 130 bpm",
    "more like the first one",
    "songs from the 90s",
    "something melancholic with piano",
    "play something for me",
    "more of that",
    "the most popular jazz songs",
];

#[test]
fn sessions_accumulate_turns() {
    let svc = SessionService::new(agent());
    let id = svc.create_session(&ProfileSpec::cold_start(), Some(10)).unwrap();
    assert!(svc.get_session(&id).unwrap().state.turns.is_empty());
    for (i, q) in QUERIES.iter().enumerate() {
        let r = svc.post_message(&id, q).unwrap();
        assert_eq!(r.turn_index, i);
        assert!(!r.recommendations.is_empty() && r.recommendations.len() <= 10, "{q}");
        assert!(r.recommendations.iter().all(|t| env().catalog().get(&t.track_id).is_some()));
        assert!(!r.response.is_empty());
    }
    let s = svc.get_session(&id).unwrap();
    assert_eq!(s.state.turns.len(), 8);
    assert_eq!(s.state.turns.iter().map(|t| t.query.as_str()).collect::<Vec<_>>(), QUERIES);
    assert!(s.updated_at >= s.created_at);
    assert_eq!(svc.session_ids(), vec![id]);
    let stats = svc.tool_stats();
    assert!(stats.total_first_attempts >= 8);
    let share: f64 = stats.tools.values().map(|t| t.frequency).sum();
    assert!((share - 1.0).abs() < 1e-9);
}

#[test]
fn cold_sessions_never_personalize() {
    let svc = SessionService::new(agent());
    let id = svc.create_session(&ProfileSpec::cold_start(), None).unwrap();
    for q in ["play something for me", "my kind of music", "recommend me songs"] {
        let r = svc.post_message(&id, q).unwrap();
        assert!(r.plan.calls().iter().all(|c| c.tool_name.as_str() != "user_to_item_similarity"), "{q}");
    }
}

#[test]
fn errors_carry_kinds() {
    let svc = SessionService::new(agent());
    let missing = svc.get_session("nope").unwrap_err();
    assert!(matches!(missing, ServiceError::UnknownSession(_)));
    assert_eq!(missing.kind(), "not_found");
    assert_eq!(svc.post_message("nope", "hi").unwrap_err().kind(), "not_found");
    assert_eq!(svc.track("nope").unwrap_err().kind(), "not_found");
    let bad = ProfileSpec { user_id: Some("1".into()), ..ProfileSpec::cold_start() };
    assert_eq!(svc.create_session(&bad, None).unwrap_err().kind(), "invalid_profile");
    assert_eq!(svc.create_session(&ProfileSpec::cold_start(), Some(0)).unwrap_err().kind(), "invalid_request");
    let id = svc.create_session(&ProfileSpec::known(known_user()), None).unwrap();
    assert_eq!(svc.post_message(&id, "   ").unwrap_err().kind(), "invalid_request");
    assert!(svc.get_session(&id).unwrap().state.turns.is_empty());
}

#[test]
fn journal_replays_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (cold, warm, stats) = {
        let svc = SessionService::open(agent(), dir.path()).unwrap();
        let cold = svc.create_session(&ProfileSpec::cold_start(), Some(5)).unwrap();
        let warm = svc.create_session(&ProfileSpec::known(known_user()), None).unwrap();
        for q in &QUERIES[..3] {
            svc.post_message(&cold, q).unwrap();
            svc.post_message(&warm, q).unwrap();
        }
        (svc.get_session(&cold).unwrap(), svc.get_session(&warm).unwrap(), svc.tool_stats())
    };
    let svc = SessionService::open(agent(), dir.path()).unwrap();
    assert_eq!(*svc.get_session(&cold.session_id).unwrap(), *cold);
    assert_eq!(*svc.get_session(&warm.session_id).unwrap(), *warm);
    assert_eq!(svc.tool_stats(), stats);

    // New turns append to the replayed journal.
    svc.post_message(&cold.session_id, QUERIES[3]).unwrap();
    drop(svc);
    let svc = SessionService::open(agent(), dir.path()).unwrap();
    assert_eq!(svc.get_session(&cold.session_id).unwrap().state.turns.len(), 4);
}

#[test]
fn torn_tail_is_dropped_and_garbage_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let svc = SessionService::open(agent(), dir.path()).unwrap();
        let id = svc.create_session(&ProfileSpec::cold_start(), None).unwrap();
        svc.post_message(&id, QUERIES[0]).unwrap();
        id
    };
    let path = dir.path().join(format!("{id}.jsonl"));
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"event":"turn","turn":{"query":"half wri"#).unwrap();
    drop(f);
    let svc = SessionService::open(agent(), dir.path()).unwrap();
    assert_eq!(svc.get_session(&id).unwrap().state.turns.len(), 1);
    drop(svc);

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.insert(1, "not json at all");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = SessionService::open(agent(), dir.path()).err().unwrap();
    assert_eq!(err.kind(), "journal");
}

#[test]
fn concurrent_posts_serialize_per_session() {
    let svc = SessionService::new(agent());
    let shared = svc.create_session(&ProfileSpec::cold_start(), Some(5)).unwrap();
    let solo: Vec<String> = (0..4).map(|_| svc.create_session(&ProfileSpec::cold_start(), Some(5)).unwrap()).collect();
    let indices = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|w| {
                let (svc, shared, solo) = (&svc, &shared, &solo);
                s.spawn(move || {
                    let mut got = Vec::new();
                    for q in QUERIES.iter().skip(w % 2).step_by(2) {
                        got.push(svc.post_message(shared, q).unwrap().turn_index);
                        if w < 4 {
                            svc.post_message(&solo[w], q).unwrap();
                        }
                    }
                    got
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect::<Vec<_>>()
    });
    assert_eq!(indices.iter().copied().collect::<BTreeSet<_>>(), (0..32).collect());
    assert_eq!(svc.get_session(&shared).unwrap().state.turns.len(), 32);

    // Sessions are isolated: equal query streams give equal conversations.
    let recs = |id: &str| -> Vec<Vec<String>> {
        svc.get_session(id)
            .unwrap()
            .state
            .turns
            .iter()
            .map(|t| t.recommendations.iter().map(|r| r.track_id.clone()).collect())
            .collect()
    };
    assert_eq!(recs(&solo[0]), recs(&solo[2]));
    assert_eq!(recs(&solo[1]), recs(&solo[3]));
}

struct Server {
    base: String,
    _runtime: tokio::runtime::Runtime,
}

fn start(svc: SessionService) -> Server {
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(Arc::new(svc));
    runtime.spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { base: format!("http://{addr}"), _runtime: runtime }
}

fn body(r: reqwest::blocking::Response) -> (u16, Value) {
    let status = r.status().as_u16();
    (status, r.json().unwrap())
}

#[test]
fn http_api_round_trip() {
    let server = start(SessionService::new(agent()));
    let http = reqwest::blocking::Client::new();
    let url = |p: &str| format!("{}{p}", server.base);

    let (status, created) = body(http.post(url("/sessions")).json(&json!({"profile": {}, "final_k": 7})).send().unwrap());
    assert_eq!(status, 201);
    let id = created["session_id"].as_str().unwrap().to_string();

    let (status, turn) = body(
        http.post(url(&format!("/sessions/{id}/messages")))
            .json(&json!({"query": "some ambient tracks please"}))
            .send()
            .unwrap(),
    );
    assert_eq!(status, 200);
    assert_eq!(turn["turn_index"], 0);
    let recs = turn["recommendations"].as_array().unwrap();
    assert!(!recs.is_empty() && recs.len() <= 7);
    assert!(turn["plan"].as_array().unwrap()[0]["tool_name"].is_string());

    let (status, session) = body(http.get(url(&format!("/sessions/{id}"))).send().unwrap());
    assert_eq!(status, 200);
    assert_eq!(session["state"]["turns"].as_array().unwrap().len(), 1);
    assert_eq!(session["profile"]["user_type"], "cold_start");

    let track_id = recs[0]["track_id"].as_str().unwrap();
    let (status, track) = body(http.get(url(&format!("/tracks/{track_id}"))).send().unwrap());
    assert_eq!(status, 200);
    assert_eq!(track["track_id"], track_id);

    let (status, stats) = body(http.get(url("/stats/tools")).send().unwrap());
    assert_eq!(status, 200);
    assert!(stats["total_first_attempts"].as_u64().unwrap() >= 1);

    // Empty body means a default cold profile.
    let (status, _) = body(http.post(url("/sessions")).send().unwrap());
    assert_eq!(status, 201);

    let known = known_user();
    let (status, _) = body(http.post(url("/sessions")).json(&json!({"profile": {"user_id": known}})).send().unwrap());
    assert_eq!(status, 201);
}

#[test]
fn http_errors_are_json() {
    let server = start(SessionService::new(agent()));
    let http = reqwest::blocking::Client::new();
    let url = |p: &str| format!("{}{p}", server.base);
    let cases: Vec<(reqwest::blocking::RequestBuilder, u16, &str)> = vec![
        (http.get(url("/sessions/missing")), 404, "not_found"),
        (http.post(url("/sessions/missing/messages")).json(&json!({"query": "x"})), 404, "not_found"),
        (http.get(url("/tracks/missing")), 404, "not_found"),
        (http.get(url("/no/such/route")), 404, "not_found"),
        (http.post(url("/sessions")).body("{not json"), 400, "invalid_json"),
        (
            http.post(url("/sessions")).json(&json!({"profile": {"user_type": "cold_start", "user_id": "5"}})),
            400,
            "invalid_profile",
        ),
        (http.post(url("/sessions")).json(&json!({"final_k": 0})), 400, "invalid_request"),
    ];
    for (req, want_status, want_kind) in cases {
        let (status, v) = body(req.send().unwrap());
        assert_eq!((status, v["error_kind"].as_str().unwrap()), (want_status, want_kind), "{v}");
        assert!(v["message"].is_string());
    }
    let (_, created) = body(http.post(url("/sessions")).send().unwrap());
    let id = created["session_id"].as_str().unwrap();
    let (status, v) = body(http.post(url(&format!("/sessions/{id}/messages"))).json(&json!({"query": ""})).send().unwrap());
    assert_eq!((status, v["error_kind"].as_str().unwrap()), (400, "invalid_request"));
    let (status, v) = body(http.post(url(&format!("/sessions/{id}/messages"))).json(&json!({"q": "x"})).send().unwrap());
    assert_eq!((status, v["error_kind"].as_str().unwrap()), (400, "invalid_json"));
}
