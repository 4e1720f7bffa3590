//! Deterministic planner. Each rule looks for one kind of cue in the query;
//! the first matching retrieval rule wins and one reranker is appended.

use std::sync::LazyLock;

use regex::Regex;

use super::{PlanContext, Planner, PlannerError, PlannerOutput};
use crate::sparse_index::CorpusType;
use crate::text::tokenize;
use crate::tool_env::{RepairRequest, ToolCall, ToolName, ToolPlan};
use crate::vector_store::{ModalityType, VectorDbType};

pub const RETRIEVAL_TOPK: usize = 50;
pub const RERANK_TOPK: usize = 500;

/// Descriptive words the rules treat as attribute cues.
pub const DESCRIPTORS: &[&str] = &[
    // genres
    "ambient", "electronic", "electronica", "techno", "house", "jazz", "blues", "rock", "indie",
    "pop", "folk", "classical", "hiphop", "soul", "funk", "metal", "punk", "reggae", "country",
    "experimental", "soundtrack", "disco", "trance", "lofi", "acoustic", "downtempo", "shoegaze",
    // moods
    "calm", "chill", "relaxing", "melancholic", "sad", "happy", "upbeat", "energetic", "dark",
    "dreamy", "romantic", "aggressive", "peaceful", "uplifting", "mellow", "atmospheric",
    "minimal", "epic", "nostalgic", "groovy", "moody", "hypnotic",
    // instruments and texture
    "piano", "guitar", "violin", "synth", "drums", "strings", "saxophone", "vocal",
    "instrumental", "orchestral", "bass", "brass", "cello",
    // settings
    "workout", "study", "sleep", "party", "focus", "driving", "meditation", "summer", "night",
];

const NAME_STOPWORDS: &[&str] = &["I", "I'm", "I'd", "I've", "I'll", "OK", "Ok", "BPM", "Bpm"];

macro_rules! re {
    ($name:ident, $pat:expr) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new($pat).expect("valid regex"));
    };
}

re!(TEMPO_OVER, r"(?i)\b(over|above|faster than|more than|at least)\s+(\d{2,3})\s*bpm\b");
re!(TEMPO_UNDER, r"(?i)\b(under|below|slower than|less than|at most)\s+(\d{2,3})\s*bpm\b");
re!(TEMPO_BETWEEN, r"(?i)\bbetween\s+(\d{2,3})\s+and\s+(\d{2,3})\s*bpm\b");
re!(TEMPO_AROUND, r"(?i)\b(?:around|about|near)\s+(\d{2,3})\s*bpm\b");
re!(YEAR_IN, r"(?i)\b(?:from|in|released in|of)\s+((?:19|20)\d{2})\b");
re!(YEAR_AFTER, r"(?i)\b(after|since)\s+((?:19|20)\d{2})\b");
re!(YEAR_BEFORE, r"(?i)\b(?:before|prior to)\s+((?:19|20)\d{2})\b");
re!(DECADE, r"(?i)(?:\b(19|20)(\d)0s\b|'(\d)0s\b|\b(\d)0s\b)");
re!(RECENT, r"(?i)\b(recent|new|newest|latest|fresh)\b");
re!(OLDEST, r"(?i)\b(oldest|old|vintage)\b");
re!(OBSCURE, r"(?i)\b(obscure|underground|hidden gems?|lesser[- ]known)\b");
re!(POPULAR, r"(?i)\b(popular|hits|biggest|top)\b");
re!(QUOTED, r#""([^"]+)"|(?:^|[\s(])'([^']+)'(?:[\s.,!?)]|$)"#);
re!(POSSESSIVE, r"((?:[A-Z][\w&.-]*\s+)*[A-Z][\w&.-]*)'s\s+((?:[A-Z0-9][\w&.-]*)(?:\s+[A-Z0-9][\w&.-]*)*)");
re!(SIMILAR, r"(?i)\b(similar|more like|like (?:this|that|it)|sounds? like (?:this|that|it)|same vibe|along those lines)\b");
re!(IMAGE_CUE, r"(?i)\b(cover|covers|artwork|album art|look|visual)\b");
re!(CF_CUE, r"(?i)\b(listeners|fans|people who|crowd|audience)\b");
re!(PERSONAL, r"(?i)\b(for me|my taste|based on my|my history|personali[sz]ed|i usually|i tend to|what i like)\b");
re!(ALBUM_CUE, r"(?i)\b(album|record|lp|ep)\b");
re!(TITLE_CUE, r"(?i)\b((song|track|tune)s?\s+(called|titled|named)|title)\b");
re!(LYRICS_CUE, r"(?i)\b(lyrics?|words|sings?|sung|line)\b");

#[derive(Debug, Default)]
struct SqlCues {
    conditions: Vec<String>,
    order: Option<&'static str>,
    spans: Vec<(usize, usize)>,
}

fn sql_cues(q: &str) -> SqlCues {
    let mut c = SqlCues::default();
    let span = |m: regex::Match<'_>, spans: &mut Vec<(usize, usize)>| spans.push((m.start(), m.end()));
    for cap in TEMPO_BETWEEN.captures_iter(q) {
        let (a, b): (u32, u32) = (cap[1].parse().unwrap_or(0), cap[2].parse().unwrap_or(0));
        c.conditions.push(format!("tempo >= {} AND tempo <= {}", a.min(b), a.max(b)));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in TEMPO_AROUND.captures_iter(q) {
        let n: u32 = cap[1].parse().unwrap_or(0);
        c.conditions.push(format!("tempo >= {} AND tempo <= {}", n.saturating_sub(5), n + 5));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in TEMPO_OVER.captures_iter(q) {
        let op = if cap[1].eq_ignore_ascii_case("at least") { ">=" } else { ">" };
        c.conditions.push(format!("tempo {op} {}", &cap[2]));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in TEMPO_UNDER.captures_iter(q) {
        let op = if cap[1].eq_ignore_ascii_case("at most") { "<=" } else { "<" };
        c.conditions.push(format!("tempo {op} {}", &cap[2]));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in YEAR_AFTER.captures_iter(q) {
        let y: i32 = cap[2].parse().unwrap_or(0);
        let from = if cap[1].eq_ignore_ascii_case("after") { y + 1 } else { y };
        c.conditions.push(format!("release_date >= '{from}-01-01'"));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in YEAR_BEFORE.captures_iter(q) {
        c.conditions.push(format!("release_date < '{}-01-01'", &cap[1]));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in YEAR_IN.captures_iter(q) {
        let y: i32 = cap[1].parse().unwrap_or(0);
        c.conditions.push(format!(
            "release_date >= '{y}-01-01' AND release_date < '{}-01-01'",
            y + 1
        ));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    for cap in DECADE.captures_iter(q) {
        let start = if let (Some(century), Some(d)) = (cap.get(1), cap.get(2)) {
            format!("{}{}0", century.as_str(), d.as_str()).parse::<i32>().unwrap_or(0)
        } else {
            let d: i32 = cap.get(3).or(cap.get(4)).map_or(0, |m| m.as_str().parse().unwrap_or(0));
            if d <= 2 {
                2000 + 10 * d
            } else {
                1900 + 10 * d
            }
        };
        c.conditions.push(format!(
            "release_date >= '{start}-01-01' AND release_date < '{}-01-01'",
            start + 10
        ));
        span(cap.get(0).expect("match"), &mut c.spans);
    }
    c.order = if RECENT.is_match(q) {
        Some("release_date DESC")
    } else if OLDEST.is_match(q) {
        Some("release_date ASC")
    } else if OBSCURE.is_match(q) {
        Some("popularity ASC")
    } else if POPULAR.is_match(q) && !c.conditions.is_empty() {
        Some("popularity DESC")
    } else {
        None
    };
    c
}

fn sql_text(conditions: &[String], order: Option<&str>) -> String {
    let mut s = String::from("SELECT track_id FROM tracks");
    if !conditions.is_empty() {
        s.push_str(" WHERE ");
        s.push_str(&conditions.join(" AND "));
    }
    if let Some(o) = order {
        s.push_str(" ORDER BY ");
        s.push_str(o);
    }
    s
}

/// Descriptor words in query order, deduplicated.
fn descriptors(q: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tok in tokenize(q) {
        if DESCRIPTORS.contains(&tok.as_str()) && !out.contains(&tok) {
            out.push(tok);
        }
    }
    out
}

/// Runs of capitalized words that do not start a sentence.
fn proper_nouns(q: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let mut sentence_start = true;
    for raw in q.split_whitespace() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '&');
        let word = word.trim_end_matches("'s");
        let capitalized = word.chars().next().is_some_and(char::is_uppercase)
            && !NAME_STOPWORDS.contains(&word);
        if capitalized && !sentence_start {
            run.push(word);
        } else if !run.is_empty() {
            names.push(run.join(" "));
            run.clear();
        }
        let ends_clause = raw.ends_with([',', ';', ':', '.', '!', '?']) || raw.ends_with("'s");
        if ends_clause && !run.is_empty() {
            names.push(run.join(" "));
            run.clear();
        }
        sentence_start = raw.ends_with(['.', '!', '?']);
    }
    if !run.is_empty() {
        names.push(run.join(" "));
    }
    names
}

fn quoted(q: &str) -> Option<String> {
    QUOTED.captures(q).and_then(|c| {
        c.get(1)
            .or(c.get(2))
            .map(|m| m.as_str().trim().to_string())
            .filter(|s| !s.is_empty())
    })
}

fn name_corpus(q: &str) -> CorpusType {
    if TITLE_CUE.is_match(q) {
        CorpusType::Title
    } else if ALBUM_CUE.is_match(q) {
        CorpusType::Album
    } else if LYRICS_CUE.is_match(q) {
        CorpusType::Lyrics
    } else {
        CorpusType::Artist
    }
}

fn blank_spans(q: &str, spans: &[(usize, usize)]) -> String {
    let mut bytes = q.as_bytes().to_vec();
    for &(a, b) in spans {
        bytes[a..b].iter_mut().for_each(|c| *c = b' ');
    }
    String::from_utf8(bytes).unwrap_or_else(|_| q.to_string())
}

/// The deterministic plan for one turn, with the reasons that fired.
pub fn rule_based_plan(ctx: &PlanContext<'_>) -> (ToolPlan, String) {
    let q = ctx.query;
    let profile = ctx.profile;
    let known_user = profile.user_id.as_deref().filter(|_| !profile.is_cold_start());
    let sql = sql_cues(q);
    let words = descriptors(q);
    let rest = blank_spans(q, &sql.spans);
    let possessive = POSSESSIVE.captures(&rest).map(|c| {
        let whole = c.get(0).expect("match");
        let before = rest[..whole.start()].trim_end();
        let mut owner = c[1].to_string();
        // A capitalized sentence opener is not part of the name.
        if (before.is_empty() || before.ends_with(['.', '!', '?'])) && owner.contains(' ') {
            owner = owner.split_once(' ').map(|(_, r)| r.to_string()).unwrap_or(owner);
        }
        (owner, c[2].trim().to_string())
    });
    let name = quoted(&rest).or_else(|| proper_nouns(&rest).into_iter().next());
    let seed = ctx.state.last_track().filter(|_| SIMILAR.is_match(q));
    let mut reasons: Vec<String> = Vec::new();

    let retrieval = if let Some(seed) = seed {
        let (m, db) = if IMAGE_CUE.is_match(q) {
            (ModalityType::Image, VectorDbType::Image)
        } else if CF_CUE.is_match(q) {
            (ModalityType::Cf, VectorDbType::Cf)
        } else {
            (ModalityType::Audio, VectorDbType::Audio)
        };
        reasons.push(format!(
            "similarity request: neighbors of the last recommended track in {}",
            m.as_str()
        ));
        ToolCall::item_to_item(&seed.track_id, m, db, RETRIEVAL_TOPK)
    } else if !sql.conditions.is_empty() {
        reasons.push("numeric or date constraints: structured filter".into());
        ToolCall::sql(&sql_text(&sql.conditions, sql.order), RETRIEVAL_TOPK)
    } else if let Some((_, album)) = &possessive {
        reasons.push(format!("possessive names an album: {album:?}"));
        ToolCall::bm25(album, CorpusType::Album, RETRIEVAL_TOPK)
    } else if let Some(name) = &name {
        let corpus = name_corpus(q);
        reasons.push(format!("named entity {name:?}: lexical match on {corpus}"));
        ToolCall::bm25(name, corpus, RETRIEVAL_TOPK)
    } else if let (Some(user), true) = (known_user, PERSONAL.is_match(q)) {
        reasons.push("personal request from a known user".into());
        ToolCall::user_to_item(user, RETRIEVAL_TOPK)
    } else if !words.is_empty() {
        reasons.push(format!("descriptive request: {}", words.join(", ")));
        ToolCall::text_to_item(&words.join(", "), ModalityType::Text, VectorDbType::Attributes, RETRIEVAL_TOPK)
    } else if sql.order.is_some() {
        reasons.push("ordering request: structured sort".into());
        ToolCall::sql(&sql_text(&[], sql.order), RETRIEVAL_TOPK)
    } else if known_user.is_some() {
        reasons.push("generic request: popular tracks".into());
        ToolCall::sql(&sql_text(&[], None), RETRIEVAL_TOPK)
    } else {
        reasons.push("no specific cue: semantic match on the whole query".into());
        ToolCall::text_to_item(q, ModalityType::Text, VectorDbType::Attributes, RETRIEVAL_TOPK)
    };

    let reranker = if let (Some((artist, _)), ToolName::Bm25) = (&possessive, retrieval.tool_name) {
        reasons.push(format!("rerank by artist {artist:?}"));
        Some(ToolCall::bm25(artist, CorpusType::Artist, RERANK_TOPK))
    } else if let Some(user) = known_user.filter(|_| retrieval.tool_name != ToolName::UserToItem) {
        reasons.push("rerank by the user's listening history".into());
        Some(ToolCall::user_to_item(user, RERANK_TOPK))
    } else if let Some(order) = sql.order.filter(|_| retrieval.tool_name != ToolName::Sql) {
        reasons.push(format!("rerank by {order}"));
        Some(ToolCall::sql(&sql_text(&[], Some(order)), RERANK_TOPK))
    } else if known_user.is_none()
        && retrieval.tool_name != ToolName::TextToItem
        && !(retrieval.tool_name == ToolName::Sql && sql.order.is_some())
    {
        // Cold-start default. Skipped when it would repeat the retriever or
        // undo an ordering the user asked for.
        let text = if words.is_empty() { q.to_string() } else { words.join(", ") };
        reasons.push(format!("rerank by attribute similarity to {text:?}"));
        Some(ToolCall::text_to_item(
            &text,
            ModalityType::Text,
            VectorDbType::Attributes,
            RERANK_TOPK,
        ))
    } else {
        None
    };

    let calls: Vec<ToolCall> = std::iter::once(retrieval).chain(reranker).collect();
    (
        ToolPlan::new(calls).expect("one or two calls"),
        reasons.join("; "),
    )
}

/// Stateless and offline. Failed calls are resubmitted unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct RulePlanner;

impl Planner for RulePlanner {
    fn plan(&self, ctx: &PlanContext<'_>, _feedback: Option<&str>) -> Result<PlannerOutput, PlannerError> {
        let (plan, rationale) = rule_based_plan(ctx);
        Ok(PlannerOutput {
            plan,
            rationale,
            raw: String::new(),
        })
    }

    fn repair(&self, _ctx: &PlanContext<'_>, request: &RepairRequest<'_>) -> Option<ToolCall> {
        Some(request.call.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{ConversationState, Turn, UserProfile, UserType};
    use crate::render::TrackRendering;
    use crate::tool_env::ToolRegistry;

    fn profile(user: Option<&str>) -> UserProfile {
        UserProfile {
            user_id: user.map(str::to_string),
            user_type: if user.is_some() { UserType::Known } else { UserType::ColdStart },
            age_group: String::new(),
            gender: String::new(),
            country: String::new(),
            recent_tracks: vec![],
        }
    }

    fn plan_for(q: &str, state: &ConversationState, user: Option<&str>) -> ToolPlan {
        let p = profile(user);
        let reg = ToolRegistry::standard();
        let ctx = PlanContext {
            query: q,
            state,
            profile: &p,
            registry: &reg,
        };
        let (plan, _) = rule_based_plan(&ctx);
        reg.validate_plan(&plan).unwrap();
        plan
    }

    fn one_turn() -> ConversationState {
        ConversationState {
            turns: vec![Turn {
                query: "x".into(),
                recommendations: vec![TrackRendering {
                    track_id: "1KsqDnRQXFdFypQdFkB0wA".into(),
                    title: "not a number".into(),
                    artist: "apparat".into(),
                    album: "walls".into(),
                    tags: vec![],
                    tempo: 130.37,
                    key: "C major".into(),
                    release_date: "2007-05-25".into(),
                    popularity: 0,
                    semantic_ids: vec![],
                }],
                response: "r".into(),
                plan: ToolPlan::new(vec![ToolCall::sql("SELECT track_id FROM tracks", 1)]).unwrap(),
                rationale: String::new(),
                trace: None,
            }],
        }
    }

    #[test]
    fn recent_fast_songs_use_sql() {
        let plan = plan_for("Recent songs over 130 BPM", &ConversationState::default(), None);
        assert_eq!(plan.calls().len(), 1);
        assert_eq!(
            plan.calls()[0],
            ToolCall::sql(
                "SELECT track_id FROM tracks WHERE tempo > 130 ORDER BY release_date DESC",
                RETRIEVAL_TOPK
            )
        );
    }

    #[test]
    fn similar_voices_use_audio_neighbors() {
        let plan = plan_for("Ok, more similar voices", &one_turn(), None);
        assert_eq!(
            plan.calls()[0],
            ToolCall::item_to_item("1KsqDnRQXFdFypQdFkB0wA", ModalityType::Audio, VectorDbType::Audio, RETRIEVAL_TOPK)
        );
        // Without history there is nothing to be similar to.
        let plan = plan_for("Ok, more similar voices", &ConversationState::default(), None);
        assert_ne!(plan.calls()[0].tool_name, ToolName::ItemToItem);
    }

    #[test]
    fn artist_then_attributes_for_cold_user() {
        let q = "More tracks by Apparat please, preferably instrumental and ambient.";
        let plan = plan_for(q, &one_turn(), None);
        assert_eq!(
            plan.calls(),
            [
                ToolCall::bm25("Apparat", CorpusType::Artist, RETRIEVAL_TOPK),
                ToolCall::text_to_item("instrumental, ambient", ModalityType::Text, VectorDbType::Attributes, RERANK_TOPK),
            ]
        );
    }

    #[test]
    fn possessive_album_and_generic_known_user() {
        let plan = plan_for("Songs from Adele's 21", &ConversationState::default(), None);
        assert_eq!(
            plan.calls(),
            [
                ToolCall::bm25("21", CorpusType::Album, RETRIEVAL_TOPK),
                ToolCall::bm25("Adele", CorpusType::Artist, RERANK_TOPK),
            ]
        );
        let plan = plan_for("play something", &ConversationState::default(), Some("10021"));
        assert_eq!(plan.calls()[0].tool_name, ToolName::Sql);
        assert_eq!(plan.calls()[1], ToolCall::user_to_item("10021", RERANK_TOPK));
    }

    #[test]
    fn calm_piano_is_descriptive() {
        let plan = plan_for("Play a calm piano piece", &ConversationState::default(), None);
        assert_eq!(
            plan.calls(),
            [ToolCall::text_to_item("calm, piano", ModalityType::Text, VectorDbType::Attributes, RETRIEVAL_TOPK)]
        );
    }

    #[test]
    fn decades_years_and_titles() {
        let s = ConversationState::default();
        let sql = |q: &str| plan_for(q, &s, None).calls()[0].tool_args["sql_query"].as_str().unwrap().to_string();
        assert_eq!(
            sql("Give me tracks from the 80s"),
            "SELECT track_id FROM tracks WHERE release_date >= '1980-01-01' AND release_date < '1990-01-01'"
        );
        assert_eq!(
            sql("songs released after 2015 under 90 bpm"),
            "SELECT track_id FROM tracks WHERE tempo < 90 AND release_date >= '2016-01-01'"
        );
        let plan = plan_for("Play the song called \"Blue Meridian\"", &s, None);
        assert_eq!(plan.calls()[0], ToolCall::bm25("Blue Meridian", CorpusType::Title, RETRIEVAL_TOPK));
    }

    #[test]
    fn personal_cue_for_known_user() {
        let plan = plan_for("Pick something for me", &ConversationState::default(), Some("u7"));
        assert_eq!(plan.calls(), [ToolCall::user_to_item("u7", RETRIEVAL_TOPK)]);
        let plan = plan_for("Pick something for me", &ConversationState::default(), None);
        assert!(plan.calls().iter().all(|c| c.tool_name != ToolName::UserToItem));
    }
}
