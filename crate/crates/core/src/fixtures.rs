//! Deterministic synthetic catalog, listening history and conversations.
//!
//! Every conversation turn is built together with the tool call that can
//! answer it. The call is run against the finished tool environment and the
//! ground truth is drawn from its top results, so each truth is reachable
//! by its labeled tool by construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{Catalog, Track, TRACK_ID_LEN};
use crate::cf_trainer::{train_bpr, BprConfig, BprData, Interaction};
use crate::data::{embed_catalog, DataBundle, DataError};
use crate::planner::ProfileSpec;
use crate::sparse_index::CorpusType;
use crate::text::tokenize;
use crate::tool_env::{CallContext, ToolCall, ToolEnv, ToolName};
use crate::vector_store::{EmbeddingTable, HashingProvider, ModalityType, SpaceId, VectorDbType};

/// Seed of the offline text encoder shared by fixtures and eval.
pub const STUB_PROVIDER_SEED: u64 = 0x5eed_7e47;
pub const STUB_TEXT_DIM: usize = 64;
pub const AUDIO_DIM: usize = 32;
pub const IMAGE_DIM: usize = 32;
/// Depth at which a labeled call must surface its turn's truth.
pub const LABEL_TOPK: usize = 20;

/// The offline text encoder the fixtures were embedded with.
pub fn stub_provider() -> HashingProvider {
    HashingProvider::new(STUB_PROVIDER_SEED).with_text_spaces(STUB_TEXT_DIM)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSizes {
    pub tracks: usize,
    pub artists: usize,
    pub users: usize,
    pub conversations: usize,
    pub turns: usize,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        Self {
            tracks: 2000,
            artists: 250,
            users: 200,
            conversations: 100,
            turns: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Artist,
    Album,
    Title,
    Attributes,
    Filter,
    Similar,
    Personal,
}

impl TurnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TurnKind::Artist => "artist",
            TurnKind::Album => "album",
            TurnKind::Title => "title",
            TurnKind::Attributes => "attributes",
            TurnKind::Filter => "filter",
            TurnKind::Similar => "similar",
            TurnKind::Personal => "personal",
        }
    }
}

/// Which tool, with which arguments, recovers a turn's truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLabel {
    pub kind: TurnKind,
    pub call: ToolCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTurn {
    pub query: String,
    pub truth: String,
    pub label: TurnLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConversation {
    pub conversation_id: String,
    pub profile: ProfileSpec,
    pub turns: Vec<EvalTurn>,
}

pub fn write_conversations<W: Write>(conversations: &[EvalConversation], mut w: W) -> std::io::Result<()> {
    for c in conversations {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_conversations<R: BufRead>(r: R) -> Result<Vec<EvalConversation>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let c: EvalConversation =
            serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if c.turns.is_empty() {
            return Err(format!("line {}: conversation has no turns", i + 1));
        }
        out.push(c);
    }
    Ok(out)
}

pub struct FixtureSuite {
    pub bundle: DataBundle,
    pub conversations: Vec<EvalConversation>,
}

impl FixtureSuite {
    pub fn save(&self, root: impl AsRef<std::path::Path>) -> Result<(), DataError> {
        let root = root.as_ref();
        self.bundle.save(root)?;
        let path = crate::data::DataLayout::new(root).conversations();
        let io = |source| DataError::Io {
            path: path.clone(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io)?);
        write_conversations(&self.conversations, &mut w).map_err(io)?;
        w.flush().map_err(io)
    }
}

const GENRES: &[(&str, f64)] = &[
    ("ambient", 80.0),
    ("electronic", 124.0),
    ("techno", 132.0),
    ("house", 124.0),
    ("jazz", 112.0),
    ("blues", 94.0),
    ("rock", 122.0),
    ("indie", 116.0),
    ("pop", 118.0),
    ("folk", 100.0),
    ("classical", 88.0),
    ("hiphop", 92.0),
    ("soul", 98.0),
    ("metal", 142.0),
    ("reggae", 84.0),
    ("downtempo", 90.0),
];
const MOODS: &[&str] = &[
    "calm", "chill", "melancholic", "happy", "upbeat", "energetic", "dark", "dreamy", "romantic",
    "peaceful", "uplifting", "mellow", "atmospheric", "epic", "nostalgic", "groovy",
];
const INSTRUMENTS: &[&str] = &[
    "piano", "guitar", "violin", "synth", "drums", "strings", "saxophone", "vocal", "instrumental",
    "bass", "cello",
];
const SETTINGS: &[&str] = &["workout", "study", "sleep", "party", "focus", "driving"];

const VOCAB: &[&str] = &[
    "heart", "river", "stone", "window", "shadow", "morning", "garden", "silver", "golden",
    "winter", "autumn", "candle", "mirror", "harbor", "island", "valley", "thunder", "feather",
    "whisper", "echo", "horizon", "lantern", "ember", "meadow", "tide", "compass", "orbit",
    "velvet", "paper", "glass", "ribbon", "signal", "station", "bridge", "castle", "forest",
    "desert", "canyon", "prairie", "storm", "rain", "snow", "wind", "fire", "moon", "star", "sun",
    "sky", "ocean", "wave", "shore", "road", "city", "street", "train", "letter", "promise",
    "secret", "memory", "story", "dance", "kiss", "smile", "tear", "wish", "hope", "faith",
    "grace", "truth", "home", "heaven", "angel", "ghost", "wolf", "tiger", "rose", "lily", "ivy",
    "honey", "sugar", "coffee", "wine", "diamond", "crystal", "marble", "iron", "steel", "copper",
    "neon", "satellite", "rocket", "planet", "comet", "galaxy", "dust", "smoke", "ash", "flame",
    "spark", "bloom", "petal", "seed", "root", "branch", "leaf",
];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "ve", "to", "sa", "li", "ma", "de", "no", "vi", "ze", "be", "do", "fi",
    "ga", "hu", "jo", "ke", "lu", "ne", "pa", "ri", "so", "ta", "ul", "wy", "xa", "or", "en",
    "ly", "tha", "bri", "cro", "dra", "fen", "gri", "kro", "mor", "pri", "sta", "tre", "vor",
    "zan", "qui",
];
/// Words the rule planner treats as cues; generated names avoid them.
const CUE_WORDS: &[&str] = &[
    "over", "above", "under", "below", "between", "around", "about", "near", "from", "in", "of",
    "after", "since", "before", "recent", "new", "newest", "latest", "fresh", "oldest", "old",
    "vintage", "obscure", "underground", "hidden", "gem", "gems", "lesser", "popular", "hits",
    "biggest", "top", "similar", "like", "sound", "sounds", "same", "vibe", "cover", "covers",
    "artwork", "look", "visual", "listeners", "fans", "people", "crowd", "audience", "album",
    "record", "lp", "ep", "song", "songs", "track", "tracks", "tune", "tunes", "called", "titled",
    "named", "title", "lyric", "lyrics", "words", "sing", "sings", "sung", "line", "bpm", "me",
    "my", "ok", "i",
];
const KEYS: &[&str] = &[
    "C major", "C minor", "C# major", "C# minor", "D major", "D minor", "Eb major", "Eb minor",
    "E major", "E minor", "F major", "F minor", "F# major", "F# minor", "G major", "G minor",
    "Ab major", "Ab minor", "A major", "A minor", "Bb major", "Bb minor", "B major", "B minor",
];
const AGE_GROUPS: &[&str] = &["18-24", "25-34", "35-44", "45-54", "55+"];
const GENDERS: &[&str] = &["female", "male", "nonbinary"];
const COUNTRIES: &[&str] = &["US", "GB", "DE", "BR", "KR", "JP", "FR", "SE", "MX", "AU"];
const BASE62: &[u8] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    Normal::new(0.0, std).expect("positive std").sample(rng)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim).map(|_| normal(rng, std)).collect()
}

/// Unique made-up words that collide with nothing the planner listens for.
struct NameForge {
    used: HashSet<String>,
}

impl NameForge {
    fn new() -> Self {
        let mut used: HashSet<String> = HashSet::new();
        used.extend(VOCAB.iter().map(|s| s.to_string()));
        used.extend(CUE_WORDS.iter().map(|s| s.to_string()));
        used.extend(crate::planner::DESCRIPTORS.iter().map(|s| s.to_string()));
        Self { used }
    }

    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.random_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("syllables")).collect();
            if w.len() >= 4 && self.used.insert(w.clone()) {
                return capitalize(&w);
            }
        }
    }
}

struct ArtistPlan {
    name: String,
    genre: usize,
    start_year: i32,
    popularity: f64,
    offset: Vec<f64>,
}

fn track_id(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let id: String = (0..TRACK_ID_LEN)
            .map(|_| BASE62[rng.random_range(0..BASE62.len())] as char)
            .collect();
        if used.insert(id.clone()) {
            return id;
        }
    }
}

fn pick_distinct<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut v: Vec<&str> = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

/// Catalog plus audio and image vectors.
fn generate_catalog(
    rng: &mut ChaCha8Rng,
    sizes: &FixtureSizes,
) -> (Catalog, EmbeddingTable, EmbeddingTable) {
    let mut forge = NameForge::new();
    let genre_centers: Vec<Vec<f64>> = GENRES.iter().map(|_| gaussian_vec(rng, AUDIO_DIM, 1.0)).collect();
    let mood_centers: BTreeMap<&str, Vec<f64>> =
        MOODS.iter().map(|m| (*m, gaussian_vec(rng, AUDIO_DIM, 0.4))).collect();
    let artists: Vec<ArtistPlan> = (0..sizes.artists.max(1))
        .map(|_| {
            let name = if rng.random_bool(0.6) {
                format!("{} {}", forge.word(rng), forge.word(rng))
            } else {
                forge.word(rng)
            };
            ArtistPlan {
                name,
                genre: rng.random_range(0..GENRES.len()),
                start_year: rng.random_range(1965..=2018),
                popularity: rng.random_range(5.0..85.0),
                offset: gaussian_vec(rng, AUDIO_DIM, 0.6),
            }
        })
        .collect();

    // Every artist gets at least one track; the rest are spread unevenly.
    let mut counts = vec![1usize; artists.len()];
    let weights: Vec<f64> = (0..artists.len()).map(|i| 1.0 / (1.0 + (i % 17) as f64).sqrt()).collect();
    let total: f64 = weights.iter().sum();
    for _ in artists.len()..sizes.tracks {
        let mut x = rng.random_range(0.0..total);
        let mut k = 0;
        while x >= weights[k] && k + 1 < weights.len() {
            x -= weights[k];
            k += 1;
        }
        counts[k] += 1;
    }

    let mut ids = HashSet::new();
    let mut tracks = Vec::with_capacity(sizes.tracks);
    let mut audio = Vec::with_capacity(sizes.tracks);
    let mut image = Vec::with_capacity(sizes.tracks);
    for (artist, &count) in artists.iter().zip(&counts) {
        let albums = count.div_ceil(5);
        for a in 0..albums {
            let album = if rng.random_bool(0.5) {
                forge.word(rng)
            } else {
                format!("{} {}", capitalize(VOCAB.choose(rng).expect("vocab")), forge.word(rng))
            };
            let year = (artist.start_year + 2 * a as i32 + rng.random_range(0..2)).min(2024);
            let date = NaiveDate::from_ymd_opt(year, rng.random_range(1..=12), rng.random_range(1..=28))
                .expect("valid date");
            let art_center = gaussian_vec(rng, IMAGE_DIM, 1.0);
            let in_album = (count - 5 * a).min(5);
            for _ in 0..in_album {
                let genre = if rng.random_bool(0.8) {
                    artist.genre
                } else {
                    rng.random_range(0..GENRES.len())
                };
                let n_moods = rng.random_range(1..=2);
                let moods = pick_distinct(rng, MOODS, n_moods);
                let n_instruments = rng.random_range(1..=2);
                let instruments = pick_distinct(rng, INSTRUMENTS, n_instruments);
                let mut attributes: Vec<String> = vec![GENRES[genre].0.to_string()];
                attributes.extend(moods.iter().map(|s| s.to_string()));
                attributes.extend(instruments.iter().map(|s| s.to_string()));
                if rng.random_bool(0.4) {
                    attributes.push(SETTINGS.choose(rng).expect("settings").to_string());
                }
                let title_len = rng.random_range(1..=3);
                let title = (0..title_len)
                    .map(|_| capitalize(VOCAB.choose(rng).expect("vocab")))
                    .collect::<Vec<_>>()
                    .join(" ");
                let lyric_len = rng.random_range(25..=50);
                let lyrics = (0..lyric_len)
                    .map(|_| *VOCAB.choose(rng).expect("vocab"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let tempo = (GENRES[genre].1 + normal(rng, 14.0)).clamp(50.0, 200.0);
                let popularity = (artist.popularity + normal(rng, 10.0)).clamp(0.0, 100.0).round() as u32;
                let id = track_id(rng, &mut ids);

                let mut a_vec = genre_centers[genre].clone();
                for (x, o) in a_vec.iter_mut().zip(&artist.offset) {
                    *x += o;
                }
                for m in &moods {
                    for (x, c) in a_vec.iter_mut().zip(&mood_centers[m]) {
                        *x += c;
                    }
                }
                for x in a_vec.iter_mut() {
                    *x += normal(rng, 0.35);
                }
                let i_vec: Vec<f64> = art_center.iter().map(|c| c + normal(rng, 0.3)).collect();
                audio.push((id.clone(), a_vec));
                image.push((id.clone(), i_vec));
                tracks.push(Track {
                    track_id: id,
                    title,
                    artist: artist.name.clone(),
                    album: album.clone(),
                    popularity,
                    release_date: date,
                    tempo: (tempo * 100.0).round() / 100.0,
                    key: KEYS.choose(rng).expect("keys").to_string(),
                    lyrics,
                    attributes,
                });
            }
        }
    }
    let catalog = Catalog::from_tracks(tracks).expect("generated tracks are valid");
    let audio = EmbeddingTable::from_records(SpaceId::AUDIO, audio).expect("finite vectors");
    let image = EmbeddingTable::from_records(SpaceId::IMAGE, image).expect("finite vectors");
    (catalog, audio, image)
}

struct UserPlan {
    user_id: String,
}

fn generate_interactions(rng: &mut ChaCha8Rng, catalog: &Catalog, sizes: &FixtureSizes) -> (Vec<UserPlan>, Vec<Interaction>) {
    let mut by_genre: Vec<Vec<(&str, f64)>> = vec![Vec::new(); GENRES.len()];
    for t in catalog.tracks() {
        let g = GENRES.iter().position(|(name, _)| *name == t.attributes[0]).expect("genre tag");
        by_genre[g].push((t.track_id.as_str(), 1.0 + t.popularity as f64));
    }
    let mut users = Vec::new();
    let mut events = Vec::new();
    for u in 0..sizes.users {
        let user_id = format!("{}", 10000 + u);
        let mut genres: Vec<usize> = (0..GENRES.len()).filter(|g| !by_genre[*g].is_empty()).collect();
        genres.shuffle(rng);
        genres.truncate(3);
        let n = rng.random_range(20..=60);
        let mut ts: i64 = 1_600_000_000 + rng.random_range(0..10_000_000);
        let mut seen = HashSet::new();
        for _ in 0..n {
            // Taste weights 0.6 / 0.3 / 0.1 over the three genres.
            let r: f64 = rng.random();
            let slot = if r < 0.6 { 0 } else if r < 0.9 { 1 } else { 2 };
            let g = genres[slot.min(genres.len() - 1)];
            let pool = &by_genre[g];
            let pick = pool
                .choose_weighted(rng, |(_, w)| *w)
                .expect("non-empty genre")
                .0;
            ts += rng.random_range(60..86_400);
            if seen.insert(pick) {
                events.push(Interaction {
                    user_id: user_id.clone(),
                    track_id: pick.to_string(),
                    timestamp: ts,
                });
            }
        }
        users.push(UserPlan { user_id });
    }
    (users, events)
}

fn without_topk(call: &ToolCall) -> serde_json::Map<String, Value> {
    let mut args = call.tool_args.clone();
    args.remove("topk");
    args
}

/// True when two calls agree on everything except depth.
pub fn same_call_modulo_topk(a: &ToolCall, b: &ToolCall) -> bool {
    a.tool_name == b.tool_name && without_topk(a) == without_topk(b)
}

struct TurnDraft {
    kind: TurnKind,
    query: String,
    call: ToolCall,
}

fn tempo_bound(rng: &mut ChaCha8Rng) -> u32 {
    10 * rng.random_range(8..=15)
}

fn draft_turn(
    rng: &mut ChaCha8Rng,
    kind: TurnKind,
    catalog: &Catalog,
    user: Option<&str>,
    previous_truth: Option<&str>,
) -> Option<TurnDraft> {
    let anchor = catalog.tracks().choose(rng).expect("non-empty catalog");
    let (query, call) = match kind {
        TurnKind::Artist => {
            let a = &anchor.artist;
            let q = match rng.random_range(0..3) {
                0 => format!("Play something by {a}"),
                1 => format!("Can you put on {a}?"),
                _ => format!("I want to hear {a} right now"),
            };
            (q, ToolCall::bm25(a, CorpusType::Artist, LABEL_TOPK))
        }
        TurnKind::Album => {
            let (a, al) = (&anchor.artist, &anchor.album);
            if rng.random_bool(0.5) {
                (
                    format!("Play music from {a}'s {al}"),
                    ToolCall::bm25(al, CorpusType::Album, LABEL_TOPK),
                )
            } else {
                (
                    format!("Put on the album \"{al}\""),
                    ToolCall::bm25(al, CorpusType::Album, LABEL_TOPK),
                )
            }
        }
        TurnKind::Title => {
            let t = &anchor.title;
            let q = if rng.random_bool(0.5) {
                format!("Play the song called \"{t}\"")
            } else {
                format!("Find the track titled \"{t}\" for me")
            };
            (q, ToolCall::bm25(t, CorpusType::Title, LABEL_TOPK))
        }
        TurnKind::Attributes => {
            let mut tags: Vec<&String> = anchor.attributes.iter().collect();
            tags.shuffle(rng);
            tags.truncate(2);
            let words: Vec<String> = tags.iter().map(|s| s.to_string()).collect();
            let q = match rng.random_range(0..3) {
                0 => format!("Play some {} {} music", words[0], words.get(1).map_or("", |s| s)),
                1 => format!("Could you find {} tunes, maybe {}?", words[0], words.get(1).map_or("", |s| s)),
                _ => format!("I need something {} and {}", words[0], words.get(1).map_or("", |s| s)),
            };
            // Query order is the order the planner reads descriptors in.
            let ordered: Vec<String> = tokenize(&q)
                .into_iter()
                .filter(|t| words.contains(t))
                .fold(Vec::new(), |mut acc, t| {
                    if !acc.contains(&t) {
                        acc.push(t);
                    }
                    acc
                });
            let call = ToolCall::text_to_item(
                &ordered.join(", "),
                ModalityType::Text,
                VectorDbType::Attributes,
                LABEL_TOPK,
            );
            (q.split_whitespace().collect::<Vec<_>>().join(" "), call)
        }
        TurnKind::Filter => {
            let (q, sql) = match rng.random_range(0..5) {
                0 => {
                    let n = tempo_bound(rng);
                    (
                        format!("Give me songs over {n} BPM"),
                        format!("SELECT track_id FROM tracks WHERE tempo > {n}"),
                    )
                }
                1 => {
                    let n = tempo_bound(rng);
                    (
                        format!("Something obscure under {n} BPM"),
                        format!("SELECT track_id FROM tracks WHERE tempo < {n} ORDER BY popularity ASC"),
                    )
                }
                2 => {
                    let d = 10 * rng.random_range(197..=201);
                    let label = if d >= 2000 { format!("{d}s") } else { format!("{}0s", (d % 100) / 10) };
                    (
                        format!("Play music from the {label}"),
                        format!(
                            "SELECT track_id FROM tracks WHERE release_date >= '{d}-01-01' AND release_date < '{}-01-01'",
                            d + 10
                        ),
                    )
                }
                3 => {
                    let y = rng.random_range(1990..=2018);
                    (
                        format!("Anything released after {y}?"),
                        format!("SELECT track_id FROM tracks WHERE release_date >= '{}-01-01'", y + 1),
                    )
                }
                _ => {
                    let lo = 10 * rng.random_range(7..=13);
                    let hi = lo + 20;
                    (
                        format!("Recent songs between {lo} and {hi} BPM"),
                        format!(
                            "SELECT track_id FROM tracks WHERE tempo >= {lo} AND tempo <= {hi} ORDER BY release_date DESC"
                        ),
                    )
                }
            };
            (q, ToolCall::sql(&sql, LABEL_TOPK))
        }
        TurnKind::Similar => {
            let seed = previous_truth?;
            let (q, m, db) = match rng.random_range(0..4) {
                0 => ("More like this, please".to_string(), ModalityType::Audio, VectorDbType::Audio),
                1 => ("Anything that sounds like that?".to_string(), ModalityType::Audio, VectorDbType::Audio),
                2 => ("Show me tracks with similar artwork".to_string(), ModalityType::Image, VectorDbType::Image),
                _ => ("What else do fans of this one play? Something similar".to_string(), ModalityType::Cf, VectorDbType::Cf),
            };
            (q, ToolCall::item_to_item(seed, m, db, LABEL_TOPK))
        }
        TurnKind::Personal => {
            let user = user?;
            let q = match rng.random_range(0..3) {
                0 => "Recommend something for me".to_string(),
                1 => "Play whatever fits my taste".to_string(),
                _ => "Surprise me with what I like".to_string(),
            };
            (q, ToolCall::user_to_item(user, LABEL_TOPK))
        }
    };
    Some(TurnDraft { kind, query, call })
}

const KIND_WEIGHTS: &[(TurnKind, f64)] = &[
    (TurnKind::Artist, 0.2),
    (TurnKind::Album, 0.1),
    (TurnKind::Title, 0.1),
    (TurnKind::Attributes, 0.2),
    (TurnKind::Filter, 0.15),
    (TurnKind::Similar, 0.15),
    (TurnKind::Personal, 0.1),
];

/// Picks the truth among a labeled call's results. Cold users take any of
/// them; known users lean toward what their cf vector scores highest.
fn choose_truth(rng: &mut ChaCha8Rng, env: &ToolEnv, results: &[String], user: Option<&str>) -> String {
    let vectors = env.vectors();
    let scored = user.and_then(|u| {
        let uv = vectors.cf_users()?.get(u)?;
        let items = vectors.table(SpaceId::CF)?;
        let mut s: Vec<(f64, &String)> = results
            .iter()
            .filter_map(|id| Some((crate::vector_store::dot(uv, items.get(id)?), id)))
            .collect();
        s.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Some(s)
    });
    match scored {
        Some(s) if !s.is_empty() => {
            let top = s.len().min(5);
            s[rng.random_range(0..top)].1.clone()
        }
        _ => results.choose(rng).expect("non-empty results").clone(),
    }
}

fn profile_for(rng: &mut ChaCha8Rng, user: Option<&UserPlan>, interactions: &[Interaction]) -> ProfileSpec {
    let mut spec = match user {
        Some(u) => {
            let mut recent: Vec<&Interaction> = interactions.iter().filter(|e| e.user_id == u.user_id).collect();
            recent.sort_by_key(|e| std::cmp::Reverse(e.timestamp));
            let mut p = ProfileSpec::known(u.user_id.clone());
            p.recent_track_ids = recent.iter().take(3).map(|e| e.track_id.clone()).collect();
            p
        }
        None => ProfileSpec::cold_start(),
    };
    spec.age_group = AGE_GROUPS.choose(rng).expect("ages").to_string();
    spec.gender = GENDERS.choose(rng).expect("genders").to_string();
    spec.country = COUNTRIES.choose(rng).expect("countries").to_string();
    spec
}

fn generate_conversations(
    rng: &mut ChaCha8Rng,
    env: &ToolEnv,
    users: &[UserPlan],
    interactions: &[Interaction],
    sizes: &FixtureSizes,
) -> Vec<EvalConversation> {
    let mut known_pool: Vec<&UserPlan> = users.iter().collect();
    known_pool.shuffle(rng);
    let mut out = Vec::with_capacity(sizes.conversations);
    for c in 0..sizes.conversations {
        let user = if c % 2 == 0 { known_pool.get(c / 2).copied() } else { None };
        let user_id = user.map(|u| u.user_id.as_str());
        let profile = profile_for(rng, user, interactions);
        let ctx = CallContext {
            raw_query: String::new(),
            cold_start: user.is_none(),
        };
        let mut turns: Vec<EvalTurn> = Vec::with_capacity(sizes.turns);
        while turns.len() < sizes.turns {
            let kind = KIND_WEIGHTS
                .choose_weighted(rng, |(_, w)| *w)
                .expect("weights")
                .0;
            let previous = turns.last().map(|t| t.truth.as_str());
            let Some(draft) = draft_turn(rng, kind, env.catalog(), user_id, previous) else {
                continue;
            };
            let Ok(results) = env.run_call(&draft.call, &ctx) else {
                continue;
            };
            if results.is_empty() {
                continue;
            }
            let truth = choose_truth(rng, env, &results, user_id);
            turns.push(EvalTurn {
                query: draft.query,
                truth,
                label: TurnLabel {
                    kind: draft.kind,
                    call: draft.call,
                },
            });
        }
        out.push(EvalConversation {
            conversation_id: format!("conv-{c:04}"),
            profile,
            turns,
        });
    }
    out
}

/// Builds the whole suite from `seed`. Identical inputs give identical
/// output, byte for byte once serialized.
pub fn generate_fixture_suite(seed: u64, sizes: &FixtureSizes) -> FixtureSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (catalog, audio, image) = generate_catalog(&mut rng, sizes);
    let (users, interactions) = generate_interactions(&mut rng, &catalog, sizes);

    let provider = Arc::new(stub_provider());
    let mut bundle = DataBundle::new(catalog);
    for space in [SpaceId::TEXT_METADATA, SpaceId::TEXT_LYRICS, SpaceId::TEXT_ATTRIBUTES] {
        let table = embed_catalog(&bundle.catalog, provider.as_ref(), space).expect("stub covers text spaces");
        bundle.tables.insert(space, table);
    }
    bundle.tables.insert(SpaceId::AUDIO, audio);
    bundle.tables.insert(SpaceId::IMAGE, image);

    let items: Vec<String> = bundle.catalog.track_ids().map(str::to_string).collect();
    let data = BprData::from_interactions(&interactions, &items).expect("every user has events");
    let config = BprConfig {
        rng_seed: seed,
        ..BprConfig::default()
    };
    let (model, _) = train_bpr(&data, &config).expect("valid bpr config");
    let cf = model.into_tables().expect("non-empty tables");
    bundle.tables.insert(SpaceId::CF, cf.items);
    bundle.cf_users = Some(cf.users);
    bundle.interactions = interactions;

    let env = bundle.build_env(provider).expect("fixture env builds");
    let conversations = generate_conversations(&mut rng, &env, &users, &bundle.interactions, sizes);
    FixtureSuite { bundle, conversations }
}

/// Turns whose labeled call does not surface the truth in its top
/// [`LABEL_TOPK`]. Empty for a sound suite.
pub fn audit_recoverability(env: &ToolEnv, conversations: &[EvalConversation]) -> Vec<(String, usize)> {
    let mut bad = Vec::new();
    for c in conversations {
        let cold = !matches!(c.profile.user_id.as_deref(), Some(u) if !u.is_empty());
        let ctx = CallContext {
            raw_query: String::new(),
            cold_start: cold,
        };
        for (i, t) in c.turns.iter().enumerate() {
            let ok = env
                .run_call(&t.label.call, &ctx)
                .map(|r| r.iter().take(LABEL_TOPK).any(|id| *id == t.truth))
                .unwrap_or(false);
            if !ok {
                bad.push((c.conversation_id.clone(), i));
            }
        }
    }
    bad
}

/// Per-kind turn counts, for reports and sanity checks.
pub fn kind_counts(conversations: &[EvalConversation]) -> BTreeMap<TurnKind, usize> {
    let mut m = BTreeMap::new();
    for t in conversations.iter().flat_map(|c| &c.turns) {
        *m.entry(t.label.kind).or_insert(0) += 1;
    }
    m
}

/// Distinct tools the labels rely on.
pub fn labeled_tools(conversations: &[EvalConversation]) -> BTreeSet<ToolName> {
    conversations
        .iter()
        .flat_map(|c| &c.turns)
        .map(|t| t.label.call.tool_name)
        .collect()
}
