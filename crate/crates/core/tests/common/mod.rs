//! Generators and independent reference implementations shared by the
//! integration tests and the acceptance target.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;
use muse_core::catalog::{Catalog, Track};
use muse_core::cf_trainer::{chronological_split, triple_gradient, triple_loss, BprData, BprModel, Interaction};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A 22-character id that sorts with `i`.
pub fn tid(i: usize) -> String {
    format!("trk{i:019}")
}

pub const WORDS: &[&str] = &[
    "night", "river", "glass", "echo", "summer", "paper", "static", "ember", "velvet", "north",
    "signal", "hollow", "drift", "lantern", "copper", "tide", "motel", "orbit", "dust", "bloom",
    "don't", "fever", "harbor", "neon",
];
pub const TAGS: &[&str] = &[
    "ambient", "rock", "jazz", "electronic", "instrumental", "dance", "sad", "happy", "piano",
    "guitar", "lo-fi", "post-rock", "soundtrack", "chill", "folk", "vocal", "dark", "upbeat",
];
pub const KEYS: &[&str] = &["C major", "A minor", "G major", "E minor", "D major", "F major"];

fn phrase(r: &mut ChaCha8Rng, max: usize) -> String {
    let n = r.random_range(1..=max);
    let mut parts: Vec<String> = (0..n).map(|_| WORDS.choose(r).unwrap().to_string()).collect();
    if r.random_bool(0.3) {
        let w = &mut parts[0];
        *w = w[..1].to_uppercase() + &w[1..];
    }
    parts.join(" ")
}

/// Random tracks with small vocabularies, so predicates, LIKE patterns and
/// BM25 terms all hit many rows and ties are common.
pub fn random_tracks(seed: u64, n: usize) -> Vec<Track> {
    let mut r = rng(seed);
    let artists: Vec<String> = (0..n.div_ceil(8).max(3)).map(|_| phrase(&mut r, 2)).collect();
    let albums: Vec<String> = (0..n.div_ceil(4).max(3)).map(|_| phrase(&mut r, 3)).collect();
    let base = NaiveDate::from_ymd_opt(1960, 1, 1).unwrap();
    (0..n)
        .map(|i| {
            let tags: Vec<String> = (0..r.random_range(1..=5))
                .map(|_| TAGS.choose(&mut r).unwrap().to_string())
                .collect();
            Track {
                track_id: tid(i),
                title: phrase(&mut r, 3),
                artist: artists.choose(&mut r).unwrap().clone(),
                album: albums.choose(&mut r).unwrap().clone(),
                popularity: r.random_range(0..=100),
                release_date: base + chrono::Days::new(r.random_range(0..23_000)),
                tempo: (r.random_range(600..=1800) as f64) / 10.0,
                key: KEYS.choose(&mut r).unwrap().to_string(),
                lyrics: (0..r.random_range(0..12))
                    .map(|_| *WORDS.choose(&mut r).unwrap())
                    .collect::<Vec<_>>()
                    .join(" "),
                attributes: tags,
            }
        })
        .collect()
}

pub fn random_catalog(seed: u64, n: usize) -> Catalog {
    Catalog::from_tracks(random_tracks(seed, n)).expect("generated tracks are valid")
}

// ---------------------------------------------------------------- SQL

#[derive(Debug, Clone)]
pub enum Lit {
    Num(f64),
    Text(String),
    Date(NaiveDate),
}

impl Lit {
    fn sql(&self) -> String {
        match self {
            Lit::Num(x) => format!("{x}"),
            Lit::Text(s) => format!("'{}'", s.replace('\'', "''")),
            Lit::Date(d) => format!("'{}'", d.format("%Y-%m-%d")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Cond {
    True,
    False,
    Cmp(&'static str, &'static str, Lit),
    Like(&'static str, String, bool),
    In(&'static str, Vec<Lit>, bool),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
}

#[derive(Debug, Clone)]
pub struct GenQuery {
    pub cond: Cond,
    pub order: Option<(&'static str, bool)>,
    pub limit: Option<usize>,
    pub star: bool,
}

const TEXT_COLS: &[&str] = &["title", "artist", "album", "key", "track_id"];
const ALL_COLS: &[&str] = &[
    "title", "artist", "album", "key", "track_id", "popularity", "tempo", "release_date",
];
const OPS: &[&str] = &["=", "!=", "<>", "<", "<=", ">", ">="];

fn text_cell<'a>(t: &'a Track, col: &str) -> &'a str {
    match col {
        "title" => &t.title,
        "artist" => &t.artist,
        "album" => &t.album,
        "key" => &t.key,
        "track_id" => &t.track_id,
        _ => unreachable!("{col}"),
    }
}

fn num_cell(t: &Track, col: &str) -> f64 {
    match col {
        "popularity" => t.popularity as f64,
        "tempo" => t.tempo,
        _ => unreachable!("{col}"),
    }
}

fn random_case(r: &mut ChaCha8Rng, s: &str) -> String {
    s.chars()
        .map(|c| if r.random_bool(0.3) { c.to_ascii_uppercase() } else { c })
        .collect()
}

fn gen_lit(r: &mut ChaCha8Rng, tracks: &[Track], col: &'static str) -> Lit {
    let t = tracks.choose(r).unwrap();
    match col {
        "popularity" => Lit::Num(if r.random_bool(0.7) {
            t.popularity as f64
        } else {
            r.random_range(-5..=105) as f64
        }),
        "tempo" => Lit::Num(if r.random_bool(0.7) {
            t.tempo
        } else {
            r.random_range(500..=1900) as f64 / 10.0 + 0.05
        }),
        "release_date" => Lit::Date(if r.random_bool(0.5) {
            t.release_date
        } else {
            NaiveDate::from_ymd_opt(r.random_range(1955..=2030), r.random_range(1..=12), r.random_range(1..=28))
                .unwrap()
        }),
        _ => Lit::Text(if r.random_bool(0.8) {
            random_case(r, text_cell(t, col))
        } else {
            WORDS.choose(r).unwrap().to_string()
        }),
    }
}

fn gen_like(r: &mut ChaCha8Rng, tracks: &[Track], col: &'static str) -> String {
    let src: Vec<char> = text_cell(tracks.choose(r).unwrap(), col).chars().collect();
    let a = r.random_range(0..=src.len());
    let b = r.random_range(a..=src.len());
    let mut p = String::new();
    if r.random_bool(0.6) {
        p.push('%');
    }
    for &c in &src[a..b] {
        if r.random_bool(0.15) {
            p.push('_');
        } else if r.random_bool(0.05) {
            p.push('%');
        } else {
            p.push(c);
        }
    }
    if r.random_bool(0.6) {
        p.push('%');
    }
    random_case(r, &p)
}

fn gen_cond(r: &mut ChaCha8Rng, tracks: &[Track], depth: u32) -> Cond {
    let leaf = depth == 0 || r.random_bool(0.4);
    if !leaf {
        return match r.random_range(0..5) {
            0 | 1 => Cond::And(Box::new(gen_cond(r, tracks, depth - 1)), Box::new(gen_cond(r, tracks, depth - 1))),
            2 | 3 => Cond::Or(Box::new(gen_cond(r, tracks, depth - 1)), Box::new(gen_cond(r, tracks, depth - 1))),
            _ => Cond::Not(Box::new(gen_cond(r, tracks, depth - 1))),
        };
    }
    match r.random_range(0..20) {
        0 => Cond::True,
        1 => Cond::False,
        2..=4 => {
            let col = *TEXT_COLS.choose(r).unwrap();
            Cond::Like(col, gen_like(r, tracks, col), r.random_bool(0.3))
        }
        5..=7 => {
            let col = *ALL_COLS.choose(r).unwrap();
            let vals = (0..r.random_range(1..=4)).map(|_| gen_lit(r, tracks, col)).collect();
            Cond::In(col, vals, r.random_bool(0.3))
        }
        _ => {
            let col = *ALL_COLS.choose(r).unwrap();
            Cond::Cmp(col, OPS.choose(r).unwrap(), gen_lit(r, tracks, col))
        }
    }
}

pub fn gen_query(r: &mut ChaCha8Rng, tracks: &[Track]) -> GenQuery {
    GenQuery {
        cond: gen_cond(r, tracks, 3),
        order: r
            .random_bool(0.6)
            .then(|| (*ALL_COLS.choose(r).unwrap(), r.random_bool(0.5))),
        limit: r.random_bool(0.4).then(|| r.random_range(1..=60)),
        star: r.random_bool(0.5),
    }
}

fn kw(r: &mut ChaCha8Rng, k: &str) -> String {
    match r.random_range(0..3) {
        0 => k.to_lowercase(),
        _ => k.to_string(),
    }
}

fn col_name(r: &mut ChaCha8Rng, col: &str) -> String {
    if col == "release_date" && r.random_bool(0.3) {
        return "date".into();
    }
    random_case(r, col)
}

fn cond_sql(r: &mut ChaCha8Rng, c: &Cond) -> String {
    match c {
        Cond::True => kw(r, "TRUE"),
        Cond::False => kw(r, "FALSE"),
        Cond::Cmp(col, op, lit) => format!("{} {op} {}", col_name(r, col), lit.sql()),
        Cond::Like(col, p, neg) => format!(
            "{} {}{} {}",
            col_name(r, col),
            if *neg { kw(r, "NOT ") } else { String::new() },
            kw(r, "LIKE"),
            Lit::Text(p.clone()).sql()
        ),
        Cond::In(col, vals, neg) => format!(
            "{} {}{} ({})",
            col_name(r, col),
            if *neg { kw(r, "NOT ") } else { String::new() },
            kw(r, "IN"),
            vals.iter().map(Lit::sql).collect::<Vec<_>>().join(", ")
        ),
        Cond::And(a, b) => {
            let (a, b) = (cond_sql(r, a), cond_sql(r, b));
            format!("({a} {} {b})", kw(r, "AND"))
        }
        Cond::Or(a, b) => {
            let (a, b) = (cond_sql(r, a), cond_sql(r, b));
            format!("({a} {} {b})", kw(r, "OR"))
        }
        Cond::Not(a) => {
            let a = cond_sql(r, a);
            format!("{} ({a})", kw(r, "NOT"))
        }
    }
}

/// Renders with randomized keyword and identifier case.
pub fn query_sql(r: &mut ChaCha8Rng, q: &GenQuery) -> String {
    let mut s = format!(
        "{} {} {} tracks",
        kw(r, "SELECT"),
        if q.star { "*" } else { "track_id" },
        kw(r, "FROM")
    );
    if !matches!(q.cond, Cond::True) || r.random_bool(0.2) {
        s += &format!(" {} {}", kw(r, "WHERE"), cond_sql(r, &q.cond));
    }
    if let Some((col, asc)) = q.order {
        s += &format!(" {} {}", kw(r, "ORDER BY"), col_name(r, col));
        match (asc, r.random_bool(0.5)) {
            (true, true) => s += " ASC",
            (true, false) => {}
            (false, _) => s += " DESC",
        }
    }
    if let Some(l) = q.limit {
        s += &format!(" {} {l}", kw(r, "LIMIT"));
    }
    if r.random_bool(0.2) {
        s.push(';');
    }
    s
}

/// `%` any run, `_` one char; both sides already lowercased.
fn like(s: &[char], p: &[char]) -> bool {
    // dp[j]: p[..j] matches the prefix of s consumed so far
    let mut dp = vec![false; p.len() + 1];
    dp[0] = true;
    for j in 1..=p.len() {
        dp[j] = dp[j - 1] && p[j - 1] == '%';
    }
    for &c in s {
        let mut next = vec![false; p.len() + 1];
        for j in 1..=p.len() {
            next[j] = match p[j - 1] {
                '%' => next[j - 1] || dp[j],
                '_' => dp[j - 1],
                pc => dp[j - 1] && pc == c,
            };
        }
        dp = next;
    }
    dp[p.len()]
}

fn cmp_lit(t: &Track, col: &str, lit: &Lit) -> Ordering {
    match lit {
        Lit::Num(x) => num_cell(t, col).partial_cmp(x).unwrap(),
        Lit::Date(d) => t.release_date.cmp(d),
        Lit::Text(s) => text_cell(t, col).to_lowercase().cmp(&s.to_lowercase()),
    }
}

fn holds(c: &Cond, t: &Track) -> bool {
    match c {
        Cond::True => true,
        Cond::False => false,
        Cond::Cmp(col, op, lit) => {
            let o = cmp_lit(t, col, lit);
            match *op {
                "=" => o == Ordering::Equal,
                "!=" | "<>" => o != Ordering::Equal,
                "<" => o == Ordering::Less,
                "<=" => o != Ordering::Greater,
                ">" => o == Ordering::Greater,
                ">=" => o != Ordering::Less,
                _ => unreachable!(),
            }
        }
        Cond::Like(col, p, neg) => {
            let s: Vec<char> = text_cell(t, col).to_lowercase().chars().collect();
            let p: Vec<char> = p.to_lowercase().chars().collect();
            like(&s, &p) != *neg
        }
        Cond::In(col, vals, neg) => vals.iter().any(|v| cmp_lit(t, col, v) == Ordering::Equal) != *neg,
        Cond::And(a, b) => holds(a, t) && holds(b, t),
        Cond::Or(a, b) => holds(a, t) || holds(b, t),
        Cond::Not(a) => !holds(a, t),
    }
}

fn order_key(a: &Track, b: &Track, col: &str) -> Ordering {
    match col {
        "popularity" | "tempo" => num_cell(a, col).partial_cmp(&num_cell(b, col)).unwrap(),
        "release_date" => a.release_date.cmp(&b.release_date),
        _ => text_cell(a, col).to_lowercase().cmp(&text_cell(b, col).to_lowercase()),
    }
}

/// Scan, filter, sort, cut.
pub fn sql_oracle(tracks: &[Track], q: &GenQuery, topk: usize) -> Vec<String> {
    let mut rows: Vec<&Track> = tracks.iter().filter(|t| holds(&q.cond, t)).collect();
    rows.sort_by(|a, b| {
        let primary = match q.order {
            Some((col, true)) => order_key(a, b, col),
            Some((col, false)) => order_key(b, a, col),
            None => b.popularity.cmp(&a.popularity),
        };
        primary.then_with(|| a.track_id.cmp(&b.track_id))
    });
    let cap = q.limit.map_or(topk, |l| l.min(topk));
    rows.iter().take(cap).map(|t| t.track_id.clone()).collect()
}

// ---------------------------------------------------------------- BM25

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Okapi BM25 scored document by document, `(id, score)` with score > 0,
/// best first, ties by id.
pub fn bm25_oracle(docs: &[(String, String)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, d)| words(d)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut q: Vec<String> = Vec::new();
    for w in words(query) {
        if !q.contains(&w) {
            q.push(w);
        }
    }
    let df: Vec<f64> = q
        .iter()
        .map(|term| toks.iter().filter(|d| d.contains(term)).count() as f64)
        .collect();
    let mut out = Vec::new();
    for ((id, _), doc) in docs.iter().zip(&toks) {
        let mut score = 0.0;
        for (term, &df) in q.iter().zip(&df) {
            let tf = doc.iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Equal up to reordering inside runs of scores within `tol`.
pub fn same_ranking(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} vs {}", got.len(), want.len()));
    }
    let mut i = 0;
    while i < want.len() {
        let mut j = i + 1;
        while j < want.len() && (want[j - 1].1 - want[j].1).abs() <= tol {
            j += 1;
        }
        for k in i..j {
            if (got[k].1 - want[k].1).abs() > tol {
                return Err(format!("rank {k}: score {} vs {}", got[k].1, want[k].1));
            }
        }
        let mut a: Vec<&str> = got[i..j].iter().map(|x| x.0.as_str()).collect();
        let mut b: Vec<&str> = want[i..j].iter().map(|x| x.0.as_str()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(format!("ranks {i}..{j}: {a:?} vs {b:?}"));
        }
        i = j;
    }
    Ok(())
}

pub fn bm25_query(r: &mut ChaCha8Rng) -> String {
    let mut parts: Vec<String> = (0..r.random_range(1..=4))
        .map(|_| {
            if r.random_bool(0.1) {
                "zzunseen".to_string()
            } else if r.random_bool(0.5) {
                TAGS.choose(r).unwrap().to_string()
            } else {
                let w = *WORDS.choose(r).unwrap();
                random_case(r, w)
            }
        })
        .collect();
    if r.random_bool(0.15) {
        let w = parts[0].clone();
        parts.push(w);
    }
    parts.join(if r.random_bool(0.5) { " " } else { ", " })
}

// ---------------------------------------------------------------- vectors

pub fn gaussian_rows(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(String, Vec<f64>)> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
            (tid(i), v)
        })
        .collect()
}

/// Top `k` ids by cosine, computed row by row.
pub fn cosine_oracle(rows: &[(String, Vec<f64>)], q: &[f64], k: usize, skip: Option<&str>) -> Vec<String> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let qn = dot(q, q).sqrt();
    let mut scored: Vec<(&str, f64)> = rows
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != skip)
        .map(|(id, v)| {
            let n = dot(v, v).sqrt();
            (id.as_str(), if n == 0.0 { 0.0 } else { dot(q, v) / (qn * n) })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.into_iter().take(k).map(|(id, _)| id.to_string()).collect()
}

// ---------------------------------------------------------------- rerank

/// Stable reorder written as a filter over the ranked list followed by the
/// leftovers, independent of the library's position map.
pub fn reorder_oracle(pool: &[String], ranked: &[String]) -> Vec<String> {
    let in_pool: HashSet<&String> = pool.iter().collect();
    let mut out: Vec<String> = Vec::new();
    for id in ranked {
        if in_pool.contains(id) && !out.contains(id) {
            out.push(id.clone());
        }
    }
    for id in pool {
        if !out.contains(id) {
            out.push(id.clone());
        }
    }
    out
}

// ---------------------------------------------------------------- semantic ids

/// Every code within `max_h` of `q`, by (distance, -lcp, id).
pub fn hamming_scan(codes: &HashMap<String, [u8; 4]>, q: &[u8; 4], max_h: usize) -> Vec<String> {
    let mut hits: Vec<(usize, usize, &str)> = codes
        .iter()
        .filter_map(|(id, c)| {
            let h = (0..4).filter(|&i| c[i] != q[i]).count();
            let lcp = (0..4).take_while(|&i| c[i] == q[i]).count();
            (h <= max_h).then_some((h, 4 - lcp, id.as_str()))
        })
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, _, id)| id.to_string()).collect()
}

// ---------------------------------------------------------------- stats

/// 95% normal-approximation interval around `p` for `n` trials.
pub fn binomial_ci(p: f64, n: usize) -> (f64, f64) {
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

// ---------------------------------------------------------------- bpr

pub fn normal_vec(r: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| d.sample(r)).collect()
}

/// Central difference of the triple loss along one coordinate.
pub fn central_difference(p: &[Vec<f64>; 3], which: usize, k: usize, reg: f64, eps: f64) -> f64 {
    let mut q = p.clone();
    q[which][k] += eps;
    let plus = triple_loss(&q[0], &q[1], &q[2], reg);
    q[which][k] -= 2.0 * eps;
    let minus = triple_loss(&q[0], &q[1], &q[2], reg);
    (plus - minus) / (2.0 * eps)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between the analytic gradient and central
/// differences (eps = 1e-4) over `points` random triples.
pub fn worst_gradient_error(seed: u64, points: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let dim = r.random_range(1..=16);
        let p = [normal_vec(&mut r, dim, 0.5), normal_vec(&mut r, dim, 0.5), normal_vec(&mut r, dim, 0.5)];
        let reg = r.random_range(0.0..0.05);
        let (gu, gi, gj) = triple_gradient(&p[0], &p[1], &p[2], reg);
        for (which, g) in [gu, gi, gj].iter().enumerate() {
            for k in 0..dim {
                worst = worst.max(rel_err(g[k], central_difference(&p, which, k, reg, 1e-4)));
            }
        }
    }
    worst
}

pub struct Planted {
    pub items: Vec<String>,
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

/// Users pick items by a noisy rank-`rank` preference model; each user's
/// last fifth (by timestamp) is held out.
pub fn planted(seed: u64, users: usize, items: usize, rank: usize, per_user: usize) -> Planted {
    let mut r = rng(seed);
    let uf: Vec<Vec<f64>> = (0..users).map(|_| normal_vec(&mut r, rank, 1.0)).collect();
    let vf: Vec<Vec<f64>> = (0..items).map(|_| normal_vec(&mut r, rank, 1.0)).collect();
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    let ids: Vec<String> = (0..items).map(tid).collect();
    let mut events = Vec::new();
    for (u, pu) in uf.iter().enumerate() {
        // Gumbel top-k samples without replacement from softmax(score).
        let mut keyed: Vec<(f64, usize)> = vf
            .iter()
            .enumerate()
            .map(|(i, qi)| (pu.iter().zip(qi).map(|(a, b)| a * b).sum::<f64>() + gumbel.sample(&mut r), i))
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut chosen: Vec<usize> = keyed[..per_user].iter().map(|&(_, i)| i).collect();
        chosen.shuffle(&mut r);
        for (t, i) in chosen.into_iter().enumerate() {
            events.push(Interaction {
                user_id: format!("u{u:04}"),
                track_id: ids[i].clone(),
                timestamp: (t * users + u) as i64,
            });
        }
    }
    let split = chronological_split(&events, 0.8).unwrap();
    Planted {
        items: ids,
        train: split.train,
        test: split.test,
    }
}

/// Mean over users of P(score(held-out positive) > score(random unseen item)).
pub fn held_out_auc(model: &BprModel, data: &BprData, p: &Planted, seed: u64) -> f64 {
    let mut r = rng(seed);
    let user_ix = |id: &str| data.users().binary_search_by(|u| u.as_str().cmp(id)).ok();
    let mut held: Vec<HashSet<usize>> = vec![HashSet::new(); data.users().len()];
    for e in &p.test {
        if let Some(u) = user_ix(&e.user_id) {
            held[u].insert(p.items.binary_search(&e.track_id).unwrap());
        }
    }
    let (mut sum, mut n) = (0.0, 0);
    for (u, pos) in held.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let (mut good, mut total) = (0.0, 0.0);
        for &i in pos {
            for _ in 0..50 {
                let j = loop {
                    let j = r.random_range(0..p.items.len());
                    if !pos.contains(&j) && !data.has_interacted(u, j) {
                        break j;
                    }
                };
                let (si, sj) = (model.score(u, i), model.score(u, j));
                good += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                total += 1.0;
            }
        }
        sum += good / total;
        n += 1;
    }
    sum / n as f64
}

// ---------------------------------------------------------------- rvq

/// `n` rows drawn around 40 random centers, ids from [`tid`].
pub fn mixture_rows(seed: u64, n: usize, dim: usize) -> Vec<(String, Vec<f64>)> {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..40).map(|_| normal_vec(&mut r, dim, 3.0)).collect();
    (0..n)
        .map(|i| {
            let c = &centers[r.random_range(0..centers.len())];
            let noise = normal_vec(&mut r, dim, 1.0);
            (tid(i), c.iter().zip(noise).map(|(a, b)| a + b).collect())
        })
        .collect()
}

/// Mean squared distance from each row to the prefix sums of its decoded
/// centroids, one value per layer.
pub fn prefix_mse(model: &muse_core::semantic_id::RvqModel, rows: &[(String, Vec<f64>)]) -> Vec<f64> {
    let mut out = vec![0.0; 4];
    for (_, v) in rows {
        let code = model.encode(v).unwrap();
        let mut approx = vec![0.0; v.len()];
        for (layer, &c) in code.indices.iter().enumerate() {
            for (a, m) in approx.iter_mut().zip(model.centroid(layer, c as usize)) {
                *a += m;
            }
            out[layer] += v.iter().zip(&approx).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    out.iter().map(|s| s / rows.len() as f64).collect()
}

// ---------------------------------------------------------------- pipeline

pub const PIPELINE_DIM: usize = 32;

/// Thirty hand-written tracks: nine credited to Apparat (one shared
/// credit), the rest spread over other artists, with overlapping tags.
pub fn pipeline_tracks() -> Vec<Track> {
    let rows: [(&str, &str, &[&str], u32); 30] = [
        ("Arcadia", "Apparat", &["electronic", "ambient", "melancholic"], 71),
        ("Goodbye", "Apparat", &["electronic", "vocal", "dark"], 88),
        ("Black Water", "Apparat", &["ambient", "instrumental", "cinematic"], 64),
        ("Ash/Black Veil", "Apparat", &["electronic", "post-rock"], 52),
        ("Song of Los", "Apparat", &["instrumental", "ambient", "piano"], 47),
        ("Hailin From The Edge", "Apparat", &["upbeat", "vocal"], 40),
        ("Circles", "Apparat", &["ambient"], 39),
        ("Dawan", "Apparat", &["instrumental", "orchestral", "soundtrack"], 58),
        ("Sweet Unrest", "Apparat Soap Skin", &["ambient", "instrumental", "dark"], 33),
        ("Bad Kingdom", "Moderat", &["electronic", "dance"], 90),
        ("Rusty Nails", "Moderat", &["electronic", "ambient"], 76),
        ("A New Error", "Moderat", &["instrumental", "electronic", "dance"], 80),
        ("Roygbiv", "Boards of Canada", &["ambient", "instrumental", "lo-fi"], 74),
        ("Dayvan Cowboy", "Boards of Canada", &["instrumental", "ambient", "psychedelic"], 69),
        ("Avril 14th", "Aphex Twin", &["piano", "instrumental", "calm"], 85),
        ("Windowlicker", "Aphex Twin", &["electronic", "dance", "weird"], 70),
        ("Teardrop", "Massive Attack", &["trip-hop", "vocal", "dark"], 87),
        ("Angel", "Massive Attack", &["trip-hop", "dark", "bass"], 66),
        ("Svefn-g-englar", "Sigur Ros", &["post-rock", "ambient", "vocal"], 61),
        ("Hoppipolla", "Sigur Ros", &["post-rock", "uplifting", "orchestral"], 78),
        ("Your Hand in Mine", "Explosions in the Sky", &["post-rock", "instrumental"], 63),
        ("Says", "Nils Frahm", &["ambient", "instrumental", "piano", "minimal"], 59),
        ("Ambre", "Nils Frahm", &["piano", "instrumental", "calm"], 57),
        ("Strobe", "Deadmau5", &["electronic", "progressive", "instrumental"], 83),
        ("Innerbloom", "Rufus Du Sol", &["electronic", "vocal", "dance"], 79),
        ("Midnight City", "M83", &["synth-pop", "upbeat", "vocal"], 91),
        ("Outro", "M83", &["ambient", "cinematic", "instrumental"], 72),
        ("Weightless", "Marconi Union", &["ambient", "instrumental", "calm"], 55),
        ("An Ending", "Brian Eno", &["ambient", "instrumental"], 68),
        ("Spiegel im Spiegel", "Arvo Part", &["classical", "minimal", "piano"], 62),
    ];
    let base = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    rows.iter()
        .enumerate()
        .map(|(i, (title, artist, tags, pop))| Track {
            track_id: tid(i),
            title: title.to_string(),
            artist: artist.to_string(),
            album: format!("{artist} collected"),
            popularity: *pop,
            release_date: base + chrono::Days::new(97 * i as u64),
            tempo: 70.0 + 3.0 * i as f64,
            key: KEYS[i % KEYS.len()].to_string(),
            lyrics: String::new(),
            attributes: tags.iter().map(|t| t.to_string()).collect(),
        })
        .collect()
}

/// Attribute-text rows the pipeline env indexes, one per track.
pub fn pipeline_rows(provider: &muse_core::HashingProvider, tracks: &[Track]) -> Vec<(String, Vec<f64>)> {
    tracks
        .iter()
        .map(|t| (t.track_id.clone(), provider.embed_dim(&t.attributes.join(", "), PIPELINE_DIM)))
        .collect()
}

pub fn pipeline_env(seed: u64) -> (Vec<Track>, muse_core::ToolEnv) {
    use muse_core::{EmbeddingTable, HashingProvider, SpaceId, ToolEnv, VectorStores};
    let tracks = pipeline_tracks();
    let provider = HashingProvider::new(seed).with_text_spaces(PIPELINE_DIM);
    let mut stores = VectorStores::new();
    stores.insert(EmbeddingTable::from_records(SpaceId::TEXT_ATTRIBUTES, pipeline_rows(&provider, &tracks)).unwrap());
    let env = ToolEnv::new(Catalog::from_tracks(tracks.clone()).unwrap(), std::sync::Arc::new(provider))
        .unwrap()
        .with_vectors(stores);
    (tracks, env)
}

/// The bm25-artist then attribute-similarity plan, computed without the
/// executor: oracle BM25 pool, oracle cosine ranking, oracle reorder.
pub fn pipeline_expected(seed: u64, tracks: &[Track], artist: &str, attrs: &str, topk: usize, final_k: usize) -> Vec<String> {
    let provider = muse_core::HashingProvider::new(seed);
    let docs: Vec<(String, String)> = tracks.iter().map(|t| (t.track_id.clone(), t.artist.clone())).collect();
    let pool: Vec<String> = bm25_oracle(&docs, artist, 1.2, 0.75).into_iter().take(topk).map(|(id, _)| id).collect();
    let rows = pipeline_rows(&provider, tracks);
    let ranked = cosine_oracle(&rows, &provider.embed_dim(attrs, PIPELINE_DIM), topk, None);
    let mut out = reorder_oracle(&pool, &ranked);
    out.truncate(final_k);
    out
}

/// Executes an sql-then-attributes plan `runs` times with sql failing at
/// p = 0.5. Returns the first-attempt sql success rate and whether every
/// execution produced a non-empty list.
pub fn injected_sql_run(seed: u64, runs: usize) -> (f64, bool) {
    use muse_core::tool_env::{tool_stats, CallContext, FailureInjector, ResubmitRepairer, ToolCall, ToolName, ToolPlan};
    use muse_core::vector_store::{ModalityType, VectorDbType};
    let (_, env) = pipeline_env(0);
    let env = env.with_failure_injection(FailureInjector::new(seed).with_probability(ToolName::Sql, 0.5));
    let plan = ToolPlan::new(vec![
        ToolCall::sql("SELECT * FROM tracks WHERE tempo > 80", 20),
        ToolCall::text_to_item("ambient", ModalityType::Text, VectorDbType::Attributes, 20),
    ])
    .unwrap();
    let ctx = CallContext { raw_query: "ambient".into(), cold_start: true };
    let traces: Vec<_> = (0..runs).map(|_| env.execute_plan(&plan, &ctx, 10, &ResubmitRepairer)).collect();
    let all_non_empty = traces.iter().all(|e| !e.ranked.is_empty());
    let stats = tool_stats(traces.iter().map(|e| &e.trace));
    (stats.tools["sql"].success_rate, all_non_empty)
}
