use std::cmp::Ordering;

use super::query::{CmpOp, Column, Expr, Literal, SqlQuery};
use super::{Catalog, Track};

/// Runs a parsed query. Evaluation is total: every well-typed query
/// produces a (possibly empty) list.
///
/// Results are sorted by the query's ORDER BY column, or by popularity
/// descending when absent; ties always fall back to track_id ascending.
/// The list is cut at `min(topk, LIMIT)`.
pub fn execute_sql(catalog: &Catalog, query: &SqlQuery, topk: usize) -> Vec<String> {
    let mut rows: Vec<&Track> = catalog
        .tracks()
        .iter()
        .filter(|t| eval(&query.predicate, t))
        .collect();
    match query.order_by {
        Some(order) => rows.sort_by(|a, b| {
            let ord = compare_column(order.column, a, b);
            let ord = if order.ascending { ord } else { ord.reverse() };
            ord.then_with(|| a.track_id.cmp(&b.track_id))
        }),
        None => rows.sort_by(|a, b| {
            b.popularity
                .cmp(&a.popularity)
                .then_with(|| a.track_id.cmp(&b.track_id))
        }),
    }
    let cap = query.limit.map_or(topk, |l| l.min(topk));
    rows.into_iter()
        .take(cap)
        .map(|t| t.track_id.clone())
        .collect()
}

enum Cell<'a> {
    Text(&'a str),
    Number(f64),
    Date(chrono::NaiveDate),
}

fn cell(column: Column, t: &Track) -> Cell<'_> {
    match column {
        Column::TrackId => Cell::Text(&t.track_id),
        Column::Title => Cell::Text(&t.title),
        Column::Artist => Cell::Text(&t.artist),
        Column::Album => Cell::Text(&t.album),
        Column::Key => Cell::Text(&t.key),
        Column::Popularity => Cell::Number(t.popularity as f64),
        Column::Tempo => Cell::Number(t.tempo),
        Column::ReleaseDate => Cell::Date(t.release_date),
    }
}

fn compare_column(column: Column, a: &Track, b: &Track) -> Ordering {
    match (cell(column, a), cell(column, b)) {
        (Cell::Text(x), Cell::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
        (Cell::Number(x), Cell::Number(y)) => x.total_cmp(&y),
        (Cell::Date(x), Cell::Date(y)) => x.cmp(&y),
        _ => Ordering::Equal,
    }
}

/// `None` when the literal's type does not fit the cell; the parser rules
/// that out for validated queries.
fn compare_literal(c: &Cell<'_>, lit: &Literal) -> Option<Ordering> {
    match (c, lit) {
        (Cell::Text(s), Literal::Text(v)) => Some(s.to_lowercase().as_str().cmp(v.as_str())),
        (Cell::Number(n), Literal::Number(v)) => n.partial_cmp(v),
        (Cell::Date(d), Literal::Date(v)) => Some(d.cmp(v)),
        _ => None,
    }
}

fn eval(expr: &Expr, t: &Track) -> bool {
    match expr {
        Expr::True => true,
        Expr::Compare { column, op, value } => {
            let Some(ord) = compare_literal(&cell(*column, t), value) else {
                return false;
            };
            match op {
                CmpOp::Eq => ord == Ordering::Equal,
                CmpOp::Ne => ord != Ordering::Equal,
                CmpOp::Lt => ord == Ordering::Less,
                CmpOp::Le => ord != Ordering::Greater,
                CmpOp::Gt => ord == Ordering::Greater,
                CmpOp::Ge => ord != Ordering::Less,
            }
        }
        Expr::Like { column, pattern } => match cell(*column, t) {
            Cell::Text(s) => like_match(&s.to_lowercase(), pattern),
            _ => false,
        },
        Expr::In { column, values } => {
            let c = cell(*column, t);
            values
                .iter()
                .any(|v| compare_literal(&c, v) == Some(Ordering::Equal))
        }
        Expr::And(a, b) => eval(a, t) && eval(b, t),
        Expr::Or(a, b) => eval(a, t) || eval(b, t),
        Expr::Not(e) => !eval(e, t),
    }
}

/// SQL LIKE over chars: `%` matches any run, `_` exactly one char.
pub(crate) fn like_match(text: &str, pattern: &str) -> bool {
    let s: Vec<char> = text.chars().collect();
    let p: Vec<char> = pattern.chars().collect();
    let (mut si, mut pi) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && (p[pi] == '_' || p[pi] == s[si]) {
            si += 1;
            pi += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, si));
            pi += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '%')
}
