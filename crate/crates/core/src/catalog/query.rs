use std::fmt;

use chrono::NaiveDate;
use thiserror::Error;

/// Columns of the `tracks` table that queries may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    TrackId,
    Title,
    Artist,
    Album,
    Popularity,
    ReleaseDate,
    Tempo,
    Key,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Text,
    Number,
    Date,
}

impl Column {
    pub const ALL: [Column; 8] = [
        Column::TrackId,
        Column::Title,
        Column::Artist,
        Column::Album,
        Column::Popularity,
        Column::ReleaseDate,
        Column::Tempo,
        Column::Key,
    ];

    /// Case-insensitive lookup. `date` is accepted as a synonym for
    /// `release_date`.
    pub fn from_name(name: &str) -> Option<Column> {
        let lower = name.to_ascii_lowercase();
        Some(match lower.as_str() {
            "track_id" => Column::TrackId,
            "title" => Column::Title,
            "artist" => Column::Artist,
            "album" => Column::Album,
            "popularity" => Column::Popularity,
            "release_date" | "date" => Column::ReleaseDate,
            "tempo" => Column::Tempo,
            "key" => Column::Key,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Column::TrackId => "track_id",
            Column::Title => "title",
            Column::Artist => "artist",
            Column::Album => "album",
            Column::Popularity => "popularity",
            Column::ReleaseDate => "release_date",
            Column::Tempo => "tempo",
            Column::Key => "key",
        }
    }

    pub fn kind(self) -> ColumnKind {
        match self {
            Column::Popularity | Column::Tempo => ColumnKind::Number,
            Column::ReleaseDate => ColumnKind::Date,
            _ => ColumnKind::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// A type-checked literal. Text literals are stored lowercased because
/// every string comparison is case-insensitive.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
    Date(NaiveDate),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    True,
    Compare {
        column: Column,
        op: CmpOp,
        value: Literal,
    },
    Like {
        column: Column,
        pattern: String,
    },
    In {
        column: Column,
        values: Vec<Literal>,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    All,
    TrackId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderBy {
    pub column: Column,
    pub ascending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqlQuery {
    pub projection: Projection,
    pub predicate: Expr,
    pub order_by: Option<OrderBy>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SqlError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown column {name:?} at byte {offset}")]
    UnknownColumn { offset: usize, name: String },
    #[error("type mismatch at byte {offset}: {message}")]
    TypeMismatch { offset: usize, message: String },
    #[error("unsupported construct at byte {offset}: {construct}")]
    Unsupported { offset: usize, construct: String },
}

impl SqlError {
    pub fn offset(&self) -> usize {
        match self {
            SqlError::Syntax { offset, .. }
            | SqlError::UnknownColumn { offset, .. }
            | SqlError::TypeMismatch { offset, .. }
            | SqlError::Unsupported { offset, .. } => *offset,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SqlError::Syntax { .. } => "sql_syntax",
            SqlError::UnknownColumn { .. } => "sql_unknown_column",
            SqlError::TypeMismatch { .. } => "sql_type_mismatch",
            SqlError::Unsupported { .. } => "sql_unsupported",
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Literal::Date(d) => write!(f, "'{}'", d.format("%Y-%m-%d")),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::True => f.write_str("TRUE"),
            Expr::Compare { column, op, value } => {
                write!(f, "{} {} {}", column.name(), op.symbol(), value)
            }
            Expr::Like { column, pattern } => write!(
                f,
                "{} LIKE {}",
                column.name(),
                Literal::Text(pattern.clone())
            ),
            Expr::In { column, values } => {
                write!(f, "{} IN (", column.name())?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
            Expr::And(a, b) => write!(f, "({a} AND {b})"),
            Expr::Or(a, b) => write!(f, "({a} OR {b})"),
            Expr::Not(e) => write!(f, "NOT ({e})"),
        }
    }
}

/// Canonical rendering; parsing it yields the same query.
impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let projection = match self.projection {
            Projection::All => "*",
            Projection::TrackId => "track_id",
        };
        write!(f, "SELECT {projection} FROM tracks")?;
        if self.predicate != Expr::True {
            write!(f, " WHERE {}", self.predicate)?;
        }
        if let Some(order) = self.order_by {
            let dir = if order.ascending { "ASC" } else { "DESC" };
            write!(f, " ORDER BY {} {dir}", order.column.name())?;
        }
        if let Some(limit) = self.limit {
            write!(f, " LIMIT {limit}")?;
        }
        Ok(())
    }
}
