//! Recursive-descent parser for the accepted SQL subset:
//!
//! ```text
//! query   := SELECT (* | track_id) FROM tracks [WHERE expr]
//!            [ORDER BY column [ASC | DESC]] [LIMIT int] [;]
//! expr    := and (OR and)*
//! and     := unary (AND unary)*
//! unary   := NOT unary | '(' expr ')' | TRUE | FALSE | pred
//! pred    := column [NOT] LIKE string
//!          | column [NOT] IN '(' literal (, literal)* ')'
//!          | column cmp literal
//! ```

use chrono::NaiveDate;

use super::lexer::{tokenize, Token, TokenKind};
use super::query::{Column, ColumnKind, Expr, Literal, OrderBy, Projection, SqlError, SqlQuery};

const AGGREGATES: [&str; 5] = ["count", "sum", "avg", "min", "max"];
const UNSUPPORTED_CLAUSES: [&str; 12] = [
    "join", "inner", "left", "right", "full", "cross", "natural", "group", "having", "union",
    "offset", "distinct",
];

pub fn parse_sql(text: &str) -> Result<SqlQuery, SqlError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    p.query()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, ahead: usize) -> &Token {
        let i = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[i]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.peek().is_word(word) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<(), SqlError> {
        self.check_unsupported()?;
        if self.eat_word(word) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected {}", word.to_uppercase())))
        }
    }

    fn error_here(&self, message: &str) -> SqlError {
        let tok = self.peek();
        let found = match &tok.kind {
            TokenKind::Eof => "end of input".to_string(),
            other => format!("{other:?}"),
        };
        SqlError::Syntax {
            offset: tok.offset,
            message: format!("{message}, found {found}"),
        }
    }

    /// Flags constructs outside the subset (joins, grouping, aggregates,
    /// subqueries) with a dedicated error instead of a generic syntax error.
    fn check_unsupported(&self) -> Result<(), SqlError> {
        let tok = self.peek();
        if let TokenKind::Ident(word) = &tok.kind {
            let lower = word.to_ascii_lowercase();
            if UNSUPPORTED_CLAUSES.contains(&lower.as_str()) {
                return Err(SqlError::Unsupported {
                    offset: tok.offset,
                    construct: lower.to_uppercase(),
                });
            }
            if AGGREGATES.contains(&lower.as_str())
                && self.peek_at(1).kind == TokenKind::LParen
            {
                return Err(SqlError::Unsupported {
                    offset: tok.offset,
                    construct: format!("aggregate function {}", lower.to_uppercase()),
                });
            }
        }
        if tok.kind == TokenKind::LParen && self.peek_at(1).is_word("select") {
            return Err(SqlError::Unsupported {
                offset: tok.offset,
                construct: "subquery".to_string(),
            });
        }
        Ok(())
    }

    fn query(&mut self) -> Result<SqlQuery, SqlError> {
        self.expect_word("select")?;
        self.check_unsupported()?;
        let projection = self.projection()?;
        self.expect_word("from")?;
        let table = self.bump();
        match &table.kind {
            TokenKind::Ident(name) if name.eq_ignore_ascii_case("tracks") => {}
            TokenKind::Ident(name) => {
                return Err(SqlError::Unsupported {
                    offset: table.offset,
                    construct: format!("table {name:?} (only `tracks` exists)"),
                })
            }
            TokenKind::LParen => {
                return Err(SqlError::Unsupported {
                    offset: table.offset,
                    construct: "subquery".to_string(),
                })
            }
            _ => {
                self.pos -= 1;
                return Err(self.error_here("expected table name"));
            }
        }
        if self.peek().kind == TokenKind::Comma {
            return Err(SqlError::Unsupported {
                offset: self.peek().offset,
                construct: "multiple tables".to_string(),
            });
        }
        self.check_unsupported()?;

        let predicate = if self.eat_word("where") {
            self.expr()?
        } else {
            Expr::True
        };

        self.check_unsupported()?;
        let order_by = if self.eat_word("order") {
            self.expect_word("by")?;
            let (column, _) = self.column()?;
            let ascending = if self.eat_word("desc") {
                false
            } else {
                self.eat_word("asc");
                true
            };
            Some(OrderBy { column, ascending })
        } else {
            None
        };

        self.check_unsupported()?;
        let limit = if self.eat_word("limit") {
            let tok = self.bump();
            match tok.kind {
                TokenKind::Number(n) if n >= 1.0 && n.fract() == 0.0 && n <= u32::MAX as f64 => {
                    Some(n as usize)
                }
                _ => {
                    return Err(SqlError::Syntax {
                        offset: tok.offset,
                        message: "LIMIT expects a positive integer".to_string(),
                    })
                }
            }
        } else {
            None
        };

        if self.peek().kind == TokenKind::Semicolon {
            self.bump();
        }
        self.check_unsupported()?;
        if self.peek().kind != TokenKind::Eof {
            return Err(self.error_here("expected end of query"));
        }
        Ok(SqlQuery {
            projection,
            predicate,
            order_by,
            limit,
        })
    }

    fn projection(&mut self) -> Result<Projection, SqlError> {
        let tok = self.bump();
        match &tok.kind {
            TokenKind::Star => Ok(Projection::All),
            TokenKind::Ident(name) => {
                let column = Column::from_name(name).ok_or_else(|| SqlError::UnknownColumn {
                    offset: tok.offset,
                    name: name.clone(),
                })?;
                if column != Column::TrackId {
                    return Err(SqlError::Unsupported {
                        offset: tok.offset,
                        construct: format!("projection of column {}", column.name()),
                    });
                }
                if self.peek().kind == TokenKind::Comma {
                    return Err(SqlError::Unsupported {
                        offset: self.peek().offset,
                        construct: "multi-column projection".to_string(),
                    });
                }
                Ok(Projection::TrackId)
            }
            _ => {
                self.pos -= 1;
                Err(self.error_here("expected * or track_id"))
            }
        }
    }

    fn column(&mut self) -> Result<(Column, usize), SqlError> {
        self.check_unsupported()?;
        let tok = self.bump();
        match &tok.kind {
            TokenKind::Ident(name) => {
                // `tracks.tempo` style qualification.
                if name.eq_ignore_ascii_case("tracks") && self.peek().kind == TokenKind::Dot {
                    self.bump();
                    return self.column();
                }
                Column::from_name(name)
                    .map(|c| (c, tok.offset))
                    .ok_or_else(|| SqlError::UnknownColumn {
                        offset: tok.offset,
                        name: name.clone(),
                    })
            }
            _ => {
                self.pos -= 1;
                Err(self.error_here("expected column name"))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, SqlError> {
        let mut lhs = self.and_expr()?;
        while self.eat_word("or") {
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut lhs = self.unary()?;
        while self.eat_word("and") {
            let rhs = self.unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SqlError> {
        self.check_unsupported()?;
        if self.eat_word("not") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if self.peek().kind == TokenKind::LParen {
            self.bump();
            let inner = self.expr()?;
            if self.peek().kind != TokenKind::RParen {
                return Err(self.error_here("expected ')'"));
            }
            self.bump();
            return Ok(inner);
        }
        if self.eat_word("true") {
            return Ok(Expr::True);
        }
        if self.eat_word("false") {
            return Ok(Expr::Not(Box::new(Expr::True)));
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Expr, SqlError> {
        let (column, col_offset) = self.column()?;
        let negated = self.eat_word("not");
        if self.peek().is_word("like") {
            let like_offset = self.bump().offset;
            if column.kind() != ColumnKind::Text {
                return Err(SqlError::TypeMismatch {
                    offset: like_offset,
                    message: format!("LIKE requires a text column, {} is not", column.name()),
                });
            }
            let tok = self.bump();
            let pattern = match tok.kind {
                TokenKind::Str(s) => s.to_lowercase(),
                _ => {
                    return Err(SqlError::TypeMismatch {
                        offset: tok.offset,
                        message: "LIKE pattern must be a string literal".to_string(),
                    })
                }
            };
            let e = Expr::Like { column, pattern };
            return Ok(if negated { Expr::Not(Box::new(e)) } else { e });
        }
        if self.peek().is_word("in") {
            self.bump();
            if self.peek().kind != TokenKind::LParen {
                return Err(self.error_here("expected '(' after IN"));
            }
            self.bump();
            self.check_unsupported()?;
            if self.peek().is_word("select") {
                return Err(SqlError::Unsupported {
                    offset: self.peek().offset,
                    construct: "subquery".to_string(),
                });
            }
            let mut values = Vec::new();
            loop {
                let tok = self.bump();
                values.push(coerce(column, &tok)?);
                match self.bump() {
                    Token {
                        kind: TokenKind::Comma,
                        ..
                    } => continue,
                    Token {
                        kind: TokenKind::RParen,
                        ..
                    } => break,
                    _ => {
                        self.pos -= 1;
                        return Err(self.error_here("expected ',' or ')' in IN list"));
                    }
                }
            }
            let e = Expr::In { column, values };
            return Ok(if negated { Expr::Not(Box::new(e)) } else { e });
        }
        if negated {
            return Err(self.error_here("expected LIKE or IN after NOT"));
        }
        let op = match self.bump().kind {
            TokenKind::Op(op) => op,
            _ => {
                self.pos -= 1;
                return Err(self.error_here(&format!(
                    "expected comparison operator after {}",
                    column.name()
                )));
            }
        };
        let tok = self.bump();
        if let TokenKind::Ident(_) = tok.kind {
            return Err(SqlError::Unsupported {
                offset: tok.offset,
                construct: format!("column-to-column comparison on {} (at byte {col_offset})", column.name()),
            });
        }
        let value = coerce(column, &tok)?;
        Ok(Expr::Compare { column, op, value })
    }
}

/// Type-checks a literal token against the column it is compared with.
fn coerce(column: Column, tok: &Token) -> Result<Literal, SqlError> {
    let mismatch = |what: &str| SqlError::TypeMismatch {
        offset: tok.offset,
        message: format!("{} cannot be compared with {what}", column.name()),
    };
    match (column.kind(), &tok.kind) {
        (ColumnKind::Number, TokenKind::Number(n)) => Ok(Literal::Number(*n)),
        (ColumnKind::Number, TokenKind::Str(s)) => Err(mismatch(&format!("string '{s}'"))),
        (ColumnKind::Text, TokenKind::Str(s)) => Ok(Literal::Text(s.to_lowercase())),
        (ColumnKind::Text, TokenKind::Number(n)) => Err(mismatch(&format!("number {n}"))),
        (ColumnKind::Date, TokenKind::Str(s)) => parse_date_literal(s)
            .map(Literal::Date)
            .ok_or_else(|| mismatch(&format!("non-date string '{s}'"))),
        (ColumnKind::Date, TokenKind::Number(n)) => {
            if n.fract() == 0.0 && (1.0..=9999.0).contains(n) {
                Ok(Literal::Date(
                    NaiveDate::from_ymd_opt(*n as i32, 1, 1).expect("valid year"),
                ))
            } else {
                Err(mismatch(&format!("number {n}")))
            }
        }
        _ => Err(SqlError::Syntax {
            offset: tok.offset,
            message: "expected a literal".to_string(),
        }),
    }
}

/// `YYYY-MM-DD`, or a bare year normalized to January 1st.
pub(crate) fn parse_date_literal(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    if s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()) {
        let year: i32 = s.parse().ok()?;
        return NaiveDate::from_ymd_opt(year, 1, 1);
    }
    None
}
