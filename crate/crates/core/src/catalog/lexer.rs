use super::query::{CmpOp, SqlError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenKind {
    Ident(String),
    Number(f64),
    Str(String),
    Star,
    Comma,
    LParen,
    RParen,
    Semicolon,
    Dot,
    Op(CmpOp),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub offset: usize,
}

impl Token {
    /// True when the token is the identifier `word`, ignoring case.
    pub fn is_word(&self, word: &str) -> bool {
        matches!(&self.kind, TokenKind::Ident(s) if s.eq_ignore_ascii_case(word))
    }
}

pub(crate) fn tokenize(input: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = input.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let kind = match c {
            b'*' => {
                i += 1;
                TokenKind::Star
            }
            b',' => {
                i += 1;
                TokenKind::Comma
            }
            b'(' => {
                i += 1;
                TokenKind::LParen
            }
            b')' => {
                i += 1;
                TokenKind::RParen
            }
            b';' => {
                i += 1;
                TokenKind::Semicolon
            }
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                i += 1;
                TokenKind::Dot
            }
            b'=' => {
                i += if bytes.get(i + 1) == Some(&b'=') { 2 } else { 1 };
                TokenKind::Op(CmpOp::Eq)
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Op(CmpOp::Ne)
                } else {
                    return Err(syntax(start, "expected '=' after '!'"));
                }
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 2;
                    TokenKind::Op(CmpOp::Le)
                }
                Some(b'>') => {
                    i += 2;
                    TokenKind::Op(CmpOp::Ne)
                }
                _ => {
                    i += 1;
                    TokenKind::Op(CmpOp::Lt)
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 2;
                    TokenKind::Op(CmpOp::Ge)
                } else {
                    i += 1;
                    TokenKind::Op(CmpOp::Gt)
                }
            }
            b'\'' | b'"' => {
                let (text, next) = string_literal(input, i, c)?;
                i = next;
                TokenKind::Str(text)
            }
            b'-' | b'.' | b'0'..=b'9' => {
                let mut j = i;
                if bytes[j] == b'-' {
                    j += 1;
                }
                let digits_start = j;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j == digits_start {
                    return Err(syntax(start, "expected a number"));
                }
                let text = &input[i..j];
                let value: f64 = text
                    .parse()
                    .map_err(|_| syntax(start, &format!("invalid number {text:?}")))?;
                i = j;
                TokenKind::Number(value)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let word = input[i..j].to_string();
                i = j;
                TokenKind::Ident(word)
            }
            _ => {
                let ch = input[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, &format!("unexpected character {ch:?}")));
            }
        };
        tokens.push(Token {
            kind,
            offset: start,
        });
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        offset: input.len(),
    });
    Ok(tokens)
}

/// Quoted literal starting at `start`; a doubled quote escapes itself.
fn string_literal(input: &str, start: usize, quote: u8) -> Result<(String, usize), SqlError> {
    let bytes = input.as_bytes();
    let mut out = String::new();
    let mut i = start + 1;
    let mut seg = i;
    while i < bytes.len() {
        if bytes[i] == quote {
            out.push_str(&input[seg..i]);
            if bytes.get(i + 1) == Some(&quote) {
                out.push(quote as char);
                i += 2;
                seg = i;
                continue;
            }
            return Ok((out, i + 1));
        }
        i += 1;
    }
    Err(syntax(start, "unterminated string literal"))
}

fn syntax(offset: usize, message: &str) -> SqlError {
    SqlError::Syntax {
        offset,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_operators_and_literals() {
        let toks = tokenize("a<>'it''s' >= -3.5 <= != = ==").unwrap();
        let kinds: Vec<_> = toks.into_iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            vec![
                TokenKind::Ident("a".into()),
                TokenKind::Op(CmpOp::Ne),
                TokenKind::Str("it's".into()),
                TokenKind::Op(CmpOp::Ge),
                TokenKind::Number(-3.5),
                TokenKind::Op(CmpOp::Le),
                TokenKind::Op(CmpOp::Ne),
                TokenKind::Op(CmpOp::Eq),
                TokenKind::Op(CmpOp::Eq),
                TokenKind::Eof,
            ]
        );
    }

    #[test]
    fn reports_offsets() {
        let err = tokenize("SELECT # FROM").unwrap_err();
        assert_eq!(err.offset(), 7);
        let err = tokenize("x = 'open").unwrap_err();
        assert_eq!(err.offset(), 4);
    }
}
