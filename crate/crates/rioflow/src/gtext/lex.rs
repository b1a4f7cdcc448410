//! Tokenizer for `.gtext` sources. Line-oriented only in spirit: tokens are
//! free-form, `#` starts a comment to end of line, and every token carries a
//! span for diagnostics.

use crate::diag::{Diagnostic, ErrorCode, SourceSpan};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i128),
    Float(f64),
    Str(String),
    LBrace,
    RBrace,
    Lt,
    Gt,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Semi,
    Dot,
    Arrow,
    Minus,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{}`", s),
            Tok::Int(v) => format!("integer {}", v),
            Tok::Float(v) => format!("number {:?}", v),
            Tok::Str(_) => "string".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

pub fn lex(text: &str, file: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    let span = |line: u32, col: u32, len: usize| SourceSpan::new(file, line, col, len as u32);

    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            b' ' | b'\t' | b'\r' => {
                i += 1;
                col += 1;
            }
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'{' => {
                out.push(Token { tok: Tok::LBrace, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b'}' => {
                out.push(Token { tok: Tok::RBrace, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b'<' => {
                out.push(Token { tok: Tok::Lt, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b'>' => {
                out.push(Token { tok: Tok::Gt, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b'[' => {
                out.push(Token { tok: Tok::LBracket, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b']' => {
                out.push(Token { tok: Tok::RBracket, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b',' => {
                out.push(Token { tok: Tok::Comma, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b':' => {
                out.push(Token { tok: Tok::Colon, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b';' => {
                out.push(Token { tok: Tok::Semi, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b'.' => {
                out.push(Token { tok: Tok::Dot, span: span(line, col, 1) });
                i += 1;
                col += 1;
            }
            b'-' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'>' {
                    out.push(Token { tok: Tok::Arrow, span: span(line, col, 2) });
                    i += 2;
                    col += 2;
                } else {
                    out.push(Token { tok: Tok::Minus, span: span(line, col, 1) });
                    i += 1;
                    col += 1;
                }
            }
            b'"' => {
                let start_col = col;
                let start_line = line;
                i += 1;
                col += 1;
                let mut s = String::new();
                let mut closed = false;
                while i < bytes.len() {
                    let b = bytes[i];
                    if b == b'"' {
                        i += 1;
                        col += 1;
                        closed = true;
                        break;
                    }
                    if b == b'\n' {
                        break;
                    }
                    if b == b'\\' && i + 1 < bytes.len() {
                        let esc = bytes[i + 1];
                        let ch = match esc {
                            b'n' => '\n',
                            b't' => '\t',
                            b'"' => '"',
                            b'\\' => '\\',
                            other => {
                                return Err(Diagnostic::new(
                                    ErrorCode::Syntax,
                                    format!("unknown escape `\\{}`", other as char),
                                )
                                .with_span(span(line, col, 2)));
                            }
                        };
                        s.push(ch);
                        i += 2;
                        col += 2;
                    } else {
                        s.push(b as char);
                        i += 1;
                        col += 1;
                    }
                }
                if !closed {
                    return Err(Diagnostic::new(ErrorCode::Syntax, "unterminated string")
                        .with_span(span(start_line, start_col, 1)));
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    span: span(start_line, start_col, (col - start_col) as usize),
                });
            }
            b'0'..=b'9' => {
                let start = i;
                let start_col = col;
                if c == b'0' && i + 1 < bytes.len() && (bytes[i + 1] | 0x20) == b'x' {
                    i += 2;
                    col += 2;
                    let hex_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_hexdigit() {
                        i += 1;
                        col += 1;
                    }
                    if i == hex_start {
                        return Err(Diagnostic::new(ErrorCode::Syntax, "empty hex literal")
                            .with_span(span(line, start_col, 2)));
                    }
                    let text = std::str::from_utf8(&bytes[hex_start..i]).unwrap();
                    let v = i128::from_str_radix(text, 16).map_err(|_| {
                        Diagnostic::new(ErrorCode::Syntax, "hex literal out of range")
                            .with_span(span(line, start_col, i - start))
                    })?;
                    out.push(Token { tok: Tok::Int(v), span: span(line, start_col, i - start) });
                } else {
                    let mut is_float = false;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                        col += 1;
                    }
                    // A dot only continues the number when a digit follows,
                    // so `n1.x` and `2.x` never merge.
                    if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                        is_float = true;
                        i += 1;
                        col += 1;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                            col += 1;
                        }
                    }
                    if i < bytes.len() && (bytes[i] | 0x20) == b'e' {
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        if j < bytes.len() && bytes[j].is_ascii_digit() {
                            is_float = true;
                            col += (j - i) as u32;
                            i = j;
                            while i < bytes.len() && bytes[i].is_ascii_digit() {
                                i += 1;
                                col += 1;
                            }
                        }
                    }
                    let text = std::str::from_utf8(&bytes[start..i]).unwrap();
                    if is_float {
                        let v: f64 = text.parse().map_err(|_| {
                            Diagnostic::new(ErrorCode::Syntax, "bad float literal")
                                .with_span(span(line, start_col, i - start))
                        })?;
                        out.push(Token {
                            tok: Tok::Float(v),
                            span: span(line, start_col, i - start),
                        });
                    } else {
                        let v: i128 = text.parse().map_err(|_| {
                            Diagnostic::new(ErrorCode::Syntax, "integer literal out of range")
                                .with_span(span(line, start_col, i - start))
                        })?;
                        out.push(Token { tok: Tok::Int(v), span: span(line, start_col, i - start) });
                    }
                }
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                let start_col = col;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                    col += 1;
                }
                let text = std::str::from_utf8(&bytes[start..i]).unwrap().to_string();
                out.push(Token { tok: Tok::Ident(text), span: span(line, start_col, i - start) });
            }
            other => {
                return Err(Diagnostic::new(
                    ErrorCode::Syntax,
                    format!("unexpected character `{}` (0x{:02x})", other as char, other),
                )
                .with_span(span(line, col, 1)));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: span(line, col, 0) });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_basic_tokens() {
        let toks = lex("vi Add2 { wire a -> n1.x } # comment", "t").unwrap();
        let kinds: Vec<&Tok> = toks.iter().map(|t| &t.tok).collect();
        assert!(matches!(kinds[0], Tok::Ident(s) if s == "vi"));
        assert!(matches!(kinds[4], Tok::Ident(s) if s == "a"));
        assert!(matches!(kinds[5], Tok::Arrow));
        assert!(matches!(kinds[7], Tok::Dot));
        assert!(matches!(kinds.last().unwrap(), Tok::Eof));
    }

    #[test]
    fn numbers_and_idents_do_not_merge() {
        let toks = lex("1.5 n1.x 2 0x2A 1e3", "t").unwrap();
        assert!(matches!(toks[0].tok, Tok::Float(v) if v == 1.5));
        assert!(matches!(&toks[1].tok, Tok::Ident(s) if s == "n1"));
        assert!(matches!(toks[2].tok, Tok::Dot));
        assert!(matches!(toks[4].tok, Tok::Int(2)));
        assert!(matches!(toks[5].tok, Tok::Int(42)));
        assert!(matches!(toks[6].tok, Tok::Float(v) if v == 1000.0));
    }

    #[test]
    fn spans_are_one_based() {
        let toks = lex("a\n  b", "t").unwrap();
        assert_eq!((toks[0].span.line, toks[0].span.column), (1, 1));
        assert_eq!((toks[1].span.line, toks[1].span.column), (2, 3));
    }

    #[test]
    fn bad_character_is_a_syntax_error() {
        let err = lex("vi @", "t").unwrap_err();
        assert_eq!(err.code, ErrorCode::Syntax);
        assert_eq!(err.span.unwrap().column, 4);
    }
}
