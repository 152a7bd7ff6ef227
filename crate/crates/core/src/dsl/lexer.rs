use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    /// Identifier, possibly followed by primes (`f''`).
    Ident(String),
    Num(String),
    /// `d/dNAME`.
    Deriv(String),
    Punct(&'static str),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Deriv(s) => format!("`d/d{s}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub start: usize,
    pub end: usize,
}

const PUNCT: &[&str] = &[
    "->", "{", "}", "[", "]", "(", ")", ",", "=", "+", "-", "*", "/", "^", ":", ">", "<", ";",
];

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub(crate) fn lex(src: &str) -> (Vec<Token>, Vec<ParseError>) {
    let mut toks = Vec::new();
    let mut errors = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    let take_ident = |mut j: usize| {
        while j < bytes.len() && ident_char(bytes[j] as char) {
            j += 1;
        }
        j
    };
    while i < src.len() {
        let c = src[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == '#' {
            while i < src.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if ident_start(c) {
            let mut end = take_ident(i);
            let word = &src[start..end];
            let deriv = word == "d"
                && src[end..].starts_with("/d")
                && src[end + 2..].chars().next().is_some_and(ident_start);
            if deriv {
                let name_start = end + 2;
                end = take_ident(name_start);
                toks.push(Token {
                    tok: Tok::Deriv(src[name_start..end].to_string()),
                    start,
                    end,
                });
            } else {
                while end < src.len() && bytes[end] == b'\'' {
                    end += 1;
                }
                toks.push(Token {
                    tok: Tok::Ident(src[start..end].to_string()),
                    start,
                    end,
                });
            }
            i = end;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && src[i + 1..].starts_with(|d: char| d.is_ascii_digit())) {
            let mut end = i;
            while end < src.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end < src.len() && bytes[end] == b'.' {
                end += 1;
                while end < src.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            toks.push(Token {
                tok: Tok::Num(src[start..end].to_string()),
                start,
                end,
            });
            i = end;
            continue;
        }
        if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            toks.push(Token {
                tok: Tok::Punct(p),
                start,
                end: i + p.len(),
            });
            i += p.len();
            continue;
        }
        errors.push(ParseError::at(src, start, start + c.len_utf8(), format!("unexpected character `{c}`"), vec![]));
        i += c.len_utf8();
    }
    toks.push(Token {
        tok: Tok::Eof,
        start: src.len(),
        end: src.len(),
    });
    (toks, errors)
}
