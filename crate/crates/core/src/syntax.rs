//! Tokenizer shared by the grammar, lexicon, interface-rule and feature
//! structure readers.

use std::fmt;

use serde::{Deserialize, Serialize};

/// 1-based source position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Quoted(String),
    /// `#name` or `#1`
    Hash(String),
    /// `%NAME`
    Directive(String),
    LBracket,
    RBracket,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Eq,
    Bar,
    Dot,
    Arrow,
    Colon,
    Semi,
    Caret,
    Bang,
    Less,
    Tilde,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Quoted(s) => write!(f, "'{s}'"),
            Tok::Hash(s) => write!(f, "`#{s}`"),
            Tok::Directive(s) => write!(f, "`%{s}`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Caret => f.write_str("`^`"),
            Tok::Bang => f.write_str("`!`"),
            Tok::Less => f.write_str("`<`"),
            Tok::Tilde => f.write_str("`~`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

/// A positioned syntax error.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        SyntaxError { pos, message: message.into() }
    }
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.pos, self.message)
    }
}

impl std::error::Error for SyntaxError {}

pub fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Split `src` into tokens. `//` starts a comment running to end of line.
/// The first line number is `first_line`.
pub fn tokenize(src: &str, first_line: usize) -> Result<Vec<Token>, SyntaxError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let mut line = first_line;
    let mut col = 1;

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }

    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' {
            bump!();
            if chars.peek() == Some(&'/') {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump!();
                }
                continue;
            }
            return Err(SyntaxError::new(pos, "unexpected `/` (comments start with `//`)"));
        }
        if is_ident_char(c) {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if !is_ident_char(c) {
                    break;
                }
                s.push(c);
                bump!();
            }
            out.push(Token { tok: Tok::Ident(s), pos });
            continue;
        }
        if c == '\'' || c == '"' {
            let quote = c;
            bump!();
            let mut s = String::new();
            loop {
                match bump!() {
                    Some(c) if c == quote => break,
                    Some('\n') | None => {
                        return Err(SyntaxError::new(pos, "unterminated quoted string"));
                    }
                    Some(c) => s.push(c),
                }
            }
            out.push(Token { tok: Tok::Quoted(s), pos });
            continue;
        }
        if c == '#' || c == '%' {
            bump!();
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if !is_ident_char(c) {
                    break;
                }
                s.push(c);
                bump!();
            }
            if s.is_empty() {
                return Err(SyntaxError::new(pos, format!("`{c}` must be followed by a name")));
            }
            let tok = if c == '#' { Tok::Hash(s) } else { Tok::Directive(s) };
            out.push(Token { tok, pos });
            continue;
        }
        bump!();
        let tok = match c {
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            '=' => Tok::Eq,
            '|' => Tok::Bar,
            '.' => Tok::Dot,
            ':' => Tok::Colon,
            ';' => Tok::Semi,
            '^' => Tok::Caret,
            '!' => Tok::Bang,
            '<' => Tok::Less,
            '~' => Tok::Tilde,
            '-' if chars.peek() == Some(&'>') => {
                bump!();
                Tok::Arrow
            }
            other => {
                return Err(SyntaxError::new(pos, format!("unexpected character `{other}`")));
            }
        };
        out.push(Token { tok, pos });
    }
    Ok(out)
}

/// Recursive-descent helper over a token slice.
pub struct Cursor<'a> {
    toks: &'a [Token],
    at: usize,
    end: Pos,
}

impl<'a> Iterator for Cursor<'a> {
    type Item = &'a Token;

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.at);
        if t.is_some() {
            self.at += 1;
        }
        t
    }
}

impl<'a> Cursor<'a> {
    pub fn new(toks: &'a [Token], end: Pos) -> Self {
        Cursor { toks, at: 0, end }
    }

    pub fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.at).map(|t| &t.tok)
    }

    pub fn peek_at(&self, n: usize) -> Option<&'a Tok> {
        self.toks.get(self.at + n).map(|t| &t.tok)
    }

    pub fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|t| t.pos).unwrap_or(self.end)
    }

    pub fn is_done(&self) -> bool {
        self.at >= self.toks.len()
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok) -> Result<(), SyntaxError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("{tok}")))
        }
    }

    pub fn ident(&mut self, what: &str) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                self.at += 1;
                Ok(s.clone())
            }
            _ => Err(self.unexpected(what)),
        }
    }

    pub fn unexpected(&self, wanted: &str) -> SyntaxError {
        match self.toks.get(self.at) {
            Some(t) => SyntaxError::new(t.pos, format!("expected {wanted}, found {}", t.tok)),
            None => SyntaxError::new(self.end, format!("expected {wanted}, found end of input")),
        }
    }
}

/// Position just past the end of `src`, for end-of-input diagnostics.
pub fn end_pos(src: &str, first_line: usize) -> Pos {
    let mut line = first_line;
    let mut col = 1;
    for c in src.chars() {
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    Pos { line, col }
}

pub fn starts_upper(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_uppercase())
}

/// Atoms: identifiers starting with a lowercase letter or a digit.
pub fn is_atom_ident(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_lowercase() || c.is_ascii_digit()) && s.chars().all(is_ident_char)
}
