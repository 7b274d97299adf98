//! CPython-style lexer for the supported Python subset.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Name,
    Keyword,
    Number,
    String,
    Op,
    Newline,
    Indent,
    Dedent,
    EndMarker,
}

impl TokenKind {
    /// Tokens that carry source text, as opposed to layout markers.
    pub fn is_lexical(self) -> bool {
        matches!(
            self,
            TokenKind::Name | TokenKind::Keyword | TokenKind::Number | TokenKind::String | TokenKind::Op
        )
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Name => "NAME",
            TokenKind::Keyword => "KEYWORD",
            TokenKind::Number => "NUMBER",
            TokenKind::String => "STRING",
            TokenKind::Op => "OP",
            TokenKind::Newline => "NEWLINE",
            TokenKind::Indent => "INDENT",
            TokenKind::Dedent => "DEDENT",
            TokenKind::EndMarker => "ENDMARKER",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyToken {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based.
    pub line: usize,
    /// 0-based, in characters.
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tokenize error at line {line}: {message}")]
pub struct TokenizeError {
    pub line: usize,
    pub message: String,
}

pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def",
    "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is",
    "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "!=", "%=", "&=", "**", "*=", "+=", "-=", "->", "//", "/=", ":=",
    "<<", "<=", "==", ">=", ">>", "@=", "^=", "|=", "%", "&", "(", ")", "*", "+", ",", "-", ".", "/", ":",
    ";", "<", "=", ">", "@", "[", "]", "^", "{", "|", "}", "~",
];

const TAB_SIZE: usize = 8;

/// Tokenizes `code`, failing on the first lexical error.
pub fn tokenize(code: &str) -> Result<Vec<PyToken>, TokenizeError> {
    let mut lx = Lexer::new(code, false);
    lx.run()?;
    Ok(lx.tokens)
}

/// A token together with the layout context it appeared in.
#[derive(Debug, Clone)]
pub(crate) struct Positioned {
    pub token: PyToken,
    pub indent_level: usize,
    pub bracket_depth: usize,
}

/// Best-effort lexing: a line that fails to lex is dropped and lexing
/// resumes on the next line. Never fails.
pub(crate) fn tokenize_lenient(code: &str) -> (Vec<Positioned>, usize) {
    let mut lx = Lexer::new(code, true);
    lx.run().expect("lenient lexing does not fail");
    let out = lx
        .tokens
        .into_iter()
        .zip(lx.context)
        .map(|(token, (indent_level, bracket_depth))| Positioned {
            token,
            indent_level,
            bracket_depth,
        })
        .collect();
    (out, lx.errors)
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
    indents: Vec<usize>,
    brackets: Vec<char>,
    at_line_start: bool,
    tokens: Vec<PyToken>,
    /// (indent level, bracket depth) per token, parallel to `tokens`.
    context: Vec<(usize, usize)>,
    lenient: bool,
    errors: usize,
}

impl Lexer {
    fn new(code: &str, lenient: bool) -> Self {
        let normalized = code.replace("\r\n", "\n").replace('\r', "\n");
        Lexer {
            chars: normalized.chars().collect(),
            pos: 0,
            line: 1,
            col: 0,
            indents: vec![0],
            brackets: Vec::new(),
            at_line_start: true,
            tokens: Vec::new(),
            context: Vec::new(),
            lenient,
            errors: 0,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 0;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn push(&mut self, kind: TokenKind, text: String, line: usize, col: usize) {
        self.tokens.push(PyToken {
            kind,
            text,
            line,
            col,
        });
        self.context.push((self.indents.len() - 1, self.brackets.len()));
    }

    fn error(&self, line: usize, message: impl Into<String>) -> TokenizeError {
        TokenizeError {
            line,
            message: message.into(),
        }
    }

    fn run(&mut self) -> Result<(), TokenizeError> {
        loop {
            match self.step() {
                Ok(true) => continue,
                Ok(false) => break,
                Err(e) if self.lenient => self.recover(e.line),
                Err(e) => return Err(e),
            }
        }
        self.finish()
    }

    /// Drops every token that started on the failing line, then skips the
    /// rest of the current physical line.
    fn recover(&mut self, line: usize) {
        self.errors += 1;
        let keep = self
            .tokens
            .iter()
            .position(|t| t.line >= line)
            .unwrap_or(self.tokens.len());
        self.tokens.truncate(keep);
        self.context.truncate(keep);
        while let Some(c) = self.bump() {
            if c == '\n' {
                break;
            }
        }
        self.brackets.clear();
        self.at_line_start = true;
    }

    fn last_is_layout(&self) -> bool {
        self.tokens
            .last()
            .is_none_or(|t| matches!(t.kind, TokenKind::Newline | TokenKind::Indent | TokenKind::Dedent))
    }

    fn finish(&mut self) -> Result<(), TokenizeError> {
        if !self.brackets.is_empty() {
            if self.lenient {
                self.errors += 1;
                self.brackets.clear();
            } else {
                return Err(self.error(self.line, "unterminated bracket at end of input"));
            }
        }
        if !self.last_is_layout() {
            self.push(TokenKind::Newline, String::new(), self.line, self.col);
            self.line += 1;
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, String::new(), self.line, 0);
        }
        self.push(TokenKind::EndMarker, String::new(), self.line, 0);
        Ok(())
    }

    /// Handles indentation at the start of a logical line. Returns false when
    /// the line is blank or a comment and was consumed entirely.
    fn line_start(&mut self) -> Result<bool, TokenizeError> {
        let mut width = 0;
        let start = self.pos;
        while let Some(c) = self.peek() {
            match c {
                ' ' => width += 1,
                '\t' => width = (width / TAB_SIZE + 1) * TAB_SIZE,
                '\x0c' => width = 0,
                _ => break,
            }
            self.bump();
        }
        match self.peek() {
            None => return Ok(false),
            Some('\n') => {
                self.bump();
                return Ok(false);
            }
            Some('#') => {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.bump();
                }
                self.bump();
                return Ok(false);
            }
            _ => {}
        }
        self.at_line_start = false;
        let top = *self.indents.last().unwrap();
        if width > top {
            self.indents.push(width);
            let text: String = self.chars[start..self.pos].iter().collect();
            self.push(TokenKind::Indent, text, self.line, 0);
        } else if width < top {
            while *self.indents.last().unwrap() > width {
                self.indents.pop();
                self.push(TokenKind::Dedent, String::new(), self.line, self.col);
            }
            if *self.indents.last().unwrap() != width {
                let line = self.line;
                if self.lenient {
                    self.indents.push(width);
                }
                return Err(self.error(line, "unindent does not match any outer indentation level"));
            }
        }
        Ok(true)
    }

    /// Lexes one token or layout event. Returns false at end of input.
    fn step(&mut self) -> Result<bool, TokenizeError> {
        if self.at_line_start && self.brackets.is_empty() {
            if self.peek().is_none() {
                return Ok(false);
            }
            if !self.line_start()? {
                return Ok(true);
            }
        }
        let Some(c) = self.peek() else {
            return Ok(false);
        };
        let (line, col) = (self.line, self.col);
        match c {
            ' ' | '\t' | '\x0c' => {
                self.bump();
            }
            '#' => {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.bump();
                }
            }
            '\n' => {
                self.bump();
                if self.brackets.is_empty() {
                    if !self.last_is_layout() {
                        self.push(TokenKind::Newline, "\n".into(), line, col);
                    }
                    self.at_line_start = true;
                }
            }
            '\\' => {
                if self.peek_at(1) == Some('\n') {
                    self.bump();
                    self.bump();
                } else {
                    return Err(self.error(line, "unexpected character after line continuation"));
                }
            }
            '"' | '\'' => self.string(String::new(), line, col)?,
            c if c.is_ascii_digit() => self.number(line, col),
            '.' if self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) => self.number(line, col),
            c if c == '_' || c.is_alphabetic() => {
                let prefix_len = self.string_prefix_len();
                if prefix_len > 0 {
                    let prefix: String = self.chars[self.pos..self.pos + prefix_len].iter().collect();
                    for _ in 0..prefix_len {
                        self.bump();
                    }
                    self.string(prefix, line, col)?;
                } else {
                    self.name(line, col);
                }
            }
            _ => self.operator(line, col)?,
        }
        Ok(true)
    }

    /// Length of a string prefix (`r`, `b`, `rb`, `f`, ...) directly followed
    /// by a quote, or 0.
    fn string_prefix_len(&self) -> usize {
        for len in [1, 2] {
            let Some(q) = self.peek_at(len) else { continue };
            if q != '"' && q != '\'' {
                continue;
            }
            let p: String = self.chars[self.pos..self.pos + len]
                .iter()
                .map(|c| c.to_ascii_lowercase())
                .collect();
            if matches!(p.as_str(), "r" | "b" | "u" | "f" | "br" | "rb" | "fr" | "rf") {
                return len;
            }
        }
        0
    }

    fn string(&mut self, mut text: String, line: usize, col: usize) -> Result<(), TokenizeError> {
        let quote = self.bump().unwrap();
        text.push(quote);
        let triple = self.peek() == Some(quote) && self.peek_at(1) == Some(quote);
        if triple {
            text.push(self.bump().unwrap());
            text.push(self.bump().unwrap());
        }
        loop {
            let Some(c) = self.bump() else {
                return Err(self.error(line, "unterminated string literal"));
            };
            text.push(c);
            match c {
                '\\' => {
                    if let Some(next) = self.bump() {
                        text.push(next);
                    }
                }
                '\n' if !triple => {
                    return Err(self.error(line, "unterminated string literal"));
                }
                c if c == quote => {
                    if !triple {
                        break;
                    }
                    if self.peek() == Some(quote) && self.peek_at(1) == Some(quote) {
                        text.push(self.bump().unwrap());
                        text.push(self.bump().unwrap());
                        break;
                    }
                }
                _ => {}
            }
        }
        self.push(TokenKind::String, text, line, col);
        Ok(())
    }

    fn number(&mut self, line: usize, col: usize) {
        let radix_prefixed = self.peek() == Some('0')
            && self
                .peek_at(1)
                .is_some_and(|c| matches!(c, 'x' | 'X' | 'o' | 'O' | 'b' | 'B'));
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                text.push(c);
                self.bump();
                if !radix_prefixed && matches!(c, 'e' | 'E') && matches!(self.peek(), Some('+' | '-')) {
                    text.push(self.bump().unwrap());
                }
            } else {
                break;
            }
        }
        self.push(TokenKind::Number, text, line, col);
    }

    fn name(&mut self, line: usize, col: usize) {
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if c == '_' || c.is_alphanumeric() {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let kind = if is_keyword(&text) {
            TokenKind::Keyword
        } else {
            TokenKind::Name
        };
        self.push(kind, text, line, col);
    }

    fn operator(&mut self, line: usize, col: usize) -> Result<(), TokenizeError> {
        let op = OPERATORS
            .iter()
            .find(|op| op.chars().enumerate().all(|(i, c)| self.peek_at(i) == Some(c)))
            .ok_or_else(|| self.error(line, format!("unexpected character {:?}", self.peek().unwrap())))?;
        // Brackets are reported at the depth outside them.
        let mut opened = None;
        match *op {
            "(" | "[" | "{" => opened = op.chars().next(),
            ")" | "]" | "}" => {
                let open = match *op {
                    ")" => '(',
                    "]" => '[',
                    _ => '{',
                };
                if self.brackets.last() != Some(&open) {
                    return Err(self.error(line, format!("unmatched {op:?}")));
                }
                self.brackets.pop();
            }
            _ => {}
        }
        for _ in 0..op.chars().count() {
            self.bump();
        }
        self.push(TokenKind::Op, (*op).to_string(), line, col);
        self.brackets.extend(opened);
        Ok(())
    }
}
