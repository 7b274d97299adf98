//! Python-subset lexing and parsing, used for AST size and depth features.
//!
//! Node counts follow the conventions documented in [`parser`]; they are
//! internally consistent but are not CPython `ast` counts.

pub mod parser;
pub mod token;

pub use parser::{parse, AstNode, NodeKind, ParseError};
pub use token::{tokenize, PyToken, TokenKind, TokenizeError};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AstMetrics {
    pub node_count: usize,
    pub depth: usize,
    /// False when the values come from the fallback estimator.
    pub exact: bool,
}

/// Tokenizes and parses `code`.
pub fn parse_code(code: &str) -> Result<AstNode, SyntaxError> {
    let tokens = tokenize(code)?;
    Ok(parse(&tokens)?)
}

/// AST node count and depth of `code`.
///
/// Code outside the supported subset gets an estimate from a best-effort lex:
/// depth is one more than the deepest indentation-plus-bracket nesting seen
/// at any token, node count is the number of lexical tokens.
pub fn ast_metrics(code: &str) -> AstMetrics {
    match parse_code(code) {
        Ok(ast) => AstMetrics {
            node_count: ast.node_count(),
            depth: ast.depth(),
            exact: true,
        },
        Err(_) => fallback_metrics(code),
    }
}

/// Like [`ast_metrics`] but reports syntax errors instead of estimating.
pub fn ast_metrics_strict(code: &str) -> Result<AstMetrics, SyntaxError> {
    let ast = parse_code(code)?;
    Ok(AstMetrics {
        node_count: ast.node_count(),
        depth: ast.depth(),
        exact: true,
    })
}

fn fallback_metrics(code: &str) -> AstMetrics {
    let (tokens, _) = token::tokenize_lenient(code);
    let lexical: Vec<_> = tokens.iter().filter(|t| t.token.kind.is_lexical()).collect();
    let nesting = lexical
        .iter()
        .map(|t| t.indent_level + t.bracket_depth)
        .max()
        .unwrap_or(0);
    let node_count = lexical.len().max(1);
    AstMetrics {
        node_count,
        depth: (1 + nesting).min(node_count),
        exact: false,
    }
}

/// Lexical tokens of `code` (no layout markers), lexing leniently so that
/// malformed lines are skipped rather than failing.
pub fn lexical_tokens(code: &str) -> Vec<PyToken> {
    token::tokenize_lenient(code)
        .0
        .into_iter()
        .map(|p| p.token)
        .filter(|t| t.kind.is_lexical())
        .collect()
}
