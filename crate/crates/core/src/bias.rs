use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The seven audited bias dimensions, numbered 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Bias {
    CodeLength,
    QueryLength,
    AstNodes,
    AstDepth,
    ReservedWords,
    WordImportance,
    Overlap,
}

/// Which side of a query–code pair a bias feature is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSide {
    Code,
    Query,
    Pair,
}

impl Bias {
    pub const ALL: [Bias; 7] = [
        Bias::CodeLength,
        Bias::QueryLength,
        Bias::AstNodes,
        Bias::AstDepth,
        Bias::ReservedWords,
        Bias::WordImportance,
        Bias::Overlap,
    ];

    /// Reranker application order used when none is given.
    pub const DEFAULT_ORDER: [Bias; 7] = [
        Bias::Overlap,
        Bias::WordImportance,
        Bias::AstNodes,
        Bias::AstDepth,
        Bias::QueryLength,
        Bias::ReservedWords,
        Bias::CodeLength,
    ];

    pub fn id(self) -> u8 {
        match self {
            Bias::CodeLength => 1,
            Bias::QueryLength => 2,
            Bias::AstNodes => 3,
            Bias::AstDepth => 4,
            Bias::ReservedWords => 5,
            Bias::WordImportance => 6,
            Bias::Overlap => 7,
        }
    }

    pub fn from_id(id: u8) -> Option<Bias> {
        Bias::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    /// Interval width used when grouping feature values.
    pub fn default_width(self) -> f64 {
        match self {
            Bias::CodeLength | Bias::AstNodes => 4.0,
            Bias::WordImportance => 0.15,
            _ => 1.0,
        }
    }

    pub fn side(self) -> FeatureSide {
        match self {
            Bias::CodeLength | Bias::AstNodes | Bias::AstDepth | Bias::ReservedWords => FeatureSide::Code,
            Bias::QueryLength | Bias::WordImportance => FeatureSide::Query,
            Bias::Overlap => FeatureSide::Pair,
        }
    }

    /// Whether feature values depend on a successful parse.
    pub fn needs_exact_ast(self) -> bool {
        matches!(self, Bias::AstNodes | Bias::AstDepth)
    }

    pub fn name(self) -> &'static str {
        match self {
            Bias::CodeLength => "code_len",
            Bias::QueryLength => "query_len",
            Bias::AstNodes => "ast_nodes",
            Bias::AstDepth => "ast_depth",
            Bias::ReservedWords => "reserved",
            Bias::WordImportance => "max_tfidf",
            Bias::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Bias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl TryFrom<u8> for Bias {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self, Error> {
        Bias::from_id(id).ok_or_else(|| Error::InvalidArgument(format!("bias id {id} not in 1..=7")))
    }
}

impl From<Bias> for u8 {
    fn from(b: Bias) -> u8 {
        b.id()
    }
}

impl FromStr for Bias {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let id: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bias id {s:?} is not an integer")))?;
        Bias::try_from(id)
    }
}

/// Parses a comma-separated list of bias ids such as `"7,6,3"`.
pub fn parse_bias_list(s: &str) -> Result<Vec<Bias>, Error> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}
