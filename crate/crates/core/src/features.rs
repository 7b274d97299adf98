//! The seven per-pair bias features and the query IDF table.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::bias::Bias;
use crate::corpus::{Corpus, QueryCodePair, Split};
use crate::error::{Error, Result};
use crate::pyast::{self, AstMetrics, TokenKind};

/// Control-flow keywords counted for the reserved-word feature.
pub const RESERVED_WORDS: [&str; 6] = ["if", "for", "while", "with", "try", "except"];

/// Lowercases and splits on every run of non-alphanumeric characters.
/// Stop words are kept.
pub fn tokenize_query(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Splits an identifier on underscores and lower-to-upper camelCase
/// boundaries, lowercasing the parts.
pub fn split_identifier(name: &str) -> Vec<String> {
    let mut parts = Vec::new();
    for chunk in name.split('_') {
        let mut current = String::new();
        let mut prev_lower = false;
        for c in chunk.chars() {
            if c.is_uppercase() && prev_lower && !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            prev_lower = c.is_lowercase() || c.is_ascii_digit();
            current.extend(c.to_lowercase());
        }
        if !current.is_empty() {
            parts.push(current);
        }
    }
    parts
}

/// Distinct lowercased words from the names and keywords of `code`.
pub fn code_word_set(code: &str) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for t in pyast::lexical_tokens(code) {
        match t.kind {
            TokenKind::Name => words.extend(split_identifier(&t.text)),
            TokenKind::Keyword => {
                words.insert(t.text.to_lowercase());
            }
            _ => {}
        }
    }
    words
}

/// Occurrences of the control-flow keywords, ignoring identifiers, strings
/// and comments.
pub fn count_reserved(code: &str) -> usize {
    pyast::lexical_tokens(code)
        .iter()
        .filter(|t| t.kind == TokenKind::Keyword && RESERVED_WORDS.contains(&t.text.as_str()))
        .count()
}

/// Inverse document frequencies over queries, each query one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    doc_count: usize,
    idf: BTreeMap<String, f64>,
}

impl IdfTable {
    /// `idf(w) = ln(doc_count / df(w))`, no smoothing.
    pub fn fit<I, Q>(queries: I) -> Result<Self>
    where
        I: IntoIterator<Item = Q>,
        Q: AsRef<[String]>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut doc_count = 0;
        for q in queries {
            doc_count += 1;
            let distinct: BTreeSet<&String> = q.as_ref().iter().collect();
            for w in distinct {
                *df.entry(w.clone()).or_default() += 1;
            }
        }
        if doc_count == 0 {
            return Err(Error::Empty("IDF needs at least one query"));
        }
        let n = doc_count as f64;
        let idf = df
            .into_iter()
            .map(|(w, d)| {
                let v = if d == doc_count { 0.0 } else { (n / d as f64).ln() };
                (w, v)
            })
            .collect();
        Ok(IdfTable { doc_count, idf })
    }

    /// Fits on the training queries of `corpus`.
    pub fn fit_corpus(corpus: &Corpus) -> Result<Self> {
        IdfTable::fit(corpus.split(Split::Train).map(|p| tokenize_query(&p.query_text)))
    }

    /// Builds a table from precomputed weights.
    pub fn from_weights(doc_count: usize, idf: BTreeMap<String, f64>) -> Result<Self> {
        if doc_count == 0 {
            return Err(Error::Empty("IDF needs at least one query"));
        }
        if idf.values().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "idf weights must be finite and non-negative".into(),
            ));
        }
        Ok(IdfTable { doc_count, idf })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    /// 0 for words never seen in training.
    pub fn idf(&self, word: &str) -> f64 {
        self.idf.get(word).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.idf.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }
}

/// Raw term counts of a token list.
pub(crate) fn term_counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    tf
}

/// Largest `tf(w) * idf(w)` over the distinct words of the query, with raw
/// counts as tf. 0 for an empty query.
pub fn max_tfidf(query_tokens: &[String], table: &IdfTable) -> f64 {
    term_counts(query_tokens)
        .into_iter()
        .map(|(w, tf)| tf as f64 * table.idf(w))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasFeatures {
    pub code_len: usize,
    pub query_len: usize,
    pub ast_nodes: usize,
    pub ast_depth: usize,
    pub reserved_count: usize,
    pub max_tfidf: f64,
    pub overlap: usize,
    pub ast_exact: bool,
}

impl BiasFeatures {
    pub fn value(&self, bias: Bias) -> f64 {
        match bias {
            Bias::CodeLength => self.code_len as f64,
            Bias::QueryLength => self.query_len as f64,
            Bias::AstNodes => self.ast_nodes as f64,
            Bias::AstDepth => self.ast_depth as f64,
            Bias::ReservedWords => self.reserved_count as f64,
            Bias::WordImportance => self.max_tfidf,
            Bias::Overlap => self.overlap as f64,
        }
    }

    /// Whether the value for `bias` is trustworthy (AST features need an
    /// exact parse).
    pub fn usable_for(&self, bias: Bias) -> bool {
        self.ast_exact || !bias.needs_exact_ast()
    }
}

/// Code-side features of one snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeFeatures {
    pub code_len: usize,
    pub ast: AstMetrics,
    pub reserved_count: usize,
    pub words: BTreeSet<String>,
}

impl CodeFeatures {
    pub fn compute(code: &str, code_len_override: Option<usize>) -> Self {
        let tokens = pyast::lexical_tokens(code);
        let mut words = BTreeSet::new();
        let mut reserved_count = 0;
        for t in &tokens {
            match t.kind {
                TokenKind::Name => words.extend(split_identifier(&t.text)),
                TokenKind::Keyword => {
                    if RESERVED_WORDS.contains(&t.text.as_str()) {
                        reserved_count += 1;
                    }
                    words.insert(t.text.to_lowercase());
                }
                _ => {}
            }
        }
        CodeFeatures {
            code_len: code_len_override.unwrap_or(tokens.len()),
            ast: pyast::ast_metrics(code),
            reserved_count,
            words,
        }
    }
}

/// Query-side features of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub query_len: usize,
    pub max_tfidf: f64,
    pub words: BTreeSet<String>,
}

impl QueryFeatures {
    pub fn compute(text: &str, table: &IdfTable, query_len_override: Option<usize>) -> Self {
        let tokens = tokenize_query(text);
        QueryFeatures {
            query_len: query_len_override.unwrap_or(tokens.len()),
            max_tfidf: max_tfidf(&tokens, table),
            words: tokens.into_iter().collect(),
        }
    }
}

/// Distinct query words that also appear among the code words.
pub fn overlap(query: &QueryFeatures, code: &CodeFeatures) -> usize {
    query.words.intersection(&code.words).count()
}

pub fn combine(query: &QueryFeatures, code: &CodeFeatures) -> BiasFeatures {
    BiasFeatures {
        code_len: code.code_len,
        query_len: query.query_len,
        ast_nodes: code.ast.node_count,
        ast_depth: code.ast.depth,
        reserved_count: code.reserved_count,
        max_tfidf: query.max_tfidf,
        overlap: overlap(query, code),
        ast_exact: code.ast.exact,
    }
}

/// All seven features of a pair, honoring its length overrides.
pub fn feature_vector(pair: &QueryCodePair, table: &IdfTable) -> BiasFeatures {
    let code = CodeFeatures::compute(&pair.code_text, pair.code_len);
    let query = QueryFeatures::compute(&pair.query_text, table, pair.query_len);
    combine(&query, &code)
}

/// Precomputed features for every code and query of a corpus.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    codes: HashMap<String, CodeFeatures>,
    queries: HashMap<String, QueryFeatures>,
}

impl FeatureStore {
    /// With `strict`, any snippet outside the parser's subset is an error
    /// instead of a flagged estimate.
    pub fn build(corpus: &Corpus, table: &IdfTable, strict: bool) -> Result<Self> {
        let mut store = FeatureStore {
            codes: HashMap::new(),
            queries: HashMap::new(),
        };
        store.add_corpus(corpus, table, strict)?;
        Ok(store)
    }

    /// Adds the codes and queries of another corpus. Codes already present
    /// are kept; queries with a known pair id are replaced.
    pub fn add_corpus(&mut self, corpus: &Corpus, table: &IdfTable, strict: bool) -> Result<()> {
        for (code_id, text) in corpus.codes() {
            if self.codes.contains_key(code_id) {
                continue;
            }
            let f = CodeFeatures::compute(text, corpus.code_len_override(code_id));
            if strict && !f.ast.exact {
                let err = pyast::ast_metrics_strict(text).unwrap_err();
                return Err(Error::InvalidArgument(format!(
                    "code {code_id} is outside the parser subset: {err}"
                )));
            }
            self.codes.insert(code_id.to_string(), f);
        }
        for p in corpus.pairs() {
            self.queries.insert(
                p.pair_id.clone(),
                QueryFeatures::compute(&p.query_text, table, p.query_len),
            );
        }
        Ok(())
    }

    pub fn code(&self, code_id: &str) -> Option<&CodeFeatures> {
        self.codes.get(code_id)
    }

    pub fn query(&self, pair_id: &str) -> Option<&QueryFeatures> {
        self.queries.get(pair_id)
    }

    /// Features of `pair_id` against an arbitrary candidate code. `None`
    /// when either side is unknown (e.g. a candidate without text).
    pub fn features(&self, pair_id: &str, code_id: &str) -> Option<BiasFeatures> {
        Some(combine(self.query(pair_id)?, self.code(code_id)?))
    }

    /// Features of every pair in `split` against its own ground truth.
    pub fn split_features(&self, corpus: &Corpus, split: Split) -> BTreeMap<String, BiasFeatures> {
        corpus
            .split(split)
            .filter_map(|p| Some((p.pair_id.clone(), self.features(&p.pair_id, &p.code_id)?)))
            .collect()
    }
}
