//! Query–code datasets, ranking runs and embedding tables.
//!
//! File formats:
//!
//! * dataset JSONL, one object per line:
//!   `{"pair_id", "query", "code", "split": "train"|"test", "code_id"?, "code_len"?, "query_len"?}`
//! * run TSV: `pair_id<TAB>code_id<TAB>score`, no header
//! * embedding TSV: `id<TAB>v1<TAB>...<TAB>vd`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content digest used as code identity.
///
/// Line endings are normalized to LF and trailing whitespace is stripped from
/// every line before hashing, so the same snippet saved on different
/// platforms gets one id.
pub fn canonical_code_id(code_text: &str) -> String {
    let normalized = code_text.replace("\r\n", "\n").replace('\r', "\n");
    let mut hasher = Sha256::new();
    for (i, line) in normalized.split('\n').enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(line.trim_end().as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "split must be train or test, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCodePair {
    pub pair_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    #[serde(rename = "code")]
    pub code_text: String,
    pub split: Split,
    pub code_id: String,
    /// Externally supplied code length (e.g. BPE token count).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_len: Option<usize>,
    /// Externally supplied query length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_len: Option<usize>,
}

impl QueryCodePair {
    /// Builds a pair whose `code_id` is the canonical digest of `code_text`.
    pub fn new(
        pair_id: impl Into<String>,
        query_text: impl Into<String>,
        code_text: impl Into<String>,
        split: Split,
    ) -> Self {
        let code_text = code_text.into();
        QueryCodePair {
            pair_id: pair_id.into(),
            query_text: query_text.into(),
            code_id: canonical_code_id(&code_text),
            code_text,
            split,
            code_len: None,
            query_len: None,
        }
    }
}

/// Raw dataset line; `split` and `code_id` are optional at this stage so the
/// loader can report what is missing.
#[derive(Deserialize)]
struct DatasetRecord {
    pair_id: String,
    query: String,
    code: String,
    split: Option<Split>,
    code_id: Option<String>,
    code_len: Option<usize>,
    query_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pairs: Vec<QueryCodePair>,
    by_id: HashMap<String, usize>,
    /// code_id -> index of the first pair carrying that code.
    by_code: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(pairs: Vec<QueryCodePair>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(pairs.len());
        let mut by_code = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if p.query_text.trim().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "empty query for pair {} (record {})",
                    p.pair_id,
                    i + 1
                )));
            }
            if by_id.insert(p.pair_id.clone(), i).is_some() {
                return Err(Error::DuplicatePair {
                    pair_id: p.pair_id.clone(),
                    line: i + 1,
                });
            }
            by_code.entry(p.code_id.clone()).or_insert(i);
        }
        Ok(Corpus {
            pairs,
            by_id,
            by_code,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DatasetRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, lineno, format!("malformed record: {e}")))?;
            let split = rec
                .split
                .ok_or_else(|| Error::parse(path, lineno, "missing split"))?;
            if rec.query.trim().is_empty() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("empty query for pair {}", rec.pair_id),
                ));
            }
            if seen.insert(rec.pair_id.clone(), lineno).is_some() {
                return Err(Error::DuplicatePair {
                    pair_id: rec.pair_id,
                    line: lineno,
                });
            }
            let code_id = rec.code_id.unwrap_or_else(|| canonical_code_id(&rec.code));
            pairs.push(QueryCodePair {
                pair_id: rec.pair_id,
                query_text: rec.query,
                code_text: rec.code,
                split,
                code_id,
                code_len: rec.code_len,
                query_len: rec.query_len,
            });
        }
        Corpus::new(pairs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn pairs(&self) -> &[QueryCodePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, pair_id: &str) -> Option<&QueryCodePair> {
        self.by_id.get(pair_id).map(|&i| &self.pairs[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QueryCodePair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    /// Distinct code ids of the pairs in `split`.
    pub fn pool(&self, split: Split) -> BTreeSet<&str> {
        self.split(split).map(|p| p.code_id.as_str()).collect()
    }

    /// All distinct code ids with their text, in code_id order.
    pub fn codes(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_code
            .iter()
            .map(|(id, &i)| (id.as_str(), self.pairs[i].code_text.as_str()))
    }

    pub fn code_text(&self, code_id: &str) -> Option<&str> {
        self.by_code
            .get(code_id)
            .map(|&i| self.pairs[i].code_text.as_str())
    }

    /// The first explicit `code_len` override recorded for `code_id`.
    pub fn code_len_override(&self, code_id: &str) -> Option<usize> {
        self.by_code.get(code_id).and_then(|&i| self.pairs[i].code_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub code_id: String,
    pub score: f64,
}

impl Candidate {
    pub fn new(code_id: impl Into<String>, score: f64) -> Self {
        Candidate {
            code_id: code_id.into(),
            score,
        }
    }
}

/// Descending score, ascending code_id. The one ordering used for loading,
/// reranking and rank extraction.
pub fn canonical_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .expect("scores are finite")
        .then_with(|| a.code_id.cmp(&b.code_id))
}

/// Per-query candidate lists, each kept in canonical order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingRun {
    entries: BTreeMap<String, Vec<Candidate>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub queries: usize,
    pub candidates: usize,
    /// Distinct candidate code ids with no text in the corpus.
    pub unknown_code_ids: usize,
}

impl RankingRun {
    /// Validates scores and duplicate candidates, then sorts every list.
    pub fn from_lists(lists: BTreeMap<String, Vec<Candidate>>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (pair_id, mut list) in lists {
            let mut seen = BTreeSet::new();
            for c in &list {
                if !c.score.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite score for {pair_id}/{}",
                        c.code_id
                    )));
                }
                if !seen.insert(c.code_id.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate candidate {} for {pair_id}",
                        c.code_id
                    )));
                }
            }
            list.sort_by(canonical_order);
            entries.insert(pair_id, list);
        }
        Ok(RankingRun { entries })
    }

    /// Loads a run for the pairs of `split`, rejecting unknown pair ids.
    pub fn load(path: impl AsRef<Path>, corpus: &Corpus, split: Split) -> Result<(Self, RunSummary)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lists: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
        let mut seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [pair_id, code_id, score] = fields[..] else {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            };
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad score {score:?}")))?;
            if !score.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite score {score}")));
            }
            match corpus.get(pair_id) {
                Some(p) if p.split == split => {}
                Some(_) => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("pair {pair_id} is not in the {split} split"),
                    ))
                }
                None => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("pair {pair_id} not in dataset"),
                    ))
                }
            }
            if !seen
                .entry(pair_id.to_string())
                .or_default()
                .insert(code_id.to_string())
            {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("duplicate candidate {code_id} for {pair_id}"),
                ));
            }
            lists
                .entry(pair_id.to_string())
                .or_default()
                .push(Candidate::new(code_id, score));
        }
        let run = RankingRun::from_lists(lists)?;
        let unknown: BTreeSet<&str> = run
            .entries
            .values()
            .flatten()
            .map(|c| c.code_id.as_str())
            .filter(|id| corpus.code_text(id).is_none())
            .collect();
        let summary = RunSummary {
            queries: run.entries.len(),
            candidates: run.entries.values().map(Vec::len).sum(),
            unknown_code_ids: unknown.len(),
        };
        if summary.unknown_code_ids > 0 {
            log::info!(
                "{}: {} candidate code ids have no text in the dataset",
                path.display(),
                summary.unknown_code_ids
            );
        }
        Ok((run, summary))
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (pair_id, list) in &self.entries {
            for c in list {
                writeln!(w, "{pair_id}\t{}\t{}", c.code_id, c.score)?;
            }
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_tsv(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, pair_id: &str) -> Option<&[Candidate]> {
        self.entries.get(pair_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Candidate])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies `f` to every score and re-sorts. `f` must return finite values.
    pub(crate) fn map_scores(&self, mut f: impl FnMut(&str, &Candidate) -> f64) -> RankingRun {
        let entries = self
            .entries
            .iter()
            .map(|(pair_id, list)| {
                let mut list: Vec<Candidate> = list
                    .iter()
                    .map(|c| Candidate::new(c.code_id.clone(), f(pair_id, c)))
                    .collect();
                list.sort_by(canonical_order);
                (pair_id.clone(), list)
            })
            .collect();
        RankingRun { entries }
    }
}

/// Dense vectors keyed by pair id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(EmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite component in vector {id}"
            )));
        }
        if self.vectors.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate embedding id {id}")));
        }
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            let v = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| Error::parse(path, lineno, format!("bad component: {e}")))?;
            let t = match table.as_mut() {
                Some(t) => t,
                None => table.insert(
                    EmbeddingTable::new(v.len())
                        .map_err(|_| Error::parse(path, lineno, "row has no components"))?,
                ),
            };
            if v.len() != t.dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("inconsistent dimension: expected {}, got {}", t.dim, v.len()),
                ));
            }
            t.insert(id, v)
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        }
        table.ok_or(Error::Empty("embedding file"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for (id, v) in &self.vectors {
            write!(w, "{id}").map_err(io)?;
            for x in v {
                write!(w, "\t{x}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
