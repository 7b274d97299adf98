//! Top-M similar training queries by cosine similarity, over ingested dense
//! embeddings or TF-IDF vectors built from the query text.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{term_counts, tokenize_query, IdfTable};

/// Sparse word-weight vector with no zero entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    entries: BTreeMap<String, f64>,
}

impl SparseVec {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        SparseVec {
            entries: entries.into_iter().filter(|(_, w)| *w != 0.0).collect(),
        }
    }

    pub fn get(&self, word: &str) -> f64 {
        self.entries.get(word).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn norm(&self) -> f64 {
        self.entries.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    fn dot(&self, other: &SparseVec) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().map(|(w, x)| x * large.get(w)).sum()
    }
}

fn ratio(dot: f64, nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

fn dense_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dense_dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(ratio(dense_dot(u, v), dense_norm(u), dense_norm(v)))
}

pub fn cosine_sparse(u: &SparseVec, v: &SparseVec) -> f64 {
    ratio(u.dot(v), u.norm(), v.norm())
}

/// `tf * idf` weights of the query words; out-of-vocabulary words vanish.
pub fn tfidf_embed(query_tokens: &[String], table: &IdfTable) -> SparseVec {
    SparseVec::new(
        term_counts(query_tokens)
            .into_iter()
            .map(|(w, tf)| (w.to_string(), tf as f64 * table.idf(w))),
    )
}

struct DenseSide {
    table: EmbeddingTable,
    norms: Vec<f64>,
}

struct SparseSide {
    idf: IdfTable,
    vectors: Vec<SparseVec>,
    norms: Vec<f64>,
}

/// Brute-force nearest-neighbour index over the training queries.
pub struct SimilarityIndex {
    train_ids: Vec<String>,
    dense: Option<DenseSide>,
    sparse: Option<SparseSide>,
}

impl SimilarityIndex {
    /// Dense index; every training id must have an embedding.
    pub fn dense(table: EmbeddingTable, train_ids: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut train_ids: Vec<String> = train_ids.into_iter().collect();
        train_ids.sort();
        train_ids.dedup();
        let norms = train_ids
            .iter()
            .map(|id| {
                table
                    .get(id)
                    .map(dense_norm)
                    .ok_or_else(|| Error::MissingEmbedding(id.clone()))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(SimilarityIndex {
            train_ids,
            dense: Some(DenseSide { table, norms }),
            sparse: None,
        })
    }

    /// TF-IDF index from `(pair_id, query_text)` training pairs.
    pub fn tfidf(idf: IdfTable, train: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut train: Vec<(String, String)> = train.into_iter().collect();
        train.sort();
        train.dedup_by(|a, b| a.0 == b.0);
        let vectors: Vec<SparseVec> = train
            .iter()
            .map(|(_, text)| tfidf_embed(&tokenize_query(text), &idf))
            .collect();
        let norms = vectors.iter().map(SparseVec::norm).collect();
        SimilarityIndex {
            train_ids: train.into_iter().map(|(id, _)| id).collect(),
            dense: None,
            sparse: Some(SparseSide { idf, vectors, norms }),
        }
    }

    /// Adds a TF-IDF side used for queries missing from the dense table.
    /// The training ids must match the dense side.
    pub fn with_tfidf_fallback(
        mut self,
        idf: IdfTable,
        train: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let sparse = SimilarityIndex::tfidf(idf, train);
        if sparse.train_ids != self.train_ids {
            return Err(Error::InvalidArgument(
                "fallback training queries differ from the dense index".into(),
            ));
        }
        self.sparse = sparse.sparse;
        Ok(self)
    }

    pub fn train_ids(&self) -> &[String] {
        &self.train_ids
    }

    /// Up to `m` training pair ids most similar to the query, best first;
    /// ties go to the smaller pair id. The dense side is used when it holds
    /// `pair_id`, otherwise the TF-IDF side embeds `query_text`.
    pub fn top_m(&self, pair_id: &str, query_text: &str, m: usize) -> Result<Vec<(String, f64)>> {
        if m == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        let sims: Vec<f64> = match (&self.dense, &self.sparse) {
            (Some(d), _) if d.table.get(pair_id).is_some() => {
                let q = d.table.get(pair_id).unwrap();
                let qn = dense_norm(q);
                self.train_ids
                    .iter()
                    .zip(&d.norms)
                    .map(|(id, &n)| ratio(dense_dot(q, d.table.get(id).unwrap()), qn, n))
                    .collect()
            }
            (_, Some(s)) => {
                let q = tfidf_embed(&tokenize_query(query_text), &s.idf);
                let qn = q.norm();
                s.vectors
                    .iter()
                    .zip(&s.norms)
                    .map(|(v, &n)| ratio(q.dot(v), qn, n))
                    .collect()
            }
            _ => return Err(Error::MissingEmbedding(pair_id.to_string())),
        };
        let mut scored: Vec<(f64, usize)> = sims.into_iter().zip(0..).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.train_ids[a.1].cmp(&self.train_ids[b.1]))
        };
        if m < scored.len() {
            scored.select_nth_unstable_by(m - 1, cmp);
            scored.truncate(m);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(s, i)| (self.train_ids[i].clone(), s))
            .collect())
    }
}
