//! Rank extraction, MRR and HR@K.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{Candidate, Corpus, RankingRun, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankOutcome {
    pub pair_id: String,
    pub rank: usize,
    pub reciprocal: f64,
}

impl RankOutcome {
    pub fn new(pair_id: impl Into<String>, rank: usize) -> Self {
        RankOutcome {
            pair_id: pair_id.into(),
            rank,
            reciprocal: 1.0 / rank as f64,
        }
    }
}

/// 1-based rank of `gt_code_id` among `candidates` under the canonical
/// order (score descending, code_id ascending), computed by counting so
/// the input order does not matter.
pub fn rank_of_truth(pair_id: &str, candidates: &[Candidate], gt_code_id: &str) -> Result<usize> {
    let gt = candidates
        .iter()
        .find(|c| c.code_id == gt_code_id)
        .ok_or_else(|| Error::MissingTruth {
            pair_id: pair_id.to_string(),
        })?;
    let ahead = candidates
        .iter()
        .filter(|c| c.score > gt.score || (c.score == gt.score && c.code_id.as_str() < gt_code_id))
        .count();
    Ok(1 + ahead)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("MRR of no queries"));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of ranks within the top `k`.
pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty("HR@K of no queries"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Per-pair outcomes for one split. Pairs whose ground truth is absent from
/// their candidate list are listed in `excluded` instead.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerCase {
    pub outcomes: BTreeMap<String, RankOutcome>,
    pub excluded: Vec<String>,
}

impl PerCase {
    pub fn ranks(&self) -> Vec<usize> {
        self.outcomes.values().map(|o| o.rank).collect()
    }

    pub fn reciprocals(&self) -> BTreeMap<String, f64> {
        self.outcomes
            .iter()
            .map(|(k, o)| (k.clone(), o.reciprocal))
            .collect()
    }
}

pub fn per_case_mrr(run: &RankingRun, corpus: &Corpus, split: Split) -> Result<PerCase> {
    let mut out = PerCase::default();
    for pair in corpus.split(split) {
        let candidates = run.get(&pair.pair_id).ok_or_else(|| Error::MissingRunEntry {
            pair_id: pair.pair_id.clone(),
        })?;
        match rank_of_truth(&pair.pair_id, candidates, &pair.code_id) {
            Ok(rank) => {
                out.outcomes
                    .insert(pair.pair_id.clone(), RankOutcome::new(&pair.pair_id, rank));
            }
            Err(Error::MissingTruth { pair_id }) => out.excluded.push(pair_id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mrr: f64,
    pub hr: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub excluded: usize,
}

pub fn evaluate(per_case: &PerCase, ks: &[usize]) -> Result<EvalSummary> {
    let ranks = per_case.ranks();
    let hr = ks
        .iter()
        .map(|&k| Ok((k, hr_at_k(&ranks, k)?)))
        .collect::<Result<_>>()?;
    Ok(EvalSummary {
        mrr: mrr(&ranks)?,
        hr,
        n_queries: ranks.len(),
        excluded: per_case.excluded.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QueryCodePair;

    fn cands(list: &[(&str, f64)]) -> Vec<Candidate> {
        list.iter().map(|&(id, s)| Candidate::new(id, s)).collect()
    }

    #[test]
    fn rank_fixtures() {
        let c = cands(&[("c1", 0.9), ("gt", 0.7), ("c3", 0.3)]);
        assert_eq!(rank_of_truth("q", &c, "gt").unwrap(), 2);
        let c = cands(&[("c1", 0.2), ("gt", 0.7)]);
        assert_eq!(rank_of_truth("q", &c, "gt").unwrap(), 1);
        let c = cands(&[("c", 0.5), ("b", 0.5), ("a", 0.5)]);
        assert_eq!(rank_of_truth("q", &c, "b").unwrap(), 2);
        let err = rank_of_truth("q7", &c, "zz").unwrap_err();
        assert!(matches!(err, Error::MissingTruth { pair_id } if pair_id == "q7"));
    }

    #[test]
    fn mrr_fixtures() {
        assert_eq!(mrr(&[2]).unwrap(), 0.5);
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn hr_fixtures() {
        assert!((hr_at_k(&[1, 3, 12], 5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hr_at_k(&[1, 2], 1).unwrap(), 0.5);
        assert_eq!(hr_at_k(&[2, 2, 2], 1).unwrap(), 0.0);
        assert!(hr_at_k(&[], 1).is_err());
        assert!(hr_at_k(&[1], 0).is_err());
    }

    fn corpus() -> Corpus {
        Corpus::new(vec![
            QueryCodePair::new("q1", "a", "x = 1", Split::Test),
            QueryCodePair::new("q2", "b", "y = 2", Split::Test),
            QueryCodePair::new("t1", "c", "z = 3", Split::Train),
        ])
        .unwrap()
    }

    #[test]
    fn per_case_outcomes_and_exclusions() {
        let c = corpus();
        let gt1 = c.get("q1").unwrap().code_id.clone();
        let mut lists = BTreeMap::new();
        lists.insert("q1".to_string(), cands(&[(&gt1, 0.9), ("other", 0.1)]));
        lists.insert("q2".to_string(), cands(&[("other", 0.1)]));
        let run = RankingRun::from_lists(lists).unwrap();
        let pc = per_case_mrr(&run, &c, Split::Test).unwrap();
        assert_eq!(pc.outcomes["q1"], RankOutcome::new("q1", 1));
        assert_eq!(pc.outcomes["q1"].reciprocal, 1.0);
        assert_eq!(pc.excluded, vec!["q2".to_string()]);

        let summary = evaluate(&pc, &[1, 5]).unwrap();
        assert_eq!(summary.n_queries, 1);
        assert_eq!(summary.excluded, 1);
        assert_eq!(summary.mrr, 1.0);
    }

    #[test]
    fn per_case_requires_every_pair() {
        let c = corpus();
        let mut lists = BTreeMap::new();
        lists.insert("q1".to_string(), cands(&[("x", 0.5)]));
        let run = RankingRun::from_lists(lists).unwrap();
        assert!(matches!(
            per_case_mrr(&run, &c, Split::Test),
            Err(Error::MissingRunEntry { .. })
        ));
    }
}
