//! Per-bias rerankers: fitting on a training run, gating and boosting test
//! candidates, and composing several rerankers.
//!
//! A fitted model carries the training MRR `T_m`, the boost constant `P`
//! (the fraction of training pairs whose reciprocal rank is below `T_m`),
//! trusted reciprocal-rank bands from k-means over the best-handled
//! training cases, and the feature intervals where training quality falls
//! below `T_m`. At apply time each test query looks up its most similar
//! training queries; if their average reciprocal rank falls inside a
//! trusted band nothing happens, otherwise the ground-truth codes of those
//! training queries that lie in a disadvantaged interval gain `P`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::interval_index;
use crate::bias::Bias;
use crate::clustering::{kmeans, mrr_clusters, KmeansParams};
use crate::corpus::{Candidate, Corpus, RankingRun, Split};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::metrics::per_case_mrr;
use crate::similarity::SimilarityIndex;

pub const FORMAT_VERSION: u32 = 1;

/// Which candidates a reranker may boost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoostScope {
    /// Ground-truth codes of the similar training queries.
    Similar,
    /// Any candidate in a disadvantaged interval.
    All,
}

/// Coordinates used to cluster the selected training cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterSpace {
    Mrr,
    FeatureMrr,
}

impl fmt::Display for BoostScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoostScope::Similar => "similar",
            BoostScope::All => "all",
        })
    }
}

impl FromStr for BoostScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similar" => Ok(BoostScope::Similar),
            "all" => Ok(BoostScope::All),
            _ => Err(Error::InvalidArgument(format!("unknown boost scope {s:?}"))),
        }
    }
}

impl fmt::Display for ClusterSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterSpace::Mrr => "mrr",
            ClusterSpace::FeatureMrr => "feature-mrr",
        })
    }
}

impl FromStr for ClusterSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrr" => Ok(ClusterSpace::Mrr),
            "feature-mrr" => Ok(ClusterSpace::FeatureMrr),
            _ => Err(Error::InvalidArgument(format!("unknown cluster space {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankerParams {
    /// Similar training queries consulted per test query.
    #[serde(rename = "M")]
    pub m: usize,
    /// Percentage of best-ranked training cases kept for clustering.
    #[serde(rename = "N")]
    pub n: f64,
    /// Number of clusters.
    #[serde(rename = "S")]
    pub s: usize,
    pub width: f64,
    pub min_support: usize,
    pub boost_scope: BoostScope,
    pub cluster_space: ClusterSpace,
}

impl RerankerParams {
    /// M=1, N=10, S=1 with the bias's default interval width.
    pub fn new(bias: Bias) -> Self {
        RerankerParams {
            m: 1,
            n: 10.0,
            s: 1,
            width: bias.default_width(),
            min_support: 5,
            boost_scope: BoostScope::Similar,
            cluster_space: ClusterSpace::FeatureMrr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        if !(self.n > 0.0 && self.n <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "N must be in (0, 100], got {}",
                self.n
            )));
        }
        if self.s == 0 {
            return Err(Error::InvalidArgument("S must be at least 1".into()));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "width must be positive, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerModel {
    pub format_version: u32,
    #[serde(rename = "bias_id")]
    pub bias: Bias,
    #[serde(rename = "T_m")]
    pub t_m: f64,
    #[serde(rename = "P")]
    pub p: f64,
    /// Closed `(mrr_min, mrr_max)` trusted bands, sorted.
    pub bands: Vec<(f64, f64)>,
    pub disadvantaged: BTreeSet<usize>,
    pub params: RerankerParams,
    pub train_mrr: BTreeMap<String, f64>,
    pub train_gt: BTreeMap<String, String>,
}

impl RerankerModel {
    /// True when `avg_similar_mrr` lies in a trusted band, i.e. boosting is
    /// skipped.
    pub fn gate(&self, avg_similar_mrr: f64) -> bool {
        self.bands
            .iter()
            .any(|&(lo, hi)| lo <= avg_similar_mrr && avg_similar_mrr <= hi)
    }

    pub fn is_disadvantaged(&self, value: f64) -> Result<bool> {
        Ok(self
            .disadvantaged
            .contains(&interval_index(value, self.params.width)?))
    }

    /// Mean training reciprocal rank of `train_ids`.
    pub fn average_mrr<'a>(&self, train_ids: impl IntoIterator<Item = &'a str>) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0;
        for id in train_ids {
            sum += self.train_mrr.get(id).ok_or_else(|| {
                Error::InvalidArgument(format!("training pair {id} is unknown to the model"))
            })?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("no similar training pairs"));
        }
        Ok(sum / n as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: RerankerModel = serde_json::from_str(s)?;
        if model.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format_version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RerankerModel::from_json(&s).map_err(|e| match e {
            Error::Json(j) => Error::parse(path, j.line(), j.to_string()),
            other => other,
        })
    }
}

fn zscore(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    xs.iter()
        .map(|x| if sd == 0.0 { 0.0 } else { (x - mean) / sd })
        .collect()
}

/// Intervals (by index) whose mean reciprocal rank is strictly below `t_m`.
///
/// Intervals with fewer than `min_support` samples, empty ones included,
/// take the statistics of the nearest interval that has enough support
/// (ties go to the lower index). Without any such interval all samples are
/// pooled. Indices past the largest populated interval are never returned.
pub fn disadvantaged_intervals(
    samples: &[(f64, f64)],
    width: f64,
    min_support: usize,
    t_m: f64,
) -> Result<BTreeSet<usize>> {
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(value, recip) in samples {
        let g = groups.entry(interval_index(value, width)?).or_default();
        g.0 += 1;
        g.1 += recip;
    }
    let Some(&top) = groups.keys().next_back() else {
        return Ok(BTreeSet::new());
    };
    let min_support = min_support.max(1);
    let supported: Vec<usize> = groups
        .iter()
        .filter(|(_, g)| g.0 >= min_support)
        .map(|(&i, _)| i)
        .collect();
    let pooled = || {
        let (c, s) = groups.values().fold((0, 0.0), |(c, s), g| (c + g.0, s + g.1));
        s / c as f64
    };
    let mut out = BTreeSet::new();
    for i in 0..=top {
        let mean = if supported.is_empty() {
            pooled()
        } else {
            let mut target = supported[0];
            for &j in &supported[1..] {
                if j.abs_diff(i) < target.abs_diff(i) {
                    target = j;
                }
            }
            let g = groups[&target];
            g.1 / g.0 as f64
        };
        if mean < t_m {
            out.insert(i);
        }
    }
    Ok(out)
}

/// Fits the reranker for `bias` on the training split of `corpus`.
pub fn fit_reranker(
    corpus: &Corpus,
    run: &RankingRun,
    store: &FeatureStore,
    bias: Bias,
    params: &RerankerParams,
) -> Result<RerankerModel> {
    params.validate()?;
    let per_case = per_case_mrr(run, corpus, Split::Train)?;
    let n = per_case.outcomes.len();
    if n == 0 {
        return Err(Error::Insufficient(
            "no training pair has its ground truth among its candidates".into(),
        ));
    }
    let train_mrr = per_case.reciprocals();
    let t_m = train_mrr.values().sum::<f64>() / n as f64;
    let below = train_mrr.values().filter(|&&r| r < t_m).count();
    let p = below as f64 / n as f64;

    let mut train_gt = BTreeMap::new();
    let mut values = BTreeMap::new();
    let mut samples = Vec::new();
    for (pair_id, &recip) in &train_mrr {
        let gt = &corpus.get(pair_id).expect("outcome of a corpus pair").code_id;
        let f = store
            .features(pair_id, gt)
            .ok_or_else(|| Error::InvalidArgument(format!("no features for training pair {pair_id}")))?;
        values.insert(pair_id.as_str(), f.value(bias));
        if f.usable_for(bias) {
            samples.push((f.value(bias), recip));
        }
        train_gt.insert(pair_id.clone(), gt.clone());
    }

    let keep = ((params.n * n as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
    let keep = keep.min(n);
    if keep < params.s {
        return Err(Error::Insufficient(format!(
            "top {}% of {n} training cases is {keep}, fewer than S = {}",
            params.n, params.s
        )));
    }
    let mut ranked: Vec<(&String, f64)> = train_mrr.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(keep);

    let ids: Vec<String> = ranked.iter().map(|(id, _)| (*id).clone()).collect();
    let recips: Vec<f64> = ranked.iter().map(|(_, r)| *r).collect();
    let points: Vec<Vec<f64>> = match params.cluster_space {
        ClusterSpace::Mrr => recips.iter().map(|&r| vec![r]).collect(),
        ClusterSpace::FeatureMrr => {
            let feats: Vec<f64> = ids.iter().map(|id| values[id.as_str()]).collect();
            zscore(&feats)
                .into_iter()
                .zip(zscore(&recips))
                .map(|(f, r)| vec![f, r])
                .collect()
        }
    };
    let result = kmeans(&points, &KmeansParams::new(params.s))?;
    let mut bands: Vec<(f64, f64)> = mrr_clusters(&result, &ids, &recips)
        .into_iter()
        .map(|c| (c.mrr_min, c.mrr_max))
        .collect();
    bands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let disadvantaged = disadvantaged_intervals(&samples, params.width, params.min_support, t_m)?;
    log::debug!("bias {bias}: T_m={t_m} P={p} bands={bands:?} disadvantaged={disadvantaged:?}");
    Ok(RerankerModel {
        format_version: FORMAT_VERSION,
        bias,
        t_m,
        p,
        bands,
        disadvantaged,
        params: *params,
        train_mrr,
        train_gt,
    })
}

/// Candidates of test query `pair_id` that receive the boost.
///
/// Candidates without known code text, or with an inexact parse for the
/// AST biases, are never boosted.
pub fn boost_set(
    model: &RerankerModel,
    pair_id: &str,
    candidates: &[Candidate],
    store: &FeatureStore,
    similar: &[String],
) -> Result<BTreeSet<String>> {
    let targets: BTreeSet<&str> = similar
        .iter()
        .filter_map(|id| model.train_gt.get(id).map(String::as_str))
        .collect();
    let mut out = BTreeSet::new();
    for c in candidates {
        if model.params.boost_scope == BoostScope::Similar && !targets.contains(c.code_id.as_str()) {
            continue;
        }
        let Some(f) = store.features(pair_id, &c.code_id) else {
            continue;
        };
        if f.usable_for(model.bias) && model.is_disadvantaged(f.value(model.bias))? {
            out.insert(c.code_id.clone());
        }
    }
    Ok(out)
}

/// Additive score terms per test query and candidate; absent entries are 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoostVector {
    terms: BTreeMap<String, BTreeMap<String, f64>>,
}

impl BoostVector {
    pub fn new() -> Self {
        BoostVector::default()
    }

    /// Records `term` for one candidate; zero terms are not stored.
    pub fn insert(&mut self, pair_id: impl Into<String>, code_id: impl Into<String>, term: f64) {
        if term != 0.0 {
            self.terms
                .entry(pair_id.into())
                .or_default()
                .insert(code_id.into(), term);
        }
    }

    pub fn term(&self, pair_id: &str, code_id: &str) -> f64 {
        self.terms
            .get(pair_id)
            .and_then(|m| m.get(code_id))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of boosted (pair, candidate) entries.
    pub fn len(&self) -> usize {
        self.terms.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.terms
            .iter()
            .flat_map(|(p, m)| m.iter().map(move |(c, &t)| (p.as_str(), c.as_str(), t)))
    }
}

/// Test-side inputs shared by apply and compose.
#[derive(Clone, Copy)]
pub struct TestInputs<'a> {
    pub corpus: &'a Corpus,
    pub run: &'a RankingRun,
    pub store: &'a FeatureStore,
    pub index: &'a SimilarityIndex,
}

impl<'a> TestInputs<'a> {
    fn with_run(self, run: &'a RankingRun) -> Self {
        TestInputs { run, ..self }
    }
}

/// Boost terms for every query of the test run. Scores are not touched.
pub fn apply_reranker(model: &RerankerModel, inputs: &TestInputs) -> Result<BoostVector> {
    let mut boosts = BoostVector::new();
    let mut gated = 0;
    for (pair_id, candidates) in inputs.run.iter() {
        let pair = inputs.corpus.get(pair_id).ok_or_else(|| {
            Error::InvalidArgument(format!("run query {pair_id} is not in the test dataset"))
        })?;
        let similar: Vec<String> = inputs
            .index
            .top_m(pair_id, &pair.query_text, model.params.m)?
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        let avg = model.average_mrr(similar.iter().map(String::as_str))?;
        if model.gate(avg) {
            gated += 1;
            continue;
        }
        for code_id in boost_set(model, pair_id, candidates, inputs.store, &similar)? {
            boosts.insert(pair_id, code_id, model.p);
        }
    }
    log::info!(
        "bias {}: {gated}/{} queries gated, {} candidates boosted by {}",
        model.bias,
        inputs.run.len(),
        boosts.len(),
        model.p
    );
    Ok(boosts)
}

/// Adds the boost terms and re-sorts every list. Unboosted scores are kept
/// bit for bit.
pub fn rerank_run(run: &RankingRun, boosts: &BoostVector) -> RankingRun {
    run.map_scores(|pair_id, c| {
        let t = boosts.term(pair_id, &c.code_id);
        if t == 0.0 {
            c.score
        } else {
            c.score + t
        }
    })
}

/// Applies the boost vectors one after another.
pub fn compose_boosts_sequential(run: &RankingRun, boosts: &[BoostVector]) -> RankingRun {
    boosts.iter().fold(run.clone(), |acc, b| rerank_run(&acc, b))
}

/// Adds the mean of the boost vectors, summed in list order.
pub fn compose_boosts_parallel(run: &RankingRun, boosts: &[BoostVector]) -> Result<RankingRun> {
    if boosts.is_empty() {
        return Err(Error::Empty("no rerankers to compose"));
    }
    let k = boosts.len() as f64;
    let mut mean = BoostVector::new();
    let keys: BTreeSet<(&str, &str)> = boosts
        .iter()
        .flat_map(|b| b.iter().map(|(p, c, _)| (p, c)))
        .collect();
    for (p, c) in keys {
        let sum: f64 = boosts.iter().map(|b| b.term(p, c)).sum();
        mean.insert(p, c, sum / k);
    }
    Ok(rerank_run(run, &mean))
}

/// Chains the rerankers: each one sees the scores left by the previous.
pub fn compose_sequential(models: &[RerankerModel], inputs: &TestInputs) -> Result<RankingRun> {
    if models.is_empty() {
        return Err(Error::Empty("no rerankers to compose"));
    }
    let mut current = inputs.run.clone();
    for model in models {
        let boosts = apply_reranker(model, &inputs.with_run(&current))?;
        current = rerank_run(&current, &boosts);
    }
    Ok(current)
}

/// Averages the boosts of all rerankers, each computed on the original run.
pub fn compose_parallel(models: &[RerankerModel], inputs: &TestInputs) -> Result<RankingRun> {
    let boosts = models
        .iter()
        .map(|m| apply_reranker(m, inputs))
        .collect::<Result<Vec<_>>>()?;
    compose_boosts_parallel(inputs.run, &boosts)
}

/// Sorts models by the position of their bias in `order`.
pub fn order_models(mut models: Vec<RerankerModel>, order: &[Bias]) -> Result<Vec<RerankerModel>> {
    let pos = |b: Bias| order.iter().position(|&o| o == b);
    if let Some(m) = models.iter().find(|m| pos(m.bias).is_none()) {
        return Err(Error::InvalidArgument(format!(
            "bias {} is missing from the reranker order",
            m.bias
        )));
    }
    models.sort_by_key(|m| pos(m.bias));
    Ok(models)
}
