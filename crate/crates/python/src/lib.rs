use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use engine::audit::{build_report, spearman as spearman_rs};
use engine::clustering::{kmeans as kmeans_rs, KmeansParams};
use engine::corpus::{self, Candidate, EmbeddingTable, Split};
use engine::features::{FeatureStore, IdfTable};
use engine::metrics::{evaluate as evaluate_rs, per_case_mrr};
use engine::reranker::{
    compose_parallel, compose_sequential, fit_reranker, order_models, BoostScope, ClusterSpace,
    RerankerParams, TestInputs,
};
use engine::similarity::SimilarityIndex;
use engine::synth::{generate, SynthSpec};
use engine::Bias;

fn to_py(e: engine::Error) -> PyErr {
    match e {
        engine::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bias_of(id: u8) -> PyResult<Bias> {
    Bias::from_id(id).ok_or_else(|| value_err(format!("unknown bias id {id}")))
}

fn split_of(s: &str) -> PyResult<Split> {
    s.parse().map_err(value_err)
}

fn store_for(corpus: &corpus::Corpus, strict: bool) -> PyResult<(IdfTable, FeatureStore)> {
    let idf = IdfTable::fit_corpus(corpus).map_err(to_py)?;
    let store = FeatureStore::build(corpus, &idf, strict).map_err(to_py)?;
    Ok((idf, store))
}

/// Query/code pairs loaded from a JSONL dataset.
#[pyclass(frozen)]
struct Corpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            inner: corpus::Corpus::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (split=None))]
    fn pair_ids(&self, split: Option<&str>) -> PyResult<Vec<String>> {
        let split = split.map(split_of).transpose()?;
        Ok(self
            .inner
            .pairs()
            .iter()
            .filter(|p| split.is_none_or(|s| p.split == s))
            .map(|p| p.pair_id.clone())
            .collect())
    }

    fn code_id(&self, pair_id: &str) -> Option<String> {
        self.inner.get(pair_id).map(|p| p.code_id.clone())
    }

    fn query(&self, pair_id: &str) -> Option<String> {
        self.inner.get(pair_id).map(|p| p.query_text.clone())
    }

    fn code_text(&self, code_id: &str) -> Option<String> {
        self.inner.code_text(code_id).map(str::to_string)
    }
}

/// Scored candidate lists per query, kept in canonical order.
#[pyclass(frozen)]
struct RankingRun {
    inner: corpus::RankingRun,
}

#[pymethods]
impl RankingRun {
    #[staticmethod]
    #[pyo3(signature = (path, corpus, split="test"))]
    fn load(path: PathBuf, corpus: &Corpus, split: &str) -> PyResult<Self> {
        let (inner, _) = corpus::RankingRun::load(path, &corpus.inner, split_of(split)?).map_err(to_py)?;
        Ok(RankingRun { inner })
    }

    #[staticmethod]
    fn from_lists(lists: BTreeMap<String, Vec<(String, f64)>>) -> PyResult<Self> {
        let lists = lists
            .into_iter()
            .map(|(q, l)| (q, l.into_iter().map(|(c, s)| Candidate::new(c, s)).collect()))
            .collect();
        Ok(RankingRun {
            inner: corpus::RankingRun::from_lists(lists).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn pair_ids(&self) -> Vec<String> {
        self.inner.iter().map(|(p, _)| p.to_string()).collect()
    }

    fn candidates(&self, pair_id: &str) -> Option<Vec<(String, f64)>> {
        self.inner
            .get(pair_id)
            .map(|l| l.iter().map(|c| (c.code_id.clone(), c.score)).collect())
    }
}

/// A fitted single-bias reranker.
#[pyclass(frozen)]
struct RerankerModel {
    inner: engine::reranker::RerankerModel,
}

#[pymethods]
impl RerankerModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(RerankerModel {
            inner: engine::reranker::RerankerModel::load(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(RerankerModel {
            inner: engine::reranker::RerankerModel::from_json(s).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn bias(&self) -> u8 {
        self.inner.bias.id()
    }

    #[getter]
    fn t_m(&self) -> f64 {
        self.inner.t_m
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }

    #[getter]
    fn bands(&self) -> Vec<(f64, f64)> {
        self.inner.bands.clone()
    }

    #[getter]
    fn disadvantaged(&self) -> Vec<usize> {
        self.inner.disadvantaged.iter().copied().collect()
    }

    fn gate(&self, avg_similar_mrr: f64) -> bool {
        self.inner.gate(avg_similar_mrr)
    }

    fn is_disadvantaged(&self, value: f64) -> PyResult<bool> {
        self.inner.is_disadvantaged(value).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "RerankerModel(bias={}, t_m={:.6}, p={:.6})",
            self.inner.bias.id(),
            self.inner.t_m,
            self.inner.p
        )
    }
}

#[pyfunction]
fn canonical_code_id(code: &str) -> String {
    corpus::canonical_code_id(code)
}

/// 1-based rank of `gt` among `(code_id, score)` candidates.
#[pyfunction]
fn rank_of_truth(candidates: Vec<(String, f64)>, gt: &str) -> PyResult<usize> {
    let cands: Vec<Candidate> = candidates
        .into_iter()
        .map(|(c, s)| Candidate::new(c, s))
        .collect();
    engine::metrics::rank_of_truth("", &cands, gt).map_err(to_py)
}

#[pyfunction]
fn mrr(ranks: Vec<usize>) -> PyResult<f64> {
    engine::metrics::mrr(&ranks).map_err(to_py)
}

#[pyfunction]
fn hr_at_k(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    engine::metrics::hr_at_k(&ranks, k).map_err(to_py)
}

/// `(node_count, depth, exact)` for a Python snippet.
#[pyfunction]
fn ast_metrics(code: &str) -> (usize, usize, bool) {
    let m = engine::pyast::ast_metrics(code);
    (m.node_count, m.depth, m.exact)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    if x.len() != y.len() {
        return Err(value_err("x and y differ in length"));
    }
    Ok(spearman_rs(&x, &y))
}

/// Returns `(assignments, centers)`.
#[pyfunction]
#[pyo3(signature = (points, k, max_iter=100))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, max_iter: usize) -> PyResult<(Vec<usize>, Vec<Vec<f64>>)> {
    let params = KmeansParams {
        max_iter,
        ..KmeansParams::new(k)
    };
    let r = kmeans_rs(&points, &params).map_err(to_py)?;
    Ok((r.assignments, r.centers))
}

/// Per-pair bias features as `{pair_id: {feature: value}}`.
#[pyfunction]
#[pyo3(signature = (corpus, strict_ast=false))]
fn features<'py>(py: Python<'py>, corpus: &Corpus, strict_ast: bool) -> PyResult<Bound<'py, PyDict>> {
    let (_, store) = store_for(&corpus.inner, strict_ast)?;
    let out = PyDict::new(py);
    for p in corpus.inner.pairs() {
        let f = store
            .features(&p.pair_id, &p.code_id)
            .expect("features of a corpus pair");
        let d = PyDict::new(py);
        d.set_item("code_len", f.code_len)?;
        d.set_item("query_len", f.query_len)?;
        d.set_item("ast_nodes", f.ast_nodes)?;
        d.set_item("ast_depth", f.ast_depth)?;
        d.set_item("reserved_count", f.reserved_count)?;
        d.set_item("max_tfidf", f.max_tfidf)?;
        d.set_item("overlap", f.overlap)?;
        d.set_item("ast_exact", f.ast_exact)?;
        out.set_item(&p.pair_id, d)?;
    }
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (corpus, run, split="test", ks=vec![1, 5, 10]))]
fn evaluate<'py>(
    py: Python<'py>,
    corpus: &Corpus,
    run: &RankingRun,
    split: &str,
    ks: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let pc = per_case_mrr(&run.inner, &corpus.inner, split_of(split)?).map_err(to_py)?;
    let s = evaluate_rs(&pc, &ks).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mrr", s.mrr)?;
    d.set_item("hr", s.hr)?;
    d.set_item("n_queries", s.n_queries)?;
    d.set_item("excluded", s.excluded)?;
    Ok(d)
}

/// Interval table and severity for one bias.
#[pyfunction]
#[pyo3(signature = (corpus, run, bias, width=None, split="test", strict_ast=false))]
fn audit<'py>(
    py: Python<'py>,
    corpus: &Corpus,
    run: &RankingRun,
    bias: u8,
    width: Option<f64>,
    split: &str,
    strict_ast: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let bias = bias_of(bias)?;
    let split = split_of(split)?;
    let (_, store) = store_for(&corpus.inner, strict_ast)?;
    let pc = per_case_mrr(&run.inner, &corpus.inner, split).map_err(to_py)?;
    let feats = store.split_features(&corpus.inner, split);
    let r = build_report(&feats, &pc.outcomes, bias, width.unwrap_or(bias.default_width())).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("bias", bias.id())?;
    d.set_item("width", r.width)?;
    d.set_item("severity", r.severity)?;
    d.set_item("excluded", r.excluded)?;
    let rows: Vec<(f64, f64, usize, Option<f64>)> = r
        .rows
        .iter()
        .map(|row| (row.lo, row.hi, row.count, row.mean_mrr))
        .collect();
    d.set_item("rows", rows)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (
    corpus, run, bias, m=1, n=10.0, s=1, width=None, min_support=5,
    boost_scope="similar", cluster_space="feature-mrr", strict_ast=false
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    corpus: &Corpus,
    run: &RankingRun,
    bias: u8,
    m: usize,
    n: f64,
    s: usize,
    width: Option<f64>,
    min_support: usize,
    boost_scope: &str,
    cluster_space: &str,
    strict_ast: bool,
) -> PyResult<RerankerModel> {
    let bias = bias_of(bias)?;
    let (_, store) = store_for(&corpus.inner, strict_ast)?;
    let params = RerankerParams {
        m,
        n,
        s,
        width: width.unwrap_or(bias.default_width()),
        min_support,
        boost_scope: boost_scope.parse::<BoostScope>().map_err(value_err)?,
        cluster_space: cluster_space.parse::<ClusterSpace>().map_err(value_err)?,
    };
    let inner = fit_reranker(&corpus.inner, &run.inner, &store, bias, &params).map_err(to_py)?;
    Ok(RerankerModel { inner })
}

/// Applies fitted models to a test run and returns the reranked run.
#[pyfunction]
#[pyo3(signature = (
    models, corpus, run, embeddings=None, fallback_tfidf=false, mode="sequential",
    order=None, train_corpus=None, strict_ast=false
))]
#[allow(clippy::too_many_arguments)]
fn rerank(
    models: Vec<PyRef<'_, RerankerModel>>,
    corpus: &Corpus,
    run: &RankingRun,
    embeddings: Option<PathBuf>,
    fallback_tfidf: bool,
    mode: &str,
    order: Option<Vec<u8>>,
    train_corpus: Option<&Corpus>,
    strict_ast: bool,
) -> PyResult<RankingRun> {
    if models.is_empty() {
        return Err(value_err("no models given"));
    }
    let order = match order {
        Some(ids) => ids.into_iter().map(bias_of).collect::<PyResult<Vec<_>>>()?,
        None => Bias::DEFAULT_ORDER.to_vec(),
    };
    let models = order_models(models.iter().map(|m| m.inner.clone()).collect(), &order).map_err(to_py)?;
    let train_ids: Vec<String> = models[0].train_mrr.keys().cloned().collect();
    if models.iter().any(|m| !m.train_mrr.keys().eq(train_ids.iter())) {
        return Err(value_err("models were fitted on different training pairs"));
    }

    let test = &corpus.inner;
    let train = train_corpus.map_or(test, |c| &c.inner);
    let idf = IdfTable::fit_corpus(train).map_err(to_py)?;
    let mut store = FeatureStore::build(test, &idf, strict_ast).map_err(to_py)?;
    if train_corpus.is_some() {
        store.add_corpus(train, &idf, strict_ast).map_err(to_py)?;
    }
    let texts = || -> PyResult<Vec<(String, String)>> {
        train_ids
            .iter()
            .map(|id| match train.get(id) {
                Some(p) => Ok((id.clone(), p.query_text.clone())),
                None => Err(value_err(format!(
                    "training pair {id} is missing from the training corpus"
                ))),
            })
            .collect()
    };
    let index = match (embeddings, fallback_tfidf) {
        (Some(path), fallback) => {
            let table = EmbeddingTable::load(path).map_err(to_py)?;
            let index = SimilarityIndex::dense(table, train_ids.iter().cloned()).map_err(to_py)?;
            if fallback {
                index.with_tfidf_fallback(idf.clone(), texts()?).map_err(to_py)?
            } else {
                index
            }
        }
        (None, true) => SimilarityIndex::tfidf(idf.clone(), texts()?),
        (None, false) => return Err(value_err("one of embeddings or fallback_tfidf is required")),
    };
    let inputs = TestInputs {
        corpus: test,
        run: &run.inner,
        store: &store,
        index: &index,
    };
    let inner = match mode {
        "sequential" => compose_sequential(&models, &inputs),
        "parallel" => compose_parallel(&models, &inputs),
        other => return Err(value_err(format!("unknown mode {other:?}"))),
    }
    .map_err(to_py)?;
    Ok(RankingRun { inner })
}

/// Writes a synthetic dataset (dataset.jsonl, train.tsv, test.tsv, emb.tsv)
/// into `out`.
#[pyfunction]
#[pyo3(signature = (
    out, seed=42, n_train=2000, n_test=600, pool=600, bias=1, penalty=0.5,
    threshold=8.0, shared_pool=true
))]
#[allow(clippy::too_many_arguments)]
fn synth(
    out: PathBuf,
    seed: u64,
    n_train: usize,
    n_test: usize,
    pool: usize,
    bias: u8,
    penalty: f64,
    threshold: f64,
    shared_pool: bool,
) -> PyResult<()> {
    let spec = SynthSpec {
        seed,
        n_train,
        n_test,
        pool_size: pool,
        bias: bias_of(bias)?,
        penalty,
        threshold,
        shared_pool,
    };
    generate(&spec).map_err(to_py)?.write(out).map_err(to_py)
}

#[pymodule]
fn rankdebias(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<RankingRun>()?;
    m.add_class::<RerankerModel>()?;
    m.add_function(wrap_pyfunction!(canonical_code_id, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of_truth, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(hr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ast_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(rerank, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
