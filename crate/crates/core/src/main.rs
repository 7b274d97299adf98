use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rankdebias::audit::{build_report, emit_reports};
use rankdebias::bias::parse_bias_list;
use rankdebias::corpus::{Corpus, EmbeddingTable, RankingRun, Split};
use rankdebias::features::{FeatureStore, IdfTable};
use rankdebias::metrics::{evaluate, per_case_mrr};
use rankdebias::reranker::{
    compose_parallel, compose_sequential, fit_reranker, order_models, BoostScope, ClusterSpace,
    RerankerModel, RerankerParams, TestInputs,
};
use rankdebias::similarity::SimilarityIndex;
use rankdebias::synth::{generate, SynthSpec};
use rankdebias::Bias;

/// Audit code-search rankings for systematic biases and rerank them.
#[derive(Debug, Parser)]
#[command(name = "rankdebias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the seven bias features of every pair as TSV.
    ExtractFeatures(ExtractArgs),
    /// Per-interval MRR tables and severity for each bias.
    Audit(AuditArgs),
    /// MRR and HR@K of a run.
    Eval(EvalArgs),
    /// Fit one bias reranker on a training run.
    Fit(FitArgs),
    /// Apply fitted rerankers to a test run.
    Rerank(RerankArgs),
    /// Generate a synthetic corpus, runs and embeddings.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Restrict to one split.
    #[arg(long)]
    split: Option<Split>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict_ast: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// "all" or a comma-separated list of bias ids.
    #[arg(long, default_value = "all", value_parser = parse_biases)]
    bias: List<Bias>,
    /// Interval width override as <bias>=<width>; repeatable.
    #[arg(long, value_parser = parse_width)]
    width: Vec<(Bias, f64)>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict_ast: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Comma-separated cutoffs for HR@K.
    #[arg(long, default_value = "1,5,10", value_parser = parse_ks)]
    k: List<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
#[group(id = "similarity", multiple = true)]
struct SimilarityArgs {
    /// Query embeddings TSV.
    #[arg(long, group = "similarity")]
    embeddings: Option<PathBuf>,
    /// Use TF-IDF query vectors (alone, or for queries without embeddings).
    #[arg(long, group = "similarity")]
    fallback_tfidf: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    train_dataset: PathBuf,
    #[arg(long)]
    train_run: PathBuf,
    #[arg(long)]
    bias: Bias,
    #[arg(long = "M", default_value_t = 1)]
    m: usize,
    #[arg(long = "N", default_value_t = 10.0)]
    n: f64,
    #[arg(long = "S", default_value_t = 1)]
    s: usize,
    /// Interval width; the bias default when omitted.
    #[arg(long)]
    width: Option<f64>,
    #[arg(long, default_value_t = 5)]
    min_support: usize,
    #[arg(long, default_value = "similar")]
    boost_scope: BoostScope,
    #[arg(long, default_value = "feature-mrr")]
    cluster_space: ClusterSpace,
    #[command(flatten)]
    similarity: SimilarityArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict_ast: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Parallel,
}

#[derive(Debug, Args)]
struct RerankArgs {
    /// Comma-separated model files.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "sequential")]
    mode: Mode,
    /// Bias order for composition.
    #[arg(long, default_value = "7,6,3,4,2,5,1", value_parser = parse_order)]
    order: List<Bias>,
    #[arg(long)]
    test_dataset: PathBuf,
    #[arg(long)]
    test_run: PathBuf,
    /// Source of training query texts and IDF; the test dataset when omitted.
    #[arg(long)]
    train_dataset: Option<PathBuf>,
    #[command(flatten)]
    similarity: SimilarityArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict_ast: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 600)]
    n_test: usize,
    /// Candidates per query.
    #[arg(long, default_value_t = 600)]
    pool: usize,
    #[arg(long, default_value = "1")]
    bias: Bias,
    #[arg(long, default_value_t = 0.5)]
    penalty: f64,
    #[arg(long, default_value_t = 8.0)]
    threshold: f64,
    /// Give test pairs fresh codes instead of their training twin's.
    #[arg(long)]
    no_shared_pool: bool,
    #[arg(long)]
    out: PathBuf,
}

/// A comma-separated flag value parsed as a whole.
#[derive(Debug, Clone)]
struct List<T>(Vec<T>);

fn parse_biases(s: &str) -> Result<List<Bias>, String> {
    if s.trim() == "all" {
        return Ok(List(Bias::ALL.to_vec()));
    }
    parse_order(s)
}

fn parse_order(s: &str) -> Result<List<Bias>, String> {
    let list = parse_bias_list(s).map_err(|e| e.to_string())?;
    if list.is_empty() {
        return Err("empty bias list".into());
    }
    Ok(List(list))
}

fn parse_width(s: &str) -> Result<(Bias, f64), String> {
    let (b, w) = s.split_once('=').ok_or("expected <bias>=<width>")?;
    let bias: Bias = b.parse().map_err(|e: rankdebias::Error| e.to_string())?;
    let w: f64 = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    if !(w > 0.0 && w.is_finite()) {
        return Err(format!("width must be positive, got {w}"));
    }
    Ok((bias, w))
}

fn parse_ks(s: &str) -> Result<List<usize>, String> {
    s.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(format!("bad cutoff {p:?}")),
        })
        .collect::<Result<_, _>>()
        .map(List)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_corpus(path: &Path) -> anyhow::Result<Corpus> {
    let c = Corpus::load(path)?;
    log::info!("{}: {} pairs", path.display(), c.len());
    Ok(c)
}

fn load_run(path: &Path, corpus: &Corpus, split: Split) -> anyhow::Result<RankingRun> {
    let (run, summary) = RankingRun::load(path, corpus, split)?;
    log::info!("{}: {summary:?}", path.display());
    Ok(run)
}

fn extract_features(a: &ExtractArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.dataset)?;
    let idf = IdfTable::fit_corpus(&corpus).context("fitting IDF on the train split")?;
    let store = FeatureStore::build(&corpus, &idf, a.strict_ast)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(
        out,
        "pair_id\tsplit\tcode_len\tquery_len\tast_nodes\tast_depth\treserved_count\tmax_tfidf\toverlap\tast_exact"
    )?;
    for p in corpus.pairs() {
        if a.split.is_some_and(|s| s != p.split) {
            continue;
        }
        let f = store
            .features(&p.pair_id, &p.code_id)
            .expect("features of a corpus pair");
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
            p.pair_id,
            p.split,
            f.code_len,
            f.query_len,
            f.ast_nodes,
            f.ast_depth,
            f.reserved_count,
            f.max_tfidf,
            f.overlap,
            f.ast_exact
        )?;
    }
    out.flush()?;
    Ok(())
}

fn audit(a: &AuditArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.dataset)?;
    let run = load_run(&a.run, &corpus, a.split)?;
    let idf = IdfTable::fit_corpus(&corpus).context("fitting IDF on the train split")?;
    let store = FeatureStore::build(&corpus, &idf, a.strict_ast)?;
    let per_case = per_case_mrr(&run, &corpus, a.split)?;
    let features = store.split_features(&corpus, a.split);
    let widths: BTreeMap<Bias, f64> = a.width.iter().copied().collect();
    let mut biases = a.bias.0.clone();
    biases.sort();
    biases.dedup();
    let reports = biases
        .iter()
        .map(|&b| {
            let w = widths.get(&b).copied().unwrap_or(b.default_width());
            build_report(&features, &per_case.outcomes, b, w)
        })
        .collect::<rankdebias::Result<Vec<_>>>()?;
    for r in &reports {
        log::info!(
            "bias {}: severity {:.6}, excluded {}",
            r.bias,
            r.severity,
            r.excluded
        );
    }
    emit_reports(&reports, &a.out)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.dataset)?;
    let run = load_run(&a.run, &corpus, a.split)?;
    let summary = evaluate(&per_case_mrr(&run, &corpus, a.split)?, &a.k.0)?;
    let mut out = io::stdout().lock();
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    } else {
        writeln!(out, "metric\tvalue")?;
        writeln!(out, "queries\t{}", summary.n_queries)?;
        writeln!(out, "excluded\t{}", summary.excluded)?;
        writeln!(out, "MRR\t{:.6}", summary.mrr)?;
        for (k, v) in &summary.hr {
            writeln!(out, "HR@{k}\t{v:.6}")?;
        }
    }
    Ok(())
}

/// Similarity over the given training pairs from the chosen sources.
fn similarity_index(
    s: &SimilarityArgs,
    train: &Corpus,
    train_ids: &[String],
    idf: &IdfTable,
) -> anyhow::Result<SimilarityIndex> {
    let texts = || -> anyhow::Result<Vec<(String, String)>> {
        train_ids
            .iter()
            .map(|id| match train.get(id) {
                Some(p) => Ok((id.clone(), p.query_text.clone())),
                None => bail!("training pair {id} is missing from the training dataset"),
            })
            .collect()
    };
    match (&s.embeddings, s.fallback_tfidf) {
        (Some(path), fallback) => {
            let table = EmbeddingTable::load(path)?;
            log::info!(
                "{}: {} vectors of dim {}",
                path.display(),
                table.len(),
                table.dim()
            );
            let index = SimilarityIndex::dense(table, train_ids.iter().cloned())?;
            if fallback {
                Ok(index.with_tfidf_fallback(idf.clone(), texts()?)?)
            } else {
                Ok(index)
            }
        }
        (None, true) => Ok(SimilarityIndex::tfidf(idf.clone(), texts()?)),
        (None, false) => bail!("one of --embeddings or --fallback-tfidf is required"),
    }
}

fn fit(a: &FitArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.train_dataset)?;
    let run = load_run(&a.train_run, &corpus, Split::Train)?;
    let idf = IdfTable::fit_corpus(&corpus).context("fitting IDF on the train split")?;
    let store = FeatureStore::build(&corpus, &idf, a.strict_ast)?;
    let params = RerankerParams {
        m: a.m,
        n: a.n,
        s: a.s,
        width: a.width.unwrap_or(a.bias.default_width()),
        min_support: a.min_support,
        boost_scope: a.boost_scope,
        cluster_space: a.cluster_space,
    };
    let model = fit_reranker(&corpus, &run, &store, a.bias, &params)?;
    if a.similarity.embeddings.is_some() || a.similarity.fallback_tfidf {
        // Fail now rather than at rerank time if training queries lack vectors.
        let ids: Vec<String> = model.train_mrr.keys().cloned().collect();
        similarity_index(&a.similarity, &corpus, &ids, &idf)?;
    }
    log::info!(
        "bias {}: T_m={:.6} P={:.6} bands={:?} disadvantaged={:?}",
        model.bias,
        model.t_m,
        model.p,
        model.bands,
        model.disadvantaged
    );
    let mut out = create(&a.out)?;
    out.write_all(model.to_json()?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn rerank(a: &RerankArgs) -> anyhow::Result<()> {
    let models = a
        .models
        .iter()
        .map(|p| RerankerModel::load(p).with_context(|| format!("loading model {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let models = order_models(models, &a.order.0)?;
    let train_ids: Vec<String> = models[0].train_mrr.keys().cloned().collect();
    if models.iter().any(|m| !m.train_mrr.keys().eq(train_ids.iter())) {
        bail!("models were fitted on different training pairs");
    }

    let test = load_corpus(&a.test_dataset)?;
    let run = load_run(&a.test_run, &test, Split::Test)?;
    let train_owned;
    let train = match &a.train_dataset {
        Some(p) if p != &a.test_dataset => {
            train_owned = load_corpus(p)?;
            &train_owned
        }
        _ => &test,
    };
    let idf = IdfTable::fit_corpus(train).context("fitting IDF on the train split")?;
    let mut store = FeatureStore::build(&test, &idf, a.strict_ast)?;
    if !std::ptr::eq(train, &test) {
        store.add_corpus(train, &idf, a.strict_ast)?;
    }
    let index = similarity_index(&a.similarity, train, &train_ids, &idf)?;
    let inputs = TestInputs {
        corpus: &test,
        run: &run,
        store: &store,
        index: &index,
    };
    let reranked = match a.mode {
        Mode::Sequential => compose_sequential(&models, &inputs)?,
        Mode::Parallel => compose_parallel(&models, &inputs)?,
    };
    let mut out = create(&a.out)?;
    reranked.write_tsv(&mut out)?;
    Ok(())
}

fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        seed: a.seed,
        n_train: a.n_train,
        n_test: a.n_test,
        pool_size: a.pool,
        bias: a.bias,
        penalty: a.penalty,
        threshold: a.threshold,
        shared_pool: !a.no_shared_pool,
    };
    generate(&spec)?.write(&a.out)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::ExtractFeatures(a) => extract_features(a),
        Command::Audit(a) => audit(a),
        Command::Eval(a) => eval(a),
        Command::Fit(a) => fit(a),
        Command::Rerank(a) => rerank(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RANKDEBIAS_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    log::info!("config: {cli:?}");
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
