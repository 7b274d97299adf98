//! Seeded generator of corpora, ranking runs and query embeddings with a
//! planted bias.
//!
//! All randomness comes from ChaCha8 seeded through `seed_from_u64`, whose
//! output stream is fixed across platforms. Scores demote ground truths
//! whose planted feature is below a threshold:
//!
//! * ground truth: `1 - penalty` if the feature is below the threshold,
//!   else `1`;
//! * distractors: uniform in `[0, 0.9)`.
//!
//! Every test query is a word-shuffled paraphrase of a distinct training
//! query, and its embedding is the training twin's vector plus small noise,
//! so the twin is its nearest training neighbour.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bias::Bias;
use crate::corpus::{Candidate, Corpus, EmbeddingTable, QueryCodePair, RankingRun, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureStore, IdfTable};

pub const VOCAB_SIZE: usize = 200;
pub const EMBEDDING_DIM: usize = 32;
const DISTRACTOR_MAX: f64 = 0.9;
const TWIN_NOISE: f64 = 0.01;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Candidates per query, ground truth included.
    pub pool_size: usize,
    pub bias: Bias,
    pub penalty: f64,
    pub threshold: f64,
    /// Test pairs reuse their training twin's code.
    pub shared_pool: bool,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument(
                "n_train and n_test must be at least 1".into(),
            ));
        }
        if self.n_test > self.n_train {
            return Err(Error::InvalidArgument(format!(
                "n_test = {} exceeds n_train = {}: every test query needs its own training twin",
                self.n_test, self.n_train
            )));
        }
        if self.pool_size == 0 || self.pool_size > self.n_test {
            return Err(Error::InvalidArgument(format!(
                "pool size must be in 1..={} (the smaller split's code count), got {}",
                self.n_test, self.pool_size
            )));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "penalty must be non-negative, got {}",
                self.penalty
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub corpus: Corpus,
    pub train_run: RankingRun,
    pub test_run: RankingRun,
    pub embeddings: EmbeddingTable,
}

impl SynthData {
    /// Writes `dataset.jsonl`, `train.tsv`, `test.tsv` and `emb.tsv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.save(dir.join("dataset.jsonl"))?;
        self.train_run.save(dir.join("train.tsv"))?;
        self.test_run.save(dir.join("test.tsv"))?;
        self.embeddings.save(dir.join("emb.tsv"))
    }
}

/// The 200 words: consonant-vowel syllable pairs.
pub fn vocabulary() -> Vec<String> {
    let syllables: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
        .collect();
    let n = syllables.len();
    (0..VOCAB_SIZE)
        .map(|i| format!("{}{}", syllables[i % n], syllables[(3 * (i / n) + 11) % n]))
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    &words[rng.random_range(0..words.len())]
}

/// One snippet. Half the templates stay under 8 lexical tokens.
fn gen_code(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    let a = pick(rng, vocab);
    let b = pick(rng, vocab);
    let c = pick(rng, vocab);
    let f = pick(rng, vocab);
    if rng.random_bool(0.5) {
        match rng.random_range(0..5) {
            0 => format!("{a} = {b}"),
            1 => format!("{a} = {b} + {c}"),
            2 => format!("{f}({a})"),
            3 => format!("{a} = {f}({b})"),
            _ => format!("{a}.{f}({b})"),
        }
    } else {
        match rng.random_range(0..8) {
            0 => format!("def {f}({a}):\n    return {a}\n"),
            1 => format!("def {f}({a}, {b}):\n    return {a} + {b}\n"),
            2 => format!("def {f}({a}):\n    {b} = {a} * 2\n    return {b}\n"),
            3 => format!("for {a} in {b}:\n    {f}({a})\n"),
            4 => format!("if {a}:\n    {b} = {c}\nelse:\n    {b} = {a}\n"),
            5 => format!(
                "def {f}({a}):\n    for {b} in {a}:\n        if {b}:\n            return {b}\n    return None\n"
            ),
            6 => format!("while {a}:\n    {a} = {f}({a})\n"),
            _ => format!("with open({a}) as {b}:\n    {c} = {b}.read()\n"),
        }
    }
}

fn unique_code(rng: &mut ChaCha8Rng, vocab: &[String], seen: &mut BTreeSet<String>) -> String {
    loop {
        let code = gen_code(rng, vocab);
        if seen.insert(code.clone()) {
            return code;
        }
    }
}

fn gen_vector(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..EMBEDDING_DIM)
        .map(|_| round6(rng.random_range(-1.0..1.0)))
        .collect()
}

fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap()
}

fn gen_run(
    rng: &mut ChaCha8Rng,
    corpus: &Corpus,
    store: &FeatureStore,
    split: Split,
    spec: &SynthSpec,
) -> Result<RankingRun> {
    let pool: Vec<&str> = corpus.pool(split).into_iter().collect();
    let mut lists = std::collections::BTreeMap::new();
    for pair in corpus.split(split) {
        let g = pool
            .binary_search(&pair.code_id.as_str())
            .expect("gt in its split pool");
        let feature = store
            .features(&pair.pair_id, &pair.code_id)
            .expect("features of a corpus pair")
            .value(spec.bias);
        let gt_score = if feature < spec.threshold {
            1.0 - spec.penalty
        } else {
            1.0
        };
        let mut list = Vec::with_capacity(spec.pool_size);
        list.push(Candidate::new(pair.code_id.clone(), gt_score));
        for i in index::sample(rng, pool.len() - 1, spec.pool_size - 1) {
            let j = if i >= g { i + 1 } else { i };
            list.push(Candidate::new(pool[j], rng.random::<f64>() * DISTRACTOR_MAX));
        }
        lists.insert(pair.pair_id.clone(), list);
    }
    RankingRun::from_lists(lists)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = vocabulary();
    let mut seen = BTreeSet::new();

    let mut pairs = Vec::with_capacity(spec.n_train + spec.n_test);
    let mut train_words = Vec::with_capacity(spec.n_train);
    for i in 0..spec.n_train {
        let len = rng.random_range(3..=8);
        let words: Vec<&str> = (0..len).map(|_| pick(&mut rng, &vocab)).collect();
        let code = unique_code(&mut rng, &vocab, &mut seen);
        pairs.push(QueryCodePair::new(
            format!("t{i:05}"),
            words.join(" "),
            code,
            Split::Train,
        ));
        train_words.push(words);
    }

    let twins = index::sample(&mut rng, spec.n_train, spec.n_test).into_vec();
    for (i, &t) in twins.iter().enumerate() {
        let mut words = train_words[t].clone();
        words.shuffle(&mut rng);
        let code = if spec.shared_pool {
            pairs[t].code_text.clone()
        } else {
            unique_code(&mut rng, &vocab, &mut seen)
        };
        pairs.push(QueryCodePair::new(
            format!("q{i:05}"),
            words.join(" "),
            code,
            Split::Test,
        ));
    }
    let corpus = Corpus::new(pairs)?;

    let mut embeddings = EmbeddingTable::new(EMBEDDING_DIM)?;
    let mut train_vecs = Vec::with_capacity(spec.n_train);
    for i in 0..spec.n_train {
        let v = gen_vector(&mut rng);
        embeddings.insert(format!("t{i:05}"), v.clone())?;
        train_vecs.push(v);
    }
    for (i, &t) in twins.iter().enumerate() {
        let v = train_vecs[t]
            .iter()
            .map(|x| round6(x + rng.random_range(-TWIN_NOISE..TWIN_NOISE)))
            .collect();
        embeddings.insert(format!("q{i:05}"), v)?;
    }

    let idf = IdfTable::fit_corpus(&corpus)?;
    let store = FeatureStore::build(&corpus, &idf, false)?;
    let train_run = gen_run(&mut rng, &corpus, &store, Split::Train, spec)?;
    let test_run = gen_run(&mut rng, &corpus, &store, Split::Test, spec)?;
    Ok(SynthData {
        corpus,
        train_run,
        test_run,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::build_report;
    use crate::metrics::per_case_mrr;

    fn spec() -> SynthSpec {
        SynthSpec {
            seed: 7,
            n_train: 300,
            n_test: 100,
            pool_size: 50,
            bias: Bias::CodeLength,
            penalty: 0.5,
            threshold: 8.0,
            shared_pool: true,
        }
    }

    #[test]
    fn vocabulary_is_distinct() {
        let v = vocabulary();
        assert_eq!(v.len(), 200);
        assert_eq!(v.iter().collect::<BTreeSet<_>>().len(), 200);
        assert_eq!(v[0], "bafe");
    }

    #[test]
    fn deterministic() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 8, ..spec() }).unwrap();
        assert_ne!(a.train_run, c.train_run);
    }

    #[test]
    fn shapes() {
        let d = generate(&spec()).unwrap();
        assert_eq!(d.corpus.split(Split::Train).count(), 300);
        assert_eq!(d.corpus.split(Split::Test).count(), 100);
        assert_eq!(d.corpus.pool(Split::Train).len(), 300);
        assert!(d.test_run.iter().all(|(_, l)| l.len() == 50));
        assert_eq!(d.embeddings.len(), 400);
        // Test codes come from the training pool.
        let train = d.corpus.pool(Split::Train);
        assert!(d.corpus.pool(Split::Test).is_subset(&train));

        let fresh = generate(&SynthSpec {
            shared_pool: false,
            ..spec()
        })
        .unwrap();
        assert!(fresh
            .corpus
            .pool(Split::Test)
            .is_disjoint(&fresh.corpus.pool(Split::Train)));
    }

    #[test]
    fn every_code_parses() {
        let d = generate(&spec()).unwrap();
        for (_, text) in d.corpus.codes() {
            assert!(crate::pyast::ast_metrics(text).exact, "{text}");
        }
    }

    #[test]
    fn contradictory_sizes() {
        assert!(generate(&SynthSpec {
            n_test: 301,
            ..spec()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            pool_size: 101,
            ..spec()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            pool_size: 0,
            ..spec()
        })
        .is_err());
        assert!(generate(&SynthSpec { n_train: 0, ..spec() }).is_err());
    }

    fn train_report(d: &SynthData, bias: Bias) -> crate::audit::BiasReport {
        let idf = IdfTable::fit_corpus(&d.corpus).unwrap();
        let store = FeatureStore::build(&d.corpus, &idf, false).unwrap();
        let pc = per_case_mrr(&d.train_run, &d.corpus, Split::Train).unwrap();
        let feats = store.split_features(&d.corpus, Split::Train);
        build_report(&feats, &pc.outcomes, bias, bias.default_width()).unwrap()
    }

    #[test]
    fn planted_bias_shows_in_the_audit() {
        let d = generate(&spec()).unwrap();
        let r = train_report(&d, Bias::CodeLength);
        let mean = |rows: &[crate::audit::IntervalRow]| {
            let (c, s) = rows.iter().fold((0, 0.0), |(c, s), r| {
                (c + r.count, s + r.count as f64 * r.mean_mrr.unwrap_or(0.0))
            });
            s / c as f64
        };
        assert!(mean(&r.rows[..2]) < mean(&r.rows[2..]));
        assert!(r.severity > 0.5);
    }

    #[test]
    fn zero_penalty_has_no_bias() {
        let d = generate(&SynthSpec {
            penalty: 0.0,
            n_train: 500,
            n_test: 100,
            ..spec()
        })
        .unwrap();
        let r = train_report(&d, Bias::CodeLength);
        assert!(r.severity.abs() < 0.1);
    }
}
