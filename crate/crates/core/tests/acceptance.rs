//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always show up in `cargo test` output.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rankdebias::audit::{build_report, interval_index};
use rankdebias::clustering::{kmeans, KmeansParams};
use rankdebias::corpus::{canonical_code_id, Candidate, Corpus, QueryCodePair, RankingRun, Split};
use rankdebias::features::{FeatureStore, IdfTable};
use rankdebias::metrics::{hr_at_k, mrr, per_case_mrr, rank_of_truth};
use rankdebias::pyast::ast_metrics;
use rankdebias::reranker::{
    apply_reranker, compose_boosts_parallel, compose_boosts_sequential, fit_reranker, rerank_run,
    BoostVector, ClusterSpace, RerankerParams, TestInputs,
};
use rankdebias::similarity::SimilarityIndex;
use rankdebias::synth::{generate, SynthSpec};
use rankdebias::Bias;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    if t < limit {
        Ok(t)
    } else {
        Err(format!("took {t:?}, limit {limit:?}"))
    }
}

fn brute_rank(cands: &[Candidate], gt: &str) -> usize {
    let mut sorted = cands.to_vec();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.code_id.cmp(&b.code_id))
    });
    sorted.iter().position(|c| c.code_id == gt).unwrap() + 1
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut ranks = Vec::new();
    let mut brute = Vec::new();
    for i in 0..500 {
        let n = rng.random_range(1..=20);
        let mut cands: Vec<Candidate> = (0..n)
            .map(|j| Candidate::new(format!("c{j:02}"), levels[rng.random_range(0..levels.len())]))
            .collect();
        cands.shuffle(&mut rng);
        let gt = format!("c{:02}", rng.random_range(0..n));
        let r = rank_of_truth("q", &cands, &gt).map_err(|e| e.to_string())?;
        let b = brute_rank(&cands, &gt);
        ensure!(r == b, "instance {i}: rank {r}, brute force {b}");
        ranks.push(r);
        brute.push(b);
    }
    for chunk in ranks.chunks(25) {
        let want = chunk.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / chunk.len() as f64;
        let got = mrr(chunk).unwrap();
        ensure!((got - want).abs() <= 1e-12, "mrr {got} vs {want}");
        for k in 1..=20 {
            let want = chunk.iter().filter(|&&r| r <= k).count() as f64 / chunk.len() as f64;
            let got = hr_at_k(chunk, k).unwrap();
            ensure!((got - want).abs() <= 1e-12, "hr@{k} {got} vs {want}");
        }
    }
    let t = within(Duration::from_secs(5), start)?;
    Ok(format!("500 instances match brute force in {t:?}"))
}

fn tiny_corpus(codes: &[&str]) -> Corpus {
    let pairs = codes
        .iter()
        .enumerate()
        .map(|(i, c)| QueryCodePair::new(format!("t{i}"), format!("query {i}"), *c, Split::Train))
        .collect();
    Corpus::new(pairs).unwrap()
}

fn criterion_2() -> Outcome {
    let codes = ["a = 1", "b = 2", "c = 3", "d = 4"];
    let corpus = tiny_corpus(&codes);
    // Ranks 1, 2, 5, 1 give reciprocals 1, 0.5, 0.2, 1.
    let ranks = [1usize, 2, 5, 1];
    let lists = (0..4)
        .map(|i| {
            let mut l = vec![Candidate::new(canonical_code_id(codes[i]), 0.5)];
            l.extend((0..ranks[i] - 1).map(|j| Candidate::new(format!("d{j}"), 0.9)));
            l.extend((0..3).map(|j| Candidate::new(format!("e{j}"), 0.1)));
            (format!("t{i}"), l)
        })
        .collect();
    let run = RankingRun::from_lists(lists).unwrap();
    let idf = IdfTable::fit_corpus(&corpus).unwrap();
    let store = FeatureStore::build(&corpus, &idf, true).unwrap();
    let params = RerankerParams::new(Bias::CodeLength);
    let m = fit_reranker(&corpus, &run, &store, Bias::CodeLength, &params).map_err(|e| e.to_string())?;
    ensure!(m.t_m == 0.675, "T_m = {}", m.t_m);
    ensure!(m.p == 0.5, "P = {}", m.p);

    let perfect_lists = (0..4)
        .map(|i| {
            (
                format!("t{i}"),
                vec![
                    Candidate::new(canonical_code_id(codes[i]), 0.9),
                    Candidate::new("x", 0.1),
                ],
            )
        })
        .collect();
    let perfect = RankingRun::from_lists(perfect_lists).unwrap();
    let pm = fit_reranker(&corpus, &perfect, &store, Bias::CodeLength, &params).map_err(|e| e.to_string())?;
    ensure!(
        pm.p == 0.0 && pm.t_m == 1.0,
        "perfect run: T_m {} P {}",
        pm.t_m,
        pm.p
    );
    let index = SimilarityIndex::tfidf(
        idf.clone(),
        corpus
            .pairs()
            .iter()
            .map(|p| (p.pair_id.clone(), p.query_text.clone())),
    );
    // Apply to a test run shaped like the training one.
    let boosts = apply_reranker(
        &pm,
        &TestInputs {
            corpus: &corpus,
            run: &run,
            store: &store,
            index: &index,
        },
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        boosts.is_zero(),
        "perfect model boosted {} candidates",
        boosts.len()
    );
    ensure!(rerank_run(&run, &boosts) == run, "perfect model changed the run");
    Ok("T_m = 0.675, P = 0.5; perfect run gives P = 0 and identity".into())
}

fn random_run(rng: &mut ChaCha8Rng) -> RankingRun {
    let lists = (0..rng.random_range(1..=5))
        .map(|q| {
            let n = rng.random_range(1..=20);
            let list = (0..n)
                .map(|j| Candidate::new(format!("c{j:02}"), rng.random::<f64>()))
                .collect();
            (format!("q{q}"), list)
        })
        .collect();
    RankingRun::from_lists(lists).unwrap()
}

fn score_map(run: &RankingRun) -> BTreeMap<(String, String), f64> {
    run.iter()
        .flat_map(|(p, l)| {
            l.iter()
                .map(move |c| ((p.to_string(), c.code_id.clone()), c.score))
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for inst in 0..100 {
        let run = random_run(&mut rng);
        let k = rng.random_range(1..=5);
        let boosts: Vec<BoostVector> = (0..k)
            .map(|_| {
                let p: f64 = rng.random();
                let mut b = BoostVector::new();
                for (pair, list) in run.iter() {
                    for c in list {
                        if rng.random_bool(0.4) {
                            b.insert(pair, c.code_id.clone(), p);
                        }
                    }
                }
                b
            })
            .collect();
        let orig = score_map(&run);
        let seq = score_map(&compose_boosts_sequential(&run, &boosts));
        let par = score_map(&compose_boosts_parallel(&run, &boosts).unwrap());
        for ((p, c), s) in &orig {
            let sum: f64 = boosts.iter().map(|b| b.term(p, c)).sum();
            let got = seq[&(p.clone(), c.clone())];
            ensure!(
                (got - (s + sum)).abs() <= 1e-12,
                "instance {inst}: sequential {got} vs {}",
                s + sum
            );
            let got = par[&(p.clone(), c.clone())];
            let want = s + sum / k as f64;
            ensure!(
                (got - want).abs() <= 1e-12,
                "instance {inst}: parallel {got} vs {want}"
            );
        }
        let mut shuffled = boosts.clone();
        shuffled.shuffle(&mut rng);
        let perm = score_map(&compose_boosts_sequential(&run, &shuffled));
        for (key, s) in &seq {
            ensure!(
                (perm[key] - s).abs() <= 1e-9,
                "instance {inst}: order changed a final score"
            );
        }
    }
    let t = within(Duration::from_secs(5), start)?;
    Ok(format!(
        "100 instances, sums exact to 1e-12, order-invariant, {t:?}"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut checks = 0;
    for fit in 0..100 {
        let n = rng.random_range(5..40);
        let codes: Vec<String> = (0..n).map(|i| format!("v{i} = {i}")).collect();
        let code_refs: Vec<&str> = codes.iter().map(String::as_str).collect();
        let corpus = tiny_corpus(&code_refs);
        let mut recips = BTreeMap::new();
        let lists = corpus
            .pairs()
            .iter()
            .map(|p| {
                let mut l = vec![Candidate::new(p.code_id.clone(), levels[rng.random_range(0..5)])];
                for j in 0..rng.random_range(0..8) {
                    l.push(Candidate::new(format!("d{j}"), levels[rng.random_range(0..5)]));
                }
                recips.insert(p.pair_id.clone(), 1.0 / brute_rank(&l, &p.code_id) as f64);
                (p.pair_id.clone(), l)
            })
            .collect();
        let run = RankingRun::from_lists(lists).unwrap();
        let idf = IdfTable::fit_corpus(&corpus).unwrap();
        let store = FeatureStore::build(&corpus, &idf, true).unwrap();
        let pct = rng.random_range(1..=100u32);
        let params = RerankerParams {
            n: pct as f64,
            s: 1,
            cluster_space: ClusterSpace::Mrr,
            ..RerankerParams::new(Bias::CodeLength)
        };
        let m = fit_reranker(&corpus, &run, &store, Bias::CodeLength, &params).map_err(|e| e.to_string())?;

        let keep = (pct as usize * n).div_ceil(100);
        let mut ranked: Vec<(&String, f64)> = recips.iter().map(|(k, &v)| (k, v)).collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
        let top = &ranked[..keep];
        let lo = top.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = top.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);

        let mut probes: Vec<f64> = recips.values().copied().collect();
        probes.extend([lo, hi, lo - 1e-12, hi + 1e-12, 0.0, 1.0]);
        probes.extend((0..20).map(|_| rng.random::<f64>()));
        for avg in probes {
            let direct = lo <= avg && avg <= hi;
            ensure!(
                m.gate(avg) == direct,
                "fit {fit}: gate({avg}) = {}, rule says {direct}",
                m.gate(avg)
            );
            checks += 1;
        }
    }
    Ok(format!(
        "100 fits, {checks} gate decisions match the top-N% [min, max] rule"
    ))
}

/// (snippet, node_count, depth), derived by hand from the node conventions.
const PARSER_FIXTURES: &[(&str, usize, usize)] = &[
    ("x = 1", 4, 3),
    ("def f(a):\n    return a + 1", 7, 5),
    ("", 1, 1),
    ("for i in u:\n    if i:\n        pass", 7, 4),
    ("pass", 2, 2),
    ("f(x)", 5, 4),
    ("a.b", 4, 4),
    ("a[1]", 5, 4),
    ("x = a + b * c", 8, 5),
    ("x = -y", 5, 4),
    ("x = a and b and c", 7, 4),
    ("x = a < b < c", 7, 4),
    ("x += 1", 4, 3),
    ("import os", 3, 3),
    ("import os.path as p", 4, 3),
    ("from a import b, c", 5, 3),
    ("return x", 3, 3),
    ("x = [1, 2, 3]", 7, 4),
    ("x = (1, 2)", 6, 4),
    ("x = 1, 2", 6, 4),
    ("x = {'a': 1}", 6, 4),
    ("x = {1, 2}", 6, 4),
    ("x = [i for i in y]", 8, 5),
    ("x = [i for i in y if i]", 10, 5),
    ("x = (i for i in y)", 8, 5),
    ("f = lambda a: a", 6, 4),
    ("x = a if c else b", 7, 4),
    ("while x:\n    x -= 1", 6, 4),
    ("while x:\n    pass\nelse:\n    pass", 5, 3),
    ("if a:\n    pass\nelif b:\n    pass\nelse:\n    pass", 8, 4),
    ("class A(B):\n    pass", 4, 3),
    ("class A:\n    def f(self):\n        return self.x", 7, 6),
    ("with open(p) as f:\n    pass", 7, 4),
    (
        "try:\n    pass\nexcept E as e:\n    pass\nfinally:\n    pass",
        8,
        4,
    ),
    ("@dec\ndef f():\n    pass", 5, 4),
    ("def f(a=1, *args, **kw):\n    pass", 7, 3),
    ("x = y = 0", 5, 3),
    ("f(a, k=1)", 6, 4),
    ("x = not a", 5, 4),
    ("x = 'a' 'b'", 4, 3),
    ("x = a ** -b", 7, 5),
    ("del x", 3, 3),
    ("global x, y", 4, 3),
    ("raise ValueError('x')", 5, 4),
    ("a.b.c(d)", 7, 6),
    ("x = y[1:2]", 7, 4),
    ("if True:\n    x = 1", 6, 4),
    ("x = ...", 4, 3),
    ("assert x, 'msg'", 4, 3),
    ("for k, v in d.items():\n    pass", 9, 5),
];

const MALFORMED: &[&str] = &[
    "def broken(:\n",
    "x = (1,\n",
    "if a:\n    b = $\n    c = 1\n",
    "match x:\n    case 1:\n        pass\n",
    "if (y := 1):\n    pass\n",
    "print 'hi'\n",
];

fn criterion_5() -> Outcome {
    for &(code, nodes, depth) in PARSER_FIXTURES {
        let m = ast_metrics(code);
        ensure!(m.exact, "{code:?} fell back");
        ensure!(
            (m.node_count, m.depth) == (nodes, depth),
            "{code:?}: got ({}, {}), expected ({nodes}, {depth})",
            m.node_count,
            m.depth
        );
    }
    for code in MALFORMED {
        let m = ast_metrics(code);
        ensure!(!m.exact, "{code:?} parsed exactly");
        ensure!(
            m.node_count >= 1 && m.depth <= m.node_count,
            "{code:?}: bad estimate {m:?}"
        );
    }
    Ok(format!(
        "{} fixtures exact, {} malformed snippets take the fallback",
        PARSER_FIXTURES.len(),
        MALFORMED.len()
    ))
}

fn sse(points: &[f64], labels: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|j| {
            let m: Vec<f64> = points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == j)
                .map(|(p, _)| *p)
                .collect();
            if m.is_empty() {
                return 0.0;
            }
            let c = m.iter().sum::<f64>() / m.len() as f64;
            m.iter().map(|x| (x - c) * (x - c)).sum()
        })
        .sum()
}

fn criterion_6() -> Outcome {
    let pts: Vec<Vec<f64>> = [1.0, 2.0, 10.0, 11.0].iter().map(|&x| vec![x]).collect();
    let r = kmeans(&pts, &KmeansParams::new(2)).map_err(|e| e.to_string())?;
    let flat = [1.0, 2.0, 10.0, 11.0];
    // Brute force over all 2-partitions with both sides nonempty.
    let best = (1..(1u32 << 4) - 1)
        .map(|mask| {
            let labels: Vec<usize> = (0..4).map(|i| ((mask >> i) & 1) as usize).collect();
            (sse(&flat, &labels, 2), labels)
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap();
    let same = |a: &[usize], b: &[usize]| (0..4).all(|i| (0..4).all(|j| (a[i] == a[j]) == (b[i] == b[j])));
    ensure!(
        same(&r.assignments, &best.1),
        "partition {:?} vs brute force {:?}",
        r.assignments,
        best.1
    );
    ensure!(
        r.centers == vec![vec![1.5], vec![10.5]],
        "centers {:?}",
        r.centers
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for d in 0..100 {
        let n = rng.random_range(2..60);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)])
            .collect();
        let k = rng.random_range(1..=n.min(6));
        let a = kmeans(&pts, &KmeansParams::new(k)).map_err(|e| e.to_string())?;
        for w in a.sse_history.windows(2) {
            ensure!(
                w[1] <= w[0] + 1e-9 * w[0].max(1.0),
                "dataset {d}: SSE rose {} -> {}",
                w[0],
                w[1]
            );
        }
        let b = kmeans(&pts, &KmeansParams::new(k)).unwrap();
        ensure!(
            a.assignments == b.assignments
                && a.centers.iter().flatten().map(|x| x.to_bits()).eq(b
                    .centers
                    .iter()
                    .flatten()
                    .map(|x| x.to_bits())),
            "dataset {d}: runs differ"
        );
    }
    Ok("fixture partition optimal; SSE monotone and bitwise-stable on 100 datasets".into())
}

fn criterion_7() -> Outcome {
    let widths: Vec<f64> = Bias::ALL.iter().map(|b| b.default_width()).collect();
    ensure!(
        widths == [4.0, 1.0, 4.0, 1.0, 1.0, 0.15, 1.0],
        "default widths {widths:?}"
    );
    let data = generate(&SynthSpec {
        seed: 11,
        n_train: 400,
        n_test: 150,
        pool_size: 60,
        bias: Bias::AstNodes,
        penalty: 0.4,
        threshold: 10.0,
        shared_pool: true,
    })
    .map_err(|e| e.to_string())?;
    let idf = IdfTable::fit_corpus(&data.corpus).unwrap();
    let store = FeatureStore::build(&data.corpus, &idf, false).unwrap();
    for (split, run) in [(Split::Train, &data.train_run), (Split::Test, &data.test_run)] {
        let pc = per_case_mrr(run, &data.corpus, split).unwrap();
        let feats = store.split_features(&data.corpus, split);
        for bias in Bias::ALL {
            let r =
                build_report(&feats, &pc.outcomes, bias, bias.default_width()).map_err(|e| e.to_string())?;
            let counted: Vec<f64> = feats
                .iter()
                .filter(|(_, f)| f.usable_for(bias))
                .filter_map(|(id, _)| pc.outcomes.get(id).map(|o| o.reciprocal))
                .collect();
            let overall = counted.iter().sum::<f64>() / counted.len() as f64;
            let weighted = r
                .rows
                .iter()
                .map(|row| row.count as f64 * row.mean_mrr.unwrap_or(0.0))
                .sum::<f64>()
                / r.counted() as f64;
            ensure!(
                (weighted - overall).abs() <= 1e-9,
                "bias {bias}: {weighted} vs {overall}"
            );
            ensure!(
                r.counted() + r.excluded == feats.len(),
                "bias {bias}: counts do not add up"
            );
        }
    }
    ensure!(interval_index(0.30, 0.15).unwrap() == 2, "0.30 / 0.15 boundary");
    Ok("weighted row means equal overall MRR for all 7 biases; widths 4/1/4/1/1/0.15/1".into())
}

/// Expected values from tests/oracle/synth_oracle.py on the synth output of
/// the spec below (seed 42).
mod oracle {
    pub const T_M: f64 = 0.5222917138648184;
    pub const P: f64 = 0.4795;
    pub const DISADVANTAGED: [usize; 2] = [0, 1];
    pub const BOOSTED: usize = 286;
    pub const MRR_BEFORE: f64 = 0.5251259301792153;
    pub const MRR_AFTER: f64 = 1.0;
    pub const GROUP_COUNT: usize = 286;
    pub const GROUP_BEFORE: f64 = 0.0037606926836683597;
    pub const GROUP_AFTER: f64 = 1.0;
    pub const SEVERITY_BEFORE: f64 = 0.8093571943202342;
    pub const SEVERITY_AFTER: f64 = 0.0;
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        seed: 42,
        n_train: 2000,
        n_test: 600,
        pool_size: 600,
        bias: Bias::CodeLength,
        penalty: 0.5,
        threshold: 8.0,
        shared_pool: true,
    };
    let data = generate(&spec).map_err(|e| e.to_string())?;
    let c = &data.corpus;
    let idf = IdfTable::fit_corpus(c).unwrap();
    let store = FeatureStore::build(c, &idf, false).unwrap();
    let params = RerankerParams::new(Bias::CodeLength);
    let model =
        fit_reranker(c, &data.train_run, &store, Bias::CodeLength, &params).map_err(|e| e.to_string())?;
    let index = SimilarityIndex::dense(data.embeddings.clone(), model.train_mrr.keys().cloned())
        .map_err(|e| e.to_string())?;
    let inputs = TestInputs {
        corpus: c,
        run: &data.test_run,
        store: &store,
        index: &index,
    };
    let boosts = apply_reranker(&model, &inputs).map_err(|e| e.to_string())?;
    let reranked = rerank_run(&data.test_run, &boosts);

    let feats = store.split_features(c, Split::Test);
    let summary = |run: &RankingRun| {
        let pc = per_case_mrr(run, c, Split::Test).unwrap();
        let all: Vec<usize> = pc.ranks();
        let group: Vec<f64> = pc
            .outcomes
            .iter()
            .filter(|(id, _)| model.is_disadvantaged(feats[*id].code_len as f64).unwrap())
            .map(|(_, o)| o.reciprocal)
            .collect();
        let report = build_report(&feats, &pc.outcomes, Bias::CodeLength, 4.0).unwrap();
        (
            mrr(&all).unwrap(),
            group.len(),
            group.iter().sum::<f64>() / group.len() as f64,
            report.severity,
        )
    };
    let (mrr_b, n_b, grp_b, sev_b) = summary(&data.test_run);
    let (mrr_a, n_a, grp_a, sev_a) = summary(&reranked);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;

    ensure!(
        close(model.t_m, oracle::T_M) && model.p == oracle::P,
        "T_m {} P {}",
        model.t_m,
        model.p
    );
    ensure!(
        model.disadvantaged == BTreeSet::from(oracle::DISADVANTAGED),
        "disadvantaged {:?}",
        model.disadvantaged
    );
    ensure!(boosts.len() == oracle::BOOSTED, "boosted {}", boosts.len());
    ensure!(
        n_b == oracle::GROUP_COUNT && n_a == oracle::GROUP_COUNT,
        "group size {n_b}"
    );
    ensure!(
        close(mrr_b, oracle::MRR_BEFORE) && close(mrr_a, oracle::MRR_AFTER),
        "MRR {mrr_b} -> {mrr_a}"
    );
    ensure!(
        close(grp_b, oracle::GROUP_BEFORE) && close(grp_a, oracle::GROUP_AFTER),
        "group {grp_b} -> {grp_a}"
    );
    ensure!(
        close(sev_b, oracle::SEVERITY_BEFORE) && close(sev_a, oracle::SEVERITY_AFTER),
        "severity {sev_b} -> {sev_a}"
    );
    ensure!(mrr_a > mrr_b, "(a) MRR did not rise");
    ensure!(grp_a > grp_b, "(b) disadvantaged group did not improve");
    ensure!(sev_a.abs() < sev_b.abs(), "(c) severity not closer to 0");
    let t = within(Duration::from_secs(30), start)?;
    Ok(format!(
        "MRR {mrr_b:.4} -> {mrr_a:.4}, group {grp_b:.4} -> {grp_a:.4}, severity {sev_b:.4} -> {sev_a:.4}, {t:?}"
    ))
}

fn cli(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rankdebias"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            files.insert(
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            );
        }
    }
    files
}

/// Runs every subcommand twice into separate directories and compares
/// outputs byte for byte.
fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut runs = Vec::new();
    for round in 0..2 {
        let d = tmp.path().join(format!("r{round}"));
        let mut stdout = Vec::new();
        let ds = s(&d.join("dataset.jsonl"));
        let emb = s(&d.join("emb.tsv"));
        cli(&[
            "synth",
            "--seed",
            "5",
            "--n-train",
            "200",
            "--n-test",
            "60",
            "--pool",
            "40",
            "--out",
            &s(&d),
        ])?;
        cli(&[
            "extract-features",
            "--dataset",
            &ds,
            "--out",
            &s(&d.join("features.tsv")),
        ])?;
        cli(&[
            "audit",
            "--dataset",
            &ds,
            "--run",
            &s(&d.join("test.tsv")),
            "--out",
            &s(&d.join("audit")),
        ])?;
        for bias in ["1", "7"] {
            cli(&[
                "fit",
                "--train-dataset",
                &ds,
                "--train-run",
                &s(&d.join("train.tsv")),
                "--bias",
                bias,
                "--embeddings",
                &emb,
                "--out",
                &s(&d.join(format!("m{bias}.json"))),
            ])?;
        }
        let models = format!("{},{}", s(&d.join("m1.json")), s(&d.join("m7.json")));
        for mode in ["sequential", "parallel"] {
            cli(&[
                "rerank",
                "--models",
                &models,
                "--mode",
                mode,
                "--test-dataset",
                &ds,
                "--test-run",
                &s(&d.join("test.tsv")),
                "--embeddings",
                &emb,
                "--out",
                &s(&d.join(format!("{mode}.tsv"))),
            ])?;
        }
        for extra in [&[][..], &["--json"][..]] {
            let mut args = vec!["eval", "--dataset", &ds, "--run"];
            let run = s(&d.join("sequential.tsv"));
            args.push(&run);
            args.extend_from_slice(extra);
            stdout.push(cli(&args)?.stdout);
        }
        runs.push((dir_bytes(&d), dir_bytes(&d.join("audit")), stdout));
    }
    ensure!(
        runs[0].0.len() == 9,
        "expected 9 output files, got {:?}",
        runs[0].0.keys()
    );
    ensure!(runs[0].0 == runs[1].0, "top-level outputs differ");
    ensure!(runs[0].1 == runs[1].1, "audit outputs differ");
    ensure!(runs[0].2 == runs[1].2, "eval output differs");

    let usage = Command::new(env!("CARGO_BIN_EXE_rankdebias"))
        .args(["eval", "--dataset", "x.jsonl"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        usage.status.code() == Some(1),
        "missing flag exit code {:?}",
        usage.status.code()
    );
    let data = Command::new(env!("CARGO_BIN_EXE_rankdebias"))
        .args([
            "eval",
            "--dataset",
            "/nonexistent.jsonl",
            "--run",
            "/nonexistent.tsv",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        data.status.code() == Some(2),
        "data error exit code {:?}",
        data.status.code()
    );
    Ok(format!(
        "6 subcommands byte-identical across two runs ({} files, {} audit files)",
        runs[0].0.len(),
        runs[0].1.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle suite", criterion_1),
        ("boost constant fixture", criterion_2),
        ("composition algebra", criterion_3),
        ("gate reduction", criterion_4),
        ("parser fixture suite", criterion_5),
        ("k-means", criterion_6),
        ("audit consistency", criterion_7),
        ("synthetic end-to-end debiasing", criterion_8),
        ("CLI reproducibility", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
