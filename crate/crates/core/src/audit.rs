//! Interval-grouped bias reports: how many evaluated pairs fall in each
//! feature interval and how well the model ranks them there.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bias::Bias;
use crate::error::{Error, Result};
use crate::features::BiasFeatures;
use crate::metrics::RankOutcome;

/// `floor(value / width)`, corrected so that `value` always lies in
/// `[i * width, (i + 1) * width)` despite rounding in the division.
pub fn interval_index(value: f64, width: f64) -> Result<usize> {
    if !width.is_finite() || width <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "interval width must be positive, got {width}"
        )));
    }
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "feature value must be non-negative, got {value}"
        )));
    }
    let mut i = (value / width).floor();
    if i * width > value {
        i -= 1.0;
    } else if (i + 1.0) * width <= value {
        i += 1.0;
    }
    Ok(i as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty intervals.
    pub mean_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub bias: Bias,
    pub width: f64,
    pub rows: Vec<IntervalRow>,
    /// Spearman correlation between feature value and reciprocal rank.
    pub severity: f64,
    /// Pairs left out: missing ground truth, or an inexact parse for the
    /// AST biases.
    pub excluded: usize,
}

impl BiasReport {
    pub fn counted(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. 0 when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return 0.0;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Aggregates per-pair outcomes by feature interval.
///
/// `features` defines the evaluated pairs; pairs without an outcome (ground
/// truth missing) or with an inexact parse for biases 3 and 4 are counted in
/// `excluded`.
pub fn build_report(
    features: &BTreeMap<String, BiasFeatures>,
    outcomes: &BTreeMap<String, RankOutcome>,
    bias: Bias,
    width: f64,
) -> Result<BiasReport> {
    if features.is_empty() {
        return Err(Error::Empty("no pairs to audit"));
    }
    if let Some(id) = outcomes.keys().find(|id| !features.contains_key(*id)) {
        return Err(Error::InvalidArgument(format!(
            "outcome for {id} has no features"
        )));
    }
    let mut excluded = 0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (pair_id, f) in features {
        let Some(o) = outcomes.get(pair_id) else {
            excluded += 1;
            continue;
        };
        if !f.usable_for(bias) {
            excluded += 1;
            continue;
        }
        let value = f.value(bias);
        let g = groups.entry(interval_index(value, width)?).or_default();
        g.0 += 1;
        g.1 += o.reciprocal;
        xs.push(value);
        ys.push(o.reciprocal);
    }
    let top = groups.keys().next_back().map_or(0, |&i| i + 1);
    let rows = (0..top)
        .map(|i| {
            let (count, sum) = groups.get(&i).copied().unwrap_or_default();
            IntervalRow {
                lo: i as f64 * width,
                hi: (i + 1) as f64 * width,
                count,
                mean_mrr: (count > 0).then(|| sum / count as f64),
            }
        })
        .collect();
    Ok(BiasReport {
        bias,
        width,
        rows,
        severity: spearman(&xs, &ys),
        excluded,
    })
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn round6(x: f64) -> f64 {
    fmt6(x).parse().unwrap()
}

#[derive(Serialize)]
struct SummaryEntry {
    bias_id: u8,
    feature: &'static str,
    width: f64,
    severity: f64,
    counted: usize,
    excluded: usize,
    intervals: usize,
}

#[derive(Serialize)]
struct Summary {
    reports: Vec<SummaryEntry>,
}

pub fn write_csv<W: Write>(report: &BiasReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "interval_lo,interval_hi,count,mean_mrr")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt6(r.lo),
            fmt6(r.hi),
            r.count,
            r.mean_mrr.map(fmt6).unwrap_or_default()
        )?;
    }
    w.flush()
}

/// Writes `bias<id>.csv` per report and one `summary.json`, returning the
/// written paths.
pub fn emit_reports(reports: &[BiasReport], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for r in reports {
        let path = dir.join(format!("bias{}.csv", r.bias.id()));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_csv(r, BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let summary = Summary {
        reports: reports
            .iter()
            .map(|r| SummaryEntry {
                bias_id: r.bias.id(),
                feature: r.bias.name(),
                width: r.width,
                severity: round6(r.severity),
                counted: r.counted(),
                excluded: r.excluded,
                intervals: r.rows.len(),
            })
            .collect(),
    };
    let path = dir.join("summary.json");
    let mut body = serde_json::to_string_pretty(&summary)?;
    body.push('\n');
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn emit_report(report: &BiasReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    emit_reports(std::slice::from_ref(report), dir)
}

/// Parses a CSV written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<IntervalRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::parse(path, i + 1, m.to_string());
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        rows.push(IntervalRow {
            lo: f[0].parse().map_err(|_| bad("bad interval_lo"))?,
            hi: f[1].parse().map_err(|_| bad("bad interval_hi"))?,
            count: f[2].parse().map_err(|_| bad("bad count"))?,
            mean_mrr: if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse().map_err(|_| bad("bad mean_mrr"))?)
            },
        });
    }
    Ok(rows)
}
