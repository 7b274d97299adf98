//! Deterministic Lloyd k-means.
//!
//! Seeding is by quantiles of the lexicographically sorted points, so the
//! result is a pure function of the input.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KmeansParams {
    pub fn new(k: usize) -> Self {
        KmeansParams {
            k,
            max_iter: 100,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Within-cluster sum of squares after every assignment step.
    pub sse_history: Vec<f64>,
}

impl KmeansResult {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }

    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&0.0)
    }
}

/// A cluster of per-case reciprocal ranks: its center plus the closed range
/// spanned by its members.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: Vec<f64>,
    pub member_ids: Vec<String>,
    pub mrr_min: f64,
    pub mrr_max: f64,
}

/// Groups `ids`/`reciprocals` by a k-means result computed on points in the
/// same order. Empty clusters are dropped.
pub fn mrr_clusters(result: &KmeansResult, ids: &[String], reciprocals: &[f64]) -> Vec<Cluster> {
    (0..result.centers.len())
        .filter_map(|j| {
            let members: Vec<usize> = result.members(j).collect();
            if members.is_empty() {
                return None;
            }
            let (lo, hi) = members
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(reciprocals[i]), hi.max(reciprocals[i]))
                });
            Some(Cluster {
                center: result.centers[j].clone(),
                member_ids: members.iter().map(|&i| ids[i].clone()).collect(),
                mrr_min: lo,
                mrr_max: hi,
            })
        })
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Nearest center per point, ties to the lower index. Returns the
/// assignment and each point's squared distance.
fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, dist2(p, &centers[0]));
            for (j, c) in centers.iter().enumerate().skip(1) {
                let d = dist2(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

pub fn kmeans(points: &[Vec<f64>], params: &KmeansParams) -> Result<KmeansResult> {
    let n = points.len();
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {n} points")));
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lexicographic(&points[a], &points[b]).then(a.cmp(&b)));
    // Seed j is the point at sorted position floor((j + 0.5) * n / k).
    let mut centers: Vec<Vec<f64>> = (0..k)
        .map(|j| points[order[(2 * j + 1) * n / (2 * k)]].clone())
        .collect();

    let mut sse_history = Vec::new();
    let mut iterations = 0;
    let mut assignments;
    loop {
        let (a, d) = assign(points, &centers);
        assignments = a;
        sse_history.push(d.iter().sum());
        if iterations == params.max_iter {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centers)
            .map(|((s, &cnt), old)| {
                if cnt == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|x| x / cnt as f64).collect()
                }
            })
            .collect();

        // Re-seed empty clusters with the points farthest from their centers.
        let mut taken = vec![false; n];
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .fold(None, |best: Option<(usize, f64)>, i| match best {
                    Some((_, bd)) if d[i] <= bd => best,
                    _ => Some((i, d[i])),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                next[j] = points[i].clone();
            }
        }

        let movement: f64 = centers.iter().zip(&next).map(|(a, b)| dist2(a, b).sqrt()).sum();
        centers = next;
        if movement <= params.tol {
            let (a, d) = assign(points, &centers);
            assignments = a;
            sse_history.push(d.iter().sum());
            break;
        }
    }

    Ok(KmeansResult {
        assignments,
        centers,
        iterations,
        sse_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts1(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_obvious_groups() {
        let r = kmeans(&pts1(&[1.0, 2.0, 10.0, 11.0]), &KmeansParams::new(2)).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 1, 1]);
        assert_eq!(r.centers, vec![vec![1.5], vec![10.5]]);
        assert_eq!(r.sse(), 1.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let r = kmeans(&pts1(&[1.0, 2.0, 6.0]), &KmeansParams::new(1)).unwrap();
        assert_eq!(r.centers, vec![vec![3.0]]);
        assert!(r.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn k_equals_n_has_zero_sse() {
        let pts = vec![vec![0.0, 1.0], vec![5.0, 5.0], vec![-3.0, 2.0], vec![9.0, -1.0]];
        let r = kmeans(&pts, &KmeansParams::new(4)).unwrap();
        assert_eq!(r.sse(), 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn errors() {
        assert!(kmeans(&pts1(&[1.0]), &KmeansParams::new(2)).is_err());
        assert!(kmeans(&pts1(&[1.0, f64::NAN]), &KmeansParams::new(1)).is_err());
        assert!(kmeans(&pts1(&[1.0]), &KmeansParams::new(0)).is_err());
        assert!(kmeans(&[vec![1.0], vec![1.0, 2.0]], &KmeansParams::new(1)).is_err());
    }

    #[test]
    fn duplicate_points_reseed_empty_clusters() {
        let r = kmeans(&pts1(&[3.0, 3.0, 3.0, 8.0]), &KmeansParams::new(3)).unwrap();
        assert_eq!(r.assignments.len(), 4);
        assert_eq!(r.sse(), 0.0);
    }

    #[test]
    fn clusters_carry_mrr_ranges() {
        let pts = pts1(&[1.0, 0.9, 0.1, 0.2]);
        let r = kmeans(&pts, &KmeansParams::new(2)).unwrap();
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let recips = [1.0, 0.9, 0.1, 0.2];
        let cs = mrr_clusters(&r, &ids, &recips);
        let mut ranges: Vec<(f64, f64)> = cs.iter().map(|c| (c.mrr_min, c.mrr_max)).collect();
        ranges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(ranges, vec![(0.1, 0.2), (0.9, 1.0)]);
    }
}
