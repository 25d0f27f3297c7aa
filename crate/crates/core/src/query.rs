//! Choosing which segment pairs to show the teacher.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;
use crate::replay::{ReplayBuffer, ReplayError, Segment};
use crate::reward::{binary_entropy, disagreement, PreferenceError, RewardEnsemble};

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("cannot select {m} queries from {n} candidates")]
    TooFewCandidates { m: usize, n: usize },
    #[error("k-means needs at least k = {k} points, got {n}")]
    KMeans { k: usize, n: usize },
    #[error("intermediate pool {m_prime} must lie between M = {m} and N = {n}")]
    Intermediate { m: usize, m_prime: usize, n: usize },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    Uniform,
    Entropy,
    Disagreement,
    Coverage,
    EntropyCoverage,
    DisagreementCoverage,
}

impl QueryStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryStrategy::Uniform => "uniform",
            QueryStrategy::Entropy => "entropy",
            QueryStrategy::Disagreement => "disagreement",
            QueryStrategy::Coverage => "coverage",
            QueryStrategy::EntropyCoverage => "entropy_coverage",
            QueryStrategy::DisagreementCoverage => "disagreement_coverage",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub strategy: QueryStrategy,
    /// Candidate pool size `N`; defaults to `10·M`.
    pub pool: Option<usize>,
    /// Hybrid intermediate size `M′`; defaults to `5·M`.
    pub intermediate: Option<usize>,
    /// Score entropy with member 0 instead of the ensemble mean.
    pub entropy_single_member: bool,
    pub kmeans_iters: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            strategy: QueryStrategy::Disagreement,
            pool: None,
            intermediate: None,
            entropy_single_member: false,
            kmeans_iters: 25,
        }
    }
}

impl QueryConfig {
    pub fn pool_size(&self, m: usize) -> usize {
        self.pool.unwrap_or(10 * m)
    }

    pub fn intermediate_size(&self, m: usize) -> usize {
        self.intermediate.unwrap_or(5 * m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub pairs: Vec<(Segment, Segment)>,
    pub strategy: QueryStrategy,
    pub pool_size: usize,
    pub intermediate: Option<usize>,
    /// Candidate index of each selected pair.
    pub candidates: Vec<usize>,
    /// Acquisition score of each selected pair; empty for uniform/coverage.
    pub scores: Vec<f64>,
}

/// Indices of the `m` largest scores; equal scores go to the lower index.
pub fn top_m(scores: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Mean-pooled `[s; a]` of each segment, concatenated.
pub fn pair_features(first: &Segment, second: &Segment) -> Vec<f64> {
    let mut out = Vec::new();
    for seg in [first, second] {
        let t0 = &seg.transitions()[0];
        let mut acc = vec![0.0; t0.state.len() + t0.action.len()];
        for t in seg.transitions() {
            for (a, v) in acc.iter_mut().zip(t.state.iter().chain(&t.action)) {
                *a += v;
            }
        }
        let l = seg.len() as f64;
        out.extend(acc.iter().map(|a| a / l));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after seeding and after each Lloyd step.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    (0..centroids.rows())
        .map(|c| (c, sq_dist(point, centroids.row(c))))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("at least one centroid")
}

/// Lloyd's algorithm with D²-weighted seeding.
pub fn kmeans<R: Rng + ?Sized>(points: &Matrix, k: usize, iters: usize, rng: &mut R) -> Result<KMeans, QueryError> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(QueryError::KMeans { k, n });
    }
    let d = points.cols();
    let mut centroids = Matrix::zeros(k, d);
    centroids.row_mut(0).copy_from_slice(points.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in dist.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    let assign = |centroids: &Matrix| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let a = (0..n)
            .map(|i| {
                let (c, dd) = nearest(points.row(i), centroids);
                inertia += dd;
                c
            })
            .collect();
        (a, inertia)
    };
    let (mut assignments, first) = assign(&centroids);
    let mut inertia = vec![first];
    for _ in 0..iters {
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let row: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
                centroids.row_mut(c).copy_from_slice(&row);
            } else {
                // Re-seed from the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), centroids.row(assignments[a]))
                            .total_cmp(&sq_dist(points.row(b), centroids.row(assignments[b])))
                            .then(b.cmp(&a))
                    })
                    .expect("n >= k > 0");
                centroids.row_mut(c).copy_from_slice(points.row(far));
            }
        }
        let (next, value) = assign(&centroids);
        let converged = next == assignments;
        assignments = next;
        inertia.push(value);
        if converged {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        inertia,
    })
}

/// One distinct candidate nearest to each of `m` k-means centroids.
pub fn coverage_select<R: Rng + ?Sized>(
    features: &Matrix,
    m: usize,
    iters: usize,
    rng: &mut R,
) -> Result<Vec<usize>, QueryError> {
    let km = kmeans(features, m, iters, rng)?;
    let mut taken = vec![false; features.rows()];
    let mut out = Vec::with_capacity(m);
    for c in 0..m {
        let best = (0..features.rows())
            .filter(|&i| !taken[i])
            .min_by(|&a, &b| {
                sq_dist(features.row(a), km.centroids.row(c))
                    .total_cmp(&sq_dist(features.row(b), km.centroids.row(c)))
                    .then(a.cmp(&b))
            })
            .expect("n >= m");
        taken[best] = true;
        out.push(best);
    }
    Ok(out)
}

fn entropy_scores(
    ensemble: &RewardEnsemble,
    probs: &[Vec<f64>],
    single_member: bool,
) -> Vec<f64> {
    let n = probs[0].len();
    (0..n)
        .map(|j| {
            let p = if single_member {
                probs[0][j]
            } else {
                probs.iter().map(|m| m[j]).sum::<f64>() / ensemble.len() as f64
            };
            binary_entropy(p)
        })
        .collect()
}

fn disagreement_scores(probs: &[Vec<f64>]) -> Vec<f64> {
    (0..probs[0].len())
        .map(|j| disagreement(&probs.iter().map(|m| m[j]).collect::<Vec<_>>()))
        .collect()
}

/// Draws candidates from `buffer` and keeps `m` of them per `cfg.strategy`.
pub fn select_queries<R: Rng + ?Sized>(
    cfg: &QueryConfig,
    buffer: &ReplayBuffer,
    ensemble: &RewardEnsemble,
    m: usize,
    segment_len: usize,
    rng: &mut R,
) -> Result<QueryBatch, QueryError> {
    if cfg.strategy == QueryStrategy::Uniform {
        let pairs = buffer.sample_segment_pairs(m, segment_len, rng)?;
        return Ok(QueryBatch {
            pairs,
            strategy: cfg.strategy,
            pool_size: m,
            intermediate: None,
            candidates: (0..m).collect(),
            scores: Vec::new(),
        });
    }
    let n = cfg.pool_size(m);
    if m > n {
        return Err(QueryError::TooFewCandidates { m, n });
    }
    let pool = buffer.sample_segment_pairs(n, segment_len, rng)?;
    let features = || {
        let rows: Vec<Vec<f64>> = pool.iter().map(|(a, b)| pair_features(a, b)).collect();
        Matrix::from_rows(&rows)
    };
    let scored = |pool: &[(Segment, Segment)], entropy: bool| -> Result<Vec<f64>, QueryError> {
        let probs = ensemble.pair_probabilities(pool)?;
        Ok(if entropy {
            entropy_scores(ensemble, &probs, cfg.entropy_single_member)
        } else {
            disagreement_scores(&probs)
        })
    };
    let (chosen, scores, intermediate) = match cfg.strategy {
        QueryStrategy::Entropy | QueryStrategy::Disagreement => {
            let s = scored(&pool, cfg.strategy == QueryStrategy::Entropy)?;
            let idx = top_m(&s, m);
            let sc = idx.iter().map(|&i| s[i]).collect();
            (idx, sc, None)
        }
        QueryStrategy::Coverage => (coverage_select(&features(), m, cfg.kmeans_iters, rng)?, Vec::new(), None),
        QueryStrategy::EntropyCoverage | QueryStrategy::DisagreementCoverage => {
            let mp = cfg.intermediate_size(m);
            if mp < m || mp > n {
                return Err(QueryError::Intermediate { m, m_prime: mp, n });
            }
            let s = scored(&pool, cfg.strategy == QueryStrategy::EntropyCoverage)?;
            let shortlist = top_m(&s, mp);
            let all = features();
            let sub = all.select_rows(&shortlist);
            let picked = coverage_select(&sub, m, cfg.kmeans_iters, rng)?;
            let idx: Vec<usize> = picked.iter().map(|&p| shortlist[p]).collect();
            let sc = idx.iter().map(|&i| s[i]).collect();
            (idx, sc, Some(mp))
        }
        QueryStrategy::Uniform => unreachable!(),
    };
    Ok(QueryBatch {
        pairs: chosen.iter().map(|&i| pool[i].clone()).collect(),
        strategy: cfg.strategy,
        pool_size: n,
        intermediate,
        candidates: chosen,
        scores,
    })
}
