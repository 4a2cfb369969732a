//! Information scoring over a finite candidate set and sample selection.
//!
//! Scores are sums of `ln |C_q(x, x̃)|` over the candidate set; a lower score
//! means the candidate `x̃` leaves less residual uncertainty behind.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{distance, GpError, GpModel, DUPLICATE_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfoError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("candidate {candidate} duplicates training input {training}")]
    DuplicatesTraining { candidate: usize, training: usize },
    #[error("candidate {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid bounds for dimension {dim}: ({low}, {high})")]
    InvalidBounds { dim: usize, low: f64, high: f64 },
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Finite sample `Θ` of the input domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    points: Vec<Vec<f64>>,
    dropped: usize,
}

impl CandidateSet {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        Self { points, dropped: 0 }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of sampled points removed because they matched an exclusion.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Checks that the set is usable with `model`.
    pub fn check(&self, model: &GpModel) -> Result<(), InfoError> {
        if self.points.is_empty() {
            return Err(InfoError::EmptyCandidates);
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.len() != model.dimension() {
                return Err(InfoError::Dimension {
                    index: i,
                    expected: model.dimension(),
                    got: p.len(),
                });
            }
            if let Some(t) = model.data().find_near(p) {
                return Err(InfoError::DuplicatesTraining {
                    candidate: i,
                    training: t,
                });
            }
        }
        Ok(())
    }
}

/// Sum over `Θ` of `ln |C_q(x, x̃)|`.
pub fn info_score(
    model: &GpModel,
    theta: &CandidateSet,
    x_tilde: &[f64],
) -> Result<f64, InfoError> {
    theta
        .points
        .iter()
        .map(|x| model.log_det_cq(x, x_tilde))
        .sum::<Result<f64, GpError>>()
        .map_err(InfoError::from)
}

/// Chosen candidate and its score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoScore {
    pub candidate_index: usize,
    pub score: f64,
}

/// Index minimizing [`info_score`] over `Θ`; ties go to the lowest index.
pub fn select_exhaustive(model: &GpModel, theta: &CandidateSet) -> Result<InfoScore, InfoError> {
    theta.check(model)?;
    let scores: Vec<f64> = theta
        .points
        .par_iter()
        .map(|xt| info_score(model, theta, xt))
        .collect::<Result<_, _>>()?;
    Ok(first_min(&scores))
}

fn first_min(scores: &[f64]) -> InfoScore {
    let mut best = InfoScore {
        candidate_index: 0,
        score: scores[0],
    };
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < best.score {
            best = InfoScore {
                candidate_index: i,
                score: s,
            };
        }
    }
    best
}

/// Index of the candidate with largest posterior variance; ties go to the lowest index.
pub fn select_max_variance(model: &GpModel, theta: &CandidateSet) -> Result<usize, InfoError> {
    theta.check(model)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in theta.points.iter().enumerate() {
        let v = model.posterior(p)?.variance;
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Grid,
    UniformRandom,
}

/// Samples `Θ` from a box domain, dropping points near any exclusion.
///
/// Grid mode puts `k` evenly spaced points (endpoints included) on each axis,
/// with `k` the largest integer such that `k^d ≤ n`.
pub fn sample_candidates(
    bounds: &[(f64, f64)],
    n: usize,
    mode: SamplingMode,
    seed: u64,
    exclusions: &[Vec<f64>],
) -> Result<CandidateSet, InfoError> {
    if n == 0 {
        return Err(InfoError::ZeroSamples);
    }
    for (dim, &(low, high)) in bounds.iter().enumerate() {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(InfoError::InvalidBounds { dim, low, high });
        }
    }
    let raw = match mode {
        SamplingMode::Grid => grid_points(bounds, n),
        SamplingMode::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    bounds
                        .iter()
                        .map(|&(lo, hi)| rng.random_range(lo..hi))
                        .collect()
                })
                .collect()
        }
    };
    let total = raw.len();
    let points: Vec<Vec<f64>> = raw
        .into_iter()
        .filter(|p| {
            exclusions
                .iter()
                .all(|e| distance(e, p) > DUPLICATE_TOLERANCE)
        })
        .collect();
    let dropped = total - points.len();
    Ok(CandidateSet { points, dropped })
}

fn grid_points(bounds: &[(f64, f64)], n: usize) -> Vec<Vec<f64>> {
    let d = bounds.len() as u32;
    if d == 0 {
        return vec![Vec::new()];
    }
    let mut k = 1usize;
    while (k + 1).checked_pow(d).is_some_and(|p| p <= n) {
        k += 1;
    }
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        if k == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..k)
                .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
                .collect()
        }
    };
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for &(lo, hi) in bounds {
        let ticks = axis(lo, hi);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                ticks.iter().map(move |&t| {
                    let mut p = prefix.clone();
                    p.push(t);
                    p
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelConfig;
    use approx::assert_abs_diff_eq;

    fn model(noise: f64) -> GpModel {
        let k = KernelConfig::new(1.0, 1.0)
            .unwrap()
            .with_jitter(0.0)
            .unwrap();
        GpModel::empty(1, k, noise).unwrap()
    }

    #[test]
    fn score_single_term() {
        let m = model(0.1);
        let theta = CandidateSet::new(vec![vec![0.0]]);
        let s = info_score(&m, &theta, &[1.0]).unwrap();
        assert_abs_diff_eq!(s, -0.171832093482703, epsilon = 1e-12);
    }

    #[test]
    fn score_far_candidates() {
        let m = model(0.1);
        let theta = CandidateSet::new(vec![vec![0.0], vec![1e4]]);
        let s = info_score(&m, &theta, &[-1e4]).unwrap();
        assert_abs_diff_eq!(s, 2.0 * 1.21f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.381240, epsilon = 1e-6);
    }

    #[test]
    fn single_candidate_selected() {
        let m = model(0.1);
        let theta = CandidateSet::new(vec![vec![0.7]]);
        assert_eq!(select_exhaustive(&m, &theta).unwrap().candidate_index, 0);
        assert_eq!(select_max_variance(&m, &theta).unwrap(), 0);
    }

    #[test]
    fn selection_rejects_empty_and_duplicates() {
        let m = model(0.1);
        let empty = CandidateSet::default();
        assert_eq!(
            select_exhaustive(&m, &empty),
            Err(InfoError::EmptyCandidates)
        );
        assert_eq!(
            select_max_variance(&m, &empty),
            Err(InfoError::EmptyCandidates)
        );

        let m = m.with_point(vec![0.0], 1.0).unwrap();
        let theta = CandidateSet::new(vec![vec![1.0], vec![0.0]]);
        assert_eq!(
            select_max_variance(&m, &theta),
            Err(InfoError::DuplicatesTraining {
                candidate: 1,
                training: 0
            })
        );
    }

    #[test]
    fn max_variance_prefers_far_point() {
        let m = model(0.1).with_point(vec![0.0], 0.4).unwrap();
        let theta = CandidateSet::new(vec![vec![0.1], vec![2.0]]);
        assert_eq!(select_max_variance(&m, &theta).unwrap(), 1);
        let empty = model(0.1);
        let theta = CandidateSet::new(vec![vec![-3.0], vec![0.0], vec![5.0]]);
        assert_eq!(select_max_variance(&empty, &theta).unwrap(), 0);
    }

    #[test]
    fn symmetric_grid_prefers_centre() {
        // Brute-force scores for Θ = {-1, 0, 1} with empty data, a = 1, σ = 0.1.
        // 2x2 determinants: same point 1.21 - 1 = 0.21, distance 1: 1.21 - e^-1,
        // distance 2: 1.21 - e^-4.
        let d0 = 0.21f64.ln();
        let d1 = (1.21 - (-1.0f64).exp()).ln();
        let d2 = (1.21 - (-4.0f64).exp()).ln();
        let edge = d0 + d1 + d2;
        let centre = d0 + 2.0 * d1;
        assert!(centre < edge);

        let m = model(0.1);
        let theta = CandidateSet::new(vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let pick = select_exhaustive(&m, &theta).unwrap();
        assert_eq!(pick.candidate_index, 1);
        assert_abs_diff_eq!(pick.score, centre, epsilon = 1e-12);
        assert_abs_diff_eq!(
            info_score(&m, &theta, &[-1.0]).unwrap(),
            edge,
            epsilon = 1e-12
        );
    }

    #[test]
    fn grid_sampling() {
        let c = sample_candidates(&[(0.0, 1.0)], 3, SamplingMode::Grid, 0, &[]).unwrap();
        assert_eq!(c.points(), &[vec![0.0], vec![0.5], vec![1.0]]);

        let c2 =
            sample_candidates(&[(0.0, 1.0), (-1.0, 1.0)], 10, SamplingMode::Grid, 0, &[]).unwrap();
        assert_eq!(c2.len(), 9);
        assert!(c2.points().contains(&vec![0.5, 0.0]));

        let all = c.points().to_vec();
        let none = sample_candidates(&[(0.0, 1.0)], 3, SamplingMode::Grid, 0, &all).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.dropped(), 3);
    }

    #[test]
    fn random_sampling_is_seeded() {
        let b = [(0.0, 2.0), (5.0, 6.0)];
        let a = sample_candidates(&b, 16, SamplingMode::UniformRandom, 42, &[]).unwrap();
        let again = sample_candidates(&b, 16, SamplingMode::UniformRandom, 42, &[]).unwrap();
        let other = sample_candidates(&b, 16, SamplingMode::UniformRandom, 43, &[]).unwrap();
        assert_eq!(a, again);
        assert_ne!(a, other);
        assert!(a
            .points()
            .iter()
            .all(|p| (0.0..2.0).contains(&p[0]) && (5.0..6.0).contains(&p[1])));
    }

    #[test]
    fn sampling_rejects_bad_bounds() {
        assert!(matches!(
            sample_candidates(&[(1.0, 1.0)], 3, SamplingMode::Grid, 0, &[]),
            Err(InfoError::InvalidBounds { dim: 0, .. })
        ));
        assert_eq!(
            sample_candidates(&[(0.0, 1.0)], 0, SamplingMode::Grid, 0, &[]),
            Err(InfoError::ZeroSamples)
        );
    }
}
