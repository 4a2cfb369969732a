//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! The model keeps a lower-triangular Cholesky factor of the training
//! covariance `C(D) = Q + (σ + jitter) I` and the weight vector `C⁻¹ y`.
//! Appending one observation extends the factor by a single row, so the
//! online control loop pays `O(M²)` per step instead of `O(M³)`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Inputs closer than this (Euclidean) are treated as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// Default diagonal stabilizer.
pub const DEFAULT_JITTER: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid kernel parameter `{field}`: {value}")]
    InvalidKernel { field: &'static str, value: f64 },
    #[error("invalid noise variance: {0}")]
    InvalidNoise(f64),
    #[error("covariance is singular: training inputs {first} and {second} coincide")]
    DuplicateInputs { first: usize, second: usize },
    #[error("covariance is not positive definite (pivot {index})")]
    NotPositiveDefinite { index: usize },
}

/// Squared-exponential kernel `a · exp(−‖x − x'‖² / (2ℓ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub signal_variance: f64,
    pub length_scale: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            length_scale: 1.0,
            jitter: DEFAULT_JITTER,
        }
    }
}

impl KernelConfig {
    pub fn new(signal_variance: f64, length_scale: f64) -> Result<Self, GpError> {
        Self {
            signal_variance,
            length_scale,
            jitter: DEFAULT_JITTER,
        }
        .validated()
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self, GpError> {
        self.jitter = jitter;
        self.validated()
    }

    pub fn validated(self) -> Result<Self, GpError> {
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(GpError::InvalidKernel {
                field: "signal_variance",
                value: self.signal_variance,
            });
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(GpError::InvalidKernel {
                field: "length_scale",
                value: self.length_scale,
            });
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(GpError::InvalidKernel {
                field: "jitter",
                value: self.jitter,
            });
        }
        Ok(self)
    }

    /// Kernel value `Q(x, x2)`.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64, GpError> {
        if x.len() != x2.len() {
            return Err(GpError::DimensionMismatch {
                expected: x.len(),
                got: x2.len(),
            });
        }
        if x.iter().chain(x2).any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("kernel input"));
        }
        Ok(self.eval_unchecked(x, x2))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
        self.signal_variance * (-0.5 * sq / (self.length_scale * self.length_scale)).exp()
    }
}

/// Training inputs and scalar targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    dimension: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl DataSet {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn from_points(
        dimension: usize,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self, GpError> {
        if inputs.len() != targets.len() {
            return Err(GpError::DimensionMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        let mut data = Self::new(dimension);
        for (x, y) in inputs.into_iter().zip(targets) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<(), GpError> {
        if x.len() != self.dimension {
            return Err(GpError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("training input"));
        }
        if !y.is_finite() {
            return Err(GpError::NonFinite("training target"));
        }
        self.inputs.push(x);
        self.targets.push(y);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Index of a training input within [`DUPLICATE_TOLERANCE`] of `x`.
    pub fn find_near(&self, x: &[f64]) -> Option<usize> {
        self.inputs
            .iter()
            .position(|xi| distance(xi, x) <= DUPLICATE_TOLERANCE)
    }

    /// SHA-256 over the exact bit patterns of every input and target.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dimension as u64).to_le_bytes());
        hasher.update((self.len() as u64).to_le_bytes());
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            for v in x {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update(y.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Predictive distribution at a single query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

/// Zero-mean GP conditioned on a [`DataSet`].
#[derive(Debug, Clone)]
pub struct GpModel {
    data: DataSet,
    kernel: KernelConfig,
    noise_variance: f64,
    /// Row-major lower-triangular factor; row `i` holds `i + 1` entries.
    chol: Vec<Vec<f64>>,
    /// `C⁻¹ y`.
    alpha: Vec<f64>,
}

impl GpModel {
    /// Model with no training data.
    pub fn empty(
        dimension: usize,
        kernel: KernelConfig,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        Self::new(DataSet::new(dimension), kernel, noise_variance)
    }

    pub fn new(data: DataSet, kernel: KernelConfig, noise_variance: f64) -> Result<Self, GpError> {
        let kernel = kernel.validated()?;
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(GpError::InvalidNoise(noise_variance));
        }
        let mut model = Self {
            data,
            kernel,
            noise_variance,
            chol: Vec::new(),
            alpha: Vec::new(),
        };
        model.refactor()?;
        Ok(model)
    }

    pub fn data(&self) -> &DataSet {
        &self.data
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn dimension(&self) -> usize {
        self.data.dimension
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn diagonal_noise(&self) -> f64 {
        self.noise_variance + self.kernel.jitter
    }

    /// Prior predictive variance `κ = Q(x, x) + σ`.
    pub fn prior_variance(&self) -> f64 {
        self.kernel.signal_variance + self.noise_variance
    }

    /// Dense `C(D)` with `σ + jitter` on the diagonal.
    pub fn covariance_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let xs = self.data.inputs();
        let mut c = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let q = self.kernel.eval_unchecked(&xs[i], &xs[j]);
                c[i][j] = q;
                c[j][i] = q;
            }
            c[i][i] += self.diagonal_noise();
        }
        c
    }

    /// Recompute the factorization from scratch.
    pub fn refactor(&mut self) -> Result<(), GpError> {
        self.chol.clear();
        for n in 0..self.len() {
            let row = self.factor_row(n)?;
            self.chol.push(row);
        }
        self.alpha = self.solve(self.data.targets());
        Ok(())
    }

    /// Factor row for training point `n` given rows `0..n`.
    fn factor_row(&self, n: usize) -> Result<Vec<f64>, GpError> {
        let xs = self.data.inputs();
        let k: Vec<f64> = (0..n)
            .map(|j| self.kernel.eval_unchecked(&xs[n], &xs[j]))
            .collect();
        let mut row = self.forward(&k);
        let pivot =
            self.kernel.eval_unchecked(&xs[n], &xs[n]) + self.diagonal_noise() - dot(&row, &row);
        if !pivot.is_finite() || pivot <= 0.0 {
            return Err(
                match xs[..n]
                    .iter()
                    .position(|xj| distance(xj, &xs[n]) <= DUPLICATE_TOLERANCE)
                {
                    Some(first) => GpError::DuplicateInputs { first, second: n },
                    None => GpError::NotPositiveDefinite { index: n },
                },
            );
        }
        row.push(pivot.sqrt());
        Ok(row)
    }

    /// Append one observation, extending the factor by a single row.
    ///
    /// On error the model is left unchanged.
    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<(), GpError> {
        self.data.push(x, y)?;
        let n = self.len() - 1;
        match self.factor_row(n) {
            Ok(row) => {
                self.chol.push(row);
                self.alpha = self.solve(self.data.targets());
                Ok(())
            }
            Err(e) => {
                self.data.inputs.pop();
                self.data.targets.pop();
                Err(e)
            }
        }
    }

    /// New model with one extra observation.
    pub fn with_point(&self, x: Vec<f64>, y: f64) -> Result<Self, GpError> {
        let mut next = self.clone();
        next.push(x, y)?;
        Ok(next)
    }

    /// Solve `L z = b`.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(b.len());
        for (i, row) in self.chol.iter().take(b.len()).enumerate() {
            let s = b[i] - dot(&row[..i], &z);
            z.push(s / row[i]);
        }
        z
    }

    /// Solve `C z = b` through both triangular factors.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = self.forward(b);
        let n = z.len();
        for i in (0..n).rev() {
            let s: f64 = z[i] - (i + 1..n).map(|j| self.chol[j][i] * z[j]).sum::<f64>();
            z[i] = s / self.chol[i][i];
        }
        z
    }

    fn check_query(&self, x: &[f64]) -> Result<(), GpError> {
        if x.len() != self.dimension() {
            return Err(GpError::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("query point"));
        }
        Ok(())
    }

    /// Cross-covariance vector `k(x)` against the training inputs.
    fn cross(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .inputs()
            .iter()
            .map(|xi| self.kernel.eval_unchecked(xi, x))
            .collect()
    }

    /// Posterior mean `kᵀC⁻¹y` and variance `κ − kᵀC⁻¹k`, clamped to `[0, κ]`.
    pub fn posterior(&self, x: &[f64]) -> Result<Posterior, GpError> {
        self.check_query(x)?;
        let kappa = self.kernel.eval_unchecked(x, x) + self.noise_variance;
        if self.is_empty() {
            return Ok(Posterior {
                mean: 0.0,
                variance: kappa,
            });
        }
        let k = self.cross(x);
        let mean = dot(&k, &self.alpha);
        let z = self.forward(&k);
        let variance = (kappa - dot(&z, &z)).clamp(0.0, kappa);
        Ok(Posterior { mean, variance })
    }

    /// Natural log of `|C(D)|`.
    pub fn log_det(&self) -> f64 {
        self.chol
            .iter()
            .enumerate()
            .map(|(i, r)| 2.0 * r[i].ln())
            .sum()
    }

    /// `ln |C_q(x, x̃)|` for the training covariance bordered by `x̃` then `x`.
    ///
    /// Evaluated as `ln|C| + ln det S` where `S` is the 2×2 Schur complement
    /// of the border, reusing the cached factor.
    pub fn log_det_cq(&self, x: &[f64], x_tilde: &[f64]) -> Result<f64, GpError> {
        self.check_query(x)?;
        self.check_query(x_tilde)?;
        let diag = self.diagonal_noise();
        let kk = self.kernel.eval_unchecked(x, x) + diag;
        let kt = self.kernel.eval_unchecked(x_tilde, x_tilde) + diag;
        let q = self.kernel.eval_unchecked(x, x_tilde);
        let (s11, s12, s22) = if self.is_empty() {
            (kt, q, kk)
        } else {
            let a = self.forward(&self.cross(x_tilde));
            let b = self.forward(&self.cross(x));
            (kt - dot(&a, &a), q - dot(&a, &b), kk - dot(&b, &b))
        };
        let det = s11 * s22 - s12 * s12;
        if !det.is_finite() || det <= 0.0 {
            let index = self.len() + 1;
            return Err(if distance(x, x_tilde) <= DUPLICATE_TOLERANCE {
                GpError::DuplicateInputs {
                    first: self.len(),
                    second: index,
                }
            } else {
                GpError::NotPositiveDefinite { index }
            });
        }
        Ok(self.log_det() + det.ln())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Differential entropy of a `dim`-variate Gaussian with covariance log-determinant `log_det_cov`.
pub fn gaussian_entropy(dim: usize, log_det_cov: f64) -> f64 {
    let d = dim as f64;
    0.5 * d + 0.5 * d * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det_cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(noise: f64) -> (KernelConfig, f64) {
        (
            KernelConfig::new(1.0, 1.0)
                .unwrap()
                .with_jitter(0.0)
                .unwrap(),
            noise,
        )
    }

    #[test]
    fn kernel_values() {
        let k = KernelConfig::new(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            k.eval(&[0.0], &[1.0]).unwrap(),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.606531, epsilon = 1e-6);
        let half = KernelConfig::new(0.5, 1.0).unwrap();
        assert_eq!(half.eval(&[0.0], &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        let k = KernelConfig::default();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(GpError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            k.eval(&[f64::NAN], &[0.0]),
            Err(GpError::NonFinite(_))
        ));
        assert!(KernelConfig::new(-0.5, 1.0).is_err());
        assert!(KernelConfig::new(1.0, 0.0).is_err());
        assert!(KernelConfig::default().with_jitter(-1.0).is_err());
    }

    #[test]
    fn covariance_assembly() {
        let (k, s) = unit(0.1);
        let empty = GpModel::empty(1, k, s).unwrap();
        assert!(empty.covariance_matrix().is_empty());

        let data = DataSet::from_points(1, vec![vec![0.2]], vec![1.0]).unwrap();
        let m = GpModel::new(data, k, s).unwrap();
        assert_abs_diff_eq!(m.covariance_matrix()[0][0], 1.1, epsilon = 1e-15);
    }

    #[test]
    fn duplicate_inputs_without_noise_fail() {
        let (k, _) = unit(0.0);
        let data = DataSet::from_points(1, vec![vec![0.5], vec![0.5]], vec![1.0, 2.0]).unwrap();
        match GpModel::new(data, k, 0.0) {
            Err(GpError::DuplicateInputs { first, second }) => assert_eq!((first, second), (0, 1)),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn failed_push_leaves_model_intact() {
        let (k, _) = unit(0.0);
        let mut m = GpModel::empty(1, k, 0.0).unwrap();
        m.push(vec![0.5], 1.0).unwrap();
        assert!(m.push(vec![0.5], 2.0).is_err());
        assert_eq!(m.len(), 1);
        assert_abs_diff_eq!(m.posterior(&[0.5]).unwrap().mean, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let (k, s) = unit(0.1);
        let empty = GpModel::empty(1, k, s).unwrap();
        let p = empty.posterior(&[3.0]).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_abs_diff_eq!(p.variance, 1.1, epsilon = 1e-15);

        let m = empty.with_point(vec![0.0], 1.0).unwrap();
        let p = m.posterior(&[0.0]).unwrap();
        assert_abs_diff_eq!(p.mean, 1.0 / 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance, 1.1 - 1.0 / 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mean, 0.909091, epsilon = 1e-6);
        assert_abs_diff_eq!(p.variance, 0.190909, epsilon = 1e-6);

        let far = m.posterior(&[1e3]).unwrap();
        assert_abs_diff_eq!(far.mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(far.variance, 1.1, epsilon = 1e-12);

        assert!(matches!(
            m.posterior(&[0.0, 1.0]),
            Err(GpError::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn entropy_closed_form() {
        assert_abs_diff_eq!(gaussian_entropy(1, 0.0), 1.418939, epsilon = 1e-6);
        assert_abs_diff_eq!(gaussian_entropy(2, 0.0), 2.837877, epsilon = 1e-6);
        assert_abs_diff_eq!(
            gaussian_entropy(1, 2.0),
            gaussian_entropy(1, 0.0) + 1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_det_cq_examples() {
        let (k, s) = unit(0.1);
        let m = GpModel::empty(1, k, s).unwrap();
        let v = m.log_det_cq(&[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(v, (1.21 - (-1.0f64).exp()).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(v, -0.171832093482703, epsilon = 1e-12);

        let far = m.log_det_cq(&[0.0], &[1e4]).unwrap();
        assert_abs_diff_eq!(far, 1.21f64.ln(), epsilon = 1e-14);

        let m = m.with_point(vec![0.4], -0.3).unwrap();
        let a = m.log_det_cq(&[0.1], &[0.9]).unwrap();
        let b = m.log_det_cq(&[0.9], &[0.1]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-13);
    }

    #[test]
    fn log_det_cq_rejects_coincident_border_without_noise() {
        let (k, _) = unit(0.0);
        let m = GpModel::empty(1, k, 0.0).unwrap();
        assert!(m.log_det_cq(&[0.2], &[0.2]).is_err());
    }

    #[test]
    fn incremental_matches_refactor() {
        let (k, s) = unit(0.05);
        let mut m = GpModel::empty(2, k, s).unwrap();
        for i in 0..12 {
            let t = i as f64 * 0.37;
            m.push(vec![t.sin(), t.cos() * 0.5], (2.0 * t).sin())
                .unwrap();
        }
        let mut full = m.clone();
        full.refactor().unwrap();
        for (r1, r2) in m.chol.iter().zip(&full.chol) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
        for (a, b) in m.alpha.iter().zip(&full.alpha) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = DataSet::from_points(1, vec![vec![0.1]], vec![0.2]).unwrap();
        let b = DataSet::from_points(1, vec![vec![0.1]], vec![0.2 + 1e-16]).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
