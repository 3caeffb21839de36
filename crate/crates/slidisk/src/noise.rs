//! The driving noise: finite-activity Lévy processes.
//!
//! A process `w_t = gamma t + sigma B_t + C_t` with a drift vector, a
//! non-degenerate Gaussian part, and finitely many compound-Poisson jump
//! components. The Gaussian part must have non-null determinant; that is the
//! only structural assumption placed on the forcing.
//!
//! Besides sampling, the module computes analytic increment moments, the
//! truncation-corrected drift (small jumps folded into the drift once their
//! mean flux over `(eta, 1]` is subtracted), and Monte-Carlo estimates of the
//! probability that the noise stays in a uniform tube around a deterministic
//! path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::ControlPath;
use crate::quad::{adaptive_simpson, QuadError};
use crate::seed::{self, SplitMix64Rng};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("gaussian part is degenerate: |det| = {det:e} below 1e-12 * ||sigma||^p")]
    DegenerateGaussPart { det: f64 },
    #[error("jump component {index} has negative rate {rate}")]
    NegativeRate { index: usize, rate: f64 },
    #[error("jump component {index}: {reason}")]
    BadJumpComponent { index: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid must contain at least two points starting at 0")]
    EmptyGrid,
    #[error("grid must be strictly increasing from 0")]
    BadGrid,
    #[error("quadrature failure: {0}")]
    QuadratureFailure(#[from] QuadError),
    #[error("gaussian jump-size truncation integrals are supported for dim <= 2, got {0}")]
    UnsupportedJumpDim(usize),
    #[error("tube probability requires a 1-d noise (got dim {0}) to compare against a scalar path")]
    ScalarPathRequired(usize),
    #[error("control path covers [0, {path_t}] but horizon is {horizon}")]
    PathTooShort { path_t: f64, horizon: f64 },
    #[error("tube probability needs at least 100 samples, got {0}")]
    TooFewSamples(usize),
    #[error("epsilon must be positive, got {0}")]
    NonpositiveEpsilon(f64),
}

/// Size law of one jump component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum JumpSize {
    /// Every jump equals `z`.
    Fixed(Vec<f64>),
    /// Independent Gaussian components.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

/// One finite-activity jump component: Poisson arrivals, i.i.d. sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpComponent {
    /// Events per unit time.
    pub rate: f64,
    pub size: JumpSize,
}

impl JumpComponent {
    fn dim(&self) -> usize {
        match &self.size {
            JumpSize::Fixed(z) => z.len(),
            JumpSize::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// E[z]
    fn mean_size(&self) -> DVector<f64> {
        match &self.size {
            JumpSize::Fixed(z) => DVector::from_column_slice(z),
            JumpSize::Gaussian { mean, .. } => DVector::from_column_slice(mean),
        }
    }

    /// E[z z^T]
    fn second_moment(&self) -> DMatrix<f64> {
        match &self.size {
            JumpSize::Fixed(z) => {
                let v = DVector::from_column_slice(z);
                &v * v.transpose()
            }
            JumpSize::Gaussian { mean, sd } => {
                let m = DVector::from_column_slice(mean);
                let mut out = &m * m.transpose();
                for (i, s) in sd.iter().enumerate() {
                    out[(i, i)] += s * s;
                }
                out
            }
        }
    }
}

/// Drift, Gaussian matrix, and jump components of the driving Lévy process.
#[derive(Clone, Debug, PartialEq)]
pub struct LevyCharacteristics {
    pub dim: usize,
    pub drift: DVector<f64>,
    pub gauss: DMatrix<f64>,
    pub jumps: Vec<JumpComponent>,
}

impl LevyCharacteristics {
    /// Build and validate. The Gaussian part must be square, match the drift
    /// dimension, and have a non-null determinant.
    pub fn new(
        drift: DVector<f64>,
        gauss: DMatrix<f64>,
        jumps: Vec<JumpComponent>,
    ) -> Result<Self, NoiseError> {
        let dim = drift.len();
        if gauss.nrows() != dim || gauss.ncols() != dim {
            return Err(NoiseError::DimensionMismatch {
                expected: dim,
                got: gauss.nrows().max(gauss.ncols()),
            });
        }
        let chars = Self {
            dim,
            drift,
            gauss,
            jumps,
        };
        validate_characteristics(&chars)?;
        Ok(chars)
    }

    /// Standard `p`-dimensional Brownian motion.
    pub fn brownian(p: usize) -> Self {
        Self {
            dim: p,
            drift: DVector::zeros(p),
            gauss: DMatrix::identity(p, p),
            jumps: Vec::new(),
        }
    }

    pub fn has_jumps(&self) -> bool {
        self.jumps.iter().any(|j| j.rate > 0.0)
    }

    /// Draw the increment over one interval of length `dt` into `out`.
    pub(crate) fn sample_increment_into(
        &self,
        dt: f64,
        rng: &mut impl Rng,
        out: &mut DVector<f64>,
    ) {
        let sq = dt.sqrt();
        for i in 0..self.dim {
            out[i] = self.drift[i] * dt;
        }
        // gauss * sqrt(dt) * xi
        for j in 0..self.dim {
            let xi: f64 = StandardNormal.sample(rng);
            let sxi = sq * xi;
            for i in 0..self.dim {
                out[i] += self.gauss[(i, j)] * sxi;
            }
        }
        for jc in &self.jumps {
            let lambda = jc.rate * dt;
            if lambda <= 0.0 {
                continue;
            }
            let pois = Poisson::new(lambda).expect("positive finite rate*dt");
            let count = pois.sample(rng) as u64;
            for _ in 0..count {
                match &jc.size {
                    JumpSize::Fixed(z) => {
                        for i in 0..self.dim {
                            out[i] += z[i];
                        }
                    }
                    JumpSize::Gaussian { mean, sd } => {
                        for i in 0..self.dim {
                            let xi: f64 = StandardNormal.sample(rng);
                            out[i] += mean[i] + sd[i] * xi;
                        }
                    }
                }
            }
        }
    }
}

/// Check Condition 1 (non-degenerate Gaussian part) and rate positivity.
///
/// Accepts iff `|det(gauss)| > 1e-12 * ||gauss||_F^p` and all jump rates are
/// nonnegative with consistent dimensions.
pub fn validate_characteristics(chars: &LevyCharacteristics) -> Result<(), NoiseError> {
    let p = chars.dim;
    let det = chars.gauss.clone().lu().determinant();
    let scale = chars.gauss.norm().powi(p as i32);
    if !(det.abs() > 1e-12 * scale) {
        return Err(NoiseError::DegenerateGaussPart { det });
    }
    for (index, jc) in chars.jumps.iter().enumerate() {
        if !(jc.rate >= 0.0) || !jc.rate.is_finite() {
            return Err(NoiseError::NegativeRate {
                index,
                rate: jc.rate,
            });
        }
        if jc.dim() != p {
            return Err(NoiseError::DimensionMismatch {
                expected: p,
                got: jc.dim(),
            });
        }
        if let JumpSize::Gaussian { mean, sd } = &jc.size {
            if sd.len() != mean.len() {
                return Err(NoiseError::BadJumpComponent {
                    index,
                    reason: "mean and sd lengths differ".into(),
                });
            }
            if sd.iter().any(|s| !(*s > 0.0)) {
                return Err(NoiseError::BadJumpComponent {
                    index,
                    reason: "gaussian sd components must be > 0".into(),
                });
            }
        }
    }
    Ok(())
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// `int_{|z| <= radius} z_k prod_j N(z_j; mean_j, sd_j) dz` for dim 2.
fn ball_moment_2d(
    k: usize,
    radius: f64,
    mean: &[f64],
    sd: &[f64],
    tol: f64,
) -> Result<f64, QuadError> {
    let inner_tol = tol / (16.0 * (1.0 + 2.0 * radius));
    adaptive_simpson(
        |z0| {
            let w = (radius * radius - z0 * z0).max(0.0).sqrt();
            if w == 0.0 {
                return 0.0;
            }
            let inner = adaptive_simpson(
                |z1| {
                    let zk = if k == 0 { z0 } else { z1 };
                    zk * normal_pdf(z1, mean[1], sd[1])
                },
                -w,
                w,
                inner_tol,
            )
            // The inner integrand is smooth; failure here surfaces through the
            // accuracy check of the outer pass.
            .unwrap_or(f64::NAN);
            inner * normal_pdf(z0, mean[0], sd[0])
        },
        -radius,
        radius,
        tol / 4.0,
    )
}

/// Mean jump flux `E[z 1{eta < |z| <= 1}]` of one component (without rate).
fn truncated_mean_flux(jc: &JumpComponent, eta: f64) -> Result<DVector<f64>, NoiseError> {
    match &jc.size {
        JumpSize::Fixed(z) => {
            let v = DVector::from_column_slice(z);
            let n = v.norm();
            if n > eta && n <= 1.0 {
                Ok(v)
            } else {
                Ok(DVector::zeros(z.len()))
            }
        }
        JumpSize::Gaussian { mean, sd } => {
            let p = mean.len();
            match p {
                1 => {
                    let tol = 1e-10 / 4.0;
                    let f = |z: f64| z * normal_pdf(z, mean[0], sd[0]);
                    let pos = adaptive_simpson(f, eta, 1.0, tol)?;
                    let neg = adaptive_simpson(f, -1.0, -eta, tol)?;
                    Ok(DVector::from_vec(vec![pos + neg]))
                }
                2 => {
                    let mut out = DVector::zeros(2);
                    for k in 0..2 {
                        let outer = ball_moment_2d(k, 1.0, mean, sd, 1e-10 / 2.0)?;
                        let inner = if eta < 1.0 {
                            ball_moment_2d(k, eta, mean, sd, 1e-10 / 2.0)?
                        } else {
                            ball_moment_2d(k, 1.0, mean, sd, 1e-10 / 2.0)?
                        };
                        out[k] = outer - inner;
                        if !out[k].is_finite() {
                            return Err(NoiseError::QuadratureFailure(
                                QuadError::ToleranceUnreachable {
                                    a: -1.0,
                                    b: 1.0,
                                    tol: 1e-10,
                                },
                            ));
                        }
                    }
                    Ok(out)
                }
                d => Err(NoiseError::UnsupportedJumpDim(d)),
            }
        }
    }
}

/// Drift after folding jumps of size in `(eta, 1]` into the linear part:
/// `gamma_eta = gamma - sum_j rate_j * E_j[z 1{eta < |z| <= 1}]`.
///
/// Fixed sizes are handled in closed form; Gaussian sizes by adaptive
/// quadrature with absolute tolerance 1e-10.
pub fn effective_drift(chars: &LevyCharacteristics, eta: f64) -> Result<DVector<f64>, NoiseError> {
    validate_characteristics(chars)?;
    assert!(eta > 0.0, "truncation level must be positive");
    let mut out = chars.drift.clone();
    for jc in &chars.jumps {
        if jc.rate == 0.0 {
            continue;
        }
        let flux = truncated_mean_flux(jc, eta)?;
        out -= flux * jc.rate;
    }
    Ok(out)
}

/// Analytic mean and covariance of one increment over `dt`:
/// `mean = (gamma + sum rate E[z]) dt`,
/// `cov = (sigma sigma^T + sum rate E[z z^T]) dt`.
pub fn increment_moments(
    chars: &LevyCharacteristics,
    dt: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), NoiseError> {
    validate_characteristics(chars)?;
    assert!(dt > 0.0, "dt must be positive");
    let mut mean = chars.drift.clone();
    let mut cov = &chars.gauss * chars.gauss.transpose();
    for jc in &chars.jumps {
        mean += jc.mean_size() * jc.rate;
        cov += jc.second_moment() * jc.rate;
    }
    Ok((mean * dt, cov * dt))
}

/// Increments of the noise over a fixed time grid.
#[derive(Clone, Debug)]
pub struct IncrementStream {
    /// Strictly increasing times starting at 0.
    pub grid: Vec<f64>,
    /// `increments[k]` covers `(grid[k], grid[k+1]]`.
    pub increments: Vec<DVector<f64>>,
}

impl IncrementStream {
    /// CSV with header `t,dw_1,...,dw_p`; `t` is the right endpoint of the
    /// increment's interval.
    pub fn to_csv(&self) -> String {
        let p = self.increments.first().map_or(0, |v| v.len());
        let mut out = String::from("t");
        for i in 1..=p {
            out.push_str(&format!(",dw_{i}"));
        }
        out.push('\n');
        for (k, inc) in self.increments.iter().enumerate() {
            out.push_str(&format!("{}", self.grid[k + 1]));
            for v in inc.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Sample increments of the noise on `grid`, deterministically in `seed`.
pub fn sample_increments(
    chars: &LevyCharacteristics,
    grid: &[f64],
    seed: u64,
) -> Result<IncrementStream, NoiseError> {
    validate_characteristics(chars)?;
    if grid.len() < 2 {
        return Err(NoiseError::EmptyGrid);
    }
    if grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(NoiseError::BadGrid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut increments = Vec::with_capacity(grid.len() - 1);
    let mut buf = DVector::zeros(chars.dim);
    for w in grid.windows(2) {
        chars.sample_increment_into(w[1] - w[0], &mut rng, &mut buf);
        increments.push(buf.clone());
    }
    Ok(IncrementStream {
        grid: grid.to_vec(),
        increments,
    })
}

/// Monte-Carlo estimate of a uniform-tube probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub epsilon: f64,
    /// Grid step actually used for the sup.
    pub grid_step: f64,
}

/// Refinement of the base grid bound `min(1e-3 t, eps^2/10)`. The sup over
/// grid points misses excursions between points (crossing events are
/// under-counted, biasing the estimate up by O(sqrt(step))), so the step is
/// kept well below the bound.
const TUBE_GRID_REFINE: f64 = 150.0;

/// Estimate `P[ sup_{0<=s<=t} |phi_s - phi_0 - (w_s - w_0)| < epsilon ]`.
///
/// The sup is evaluated on a grid of step
/// `min(1e-3 t, epsilon^2 / 10) / 150`; paths are sampled independently with
/// sub-seeds derived from `(seed, path index)`, so the estimate does not
/// depend on how paths are scheduled across threads.
pub fn tube_probability(
    chars: &LevyCharacteristics,
    phi: &ControlPath,
    epsilon: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TubeEstimate, NoiseError> {
    validate_characteristics(chars)?;
    if chars.dim != 1 {
        return Err(NoiseError::ScalarPathRequired(chars.dim));
    }
    if !(epsilon > 0.0) {
        return Err(NoiseError::NonpositiveEpsilon(epsilon));
    }
    if n_samples < 100 {
        return Err(NoiseError::TooFewSamples(n_samples));
    }
    let path_t = phi.t_total();
    if path_t + 1e-12 < horizon {
        return Err(NoiseError::PathTooShort {
            path_t,
            horizon,
        });
    }

    let step_target = (1e-3 * horizon).min(epsilon * epsilon / 10.0) / TUBE_GRID_REFINE;
    let n_steps = (horizon / step_target).ceil() as usize;
    let h = horizon / n_steps as f64;

    // Deterministic path values on the grid, shared across samples.
    let phi0 = phi.value(0.0);
    let target: Vec<f64> = (1..=n_steps)
        .map(|k| phi.value(k as f64 * h) - phi0)
        .collect();

    let drift_h = chars.drift[0] * h;
    let sig = chars.gauss[(0, 0)] * h.sqrt();
    let jumps: Vec<(f64, JumpSize)> = chars
        .jumps
        .iter()
        .filter(|j| j.rate > 0.0)
        .map(|j| (j.rate * h, j.size.clone()))
        .collect();

    let survivors: u64 = (0..n_samples as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = SplitMix64Rng::new(seed::derive(seed, "tube-path", &[path]));
            let mut x = 0.0f64;
            for tk in &target {
                let xi: f64 = StandardNormal.sample(&mut rng);
                x += drift_h + sig * xi;
                for (lambda, size) in &jumps {
                    let pois = Poisson::new(*lambda).expect("positive rate*h");
                    let count = pois.sample(&mut rng) as u64;
                    for _ in 0..count {
                        match size {
                            JumpSize::Fixed(z) => x += z[0],
                            JumpSize::Gaussian { mean, sd } => {
                                let g: f64 = StandardNormal.sample(&mut rng);
                                x += mean[0] + sd[0] * g;
                            }
                        }
                    }
                }
                if (tk - x).abs() >= epsilon {
                    return 0u64;
                }
            }
            1u64
        })
        .sum();

    let p_hat = survivors as f64 / n_samples as f64;
    let stderr = (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt();
    Ok(TubeEstimate {
        probability: p_hat,
        stderr,
        n_samples,
        epsilon,
        grid_step: h,
    })
}
