//! Ensemble statistics: mean-squared displacement, scaling-exponent fits,
//! Birkhoff time averages, and marginal-distribution tests.
//!
//! The MSD estimator is two-level: for each initial condition, the sample
//! variance of the observable across independent noise replicas (centering on
//! the noise average at fixed start); the variances are then averaged over
//! the initial-condition draw. A pooled single-level variant (centering on
//! the grand ensemble mean) is available behind the `Centering` flag.
//! Unwrapped coordinates feed the MSD; marginal tests wrap positions first.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::disk::{gibbs_sample, DiskError, DiskParams, State};
use crate::integrate::{simulate_at_steps, IntegrateError, NoiseSource, SchemeSpec, Trajectory};
use crate::quad::adaptive_simpson;
use crate::seed;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("expected bin count {expected:.1} below 5; too few samples for the bin layout")]
    SparseBins { expected: f64 },
    #[error("degenerate fit window: {reason}")]
    DegenerateWindow { reason: String },
    #[error("record time {t} is not on the step grid (h = {h})")]
    RecordTimeOffGrid { t: f64, h: f64 },
    #[error("ensemble spec invalid: {0}")]
    BadEnsemble(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Disk(#[from] DiskError),
    #[error("quadrature failure: {0}")]
    Quad(#[from] crate::quad::QuadError),
}

/// Scalar observable of the phase point.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    X,
    Theta,
    XPlusTheta,
    /// `-x + sigma theta`, the positional shadow of the conserved momentum
    /// combination.
    CasimirPos,
    /// `a x + b theta + c v + d omega`.
    Linear([f64; 4]),
}

impl Observable {
    pub fn eval(&self, s: &State, sigma: f64) -> f64 {
        match self {
            Observable::X => s.x,
            Observable::Theta => s.theta,
            Observable::XPlusTheta => s.x + s.theta,
            Observable::CasimirPos => -s.x + sigma * s.theta,
            Observable::Linear(c) => c[0] * s.x + c[1] * s.theta + c[2] * s.v + c[3] * s.omega,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Observable::X => "x".into(),
            Observable::Theta => "theta".into(),
            Observable::XPlusTheta => "x_plus_theta".into(),
            Observable::CasimirPos => "casimir_pos".into(),
            Observable::Linear(c) => format!("linear({},{},{},{})", c[0], c[1], c[2], c[3]),
        }
    }
}

/// Initial-condition law of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    Gibbs,
    Rest(State),
    Explicit(Vec<State>),
}

/// Which mean the displacement variance is centered on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Centering {
    /// Noise average at fixed initial condition (two-level).
    #[default]
    NoiseAverage,
    /// Grand ensemble mean (single-level).
    Pooled,
}

#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub n_init: usize,
    pub n_noise: usize,
    pub init: InitSpec,
    pub observable: Observable,
    /// Simulation horizon; record times must lie on the step grid within it.
    pub t_final: f64,
    pub record_times: Vec<f64>,
    pub centering: Centering,
}

impl EnsembleSpec {
    fn validate(&self, h: f64) -> Result<Vec<usize>, StatsError> {
        if self.n_init < 2 || self.n_noise < 2 {
            return Err(StatsError::BadEnsemble(
                "n_init and n_noise must both be at least 2".into(),
            ));
        }
        if self.record_times.is_empty() {
            return Err(StatsError::BadEnsemble("no record times".into()));
        }
        if self.record_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(StatsError::BadEnsemble(
                "record times must be strictly increasing".into(),
            ));
        }
        let mut steps = Vec::with_capacity(self.record_times.len());
        for &t in &self.record_times {
            if t < 0.0 || t > self.t_final + 1e-9 {
                return Err(StatsError::BadEnsemble(format!(
                    "record time {t} outside [0, {}]",
                    self.t_final
                )));
            }
            let k = (t / h).round();
            if (k * h - t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(StatsError::RecordTimeOffGrid { t, h });
            }
            steps.push(k as usize);
        }
        if let InitSpec::Explicit(list) = &self.init {
            if list.len() != self.n_init {
                return Err(StatsError::BadEnsemble(format!(
                    "explicit init list has {} states, n_init is {}",
                    list.len(),
                    self.n_init
                )));
            }
        }
        Ok(steps)
    }
}

/// Mean-squared displacement with per-time standard errors.
#[derive(Clone, Debug)]
pub struct MsdSeries {
    pub observable: String,
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_init: usize,
    pub n_noise: usize,
}

impl MsdSeries {
    /// CSV with header `observable,t,msd,stderr,n_init,n_noise`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("observable,t,msd,stderr,n_init,n_noise\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.observable, self.times[k], self.msd[k], self.stderr[k], self.n_init,
                self.n_noise
            ));
        }
        out
    }
}

/// Two-level mean-squared displacement.
///
/// For each of `n_init` initial conditions, `n_noise` independent noise
/// replicas are run; at each record time the unbiased variance across
/// replicas is taken and averaged over initial conditions. The standard error
/// is the spread of the per-init variances over `sqrt(n_init)`. Replica
/// `(i, j)` uses the sub-seed `derive(seed, "msd", [i, j])`, so the estimate
/// is independent of scheduling.
pub fn msd_two_level(
    spec: &EnsembleSpec,
    p: &DiskParams,
    scheme: &SchemeSpec,
    noise: &NoiseSource,
    seed: u64,
) -> Result<MsdSeries, StatsError> {
    let record_steps = spec.validate(scheme.h)?;
    let inits: Vec<State> = match &spec.init {
        InitSpec::Gibbs => gibbs_sample(p, spec.n_init, seed::derive(seed, "msd-init", &[]))?,
        InitSpec::Rest(s) => vec![*s; spec.n_init],
        InitSpec::Explicit(list) => list.clone(),
    };

    let n_rec = record_steps.len();
    let sigma = p.sigma_ratio;
    // values[(i * n_noise + j)][k]
    let values: Vec<Vec<f64>> = (0..spec.n_init * spec.n_noise)
        .into_par_iter()
        .map(|flat| -> Result<Vec<f64>, StatsError> {
            let i = flat / spec.n_noise;
            let j = flat % spec.n_noise;
            let states = simulate_at_steps(
                &inits[i],
                p,
                scheme,
                spec.t_final,
                noise,
                seed::derive(seed, "msd", &[i as u64, j as u64]),
                &record_steps,
            )?;
            Ok(states
                .iter()
                .map(|s| spec.observable.eval(s, sigma))
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let mut msd = vec![0.0; n_rec];
    let mut stderr = vec![0.0; n_rec];
    match spec.centering {
        Centering::NoiseAverage => {
            // per-init unbiased variance across replicas, then average over i
            for k in 0..n_rec {
                let mut per_init = Vec::with_capacity(spec.n_init);
                for i in 0..spec.n_init {
                    let base = i * spec.n_noise;
                    let mean: f64 = (0..spec.n_noise)
                        .map(|j| values[base + j][k])
                        .sum::<f64>()
                        / spec.n_noise as f64;
                    let var: f64 = (0..spec.n_noise)
                        .map(|j| {
                            let d = values[base + j][k] - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / (spec.n_noise as f64 - 1.0);
                    per_init.push(var);
                }
                let m = per_init.iter().sum::<f64>() / spec.n_init as f64;
                let spread = per_init
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>()
                    / (spec.n_init as f64 - 1.0);
                msd[k] = m;
                stderr[k] = (spread / spec.n_init as f64).sqrt();
            }
        }
        Centering::Pooled => {
            let n_tot = spec.n_init * spec.n_noise;
            for k in 0..n_rec {
                let mean: f64 = values.iter().map(|row| row[k]).sum::<f64>() / n_tot as f64;
                let var: f64 = values
                    .iter()
                    .map(|row| {
                        let d = row[k] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / (n_tot as f64 - 1.0);
                // spread of per-init pooled-centered variances
                let mut per_init = Vec::with_capacity(spec.n_init);
                for i in 0..spec.n_init {
                    let base = i * spec.n_noise;
                    let v: f64 = (0..spec.n_noise)
                        .map(|j| {
                            let d = values[base + j][k] - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / spec.n_noise as f64;
                    per_init.push(v);
                }
                let m = per_init.iter().sum::<f64>() / spec.n_init as f64;
                let spread = per_init
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>()
                    / (spec.n_init as f64 - 1.0);
                msd[k] = var;
                stderr[k] = (spread / spec.n_init as f64).sqrt();
            }
        }
    }

    Ok(MsdSeries {
        observable: spec.observable.name(),
        times: spec.record_times.clone(),
        msd,
        stderr,
        n_init: spec.n_init,
        n_noise: spec.n_noise,
    })
}

/// Power-law fit `msd ~ prefactor * t^exponent` over a window.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    pub residual: f64,
}

/// Least-squares line in `(log t, log msd)` over the record times inside the
/// window. Needs at least 5 strictly positive points.
pub fn power_law_fit(series: &MsdSeries, window: (f64, f64)) -> Result<FitResult, StatsError> {
    let (t0, t1) = window;
    let mut pts = Vec::new();
    for (k, &t) in series.times.iter().enumerate() {
        if t >= t0 && t <= t1 && t > 0.0 {
            if series.msd[k] <= 0.0 {
                return Err(StatsError::DegenerateWindow {
                    reason: format!("msd at t = {t} is not positive"),
                });
            }
            pts.push((t.ln(), series.msd[k].ln()));
        }
    }
    if pts.len() < 5 {
        return Err(StatsError::DegenerateWindow {
            reason: format!("{} points in [{t0}, {t1}], need 5", pts.len()),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(StatsError::DegenerateWindow {
            reason: "all points at the same time".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual: f64 = pts
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum::<f64>()
        .sqrt();
    Ok(FitResult {
        exponent: slope,
        prefactor: intercept.exp(),
        window,
        residual,
    })
}

/// Birkhoff (running time) average with an autocorrelation-adjusted error.
#[derive(Clone, Debug)]
pub struct BirkhoffAverage {
    pub mean: f64,
    /// Integrated autocorrelation time in sample steps (>= 1).
    pub tau_steps: f64,
    /// Same in time units.
    pub tau_time: f64,
    /// Effective sample size, duration / tau.
    pub ess: f64,
    pub stderr: f64,
    /// Running mean decimated to at most ~1000 points: `(time, mean so far)`.
    pub running: Vec<(f64, f64)>,
}

/// Unbiased autocovariance up to `max_lag` via FFT.
fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(m);
    buf.extend(x.iter().map(|&v| Complex::new(v - mean, 0.0)));
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    (0..=max_lag.min(n - 1))
        .map(|k| buf[k].re / m as f64 / (n - k) as f64)
        .collect()
}

/// Integrated autocorrelation time by the standard windowing rule: the
/// smallest window `W` with `W >= 5 * tau(W)`, where
/// `tau(W) = 1 + 2 sum_{k<=W} rho_k`.
fn integrated_autocorr_steps(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 16 {
        return 1.0;
    }
    let max_lag = (n / 5).min(100_000);
    let c = autocovariance(x, max_lag);
    if c[0] <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for w in 1..c.len() {
        tau += 2.0 * c[w] / c[0];
        if (w as f64) >= 5.0 * tau.max(1.0) {
            return tau.max(1.0);
        }
    }
    tau.max(1.0)
}

/// Running time-average of `g` along a densely recorded trajectory.
pub fn birkhoff_average(
    traj: &Trajectory,
    g: impl Fn(&State) -> f64,
) -> Result<BirkhoffAverage, StatsError> {
    let series: Vec<f64> = traj.states.iter().map(|s| g(s)).collect();
    let dt = if traj.times.len() > 1 {
        traj.times[1] - traj.times[0]
    } else {
        1.0
    };
    birkhoff_series(&series, dt)
}

/// Same on a raw observable series with uniform sample spacing `dt`.
pub fn birkhoff_series(series: &[f64], dt: f64) -> Result<BirkhoffAverage, StatsError> {
    let n = series.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { got: n, need: 2 });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    let tau_steps = integrated_autocorr_steps(series);
    let ess = n as f64 / tau_steps;
    let stderr = (var * tau_steps / n as f64).sqrt();

    let stride = (n / 1000).max(1);
    let mut running = Vec::with_capacity(n / stride + 1);
    let mut acc = 0.0;
    for (k, v) in series.iter().enumerate() {
        acc += v;
        if k % stride == 0 || k == n - 1 {
            running.push((k as f64 * dt, acc / (k + 1) as f64));
        }
    }
    Ok(BirkhoffAverage {
        mean,
        tau_steps,
        tau_time: tau_steps * dt,
        ess,
        stderr,
        running,
    })
}

/// Analytic marginal to test samples against.
pub enum MarginalSpec<'a> {
    Gaussian { mean: f64, sd: f64 },
    /// Position marginal `exp(-beta U)/Z` over one period.
    GibbsPosition { params: &'a DiskParams },
}

#[derive(Clone, Copy, Debug)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub critical_1pct: f64,
    pub pass: bool,
}

const CHI2_BINS: usize = 32;

/// Pearson chi-square test against the analytic marginal at the 1% level,
/// with equal-probability bins.
pub fn marginal_test(samples: &[f64], spec: &MarginalSpec) -> Result<ChiSquareReport, StatsError> {
    let n = samples.len();
    if n < 1000 {
        return Err(StatsError::TooFewSamples { got: n, need: 1000 });
    }
    let expected = n as f64 / CHI2_BINS as f64;
    if expected < 5.0 {
        return Err(StatsError::SparseBins { expected });
    }

    // bin edges at quantiles k/BINS, k = 1..BINS-1
    let edges: Vec<f64> = match spec {
        MarginalSpec::Gaussian { mean, sd } => {
            let normal = Normal::new(*mean, *sd).expect("valid gaussian");
            (1..CHI2_BINS)
                .map(|k| normal.inverse_cdf(k as f64 / CHI2_BINS as f64))
                .collect()
        }
        MarginalSpec::GibbsPosition { params } => {
            let beta = params.beta()?;
            let period = params.potential.period();
            let umin = params.potential.min_value();
            let w = |x: f64| (-beta * (params.potential.value(x) - umin)).exp();
            let z = adaptive_simpson(w, 0.0, period, 1e-10)?;
            let cdf = |x: f64| adaptive_simpson(w, 0.0, x, 1e-10).map(|v| v / z);
            (1..CHI2_BINS)
                .map(|k| {
                    let q = k as f64 / CHI2_BINS as f64;
                    // bisection on the strictly increasing CDF
                    let (mut lo, mut hi) = (0.0, period);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if cdf(mid)? < q {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    Ok(0.5 * (lo + hi))
                })
                .collect::<Result<_, StatsError>>()?
        }
    };

    let wrap = match spec {
        MarginalSpec::GibbsPosition { params } => Some(params.potential.period()),
        _ => None,
    };
    let mut counts = vec![0u64; CHI2_BINS];
    for &raw in samples {
        let v = match wrap {
            Some(period) => raw.rem_euclid(period),
            None => raw,
        };
        let idx = edges.partition_point(|e| *e <= v);
        counts[idx] += 1;
    }
    let statistic: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dof = CHI2_BINS - 1;
    let critical = ChiSquared::new(dof as f64)
        .expect("valid dof")
        .inverse_cdf(0.99);
    Ok(ChiSquareReport {
        statistic,
        dof,
        critical_1pct: critical,
        pass: statistic < critical,
    })
}
