//! The sliding disk: a mechanical system on `R x SO(2)` with friction and
//! noise applied to a single degree of freedom.
//!
//! State is `(x, theta, v, omega)`: center-of-mass position, rotation angle,
//! and their velocities. With inertia ratio `sigma = J/(m r^2)`, energy
//!
//! ```text
//! E = v^2/2 + sigma omega^2/2 + U(x)
//! ```
//!
//! friction and noise act through the rank-one matrix
//!
//! ```text
//! C = [1, 1/sigma; 1/sigma, 1/sigma^2],    C^{1/2} = sigma/sqrt(sigma^2+1) C,
//! ```
//!
//! so `d(v, omega) = (-dU, 0) dt - c C (v, sigma omega) dt + alpha C^{1/2} dB`.
//! Both friction and noise vanish along `(-1, sigma)`: the combination
//! `-v + sigma omega` only ever changes through the potential force. The Gibbs
//! density `exp(-beta E)` with `beta = 2c/alpha^2` is invariant.
//!
//! The linear change of variables `Y1 = -x + sigma theta`, `Y2 = x + theta`
//! splits the dynamics into an undamped degree of freedom (`Y1`, forced only
//! by the potential) and a damped, noise-driven one (`Y2`).

use nalgebra::{Matrix2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::quad::{adaptive_simpson, QuadError};

#[derive(Debug, Error)]
pub enum DiskError {
    #[error("sigma_ratio must be positive and finite, got {0}")]
    NonpositiveSigma(f64),
    #[error("friction coefficient c must be nonnegative and finite, got {0}")]
    NegativeFriction(f64),
    #[error("noise amplitude alpha must be nonnegative and finite, got {0}")]
    NegativeAlpha(f64),
    #[error("operation requires alpha > 0 (beta = 2c/alpha^2 undefined)")]
    ZeroAlpha,
    #[error("potential period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(#[from] QuadError),
}

/// Periodic on-site potential `U`.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Constant { level: f64 },
    /// `U(x) = amplitude * cos(2 pi x / period)`.
    Cosine { amplitude: f64, period: f64 },
}

impl Potential {
    pub fn constant(level: f64) -> Self {
        Potential::Constant { level }
    }

    pub fn cosine(amplitude: f64, period: f64) -> Result<Self, DiskError> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(DiskError::BadPeriod(period));
        }
        Ok(Potential::Cosine { amplitude, period })
    }

    /// `U(x)`
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Potential::Constant { level } => *level,
            Potential::Cosine { amplitude, period } => {
                amplitude * (2.0 * std::f64::consts::PI * x / period).cos()
            }
        }
    }

    /// `dU/dx`
    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Potential::Constant { .. } => 0.0,
            Potential::Cosine { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                -amplitude * k * (k * x).sin()
            }
        }
    }

    /// `d^2U/dx^2`
    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Potential::Constant { .. } => 0.0,
            Potential::Cosine { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                -amplitude * k * k * (k * x).cos()
            }
        }
    }

    /// `sup_x |dU/dx|`
    pub fn sup_d1(&self) -> f64 {
        match self {
            Potential::Constant { .. } => 0.0,
            Potential::Cosine { amplitude, period } => {
                2.0 * std::f64::consts::PI * amplitude.abs() / period
            }
        }
    }

    /// Spatial period; the constant potential uses the unit cell convention.
    pub fn period(&self) -> f64 {
        match self {
            Potential::Constant { .. } => 1.0,
            Potential::Cosine { period, .. } => *period,
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            Potential::Constant { level } => *level,
            Potential::Cosine { amplitude, .. } => -amplitude.abs(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Potential::Constant { .. })
    }

    /// Point where the curvature `d2U` is maximal, if the potential is
    /// non-constant. For the cosine with positive amplitude this is the
    /// half-period point (the potential minimum).
    pub fn max_d2_point(&self) -> Option<f64> {
        match self {
            Potential::Constant { .. } => None,
            Potential::Cosine { amplitude, period } => {
                if *amplitude >= 0.0 {
                    Some(0.5 * period)
                } else {
                    Some(0.0)
                }
            }
        }
    }
}

/// Physical parameters of the disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskParams {
    /// Inertia ratio `sigma = J/(m r^2)`, dimensionless, > 0.
    pub sigma_ratio: f64,
    /// Friction coefficient, >= 0.
    pub c: f64,
    /// Noise amplitude, >= 0.
    pub alpha: f64,
    pub potential: Potential,
}

impl DiskParams {
    pub fn new(
        sigma_ratio: f64,
        c: f64,
        alpha: f64,
        potential: Potential,
    ) -> Result<Self, DiskError> {
        if !(sigma_ratio > 0.0) || !sigma_ratio.is_finite() {
            return Err(DiskError::NonpositiveSigma(sigma_ratio));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(DiskError::NegativeFriction(c));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(DiskError::NegativeAlpha(alpha));
        }
        Ok(Self {
            sigma_ratio,
            c,
            alpha,
            potential,
        })
    }

    /// Inverse temperature `beta = 2c/alpha^2`; defined only for `alpha > 0`.
    pub fn beta(&self) -> Result<f64, DiskError> {
        if self.alpha > 0.0 {
            Ok(2.0 * self.c / (self.alpha * self.alpha))
        } else {
            Err(DiskError::ZeroAlpha)
        }
    }

    /// Damping rate factor of the driven mode: `gamma = (sigma+1)/sigma`.
    pub fn gamma_fric(&self) -> f64 {
        (self.sigma_ratio + 1.0) / self.sigma_ratio
    }
}

/// Phase point `(x, theta, v, omega)`. Positions are unwrapped reals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub x: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl State {
    pub fn new(x: f64, theta: f64, v: f64, omega: f64) -> Self {
        Self { x, theta, v, omega }
    }

    pub fn rest() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.theta.is_finite() && self.v.is_finite() && self.omega.is_finite()
    }
}

/// The same phase point in the split coordinates
/// `(Y1, Y2) = (-x + sigma theta, x + theta)` and their velocities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YState {
    pub y1: f64,
    pub y2: f64,
    pub y1dot: f64,
    pub y2dot: f64,
}

impl YState {
    pub fn new(y1: f64, y2: f64, y1dot: f64, y2dot: f64) -> Self {
        Self {
            y1,
            y2,
            y1dot,
            y2dot,
        }
    }

    /// `x`-argument of the potential for this point:
    /// `x = (sigma Y2 - Y1)/(sigma + 1)`.
    pub fn x_arg(&self, sigma: f64) -> f64 {
        (sigma * self.y2 - self.y1) / (sigma + 1.0)
    }

    pub fn dist(&self, other: &YState) -> f64 {
        let d = [
            self.y1 - other.y1,
            self.y2 - other.y2,
            self.y1dot - other.y1dot,
            self.y2dot - other.y2dot,
        ];
        d.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.y1.is_finite() && self.y2.is_finite() && self.y1dot.is_finite() && self.y2dot.is_finite()
    }
}

/// Mechanical energy `E = v^2/2 + sigma omega^2/2 + U(x)`.
pub fn energy(s: &State, p: &DiskParams) -> f64 {
    0.5 * s.v * s.v + 0.5 * p.sigma_ratio * s.omega * s.omega + p.potential.value(s.x)
}

/// The friction matrix `C` and its square root `C^{1/2}`.
///
/// `C` is rank one: `C = u u^T` with `u = (1, 1/sigma)`, and
/// `C^{1/2} = sigma/sqrt(sigma^2+1) C`.
pub fn friction_matrices(sigma_ratio: f64) -> Result<(Matrix2<f64>, Matrix2<f64>), DiskError> {
    if !(sigma_ratio > 0.0) || !sigma_ratio.is_finite() {
        return Err(DiskError::NonpositiveSigma(sigma_ratio));
    }
    let s = sigma_ratio;
    let c = Matrix2::new(1.0, 1.0 / s, 1.0 / s, 1.0 / (s * s));
    let chalf = c * (s / (s * s + 1.0).sqrt());
    Ok((c, chalf))
}

/// Drift field of the full state:
/// `(v, omega, -dU - c [C (v, sigma omega)]_1, -c [C (v, sigma omega)]_2)`.
///
/// `C (v, sigma omega) = (v + omega) (1, 1/sigma)`, so the friction force is
/// computed through the shared scalar `v + omega`; the combination
/// `-dv + sigma domega` then reduces to `+dU(x)` exactly.
pub fn drift(s: &State, p: &DiskParams) -> Vector4<f64> {
    let fric = p.c * (s.v + s.omega);
    Vector4::new(
        s.v,
        s.omega,
        -p.potential.d1(s.x) - fric,
        -fric / p.sigma_ratio,
    )
}

/// Map to the split coordinates.
pub fn to_y(s: &State, sigma: f64) -> YState {
    YState {
        y1: -s.x + sigma * s.theta,
        y2: s.x + s.theta,
        y1dot: -s.v + sigma * s.omega,
        y2dot: s.v + s.omega,
    }
}

/// Inverse of [`to_y`].
pub fn from_y(y: &YState, sigma: f64) -> State {
    let d = sigma + 1.0;
    State {
        x: (sigma * y.y2 - y.y1) / d,
        theta: (y.y1 + y.y2) / d,
        v: (sigma * y.y2dot - y.y1dot) / d,
        omega: (y.y1dot + y.y2dot) / d,
    }
}

/// The friction- and noise-immune combination `-v + sigma omega`.
pub fn casimir(s: &State, sigma: f64) -> f64 {
    -s.v + sigma * s.omega
}

/// Unnormalized log of the Gibbs density, `-beta E`, with the position
/// reduced to one period cell (the angle cell is taken as 1).
pub fn gibbs_log_density(s: &State, p: &DiskParams) -> Result<f64, DiskError> {
    let beta = p.beta()?;
    let period = p.potential.period();
    let x = s.x.rem_euclid(period);
    let e = 0.5 * s.v * s.v + 0.5 * p.sigma_ratio * s.omega * s.omega + p.potential.value(x);
    Ok(-beta * e)
}

/// Draw `n` states from the Gibbs measure, deterministically in `seed`.
///
/// Velocities are Gaussian (`Var v = 1/beta`, `Var omega = 1/(beta sigma)`),
/// the angle is uniform on one cell, and the position is drawn by rejection
/// from `exp(-beta U)` over one period with the exact constant envelope
/// `exp(-beta min U)`.
pub fn gibbs_sample(p: &DiskParams, n: usize, seed: u64) -> Result<Vec<State>, DiskError> {
    let beta = p.beta()?;
    let sd_v = (1.0 / beta).sqrt();
    let sd_w = (1.0 / (beta * p.sigma_ratio)).sqrt();
    let period = p.potential.period();
    let umin = p.potential.min_value();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let zv: f64 = StandardNormal.sample(&mut rng);
        let zw: f64 = StandardNormal.sample(&mut rng);
        let v = sd_v * zv;
        let omega = sd_w * zw;
        let theta: f64 = rng.random::<f64>();
        let x = loop {
            let cand = period * rng.random::<f64>();
            let accept = (-beta * (p.potential.value(cand) - umin)).exp();
            if rng.random::<f64>() <= accept {
                break cand;
            }
        };
        out.push(State::new(x, theta, v, omega));
    }
    Ok(out)
}

/// Gibbs average of a position observable:
/// `int g e^{-beta U} dx / int e^{-beta U} dx` over one period,
/// by adaptive quadrature at absolute tolerance 1e-10.
pub fn gibbs_observable_mean(
    p: &DiskParams,
    g: impl Fn(f64) -> f64,
) -> Result<f64, DiskError> {
    let beta = p.beta()?;
    let period = p.potential.period();
    // Shift by the minimum so the integrand is O(1) at any temperature.
    let umin = p.potential.min_value();
    let weight = |x: f64| (-beta * (p.potential.value(x) - umin)).exp();
    let z = adaptive_simpson(weight, 0.0, period, 1e-10)?;
    let num = adaptive_simpson(|x| g(x) * weight(x), 0.0, period, 1e-10)?;
    Ok(num / z)
}

/// Coefficients of the reduced (split-coordinate) dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedCoefficients {
    /// Damping factor `gamma = (sigma+1)/sigma`; the `Y2dot` friction rate is
    /// `c * gamma`.
    pub gamma_fric: f64,
    /// Row of `alpha C^{1/2}` summed over the `v` and `omega` equations:
    /// the coefficients multiplying `dB_v` and `dB_omega` in `dY2dot`.
    /// Equals `abar * (1, 1/sigma)` with `abar = alpha(sigma+1)/sqrt(sigma^2+1)`.
    pub y2dot_noise_row: [f64; 2],
    /// Euclidean norm of the row: the intensity of the single effective
    /// Brownian motion driving `Y2dot`. Equals `alpha (sigma+1)/sigma`.
    pub noise_intensity: f64,
    /// The scale `abar = alpha(sigma+1)/sqrt(sigma^2+1)` reported for
    /// comparison; `abar * sqrt(2)` matches `noise_intensity` only at
    /// `sigma = 1`.
    pub paper_abar: f64,
}

/// Derive the reduced coefficients from `alpha C^{1/2}` by summing the two
/// momentum rows.
pub fn reduced_coefficients(p: &DiskParams) -> ReducedCoefficients {
    let s = p.sigma_ratio;
    let abar = p.alpha * (s + 1.0) / (s * s + 1.0).sqrt();
    let row = [abar, abar / s];
    ReducedCoefficients {
        gamma_fric: p.gamma_fric(),
        y2dot_noise_row: row,
        noise_intensity: (row[0] * row[0] + row[1] * row[1]).sqrt(),
        paper_abar: abar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng as _;

    fn suite_a() -> DiskParams {
        DiskParams::new(
            1.0,
            1.0,
            2f64.sqrt(),
            Potential::cosine(1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn potential_periodicity_and_derivatives() {
        let u = Potential::cosine(0.7, 1.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: f64 = 10.0 * rng.random::<f64>() - 5.0;
            assert_relative_eq!(u.value(x + 1.3), u.value(x), epsilon = 1e-12);
            // central differences
            let h = 1e-5;
            let fd1 = (u.value(x + h) - u.value(x - h)) / (2.0 * h);
            let fd2 = (u.d1(x + h) - u.d1(x - h)) / (2.0 * h);
            assert_relative_eq!(u.d1(x), fd1, epsilon = 1e-6, max_relative = 1e-6);
            assert_relative_eq!(u.d2(x), fd2, epsilon = 1e-6, max_relative = 1e-6);
        }
        let flat = Potential::constant(2.0);
        assert_eq!(flat.d1(0.3), 0.0);
        assert_eq!(flat.sup_d1(), 0.0);
    }

    #[test]
    fn energy_examples() {
        let p = suite_a();
        let s = State::new(0.0, 0.0, 1.0, 0.0);
        assert_abs_diff_eq!(energy(&s, &p), 1.5, epsilon = 1e-15);

        let p2 = DiskParams::new(2.0, 0.0, 0.0, Potential::constant(0.0)).unwrap();
        let s2 = State::new(0.0, 0.0, 0.0, 2.0);
        assert_abs_diff_eq!(energy(&s2, &p2), 4.0, epsilon = 1e-15);

        // invariance under one period shift
        let s3 = State::new(0.25, 0.1, 0.3, -0.2);
        let s4 = State::new(1.25, 0.1, 0.3, -0.2);
        assert_relative_eq!(energy(&s3, &p), energy(&s4, &p), epsilon = 1e-12);
    }

    #[test]
    fn friction_matrix_sigma_one() {
        let (c, chalf) = friction_matrices(1.0).unwrap();
        assert_eq!(c, Matrix2::new(1.0, 1.0, 1.0, 1.0));
        let expected = c * (1.0 / 2f64.sqrt());
        assert_relative_eq!(chalf, expected, epsilon = 1e-15);
    }

    #[test]
    fn friction_matrix_square_root_and_null_vector() {
        for &s in &[0.3, 1.0, 2.0, 7.5] {
            let (c, chalf) = friction_matrices(s).unwrap();
            assert_relative_eq!(chalf * chalf, c, epsilon = 1e-12);
            // degenerate direction (-1, sigma)
            let null = nalgebra::Vector2::new(-1.0, s);
            assert_abs_diff_eq!((c * null).norm(), 0.0, epsilon = 1e-12 * s.max(1.0));
            assert!(c.determinant().abs() < 1e-12 * s.max(1.0));
        }
        assert!(friction_matrices(0.0).is_err());
        assert!(friction_matrices(-1.0).is_err());
    }

    #[test]
    fn drift_examples() {
        let peq = DiskParams::new(1.5, 0.7, 0.0, Potential::constant(3.0)).unwrap();
        assert_eq!(drift(&State::rest(), &peq), Vector4::zeros());

        // c = 0: acceleration is the potential force, cross-checked by a
        // central difference of U.
        let p = DiskParams::new(1.0, 0.0, 0.0, Potential::cosine(1.0, 1.0).unwrap()).unwrap();
        let s = State::new(0.25, 0.0, 0.0, 0.0);
        let d = drift(&s, &p);
        let h = 1e-6;
        let fd = (p.potential.value(0.25 + h) - p.potential.value(0.25 - h)) / (2.0 * h);
        assert_relative_eq!(d[2], -fd, epsilon = 1e-7, max_relative = 1e-7);

        // The friction cancels exactly in -dv + sigma domega, leaving +dU.
        let p = DiskParams::new(2.5, 0.9, 0.0, Potential::cosine(0.8, 1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = State::new(
                rng.random::<f64>() * 4.0 - 2.0,
                rng.random::<f64>() * 4.0 - 2.0,
                rng.random::<f64>() * 4.0 - 2.0,
                rng.random::<f64>() * 4.0 - 2.0,
            );
            let d = drift(&s, &p);
            let cas_rate = -d[2] + p.sigma_ratio * d[3];
            assert_relative_eq!(
                cas_rate,
                p.potential.d1(s.x),
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn y_map_examples() {
        let y = to_y(&State::new(1.0, 0.0, 0.0, 0.0), 2.0);
        assert_eq!((y.y1, y.y2), (-1.0, 1.0));

        let s = State::new(0.3, -0.7, 1.1, 0.4);
        for &sig in &[0.5, 1.0, 3.7] {
            let back = from_y(&to_y(&s, sig), sig);
            assert_relative_eq!(back.x, s.x, epsilon = 1e-12);
            assert_relative_eq!(back.theta, s.theta, epsilon = 1e-12);
            assert_relative_eq!(back.v, s.v, epsilon = 1e-12);
            assert_relative_eq!(back.omega, s.omega, epsilon = 1e-12);
        }

        // y1 = 0, y2 = sigma + 1  =>  x = sigma, theta = 1
        for &sig in &[0.5, 1.0, 4.0] {
            let s = from_y(&YState::new(0.0, sig + 1.0, 0.0, 0.0), sig);
            assert_relative_eq!(s.x, sig, epsilon = 1e-12);
            assert_relative_eq!(s.theta, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn casimir_examples() {
        let s = State::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(casimir(&s, 2.0), 1.0);
        assert_eq!(casimir(&s, 2.0), to_y(&s, 2.0).y1dot);
    }

    #[test]
    fn gibbs_log_density_examples() {
        let p = suite_a();
        let a = State::new(0.3, 0.0, 0.5, -0.1);
        let b = State::new(1.3, 0.0, 0.5, -0.1);
        assert_relative_eq!(
            gibbs_log_density(&a, &p).unwrap(),
            gibbs_log_density(&b, &p).unwrap(),
            epsilon = 1e-12
        );

        // constant U: log-density difference between v=1 and v=0 is -beta/2
        let pc = DiskParams::new(1.0, 1.5, 1.0, Potential::constant(0.0)).unwrap();
        let beta = pc.beta().unwrap();
        let d = gibbs_log_density(&State::new(0.0, 0.0, 1.0, 0.0), &pc).unwrap()
            - gibbs_log_density(&State::rest(), &pc).unwrap();
        assert_relative_eq!(d, -beta / 2.0, epsilon = 1e-12);

        // beta doubles with c at fixed alpha
        let p1 = DiskParams::new(1.0, 1.0, 1.0, Potential::constant(0.0)).unwrap();
        let p2 = DiskParams::new(1.0, 2.0, 1.0, Potential::constant(0.0)).unwrap();
        assert_relative_eq!(p2.beta().unwrap(), 2.0 * p1.beta().unwrap(), epsilon = 1e-15);

        let pz = DiskParams::new(1.0, 1.0, 0.0, Potential::constant(0.0)).unwrap();
        assert!(matches!(
            gibbs_log_density(&State::rest(), &pz),
            Err(DiskError::ZeroAlpha)
        ));
    }

    #[test]
    fn gibbs_sampler_moments_flat_potential() {
        let p = DiskParams::new(2.0, 1.0, 2f64.sqrt(), Potential::constant(0.0)).unwrap();
        let beta = p.beta().unwrap();
        let n = 100_000;
        let states = gibbs_sample(&p, n, 99).unwrap();
        let mean_v2 = states.iter().map(|s| s.v * s.v).sum::<f64>() / n as f64;
        let mean_sw2 = states
            .iter()
            .map(|s| p.sigma_ratio * s.omega * s.omega)
            .sum::<f64>()
            / n as f64;
        // Var of v^2 is 2/beta^2 for a Gaussian.
        let se = (2.0 / (beta * beta) / n as f64).sqrt();
        assert!(
            (mean_v2 - 1.0 / beta).abs() < 3.0 * se,
            "E[v^2] = {mean_v2}, target {}",
            1.0 / beta
        );
        assert!((mean_sw2 - 1.0 / beta).abs() < 3.0 * se);
        // x uniform on the cell: mean close to period/2
        let mean_x = states.iter().map(|s| s.x).sum::<f64>() / n as f64;
        let se_x = 1.0 / (12f64).sqrt() / (n as f64).sqrt();
        assert!((mean_x - 0.5).abs() < 4.0 * se_x);
    }

    #[test]
    fn gibbs_sampler_position_matches_quadrature() {
        let p = suite_a(); // beta = 1
        let g = |x: f64| (2.0 * std::f64::consts::PI * x).cos();
        let target = gibbs_observable_mean(&p, g).unwrap();
        let n = 100_000;
        let states = gibbs_sample(&p, n, 4321).unwrap();
        let vals: Vec<f64> = states.iter().map(|s| g(s.x)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - target).abs() < 3.0 * se,
            "sampled {mean}, quadrature {target}"
        );
    }

    #[test]
    fn gibbs_observable_mean_examples() {
        let p = suite_a();
        assert_relative_eq!(gibbs_observable_mean(&p, |_| 1.0).unwrap(), 1.0, epsilon = 1e-9);

        let flat = DiskParams::new(1.0, 1.0, 2f64.sqrt(), Potential::constant(0.2)).unwrap();
        let v = gibbs_observable_mean(&flat, |x| (2.0 * std::f64::consts::PI * x).cos()).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn reduced_coefficients_examples() {
        let p = DiskParams::new(1.0, 0.1, 5.0, Potential::constant(0.0)).unwrap();
        let r = reduced_coefficients(&p);
        assert_relative_eq!(r.gamma_fric, 2.0, epsilon = 1e-15);
        let expect = 5.0 * 2.0 / 2f64.sqrt();
        assert_relative_eq!(r.y2dot_noise_row[0], expect, epsilon = 1e-12);
        assert_relative_eq!(r.y2dot_noise_row[1], expect, epsilon = 1e-12);
        assert_relative_eq!(r.paper_abar, expect, epsilon = 1e-12);
        assert_relative_eq!(r.noise_intensity, 10.0, epsilon = 1e-12);
        // friction rate on Y2dot
        assert_relative_eq!(p.c * r.gamma_fric, 0.2, epsilon = 1e-15);

        let p2 = DiskParams::new(2.0, 0.0, 1.0, Potential::constant(0.0)).unwrap();
        let r2 = reduced_coefficients(&p2);
        assert_relative_eq!(r2.y2dot_noise_row[0], 3.0 / 5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r2.y2dot_noise_row[1], 1.5 / 5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r2.noise_intensity, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn degeneracy_of_noise_and_friction_along_casimir() {
        for &s in &[0.5, 1.0, 2.0, 5.0] {
            let p = DiskParams::new(s, 0.8, 1.3, Potential::constant(0.0)).unwrap();
            let (_, chalf) = friction_matrices(s).unwrap();
            // casimir row of alpha C^{1/2}: -row_v + sigma row_omega = 0
            for col in 0..2 {
                let e = -p.alpha * chalf[(0, col)] + s * p.alpha * chalf[(1, col)];
                assert_abs_diff_eq!(e, 0.0, epsilon = 1e-12 * p.alpha * s.max(1.0));
            }
        }
    }

    #[test]
    fn kinetic_form_in_y_coordinates_is_positive_definite() {
        // E restricted to velocities, expressed in (y1dot, y2dot):
        // v = (sigma y2dot - y1dot)/(sigma+1), omega = (y1dot + y2dot)/(sigma+1).
        for &s in &[0.4, 1.0, 3.0] {
            let d = s + 1.0;
            // assemble the form numerically from v^2/2 + sigma omega^2/2
            let q = |y1d: f64, y2d: f64| {
                let v = (s * y2d - y1d) / d;
                let w = (y1d + y2d) / d;
                0.5 * v * v + 0.5 * s * w * w
            };
            let m = Matrix2::new(
                q(1.0, 0.0),
                0.5 * (q(1.0, 1.0) - q(1.0, 0.0) - q(0.0, 1.0)),
                0.5 * (q(1.0, 1.0) - q(1.0, 0.0) - q(0.0, 1.0)),
                q(0.0, 1.0),
            );
            let eig = m.symmetric_eigenvalues();
            assert!(eig[0] > 0.0 && eig[1] > 0.0, "sigma {s}: eigenvalues {eig:?}");
        }
    }
}
