//! Numerical verification of the geometric ergodicity conditions.
//!
//! Two checks, both on the split-coordinate system:
//!
//! * **Approximate controllability** — synthesize a deterministic control path
//!   steering any start near any target ([`build_control`]), then verify by
//!   integration at two step sizes ([`verify_control`]). Synthesis is a
//!   multiple-shooting least-squares over piecewise-linear knot values with
//!   Levenberg–Marquardt damping and a few multi-starts.
//!
//! * **Closure under second randomization** — perturb the driving path by
//!   lambda-weighted bump functions and measure the 4x4 derivative of the
//!   frictionless flow with respect to lambda ([`lambda_jacobian`]). A
//!   linearized-response integration ([`linearized_response`]) provides an
//!   independent route to the same matrix near an expansion point where the
//!   potential curvature is positive.

use nalgebra::{DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disk::{to_y, DiskParams, State, YState};
#[cfg(test)]
use crate::disk::from_y;
use crate::integrate::{default_control_gain, simulate_controlled, IntegrateError};
use crate::seed;

#[derive(Debug, Error)]
pub enum ConditionsError {
    #[error("control path must start at zero, got {0}")]
    PathStart(f64),
    #[error("control path needs at least two knots")]
    TooFewKnots,
    #[error("control path horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("non-finite control path value")]
    NonfinitePath,
    #[error("finite-difference step delta must be positive, got {0}")]
    BadDelta(f64),
    #[error("non-finite entries in the finite-difference jacobian")]
    NonfiniteEntries,
    #[error(
        "control synthesis failed: best terminal distance {best_distance:.3e} \
         against eps {eps:.3e} ({diagnostics})"
    )]
    SynthesisFailure {
        best_distance: f64,
        eps: f64,
        diagnostics: String,
    },
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Scalar control input: piecewise-linear on uniform knots over
/// `[0, t_total]`, vanishing at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ControlPath {
    /// Uniform knots from the given values; `values[0]` must be 0.
    pub fn from_values(t_total: f64, values: Vec<f64>) -> Result<Self, ConditionsError> {
        if values.len() < 2 {
            return Err(ConditionsError::TooFewKnots);
        }
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(ConditionsError::BadHorizon(t_total));
        }
        if values[0] != 0.0 {
            return Err(ConditionsError::PathStart(values[0]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ConditionsError::NonfinitePath);
        }
        let n = values.len();
        let dt = t_total / (n - 1) as f64;
        let times = (0..n).map(|k| k as f64 * dt).collect();
        Ok(Self { times, values })
    }

    /// The zero path on `n_knots` uniform knots.
    pub fn zero(t_total: f64, n_knots: usize) -> Self {
        Self::from_values(t_total, vec![0.0; n_knots.max(2)]).expect("zero path is valid")
    }

    pub fn t_total(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn knot_spacing(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    fn segment(&self, t: f64) -> usize {
        let dt = self.knot_spacing();
        ((t / dt).floor() as usize).min(self.values.len() - 2)
    }

    /// Piecewise-linear interpolation; clamped outside `[0, t_total]`.
    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.values[0];
        }
        if t >= self.t_total() {
            return *self.values.last().unwrap();
        }
        let i = self.segment(t);
        let dt = self.knot_spacing();
        let frac = (t - self.times[i]) / dt;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// Slope of the segment containing `t` (constant per segment).
    pub fn slope(&self, t: f64) -> f64 {
        if t >= self.t_total() {
            return 0.0;
        }
        let i = self.segment(t.max(0.0));
        (self.values[i + 1] - self.values[i]) / self.knot_spacing()
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Monomial bump family `phi_i(s) = (s/t)^i`, `i = 1..=4`; all vanish at 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpBasis {
    pub t_total: f64,
}

impl BumpBasis {
    pub fn monomial(t_total: f64) -> Result<Self, ConditionsError> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(ConditionsError::BadHorizon(t_total));
        }
        Ok(Self { t_total })
    }

    /// `phi_i(s)`, `i` in `0..4` mapping to exponents 1..=4.
    pub fn eval(&self, i: usize, s: f64) -> f64 {
        (s / self.t_total).powi(i as i32 + 1)
    }

    /// Condition number of the Gram matrix on an `n`-point grid; the family
    /// must be numerically independent for the jacobian to mean anything.
    pub fn gram_condition(&self, n: usize) -> f64 {
        let mut g = nalgebra::Matrix4::<f64>::zeros();
        let w = self.t_total / n as f64;
        for k in 0..n {
            let s = (k as f64 + 0.5) * w;
            for i in 0..4 {
                for j in 0..4 {
                    g[(i, j)] += self.eval(i, s) * self.eval(j, s) * w;
                }
            }
        }
        let mut sv: Vec<f64> = g.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv[0] / sv[3]
    }
}

/// Derivative of the randomized frictionless flow at `lambda = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JacobianReport {
    /// Rows in the order `(xi1, xi1dot, xi2, xi2dot)`, columns `lambda_i`.
    pub matrix: [[f64; 4]; 4],
    /// Sorted descending.
    pub singular_values: [f64; 4],
    /// `None` when the smallest singular value is zero.
    pub condition_number: Option<f64>,
    /// Number of singular values above 1e-10.
    pub rank: usize,
    pub delta: f64,
}

const RANK_TOL: f64 = 1e-10;

/// Frictionless randomized flow: the transverse velocity is prescribed
/// directly,
///
/// ```text
/// xi2'(s) = a2dot + gain * (base(s) + sum_i lambda_i phi_i(s)),
/// xi1''   = dU((sigma xi2 - xi1)/(sigma+1)),
/// ```
///
/// integrated by RK4 over `[0, t]`; returns the full terminal state.
/// The gain is `abar sqrt(2)` derived from `p`.
pub fn lambda_flow(
    a: &YState,
    base: &ControlPath,
    bumps: &BumpBasis,
    lambda: &[f64; 4],
    t: f64,
    p: &DiskParams,
    h: f64,
) -> Result<YState, ConditionsError> {
    let n_steps = steps_checked(t, h)?;
    if base.t_total() + 1e-9 < t {
        return Err(ConditionsError::Integrate(IntegrateError::PathTooShort {
            path_t: base.t_total(),
            horizon: t,
        }));
    }
    let gain = default_control_gain(p);
    let sig = p.sigma_ratio;
    let xi2dot = |s: f64| -> f64 {
        let mut bump = 0.0;
        for i in 0..4 {
            bump += lambda[i] * bumps.eval(i, s);
        }
        a.y2dot + gain * (base.value(s) + bump)
    };
    // state (xi1, xi1dot, xi2)
    let deriv = |y: &[f64; 3], s: f64| -> [f64; 3] {
        let x = (sig * y[2] - y[0]) / (sig + 1.0);
        [y[1], p.potential.d1(x), xi2dot(s)]
    };
    let mut y = [a.y1, a.y1dot, a.y2];
    for k in 0..n_steps {
        let s0 = k as f64 * h;
        let k1 = deriv(&y, s0);
        let k2 = deriv(
            &[
                y[0] + 0.5 * h * k1[0],
                y[1] + 0.5 * h * k1[1],
                y[2] + 0.5 * h * k1[2],
            ],
            s0 + 0.5 * h,
        );
        let k3 = deriv(
            &[
                y[0] + 0.5 * h * k2[0],
                y[1] + 0.5 * h * k2[1],
                y[2] + 0.5 * h * k2[2],
            ],
            s0 + 0.5 * h,
        );
        let k4 = deriv(
            &[y[0] + h * k3[0], y[1] + h * k3[1], y[2] + h * k3[2]],
            s0 + h,
        );
        for i in 0..3 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(YState::new(y[0], y[2], y[1], xi2dot(t)))
}

fn steps_checked(t: f64, h: f64) -> Result<usize, ConditionsError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(ConditionsError::Integrate(IntegrateError::NonpositiveStep(
            h,
        )));
    }
    let n = (t / h).round();
    if n < 1.0 || (n * h - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(ConditionsError::Integrate(
            IntegrateError::TimeNotMultipleOfStep { t, h },
        ));
    }
    Ok(n as usize)
}

/// Central finite differences of [`lambda_flow`] in each `lambda_i` at
/// `lambda = 0`, assembled with singular values, condition number, and rank.
#[allow(clippy::too_many_arguments)]
pub fn lambda_jacobian(
    a: &YState,
    base: &ControlPath,
    bumps: &BumpBasis,
    t: f64,
    p: &DiskParams,
    h: f64,
    delta: f64,
) -> Result<JacobianReport, ConditionsError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(ConditionsError::BadDelta(delta));
    }
    let mut m = [[0.0f64; 4]; 4];
    for i in 0..4 {
        let mut lp = [0.0; 4];
        lp[i] = delta;
        let mut lm = [0.0; 4];
        lm[i] = -delta;
        let fp = lambda_flow(a, base, bumps, &lp, t, p, h)?;
        let fm = lambda_flow(a, base, bumps, &lm, t, p, h)?;
        let col = [
            (fp.y1 - fm.y1) / (2.0 * delta),
            (fp.y1dot - fm.y1dot) / (2.0 * delta),
            (fp.y2 - fm.y2) / (2.0 * delta),
            (fp.y2dot - fm.y2dot) / (2.0 * delta),
        ];
        for r in 0..4 {
            if !col[r].is_finite() {
                return Err(ConditionsError::NonfiniteEntries);
            }
            m[r][i] = col[r];
        }
    }
    Ok(report_from_matrix(m, delta))
}

fn report_from_matrix(m: [[f64; 4]; 4], delta: f64) -> JacobianReport {
    let mat = Matrix4::from_fn(|r, c| m[r][c]);
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rank = sv.iter().filter(|s| **s > RANK_TOL).count();
    let condition_number = if sv[3] > 0.0 { Some(sv[0] / sv[3]) } else { None };
    JacobianReport {
        matrix: m,
        singular_values: [sv[0], sv[1], sv[2], sv[3]],
        condition_number,
        rank,
        delta,
    }
}

/// Linear-response route to the same 4x4 matrix, valid near a point where the
/// base trajectory does not move (zero momenta at a critical point of `U`).
///
/// Per unit `lambda_i` the transverse rows are exact integrals of the bumps,
/// and the `(xi1, xi1dot)` rows solve
///
/// ```text
/// eta'' + (d2U(x0)/(sigma+1)) eta = d2U(x0) (sigma/(sigma+1)) gain * Phi_i(s),
/// Phi_i(s) = int_0^s phi_i,   eta(0) = eta'(0) = 0,
/// ```
///
/// with `d2U` evaluated at the x-argument of `a`. Integrated by RK4.
pub fn linearized_response(
    a: &YState,
    bumps: &BumpBasis,
    t: f64,
    p: &DiskParams,
    h: f64,
) -> Result<[[f64; 4]; 4], ConditionsError> {
    let n_steps = steps_checked(t, h)?;
    let gain = default_control_gain(p);
    let sig = p.sigma_ratio;
    let d2 = p.potential.d2(a.x_arg(sig));
    let restoring = d2 / (sig + 1.0);
    let forcing = d2 * sig / (sig + 1.0) * gain;

    let mut m = [[0.0f64; 4]; 4];
    for i in 0..4 {
        // state (eta, etadot, Phi)
        let deriv = |y: &[f64; 3], s: f64| -> [f64; 3] {
            [y[1], -restoring * y[0] + forcing * y[2], bumps.eval(i, s)]
        };
        let mut y = [0.0f64; 3];
        for k in 0..n_steps {
            let s0 = k as f64 * h;
            let k1 = deriv(&y, s0);
            let k2 = deriv(
                &[
                    y[0] + 0.5 * h * k1[0],
                    y[1] + 0.5 * h * k1[1],
                    y[2] + 0.5 * h * k1[2],
                ],
                s0 + 0.5 * h,
            );
            let k3 = deriv(
                &[
                    y[0] + 0.5 * h * k2[0],
                    y[1] + 0.5 * h * k2[1],
                    y[2] + 0.5 * h * k2[2],
                ],
                s0 + 0.5 * h,
            );
            let k4 = deriv(
                &[y[0] + h * k3[0], y[1] + h * k3[1], y[2] + h * k3[2]],
                s0 + h,
            );
            for j in 0..3 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        m[0][i] = y[0];
        m[1][i] = y[1];
        m[2][i] = gain * y[2];
        m[3][i] = gain * bumps.eval(i, t);
    }
    Ok(m)
}

/// Default expansion point: zero momenta, position at the curvature maximum
/// of the potential (angle 0). `None` for constant potentials.
pub fn default_expansion_point(p: &DiskParams) -> Option<YState> {
    let x0 = p.potential.max_d2_point()?;
    Some(to_y(&State::new(x0, 0.0, 0.0, 0.0), p.sigma_ratio))
}

struct LmOutcome {
    x: DVector<f64>,
    residual_norm: f64,
}

/// Damped least squares with numerical forward-difference jacobian:
/// `(J^T J + lambda D) delta = -J^T r` with `D = max(diag(J^T J), floor)`.
fn levenberg_marquardt(
    residual: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    target_norm: f64,
    max_iters: usize,
) -> LmOutcome {
    let n = x0.len();
    let mut x = x0;
    let mut r = residual(&x);
    let mut rnorm = r.norm();
    let m = r.len();
    let mut lambda = 1e-3;
    let mut stall = 0usize;
    for _ in 0..max_iters {
        if rnorm < target_norm || stall > 10 {
            break;
        }
        // forward-difference jacobian, m x n
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let step = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += step;
            let rp = residual(&xp);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / step;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * &r;
        let floor = 1e-6 * (jtj.trace() / n as f64).max(1e-12);
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += lambda * jtj[(d, d)].max(floor);
            }
            let delta = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => match a.lu().solve(&(-&jtr)) {
                    Some(s) => s,
                    None => break,
                },
            };
            let cand = &x + &delta;
            let rc = residual(&cand);
            let cnorm = rc.norm();
            if cnorm < rnorm {
                x = cand;
                r = rc;
                rnorm = cnorm;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
        if improved {
            stall = 0;
        } else {
            stall += 1;
            if lambda > 1e12 {
                break;
            }
        }
    }
    LmOutcome {
        x,
        residual_norm: rnorm,
    }
}

/// Internal RK4 step for a knot layout: spacing divided into whole steps
/// close to the target step.
fn synthesis_step(spacing: f64, target: f64) -> f64 {
    let k = (spacing / target).ceil().max(1.0);
    spacing / k
}

/// Inverse-dynamics initial guess.
///
/// The undamped coordinate obeys `Y1'' = dU(x)`, so instead of shooting (the
/// flow is exponentially sensitive along generic paths), parametrize the
/// position argument `x*(t)` directly: a Hermite cubic pinned to the
/// endpoint positions and velocities plus a few interior bumps. `Y1` then
/// follows by quadrature alone, and the two remaining boundary conditions
/// (`Y1(T)`, `Y1dot(T)`) become a smooth 2x4 least-squares problem in the
/// bump amplitudes. The transverse coordinate and the control follow
/// algebraically; projecting the control onto the knot grid leaves an O(grid)
/// terminal error for the shooting polish to close.
struct ReferencePlan {
    knot_values: Vec<f64>,
}

fn constructive_guess(
    start: &YState,
    target: &YState,
    p: &DiskParams,
    t_total: f64,
    n_knots: usize,
) -> Option<ReferencePlan> {
    let sig = p.sigma_ratio;
    let gain = default_control_gain(p);
    if gain == 0.0 {
        return None;
    }
    let cg = p.c * p.gamma_fric();
    let x_s = start.x_arg(sig);
    let x_t = target.x_arg(sig);
    let xdot_s = (sig * start.y2dot - start.y1dot) / (sig + 1.0);
    let xdot_t = (sig * target.y2dot - target.y1dot) / (sig + 1.0);
    let tt = t_total;

    // x*(t; c) = Hermite(x_s, xdot_s, x_t, xdot_t) + sum_m c_m B_m,
    // B_m = sin^2(pi s) sin(m pi s): value and slope vanish at both ends.
    let n_bumps = 4usize;
    let pi = std::f64::consts::PI;
    let eval_x = move |c: &DVector<f64>, t: f64| -> (f64, f64, f64) {
        let s = t / tt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        let g00 = 12.0 * s - 6.0;
        let g10 = 6.0 * s - 4.0;
        let g01 = -12.0 * s + 6.0;
        let g11 = 6.0 * s - 2.0;
        let mut x = h00 * x_s + h10 * tt * xdot_s + h01 * x_t + h11 * tt * xdot_t;
        let mut xd = (d00 * x_s + d10 * tt * xdot_s + d01 * x_t + d11 * tt * xdot_t) / tt;
        let mut xdd = (g00 * x_s + g10 * tt * xdot_s + g01 * x_t + g11 * tt * xdot_t) / (tt * tt);
        for m in 0..n_bumps {
            let mm = (m + 1) as f64;
            let sp = (pi * s).sin();
            let (sm, cm) = (mm * pi * s).sin_cos();
            let b = sp * sp * sm;
            let db = pi * (2.0 * s * pi).sin() * sm + mm * pi * sp * sp * cm;
            let ddb = 2.0 * pi * pi * (2.0 * pi * s).cos() * sm
                + 2.0 * mm * pi * pi * (2.0 * pi * s).sin() * cm
                - mm * mm * pi * pi * sp * sp * sm;
            x += c[m] * b;
            xd += c[m] * db / tt;
            xdd += c[m] * ddb / (tt * tt);
        }
        (x, xd, xdd)
    };

    // boundary mismatch of (Y1dot, Y1) at T, by trapezoid quadrature
    let n_q = 4000usize;
    let dt = tt / n_q as f64;
    let residual = |c: &DVector<f64>| -> DVector<f64> {
        let mut y1dot = start.y1dot;
        let mut y1 = start.y1;
        let mut f_prev = p.potential.d1(eval_x(c, 0.0).0);
        for k in 1..=n_q {
            let f_next = p.potential.d1(eval_x(c, k as f64 * dt).0);
            let y1dot_next = y1dot + 0.5 * dt * (f_prev + f_next);
            y1 += 0.5 * dt * (y1dot + y1dot_next);
            y1dot = y1dot_next;
            f_prev = f_next;
        }
        DVector::from_vec(vec![y1 - target.y1, y1dot - target.y1dot])
    };
    let sol = levenberg_marquardt(&residual, DVector::zeros(n_bumps), 1e-8, 200);
    if !sol.residual_norm.is_finite() || sol.residual_norm > 1e-3 {
        return None;
    }
    let c = sol.x;

    // Forward pass: accumulate Y1, Y2 and the exact control slope
    //   gain * phidot = Y2'' + dU(x*) + c g Y2',
    //   Y2 = ((sigma+1) x* + Y1)/sigma,
    // then integrate phidot and read the path off at the knots.
    let mut phi = vec![0.0f64; n_q + 1];
    let mut y1dot = start.y1dot;
    let mut y1 = start.y1;
    let mut phidot_prev = {
        let (x, xd, xdd) = eval_x(&c, 0.0);
        let f = p.potential.d1(x);
        let y2dot = ((sig + 1.0) * xd + y1dot) / sig;
        let y2dd = ((sig + 1.0) * xdd + f) / sig;
        (y2dd + f + cg * y2dot) / gain
    };
    for k in 1..=n_q {
        let t = k as f64 * dt;
        let (x, xd, xdd) = eval_x(&c, t);
        let f = p.potential.d1(x);
        let y1dot_next = y1dot + 0.5 * dt * (p.potential.d1(eval_x(&c, t - dt).0) + f);
        y1 += 0.5 * dt * (y1dot + y1dot_next);
        y1dot = y1dot_next;
        let y2dot = ((sig + 1.0) * xd + y1dot) / sig;
        let y2dd = ((sig + 1.0) * xdd + f) / sig;
        let phidot = (y2dd + f + cg * y2dot) / gain;
        phi[k] = phi[k - 1] + 0.5 * dt * (phidot_prev + phidot);
        phidot_prev = phidot;
    }
    let _ = y1;

    let spacing = tt / (n_knots - 1) as f64;
    let mut knot_values = Vec::with_capacity(n_knots - 1);
    for j in 1..n_knots {
        let t = j as f64 * spacing;
        let pos = (t / dt).min(n_q as f64);
        let k0 = (pos.floor() as usize).min(n_q - 1);
        let frac = pos - k0 as f64;
        let v = phi[k0] + frac * (phi[k0 + 1] - phi[k0]);
        if !v.is_finite() {
            return None;
        }
        knot_values.push(v);
    }
    Some(ReferencePlan { knot_values })
}

/// Synthesize a control path steering `start` to within `eps` of `target`
/// (Euclidean distance on the four split coordinates) over `[0, t_total]`.
///
/// Multiple-shooting least squares over the knot values with up to 8
/// multi-starts (zero, a two-phase ramp profile, then randomized knots with
/// growing amplitude, sub-seeded from `seed`). The returned control is
/// verified at two step sizes before being accepted.
pub fn build_control(
    start: &YState,
    target: &YState,
    p: &DiskParams,
    t_total: f64,
    n_knots: usize,
    eps: f64,
    seed: u64,
) -> Result<ControlPath, ConditionsError> {
    assert!(n_knots >= 8, "synthesis needs at least 8 knots");
    assert!(t_total > 0.0 && eps > 0.0);
    let n_free = n_knots - 1;
    let spacing = t_total / n_free as f64;
    let h = synthesis_step(spacing, 0.02);

    let path_of = |vals: &DVector<f64>| -> ControlPath {
        let mut values = Vec::with_capacity(n_knots);
        values.push(0.0);
        values.extend(vals.iter().copied());
        ControlPath::from_values(t_total, values).expect("synthesis path is well-formed")
    };
    let gain = default_control_gain(p);
    let terminal_of = |vals: &DVector<f64>| -> DVector<f64> {
        let path = path_of(vals);
        match simulate_controlled(start, p, &path, gain, t_total, h) {
            Ok(traj) => {
                let e = traj.terminal();
                DVector::from_vec(vec![e.y1, e.y2, e.y1dot, e.y2dot])
            }
            // diverged candidate: large values push the optimizer away
            Err(_) => DVector::from_element(4, 1e6),
        }
    };
    let goal = DVector::from_vec(vec![target.y1, target.y2, target.y1dot, target.y2dot]);

    let zero = DVector::zeros(n_free);
    let anchor = terminal_of(&zero);
    let base_gap = (&goal - &anchor).norm();

    // Inverse-dynamics reference: the primary start. Remaining starts cover
    // pathological cases (potential without usable coupling, reference
    // rejected): zero control, a ramp, then randomized knots.
    let reference = constructive_guess(start, target, p, t_total, n_knots)
        .map(|plan| DVector::from_vec(plan.knot_values));
    let ramp = DVector::from_fn(n_free, |j, _| {
        let frac = (j + 1) as f64 / n_free as f64;
        let amp = (0.2 + base_gap).min(5.0);
        amp * (std::f64::consts::PI * frac).sin()
    });

    let mut best_gap = f64::INFINITY;
    let mut best_x: Option<DVector<f64>> = None;
    let mut attempts = Vec::new();
    'starts: for s in 0..8u64 {
        let x0 = match s {
            0 => match &reference {
                Some(r) => r.clone(),
                None => zero.clone(),
            },
            1 => zero.clone(),
            2 => ramp.clone(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "ctl-start", &[s]));
                let amp = 0.4 * s as f64 * (0.2 + base_gap).min(4.0);
                DVector::from_fn(n_free, |_, _| amp * (2.0 * rng.random::<f64>() - 1.0))
            }
        };
        let residual = |vals: &DVector<f64>| -> DVector<f64> { terminal_of(vals) - &goal };
        let out = levenberg_marquardt(&residual, x0, 0.2 * eps, 200);
        let gap = out.residual_norm;
        attempts.push(gap);
        if gap < best_gap {
            best_gap = gap;
            best_x = Some(out.x);
        }
        if best_gap < 0.5 * eps {
            break 'starts;
        }
    }

    let best_x = best_x.expect("at least one attempt");
    let path = path_of(&best_x);
    let (dist, pass) = verify_control(start, &path, target, p, eps, h)?;
    if pass {
        Ok(path)
    } else {
        Err(ConditionsError::SynthesisFailure {
            best_distance: dist.max(best_gap),
            eps,
            diagnostics: format!(
                "attempt gaps {:?}; t_total or n_knots may be too small",
                attempts
                    .iter()
                    .map(|r| format!("{r:.2e}"))
                    .collect::<Vec<_>>()
            ),
        })
    }
}

/// Integrate the controlled system at `h` and `h/2`; the achieved distance is
/// the worse of the two terminal mismatches.
pub fn verify_control(
    start: &YState,
    control: &ControlPath,
    target: &YState,
    p: &DiskParams,
    eps: f64,
    h: f64,
) -> Result<(f64, bool), ConditionsError> {
    let gain = default_control_gain(p);
    let t = control.t_total();
    let d1 = simulate_controlled(start, p, control, gain, t, h)?
        .terminal()
        .dist(target);
    let d2 = simulate_controlled(start, p, control, gain, t, 0.5 * h)?
        .terminal()
        .dist(target);
    let dist = d1.max(d2);
    Ok((dist, dist < eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disk::Potential;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn cosine_params() -> DiskParams {
        DiskParams::new(1.0, 0.1, 5.0, Potential::cosine(1.0, 1.0).unwrap()).unwrap()
    }

    fn flat_params() -> DiskParams {
        DiskParams::new(1.0, 0.1, 5.0, Potential::constant(0.0)).unwrap()
    }

    #[test]
    fn control_path_validation() {
        assert!(matches!(
            ControlPath::from_values(1.0, vec![0.1, 0.2]),
            Err(ConditionsError::PathStart(_))
        ));
        assert!(matches!(
            ControlPath::from_values(1.0, vec![0.0]),
            Err(ConditionsError::TooFewKnots)
        ));
        let path = ControlPath::from_values(2.0, vec![0.0, 1.0, 0.5]).unwrap();
        assert_eq!(path.value(0.0), 0.0);
        assert_abs_diff_eq!(path.value(0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(path.value(1.5), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(path.slope(0.2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(path.slope(1.7), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn bump_basis_is_well_conditioned() {
        let bumps = BumpBasis::monomial(0.5).unwrap();
        let cond = bumps.gram_condition(100);
        assert!(cond < 1e8, "gram condition {cond:e}");
        assert!(cond > 1.0);
    }

    #[test]
    fn lambda_flow_equilibrium_fixed_point() {
        let p = flat_params();
        let a = YState::new(0.0, 0.0, 0.0, 0.0);
        let base = ControlPath::zero(1.0, 5);
        let bumps = BumpBasis::monomial(1.0).unwrap();
        let out = lambda_flow(&a, &base, &bumps, &[0.0; 4], 1.0, &p, 1e-3).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn lambda_flow_constant_potential_decouples() {
        let p = flat_params();
        let a = YState::new(0.2, -0.3, 0.4, 0.1);
        let base = ControlPath::zero(1.0, 5);
        let bumps = BumpBasis::monomial(1.0).unwrap();
        let l0 = lambda_flow(&a, &base, &bumps, &[0.0; 4], 1.0, &p, 1e-3).unwrap();
        let l1 = lambda_flow(&a, &base, &bumps, &[0.3, -0.2, 0.1, 0.5], 1.0, &p, 1e-3).unwrap();
        assert_eq!(l0.y1, l1.y1);
        assert_eq!(l0.y1dot, l1.y1dot);
        assert!(l0.y2 != l1.y2);
    }

    #[test]
    fn lambda_flow_matches_short_time_taylor() {
        let p = DiskParams::new(1.0, 0.0, 5.0, Potential::cosine(1.0, 1.0).unwrap()).unwrap();
        let sig = p.sigma_ratio;
        let a = YState::new(0.1, 0.4, 0.3, -0.2);
        let t = 1e-3;
        let base = ControlPath::zero(t, 2);
        let bumps = BumpBasis::monomial(t).unwrap();
        let lambda = [0.01, -0.02, 0.005, 0.01];
        let gain = default_control_gain(&p);
        let out = lambda_flow(&a, &base, &bumps, &lambda, t, &p, t / 10.0).unwrap();

        let x0 = a.x_arg(sig);
        let f0 = p.potential.d1(x0);
        let xdot0 = (sig * a.y2dot - a.y1dot) / (sig + 1.0);
        let fdot0 = p.potential.d2(x0) * xdot0;
        let xi1 = a.y1 + a.y1dot * t + 0.5 * f0 * t * t;
        let xi1dot = a.y1dot + f0 * t + 0.5 * fdot0 * t * t;
        let bump_int: f64 = (0..4).map(|i| lambda[i] * t / (i as f64 + 2.0)).sum();
        let xi2 = a.y2 + a.y2dot * t + gain * bump_int;
        let bump_end: f64 = lambda.iter().sum();
        let xi2dot = a.y2dot + gain * bump_end;

        assert_abs_diff_eq!(out.y1, xi1, epsilon = 1e-9);
        assert_abs_diff_eq!(out.y1dot, xi1dot, epsilon = 1e-7);
        assert_abs_diff_eq!(out.y2, xi2, epsilon = 1e-9);
        assert_abs_diff_eq!(out.y2dot, xi2dot, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_constant_potential_is_rank_deficient() {
        let p = flat_params();
        let a = YState::new(0.0, 0.5, 0.0, 0.0);
        let base = ControlPath::zero(0.5, 5);
        let bumps = BumpBasis::monomial(0.5).unwrap();
        let rep = lambda_jacobian(&a, &base, &bumps, 0.5, &p, 1e-3, 1e-4).unwrap();
        assert!(rep.rank <= 2, "rank {}", rep.rank);
        assert!(rep.singular_values[2] < 1e-10);
        assert!(rep.singular_values[3] < 1e-10);
        for i in 0..4 {
            assert_eq!(rep.matrix[0][i], 0.0);
            assert_eq!(rep.matrix[1][i], 0.0);
        }
    }

    #[test]
    fn jacobian_full_rank_at_expansion_point() {
        let p = cosine_params();
        let zeta = default_expansion_point(&p).unwrap();
        let base = ControlPath::zero(0.5, 5);
        let bumps = BumpBasis::monomial(0.5).unwrap();
        let rep = lambda_jacobian(&zeta, &base, &bumps, 0.5, &p, 1e-3, 1e-4).unwrap();
        assert_eq!(rep.rank, 4);
        let cond = rep.condition_number.unwrap();
        assert!(cond < 1e6, "condition number {cond:e}");
    }

    #[test]
    fn jacobian_halved_delta_is_stable() {
        let p = cosine_params();
        let zeta = default_expansion_point(&p).unwrap();
        let base = ControlPath::zero(0.5, 5);
        let bumps = BumpBasis::monomial(0.5).unwrap();
        let a = lambda_jacobian(&zeta, &base, &bumps, 0.5, &p, 1e-3, 1e-4).unwrap();
        let b = lambda_jacobian(&zeta, &base, &bumps, 0.5, &p, 1e-3, 5e-5).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                num += (a.matrix[r][c] - b.matrix[r][c]).powi(2);
                den += b.matrix[r][c].powi(2);
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-6, "delta sensitivity {rel:e}");
    }

    #[test]
    fn linearized_response_rows() {
        let p = cosine_params();
        let zeta = default_expansion_point(&p).unwrap();
        let t = 0.5;
        let bumps = BumpBasis::monomial(t).unwrap();
        let gain = default_control_gain(&p);
        let m = linearized_response(&zeta, &bumps, t, &p, 1e-3).unwrap();
        for i in 0..4 {
            assert_relative_eq!(m[3][i], gain, epsilon = 1e-12);
            assert_relative_eq!(m[2][i], gain * t / (i as f64 + 2.0), epsilon = 1e-9);
        }

        let flat = flat_params();
        let a = YState::new(0.1, 0.2, 0.0, 0.0);
        let mf = linearized_response(&a, &bumps, t, &flat, 1e-3).unwrap();
        for i in 0..4 {
            assert_eq!(mf[0][i], 0.0);
            assert_eq!(mf[1][i], 0.0);
        }
    }

    #[test]
    fn jacobian_agrees_with_linearized_response() {
        let p = cosine_params();
        let zeta = default_expansion_point(&p).unwrap();
        for &t in &[0.1, 0.5] {
            let base = ControlPath::zero(t, 5);
            let bumps = BumpBasis::monomial(t).unwrap();
            let fd = lambda_jacobian(&zeta, &base, &bumps, t, &p, 1e-3, 1e-4).unwrap();
            let lr = linearized_response(&zeta, &bumps, t, &p, 1e-3).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for r in 0..4 {
                for c in 0..4 {
                    num += (fd.matrix[r][c] - lr[r][c]).powi(2);
                    den += lr[r][c].powi(2);
                }
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-3, "t = {t}: relative Frobenius gap {rel:e}");
        }
    }

    #[test]
    fn build_control_trivial_target() {
        let p = cosine_params();
        // rest at the potential minimum: equilibrium
        let start = to_y(&State::new(0.5, 0.0, 0.0, 0.0), 1.0);
        let path = build_control(&start, &start, &p, 20.0, 16, 1e-2, 5).unwrap();
        let h = synthesis_step(path.knot_spacing(), 0.02);
        let (dist, pass) = verify_control(&start, &path, &start, &p, 1e-2, h).unwrap();
        assert!(pass, "distance {dist}");
        assert!(path.max_abs_value() < 1e-3);
    }

    #[test]
    fn build_control_steers_to_target() {
        let p = cosine_params();
        let start = to_y(&State::new(0.0, 0.0, 0.0, 0.0), 1.0);
        let target = to_y(&State::new(0.3, 2.0, 0.5, -0.2), 1.0);
        let path = build_control(&start, &target, &p, 20.0, 16, 1e-2, 1).unwrap();
        let spacing = path.knot_spacing();
        let h = synthesis_step(spacing, 0.02);
        let (dist, pass) = verify_control(&start, &path, &target, &p, 1e-2, h).unwrap();
        assert!(pass, "verified distance {dist}");
    }

    #[test]
    fn build_control_fails_for_casimir_change_with_flat_potential() {
        let p = flat_params();
        let start = YState::new(0.0, 0.0, 0.0, 0.0);
        // y1dot must change: impossible without potential coupling
        let target = YState::new(0.0, 0.0, 0.5, 0.0);
        let err = build_control(&start, &target, &p, 20.0, 16, 1e-2, 2).unwrap_err();
        match err {
            ConditionsError::SynthesisFailure { best_distance, .. } => {
                assert!(best_distance >= 0.45, "best distance {best_distance}");
            }
            other => panic!("expected SynthesisFailure, got {other}"),
        }
    }

    #[test]
    fn verify_control_perturbation_flips_pass() {
        let p = cosine_params();
        let start = to_y(&State::new(0.0, 0.0, 0.0, 0.0), 1.0);
        let target = to_y(&State::new(0.3, 2.0, 0.5, -0.2), 1.0);
        let eps = 1e-2;
        let path = build_control(&start, &target, &p, 20.0, 16, eps, 1).unwrap();
        let h = synthesis_step(path.knot_spacing(), 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut flipped = 0;
        for _ in 0..10 {
            let vals: Vec<f64> = path
                .values()
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    if k == 0 {
                        0.0
                    } else {
                        v + 10.0 * eps * (2.0 * rng.random::<f64>() - 1.0)
                    }
                })
                .collect();
            let perturbed = ControlPath::from_values(path.t_total(), vals).unwrap();
            let (_, pass) = verify_control(&start, &perturbed, &target, &p, eps, h).unwrap();
            if !pass {
                flipped += 1;
            }
        }
        assert!(flipped >= 1, "no perturbation flipped the pass flag");
    }

    #[test]
    fn condition_number_is_locally_uniform_near_expansion_point() {
        let p = cosine_params();
        let zeta = default_expansion_point(&p).unwrap();
        let t = 0.5;
        let bumps = BumpBasis::monomial(t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut conds = Vec::new();
        for _ in 0..20 {
            let jitter = |r: &mut ChaCha8Rng| 1e-2 * (2.0 * r.random::<f64>() - 1.0);
            let a = YState::new(
                zeta.y1 + jitter(&mut rng),
                zeta.y2 + jitter(&mut rng),
                zeta.y1dot + jitter(&mut rng),
                zeta.y2dot + jitter(&mut rng),
            );
            let base_vals: Vec<f64> = (0..6)
                .map(|k| if k == 0 { 0.0 } else { jitter(&mut rng) })
                .collect();
            let base = ControlPath::from_values(t, base_vals).unwrap();
            let rep = lambda_jacobian(&a, &base, &bumps, t, &p, 1e-3, 1e-4).unwrap();
            conds.push(rep.condition_number.unwrap());
        }
        let lo = conds.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = conds.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo < 2.0, "condition spread {lo:e}..{hi:e}");
    }

    #[test]
    fn expansion_point_position() {
        let p = cosine_params();
        let zeta = default_expansion_point(&p).unwrap();
        let s = from_y(&zeta, p.sigma_ratio);
        assert_relative_eq!(s.x, 0.5, epsilon = 1e-12);
        assert_eq!((s.v, s.omega), (0.0, 0.0));
        // curvature there is at least half the maximum
        let d2max = (0..100)
            .map(|k| p.potential.d2(k as f64 / 100.0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(p.potential.d2(s.x) >= 0.5 * d2max);
    }
}
