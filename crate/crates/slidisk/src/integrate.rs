//! Time integrators.
//!
//! Two stochastic steppers for the full state:
//!
//! * [`em_step`] — Euler–Maruyama, taking a raw 2-vector noise increment so it
//!   also supports Lévy driving;
//! * [`baoab_step`] — a symmetric splitting (half force kick, half drift,
//!   friction–noise, half drift, half force kick) whose middle substep solves
//!   the friction–noise flow exactly. `C` is rank one with single non-null
//!   eigenvector `u = (1, 1/sigma)` (eigenvalue `-c gamma`) and
//!   `alpha^2 C = alpha^2 u u^T`, so the momentum pair moves along `u` as a
//!   scalar Ornstein–Uhlenbeck process with the closed-form one-step update.
//!
//! Both update the combination `-v + sigma omega` through the potential force
//! alone; friction and noise cancel there identically.
//!
//! A deterministic RK4 integrator drives the controlled split-coordinate
//! system used by the controllability checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::conditions::ControlPath;
use crate::disk::{casimir, energy, DiskParams, State, YState};
use crate::noise::LevyCharacteristics;

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("step size must be positive and finite, got {0}")]
    NonpositiveStep(f64),
    #[error("baoab requires Brownian-only driving noise")]
    SchemeNoiseMismatch,
    #[error("levy driving noise must have dimension 2, got {0}")]
    NoiseDimension(usize),
    #[error("horizon {t} is not an integer multiple of step {h}")]
    TimeNotMultipleOfStep { t: f64, h: f64 },
    #[error("state became non-finite at step {step}")]
    NonfiniteState { step: usize },
    #[error("control knot at t = {knot} does not lie on the step grid (h = {h})")]
    KnotMisalignment { knot: f64, h: f64 },
    #[error("control path covers [0, {path_t}] but horizon is {horizon}")]
    PathTooShort { path_t: f64, horizon: f64 },
}

/// Integration scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    EulerMaruyama,
    BaoabSplit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub h: f64,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, h: f64) -> Result<Self, IntegrateError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(IntegrateError::NonpositiveStep(h));
        }
        Ok(Self { kind, h })
    }
}

/// Driving noise of a simulation.
#[derive(Clone, Debug)]
pub enum NoiseSource {
    /// Standard 2-d Brownian motion on the two momentum channels.
    Brownian,
    /// A 2-d Lévy process (Euler–Maruyama only).
    Levy(LevyCharacteristics),
}

/// One Euler–Maruyama step with raw noise increment `dw` on the two momentum
/// channels; all right-hand sides evaluated at the pre-step state.
pub fn em_step(s: &State, p: &DiskParams, h: f64, dw: [f64; 2]) -> State {
    let sig = p.sigma_ratio;
    let fric = p.c * (s.v + s.omega) * h;
    // alpha C^{1/2} dw, rank-one: scalar along u = (1, 1/sigma)
    let q = sig / (sig * sig + 1.0).sqrt();
    let kick = p.alpha * q * (dw[0] + dw[1] / sig);
    State {
        x: s.x + s.v * h,
        theta: s.theta + s.omega * h,
        v: s.v - p.potential.d1(s.x) * h - fric + kick,
        omega: s.omega - fric / sig + kick / sig,
    }
}

/// Exact solve of the friction–noise subsystem over `h` with one standard
/// normal `xi`. Positions are untouched; the momentum pair moves along
/// `u = (1, 1/sigma)`:
///
/// ```text
/// (v, w) += u * [ (e^{-c g h} - 1)/g * (v + w)
///                 + alpha * sqrt((1 - e^{-2 c g h})/(2 c g)) * xi ],
/// ```
///
/// with `g = (sigma+1)/sigma`. This is the exact distributional solution of
/// `d(v, w) = -c C (v, sigma w) dt + alpha C^{1/2} dB`.
pub fn ou_exact_step(s: &State, p: &DiskParams, h: f64, xi: f64) -> State {
    let sig = p.sigma_ratio;
    let g = p.gamma_fric();
    let cg = p.c * g;
    let s_mom = s.v + s.omega;
    let decay_term = (-cg * h).exp_m1() / g; // (e^{-cgh} - 1)/g
    let var_factor = if cg > 0.0 {
        -(-2.0 * cg * h).exp_m1() / (2.0 * cg) // (1 - e^{-2cgh})/(2cg)
    } else {
        h
    };
    let kick = decay_term * s_mom + p.alpha * var_factor.sqrt() * xi;
    State {
        x: s.x,
        theta: s.theta,
        v: s.v + kick,
        omega: s.omega + kick / sig,
    }
}

/// One BAOAB step with a single standard normal (the noise lives entirely
/// along `u`). `force_pre` must be `-dU(x)` at the current position; returns
/// the force at the new position for reuse.
fn baoab_step_cached(
    s: &State,
    p: &DiskParams,
    h: f64,
    xi: f64,
    force_pre: f64,
) -> (State, f64) {
    let half = 0.5 * h;
    let mut st = *s;
    st.v += force_pre * half;
    st.x += st.v * half;
    st.theta += st.omega * half;
    st = ou_exact_step(&st, p, h, xi);
    st.x += st.v * half;
    st.theta += st.omega * half;
    let force_post = -p.potential.d1(st.x);
    st.v += force_post * half;
    (st, force_post)
}

/// One BAOAB step: half force kick, half position drift, exact
/// friction–noise, half position drift, half force kick.
pub fn baoab_step(s: &State, p: &DiskParams, h: f64, xi: f64) -> State {
    baoab_step_cached(s, p, h, xi, -p.potential.d1(s.x)).0
}

/// Recorded trajectory (uniform sampling of a single path).
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub energy: Option<Vec<f64>>,
    pub casimir: Option<Vec<f64>>,
}

impl Trajectory {
    /// CSV with header `t,x,theta,v,omega,energy,casimir`.
    pub fn to_csv(&self, p: &DiskParams) -> String {
        let mut out = String::from("t,x,theta,v,omega,energy,casimir\n");
        for (k, s) in self.states.iter().enumerate() {
            let e = self
                .energy
                .as_ref()
                .map_or_else(|| energy(s, p), |v| v[k]);
            let c = self
                .casimir
                .as_ref()
                .map_or_else(|| casimir(s, p.sigma_ratio), |v| v[k]);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.times[k], s.x, s.theta, s.v, s.omega, e, c
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Record every `stride` steps (the initial state is always recorded).
    pub stride: usize,
    pub record_energy: bool,
    pub record_casimir: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            record_energy: false,
            record_casimir: false,
        }
    }
}

fn steps_for(t_final: f64, h: f64) -> Result<usize, IntegrateError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(IntegrateError::NonpositiveStep(h));
    }
    let n = (t_final / h).round();
    if n < 0.0 || (n * h - t_final).abs() > 1e-9 * t_final.abs().max(1.0) {
        return Err(IntegrateError::TimeNotMultipleOfStep { t: t_final, h });
    }
    Ok(n as usize)
}

/// Core stepping loop shared by the recording front ends. `on_state` is
/// called at step 0 with the initial state and after every step.
fn drive(
    s0: &State,
    p: &DiskParams,
    scheme: &SchemeSpec,
    t_final: f64,
    noise: &NoiseSource,
    seed: u64,
    mut on_state: impl FnMut(usize, &State),
) -> Result<(), IntegrateError> {
    let n_steps = steps_for(t_final, scheme.h)?;
    let levy = match (scheme.kind, noise) {
        (SchemeKind::BaoabSplit, NoiseSource::Levy(_)) => {
            return Err(IntegrateError::SchemeNoiseMismatch)
        }
        (_, NoiseSource::Levy(chars)) => {
            if chars.dim != 2 {
                return Err(IntegrateError::NoiseDimension(chars.dim));
            }
            Some(chars)
        }
        (_, NoiseSource::Brownian) => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = *s0;
    on_state(0, &state);

    match scheme.kind {
        SchemeKind::BaoabSplit => {
            let mut force = -p.potential.d1(state.x);
            for k in 1..=n_steps {
                let xi: f64 = StandardNormal.sample(&mut rng);
                let (next, fpost) = baoab_step_cached(&state, p, scheme.h, xi, force);
                state = next;
                force = fpost;
                if !state.is_finite() {
                    return Err(IntegrateError::NonfiniteState { step: k });
                }
                on_state(k, &state);
            }
        }
        SchemeKind::EulerMaruyama => {
            let sqh = scheme.h.sqrt();
            let mut buf = nalgebra::DVector::zeros(2);
            for k in 1..=n_steps {
                let dw = match levy {
                    None => {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        let b: f64 = StandardNormal.sample(&mut rng);
                        [sqh * a, sqh * b]
                    }
                    Some(chars) => {
                        chars.sample_increment_into(scheme.h, &mut rng, &mut buf);
                        [buf[0], buf[1]]
                    }
                };
                state = em_step(&state, p, scheme.h, dw);
                if !state.is_finite() {
                    return Err(IntegrateError::NonfiniteState { step: k });
                }
                on_state(k, &state);
            }
        }
    }
    Ok(())
}

/// Integrate one path over `[0, t_final]`, bitwise deterministic in
/// `(inputs, seed)`.
pub fn simulate(
    s0: &State,
    p: &DiskParams,
    scheme: &SchemeSpec,
    t_final: f64,
    noise: &NoiseSource,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trajectory, IntegrateError> {
    let n_steps = steps_for(t_final, scheme.h)?;
    let stride = opts.stride.max(1);
    let n_records = n_steps / stride + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_records),
        states: Vec::with_capacity(n_records),
        energy: opts.record_energy.then(|| Vec::with_capacity(n_records)),
        casimir: opts.record_casimir.then(|| Vec::with_capacity(n_records)),
    };
    drive(s0, p, scheme, t_final, noise, seed, |k, s| {
        if k % stride == 0 {
            traj.times.push(k as f64 * scheme.h);
            traj.states.push(*s);
            if let Some(es) = traj.energy.as_mut() {
                es.push(energy(s, p));
            }
            if let Some(cs) = traj.casimir.as_mut() {
                cs.push(casimir(s, p.sigma_ratio));
            }
        }
    })?;
    Ok(traj)
}

/// Integrate one path but keep only the states at the given (sorted) step
/// indices. Memory stays proportional to the number of requested records.
pub fn simulate_at_steps(
    s0: &State,
    p: &DiskParams,
    scheme: &SchemeSpec,
    t_final: f64,
    noise: &NoiseSource,
    seed: u64,
    record_steps: &[usize],
) -> Result<Vec<State>, IntegrateError> {
    let mut out = Vec::with_capacity(record_steps.len());
    let mut next = 0usize;
    drive(s0, p, scheme, t_final, noise, seed, |k, s| {
        while next < record_steps.len() && record_steps[next] == k {
            out.push(*s);
            next += 1;
        }
    })?;
    Ok(out)
}

/// Default control gain: `abar * sqrt(2)` with
/// `abar = alpha (sigma+1)/sqrt(sigma^2+1)`.
pub fn default_control_gain(p: &DiskParams) -> f64 {
    let s = p.sigma_ratio;
    p.alpha * (s + 1.0) / (s * s + 1.0).sqrt() * 2f64.sqrt()
}

/// Controlled split-coordinate trajectory recorded at every step.
#[derive(Clone, Debug)]
pub struct YTrajectory {
    pub h: f64,
    pub states: Vec<YState>,
}

impl YTrajectory {
    pub fn terminal(&self) -> &YState {
        self.states.last().expect("at least the initial state")
    }
}

/// Integrate the deterministic controlled system
///
/// ```text
/// Y1'' =  dU(x),   Y2'' = -dU(x) - c g Y2' + gain * phi'(t),
/// x = (sigma Y2 - Y1)/(sigma + 1),
/// ```
///
/// with classical RK4 at fixed step `h`. The control must be piecewise linear
/// with knots on the step grid; its slope is treated as constant within each
/// step (evaluated at the step midpoint).
pub fn simulate_controlled(
    y0: &YState,
    p: &DiskParams,
    control: &ControlPath,
    gain: f64,
    t_final: f64,
    h: f64,
) -> Result<YTrajectory, IntegrateError> {
    let n_steps = steps_for(t_final, h)?;
    if control.t_total() + 1e-9 < t_final {
        return Err(IntegrateError::PathTooShort {
            path_t: control.t_total(),
            horizon: t_final,
        });
    }
    for &knot in control.times() {
        if knot >= t_final + 1e-9 {
            continue;
        }
        let r = knot / h;
        if (r - r.round()).abs() > 1e-9 * r.abs().max(1.0) {
            return Err(IntegrateError::KnotMisalignment { knot, h });
        }
    }

    let cg = p.c * p.gamma_fric();
    let sig = p.sigma_ratio;
    let deriv = |y: &[f64; 4], phidot: f64| -> [f64; 4] {
        let x = (sig * y[1] - y[0]) / (sig + 1.0);
        let f = p.potential.d1(x);
        [y[2], y[3], f, -f - cg * y[3] + gain * phidot]
    };

    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(*y0);
    let mut y = [y0.y1, y0.y2, y0.y1dot, y0.y2dot];
    for k in 0..n_steps {
        let t_mid = (k as f64 + 0.5) * h;
        let phidot = control.slope(t_mid);
        let k1 = deriv(&y, phidot);
        let y2 = add_scaled(&y, &k1, 0.5 * h);
        let k2 = deriv(&y2, phidot);
        let y3 = add_scaled(&y, &k2, 0.5 * h);
        let k3 = deriv(&y3, phidot);
        let y4 = add_scaled(&y, &k3, h);
        let k4 = deriv(&y4, phidot);
        for i in 0..4 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let st = YState::new(y[0], y[1], y[2], y[3]);
        if !st.is_finite() {
            return Err(IntegrateError::NonfiniteState { step: k + 1 });
        }
        states.push(st);
    }
    Ok(YTrajectory { h, states })
}

#[inline]
fn add_scaled(y: &[f64; 4], k: &[f64; 4], s: f64) -> [f64; 4] {
    [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2], y[3] + s * k[3]]
}

/// One Euler–Maruyama step of the reduced system driven by its single
/// effective Brownian motion of intensity `alpha (sigma+1)/sigma`.
pub fn reduced_em_step(y: &YState, p: &DiskParams, h: f64, xi: f64) -> YState {
    let sig = p.sigma_ratio;
    let f = p.potential.d1(y.x_arg(sig));
    let cg = p.c * p.gamma_fric();
    let intensity = crate::disk::reduced_coefficients(p).noise_intensity;
    YState {
        y1: y.y1 + y.y1dot * h,
        y2: y.y2 + y.y2dot * h,
        y1dot: y.y1dot + f * h,
        y2dot: y.y2dot + (-f - cg * y.y2dot) * h + intensity * h.sqrt() * xi,
    }
}

/// Terminal state of the reduced simulation started at `y0`.
pub fn simulate_reduced_terminal(
    y0: &YState,
    p: &DiskParams,
    t_final: f64,
    h: f64,
    seed: u64,
) -> Result<YState, IntegrateError> {
    let n_steps = steps_for(t_final, h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = *y0;
    for k in 1..=n_steps {
        let xi: f64 = StandardNormal.sample(&mut rng);
        y = reduced_em_step(&y, p, h, xi);
        if !y.is_finite() {
            return Err(IntegrateError::NonfiniteState { step: k });
        }
    }
    Ok(y)
}
