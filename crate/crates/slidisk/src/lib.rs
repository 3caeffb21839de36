//! Langevin dynamics of a sliding disk driven by degenerate noise.
//!
//! A disk free to slide and rotate feels friction and stochastic forcing on a
//! single degree of freedom: both act through the rank-one matrix
//! `C = u u^T`, `u = (1, 1/sigma)`, leaving the combination
//! `-v + sigma omega` untouched by noise and damping. The system still keeps
//! the Gibbs measure `exp(-beta E)` with `beta = 2c/alpha^2` invariant, and
//! its unforced degree of freedom produces ballistic (not diffusive)
//! mean-squared displacement when the on-site potential is non-constant.
//!
//! The crate simulates this system, estimates its displacement statistics,
//! and numerically verifies the geometric ergodicity conditions
//! (approximate controllability and invertibility of the second-randomization
//! derivative):
//!
//! * [`noise`] — finite-activity Lévy driving processes: moments, truncation
//!   drift, sampling, uniform-tube probabilities;
//! * [`disk`] — the mechanical model: energy, friction structure, Gibbs
//!   sampling, the split coordinates `Y1 = -x + sigma theta`, `Y2 = x + theta`;
//! * [`integrate`] — Euler–Maruyama and a splitting scheme with an exact
//!   rank-one friction–noise substep; RK4 for controlled dynamics;
//! * [`stats`] — two-level mean-squared displacement, power-law fits,
//!   Birkhoff averages, chi-square marginal tests;
//! * [`conditions`] — control synthesis / verification and the 4x4
//!   lambda-Jacobian of the randomized flow;
//! * [`config`] / [`run`] — the TOML-driven command-line pipeline.
//!
//! ```
//! use slidisk::disk::{DiskParams, Potential, State, energy};
//!
//! let p = DiskParams::new(1.0, 1.0, 2f64.sqrt(), Potential::cosine(1.0, 1.0).unwrap()).unwrap();
//! assert!((p.beta().unwrap() - 1.0).abs() < 1e-12);
//! let e = energy(&State::new(0.0, 0.0, 1.0, 0.0), &p);
//! assert!((e - 1.5).abs() < 1e-12);
//! ```

pub mod conditions;
pub mod config;
pub mod disk;
pub mod integrate;
pub mod noise;
pub mod quad;
pub mod run;
pub mod seed;
pub mod stats;

pub use conditions::{BumpBasis, ControlPath, JacobianReport};
pub use disk::{DiskParams, Potential, State, YState};
pub use integrate::{NoiseSource, SchemeKind, SchemeSpec, Trajectory};
pub use noise::{JumpComponent, JumpSize, LevyCharacteristics, TubeEstimate};
pub use stats::{EnsembleSpec, FitResult, MsdSeries, Observable};
