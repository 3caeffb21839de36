//! Config-driven orchestration: one entry point per subcommand, each
//! producing its artifacts in memory plus a one-line JSON summary. File
//! writes happen once, at the end, from a single writer, so identical
//! configs and seeds yield byte-identical artifacts at any thread count.

use serde_json::{json, Value};

use crate::conditions::{
    build_control, default_expansion_point, lambda_jacobian, BumpBasis, ControlPath,
};
use crate::config::{ConfigError, RunConfig};
use crate::disk::{from_y, gibbs_observable_mean, gibbs_sample, to_y, State, YState};
use crate::integrate::{
    default_control_gain, simulate, simulate_at_steps, SimOptions,
};
use crate::noise::{sample_increments, tube_probability, LevyCharacteristics};
use crate::seed;
use crate::stats::{marginal_test, msd_two_level, power_law_fit, MarginalSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Msd,
    GibbsCheck,
    Control,
    Jacobian,
    NoiseSample,
    Tube,
}

impl Subcommand {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "simulate" => Subcommand::Simulate,
            "msd" => Subcommand::Msd,
            "gibbs-check" => Subcommand::GibbsCheck,
            "control" => Subcommand::Control,
            "jacobian" => Subcommand::Jacobian,
            "noise-sample" => Subcommand::NoiseSample,
            "tube" => Subcommand::Tube,
            _ => return None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Configuration / validation problems: exit code 2.
    #[error("{0}")]
    Validation(#[from] ConfigError),
    /// Numerical failures at run time: exit code 3.
    #[error("{0}")]
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

/// Artifacts (relative name, bytes) plus the stdout summary.
pub struct RunOutput {
    pub summary: Value,
    pub artifacts: Vec<(String, Vec<u8>)>,
}

/// Run one subcommand on a parsed config. Pure apart from RNG seeded by the
/// config; all file output is returned to the caller.
pub fn execute(sub: Subcommand, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    match sub {
        Subcommand::Simulate => run_simulate(cfg),
        Subcommand::Msd => run_msd(cfg),
        Subcommand::GibbsCheck => run_gibbs_check(cfg),
        Subcommand::Control => run_control(cfg),
        Subcommand::Jacobian => run_jacobian(cfg),
        Subcommand::NoiseSample => run_noise_sample(cfg),
        Subcommand::Tube => run_tube(cfg),
    }
}

fn initial_state(cfg: &RunConfig) -> Result<State, RunError> {
    match &cfg.ensemble {
        Some(ec) if ec.init == "gibbs" => {
            let p = cfg.disk_params()?;
            let states = gibbs_sample(&p, 1, seed::derive(cfg.seed.master_seed, "sim-init", &[]))
                .map_err(numerical)?;
            Ok(states[0])
        }
        Some(ec) => {
            let s = ec.rest_state.unwrap_or([0.0; 4]);
            Ok(State::new(s[0], s[1], s[2], s[3]))
        }
        None => Ok(State::rest()),
    }
}

pub fn run_simulate(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let p = cfg.disk_params()?;
    let scheme = cfg.scheme()?;
    let noise = cfg.noise_source()?;
    let s0 = initial_state(cfg)?;
    let traj = simulate(
        &s0,
        &p,
        &scheme,
        cfg.integrator.t_final,
        &noise,
        cfg.seed.master_seed,
        &SimOptions {
            stride: cfg.integrator.stride,
            record_energy: true,
            record_casimir: true,
        },
    )
    .map_err(numerical)?;
    let last = traj.states.last().unwrap();
    let summary = json!({
        "subcommand": "simulate",
        "t_final": cfg.integrator.t_final,
        "records": traj.times.len(),
        "final": {"x": last.x, "theta": last.theta, "v": last.v, "omega": last.omega},
        "artifacts": ["trajectory.csv"],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![("trajectory.csv".into(), traj.to_csv(&p).into_bytes())],
    })
}

pub fn run_msd(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let p = cfg.disk_params()?;
    let scheme = cfg.scheme()?;
    let noise = cfg.noise_source()?;
    let spec = cfg.ensemble_spec()?;
    let series =
        msd_two_level(&spec, &p, &scheme, &noise, cfg.seed.master_seed).map_err(numerical)?;
    let mut artifacts = vec![("msd.csv".into(), series.to_csv().into_bytes())];
    let mut summary = json!({
        "subcommand": "msd",
        "observable": series.observable,
        "t_last": series.times.last(),
        "msd_last": series.msd.last(),
        "msd_last_over_t": series.msd.last().unwrap() / series.times.last().unwrap(),
        "artifacts": ["msd.csv"],
    });
    if let Some(fit_cfg) = &cfg.msd_fit {
        let fit = power_law_fit(&series, (fit_cfg.t0, fit_cfg.t1)).map_err(numerical)?;
        let fit_json = serde_json::to_vec_pretty(&json!({
            "exponent": fit.exponent,
            "prefactor": fit.prefactor,
            "window": [fit.window.0, fit.window.1],
            "residual": fit.residual,
        }))
        .expect("fit serializes");
        artifacts.push(("fit.json".into(), fit_json));
        summary["fit_exponent"] = json!(fit.exponent);
        summary["artifacts"] = json!(["msd.csv", "fit.json"]);
    }
    Ok(RunOutput {
        summary,
        artifacts,
    })
}

pub fn run_gibbs_check(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let p = cfg.disk_params()?;
    let scheme = cfg.scheme()?;
    let noise = cfg.noise_source()?;
    let beta = p.beta().map_err(numerical)?;
    let n = cfg.gibbs_check.as_ref().map_or(10_000, |g| g.n_samples);
    let master = cfg.seed.master_seed;
    let t_final = cfg.integrator.t_final;
    let n_steps = (t_final / scheme.h).round() as usize;

    let inits = gibbs_sample(&p, n, seed::derive(master, "gibbs-init", &[])).map_err(numerical)?;
    let finals: Vec<State> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| -> Result<State, RunError> {
                let states = simulate_at_steps(
                    &inits[i],
                    &p,
                    &scheme,
                    t_final,
                    &noise,
                    seed::derive(master, "gibbs-traj", &[i as u64]),
                    &[n_steps],
                )
                .map_err(numerical)?;
                Ok(states[0])
            })
            .collect::<Result<_, _>>()?
    };

    let period = p.potential.period();
    let g = |x: f64| (2.0 * std::f64::consts::PI * x / period).cos();
    let cos_target = gibbs_observable_mean(&p, g).map_err(numerical)?;

    let mean_se = |vals: &[f64]| -> (f64, f64) {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / (vals.len() as f64 - 1.0);
        (m, (var / vals.len() as f64).sqrt())
    };
    let v2: Vec<f64> = finals.iter().map(|s| s.v * s.v).collect();
    let sw2: Vec<f64> = finals
        .iter()
        .map(|s| p.sigma_ratio * s.omega * s.omega)
        .collect();
    let cosx: Vec<f64> = finals.iter().map(|s| g(s.x)).collect();
    let (m_v2, se_v2) = mean_se(&v2);
    let (m_sw2, se_sw2) = mean_se(&sw2);
    let (m_cos, se_cos) = mean_se(&cosx);

    let chi_v = marginal_test(
        &finals.iter().map(|s| s.v).collect::<Vec<_>>(),
        &MarginalSpec::Gaussian {
            mean: 0.0,
            sd: (1.0 / beta).sqrt(),
        },
    )
    .map_err(numerical)?;
    let chi_w = marginal_test(
        &finals.iter().map(|s| s.omega).collect::<Vec<_>>(),
        &MarginalSpec::Gaussian {
            mean: 0.0,
            sd: (1.0 / (beta * p.sigma_ratio)).sqrt(),
        },
    )
    .map_err(numerical)?;
    let chi_x = marginal_test(
        &finals.iter().map(|s| s.x).collect::<Vec<_>>(),
        &MarginalSpec::GibbsPosition { params: &p },
    )
    .map_err(numerical)?;

    let target = 1.0 / beta;
    let rows = [
        ("E[v^2]", m_v2, target, se_v2, (m_v2 - target).abs() < 3.0 * se_v2),
        (
            "E[sigma omega^2]",
            m_sw2,
            target,
            se_sw2,
            (m_sw2 - target).abs() < 3.0 * se_sw2,
        ),
        (
            "E[cos(2 pi x / L)]",
            m_cos,
            cos_target,
            se_cos,
            (m_cos - cos_target).abs() < 3.0 * se_cos,
        ),
        (
            "chi2_v",
            chi_v.statistic,
            chi_v.critical_1pct,
            0.0,
            chi_v.pass,
        ),
        (
            "chi2_omega",
            chi_w.statistic,
            chi_w.critical_1pct,
            0.0,
            chi_w.pass,
        ),
        (
            "chi2_x",
            chi_x.statistic,
            chi_x.critical_1pct,
            0.0,
            chi_x.pass,
        ),
    ];
    let mut csv = String::from("check,value,target,stderr,pass\n");
    for (name, value, target, se, pass) in rows {
        csv.push_str(&format!("{name},{value},{target},{se},{pass}\n"));
    }
    let all_pass = rows.iter().all(|r| r.4);
    let summary = json!({
        "subcommand": "gibbs-check",
        "n_samples": n,
        "beta": beta,
        "all_pass": all_pass,
        "artifacts": ["gibbs.csv"],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![("gibbs.csv".into(), csv.into_bytes())],
    })
}

pub fn run_control(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let p = cfg.disk_params()?;
    let cc = cfg.control_path_horizon()?;
    let start = to_y(
        &State::new(cc.start[0], cc.start[1], cc.start[2], cc.start[3]),
        p.sigma_ratio,
    );
    let target = to_y(
        &State::new(cc.target[0], cc.target[1], cc.target[2], cc.target[3]),
        p.sigma_ratio,
    );
    let path = build_control(
        &start,
        &target,
        &p,
        cc.t_total,
        cc.n_knots,
        cc.eps,
        cfg.seed.master_seed,
    )
    .map_err(numerical)?;
    let gain = default_control_gain(&p);
    let artifact = serde_json::to_vec_pretty(&json!({
        "t_total": path.t_total(),
        "knots": path.times(),
        "values": path.values(),
        "gain": gain,
    }))
    .expect("control serializes");
    let summary = json!({
        "subcommand": "control",
        "t_total": cc.t_total,
        "n_knots": cc.n_knots,
        "eps": cc.eps,
        "artifacts": ["control.json"],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![("control.json".into(), artifact)],
    })
}

pub fn run_jacobian(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let p = cfg.disk_params()?;
    let jc = cfg
        .jacobian
        .as_ref()
        .ok_or(ConfigError::MissingSection("jacobian"))?;
    let at: YState = match jc.state {
        Some(s) => to_y(&State::new(s[0], s[1], s[2], s[3]), p.sigma_ratio),
        None => default_expansion_point(&p).ok_or_else(|| {
            RunError::Numerical(
                "constant potential has no curvature maximum; set jacobian.state".into(),
            )
        })?,
    };
    let base = ControlPath::zero(jc.t, 2);
    let bumps = BumpBasis::monomial(jc.t).map_err(numerical)?;
    let rep = lambda_jacobian(&at, &base, &bumps, jc.t, &p, jc.h, jc.delta).map_err(numerical)?;
    let artifact = serde_json::to_vec_pretty(&rep).expect("report serializes");
    let state = from_y(&at, p.sigma_ratio);
    let summary = json!({
        "subcommand": "jacobian",
        "rank": rep.rank,
        "condition_number": rep.condition_number,
        "at": {"x": state.x, "theta": state.theta, "v": state.v, "omega": state.omega},
        "artifacts": ["jacobian.json"],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![("jacobian.json".into(), artifact)],
    })
}

pub fn run_noise_sample(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let chars = cfg.levy_characteristics()?;
    let ns = cfg
        .noise_sample
        .as_ref()
        .ok_or(ConfigError::MissingSection("noise_sample"))?;
    let grid: Vec<f64> = (0..=ns.steps)
        .map(|k| k as f64 * ns.t / ns.steps as f64)
        .collect();
    let stream =
        sample_increments(&chars, &grid, cfg.seed.master_seed).map_err(numerical)?;
    let summary = json!({
        "subcommand": "noise-sample",
        "dim": chars.dim,
        "steps": ns.steps,
        "artifacts": ["noise.csv"],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![("noise.csv".into(), stream.to_csv().into_bytes())],
    })
}

pub fn run_tube(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let tc = cfg
        .tube
        .as_ref()
        .ok_or(ConfigError::MissingSection("tube"))?;
    let chars = match &cfg.noise {
        Some(_) => cfg.levy_characteristics()?,
        None => LevyCharacteristics::brownian(1),
    };
    let phi = ControlPath::zero(tc.t, 2);
    let est = tube_probability(
        &chars,
        &phi,
        tc.epsilon,
        tc.t,
        tc.n_samples,
        cfg.seed.master_seed,
    )
    .map_err(numerical)?;
    let artifact = serde_json::to_vec_pretty(&est).expect("estimate serializes");
    let summary = json!({
        "subcommand": "tube",
        "probability": est.probability,
        "stderr": est.stderr,
        "artifacts": ["tube.json"],
    });
    Ok(RunOutput {
        summary,
        artifacts: vec![("tube.json".into(), artifact)],
    })
}
