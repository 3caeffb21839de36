//! Run configuration: a TOML file with one section per module input.
//!
//! Unknown keys are rejected at parse time (the error names the offending
//! key), and semantic validation reports the offending field. The same
//! config drives every subcommand; each one reads the sections it needs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::ControlPath;
use crate::disk::{DiskParams, Potential, State};
use crate::integrate::{NoiseSource, SchemeKind, SchemeSpec};
use crate::noise::{JumpComponent, JumpSize, LevyCharacteristics};
use crate::stats::{Centering, EnsembleSpec, InitSpec, Observable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}` invalid: {reason}")]
    Invalid { field: String, reason: String },
    #[error("missing section `{0}` required by this subcommand")]
    MissingSection(&'static str),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    pub seed: SeedConfig,
    #[serde(default)]
    pub msd_fit: Option<MsdFitConfig>,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub jacobian: Option<JacobianConfig>,
    #[serde(default)]
    pub tube: Option<TubeConfig>,
    #[serde(default)]
    pub noise_sample: Option<NoiseSampleConfig>,
    #[serde(default)]
    pub gibbs_check: Option<GibbsCheckConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sigma_ratio: f64,
    pub c: f64,
    pub alpha: f64,
    pub potential: PotentialConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// `"cosine"` or `"constant"`.
    pub kind: String,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub level: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// `"baoab"` or `"euler_maruyama"`.
    pub scheme: String,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub dim: usize,
    pub drift: Vec<f64>,
    /// Row-major `dim x dim` Gaussian matrix.
    pub gauss: Vec<Vec<f64>>,
    #[serde(default)]
    pub jumps: Vec<JumpConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub rate: f64,
    /// `"fixed"` or `"gaussian"`.
    pub kind: String,
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub sd: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_init: usize,
    pub n_noise: usize,
    /// `"gibbs"` or `"rest"`.
    pub init: String,
    #[serde(default)]
    pub rest_state: Option<[f64; 4]>,
    /// `"x"`, `"theta"`, `"x_plus_theta"`, `"casimir_pos"`, or `"linear"`.
    pub observable: String,
    #[serde(default)]
    pub linear_combo: Option<[f64; 4]>,
    pub record: Vec<f64>,
    /// `"noise_average"` (default) or `"pooled"`.
    #[serde(default)]
    pub centering: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub master_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsdFitConfig {
    pub t0: f64,
    pub t1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub t_total: f64,
    pub n_knots: usize,
    pub eps: f64,
    /// Start and target as `(x, theta, v, omega)`.
    pub start: [f64; 4],
    pub target: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianConfig {
    pub t: f64,
    pub h: f64,
    pub delta: f64,
    /// Expansion point `(x, theta, v, omega)`; defaults to zero momenta at
    /// the curvature maximum of the potential.
    #[serde(default)]
    pub state: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub epsilon: f64,
    pub t: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSampleConfig {
    pub t: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsCheckConfig {
    pub n_samples: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn potential(&self) -> Result<Potential, ConfigError> {
        let p = &self.model.potential;
        match p.kind.as_str() {
            "constant" => Ok(Potential::constant(p.level.unwrap_or(0.0))),
            "cosine" => {
                let amplitude = p.amplitude.unwrap_or(1.0);
                let period = p.period.unwrap_or(1.0);
                Potential::cosine(amplitude, period)
                    .map_err(|e| invalid("model.potential.period", e.to_string()))
            }
            other => Err(invalid(
                "model.potential.kind",
                format!("unknown kind `{other}` (expected `cosine` or `constant`)"),
            )),
        }
    }

    pub fn disk_params(&self) -> Result<DiskParams, ConfigError> {
        let pot = self.potential()?;
        DiskParams::new(self.model.sigma_ratio, self.model.c, self.model.alpha, pot)
            .map_err(|e| invalid("model", e.to_string()))
    }

    pub fn scheme(&self) -> Result<SchemeSpec, ConfigError> {
        let kind = match self.integrator.scheme.as_str() {
            "baoab" => SchemeKind::BaoabSplit,
            "euler_maruyama" => SchemeKind::EulerMaruyama,
            other => {
                return Err(invalid(
                    "integrator.scheme",
                    format!("unknown scheme `{other}` (expected `baoab` or `euler_maruyama`)"),
                ))
            }
        };
        let spec = SchemeSpec::new(kind, self.integrator.h)
            .map_err(|e| invalid("integrator.h", e.to_string()))?;
        if !(self.integrator.t_final > 0.0) {
            return Err(invalid("integrator.T", "must be positive"));
        }
        if self.integrator.stride == 0 {
            return Err(invalid("integrator.stride", "must be at least 1"));
        }
        // baoab with a jump-bearing noise section is a config error
        if kind == SchemeKind::BaoabSplit {
            if let Some(nc) = &self.noise {
                if !nc.jumps.is_empty() {
                    return Err(invalid(
                        "integrator.scheme",
                        "baoab requires Brownian-only noise but [noise] declares jumps",
                    ));
                }
            }
        }
        Ok(spec)
    }

    /// The driving noise: the `[noise]` section if present, otherwise
    /// standard Brownian forcing.
    pub fn noise_source(&self) -> Result<NoiseSource, ConfigError> {
        match &self.noise {
            None => Ok(NoiseSource::Brownian),
            Some(nc) => Ok(NoiseSource::Levy(self.levy_characteristics_of(nc)?)),
        }
    }

    pub fn levy_characteristics(&self) -> Result<LevyCharacteristics, ConfigError> {
        let nc = self
            .noise
            .as_ref()
            .ok_or(ConfigError::MissingSection("noise"))?;
        self.levy_characteristics_of(nc)
    }

    fn levy_characteristics_of(&self, nc: &NoiseConfig) -> Result<LevyCharacteristics, ConfigError> {
        if nc.drift.len() != nc.dim {
            return Err(invalid("noise.drift", "length must equal noise.dim"));
        }
        if nc.gauss.len() != nc.dim || nc.gauss.iter().any(|r| r.len() != nc.dim) {
            return Err(invalid("noise.gauss", "must be a dim x dim matrix"));
        }
        let mut jumps = Vec::with_capacity(nc.jumps.len());
        for (k, j) in nc.jumps.iter().enumerate() {
            let size = match j.kind.as_str() {
                "fixed" => JumpSize::Fixed(j.z.clone().ok_or_else(|| {
                    invalid(&format!("noise.jumps[{k}].z"), "required for kind = fixed")
                })?),
                "gaussian" => JumpSize::Gaussian {
                    mean: j.mean.clone().ok_or_else(|| {
                        invalid(
                            &format!("noise.jumps[{k}].mean"),
                            "required for kind = gaussian",
                        )
                    })?,
                    sd: j.sd.clone().ok_or_else(|| {
                        invalid(
                            &format!("noise.jumps[{k}].sd"),
                            "required for kind = gaussian",
                        )
                    })?,
                },
                other => {
                    return Err(invalid(
                        &format!("noise.jumps[{k}].kind"),
                        format!("unknown kind `{other}`"),
                    ))
                }
            };
            jumps.push(JumpComponent { rate: j.rate, size });
        }
        let gauss = nalgebra::DMatrix::from_fn(nc.dim, nc.dim, |r, c| nc.gauss[r][c]);
        LevyCharacteristics::new(nalgebra::DVector::from_vec(nc.drift.clone()), gauss, jumps)
            .map_err(|e| invalid("noise", e.to_string()))
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec, ConfigError> {
        let ec = self
            .ensemble
            .as_ref()
            .ok_or(ConfigError::MissingSection("ensemble"))?;
        let init = match ec.init.as_str() {
            "gibbs" => InitSpec::Gibbs,
            "rest" => {
                let s = ec.rest_state.unwrap_or([0.0; 4]);
                InitSpec::Rest(State::new(s[0], s[1], s[2], s[3]))
            }
            other => {
                return Err(invalid(
                    "ensemble.init",
                    format!("unknown init `{other}` (expected `gibbs` or `rest`)"),
                ))
            }
        };
        let observable = match ec.observable.as_str() {
            "x" => Observable::X,
            "theta" => Observable::Theta,
            "x_plus_theta" => Observable::XPlusTheta,
            "casimir_pos" => Observable::CasimirPos,
            "linear" => Observable::Linear(ec.linear_combo.ok_or_else(|| {
                invalid("ensemble.linear_combo", "required for observable = linear")
            })?),
            other => {
                return Err(invalid(
                    "ensemble.observable",
                    format!("unknown observable `{other}`"),
                ))
            }
        };
        let centering = match ec.centering.as_deref() {
            None | Some("noise_average") => Centering::NoiseAverage,
            Some("pooled") => Centering::Pooled,
            Some(other) => {
                return Err(invalid(
                    "ensemble.centering",
                    format!("unknown centering `{other}`"),
                ))
            }
        };
        Ok(EnsembleSpec {
            n_init: ec.n_init,
            n_noise: ec.n_noise,
            init,
            observable,
            t_final: self.integrator.t_final,
            record_times: ec.record.clone(),
            centering,
        })
    }

    pub fn control_path_horizon(&self) -> Result<&ControlConfig, ConfigError> {
        self.control
            .as_ref()
            .ok_or(ConfigError::MissingSection("control"))
    }
}

/// Helper shared by the CLI and tests: a ControlPath from raw knot values.
pub fn control_path_from_raw(
    t_total: f64,
    values: Vec<f64>,
) -> Result<ControlPath, crate::conditions::ConditionsError> {
    ControlPath::from_values(t_total, values)
}
