//! Experiment-spec parsing and validation.
//!
//! The grammar is strict: the schema is versioned, unknown keys are
//! errors, and every (instance, policy) pair is validated before anything
//! runs. Each run's master seed is `seed + run_index` in spec order.

use serde::Deserialize;

use qbandit::instance::{InstanceError, ProblemInstance, RawInstance};
use qbandit::sim::{CouplingMode, InitMode, RecordGrid, SimConfig};
use qbandit::PolicyKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub name: String,
    pub horizon: u64,
    pub episodes: u64,
    pub seed: u64,
    #[serde(default)]
    pub coupling: Option<String>,
    #[serde(default)]
    pub init: Option<String>,
    #[serde(default)]
    pub record: Option<RecordSpec>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub overlay: Option<OverlaySpec>,
    pub runs: Vec<RunSpec>,
}

/// Recording grid: exactly one of the three fields.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    #[serde(default)]
    pub per_decade: Option<u32>,
    #[serde(default)]
    pub every: Option<u64>,
    #[serde(default)]
    pub explicit: Option<Vec<u64>>,
}

/// Parameters for the bound overlay written next to each series.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlaySpec {
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    pub instance: RawInstance,
    pub policy: String,
    #[serde(default)]
    pub explore_const: Option<f64>,
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default)]
    pub episodes: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unsupported schema_version {got}, expected {SCHEMA_VERSION}")]
    SchemaVersion { got: u32 },
    #[error("{what} {name:?} may only contain [A-Za-z0-9_-]")]
    BadName { what: &'static str, name: String },
    #[error("duplicate run label {label:?}")]
    DuplicateLabel { label: String },
    #[error("run {label:?}: unknown policy {policy:?} (expected qths, thompson, ucb1, qucb, genie, or uniform)")]
    UnknownPolicy { label: String, policy: String },
    #[error("run {label:?}: explore_const only applies to qths/qucb")]
    StrayExploreConst { label: String },
    #[error("run {label:?}: explore_const must be positive, got {value}")]
    BadExploreConst { label: String, value: f64 },
    #[error("unknown coupling {got:?} (expected common_uniform or independent_services)")]
    UnknownCoupling { got: String },
    #[error("unknown init {got:?} (expected shared_draw or independent_draws)")]
    UnknownInit { got: String },
    #[error("record must set exactly one of per_decade, every, explicit")]
    BadRecord,
    #[error("spec contains no runs")]
    NoRuns,
    #[error("run {label:?}: invalid instance: {source}")]
    Instance {
        label: String,
        source: InstanceError,
    },
}

/// A fully validated run ready to execute.
pub struct ResolvedRun {
    pub label: String,
    pub cfg: SimConfig,
}

pub struct ResolvedSpec {
    pub name: String,
    pub output_dir: Option<String>,
    pub overlay: Option<OverlaySpec>,
    pub runs: Vec<ResolvedRun>,
}

fn check_name(what: &'static str, name: &str) -> Result<(), ConfigError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(ConfigError::BadName {
            what,
            name: name.to_string(),
        })
    }
}

fn resolve_policy(run: &RunSpec) -> Result<PolicyKind, ConfigError> {
    let explore_const = |default: f64| -> Result<f64, ConfigError> {
        let c = run.explore_const.unwrap_or(default);
        if c > 0.0 {
            Ok(c)
        } else {
            Err(ConfigError::BadExploreConst {
                label: run.label.clone(),
                value: c,
            })
        }
    };
    let plain = |kind: PolicyKind| -> Result<PolicyKind, ConfigError> {
        if run.explore_const.is_some() {
            Err(ConfigError::StrayExploreConst {
                label: run.label.clone(),
            })
        } else {
            Ok(kind)
        }
    };
    match run.policy.as_str() {
        "qths" => Ok(PolicyKind::QThs {
            explore_const: explore_const(3.0)?,
        }),
        "qucb" => Ok(PolicyKind::QUcb {
            explore_const: explore_const(3.0)?,
        }),
        "thompson" => plain(PolicyKind::Thompson),
        "ucb1" => plain(PolicyKind::Ucb1),
        "genie" => plain(PolicyKind::Genie),
        "uniform" => plain(PolicyKind::UniformRandom),
        other => Err(ConfigError::UnknownPolicy {
            label: run.label.clone(),
            policy: other.to_string(),
        }),
    }
}

fn resolve_record(spec: &RecordSpec) -> Result<RecordGrid, ConfigError> {
    match (&spec.per_decade, &spec.every, &spec.explicit) {
        (Some(p), None, None) => Ok(RecordGrid::PerDecade(*p)),
        (None, Some(n), None) => Ok(RecordGrid::EveryN(*n)),
        (None, None, Some(v)) => Ok(RecordGrid::Explicit(v.clone())),
        _ => Err(ConfigError::BadRecord),
    }
}

impl ExperimentSpec {
    pub fn resolve(&self) -> Result<ResolvedSpec, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                got: self.schema_version,
            });
        }
        check_name("experiment name", &self.name)?;
        if self.runs.is_empty() {
            return Err(ConfigError::NoRuns);
        }
        let coupling = match self.coupling.as_deref() {
            None | Some("common_uniform") => CouplingMode::CommonUniform,
            Some("independent_services") => CouplingMode::IndependentServices,
            Some(other) => {
                return Err(ConfigError::UnknownCoupling {
                    got: other.to_string(),
                })
            }
        };
        let init = match self.init.as_deref() {
            None | Some("shared_draw") => InitMode::SharedDraw,
            Some("independent_draws") => InitMode::IndependentDraws,
            Some(other) => {
                return Err(ConfigError::UnknownInit {
                    got: other.to_string(),
                })
            }
        };
        let record = match &self.record {
            None => RecordGrid::default(),
            Some(spec) => resolve_record(spec)?,
        };

        let mut runs = Vec::with_capacity(self.runs.len());
        let mut labels = Vec::new();
        for (index, run) in self.runs.iter().enumerate() {
            check_name("run label", &run.label)?;
            if labels.contains(&run.label) {
                return Err(ConfigError::DuplicateLabel {
                    label: run.label.clone(),
                });
            }
            labels.push(run.label.clone());
            let policy = resolve_policy(run)?;
            let instance =
                ProblemInstance::try_from(run.instance.clone()).map_err(|source| {
                    ConfigError::Instance {
                        label: run.label.clone(),
                        source,
                    }
                })?;
            runs.push(ResolvedRun {
                label: run.label.clone(),
                cfg: SimConfig {
                    instance,
                    policy,
                    horizon: run.horizon.unwrap_or(self.horizon),
                    episodes: run.episodes.unwrap_or(self.episodes),
                    coupling,
                    init,
                    master_seed: self.seed + index as u64,
                    record: record.clone(),
                },
            });
        }
        Ok(ResolvedSpec {
            name: self.name.clone(),
            output_dir: self.output_dir.clone(),
            overlay: self.overlay,
            runs,
        })
    }
}
