use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{
    CostModel, MonteCarloSpec, PopulationModel, ZipfLaw, REFERENCE_COMPUTE, REFERENCE_SAMPLES,
    REFERENCE_STORAGE, REFERENCE_TRANSMISSION,
};
use crate::policies::PolicySpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("{field}: file {} does not exist", path.display())]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub movies: u64,
    pub movie_exponent: f64,
    pub ads: u64,
    pub ad_exponent: f64,
    pub lambda: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            movies: 10_000,
            movie_exponent: 0.8,
            ads: 5_000,
            ad_exponent: 0.94,
            lambda: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub storage: f64,
    pub compute: f64,
    pub transmission: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            storage: REFERENCE_STORAGE,
            compute: REFERENCE_COMPUTE,
            transmission: REFERENCE_TRANSMISSION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    GlobalTtl,
    IndividualTtl,
    IndividualTtlOracle,
    LowerBound,
    Lru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl: Option<f64>,
    /// Defaults to C/S.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_trace: Option<PathBuf>,
    /// Fraction of count-trace records kept (seeded per replication).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub warmup: f64,
    /// End of the measured interval, in absolute hours.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_until: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            warmup: 0.0,
            measure_until: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            samples: REFERENCE_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Ttl,
    Capacity,
    Window,
    Lambda,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Ttl => "ttl",
            SweepAxis::Capacity => "capacity",
            SweepAxis::Window => "window",
            SweepAxis::Lambda => "lambda",
        }
    }
}

/// Default sweep for `sweep` when no grid flag is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub cost: CostConfig,
    pub policy: PolicyConfig,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSource {
    Synthetic {
        duration: f64,
    },
    RequestTrace {
        path: PathBuf,
    },
    CountTrace {
        path: PathBuf,
        subsample: Option<f64>,
    },
}

impl ExperimentConfig {
    /// Parses and validates without touching the filesystem.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, resolving relative trace paths against the
    /// file's directory and checking that they exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for path in [&mut self.workload.trace, &mut self.workload.count_trace]
            .into_iter()
            .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn check_files(&self) -> Result<(), ConfigError> {
        for (field, path) in [
            ("workload.trace", &self.workload.trace),
            ("workload.count_trace", &self.workload.count_trace),
        ] {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(ConfigError::MissingFile {
                        field,
                        path: path.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.population_model()?;
        self.cost_model()?;
        self.policy_spec()?;
        self.workload_source()?;
        self.monte_carlo_spec()?;
        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds", "at least one seed is required"));
        }
        if !(self.run.warmup.is_finite() && self.run.warmup >= 0.0) {
            return Err(invalid("run.warmup", "must be finite and >= 0"));
        }
        if let Some(until) = self.run.measure_until {
            if until.is_nan() || until <= self.run.warmup {
                return Err(invalid("run.measure_until", "must be after run.warmup"));
            }
        }
        if let Some(sweep) = &self.sweep {
            check_grid(sweep.axis, &sweep.grid)?;
        }
        Ok(())
    }

    pub fn population_model(&self) -> Result<PopulationModel, ConfigError> {
        let p = &self.population;
        let movies = ZipfLaw::new(p.movies, p.movie_exponent)
            .map_err(|e| invalid("population.movies", e.to_string()))?;
        let ads = ZipfLaw::new(p.ads, p.ad_exponent)
            .map_err(|e| invalid("population.ads", e.to_string()))?;
        if p.movies > u32::MAX as u64 || p.ads > u32::MAX as u64 {
            return Err(invalid("population", "catalog sizes must fit in 32 bits"));
        }
        PopulationModel::new(movies, ads, p.lambda)
            .map_err(|e| invalid("population.lambda", e.to_string()))
    }

    pub fn cost_model(&self) -> Result<CostModel, ConfigError> {
        CostModel::new(self.cost.storage, self.cost.compute, self.cost.transmission)
            .map_err(|e| invalid("cost", e.to_string()))
    }

    pub fn monte_carlo_spec(&self) -> Result<MonteCarloSpec, ConfigError> {
        MonteCarloSpec::new(self.monte_carlo.samples, self.monte_carlo.seed)
            .map_err(|e| invalid("monte_carlo.samples", e.to_string()))
    }

    pub fn policy_spec(&self) -> Result<PolicySpec, ConfigError> {
        let p = &self.policy;
        let spec = match p.kind {
            PolicyKind::GlobalTtl => PolicySpec::GlobalTtl {
                ttl: p
                    .ttl
                    .ok_or_else(|| invalid("policy.ttl", "required for global-ttl"))?,
            },
            PolicyKind::IndividualTtl => PolicySpec::IndividualTtl {
                window: match p.window {
                    Some(w) => w,
                    None => self.cost_model()?.break_even_window(),
                },
            },
            PolicyKind::IndividualTtlOracle => PolicySpec::IndividualTtlOracle,
            PolicyKind::LowerBound => PolicySpec::LowerBound,
            PolicyKind::Lru => PolicySpec::Lru {
                capacity: p
                    .capacity
                    .ok_or_else(|| invalid("policy.capacity", "required for lru"))?,
            },
        };
        let cm = self.cost_model()?;
        let pm = self.population_model()?;
        spec.build(&cm, Some(&pm))
            .map_err(|e| invalid("policy", e.to_string()))?;
        Ok(spec)
    }

    pub fn workload_source(&self) -> Result<WorkloadSource, ConfigError> {
        let w = &self.workload;
        let source = match (w.synthetic_duration, &w.trace, &w.count_trace) {
            (Some(duration), None, None) => {
                if !(duration.is_finite() && duration > 0.0) {
                    return Err(invalid("workload.synthetic_duration", "must be positive"));
                }
                WorkloadSource::Synthetic { duration }
            }
            (None, Some(path), None) => WorkloadSource::RequestTrace { path: path.clone() },
            (None, None, Some(path)) => WorkloadSource::CountTrace {
                path: path.clone(),
                subsample: w.subsample,
            },
            _ => {
                return Err(invalid(
                    "workload",
                    "exactly one of synthetic_duration, trace, count_trace is required",
                ))
            }
        };
        if let Some(f) = w.subsample {
            if !matches!(source, WorkloadSource::CountTrace { .. }) {
                return Err(invalid(
                    "workload.subsample",
                    "applies to count traces only",
                ));
            }
            if !(f > 0.0 && f <= 1.0) {
                return Err(invalid("workload.subsample", "must be in (0, 1]"));
            }
        }
        Ok(source)
    }
}

pub(crate) fn check_grid(axis: SweepAxis, grid: &[f64]) -> Result<(), ConfigError> {
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    for &v in grid {
        let ok = match axis {
            SweepAxis::Ttl => v.is_finite() && v >= 0.0,
            SweepAxis::Window | SweepAxis::Lambda => v.is_finite() && v > 0.0,
            SweepAxis::Capacity => v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64,
        };
        if !ok {
            return Err(invalid(
                "grid",
                format!("{v} is not a valid {} value", axis.name()),
            ));
        }
    }
    Ok(())
}

/// Parses a comma-separated list of numbers such as `0,30,60`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(str::trim)
        .map(|field| {
            let v: f64 = field
                .parse()
                .map_err(|_| invalid("grid", format!("`{field}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(invalid("grid", format!("`{field}` is not finite")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[policy]
kind = "global-ttl"
ttl = 60.0

[workload]
synthetic_duration = 100.0
"#;

    #[test]
    fn defaults_fill_reference_values() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.population, PopulationConfig::default());
        assert_eq!(cfg.cost_model().unwrap(), CostModel::reference());
        assert_eq!(cfg.run.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(
            cfg.policy_spec().unwrap(),
            PolicySpec::GlobalTtl { ttl: 60.0 }
        );
        assert_eq!(
            cfg.workload_source().unwrap(),
            WorkloadSource::Synthetic { duration: 100.0 }
        );
    }

    #[test]
    fn round_trip_preserves_fields() {
        let text = r#"
[population]
movies = 300
movie_exponent = 0.8
ads = 20
ad_exponent = 0.91
lambda = 12.5

[policy]
kind = "individual-ttl"
window = 1500.0

[workload]
count_trace = "data/x.csv"
subsample = 0.1

[run]
seeds = [7, 8]
warmup = 10.0
measure_until = 900.0

[sweep]
axis = "window"
grid = [370.0, 1481.0]
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn window_defaults_to_break_even() {
        let text = MINIMAL.replace(
            "kind = \"global-ttl\"\nttl = 60.0",
            "kind = \"individual-ttl\"",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            cfg.policy_spec().unwrap(),
            PolicySpec::IndividualTtl {
                window: CostModel::reference().break_even_window()
            }
        );
    }

    #[test]
    fn rejects_invalid_configs() {
        let cases = [
            MINIMAL.replace("ttl = 60.0", ""),
            MINIMAL.replace("ttl = 60.0", "ttl = -1.0"),
            MINIMAL.replace(
                "synthetic_duration = 100.0",
                "synthetic_duration = 100.0\ntrace = \"t.csv\"",
            ),
            MINIMAL.replace("synthetic_duration = 100.0", ""),
            MINIMAL.replace("[workload]", "[run]\nseeds = []\nwarmup = 0.0\n[workload]"),
            MINIMAL.replace(
                "[workload]",
                "[cost]\nstorage = 0.0\ncompute = 1.0\ntransmission = 1.0\n[workload]",
            ),
            MINIMAL.replace("ttl = 60.0", "ttl = 60.0\nbogus = 1"),
            MINIMAL.replace(
                "synthetic_duration = 100.0",
                "synthetic_duration = 100.0\nsubsample = 0.5",
            ),
            MINIMAL.replace("global-ttl", "fifo"),
            "not toml [[".to_string(),
        ];
        for text in cases {
            assert!(ExperimentConfig::from_toml_str(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn load_checks_trace_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let text = MINIMAL.replace("synthetic_duration = 100.0", "trace = \"missing.csv\"");
        std::fs::write(&path, &text).unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(ConfigError::MissingFile { .. })
        ));
        std::fs::write(dir.path().join("missing.csv"), "0,1,1\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.workload.trace.unwrap(), dir.path().join("missing.csv"));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0,30, 60").unwrap(), vec![0.0, 30.0, 60.0]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("1,,2").is_err());
        assert!(parse_grid("inf").is_err());
        assert!(check_grid(SweepAxis::Capacity, &[1.0, 2.5]).is_err());
        assert!(check_grid(SweepAxis::Window, &[0.0]).is_err());
        assert!(check_grid(SweepAxis::Ttl, &[0.0]).is_ok());
    }
}
