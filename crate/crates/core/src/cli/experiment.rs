use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{check_grid, ConfigError, ExperimentConfig, SweepAxis, WorkloadSource};
use super::CliError;
use crate::analytic::{CostModel, MonteCarloSpec, PopulationModel, RateSample};
use crate::engine::{run_measured, EngineError, Measurement};
use crate::policies::PolicySpec;
use crate::workload::{
    gen_synthetic, overlay_ads, parse_count_trace, parse_request_trace, subsample_records,
    synthesize_from_counts, trace_checksum, CountTraceRecord, Request, TraceEntry, WorkloadError,
};

const SUBSAMPLE_STREAM: u64 = 1;
const SYNTHESIS_STREAM: u64 = 2;
const OVERLAY_STREAM: u64 = 3;

/// Independent sub-seed for one randomized stage of trace construction.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// One CSV row. `seed` is `None` on the per-point summary row, which holds
/// means across seeds and the standard deviation of the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub policy: &'static str,
    pub param_name: &'static str,
    pub param_value: Option<f64>,
    pub seed: Option<u64>,
    pub requests: f64,
    pub hits: f64,
    pub cost_per_request: f64,
    pub compute_dollars: f64,
    pub storage_dollars: f64,
    pub transmission_dollars: f64,
    pub trace_checksum: String,
    pub cost_std: Option<f64>,
}

impl RunRow {
    pub fn is_summary(&self) -> bool {
        self.seed.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<RunRow>,
    /// Grid value with the lowest mean cost per request, and that cost.
    pub best: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub policy: &'static str,
    pub param_name: &'static str,
    pub param_value: Option<f64>,
    pub lambda: f64,
    pub seeds: usize,
    pub simulated_mean: f64,
    pub simulated_std: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRow {
    /// `"curve"` for a grid point, `"optimum"` for the best TTL at a rate.
    pub kind: &'static str,
    pub lambda: f64,
    pub ttl: f64,
    pub global_ttl: f64,
    pub individual_ttl: f64,
    pub lower_bound: f64,
}

enum Loaded {
    Synthetic {
        duration: f64,
    },
    Entries(Vec<TraceEntry>),
    Counts {
        records: Vec<CountTraceRecord>,
        subsample: Option<f64>,
    },
}

#[derive(Clone, Copy)]
struct Point {
    spec: PolicySpec,
    lambda: usize,
}

pub struct Experiment {
    config: ExperimentConfig,
    cost: CostModel,
    population: PopulationModel,
    policy: PolicySpec,
    loaded: Loaded,
    jobs: Option<usize>,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Workload(WorkloadError::Io(e)))
}

impl Experiment {
    /// Validates the config and loads any trace file it names.
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        let loaded = match config.workload_source()? {
            WorkloadSource::Synthetic { duration } => Loaded::Synthetic { duration },
            WorkloadSource::RequestTrace { path } => {
                Loaded::Entries(parse_request_trace(open(&path)?).collect::<Result<_, _>>()?)
            }
            WorkloadSource::CountTrace { path, subsample } => Loaded::Counts {
                records: parse_count_trace(open(&path)?)?,
                subsample,
            },
        };
        Ok(Self {
            cost: config.cost_model()?,
            population: config.population_model()?,
            policy: config.policy_spec()?,
            config,
            loaded,
            jobs: None,
        })
    }

    /// Worker threads for sweeps; `None` uses every core.
    pub fn with_jobs(mut self, jobs: Option<usize>) -> Self {
        self.jobs = jobs;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn population(&self) -> &PopulationModel {
        &self.population
    }

    pub fn policy(&self) -> PolicySpec {
        self.policy
    }

    fn is_synthetic(&self) -> bool {
        matches!(self.loaded, Loaded::Synthetic { .. })
    }

    /// The request stream one replication sees. Synthetic streams depend on
    /// `pm`; file-backed streams only use its ad law.
    pub fn trace(&self, pm: &PopulationModel, seed: u64) -> Result<Vec<Request>, CliError> {
        let overlay_seed = derive_seed(seed, OVERLAY_STREAM);
        Ok(match &self.loaded {
            Loaded::Synthetic { duration } => gen_synthetic(pm, *duration, seed)?.collect(),
            Loaded::Entries(entries) => {
                overlay_ads(entries.iter().copied(), pm.ads(), overlay_seed).collect()
            }
            Loaded::Counts { records, subsample } => {
                let kept;
                let records = match subsample {
                    Some(f) => {
                        kept = subsample_records(records, *f, derive_seed(seed, SUBSAMPLE_STREAM))?;
                        &kept
                    }
                    None => records,
                };
                let entries = synthesize_from_counts(records, derive_seed(seed, SYNTHESIS_STREAM))?;
                overlay_ads(entries, pm.ads(), overlay_seed).collect()
            }
        })
    }

    fn horizon(&self, trace: &[Request]) -> f64 {
        match self.loaded {
            Loaded::Synthetic { duration } => duration,
            _ => trace.last().map_or(0.0, |r| r.time),
        }
    }

    fn measurement(&self) -> Result<Measurement, CliError> {
        let run = &self.config.run;
        match (run.warmup, run.measure_until) {
            (0.0, None) => Ok(Measurement::FULL),
            (w, until) => Ok(Measurement::new(w, until.unwrap_or(f64::INFINITY))?),
        }
    }

    fn simulate(
        &self,
        spec: PolicySpec,
        pm: &PopulationModel,
        trace: &[Request],
        checksum: &str,
        seed: u64,
    ) -> Result<RunRow, CliError> {
        let oracle_population = self.is_synthetic().then_some(pm);
        let mut policy =
            spec.build(&self.cost, oracle_population)
                .map_err(|e| ConfigError::Invalid {
                    field: "policy",
                    reason: e.to_string(),
                })?;
        let warmup = self.config.run.warmup;
        let span = self.horizon(trace);
        if warmup > 0.0 && warmup >= span {
            return Err(EngineError::WarmupBeyondSpan { warmup, span }.into());
        }
        let ledger = run_measured(
            trace.iter().copied(),
            policy.as_mut(),
            &self.cost,
            self.measurement()?,
        )?;
        let (param_name, param_value) = spec.parameter();
        Ok(RunRow {
            policy: spec.name(),
            param_name,
            param_value,
            seed: Some(seed),
            requests: ledger.requests as f64,
            hits: ledger.hits as f64,
            cost_per_request: ledger.cost_per_request()?,
            compute_dollars: ledger.compute_dollars,
            storage_dollars: ledger.storage_dollars,
            transmission_dollars: ledger.transmission_dollars,
            trace_checksum: checksum.to_string(),
            cost_std: None,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
    }

    /// Runs every point on every seed. Points that share a population see
    /// the same trace per seed, so their differences are paired. Traces are
    /// held for one population at a time.
    fn evaluate(
        &self,
        points: &[Point],
        populations: &[PopulationModel],
    ) -> Result<Vec<RunRow>, CliError> {
        let seeds = &self.config.run.seeds;
        let pool = self.pool()?;
        let mut out = Vec::with_capacity(points.len() * (seeds.len() + 1));
        for (lambda, pm) in populations.iter().enumerate() {
            let group: Vec<PolicySpec> = points
                .iter()
                .filter(|p| p.lambda == lambda)
                .map(|p| p.spec)
                .collect();
            if group.is_empty() {
                continue;
            }
            let rows = pool.install(|| -> Result<Vec<RunRow>, CliError> {
                let traces: Vec<(Arc<Vec<Request>>, String)> = seeds
                    .par_iter()
                    .map(|&seed| {
                        let trace = self.trace(pm, seed)?;
                        let checksum = trace_checksum(&trace);
                        Ok((Arc::new(trace), checksum))
                    })
                    .collect::<Result<_, CliError>>()?;
                let jobs: Vec<(usize, usize)> = (0..group.len())
                    .flat_map(|p| (0..seeds.len()).map(move |s| (p, s)))
                    .collect();
                jobs.par_iter()
                    .map(|&(p, s)| {
                        let (trace, checksum) = &traces[s];
                        self.simulate(group[p], pm, trace, checksum, seeds[s])
                    })
                    .collect()
            })?;
            for chunk in rows.chunks(seeds.len()) {
                out.extend_from_slice(chunk);
                out.push(summarize(chunk));
            }
        }
        Ok(out)
    }

    /// The configured policy on every seed, followed by a summary row.
    pub fn run(&self) -> Result<Vec<RunRow>, CliError> {
        let point = Point {
            spec: self.policy,
            lambda: 0,
        };
        self.evaluate(&[point], std::slice::from_ref(&self.population))
    }

    fn points(
        &self,
        axis: SweepAxis,
        grid: &[f64],
    ) -> Result<(Vec<Point>, Vec<PopulationModel>), CliError> {
        check_grid(axis, grid)?;
        let mismatch = || {
            CliError::Usage(format!(
                "a {} sweep does not apply to policy {}",
                axis.name(),
                self.policy.name()
            ))
        };
        let spec_at = |v: f64| -> Result<PolicySpec, CliError> {
            Ok(match (axis, self.policy) {
                (SweepAxis::Ttl, PolicySpec::GlobalTtl { .. }) => PolicySpec::GlobalTtl { ttl: v },
                (SweepAxis::Window, PolicySpec::IndividualTtl { .. }) => {
                    PolicySpec::IndividualTtl { window: v }
                }
                (SweepAxis::Capacity, PolicySpec::Lru { .. }) => PolicySpec::Lru {
                    capacity: v as usize,
                },
                _ => return Err(mismatch()),
            })
        };
        if axis == SweepAxis::Lambda {
            if !self.is_synthetic() {
                return Err(CliError::Usage(
                    "a lambda sweep needs a synthetic workload".into(),
                ));
            }
            let populations = grid
                .iter()
                .map(|&l| self.population.with_lambda(l))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::Invalid {
                    field: "grid",
                    reason: e.to_string(),
                })?;
            let points = (0..grid.len())
                .map(|lambda| Point {
                    spec: self.policy,
                    lambda,
                })
                .collect();
            return Ok((points, populations));
        }
        let points = grid
            .iter()
            .map(|&v| {
                Ok(Point {
                    spec: spec_at(v)?,
                    lambda: 0,
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok((points, vec![self.population.clone()]))
    }

    /// Sweeps one parameter over `grid`, all points paired on the same
    /// traces, and reports the grid value with the lowest mean cost.
    pub fn sweep(&self, axis: SweepAxis, grid: &[f64]) -> Result<SweepReport, CliError> {
        let (points, populations) = self.points(axis, grid)?;
        let rows = self.evaluate(&points, &populations)?;
        let best = rows
            .iter()
            .filter(|r| r.is_summary())
            .zip(grid)
            .fold(None, |best: Option<(f64, f64)>, (row, &v)| match best {
                Some((_, c)) if c <= row.cost_per_request => best,
                _ => Some((v, row.cost_per_request)),
            })
            .expect("grid is non-empty");
        Ok(SweepReport { axis, rows, best })
    }

    /// Simulated mean cost against the closed form, for the configured
    /// policy or for each point of a sweep.
    pub fn validate(
        &self,
        sweep: Option<(SweepAxis, &[f64])>,
    ) -> Result<Vec<ValidationRow>, CliError> {
        if !self.is_synthetic() {
            return Err(CliError::Usage(
                "validation needs a synthetic workload".into(),
            ));
        }
        let (points, populations) = match sweep {
            Some((axis, grid)) => self.points(axis, grid)?,
            None => (
                vec![Point {
                    spec: self.policy,
                    lambda: 0,
                }],
                vec![self.population.clone()],
            ),
        };
        let mc = self.config.monte_carlo_spec()?;
        let samples: Vec<RateSample> = populations.iter().map(|pm| pm.sample_rates(mc)).collect();
        let rows = self.evaluate(&points, &populations)?;
        rows.iter()
            .filter(|r| r.is_summary())
            .zip(&points)
            .map(|(row, point)| {
                let analytic = closed_form(point.spec, &samples[point.lambda], &self.cost)?;
                Ok(ValidationRow {
                    policy: row.policy,
                    param_name: row.param_name,
                    param_value: row.param_value,
                    lambda: populations[point.lambda].lambda(),
                    seeds: self.config.run.seeds.len(),
                    simulated_mean: row.cost_per_request,
                    simulated_std: row.cost_std.unwrap_or(0.0),
                    analytic,
                    rel_error: (row.cost_per_request - analytic) / analytic,
                })
            })
            .collect()
    }
}

fn closed_form(spec: PolicySpec, sample: &RateSample, cm: &CostModel) -> Result<f64, CliError> {
    match spec {
        PolicySpec::GlobalTtl { ttl } => sample.global_ttl_cost(ttl, cm).map_err(|e| {
            CliError::Config(ConfigError::Invalid {
                field: "policy.ttl",
                reason: e.to_string(),
            })
        }),
        PolicySpec::IndividualTtl { .. } | PolicySpec::IndividualTtlOracle => {
            Ok(sample.individual_ttl_cost(cm))
        }
        PolicySpec::LowerBound => Ok(sample.lower_bound_cost(cm)),
        PolicySpec::Lru { .. } => Err(CliError::Usage(
            "lru has no closed-form cost to validate against".into(),
        )),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn summarize(rows: &[RunRow]) -> RunRow {
    let first = &rows[0];
    let cost = mean(rows.iter().map(|r| r.cost_per_request));
    let std = if rows.len() > 1 {
        let ss: f64 = rows
            .iter()
            .map(|r| (r.cost_per_request - cost).powi(2))
            .sum();
        (ss / (rows.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    RunRow {
        policy: first.policy,
        param_name: first.param_name,
        param_value: first.param_value,
        seed: None,
        requests: mean(rows.iter().map(|r| r.requests)),
        hits: mean(rows.iter().map(|r| r.hits)),
        cost_per_request: cost,
        compute_dollars: mean(rows.iter().map(|r| r.compute_dollars)),
        storage_dollars: mean(rows.iter().map(|r| r.storage_dollars)),
        transmission_dollars: mean(rows.iter().map(|r| r.transmission_dollars)),
        trace_checksum: String::new(),
        cost_std: Some(std),
    }
}

/// Closed-form costs of the three policies at each rate, one row per TTL
/// in `ttls` plus the best TTL on that grid.
pub fn analytic_table(
    population: &PopulationModel,
    cm: &CostModel,
    mc: MonteCarloSpec,
    lambdas: &[f64],
    ttls: &[f64],
) -> Result<Vec<AnalyticRow>, CliError> {
    check_grid(SweepAxis::Lambda, lambdas)?;
    check_grid(SweepAxis::Ttl, ttls)?;
    let model_error = |e: crate::analytic::ModelError| {
        CliError::Config(ConfigError::Invalid {
            field: "grid",
            reason: e.to_string(),
        })
    };
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let sample = population
            .with_lambda(lambda)
            .map_err(model_error)?
            .sample_rates(mc);
        let individual = sample.individual_ttl_cost(cm);
        let lower = sample.lower_bound_cost(cm);
        let mut best: Option<(f64, f64)> = None;
        for &ttl in ttls {
            let cost = sample.global_ttl_cost(ttl, cm).map_err(model_error)?;
            rows.push(AnalyticRow {
                kind: "curve",
                lambda,
                ttl,
                global_ttl: cost,
                individual_ttl: individual,
                lower_bound: lower,
            });
            if best.is_none_or(|(bt, bc)| cost < bc || (cost == bc && ttl < bt)) {
                best = Some((ttl, cost));
            }
        }
        let (ttl, cost) = best.expect("ttl grid is non-empty");
        rows.push(AnalyticRow {
            kind: "optimum",
            lambda,
            ttl,
            global_ttl: cost,
            individual_ttl: individual,
            lower_bound: lower,
        });
    }
    Ok(rows)
}
