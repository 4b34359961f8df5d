//! Multi-run experiments: seeded replications, aggregation, output files and
//! controller comparisons.
//!
//! Run `i` of an experiment with master seed `s` uses the `(i+1)`-th output of
//! a SplitMix64 generator started at `s` (see [`run_seed`]), so adding runs
//! never changes earlier ones.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{imbalance, time_averaged_waits};
use crate::control::ControllerPolicy;
use crate::io::{self, IoError};
use crate::model::{LineConfig, RateProfile};
use crate::sim::{run_simulation, EstimationMode, SimError, SimParams, SimTrace};
use crate::stats::{aggregate_runs, Estimate, StatsError, TTest, WaitingStats, CONFIDENCE};

pub const DEFAULT_RUNS: usize = 35;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("runs must be >= 1")]
    Runs,
    #[error("no horizon given and the profile has no end time (last breakpoint is 0)")]
    Horizon,
    #[error("output directory {0} is not empty")]
    OutputNotEmpty(String),
}

impl ExperimentError {
    pub fn is_validation(&self) -> bool {
        match self {
            ExperimentError::Io(e) => e.is_validation(),
            ExperimentError::Sim(SimError::Control(_)) => true,
            ExperimentError::Sim(SimError::Estimator(_)) => true,
            ExperimentError::Runs | ExperimentError::Horizon | ExperimentError::OutputNotEmpty(_) => true,
            _ => false,
        }
    }
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run` (0-based) under `master`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    splitmix64(master.wrapping_add((run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Horizon used when none is given: the profile's last breakpoint.
pub fn default_horizon(profile: &RateProfile) -> Option<f64> {
    profile.breakpoints.last().copied().filter(|&t| t > 0.0)
}

/// Everything needed to run one controller over many seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub controller: ControllerPolicy,
    pub runs: usize,
    pub seed: u64,
    pub bin_width: f64,
    pub horizon: f64,
    pub estimation: EstimationMode,
}

/// `runs` independent simulations; results are in run order.
pub fn replicate(
    config: &LineConfig,
    profile: &RateProfile,
    spec: &ExperimentSpec,
) -> Result<Vec<SimTrace>, ExperimentError> {
    if spec.runs == 0 {
        return Err(ExperimentError::Runs);
    }
    (0..spec.runs)
        .into_par_iter()
        .map(|i| {
            let params = SimParams {
                horizon: spec.horizon,
                seed: run_seed(spec.seed, i),
                controller: spec.controller.clone(),
                estimation: spec.estimation.clone(),
            };
            run_simulation(config, profile, &params).map_err(ExperimentError::from)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub traces: Vec<SimTrace>,
    pub stats: WaitingStats,
}

pub fn run_experiment(
    config: &LineConfig,
    profile: &RateProfile,
    spec: &ExperimentSpec,
) -> Result<ExperimentResult, ExperimentError> {
    let traces = replicate(config, profile, spec)?;
    let stats = aggregate_runs(&traces, spec.bin_width)?;
    Ok(ExperimentResult { traces, stats })
}

#[derive(Serialize)]
struct StatsDocument<'a> {
    controller: String,
    runs: usize,
    master_seed: u64,
    run_seeds: Vec<u64>,
    horizon_s: f64,
    estimation: &'a EstimationMode,
    confidence: f64,
    stats: &'a WaitingStats,
}

/// Creates `dir` if needed; refuses a directory that already has entries.
pub fn prepare_output_dir(dir: &Path) -> Result<(), ExperimentError> {
    let io_err = |source| {
        ExperimentError::Io(IoError::Io {
            path: dir.display().to_string(),
            source,
        })
    };
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(io_err)?;
        if entries.next().is_some() {
            return Err(ExperimentError::OutputNotEmpty(dir.display().to_string()));
        }
    } else {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    Ok(())
}

/// Writes `stats.csv`, `stats.json` and, when `traces` is set, three CSV files
/// per run (`run_NNN_services.csv`, `run_NNN_passengers.csv`,
/// `run_NNN_intervals.csv`). Returns the written paths.
pub fn write_outputs(
    dir: &Path,
    spec: &ExperimentSpec,
    result: &ExperimentResult,
    traces: bool,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        io::write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    put("stats.csv".into(), io::write_stats_csv(&result.stats))?;
    let doc = StatsDocument {
        controller: spec.controller.label(),
        runs: spec.runs,
        master_seed: spec.seed,
        run_seeds: (0..spec.runs).map(|i| run_seed(spec.seed, i)).collect(),
        horizon_s: spec.horizon,
        estimation: &spec.estimation,
        confidence: CONFIDENCE,
        stats: &result.stats,
    };
    put("stats.json".into(), serde_json::to_string_pretty(&doc).map_err(IoError::from)? + "\n")?;
    if traces {
        for (i, t) in result.traces.iter().enumerate() {
            put(format!("run_{i:03}_services.csv"), io::write_services_csv(t))?;
            put(format!("run_{i:03}_passengers.csv"), io::write_passengers_csv(t))?;
            put(format!("run_{i:03}_intervals.csv"), io::write_intervals_csv(t))?;
        }
    }
    Ok(written)
}

/// Per-run and across-run waiting summaries of one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: String,
    /// Time-averaged wait per station, across runs.
    pub waits: Vec<Option<Estimate>>,
    /// `max - min` of the time-averaged waits, across runs.
    pub imbalance: Option<Estimate>,
    pub run_waits: Vec<Vec<Option<f64>>>,
    pub run_imbalance: Vec<Option<f64>>,
}

impl ControllerSummary {
    pub fn from_traces(label: String, traces: &[SimTrace], bin_width: f64, from: f64, to: f64) -> Self {
        let run_waits: Vec<Vec<Option<f64>>> = traces
            .iter()
            .map(|t| time_averaged_waits(t, bin_width, from, to))
            .collect();
        let n = traces.first().map_or(0, |t| t.n_stations);
        let waits = (0..n)
            .map(|m| {
                let s: Vec<f64> = run_waits.iter().filter_map(|w| w[m]).collect();
                Estimate::from_samples(&s)
            })
            .collect();
        let run_imbalance: Vec<Option<f64>> = run_waits.iter().map(|w| imbalance(w)).collect();
        let flat: Vec<f64> = run_imbalance.iter().flatten().copied().collect();
        ControllerSummary {
            controller: label,
            waits,
            imbalance: Estimate::from_samples(&flat),
            run_waits,
            run_imbalance,
        }
    }
}

/// Paired difference `J(other) - J(gamora)` over runs sharing a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedImbalance {
    pub other: String,
    pub mean_difference: Option<f64>,
    pub std_err: Option<f64>,
    /// Gamora's imbalance is smaller at the 95% one-sided level.
    pub gamora_better: bool,
}

pub fn paired_imbalance(gamora: &ControllerSummary, other: &ControllerSummary) -> PairedImbalance {
    let diffs: Vec<f64> = gamora
        .run_imbalance
        .iter()
        .zip(&other.run_imbalance)
        .filter_map(|(g, o)| Some((*o)? - (*g)?))
        .collect();
    let test = TTest::new(&diffs);
    PairedImbalance {
        other: other.controller.clone(),
        mean_difference: test.map(|t| t.mean),
        std_err: test.map(|t| t.std_err),
        gamora_better: test.is_some_and(|t| t.positive(CONFIDENCE)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub controllers: Vec<ControllerSummary>,
    pub gamora_vs: Vec<PairedImbalance>,
}

/// Runs no control, each static policy and Gamora under identical seeds.
pub fn compare(
    config: &LineConfig,
    profile: &RateProfile,
    statics: &[Vec<u32>],
    base: &ExperimentSpec,
) -> Result<Comparison, ExperimentError> {
    let mut policies = vec![ControllerPolicy::NoControl];
    policies.extend(statics.iter().cloned().map(ControllerPolicy::Static));
    policies.push(ControllerPolicy::Gamora);
    let mut controllers = Vec::with_capacity(policies.len());
    for policy in policies {
        let spec = ExperimentSpec {
            controller: policy.clone(),
            ..base.clone()
        };
        let traces = replicate(config, profile, &spec)?;
        controllers.push(ControllerSummary::from_traces(
            policy.label(),
            &traces,
            base.bin_width,
            0.0,
            base.horizon,
        ));
    }
    let gamora = controllers.last().expect("gamora summary");
    let gamora_vs = controllers[..controllers.len() - 1]
        .iter()
        .map(|c| paired_imbalance(gamora, c))
        .collect();
    Ok(Comparison {
        controllers,
        gamora_vs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a: Vec<u64> = (0..35).map(|i| run_seed(42, i)).collect();
        let b: Vec<u64> = (0..70).map(|i| run_seed(42, i)).collect();
        assert_eq!(a[..], b[..35]);
        let mut sorted = b.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 70);
        assert_ne!(run_seed(1, 0), run_seed(2, 0));
    }

    #[test]
    fn horizon_defaults_to_last_breakpoint() {
        let p = RateProfile {
            breakpoints: vec![0.0, 3600.0],
            rates: vec![vec![1.0], vec![0.0]],
        };
        assert_eq!(default_horizon(&p), Some(3600.0));
        assert_eq!(default_horizon(&RateProfile::stationary(vec![1.0])), None);
    }

    fn spec(controller: ControllerPolicy, runs: usize) -> ExperimentSpec {
        ExperimentSpec {
            controller,
            runs,
            seed: 3,
            bin_width: 600.0,
            horizon: 1800.0,
            estimation: EstimationMode::default(),
        }
    }

    #[test]
    fn single_station_controllers_agree() {
        let config = LineConfig::new(10.0, 8, &[1.0], 0.0);
        let profile = RateProfile::stationary(vec![0.5]);
        let cmp = compare(&config, &profile, &[vec![8]], &spec(ControllerPolicy::Gamora, 4)).unwrap();
        let first = &cmp.controllers[0];
        for c in &cmp.controllers {
            assert_eq!(c.run_waits, first.run_waits);
            assert_eq!(c.imbalance.as_ref().unwrap().mean, 0.0);
        }
    }

    #[test]
    fn zero_rate_comparison_has_no_imbalance() {
        let config = LineConfig::new(10.0, 8, &[0.0, 0.04], 0.0);
        let profile = RateProfile::stationary(vec![0.0, 0.0]);
        let cmp = compare(&config, &profile, &[vec![6, 8]], &spec(ControllerPolicy::Gamora, 3)).unwrap();
        for c in &cmp.controllers {
            assert!(c.waits.iter().all(Option::is_none));
            assert!(c.imbalance.is_none());
        }
        assert!(cmp.gamora_vs.iter().all(|p| !p.gamora_better && p.mean_difference.is_none()));
    }

    #[test]
    fn zero_runs_rejected() {
        let config = LineConfig::new(10.0, 8, &[0.0], 0.0);
        let profile = RateProfile::stationary(vec![0.1]);
        assert!(matches!(
            replicate(&config, &profile, &spec(ControllerPolicy::NoControl, 0)),
            Err(ExperimentError::Runs)
        ));
    }
}
