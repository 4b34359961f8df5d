//! Across-run aggregation with Student-t confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::sim::SimTrace;

/// Confidence level of every reported interval.
pub const CONFIDENCE: f64 = 0.95;
/// Default reporting bin in seconds.
pub const DEFAULT_BIN_WIDTH_S: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no traces to aggregate")]
    Empty,
    #[error("traces differ in line shape or horizon")]
    Mismatch,
    #[error("bin width must be > 0")]
    BinWidth,
}

/// `P(T <= x) = p` for Student's t with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .inverse_cdf(p)
}

/// Sample mean and unbiased variance, computed about the first sample so
/// identical samples give exactly zero variance.
fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let shift = samples[0];
    let (s1, s2) = samples
        .iter()
        .map(|x| x - shift)
        .fold((0.0, 0.0), |(a, b), d| (a + d, b + d * d));
    let var = if samples.len() > 1 {
        ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (shift + s1 / n, var)
}

/// Mean of across-run samples with a two-sided confidence half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Absent with fewer than two samples.
    pub half_width: Option<f64>,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Option<Estimate> {
        let n = samples.len();
        if n == 0 {
            return None;
        }
        let (mean, var) = mean_var(samples);
        let half_width = (n >= 2).then(|| {
            let q = t_quantile(0.5 + CONFIDENCE / 2.0, (n - 1) as f64);
            q * (var / n as f64).sqrt()
        });
        Some(Estimate { mean, half_width, n })
    }
}

/// One-sample t statistic of `samples` against zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub mean: f64,
    pub std_err: f64,
    pub df: f64,
}

impl TTest {
    pub fn new(samples: &[f64]) -> Option<TTest> {
        let n = samples.len();
        if n < 2 {
            return None;
        }
        let (mean, var) = mean_var(samples);
        Some(TTest {
            mean,
            std_err: (var / n as f64).sqrt(),
            df: (n - 1) as f64,
        })
    }

    /// One-sided test of `mean > 0` at level `1 - confidence`.
    /// Zero-variance samples are positive exactly when their mean is.
    pub fn positive(&self, confidence: f64) -> bool {
        if self.std_err == 0.0 {
            return self.mean > 0.0;
        }
        self.mean / self.std_err > t_quantile(confidence, self.df)
    }
}

/// Aggregates of one station and one time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub start: f64,
    pub end: f64,
    /// Mean waiting time of passengers who boarded in the bin; absent when
    /// nobody boarded in any run.
    pub wait: Option<Estimate>,
    pub queue: Option<Estimate>,
    pub eta: Option<Estimate>,
    /// Boardings in the bin summed over runs.
    pub boarded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub station: usize,
    pub bins: Vec<BinStats>,
}

/// Time-binned per-station waits, queue lengths and caps across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingStats {
    pub bin_width: f64,
    pub runs: usize,
    pub stations: Vec<StationStats>,
}

/// Per-run bin means for one station: (waits, queues, etas, boardings).
pub struct RunBins {
    pub waits: Vec<Option<f64>>,
    pub queues: Vec<Option<f64>>,
    pub etas: Vec<Option<f64>>,
    pub boarded: Vec<u64>,
}

pub fn n_bins(horizon: f64, bin_width: f64) -> usize {
    ((horizon / bin_width).ceil() as usize).max(1)
}

fn bin_of(t: f64, bin_width: f64, bins: usize) -> usize {
    ((t / bin_width).floor() as usize).min(bins - 1)
}

fn means(sums: &[(f64, u64)]) -> Vec<Option<f64>> {
    sums.iter()
        .map(|&(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Bins one run of one station.
pub fn run_bins(trace: &SimTrace, station: usize, bin_width: f64) -> RunBins {
    let bins = n_bins(trace.horizon, bin_width);
    let mut wait = vec![(0.0, 0u64); bins];
    for p in trace.station_passengers(station) {
        if let (Some(b), Some(w)) = (p.board_time, p.wait()) {
            let i = bin_of(b, bin_width, bins);
            wait[i].0 += w;
            wait[i].1 += 1;
        }
    }
    let mut queue = vec![(0.0, 0u64); bins];
    let mut eta = vec![(0.0, 0u64); bins];
    let mut boarded = vec![0u64; bins];
    for s in trace.station_services(station) {
        let i = bin_of(s.time, bin_width, bins);
        queue[i].0 += s.queue_after as f64;
        queue[i].1 += 1;
        eta[i].0 += f64::from(s.eta_applied);
        eta[i].1 += 1;
        boarded[i] += u64::from(s.boarded);
    }
    RunBins {
        waits: means(&wait),
        queues: means(&queue),
        etas: means(&eta),
        boarded,
    }
}

/// Across-run means and 95% intervals per station and bin.
pub fn aggregate_runs(traces: &[SimTrace], bin_width: f64) -> Result<WaitingStats, StatsError> {
    let first = traces.first().ok_or(StatsError::Empty)?;
    if !(bin_width > 0.0) {
        return Err(StatsError::BinWidth);
    }
    if traces
        .iter()
        .any(|t| t.n_stations != first.n_stations || t.horizon != first.horizon || t.beta != first.beta)
    {
        return Err(StatsError::Mismatch);
    }
    let bins = n_bins(first.horizon, bin_width);
    let mut stations = Vec::with_capacity(first.n_stations);
    for m in 0..first.n_stations {
        let per_run: Vec<RunBins> = traces.iter().map(|t| run_bins(t, m, bin_width)).collect();
        let collect = |pick: &dyn Fn(&RunBins) -> Option<f64>| -> Option<Estimate> {
            let samples: Vec<f64> = per_run.iter().filter_map(pick).collect();
            Estimate::from_samples(&samples)
        };
        let bins = (0..bins)
            .map(|i| BinStats {
                start: i as f64 * bin_width,
                end: ((i + 1) as f64 * bin_width).min(first.horizon.max(i as f64 * bin_width)),
                wait: collect(&|r| r.waits[i]),
                queue: collect(&|r| r.queues[i]),
                eta: collect(&|r| r.etas[i]),
                boarded: per_run.iter().map(|r| r.boarded[i]).sum(),
            })
            .collect();
        stations.push(StationStats { station: m, bins });
    }
    Ok(WaitingStats {
        bin_width,
        runs: traces.len(),
        stations,
    })
}
