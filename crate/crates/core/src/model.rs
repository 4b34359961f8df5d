//! Domain types shared by every other module, and line/profile validation.
//!
//! Stations are numbered from 1 in every message and file format. Internally
//! vectors are indexed from 0.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stability::Rate;

/// One stop of the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    pub name: String,
    /// Probability that a rider leaves the cabin when it stops here.
    pub sigma: f64,
}

/// Occupancy of cabins arriving at the first station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum OccupancyModel {
    /// Every cabin carries `round(r0_mean)` riders.
    #[default]
    Deterministic,
    /// Per-cabin draw from a probability mass function over `0..=gamma`.
    Empirical { pmf: Vec<f64> },
}

/// Static description of one transport line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineConfig {
    /// Seconds between consecutive cabins.
    pub beta: f64,
    /// Seats per cabin.
    pub gamma: u32,
    pub stations: Vec<StationConfig>,
    /// Expected occupancy of cabins arriving at station 1.
    pub r0_mean: f64,
    /// Travel time in seconds from station m to m+1 (length M-1).
    pub travel_delays: Vec<f64>,
    #[serde(default)]
    pub occupancy: OccupancyModel,
}

impl LineConfig {
    /// Line with travel delays equal to `beta` on every link.
    pub fn new(beta: f64, gamma: u32, sigmas: &[f64], r0_mean: f64) -> Self {
        let stations = sigmas
            .iter()
            .enumerate()
            .map(|(i, &sigma)| StationConfig {
                name: format!("station_{}", i + 1),
                sigma,
            })
            .collect::<Vec<_>>();
        let links = stations.len().saturating_sub(1);
        LineConfig {
            beta,
            gamma,
            stations,
            r0_mean,
            travel_delays: vec![beta; links],
            occupancy: OccupancyModel::Deterministic,
        }
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.stations.iter().map(|s| s.sigma).collect()
    }

    /// Number of service instants a cabin needs to cover link `link`
    /// (0-based, from station `link+1` to `link+2`). Cabins arriving between
    /// instants wait for the next synchronized service.
    pub fn link_lag(&self, link: usize) -> usize {
        let services = self.travel_delays[link] / self.beta;
        // tolerate representation noise, e.g. 30.000000000000004 / 10
        (services - 1e-9).ceil().max(0.0) as usize
    }
}

/// Piecewise-constant arrival rates, one column per station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    /// Segment start times in seconds, strictly ascending.
    pub breakpoints: Vec<f64>,
    /// `rates[i][m]` is the rate at station m on `[breakpoints[i], breakpoints[i+1])`.
    pub rates: Vec<Vec<f64>>,
}

impl RateProfile {
    /// A single segment starting at t = 0.
    pub fn stationary(rates: Vec<f64>) -> Self {
        RateProfile {
            breakpoints: vec![0.0],
            rates: vec![rates],
        }
    }

    pub fn n_stations(&self) -> usize {
        self.rates.first().map_or(0, Vec::len)
    }

    /// Rate at `station` (0-based) and time `t`; zero before the first breakpoint.
    pub fn rate_at(&self, station: usize, t: f64) -> f64 {
        match self.segment_at(t) {
            Some(i) => self.rates[i][station],
            None => 0.0,
        }
    }

    pub fn rates_at(&self, t: f64) -> Vec<f64> {
        match self.segment_at(t) {
            Some(i) => self.rates[i].clone(),
            None => vec![0.0; self.n_stations()],
        }
    }

    fn segment_at(&self, t: f64) -> Option<usize> {
        let after = self.breakpoints.partition_point(|&b| b <= t);
        after.checked_sub(1)
    }

    /// `(start, end, rate)` for each segment of `station` clipped to `[0, horizon)`.
    pub fn segments(&self, station: usize, horizon: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.breakpoints.len());
        for (i, &start) in self.breakpoints.iter().enumerate() {
            let end = self.breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let (s, e) = (start.max(0.0), end.min(horizon));
            if e > s {
                out.push((s, e, self.rates[i][station]));
            }
        }
        out
    }
}

/// Block boundaries of a line partition: `bounds[0] = 0`, strictly
/// increasing, last element `M`. Block `i` covers stations
/// `bounds[i]+1 ..= bounds[i+1]` (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub bounds: Vec<usize>,
}

impl BlockPartition {
    /// The whole line as one block.
    pub fn single(n_stations: usize) -> Self {
        BlockPartition {
            bounds: vec![0, n_stations],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.bounds.len().saturating_sub(1)
    }

    /// 0-based half-open station ranges, one per block.
    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.bounds.windows(2).map(|w| w[0]..w[1])
    }

    pub fn is_valid_for(&self, n_stations: usize) -> bool {
        self.bounds.first() == Some(&0)
            && self.bounds.last() == Some(&n_stations)
            && self.bounds.windows(2).all(|w| w[0] < w[1])
    }
}

/// Output of a controller for one service interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision<T> {
    /// Maximum boardings per service, per station, each in `[1, gamma]`.
    pub eta: Vec<u32>,
    pub blocks: BlockPartition,
    /// One scaled stability threshold per block.
    pub thresholds: Vec<Rate<T>>,
}

impl<T> ControlDecision<T> {
    /// No restriction anywhere; the line is reported as a single block.
    pub fn unrestricted(n_stations: usize, gamma: u32) -> Self {
        ControlDecision {
            eta: vec![gamma; n_stations],
            blocks: BlockPartition::single(n_stations),
            thresholds: vec![Rate::Infinite],
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("beta must be > 0 (got {0})")]
    Beta(f64),
    #[error("gamma must be >= 1")]
    Gamma,
    #[error("line must have at least one station")]
    NoStations,
    #[error("r0_mean out of [0, gamma] (got {0})")]
    R0(f64),
    #[error("station {station}: sigma out of [0,1] (got {value})")]
    Sigma { station: usize, value: f64 },
    #[error("expected {expected} travel delays, got {got}")]
    DelayCount { expected: usize, got: usize },
    #[error("link {link}: travel delay must be >= 0 (got {value})")]
    Delay { link: usize, value: f64 },
    #[error("occupancy pmf must have gamma+1 non-negative entries summing to 1")]
    OccupancyPmf,
    #[error("profile is empty")]
    EmptyProfile,
    #[error("profile has {got} columns but the line has {expected} stations")]
    Dimension { expected: usize, got: usize },
    #[error("profile breakpoints not strictly ascending at row {row}")]
    Breakpoints { row: usize },
    #[error("profile row {row}: breakpoint must be finite and >= 0")]
    BreakpointValue { row: usize },
    #[error("profile row {row}, station {station}: rate out of range (got {value})")]
    RateValue {
        row: usize,
        station: usize,
        value: f64,
    },
}

/// Every invariant violated by a config/profile pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Checks of the line alone.
pub fn config_violations(config: &LineConfig) -> Vec<Violation> {
    let mut v = Vec::new();
    if !(config.beta > 0.0 && config.beta.is_finite()) {
        v.push(Violation::Beta(config.beta));
    }
    if config.gamma == 0 {
        v.push(Violation::Gamma);
    }
    if config.stations.is_empty() {
        v.push(Violation::NoStations);
    }
    if !(config.r0_mean >= 0.0 && config.r0_mean <= f64::from(config.gamma)) {
        v.push(Violation::R0(config.r0_mean));
    }
    for (i, s) in config.stations.iter().enumerate() {
        if !in_unit(s.sigma) {
            v.push(Violation::Sigma {
                station: i + 1,
                value: s.sigma,
            });
        }
    }
    let links = config.stations.len().saturating_sub(1);
    if config.travel_delays.len() != links {
        v.push(Violation::DelayCount {
            expected: links,
            got: config.travel_delays.len(),
        });
    }
    for (i, &d) in config.travel_delays.iter().enumerate() {
        if !(d >= 0.0 && d.is_finite()) {
            v.push(Violation::Delay {
                link: i + 1,
                value: d,
            });
        }
    }
    if let OccupancyModel::Empirical { pmf } = &config.occupancy {
        let sum: f64 = pmf.iter().sum();
        if pmf.len() != config.gamma as usize + 1
            || pmf.iter().any(|&p| !(p >= 0.0))
            || (sum - 1.0).abs() > 1e-9
        {
            v.push(Violation::OccupancyPmf);
        }
    }
    v
}

/// Checks of the profile alone; `expected_columns` adds the shape check.
pub fn profile_violations(profile: &RateProfile, expected_columns: Option<usize>) -> Vec<Violation> {
    let mut v = Vec::new();
    if profile.breakpoints.is_empty() || profile.breakpoints.len() != profile.rates.len() {
        v.push(Violation::EmptyProfile);
        return v;
    }
    for (i, &b) in profile.breakpoints.iter().enumerate() {
        if !(b >= 0.0 && b.is_finite()) {
            v.push(Violation::BreakpointValue { row: i + 1 });
        }
        if i > 0 && !(b > profile.breakpoints[i - 1]) {
            v.push(Violation::Breakpoints { row: i + 1 });
        }
    }
    let width = profile.rates[0].len();
    for (i, row) in profile.rates.iter().enumerate() {
        if row.len() != width {
            v.push(Violation::Dimension {
                expected: width,
                got: row.len(),
            });
        }
        for (m, &r) in row.iter().enumerate() {
            if !(r >= 0.0 && r.is_finite()) {
                v.push(Violation::RateValue {
                    row: i + 1,
                    station: m + 1,
                    value: r,
                });
            }
        }
    }
    if let Some(expected) = expected_columns {
        if width != expected {
            v.push(Violation::Dimension {
                expected,
                got: width,
            });
        }
    }
    v
}

/// Returns the pair unchanged when every invariant holds, otherwise a report
/// naming each violation.
pub fn validate(
    config: LineConfig,
    profile: RateProfile,
) -> Result<(LineConfig, RateProfile), ValidationReport> {
    let mut violations = config_violations(&config);
    violations.extend(profile_violations(&profile, Some(config.n_stations())));
    if violations.is_empty() {
        Ok((config, profile))
    } else {
        Err(ValidationReport { violations })
    }
}
