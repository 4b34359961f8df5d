//! Discrete-event simulation of one line.
//!
//! Cabins are serviced at every station at the synchronized instants
//! `t = n * beta`. At each instant the controller fixes the boarding caps for
//! all stations, then stations are serviced first to last: riders leave
//! (one binomial draw), boarding is capped by `min(eta, free seats)`, and the
//! longest-waiting passengers board first. A cabin leaving station m reaches
//! m+1 after `ceil(delay / beta)` service intervals; cabins already on the
//! line when the simulation starts are empty.
//!
//! Randomness is split into independent ChaCha streams per purpose and
//! station, all derived from the run seed (see [`stream_rng`]), so the
//! arrival process does not depend on the controller.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{decide, decide_from_input, ControlError, ControllerPolicy, ObservedState};
use crate::estimators::{
    EstimatorError, RateEstimator, SigmaEstimator, DEFAULT_LAMBDA_WINDOW_S,
    DEFAULT_SIGMA_PRIOR, DEFAULT_SIGMA_WINDOW_S,
};
use crate::model::{LineConfig, OccupancyModel, RateProfile};

/// Stream ids for [`stream_rng`].
pub const STREAM_ARRIVALS: u64 = 1;
pub const STREAM_DEBOARDING: u64 = 2;
pub const STREAM_OCCUPANCY: u64 = 3;

/// RNG for one purpose at one station: ChaCha8 keyed by the run seed, with
/// stream number `purpose << 32 | station`.
pub fn stream_rng(seed: u64, purpose: u64, station: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | station as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("horizon must be > 0")]
    Horizon,
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Whether the controller sees true or estimated parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationMode {
    pub estimate_lambda: bool,
    pub estimate_sigma: bool,
    pub lambda_window_s: f64,
    pub sigma_window_s: f64,
    pub sigma_prior: f64,
}

impl Default for EstimationMode {
    fn default() -> Self {
        EstimationMode {
            estimate_lambda: false,
            estimate_sigma: false,
            lambda_window_s: DEFAULT_LAMBDA_WINDOW_S,
            sigma_window_s: DEFAULT_SIGMA_WINDOW_S,
            sigma_prior: DEFAULT_SIGMA_PRIOR,
        }
    }
}

impl EstimationMode {
    pub fn estimated(estimate_lambda: bool, estimate_sigma: bool) -> Self {
        EstimationMode {
            estimate_lambda,
            estimate_sigma,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Seconds simulated; services happen at every `n * beta <= horizon`.
    pub horizon: f64,
    pub seed: u64,
    pub controller: ControllerPolicy,
    pub estimation: EstimationMode,
}

impl SimParams {
    pub fn new(horizon: f64, seed: u64, controller: ControllerPolicy) -> Self {
        SimParams {
            horizon,
            seed,
            controller,
            estimation: EstimationMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassengerRecord {
    /// 0-based station index.
    pub station: usize,
    pub arrival_time: f64,
    pub board_time: Option<f64>,
}

impl PassengerRecord {
    pub fn wait(&self) -> Option<f64> {
        self.board_time.map(|b| b - self.arrival_time)
    }
}

/// One cabin stop at one station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardingOutcome {
    /// 0-based station index.
    pub station: usize,
    pub service: u64,
    pub time: f64,
    /// Riders aboard when the cabin arrived.
    pub occupancy_before: u32,
    pub leavers: u32,
    pub eta_applied: u32,
    pub capacity: u32,
    pub queue_before: u64,
    pub boarded: u32,
    pub queue_after: u64,
}

/// Controller inputs and outputs at one decision instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub service: u64,
    pub time: f64,
    pub eta: Vec<u32>,
    /// Arrival-rate estimate per station (true rate when not estimated).
    pub lambda_hat: Vec<f64>,
    /// Effective demand fed to the controller.
    pub lambda_in: Vec<f64>,
    pub sigma_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub n_stations: usize,
    pub beta: f64,
    pub gamma: u32,
    pub horizon: f64,
    pub seed: u64,
    /// Grouped by station, in arrival order within a station.
    pub passengers: Vec<PassengerRecord>,
    /// Service-major: all stations of service 0, then service 1, ...
    pub services: Vec<BoardingOutcome>,
    pub intervals: Vec<IntervalRecord>,
}

impl SimTrace {
    pub fn station_services(&self, station: usize) -> impl Iterator<Item = &BoardingOutcome> {
        self.services.iter().filter(move |s| s.station == station)
    }

    pub fn station_passengers(&self, station: usize) -> impl Iterator<Item = &PassengerRecord> {
        self.passengers.iter().filter(move |p| p.station == station)
    }

    /// Checks conservation, occupancy bounds, FIFO order and cap ranges.
    /// Returns a description of every violation found.
    pub fn verify(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for m in 0..self.n_stations {
            let arrivals: Vec<&PassengerRecord> = self.station_passengers(m).collect();
            let mut boarded_total = 0u64;
            for s in self.station_services(m) {
                boarded_total += u64::from(s.boarded);
                let arrived = arrivals.partition_point(|p| p.arrival_time <= s.time) as u64;
                if arrived != boarded_total + s.queue_after {
                    problems.push(format!(
                        "station {} service {}: {arrived} arrivals != {boarded_total} boarded + {} queued",
                        m + 1,
                        s.service,
                        s.queue_after
                    ));
                }
                let remaining = s.occupancy_before.checked_sub(s.leavers);
                if s.occupancy_before > self.gamma
                    || remaining.is_none_or(|r| r + s.boarded > self.gamma)
                {
                    problems.push(format!("station {} service {}: occupancy out of bounds", m + 1, s.service));
                    continue;
                }
                if s.eta_applied < 1 || s.eta_applied > self.gamma {
                    problems.push(format!("station {} service {}: eta {} out of range", m + 1, s.service, s.eta_applied));
                }
                let free = self.gamma - remaining.unwrap_or(0);
                if s.capacity != s.eta_applied.min(free)
                    || u64::from(s.boarded) != u64::from(s.capacity).min(s.queue_before)
                    || s.queue_after.checked_add(u64::from(s.boarded)) != Some(s.queue_before)
                {
                    problems.push(format!("station {} service {}: inconsistent boarding record", m + 1, s.service));
                }
            }
            let mut last_board = f64::NEG_INFINITY;
            let mut seen_waiting = false;
            for p in &arrivals {
                match p.board_time {
                    Some(b) => {
                        if seen_waiting || b < last_board || b < p.arrival_time {
                            problems.push(format!("station {}: FIFO order broken at arrival {}", m + 1, p.arrival_time));
                            break;
                        }
                        last_board = b;
                    }
                    None => seen_waiting = true,
                }
            }
        }
        problems
    }
}

/// Arrival times of a Poisson process with the profile's piecewise-constant
/// rate at `station`, on `[0, horizon)`.
///
/// Inter-arrival draws restart at each breakpoint, which is exact by
/// memorylessness.
pub fn generate_arrivals<R: Rng + ?Sized>(
    profile: &RateProfile,
    station: usize,
    horizon: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::new();
    for (start, end, rate) in profile.segments(station, horizon) {
        if rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = start;
        loop {
            t += gap.sample(rng);
            if t >= end {
                break;
            }
            out.push(t);
        }
    }
    out
}

/// Result of servicing one cabin at one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationService<P> {
    pub leavers: u32,
    pub capacity: u32,
    /// Boarded passengers, longest-waiting first.
    pub boarded: Vec<P>,
    pub occupancy_after: u32,
}

/// De-boarding then capped FIFO boarding.
pub fn service_station<P, R: Rng + ?Sized>(
    occupancy: u32,
    queue: &mut VecDeque<P>,
    eta: u32,
    sigma: f64,
    gamma: u32,
    rng: &mut R,
) -> StationService<P> {
    debug_assert!(occupancy <= gamma && (1..=gamma).contains(&eta));
    let leavers = if occupancy == 0 || sigma <= 0.0 {
        0
    } else if sigma >= 1.0 {
        occupancy
    } else {
        Binomial::new(u64::from(occupancy), sigma)
            .expect("sigma in (0,1)")
            .sample(rng) as u32
    };
    let remaining = occupancy - leavers;
    let capacity = eta.min(gamma - remaining);
    let take = (capacity as usize).min(queue.len());
    let boarded: Vec<P> = queue.drain(..take).collect();
    StationService {
        leavers,
        capacity,
        occupancy_after: remaining + take as u32,
        boarded,
    }
}

fn draw_entry_occupancy<R: Rng>(config: &LineConfig, pmf: Option<&WeightedIndex<f64>>, rng: &mut R) -> u32 {
    match (&config.occupancy, pmf) {
        (OccupancyModel::Empirical { .. }, Some(dist)) => dist.sample(rng) as u32,
        _ => config.r0_mean.round() as u32,
    }
}

/// Simulates one run. Inputs are expected to have passed
/// [`crate::model::validate`]; the result depends only on the arguments.
pub fn run_simulation(
    config: &LineConfig,
    profile: &RateProfile,
    params: &SimParams,
) -> Result<SimTrace, SimError> {
    if !(params.horizon > 0.0) {
        return Err(SimError::Horizon);
    }
    let n = config.n_stations();
    let gamma = config.gamma;
    params.controller.check(n, gamma)?;
    let sigmas = config.sigmas();

    let mut passengers = Vec::new();
    let mut first_id = Vec::with_capacity(n);
    let mut arrival_count = Vec::with_capacity(n);
    for m in 0..n {
        let mut rng = stream_rng(params.seed, STREAM_ARRIVALS, m);
        let times = generate_arrivals(profile, m, params.horizon, &mut rng);
        first_id.push(passengers.len());
        arrival_count.push(times.len());
        passengers.extend(times.into_iter().map(|t| PassengerRecord {
            station: m,
            arrival_time: t,
            board_time: None,
        }));
    }
    let mut deboard_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|m| stream_rng(params.seed, STREAM_DEBOARDING, m))
        .collect();
    let mut occupancy_rng = stream_rng(params.seed, STREAM_OCCUPANCY, 0);
    let pmf = match &config.occupancy {
        OccupancyModel::Empirical { pmf } => WeightedIndex::new(pmf.iter().copied()).ok(),
        OccupancyModel::Deterministic => None,
    };

    let lags: Vec<usize> = (0..n.saturating_sub(1)).map(|l| config.link_lag(l)).collect();
    let mut links: Vec<VecDeque<u32>> = lags.iter().map(|&k| VecDeque::from(vec![0; k])).collect();
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); n];
    let mut next_arrival = vec![0usize; n];

    let est = &params.estimation;
    let mut rate_est = if est.estimate_lambda {
        Some(RateEstimator::new(n, config.beta, est.lambda_window_s)?)
    } else {
        None
    };
    let mut sigma_est = if est.estimate_sigma {
        Some(SigmaEstimator::new(&lags, config.beta, est.sigma_window_s, est.sigma_prior)?)
    } else {
        None
    };

    let n_services = (params.horizon / config.beta).floor() as u64;
    let mut services = Vec::with_capacity((n_services as usize + 1) * n);
    let mut intervals = Vec::with_capacity(n_services as usize + 1);
    let mut counts = vec![0u64; n];
    let mut exits = vec![0u64; n];
    let mut boards = vec![0u64; n];

    for service in 0..=n_services {
        let t = service as f64 * config.beta;
        for m in 0..n {
            let start = next_arrival[m];
            let base = first_id[m];
            while next_arrival[m] < arrival_count[m] && passengers[base + next_arrival[m]].arrival_time <= t {
                queues[m].push_back(base + next_arrival[m]);
                next_arrival[m] += 1;
            }
            counts[m] = (next_arrival[m] - start) as u64;
        }
        let queue_lengths: Vec<u64> = queues.iter().map(|q| q.len() as u64).collect();

        let sigma_hat = match &sigma_est {
            Some(s) => s.current().to_vec(),
            None => sigmas.clone(),
        };
        let (lambda_hat, smoothed) = match rate_est.as_mut() {
            Some(r) => {
                let e = r.observe(&counts, &queue_lengths)?;
                (e.instantaneous, Some(e.smoothed_input))
            }
            None => (profile.rates_at(t), None),
        };
        let state = ObservedState {
            queues: queue_lengths.clone(),
            lambda_hat,
            sigma_hat,
            r0_hat: config.r0_mean,
        };
        let (decision, lambda_in) = match smoothed {
            Some(input) => (
                decide_from_input(&params.controller, input.clone(), &state, config),
                input,
            ),
            None => (
                decide(&params.controller, &state, config),
                crate::control::feedback_input(&state.queues, &config.beta, &state.lambda_hat),
            ),
        };

        let entering = draw_entry_occupancy(config, pmf.as_ref(), &mut occupancy_rng);
        for m in 0..n {
            let occupancy = if m == 0 {
                entering
            } else {
                links[m - 1].pop_front().expect("one cabin per link per service")
            };
            let eta = decision.eta[m];
            let queue_before = queues[m].len() as u64;
            let out = service_station(occupancy, &mut queues[m], eta, sigmas[m], gamma, &mut deboard_rng[m]);
            for &id in &out.boarded {
                passengers[id].board_time = Some(t);
            }
            exits[m] = u64::from(out.leavers);
            boards[m] = out.boarded.len() as u64;
            services.push(BoardingOutcome {
                station: m,
                service,
                time: t,
                occupancy_before: occupancy,
                leavers: out.leavers,
                eta_applied: eta,
                capacity: out.capacity,
                queue_before,
                boarded: out.boarded.len() as u32,
                queue_after: queues[m].len() as u64,
            });
            if m + 1 < n {
                links[m].push_back(out.occupancy_after);
            }
        }
        if let Some(s) = sigma_est.as_mut() {
            s.observe(&exits, &boards, u64::from(entering))?;
        }
        intervals.push(IntervalRecord {
            service,
            time: t,
            eta: decision.eta,
            lambda_hat: state.lambda_hat,
            lambda_in,
            sigma_hat: state.sigma_hat,
        });
    }

    Ok(SimTrace {
        n_stations: n,
        beta: config.beta,
        gamma,
        horizon: params.horizon,
        seed: params.seed,
        passengers,
        services,
        intervals,
    })
}
