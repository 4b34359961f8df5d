//! Online estimates of arrival rates and leaving probabilities from
//! station-level counters.
//!
//! Both estimators are fed once per service interval and only see counts up
//! to the current instant.

use std::collections::VecDeque;

use thiserror::Error;

use crate::control::feedback_input;

/// Prior used for every leaving probability until data arrives.
pub const DEFAULT_SIGMA_PRIOR: f64 = 0.5;
pub const DEFAULT_LAMBDA_WINDOW_S: f64 = 1200.0;
pub const DEFAULT_SIGMA_WINDOW_S: f64 = 240.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("window of {window} s is not a positive multiple of beta = {beta} s")]
    Window { window: f64, beta: f64 },
    #[error("expected {expected} station counts, got {got}")]
    Shape { expected: usize, got: usize },
}

fn window_intervals(window: f64, beta: f64) -> Result<usize, EstimatorError> {
    let n = window / beta;
    let rounded = n.round();
    if !(rounded >= 1.0) || (n - rounded).abs() > 1e-9 * n.max(1.0) {
        return Err(EstimatorError::Window { window, beta });
    }
    Ok(rounded as usize)
}

/// Output of one [`RateEstimator::observe`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    /// Arrivals in the last interval divided by beta.
    pub instantaneous: Vec<f64>,
    /// Moving average of `Q/beta + lambda_hat` over the trailing window.
    pub smoothed_input: Vec<f64>,
}

/// Per-interval arrival counts turned into the controller's effective demand.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    beta: f64,
    window: usize,
    n_stations: usize,
    history: VecDeque<Vec<f64>>,
}

impl RateEstimator {
    pub fn new(n_stations: usize, beta: f64, window_s: f64) -> Result<Self, EstimatorError> {
        let window = window_intervals(window_s, beta)?;
        Ok(RateEstimator {
            beta,
            window,
            n_stations,
            history: VecDeque::with_capacity(window + 1),
        })
    }

    pub fn window_intervals(&self) -> usize {
        self.window
    }

    /// Feeds the arrivals counted over the last interval and the current queues.
    pub fn observe(
        &mut self,
        counts: &[u64],
        queues: &[u64],
    ) -> Result<LambdaEstimate, EstimatorError> {
        let n = self.n_stations;
        for len in [counts.len(), queues.len()] {
            if len != n {
                return Err(EstimatorError::Shape { expected: n, got: len });
            }
        }
        let instantaneous: Vec<f64> = counts.iter().map(|&c| c as f64 / self.beta).collect();
        self.history
            .push_back(feedback_input(queues, &self.beta, &instantaneous));
        if self.history.len() > self.window {
            self.history.pop_front();
        }
        let len = self.history.len() as f64;
        let smoothed_input = (0..n)
            .map(|m| self.history.iter().map(|row| row[m]).sum::<f64>() / len)
            .collect();
        Ok(LambdaEstimate {
            instantaneous,
            smoothed_input,
        })
    }
}

/// Ratio of exits to aligned entries, clamped to `[0, 1]`; holds `previous`
/// when no entries were seen.
pub fn sigma_ratio(exits: u64, entries: u64, previous: f64) -> f64 {
    if entries == 0 {
        previous
    } else {
        (exits as f64 / entries as f64).clamp(0.0, 1.0)
    }
}

/// Leaving-probability estimates from station exit and entry counters.
///
/// For station m the exits over the trailing window are divided by the riders
/// that entered upstream (boarders at stations before m, plus riders already
/// aboard at station 1), each counter shifted by its travel lag to m.
#[derive(Debug, Clone)]
pub struct SigmaEstimator {
    window: usize,
    /// Service-count lag from station 1 to each station.
    offset: Vec<usize>,
    exits: Vec<VecDeque<u64>>,
    entries: Vec<VecDeque<u64>>,
    carried_in: VecDeque<u64>,
    capacity: usize,
    estimate: Vec<f64>,
}

impl SigmaEstimator {
    /// `link_lags[l]` is the number of service intervals between station
    /// `l+1` and `l+2`.
    pub fn new(
        link_lags: &[usize],
        beta: f64,
        window_s: f64,
        prior: f64,
    ) -> Result<Self, EstimatorError> {
        let window = window_intervals(window_s, beta)?;
        let n = link_lags.len() + 1;
        let mut offset = vec![0usize; n];
        for l in 0..link_lags.len() {
            offset[l + 1] = offset[l] + link_lags[l];
        }
        let capacity = window + offset[n - 1] + 1;
        Ok(SigmaEstimator {
            window,
            offset,
            exits: vec![VecDeque::with_capacity(capacity); n],
            entries: vec![VecDeque::with_capacity(capacity); n],
            carried_in: VecDeque::with_capacity(capacity),
            capacity,
            estimate: vec![prior.clamp(0.0, 1.0); n],
        })
    }

    pub fn current(&self) -> &[f64] {
        &self.estimate
    }

    /// Records the counters of one service instant: riders leaving and
    /// boarding at each station, and riders already aboard when the cabin
    /// reached station 1.
    pub fn observe(
        &mut self,
        exits: &[u64],
        boardings: &[u64],
        carried_in: u64,
    ) -> Result<&[f64], EstimatorError> {
        let n = self.exits.len();
        for len in [exits.len(), boardings.len()] {
            if len != n {
                return Err(EstimatorError::Shape { expected: n, got: len });
            }
        }
        for m in 0..n {
            push_bounded(&mut self.exits[m], exits[m], self.capacity);
            push_bounded(&mut self.entries[m], boardings[m], self.capacity);
        }
        push_bounded(&mut self.carried_in, carried_in, self.capacity);

        for m in 0..n {
            let out = window_sum(&self.exits[m], 0, self.window);
            let mut inflow = window_sum(&self.carried_in, self.offset[m], self.window);
            for j in 0..m {
                inflow += window_sum(&self.entries[j], self.offset[m] - self.offset[j], self.window);
            }
            self.estimate[m] = sigma_ratio(out, inflow, self.estimate[m]);
        }
        Ok(&self.estimate)
    }
}

fn push_bounded(buf: &mut VecDeque<u64>, value: u64, capacity: usize) {
    if buf.len() == capacity {
        buf.pop_front();
    }
    buf.push_back(value);
}

/// Sum of `window` samples ending `lag` samples before the newest one.
fn window_sum(buf: &VecDeque<u64>, lag: usize, window: usize) -> u64 {
    buf.iter().rev().skip(lag).take(window).sum()
}
