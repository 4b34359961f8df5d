//! Per-run summary measures used by experiments and validation.

use crate::sim::SimTrace;
use crate::stats::run_bins;

/// Least-squares slope of `(x, y)` points; zero for fewer than two distinct x.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// Queue length after each service at `station`, from time `from` on.
pub fn queue_series(trace: &SimTrace, station: usize, from: f64) -> Vec<(f64, f64)> {
    trace
        .station_services(station)
        .filter(|s| s.time >= from)
        .map(|s| (s.time, s.queue_after as f64))
        .collect()
}

/// Queue growth in passengers per second over `[from, horizon]`.
pub fn queue_slope(trace: &SimTrace, station: usize, from: f64) -> f64 {
    ls_slope(&queue_series(trace, station, from))
}

/// Mean wait of passengers boarding at `station` during `[from, to)`.
pub fn mean_wait_boarded(trace: &SimTrace, station: usize, from: f64, to: f64) -> Option<f64> {
    let (sum, n) = trace
        .station_passengers(station)
        .filter_map(|p| p.board_time.filter(|b| *b >= from && *b < to).map(|b| b - p.arrival_time))
        .fold((0.0, 0usize), |(s, n), w| (s + w, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Little's-law quantities of one station over `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LittleCheck {
    /// Time-average number of waiting passengers.
    pub mean_queue: f64,
    /// Arrivals per second.
    pub arrival_rate: f64,
    /// Mean wait of passengers arriving in the window (boarded ones only).
    pub mean_wait: f64,
}

impl LittleCheck {
    /// `|L - lambda W| / L`.
    pub fn relative_error(&self) -> f64 {
        (self.mean_queue - self.arrival_rate * self.mean_wait).abs() / self.mean_queue
    }
}

pub fn little_check(trace: &SimTrace, station: usize, from: f64, to: f64) -> Option<LittleCheck> {
    let mut area = 0.0;
    let (mut arrived, mut wait_sum, mut waited) = (0usize, 0.0, 0usize);
    for p in trace.station_passengers(station) {
        let leave = p.board_time.unwrap_or(to);
        let overlap = leave.min(to) - p.arrival_time.max(from);
        if overlap > 0.0 {
            area += overlap;
        }
        if p.arrival_time >= from && p.arrival_time < to {
            arrived += 1;
            if let Some(w) = p.wait() {
                wait_sum += w;
                waited += 1;
            }
        }
    }
    (waited > 0 && area > 0.0).then(|| LittleCheck {
        mean_queue: area / (to - from),
        arrival_rate: arrived as f64 / (to - from),
        mean_wait: wait_sum / waited as f64,
    })
}

/// Time-averaged wait per station: the mean, over bins inside `[from, to)`
/// with at least one boarding, of the per-bin mean wait.
pub fn time_averaged_waits(trace: &SimTrace, bin_width: f64, from: f64, to: f64) -> Vec<Option<f64>> {
    (0..trace.n_stations)
        .map(|m| {
            let bins = run_bins(trace, m, bin_width);
            let vals: Vec<f64> = bins
                .waits
                .iter()
                .enumerate()
                .filter(|(i, _)| {
                    let start = *i as f64 * bin_width;
                    start >= from && start < to
                })
                .filter_map(|(_, w)| *w)
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// `max - min` over stations that have a waiting time; `None` when none do.
pub fn imbalance(waits: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = waits.iter().flatten().copied().collect();
    if vals.is_empty() {
        return None;
    }
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        assert!((ls_slope(&pts) - 3.0).abs() < 1e-12);
        assert_eq!(ls_slope(&[(1.0, 2.0)]), 0.0);
        assert_eq!(ls_slope(&[(1.0, 2.0), (1.0, 5.0)]), 0.0);
    }

    #[test]
    fn imbalance_rules() {
        assert_eq!(imbalance(&[Some(10.0), Some(4.0), None]), Some(6.0));
        assert_eq!(imbalance(&[Some(3.0)]), Some(0.0));
        assert_eq!(imbalance(&[None, None]), None);
    }
}
