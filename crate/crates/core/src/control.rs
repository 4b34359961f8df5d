//! Boarding-limit controllers.
//!
//! [`gamora`] splits the line into blocks whose last station is the
//! bottleneck of the block, then [`gamora_block`] searches, station by
//! station, the smallest boarding cap that still lets each station keep up
//! with its share of the block threshold. The two baselines (no control and a
//! fixed reservation) sit behind the same [`decide`] entry point.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BlockPartition, ControlDecision, LineConfig};
use crate::scalar::Scalar;
use crate::stability::{capacity, demand, stability, Rate, StabilityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("no demand: every effective arrival rate is zero")]
    NoDemand,
    #[error("input vectors have mismatched lengths")]
    Shape,
    #[error("effective arrival rates must be finite and >= 0")]
    NegativeRate,
    #[error("static eta must have one entry per station, each in [1, {gamma}]")]
    StaticEta { gamma: u32 },
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

/// Inputs of one Gamora evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput<T> {
    /// Expected occupancy of cabins arriving at station 1.
    pub r0: T,
    /// Effective arrival rate per station, usually from [`feedback_input`].
    pub lambda_in: Vec<T>,
    pub sigma: Vec<T>,
    pub beta: T,
    pub gamma: u32,
}

/// Which controller sets the boarding caps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerPolicy {
    NoControl,
    Static(Vec<u32>),
    Gamora,
}

impl ControllerPolicy {
    /// Static policy that keeps `seats` seats free at station 1.
    pub fn reserve_at_first(seats: u32, n_stations: usize, gamma: u32) -> Self {
        let mut eta = vec![gamma; n_stations];
        eta[0] = gamma.saturating_sub(seats).max(1);
        ControllerPolicy::Static(eta)
    }

    pub fn label(&self) -> String {
        match self {
            ControllerPolicy::NoControl => "none".to_string(),
            ControllerPolicy::Gamora => "gamora".to_string(),
            ControllerPolicy::Static(eta) => {
                let list: Vec<String> = eta.iter().map(u32::to_string).collect();
                format!("static:{}", list.join(","))
            }
        }
    }

    pub fn check(&self, n_stations: usize, gamma: u32) -> Result<(), ControlError> {
        if let ControllerPolicy::Static(eta) = self {
            if eta.len() != n_stations || eta.iter().any(|&e| e < 1 || e > gamma) {
                return Err(ControlError::StaticEta { gamma });
            }
        }
        Ok(())
    }
}

/// Effective demand `Q_m / beta + lambda_m`: backlog is served as if it were
/// extra arrival rate.
pub fn feedback_input<T: Scalar>(queue_lengths: &[u64], beta: &T, lambda_hat: &[T]) -> Vec<T> {
    queue_lengths
        .iter()
        .zip(lambda_hat)
        .map(|(&q, l)| T::from_f64(q as f64) / beta.clone() + l.clone())
        .collect()
}

/// Boarding caps for one block whose bottleneck threshold is `lambda_star`.
///
/// Each station starts at one boarding per service and is raised until its
/// expected capacity covers its expected demand at `lambda_star`, or it
/// reaches `gamma`.
pub fn gamora_block<T: Scalar>(
    r_in: &T,
    nu: &[T],
    sigma: &[T],
    beta: &T,
    gamma: u32,
    lambda_star: &T,
) -> Result<Vec<u32>, ControlError> {
    let rate = Rate::Finite(lambda_star.clone());
    let mut eta = vec![gamma; nu.len()];
    for m in 0..nu.len() {
        let need = match demand(&nu[m], &rate, beta) {
            Rate::Finite(d) => d,
            Rate::Infinite => unreachable!("finite threshold"),
        };
        eta[m] = 1;
        let mut cap = capacity(r_in, nu, sigma, beta, gamma, &rate, &eta)?;
        while cap.capacities[m].approx_lt(&need) && eta[m] < gamma {
            eta[m] += 1;
            cap = capacity(r_in, nu, sigma, beta, gamma, &rate, &eta)?;
        }
    }
    Ok(eta)
}

/// Block partition plus per-block boarding caps for the whole line.
pub fn gamora<T: Scalar>(input: &ControlInput<T>) -> Result<ControlDecision<T>, ControlError> {
    let n = input.lambda_in.len();
    if n == 0 || input.sigma.len() != n {
        return Err(ControlError::Shape);
    }
    let zero = T::zero();
    if input.lambda_in.iter().any(|l| *l < zero || l.to_f64().is_nan()) {
        return Err(ControlError::NegativeRate);
    }
    let total = input
        .lambda_in
        .iter()
        .fold(T::zero(), |acc, l| acc + l.clone());
    if total.is_zero() {
        return Err(ControlError::NoDemand);
    }
    let nu: Vec<T> = input
        .lambda_in
        .iter()
        .map(|l| l.clone() / total.clone())
        .collect();
    let gamma_t = T::from_u32(input.gamma);
    let entry_occupancy = |first: bool| {
        if first {
            input.r0.clone()
        } else {
            gamma_t.clone()
        }
    };

    let mut bounds = vec![0usize];
    let mut thresholds = Vec::new();
    let mut k = 0;
    while k < n {
        let suffix = stability(
            &entry_occupancy(k == 0),
            &nu[k..],
            &input.sigma[k..],
            &input.beta,
            input.gamma,
        )?;
        let (offset, min) = suffix.argmin();
        thresholds.push(min);
        bounds.push(k + offset + 1);
        k += offset + 1;
    }
    let blocks = BlockPartition { bounds };

    let mut eta = vec![input.gamma; n];
    for (i, range) in blocks.ranges().enumerate() {
        let lambda_star = match &thresholds[i] {
            Rate::Finite(x) => x,
            Rate::Infinite => continue,
        };
        let block_eta = gamora_block(
            &entry_occupancy(i == 0),
            &nu[range.clone()],
            &input.sigma[range.clone()],
            &input.beta,
            input.gamma,
            lambda_star,
        )?;
        eta[range].copy_from_slice(&block_eta);
    }
    Ok(ControlDecision {
        eta,
        blocks,
        thresholds,
    })
}

/// What a controller can see at a decision instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedState {
    pub queues: Vec<u64>,
    pub lambda_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub r0_hat: f64,
}

/// Boarding caps for the next service under `policy`.
///
/// Gamora falls back to no control, with a logged warning, when there is no
/// demand at all or its input is rejected.
pub fn decide(
    policy: &ControllerPolicy,
    state: &ObservedState,
    config: &LineConfig,
) -> ControlDecision<f64> {
    match policy {
        ControllerPolicy::Gamora => {
            let lambda_in = feedback_input(&state.queues, &config.beta, &state.lambda_hat);
            decide_from_input(policy, lambda_in, state, config)
        }
        _ => decide_from_input(policy, Vec::new(), state, config),
    }
}

/// Like [`decide`], with the effective demand already formed (for example
/// smoothed by [`crate::estimators::RateEstimator`]).
pub fn decide_from_input(
    policy: &ControllerPolicy,
    lambda_in: Vec<f64>,
    state: &ObservedState,
    config: &LineConfig,
) -> ControlDecision<f64> {
    let n = config.n_stations();
    match policy {
        ControllerPolicy::NoControl => ControlDecision::unrestricted(n, config.gamma),
        ControllerPolicy::Static(eta) => ControlDecision {
            eta: eta.clone(),
            ..ControlDecision::unrestricted(n, config.gamma)
        },
        ControllerPolicy::Gamora => {
            let input = ControlInput {
                r0: state.r0_hat,
                lambda_in,
                sigma: state.sigma_hat.clone(),
                beta: config.beta,
                gamma: config.gamma,
            };
            match gamora(&input) {
                Ok(d) => d,
                Err(ControlError::NoDemand) => {
                    warn!("no demand on the line; leaving boarding unrestricted");
                    ControlDecision::unrestricted(n, config.gamma)
                }
                Err(e) => {
                    warn!("controller input rejected ({e}); leaving boarding unrestricted");
                    ControlDecision::unrestricted(n, config.gamma)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;
    use num_rational::BigRational;

    fn four_station_input(scale: f64) -> ControlInput<f64> {
        ControlInput {
            r0: 0.0,
            lambda_in: vec![0.5 * scale, 0.2 * scale, 0.3 * scale, 0.0],
            sigma: vec![0.0, 0.04, 0.46, 1.0],
            beta: 10.0,
            gamma: 8,
        }
    }

    #[test]
    fn feedback_adds_backlog_rate() {
        let out: Vec<f64> = feedback_input(&[5, 2], &10.0, &[0.3, 0.1]);
        assert!((out[0] - 0.8).abs() < 1e-12 && (out[1] - 0.3).abs() < 1e-12);
        assert_eq!(feedback_input(&[0, 0], &10.0, &[0.3, 0.1]), vec![0.3, 0.1]);
        assert_eq!(feedback_input(&[4, 7], &10.0, &[0.0, 0.0]), vec![0.4, 0.7]);
    }

    #[test]
    fn four_station_decision() {
        let d = gamora(&four_station_input(1.0)).unwrap();
        assert_eq!(d.eta, vec![6, 3, 4, 8]);
        assert_eq!(d.blocks.bounds, vec![0, 2, 3, 4]);
        let t: Vec<f64> = d.thresholds.iter().map(Rate::to_f64).collect();
        assert!((t[0] - 8.0 / 6.8).abs() < 1e-12);
        assert!((t[1] - 3.68 / 3.0).abs() < 1e-12);
        assert!(t[2].is_infinite());
    }

    #[test]
    fn four_station_decision_exact() {
        let input = ControlInput {
            r0: ratio(0, 1),
            lambda_in: vec![ratio(5, 1), ratio(2, 1), ratio(3, 1), ratio(0, 1)],
            sigma: vec![ratio(0, 1), ratio(1, 25), ratio(23, 50), ratio(1, 1)],
            beta: ratio(10, 1),
            gamma: 8,
        };
        let d: ControlDecision<BigRational> = gamora(&input).unwrap();
        assert_eq!(d.eta, vec![6, 3, 4, 8]);
        assert_eq!(d.thresholds[1], Rate::Finite(ratio(92, 75)));
    }

    #[test]
    fn scaling_demand_does_not_change_decision() {
        let base = gamora(&four_station_input(1.0)).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let d = gamora(&four_station_input(c)).unwrap();
            assert_eq!(d.eta, base.eta);
            assert_eq!(d.blocks, base.blocks);
        }
    }

    #[test]
    fn block_search_two_stations() {
        let eta = gamora_block(&0.0, &[0.5, 0.2], &[0.0, 0.04], &10.0, 8, &(8.0 / 6.8)).unwrap();
        assert_eq!(eta, vec![6, 3]);
    }

    #[test]
    fn block_search_full_cabin_station() {
        for (s, v) in [(0.3, 0.2), (0.46, 0.3), (0.9, 1.0), (0.05, 0.5)] {
            let lambda = (8.0 - 8.0 * (1.0 - s)) / (v * 10.0);
            let eta = gamora_block(&8.0, &[v], &[s], &10.0, 8, &lambda).unwrap();
            assert_eq!(eta, vec![(8.0 * s - 1e-9_f64).ceil() as u32], "sigma {s}");
        }
    }

    #[test]
    fn block_search_zero_share_station() {
        let eta = gamora_block(&0.0, &[0.0, 1.0], &[0.0, 0.2], &10.0, 8, &0.5).unwrap();
        assert_eq!(eta[0], 1);
    }

    #[test]
    fn single_station_line() {
        for l in [0.01, 0.5, 7.0] {
            let d = gamora(&ControlInput {
                r0: 0.0,
                lambda_in: vec![l],
                sigma: vec![0.3],
                beta: 10.0,
                gamma: 8,
            })
            .unwrap();
            assert_eq!(d.eta, vec![8]);
            assert_eq!(d.blocks.bounds, vec![0, 1]);
        }
    }

    #[test]
    fn demand_only_at_first_station() {
        let d = gamora(&ControlInput {
            r0: 0.0,
            lambda_in: vec![1.0, 0.0, 0.0, 0.0],
            sigma: vec![0.0, 0.0, 0.0, 1.0],
            beta: 10.0,
            gamma: 8,
        })
        .unwrap();
        assert_eq!(d.eta, vec![8, 8, 8, 8]);
        assert_eq!(d.blocks.bounds[1], 1);
    }

    #[test]
    fn no_demand_is_an_error() {
        let mut input = four_station_input(1.0);
        input.lambda_in = vec![0.0; 4];
        assert_eq!(gamora(&input), Err(ControlError::NoDemand));
    }

    fn observed(queues: Vec<u64>, lambda: Vec<f64>) -> ObservedState {
        ObservedState {
            queues,
            lambda_hat: lambda,
            sigma_hat: vec![0.0, 0.04, 0.46, 1.0],
            r0_hat: 0.0,
        }
    }

    #[test]
    fn decide_dispatches_each_policy() {
        let config = LineConfig::new(10.0, 8, &[0.0, 0.04, 0.46, 1.0], 0.0);
        let state = observed(vec![0; 4], vec![0.5, 0.2, 0.3, 0.0]);
        assert_eq!(decide(&ControllerPolicy::NoControl, &state, &config).eta, vec![8; 4]);
        let reserve = ControllerPolicy::reserve_at_first(2, 4, 8);
        assert_eq!(reserve, ControllerPolicy::Static(vec![6, 8, 8, 8]));
        assert_eq!(decide(&reserve, &state, &config).eta, vec![6, 8, 8, 8]);
        assert_eq!(decide(&ControllerPolicy::Gamora, &state, &config).eta, vec![6, 3, 4, 8]);
        let empty = observed(vec![0; 4], vec![0.0; 4]);
        assert_eq!(decide(&ControllerPolicy::Gamora, &empty, &config).eta, vec![8; 4]);
    }

    #[test]
    fn static_policy_check() {
        assert!(ControllerPolicy::Static(vec![6, 8]).check(2, 8).is_ok());
        assert!(ControllerPolicy::Static(vec![0, 8]).check(2, 8).is_err());
        assert!(ControllerPolicy::Static(vec![6]).check(2, 8).is_err());
        assert_eq!(ControllerPolicy::Static(vec![6, 8]).label(), "static:6,8");
    }
}
