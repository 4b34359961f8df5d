//! Scaled stability thresholds and the expected capacity recursion.
//!
//! For a suffix of the line entered by cabins carrying `r_in` riders, the
//! threshold of station `m` is
//!
//! ```text
//!            gamma - r_in * prod_{i<=m} (1 - sigma_i)
//! λ*[m] = ------------------------------------------------------
//!          sum_{j<=m} nu_j * beta * prod_{j<i<=m} (1 - sigma_i)
//! ```
//!
//! the smallest total arrival rate that makes station `m` unstable. Only the
//! smallest entry is exact; the others are used for ordering when the line is
//! split into blocks.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// A rate in passengers per second that may be unbounded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rate<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Rate<T> {
    pub fn to_f64(&self) -> f64 {
        match self {
            Rate::Finite(x) => x.to_f64(),
            Rate::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<&T> {
        match self {
            Rate::Finite(x) => Some(x),
            Rate::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Rate::Infinite)
    }
}

impl<T: PartialOrd> PartialOrd for Rate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Rate::Finite(a), Rate::Finite(b)) => a.partial_cmp(b),
            (Rate::Finite(_), Rate::Infinite) => Some(Ordering::Less),
            (Rate::Infinite, Rate::Finite(_)) => Some(Ordering::Greater),
            (Rate::Infinite, Rate::Infinite) => Some(Ordering::Equal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("vectors must be non-empty and of equal length (nu {nu}, sigma {sigma}, eta {eta})")]
    Shape { nu: usize, sigma: usize, eta: usize },
    #[error("station {0}: sigma out of [0,1]")]
    Sigma(usize),
    #[error("station {0}: nu must be >= 0")]
    Nu(usize),
    #[error("station {station}: eta must be in [1, {gamma}]")]
    Eta { station: usize, gamma: u32 },
    #[error("r_in must lie in [0, gamma]")]
    Occupancy,
    #[error("beta must be > 0")]
    Beta,
    #[error("lambda_total must be >= 0")]
    Lambda,
    #[error("station {0}: negative threshold numerator")]
    NegativeNumerator(usize),
}

/// Per-station scaled stability thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector<T> {
    pub values: Vec<Rate<T>>,
    /// 0-based stations whose numerator vanished with a positive denominator
    /// (cabins arrive permanently full); their threshold is zero.
    pub degenerate: Vec<usize>,
}

impl<T: Scalar> ThresholdVector<T> {
    /// Smallest threshold and its 0-based index; ties, within the scalar's
    /// relative tolerance, go to the smallest index.
    pub fn argmin(&self) -> (usize, Rate<T>) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate().skip(1) {
            let smaller = match (v, &self.values[best]) {
                (Rate::Finite(a), Rate::Finite(b)) => a.approx_lt(b),
                (Rate::Finite(_), Rate::Infinite) => true,
                (Rate::Infinite, _) => false,
            };
            if smaller {
                best = i;
            }
        }
        (best, self.values[best].clone())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(Rate::to_f64).collect()
    }
}

/// Expected capacity and boardings per station for one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityVector<T> {
    pub capacities: Vec<T>,
    pub boardings: Vec<T>,
    /// 0-based stations whose residual capacity went negative and was clamped to 0.
    pub clamped: Vec<usize>,
}

fn check_common<T: Scalar>(
    r_in: &T,
    nu: &[T],
    sigma: &[T],
    beta: &T,
    gamma: u32,
) -> Result<(), StabilityError> {
    if nu.is_empty() || nu.len() != sigma.len() {
        return Err(StabilityError::Shape {
            nu: nu.len(),
            sigma: sigma.len(),
            eta: nu.len(),
        });
    }
    let (zero, one) = (T::zero(), T::one());
    if let Some(i) = sigma.iter().position(|s| *s < zero || *s > one) {
        return Err(StabilityError::Sigma(i + 1));
    }
    if let Some(i) = nu.iter().position(|v| *v < zero) {
        return Err(StabilityError::Nu(i + 1));
    }
    if *r_in < zero || *r_in > T::from_u32(gamma) {
        return Err(StabilityError::Occupancy);
    }
    if *beta <= zero {
        return Err(StabilityError::Beta);
    }
    Ok(())
}

/// Scaled stability threshold of every station of a line suffix.
///
/// A zero denominator yields [`Rate::Infinite`]; a zero numerator with a
/// positive denominator yields zero and is listed in `degenerate`.
pub fn stability<T: Scalar>(
    r_in: &T,
    nu: &[T],
    sigma: &[T],
    beta: &T,
    gamma: u32,
) -> Result<ThresholdVector<T>, StabilityError> {
    check_common(r_in, nu, sigma, beta, gamma)?;
    let gamma_t = T::from_u32(gamma);
    let mut survive = T::one();
    let mut denom = T::zero();
    let mut values = Vec::with_capacity(nu.len());
    let mut degenerate = Vec::new();
    for (m, (v, s)) in nu.iter().zip(sigma).enumerate() {
        let stay = T::one() - s.clone();
        survive = survive * stay.clone();
        denom = denom * stay + v.clone() * beta.clone();
        let numer = gamma_t.clone() - r_in.clone() * survive.clone();
        if denom.is_zero() {
            values.push(Rate::Infinite);
        } else if numer.is_negative() {
            return Err(StabilityError::NegativeNumerator(m + 1));
        } else {
            if numer.is_zero() {
                degenerate.push(m);
            }
            values.push(Rate::Finite(numer / denom.clone()));
        }
    }
    Ok(ThresholdVector { values, degenerate })
}

/// Expected demand `nu * lambda * beta` of one service, with `0 * inf = 0`.
pub fn demand<T: Scalar>(nu: &T, lambda_total: &Rate<T>, beta: &T) -> Rate<T> {
    match lambda_total {
        Rate::Finite(l) => Rate::Finite(nu.clone() * l.clone() * beta.clone()),
        Rate::Infinite if nu.is_zero() => Rate::Finite(T::zero()),
        Rate::Infinite => Rate::Infinite,
    }
}

/// Expected capacity `E[C_m]` and boardings `E[T_m]`, first station to last,
/// with boarding caps `eta` and total arrival rate `lambda_total`.
pub fn capacity<T: Scalar>(
    r_in: &T,
    nu: &[T],
    sigma: &[T],
    beta: &T,
    gamma: u32,
    lambda_total: &Rate<T>,
    eta: &[u32],
) -> Result<CapacityVector<T>, StabilityError> {
    check_common(r_in, nu, sigma, beta, gamma)?;
    if eta.len() != nu.len() {
        return Err(StabilityError::Shape {
            nu: nu.len(),
            sigma: sigma.len(),
            eta: eta.len(),
        });
    }
    if let Some(i) = eta.iter().position(|&e| e < 1 || e > gamma) {
        return Err(StabilityError::Eta {
            station: i + 1,
            gamma,
        });
    }
    if let Rate::Finite(l) = lambda_total {
        if l.is_negative() {
            return Err(StabilityError::Lambda);
        }
    }
    let gamma_t = T::from_u32(gamma);
    let n = nu.len();
    let mut capacities = Vec::with_capacity(n);
    let mut boardings = Vec::with_capacity(n);
    let mut clamped = Vec::new();
    // expected riders still aboard after de-boarding at the current station
    let mut aboard = r_in.clone();
    for m in 0..n {
        aboard = aboard * (T::one() - sigma[m].clone());
        let mut residual = gamma_t.clone() - aboard.clone();
        if residual.is_negative() {
            clamped.push(m);
            residual = T::zero();
        }
        let cap = T::min_of(T::from_u32(eta[m]), residual);
        let boarded = match demand(&nu[m], lambda_total, beta) {
            Rate::Finite(d) => T::min_of(d, cap.clone()),
            Rate::Infinite => cap.clone(),
        };
        aboard = aboard + boarded.clone();
        capacities.push(cap);
        boardings.push(boarded);
    }
    Ok(CapacityVector {
        capacities,
        boardings,
        clamped,
    })
}
