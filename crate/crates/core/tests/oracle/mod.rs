//! Independent transcription of the block partition and the per-station
//! search in exact arithmetic: thresholds from the closed form with explicit
//! products, capacities from the occupancy sum, strict comparisons.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

fn survive(sigma: &[BigRational], from: usize, to: usize) -> BigRational {
    (from..to).fold(BigRational::one(), |acc, i| acc * (BigRational::one() - &sigma[i]))
}

pub fn threshold(r_in: &BigRational, nu: &[BigRational], sigma: &[BigRational], beta: &BigRational, gamma: u32, m: usize) -> Option<BigRational> {
    let g = BigRational::from_integer(BigInt::from(gamma));
    let num = g - r_in * survive(sigma, 0, m + 1);
    let den = (0..=m).fold(BigRational::zero(), |acc, j| acc + &nu[j] * beta * survive(sigma, j + 1, m + 1));
    (!den.is_zero()).then(|| num / den)
}

fn capacities(r_in: &BigRational, nu: &[BigRational], sigma: &[BigRational], beta: &BigRational, gamma: u32, lambda: &BigRational, eta: &[u32]) -> Vec<BigRational> {
    let g = BigRational::from_integer(BigInt::from(gamma));
    let mut boarded: Vec<BigRational> = Vec::new();
    let mut caps = Vec::new();
    for m in 0..nu.len() {
        let mut occupancy = r_in * survive(sigma, 0, m + 1);
        for (j, t) in boarded.iter().enumerate() {
            occupancy += t * survive(sigma, j + 1, m + 1);
        }
        let mut free = &g - occupancy;
        if free.is_negative() {
            free = BigRational::zero();
        }
        let e = BigRational::from_integer(BigInt::from(eta[m]));
        let cap = if e < free { e } else { free };
        let want = &nu[m] * lambda * beta;
        boarded.push(if want < cap { want } else { cap.clone() });
        caps.push(cap);
    }
    caps
}

fn block_eta(r_in: &BigRational, nu: &[BigRational], sigma: &[BigRational], beta: &BigRational, gamma: u32, lambda: &BigRational) -> Vec<u32> {
    let mut eta = vec![gamma; nu.len()];
    for m in 0..nu.len() {
        eta[m] = 1;
        while capacities(r_in, nu, sigma, beta, gamma, lambda, &eta)[m] < &nu[m] * lambda * beta && eta[m] < gamma {
            eta[m] += 1;
        }
    }
    eta
}

/// (eta, bounds, block thresholds with `None` for unbounded).
pub fn run(r0: &BigRational, lambda_in: &[BigRational], sigma: &[BigRational], beta: &BigRational, gamma: u32) -> (Vec<u32>, Vec<usize>, Vec<Option<BigRational>>) {
    let total = lambda_in.iter().fold(BigRational::zero(), |a, l| a + l);
    let nu: Vec<BigRational> = lambda_in.iter().map(|l| l / &total).collect();
    let n = nu.len();
    let g = BigRational::from_integer(BigInt::from(gamma));
    let mut bounds = vec![0];
    let mut ths = Vec::new();
    let mut k = 0;
    while k < n {
        let r_in = if k == 0 { r0.clone() } else { g.clone() };
        let mut best = k;
        let mut best_th = threshold(&r_in, &nu[k..], &sigma[k..], beta, gamma, 0);
        for m in k + 1..n {
            let th = threshold(&r_in, &nu[k..], &sigma[k..], beta, gamma, m - k);
            let smaller = match (&th, &best_th) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if smaller {
                best = m;
                best_th = th;
            }
        }
        ths.push(best_th);
        bounds.push(best + 1);
        k = best + 1;
    }
    let mut eta = vec![gamma; n];
    for i in 0..ths.len() {
        let (a, b) = (bounds[i], bounds[i + 1]);
        if let Some(l) = &ths[i] {
            let r_in = if i == 0 { r0.clone() } else { g.clone() };
            eta[a..b].copy_from_slice(&block_eta(&r_in, &nu[a..b], &sigma[a..b], beta, gamma, l));
        }
    }
    (eta, bounds, ths)
}
