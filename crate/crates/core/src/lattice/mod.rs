//! The smooth-number decomposition for i.i.d. sequences with arbitrary `k`.
//!
//! Positions `1..N` split into orbits `a·r₁^{d₁}⋯r_m^{d_m}` with `a` coprime
//! to the primes `r_i ≤ k`. The sum over each orbit is independent of the
//! others and its law depends only on the orbit size `l`, so
//! `Q(V) = r Σ_l w(l) ln R_l(V)` with `r` the density of such `a` and
//! `w(l)` the density of orbits of size `l`.

mod chain;
mod partition;
mod series;

pub use chain::{lattice_census, smooth_up_to, ChainGraph, LatticeCensus, LevelCensus};
pub use partition::{
    brute_force_log_moment, chain_partition_function, direct_enumeration, log_partition, ChainMoment, Strategy,
    EXACT_CAP, MC_SAMPLES,
};
pub use series::{
    mdp_coefficients, q_series, rate_function_iid, tail_majorant, IidLogMoment, MdpCoefficients, QSeries,
};

use serde::Serialize;

use crate::error::{invalid, Result};

/// All primes `≤ k` and the factorisation of each `l ≤ k` over them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrimeBasis {
    pub k: usize,
    pub primes: Vec<u64>,
    /// `factor_exponents[l - 1][i] = d_i(l)`.
    pub factor_exponents: Vec<Vec<u32>>,
}

pub fn prime_basis(k: usize) -> Result<PrimeBasis> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut sieve = vec![true; k + 1];
    let mut primes = Vec::new();
    for i in 2..=k {
        if sieve[i] {
            primes.push(i as u64);
            let mut j = i * i;
            while j <= k {
                sieve[j] = false;
                j += i;
            }
        }
    }
    let factor_exponents = (1..=k as u64)
        .map(|l| {
            let mut rest = l;
            primes
                .iter()
                .map(|&p| {
                    let mut d = 0;
                    while rest % p == 0 {
                        rest /= p;
                        d += 1;
                    }
                    d
                })
                .collect()
        })
        .collect();
    Ok(PrimeBasis { k, primes, factor_exponents })
}

impl PrimeBasis {
    pub fn m(&self) -> usize {
        self.primes.len()
    }

    pub fn is_coprime(&self, a: u128) -> bool {
        self.primes.iter().all(|&p| a % p as u128 != 0)
    }

    /// `r = Π (1 − 1/r_i)`.
    pub fn density(&self) -> f64 {
        self.primes.iter().map(|&p| 1.0 - 1.0 / p as f64).product()
    }
}

/// A basis-smooth integer with its exponent vector and logarithm. `exact`
/// is `None` once the value no longer fits in `u128`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothNumber {
    pub exponents: Vec<u32>,
    pub log: f64,
    pub exact: Option<u128>,
}

impl SmoothNumber {
    fn one(m: usize) -> Self {
        Self { exponents: vec![0; m], log: 0.0, exact: Some(1) }
    }

    fn times(&self, i: usize, p: u64) -> Self {
        let mut exponents = self.exponents.clone();
        exponents[i] += 1;
        Self { exponents, log: self.log + (p as f64).ln(), exact: self.exact.and_then(|v| v.checked_mul(p as u128)) }
    }

    fn lt(&self, other: &Self) -> bool {
        match (self.exact, other.exact) {
            (Some(a), Some(b)) => a < b,
            _ => self.log < other.log,
        }
    }

    fn same(&self, other: &Self) -> bool {
        self.exponents == other.exponents
    }

    /// `1 / s` without overflow.
    pub fn reciprocal(&self) -> f64 {
        match self.exact {
            Some(v) => 1.0 / v as f64,
            None => (-self.log).exp(),
        }
    }
}

/// Levels `l = 1..=l_max` of the decomposition: `ρ_min(l) = ln s_l`,
/// `ρ_max(l) = ln s_{l+1}`, `w(l) = 1/s_l − 1/s_{l+1}` and the density `r`.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothLevels {
    pub basis: PrimeBasis,
    /// `s₁ < s₂ < … < s_{l_max+1}` (just `[1]` when the basis is empty).
    pub smooth: Vec<SmoothNumber>,
    pub rho_min: Vec<f64>,
    pub rho_max: Vec<f64>,
    pub weights: Vec<f64>,
    pub density_r: f64,
}

impl SmoothLevels {
    pub fn l_max(&self) -> usize {
        self.weights.len()
    }

    /// `w(l)` for `l ≥ 1`.
    pub fn weight(&self, l: usize) -> f64 {
        self.weights[l - 1]
    }
}

fn merge_smooth(primes: &[u64], count: usize) -> Vec<SmoothNumber> {
    let m = primes.len();
    if m == 1 {
        let p = primes[0];
        return (0..count as u32)
            .map(|e| SmoothNumber {
                exponents: vec![e],
                log: e as f64 * (p as f64).ln(),
                exact: (p as u128).checked_pow(e),
            })
            .collect();
    }
    let mut seq = vec![SmoothNumber::one(m)];
    let mut ptr = vec![0usize; m];
    while seq.len() < count {
        let cands: Vec<SmoothNumber> = (0..m).map(|i| seq[ptr[i]].times(i, primes[i])).collect();
        let mut best = 0;
        for i in 1..m {
            if cands[i].lt(&cands[best]) {
                best = i;
            }
        }
        let next = cands[best].clone();
        for i in 0..m {
            if cands[i].same(&next) {
                ptr[i] += 1;
            }
        }
        seq.push(next);
    }
    seq
}

pub fn smooth_levels(basis: &PrimeBasis, l_max: usize) -> Result<SmoothLevels> {
    if l_max == 0 {
        return Err(invalid("l_max must be at least 1"));
    }
    if basis.m() == 0 {
        return Ok(SmoothLevels {
            basis: basis.clone(),
            smooth: vec![SmoothNumber::one(0)],
            rho_min: vec![0.0],
            rho_max: vec![f64::INFINITY],
            weights: vec![1.0],
            density_r: 1.0,
        });
    }
    let smooth = merge_smooth(&basis.primes, l_max + 1);
    let rho_min = smooth[..l_max].iter().map(|s| s.log).collect();
    let rho_max = smooth[1..].iter().map(|s| s.log).collect();
    let weights = smooth.windows(2).map(|w| w[0].reciprocal() - w[1].reciprocal()).collect();
    Ok(SmoothLevels { basis: basis.clone(), smooth, rho_min, rho_max, weights, density_r: basis.density() })
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bases() {
        let b1 = prime_basis(1).unwrap();
        assert_eq!(b1.m(), 0);
        assert_eq!(prime_basis(10).unwrap().primes, vec![2, 3, 5, 7]);
        let b6 = prime_basis(6).unwrap();
        assert_eq!(b6.factor_exponents[5], vec![1, 1, 0]);
        for k in 1..=30 {
            let b = prime_basis(k).unwrap();
            for (l, d) in b.factor_exponents.iter().enumerate() {
                let prod: u64 = b.primes.iter().zip(d).map(|(p, e)| p.pow(*e)).product();
                assert_eq!(prod, l as u64 + 1);
            }
        }
    }

    #[test]
    fn powers_of_two() {
        let lv = smooth_levels(&prime_basis(2).unwrap(), 50).unwrap();
        for l in 1..=50 {
            assert_relative_eq!(lv.rho_min[l - 1], (l - 1) as f64 * 2f64.ln(), epsilon = 1e-12);
            assert_relative_eq!(lv.weight(l), 0.5f64.powi(l as i32), max_relative = 1e-14);
        }
    }

    #[test]
    fn two_three_smooth() {
        let lv = smooth_levels(&prime_basis(3).unwrap(), 12).unwrap();
        let vals: Vec<u128> = lv.smooth.iter().map(|s| s.exact.unwrap()).collect();
        assert_eq!(&vals[..9], &[1, 2, 3, 4, 6, 8, 9, 12, 16]);
        assert_relative_eq!(lv.rho_min[4], 6f64.ln());
        assert_relative_eq!(lv.rho_max[4], 8f64.ln());
    }

    #[test]
    fn density_k5() {
        assert_relative_eq!(prime_basis(5).unwrap().density(), 4.0 / 15.0, epsilon = 1e-15);
        assert_eq!(prime_basis(1).unwrap().density(), 1.0);
    }

    #[test]
    fn rho_invariants() {
        for k in 2..=10 {
            let lv = smooth_levels(&prime_basis(k).unwrap(), 300).unwrap();
            let m = lv.basis.m() as f64;
            for l in 1..=300 {
                assert!(lv.rho_min[l - 1] < lv.rho_max[l - 1]);
                if l > 1 {
                    assert_eq!(lv.rho_max[l - 2], lv.rho_min[l - 1]);
                }
                assert!(lv.rho_min[l - 1] >= ((l as f64).powf(1.0 / m) - 1.0) * 2f64.ln() - 1e-12);
            }
        }
    }

    #[test]
    fn huge_powers_fall_back_to_logs() {
        let lv = smooth_levels(&prime_basis(2).unwrap(), 1000).unwrap();
        assert!(lv.smooth[200].exact.is_none());
        let total = neumaier_sum(lv.weights.iter().copied());
        assert!((total - (1.0 - lv.smooth[1000].reciprocal())).abs() <= 1e-14);
    }
}
