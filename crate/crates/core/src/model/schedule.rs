use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Time schedule `q₁(n), …, q_ℓ(n)` with `q_j(n) = j n` for `j ≤ k` and
/// integer polynomial tails beyond.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QSchedule {
    pub k: usize,
    pub ell: usize,
    /// Ascending coefficients `[c₀, c₁, …]` of `q_j` for `j = k+1, …, ℓ`.
    pub tails: Vec<Vec<i64>>,
}

impl QSchedule {
    pub fn new(k: usize, ell: usize, tails: Vec<Vec<i64>>) -> Result<Self> {
        if k == 0 || ell < k {
            return Err(invalid(format!("schedule needs 1 <= k <= ell, got k={k}, ell={ell}")));
        }
        if tails.len() != ell - k {
            return Err(invalid(format!("schedule with k={k}, ell={ell} needs {} tail polynomials, got {}", ell - k, tails.len())));
        }
        Ok(Self { k, ell, tails })
    }

    /// Arithmetic progression `q_j(n) = j n`, `j = 1..k`.
    pub fn linear(k: usize) -> Self {
        Self { k, ell: k, tails: Vec::new() }
    }

    /// Evaluates `q_j(n)` for `j` in `1..=ell`.
    pub fn eval(&self, j: usize, n: u64) -> Result<u64> {
        assert!(j >= 1 && j <= self.ell, "schedule index {j} out of range");
        if j <= self.k {
            return (j as u64).checked_mul(n).ok_or(Error::HorizonOverflow { required: j as f64 * n as f64, cap: u64::MAX as f64 });
        }
        let coeffs = &self.tails[j - self.k - 1];
        let n = n as i128;
        let mut acc: i128 = 0;
        for &c in coeffs.iter().rev() {
            acc = acc
                .checked_mul(n)
                .and_then(|a| a.checked_add(c as i128))
                .ok_or(Error::HorizonOverflow { required: f64::INFINITY, cap: u64::MAX as f64 })?;
        }
        u64::try_from(acc).map_err(|_| invalid(format!("q_{j}({n}) = {acc} is not a positive index")))
    }

    /// `(q₁(n), …, q_ℓ(n))`.
    pub fn positions(&self, n: u64) -> Result<Vec<u64>> {
        (1..=self.ell).map(|j| self.eval(j, n)).collect()
    }

    /// Largest index touched up to horizon `n_max`.
    pub fn max_position(&self, n_max: u64) -> Result<u64> {
        let mut best = 0;
        for j in 1..=self.ell {
            best = best.max(self.eval(j, n_max)?);
        }
        Ok(best)
    }

    /// Finite-horizon check of the growth conditions on `[1, n_max]`: every
    /// tail is positive, strictly increasing, with nondecreasing increments,
    /// and dominates the previous schedule entry pointwise.
    pub fn validate_horizon(&self, n_max: u64) -> Result<()> {
        for j in (self.k + 1)..=self.ell {
            let mut prev: Option<u64> = None;
            let mut prev_diff: Option<u64> = None;
            for n in 1..=n_max {
                let q = self.eval(j, n)?;
                if q == 0 {
                    return Err(invalid(format!("q_{j}({n}) = 0; positions start at 1")));
                }
                if q <= self.eval(j - 1, n)? {
                    return Err(invalid(format!("q_{j}({n}) does not exceed q_{}({n})", j - 1)));
                }
                if let Some(p) = prev {
                    if q <= p {
                        return Err(invalid(format!("q_{j} is not strictly increasing at n = {n}")));
                    }
                    let d = q - p;
                    if let Some(pd) = prev_diff {
                        if d < pd {
                            return Err(invalid(format!("q_{j} increments decrease at n = {n}")));
                        }
                    }
                    prev_diff = Some(d);
                }
                prev = Some(q);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_part() {
        let s = QSchedule::new(2, 3, vec![vec![0, 0, 1]]).unwrap();
        assert_eq!(s.positions(7).unwrap(), vec![7, 14, 49]);
    }

    #[test]
    fn squares_pass_from_three() {
        let s = QSchedule::new(1, 2, vec![vec![0, 0, 1]]).unwrap();
        // n² > n fails at n = 1
        assert!(s.validate_horizon(100).is_err());
        let shifted = QSchedule::new(1, 2, vec![vec![1, 0, 1]]).unwrap();
        assert!(shifted.validate_horizon(1000).is_ok());
    }

    #[test]
    fn decreasing_tail_rejected() {
        let s = QSchedule::new(1, 2, vec![vec![100, -1]]).unwrap();
        assert!(s.validate_horizon(10).is_err());
        let concave = QSchedule::new(1, 2, vec![vec![0, 10, -1]]).unwrap();
        assert!(concave.validate_horizon(4).is_err());
    }

    #[test]
    fn wrong_tail_count() {
        assert!(QSchedule::new(1, 3, vec![vec![0, 0, 1]]).is_err());
        assert!(QSchedule::new(2, 1, vec![]).is_err());
    }
}
