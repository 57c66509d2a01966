use crate::error::{invalid, Error, Result};

use super::{stationary_distribution, ProbVector, StochasticMatrix};

/// `C⁻¹ ν(y) ≤ P^{n₀}(x, y) ≤ C ν(y)` for all `x, y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoeblinCertificate {
    pub n0: usize,
    pub c: f64,
    pub nu: ProbVector,
    /// Whether the stationary law also satisfies `C⁻¹ ≤ dμ/dν ≤ C`.
    pub density_bound_holds: bool,
}

impl DoeblinCertificate {
    /// Re-checks the two-sided bound on `P^{n₀}` with relative slack `tol`.
    pub fn verify(&self, p: &StochasticMatrix, tol: f64) -> bool {
        let a = p.power(self.n0);
        let n = p.size();
        (0..n).all(|x| {
            (0..n).all(|y| {
                let nu = self.nu.weights()[y];
                let v = a[(x, y)];
                v >= nu / self.c * (1.0 - tol) && v <= self.c * nu * (1.0 + tol)
            })
        })
    }
}

/// Smallest `n₀ ≤ n_max` whose power admits the two-sided bound with `ν` the
/// normalised columnwise minimum and `C` minimal for that `ν`.
pub fn doeblin_check(p: &StochasticMatrix, n_max: usize) -> Result<DoeblinCertificate> {
    if n_max == 0 {
        return Err(invalid("n_max must be at least 1"));
    }
    let n = p.size();
    let mut a = p.matrix().clone();
    for n0 in 1..=n_max {
        if n0 > 1 {
            a = &a * p.matrix();
        }
        let col_min: Vec<f64> = (0..n).map(|y| (0..n).map(|x| a[(x, y)]).fold(f64::INFINITY, f64::min)).collect();
        let mass: f64 = col_min.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        // A column with a zero somewhere must vanish entirely, otherwise no C works.
        let feasible = (0..n).all(|y| col_min[y] > 0.0 || (0..n).all(|x| a[(x, y)] == 0.0));
        if !feasible {
            continue;
        }
        let nu: Vec<f64> = col_min.iter().map(|c| c / mass).collect();
        let mut c = 1.0f64;
        for y in 0..n {
            if nu[y] == 0.0 {
                continue;
            }
            for x in 0..n {
                c = c.max(a[(x, y)] / nu[y]).max(nu[y] / a[(x, y)]);
            }
        }
        let density_bound_holds = match stationary_distribution(p) {
            Ok(mu) => mu.weights().iter().zip(&nu).all(|(m, v)| {
                if *v == 0.0 {
                    *m == 0.0
                } else {
                    let r = m / v;
                    r >= 1.0 / c * (1.0 - 1e-12) && r <= c * (1.0 + 1e-12)
                }
            }),
            Err(_) => false,
        };
        return Ok(DoeblinCertificate { n0, c, nu: ProbVector(nu), density_bound_holds });
    }
    Err(Error::NoDoeblinWithinHorizon { n_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_rows() {
        let nu = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let cert = doeblin_check(&StochasticMatrix::with_identical_rows(&nu), 5).unwrap();
        assert_eq!(cert.n0, 1);
        assert_relative_eq!(cert.c, 1.0, epsilon = 1e-15);
        assert_relative_eq!(cert.nu.weights()[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn permutation_never_mixes() {
        let flip = StochasticMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(doeblin_check(&flip, 50).unwrap_err(), Error::NoDoeblinWithinHorizon { n_max: 50 });
    }

    /// Grid search over ν on the 2-simplex for the smallest feasible C.
    fn grid_min_c(a: [[f64; 2]; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 1..100_000 {
            let nu = [i as f64 / 100_000.0, 1.0 - i as f64 / 100_000.0];
            let mut c = 1.0f64;
            for row in a {
                for y in 0..2 {
                    c = c.max(row[y] / nu[y]).max(nu[y] / row[y]);
                }
            }
            best = best.min(c);
        }
        best
    }

    #[test]
    fn two_state_matches_simplex_search() {
        let p = StochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let cert = doeblin_check(&p, 1).unwrap();
        assert_eq!(cert.n0, 1);
        assert_relative_eq!(cert.nu.weights()[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(cert.c, 10.0 / 3.0, epsilon = 1e-14);
        assert!((cert.c - grid_min_c([[0.9, 0.1], [0.2, 0.8]])).abs() < 1e-3);
        assert!(cert.verify(&p, 1e-12));
        assert!(cert.density_bound_holds);
    }

    #[test]
    fn sparse_chain_needs_higher_power() {
        let p = StochasticMatrix::new(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]]).unwrap();
        let cert = doeblin_check(&p, 10).unwrap();
        assert_eq!(cert.n0, 2);
        assert!(cert.verify(&p, 1e-12));
    }
}
