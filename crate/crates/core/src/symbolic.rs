//! Subshifts of finite type with locally constant potentials: topological
//! pressure as a log Perron root, the Gibbs measure as a Markov chain, and
//! the dynamical `Q`-functional `𝒫(ln Ŵ + g) − 𝒫(g)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{perron_pair, spectral_radius};
use crate::model::{reduce_observable, Observable, ProbVector, ReductionMode, StochasticMatrix};

/// One-sided shift on sequences with `Ξ[s_i][s_{i+1}] = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSpec {
    transition: Vec<Vec<bool>>,
}

fn bool_product(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).any(|k| a[i][k] && b[k][j])).collect()).collect()
}

impl SftSpec {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("transition matrix must be nonempty and square"));
        }
        if rows.iter().flatten().any(|v| *v > 1) {
            return Err(invalid("transition matrix entries must be 0 or 1"));
        }
        let transition: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|v| *v == 1).collect()).collect();
        // Wielandt: a primitive n×n matrix has a positive power at (n−1)² + 1.
        let mut exponent = (n - 1) * (n - 1) + 1;
        let mut base = transition.clone();
        let mut acc: Option<Vec<Vec<bool>>> = None;
        while exponent > 0 {
            if exponent & 1 == 1 {
                acc = Some(match acc {
                    Some(a) => bool_product(&a, &base),
                    None => base.clone(),
                });
            }
            exponent >>= 1;
            if exponent > 0 {
                base = bool_product(&base, &base);
            }
        }
        if !acc.expect("exponent is positive").iter().flatten().all(|v| *v) {
            return Err(Error::NotPrimitive);
        }
        Ok(Self { transition })
    }

    pub fn full_shift(l0: usize) -> Result<Self> {
        Self::new(vec![vec![1; l0]; l0])
    }

    pub fn alphabet_size(&self) -> usize {
        self.transition.len()
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.transition[i][j]
    }
}

/// A potential depending on the first one or two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocalPotential {
    OneCoordinate(Vec<f64>),
    TwoCoordinate(Vec<Vec<f64>>),
}

impl LocalPotential {
    pub fn zero(l0: usize) -> Self {
        LocalPotential::OneCoordinate(vec![0.0; l0])
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        match self {
            LocalPotential::OneCoordinate(v) => v[i],
            LocalPotential::TwoCoordinate(m) => m[i][j],
        }
    }

    fn check(&self, l0: usize) -> Result<()> {
        let ok = match self {
            LocalPotential::OneCoordinate(v) => v.len() == l0 && v.iter().all(|x| x.is_finite()),
            LocalPotential::TwoCoordinate(m) => {
                m.len() == l0 && m.iter().all(|r| r.len() == l0 && r.iter().all(|x| x.is_finite()))
            }
        };
        if !ok {
            return Err(invalid(format!("potential must be finite and sized for {l0} symbols")));
        }
        Ok(())
    }
}

/// `A_ij = ξ_ij e^{φ(i, j)}`.
fn weighted(spec: &SftSpec, phi: &dyn Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let n = spec.alphabet_size();
    DMatrix::from_fn(n, n, |i, j| if spec.allowed(i, j) { phi(i, j).exp() } else { 0.0 })
}

/// Topological pressure `ln ρ(ξ e^φ)`.
pub fn sft_pressure(spec: &SftSpec, phi: &LocalPotential) -> Result<f64> {
    phi.check(spec.alphabet_size())?;
    Ok(spectral_radius(&weighted(spec, &|i, j| phi.value(i, j)))?.ln())
}

/// The Gibbs state of `g` as a Markov chain
/// `P(i, j) = ξ_ij e^{g(i,j)} h(j) / (r h(i))` with its invariant law.
pub fn gibbs_markov_measure(spec: &SftSpec, g: &LocalPotential) -> Result<(StochasticMatrix, ProbVector)> {
    g.check(spec.alphabet_size())?;
    let a = weighted(spec, &|i, j| g.value(i, j));
    let pair = perron_pair(&a)?;
    let n = spec.alphabet_size();
    let h = &pair.right;
    let mut p = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * h[j] / (pair.value * h[i]));
    for i in 0..n {
        let s: f64 = p.row(i).sum();
        for j in 0..n {
            p[(i, j)] /= s;
        }
    }
    let pi = ProbVector::from_unnormalized((0..n).map(|i| pair.left[i] * h[i]).collect())?;
    Ok((StochasticMatrix::from_matrix(p)?, pi))
}

/// `Q(W) = 𝒫(ln Ŵ + g) − 𝒫(g)` for `X(n)` the `n`-th symbol under the Gibbs
/// state of `g`; `Ŵ` integrates trailing coordinates against its marginal.
pub fn q_dynamical(spec: &SftSpec, g: &LocalPotential, w: &Observable) -> Result<f64> {
    let (_, mu) = gibbs_markov_measure(spec, g)?;
    if w.alphabet_size() != spec.alphabet_size() {
        return Err(invalid("observable alphabet differs from the shift's"));
    }
    let log_w = reduce_observable(w, &mu, 1, ReductionMode::Log)?;
    let base = sft_pressure(spec, g)?;
    let a = weighted(spec, &|i, j| g.value(i, j) + log_w.values()[i]);
    Ok(spectral_radius(&a)?.ln() - base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::q_functional;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn full_shift_entropy() {
        let s = SftSpec::full_shift(2).unwrap();
        assert_eq!(sft_pressure(&s, &LocalPotential::zero(2)).unwrap(), 2f64.ln());
        let c = LocalPotential::OneCoordinate(vec![0.4, 0.4]);
        assert_relative_eq!(sft_pressure(&s, &c).unwrap(), 2f64.ln() + 0.4, epsilon = 1e-13);
    }

    #[test]
    fn golden_mean() {
        let s = SftSpec::new(vec![vec![1, 1], vec![1, 0]]).unwrap();
        let want = ((1.0 + 5f64.sqrt()) / 2.0).ln();
        assert_relative_eq!(sft_pressure(&s, &LocalPotential::zero(2)).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn primitivity() {
        assert_eq!(SftSpec::new(vec![vec![0, 1], vec![1, 0]]), Err(Error::NotPrimitive));
        assert_eq!(SftSpec::new(vec![vec![1, 0], vec![0, 1]]), Err(Error::NotPrimitive));
        assert!(SftSpec::new(vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 0]]).is_ok());
        assert!(SftSpec::new(vec![vec![2]]).is_err());
    }

    #[test]
    fn bernoulli_gibbs_state() {
        let p = [0.2, 0.5, 0.3];
        let s = SftSpec::full_shift(3).unwrap();
        let g = LocalPotential::OneCoordinate(p.iter().map(|x: &f64| x.ln()).collect());
        let (chain, mu) = gibbs_markov_measure(&s, &g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(chain.get(i, j), p[j], epsilon = 1e-12);
            }
            assert_relative_eq!(mu.weights()[i], p[i], epsilon = 1e-12);
        }
        let uniform = gibbs_markov_measure(&s, &LocalPotential::zero(3)).unwrap().0;
        assert!(uniform.matrix().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn trivial_observables() {
        let s = SftSpec::new(vec![vec![1, 1], vec![1, 0]]).unwrap();
        let g = LocalPotential::TwoCoordinate(vec![vec![0.1, -0.3], vec![0.7, 0.0]]);
        assert!(q_dynamical(&s, &g, &Observable::constant(2, 2, 0.0).unwrap()).unwrap().abs() < 1e-12);
        assert_relative_eq!(q_dynamical(&s, &g, &Observable::constant(2, 2, 0.9).unwrap()).unwrap(), 0.9, epsilon = 1e-12);
    }

    fn random_primitive(n: usize, bits: u64) -> Option<SftSpec> {
        let rows = (0..n).map(|i| (0..n).map(|j| ((bits >> ((i * n + j) % 64)) & 1) as u8).collect()).collect();
        SftSpec::new(rows).ok()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn agrees_with_markov_q(n in 2usize..6, bits in any::<u64>(), g in prop::collection::vec(-1.0f64..1.0, 5),
                                 w in prop::collection::vec(-1.5f64..1.5, 25)) {
            let Some(s) = random_primitive(n, bits | 1) else { return Ok(()) };
            let g = LocalPotential::OneCoordinate(g[..n].to_vec());
            let w = Observable::new(n, 2, w[..n * n].to_vec()).unwrap();
            let (p, mu) = gibbs_markov_measure(&s, &g).unwrap();
            let qd = q_dynamical(&s, &g, &w).unwrap();
            let qm = q_functional(&p, &mu, &w).unwrap();
            prop_assert!((qd - qm).abs() <= 1e-10, "{} vs {}", qd, qm);
            prop_assert!(p.matrix().row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-14));
        }

        #[test]
        fn pressure_monotone_and_convex(a in prop::collection::vec(-2.0f64..2.0, 3), d in prop::collection::vec(0.0f64..1.0, 3)) {
            let s = SftSpec::new(vec![vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]).unwrap();
            let lo = LocalPotential::OneCoordinate(a.clone());
            let hi = LocalPotential::OneCoordinate(a.iter().zip(&d).map(|(x, y)| x + y).collect());
            let mid = LocalPotential::OneCoordinate(a.iter().zip(&d).map(|(x, y)| x + 0.5 * y).collect());
            let (pl, ph, pm) = (sft_pressure(&s, &lo).unwrap(), sft_pressure(&s, &hi).unwrap(), sft_pressure(&s, &mid).unwrap());
            prop_assert!(pl <= ph + 1e-12);
            prop_assert!(pm <= 0.5 * (pl + ph) + 1e-12);
        }
    }
}
