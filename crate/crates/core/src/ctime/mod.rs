//! Continuous-time chains on a finite alphabet with `k = 1`: Feynman–Kac
//! principal eigenvalues, `Q_cont`, its Legendre and Donsker–Varadhan
//! duals, Gillespie paths and the averaging setup for slow motions.
//!
//! With `q₁(t) = α₁ t` the trailing coordinates decouple and only the
//! linear reduction `v̂(x₁) = ∫ W(x₁, ·) dμ^{⊗(ℓ−1)}` matters; the time change
//! `s = α₁ t` gives `Q_cont(W) = α₁ λ_max(L + α₁⁻¹ diag v̂)`.

mod action;
mod averaging;
mod path;

pub use action::{action_functional, ActionReport, PiecewiseLinearPath, RateContext};
pub use averaging::{exp_moment_functional, simulate_slow_motion, ExpMomentReport, SlowField, SlowMotion, TimeVaryingPotential};
pub use path::{feynman_kac_estimate, gillespie, tuple_segments, CtmcPath, McEstimate, TupleSegment};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::legendre::{legendre_transform, LegendreConfig, LogMoment, RateFunction};
use crate::linalg::{is_strongly_connected, metzler_pair, metzler_principal_eigenvalue};
use crate::markov::{duality_ascent, observable_range, trailing_weights, DualityReport, OccupationalMeasure, RateEstimate};
use crate::model::{reduce_observable, stationary_distribution, Observable, ProbVector, ReductionMode, StochasticMatrix};
use crate::optim::{lbfgs, LbfgsConfig};

const ROW_TOL: f64 = 1e-12;

/// Generator `L` of a continuous-time chain: nonnegative off-diagonal rates,
/// rows summing to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    l: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("generator must be a nonempty square matrix"));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_matrix(l: DMatrix<f64>) -> Result<Self> {
        let n = l.nrows();
        if n == 0 || l.ncols() != n {
            return Err(invalid("generator must be a nonempty square matrix"));
        }
        for x in 0..n {
            let mut off = 0.0;
            for y in 0..n {
                let v = l[(x, y)];
                if !v.is_finite() {
                    return Err(invalid(format!("generator entry ({x}, {y}) is not finite")));
                }
                if x != y {
                    if v < 0.0 {
                        return Err(invalid(format!("negative jump rate {v} at ({x}, {y})")));
                    }
                    off += v;
                }
            }
            let sum = off + l[(x, x)];
            if sum.abs() > ROW_TOL * off.max(1.0) {
                return Err(invalid(format!("generator row {x} sums to {sum}, expected 0")));
            }
        }
        if !is_strongly_connected(n, |x, y| x != y && l[(x, y)] > 0.0) {
            return Err(invalid("embedded jump chain is not irreducible"));
        }
        Ok(Self { l })
    }

    /// Two-state generator with rates `a` (0→1) and `b` (1→0).
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![vec![-a, a], vec![b, -b]])
    }

    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn exit_rate(&self, x: usize) -> f64 {
        -self.l[(x, x)]
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.size()).map(|x| self.exit_rate(x)).fold(0.0, f64::max)
    }

    /// `I + L/Λ` with `Λ` slightly above the largest exit rate.
    pub fn uniformized(&self) -> StochasticMatrix {
        let n = self.size();
        let lambda = self.max_exit_rate().max(1e-300) * 1.5;
        let mut p = DMatrix::identity(n, n) + &self.l / lambda;
        for x in 0..n {
            let off: f64 = (0..n).filter(|&y| y != x).map(|y| p[(x, y)]).sum();
            p[(x, x)] = 1.0 - off;
        }
        StochasticMatrix::from_matrix(p).expect("uniformized generator is stochastic")
    }

    /// Invariant law `πL = 0`.
    pub fn stationary(&self) -> Result<ProbVector> {
        stationary_distribution(&self.uniformized())
    }
}

/// Time schedule `q_j(t) = α_j t` for `j ≤ k` and real polynomial tails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub k: usize,
    pub ell: usize,
    pub alphas: Vec<f64>,
    /// Ascending coefficients of `q_j` for `j = k+1, …, ℓ`.
    pub tails: Vec<Vec<f64>>,
}

impl AlphaSchedule {
    pub fn new(alphas: Vec<f64>, tails: Vec<Vec<f64>>) -> Result<Self> {
        let k = alphas.len();
        if k == 0 {
            return Err(invalid("at least one α is required"));
        }
        if alphas[0] <= 0.0 || alphas.windows(2).any(|w| w[0] >= w[1]) || alphas.iter().any(|a| !a.is_finite()) {
            return Err(invalid("α's must be positive, finite and strictly increasing"));
        }
        if tails.iter().any(|c| c.is_empty() || c.iter().any(|v| !v.is_finite())) {
            return Err(invalid("tail polynomials need finite coefficients"));
        }
        Ok(Self { k, ell: k + tails.len(), alphas, tails })
    }

    /// `ℓ = 1`, `q₁(t) = α t`.
    pub fn single(alpha: f64) -> Result<Self> {
        Self::new(vec![alpha], Vec::new())
    }

    pub fn eval(&self, j: usize, t: f64) -> f64 {
        assert!(j >= 1 && j <= self.ell, "schedule index {j} out of range");
        if j <= self.k {
            return self.alphas[j - 1] * t;
        }
        self.tails[j - self.k - 1].iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn slope(&self, j: usize, t: f64) -> f64 {
        if j <= self.k {
            return self.alphas[j - 1];
        }
        let c = &self.tails[j - self.k - 1];
        c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (i, v)| acc * t + i as f64 * v)
    }

    /// Smallest `t ∈ [0, horizon]` with `q_j(t) ≥ y`, assuming `q_j` increasing.
    pub fn inverse(&self, j: usize, y: f64, horizon: f64) -> f64 {
        if j <= self.k {
            return (y / self.alphas[j - 1]).clamp(0.0, horizon);
        }
        let (mut lo, mut hi) = (0.0, horizon);
        if self.eval(j, lo) >= y {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(j, mid) >= y {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Tails are nonnegative with positive slope on a grid of `[0, horizon]`.
    pub fn validate_horizon(&self, horizon: f64) -> Result<()> {
        const GRID: usize = 1000;
        for j in (self.k + 1)..=self.ell {
            for i in 0..=GRID {
                let t = horizon * i as f64 / GRID as f64;
                if self.eval(j, t) < 0.0 {
                    return Err(invalid(format!("q_{j}({t}) is negative")));
                }
                if self.slope(j, t) <= 0.0 && t > 0.0 {
                    return Err(invalid(format!("q_{j} is not increasing at t = {t}")));
                }
            }
        }
        Ok(())
    }

    /// `max_j q_j(horizon)`.
    pub fn max_time(&self, horizon: f64) -> f64 {
        (1..=self.ell).map(|j| self.eval(j, horizon)).fold(0.0, f64::max)
    }
}

fn check_shapes(l: &GeneratorMatrix, mu: &ProbVector, w: &Observable) -> Result<()> {
    if l.size() != mu.len() || w.alphabet_size() != mu.len() {
        return Err(invalid(format!(
            "generator ({}), law ({}) and observable ({}) must share the alphabet",
            l.size(),
            mu.len(),
            w.alphabet_size()
        )));
    }
    w.check_against(mu)
}

fn check_alpha(alpha1: f64) -> Result<()> {
    if !(alpha1 > 0.0 && alpha1.is_finite()) {
        return Err(invalid(format!("α₁ must be positive, got {alpha1}")));
    }
    Ok(())
}

/// Largest real eigenvalue of `L + diag(v)`.
pub fn principal_eigenvalue(l: &GeneratorMatrix, v: &[f64]) -> Result<f64> {
    if v.len() != l.size() {
        return Err(invalid(format!("potential has {} entries, generator has {} states", v.len(), l.size())));
    }
    let mut a = l.rates().clone();
    for (i, vi) in v.iter().enumerate() {
        a[(i, i)] += vi;
    }
    metzler_principal_eigenvalue(&a)
}

fn linear_reduction(w: &Observable, mu: &ProbVector) -> Result<Vec<f64>> {
    Ok(reduce_observable(w, mu, 1, ReductionMode::Linear)?.values().to_vec())
}

/// `Q_cont(W) = α₁ λ_max(L + α₁⁻¹ diag v̂)`.
pub fn q_cont(l: &GeneratorMatrix, mu: &ProbVector, w: &Observable, alpha1: f64) -> Result<f64> {
    check_shapes(l, mu, w)?;
    check_alpha(alpha1)?;
    let v: Vec<f64> = linear_reduction(w, mu)?.iter().map(|x| x / alpha1).collect();
    Ok(alpha1 * principal_eigenvalue(l, &v)?)
}

/// `Q_cont(W)` and its derivative along `dW`.
pub fn q_cont_with_derivative(
    l: &GeneratorMatrix,
    mu: &ProbVector,
    w: &Observable,
    dw: &Observable,
    alpha1: f64,
) -> Result<(f64, f64)> {
    check_shapes(l, mu, w)?;
    check_alpha(alpha1)?;
    let v = linear_reduction(w, mu)?;
    let dv = linear_reduction(dw, mu)?;
    let mut a = l.rates().clone();
    for (i, vi) in v.iter().enumerate() {
        a[(i, i)] += vi / alpha1;
    }
    let pair = metzler_pair(&a)?;
    let d: f64 = (0..v.len()).map(|i| pair.left[i] * dv[i] * pair.right[i]).sum();
    Ok((alpha1 * pair.value, d))
}

/// `λ ↦ Q_cont(λF)`.
pub struct ContLogMoment<'a> {
    pub l: &'a GeneratorMatrix,
    pub mu: &'a ProbVector,
    pub f: &'a Observable,
    pub alpha1: f64,
}

impl LogMoment for ContLogMoment<'_> {
    fn value(&self, lambda: f64) -> Result<f64> {
        q_cont(self.l, self.mu, &self.f.scaled(lambda), self.alpha1)
    }

    fn derivative(&self, lambda: f64) -> Result<f64> {
        Ok(q_cont_with_derivative(self.l, self.mu, &self.f.scaled(lambda), self.f, self.alpha1)?.1)
    }
}

/// Rate function of `S_T / T` for `F` over a continuous-time chain.
pub fn rate_function_cont(
    l: &GeneratorMatrix,
    mu: &ProbVector,
    f: &Observable,
    alpha1: f64,
    u_grid: &[f64],
    cfg: &LegendreConfig,
) -> Result<RateFunction> {
    check_shapes(l, mu, f)?;
    check_alpha(alpha1)?;
    let mut cfg = *cfg;
    if cfg.u_bounds.is_none() {
        cfg.u_bounds = Some(observable_range(f));
    }
    legendre_transform(&ContLogMoment { l, mu, f, alpha1 }, u_grid, &cfg)
}

/// Largest deviation of `η` from the product form `η₁ ⊗ μ^{⊗(ℓ−1)}`.
const PRODUCT_TOL: f64 = 1e-9;

/// `f(g) = Σ_x η₁(x) e^{−g(x)} (L e^g)(x)`; `I = −α₁ inf_g f`.
fn generator_dv_objective(l: &DMatrix<f64>, eta1: &[f64], g: &[f64], grad: &mut [f64]) -> f64 {
    let n = eta1.len();
    grad.iter_mut().for_each(|v| *v = 0.0);
    let mut value = 0.0;
    for x in 0..n {
        if eta1[x] <= 0.0 {
            continue;
        }
        value += eta1[x] * l[(x, x)];
        for y in 0..n {
            if y == x || l[(x, y)] == 0.0 {
                continue;
            }
            let t = eta1[x] * l[(x, y)] * (g[y] - g[x]).exp();
            value += t;
            grad[y] += t;
            grad[x] -= t;
        }
    }
    value
}

fn generator_dv(l: &GeneratorMatrix, eta1: &[f64], alpha1: f64, warm: Option<&[f64]>) -> RateEstimate {
    let cfg = LbfgsConfig { max_iter: 20_000, grad_tol: 1e-12, ..Default::default() };
    let x0 = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; eta1.len()]);
    let res = lbfgs(|g, grad| generator_dv_objective(l.rates(), eta1, g, grad), x0, &cfg);
    RateEstimate { value: (-alpha1 * res.value).max(0.0), converged: res.converged, iterations: res.iterations, v: res.x }
}

/// `∂I/∂η₁(x) = −α₁ e^{−g(x)} (L e^g)(x)` at the optimal `g`.
fn generator_dv_gradient(l: &GeneratorMatrix, alpha1: f64, g: &[f64]) -> Vec<f64> {
    let a = l.rates();
    (0..g.len())
        .map(|x| -alpha1 * (0..g.len()).map(|y| a[(x, y)] * (g[y] - g[x]).exp()).sum::<f64>())
        .collect()
}

/// `I_cont(η)`: the Donsker–Varadhan functional of the time-changed chain on
/// the first marginal when `η = η₁ ⊗ μ^{⊗(ℓ−1)}`, and `+∞` otherwise.
pub fn dv_rate_cont(eta: &OccupationalMeasure, l: &GeneratorMatrix, mu: &ProbVector, alpha1: f64) -> Result<RateEstimate> {
    if eta.alphabet_size() != l.size() || mu.len() != l.size() {
        return Err(invalid("occupational measure, generator and law must share the alphabet"));
    }
    check_alpha(alpha1)?;
    let eta1 = eta.first_marginal();
    let tw = trailing_weights(mu, eta.arity() - 1);
    let off_product = eta
        .weights()
        .chunks_exact(tw.len())
        .zip(&eta1)
        .any(|(block, e)| block.iter().zip(&tw).any(|(a, b)| (a - e * b).abs() > PRODUCT_TOL));
    if off_product {
        return Ok(RateEstimate { value: f64::INFINITY, converged: true, iterations: 0, v: Vec::new() });
    }
    Ok(generator_dv(l, &eta1, alpha1, None))
}

/// Checks `Q_cont(W) = sup_η (∫ W dη − I_cont(η))`. The supremum runs over
/// product-form `η`, where `∫ W dη = ⟨v̂, η₁⟩`.
pub fn duality_check_cont(w: &Observable, l: &GeneratorMatrix, mu: &ProbVector, alpha1: f64) -> Result<DualityReport> {
    let q = q_cont(l, mu, w, alpha1)?;
    let vhat = reduce_observable(w, mu, 1, ReductionMode::Linear)?;
    let inner = |eta1: &[f64], warm: Option<&[f64]>| generator_dv(l, eta1, alpha1, warm);
    let grad = |_: &[f64], est: &RateEstimate| generator_dv_gradient(l, alpha1, &est.v);
    let mut report = duality_ascent(&vhat, q, &inner, &grad);
    let tw = trailing_weights(mu, w.arity() - 1);
    report.eta = report.eta.iter().flat_map(|e| tw.iter().map(move |t| e * t)).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quadratic_root(a: f64, b: f64, w: f64) -> f64 {
        let s = w - a - b;
        0.5 * (s + (s * s + 4.0 * w * b).sqrt())
    }

    #[test]
    fn generator_validation() {
        assert!(GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![2.0, -2.0]]).is_ok());
        assert!(GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![2.0, -1.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![1.0, -1.0], vec![2.0, -2.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![0.0, 0.0], vec![2.0, -2.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![0.0]]).is_ok());
    }

    #[test]
    fn stationary_law() {
        let l = GeneratorMatrix::two_state(1.0, 3.0).unwrap();
        let pi = l.stationary().unwrap();
        assert_relative_eq!(pi.weights()[0], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn eigenvalue_trivial_cases() {
        let l = GeneratorMatrix::new(vec![vec![-2.0, 1.0, 1.0], vec![0.5, -1.0, 0.5], vec![3.0, 0.0, -3.0]]).unwrap();
        assert!(principal_eigenvalue(&l, &[0.0; 3]).unwrap().abs() < 1e-11);
        assert_relative_eq!(principal_eigenvalue(&l, &[0.7; 3]).unwrap(), 0.7, epsilon = 1e-11);
    }

    #[test]
    fn two_state_closed_form() {
        for &(a, b, w) in &[(1.0, 1.0, 0.5), (0.3, 2.0, -1.0), (5.0, 0.1, 3.0), (1.0, 2.0, 0.0)] {
            let l = GeneratorMatrix::two_state(a, b).unwrap();
            let got = principal_eigenvalue(&l, &[w, 0.0]).unwrap();
            assert!((got - quadratic_root(a, b, w)).abs() <= 1e-10, "{a} {b} {w}: {got}");
        }
    }

    #[test]
    fn constant_potential_and_time_change() {
        let l = GeneratorMatrix::two_state(0.4, 1.1).unwrap();
        let mu = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let c = Observable::constant(2, 2, 1.3).unwrap();
        for alpha in [0.5, 1.0, 4.0] {
            assert_relative_eq!(q_cont(&l, &mu, &c, alpha).unwrap(), 1.3, epsilon = 1e-10);
        }
        let w = Observable::indicator(2, &[1, 1]).unwrap();
        let vhat = [0.0, 0.7];
        for alpha in [1.0, 2.0, 5.0] {
            let scaled: Vec<f64> = vhat.iter().map(|v| v / alpha).collect();
            let direct = alpha * principal_eigenvalue(&l, &scaled).unwrap();
            assert_relative_eq!(q_cont(&l, &mu, &w, alpha).unwrap(), direct, epsilon = 1e-12);
        }
        assert_relative_eq!(
            q_cont(&l, &mu, &w, 1.0).unwrap(),
            quadratic_root(1.1, 0.4, 0.7),
            epsilon = 1e-10
        );
    }

    #[test]
    fn rate_function_calculus() {
        let l = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let mu = l.stationary().unwrap();
        let f = Observable::indicator(2, &[1, 1]).unwrap();
        let fbar = mu.weights()[1] * mu.weights()[1];
        let (q0, d0) = q_cont_with_derivative(&l, &mu, &f.scaled(0.0), &f, 1.0).unwrap();
        assert_eq!(q0, 0.0);
        assert!((d0 - fbar).abs() < 1e-6);
        let grid: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
        let rf = rate_function_cont(&l, &mu, &f, 1.0, &grid, &LegendreConfig::default()).unwrap();
        assert!(rf.j_is_convex(1e-8));
        assert!(rf.j_values.iter().all(|p| p.j >= -1e-12));
        let at_mean = legendre_point_at(&l, &mu, &f, fbar);
        assert!(at_mean.abs() < 1e-8, "{at_mean}");
    }

    fn legendre_point_at(l: &GeneratorMatrix, mu: &ProbVector, f: &Observable, u: f64) -> f64 {
        let q = ContLogMoment { l, mu, f, alpha1: 1.0 };
        crate::legendre::legendre_point(&q, u, &LegendreConfig::default()).unwrap().j
    }

    #[test]
    fn dv_zero_at_product_and_infinite_off_product() {
        let l = GeneratorMatrix::two_state(0.5, 1.5).unwrap();
        let mu = l.stationary().unwrap();
        let eta = OccupationalMeasure::product(&mu, 2);
        assert!(dv_rate_cont(&eta, &l, &mu, 1.0).unwrap().value < 1e-8);
        let skew = OccupationalMeasure::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(dv_rate_cont(&skew, &l, &mu, 1.0).unwrap().value.is_infinite());
    }

    #[test]
    fn dv_two_state_closed_form() {
        // For two states, inf_g gives I(η) = (√(a η₀) − √(b η₁))².
        let (a, b) = (0.7, 1.9);
        let l = GeneratorMatrix::two_state(a, b).unwrap();
        let mu = ProbVector::new(vec![0.5, 0.5]).unwrap();
        for e0 in [0.1, 0.3, 0.5, 0.9] {
            let eta = OccupationalMeasure::new(2, 1, vec![e0, 1.0 - e0]).unwrap();
            let got = dv_rate_cont(&eta, &l, &mu, 1.0).unwrap().value;
            let want = ((a * e0).sqrt() - (b * (1.0 - e0)).sqrt()).powi(2);
            assert!((got - want).abs() < 1e-9, "{e0}: {got} vs {want}");
            let fast = dv_rate_cont(&eta, &l, &mu, 3.0).unwrap().value;
            assert!((fast - 3.0 * want).abs() < 1e-8);
        }
    }

    #[test]
    fn duality_two_state_ell2() {
        let l = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let mu = l.stationary().unwrap();
        let w = Observable::indicator(2, &[1, 1]).unwrap().scaled(1.5);
        for alpha in [1.0, 2.5] {
            let r = duality_check_cont(&w, &l, &mu, alpha).unwrap();
            assert!(r.gap <= 1e-4, "α = {alpha}: {r:?}");
            assert_eq!(r.eta.len(), 4);
        }
    }

    #[test]
    fn schedule_inverse() {
        let s = AlphaSchedule::new(vec![1.0], vec![vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(s.ell, 2);
        assert_relative_eq!(s.inverse(2, 9.0, 10.0), 3.0, epsilon = 1e-12);
        assert_relative_eq!(s.inverse(1, 2.5, 10.0), 2.5);
        assert!(s.validate_horizon(10.0).is_ok());
        assert!(AlphaSchedule::new(vec![1.0], vec![vec![5.0, -1.0]]).unwrap().validate_horizon(10.0).is_err());
        assert!(AlphaSchedule::new(vec![2.0, 1.0], vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn q_cont_convex_in_lambda(a in 0.1f64..3.0, b in 0.1f64..3.0, w0 in -2.0f64..2.0, w1 in -2.0f64..2.0,
                                   l1 in -3.0f64..3.0, l2 in -3.0f64..3.0) {
            let l = GeneratorMatrix::two_state(a, b).unwrap();
            let mu = ProbVector::uniform(2);
            let f = Observable::new(2, 1, vec![w0, w1]).unwrap();
            let q = |lam: f64| q_cont(&l, &mu, &f.scaled(lam), 1.0).unwrap();
            prop_assert!(q(0.5 * (l1 + l2)) <= 0.5 * (q(l1) + q(l2)) + 1e-9);
        }

        #[test]
        fn dv_nonnegative(a in 0.1f64..3.0, b in 0.1f64..3.0, e0 in 0.0f64..1.0) {
            let l = GeneratorMatrix::two_state(a, b).unwrap();
            let mu = ProbVector::uniform(2);
            let eta = OccupationalMeasure::new(2, 1, vec![e0, 1.0 - e0]).unwrap();
            prop_assert!(dv_rate_cont(&eta, &l, &mu, 1.0).unwrap().value >= 0.0);
        }
    }
}
