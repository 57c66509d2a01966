use rayon::prelude::*;
use serde::Serialize;

use super::partition::chain_moment;
use super::{neumaier_sum, prime_basis, smooth_levels, ChainGraph, ChainMoment, SmoothLevels, Strategy};
use crate::error::{invalid, Error, Result};
use crate::legendre::{legendre_transform, LegendreConfig, LogMoment, RateFunction};
use crate::markov::observable_range;
use crate::model::{product_mean, Observable, ProbVector};

/// Upper bound on `Σ_{l > L} l^p e^{−ρ_min(l)}`: explicit terms up to a cutoff
/// past which `x^p 2^{1−x^{1/m}}` (a majorant since `ρ_min(l) ≥ (l^{1/m}−1) ln 2`)
/// is decreasing, then its integral in closed form.
pub fn tail_majorant(levels: &SmoothLevels, l_max: usize, p: u32) -> Result<f64> {
    let m = levels.basis.m();
    if m == 0 {
        return Ok(0.0);
    }
    let ln2 = 2f64.ln();
    let turn = (p as f64 * m as f64 / ln2).powi(m as i32).ceil() as usize + 1;
    let cutoff = (l_max + 1000).max(2 * l_max).max(turn);
    let ext = if levels.l_max() >= cutoff { levels.clone() } else { smooth_levels(&levels.basis, cutoff)? };
    let explicit = neumaier_sum(
        ((l_max + 1)..=cutoff).map(|l| (l as f64).powi(p as i32) * ext.smooth[l - 1].reciprocal()),
    );
    // ∫_{c}^∞ x^p 2^{1−x^{1/m}} dx = 2m Γ(s, y₀ ln 2) / (ln 2)^s, s = m(p+1), y₀ = c^{1/m}.
    let s = m * (p as usize + 1);
    let x = (cutoff as f64).powf(1.0 / m as f64) * ln2;
    let mut log_terms = Vec::with_capacity(s);
    let mut log_fact_ratio = 0.0; // ln((s−1)!/j!) accumulated downward
    for j in (0..s).rev() {
        log_terms.push(-x + j as f64 * x.ln() + log_fact_ratio);
        log_fact_ratio += (j.max(1) as f64).ln();
    }
    let top = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_gamma = top + log_terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    let integral = (2.0 * m as f64).ln() + log_gamma - s as f64 * ln2.ln();
    Ok(explicit + integral.exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct QSeries {
    pub value: f64,
    /// Rigorous bound on the omitted levels `l > l_max`.
    pub tail_bound: f64,
    pub derivative: Option<f64>,
    pub density_r: f64,
    pub per_level: Vec<ChainMoment>,
}

/// `Q(V) ≈ r Σ_{l ≤ l_max} w(l) ln R_l(V)` with its tail bound.
pub fn q_series(v: &Observable, mu: &ProbVector, l_max: usize, strategy: Strategy) -> Result<QSeries> {
    let levels = smooth_levels(&prime_basis(v.arity())?, l_max)?;
    q_series_with(v, None, mu, &levels, strategy)
}

pub fn q_series_with(
    v: &Observable,
    dv: Option<&Observable>,
    mu: &ProbVector,
    levels: &SmoothLevels,
    strategy: Strategy,
) -> Result<QSeries> {
    if v.arity() != levels.basis.k {
        return Err(invalid(format!("observable arity {} differs from k = {}", v.arity(), levels.basis.k)));
    }
    let l_max = levels.l_max();
    let per_level: Vec<ChainMoment> =
        (1..=l_max).into_par_iter().map(|l| chain_moment(v, dv, mu, levels, l, strategy)).collect::<Result<_>>()?;
    let r = levels.density_r;
    let value = r * neumaier_sum(per_level.iter().map(|c| levels.weight(c.level) * c.log_r));
    let derivative = dv.map(|_| {
        r * neumaier_sum(per_level.iter().map(|c| levels.weight(c.level) * c.derivative.unwrap_or(f64::NAN)))
    });
    let tail_bound = r * v.sup_norm() * tail_majorant(levels, l_max, 1)?;
    Ok(QSeries { value, tail_bound, derivative, density_r: r, per_level })
}

/// `λ ↦ Q(λF)` for an i.i.d. sequence, differentiated termwise.
pub struct IidLogMoment<'a> {
    pub f: &'a Observable,
    pub mu: &'a ProbVector,
    pub levels: SmoothLevels,
    pub strategy: Strategy,
}

impl<'a> IidLogMoment<'a> {
    pub fn new(f: &'a Observable, mu: &'a ProbVector, l_max: usize, strategy: Strategy) -> Result<Self> {
        Ok(Self { f, mu, levels: smooth_levels(&prime_basis(f.arity())?, l_max)?, strategy })
    }
}

impl LogMoment for IidLogMoment<'_> {
    fn value(&self, lambda: f64) -> Result<f64> {
        Ok(q_series_with(&self.f.scaled(lambda), None, self.mu, &self.levels, self.strategy)?.value)
    }

    fn derivative(&self, lambda: f64) -> Result<f64> {
        let s = q_series_with(&self.f.scaled(lambda), Some(self.f), self.mu, &self.levels, self.strategy)?;
        Ok(s.derivative.expect("derivative requested"))
    }
}

/// Rate function of `S_N / N` for an i.i.d. sequence with `k = arity(F)`.
pub fn rate_function_iid(
    f: &Observable,
    mu: &ProbVector,
    l_max: usize,
    u_grid: &[f64],
    cfg: &LegendreConfig,
    strategy: Strategy,
) -> Result<RateFunction> {
    let mut cfg = *cfg;
    if cfg.u_bounds.is_none() {
        cfg.u_bounds = Some(observable_range(f));
    }
    let q = IidLogMoment::new(f, mu, l_max, strategy)?;
    legendre_transform(&q, u_grid, &cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct MdpCoefficients {
    /// `Λ⁻¹ = r Σ w(l) υ_l`.
    pub variance: f64,
    pub tail_bound: f64,
    /// `υ_l = E (S_{N,a}(V − V̄))²` for `l = 1..=l_max`.
    pub per_level: Vec<f64>,
    pub v_bar: f64,
    pub density_r: f64,
}

impl MdpCoefficients {
    /// Moderate-deviation rate `u² / (2Λ⁻¹)`.
    pub fn rate(&self, u: f64) -> f64 {
        u * u / (2.0 * self.variance)
    }
}

/// `E[Ṽ(x_s) Ṽ(x_t)]` for two index tuples over i.i.d. `μ` variables.
fn pair_moment(vt: &Observable, mu: &ProbVector, s: &[usize], t: &[usize]) -> f64 {
    let mut union: Vec<usize> = s.iter().chain(t).copied().collect();
    union.sort_unstable();
    union.dedup();
    if union.len() == s.len() + t.len() {
        return 0.0;
    }
    let m = mu.len();
    let pos = |var: usize| union.binary_search(&var).unwrap();
    let (sp, tp): (Vec<usize>, Vec<usize>) = (s.iter().map(|&v| pos(v)).collect(), t.iter().map(|&v| pos(v)).collect());
    let mut x = vec![0usize; union.len()];
    let mut total = 0.0;
    for code in 0..m.pow(union.len() as u32) {
        let mut c = code;
        let mut w = 1.0;
        for slot in x.iter_mut().rev() {
            *slot = c % m;
            c /= m;
            w *= mu.weights()[*slot];
        }
        if w == 0.0 {
            continue;
        }
        let a = vt.values()[sp.iter().fold(0, |acc, &i| acc * m + x[i])];
        let b = vt.values()[tp.iter().fold(0, |acc, &i| acc * m + x[i])];
        total += w * a * b;
    }
    total
}

/// Per-level variances `υ_l` and the moderate-deviation constant `Λ⁻¹`.
pub fn mdp_coefficients(v: &Observable, mu: &ProbVector, l_max: usize) -> Result<MdpCoefficients> {
    v.check_against(mu)?;
    let levels = smooth_levels(&prime_basis(v.arity())?, l_max)?;
    let v_bar = product_mean(v, mu)?;
    let vt = v.map(|x| x - v_bar);
    let per_level: Vec<f64> = (1..=levels.l_max())
        .into_par_iter()
        .map(|l| {
            let g = ChainGraph::canonical(&levels, l)?;
            let terms = g.terms();
            let mut s = 0.0;
            for (i, a) in terms.iter().enumerate() {
                s += pair_moment(&vt, mu, a, a);
                for b in &terms[i + 1..] {
                    s += 2.0 * pair_moment(&vt, mu, a, b);
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let scale = vt.sup_norm().powi(2) * 1e-14;
    if per_level.iter().all(|u| u.abs() <= scale) {
        return Err(Error::Degenerate);
    }
    let r = levels.density_r;
    let variance = r * neumaier_sum(per_level.iter().enumerate().map(|(i, u)| levels.weight(i + 1) * u));
    let tail_bound = r * vt.sup_norm().powi(2) * tail_majorant(&levels, levels.l_max(), 2)?;
    Ok(MdpCoefficients { variance, tail_bound, per_level, v_bar, density_r: r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_potential() {
        let c = 0.7;
        let v = Observable::constant(2, 2, c).unwrap();
        let s = q_series(&v, &ProbVector::uniform(2), 30, Strategy::Auto).unwrap();
        // ln R_l = l c, and (1/2) Σ_{l≤L} l 2^{-l} = 1 − (L + 2) 2^{-(L+1)}.
        assert_relative_eq!(s.value, c * (1.0 - 32.0 * 0.5f64.powi(31)), epsilon = 1e-14);
        assert!((s.value - c).abs() <= s.tail_bound);
    }

    #[test]
    fn k1_is_cramer() {
        let mu = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let v = Observable::new(3, 1, vec![1.0, -0.5, 2.0]).unwrap();
        let s = q_series(&v, &mu, 5, Strategy::Auto).unwrap();
        let exact = (0.2 * 1f64.exp() + 0.5 * (-0.5f64).exp() + 0.3 * 2f64.exp()).ln();
        assert_relative_eq!(s.value, exact, epsilon = 1e-14);
        assert_eq!(s.tail_bound, 0.0);
    }

    #[test]
    fn tail_bound_dominates_doubling() {
        let v = Observable::indicator(2, &[1, 1]).unwrap().scaled(1.5);
        let mu = ProbVector::uniform(2);
        let a = q_series(&v, &mu, 15, Strategy::Auto).unwrap();
        let b = q_series(&v, &mu, 30, Strategy::Auto).unwrap();
        assert!((a.value - b.value).abs() <= a.tail_bound);
        let v3 = Observable::from_fn(2, 3, |x| (x[0] * x[2]) as f64).unwrap();
        let a3 = q_series(&v3, &mu, 6, Strategy::Exact).unwrap();
        let b3 = q_series(&v3, &mu, 12, Strategy::Exact).unwrap();
        assert!((a3.value - b3.value).abs() <= a3.tail_bound);
    }

    #[test]
    fn majorant_exceeds_explicit_sum() {
        for k in [2, 3, 5] {
            let lv = smooth_levels(&prime_basis(k).unwrap(), 10).unwrap();
            let long = smooth_levels(&prime_basis(k).unwrap(), 20_000).unwrap();
            let explicit: f64 = (11..=20_000).map(|l| l as f64 * long.smooth[l - 1].reciprocal()).sum();
            assert!(tail_majorant(&lv, 10, 1).unwrap() >= explicit);
        }
    }

    #[test]
    fn mdp_indicator_closed_form() {
        let v = Observable::indicator(2, &[1, 1]).unwrap();
        let c = mdp_coefficients(&v, &ProbVector::uniform(2), 60).unwrap();
        for (i, u) in c.per_level.iter().enumerate() {
            let l = (i + 1) as f64;
            assert_relative_eq!(*u, (5.0 * l - 2.0) / 16.0, epsilon = 1e-13);
        }
        assert_relative_eq!(c.variance, 0.25, epsilon = 1e-12);
        assert!(c.tail_bound < 1e-12);
    }

    #[test]
    fn mdp_k1_and_degenerate() {
        let mu = ProbVector::new(vec![0.25, 0.75]).unwrap();
        let v = Observable::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_relative_eq!(mdp_coefficients(&v, &mu, 3).unwrap().variance, 0.1875, epsilon = 1e-15);
        let c = Observable::constant(2, 2, 3.0).unwrap();
        assert_eq!(mdp_coefficients(&c, &mu, 10).unwrap_err(), Error::Degenerate);
    }

    #[test]
    fn termwise_derivative_matches_fd() {
        let f = Observable::indicator(2, &[1, 1]).unwrap();
        let mu = ProbVector::uniform(2);
        let q = IidLogMoment::new(&f, &mu, 30, Strategy::Auto).unwrap();
        for lam in [-1.0, 0.0, 2.0] {
            let h = 1e-5;
            let fd = (q.value(lam + h).unwrap() - q.value(lam - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(q.derivative(lam).unwrap(), fd, epsilon = 1e-7);
        }
    }
}
