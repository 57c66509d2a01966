//! The action `S_{0T}(γ) = ∫ inf{ I(η) : B̄_η(γ_t) = γ̇_t } dt` of a
//! piecewise-linear curve, with `B̄_η(ξ) = ∫ F(ξ, ·) dη`.

use std::cell::RefCell;

use serde::Serialize;

use super::averaging::SlowField;
use super::{generator_dv, generator_dv_gradient, GeneratorMatrix};
use crate::error::{invalid, Result};
use crate::markov::{dv_maximise, trailing_weights, DvObjective, RateEstimate};
use crate::model::{decode_into, ProbVector, StochasticMatrix};
use crate::optim::{lbfgs, project_simplex, softmax, LbfgsConfig};

/// A curve through `points[i]` at `times[i]`, linear in between.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinearPath {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != points.len() {
            return Err(invalid("a path needs at least two knots and one point per knot"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("knot times must increase strictly"));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(invalid("all points must share a positive dimension"));
        }
        Ok(Self { times, points })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Joins `self` and `other`, which must start where `self` ends.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.times.last() != other.times.first() || self.points.last() != other.points.first() {
            return Err(invalid("paths do not meet"));
        }
        let mut times = self.times.clone();
        let mut points = self.points.clone();
        times.extend_from_slice(&other.times[1..]);
        points.extend_from_slice(&other.points[1..]);
        Self::new(times, points)
    }
}

/// Which occupational rate function enters the action.
#[derive(Debug, Clone, Copy)]
pub enum RateContext<'a> {
    Discrete { p: &'a StochasticMatrix, mu: &'a ProbVector },
    Continuous { l: &'a GeneratorMatrix, mu: &'a ProbVector, alpha1: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionReport {
    /// `+∞` when some segment velocity is unreachable.
    pub value: f64,
    /// Per-segment `inf I(η)` (not multiplied by the duration).
    pub segment_rates: Vec<f64>,
    pub infeasible_segment: Option<usize>,
    pub converged: bool,
}

const FEASIBILITY_TOL: f64 = 1e-7;

/// Smallest `|Bη − v|` over the simplex, by projected gradient.
fn min_residual(b: &[Vec<f64>], v: &[f64]) -> f64 {
    let n = b.len();
    let lip: f64 = b.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().max(1e-12);
    let step = 1.0 / lip;
    let mut eta = vec![1.0 / n as f64; n];
    let residual = |eta: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = v.iter().map(|x| -x).collect();
        for (e, col) in eta.iter().zip(b) {
            for (ri, c) in r.iter_mut().zip(col) {
                *ri += e * c;
            }
        }
        r
    };
    let mut best = f64::INFINITY;
    for _ in 0..20_000 {
        let r = residual(&eta);
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        best = best.min(norm);
        if norm <= FEASIBILITY_TOL * 0.1 {
            break;
        }
        let grad: Vec<f64> = b.iter().map(|col| col.iter().zip(&r).map(|(c, ri)| c * ri).sum()).collect();
        let moved: Vec<f64> = eta.iter().zip(&grad).map(|(e, g)| e - step * g).collect();
        eta = project_simplex(&moved);
    }
    best
}

/// `inf { I(η) : Bη = v }` by an augmented Lagrangian over softmax weights.
fn constrained_rate(
    b: &[Vec<f64>],
    v: &[f64],
    inner: &dyn Fn(&[f64], Option<&[f64]>) -> RateEstimate,
    grad_of_i: &dyn Fn(&[f64], &RateEstimate) -> Vec<f64>,
) -> (f64, bool) {
    let n = b.len();
    let d = v.len();
    let mut y = vec![0.0; d];
    let mut rho = 10.0;
    let warm: RefCell<Option<Vec<f64>>> = RefCell::new(None);
    let mut theta = vec![0.0; n];
    let mut prev_violation = f64::INFINITY;
    let cfg = LbfgsConfig { max_iter: 3_000, grad_tol: 1e-10, ..Default::default() };
    let constraint = |eta: &[f64]| -> Vec<f64> {
        let mut c: Vec<f64> = v.iter().map(|x| -x).collect();
        for (e, col) in eta.iter().zip(b) {
            for (ci, bc) in c.iter_mut().zip(col) {
                *ci += e * bc;
            }
        }
        c
    };
    let mut converged = false;
    for _ in 0..40 {
        let (yy, r) = (y.clone(), rho);
        let res = lbfgs(
            |th, g| {
                let eta = softmax(th);
                let est = inner(&eta, warm.borrow().as_deref());
                let di = grad_of_i(&eta, &est);
                *warm.borrow_mut() = Some(est.v.clone());
                let c = constraint(&eta);
                let mult: Vec<f64> = yy.iter().zip(&c).map(|(yi, ci)| yi + r * ci).collect();
                let ge: Vec<f64> = (0..n).map(|x| di[x] + b[x].iter().zip(&mult).map(|(bc, m)| bc * m).sum::<f64>()).collect();
                let mean: f64 = eta.iter().zip(&ge).map(|(e, gx)| e * gx).sum();
                for x in 0..n {
                    g[x] = eta[x] * (ge[x] - mean);
                }
                est.value
                    + yy.iter().zip(&c).map(|(yi, ci)| yi * ci).sum::<f64>()
                    + 0.5 * r * c.iter().map(|ci| ci * ci).sum::<f64>()
            },
            theta.clone(),
            &cfg,
        );
        theta = res.x;
        let c = constraint(&softmax(&theta));
        let violation = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (yi, ci) in y.iter_mut().zip(&c) {
            *yi += rho * ci;
        }
        if violation <= 1e-9 {
            converged = res.converged || violation <= 1e-10;
            break;
        }
        if violation > 0.25 * prev_violation {
            rho *= 10.0;
        }
        prev_violation = violation;
    }
    let eta = softmax(&theta);
    (inner(&eta, None).value, converged)
}

/// `S_{0T}(γ)` with the integrand evaluated at each segment midpoint.
pub fn action_functional(gamma: &PiecewiseLinearPath, field: &SlowField, ctx: RateContext) -> Result<ActionReport> {
    if gamma.dim() != field.dim {
        return Err(invalid("path and field dimensions differ"));
    }
    let mu = match ctx {
        RateContext::Discrete { p, mu } => {
            if p.size() != mu.len() {
                return Err(invalid("chain and law sizes differ"));
            }
            mu
        }
        RateContext::Continuous { l, mu, alpha1 } => {
            if l.size() != mu.len() || !(alpha1 > 0.0) {
                return Err(invalid("generator and law sizes differ, or α₁ is not positive"));
            }
            mu
        }
    };
    if field.alphabet != mu.len() {
        return Err(invalid("field alphabet differs from the law"));
    }
    let m = mu.len();
    let arity = field.arity;
    let len = m.pow(arity as u32);
    let mut value = 0.0;
    let mut segment_rates = Vec::new();
    let mut converged = true;
    for i in 0..gamma.times.len() - 1 {
        let dt = gamma.times[i + 1] - gamma.times[i];
        let xi: Vec<f64> = gamma.points[i].iter().zip(&gamma.points[i + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let vel: Vec<f64> = gamma.points[i].iter().zip(&gamma.points[i + 1]).map(|(a, b)| (b - a) / dt).collect();
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(len);
        let mut x = vec![0; arity];
        for flat in 0..len {
            decode_into(flat, m, &mut x);
            let mut out = vec![0.0; field.dim];
            field.eval(&xi, &x, &mut out);
            cols.push(out);
        }
        let (rate, ok) = match ctx {
            RateContext::Discrete { p, mu } => {
                if min_residual(&cols, &vel) > FEASIBILITY_TOL * (1.0 + vel.iter().map(|v| v.abs()).sum::<f64>()) {
                    return Ok(ActionReport { value: f64::INFINITY, segment_rates, infeasible_segment: Some(i), converged });
                }
                let pm = p.matrix();
                let inner = |eta: &[f64], warm: Option<&[f64]>| {
                    let obj = DvObjective::new(pm, mu, eta, arity);
                    dv_maximise(&obj, eta.len(), warm, if warm.is_some() { 1 } else { 2 })
                };
                let grad = |eta: &[f64], est: &RateEstimate| {
                    let obj = DvObjective::new(pm, mu, eta, arity);
                    let (n, _) = obj.log_n(&est.v);
                    let block = eta.len() / m;
                    est.v.iter().enumerate().map(|(j, v)| v - n[j / block]).collect()
                };
                constrained_rate(&cols, &vel, &inner, &grad)
            }
            RateContext::Continuous { l, mu, alpha1 } => {
                // Only product-form η are admissible: reduce to the first marginal.
                let tw = trailing_weights(mu, arity - 1);
                let reduced: Vec<Vec<f64>> = cols
                    .chunks_exact(tw.len())
                    .map(|block| {
                        (0..field.dim).map(|k| block.iter().zip(&tw).map(|(c, w)| w * c[k]).sum()).collect()
                    })
                    .collect();
                if min_residual(&reduced, &vel) > FEASIBILITY_TOL * (1.0 + vel.iter().map(|v| v.abs()).sum::<f64>()) {
                    return Ok(ActionReport { value: f64::INFINITY, segment_rates, infeasible_segment: Some(i), converged });
                }
                let inner = |eta1: &[f64], warm: Option<&[f64]>| generator_dv(l, eta1, alpha1, warm);
                let grad = |_: &[f64], est: &RateEstimate| generator_dv_gradient(l, alpha1, &est.v);
                constrained_rate(&reduced, &vel, &inner, &grad)
            }
        };
        converged &= ok;
        segment_rates.push(rate);
        value += dt * rate;
    }
    Ok(ActionReport { value, segment_rates, infeasible_segment: None, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{dv_rate, OccupationalMeasure};
    use crate::model::{stationary_distribution, Observable};

    fn setup() -> (StochasticMatrix, ProbVector, Observable) {
        let p = StochasticMatrix::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let mu = stationary_distribution(&p).unwrap();
        let w = Observable::new(2, 2, vec![0.0, 0.3, 0.6, 1.0]).unwrap();
        (p, mu, w)
    }

    #[test]
    fn resting_at_the_averaged_point_costs_nothing() {
        let (p, mu, w) = setup();
        let field = SlowField::relaxation(&w);
        let fbar = crate::model::product_mean(&w, &mu).unwrap();
        let gamma = PiecewiseLinearPath::new(vec![0.0, 1.0, 2.0], vec![vec![fbar]; 3]).unwrap();
        let r = action_functional(&gamma, &field, RateContext::Discrete { p: &p, mu: &mu }).unwrap();
        assert!(r.value.abs() < 1e-7, "{r:?}");
    }

    #[test]
    fn unreachable_velocity_is_infinite() {
        let (p, mu, w) = setup();
        let field = SlowField::relaxation(&w);
        let gamma = PiecewiseLinearPath::new(vec![0.0, 1.0], vec![vec![0.0], vec![5.0]]).unwrap();
        let r = action_functional(&gamma, &field, RateContext::Discrete { p: &p, mu: &mu }).unwrap();
        assert!(r.value.is_infinite());
        assert_eq!(r.infeasible_segment, Some(0));
    }

    #[test]
    fn additive_and_nonnegative() {
        let (p, mu, w) = setup();
        let field = SlowField::relaxation(&w);
        let ctx = RateContext::Discrete { p: &p, mu: &mu };
        let a = PiecewiseLinearPath::new(vec![0.0, 0.5], vec![vec![0.2], vec![0.3]]).unwrap();
        let b = PiecewiseLinearPath::new(vec![0.5, 1.0, 1.5], vec![vec![0.3], vec![0.35], vec![0.3]]).unwrap();
        let sa = action_functional(&a, &field, ctx).unwrap().value;
        let sb = action_functional(&b, &field, ctx).unwrap().value;
        let sab = action_functional(&a.concat(&b).unwrap(), &field, ctx).unwrap().value;
        assert!(sa >= 0.0 && sb >= 0.0);
        assert!((sab - sa - sb).abs() < 1e-6, "{sab} vs {sa} + {sb}");
    }

    /// Zooming grid search over `{η ∈ Δ₄ : Σ η W = target}`, parametrised by
    /// the first two weights.
    fn grid_oracle(p: &StochasticMatrix, mu: &ProbVector, w: &[f64], target: f64) -> f64 {
        let eval = |a: f64, b: f64| -> Option<f64> {
            let rest = 1.0 - a - b;
            let e = (target - w[0] * a - w[1] * b - w[2] * rest) / (w[3] - w[2]);
            let c = rest - e;
            if a < 0.0 || b < 0.0 || c < 0.0 || e < 0.0 {
                return None;
            }
            let eta = OccupationalMeasure::new(2, 2, vec![a, b, c, e]).ok()?;
            Some(dv_rate(&eta, p, mu).unwrap().value)
        };
        let (mut ca, mut cb, mut half, mut step): (f64, f64, f64, f64) = (0.5, 0.5, 0.5, 0.02);
        let mut best = f64::INFINITY;
        for _ in 0..4 {
            let (mut ba, mut bb) = (ca, cb);
            let k = (half / step).round() as i64;
            for i in -k..=k {
                for j in -k..=k {
                    let (a, b) = (ca + i as f64 * step, cb + j as f64 * step);
                    if let Some(v) = eval(a, b) {
                        if v < best {
                            best = v;
                            ba = a;
                            bb = b;
                        }
                    }
                }
            }
            ca = ba;
            cb = bb;
            half = 3.0 * step;
            step /= 8.0;
        }
        best
    }

    #[test]
    fn matches_simplex_grid_search() {
        let (p, mu, w) = setup();
        let field = SlowField::relaxation(&w);
        let (xi0, xi1) = (0.3, 0.5);
        let gamma = PiecewiseLinearPath::new(vec![0.0, 1.0], vec![vec![xi0], vec![xi1]]).unwrap();
        let r = action_functional(&gamma, &field, RateContext::Discrete { p: &p, mu: &mu }).unwrap();
        // Constraint at the midpoint: Σ η W − ξ = γ̇.
        let target = (xi1 - xi0) + 0.5 * (xi0 + xi1);
        let oracle = grid_oracle(&p, &mu, w.values(), target);
        assert!((r.value - oracle).abs() < 1e-3, "{} vs {oracle}", r.value);
    }

    #[test]
    fn continuous_two_state_closed_form() {
        // d = 1, ℓ = 1: the constraint pins η₁, so S = (√(aη₀) − √(bη₁))².
        let (a, b) = (1.0, 2.0);
        let l = GeneratorMatrix::two_state(a, b).unwrap();
        let mu = l.stationary().unwrap();
        let w = Observable::new(2, 1, vec![0.0, 1.0]).unwrap();
        let field = SlowField::relaxation(&w);
        let gamma = PiecewiseLinearPath::new(vec![0.0, 1.0], vec![vec![0.2], vec![0.4]]).unwrap();
        let r = action_functional(&gamma, &field, RateContext::Continuous { l: &l, mu: &mu, alpha1: 1.0 }).unwrap();
        let e1: f64 = 0.2 + 0.3;
        let want = ((a * (1.0 - e1)).sqrt() - (b * e1).sqrt()).powi(2);
        assert!((r.value - want).abs() < 1e-6, "{} vs {want}", r.value);
    }
}
