//! First- and second-level large deviations for `k = 1` Markov chains:
//! the transfer operator `R(W)`, `Q(W) = ln r(R(W))`, finite-`N` log
//! moments, the Donsker–Varadhan functional `I(η)` and its duality with `Q`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::legendre::{legendre_transform, LegendreConfig, LogMoment, RateFunction};
use crate::linalg::{perron_derivative, perron_pair, perron_root};
use crate::model::{
    reduce_observable, LinearFamily, Observable, ObservableFamily, ProbVector, ReductionMode,
    StochasticMatrix,
};
use crate::optim::{lbfgs, log_sum_exp, softmax, LbfgsConfig};

/// `R(x, y) = P(x, y) Ŵ(y)` with `Ŵ = exp(W^{(1)})`.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub entries: DMatrix<f64>,
    pub w_hat: Vec<f64>,
}

fn check_shapes(p: &StochasticMatrix, mu: &ProbVector, w: &Observable) -> Result<()> {
    if p.size() != mu.len() || w.alphabet_size() != mu.len() {
        return Err(invalid(format!(
            "size mismatch: P is {0}x{0}, mu has {1} weights, observable is over {2} symbols",
            p.size(),
            mu.len(),
            w.alphabet_size()
        )));
    }
    Ok(())
}

pub fn transfer_operator(p: &StochasticMatrix, w: &Observable, mu: &ProbVector) -> Result<TransferMatrix> {
    check_shapes(p, mu, w)?;
    let log_w = reduce_observable(w, mu, 1, ReductionMode::Log)?;
    let w_hat: Vec<f64> = log_w.values().iter().map(|v| v.exp()).collect();
    let n = p.size();
    let entries = DMatrix::from_fn(n, n, |x, y| p.get(x, y) * w_hat[y]);
    Ok(TransferMatrix { entries, w_hat })
}

/// The first-coordinate log-reduction `W^{(1)}` and its derivative along
/// `dW`: `Σ_t π(t | y) dW(y, t)` with `π(t | y) ∝ μ^⊗(t) e^{W(y, t)}`.
fn reduced_with_derivative(w: &Observable, dw: &Observable, mu: &ProbVector) -> (Vec<f64>, Vec<f64>) {
    let m = mu.len();
    let block = w.len() / m;
    let weights = trailing_weights(mu, w.arity() - 1);
    let mut value = Vec::with_capacity(m);
    let mut deriv = Vec::with_capacity(m);
    for y in 0..m {
        let vals = &w.values()[y * block..(y + 1) * block];
        let dvals = &dw.values()[y * block..(y + 1) * block];
        let top = vals.iter().zip(&weights).filter(|(_, p)| **p > 0.0).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        let mut ds = 0.0;
        for ((v, d), p) in vals.iter().zip(dvals).zip(&weights) {
            if *p > 0.0 {
                let e = p * (v - top).exp();
                s += e;
                ds += e * d;
            }
        }
        value.push(top + s.ln());
        deriv.push(ds / s);
    }
    (value, deriv)
}

/// `μ^⊗j` as a flat row-major tensor.
pub(crate) fn trailing_weights(mu: &ProbVector, j: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..j {
        out = out.iter().flat_map(|a| mu.weights().iter().map(move |b| a * b)).collect();
    }
    out
}

/// `Q(W) = ln r(R(W))`.
pub fn q_functional(p: &StochasticMatrix, mu: &ProbVector, w: &Observable) -> Result<f64> {
    let r = transfer_operator(p, w, mu)?;
    Ok(perron_root(&r.entries)?.value.ln())
}

/// `Q(W)` and its directional derivative along `dW`.
pub fn q_functional_with_derivative(
    p: &StochasticMatrix,
    mu: &ProbVector,
    w: &Observable,
    dw: &Observable,
) -> Result<(f64, f64)> {
    check_shapes(p, mu, w)?;
    let (log_w, dlog_w) = reduced_with_derivative(w, dw, mu);
    let n = p.size();
    let r = DMatrix::from_fn(n, n, |x, y| p.get(x, y) * log_w[y].exp());
    let dr = DMatrix::from_fn(n, n, |x, y| r[(x, y)] * dlog_w[y]);
    let pair = perron_pair(&r)?;
    Ok((pair.value.ln(), perron_derivative(&pair, &dr) / pair.value))
}

/// `λ ↦ Q(W_λ)` for a Markov chain.
pub struct MarkovLogMoment<'a, F: ObservableFamily> {
    pub p: &'a StochasticMatrix,
    pub mu: &'a ProbVector,
    pub family: F,
}

impl<F: ObservableFamily> LogMoment for MarkovLogMoment<'_, F> {
    fn value(&self, lambda: f64) -> Result<f64> {
        q_functional(self.p, self.mu, &self.family.at(lambda))
    }

    fn derivative(&self, lambda: f64) -> Result<f64> {
        match self.family.derivative(lambda) {
            Some(dw) => Ok(q_functional_with_derivative(self.p, self.mu, &self.family.at(lambda), &dw)?.1),
            None => {
                let h = 1e-5 * lambda.abs().max(1.0);
                Ok((self.value(lambda + h)? - self.value(lambda - h)?) / (2.0 * h))
            }
        }
    }
}

/// Exact `(1/N) ln (R(W)^N 1)(x₀)` by repeated matrix–vector products.
pub fn finite_n_log_moment(p: &StochasticMatrix, mu: &ProbVector, w: &Observable, x0: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    if x0 >= p.size() {
        return Err(invalid(format!("start symbol {x0} outside alphabet of size {}", p.size())));
    }
    let r = transfer_operator(p, w, mu)?;
    let mut v = DVector::from_element(p.size(), 1.0);
    let mut log_scale = 0.0;
    for _ in 0..n {
        v = &r.entries * v;
        let s = v.amax();
        v /= s;
        log_scale += s.ln();
    }
    Ok((log_scale + v[x0].ln()) / n as f64)
}

/// Rate function of `S_N / N` for `F` over a `k = 1` chain.
pub fn rate_function_markov(
    p: &StochasticMatrix,
    mu: &ProbVector,
    f: &Observable,
    u_grid: &[f64],
    cfg: &LegendreConfig,
) -> Result<RateFunction> {
    let mut cfg = *cfg;
    if cfg.u_bounds.is_none() {
        cfg.u_bounds = Some(observable_range(f));
    }
    let q = MarkovLogMoment { p, mu, family: LinearFamily { base: f.clone() } };
    legendre_transform(&q, u_grid, &cfg)
}

pub(crate) fn observable_range(f: &Observable) -> (f64, f64) {
    let lo = f.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Probability tensor over `M^ℓ` (empirical or candidate occupational measure).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationalMeasure {
    m: usize,
    arity: usize,
    weights: Vec<f64>,
}

impl OccupationalMeasure {
    pub fn new(m: usize, arity: usize, weights: Vec<f64>) -> Result<Self> {
        let shape = Observable::new(m, arity, weights.clone())?;
        if weights.iter().any(|w| *w < 0.0) {
            return Err(invalid("occupational weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("occupational weights sum to {total}, expected 1")));
        }
        Ok(Self { m: shape.alphabet_size(), arity, weights })
    }

    /// `μ^⊗ℓ`.
    pub fn product(mu: &ProbVector, arity: usize) -> Self {
        Self { m: mu.len(), arity, weights: trailing_weights(mu, arity) }
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ F dη`.
    pub fn integrate(&self, f: &Observable) -> f64 {
        self.weights.iter().zip(f.values()).map(|(a, b)| a * b).sum()
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        let block = self.weights.len() / self.m;
        self.weights.chunks_exact(block).map(|c| c.iter().sum()).collect()
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Maximising test function `v = ln u`.
    #[serde(skip)]
    pub v: Vec<f64>,
}

/// Objective `Σ_{x₁} η₁(x₁) N_v(x₁) − ⟨η, v⟩` whose negated infimum is `I(η)`.
/// `N_v(x) = ln Σ_y P(x, y) Σ_t μ^⊗(t) e^{v(y, t)}`.
pub(crate) struct DvObjective<'a> {
    pub p: &'a DMatrix<f64>,
    pub eta: &'a [f64],
    pub eta1: Vec<f64>,
    pub tw: Vec<f64>,
    pub m: usize,
}

impl<'a> DvObjective<'a> {
    pub(crate) fn new(p: &'a DMatrix<f64>, mu: &ProbVector, eta: &'a [f64], arity: usize) -> Self {
        let m = mu.len();
        let block = eta.len() / m;
        let eta1 = eta.chunks_exact(block).map(|c| c.iter().sum()).collect();
        Self { p, eta, eta1, tw: trailing_weights(mu, arity - 1), m }
    }

    /// `ln Σ_t μ^⊗(t) e^{v(y, t)}` per `y`.
    fn log_s(&self, v: &[f64]) -> Vec<f64> {
        let block = self.tw.len();
        (0..self.m)
            .map(|y| {
                log_sum_exp(
                    v[y * block..(y + 1) * block]
                        .iter()
                        .zip(&self.tw)
                        .filter(|(_, w)| **w > 0.0)
                        .map(|(a, w)| a + w.ln()),
                )
            })
            .collect()
    }

    /// `N_v(x)` per `x`.
    pub(crate) fn log_n(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ls = self.log_s(v);
        let n = (0..self.m)
            .map(|x| {
                log_sum_exp((0..self.m).filter(|&y| self.p[(x, y)] > 0.0).map(|y| self.p[(x, y)].ln() + ls[y]))
            })
            .collect();
        (n, ls)
    }

    pub(crate) fn eval(&self, v: &[f64], grad: &mut [f64]) -> f64 {
        let (n, ls) = self.log_n(v);
        let block = self.tw.len();
        let mut value = -self.eta.iter().zip(v).map(|(a, b)| if *a > 0.0 { a * b } else { 0.0 }).sum::<f64>();
        for x in 0..self.m {
            if self.eta1[x] > 0.0 {
                value += self.eta1[x] * n[x];
            }
        }
        for y in 0..self.m {
            let a: f64 = (0..self.m)
                .filter(|&x| self.eta1[x] > 0.0 && self.p[(x, y)] > 0.0)
                .map(|x| self.eta1[x] * self.p[(x, y)] * (ls[y] - n[x]).exp())
                .sum();
            for t in 0..block {
                let i = y * block + t;
                let pi = if self.tw[t] > 0.0 { self.tw[t] * (v[i] - ls[y]).exp() } else { 0.0 };
                grad[i] = a * pi - self.eta[i];
            }
        }
        value
    }
}

const DV_RESTARTS: usize = 8;
const DV_SEED: u64 = 0x5eed_d0c5;

pub(crate) fn dv_maximise(obj: &DvObjective, len: usize, warm: Option<&[f64]>, restarts: usize) -> RateEstimate {
    let cfg = LbfgsConfig { max_iter: 20_000, grad_tol: 1e-11, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(DV_SEED);
    let mut best: Option<RateEstimate> = None;
    for start in 0..restarts {
        let x0: Vec<f64> = match (start, warm) {
            (0, Some(w)) => w.to_vec(),
            (0, None) => vec![0.0; len],
            _ => (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let res = lbfgs(|v, g| obj.eval(v, g), x0, &cfg);
        let est = RateEstimate { value: -res.value, converged: res.converged, iterations: res.iterations, v: res.x };
        best = match best {
            Some(b) if b.value >= est.value => Some(RateEstimate { converged: b.converged || est.converged, ..b }),
            _ => Some(est),
        };
    }
    let mut b = best.expect("at least one start");
    b.value = b.value.max(0.0);
    b
}

/// Donsker–Varadhan functional `I(η)` for a `k = 1` chain.
pub fn dv_rate(eta: &OccupationalMeasure, p: &StochasticMatrix, mu: &ProbVector) -> Result<RateEstimate> {
    if eta.alphabet_size() != p.size() || mu.len() != p.size() {
        return Err(invalid("occupational measure, chain and law must share the alphabet"));
    }
    let obj = DvObjective::new(p.matrix(), mu, eta.weights(), eta.arity());
    Ok(dv_maximise(&obj, eta.weights().len(), None, DV_RESTARTS))
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub q: f64,
    /// `∫ W dη* − I(η*)`.
    pub dual_value: f64,
    /// `Q − dual`, nonnegative up to optimisation error.
    pub signed_gap: f64,
    pub gap: f64,
    pub eta: Vec<f64>,
    pub converged: bool,
}

/// Maximises `∫ W dη − I(η)` over the simplex (softmax parametrisation) and
/// compares with `Q(W)`. `I` is supplied as a warm-startable inner solver.
pub(crate) fn duality_ascent(
    w: &Observable,
    q: f64,
    inner: &dyn Fn(&[f64], Option<&[f64]>) -> RateEstimate,
    grad_of_i: &dyn Fn(&[f64], &RateEstimate) -> Vec<f64>,
) -> DualityReport {
    use std::cell::RefCell;
    let len = w.len();
    let warm: RefCell<Option<Vec<f64>>> = RefCell::new(None);
    let cfg = LbfgsConfig { max_iter: 2_000, grad_tol: 1e-10, ..Default::default() };
    let res = lbfgs(
        |theta, g| {
            let eta = softmax(theta);
            let est = inner(&eta, warm.borrow().as_deref());
            let di = grad_of_i(&eta, &est);
            *warm.borrow_mut() = Some(est.v.clone());
            let dg: Vec<f64> = w.values().iter().zip(&di).map(|(a, b)| a - b).collect();
            let mean: f64 = eta.iter().zip(&dg).map(|(e, d)| e * d).sum();
            for i in 0..len {
                g[i] = -eta[i] * (dg[i] - mean);
            }
            -(eta.iter().zip(w.values()).map(|(a, b)| a * b).sum::<f64>() - est.value)
        },
        vec![0.0; len],
        &cfg,
    );
    let eta = softmax(&res.x);
    let est = inner(&eta, None);
    let dual_value = eta.iter().zip(w.values()).map(|(a, b)| a * b).sum::<f64>() - est.value;
    DualityReport {
        q,
        dual_value,
        signed_gap: q - dual_value,
        gap: (q - dual_value).abs(),
        eta,
        converged: res.converged && est.converged,
    }
}

/// Checks `Q(W) = sup_η (∫ W dη − I(η))` numerically.
pub fn duality_check(w: &Observable, p: &StochasticMatrix, mu: &ProbVector) -> Result<DualityReport> {
    check_shapes(p, mu, w)?;
    let q = q_functional(p, mu, w)?;
    let arity = w.arity();
    let pm = p.matrix();
    let inner = |eta: &[f64], warm: Option<&[f64]>| {
        let obj = DvObjective::new(pm, mu, eta, arity);
        dv_maximise(&obj, eta.len(), warm, if warm.is_some() { 1 } else { 2 })
    };
    // Envelope theorem: ∂I/∂η(x) = v*(x) − N_{v*}(x₁).
    let grad = |eta: &[f64], est: &RateEstimate| {
        let obj = DvObjective::new(pm, mu, eta, arity);
        let (n, _) = obj.log_n(&est.v);
        let block = eta.len() / mu.len();
        est.v.iter().enumerate().map(|(i, v)| v - n[i / block]).collect()
    };
    Ok(duality_ascent(w, q, &inner, &grad))
}
