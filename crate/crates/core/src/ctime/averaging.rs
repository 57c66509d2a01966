//! Slow motions `Ξ^ε` driven by the tuple process, their averaged
//! counterparts, and the exponential-moment functional of the averaging
//! setup.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::path::{check_path_args, log_mean_exp, simulate, tuple_segments, JumpTable};
use super::{q_cont, AlphaSchedule, GeneratorMatrix};
use crate::error::{invalid, Error, Result};
use crate::markov::trailing_weights;
use crate::model::{decode_into, Observable, ProbVector};
use crate::sampling::{stream, Schedule, Source, TupleSampler};

type FieldFn = dyn Fn(&[f64], &[usize], &mut [f64]) + Send + Sync;

/// `F(ξ, x₁, …, x_ℓ) ∈ ℝ^d`, Lipschitz in `ξ`.
#[derive(Clone)]
pub struct SlowField {
    pub dim: usize,
    pub alphabet: usize,
    pub arity: usize,
    pub lipschitz_bound: f64,
    pub sup_bound: f64,
    f: Arc<FieldFn>,
}

impl std::fmt::Debug for SlowField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlowField")
            .field("dim", &self.dim)
            .field("alphabet", &self.alphabet)
            .field("arity", &self.arity)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl SlowField {
    pub fn new(
        dim: usize,
        alphabet: usize,
        arity: usize,
        lipschitz_bound: f64,
        sup_bound: f64,
        f: impl Fn(&[f64], &[usize], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 || alphabet == 0 || arity == 0 {
            return Err(invalid("field dimension, alphabet and arity must be positive"));
        }
        if !(lipschitz_bound >= 0.0) || !(sup_bound >= 0.0) {
            return Err(invalid("field bounds must be nonnegative"));
        }
        Ok(Self { dim, alphabet, arity, lipschitz_bound, sup_bound, f: Arc::new(f) })
    }

    /// `F(ξ, x) = W(x) − ξ` on the line; unbounded in `ξ`, so `sup_bound = ∞`.
    pub fn relaxation(w: &Observable) -> Self {
        let w = w.clone();
        Self {
            dim: 1,
            alphabet: w.alphabet_size(),
            arity: w.arity(),
            lipschitz_bound: 1.0,
            sup_bound: f64::INFINITY,
            f: Arc::new(move |xi, x, out| out[0] = w.get(x) - xi[0]),
        }
    }

    pub fn eval(&self, xi: &[f64], x: &[usize], out: &mut [f64]) {
        (self.f)(xi, x, out)
    }

    /// `F̄(ξ) = ∫ F(ξ, ·) dμ^{⊗ℓ}`.
    pub fn averaged(&self, xi: &[f64], mu: &ProbVector, out: &mut [f64]) {
        let weights = trailing_weights(mu, self.arity);
        let mut x = vec![0; self.arity];
        let mut tmp = vec![0.0; self.dim];
        out.iter_mut().for_each(|v| *v = 0.0);
        for (flat, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            decode_into(flat, self.alphabet, &mut x);
            self.eval(xi, &x, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += w * t;
            }
        }
    }
}

fn rk4(xi: &mut [f64], h: f64, f: &mut dyn FnMut(&[f64], &mut [f64])) {
    let d = xi.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut y = vec![0.0; d];
    f(xi, &mut k1);
    for i in 0..d {
        y[i] = xi[i] + 0.5 * h * k1[i];
    }
    f(&y, &mut k2);
    for i in 0..d {
        y[i] = xi[i] + 0.5 * h * k2[i];
    }
    f(&y, &mut k3);
    for i in 0..d {
        y[i] = xi[i] + h * k3[i];
    }
    f(&y, &mut k4);
    for i in 0..d {
        xi[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Linear stability limit of classical RK4 on the real axis.
const RK4_STABILITY: f64 = 2.78;

#[derive(Debug, Clone, Serialize)]
pub struct SlowMotion {
    /// Rescaled times `t` of `Ψ^ε(t)`.
    pub times: Vec<f64>,
    pub path: Vec<Vec<f64>>,
    pub averaged: Vec<Vec<f64>>,
    /// `ρ_{0,T}(Ψ^ε, Ψ̄)` over the recorded times.
    pub sup_distance: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Averaged path `dΨ̄/dt = F̄(Ψ̄)` recorded at `times`.
fn averaged_path(field: &SlowField, mu: &ProbVector, x0: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    const FINE: f64 = 1e-3;
    let mut xi = x0.to_vec();
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut rhs = |y: &[f64], o: &mut [f64]| field.averaged(y, mu, o);
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / FINE).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                rk4(&mut xi, h, &mut rhs);
            }
        }
        t = target;
        out.push(xi.clone());
    }
    out
}

/// Simulates `Ψ^ε` on `[0, T]` together with the averaged path. Discrete
/// sources iterate `Ξ(n+1) = Ξ(n) + εF(Ξ(n), X(q₁(n)), …)` for `[T/ε]` steps;
/// continuous ones integrate `dΞ/ds = εF(Ξ, X(q₁(s)), …)` on `[0, T/ε]` by
/// RK4 with step `min(ε, gap to the next jump)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_slow_motion(
    field: &SlowField,
    source: &Source,
    schedule: &Schedule,
    mu: &ProbVector,
    eps: f64,
    horizon: f64,
    x0: &[f64],
    seed: u64,
) -> Result<SlowMotion> {
    if !(eps > 0.0 && eps.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("ε and T must be positive and finite"));
    }
    if x0.len() != field.dim {
        return Err(invalid(format!("initial point has dimension {}, field has {}", x0.len(), field.dim)));
    }
    if field.alphabet != source.alphabet_size() || mu.len() != field.alphabet || field.arity != schedule.ell() {
        return Err(invalid("field, source, law and schedule disagree on alphabet or arity"));
    }
    let m = field.alphabet;
    let mut rng = stream(seed, 0);
    let d = field.dim;
    let mut tuple = vec![0usize; field.arity];
    let mut df = vec![0.0; d];
    let (times, path) = match (source, schedule) {
        (Source::Iid(_) | Source::Markov { .. }, Schedule::Discrete(q)) => {
            let steps = (horizon / eps * (1.0 + 1e-12)).floor() as u64;
            let mut xi = x0.to_vec();
            let mut times = vec![0.0];
            let mut path = vec![xi.clone()];
            if steps > 0 {
                let sampler = TupleSampler::new(source, q, 1, steps)?;
                let (mut values, mut tuples) = (Vec::new(), Vec::new());
                sampler.sample(&mut rng, &mut values, &mut tuples);
                for (n, &flat) in tuples.iter().enumerate() {
                    decode_into(flat, m, &mut tuple);
                    field.eval(&xi, &tuple, &mut df);
                    for i in 0..d {
                        xi[i] += eps * df[i];
                    }
                    times.push((n + 1) as f64 * eps);
                    path.push(xi.clone());
                }
            }
            (times, path)
        }
        (Source::Ctmc { l, x0: s0 }, Schedule::Continuous(a)) => {
            let fast = horizon / eps;
            let h_max = eps;
            if eps * h_max * field.lipschitz_bound > RK4_STABILITY {
                return Err(Error::StepUnstable { t: 0.0, estimate: eps * h_max * field.lipschitz_bound });
            }
            let reach = a.max_time(fast);
            check_path_args(l, *s0, reach)?;
            let p = simulate(&JumpTable::new(l), *s0, reach, &mut rng);
            let segs = tuple_segments(&p, a, m, fast)?;
            let mut xi = x0.to_vec();
            let mut times = vec![0.0];
            let mut path = vec![xi.clone()];
            let mut next_out = 1.0;
            let mut s = 0.0;
            for seg in &segs {
                decode_into(seg.tuple, m, &mut tuple);
                let mut rhs = |y: &[f64], o: &mut [f64]| {
                    field.eval(y, &tuple, o);
                    o.iter_mut().for_each(|v| *v *= eps);
                };
                while s < seg.end {
                    let stop = seg.end.min(next_out).min(s + h_max);
                    rk4(&mut xi, stop - s, &mut rhs);
                    s = stop;
                    if s >= next_out {
                        times.push(next_out * eps);
                        path.push(xi.clone());
                        next_out += 1.0;
                    }
                }
            }
            if *times.last().unwrap() < horizon * (1.0 - 1e-12) {
                times.push(horizon);
                path.push(xi);
            }
            (times, path)
        }
        _ => return Err(invalid("discrete sources need an integer schedule, continuous ones a real schedule")),
    };
    let averaged = averaged_path(field, mu, x0, &times);
    let sup_distance = path.iter().zip(&averaged).map(|(a, b)| distance(a, b)).fold(0.0, f64::max);
    Ok(SlowMotion { times, path, averaged, sup_distance })
}

/// `W_t` piecewise constant on `[breaks[i], breaks[i+1])`.
#[derive(Debug, Clone)]
pub struct TimeVaryingPotential {
    pub breaks: Vec<f64>,
    pub pieces: Vec<Observable>,
}

impl TimeVaryingPotential {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Observable>) -> Result<Self> {
        if breaks.len() != pieces.len() + 1 || pieces.is_empty() {
            return Err(invalid("need one more break than pieces"));
        }
        if breaks[0] != 0.0 || breaks.windows(2).any(|w| !(w[0] < w[1])) || !breaks.iter().all(|b| b.is_finite()) {
            return Err(invalid("breaks must start at 0 and increase strictly"));
        }
        let (m, a) = (pieces[0].alphabet_size(), pieces[0].arity());
        if pieces.iter().any(|p| p.alphabet_size() != m || p.arity() != a) {
            return Err(invalid("all pieces must share alphabet and arity"));
        }
        Ok(Self { breaks, pieces })
    }

    pub fn constant(w: Observable, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![w])
    }

    pub fn horizon(&self) -> f64 {
        *self.breaks.last().unwrap()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpMomentReport {
    /// `ε ln Ê exp(ε⁻¹ ∫₀ᵀ W_t(X(q(t/ε))) dt)`.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `∫₀ᵀ Q_cont(W_t) dt`.
    pub rhs: f64,
    pub gap: f64,
}

/// Both sides of the exponential-moment identity of the averaging setup.
#[allow(clippy::too_many_arguments)]
pub fn exp_moment_functional(
    potential: &TimeVaryingPotential,
    l: &GeneratorMatrix,
    mu: &ProbVector,
    schedule: &AlphaSchedule,
    x0: usize,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<ExpMomentReport> {
    if schedule.k != 1 {
        return Err(Error::WrongK { expected: 1, got: schedule.k });
    }
    if potential.pieces[0].arity() != schedule.ell {
        return Err(invalid("potential arity differs from the schedule's ℓ"));
    }
    if !(eps > 0.0) || samples == 0 {
        return Err(invalid("ε must be positive and samples at least 1"));
    }
    let alpha1 = schedule.alphas[0];
    let rhs = potential
        .pieces
        .iter()
        .zip(potential.breaks.windows(2))
        .map(|(w, b)| Ok((b[1] - b[0]) * q_cont(l, mu, w, alpha1)?))
        .sum::<Result<f64>>()?;
    let m = l.size();
    let fast = potential.horizon() / eps;
    let reach = schedule.max_time(fast);
    check_path_args(l, x0, reach)?;
    let fast_breaks: Vec<f64> = potential.breaks.iter().map(|b| b / eps).collect();
    let table = JumpTable::new(l);
    let exponents: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let p = simulate(&table, x0, reach, &mut stream(seed, i as u64));
            let segs = tuple_segments(&p, schedule, m, fast)?;
            let mut total = 0.0;
            let mut cell = 0;
            for seg in segs {
                let mut s = seg.start;
                while s < seg.end {
                    while fast_breaks[cell + 1] <= s && cell + 1 < potential.pieces.len() {
                        cell += 1;
                    }
                    let stop = seg.end.min(fast_breaks[cell + 1]);
                    let stop = if stop <= s { seg.end } else { stop };
                    total += (stop - s) * potential.pieces[cell].values()[seg.tuple];
                    s = stop;
                }
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let (lme, se) = log_mean_exp(&exponents);
    let lhs = eps * lme;
    Ok(ExpMomentReport { lhs, lhs_std_error: eps * se, rhs, gap: (lhs - rhs).abs() })
}
