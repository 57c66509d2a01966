use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{neumaier_sum, prime_basis, ChainGraph, SmoothLevels};
use crate::error::{invalid, Error, Result};
use crate::model::{Observable, ProbVector};

/// Largest configuration count the exact enumerator accepts.
pub const EXACT_CAP: f64 = 1e8;
/// Default sample count of the Monte-Carlo strategy.
pub const MC_SAMPLES: usize = 1_000_000;
const MC_CHUNK: usize = 10_000;
const DEFAULT_MC_SEED: u64 = 0x1a77_1ce5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// Full configuration sum over the chain's variables.
    Exact,
    /// `μᵀ K^l 1` with `K(x, y) = e^{V(x, y)} μ(y)`; `k = 2` only.
    Transfer,
    MonteCarlo { samples: usize, seed: u64 },
    /// Transfer for `k = 2`, exact while feasible, Monte Carlo otherwise.
    Auto,
}

/// `ln R_l(V)` with optional `d ln R_l / dλ` along a direction `dV`.
#[derive(Debug, Clone, Serialize)]
pub struct ChainMoment {
    pub level: usize,
    pub log_r: f64,
    pub derivative: Option<f64>,
    /// Zero for the deterministic strategies.
    pub std_error: f64,
    pub strategy: Strategy,
}

struct Enumerator<'a> {
    m: usize,
    support: Vec<usize>,
    log_mu: Vec<f64>,
    finishing: Vec<Vec<usize>>,
    terms: &'a [Vec<usize>],
    v: &'a [f64],
    dv: Option<&'a [f64]>,
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.comp += if self.sum.abs() >= x.abs() { (self.sum - t) + x } else { (x - t) + self.sum };
        self.sum = t;
    }

    fn scale(&mut self, f: f64) {
        self.sum *= f;
        self.comp *= f;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Streaming log-sum-exp with a weighted mean of a companion quantity.
#[derive(Clone, Copy)]
struct LogAcc {
    top: f64,
    s: Compensated,
    d: Compensated,
}

impl LogAcc {
    fn new() -> Self {
        let zero = Compensated { sum: 0.0, comp: 0.0 };
        Self { top: f64::NEG_INFINITY, s: zero, d: zero }
    }

    fn push(&mut self, logw: f64, d: f64) {
        if logw == f64::NEG_INFINITY {
            return;
        }
        if logw > self.top {
            let scale = (self.top - logw).exp();
            self.s.scale(scale);
            self.d.scale(scale);
            self.top = logw;
        }
        let e = (logw - self.top).exp();
        self.s.add(e);
        self.d.add(e * d);
    }

    fn finish(self) -> (f64, f64) {
        let s = self.s.value();
        (self.top + s.ln(), self.d.value() / s)
    }
}

impl Enumerator<'_> {
    fn local(&self, i: usize, assign: &[usize]) -> (f64, f64) {
        let mut a = 0.0;
        let mut da = 0.0;
        for &t in &self.finishing[i] {
            let idx = self.terms[t].iter().fold(0, |acc, &var| acc * self.m + assign[var]);
            a += self.v[idx];
            if let Some(dv) = self.dv {
                da += dv[idx];
            }
        }
        (a, da)
    }

    fn rec(&self, i: usize, assign: &mut [usize]) -> (f64, f64) {
        if i == assign.len() {
            return (0.0, 0.0);
        }
        let mut acc = LogAcc::new();
        for &x in &self.support {
            assign[i] = x;
            let (a, da) = self.local(i, assign);
            let (lz, dz) = self.rec(i + 1, assign);
            acc.push(self.log_mu[x] + a + lz, da + dz);
        }
        acc.finish()
    }
}

/// `ln E exp Σ_t V(x_{t₁}, …, x_{t_k})` over i.i.d. `μ`-distributed
/// variables `x_0, …, x_{n_vars−1}`, with the tilted mean of `Σ_t dV` when
/// `dv` is given.
pub fn log_partition(
    n_vars: usize,
    terms: &[Vec<usize>],
    v: &Observable,
    dv: Option<&Observable>,
    mu: &ProbVector,
) -> Result<(f64, Option<f64>)> {
    let m = mu.len();
    let support: Vec<usize> = (0..m).filter(|&x| mu.weights()[x] > 0.0).collect();
    let configs = (support.len() as f64).powi(n_vars as i32);
    if configs > EXACT_CAP {
        return Err(Error::TooLarge { what: "exact configuration count", size: configs, cap: EXACT_CAP });
    }
    let mut finishing = vec![Vec::new(); n_vars];
    for (t, vars) in terms.iter().enumerate() {
        let last = *vars.iter().max().ok_or_else(|| invalid("empty term"))?;
        if last >= n_vars {
            return Err(invalid("term refers to a missing variable"));
        }
        finishing[last].push(t);
    }
    let e = Enumerator {
        m,
        support,
        log_mu: mu.weights().iter().map(|w| w.ln()).collect(),
        finishing,
        terms,
        v: v.values(),
        dv: dv.map(|d| d.values()),
    };
    // Split the first few variables across threads.
    let mut depth = 0;
    while depth < n_vars && (e.support.len() as f64).powi(depth as i32) < 256.0 {
        depth += 1;
    }
    let n_prefix = e.support.len().pow(depth as u32);
    let parts: Vec<(f64, f64)> = (0..n_prefix)
        .into_par_iter()
        .map(|code| {
            let mut assign = vec![0usize; n_vars];
            let mut c = code;
            for slot in assign[..depth].iter_mut().rev() {
                *slot = e.support[c % e.support.len()];
                c /= e.support.len();
            }
            let mut logw = 0.0;
            let mut d = 0.0;
            for i in 0..depth {
                let (a, da) = e.local(i, &assign);
                logw += e.log_mu[assign[i]] + a;
                d += da;
            }
            let (lz, dz) = e.rec(depth, &mut assign);
            (logw + lz, d + dz)
        })
        .collect();
    let mut acc = LogAcc::new();
    for (lw, d) in parts {
        acc.push(lw, d);
    }
    let (lz, d) = acc.finish();
    Ok((lz, dv.map(|_| d)))
}

fn transfer_moment(v: &Observable, dv: Option<&Observable>, mu: &ProbVector, l: usize) -> (f64, Option<f64>) {
    let m = mu.len();
    let k = DMatrix::from_fn(m, m, |x, y| (v.values()[x * m + y]).exp() * mu.weights()[y]);
    let mut alphas = Vec::with_capacity(l + 1);
    let mut a = DVector::from_column_slice(mu.weights());
    let mut log_scale = 0.0;
    alphas.push(a.clone());
    for _ in 0..l {
        a = k.tr_mul(&a);
        let s = a.amax();
        a /= s;
        log_scale += s.ln();
        alphas.push(a.clone());
    }
    let log_r = log_scale + a.sum().ln();
    let deriv = dv.map(|dv| {
        let kd = DMatrix::from_fn(m, m, |x, y| k[(x, y)] * dv.values()[x * m + y]);
        let mut beta = DVector::from_element(m, 1.0);
        let mut total = 0.0;
        for i in (0..l).rev() {
            let num = alphas[i].dot(&(&kd * &beta));
            let kb = &k * &beta;
            total += num / alphas[i].dot(&kb);
            beta = kb.clone() / kb.amax();
        }
        total
    });
    (log_r, deriv)
}

fn monte_carlo_moment(
    graph: &ChainGraph,
    v: &Observable,
    dv: Option<&Observable>,
    mu: &ProbVector,
    samples: usize,
    seed: u64,
) -> Result<(f64, Option<f64>, f64)> {
    let n_vars = graph.variables().len();
    let terms = graph.terms();
    let dist = WeightedIndex::new(mu.weights()).map_err(|e| invalid(e.to_string()))?;
    let m = mu.len();
    let n_chunks = samples.div_ceil(MC_CHUNK);
    let stream_base = (graph.level() as u64) << 32;
    let chunks: Vec<Vec<(f64, f64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_base | c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut x = vec![0usize; n_vars];
            (0..count)
                .map(|_| {
                    for xi in x.iter_mut() {
                        *xi = dist.sample(&mut rng);
                    }
                    let mut s = 0.0;
                    let mut ds = 0.0;
                    for t in &terms {
                        let idx = t.iter().fold(0, |acc, &var| acc * m + x[var]);
                        s += v.values()[idx];
                        if let Some(dv) = dv {
                            ds += dv.values()[idx];
                        }
                    }
                    (s, ds)
                })
                .collect()
        })
        .collect();
    let all: Vec<(f64, f64)> = chunks.into_iter().flatten().collect();
    let top = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = all.iter().map(|p| (p.0 - top).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = var.sqrt() / (n.sqrt() * mean);
    let deriv = dv.map(|_| all.iter().zip(&w).map(|(p, wi)| wi * p.1).sum::<f64>() / (mean * n));
    Ok((top + mean.ln(), deriv, se))
}

/// `ln R_l(V)` on the canonical chain of level `l`.
pub fn chain_partition_function(
    v: &Observable,
    mu: &ProbVector,
    levels: &SmoothLevels,
    l: usize,
    strategy: Strategy,
) -> Result<ChainMoment> {
    chain_moment(v, None, mu, levels, l, strategy)
}

/// As [`chain_partition_function`], also differentiating along `dv`.
pub fn chain_moment(
    v: &Observable,
    dv: Option<&Observable>,
    mu: &ProbVector,
    levels: &SmoothLevels,
    l: usize,
    strategy: Strategy,
) -> Result<ChainMoment> {
    let k = levels.basis.k;
    if v.arity() != k {
        return Err(invalid(format!("observable arity {} differs from k = {k}", v.arity())));
    }
    v.check_against(mu)?;
    let resolved = match strategy {
        Strategy::Auto if k == 2 => Strategy::Transfer,
        Strategy::Auto => {
            let g = ChainGraph::canonical(levels, l)?;
            let support = mu.weights().iter().filter(|w| **w > 0.0).count() as f64;
            if support.powi(g.variables().len() as i32) <= EXACT_CAP {
                Strategy::Exact
            } else {
                Strategy::MonteCarlo { samples: MC_SAMPLES, seed: DEFAULT_MC_SEED }
            }
        }
        s => s,
    };
    let (log_r, derivative, std_error) = match resolved {
        Strategy::Transfer => {
            if k != 2 {
                return Err(Error::WrongK { expected: 2, got: k });
            }
            if l == 0 {
                return Err(invalid("level must be at least 1"));
            }
            let (lr, d) = transfer_moment(v, dv, mu, l);
            (lr, d, 0.0)
        }
        Strategy::Exact => {
            let g = ChainGraph::canonical(levels, l)?;
            let (lr, d) = log_partition(g.variables().len(), &g.terms(), v, dv, mu)?;
            (lr, d, 0.0)
        }
        Strategy::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(invalid("Monte-Carlo strategy needs at least 2 samples"));
            }
            let g = ChainGraph::canonical(levels, l)?;
            monte_carlo_moment(&g, v, dv, mu, samples, seed)?
        }
        Strategy::Auto => unreachable!(),
    };
    // A zero potential leaves a stochastic operator, whose root is exactly 1.
    let log_r = if v.sup_norm() == 0.0 { 0.0 } else { log_r };
    debug_assert!(log_r.abs() <= l as f64 * v.sup_norm() * (1.0 + 1e-12) + 1e-12);
    Ok(ChainMoment { level: l, log_r, derivative, std_error, strategy: resolved })
}

/// Exact `(1/N) Σ_{a ∈ A_N} ln Z_{N,a}(V)`, each factor by full enumeration
/// on its own chain `B_N(a)`.
pub fn brute_force_log_moment(v: &Observable, mu: &ProbVector, n: u64) -> Result<f64> {
    v.check_against(mu)?;
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    let basis = prime_basis(v.arity())?;
    let coprime: Vec<u64> = (1..=n).filter(|&a| basis.is_coprime(a as u128)).collect();
    let parts: Vec<f64> = coprime
        .par_iter()
        .map(|&a| {
            let g = ChainGraph::build(&basis, a as u128, n as f64)?;
            Ok(log_partition(g.variables().len(), &g.terms(), v, None, mu)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(neumaier_sum(parts) / n as f64)
}

/// `(1/N) ln E exp Σ_{n≤N} V(X(n), …, X(kn))` by enumerating every
/// configuration of `X(1..kN)`. Limited to `N ≤ 10`, `kN log₂ M ≤ 24`.
pub fn direct_enumeration(v: &Observable, mu: &ProbVector, n: usize) -> Result<f64> {
    v.check_against(mu)?;
    let k = v.arity();
    let bits = (k * n) as f64 * (mu.len() as f64).log2();
    if n == 0 || n > 10 || bits > 24.0 + 1e-9 {
        return Err(Error::TooLarge { what: "direct enumeration (k N log2 M)", size: bits, cap: 24.0 });
    }
    let terms: Vec<Vec<usize>> = (1..=n).map(|i| (1..=k).map(|j| j * i - 1).collect()).collect();
    let m = mu.len();
    let len = m.pow((k * n) as u32);
    let mut acc = LogAcc::new();
    let mut x = vec![0usize; k * n];
    for code in 0..len {
        let mut c = code;
        for slot in x.iter_mut().rev() {
            *slot = c % m;
            c /= m;
        }
        let mut lw = 0.0;
        for &xi in &x {
            lw += mu.weights()[xi].ln();
        }
        let s: f64 = terms.iter().map(|t| v.values()[t.iter().fold(0, |a, &var| a * m + x[var])]).sum();
        acc.push(lw + s, 0.0);
    }
    Ok(acc.finish().0 / n as f64)
}
