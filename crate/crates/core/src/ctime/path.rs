//! Gillespie paths and the piecewise-constant tuple process
//! `t ↦ (X(q₁(t)), …, X(q_ℓ(t)))` read off a single path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{AlphaSchedule, GeneratorMatrix};
use crate::error::{invalid, Result};
use crate::sampling::{check_budget, stream};

/// Expected jump count above which a path is refused.
pub const JUMP_CAP: f64 = 1e8;

/// A right-continuous path: `states[i]` holds on `[times[i], times[i+1])`.
#[derive(Debug, Clone, Serialize)]
pub struct CtmcPath {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl CtmcPath {
    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.times.partition_point(|&s| s <= t).saturating_sub(1)]
    }

    /// Fraction of `[0, horizon]` spent in each state.
    pub fn occupation(&self, m: usize) -> Vec<f64> {
        let mut occ = vec![0.0; m];
        for (i, &x) in self.states.iter().enumerate() {
            let end = self.times.get(i + 1).copied().unwrap_or(self.horizon);
            occ[x] += end - self.times[i];
        }
        occ.iter().map(|v| v / self.horizon).collect()
    }

    /// `∫₀^horizon v(X_s) ds`.
    pub fn integrate(&self, v: &[f64]) -> f64 {
        self.states
            .iter()
            .enumerate()
            .map(|(i, &x)| (self.times.get(i + 1).copied().unwrap_or(self.horizon) - self.times[i]) * v[x])
            .sum()
    }
}

/// Per state, the reachable targets and their cumulative jump rates.
pub(crate) struct JumpTable {
    exit: Vec<f64>,
    targets: Vec<Vec<usize>>,
    cum: Vec<Vec<f64>>,
}

impl JumpTable {
    pub(crate) fn new(l: &GeneratorMatrix) -> Self {
        let n = l.size();
        let a = l.rates();
        let mut targets = Vec::with_capacity(n);
        let mut cum = Vec::with_capacity(n);
        for x in 0..n {
            let ys: Vec<usize> = (0..n).filter(|&y| y != x && a[(x, y)] > 0.0).collect();
            let mut acc = 0.0;
            cum.push(
                ys.iter()
                    .map(|&y| {
                        acc += a[(x, y)];
                        acc
                    })
                    .collect(),
            );
            targets.push(ys);
        }
        Self { exit: (0..n).map(|x| l.exit_rate(x)).collect(), targets, cum }
    }

    fn next(&self, x: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
        let q = self.exit[x];
        if q <= 0.0 || self.targets[x].is_empty() {
            return (f64::INFINITY, x);
        }
        let u: f64 = rng.random();
        let hold = -(1.0 - u).ln() / q;
        let row = &self.cum[x];
        let target = rng.random::<f64>() * row[row.len() - 1];
        let i = row.partition_point(|&c| c <= target).min(row.len() - 1);
        (hold, self.targets[x][i])
    }
}

pub(crate) fn simulate(table: &JumpTable, x0: usize, horizon: f64, rng: &mut ChaCha8Rng) -> CtmcPath {
    let mut times = vec![0.0];
    let mut states = vec![x0];
    let mut t = 0.0;
    let mut x = x0;
    loop {
        let (hold, y) = table.next(x, rng);
        t += hold;
        if t >= horizon {
            break;
        }
        x = y;
        times.push(t);
        states.push(x);
    }
    CtmcPath { times, states, horizon }
}

pub(crate) fn check_path_args(l: &GeneratorMatrix, x0: usize, horizon: f64) -> Result<()> {
    if x0 >= l.size() {
        return Err(invalid(format!("start symbol {x0} outside alphabet of size {}", l.size())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon must be positive and finite"));
    }
    check_budget(l.max_exit_rate() * horizon, JUMP_CAP)
}

/// Exact simulation of the chain on `[0, horizon]`.
pub fn gillespie(l: &GeneratorMatrix, x0: usize, horizon: f64, rng: &mut ChaCha8Rng) -> Result<CtmcPath> {
    check_path_args(l, x0, horizon)?;
    Ok(simulate(&JumpTable::new(l), x0, horizon, rng))
}

/// `[start, end)` on which the tuple takes the flat value `tuple`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TupleSegment {
    pub start: f64,
    pub end: f64,
    pub tuple: usize,
}

/// Splits `[0, horizon]` into intervals on which every `X(q_j(t))` is constant.
pub fn tuple_segments(path: &CtmcPath, schedule: &AlphaSchedule, m: usize, horizon: f64) -> Result<Vec<TupleSegment>> {
    if schedule.max_time(horizon) > path.horizon * (1.0 + 1e-12) {
        return Err(invalid("path is too short for the schedule"));
    }
    let mut cuts = vec![0.0, horizon];
    for j in 1..=schedule.ell {
        let lo = schedule.eval(j, 0.0);
        let hi = schedule.eval(j, horizon);
        for &tau in &path.times[1..] {
            if tau > lo && tau <= hi {
                cuts.push(schedule.inverse(j, tau, horizon));
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut segs: Vec<TupleSegment> = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let tuple = (1..=schedule.ell).fold(0, |acc, j| acc * m + path.state_at(schedule.eval(j, mid)));
        match segs.last_mut() {
            Some(last) if last.tuple == tuple => last.end = w[1],
            _ => segs.push(TupleSegment { start: w[0], end: w[1], tuple }),
        }
    }
    Ok(segs)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// `ln` of the sample mean of `e^{a_i}` with a delta-method standard error.
pub(crate) fn log_mean_exp(a: &[f64]) -> (f64, f64) {
    let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|x| (x - top).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (top + mean.ln(), (var / n).sqrt() / mean)
}

/// `(1/T) ln Ê_{x₀} exp ∫₀ᵀ v(X_s) ds` over independent Gillespie paths.
pub fn feynman_kac_estimate(
    l: &GeneratorMatrix,
    v: &[f64],
    x0: usize,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if v.len() != l.size() {
        return Err(invalid("potential and generator sizes differ"));
    }
    if paths == 0 {
        return Err(invalid("at least one path is required"));
    }
    check_path_args(l, x0, horizon)?;
    let table = JumpTable::new(l);
    let exponents: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| simulate(&table, x0, horizon, &mut stream(seed, i as u64)).integrate(v))
        .collect();
    let (lme, se) = log_mean_exp(&exponents);
    Ok(McEstimate { value: lme / horizon, std_error: se / horizon, samples: paths })
}
