//! Random sources and samplers shared by the simulation code: seeded
//! per-replicate substreams, i.i.d. and Markov sequences observed at a
//! sparse set of positions.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctime::{AlphaSchedule, GeneratorMatrix};
use crate::error::{invalid, Error, Result};
use crate::model::{ProbVector, QSchedule, StochasticMatrix};

/// Independent generator for replicate `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The process driving a nonconventional sum.
#[derive(Debug, Clone)]
pub enum Source {
    Iid(ProbVector),
    Markov { p: StochasticMatrix, x0: usize },
    Ctmc { l: GeneratorMatrix, x0: usize },
}

impl Source {
    pub fn alphabet_size(&self) -> usize {
        match self {
            Source::Iid(mu) => mu.len(),
            Source::Markov { p, .. } => p.size(),
            Source::Ctmc { l, .. } => l.size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, x0) = match self {
            Source::Iid(_) => return Ok(()),
            Source::Markov { p, x0 } => (p.size(), *x0),
            Source::Ctmc { l, x0 } => (l.size(), *x0),
        };
        if x0 >= m {
            return Err(invalid(format!("start symbol {x0} outside alphabet of size {m}")));
        }
        Ok(())
    }
}

/// Integer schedule for discrete sources, real schedule for continuous ones.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Discrete(QSchedule),
    Continuous(AlphaSchedule),
}

impl Schedule {
    pub fn k(&self) -> usize {
        match self {
            Schedule::Discrete(s) => s.k,
            Schedule::Continuous(s) => s.k,
        }
    }

    pub fn ell(&self) -> usize {
        match self {
            Schedule::Discrete(s) => s.ell,
            Schedule::Continuous(s) => s.ell,
        }
    }
}

/// Largest number of cached transition-matrix entries for jump-ahead.
const POWER_CACHE_CAP: usize = 50_000_000;
/// Gaps up to this length are simulated step by step.
const DIRECT_GAP: u64 = 8;

/// Running sums with the last positive entry replaced by `+∞`, so a uniform
/// draw in `[0, 1)` never lands on a trailing zero-probability state.
fn cumulative(row: impl Iterator<Item = f64>) -> Vec<f64> {
    let probs: Vec<f64> = row.collect();
    let mut acc = 0.0;
    let mut out: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = probs.iter().rposition(|p| *p > 0.0) {
        for c in &mut out[last..] {
            *c = f64::INFINITY;
        }
    }
    out
}

/// Samples a discrete source at a fixed sorted set of distinct positions.
pub struct PositionSampler {
    positions: Vec<u64>,
    kind: SamplerKind,
}

enum SamplerKind {
    /// Uniform law on `2^bits` symbols: bits taken straight from the generator.
    Bits { bits: u32 },
    Weighted(WeightedIndex<f64>),
    Markov {
        x0: usize,
        step: Vec<Vec<f64>>,
        /// Cumulative rows of `P^g` for each cached gap `g`.
        jumps: BTreeMap<u64, Vec<Vec<f64>>>,
    },
}

fn row_cumulatives(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|x| cumulative(a.row(x).iter().copied())).collect()
}

fn sample_row(cum: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    cum.partition_point(|&c| c <= u)
}

impl PositionSampler {
    /// `positions` must be strictly increasing.
    pub fn new(source: &Source, positions: Vec<u64>) -> Result<Self> {
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sample positions must be strictly increasing"));
        }
        source.validate()?;
        let kind = match source {
            Source::Iid(mu) => {
                let m = mu.len();
                let uniform = mu.weights().iter().all(|w| (w - 1.0 / m as f64).abs() <= 1e-15);
                if uniform && m.is_power_of_two() && m > 1 {
                    SamplerKind::Bits { bits: m.trailing_zeros() }
                } else {
                    SamplerKind::Weighted(
                        WeightedIndex::new(mu.weights()).map_err(|e| invalid(format!("bad weights: {e}")))?,
                    )
                }
            }
            Source::Markov { p, x0 } => {
                let m = p.size();
                let mut gaps: Vec<u64> = Vec::new();
                let mut prev = 0u64;
                for &pos in &positions {
                    if pos - prev > DIRECT_GAP {
                        gaps.push(pos - prev);
                    }
                    prev = pos;
                }
                gaps.sort_unstable();
                gaps.dedup();
                let mut jumps = BTreeMap::new();
                if gaps.len().saturating_mul(m * m) <= POWER_CACHE_CAP {
                    let mut have = 0u64;
                    let mut acc = DMatrix::identity(m, m);
                    for g in gaps {
                        acc *= p.power((g - have) as usize);
                        have = g;
                        jumps.insert(g, row_cumulatives(&acc));
                    }
                }
                SamplerKind::Markov { x0: *x0, step: row_cumulatives(p.matrix()), jumps }
            }
            Source::Ctmc { .. } => return Err(invalid("continuous-time sources are sampled along paths")),
        };
        Ok(Self { positions, kind })
    }

    pub fn positions(&self) -> &[u64] {
        &self.positions
    }

    /// Values of the source at every position, written into `out`.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut Vec<u32>) {
        out.clear();
        match &self.kind {
            SamplerKind::Bits { bits } => {
                let per_word = 64 / bits;
                let mask = (1u64 << bits) - 1;
                let mut word = 0u64;
                let mut left = 0;
                for _ in 0..self.positions.len() {
                    if left == 0 {
                        word = rng.next_u64();
                        left = per_word;
                    }
                    out.push((word & mask) as u32);
                    word >>= bits;
                    left -= 1;
                }
            }
            SamplerKind::Weighted(w) => out.extend((0..self.positions.len()).map(|_| w.sample(rng) as u32)),
            SamplerKind::Markov { x0, step, jumps } => {
                let mut x = *x0;
                let mut at = 0u64;
                for &pos in &self.positions {
                    let gap = pos - at;
                    match jumps.get(&gap) {
                        Some(rows) if gap > DIRECT_GAP => x = sample_row(&rows[x], rng),
                        _ => {
                            for _ in 0..gap {
                                x = sample_row(&step[x], rng);
                            }
                        }
                    }
                    at = pos;
                    out.push(x as u32);
                }
            }
        }
    }
}

/// Largest number of distinct positions sampled per replicate.
pub const POSITION_CAP: f64 = 1e8;

/// Draws the tuples `(X(q₁(n)), …, X(q_ℓ(n)))` for `n` in a range, sampling
/// each distinct position once.
pub struct TupleSampler {
    sampler: PositionSampler,
    /// `index[(n − first)·ℓ + j − 1]` is the slot of `q_j(n)` in the sampled values.
    index: Vec<u32>,
    ell: usize,
    m: usize,
    first: u64,
    count: usize,
}

impl TupleSampler {
    pub fn new(source: &Source, schedule: &QSchedule, first: u64, last: u64) -> Result<Self> {
        if last < first {
            return Err(invalid("empty index range"));
        }
        let count = (last - first + 1) as usize;
        let ell = schedule.ell;
        check_budget(count as f64 * ell as f64, POSITION_CAP)?;
        let mut raw = Vec::with_capacity(count * ell);
        for n in first..=last {
            for j in 1..=ell {
                raw.push(schedule.eval(j, n)?);
            }
        }
        let mut positions = raw.clone();
        positions.sort_unstable();
        positions.dedup();
        if positions[0] == 0 {
            return Err(invalid("schedule positions start at 1"));
        }
        let index = raw.iter().map(|p| positions.binary_search(p).expect("position present") as u32).collect();
        let m = source.alphabet_size();
        Ok(Self { sampler: PositionSampler::new(source, positions)?, index, ell, m, first, count })
    }

    pub fn first(&self) -> u64 {
        self.first
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn distinct_positions(&self) -> usize {
        self.sampler.positions().len()
    }

    /// Flat tuple indices (first coordinate slowest), one per `n`.
    pub fn sample(&self, rng: &mut ChaCha8Rng, values: &mut Vec<u32>, out: &mut Vec<usize>) {
        self.sampler.sample_into(rng, values);
        out.clear();
        out.extend(
            self.index
                .chunks_exact(self.ell)
                .map(|slots| slots.iter().fold(0usize, |acc, &s| acc * self.m + values[s as usize] as usize)),
        );
    }
}

/// Checks a position budget against a cap.
pub(crate) fn check_budget(required: f64, cap: f64) -> Result<()> {
    if required > cap {
        return Err(Error::HorizonOverflow { required, cap });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stationary_distribution;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, 3).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(stream(7, 3).next_u64(), stream(7, 4).next_u64());
    }

    #[test]
    fn bit_sampler_is_uniform() {
        let src = Source::Iid(ProbVector::uniform(4));
        let s = PositionSampler::new(&src, (1..=200_000).collect()).unwrap();
        let mut out = Vec::new();
        s.sample_into(&mut stream(1, 0), &mut out);
        let mut counts = [0usize; 4];
        for v in &out {
            counts[*v as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 200_000.0 - 0.25).abs() < 0.005, "{counts:?}");
        }
    }

    #[test]
    fn jump_ahead_matches_stationary_law() {
        let p = StochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let pi = stationary_distribution(&p).unwrap();
        let positions: Vec<u64> = (1..=20_000u64).map(|n| n * n).collect();
        let s = PositionSampler::new(&Source::Markov { p: p.clone(), x0: 0 }, positions).unwrap();
        let mut out = Vec::new();
        s.sample_into(&mut stream(2, 0), &mut out);
        let ones = out.iter().filter(|v| **v == 1).count() as f64 / out.len() as f64;
        assert!((ones - pi.weights()[1]).abs() < 0.015, "{ones}");
    }

    #[test]
    fn jump_ahead_preserves_two_step_law() {
        // P(X_{n+10} = 1 | X_n = 0) versus the exact matrix power.
        let p = StochasticMatrix::new(vec![vec![0.95, 0.05], vec![0.2, 0.8]]).unwrap();
        let exact = p.power(10)[(0, 1)];
        let s = PositionSampler::new(&Source::Markov { p, x0: 0 }, vec![10]).unwrap();
        let mut out = Vec::new();
        let reps = 100_000;
        let hits = (0..reps)
            .filter(|&i| {
                s.sample_into(&mut stream(5, i), &mut out);
                out[0] == 1
            })
            .count();
        let f = hits as f64 / reps as f64;
        assert!((f - exact).abs() < 4.0 * (exact * (1.0 - exact) / reps as f64).sqrt(), "{f} vs {exact}");
    }
}
