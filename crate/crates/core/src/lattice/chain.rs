use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{PrimeBasis, SmoothLevels};
use crate::error::{invalid, Error, Result};

/// Sorted basis-smooth integers `≤ bound`.
pub fn smooth_up_to(primes: &[u64], bound: u128) -> Vec<u128> {
    let mut out = Vec::new();
    if bound == 0 {
        return out;
    }
    fn rec(primes: &[u64], i: usize, cur: u128, bound: u128, out: &mut Vec<u128>) {
        if i == primes.len() {
            out.push(cur);
            return;
        }
        let mut v = cur;
        loop {
            rec(primes, i + 1, v, bound, out);
            match v.checked_mul(primes[i] as u128) {
                Some(next) if next <= bound => v = next,
                _ => break,
            }
        }
    }
    rec(primes, 0, 1, bound, &mut out);
    out.sort_unstable();
    out
}

/// The labelled graph on `B_η(a) = {b ≤ η : b = a·(smooth)}` with arrows
/// `b → l·b` for `l = 2..k`; `boundary` holds the targets `l·b > η`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainGraph {
    pub k: usize,
    pub a: u128,
    pub eta: f64,
    pub nodes: Vec<u128>,
    pub boundary: Vec<u128>,
    pub edges: Vec<(u128, u128, u32)>,
}

impl ChainGraph {
    pub fn build(basis: &PrimeBasis, a: u128, eta: f64) -> Result<Self> {
        if a == 0 || !basis.is_coprime(a) {
            return Err(invalid(format!("a = {a} must be positive and coprime to the basis primes")));
        }
        let limit = (eta / a as f64).floor();
        if limit >= u128::MAX as f64 {
            return Err(Error::TooLarge { what: "chain bound", size: eta, cap: u128::MAX as f64 });
        }
        let nodes: Vec<u128> = if limit < 1.0 {
            Vec::new()
        } else {
            smooth_up_to(&basis.primes, limit as u128).into_iter().map(|s| s * a).collect()
        };
        Ok(Self::from_nodes(basis.k, a, eta, nodes))
    }

    fn from_nodes(k: usize, a: u128, eta: f64, nodes: Vec<u128>) -> Self {
        let node_set: BTreeSet<u128> = nodes.iter().copied().collect();
        let mut boundary = BTreeSet::new();
        let mut edges = Vec::new();
        for &b in &nodes {
            for l in 2..=k as u128 {
                let t = b * l;
                edges.push((b, t, l as u32));
                if !node_set.contains(&t) {
                    boundary.insert(t);
                }
            }
        }
        Self { k, a, eta, nodes, boundary: boundary.into_iter().collect(), edges }
    }

    /// Canonical representative of level `l`: `a = 1`, `η = s_l`.
    pub fn canonical(levels: &SmoothLevels, l: usize) -> Result<Self> {
        if l == 0 || (levels.basis.m() > 0 && l > levels.l_max()) || (levels.basis.m() == 0 && l != 1) {
            return Err(invalid(format!("level {l} outside the computed range")));
        }
        let nodes: Vec<u128> = levels.smooth[..l]
            .iter()
            .map(|s| s.exact.ok_or(Error::TooLarge { what: "canonical chain node", size: s.log.exp(), cap: u128::MAX as f64 }))
            .collect::<Result<_>>()?;
        let eta = *nodes.last().unwrap() as f64;
        Ok(Self::from_nodes(levels.basis.k, 1, eta, nodes))
    }

    pub fn level(&self) -> usize {
        self.nodes.len()
    }

    /// All positions carrying a variable, ascending.
    pub fn variables(&self) -> Vec<u128> {
        let mut v: Vec<u128> = self.nodes.iter().chain(&self.boundary).copied().collect();
        v.sort_unstable();
        v
    }

    /// For each node `b`, the variable indices of `b, 2b, …, kb`.
    pub fn terms(&self) -> Vec<Vec<usize>> {
        let vars = self.variables();
        let pos = |x: u128| vars.binary_search(&x).expect("position present");
        self.nodes.iter().map(|&b| (1..=self.k as u128).map(|j| pos(j * b)).collect()).collect()
    }

    /// Isomorphism as labelled graphs, via division by `a`.
    pub fn is_isomorphic(&self, other: &Self) -> bool {
        let norm = |g: &Self| -> (Vec<u128>, Vec<u128>) {
            (g.nodes.iter().map(|n| n / g.a).collect(), g.boundary.iter().map(|n| n / g.a).collect())
        };
        self.k == other.k && norm(self) == norm(other)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelCensus {
    pub count: u64,
    pub sample: ChainGraph,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeCensus {
    pub n: u64,
    /// `|A_N|` by enumeration.
    pub a_count: u64,
    /// `|A_N|` by inclusion–exclusion over the basis primes.
    pub a_count_sieve: u64,
    pub levels: BTreeMap<usize, LevelCensus>,
    /// Number of `a` with `|B_N(a)| > (1 + ln(N/a)/ln 2)^m`; always 0.
    pub bound_violations: u64,
}

fn inclusion_exclusion(primes: &[u64], n: u64) -> u64 {
    let m = primes.len();
    let mut total: i128 = 0;
    for mask in 0u32..(1 << m) {
        let mut d: u128 = 1;
        for (i, &p) in primes.iter().enumerate() {
            if mask >> i & 1 == 1 {
                d *= p as u128;
            }
        }
        let term = (n as u128 / d) as i128;
        total += if mask.count_ones() % 2 == 0 { term } else { -term };
    }
    total as u64
}

pub fn lattice_census(n: u64, basis: &PrimeBasis) -> Result<LatticeCensus> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    let smooth = smooth_up_to(&basis.primes, n as u128);
    let m = basis.m() as i32;
    let mut levels: BTreeMap<usize, LevelCensus> = BTreeMap::new();
    let mut a_count = 0;
    let mut bound_violations = 0;
    for a in 1..=n {
        if !basis.is_coprime(a as u128) {
            continue;
        }
        a_count += 1;
        let l = smooth.partition_point(|&s| s <= (n / a) as u128);
        let bound = (1.0 + (n as f64 / a as f64).ln() / 2f64.ln()).powi(m);
        if l as f64 > bound * (1.0 + 1e-12) {
            bound_violations += 1;
        }
        match levels.get_mut(&l) {
            Some(c) => c.count += 1,
            None => {
                let sample = ChainGraph::build(basis, a as u128, n as f64)?;
                levels.insert(l, LevelCensus { count: 1, sample });
            }
        }
    }
    Ok(LatticeCensus { n, a_count, a_count_sieve: inclusion_exclusion(&basis.primes, n), levels, bound_violations })
}
