//! Finite-alphabet probability primitives shared by every other module.

mod doeblin;
mod observable;
mod schedule;

pub use doeblin::{doeblin_check, DoeblinCertificate};
pub use observable::{
    product_mean, reduce_observable, LinearFamily, Observable, ObservableFamily, ReductionMode, TENSOR_CAP,
};
pub use schedule::QSchedule;
pub(crate) use observable::decode_into;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Tolerance on row sums and total mass of probability objects.
pub const MASS_TOL: f64 = 1e-12;

/// Alphabet sizes above this use power iteration for stationary laws.
const DENSE_SOLVE_MAX: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteAlphabet {
    labels: Vec<String>,
}

impl FiniteAlphabet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("alphabet must contain at least one symbol"));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(invalid(format!("duplicate alphabet label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Alphabet `{0, 1, ..., m-1}` with decimal labels.
    pub fn numbered(m: usize) -> Result<Self> {
        Self::new((0..m).map(|i| i.to_string()).collect())
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }
}

/// A probability law on `{0, ..., M-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("probability vector must be nonempty"));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(invalid(format!("weight {i} is {w}; weights must be finite and nonnegative")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid(format!("weights sum to {total}, expected 1 within {MASS_TOL:e}")));
        }
        Ok(Self(weights))
    }

    /// Normalises a nonnegative vector with positive mass.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() || weights.iter().any(|w| *w < 0.0) {
            return Err(invalid("cannot normalise: weights must be nonnegative with positive finite mass"));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean_of(&self, f: &[f64]) -> f64 {
        self.0.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Row-stochastic transition matrix `P(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    p: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("transition matrix must be square and nonempty"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_matrix(DMatrix::from_row_slice(n, n, &flat))
    }

    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() == 0 {
            return Err(invalid("transition matrix must be square and nonempty"));
        }
        for i in 0..p.nrows() {
            let row = p.row(i);
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(invalid(format!("row {i} has entry {v}; entries must be finite and nonnegative")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(invalid(format!("row {i} sums to {s}, expected 1 within {MASS_TOL:e}")));
            }
        }
        Ok(Self { p })
    }

    /// Kernel whose every row equals `nu` (an i.i.d. source).
    pub fn with_identical_rows(nu: &ProbVector) -> Self {
        let n = nu.len();
        Self { p: DMatrix::from_fn(n, n, |_, j| nu.weights()[j]) }
    }

    pub fn size(&self) -> usize {
        self.p.nrows()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[(x, y)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        self.p.row(x).iter().copied().collect()
    }

    pub fn power(&self, n: usize) -> DMatrix<f64> {
        let mut result = DMatrix::identity(self.size(), self.size());
        let mut base = self.p.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        result
    }

    pub fn is_irreducible(&self) -> bool {
        linalg::is_irreducible(&self.p)
    }

    pub fn is_aperiodic(&self) -> bool {
        linalg::period(self.size(), |i, j| self.p[(i, j)] > 0.0) == 1
    }
}

/// Unique invariant law `mu P = mu` of an irreducible aperiodic chain.
pub fn stationary_distribution(p: &StochasticMatrix) -> Result<ProbVector> {
    if !p.is_irreducible() {
        return Err(Error::NotErgodic("transition graph is not irreducible".into()));
    }
    if !p.is_aperiodic() {
        return Err(Error::NotErgodic("transition graph is periodic".into()));
    }
    let n = p.size();
    let mut mu = if n <= DENSE_SOLVE_MAX { dense_stationary(p)? } else { power_stationary(p)? };
    for v in mu.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= total);
    Ok(ProbVector(mu))
}

fn dense_stationary(p: &StochasticMatrix) -> Result<Vec<f64>> {
    let n = p.size();
    // (P^T - I) mu = 0 with the last equation replaced by sum(mu) = 1.
    let mut a = p.matrix().transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.lu();
    let mut mu = lu.solve(&b).ok_or_else(|| Error::NotErgodic("singular stationary system".into()))?;
    // One step of iterative refinement.
    let residual = &b - {
        let mut a2 = p.matrix().transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            a2[(n - 1, j)] = 1.0;
        }
        a2 * &mu
    };
    if let Some(corr) = lu.solve(&residual) {
        mu += corr;
    }
    Ok(mu.iter().copied().collect())
}

fn power_stationary(p: &StochasticMatrix) -> Result<Vec<f64>> {
    let n = p.size();
    let pt = p.matrix().transpose();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for it in 0..1_000_000 {
        let next = &pt * &mu;
        let diff = (&next - &mu).amax();
        mu = next;
        if diff <= 1e-14 {
            return Ok(mu.iter().copied().collect());
        }
        if it == 999_999 {
            return Err(Error::NonConvergence { what: "stationary power iteration", iterations: it, last: diff });
        }
    }
    unreachable!()
}
