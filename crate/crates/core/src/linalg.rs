//! Dense nonnegative-matrix utilities: reachability, period, and Perron roots
//! by power iteration with Collatz–Wielandt bracketing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative Collatz–Wielandt gap at which power iteration stops.
pub const PERRON_TOL: f64 = 1e-12;

const MAX_POWER_ITERATIONS: usize = 500_000;

fn reachable(n: usize, edge: &dyn Fn(usize, usize) -> bool, from: usize, reverse: bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let e = if reverse { edge(j, i) } else { edge(i, j) };
            if e && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Strong connectivity of the directed graph `i -> j` iff `edge(i, j)`.
pub fn is_strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    if n == 0 {
        return false;
    }
    reachable(n, &edge, 0, false).iter().all(|&b| b) && reachable(n, &edge, 0, true).iter().all(|&b| b)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Period (gcd of cycle lengths) of a strongly connected graph, via BFS levels.
pub fn period(n: usize, edge: impl Fn(usize, usize) -> bool) -> usize {
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut g = 0usize;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !edge(i, j) {
                continue;
            }
            if level[j] == usize::MAX {
                level[j] = level[i] + 1;
                queue.push_back(j);
            } else {
                let diff = (level[i] + 1).abs_diff(level[j]);
                g = gcd(g, diff);
            }
        }
    }
    g
}

pub fn is_irreducible(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    n == 1 || is_strongly_connected(n, |i, j| a[(i, j)] > 0.0)
}

/// Perron root of an irreducible nonnegative matrix together with the bracket
/// and the positive eigenvector the iteration settled on.
#[derive(Debug, Clone)]
pub struct PerronRoot {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub vector: DVector<f64>,
    pub iterations: usize,
}

fn check_nonnegative_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "expected a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("matrix entries must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Power iteration normalised in the sup-norm. Stops when the Collatz–Wielandt
/// bracket `min (Ax)_i/x_i <= r <= max (Ax)_i/x_i` is narrower than
/// `PERRON_TOL * r`. Periodic matrices are iterated as `A + sI`.
pub fn perron_root(a: &DMatrix<f64>) -> Result<PerronRoot> {
    check_nonnegative_square(a)?;
    let n = a.nrows();
    if n == 1 {
        let v = a[(0, 0)];
        if v <= 0.0 {
            return Err(Error::NotIrreducible);
        }
        return Ok(PerronRoot { value: v, lower: v, upper: v, vector: DVector::from_element(1, 1.0), iterations: 0 });
    }
    if !is_irreducible(a) {
        return Err(Error::NotIrreducible);
    }
    let aperiodic = period(n, |i, j| a[(i, j)] > 0.0) == 1;
    let shift = if aperiodic {
        0.0
    } else {
        (0..n).map(|i| a.row(i).sum()).sum::<f64>() / n as f64
    };

    let mut x = DVector::from_element(n, 1.0);
    let mut best_gap = f64::INFINITY;
    let mut since_improved = 0usize;
    let mut lower = 0.0;
    let mut upper = f64::INFINITY;
    for it in 1..=MAX_POWER_ITERATIONS {
        let ax = a * &x;
        lower = f64::INFINITY;
        upper = 0.0;
        for i in 0..n {
            let ratio = ax[i] / x[i];
            lower = lower.min(ratio);
            upper = upper.max(ratio);
        }
        let gap = upper - lower;
        if gap <= PERRON_TOL * upper {
            return Ok(PerronRoot { value: 0.5 * (lower + upper), lower, upper, vector: x, iterations: it });
        }
        if gap < best_gap * (1.0 - 1e-3) {
            best_gap = gap;
            since_improved = 0;
        } else {
            since_improved += 1;
            // Rounding floor: the bracket stopped shrinking but is already tight.
            if since_improved > 2_000 && gap <= 1e-9 * upper {
                return Ok(PerronRoot { value: 0.5 * (lower + upper), lower, upper, vector: x, iterations: it });
            }
        }
        let mut y = ax + shift * &x;
        let norm = y.amax();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NonConvergence { what: "power iteration", iterations: it, last: upper });
        }
        y /= norm;
        // Keep strictly positive so the ratios stay defined.
        for v in y.iter_mut() {
            if *v < f64::MIN_POSITIVE {
                *v = f64::MIN_POSITIVE;
            }
        }
        x = y;
    }
    Err(Error::NonConvergence { what: "power iteration", iterations: MAX_POWER_ITERATIONS, last: 0.5 * (lower + upper) })
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    perron_root(a).map(|p| p.value)
}

/// Perron root with left and right eigenvectors, normalised so that `left·right = 1`.
#[derive(Debug, Clone)]
pub struct PerronPair {
    pub value: f64,
    pub right: DVector<f64>,
    pub left: DVector<f64>,
}

pub fn perron_pair(a: &DMatrix<f64>) -> Result<PerronPair> {
    let right = perron_root(a)?;
    let left = perron_root(&a.transpose())?;
    let mut l = left.vector;
    let dot = l.dot(&right.vector);
    l /= dot;
    Ok(PerronPair { value: right.value, right: right.vector, left: l })
}

/// Derivative of the Perron root along a perturbation direction `da`:
/// `d r = left^T da right` for the normalised eigenvector pair.
pub fn perron_derivative(pair: &PerronPair, da: &DMatrix<f64>) -> f64 {
    (pair.left.transpose() * da * &pair.right)[(0, 0)]
}

/// Largest real eigenvalue of a Metzler matrix (nonnegative off-diagonal),
/// computed as the Perron root of `A + sI` minus `s`.
pub fn metzler_principal_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    metzler_pair(a).map(|p| p.value)
}

pub fn metzler_pair(a: &DMatrix<f64>) -> Result<PerronPair> {
    let n = a.nrows();
    let shift = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max) + 1.0;
    let shifted = a + DMatrix::identity(n, n) * shift;
    let mut pair = perron_pair(&shifted)?;
    pair.value -= shift;
    Ok(pair)
}
