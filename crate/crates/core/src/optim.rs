//! Small unconstrained minimiser (L-BFGS with Armijo backtracking) and
//! Euclidean projection onto the probability simplex.

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the sup-norm of the gradient drops below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease over one step is below this.
    pub f_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iter: 5_000, memory: 12, grad_tol: 1e-10, f_tol: 1e-16 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimises `f`, which writes its gradient into the second argument and
/// returns the value.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut s_hist: std::collections::VecDeque<Vec<f64>> = Default::default();
    let mut y_hist: std::collections::VecDeque<Vec<f64>> = Default::default();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut stalls = 0;

    for it in 0..cfg.max_iter {
        let gn = sup_norm(&g);
        if gn <= cfg.grad_tol {
            return Minimum { x, value: fx, grad_norm: gn, iterations: it, converged: true };
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &d);
            for j in 0..n {
                d[j] -= alpha[i] * y_hist[i][j];
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for j in 0..n {
                d[j] += (alpha[i] - beta) * s_hist[i][j];
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if k == 0 { (1.0 / sup_norm(&d)).min(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut fnew = fx;
        for _ in 0..60 {
            for j in 0..n {
                x_new[j] = x[j] + step * d[j];
            }
            fnew = f(&x_new, &mut g_new);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Numerical floor: nothing along the direction improves f.
            if s_hist.is_empty() {
                return Minimum { x, value: fx, grad_norm: gn, iterations: it, converged: gn <= cfg.grad_tol.sqrt() };
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-300 {
            if s_hist.len() == cfg.memory {
                s_hist.pop_front();
                y_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(y);
        }
        let decrease = fx - fnew;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = fnew;
        if decrease <= cfg.f_tol * fx.abs().max(1.0) {
            stalls += 1;
            if stalls >= 10 {
                let gn = sup_norm(&g);
                return Minimum { x, value: fx, grad_norm: gn, iterations: it + 1, converged: gn <= cfg.grad_tol.sqrt() };
            }
        } else {
            stalls = 0;
        }
    }
    let gn = sup_norm(&g);
    Minimum { x, value: fx, grad_norm: gn, iterations: cfg.max_iter, converged: gn <= cfg.grad_tol }
}

/// Euclidean projection onto `{p : p ≥ 0, Σ p = 1}` by the sort-and-threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `softmax(θ)` computed stably.
pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let top = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}
