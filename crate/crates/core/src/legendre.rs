//! Legendre–Fenchel transform `J(u) = sup_λ (λu − q(λ))` of a convex,
//! differentiable log-moment function with `q(0) = 0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// A convex log-moment function `λ ↦ q(λ)`.
pub trait LogMoment: Sync {
    fn value(&self, lambda: f64) -> Result<f64>;

    fn derivative(&self, lambda: f64) -> Result<f64> {
        let h = 1e-5 * lambda.abs().max(1.0);
        Ok((self.value(lambda + h)? - self.value(lambda - h)?) / (2.0 * h))
    }
}

/// Wraps plain closures as a [`LogMoment`].
pub struct ClosureMoment<F, D = fn(f64) -> f64> {
    pub value: F,
    pub derivative: Option<D>,
}

impl<F: Fn(f64) -> f64 + Sync> ClosureMoment<F> {
    pub fn new(value: F) -> Self {
        Self { value, derivative: None }
    }
}

impl<F: Fn(f64) -> f64 + Sync, D: Fn(f64) -> f64 + Sync> ClosureMoment<F, D> {
    pub fn with_derivative(value: F, derivative: D) -> Self {
        Self { value, derivative: Some(derivative) }
    }
}

impl<F: Fn(f64) -> f64 + Sync, D: Fn(f64) -> f64 + Sync> LogMoment for ClosureMoment<F, D> {
    fn value(&self, lambda: f64) -> Result<f64> {
        Ok((self.value)(lambda))
    }

    fn derivative(&self, lambda: f64) -> Result<f64> {
        match &self.derivative {
            Some(d) => Ok(d(lambda)),
            None => {
                let h = 1e-5 * lambda.abs().max(1.0);
                Ok(((self.value)(lambda + h) - (self.value)(lambda - h)) / (2.0 * h))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LegendreConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub step: f64,
    /// Intervals whose second difference exceeds this are bisected.
    pub refine_tol: f64,
    pub max_refine_depth: usize,
    /// Largest `|λ|` the root search may reach.
    pub root_cap: f64,
    /// Closure of `range(q')` when known, e.g. `[min F, max F]`.
    pub u_bounds: Option<(f64, f64)>,
}

impl Default for LegendreConfig {
    fn default() -> Self {
        Self {
            lambda_min: -20.0,
            lambda_max: 20.0,
            step: 0.1,
            refine_tol: 1e-3,
            max_refine_depth: 4,
            root_cap: 200.0,
            u_bounds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RateStatus {
    /// `q'(λ*) = u` solved inside the search window.
    Interior,
    /// The maximiser lies beyond `root_cap`; `j` is the lower bound at the cap.
    AtCap,
    /// `u` lies outside the range of `q'`; `j = +∞`.
    Unbounded,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RatePoint {
    pub u: f64,
    pub j: f64,
    pub lambda: f64,
    pub status: RateStatus,
}

/// Tabulated `Q(λ)` and its transform `J(u)`.
#[derive(Debug, Clone, Serialize)]
pub struct RateFunction {
    pub q_values: Vec<(f64, f64)>,
    pub j_values: Vec<RatePoint>,
    pub domain: (f64, f64),
}

fn solve_slope(q: &dyn LogMoment, u: f64, mut lo: f64, mut hi: f64, lambda0: f64) -> Result<f64> {
    // q' is nondecreasing; find λ in [lo, hi] with q'(λ) = u.
    let tol = 1e-13 * u.abs().max(1.0);
    let mut lam = lambda0.clamp(lo, hi);
    let mut prev_resid = f64::INFINITY;
    for _ in 0..200 {
        let d = q.derivative(lam)?;
        let resid = d - u;
        if resid.abs() <= tol || hi - lo <= 1e-15 * lam.abs().max(1.0) {
            return Ok(lam);
        }
        if resid > 0.0 {
            hi = lam;
        } else {
            lo = lam;
        }
        let h = 1e-5 * lam.abs().max(1.0);
        let curv = (q.derivative(lam + h)? - q.derivative(lam - h)?) / (2.0 * h);
        let newton = if curv > 0.0 { lam - resid / curv } else { f64::NAN };
        lam = if newton.is_finite() && newton > lo && newton < hi && resid.abs() < 0.5 * prev_resid {
            newton
        } else {
            0.5 * (lo + hi)
        };
        prev_resid = resid.abs();
    }
    Ok(lam)
}

/// Single-point transform. Returns `SupremumUnbounded` when `u` is outside
/// the closure of `range(q')`.
pub fn legendre_point(q: &dyn LogMoment, u: f64, cfg: &LegendreConfig) -> Result<RatePoint> {
    if let Some((a, b)) = cfg.u_bounds {
        if u < a || u > b {
            return Err(Error::SupremumUnbounded { u });
        }
    }
    let d0 = q.derivative(0.0)?;
    let tol = 1e-13 * u.abs().max(1.0);
    let lam = if (d0 - u).abs() <= tol {
        0.0
    } else {
        let sign = if u > d0 { 1.0 } else { -1.0 };
        let mut inner = 0.0;
        let mut outer = sign;
        loop {
            let d = q.derivative(outer)?;
            if (d - u) * sign >= 0.0 {
                break;
            }
            if outer.abs() >= cfg.root_cap {
                let d_half = q.derivative(outer / 2.0)?;
                let saturated = (d - d_half).abs() <= 1e-9 * d.abs().max(1.0);
                if saturated && (u - d).abs() > 1e-6 * u.abs().max(1.0) {
                    return Err(Error::SupremumUnbounded { u });
                }
                let j = (outer * u - q.value(outer)?).max(0.0);
                return Ok(RatePoint { u, j, lambda: outer, status: RateStatus::AtCap });
            }
            inner = outer;
            outer = (outer * 2.0).clamp(-cfg.root_cap, cfg.root_cap);
        }
        let (lo, hi) = if sign > 0.0 { (inner, outer) } else { (outer, inner) };
        solve_slope(q, u, lo, hi, 0.5 * (lo + hi))?
    };
    let j = (lam * u - q.value(lam)?).max(0.0);
    Ok(RatePoint { u, j, lambda: lam, status: RateStatus::Interior })
}

/// Samples `q` on the configured λ window with adaptive refinement and
/// transforms it at every `u` in `u_grid`.
pub fn legendre_transform(q: &dyn LogMoment, u_grid: &[f64], cfg: &LegendreConfig) -> Result<RateFunction> {
    let n = ((cfg.lambda_max - cfg.lambda_min) / cfg.step).round() as usize;
    let mut lambdas: Vec<f64> = (0..=n).map(|i| cfg.lambda_min + i as f64 * cfg.step).collect();
    if let Some(z) = lambdas.iter_mut().find(|l| l.abs() < 1e-12) {
        *z = 0.0;
    }
    let mut q_values: Vec<(f64, f64)> =
        lambdas.par_iter().map(|&l| q.value(l).map(|v| (l, v))).collect::<Result<_>>()?;

    for _ in 0..cfg.max_refine_depth {
        let mids: Vec<f64> = q_values
            .windows(3)
            .filter(|w| (w[0].1 - 2.0 * w[1].1 + w[2].1).abs() > cfg.refine_tol)
            .flat_map(|w| [0.5 * (w[0].0 + w[1].0), 0.5 * (w[1].0 + w[2].0)])
            .collect();
        if mids.is_empty() {
            break;
        }
        let mut extra: Vec<(f64, f64)> = mids.par_iter().map(|&l| q.value(l).map(|v| (l, v))).collect::<Result<_>>()?;
        q_values.append(&mut extra);
        q_values.sort_by(|a, b| a.0.total_cmp(&b.0));
        q_values.dedup_by(|a, b| a.0 == b.0);
    }

    let j_values = u_grid
        .par_iter()
        .map(|&u| match legendre_point(q, u, cfg) {
            Err(Error::SupremumUnbounded { .. }) => {
                Ok(RatePoint { u, j: f64::INFINITY, lambda: f64::NAN, status: RateStatus::Unbounded })
            }
            other => other,
        })
        .collect::<Result<Vec<_>>>()?;
    let domain = (q.derivative(cfg.lambda_min)?, q.derivative(cfg.lambda_max)?);
    Ok(RateFunction { q_values, j_values, domain })
}

fn convex_on(points: &[(f64, f64)], tol: f64) -> bool {
    points.windows(3).all(|w| {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let (x2, y2) = w[2];
        let chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0);
        y1 <= chord + tol * (1.0 + y1.abs())
    })
}

impl RateFunction {
    /// Chord test on consecutive finite `J` values.
    pub fn j_is_convex(&self, tol: f64) -> bool {
        let pts: Vec<(f64, f64)> = self.j_values.iter().filter(|p| p.j.is_finite()).map(|p| (p.u, p.j)).collect();
        convex_on(&pts, tol)
    }

    pub fn q_is_convex(&self, tol: f64) -> bool {
        convex_on(&self.q_values, tol)
    }

    pub fn q_at(&self, lambda: f64) -> Option<f64> {
        self.q_values.iter().find(|(l, _)| *l == lambda).map(|(_, v)| *v)
    }

    pub fn j_min(&self) -> f64 {
        self.j_values.iter().map(|p| p.j).fold(f64::INFINITY, f64::min)
    }
}
