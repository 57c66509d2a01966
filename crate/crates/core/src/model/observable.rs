use crate::error::{invalid, Error, Result};

use super::ProbVector;

/// Maximum number of stored tensor entries `M^ℓ`.
pub const TENSOR_CAP: usize = 100_000_000;

/// Dense real tensor over `M^ℓ`, row-major with `x₁` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    m: usize,
    arity: usize,
    values: Vec<f64>,
}

fn tensor_len(m: usize, arity: usize) -> Result<usize> {
    let size = (m as f64).powi(arity as i32);
    if size > TENSOR_CAP as f64 {
        return Err(Error::TooLarge { what: "observable tensor", size, cap: TENSOR_CAP as f64 });
    }
    Ok(m.pow(arity as u32))
}

impl Observable {
    pub fn new(m: usize, arity: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || arity == 0 {
            return Err(invalid("observable needs alphabet size and arity at least 1"));
        }
        let len = tensor_len(m, arity)?;
        if values.len() != len {
            return Err(invalid(format!("observable of arity {arity} over {m} symbols needs {len} entries, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("observable entry {i} is not finite")));
        }
        Ok(Self { m, arity, values })
    }

    pub fn constant(m: usize, arity: usize, c: f64) -> Result<Self> {
        let len = tensor_len(m, arity)?;
        Self::new(m, arity, vec![c; len])
    }

    pub fn from_fn(m: usize, arity: usize, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let len = tensor_len(m, arity)?;
        let mut idx = vec![0usize; arity];
        let mut values = Vec::with_capacity(len);
        for flat in 0..len {
            decode_into(flat, m, &mut idx);
            values.push(f(&idx));
        }
        Self::new(m, arity, values)
    }

    /// `1` at the tuple `pattern`, `0` elsewhere.
    pub fn indicator(m: usize, pattern: &[usize]) -> Result<Self> {
        if let Some(a) = pattern.iter().find(|&&a| a >= m) {
            return Err(invalid(format!("indicator symbol {a} outside alphabet of size {m}")));
        }
        Self::from_fn(m, pattern.len(), |x| if x == pattern { 1.0 } else { 0.0 })
    }

    pub fn alphabet_size(&self) -> usize {
        self.m
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat_index(&self, x: &[usize]) -> usize {
        debug_assert_eq!(x.len(), self.arity);
        x.iter().fold(0, |acc, &xi| acc * self.m + xi)
    }

    pub fn get(&self, x: &[usize]) -> f64 {
        self.values[self.flat_index(x)]
    }

    pub fn decode(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.arity];
        decode_into(flat, self.m, &mut idx);
        idx
    }

    /// `C(V) = max |V|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        self.map(|v| lambda * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { m: self.m, arity: self.arity, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    pub(crate) fn check_against(&self, mu: &ProbVector) -> Result<()> {
        if mu.len() != self.m {
            return Err(invalid(format!(
                "observable is over {} symbols but the law has {} weights",
                self.m,
                mu.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn decode_into(mut flat: usize, m: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % m;
        flat /= m;
    }
}

/// A parametric family `λ ↦ W_λ` with optional derivative tensor.
pub trait ObservableFamily: Sync {
    fn at(&self, lambda: f64) -> Observable;

    fn derivative(&self, _lambda: f64) -> Option<Observable> {
        None
    }
}

/// `W_λ = λ F`.
#[derive(Debug, Clone)]
pub struct LinearFamily {
    pub base: Observable,
}

impl ObservableFamily for LinearFamily {
    fn at(&self, lambda: f64) -> Observable {
        self.base.scaled(lambda)
    }

    fn derivative(&self, _lambda: f64) -> Option<Observable> {
        Some(self.base.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionMode {
    /// `ln ∫ exp(V) dμ` over trailing coordinates.
    Log,
    /// Plain `μ`-average over trailing coordinates.
    Linear,
}

fn contract_last(values: &[f64], weights: &[f64], mode: ReductionMode) -> Vec<f64> {
    let m = weights.len();
    values
        .chunks_exact(m)
        .map(|block| match mode {
            ReductionMode::Linear => block.iter().zip(weights).map(|(v, w)| v * w).sum(),
            ReductionMode::Log => {
                let top = block
                    .iter()
                    .zip(weights)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = block
                    .iter()
                    .zip(weights)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(v, w)| w * (v - top).exp())
                    .sum();
                top + s.ln()
            }
        })
        .collect()
}

pub(crate) fn reduce_values(v: &Observable, mu: &ProbVector, m: usize, mode: ReductionMode) -> Vec<f64> {
    let mut values = v.values.clone();
    for _ in m..v.arity {
        values = contract_last(&values, mu.weights(), mode);
    }
    values
}

/// Integrates out coordinates `m+1..ℓ` against `μ`, in log or linear mode.
pub fn reduce_observable(v: &Observable, mu: &ProbVector, m: usize, mode: ReductionMode) -> Result<Observable> {
    v.check_against(mu)?;
    if m == 0 || m > v.arity {
        return Err(invalid(format!("reduction target {m} must lie in 1..={}", v.arity)));
    }
    if m == v.arity {
        return Ok(v.clone());
    }
    Ok(Observable { m: v.m, arity: m, values: reduce_values(v, mu, m, mode) })
}

/// `F̄ = ∫ F dμ⊗…⊗μ`.
pub fn product_mean(f: &Observable, mu: &ProbVector) -> Result<f64> {
    f.check_against(mu)?;
    Ok(reduce_values(f, mu, 0, ReductionMode::Linear)[0])
}
