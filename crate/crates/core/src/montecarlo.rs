//! Replicated simulation of nonconventional sums: `S_N`, occupational
//! measures, progression counts, empirical tail exponents and moderately
//! scaled fluctuations.
//!
//! Replicate `i` always draws from `stream(seed, i)`, so results do not
//! depend on the number of worker threads.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ctime::{gillespie, tuple_segments};
use crate::error::{invalid, Error, Result};
use crate::lattice::neumaier_sum;
use crate::markov::OccupationalMeasure;
use crate::model::{product_mean, stationary_distribution, Observable, ProbVector, QSchedule, TENSOR_CAP};
use crate::sampling::{stream, Schedule, Source, TupleSampler};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub source: Source,
    pub schedule: Schedule,
    /// `N` for discrete sources (an integer), `T` for continuous ones.
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    /// Exponential tilt used by [`empirical_rate`]; i.i.d. sources with `k = ℓ = 1` only.
    pub tilt: Option<f64>,
}

impl SimulationPlan {
    pub fn new(source: Source, schedule: Schedule, horizon: f64, samples: usize, seed: u64) -> Self {
        Self { source, schedule, horizon, samples, seed, tilt: None }
    }

    pub fn with_tilt(mut self, lambda: f64) -> Self {
        self.tilt = Some(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if !(self.horizon >= 1.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be at least 1, got {}", self.horizon)));
        }
        if self.samples == 0 {
            return Err(invalid("at least one replicate is required"));
        }
        match (&self.source, &self.schedule) {
            (Source::Ctmc { .. }, Schedule::Continuous(s)) => s.validate_horizon(self.horizon)?,
            (Source::Ctmc { .. }, Schedule::Discrete(_)) => {
                return Err(invalid("a continuous-time source needs a real-valued schedule"))
            }
            (_, Schedule::Continuous(_)) => return Err(invalid("a discrete source needs an integer schedule")),
            (_, Schedule::Discrete(_)) => {
                if self.horizon.fract() != 0.0 {
                    return Err(invalid(format!("discrete horizon must be an integer, got {}", self.horizon)));
                }
            }
        }
        if let Some(lambda) = self.tilt {
            if !lambda.is_finite() {
                return Err(invalid("tilt must be finite"));
            }
            if !matches!(self.source, Source::Iid(_)) || self.schedule.k() != 1 || self.schedule.ell() != 1 {
                return Err(invalid("tilting is only available for i.i.d. sources with k = ell = 1"));
            }
        }
        Ok(())
    }

    fn check_observable(&self, f: &Observable) -> Result<()> {
        if f.arity() != self.schedule.ell() || f.alphabet_size() != self.source.alphabet_size() {
            return Err(invalid(format!(
                "observable must have arity {} over {} symbols",
                self.schedule.ell(),
                self.source.alphabet_size()
            )));
        }
        Ok(())
    }
}

/// Per-replicate occupation counts (discrete) or times (continuous) of each
/// flat tuple, folded by `fold`.
fn replicates<T: Send>(
    plan: &SimulationPlan,
    source: &Source,
    fold: impl Fn(&mut dyn Iterator<Item = (usize, f64)>) -> T + Sync,
) -> Result<Vec<T>> {
    plan.validate()?;
    match (&plan.schedule, source) {
        (Schedule::Discrete(s), _) => discrete_replicates(plan, source, s, fold),
        (Schedule::Continuous(s), Source::Ctmc { l, x0 }) => {
            let m = l.size();
            let reach = s.max_time(plan.horizon);
            (0..plan.samples)
                .into_par_iter()
                .map(|i| {
                    let path = gillespie(l, *x0, reach, &mut stream(plan.seed, i as u64))?;
                    let segs = tuple_segments(&path, s, m, plan.horizon)?;
                    Ok(fold(&mut segs.iter().map(|seg| (seg.tuple, seg.end - seg.start))))
                })
                .collect()
        }
        _ => unreachable!("validated above"),
    }
}

fn discrete_replicates<T: Send>(
    plan: &SimulationPlan,
    source: &Source,
    schedule: &QSchedule,
    fold: impl Fn(&mut dyn Iterator<Item = (usize, f64)>) -> T + Sync,
) -> Result<Vec<T>> {
    let sampler = TupleSampler::new(source, schedule, 1, plan.horizon as u64)?;
    Ok((0..plan.samples)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(values, tuples), i| {
                let mut rng: ChaCha8Rng = stream(plan.seed, i as u64);
                sampler.sample(&mut rng, values, tuples);
                fold(&mut tuples.iter().map(|&t| (t, 1.0)))
            },
        )
        .collect())
}

fn sums_under(plan: &SimulationPlan, source: &Source, f: &Observable) -> Result<Vec<f64>> {
    plan.check_observable(f)?;
    let values = f.values();
    replicates(plan, source, |it| neumaier_sum(it.map(|(t, w)| w * values[t])))
}

/// `S_N(F) = Σ_{n≤N} F(X(q₁(n)), …, X(q_ℓ(n)))`, or `S_T = ∫₀ᵀ F(…) dt`, once
/// per replicate. Always drawn from the untilted law.
pub fn run_sums(plan: &SimulationPlan, f: &Observable) -> Result<Vec<f64>> {
    sums_under(plan, &plan.source, f)
}

/// The empirical tuple law `ζ_N` (or `ζ_T`) of each replicate.
pub fn occupational_measure(plan: &SimulationPlan) -> Result<Vec<OccupationalMeasure>> {
    let m = plan.source.alphabet_size();
    let ell = plan.schedule.ell();
    let size = m.checked_pow(ell as u32).filter(|s| *s <= TENSOR_CAP).ok_or(Error::TooLarge {
        what: "occupational tensor",
        size: (m as f64).powi(ell as i32),
        cap: TENSOR_CAP as f64,
    })?;
    let horizon = plan.horizon;
    replicates(plan, &plan.source, |it| {
        let mut acc = vec![0.0; size];
        for (t, w) in it {
            acc[t] += w;
        }
        acc.iter_mut().for_each(|v| *v /= horizon);
        acc
    })?
    .into_iter()
    .map(|w| OccupationalMeasure::new(m, ell, w))
    .collect()
}

/// `n_{α₁…α_k}(N) = #{n ≤ N : X(jn) = α_j, j = 1..k}` per replicate.
pub fn progression_count(plan: &SimulationPlan, pattern: &[usize]) -> Result<Vec<u64>> {
    let m = plan.source.alphabet_size();
    let Schedule::Discrete(s) = &plan.schedule else {
        return Err(invalid("progression counts need a discrete schedule"));
    };
    if !matches!(plan.source, Source::Iid(_)) || s.k != s.ell {
        return Err(invalid("progression counts need an i.i.d. source and k = ell"));
    }
    if pattern.len() != s.k || pattern.iter().any(|&a| a >= m) {
        return Err(invalid(format!("pattern must have {} symbols below {m}", s.k)));
    }
    let target = pattern.iter().fold(0, |acc, &a| acc * m + a);
    replicates(plan, &plan.source, |it| it.filter(|(t, _)| *t == target).count() as u64)
}

/// Which tail of `S_N / N` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    AtLeast,
    AtMost,
}

/// `−(1/N) ln P̂{S_N/N ⋚ u}` with a 95% interval. When no replicate hits
/// the event, `censored` is set, `rate` holds the lower bound
/// `(1/N) ln samples` and `ci_hi` is `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalRate {
    pub u: f64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub probability: f64,
    pub hits: usize,
    pub samples: usize,
    pub censored: bool,
}

/// Wilson score interval for a binomial proportion.
fn wilson(hits: usize, n: usize) -> (f64, f64) {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn neg_log_rate(p: f64, n: f64) -> f64 {
    if p <= 0.0 {
        f64::INFINITY
    } else {
        -p.ln() / n
    }
}

/// `ln E_μ e^{λF}` and the tilted law `μ_λ ∝ μ e^{λF}`.
fn tilted(mu: &ProbVector, f: &[f64], lambda: f64) -> Result<(f64, ProbVector)> {
    let top = f.iter().map(|v| lambda * v).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = mu.weights().iter().zip(f).map(|(p, v)| p * (lambda * v - top).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok((top + z.ln(), ProbVector::from_unnormalized(w)?))
}

/// The tilt `λ` whose tilted mean of `F` equals `u`.
pub fn optimal_tilt(mu: &ProbVector, f: &Observable, u: f64) -> Result<f64> {
    if f.arity() != 1 || f.alphabet_size() != mu.len() {
        return Err(invalid("tilting needs a one-coordinate observable over the source alphabet"));
    }
    let support: Vec<f64> = f.values().iter().zip(mu.weights()).filter(|(_, p)| **p > 0.0).map(|(v, _)| *v).collect();
    let lo_v = support.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_v = support.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(u > lo_v && u < hi_v) {
        return Err(Error::SupremumUnbounded { u });
    }
    let mean_at = |l: f64| -> Result<f64> {
        let (_, m) = tilted(mu, f.values(), l)?;
        Ok(m.mean_of(f.values()))
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mean_at(lo)? > u {
        lo *= 2.0;
    }
    while mean_at(hi)? < u {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid)? < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Tail exponent of `S_N / N` at `u`. With a tilt `λ` the replicates are drawn
/// from `μ_λ` and reweighted by `exp(−λ S_N + N ln E_μ e^{λF})`.
pub fn empirical_rate(plan: &SimulationPlan, f: &Observable, u: f64, side: Side) -> Result<EmpiricalRate> {
    plan.validate()?;
    let n = plan.horizon;
    let hit = |s: f64| match side {
        Side::AtLeast => s >= u * n,
        Side::AtMost => s <= u * n,
    };
    let samples = plan.samples;
    let (probability, hits, lo_p, hi_p) = match (plan.tilt, &plan.source) {
        (Some(lambda), Source::Iid(mu)) => {
            plan.check_observable(f)?;
            let (log_mgf, mu_l) = tilted(mu, f.values(), lambda)?;
            let sums = sums_under(plan, &Source::Iid(mu_l), f)?;
            let w: Vec<f64> =
                sums.iter().map(|&s| if hit(s) { (-lambda * s + n * log_mgf).exp() } else { 0.0 }).collect();
            let hits = sums.iter().filter(|&&s| hit(s)).count();
            let mean = neumaier_sum(w.iter().copied()) / samples as f64;
            let var = neumaier_sum(w.iter().map(|x| (x - mean).powi(2))) / (samples as f64 - 1.0).max(1.0);
            let half = Z95 * (var / samples as f64).sqrt();
            (mean, hits, (mean - half).max(0.0), mean + half)
        }
        _ => {
            let sums = run_sums(plan, f)?;
            let hits = sums.iter().filter(|&&s| hit(s)).count();
            let (lo, hi) = wilson(hits, samples);
            (hits as f64 / samples as f64, hits, lo, hi)
        }
    };
    if hits == 0 {
        let bound = (samples as f64).ln() / n;
        return Ok(EmpiricalRate { u, rate: bound, ci_lo: bound, ci_hi: f64::INFINITY, probability: 0.0, hits, samples, censored: true });
    }
    Ok(EmpiricalRate {
        u,
        rate: neg_log_rate(probability, n),
        ci_lo: neg_log_rate(hi_p, n).max(0.0),
        ci_hi: neg_log_rate(lo_p, n),
        probability,
        hits,
        samples,
        censored: false,
    })
}

/// Scaled centred sums `N^{κ−1} S_N(V − V̄)`.
#[derive(Debug, Clone, Serialize)]
pub struct MdpSample {
    pub kappa: f64,
    pub mean_value: f64,
    pub scaled: Vec<f64>,
    /// Sample variance of `N^{−1/2} S_N(V − V̄)`.
    pub normalized_variance: f64,
}

/// Moderately scaled fluctuations of `S_N(V)` about `N V̄`, where `V̄` is the
/// product mean under the invariant law of the source.
pub fn mdp_empirical(plan: &SimulationPlan, v: &Observable, kappa: f64) -> Result<MdpSample> {
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(invalid(format!("kappa must lie in (0, 1/2), got {kappa}")));
    }
    let mu = match &plan.source {
        Source::Iid(mu) => mu.clone(),
        Source::Markov { p, .. } => stationary_distribution(p)?,
        Source::Ctmc { .. } => return Err(invalid("moderate deviations are simulated for discrete sources")),
    };
    let mean_value = product_mean(v, &mu)?;
    let n = plan.horizon;
    let centred: Vec<f64> = run_sums(plan, v)?.iter().map(|s| s - n * mean_value).collect();
    let normalized: Vec<f64> = centred.iter().map(|s| s / n.sqrt()).collect();
    let k = normalized.len() as f64;
    let avg = neumaier_sum(normalized.iter().copied()) / k;
    let normalized_variance = neumaier_sum(normalized.iter().map(|x| (x - avg).powi(2))) / (k - 1.0).max(1.0);
    let scale = n.powf(kappa - 1.0);
    Ok(MdpSample { kappa, mean_value, scaled: centred.iter().map(|s| s * scale).collect(), normalized_variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctime::{AlphaSchedule, GeneratorMatrix};
    use crate::model::StochasticMatrix;
    use proptest::prelude::*;

    fn fair_plan(n: f64, samples: usize, seed: u64) -> SimulationPlan {
        SimulationPlan::new(Source::Iid(ProbVector::uniform(2)), Schedule::Discrete(QSchedule::linear(1)), n, samples, seed)
    }

    #[test]
    fn constant_observable() {
        let plan = fair_plan(37.0, 5, 1);
        let sums = run_sums(&plan, &Observable::constant(2, 1, 1.5).unwrap()).unwrap();
        assert!(sums.iter().all(|s| *s == 1.5 * 37.0));
    }

    #[test]
    fn bernoulli_mean() {
        let (n, samples) = (200.0, 4000);
        let sums = run_sums(&fair_plan(n, samples, 2), &Observable::new(2, 1, vec![0.0, 1.0]).unwrap()).unwrap();
        let mean = sums.iter().sum::<f64>() / (n * samples as f64);
        let se = (4.0 * n * samples as f64).powf(-0.5);
        assert!((mean - 0.5).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn lln_for_k2() {
        let mu = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let f = Observable::new(2, 2, vec![1.0, -0.5, 2.0, 0.25]).unwrap();
        let plan = SimulationPlan::new(Source::Iid(mu.clone()), Schedule::Discrete(QSchedule::linear(2)), 500.0, 2000, 3);
        let sums = run_sums(&plan, &f).unwrap();
        let xs: Vec<f64> = sums.iter().map(|s| s / 500.0).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        let want = product_mean(&f, &mu).unwrap();
        assert!((mean - want).abs() < 3.0 * sd / (xs.len() as f64).sqrt(), "{mean} vs {want}");
    }

    #[test]
    fn occupation_matches_sums() {
        let p = StochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        let sched = QSchedule::new(1, 2, vec![vec![0, 0, 1]]).unwrap();
        let plan = SimulationPlan::new(Source::Markov { p, x0: 0 }, Schedule::Discrete(sched), 300.0, 20, 4);
        let f = Observable::new(2, 2, vec![0.3, -1.0, 2.5, 0.7]).unwrap();
        let sums = run_sums(&plan, &f).unwrap();
        let zetas = occupational_measure(&plan).unwrap();
        for (s, z) in sums.iter().zip(&zetas) {
            assert!((z.integrate(&f) - s / 300.0).abs() < 1e-12);
            assert!((z.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn product_limit_for_squares() {
        let mu = ProbVector::new(vec![0.25, 0.75]).unwrap();
        let sched = QSchedule::new(1, 2, vec![vec![0, 0, 1]]).unwrap();
        let plan = SimulationPlan::new(Source::Iid(mu.clone()), Schedule::Discrete(sched), 1e5, 1, 5);
        let zeta = &occupational_measure(&plan).unwrap()[0];
        assert!(zeta.total_variation(&OccupationalMeasure::product(&mu, 2)) <= 0.02);
    }

    #[test]
    fn point_mass_for_absorbing_source() {
        let plan = SimulationPlan::new(
            Source::Iid(ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap()),
            Schedule::Discrete(QSchedule::linear(2)),
            50.0,
            3,
            6,
        );
        for z in occupational_measure(&plan).unwrap() {
            assert_eq!(z.weights()[4], 1.0);
        }
    }

    #[test]
    fn continuous_occupation() {
        let l = GeneratorMatrix::two_state(1.0, 3.0).unwrap();
        let plan = SimulationPlan::new(
            Source::Ctmc { l, x0: 0 },
            Schedule::Continuous(AlphaSchedule::single(1.0).unwrap()),
            2000.0,
            2,
            7,
        );
        let f = Observable::new(2, 1, vec![1.0, 0.0]).unwrap();
        let sums = run_sums(&plan, &f).unwrap();
        let zetas = occupational_measure(&plan).unwrap();
        for (s, z) in sums.iter().zip(&zetas) {
            assert!((z.weights()[0] - s / 2000.0).abs() < 1e-12);
            assert!((z.weights()[0] - 0.75).abs() < 0.05);
        }
    }

    #[test]
    fn progression_counts() {
        let plan = SimulationPlan::new(Source::Iid(ProbVector::uniform(2)), Schedule::Discrete(QSchedule::linear(2)), 400.0, 500, 8);
        let counts = progression_count(&plan, &[1, 0]).unwrap();
        let sums = run_sums(&plan, &Observable::indicator(2, &[1, 0]).unwrap()).unwrap();
        for (c, s) in counts.iter().zip(&sums) {
            assert_eq!(*c as f64, *s);
        }
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        assert!((mean - 100.0).abs() < 3.0, "{mean}");
        assert!(progression_count(&plan, &[2, 0]).is_err());
    }

    #[test]
    fn rate_at_centre_and_censoring() {
        let f = Observable::new(2, 1, vec![0.0, 1.0]).unwrap();
        let plan = fair_plan(100.0, 2000, 9);
        let centre = empirical_rate(&plan, &f, 0.5, Side::AtLeast).unwrap();
        assert!(centre.rate < 0.01);
        let far = empirical_rate(&fair_plan(100.0, 100, 9), &f, 0.95, Side::AtLeast).unwrap();
        assert!(far.censored);
        assert_eq!(far.rate, 100f64.ln() / 100.0);
    }

    #[test]
    fn tilted_and_plain_estimators_agree() {
        let f = Observable::new(2, 1, vec![0.0, 1.0]).unwrap();
        let mu = ProbVector::uniform(2);
        let lambda = optimal_tilt(&mu, &f, 0.6).unwrap();
        assert!((lambda - 1.5f64.ln()).abs() < 1e-12);
        let plain = empirical_rate(&fair_plan(40.0, 20_000, 10), &f, 0.6, Side::AtLeast).unwrap();
        let tilt = empirical_rate(&fair_plan(40.0, 20_000, 11).with_tilt(lambda), &f, 0.6, Side::AtLeast).unwrap();
        assert!(plain.ci_lo <= tilt.ci_hi && tilt.ci_lo <= plain.ci_hi, "{plain:?} {tilt:?}");
        assert!(tilt.ci_hi - tilt.ci_lo < plain.ci_hi - plain.ci_lo);
    }

    #[test]
    fn tilt_restrictions() {
        let plan = SimulationPlan::new(Source::Iid(ProbVector::uniform(2)), Schedule::Discrete(QSchedule::linear(2)), 10.0, 1, 0)
            .with_tilt(0.5);
        assert!(plan.validate().is_err());
        assert!(fair_plan(0.5, 1, 0).validate().is_err());
        assert!(fair_plan(10.0, 0, 0).validate().is_err());
    }

    #[test]
    fn mdp_constant_and_k1_variance() {
        let plan = fair_plan(400.0, 4000, 12);
        let zero = mdp_empirical(&plan, &Observable::constant(2, 1, 3.0).unwrap(), 0.3).unwrap();
        assert!(zero.scaled.iter().all(|x| *x == 0.0));
        let mu = ProbVector::new(vec![0.2, 0.8]).unwrap();
        let v = Observable::new(2, 1, vec![1.0, -1.0]).unwrap();
        let plan = SimulationPlan::new(Source::Iid(mu), Schedule::Discrete(QSchedule::linear(1)), 400.0, 4000, 13);
        let s = mdp_empirical(&plan, &v, 0.25).unwrap();
        // Var_μ(V) = 4 · 0.2 · 0.8
        assert!((s.normalized_variance - 0.64).abs() < 0.64 * 0.1, "{}", s.normalized_variance);
        assert!(mdp_empirical(&plan, &v, 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn reproducible_across_thread_counts(seed in any::<u64>()) {
            let p = StochasticMatrix::new(vec![vec![0.5, 0.5, 0.0], vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4]]).unwrap();
            let sched = QSchedule::new(2, 3, vec![vec![1, 1, 1]]).unwrap();
            let plan = SimulationPlan::new(Source::Markov { p, x0: 2 }, Schedule::Discrete(sched), 60.0, 16, seed);
            let f = Observable::from_fn(3, 3, |x| (x[0] + 2 * x[1]) as f64 - x[2] as f64 * 0.5).unwrap();
            let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_sums(&plan, &f).unwrap());
            let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| run_sums(&plan, &f).unwrap());
            prop_assert_eq!(one, many);
        }
    }
}
