use std::path::Path;

use sha2::{Digest, Sha256};

use nonconv::config::ModelConfig;
use nonconv::ctime::{
    duality_check_cont, exp_moment_functional, q_cont, rate_function_cont, simulate_slow_motion, AlphaSchedule,
    GeneratorMatrix, SlowField, TimeVaryingPotential,
};
use nonconv::lattice::{lattice_census, mdp_coefficients, prime_basis, q_series, rate_function_iid, smooth_levels, Strategy};
use nonconv::legendre::{LegendreConfig, RateFunction, RateStatus};
use nonconv::markov::{duality_check, q_functional, rate_function_markov, DualityReport};
use nonconv::model::{doeblin_check, stationary_distribution, Observable, ProbVector, QSchedule};
use nonconv::montecarlo::{empirical_rate, mdp_empirical, optimal_tilt, run_sums, Side, SimulationPlan};
use nonconv::sampling::{Schedule, Source};
use nonconv::symbolic::{q_dynamical, sft_pressure, LocalPotential};

use crate::report::Report;
use crate::{Backend, Cli, CliError, Command, Grid, SourceKind, TailSide};

type Res<T> = Result<T, CliError>;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the model file followed by the command's parameters.
fn config_hash(model: Option<&[u8]>, command: &Command) -> String {
    let mut h = Sha256::new();
    if let Some(bytes) = model {
        h.update(bytes);
    }
    h.update(b"\n");
    h.update(serde_json::to_vec(command).expect("command serialises"));
    hex(&h.finalize())
}

fn model_path(command: &Command) -> Option<&Path> {
    match command {
        Command::Validate { model, .. }
        | Command::Rate { model, .. }
        | Command::Q { model, .. }
        | Command::Simulate { model, .. }
        | Command::Pressure { model, .. }
        | Command::Average { model, .. }
        | Command::Mdp { model, .. }
        | Command::Duality { model, .. } => Some(model),
        Command::Lattice { .. } => None,
    }
}

pub fn dispatch(cli: &Cli) -> Res<Report> {
    let bytes = match model_path(&cli.command) {
        Some(p) => Some(std::fs::read(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?),
        None => None,
    };
    let model = match &bytes {
        Some(b) => {
            let text = std::str::from_utf8(b).map_err(|_| nonconv::Error::InvalidInput("model file is not UTF-8".into()))?;
            Some(ModelConfig::from_toml(text)?)
        }
        None => None,
    };
    let seed = cli.seed;
    let mut report = match (&cli.command, model.as_ref()) {
        (Command::Validate { doeblin_max, .. }, Some(m)) => validate(m, *doeblin_max)?,
        (Command::Rate { backend, k, lmax, lambda, u, observable, alpha, .. }, Some(m)) => {
            rate(m, *backend, *k, *lmax, *lambda, *u, observable.as_deref(), *alpha)?
        }
        (Command::Q { backend, lambda, lmax, observable, alpha, .. }, Some(m)) => {
            q(m, *backend, *lambda, *lmax, observable.as_deref(), *alpha)?
        }
        (Command::Lattice { k, n, levels }, None) => lattice(*k, *n, *levels)?,
        (Command::Simulate { horizon, samples, source, observable, u, side, tilt, .. }, Some(m)) => {
            simulate(m, *horizon, *samples, *source, observable.as_deref(), *u, *side, tilt.as_deref(), seed)?
        }
        (Command::Pressure { observable, .. }, Some(m)) => pressure(m, observable.as_deref())?,
        (Command::Average { eps, horizon, observable, xi0, moment, samples, .. }, Some(m)) => {
            average(m, *eps, *horizon, observable.as_deref(), *xi0, *moment, *samples, seed)?
        }
        (Command::Mdp { n, samples, kappa, lmax, observable, .. }, Some(m)) => {
            mdp(m, *n, *samples, *kappa, *lmax, observable.as_deref(), seed)?
        }
        (Command::Duality { backend, observable, alpha, .. }, Some(m)) => {
            duality(m, *backend, observable.as_deref(), *alpha)?
        }
        _ => unreachable!("model presence follows the command"),
    };
    report.config_hash = config_hash(bytes.as_deref(), &cli.command);
    report.seed = seed;
    Ok(report)
}

fn validate(m: &ModelConfig, doeblin_max: usize) -> Res<Report> {
    let mut r = Report::new("validate", &["section", "detail"]);
    r.push(vec!["alphabet".into(), format!("M={}", m.alphabet.size()).into()]);
    r.note("M", m.alphabet.size());
    if let Some(mu) = &m.mu {
        r.push(vec!["mu".into(), format!("weights {:?}", mu.weights()).into()]);
    }
    if let Some((p, x0)) = &m.chain {
        let cert = doeblin_check(p, doeblin_max)?;
        r.push(vec![
            "P".into(),
            format!("Doeblin n0={}, C={:.6}, density bound {}, x0={x0}", cert.n0, cert.c, cert.density_bound_holds).into(),
        ]);
        r.note("doeblin_n0", cert.n0);
        r.note("doeblin_c", cert.c);
    }
    if let Some((l, x0)) = &m.generator {
        let pi = l.stationary()?;
        r.push(vec!["L".into(), format!("irreducible, stationary {:?}, x0={x0}", pi.weights()).into()]);
    }
    for (name, f) in &m.observables {
        r.push(vec![format!("observable.{name}").into(), format!("arity {}", f.arity()).into()]);
    }
    if let Some(s) = &m.schedule {
        let integer = s.discrete().is_ok();
        let real = s.continuous().is_ok();
        r.push(vec!["schedule".into(), format!("k={}, ell={}, integer {integer}, real {real}", s.k, s.ell).into()]);
        r.note("ell", s.ell);
    } else if let Ok(f) = m.observable(None) {
        r.note("ell", f.arity());
    }
    if let Some((spec, _)) = &m.sft {
        r.push(vec!["sft".into(), format!("primitive on {} symbols", spec.alphabet_size()).into()]);
    }
    Ok(r)
}

fn alpha1(m: &ModelConfig, alpha: Option<f64>) -> Res<f64> {
    if let Some(a) = alpha {
        return Ok(a);
    }
    Ok(match &m.schedule {
        Some(s) => s.continuous()?.alphas[0],
        None => 1.0,
    })
}

fn generator_law(m: &ModelConfig) -> Res<(GeneratorMatrix, ProbVector)> {
    let (l, _) = m.require_generator()?;
    Ok((l.clone(), l.stationary()?))
}

fn default_backend(m: &ModelConfig) -> Backend {
    if m.chain.is_some() {
        Backend::Markov
    } else if m.mu.is_some() {
        Backend::Iid
    } else {
        Backend::Cont
    }
}

fn range_grid(f: &Observable) -> Vec<f64> {
    let lo = f.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..=40).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect()
}

fn status_text(s: RateStatus) -> &'static str {
    match s {
        RateStatus::Interior => "interior",
        RateStatus::AtCap => "at_cap",
        RateStatus::Unbounded => "unbounded",
    }
}

#[allow(clippy::too_many_arguments)]
fn rate(
    m: &ModelConfig,
    backend: Backend,
    k: Option<usize>,
    lmax: usize,
    lambda: Grid,
    u: Option<Grid>,
    observable: Option<&str>,
    alpha: Option<f64>,
) -> Res<Report> {
    let f = m.observable(observable)?;
    if let Some(k) = k {
        let expected = if backend == Backend::Iid { f.arity() } else { 1 };
        if k != expected {
            return Err(nonconv::Error::WrongK { expected, got: k }.into());
        }
    }
    if lambda.step <= 0.0 {
        return Err(CliError::Usage("--lambda needs a range lo:hi:step".into()));
    }
    let cfg = LegendreConfig { lambda_min: lambda.lo, lambda_max: lambda.hi, step: lambda.step, ..LegendreConfig::default() };
    let grid = u.map(|g| g.values()).unwrap_or_else(|| range_grid(f));
    let rf: RateFunction = match backend {
        Backend::Markov => {
            let (p, _) = m.require_chain()?;
            rate_function_markov(p, &stationary_distribution(p)?, f, &grid, &cfg)?
        }
        Backend::Iid => rate_function_iid(f, m.require_mu()?, lmax, &grid, &cfg, Strategy::Auto)?,
        Backend::Cont => {
            let (l, mu) = generator_law(m)?;
            rate_function_cont(&l, &mu, f, alpha1(m, alpha)?, &grid, &cfg)?
        }
    };
    let mut r = Report::new("rate", &["u", "J", "lambda_star", "status"]);
    for p in &rf.j_values {
        r.push(vec![p.u.into(), p.j.into(), p.lambda.into(), status_text(p.status).into()]);
        r.flagged |= p.status == RateStatus::AtCap;
    }
    r.note("j_min", rf.j_min());
    r.note("q_convex", rf.q_is_convex(1e-9));
    r.note("j_convex", rf.j_is_convex(1e-9));
    Ok(r)
}

fn q(m: &ModelConfig, backend: Option<Backend>, lambda: Grid, lmax: usize, observable: Option<&str>, alpha: Option<f64>) -> Res<Report> {
    let f = m.observable(observable)?;
    let backend = backend.unwrap_or_else(|| default_backend(m));
    let mut r = Report::new("q", &["lambda", "q", "tail_bound"]);
    for lam in lambda.values() {
        let w = f.scaled(lam);
        let (value, tail) = match backend {
            Backend::Markov => {
                let (p, _) = m.require_chain()?;
                (q_functional(p, &stationary_distribution(p)?, &w)?, 0.0)
            }
            Backend::Iid => {
                let s = q_series(&w, m.require_mu()?, lmax, Strategy::Auto)?;
                (s.value, s.tail_bound)
            }
            Backend::Cont => {
                let (l, mu) = generator_law(m)?;
                (q_cont(&l, &mu, &w, alpha1(m, alpha)?)?, 0.0)
            }
        };
        r.push(vec![lam.into(), value.into(), tail.into()]);
    }
    r.note("backend", format!("{backend:?}").to_lowercase());
    Ok(r)
}

fn lattice(k: usize, n: u64, levels: usize) -> Res<Report> {
    let basis = prime_basis(k)?;
    let census = lattice_census(n, &basis)?;
    let weights = smooth_levels(&basis, levels.max(1))?;
    let r_density = basis.density();
    let nf = n as f64;
    let mut r = Report::new("lattice", &["level", "count", "fraction", "predicted"]);
    for l in 1..=levels {
        let count = census.levels.get(&l).map_or(0, |c| c.count);
        r.push(vec![l.into(), count.into(), (count as f64 / nf).into(), (r_density * weights.weight(l)).into()]);
    }
    r.note("density_r", r_density);
    r.note("a_fraction", census.a_count as f64 / nf);
    r.note("a_count", census.a_count);
    r.note("a_count_sieve", census.a_count_sieve);
    r.note("bound_violations", census.bound_violations);
    Ok(r)
}

fn plan_for(
    m: &ModelConfig,
    f_arity: usize,
    kind: Option<SourceKind>,
    horizon: f64,
    samples: usize,
    seed: u64,
) -> Res<(SimulationPlan, ProbVector)> {
    let kind = kind.unwrap_or(if m.chain.is_some() {
        SourceKind::Markov
    } else if m.mu.is_some() {
        SourceKind::Iid
    } else {
        SourceKind::Cont
    });
    let discrete = || -> Res<QSchedule> {
        Ok(match &m.schedule {
            Some(s) => s.discrete()?,
            None => QSchedule::linear(f_arity),
        })
    };
    let (source, schedule, law) = match kind {
        SourceKind::Iid => {
            let mu = m.require_mu()?.clone();
            (Source::Iid(mu.clone()), Schedule::Discrete(discrete()?), mu)
        }
        SourceKind::Markov => {
            let (p, x0) = m.require_chain()?;
            (Source::Markov { p: p.clone(), x0: *x0 }, Schedule::Discrete(discrete()?), stationary_distribution(p)?)
        }
        SourceKind::Cont => {
            let (l, x0) = m.require_generator()?;
            let sched = match &m.schedule {
                Some(s) => s.continuous()?,
                None => AlphaSchedule::new((1..=f_arity).map(|j| j as f64).collect(), Vec::new())?,
            };
            (Source::Ctmc { l: l.clone(), x0: *x0 }, Schedule::Continuous(sched), l.stationary()?)
        }
    };
    Ok((SimulationPlan::new(source, schedule, horizon, samples, seed), law))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    m: &ModelConfig,
    horizon: f64,
    samples: usize,
    kind: Option<SourceKind>,
    observable: Option<&str>,
    u: Option<f64>,
    side: TailSide,
    tilt: Option<&str>,
    seed: u64,
) -> Res<Report> {
    let f = m.observable(observable)?;
    let (mut plan, law) = plan_for(m, f.arity(), kind, horizon, samples, seed)?;
    let Some(u) = u else {
        if tilt.is_some() {
            return Err(CliError::Usage("--tilt only applies with --u".into()));
        }
        let sums = run_sums(&plan, f)?;
        let mut r = Report::new("simulate", &["replicate", "sum", "mean"]);
        for (i, s) in sums.iter().enumerate() {
            r.push(vec![i.into(), (*s).into(), (s / horizon).into()]);
        }
        let avg = sums.iter().sum::<f64>() / (sums.len() as f64 * horizon);
        r.note("average", avg);
        return Ok(r);
    };
    if let Some(t) = tilt {
        let lambda = match t {
            "auto" => optimal_tilt(&law, f, u)?,
            v => v.parse::<f64>().map_err(|e| CliError::Usage(format!("bad --tilt {v:?}: {e}")))?,
        };
        plan = plan.with_tilt(lambda);
    }
    let side = match side {
        TailSide::Ge => Side::AtLeast,
        TailSide::Le => Side::AtMost,
    };
    let e = empirical_rate(&plan, f, u, side)?;
    let mut r = Report::new("simulate", &["u", "rate", "ci_lo", "ci_hi", "probability", "hits", "samples", "censored"]);
    r.push(vec![
        e.u.into(),
        e.rate.into(),
        e.ci_lo.into(),
        e.ci_hi.into(),
        e.probability.into(),
        e.hits.into(),
        e.samples.into(),
        e.censored.into(),
    ]);
    r.note("tilt", plan.tilt.unwrap_or(0.0));
    r.note("censored", e.censored);
    Ok(r)
}

fn pressure(m: &ModelConfig, observable: Option<&str>) -> Res<Report> {
    let (spec, g) = m.sft.as_ref().ok_or_else(|| nonconv::Error::InvalidInput("model has no [sft] section".into()))?;
    let p = sft_pressure(spec, g)?;
    let w = match observable {
        Some(name) => Some(m.observable(Some(name))?),
        None => m.observable(None).ok(),
    };
    let mut r = Report::new("pressure", &["pressure", "q_dynamical"]);
    let qd = match w {
        Some(w) => q_dynamical(spec, g, w)?,
        None => f64::NAN,
    };
    r.push(vec![p.into(), qd.into()]);
    r.note("pressure", p);
    r.note("entropy_bound", sft_pressure(spec, &LocalPotential::zero(spec.alphabet_size()))?);
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
fn average(
    m: &ModelConfig,
    eps: f64,
    horizon: f64,
    observable: Option<&str>,
    xi0: f64,
    moment: bool,
    samples: usize,
    seed: u64,
) -> Res<Report> {
    let f = m.observable(observable)?;
    if moment {
        let (l, mu) = generator_law(m)?;
        let (_, x0) = m.require_generator()?;
        let sched = match &m.schedule {
            Some(s) => s.continuous()?,
            None if f.arity() == 1 => AlphaSchedule::single(1.0)?,
            None => return Err(nonconv::Error::InvalidInput("observables of arity above 1 need a [schedule]".into()).into()),
        };
        let pot = TimeVaryingPotential::constant(f.clone(), horizon)?;
        let e = exp_moment_functional(&pot, &l, &mu, &sched, *x0, eps, samples, seed)?;
        let mut r = Report::new("average", &["lhs", "lhs_std_error", "rhs", "gap"]);
        r.push(vec![e.lhs.into(), e.lhs_std_error.into(), e.rhs.into(), e.gap.into()]);
        r.note("gap", e.gap);
        return Ok(r);
    }
    let (plan, law) = plan_for(m, f.arity(), None, 1.0, 1, seed)?;
    let field = SlowField::relaxation(f);
    let motion = simulate_slow_motion(&field, &plan.source, &plan.schedule, &law, eps, horizon, &[xi0], seed)?;
    let mut r = Report::new("average", &["t", "xi", "xi_bar"]);
    for ((t, x), a) in motion.times.iter().zip(&motion.path).zip(&motion.averaged) {
        r.push(vec![(*t).into(), x[0].into(), a[0].into()]);
    }
    r.note("sup_distance", motion.sup_distance);
    Ok(r)
}

fn mdp(m: &ModelConfig, n: u64, samples: usize, kappa: f64, lmax: usize, observable: Option<&str>, seed: u64) -> Res<Report> {
    let v = m.observable(observable)?;
    let mu = m.require_mu()?;
    let coeffs = mdp_coefficients(v, mu, lmax)?;
    let plan = SimulationPlan::new(Source::Iid(mu.clone()), Schedule::Discrete(QSchedule::linear(v.arity())), n as f64, samples, seed);
    let sample = mdp_empirical(&plan, v, kappa)?;
    let mut r = Report::new("mdp", &["replicate", "scaled_sum"]);
    for (i, x) in sample.scaled.iter().enumerate() {
        r.push(vec![i.into(), (*x).into()]);
    }
    r.note("variance_series", coeffs.variance);
    r.note("variance_empirical", sample.normalized_variance);
    r.note("relative_error", (sample.normalized_variance - coeffs.variance).abs() / coeffs.variance);
    r.note("tail_bound", coeffs.tail_bound);
    r.note("v_bar", coeffs.v_bar);
    Ok(r)
}

fn duality(m: &ModelConfig, backend: Option<Backend>, observable: Option<&str>, alpha: Option<f64>) -> Res<Report> {
    let w = m.observable(observable)?;
    let backend = match backend.unwrap_or_else(|| default_backend(m)) {
        Backend::Iid => return Err(CliError::Usage("duality is available for the markov and cont backends".into())),
        b => b,
    };
    let d: DualityReport = match backend {
        Backend::Markov => {
            let (p, _) = m.require_chain()?;
            duality_check(w, p, &stationary_distribution(p)?)?
        }
        _ => {
            let (l, mu) = generator_law(m)?;
            duality_check_cont(w, &l, &mu, alpha1(m, alpha)?)?
        }
    };
    let mut r = Report::new("duality", &["q", "dual_value", "gap", "converged"]);
    r.push(vec![d.q.into(), d.dual_value.into(), d.gap.into(), d.converged.into()]);
    r.flagged = !d.converged;
    r.note("gap", d.gap);
    r.note("signed_gap", d.signed_gap);
    Ok(r)
}
