//! Cross-module checks: model files feed the analytic backends, and the
//! Monte Carlo engine agrees with them.

use nonconv::config::ModelConfig;
use nonconv::lattice::{q_series, Strategy};
use nonconv::markov::q_functional;
use nonconv::model::{product_mean, QSchedule};
use nonconv::montecarlo::{run_sums, SimulationPlan};
use nonconv::sampling::{Schedule, Source};

const IID_ROWS: &str = r#"
[alphabet]
labels = ["a", "b", "c"]
[mu]
weights = [0.2, 0.3, 0.5]
[P]
rows = [[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]]
x0 = "b"
[observable.F]
arity = 1
entries = [-1.0, 0.5, 2.0]
"#;

#[test]
fn model_file_drives_series_and_transfer_operator() {
    let cfg = ModelConfig::from_toml(IID_ROWS).unwrap();
    let f = cfg.observable(None).unwrap();
    let mu = cfg.require_mu().unwrap();
    let (p, x0) = cfg.require_chain().unwrap();
    assert_eq!(*x0, 1);
    for lambda in [-1.5, -0.2, 0.7, 2.0] {
        let w = f.scaled(lambda);
        let cramer = (0.2 * (-lambda).exp() + 0.3 * (0.5 * lambda).exp() + 0.5 * (2.0 * lambda).exp()).ln();
        let markov = q_functional(p, mu, &w).unwrap();
        let series = q_series(&w, mu, 10, Strategy::Auto).unwrap().value;
        assert!((markov - cramer).abs() < 1e-12, "{lambda}: {markov} vs {cramer}");
        assert!((series - cramer).abs() < 1e-12, "{lambda}: {series} vs {cramer}");
    }
}

#[test]
fn simulated_means_match_product_mean() {
    let cfg = ModelConfig::from_toml(IID_ROWS).unwrap();
    let mu = cfg.require_mu().unwrap().clone();
    let (p, x0) = cfg.require_chain().unwrap().clone();
    let f = nonconv::model::Observable::new(3, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0]).unwrap();
    let fbar = product_mean(&f, &mu).unwrap();
    let n = 2000.0;
    for source in [Source::Iid(mu.clone()), Source::Markov { p: p.clone(), x0 }] {
        let plan = SimulationPlan::new(source, Schedule::Discrete(QSchedule::linear(2)), n, 400, 3);
        let sums = run_sums(&plan, &f).unwrap();
        let mean = sums.iter().sum::<f64>() / (sums.len() as f64 * n);
        assert!((mean - fbar).abs() < 0.02, "{mean} vs {fbar}");
    }
}

#[test]
fn replicates_do_not_depend_on_pool_size() {
    let cfg = ModelConfig::from_toml(IID_ROWS).unwrap();
    let (p, x0) = cfg.require_chain().unwrap().clone();
    let f = cfg.observable(None).unwrap().clone();
    let plan = SimulationPlan::new(Source::Markov { p, x0 }, Schedule::Discrete(QSchedule::linear(1)), 500.0, 64, 42);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_sums(&plan, &f).unwrap())
    };
    assert_eq!(run(1), run(4));
}
