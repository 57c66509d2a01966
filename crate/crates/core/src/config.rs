//! TOML model files.
//!
//! ```toml
//! [alphabet]
//! labels = ["a", "b"]
//! [mu]
//! weights = [0.5, 0.5]
//! [P]
//! rows = [[0.9, 0.1], [0.2, 0.8]]
//! x0 = 0
//! [L]
//! rates = [[-1.0, 1.0], [2.0, -2.0]]
//! [observable.F]
//! arity = 2
//! indicator = ["b", "b"]
//! [schedule]
//! k = 1
//! ell = 2
//! tail = [[0, 0, 1]]
//! [sft]
//! transition = [[1, 1], [1, 0]]
//! potential = [0.0, 0.3]
//! ```
//!
//! Every section except `[alphabet]` is optional; commands ask for what they
//! need. Observables take either flat `entries` (first coordinate slowest) or
//! an `indicator` pattern of labels or indices.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::ctime::{AlphaSchedule, GeneratorMatrix};
use crate::error::{invalid, Error, Result};
use crate::model::{stationary_distribution, FiniteAlphabet, Observable, ProbVector, QSchedule, StochasticMatrix};
use crate::symbolic::{LocalPotential, SftSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    alphabet: RawAlphabet,
    mu: Option<RawMu>,
    #[serde(rename = "P")]
    p: Option<RawChain>,
    #[serde(rename = "L")]
    l: Option<RawGenerator>,
    #[serde(default)]
    observable: BTreeMap<String, RawObservable>,
    schedule: Option<RawSchedule>,
    sft: Option<RawSft>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlphabet {
    labels: Option<Vec<String>>,
    size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMu {
    weights: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    rows: Vec<Vec<f64>>,
    #[serde(default)]
    x0: Symbol,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    rates: Vec<Vec<f64>>,
    #[serde(default)]
    x0: Symbol,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Symbol {
    Index(usize),
    Label(String),
}

impl Default for Symbol {
    fn default() -> Self {
        Symbol::Index(0)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObservable {
    arity: Option<usize>,
    entries: Option<Vec<f64>>,
    indicator: Option<Vec<Symbol>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    k: usize,
    ell: usize,
    #[serde(default)]
    tail: Vec<Vec<f64>>,
    alpha: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSft {
    transition: Vec<Vec<u8>>,
    potential: Option<RawPotential>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawPotential {
    One(Vec<f64>),
    Two(Vec<Vec<f64>>),
}

/// Schedule coefficients as read, turned into an integer or real schedule on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub k: usize,
    pub ell: usize,
    pub tails: Vec<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

impl ScheduleSpec {
    pub fn discrete(&self) -> Result<QSchedule> {
        let tails = self
            .tails
            .iter()
            .map(|t| {
                t.iter()
                    .map(|c| {
                        if c.fract() == 0.0 && c.abs() < 9.0e15 {
                            Ok(*c as i64)
                        } else {
                            Err(invalid(format!("[schedule] integer schedules need integer coefficients, got {c}")))
                        }
                    })
                    .collect::<Result<Vec<i64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        QSchedule::new(self.k, self.ell, tails)
    }

    /// `α_j` default to `j`.
    pub fn continuous(&self) -> Result<AlphaSchedule> {
        let alphas = self.alpha.clone().unwrap_or_else(|| (1..=self.k).map(|j| j as f64).collect());
        if alphas.len() != self.k {
            return Err(invalid(format!("[schedule] alpha needs {} entries, got {}", self.k, alphas.len())));
        }
        if self.tails.len() != self.ell - self.k {
            return Err(invalid(format!("[schedule] needs {} tail polynomials, got {}", self.ell - self.k, self.tails.len())));
        }
        AlphaSchedule::new(alphas, self.tails.clone())
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub alphabet: FiniteAlphabet,
    pub mu: Option<ProbVector>,
    pub chain: Option<(StochasticMatrix, usize)>,
    pub generator: Option<(GeneratorMatrix, usize)>,
    pub observables: BTreeMap<String, Observable>,
    pub schedule: Option<ScheduleSpec>,
    pub sft: Option<(SftSpec, LocalPotential)>,
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidInput(msg) => invalid(format!("[{name}] {msg}")),
        other => other,
    })
}

fn resolve(alphabet: &FiniteAlphabet, s: &Symbol, what: &str) -> Result<usize> {
    match s {
        Symbol::Index(i) if *i < alphabet.size() => Ok(*i),
        Symbol::Index(i) => Err(invalid(format!("{what}: symbol {i} outside alphabet of size {}", alphabet.size()))),
        Symbol::Label(l) => alphabet.index_of(l).ok_or_else(|| invalid(format!("{what}: unknown label {l:?}"))),
    }
}

fn check_size(name: &str, got: usize, m: usize) -> Result<()> {
    if got != m {
        return Err(invalid(format!("[{name}] has size {got} but the alphabet has {m} symbols")));
    }
    Ok(())
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawModel = toml::from_str(text).map_err(|e| invalid(format!("malformed model file: {}", e.message())))?;
        let alphabet = section(
            "alphabet",
            match (raw.alphabet.labels, raw.alphabet.size) {
                (Some(labels), None) => FiniteAlphabet::new(labels),
                (None, Some(m)) => FiniteAlphabet::numbered(m),
                (Some(labels), Some(m)) if labels.len() == m => FiniteAlphabet::new(labels),
                (Some(_), Some(_)) => Err(invalid("labels and size disagree")),
                (None, None) => Err(invalid("give labels or size")),
            },
        )?;
        let m = alphabet.size();
        let mu = match raw.mu {
            Some(r) => {
                check_size("mu", r.weights.len(), m)?;
                Some(section("mu", ProbVector::new(r.weights))?)
            }
            None => None,
        };
        let chain = match raw.p {
            Some(r) => {
                check_size("P", r.rows.len(), m)?;
                let p = section("P", StochasticMatrix::new(r.rows))?;
                Some((p, resolve(&alphabet, &r.x0, "[P] x0")?))
            }
            None => None,
        };
        let generator = match raw.l {
            Some(r) => {
                check_size("L", r.rates.len(), m)?;
                let l = section("L", GeneratorMatrix::new(r.rates))?;
                Some((l, resolve(&alphabet, &r.x0, "[L] x0")?))
            }
            None => None,
        };
        let mut observables = BTreeMap::new();
        for (name, r) in raw.observable {
            let tag = format!("observable.{name}");
            let obs = match (r.entries, r.indicator) {
                (Some(values), None) => {
                    let arity = r.arity.ok_or_else(|| invalid(format!("[{tag}] entries need an arity")))?;
                    section(&tag, Observable::new(m, arity, values))?
                }
                (None, Some(pattern)) => {
                    let idx = pattern.iter().map(|s| resolve(&alphabet, s, &format!("[{tag}] indicator"))).collect::<Result<Vec<_>>>()?;
                    if r.arity.is_some_and(|a| a != idx.len()) {
                        return Err(invalid(format!("[{tag}] indicator length differs from arity")));
                    }
                    section(&tag, Observable::indicator(m, &idx))?
                }
                _ => return Err(invalid(format!("[{tag}] give exactly one of entries or indicator"))),
            };
            observables.insert(name, obs);
        }
        let schedule = match raw.schedule {
            Some(r) => {
                if r.k == 0 || r.ell < r.k {
                    return Err(invalid(format!("[schedule] needs 1 <= k <= ell, got k={}, ell={}", r.k, r.ell)));
                }
                if r.tail.len() != r.ell - r.k {
                    return Err(invalid(format!("[schedule] needs {} tail polynomials, got {}", r.ell - r.k, r.tail.len())));
                }
                Some(ScheduleSpec { k: r.k, ell: r.ell, tails: r.tail, alpha: r.alpha })
            }
            None => None,
        };
        let sft = match raw.sft {
            Some(r) => {
                check_size("sft", r.transition.len(), m)?;
                let spec = section("sft", SftSpec::new(r.transition))?;
                let g = match r.potential {
                    None => LocalPotential::zero(m),
                    Some(RawPotential::One(v)) => LocalPotential::OneCoordinate(v),
                    Some(RawPotential::Two(v)) => LocalPotential::TwoCoordinate(v),
                };
                Some((spec, g))
            }
            None => None,
        };
        Ok(Self { alphabet, mu, chain, generator, observables, schedule, sft })
    }

    /// The named observable, or the only one when `name` is `None`.
    pub fn observable(&self, name: Option<&str>) -> Result<&Observable> {
        match name {
            Some(n) => self.observables.get(n).ok_or_else(|| invalid(format!("no observable named {n:?}"))),
            None if self.observables.len() == 1 => Ok(self.observables.values().next().expect("one entry")),
            None if self.observables.contains_key("F") => Ok(&self.observables["F"]),
            None => Err(invalid("model has several observables and none is named F; pick one")),
        }
    }

    pub fn require_mu(&self) -> Result<&ProbVector> {
        self.mu.as_ref().ok_or_else(|| invalid("model has no [mu] section"))
    }

    pub fn require_chain(&self) -> Result<&(StochasticMatrix, usize)> {
        self.chain.as_ref().ok_or_else(|| invalid("model has no [P] section"))
    }

    pub fn require_generator(&self) -> Result<&(GeneratorMatrix, usize)> {
        self.generator.as_ref().ok_or_else(|| invalid("model has no [L] section"))
    }

    pub fn require_schedule(&self) -> Result<&ScheduleSpec> {
        self.schedule.as_ref().ok_or_else(|| invalid("model has no [schedule] section"))
    }

    /// `[mu]` when given, otherwise the stationary law of `[P]`.
    pub fn reference_law(&self) -> Result<ProbVector> {
        match (&self.mu, &self.chain) {
            (Some(mu), _) => Ok(mu.clone()),
            (None, Some((p, _))) => stationary_distribution(p),
            (None, None) => Err(invalid("model has neither [mu] nor [P]")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[alphabet]
labels = ["a", "b"]
[mu]
weights = [0.5, 0.5]
[P]
rows = [[0.9, 0.1], [0.2, 0.8]]
x0 = "b"
[L]
rates = [[-1, 1], [2, -2]]
[observable.F]
arity = 2
indicator = ["b", 1]
[observable.G]
arity = 1
entries = [0, 2.5]
[schedule]
k = 1
ell = 2
tail = [[0, 0, 1]]
[sft]
transition = [[1, 1], [1, 0]]
potential = [0.0, 0.3]
"#;

    #[test]
    fn parses_every_section() {
        let c = ModelConfig::from_toml(FULL).unwrap();
        assert_eq!(c.alphabet.size(), 2);
        assert_eq!(c.chain.as_ref().unwrap().1, 1);
        assert_eq!(c.observable(Some("F")).unwrap().values(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.observable(None).unwrap().arity(), 2);
        assert_eq!(c.observable(Some("G")).unwrap().values(), &[0.0, 2.5]);
        let s = c.require_schedule().unwrap();
        assert_eq!(s.discrete().unwrap().eval(2, 7).unwrap(), 49);
        assert_eq!(s.continuous().unwrap().eval(2, 3.0), 9.0);
        assert!(c.sft.is_some());
        assert_eq!(c.generator.unwrap().0.exit_rate(1), 2.0);
    }

    fn rejects(text: &str, needle: &str) {
        let err = ModelConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains(needle), "{err:?} lacks {needle:?}");
    }

    #[test]
    fn specific_messages() {
        let head = "[alphabet]\nlabels = [\"a\", \"b\"]\n";
        rejects("[alphabet]\nlabels = [\"a\", \"a\"]\n", "[alphabet]");
        rejects(&format!("{head}[mu]\nweights = [0.6, 0.6]\n"), "[mu]");
        rejects(&format!("{head}[mu]\nweights = [1.0]\n"), "[mu] has size 1");
        rejects(&format!("{head}[P]\nrows = [[0.5, 0.6], [0.5, 0.5]]\n"), "[P]");
        rejects(&format!("{head}[L]\nrates = [[-1, 2], [1, -1]]\n"), "[L]");
        rejects(&format!("{head}[observable.F]\narity = 2\nentries = [1, 2, 3]\n"), "[observable.F]");
        rejects(&format!("{head}[observable.F]\nindicator = [\"c\"]\n"), "unknown label");
        rejects(&format!("{head}[schedule]\nk = 2\nell = 1\n"), "[schedule]");
        rejects(&format!("{head}[schedule]\nk = 1\nell = 2\n"), "tail polynomials");
        rejects(&format!("{head}[sft]\ntransition = [[0, 1], [1, 0]]\n"), "primitive");
        rejects(&format!("{head}[bogus]\nx = 1\n"), "malformed");
        rejects(&format!("{head}[P]\nrows = [[0.5, 0.5], [0.5, 0.5]]\nx0 = 4\n"), "outside alphabet");
    }

    #[test]
    fn fractional_tail_is_continuous_only() {
        let c = ModelConfig::from_toml("[alphabet]\nsize = 2\n[schedule]\nk = 1\nell = 2\ntail = [[0, 0.5, 1]]\nalpha = [2.0]\n").unwrap();
        let s = c.require_schedule().unwrap();
        assert!(s.discrete().is_err());
        assert_eq!(s.continuous().unwrap().eval(1, 3.0), 6.0);
    }
}
