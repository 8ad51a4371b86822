//! Run configuration: flat `key = value` text with dotted keys. Command-line
//! flags are merged in as the same keys and take precedence.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::density::HazardFeatures;
use crate::error::{Error, Result};
use crate::estimators::TmleMode;
use crate::learners::LearnerSpec;
use crate::multimediator::DEFAULT_CELL_CAP;
use crate::nuisance::NuisanceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Simulate,
    Validate,
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Estimate => "estimate",
            Self::Simulate => "simulate",
            Self::Validate => "validate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    OneStep,
    Tmle,
    Both,
}

/// Which t-mediator effects to report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MultiTarget {
    /// Direct effect and every indirect effect.
    All,
    Direct,
    /// Indirect effect through this (1-based) mediator.
    Indirect(usize),
}

/// Deliberate defects for checking that validation notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    EifSign,
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub quick: bool,
    pub ratio: bool,
    pub replicates_output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub quick: bool,
    /// Robustness combinations to run, 1-based.
    pub combos: Vec<usize>,
    pub replicates: Option<usize>,
    pub eif_draws: Option<usize>,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub confounders: Vec<String>,
    pub treatment: Option<String>,
    pub treated_level: String,
    pub control_level: String,
    pub mediators: Vec<String>,
    pub outcome: Option<String>,
    pub outcome_bounds: Option<(f64, f64)>,
    pub mediator_levels: BTreeMap<String, Vec<i64>>,
    pub mediator_bins: BTreeMap<String, Vec<f64>>,
    pub estimator: EstimatorChoice,
    pub alpha: f64,
    pub ratio: bool,
    pub tmle_mode: TmleMode,
    pub seed: u64,
    pub nuisance: NuisanceConfig,
    pub multi: Option<MultiTarget>,
    pub cell_cap: usize,
    pub contrasts: Vec<(String, [f64; 5])>,
    pub threads: Option<usize>,
    pub simulate: SimulateOptions,
    pub validate: ValidateOptions,
    /// Keys as given, less output paths, echoed into reports.
    pub entries: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn nums<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    list(v).iter().map(|s| num(key, s)).collect()
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got '{v}'"
        ))),
    }
}

fn learner(key: &str, v: &str) -> Result<LearnerSpec> {
    match v {
        "main_terms" => Ok(LearnerSpec::main_terms()),
        "intercept_only" => Ok(LearnerSpec::intercept_only()),
        _ => Err(Error::Config(format!(
            "{key}: unknown learner '{v}' (main_terms, intercept_only)"
        ))),
    }
}

impl RunConfig {
    pub fn from_entries(command: Command, entries: BTreeMap<String, String>) -> Result<Self> {
        let mut c = RunConfig {
            command,
            input: None,
            output: None,
            json: None,
            confounders: Vec::new(),
            treatment: None,
            treated_level: "1".into(),
            control_level: "0".into(),
            mediators: Vec::new(),
            outcome: None,
            outcome_bounds: None,
            mediator_levels: BTreeMap::new(),
            mediator_bins: BTreeMap::new(),
            estimator: EstimatorChoice::Both,
            alpha: 0.05,
            ratio: false,
            tmle_mode: TmleMode::SinglePass,
            seed: 1,
            nuisance: NuisanceConfig::default(),
            multi: None,
            cell_cap: DEFAULT_CELL_CAP,
            contrasts: Vec::new(),
            threads: None,
            simulate: SimulateOptions {
                sizes: vec![250, 500, 1000, 2000],
                replicates: 1000,
                quick: false,
                ratio: false,
                replicates_output: None,
            },
            validate: ValidateOptions {
                quick: false,
                combos: (1..=16).collect(),
                replicates: None,
                eif_draws: None,
                fault: None,
            },
            entries: BTreeMap::new(),
        };
        let (mut omin, mut omax) = (None, None);
        let (mut max_iter, mut tol, mut floor) = (None, None, None);
        for (k, v) in &entries {
            let v = v.as_str();
            match k.as_str() {
                "input" => c.input = Some(v.into()),
                "output" => c.output = Some(v.into()),
                "json" => c.json = Some(v.into()),
                "confounders" => c.confounders = list(v),
                "treatment.column" => c.treatment = Some(v.into()),
                "treatment.treated" => c.treated_level = v.into(),
                "treatment.control" => c.control_level = v.into(),
                "mediators" => c.mediators = list(v),
                "outcome.column" => c.outcome = Some(v.into()),
                "outcome.min" => omin = Some(num::<f64>(k, v)?),
                "outcome.max" => omax = Some(num::<f64>(k, v)?),
                "estimator" => {
                    c.estimator = match v {
                        "one_step" | "onestep" => EstimatorChoice::OneStep,
                        "tmle" => EstimatorChoice::Tmle,
                        "both" => EstimatorChoice::Both,
                        _ => {
                            return Err(Error::Config(format!(
                                "estimator: unknown '{v}' (one_step, tmle, both)"
                            )))
                        }
                    }
                }
                "alpha" => c.alpha = num(k, v)?,
                "ratio" => c.ratio = flag(k, v)?,
                "tmle.mode" => c.tmle_mode = v.parse()?,
                "seed" => c.seed = num(k, v)?,
                "threads" => c.threads = Some(num(k, v)?),
                "learner.propensity" => c.nuisance.propensity = learner(k, v)?,
                "learner.outcome" => c.nuisance.outcome = learner(k, v)?,
                "learner.hazard" => c.nuisance.hazard = learner(k, v)?,
                "learner.max_iterations" => max_iter = Some(num::<usize>(k, v)?),
                "learner.tolerance" => tol = Some(num::<f64>(k, v)?),
                "learner.prediction_floor" => floor = Some(num::<f64>(k, v)?),
                "hazard.features" => c.nuisance.hazard_features = v.parse::<HazardFeatures>()?,
                "density.floor" => c.nuisance.density_floor = num(k, v)?,
                "multi.target" => {
                    c.multi = match v {
                        "none" => None,
                        "all" => Some(MultiTarget::All),
                        "direct" => Some(MultiTarget::Direct),
                        s => Some(MultiTarget::Indirect(num(k, s)?)),
                    }
                }
                "multi.cell_cap" => c.cell_cap = num(k, v)?,
                "simulate.sizes" => c.simulate.sizes = nums(k, v)?,
                "simulate.replicates" => c.simulate.replicates = num(k, v)?,
                "simulate.quick" => c.simulate.quick = flag(k, v)?,
                "simulate.ratio" => c.simulate.ratio = flag(k, v)?,
                "simulate.replicates_output" => c.simulate.replicates_output = Some(v.into()),
                "validate.quick" => c.validate.quick = flag(k, v)?,
                "validate.combos" => {
                    c.validate.combos = match v {
                        "all" => (1..=16).collect(),
                        "none" => Vec::new(),
                        _ => nums(k, v)?,
                    };
                    if let Some(bad) = c.validate.combos.iter().find(|&&id| id == 0 || id > 16) {
                        return Err(Error::Config(format!(
                            "validate.combos: combination {bad} outside 1..=16"
                        )));
                    }
                }
                "validate.replicates" => c.validate.replicates = Some(num(k, v)?),
                "validate.eif_draws" => c.validate.eif_draws = Some(num(k, v)?),
                "validate.fault" => {
                    c.validate.fault = match v {
                        "none" => None,
                        "eif_sign" => Some(Fault::EifSign),
                        _ => return Err(Error::Config(format!("validate.fault: unknown '{v}'"))),
                    }
                }
                other => {
                    if let Some(name) = other
                        .strip_prefix("mediator.")
                        .and_then(|r| r.strip_suffix(".levels"))
                    {
                        c.mediator_levels.insert(name.to_string(), nums(k, v)?);
                    } else if let Some(name) = other
                        .strip_prefix("mediator.")
                        .and_then(|r| r.strip_suffix(".bins"))
                    {
                        c.mediator_bins.insert(name.to_string(), nums(k, v)?);
                    } else if let Some(label) = other.strip_prefix("contrast.") {
                        let w: Vec<f64> = nums(k, v)?;
                        let w: [f64; 5] = w.try_into().map_err(|_| {
                            Error::Config(format!(
                                "{k}: need five weights (total, direct, m1, m2, covariant)"
                            ))
                        })?;
                        c.contrasts.push((label.to_string(), w));
                    } else {
                        return Err(Error::Config(format!(
                            "unknown configuration key '{other}'"
                        )));
                    }
                }
            }
        }
        for spec in [
            &mut c.nuisance.propensity,
            &mut c.nuisance.outcome,
            &mut c.nuisance.hazard,
        ] {
            if let Some(m) = max_iter {
                spec.max_iterations = m;
            }
            if let Some(t) = tol {
                spec.tolerance = t;
            }
        }
        if let Some(f) = floor {
            c.nuisance.propensity.prediction_floor = f;
        }
        c.outcome_bounds = match (omin, omax) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "outcome.min and outcome.max must be given together".into(),
                ))
            }
        };
        if c.simulate.quick {
            c.simulate.sizes = vec![250, 1000];
            c.simulate.replicates = 100;
        }
        // Where results go does not change them; keep it out of the echo.
        c.entries = entries
            .into_iter()
            .filter(|(k, _)| {
                !matches!(k.as_str(), "output" | "json" | "simulate.replicates_output")
            })
            .collect();
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        for s in [
            &self.nuisance.propensity,
            &self.nuisance.outcome,
            &self.nuisance.hazard,
        ] {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.nuisance.density_floor > 0.0 && self.nuisance.density_floor < 1.0) {
            return Err(Error::Config("density.floor must lie in (0, 1)".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.command == Command::Estimate {
            if self.input.is_none() {
                return Err(Error::Config("estimate needs an input CSV".into()));
            }
            if self.treatment.is_none() || self.outcome.is_none() {
                return Err(Error::Config(
                    "estimate needs treatment.column and outcome.column".into(),
                ));
            }
            if self.confounders.is_empty() {
                return Err(Error::Config(
                    "at least one confounder column is required".into(),
                ));
            }
            if self.mediators.len() < 2 {
                return Err(Error::Config(
                    "at least two mediator columns are required".into(),
                ));
            }
            if self.treated_level == self.control_level {
                return Err(Error::Config(
                    "treated and control levels must differ".into(),
                ));
            }
            let named = self.mediator_levels.keys().chain(self.mediator_bins.keys());
            for m in named {
                if !self.mediators.contains(m) {
                    return Err(Error::Config(format!(
                        "support given for '{m}', which is not a mediator column"
                    )));
                }
            }
        }
        if self.command == Command::Simulate
            && (self.simulate.sizes.is_empty() || self.simulate.replicates == 0)
        {
            return Err(Error::Config(
                "simulate needs sample sizes and replicates".into(),
            ));
        }
        Ok(())
    }
}
