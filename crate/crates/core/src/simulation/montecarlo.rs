//! Monte Carlo study of the estimators under the simulation design.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::eif::{normal_quantile, EFFECT_NAMES};
use crate::error::{Error, Result};
use crate::estimators::{onestep, tmle, EstimateOptions, EstimatorOutput, Method, TmleMode};
use crate::nuisance::{fit_nuisances, NuisanceConfig};

use super::dgp::{draw_dgp, DgpConfig};
use super::oracle::{true_effects, TrueEffects};

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub nuisance: NuisanceConfig,
    pub ratio: bool,
    pub tmle_mode: TmleMode,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![250, 500, 1000, 2000],
            replicates: 1000,
            seed: 1,
            methods: vec![Method::OneStep, Method::Tmle],
            alpha: 0.05,
            nuisance: NuisanceConfig::default(),
            ratio: false,
            tmle_mode: TmleMode::SinglePass,
        }
    }
}

/// Replicate `r` at size `n` uses stream `n << 32 | r` of the seed.
pub fn replicate_stream(n: usize, r: usize) -> u64 {
    ((n as u64) << 32) | r as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub method: Method,
    pub estimates: [f64; 5],
    pub se: [f64; 5],
    /// Ratio-scale indirect effect through `M1` and its standard error.
    pub ratio: Option<(f64, f64)>,
    pub out_of_bounds: bool,
    pub nonconverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub n: usize,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: Method,
    pub effect: &'static str,
    pub n: usize,
    pub replicates: usize,
    pub truth: f64,
    pub bias: f64,
    /// Standard deviation across replicates (divisor `R`), the oracle SE.
    pub sd: f64,
    pub mse: f64,
    pub mean_se: f64,
    pub coverage_oracle: f64,
    pub coverage_estimated: f64,
    pub out_of_bounds: usize,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    pub method: Method,
    pub n: usize,
    pub replicates: usize,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub truth: TrueEffects,
    pub seed: u64,
    pub alpha: f64,
    pub cells: Vec<CellSummary>,
    pub ratio: Vec<RatioSummary>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

impl SimulationReport {
    pub fn cell(&self, method: Method, effect: usize, n: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.effect == EFFECT_NAMES[effect] && c.n == n)
    }

    /// Replicate-level estimates with both standardisations, one row per
    /// replicate, method and effect.
    pub fn write_replicates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "replicate",
            "method",
            "effect",
            "estimate",
            "se",
            "truth",
            "z_estimated_se",
            "z_oracle_se",
        ])
        .map_err(csv_err)?;
        for r in &self.records {
            for (k, name) in EFFECT_NAMES.iter().enumerate() {
                let truth = self.truth.effects[k];
                let sd = self.cell(r.method, k, r.n).map_or(f64::NAN, |c| c.sd);
                let dev = r.estimates[k] - truth;
                w.write_record([
                    r.n.to_string(),
                    r.replicate.to_string(),
                    r.method.to_string(),
                    name.to_string(),
                    format!("{:.16e}", r.estimates[k]),
                    format!("{:.16e}", r.se[k]),
                    format!("{:.16e}", truth),
                    format!("{:.16e}", dev / r.se[k]),
                    format!("{:.16e}", dev / sd),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("writing replicate file: {e}"))
}

fn record(n: usize, r: usize, out: &EstimatorOutput) -> ReplicateRecord {
    let nonconverged = out.diagnostics.iter().any(|(_, s)| !s.converged)
        || out
            .fluctuation
            .as_ref()
            .is_some_and(|f| f.fits.iter().any(|x| !x.summary.converged));
    ReplicateRecord {
        n,
        replicate: r,
        method: out.method,
        estimates: out.report.estimates,
        se: out.report.se,
        ratio: out.report.ratio.as_ref().map(|x| (x.ratio, x.se)),
        out_of_bounds: out.out_of_bounds,
        nonconverged,
    }
}

fn run_replicate(cfg: &MonteCarloConfig, n: usize, r: usize) -> Result<Vec<ReplicateRecord>> {
    let table = draw_dgp(&DgpConfig::new(n, cfg.seed).with_stream(replicate_stream(n, r)))?;
    let nuis = fit_nuisances(&table, &cfg.nuisance)?;
    let opts = EstimateOptions {
        alpha: cfg.alpha,
        ratio: cfg.ratio,
        tmle_mode: cfg.tmle_mode,
        contrasts: Vec::new(),
    };
    cfg.methods
        .iter()
        .map(|m| {
            let out = match m {
                Method::OneStep => onestep(&nuis, &table, &opts)?,
                Method::Tmle => tmle(&nuis, &table, &opts)?,
            };
            if out
                .report
                .estimates
                .iter()
                .chain(&out.report.se)
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("{m} estimates")));
            }
            Ok(record(n, r, &out))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Draws, fits and estimates every replicate; a failing replicate is
/// recorded and skipped. Aggregation follows replicate order, so results do
/// not depend on scheduling.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<SimulationReport> {
    if cfg.sample_sizes.is_empty() || cfg.replicates == 0 || cfg.methods.is_empty() {
        return Err(Error::Config(
            "Monte Carlo study needs sample sizes, replicates and methods".into(),
        ));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    let truth = true_effects(&DgpConfig::new(1, cfg.seed))?;
    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(n, r)| (n, r, run_replicate(cfg, n, r)))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (n, r, res) in results {
        match res {
            Ok(mut v) => records.append(&mut v),
            Err(e) => {
                log::warn!("replicate {r} at n = {n} failed: {e}");
                failures.push(ReplicateFailure {
                    n,
                    replicate: r,
                    message: e.to_string(),
                });
            }
        }
    }

    let z = normal_quantile(cfg.alpha);
    let mut cells = Vec::new();
    let mut ratio = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.sample_sizes {
            let rs: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.method == method && r.n == n)
                .collect();
            for (k, name) in EFFECT_NAMES.iter().enumerate() {
                let t = truth.effects[k];
                let est: Vec<f64> = rs.iter().map(|r| r.estimates[k]).collect();
                let m = mean(&est);
                let sd =
                    (est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / est.len() as f64).sqrt();
                let mse = mean(&est.iter().map(|v| (v - t).powi(2)).collect::<Vec<_>>());
                let cov_o = rs
                    .iter()
                    .filter(|r| (r.estimates[k] - t).abs() <= z * sd)
                    .count();
                let cov_e = rs
                    .iter()
                    .filter(|r| (r.estimates[k] - t).abs() <= z * r.se[k])
                    .count();
                let k_f = rs.len() as f64;
                cells.push(CellSummary {
                    method,
                    effect: name,
                    n,
                    replicates: rs.len(),
                    truth: t,
                    bias: m - t,
                    sd,
                    mse,
                    mean_se: mean(&rs.iter().map(|r| r.se[k]).collect::<Vec<_>>()),
                    coverage_oracle: cov_o as f64 / k_f,
                    coverage_estimated: cov_e as f64 / k_f,
                    out_of_bounds: rs.iter().filter(|r| r.out_of_bounds).count(),
                    nonconverged: rs.iter().filter(|r| r.nonconverged).count(),
                });
            }
            if cfg.ratio {
                let vals: Vec<(f64, f64)> = rs.iter().filter_map(|r| r.ratio).collect();
                let est: Vec<f64> = vals.iter().map(|v| v.0).collect();
                let m = mean(&est);
                let var = est.iter().map(|v| (v - m).powi(2)).sum::<f64>()
                    / (est.len() as f64 - 1.0).max(1.0);
                ratio.push(RatioSummary {
                    method,
                    n,
                    replicates: vals.len(),
                    truth: truth.ratio(),
                    mean: m,
                    sd: var.sqrt(),
                    mean_se: mean(&vals.iter().map(|v| v.1).collect::<Vec<_>>()),
                });
            }
        }
    }
    Ok(SimulationReport {
        truth,
        seed: cfg.seed,
        alpha: cfg.alpha,
        cells,
        ratio,
        records,
        failures,
    })
}
