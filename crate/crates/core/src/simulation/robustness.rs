//! Multiple-robustness checks: the one-step estimator with some nuisances
//! at their true values and the rest corrupted.

use rayon::prelude::*;
use serde::Serialize;

use crate::eif::EFFECT_NAMES;
use crate::error::{Error, Result};
use crate::estimators::{onestep, EstimateOptions};

use super::dgp::{draw_dgp, AnalyticNuisance, Corruption, DgpConfig, NuisanceSet};
use super::montecarlo::replicate_stream;
use super::oracle::{population_bias, true_effects};

/// One sufficient set of correct nuisances for one effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessCombo {
    /// 1-based identifier over all effects.
    pub id: usize,
    /// Effect index (total, direct, M1, M2, covariant).
    pub effect: usize,
    pub correct: NuisanceSet,
}

const NONE: NuisanceSet = NuisanceSet::NONE;

fn set(f: impl FnOnce(&mut NuisanceSet)) -> NuisanceSet {
    let mut s = NONE;
    f(&mut s);
    s
}

/// Every combination, grouped by effect.
pub fn combos() -> Vec<RobustnessCombo> {
    let sets: Vec<(usize, NuisanceSet)> = vec![
        (
            0,
            set(|s| (s.qbar_a, s.qbar_star, s.joint_a, s.joint_star) = (true, true, true, true)),
        ),
        (0, set(|s| (s.g_a, s.g_star) = (true, true))),
        (
            1,
            set(|s| (s.qbar_a, s.qbar_star, s.g_star) = (true, true, true)),
        ),
        (
            1,
            set(|s| (s.qbar_a, s.qbar_star, s.joint_a, s.joint_star) = (true, true, true, true)),
        ),
        (
            1,
            set(|s| (s.joint_a, s.joint_star, s.g_star, s.g_a) = (true, true, true, true)),
        ),
        (
            2,
            set(|s| (s.qbar_a, s.m1_a, s.m1_star, s.m2_star) = (true, true, true, true)),
        ),
        (
            2,
            set(|s| {
                (s.g_a, s.g_star, s.joint_a, s.m1_star, s.m2_star) = (true, true, true, true, true)
            }),
        ),
        (
            2,
            set(|s| (s.qbar_a, s.g_a, s.g_star, s.m2_star) = (true, true, true, true)),
        ),
        (
            2,
            set(|s| (s.qbar_a, s.g_a, s.g_star, s.m1_a) = (true, true, true, true)),
        ),
        (
            3,
            set(|s| (s.qbar_a, s.m2_a, s.m2_star, s.m1_a) = (true, true, true, true)),
        ),
        (
            3,
            set(|s| (s.g_a, s.g_star, s.joint_a, s.m2_star) = (true, true, true, true)),
        ),
        (
            3,
            set(|s| (s.qbar_a, s.g_a, s.g_star, s.m1_a) = (true, true, true, true)),
        ),
        (
            3,
            set(|s| (s.qbar_a, s.g_a, s.g_star, s.m2_a) = (true, true, true, true)),
        ),
        (
            4,
            set(|s| (s.qbar_a, s.qbar_star, s.joint_a, s.joint_star) = (true, true, true, true)),
        ),
        (
            4,
            set(|s| {
                (s.g_a, s.g_star, s.qbar_a, s.qbar_star, s.m1_a, s.m2_star) =
                    (true, true, true, true, true, true)
            }),
        ),
        (
            4,
            set(|s| {
                (s.g_a, s.g_star, s.joint_a, s.m1_star, s.m2_star) = (true, true, true, true, true)
            }),
        ),
    ];
    sets.into_iter()
        .enumerate()
        .map(|(i, (effect, correct))| RobustnessCombo {
            id: i + 1,
            effect,
            correct,
        })
        .collect()
}

pub fn combo(id: usize) -> Result<RobustnessCombo> {
    let all = combos();
    if id == 0 || id > all.len() {
        return Err(Error::Config(format!(
            "robustness combination {id} outside 1..={}",
            all.len()
        )));
    }
    Ok(all[id - 1])
}

#[derive(Debug, Clone)]
pub struct RobustnessConfig {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub corruption: Corruption,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![500, 2000, 8000],
            replicates: 100,
            seed: 20_240_601,
            corruption: Corruption::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRow {
    pub n: usize,
    pub replicates: usize,
    pub mean_bias: f64,
    /// Monte Carlo standard error of `mean_bias`.
    pub mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    pub combo: RobustnessCombo,
    pub effect_name: &'static str,
    pub correct: Vec<&'static str>,
    pub rows: Vec<BiasRow>,
    /// Everything corrupted.
    pub negative_control: Vec<BiasRow>,
    pub population_bias: f64,
    pub population_negative_bias: f64,
}

impl RobustnessResult {
    pub fn final_bias(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.mean_bias)
    }

    pub fn final_negative_bias(&self) -> f64 {
        self.negative_control
            .last()
            .map_or(f64::NAN, |r| r.mean_bias)
    }

    /// `|bias|` of the negative control never drops by more than three
    /// combined Monte Carlo standard errors as `n` grows.
    pub fn negative_control_non_decreasing(&self) -> bool {
        self.negative_control.windows(2).all(|w| {
            let tol = 3.0 * (w[0].mcse.powi(2) + w[1].mcse.powi(2)).sqrt();
            w[1].mean_bias.abs() >= w[0].mean_bias.abs() - tol
        })
    }
}

/// Mean bias of all five one-step estimates per sample size.
fn bias_rows(
    cfg: &RobustnessConfig,
    nuisance: &AnalyticNuisance,
    truth: &[f64; 5],
) -> Result<Vec<[BiasRow; 5]>> {
    let opts = EstimateOptions::default();
    cfg.sample_sizes
        .iter()
        .map(|&n| {
            // Common random numbers: replicate r at size n is the same draw
            // for every combination.
            let est: Vec<[f64; 5]> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let table =
                        draw_dgp(&DgpConfig::new(n, cfg.seed).with_stream(replicate_stream(n, r)))?;
                    let e = onestep(nuisance, &table, &opts)?.report.estimates;
                    Ok(std::array::from_fn(|k| e[k] - truth[k]))
                })
                .collect::<Result<_>>()?;
            let k = est.len() as f64;
            Ok(std::array::from_fn(|j| {
                let mean = est.iter().map(|e| e[j]).sum::<f64>() / k;
                let var =
                    est.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
                BiasRow {
                    n,
                    replicates: est.len(),
                    mean_bias: mean,
                    mcse: (var / k).sqrt(),
                }
            }))
        })
        .collect()
}

fn column(rows: &[[BiasRow; 5]], effect: usize) -> Vec<BiasRow> {
    rows.iter().map(|r| r[effect]).collect()
}

/// Runs the listed combinations, sharing one all-corrupted negative
/// control.
pub fn robustness_suites(ids: &[usize], cfg: &RobustnessConfig) -> Result<Vec<RobustnessResult>> {
    let chosen: Vec<RobustnessCombo> = ids.iter().map(|&id| combo(id)).collect::<Result<_>>()?;
    if cfg.replicates == 0 || cfg.sample_sizes.is_empty() {
        return Err(Error::Config(
            "robustness suite needs replicates and sample sizes".into(),
        ));
    }
    let base = DgpConfig::new(1, cfg.seed);
    let truth = true_effects(&base)?.effects;
    let bad = AnalyticNuisance::corrupted(&base, NuisanceSet::NONE, cfg.corruption);
    let negative = bias_rows(cfg, &bad, &truth)?;
    let negative_pop = population_bias(&base, NuisanceSet::NONE, cfg.corruption)?;
    chosen
        .into_iter()
        .map(|c| {
            let good = AnalyticNuisance::corrupted(&base, c.correct, cfg.corruption);
            Ok(RobustnessResult {
                combo: c,
                effect_name: EFFECT_NAMES[c.effect],
                correct: c.correct.labels(),
                rows: column(&bias_rows(cfg, &good, &truth)?, c.effect),
                negative_control: column(&negative, c.effect),
                population_bias: population_bias(&base, c.correct, cfg.corruption)?[c.effect],
                population_negative_bias: negative_pop[c.effect],
            })
        })
        .collect()
}

/// Runs one combination and the all-corrupted negative control.
pub fn robustness_suite(id: usize, cfg: &RobustnessConfig) -> Result<RobustnessResult> {
    Ok(robustness_suites(&[id], cfg)?.remove(0))
}
