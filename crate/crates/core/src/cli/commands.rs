//! The three commands: estimate on a CSV, simulate, validate.

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::data::{
    validate_dataset, MediatorSupport, ObservationTable, OutcomeBounds, RawDataset, SupportSpec,
};
use crate::eif::EFFECT_NAMES;
use crate::error::{Error, Result};
use crate::estimators::{onestep, tmle, EstimateOptions, EstimatorOutput, Method};
use crate::multimediator::{onestep_multi_direct, onestep_multi_indirect, MultiEstimate};
use crate::nuisance::{fit_nuisances, EmpiricalNuisance, NuisanceConfig};
use crate::simulation::montecarlo::{run_monte_carlo, MonteCarloConfig};
use crate::simulation::robustness::{robustness_suites, RobustnessConfig};
use crate::simulation::validation::{
    eif_mean_check, multi_eif_mean_check, saturated_table, MeanCheck,
};
use crate::simulation::{draw_dgp, true_effects, true_multi_effects, DgpConfig, NuisanceSet};

use super::config::{EstimatorChoice, Fault, MultiTarget, RunConfig};
use super::report::{fmt_num, Report, Section};

/// Effect values the simulation design is published with, rounded.
pub const PUBLISHED_TRUTH: [f64; 5] = [0.10, 0.15, -0.02, -0.03, 0.0];

/// Reads the CSV named in the configuration into a validated table.
pub fn load_table(cfg: &RunConfig) -> Result<ObservationTable> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open '{}': {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Config(format!("column '{name}' not found in '{}'", path.display()))
            })
    };
    let treatment = cfg
        .treatment
        .as_deref()
        .ok_or_else(|| Error::Config("treatment.column missing".into()))?;
    let outcome = cfg
        .outcome
        .as_deref()
        .ok_or_else(|| Error::Config("outcome.column missing".into()))?;
    let c_idx: Vec<usize> = cfg
        .confounders
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let m_idx: Vec<usize> = cfg
        .mediators
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let (a_idx, y_idx) = (col(treatment)?, col(outcome)?);

    let mut raw = RawDataset {
        covariate_names: cfg.confounders.clone(),
        covariates: vec![Vec::new(); c_idx.len()],
        treatment: Vec::new(),
        mediator_names: cfg.mediators.clone(),
        mediators: vec![Vec::new(); m_idx.len()],
        outcome: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        // Line numbers count the header as line 1.
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Csv {
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("").trim();
            if s.is_empty() || s.eq_ignore_ascii_case("na") {
                return Ok(f64::NAN);
            }
            s.parse::<f64>().map_err(|_| Error::Csv {
                row: line,
                column: headers.get(j).unwrap_or("").to_string(),
                message: format!("'{s}' is not a number"),
            })
        };
        for (dst, &j) in raw.covariates.iter_mut().zip(&c_idx) {
            dst.push(field(j)?);
        }
        for (dst, &j) in raw.mediators.iter_mut().zip(&m_idx) {
            dst.push(field(j)?);
        }
        raw.outcome.push(field(y_idx)?);
        let a = rec.get(a_idx).unwrap_or("").trim();
        raw.treatment.push(if a == cfg.treated_level {
            1.0
        } else if a == cfg.control_level {
            0.0
        } else if a.is_empty() {
            f64::NAN
        } else {
            return Err(Error::Csv {
                row: line,
                column: treatment.to_string(),
                message: format!(
                    "'{a}' is neither the treated level '{}' nor the control level '{}'",
                    cfg.treated_level, cfg.control_level
                ),
            });
        });
    }

    let support = if cfg.mediator_levels.is_empty() && cfg.mediator_bins.is_empty() {
        SupportSpec::Infer
    } else {
        let mut levels = Vec::new();
        let mut edges = Vec::new();
        for (name, colv) in cfg.mediators.iter().zip(&raw.mediators) {
            let bins = cfg.mediator_bins.get(name).cloned();
            let lv = match (cfg.mediator_levels.get(name), &bins) {
                (Some(l), _) => l.clone(),
                (None, Some(b)) => (0..b.len().saturating_sub(1) as i64).collect(),
                (None, None) => {
                    let finite: Vec<f64> = colv.iter().copied().filter(|v| v.is_finite()).collect();
                    MediatorSupport::infer(&[finite])?.levels(0).to_vec()
                }
            };
            levels.push(lv);
            edges.push(bins);
        }
        SupportSpec::Declared(MediatorSupport::with_bins(levels, edges)?)
    };
    let bounds = cfg
        .outcome_bounds
        .map_or(OutcomeBounds::Observed, |(a, b)| {
            OutcomeBounds::Declared(a, b)
        });
    validate_dataset(&raw, &support, bounds)
}

/// Output of `estimate`: the report and the JSON sidecar.
pub struct EstimateRun {
    pub report: Report,
    pub json: serde_json::Value,
    pub outputs: Vec<EstimatorOutput>,
    pub multi: Vec<MultiEstimate>,
}

fn header(report: &mut Report, cfg: &RunConfig) {
    report
        .section("run")
        .text("program", "medfx")
        .text("version", env!("CARGO_PKG_VERSION"))
        .text("command", cfg.command)
        .text("seed", cfg.seed);
    let s = report.section("config");
    for (k, v) in &cfg.entries {
        s.text(k, v);
    }
}

fn write_effects(report: &mut Report, out: &EstimatorOutput) {
    let m = out.method.to_string();
    let r = &out.report;
    let s = report.section(format!("estimates.{m}"));
    s.text("n", r.n).num("alpha", r.alpha);
    for (k, name) in EFFECT_NAMES.iter().enumerate() {
        s.num(format!("{name}.estimate"), r.estimates[k])
            .num(format!("{name}.se"), r.se[k])
            .num(format!("{name}.ci_lower"), r.ci[k].0)
            .num(format!("{name}.ci_upper"), r.ci[k].1)
            .text(
                format!("{name}.z"),
                r.z[k].map_or("undefined".into(), fmt_num),
            )
            .text(
                format!("{name}.p_value"),
                r.p_values[k].map_or("undefined".into(), fmt_num),
            )
            .num(format!("{name}.plugin_unit_scale"), out.plugin[k])
            .num(format!("{name}.residual_score"), out.residual_scores[k]);
    }
    s.text("out_of_bounds", out.out_of_bounds);

    let s = report.section(format!("covariance.{m}"));
    for (i, a) in EFFECT_NAMES.iter().enumerate() {
        for (j, b) in EFFECT_NAMES.iter().enumerate() {
            s.num(format!("{a}.{b}"), r.covariance[i][j]);
        }
    }

    let s = report.section(format!("contrasts.{m}"));
    for c in &r.contrasts {
        let l = &c.label;
        s.num(format!("contrast[{l}].estimate"), c.estimate)
            .num(format!("contrast[{l}].se"), c.se);
        match (c.z, c.p_value) {
            (Some(z), Some(p)) => {
                s.num(format!("contrast[{l}].z"), z)
                    .num(format!("contrast[{l}].p_value"), p);
            }
            _ => {
                s.text(format!("contrast[{l}].z"), "undefined")
                    .text(format!("contrast[{l}].p_value"), "undefined");
            }
        }
    }

    if let Some(q) = &r.ratio {
        report
            .section(format!("ratio.{m}"))
            .num("numerator", q.numerator)
            .num("denominator", q.denominator)
            .num("ratio", q.ratio)
            .num("tau", q.tau)
            .num("se", q.se)
            .num("ci_lower", q.ci.0)
            .num("ci_upper", q.ci.1);
    }

    if let Some(f) = &out.fluctuation {
        let s = report.section(format!("fluctuation.{m}"));
        for (k, e) in f.epsilon.iter().enumerate() {
            s.num(format!("epsilon.{}", k + 1), *e);
        }
        s.num("delta", f.delta)
            .num("eta", f.eta)
            .num("gamma", f.gamma)
            .num("zeta", f.zeta)
            .num("total.a_star", f.total[0])
            .num("total.a", f.total[1])
            .text("passes", f.passes);
        for fit in &f.fits {
            s.num(format!("fit.{}.score", fit.name), fit.score)
                .text(
                    format!("fit.{}.iterations", fit.name),
                    fit.summary.iterations,
                )
                .text(format!("fit.{}.converged", fit.name), fit.summary.converged);
        }
    }
}

fn write_multi(report: &mut Report, est: &[MultiEstimate]) {
    let s = report.section("multi_mediator.one_step");
    for e in est {
        let l = &e.label;
        s.num(format!("{l}.estimate"), e.estimate)
            .num(format!("{l}.se"), e.se)
            .num(format!("{l}.ci_lower"), e.ci.0)
            .num(format!("{l}.ci_upper"), e.ci.1)
            .num(format!("{l}.plugin"), e.plugin);
    }
}

fn write_warnings(report: &mut Report, warnings: &[String]) {
    let s = report.section("warnings");
    s.text("count", warnings.len());
    for (i, w) in warnings.iter().enumerate() {
        s.text(format!("warning.{}", i + 1), w);
    }
}

fn write_diagnostics(s: &mut Section, diagnostics: &[(String, crate::learners::FitSummary)]) {
    for (name, d) in diagnostics {
        s.text(format!("{name}.iterations"), d.iterations)
            .num(format!("{name}.gradient_norm"), d.gradient_norm)
            .text(format!("{name}.converged"), d.converged)
            .text(format!("{name}.ridge_applied"), d.ridge_applied);
    }
}

pub fn run_estimate(cfg: &RunConfig) -> Result<EstimateRun> {
    let table = load_table(cfg)?;
    estimate_table(cfg, &table)
}

/// Runs the configured estimators on an already validated table.
pub fn estimate_table(cfg: &RunConfig, table: &ObservationTable) -> Result<EstimateRun> {
    let mut report = Report::new();
    header(&mut report, cfg);
    let scale = table.outcome_scale();
    let s = report.section("data");
    s.text("n", table.len())
        .text(
            "treated",
            table.treatments().iter().filter(|&&a| a == 1).count(),
        )
        .text("mediators", table.mediator_count())
        .num("outcome.min", scale.y_min)
        .num("outcome.max", scale.y_max);
    for (j, name) in table.mediator_names().iter().enumerate() {
        let lv: Vec<String> = table
            .support()
            .levels(j)
            .iter()
            .map(|v| v.to_string())
            .collect();
        s.text(format!("support.{name}"), lv.join(","));
    }

    let nuis = fit_nuisances(table, &cfg.nuisance)?;
    let mut warnings: Vec<String> = Vec::new();
    let mut outputs = Vec::new();
    let t = table.mediator_count();
    if t == 2 {
        let opts = EstimateOptions {
            alpha: cfg.alpha,
            ratio: cfg.ratio,
            tmle_mode: cfg.tmle_mode,
            contrasts: cfg.contrasts.clone(),
        };
        if matches!(
            cfg.estimator,
            EstimatorChoice::OneStep | EstimatorChoice::Both
        ) {
            outputs.push(onestep(&nuis, table, &opts)?);
        }
        if matches!(cfg.estimator, EstimatorChoice::Tmle | EstimatorChoice::Both) {
            outputs.push(tmle(&nuis, table, &opts)?);
        }
        for o in &outputs {
            write_effects(&mut report, o);
            for w in &o.warnings {
                let w = format!("{}: {w}", o.method);
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
        }
    } else {
        warnings.extend(table.warnings().iter().map(|w| format!("positivity: {w}")));
    }

    let target = cfg.multi.clone().or((t > 2).then_some(MultiTarget::All));
    let mut multi = Vec::new();
    if let Some(target) = target {
        if matches!(target, MultiTarget::All | MultiTarget::Direct) {
            multi.push(onestep_multi_direct(&nuis, table, cfg.alpha, cfg.cell_cap)?);
        }
        let ss: Vec<usize> = match target {
            MultiTarget::All => (1..=t).collect(),
            MultiTarget::Direct => Vec::new(),
            MultiTarget::Indirect(s) => vec![s],
        };
        for s in ss {
            multi.push(onestep_multi_indirect(
                &nuis,
                s,
                table,
                cfg.alpha,
                cfg.cell_cap,
            )?);
        }
        write_multi(&mut report, &multi);
    }

    let diagnostics = crate::nuisance::NuisanceBundle::diagnostics(&nuis);
    write_diagnostics(report.section("diagnostics"), &diagnostics);
    write_warnings(&mut report, &warnings);

    let json = json!({
        "seed": cfg.seed,
        "config": cfg.entries,
        "n": table.len(),
        "estimators": outputs,
        "multi_mediator": multi,
        "diagnostics": diagnostics,
        "warnings": warnings,
    });
    Ok(EstimateRun {
        report,
        json,
        outputs,
        multi,
    })
}

pub struct SimulateRun {
    pub report: Report,
    pub replicates_csv: String,
    pub json: serde_json::Value,
}

pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateRun> {
    let methods = match cfg.estimator {
        EstimatorChoice::OneStep => vec![Method::OneStep],
        EstimatorChoice::Tmle => vec![Method::Tmle],
        EstimatorChoice::Both => vec![Method::OneStep, Method::Tmle],
    };
    let mc = MonteCarloConfig {
        sample_sizes: cfg.simulate.sizes.clone(),
        replicates: cfg.simulate.replicates,
        seed: cfg.seed,
        methods,
        alpha: cfg.alpha,
        nuisance: cfg.nuisance.clone(),
        ratio: cfg.simulate.ratio || cfg.ratio,
        tmle_mode: cfg.tmle_mode,
    };
    let rep = run_monte_carlo(&mc)?;
    let mut report = Report::new();
    header(&mut report, cfg);
    let s = report.section("truth");
    for (k, name) in EFFECT_NAMES.iter().enumerate() {
        s.num(*name, rep.truth.effects[k]);
    }
    s.num("ratio_indirect_m1", rep.truth.ratio());
    for c in &rep.cells {
        report
            .section(format!("simulation.{}.n{}.{}", c.method, c.n, c.effect))
            .text("replicates", c.replicates)
            .num("truth", c.truth)
            .num("bias", c.bias)
            .num("sd", c.sd)
            .num("mse", c.mse)
            .num("mean_se", c.mean_se)
            .num("coverage_oracle_se", c.coverage_oracle)
            .num("coverage_estimated_se", c.coverage_estimated)
            .text("out_of_bounds", c.out_of_bounds)
            .text("nonconverged", c.nonconverged);
    }
    for r in &rep.ratio {
        report
            .section(format!(
                "simulation.{}.n{}.ratio_indirect_m1",
                r.method, r.n
            ))
            .text("replicates", r.replicates)
            .num("truth", r.truth)
            .num("mean", r.mean)
            .num("sd", r.sd)
            .num("mean_se", r.mean_se);
    }
    let s = report.section("failures");
    s.text("count", rep.failures.len());
    for f in &rep.failures {
        s.text(format!("n{}.replicate{}", f.n, f.replicate), &f.message);
    }
    let mut buf = Vec::new();
    rep.write_replicates_csv(&mut buf)?;
    let json = json!({
        "seed": cfg.seed,
        "config": cfg.entries,
        "truth": rep.truth,
        "cells": rep.cells,
        "ratio": rep.ratio,
        "failures": rep.failures,
    });
    Ok(SimulateRun {
        report,
        replicates_csv: String::from_utf8(buf).expect("CSV output is UTF-8"),
        json,
    })
}

/// One pass/fail check with a short description of what was measured.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

fn mean_detail(m: &MeanCheck) -> String {
    let parts: Vec<String> = m
        .labels
        .iter()
        .zip(m.means.iter().zip(&m.mcse))
        .map(|(l, (a, s))| format!("{l} {a:.3e} (mcse {s:.1e})"))
        .collect();
    format!("{} draws; {}", m.draws, parts.join(", "))
}

pub struct ValidateRun {
    pub report: Report,
    pub checks: Vec<CheckResult>,
}

impl ValidateRun {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_validate(cfg: &RunConfig) -> Result<ValidateRun> {
    let v = &cfg.validate;
    let quick = v.quick;
    let seed = cfg.seed;
    let sign = if v.fault == Some(Fault::EifSign) {
        -1.0
    } else {
        1.0
    };
    let draws = v
        .eif_draws
        .unwrap_or(if quick { 200_000 } else { 1_000_000 });
    let mut checks = Vec::new();

    // Truth reproduction.
    let truth = true_effects(&DgpConfig::new(1, seed))?;
    let worst = truth
        .effects
        .iter()
        .zip(PUBLISHED_TRUTH)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    checks.push(check(
        "truth_reproduction",
        worst <= 0.005,
        format!(
            "effects {:?}, largest gap to published values {worst:.4}",
            truth.effects.map(|x| (x * 1e5).round() / 1e5)
        ),
    ));

    // Influence functions: mean zero at the truth, and the one-step
    // correction removing outcome-regression bias when g and q are right.
    let m = eif_mean_check(draws, seed, NuisanceSet::ALL, sign)?;
    checks.push(check("eif_mean_zero", m.passes(3.0), mean_detail(&m)));
    let mut g_q = NuisanceSet::ALL;
    g_q.qbar_a = false;
    g_q.qbar_star = false;
    let m = eif_mean_check(draws, seed ^ 0x5eed, g_q, sign)?;
    checks.push(check(
        "eif_corrects_outcome_regression",
        m.passes(3.0),
        mean_detail(&m),
    ));
    let m = multi_eif_mean_check(draws / 5, seed, 3)?;
    checks.push(check(
        "eif_mean_zero_three_mediators",
        m.passes(3.0),
        mean_detail(&m),
    ));

    // Saturated problem: one-step, TMLE and plug-in coincide.
    let sat = saturated_table(500, seed)?;
    let emp = EmpiricalNuisance::from_table(&sat)?;
    let os = onestep(&emp, &sat, &EstimateOptions::default())?;
    let tm = tmle(&emp, &sat, &EstimateOptions::default())?;
    let fl = tm.fluctuation.as_ref().map_or(f64::NAN, |f| f.max_abs());
    let gap = (0..5).fold(0.0f64, |g, k| {
        g.max((os.scaled_estimates[k] - os.plugin[k]).abs())
            .max((tm.scaled_estimates[k] - os.plugin[k]).abs())
    });
    let raw_scores = os.plugin_scores.iter().fold(0.0f64, |m, v| m.max(*v));
    checks.push(check(
        "npmle_fixed_point",
        raw_scores <= 1e-10 && gap <= 1e-8 && fl <= 1e-8,
        format!("max |P_n D| {raw_scores:.2e}, estimator gap {gap:.2e}, max fluctuation {fl:.2e}"),
    ));

    // Targeting solves its score equations.
    let sample = draw_dgp(&DgpConfig::new(1000, seed).with_stream(7))?;
    let fitted = fit_nuisances(&sample, &NuisanceConfig::default())?;
    let tm = tmle(&fitted, &sample, &EstimateOptions::default())?;
    let foc = tm.fluctuation.as_ref().map_or(f64::NAN, |f| f.max_score());
    let res = tm.residual_scores[1]
        .max(tm.residual_scores[2])
        .max(tm.residual_scores[3]);
    checks.push(check(
        "tmle_score_equations",
        foc <= 1e-8 && res <= 1e-6,
        format!("max first-order condition {foc:.2e}, max |P_n D| (direct, M1, M2) {res:.2e}"),
    ));

    // Two-mediator reduction of the t-mediator estimators.
    let os = onestep(&fitted, &sample, &EstimateOptions::default())?;
    let d = onestep_multi_direct(&fitted, &sample, 0.05, cfg.cell_cap)?;
    let i1 = onestep_multi_indirect(&fitted, 1, &sample, 0.05, cfg.cell_cap)?;
    let i2 = onestep_multi_indirect(&fitted, 2, &sample, 0.05, cfg.cell_cap)?;
    let gap = [(1, &d), (2, &i1), (3, &i2)]
        .iter()
        .fold(0.0f64, |g, (k, m)| {
            g.max((os.report.estimates[*k] - m.estimate).abs())
        });
    checks.push(check(
        "two_mediator_reduction",
        gap <= 1e-12,
        format!("largest difference {gap:.2e}"),
    ));

    // Three mediators against the exact oracle.
    let cfg3 = DgpConfig::new(2000, seed)
        .with_mediators(3)?
        .with_stream(11);
    let truth3 = true_multi_effects(&cfg3)?;
    let sample3 = draw_dgp(&cfg3)?;
    let fit3 = fit_nuisances(&sample3, &NuisanceConfig::default())?;
    let mut est3 = vec![onestep_multi_direct(&fit3, &sample3, 0.05, cfg.cell_cap)?];
    for s in 1..=3 {
        est3.push(onestep_multi_indirect(
            &fit3,
            s,
            &sample3,
            0.05,
            cfg.cell_cap,
        )?);
    }
    let zs: Vec<f64> = est3
        .iter()
        .zip(&truth3)
        .map(|(e, t)| (e.estimate - t) / e.se)
        .collect();
    checks.push(check(
        "three_mediator_oracle",
        zs.iter().all(|z| z.abs() <= 3.0),
        format!(
            "standardised errors {:?}",
            zs.iter()
                .map(|z| (z * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        ),
    ));

    // Multiple robustness.
    let rcfg = RobustnessConfig {
        sample_sizes: if quick {
            vec![2000, 8000]
        } else {
            vec![500, 2000, 8000]
        },
        replicates: v.replicates.unwrap_or(if quick { 20 } else { 100 }),
        seed,
        ..Default::default()
    };
    for r in robustness_suites(&v.combos, &rcfg)? {
        let b = r.final_bias();
        let nb = r.final_negative_bias();
        checks.push(check(
            format!("robustness_combo_{}", r.combo.id),
            b.abs() <= 0.01 && nb.abs() >= 0.02 && r.negative_control_non_decreasing(),
            format!(
                "{} with [{}] correct: bias {b:.4} at n={}, negative control {nb:.4}",
                r.effect_name,
                r.correct.join(", "),
                r.rows.last().map_or(0, |x| x.n)
            ),
        ));
    }

    let mut report = Report::new();
    header(&mut report, cfg);
    let s = report.section("checks");
    for c in &checks {
        s.text(
            format!("{}.status", c.name),
            if c.passed { "pass" } else { "fail" },
        )
        .text(format!("{}.detail", c.name), &c.detail);
    }
    s.text("all_passed", checks.iter().all(|c| c.passed));
    Ok(ValidateRun { report, checks })
}

/// Writes `text` to `path`, or to standard output without a path.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Where the replicate-level file goes when not configured explicitly.
pub fn default_replicates_path(cfg: &RunConfig) -> Option<std::path::PathBuf> {
    cfg.simulate.replicates_output.clone().or_else(|| {
        cfg.output
            .as_ref()
            .map(|o| o.with_extension("replicates.csv"))
    })
}
