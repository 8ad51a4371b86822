//! One-step and targeted minimum loss estimators of the five effects.

use serde::Serialize;

use crate::data::{ObservationTable, CONTROL, TREATED};
use crate::eif::{
    clever_row, column_means, contrast, covariance, covariance_and_ci, density_ratios, eif_row,
    ratio_component_row, ratio_effect, EffectReport, EifMatrix, Observation,
};
use crate::error::{Error, Result};
use crate::functionals::{plugin_effects, SubjectMarginals};
use crate::learners::{
    expit, fit_weighted_logistic, logit_clamped, Design, FitSummary, LearnerSpec,
};
use crate::nuisance::{CellNuisance, NuisanceBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OneStep,
    Tmle,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OneStep => "one_step",
            Self::Tmle => "tmle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TmleMode {
    #[default]
    SinglePass,
    Iterate,
}

impl std::str::FromStr for TmleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_pass" | "single-pass" => Ok(Self::SinglePass),
            "iterate" => Ok(Self::Iterate),
            other => Err(Error::Config(format!("unknown tmle mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub alpha: f64,
    /// Also estimate the ratio-scale indirect effect through `M1`.
    pub ratio: bool,
    pub tmle_mode: TmleMode,
    /// Extra contrasts as weights over (total, direct, M1, M2, covariant).
    pub contrasts: Vec<(String, [f64; 5])>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            ratio: false,
            tmle_mode: TmleMode::SinglePass,
            contrasts: Vec::new(),
        }
    }
}

/// One fitted fluctuation: coefficients, first-order condition and solver
/// summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationFit {
    pub name: String,
    pub coefficients: Vec<f64>,
    /// Largest absolute empirical mean of the score components.
    pub score: f64,
    pub summary: FitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationParams {
    pub epsilon: [f64; 5],
    pub delta: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Fluctuation of `Q̃_{a,M1×M2}` used by the M2 effect.
    pub zeta: f64,
    /// Total-effect fluctuations for arms `a*` and `a`.
    pub total: [f64; 2],
    pub fits: Vec<FluctuationFit>,
    pub passes: usize,
}

impl FluctuationParams {
    pub fn max_abs(&self) -> f64 {
        self.epsilon
            .iter()
            .chain([&self.delta, &self.eta, &self.gamma, &self.zeta])
            .chain(&self.total)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_score(&self) -> f64 {
        self.fits.iter().fold(0.0, |m, f| m.max(f.score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorOutput {
    pub method: Method,
    /// Inference on the original outcome scale.
    pub report: EffectReport,
    /// Estimates on the unit-interval outcome scale.
    pub scaled_estimates: [f64; 5],
    /// Plug-in estimates (unit scale) from the initial nuisances.
    pub plugin: [f64; 5],
    /// `|P_n D*|` per effect at the final estimates (unit scale).
    pub residual_scores: [f64; 5],
    /// `|P_n D*|` at the initial nuisances and plug-in, the size of the
    /// one-step correction.
    pub plugin_scores: [f64; 5],
    /// Any unit-scale estimate outside `[-1, 1]`.
    pub out_of_bounds: bool,
    pub fluctuation: Option<FluctuationParams>,
    pub diagnostics: Vec<(String, FitSummary)>,
    pub warnings: Vec<String>,
    /// Influence-function values on the unit scale.
    #[serde(skip)]
    pub eifs: EifMatrix,
}

fn require_two(table: &ObservationTable) -> Result<()> {
    if table.mediator_count() != 2 {
        return Err(Error::MediatorCount {
            expected: 2,
            found: table.mediator_count(),
        });
    }
    if table.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            got: table.len(),
        });
    }
    Ok(())
}

fn cells_of(nuisances: &dyn NuisanceBundle, table: &ObservationTable) -> Vec<CellNuisance> {
    (0..table.len())
        .map(|i| nuisances.pair(table.covariates(i)))
        .collect()
}

/// Assembles the output common to both estimators.
#[allow(clippy::too_many_arguments)]
fn assemble(
    method: Method,
    table: &ObservationTable,
    cells: &[CellNuisance],
    marg: &[SubjectMarginals],
    estimates: [f64; 5],
    eifs: EifMatrix,
    plugin: [f64; 5],
    plugin_scores: [f64; 5],
    ratio_psi: Option<[f64; 2]>,
    opts: &EstimateOptions,
    nuisances: &dyn NuisanceBundle,
    fluctuation: Option<FluctuationParams>,
) -> Result<EstimatorOutput> {
    let scale = table.outcome_scale();
    let range = scale.range();
    let residual_scores = eifs.column_means().map(f64::abs);
    let out_of_bounds = estimates.iter().any(|v| v.abs() > 1.0);
    let scaled_eifs = eifs.scaled(range);
    let unscaled = estimates.map(|v| scale.unscale_effect(v));
    let mut report = covariance_and_ci(&scaled_eifs, &unscaled, opts.alpha)?;
    for (label, w) in &opts.contrasts {
        report
            .contrasts
            .push(contrast(&scaled_eifs, &unscaled, w, label));
    }
    let mut warnings: Vec<String> = table
        .warnings()
        .iter()
        .map(|w| format!("positivity: {w}"))
        .collect();
    if let Some(psi) = ratio_psi {
        let rows: Vec<[f64; 2]> = (0..table.len())
            .map(|i| {
                let o = Observation::from_table(table, i);
                ratio_component_row(&cells[i], &marg[i], &o, &psi).map(|v| v * range)
            })
            .collect();
        let sigma = covariance(&rows);
        let mean = column_means(&rows);
        // Means, not contrasts, so the offset of the outcome scale matters.
        let num = scale.unscale_mean(psi[0])
            + if method == Method::OneStep {
                mean[0]
            } else {
                0.0
            };
        let den = scale.unscale_mean(psi[1])
            + if method == Method::OneStep {
                mean[1]
            } else {
                0.0
            };
        match ratio_effect(num, den, sigma, table.len(), opts.alpha) {
            Ok(r) => report.ratio = Some(r),
            Err(e) => warnings.push(format!("ratio effect: {e}")),
        }
    }
    if out_of_bounds {
        warnings.push(
            "one-step estimate outside the parameter space [-1, 1] on the unit outcome scale"
                .into(),
        );
    }
    let diagnostics = nuisances.diagnostics();
    for (name, s) in &diagnostics {
        if !s.converged {
            warnings.push(format!(
                "{name}: fit did not converge (gradient {:e})",
                s.gradient_norm
            ));
        }
        if s.ridge_applied {
            warnings.push(format!("{name}: ridge penalty applied"));
        }
    }
    if let Some(f) = &fluctuation {
        for fit in &f.fits {
            if !fit.summary.converged {
                warnings.push(format!("fluctuation {}: fit did not converge", fit.name));
            }
        }
    }
    Ok(EstimatorOutput {
        method,
        report,
        scaled_estimates: estimates,
        plugin,
        residual_scores,
        plugin_scores,
        out_of_bounds,
        fluctuation,
        diagnostics,
        warnings,
        eifs,
    })
}

/// Plug-in estimate plus the empirical mean of the influence function at
/// the plug-in nuisances.
pub fn onestep(
    nuisances: &dyn NuisanceBundle,
    table: &ObservationTable,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput> {
    require_two(table)?;
    let cells = cells_of(nuisances, table);
    let marg: Vec<SubjectMarginals> = cells.iter().map(SubjectMarginals::from_cell).collect();
    let plugin = plugin_effects(&marg).to_array();
    let rows: Vec<[f64; 5]> = (0..table.len())
        .map(|i| {
            eif_row(
                &cells[i],
                &marg[i],
                &Observation::from_table(table, i),
                &plugin,
            )
        })
        .collect();
    let eifs = EifMatrix { rows };
    let correction = eifs.column_means();
    let plugin_scores = correction.map(f64::abs);
    let estimates: [f64; 5] = std::array::from_fn(|k| plugin[k] + correction[k]);
    let final_eifs = EifMatrix {
        rows: eifs
            .rows
            .iter()
            .map(|r| std::array::from_fn(|k| r[k] - correction[k]))
            .collect(),
    };
    let ratio_psi = opts.ratio.then(|| {
        let n = table.len() as f64;
        [
            marg.iter().map(|m| m.m1_treated_m2_control).sum::<f64>() / n,
            marg.iter().map(|m| m.both_control).sum::<f64>() / n,
        ]
    });
    assemble(
        Method::OneStep,
        table,
        &cells,
        &marg,
        estimates,
        final_eifs,
        plugin,
        plugin_scores,
        ratio_psi,
        opts,
        nuisances,
        None,
    )
}

fn shift_prob(p: f64, s: f64) -> f64 {
    if s == 0.0 {
        p
    } else {
        expit(logit_clamped(p) + s)
    }
}

/// Applies the `ε` submodel to every mediator cell of a subject, with the
/// clever covariates evaluated at that cell and the treatment indicator set
/// by the arm.
pub fn fluctuate(cell: &CellNuisance, eps: &[f64; 5]) -> CellNuisance {
    let mut out = cell.clone();
    for k1 in 0..cell.n1 {
        for k2 in 0..cell.n2 {
            let idx = cell.idx(k1, k2);
            let r = density_ratios(cell, k1, k2);
            let s =
                (eps[0] * r[0] + eps[2] * r[1] + eps[3] * r[2] + eps[4] * r[3]) / cell.g[TREATED];
            out.qbar[TREATED][idx] = shift_prob(cell.qbar[TREATED][idx], s);
            out.qbar[CONTROL][idx] = shift_prob(cell.qbar[CONTROL][idx], eps[1] / cell.g[CONTROL]);
        }
    }
    out
}

struct Fluctuator {
    n: f64,
}

impl Fluctuator {
    /// No-intercept logistic fit; returns coefficients and the FOC.
    fn fit(
        &self,
        name: &str,
        x: Design,
        y: &[f64],
        w: &[f64],
        offset: &[f64],
        intercept: bool,
    ) -> Result<FluctuationFit> {
        let base = if intercept {
            LearnerSpec::intercept_only()
        } else {
            LearnerSpec::no_intercept()
        };
        let spec = LearnerSpec {
            separation_guard: false,
            ..base
        };
        let fit = fit_weighted_logistic(&x, y, w, Some(offset), &spec)?;
        let k = fit.coefficients.len();
        let mut score = vec![0.0; k];
        for i in 0..y.len() {
            let xi = if intercept { &[][..] } else { x.row(i) };
            let mu = expit(offset[i] + fit.linear_predictor(xi));
            let r = w[i] * (y[i] - mu);
            if intercept {
                score[0] += r;
            } else {
                for (s, v) in score.iter_mut().zip(xi) {
                    *s += r * v;
                }
            }
        }
        let score = score.iter().fold(0.0f64, |m, s| m.max((s / self.n).abs()));
        Ok(FluctuationFit {
            name: name.to_string(),
            summary: crate::learners::Predictor::summary(&fit)
                .expect("logistic fits carry a summary"),
            coefficients: fit.coefficients,
            score,
        })
    }
}

type TargetedPass = (
    Vec<CellNuisance>,
    Vec<SubjectMarginals>,
    [f64; 5],
    FluctuationParams,
);

/// One sequential targeting pass from `cells`; returns targeted cells,
/// targeted marginals, estimates and the fitted parameters.
fn targeting_pass(table: &ObservationTable, cells: &[CellNuisance]) -> Result<TargetedPass> {
    let n = table.len();
    let fl = Fluctuator { n: n as f64 };
    let obs: Vec<Observation<'_>> = (0..n).map(|i| Observation::from_table(table, i)).collect();
    if !obs.iter().any(|o| o.a == 0) || !obs.iter().any(|o| o.a == 1) {
        return Err(Error::EmptyCell(
            "targeting needs observations in both treatment arms".into(),
        ));
    }

    // Outcome regression: joint five-dimensional fit.
    let mut hdata = Vec::with_capacity(5 * n);
    let mut offset = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (o, cell) in obs.iter().zip(cells) {
        hdata.extend(clever_row(cell, o.a, o.k1, o.k2));
        offset.push(logit_clamped(cell.qbar[o.a as usize][cell.idx(o.k1, o.k2)]));
        y.push(o.y);
    }
    let names = (1..=5).map(|k| format!("H{k}")).collect();
    let eps_fit = fl.fit(
        "epsilon",
        Design::new(hdata, 5, names)?,
        &y,
        &vec![1.0; n],
        &offset,
        false,
    )?;
    let eps: [f64; 5] = std::array::from_fn(|k| eps_fit.coefficients[k]);
    let star: Vec<CellNuisance> = cells.iter().map(|c| fluctuate(c, &eps)).collect();
    let mut marg: Vec<SubjectMarginals> = star.iter().map(SubjectMarginals::from_cell).collect();

    // Direct effect on the rescaled contrast, among a* observations.
    let (mut x, mut yy, mut off) = (Vec::new(), Vec::new(), Vec::new());
    for (i, o) in obs.iter().enumerate() {
        if o.a == 0 {
            let c = &star[i];
            let idx = c.idx(o.k1, o.k2);
            x.push(1.0 / c.g[CONTROL]);
            yy.push((c.qbar[TREATED][idx] - c.qbar[CONTROL][idx] + 1.0) / 2.0);
            off.push(logit_clamped((marg[i].direct_contrast + 1.0) / 2.0));
        }
    }
    let w = vec![1.0; yy.len()];
    let delta_fit = fl.fit(
        "delta",
        Design::new(x, 1, vec!["1/g*".into()])?,
        &yy,
        &w,
        &off,
        false,
    )?;
    let delta = delta_fit.coefficients[0];

    // Q̃_{a,M1×M2*}: a-arm rows integrate M2 under a*, a*-arm rows integrate M1 under a.
    let (mut yy, mut w, mut off) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (i, o) in obs.iter().enumerate() {
        let c = &star[i];
        if o.a == 1 {
            yy.push(marg[i].over_m2_control[o.k1]);
            w.push(1.0 / c.g[TREATED]);
        } else {
            yy.push(marg[i].over_m1_treated[o.k2]);
            w.push(1.0 / c.g[CONTROL]);
        }
        off.push(logit_clamped(marg[i].m1_treated_m2_control));
    }
    let eta_fit = fl.fit("eta", Design::empty(n), &yy, &w, &off, true)?;
    let eta = eta_fit.coefficients[0];

    // Q̃_{a,M1*×M2*} on a* rows and Q̃_{a,M1×M2} on a rows, two pseudo-rows each.
    let (mut gy, mut gw, mut goff) = (Vec::new(), Vec::new(), Vec::new());
    let (mut zy, mut zw, mut zoff) = (Vec::new(), Vec::new(), Vec::new());
    for (i, o) in obs.iter().enumerate() {
        let c = &star[i];
        let m = &marg[i];
        if o.a == 0 {
            for v in [m.over_m2_control[o.k1], m.over_m1_control[o.k2]] {
                gy.push(v);
                gw.push(1.0 / c.g[CONTROL]);
                goff.push(logit_clamped(m.both_control));
            }
        } else {
            for v in [m.over_m1_treated[o.k2], m.over_m2_treated[o.k1]] {
                zy.push(v);
                zw.push(1.0 / c.g[TREATED]);
                zoff.push(logit_clamped(m.both_treated));
            }
        }
    }
    let gamma_fit = fl.fit("gamma", Design::empty(gy.len()), &gy, &gw, &goff, true)?;
    let gamma = gamma_fit.coefficients[0];
    let zeta_fit = fl.fit("zeta", Design::empty(zy.len()), &zy, &zw, &zoff, true)?;
    let zeta = zeta_fit.coefficients[0];

    // Total effect: one fluctuation per arm with covariate 1/g.
    let mut total = [0.0; 2];
    let mut total_fits = Vec::new();
    for arm in [CONTROL, TREATED] {
        let (mut x, mut yy, mut off) = (Vec::new(), Vec::new(), Vec::new());
        for (i, o) in obs.iter().enumerate() {
            if o.a as usize == arm {
                x.push(1.0 / star[i].g[arm]);
                yy.push(o.y);
                off.push(logit_clamped(if arm == TREATED {
                    marg[i].treated_joint
                } else {
                    marg[i].control_joint
                }));
            }
        }
        let w = vec![1.0; yy.len()];
        let name = if arm == TREATED {
            "total_a"
        } else {
            "total_a_star"
        };
        let f = fl.fit(
            name,
            Design::new(x, 1, vec!["1/g".into()])?,
            &yy,
            &w,
            &off,
            false,
        )?;
        total[arm] = f.coefficients[0];
        total_fits.push(f);
    }

    let mut sums = [0.0; 4];
    for (m, c) in marg.iter_mut().zip(&star) {
        m.treated_joint = shift_prob(m.treated_joint, total[TREATED] / c.g[TREATED]);
        m.control_joint = shift_prob(m.control_joint, total[CONTROL] / c.g[CONTROL]);
        m.direct_contrast = if delta == 0.0 {
            m.direct_contrast
        } else {
            2.0 * expit(logit_clamped((m.direct_contrast + 1.0) / 2.0) + delta / c.g[CONTROL]) - 1.0
        };
        m.m1_treated_m2_control = shift_prob(m.m1_treated_m2_control, eta);
        m.both_control = shift_prob(m.both_control, gamma);
        m.both_treated = shift_prob(m.both_treated, zeta);
        for (s, v) in sums.iter_mut().zip(m.contrasts()) {
            *s += v;
        }
    }
    let nf = n as f64;
    let est = crate::functionals::PluginEffects::from_parts(
        sums[0] / nf,
        sums[1] / nf,
        sums[2] / nf,
        sums[3] / nf,
    )
    .to_array();
    let mut fits = vec![eps_fit, delta_fit, eta_fit, gamma_fit, zeta_fit];
    fits.extend(total_fits);
    let params = FluctuationParams {
        epsilon: eps,
        delta,
        eta,
        gamma,
        zeta,
        total,
        fits,
        passes: 1,
    };
    Ok((star, marg, est, params))
}

/// Targeted minimum loss estimation: `ε` fluctuation of `Q̄`, then the
/// direct, indirect and total-effect fluctuations; covariant by
/// subtraction.
pub fn tmle(
    nuisances: &dyn NuisanceBundle,
    table: &ObservationTable,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput> {
    require_two(table)?;
    let n = table.len();
    let initial = cells_of(nuisances, table);
    let init_marg: Vec<SubjectMarginals> =
        initial.iter().map(SubjectMarginals::from_cell).collect();
    let plugin = plugin_effects(&init_marg).to_array();
    let plugin_rows: Vec<[f64; 5]> = (0..n)
        .map(|i| {
            eif_row(
                &initial[i],
                &init_marg[i],
                &Observation::from_table(table, i),
                &plugin,
            )
        })
        .collect();
    let plugin_scores = column_means(&plugin_rows).map(f64::abs);

    let max_passes = match opts.tmle_mode {
        TmleMode::SinglePass => 1,
        TmleMode::Iterate => 20,
    };
    let target = 1e-6 / (n as f64).sqrt();
    let mut cells = initial;
    let mut passes = 0;
    let mut acc: Option<FluctuationParams> = None;
    loop {
        let (star, marg, est, params) = targeting_pass(table, &cells)?;
        passes += 1;
        let rows: Vec<[f64; 5]> = (0..n)
            .map(|i| eif_row(&star[i], &marg[i], &Observation::from_table(table, i), &est))
            .collect();
        let eifs = EifMatrix { rows };
        let worst = eifs
            .column_means()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let params = match acc.take() {
            None => params,
            Some(prev) => accumulate(prev, params),
        };
        if passes >= max_passes || worst <= target {
            let mut params = params;
            params.passes = passes;
            let ratio_psi = opts.ratio.then(|| {
                [
                    marg.iter().map(|m| m.m1_treated_m2_control).sum::<f64>() / n as f64,
                    marg.iter().map(|m| m.both_control).sum::<f64>() / n as f64,
                ]
            });
            return assemble(
                Method::Tmle,
                table,
                &star,
                &marg,
                est,
                eifs,
                plugin,
                plugin_scores,
                ratio_psi,
                opts,
                nuisances,
                Some(params),
            );
        }
        acc = Some(params);
        cells = star;
    }
}

/// Later passes report their own scores; coefficients are summed where
/// they compose additively on the logit scale.
fn accumulate(prev: FluctuationParams, next: FluctuationParams) -> FluctuationParams {
    FluctuationParams {
        epsilon: std::array::from_fn(|k| prev.epsilon[k] + next.epsilon[k]),
        delta: next.delta,
        eta: next.eta,
        gamma: next.gamma,
        zeta: next.zeta,
        total: next.total,
        fits: next.fits,
        passes: prev.passes + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, OutcomeBounds, RawDataset, SupportSpec};
    use crate::nuisance::{fit_nuisances, EmpiricalNuisance, NuisanceConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Single confounder level, 2×2 mediators, continuous outcome.
    fn saturated_table(n: usize, seed: u64) -> ObservationTable {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut a = Vec::new();
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            // Cycle through all cells first so none is empty.
            let (ai, k1, k2) = if i < 8 {
                ((i / 4) as f64, ((i / 2) % 2) as f64, (i % 2) as f64)
            } else {
                let ai = f64::from(rng.gen::<f64>() < 0.45);
                let k1 = f64::from(rng.gen::<f64>() < 0.3 + 0.3 * ai);
                let k2 = f64::from(rng.gen::<f64>() < 0.4 + 0.2 * k1);
                (ai, k1, k2)
            };
            let mean = 0.2 + 0.3 * ai + 0.2 * k1 + 0.1 * k2 * ai;
            a.push(ai);
            m1.push(k1);
            m2.push(k2);
            y.push((mean + 0.2 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0));
        }
        let raw = RawDataset {
            covariate_names: vec!["c".into()],
            covariates: vec![vec![1.0; n]],
            treatment: a,
            mediator_names: vec!["m1".into(), "m2".into()],
            mediators: vec![m1, m2],
            outcome: y,
        };
        validate_dataset(&raw, &SupportSpec::Infer, OutcomeBounds::Declared(0.0, 1.0)).unwrap()
    }

    #[test]
    fn npmle_fixed_point() {
        let t = saturated_table(500, 1);
        let e = EmpiricalNuisance::from_table(&t).unwrap();
        let os = onestep(&e, &t, &EstimateOptions::default()).unwrap();
        let tm = tmle(&e, &t, &EstimateOptions::default()).unwrap();
        for k in 0..5 {
            assert!((os.scaled_estimates[k] - os.plugin[k]).abs() <= 1e-10);
            assert!((tm.scaled_estimates[k] - os.plugin[k]).abs() <= 1e-8);
        }
        let f = tm.fluctuation.unwrap();
        assert!(f.max_abs() <= 1e-8, "{f:?}");
    }

    fn random_table(n: usize, seed: u64) -> ObservationTable {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut c = Vec::new();
        let mut a = Vec::new();
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let ci: f64 = rng.gen();
            let ai = f64::from(rng.gen::<f64>() < expit(-0.5 + ci));
            let k1 = (0..3).filter(|_| rng.gen::<f64>() < 0.3 + 0.2 * ai).count() as f64;
            let k2 = (0..2).filter(|_| rng.gen::<f64>() < 0.4 + 0.1 * k1).count() as f64;
            let p = expit(-1.0 + ci + 0.4 * k1 + 0.3 * k2 + 0.5 * ai);
            a.push(ai);
            c.push(ci);
            m1.push(k1);
            m2.push(k2);
            y.push(f64::from(rng.gen::<f64>() < p));
        }
        let raw = RawDataset {
            covariate_names: vec!["c".into()],
            covariates: vec![c],
            treatment: a,
            mediator_names: vec!["m1".into(), "m2".into()],
            mediators: vec![m1, m2],
            outcome: y,
        };
        validate_dataset(&raw, &SupportSpec::Infer, OutcomeBounds::Declared(0.0, 1.0)).unwrap()
    }

    #[test]
    fn tmle_solves_its_score_equations() {
        let t = random_table(600, 5);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        let out = tmle(&f, &t, &EstimateOptions::default()).unwrap();
        let p = out.fluctuation.as_ref().unwrap();
        assert!(p.max_score() <= 1e-8, "{:?}", p.fits);
        for k in 0..4 {
            assert!(
                out.residual_scores[k] <= 1e-6,
                "effect {k}: {}",
                out.residual_scores[k]
            );
        }
        for v in out.scaled_estimates {
            assert!(v.abs() < 1.0);
        }
        let e = out.scaled_estimates;
        assert_eq!(e[4], e[0] - e[1] - e[2] - e[3]);
    }

    #[test]
    fn onestep_identity_and_decomposition() {
        let t = random_table(300, 9);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        let out = onestep(
            &f,
            &t,
            &EstimateOptions {
                ratio: true,
                ..Default::default()
            },
        )
        .unwrap();
        let means = out.eifs.column_means();
        for m in means {
            assert!(m.abs() < 1e-15);
        }
        let e = out.report.estimates;
        assert!((e[4] - (e[0] - e[1] - e[2] - e[3])).abs() < 1e-15);
        assert!(out.report.ratio.is_some());
    }

    #[test]
    fn iterate_mode_stops_once_scores_vanish() {
        let t = random_table(400, 2);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        let out = tmle(
            &f,
            &t,
            &EstimateOptions {
                tmle_mode: TmleMode::Iterate,
                ..Default::default()
            },
        )
        .unwrap();
        let p = out.fluctuation.unwrap();
        assert!(p.passes <= 2);
        assert!(out.residual_scores.iter().all(|v| *v <= 1e-6));
    }

    #[test]
    fn fluctuation_at_zero_is_identity() {
        let t = random_table(50, 3);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        let cell = f.pair(t.covariates(0));
        assert_eq!(fluctuate(&cell, &[0.0; 5]), cell);
    }
}
