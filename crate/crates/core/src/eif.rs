//! Efficient influence functions of the five effects, their empirical
//! covariance, Wald inference and the delta-method ratio effect.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ObservationTable, CONTROL, TREATED};
use crate::error::{Error, Result};
use crate::functionals::SubjectMarginals;
use crate::nuisance::{CellNuisance, NuisanceBundle};

pub const EFFECT_NAMES: [&str; 5] = ["total", "direct", "indirect_m1", "indirect_m2", "covariant"];

/// Denominator magnitude below which the ratio effect is refused.
pub const RATIO_DENOMINATOR_FLOOR: f64 = 1e-6;

/// One observation, mediators as level indices.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub c: &'a [f64],
    pub a: u8,
    pub k1: usize,
    pub k2: usize,
    pub y: f64,
}

impl<'a> Observation<'a> {
    pub fn from_table(table: &'a ObservationTable, i: usize) -> Self {
        Self {
            c: table.covariates(i),
            a: table.treatment(i),
            k1: table.mediator(i, 0),
            k2: table.mediator(i, 1),
            y: table.outcome(i),
        }
    }
}

/// Density ratios `(r1, r3, r4, r5)` at cell `(k1, k2)`:
/// `q*_J/q_J`, `q_{M1} q*_{M2}/q_J`, `q*_{M1} q*_{M2}/q_J`, `q_{M1} q_{M2}/q_J`
/// where unstarred laws are under `a` and starred under `a*`.
pub fn density_ratios(cell: &CellNuisance, k1: usize, k2: usize) -> [f64; 4] {
    let idx = cell.idx(k1, k2);
    let qj = cell.joint[TREATED][idx];
    [
        cell.joint[CONTROL][idx] / qj,
        cell.m1[TREATED][k1] * cell.m2[CONTROL][k2] / qj,
        cell.m1[CONTROL][k1] * cell.m2[CONTROL][k2] / qj,
        cell.m1[TREATED][k1] * cell.m2[TREATED][k2] / qj,
    ]
}

/// Clever covariates `H1..H5` of one observation.
pub fn clever_row(cell: &CellNuisance, a: u8, k1: usize, k2: usize) -> [f64; 5] {
    if a == 1 {
        let r = density_ratios(cell, k1, k2);
        let w = 1.0 / cell.g[TREATED];
        [w * r[0], 0.0, w * r[1], w * r[2], w * r[3]]
    } else {
        [0.0, 1.0 / cell.g[CONTROL], 0.0, 0.0, 0.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleverCovariates {
    /// `H1..H5` per subject.
    pub h: Vec<[f64; 5]>,
    /// `1_a(A)/g_a(C)` per subject.
    pub treated_weight: Vec<f64>,
}

pub fn clever_covariates(
    nuisances: &dyn NuisanceBundle,
    table: &ObservationTable,
) -> CleverCovariates {
    let mut h = Vec::with_capacity(table.len());
    let mut treated_weight = Vec::with_capacity(table.len());
    for i in 0..table.len() {
        let o = Observation::from_table(table, i);
        let cell = nuisances.pair(o.c);
        h.push(clever_row(&cell, o.a, o.k1, o.k2));
        treated_weight.push(if o.a == 1 { 1.0 / cell.g[TREATED] } else { 0.0 });
    }
    CleverCovariates { h, treated_weight }
}

/// The five influence functions at one observation, with the effect values
/// `psi` subtracted.
pub fn eif_row(
    cell: &CellNuisance,
    marg: &SubjectMarginals,
    o: &Observation<'_>,
    psi: &[f64; 5],
) -> [f64; 5] {
    eif_row_signed(cell, marg, o, psi, 1.0)
}

/// As [`eif_row`]; `residual_sign` multiplies the outcome-residual terms.
/// Anything but `1.0` yields a deliberately wrong function, used to check
/// that the validation suite notices.
#[doc(hidden)]
pub fn eif_row_signed(
    cell: &CellNuisance,
    marg: &SubjectMarginals,
    o: &Observation<'_>,
    psi: &[f64; 5],
    residual_sign: f64,
) -> [f64; 5] {
    let (k1, k2) = (o.k1, o.k2);
    let idx = cell.idx(k1, k2);
    let qa = cell.qbar[TREATED][idx];
    let qs = cell.qbar[CONTROL][idx];
    let treated = o.a == 1;
    let wa = if treated { 1.0 / cell.g[TREATED] } else { 0.0 };
    let ws = if treated { 0.0 } else { 1.0 / cell.g[CONTROL] };

    let tj = marg.treated_joint;
    let sj = marg.control_joint;
    let delta = marg.direct_contrast;
    let x = marg.m1_treated_m2_control;
    let z = marg.both_control;
    let w = marg.both_treated;
    let m1t_at_m2 = marg.over_m1_treated[k2];
    let m1c_at_m2 = marg.over_m1_control[k2];
    let m2t_at_m1 = marg.over_m2_treated[k1];
    let m2c_at_m1 = marg.over_m2_control[k1];

    let (r1, r3, r4, r5) = if treated {
        let r = density_ratios(cell, k1, k2);
        (r[0], r[1], r[2], r[3])
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let res_a = residual_sign * (o.y - qa);

    let total = wa * (o.y - tj) - ws * (o.y - sj) + tj - sj - psi[0];
    let direct =
        wa * r1 * res_a - ws * residual_sign * (o.y - qs) + ws * (qa - qs - delta) + delta - psi[1];
    let m1 = wa * (r3 - r4) * res_a + wa * (m2c_at_m1 - x) - ws * (m2c_at_m1 - z)
        + ws * (m1t_at_m2 - m1c_at_m2 - (x - z))
        + x
        - z
        - psi[2];
    let m2 = wa * (r5 - r3) * res_a + wa * (m1t_at_m2 - w) - ws * (m1t_at_m2 - x)
        + wa * (m2t_at_m1 - m2c_at_m1 - (w - x))
        + w
        - x
        - psi[3];
    [total, direct, m1, m2, total - direct - m1 - m2]
}

/// Influence functions of `ψ_{M1,a} = E Q̃_{a,M1×M2*}` and
/// `ψ_{M1,a*} = E Q̃_{a,M1*×M2*}`, whose ratio is the ratio-scale indirect
/// effect through `M1`.
pub fn ratio_component_row(
    cell: &CellNuisance,
    marg: &SubjectMarginals,
    o: &Observation<'_>,
    psi: &[f64; 2],
) -> [f64; 2] {
    let (k1, k2) = (o.k1, o.k2);
    let qa = cell.qbar[TREATED][cell.idx(k1, k2)];
    let treated = o.a == 1;
    let wa = if treated { 1.0 / cell.g[TREATED] } else { 0.0 };
    let ws = if treated { 0.0 } else { 1.0 / cell.g[CONTROL] };
    let (r3, r4) = if treated {
        let r = density_ratios(cell, k1, k2);
        (r[1], r[2])
    } else {
        (0.0, 0.0)
    };
    let x = marg.m1_treated_m2_control;
    let z = marg.both_control;
    let m2c_at_m1 = marg.over_m2_control[k1];
    let num = wa * r3 * (o.y - qa) + wa * (m2c_at_m1 - x) + ws * (marg.over_m1_treated[k2] - x) + x
        - psi[0];
    let den = wa * r4 * (o.y - qa) + ws * (m2c_at_m1 - z) + ws * (marg.over_m1_control[k2] - z) + z
        - psi[1];
    [num, den]
}

/// `n × 5` influence-function values: total, direct, M1, M2, covariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EifMatrix {
    pub rows: Vec<[f64; 5]>,
}

impl EifMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_means(&self) -> [f64; 5] {
        column_means(&self.rows)
    }

    pub fn covariance(&self) -> [[f64; 5]; 5] {
        covariance(&self.rows)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows.iter().map(|r| r.map(|v| v * factor)).collect(),
        }
    }
}

pub fn eval_eifs(
    nuisances: &dyn NuisanceBundle,
    marginalized: &[SubjectMarginals],
    effects: &[f64; 5],
    table: &ObservationTable,
) -> EifMatrix {
    let rows = (0..table.len())
        .map(|i| {
            let o = Observation::from_table(table, i);
            eif_row(&nuisances.pair(o.c), &marginalized[i], &o, effects)
        })
        .collect();
    EifMatrix { rows }
}

pub(crate) fn column_means<const K: usize>(rows: &[[f64; K]]) -> [f64; K] {
    let n = rows.len() as f64;
    let mut m = [0.0; K];
    for r in rows {
        for (s, v) in m.iter_mut().zip(r) {
            *s += v;
        }
    }
    m.map(|s| s / n)
}

/// Empirical covariance with divisor `n`.
pub(crate) fn covariance<const K: usize>(rows: &[[f64; K]]) -> [[f64; K]; K] {
    let n = rows.len() as f64;
    let mean = column_means(rows);
    let mut s = [[0.0; K]; K];
    for r in rows {
        for a in 0..K {
            let da = r[a] - mean[a];
            for b in 0..=a {
                s[a][b] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..K {
        for b in 0..=a {
            s[a][b] /= n;
            s[b][a] = s[a][b];
        }
    }
    s
}

/// `z_{1-α/2}`.
pub fn normal_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

fn two_sided_p(z: f64) -> f64 {
    2.0 * (1.0 - Normal::standard().cdf(z.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastTest {
    pub label: String,
    /// Weights over the five effects.
    pub weights: [f64; 5],
    pub estimate: f64,
    pub se: f64,
    /// `None` when the contrast has zero variance.
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

impl ContrastTest {
    pub fn is_degenerate(&self) -> bool {
        self.z.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEffect {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    /// Asymptotic standard deviation; the standard error is `tau / √n`.
    pub tau: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub covariance: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectReport {
    pub n: usize,
    pub alpha: f64,
    pub estimates: [f64; 5],
    pub covariance: [[f64; 5]; 5],
    pub se: [f64; 5],
    pub ci: [(f64, f64); 5],
    pub z: [Option<f64>; 5],
    pub p_values: [Option<f64>; 5],
    pub contrasts: Vec<ContrastTest>,
    pub ratio: Option<RatioEffect>,
}

/// Wald inference from the influence-function matrix, with the default
/// pairwise contrasts among the direct, indirect and covariant effects.
pub fn covariance_and_ci(
    eifs: &EifMatrix,
    estimates: &[f64; 5],
    alpha: f64,
) -> Result<EffectReport> {
    let n = eifs.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let sigma = eifs.covariance();
    let zq = normal_quantile(alpha);
    let se: [f64; 5] = std::array::from_fn(|k| (sigma[k][k].max(0.0) / n as f64).sqrt());
    let ci = std::array::from_fn(|k| (estimates[k] - zq * se[k], estimates[k] + zq * se[k]));
    let z: [Option<f64>; 5] = std::array::from_fn(|k| (se[k] > 0.0).then(|| estimates[k] / se[k]));
    let p_values = z.map(|z| z.map(two_sided_p));
    let mut contrasts = Vec::new();
    for i in 1..5 {
        for j in i + 1..5 {
            let mut e = [0.0; 5];
            e[i] = 1.0;
            e[j] = -1.0;
            contrasts.push(contrast(
                eifs,
                estimates,
                &e,
                &format!("{} - {}", EFFECT_NAMES[i], EFFECT_NAMES[j]),
            ));
        }
    }
    Ok(EffectReport {
        n,
        alpha,
        estimates: *estimates,
        covariance: sigma,
        se,
        ci,
        z,
        p_values,
        contrasts,
        ratio: None,
    })
}

/// Wald test of `e·ψ = 0`. The variance is computed from the combined
/// influence function so that perfectly correlated effects give exactly 0.
pub fn contrast(
    eifs: &EifMatrix,
    estimates: &[f64; 5],
    weights: &[f64; 5],
    label: &str,
) -> ContrastTest {
    let n = eifs.len() as f64;
    let combined: Vec<[f64; 1]> = eifs
        .rows
        .iter()
        .map(|r| [r.iter().zip(weights).map(|(v, w)| v * w).sum()])
        .collect();
    let var = covariance(&combined)[0][0].max(0.0);
    let se = (var / n).sqrt();
    let estimate: f64 = estimates.iter().zip(weights).map(|(v, w)| v * w).sum();
    let z = (se > 0.0).then(|| estimate / se);
    ContrastTest {
        label: label.to_string(),
        weights: *weights,
        estimate,
        se,
        z,
        p_value: z.map(two_sided_p),
    }
}

/// Delta-method inference for `numerator / denominator`; `sigma` is the
/// asymptotic covariance of the two estimates' influence functions.
pub fn ratio_effect(
    numerator: f64,
    denominator: f64,
    sigma: [[f64; 2]; 2],
    n: usize,
    alpha: f64,
) -> Result<RatioEffect> {
    if !(denominator.abs() > RATIO_DENOMINATOR_FLOOR) {
        return Err(Error::RatioIllDefined(denominator));
    }
    let ratio = numerator / denominator;
    let grad = [1.0 / denominator, -numerator / (denominator * denominator)];
    let tau2 = grad[0] * grad[0] * sigma[0][0]
        + 2.0 * grad[0] * grad[1] * sigma[0][1]
        + grad[1] * grad[1] * sigma[1][1];
    let tau = tau2.max(0.0).sqrt();
    let se = tau / (n as f64).sqrt();
    let zq = normal_quantile(alpha);
    Ok(RatioEffect {
        numerator,
        denominator,
        ratio,
        tau,
        se,
        ci: (ratio - zq * se, ratio + zq * se),
        covariance: sigma,
    })
}
