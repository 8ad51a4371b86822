//! Exact effect values for the simulation design: finite sums over
//! mediator cells and Gauss-Legendre quadrature over the confounders.

use serde::Serialize;

use crate::data::{CONTROL, TREATED};
use crate::eif::{eif_row, Observation};
use crate::error::{Error, Result};
use crate::functionals::SubjectMarginals;
use crate::multimediator::{direct_plugin, indirect_pieces};
use crate::nuisance::{CellNuisance, NuisanceBundle};

use super::dgp::{AnalyticNuisance, Corruption, DgpConfig, NuisanceSet};

/// Node counts tried in turn until successive results agree.
pub const QUADRATURE_ORDERS: [usize; 4] = [8, 16, 32, 64];
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-type initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = (1.0 - x) / 2.0;
        nodes[n - 1 - i] = (1.0 + x) / 2.0;
        weights[i] = w / 2.0;
        weights[n - 1 - i] = w / 2.0;
    }
    (nodes, weights)
}

/// Integrates a vector-valued function over the unit square.
fn integrate<const K: usize>(order: usize, f: impl Fn(&[f64; 2]) -> [f64; K]) -> [f64; K] {
    let (x, w) = gauss_legendre(order);
    let mut out = [0.0; K];
    for (x1, w1) in x.iter().zip(&w) {
        for (x2, w2) in x.iter().zip(&w) {
            let v = f(&[*x1, *x2]);
            for (o, v) in out.iter_mut().zip(v) {
                *o += w1 * w2 * v;
            }
        }
    }
    out
}

fn refine<const K: usize>(f: impl Fn(&[f64; 2]) -> [f64; K] + Copy) -> ([f64; K], usize) {
    let mut prev = integrate(QUADRATURE_ORDERS[0], f);
    for &order in &QUADRATURE_ORDERS[1..] {
        let next = integrate(order, f);
        let diff = prev
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if diff < QUADRATURE_TOLERANCE {
            return (next, order);
        }
        prev = next;
    }
    (prev, *QUADRATURE_ORDERS.last().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueEffects {
    /// Total, direct, indirect through `M1`, indirect through `M2`, covariant.
    pub effects: [f64; 5],
    /// `E Q̃_{a,M1×M2*}` and `E Q̃_{a,M1*×M2*}`; their ratio is the
    /// ratio-scale indirect effect through `M1`.
    pub ratio_components: [f64; 2],
    pub quadrature_order: usize,
}

impl TrueEffects {
    pub fn ratio(&self) -> f64 {
        self.ratio_components[0] / self.ratio_components[1]
    }
}

fn require_pair(cfg: &DgpConfig) -> Result<()> {
    if cfg.mediator_count() != 2 {
        return Err(Error::MediatorCount {
            expected: 2,
            found: cfg.mediator_count(),
        });
    }
    Ok(())
}

/// True effects of the two-mediator design.
pub fn true_effects(cfg: &DgpConfig) -> Result<TrueEffects> {
    cfg.validate()?;
    require_pair(cfg)?;
    let nuis = AnalyticNuisance::truth(cfg);
    let (v, order) = refine(|c: &[f64; 2]| {
        let m = SubjectMarginals::from_cell(&nuis.pair(c));
        let [t, d, m1, m2] = m.contrasts();
        [t, d, m1, m2, m.m1_treated_m2_control, m.both_control]
    });
    Ok(TrueEffects {
        effects: [v[0], v[1], v[2], v[3], v[0] - v[1] - v[2] - v[3]],
        ratio_components: [v[4], v[5]],
        quadrature_order: order,
    })
}

/// True direct effect followed by the indirect effect through each
/// mediator, for any number of mediators.
pub fn true_multi_effects(cfg: &DgpConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let t = cfg.mediator_count();
    let nuis = AnalyticNuisance::truth(cfg);
    // Quadrature over a fixed-size array, so go one effect at a time.
    let mut out = Vec::with_capacity(t + 1);
    out.push(refine(|c: &[f64; 2]| [direct_plugin(&nuis.cell(c))]).0[0]);
    for s in 0..t {
        out.push(
            refine(|c: &[f64; 2]| {
                let p = indirect_pieces(&nuis.cell(c), s, &vec![0; t]);
                [p.psi1 - p.psi2]
            })
            .0[0],
        );
    }
    Ok(out)
}

/// `E[D(O)]` of the five influence functions at `psi`, with `O` drawn from
/// the true law and the functions built from `nuisances`, for the
/// two-mediator design.
fn expected_eif(
    cfg: &DgpConfig,
    nuisances: &dyn NuisanceBundle,
    psi: [f64; 5],
    c: &[f64; 2],
) -> [f64; 5] {
    let truth = AnalyticNuisance::truth(cfg).pair(c);
    let cell: CellNuisance = nuisances.pair(c);
    let marg = SubjectMarginals::from_cell(&cell);
    let g_true = [1.0 - cfg.propensity(c), cfg.propensity(c)];
    let mut out = [0.0; 5];
    for arm in [CONTROL, TREATED] {
        for k1 in 0..truth.n1 {
            for k2 in 0..truth.n2 {
                let idx = truth.idx(k1, k2);
                let w = g_true[arm] * truth.joint[arm][idx];
                // The functions are affine in y, so the conditional mean
                // stands in for the Bernoulli outcome.
                let o = Observation {
                    c,
                    a: arm as u8,
                    k1,
                    k2,
                    y: truth.qbar[arm][idx],
                };
                let d = eif_row(&cell, &marg, &o, &psi);
                for (s, v) in out.iter_mut().zip(d) {
                    *s += w * v;
                }
            }
        }
    }
    out
}

/// Large-sample bias of the one-step estimator when only the components in
/// `correct` are right: `E[plug-in + D]` minus the truth.
pub fn population_bias(
    cfg: &DgpConfig,
    correct: NuisanceSet,
    corruption: Corruption,
) -> Result<[f64; 5]> {
    require_pair(cfg)?;
    let truth = true_effects(cfg)?;
    let nuis = AnalyticNuisance::corrupted(cfg, correct, corruption);
    let (v, _) = refine(|c: &[f64; 2]| expected_eif(cfg, &nuis, [0.0; 5], c));
    Ok(std::array::from_fn(|k| v[k] - truth.effects[k]))
}

/// Population mean of each influence function at the true law and true
/// effects; zero up to quadrature and rounding error.
pub fn eif_population_mean(cfg: &DgpConfig) -> Result<[f64; 5]> {
    require_pair(cfg)?;
    let truth = true_effects(cfg)?;
    let nuis = AnalyticNuisance::truth(cfg);
    Ok(refine(|c: &[f64; 2]| expected_eif(cfg, &nuis, truth.effects, c)).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_is_exact_for_polynomials() {
        for order in [1, 2, 5, 8, 16, 64] {
            let (x, w) = gauss_legendre(order);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13, "order {order}");
            let deg = 2 * order - 1;
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!(
                (m - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13,
                "order {order}"
            );
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn null_design_has_no_effects() {
        let mut cfg = DgpConfig::new(1, 0);
        cfg.coefficients = cfg.coefficients.clone().null();
        let t = true_effects(&cfg).unwrap();
        for e in t.effects {
            assert!(e.abs() < 1e-15);
        }
    }

    #[test]
    fn influence_functions_are_mean_zero_at_truth() {
        let m = eif_population_mean(&DgpConfig::new(1, 0)).unwrap();
        for v in m {
            assert!(v.abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn multi_oracle_matches_pair_oracle() {
        let cfg = DgpConfig::new(1, 0);
        let pair = true_effects(&cfg).unwrap();
        let multi = true_multi_effects(&cfg).unwrap();
        for (a, b) in multi.iter().zip(&pair.effects[1..4]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_correct_has_no_bias() {
        let b = population_bias(
            &DgpConfig::new(1, 0),
            NuisanceSet::ALL,
            Corruption::default(),
        )
        .unwrap();
        for v in b {
            assert!(v.abs() < 1e-12);
        }
    }
}
