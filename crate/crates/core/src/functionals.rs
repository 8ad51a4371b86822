//! The outcome regression integrated over mediator laws (the `Q̃` family)
//! and the plug-in effect estimates built from it.

use serde::Serialize;

use crate::data::{CONTROL, TREATED};
use crate::nuisance::CellNuisance;

/// Mediator law used to integrate `Q̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Joint law of `(M1, M2)` under the given arm.
    Joint(usize),
    /// Product of the `M1` marginal under the first arm and the `M2`
    /// marginal under the second.
    Product(usize, usize),
}

/// `Σ_{m1,m2} Q̄_arm(m1, m2, c) · mass(m1, m2)`.
pub fn marginalize_outcome_regression(cell: &CellNuisance, arm: usize, measure: Measure) -> f64 {
    let q = &cell.qbar[arm];
    match measure {
        Measure::Joint(b) => q.iter().zip(&cell.joint[b]).map(|(x, p)| x * p).sum(),
        Measure::Product(b1, b2) => {
            let p1 = &cell.m1[b1];
            let p2 = &cell.m2[b2];
            let mut s = 0.0;
            for k2 in 0..cell.n2 {
                let mut inner = 0.0;
                for k1 in 0..cell.n1 {
                    inner += q[cell.idx(k1, k2)] * p1[k1];
                }
                s += inner * p2[k2];
            }
            s
        }
    }
}

/// `Q̃_{a, M1(b)}(m2, c) = Σ_{m1} Q̄_a(m1, m2, c) q_{b,M1}(m1 | c)`, over `m2`.
pub fn surface_over_m1(cell: &CellNuisance, b: usize) -> Vec<f64> {
    let q = &cell.qbar[TREATED];
    (0..cell.n2)
        .map(|k2| {
            (0..cell.n1)
                .map(|k1| q[cell.idx(k1, k2)] * cell.m1[b][k1])
                .sum()
        })
        .collect()
}

/// `Q̃_{a, M2(b)}(m1, c) = Σ_{m2} Q̄_a(m1, m2, c) q_{b,M2}(m2 | c)`, over `m1`.
pub fn surface_over_m2(cell: &CellNuisance, b: usize) -> Vec<f64> {
    let q = &cell.qbar[TREATED];
    (0..cell.n1)
        .map(|k1| {
            (0..cell.n2)
                .map(|k2| q[cell.idx(k1, k2)] * cell.m2[b][k2])
                .sum()
        })
        .collect()
}

/// The `Q̃` family at one subject's confounders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectMarginals {
    /// `Q̃_{a,M1,M2}`: `Q̄_a` under the joint law at `a`.
    pub treated_joint: f64,
    /// `Q̃_{a*,M1*,M2*}`.
    pub control_joint: f64,
    /// `Q̃_{a,M1*,M2*}`: `Q̄_a` under the joint law at `a*`.
    pub cross_joint: f64,
    /// `Q̃_{a,M1×M2*}`.
    pub m1_treated_m2_control: f64,
    /// `Q̃_{a,M1*×M2*}`.
    pub both_control: f64,
    /// `Q̃_{a,M1×M2}`.
    pub both_treated: f64,
    /// Direct-effect contrast `Q̃_{a,M1*,M2*} − Q̃_{a*,M1*,M2*}`; targeting
    /// replaces it as a whole.
    pub direct_contrast: f64,
    /// `Q̃_{a,M1}(m2)`.
    pub over_m1_treated: Vec<f64>,
    /// `Q̃_{a,M1*}(m2)`.
    pub over_m1_control: Vec<f64>,
    /// `Q̃_{a,M2}(m1)`.
    pub over_m2_treated: Vec<f64>,
    /// `Q̃_{a,M2*}(m1)`.
    pub over_m2_control: Vec<f64>,
}

impl SubjectMarginals {
    pub fn from_cell(cell: &CellNuisance) -> Self {
        let over_m1_treated = surface_over_m1(cell, TREATED);
        let over_m1_control = surface_over_m1(cell, CONTROL);
        let over_m2_treated = surface_over_m2(cell, TREATED);
        let over_m2_control = surface_over_m2(cell, CONTROL);
        let dot = |s: &[f64], p: &[f64]| s.iter().zip(p).map(|(x, y)| x * y).sum::<f64>();
        let treated_joint = marginalize_outcome_regression(cell, TREATED, Measure::Joint(TREATED));
        let control_joint = marginalize_outcome_regression(cell, CONTROL, Measure::Joint(CONTROL));
        let cross_joint = marginalize_outcome_regression(cell, TREATED, Measure::Joint(CONTROL));
        Self {
            treated_joint,
            control_joint,
            cross_joint,
            m1_treated_m2_control: dot(&over_m1_treated, &cell.m2[CONTROL]),
            both_control: dot(&over_m1_control, &cell.m2[CONTROL]),
            both_treated: dot(&over_m1_treated, &cell.m2[TREATED]),
            direct_contrast: cross_joint - control_joint,
            over_m1_treated,
            over_m1_control,
            over_m2_treated,
            over_m2_control,
        }
    }

    /// Per-subject contributions `(total, direct, m1, m2)`.
    pub fn contrasts(&self) -> [f64; 4] {
        [
            self.treated_joint - self.control_joint,
            self.direct_contrast,
            self.m1_treated_m2_control - self.both_control,
            self.both_treated - self.m1_treated_m2_control,
        ]
    }
}

/// Per-subject `Q̃` values for a whole table.
pub type MarginalizedRegressions = Vec<SubjectMarginals>;

/// Effects in the fixed order total, direct, indirect via M1, indirect via
/// M2, covariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PluginEffects {
    pub total: f64,
    pub direct: f64,
    pub indirect_m1: f64,
    pub indirect_m2: f64,
    pub covariant: f64,
}

impl PluginEffects {
    /// Covariant effect filled in by subtraction.
    pub fn from_parts(total: f64, direct: f64, indirect_m1: f64, indirect_m2: f64) -> Self {
        Self {
            total,
            direct,
            indirect_m1,
            indirect_m2,
            covariant: total - direct - indirect_m1 - indirect_m2,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.total,
            self.direct,
            self.indirect_m1,
            self.indirect_m2,
            self.covariant,
        ]
    }
}

pub fn plugin_effects(marginalized: &[SubjectMarginals]) -> PluginEffects {
    let n = marginalized.len() as f64;
    let mut sums = [0.0; 4];
    for m in marginalized {
        for (s, v) in sums.iter_mut().zip(m.contrasts()) {
            *s += v;
        }
    }
    PluginEffects::from_parts(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cell(
        qa: Vec<f64>,
        qs: Vec<f64>,
        j1: Vec<f64>,
        j0: Vec<f64>,
        n1: usize,
        n2: usize,
    ) -> CellNuisance {
        let marg = |j: &[f64]| {
            let mut m1 = vec![0.0; n1];
            let mut m2 = vec![0.0; n2];
            for k1 in 0..n1 {
                for k2 in 0..n2 {
                    m1[k1] += j[k1 * n2 + k2];
                    m2[k2] += j[k1 * n2 + k2];
                }
            }
            (m1, m2)
        };
        let (a1, a2) = marg(&j1);
        let (s1, s2) = marg(&j0);
        CellNuisance {
            n1,
            n2,
            g: [0.5, 0.5],
            qbar: [qs, qa],
            joint: [j0, j1],
            m1: [s1, a1],
            m2: [s2, a2],
        }
    }

    #[test]
    fn constant_regression_gives_constant_marginals() {
        let c = cell(
            vec![0.7; 4],
            vec![0.7; 4],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.3, 0.2, 0.1],
            2,
            2,
        );
        let s = SubjectMarginals::from_cell(&c);
        for v in [
            s.treated_joint,
            s.control_joint,
            s.cross_joint,
            s.m1_treated_m2_control,
            s.both_control,
            s.both_treated,
        ] {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-15);
        }
    }

    #[test]
    fn diagonal_regression_and_dependence_gap() {
        let diag = vec![1.0, 0.0, 0.0, 1.0];
        let uniform = cell(
            diag.clone(),
            diag.clone(),
            vec![0.25; 4],
            vec![0.25; 4],
            2,
            2,
        );
        assert_abs_diff_eq!(
            marginalize_outcome_regression(&uniform, TREATED, Measure::Joint(TREATED)),
            0.5,
            epsilon = 1e-15
        );
        let concentrated = cell(
            diag.clone(),
            diag,
            vec![0.5, 0.0, 0.0, 0.5],
            vec![0.5, 0.0, 0.0, 0.5],
            2,
            2,
        );
        assert_abs_diff_eq!(
            marginalize_outcome_regression(&concentrated, TREATED, Measure::Joint(TREATED)),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            marginalize_outcome_regression(
                &concentrated,
                TREATED,
                Measure::Product(TREATED, TREATED)
            ),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn null_world_has_no_effects() {
        let q = vec![0.2, 0.5, 0.4, 0.9];
        let j = vec![0.1, 0.2, 0.3, 0.4];
        let c = cell(q.clone(), q, j.clone(), j, 2, 2);
        let s = SubjectMarginals::from_cell(&c);
        let e = plugin_effects(&[s.clone(), s]);
        for v in e.to_array() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    fn arb_cell() -> impl Strategy<Value = CellNuisance> {
        (2usize..5, 2usize..5).prop_flat_map(|(n1, n2)| {
            let k = n1 * n2;
            (
                proptest::collection::vec(0.0f64..1.0, k),
                proptest::collection::vec(0.0f64..1.0, k),
                proptest::collection::vec(0.01f64..1.0, k),
                proptest::collection::vec(0.01f64..1.0, k),
            )
                .prop_map(move |(qa, qs, mut j1, mut j0)| {
                    let s1: f64 = j1.iter().sum();
                    let s0: f64 = j0.iter().sum();
                    j1.iter_mut().for_each(|v| *v /= s1);
                    j0.iter_mut().for_each(|v| *v /= s0);
                    cell(qa, qs, j1, j0, n1, n2)
                })
        })
    }

    proptest! {
        #[test]
        fn fubini_and_convexity(c in arb_cell()) {
            let s = SubjectMarginals::from_cell(&c);
            // Reverse summation order through the other partial surface.
            let x_rev: f64 = s.over_m2_control.iter().zip(&c.m1[TREATED]).map(|(a, b)| a * b).sum();
            prop_assert!((x_rev - s.m1_treated_m2_control).abs() <= 1e-12);
            let z_rev: f64 = s.over_m2_control.iter().zip(&c.m1[CONTROL]).map(|(a, b)| a * b).sum();
            prop_assert!((z_rev - s.both_control).abs() <= 1e-12);
            let w_rev: f64 = s.over_m2_treated.iter().zip(&c.m1[TREATED]).map(|(a, b)| a * b).sum();
            prop_assert!((w_rev - s.both_treated).abs() <= 1e-12);
            for v in [s.treated_joint, s.control_joint, s.cross_joint, s.m1_treated_m2_control, s.both_control, s.both_treated] {
                prop_assert!((-1e-15..=1.0 + 1e-15).contains(&v));
            }
        }

        #[test]
        fn shifting_regression_leaves_effects(c in arb_cell(), kappa in -0.5f64..0.5) {
            let base = plugin_effects(&[SubjectMarginals::from_cell(&c)]);
            let mut shifted = c.clone();
            for q in shifted.qbar.iter_mut() {
                q.iter_mut().for_each(|v| *v += kappa);
            }
            let s = SubjectMarginals::from_cell(&shifted);
            let o = SubjectMarginals::from_cell(&c);
            prop_assert!((s.both_treated - o.both_treated - kappa).abs() < 1e-12);
            let e = plugin_effects(&[s]);
            for (a, b) in base.to_array().iter().zip(e.to_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn decomposition_is_exact(c in arb_cell()) {
            let e = plugin_effects(&[SubjectMarginals::from_cell(&c)]);
            prop_assert_eq!(e.covariant, e.total - e.direct - e.indirect_m1 - e.indirect_m2);
        }
    }
}
