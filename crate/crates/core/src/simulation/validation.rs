//! Simulation-based checks of the influence functions and a saturated
//! discrete problem for fixed-point checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{validate_dataset, ObservationTable, OutcomeBounds, RawDataset, SupportSpec};
use crate::eif::{eif_row_signed, Observation, EFFECT_NAMES};
use crate::error::Result;
use crate::functionals::SubjectMarginals;
use crate::multimediator::{direct_eif_row, direct_plugin, indirect_eif_row, indirect_pieces};
use crate::nuisance::NuisanceBundle;

use super::dgp::{draw_dgp, AnalyticNuisance, Corruption, DgpConfig, NuisanceSet};
use super::oracle::{true_effects, true_multi_effects};

const CHUNK: usize = 50_000;
/// Streams at and above this offset are reserved for the checks here.
const STREAM_BASE: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanCheck {
    pub labels: Vec<String>,
    pub draws: usize,
    pub means: Vec<f64>,
    /// Monte Carlo standard errors of `means`.
    pub mcse: Vec<f64>,
}

impl MeanCheck {
    /// Largest `|mean| / mcse` over the functions checked.
    pub fn max_z(&self) -> f64 {
        self.means
            .iter()
            .zip(&self.mcse)
            .fold(0.0f64, |m, (a, s)| m.max(a.abs() / s))
    }

    pub fn passes(&self, z: f64) -> bool {
        self.max_z() <= z
    }
}

/// Streams `draws` observations in chunks and accumulates sums and sums of
/// squares of `f`, in chunk order.
fn stream_means(
    base: &DgpConfig,
    draws: usize,
    k: usize,
    f: impl Fn(&ObservationTable, usize, &mut [f64]) + Sync,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let n = CHUNK.min(draws - j * CHUNK);
            let mut cfg = base.clone();
            cfg.n = n;
            cfg.stream = STREAM_BASE | j as u64;
            let table = draw_dgp(&cfg)?;
            let (mut s, mut ss) = (vec![0.0; k], vec![0.0; k]);
            let mut v = vec![0.0; k];
            for i in 0..n {
                f(&table, i, &mut v);
                for q in 0..k {
                    s[q] += v[q];
                    ss[q] += v[q] * v[q];
                }
            }
            Ok((s, ss))
        })
        .collect::<Result<_>>()?;
    let (mut s, mut ss) = (vec![0.0; k], vec![0.0; k]);
    for (a, b) in parts {
        for q in 0..k {
            s[q] += a[q];
            ss[q] += b[q];
        }
    }
    let n = draws as f64;
    let means: Vec<f64> = s.iter().map(|v| v / n).collect();
    let mcse = means
        .iter()
        .zip(&ss)
        .map(|(m, q)| ((q / n - m * m).max(0.0) / n).sqrt())
        .collect();
    Ok((means, mcse))
}

/// Mean over simulated observations of the five influence functions built
/// from nuisances where only `correct` is right, centred at the true
/// effects. With every nuisance correct this is the mean-zero property;
/// otherwise it estimates the large-sample one-step bias.
///
/// `residual_sign` other than `1.0` deliberately breaks the functions.
pub fn eif_mean_check(
    draws: usize,
    seed: u64,
    correct: NuisanceSet,
    residual_sign: f64,
) -> Result<MeanCheck> {
    let base = DgpConfig::new(1, seed);
    let truth = true_effects(&base)?.effects;
    let nuis = AnalyticNuisance::corrupted(&base, correct, Corruption::default());
    let (means, mcse) = stream_means(&base, draws, 5, |t, i, out| {
        let o = Observation::from_table(t, i);
        let cell = nuis.pair(o.c);
        let marg = SubjectMarginals::from_cell(&cell);
        out.copy_from_slice(&eif_row_signed(&cell, &marg, &o, &truth, residual_sign));
    })?;
    Ok(MeanCheck {
        labels: EFFECT_NAMES.iter().map(|s| s.to_string()).collect(),
        draws,
        means,
        mcse,
    })
}

/// Mean-zero check of the direct and per-mediator indirect influence
/// functions with `t` mediators, at the true law.
pub fn multi_eif_mean_check(draws: usize, seed: u64, t: usize) -> Result<MeanCheck> {
    let base = DgpConfig::new(1, seed).with_mediators(t)?;
    let truth = true_multi_effects(&base)?;
    let nuis = AnalyticNuisance::truth(&base);
    let (means, mcse) = stream_means(&base, draws, t + 1, |tab, i, out| {
        let cell = nuis.cell(tab.covariates(i));
        let ks: Vec<usize> = (0..t).map(|j| tab.mediator(i, j)).collect();
        let (a, y) = (tab.treatment(i), tab.outcome(i));
        out[0] = direct_eif_row(&cell, a, &ks, y, direct_plugin(&cell), truth[0]);
        for s in 0..t {
            let p = indirect_pieces(&cell, s, &ks);
            out[s + 1] = indirect_eif_row(&cell, s, a, &ks, y, &p, truth[s + 1]);
        }
    })?;
    let mut labels = vec!["direct".to_string()];
    labels.extend((1..=t).map(|s| format!("indirect_m{s}")));
    Ok(MeanCheck {
        labels,
        draws,
        means,
        mcse,
    })
}

/// A single confounder level, binary mediators and a continuous outcome in
/// `[0, 1]`; the first eight rows cover every (arm, m1, m2) cell.
pub fn saturated_table(n: usize, seed: u64) -> Result<ObservationTable> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut a, mut m1, mut m2, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let (ai, k1, k2) = if i < 8 {
            ((i / 4) as f64, ((i / 2) % 2) as f64, (i % 2) as f64)
        } else {
            let ai = f64::from(u8::from(rng.gen::<f64>() < 0.45));
            let k1 = f64::from(u8::from(rng.gen::<f64>() < 0.3 + 0.3 * ai));
            let k2 = f64::from(u8::from(rng.gen::<f64>() < 0.4 + 0.2 * k1));
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
    validate_dataset(&raw, &SupportSpec::Infer, OutcomeBounds::Declared(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correct_functions_are_mean_zero_and_flipped_ones_are_not() {
        let ok = eif_mean_check(100_000, 5, NuisanceSet::ALL, 1.0).unwrap();
        assert!(ok.passes(3.5), "{ok:?}");
        // With the outcome regression wrong, the residual terms must
        // cancel its bias; a flipped sign doubles it instead.
        let mut g_only = NuisanceSet::ALL;
        g_only.qbar_a = false;
        g_only.qbar_star = false;
        let fixed = eif_mean_check(100_000, 5, g_only, 1.0).unwrap();
        assert!(fixed.passes(3.5), "{fixed:?}");
        let broken = eif_mean_check(100_000, 5, g_only, -1.0).unwrap();
        assert!(!broken.passes(3.0), "{broken:?}");
    }

    #[test]
    fn three_mediator_functions_are_mean_zero() {
        let c = multi_eif_mean_check(100_000, 8, 3).unwrap();
        assert_eq!(c.labels.len(), 4);
        assert!(c.passes(3.5), "{c:?}");
    }
}
