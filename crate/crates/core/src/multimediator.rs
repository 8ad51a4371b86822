//! One-step estimators of the direct effect and the indirect effect through
//! each mediator when there are `t >= 2` mediators.
//!
//! For the indirect effect through `M_s`, mediators before `s` follow their
//! marginal law under `a` and mediators after `s` their marginal law under
//! `a*`; the effect contrasts `M_s` under `a` against `M_s` under `a*`.

use serde::Serialize;

use crate::data::{ObservationTable, CONTROL, TREATED};
use crate::eif::normal_quantile;
use crate::error::{Error, Result};
use crate::nuisance::{MultiCellNuisance, NuisanceBundle};

pub const DEFAULT_CELL_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiMediatorSpec {
    pub t: usize,
    pub levels: Vec<usize>,
    /// Target mediator (1-based) for indirect effects.
    pub s: Option<usize>,
}

impl MultiMediatorSpec {
    pub fn from_table(table: &ObservationTable, s: Option<usize>) -> Result<Self> {
        let spec = Self {
            t: table.mediator_count(),
            levels: table.support().level_counts(),
            s,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 || self.levels.len() != self.t {
            return Err(Error::InvalidSpec(format!(
                "need at least two mediators, got {}",
                self.t
            )));
        }
        if let Some(s) = self.s {
            if s == 0 || s > self.t {
                return Err(Error::InvalidSpec(format!(
                    "target mediator {s} outside 1..={}",
                    self.t
                )));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.levels
            .iter()
            .try_fold(1usize, |acc, &l| acc.checked_mul(l))
            .unwrap_or(usize::MAX)
    }
}

/// One effect with Wald inference on the original outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiEstimate {
    pub label: String,
    pub estimate: f64,
    pub plugin: f64,
    pub se: f64,
    pub ci: (f64, f64),
    /// Influence-function values on the unit outcome scale, centred at the
    /// one-step estimate.
    #[serde(skip)]
    pub eif: Vec<f64>,
}

fn check_cap(table: &ObservationTable, cap: usize) -> Result<()> {
    let cells = MultiMediatorSpec {
        t: table.mediator_count(),
        levels: table.support().level_counts(),
        s: None,
    }
    .cells();
    if cells > cap {
        return Err(Error::CellCapExceeded { cells, cap });
    }
    Ok(())
}

fn observed(table: &ObservationTable, i: usize) -> Vec<usize> {
    (0..table.mediator_count())
        .map(|j| table.mediator(i, j))
        .collect()
}

/// Decodes a flat cell index into level indices.
fn decode(levels: &[usize], mut idx: usize, out: &mut [usize]) {
    for j in (0..levels.len()).rev() {
        out[j] = idx % levels[j];
        idx /= levels[j];
    }
}

/// Direct-effect plug-in `∫ (Q̄_a - Q̄_{a*}) dQ_{a*,M_{1:t}}` at one subject.
pub fn direct_plugin(cell: &MultiCellNuisance) -> f64 {
    (0..cell.cells())
        .map(|k| (cell.qbar[TREATED][k] - cell.qbar[CONTROL][k]) * cell.joint[CONTROL][k])
        .sum()
}

pub fn direct_eif_row(
    cell: &MultiCellNuisance,
    a: u8,
    ks: &[usize],
    y: f64,
    delta: f64,
    psi: f64,
) -> f64 {
    let k = cell.index(ks);
    let (qa, qs) = (cell.qbar[TREATED][k], cell.qbar[CONTROL][k]);
    if a == 1 {
        let r = cell.joint[CONTROL][k] / cell.joint[TREATED][k];
        r * (y - qa) / cell.g[TREATED] + delta - psi
    } else {
        let ws = 1.0 / cell.g[CONTROL];
        -ws * (y - qs) + ws * (qa - qs - delta) + delta - psi
    }
}

/// Per-subject pieces of the indirect effect through mediator `s`
/// (0-based here).
#[derive(Debug, Clone, PartialEq)]
pub struct IndirectPieces {
    /// `Ψ1`: `M_s` under `a`.
    pub psi1: f64,
    /// `Ψ2`: `M_s` under `a*`.
    pub psi2: f64,
    /// `Q̄_a` integrated over every mediator except `u` under the `Ψ1` and
    /// `Ψ2` measures, evaluated at the observed `m_u`.
    pub partial1: Vec<f64>,
    pub partial2: Vec<f64>,
    /// Density ratio `(Π P1 - Π P2) / q_{a,M_{1:t}}` at the observed cell.
    pub ratio: f64,
}

fn arm_for(u: usize, s: usize, first: bool) -> usize {
    if u < s || (u == s && first) {
        TREATED
    } else {
        CONTROL
    }
}

pub fn indirect_pieces(cell: &MultiCellNuisance, s: usize, ks: &[usize]) -> IndirectPieces {
    let t = cell.mediator_count();
    let arms1: Vec<usize> = (0..t).map(|u| arm_for(u, s, true)).collect();
    let arms2: Vec<usize> = (0..t).map(|u| arm_for(u, s, false)).collect();
    let mut psi1 = 0.0;
    let mut psi2 = 0.0;
    let mut partial1 = vec![0.0; t];
    let mut partial2 = vec![0.0; t];
    let mut cur = vec![0; t];
    let mut p1 = vec![0.0; t];
    let mut p2 = vec![0.0; t];
    for k in 0..cell.cells() {
        decode(&cell.levels, k, &mut cur);
        for u in 0..t {
            p1[u] = cell.marginals[arms1[u]][u][cur[u]];
            p2[u] = cell.marginals[arms2[u]][u][cur[u]];
        }
        let q = cell.qbar[TREATED][k];
        psi1 += q * p1.iter().product::<f64>();
        psi2 += q * p2.iter().product::<f64>();
        for u in 0..t {
            if cur[u] == ks[u] {
                let (mut e1, mut e2) = (q, q);
                for w in (0..t).filter(|&w| w != u) {
                    e1 *= p1[w];
                    e2 *= p2[w];
                }
                partial1[u] += e1;
                partial2[u] += e2;
            }
        }
    }
    let k = cell.index(ks);
    let (mut o1, mut o2) = (1.0, 1.0);
    for u in 0..t {
        o1 *= cell.marginals[arms1[u]][u][ks[u]];
        o2 *= cell.marginals[arms2[u]][u][ks[u]];
    }
    IndirectPieces {
        psi1,
        psi2,
        partial1,
        partial2,
        ratio: (o1 - o2) / cell.joint[TREATED][k],
    }
}

/// Influence function of the indirect effect through mediator `s`
/// (0-based) at one observation.
pub fn indirect_eif_row(
    cell: &MultiCellNuisance,
    s: usize,
    a: u8,
    ks: &[usize],
    y: f64,
    pieces: &IndirectPieces,
    psi: f64,
) -> f64 {
    let t = cell.mediator_count();
    let (wa, ws) = if a == 1 {
        (1.0 / cell.g[TREATED], 0.0)
    } else {
        (0.0, 1.0 / cell.g[CONTROL])
    };
    let diff = pieces.psi1 - pieces.psi2;
    let mut d = diff - psi;
    if a == 1 {
        d += wa * pieces.ratio * (y - cell.qbar[TREATED][cell.index(ks)]);
    }
    // Both measures share every factor except `s`, so the two partial
    // surfaces over the others coincide.
    let ss = pieces.partial1[s];
    d += wa * (ss - pieces.psi1) - ws * (ss - pieces.psi2);
    for u in 0..t {
        let w = if u < s {
            wa
        } else if u > s {
            ws
        } else {
            continue;
        };
        d += w * (pieces.partial1[u] - pieces.partial2[u] - diff);
    }
    d
}

fn finish(
    label: String,
    table: &ObservationTable,
    plugin: f64,
    rows: Vec<f64>,
    alpha: f64,
) -> Result<MultiEstimate> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = rows.iter().sum::<f64>() / nf;
    let est = plugin + mean;
    let eif: Vec<f64> = rows.iter().map(|r| r - mean).collect();
    let var = eif.iter().map(|v| v * v).sum::<f64>() / nf;
    let range = table.outcome_scale().range();
    let se = range * (var / nf).sqrt();
    let z = normal_quantile(alpha);
    let estimate = est * range;
    Ok(MultiEstimate {
        label,
        estimate,
        plugin: plugin * range,
        se,
        ci: (estimate - z * se, estimate + z * se),
        eif,
    })
}

fn cells_for(
    nuisances: &dyn NuisanceBundle,
    table: &ObservationTable,
) -> Result<Vec<MultiCellNuisance>> {
    let cells: Vec<MultiCellNuisance> = (0..table.len())
        .map(|i| nuisances.cell(table.covariates(i)))
        .collect();
    if let Some(c) = cells.first() {
        if c.mediator_count() != table.mediator_count() {
            return Err(Error::MediatorCount {
                expected: table.mediator_count(),
                found: c.mediator_count(),
            });
        }
    }
    Ok(cells)
}

pub fn onestep_multi_direct(
    nuisances: &dyn NuisanceBundle,
    table: &ObservationTable,
    alpha: f64,
    cell_cap: usize,
) -> Result<MultiEstimate> {
    MultiMediatorSpec::from_table(table, None)?;
    check_cap(table, cell_cap)?;
    let cells = cells_for(nuisances, table)?;
    let deltas: Vec<f64> = cells.iter().map(direct_plugin).collect();
    let plugin = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let rows = (0..table.len())
        .map(|i| {
            direct_eif_row(
                &cells[i],
                table.treatment(i),
                &observed(table, i),
                table.outcome(i),
                deltas[i],
                plugin,
            )
        })
        .collect();
    finish("direct".into(), table, plugin, rows, alpha)
}

/// `s` is 1-based.
pub fn onestep_multi_indirect(
    nuisances: &dyn NuisanceBundle,
    s: usize,
    table: &ObservationTable,
    alpha: f64,
    cell_cap: usize,
) -> Result<MultiEstimate> {
    MultiMediatorSpec::from_table(table, Some(s))?;
    check_cap(table, cell_cap)?;
    let cells = cells_for(nuisances, table)?;
    let pieces: Vec<IndirectPieces> = (0..table.len())
        .map(|i| indirect_pieces(&cells[i], s - 1, &observed(table, i)))
        .collect();
    let plugin = pieces.iter().map(|p| p.psi1 - p.psi2).sum::<f64>() / pieces.len() as f64;
    let rows = (0..table.len())
        .map(|i| {
            indirect_eif_row(
                &cells[i],
                s - 1,
                table.treatment(i),
                &observed(table, i),
                table.outcome(i),
                &pieces[i],
                plugin,
            )
        })
        .collect();
    finish(format!("indirect_m{s}"), table, plugin, rows, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, OutcomeBounds, RawDataset, SupportSpec};
    use crate::estimators::{onestep, EstimateOptions};
    use crate::learners::expit;
    use crate::nuisance::{fit_nuisances, NuisanceConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn table(n: usize, t: usize, seed: u64) -> ObservationTable {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut c = Vec::new();
        let mut a = Vec::new();
        let mut m = vec![Vec::new(); t];
        let mut y = Vec::new();
        for _ in 0..n {
            let ci: f64 = rng.gen();
            let ai = f64::from(rng.gen::<f64>() < expit(-0.3 + ci));
            let mut lin = -1.0 + ci + 0.5 * ai;
            for (j, col) in m.iter_mut().enumerate() {
                let k = (0..2)
                    .filter(|_| rng.gen::<f64>() < 0.3 + 0.1 * j as f64 + 0.2 * ai)
                    .count() as f64;
                lin += 0.3 * k;
                col.push(k);
            }
            c.push(ci);
            a.push(ai);
            y.push(f64::from(rng.gen::<f64>() < expit(lin)));
        }
        let raw = RawDataset {
            covariate_names: vec!["c".into()],
            covariates: vec![c],
            treatment: a,
            mediator_names: (1..=t).map(|j| format!("m{j}")).collect(),
            mediators: m,
            outcome: y,
        };
        validate_dataset(&raw, &SupportSpec::Infer, OutcomeBounds::Declared(0.0, 1.0)).unwrap()
    }

    #[test]
    fn two_mediators_reduce_to_pair_module() {
        let t = table(400, 2, 4);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        let pair = onestep(&f, &t, &EstimateOptions::default()).unwrap();
        let d = onestep_multi_direct(&f, &t, 0.05, DEFAULT_CELL_CAP).unwrap();
        let i1 = onestep_multi_indirect(&f, 1, &t, 0.05, DEFAULT_CELL_CAP).unwrap();
        let i2 = onestep_multi_indirect(&f, 2, &t, 0.05, DEFAULT_CELL_CAP).unwrap();
        for (k, m) in [(1, &d), (2, &i1), (3, &i2)] {
            assert!(
                (pair.report.estimates[k] - m.estimate).abs() <= 1e-12,
                "{k}"
            );
            assert!((pair.report.se[k] - m.se).abs() <= 1e-12, "{k}");
            for (r, v) in pair.eifs.rows.iter().zip(&m.eif) {
                assert!((r[k] - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cell_cap_and_target_checked() {
        let t = table(100, 3, 1);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        assert!(matches!(
            onestep_multi_direct(&f, &t, 0.05, 10),
            Err(Error::CellCapExceeded { cells: 27, cap: 10 })
        ));
        assert!(matches!(
            onestep_multi_indirect(&f, 4, &t, 0.05, DEFAULT_CELL_CAP),
            Err(Error::InvalidSpec(_))
        ));
        assert!(onestep_multi_indirect(&f, 3, &t, 0.05, DEFAULT_CELL_CAP).is_ok());
    }

    /// With three mediators the indirect effects plus the direct effect
    /// need not add to anything simple, but each must be mean-zero at its
    /// own plug-in after correction.
    #[test]
    fn eif_centred_at_onestep() {
        let t = table(300, 3, 2);
        let f = fit_nuisances(&t, &NuisanceConfig::default()).unwrap();
        for s in 1..=3 {
            let e = onestep_multi_indirect(&f, s, &t, 0.05, DEFAULT_CELL_CAP).unwrap();
            assert!(e.eif.iter().sum::<f64>().abs() < 1e-10);
            assert!(e.ci.0 < e.estimate && e.estimate < e.ci.1);
        }
    }
}
