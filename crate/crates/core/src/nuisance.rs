//! Nuisance parameters: propensity score, outcome regression and mediator
//! densities, queried per confounder value.
//!
//! Arm index 1 is the active treatment `a`, index 0 the reference `a*`.

use std::collections::BTreeMap;

use crate::data::ObservationTable;
use crate::density::{
    floor_and_normalize, marginals_of, varying_columns, HazardFeatures, MediatorDensityModel,
    DEFAULT_DENSITY_FLOOR,
};
use crate::error::{Error, Result};
use crate::learners::{fit_learner, Design, FitSummary, LearnerSpec, Predictor};

/// Every nuisance value needed at one confounder value, for any number of
/// mediators. Cell vectors are row-major over level indices with mediator 1
/// most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCellNuisance {
    pub levels: Vec<usize>,
    /// `g[1] = P(A = a | c)`, `g[0] = 1 - g[1]`.
    pub g: [f64; 2],
    pub qbar: [Vec<f64>; 2],
    pub joint: [Vec<f64>; 2],
    pub marginals: [Vec<Vec<f64>>; 2],
}

impl MultiCellNuisance {
    pub fn mediator_count(&self) -> usize {
        self.levels.len()
    }

    pub fn cells(&self) -> usize {
        self.levels.iter().product()
    }

    /// Flat index of a vector of level indices.
    pub fn index(&self, ks: &[usize]) -> usize {
        ks.iter()
            .zip(&self.levels)
            .fold(0, |acc, (k, l)| acc * l + k)
    }

    pub fn from_pair(cell: &CellNuisance) -> Self {
        Self {
            levels: vec![cell.n1, cell.n2],
            g: cell.g,
            qbar: cell.qbar.clone(),
            joint: cell.joint.clone(),
            marginals: [
                vec![cell.m1[0].clone(), cell.m2[0].clone()],
                vec![cell.m1[1].clone(), cell.m2[1].clone()],
            ],
        }
    }
}

/// Two-mediator view of [`MultiCellNuisance`]; cells are indexed `k1 * n2 + k2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellNuisance {
    pub n1: usize,
    pub n2: usize,
    pub g: [f64; 2],
    pub qbar: [Vec<f64>; 2],
    pub joint: [Vec<f64>; 2],
    pub m1: [Vec<f64>; 2],
    pub m2: [Vec<f64>; 2],
}

impl CellNuisance {
    pub fn idx(&self, k1: usize, k2: usize) -> usize {
        k1 * self.n2 + k2
    }
}

impl TryFrom<MultiCellNuisance> for CellNuisance {
    type Error = Error;

    fn try_from(m: MultiCellNuisance) -> Result<Self> {
        if m.levels.len() != 2 {
            return Err(Error::MediatorCount {
                expected: 2,
                found: m.levels.len(),
            });
        }
        let [m0, m1] = m.marginals;
        let mut it0 = m0.into_iter();
        let mut it1 = m1.into_iter();
        let (c1, c2) = (it0.next().unwrap(), it0.next().unwrap());
        let (t1, t2) = (it1.next().unwrap(), it1.next().unwrap());
        Ok(Self {
            n1: m.levels[0],
            n2: m.levels[1],
            g: m.g,
            qbar: m.qbar,
            joint: m.joint,
            m1: [c1, t1],
            m2: [c2, t2],
        })
    }
}

/// Source of nuisance values at a confounder value.
pub trait NuisanceBundle: Sync {
    fn cell(&self, c: &[f64]) -> MultiCellNuisance;

    fn pair(&self, c: &[f64]) -> CellNuisance {
        CellNuisance::try_from(self.cell(c))
            .expect("two-mediator nuisance requested from a bundle with another mediator count")
    }

    fn diagnostics(&self) -> Vec<(String, FitSummary)> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceConfig {
    pub propensity: LearnerSpec,
    pub outcome: LearnerSpec,
    pub hazard: LearnerSpec,
    pub hazard_features: HazardFeatures,
    pub density_floor: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            propensity: LearnerSpec::default(),
            outcome: LearnerSpec::default(),
            hazard: LearnerSpec::default(),
            hazard_features: HazardFeatures::MainTerms,
            density_floor: DEFAULT_DENSITY_FLOOR,
        }
    }
}

/// Regression-based nuisance estimates.
#[derive(Debug)]
pub struct FittedNuisance {
    covariate_cols: Vec<usize>,
    level_values: Vec<Vec<f64>>,
    propensity: Box<dyn Predictor>,
    propensity_floor: f64,
    outcome: Box<dyn Predictor>,
    density: MediatorDensityModel,
}

pub fn fit_nuisances(table: &ObservationTable, config: &NuisanceConfig) -> Result<FittedNuisance> {
    config.propensity.validate()?;
    config.outcome.validate()?;
    config.hazard.validate()?;
    let n = table.len();
    let cols = varying_columns(table);
    let support = table.support();
    let t = table.mediator_count();
    let level_values: Vec<Vec<f64>> = (0..t)
        .map(|j| {
            (0..support.level_count(j))
                .map(|k| support.value(j, k))
                .collect()
        })
        .collect();

    let a: Vec<f64> = table.treatments().iter().map(|&v| f64::from(v)).collect();
    let ones = vec![1.0; n];
    let g_design = if cols.is_empty() {
        Design::empty(n)
    } else {
        let data = (0..n)
            .flat_map(|i| cols.iter().map(move |&k| (i, k)))
            .map(|(i, k)| table.covariates(i)[k])
            .collect();
        Design::new(
            data,
            cols.len(),
            cols.iter()
                .map(|&k| table.covariate_names()[k].clone())
                .collect(),
        )?
    };
    let g_spec = if cols.is_empty() {
        LearnerSpec {
            kind: crate::learners::LearnerKind::InterceptOnly,
            ..config.propensity.clone()
        }
    } else {
        config.propensity.clone()
    };
    let propensity = fit_learner(&g_design, &a, &ones, &g_spec)?;

    let width = cols.len() + 1 + t;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.extend(cols.iter().map(|&k| table.covariates(i)[k]));
        data.push(a[i]);
        data.extend((0..t).map(|j| level_values[j][table.mediator(i, j)]));
    }
    let mut names: Vec<String> = cols
        .iter()
        .map(|&k| table.covariate_names()[k].clone())
        .collect();
    names.push("a".into());
    names.extend(table.mediator_names().iter().cloned());
    let q_design = Design::new(data, width, names)?;
    let outcome = fit_learner(&q_design, table.outcomes(), &ones, &config.outcome)?;

    let density = MediatorDensityModel::fit(
        table,
        &config.hazard,
        config.hazard_features,
        config.density_floor,
    )?;
    Ok(FittedNuisance {
        covariate_cols: cols,
        level_values,
        propensity,
        propensity_floor: config.propensity.prediction_floor,
        outcome,
        density,
    })
}

impl FittedNuisance {
    pub fn density(&self) -> &MediatorDensityModel {
        &self.density
    }

    pub fn propensity(&self, c: &[f64]) -> f64 {
        let x: Vec<f64> = self.covariate_cols.iter().map(|&k| c[k]).collect();
        self.propensity
            .predict_row(&x)
            .clamp(self.propensity_floor, 1.0 - self.propensity_floor)
    }
}

impl NuisanceBundle for FittedNuisance {
    fn cell(&self, c: &[f64]) -> MultiCellNuisance {
        let levels: Vec<usize> = self.level_values.iter().map(Vec::len).collect();
        let t = levels.len();
        let g1 = self.propensity(c);
        let cells: usize = levels.iter().product();
        let mut row: Vec<f64> = self.covariate_cols.iter().map(|&k| c[k]).collect();
        let base = row.len();
        row.resize(base + 1 + t, 0.0);
        let mut qbar = [vec![0.0; cells], vec![0.0; cells]];
        for (a, q) in qbar.iter_mut().enumerate() {
            row[base] = a as f64;
            for (idx, slot) in q.iter_mut().enumerate() {
                let mut r = idx;
                for j in (0..t).rev() {
                    row[base + 1 + j] = self.level_values[j][r % levels[j]];
                    r /= levels[j];
                }
                *slot = self.outcome.predict_row(&row);
            }
        }
        let d0 = self.density.joint_and_marginals(0, c);
        let d1 = self.density.joint_and_marginals(1, c);
        MultiCellNuisance {
            levels,
            g: [1.0 - g1, g1],
            qbar,
            joint: [d0.joint, d1.joint],
            marginals: [d0.marginals, d1.marginals],
        }
    }

    fn diagnostics(&self) -> Vec<(String, FitSummary)> {
        let mut out = Vec::new();
        if let Some(s) = self.propensity.summary() {
            out.push(("propensity".to_string(), s));
        }
        if let Some(s) = self.outcome.summary() {
            out.push(("outcome_regression".to_string(), s));
        }
        for (j, f) in self.density.hazard_fits().iter().enumerate() {
            if let Some(s) = f.summary() {
                out.push((format!("hazard_m{}", j + 1), s));
            }
        }
        out
    }
}

/// Saturated (empirical-frequency) nuisances for discrete confounders.
///
/// Within each confounder stratum: `g` is the treated fraction, the joint
/// mediator law under each arm is the cell frequency, and `Q̄` the cell
/// mean of `Y`. Queries at an unseen confounder value fall back to the
/// pooled estimates.
#[derive(Debug, Clone)]
pub struct EmpiricalNuisance {
    strata: BTreeMap<Vec<u64>, MultiCellNuisance>,
    pooled: MultiCellNuisance,
}

fn key(c: &[f64]) -> Vec<u64> {
    c.iter().map(|v| v.to_bits()).collect()
}

impl EmpiricalNuisance {
    pub fn from_table(table: &ObservationTable) -> Result<Self> {
        let levels = table.support().level_counts();
        let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
        for i in 0..table.len() {
            groups.entry(key(table.covariates(i))).or_default().push(i);
        }
        let all: Vec<usize> = (0..table.len()).collect();
        let pooled = saturated(table, &levels, &all)?;
        let strata = groups
            .into_iter()
            .map(|(k, rows)| saturated(table, &levels, &rows).map(|cell| (k, cell)))
            .collect::<Result<_>>()?;
        Ok(Self { strata, pooled })
    }
}

fn saturated(
    table: &ObservationTable,
    levels: &[usize],
    rows: &[usize],
) -> Result<MultiCellNuisance> {
    let cells: usize = levels.iter().product();
    let t = levels.len();
    let mut count = [vec![0.0; cells], vec![0.0; cells]];
    let mut ysum = [vec![0.0; cells], vec![0.0; cells]];
    let mut arm = [0.0, 0.0];
    for &i in rows {
        let a = table.treatment(i) as usize;
        let idx = (0..t).fold(0, |acc, j| acc * levels[j] + table.mediator(i, j));
        count[a][idx] += 1.0;
        ysum[a][idx] += table.outcome(i);
        arm[a] += 1.0;
    }
    if arm[0] == 0.0 || arm[1] == 0.0 {
        return Err(Error::EmptyCell(
            "a confounder stratum lacks one treatment arm".into(),
        ));
    }
    let mut qbar = [vec![0.0; cells], vec![0.0; cells]];
    let mut joint = [vec![0.0; cells], vec![0.0; cells]];
    for a in 0..2 {
        for idx in 0..cells {
            if count[a][idx] == 0.0 {
                return Err(Error::EmptyCell(format!(
                    "no observations with treatment arm {a} in mediator cell {idx}"
                )));
            }
            qbar[a][idx] = ysum[a][idx] / count[a][idx];
            joint[a][idx] = count[a][idx] / arm[a];
        }
    }
    let g1 = arm[1] / (arm[0] + arm[1]);
    let marginals = [
        marginals_of(&joint[0], levels),
        marginals_of(&joint[1], levels),
    ];
    Ok(MultiCellNuisance {
        levels: levels.to_vec(),
        g: [1.0 - g1, g1],
        qbar,
        joint,
        marginals,
    })
}

impl NuisanceBundle for EmpiricalNuisance {
    fn cell(&self, c: &[f64]) -> MultiCellNuisance {
        self.strata.get(&key(c)).unwrap_or(&self.pooled).clone()
    }
}

/// Renormalizes a density vector after an external modification.
pub fn renormalize(p: &mut [f64]) {
    floor_and_normalize(p, 0.0);
}
