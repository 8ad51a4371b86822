//! Conditional mediator densities through discrete hazards.
//!
//! Mediator `j` is modelled given the treatment, the confounders and every
//! later mediator `j+1, ..., t`, so the joint density is the chain
//! `q(m_t | c) q(m_{t-1} | m_t, c) ... q(m_1 | m_2, ..., m_t, c)`.
//! With two mediators this is `q(m_1 | m_2, c) q(m_2 | c)`.

use crate::data::{MediatorSupport, ObservationTable};
use crate::error::{Error, Result};
use crate::learners::{fit_learner, Design, FitSummary, LearnerKind, LearnerSpec, Predictor};

pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-4;

/// Person-level rows expanded to one row per bin up to the observed level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongFormTable {
    /// Mediator (0-based) whose hazards the rows describe.
    pub mediator: usize,
    pub parent_row_index: Vec<usize>,
    /// Level index of the bin.
    pub bin: Vec<usize>,
    pub event: Vec<u8>,
}

impl LongFormTable {
    pub fn len(&self) -> usize {
        self.bin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin.is_empty()
    }
}

/// A subject at level index `k` contributes rows for bins `0..=k`, with
/// the event on the last one.
pub fn expand_long_form(table: &ObservationTable, mediator: usize) -> LongFormTable {
    let col = table.mediator_column(mediator);
    let total: usize = col.iter().map(|k| k + 1).sum();
    let mut long = LongFormTable {
        mediator,
        parent_row_index: Vec::with_capacity(total),
        bin: Vec::with_capacity(total),
        event: Vec::with_capacity(total),
    };
    for (i, &k) in col.iter().enumerate() {
        for b in 0..=k {
            long.parent_row_index.push(i);
            long.bin.push(b);
            long.event.push(u8::from(b == k));
        }
    }
    long
}

/// Normalized mass `λ_m Π_{b<m}(1 − λ_b)` over the support.
pub fn density_from_hazards(hazards: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(hazards.len());
    let mut survival = 1.0;
    for &h in hazards {
        out.push(h * survival);
        survival *= 1.0 - h;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        for v in &mut out {
            *v /= total;
        }
    } else {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|v| *v = u);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HazardFeatures {
    /// Confounders, treatment, later mediator values and one-hot bins.
    #[default]
    MainTerms,
    /// One indicator per (treatment, later mediator levels, bin) cell, plus
    /// confounders.
    Interacted,
}

impl std::str::FromStr for HazardFeatures {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main_terms" | "main-terms" => Ok(Self::MainTerms),
            "interacted" => Ok(Self::Interacted),
            other => Err(Error::Config(format!(
                "unknown hazard feature set '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for HazardFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MainTerms => "main_terms",
            Self::Interacted => "interacted",
        })
    }
}

/// Builds hazard regression rows for one mediator.
#[derive(Debug, Clone)]
struct HazardDesign {
    mediator: usize,
    features: HazardFeatures,
    covariate_cols: Vec<usize>,
    levels: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl HazardDesign {
    fn new(
        support: &MediatorSupport,
        mediator: usize,
        features: HazardFeatures,
        covariate_cols: Vec<usize>,
    ) -> Self {
        let levels = support.level_counts();
        let values = (0..levels.len())
            .map(|j| (0..levels[j]).map(|k| support.value(j, k)).collect())
            .collect();
        Self {
            mediator,
            features,
            covariate_cols,
            levels,
            values,
        }
    }

    fn later(&self) -> std::ops::Range<usize> {
        self.mediator + 1..self.levels.len()
    }

    fn fitted_bins(&self) -> usize {
        self.levels[self.mediator] - 1
    }

    fn cells(&self) -> usize {
        2 * self.later().map(|j| self.levels[j]).product::<usize>() * self.fitted_bins()
    }

    fn names(&self, covariate_names: &[String]) -> Vec<String> {
        let mut names: Vec<String> = self
            .covariate_cols
            .iter()
            .map(|&k| covariate_names[k].clone())
            .collect();
        match self.features {
            HazardFeatures::MainTerms => {
                names.push("a".into());
                names.extend(self.later().map(|j| format!("m{}", j + 1)));
                names.extend((1..self.fitted_bins()).map(|b| format!("bin{b}")));
            }
            HazardFeatures::Interacted => {
                names.extend((0..self.cells()).map(|k| format!("cell{k}")));
            }
        }
        names
    }

    fn width(&self) -> usize {
        self.covariate_cols.len()
            + match self.features {
                HazardFeatures::MainTerms => {
                    1 + self.later().len() + self.fitted_bins().saturating_sub(1)
                }
                HazardFeatures::Interacted => self.cells(),
            }
    }

    /// `later` holds level indices of mediators `mediator+1..t`.
    fn fill(&self, out: &mut Vec<f64>, c: &[f64], a: usize, later: &[usize], bin: usize) {
        out.clear();
        out.extend(self.covariate_cols.iter().map(|&k| c[k]));
        match self.features {
            HazardFeatures::MainTerms => {
                out.push(a as f64);
                for (off, j) in self.later().enumerate() {
                    out.push(self.values[j][later[off]]);
                }
                for b in 1..self.fitted_bins() {
                    out.push(f64::from(u8::from(b == bin)));
                }
            }
            HazardFeatures::Interacted => {
                let mut cell = a;
                for (off, j) in self.later().enumerate() {
                    cell = cell * self.levels[j] + later[off];
                }
                cell = cell * self.fitted_bins() + bin;
                let start = out.len();
                out.resize(start + self.cells(), 0.0);
                out[start + cell] = 1.0;
            }
        }
    }
}

/// Fitted hazard regression for one mediator.
#[derive(Debug)]
pub struct HazardFit {
    design: HazardDesign,
    predictor: Option<Box<dyn Predictor>>,
    hazard_floor: f64,
}

impl HazardFit {
    pub fn summary(&self) -> Option<FitSummary> {
        self.predictor.as_ref().and_then(|p| p.summary())
    }

    /// Hazards for every level; the top level is fixed at one.
    fn hazards(
        &self,
        c: &[f64],
        a: usize,
        later: &[usize],
        buf: &mut Vec<f64>,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        if let Some(p) = &self.predictor {
            for b in 0..self.design.fitted_bins() {
                self.design.fill(buf, c, a, later, b);
                out.push(
                    p.predict_row(buf)
                        .clamp(self.hazard_floor, 1.0 - self.hazard_floor),
                );
            }
        }
        out.push(1.0);
    }

    pub fn density(&self, c: &[f64], a: usize, later: &[usize]) -> Vec<f64> {
        let mut buf = Vec::new();
        let mut hz = Vec::new();
        self.hazards(c, a, later, &mut buf, &mut hz);
        density_from_hazards(&hz)
    }
}

/// Covariate columns that vary in the sample; constant ones are absorbed by
/// the intercept or the cell indicators.
pub(crate) fn varying_columns(table: &ObservationTable) -> Vec<usize> {
    (0..table.width())
        .filter(|&k| {
            let first = table.covariates(0)[k];
            (1..table.len()).any(|i| table.covariates(i)[k] != first)
        })
        .collect()
}

/// Logistic regression of the event indicator on bin, treatment,
/// confounders and later mediators. Rows at the top level carry no
/// information (the hazard there is one) and are dropped.
pub fn fit_hazards(
    long: &LongFormTable,
    table: &ObservationTable,
    spec: &LearnerSpec,
    features: HazardFeatures,
) -> Result<HazardFit> {
    if long.is_empty() {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let cols = varying_columns(table);
    let design = HazardDesign::new(table.support(), long.mediator, features, cols);
    let fit = HazardFit {
        predictor: None,
        hazard_floor: spec.prediction_floor,
        design,
    };
    let bins = fit.design.fitted_bins();
    if bins == 0 {
        return Ok(fit);
    }
    let width = fit.design.width();
    let mut data = Vec::with_capacity(long.len() * width);
    let mut y = Vec::with_capacity(long.len());
    let mut row = Vec::with_capacity(width);
    let mut later = Vec::new();
    for r in 0..long.len() {
        let b = long.bin[r];
        if b >= bins {
            continue;
        }
        let i = long.parent_row_index[r];
        later.clear();
        later.extend(fit.design.later().map(|j| table.mediator(i, j)));
        fit.design.fill(
            &mut row,
            table.covariates(i),
            table.treatment(i) as usize,
            &later,
            b,
        );
        data.extend_from_slice(&row);
        y.push(f64::from(long.event[r]));
    }
    if y.is_empty() {
        // Everyone sits at the top level.
        let x = Design::empty(1);
        let p = fit_learner(&x, &[0.0], &[1.0], &LearnerSpec::intercept_only())?;
        return Ok(HazardFit {
            predictor: Some(p),
            ..fit
        });
    }
    let names = fit.design.names(table.covariate_names());
    let x = Design::new(data, width, names)?;
    let mut spec = spec.clone();
    if features == HazardFeatures::Interacted && matches!(spec.kind, LearnerKind::MainTerms) {
        spec.intercept = false;
    }
    let w = vec![1.0; y.len()];
    let p = fit_learner(&x, &y, &w, &spec)?;
    Ok(HazardFit {
        predictor: Some(p),
        ..fit
    })
}

/// Joint density over all mediators and the marginals derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAndMarginals {
    /// Row-major over level indices, mediator 1 most significant.
    pub joint: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct MediatorDensityModel {
    support: MediatorSupport,
    fits: Vec<HazardFit>,
    floor: f64,
}

impl MediatorDensityModel {
    pub fn fit(
        table: &ObservationTable,
        spec: &LearnerSpec,
        features: HazardFeatures,
        floor: f64,
    ) -> Result<Self> {
        let cells: usize = table.support().level_counts().iter().product();
        if !(floor >= 0.0 && floor * (cells as f64) < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "density floor {floor} too large for {cells} cells"
            )));
        }
        let fits = (0..table.mediator_count())
            .map(|j| fit_hazards(&expand_long_form(table, j), table, spec, features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            support: table.support().clone(),
            fits,
            floor,
        })
    }

    pub fn support(&self) -> &MediatorSupport {
        &self.support
    }

    pub fn hazard_fits(&self) -> &[HazardFit] {
        &self.fits
    }

    pub fn joint_cells(&self) -> usize {
        self.support.level_counts().iter().product()
    }

    /// Chain-rule joint before flooring.
    fn raw_joint(&self, a: usize, c: &[f64]) -> Vec<f64> {
        let levels = self.support.level_counts();
        let t = levels.len();
        let mut joint = vec![1.0];
        // `joint` is indexed over mediators j..t, mediator j most significant.
        let mut buf = Vec::new();
        let mut hz = Vec::new();
        let mut later = vec![0usize; t];
        for j in (0..t).rev() {
            let lj = levels[j];
            let tail = joint.len();
            let mut next = vec![0.0; lj * tail];
            for (rest, &mass) in joint.iter().enumerate() {
                // Decode level indices of mediators j+1..t from `rest`.
                let mut r = rest;
                for u in (j + 1..t).rev() {
                    later[u] = r % levels[u];
                    r /= levels[u];
                }
                self.fits[j].hazards(c, a, &later[j + 1..t], &mut buf, &mut hz);
                let q = density_from_hazards(&hz);
                for (k, qk) in q.iter().enumerate() {
                    next[k * tail + rest] = qk * mass;
                }
            }
            joint = next;
        }
        joint
    }

    /// Joint and marginals under treatment arm `a` (1 = active) at `c`.
    pub fn joint_and_marginals(&self, a: usize, c: &[f64]) -> JointAndMarginals {
        let mut joint = self.raw_joint(a, c);
        floor_and_normalize(&mut joint, self.floor);
        let marginals = marginals_of(&joint, &self.support.level_counts());
        JointAndMarginals { joint, marginals }
    }
}

pub fn build_joint_and_marginals(
    model: &MediatorDensityModel,
    a: usize,
    c: &[f64],
) -> JointAndMarginals {
    model.joint_and_marginals(a, c)
}

/// Raises every cell to at least `floor` and rescales to total mass one;
/// the floor is met exactly after rescaling.
pub fn floor_and_normalize(p: &mut [f64], floor: f64) {
    if floor <= 0.0 {
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        return;
    }
    // Cells below the floor are pinned there; the rest share the remainder
    // in proportion to their mass.
    let mut pinned = vec![false; p.len()];
    loop {
        let free: f64 = p
            .iter()
            .zip(&pinned)
            .filter(|(_, &f)| !f)
            .map(|(v, _)| *v)
            .sum();
        let budget = 1.0 - floor * pinned.iter().filter(|&&f| f).count() as f64;
        let scale = budget / free;
        let mut changed = false;
        for (v, f) in p.iter().zip(pinned.iter_mut()) {
            if !*f && v * scale < floor {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for (v, &f) in p.iter_mut().zip(&pinned) {
                *v = if f { floor } else { *v * scale };
            }
            return;
        }
    }
}

pub(crate) fn marginals_of(joint: &[f64], levels: &[usize]) -> Vec<Vec<f64>> {
    let t = levels.len();
    let mut out: Vec<Vec<f64>> = levels.iter().map(|&l| vec![0.0; l]).collect();
    for (idx, &p) in joint.iter().enumerate() {
        let mut r = idx;
        for j in (0..t).rev() {
            out[j][r % levels[j]] += p;
            r /= levels[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, OutcomeBounds, RawDataset, SupportSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn table_from(
        c: Vec<f64>,
        a: Vec<f64>,
        m1: Vec<f64>,
        m2: Vec<f64>,
        support: Option<MediatorSupport>,
    ) -> ObservationTable {
        let n = a.len();
        let raw = RawDataset {
            covariate_names: vec!["c".into()],
            covariates: vec![c],
            treatment: a,
            mediator_names: vec!["m1".into(), "m2".into()],
            mediators: vec![m1, m2],
            outcome: vec![0.5; n],
        };
        let s = support.map_or(SupportSpec::Infer, SupportSpec::Declared);
        validate_dataset(&raw, &s, OutcomeBounds::Declared(0.0, 1.0)).unwrap()
    }

    #[test]
    fn long_form_matches_illustration() {
        let support = MediatorSupport::new(vec![vec![1, 2, 3], vec![1, 2, 3]]).unwrap();
        let t = table_from(
            vec![0.1, 0.2],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 3.0],
            Some(support),
        );
        let long = expand_long_form(&t, 1);
        assert_eq!(long.parent_row_index, vec![0, 1, 1, 1]);
        assert_eq!(long.event, vec![1, 0, 0, 1]);
        assert_eq!(long.bin, vec![0, 0, 1, 2]);
    }

    #[test]
    fn long_form_counts_top_level() {
        let support = MediatorSupport::new(vec![vec![0, 1], vec![0, 1, 2, 3]]).unwrap();
        let n = 7;
        let t = table_from(
            vec![0.0; n],
            vec![1.0; n],
            vec![0.0; n],
            vec![3.0; n],
            Some(support),
        );
        assert_eq!(expand_long_form(&t, 1).len(), 4 * n);
    }

    #[test]
    fn density_from_hazards_examples() {
        let d = density_from_hazards(&[0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(d[0], 4.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 2.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[2], 1.0 / 7.0, epsilon = 1e-15);
        assert_eq!(density_from_hazards(&[1.0, 0.3, 0.9]), vec![1.0, 0.0, 0.0]);
        assert_eq!(density_from_hazards(&[1.0]), vec![1.0]);
        let d = density_from_hazards(&[1e-3, 1e-3, 1e-3]);
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn floor_is_met_after_renormalizing() {
        let mut p = vec![0.0, 1e-6, 0.3, 0.7 - 1e-6];
        floor_and_normalize(&mut p, 1e-4);
        assert!(p.iter().all(|&v| v >= 1e-4 - 1e-18));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p[2] / p[3], 0.3 / (0.7 - 1e-6), epsilon = 1e-12);
    }

    fn truncated_geometric(p: f64, levels: usize) -> Vec<f64> {
        (0..levels)
            .map(|k| {
                if k + 1 < levels {
                    p * (1.0 - p).powi(k as i32)
                } else {
                    (1.0 - p).powi(k as i32)
                }
            })
            .collect()
    }

    #[test]
    fn constant_hazard_recovers_event_rates() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let n = 10_000;
        let mut m1 = Vec::new();
        let mut m2 = Vec::new();
        for _ in 0..n {
            let draw = |rng: &mut ChaCha20Rng| {
                let mut k = 0;
                while k < 3 && rng.gen::<f64>() >= 0.5 {
                    k += 1;
                }
                k as f64
            };
            m1.push(draw(&mut rng));
            m2.push(draw(&mut rng));
        }
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| (i % 10) as f64 / 10.0).collect();
        let t = table_from(c, a, m1, m2, None);
        let model =
            MediatorDensityModel::fit(&t, &LearnerSpec::default(), HazardFeatures::MainTerms, 1e-4)
                .unwrap();
        // Empirical bin-wise event rates.
        let long = expand_long_form(&t, 1);
        for b in 0..3 {
            let (mut at_risk, mut events) = (0.0, 0.0);
            for r in 0..long.len() {
                if long.bin[r] == b {
                    at_risk += 1.0;
                    events += f64::from(long.event[r]);
                }
            }
            let emp = events / at_risk;
            let mut buf = Vec::new();
            let mut hz = Vec::new();
            model.fits[1].hazards(&[0.45], 1, &[], &mut buf, &mut hz);
            assert!((hz[b] - emp).abs() < 0.03, "bin {b}: {} vs {emp}", hz[b]);
            assert!((hz[b] - 0.5).abs() < 0.03);
        }
    }

    #[test]
    fn geometric_hazards_recover_pmf() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 100_000;
        let p = 0.35;
        let pmf = truncated_geometric(p, 6);
        let cdf: Vec<f64> = pmf
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect();
        let draw = |u: f64| cdf.iter().position(|&f| u < f).unwrap_or(5) as f64;
        let m1: Vec<f64> = (0..n).map(|_| draw(rng.gen())).collect();
        let m2: Vec<f64> = (0..n).map(|_| draw(rng.gen())).collect();
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let t = table_from(c, a, m1, m2, None);
        let model =
            MediatorDensityModel::fit(&t, &LearnerSpec::default(), HazardFeatures::MainTerms, 1e-4)
                .unwrap();
        let jm = model.joint_and_marginals(1, &[3.0]);
        for k in 0..6 {
            assert!((jm.marginals[1][k] - pmf[k]).abs() < 0.01);
            assert!((jm.marginals[0][k] - pmf[k]).abs() < 0.01);
        }
        // Independent mediators: joint close to the product of marginals.
        for k1 in 0..6 {
            for k2 in 0..6 {
                let prod = jm.marginals[0][k1] * jm.marginals[1][k2];
                assert!((jm.joint[k1 * 6 + k2] - prod).abs() < 0.02);
            }
        }
    }

    #[test]
    fn saturated_interacted_fit_reproduces_frequencies() {
        // One confounder level; cell frequencies differ by arm and by m2.
        let mut rows = Vec::new();
        let counts = [[[5, 1], [2, 7]], [[3, 3], [1, 9]]]; // [a][m2][m1]
        for (a, by_m2) in counts.iter().enumerate() {
            for (m2, by_m1) in by_m2.iter().enumerate() {
                for (m1, &cnt) in by_m1.iter().enumerate() {
                    for _ in 0..cnt {
                        rows.push((a as f64, m1 as f64, m2 as f64));
                    }
                }
            }
        }
        let t = table_from(
            vec![0.3; rows.len()],
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            None,
        );
        let model = MediatorDensityModel::fit(
            &t,
            &LearnerSpec::default(),
            HazardFeatures::Interacted,
            1e-4,
        )
        .unwrap();
        for a in 0..2 {
            let total: f64 = counts[a].iter().flatten().sum::<i32>() as f64;
            let jm = model.joint_and_marginals(a, &[0.3]);
            for m1 in 0..2 {
                for m2 in 0..2 {
                    let emp = counts[a][m2][m1] as f64 / total;
                    assert_abs_diff_eq!(jm.joint[m1 * 2 + m2], emp, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn three_mediator_chain_is_normalized() {
        let raw = RawDataset {
            covariate_names: vec!["c".into()],
            covariates: vec![vec![0.1, 0.5, 0.9, 0.3, 0.7, 0.2]],
            treatment: vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
            mediator_names: vec!["m1".into(), "m2".into(), "m3".into()],
            mediators: vec![
                vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0],
                vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
                vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            ],
            outcome: vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
        };
        let t = validate_dataset(&raw, &SupportSpec::Infer, OutcomeBounds::Observed).unwrap();
        let model =
            MediatorDensityModel::fit(&t, &LearnerSpec::default(), HazardFeatures::MainTerms, 1e-4)
                .unwrap();
        let jm = model.joint_and_marginals(1, &[0.4]);
        assert_eq!(jm.joint.len(), 12);
        assert_abs_diff_eq!(jm.joint.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(
            jm.marginals.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![3, 2, 2]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn densities_normalized_and_floored(seed in 0u64..500, c in -1.0f64..2.0, a in 0usize..2) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let n = 60;
            let m1: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            let m2: Vec<f64> = (0..n).map(|_| rng.gen_range(0..3) as f64).collect();
            let av: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let cv: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let support = MediatorSupport::new(vec![vec![0, 1, 2, 3], vec![0, 1, 2]]).unwrap();
            let t = table_from(cv, av, m1, m2, Some(support));
            let model = MediatorDensityModel::fit(&t, &LearnerSpec::default(), HazardFeatures::MainTerms, 1e-4).unwrap();
            let jm = model.joint_and_marginals(a, &[c]);
            prop_assert!((jm.joint.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            prop_assert!(jm.joint.iter().all(|&v| v >= 1e-4 * (1.0 - 1e-12)));
            for m in &jm.marginals {
                prop_assert!((m.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
            // Row sums reproduce the second marginal.
            for m2 in 0..3 {
                let s: f64 = (0..4).map(|m1| jm.joint[m1 * 3 + m2]).sum();
                prop_assert!((s - jm.marginals[1][m2]).abs() <= 1e-14);
            }
        }

        #[test]
        fn relabeling_support_permutes_nothing(seed in 0u64..200) {
            // Shifting level labels leaves one-hot bin effects and densities unchanged.
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let n = 50;
            let m1: Vec<f64> = (0..n).map(|_| rng.gen_range(0..3) as f64).collect();
            let m2: Vec<f64> = (0..n).map(|_| rng.gen_range(0..3) as f64).collect();
            let av: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let cv: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let t1 = table_from(cv.clone(), av.clone(), m1.clone(), m2.clone(), None);
            let shifted: Vec<f64> = m1.iter().map(|v| v + 10.0).collect();
            let t2 = table_from(cv, av, shifted, m2, None);
            let f1 = fit_hazards(&expand_long_form(&t1, 0), &t1, &LearnerSpec::default(), HazardFeatures::MainTerms).unwrap();
            let f2 = fit_hazards(&expand_long_form(&t2, 0), &t2, &LearnerSpec::default(), HazardFeatures::MainTerms).unwrap();
            let d1 = f1.density(&[0.5], 1, &[1]);
            let d2 = f2.density(&[0.5], 1, &[1]);
            for (x, y) in d1.iter().zip(&d2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
