//! Observed data `O = (C, A, M_1, ..., M_t, Y)`: validation, mediator supports
//! and affine outcome scaling onto the unit interval.
//!
//! Treatment is coded `1` for the active level `a` and `0` for the reference
//! level `a*`. Mediators are discrete; continuous mediators are mapped onto
//! bins through [`MediatorSupport::with_bins`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the reference arm `a*` in per-arm arrays.
pub const CONTROL: usize = 0;
/// Index of the active arm `a` in per-arm arrays.
pub const TREATED: usize = 1;

/// Ordered discrete support of each mediator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorSupport {
    levels: Vec<Vec<i64>>,
    bin_edges: Vec<Option<Vec<f64>>>,
}

impl MediatorSupport {
    pub fn new(levels: Vec<Vec<i64>>) -> Result<Self> {
        let bin_edges = vec![None; levels.len()];
        let support = Self { levels, bin_edges };
        support.check()?;
        Ok(support)
    }

    /// Support where some mediators are binned from continuous values.
    ///
    /// `edges[j]`, when present, holds cut points `e_0 < ... < e_K`; the
    /// mediator then takes bin indices `0..K` as levels, overriding `levels[j]`.
    pub fn with_bins(levels: Vec<Vec<i64>>, edges: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if edges.len() != levels.len() {
            return Err(Error::InvalidSupport(format!(
                "{} bin-edge entries for {} mediators",
                edges.len(),
                levels.len()
            )));
        }
        let mut levels = levels;
        for (j, e) in edges.iter().enumerate() {
            if let Some(e) = e {
                if e.len() < 3 {
                    return Err(Error::InvalidSupport(format!(
                        "mediator {} needs at least 3 bin edges (2 bins)",
                        j + 1
                    )));
                }
                if e.iter().any(|x| !x.is_finite()) || e.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSupport(format!(
                        "bin edges of mediator {} must be finite and strictly increasing",
                        j + 1
                    )));
                }
                levels[j] = (0..(e.len() - 1) as i64).collect();
            }
        }
        let support = Self {
            levels,
            bin_edges: edges,
        };
        support.check()?;
        Ok(support)
    }

    fn check(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidSupport("no mediators".into()));
        }
        for (j, l) in self.levels.iter().enumerate() {
            if l.len() < 2 {
                return Err(Error::InvalidSupport(format!(
                    "mediator {} has {} level(s); at least 2 required",
                    j + 1,
                    l.len()
                )));
            }
            if l.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSupport(format!(
                    "levels of mediator {} must be strictly increasing",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    pub fn mediator_count(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self, mediator: usize) -> &[i64] {
        &self.levels[mediator]
    }

    pub fn level_count(&self, mediator: usize) -> usize {
        self.levels[mediator].len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn bin_edges(&self, mediator: usize) -> Option<&[f64]> {
        self.bin_edges[mediator].as_deref()
    }

    /// Numeric value of a level, used as a regression feature.
    pub fn value(&self, mediator: usize, index: usize) -> f64 {
        self.levels[mediator][index] as f64
    }

    /// Maps a raw mediator value onto its level index.
    pub fn locate(&self, mediator: usize, raw: f64) -> Option<usize> {
        if !raw.is_finite() {
            return None;
        }
        match &self.bin_edges[mediator] {
            Some(edges) => {
                let last = edges.len() - 1;
                if raw < edges[0] || raw > edges[last] {
                    return None;
                }
                if raw == edges[last] {
                    return Some(last - 1);
                }
                Some(edges.partition_point(|&e| e <= raw) - 1)
            }
            None => {
                if raw.fract() != 0.0 {
                    return None;
                }
                self.levels[mediator].binary_search(&(raw as i64)).ok()
            }
        }
    }

    /// Infers integer supports from the observed values.
    pub fn infer(mediators: &[Vec<f64>]) -> Result<Self> {
        let mut levels = Vec::with_capacity(mediators.len());
        for (j, column) in mediators.iter().enumerate() {
            let mut values = Vec::with_capacity(column.len());
            for (row, &x) in column.iter().enumerate() {
                if !x.is_finite() || x.fract() != 0.0 {
                    return Err(Error::MediatorOutOfSupport {
                        row,
                        mediator: j + 1,
                        value: x,
                    });
                }
                values.push(x as i64);
            }
            values.sort_unstable();
            values.dedup();
            levels.push(values);
        }
        Self::new(levels)
    }
}

/// Affine map applied to the outcome: `y_scaled = (y - y_min) / (y_max - y_min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub y_min: f64,
    pub y_max: f64,
}

impl OutcomeScale {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite()) || y_min >= y_max {
            return Err(Error::InvalidBounds {
                min: y_min,
                max: y_max,
            });
        }
        Ok(Self { y_min, y_max })
    }

    pub fn unit() -> Self {
        Self {
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Additive effects are linear in `Y`, so they unscale by the range alone.
    pub fn unscale_effect(&self, effect: f64) -> f64 {
        effect * self.range()
    }

    /// Means (not contrasts) also pick up the offset.
    pub fn unscale_mean(&self, mean: f64) -> f64 {
        self.y_min + mean * self.range()
    }
}

/// Maps raw outcomes onto `[0, 1]`.
pub fn scale_outcome(raw: &[f64], y_min: f64, y_max: f64) -> Result<(Vec<f64>, OutcomeScale)> {
    let scale = OutcomeScale::new(y_min, y_max)?;
    let range = scale.range();
    let mut scaled = Vec::with_capacity(raw.len());
    for (row, &y) in raw.iter().enumerate() {
        if !(y >= y_min && y <= y_max) {
            return Err(Error::OutcomeOutOfRange {
                row,
                value: y,
                min: y_min,
                max: y_max,
            });
        }
        scaled.push((y - y_min) / range);
    }
    Ok((scaled, scale))
}

/// Column-oriented raw input. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub covariate_names: Vec<String>,
    /// One vector per confounder column.
    pub covariates: Vec<Vec<f64>>,
    pub treatment: Vec<f64>,
    pub mediator_names: Vec<String>,
    /// One vector per mediator column.
    pub mediators: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SupportSpec {
    Infer,
    Declared(MediatorSupport),
}

/// Outcome bounds; `Observed` takes the sample minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutcomeBounds {
    Observed,
    Declared(f64, f64),
}

/// A declared mediator level never observed under one treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityWarning {
    pub arm: u8,
    /// 1-based mediator number.
    pub mediator: usize,
    pub level: i64,
}

impl std::fmt::Display for PositivityWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "mediator {} level {} never observed with treatment arm {}",
            self.mediator, self.level, self.arm
        )
    }
}

/// Validated observations. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    covariate_names: Vec<String>,
    mediator_names: Vec<String>,
    width: usize,
    covariates: Vec<f64>,
    treatment: Vec<u8>,
    mediators: Vec<Vec<usize>>,
    raw_mediators: Vec<Vec<f64>>,
    outcome: Vec<f64>,
    raw_outcome: Vec<f64>,
    support: MediatorSupport,
    outcome_scale: OutcomeScale,
    warnings: Vec<PositivityWarning>,
}

pub fn validate_dataset(
    raw: &RawDataset,
    support: &SupportSpec,
    bounds: OutcomeBounds,
) -> Result<ObservationTable> {
    let n = raw.len();
    if n == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    if raw.covariate_names.len() != raw.covariates.len() {
        return Err(Error::Dimension(
            "covariate names and columns differ in count".into(),
        ));
    }
    if raw.mediator_names.len() != raw.mediators.len() {
        return Err(Error::Dimension(
            "mediator names and columns differ in count".into(),
        ));
    }
    for (name, col) in raw.covariate_names.iter().zip(&raw.covariates) {
        if col.len() != n {
            return Err(Error::Dimension(format!(
                "covariate '{name}' has {} rows, expected {n}",
                col.len()
            )));
        }
    }
    for (name, col) in raw.mediator_names.iter().zip(&raw.mediators) {
        if col.len() != n {
            return Err(Error::Dimension(format!(
                "mediator '{name}' has {} rows, expected {n}",
                col.len()
            )));
        }
    }
    if raw.outcome.len() != n {
        return Err(Error::Dimension(format!(
            "outcome has {} rows, expected {n}",
            raw.outcome.len()
        )));
    }

    // Row-wise scan so the first offending row is reported.
    for row in 0..n {
        for (name, col) in raw.covariate_names.iter().zip(&raw.covariates) {
            if !col[row].is_finite() {
                return Err(Error::MissingValue {
                    row,
                    column: name.clone(),
                });
            }
        }
        let a = raw.treatment[row];
        if a.is_nan() {
            return Err(Error::MissingValue {
                row,
                column: "treatment".into(),
            });
        }
        if a != 0.0 && a != 1.0 {
            return Err(Error::TreatmentNotBinary { row, value: a });
        }
        for (name, col) in raw.mediator_names.iter().zip(&raw.mediators) {
            if col[row].is_nan() {
                return Err(Error::MissingValue {
                    row,
                    column: name.clone(),
                });
            }
        }
        if raw.outcome[row].is_nan() {
            return Err(Error::MissingValue {
                row,
                column: "outcome".into(),
            });
        }
    }

    let support = match support {
        SupportSpec::Infer => MediatorSupport::infer(&raw.mediators)?,
        SupportSpec::Declared(s) => s.clone(),
    };
    if support.mediator_count() != raw.mediators.len() {
        return Err(Error::MediatorCount {
            expected: support.mediator_count(),
            found: raw.mediators.len(),
        });
    }

    let mut mediators = Vec::with_capacity(raw.mediators.len());
    for (j, col) in raw.mediators.iter().enumerate() {
        let mut idx = Vec::with_capacity(n);
        for (row, &x) in col.iter().enumerate() {
            match support.locate(j, x) {
                Some(k) => idx.push(k),
                None => {
                    return Err(Error::MediatorOutOfSupport {
                        row,
                        mediator: j + 1,
                        value: x,
                    });
                }
            }
        }
        mediators.push(idx);
    }

    let (y_min, y_max) = match bounds {
        OutcomeBounds::Declared(lo, hi) => (lo, hi),
        OutcomeBounds::Observed => {
            let lo = raw.outcome.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw
                .outcome
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo.min(0.0), hi.max(1.0).max(lo + 1.0))
            } else {
                (lo, hi)
            }
        }
    };
    let (outcome, outcome_scale) = scale_outcome(&raw.outcome, y_min, y_max)?;

    let width = raw.covariates.len();
    let mut covariates = Vec::with_capacity(n * width);
    for row in 0..n {
        for col in &raw.covariates {
            covariates.push(col[row]);
        }
    }
    let treatment: Vec<u8> = raw.treatment.iter().map(|&a| a as u8).collect();
    let warnings = positivity_screen(&treatment, &mediators, &support);
    for w in &warnings {
        log::warn!("positivity: {w}");
    }

    Ok(ObservationTable {
        covariate_names: raw.covariate_names.clone(),
        mediator_names: raw.mediator_names.clone(),
        width,
        covariates,
        treatment,
        mediators,
        raw_mediators: raw.mediators.clone(),
        outcome,
        raw_outcome: raw.outcome.clone(),
        support,
        outcome_scale,
        warnings,
    })
}

fn positivity_screen(
    treatment: &[u8],
    mediators: &[Vec<usize>],
    support: &MediatorSupport,
) -> Vec<PositivityWarning> {
    let mut out = Vec::new();
    for arm in [0u8, 1u8] {
        for (j, col) in mediators.iter().enumerate() {
            let mut seen = vec![false; support.level_count(j)];
            for (&a, &k) in treatment.iter().zip(col) {
                if a == arm {
                    seen[k] = true;
                }
            }
            for (k, s) in seen.iter().enumerate() {
                if !s {
                    out.push(PositivityWarning {
                        arm,
                        mediator: j + 1,
                        level: support.levels(j)[k],
                    });
                }
            }
        }
    }
    out
}

impl ObservationTable {
    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    /// Number of confounder columns.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mediator_count(&self) -> usize {
        self.mediators.len()
    }

    pub fn covariates(&self, row: usize) -> &[f64] {
        &self.covariates[row * self.width..(row + 1) * self.width]
    }

    pub fn treatment(&self, row: usize) -> u8 {
        self.treatment[row]
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatment
    }

    /// Level index of mediator `j` (0-based) at `row`.
    pub fn mediator(&self, row: usize, j: usize) -> usize {
        self.mediators[j][row]
    }

    pub fn mediator_column(&self, j: usize) -> &[usize] {
        &self.mediators[j]
    }

    /// Scaled outcome in `[0, 1]`.
    pub fn outcome(&self, row: usize) -> f64 {
        self.outcome[row]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcome
    }

    pub fn support(&self) -> &MediatorSupport {
        &self.support
    }

    pub fn outcome_scale(&self) -> OutcomeScale {
        self.outcome_scale
    }

    pub fn warnings(&self) -> &[PositivityWarning] {
        &self.warnings
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn mediator_names(&self) -> &[String] {
        &self.mediator_names
    }

    /// Raw form of the table, suitable for re-validation.
    pub fn to_raw(&self) -> RawDataset {
        let n = self.len();
        let covariates = (0..self.width)
            .map(|k| {
                (0..n)
                    .map(|i| self.covariates[i * self.width + k])
                    .collect()
            })
            .collect();
        RawDataset {
            covariate_names: self.covariate_names.clone(),
            covariates,
            treatment: self.treatment.iter().map(|&a| a as f64).collect(),
            mediator_names: self.mediator_names.clone(),
            mediators: self.raw_mediators.clone(),
            outcome: self.raw_outcome.clone(),
        }
    }

    /// Re-validates under the table's own support and outcome bounds.
    pub fn revalidate(&self) -> Result<ObservationTable> {
        validate_dataset(
            &self.to_raw(),
            &SupportSpec::Declared(self.support.clone()),
            OutcomeBounds::Declared(self.outcome_scale.y_min, self.outcome_scale.y_max),
        )
    }

    /// Keeps only the first two mediators.
    pub fn first_two_mediators(&self) -> Result<ObservationTable> {
        if self.mediator_count() < 2 {
            return Err(Error::MediatorCount {
                expected: 2,
                found: self.mediator_count(),
            });
        }
        let mut raw = self.to_raw();
        raw.mediators.truncate(2);
        raw.mediator_names.truncate(2);
        let levels = (0..2).map(|j| self.support.levels(j).to_vec()).collect();
        let edges = (0..2)
            .map(|j| self.support.bin_edges(j).map(<[f64]>::to_vec))
            .collect();
        validate_dataset(
            &raw,
            &SupportSpec::Declared(MediatorSupport::with_bins(levels, edges)?),
            OutcomeBounds::Declared(self.outcome_scale.y_min, self.outcome_scale.y_max),
        )
    }
}
