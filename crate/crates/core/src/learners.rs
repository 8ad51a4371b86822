//! Weighted logistic quasi-likelihood regression.
//!
//! Every regression in the crate goes through [`fit_weighted_logistic`]:
//! propensity scores, outcome regressions, discrete hazards and all the
//! targeting fluctuations. Outcomes may be fractional.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `logit` with the argument pushed inside `[1e-6, 1 - 1e-6]`.
pub fn logit_clamped(p: f64) -> f64 {
    logit(p.clamp(1e-6, 1.0 - 1e-6))
}

/// `log(1 + e^x)` without overflow.
fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-major feature matrix with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl Design {
    pub fn new(data: Vec<f64>, cols: usize, names: Vec<String>) -> Result<Self> {
        if names.len() != cols {
            return Err(Error::Dimension(format!(
                "{} names for {cols} columns",
                names.len()
            )));
        }
        if cols == 0 {
            if !data.is_empty() {
                return Err(Error::Dimension(
                    "data given for a zero-width design".into(),
                ));
            }
            return Err(Error::Dimension(
                "zero-width design needs an explicit row count".into(),
            ));
        }
        if !data.len().is_multiple_of(cols) {
            return Err(Error::Dimension(format!(
                "{} values do not fill rows of width {cols}",
                data.len()
            )));
        }
        Ok(Self {
            rows: data.len() / cols,
            cols,
            data,
            names,
        })
    }

    /// Design with no columns; useful with an intercept-only spec.
    pub fn empty(rows: usize) -> Self {
        Self {
            rows,
            cols: 0,
            data: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>) -> Result<Self> {
        let cols = names.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        if cols == 0 {
            return Ok(Self::empty(rows.len()));
        }
        Self::new(data, cols, names)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone)]
pub enum LearnerKind {
    InterceptOnly,
    MainTerms,
    UserPlugin(Arc<dyn LearnerPlugin>),
}

impl fmt::Debug for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InterceptOnly => f.write_str("InterceptOnly"),
            Self::MainTerms => f.write_str("MainTerms"),
            Self::UserPlugin(p) => write!(f, "UserPlugin({})", p.name()),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InterceptOnly => f.write_str("intercept_only"),
            Self::MainTerms => f.write_str("main_terms_logistic"),
            Self::UserPlugin(p) => write!(f, "user_plugin:{}", p.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Prepend a column of ones to the supplied features.
    pub intercept: bool,
    pub max_iterations: usize,
    /// Bound on the max-norm of the score divided by the total weight.
    pub tolerance: f64,
    pub prediction_floor: f64,
    /// Treat a fitted `|xᵢ'β|` of 15 or more as separation and refit with a
    /// ridge penalty. Targeting fits turn this off: they must solve their
    /// score equations, and a truly separated fit still diverges and is
    /// caught that way.
    pub separation_guard: bool,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            kind: LearnerKind::MainTerms,
            intercept: true,
            max_iterations: 100,
            tolerance: 1e-10,
            prediction_floor: 1e-3,
            separation_guard: true,
        }
    }
}

impl LearnerSpec {
    pub fn main_terms() -> Self {
        Self::default()
    }

    pub fn intercept_only() -> Self {
        Self {
            kind: LearnerKind::InterceptOnly,
            ..Self::default()
        }
    }

    /// Fit on the supplied columns only, as used by targeting fluctuations.
    pub fn no_intercept() -> Self {
        Self {
            intercept: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prediction_floor > 0.0 && self.prediction_floor < 0.5) {
            return Err(Error::InvalidSpec(format!(
                "prediction_floor must lie in (0, 0.5), got {}",
                self.prediction_floor
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidSpec("max_iterations must be positive".into()));
        }
        if matches!(self.kind, LearnerKind::InterceptOnly) && !self.intercept {
            return Err(Error::InvalidSpec(
                "intercept-only learner without an intercept".into(),
            ));
        }
        Ok(())
    }
}

/// Convergence summary of one fit, carried into reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub ridge_applied: bool,
}

/// Anything that turns a feature row into a probability.
pub trait Predictor: Send + Sync + fmt::Debug {
    fn predict_row(&self, features: &[f64]) -> f64;

    fn summary(&self) -> Option<FitSummary> {
        None
    }
}

/// External learner behind the fit/predict contract.
pub trait LearnerPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn fit(
        &self,
        features: &Design,
        outcomes: &[f64],
        weights: &[f64],
    ) -> Result<Box<dyn Predictor>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first when one was fitted.
    pub coefficients: Vec<f64>,
    pub intercept: bool,
    pub offset_used: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub ridge_applied: bool,
    pub feature_names: Vec<String>,
}

impl LogisticFit {
    /// Linear predictor `Xβ` for one row of supplied features.
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        let (b0, rest) = if self.intercept {
            (self.coefficients[0], &self.coefficients[1..])
        } else {
            (0.0, &self.coefficients[..])
        };
        b0 + rest.iter().zip(features).map(|(b, x)| b * x).sum::<f64>()
    }

    fn width(&self) -> usize {
        self.coefficients.len() - usize::from(self.intercept)
    }
}

impl Predictor for LogisticFit {
    fn predict_row(&self, features: &[f64]) -> f64 {
        expit(self.linear_predictor(features))
    }

    fn summary(&self) -> Option<FitSummary> {
        Some(FitSummary {
            iterations: self.iterations,
            gradient_norm: self.gradient_norm,
            converged: self.converged,
            ridge_applied: self.ridge_applied,
        })
    }
}

/// Probabilities `expit(offset + Xβ)`, optionally clamped to
/// `[floor, 1 - floor]`.
pub fn predict(
    fit: &LogisticFit,
    features: &Design,
    offset: Option<&[f64]>,
    truncate: Option<f64>,
) -> Result<Vec<f64>> {
    if features.cols() != fit.width() {
        return Err(Error::Dimension(format!(
            "fit expects {} features, got {}",
            fit.width(),
            features.cols()
        )));
    }
    if let Some(o) = offset {
        if o.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "offset has {} rows, design {}",
                o.len(),
                features.rows()
            )));
        }
    }
    let out = (0..features.rows())
        .map(|i| {
            let eta = fit.linear_predictor(features.row(i)) + offset.map_or(0.0, |o| o[i]);
            let p = expit(eta);
            match truncate {
                Some(floor) => p.clamp(floor, 1.0 - floor),
                None => p,
            }
        })
        .collect();
    Ok(out)
}

/// Fits through the learner named by `spec`, returning a predictor.
pub fn fit_learner(
    features: &Design,
    outcomes: &[f64],
    weights: &[f64],
    spec: &LearnerSpec,
) -> Result<Box<dyn Predictor>> {
    match &spec.kind {
        LearnerKind::UserPlugin(p) => {
            check_inputs(features, outcomes, weights, None)?;
            p.fit(features, outcomes, weights)
        }
        _ => Ok(Box::new(fit_weighted_logistic(
            features, outcomes, weights, None, spec,
        )?)),
    }
}

fn check_inputs(features: &Design, y: &[f64], w: &[f64], offset: Option<&[f64]>) -> Result<()> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    if y.len() != n || w.len() != n || offset.is_some_and(|o| o.len() != n) {
        return Err(Error::Dimension(
            "features, outcomes, weights and offset differ in length".into(),
        ));
    }
    if features.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcomes".into()));
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidSpec("outcomes must lie in [0, 1]".into()));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if offset.is_some_and(|o| o.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("offset".into()));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroWeights);
    }
    Ok(())
}

const RIDGE: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 15.0;
/// Fitted `|xᵢ'β|` beyond which Newton is considered to diverge. Bounding
/// fitted values rather than coefficients lets nearly collinear columns
/// carry large offsetting coefficients.
const DIVERGENCE_BOUND: f64 = 1e3;

/// Maximizes `Σ wᵢ[yᵢ log μᵢ + (1 − yᵢ) log(1 − μᵢ)]`, `μ = expit(offset + Xβ)`,
/// by Newton-Raphson (IRLS) with step halving.
///
/// A singular weighted design, divergence or (with `separation_guard`) a
/// fitted `|xᵢ'β|` of 15 or more triggers a refit with
/// the penalty `1e-8·‖β‖²` and sets `ridge_applied`.
pub fn fit_weighted_logistic(
    features: &Design,
    outcomes: &[f64],
    weights: &[f64],
    offset: Option<&[f64]>,
    spec: &LearnerSpec,
) -> Result<LogisticFit> {
    spec.validate()?;
    if matches!(spec.kind, LearnerKind::UserPlugin(_)) {
        return Err(Error::InvalidSpec(
            "plugin learners are fitted through fit_learner".into(),
        ));
    }
    check_inputs(features, outcomes, weights, offset)?;

    let problem = Problem::new(features, outcomes, weights, offset, spec);
    if problem.k == 0 {
        return Err(Error::InvalidSpec("no columns to fit".into()));
    }
    let mut fit = match problem.newton(0.0, spec) {
        Some(fit)
            if !spec.separation_guard
                || problem.max_shift(&fit.coefficients) < SEPARATION_BOUND =>
        {
            fit
        }
        _ => {
            log::debug!("logistic fit: refitting with ridge penalty");
            let mut fit = problem.newton(RIDGE, spec).ok_or_else(|| {
                Error::NonFinite("logistic fit diverged under ridge penalty".into())
            })?;
            fit.ridge_applied = true;
            problem.polish(&mut fit, spec);
            fit
        }
    };
    if fit.coefficients.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("logistic coefficients".into()));
    }
    fit.offset_used = offset.is_some();
    Ok(fit)
}

struct Problem<'a> {
    x: &'a Design,
    y: &'a [f64],
    w: &'a [f64],
    offset: Option<&'a [f64]>,
    intercept: bool,
    k: usize,
    total_weight: f64,
    names: Vec<String>,
}

impl<'a> Problem<'a> {
    fn new(
        x: &'a Design,
        y: &'a [f64],
        w: &'a [f64],
        offset: Option<&'a [f64]>,
        spec: &LearnerSpec,
    ) -> Self {
        let only_intercept = matches!(spec.kind, LearnerKind::InterceptOnly);
        let intercept = spec.intercept;
        let width = if only_intercept { 0 } else { x.cols() };
        let mut names = Vec::with_capacity(width + 1);
        if intercept {
            names.push("(intercept)".to_string());
        }
        if !only_intercept {
            names.extend(x.names().iter().cloned());
        }
        Self {
            x,
            y,
            w,
            offset,
            intercept,
            k: width + usize::from(intercept),
            total_weight: w.iter().sum(),
            names,
        }
    }

    fn features(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let ones = std::iter::once(1.0).take(usize::from(self.intercept));
        let width = self.k - usize::from(self.intercept);
        ones.chain(self.x.row(i)[..width].iter().copied())
    }

    /// Largest `|xᵢ'β|` over rows with positive weight. Separation drives
    /// this off to infinity; offsetting coefficients on near-collinear
    /// columns do not.
    fn max_shift(&self, beta: &[f64]) -> f64 {
        (0..self.x.rows())
            .filter(|&i| self.w[i] > 0.0)
            .map(|i| {
                self.features(i)
                    .zip(beta)
                    .map(|(x, b)| x * b)
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        self.offset.map_or(0.0, |o| o[i])
            + self.features(i).zip(beta).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Objective scaled by the total weight.
    fn objective(&self, beta: &[f64], ridge: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.x.rows() {
            if self.w[i] == 0.0 {
                continue;
            }
            let eta = self.eta(beta, i);
            s += self.w[i] * (self.y[i] * eta - log1pexp(eta));
        }
        s / self.total_weight - ridge * beta.iter().map(|b| b * b).sum::<f64>()
    }

    /// Scaled score and observed information.
    fn derivatives(&self, beta: &[f64], ridge: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut g = vec![0.0; k];
        let mut h = vec![0.0; k * k];
        let mut xi = vec![0.0; k];
        for i in 0..self.x.rows() {
            let w = self.w[i];
            if w == 0.0 {
                continue;
            }
            for (slot, x) in xi.iter_mut().zip(self.features(i)) {
                *slot = x;
            }
            let eta = self.eta(beta, i);
            let mu = expit(eta);
            let r = w * (self.y[i] - mu);
            let v = w * mu * (1.0 - mu);
            for a in 0..k {
                g[a] += r * xi[a];
                let vx = v * xi[a];
                if vx != 0.0 {
                    for b in 0..=a {
                        h[a * k + b] += vx * xi[b];
                    }
                }
            }
        }
        for a in 0..k {
            g[a] = g[a] / self.total_weight - 2.0 * ridge * beta[a];
            for b in 0..=a {
                h[a * k + b] /= self.total_weight;
                h[b * k + a] = h[a * k + b];
            }
            h[a * k + a] += 2.0 * ridge;
        }
        (g, h)
    }

    /// Returns `None` on a singular information matrix or divergence.
    fn newton(&self, ridge: f64, spec: &LearnerSpec) -> Option<LogisticFit> {
        let k = self.k;
        let mut beta = vec![0.0; k];
        let mut obj = self.objective(&beta, ridge);
        let mut iterations = 0;
        let (mut g, mut h) = self.derivatives(&beta, ridge);
        let mut gnorm = max_abs(&g);
        while iterations < spec.max_iterations {
            // Newton converges quadratically, so polishing well past the
            // tolerance costs one or two extra steps.
            if gnorm <= spec.tolerance * 1e-4 {
                break;
            }
            iterations += 1;
            let step = cholesky_solve(&h, &g, k)?;
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                let cobj = self.objective(&cand, ridge);
                if cobj.is_finite() && cobj >= obj {
                    accepted = Some((cand, cobj));
                    break;
                }
                // Close to the optimum the objective change drowns in
                // rounding; fall back to the score norm.
                if gnorm < 1e-6 && max_abs(&self.derivatives(&cand, ridge).0) < gnorm {
                    accepted = Some((cand, cobj.max(obj)));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cobj)) = accepted else {
                // No ascent possible in floating point: we are at the optimum
                // up to rounding.
                break;
            };
            let moved = cand.iter().zip(&beta).any(|(a, b)| a != b);
            beta = cand;
            obj = cobj;
            (g, h) = self.derivatives(&beta, ridge);
            gnorm = max_abs(&g);
            if beta.iter().any(|b| !b.is_finite()) || self.max_shift(&beta) > DIVERGENCE_BOUND {
                return None;
            }
            if !moved {
                break;
            }
        }
        let converged = gnorm <= spec.tolerance;
        Some(LogisticFit {
            coefficients: beta,
            intercept: self.intercept,
            offset_used: false,
            iterations,
            gradient_norm: gnorm,
            converged,
            ridge_applied: false,
            feature_names: self.names.clone(),
        })
    }
}

impl Problem<'_> {
    /// Moves a ridge solution towards a root of the unpenalized score,
    /// using the ridged information matrix for the steps. The score lies in
    /// the range of the information, so near-collinear designs reach an
    /// exact solution; under separation no step helps and the ridge
    /// solution is kept.
    fn polish(&self, fit: &mut LogisticFit, spec: &LearnerSpec) {
        let mut beta = fit.coefficients.clone();
        let mut g = self.derivatives(&beta, 0.0).0;
        for _ in 0..20 {
            if max_abs(&g) <= spec.tolerance * 1e-4 {
                break;
            }
            let h = self.derivatives(&beta, RIDGE).1;
            let Some(step) = cholesky_solve(&h, &g, self.k) else {
                break;
            };
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                if cand.iter().all(|b| b.is_finite()) && self.max_shift(&cand) <= DIVERGENCE_BOUND {
                    let cg = self.derivatives(&cand, 0.0).0;
                    if max_abs(&cg) < max_abs(&g) {
                        accepted = Some((cand, cg));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((cand, cg)) = accepted else { break };
            beta = cand;
            g = cg;
        }
        fit.coefficients = beta;
        if max_abs(&g) <= spec.tolerance {
            fit.gradient_norm = max_abs(&g);
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `H x = g` for symmetric positive definite `H` (row-major, `k×k`).
pub(crate) fn cholesky_solve(h: &[f64], g: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    let scale = (0..k).map(|i| h[i * k + i].abs()).fold(0.0, f64::max);
    for i in 0..k {
        for j in 0..=i {
            let mut s = h[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(s > 1e-13 * scale) || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let mut s = g[i];
        for p in 0..i {
            s -= l[i * k + p] * z[p];
        }
        z[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = z[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn column(x: &[f64]) -> Design {
        Design::new(x.to_vec(), 1, vec!["x".into()]).unwrap()
    }

    #[test]
    fn intercept_only_is_logit_of_mean() {
        let x = Design::empty(4);
        let fit = fit_weighted_logistic(
            &x,
            &[1.0, 1.0, 0.0, 0.0],
            &[1.0; 4],
            None,
            &LearnerSpec::intercept_only(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-12);
        assert!(fit.converged);

        let fit = fit_weighted_logistic(
            &x,
            &[1.0, 1.0, 1.0, 0.0],
            &[1.0, 1.0, 1.0, 3.0],
            None,
            &LearnerSpec::intercept_only(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fractional_outcomes_with_offset() {
        let x = Design::empty(3);
        let y = [0.2, 0.5, 0.9];
        let off = [0.3, -0.2, 1.0];
        let fit = fit_weighted_logistic(
            &x,
            &y,
            &[1.0; 3],
            Some(&off),
            &LearnerSpec::intercept_only(),
        )
        .unwrap();
        let b = fit.coefficients[0];
        let score: f64 = y.iter().zip(&off).map(|(y, o)| y - expit(o + b)).sum();
        assert!(score.abs() < 1e-10);
        assert!(fit.offset_used);
    }

    fn collinear_problem(noise: f64) -> (Design, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 400;
        let mut data = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let v = u + noise * rng.gen_range(-1.0..1.0);
            data.extend([u, v]);
            y.push(f64::from(u8::from(
                rng.gen::<f64>() < expit(0.5 * u + 40.0 * (v - u)),
            )));
        }
        (
            Design::new(data, 2, vec!["u".into(), "v".into()]).unwrap(),
            y,
        )
    }

    fn mean_score(x: &Design, y: &[f64], fit: &LogisticFit) -> f64 {
        let mut score = [0.0f64; 2];
        for (i, yi) in y.iter().enumerate() {
            let r = yi - expit(fit.linear_predictor(x.row(i)));
            score[0] += r * x.row(i)[0];
            score[1] += r * x.row(i)[1];
        }
        max_abs(&score) / y.len() as f64
    }

    #[test]
    fn collinear_designs_still_solve_their_score() {
        // Large offsetting coefficients are not separation.
        let (x, y) = collinear_problem(0.02);
        let fit = fit_weighted_logistic(
            &x,
            &y,
            &vec![1.0; y.len()],
            None,
            &LearnerSpec::no_intercept(),
        )
        .unwrap();
        assert!(
            fit.coefficients[0].abs() > 15.0 && !fit.ridge_applied,
            "{:?}",
            fit.coefficients
        );
        assert!(mean_score(&x, &y, &fit) <= 1e-10);

        // Identical columns: singular information, ridge, then polish.
        let (x, y) = collinear_problem(0.0);
        let fit = fit_weighted_logistic(
            &x,
            &y,
            &vec![1.0; y.len()],
            None,
            &LearnerSpec::no_intercept(),
        )
        .unwrap();
        assert!(fit.ridge_applied);
        assert!(mean_score(&x, &y, &fit) <= 1e-10, "{:?}", fit.coefficients);
    }

    /// Plain Newton iteration on the unscaled log-likelihood, written
    /// independently of the solver under test.
    fn reference_newton(x: &[f64], y: &[f64]) -> (f64, f64) {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for _ in 0..50 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&xi, &yi) in x.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
                g0 += yi - p;
                g1 += (yi - p) * xi;
                let v = p * (1.0 - p);
                h00 += v;
                h01 += v * xi;
                h11 += v * xi * xi;
            }
            let det = h00 * h11 - h01 * h01;
            a += (h11 * g0 - h01 * g1) / det;
            b += (h00 * g1 - h01 * g0) / det;
        }
        (a, b)
    }

    #[test]
    fn main_terms_matches_reference_newton() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| f64::from(rng.gen::<f64>() < expit(-1.0 + 2.0 * xi)))
            .collect();
        let fit = fit_weighted_logistic(
            &column(&x),
            &y,
            &[1.0; 200],
            None,
            &LearnerSpec::main_terms(),
        )
        .unwrap();
        let (a, b) = reference_newton(&x, &y);
        assert_abs_diff_eq!(fit.coefficients[0], a, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coefficients[1], b, epsilon = 1e-9);
        // Generous sampling band around the generating values.
        assert!((fit.coefficients[0] + 1.0).abs() < 0.6);
        assert!((fit.coefficients[1] - 2.0).abs() < 1.2);
    }

    #[test]
    fn predict_examples() {
        let fit = LogisticFit {
            coefficients: vec![0.0, 0.0],
            intercept: true,
            offset_used: false,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
            ridge_applied: false,
            feature_names: vec!["(intercept)".into(), "x".into()],
        };
        let x = column(&[1.0, -3.0]);
        assert_eq!(predict(&fit, &x, None, None).unwrap(), vec![0.5, 0.5]);
        let off = [-20.7, 0.4];
        let p = predict(&fit, &x, Some(&off), None).unwrap();
        assert_eq!(p[1], expit(0.4));
        let p = predict(&fit, &x, Some(&off), Some(1e-3)).unwrap();
        assert_eq!(p[0], 1e-3);
        let wide = Design::new(vec![1.0, 2.0], 2, vec!["a".into(), "b".into()]).unwrap();
        assert!(predict(&fit, &wide, None, None).is_err());
    }

    #[test]
    fn separation_sets_ridge_flag() {
        let x = column(&[-2.0, -1.0, 1.0, 2.0]);
        let fit = fit_weighted_logistic(
            &x,
            &[0.0, 0.0, 1.0, 1.0],
            &[1.0; 4],
            None,
            &LearnerSpec::main_terms(),
        )
        .unwrap();
        assert!(fit.ridge_applied);
        assert!(fit.coefficients.iter().all(|b| b.is_finite()));
    }

    #[test]
    fn collinear_design_sets_ridge_flag() {
        let x = Design::new(
            vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 0.5, 1.0],
            2,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let fit = fit_weighted_logistic(
            &x,
            &[0.0, 1.0, 1.0, 0.0],
            &[1.0; 4],
            None,
            &LearnerSpec::main_terms(),
        )
        .unwrap();
        assert!(fit.ridge_applied);
        assert!(fit.converged);
    }

    #[test]
    fn nan_and_zero_weights_rejected() {
        let x = column(&[f64::NAN, 1.0]);
        assert!(matches!(
            fit_weighted_logistic(&x, &[0.0, 1.0], &[1.0; 2], None, &LearnerSpec::main_terms()),
            Err(Error::NonFinite(_))
        ));
        let x = column(&[0.0, 1.0]);
        assert_eq!(
            fit_weighted_logistic(&x, &[0.0, 1.0], &[0.0; 2], None, &LearnerSpec::main_terms()),
            Err(Error::ZeroWeights)
        );
    }

    #[test]
    fn spec_validation() {
        let mut s = LearnerSpec {
            prediction_floor: 0.5,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        s.prediction_floor = 1e-3;
        s.tolerance = 0.0;
        assert!(s.validate().is_err());
    }

    fn simulated(seed: u64, n: usize) -> (Design, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(0.0..2.0);
            data.extend([a, b]);
            y.push(rng.gen::<f64>());
            w.push(rng.gen_range(0.1..3.0));
        }
        (
            Design::new(data, 2, vec!["a".into(), "b".into()]).unwrap(),
            y,
            w,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn duplicating_rows_with_half_weight_is_invariant(seed in 0u64..1000) {
            let (x, y, w) = simulated(seed, 30);
            let base = fit_weighted_logistic(&x, &y, &w, None, &LearnerSpec::main_terms()).unwrap();
            let mut data = Vec::new();
            let mut y2 = Vec::new();
            let mut w2 = Vec::new();
            for i in 0..x.rows() {
                for _ in 0..2 {
                    data.extend_from_slice(x.row(i));
                    y2.push(y[i]);
                    w2.push(w[i] / 2.0);
                }
            }
            let x2 = Design::new(data, 2, x.names().to_vec()).unwrap();
            let dup = fit_weighted_logistic(&x2, &y2, &w2, None, &LearnerSpec::main_terms()).unwrap();
            for (a, b) in base.coefficients.iter().zip(&dup.coefficients) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn score_matches_finite_difference(seed in 0u64..1000, db in -0.5f64..0.5) {
            let (x, y, w) = simulated(seed, 25);
            let spec = LearnerSpec::main_terms();
            let problem = Problem::new(&x, &y, &w, None, &spec);
            let beta = vec![0.1 + db, -0.3, 0.2 * db];
            let (g, _) = problem.derivatives(&beta, 0.0);
            for j in 0..3 {
                let h = 1e-5;
                let mut up = beta.clone();
                up[j] += h;
                let mut dn = beta.clone();
                dn[j] -= h;
                let fd = (problem.objective(&up, 0.0) - problem.objective(&dn, 0.0)) / (2.0 * h);
                prop_assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3));
            }
        }

        #[test]
        fn accepted_iterates_never_decrease_objective(seed in 0u64..1000) {
            let (x, y, w) = simulated(seed, 20);
            let spec = LearnerSpec::main_terms();
            let problem = Problem::new(&x, &y, &w, None, &spec);
            let mut last = f64::NEG_INFINITY;
            for iters in 1..8 {
                let s = LearnerSpec { max_iterations: iters, ..LearnerSpec::main_terms() };
                let fit = problem.newton(0.0, &s).unwrap();
                let obj = problem.objective(&fit.coefficients, 0.0);
                prop_assert!(obj >= last - 1e-15);
                last = obj;
            }
        }

        #[test]
        fn converged_fit_has_small_gradient(seed in 0u64..1000) {
            let (x, y, w) = simulated(seed, 40);
            let fit = fit_weighted_logistic(&x, &y, &w, None, &LearnerSpec::main_terms()).unwrap();
            prop_assert!(fit.converged);
            prop_assert!(fit.gradient_norm <= 1e-10);
        }
    }
}
