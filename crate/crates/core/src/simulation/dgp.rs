//! Simulation design: two uniform confounders, a logistic propensity,
//! truncated-geometric mediators and a Bernoulli outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::data::{
    validate_dataset, MediatorSupport, ObservationTable, OutcomeBounds, RawDataset, SupportSpec,
    CONTROL, TREATED,
};
use crate::error::{Error, Result};
use crate::learners::expit;
use crate::nuisance::{MultiCellNuisance, NuisanceBundle};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpCoefficients {
    /// Intercept, `c1`, `c2`.
    pub propensity: [f64; 3],
    /// Per mediator: intercept, `c1`, treatment.
    pub mediators: Vec<[f64; 3]>,
    /// Intercept, `c1`, `c2`, treatment.
    pub outcome: [f64; 4],
    /// Outcome coefficient of each mediator value.
    pub outcome_mediators: Vec<f64>,
}

impl DgpCoefficients {
    /// Default coefficients for two or three mediators.
    pub fn standard(t: usize) -> Result<Self> {
        let mediators = [[-1.0, 0.25, 0.25], [-1.0, 0.25, 0.35], [-1.0, 0.25, 0.3]];
        let slopes = [0.5, 0.5, 0.25];
        if !(2..=3).contains(&t) {
            return Err(Error::InvalidSpec(format!(
                "default coefficients exist for 2 or 3 mediators, not {t}"
            )));
        }
        Ok(Self {
            propensity: [-1.0, 1.0, 1.0],
            mediators: mediators[..t].to_vec(),
            outcome: [-1.0, 1.0, -1.0, 1.0],
            outcome_mediators: slopes[..t].to_vec(),
        })
    }

    /// Treatment has no effect on mediators or outcome.
    pub fn null(mut self) -> Self {
        for m in &mut self.mediators {
            m[2] = 0.0;
        }
        self.outcome[3] = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .propensity
            .iter()
            .chain(self.mediators.iter().flatten())
            .chain(&self.outcome)
            .chain(&self.outcome_mediators);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite coefficient".into()));
        }
        if self.mediators.len() < 2 || self.mediators.len() != self.outcome_mediators.len() {
            return Err(Error::InvalidSpec(
                "need matching coefficients for at least two mediators".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    /// Independent stream of the generator, used for replicates.
    pub stream: u64,
    pub coefficients: DgpCoefficients,
    /// Largest mediator value; draws above it are set to it.
    pub truncation: usize,
}

impl DgpConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            stream: 0,
            coefficients: DgpCoefficients::standard(2).expect("two mediators have defaults"),
            truncation: 5,
        }
    }

    pub fn with_mediators(mut self, t: usize) -> Result<Self> {
        self.coefficients = DgpCoefficients::standard(t)?;
        Ok(self)
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn mediator_count(&self) -> usize {
        self.coefficients.mediators.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("sample size must be positive".into()));
        }
        if self.truncation == 0 {
            return Err(Error::InvalidSpec(
                "truncation level must be at least 1".into(),
            ));
        }
        self.coefficients.validate()
    }

    pub fn propensity_linear(&self, c: &[f64]) -> f64 {
        let b = &self.coefficients.propensity;
        b[0] + b[1] * c[0] + b[2] * c[1]
    }

    pub fn propensity(&self, c: &[f64]) -> f64 {
        expit(self.propensity_linear(c))
    }

    pub fn mediator_linear(&self, j: usize, a: usize, c: &[f64]) -> f64 {
        let b = &self.coefficients.mediators[j];
        b[0] + b[1] * c[0] + b[2] * a as f64
    }

    pub fn outcome_linear(&self, a: usize, m: &[usize], c: &[f64]) -> f64 {
        let b = &self.coefficients.outcome;
        let med: f64 = m
            .iter()
            .zip(&self.coefficients.outcome_mediators)
            .map(|(&k, s)| s * k as f64)
            .sum();
        b[0] + b[1] * c[0] + b[2] * c[1] + b[3] * a as f64 + med
    }

    pub fn support(&self) -> MediatorSupport {
        let levels: Vec<i64> = (0..=self.truncation as i64).collect();
        MediatorSupport::new(vec![levels; self.mediator_count()])
            .expect("0..=truncation is a valid support")
    }
}

/// Number of failures before the first success, with every value at or
/// above `truncation` collapsed onto `truncation`.
pub fn truncated_geometric_pmf(p: f64, truncation: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(truncation + 1);
    let mut tail = 1.0;
    for _ in 0..truncation {
        out.push(p * tail);
        tail *= 1.0 - p;
    }
    out.push(tail);
    out
}

/// Inverse-CDF draw from a pmf given a uniform variate.
pub fn inverse_cdf(pmf: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    pmf.len() - 1
}

/// Draws one data set. Per subject the uniforms are consumed in the order
/// `c1, c2, A, M1, ..., Mt, Y`.
pub fn draw_dgp(cfg: &DgpConfig) -> Result<ObservationTable> {
    cfg.validate()?;
    let t = cfg.mediator_count();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    let n = cfg.n;
    let mut c = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut a = Vec::with_capacity(n);
    let mut m = vec![Vec::with_capacity(n); t];
    let mut y = Vec::with_capacity(n);
    let mut ks = vec![0; t];
    for _ in 0..n {
        let ci = [rng.gen::<f64>(), rng.gen::<f64>()];
        let ai = usize::from(rng.gen::<f64>() < cfg.propensity(&ci));
        for (j, k) in ks.iter_mut().enumerate() {
            let pmf =
                truncated_geometric_pmf(expit(cfg.mediator_linear(j, ai, &ci)), cfg.truncation);
            *k = inverse_cdf(&pmf, rng.gen());
        }
        let yi = rng.gen::<f64>() < expit(cfg.outcome_linear(ai, &ks, &ci));
        c[0].push(ci[0]);
        c[1].push(ci[1]);
        a.push(ai as f64);
        for (col, &k) in m.iter_mut().zip(&ks) {
            col.push(k as f64);
        }
        y.push(f64::from(u8::from(yi)));
    }
    let raw = RawDataset {
        covariate_names: vec!["c1".into(), "c2".into()],
        covariates: c.into(),
        treatment: a,
        mediator_names: (1..=t).map(|j| format!("m{j}")).collect(),
        mediators: m,
        outcome: y,
    };
    validate_dataset(
        &raw,
        &SupportSpec::Declared(cfg.support()),
        OutcomeBounds::Declared(0.0, 1.0),
    )
}

/// Which nuisance components are supplied at their true values; the rest
/// are corrupted. A correct joint mediator law implies correct marginals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NuisanceSet {
    pub g_a: bool,
    pub g_star: bool,
    pub qbar_a: bool,
    pub qbar_star: bool,
    pub joint_a: bool,
    pub joint_star: bool,
    pub m1_a: bool,
    pub m1_star: bool,
    pub m2_a: bool,
    pub m2_star: bool,
}

impl NuisanceSet {
    pub const ALL: Self = Self {
        g_a: true,
        g_star: true,
        qbar_a: true,
        qbar_star: true,
        joint_a: true,
        joint_star: true,
        m1_a: true,
        m1_star: true,
        m2_a: true,
        m2_star: true,
    };
    pub const NONE: Self = Self {
        g_a: false,
        g_star: false,
        qbar_a: false,
        qbar_star: false,
        joint_a: false,
        joint_star: false,
        m1_a: false,
        m1_star: false,
        m2_a: false,
        m2_star: false,
    };

    fn g(&self, arm: usize) -> bool {
        if arm == TREATED {
            self.g_a
        } else {
            self.g_star
        }
    }

    fn qbar(&self, arm: usize) -> bool {
        if arm == TREATED {
            self.qbar_a
        } else {
            self.qbar_star
        }
    }

    fn joint(&self, arm: usize) -> bool {
        if arm == TREATED {
            self.joint_a
        } else {
            self.joint_star
        }
    }

    fn marginal(&self, j: usize, arm: usize) -> bool {
        self.joint(arm)
            || match (j, arm) {
                (0, TREATED) => self.m1_a,
                (0, _) => self.m1_star,
                (1, TREATED) => self.m2_a,
                (1, _) => self.m2_star,
                _ => true,
            }
    }

    /// Short names of the correct components.
    pub fn labels(&self) -> Vec<&'static str> {
        let flags = [
            (self.qbar_a, "Qbar_a"),
            (self.qbar_star, "Qbar_a*"),
            (self.g_a, "g_a"),
            (self.g_star, "g_a*"),
            (self.joint_a, "q_a,M1M2"),
            (self.joint_star, "q_a*,M1M2"),
            (self.m1_a && !self.joint_a, "q_a,M1"),
            (self.m1_star && !self.joint_star, "q_a*,M1"),
            (self.m2_a && !self.joint_a, "q_a,M2"),
            (self.m2_star && !self.joint_star, "q_a*,M2"),
        ];
        flags.iter().filter(|(f, _)| *f).map(|(_, s)| *s).collect()
    }
}

/// How wrong components are made wrong.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Corruption {
    /// Added to the propensity linear predictor.
    pub propensity_shift: f64,
    /// Added to the outcome-regression logit.
    pub outcome_shift: f64,
    /// Added to the mediator success-probability logit.
    pub mediator_shift: f64,
    /// Spurious dependence `κ` in `q1 q2 (1 + κ u v)` for a wrong joint law,
    /// indexed by arm.
    pub dependence: [f64; 2],
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            propensity_shift: -1.5,
            outcome_shift: -1.5,
            mediator_shift: 0.5,
            dependence: [-0.9, 0.9],
        }
    }
}

/// Nuisances computed from the data-generating law, with optional
/// corruption of selected components.
#[derive(Debug, Clone)]
pub struct AnalyticNuisance {
    pub dgp: DgpConfig,
    pub correct: NuisanceSet,
    pub corruption: Corruption,
}

impl AnalyticNuisance {
    pub fn truth(dgp: &DgpConfig) -> Self {
        Self {
            dgp: dgp.clone(),
            correct: NuisanceSet::ALL,
            corruption: Corruption::default(),
        }
    }

    pub fn corrupted(dgp: &DgpConfig, correct: NuisanceSet, corruption: Corruption) -> Self {
        Self {
            dgp: dgp.clone(),
            correct,
            corruption,
        }
    }
}

/// Mean-centred, max-abs-normalised mediator values under `pmf`.
fn centred(pmf: &[f64]) -> Vec<f64> {
    let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let u: Vec<f64> = (0..pmf.len()).map(|k| k as f64 - mean).collect();
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    u.into_iter().map(|v| v / scale).collect()
}

impl NuisanceBundle for AnalyticNuisance {
    fn cell(&self, c: &[f64]) -> MultiCellNuisance {
        let d = &self.dgp;
        let k = &self.corruption;
        let ok = &self.correct;
        let t = d.mediator_count();
        let levels = vec![d.truncation + 1; t];
        let cells: usize = levels.iter().product();

        let lin = d.propensity_linear(c);
        let g1 = expit(lin);
        let g_a = if ok.g(TREATED) {
            g1
        } else {
            expit(lin + k.propensity_shift)
        };
        let g_s = if ok.g(CONTROL) {
            1.0 - g1
        } else {
            1.0 - expit(lin + k.propensity_shift)
        };

        let mut ks = vec![0; t];
        let mut qbar = [vec![0.0; cells], vec![0.0; cells]];
        for (arm, q) in qbar.iter_mut().enumerate() {
            let shift = if ok.qbar(arm) { 0.0 } else { k.outcome_shift };
            for (idx, slot) in q.iter_mut().enumerate() {
                let mut r = idx;
                for j in (0..t).rev() {
                    ks[j] = r % levels[j];
                    r /= levels[j];
                }
                *slot = expit(d.outcome_linear(arm, &ks, c) + shift);
            }
        }

        let mut joint = [Vec::new(), Vec::new()];
        let mut marginals = [Vec::new(), Vec::new()];
        for arm in [CONTROL, TREATED] {
            let margs: Vec<Vec<f64>> = (0..t)
                .map(|j| {
                    let shift = if ok.marginal(j, arm) {
                        0.0
                    } else {
                        k.mediator_shift
                    };
                    truncated_geometric_pmf(
                        expit(d.mediator_linear(j, arm, c) + shift),
                        d.truncation,
                    )
                })
                .collect();
            let mut jt = vec![1.0; cells];
            for (idx, slot) in jt.iter_mut().enumerate() {
                let mut r = idx;
                for j in (0..t).rev() {
                    *slot *= margs[j][r % levels[j]];
                    r /= levels[j];
                }
            }
            if !ok.joint(arm) && t == 2 {
                // Marginals are preserved because u and v are centred.
                let (u, v) = (centred(&margs[0]), centred(&margs[1]));
                let n2 = levels[1];
                for (idx, slot) in jt.iter_mut().enumerate() {
                    *slot *= 1.0 + k.dependence[arm] * u[idx / n2] * v[idx % n2];
                }
            }
            joint[arm] = jt;
            marginals[arm] = margs;
        }
        MultiCellNuisance {
            levels,
            g: [g_s, g_a],
            qbar,
            joint,
            marginals,
        }
    }
}
