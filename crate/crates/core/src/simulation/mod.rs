//! Simulation design, exact-value oracle, Monte Carlo study and
//! robustness checks.

pub mod dgp;
pub mod montecarlo;
pub mod oracle;
pub mod robustness;
pub mod validation;

pub use dgp::{draw_dgp, AnalyticNuisance, Corruption, DgpCoefficients, DgpConfig, NuisanceSet};
pub use montecarlo::{run_monte_carlo, MonteCarloConfig, SimulationReport};
pub use oracle::{true_effects, true_multi_effects, TrueEffects};
pub use robustness::{robustness_suite, robustness_suites, RobustnessConfig, RobustnessResult};
