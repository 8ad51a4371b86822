use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use medfx::eif::{normal_quantile, EFFECT_NAMES};
use medfx::estimators::{onestep, tmle, EstimateOptions};
use medfx::nuisance::{fit_nuisances, NuisanceBundle, NuisanceConfig};
use medfx::simulation::{draw_dgp, AnalyticNuisance, DgpConfig};

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn estimator_outputs_are_coherent(seed in 0u64..10_000, n in 300usize..900, alpha in 0.01f64..0.2) {
        let table = draw_dgp(&DgpConfig::new(n, seed)).unwrap();
        let nuis = fit_nuisances(&table, &NuisanceConfig::default()).unwrap();
        let opts = EstimateOptions { alpha, ..Default::default() };
        let os = onestep(&nuis, &table, &opts).unwrap();
        let tm = tmle(&nuis, &table, &opts).unwrap();
        let z = normal_quantile(alpha);

        let means = os.eifs.column_means();
        for k in 0..5 {
            // one-step = plug-in + mean influence function at the plug-in;
            // the stored functions are re-centred at the one-step estimate
            prop_assert!(((os.scaled_estimates[k] - os.plugin[k]).abs() - os.plugin_scores[k]).abs() <= 1e-15);
            prop_assert!(means[k].abs() <= 1e-15);
            prop_assert!(tm.scaled_estimates[k] > -1.0 && tm.scaled_estimates[k] < 1.0, "{}", EFFECT_NAMES[k]);
            prop_assert!(tm.residual_scores[k] <= 1e-6);
        }
        for out in [&os, &tm] {
            let r = &out.report;
            let e = r.estimates;
            prop_assert!((e[4] - (e[0] - e[1] - e[2] - e[3])).abs() <= 1e-14);
            for k in 0..5 {
                let half = (r.ci[k].1 - r.ci[k].0) / 2.0;
                prop_assert!((half - z * r.se[k]).abs() <= 1e-12 * (1.0 + half));
                prop_assert!((r.se[k] - (r.covariance[k][k] / r.n as f64).sqrt()).abs() <= 1e-14);
                for j in 0..5 {
                    prop_assert_eq!(r.covariance[k][j], r.covariance[j][k]);
                }
            }
            // positive semidefinite: no quadratic form below rounding
            for v in [[1.0, -1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 1.0, 1.0], [1.0, -1.0, -1.0, -1.0, -1.0], [0.3, -0.7, 0.2, 0.9, -0.4]] {
                let q: f64 = (0..5).map(|a| (0..5).map(|b| v[a] * r.covariance[a][b] * v[b]).sum::<f64>()).sum();
                prop_assert!(q >= -1e-12 * r.covariance.iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>());
            }
        }
    }
}

/// Mediator draws against the analytic joint pmf given each subject's arm
/// and confounders, and outcomes against the analytic regression.
#[test]
fn sampler_matches_the_analytic_law() {
    let n = 200_000;
    let cfg = DgpConfig::new(n, 77).with_stream(5);
    let table = draw_dgp(&cfg).unwrap();
    let truth = AnalyticNuisance::truth(&cfg);
    let first = truth.cell(table.covariates(0));
    let cells = first.cells();
    let mut observed = vec![0.0; cells];
    let mut expected = vec![0.0; cells];
    let (mut resid, mut resid_sq) = (0.0, 0.0);
    for i in 0..n {
        let cell = truth.cell(table.covariates(i));
        let a = usize::from(table.treatment(i));
        for (e, p) in expected.iter_mut().zip(&cell.joint[a]) {
            *e += p;
        }
        let idx = cell.index(&[table.mediator(i, 0), table.mediator(i, 1)]);
        observed[idx] += 1.0;
        let r = table.outcome(i) - cell.qbar[a][idx];
        resid += r;
        resid_sq += r * r;
    }

    // Pool sparse cells so every expected count is at least 5.
    let (mut stat, mut groups) = (0.0, 0usize);
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            stat += (o_acc - e_acc).powi(2) / e_acc;
            groups += 1;
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        stat += (o_acc - e_acc).powi(2) / e_acc;
        groups += 1;
    }
    let p = 1.0 - ChiSquared::new((groups - 1) as f64).unwrap().cdf(stat);
    assert!(
        p > 0.001,
        "chi-square {stat:.1} on {} df, p = {p:.2e}",
        groups - 1
    );

    let mean = resid / n as f64;
    let se = ((resid_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(
        mean.abs() <= 3.29 * se,
        "outcome residual mean {mean:.2e}, se {se:.2e}"
    );
}
