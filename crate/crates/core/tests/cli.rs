use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medfx::cli::{load_table, Command as Cmd, Report, RunConfig};
use medfx::eif::EFFECT_NAMES;
use medfx::estimators::{onestep, tmle, EstimateOptions};
use medfx::nuisance::{fit_nuisances, NuisanceConfig};
use medfx::simulation::{draw_dgp, DgpConfig};

fn medfx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medfx"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_sample(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let t = draw_dgp(&DgpConfig::new(n, seed)).unwrap();
    let mut s = String::from("c1,c2,arm,m1,m2,y\n");
    for i in 0..t.len() {
        let c = t.covariates(i);
        let arm = if t.treatment(i) == 1 {
            "drug"
        } else {
            "placebo"
        };
        s.push_str(&format!(
            "{},{},{arm},{},{},{}\n",
            c[0],
            c[1],
            t.mediator(i, 0),
            t.mediator(i, 1),
            t.outcome(i)
        ));
    }
    let p = dir.join("sample.csv");
    std::fs::write(&p, s).unwrap();
    p
}

fn estimate_args(csv: &Path) -> Vec<String> {
    [
        "estimate",
        "--input",
        csv.to_str().unwrap(),
        "--confounders",
        "c1,c2",
        "--treatment",
        "arm",
        "--treated",
        "drug",
        "--control",
        "placebo",
        "--mediators",
        "m1,m2",
        "--outcome",
        "y",
        "--estimator",
        "both",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn stdout_report(o: &Output) -> Report {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    Report::parse(&String::from_utf8(o.stdout.clone()).unwrap()).unwrap()
}

#[test]
fn effects_decompose_and_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sample(dir.path(), 800, 21);
    let args = estimate_args(&csv);
    let report = stdout_report(&medfx(&args.iter().map(String::as_str).collect::<Vec<_>>()));

    for m in ["one_step", "tmle"] {
        let sec = format!("estimates.{m}");
        let e: Vec<f64> = EFFECT_NAMES
            .iter()
            .map(|name| report.get_f64(&sec, &format!("{name}.estimate")).unwrap())
            .collect();
        // total = direct + indirect through M1 + indirect through M2 + covariant
        assert!(
            (e[0] - e[1] - e[2] - e[3] - e[4]).abs() <= 1e-12,
            "{m}: {e:?}"
        );
    }

    let mut entries = std::collections::BTreeMap::new();
    for (k, v) in [
        ("input", csv.to_str().unwrap()),
        ("confounders", "c1,c2"),
        ("treatment.column", "arm"),
        ("treatment.treated", "drug"),
        ("treatment.control", "placebo"),
        ("mediators", "m1,m2"),
        ("outcome.column", "y"),
    ] {
        entries.insert(k.to_string(), v.to_string());
    }
    let cfg = RunConfig::from_entries(Cmd::Estimate, entries).unwrap();
    let table = load_table(&cfg).unwrap();
    let nuis = fit_nuisances(&table, &NuisanceConfig::default()).unwrap();
    let os = onestep(&nuis, &table, &EstimateOptions::default()).unwrap();
    let tm = tmle(&nuis, &table, &EstimateOptions::default()).unwrap();
    for (m, out) in [("one_step", &os), ("tmle", &tm)] {
        for (k, name) in EFFECT_NAMES.iter().enumerate() {
            let sec = format!("estimates.{m}");
            let est = report.get_f64(&sec, &format!("{name}.estimate")).unwrap();
            let se = report.get_f64(&sec, &format!("{name}.se")).unwrap();
            assert!((est - out.report.estimates[k]).abs() <= 1e-12, "{m} {name}");
            assert!((se - out.report.se[k]).abs() <= 1e-12, "{m} {name}");
        }
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_sample(dir.path(), 500, 4);
    let mut args = estimate_args(&csv);
    args.extend(["--ratio", "--multi", "all"].map(String::from));
    let run = |threads: &str| {
        let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
        a.extend(["--threads", threads]);
        medfx(&a)
    };
    let (a, b) = (run("3"), run("1"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let r = stdout_report(&a);
    assert!(r.get_section("multi_mediator.one_step").is_some());
    assert!(r.get_section("ratio.tmle").is_some());
    assert_eq!(r.get("run", "seed"), Some("1"));
}

#[test]
fn simulate_is_reproducible_and_writes_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let reps = dir.path().join("reps.csv");
    let args = [
        "simulate",
        "--sizes",
        "150",
        "--replicates",
        "4",
        "--seed",
        "8",
        "--replicates-output",
        reps.to_str().unwrap(),
    ];
    let a = medfx(&args);
    let first = std::fs::read_to_string(&reps).unwrap();
    let b = medfx(&args);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(first, std::fs::read_to_string(&reps).unwrap());
    let report = stdout_report(&a);
    assert_eq!(report.get("run", "seed"), Some("8"));
    // header plus 4 replicates x 2 methods x 5 effects
    assert_eq!(first.lines().count(), 1 + 4 * 2 * 5);
}

#[test]
fn bad_input_and_configuration_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "c1,a,m1,m2,y\n1,0,0,1,0.5\n1,1,x,0,0.2\n").unwrap();
    let o = medfx(&[
        "estimate",
        "--input",
        csv.to_str().unwrap(),
        "--confounders",
        "c1",
        "--treatment",
        "a",
        "--mediators",
        "m1,m2",
        "--outcome",
        "y",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3") && err.contains("m1"), "{err}");

    assert_eq!(
        medfx(&["validate", "--combos", "17"]).status.code(),
        Some(2)
    );

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# typo below\nalpah = 0.1\n").unwrap();
    assert_eq!(
        medfx(&["simulate", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn injected_fault_makes_validate_fail() {
    let base = [
        "validate",
        "--quick",
        "--eif-draws",
        "100000",
        "--combos",
        "none",
    ];
    let ok = medfx(&base);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let mut args = base.to_vec();
    args.extend(["--fault", "eif_sign"]);
    let bad = medfx(&args);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("FAIL eif_corrects_outcome_regression"));
}
