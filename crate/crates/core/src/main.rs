use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use medfx::cli::commands::{default_replicates_path, emit};
use medfx::cli::{
    exit_code, parse_config_text, run_estimate, run_simulate, run_validate, Command, RunConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "medfx",
    version,
    about = "Interventional mediation effects with two or more discrete mediators"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Estimate effects from a CSV file.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo study under the simulation design.
    Simulate(SimulateArgs),
    /// Run the oracle and property checks; exits 1 if any fails.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings; override the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Report path; standard output if absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write a JSON sidecar here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Worker threads; falls back to MEDFX_THREADS, then all cores.
    #[arg(long, env = "MEDFX_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Input CSV with a header row.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Comma-separated confounder columns.
    #[arg(long)]
    confounders: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Label of the active treatment level.
    #[arg(long)]
    treated: Option<String>,
    /// Label of the reference treatment level.
    #[arg(long)]
    control: Option<String>,
    /// Comma-separated mediator columns.
    #[arg(long)]
    mediators: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    outcome_min: Option<f64>,
    #[arg(long)]
    outcome_max: Option<f64>,
    /// one_step, tmle or both.
    #[arg(long)]
    estimator: Option<String>,
    /// Also estimate the ratio-scale indirect effect through the first mediator.
    #[arg(long)]
    ratio: bool,
    /// single_pass or iterate.
    #[arg(long)]
    tmle_mode: Option<String>,
    /// t-mediator effects: all, direct, none, or a mediator number.
    #[arg(long)]
    multi: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// 100 replicates at n = 250 and 1000.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    ratio: bool,
    /// Replicate-level CSV path.
    #[arg(long)]
    replicates_output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// Fewer draws and replicates.
    #[arg(long)]
    quick: bool,
    /// Robustness combinations (1-16), comma-separated, or `all`.
    #[arg(long)]
    combos: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    eif_draws: Option<usize>,
    #[arg(long, hide = true)]
    fault: Option<String>,
}

fn put<T: ToString>(m: &mut BTreeMap<String, String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.to_string(), v.to_string());
    }
}

fn base_entries(c: &Common) -> anyhow::Result<BTreeMap<String, String>> {
    let mut m = match &c.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        m.insert(k.trim().to_string(), v.trim().to_string());
    }
    put(&mut m, "output", c.output.as_ref().map(|p| p.display()));
    put(&mut m, "json", c.json.as_ref().map(|p| p.display()));
    put(&mut m, "seed", c.seed);
    put(&mut m, "alpha", c.alpha);
    Ok(m)
}

fn build(cli: &Cli) -> anyhow::Result<(RunConfig, Option<usize>)> {
    let (command, common, mut m) = match &cli.command {
        Cmd::Estimate(a) => {
            let mut m = base_entries(&a.common)?;
            put(&mut m, "input", a.input.as_ref().map(|p| p.display()));
            put(&mut m, "confounders", a.confounders.as_ref());
            put(&mut m, "treatment.column", a.treatment.as_ref());
            put(&mut m, "treatment.treated", a.treated.as_ref());
            put(&mut m, "treatment.control", a.control.as_ref());
            put(&mut m, "mediators", a.mediators.as_ref());
            put(&mut m, "outcome.column", a.outcome.as_ref());
            put(&mut m, "outcome.min", a.outcome_min);
            put(&mut m, "outcome.max", a.outcome_max);
            put(&mut m, "estimator", a.estimator.as_ref());
            put(&mut m, "tmle.mode", a.tmle_mode.as_ref());
            put(&mut m, "multi.target", a.multi.as_ref());
            if a.ratio {
                m.insert("ratio".into(), "true".into());
            }
            (Command::Estimate, &a.common, m)
        }
        Cmd::Simulate(a) => {
            let mut m = base_entries(&a.common)?;
            put(&mut m, "simulate.replicates", a.replicates);
            put(&mut m, "simulate.sizes", a.sizes.as_ref());
            put(&mut m, "estimator", a.estimator.as_ref());
            put(
                &mut m,
                "simulate.replicates_output",
                a.replicates_output.as_ref().map(|p| p.display()),
            );
            if a.quick {
                m.insert("simulate.quick".into(), "true".into());
            }
            if a.ratio {
                m.insert("simulate.ratio".into(), "true".into());
            }
            (Command::Simulate, &a.common, m)
        }
        Cmd::Validate(a) => {
            let mut m = base_entries(&a.common)?;
            put(&mut m, "validate.combos", a.combos.as_ref());
            put(&mut m, "validate.replicates", a.replicates);
            put(&mut m, "validate.eif_draws", a.eif_draws);
            put(&mut m, "validate.fault", a.fault.as_ref());
            if a.quick {
                m.insert("validate.quick".into(), "true".into());
            }
            (Command::Validate, &a.common, m)
        }
    };
    // Thread count changes scheduling only, so it stays out of the echoed
    // configuration and identical runs give identical reports.
    let threads = common.threads.or(m
        .remove("threads")
        .map(|t| t.parse())
        .transpose()
        .context("threads")?);
    Ok((RunConfig::from_entries(command, m)?, threads))
}

fn run(cfg: &RunConfig) -> anyhow::Result<bool> {
    let out = cfg.output.as_deref();
    match cfg.command {
        Command::Estimate => {
            let r = run_estimate(cfg)?;
            emit(out, &r.report.render())?;
            if let Some(j) = &cfg.json {
                emit(Some(j), &serde_json::to_string_pretty(&r.json)?)?;
            }
            let warnings = r.report.get("warnings", "count").unwrap_or("0");
            if warnings != "0" {
                log::warn!("{warnings} warning(s); see the [warnings] section of the report");
            }
            Ok(true)
        }
        Command::Simulate => {
            let r = run_simulate(cfg)?;
            emit(out, &r.report.render())?;
            if let Some(p) = default_replicates_path(cfg) {
                emit(Some(&p), &r.replicates_csv)?;
            }
            if let Some(j) = &cfg.json {
                emit(Some(j), &serde_json::to_string_pretty(&r.json)?)?;
            }
            Ok(true)
        }
        Command::Validate => {
            let r = run_validate(cfg)?;
            for c in &r.checks {
                eprintln!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            emit(out, &r.report.render())?;
            Ok(r.all_passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cfg, threads) = match build(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(t) = threads {
        if t == 0
            || rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .is_err()
        {
            eprintln!("error: cannot use {t} threads");
            return ExitCode::from(2);
        }
    }
    match run(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<medfx::Error>().map_or(1, exit_code);
            ExitCode::from(code as u8)
        }
    }
}
