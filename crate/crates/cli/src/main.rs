//! `oscar`: run spin–cantilever scenarios and write their data files.
//!
//! Exit status: 0 success, 2 configuration error, 3 basis truncation,
//! 4 numerical failure (convergence, positivity, unresolved spectrum).

mod config;
mod error;
mod output;
mod run;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use oscar_core::analysis::{fourier_shift, max_relative_increase};
use serde_json::json;

use config::{Engine, Scenario};
use error::CliError;
use output::{read_csv, OutputDir};

#[derive(Parser)]
#[command(name = "oscar", version, about = "Spin–cantilever OSCAR simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unitary spinor evolution (spectral or adaptive ODE).
    EvolveSchrodinger(RunArgs),
    /// Density-matrix evolution with the thermal bath.
    EvolveMaster(RunArgs),
    /// Classical cantilever with a classical spin.
    EvolveClassical(RunArgs),
    /// Closed-form shift, noise and unit-conversion estimates.
    Estimate(RunArgs),
    /// Spectrum and coherence summary of an existing output directory.
    Analyze(AnalyzeArgs),
    /// Several scenarios in parallel, each in its own output directory.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario (fig2, fig3-quantum,
    /// fig3-classical, fig4, fig5, estimate-eq13, estimate-partial-reversal).
    #[arg(long)]
    config: Option<String>,
    /// Override a config key: `section.key=value` or an unambiguous `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Accepted for compatibility; nothing in the tool is random.
    #[arg(long)]
    seedless: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Output directory of an earlier run, or a trajectory.csv inside one.
    #[arg(long)]
    input: PathBuf,
    /// Where to write spectrum.csv and analysis.json; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seedless: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario files or bundled names; each must name its engine.
    #[arg(long, required = true)]
    config: Vec<String>,
    /// Override applied to every scenario.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run every scenario once per listed value: `key=v1,v2,...`.
    #[arg(long, value_name = "KEY=V1,V2,...")]
    vary: Option<String>,
    /// Parent directory; each run writes to its own subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seedless: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::EvolveSchrodinger(a) => single(a, Engine::Schrodinger),
        Command::EvolveMaster(a) => single(a, Engine::Master),
        Command::EvolveClassical(a) => single(a, Engine::Classical),
        Command::Estimate(a) => single(a, Engine::Estimate),
        Command::Analyze(a) => analyze(&a),
        Command::Sweep(a) => sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oscar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn single(args: RunArgs, engine: Engine) -> Result<(), CliError> {
    let scenario = config::load(args.config.as_deref(), &args.set, Some(engine))?;
    run::run(&scenario, &args.out)?;
    println!("{}: wrote {}", scenario.name, args.out.display());
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let (input_dir, trajectory) = if args.input.is_dir() {
        (args.input.clone(), args.input.join("trajectory.csv"))
    } else {
        let parent = args.input.parent().unwrap_or(Path::new(".")).to_path_buf();
        (parent, args.input.clone())
    };
    let out = args.out.clone().unwrap_or_else(|| input_dir.clone());
    let metrics_path = input_dir.join("density_metrics.csv");
    let has_trajectory = trajectory.is_file();
    if !has_trajectory && !metrics_path.is_file() {
        return Err(CliError::Config(format!(
            "{} has neither trajectory.csv nor density_metrics.csv",
            input_dir.display()
        )));
    }

    let mut summary = serde_json::Map::new();
    let mut hash = None;
    let mut spectrum = None;
    if has_trajectory {
        let table = read_csv(&trajectory)?;
        let (tau, z) = match (table.column("tau"), table.column("z_mean")) {
            (Some(t), Some(z)) if t.len() >= 2 => (t, z),
            _ => {
                return Err(CliError::Config(format!(
                    "{} lacks tau/z_mean samples",
                    trajectory.display()
                )))
            }
        };
        let dt = tau[1] - tau[0];
        let uniform = tau.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1.0));
        if !uniform {
            return Err(CliError::Config("trajectory samples are not evenly spaced".into()));
        }
        let report = fourier_shift(&z, dt)?;
        summary.insert("spectrum".into(), run::shift_summary(&report));
        hash = table.hash;
        spectrum = Some(report);
    }
    if metrics_path.is_file() {
        let table = read_csv(&metrics_path)?;
        let rows: Vec<(f64, f64)> = table
            .column("tau")
            .zip(table.column("coherence_ratio"))
            .map(|(t, c)| t.into_iter().zip(c).filter(|(_, c)| c.is_finite()).collect())
            .unwrap_or_default();
        let ratios: Vec<f64> = rows.iter().map(|r| r.1).collect();
        summary.insert(
            "coherence".into(),
            json!({
                "first_resolved_tau": rows.first().map(|r| r.0),
                "first_ratio": ratios.first(),
                "last_ratio": ratios.last(),
                "max_relative_increase": (ratios.len() > 1).then(|| max_relative_increase(&ratios)),
            }),
        );
        hash = hash.or(table.hash);
    }
    let hash = hash.unwrap_or_else(|| "unknown".into());
    summary.insert("scenario_hash".into(), json!(hash));
    let mut dir = OutputDir::create(&out, &hash)?;
    if let Some(report) = &spectrum {
        run::write_spectrum(report, &mut dir)?;
    }
    dir.json("analysis.json", &serde_json::Value::Object(summary))?;
    println!("analysis: wrote {}", out.display());
    Ok(())
}

/// Expands `--vary key=v1,v2` into per-value overrides and subdirectory tags.
fn variations(vary: Option<&str>) -> Result<Vec<(Option<String>, String)>, CliError> {
    let Some(spec) = vary else {
        return Ok(vec![(None, String::new())]);
    };
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--vary `{spec}` is not key=v1,v2,...")))?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("--vary `{spec}` lists no values")));
    }
    Ok(values
        .into_iter()
        .map(|v| (Some(format!("{key}={v}")), format!("{key}={v}")))
        .collect())
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    // resolve everything first so a bad entry fails before any run starts
    let mut jobs: Vec<(Scenario, PathBuf)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for source in &args.config {
        for (extra, tag) in variations(args.vary.as_deref())? {
            let mut overrides = args.set.clone();
            overrides.extend(extra);
            let scenario = config::load(Some(source), &overrides, None)?;
            let mut sub = scenario.name.clone();
            if !tag.is_empty() {
                sub = format!("{sub}_{tag}");
            }
            let count = seen.entry(sub.clone()).or_insert(0);
            if *count > 0 {
                sub = format!("{sub}_{count}");
            }
            *count += 1;
            jobs.push((scenario, args.out.join(sub)));
        }
    }
    let workers = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<(), CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((scenario, dir)) = jobs.get(k) else { break };
                let r = run::run(scenario, dir);
                results.lock().expect("no worker panicked")[k] = Some(r);
            });
        }
    });

    let mut worst: Option<CliError> = None;
    for ((scenario, dir), r) in jobs.iter().zip(results.into_inner().expect("no worker panicked")) {
        match r.expect("every job ran") {
            Ok(()) => println!("ok    {} -> {}", scenario.name, dir.display()),
            Err(e) => {
                println!("fail  {} -> {}: {e}", scenario.name, dir.display());
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    worst.map_or(Ok(()), Err)
}
