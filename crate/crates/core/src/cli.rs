//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invariant or acceptance failure (including
//! solver non-convergence), 2 usage or config error (including infeasible
//! packings).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::correctors::{capacity_error_const_case, chi_norms, CorrectorProfile};
use crate::diagnostics::SweepReport;
use crate::error::{Error, Result};
use crate::geometry::{check_admissibility, place_inclusions, AdmissibilityReport, InclusionSet};
use crate::harness::{self, ExperimentConfig, ExperimentOutput};

#[derive(Debug, Parser)]
#[command(name = "twotemp", version, about = "Heat conduction with highly conductive inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// JSON config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "twotemp-out")]
    out: PathBuf,
    /// Worker threads for sweep levels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the default config as JSON and exit.
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Single run of the model named in `simulate.model`.
    Simulate,
    /// Finite conductivity against the infinite-conductivity limit.
    SweepEta,
    /// Infinite conductivity against the homogenized system.
    SweepEpsilon,
    /// Spatially uniform homogenized system against its exact solution.
    OdeCheck,
    /// Corrector norms and capacity pairings per epsilon.
    Correctors,
    /// Placement and admissibility per epsilon.
    ValidateGeometry,
}

#[derive(Serialize)]
struct ReportFile<'a, T: Serialize> {
    version: &'static str,
    experiment: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    report: T,
}

#[derive(Serialize)]
struct Placement {
    epsilon: f64,
    inclusions: InclusionSet,
    admissibility: AdmissibilityReport,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::InvalidParameter(_)
        | Error::InvalidEpsilon { .. }
        | Error::InvalidDomain(_)
        | Error::InvalidDensity(_)
        | Error::IncommensurateSpacing { .. }
        | Error::PackingInfeasible { .. } => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn emit(dir: &Path, stem: &str, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    write_json(
        dir,
        &format!("{stem}.json"),
        &ReportFile {
            version: crate::REPORT_VERSION,
            experiment: &out.report.experiment,
            config_hash: cfg.hash(),
            config: cfg,
            report: &out.report,
        },
    )?;
    fs::write(dir.join(format!("{stem}.csv")), out.report.to_csv())?;
    for a in &out.artifacts {
        fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn summary(report: &SweepReport) -> String {
    let status = if report.passed() {
        "ok".to_string()
    } else {
        format!("FAILED [{}]", report.failures().join(", "))
    };
    let metrics: Vec<String> = report
        .metrics
        .iter()
        .filter(|(k, _)| !k.contains("checkpoint"))
        .map(|(k, v)| {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
            format!("{k}=[{}]", vals.join(" "))
        })
        .collect();
    format!("{}: {} {}", report.experiment, status, metrics.join(" "))
}

fn correctors_report(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let density = cfg.density.build(&cfg.domain)?;
    let eps = &cfg.epsilon_sweep.epsilons;
    let mut csv = String::from("epsilon,r_eps,l2_sq,h1_semi_sq,capacity_error_const_case\n");
    let (mut l2, mut h1, mut cap, mut predicted) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &e in eps {
        let profile = CorrectorProfile::scaled(e)?;
        let norms = chi_norms(&profile);
        let set = place_inclusions(e, &density, &cfg.domain, cfg.seed, cfg.max_attempts)?;
        let err = capacity_error_const_case(&set);
        csv.push_str(&format!("{e},{},{},{},{err}\n", profile.r_protect, norms.l2_sq, norms.h1_semi_sq));
        l2.push(norms.l2_sq);
        h1.push(norms.h1_semi_sq);
        cap.push(err);
        predicted.push(e / (profile.r_protect - e));
    }
    let mut report = SweepReport::new("correctors", "epsilon", eps.clone());
    let matches = cap.iter().zip(&predicted).all(|(a, b)| (a - b).abs() <= 1e-12);
    report.add_metric("l2_sq", l2);
    report.add_metric("h1_semi_sq", h1);
    report.add_metric("capacity_error_const_case", cap);
    report.add_metric("capacity_error_predicted", predicted);
    report.accept("capacity_error_matches_prediction", matches);
    Ok(ExperimentOutput {
        report,
        artifacts: vec![harness::RunArtifact {
            name: "correctors_table.csv".into(),
            contents: csv,
        }],
    })
}

fn validate_geometry(cfg: &ExperimentConfig, dir: &Path) -> Result<bool> {
    let density = cfg.density.build(&cfg.domain)?;
    let mut placements = Vec::new();
    for &e in &cfg.epsilon_sweep.epsilons {
        let set = place_inclusions(e, &density, &cfg.domain, cfg.seed, cfg.max_attempts)?;
        let admissibility = check_admissibility(&set, &cfg.domain, cfg.c_in);
        println!(
            "validate-geometry: epsilon={e} inclusions={} admissible={}",
            set.count(),
            admissibility.is_admissible()
        );
        placements.push(Placement {
            epsilon: e,
            inclusions: set,
            admissibility,
        });
    }
    let ok = placements.iter().all(|p| p.admissibility.is_admissible());
    write_json(
        dir,
        "geometry.json",
        &ReportFile {
            version: crate::REPORT_VERSION,
            experiment: "validate_geometry",
            config_hash: cfg.hash(),
            config: cfg,
            report: &placements,
        },
    )?;
    Ok(ok)
}

fn dispatch(cli: &Cli, command: Command) -> Result<bool> {
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", cli.out.display())))?;
    let dir = cli.out.as_path();
    let (stem, output) = match command {
        Command::ValidateGeometry => return validate_geometry(&cfg, dir),
        Command::Simulate => ("simulate", harness::simulate(&cfg)?),
        Command::SweepEta => ("eta_sweep", harness::eta_sweep(&cfg)?),
        Command::SweepEpsilon => ("epsilon_sweep", harness::epsilon_sweep(&cfg)?),
        Command::OdeCheck => ("ode_check", harness::ode_check(&cfg)?),
        Command::Correctors => ("correctors", correctors_report(&cfg)?),
    };
    emit(dir, stem, &cfg, &output)?;
    println!("{}", summary(&output.report));
    Ok(output.report.passed())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.print_defaults {
        match serde_json::to_string_pretty(&ExperimentConfig::default()) {
            Ok(text) => {
                println!("{text}");
                return 0;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        }
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return 2;
    };
    let run = || dispatch(&cli, command);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => run(),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
