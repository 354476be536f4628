//! `spetc`: simulate, certify, sweep and run the canned demos.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use spetc_core::analysis::{sweep, SweepGrid};
use spetc_core::certificate::{
    compute_calt, select_analysis_parameters, validate_assumptions, AnalysisParameters, AssumptionConstants,
    AssumptionReport, Certificate, QuadraticLyapunovData,
};
use spetc_core::demo::{run_demo, DemoKind};
use spetc_core::plant::LinearPlantSpec;
use spetc_core::scenario::Scenario;
use spetc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "spetc", version, about = "Event-triggered control of singularly perturbed systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write arc.csv, events.json and summary.json.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Derive constants and analysis parameters from quadratic Lyapunov data.
    Certify {
        lyapunov: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        /// Requested dwell time; selects the time-regularized analysis.
        #[arg(long)]
        t_star: Option<f64>,
        /// Linear plant JSON to validate the sampled assumptions against.
        #[arg(long)]
        plant: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long = "box", default_value_t = 10.0)]
        half_width: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write certificate.json into this directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over a parameter grid and write sweep.csv and sweep.json.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a canned linear-demo scenario: zeno, deadzone, dwell or compare.
    Demo {
        kind: DemoKind,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct CertifyReport {
    constants: AssumptionConstants,
    t_cal: f64,
    parameters: AnalysisParameters,
    #[serde(skip_serializing_if = "Option::is_none")]
    assumptions: Option<AssumptionReport>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (name, content) in files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let sc = Scenario::from_json(&read(&scenario)?)?;
            let res = sc.run()?;
            let summary = pretty(&res.summary)?;
            let mut files = vec![
                ("arc.csv".to_string(), res.arc.to_csv()),
                ("events.json".to_string(), pretty(&res.arc.event_log_json())?),
                ("summary.json".to_string(), summary.clone()),
            ];
            if let Some(p) = &res.params {
                files.push(("certificate.json".to_string(), pretty(p)?));
            }
            write_all(&out, &files)?;
            Ok(summary)
        }
        Command::Certify {
            lyapunov,
            sigma,
            t_star,
            plant,
            samples,
            half_width,
            seed,
            out,
        } => {
            let data: QuadraticLyapunovData = serde_json::from_str(&read(&lyapunov)?)?;
            let cert = Certificate::new(data)?;
            let c = cert.consts;
            let t_cal = compute_calt(c.m, c.n, c.gamma1_bar(), c.alpha1)?;
            let parameters = select_analysis_parameters(&c, sigma, t_star)?;
            let assumptions = match plant {
                Some(p) => {
                    let spec = LinearPlantSpec::from_json(&read(&p)?)?.to_plant()?;
                    Some(validate_assumptions(&spec, &cert, samples, half_width, seed)?)
                }
                None => None,
            };
            let report = pretty(&CertifyReport {
                constants: c,
                t_cal,
                parameters,
                assumptions,
            })?;
            if let Some(dir) = out {
                write_all(&dir, &[("certificate.json".to_string(), report.clone())])?;
            }
            Ok(report)
        }
        Command::Sweep { scenario, grid, out } => {
            let sc = Scenario::from_json(&read(&scenario)?)?;
            let grid: SweepGrid = serde_json::from_str(&read(&grid)?)?;
            let res = sweep(&sc, &grid)?;
            let csv = res.to_csv();
            write_all(&out, &[("sweep.csv".to_string(), csv.clone()), ("sweep.json".to_string(), pretty(&res)?)])?;
            Ok(csv)
        }
        Command::Demo { kind, out } => {
            let res = run_demo(kind)?;
            write_all(&out, &res.files)?;
            let names: Vec<&str> = res.files.iter().map(|(n, _)| n.as_str()).collect();
            pretty(&serde_json::json!({ "demo": format!("{kind:?}").to_lowercase(), "files": names }))
        }
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), 2),
    };
    match run(cli) {
        Ok(text) => {
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
