use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eqdisc::config::{ConfigError, RunConfig};
use eqdisc::pipeline::{self, Method, PipelineError, REPORT_FILE};
use eqdisc::solvers::{self, Benchmark};
use eqdisc::io;

#[derive(Parser)]
#[command(
    name = "eqdisc",
    version,
    about = "Discovers 1-D evolution equations from sparse noisy observations"
)]
struct Cli {
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a named benchmark and write the solution field as CSV.
    Generate {
        /// One of: kdv, ks, burgers.
        #[arg(long)]
        pde: String,
        /// Destination for the field CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full discovery pipeline from a config file.
    Discover {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key in place, e.g. --set data.noise_gamma=0.25.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a reference method over the same data and surrogate stages.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        /// One of: stridge, common_ga.
        #[arg(long)]
        method: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Re-solve a saved equation from the truth's initial condition and
    /// report the relative error.
    Evaluate {
        /// Truth field CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Saved model JSON.
        #[arg(long)]
        discovered: PathBuf,
        /// Optional destination for a small JSON result.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a human summary of a run report.
    Report {
        /// Path to a report.json.
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli))
}

fn run(cli: Cli) -> u8 {
    if let Some(n) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        if let Err(e) = pool {
            eprintln!("error: --threads: {e}");
            return 2;
        }
    }
    match cli.command {
        Command::Generate { pde, out } => generate(&pde, &out),
        Command::Discover { config, set } => match load_config(&config, &set) {
            Ok(cfg) => finish(pipeline::run_pipeline(&cfg, Method::Discover), &cfg),
            Err(code) => code,
        },
        Command::Baseline { config, method, set } => {
            let Some(method) = Method::parse_baseline(&method) else {
                eprintln!("error: unknown method {method:?} (expected stridge or common_ga)");
                return 2;
            };
            match load_config(&config, &set) {
                Ok(cfg) => finish(pipeline::run_pipeline(&cfg, method), &cfg),
                Err(code) => code,
            }
        }
        Command::Evaluate { truth, discovered, out } => evaluate(&truth, &discovered, out.as_deref()),
        Command::Report { path } => report(&path),
    }
}

fn load_config(path: &PathBuf, set: &[String]) -> Result<RunConfig, u8> {
    let attempt = || -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::from_file(path)?;
        cfg.apply_overrides(set)?;
        cfg.validate()?;
        Ok(cfg)
    };
    attempt().map_err(|e| {
        eprintln!("error: {e}");
        2
    })
}

fn finish(result: Result<pipeline::RunReport, PipelineError>, cfg: &RunConfig) -> u8 {
    match result {
        Ok(report) => {
            if let Some(d) = &report.discovered {
                println!("{}", d.rendered);
            }
            if let Some(err) = report.relative_error_percent {
                println!("relative error: {err:.4}%");
            }
            println!("report: {}", cfg.output_dir.join(REPORT_FILE).display());
            0
        }
        Err(e @ PipelineError::Stage { .. }) => {
            eprintln!("error: {e}");
            3
        }
        Err(e @ PipelineError::DiscoveryFailed(_)) => {
            eprintln!("error: {e}");
            4
        }
    }
}

fn generate(pde: &str, out: &PathBuf) -> u8 {
    let Some(bench) = Benchmark::parse(pde) else {
        eprintln!("error: unknown pde {pde:?} (expected kdv, ks, or burgers)");
        return 2;
    };
    let grid = bench.grid();
    let field = match solvers::solve_benchmark(bench, &grid) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: generate: {e}");
            return 3;
        }
    };
    if let Err(e) = io::write_field(out, &field) {
        eprintln!("error: generate: {e}");
        return 3;
    }
    println!("wrote {} ({} x {} points)", out.display(), grid.nx, grid.nt);
    0
}

fn evaluate(truth: &PathBuf, discovered: &PathBuf, out: Option<&std::path::Path>) -> u8 {
    match pipeline::evaluate_files(truth, discovered) {
        Ok(err) => {
            println!("relative_error_percent = {err}");
            if let Some(path) = out {
                #[derive(serde::Serialize)]
                struct EvalResult {
                    relative_error_percent: f64,
                }
                if let Err(e) = io::write_report_json(path, &EvalResult { relative_error_percent: err })
                {
                    eprintln!("error: evaluate: {e}");
                    return 3;
                }
            }
            0
        }
        Err(e @ PipelineError::Stage { .. }) => {
            eprintln!("error: {e}");
            3
        }
        Err(e @ PipelineError::DiscoveryFailed(_)) => {
            eprintln!("error: {e}");
            4
        }
    }
}

fn report(path: &PathBuf) -> u8 {
    let value = match io::read_report_value(path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    let text = |key: &str| value.get(key).and_then(|v| v.as_str()).unwrap_or("?").to_string();
    println!("command:  {}", text("command"));
    println!("pde:      {}", text("pde"));
    println!("profile:  {}", text("profile"));
    if let Some(s) = value.get("surrogate").filter(|v| !v.is_null()) {
        let epochs = s.get("epochs_run").and_then(|v| v.as_u64()).unwrap_or(0);
        let val = s.get("val_mse").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        println!("surrogate: {epochs} epochs, validation mse {val:.3e}");
    }
    if let Some(d) = value.get("discovered").filter(|v| !v.is_null()) {
        if let Some(r) = d.get("rendered").and_then(|v| v.as_str()) {
            println!("model:    {r}");
        }
    }
    if let Some(e) = value.get("relative_error_percent").and_then(|v| v.as_f64()) {
        println!("error:    {e:.4}%");
    }
    if let Some(f) = value.get("failure").filter(|v| !v.is_null()).and_then(|v| v.as_str()) {
        println!("failure:  {f}");
    }
    if let Some(timings) = value.get("timings").and_then(|v| v.as_array()) {
        for t in timings {
            let stage = t.get("stage").and_then(|v| v.as_str()).unwrap_or("?");
            let secs = t.get("seconds").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            println!("  {stage:<9} {secs:>9.3}s");
        }
    }
    0
}
