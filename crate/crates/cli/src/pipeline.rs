//! The batch pipeline: solve a benchmark, sample and perturb observations,
//! train the surrogate, tabulate derivatives, evolve candidate structures,
//! refine, and score the result against the reference solution.
//!
//! Every stage writes its artifact under the run's output directory with a
//! fixed name, and `report.json` is written on success and on failure alike
//! (recording the completed stages and the error). Reports are byte-stable
//! across reruns of the same config except for the timing values.

use std::path::{Path, PathBuf};
use std::time::Instant;

use eqdisc_core::{
    add_noise, build_meta, evaluate_term, evolve, ols, refine, render, sample_random, stridge,
    train_surrogate, trimmed_target, CoefficientTrack, DesignMatrix, DiscoveredPDE, GeneModule,
    Network, NoiseSpec, RefineDiagnostics, RefineError, SampleSet, SpaceTimeGrid,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::io::{self, NetworkCheckpoint, TermJson, TrainingSummary};
use crate::solvers::{self, PeriodicIC, RHSSpec};

pub const FIELD_FILE: &str = "field.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SURROGATE_FILE: &str = "surrogate.json";
pub const META_FILE: &str = "meta.csv";
pub const EVOLUTION_FILE: &str = "evolution.jsonl";
pub const DISCOVERED_FILE: &str = "discovered.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A stage failed; maps to exit code 3.
    #[error("stage {stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
    /// Refinement or thresholding removed every term; exit code 4.
    #[error("discovery failed: {0}")]
    DiscoveryFailed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Full run: evolution followed by refinement.
    Discover,
    /// Sequential thresholded ridge over a fixed simple-form library.
    Stridge,
    /// Evolution restricted to simple forms, coefficients by least squares,
    /// no refinement stage.
    CommonGa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Discover => "discover",
            Method::Stridge => "baseline stridge",
            Method::CommonGa => "baseline common_ga",
        }
    }

    pub fn parse_baseline(name: &str) -> Option<Method> {
        match name {
            "stridge" => Some(Method::Stridge),
            "common_ga" => Some(Method::CommonGa),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSummary {
    pub data: u64,
    pub surrogate: u64,
    pub evolution: u64,
    pub refine: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolutionSummary {
    pub generations: usize,
    pub best_fitness: f64,
    pub best_genome: String,
    pub best_coefficients: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoveredSummary {
    pub terms: Vec<TermJson>,
    pub rendered: String,
}

/// The run report. Field order is the serialization order; timings and
/// seeds are always present, timing values are the only non-deterministic
/// content.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub pde: String,
    pub profile: String,
    pub config: Vec<String>,
    pub seeds: SeedSummary,
    pub timings: Vec<StageTiming>,
    pub surrogate: Option<TrainingSummary>,
    pub evolution: Option<EvolutionSummary>,
    pub discovered: Option<DiscoveredSummary>,
    pub relative_error_percent: Option<f64>,
    pub failure: Option<String>,
}

impl RunReport {
    fn skeleton(cfg: &RunConfig, method: Method) -> RunReport {
        RunReport {
            command: method.name().to_string(),
            pde: cfg.pde.name().to_string(),
            profile: cfg.profile.name().to_string(),
            config: cfg.canonical_lines(),
            seeds: SeedSummary {
                data: cfg.data.seed,
                surrogate: cfg.surrogate.train.seed,
                evolution: cfg.evolution.seed,
                refine: cfg.refine.seed,
            },
            timings: Vec::new(),
            surrogate: None,
            evolution: None,
            discovered: None,
            relative_error_percent: None,
            failure: None,
        }
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    report: RunReport,
    clock: Option<Instant>,
}

impl<'a> Run<'a> {
    fn begin(&mut self, stage: &'static str) {
        eprintln!("[{}] {stage}", self.report.pde);
        self.clock = Some(Instant::now());
        self.report.timings.push(StageTiming { stage: stage.to_string(), seconds: 0.0 });
    }

    fn done(&mut self) {
        let elapsed = self.clock.take().expect("stage started").elapsed().as_secs_f64();
        self.report.timings.last_mut().expect("stage started").seconds = elapsed;
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn fail(&mut self, err: PipelineError) -> PipelineError {
        // drop the unfinished timing entry so the report lists completed
        // stages only, then record the failure next to it
        if self.clock.take().is_some() {
            self.report.timings.pop();
        }
        self.report.failure = Some(err.to_string());
        let _ = io::write_report_json(&self.path(REPORT_FILE), &self.report);
        err
    }
}

fn stage_err(stage: &'static str, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage { stage, msg: err.to_string() }
}

/// Runs the full pipeline (or a baseline variant) and writes all artifacts
/// under `cfg.output_dir`. The report is written even when a stage fails.
pub fn run_pipeline(cfg: &RunConfig, method: Method) -> Result<RunReport, PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| stage_err("setup", e))?;
    let mut run = Run {
        cfg,
        dir: cfg.output_dir.clone(),
        report: RunReport::skeleton(cfg, method),
        clock: None,
    };
    match drive(&mut run, method) {
        Ok(()) => {
            io::write_report_json(&run.path(REPORT_FILE), &run.report)
                .map_err(|e| stage_err("report", e))?;
            Ok(run.report)
        }
        Err(e) => Err(run.fail(e)),
    }
}

fn drive(run: &mut Run, method: Method) -> Result<(), PipelineError> {
    let cfg = run.cfg;

    run.begin("generate");
    let grid = cfg.pde.grid();
    let truth = solvers::solve_benchmark(cfg.pde, &grid).map_err(|e| stage_err("generate", e))?;
    io::write_field(&run.path(FIELD_FILE), &truth).map_err(|e| stage_err("generate", e))?;
    run.done();

    run.begin("sample");
    let n = if cfg.data.n_samples == 0 { grid.len() } else { cfg.data.n_samples };
    let clean = sample_random(&truth, n, cfg.data.seed).map_err(|e| stage_err("sample", e))?;
    let spec = NoiseSpec { gamma: cfg.data.noise_gamma, seed: cfg.data.seed };
    let samples = add_noise(&clean, &spec).map_err(|e| stage_err("sample", e))?;
    io::write_samples(&run.path(SAMPLES_FILE), &samples).map_err(|e| stage_err("sample", e))?;
    run.done();

    run.begin("train");
    let ((x_lo, x_hi), (t_lo, t_hi)) =
        samples.bounds().ok_or_else(|| stage_err("train", "no samples to fit"))?;
    let scale = (half_range(x_lo, x_hi), half_range(t_lo, t_hi));
    let w = cfg.surrogate.width;
    let mut net = Network::with_input_scale(&[2, w, w, w, 1], cfg.surrogate.train.seed, scale)
        .map_err(|e| stage_err("train", e))?;
    let trained =
        train_surrogate(&mut net, &samples, &cfg.surrogate.train).map_err(|e| stage_err("train", e))?;
    let checkpoint = NetworkCheckpoint::of(&net, cfg.surrogate.train.seed, &trained);
    io::write_network(&run.path(SURROGATE_FILE), &checkpoint).map_err(|e| stage_err("train", e))?;
    run.report.surrogate = Some(TrainingSummary::from(&trained));
    run.done();

    run.begin("meta");
    let meta_grid = span_grid(x_lo, x_hi, cfg.meta.nx, t_lo, t_hi, cfg.meta.nt)
        .map_err(|e| stage_err("meta", e))?;
    let meta = build_meta(&net, &meta_grid, 3).map_err(|e| stage_err("meta", e))?;
    io::write_meta(&run.path(META_FILE), &meta).map_err(|e| stage_err("meta", e))?;
    run.done();

    let discovered = match method {
        Method::Discover => {
            run.begin("evolve");
            let evo = evolve(&meta, &cfg.evolution).map_err(|e| stage_err("evolve", e))?;
            io::write_evolution_log(&run.path(EVOLUTION_FILE), &evo.log)
                .map_err(|e| stage_err("evolve", e))?;
            run.report.evolution = Some(EvolutionSummary {
                generations: cfg.evolution.generations,
                best_fitness: evo.best.fitness,
                best_genome: evo.best.genome.to_string(),
                best_coefficients: evo.best.coefficients.clone(),
            });
            run.done();

            run.begin("refine");
            let pde = match refine(&net, &samples, &evo.best.genome, &cfg.refine) {
                Ok((pde, _tuned)) => pde,
                Err(RefineError::EmptyModel(diag)) => {
                    let empty = DiscoveredPDE::new(Vec::new(), diag);
                    let _ = io::write_discovered(&run.path(DISCOVERED_FILE), &empty);
                    return Err(PipelineError::DiscoveryFailed(
                        "refinement pruned every candidate term".to_string(),
                    ));
                }
                Err(e) => return Err(stage_err("refine", e)),
            };
            io::write_discovered(&run.path(DISCOVERED_FILE), &pde)
                .map_err(|e| stage_err("refine", e))?;
            run.done();
            pde
        }
        Method::Stridge => {
            run.begin("fit");
            let pde = stridge_baseline(run.cfg, &net, &samples, &meta)?;
            io::write_discovered(&run.path(DISCOVERED_FILE), &pde)
                .map_err(|e| stage_err("fit", e))?;
            run.done();
            pde
        }
        Method::CommonGa => {
            run.begin("evolve");
            let mut evo_cfg = cfg.evolution.clone();
            evo_cfg.order_cap = 0;
            evo_cfg.rates.order = 0.0;
            let evo = evolve(&meta, &evo_cfg).map_err(|e| stage_err("evolve", e))?;
            io::write_evolution_log(&run.path(EVOLUTION_FILE), &evo.log)
                .map_err(|e| stage_err("evolve", e))?;
            run.report.evolution = Some(EvolutionSummary {
                generations: evo_cfg.generations,
                best_fitness: evo.best.fitness,
                best_genome: evo.best.genome.to_string(),
                best_coefficients: evo.best.coefficients.clone(),
            });
            let pde = common_ga_model(run.cfg, &net, &samples, &meta, &evo.best)?;
            io::write_discovered(&run.path(DISCOVERED_FILE), &pde)
                .map_err(|e| stage_err("evolve", e))?;
            run.done();
            pde
        }
    };

    run.report.discovered = Some(DiscoveredSummary {
        terms: discovered
            .terms
            .iter()
            .map(|(m, c)| TermJson { genome_text: m.to_string(), coefficient: *c })
            .collect(),
        rendered: render(&discovered),
    });

    run.begin("evaluate");
    let rhs = RHSSpec::from_terms(&discovered.terms).map_err(|e| stage_err("evaluate", e))?;
    let ic = PeriodicIC { values: truth.time_slice(0) };
    let candidate =
        solvers::solve_generic(&rhs, &ic, &truth.grid).map_err(|e| stage_err("evaluate", e))?;
    let err = solvers::relative_error(&truth, &candidate).map_err(|e| stage_err("evaluate", e))?;
    run.report.relative_error_percent = Some(err);
    run.done();

    Ok(())
}

fn half_range(lo: f64, hi: f64) -> f64 {
    let h = (hi - lo) / 2.0;
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// A regular grid spanning the closed box `[x_lo, x_hi] x [t_lo, t_hi]`.
fn span_grid(
    x_lo: f64,
    x_hi: f64,
    nx: usize,
    t_lo: f64,
    t_hi: f64,
    nt: usize,
) -> Result<SpaceTimeGrid, String> {
    if x_hi <= x_lo || t_hi <= t_lo {
        return Err(format!(
            "samples span a degenerate box x=[{x_lo}, {x_hi}], t=[{t_lo}, {t_hi}]"
        ));
    }
    Ok(SpaceTimeGrid::new(
        x_lo,
        (x_hi - x_lo) / (nx - 1) as f64,
        nx,
        t_lo,
        (t_hi - t_lo) / (nt - 1) as f64,
        nt,
    ))
}

/// The fixed simple-form library for the regression baseline.
pub fn stridge_library() -> Vec<GeneModule> {
    [
        (&[0u8][..], 0u8),
        (&[1][..], 0),
        (&[2][..], 0),
        (&[3][..], 0),
        (&[0, 1][..], 0),
        (&[0, 0, 1][..], 0),
        (&[0, 2][..], 0),
        (&[1, 1][..], 0),
        (&[1, 1, 1][..], 0),
    ]
    .iter()
    .map(|(genes, order)| GeneModule::from_orders(genes, *order).expect("library in range"))
    .collect()
}

const STRIDGE_RIDGE: f64 = 1e-5;
const STRIDGE_TOL: f64 = 1e-4;
const STRIDGE_ITERS: usize = 25;

fn stridge_baseline(
    cfg: &RunConfig,
    net: &Network,
    samples: &SampleSet,
    meta: &eqdisc_core::MetaTable,
) -> Result<DiscoveredPDE, PipelineError> {
    let library = stridge_library();
    let margin = cfg.evolution.fd_margin;
    let mut cols = Vec::with_capacity(library.len());
    let mut labels = Vec::with_capacity(library.len());
    for module in &library {
        cols.push(evaluate_term(module, meta, margin).map_err(|e| stage_err("fit", e))?);
        labels.push(module.to_string());
    }
    let y = trimmed_target(meta, margin).map_err(|e| stage_err("fit", e))?;
    let design = DesignMatrix::new(cols, labels).map_err(|e| stage_err("fit", e))?;
    let full = ols(&design, &y);
    let outcome = stridge(&design, &y, STRIDGE_RIDGE, STRIDGE_TOL, STRIDGE_ITERS);
    if outcome.empty_model {
        return Err(PipelineError::DiscoveryFailed(
            "thresholding removed every library term".to_string(),
        ));
    }
    let terms: Vec<(GeneModule, f64)> = outcome
        .support
        .iter()
        .map(|&j| (library[j].clone(), outcome.beta[j]))
        .collect();
    let pts: Vec<(f64, f64, f64)> = samples.records.iter().map(|r| (r.x, r.t, r.u)).collect();
    let data_mse = net.data_mse(&pts);
    let n = y.len() as f64;
    let final_res = {
        let kept: Vec<Vec<f64>> = outcome
            .support
            .iter()
            .map(|&j| evaluate_term(&library[j], meta, margin).expect("already evaluated"))
            .collect();
        let kept_labels: Vec<String> =
            outcome.support.iter().map(|&j| library[j].to_string()).collect();
        let d = DesignMatrix::new(kept, kept_labels).map_err(|e| stage_err("fit", e))?;
        ols(&d, &y).residual_norm.powi(2) / n
    };
    let pruned: Vec<(GeneModule, usize)> = (0..library.len())
        .filter(|j| !outcome.support.contains(j))
        .map(|j| (library[j].clone(), 0))
        .collect();
    let history: Vec<CoefficientTrack> = library
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let first = full.beta[j];
            let last = outcome.beta[j];
            CoefficientTrack {
                module: m.clone(),
                first,
                min: first.min(last),
                max: first.max(last),
                last,
            }
        })
        .collect();
    let diagnostics = RefineDiagnostics {
        initial_data_mse: data_mse,
        initial_pde_mse: full.residual_norm.powi(2) / n,
        final_data_mse: data_mse,
        final_pde_mse: final_res,
        pruned,
        coefficient_history: history,
    };
    Ok(DiscoveredPDE::new(terms, diagnostics))
}

fn common_ga_model(
    cfg: &RunConfig,
    net: &Network,
    samples: &SampleSet,
    meta: &eqdisc_core::MetaTable,
    best: &eqdisc_core::Individual,
) -> Result<DiscoveredPDE, PipelineError> {
    let margin = cfg.evolution.fd_margin;
    let modules = best.genome.modules();
    let mut cols = Vec::with_capacity(modules.len());
    let mut labels = Vec::with_capacity(modules.len());
    for module in modules {
        cols.push(evaluate_term(module, meta, margin).map_err(|e| stage_err("evolve", e))?);
        labels.push(module.to_string());
    }
    let y = trimmed_target(meta, margin).map_err(|e| stage_err("evolve", e))?;
    let design = DesignMatrix::new(cols, labels).map_err(|e| stage_err("evolve", e))?;
    let fit = ols(&design, &y);
    let pts: Vec<(f64, f64, f64)> = samples.records.iter().map(|r| (r.x, r.t, r.u)).collect();
    let data_mse = net.data_mse(&pts);
    let pde_mse = fit.residual_norm.powi(2) / y.len() as f64;
    let history: Vec<CoefficientTrack> = modules
        .iter()
        .zip(&fit.beta)
        .map(|(m, &b)| CoefficientTrack { module: m.clone(), first: b, min: b, max: b, last: b })
        .collect();
    let terms: Vec<(GeneModule, f64)> =
        modules.iter().cloned().zip(fit.beta.iter().copied()).collect();
    let diagnostics = RefineDiagnostics {
        initial_data_mse: data_mse,
        initial_pde_mse: pde_mse,
        final_data_mse: data_mse,
        final_pde_mse: pde_mse,
        pruned: Vec::new(),
        coefficient_history: history,
    };
    Ok(DiscoveredPDE::new(terms, diagnostics))
}

/// Re-solves a saved equation from the truth's initial slice and returns
/// the relative error percentage.
pub fn evaluate_files(truth_path: &Path, discovered_path: &Path) -> Result<f64, PipelineError> {
    let truth = io::read_field(truth_path).map_err(|e| stage_err("evaluate", e))?;
    let loaded = io::read_discovered(discovered_path).map_err(|e| stage_err("evaluate", e))?;
    let terms = loaded
        .terms_as_modules()
        .map_err(|e| PipelineError::Stage { stage: "evaluate", msg: e })?;
    if terms.is_empty() {
        return Err(PipelineError::DiscoveryFailed("the saved model has no terms".to_string()));
    }
    let rhs = RHSSpec::from_terms(&terms).map_err(|e| stage_err("evaluate", e))?;
    let ic = PeriodicIC { values: truth.time_slice(0) };
    let candidate =
        solvers::solve_generic(&rhs, &ic, &truth.grid).map_err(|e| stage_err("evaluate", e))?;
    solvers::relative_error(&truth, &candidate).map_err(|e| stage_err("evaluate", e))
}
