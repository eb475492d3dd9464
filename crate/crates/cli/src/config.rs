//! Run configuration: a line-oriented `key = value` format with dotted
//! section prefixes, two named hyperparameter profiles, and `--set`
//! overrides.
//!
//! Grammar: blank lines and lines starting with `#` are ignored; every
//! other line is `key = value` where the key is one of the dotted names
//! listed in [`RunConfig::canonical_lines`]. The `profile` key is resolved
//! first (last occurrence wins) and fills in every default; remaining keys
//! then apply in file order, and `--set key=value` overrides apply last.

use std::path::{Path, PathBuf};

use eqdisc_core::{EvolutionConfig, MutationRates, RefineConfig, TrainConfig};
use thiserror::Error;

use crate::solvers::Benchmark;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{at}: {msg}")]
    Parse { at: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Full-scale hyperparameters from the benchmark study.
    Paper,
    /// Reduced settings sized for continuous integration on a workstation.
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }

    pub fn parse(text: &str) -> Option<Profile> {
        match text {
            "paper" => Some(Profile::Paper),
            "desk" => Some(Profile::Desk),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// 0 samples the full grid.
    pub n_samples: usize,
    pub noise_gamma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateConfig {
    /// Hidden width; the network is 2 -> width x3 -> 1.
    pub width: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetaGridSpec {
    pub nx: usize,
    pub nt: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub pde: Benchmark,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub surrogate: SurrogateConfig,
    pub meta: MetaGridSpec,
    pub evolution: EvolutionConfig,
    pub refine: RefineConfig,
}

impl RunConfig {
    /// Every default under the given profile.
    pub fn profile_defaults(profile: Profile) -> RunConfig {
        let (width, epochs, meta, population, generations, refine_epochs, lasso_epochs, samples) =
            match profile {
                Profile::Paper => (50, 50_000, MetaGridSpec { nx: 400, nt: 300 }, 400, 100, 20_000, 1000, 0),
                Profile::Desk => (30, 20_000, MetaGridSpec { nx: 120, nt: 90 }, 100, 30, 8000, 200, 2500),
            };
        RunConfig {
            profile,
            pde: Benchmark::Kdv,
            output_dir: PathBuf::from("out"),
            data: DataConfig { n_samples: samples, noise_gamma: 0.0, seed: 1 },
            surrogate: SurrogateConfig {
                width,
                train: TrainConfig {
                    max_epochs: epochs,
                    learning_rate: 1e-3,
                    batch_size: None,
                    validation_fraction: 0.2,
                    patience: 500,
                    seed: 2,
                },
            },
            meta,
            evolution: EvolutionConfig {
                population,
                generations,
                crossover_rate: 0.8,
                rates: MutationRates::default(),
                epsilon: 0.1,
                fd_margin: 3,
                max_initial_modules: 2,
                max_initial_inner: 2,
                order_cap: 3,
                seed: 3,
            },
            refine: RefineConfig {
                max_epochs: refine_epochs,
                lasso_epochs,
                lasso_alpha: 1e-4,
                threshold: 1e-4,
                lambda_data: 1.0,
                lambda_pde: 1.0,
                learning_rate: 1e-4,
                seed: 0,
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), source: e })?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    /// Parses config text; `source` names the origin in error messages.
    pub fn parse(text: &str, source: &str) -> Result<RunConfig, ConfigError> {
        let mut profile = Profile::Desk;
        for (line_no, line) in config_lines(text) {
            let (key, value) = split_key_value(line, source, line_no)?;
            if key == "profile" {
                profile = Profile::parse(value).ok_or_else(|| ConfigError::Parse {
                    at: format!("{source}:{line_no}"),
                    msg: format!("unknown profile {value:?} (expected paper or desk)"),
                })?;
            }
        }
        let mut cfg = RunConfig::profile_defaults(profile);
        for (line_no, line) in config_lines(text) {
            let (key, value) = split_key_value(line, source, line_no)?;
            cfg.apply(key, value, &format!("{source}:{line_no}"))?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` override strings in order.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for (idx, s) in sets.iter().enumerate() {
            let at = format!("--set #{}", idx + 1);
            let (key, value) = s.split_once('=').ok_or_else(|| ConfigError::Parse {
                at: at.clone(),
                msg: format!("expected key=value, found {s:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "profile" {
                return Err(ConfigError::Parse {
                    at,
                    msg: "profile picks the defaults and must be set in the config file"
                        .to_string(),
                });
            }
            self.apply(key, value, &at)?;
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str, at: &str) -> Result<(), ConfigError> {
        let err = |msg: String| ConfigError::Parse { at: at.to_string(), msg };
        let parse_f64 = |v: &str| -> Result<f64, ConfigError> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("{key}: expected a number, found {v:?}")))
        };
        let parse_usize = |v: &str| -> Result<usize, ConfigError> {
            v.parse::<usize>().map_err(|_| err(format!("{key}: expected a count, found {v:?}")))
        };
        let parse_u64 = |v: &str| -> Result<u64, ConfigError> {
            v.parse::<u64>().map_err(|_| err(format!("{key}: expected a seed, found {v:?}")))
        };
        match key {
            "profile" => {
                // resolved in the pre-scan; nothing left to do here
            }
            "pde" => {
                self.pde = Benchmark::parse(value).ok_or_else(|| {
                    err(format!("unknown pde {value:?} (expected kdv, ks, or burgers)"))
                })?;
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "data.n_samples" => self.data.n_samples = parse_usize(value)?,
            "data.noise_gamma" => self.data.noise_gamma = parse_f64(value)?,
            "data.seed" => self.data.seed = parse_u64(value)?,
            "surrogate.width" => self.surrogate.width = parse_usize(value)?,
            "surrogate.max_epochs" => self.surrogate.train.max_epochs = parse_usize(value)?,
            "surrogate.learning_rate" => self.surrogate.train.learning_rate = parse_f64(value)?,
            "surrogate.batch_size" => {
                let n = parse_usize(value)?;
                self.surrogate.train.batch_size = if n == 0 { None } else { Some(n) };
            }
            "surrogate.validation_fraction" => {
                self.surrogate.train.validation_fraction = parse_f64(value)?;
            }
            "surrogate.patience" => self.surrogate.train.patience = parse_usize(value)?,
            "surrogate.seed" => self.surrogate.train.seed = parse_u64(value)?,
            "meta.nx" => self.meta.nx = parse_usize(value)?,
            "meta.nt" => self.meta.nt = parse_usize(value)?,
            "evolution.population" => self.evolution.population = parse_usize(value)?,
            "evolution.generations" => self.evolution.generations = parse_usize(value)?,
            "evolution.crossover_rate" => self.evolution.crossover_rate = parse_f64(value)?,
            "evolution.delete_mutation" => self.evolution.rates.delete = parse_f64(value)?,
            "evolution.basic_mutation" => self.evolution.rates.basic = parse_f64(value)?,
            "evolution.order_mutation" => self.evolution.rates.order = parse_f64(value)?,
            "evolution.add_mutation" => self.evolution.rates.add = parse_f64(value)?,
            "evolution.epsilon" => self.evolution.epsilon = parse_f64(value)?,
            "evolution.fd_margin" => self.evolution.fd_margin = parse_usize(value)?,
            "evolution.max_initial_modules" => {
                self.evolution.max_initial_modules = parse_usize(value)?;
            }
            "evolution.max_initial_inner" => {
                self.evolution.max_initial_inner = parse_usize(value)?;
            }
            "evolution.order_cap" => {
                let cap = parse_usize(value)?;
                if cap > 3 {
                    return Err(err(format!("evolution.order_cap: {cap} is above the maximum 3")));
                }
                self.evolution.order_cap = cap as u8;
            }
            "evolution.seed" => self.evolution.seed = parse_u64(value)?,
            "refine.max_epochs" => self.refine.max_epochs = parse_usize(value)?,
            "refine.lasso_epochs" => self.refine.lasso_epochs = parse_usize(value)?,
            "refine.lasso_alpha" => self.refine.lasso_alpha = parse_f64(value)?,
            "refine.threshold" => self.refine.threshold = parse_f64(value)?,
            "refine.lambda_data" => self.refine.lambda_data = parse_f64(value)?,
            "refine.lambda_pde" => self.refine.lambda_pde = parse_f64(value)?,
            "refine.learning_rate" => self.refine.learning_rate = parse_f64(value)?,
            "refine.seed" => self.refine.seed = parse_u64(value)?,
            _ => return Err(err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks every cross-field constraint before any compute starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.data.noise_gamma < 0.0 {
            return fail(format!("data.noise_gamma must be >= 0, got {}", self.data.noise_gamma));
        }
        if self.surrogate.width == 0 {
            return fail("surrogate.width must be at least 1".to_string());
        }
        if self.surrogate.train.max_epochs == 0 {
            return fail("surrogate.max_epochs must be at least 1".to_string());
        }
        let vf = self.surrogate.train.validation_fraction;
        if !(0.0..1.0).contains(&vf) {
            return fail(format!("surrogate.validation_fraction must lie in [0, 1), got {vf}"));
        }
        if self.surrogate.train.learning_rate <= 0.0 {
            return fail("surrogate.learning_rate must be positive".to_string());
        }
        for (name, rate) in [
            ("evolution.crossover_rate", self.evolution.crossover_rate),
            ("evolution.delete_mutation", self.evolution.rates.delete),
            ("evolution.basic_mutation", self.evolution.rates.basic),
            ("evolution.order_mutation", self.evolution.rates.order),
            ("evolution.add_mutation", self.evolution.rates.add),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return fail(format!("{name} must lie in [0, 1], got {rate}"));
            }
        }
        if self.evolution.epsilon < 0.0 {
            return fail("evolution.epsilon must be >= 0".to_string());
        }
        if self.evolution.population < 2 {
            return fail("evolution.population must be at least 2".to_string());
        }
        if self.evolution.generations == 0 {
            return fail("evolution.generations must be at least 1".to_string());
        }
        if self.meta.nx <= 2 * self.evolution.fd_margin {
            return fail(format!(
                "meta.nx = {} leaves no interior columns at fd_margin {}",
                self.meta.nx, self.evolution.fd_margin
            ));
        }
        if self.meta.nt < 2 {
            return fail("meta.nt must be at least 2".to_string());
        }
        if self.refine.lasso_epochs >= self.refine.max_epochs {
            return fail(format!(
                "refine.lasso_epochs ({}) must be below refine.max_epochs ({})",
                self.refine.lasso_epochs, self.refine.max_epochs
            ));
        }
        if self.refine.threshold <= 0.0 {
            return fail("refine.threshold must be positive".to_string());
        }
        if self.refine.lasso_alpha < 0.0 {
            return fail("refine.lasso_alpha must be >= 0".to_string());
        }
        if self.refine.learning_rate <= 0.0 {
            return fail("refine.learning_rate must be positive".to_string());
        }
        if self.refine.lambda_data < 0.0 || self.refine.lambda_pde < 0.0 {
            return fail("refine loss weights must be >= 0".to_string());
        }
        Ok(())
    }

    /// The full configuration as `key = value` lines in a fixed order.
    /// Parsing these lines reproduces the config exactly.
    pub fn canonical_lines(&self) -> Vec<String> {
        let batch = self.surrogate.train.batch_size.unwrap_or(0);
        vec![
            format!("profile = {}", self.profile.name()),
            format!("pde = {}", self.pde.name()),
            format!("output_dir = {}", self.output_dir.display()),
            format!("data.n_samples = {}", self.data.n_samples),
            format!("data.noise_gamma = {}", self.data.noise_gamma),
            format!("data.seed = {}", self.data.seed),
            format!("surrogate.width = {}", self.surrogate.width),
            format!("surrogate.max_epochs = {}", self.surrogate.train.max_epochs),
            format!("surrogate.learning_rate = {}", self.surrogate.train.learning_rate),
            format!("surrogate.batch_size = {batch}"),
            format!(
                "surrogate.validation_fraction = {}",
                self.surrogate.train.validation_fraction
            ),
            format!("surrogate.patience = {}", self.surrogate.train.patience),
            format!("surrogate.seed = {}", self.surrogate.train.seed),
            format!("meta.nx = {}", self.meta.nx),
            format!("meta.nt = {}", self.meta.nt),
            format!("evolution.population = {}", self.evolution.population),
            format!("evolution.generations = {}", self.evolution.generations),
            format!("evolution.crossover_rate = {}", self.evolution.crossover_rate),
            format!("evolution.delete_mutation = {}", self.evolution.rates.delete),
            format!("evolution.basic_mutation = {}", self.evolution.rates.basic),
            format!("evolution.order_mutation = {}", self.evolution.rates.order),
            format!("evolution.add_mutation = {}", self.evolution.rates.add),
            format!("evolution.epsilon = {}", self.evolution.epsilon),
            format!("evolution.fd_margin = {}", self.evolution.fd_margin),
            format!("evolution.max_initial_modules = {}", self.evolution.max_initial_modules),
            format!("evolution.max_initial_inner = {}", self.evolution.max_initial_inner),
            format!("evolution.order_cap = {}", self.evolution.order_cap),
            format!("evolution.seed = {}", self.evolution.seed),
            format!("refine.max_epochs = {}", self.refine.max_epochs),
            format!("refine.lasso_epochs = {}", self.refine.lasso_epochs),
            format!("refine.lasso_alpha = {}", self.refine.lasso_alpha),
            format!("refine.threshold = {}", self.refine.threshold),
            format!("refine.lambda_data = {}", self.refine.lambda_data),
            format!("refine.lambda_pde = {}", self.refine.lambda_pde),
            format!("refine.learning_rate = {}", self.refine.learning_rate),
            format!("refine.seed = {}", self.refine.seed),
        ]
    }
}

fn config_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn split_key_value<'a>(
    line: &'a str,
    source: &str,
    line_no: usize,
) -> Result<(&'a str, &'a str), ConfigError> {
    line.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| ConfigError::Parse {
            at: format!("{source}:{line_no}"),
            msg: format!("expected key = value, found {line:?}"),
        })
}
