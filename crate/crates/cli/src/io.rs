//! File formats for every pipeline artifact: field and sample CSVs,
//! network checkpoints, meta-data tables, evolution logs, and the
//! discovered-equation JSON.
//!
//! Numeric text is written with 17 significant digits so float round-trips
//! are bit-exact. Parsers report the offending line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use eqdisc_core::{
    DiscoveredPDE, Field, GeneModule, GenerationLog, Genome, Network, RefineDiagnostics, Sample,
    SampleSet, SpaceTimeGrid, TrainReport,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}

impl IoError {
    fn file(path: &Path, source: std::io::Error) -> IoError {
        IoError::File { path: path.display().to_string(), source }
    }

    fn parse(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
        IoError::Parse { path: path.display().to_string(), line, msg: msg.into() }
    }
}

/// 17 significant digits: enough for any f64 to survive a text round trip.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(path: &Path, line: usize, text: &str, what: &str) -> Result<f64, IoError> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| IoError::parse(path, line, format!("{what}: not a number: {text:?}")))?;
    if !v.is_finite() {
        return Err(IoError::parse(path, line, format!("{what}: non-finite value {text:?}")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: usize, text: &str, what: &str) -> Result<usize, IoError> {
    text.trim()
        .parse()
        .map_err(|_| IoError::parse(path, line, format!("{what}: not a count: {text:?}")))
}

// ---------------------------------------------------------------------------
// Field CSV

/// Writes `# field nx=.. nt=.. x0=.. dx=.. t0=.. dt=..` then one `i,j,u`
/// row per grid point.
pub fn write_field(path: &Path, field: &Field) -> Result<(), IoError> {
    let g = &field.grid;
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "# field nx={} nt={} x0={} dx={} t0={} dt={}\n",
        g.nx,
        g.nt,
        fmt_f64(g.x0),
        fmt_f64(g.dx),
        fmt_f64(g.t0),
        fmt_f64(g.dt)
    );
    let mut out = String::with_capacity(header.len() + g.len() * 32);
    out.push_str(&header);
    for i in 0..g.nx {
        for j in 0..g.nt {
            out.push_str(&format!("{i},{j},{}\n", fmt_f64(field.at(i, j))));
        }
    }
    w.write_all(out.as_bytes()).map_err(|e| IoError::file(path, e))?;
    w.flush().map_err(|e| IoError::file(path, e))
}

fn parse_field_header(path: &Path, line: &str) -> Result<SpaceTimeGrid, IoError> {
    let body = line
        .strip_prefix("# field ")
        .ok_or_else(|| IoError::parse(path, 1, "expected header starting with \"# field \""))?;
    let mut pairs = body.split_whitespace();
    let mut take = |key: &str| -> Result<String, IoError> {
        let tok = pairs
            .next()
            .ok_or_else(|| IoError::parse(path, 1, format!("missing header entry {key}=")))?;
        tok.strip_prefix(&format!("{key}="))
            .map(str::to_owned)
            .ok_or_else(|| IoError::parse(path, 1, format!("expected {key}=, found {tok:?}")))
    };
    let nx = parse_usize(path, 1, &take("nx")?, "nx")?;
    let nt = parse_usize(path, 1, &take("nt")?, "nt")?;
    let x0 = parse_f64(path, 1, &take("x0")?, "x0")?;
    let dx = parse_f64(path, 1, &take("dx")?, "dx")?;
    let t0 = parse_f64(path, 1, &take("t0")?, "t0")?;
    let dt = parse_f64(path, 1, &take("dt")?, "dt")?;
    if nx < 2 || nt < 2 {
        return Err(IoError::parse(path, 1, format!("grid too small: nx={nx} nt={nt}")));
    }
    if dx <= 0.0 || dt <= 0.0 {
        return Err(IoError::parse(path, 1, format!("spacings must be positive: dx={dx} dt={dt}")));
    }
    Ok(SpaceTimeGrid::new(x0, dx, nx, t0, dt, nt))
}

pub fn read_field(path: &Path) -> Result<Field, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| IoError::parse(path, 1, "empty file"))?
        .map_err(|e| IoError::file(path, e))?;
    let grid = parse_field_header(path, &header)?;
    let (nx, nt) = (grid.nx, grid.nt);
    let mut values = vec![0.0; nx * nt];
    let mut seen = vec![false; nx * nt];
    let mut rows = 0usize;
    let mut line_no = 1usize;
    for line in lines {
        line_no += 1;
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.splitn(3, ',');
        let mut cell = |what: &str| {
            cells
                .next()
                .ok_or_else(|| IoError::parse(path, line_no, format!("missing {what} cell")))
        };
        let i = parse_usize(path, line_no, cell("i")?, "i")?;
        let j = parse_usize(path, line_no, cell("j")?, "j")?;
        let u = parse_f64(path, line_no, cell("u")?, "u")?;
        if i >= nx || j >= nt {
            return Err(IoError::parse(
                path,
                line_no,
                format!("index ({i},{j}) outside the {nx}x{nt} grid"),
            ));
        }
        let flat = i * nt + j;
        if seen[flat] {
            return Err(IoError::parse(path, line_no, format!("duplicate cell ({i},{j})")));
        }
        seen[flat] = true;
        values[flat] = u;
        rows += 1;
    }
    if rows != nx * nt {
        return Err(IoError::parse(
            path,
            line_no + 1,
            format!("expected {} data rows, found {rows}", nx * nt),
        ));
    }
    Field::new(grid, values)
        .map_err(|e| IoError::parse(path, 1, format!("inconsistent field: {e}")))
}

// ---------------------------------------------------------------------------
// SampleSet CSV

/// Writes the `x,t,u` header then one row per record.
pub fn write_samples(path: &Path, samples: &SampleSet) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = String::with_capacity(6 + samples.len() * 72);
    out.push_str("x,t,u\n");
    for r in &samples.records {
        out.push_str(&format!("{},{},{}\n", fmt_f64(r.x), fmt_f64(r.t), fmt_f64(r.u)));
    }
    w.write_all(out.as_bytes()).map_err(|e| IoError::file(path, e))?;
    w.flush().map_err(|e| IoError::file(path, e))
}

pub fn read_samples(path: &Path) -> Result<SampleSet, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| IoError::parse(path, 1, "empty file"))?
        .map_err(|e| IoError::file(path, e))?;
    if header.trim() != "x,t,u" {
        return Err(IoError::parse(path, 1, format!("expected header \"x,t,u\", found {header:?}")));
    }
    let mut records = Vec::new();
    let mut line_no = 1usize;
    for line in lines {
        line_no += 1;
        let line = line.map_err(|e| IoError::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.splitn(3, ',');
        let mut cell = |what: &str| {
            cells
                .next()
                .ok_or_else(|| IoError::parse(path, line_no, format!("missing {what} cell")))
        };
        let x = parse_f64(path, line_no, cell("x")?, "x")?;
        let t = parse_f64(path, line_no, cell("t")?, "t")?;
        let u = parse_f64(path, line_no, cell("u")?, "u")?;
        records.push(Sample { x, t, u });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        (records[a].x, records[a].t)
            .partial_cmp(&(records[b].x, records[b].t))
            .expect("finite coordinates")
    });
    for pair in order.windows(2) {
        let (a, b) = (&records[pair[0]], &records[pair[1]]);
        if a.x == b.x && a.t == b.t {
            return Err(IoError::parse(
                path,
                pair[1] + 2,
                format!("duplicate sample position ({}, {})", a.x, a.t),
            ));
        }
    }
    Ok(SampleSet { records })
}

// ---------------------------------------------------------------------------
// Network checkpoint JSON

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

impl From<&TrainReport> for TrainingSummary {
    fn from(r: &TrainReport) -> Self {
        TrainingSummary {
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            train_mse: r.train_mse,
            val_mse: r.val_mse,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub sizes: Vec<usize>,
    /// Row-major `sizes[l+1] x sizes[l]` matrices, one per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
    pub training: TrainingSummary,
}

impl NetworkCheckpoint {
    pub fn of(net: &Network, seed: u64, report: &TrainReport) -> NetworkCheckpoint {
        let layers = net.num_layers();
        NetworkCheckpoint {
            sizes: net.sizes().to_vec(),
            weights: (0..layers).map(|l| net.layer_weights(l).to_vec()).collect(),
            biases: (0..layers).map(|l| net.layer_biases(l).to_vec()).collect(),
            seed,
            training: TrainingSummary::from(report),
        }
    }

    pub fn to_network(&self) -> Result<Network, String> {
        Network::from_parts(self.sizes.clone(), self.weights.clone(), self.biases.clone())
            .map_err(|e| e.to_string())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| IoError::parse(path, e.line().max(1), e.to_string()))?;
    w.write_all(b"\n").map_err(|e| IoError::file(path, e))?;
    w.flush().map_err(|e| IoError::file(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| IoError::parse(path, e.line().max(1), e.to_string()))
}

pub fn write_network(path: &Path, checkpoint: &NetworkCheckpoint) -> Result<(), IoError> {
    write_json(path, checkpoint)
}

pub fn read_network(path: &Path) -> Result<(Network, NetworkCheckpoint), IoError> {
    let cp: NetworkCheckpoint = read_json(path)?;
    let net = cp.to_network().map_err(|msg| IoError::parse(path, 1, msg))?;
    Ok((net, cp))
}

// ---------------------------------------------------------------------------
// MetaTable CSV (inspection artifact; the pipeline holds meta in memory)

pub fn write_meta(
    path: &Path,
    meta: &eqdisc_core::MetaTable,
) -> Result<(), IoError> {
    let g = &meta.grid;
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = String::with_capacity(meta.len() * 140);
    out.push_str(&format!(
        "# meta nx={} nt={} x0={} dx={} t0={} dt={}\n",
        g.nx,
        g.nt,
        fmt_f64(g.x0),
        fmt_f64(g.dx),
        fmt_f64(g.t0),
        fmt_f64(g.dt)
    ));
    out.push_str("x,t");
    for k in 0..=meta.max_order() {
        out.push(',');
        out.push_str(&derivative_column_name(k));
    }
    out.push_str(",u_t\n");
    for i in 0..g.nx {
        for j in 0..g.nt {
            let flat = i * g.nt + j;
            out.push_str(&fmt_f64(g.x(i)));
            out.push(',');
            out.push_str(&fmt_f64(g.t(j)));
            for k in 0..=meta.max_order() {
                out.push(',');
                out.push_str(&fmt_f64(meta.deriv(k)[flat]));
            }
            out.push(',');
            out.push_str(&fmt_f64(meta.ut[flat]));
            out.push('\n');
        }
    }
    w.write_all(out.as_bytes()).map_err(|e| IoError::file(path, e))?;
    w.flush().map_err(|e| IoError::file(path, e))
}

fn derivative_column_name(k: usize) -> String {
    if k == 0 {
        "u".to_string()
    } else {
        format!("u_{}", "x".repeat(k))
    }
}

// ---------------------------------------------------------------------------
// Evolution log JSONL

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationLogJson {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_genome: String,
    pub mean_fitness: f64,
    pub population_entropy: f64,
}

impl From<&GenerationLog> for GenerationLogJson {
    fn from(g: &GenerationLog) -> Self {
        GenerationLogJson {
            generation: g.generation,
            best_fitness: g.best_fitness,
            best_genome: g.best_genome.clone(),
            mean_fitness: g.mean_fitness,
            population_entropy: g.population_entropy,
        }
    }
}

/// One JSON object per line, one line per logged generation.
pub fn write_evolution_log(path: &Path, log: &[GenerationLog]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::file(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in log {
        let json = serde_json::to_string(&GenerationLogJson::from(entry))
            .map_err(|e| IoError::parse(path, 1, e.to_string()))?;
        w.write_all(json.as_bytes()).map_err(|e| IoError::file(path, e))?;
        w.write_all(b"\n").map_err(|e| IoError::file(path, e))?;
    }
    w.flush().map_err(|e| IoError::file(path, e))
}

// ---------------------------------------------------------------------------
// Discovered-equation JSON

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermJson {
    pub genome_text: String,
    pub coefficient: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrunedTermJson {
    pub genome_text: String,
    pub epoch: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientTrackJson {
    pub genome_text: String,
    pub first: f64,
    pub min: f64,
    pub max: f64,
    pub last: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsJson {
    pub initial_data_mse: f64,
    pub initial_pde_mse: f64,
    pub final_data_mse: f64,
    pub final_pde_mse: f64,
    pub pruned: Vec<PrunedTermJson>,
    pub coefficient_history: Vec<CoefficientTrackJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscoveredJson {
    pub terms: Vec<TermJson>,
    pub diagnostics: DiagnosticsJson,
}

impl DiscoveredJson {
    pub fn from_core(pde: &DiscoveredPDE) -> DiscoveredJson {
        let d: &RefineDiagnostics = &pde.diagnostics;
        DiscoveredJson {
            terms: pde
                .terms
                .iter()
                .map(|(m, c)| TermJson { genome_text: m.to_string(), coefficient: *c })
                .collect(),
            diagnostics: DiagnosticsJson {
                initial_data_mse: d.initial_data_mse,
                initial_pde_mse: d.initial_pde_mse,
                final_data_mse: d.final_data_mse,
                final_pde_mse: d.final_pde_mse,
                pruned: d
                    .pruned
                    .iter()
                    .map(|(m, e)| PrunedTermJson { genome_text: m.to_string(), epoch: *e })
                    .collect(),
                coefficient_history: d
                    .coefficient_history
                    .iter()
                    .map(|t| CoefficientTrackJson {
                        genome_text: t.module.to_string(),
                        first: t.first,
                        min: t.min,
                        max: t.max,
                        last: t.last,
                    })
                    .collect(),
            },
        }
    }

    /// Parses the stored module texts back into `(module, coefficient)`
    /// pairs.
    pub fn terms_as_modules(&self) -> Result<Vec<(GeneModule, f64)>, String> {
        self.terms
            .iter()
            .map(|t| {
                parse_module_text(&t.genome_text)
                    .map(|m| (m, t.coefficient))
                    .map_err(|e| format!("term {:?}: {e}", t.genome_text))
            })
            .collect()
    }
}

/// Parses one module in the `[(0,1):0]` notation.
pub fn parse_module_text(text: &str) -> Result<GeneModule, String> {
    let genome: Genome = format!("{{{text}}}").parse().map_err(|e| format!("{e}"))?;
    if genome.len() != 1 {
        return Err("expected exactly one module".to_string());
    }
    Ok(genome.modules()[0].clone())
}

pub fn write_discovered(path: &Path, pde: &DiscoveredPDE) -> Result<(), IoError> {
    write_json(path, &DiscoveredJson::from_core(pde))
}

pub fn read_discovered(path: &Path) -> Result<DiscoveredJson, IoError> {
    read_json(path)
}

// ---------------------------------------------------------------------------

/// Serializes any report-like value as pretty JSON with a trailing newline.
pub fn write_report_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_json(path, value)
}

pub fn read_report_value(path: &Path) -> Result<serde_json::Value, IoError> {
    read_json(path)
}
