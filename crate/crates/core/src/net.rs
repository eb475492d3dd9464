//! Sine-activated dense network over (x, t) with derivative extraction.
//!
//! Two evaluation paths share the parameters: a scalar path for plain
//! value fitting, and a Taylor-jet path that yields the spatial
//! derivatives up to order 6 and the first time derivative exactly (no
//! finite differencing). Both paths have hand-written reverse passes so
//! losses over values or over derivatives can be minimized with Adam.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::SampleSet;
use crate::jet::{self, Jet, MAX_DEGREE};
use crate::math;
use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetworkError {
    #[error("network needs layer sizes [2, hidden.., 1], got {0}")]
    BadArchitecture(&'static str),
    #[error("jet degree {requested} exceeds the supported maximum {MAX_DEGREE}")]
    UnsupportedDegree { requested: usize },
    #[error("checkpoint shape mismatch: {0}")]
    BadShape(&'static str),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("cannot train on an empty sample set")]
    NoSamples,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
}

/// Dense multilayer perceptron, sine on hidden layers, linear output.
/// `weights[l]` is row-major with shape `sizes[l+1] x sizes[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Network {
    /// Random network with unit input scaling; see [`Network::with_input_scale`].
    pub fn new(sizes: &[usize], seed: u64) -> Result<Network, NetworkError> {
        Network::with_input_scale(sizes, seed, (1.0, 1.0))
    }

    /// The default shape used throughout: [2, width, width, width, 1].
    pub fn standard(width: usize, seed: u64) -> Network {
        Network::new(&[2, width, width, width, 1], seed).expect("valid shape")
    }

    /// Random initialization with the first-layer ranges divided by the
    /// input half-ranges `(sx, st)`, so the initial sine features keep a
    /// few oscillations across the data regardless of domain size. First
    /// layer: weights uniform in ±3/scale, phases uniform in ±pi; deeper
    /// layers use a fan-in ±sqrt(6/fan_in) range with small biases.
    pub fn with_input_scale(
        sizes: &[usize],
        seed: u64,
        scale: (f64, f64),
    ) -> Result<Network, NetworkError> {
        if sizes.len() < 2 {
            return Err(NetworkError::BadArchitecture("need at least input and output"));
        }
        if sizes[0] != 2 {
            return Err(NetworkError::BadArchitecture("input layer must have 2 units"));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(NetworkError::BadArchitecture("output layer must have 1 unit"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(NetworkError::BadArchitecture("zero-width layer"));
        }
        assert!(scale.0 > 0.0 && scale.1 > 0.0, "input scales must be positive");
        let mut rng = Rng::new(seed);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut w = Vec::with_capacity(fan_in * fan_out);
            if l == 0 {
                let col_range = [3.0 / scale.0, 3.0 / scale.1];
                for _ in 0..fan_out {
                    for c in 0..fan_in {
                        w.push(rng.uniform(-col_range[c], col_range[c]));
                    }
                }
            } else {
                let r = math::sqrt(6.0 / fan_in as f64);
                for _ in 0..fan_in * fan_out {
                    w.push(rng.uniform(-r, r));
                }
            }
            let b_range = if l == 0 { core::f64::consts::PI } else { 0.1 };
            let b = (0..fan_out).map(|_| rng.uniform(-b_range, b_range)).collect();
            weights.push(w);
            biases.push(b);
        }
        Ok(Network { sizes: sizes.to_vec(), weights, biases })
    }

    /// Rebuilds a network from checkpoint data, validating every shape.
    pub fn from_parts(
        sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Network, NetworkError> {
        let probe = Network::new(&sizes, 0)?;
        if weights.len() != probe.weights.len() || biases.len() != probe.biases.len() {
            return Err(NetworkError::BadShape("layer count"));
        }
        for l in 0..weights.len() {
            if weights[l].len() != probe.weights[l].len() {
                return Err(NetworkError::BadShape("weight matrix size"));
            }
            if biases[l].len() != probe.biases[l].len() {
                return Err(NetworkError::BadShape("bias vector size"));
            }
            if weights[l].iter().chain(&biases[l]).any(|v| !v.is_finite()) {
                return Err(NetworkError::BadShape("non-finite parameter"));
            }
        }
        Ok(Network { sizes, weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn layer_biases(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Plain scalar evaluation of NN(x, t).
    pub fn forward(&self, x: f64, t: f64) -> f64 {
        let layers = self.num_layers();
        let mut a = vec![x, t];
        for l in 0..layers {
            let out_n = self.sizes[l + 1];
            let in_n = self.sizes[l];
            let mut z = self.biases[l].clone();
            for r in 0..out_n {
                let row = &self.weights[l][r * in_n..(r + 1) * in_n];
                z[r] += row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
            }
            if l + 1 < layers {
                for v in &mut z {
                    *v = math::sin(*v);
                }
            }
            a = z;
        }
        a[0]
    }

    /// Output jet: x-Taylor coefficients to `deg` plus du/dt.
    pub fn forward_jet(&self, x: f64, t: f64, deg: usize) -> Result<Jet, NetworkError> {
        if deg > MAX_DEGREE {
            return Err(NetworkError::UnsupportedDegree { requested: deg });
        }
        let layers = self.num_layers();
        let mut a = vec![Jet::x_at(x), Jet::t_at(t)];
        for l in 0..layers {
            let mut z = self.affine_jets(l, &a);
            if l + 1 < layers {
                for v in &mut z {
                    *v = v.sin_cos(deg).0;
                }
            }
            a = z;
        }
        Ok(a[0])
    }

    fn affine_jets(&self, l: usize, a: &[Jet]) -> Vec<Jet> {
        let out_n = self.sizes[l + 1];
        let in_n = self.sizes[l];
        let mut z = Vec::with_capacity(out_n);
        for r in 0..out_n {
            let row = &self.weights[l][r * in_n..(r + 1) * in_n];
            let mut acc = Jet::constant(self.biases[l][r]);
            for (w, v) in row.iter().zip(a) {
                acc.axpy(*w, v);
            }
            z.push(acc);
        }
        z
    }

    /// Jet forward pass that keeps what the reverse pass needs.
    pub fn forward_jet_trace(&self, x: f64, t: f64, deg: usize) -> Result<JetTrace, NetworkError> {
        if deg > MAX_DEGREE {
            return Err(NetworkError::UnsupportedDegree { requested: deg });
        }
        let layers = self.num_layers();
        let mut inputs = vec![Jet::x_at(x), Jet::t_at(t)];
        let mut pre = Vec::with_capacity(layers - 1);
        let mut sin = Vec::with_capacity(layers - 1);
        let mut cos = Vec::with_capacity(layers - 1);
        for l in 0..layers - 1 {
            let z = self.affine_jets(l, &inputs);
            let mut s_layer = Vec::with_capacity(z.len());
            let mut c_layer = Vec::with_capacity(z.len());
            for v in &z {
                let (s, c) = v.sin_cos(deg);
                s_layer.push(s);
                c_layer.push(c);
            }
            inputs = s_layer.clone();
            pre.push(z);
            sin.push(s_layer);
            cos.push(c_layer);
        }
        let out = self.affine_jets(layers - 1, &inputs)[0];
        Ok(JetTrace { deg, x, t, pre, sin, cos, out })
    }

    /// Accumulates dL/d(parameters) given dL/d(output jet lanes).
    pub fn backprop_jet(&self, trace: &JetTrace, out_adjoint: &Jet, grads: &mut Gradients) {
        let deg = trace.deg;
        let layers = self.num_layers();
        let hidden = layers - 1;
        // Output layer: linear readout of the last sine layer.
        let last = if hidden > 0 {
            trace.sin[hidden - 1].clone()
        } else {
            vec![Jet::x_at(trace.x), Jet::t_at(trace.t)]
        };
        let in_n = self.sizes[layers - 1];
        let mut upstream: Vec<Jet> = vec![Jet::ZERO; in_n];
        for (j, s) in last.iter().enumerate() {
            grads.weights[layers - 1][j] += jet_dot(out_adjoint, s, deg);
            upstream[j].axpy(self.weights[layers - 1][j], out_adjoint);
        }
        grads.biases[layers - 1][0] += out_adjoint.c[0];

        for l in (0..hidden).rev() {
            let in_prev = self.sizes[l];
            let prev: Vec<Jet> = if l == 0 {
                vec![Jet::x_at(trace.x), Jet::t_at(trace.t)]
            } else {
                trace.sin[l - 1].clone()
            };
            let mut next_upstream = vec![Jet::ZERO; in_prev];
            for (i, sbar) in upstream.iter().enumerate() {
                let mut abar = Jet::ZERO;
                jet::backprop_sin(
                    sbar,
                    &trace.pre[l][i],
                    &trace.sin[l][i],
                    &trace.cos[l][i],
                    deg,
                    &mut abar,
                );
                grads.biases[l][i] += abar.c[0];
                let row = &self.weights[l][i * in_prev..(i + 1) * in_prev];
                for (j, p) in prev.iter().enumerate() {
                    grads.weights[l][i * in_prev + j] += jet_dot(&abar, p, deg);
                    next_upstream[j].axpy(row[j], &abar);
                }
            }
            upstream = next_upstream;
        }
    }

    /// Scalar forward keeping activations and cosines for the reverse pass.
    fn scalar_trace(&self, x: f64, t: f64, buf: &mut ScalarBuf) -> f64 {
        let layers = self.num_layers();
        buf.a[0][0] = x;
        buf.a[0][1] = t;
        for l in 0..layers - 1 {
            let in_n = self.sizes[l];
            for i in 0..self.sizes[l + 1] {
                let row = &self.weights[l][i * in_n..(i + 1) * in_n];
                let z = self.biases[l][i]
                    + row.iter().zip(&buf.a[l]).map(|(w, v)| w * v).sum::<f64>();
                buf.a[l + 1][i] = math::sin(z);
                buf.c[l][i] = math::cos(z);
            }
        }
        let l = layers - 1;
        let in_n = self.sizes[l];
        self.biases[l][0]
            + self.weights[l][..in_n].iter().zip(&buf.a[l]).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Scalar reverse pass for dL/d(output) = `d_out`.
    fn scalar_backprop(&self, buf: &mut ScalarBuf, d_out: f64, grads: &mut Gradients) {
        let layers = self.num_layers();
        let l = layers - 1;
        let in_n = self.sizes[l];
        for j in 0..in_n {
            grads.weights[l][j] += d_out * buf.a[l][j];
            if l > 0 {
                buf.adj[l - 1][j] = d_out * self.weights[l][j];
            }
        }
        grads.biases[l][0] += d_out;
        for l in (0..layers - 1).rev() {
            let in_n = self.sizes[l];
            if l > 0 {
                for v in buf.adj[l - 1].iter_mut() {
                    *v = 0.0;
                }
            }
            for i in 0..self.sizes[l + 1] {
                let zbar = buf.adj[l][i] * buf.c[l][i];
                if zbar == 0.0 {
                    continue;
                }
                grads.biases[l][i] += zbar;
                let row_at = i * in_n;
                for j in 0..in_n {
                    grads.weights[l][row_at + j] += zbar * buf.a[l][j];
                    if l > 0 {
                        buf.adj[l - 1][j] += zbar * self.weights[l][row_at + j];
                    }
                }
            }
        }
    }

    /// Mean squared error over `(x, t, u)` points and its parameter
    /// gradient, accumulated over fixed chunks so results are independent
    /// of thread count.
    pub fn data_loss_gradient(&self, pts: &[(f64, f64, f64)]) -> (f64, Gradients) {
        let n = pts.len().max(1);
        let mut total = Gradients::zeros_like(self);
        let mut loss = 0.0;
        crate::chunked_map_fold(
            pts.len(),
            512,
            |range| {
                let mut g = Gradients::zeros_like(self);
                let mut buf = ScalarBuf::new(self);
                let mut sq = 0.0;
                for &(x, t, u) in &pts[range] {
                    let pred = self.scalar_trace(x, t, &mut buf);
                    let r = pred - u;
                    sq += r * r;
                    self.scalar_backprop(&mut buf, 2.0 * r / n as f64, &mut g);
                }
                (sq, g)
            },
            |(sq, g)| {
                loss += sq;
                total.add_assign(&g);
            },
        );
        (loss / n as f64, total)
    }

    /// Mean squared error alone (validation metric).
    pub fn data_mse(&self, pts: &[(f64, f64, f64)]) -> f64 {
        if pts.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        crate::chunked_map_fold(
            pts.len(),
            2048,
            |range| {
                pts[range]
                    .iter()
                    .map(|&(x, t, u)| {
                        let r = self.forward(x, t) - u;
                        r * r
                    })
                    .sum::<f64>()
            },
            |s| sum += s,
        );
        sum / pts.len() as f64
    }
}

fn jet_dot(a: &Jet, b: &Jet, deg: usize) -> f64 {
    let mut acc = a.t * b.t;
    for k in 0..=deg {
        acc += a.c[k] * b.c[k];
    }
    acc
}

/// Saved jet forward pass: pre-activations and sine/cosine jets per
/// hidden layer, plus the output jet.
pub struct JetTrace {
    deg: usize,
    x: f64,
    t: f64,
    pre: Vec<Vec<Jet>>,
    sin: Vec<Vec<Jet>>,
    cos: Vec<Vec<Jet>>,
    pub out: Jet,
}

/// Parameter-shaped accumulator for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct ScalarBuf {
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    adj: Vec<Vec<f64>>,
}

impl ScalarBuf {
    fn new(net: &Network) -> ScalarBuf {
        let layers = net.num_layers();
        ScalarBuf {
            a: net.sizes[..layers].iter().map(|&s| vec![0.0; s]).collect(),
            c: net.sizes[1..layers].iter().map(|&s| vec![0.0; s]).collect(),
            adj: net.sizes[1..layers].iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}

/// Adam with the fixed moment constants beta1 0.9, beta2 0.999, eps 1e-8.
pub(crate) struct Adam {
    lr: f64,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub(crate) fn new(net: &Network, lr: f64) -> Adam {
        Adam { lr, step: 0, m: Gradients::zeros_like(net), v: Gradients::zeros_like(net) }
    }

    pub(crate) fn step(&mut self, net: &mut Network, g: &Gradients) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - math::powi(B1, self.step as i32);
        let c2 = 1.0 - math::powi(B2, self.step as i32);
        let apply = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + EPS);
            }
        };
        for l in 0..net.weights.len() {
            apply(&mut net.weights[l], &mut self.m.weights[l], &mut self.v.weights[l], &g.weights[l]);
            apply(&mut net.biases[l], &mut self.m.biases[l], &mut self.v.biases[l], &g.biases[l]);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// None trains full-batch (the default regime).
    pub batch_size: Option<usize>,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50_000,
            learning_rate: 1e-3,
            batch_size: None,
            validation_fraction: 0.2,
            patience: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Fits the network to the samples by Adam on the mean squared data error,
/// with an 80/20-style holdout, patience-based early stopping, and
/// restore-best semantics. Deterministic per seed.
pub fn train_surrogate(
    net: &mut Network,
    samples: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    assert!(cfg.max_epochs >= 1);
    assert!((0.0..1.0).contains(&cfg.validation_fraction));
    let pts: Vec<(f64, f64, f64)> =
        samples.records.iter().map(|r| (r.x, r.t, r.u)).collect();
    let mut rng = Rng::new(cfg.seed);
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    rng.shuffle(&mut idx);
    let n_val = ((cfg.validation_fraction * pts.len() as f64) as usize).min(pts.len() - 1);
    let val: Vec<(f64, f64, f64)> = idx[..n_val].iter().map(|&i| pts[i]).collect();
    let mut train: Vec<(f64, f64, f64)> = idx[n_val..].iter().map(|&i| pts[i]).collect();

    let val_metric = |net: &Network, train: &[(f64, f64, f64)]| {
        if val.is_empty() {
            net.data_mse(train)
        } else {
            net.data_mse(&val)
        }
    };

    let mut adam = Adam::new(net, cfg.learning_rate);
    let mut best_val = val_metric(net, &train);
    let mut best_epoch = 0usize;
    let mut best_params = (net.weights.clone(), net.biases.clone());
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        match cfg.batch_size {
            None => {
                let (mse, g) = net.data_loss_gradient(&train);
                if !mse.is_finite() {
                    return Err(TrainError::NonFinite { epoch });
                }
                adam.step(net, &g);
            }
            Some(b) => {
                let b = b.max(1);
                rng.shuffle(&mut train);
                let mut at = 0;
                while at < train.len() {
                    let end = (at + b).min(train.len());
                    let (mse, g) = net.data_loss_gradient(&train[at..end]);
                    if !mse.is_finite() {
                        return Err(TrainError::NonFinite { epoch });
                    }
                    adam.step(net, &g);
                    at = end;
                }
            }
        }
        let vm = val_metric(net, &train);
        if !vm.is_finite() {
            return Err(TrainError::NonFinite { epoch });
        }
        if vm < best_val {
            best_val = vm;
            best_epoch = epoch;
            best_params = (net.weights.clone(), net.biases.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    net.weights = best_params.0;
    net.biases = best_params.1;
    Ok(TrainReport {
        epochs_run,
        best_epoch,
        train_mse: net.data_mse(&train),
        val_mse: best_val,
    })
}
