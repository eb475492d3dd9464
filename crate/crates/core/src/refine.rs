//! Physics-constrained retraining of the surrogate with the winning terms.
//!
//! The candidate right-hand side found by the genetic search is folded
//! into the training loss: each epoch re-fits the term coefficients
//! (Lasso at first, later hard-threshold pruning plus least squares) and
//! then takes one Adam step on data MSE + PDE-residual MSE with the
//! coefficients held fixed. Unlike the search stage, terms here are
//! evaluated through their symbolic expansion and the network's jets, so
//! scattered observation points work without any grid.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::expand::{equivalent, expand, ExpandedForm, DERIVATIVE_NAMES};
use crate::genome::{GeneModule, Genome};
use crate::grid::SampleSet;
use crate::jet::Jet;
use crate::net::{Adam, Gradients, Network};
use crate::regression::{lasso_from, ols, DesignMatrix};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RefineError {
    #[error("every candidate term was pruned; discovery failed")]
    EmptyModel(RefineDiagnostics),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("term expansion needs jet degree {requested}, beyond the supported maximum")]
    UnsupportedDegree { requested: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub max_epochs: usize,
    /// Epochs fitted by Lasso before threshold pruning takes over.
    pub lasso_epochs: usize,
    pub lasso_alpha: f64,
    /// Coefficients below this magnitude are dropped permanently.
    pub threshold: f64,
    pub lambda_data: f64,
    pub lambda_pde: f64,
    pub learning_rate: f64,
    /// Reserved for sub-sampled variants; the full-batch loop is
    /// deterministic without randomness.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_epochs: 20_000,
            lasso_epochs: 1000,
            lasso_alpha: 1e-4,
            threshold: 1e-4,
            lambda_data: 1.0,
            lambda_pde: 1.0,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

/// Per-term trajectory of the fitted coefficient across epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTrack {
    pub module: GeneModule,
    pub first: f64,
    pub min: f64,
    pub max: f64,
    pub last: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineDiagnostics {
    pub initial_data_mse: f64,
    pub initial_pde_mse: f64,
    pub final_data_mse: f64,
    pub final_pde_mse: f64,
    /// Terms dropped by thresholding, with the epoch of the drop.
    pub pruned: Vec<(GeneModule, usize)>,
    pub coefficient_history: Vec<CoefficientTrack>,
}

/// The final discovered equation: surviving terms with their least-squares
/// coefficients, in canonical module order.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscoveredPDE {
    pub terms: Vec<(GeneModule, f64)>,
    pub diagnostics: RefineDiagnostics,
}

impl DiscoveredPDE {
    /// Normalizes modules to their canonical representative, merges
    /// expansion-equivalent terms (scaling coefficients by the expansion
    /// ratio), and sorts. `(u*u)_x` at 0.5 and `u*u_x` at 1.0 merge into
    /// `u*u_x` at 2.0.
    pub fn new(terms: Vec<(GeneModule, f64)>, diagnostics: RefineDiagnostics) -> DiscoveredPDE {
        let mut merged: Vec<(GeneModule, f64)> = Vec::new();
        for (m, c) in terms {
            let rep = canonical_representative(&m);
            let mut absorbed = false;
            for (r, rc) in merged.iter_mut() {
                if let Some((num, den)) = equivalent(&rep, r) {
                    let ratio = num as f64 / den as f64;
                    if (rep.order(), &rep) < (r.order(), &*r) {
                        // the newcomer is the plainer writing; convert the
                        // accumulated coefficient onto it and keep it
                        *rc = *rc / ratio + c;
                        *r = rep.clone();
                    } else {
                        *rc += c * ratio;
                    }
                    absorbed = true;
                    break;
                }
            }
            if !absorbed {
                merged.push((rep, c));
            }
        }
        merged.sort_by(|a, b| (a.0.length(), &a.0).cmp(&(b.0.length(), &b.0)));
        DiscoveredPDE { terms: merged, diagnostics }
    }
}

/// Rewrites a single-gene module so repeated differentiation is pushed
/// into the gene as far as it goes: total order n becomes gene min(n, 3)
/// with the remainder outside. Multi-gene modules stay as they are.
fn canonical_representative(m: &GeneModule) -> GeneModule {
    if m.inner.genes().len() == 1 {
        let n = m.max_derivative_order();
        let g = n.min(3);
        GeneModule::from_orders(&[g as u8], (n - g) as u8).expect("orders in range")
    } else {
        m.clone()
    }
}

struct TermState {
    module: GeneModule,
    expansion: ExpandedForm,
    beta: f64,
    alive: bool,
    track: Option<CoefficientTrack>,
}

impl TermState {
    fn record(&mut self, beta: f64) {
        self.beta = beta;
        match &mut self.track {
            None => {
                self.track = Some(CoefficientTrack {
                    module: self.module.clone(),
                    first: beta,
                    min: beta,
                    max: beta,
                    last: beta,
                });
            }
            Some(t) => {
                t.min = t.min.min(beta);
                t.max = t.max.max(beta);
                t.last = beta;
            }
        }
    }
}

/// Distinct canonical representatives of the potential terms. Equivalent
/// modules would give exactly proportional jet columns here (unlike the
/// FD stage, where discretization error kept them apart), so duplicates
/// must go before any least-squares fit.
fn distinct_terms(potential: &Genome) -> Vec<TermState> {
    let mut reps: Vec<GeneModule> = Vec::new();
    for m in potential.modules() {
        let cand = canonical_representative(m);
        match reps.iter_mut().find(|r| equivalent(&cand, r).is_some()) {
            Some(r) => {
                // prefer the plainer writing: lower outer order first
                if (cand.order(), &cand) < (r.order(), &*r) {
                    *r = cand;
                }
            }
            None => reps.push(cand),
        }
    }
    reps.sort();
    reps.into_iter()
        .map(|module| {
            let expansion = expand(&module);
            TermState { module, expansion, beta: 0.0, alive: true, track: None }
        })
        .collect()
}

/// Derivative rows (value..6th) and du/dt at each point, via one jet
/// evaluation per point.
fn eval_points(
    net: &Network,
    pts: &[(f64, f64, f64)],
    deg: usize,
) -> Result<(Vec<[f64; 7]>, Vec<f64>), RefineError> {
    if deg > crate::jet::MAX_DEGREE {
        return Err(RefineError::UnsupportedDegree { requested: deg });
    }
    let mut derivs = Vec::with_capacity(pts.len());
    let mut dt = Vec::with_capacity(pts.len());
    crate::chunked_map_fold(
        pts.len(),
        512,
        |range| {
            let mut d = Vec::with_capacity(range.len());
            let mut t_col = Vec::with_capacity(range.len());
            for &(x, t, _) in &pts[range] {
                let jet = net.forward_jet(x, t, deg).expect("degree checked above");
                let mut row = [0.0; 7];
                for (k, slot) in row.iter_mut().enumerate().take(deg + 1) {
                    *slot = jet.derivative(k);
                }
                d.push(row);
                t_col.push(jet.dt());
            }
            (d, t_col)
        },
        |(d, t_col)| {
            derivs.extend(d);
            dt.extend(t_col);
        },
    );
    Ok((derivs, dt))
}

/// Residual u_t - sum_k beta_k * term_k at scattered points, each term
/// evaluated from its expansion and the network's jets.
pub fn pde_residual(
    net: &Network,
    points: &[(f64, f64)],
    terms: &[GeneModule],
    beta: &[f64],
) -> Result<Vec<f64>, RefineError> {
    assert_eq!(terms.len(), beta.len());
    let expansions: Vec<ExpandedForm> = terms.iter().map(expand).collect();
    let deg = expansions.iter().map(|e| e.max_order()).max().unwrap_or(0);
    if deg > crate::jet::MAX_DEGREE {
        return Err(RefineError::UnsupportedDegree { requested: deg });
    }
    let pts: Vec<(f64, f64, f64)> = points.iter().map(|&(x, t)| (x, t, 0.0)).collect();
    let (derivs, dt) = eval_points(net, &pts, deg)?;
    Ok((0..pts.len())
        .map(|i| {
            dt[i]
                - expansions
                    .iter()
                    .zip(beta)
                    .map(|(e, b)| b * e.evaluate(&derivs[i]))
                    .sum::<f64>()
        })
        .collect())
}

fn mean_sq(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

struct EpochEval {
    derivs: Vec<[f64; 7]>,
    residual: Vec<f64>,
    data_mse: f64,
    pde_mse: f64,
}

/// Jet degree the live terms require.
fn live_degree(states: &[TermState]) -> usize {
    states
        .iter()
        .filter(|s| s.alive)
        .map(|s| s.expansion.max_order())
        .max()
        .unwrap_or(0)
}

fn epoch_eval(
    states: &[TermState],
    derivs: Vec<[f64; 7]>,
    dt: Vec<f64>,
    pts: &[(f64, f64, f64)],
) -> EpochEval {
    let residual: Vec<f64> = (0..pts.len())
        .map(|i| {
            dt[i]
                - states
                    .iter()
                    .filter(|s| s.alive)
                    .map(|s| s.beta * s.expansion.evaluate(&derivs[i]))
                    .sum::<f64>()
        })
        .collect();
    let data: Vec<f64> = (0..pts.len()).map(|i| derivs[i][0] - pts[i].2).collect();
    EpochEval { data_mse: mean_sq(&data), pde_mse: mean_sq(&residual), derivs, residual }
}

fn columns_for(
    states: &[TermState],
    derivs: &[[f64; 7]],
) -> (Vec<Vec<f64>>, Vec<String>, Vec<usize>) {
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    let mut index = Vec::new();
    for (k, s) in states.iter().enumerate() {
        if !s.alive {
            continue;
        }
        cols.push(derivs.iter().map(|d| s.expansion.evaluate(d)).collect());
        labels.push(s.module.to_string());
        index.push(k);
    }
    (cols, labels, index)
}

fn gradient_step(
    net: &mut Network,
    adam: &mut Adam,
    pts: &[(f64, f64, f64)],
    states: &[TermState],
    ev: &EpochEval,
    deg: usize,
    cfg: &RefineConfig,
) {
    let n = pts.len() as f64;
    let mut total = Gradients::zeros_like(net);
    let net_ref = &*net;
    crate::chunked_map_fold(
        pts.len(),
        256,
        |range| {
            let mut g = Gradients::zeros_like(net_ref);
            for i in range {
                let (x, t, u) = pts[i];
                let trace = net_ref.forward_jet_trace(x, t, deg).expect("degree checked");
                let mut adj = Jet::ZERO;
                adj.c[0] += 2.0 * cfg.lambda_data * (ev.derivs[i][0] - u) / n;
                let w_pde = 2.0 * cfg.lambda_pde * ev.residual[i] / n;
                adj.t += w_pde;
                let mut dd = [0.0; 7];
                for s in states.iter().filter(|s| s.alive) {
                    s.expansion.accumulate_gradient(&ev.derivs[i], -w_pde * s.beta, &mut dd);
                }
                for (k, lane) in dd.iter().enumerate().take(deg + 1) {
                    adj.c[k] += lane * Jet::lane_scale(k);
                }
                net_ref.backprop_jet(&trace, &adj, &mut g);
            }
            g
        },
        |g| total.add_assign(&g),
    );
    adam.step(net, &total);
}

fn diagnostics_of(states: &[TermState], pruned: &[(GeneModule, usize)], losses: [f64; 4]) -> RefineDiagnostics {
    RefineDiagnostics {
        initial_data_mse: losses[0],
        initial_pde_mse: losses[1],
        final_data_mse: losses[2],
        final_pde_mse: losses[3],
        pruned: pruned.to_vec(),
        coefficient_history: states.iter().filter_map(|s| s.track.clone()).collect(),
    }
}

/// Runs the staged refinement and returns the discovered equation plus
/// the retrained network. Per epoch: evaluate u_t and the term columns at
/// every sample by jets; fit the coefficients (Lasso while epoch <=
/// lasso_epochs, afterwards permanent threshold pruning followed by OLS);
/// one Adam step on lambda_data*MSE_data + lambda_pde*MSE_pde with the
/// coefficients frozen. The returned coefficients are a plain OLS fit on
/// the final design.
pub fn refine(
    net: &Network,
    samples: &SampleSet,
    potential: &Genome,
    cfg: &RefineConfig,
) -> Result<(DiscoveredPDE, Network), RefineError> {
    assert!(cfg.lasso_epochs < cfg.max_epochs, "lasso stage must end before the run");
    assert!(cfg.threshold > 0.0);
    assert!(!samples.is_empty(), "refinement needs observation samples");
    let pts: Vec<(f64, f64, f64)> = samples.records.iter().map(|r| (r.x, r.t, r.u)).collect();
    let mut net = net.clone();
    let mut states = distinct_terms(potential);
    let mut pruned: Vec<(GeneModule, usize)> = Vec::new();
    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut initial_losses: Option<(f64, f64)> = None;

    for epoch in 1..=cfg.max_epochs {
        let deg = live_degree(&states);
        let (derivs, dt) = eval_points(&net, &pts, deg)?;
        let (mut cols, mut labels, mut index) = columns_for(&states, &derivs);

        if epoch <= cfg.lasso_epochs {
            let warm: Vec<f64> = index.iter().map(|&k| states[k].beta).collect();
            match DesignMatrix::new(cols, labels) {
                Ok(design) => {
                    let beta = lasso_from(&design, &dt, cfg.lasso_alpha, &warm);
                    for (slot, b) in index.iter().zip(beta) {
                        states[*slot].record(b);
                    }
                }
                Err(_) => return Err(RefineError::NonFinite { epoch }),
            }
        } else {
            let mut dropped = false;
            for &k in &index {
                if states[k].beta.abs() < cfg.threshold {
                    states[k].alive = false;
                    pruned.push((states[k].module.clone(), epoch));
                    dropped = true;
                }
            }
            if dropped {
                (cols, labels, index) = columns_for(&states, &derivs);
            }
            if index.is_empty() {
                let (d0, p0) = initial_losses.unwrap_or((f64::NAN, f64::NAN));
                let diag = diagnostics_of(&states, &pruned, [d0, p0, f64::NAN, f64::NAN]);
                return Err(RefineError::EmptyModel(diag));
            }
            match DesignMatrix::new(cols, labels) {
                Ok(design) => {
                    let sol = ols(&design, &dt);
                    for (slot, b) in index.iter().zip(sol.beta) {
                        states[*slot].record(b);
                    }
                }
                Err(_) => return Err(RefineError::NonFinite { epoch }),
            }
        }

        let ev = epoch_eval(&states, derivs, dt, &pts);
        if !ev.data_mse.is_finite() || !ev.pde_mse.is_finite() {
            return Err(RefineError::NonFinite { epoch });
        }
        if initial_losses.is_none() {
            initial_losses = Some((ev.data_mse, ev.pde_mse));
        }
        gradient_step(&mut net, &mut adam, &pts, &states, &ev, deg, cfg);
    }

    // Final fit at the final parameters; prune-and-refit until stable so
    // the reported coefficients are exactly OLS on the reported terms.
    let (final_eval, final_beta) = loop {
        let deg = live_degree(&states);
        let (derivs, dt) = eval_points(&net, &pts, deg)?;
        let (cols, labels, index) = columns_for(&states, &derivs);
        if index.is_empty() {
            let (d0, p0) = initial_losses.unwrap_or((f64::NAN, f64::NAN));
            let diag = diagnostics_of(&states, &pruned, [d0, p0, f64::NAN, f64::NAN]);
            return Err(RefineError::EmptyModel(diag));
        }
        let design = match DesignMatrix::new(cols, labels) {
            Ok(d) => d,
            Err(_) => return Err(RefineError::NonFinite { epoch: cfg.max_epochs }),
        };
        let sol = ols(&design, &dt);
        for (slot, b) in index.iter().zip(&sol.beta) {
            states[*slot].record(*b);
        }
        if sol.beta.iter().all(|b| b.abs() >= cfg.threshold) {
            break (epoch_eval(&states, derivs, dt, &pts), sol.beta);
        }
        for &k in &index {
            if states[k].beta.abs() < cfg.threshold {
                states[k].alive = false;
                pruned.push((states[k].module.clone(), cfg.max_epochs));
            }
        }
    };

    let (d0, p0) = initial_losses.expect("at least one epoch ran");
    let diagnostics = diagnostics_of(
        &states,
        &pruned,
        [d0, p0, final_eval.data_mse, final_eval.pde_mse],
    );
    let terms: Vec<(GeneModule, f64)> = states
        .iter()
        .filter(|s| s.alive)
        .map(|s| s.module.clone())
        .zip(final_beta)
        .collect();
    Ok((DiscoveredPDE::new(terms, diagnostics), net))
}

fn format_coefficient(v: f64) -> String {
    let mag = v.abs();
    if mag == 0.0 || (1e-4..1e6).contains(&mag) {
        alloc::format!("{mag:.6}")
    } else {
        alloc::format!("{mag:.6e}")
    }
}

fn module_name(m: &GeneModule) -> String {
    let genes = m.inner.genes();
    if genes.len() == 1 {
        return DERIVATIVE_NAMES[m.max_derivative_order()].to_string();
    }
    let product = genes
        .iter()
        .map(|g| DERIVATIVE_NAMES[g.order()].to_string())
        .collect::<Vec<_>>()
        .join("*");
    if m.order() == 0 {
        product
    } else {
        alloc::format!("({})_{}", product, "x".repeat(m.order()))
    }
}

/// Human-readable equation, e.g. `u_t = -0.002500*u_xxx - 1.002000*u*u_x`.
/// Stable under term reordering (terms are canonically sorted) and
/// invertible by [`parse_rendered`].
pub fn render(pde: &DiscoveredPDE) -> String {
    if pde.terms.is_empty() {
        return String::from("u_t = 0");
    }
    let mut out = String::from("u_t = ");
    for (i, (m, c)) in pde.terms.iter().enumerate() {
        if i == 0 {
            if *c < 0.0 {
                out.push('-');
            }
        } else {
            out.push_str(if *c < 0.0 { " - " } else { " + " });
        }
        out.push_str(&format_coefficient(*c));
        out.push('*');
        out.push_str(&module_name(m));
    }
    out
}

fn parse_derivative_name(name: &str) -> Option<usize> {
    DERIVATIVE_NAMES.iter().position(|&n| n == name)
}

fn parse_module_name(name: &str) -> Option<GeneModule> {
    if let Some(rest) = name.strip_prefix('(') {
        let (product, suffix) = rest.split_once(")_")?;
        if suffix.is_empty() || !suffix.chars().all(|c| c == 'x') {
            return None;
        }
        let orders = parse_product(product)?;
        GeneModule::from_orders(&orders, suffix.len() as u8).ok()
    } else if name.contains('*') {
        let orders = parse_product(name)?;
        GeneModule::from_orders(&orders, 0).ok()
    } else {
        let n = parse_derivative_name(name)?;
        let g = n.min(3);
        GeneModule::from_orders(&[g as u8], (n - g) as u8).ok()
    }
}

fn parse_product(product: &str) -> Option<Vec<u8>> {
    let mut orders = Vec::new();
    for factor in product.split('*') {
        let n = parse_derivative_name(factor)?;
        if n > 3 {
            return None;
        }
        orders.push(n as u8);
    }
    if orders.is_empty() {
        None
    } else {
        Some(orders)
    }
}

/// Inverse of [`render`]: recovers the (module, coefficient) list.
pub fn parse_rendered(text: &str) -> Option<Vec<(GeneModule, f64)>> {
    let mut rest = text.strip_prefix("u_t = ")?;
    if rest == "0" {
        return Some(Vec::new());
    }
    let mut sign = 1.0;
    if let Some(r) = rest.strip_prefix('-') {
        sign = -1.0;
        rest = r;
    }
    let mut terms = Vec::new();
    loop {
        let (chunk, next) = match (rest.find(" + "), rest.find(" - ")) {
            (Some(p), Some(m)) if p < m => (&rest[..p], Some((1.0, &rest[p + 3..]))),
            (Some(_), Some(m)) => (&rest[..m], Some((-1.0, &rest[m + 3..]))),
            (Some(p), None) => (&rest[..p], Some((1.0, &rest[p + 3..]))),
            (None, Some(m)) => (&rest[..m], Some((-1.0, &rest[m + 3..]))),
            (None, None) => (rest, None),
        };
        let (coef_text, name) = chunk.split_once('*')?;
        let coef: f64 = coef_text.parse().ok()?;
        terms.push((parse_module_name(name)?, sign * coef));
        match next {
            Some((s, r)) => {
                sign = s;
                rest = r;
            }
            None => break,
        }
    }
    Some(terms)
}
