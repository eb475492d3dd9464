//! Genetic search for the right-hand side of u_t = f(u, u_x, ...).
//!
//! Candidate terms are evaluated on the meta grid: inner factors come
//! straight from the jet-derivative columns, outer derivatives are taken
//! by finite differences along x, and a uniform margin is trimmed so all
//! candidates share one regression index set. Fitness is the residual MSE
//! of a least-squares fit against u_t plus a length penalty.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::fd::{diff_x, trim_x_margin};
use crate::genome::{GeneModule, Genome, MutationRates};
use crate::meta::MetaTable;
use crate::regression::{ols, DesignMatrix};
use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvolutionError {
    #[error("meta grid has nx = {nx}, too narrow for an fd margin of {margin}")]
    GridTooNarrow { nx: usize, margin: usize },
    #[error("term needs derivative order {needed} but the meta table stops at {available}")]
    MissingDerivative { needed: usize, available: usize },
    #[error("every genome was culled as singular; nothing left to select")]
    AllCulled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub rates: MutationRates,
    /// Weight of the total-length penalty in the fitness.
    pub epsilon: f64,
    /// Columns trimmed from each x-boundary before regression.
    pub fd_margin: usize,
    /// Size caps for the random initial genomes.
    pub max_initial_modules: usize,
    pub max_initial_inner: usize,
    /// Highest outer order random and mutated modules may carry; 0
    /// restricts the search to simple (underived) forms.
    pub order_cap: u8,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population: 400,
            generations: 100,
            crossover_rate: 0.8,
            rates: MutationRates::default(),
            epsilon: 0.1,
            fd_margin: 3,
            max_initial_modules: 2,
            max_initial_inner: 2,
            order_cap: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    /// +inf marks a culled (singular-design) genome.
    pub fitness: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_genome: String,
    /// Mean over the finite fitnesses of the surviving parents.
    pub mean_fitness: f64,
    /// Shannon entropy (nats) of the distinct-genome distribution.
    pub population_entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionRun {
    /// Final parents ranked by ascending fitness.
    pub population: Vec<Individual>,
    pub best: Individual,
    /// One entry for the initial population, then one per generation.
    pub log: Vec<GenerationLog>,
}

/// Values of one compound term over the trimmed meta grid: the product of
/// the inner derivative columns, then `order` passes of the central
/// difference along x, then the margin cut.
pub fn evaluate_term(
    module: &GeneModule,
    meta: &MetaTable,
    fd_margin: usize,
) -> Result<Vec<f64>, EvolutionError> {
    let (nx, nt) = (meta.grid.nx, meta.grid.nt);
    if nx <= 2 * fd_margin {
        return Err(EvolutionError::GridTooNarrow { nx, margin: fd_margin });
    }
    let mut vals = vec![1.0; nx * nt];
    for gene in module.inner.genes() {
        let k = gene.order();
        if k > meta.max_order() {
            return Err(EvolutionError::MissingDerivative {
                needed: k,
                available: meta.max_order(),
            });
        }
        for (v, c) in vals.iter_mut().zip(meta.deriv(k)) {
            *v *= c;
        }
    }
    let vals = diff_x(&vals, nx, nt, meta.grid.dx, module.order());
    Ok(trim_x_margin(&vals, nx, nt, fd_margin))
}

/// The u_t regression target on the same trimmed index set.
pub fn trimmed_target(meta: &MetaTable, fd_margin: usize) -> Result<Vec<f64>, EvolutionError> {
    let (nx, nt) = (meta.grid.nx, meta.grid.nt);
    if nx <= 2 * fd_margin {
        return Err(EvolutionError::GridTooNarrow { nx, margin: fd_margin });
    }
    Ok(trim_x_margin(&meta.ut, nx, nt, fd_margin))
}

/// Least-squares fitness of one genome: residual MSE against u_t plus
/// `epsilon` times the genome's total length. Singular or non-finite
/// designs come back as +inf with no coefficients (the genome is culled,
/// not an error).
pub fn fitness(
    genome: &Genome,
    meta: &MetaTable,
    epsilon: f64,
    fd_margin: usize,
) -> Result<(f64, Vec<f64>), EvolutionError> {
    let target = trimmed_target(meta, fd_margin)?;
    let mut cols = Vec::with_capacity(genome.len());
    let mut labels = Vec::with_capacity(genome.len());
    for module in genome.modules() {
        cols.push(evaluate_term(module, meta, fd_margin)?);
        labels.push(module.to_string());
    }
    if cols[0].len() < cols.len() || target.iter().any(|v| !v.is_finite()) {
        return Ok((f64::INFINITY, Vec::new()));
    }
    let design = match DesignMatrix::new(cols, labels) {
        Ok(d) => d,
        Err(_) => return Ok((f64::INFINITY, Vec::new())),
    };
    let sol = ols(&design, &target);
    if sol.rank_deficient {
        return Ok((f64::INFINITY, Vec::new()));
    }
    let mse = sol.residual_norm * sol.residual_norm / target.len() as f64;
    let f = mse + epsilon * genome.total_length() as f64;
    if !f.is_finite() {
        return Ok((f64::INFINITY, Vec::new()));
    }
    Ok((f, sol.beta))
}

struct Evaluator<'a> {
    meta: &'a MetaTable,
    epsilon: f64,
    fd_margin: usize,
    cache: BTreeMap<Genome, (f64, Vec<f64>)>,
}

impl<'a> Evaluator<'a> {
    fn eval(&mut self, genome: Genome) -> Result<Individual, EvolutionError> {
        if let Some((f, beta)) = self.cache.get(&genome) {
            return Ok(Individual { genome, fitness: *f, coefficients: beta.clone() });
        }
        let (f, beta) = fitness(&genome, self.meta, self.epsilon, self.fd_margin)?;
        self.cache.insert(genome.clone(), (f, beta.clone()));
        Ok(Individual { genome, fitness: f, coefficients: beta })
    }
}

fn rank(pool: &mut [Individual]) {
    pool.sort_by(|a, b| a.fitness.total_cmp(&b.fitness).then_with(|| a.genome.cmp(&b.genome)));
}

fn log_entry(generation: usize, parents: &[Individual]) -> GenerationLog {
    let finite: Vec<f64> =
        parents.iter().map(|p| p.fitness).filter(|f| f.is_finite()).collect();
    let mean_fitness = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let mut counts: BTreeMap<&Genome, usize> = BTreeMap::new();
    for p in parents {
        *counts.entry(&p.genome).or_insert(0) += 1;
    }
    let n = parents.len() as f64;
    let population_entropy = -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * crate::math::ln(p)
        })
        .sum::<f64>();
    GenerationLog {
        generation,
        best_fitness: parents[0].fitness,
        best_genome: parents[0].genome.to_string(),
        mean_fitness,
        population_entropy,
    }
}

/// Runs the full evolution loop and returns the ranked final population,
/// the best individual, and a per-generation log. Parents are paired by
/// two independent random permutations each generation, so every parent
/// enters exactly two crossovers and the children number twice the
/// population; the best half survives, with the incumbent best individual
/// kept until strictly beaten. Deterministic for a given (meta, config).
pub fn evolve(meta: &MetaTable, cfg: &EvolutionConfig) -> Result<EvolutionRun, EvolutionError> {
    assert!(cfg.population >= 2, "need at least two parents to pair");
    assert!(cfg.epsilon >= 0.0);
    assert!(cfg.crossover_rate >= 0.0 && cfg.crossover_rate <= 1.0);
    let n = cfg.population;
    let mut ev = Evaluator {
        meta,
        epsilon: cfg.epsilon,
        fd_margin: cfg.fd_margin,
        cache: BTreeMap::new(),
    };

    let mut rng = Rng::new(Rng::derive(cfg.seed, 0));
    let mut parents = Vec::with_capacity(n);
    for _ in 0..n {
        let g = Genome::random(&mut rng, cfg.max_initial_modules, cfg.max_initial_inner, cfg.order_cap);
        parents.push(ev.eval(g)?);
    }
    rank(&mut parents);
    if !parents[0].fitness.is_finite() {
        return Err(EvolutionError::AllCulled);
    }
    let mut elite = parents[0].clone();
    let mut log = vec![log_entry(0, &parents)];

    for g in 0..cfg.generations {
        let mut rng = Rng::new(Rng::derive(cfg.seed, g as u64 + 1));
        let mut children: Vec<Genome> = Vec::with_capacity(2 * n);
        for _ in 0..2 {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            for pair in order.chunks(2) {
                if let [a, b] = *pair {
                    let (ca, cb) = parents[a].genome.crossover(
                        &parents[b].genome,
                        cfg.crossover_rate,
                        &mut rng,
                    );
                    children.push(ca);
                    children.push(cb);
                } else {
                    // odd population: the leftover parent passes through
                    children.push(parents[pair[0]].genome.clone());
                }
            }
        }
        let mut next = Vec::with_capacity(children.len());
        for child in children {
            let mutated = child.mutate(&cfg.rates, cfg.order_cap, &mut rng);
            next.push(ev.eval(mutated)?);
        }
        rank(&mut next);
        next.truncate(n);
        if next[0].fitness < elite.fitness {
            elite = next[0].clone();
        } else if !next.iter().any(|i| i.genome == elite.genome) {
            next.pop();
            next.push(elite.clone());
            rank(&mut next);
        }
        parents = next;
        if !parents[0].fitness.is_finite() {
            return Err(EvolutionError::AllCulled);
        }
        log.push(log_entry(g + 1, &parents));
    }

    let best = parents[0].clone();
    Ok(EvolutionRun { population: parents, best, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;
    use approx::assert_relative_eq;

    /// Meta table whose derivative columns are filled from analytic
    /// closures of (x, t); ut from its own closure.
    fn analytic_meta<F, G>(grid: SpaceTimeGrid, max_order: usize, deriv: F, ut: G) -> MetaTable
    where
        F: Fn(usize, f64, f64) -> f64,
        G: Fn(f64, f64) -> f64,
    {
        let n = grid.len();
        let mut derivs = vec![vec![0.0; n]; max_order + 1];
        let mut ut_col = vec![0.0; n];
        for i in 0..grid.nx {
            for j in 0..grid.nt {
                let idx = i * grid.nt + j;
                for (k, col) in derivs.iter_mut().enumerate() {
                    col[idx] = deriv(k, grid.x(i), grid.t(j));
                }
                ut_col[idx] = ut(grid.x(i), grid.t(j));
            }
        }
        MetaTable { grid, derivs, ut: ut_col }
    }

    fn sine_meta(nx: usize) -> MetaTable {
        let grid = SpaceTimeGrid::new(-1.0, 2.0 / (nx - 1) as f64, nx, 0.0, 0.1, 5);
        // u = sin(x + t); spatial derivatives cycle through cos/-sin/-cos/sin
        analytic_meta(
            grid,
            3,
            |k, x, t| match k % 4 {
                0 => (x + t).sin(),
                1 => (x + t).cos(),
                2 => -(x + t).sin(),
                _ => -(x + t).cos(),
            },
            |x, t| (x + t).cos(),
        )
    }

    fn module(text: &str) -> GeneModule {
        let g: Genome = alloc::format!("{{{text}}}").parse().unwrap();
        g.modules()[0].clone()
    }

    #[test]
    fn identity_module_returns_the_u_column() {
        let meta = sine_meta(30);
        let got = evaluate_term(&module("[(0):0]"), &meta, 3).unwrap();
        let want = trim_x_margin(&meta.derivs[0], 30, 5, 3);
        assert_eq!(got, want);
    }

    #[test]
    fn first_derivative_gene_returns_the_ux_column() {
        let meta = sine_meta(30);
        let got = evaluate_term(&module("[(1):0]"), &meta, 3).unwrap();
        let want = trim_x_margin(&meta.derivs[1], 30, 5, 3);
        assert_eq!(got, want);
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn outer_derivative_converges_at_second_order() {
        // (u^2)_x for u = sin(x+t), against the analytic 2 sin cos
        let err_at = |nx: usize| {
            let meta = sine_meta(nx);
            let got = evaluate_term(&module("[(0,0):1]"), &meta, 3).unwrap();
            let grid = &meta.grid;
            let mut want = Vec::new();
            for i in 3..grid.nx - 3 {
                for j in 0..grid.nt {
                    let s = grid.x(i) + grid.t(j);
                    want.push(2.0 * s.sin() * s.cos());
                }
            }
            max_abs_diff(&got, &want)
        };
        let coarse = err_at(41);
        let fine = err_at(81);
        let ratio = coarse / fine;
        assert!(
            (3.0..6.0).contains(&ratio),
            "expected roughly 4x error drop, got {ratio} ({coarse} -> {fine})"
        );
    }

    #[test]
    fn narrow_grids_are_rejected() {
        let meta = sine_meta(30);
        let boundary = sine_meta(7);
        let narrow = sine_meta(6);
        assert!(evaluate_term(&module("[(0):0]"), &meta, 3).is_ok());
        // nx = 2 * margin + 1 leaves exactly one interior column, still legal.
        assert!(evaluate_term(&module("[(0):0]"), &boundary, 3).is_ok());
        assert_eq!(
            evaluate_term(&module("[(0):0]"), &narrow, 3).unwrap_err(),
            EvolutionError::GridTooNarrow { nx: 6, margin: 3 }
        );
    }

    #[test]
    fn missing_derivative_orders_are_reported() {
        let grid = SpaceTimeGrid::new(0.0, 0.1, 20, 0.0, 0.1, 3);
        let meta = analytic_meta(grid, 1, |_, x, _| x, |_, _| 0.0);
        assert_eq!(
            evaluate_term(&module("[(2):0]"), &meta, 3).unwrap_err(),
            EvolutionError::MissingDerivative { needed: 2, available: 1 }
        );
    }

    #[test]
    fn planted_exact_model_reaches_penalty_floor() {
        // ut literally set to 2 x the FD evaluation of [(0):1]
        let grid = SpaceTimeGrid::new(-1.0, 0.05, 41, 0.0, 0.1, 5);
        let mut meta = analytic_meta(
            grid,
            3,
            |k, x, t| match k % 4 {
                0 => (x + t).sin(),
                1 => (x + t).cos(),
                2 => -(x + t).sin(),
                _ => -(x + t).cos(),
            },
            |_, _| 0.0,
        );
        let fd_ux = diff_x(&meta.derivs[0], 41, 5, meta.grid.dx, 1);
        meta.ut = fd_ux.iter().map(|v| 2.0 * v).collect();

        let genome: Genome = "{[(0):1]}".parse().unwrap();
        let (f, beta) = fitness(&genome, &meta, 0.1, 3).unwrap();
        assert_relative_eq!(beta[0], 2.0, max_relative = 1e-12);
        assert!((f - 0.1).abs() <= 1e-20, "F should be the bare penalty, got {f}");
    }

    #[test]
    fn penalty_scales_with_total_length() {
        let meta = sine_meta(41);
        let genome: Genome = "{[(0):3],[(0,1):0]}".parse().unwrap();
        let (f_eps, beta_a) = fitness(&genome, &meta, 0.1, 3).unwrap();
        let (f_zero, beta_b) = fitness(&genome, &meta, 0.0, 3).unwrap();
        assert_relative_eq!(f_eps - f_zero, 0.3, max_relative = 1e-9);
        assert_eq!(beta_a, beta_b);
    }

    #[test]
    fn proportional_columns_are_culled() {
        let grid = SpaceTimeGrid::new(-1.0, 0.05, 41, 0.0, 0.1, 5);
        // u_x column is exactly 2u, so {u, u_x} is singular by construction
        let meta = analytic_meta(
            grid,
            3,
            |k, x, t| match k {
                0 => (x + t).sin(),
                1 => 2.0 * (x + t).sin(),
                _ => 1.0,
            },
            |x, t| (x + t).cos(),
        );
        let genome: Genome = "{[(0):0],[(1):0]}".parse().unwrap();
        let (f, beta) = fitness(&genome, &meta, 0.1, 3).unwrap();
        assert!(f.is_infinite());
        assert!(beta.is_empty());
    }

    #[test]
    fn equivalent_genomes_agree_through_fd_error() {
        // ut = -0.1 u_xxx - u u_x on a fine grid; the two ways of writing
        // the advection term must fit consistently
        let grid = SpaceTimeGrid::new(-1.0, 0.02, 101, 0.0, 0.1, 5);
        let meta = analytic_meta(
            grid,
            3,
            |k, x, t| match k % 4 {
                0 => (x + t).sin(),
                1 => (x + t).cos(),
                2 => -(x + t).sin(),
                _ => -(x + t).cos(),
            },
            |x, t| {
                let s = x + t;
                -0.1 * -s.cos() - s.sin() * s.cos()
            },
        );
        let a: Genome = "{[(0):3],[(0,1):0]}".parse().unwrap();
        let b: Genome = "{[(0):3],[(0,0):1]}".parse().unwrap();
        let (fa, beta_a) = fitness(&a, &meta, 0.0, 3).unwrap();
        let (fb, beta_b) = fitness(&b, &meta, 0.0, 3).unwrap();

        // measured FD discrepancy of the two rewritten columns
        let fd_col = evaluate_term(&module("[(0,0):1]"), &meta, 3).unwrap();
        let exact: Vec<f64> = {
            let mut v = Vec::new();
            for i in 3..101 - 3 {
                for j in 0..5 {
                    let s = meta.grid.x(i) + meta.grid.t(j);
                    v.push(2.0 * s.sin() * s.cos());
                }
            }
            v
        };
        let eps_num = max_abs_diff(&fd_col, &exact);
        assert!((fa - fb).abs() <= eps_num, "|{fa} - {fb}| > {eps_num}");

        // coefficient ratio follows the expansion: (u^2)_x carries half
        assert_relative_eq!(beta_a[1], 2.0 * beta_b[1], max_relative = 1e-2);
        assert_relative_eq!(beta_a[0], beta_b[0], max_relative = 1e-2);
        assert_relative_eq!(beta_a[1], -1.0, max_relative = 1e-2);
    }

    fn planted_advection_meta() -> MetaTable {
        // u = sin(x + 2t) travelling wave: ut = 2 u_x exactly, plus a tiny
        // deterministic wobble so the regression is not degenerate
        let grid = SpaceTimeGrid::new(-1.0, 0.05, 41, 0.0, 0.1, 11);
        let mut meta = analytic_meta(
            grid,
            3,
            |k, x, t| {
                let s = x + 2.0 * t;
                match k % 4 {
                    0 => s.sin(),
                    1 => s.cos(),
                    2 => -s.sin(),
                    _ => -s.cos(),
                }
            },
            |x, t| 2.0 * (x + 2.0 * t).cos(),
        );
        let mut noise = Rng::new(7);
        for v in meta.ut.iter_mut() {
            *v += 1e-6 * noise.uniform(-1.0, 1.0);
        }
        meta
    }

    #[test]
    fn planted_model_is_recovered() {
        let meta = planted_advection_meta();
        let cfg = EvolutionConfig {
            population: 100,
            generations: 30,
            epsilon: 0.01,
            seed: 3,
            ..EvolutionConfig::default()
        };
        let run = evolve(&meta, &cfg).unwrap();
        let best = &run.best;
        assert_eq!(best.genome.len(), 1, "expected one term, got {}", best.genome);
        let target = module("[(1):0]");
        let (num, den) =
            crate::expand::equivalent(&best.genome.modules()[0], &target).expect("u_x-equivalent");
        let effective = best.coefficients[0] * num as f64 / den as f64;
        assert_relative_eq!(effective, 2.0, max_relative = 1e-2);
    }

    #[test]
    fn best_fitness_never_rises() {
        let meta = planted_advection_meta();
        let cfg = EvolutionConfig {
            population: 30,
            generations: 12,
            epsilon: 0.01,
            seed: 11,
            ..EvolutionConfig::default()
        };
        let run = evolve(&meta, &cfg).unwrap();
        assert_eq!(run.log.len(), 13);
        for pair in run.log.windows(2) {
            assert!(
                pair[1].best_fitness <= pair[0].best_fitness,
                "fitness rose between generations {} and {}",
                pair[0].generation,
                pair[1].generation
            );
        }
    }

    #[test]
    fn population_size_is_invariant_and_ranked() {
        let meta = planted_advection_meta();
        let cfg = EvolutionConfig {
            population: 25,
            generations: 5,
            epsilon: 0.01,
            seed: 5,
            ..EvolutionConfig::default()
        };
        let run = evolve(&meta, &cfg).unwrap();
        assert_eq!(run.population.len(), 25);
        for pair in run.population.windows(2) {
            assert!(pair[0].fitness <= pair[1].fitness);
        }
        assert_eq!(run.best.genome, run.population[0].genome);
    }

    #[test]
    fn identical_seeds_reproduce_bit_for_bit() {
        let meta = planted_advection_meta();
        let cfg = EvolutionConfig {
            population: 20,
            generations: 6,
            epsilon: 0.01,
            seed: 9,
            ..EvolutionConfig::default()
        };
        let a = evolve(&meta, &cfg).unwrap();
        let b = evolve(&meta, &cfg).unwrap();
        assert_eq!(a.best.genome, b.best.genome);
        assert_eq!(a.best.fitness.to_bits(), b.best.fitness.to_bits());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn different_seeds_may_differ_but_stay_valid() {
        let meta = planted_advection_meta();
        for seed in [1, 2] {
            let cfg = EvolutionConfig {
                population: 16,
                generations: 4,
                epsilon: 0.01,
                seed,
                ..EvolutionConfig::default()
            };
            let run = evolve(&meta, &cfg).unwrap();
            assert!(run.best.fitness.is_finite());
            assert_eq!(run.best.coefficients.len(), run.best.genome.len());
        }
    }

    #[test]
    fn all_singular_population_is_an_error() {
        // every derivative column zero: all designs are rank deficient
        let grid = SpaceTimeGrid::new(0.0, 0.1, 20, 0.0, 0.1, 4);
        let meta = analytic_meta(grid, 3, |_, _, _| 0.0, |x, t| x + t);
        let cfg = EvolutionConfig {
            population: 10,
            generations: 2,
            seed: 1,
            ..EvolutionConfig::default()
        };
        assert_eq!(evolve(&meta, &cfg).unwrap_err(), EvolutionError::AllCulled);
    }

    #[test]
    fn log_entropy_is_bounded() {
        let meta = planted_advection_meta();
        let cfg = EvolutionConfig {
            population: 20,
            generations: 4,
            epsilon: 0.01,
            seed: 13,
            ..EvolutionConfig::default()
        };
        let run = evolve(&meta, &cfg).unwrap();
        let cap = (20.0_f64).ln() + 1e-12;
        for entry in &run.log {
            assert!(entry.population_entropy >= 0.0);
            assert!(entry.population_entropy <= cap);
            assert!(entry.mean_fitness >= entry.best_fitness);
        }
    }
}
