//! Data-driven discovery of one-dimensional PDEs.
//!
//! The crate covers the algorithmic half of the toolkit: seedable RNG,
//! space-time grids and sampling, a small sine-activated network with
//! truncated Taylor-jet derivatives, symbolic candidate terms in compound
//! form (inner product of derivatives, differentiated again), dense
//! regression kernels (OLS / Lasso / STRidge), the genetic search over
//! candidate equations, and the physics-constrained refinement stage.
//!
//! Everything here is pure computation over `alloc` collections: file
//! formats, spectral solvers, and the CLI live in the companion `eqdisc`
//! crate. The crate builds without `std` (enable the `libm` feature for
//! float math); the optional `parallel` feature adds chunked rayon
//! evaluation whose results are bit-identical to the sequential path
//! because every reduction runs over fixed chunk boundaries in index
//! order.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("eqdisc-core needs either the `std` or the `libm` feature for float math");

extern crate alloc;

pub mod evolution;
pub mod expand;
pub mod fd;
pub mod genome;
pub mod grid;
pub mod jet;
mod math;
pub mod meta;
pub mod net;
pub mod refine;
pub mod regression;
pub mod rng;

pub use evolution::{
    evaluate_term, evolve, fitness, trimmed_target, EvolutionConfig, EvolutionError,
    EvolutionRun, GenerationLog, Individual,
};
pub use expand::{expand, equivalent, ExpandedForm, Monomial};
pub use genome::{BasicGene, GeneModule, Genome, GenomeError, InnerTerm, MutationRates};
pub use grid::{
    add_noise, sample_random, Field, GridError, NoiseSpec, Sample, SampleSet, SpaceTimeGrid,
};
pub use jet::{Jet, MAX_DEGREE};
pub use meta::{build_meta, MetaTable};
pub use net::{train_surrogate, Network, NetworkError, TrainConfig, TrainError, TrainReport};
pub use refine::{
    parse_rendered, pde_residual, refine, render, CoefficientTrack, DiscoveredPDE,
    RefineConfig, RefineDiagnostics, RefineError,
};
pub use regression::{
    lasso, lasso_from, ols, stridge, DesignMatrix, OlsSolution, RegressionError, StridgeOutcome,
};
pub use rng::Rng;

/// Applies `f` to fixed-size index chunks and folds the results in chunk
/// order. With the `parallel` feature the chunks are evaluated on the rayon
/// pool; the fold stays sequential, so the output never depends on thread
/// count.
pub(crate) fn chunked_map_fold<T, M, F>(len: usize, chunk: usize, map: M, mut fold: F)
where
    M: Fn(core::ops::Range<usize>) -> T + Sync + Send,
    F: FnMut(T),
    T: Send,
{
    let chunk = chunk.max(1);
    let ranges: alloc::vec::Vec<_> = (0..len)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(len))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let parts: alloc::vec::Vec<T> = ranges.into_par_iter().map(map).collect();
        for p in parts {
            fold(p);
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        for r in ranges {
            fold(map(r));
        }
    }
}
