//! Regular space-time grids, solution fields, and scattered samples.

use alloc::vec::Vec;

use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("requested {requested} samples but the grid has only {available} points")]
    SampleCountRange { requested: usize, available: usize },
    #[error("noise level must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("field shape {values} does not match grid {nx}x{nt}")]
    ShapeMismatch { values: usize, nx: usize, nt: usize },
    #[error("field contains a non-finite value at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
}

/// Uniform grid over `[x0, x0 + (nx-1) dx] x [t0, t0 + (nt-1) dt]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub t0: f64,
    pub dt: f64,
    pub nt: usize,
}

impl SpaceTimeGrid {
    pub fn new(x0: f64, dx: f64, nx: usize, t0: f64, dt: f64, nt: usize) -> Self {
        assert!(dx > 0.0 && dt > 0.0, "grid spacings must be positive");
        assert!(nx >= 2 && nt >= 2, "grid needs at least 2 points per axis");
        SpaceTimeGrid { x0, dx, nx, t0, dt, nt }
    }

    /// Grid covering `[x_lo, x_hi)` with `nx` points and `[t_lo, t_hi]`
    /// with `nt` points — the layout used by the periodic benchmark
    /// datasets, where `x_hi` itself is the wrapped image of `x_lo`.
    pub fn periodic_x(x_lo: f64, x_hi: f64, nx: usize, t_lo: f64, t_hi: f64, nt: usize) -> Self {
        let dx = (x_hi - x_lo) / nx as f64;
        let dt = (t_hi - t_lo) / (nt - 1) as f64;
        Self::new(x_lo, dx, nx, t_lo, dt, nt)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x(i), self.t(j))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nt
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Solution values on a grid; `values[i * nt + j]` is `u(x_i, t_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::ShapeMismatch {
                values: values.len(),
                nx: grid.nx,
                nt: grid.nt,
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { i: pos / grid.nt, j: pos % grid.nt });
        }
        Ok(Field { grid, values })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nt + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values at a fixed time index, in spatial order.
    pub fn time_slice(&self, j: usize) -> Vec<f64> {
        (0..self.grid.nx).map(|i| self.at(i, j)).collect()
    }
}

/// One scattered observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub t: f64,
    pub u: f64,
}

/// Scattered `(x, t, u)` observations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet {
    pub records: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Closed bounding box `((x_min, x_max), (t_min, t_max))`.
    pub fn bounds(&self) -> Option<((f64, f64), (f64, f64))> {
        let first = self.records.first()?;
        let mut b = ((first.x, first.x), (first.t, first.t));
        for r in &self.records {
            b.0 .0 = b.0 .0.min(r.x);
            b.0 .1 = b.0 .1.max(r.x);
            b.1 .0 = b.1 .0.min(r.t);
            b.1 .1 = b.1 .1.max(r.t);
        }
        Some(b)
    }
}

/// Multiplicative uniform noise `u -> u (1 + gamma e)`, `e ~ U[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub gamma: f64,
    pub seed: u64,
}

/// Draws `n` distinct grid points uniformly without replacement.
pub fn sample_random(field: &Field, n: usize, seed: u64) -> Result<SampleSet, GridError> {
    let total = field.grid.len();
    if n > total {
        return Err(GridError::SampleCountRange { requested: n, available: total });
    }
    let mut rng = Rng::new(seed);
    let idx = rng.sample_indices(total, n);
    let nt = field.grid.nt;
    let records = idx
        .into_iter()
        .map(|flat| {
            let (i, j) = (flat / nt, flat % nt);
            let (x, t) = field.grid.point(i, j);
            Sample { x, t, u: field.at(i, j) }
        })
        .collect();
    Ok(SampleSet { records })
}

/// Perturbs each value as `u (1 + gamma e)` with `e` i.i.d. uniform on
/// `[-1, 1]`. Draws are attached in `(t, x)` order so the result does not
/// depend on how the records happen to be stored.
pub fn add_noise(samples: &SampleSet, spec: &NoiseSpec) -> Result<SampleSet, GridError> {
    if spec.gamma < 0.0 {
        return Err(GridError::NegativeNoise(spec.gamma));
    }
    let mut out = samples.clone();
    if spec.gamma == 0.0 {
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..out.records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&out.records[a], &out.records[b]);
        (ra.t, ra.x).partial_cmp(&(rb.t, rb.x)).expect("finite sample coordinates")
    });
    let mut rng = Rng::new(spec.seed);
    for k in order {
        let e = rng.uniform(-1.0, 1.0);
        out.records[k].u *= 1.0 + spec.gamma * e;
    }
    Ok(out)
}
