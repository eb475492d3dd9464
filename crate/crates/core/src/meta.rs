//! Derivative tables sampled from a trained network on a regular grid.
//!
//! The genetic search never touches the raw observations; it works on
//! these columns. Every spatial derivative up to the requested order and
//! the time derivative are read out of one jet evaluation per grid point,
//! so the table is smooth even when the data were sparse and noisy.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::SpaceTimeGrid;
use crate::jet::{Jet, MAX_DEGREE};
use crate::net::{Network, NetworkError};

/// Columns of u and its derivatives on a grid, flattened as `[i * nt + j]`
/// to match [`crate::grid::Field`]. `derivs[k]` holds the k-th spatial
/// derivative (so `derivs[0]` is u itself), `ut` the time derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaTable {
    pub grid: SpaceTimeGrid,
    pub derivs: Vec<Vec<f64>>,
    pub ut: Vec<f64>,
}

impl MetaTable {
    /// Spatial derivative column of order `k`.
    pub fn deriv(&self, k: usize) -> &[f64] {
        &self.derivs[k]
    }

    /// Highest spatial derivative order stored.
    pub fn max_order(&self) -> usize {
        self.derivs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ut.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ut.is_empty()
    }
}

/// Evaluates the network's jets at every grid point and collects the
/// spatial derivatives `0..=max_order` plus du/dt.
pub fn build_meta(
    net: &Network,
    grid: &SpaceTimeGrid,
    max_order: usize,
) -> Result<MetaTable, NetworkError> {
    if max_order > MAX_DEGREE {
        return Err(NetworkError::UnsupportedDegree { requested: max_order });
    }
    let n = grid.len();
    let nt = grid.nt;
    let mut jets: Vec<Jet> = Vec::with_capacity(n);
    crate::chunked_map_fold(
        n,
        1024,
        |range| {
            range
                .map(|idx| {
                    let (i, j) = (idx / nt, idx % nt);
                    net.forward_jet(grid.x(i), grid.t(j), max_order)
                        .expect("degree checked above")
                })
                .collect::<Vec<Jet>>()
        },
        |chunk| jets.extend_from_slice(&chunk),
    );
    let mut derivs = vec![vec![0.0; n]; max_order + 1];
    let mut ut = vec![0.0; n];
    for (idx, jet) in jets.iter().enumerate() {
        for (k, col) in derivs.iter_mut().enumerate() {
            col[idx] = jet.derivative(k);
        }
        ut[idx] = jet.dt();
    }
    Ok(MetaTable { grid: grid.clone(), derivs, ut })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sine_net() -> Network {
        Network::from_parts(
            vec![2, 1, 1],
            vec![vec![1.0, 0.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap()
    }

    fn small_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(-1.0, 0.25, 9, 0.0, 0.5, 4)
    }

    #[test]
    fn table_shapes_follow_the_request() {
        let meta = build_meta(&sine_net(), &small_grid(), 3).unwrap();
        assert_eq!(meta.derivs.len(), 4);
        assert_eq!(meta.max_order(), 3);
        assert_eq!(meta.len(), 9 * 4);
        assert!(meta.derivs.iter().all(|c| c.len() == 9 * 4));
    }

    #[test]
    fn sine_network_yields_its_derivative_cycle() {
        let grid = small_grid();
        let meta = build_meta(&sine_net(), &grid, 4).unwrap();
        for i in 0..grid.nx {
            for j in 0..grid.nt {
                let idx = i * grid.nt + j;
                let x = grid.x(i);
                assert_relative_eq!(meta.derivs[0][idx], x.sin(), epsilon = 1e-14);
                assert_relative_eq!(meta.derivs[1][idx], x.cos(), epsilon = 1e-14);
                assert_relative_eq!(meta.derivs[2][idx], -x.sin(), epsilon = 1e-14);
                assert_relative_eq!(meta.derivs[3][idx], -x.cos(), epsilon = 1e-13);
                assert_relative_eq!(meta.derivs[4][idx], x.sin(), epsilon = 1e-13);
                assert_eq!(meta.ut[idx], 0.0);
            }
        }
    }

    #[test]
    fn matches_pointwise_jet_evaluation() {
        let net = Network::standard(6, 21);
        let grid = SpaceTimeGrid::new(0.0, 0.1, 17, 0.0, 0.2, 11);
        let meta = build_meta(&net, &grid, 3).unwrap();
        for &(i, j) in &[(0usize, 0usize), (7, 4), (16, 10)] {
            let jet = net.forward_jet(grid.x(i), grid.t(j), 3).unwrap();
            let idx = i * grid.nt + j;
            for k in 0..=3 {
                assert_eq!(meta.derivs[k][idx], jet.derivative(k));
            }
            assert_eq!(meta.ut[idx], jet.dt());
        }
    }

    #[test]
    fn degree_limit_is_enforced() {
        let err = build_meta(&sine_net(), &small_grid(), 7).unwrap_err();
        assert_eq!(err, NetworkError::UnsupportedDegree { requested: 7 });
    }
}
