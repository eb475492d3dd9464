//! Finite differences along x for fields stored as `values[i * nt + j]`.
//!
//! The genetic stage differentiates candidate inner terms on the regular
//! meta grid with the classic second-order stencils; higher orders come
//! from repeating the first-derivative stencil, and callers trim a margin
//! of columns so every retained entry is built from central differences
//! only.

use alloc::vec::Vec;

/// Applies the second-order first-derivative stencil `q` times along x.
/// Interior points use the central stencil; the first and last x-columns
/// use the matching one-sided three-point stencil (still second order).
pub fn diff_x(values: &[f64], nx: usize, nt: usize, dx: f64, q: usize) -> Vec<f64> {
    assert_eq!(values.len(), nx * nt, "value count must match the grid");
    assert!(nx >= 3, "x-stencils need at least 3 columns");
    let mut cur = values.to_vec();
    for _ in 0..q {
        let mut next = Vec::with_capacity(cur.len());
        let inv2dx = 1.0 / (2.0 * dx);
        for i in 0..nx {
            for j in 0..nt {
                let at = |ii: usize| cur[ii * nt + j];
                let d = if i == 0 {
                    -3.0 * at(0) + 4.0 * at(1) - at(2)
                } else if i == nx - 1 {
                    3.0 * at(nx - 1) - 4.0 * at(nx - 2) + at(nx - 3)
                } else {
                    at(i + 1) - at(i - 1)
                };
                next.push(d * inv2dx);
            }
        }
        cur = next;
    }
    cur
}

/// Drops `margin` x-columns from each side, keeping the layout.
pub fn trim_x_margin(values: &[f64], nx: usize, nt: usize, margin: usize) -> Vec<f64> {
    assert_eq!(values.len(), nx * nt);
    assert!(2 * margin < nx, "margin leaves no interior");
    values[margin * nt..(nx - margin) * nt].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    // max |fd - analytic| over the interior (margin q on each side).
    fn max_error(nx: usize, q: usize) -> f64 {
        let nt = 2;
        let dx = 2.0 * core::f64::consts::PI / (nx as f64 + 7.0);
        let values: Vec<f64> =
            (0..nx).flat_map(|i| [(i as f64 * dx).sin(); 2]).collect();
        let got = diff_x(&values, nx, nt, dx, q);
        let mut worst = 0.0_f64;
        for i in q..nx - q {
            let x = i as f64 * dx;
            let truth = match q % 4 {
                0 => x.sin(),
                1 => x.cos(),
                2 => -x.sin(),
                _ => -x.cos(),
            };
            worst = worst.max((got[i * nt] - truth).abs());
        }
        worst
    }

    #[test]
    fn first_derivative_converges_at_second_order() {
        for q in 1..=3 {
            let coarse = max_error(64, q);
            let fine = max_error(128, q);
            let order = (coarse / fine).log2();
            assert!(
                (1.7..=2.4).contains(&order),
                "order {q} stencil converged at rate {order}"
            );
        }
    }

    #[test]
    fn one_sided_edges_stay_second_order() {
        let edge_error = |nx: usize| {
            let dx = 1.0 / nx as f64;
            let values: Vec<f64> = (0..nx).map(|i| (i as f64 * dx).exp()).collect();
            let got = diff_x(&values, nx, 1, dx, 1);
            // (e^x)' = e^x, so compare both edges against the endpoint values.
            (got[0] - 1.0).abs().max((got[nx - 1] - ((nx - 1) as f64 * dx).exp()).abs())
        };
        let order = (edge_error(50) / edge_error(100)).log2();
        assert!((1.7..=2.4).contains(&order), "edge stencils converged at rate {order}");
    }

    #[test]
    fn linear_field_differentiates_exactly() {
        let (nx, nt, dx) = (9, 3, 0.5);
        let values: Vec<f64> =
            (0..nx).flat_map(|i| (0..nt).map(move |j| 2.0 * i as f64 * dx + j as f64)).collect();
        let d1 = diff_x(&values, nx, nt, dx, 1);
        for v in &d1 {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let d2 = diff_x(&values, nx, nt, dx, 2);
        for v in &d2 {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn trim_drops_boundary_columns() {
        let (nx, nt) = (5, 2);
        let values: Vec<f64> = (0..nx * nt).map(|k| k as f64).collect();
        let trimmed = trim_x_margin(&values, nx, nt, 1);
        assert_eq!(trimmed, vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "margin leaves no interior")]
    fn trim_rejects_oversized_margin() {
        trim_x_margin(&[0.0; 6], 3, 2, 2);
    }
}
