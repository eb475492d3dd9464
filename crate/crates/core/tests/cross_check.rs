//! The compound-term evaluator differentiates products by finite
//! differences on the meta grid, while the refinement stage evaluates the
//! same modules through symbolic expansion of network jets. Both pathways
//! must agree wherever both are defined, or the two stages would be
//! optimizing different objectives.

use eqdisc_core::{build_meta, evaluate_term, expand, GeneModule, Network, SpaceTimeGrid};

/// Exact network computing a*sin(x - t): one hidden sine neuron.
fn travelling_wave_net(a: f64) -> Network {
    Network::from_parts(
        vec![2, 1, 1],
        vec![vec![1.0, -1.0], vec![a]],
        vec![vec![0.0], vec![0.0]],
    )
    .unwrap()
}

#[test]
fn fd_and_expansion_pathways_agree_on_every_single_gene_module() {
    let net = travelling_wave_net(0.7);
    let nx = 241;
    let nt = 7;
    let grid = SpaceTimeGrid::new(0.0, core::f64::consts::TAU / (nx - 1) as f64, nx, 0.0, 0.05, nt);
    let margin = 3;
    let meta = build_meta(&net, &grid, 3).unwrap();

    for gene in 0..=3u8 {
        for order in 0..=3u8 {
            let module = GeneModule::from_orders(&[gene], order).unwrap();
            let fd_col = evaluate_term(&module, &meta, margin).unwrap();

            let form = expand(&module);
            let mut exp_col = Vec::with_capacity(fd_col.len());
            for i in margin..nx - margin {
                for j in 0..nt {
                    let (x, t) = grid.point(i, j);
                    let jet = net.forward_jet(x, t, 6).unwrap();
                    let mut derivs = [0.0; 7];
                    for (k, d) in derivs.iter_mut().enumerate() {
                        *d = jet.derivative(k);
                    }
                    exp_col.push(form.evaluate(&derivs));
                }
            }
            assert_eq!(fd_col.len(), exp_col.len());

            let mut num = 0.0;
            let mut den = 0.0;
            for (f, e) in fd_col.iter().zip(&exp_col) {
                num += (f - e) * (f - e);
                den += e * e;
            }
            let rel = (num / den).sqrt();
            assert!(
                rel <= 2e-3,
                "pathways disagree on module {module}: relative L2 gap {rel:.3e}"
            );
        }
    }
}
