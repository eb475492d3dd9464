//! File format round-trips: fields, samples, network checkpoints, and
//! saved models must re-read bit-identically, and malformed input must be
//! rejected with the offending line number.

use std::path::Path;

use eqdisc::io::{
    parse_module_text, read_discovered, read_field, read_network, read_samples, write_discovered,
    write_field, write_network, write_samples, NetworkCheckpoint,
};
use eqdisc_core::{
    train_surrogate, CoefficientTrack, DiscoveredPDE, Field, GeneModule, Network,
    RefineDiagnostics, Rng, Sample, SampleSet, SpaceTimeGrid, TrainConfig,
};
use tempfile::TempDir;

fn tiny_field() -> Field {
    let grid = SpaceTimeGrid::new(-1.0, 0.5, 3, 0.0, 0.25, 2);
    Field::new(grid, vec![1.0, -2.0, 0.5, 0.0, 3.5, -0.25]).unwrap()
}

#[test]
fn fields_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("field.csv");
    let field = tiny_field();
    write_field(&path, &field).unwrap();
    let back = read_field(&path).unwrap();
    assert_eq!(back.grid, field.grid);
    assert_eq!(back.values(), field.values());
}

#[test]
fn random_fields_round_trip_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("field.csv");
    let grid = SpaceTimeGrid::new(-3.0, 0.17, 40, 1.0, 0.093, 25);
    let mut rng = Rng::new(99);
    let values: Vec<f64> = (0..grid.len()).map(|_| rng.uniform(-1e6, 1e6)).collect();
    let field = Field::new(grid, values).unwrap();
    write_field(&path, &field).unwrap();
    let back = read_field(&path).unwrap();
    for (a, b) in field.values().iter().zip(back.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn truncated_fields_name_the_failing_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("field.csv");
    write_field(&path, &tiny_field()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = read_field(&path).unwrap_err().to_string();
    assert!(err.contains("expected 6 data rows"), "{err}");
    assert!(err.contains(":7"), "expected line 7 in {err}");
}

#[test]
fn corrupt_values_name_the_failing_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("field.csv");
    write_field(&path, &tiny_field()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("3.5", "3.5abc");
    std::fs::write(&path, text).unwrap();
    let err = read_field(&path).unwrap_err().to_string();
    assert!(err.contains(":6"), "expected line 6 in {err}");
}

#[test]
fn samples_round_trip_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("samples.csv");
    let mut rng = Rng::new(3);
    let records: Vec<Sample> = (0..200)
        .map(|_| Sample {
            x: rng.uniform(-1.0, 1.0),
            t: rng.uniform(0.0, 1.0),
            u: rng.uniform(-5.0, 5.0),
        })
        .collect();
    let set = SampleSet { records };
    write_samples(&path, &set).unwrap();
    let back = read_samples(&path).unwrap();
    assert_eq!(back.len(), set.len());
    for (a, b) in set.records.iter().zip(&back.records) {
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.t.to_bits(), b.t.to_bits());
        assert_eq!(a.u.to_bits(), b.u.to_bits());
    }
}

#[test]
fn duplicate_sample_coordinates_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("samples.csv");
    std::fs::write(&path, "x,t,u\n1.0,2.0,3.0\n1.0,2.0,4.0\n").unwrap();
    let err = read_samples(&path).unwrap_err().to_string();
    assert!(err.contains("duplicate"), "{err}");
}

fn trained_checkpoint() -> (Network, NetworkCheckpoint) {
    let mut net = Network::standard(4, 11);
    let mut rng = Rng::new(5);
    let records: Vec<Sample> = (0..40)
        .map(|_| {
            let x = rng.uniform(-1.0, 1.0);
            let t = rng.uniform(0.0, 1.0);
            Sample { x, t, u: (x + t).sin() }
        })
        .collect();
    let cfg = TrainConfig {
        max_epochs: 30,
        learning_rate: 1e-3,
        batch_size: None,
        validation_fraction: 0.2,
        patience: 30,
        seed: 7,
    };
    let report = train_surrogate(&mut net, &SampleSet { records }, &cfg).unwrap();
    let checkpoint = NetworkCheckpoint::of(&net, 11, &report);
    (net, checkpoint)
}

#[test]
fn network_checkpoints_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("surrogate.json");
    let (net, checkpoint) = trained_checkpoint();
    write_network(&path, &checkpoint).unwrap();
    let (back, meta) = read_network(&path).unwrap();
    assert_eq!(meta.seed, 11);
    assert_eq!(back.sizes(), net.sizes());
    let probe = [(0.3, 0.4), (-0.9, 0.1), (0.0, 0.99)];
    for (x, t) in probe {
        let a = net.forward_jet(x, t, 0).unwrap().value();
        let b = back.forward_jet(x, t, 0).unwrap().value();
        assert_eq!(a.to_bits(), b.to_bits(), "prediction changed after reload");
    }
}

#[test]
fn saved_models_round_trip_terms_and_diagnostics() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("discovered.json");
    let uux = GeneModule::from_orders(&[0, 1], 0).unwrap();
    let uxxx = GeneModule::from_orders(&[3], 0).unwrap();
    let pde = DiscoveredPDE::new(
        vec![(uux.clone(), -0.98), (uxxx.clone(), -0.0024)],
        RefineDiagnostics {
            initial_data_mse: 1e-3,
            initial_pde_mse: 2e-2,
            final_data_mse: 8e-4,
            final_pde_mse: 5e-4,
            pruned: vec![(GeneModule::from_orders(&[2], 3).unwrap(), 120)],
            coefficient_history: vec![CoefficientTrack {
                module: uux.clone(),
                first: -0.5,
                min: -1.1,
                max: -0.5,
                last: -0.98,
            }],
        },
    );
    write_discovered(&path, &pde).unwrap();
    let loaded = read_discovered(&path).unwrap();
    let terms = loaded.terms_as_modules().unwrap();
    assert_eq!(terms.len(), 2);
    assert!(terms.iter().any(|(m, c)| *m == uux && (*c + 0.98).abs() < 1e-15));
    assert!(terms.iter().any(|(m, c)| *m == uxxx && (*c + 0.0024).abs() < 1e-15));
    assert_eq!(loaded.diagnostics.pruned.len(), 1);
}

#[test]
fn module_text_parses_single_modules_only() {
    let m = parse_module_text("[(0,1):2]").unwrap();
    assert_eq!(m, GeneModule::from_orders(&[0, 1], 2).unwrap());
    assert!(parse_module_text("[(0):0][(1):0]").is_err());
    assert!(parse_module_text("nonsense").is_err());
}

#[test]
fn missing_files_report_the_path() {
    let p = Path::new("/nonexistent/eqdisc/field.csv");
    let err = read_field(p).unwrap_err().to_string();
    assert!(err.contains("nonexistent"), "{err}");
}
