//! Rerunning the same config must reproduce every artifact byte for byte;
//! the report may differ only in the stage timing values.

use eqdisc::config::{Profile, RunConfig};
use eqdisc::pipeline::{run_pipeline, Method, REPORT_FILE};
use tempfile::TempDir;

fn tiny_config(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::profile_defaults(Profile::Desk);
    cfg.output_dir = dir.to_path_buf();
    cfg.data.n_samples = 800;
    cfg.surrogate.train.max_epochs = 300;
    cfg.meta.nx = 40;
    cfg.meta.nt = 30;
    cfg.evolution.population = 30;
    cfg.evolution.generations = 5;
    cfg.refine.max_epochs = 200;
    cfg.refine.lasso_epochs = 40;
    cfg.validate().unwrap();
    cfg
}

#[test]
fn reruns_reproduce_reports_and_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());

    let read =
        |name: &str| std::fs::read(dir.path().join(name)).expect("artifact written");

    run_pipeline(&cfg, Method::Discover).expect("first run succeeds");
    let first: Vec<(&str, Vec<u8>)> =
        ["field.csv", "samples.csv", "surrogate.json", "meta.csv", "evolution.jsonl", "discovered.json"]
            .iter()
            .map(|n| (*n, read(n)))
            .collect();
    let first_report = read(REPORT_FILE);

    run_pipeline(&cfg, Method::Discover).expect("second run succeeds");
    for (name, bytes) in &first {
        assert_eq!(&read(name), bytes, "{name} changed across identical reruns");
    }
    let second_report = read(REPORT_FILE);

    let mask = |bytes: &[u8]| -> String {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        let timings = v.get("timings").and_then(|t| t.as_array()).expect("timings present");
        assert!(!timings.is_empty(), "no stages recorded");
        for t in timings {
            assert!(t.get("stage").and_then(|s| s.as_str()).is_some());
            assert!(t.get("seconds").and_then(|s| s.as_f64()).is_some());
        }
        assert!(v.get("seeds").is_some(), "seeds missing from report");
        v["timings"] = serde_json::Value::Null;
        v.to_string()
    };
    assert_eq!(mask(&first_report), mask(&second_report), "report changed beyond timings");
}

#[test]
fn reports_list_the_stages_in_execution_order() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let report = run_pipeline(&cfg, Method::Discover).unwrap();
    let stages: Vec<&str> = report.timings.iter().map(|t| t.stage.as_str()).collect();
    assert_eq!(
        stages,
        ["generate", "sample", "train", "meta", "evolve", "refine", "evaluate"]
    );
    assert!(report.failure.is_none());
    assert!(report.discovered.is_some());
}
