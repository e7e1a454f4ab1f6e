//! End-to-end pipeline contracts: artifact layout, determinism, failure
//! marking, and config validation.

use std::fs;
use std::path::Path;

use deepindex_cli::config::Config;
use deepindex_cli::pipeline::{read_ranking_csv, run_pipeline};

fn base_config(out: &Path, seed: u64, threads: usize) -> Config {
    let json = format!(
        r#"{{
        "data": {{"synthetic": {{
            "n_assets": 16, "periods": 200, "n_factors": 1,
            "factor_vols": [0.02], "idio_vol": 0.006,
            "individualistic_fraction": 0.5, "weighting": "cap_proxy",
            "start_date": "2014-01-01"
        }}}},
        "k": 4,
        "autoencoder": {{"bottleneck": 3, "sparsity_rho": 0.01, "sparsity_beta": 3.0}},
        "ae_train": {{"learning_rate": 0.3, "epochs": 120, "batch_size": 32}},
        "dfp": {{"hidden": [4, 2], "activation": "tanh"}},
        "dfp_train": {{"learning_rate": 0.2, "epochs": 150, "batch_size": 8}},
        "train_window": {{"label": "in-sample", "start": "2014-01-01", "end": "2014-05-20"}},
        "eval_windows": [{{"label": "out", "start": "2014-05-21", "end": "2014-07-19"}}],
        "output_dir": "{}",
        "seed": {seed},
        "threads": {threads}
    }}"#,
        out.display()
    );
    serde_json::from_str(&json).unwrap()
}

#[test]
fn run_writes_every_declared_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = base_config(&out, 7, 1);
    run_pipeline(&config).unwrap();
    for name in [
        "manifest.json",
        "panel.csv",
        "index.csv",
        "loadings.csv",
        "ranking.csv",
        "autoencoder.net",
        "reconstructed.csv",
        "dfp.net",
        "history_dfp.csv",
        "paths_in-sample.csv",
        "paths_out.csv",
        "report.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    assert!(!out.join("FAILED").exists());
}

#[test]
fn identical_config_and_seed_reproduce_report_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run_pipeline(&base_config(&out1, 11, 1)).unwrap();
    run_pipeline(&base_config(&out2, 11, 1)).unwrap();
    let r1 = fs::read(out1.join("report.json")).unwrap();
    let r2 = fs::read(out2.join("report.json")).unwrap();
    assert_eq!(r1, r2);
    let k1 = fs::read(out1.join("ranking.csv")).unwrap();
    let k2 = fs::read(out2.join("ranking.csv")).unwrap();
    assert_eq!(k1, k2);
}

#[test]
fn failed_stage_leaves_marker_and_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = base_config(&out, 3, 1);
    // An evaluation window beyond the panel's dates fails the evaluate
    // stage after earlier artifacts are on disk.
    config.eval_windows[0].start = "2031-01-01".parse().unwrap();
    config.eval_windows[0].end = "2031-06-01".parse().unwrap();
    let err = run_pipeline(&config).unwrap_err();
    assert!(format!("{err:#}").contains("evaluate"), "{err:#}");
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("evaluate"));
    assert!(out.join("ranking.csv").exists());
    assert!(out.join("dfp.net").exists());
}

#[test]
fn oversized_k_fails_validation_before_any_computation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = base_config(&out, 3, 1);
    config.k = 9; // 2k = 18 > 16 assets
    let err = run_pipeline(&config).unwrap_err();
    assert!(err.to_string().contains("k = 9"), "{err}");
    assert!(!out.exists(), "output directory should not have been created");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let json = r#"{"data": {"synthetic": {"n_assets": 8, "periods": 50}},
        "train_window": {"label": "w", "start": "2014-01-01", "end": "2014-02-01"},
        "output_dir": "x", "seed": 1, "turbo_mode": true}"#;
    let parsed: Result<Config, _> = serde_json::from_str(json);
    assert!(parsed.is_err());
    let msg = parsed.unwrap_err().to_string();
    assert!(msg.contains("turbo_mode"), "{msg}");
}

#[test]
fn missing_seed_is_rejected_for_stochastic_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(&dir.path().join("out"), 3, 1);
    config.seed = None;
    let err = run_pipeline(&config).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
}

#[test]
fn ranking_csv_reloads_into_the_same_basis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = base_config(&out, 21, 1);
    run_pipeline(&config).unwrap();
    let basis = read_ranking_csv(&out.join("ranking.csv"), 4).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let top: Vec<String> = report["basis"]["top"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(basis.top, top);
}

#[test]
fn csv_source_with_index_column_splits_the_panel() {
    use deepindex_cli::pipeline::load_data;
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("panel.csv");
    let mut text = String::from("date,AAA,BBB,SPX\n");
    for (i, (a, b, s)) in [
        (0.01, -0.02, 0.005),
        (0.00, 0.01, -0.002),
        (-0.01, 0.02, 0.007),
        (0.02, 0.00, 0.001),
    ]
    .iter()
    .enumerate()
    {
        text.push_str(&format!("2014-01-{:02},{a},{b},{s}\n", i + 1));
    }
    std::fs::write(&csv_path, text).unwrap();

    let json = format!(
        r#"{{
        "data": {{"csv": {{"path": "{}", "kind": "returns", "index": {{"column": "SPX"}}}}}},
        "k": 1,
        "train_window": {{"label": "w", "start": "2014-01-01", "end": "2014-01-04"}},
        "output_dir": "{}",
        "seed": 1
    }}"#,
        csv_path.display(),
        dir.path().join("out").display()
    );
    let config: Config = serde_json::from_str(&json).unwrap();
    let data = load_data(&config, 1).unwrap();
    assert_eq!(data.panel.assets(), ["AAA".to_string(), "BBB".to_string()]);
    assert_eq!(data.index.returns().len(), 4);
    assert!((data.index.returns()[2] - 0.007).abs() < 1e-15);
}

#[test]
fn communal_basis_tracks_a_cap_weighted_index_better_than_a_random_basis() {
    use deepindex_cli::synth::{synth_market, IndexWeighting, SyntheticMarketSpec};
    use deepindex_core::autoencoder::AutoencoderSpec;
    use deepindex_core::indexing::{equal_weight_tracker, select_basis, Window};
    use deepindex_core::numerics::Rng;
    use deepindex_core::training::TrainConfig;

    let mut communal_wins = 0;
    for seed in 0..10u64 {
        let mut spec = SyntheticMarketSpec::new(20, 200);
        spec.individualistic_fraction = 0.5;
        spec.individualistic_loading = 0.9;
        spec.individualistic_idio_scale = 3.0;
        spec.factor_vols = vec![0.02];
        spec.idio_vol = 0.006;
        spec.weighting = IndexWeighting::CapProxy;
        let market = synth_market(&spec, &mut Rng::new(300 + seed)).unwrap();
        let window = Window::new(
            "full",
            market.panel.dates()[0],
            *market.panel.dates().last().unwrap(),
        )
        .unwrap();

        let ae_spec = AutoencoderSpec::new(20, 4);
        let mut cfg = TrainConfig::basic(0.3, 250, 300 + seed);
        cfg.batch_size = 32;
        let mut rng = Rng::new(300 + seed).split(1);
        let (basis, _, _) = select_basis(&market.panel, &ae_spec, 5, &cfg, &mut rng).unwrap();
        let communal = equal_weight_tracker(&market.panel, &basis.top, &market.index, &window)
            .unwrap()
            .tracking_error;

        // A random 5-asset basis from the same panel.
        let mut pick_rng = Rng::new(300 + seed).split(99);
        let mut ids: Vec<String> = market.panel.assets().to_vec();
        pick_rng.shuffle(&mut ids);
        let random = equal_weight_tracker(&market.panel, &ids[..5], &market.index, &window)
            .unwrap()
            .tracking_error;

        if communal < random {
            communal_wins += 1;
        }
    }
    assert!(communal_wins >= 7, "communal basis won only {communal_wins}/10");
}

#[test]
fn colliding_window_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config(&dir.path().join("out"), 3, 1);
    config.eval_windows[0].label = "in-sample".to_string(); // same as train window
    assert!(config.validate().is_err());
    config.eval_windows[0].label = "out 1".to_string();
    config.train_window.label = "out_1".to_string(); // same sanitized file name
    assert!(config.validate().is_err());
}
