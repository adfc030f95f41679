//! End-to-end CLI test: drives the compiled binary through the whole
//! command chain on a small synthetic world and checks artifacts and exit
//! codes.

use std::path::Path;
use std::process::Command;

fn hcsmap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hcsmap"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        "seed": 7,
        "threads": 1,
        "synth": {
            "world": {
                "seed": 7,
                "extent": 256,
                "tile_size": 128,
                "correlation_length": 16.0,
                "footprint_density": 300.0,
                "footprint_jitter_px": 0,
                "cloud_fraction": 0.2
            },
            "acquisitions": 3,
            "out_dir": "world"
        },
        "train_canopy": {
            "world_dir": "world",
            "config": {
                "iterations": 300,
                "batch_size": 32,
                "learning_rate": 3e-3,
                "model_width": 8,
                "model_blocks": 1,
                "eval_interval": 100,
                "seed": 7
            },
            "out_dir": "canopy"
        },
        "predict": {
            "model": "canopy/canopy_model.nnp1",
            "world_dir": "world",
            "select_k": 2,
            "tile": 96,
            "overlap": 8,
            "out_dir": "predictions"
        },
        "composite": {
            "predictions": [],
            "clouds": [],
            "out_dir": "composite"
        },
        "train_carbon": {
            "height": "world/height.grd1",
            "carbon_ref": "world/carbon.grd1",
            "config": {
                "epochs": 2,
                "learning_rate": 1e-3,
                "width": 8,
                "seeds": [1, 2, 3, 4, 5]
            },
            "out_dir": "carbon"
        },
        "predict_carbon": {
            "ensemble_dir": "carbon",
            "height": "world/height.grd1",
            "tile": 96,
            "overlap": 8,
            "out_dir": "carbon_map"
        },
        "classify": {
            "carbon": "carbon_map/carbon_mean.grd1",
            "palm": "world/palm.grd1",
            "coconut": "world/coconut.grd1",
            "urban": "world/urban_100m.grd1",
            "out_dir": "hcs"
        },
        "stats": {
            "class_grid": "hcs/hcs_class.grd1",
            "zone_grid": "world/zone.grd1",
            "out_dir": "stats"
        },
        "eval": {
            "height_pred": "composite/composite.grd1",
            "height_ref": "world/height.grd1",
            "carbon_pred": "carbon_map/carbon_mean.grd1",
            "carbon_ref": "world/carbon.grd1",
            "class_pred": "hcs/hcs_class.grd1",
            "class_ref": "hcs_ref/hcs_class.grd1",
            "boxplot_values": "composite/composite.grd1",
            "out_dir": "eval"
        }
    });
    let path = dir.join("pipeline.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run_ok(cmd: &str, config: &Path, root: &Path) {
    let status = hcsmap()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(root)
        .status()
        .expect("spawn hcsmap");
    assert!(status.success(), "`{cmd}` failed with {status}");
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut config_path = write_config(root);

    run_ok("synth", &config_path, root);
    let world_hash_after_synth = std::fs::read(root.join("world/height.grd1")).unwrap();
    for name in [
        "height.grd1",
        "carbon.grd1",
        "scene.grd1",
        "zone.grd1",
        "image_00.grd1",
        "cloud_02.grd1",
        "palm.grd1",
        "urban_100m.grd1",
        "footprints.fpd1",
        "world_manifest.json",
        "run_manifest.json",
    ] {
        assert!(
            root.join("world").join(name).exists(),
            "missing world/{name}"
        );
    }

    run_ok("train-canopy", &config_path, root);
    assert!(root.join("canopy/canopy_model.nnp1").exists());
    assert!(root.join("canopy/dataset.fpd1").exists());
    assert!(root.join("canopy/loss_trace.csv").exists());

    run_ok("predict", &config_path, root);
    let selection: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("predictions/selection.json")).unwrap(),
    )
    .unwrap();
    let selected: Vec<u64> = selection["selected_acquisitions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(selected.len(), 2);

    // Point the composite section at the predictions that were written.
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    config["composite"]["predictions"] = serde_json::json!(selected
        .iter()
        .map(|i| format!("predictions/prediction_{i:02}.grd1"))
        .collect::<Vec<_>>());
    config["composite"]["clouds"] = serde_json::json!(selected
        .iter()
        .map(|i| format!("world/cloud_{i:02}.grd1"))
        .collect::<Vec<_>>());
    config_path = root.join("pipeline2.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    run_ok("composite", &config_path, root);
    assert!(root.join("composite/composite.grd1").exists());

    run_ok("train-carbon", &config_path, root);
    for i in 0..5 {
        assert!(root.join(format!("carbon/member_{i}.nnp1")).exists());
    }
    assert!(root.join("carbon/ensemble.json").exists());

    run_ok("predict-carbon", &config_path, root);
    assert!(root.join("carbon_map/carbon_mean.grd1").exists());
    assert!(root.join("carbon_map/carbon_variance.grd1").exists());

    run_ok("classify", &config_path, root);
    assert!(root.join("hcs/hcs_class.grd1").exists());
    assert!(root.join("hcs/hcs_class.ppm").exists());
    assert!(root.join("hcs/legend.json").exists());

    // Reference classification for the eval step (true carbon, no overlays).
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    config["classify"]["carbon"] = serde_json::json!("world/carbon.grd1");
    config["classify"]["palm"] = serde_json::Value::Null;
    config["classify"]["coconut"] = serde_json::Value::Null;
    config["classify"]["urban"] = serde_json::Value::Null;
    config["classify"]["out_dir"] = serde_json::json!("hcs_ref");
    let config_ref = root.join("pipeline3.json");
    std::fs::write(&config_ref, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    run_ok("classify", &config_ref, root);

    run_ok("stats", &config_path, root);
    let zones = std::fs::read_to_string(root.join("stats/zones.csv")).unwrap();
    assert!(zones.starts_with("zone_id,valid_pixels,area_ha,frac_OL"));
    assert!(zones.lines().count() > 1);

    run_ok("eval", &config_path, root);
    for name in [
        "metrics.csv",
        "metrics.json",
        "confusion.csv",
        "boxplots.csv",
    ] {
        assert!(root.join("eval").join(name).exists(), "missing eval/{name}");
    }
    let metrics = std::fs::read_to_string(root.join("eval/metrics.csv")).unwrap();
    assert!(metrics.contains("canopy_height"));
    assert!(metrics.contains("carbon_density"));

    // run manifest carries hashes for inputs.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root.join("eval/run_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "eval");
    assert!(!manifest["inputs"].as_array().unwrap().is_empty());

    // No command mutated its inputs.
    let world_hash_after_all = std::fs::read(root.join("world/height.grd1")).unwrap();
    assert_eq!(world_hash_after_synth, world_hash_after_all);
}

#[test]
fn grad_check_command_succeeds() {
    let output = hcsmap().arg("grad-check").output().expect("spawn");
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("overall max relative error"));
}

#[test]
fn config_parse_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let status = hcsmap()
        .arg("synth")
        .arg("--config")
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"seed": 1, "bogus_section": {}}"#).unwrap();
    let status = hcsmap()
        .arg("synth")
        .arg("--config")
        .arg(&unknown)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        serde_json::to_string(&serde_json::json!({
            "stats": {
                "class_grid": "nope/missing.grd1",
                "zone_grid": "nope/missing2.grd1",
                "out_dir": "stats"
            }
        }))
        .unwrap(),
    )
    .unwrap();
    let output = hcsmap()
        .arg("stats")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(!output.stderr.is_empty(), "one-line diagnostic expected");
}
