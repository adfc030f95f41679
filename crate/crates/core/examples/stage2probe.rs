use hcsmap::carbon::*;
use hcsmap::evalstats::*;
use hcsmap::hcs::*;
use hcsmap::synth::*;
use std::time::Instant;

fn main() {
    let wc = WorldConfig {
        seed: 2024,
        extent: 128,
        correlation_length: 16.0,
        footprint_density: 0.0,
        cloud_fraction: 0.0,
        ..WorldConfig::default()
    };
    let world = gen_world(&wc);
    let split = RegionSplit {
        train_start: 0,
        train_end: 106,
        test_start: 106,
        test_end: 128,
        val_fraction: 0.10,
    };
    for lr in [1e-3f64, 3e-3, 5e-3] {
        let cfg = CarbonTrainConfig {
            epochs: 100,
            learning_rate: lr,
            ..CarbonTrainConfig::default()
        };
        let t0 = Instant::now();
        let (ensemble, trace) =
            train_carbon_ensemble(&world.height, &world.carbon, &split, &cfg).unwrap();
        let train_t = t0.elapsed().as_secs_f64();
        let pred = predict_carbon(&ensemble, &world.height, None, 1).unwrap();
        let report = evaluate_carbon(&pred, &world.carbon, split.test_cols()).unwrap();
        // binary accuracy over test cols
        let t = HcsThresholds::default();
        let pred_cls = classify_grid(&pred.mean, &t).unwrap();
        let ref_cls = classify_grid(&world.carbon, &t).unwrap();
        let pred_bin = binary_code_grid(&pred_cls).unwrap();
        let ref_bin = binary_code_grid(&ref_cls).unwrap();
        let pw = pred_bin.window(106, 0, 22, 128);
        let rw = ref_bin.window(106, 0, 22, 128);
        let labels = vec![
            (0.0f32, "OLS".into()),
            (1.0, "HCS".into()),
            (2.0, "Other".into()),
        ];
        let cm = confusion(&pw, &rw, &labels).unwrap();
        let last_rows: Vec<String> = trace
            .iter()
            .rev()
            .take(5)
            .map(|r| {
                format!(
                    "m{} e{} nll {:.3} val {:.1}",
                    r.member, r.epoch, r.train_nll, r.val_rmse
                )
            })
            .collect();
        println!(
            "lr={lr}: {:.0}s  test RMSE {:.2} (floor {}; ratio {:.3})  ME {:.2}  bin-acc {:.4}",
            train_t,
            report.metrics.rmse,
            wc.carbon_noise_sd,
            report.metrics.rmse / wc.carbon_noise_sd,
            report.metrics.me,
            cm.overall_accuracy
        );
        println!("   trace tail: {:?}", last_rows);
    }
}
