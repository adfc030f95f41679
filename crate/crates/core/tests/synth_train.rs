//! Synthetic-oracle training checks that exercise the full stage-1/stage-2
//! machinery at small scale (the pinned-scale runs live in the acceptance
//! suite).

use hcsmap::canopy::{assemble_tiles, build_dataset, predict_dense, train_canopy, TrainConfig};
use hcsmap::carbon::{train_carbon_ensemble, CarbonTrainConfig, RegionSplit};
use hcsmap::evalstats::regression_metrics;
use hcsmap::synth::{gen_footprints, gen_images, gen_world, WorldConfig};

/// Train a small canopy model on a world generated with the given
/// footprint jitter and return the dense-map RMSE against the true height.
fn map_rmse_with_jitter(jitter: u32) -> f64 {
    let wc = WorldConfig {
        seed: 404,
        extent: 160,
        tile_size: 80,
        correlation_length: 12.0,
        footprint_density: 600.0,
        footprint_label_sd: 0.5,
        footprint_jitter_px: jitter,
        cloud_fraction: 0.0,
        texture_noise_sd: 0.02,
        ..WorldConfig::default()
    };
    let world = gen_world(&wc);
    let acquisitions = gen_images(&world.height, &wc, 1);
    let tiles = assemble_tiles(&acquisitions, &world.scene_class, wc.tile_size).unwrap();
    let footprints = gen_footprints(&world.height, &wc);
    let cfg = TrainConfig {
        iterations: 1_500,
        batch_size: 32,
        learning_rate: 2e-3,
        model_width: 8,
        model_blocks: 1,
        eval_interval: 250,
        seed: 404,
        ..TrainConfig::default()
    };
    let dataset = build_dataset(&tiles, &footprints, &cfg).unwrap();
    let outcome = train_canopy(&dataset, &cfg).unwrap();
    let map = predict_dense(&outcome.model, &acquisitions[0].0, None, 1).unwrap();
    regression_metrics(&map, &world.height, None).unwrap().rmse
}

#[test]
fn geolocation_jitter_degrades_the_map_monotonically() {
    let rmse0 = map_rmse_with_jitter(0);
    let rmse1 = map_rmse_with_jitter(1);
    let rmse2 = map_rmse_with_jitter(2);
    println!("map RMSE by jitter: 0px {rmse0:.3}  1px {rmse1:.3}  2px {rmse2:.3}");
    assert!(
        rmse0 <= rmse1 + 0.05 && rmse1 <= rmse2 + 0.05,
        "jitter must not improve the map: {rmse0:.3} / {rmse1:.3} / {rmse2:.3}"
    );
    assert!(
        rmse2 > rmse0,
        "two-pixel jitter must measurably degrade the map: {rmse0:.3} vs {rmse2:.3}"
    );
}

#[test]
fn noiseless_carbon_reference_is_fit_by_every_member() {
    // Carbon is an exact function of height; each member should push its
    // training RMSE well below the class width.
    let wc = WorldConfig {
        seed: 77,
        extent: 96,
        correlation_length: 16.0,
        carbon_noise_sd: 0.0,
        footprint_density: 0.0,
        cloud_fraction: 0.0,
        ..WorldConfig::default()
    };
    let world = gen_world(&wc);
    let split = RegionSplit::proportional(96);
    let cfg = CarbonTrainConfig {
        epochs: 100,
        learning_rate: 1e-3,
        width: 16,
        ..CarbonTrainConfig::default()
    };
    let (ensemble, _) = train_carbon_ensemble(&world.height, &world.carbon, &split, &cfg).unwrap();

    // Training-region RMSE per member, via dense prediction on the fit
    // columns.
    use hcsmap::canopy::dense_forward_heads;
    let fit = split.fit_cols();
    for (i, member) in ensemble.members().iter().enumerate() {
        let heads = dense_forward_heads(member, &world.height, Default::default(), 1).unwrap();
        let mut se = 0.0f64;
        let mut n = 0u64;
        for r in 0..96 {
            for c in fit.clone() {
                let pred = (member.norm.target_scale * heads[0].value(0, c, r)
                    + member.norm.target_offset)
                    .max(0.0) as f64;
                let d = pred - world.carbon.value(0, c, r) as f64;
                se += d * d;
                n += 1;
            }
        }
        let rmse = (se / n as f64).sqrt();
        println!("member {i}: training-region RMSE {rmse:.2} Mg C/ha");
        assert!(rmse < 5.0, "member {i} RMSE {rmse:.2} >= 5");
    }
}
