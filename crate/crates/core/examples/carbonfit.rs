use hcsmap::canopy::dense_forward_heads;
use hcsmap::carbon::*;
use hcsmap::synth::*;

fn member_rmse(m: &hcsmap::nn::Model<f32>, world: &World, fit: std::ops::Range<usize>) -> f64 {
    let heads = dense_forward_heads(m, &world.height, Default::default(), 1).unwrap();
    let (mut se, mut n) = (0.0f64, 0u64);
    for r in 0..world.height.height() {
        for c in fit.clone() {
            let pred = (m.norm.target_scale * heads[0].value(0, c, r) + m.norm.target_offset).max(0.0) as f64;
            let d = pred - world.carbon.value(0, c, r) as f64;
            se += d * d;
            n += 1;
        }
    }
    (se / n as f64).sqrt()
}

fn main() {
    let wc = WorldConfig {
        seed: 77, extent: 96, correlation_length: 16.0,
        carbon_noise_sd: 0.0, allometry_a: 1.2, allometry_b: 1.0,
        footprint_density: 0.0, cloud_fraction: 0.0,
        ..WorldConfig::default()
    };
    let world = gen_world(&wc);
    let split = RegionSplit::proportional(96);
    for (w, lr, ep) in [(32usize, 1e-3f64, 30usize), (32, 1e-3, 60)] {
        let cfg = CarbonTrainConfig { epochs: ep, learning_rate: lr, width: w, ..CarbonTrainConfig::default() };
        let (ens, _) = train_carbon_ensemble(&world.height, &world.carbon, &split, &cfg).unwrap();
        let rmses: Vec<String> = ens.members().iter().map(|m| format!("{:.2}", member_rmse(m, &world, split.fit_cols()))).collect();
        println!("w={w} lr={lr} ep={ep}: member RMSEs {rmses:?}");
    }
}
