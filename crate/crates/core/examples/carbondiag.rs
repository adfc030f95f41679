use hcsmap::carbon::*;
use hcsmap::synth::*;

fn main() {
    let wc = WorldConfig {
        seed: 77, extent: 96, correlation_length: 16.0,
        carbon_noise_sd: 0.0, allometry_a: 1.2, allometry_b: 1.0,
        footprint_density: 0.0, cloud_fraction: 0.0,
        ..WorldConfig::default()
    };
    let world = gen_world(&wc);
    let split = RegionSplit::proportional(96);
    let cfg = CarbonTrainConfig { epochs: 60, learning_rate: 1e-3, width: 32, grad_clip: 1.0, seeds: [105,105,105,105,105], ..CarbonTrainConfig::default() };
    let (_ens, trace) = train_carbon_ensemble(&world.height, &world.carbon, &split, &cfg).unwrap();
    for row in trace.iter().filter(|r| r.member == 0) {
        println!("epoch {:>3}: train_nll {:+.4}  val_rmse {:.2}", row.epoch, row.train_nll, row.val_rmse);
    }
}
