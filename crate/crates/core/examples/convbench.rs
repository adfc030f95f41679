use hcsmap::nn::*;
use std::time::Instant;

fn bench<T: Real>(name: &str, rows: usize, cols: usize, ch: usize, iters: usize) {
    let spec = carbon_model_spec(32, false);
    let mut model: Model<T> = Model::from_spec(&spec, Normalization::identity(1)).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    model.init_seeded(&mut rng);
    let mut input: Tensor<T> = Tensor::zeros(rows, cols, ch);
    for (i, v) in input.data_mut().iter_mut().enumerate() {
        *v = T::of_f64(((i % 97) as f64) * 0.3);
    }
    let target: Tensor<T> = Tensor::zeros(rows, cols, 1);
    let valid = vec![true; rows * cols];
    let mut grads = vec![T::zero(); model.param_count()];

    // forward+backward MACs per window approx:
    let fmacs = (rows * cols) as f64 * (1.0 * 32.0 * 9.0 + 6.0 * 32.0 * 32.0 * 9.0 + 32.0 * 2.0);
    let t0 = Instant::now();
    for _ in 0..iters {
        let trace = model.forward_trace(&input).unwrap();
        let out = model.output_of(&trace);
        let mean = out.channel(0);
        let lv = out.channel(1);
        let (_, gm, glv) = gaussian_nll_loss(&mean, &lv, &target, &valid).unwrap();
        let mut up: Tensor<T> = Tensor::zeros(rows, cols, 2);
        up.set_channel(0, &gm);
        up.set_channel(1, &glv);
        grads.iter_mut().for_each(|g| *g = T::zero());
        model.backward(&trace, up, &mut grads);
    }
    let dt = t0.elapsed().as_secs_f64();
    let total = fmacs * 3.0 * iters as f64; // fwd + ~2x bwd
    println!(
        "{name}: {:.2} s for {iters} iters -> approx {:.2} GMAC/s",
        dt,
        total / dt / 1e9
    );
}

fn main() {
    bench::<f32>("f32 64x64 carbon fwd+bwd", 64, 64, 1, 10);
    bench::<f64>("f64 64x64 carbon fwd+bwd", 64, 64, 1, 10);
}
