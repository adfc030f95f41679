//! Finite-difference verification of the backward pass.
//!
//! Central differences with step 1e-3, evaluated entirely in f64 (the
//! layer code is generic, so this exercises the identical compute path the
//! f32 training build uses).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::Activation;
use super::loss::{gaussian_nll_loss, masked_mse_loss};
use super::model::{LayerSpec, Model, ModelSpec, Normalization, OutputHeads};
use super::{Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    GaussianNll,
}

const FD_STEP: f64 = 1e-3;

fn loss_of(
    model: &Model<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    valid: &[bool],
    kind: LossKind,
) -> Result<f64> {
    let out = model.forward(input)?;
    Ok(match kind {
        LossKind::Mse => masked_mse_loss(&out, target, valid)?.0,
        LossKind::GaussianNll => {
            let mean = out.channel(0);
            let log_var = out.channel(1);
            gaussian_nll_loss(&mean, &log_var, target, valid)?.0
        }
    })
}

fn analytic_grads(
    model: &Model<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    valid: &[bool],
    kind: LossKind,
) -> Result<Vec<f64>> {
    let trace = model.forward_trace(input)?;
    let out = model.output_of(&trace);
    let upstream = match kind {
        LossKind::Mse => masked_mse_loss(out, target, valid)?.1,
        LossKind::GaussianNll => {
            let mean = out.channel(0);
            let log_var = out.channel(1);
            let (_, gm, glv) = gaussian_nll_loss(&mean, &log_var, target, valid)?;
            let mut up = Tensor::zeros(out.rows(), out.cols(), 2);
            up.set_channel(0, &gm);
            up.set_channel(1, &glv);
            up
        }
    };
    let mut grads = vec![0.0f64; model.param_count()];
    model.backward(&trace, upstream, &mut grads);
    Ok(grads)
}

/// Max over all parameters of the relative disagreement between analytic
/// and central-difference gradients:
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
///
/// `target` is expressed in head space (the model's normalized output
/// units). Intended for small models (<= ~1e4 parameters).
pub fn grad_check(
    model: &Model<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    valid: &[bool],
    kind: LossKind,
) -> Result<f64> {
    let analytic = analytic_grads(model, input, target, valid, kind)?;
    let mut probe = model.clone();
    let mut params = model.collect_params();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        probe.load_params(&params);
        let plus = loss_of(&probe, input, target, valid, kind)?;
        params[i] = orig - FD_STEP;
        probe.load_params(&params);
        let minus = loss_of(&probe, input, target, valid, kind)?;
        params[i] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    probe.load_params(&params);
    Ok(max_rel)
}

/// One named gradient-check configuration with its result.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub max_rel_error: f64,
}

fn random_tensor(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    ch: usize,
    lo: f64,
    hi: f64,
) -> Tensor<f64> {
    let mut t = Tensor::zeros(rows, cols, ch);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

fn build(spec: &ModelSpec, in_ch: usize, rng: &mut ChaCha8Rng) -> Model<f64> {
    let mut m = Model::from_spec(spec, Normalization::identity(in_ch)).expect("valid spec");
    m.init_seeded(rng);
    m
}

/// The standard verification battery: convolution stacks, a ReLU stack, the
/// power-law layer, MSE, and Gaussian NLL, each checked against central
/// finite differences.
pub fn grad_check_battery(seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Linear 1x1 conv + MSE: quadratic loss, essentially exact.
    {
        let spec = ModelSpec {
            layers: vec![LayerSpec::Conv {
                ksize: 1,
                in_ch: 3,
                out_ch: 1,
                activation: Activation::Identity,
            }],
            receptive_field: 1,
            heads: OutputHeads::Mean,
        };
        let model = build(&spec, 3, &mut rng);
        let input = random_tensor(&mut rng, 5, 5, 3, -1.0, 1.0);
        let target = random_tensor(&mut rng, 5, 5, 1, -1.0, 1.0);
        let err = grad_check(&model, &input, &target, &[true; 25], LossKind::Mse)?;
        out.push(GradCheckCase {
            name: "linear-conv-mse",
            max_rel_error: err,
        });
    }

    // 3x3 conv stack with ReLU, sparse supervision.
    {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: 2,
                    out_ch: 6,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: 6,
                    out_ch: 6,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    ksize: 1,
                    in_ch: 6,
                    out_ch: 1,
                    activation: Activation::Identity,
                },
            ],
            receptive_field: 5,
            heads: OutputHeads::Mean,
        };
        let model = build(&spec, 2, &mut rng);
        let input = random_tensor(&mut rng, 7, 7, 2, -1.0, 1.0);
        let target = random_tensor(&mut rng, 7, 7, 1, -1.0, 1.0);
        let mut valid = vec![false; 49];
        for i in (0..49).step_by(3) {
            valid[i] = true;
        }
        let err = grad_check(&model, &input, &target, &valid, LossKind::Mse)?;
        out.push(GradCheckCase {
            name: "relu-stack-sparse-mse",
            max_rel_error: err,
        });
    }

    // Residual block, as used by the canopy model.
    {
        let spec = super::model::canopy_model_spec(4, 6, 1);
        let model = build(&spec, 4, &mut rng);
        let input = random_tensor(&mut rng, 9, 9, 4, -1.0, 1.0);
        let target = random_tensor(&mut rng, 9, 9, 1, -1.0, 1.0);
        let err = grad_check(&model, &input, &target, &[true; 81], LossKind::Mse)?;
        out.push(GradCheckCase {
            name: "residual-stack-mse",
            max_rel_error: err,
        });
    }

    // Power-law front layer on positive inputs. The surrounding convolutions
    // use identity activations so the finite differences probe the smooth
    // power-law gradient instead of ReLU kink crossings (the ReLU path has
    // its own case above).
    {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::PowerLaw { channels: 1 },
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: 1,
                    out_ch: 4,
                    activation: Activation::Identity,
                },
                LayerSpec::Conv {
                    ksize: 1,
                    in_ch: 4,
                    out_ch: 1,
                    activation: Activation::Identity,
                },
            ],
            receptive_field: 3,
            heads: OutputHeads::Mean,
        };
        let mut model = build(&spec, 1, &mut rng);
        // Start away from the trivial (1, 1) point.
        let mut params = model.collect_params();
        params[0] = 1.3;
        params[1] = 0.8;
        model.load_params(&params);
        let input = random_tensor(&mut rng, 6, 6, 1, 0.1, 3.0);
        let target = random_tensor(&mut rng, 6, 6, 1, -1.0, 1.0);
        let err = grad_check(&model, &input, &target, &[true; 36], LossKind::Mse)?;
        out.push(GradCheckCase {
            name: "power-law-mse",
            max_rel_error: err,
        });
    }

    // Gaussian NLL with mean + log-variance heads (stage-2 shape, narrower).
    {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: 1,
                    out_ch: 5,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: 5,
                    out_ch: 5,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    ksize: 1,
                    in_ch: 5,
                    out_ch: 2,
                    activation: Activation::Identity,
                },
            ],
            receptive_field: 5,
            heads: OutputHeads::MeanLogVar,
        };
        let model = build(&spec, 1, &mut rng);
        let input = random_tensor(&mut rng, 6, 6, 1, 0.0, 2.0);
        let target = random_tensor(&mut rng, 6, 6, 1, -1.0, 1.0);
        let err = grad_check(&model, &input, &target, &[true; 36], LossKind::GaussianNll)?;
        out.push(GradCheckCase {
            name: "gaussian-nll",
            max_rel_error: err,
        });
    }

    Ok(out)
}
