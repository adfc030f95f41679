//! Model = ordered layer stack + output-head contract + the input/target
//! normalization baked in at training time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, ConvLayer, Layer, PowerLawLayer};
use super::{NnError, Real, Result, Tensor};

/// Which channels the final layer emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHeads {
    /// Single regression channel.
    Mean,
    /// Channel 0 = mean, channel 1 = log-variance.
    MeanLogVar,
}

impl OutputHeads {
    pub fn channels(self) -> usize {
        match self {
            OutputHeads::Mean => 1,
            OutputHeads::MeanLogVar => 2,
        }
    }
}

/// Serializable structure of one layer (parameters live in the flat payload).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        ksize: usize,
        in_ch: usize,
        out_ch: usize,
        activation: Activation,
    },
    PowerLaw {
        channels: usize,
    },
    Residual {
        body: Vec<LayerSpec>,
    },
}

impl LayerSpec {
    fn build<T: Real>(&self) -> Layer<T> {
        match self {
            LayerSpec::Conv {
                ksize,
                in_ch,
                out_ch,
                activation,
            } => Layer::Conv(ConvLayer::new(*ksize, *in_ch, *out_ch, *activation)),
            LayerSpec::PowerLaw { channels } => Layer::PowerLaw(PowerLawLayer::new(*channels)),
            LayerSpec::Residual { body } => {
                Layer::Residual(body.iter().map(LayerSpec::build).collect())
            }
        }
    }

    fn of<T: Real>(layer: &Layer<T>) -> LayerSpec {
        match layer {
            Layer::Conv(c) => LayerSpec::Conv {
                ksize: c.ksize,
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                activation: c.activation,
            },
            Layer::PowerLaw(p) => LayerSpec::PowerLaw {
                channels: p.channels,
            },
            Layer::Residual(body) => LayerSpec::Residual {
                body: body.iter().map(LayerSpec::of).collect(),
            },
        }
    }
}

/// Affine input/target normalization stored with the model so checkpoints
/// are self-contained: the net sees `(x - offset) / scale` per channel and
/// is trained on `(t - target_offset) / target_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_offset: Vec<f32>,
    pub input_scale: Vec<f32>,
    pub target_offset: f32,
    pub target_scale: f32,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            input_offset: vec![0.0; channels],
            input_scale: vec![1.0; channels],
            target_offset: 0.0,
            target_scale: 1.0,
        }
    }
}

/// Ordered layer stack with head contract and normalization; the full
/// description (without parameter values) round-trips through [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub layers: Vec<Layer<T>>,
    pub heads: OutputHeads,
    pub norm: Normalization,
}

/// Serializable model description: layers, receptive field, heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub receptive_field: usize,
    pub heads: OutputHeads,
}

/// Cached activations of one forward pass, consumed by [`Model::backward`].
#[derive(Debug)]
pub struct Trace<T> {
    /// `acts[0]` is the normalized input; `acts[i + 1]` is layer `i`'s output.
    pub acts: Vec<Tensor<T>>,
    /// Nested traces for residual bodies (indexed like `layers`).
    inner: Vec<Option<Box<Trace<T>>>>,
}

fn forward_layers<T: Real>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut x = input.clone();
    for layer in layers {
        x = match layer {
            Layer::Conv(c) => c.forward(&x)?,
            Layer::PowerLaw(p) => p.forward(&x)?,
            Layer::Residual(body) => {
                let y = forward_layers(body, &x)?;
                if y.channels() != x.channels() {
                    return Err(NnError::InvalidModel(
                        "residual body must preserve channels".into(),
                    ));
                }
                let mut out = y;
                for (o, &i) in out.data_mut().iter_mut().zip(x.data()) {
                    *o += i;
                }
                out
            }
        };
    }
    Ok(x)
}

fn forward_layers_trace<T: Real>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<Trace<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    let mut inner = Vec::with_capacity(layers.len());
    acts.push(input.clone());
    for layer in layers {
        let x = acts.last().unwrap();
        match layer {
            Layer::Conv(c) => {
                let y = c.forward(x)?;
                inner.push(None);
                acts.push(y);
            }
            Layer::PowerLaw(p) => {
                let y = p.forward(x)?;
                inner.push(None);
                acts.push(y);
            }
            Layer::Residual(body) => {
                let body_trace = forward_layers_trace(body, x)?;
                let body_out = body_trace.acts.last().unwrap();
                if body_out.channels() != x.channels() {
                    return Err(NnError::InvalidModel(
                        "residual body must preserve channels".into(),
                    ));
                }
                let mut y = body_out.clone();
                for (o, &i) in y.data_mut().iter_mut().zip(x.data()) {
                    *o += i;
                }
                inner.push(Some(Box::new(body_trace)));
                acts.push(y);
            }
        }
    }
    Ok(Trace { acts, inner })
}

/// Backward through a layer stack given its trace. Writes parameter
/// gradients into `grads` (same flat layout as `collect_params`) and
/// returns dL/d(stack input).
fn backward_layers<T: Real>(
    layers: &[Layer<T>],
    trace: &Trace<T>,
    upstream: Tensor<T>,
    grads: &mut [T],
) -> Tensor<T> {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut pos = 0usize;
    for l in layers {
        offsets.push(pos);
        pos += l.param_count();
    }
    debug_assert_eq!(pos, grads.len());

    let mut up = upstream;
    for (i, layer) in layers.iter().enumerate().rev() {
        let start = offsets[i];
        let gslice = &mut grads[start..start + layer.param_count()];
        up = match layer {
            Layer::Conv(c) => c.backward(&trace.acts[i], &trace.acts[i + 1], &up, gslice),
            Layer::PowerLaw(p) => p.backward(&trace.acts[i], &up, gslice),
            Layer::Residual(body) => {
                let body_trace = trace.inner[i].as_ref().expect("residual trace");
                let mut dx = backward_layers(body, body_trace, up.clone(), gslice);
                for (d, &u) in dx.data_mut().iter_mut().zip(up.data()) {
                    *d += u;
                }
                dx
            }
        };
    }
    up
}

impl<T: Real> Model<T> {
    pub fn from_spec(spec: &ModelSpec, norm: Normalization) -> Result<Self> {
        let model = Model {
            layers: spec.layers.iter().map(LayerSpec::build).collect(),
            heads: spec.heads,
            norm,
        };
        model.validate()?;
        if model.receptive_field() != spec.receptive_field {
            return Err(NnError::InvalidModel(format!(
                "spec receptive field {} does not match layers ({})",
                spec.receptive_field,
                model.receptive_field()
            )));
        }
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            layers: self.layers.iter().map(LayerSpec::of).collect(),
            receptive_field: self.receptive_field(),
            heads: self.heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NnError::InvalidModel("no layers".into()));
        }
        let mut ch = self.layers[0].in_channels();
        if self.norm.input_offset.len() != ch || self.norm.input_scale.len() != ch {
            return Err(NnError::InvalidModel(
                "normalization width does not match input channels".into(),
            ));
        }
        for layer in &self.layers {
            if layer.in_channels() != ch {
                return Err(NnError::InvalidModel(format!(
                    "channel chain broken: layer expects {}, got {}",
                    layer.in_channels(),
                    ch
                )));
            }
            if let Layer::Residual(body) = layer {
                let mut inner_ch = ch;
                for b in body {
                    if b.in_channels() != inner_ch {
                        return Err(NnError::InvalidModel(
                            "channel chain broken in residual".into(),
                        ));
                    }
                    inner_ch = b.out_channels();
                }
                if inner_ch != ch {
                    return Err(NnError::InvalidModel(
                        "residual body must preserve channels".into(),
                    ));
                }
            }
            ch = layer.out_channels();
        }
        if ch != self.heads.channels() {
            return Err(NnError::InvalidModel(format!(
                "head expects {} output channels, layers produce {}",
                self.heads.channels(),
                ch
            )));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    /// `1 + 2 * (number of 3x3 layers)`.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.layers.iter().map(Layer::count_3x3).sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn collect_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.collect_params(&mut out);
        }
        out
    }

    pub fn load_params(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.param_count());
        let mut pos = 0usize;
        for l in &mut self.layers {
            l.load_params(params, &mut pos);
        }
    }

    fn normalize_input(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.channels() != self.input_channels() {
            return Err(NnError::ChannelMismatch {
                expected: self.input_channels(),
                got: input.channels(),
            });
        }
        let ch = input.channels();
        let off: Vec<T> = self
            .norm
            .input_offset
            .iter()
            .map(|&v| T::of_f32(v))
            .collect();
        let scale: Vec<T> = self
            .norm
            .input_scale
            .iter()
            .map(|&v| T::of_f32(if v.abs() < 1e-12 { 1.0 } else { v }))
            .collect();
        let mut x = input.clone();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let c = i % ch;
            *v = (*v - off[c]) / scale[c];
        }
        Ok(x)
    }

    /// Forward pass (raw input; normalization applied inside). Output is in
    /// normalized head space.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.normalize_input(input)?;
        forward_layers(&self.layers, &x)
    }

    /// Forward pass caching every activation for a subsequent backward call.
    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        let x = self.normalize_input(input)?;
        forward_layers_trace(&self.layers, &x)
    }

    pub fn output_of<'t>(&self, trace: &'t Trace<T>) -> &'t Tensor<T> {
        trace.acts.last().unwrap()
    }

    /// Reverse-mode pass. `upstream` is dL/d(output); gradients for every
    /// trainable parameter are accumulated into `grads` (flat layout).
    pub fn backward(&self, trace: &Trace<T>, upstream: Tensor<T>, grads: &mut [T]) {
        assert_eq!(grads.len(), self.param_count());
        backward_layers(&self.layers, trace, upstream, grads);
    }

    /// Denormalize a mean-head value back to target units.
    pub fn denorm_target(&self, v: T) -> T {
        v * T::of_f32(self.norm.target_scale) + T::of_f32(self.norm.target_offset)
    }

    /// Variance in target units for a log-variance head value.
    pub fn denorm_variance(&self, log_var: T) -> T {
        let s = T::of_f32(self.norm.target_scale);
        log_var.exp() * s * s
    }

    /// Seeded He-style initialization. The final layer gets smaller weights
    /// and zero bias so the initial prediction sits near the (normalized)
    /// target mean with unit predicted variance.
    pub fn init_seeded(&mut self, rng: &mut ChaCha8Rng) {
        fn init_layers<T: Real>(layers: &mut [Layer<T>], rng: &mut ChaCha8Rng, depth: usize) {
            let n = layers.len();
            for (i, layer) in layers.iter_mut().enumerate() {
                match layer {
                    Layer::Conv(c) => {
                        let fan_in = (c.ksize * c.ksize * c.in_ch) as f64;
                        let last = depth == 0 && i + 1 == n;
                        let sd = if last {
                            (0.5 / fan_in).sqrt()
                        } else {
                            (2.0 / fan_in).sqrt()
                        };
                        for w in c.weights.iter_mut() {
                            *w = T::of_f64(sample_normal(rng) * sd);
                        }
                        c.bias.fill(T::zero());
                    }
                    Layer::PowerLaw(p) => {
                        p.a = T::one();
                        p.b = T::one();
                    }
                    Layer::Residual(body) => init_layers(body, rng, depth + 1),
                }
            }
        }
        init_layers(&mut self.layers, rng, 0);
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let spec = self.spec();
        let mut out = Model::from_spec(&spec, self.norm.clone()).expect("valid model");
        let params: Vec<U> = self
            .collect_params()
            .iter()
            .map(|v| U::of_f64(v.as_f64()))
            .collect();
        out.load_params(&params);
        out
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; good enough for weight init and fully deterministic.
    loop {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.is_finite() {
            return z;
        }
    }
}

/// Stage-1 architecture: 1x1 projection into `width` channels, `blocks`
/// residual blocks of two 3x3 convolutions, and a 1x1 regression head.
pub fn canopy_model_spec(bands: usize, width: usize, blocks: usize) -> ModelSpec {
    let mut layers = vec![LayerSpec::Conv {
        ksize: 1,
        in_ch: bands,
        out_ch: width,
        activation: Activation::Relu,
    }];
    for _ in 0..blocks {
        layers.push(LayerSpec::Residual {
            body: vec![
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: width,
                    out_ch: width,
                    activation: Activation::Relu,
                },
                LayerSpec::Conv {
                    ksize: 3,
                    in_ch: width,
                    out_ch: width,
                    activation: Activation::Identity,
                },
            ],
        });
    }
    layers.push(LayerSpec::Conv {
        ksize: 1,
        in_ch: width,
        out_ch: 1,
        activation: Activation::Identity,
    });
    ModelSpec {
        receptive_field: 1 + 4 * blocks,
        layers,
        heads: OutputHeads::Mean,
    }
}

/// Stage-2 architecture: seven 3x3 convolutions (receptive field 15) of the
/// given width over the 1-band height input, then a 1x1 head with mean and
/// log-variance channels. `power_law_first` prepends the trainable
/// power-law transform.
pub fn carbon_model_spec(width: usize, power_law_first: bool) -> ModelSpec {
    let mut layers = Vec::new();
    if power_law_first {
        layers.push(LayerSpec::PowerLaw { channels: 1 });
    }
    layers.push(LayerSpec::Conv {
        ksize: 3,
        in_ch: 1,
        out_ch: width,
        activation: Activation::Relu,
    });
    for _ in 0..6 {
        layers.push(LayerSpec::Conv {
            ksize: 3,
            in_ch: width,
            out_ch: width,
            activation: Activation::Relu,
        });
    }
    layers.push(LayerSpec::Conv {
        ksize: 1,
        in_ch: width,
        out_ch: 2,
        activation: Activation::Identity,
    });
    ModelSpec {
        receptive_field: 15,
        layers,
        heads: OutputHeads::MeanLogVar,
    }
}
