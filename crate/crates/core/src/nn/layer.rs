//! Layer vocabulary: convolutions (stride 1, reflection padding), the
//! trainable power-law transform, and residual blocks.

use serde::{Deserialize, Serialize};

use super::{NnError, Real, Result, Tensor};
use crate::grid::reflect_index;

/// Input clamp for the power-law layer so `0^b` and `ln 0` never occur.
pub const POWER_LAW_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Stride-1 convolution with a 1x1 or 3x3 kernel. Spatial size is preserved
/// by mirroring the border (reflection padding), so the layer stack stays
/// fully convolutional on any input size >= 1.
///
/// Weight layout is `[tap][in_channel][out_channel]` with the out-channel
/// axis contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub ksize: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(ksize: usize, in_ch: usize, out_ch: usize, activation: Activation) -> Self {
        assert!(ksize == 1 || ksize == 3, "kernel must be 1x1 or 3x3");
        Self {
            ksize,
            in_ch,
            out_ch,
            weights: vec![T::zero(); ksize * ksize * in_ch * out_ch],
            bias: vec![T::zero(); out_ch],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.channels() != self.in_ch {
            return Err(NnError::ChannelMismatch {
                expected: self.in_ch,
                got: input.channels(),
            });
        }
        if input.rows() == 0 || input.cols() == 0 {
            return Err(NnError::InputTooSmall {
                got: 0,
                kernel: self.ksize,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let (rows, cols, _) = input.shape();
        let mut out = Tensor::zeros(rows, cols, self.out_ch);
        let half = (self.ksize / 2) as i64;
        let tap_span = self.in_ch * self.out_ch;
        let mut acc = vec![T::zero(); self.out_ch];
        for r in 0..rows {
            for c in 0..cols {
                acc.copy_from_slice(&self.bias);
                let mut tap = 0usize;
                for dr in -half..=half {
                    let sr = reflect_index(r as i64 + dr, rows);
                    for dc in -half..=half {
                        let sc = reflect_index(c as i64 + dc, cols);
                        let px = input.pixel(sr, sc);
                        let wbase = tap * tap_span;
                        for (ic, &x) in px.iter().enumerate() {
                            let ws = &self.weights[wbase + ic * self.out_ch..][..self.out_ch];
                            for (a, &w) in acc.iter_mut().zip(ws) {
                                *a += x * w;
                            }
                        }
                        tap += 1;
                    }
                }
                let out_px = out.pixel_mut(r, c);
                match self.activation {
                    Activation::Identity => out_px.copy_from_slice(&acc),
                    Activation::Relu => {
                        for (o, &a) in out_px.iter_mut().zip(&acc) {
                            *o = if a > T::zero() { a } else { T::zero() };
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Backpropagate through the layer. `output` must be the tensor the
    /// forward pass produced for `input` (the ReLU mask is read off it;
    /// the subgradient at 0 is 0). Parameter gradients are accumulated into
    /// `grads` (layout: weights then bias); returns dL/dinput.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        upstream: &Tensor<T>,
        grads: &mut [T],
    ) -> Tensor<T> {
        debug_assert_eq!(grads.len(), self.param_count());
        let (rows, cols, _) = input.shape();
        let half = (self.ksize / 2) as i64;
        let tap_span = self.in_ch * self.out_ch;
        let (wgrad, bgrad) = grads.split_at_mut(self.weights.len());
        let mut dinput = Tensor::zeros(rows, cols, self.in_ch);
        let mut g = vec![T::zero(); self.out_ch];
        for r in 0..rows {
            for c in 0..cols {
                let up = upstream.pixel(r, c);
                match self.activation {
                    Activation::Identity => g.copy_from_slice(up),
                    Activation::Relu => {
                        let out_px = output.pixel(r, c);
                        for ((gv, &u), &o) in g.iter_mut().zip(up).zip(out_px) {
                            *gv = if o > T::zero() { u } else { T::zero() };
                        }
                    }
                }
                for (bg, &gv) in bgrad.iter_mut().zip(&g) {
                    *bg += gv;
                }
                let mut tap = 0usize;
                for dr in -half..=half {
                    let sr = reflect_index(r as i64 + dr, rows);
                    for dc in -half..=half {
                        let sc = reflect_index(c as i64 + dc, cols);
                        let in_px = input.pixel(sr, sc);
                        let wbase = tap * tap_span;
                        let din_px = dinput.pixel_mut(sr, sc);
                        for (ic, &x) in in_px.iter().enumerate() {
                            let ws = &self.weights[wbase + ic * self.out_ch..][..self.out_ch];
                            let wg = &mut wgrad[wbase + ic * self.out_ch..][..self.out_ch];
                            let mut dot = T::zero();
                            for oc in 0..self.out_ch {
                                let gv = g[oc];
                                dot += ws[oc] * gv;
                                wg[oc] += x * gv;
                            }
                            din_px[ic] += dot;
                        }
                        tap += 1;
                    }
                }
            }
        }
        dinput
    }
}

/// Elementwise trainable transform `y = a * max(x, eps)^b`, monotone
/// non-decreasing in `x` for positive `a`, `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawLayer<T> {
    pub a: T,
    pub b: T,
    pub channels: usize,
}

impl<T: Real> PowerLawLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            a: T::one(),
            b: T::one(),
            channels,
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.channels() != self.channels {
            return Err(NnError::ChannelMismatch {
                expected: self.channels,
                got: input.channels(),
            });
        }
        let eps = T::of_f64(POWER_LAW_EPS);
        let mut out = input.clone();
        for v in out.data_mut() {
            let xc = if *v > eps { *v } else { eps };
            *v = self.a * xc.powf(self.b);
        }
        Ok(out)
    }

    /// dL/da = sum u * xc^b, dL/db = sum u * a * xc^b * ln(xc),
    /// dL/dx = u * a * b * xc^(b-1) for x above the clamp, 0 below.
    pub fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>, grads: &mut [T]) -> Tensor<T> {
        debug_assert_eq!(grads.len(), 2);
        let eps = T::of_f64(POWER_LAW_EPS);
        let mut da = 0.0f64;
        let mut db = 0.0f64;
        let mut dinput = Tensor::zeros(input.rows(), input.cols(), input.channels());
        for ((&x, &u), dx) in input
            .data()
            .iter()
            .zip(upstream.data())
            .zip(dinput.data_mut())
        {
            let xc = if x > eps { x } else { eps };
            let pow = xc.powf(self.b);
            da += (u * pow).as_f64();
            db += (u * self.a * pow * xc.ln()).as_f64();
            if x > eps {
                *dx = u * self.a * self.b * xc.powf(self.b - T::one());
            }
        }
        grads[0] += T::of_f64(da);
        grads[1] += T::of_f64(db);
        dinput
    }
}

/// One step of the layer stack. `Residual` computes `x + body(x)` and
/// requires the body to preserve the channel count.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    PowerLaw(PowerLawLayer<T>),
    Residual(Vec<Layer<T>>),
}

impl<T: Real> Layer<T> {
    pub fn in_channels(&self) -> usize {
        match self {
            Layer::Conv(c) => c.in_ch,
            Layer::PowerLaw(p) => p.channels,
            Layer::Residual(body) => body.first().map_or(0, |l| l.in_channels()),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Layer::Conv(c) => c.out_ch,
            Layer::PowerLaw(p) => p.channels,
            Layer::Residual(body) => body.last().map_or(0, |l| l.out_channels()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.param_count(),
            Layer::PowerLaw(_) => 2,
            Layer::Residual(body) => body.iter().map(Layer::param_count).sum(),
        }
    }

    pub fn count_3x3(&self) -> usize {
        match self {
            Layer::Conv(c) => usize::from(c.ksize == 3),
            Layer::PowerLaw(_) => 0,
            Layer::Residual(body) => body.iter().map(Layer::count_3x3).sum(),
        }
    }

    pub fn collect_params(&self, out: &mut Vec<T>) {
        match self {
            Layer::Conv(c) => {
                out.extend_from_slice(&c.weights);
                out.extend_from_slice(&c.bias);
            }
            Layer::PowerLaw(p) => {
                out.push(p.a);
                out.push(p.b);
            }
            Layer::Residual(body) => body.iter().for_each(|l| l.collect_params(out)),
        }
    }

    pub fn load_params(&mut self, src: &[T], pos: &mut usize) {
        match self {
            Layer::Conv(c) => {
                let nw = c.weights.len();
                c.weights.copy_from_slice(&src[*pos..*pos + nw]);
                *pos += nw;
                let nb = c.bias.len();
                c.bias.copy_from_slice(&src[*pos..*pos + nb]);
                *pos += nb;
            }
            Layer::PowerLaw(p) => {
                p.a = src[*pos];
                p.b = src[*pos + 1];
                *pos += 2;
            }
            Layer::Residual(body) => body.iter_mut().for_each(|l| l.load_params(src, pos)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_conv_passes_input_through() {
        let mut layer: ConvLayer<f32> = ConvLayer::new(1, 1, 1, Activation::Identity);
        layer.weights[0] = 1.0;
        let input = Tensor::from_vec(2, 2, 1, vec![1.0, -2.0, 3.5, 0.0]);
        let out = layer.forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn all_ones_3x3_on_constant_gives_9c() {
        let mut layer: ConvLayer<f32> = ConvLayer::new(3, 1, 1, Activation::Identity);
        layer.weights.fill(1.0);
        let input = Tensor::from_vec(5, 5, 1, vec![2.0; 25]);
        let out = layer.forward(&input).unwrap();
        // Reflection padding keeps the border constant as well.
        assert!(out.data().iter().all(|&v| (v - 18.0).abs() < 1e-6));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let layer: ConvLayer<f32> = ConvLayer::new(3, 2, 4, Activation::Relu);
        let input = Tensor::zeros(4, 4, 3);
        assert!(matches!(
            layer.forward(&input),
            Err(NnError::ChannelMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    /// Brute-force direct convolution used as the independent oracle.
    pub(crate) fn conv_oracle(input: &Tensor<f64>, layer: &ConvLayer<f64>) -> Tensor<f64> {
        let (rows, cols, _) = input.shape();
        let half = (layer.ksize / 2) as i64;
        let mut out = Tensor::zeros(rows, cols, layer.out_ch);
        for r in 0..rows {
            for c in 0..cols {
                for oc in 0..layer.out_ch {
                    let mut acc = layer.bias[oc];
                    for dr in -half..=half {
                        for dc in -half..=half {
                            let sr = reflect_index(r as i64 + dr, rows);
                            let sc = reflect_index(c as i64 + dc, cols);
                            let tap = ((dr + half) * (2 * half + 1) + (dc + half)) as usize;
                            for ic in 0..layer.in_ch {
                                let w = layer.weights[(tap * layer.in_ch + ic) * layer.out_ch + oc];
                                acc += input.get(sr, sc, ic) * w;
                            }
                        }
                    }
                    let v = match layer.activation {
                        Activation::Identity => acc,
                        Activation::Relu => acc.max(0.0),
                    };
                    out.set(r, c, oc, v);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut layer: ConvLayer<f64> = ConvLayer::new(3, 3, 5, Activation::Relu);
        for w in layer.weights.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let mut input = Tensor::zeros(8, 8, 3);
        for v in input.data_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let fast = layer.forward(&input).unwrap();
        let slow = conv_oracle(&input, &layer);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn power_law_clamps_and_is_monotone() {
        let layer = PowerLawLayer::<f64> {
            a: 2.0,
            b: 1.5,
            channels: 1,
        };
        let input = Tensor::from_vec(1, 4, 1, vec![-1.0, 0.0, 1.0, 4.0]);
        let out = layer.forward(&input).unwrap();
        let eps_out = 2.0 * POWER_LAW_EPS.powf(1.5);
        assert!((out.get(0, 0, 0) - eps_out).abs() < 1e-12);
        assert!((out.get(0, 1, 0) - eps_out).abs() < 1e-12);
        assert!((out.get(0, 2, 0) - 2.0).abs() < 1e-12);
        assert!((out.get(0, 3, 0) - 16.0).abs() < 1e-12);
        for w in out.data().windows(2) {
            assert!(w[1] >= w[0]);
        }
    }
}
