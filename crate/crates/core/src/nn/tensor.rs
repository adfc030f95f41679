//! Dense (rows, cols, channels) tensor with channel-last storage.

use super::Real;

/// Channel-last 3-D array: element (r, c, ch) lives at
/// `(r * cols + c) * channels + ch`, so the per-pixel channel vector is
/// contiguous (what the convolution inner loops want).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
            data: vec![T::zero(); rows * cols * channels],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols * channels);
        Self {
            rows,
            cols,
            channels,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> T {
        self.data[(r * self.cols + c) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: T) {
        self.data[(r * self.cols + c) * self.channels + ch] = v;
    }

    /// Contiguous channel vector at pixel (r, c).
    #[inline]
    pub fn pixel(&self, r: usize, c: usize) -> &[T] {
        let i = (r * self.cols + c) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, r: usize, c: usize) -> &mut [T] {
        let i = (r * self.cols + c) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pull one channel out as a fresh single-channel tensor.
    pub fn channel(&self, ch: usize) -> Tensor<T> {
        assert!(ch < self.channels);
        let mut out = Tensor::zeros(self.rows, self.cols, 1);
        for i in 0..self.rows * self.cols {
            out.data[i] = self.data[i * self.channels + ch];
        }
        out
    }

    /// Write a single-channel tensor into channel `ch` of self.
    pub fn set_channel(&mut self, ch: usize, src: &Tensor<T>) {
        assert_eq!(
            (src.rows, src.cols, src.channels),
            (self.rows, self.cols, 1)
        );
        for i in 0..self.rows * self.cols {
            self.data[i * self.channels + ch] = src.data[i];
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_last() {
        let mut t: Tensor<f32> = Tensor::zeros(2, 3, 4);
        t.set(1, 2, 3, 9.0);
        assert_eq!(t.data()[(3 + 2) * 4 + 3], 9.0);
        assert_eq!(t.pixel(1, 2), &[0.0, 0.0, 0.0, 9.0]);
    }

    #[test]
    fn channel_split_and_merge() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0f32, 2.0, 3.0, 4.0]);
        let c1 = t.channel(1);
        assert_eq!(c1.data(), &[2.0, 4.0]);
        let mut u: Tensor<f32> = Tensor::zeros(1, 2, 2);
        u.set_channel(1, &c1);
        assert_eq!(u.data(), &[0.0, 2.0, 0.0, 4.0]);
    }
}
