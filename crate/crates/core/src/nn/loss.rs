//! Masked losses. Only pixels flagged valid contribute; gradients at
//! invalid pixels are exactly zero. Reductions accumulate in 64-bit.

use super::{NnError, Real, Result, Tensor};

fn check_mask(len: usize, valid: &[bool]) -> Result<usize> {
    if valid.len() != len {
        return Err(NnError::ShapeMismatch(format!(
            "mask length {} vs {} pixels",
            valid.len(),
            len
        )));
    }
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(NnError::EmptySupervision);
    }
    Ok(n)
}

/// Mean squared error over valid pixels.
///
/// Returns the loss and dL/dpred (`2 (p - t) / n_valid` at valid pixels).
pub fn masked_mse_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    valid: &[bool],
) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() || pred.channels() != 1 {
        return Err(NnError::ShapeMismatch(format!(
            "pred {:?} vs target {:?} (single channel required)",
            pred.shape(),
            target.shape()
        )));
    }
    let n = check_mask(pred.len(), valid)? as f64;
    let inv_n = T::of_f64(1.0 / n);
    let two = T::of_f64(2.0);
    let mut grad = Tensor::zeros(pred.rows(), pred.cols(), 1);
    let mut loss = 0.0f64;
    for (i, ((&p, &t), g)) in pred
        .data()
        .iter()
        .zip(target.data())
        .zip(grad.data_mut())
        .enumerate()
    {
        if valid[i] {
            let d = p - t;
            loss += (d * d).as_f64();
            *g = two * d * inv_n;
        }
    }
    Ok((T::of_f64(loss / n), grad))
}

/// Negative Gaussian log-likelihood averaged over valid pixels:
/// `0.5 * (log_var + (t - m)^2 * exp(-log_var) + ln(2 pi))` per pixel.
///
/// Returns (loss, dL/dmean, dL/dlog_var).
pub fn gaussian_nll_loss<T: Real>(
    mean: &Tensor<T>,
    log_var: &Tensor<T>,
    target: &Tensor<T>,
    valid: &[bool],
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    if mean.shape() != target.shape() || mean.shape() != log_var.shape() || mean.channels() != 1 {
        return Err(NnError::ShapeMismatch(format!(
            "mean {:?} / log_var {:?} / target {:?}",
            mean.shape(),
            log_var.shape(),
            target.shape()
        )));
    }
    let n = check_mask(mean.len(), valid)? as f64;
    let inv_n = T::of_f64(1.0 / n);
    let half = T::of_f64(0.5);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut grad_mean = Tensor::zeros(mean.rows(), mean.cols(), 1);
    let mut grad_log_var = Tensor::zeros(mean.rows(), mean.cols(), 1);
    let mut loss = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for i in 0..mean.len() {
        if !valid[i] {
            continue;
        }
        let m = mean.data()[i];
        let lv = log_var.data()[i];
        let t = target.data()[i];
        let resid = t - m;
        let inv_var = (-lv).exp();
        loss += 0.5 * (lv.as_f64() + (resid * resid * inv_var).as_f64() + ln_2pi);
        grad_mean.data_mut()[i] = (m - t) * inv_var * inv_n;
        grad_log_var.data_mut()[i] = half * (T::one() - resid * resid * inv_var) * inv_n;
    }
    Ok((T::of_f64(loss / n), grad_mean, grad_log_var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_when_pred_equals_target() {
        let pred = Tensor::from_vec(2, 2, 1, vec![1.0f64, 2.0, 3.0, 4.0]);
        let (loss, grad) = masked_mse_loss(&pred, &pred.clone(), &[true; 4]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_single_valid_pixel_hand_values() {
        // One valid pixel, pred 3, target 1: loss = 4, grad = 2*(3-1)/1 = 4.
        let pred = Tensor::from_vec(1, 2, 1, vec![3.0f64, 100.0]);
        let target = Tensor::from_vec(1, 2, 1, vec![1.0f64, -50.0]);
        let (loss, grad) = masked_mse_loss(&pred, &target, &[true, false]).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.data()[0], 4.0);
        assert_eq!(grad.data()[1], 0.0);
    }

    #[test]
    fn mse_empty_supervision_errors() {
        let pred: Tensor<f32> = Tensor::zeros(2, 2, 1);
        let err = masked_mse_loss(&pred, &pred.clone(), &[false; 4]).unwrap_err();
        assert!(matches!(err, NnError::EmptySupervision));
        assert_eq!(err.to_string(), "empty supervision");
    }

    #[test]
    fn nll_zero_residual_is_half_ln_2pi() {
        let mean = Tensor::from_vec(1, 3, 1, vec![5.0f64, -2.0, 0.0]);
        let lv = Tensor::zeros(1, 3, 1);
        let (loss, gm, glv) = gaussian_nll_loss(&mean, &lv, &mean.clone(), &[true; 3]).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((loss - expect).abs() < 1e-12);
        assert!(gm.data().iter().all(|&g| g == 0.0));
        // d/dlv = 0.5 * (1 - 0) / n
        assert!(glv.data().iter().all(|&g| (g - 0.5 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn nll_unit_residual_hand_value() {
        let mean = Tensor::from_vec(1, 1, 1, vec![0.0f64]);
        let lv = Tensor::zeros(1, 1, 1);
        let target = Tensor::from_vec(1, 1, 1, vec![1.0f64]);
        let (loss, _, _) = gaussian_nll_loss(&mean, &lv, &target, &[true]).unwrap();
        let expect = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn nll_mean_gradient_proportional_to_mse_gradient_at_zero_log_var() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n = 16;
            let mut mean = Tensor::zeros(4, 4, 1);
            let mut target = Tensor::zeros(4, 4, 1);
            let mut valid = vec![false; n];
            for i in 0..n {
                mean.data_mut()[i] = rng.random_range(-3.0..3.0);
                target.data_mut()[i] = rng.random_range(-3.0..3.0);
            }
            for v in valid.iter_mut() {
                *v = rng.random_bool(0.7);
            }
            if !valid.iter().any(|&v| v) {
                valid[0] = true;
            }
            let lv: Tensor<f64> = Tensor::zeros(4, 4, 1);
            let (_, g_nll, _) = gaussian_nll_loss(&mean, &lv, &target, &valid).unwrap();
            let (_, g_mse) = masked_mse_loss(&mean, &target, &valid).unwrap();
            for (&a, &b) in g_nll.data().iter().zip(g_mse.data()) {
                // NLL gradient in the mean is exactly half the MSE gradient.
                assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
    }
}
