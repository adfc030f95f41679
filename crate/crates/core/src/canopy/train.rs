//! Sparse-supervised training loop: seeded batches with replacement,
//! masked MSE at the labeled center pixel, ADAM updates, periodic
//! validation on held-out tiles, best-checkpoint selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetRecord};
use super::{split_tiles, CanopyError, Result, TrainConfig};
use crate::nn::{canopy_model_spec, masked_mse_loss, AdamState, Model, Normalization, Tensor};

/// One loss-trace row, recorded every `eval_interval` iterations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean training loss since the previous row (normalized units).
    pub train_loss: f64,
    /// Masked RMSE on held-out-tile records, meters.
    pub val_rmse: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters.
    pub model: Model<f32>,
    pub trace: Vec<TraceRow>,
    pub best_val_rmse: f64,
    /// Mean error (prediction - label) of the best model on held-out tiles.
    pub val_me: f64,
    pub train_tiles: Vec<usize>,
    pub val_tiles: Vec<usize>,
}

/// Per-band mean/sd over all training patch pixels plus target mean/sd.
fn fit_normalization(records: &[&DatasetRecord], bands: usize) -> Normalization {
    let mut sum = vec![0.0f64; bands];
    let mut sum2 = vec![0.0f64; bands];
    let mut n = 0u64;
    let mut tsum = 0.0f64;
    let mut tsum2 = 0.0f64;
    for rec in records {
        let data = rec.patch.data();
        for (i, &v) in data.iter().enumerate() {
            let b = i % bands;
            sum[b] += v as f64;
            sum2[b] += (v as f64) * (v as f64);
        }
        n += (data.len() / bands) as u64;
        tsum += rec.target as f64;
        tsum2 += (rec.target as f64) * (rec.target as f64);
    }
    let nf = n as f64;
    let mut offset = Vec::with_capacity(bands);
    let mut scale = Vec::with_capacity(bands);
    for b in 0..bands {
        let mean = sum[b] / nf;
        let var = (sum2[b] / nf - mean * mean).max(0.0);
        offset.push(mean as f32);
        scale.push((var.sqrt().max(1e-6)) as f32);
    }
    let t_mean = tsum / records.len() as f64;
    let t_var = (tsum2 / records.len() as f64 - t_mean * t_mean).max(0.0);
    Normalization {
        input_offset: offset,
        input_scale: scale,
        target_offset: t_mean as f32,
        target_scale: (t_var.sqrt().max(1e-6)) as f32,
    }
}

/// Forward + backward for one record; the loss supervises only the center
/// pixel. Returns the (normalized-space) loss; accumulates into `grads`.
fn record_grads(
    model: &Model<f32>,
    rec: &DatasetRecord,
    grads: &mut [f32],
) -> crate::nn::Result<f32> {
    let trace = model.forward_trace(&rec.patch)?;
    let out = model.output_of(&trace);
    let size = out.rows();
    let center = size / 2;
    let mut target = Tensor::zeros(size, size, 1);
    let t_norm = (rec.target - model.norm.target_offset) / model.norm.target_scale;
    target.set(center, center, 0, t_norm);
    let mut valid = vec![false; size * size];
    valid[center * size + center] = true;
    let (loss, upstream) = masked_mse_loss(out, &target, &valid)?;
    model.backward(&trace, upstream, grads);
    Ok(loss)
}

/// Accumulate gradients over a batch with a fixed chunking (chunks of 8
/// records, summed in index order, 64-bit accumulators), so the result is
/// identical for any worker-thread count.
fn batch_grads(
    model: &Model<f32>,
    records: &[&DatasetRecord],
    threads: usize,
) -> crate::nn::Result<(f64, Vec<f32>)> {
    const CHUNK: usize = 8;
    let nparams = model.param_count();
    let chunks: Vec<&[&DatasetRecord]> = records.chunks(CHUNK).collect();

    let run_chunk = |chunk: &[&DatasetRecord]| -> crate::nn::Result<(f64, Vec<f64>)> {
        let mut acc = vec![0.0f64; nparams];
        let mut scratch = vec![0.0f32; nparams];
        let mut loss = 0.0f64;
        for rec in chunk {
            scratch.fill(0.0);
            loss += record_grads(model, rec, &mut scratch)? as f64;
            for (a, &g) in acc.iter_mut().zip(&scratch) {
                *a += g as f64;
            }
        }
        Ok((loss, acc))
    };

    let partials: Vec<crate::nn::Result<(f64, Vec<f64>)>> = if threads > 1 {
        use rayon::prelude::*;
        chunks.par_iter().map(|c| run_chunk(c)).collect()
    } else {
        chunks.iter().map(|c| run_chunk(c)).collect()
    };

    let mut total = vec![0.0f64; nparams];
    let mut loss = 0.0f64;
    for p in partials {
        let (l, acc) = p?;
        loss += l;
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    let inv = 1.0 / records.len() as f64;
    Ok((
        loss * inv,
        total.iter().map(|&g| (g * inv) as f32).collect(),
    ))
}

/// Center-pixel prediction in meters, clamped at zero like dense inference.
pub(crate) fn predict_record(model: &Model<f32>, rec: &DatasetRecord) -> crate::nn::Result<f64> {
    let out = model.forward(&rec.patch)?;
    let center = out.rows() / 2;
    let v = model.denorm_target(out.get(center, center, 0));
    Ok(v.max(0.0) as f64)
}

fn validation_stats(
    model: &Model<f32>,
    records: &[&DatasetRecord],
    threads: usize,
) -> crate::nn::Result<(f64, f64)> {
    const CHUNK: usize = 64;
    let chunks: Vec<&[&DatasetRecord]> = records.chunks(CHUNK).collect();
    let eval_chunk = |chunk: &[&DatasetRecord]| -> crate::nn::Result<(f64, f64)> {
        let mut se = 0.0f64;
        let mut me = 0.0f64;
        for rec in chunk {
            let pred = predict_record(model, rec)?;
            let d = pred - rec.target as f64;
            se += d * d;
            me += d;
        }
        Ok((se, me))
    };
    let partials: Vec<crate::nn::Result<(f64, f64)>> = if threads > 1 {
        use rayon::prelude::*;
        chunks.par_iter().map(|c| eval_chunk(c)).collect()
    } else {
        chunks.iter().map(|c| eval_chunk(c)).collect()
    };
    let mut se = 0.0f64;
    let mut me = 0.0f64;
    for p in partials {
        let (s, m) = p?;
        se += s;
        me += m;
    }
    let n = records.len() as f64;
    Ok(((se / n).sqrt(), me / n))
}

/// Train the canopy model on a built dataset. Batches are sampled with
/// replacement (seeded); the checkpoint with the best held-out-tile RMSE
/// wins. A non-finite loss aborts with the trace collected so far.
pub fn train_canopy(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.records.is_empty() {
        return Err(CanopyError::EmptyTrainingSet);
    }
    let tile_ids = dataset.tile_ids();
    let (train_tiles, val_tiles) = split_tiles(&tile_ids, cfg.holdout_fraction, cfg.seed)?;
    let in_train = |id: usize| train_tiles.binary_search(&id).is_ok();
    let train_recs: Vec<&DatasetRecord> = dataset
        .records
        .iter()
        .filter(|r| in_train(r.tile_id))
        .collect();
    let val_recs: Vec<&DatasetRecord> = dataset
        .records
        .iter()
        .filter(|r| !in_train(r.tile_id))
        .collect();
    if train_recs.is_empty() {
        return Err(CanopyError::EmptyTrainingSet);
    }

    let norm = fit_normalization(&train_recs, dataset.bands);
    let spec = canopy_model_spec(dataset.bands, cfg.model_width, cfg.model_blocks);
    let mut model: Model<f32> = Model::from_spec(&spec, norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x1417);
    model.init_seeded(&mut rng);

    let mut params = model.collect_params();
    let mut adam: AdamState<f32> = AdamState::new(params.len(), cfg.learning_rate as f32);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(0xBA7C);

    let mut trace = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut window_loss = 0.0f64;
    let mut window_n = 0usize;
    let eval_every = cfg.eval_interval.max(1);

    for iter in 0..cfg.iterations {
        let batch: Vec<&DatasetRecord> = (0..cfg.batch_size)
            .map(|_| train_recs[batch_rng.random_range(0..train_recs.len())])
            .collect();
        let (loss, grads) = batch_grads(&model, &batch, cfg.threads)?;
        if !loss.is_finite() {
            return Err(CanopyError::Diverged {
                iteration: iter,
                trace,
            });
        }
        window_loss += loss;
        window_n += 1;
        adam.step(&mut params, &grads).map_err(|e| match e {
            crate::nn::NnError::Diverged => CanopyError::Diverged {
                iteration: iter,
                trace: trace.clone(),
            },
            other => CanopyError::Nn(other),
        })?;
        model.load_params(&params);

        let last = iter + 1 == cfg.iterations;
        if (iter + 1) % eval_every == 0 || last {
            let (val_rmse, _) = if val_recs.is_empty() {
                (f64::NAN, 0.0)
            } else {
                validation_stats(&model, &val_recs, cfg.threads)?
            };
            trace.push(TraceRow {
                iteration: iter + 1,
                train_loss: window_loss / window_n.max(1) as f64,
                val_rmse,
            });
            window_loss = 0.0;
            window_n = 0;
            if val_rmse.is_finite() && val_rmse < best_val {
                best_val = val_rmse;
                best_params.copy_from_slice(&params);
            }
        }
    }

    if !best_val.is_finite() {
        best_params.copy_from_slice(&params);
    }
    model.load_params(&best_params);
    let (best_rmse, val_me) = if val_recs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        validation_stats(&model, &val_recs, cfg.threads)?
    };
    Ok(TrainOutcome {
        model,
        trace,
        best_val_rmse: best_rmse,
        val_me,
        train_tiles,
        val_tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canopy::FootprintSource;
    use rand::Rng;

    /// Dataset whose target is a fixed linear function of band 0 (constant
    /// over the patch); the other bands carry noise the model must ignore.
    fn linear_toy_dataset(n: usize, bands: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let mut patch = Tensor::zeros(9, 9, bands);
            let x: f32 = rng.random_range(0.0..2.0);
            for r in 0..9 {
                for c in 0..9 {
                    patch.set(r, c, 0, x);
                    for b in 1..bands {
                        patch.set(r, c, b, rng.random_range(-1.0..1.0));
                    }
                }
            }
            records.push(DatasetRecord {
                tile_id: i % 12,
                col: 0,
                row: 0,
                target: 10.0 * x + 3.0,
                source: FootprintSource::LidarFootprint,
                patch,
            });
        }
        Dataset {
            patch_size: 9,
            bands,
            records,
            skipped_outside: 0,
            dropped_cloudy: 0,
        }
    }

    #[test]
    fn learns_linear_function_of_one_band() {
        let dataset = linear_toy_dataset(600, 3, 5);
        let cfg = TrainConfig {
            iterations: 2_000,
            batch_size: 64,
            learning_rate: 2e-2,
            model_width: 8,
            model_blocks: 1,
            eval_interval: 200,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train_canopy(&dataset, &cfg).unwrap();
        assert!(
            out.best_val_rmse < 0.1,
            "validation RMSE {}",
            out.best_val_rmse
        );
    }

    #[test]
    fn training_loss_decreases() {
        let dataset = linear_toy_dataset(400, 4, 9);
        let cfg = TrainConfig {
            iterations: 500,
            batch_size: 16,
            learning_rate: 1e-3,
            model_width: 8,
            model_blocks: 1,
            eval_interval: 100,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train_canopy(&dataset, &cfg).unwrap();
        let first = out.trace.first().unwrap().train_loss;
        let last = out.trace.last().unwrap().train_loss;
        assert!(last < first, "loss should fall: {first} -> {last}");
    }

    #[test]
    fn non_finite_loss_aborts_with_divergence() {
        let mut dataset = linear_toy_dataset(64, 3, 4);
        for rec in &mut dataset.records {
            rec.target = f32::NAN;
        }
        let cfg = TrainConfig {
            iterations: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            model_width: 6,
            model_blocks: 1,
            seed: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_canopy(&dataset, &cfg),
            Err(CanopyError::Diverged { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_thread_count_invariant() {
        let dataset = linear_toy_dataset(200, 3, 2);
        let cfg = TrainConfig {
            iterations: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            model_width: 6,
            model_blocks: 1,
            eval_interval: 30,
            seed: 2,
            ..TrainConfig::default()
        };
        let a = train_canopy(&dataset, &cfg).unwrap();
        let b = train_canopy(&dataset, &cfg).unwrap();
        assert_eq!(a.model.collect_params(), b.model.collect_params());

        let mut cfg_mt = cfg.clone();
        cfg_mt.threads = 4;
        let c = train_canopy(&dataset, &cfg_mt).unwrap();
        assert_eq!(
            a.model.collect_params(),
            c.model.collect_params(),
            "fixed chunking must make gradients thread-count invariant"
        );
    }
}
