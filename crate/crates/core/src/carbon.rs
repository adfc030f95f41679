//! Stage 2: aboveground carbon density regressed from the dense canopy
//! height map by an ensemble of five shallow CNNs (receptive field 15,
//! mean + log-variance heads, Gaussian NLL loss).
//!
//! The calibration area is split geographically by column range; training
//! walks all 64x64 windows of the training region once per epoch in a
//! seeded order, with no early stopping (final-epoch parameters are kept).
//! Members differ only by seed and train independently, so they can run in
//! parallel without changing results.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canopy::{dense_forward_heads, Tiling};
use crate::evalstats::{percentile, regression_metrics_from_pairs, RegressionMetrics};
use crate::grid::Grid;
use crate::nn::{
    carbon_model_spec, gaussian_nll_loss, AdamState, Model, Normalization, OutputHeads, Tensor,
};

pub const ENSEMBLE_SIZE: usize = 5;
pub const CARBON_RECEPTIVE_FIELD: usize = 15;

#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("ensemble must have exactly {ENSEMBLE_SIZE} members, got {0}")]
    WrongMemberCount(usize),
    #[error("member {0} has receptive field {1}, expected {CARBON_RECEPTIVE_FIELD}")]
    WrongReceptiveField(usize, usize),
    #[error("member {0} lacks the log-variance head")]
    MissingVarianceHead(usize),
    #[error("train and test column ranges overlap")]
    OverlappingRegions,
    #[error("region split exceeds grid width {0}")]
    RegionOutOfBounds(usize),
    #[error("empty region: {0}")]
    EmptyRegion(&'static str),
    #[error("training diverged (member {member}, epoch {epoch})")]
    Diverged { member: usize, epoch: usize },
    #[error("grid error: {0}")]
    Grid(#[from] crate::grid::GridError),
    #[error("canopy error: {0}")]
    Canopy(#[from] crate::canopy::CanopyError),
    #[error("nn error: {0}")]
    Nn(#[from] crate::nn::NnError),
    #[error("stats error: {0}")]
    Stats(#[from] crate::evalstats::StatsError),
}

pub type Result<T> = std::result::Result<T, CarbonError>;

/// Geographic split by column ranges: `[train_start, train_end)` for
/// training (its rightmost `val_fraction` of columns is carved off for
/// monitoring) and `[test_start, test_end)` for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSplit {
    pub train_start: usize,
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
    pub val_fraction: f64,
}

impl RegionSplit {
    /// Mirror of the calibration-site proportions: the leftmost ~85% of the
    /// columns train (with 10% of that carved for validation), the rest is
    /// the test strip.
    pub fn proportional(width: usize) -> Self {
        let test_start = (width as f64 * 170.0 / 190.0).round() as usize;
        Self {
            train_start: 0,
            train_end: test_start,
            test_start,
            test_end: width,
            val_fraction: 0.10,
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.train_end > width || self.test_end > width {
            return Err(CarbonError::RegionOutOfBounds(width));
        }
        if self.train_start >= self.train_end {
            return Err(CarbonError::EmptyRegion("train"));
        }
        if self.test_start >= self.test_end {
            return Err(CarbonError::EmptyRegion("test"));
        }
        let disjoint = self.train_end <= self.test_start || self.test_end <= self.train_start;
        if !disjoint {
            return Err(CarbonError::OverlappingRegions);
        }
        Ok(())
    }

    /// Columns actually used for gradient updates (validation carved off).
    pub fn fit_cols(&self) -> std::ops::Range<usize> {
        let span = self.train_end - self.train_start;
        let val = ((span as f64 * self.val_fraction).round() as usize).min(span.saturating_sub(1));
        self.train_start..self.train_end - val
    }

    pub fn val_cols(&self) -> std::ops::Range<usize> {
        self.fit_cols().end..self.train_end
    }

    pub fn test_cols(&self) -> std::ops::Range<usize> {
        self.test_start..self.test_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarbonTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Training window side length, pixels.
    pub window: usize,
    /// Channel width of the conv stack.
    pub width: usize,
    /// Prepend the trainable power-law transform.
    pub power_law_first: bool,
    /// Cap on the global L2 norm of each update's gradient (0 disables).
    /// The NLL loss gets extremely sharp when the predicted variance is
    /// small; without the cap a single overshoot poisons the optimizer
    /// moments for many epochs on low-noise references.
    pub grad_clip: f64,
    /// One seed per ensemble member.
    pub seeds: [u64; ENSEMBLE_SIZE],
    pub threads: usize,
}

impl Default for CarbonTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-4,
            window: 64,
            width: 32,
            power_law_first: false,
            grad_clip: 5.0,
            seeds: [101, 102, 103, 104, 105],
            threads: 1,
        }
    }
}

/// Exactly five trained members sharing the 1-band height input contract.
#[derive(Debug, Clone)]
pub struct CarbonEnsemble {
    members: Vec<Model<f32>>,
}

impl CarbonEnsemble {
    pub fn new(members: Vec<Model<f32>>) -> Result<Self> {
        if members.len() != ENSEMBLE_SIZE {
            return Err(CarbonError::WrongMemberCount(members.len()));
        }
        for (i, m) in members.iter().enumerate() {
            if m.receptive_field() != CARBON_RECEPTIVE_FIELD {
                return Err(CarbonError::WrongReceptiveField(i, m.receptive_field()));
            }
            if m.heads != OutputHeads::MeanLogVar {
                return Err(CarbonError::MissingVarianceHead(i));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Model<f32>] {
        &self.members
    }
}

/// Dense per-pixel prediction with deep-ensemble uncertainty.
#[derive(Debug, Clone)]
pub struct CarbonPrediction {
    /// Ensemble-mean carbon density, Mg C / ha, clamped at 0.
    pub mean: Grid,
    /// Mean member variance plus variance of member means, (Mg C / ha)^2.
    pub variance: Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberTraceRow {
    pub member: usize,
    pub epoch: usize,
    pub train_nll: f64,
    pub val_rmse: f64,
}

fn region_stats(grid: &Grid, cols: std::ops::Range<usize>) -> (f64, f64) {
    let mut sum = 0.0f64;
    let mut sum2 = 0.0f64;
    let mut n = 0u64;
    for r in 0..grid.height() {
        for c in cols.clone() {
            if !grid.is_nodata(c, r) {
                let v = grid.value(0, c, r) as f64;
                sum += v;
                sum2 += v * v;
                n += 1;
            }
        }
    }
    let mean = sum / n.max(1) as f64;
    let var = (sum2 / n.max(1) as f64 - mean * mean).max(1e-12);
    (mean, var.sqrt())
}

fn cover_starts(extent: usize, window: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0usize;
    loop {
        if s + window >= extent {
            starts.push(extent - window);
            break;
        }
        starts.push(s);
        s += window;
    }
    starts
}

struct WindowRef {
    col0: usize,
    row0: usize,
    w: usize,
    h: usize,
}

fn window_tensors(
    height: &Grid,
    carbon: &Grid,
    win: &WindowRef,
    height_fill: f32,
) -> (Tensor<f32>, Tensor<f32>, Vec<bool>) {
    let mut input = Tensor::zeros(win.h, win.w, 1);
    let mut target = Tensor::zeros(win.h, win.w, 1);
    let mut valid = vec![false; win.h * win.w];
    for r in 0..win.h {
        for c in 0..win.w {
            let (gc, gr) = (win.col0 + c, win.row0 + r);
            let h_ok = !height.is_nodata(gc, gr);
            input.set(
                r,
                c,
                0,
                if h_ok {
                    height.value(0, gc, gr)
                } else {
                    height_fill
                },
            );
            if h_ok && !carbon.is_nodata(gc, gr) {
                target.set(r, c, 0, carbon.value(0, gc, gr));
                valid[r * win.w + c] = true;
            }
        }
    }
    (input, target, valid)
}

fn train_member(
    member: usize,
    height: &Grid,
    carbon_ref: &Grid,
    split: &RegionSplit,
    cfg: &CarbonTrainConfig,
    norm: &Normalization,
    trace: &mut Vec<MemberTraceRow>,
) -> Result<Model<f32>> {
    let spec = carbon_model_spec(cfg.width, cfg.power_law_first);
    let mut model: Model<f32> = Model::from_spec(&spec, norm.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[member]);
    rng.set_stream(0xCAB0);
    model.init_seeded(&mut rng);

    let fit = split.fit_cols();
    let col_starts: Vec<usize> = cover_starts(fit.end - fit.start, cfg.window)
        .into_iter()
        .map(|s| s + fit.start)
        .collect();
    let row_starts = cover_starts(height.height(), cfg.window);
    let mut windows: Vec<WindowRef> = Vec::new();
    for &r0 in &row_starts {
        for &c0 in &col_starts {
            windows.push(WindowRef {
                col0: c0,
                row0: r0,
                w: cfg.window.min(fit.end - c0).min(height.width() - c0),
                h: cfg.window.min(height.height() - r0),
            });
        }
    }

    let mut params = model.collect_params();
    let mut adam: AdamState<f32> = AdamState::new(params.len(), cfg.learning_rate as f32);
    let mut grads = vec![0.0f32; params.len()];
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let t_off = norm.target_offset;
    let t_scale = norm.target_scale;
    let height_fill = norm.input_offset[0];

    for epoch in 0..cfg.epochs {
        // One pass over all training windows, without replacement.
        let mut erng = ChaCha8Rng::seed_from_u64(cfg.seeds[member]);
        erng.set_stream(0xE0_0000 + epoch as u64);
        order.shuffle(&mut erng);
        let mut epoch_nll = 0.0f64;
        let mut epoch_windows = 0usize;
        for &wi in &order {
            let win = &windows[wi];
            let (input, mut target, valid) = window_tensors(height, carbon_ref, win, height_fill);
            if !valid.iter().any(|&v| v) {
                continue;
            }
            for t in target.data_mut() {
                *t = (*t - t_off) / t_scale;
            }
            let tr = model.forward_trace(&input)?;
            let out = model.output_of(&tr);
            let mean = out.channel(0);
            let log_var = out.channel(1);
            let (loss, gm, glv) = gaussian_nll_loss(&mean, &log_var, &target, &valid)?;
            if !loss.is_finite() {
                return Err(CarbonError::Diverged { member, epoch });
            }
            let mut upstream = Tensor::zeros(out.rows(), out.cols(), 2);
            upstream.set_channel(0, &gm);
            upstream.set_channel(1, &glv);
            grads.fill(0.0);
            model.backward(&tr, upstream, &mut grads);
            if cfg.grad_clip > 0.0 {
                let norm = grads
                    .iter()
                    .map(|&g| (g as f64) * (g as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.grad_clip {
                    let scale = (cfg.grad_clip / norm) as f32;
                    for g in grads.iter_mut() {
                        *g *= scale;
                    }
                }
            }
            adam.step(&mut params, &grads).map_err(|e| match e {
                crate::nn::NnError::Diverged => CarbonError::Diverged { member, epoch },
                other => CarbonError::Nn(other),
            })?;
            model.load_params(&params);
            epoch_nll += loss as f64;
            epoch_windows += 1;
        }

        // Monitoring only; no early stopping by design.
        if (epoch + 1) % 10 == 0 || epoch + 1 == cfg.epochs {
            let val_rmse = region_rmse(&model, height, carbon_ref, split.val_cols(), cfg)?;
            trace.push(MemberTraceRow {
                member,
                epoch: epoch + 1,
                train_nll: epoch_nll / epoch_windows.max(1) as f64,
                val_rmse,
            });
        }
    }
    Ok(model)
}

fn region_rmse(
    model: &Model<f32>,
    height: &Grid,
    carbon_ref: &Grid,
    cols: std::ops::Range<usize>,
    cfg: &CarbonTrainConfig,
) -> Result<f64> {
    if cols.is_empty() {
        return Ok(f64::NAN);
    }
    let mut se = 0.0f64;
    let mut n = 0u64;
    let height_fill = model.norm.input_offset[0];
    for r0 in cover_starts(height.height(), cfg.window) {
        let win = WindowRef {
            col0: cols.start,
            row0: r0,
            w: cols.end - cols.start,
            h: cfg.window.min(height.height() - r0),
        };
        let (input, target, valid) = window_tensors(height, carbon_ref, &win, height_fill);
        let out = model.forward(&input)?;
        for r in 0..win.h {
            for c in 0..win.w {
                if valid[r * win.w + c] {
                    let pred = model.denorm_target(out.get(r, c, 0)).max(0.0) as f64;
                    let d = pred - target.get(r, c, 0) as f64;
                    se += d * d;
                    n += 1;
                }
            }
        }
    }
    Ok((se / n.max(1) as f64).sqrt())
}

/// Train the five-member ensemble. Members share the data and differ only
/// by seed (initialization and window order); with `threads > 1` they train
/// in parallel with identical results.
pub fn train_carbon_ensemble(
    height: &Grid,
    carbon_ref: &Grid,
    split: &RegionSplit,
    cfg: &CarbonTrainConfig,
) -> Result<(CarbonEnsemble, Vec<MemberTraceRow>)> {
    height.check_aligned(carbon_ref)?;
    split.validate(height.width())?;

    let fit = split.fit_cols();
    let (h_mean, h_sd) = region_stats(height, fit.clone());
    let (c_mean, c_sd) = region_stats(carbon_ref, fit);
    let norm = Normalization {
        input_offset: vec![h_mean as f32],
        input_scale: vec![h_sd.max(1e-6) as f32],
        target_offset: c_mean as f32,
        target_scale: c_sd.max(1e-6) as f32,
    };

    let run = |member: usize| -> Result<(Model<f32>, Vec<MemberTraceRow>)> {
        let mut trace = Vec::new();
        let model = train_member(member, height, carbon_ref, split, cfg, &norm, &mut trace)?;
        Ok((model, trace))
    };

    let results: Vec<Result<(Model<f32>, Vec<MemberTraceRow>)>> = if cfg.threads > 1 {
        use rayon::prelude::*;
        (0..ENSEMBLE_SIZE).into_par_iter().map(run).collect()
    } else {
        (0..ENSEMBLE_SIZE).map(run).collect()
    };

    let mut members = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut trace = Vec::new();
    for res in results {
        let (model, t) = res?;
        members.push(model);
        trace.extend(t);
    }
    Ok((CarbonEnsemble::new(members)?, trace))
}

/// Ensemble prediction over a height grid: the arithmetic mean of the five
/// member means (clamped at 0) and the deep-ensemble total variance (mean
/// member variance + variance of member means, both in target units).
pub fn predict_carbon(
    ensemble: &CarbonEnsemble,
    height: &Grid,
    tiling: Option<Tiling>,
    threads: usize,
) -> Result<CarbonPrediction> {
    if ensemble.members.len() != ENSEMBLE_SIZE {
        return Err(CarbonError::WrongMemberCount(ensemble.members.len()));
    }
    let tiling = tiling.unwrap_or_default();
    let mut member_means: Vec<Grid> = Vec::with_capacity(ENSEMBLE_SIZE);
    let mut member_vars: Vec<Grid> = Vec::with_capacity(ENSEMBLE_SIZE);
    for model in &ensemble.members {
        let heads = dense_forward_heads(model, height, tiling, threads)?;
        let mut mean = heads[0].clone();
        let mut var = heads[1].clone();
        for v in mean.band_mut(0) {
            *v = model.norm.target_scale * *v + model.norm.target_offset;
        }
        let s2 = (model.norm.target_scale as f64 * model.norm.target_scale as f64) as f32;
        for v in var.band_mut(0) {
            *v = v.exp() * s2;
        }
        member_means.push(mean);
        member_vars.push(var);
    }

    let mut mean = Grid::filled(height.width(), height.height(), 1, *height.transform(), 0.0);
    mean.set_band_names(vec!["carbon_mgc_ha".into()]);
    let mut variance = mean.clone();
    variance.set_band_names(vec!["carbon_variance".into()]);
    let m = ENSEMBLE_SIZE as f64;
    for r in 0..height.height() {
        for c in 0..height.width() {
            if height.is_nodata(c, r) {
                mean.set_nodata(c, r, true);
                variance.set_nodata(c, r, true);
                continue;
            }
            let mut sum = 0.0f64;
            let mut sum2 = 0.0f64;
            let mut var_sum = 0.0f64;
            for (mm, mv) in member_means.iter().zip(&member_vars) {
                let v = mm.value(0, c, r) as f64;
                sum += v;
                sum2 += v * v;
                var_sum += mv.value(0, c, r) as f64;
            }
            let avg = sum / m;
            let spread = (sum2 / m - avg * avg).max(0.0);
            mean.set_value(0, c, r, avg.max(0.0) as f32);
            variance.set_value(0, c, r, (var_sum / m + spread) as f32);
        }
    }
    Ok(CarbonPrediction { mean, variance })
}

/// Per-reference-decile saturation diagnostic row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecileRow {
    pub decile: usize,
    pub reference_mean: f64,
    pub prediction_mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarbonEvalReport {
    pub metrics: RegressionMetrics,
    /// Mean prediction per reference decile; saturation shows up as the top
    /// deciles' prediction mean falling below the reference mean.
    pub deciles: Vec<DecileRow>,
}

/// Evaluate a prediction against the reference over the test column range.
pub fn evaluate_carbon(
    pred: &CarbonPrediction,
    carbon_ref: &Grid,
    test_cols: std::ops::Range<usize>,
) -> Result<CarbonEvalReport> {
    pred.mean.check_aligned(carbon_ref)?;
    if test_cols.is_empty() || test_cols.end > carbon_ref.width() {
        return Err(CarbonError::EmptyRegion("test"));
    }
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for r in 0..carbon_ref.height() {
        for c in test_cols.clone() {
            if pred.mean.is_nodata(c, r) || carbon_ref.is_nodata(c, r) {
                continue;
            }
            ps.push(pred.mean.value(0, c, r) as f64);
            rs.push(carbon_ref.value(0, c, r) as f64);
        }
    }
    if ps.is_empty() {
        return Err(CarbonError::EmptyRegion("test"));
    }
    let metrics = regression_metrics_from_pairs(&ps, &rs)?;

    let mut sorted = rs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let edges: Vec<f64> = (1..10)
        .map(|d| percentile(&sorted, d as f64 / 10.0))
        .collect();
    let decile_of = |v: f64| edges.iter().take_while(|&&e| v > e).count();
    let mut rows: Vec<DecileRow> = (0..10)
        .map(|d| DecileRow {
            decile: d,
            reference_mean: 0.0,
            prediction_mean: 0.0,
            count: 0,
        })
        .collect();
    for (&p, &r) in ps.iter().zip(&rs) {
        let d = decile_of(r);
        rows[d].reference_mean += r;
        rows[d].prediction_mean += p;
        rows[d].count += 1;
    }
    for row in &mut rows {
        if row.count > 0 {
            row.reference_mean /= row.count as f64;
            row.prediction_mean /= row.count as f64;
        }
    }
    Ok(CarbonEvalReport {
        metrics,
        deciles: rows,
    })
}
