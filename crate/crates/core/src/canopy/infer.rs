//! Dense tiled inference and multi-acquisition compositing.

use super::{CanopyError, Result};
use crate::grid::{iterate_tiles, Grid};
use crate::nn::{Model, Tensor};

/// Cloud-probability cutoff: a prediction qualifies for compositing when
/// its cloud probability is strictly below this.
pub const CLOUD_PROB_CUTOFF: f32 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tiling {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self {
            tile: 128,
            overlap: 16,
        }
    }
}

fn window_tensor(image: &Grid, w: &crate::grid::TileWindow, fill: &[f32]) -> Tensor<f32> {
    let mut t = Tensor::zeros(w.height, w.width, image.bands());
    for r in 0..w.height {
        for c in 0..w.width {
            let (gc, gr) = (w.col0 + c, w.row0 + r);
            let px = t.pixel_mut(r, c);
            if image.is_nodata(gc, gr) {
                px.copy_from_slice(fill);
            } else {
                for (b, v) in px.iter_mut().enumerate() {
                    *v = image.value(b, gc, gr);
                }
            }
        }
    }
    t
}

/// Run a fully convolutional model over a grid in overlapping windows and
/// stitch the window cores. Returns one grid per output head channel with
/// raw (normalized-space) head values; output pixels are nodata exactly
/// where the input is nodata (nodata inputs enter the convolution as the
/// per-band training mean, i.e. normalized zero).
///
/// The tiling must satisfy `overlap >= ceil(receptive_field / 2)`, which
/// makes the stitched output independent of the tiling parameters.
pub fn dense_forward_heads(
    model: &Model<f32>,
    image: &Grid,
    tiling: Tiling,
    threads: usize,
) -> Result<Vec<Grid>> {
    if image.bands() != model.input_channels() {
        return Err(CanopyError::BandMismatch {
            expected: model.input_channels(),
            got: image.bands(),
        });
    }
    let rf = model.receptive_field();
    let needed = rf.div_ceil(2);
    if tiling.overlap < needed {
        return Err(CanopyError::OverlapTooSmall {
            overlap: tiling.overlap,
            receptive_field: rf,
            needed,
        });
    }
    if tiling.tile <= 2 * tiling.overlap {
        return Err(CanopyError::OverlapTooSmall {
            overlap: tiling.overlap,
            receptive_field: rf,
            needed: tiling.tile / 2,
        });
    }
    let heads = model.heads.channels();
    let windows = iterate_tiles(image.width(), image.height(), tiling.tile, tiling.overlap);
    let fill = model.norm.input_offset.clone();

    let run = |w: &crate::grid::TileWindow| -> Result<(crate::grid::TileWindow, Tensor<f32>)> {
        let input = window_tensor(image, w, &fill);
        let out = model.forward(&input)?;
        Ok((*w, out))
    };
    let results: Vec<Result<(crate::grid::TileWindow, Tensor<f32>)>> = if threads > 1 {
        use rayon::prelude::*;
        windows.par_iter().map(run).collect()
    } else {
        windows.iter().map(run).collect()
    };

    let mut out: Vec<Grid> = (0..heads)
        .map(|_| Grid::filled(image.width(), image.height(), 1, *image.transform(), 0.0))
        .collect();
    for res in results {
        let (w, tensor) = res?;
        for r in 0..w.core_height {
            let gr = w.core_row0 + r;
            let lr = gr - w.row0;
            for c in 0..w.core_width {
                let gc = w.core_col0 + c;
                let lc = gc - w.col0;
                for (h, grid) in out.iter_mut().enumerate() {
                    grid.set_value(0, gc, gr, tensor.get(lr, lc, h));
                }
            }
        }
    }
    for grid in &mut out {
        for r in 0..image.height() {
            for c in 0..image.width() {
                if image.is_nodata(c, r) {
                    grid.set_nodata(c, r, true);
                }
            }
        }
    }
    Ok(out)
}

/// Dense canopy-height prediction: one height per pixel, in meters,
/// clamped at zero.
pub fn predict_dense(
    model: &Model<f32>,
    image: &Grid,
    tiling: Option<Tiling>,
    threads: usize,
) -> Result<Grid> {
    let tiling = tiling.unwrap_or_default();
    let mut heads = dense_forward_heads(model, image, tiling, threads)?;
    let mut height = heads.swap_remove(0);
    for v in height.band_mut(0) {
        *v = (model.norm.target_scale * *v + model.norm.target_offset).max(0.0);
    }
    height.set_band_names(vec!["canopy_height_m".into()]);
    Ok(height)
}

/// Reduce per-acquisition height predictions to one map: the per-pixel mean
/// (64-bit accumulation) of all predictions whose cloud probability is
/// strictly below 0.10. Pixels with no qualifying prediction are nodata.
pub fn composite(predictions: &[Grid], cloud_probs: &[Grid]) -> Result<Grid> {
    if predictions.is_empty() || predictions.len() != cloud_probs.len() {
        return Err(CanopyError::BadCompositeInput);
    }
    let first = &predictions[0];
    for g in predictions.iter().chain(cloud_probs.iter()) {
        first.check_aligned(g)?;
    }
    let mut out = Grid::filled(first.width(), first.height(), 1, *first.transform(), 0.0);
    out.set_band_names(vec!["canopy_height_m".into()]);
    for r in 0..first.height() {
        for c in 0..first.width() {
            let mut acc = 0.0f64;
            let mut n = 0u32;
            for (pred, cloud) in predictions.iter().zip(cloud_probs) {
                if pred.is_nodata(c, r) || cloud.is_nodata(c, r) {
                    continue;
                }
                if cloud.value(0, c, r) < CLOUD_PROB_CUTOFF {
                    acc += pred.value(0, c, r) as f64;
                    n += 1;
                }
            }
            if n == 0 {
                out.set_nodata(c, r, true);
            } else {
                out.set_value(0, c, r, (acc / n as f64) as f32);
            }
        }
    }
    Ok(out)
}

/// Indices of the `k` images with the smallest mean cloud probability
/// (over valid pixels); ties keep acquisition order.
pub fn select_least_cloudy(images: &[(Grid, Grid)], k: usize) -> Result<Vec<usize>> {
    if k > images.len() {
        return Err(CanopyError::NotEnoughImages { k, n: images.len() });
    }
    let mut means: Vec<(f64, usize)> = images
        .iter()
        .enumerate()
        .map(|(i, (_, cloud))| {
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for r in 0..cloud.height() {
                for c in 0..cloud.width() {
                    if !cloud.is_nodata(c, r) {
                        acc += cloud.value(0, c, r) as f64;
                        n += 1;
                    }
                }
            }
            (if n > 0 { acc / n as f64 } else { f64::INFINITY }, i)
        })
        .collect();
    means.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(means[..k].iter().map(|&(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoTransform;

    fn grid_of(values: &[f32], w: usize, h: usize) -> Grid {
        let t = GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 10.0,
        };
        let mut g = Grid::filled(w, h, 1, t, 0.0);
        for r in 0..h {
            for c in 0..w {
                g.set_value(0, c, r, values[r * w + c]);
            }
        }
        g
    }

    #[test]
    fn composite_means_qualifying_predictions() {
        let p1 = grid_of(&[10.0], 1, 1);
        let p2 = grid_of(&[20.0], 1, 1);
        let c_ok = grid_of(&[0.05], 1, 1);
        let c_ok2 = grid_of(&[0.08], 1, 1);
        let out = composite(&[p1.clone(), p2.clone()], &[c_ok.clone(), c_ok2]).unwrap();
        assert_eq!(out.value(0, 0, 0), 15.0);

        // Second prediction excluded at probability 0.15.
        let c_bad = grid_of(&[0.15], 1, 1);
        let out = composite(&[p1.clone(), p2.clone()], &[c_ok, c_bad]).unwrap();
        assert_eq!(out.value(0, 0, 0), 10.0);

        // Boundary: 0.0999 qualifies, exactly 0.10 does not.
        let c_edge_in = grid_of(&[0.0999], 1, 1);
        let c_edge_out = grid_of(&[0.10], 1, 1);
        let out = composite(&[p1, p2], &[c_edge_in, c_edge_out]).unwrap();
        assert_eq!(out.value(0, 0, 0), 10.0);
    }

    #[test]
    fn composite_all_cloudy_pixel_is_nodata() {
        let p = grid_of(&[10.0], 1, 1);
        let c = grid_of(&[0.5], 1, 1);
        let out = composite(&[p], &[c]).unwrap();
        assert!(out.is_nodata(0, 0));
    }

    #[test]
    fn composite_of_identical_predictions_is_that_prediction() {
        let mut p = Grid::filled(
            6,
            6,
            1,
            GeoTransform {
                origin_x: 0.0,
                origin_y: 0.0,
                pixel_size: 10.0,
            },
            0.0,
        );
        let mut c1 = p.clone();
        let mut c2 = p.clone();
        for r in 0..6 {
            for col in 0..6 {
                p.set_value(0, col, r, (r * 6 + col) as f32 * 1.5);
                c1.set_value(0, col, r, if col < 3 { 0.05 } else { 0.5 });
                c2.set_value(0, col, r, if r < 3 { 0.02 } else { 0.8 });
            }
        }
        let out = composite(&[p.clone(), p.clone()], &[c1.clone(), c2.clone()]).unwrap();
        for r in 0..6 {
            for col in 0..6 {
                let qualifying = c1.value(0, col, r) < 0.1 || c2.value(0, col, r) < 0.1;
                if qualifying {
                    assert_eq!(out.value(0, col, r), p.value(0, col, r));
                } else {
                    assert!(out.is_nodata(col, r));
                }
            }
        }
    }

    #[test]
    fn predict_dense_rejects_band_mismatch() {
        use crate::nn::{canopy_model_spec, Model, Normalization};
        let spec = canopy_model_spec(12, 4, 1);
        let model: Model<f32> = Model::from_spec(&spec, Normalization::identity(12)).unwrap();
        let image = Grid::filled(
            32,
            32,
            3,
            GeoTransform {
                origin_x: 0.0,
                origin_y: 0.0,
                pixel_size: 10.0,
            },
            0.0,
        );
        assert!(matches!(
            predict_dense(&model, &image, None, 1),
            Err(CanopyError::BandMismatch {
                expected: 12,
                got: 3
            })
        ));
    }

    #[test]
    fn composite_rejects_empty_input() {
        assert!(matches!(
            composite(&[], &[]),
            Err(CanopyError::BadCompositeInput)
        ));
    }

    #[test]
    fn select_least_cloudy_matches_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let images: Vec<(Grid, Grid)> = (0..20)
            .map(|_| {
                let vals: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
                (grid_of(&vals, 4, 4), grid_of(&vals, 4, 4))
            })
            .collect();
        let picked = select_least_cloudy(&images, 10).unwrap();

        // Brute-force oracle.
        let mut means: Vec<(f64, usize)> = images
            .iter()
            .enumerate()
            .map(|(i, (_, c))| (c.values().iter().map(|&v| v as f64).sum::<f64>() / 16.0, i))
            .collect();
        means.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let expect: Vec<usize> = means[..10].iter().map(|&(_, i)| i).collect();
        assert_eq!(picked, expect);
    }

    #[test]
    fn select_whole_list_and_simple_ranking() {
        let mk = |p: f32| {
            let g = grid_of(&[p; 4], 2, 2);
            (g.clone(), g)
        };
        let images = vec![mk(0.3), mk(0.1), mk(0.2)];
        assert_eq!(select_least_cloudy(&images, 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(select_least_cloudy(&images, 2).unwrap(), vec![1, 2]);
        assert!(select_least_cloudy(&images, 4).is_err());
    }
}
