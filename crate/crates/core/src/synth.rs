//! Synthetic-world generator: a smooth height field with known statistics,
//! 12-band imagery derived from it, per-acquisition cloud fields, sparse
//! noisy height footprints, a power-law carbon reference, and overlay
//! layers — everything a full pipeline run needs, with the ground truth and
//! noise floor exported so end-to-end accuracy ratios are well-defined.
//!
//! All outputs are pure functions of the configuration (seeded value-noise
//! lattices plus per-purpose ChaCha streams), so identical configs produce
//! bit-identical worlds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canopy::{FootprintSample, FootprintSource};
use crate::grid::{GeoTransform, Grid};

/// Calibration between the value-noise lattice spacing and the 1/e
/// autocorrelation length a variogram estimator reads off the field.
const CORRELATION_CAL: f64 = 1.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    /// World side length in pixels (square world at 10 m).
    pub extent: usize,
    /// Target 1/e autocorrelation length of the height field, pixels.
    pub correlation_length: f64,
    /// Height ceiling in meters; the field saturates at both 0 and this.
    pub max_height: f64,
    /// Per-band, per-acquisition i.i.d. noise added to the imagery.
    pub texture_noise_sd: f64,
    /// Fraction of pixels with cloud probability above the 0.10 threshold.
    pub cloud_fraction: f64,
    /// Footprint sampling density, samples per square kilometer.
    pub footprint_density: f64,
    /// Carbon = allometry_a * height^allometry_b + noise.
    pub allometry_a: f64,
    pub allometry_b: f64,
    pub carbon_noise_sd: f64,
    /// Fraction of pixels labeled non-vegetated (height forced to zero).
    pub nonveg_fraction: f64,
    /// Side length of the square tiles footprints are keyed to.
    pub tile_size: usize,
    /// Number of Voronoi zones in the zone grid.
    pub zone_count: usize,
    /// Gaussian noise on footprint height labels, meters.
    pub footprint_label_sd: f64,
    /// Geolocation jitter of recorded footprint positions, pixels
    /// (uniform integer offset in [-j, j] per axis).
    pub footprint_jitter_px: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: 256,
            correlation_length: 24.0,
            max_height: 55.0,
            texture_noise_sd: 0.03,
            cloud_fraction: 0.25,
            footprint_density: 50.0,
            allometry_a: 1.7,
            allometry_b: 1.2,
            carbon_noise_sd: 12.0,
            nonveg_fraction: 0.15,
            tile_size: 128,
            zone_count: 8,
            footprint_label_sd: 2.0,
            footprint_jitter_px: 1,
        }
    }
}

/// Ground truth plus derived reference layers for one synthetic world.
#[derive(Debug, Clone)]
pub struct World {
    pub height: Grid,
    pub carbon: Grid,
    pub scene_class: Grid,
    pub zone: Grid,
}

/// Overlay inputs for the stratification stage. Palm/coconut tree densities
/// are at 10 m; the urban layer is generated at 100 m like its real-world
/// counterpart and must be nearest-neighbor resampled by the consumer.
#[derive(Debug, Clone)]
pub struct Overlays {
    pub palm_density: Grid,
    pub coconut_density: Grid,
    pub urban_100m: Grid,
}

/// Scene-class codes used in the synthetic scene classification layer.
pub const SCENE_VEGETATED: f32 = 1.0;
pub const SCENE_NON_VEGETATED: f32 = 2.0;

/// Exported with every world so acceptance ratios have a denominator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub canopy_label_sd: f64,
    pub carbon_noise_sd: f64,
}

// ---------------------------------------------------------------------------
// Deterministic value noise
// ---------------------------------------------------------------------------

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_value(seed: u64, salt: u64, xi: i64, yi: i64) -> f64 {
    let h = mix64(
        seed ^ mix64(salt)
            ^ mix64(xi as u64 ^ 0x5bf0_3635_f0c2_1c35)
            ^ mix64((yi as u64).wrapping_mul(0x9e3d_68fb_31ad_77a7)),
    );
    // Map to [-1, 1).
    (h >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
}

fn smooth(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Seeded value-noise field: smooth bilinear blend of hashed lattice values.
#[derive(Debug, Clone, Copy)]
pub struct ValueNoise {
    seed: u64,
    salt: u64,
    spacing: f64,
}

impl ValueNoise {
    pub fn new(seed: u64, salt: u64, spacing: f64) -> Self {
        assert!(spacing > 0.0);
        Self {
            seed,
            salt,
            spacing,
        }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let u = x / self.spacing;
        let v = y / self.spacing;
        let x0 = u.floor() as i64;
        let y0 = v.floor() as i64;
        let tx = smooth(u - x0 as f64);
        let ty = smooth(v - y0 as f64);
        let v00 = lattice_value(self.seed, self.salt, x0, y0);
        let v10 = lattice_value(self.seed, self.salt, x0 + 1, y0);
        let v01 = lattice_value(self.seed, self.salt, x0, y0 + 1);
        let v11 = lattice_value(self.seed, self.salt, x0 + 1, y0 + 1);
        let top = v00 + (v10 - v00) * tx;
        let bot = v01 + (v11 - v01) * tx;
        top + (bot - top) * ty
    }
}

fn base_transform() -> GeoTransform {
    GeoTransform {
        origin_x: 500_000.0,
        origin_y: 1_000_000.0,
        pixel_size: 10.0,
    }
}

fn noise_grid(cfg: &WorldConfig, salt: u64) -> Vec<f64> {
    let spacing = (cfg.correlation_length * CORRELATION_CAL).max(1.0);
    let noise = ValueNoise::new(cfg.seed, salt, spacing);
    let n = cfg.extent;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(noise.at(c as f64, r as f64));
        }
    }
    out
}

/// Value below which a `fraction` of the samples lie (linear-interpolated
/// empirical quantile); used to threshold noise fields at exact areas.
fn quantile_of(values: &[f64], fraction: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * fraction.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    if i + 1 < sorted.len() {
        sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

// ---------------------------------------------------------------------------
// World generation
// ---------------------------------------------------------------------------

/// Generate the ground-truth world: height field, power-law carbon
/// reference, scene classification (vegetated / non-vegetated with height
/// forced to zero), and a Voronoi zone partition.
pub fn gen_world(cfg: &WorldConfig) -> World {
    let n = cfg.extent;
    let t = base_transform();

    let height_field = noise_grid(cfg, 1);
    let nonveg_field = noise_grid(cfg, 2);
    let nonveg_threshold = quantile_of(&nonveg_field, 1.0 - cfg.nonveg_fraction);

    let mut height = Grid::filled(n, n, 1, t, 0.0);
    height.set_band_names(vec!["canopy_height_m".into()]);
    let mut scene = Grid::filled(n, n, 1, t, SCENE_VEGETATED);
    scene.set_band_names(vec!["scene_class".into()]);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let mut h = cfg.max_height * (0.5 + 0.9 * height_field[i]);
            if cfg.nonveg_fraction > 0.0 && nonveg_field[i] > nonveg_threshold {
                h = 0.0;
                scene.set_value(0, c, r, SCENE_NON_VEGETATED);
            }
            height.set_value(0, c, r, h.clamp(0.0, cfg.max_height) as f32);
        }
    }

    let mut carbon = Grid::filled(n, n, 1, t, 0.0);
    carbon.set_band_names(vec!["carbon_mgc_ha".into()]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xCA_B0);
    for r in 0..n {
        for c in 0..n {
            let h = height.value(0, c, r) as f64;
            let noise = if cfg.carbon_noise_sd > 0.0 {
                gauss(&mut rng) * cfg.carbon_noise_sd
            } else {
                0.0
            };
            let v = (cfg.allometry_a * h.powf(cfg.allometry_b) + noise).max(0.0);
            carbon.set_value(0, c, r, v as f32);
        }
    }

    let mut zone = Grid::filled(n, n, 1, t, 0.0);
    zone.set_band_names(vec!["zone_id".into()]);
    let mut zrng = ChaCha8Rng::seed_from_u64(cfg.seed);
    zrng.set_stream(0x20_4E);
    let centers: Vec<(f64, f64)> = (0..cfg.zone_count.max(1))
        .map(|_| {
            (
                zrng.random_range(0.0..n as f64),
                zrng.random_range(0.0..n as f64),
            )
        })
        .collect();
    for r in 0..n {
        for c in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, &(cx, cy)) in centers.iter().enumerate() {
                let d = (cx - c as f64).powi(2) + (cy - r as f64).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            zone.set_value(0, c, r, best as f32);
        }
    }

    World {
        height,
        carbon,
        scene_class: scene,
        zone,
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.is_finite() {
            return z;
        }
    }
}

/// The fixed band responses: twelve distinct smooth functions of normalized
/// height. Cloud-free pixels of different acquisitions share this signal.
fn band_signal(band: usize, hn: f64) -> f64 {
    match band {
        0 => hn,
        1 => hn * hn,
        2 => hn.sqrt(),
        3 => (-3.0 * hn).exp(),
        4 => 1.0 / (1.0 + 5.0 * hn),
        5 => (std::f64::consts::FRAC_PI_2 * hn).sin(),
        6 => (std::f64::consts::PI * hn).cos() * 0.5,
        7 => (1.0 + 4.0 * hn).ln() / (5.0f64).ln(),
        8 => (1.0 - hn) * (1.0 - hn),
        9 => hn * hn * hn,
        10 => 1.0 / (1.0 + (-6.0 * (hn - 0.5)).exp()),
        _ => (hn - 0.5).abs() * 2.0,
    }
}

/// Band value clouds get pulled toward; far outside the clear-sky range.
const CLOUD_BRIGHT: f64 = 3.0;

/// Generate `acquisitions` synthetic images over the same world: 12 bands
/// driven by the height field plus per-acquisition texture noise, and a
/// smooth cloud-probability field thresholded so that `cloud_fraction` of
/// the pixels exceed probability 0.10. Cloudy pixels are corrupted toward a
/// bright constant.
pub fn gen_images(height: &Grid, cfg: &WorldConfig, acquisitions: usize) -> Vec<(Grid, Grid)> {
    assert!(acquisitions >= 1);
    let n = height.width();
    let t = *height.transform();
    let mut out = Vec::with_capacity(acquisitions);
    for acq in 0..acquisitions {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0x1_0000 + acq as u64);

        let mut cloud = Grid::filled(n, n, 1, t, 0.0);
        cloud.set_band_names(vec!["cloud_probability".into()]);
        if cfg.cloud_fraction > 0.0 {
            let spacing = (cfg.correlation_length * CORRELATION_CAL).max(1.0);
            let noise = ValueNoise::new(cfg.seed, 0x2_0000 + acq as u64, spacing);
            let mut field = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    field.push(noise.at(c as f64, r as f64));
                }
            }
            // Empirical rank mapping so exactly cloud_fraction of the pixels
            // land at or above probability 0.10.
            let mut ranks = field.clone();
            ranks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cut_q = 1.0 - cfg.cloud_fraction;
            for r in 0..n {
                for c in 0..n {
                    let v = field[r * n + c];
                    let q = ranks.partition_point(|&x| x < v) as f64 / ranks.len() as f64;
                    let p = (0.1 + (q - cut_q)).clamp(0.0, 1.0);
                    cloud.set_value(0, c, r, p as f32);
                }
            }
        }

        let mut image = Grid::filled(n, n, 12, t, 0.0);
        image.set_band_names((0..12).map(|b| format!("b{:02}", b + 1)).collect());
        for r in 0..n {
            for c in 0..n {
                let hn = (height.value(0, c, r) as f64 / cfg.max_height).clamp(0.0, 1.0);
                let p = cloud.value(0, c, r) as f64;
                let w = ((p - 0.1) / 0.3).clamp(0.0, 1.0);
                for b in 0..12 {
                    let mut v = band_signal(b, hn);
                    if cfg.texture_noise_sd > 0.0 {
                        v += gauss(&mut rng) * cfg.texture_noise_sd;
                    }
                    if w > 0.0 {
                        v = v + (CLOUD_BRIGHT - v) * w;
                    }
                    image.set_value(b, c, r, v as f32);
                }
            }
        }
        out.push((image, cloud));
    }
    out
}

/// Sample sparse footprints over the world: per-pixel Bernoulli with
/// probability `density * pixel_area`, labels = true height + Gaussian
/// noise clamped at zero, recorded positions optionally jittered.
pub fn gen_footprints(height: &Grid, cfg: &WorldConfig) -> Vec<FootprintSample> {
    let n_cols = height.width();
    let n_rows = height.height();
    let px_area_km2 = (height.pixel_size() / 1000.0).powi(2);
    let p = (cfg.footprint_density * px_area_km2).clamp(0.0, 1.0);
    let tiles_x = n_cols.div_ceil(cfg.tile_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xF0_07);
    let mut out = Vec::new();
    for row in 0..n_rows {
        for col in 0..n_cols {
            if !rng.random_bool(p) {
                continue;
            }
            let h_true = height.value(0, col, row) as f64;
            let label = if cfg.footprint_label_sd > 0.0 {
                (h_true + gauss(&mut rng) * cfg.footprint_label_sd).max(0.0)
            } else {
                h_true
            };
            let j = cfg.footprint_jitter_px as i64;
            let (rec_col, rec_row) = if j > 0 {
                let dc = rng.random_range(-j..=j);
                let dr = rng.random_range(-j..=j);
                (
                    (col as i64 + dc).clamp(0, n_cols as i64 - 1) as usize,
                    (row as i64 + dr).clamp(0, n_rows as i64 - 1) as usize,
                )
            } else {
                (col, row)
            };
            let tile_id = (rec_row / cfg.tile_size) * tiles_x + rec_col / cfg.tile_size;
            out.push(FootprintSample {
                tile_id,
                center_col: rec_col,
                center_row: rec_row,
                canopy_top_height: label as f32,
                source: FootprintSource::LidarFootprint,
            });
        }
    }
    out
}

/// Plantation tree-density blobs at 10 m and an urban layer at 100 m.
pub fn gen_overlays(cfg: &WorldConfig) -> Overlays {
    let n = cfg.extent;
    let t = base_transform();
    let palm_field = noise_grid(cfg, 0x11);
    let coco_field = noise_grid(cfg, 0x12);

    let mut palm = Grid::filled(n, n, 1, t, 0.0);
    palm.set_band_names(vec!["oil_palm_trees_per_pixel".into()]);
    let mut coco = Grid::filled(n, n, 1, t, 0.0);
    coco.set_band_names(vec!["coconut_trees_per_pixel".into()]);
    let palm_cut = quantile_of(&palm_field, 0.92);
    let coco_cut = quantile_of(&coco_field, 0.95);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            palm.set_value(0, c, r, ((palm_field[i] - palm_cut).max(0.0) * 3.0) as f32);
            coco.set_value(0, c, r, ((coco_field[i] - coco_cut).max(0.0) * 5.0) as f32);
        }
    }

    let nu = n.div_ceil(10).max(1);
    let mut urban = Grid::filled(
        nu,
        nu,
        1,
        GeoTransform {
            origin_x: t.origin_x,
            origin_y: t.origin_y,
            pixel_size: 100.0,
        },
        0.0,
    );
    urban.set_band_names(vec!["urban".into()]);
    let spacing = (cfg.correlation_length * CORRELATION_CAL / 10.0).max(1.0);
    let noise = ValueNoise::new(cfg.seed, 0x13, spacing);
    let mut field = Vec::with_capacity(nu * nu);
    for r in 0..nu {
        for c in 0..nu {
            field.push(noise.at(c as f64, r as f64));
        }
    }
    let cut = quantile_of(&field, 0.97);
    for r in 0..nu {
        for c in 0..nu {
            if field[r * nu + c] > cut {
                urban.set_value(0, c, r, 1.0);
            }
        }
    }

    Overlays {
        palm_density: palm,
        coconut_density: coco,
        urban_100m: urban,
    }
}

pub fn noise_floor(cfg: &WorldConfig) -> NoiseFloor {
    NoiseFloor {
        canopy_label_sd: cfg.footprint_label_sd,
        carbon_noise_sd: cfg.carbon_noise_sd,
    }
}

/// Semivariogram-based estimate of the 1/e autocorrelation length along
/// rows; the independent check that generated fields have the configured
/// correlation structure.
pub fn estimate_correlation_length(grid: &Grid, max_lag: usize) -> f64 {
    let n = grid.width();
    let m = grid.height();
    let data = grid.band(0);
    let count = (n * m) as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / count;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / count;
    if var <= 0.0 {
        return 0.0;
    }
    let target = (1.0 - (-1.0f64).exp()) * var;
    let mut prev = 0.0f64;
    for lag in 1..=max_lag.min(n - 1) {
        let mut acc = 0.0f64;
        let mut cnt = 0usize;
        for r in 0..m {
            for c in 0..n - lag {
                let d = data[r * n + c + lag] as f64 - data[r * n + c] as f64;
                acc += d * d;
                cnt += 1;
            }
        }
        let gamma = 0.5 * acc / cnt as f64;
        if gamma >= target {
            let frac = if gamma > prev {
                (target - prev) / (gamma - prev)
            } else {
                1.0
            };
            return (lag - 1) as f64 + frac;
        }
        prev = gamma;
    }
    max_lag as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_allometry_without_noise_reproduces_height() {
        let cfg = WorldConfig {
            extent: 64,
            allometry_a: 1.0,
            allometry_b: 1.0,
            carbon_noise_sd: 0.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        for (h, c) in world.height.values().iter().zip(world.carbon.values()) {
            assert!((h - c).abs() < 1e-4, "{h} vs {c}");
        }
    }

    #[test]
    fn zero_noise_classes_follow_the_inverse_allometry() {
        use crate::hcs::{classify_carbon, HcsThresholds};
        let cfg = WorldConfig {
            extent: 96,
            carbon_noise_sd: 0.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let t = HcsThresholds::default();
        // Density breakpoints mapped through the inverse power law become
        // height breakpoints; classifying carbon must agree with
        // classifying height against those.
        let height_breaks: Vec<f64> = t
            .breakpoints
            .iter()
            .map(|b| (b / cfg.allometry_a).powf(1.0 / cfg.allometry_b))
            .collect();
        for r in 0..96 {
            for c in 0..96 {
                let by_carbon = classify_carbon(world.carbon.value(0, c, r) as f64, &t).unwrap();
                let h = world.height.value(0, c, r) as f64;
                let idx = height_breaks.iter().take_while(|&&hb| h >= hb).count();
                assert_eq!(by_carbon.code() as usize, idx, "at ({c},{r}), h={h}");
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_worlds() {
        let cfg = WorldConfig {
            extent: 96,
            ..WorldConfig::default()
        };
        let a = gen_world(&cfg);
        let b = gen_world(&cfg);
        assert_eq!(a.height.values(), b.height.values());
        assert_eq!(a.carbon.values(), b.carbon.values());
        assert_eq!(a.scene_class.values(), b.scene_class.values());
        assert_eq!(a.zone.values(), b.zone.values());
        let fa = gen_footprints(&a.height, &cfg);
        let fb = gen_footprints(&b.height, &cfg);
        assert_eq!(fa, fb);
    }

    #[test]
    fn correlation_length_matches_config_within_25_percent() {
        let cfg = WorldConfig {
            extent: 512,
            correlation_length: 20.0,
            nonveg_fraction: 0.0, // keep the raw field for the variogram
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let est = estimate_correlation_length(&world.height, 100);
        let rel = (est - cfg.correlation_length).abs() / cfg.correlation_length;
        assert!(
            rel < 0.25,
            "estimated {est:.1} vs configured {} ({rel:.2} relative)",
            cfg.correlation_length
        );
    }

    #[test]
    fn cloud_fraction_zero_means_no_cloud_probability() {
        let cfg = WorldConfig {
            extent: 48,
            cloud_fraction: 0.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let images = gen_images(&world.height, &cfg, 2);
        for (_, cloud) in &images {
            assert!(cloud.values().iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn acquisitions_share_the_height_signal() {
        let cfg = WorldConfig {
            extent: 96,
            cloud_fraction: 0.2,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let images = gen_images(&world.height, &cfg, 2);
        let (img_a, cloud_a) = &images[0];
        let (img_b, cloud_b) = &images[1];
        // Correlation of band 0 between acquisitions on mutually cloud-free pixels.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in 0..96 {
            for c in 0..96 {
                if cloud_a.value(0, c, r) < 0.1 && cloud_b.value(0, c, r) < 0.1 {
                    xs.push(img_a.value(0, c, r) as f64);
                    ys.push(img_b.value(0, c, r) as f64);
                }
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr > 0.9, "inter-acquisition correlation {corr}");
    }

    #[test]
    fn zero_noise_acquisitions_are_identical_when_cloud_free() {
        let cfg = WorldConfig {
            extent: 48,
            texture_noise_sd: 0.0,
            cloud_fraction: 0.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let images = gen_images(&world.height, &cfg, 3);
        for (img, _) in &images[1..] {
            assert_eq!(img.values(), images[0].0.values());
        }
    }

    #[test]
    fn footprint_labels_equal_height_when_noise_free() {
        let cfg = WorldConfig {
            extent: 48,
            footprint_density: 1e4, // every pixel
            footprint_label_sd: 0.0,
            footprint_jitter_px: 0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let fps = gen_footprints(&world.height, &cfg);
        assert_eq!(fps.len(), 48 * 48);
        for f in &fps {
            assert_eq!(
                f.canopy_top_height,
                world.height.value(0, f.center_col, f.center_row)
            );
        }
    }

    #[test]
    fn footprint_count_within_3_sigma_of_binomial() {
        let cfg = WorldConfig {
            extent: 256,
            footprint_density: 200.0,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let fps = gen_footprints(&world.height, &cfg);
        let n = (256 * 256) as f64;
        let p = 200.0 * 1e-4;
        let expect = n * p;
        let sd = (n * p * (1.0 - p)).sqrt();
        let got = fps.len() as f64;
        assert!((got - expect).abs() < 3.0 * sd, "{got} vs {expect} +- {sd}");
    }

    #[test]
    fn cloud_fraction_calibration_at_the_threshold() {
        let cfg = WorldConfig {
            extent: 128,
            cloud_fraction: 0.3,
            ..WorldConfig::default()
        };
        let world = gen_world(&cfg);
        let images = gen_images(&world.height, &cfg, 1);
        let cloud = &images[0].1;
        let above = cloud.values().iter().filter(|&&p| p >= 0.1).count() as f64;
        let frac = above / cloud.values().len() as f64;
        assert!((frac - 0.3).abs() < 0.02, "cloudy fraction {frac}");
    }

    #[test]
    fn overlays_have_expected_structure() {
        let cfg = WorldConfig {
            extent: 200,
            ..WorldConfig::default()
        };
        let o = gen_overlays(&cfg);
        assert_eq!(o.palm_density.width(), 200);
        assert_eq!(o.urban_100m.width(), 20);
        assert!((o.urban_100m.pixel_size() - 100.0).abs() < 1e-9);
        let palm_hits = o.palm_density.values().iter().filter(|&&v| v > 0.2).count();
        assert!(palm_hits > 0, "some oil-palm pixels must exceed 0.2");
        let urban_hits = o.urban_100m.values().iter().filter(|&&v| v == 1.0).count();
        assert!(urban_hits > 0);
    }
}
