//! High-carbon-stock stratification: carbon-density thresholds into the
//! six-class landscape scheme, the binary collapse, and plantation/urban
//! overlays.
//!
//! Interval convention: half-open and lower-inclusive, so a density exactly
//! at a breakpoint belongs to the class above it. In particular density >=
//! 35 is high carbon stock, which is what makes the binary cutoff
//! well-defined.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error)]
pub enum HcsError {
    #[error("negative carbon density {0}")]
    NegativeDensity(f64),
    #[error("breakpoints must be strictly increasing")]
    BadBreakpoints,
    #[error("hcs_cutoff {0} is not one of the breakpoints")]
    CutoffNotABreakpoint(f64),
    #[error("overlay thresholds must be positive")]
    BadOverlayThresholds,
    #[error("unknown class code {0}")]
    UnknownClassCode(f32),
    #[error("grid misalignment")]
    Misaligned(#[from] crate::grid::GridError),
}

pub type Result<T> = std::result::Result<T, HcsError>;

/// Landscape stratification classes plus overlay and nodata codes.
/// The numeric codes are what class grids store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HcsClass {
    OpenLand,
    Scrub,
    YoungRegeneratingForest,
    LowDensityForest,
    MediumDensityForest,
    HighDensityForest,
    PlantationOilPalm,
    PlantationCoconut,
    Urban,
    NoData,
}

impl HcsClass {
    pub const ALL: [HcsClass; 10] = [
        HcsClass::OpenLand,
        HcsClass::Scrub,
        HcsClass::YoungRegeneratingForest,
        HcsClass::LowDensityForest,
        HcsClass::MediumDensityForest,
        HcsClass::HighDensityForest,
        HcsClass::PlantationOilPalm,
        HcsClass::PlantationCoconut,
        HcsClass::Urban,
        HcsClass::NoData,
    ];

    /// The six carbon-derived classes in density order.
    pub const CARBON_CLASSES: [HcsClass; 6] = [
        HcsClass::OpenLand,
        HcsClass::Scrub,
        HcsClass::YoungRegeneratingForest,
        HcsClass::LowDensityForest,
        HcsClass::MediumDensityForest,
        HcsClass::HighDensityForest,
    ];

    pub fn code(self) -> u8 {
        match self {
            HcsClass::OpenLand => 0,
            HcsClass::Scrub => 1,
            HcsClass::YoungRegeneratingForest => 2,
            HcsClass::LowDensityForest => 3,
            HcsClass::MediumDensityForest => 4,
            HcsClass::HighDensityForest => 5,
            HcsClass::PlantationOilPalm => 6,
            HcsClass::PlantationCoconut => 7,
            HcsClass::Urban => 8,
            HcsClass::NoData => 9,
        }
    }

    pub fn from_code(code: f32) -> Result<HcsClass> {
        let i = code.round() as i64;
        HcsClass::ALL
            .iter()
            .copied()
            .find(|c| c.code() as i64 == i)
            .ok_or(HcsError::UnknownClassCode(code))
    }

    pub fn short_name(self) -> &'static str {
        match self {
            HcsClass::OpenLand => "OL",
            HcsClass::Scrub => "S",
            HcsClass::YoungRegeneratingForest => "YRF",
            HcsClass::LowDensityForest => "LDF",
            HcsClass::MediumDensityForest => "MDF",
            HcsClass::HighDensityForest => "HDF",
            HcsClass::PlantationOilPalm => "OilPalm",
            HcsClass::PlantationCoconut => "Coconut",
            HcsClass::Urban => "Urban",
            HcsClass::NoData => "NoData",
        }
    }
}

/// Carbon-density breakpoints in Mg C / ha: OL < 15 <= S < 35 <= YRF < 75
/// <= LDF < 90 <= MDF < 150 <= HDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcsThresholds {
    pub breakpoints: [f64; 5],
    pub hcs_cutoff: f64,
}

impl Default for HcsThresholds {
    fn default() -> Self {
        Self {
            breakpoints: [15.0, 35.0, 75.0, 90.0, 150.0],
            hcs_cutoff: 35.0,
        }
    }
}

impl HcsThresholds {
    pub fn validate(&self) -> Result<()> {
        if !self.breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(HcsError::BadBreakpoints);
        }
        if !self.breakpoints.contains(&self.hcs_cutoff) {
            return Err(HcsError::CutoffNotABreakpoint(self.hcs_cutoff));
        }
        Ok(())
    }
}

/// Plantation tree-density thresholds (trees per pixel); a pixel is masked
/// when its density strictly exceeds the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayThresholds {
    pub oil_palm_density: f64,
    pub coconut_density: f64,
}

impl Default for OverlayThresholds {
    fn default() -> Self {
        Self {
            oil_palm_density: 0.2,
            coconut_density: 0.4,
        }
    }
}

impl OverlayThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.oil_palm_density > 0.0 && self.coconut_density > 0.0 {
            Ok(())
        } else {
            Err(HcsError::BadOverlayThresholds)
        }
    }
}

/// Assign the carbon class for one density value (Mg C / ha, >= 0).
pub fn classify_carbon(density: f64, t: &HcsThresholds) -> Result<HcsClass> {
    if density < 0.0 || density.is_nan() {
        return Err(HcsError::NegativeDensity(density));
    }
    let b = &t.breakpoints;
    Ok(if density < b[0] {
        HcsClass::OpenLand
    } else if density < b[1] {
        HcsClass::Scrub
    } else if density < b[2] {
        HcsClass::YoungRegeneratingForest
    } else if density < b[3] {
        HcsClass::LowDensityForest
    } else if density < b[4] {
        HcsClass::MediumDensityForest
    } else {
        HcsClass::HighDensityForest
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryHcs {
    /// Open land & scrub (degraded land).
    Ols,
    /// High carbon stock (YRF, LDF, MDF, HDF).
    Hcs,
    /// Overlays and nodata.
    Other,
}

impl BinaryHcs {
    pub fn short_name(self) -> &'static str {
        match self {
            BinaryHcs::Ols => "OLS",
            BinaryHcs::Hcs => "HCS",
            BinaryHcs::Other => "Other",
        }
    }
}

pub fn binary_collapse(c: HcsClass) -> BinaryHcs {
    match c {
        HcsClass::OpenLand | HcsClass::Scrub => BinaryHcs::Ols,
        HcsClass::YoungRegeneratingForest
        | HcsClass::LowDensityForest
        | HcsClass::MediumDensityForest
        | HcsClass::HighDensityForest => BinaryHcs::Hcs,
        _ => BinaryHcs::Other,
    }
}

/// Classify a carbon-density grid into a class-code grid. Nodata pixels get
/// the NoData code (and stay masked).
pub fn classify_grid(carbon: &Grid, t: &HcsThresholds) -> Result<Grid> {
    t.validate()?;
    let mut out = Grid::filled(
        carbon.width(),
        carbon.height(),
        1,
        *carbon.transform(),
        HcsClass::NoData.code() as f32,
    );
    out.set_band_names(vec!["hcs_class".into()]);
    for r in 0..carbon.height() {
        for c in 0..carbon.width() {
            if carbon.is_nodata(c, r) {
                out.set_nodata(c, r, true);
                continue;
            }
            let class = classify_carbon(carbon.value(0, c, r) as f64, t)?;
            out.set_value(0, c, r, class.code() as f32);
        }
    }
    Ok(out)
}

/// Overlay plantation and urban masks onto a carbon-class grid with
/// precedence Urban > oil palm > coconut > carbon class. All grids must be
/// co-registered at the class grid's resolution (resample the 100 m urban
/// layer with nearest-neighbor first; class labels must not be blended).
pub fn overlay(
    carbon_classes: &Grid,
    palm_density: &Grid,
    coconut_density: &Grid,
    urban: &Grid,
    t: &OverlayThresholds,
) -> Result<Grid> {
    t.validate()?;
    carbon_classes.check_aligned(palm_density)?;
    carbon_classes.check_aligned(coconut_density)?;
    carbon_classes.check_aligned(urban)?;
    let mut out = carbon_classes.clone();
    out.set_band_names(vec!["hcs_class".into()]);
    for r in 0..out.height() {
        for c in 0..out.width() {
            if out.is_nodata(c, r) {
                continue;
            }
            let urban_here = !urban.is_nodata(c, r) && urban.value(0, c, r) > 0.5;
            let palm_here = !palm_density.is_nodata(c, r)
                && palm_density.value(0, c, r) as f64 > t.oil_palm_density;
            let coco_here = !coconut_density.is_nodata(c, r)
                && coconut_density.value(0, c, r) as f64 > t.coconut_density;
            let class = if urban_here {
                Some(HcsClass::Urban)
            } else if palm_here {
                Some(HcsClass::PlantationOilPalm)
            } else if coco_here {
                Some(HcsClass::PlantationCoconut)
            } else {
                None
            };
            if let Some(class) = class {
                out.set_value(0, c, r, class.code() as f32);
            }
        }
    }
    Ok(out)
}

/// Collapse a class-code grid to binary codes: 0 = OLS, 1 = HCS, 2 = Other.
pub fn binary_code_grid(class_grid: &Grid) -> Result<Grid> {
    let mut out = class_grid.clone();
    out.set_band_names(vec!["binary_hcs".into()]);
    for r in 0..out.height() {
        for c in 0..out.width() {
            if out.is_nodata(c, r) {
                continue;
            }
            let class = HcsClass::from_code(class_grid.value(0, c, r))?;
            let code = match binary_collapse(class) {
                BinaryHcs::Ols => 0.0,
                BinaryHcs::Hcs => 1.0,
                BinaryHcs::Other => 2.0,
            };
            out.set_value(0, c, r, code);
        }
    }
    Ok(out)
}

/// Fixed render palette for class-code PPM exports.
pub fn palette() -> Vec<(u8, [u8; 3])> {
    vec![
        (HcsClass::OpenLand.code(), [237, 201, 175]),
        (HcsClass::Scrub.code(), [216, 216, 143]),
        (HcsClass::YoungRegeneratingForest.code(), [170, 219, 30]),
        (HcsClass::LowDensityForest.code(), [103, 191, 92]),
        (HcsClass::MediumDensityForest.code(), [38, 140, 62]),
        (HcsClass::HighDensityForest.code(), [10, 84, 31]),
        (HcsClass::PlantationOilPalm.code(), [179, 88, 6]),
        (HcsClass::PlantationCoconut.code(), [224, 130, 20]),
        (HcsClass::Urban.code(), [128, 128, 128]),
        (HcsClass::NoData.code(), [0, 0, 0]),
    ]
}

/// JSON legend mapping class codes to names (written next to class grids).
pub fn legend_json() -> serde_json::Value {
    serde_json::Value::Array(
        HcsClass::ALL
            .iter()
            .map(|c| {
                serde_json::json!({
                    "code": c.code(),
                    "name": c.short_name(),
                    "binary": binary_collapse(*c).short_name(),
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t() -> HcsThresholds {
        HcsThresholds::default()
    }

    #[test]
    fn stated_class_examples() {
        assert_eq!(classify_carbon(10.0, &t()).unwrap(), HcsClass::OpenLand);
        assert_eq!(
            classify_carbon(160.0, &t()).unwrap(),
            HcsClass::HighDensityForest
        );
        assert_eq!(classify_carbon(0.0, &t()).unwrap(), HcsClass::OpenLand);
        // Boundary 35 goes upward so that density >= cutoff is HCS.
        assert_eq!(
            classify_carbon(35.0, &t()).unwrap(),
            HcsClass::YoungRegeneratingForest
        );
    }

    #[test]
    fn negative_density_is_an_error() {
        assert!(matches!(
            classify_carbon(-0.01, &t()),
            Err(HcsError::NegativeDensity(_))
        ));
    }

    #[test]
    fn binary_collapse_examples() {
        assert_eq!(binary_collapse(HcsClass::Scrub), BinaryHcs::Ols);
        assert_eq!(
            binary_collapse(HcsClass::MediumDensityForest),
            BinaryHcs::Hcs
        );
        assert_eq!(binary_collapse(HcsClass::Urban), BinaryHcs::Other);
        assert_eq!(binary_collapse(HcsClass::NoData), BinaryHcs::Other);
    }

    #[test]
    fn dense_sweep_partition_and_cutoff_consistency() {
        let thresholds = t();
        let mut d = 0.0f64;
        while d <= 300.0 {
            let class = classify_carbon(d, &thresholds).unwrap();
            let n = HcsClass::CARBON_CLASSES
                .iter()
                .filter(|&&c| c == class)
                .count();
            assert_eq!(n, 1);
            let is_hcs = binary_collapse(class) == BinaryHcs::Hcs;
            assert_eq!(
                is_hcs,
                d >= thresholds.hcs_cutoff,
                "cutoff consistency at {d}"
            );
            d += 0.01;
        }
    }

    #[test]
    fn classify_is_monotone_in_density() {
        let thresholds = t();
        let mut last = 0u8;
        let mut d = 0.0f64;
        while d <= 300.0 {
            let code = classify_carbon(d, &thresholds).unwrap().code();
            assert!(code >= last);
            last = code;
            d += 0.25;
        }
    }

    #[test]
    fn thresholds_validation() {
        assert!(t().validate().is_ok());
        let bad = HcsThresholds {
            breakpoints: [15.0, 35.0, 35.0, 90.0, 150.0],
            hcs_cutoff: 35.0,
        };
        assert!(matches!(bad.validate(), Err(HcsError::BadBreakpoints)));
        let bad = HcsThresholds {
            hcs_cutoff: 40.0,
            ..t()
        };
        assert!(matches!(
            bad.validate(),
            Err(HcsError::CutoffNotABreakpoint(_))
        ));
    }

    fn class_grid_from(codes: &[(f32, bool)], w: usize) -> Grid {
        let h = codes.len() / w;
        let mut g = Grid::filled(
            w,
            h,
            1,
            crate::grid::GeoTransform {
                origin_x: 0.0,
                origin_y: 0.0,
                pixel_size: 10.0,
            },
            0.0,
        );
        for (i, &(v, nd)) in codes.iter().enumerate() {
            g.set_value(0, i % w, i / w, v);
            if nd {
                g.set_nodata(i % w, i / w, true);
            }
        }
        g
    }

    #[test]
    fn overlay_precedence_and_thresholds() {
        let classes = class_grid_from(&[(HcsClass::HighDensityForest.code() as f32, false); 4], 2);
        let palm = class_grid_from(&[(0.3, false), (0.0, false), (0.5, false), (0.0, false)], 2);
        let coco = class_grid_from(
            &[(0.0, false), (0.39, false), (0.0, false), (0.0, false)],
            2,
        );
        let urban = class_grid_from(&[(0.0, false), (0.0, false), (1.0, false), (0.0, false)], 2);
        let out = overlay(
            &classes,
            &palm,
            &coco,
            &urban,
            &OverlayThresholds::default(),
        )
        .unwrap();
        // Palm 0.3 > 0.2 masks.
        assert_eq!(
            out.value(0, 0, 0),
            HcsClass::PlantationOilPalm.code() as f32
        );
        // Coconut 0.39 does not exceed 0.4: carbon class retained.
        assert_eq!(
            out.value(0, 1, 0),
            HcsClass::HighDensityForest.code() as f32
        );
        // Urban wins over palm.
        assert_eq!(out.value(0, 0, 1), HcsClass::Urban.code() as f32);
        assert_eq!(
            out.value(0, 1, 1),
            HcsClass::HighDensityForest.code() as f32
        );
    }

    #[test]
    fn overlay_is_idempotent() {
        let classes = class_grid_from(
            &[
                (HcsClass::OpenLand.code() as f32, false),
                (HcsClass::HighDensityForest.code() as f32, false),
                (HcsClass::Scrub.code() as f32, true),
                (HcsClass::MediumDensityForest.code() as f32, false),
            ],
            2,
        );
        let palm = class_grid_from(&[(0.5, false), (0.0, false), (0.0, false), (0.1, false)], 2);
        let coco = class_grid_from(&[(0.0, false); 4], 2);
        let urban = class_grid_from(&[(0.0, false), (1.0, false), (0.0, false), (0.0, false)], 2);
        let t = OverlayThresholds::default();
        let once = overlay(&classes, &palm, &coco, &urban, &t).unwrap();
        let twice = overlay(&once, &palm, &coco, &urban, &t).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn overlay_rejects_misaligned_grids() {
        let classes = class_grid_from(&[(0.0, false); 4], 2);
        let small = class_grid_from(&[(0.0, false); 2], 2);
        assert!(overlay(
            &classes,
            &small,
            &classes.clone(),
            &classes.clone(),
            &OverlayThresholds::default()
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn prop_every_nonneg_density_gets_exactly_one_carbon_class(d in 0.0f64..400.0) {
            let class = classify_carbon(d, &t()).unwrap();
            prop_assert!(HcsClass::CARBON_CLASSES.contains(&class));
        }
    }
}
