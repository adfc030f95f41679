//! Grid file formats.
//!
//! GRD1 is the self-describing binary carrier used between pipeline stages:
//!
//! ```text
//! magic "GRD1\n"
//! u64 little-endian header length
//! header JSON: { width, height, bands, pixel_size, origin_x, origin_y,
//!                band_names, nodata: "mask" }
//! payload: little-endian f32, band-major (band, row, col)
//! mask: one bit per pixel (row-major, LSB first), 1 = nodata
//! ```
//!
//! PGM/PPM exports exist for eyeballing results; CSV export dumps sampled
//! pixel values. External tooling is expected to convert real-world rasters
//! into GRD1 (no GeoTIFF/JP2 reader here, and no reprojection).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeoTransform, Grid, GridError, Result};

const MAGIC: &[u8; 5] = b"GRD1\n";

#[derive(Serialize, Deserialize)]
struct Grd1Header {
    width: usize,
    height: usize,
    bands: usize,
    pixel_size: f64,
    origin_x: f64,
    origin_y: f64,
    band_names: Vec<String>,
    nodata: String,
}

/// Write bytes to `path` atomically (temp file in the same directory, then
/// rename), so interrupted runs never leave torn artifacts.
pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Serialize a grid into GRD1 bytes.
pub fn to_grd1_bytes(grid: &Grid) -> Vec<u8> {
    let header = Grd1Header {
        width: grid.width(),
        height: grid.height(),
        bands: grid.bands(),
        pixel_size: grid.transform().pixel_size,
        origin_x: grid.transform().origin_x,
        origin_y: grid.transform().origin_y,
        band_names: grid.band_names().to_vec(),
        nodata: "mask".to_string(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serialization");
    let npix = grid.pixels();
    let mut out = Vec::with_capacity(
        MAGIC.len() + 8 + header_bytes.len() + grid.values().len() * 4 + npix.div_ceil(8),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mask = grid.nodata_mask();
    let mut byte = 0u8;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            out.push(byte);
            byte = 0;
        }
    }
    if !npix.is_multiple_of(8) {
        out.push(byte);
    }
    out
}

pub fn write_grd1(grid: &Grid, path: &Path) -> Result<()> {
    atomic_write_bytes(path, &to_grd1_bytes(grid))?;
    Ok(())
}

pub fn from_grd1_bytes(bytes: &[u8]) -> Result<Grid> {
    let mut cur = bytes;
    let mut magic = [0u8; 5];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GridError::Format("bad magic, not a GRD1 file".into()));
    }
    let mut len8 = [0u8; 8];
    cur.read_exact(&mut len8)?;
    let hlen = u64::from_le_bytes(len8) as usize;
    if cur.len() < hlen {
        return Err(GridError::Format("truncated header".into()));
    }
    let header: Grd1Header = serde_json::from_slice(&cur[..hlen])
        .map_err(|e| GridError::Format(format!("header: {e}")))?;
    cur = &cur[hlen..];
    if header.nodata != "mask" {
        return Err(GridError::Format(format!(
            "unsupported nodata representation {:?}",
            header.nodata
        )));
    }
    let npix = header.width * header.height;
    let nval = npix * header.bands;
    if cur.len() < nval * 4 + npix.div_ceil(8) {
        return Err(GridError::Format("truncated payload".into()));
    }
    let mut values = Vec::with_capacity(nval);
    for i in 0..nval {
        let b = &cur[i * 4..i * 4 + 4];
        values.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    }
    cur = &cur[nval * 4..];
    let mut nodata = Vec::with_capacity(npix);
    for i in 0..npix {
        nodata.push(cur[i / 8] & (1 << (i % 8)) != 0);
    }
    let transform = GeoTransform::new(header.origin_x, header.origin_y, header.pixel_size)?;
    Grid::from_parts(
        header.width,
        header.height,
        header.bands,
        transform,
        header.band_names,
        values,
        nodata,
    )
}

pub fn read_grd1(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path)?;
    from_grd1_bytes(&bytes)
}

/// Export one band as an 8-bit binary PGM, min-max scaled over valid pixels.
/// Nodata renders as 0.
pub fn write_pgm(grid: &Grid, band: usize, path: &Path) -> Result<()> {
    let data = grid.band(band);
    let mask = grid.nodata_mask();
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (v, &m) in data.iter().zip(mask) {
        if !m && v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for (v, &m) in data.iter().zip(mask) {
        let px = if m || !v.is_finite() {
            0
        } else {
            (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
        };
        out.push(px);
    }
    atomic_write_bytes(path, &out)?;
    Ok(())
}

/// Export a single-band grid as a binary PPM through a value -> RGB palette.
/// Values outside the palette and nodata render black.
pub fn write_ppm_palette(grid: &Grid, palette: &[(u8, [u8; 3])], path: &Path) -> Result<()> {
    let data = grid.band(0);
    let mask = grid.nodata_mask();
    let mut out = format!("P6\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for (v, &m) in data.iter().zip(mask) {
        let rgb = if m {
            [0, 0, 0]
        } else {
            let code = v.round() as i64;
            palette
                .iter()
                .find(|(c, _)| *c as i64 == code)
                .map(|(_, rgb)| *rgb)
                .unwrap_or([0, 0, 0])
        };
        out.extend_from_slice(&rgb);
    }
    atomic_write_bytes(path, &out)?;
    Ok(())
}

/// Dump every `stride`-th pixel as CSV rows
/// `col,row,x,y,<one column per band>` (nodata pixels are skipped).
pub fn write_csv_sample(grid: &Grid, stride: usize, path: &Path) -> Result<()> {
    let stride = stride.max(1);
    let mut out = String::from("col,row,x,y");
    for name in grid.band_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in (0..grid.height()).step_by(stride) {
        for col in (0..grid.width()).step_by(stride) {
            if grid.is_nodata(col, row) {
                continue;
            }
            let (x, y) = grid.transform().pixel_center(col, row);
            out.push_str(&format!("{col},{row},{x},{y}"));
            for b in 0..grid.bands() {
                out.push_str(&format!(",{}", grid.value(b, col, row)));
            }
            out.push('\n');
        }
    }
    atomic_write_bytes(path, out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_grid() -> Grid {
        let mut g = Grid::filled(
            5,
            4,
            2,
            GeoTransform {
                origin_x: 100.0,
                origin_y: 200.0,
                pixel_size: 10.0,
            },
            0.0,
        );
        for r in 0..4 {
            for c in 0..5 {
                g.set_value(0, c, r, (r * 5 + c) as f32 * 0.5);
                g.set_value(1, c, r, -(c as f32));
            }
        }
        g.set_nodata(3, 2, true);
        g.set_band_names(vec!["alpha".into(), "beta".into()]);
        g
    }

    #[test]
    fn grd1_round_trip_is_byte_exact() {
        let g = sample_grid();
        let bytes = to_grd1_bytes(&g);
        let back = from_grd1_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(to_grd1_bytes(&back), bytes);
    }

    #[test]
    fn grd1_rejects_garbage() {
        assert!(from_grd1_bytes(b"not a grid").is_err());
        let mut bytes = to_grd1_bytes(&sample_grid());
        bytes.truncate(bytes.len() - 3);
        assert!(from_grd1_bytes(&bytes).is_err());
    }

    #[test]
    fn pgm_and_csv_exports_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = sample_grid();
        let pgm = dir.path().join("g.pgm");
        write_pgm(&g, 0, &pgm).unwrap();
        let head = fs::read(&pgm).unwrap();
        assert!(head.starts_with(b"P5\n5 4\n255\n"));

        let csv = dir.path().join("g.csv");
        write_csv_sample(&g, 1, &csv).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("col,row,x,y,alpha,beta\n"));
        // 20 pixels minus one nodata.
        assert_eq!(text.lines().count(), 20);
    }
}
