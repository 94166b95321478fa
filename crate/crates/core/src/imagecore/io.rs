//! 8-bit PGM/PNG rasters with a JSON spacing sidecar, and little-endian
//! float32 rasters with a `{width, height, spacing_mm}` sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{GridGeom, Image2D};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct SpacingSidecar {
    spacing_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct RasterSidecar {
    pub width: usize,
    pub height: usize,
    pub spacing_mm: f64,
}

/// `foo/bar.png` -> `foo/bar.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn to_u8(img: &Image2D) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| v.round_ties_even().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes an 8-bit raster (format chosen by extension: `.pgm` or `.png`) and
/// its spacing sidecar. Intensities are rounded and clamped to `0..=255`.
pub fn write_image(path: &Path, img: &Image2D) -> Result<()> {
    let bytes = to_u8(img);
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "pgm" => write_pgm(path, img.width(), img.height(), &bytes)?,
        "png" => {
            let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                .expect("buffer length matches dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)?;
        }
        other => return Err(Error::invalid(format!("unsupported image extension '{other}'"))),
    }
    write_json(
        &sidecar_path(path),
        &SpacingSidecar {
            spacing_mm: img.spacing(),
        },
    )
}

/// Reads an 8-bit PGM or PNG. Spacing comes from the sidecar when present,
/// otherwise 1 mm.
pub fn read_image(path: &Path) -> Result<Image2D> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (w, h, bytes) = match ext.to_ascii_lowercase().as_str() {
        "pgm" => read_pgm(path)?,
        "png" => {
            let img = image::open(path)?.to_luma8();
            (img.width() as usize, img.height() as usize, img.into_raw())
        }
        other => return Err(Error::invalid(format!("unsupported image extension '{other}'"))),
    };
    let side = sidecar_path(path);
    let spacing = if side.exists() {
        read_json::<SpacingSidecar>(&side)?.spacing_mm
    } else {
        log::warn!("no spacing sidecar for {}, assuming 1 mm", path.display());
        1.0
    };
    Image2D::new(w, h, spacing, bytes.into_iter().map(f64::from).collect())
}

fn write_pgm(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P5\n{w} {h}\n255\n")
        .and_then(|_| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::Format {
        what: "PGM",
        detail: format!("{}: {d}", path.display()),
    };
    // header: magic, width, height, maxval, separated by whitespace/comments
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < raw.len() && raw[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < raw.len() && raw[i] == b'#' {
            while i < raw.len() && raw[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < raw.len() && !raw[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&raw[start..i]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    i += 1; // single whitespace after maxval
    let data = raw.get(i..i + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    Ok((w, h, data.to_vec()))
}

/// Writes planes of `geom.len()` values each as consecutive little-endian
/// f32 blocks, plus a `{width, height, spacing_mm}` sidecar.
pub fn write_raster_f32(path: &Path, geom: GridGeom, planes: &[&[f64]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(planes.len() * geom.len() * 4);
    for plane in planes {
        if plane.len() != geom.len() {
            return Err(Error::invalid("raster plane does not match grid"));
        }
        for &v in plane.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &RasterSidecar {
            width: geom.width,
            height: geom.height,
            spacing_mm: geom.spacing,
        },
    )
}

/// Reads `n_planes` float32 planes written by [`write_raster_f32`].
pub fn read_raster_f32(path: &Path, n_planes: usize) -> Result<(GridGeom, Vec<Vec<f64>>)> {
    let side: RasterSidecar = read_json(&sidecar_path(path))?;
    let geom = GridGeom::new(side.width, side.height, side.spacing_mm)?;
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() != n_planes * geom.len() * 4 {
        return Err(Error::Format {
            what: "float32 raster",
            detail: format!(
                "{}: expected {} bytes, found {}",
                path.display(),
                n_planes * geom.len() * 4,
                raw.len()
            ),
        });
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((geom, values.chunks(geom.len()).map(|c| c.to_vec()).collect()))
}
