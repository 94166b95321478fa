//! Synthetic benchmark: phantom pairs deformed by random diffeomorphisms with
//! known ground truth, plus Harris-seeded landmarks with placement noise.

mod deform;
mod landmarks;
mod phantom;

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::deformation::{invert_field, min_jacobian_determinant, read_field, warp_image, write_field, DeformationField};
use crate::imagecore::io::{read_image, read_json, write_image, write_json};
use crate::imagecore::{GridGeom, HarrisParams, Image2D};
use crate::rng::{derive_seed, stream, tags};
use crate::vem::LandmarkSet;
use crate::{Error, Result};

pub use deform::{boundary_window, sample_deformation, sample_similarity, sample_velocity, SampledDeformation, Similarity};
pub use landmarks::{place_landmarks, project_landmarks};
pub use phantom::{generate_phantom_pair, Phantom, BACKGROUND, CSF, GRAY, WHITE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    pub spacing_mm: f64,
    /// Std of the per-pixel velocity noise before smoothing (mm).
    pub sigma_v_mm: f64,
    pub smoothing_sigma_mm: f64,
    /// Rate of the boundary window `1 - exp(-rate D^2)`, D in mm.
    pub window_rate: f64,
    pub rotation_std_deg: f64,
    pub translation_std_px: f64,
    pub log_scale_std: f64,
    /// Landmarks placed per pair; sweeps use prefixes of this list.
    pub n_landmarks: usize,
    /// Suppression sigma as a fraction of the image size per axis.
    pub suppression_fraction: f64,
    pub sigma_k_mm: f64,
    /// Scaling-and-squaring steps; `None` picks them from the velocity.
    pub squarings: Option<i32>,
    pub harris: HarrisParams,
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            spacing_mm: 1.0,
            sigma_v_mm: 20.0,
            smoothing_sigma_mm: 5.0,
            window_rate: 0.01,
            rotation_std_deg: 2.0,
            translation_std_px: 1.0,
            log_scale_std: 0.1,
            n_landmarks: 8,
            suppression_fraction: 0.1,
            sigma_k_mm: 0.5,
            squarings: None,
            harris: HarrisParams::default(),
            n_pairs: 20,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 64 || !(self.spacing_mm > 0.0) {
            return Err(Error::invalid("image size must be >= 64 and spacing positive"));
        }
        if !(self.sigma_v_mm >= 0.0) || !(self.smoothing_sigma_mm > 0.0) || !(self.window_rate > 0.0) {
            return Err(Error::invalid("velocity std must be >= 0, smoothing and window rate > 0"));
        }
        if [self.rotation_std_deg, self.translation_std_px, self.log_scale_std, self.sigma_k_mm]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::invalid("similarity and landmark stds must be non-negative"));
        }
        if !(self.suppression_fraction > 0.0) {
            return Err(Error::invalid("suppression fraction must be positive"));
        }
        Ok(())
    }

    pub fn geom(&self) -> Result<GridGeom> {
        GridGeom::new(self.image_size, self.image_size, self.spacing_mm)
    }
}

/// Affine rescale of `[min, max]` to `[0, 255]` with round-half-to-even. A
/// constant image maps to zeros with a warning.
pub fn quantize_8bit(img: &Image2D) -> Image2D {
    let (min, max) = img.min_max();
    if max == min {
        warn!("quantizing a constant image to zeros");
        return Image2D::filled(img.geom(), 0.0);
    }
    let scale = 255.0 / (max - min);
    img.map(|v| ((v - min) * scale).round_ties_even().clamp(0.0, 255.0))
        .expect("rescaled values are finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub index: usize,
    pub seed: u64,
    pub spacing_mm: f64,
    pub sigma_v_mm: f64,
    pub sigma_k_mm: f64,
    pub similarity: Similarity,
    /// Order in which the parts of the ground truth are applied.
    pub composition: String,
    pub squarings: i32,
    pub min_jacobian_nonlinear: f64,
    pub mean_nonlinear_displacement_mm: f64,
    pub dropped_landmarks: usize,
}

/// One generated pair. The truth field maps floating pixel `x` to the
/// reference point `x + truth(x)`.
#[derive(Debug, Clone)]
pub struct BenchmarkPair {
    pub reference: Image2D,
    pub floating: Image2D,
    pub truth: DeformationField,
    pub landmarks: LandmarkSet,
    /// Non-background pixels of the floating image.
    pub mask: Vec<bool>,
    pub meta: PairMeta,
}

/// Generates pair `index` of the benchmark described by `cfg`.
pub fn generate_pair(cfg: &SynthConfig, index: usize) -> Result<BenchmarkPair> {
    cfg.validate()?;
    let geom = cfg.geom()?;
    let seed = derive_seed(cfg.seed, tags::PAIR, index as u64);
    let phantom = generate_phantom_pair(geom, &mut stream(seed, tags::PHANTOM, 0))?;
    let def = sample_deformation(geom, cfg, seed)?;
    let reference = quantize_8bit(&phantom.a);
    let floating = quantize_8bit(&warp_image(&phantom.b, &def.composed)?);
    let s = geom.spacing;
    let mask = (0..geom.len())
        .map(|i| {
            let (ux, uy) = (def.composed.ux()[i], def.composed.uy()[i]);
            let x = ((i % geom.width) as f64 + ux / s).round().clamp(0.0, (geom.width - 1) as f64) as usize;
            let y = ((i / geom.width) as f64 + uy / s).round().clamp(0.0, (geom.height - 1) as f64) as usize;
            phantom.labels[geom.index(x, y)] != BACKGROUND
        })
        .collect();
    let sigma = [
        cfg.suppression_fraction * geom.width as f64,
        cfg.suppression_fraction * geom.height as f64,
    ];
    let points = place_landmarks(&reference, cfg.n_landmarks, sigma, &cfg.harris)?;
    // landmark k on the reference corresponds to the floating point phi^-1(k)
    let inverse = invert_field(&def.composed, 100);
    let (landmarks, dropped) = project_landmarks(
        &points,
        &inverse,
        cfg.sigma_k_mm,
        &mut stream(seed, tags::LANDMARK_NOISE, 0),
    )?;
    let nl = &def.nonlinear;
    let mean_disp = nl.ux().iter().zip(nl.uy()).map(|(a, b)| a.hypot(*b)).sum::<f64>() / geom.len() as f64;
    let meta = PairMeta {
        index,
        seed,
        spacing_mm: s,
        sigma_v_mm: cfg.sigma_v_mm,
        sigma_k_mm: cfg.sigma_k_mm,
        similarity: def.similarity,
        composition: "similarity_after_flow".into(),
        squarings: def.squarings,
        min_jacobian_nonlinear: min_jacobian_determinant(nl)?,
        mean_nonlinear_displacement_mm: mean_disp,
        dropped_landmarks: dropped,
    };
    Ok(BenchmarkPair {
        reference,
        floating,
        truth: def.composed,
        landmarks,
        mask,
        meta,
    })
}

pub fn pair_dir(dataset: &Path, index: usize) -> PathBuf {
    dataset.join(format!("pair_{index}"))
}

impl BenchmarkPair {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_image(&dir.join("ref.png"), &self.reference)?;
        write_image(&dir.join("float.png"), &self.floating)?;
        write_field(&dir.join("truth_field.raw"), &self.truth)?;
        self.landmarks.write_csv(&dir.join("landmarks.csv"))?;
        let mask = Image2D::from_geom(
            self.floating.geom(),
            self.mask.iter().map(|&m| if m { 255.0 } else { 0.0 }).collect(),
        )?;
        write_image(&dir.join("mask.png"), &mask)?;
        write_json(&dir.join("meta.json"), &self.meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: PairMeta = read_json(&dir.join("meta.json"))?;
        let reference = read_image(&dir.join("ref.png"))?;
        let floating = read_image(&dir.join("float.png"))?;
        let truth = read_field(&dir.join("truth_field.raw"))?;
        let landmarks = LandmarkSet::read_csv(&dir.join("landmarks.csv"), meta.sigma_k_mm)?;
        let mask_path = dir.join("mask.png");
        let mask = if mask_path.exists() {
            read_image(&mask_path)?.data().iter().map(|&v| v > 127.0).collect()
        } else {
            floating.data().iter().map(|&v| v > 0.0).collect()
        };
        if reference.geom() != floating.geom() || truth.geom() != floating.geom() {
            return Err(Error::Format {
                what: "benchmark pair",
                detail: format!("{}: image and field grids differ", dir.display()),
            });
        }
        Ok(BenchmarkPair {
            reference,
            floating,
            truth,
            landmarks,
            mask,
            meta,
        })
    }
}

/// Writes `cfg.n_pairs` pairs and a `dataset.json` with the configuration.
pub fn generate_dataset(dir: &Path, cfg: &SynthConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("dataset.json"), cfg)?;
    for i in 0..cfg.n_pairs {
        generate_pair(cfg, i)?.write(&pair_dir(dir, i))?;
    }
    Ok(())
}

pub fn read_dataset_config(dir: &Path) -> Result<SynthConfig> {
    read_json(&dir.join("dataset.json"))
}

/// `pair_<i>` subdirectories sorted by index.
pub fn list_pairs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(idx) = name.to_str().and_then(|n| n.strip_prefix("pair_")).and_then(|n| n.parse().ok()) else {
            continue;
        };
        if entry.path().is_dir() {
            out.push((idx, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_two_values() {
        let g = GridGeom::new(2, 2, 1.0).unwrap();
        let img = Image2D::new(2, 2, 1.0, vec![3.0, 7.0, 7.0, 3.0]).unwrap();
        assert_eq!(quantize_8bit(&img).data(), &[0.0, 255.0, 255.0, 0.0]);
        assert_eq!(quantize_8bit(&Image2D::filled(g, 4.0)).data(), &[0.0; 4]);
    }

    #[test]
    fn quantize_identity_on_full_range() {
        let img = Image2D::new(4, 2, 1.0, vec![0.0, 17.0, 255.0, 3.0, 128.0, 99.0, 1.0, 254.0]).unwrap();
        assert_eq!(quantize_8bit(&img), img);
    }
}
