//! Regression forest that synthesizes the reference modality from features
//! of the floating image, trained on targets displaced by shifts sampled from
//! the registration posterior, with Inverse-Gamma fused predictive variance.

mod tree;

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imagecore::io::{read_json, write_json};
use crate::imagecore::{gaussian_derivative_features, FeatureStack, GridGeom, Image2D};
use crate::rng::{derive_seed, stream, tags};
use crate::vem::{PosteriorField, ShiftCatalog};
use crate::{Error, Result};

pub use tree::{Node, RegressionTree};
use tree::GrowParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Gaussian-derivative feature settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub scales_mm: Vec<f64>,
    pub max_order: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            scales_mm: vec![0.0, 2.0, 4.0],
            max_order: 3,
        }
    }
}

impl FeatureConfig {
    pub fn compute(&self, img: &Image2D) -> Result<FeatureStack> {
        gaussian_derivative_features(img, &self.scales_mm, self.max_order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestHyperparams {
    /// Inverse-Gamma shape.
    pub a: f64,
    /// Inverse-Gamma scale.
    pub b: f64,
    pub n_trees: usize,
    pub min_leaf_size: usize,
    pub features_tested: usize,
    pub max_depth: Option<usize>,
    pub image_bag_fraction: f64,
    /// Training pixels per tree, split over the bagged images.
    pub pixels_per_tree: usize,
    /// Fraction of pixels per tree when training on a single image.
    pub pixel_bag_fraction: f64,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        ForestHyperparams {
            a: 2.0,
            b: 25.0 * 25.0 * 2.0,
            n_trees: 100,
            min_leaf_size: 5,
            features_tested: 5,
            max_depth: None,
            image_bag_fraction: 0.66,
            pixels_per_tree: 25_000,
            pixel_bag_fraction: 0.66,
        }
    }
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        let frac = |f: f64| f > 0.0 && f <= 1.0;
        if !(self.a > 1.0) || !(self.b > 0.0) {
            return Err(Error::invalid("forest prior needs a > 1 and b > 0"));
        }
        if self.n_trees == 0 || self.min_leaf_size == 0 || self.features_tested == 0 {
            return Err(Error::invalid("tree count, leaf size and features tested must be >= 1"));
        }
        if !frac(self.image_bag_fraction) || !frac(self.pixel_bag_fraction) || self.pixels_per_tree == 0 {
            return Err(Error::invalid("bagging fractions must lie in (0, 1] and the pixel budget be positive"));
        }
        Ok(())
    }
}

/// One image pair's training material.
#[derive(Debug, Clone, Copy)]
pub struct TrainingImage<'a> {
    /// Stable identifier; bagging draws are keyed by it, not by list position.
    pub id: u64,
    /// Features of the floating image.
    pub features: &'a FeatureStack,
    /// Reference image whose displaced intensities are the regression targets.
    pub target: &'a Image2D,
    pub posterior: &'a PosteriorField,
}

/// Per-pixel predictive mean and variance on the floating grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisPrediction {
    pub geom: GridGeom,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl SynthesisPrediction {
    pub fn mean_image(&self) -> Result<Image2D> {
        Image2D::from_geom(self.geom, self.mean.clone())
    }
    pub fn var_image(&self) -> Result<Image2D> {
        Image2D::from_geom(self.geom, self.var.clone())
    }

    /// Largest absolute change of the mean and of the standard deviation.
    pub fn max_change(&self, other: &SynthesisPrediction) -> (f64, f64) {
        let dm = self
            .mean
            .iter()
            .zip(&other.mean)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let ds = self
            .var
            .iter()
            .zip(&other.var)
            .fold(0.0f64, |m, (a, b)| m.max((a.sqrt() - b.sqrt()).abs()));
        (dm, ds)
    }
}

/// Mean of the tree guesses and the posterior-predictive variance under an
/// Inverse-Gamma(a, b) prior: `(2b + sum (g - mean)^2) / (2a + T)`.
pub fn fuse_guesses(guesses: &[f64], a: f64, b: f64) -> (f64, f64) {
    let t = guesses.len() as f64;
    let mean = guesses.iter().sum::<f64>() / t;
    let spread: f64 = guesses.iter().map(|g| (g - mean) * (g - mean)).sum();
    (mean, (2.0 * b + spread) / (2.0 * a + t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub hyperparams: ForestHyperparams,
    pub n_features: usize,
    /// Feature settings the model was trained with.
    pub feature_scales_mm: Vec<f64>,
    pub feature_max_order: usize,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            scales_mm: self.feature_scales_mm.clone(),
            max_order: self.feature_max_order,
        }
    }

    pub fn predict_pixel(&self, x: &[f64]) -> (f64, f64) {
        let g: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        fuse_guesses(&g, self.hyperparams.a, self.hyperparams.b)
    }

    pub fn predict(&self, features: &FeatureStack) -> Result<SynthesisPrediction> {
        if features.n_features() != self.n_features {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features,
                features.n_features()
            )));
        }
        let (mean, var): (Vec<f64>, Vec<f64>) = (0..features.n_pixels())
            .into_par_iter()
            .map(|p| self.predict_pixel(features.pixel(p)))
            .unzip();
        Ok(SynthesisPrediction {
            geom: features.geom(),
            mean,
            var,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ForestModel = read_json(path)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format {
                what: "forest model",
                detail: format!("unsupported format version {}", m.format_version),
            });
        }
        m.hyperparams.validate()?;
        if m.trees.is_empty() || !m.trees.iter().all(|t| t.validate(m.n_features)) {
            return Err(Error::Format {
                what: "forest model",
                detail: "malformed tree".into(),
            });
        }
        Ok(m)
    }
}

/// Draws one shift index from `row` by inverse CDF.
fn sample_shift(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (s, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // rounding left `u` above the total; fall back to the last non-zero entry
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Builds one tree's training set: row-major features and targets.
fn tree_samples(
    images: &[TrainingImage<'_>],
    catalog: &ShiftCatalog,
    hp: &ForestHyperparams,
    tree_seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let nf = images[0].features.n_features();
    // (image, pixel count)
    let plan: Vec<(usize, usize)> = if images.len() == 1 {
        let n = images[0].features.n_pixels();
        let k = ((hp.pixel_bag_fraction * n as f64).round() as usize).clamp(1, n);
        vec![(0, k)]
    } else {
        let mut keyed: Vec<(u64, usize)> = images
            .iter()
            .enumerate()
            .map(|(i, im)| (derive_seed(tree_seed, tags::IMAGE_BAG, im.id), i))
            .collect();
        keyed.sort_unstable();
        let n_bag = ((hp.image_bag_fraction * images.len() as f64).round() as usize).clamp(1, images.len());
        let per = hp.pixels_per_tree / n_bag;
        let extra = hp.pixels_per_tree % n_bag;
        keyed[..n_bag]
            .iter()
            .enumerate()
            .map(|(r, &(_, i))| {
                let want = per + usize::from(r < extra);
                (i, want.min(images[i].features.n_pixels()))
            })
            .collect()
    };

    let total: usize = plan.iter().map(|p| p.1).sum();
    let mut x = Vec::with_capacity(total * nf);
    let mut y = Vec::with_capacity(total);
    for &(i, count) in &plan {
        let im = &images[i];
        let mut rng = stream(tree_seed, tags::TREE_IMAGE, im.id);
        let g = im.features.geom();
        let s = g.spacing;
        let mut pixels = sample_indices(&mut rng, g.len(), count).into_vec();
        pixels.sort_unstable();
        for p in pixels {
            let shift = catalog.get(sample_shift(im.posterior.row(p), rng.random::<f64>()));
            let (px, py) = ((p % g.width) as f64, (p / g.width) as f64);
            x.extend_from_slice(im.features.pixel(p));
            y.push(im.target.sample_clamped(px + shift[0] / s, py + shift[1] / s));
        }
    }
    (x, y)
}

/// Trains the forest. Each tree draws from its own seed stream derived from
/// `(seed, tree index)`, so serial and parallel training agree and repeated
/// training with updated posteriors reuses the same random numbers.
pub fn train_forest(
    images: &[TrainingImage<'_>],
    catalog: &ShiftCatalog,
    hp: &ForestHyperparams,
    seed: u64,
) -> Result<ForestModel> {
    hp.validate()?;
    let first = images.first().ok_or_else(|| Error::invalid("no training images"))?;
    let nf = first.features.n_features();
    let mut ids: Vec<u64> = Vec::with_capacity(images.len());
    for im in images {
        let g = im.features.geom();
        if im.features.n_features() != nf {
            return Err(Error::invalid("training images have different feature dimensions"));
        }
        if im.target.geom() != g || im.posterior.geom() != g {
            return Err(Error::invalid("features, target and posterior grids differ"));
        }
        if im.posterior.n_shifts() != catalog.len() {
            return Err(Error::invalid("posterior does not match the shift catalog"));
        }
        ids.push(im.id);
    }
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("training image ids must be unique"));
    }

    let grow = GrowParams {
        min_leaf: hp.min_leaf_size,
        features_tested: hp.features_tested.min(nf),
        max_depth: hp.max_depth,
    };
    let trees: Vec<RegressionTree> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive_seed(seed, tags::TREE, t as u64);
            let (x, y) = tree_samples(images, catalog, hp, tree_seed);
            let mut rng = stream(tree_seed, tags::TREE, u64::MAX);
            RegressionTree::grow(&x, nf, &y, grow, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        hyperparams: hp.clone(),
        n_features: nf,
        feature_scales_mm: first.features.scales_mm().to_vec(),
        feature_max_order: first.features.max_order(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_with_agreeing_trees_hits_prior_floor() {
        let (m, v) = fuse_guesses(&vec![7.5; 100], 2.0, 1250.0);
        assert_eq!(m, 7.5);
        assert!((v - 2500.0 / 104.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_of_two_guesses() {
        let (m, v) = fuse_guesses(&[10.0, 20.0], 2.0, 1250.0);
        assert_eq!(m, 15.0);
        assert!((v - 425.0).abs() < 1e-12);
        let (_, v0) = fuse_guesses(&[3.0, 3.0], 2.0, 0.0);
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn shift_sampling_follows_cdf() {
        let row = [0.25, 0.0, 0.75];
        assert_eq!(sample_shift(&row, 0.1), 0);
        assert_eq!(sample_shift(&row, 0.25), 2);
        assert_eq!(sample_shift(&row, 0.999_999), 2);
        assert_eq!(sample_shift(&[1.0 - 1e-17, 0.0], 0.999_999_999_999), 0);
    }

    #[test]
    fn default_hyperparams_are_valid() {
        let hp = ForestHyperparams::default();
        hp.validate().unwrap();
        assert_eq!(hp.b, 1250.0);
    }
}
