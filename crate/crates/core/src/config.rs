//! Single JSON configuration document with every tunable pre-filled.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::finalreg::{FfdOptions, GraphCutOptions};
use crate::forest::{FeatureConfig, ForestHyperparams};
use crate::imagecore::io::{read_json, write_json};
use crate::synthgen::SynthConfig;
use crate::vem::{MrfParams, ShiftCatalog, VemOptions, VemSettings};
use crate::{Error, Result};

/// Square shift catalog `{-r, -r + step, ..., r}^2` in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub radius_mm: f64,
    pub step_mm: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            radius_mm: 10.0,
            step_mm: 0.5,
        }
    }
}

impl ShiftConfig {
    pub fn catalog(&self) -> Result<ShiftCatalog> {
        ShiftCatalog::square(self.radius_mm, self.step_mm)
    }
}

/// Axes of an evaluation sweep. Rows are emitted in the order landmark count,
/// method, seed, spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub spacings_mm: Vec<f64>,
    pub landmark_counts: Vec<usize>,
    pub methods: Vec<String>,
    /// Final stage for synthesis methods; the MI method always uses the FFD.
    #[serde(rename = "final")]
    pub final_stage: String,
    pub seeds: Vec<u64>,
    /// Overrides the shift step of the catalog during sweeps.
    pub shift_step_mm: Option<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            spacings_mm: (1..=7).map(|k| 3.0 * k as f64).collect(),
            landmark_counts: vec![0, 4, 8],
            methods: vec!["mi".into(), "joint".into(), "independent".into()],
            final_stage: "ffd".into(),
            seeds: vec![1],
            shift_step_mm: Some(1.0),
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.spacings_mm.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs at least one spacing, method and seed"));
        }
        if self.landmark_counts.is_empty() {
            return Err(Error::invalid("sweep needs at least one landmark count"));
        }
        if self.spacings_mm.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("sweep spacings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub features: FeatureConfig,
    pub forest: ForestHyperparams,
    pub mrf: MrfParams,
    pub shifts: ShiftConfig,
    /// Landmark placement std (mm) for landmark files without metadata.
    pub sigma_k_mm: f64,
    pub vem: VemOptions,
    pub ffd: FfdOptions,
    pub graphcut: GraphCutOptions,
    pub synth: SynthConfig,
    pub sweep: SweepGrid,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            features: FeatureConfig::default(),
            forest: ForestHyperparams::default(),
            mrf: MrfParams::default(),
            shifts: ShiftConfig::default(),
            sigma_k_mm: 0.5,
            vem: VemOptions::default(),
            ffd: FfdOptions::default(),
            graphcut: GraphCutOptions::default(),
            synth: SynthConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate()?;
        self.mrf.validate()?;
        self.ffd.validate()?;
        self.synth.validate()?;
        self.sweep.validate()?;
        self.shifts.catalog()?;
        if !(self.sigma_k_mm > 0.0) {
            return Err(Error::invalid("landmark std must be positive"));
        }
        Ok(())
    }

    /// VEM settings with the given catalog and forest seed.
    pub fn vem_settings(&self, catalog: ShiftCatalog, seed: u64) -> VemSettings {
        VemSettings {
            features: self.features.clone(),
            forest: self.forest.clone(),
            mrf: self.mrf,
            catalog,
            options: self.vem,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_partial_documents_fill_in() {
        let cfg = Config::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&text).unwrap(), cfg);
        let partial: Config = serde_json::from_str(r#"{"seed": 9, "sweep": {"final": "graphcut"}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.sweep.final_stage, "graphcut");
        assert_eq!(partial.sweep.spacings_mm, vec![3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0]);
        assert!(serde_json::from_str::<Config>(r#"{"sede": 9}"#).is_err());
    }

    #[test]
    fn default_catalog_has_1681_shifts() {
        assert_eq!(Config::default().shifts.catalog().unwrap().len(), 1681);
    }
}
