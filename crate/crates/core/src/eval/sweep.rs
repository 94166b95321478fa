//! Evaluation sweep over control spacing, landmark count, method and seed.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::registration_error;
use super::registry::{FinalInput, Registry};
use crate::config::{Config, ShiftConfig};
use crate::synthgen::{list_pairs, read_dataset_config, BenchmarkPair};
use crate::vem::VemPair;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "sigma_v,spacing_mm,n_landmarks,method,mean_err_mm,max_err_mm,runtime_s,seed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairError {
    pub index: usize,
    pub mean_mm: f64,
    pub max_mm: f64,
}

/// One grid cell. Errors are averaged over pairs: `mean_err_mm` is the mean
/// of per-pair means, `max_err_mm` the mean of per-pair maxima.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma_v: f64,
    pub spacing_mm: f64,
    pub n_landmarks: usize,
    pub method: String,
    pub mean_err_mm: f64,
    pub max_err_mm: f64,
    pub runtime_s: f64,
    pub seed: u64,
    #[serde(skip)]
    pub per_pair: Vec<PairError>,
}

fn load_pairs(dataset: &Path) -> Result<Vec<BenchmarkPair>> {
    let dirs = list_pairs(dataset)?;
    let mut pairs = Vec::with_capacity(dirs.len());
    let mut skipped = 0;
    for (idx, dir) in dirs {
        match BenchmarkPair::load(&dir) {
            Ok(p) => pairs.push(p),
            Err(e) => {
                warn!("skipping pair {idx}: {e}");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} pairs with missing or malformed files");
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!("no usable pairs in {}", dataset.display())));
    }
    Ok(pairs)
}

/// Runs every cell of `config.sweep` on the dataset in `dataset`. With
/// `timing` off the runtime column is zero so the output is reproducible.
pub fn run_sweep(dataset: &Path, config: &Config, registry: &Registry, timing: bool) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let grid = &config.sweep;
    let pairs = load_pairs(dataset)?;
    let sigma_v = match read_dataset_config(dataset) {
        Ok(c) => c.sigma_v_mm,
        Err(_) => pairs[0].meta.sigma_v_mm,
    };
    let shifts = ShiftConfig {
        step_mm: grid.shift_step_mm.unwrap_or(config.shifts.step_mm),
        ..config.shifts
    };
    let catalog = shifts.catalog()?;
    let synth_final = registry.final_stage(&grid.final_stage)?;
    let mi_final = registry.final_stage("ffd")?;
    info!(
        "sweep over {} pairs: {} landmark counts x {} methods x {} seeds x {} spacings, {} shifts",
        pairs.len(),
        grid.landmark_counts.len(),
        grid.methods.len(),
        grid.seeds.len(),
        grid.spacings_mm.len(),
        catalog.len()
    );

    let mut rows = Vec::new();
    for &n_landmarks in &grid.landmark_counts {
        let vem_pairs: Vec<VemPair> = pairs
            .iter()
            .map(|p| VemPair {
                id: p.meta.index as u64,
                reference: p.reference.clone(),
                floating: p.floating.clone(),
                landmarks: p.landmarks.prefix(n_landmarks),
            })
            .collect();
        let short = vem_pairs.iter().filter(|p| p.landmarks.len() < n_landmarks).count();
        if short > 0 {
            warn!("{short} pairs have fewer than {n_landmarks} landmarks");
        }
        for name in &grid.methods {
            let method = registry.method(name)?;
            let mut first_seed_rows: Vec<SweepRow> = Vec::new();
            for (si, &seed) in grid.seeds.iter().enumerate() {
                if si > 0 && !method.is_stochastic() {
                    rows.extend(first_seed_rows.iter().map(|r| SweepRow { seed, ..r.clone() }));
                    continue;
                }
                let settings = config.vem_settings(catalog.clone(), seed);
                let t0 = Instant::now();
                let prepared = method.prepare(&vem_pairs, &settings)?;
                let prep_s = t0.elapsed().as_secs_f64();
                let mut cached: Option<(Vec<PairError>, f64)> = None;
                for &spacing in &grid.spacings_mm {
                    let t1 = Instant::now();
                    let (per_pair, final_s) = match &cached {
                        Some(c) => c.clone(),
                        None => {
                            let per_pair = vem_pairs
                                .par_iter()
                                .zip(&pairs)
                                .zip(&prepared.models)
                                .map(|((vp, bp), model)| {
                                    let stage = match model {
                                        super::DataModel::MutualInformation => mi_final,
                                        _ => synth_final,
                                    };
                                    let out = stage.register(&FinalInput {
                                        reference: &vp.reference,
                                        floating: &vp.floating,
                                        landmarks: &vp.landmarks,
                                        model,
                                        control_spacing_mm: spacing,
                                        ffd: &config.ffd,
                                        graphcut: &config.graphcut,
                                        settings: &settings,
                                    })?;
                                    let (mean_mm, max_mm) = registration_error(&out.field, &bp.truth, &bp.mask)?;
                                    Ok(PairError {
                                        index: bp.meta.index,
                                        mean_mm,
                                        max_mm,
                                    })
                                })
                                .collect::<Result<Vec<_>>>()?;
                            let res = (per_pair, t1.elapsed().as_secs_f64());
                            let spacing_free = prepared
                                .models
                                .iter()
                                .all(|m| !matches!(m, super::DataModel::MutualInformation))
                                && !synth_final.uses_spacing();
                            if spacing_free {
                                cached = Some(res.clone());
                            }
                            res
                        }
                    };
                    let n = per_pair.len() as f64;
                    let row = SweepRow {
                        sigma_v,
                        spacing_mm: spacing,
                        n_landmarks,
                        method: name.clone(),
                        mean_err_mm: per_pair.iter().map(|e| e.mean_mm).sum::<f64>() / n,
                        max_err_mm: per_pair.iter().map(|e| e.max_mm).sum::<f64>() / n,
                        runtime_s: if timing { prep_s + final_s } else { 0.0 },
                        seed,
                        per_pair,
                    };
                    info!(
                        "n_landmarks {n_landmarks} {name} seed {seed} spacing {spacing}: mean {:.3} mm, max {:.3} mm",
                        row.mean_err_mm, row.max_err_mm
                    );
                    if si == 0 {
                        first_seed_rows.push(row.clone());
                    }
                    rows.push(row);
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("sweep produced no rows"));
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    if rows.is_empty() {
        fs::write(path, format!("{CSV_HEADER}\n")).map_err(|e| Error::io(path, e))
    } else {
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
