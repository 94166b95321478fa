//! Registration error, the method registry and evaluation sweeps.

mod registry;
mod sweep;

use crate::deformation::DeformationField;
use crate::{Error, Result};

pub use registry::{
    register_pair, DataModel, FfdStage, FinalInput, FinalOutput, FinalRegistration, GraphCutStage, Independent, Joint,
    MutualInformation, Prepared, RegisterOutcome, Registry, RegistrationMethod, VemSummary,
};
pub use sweep::{run_sweep, write_sweep_csv, PairError, SweepRow, CSV_HEADER};

/// Mean and maximum Euclidean distance (mm) between estimated and true
/// displacements over the pixels where `mask` is set.
pub fn registration_error(estimated: &DeformationField, truth: &DeformationField, mask: &[bool]) -> Result<(f64, f64)> {
    if estimated.geom() != truth.geom() {
        return Err(Error::invalid("estimated and true fields are on different grids"));
    }
    if mask.len() != truth.geom().len() {
        return Err(Error::invalid("mask size does not match the field grid"));
    }
    let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let d = (estimated.ux()[i] - truth.ux()[i]).hypot(estimated.uy()[i] - truth.uy()[i]);
        sum += d;
        max = max.max(d);
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("mask selects no pixels"));
    }
    Ok((sum / n as f64, max))
}
