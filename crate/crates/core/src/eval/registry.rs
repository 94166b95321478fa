//! Registration strategies selected by name: how the data term is obtained
//! (mutual information, or a synthesis fitted per pair or jointly) and which
//! final stage turns it into a deformation field.

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::deformation::DeformationField;
use crate::finalreg::{map_registration_graphcut, optimize_ffd, optimize_ffd_mi, FfdOptions, GraphCutOptions};
use crate::forest::{ForestModel, SynthesisPrediction};
use crate::imagecore::Image2D;
use crate::vem::{run_vem, LandmarkSet, PosteriorField, VemPair, VemResult, VemSettings};
use crate::{Error, Result};

/// Data term available to the final stage for one pair.
#[derive(Debug, Clone)]
pub enum DataModel {
    MutualInformation,
    Synthesis {
        prediction: SynthesisPrediction,
        posterior: PosteriorField,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VemSummary {
    pub iterations: usize,
    pub converged: bool,
    pub bound_trace: Vec<f64>,
}

/// Output of a method's preparation phase, one model per input pair.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub models: Vec<DataModel>,
    /// No forest for MI, one shared forest for joint fitting, one per pair otherwise.
    pub forests: Vec<ForestModel>,
    pub vem: Vec<VemSummary>,
}

pub trait RegistrationMethod: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether the result depends on `settings.seed`.
    fn is_stochastic(&self) -> bool {
        true
    }
    fn prepare(&self, pairs: &[VemPair], settings: &VemSettings) -> Result<Prepared>;
}

pub struct FinalInput<'a> {
    pub reference: &'a Image2D,
    pub floating: &'a Image2D,
    pub landmarks: &'a LandmarkSet,
    pub model: &'a DataModel,
    pub control_spacing_mm: f64,
    pub ffd: &'a FfdOptions,
    pub graphcut: &'a GraphCutOptions,
    pub settings: &'a VemSettings,
}

#[derive(Debug, Clone)]
pub struct FinalOutput {
    pub field: DeformationField,
    pub report: serde_json::Value,
}

pub trait FinalRegistration: Send + Sync {
    fn name(&self) -> &'static str;
    /// False when the control spacing has no effect on the result.
    fn uses_spacing(&self) -> bool {
        true
    }
    fn register(&self, input: &FinalInput<'_>) -> Result<FinalOutput>;
}

pub struct MutualInformation;

impl RegistrationMethod for MutualInformation {
    fn name(&self) -> &'static str {
        "mi"
    }
    fn is_stochastic(&self) -> bool {
        false
    }
    fn prepare(&self, pairs: &[VemPair], _: &VemSettings) -> Result<Prepared> {
        Ok(Prepared {
            models: vec![DataModel::MutualInformation; pairs.len()],
            forests: Vec::new(),
            vem: Vec::new(),
        })
    }
}

fn summarize(r: &VemResult) -> VemSummary {
    VemSummary {
        iterations: r.iterations,
        converged: r.converged,
        bound_trace: r.bound_trace.clone(),
    }
}

fn synthesis_models(r: VemResult) -> Vec<DataModel> {
    r.predictions
        .into_iter()
        .zip(r.posteriors)
        .map(|(prediction, posterior)| DataModel::Synthesis { prediction, posterior })
        .collect()
}

/// One forest and one VEM run over all pairs.
pub struct Joint;

impl RegistrationMethod for Joint {
    fn name(&self) -> &'static str {
        "joint"
    }
    fn prepare(&self, pairs: &[VemPair], settings: &VemSettings) -> Result<Prepared> {
        let r = run_vem(pairs, settings)?;
        let vem = vec![summarize(&r)];
        let forest = r.model.clone();
        Ok(Prepared {
            models: synthesis_models(r),
            forests: vec![forest],
            vem,
        })
    }
}

/// A separate VEM run per pair, all with the same seed.
pub struct Independent;

impl RegistrationMethod for Independent {
    fn name(&self) -> &'static str {
        "independent"
    }
    fn prepare(&self, pairs: &[VemPair], settings: &VemSettings) -> Result<Prepared> {
        let runs: Vec<VemResult> = pairs
            .par_iter()
            .map(|p| run_vem(std::slice::from_ref(p), settings))
            .collect::<Result<_>>()?;
        let mut out = Prepared {
            models: Vec::with_capacity(pairs.len()),
            forests: Vec::with_capacity(pairs.len()),
            vem: Vec::with_capacity(pairs.len()),
        };
        for r in runs {
            out.vem.push(summarize(&r));
            out.forests.push(r.model.clone());
            out.models.extend(synthesis_models(r));
        }
        Ok(out)
    }
}

/// Cubic B-spline FFD driven by the synthesis, or by MI for the MI method.
pub struct FfdStage;

impl FinalRegistration for FfdStage {
    fn name(&self) -> &'static str {
        "ffd"
    }
    fn register(&self, input: &FinalInput<'_>) -> Result<FinalOutput> {
        let opts = FfdOptions {
            control_spacing_mm: input.control_spacing_mm,
            ..input.ffd.clone()
        };
        let outcome = match input.model {
            DataModel::MutualInformation => optimize_ffd_mi(input.reference, input.floating, input.landmarks, &opts)?,
            DataModel::Synthesis { prediction, .. } => {
                optimize_ffd(input.reference, prediction, input.landmarks, &opts)?
            }
        };
        Ok(FinalOutput {
            field: outcome.field,
            report: serde_json::to_value(&outcome.report)?,
        })
    }
}

/// Discrete MAP shift labeling by graph-cut moves; needs a synthesis.
pub struct GraphCutStage;

impl FinalRegistration for GraphCutStage {
    fn name(&self) -> &'static str {
        "graphcut"
    }
    fn uses_spacing(&self) -> bool {
        false
    }
    fn register(&self, input: &FinalInput<'_>) -> Result<FinalOutput> {
        let DataModel::Synthesis { prediction, .. } = input.model else {
            return Err(Error::invalid("the graphcut final stage needs a synthesis method, not mi"));
        };
        let s = input.settings;
        let outcome = map_registration_graphcut(input.reference, prediction, input.landmarks, &s.mrf, &s.catalog, input.graphcut)?;
        let report = json!({
            "final": "graphcut",
            "energy": outcome.result.energy,
            "pass_energies": outcome.result.pass_energies,
            "labels": s.catalog.len(),
        });
        Ok(FinalOutput {
            field: outcome.field,
            report,
        })
    }
}

/// Named methods and final stages.
pub struct Registry {
    methods: Vec<Box<dyn RegistrationMethod>>,
    finals: Vec<Box<dyn FinalRegistration>>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            methods: Vec::new(),
            finals: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        r.add_method(Box::new(MutualInformation));
        r.add_method(Box::new(Joint));
        r.add_method(Box::new(Independent));
        r.add_final(Box::new(FfdStage));
        r.add_final(Box::new(GraphCutStage));
        r
    }

    /// Adds a method, replacing any with the same name.
    pub fn add_method(&mut self, m: Box<dyn RegistrationMethod>) {
        self.methods.retain(|x| x.name() != m.name());
        self.methods.push(m);
    }

    pub fn add_final(&mut self, f: Box<dyn FinalRegistration>) {
        self.finals.retain(|x| x.name() != f.name());
        self.finals.push(f);
    }

    pub fn method(&self, name: &str) -> Result<&dyn RegistrationMethod> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::invalid(format!("unknown method '{name}' (known: {})", self.method_names().join(", "))))
    }

    pub fn final_stage(&self, name: &str) -> Result<&dyn FinalRegistration> {
        self.finals
            .iter()
            .find(|f| f.name() == name)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::invalid(format!("unknown final stage '{name}' (known: {})", self.final_names().join(", "))))
    }

    pub fn method_names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }

    pub fn final_names(&self) -> Vec<&'static str> {
        self.finals.iter().map(|f| f.name()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RegisterOutcome {
    pub field: DeformationField,
    pub report: serde_json::Value,
    pub prepared: Prepared,
}

/// Registers a single pair: prepares the data term with `method`, then runs
/// the final stage at `control_spacing_mm`.
pub fn register_pair(
    registry: &Registry,
    method: &str,
    final_stage: &str,
    pair: &VemPair,
    settings: &VemSettings,
    ffd: &FfdOptions,
    graphcut: &GraphCutOptions,
    control_spacing_mm: f64,
) -> Result<RegisterOutcome> {
    let m = registry.method(method)?;
    let f = registry.final_stage(final_stage)?;
    let prepared = m.prepare(std::slice::from_ref(pair), settings)?;
    let model = prepared.models.first().ok_or_else(|| Error::invalid("method returned no model"))?;
    let out = f.register(&FinalInput {
        reference: &pair.reference,
        floating: &pair.floating,
        landmarks: &pair.landmarks,
        model,
        control_spacing_mm,
        ffd,
        graphcut,
        settings,
    })?;
    info!("registered pair {} with {method} + {final_stage}", pair.id);
    let report = json!({
        "method": method,
        "final": final_stage,
        "control_spacing_mm": control_spacing_mm,
        "landmarks": pair.landmarks.len(),
        "vem": prepared.vem,
        "registration": out.report,
    });
    Ok(RegisterOutcome {
        field: out.field,
        report,
        prepared,
    })
}
