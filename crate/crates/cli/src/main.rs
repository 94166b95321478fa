use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use regsynth_core::config::Config;
use regsynth_core::deformation::write_field;
use regsynth_core::eval::{register_pair, registration_error, run_sweep, write_sweep_csv, DataModel, Registry};
use regsynth_core::forest::ForestModel;
use regsynth_core::imagecore::io::{read_image, write_image, write_raster_f32};
use regsynth_core::synthgen::{generate_dataset, BenchmarkPair};
use regsynth_core::vem::{export_posterior, LandmarkSet, VemPair};

#[derive(Parser)]
#[command(name = "regsynth", version, about = "Joint synthesis and nonrigid registration of 2D image pairs")]
struct Cli {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags overriding individual configuration values.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// MRF weight on squared shift magnitude (1/mm^2).
    #[arg(long, global = true)]
    beta1: Option<f64>,
    /// MRF weight on squared shift differences (1/mm^2).
    #[arg(long, global = true)]
    beta2: Option<f64>,
    #[arg(long, global = true)]
    trees: Option<usize>,
    /// Inverse-Gamma shape of the forest variance prior.
    #[arg(long, global = true)]
    prior_a: Option<f64>,
    /// Inverse-Gamma scale of the forest variance prior.
    #[arg(long, global = true)]
    prior_b: Option<f64>,
    #[arg(long, global = true)]
    vem_iterations: Option<usize>,
    #[arg(long, global = true)]
    shift_radius_mm: Option<f64>,
    /// Step of the shift catalog (mm); coarser steps run faster.
    #[arg(long, global = true)]
    shift_step: Option<f64>,
    #[arg(long, global = true)]
    beta_bending: Option<f64>,
    #[arg(long, global = true)]
    beta_linear: Option<f64>,
    #[arg(long, global = true)]
    beta_jacobian: Option<f64>,
    /// Image-term weight of the FFD objective.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    sigma_k_mm: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom benchmark dataset.
    Generate(GenerateArgs),
    /// Register a single pair.
    Register(RegisterArgs),
    /// Run an evaluation sweep over a dataset and write a CSV.
    Sweep(SweepArgs),
    /// Apply a saved forest to an image.
    Predict(PredictArgs),
    /// Print the effective configuration as JSON.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    spacing_mm: Option<f64>,
    #[arg(long)]
    sigma_v: Option<f64>,
    #[arg(long)]
    landmarks: Option<usize>,
}

#[derive(Args)]
struct RegisterArgs {
    /// Benchmark pair directory; the error against its truth is reported.
    #[arg(long, conflicts_with_all = ["reference", "floating"])]
    pair: Option<PathBuf>,
    #[arg(long, requires = "floating")]
    reference: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    floating: Option<PathBuf>,
    /// Landmark CSV (`id,kx_px,ky_px,khx_px,khy_px`).
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Use only the first N landmarks.
    #[arg(long)]
    n_landmarks: Option<usize>,
    #[arg(long, default_value = "joint")]
    method: String,
    #[arg(long = "final", default_value = "ffd")]
    final_stage: String,
    #[arg(long, default_value_t = 6.0)]
    spacing_mm: f64,
    #[arg(long)]
    out_field: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Save the trained forest (synthesis methods only).
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Write `<stem>_argmax.raw` and `<stem>_entropy.raw` of the shift posterior.
    #[arg(long)]
    posterior_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    spacings: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    landmark_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long = "final")]
    final_stage: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Write zero runtimes so the CSV is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Predicted mean, rounded to 8 bits (`.png` or `.pgm`).
    #[arg(long)]
    out_mean: PathBuf,
    /// Mean and variance as a two-plane float32 raster.
    #[arg(long)]
    out_raw: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    let o = &cli.overrides;
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    if let Some(s) = o.seed {
        c.seed = s;
        c.synth.seed = s;
    }
    set(&mut c.mrf.beta1, o.beta1);
    set(&mut c.mrf.beta2, o.beta2);
    if let Some(t) = o.trees {
        c.forest.n_trees = t;
    }
    set(&mut c.forest.a, o.prior_a);
    set(&mut c.forest.b, o.prior_b);
    if let Some(n) = o.vem_iterations {
        c.vem.max_iterations = n;
    }
    set(&mut c.shifts.radius_mm, o.shift_radius_mm);
    if let Some(s) = o.shift_step {
        c.shifts.step_mm = s;
        c.sweep.shift_step_mm = Some(s);
    }
    set(&mut c.ffd.beta_bending, o.beta_bending);
    set(&mut c.ffd.beta_linear, o.beta_linear);
    set(&mut c.ffd.beta_jacobian, o.beta_jacobian);
    if o.alpha.is_some() {
        c.ffd.alpha = o.alpha;
    }
    set(&mut c.sigma_k_mm, o.sigma_k_mm);
    set(&mut c.synth.sigma_k_mm, o.sigma_k_mm);
    c.validate()?;
    Ok(c)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn generate(mut cfg: Config, a: GenerateArgs) -> Result<()> {
    let s = &mut cfg.synth;
    s.n_pairs = a.pairs.unwrap_or(s.n_pairs);
    s.image_size = a.size.unwrap_or(s.image_size);
    s.spacing_mm = a.spacing_mm.unwrap_or(s.spacing_mm);
    s.sigma_v_mm = a.sigma_v.unwrap_or(s.sigma_v_mm);
    s.n_landmarks = a.landmarks.unwrap_or(s.n_landmarks);
    generate_dataset(&a.out, s)?;
    info!("wrote {} pairs to {}", s.n_pairs, a.out.display());
    Ok(())
}

fn register(cfg: Config, a: RegisterArgs) -> Result<()> {
    let (reference, floating, mut landmarks, bench) = match (&a.pair, &a.reference, &a.floating) {
        (Some(dir), _, _) => {
            let p = BenchmarkPair::load(dir)?;
            (p.reference.clone(), p.floating.clone(), p.landmarks.clone(), Some(p))
        }
        (None, Some(r), Some(f)) => (read_image(r)?, read_image(f)?, LandmarkSet::empty(cfg.sigma_k_mm), None),
        _ => bail!("give either --pair or both --reference and --floating"),
    };
    if let Some(path) = &a.landmarks {
        landmarks = LandmarkSet::read_csv(path, cfg.sigma_k_mm)?;
    }
    if let Some(n) = a.n_landmarks {
        landmarks = landmarks.prefix(n);
    }
    let catalog = cfg.shifts.catalog()?;
    let settings = cfg.vem_settings(catalog, cfg.seed);
    let pair = VemPair {
        id: 0,
        reference,
        floating,
        landmarks,
    };
    let registry = Registry::builtin();
    let out = register_pair(
        &registry,
        &a.method,
        &a.final_stage,
        &pair,
        &settings,
        &cfg.ffd,
        &cfg.graphcut,
        a.spacing_mm,
    )?;
    write_field(&a.out_field, &out.field)?;
    let mut report = out.report;
    if let Some(b) = &bench {
        let (mean, max) = registration_error(&out.field, &b.truth, &b.mask)?;
        report["error_mm"] = serde_json::json!({ "mean": mean, "max": max });
        info!("registration error: mean {mean:.3} mm, max {max:.3} mm");
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    if let Some(path) = &a.save_model {
        let Some(model) = out.prepared.forests.first() else {
            bail!("method '{}' trains no forest to save", a.method);
        };
        model.save(path)?;
    }
    if let Some(stem) = &a.posterior_out {
        match out.prepared.models.first() {
            Some(DataModel::Synthesis { posterior, .. }) => export_posterior(posterior, &settings.catalog, stem)?,
            _ => bail!("method '{}' has no shift posterior", a.method),
        }
    }
    Ok(())
}

fn sweep(mut cfg: Config, a: SweepArgs) -> Result<()> {
    let g = &mut cfg.sweep;
    if let Some(v) = a.spacings {
        g.spacings_mm = v;
    }
    if let Some(v) = a.landmark_counts {
        g.landmark_counts = v;
    }
    if let Some(v) = a.methods {
        g.methods = v;
    }
    if let Some(v) = a.final_stage {
        g.final_stage = v;
    }
    if let Some(v) = a.seeds {
        g.seeds = v;
    }
    let rows = run_sweep(&a.dataset, &cfg, &Registry::builtin(), !a.no_timing)?;
    write_sweep_csv(&a.out, &rows)?;
    info!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = ForestModel::load(&a.model)?;
    let img = read_image(&a.input)?;
    let features = model.feature_config().compute(&img)?;
    let pred = model.predict(&features)?;
    write_image(&a.out_mean, &pred.mean_image()?)?;
    if let Some(p) = &a.out_raw {
        write_raster_f32(p, pred.geom, &[&pred.mean, &pred.var])?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate(a) => generate(cfg, a),
        Command::Register(a) => register(cfg, a),
        Command::Sweep(a) => sweep(cfg, a),
        Command::Predict(a) => predict(a),
        Command::Config { out } => {
            let v = serde_json::to_value(&cfg)?;
            match out {
                Some(p) => write_json(&p, &v),
                None => {
                    println!("{}", serde_json::to_string_pretty(&v)?);
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
