//! Acceptance criteria 1-13. Each test prints one `PASS` or `FAIL` line with
//! the measured values. A `FAIL` is reported, not asserted, so the suite
//! records the outcome of every criterion; errors while running still panic.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng as _;
use regsynth_core::config::Config;
use regsynth_core::deformation::{min_jacobian_determinant, DeformationField, FfdTransform, VelocityField};
use regsynth_core::deformation::{integrate_velocity, auto_squarings};
use regsynth_core::eval::{registration_error, run_sweep, Registry, SweepRow};
use regsynth_core::finalreg::{
    histogram_entropy, landmark_pairs_mm, mutual_information, optimize_ffd, FfdOptions, GraphCutOptions,
    LabelingProblem, LevelObjective, SynthesisTerm,
};
use regsynth_core::forest::{fuse_guesses, train_forest, FeatureConfig, ForestHyperparams, TrainingImage};
use regsynth_core::imagecore::{GridGeom, Image2D};
use regsynth_core::rng::stream;
use regsynth_core::synthgen::{generate_dataset, generate_pair, generate_phantom_pair, quantize_8bit, sample_velocity, SynthConfig};
use regsynth_core::vem::{
    build_problem, run_vem, EStepOptions, LandmarkSet, MeanFieldProblem, MrfParams, PosteriorField, ShiftCatalog,
    VemPair,
};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {id:2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    // direct write: the test harness only captures the print macros
    let _ = std::io::stderr().write_all(line.as_bytes());
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance.txt");
    if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = f.write_all(line.as_bytes());
    }
}

fn seeded(seed: u64) -> regsynth_core::rng::Rng {
    stream(seed, 0xacce, 0)
}

#[test]
fn c01_posterior_validity() {
    let pair = generate_pair(&SynthConfig::default(), 0).unwrap();
    let catalog = ShiftCatalog::square(10.0, 0.5).unwrap();
    assert_eq!(catalog.len(), 1681);
    let g = pair.floating.geom();
    let features = FeatureConfig::default().compute(&pair.floating).unwrap();
    let mut q = PosteriorField::uniform(g, catalog.len()).unwrap();
    let forest = train_forest(
        &[TrainingImage { id: 0, features: &features, target: &pair.reference, posterior: &q }],
        &catalog,
        &ForestHyperparams::default(),
        1,
    )
    .unwrap();
    let pred = forest.predict(&features).unwrap();
    let problem = build_problem(&pair.reference, &pred, &LandmarkSet::empty(0.5), &MrfParams::default(), &catalog).unwrap();
    let (mut worst_dev, mut worst_min, mut slowest) = (0.0f64, f64::INFINITY, 0.0f64);
    let mut last = Instant::now();
    let rep = problem
        .run_with(&mut q, &EStepOptions::default(), |_, q| {
            slowest = slowest.max(last.elapsed().as_secs_f64());
            let (dev, min) = q.validity();
            worst_dev = worst_dev.max(dev);
            worst_min = worst_min.min(min);
            last = Instant::now();
        })
        .unwrap();
    let pass = worst_dev <= 1e-12 && worst_min >= 0.0 && slowest < 60.0;
    report(
        1,
        "posterior validity",
        pass,
        format!("{} sweeps, max |sum-1| {worst_dev:.2e}, min entry {worst_min:.2e}, slowest sweep {slowest:.2} s", rep.sweeps),
    );
}

#[test]
fn c02_mean_field_monotonicity() {
    let g = GridGeom::new(16, 16, 1.0).unwrap();
    let catalog = ShiftCatalog::square(4.0, 1.0).unwrap();
    assert_eq!(catalog.len(), 81);
    let mut rng = seeded(2);
    let unary: Vec<f64> = (0..g.len() * 81).map(|_| -rng.random_range(0.0..10.0)).collect();
    let problem = MeanFieldProblem::new(g, catalog.shifts().to_vec(), unary, 0.3).unwrap();
    let mut q = PosteriorField::uniform(g, 81).unwrap();
    let mut bounds = vec![problem.bound_terms(&q).unwrap().total];
    let opts = EStepOptions { max_sweeps: 20, tolerance: 0.0, ..EStepOptions::default() };
    problem.run_with(&mut q, &opts, |_, q| bounds.push(problem.bound_terms(q).unwrap().total)).unwrap();
    let worst = bounds
        .windows(2)
        .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    report(
        2,
        "mean-field monotonicity",
        bounds.len() == 21 && worst <= 1e-9,
        format!("{} sweeps, largest relative decrease {worst:.2e}", bounds.len() - 1),
    );
}

#[test]
fn c03_mean_field_vs_enumeration() {
    let g = GridGeom::new(3, 3, 1.0).unwrap();
    let shifts = vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.5]];
    let (s, n) = (shifts.len(), g.len());
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let mut rng = seeded(300 + trial);
        let unary: Vec<f64> = (0..n * s).map(|_| rng.random_range(-5.0..0.0)).collect();
        let problem = MeanFieldProblem::new(g, shifts.clone(), unary.clone(), 0.7).unwrap();
        let mut rows = Vec::with_capacity(n * s);
        for _ in 0..n {
            let w: Vec<f64> = (0..s).map(|_| rng.random_range(0.01..1.0)).collect();
            let t: f64 = w.iter().sum();
            rows.extend(w.iter().map(|v| v / t));
        }
        let q = PosteriorField::from_rows(g, s, rows.clone()).unwrap();
        let terms = problem.bound_terms(&q).unwrap();
        // exhaustive sum over all s^n joint labelings
        let (mut ent, mut eu, mut ep) = (0.0, 0.0, 0.0);
        let mut lab = vec![0usize; n];
        for code in 0..s.pow(n as u32) {
            let mut c = code;
            for l in lab.iter_mut() {
                *l = c % s;
                c /= s;
            }
            let prob: f64 = (0..n).map(|p| rows[p * s + lab[p]]).product();
            ent -= prob * prob.ln();
            eu += prob * (0..n).map(|p| unary[p * s + lab[p]]).sum::<f64>();
            let mut pw = 0.0;
            for p in 0..n {
                let (x, y) = (p % 3, p / 3);
                let d = |a: usize, b: usize| {
                    let (u, v) = (shifts[lab[a]], shifts[lab[b]]);
                    (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)
                };
                if x + 1 < 3 {
                    pw += d(p, p + 1);
                }
                if y + 1 < 3 {
                    pw += d(p, p + 3);
                }
            }
            ep += prob * pw;
        }
        worst = worst
            .max((ent - terms.entropy).abs())
            .max((eu - terms.expected_unary).abs())
            .max((ep - terms.expected_pairwise).abs());
    }
    report(3, "mean field vs enumeration", worst <= 1e-9, format!("largest deviation {worst:.2e} over 5 instances"));
}

#[test]
fn c04_graph_cut_optimality() {
    let g = GridGeom::new(3, 2, 1.0).unwrap();
    let labels = vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    let (s, n) = (labels.len(), g.len());
    let (mut worst_gap, mut increases) = (0.0f64, 0usize);
    for trial in 0..100 {
        let mut rng = seeded(400 + trial);
        let unary: Vec<f64> = (0..n * s).map(|_| rng.random_range(0.0..10.0)).collect();
        let beta2 = rng.random_range(0.1..5.0);
        let problem = LabelingProblem::new(g, labels.clone(), unary, beta2).unwrap();
        let res = problem.solve(&GraphCutOptions::default(), 64.0);
        increases += res.pass_energies.windows(2).filter(|w| w[1] > w[0]).count();
        let mut best = f64::INFINITY;
        let mut lab = vec![0usize; n];
        for code in 0..s.pow(n as u32) {
            let mut c = code;
            for l in lab.iter_mut() {
                *l = c % s;
                c /= s;
            }
            best = best.min(problem.energy(&lab));
        }
        worst_gap = worst_gap.max((res.energy - best) / best.abs().max(1e-12));
    }
    report(
        4,
        "graph-cut optimality",
        worst_gap <= 0.01 && increases == 0,
        format!("worst gap to optimum {:.3}%, passes increasing energy {increases}", 100.0 * worst_gap),
    );
}

/// Time-one flow by forward Euler in pixel units, bilinear velocity lookup.
fn euler_flow(vel: &DeformationField, steps: usize) -> Vec<[f64; 2]> {
    let g = vel.geom();
    let s = g.spacing;
    let dt = 1.0 / steps as f64;
    (0..g.len())
        .map(|i| {
            let (x0, y0) = ((i % g.width) as f64, (i / g.width) as f64);
            let (mut x, mut y) = (x0, y0);
            for _ in 0..steps {
                let (vx, vy) = vel.sample(x, y);
                x += dt * vx / s;
                y += dt * vy / s;
            }
            [x - x0, y - y0]
        })
        .collect()
}

#[test]
fn c05_integrator_correctness() {
    let cfg = SynthConfig { sigma_v_mm: 10.0, ..SynthConfig::default() };
    let g = cfg.geom().unwrap();
    let (mut worst, mut min_jac) = (0.0f64, f64::INFINITY);
    for seed in 0..100 {
        let vel: VelocityField = sample_velocity(g, &cfg, 500 + seed).unwrap();
        let phi = integrate_velocity(&vel, auto_squarings(&vel)).unwrap();
        let euler = euler_flow(vel.as_field(), 4096);
        for (i, e) in euler.iter().enumerate() {
            let d = ((phi.ux()[i] / g.spacing - e[0]).powi(2) + (phi.uy()[i] / g.spacing - e[1]).powi(2)).sqrt();
            worst = worst.max(d);
        }
        min_jac = min_jac.min(min_jacobian_determinant(&phi).unwrap());
    }
    report(
        5,
        "integrator correctness",
        worst < 0.01 && min_jac > 0.0,
        format!("max endpoint discrepancy {worst:.2e} px, min Jacobian {min_jac:.4}"),
    );
}

#[test]
fn c06_forest_calibration() {
    let (_, v1) = fuse_guesses(&[37.0; 100], 2.0, 1250.0);
    let (_, v2) = fuse_guesses(&[10.0, 20.0], 2.0, 1250.0);
    let (e1, e2) = ((v1 - 2500.0 / 104.0).abs(), (v2 - 425.0).abs());
    report(6, "forest calibration", e1 <= 1e-9 && e2 <= 1e-9, format!("errors {e1:.1e}, {e2:.1e}"));
}

#[test]
fn c07_ffd_gradient_check() {
    let pair = generate_pair(&SynthConfig::default(), 1).unwrap();
    let g = pair.reference.geom();
    let mean = generate_phantom_pair(g, &mut seeded(7)).unwrap().b;
    let var = Image2D::from_fn(g, |x, y| 20.0 + ((x * 3 + y * 5) % 11) as f64).unwrap();
    let term = SynthesisTerm::new(&mean, &var, 2.0 / (9.0 * g.len() as f64));
    let lms = landmark_pairs_mm(&pair.landmarks, g.spacing);
    let weights = FfdOptions { beta_jacobian: 0.01, ..FfdOptions::default() }.regularizer_weights();
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let mut rng = seeded(700 + trial);
        let spacing = [6.0, 9.0, 12.0][trial as usize % 3];
        let t = FfdTransform::identity_for(&g, spacing).unwrap();
        let obj = LevelObjective::new(g, &pair.reference, &term, &lms, 0.5, weights, &t);
        let params: Vec<f64> = t.params().iter().map(|p| p + rng.random_range(-0.8..0.8)).collect();
        let mut grad = vec![0.0; params.len()];
        obj.value_and_gradient(&params, &mut grad);
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6;
        let mut dummy = vec![0.0; params.len()];
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            let up = obj.value_and_gradient(&p, &mut dummy);
            p[k] -= 2.0 * h;
            let down = obj.value_and_gradient(&p, &mut dummy);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[k]).abs() / scale.max(1e-300));
        }
    }
    report(7, "FFD gradient check", worst < 1e-4, format!("max relative error {worst:.2e} over 20 control grids"));
}

#[test]
fn c08_mi_sanity() {
    let img = generate_pair(&SynthConfig::default(), 2).unwrap().reference;
    let self_err = (mutual_information(&img, &img, 64).unwrap() - histogram_entropy(&img, 64).unwrap()).abs();
    let g = GridGeom::new(128, 128, 1.0).unwrap();
    let mut mis: Vec<f64> = (0..20)
        .map(|seed| {
            let mut rng = seeded(800 + seed);
            let mut noise = || Image2D::from_fn(g, |_, _| rng.random_range(0.0..256.0f64).floor()).unwrap();
            let (a, b) = (noise(), noise());
            mutual_information(&a, &b, 64).unwrap()
        })
        .collect();
    mis.sort_by(f64::total_cmp);
    let median = 0.5 * (mis[9] + mis[10]);
    report(
        8,
        "MI sanity",
        self_err <= 1e-9 && median < 0.05,
        format!("|MI(A,A) - H(A)| {self_err:.1e}, median MI of independent noise {median:.4} nats"),
    );
}

#[test]
fn c09_self_registration() {
    let cfg = SynthConfig {
        sigma_v_mm: 0.0,
        rotation_std_deg: 0.0,
        translation_std_px: 0.0,
        log_scale_std: 0.0,
        ..SynthConfig::default()
    };
    let pair = generate_pair(&cfg, 0).unwrap();
    let c = Config::default();
    let catalog = c.shifts.catalog().unwrap();
    let settings = c.vem_settings(catalog.clone(), c.seed);
    let none = LandmarkSet::empty(0.5);
    let vp = VemPair { id: 0, reference: pair.reference.clone(), floating: pair.reference.clone(), landmarks: none.clone() };
    let r = run_vem(&[vp], &settings).unwrap();
    let q = &r.posteriors[0];
    let masked: Vec<usize> = (0..pair.mask.len()).filter(|&i| pair.mask[i]).collect();
    let zero_frac = masked.iter().filter(|&&i| q.argmax(i) == catalog.zero_index()).count() as f64 / masked.len() as f64;
    let ffd = optimize_ffd(&pair.reference, &r.predictions[0], &none, &c.ffd).unwrap();
    let zero = DeformationField::zeros(pair.reference.geom());
    let (err, _) = registration_error(&ffd.field, &zero, &pair.mask).unwrap();
    report(
        9,
        "self-registration",
        r.converged && r.iterations <= 10 && zero_frac >= 0.9 && err < 0.5,
        format!(
            "converged {} after {} iterations, zero-shift argmax at {:.1}% of masked pixels, FFD mean error {err:.3} mm",
            r.converged,
            r.iterations,
            100.0 * zero_frac
        ),
    );
}

const SEEDS: [u64; 3] = [1, 2, 3];
const SPACINGS: [f64; 3] = [6.0, 12.0, 18.0];
const LANDMARKS: [usize; 3] = [0, 4, 8];

/// The 20-pair benchmark sweep shared by criteria 10-12.
fn benchmark() -> &'static (Vec<SweepRow>, f64) {
    static ROWS: OnceLock<(Vec<SweepRow>, f64)> = OnceLock::new();
    ROWS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { sigma_v_mm: 20.0, n_pairs: 20, n_landmarks: 8, ..SynthConfig::default() };
        generate_dataset(dir.path(), &synth).unwrap();
        let mut c = Config::default();
        c.sweep.spacings_mm = SPACINGS.to_vec();
        c.sweep.landmark_counts = LANDMARKS.to_vec();
        c.sweep.methods = vec!["mi".into(), "joint".into()];
        c.sweep.seeds = SEEDS.to_vec();
        let t = Instant::now();
        let rows = run_sweep(dir.path(), &c, &Registry::builtin(), true).unwrap();
        (rows, t.elapsed().as_secs_f64())
    })
}

fn cell(rows: &[SweepRow], method: &str, n_landmarks: usize, spacing: f64, seed: u64) -> f64 {
    rows.iter()
        .find(|r| r.method == method && r.n_landmarks == n_landmarks && r.spacing_mm == spacing && r.seed == seed)
        .expect("sweep cell present")
        .mean_err_mm
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

/// Proposed method at 6 mm, median over seeds.
fn proposed(rows: &[SweepRow], n_landmarks: usize) -> f64 {
    median3(SEEDS.map(|s| cell(rows, "joint", n_landmarks, 6.0, s)))
}

/// MI at its best spacing.
fn mi_best(rows: &[SweepRow], n_landmarks: usize) -> (f64, f64) {
    SPACINGS
        .iter()
        .map(|&sp| (cell(rows, "mi", n_landmarks, sp, SEEDS[0]), sp))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

#[test]
fn c10_headline_trend() {
    let (rows, secs) = benchmark();
    let ours = cell(rows, "joint", 0, 6.0, SEEDS[0]);
    let (mi, sp) = mi_best(rows, 0);
    let reduction = (mi - ours) / mi;
    report(
        10,
        "headline trend",
        ours < mi && reduction >= 0.05 && *secs <= 7200.0,
        format!(
            "proposed at 6 mm {ours:.3} mm vs MI best {mi:.3} mm (at {sp} mm), reduction {:.1}%, sweep {secs:.0} s",
            100.0 * reduction
        ),
    );
}

#[test]
fn c11_landmark_trend() {
    let (rows, _) = benchmark();
    let ours: Vec<f64> = LANDMARKS.iter().map(|&n| proposed(rows, n)).collect();
    let mi: Vec<f64> = LANDMARKS.iter().map(|&n| mi_best(rows, n).0).collect();
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let (gap0, gap8) = (mi[0] - ours[0], mi[2] - ours[2]);
    report(
        11,
        "landmark trend",
        monotone(&ours) && monotone(&mi) && gap8 >= gap0,
        format!("proposed {ours:.3?} mm, MI {mi:.3?} mm for 0/4/8 landmarks, gap {gap0:.3} -> {gap8:.3} mm"),
    );
}

#[test]
fn c12_large_spacing_equivalence() {
    let (rows, _) = benchmark();
    let ours = cell(rows, "joint", 0, 18.0, SEEDS[0]);
    let mi = cell(rows, "mi", 0, 18.0, SEEDS[0]);
    let rel = (ours - mi).abs() / mi;
    report(
        12,
        "large-spacing equivalence",
        rel < 0.15,
        format!("at 18 mm proposed {ours:.3} mm vs MI {mi:.3} mm, relative difference {:.1}%", 100.0 * rel),
    );
}

fn regsynth(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_regsynth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "regsynth {args:?} failed");
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c13_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let root = tmp.path().join(tag);
        let data = root.join("data");
        let (d, csv, field) = (data.to_str().unwrap(), root.join("sweep.csv"), root.join("field.raw"));
        regsynth(&["generate", "--out", d, "--pairs", "2", "--seed", "5"]);
        let quick = ["--trees", "20", "--vem-iterations", "3", "--shift-step", "2", "--seed", "5"];
        let mut sweep = vec!["sweep", "--dataset", d, "--out", csv.to_str().unwrap(), "--no-timing"];
        sweep.extend(["--spacings", "9,18", "--landmark-counts", "0,4", "--methods", "mi,joint,independent"]);
        sweep.extend(quick);
        regsynth(&sweep);
        let pair = data.join("pair_1");
        let mut reg = vec!["register", "--pair", pair.to_str().unwrap(), "--out-field", field.to_str().unwrap()];
        reg.extend(quick);
        regsynth(&reg);
        files_under(&root)
    };
    let (a, b) = (run("a"), run("b"));
    let same = a == b;
    let n_csv = a.iter().find(|f| f.0 == "sweep.csv").map(|f| f.1.len()).unwrap_or(0);
    report(
        13,
        "determinism",
        same && n_csv > 0,
        format!("{} files compared across two runs, identical: {same}", a.len()),
    );
}

#[test]
fn quantization_used_by_generation_is_stable() {
    // guards the 8-bit rasters that criterion 13 compares byte for byte
    let img = generate_pair(&SynthConfig::default(), 3).unwrap().floating;
    assert_eq!(quantize_8bit(&img), img);
}
