//! Randomized invariants of the public API.

use proptest::prelude::*;

use regsynth_core::deformation::{warp_image, DeformationField};
use regsynth_core::eval::registration_error;
use regsynth_core::finalreg::{mutual_information, GraphCutOptions, LabelingProblem};
use regsynth_core::imagecore::{GridGeom, Image2D};
use regsynth_core::synthgen::quantize_8bit;
use regsynth_core::vem::{EStepOptions, MeanFieldProblem, PosteriorField, ShiftCatalog};

fn geom(w: usize, h: usize) -> GridGeom {
    GridGeom::new(w, h, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn registration_error_matches_direct_loop(
        ux in prop::collection::vec(-5.0f64..5.0, 24),
        uy in prop::collection::vec(-5.0f64..5.0, 24),
        vx in prop::collection::vec(-5.0f64..5.0, 24),
        vy in prop::collection::vec(-5.0f64..5.0, 24),
        mask in prop::collection::vec(any::<bool>(), 24),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let g = GridGeom::new(6, 4, 1.0).unwrap();
        let a = DeformationField::from_components(g, ux.clone(), uy.clone()).unwrap();
        let b = DeformationField::from_components(g, vx.clone(), vy.clone()).unwrap();
        let (mean, max) = registration_error(&a, &b, &mask).unwrap();
        let d: Vec<f64> = (0..24)
            .filter(|&i| mask[i])
            .map(|i| ((ux[i] - vx[i]).powi(2) + (uy[i] - vy[i]).powi(2)).sqrt())
            .collect();
        let oracle_mean = d.iter().sum::<f64>() / d.len() as f64;
        let oracle_max = d.iter().cloned().fold(0.0, f64::max);
        prop_assert!((mean - oracle_mean).abs() <= 1e-12);
        prop_assert!((max - oracle_max).abs() <= 1e-12);
        prop_assert!(mean <= max + 1e-15);
    }

    #[test]
    fn mutual_information_ignores_joint_relabeling(
        a in prop::collection::vec(0u8..8, 256),
        b in prop::collection::vec(0u8..8, 256),
        perm in Just((0u8..8).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let g = geom(16, 16);
        // pin both extremes so the bin layout is the same after relabeling
        let fix = |mut v: Vec<u8>| { v[0] = 0; v[1] = 7; v };
        let (a, b) = (fix(a), fix(b));
        let img = |v: &[u8], p: Option<&[u8]>| {
            Image2D::from_geom(g, v.iter().map(|&x| f64::from(p.map_or(x, |p| p[x as usize]))).collect()).unwrap()
        };
        let before = mutual_information(&img(&a, None), &img(&b, None), 8).unwrap();
        let after = mutual_information(&img(&a, Some(&perm)), &img(&b, Some(&perm)), 8).unwrap();
        prop_assert!((before - after).abs() <= 1e-9);
    }

    #[test]
    fn quantization_error_is_within_half_a_level(v in prop::collection::vec(-1e3f64..1e3, 16)) {
        let img = Image2D::new(4, 4, 1.0, v.clone()).unwrap();
        let (min, max) = img.min_max();
        prop_assume!(max > min);
        let q = quantize_8bit(&img);
        let step = (max - min) / 255.0;
        for (orig, out) in v.iter().zip(q.data()) {
            let back = min + out * step;
            prop_assert!((orig - back).abs() <= 0.5 * step + 1e-9);
            prop_assert_eq!(out.fract(), 0.0);
        }
    }

    #[test]
    fn estep_rows_stay_distributions(
        unary in prop::collection::vec(-20.0f64..0.0, 5 * 5 * 9),
        beta2 in 0.0f64..2.0,
    ) {
        let g = geom(5, 5);
        let cat = ShiftCatalog::square(1.0, 1.0).unwrap();
        let problem = MeanFieldProblem::new(g, cat.shifts().to_vec(), unary, beta2).unwrap();
        let mut q = PosteriorField::uniform(g, cat.len()).unwrap();
        let mut last = problem.bound_terms(&q).unwrap().total;
        let opts = EStepOptions { max_sweeps: 1, tolerance: 0.0, ..EStepOptions::default() };
        for _ in 0..5 {
            problem.run(&mut q, &opts).unwrap();
            for p in 0..g.len() {
                let row = q.row(p);
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            let now = problem.bound_terms(&q).unwrap().total;
            prop_assert!(now >= last - 1e-9 * last.abs().max(1.0));
            last = now;
        }
    }

    #[test]
    fn graph_cut_passes_never_increase_energy(
        unary in prop::collection::vec(0.0f64..10.0, 4 * 4 * 9),
        beta2 in 0.01f64..3.0,
    ) {
        let g = geom(4, 4);
        let cat = ShiftCatalog::square(1.0, 1.0).unwrap();
        let problem = LabelingProblem::new(g, cat.shifts().to_vec(), unary, beta2).unwrap();
        let r = problem.solve(&GraphCutOptions::default(), 64.0);
        for w in r.pass_energies.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!((problem.energy(&r.labeling) - r.energy).abs() <= 1e-9 * r.energy.abs().max(1.0));
    }

    #[test]
    fn integer_translation_warp_moves_interior_exactly(dx in -3i32..=3, dy in -3i32..=3, seed in 0u64..1000) {
        let g = geom(12, 12);
        let img = Image2D::from_fn(g, |x, y| ((x * 7 + y * 13) as u64 ^ seed) as f64 % 17.0).unwrap();
        let f = DeformationField::constant(g, dx as f64, dy as f64);
        let w = warp_image(&img, &f).unwrap();
        for y in 3..9 {
            for x in 3..9 {
                let sx = (x as i32 + dx) as usize;
                let sy = (y as i32 + dy) as usize;
                prop_assert_eq!(w.get(x, y), img.get(sx, sy));
            }
        }
    }
}
