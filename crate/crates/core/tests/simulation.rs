use proptest::prelude::*;
use tightwave_core::assumptions::validate_kernel;
use tightwave_core::mc::simulate_brw_max;
use tightwave_core::operators::{iterate, Diagnostics};
use tightwave_core::stats::{dkw_epsilon, ks_samples_vs_curve};
use tightwave_core::{GridMode, GridSpec, KernelScan, KernelSpec, McConfig, Mode, OffspringLaw, QTransform, RecursionConfig};

/// Engine and simulator agree for a law with one or two children.
#[test]
fn mixed_offspring_engine_matches_simulation() {
    let q = QTransform::offspring(vec![0.4, 0.6], 2.0).unwrap();
    let kernel = KernelSpec::two_point(0.5);
    let n = 6;
    let cfg = RecursionConfig {
        mode: Mode::MoveFirst,
        kernel: kernel.clone(),
        q: q.clone(),
        grid: GridSpec::new(1.0, GridMode::Lattice).with_half_width(30.0),
        iterations: n,
        diagnostics: Diagnostics::default(),
    };
    let (_, curve) = iterate(&cfg, &cfg.initial_step().unwrap()).unwrap();
    let reps = 200_000;
    let set = simulate_brw_max(&OffspringLaw::from_q(&q).unwrap(), &kernel, n, &McConfig::new(reps, 11)).unwrap();
    let ks = ks_samples_vs_curve(&set.values, &curve).unwrap();
    let band = dkw_epsilon(reps, 1e-3).unwrap();
    assert!(ks <= band, "KS {ks} above band {band}");
}

#[test]
fn centred_cover_kernel_meets_kernel_conditions() {
    let base = KernelSpec::cover(0.0);
    let l = base.centering_shift(1.8).unwrap();
    let kernel = base.with_shift(l);
    let report = validate_kernel(&kernel, &KernelScan::default_for(&kernel, 1.8)).unwrap();
    for e in &report.entries {
        assert!(e.pass, "{}: {:?}", e.condition, e);
    }
    assert!(report.get("kernel_exp_domination").unwrap().constants["a"] > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Centred Gaussian kernels of any scale satisfy the kernel conditions.
    #[test]
    fn centred_gaussians_pass(sigma in 0.2f64..5.0) {
        let base = KernelSpec::gaussian(sigma);
        let kernel = base.with_shift(base.centering_shift(1.8).unwrap());
        let report = validate_kernel(&kernel, &KernelScan::default_for(&kernel, 1.8)).unwrap();
        prop_assert!(report.all_pass(), "{:?}", report);
    }
}
