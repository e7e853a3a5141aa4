use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siv::adjoint::run_adjoint;
use siv::forward::{cost, run_forward, ControlVector, FlowState, SegmentConfig, Trajectory};
use siv::harness::band_field;
use siv::optimizer::{minimize_segment, pr_direction, OptimizerConfig};
use siv::spectral::{divergence_max, leray_project, GridSize, SpectralField};

fn field(n: usize, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    band_field(GridSize::new(n).unwrap(), 3.0, 1.0, (n / 3) as f64, &mut rng)
}

fn control(n: usize, seed: u64) -> ControlVector {
    let (ux, uy) = leray_project(&field(n, seed), &field(n, seed + 1)).unwrap();
    ControlVector::new(ux, uy, field(n, seed + 2)).unwrap()
}

fn grid_n() -> impl Strategy<Value = usize> {
    prop_oneof![Just(8usize), Just(16), Just(32)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval(n in grid_n(), seed in any::<u64>()) {
        let f = field(n, seed);
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let grid: f64 = f.to_physical().values().iter().map(|v| v * v).sum::<f64>() * h * h;
        prop_assert!((grid / f.l2_norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_solenoidal(n in grid_n(), seed in any::<u64>()) {
        let (px, py) = leray_project(&field(n, seed), &field(n, seed ^ 1)).unwrap();
        let (qx, qy) = leray_project(&px, &py).unwrap();
        prop_assert!(qx.sub(&px).max_abs() < 1e-14 && qy.sub(&py).max_abs() < 1e-14);
        prop_assert!(divergence_max(&px, &py) <= 1e-10);
    }

    #[test]
    fn truncation_does_not_increase_norm(seed in any::<u64>(), dst in prop_oneof![Just(8usize), Just(16)]) {
        let f = field(32, seed);
        let t = f.truncate(GridSize::new(dst).unwrap()).unwrap();
        prop_assert!(t.l2_norm_sq() <= f.l2_norm_sq() * (1.0 + 1e-14));
    }

    #[test]
    fn pr_first_step_is_steepest_descent(g in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let d = pr_direction(&g, None, None);
        prop_assert!(d.iter().zip(&g).all(|(a, b)| *a == -*b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cost_is_symmetric(seed in any::<u64>()) {
        let seg = SegmentConfig::new(0.0, 0.01, 1e-3, 1e-3, 2e-3, GridSize::new(16).unwrap()).unwrap();
        let a = run_forward(&control(16, seed), &seg).unwrap();
        let b = run_forward(&control(16, seed.wrapping_add(7)), &seg).unwrap();
        prop_assert_eq!(cost(&a, &b).unwrap(), cost(&b, &a).unwrap());
    }

    #[test]
    fn adjoint_is_affine_in_the_measurement(seed in any::<u64>(), a in -2.0f64..2.0) {
        let seg = SegmentConfig::new(0.0, 0.01, 1e-3, 1e-3, 2e-3, GridSize::new(16).unwrap()).unwrap();
        let traj = run_forward(&control(16, seed), &seg).unwrap();
        let m1 = run_forward(&control(16, seed.wrapping_add(11)), &seg).unwrap();
        let m2 = run_forward(&control(16, seed.wrapping_add(23)), &seg).unwrap();
        let mix: Vec<FlowState> = m1
            .states
            .iter()
            .zip(&m2.states)
            .map(|(x, y)| {
                let mut s = x.clone();
                s.phi = x.phi.scaled(a);
                s.phi.axpy(1.0 - a, &y.phi);
                s
            })
            .collect();
        let mix = Trajectory::new(seg.dt, mix).unwrap();
        let (r1, r2, rm) = (
            run_adjoint(&traj, &m1, &seg).unwrap(),
            run_adjoint(&traj, &m2, &seg).unwrap(),
            run_adjoint(&traj, &mix, &seg).unwrap(),
        );
        let combo = |f: fn(&siv::adjoint::AdjointState) -> &SpectralField| {
            let mut c = f(&r1).scaled(a);
            c.axpy(1.0 - a, f(&r2));
            c.sub(f(&rm)).max_abs()
        };
        let scale = r1.max_abs().max(r2.max_abs());
        prop_assert!(combo(|s| &s.ahx) <= 1e-10 * scale);
        prop_assert!(combo(|s| &s.ahy) <= 1e-10 * scale);
        prop_assert!(combo(|s| &s.aphi) <= 1e-10 * scale);
    }

    #[test]
    fn cg_cost_history_is_non_increasing(seed in any::<u64>()) {
        let seg = SegmentConfig::new(0.0, 0.02, 1e-3, 1e-3, 2e-3, GridSize::new(16).unwrap()).unwrap();
        let meas = run_forward(&control(16, seed), &seg).unwrap();
        let cfg = OptimizerConfig { max_cg_iters: 5, ..Default::default() };
        let r = minimize_segment(&ControlVector::zeros(seg.n), &meas, &seg, &cfg).unwrap();
        prop_assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.final_cost < r.cost_history[0]);
    }
}
