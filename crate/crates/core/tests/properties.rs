use dnnmpc_core::cycles::{build_envelope, synthesize_family, DriveCycle, FamilyParams, PreviewWindow, Similarity};
use dnnmpc_core::dnn::{train_lm, Dataset, LmConfig, NeuralPolicy, Normalization};
use dnnmpc_core::dp::fit_lambda;
use dnnmpc_core::grid::{u_levels, SocGrid};
use dnnmpc_core::nmpc::{lambda_of, solve_on_grid, EquivalenceFactor, NmpcConfig};
use dnnmpc_core::oracle::{nmpc_brute_force, nmpc_reachable_grid};
use dnnmpc_core::powertrain::{soc_step, Actuation, VehicleModel};
use proptest::prelude::*;

fn model() -> VehicleModel {
    VehicleModel::reference()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn torques_sum_to_demand(v in 0.5f64..25.0, a in -0.5f64..1.2, u in 0.0f64..=1.0) {
        let m = model();
        let shaft = m.demand_from_speed(v, a);
        if let Ok(op) = m.operate(&shaft, Actuation::split(u)) {
            if shaft.demand_torque > 0.0 {
                prop_assert!((op.engine_torque + op.motor_torque - shaft.demand_torque).abs() <= 1e-9);
            } else {
                prop_assert_eq!(op.engine_torque, 0.0);
                prop_assert!(op.motor_torque >= shaft.demand_torque);
            }
        }
    }

    #[test]
    fn feasible_split_is_feasible(v in 0.5f64..25.0, a in 0.0f64..1.5, t in 0.0f64..=1.0) {
        let m = model();
        let shaft = m.demand_from_speed(v, a);
        if let Some((lo, hi)) = m.feasible_split(&shaft) {
            let u = lo + t * (hi - lo);
            prop_assert!(m.operate(&shaft, Actuation::split(u)).is_ok(), "u = {u} in [{lo}, {hi}]");
        }
    }

    #[test]
    fn soc_step_is_monotone_in_power(soc in 0.3f64..0.9, p1 in -20_000.0f64..8_000.0, dp in 0.0f64..3_000.0) {
        let m = model();
        let a = soc_step(soc, p1, &m, 1.0).unwrap();
        let b = soc_step(soc, p1 + dp, &m, 1.0).unwrap();
        prop_assert!(b <= a);
        prop_assert_eq!(soc_step(soc, 0.0, &m, 1.0).unwrap(), soc);
        prop_assert_eq!(p1 > 0.0, a < soc);
    }

    #[test]
    fn u_levels_nest(count in 2usize..60) {
        let coarse = u_levels(count).unwrap();
        let fine = u_levels(2 * count - 1).unwrap();
        prop_assert!(coarse.iter().all(|u| fine.contains(u)));
    }

    #[test]
    fn finer_u_grid_never_costs_more(soc in 0.45f64..0.75, v in 2.0f64..18.0,
                                     a0 in -0.5f64..0.8, a1 in -0.5f64..0.8) {
        let m = model();
        let w = PreviewWindow { soc, accels: vec![a0, a1] };
        let cfg = |u_nodes| NmpcConfig {
            horizon: 2,
            u_nodes,
            lambda: EquivalenceFactor { k_a: 1.5, ..EquivalenceFactor::constant(0.24, 0.6) },
            ..NmpcConfig::default()
        };
        let exact = |c: &NmpcConfig| {
            let grid = SocGrid::from_nodes(nmpc_reachable_grid(&w, v, c, &m).unwrap()).unwrap();
            solve_on_grid(&w, v, c, &m, &grid).unwrap().cost
        };
        let (coarse, fine) = (cfg(3), cfg(5));
        prop_assert!(exact(&fine) <= exact(&coarse) + 1e-12);
        let brute = nmpc_brute_force(&w, v, &fine, &m).unwrap().unwrap().0;
        prop_assert!((exact(&fine) - brute).abs() <= 1e-9);
    }

    #[test]
    fn quadratic_lambda_is_symmetric(l0 in 0.01f64..10.0, ka in -5.0f64..50.0, d in 0.0f64..0.3) {
        let cfg = NmpcConfig { lambda: EquivalenceFactor { k_a: ka, ..EquivalenceFactor::constant(l0, 0.6) }, ..NmpcConfig::default() };
        prop_assert!((lambda_of(0.6 + d, &cfg) - lambda_of(0.6 - d, &cfg)).abs() <= 1e-12);
        prop_assert_eq!(lambda_of(0.6, &cfg), l0);
    }

    #[test]
    fn lambda_fit_recovers_exact_quadratic(l0 in 0.05f64..5.0, ka in -2.0f64..50.0,
                                          socs in prop::collection::vec(0.4f64..0.8, 3..40)) {
        prop_assume!(socs.iter().any(|s| (s - 0.6).abs() > 0.02));
        prop_assume!(socs.iter().any(|s| ((s - 0.6).powi(2) - (socs[0] - 0.6).powi(2)).abs() > 1e-4));
        let samples: Vec<(f64, f64)> = socs.iter().map(|&s| (s, l0 + ka * (s - 0.6).powi(2))).collect();
        let fit = fit_lambda(&samples, 0.6).unwrap();
        prop_assert!((fit.lambda0 - l0).abs() <= 1e-8 * (1.0 + l0.abs()));
        prop_assert!((fit.k_a - ka).abs() <= 1e-6 * (1.0 + ka.abs()));
        prop_assert!(fit.residual_rms <= 1e-9);
        prop_assert!(!fit.degenerate);
    }

    #[test]
    fn normalization_round_trips(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 2..30)) {
        let norm = Normalization::fit_min_max(rows.iter().map(Vec::as_slice), 4);
        for r in &rows {
            let n = norm.normalize(r);
            prop_assert!(n.iter().all(|x| (-1.0 - 1e-12..=1.0 + 1e-12).contains(x)));
            let back = norm.denormalize(&n);
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn dataset_split_is_deterministic(n in 1usize..200, seed in any::<u64>()) {
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| vec![0.5, i as f64]).collect();
        let targets: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 7) as f64 / 6.0]).collect();
        let a = Dataset::new(1, inputs.clone(), targets.clone(), seed).unwrap();
        let b = Dataset::new(1, inputs, targets, seed).unwrap();
        prop_assert_eq!(&a.split, &b.split);
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(Dataset::parse_csv("mem", &a.to_csv()).unwrap(), a);
    }

    #[test]
    fn accelerations_integrate_back_to_speeds(speeds in prop::collection::vec(0.0f64..30.0, 2..80), dt in 0.1f64..2.0) {
        let c = DriveCycle::from_speeds("p", dt, speeds.clone()).unwrap();
        let acc = c.accelerations();
        prop_assert_eq!(acc.len(), c.steps());
        let mut v = speeds[0];
        for (k, a) in acc.iter().enumerate() {
            v += a * c.dt();
            prop_assert!((v - speeds[k + 1]).abs() <= 1e-9);
        }
    }

    #[test]
    fn family_is_a_pure_function(seed in any::<u64>(), count in 1usize..5, noise in 0.0f64..1.5) {
        let base = DriveCycle::from_speeds("b", 1.0, (0..60).map(|i| 10.0 + 5.0 * (i as f64 / 9.0).sin()).collect()).unwrap();
        let p = FamilyParams { count, seed, noise_scale: noise, ..FamilyParams::default() };
        let a = synthesize_family(&base, &p).unwrap();
        prop_assert_eq!(&a, &synthesize_family(&base, &p).unwrap());
        prop_assert_eq!(a.len(), count);
        for c in &a {
            prop_assert!(c.speeds.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(&c.timestamps, &base.timestamps);
        }
    }

    #[test]
    fn small_sets_sit_inside_their_own_envelope(seed in any::<u64>(), count in 2usize..=3) {
        // with at most three members no member can be more than sqrt(2)
        // population deviations from the mean
        let base = DriveCycle::from_speeds("b", 1.0, (0..50).map(|i| 8.0 + (i as f64 / 5.0).cos()).collect()).unwrap();
        let fam = synthesize_family(&base, &FamilyParams { count, seed, ..FamilyParams::default() }).unwrap();
        let env = build_envelope(&fam).unwrap();
        for c in &fam {
            prop_assert_eq!(env.classify(c).unwrap(), Similarity::TrainedLike);
        }
    }

    #[test]
    fn fuel_map_matches_polynomial(c in prop::array::uniform6(0.0f64..1e-3), t in 0.0f64..120.0, w in 0.0f64..500.0) {
        let mut m = model();
        m.fuel_coeffs = c;
        let direct = c[0] + c[1] * t + c[2] * w + c[3] * t * t + c[4] * t * w + c[5] * w * w;
        prop_assert!((m.fuel_rate(t, w).unwrap() - direct).abs() <= 1e-12 * (1.0 + direct));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn accepted_lm_steps_never_raise_train_mse(seed in 0u64..1000, hidden in 1usize..6) {
        let inputs: Vec<Vec<f64>> = (0..80).map(|i| {
            let t = i as f64 / 80.0;
            vec![0.4 + 0.4 * t, (6.0 * t).sin(), (2.0 * t).cos()]
        }).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![(0.5 + 0.4 * x[1]).clamp(0.0, 1.0), x[0]]).collect();
        let data = Dataset::new(2, inputs, targets, seed).unwrap();
        let net = NeuralPolicy::random(&[3, hidden, 2], seed).unwrap();
        let (_, log) = train_lm(&net, &data, &LmConfig { epochs: 25, ..LmConfig::default() }).unwrap();
        prop_assert!(log.windows(2).all(|w| w[1].train_mse <= w[0].train_mse));
    }
}
