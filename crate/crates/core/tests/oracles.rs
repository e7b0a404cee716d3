//! Solvers checked against exhaustive enumeration and finite differences.

use dnnmpc_core::cycles::{DriveCycle, PreviewWindow};
use dnnmpc_core::dnn::{approximation_error, jacobian, train_lm, Dataset, LmConfig, NeuralPolicy, Split};
use dnnmpc_core::dp::{solve_dp, DpConfig};
use dnnmpc_core::grid::SocGrid;
use dnnmpc_core::nmpc::{solve_on_grid, EquivalenceFactor, NmpcConfig};
use dnnmpc_core::oracle::{
    dp_brute_force, dp_reachable_grid, finite_difference_jacobian, nmpc_brute_force, nmpc_reachable_grid,
};
use dnnmpc_core::powertrain::VehicleModel;

fn nmpc_cfg(n: usize, u_nodes: usize) -> NmpcConfig {
    NmpcConfig {
        horizon: n,
        u_nodes,
        lambda: EquivalenceFactor {
            k_a: 2.0,
            ..EquivalenceFactor::constant(0.24, 0.6)
        },
        ..NmpcConfig::default()
    }
}

const WINDOWS: &[(f64, f64, [f64; 3])] = &[
    (0.60, 8.0, [0.4, 0.2, -0.1]),
    (0.55, 3.0, [1.0, 0.8, 0.0]),
    (0.66, 12.0, [0.0, -0.6, 0.3]),
    (0.41, 0.0, [0.9, 0.5, 0.5]),
    (0.79, 15.0, [-1.2, 0.0, 0.2]),
];

#[test]
fn nmpc_equals_enumeration() {
    let model = VehicleModel::reference();
    for n in 1..=3 {
        for u_nodes in [3, 5] {
            let cfg = nmpc_cfg(n, u_nodes);
            for &(soc, v, accels) in WINDOWS {
                let w = PreviewWindow {
                    soc,
                    accels: accels[..n].to_vec(),
                };
                let grid = SocGrid::from_nodes(nmpc_reachable_grid(&w, v, &cfg, &model).unwrap()).unwrap();
                let plan = solve_on_grid(&w, v, &cfg, &model, &grid).unwrap();
                let (cost, _) = nmpc_brute_force(&w, v, &cfg, &model).unwrap().unwrap();
                assert!(
                    (plan.cost - cost).abs() <= 1e-9,
                    "N={n} u={u_nodes} soc={soc}: solver {} vs enumeration {cost}",
                    plan.cost
                );
            }
        }
    }
}

#[test]
fn coarse_grid_plan_is_never_cheaper_than_enumeration() {
    // on a coarse uniform grid the plan is still a real sequence, so its
    // true cost can only be at or above the enumerated optimum
    let model = VehicleModel::reference();
    let cfg = NmpcConfig {
        soc_nodes: 5,
        ..nmpc_cfg(3, 5)
    };
    for &(soc, v, accels) in WINDOWS {
        let w = PreviewWindow {
            soc,
            accels: accels.to_vec(),
        };
        let plan = solve_on_grid(&w, v, &cfg, &model, &cfg.soc_grid().unwrap()).unwrap();
        let (best, _) = nmpc_brute_force(&w, v, &cfg, &model).unwrap().unwrap();
        assert!(plan.cost >= best - 1e-12, "{} < {best}", plan.cost);
    }
}

fn toy_cycles() -> Vec<DriveCycle> {
    [
        vec![0.0, 1.0, 2.0],
        vec![0.0, 0.0, 1.0, 2.0],
        vec![0.0, 0.0, 0.0, 1.0, 2.0],
        vec![3.0, 4.0, 2.0],
    ]
    .into_iter()
    .enumerate()
    .map(|(i, v)| DriveCycle::from_speeds(format!("toy{i}"), 1.0, v).unwrap())
    .collect()
}

#[test]
fn dp_equals_path_enumeration() {
    let model = VehicleModel::reference();
    for cycle in toy_cycles() {
        for soc0 in [0.5, 0.6, 0.7] {
            let base = DpConfig {
                u_nodes: 2,
                ..DpConfig::default()
            };
            let nodes = dp_reachable_grid(&cycle, &model, &base, soc0).unwrap();
            assert!(nodes.len() <= 5, "{}: {} nodes", cycle.name, nodes.len());
            let i0 = nodes.iter().position(|&s| s == soc0).unwrap();
            let cfg = DpConfig {
                grid: Some(nodes),
                ..base
            };
            let table = solve_dp(&cycle, &model, &cfg).unwrap();
            let (cost, _) = dp_brute_force(&cycle, &model, &cfg, soc0).unwrap().unwrap();
            assert!(
                (table.values[0][i0] - cost).abs() <= 1e-12,
                "{} from {soc0}: dp {} vs enumeration {cost}",
                cycle.name,
                table.values[0][i0]
            );
        }
    }
}

#[test]
fn backprop_matches_central_differences() {
    let net = NeuralPolicy::random(&[4, 5, 5, 3, 3], 17).unwrap();
    for (k, x) in [[0.3, -0.2, 0.9, -0.7], [-1.0, 1.0, 0.0, 0.5], [0.05, 0.1, -0.4, 0.8]]
        .iter()
        .enumerate()
    {
        let exact = jacobian(&net, x).unwrap();
        let fd = finite_difference_jacobian(&net, x, 1e-6).unwrap();
        let num: f64 = exact.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den <= 1e-4, "input {k}: relative error {}", num / den);
    }
}

#[test]
fn approximation_error_agrees_with_training_log() {
    let inputs: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let t = i as f64 / 200.0;
            vec![0.5 + 0.2 * t, (9.0 * t).sin(), (4.0 * t).cos()]
        })
        .collect();
    let targets: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            vec![
                (0.5 + 0.45 * x[1] * x[2]).clamp(0.0, 1.0),
                (x[0] + 0.2 * x[1]).clamp(0.0, 1.0),
            ]
        })
        .collect();
    let data = Dataset::new(2, inputs, targets, 3).unwrap();
    let net = NeuralPolicy::random(&[3, 6, 2], 5).unwrap();
    let cfg = LmConfig {
        epochs: 30,
        ..LmConfig::default()
    };
    let (trained, log) = train_lm(&net, &data, &cfg).unwrap();
    let best = log.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
    let val = approximation_error(&trained, &data, Split::Val).unwrap();
    assert!((val.mse - best).abs() <= 1e-12, "{} vs {best}", val.mse);
}
