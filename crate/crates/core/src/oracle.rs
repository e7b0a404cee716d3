//! Exhaustive reference solvers for tiny problems.
//!
//! Everything here enumerates full control sequences, so the cost grows as
//! `levels^steps`. They exist to check the DP recursions and the network
//! gradients, not to control anything.

use crate::cycles::{DriveCycle, PreviewWindow};
use crate::dnn::NeuralPolicy;
use crate::dp::{cycle_shafts, DpConfig};
use crate::error::Result;
use crate::grid::u_levels;
use crate::nmpc::{horizon_shafts, lambda_of, NmpcConfig};
use crate::powertrain::{Actuation, ShaftState, VehicleModel, SOC_BOUND_EPS};

/// Fuel mass and successor SOC of one step, `None` if infeasible.
fn transition(model: &VehicleModel, shaft: &ShaftState, u: f64, soc: f64, dt: f64) -> Option<(f64, f64)> {
    let op = model.operate(shaft, Actuation::split(u)).ok()?;
    let next = model.battery_at(soc).next_soc(op.batt_power, dt)?;
    Some((op.fuel_rate * dt, next))
}

fn sort_dedup(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup();
}

/// Every SOC reachable from `start` over `shafts`, start included, sorted
/// and without duplicates. Successors rejected by `keep` are dropped.
pub fn reachable_socs(
    start: f64,
    shafts: &[ShaftState],
    levels: &[f64],
    model: &VehicleModel,
    dt: f64,
    keep: impl Fn(f64) -> bool,
) -> Vec<f64> {
    let mut frontier = vec![start];
    let mut all = vec![start];
    for shaft in shafts {
        let mut next: Vec<f64> = frontier
            .iter()
            .flat_map(|&s| levels.iter().filter_map(move |&u| transition(model, shaft, u, s, dt)))
            .map(|(_, n)| n)
            .filter(|&n| keep(n))
            .collect();
        sort_dedup(&mut next);
        all.extend(&next);
        frontier = next;
    }
    sort_dedup(&mut all);
    all
}

/// Cheapest control sequence by enumeration: `(cost, controls)`.
type StepCost<'a> = &'a dyn Fn(&ShaftState, f64, f64) -> Option<(f64, f64)>;

fn enumerate(
    shafts: &[ShaftState],
    levels: &[f64],
    soc: f64,
    step_cost: StepCost,
    terminal: &dyn Fn(f64) -> f64,
) -> Option<(f64, Vec<f64>)> {
    let Some((shaft, rest)) = shafts.split_first() else {
        return Some((terminal(soc), Vec::new()));
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &u in levels {
        let Some((cost, next)) = step_cost(shaft, u, soc) else {
            continue;
        };
        if let Some((tail, mut seq)) = enumerate(rest, levels, next, step_cost, terminal) {
            let total = cost + tail;
            if best.as_ref().is_none_or(|b| total < b.0) {
                seq.insert(0, u);
                best = Some((total, seq));
            }
        }
    }
    best
}

/// Minimum full-cycle fuel plus terminal cost from `soc0`, as the DP defines
/// it, found by trying every sequence of `cfg.u_nodes` levels.
pub fn dp_brute_force(
    cycle: &DriveCycle,
    model: &VehicleModel,
    cfg: &DpConfig,
    soc0: f64,
) -> Result<Option<(f64, Vec<f64>)>> {
    let levels = u_levels(cfg.u_nodes)?;
    let dt = cycle.dt();
    let in_bounds = |s: f64| s >= cfg.soc_min - SOC_BOUND_EPS && s <= cfg.soc_max + SOC_BOUND_EPS;
    let step =
        |shaft: &ShaftState, u: f64, soc: f64| transition(model, shaft, u, soc, dt).filter(|&(_, n)| in_bounds(n));
    let terminal = |s: f64| cfg.terminal_weight * (s - cfg.soc_ref).powi(2);
    Ok(enumerate(&cycle_shafts(cycle, model), &levels, soc0, &step, &terminal))
}

/// SOC nodes on which the interpolating DP is exact for a start at `soc0`.
pub fn dp_reachable_grid(cycle: &DriveCycle, model: &VehicleModel, cfg: &DpConfig, soc0: f64) -> Result<Vec<f64>> {
    let levels = u_levels(cfg.u_nodes)?;
    let in_bounds = |s: f64| s >= cfg.soc_min - SOC_BOUND_EPS && s <= cfg.soc_max + SOC_BOUND_EPS;
    Ok(reachable_socs(
        soc0,
        &cycle_shafts(cycle, model),
        &levels,
        model,
        cycle.dt(),
        in_bounds,
    ))
}

/// Minimum horizon cost of the NMPC objective by enumeration.
pub fn nmpc_brute_force(
    window: &PreviewWindow,
    v_now: f64,
    cfg: &NmpcConfig,
    model: &VehicleModel,
) -> Result<Option<(f64, Vec<f64>)>> {
    let levels = u_levels(cfg.u_nodes)?;
    let shafts = horizon_shafts(&window.accels, v_now, cfg.dt, model);
    let step = |shaft: &ShaftState, u: f64, soc: f64| {
        transition(model, shaft, u, soc, cfg.dt)
            .map(|(fuel, next)| (fuel + lambda_of(soc, cfg) * (soc - next) + cfg.penalty(next), next))
    };
    Ok(enumerate(&shafts, &levels, window.soc, &step, &|_| 0.0))
}

/// SOC nodes on which the horizon DP is exact for this window.
pub fn nmpc_reachable_grid(
    window: &PreviewWindow,
    v_now: f64,
    cfg: &NmpcConfig,
    model: &VehicleModel,
) -> Result<Vec<f64>> {
    let levels = u_levels(cfg.u_nodes)?;
    let shafts = horizon_shafts(&window.accels, v_now, cfg.dt, model);
    Ok(reachable_socs(window.soc, &shafts, &levels, model, cfg.dt, |_| true))
}

/// Central-difference Jacobian of the unclamped outputs, row-major
/// `outputs x params`.
pub fn finite_difference_jacobian(policy: &NeuralPolicy, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let theta = policy.params();
    let p = theta.len();
    let n_out = policy.output_width();
    let mut out = vec![0.0; n_out * p];
    let mut net = policy.clone();
    for j in 0..p {
        let mut t = theta.clone();
        t[j] = theta[j] + eps;
        net.set_params(&t)?;
        let plus = net.forward_unclamped(x)?;
        t[j] = theta[j] - eps;
        net.set_params(&t)?;
        let minus = net.forward_unclamped(x)?;
        for o in 0..n_out {
            out[o * p + j] = (plus[o] - minus[o]) / (2.0 * eps);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reachable_includes_start_and_is_sorted() {
        let m = VehicleModel::reference();
        let shafts = horizon_shafts(&[0.5, 0.5], 5.0, 1.0, &m);
        let r = reachable_socs(0.6, &shafts, &[0.0, 1.0], &m, 1.0, |_| true);
        assert!(r.contains(&0.6));
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        // engine-only keeps SOC, motor-only lowers it: two new states per step at most
        assert!(r.len() <= 1 + 2 + 4);
    }

    #[test]
    fn brute_force_single_step_matches_direct_cost() {
        let m = VehicleModel::reference();
        let cfg = NmpcConfig {
            horizon: 1,
            u_nodes: 3,
            ..NmpcConfig::default()
        };
        let w = PreviewWindow {
            soc: 0.6,
            accels: vec![0.3],
        };
        let (cost, seq) = nmpc_brute_force(&w, 8.0, &cfg, &m).unwrap().unwrap();
        let shaft = m.demand_from_speed(8.0, 0.3);
        let direct = crate::nmpc::stage_cost(seq[0], &shaft, 0.6, &cfg, &m);
        assert_eq!(cost, direct);
    }
}
