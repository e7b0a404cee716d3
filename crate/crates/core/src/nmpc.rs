//! Receding-horizon torque-split controller.
//!
//! Each call minimizes, over a gridded split ratio, the horizon sum of
//! `fuel + lambda(soc) * soc_depletion` subject to the SOC dynamics, with SOC
//! bounds enforced by a soft quadratic penalty. The horizon problem is solved
//! by backward DP over SOC nodes with linear value interpolation, then the
//! plan is rolled forward from the actual SOC (re-minimizing at every step).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cycles::{preview, DriveCycle, PreviewWindow};
use crate::dp::{candidates, Candidate, LambdaFit};
use crate::error::{Error, Result};
use crate::grid::{u_levels, SocGrid};
use crate::powertrain::{Lookup, ShaftState, VehicleModel, SOC_BOUND_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaShape {
    /// `lambda0 + k_a * (soc - soc_ref)^2`
    #[default]
    Quadratic,
    /// `lambda0 + k_a * (soc_ref - soc)`
    SignedLinear,
    /// Piecewise-linear lookup over SOC (`lookup` must be set).
    Lookup,
}

/// Equivalence factor pricing SOC depletion in kg of fuel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceFactor {
    pub lambda0: f64,
    pub k_a: f64,
    pub soc_ref: f64,
    #[serde(default)]
    pub shape: LambdaShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookup: Option<Lookup>,
}

/// 0.25 kg per unit SOC around 0.6; a placeholder until a DP fit exists.
impl Default for EquivalenceFactor {
    fn default() -> Self {
        Self::constant(0.25, 0.6)
    }
}

impl EquivalenceFactor {
    pub fn constant(lambda0: f64, soc_ref: f64) -> Self {
        Self {
            lambda0,
            k_a: 0.0,
            soc_ref,
            shape: LambdaShape::Quadratic,
            lookup: None,
        }
    }

    pub fn from_fit(fit: &LambdaFit) -> Self {
        Self {
            lambda0: fit.lambda0,
            k_a: fit.k_a,
            soc_ref: fit.soc_ref,
            shape: LambdaShape::Quadratic,
            lookup: None,
        }
    }

    pub fn eval(&self, soc: f64) -> f64 {
        match self.shape {
            LambdaShape::Quadratic => self.lambda0 + self.k_a * (soc - self.soc_ref).powi(2),
            LambdaShape::SignedLinear => self.lambda0 + self.k_a * (self.soc_ref - soc),
            LambdaShape::Lookup => self.lookup.as_ref().map_or(self.lambda0, |l| l.eval(soc)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub horizon: usize,
    /// Sampling time (s).
    pub dt: f64,
    pub u_nodes: usize,
    pub soc_nodes: usize,
    pub soc_min: f64,
    pub soc_max: f64,
    /// kg per unit SOC squared beyond the bounds.
    pub bound_penalty: f64,
    pub lambda: EquivalenceFactor,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 1.0,
            u_nodes: 101,
            soc_nodes: 41,
            soc_min: 0.4,
            soc_max: 0.8,
            bound_penalty: 1000.0,
            lambda: EquivalenceFactor::default(),
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.u_nodes < 2 {
            return Err(Error::InvalidConfig("u grid needs at least 2 levels".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("sampling time must be positive".into()));
        }
        if !(0.0 < self.soc_min && self.soc_min < self.soc_max && self.soc_max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "soc bounds ({}, {}) invalid",
                self.soc_min, self.soc_max
            )));
        }
        if self.lambda.shape == LambdaShape::Lookup && self.lambda.lookup.is_none() {
            return Err(Error::InvalidConfig("lookup lambda shape needs a lookup table".into()));
        }
        Ok(())
    }

    pub fn soc_grid(&self) -> Result<SocGrid> {
        SocGrid::uniform(self.soc_min, self.soc_max, self.soc_nodes)
    }

    /// Soft bound cost of ending a step at `soc`.
    pub fn penalty(&self, soc: f64) -> f64 {
        let excess = if soc < self.soc_min {
            self.soc_min - soc
        } else if soc > self.soc_max {
            soc - self.soc_max
        } else {
            0.0
        };
        self.bound_penalty * excess * excess
    }
}

pub fn lambda_of(soc: f64, cfg: &NmpcConfig) -> f64 {
    cfg.lambda.eval(soc)
}

/// Horizon plan returned by one NMPC solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    pub controls: Vec<f64>,
    /// `horizon + 1` states starting at the current SOC.
    pub predicted_soc: Vec<f64>,
    /// Equivalent fuel over the horizon (kg), penalties included.
    pub cost: f64,
    /// Wall-clock solve time (s).
    pub solve_time: f64,
    /// Some predicted SOC left the bounds (soft constraint active).
    pub soft_violation: bool,
}

/// Stage cost and successor SOC of one candidate, `None` if the battery
/// cannot deliver the power.
fn stage(
    cfg: &NmpcConfig,
    model: &VehicleModel,
    soc: f64,
    lambda: f64,
    c: &Candidate,
    offset: f64,
) -> Option<(f64, f64)> {
    let next = model.battery_at(soc).next_soc(c.batt_power, cfg.dt)?;
    Some((c.fuel + lambda * (soc - next) + cfg.penalty(next) + offset, next))
}

/// Equivalent fuel of one step at split `u`; infinite when infeasible.
pub fn stage_cost(u: f64, shaft: &ShaftState, soc: f64, cfg: &NmpcConfig, model: &VehicleModel) -> f64 {
    let c = candidates(model, shaft, &[u], cfg.dt);
    match c[0] {
        Some(c) => stage(cfg, model, soc, lambda_of(soc, cfg), &c, 0.0).map_or(f64::INFINITY, |s| s.0),
        None => f64::INFINITY,
    }
}

/// Shaft states over the horizon, speeds integrated from `v_now` with the
/// previewed accelerations.
pub fn horizon_shafts(accels: &[f64], v_now: f64, dt: f64, model: &VehicleModel) -> Vec<ShaftState> {
    let mut v = v_now;
    accels
        .iter()
        .map(|&a| {
            let s = model.demand_from_speed(v, a);
            v = (v + a * dt).max(0.0);
            s
        })
        .collect()
}

pub fn solve(window: &PreviewWindow, v_now: f64, cfg: &NmpcConfig, model: &VehicleModel) -> Result<ControlPlan> {
    let grid = cfg.soc_grid()?;
    solve_inner(window, v_now, cfg, model, &grid, 0.0)
}

/// Same as [`solve`] but on caller-supplied SOC nodes.
pub fn solve_on_grid(
    window: &PreviewWindow,
    v_now: f64,
    cfg: &NmpcConfig,
    model: &VehicleModel,
    grid: &SocGrid,
) -> Result<ControlPlan> {
    solve_inner(window, v_now, cfg, model, grid, 0.0)
}

fn solve_inner(
    window: &PreviewWindow,
    v_now: f64,
    cfg: &NmpcConfig,
    model: &VehicleModel,
    grid: &SocGrid,
    offset: f64,
) -> Result<ControlPlan> {
    let started = Instant::now();
    cfg.validate()?;
    let n = cfg.horizon;
    if window.horizon() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            found: window.horizon(),
        });
    }
    let levels = u_levels(cfg.u_nodes)?;
    let shafts = horizon_shafts(&window.accels, v_now, cfg.dt, model);
    let cands: Vec<Vec<Option<Candidate>>> = shafts.iter().map(|s| candidates(model, s, &levels, cfg.dt)).collect();

    // values[k] over the nodes for k = 1..=n; values[n] is zero
    let g = grid.len();
    let mut values = vec![vec![0.0; g]; n + 1];
    for k in (1..n).rev() {
        let (head, tail) = values.split_at_mut(k + 1);
        let next = &tail[0];
        for (i, &soc) in grid.nodes().iter().enumerate() {
            head[k][i] = best(cfg, model, grid, &cands[k], next, soc, offset).map_or(f64::INFINITY, |b| b.0);
        }
    }

    let mut soc = window.soc;
    let mut controls = Vec::with_capacity(n);
    let mut predicted_soc = Vec::with_capacity(n + 1);
    predicted_soc.push(soc);
    let mut cost = 0.0;
    for k in 0..n {
        let (_, u, stage_cost, next) =
            best(cfg, model, grid, &cands[k], &values[k + 1], soc, offset).ok_or(Error::Infeasible { step: k })?;
        controls.push(u);
        cost += stage_cost;
        soc = next;
        predicted_soc.push(soc);
    }
    let soft_violation = predicted_soc
        .iter()
        .any(|&s| s < cfg.soc_min - SOC_BOUND_EPS || s > cfg.soc_max + SOC_BOUND_EPS);
    Ok(ControlPlan {
        controls,
        predicted_soc,
        cost,
        solve_time: started.elapsed().as_secs_f64(),
        soft_violation,
    })
}

/// Minimizer of `stage + V_next(soc')`: (total, u, stage, soc').
fn best(
    cfg: &NmpcConfig,
    model: &VehicleModel,
    grid: &SocGrid,
    cands: &[Option<Candidate>],
    next: &[f64],
    soc: f64,
    offset: f64,
) -> Option<(f64, f64, f64, f64)> {
    let lambda = lambda_of(soc, cfg);
    let battery = model.battery_at(soc);
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for c in cands.iter().flatten() {
        let Some(soc_next) = battery.next_soc(c.batt_power, cfg.dt) else {
            continue;
        };
        let st = c.fuel + lambda * (soc - soc_next) + cfg.penalty(soc_next) + offset;
        let total = st + grid.interp(next, soc_next);
        if total.is_finite() && best.is_none_or(|b| total < b.0) {
            best = Some((total, c.u, st, soc_next));
        }
    }
    best
}

/// One receding-horizon step: preview, solve, apply the first control.
pub fn step_controller(
    cycle: &DriveCycle,
    k: usize,
    soc: f64,
    cfg: &NmpcConfig,
    model: &VehicleModel,
) -> Result<(f64, ControlPlan)> {
    if k >= cycle.steps() {
        return Err(Error::InvalidConfig(format!(
            "step {k} outside cycle with {} steps",
            cycle.steps()
        )));
    }
    let started = Instant::now();
    let window = preview(cycle, k, cfg.horizon, soc);
    let mut plan = solve(&window, cycle.speeds[k], cfg, model)?;
    plan.solve_time = started.elapsed().as_secs_f64();
    Ok((plan.controls[0], plan))
}
