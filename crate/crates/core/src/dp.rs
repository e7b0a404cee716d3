//! Full-cycle backward dynamic programming over an SOC grid, the co-state
//! `dJ/dSOC` it implies, and the quadratic equivalence-factor fit.
//!
//! Stage cost is fuel mass per step. Infeasible transitions (battery cannot
//! deliver the power, torque outside the envelope, SOC leaving its bounds)
//! cost `+inf`. The terminal cost is `w_T * (soc - soc_ref)^2`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::DriveCycle;
use crate::error::{Error, Result};
use crate::grid::{u_levels, SocGrid};
use crate::powertrain::{Actuation, ShaftState, VehicleModel, SOC_BOUND_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub soc_nodes: usize,
    pub u_nodes: usize,
    /// kg per unit SOC squared.
    pub terminal_weight: f64,
    pub soc_ref: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Explicit SOC nodes; overrides `soc_nodes` when set.
    pub grid: Option<Vec<f64>>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            soc_nodes: 201,
            u_nodes: 101,
            terminal_weight: 10.0,
            soc_ref: 0.6,
            soc_min: 0.4,
            soc_max: 0.8,
            grid: None,
        }
    }
}

impl DpConfig {
    pub fn soc_grid(&self) -> Result<SocGrid> {
        if !(0.0 < self.soc_min && self.soc_min < self.soc_max && self.soc_max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dp soc bounds ({}, {}) invalid",
                self.soc_min, self.soc_max
            )));
        }
        match &self.grid {
            Some(nodes) => {
                let g = SocGrid::from_nodes(nodes.clone())?;
                let (lo, hi) = (g.nodes()[0], g.nodes()[g.len() - 1]);
                if lo < self.soc_min - SOC_BOUND_EPS || hi > self.soc_max + SOC_BOUND_EPS {
                    return Err(Error::InvalidConfig("explicit DP grid leaves the SOC bounds".into()));
                }
                Ok(g)
            }
            None => SocGrid::uniform(self.soc_min, self.soc_max, self.soc_nodes),
        }
    }

    fn in_bounds(&self, soc: f64) -> bool {
        soc >= self.soc_min - SOC_BOUND_EPS && soc <= self.soc_max + SOC_BOUND_EPS
    }
}

/// Fuel per step and battery power of one candidate control, or `None` when
/// the operating point is outside the envelope.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub u: f64,
    pub fuel: f64,
    pub batt_power: f64,
}

/// Candidate controls for a given shaft state. Without positive demand the
/// split is irrelevant, so only `u = 0` is offered.
pub(crate) fn candidates(model: &VehicleModel, shaft: &ShaftState, levels: &[f64], dt: f64) -> Vec<Option<Candidate>> {
    levels
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            if shaft.demand_torque <= 0.0 && j > 0 {
                return None;
            }
            model.operate(shaft, Actuation::split(u)).ok().map(|op| Candidate {
                u: op.u,
                fuel: op.fuel_rate * dt,
                batt_power: op.batt_power,
            })
        })
        .collect()
}

pub(crate) fn cycle_shafts(cycle: &DriveCycle, model: &VehicleModel) -> Vec<ShaftState> {
    (0..cycle.steps())
        .map(|t| model.demand_from_speed(cycle.speeds[t], cycle.acceleration(t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostToGoTable {
    pub soc_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub dt: f64,
    pub time_steps: usize,
    pub soc_ref: f64,
    pub terminal_weight: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// `values[t][i]`, kg; `t = 0..=time_steps`. Infinite where infeasible.
    #[serde(with = "nullable")]
    pub values: Vec<Vec<f64>>,
    /// `dJ/dSOC` at the nodes, kg per unit SOC. NaN where undefined.
    #[serde(with = "nullable")]
    pub costate: Vec<Vec<f64>>,
    /// Argmin split ratio, `t = 0..time_steps`. NaN where infeasible.
    #[serde(with = "nullable")]
    pub policy: Vec<Vec<f64>>,
}

/// Backward DP over the whole cycle.
pub fn solve_dp(cycle: &DriveCycle, model: &VehicleModel, cfg: &DpConfig) -> Result<CostToGoTable> {
    let grid = cfg.soc_grid()?;
    let levels = u_levels(cfg.u_nodes)?;
    let dt = cycle.dt();
    let steps = cycle.steps();
    let shafts = cycle_shafts(cycle, model);

    let terminal: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|s| cfg.terminal_weight * (s - cfg.soc_ref).powi(2))
        .collect();
    let mut values = vec![Vec::new(); steps + 1];
    let mut policy = vec![Vec::new(); steps];
    values[steps] = terminal;

    for t in (0..steps).rev() {
        let cands = candidates(model, &shafts[t], &levels, dt);
        let next = &values[t + 1];
        let (v, p): (Vec<f64>, Vec<f64>) = grid
            .nodes()
            .par_iter()
            .map(|&soc| best_control(model, cfg, &grid, &cands, next, soc, dt))
            .map(|best| best.map_or((f64::INFINITY, f64::NAN), |(c, u, _)| (c, u)))
            .unzip();
        if v.iter().all(|x| x.is_infinite()) {
            return Err(Error::AllInfeasible { step: t });
        }
        values[t] = v;
        policy[t] = p;
    }

    let mut table = CostToGoTable {
        soc_grid: grid.nodes().to_vec(),
        u_grid: levels,
        dt,
        time_steps: steps,
        soc_ref: cfg.soc_ref,
        terminal_weight: cfg.terminal_weight,
        soc_min: cfg.soc_min,
        soc_max: cfg.soc_max,
        values,
        costate: Vec::new(),
        policy,
    };
    table.costate = costate(&table);
    Ok(table)
}

/// `min_u stage(u) + J_next(soc')` at `soc`; returns (cost, u, soc').
fn best_control(
    model: &VehicleModel,
    cfg: &DpConfig,
    grid: &SocGrid,
    cands: &[Option<Candidate>],
    next: &[f64],
    soc: f64,
    dt: f64,
) -> Option<(f64, f64, f64)> {
    let battery = model.battery_at(soc);
    let mut best: Option<(f64, f64, f64)> = None;
    for c in cands.iter().flatten() {
        let Some(soc_next) = battery.next_soc(c.batt_power, dt) else {
            continue;
        };
        if !cfg.in_bounds(soc_next) {
            continue;
        }
        let total = c.fuel + grid.interp(next, soc_next);
        if total.is_finite() && best.is_none_or(|(b, _, _)| total < b) {
            best = Some((total, c.u, soc_next));
        }
    }
    best
}

/// Finite-difference `dJ/dSOC` at every node: central in the interior,
/// one-sided at the edges or next to an infeasible node, NaN where no finite
/// neighbour exists.
pub fn costate(table: &CostToGoTable) -> Vec<Vec<f64>> {
    table
        .values
        .iter()
        .map(|row| costate_row(&table.soc_grid, row))
        .collect()
}

pub(crate) fn costate_row(nodes: &[f64], row: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let ok = |i: usize| row[i].is_finite();
    (0..n)
        .map(|i| {
            if !ok(i) || n < 2 {
                return f64::NAN;
            }
            let left = i > 0 && ok(i - 1);
            let right = i + 1 < n && ok(i + 1);
            match (left, right) {
                (true, true) => (row[i + 1] - row[i - 1]) / (nodes[i + 1] - nodes[i - 1]),
                (false, true) => (row[i + 1] - row[i]) / (nodes[i + 1] - nodes[i]),
                (true, false) => (row[i] - row[i - 1]) / (nodes[i] - nodes[i - 1]),
                (false, false) => f64::NAN,
            }
        })
        .collect()
}

/// Forward rollout of the DP policy (re-minimized at the actual SOC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTrajectory {
    /// `time_steps + 1` states.
    pub soc: Vec<f64>,
    pub controls: Vec<f64>,
    pub fuel: f64,
}

pub fn rollout(table: &CostToGoTable, cycle: &DriveCycle, model: &VehicleModel, soc_init: f64) -> Result<DpTrajectory> {
    if cycle.steps() != table.time_steps {
        return Err(Error::ShapeMismatch {
            expected: table.time_steps,
            found: cycle.steps(),
        });
    }
    let grid = SocGrid::from_nodes(table.soc_grid.clone())?;
    let cfg = DpConfig {
        soc_min: table.soc_min,
        soc_max: table.soc_max,
        ..DpConfig::default()
    };
    let shafts = cycle_shafts(cycle, model);
    let mut soc = vec![soc_init];
    let mut controls = Vec::with_capacity(table.time_steps);
    let mut fuel = 0.0;
    for (t, shaft) in shafts.iter().enumerate() {
        let cands = candidates(model, shaft, &table.u_grid, table.dt);
        let s = soc[t];
        let (_, u, next) = best_control(model, &cfg, &grid, &cands, &table.values[t + 1], s, table.dt)
            .ok_or(Error::AllInfeasible { step: t })?;
        let c = cands
            .iter()
            .flatten()
            .find(|c| c.u == u)
            .expect("chosen control is a candidate");
        fuel += c.fuel;
        controls.push(u);
        soc.push(next);
    }
    Ok(DpTrajectory { soc, controls, fuel })
}

/// Co-state sampled along a trajectory: `(soc_t, dJ_t/dSOC at soc_t)` for
/// `t = 0..time_steps`. Steps where the co-state is undefined are skipped.
pub fn costate_along(table: &CostToGoTable, soc_traj: &[f64]) -> Vec<(f64, f64)> {
    let grid = SocGrid::from_nodes(table.soc_grid.clone()).expect("table grid is valid");
    soc_traj
        .iter()
        .take(table.time_steps)
        .enumerate()
        .filter_map(|(t, &s)| grid.interp_sparse(&table.costate[t], s).map(|l| (s, l)))
        .collect()
}

/// Time average of the co-state along `soc_traj`.
pub fn average_costate(table: &CostToGoTable, soc_traj: &[f64]) -> Result<f64> {
    let samples = costate_along(table, soc_traj);
    if samples.is_empty() {
        return Err(Error::Empty("co-state samples along trajectory"));
    }
    Ok(samples.iter().map(|p| p.1).sum::<f64>() / samples.len() as f64)
}

/// Equivalence-factor samples `(soc_t, -dJ_t/dSOC)`. The sign flip turns the
/// co-state into the positive price of SOC depletion the NMPC objective uses.
pub fn equivalence_samples(table: &CostToGoTable, soc_traj: &[f64]) -> Vec<(f64, f64)> {
    costate_along(table, soc_traj)
        .into_iter()
        .map(|(s, l)| (s, -l))
        .collect()
}

/// Per-node time average of `-dJ/dSOC` over the cycle (the raw lookup curve).
pub fn time_averaged_curve(table: &CostToGoTable) -> Vec<(f64, f64)> {
    table
        .soc_grid
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| {
            let vals: Vec<f64> = table.costate[..table.time_steps]
                .iter()
                .map(|row| row[i])
                .filter(|v| v.is_finite())
                .collect();
            (!vals.is_empty()).then(|| (s, -vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

/// `lambda(soc) ~ lambda0 + k_a * (soc - soc_ref)^2`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda0: f64,
    pub k_a: f64,
    pub soc_ref: f64,
    pub residual_rms: f64,
    pub samples: usize,
    /// True when all samples share one `(soc - soc_ref)^2` value, so `k_a`
    /// could not be identified and was set to zero.
    pub degenerate: bool,
}

impl LambdaFit {
    pub fn eval(&self, soc: f64) -> f64 {
        self.lambda0 + self.k_a * (soc - self.soc_ref).powi(2)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

/// Least squares on `lambda ~ lambda0 + k_a * (soc - soc_ref)^2` via the 2x2
/// normal equations.
pub fn fit_lambda(samples: &[(f64, f64)], soc_ref: f64) -> Result<LambdaFit> {
    if samples.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "lambda fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(s, l)| !s.is_finite() || !l.is_finite()) {
        return Err(Error::InvalidConfig("lambda fit samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|(s, _)| (s - soc_ref).powi(2)).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, l)| *l).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();

    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let degenerate = sxx <= (1e-12 * scale).powi(2) * n;
    let (lambda0, k_a) = if degenerate {
        (y_mean, 0.0)
    } else {
        let k = sxy / sxx;
        (y_mean - k * x_mean, k)
    };
    if !(lambda0 > 0.0) {
        return Err(Error::NonpositiveLambda(lambda0));
    }
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - lambda0 - k_a * x).powi(2)).sum();
    Ok(LambdaFit {
        lambda0,
        k_a,
        soc_ref,
        residual_rms: (sse / n).sqrt(),
        samples: samples.len(),
        degenerate,
    })
}

impl CostToGoTable {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    /// Bellman residual at every finite node, recomputed from the stored table.
    pub fn max_bellman_residual(&self, cycle: &DriveCycle, model: &VehicleModel) -> Result<f64> {
        let grid = SocGrid::from_nodes(self.soc_grid.clone())?;
        let cfg = DpConfig {
            soc_min: self.soc_min,
            soc_max: self.soc_max,
            ..DpConfig::default()
        };
        let shafts = cycle_shafts(cycle, model);
        let mut worst = 0.0f64;
        for (t, shaft) in shafts.iter().enumerate().take(self.time_steps) {
            let cands = candidates(model, shaft, &self.u_grid, self.dt);
            for (i, &s) in self.soc_grid.iter().enumerate() {
                let stored = self.values[t][i];
                let fresh = best_control(model, &cfg, &grid, &cands, &self.values[t + 1], s, self.dt)
                    .map_or(f64::INFINITY, |b| b.0);
                if stored.is_finite() || fresh.is_finite() {
                    worst = worst.max((stored - fresh).abs());
                }
            }
        }
        Ok(worst)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// JSON has no inf/NaN, so non-finite matrix entries are written as the
/// string markers "inf", "-inf" and "nan".
mod nullable {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Cell {
        Num(f64),
        Tag(String),
    }

    fn encode(x: f64) -> Cell {
        if x.is_finite() {
            Cell::Num(x)
        } else if x.is_nan() {
            Cell::Tag("nan".into())
        } else if x > 0.0 {
            Cell::Tag("inf".into())
        } else {
            Cell::Tag("-inf".into())
        }
    }

    fn decode(c: Cell) -> Result<f64, String> {
        match c {
            Cell::Num(x) => Ok(x),
            Cell::Tag(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(format!("unexpected marker {other:?}")),
            },
        }
    }

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Cell>> = m.iter().map(|r| r.iter().map(|&x| encode(x)).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows: Vec<Vec<Cell>> = Vec::deserialize(d)?;
        rows.into_iter()
            .map(|r| r.into_iter().map(decode).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powertrain::Lookup;

    fn standstill(steps: usize) -> DriveCycle {
        DriveCycle::from_speeds("stop", 1.0, vec![0.0; steps + 1]).unwrap()
    }

    #[test]
    fn demand_free_cycle_costs_idle_fuel() {
        let model = VehicleModel::reference();
        let cfg = DpConfig {
            terminal_weight: 0.0,
            soc_nodes: 11,
            u_nodes: 5,
            ..DpConfig::default()
        };
        let table = solve_dp(&standstill(1), &model, &cfg).unwrap();
        let idle = model.fuel_rate(0.0, 0.0).unwrap();
        assert!(table.values[0].iter().all(|&j| j == idle));
        assert!(table.values[1].iter().all(|&j| j == 0.0));
        assert!(table.policy[0].iter().all(|&u| u == 0.0));
    }

    #[test]
    fn terminal_row_is_exact() {
        let model = VehicleModel::reference();
        let cfg = DpConfig {
            soc_nodes: 21,
            u_nodes: 5,
            ..DpConfig::default()
        };
        let cycle = DriveCycle::from_speeds("c", 1.0, vec![0.0, 1.0, 2.0, 2.0]).unwrap();
        let table = solve_dp(&cycle, &model, &cfg).unwrap();
        for (s, j) in table.soc_grid.iter().zip(&table.values[3]) {
            assert_eq!(*j, 10.0 * (s - 0.6).powi(2));
        }
        assert_eq!(table.max_bellman_residual(&cycle, &model).unwrap(), 0.0);
        assert!(table.values.iter().flatten().all(|&j| j >= 0.0));
    }

    #[test]
    fn infeasible_everywhere_is_reported() {
        let mut model = VehicleModel::reference();
        // battery cannot deliver anything and the engine cannot carry the load
        model.resistance_table = Lookup::constant(100.0);
        model.torque_limits.engine_max = Lookup::constant(1.0);
        let cycle = DriveCycle::from_speeds("c", 1.0, vec![10.0, 11.0]).unwrap();
        let cfg = DpConfig {
            soc_nodes: 5,
            u_nodes: 3,
            ..DpConfig::default()
        };
        assert!(matches!(
            solve_dp(&cycle, &model, &cfg),
            Err(Error::AllInfeasible { step: 0 })
        ));
    }

    #[test]
    fn costate_flat_and_linear() {
        let nodes: Vec<f64> = (0..11).map(|i| 0.4 + 0.04 * i as f64).collect();
        let flat = costate_row(&nodes, &[3.0; 11]);
        assert!(flat.iter().all(|&l| l == 0.0));
        let lin: Vec<f64> = nodes.iter().map(|s| 2.0 * s).collect();
        assert!(costate_row(&nodes, &lin).iter().all(|l| (l - 2.0).abs() < 1e-12));
    }

    #[test]
    fn costate_quadratic_is_second_order() {
        // central differences of a quadratic are exact at interior nodes
        let h = 0.01;
        let nodes: Vec<f64> = (0..41).map(|i| 0.4 + h * i as f64).collect();
        let row: Vec<f64> = nodes.iter().map(|s| (s - 0.6).powi(2)).collect();
        let l = costate_row(&nodes, &row);
        for i in 1..40 {
            assert!((l[i] - 2.0 * (nodes[i] - 0.6)).abs() <= h * h, "{i}");
        }
        // edges are one-sided: first order, error exactly h
        assert!((l[0] - 2.0 * (nodes[0] - 0.6)).abs() <= h + 1e-12);
    }

    #[test]
    fn costate_skips_infinite_nodes() {
        let nodes = [0.1, 0.2, 0.3, 0.4];
        let row = [f64::INFINITY, 1.0, 2.0, f64::INFINITY];
        let l = costate_row(&nodes, &row);
        assert!(l[0].is_nan() && l[3].is_nan());
        assert!((l[1] - 10.0).abs() < 1e-12 && (l[2] - 10.0).abs() < 1e-12);
    }

    fn synthetic_table(costate_rows: Vec<Vec<f64>>) -> CostToGoTable {
        let steps = costate_rows.len();
        let mut cs = costate_rows;
        cs.push(vec![0.0; 3]);
        CostToGoTable {
            soc_grid: vec![0.5, 0.6, 0.7],
            u_grid: vec![0.0, 1.0],
            dt: 1.0,
            time_steps: steps,
            soc_ref: 0.6,
            terminal_weight: 0.0,
            soc_min: 0.4,
            soc_max: 0.8,
            values: vec![vec![0.0; 3]; steps + 1],
            costate: cs,
            policy: vec![vec![0.0; 3]; steps],
        }
    }

    #[test]
    fn average_costate_examples() {
        let t = synthetic_table(vec![vec![3.0; 3]; 4]);
        assert_eq!(average_costate(&t, &[0.6; 5]).unwrap(), 3.0);

        let rows = (0..4).map(|k| vec![if k % 2 == 0 { 2.0 } else { 4.0 }; 3]).collect();
        let t = synthetic_table(rows);
        assert_eq!(average_costate(&t, &[0.55, 0.6, 0.65, 0.7, 0.7]).unwrap(), 3.0);

        // two steps, values interpolated by hand:
        // t=0 at soc 0.55 between 1 and 3 -> 2; t=1 at soc 0.65 between 5 and 9 -> 7
        let t = synthetic_table(vec![vec![1.0, 3.0, 0.0], vec![0.0, 5.0, 9.0]]);
        let avg = average_costate(&t, &[0.55, 0.65, 0.6]).unwrap();
        assert!((avg - 4.5).abs() < 1e-12, "{avg}");
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let samples: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let s = 0.5 + 0.025 * i as f64;
                (s, 5.0 + 100.0 * (s - 0.6).powi(2))
            })
            .collect();
        let f = fit_lambda(&samples, 0.6).unwrap();
        assert!((f.lambda0 - 5.0).abs() < 1e-10);
        assert!((f.k_a - 100.0).abs() < 1e-7);
        assert!(f.residual_rms < 1e-10);
        assert!(!f.degenerate);
        assert!((f.eval(0.7) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn fit_degenerate_when_soc_constant() {
        let f = fit_lambda(&[(0.6, 7.0), (0.6, 7.0), (0.6, 7.0)], 0.6).unwrap();
        assert_eq!((f.lambda0, f.k_a), (7.0, 0.0));
        assert!(f.degenerate);
    }

    #[test]
    fn fit_rejects_nonpositive_and_tiny_inputs() {
        assert!(matches!(
            fit_lambda(&[(0.6, -1.0), (0.6, -1.0), (0.6, -1.0)], 0.6),
            Err(Error::NonpositiveLambda(_))
        ));
        assert!(fit_lambda(&[(0.6, 1.0), (0.7, 1.0)], 0.6).is_err());
    }

    #[test]
    fn table_json_round_trip_keeps_infinities() {
        let mut t = synthetic_table(vec![vec![1.0, f64::NAN, 2.0]]);
        t.values[0][0] = f64::INFINITY;
        let text = serde_json::to_string(&t).unwrap();
        let back: CostToGoTable = serde_json::from_str(&text).unwrap();
        assert_eq!(back.values[0][0], f64::INFINITY);
        assert!(back.costate[0][1].is_nan());
        assert_eq!(back.costate[0][2], 2.0);
    }
}
