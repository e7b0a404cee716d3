//! Closed-loop simulation harness, cost metrics and timing benchmark.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{rule_actuation, RuleConfig};
use crate::cycles::{preview, DriveCycle};
use crate::dnn::{policy_control, NeuralPolicy};
use crate::error::{Error, Result};
use crate::nmpc::{solve, ControlPlan, NmpcConfig};
use crate::powertrain::{Actuation, ShaftState, VehicleModel};

/// What a controller sees at step `k`.
pub struct StepContext<'a> {
    pub cycle: &'a DriveCycle,
    pub k: usize,
    pub soc: f64,
    pub shaft: ShaftState,
    pub model: &'a VehicleModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub actuation: Actuation,
    /// Full horizon plan, for controllers that produce one.
    pub plan: Option<ControlPlan>,
}

impl Decision {
    pub fn split(u: f64) -> Self {
        Self {
            actuation: Actuation::split(u),
            plan: None,
        }
    }
}

pub trait Controller {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Decision>;
}

pub struct RuleController {
    pub cfg: RuleConfig,
}

impl Controller for RuleController {
    fn name(&self) -> &str {
        "rule"
    }

    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Decision> {
        Ok(Decision {
            actuation: rule_actuation(&ctx.shaft, ctx.soc, &self.cfg, ctx.model),
            plan: None,
        })
    }
}

pub struct NmpcController {
    pub cfg: NmpcConfig,
}

impl Controller for NmpcController {
    fn name(&self) -> &str {
        "nmpc"
    }

    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Decision> {
        let window = preview(ctx.cycle, ctx.k, self.cfg.horizon, ctx.soc);
        let plan = solve(&window, ctx.cycle.speeds[ctx.k], &self.cfg, ctx.model)?;
        Ok(Decision {
            actuation: Actuation::split(plan.controls[0]),
            plan: Some(plan),
        })
    }
}

pub struct PolicyController<'p> {
    pub policy: &'p NeuralPolicy,
}

impl Controller for PolicyController<'_> {
    fn name(&self) -> &str {
        "policy"
    }

    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Decision> {
        let n = self.policy.input_width() - 1;
        let window = preview(ctx.cycle, ctx.k, n, ctx.soc);
        let u = policy_control(self.policy, &window)?;
        // the network does not see the torque limits; saturate like an actuator would
        let u = match ctx.model.feasible_split(&ctx.shaft) {
            Some((lo, hi)) => u.clamp(lo, hi),
            None => u,
        };
        Ok(Decision::split(u))
    }
}

/// Fixed split ratio, mainly for harness checks.
pub struct ConstantController(pub f64);

impl Controller for ConstantController {
    fn name(&self) -> &str {
        "constant"
    }

    fn decide(&mut self, _ctx: &StepContext<'_>) -> Result<Decision> {
        Ok(Decision::split(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub v: f64,
    pub demand_torque: f64,
    pub speed: f64,
    pub u: f64,
    pub engine_torque: f64,
    pub motor_torque: f64,
    pub fuel_rate: f64,
    pub batt_power: f64,
    /// SOC after the step.
    pub soc: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    pub samples: usize,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self {
                min: 0.0,
                avg: 0.0,
                max: 0.0,
                samples: 0,
            };
        }
        Self {
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            avg: samples.iter().sum::<f64>() / samples.len() as f64,
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            samples: samples.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub controller: String,
    pub cycle: String,
    pub dt: f64,
    pub soc_init: f64,
    pub soc_final: f64,
    pub fuel_kg: f64,
    /// Battery energy per unit SOC (kWh), for pricing.
    pub battery_kwh: f64,
    pub timing: TimingStats,
    /// Some SOC left `[soc_min, soc_max]` during the run.
    pub bounds_exceeded: bool,
    /// Set when the run stopped early; the records cover the completed steps.
    pub aborted: Option<String>,
    pub records: Vec<StepRecord>,
}

impl SimulationResult {
    pub fn battery_energy_used_kwh(&self) -> f64 {
        self.battery_kwh * (self.soc_init - self.soc_final)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("t,v,demand_torque,speed,u,engine_torque,motor_torque,fuel_rate,batt_power,soc,solve_time\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.v,
                r.demand_torque,
                r.speed,
                r.u,
                r.engine_torque,
                r.motor_torque,
                r.fuel_rate,
                r.batt_power,
                r.soc,
                r.solve_time
            );
        }
        out
    }

    pub fn summary(&self, prices: &Prices) -> Summary {
        Summary {
            controller: self.controller.clone(),
            cycle: self.cycle.clone(),
            steps: self.records.len(),
            soc_init: self.soc_init,
            soc_final: self.soc_final,
            fuel_kg: self.fuel_kg,
            battery_energy_kwh: self.battery_energy_used_kwh(),
            money_cost: money_cost(self, prices),
            timing: self.timing,
            bounds_exceeded: self.bounds_exceeded,
            aborted: self.aborted.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controller: String,
    pub cycle: String,
    pub steps: usize,
    pub soc_init: f64,
    pub soc_final: f64,
    pub fuel_kg: f64,
    pub battery_energy_kwh: f64,
    pub money_cost: f64,
    pub timing: TimingStats,
    pub bounds_exceeded: bool,
    pub aborted: Option<String>,
}

impl Summary {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dp::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::dp::read_json(path.as_ref())
    }
}

/// Runs `controller` over the cycle from `soc_init`.
pub fn run_closed_loop(
    cycle: &DriveCycle,
    controller: &mut dyn Controller,
    model: &VehicleModel,
    soc_bounds: (f64, f64),
    soc_init: f64,
) -> Result<SimulationResult> {
    run_closed_loop_with(cycle, controller, model, soc_bounds, soc_init, |_, _| {})
}

/// [`run_closed_loop`] with an observer called after every decision.
pub fn run_closed_loop_with(
    cycle: &DriveCycle,
    controller: &mut dyn Controller,
    model: &VehicleModel,
    soc_bounds: (f64, f64),
    soc_init: f64,
    mut observe: impl FnMut(&StepContext<'_>, &Decision),
) -> Result<SimulationResult> {
    let (soc_min, soc_max) = soc_bounds;
    if !(soc_min..=soc_max).contains(&soc_init) {
        return Err(Error::InvalidConfig(format!(
            "initial SOC {soc_init} outside [{soc_min}, {soc_max}]"
        )));
    }
    let dt = cycle.dt();
    let mut soc = soc_init;
    let mut fuel = 0.0;
    let mut records = Vec::with_capacity(cycle.steps());
    let mut times = Vec::with_capacity(cycle.steps());
    let mut aborted = None;
    let mut bounds_exceeded = false;

    for k in 0..cycle.steps() {
        let v = cycle.speeds[k];
        let shaft = model.demand_from_speed(v, cycle.acceleration(k));
        let ctx = StepContext {
            cycle,
            k,
            soc,
            shaft,
            model,
        };
        let started = Instant::now();
        let decision = controller.decide(&ctx)?;
        let solve_time = started.elapsed().as_secs_f64();
        observe(&ctx, &decision);

        let op = model.operate(&shaft, decision.actuation)?;
        let next = match model.soc_step(soc, op.batt_power, dt) {
            Ok(s) => s,
            Err(e @ Error::PowerInfeasible { .. }) => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        times.push(solve_time);
        fuel += op.fuel_rate * dt;
        soc = next;
        bounds_exceeded |=
            soc < soc_min - crate::powertrain::SOC_BOUND_EPS || soc > soc_max + crate::powertrain::SOC_BOUND_EPS;
        records.push(StepRecord {
            t: cycle.timestamps[k],
            v,
            demand_torque: shaft.demand_torque,
            speed: shaft.engine_speed,
            u: op.u,
            engine_torque: op.engine_torque,
            motor_torque: op.motor_torque,
            fuel_rate: op.fuel_rate,
            batt_power: op.batt_power,
            soc,
            solve_time,
        });
    }

    Ok(SimulationResult {
        controller: controller.name().to_string(),
        cycle: cycle.name.clone(),
        dt,
        soc_init,
        soc_final: soc,
        fuel_kg: fuel,
        battery_kwh: model.capacity_c * model.nominal_voltage / 3.6e6,
        timing: TimingStats::from_samples(&times),
        bounds_exceeded,
        aborted,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prices {
    /// $/kg
    pub fuel: f64,
    /// $/kWh
    pub electricity: f64,
}

impl Default for Prices {
    fn default() -> Self {
        Self {
            fuel: 3.954,
            electricity: 0.169,
        }
    }
}

/// Fuel plus net battery depletion; a net charge gain is not credited.
pub fn money_cost(result: &SimulationResult, prices: &Prices) -> f64 {
    price(result.fuel_kg, result.battery_energy_used_kwh(), prices)
}

pub fn price(fuel_kg: f64, battery_kwh: f64, prices: &Prices) -> f64 {
    prices.fuel * fuel_kg + prices.electricity * battery_kwh.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartiles(samples: &[f64]) -> Option<Quartiles> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Quartiles {
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints {
    pub controller: String,
    pub cycle: String,
    /// Fuel rates (kg/s) of steps with positive demand.
    pub fuel_rates: Vec<f64>,
    pub quartiles: Option<Quartiles>,
    /// `(T_e, w_e, fuel rate)` per positive-demand step.
    pub scatter: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPointStats {
    pub runs: Vec<OperatingPoints>,
}

impl OperatingPointStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("controller,cycle,engine_torque,engine_speed,fuel_rate\n");
        for r in &self.runs {
            for (t, w, f) in &r.scatter {
                let _ = writeln!(out, "{},{},{t},{w},{f}", r.controller, r.cycle);
            }
        }
        out
    }
}

pub fn operating_stats(results: &[SimulationResult]) -> Result<OperatingPointStats> {
    if results.is_empty() {
        return Err(Error::Empty("simulation results"));
    }
    let runs = results
        .iter()
        .map(|r| {
            let active: Vec<&StepRecord> = r.records.iter().filter(|s| s.demand_torque > 0.0).collect();
            let fuel_rates: Vec<f64> = active.iter().map(|s| s.fuel_rate).collect();
            OperatingPoints {
                controller: r.controller.clone(),
                cycle: r.cycle.clone(),
                quartiles: quartiles(&fuel_rates),
                scatter: active.iter().map(|s| (s.engine_torque, s.speed, s.fuel_rate)).collect(),
                fuel_rates,
            }
        })
        .collect();
    Ok(OperatingPointStats { runs })
}

/// Relative deviation of `other`'s median fuel rate from `reference`'s.
pub fn median_deviation(reference: &OperatingPoints, other: &OperatingPoints) -> Option<f64> {
    let a = reference.quartiles?.median;
    let b = other.quartiles?.median;
    (a != 0.0).then(|| (b - a).abs() / a.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub controller: String,
    pub timing: TimingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub cycle: String,
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
    /// NMPC average over policy average, when both were run.
    pub speedup: Option<f64>,
}

impl BenchTable {
    pub fn row(&self, controller: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.controller == controller)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("controller,min_s,avg_s,max_s,samples\n");
        for r in &self.rows {
            let t = r.timing;
            let _ = writeln!(out, "{},{},{},{},{}", r.controller, t.min, t.avg, t.max, t.samples);
        }
        out
    }
}

/// Per-step decision time of each controller over `repetitions` full runs.
pub fn benchmark(
    controllers: &mut [&mut dyn Controller],
    cycle: &DriveCycle,
    model: &VehicleModel,
    soc_bounds: (f64, f64),
    soc_init: f64,
    repetitions: usize,
) -> Result<BenchTable> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(controllers.len());
    for c in controllers.iter_mut() {
        let mut samples = Vec::new();
        for _ in 0..repetitions {
            let r = run_closed_loop(cycle, &mut **c, model, soc_bounds, soc_init)?;
            samples.extend(r.records.iter().map(|s| s.solve_time));
        }
        rows.push(BenchRow {
            controller: c.name().to_string(),
            timing: TimingStats::from_samples(&samples),
        });
    }
    let avg = |name: &str| rows.iter().find(|r| r.controller == name).map(|r| r.timing.avg);
    let speedup = match (avg("nmpc"), avg("policy")) {
        (Some(n), Some(p)) if p > 0.0 => Some(n / p),
        _ => None,
    };
    Ok(BenchTable {
        cycle: cycle.name.clone(),
        repetitions,
        rows,
        speedup,
    })
}
