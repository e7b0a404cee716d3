//! Control-oriented parallel mild-HEV model.
//!
//! Engine and motor sit on one shaft, so the engine and motor speeds are the
//! same. The torque-split ratio `u` is the engine's share of the demanded
//! shaft torque, fuel rate and electrical battery power are quadratic
//! polynomials in (torque, speed), and SOC follows an Euler step of the
//! internal-resistance battery model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Torque tolerance when checking the limit envelope (Nm).
const TORQUE_TOL: f64 = 1e-9;

/// Piecewise-linear lookup with clamped extrapolation.
///
/// Serialized as a list of `[key, value]` pairs. Keys must be strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Lookup {
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl Lookup {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidModel("lookup table has no rows".into()));
        }
        if points.iter().any(|(k, v)| !k.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidModel("lookup table has non-finite entries".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidModel(
                "lookup table keys must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            keys: points.iter().map(|p| p.0).collect(),
            values: points.iter().map(|p| p.1).collect(),
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            keys: vec![0.0],
            values: vec![value],
        }
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.keys.len();
        if n == 1 || x <= self.keys[0] {
            return self.values[0];
        }
        if x >= self.keys[n - 1] {
            return self.values[n - 1];
        }
        // first key strictly greater than x; 1 <= hi <= n-1 here
        let hi = self.keys.partition_point(|&k| k <= x);
        let lo = hi - 1;
        let t = (x - self.keys[lo]) / (self.keys[hi] - self.keys[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }
}

impl TryFrom<Vec<[f64; 2]>> for Lookup {
    type Error = Error;

    fn try_from(rows: Vec<[f64; 2]>) -> Result<Self> {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
        Lookup::new(&points)
    }
}

impl From<Lookup> for Vec<[f64; 2]> {
    fn from(l: Lookup) -> Self {
        l.keys.iter().zip(&l.values).map(|(&k, &v)| [k, v]).collect()
    }
}

/// Speed-dependent torque envelope; tables are keyed by shaft speed (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueLimits {
    pub engine_max: Lookup,
    pub motor_max: Lookup,
    pub motor_min: Lookup,
    /// Highest admissible shaft speed (rad/s).
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleModel {
    pub name: String,
    /// a0..a5 of the fuel map, kg/s with torque in Nm and speed in rad/s.
    pub fuel_coeffs: [f64; 6],
    /// b0..b5 of the electrical power map, W. Positive means discharging.
    pub batt_power_coeffs: [f64; 6],
    /// Open-circuit voltage (V) by SOC.
    pub ocv_table: Lookup,
    /// Internal resistance (ohm) by SOC.
    pub resistance_table: Lookup,
    /// Charge capacity in coulombs.
    pub capacity_c: f64,
    /// Only used to convert SOC swings into kWh.
    pub nominal_voltage: f64,
    pub mass: f64,
    pub wheel_radius: f64,
    /// 0.5 * rho * Cd * A, kg/m.
    pub drag_area_coeff: f64,
    pub rolling_coeff: f64,
    pub gravity: f64,
    /// Wheel speed to shaft speed.
    pub driveline_ratio: f64,
    pub driveline_efficiency: f64,
    /// Lowest shaft torque the road-load model will demand (Nm, <= 0).
    pub regen_floor: f64,
    pub torque_limits: TorqueLimits,
}

/// Demanded shaft torque and shaft speeds for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaftState {
    pub demand_torque: f64,
    pub engine_speed: f64,
    pub motor_speed: f64,
}

/// SOC together with the window it should stay in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocState {
    pub soc: f64,
    pub min: f64,
    pub max: f64,
}

pub const SOC_BOUND_EPS: f64 = 1e-9;

impl SocState {
    pub fn new(soc: f64, min: f64, max: f64) -> Result<Self> {
        if !(0.0 < min && min < max && max < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "soc bounds ({min}, {max}) must satisfy 0 < min < max < 1"
            )));
        }
        Ok(Self { soc, min, max })
    }

    pub fn in_bounds(&self) -> bool {
        self.soc >= self.min - SOC_BOUND_EPS && self.soc <= self.max + SOC_BOUND_EPS
    }

    /// Advances one step. The flag is true when the new SOC left the bounds;
    /// that is reported, not treated as an error.
    pub fn step(&self, batt_power: f64, model: &VehicleModel, dt: f64) -> Result<(SocState, bool)> {
        let next = SocState {
            soc: soc_step(self.soc, batt_power, model, dt)?,
            ..*self
        };
        Ok((next, !next.in_bounds()))
    }
}

/// What a controller asks of the powertrain for one step.
///
/// `charge_torque` is extra engine torque absorbed by the motor as a
/// generator; the engine and motor torques still sum to the demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub u: f64,
    pub charge_torque: f64,
}

impl Actuation {
    pub fn split(u: f64) -> Self {
        Self { u, charge_torque: 0.0 }
    }
}

/// Resolved operating point of the powertrain for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub u: f64,
    pub engine_torque: f64,
    pub motor_torque: f64,
    pub fuel_rate: f64,
    pub batt_power: f64,
}

pub fn split_torque(demand: f64, u: f64) -> (f64, f64) {
    let engine = u * demand;
    // written as the difference so the pair sums back to the demand
    (engine, demand - engine)
}

fn quad_map(c: &[f64; 6], torque: f64, speed: f64) -> f64 {
    c[0] + c[1] * torque + c[2] * speed + c[3] * torque * torque + c[4] * torque * speed + c[5] * speed * speed
}

impl VehicleModel {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let model: VehicleModel = toml::from_str(s).map_err(|e| Error::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidModel(msg) => Error::InvalidModel(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("vehicle model is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        let positive = [
            ("capacity_c", self.capacity_c),
            ("nominal_voltage", self.nominal_voltage),
            ("mass", self.mass),
            ("wheel_radius", self.wheel_radius),
            ("driveline_ratio", self.driveline_ratio),
            ("gravity", self.gravity),
            ("torque_limits.max_speed", self.torque_limits.max_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.driveline_efficiency > 0.0 && self.driveline_efficiency <= 1.0) {
            return bad(format!(
                "driveline_efficiency must lie in (0, 1], got {}",
                self.driveline_efficiency
            ));
        }
        if self.drag_area_coeff < 0.0 || self.rolling_coeff < 0.0 {
            return bad("road-load coefficients must be nonnegative".into());
        }
        if !(self.regen_floor <= 0.0) {
            return bad(format!("regen_floor must be <= 0, got {}", self.regen_floor));
        }
        if self
            .fuel_coeffs
            .iter()
            .chain(&self.batt_power_coeffs)
            .any(|c| !c.is_finite())
        {
            return bad("polynomial coefficients must be finite".into());
        }
        if self.ocv_table.values().iter().any(|&v| v <= 0.0) {
            return bad("open-circuit voltages must be positive".into());
        }
        if self.resistance_table.values().iter().any(|&r| r <= 0.0) {
            return bad("battery resistances must be positive".into());
        }
        let lim = &self.torque_limits;
        if lim.engine_max.values().iter().any(|&t| t < 0.0)
            || lim.motor_max.values().iter().any(|&t| t < 0.0)
            || lim.motor_min.values().iter().any(|&t| t > 0.0)
        {
            return bad("torque limits must bracket zero".into());
        }

        // fuel map must not go negative anywhere in the engine envelope
        const GRID: usize = 20;
        for i in 0..GRID {
            let w = lim.max_speed * i as f64 / (GRID - 1) as f64;
            let t_max = lim.engine_max.eval(w);
            for j in 0..GRID {
                let t = t_max * j as f64 / (GRID - 1) as f64;
                let m = quad_map(&self.fuel_coeffs, t, w);
                if m < 0.0 {
                    return bad(format!(
                        "fuel map is negative ({m:e} kg/s) at T_e = {t:.2} Nm, w_e = {w:.2} rad/s"
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_speed(&self, w: f64) -> Result<()> {
        if !(w >= 0.0 && w <= self.torque_limits.max_speed) {
            return Err(Error::LimitViolation(format!(
                "shaft speed {w:.3} rad/s outside [0, {}]",
                self.torque_limits.max_speed
            )));
        }
        Ok(())
    }

    /// Engine fuel rate in kg/s, clamped below at zero.
    pub fn fuel_rate(&self, engine_torque: f64, engine_speed: f64) -> Result<f64> {
        self.check_speed(engine_speed)?;
        let t_max = self.torque_limits.engine_max.eval(engine_speed);
        if !(engine_torque >= -TORQUE_TOL && engine_torque <= t_max + TORQUE_TOL) {
            return Err(Error::LimitViolation(format!(
                "engine torque {engine_torque:.3} Nm outside [0, {t_max:.3}] at {engine_speed:.2} rad/s"
            )));
        }
        Ok(quad_map(&self.fuel_coeffs, engine_torque, engine_speed).max(0.0))
    }

    /// Electrical battery power in W (positive = discharging).
    pub fn battery_power(&self, motor_torque: f64, motor_speed: f64) -> Result<f64> {
        self.check_speed(motor_speed)?;
        let lim = &self.torque_limits;
        let (lo, hi) = (lim.motor_min.eval(motor_speed), lim.motor_max.eval(motor_speed));
        if !(motor_torque >= lo - TORQUE_TOL && motor_torque <= hi + TORQUE_TOL) {
            return Err(Error::LimitViolation(format!(
                "motor torque {motor_torque:.3} Nm outside [{lo:.3}, {hi:.3}] at {motor_speed:.2} rad/s"
            )));
        }
        Ok(quad_map(&self.batt_power_coeffs, motor_torque, motor_speed))
    }

    /// Road-load torque demand at the shaft for speed `v` and acceleration `a`.
    pub fn demand_from_speed(&self, v: f64, a: f64) -> ShaftState {
        let rolling = if v > 0.0 {
            self.rolling_coeff * self.mass * self.gravity
        } else {
            0.0
        };
        let force = self.mass * a + self.drag_area_coeff * v * v + rolling;
        let torque = force * self.wheel_radius / (self.driveline_ratio * self.driveline_efficiency);
        let speed = v / self.wheel_radius * self.driveline_ratio;
        ShaftState {
            demand_torque: torque.max(self.regen_floor),
            engine_speed: speed,
            motor_speed: speed,
        }
    }

    /// Resolves an actuation request into engine/motor torques, fuel rate and
    /// battery power.
    ///
    /// Negative demand always goes to the motor (u = 0) and is cut at the
    /// motor's regeneration limit; friction brakes absorb the rest. With zero
    /// demand the split is moot and reported as 0.
    pub fn operate(&self, shaft: &ShaftState, act: Actuation) -> Result<OperatingPoint> {
        let w = shaft.engine_speed;
        let (u, engine, motor) =
            if shaft.demand_torque < 0.0 || (shaft.demand_torque == 0.0 && act.charge_torque == 0.0) {
                let floor = self.torque_limits.motor_min.eval(shaft.motor_speed);
                (0.0, 0.0, shaft.demand_torque.max(floor))
            } else {
                if !(0.0..=1.0).contains(&act.u) {
                    return Err(Error::LimitViolation(format!("split ratio {} outside [0, 1]", act.u)));
                }
                let (e, m) = split_torque(shaft.demand_torque, act.u);
                (act.u, e + act.charge_torque, m - act.charge_torque)
            };
        Ok(OperatingPoint {
            u,
            engine_torque: engine,
            motor_torque: motor,
            fuel_rate: self.fuel_rate(engine, w)?,
            batt_power: self.battery_power(motor, shaft.motor_speed)?,
        })
    }

    /// Split ratios that keep both machines inside their torque limits, or
    /// `None` when the demand exceeds the combined capability.
    pub fn feasible_split(&self, shaft: &ShaftState) -> Option<(f64, f64)> {
        let t = shaft.demand_torque;
        if t <= 0.0 {
            return Some((0.0, 0.0));
        }
        let lim = &self.torque_limits;
        let lo = (1.0 - lim.motor_max.eval(shaft.motor_speed) / t).max(0.0);
        let hi = (lim.engine_max.eval(shaft.engine_speed) / t)
            .min(1.0 - lim.motor_min.eval(shaft.motor_speed) / t)
            .min(1.0);
        (lo <= hi).then_some((lo, hi))
    }

    /// Largest battery power the internal-resistance model can deliver at `soc`.
    pub fn max_discharge_power(&self, soc: f64) -> f64 {
        let v = self.ocv_table.eval(soc);
        v * v / (4.0 * self.resistance_table.eval(soc))
    }

    pub fn soc_step(&self, soc: f64, batt_power: f64, dt: f64) -> Result<f64> {
        soc_step(soc, batt_power, self, dt)
    }
}

/// Battery parameters frozen at one SOC, for evaluating many candidate
/// powers from the same state.
#[derive(Debug, Clone, Copy)]
pub struct BatteryAt {
    pub soc: f64,
    pub ocv: f64,
    pub resistance: f64,
    pub capacity: f64,
}

impl BatteryAt {
    /// Terminal current for `batt_power`, `None` past the deliverable maximum.
    pub fn current(&self, batt_power: f64) -> Option<f64> {
        let (v, r) = (self.ocv, self.resistance);
        let disc = v * v - 4.0 * r * batt_power;
        (disc >= 0.0).then(|| (v - disc.sqrt()) / (2.0 * r))
    }

    pub fn next_soc(&self, batt_power: f64, dt: f64) -> Option<f64> {
        self.current(batt_power).map(|i| self.soc - i / self.capacity * dt)
    }
}

impl VehicleModel {
    pub fn battery_at(&self, soc: f64) -> BatteryAt {
        BatteryAt {
            soc,
            ocv: self.ocv_table.eval(soc),
            resistance: self.resistance_table.eval(soc),
            capacity: self.capacity_c,
        }
    }
}

/// One Euler step of SOC. Discharging (positive power) lowers SOC.
pub fn soc_step(soc: f64, batt_power: f64, model: &VehicleModel, dt: f64) -> Result<f64> {
    let b = model.battery_at(soc);
    b.next_soc(batt_power, dt).ok_or(Error::PowerInfeasible {
        power: batt_power,
        soc,
        max: b.ocv * b.ocv / (4.0 * b.resistance),
    })
}

impl Default for VehicleModel {
    fn default() -> Self {
        Self::reference()
    }
}

impl VehicleModel {
    /// Illustrative 48 V parallel mild hybrid (about 1500 kg, 15 kW motor,
    /// 20 Ah pack). The numbers are physically plausible, not measured data
    /// from any particular vehicle. The battery map carries a linear
    /// inverter loss of 10 W per Nm of motor torque.
    pub fn reference() -> Self {
        let table = |pts: &[(f64, f64)]| Lookup::new(pts).expect("static table is valid");
        VehicleModel {
            name: "reference-48v-mild-hev".into(),
            fuel_coeffs: [1.2e-4, 1.0e-6, 8.0e-7, 2.0e-8, 6.5e-8, 1.0e-9],
            batt_power_coeffs: [0.0, 10.0, 0.0, 0.3, 1.0, 0.0],
            ocv_table: table(&[
                (0.0, 42.0),
                (0.2, 45.0),
                (0.5, 47.5),
                (0.6, 48.0),
                (0.8, 49.5),
                (1.0, 51.5),
            ]),
            resistance_table: table(&[(0.0, 0.045), (0.3, 0.032), (0.6, 0.030), (1.0, 0.033)]),
            capacity_c: 72_000.0,
            nominal_voltage: 48.0,
            mass: 1500.0,
            wheel_radius: 0.3,
            drag_area_coeff: 0.4,
            rolling_coeff: 0.01,
            gravity: 9.81,
            driveline_ratio: 5.0,
            driveline_efficiency: 0.95,
            regen_floor: -150.0,
            torque_limits: TorqueLimits {
                engine_max: table(&[
                    (0.0, 130.0),
                    (100.0, 165.0),
                    (200.0, 200.0),
                    (300.0, 210.0),
                    (400.0, 200.0),
                    (600.0, 170.0),
                ]),
                motor_max: table(&[
                    (0.0, 60.0),
                    (250.0, 60.0),
                    (350.0, 42.857),
                    (450.0, 33.333),
                    (600.0, 25.0),
                ]),
                motor_min: table(&[
                    (0.0, -60.0),
                    (250.0, -60.0),
                    (350.0, -42.857),
                    (450.0, -33.333),
                    (600.0, -25.0),
                ]),
                max_speed: 600.0,
            },
        }
    }
}
