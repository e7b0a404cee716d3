//! Threshold rule controller used as the comparison baseline.
//!
//! It is a stand-in for a map-based production strategy: motor-only at low
//! torque, engine above that (motor assists when SOC is high or the engine is
//! at its limit), and engine load-up charging when SOC runs low.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::powertrain::{Actuation, ShaftState, VehicleModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub soc_low: f64,
    pub soc_high: f64,
    /// Demand at or below this is served by the motor alone (Nm).
    pub torque_electric_max: f64,
    /// Extra engine torque used to recharge below `soc_low` (Nm).
    pub charge_torque: f64,
    /// Motor assist above `soc_high` when the engine carries the load (Nm).
    pub assist_torque: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            soc_low: 0.57,
            soc_high: 0.63,
            torque_electric_max: 25.0,
            charge_torque: 20.0,
            assist_torque: 15.0,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self, soc_min: f64, soc_max: f64) -> Result<()> {
        if !(soc_min < self.soc_low && self.soc_low < self.soc_high && self.soc_high < soc_max) {
            return Err(Error::InvalidConfig(format!(
                "rule thresholds need {soc_min} < soc_low < soc_high < {soc_max}, got {} and {}",
                self.soc_low, self.soc_high
            )));
        }
        if self.torque_electric_max < 0.0 || self.charge_torque < 0.0 || self.assist_torque < 0.0 {
            return Err(Error::InvalidConfig("rule torques must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Split ratio the rule picks for this state.
pub fn rule_control(shaft: &ShaftState, soc: f64, cfg: &RuleConfig, model: &VehicleModel) -> f64 {
    rule_actuation(shaft, soc, cfg, model).u
}

/// Full rule decision, including the charging torque of the low-SOC branch.
pub fn rule_actuation(shaft: &ShaftState, soc: f64, cfg: &RuleConfig, model: &VehicleModel) -> Actuation {
    let demand = shaft.demand_torque;
    if demand <= 0.0 {
        return Actuation::split(0.0);
    }
    let lim = &model.torque_limits;
    let w = shaft.engine_speed;
    let engine_max = lim.engine_max.eval(w);
    let motor_max = lim.motor_max.eval(w);
    let motor_min = lim.motor_min.eval(w);

    // engine share needed when the motor contributes `motor` Nm
    let with_motor = |motor: f64| ((demand - motor) / demand).clamp(0.0, 1.0);
    // engine carries everything, motor only fills in above the engine limit
    let engine_led = || with_motor((demand - engine_max).max(0.0));

    if soc < cfg.soc_low {
        let u = engine_led();
        let headroom = (engine_max - u * demand).max(0.0);
        // motor torque (1 - u) * demand - charge must stay above motor_min
        let charge = cfg
            .charge_torque
            .min(headroom)
            .min((1.0 - u) * demand - motor_min)
            .max(0.0);
        return Actuation {
            u,
            charge_torque: charge,
        };
    }
    if demand <= cfg.torque_electric_max.min(motor_max) {
        return Actuation::split(0.0);
    }
    if soc > cfg.soc_high {
        let assist = cfg.assist_torque.max(demand - engine_max).min(motor_max);
        return Actuation::split(with_motor(assist));
    }
    Actuation::split(engine_led())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shaft(t: f64, w: f64) -> ShaftState {
        ShaftState {
            demand_torque: t,
            engine_speed: w,
            motor_speed: w,
        }
    }

    fn example_cfg() -> RuleConfig {
        RuleConfig {
            soc_low: 0.5,
            soc_high: 0.65,
            ..RuleConfig::default()
        }
    }

    #[test]
    fn electric_when_soc_high_and_torque_low() {
        let m = VehicleModel::reference();
        assert_eq!(rule_control(&shaft(10.0, 150.0), 0.7, &example_cfg(), &m), 0.0);
    }

    #[test]
    fn charges_when_soc_low() {
        let m = VehicleModel::reference();
        let cfg = example_cfg();
        let act = rule_actuation(&shaft(50.0, 150.0), 0.45, &cfg, &m);
        assert_eq!(act.u, 1.0);
        assert_eq!(act.charge_torque, cfg.charge_torque);
        let op = m.operate(&shaft(50.0, 150.0), act).unwrap();
        assert_eq!(op.motor_torque, -cfg.charge_torque);
        assert!(op.batt_power < 0.0);
    }

    #[test]
    fn stateless() {
        let m = VehicleModel::reference();
        let cfg = example_cfg();
        let s = shaft(80.0, 200.0);
        assert_eq!(rule_actuation(&s, 0.6, &cfg, &m), rule_actuation(&s, 0.6, &cfg, &m));
    }

    #[test]
    fn motor_fills_in_above_engine_limit() {
        let m = VehicleModel::reference();
        let cfg = example_cfg();
        let s = shaft(230.0, 200.0);
        let u = rule_control(&s, 0.6, &cfg, &m);
        assert!((u * 230.0 - 200.0).abs() < 1e-9);
        assert!(m.operate(&s, Actuation::split(u)).is_ok());
    }

    #[test]
    fn regen_goes_to_motor() {
        let m = VehicleModel::reference();
        assert_eq!(rule_control(&shaft(-40.0, 100.0), 0.45, &example_cfg(), &m), 0.0);
    }

    #[test]
    fn breakpoints_at_thresholds() {
        let m = VehicleModel::reference();
        let cfg = example_cfg();
        let s = shaft(60.0, 200.0);
        let at = |soc: f64| rule_actuation(&s, soc, &cfg, &m);
        assert_eq!(at(0.5), at(0.6));
        assert_ne!(at(0.5 - 1e-9), at(0.5));
        assert_eq!(at(0.65), at(0.6));
        assert_ne!(at(0.65 + 1e-9), at(0.65));
    }

    #[test]
    fn validate_thresholds() {
        assert!(example_cfg().validate(0.4, 0.8).is_ok());
        let bad = RuleConfig {
            soc_low: 0.7,
            soc_high: 0.6,
            ..RuleConfig::default()
        };
        assert!(bad.validate(0.4, 0.8).is_err());
    }
}
