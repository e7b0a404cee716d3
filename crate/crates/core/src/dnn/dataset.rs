use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::Normalization;
use crate::cycles::{preview, DriveCycle};
use crate::error::{Error, Result};
use crate::nmpc::{step_controller, NmpcConfig};
use crate::powertrain::{Actuation, VehicleModel};

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VAL_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Supervised pairs `[soc, a_0..a_{N-1}] -> [u_0..u_{N-1}]` in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub horizon: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub split: Vec<Split>,
    /// Min-max map fitted on the train rows.
    pub normalization: Normalization,
    /// The cycles ran out before the requested sample count was reached.
    pub insufficient: bool,
}

impl Dataset {
    /// Builds a dataset, assigning splits by a seeded shuffle.
    pub fn new(horizon: usize, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let split = shuffled_split(inputs.len(), seed);
        Self::with_split(horizon, inputs, targets, split)
    }

    pub fn with_split(
        horizon: usize,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        split: Vec<Split>,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if targets.len() != inputs.len() || split.len() != inputs.len() {
            return Err(Error::ShapeMismatch {
                expected: inputs.len(),
                found: targets.len().min(split.len()),
            });
        }
        for (x, y) in inputs.iter().zip(&targets) {
            if x.len() != horizon + 1 {
                return Err(Error::ShapeMismatch {
                    expected: horizon + 1,
                    found: x.len(),
                });
            }
            if y.len() != horizon {
                return Err(Error::ShapeMismatch {
                    expected: horizon,
                    found: y.len(),
                });
            }
            if y.iter().any(|u| !(0.0..=1.0).contains(u)) {
                return Err(Error::InvalidConfig("dataset targets must lie in [0, 1]".into()));
            }
        }
        let train = inputs
            .iter()
            .zip(&split)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(x, _)| x.as_slice());
        let normalization = Normalization::fit_min_max(train, horizon + 1);
        Ok(Self {
            horizon,
            inputs,
            targets,
            split,
            normalization,
            insufficient: false,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Normalized input rows and targets of one split.
    pub fn normalized(&self, which: Split) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.indices(which)
            .into_iter()
            .map(|i| (self.normalization.normalize(&self.inputs[i]), self.targets[i].clone()))
            .unzip()
    }

    /// CSV with header `split,soc,a0..,u0..`; values use shortest round-trip
    /// formatting so the file reloads bit for bit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,soc");
        for j in 0..self.horizon {
            let _ = write!(out, ",a{j}");
        }
        for j in 0..self.horizon {
            let _ = write!(out, ",u{j}");
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(self.split[i].as_str());
            for v in self.inputs[i].iter().chain(&self.targets[i]) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&path.display().to_string(), &text)
    }

    pub fn parse_csv(origin: &str, text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let width = header.len();
        if width < 4 || width % 2 != 0 || &header[0] != "split" {
            return Err(parse_err(1, format!("unexpected dataset header with {width} columns")));
        }
        let horizon = (width - 2) / 2;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut split = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let line = row + 2;
            let rec = rec?;
            if rec.len() != width {
                return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
            }
            let s = Split::parse(&rec[0]).ok_or_else(|| parse_err(line, format!("unknown split `{}`", &rec[0])))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(line, e.to_string()))?;
            split.push(s);
            inputs.push(vals[..=horizon].to_vec());
            targets.push(vals[horizon + 1..].to_vec());
        }
        Self::with_split(horizon, inputs, targets, split)
    }
}

/// 70/15/15 assignment over a seeded permutation.
fn shuffled_split(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = ((VAL_FRACTION * n as f64).round() as usize).min(n - n_train);
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    split
}

/// Rolls NMPC closed loop over the cycles in order, recording each step's
/// preview and optimal control sequence, until `target_count` samples exist.
/// Cycles are simulated in parallel; the result does not depend on the
/// thread count.
pub fn collect_dataset(
    cycles: &[DriveCycle],
    cfg: &NmpcConfig,
    model: &VehicleModel,
    target_count: usize,
    soc_init: f64,
    seed: u64,
) -> Result<Dataset> {
    if cycles.is_empty() {
        return Err(Error::Empty("cycle list"));
    }
    if target_count == 0 {
        return Err(Error::InvalidConfig("target_count must be at least 1".into()));
    }
    // only the cycles needed to reach the target
    let mut needed = 0;
    let mut available = 0;
    for c in cycles {
        if available >= target_count {
            break;
        }
        available += c.steps();
        needed += 1;
    }
    let per_cycle: Vec<Vec<(Vec<f64>, Vec<f64>)>> = cycles[..needed]
        .par_iter()
        .map(|c| nmpc_samples(c, cfg, model, soc_init))
        .collect::<Result<_>>()?;
    let (inputs, targets): (Vec<_>, Vec<_>) = per_cycle.into_iter().flatten().take(target_count).unzip();
    let insufficient = inputs.len() < target_count;
    let mut data = Dataset::new(cfg.horizon, inputs, targets, seed)?;
    data.insufficient = insufficient;
    Ok(data)
}

fn nmpc_samples(
    cycle: &DriveCycle,
    cfg: &NmpcConfig,
    model: &VehicleModel,
    soc_init: f64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut soc = soc_init;
    let mut out = Vec::with_capacity(cycle.steps());
    let dt = cycle.dt();
    for k in 0..cycle.steps() {
        let (u, plan) = step_controller(cycle, k, soc, cfg, model)?;
        out.push((preview(cycle, k, cfg.horizon, soc).features(), plan.controls));
        let shaft = model.demand_from_speed(cycle.speeds[k], cycle.acceleration(k));
        let op = model.operate(&shaft, Actuation::split(u))?;
        soc = model.soc_step(soc, op.batt_power, dt)?;
    }
    Ok(out)
}
