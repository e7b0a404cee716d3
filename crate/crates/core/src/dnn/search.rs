use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::lm::{train_lm, LmConfig};
use super::network::NeuralPolicy;
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub init_sizes: Vec<usize>,
    pub max_expansions: usize,
    pub restarts: usize,
    /// Relative validation gain an expansion must deliver to keep growing.
    pub min_improvement: f64,
    pub seed: u64,
    pub lm: LmConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            init_sizes: vec![5, 5, 3],
            max_expansions: 4,
            restarts: 3,
            min_improvement: 0.01,
            seed: 7,
            lm: LmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub hidden: Vec<usize>,
    pub restart: usize,
    pub seed: u64,
    /// Best validation MSE of the run; `None` when training failed.
    pub val_mse: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins spanning the observed range; a zero-width range is
    /// widened to one unit around the value.
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("histogram input"));
        }
        let bins = bins.max(1);
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_structure: Vec<usize>,
    pub best_val_mse: f64,
    /// Restarts trained per structure.
    pub restarts_run: usize,
    /// Expansions beyond the initial structure that were trained.
    pub expansions_run: usize,
    pub runs: Vec<RunRecord>,
    pub test_mse: Option<f64>,
    pub error_histogram: Option<Histogram>,
}

impl TrainReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dp::write_json(path.as_ref(), self)
    }
}

/// Grows the hidden layers by `init_sizes` per expansion, trains several
/// random initializations of each, and keeps the best by validation MSE.
pub fn structure_search(data: &Dataset, cfg: &SearchConfig) -> Result<(TrainReport, NeuralPolicy)> {
    if cfg.init_sizes.is_empty() || cfg.init_sizes.contains(&0) || cfg.restarts == 0 {
        return Err(Error::InvalidConfig(
            "search needs nonzero hidden sizes and restarts".into(),
        ));
    }
    let mut runs = Vec::new();
    let mut best: Option<(f64, NeuralPolicy)> = None;
    let mut last_error = None;
    let mut expansions_run = 0;

    for s in 0..=cfg.max_expansions {
        let hidden: Vec<usize> = cfg.init_sizes.iter().map(|n| n * (s + 1)).collect();
        let mut sizes = vec![data.horizon + 1];
        sizes.extend(&hidden);
        sizes.push(data.horizon);
        let before = best.as_ref().map(|b| b.0);

        for r in 0..cfg.restarts {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((s * 1000 + r) as u64);
            let outcome = NeuralPolicy::random(&sizes, seed).and_then(|net| train_lm(&net, data, &cfg.lm));
            match outcome {
                Ok((net, log)) => {
                    let val = log.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
                    runs.push(RunRecord {
                        hidden: hidden.clone(),
                        restart: r,
                        seed,
                        val_mse: Some(val),
                        epochs: log.len() - 1,
                        error: None,
                    });
                    if best.as_ref().is_none_or(|b| val < b.0) {
                        best = Some((val, net));
                    }
                }
                Err(e) => {
                    runs.push(RunRecord {
                        hidden: hidden.clone(),
                        restart: r,
                        seed,
                        val_mse: None,
                        epochs: 0,
                        error: Some(e.to_string()),
                    });
                    last_error = Some(e);
                }
            }
        }
        if s > 0 {
            expansions_run = s;
            let improved = match (before, best.as_ref()) {
                (Some(prev), Some(b)) => b.0 < prev * (1.0 - cfg.min_improvement),
                (None, Some(_)) => true,
                _ => false,
            };
            if !improved {
                break;
            }
        }
    }

    let Some((best_val_mse, policy)) = best else {
        return Err(last_error.unwrap_or(Error::Empty("training runs")));
    };
    let test = approximation_error(&policy, data, Split::Test).ok();
    let report = TrainReport {
        best_structure: policy.layer_sizes.clone(),
        best_val_mse,
        restarts_run: cfg.restarts,
        expansions_run,
        runs,
        test_mse: test.as_ref().map(|t| t.mse),
        error_histogram: test.map(|t| t.histogram),
    };
    Ok((report, policy))
}

/// Per-sample errors `Y*(X) - Ŷ(X)` of the deployed network on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationError {
    pub errors: Vec<Vec<f64>>,
    pub histogram: Histogram,
    pub mse: f64,
}

pub fn approximation_error(policy: &NeuralPolicy, data: &Dataset, which: Split) -> Result<ApproximationError> {
    let idx = data.indices(which);
    if idx.is_empty() {
        return Err(Error::Empty("dataset split"));
    }
    let errors = idx
        .iter()
        .map(|&i| {
            let x = policy.normalization.normalize(&data.inputs[i]);
            let y = policy.forward(&x)?;
            Ok(y.iter().zip(&data.targets[i]).map(|(p, t)| p - t).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let flat: Vec<f64> = errors.iter().flatten().copied().collect();
    let mse = flat.iter().map(|e| e * e).sum::<f64>() / flat.len() as f64;
    let histogram = Histogram::new(&flat, HISTOGRAM_BINS)?;
    Ok(ApproximationError { errors, histogram, mse })
}
