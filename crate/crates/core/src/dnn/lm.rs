use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use super::network::{EpochRecord, NeuralPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub epochs: usize,
    pub mu_init: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    pub mu_max: f64,
    /// Consecutive epochs without a new best validation MSE before stopping.
    pub max_fail: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            mu_init: 1e-3,
            mu_increase: 10.0,
            mu_decrease: 10.0,
            mu_max: 1e10,
            max_fail: 6,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_init > 0.0 && self.mu_increase > 1.0 && self.mu_decrease > 1.0 && self.mu_max > self.mu_init) {
            return Err(Error::InvalidConfig("LM damping schedule is inconsistent".into()));
        }
        Ok(())
    }
}

const MU_FLOOR: f64 = 1e-20;
/// Rows per Jacobian block.
const CHUNK: usize = 64;
/// Fixed partition of the samples so sums do not depend on thread count.
const GROUPS: usize = 8;

/// Normalized rows of one split, flattened for the optimizer.
pub(crate) struct Samples {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Samples {
    pub fn from_split(data: &Dataset, which: Split) -> Self {
        let (x, y) = data.normalized(which);
        Self { x, y }
    }

    fn len(&self) -> usize {
        self.x.len()
    }

    fn residual_count(&self) -> usize {
        self.y.iter().map(Vec::len).sum()
    }
}

/// Mean squared error of the unclamped output (the training objective).
pub(crate) fn raw_mse(net: &NeuralPolicy, s: &Samples) -> f64 {
    mse_with(net, s, false)
}

/// Mean squared error of the deployed, clamped output.
pub(crate) fn clamped_mse(net: &NeuralPolicy, s: &Samples) -> f64 {
    mse_with(net, s, true)
}

fn mse_with(net: &NeuralPolicy, s: &Samples, clamp: bool) -> f64 {
    if s.len() == 0 {
        return f64::NAN;
    }
    let sse: f64 =
        s.x.par_chunks(CHUNK)
            .zip(s.y.par_chunks(CHUNK))
            .map(|(xs, ys)| {
                xs.iter()
                    .zip(ys)
                    .map(|(x, y)| {
                        let out = net.trace(x).acts.pop().expect("output layer");
                        out.iter()
                            .zip(y)
                            .map(|(o, t)| {
                                let o = if clamp { o.clamp(0.0, 1.0) } else { *o };
                                (o - t) * (o - t)
                            })
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .sum();
    sse / s.residual_count() as f64
}

/// Gauss-Newton pieces `(JᵀJ, Jᵀr)` for residuals `r = output - target`.
fn normal_equations(net: &NeuralPolicy, s: &Samples) -> (DMatrix<f64>, DVector<f64>) {
    let p = net.param_count();
    let n_out = net.output_width();
    let per_group = s.len().div_ceil(GROUPS).max(1);
    let partials: Vec<(DMatrix<f64>, DVector<f64>)> =
        s.x.par_chunks(per_group)
            .zip(s.y.par_chunks(per_group))
            .map(|(gx, gy)| {
                let mut jtj = DMatrix::<f64>::zeros(p, p);
                let mut jtr = DVector::<f64>::zeros(p);
                let mut buf = vec![0.0; n_out * p];
                for (xs, ys) in gx.chunks(CHUNK).zip(gy.chunks(CHUNK)) {
                    let rows = xs.len() * n_out;
                    // Jᵀ is filled column by column: one residual per column
                    let mut jt = DMatrix::<f64>::zeros(p, rows);
                    let mut res = DVector::<f64>::zeros(rows);
                    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                        net.jacobian_into(x, &mut buf);
                        let out = net.trace(x).acts.pop().expect("output layer");
                        for o in 0..n_out {
                            let r = i * n_out + o;
                            res[r] = out[o] - y[o];
                            jt.column_mut(r).copy_from_slice(&buf[o * p..(o + 1) * p]);
                        }
                    }
                    let j = jt.transpose();
                    jtj.gemm(1.0, &jt, &j, 1.0);
                    jtr.gemv(1.0, &jt, &res, 1.0);
                }
                (jtj, jtr)
            })
            .collect();
    let mut jtj = DMatrix::<f64>::zeros(p, p);
    let mut jtr = DVector::<f64>::zeros(p);
    for (a, b) in partials {
        jtj += a;
        jtr += b;
    }
    (jtj, jtr)
}

/// Levenberg-Marquardt fit of `policy` to the train split of `data`.
///
/// The returned network carries the data's normalization, its parameters
/// are those with the lowest validation MSE seen, and its `training_log`
/// holds one record per accepted epoch (epoch 0 is the initial state).
pub fn train_lm(policy: &NeuralPolicy, data: &Dataset, cfg: &LmConfig) -> Result<(NeuralPolicy, Vec<EpochRecord>)> {
    cfg.validate()?;
    if policy.input_width() != data.horizon + 1 || policy.output_width() != data.horizon {
        return Err(Error::ShapeMismatch {
            expected: data.horizon + 1,
            found: policy.input_width(),
        });
    }
    let train = Samples::from_split(data, Split::Train);
    if train.len() == 0 {
        return Err(Error::Empty("train split"));
    }
    let val = Samples::from_split(data, Split::Val);
    let has_val = val.len() > 0;

    let mut net = policy.clone();
    net.normalization = data.normalization.clone();
    net.training_log.clear();

    let select = |n: &NeuralPolicy, train_mse: f64| if has_val { clamped_mse(n, &val) } else { train_mse };

    let mut mu = cfg.mu_init;
    let mut theta = net.params();
    let mut loss = raw_mse(&net, &train);
    let mut val_mse = select(&net, loss);
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_mse: loss,
        val_mse,
        mu,
    }];
    let mut best = (val_mse, theta.clone());
    let mut fails = 0;
    let p = theta.len();

    'epochs: for epoch in 1..=cfg.epochs {
        let (jtj, jtr) = normal_equations(&net, &train);
        loop {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += mu;
            }
            let Some(chol) = a.cholesky() else {
                if mu >= cfg.mu_max {
                    return Err(Error::SingularUpdate { mu });
                }
                mu *= cfg.mu_increase;
                continue;
            };
            let step = chol.solve(&jtr);
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t - d).collect();
            net.set_params(&trial)?;
            let trial_loss = raw_mse(&net, &train);
            if trial_loss.is_finite() && trial_loss < loss {
                theta = trial;
                loss = trial_loss;
                mu = (mu / cfg.mu_decrease).max(MU_FLOOR);
                break;
            }
            mu *= cfg.mu_increase;
            if mu > cfg.mu_max {
                // no descent direction left at any damping: converged
                net.set_params(&theta)?;
                break 'epochs;
            }
        }
        val_mse = select(&net, loss);
        log.push(EpochRecord {
            epoch,
            train_mse: loss,
            val_mse,
            mu,
        });
        if val_mse < best.0 {
            best = (val_mse, theta.clone());
            fails = 0;
        } else {
            fails += 1;
            if fails >= cfg.max_fail {
                break;
            }
        }
    }

    net.set_params(&best.1)?;
    net.training_log = log.clone();
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(n: usize) -> Dataset {
        // y = x on [0, 1], scalar horizon
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64, 0.0]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0]]).collect();
        Dataset::new(1, inputs, targets, 11).unwrap()
    }

    #[test]
    fn fits_identity_with_one_hidden_node() {
        let data = line_data(100);
        let net = NeuralPolicy::random(&[2, 1, 1], 4).unwrap();
        let (trained, log) = train_lm(&net, &data, &LmConfig::default()).unwrap();
        assert!(log.last().unwrap().train_mse <= 1e-4, "{:?}", log.last());
        let train = Samples::from_split(&data, Split::Train);
        assert!(raw_mse(&trained, &train) <= 1e-4);
    }

    #[test]
    fn accepted_steps_never_increase_train_mse() {
        let data = line_data(60);
        let net = NeuralPolicy::random(&[2, 3, 1], 9).unwrap();
        let cfg = LmConfig {
            epochs: 40,
            ..LmConfig::default()
        };
        let (_, log) = train_lm(&net, &data, &cfg).unwrap();
        assert!(log.windows(2).all(|w| w[1].train_mse <= w[0].train_mse));
    }

    #[test]
    fn returns_best_validation_parameters() {
        let data = line_data(60);
        let net = NeuralPolicy::random(&[2, 4, 1], 2).unwrap();
        let (trained, log) = train_lm(&net, &data, &LmConfig::default()).unwrap();
        let best = log.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        let val = Samples::from_split(&data, Split::Val);
        assert!((clamped_mse(&trained, &val) - best).abs() <= 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let data = line_data(10);
        let net = NeuralPolicy::random(&[3, 2, 1], 0).unwrap();
        assert!(matches!(
            train_lm(&net, &data, &LmConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
