//! Distilled NMPC policy: dataset collection, feed-forward network,
//! Levenberg-Marquardt training and structure search.

mod dataset;
mod lm;
mod network;
mod search;

pub use dataset::{collect_dataset, Dataset, Split, TRAIN_FRACTION, VAL_FRACTION};
pub use lm::{train_lm, LmConfig};
pub use network::{Activation, EpochRecord, Layer, NeuralPolicy, Normalization};
pub use search::{
    approximation_error, structure_search, ApproximationError, Histogram, RunRecord, SearchConfig, TrainReport,
    HISTOGRAM_BINS,
};

use crate::cycles::PreviewWindow;
use crate::error::{Error, Result};

/// First control of the network's sequence for this preview.
pub fn policy_control(policy: &NeuralPolicy, window: &PreviewWindow) -> Result<f64> {
    if window.horizon() + 1 != policy.input_width() {
        return Err(Error::ShapeMismatch {
            expected: policy.input_width() - 1,
            found: window.horizon(),
        });
    }
    let x = policy.normalization.normalize(&window.features());
    Ok(policy.forward(&x)?[0].clamp(0.0, 1.0))
}

/// Backprop Jacobian of the unclamped outputs (row-major `outputs x params`).
pub fn jacobian(policy: &NeuralPolicy, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != policy.input_width() {
        return Err(Error::ShapeMismatch {
            expected: policy.input_width(),
            found: x.len(),
        });
    }
    let mut out = vec![0.0; policy.output_width() * policy.param_count()];
    policy.jacobian_into(x, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(soc: f64) -> PreviewWindow {
        PreviewWindow {
            soc,
            accels: vec![0.1, -0.2],
        }
    }

    #[test]
    fn in_range_output_unchanged() {
        let mut net = NeuralPolicy::zeros(&[3, 2]).unwrap();
        net.layers[0].weights[0] = 1.0;
        assert_eq!(policy_control(&net, &window(0.4)).unwrap(), 0.4);
        assert_eq!(
            policy_control(&net, &window(0.4)).unwrap(),
            policy_control(&net, &window(0.4)).unwrap()
        );
    }

    #[test]
    fn negative_output_clamps() {
        let mut net = NeuralPolicy::zeros(&[3, 2]).unwrap();
        net.layers[0].biases[0] = -0.2;
        assert_eq!(policy_control(&net, &window(0.4)).unwrap(), 0.0);
    }

    #[test]
    fn window_shape_checked() {
        let net = NeuralPolicy::zeros(&[4, 3]).unwrap();
        assert!(matches!(
            policy_control(&net, &window(0.5)),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
