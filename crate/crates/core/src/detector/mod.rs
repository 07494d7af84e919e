//! Flash-trigger detection.
//!
//! A single-feature logistic model is trained on whole-video averaged flash
//! metrics against oracle labels. Its decision boundary `T = −bias / w` is
//! then reused by every node of a sparse [`TriggerArray`], each watching the
//! one-second rolling mean of the flash metric at its own pixel.

mod array;
mod eval;

pub use array::{interpolate_region, run_trigger_array, ActivationMap, GridDims, TriggerArray};
pub use eval::{auc, evaluate, sampling_reduction, z_score, EvalMetrics};

use serde::{Deserialize, Serialize};

use crate::color::{flash_metric, frame_mean_lab, LabColor};
use crate::error::{Error, Result};
use crate::video::VideoBuffer;

pub const DEFAULT_EPOCHS: usize = 5000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
const MIN_TRAINING_SAMPLES: usize = 10;

/// Logistic model over the averaged flash metric, in raw (per-frame Lab
/// unit) feature space. `feature_mean` and `feature_std` record the
/// standardization used during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub w: f64,
    pub bias: f64,
    pub feature_mean: f64,
    pub feature_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub risky: bool,
}

impl DetectorModel {
    /// Decision threshold `T`, defined only when more flashing means more risk.
    pub fn threshold(&self) -> Option<f64> {
        (self.w > 0.0).then(|| -self.bias / self.w)
    }

    pub fn logit(&self, f: f64) -> f64 {
        self.w * f + self.bias
    }

    /// `probability > 0.5`, evaluated on the logit to avoid rounding at the
    /// boundary.
    pub fn is_risky(&self, f: f64) -> bool {
        self.logit(f) > 0.0
    }

    pub fn predict(&self, f: f64) -> Prediction {
        Prediction {
            probability: sigmoid(self.logit(f)),
            risky: self.is_risky(f),
        }
    }
}

pub fn predict(m: &DetectorModel, f: f64) -> (f64, bool) {
    let p = m.predict(f);
    (p.probability, p.risky)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean full-frame flash metric over all consecutive frame pairs (`F_avg`).
pub fn video_feature(v: &VideoBuffer) -> Result<f64> {
    if v.frame_count() < 2 {
        return Err(Error::Domain(format!(
            "video feature needs at least 2 frames, got {}",
            v.frame_count()
        )));
    }
    let mut prev = v.frame(0);
    let mut prev_lab: LabColor = frame_mean_lab(prev);
    let mut total = 0.0;
    for frame in v.frames().skip(1) {
        if frame.as_bytes() != prev.as_bytes() {
            let lab = frame_mean_lab(frame);
            total += flash_metric(prev_lab, lab).value();
            prev_lab = lab;
        }
        prev = frame;
    }
    Ok(total / (v.frame_count() - 1) as f64)
}

/// Full-batch gradient descent on the mean logistic loss.
///
/// Features are standardized internally, weights start at zero, and the
/// result is mapped back to raw feature units, so training is deterministic.
pub fn train_logistic(
    features: &[f64],
    labels: &[bool],
    epochs: usize,
    learning_rate: f64,
) -> Result<DetectorModel> {
    if features.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::Training(format!(
            "need at least {MIN_TRAINING_SAMPLES} samples, got {}",
            features.len()
        )));
    }
    if let Some(bad) = features.iter().find(|f| !f.is_finite()) {
        return Err(Error::Training(format!("non-finite feature {bad}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Training("labels contain a single class".into()));
    }

    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    let var = features.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let xs: Vec<f64> = features.iter().map(|f| (f - mean) / std).collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let (mut w, mut b) = (0.0f64, 0.0f64);
    for _ in 0..epochs {
        let (mut gw, mut gb) = (0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            let err = sigmoid(w * x + b) - y;
            gw += err * x;
            gb += err;
        }
        w -= learning_rate * gw / n;
        b -= learning_rate * gb / n;
    }

    let model = DetectorModel {
        w: w / std,
        bias: b - w * mean / std,
        feature_mean: mean,
        feature_std: std,
    };
    if !(model.w.is_finite() && model.bias.is_finite()) {
        return Err(Error::Training("training diverged".into()));
    }
    if model.w <= 0.0 {
        log::warn!(
            "trained weight {} is not positive: more flashing predicts less risk",
            model.w
        );
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{RASTER_HEIGHT, RASTER_WIDTH};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn separated() -> (Vec<f64>, Vec<bool>) {
        let safe = [1.0, 2.0, 1.0, 2.0, 1.5];
        let risky = [50.0, 60.0, 55.0, 50.0, 60.0];
        let features = safe.iter().chain(&risky).copied().collect();
        let labels = (0..10).map(|i| i >= 5).collect();
        (features, labels)
    }

    #[test]
    fn separable_data_recovers_labels() {
        let (f, l) = separated();
        let m = train_logistic(&f, &l, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE).unwrap();
        for (x, y) in f.iter().zip(&l) {
            assert_eq!(m.is_risky(*x), *y, "feature {x}");
        }
        let t = m.threshold().unwrap();
        assert!(t > 2.0 && t < 50.0, "T = {t}");
        assert_eq!(m, train_logistic(&f, &l, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE).unwrap());
    }

    #[test]
    fn inverted_labels_give_negative_weight() {
        let (f, l) = separated();
        let inverted: Vec<bool> = l.iter().map(|b| !b).collect();
        let m = train_logistic(&f, &inverted, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE).unwrap();
        assert!(m.w < 0.0);
        assert_eq!(m.threshold(), None);
    }

    #[test]
    fn training_preconditions() {
        let (f, l) = separated();
        assert!(train_logistic(&f, &[true; 10], 10, 0.1).is_err());
        assert!(train_logistic(&f[..4], &l[..4], 10, 0.1).is_err());
        assert!(train_logistic(&f, &l[..9], 10, 0.1).is_err());
    }

    #[test]
    fn prediction_boundary() {
        let m = DetectorModel {
            w: 2.0,
            bias: -6.0,
            feature_mean: 0.0,
            feature_std: 1.0,
        };
        assert_eq!(m.threshold(), Some(3.0));
        assert_eq!(predict(&m, 3.0), (0.5, false));
        assert!(!predict(&m, 0.0).1);
        assert!(predict(&m, 3.0001).1);
    }

    #[test]
    fn feature_examples() {
        let (w, h) = (RASTER_WIDTH, RASTER_HEIGHT);
        let black = vec![0u8; w * h * 3];
        let white = vec![255u8; w * h * 3];
        let still = VideoBuffer::from_frames(w, h, 30, vec![black.clone(); 30]).unwrap();
        assert_eq!(video_feature(&still).unwrap(), 0.0);

        let strobe: Vec<_> = (0..30).map(|i| if i % 2 == 0 { &black } else { &white }).collect();
        let v = VideoBuffer::from_frames(w, h, 30, strobe).unwrap();
        assert_abs_diff_eq!(video_feature(&v).unwrap(), 100.0, epsilon = 0.01);

        // Switching every 15th frame over 31 frames: two transitions in 30 pairs.
        let slow: Vec<_> = (0..31).map(|i| if (i / 15) % 2 == 0 { &black } else { &white }).collect();
        let v = VideoBuffer::from_frames(w, h, 30, slow).unwrap();
        assert_abs_diff_eq!(video_feature(&v).unwrap(), 100.0 * 2.0 / 30.0, epsilon = 0.01);

        let one = VideoBuffer::from_frames(w, h, 30, [black]).unwrap();
        assert!(video_feature(&one).is_err());
    }

    proptest! {
        #[test]
        fn verdict_invariant_under_positive_rescaling(
            w in -10.0..10.0f64, bias in -50.0..50.0f64, f in 0.0..200.0f64, s in 0.01..100.0f64
        ) {
            let m = DetectorModel { w, bias, feature_mean: 0.0, feature_std: 1.0 };
            let scaled = DetectorModel { w: w * s, bias: bias * s, ..m };
            let z = m.logit(f);
            // Skip points within rounding distance of the boundary.
            prop_assume!(z.abs() > 1e-9 * (1.0 + (w * f).abs() + bias.abs()));
            prop_assert_eq!(m.is_risky(f), scaled.is_risky(f));
        }
    }
}
