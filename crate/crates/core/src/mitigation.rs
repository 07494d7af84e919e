//! Flash mitigation.
//!
//! Two filters act on the regions the trigger array flags: temporal color
//! smoothing, which blends the running `n`-frame mean color of the region
//! over the current frame, and adaptive darkening, which lays a black
//! overlay of opacity `k` percent on the region. `k` comes from a linear
//! model fitted offline on the minimum darkening that makes white-flash
//! injection videos pass the oracle.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{lab_to_rgb, region_mean_lab, rgb_to_lab, LabColor};
use crate::detector::{DetectorModel, GridDims, TriggerArray};
use crate::error::{Error, Result};
use crate::manifest::{InjectionRow, KSample};
use crate::mask::{Mask, Rect};
use crate::oracle::{self, ChannelLut, FlashReport};
use crate::synth::{gen_injection_video, InjectionVideoSpec};
use crate::video::{self, Frame, VideoBuffer};

pub const DEFAULT_ASSUMED_INTENSITY: f64 = 70.0;
pub const DEFAULT_SMOOTHING_FRAMES: usize = 15;
pub const DEFAULT_OVERLAY_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MitigationConfig {
    /// Flash intensity (percent white overlay) assumed when predicting `k`.
    pub assumed_intensity: f64,
    pub smoothing_frames: usize,
    pub overlay_alpha: f64,
    pub darkening: bool,
    pub smoothing: bool,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        MitigationConfig {
            assumed_intensity: DEFAULT_ASSUMED_INTENSITY,
            smoothing_frames: DEFAULT_SMOOTHING_FRAMES,
            overlay_alpha: DEFAULT_OVERLAY_ALPHA,
            darkening: true,
            smoothing: true,
        }
    }
}

impl MitigationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(10.0..=90.0).contains(&self.assumed_intensity) {
            return Err(Error::Config(format!(
                "assumed_intensity {} outside 10..=90",
                self.assumed_intensity
            )));
        }
        if self.smoothing_frames == 0 {
            return Err(Error::Config("smoothing_frames must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.overlay_alpha) {
            return Err(Error::Config(format!(
                "overlay_alpha {} outside 0..=1",
                self.overlay_alpha
            )));
        }
        Ok(())
    }
}

#[inline]
fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Channel map of a black overlay at opacity `k` percent:
/// `c' = round(c·(100 − k)/100)`.
pub fn darkening_lut(k: f64) -> Result<ChannelLut> {
    if !(0.0..=100.0).contains(&k) {
        return Err(Error::Domain(format!("k-level {k} outside 0..=100")));
    }
    let mut lut = [0u8; 256];
    for (c, v) in lut.iter_mut().enumerate() {
        *v = round_half_up(c as f64 * (100.0 - k) / 100.0);
    }
    Ok(lut)
}

fn apply_lut_masked(data: &mut [u8], mask: &Mask, lut: &[ChannelLut; 3]) {
    for (i, px) in data.chunks_exact_mut(3).enumerate() {
        if mask.contains_index(i) {
            for c in 0..3 {
                px[c] = lut[c][px[c] as usize];
            }
        }
    }
}

/// Darkens the masked pixels of `frame` by `k` percent.
pub fn apply_darkening(frame: Frame<'_>, mask: &Mask, k: f64) -> Result<Vec<u8>> {
    check_mask(frame, mask)?;
    let lut = darkening_lut(k)?;
    let mut out = frame.as_bytes().to_vec();
    apply_lut_masked(&mut out, mask, &[lut; 3]);
    Ok(out)
}

fn check_mask(frame: Frame<'_>, mask: &Mask) -> Result<()> {
    if (mask.width(), mask.height()) != (frame.width(), frame.height()) {
        return Err(Error::Domain(format!(
            "mask is {}x{} but frame is {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    Ok(())
}

/// Oracle report of `v` after full-frame darkening at `k`, without
/// materializing the darkened copy.
pub fn report_after_darkening(v: &VideoBuffer, k: u8) -> Result<FlashReport> {
    let lut = darkening_lut(f64::from(k))?;
    oracle::scan(v, Some(&lut))
}

pub fn risky_after_darkening(v: &VideoBuffer, k: u8) -> Result<bool> {
    Ok(report_after_darkening(v, k)?.risky)
}

/// Smallest integer `k` whose full-frame darkening makes `v` oracle-safe.
///
/// Scans multiples of 10 upward, then bisects inside the first safe decade.
/// The result satisfies `safe(k) && (k == 0 || risky(k − 1))`; `k = 100`
/// turns every frame black and always terminates the scan.
pub fn find_min_k(v: &VideoBuffer) -> Result<u8> {
    if !risky_after_darkening(v, 0)? {
        return Ok(0);
    }
    let mut lo = 0u8; // known risky
    let mut hi = 100u8; // known safe
    for k in (10..=100).step_by(10) {
        if risky_after_darkening(v, k)? {
            lo = k;
        } else {
            hi = k;
            break;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if risky_after_darkening(v, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Minimum k for every injection video. Rows with an empty `path` are
/// regenerated from their spec columns; others are read relative to
/// `base_dir`. Output follows row order.
pub fn run_k_sweep(rows: &[InjectionRow], base_dir: &Path) -> Result<Vec<KSample>> {
    rows.par_iter()
        .map(|row| {
            let spec = InjectionVideoSpec::from_row(row);
            let v = if row.path.is_empty() {
                gen_injection_video(&spec)?
            } else {
                video::read_video(base_dir.join(&row.path))?
            };
            let lab = rgb_to_lab(spec.base_color);
            Ok(KSample {
                base_r: row.base_r,
                base_g: row.base_g,
                base_b: row.base_b,
                l: lab.l,
                a: lab.a,
                b: lab.b,
                intensity: row.intensity,
                min_k: find_min_k(&v)?,
            })
        })
        .collect()
}

/// Linear predictor of the minimum darkening `k` from base color and flash
/// intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KLevelModel {
    pub b0: f64,
    #[serde(rename = "bL")]
    pub b_l: f64,
    #[serde(rename = "ba")]
    pub b_a: f64,
    #[serde(rename = "bb")]
    pub b_b: f64,
    #[serde(rename = "bI")]
    pub b_i: f64,
    /// Pearson correlation between observed minimum k and L*; `None` when
    /// either is constant.
    #[serde(rename = "pearson_kL")]
    pub pearson_k_l: Option<f64>,
}

impl KLevelModel {
    pub fn predict(&self, base: LabColor, intensity: f64) -> f64 {
        let k = self.b0 + self.b_l * base.l + self.b_a * base.a + self.b_b * base.b + self.b_i * intensity;
        k.clamp(0.0, 100.0)
    }
}

/// `clamp(β · (1, L*, a*, b*, assumed_intensity), 0, 100)`.
pub fn predict_k(model: &KLevelModel, base: LabColor, cfg: &MitigationConfig) -> f64 {
    model.predict(base, cfg.assumed_intensity)
}

const COLUMNS: [&str; 5] = ["intercept", "L*", "a*", "b*", "intensity"];

/// Ordinary least squares of `min_k` on `(1, L*, a*, b*, intensity)`.
///
/// Slopes are solved from the normal equations of the standardized
/// predictors (a correlation matrix) by Gaussian elimination with partial
/// pivoting; the intercept is recovered from the means. A pivot below
/// `1e-10` marks its column as collinear with the columns before it.
pub fn fit_k_model(samples: &[KSample]) -> Result<KLevelModel> {
    if samples.len() < 10 {
        return Err(Error::Fit(format!(
            "need at least 10 samples, got {}",
            samples.len()
        )));
    }
    let first_l = samples[0].l;
    if samples.iter().all(|s| s.l == first_l) {
        return Err(Error::Fit("samples span a single L* value".into()));
    }

    let n = samples.len() as f64;
    let x: Vec<[f64; 4]> = samples
        .iter()
        .map(|s| [s.l, s.a, s.b, f64::from(s.intensity)])
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| f64::from(s.min_k)).collect();
    let y_mean = y.iter().sum::<f64>() / n;

    let mut mean = [0.0; 4];
    let mut sd = [0.0; 4];
    for j in 0..4 {
        mean[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
        sd[j] = (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
    }
    let constant: Vec<&'static str> = (0..4).filter(|&j| sd[j] == 0.0).map(|j| COLUMNS[j + 1]).collect();
    if !constant.is_empty() {
        return Err(Error::RankDeficient { columns: constant });
    }

    // Augmented normal equations [ZᵀZ/n | Zᵀy/n] over standardized predictors.
    let z = |r: &[f64; 4], j: usize| (r[j] - mean[j]) / sd[j];
    let mut a = [[0.0f64; 5]; 4];
    for (r, &yi) in x.iter().zip(&y) {
        for i in 0..4 {
            let zi = z(r, i);
            for j in 0..4 {
                a[i][j] += zi * z(r, j) / n;
            }
            a[i][4] += zi * (yi - y_mean) / n;
        }
    }

    let mut deficient = Vec::new();
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-10 {
            deficient.push(COLUMNS[col + 1]);
            continue;
        }
        a.swap(col, pivot);
        for row in 0..4 {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..5 {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }

    let slopes: Vec<f64> = (0..4).map(|j| a[j][4] / a[j][j] / sd[j]).collect();
    let b0 = y_mean - (0..4).map(|j| slopes[j] * mean[j]).sum::<f64>();
    let l: Vec<f64> = samples.iter().map(|s| s.l).collect();
    Ok(KLevelModel {
        b0,
        b_l: slopes[0],
        b_a: slopes[1],
        b_b: slopes[2],
        b_i: slopes[3],
        pearson_k_l: pearson(&y, &l),
    })
}

/// Pearson correlation coefficient; `None` if either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Running mean of the last `n` region colors and the overlay opacity.
#[derive(Debug, Clone)]
pub struct SmootherState {
    n: usize,
    alpha: f64,
    buffer: VecDeque<LabColor>,
}

impl SmootherState {
    pub fn new(n: usize, alpha: f64) -> Self {
        assert!(n >= 1, "smoothing window must hold at least one frame");
        SmootherState {
            n,
            alpha,
            buffer: VecDeque::with_capacity(n),
        }
    }

    pub fn push(&mut self, color: LabColor) {
        if self.buffer.len() == self.n {
            self.buffer.pop_front();
        }
        self.buffer.push_back(color);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn clear(&mut self) {
        self.buffer.clear();
    }

    pub fn mean(&self) -> Option<LabColor> {
        if self.buffer.is_empty() {
            return None;
        }
        let k = self.buffer.len() as f64;
        let (l, a, b) = self
            .buffer
            .iter()
            .fold((0.0, 0.0, 0.0), |(l, a, b), c| (l + c.l, a + c.a, b + c.b));
        Some(LabColor::new(l / k, a / k, b / k))
    }

    fn blend(&self, data: &mut [u8], mask: &Mask) {
        let Some(mean) = self.mean() else { return };
        let overlay = lab_to_rgb(mean);
        let mut lut = [[0u8; 256]; 3];
        for c in 0..3 {
            let o = f64::from(overlay[c]);
            for (v, slot) in lut[c].iter_mut().enumerate() {
                *slot = round_half_up((1.0 - self.alpha) * v as f64 + self.alpha * o);
            }
        }
        apply_lut_masked(data, mask, &lut);
    }
}

/// Pushes the masked region's mean color and blends the running mean over
/// the masked pixels: `c' = round((1 − α)·c + α·overlay)`.
pub fn temporal_smooth(state: &mut SmootherState, frame: Frame<'_>, mask: &Mask) -> Result<Vec<u8>> {
    check_mask(frame, mask)?;
    let mut out = frame.as_bytes().to_vec();
    if mask.is_empty() {
        return Ok(out);
    }
    state.push(region_mean_lab(frame, mask)?);
    state.blend(&mut out, mask);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskLogEntry {
    pub frame: usize,
    pub rects: Vec<Rect>,
    /// Darkening applied to the mask, absent when nothing was masked.
    pub k: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Mitigated {
    pub video: VideoBuffer,
    pub log: Vec<MaskLogEntry>,
}

/// Detect-then-mitigate over a whole video, frame by frame.
///
/// Each frame updates the trigger array; active nodes are interpolated into
/// a mask. Inside the mask the frame is smoothed toward the mean color of
/// the mask over the last `n` input frames and then darkened with `k`
/// predicted from that same mean color. Pixels outside the mask are copied
/// unchanged.
pub fn mitigate_stream(
    v: &VideoBuffer,
    detector: &DetectorModel,
    k_model: &KLevelModel,
    cfg: &MitigationConfig,
    grid: GridDims,
) -> Result<Mitigated> {
    cfg.validate()?;
    let (w, h) = (v.width(), v.height());
    let mut array = TriggerArray::new(w, h, v.fps(), grid, *detector)?;
    let mut smoother = SmootherState::new(cfg.smoothing_frames, cfg.overlay_alpha);
    let mut current: Option<(Vec<Rect>, Mask)> = None;
    let mut data = Vec::with_capacity(v.as_bytes().len());
    let mut log = Vec::with_capacity(v.frame_count());

    for (i, frame) in v.frames().enumerate() {
        array.update(frame);
        let rects = array.regions();
        if rects.is_empty() {
            current = None;
            smoother.clear();
            data.extend_from_slice(frame.as_bytes());
            log.push(MaskLogEntry {
                frame: i,
                rects,
                k: None,
            });
            continue;
        }

        if current.as_ref().is_none_or(|(r, _)| *r != rects) {
            // New region: seed the running mean from the preceding input
            // frames as seen through the new mask.
            let mask = Mask::from_rects(w, h, &rects);
            smoother.clear();
            for j in i.saturating_sub(cfg.smoothing_frames - 1)..i {
                smoother.push(region_mean_lab(v.frame(j), &mask)?);
            }
            current = Some((rects.clone(), mask));
        }
        let (_, mask) = current.as_ref().expect("mask set above");

        smoother.push(region_mean_lab(frame, mask)?);
        let mut out = frame.as_bytes().to_vec();
        if cfg.smoothing {
            smoother.blend(&mut out, mask);
        }
        let base = smoother.mean().expect("smoother holds the current frame");
        let k = predict_k(k_model, base, cfg);
        if cfg.darkening {
            let lut = darkening_lut(k)?;
            apply_lut_masked(&mut out, mask, &[lut; 3]);
        }
        data.extend_from_slice(&out);
        log.push(MaskLogEntry {
            frame: i,
            rects,
            k: Some(k),
        });
    }

    Ok(Mitigated {
        video: VideoBuffer::new(w, h, v.fps(), data)?,
        log,
    })
}

/// True when every pixel outside the union of all logged masks is
/// bit-identical between `input` and `output`.
pub fn unmasked_pixels_unchanged(input: &VideoBuffer, output: &VideoBuffer, log: &[MaskLogEntry]) -> bool {
    if (input.width(), input.height(), input.frame_count())
        != (output.width(), output.height(), output.frame_count())
    {
        return false;
    }
    let rects: Vec<Rect> = log.iter().flat_map(|e| e.rects.iter().copied()).collect();
    let ever = Mask::from_rects(input.width(), input.height(), &rects);
    input.frames().zip(output.frames()).all(|(a, b)| {
        a.as_bytes()
            .chunks_exact(3)
            .zip(b.as_bytes().chunks_exact(3))
            .enumerate()
            .all(|(i, (pa, pb))| ever.contains_index(i) || pa == pb)
    })
}

/// Percent of the pre-mitigation flash frames no longer flagged afterwards.
pub fn efficacy(pre: &FlashReport, post: &FlashReport) -> Result<f64> {
    let before = pre.flash_frame_indices.len();
    if before == 0 {
        return Err(Error::Domain(
            "efficacy is undefined without pre-mitigation flash frames".into(),
        ));
    }
    Ok(100.0 * (1.0 - post.flash_frame_indices.len() as f64 / before as f64))
}
