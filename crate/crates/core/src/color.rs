//! sRGB to CIELAB conversion, WCAG relative luminance and the Lab flash metric.
//!
//! Conversions use the IEC 61966-2-1 sRGB transfer curve, the sRGB→XYZ
//! matrix and a D65 / 2° white taken as the matrix row sums, so every
//! neutral gray maps to `a = b = 0` and white maps to `L = 100`.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::video::Frame;

pub type Rgb = [u8; 3];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

/// WCAG relative-luminance weights.
const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

const EPSILON: f64 = 216.0 / 24389.0; // (6/29)^3
const DELTA: f64 = 6.0 / 29.0;

static LINEAR: LazyLock<[f64; 256]> = LazyLock::new(|| {
    let mut lut = [0.0; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = srgb_to_linear(i as f64 / 255.0);
    }
    lut
});

/// Per-channel luminance contributions, so `Y = R[r] + G[g] + B[b]`.
static LUMA: LazyLock<[[f64; 256]; 3]> = LazyLock::new(|| {
    let lin = &*LINEAR;
    let mut lut = [[0.0; 256]; 3];
    for (c, table) in lut.iter_mut().enumerate() {
        for (i, v) in table.iter_mut().enumerate() {
            *v = LUMA_WEIGHTS[c] * lin[i];
        }
    }
    lut
});

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn linearize(channel: u8) -> f64 {
    LINEAR[channel as usize]
}

/// A point in CIELAB.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        LabColor { l, a, b }
    }

    /// Chroma `sqrt(a² + b²)`.
    pub fn chroma(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

pub fn rgb_to_lab(rgb: Rgb) -> LabColor {
    let lin = [linearize(rgb[0]), linearize(rgb[1]), linearize(rgb[2])];
    let xyz = |row: &[f64; 3]| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    let fx = lab_f(xyz(&RGB_TO_XYZ[0]) / WHITE[0]);
    let fy = lab_f(xyz(&RGB_TO_XYZ[1]) / WHITE[1]);
    let fz = lab_f(xyz(&RGB_TO_XYZ[2]) / WHITE[2]);
    LabColor {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Inverse of [`rgb_to_lab`]. Out-of-gamut channels are clipped to 0..=255,
/// so the round trip is lossy outside the sRGB gamut.
pub fn lab_to_rgb(lab: LabColor) -> Rgb {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let mut out = [0u8; 3];
    for (c, row) in XYZ_TO_RGB.iter().enumerate() {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        let encoded = linear_to_srgb(lin.clamp(0.0, 1.0));
        out[c] = (encoded * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// WCAG relative luminance in `[0, 1]`.
#[inline]
pub fn relative_luminance(rgb: Rgb) -> f64 {
    let lut = &*LUMA;
    lut[0][rgb[0] as usize] + lut[1][rgb[1] as usize] + lut[2][rgb[2] as usize]
}

/// Amount of flash between two colors one frame step apart, in Lab units
/// per frame.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlashMetric(f64);

impl FlashMetric {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `|ΔL| + sqrt(Δa² + Δb²)`.
///
/// The lightness term is an absolute value so that brightening and
/// darkening flashes score the same and cannot cancel the chroma term.
pub fn flash_metric(prev: LabColor, cur: LabColor) -> FlashMetric {
    let dl = (cur.l - prev.l).abs();
    let da = cur.a - prev.a;
    let db = cur.b - prev.b;
    FlashMetric(dl + da.hypot(db))
}

/// Mean of per-pixel Lab values over the pixels selected by `mask`.
pub fn region_mean_lab(frame: Frame<'_>, mask: &Mask) -> Result<LabColor> {
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(Error::Domain(format!(
            "mask is {}x{} but frame is {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    let mut acc = LabAccumulator::default();
    for index in mask.indices() {
        acc.push(frame.pixel_at(index));
    }
    acc.mean()
        .ok_or_else(|| Error::Domain("mask selects no pixels".into()))
}

/// Mean Lab over every pixel of the frame.
pub fn frame_mean_lab(frame: Frame<'_>) -> LabColor {
    let mut acc = LabAccumulator::default();
    for px in frame.pixels() {
        acc.push(px);
    }
    acc.mean().expect("frames are never empty")
}

/// Running Lab sum that reuses the previous conversion for runs of equal
/// pixels.
#[derive(Default)]
struct LabAccumulator {
    last: Option<(Rgb, LabColor)>,
    sum: [f64; 3],
    count: usize,
}

impl LabAccumulator {
    #[inline]
    fn push(&mut self, px: Rgb) {
        let lab = match self.last {
            Some((rgb, lab)) if rgb == px => lab,
            _ => {
                let lab = rgb_to_lab(px);
                self.last = Some((px, lab));
                lab
            }
        };
        self.sum[0] += lab.l;
        self.sum[1] += lab.a;
        self.sum[2] += lab.b;
        self.count += 1;
    }

    fn mean(&self) -> Option<LabColor> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            LabColor::new(self.sum[0] / n, self.sum[1] / n, self.sum[2] / n)
        })
    }
}
