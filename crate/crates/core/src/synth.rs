//! Deterministic synthetic corpora.
//!
//! Two generators are provided: the trigger-detection corpus (flashing
//! backgrounds and centered shapes with randomized rates, sizes and colors)
//! and the white-flash injection corpus (a solid base color with a partially
//! transparent white frame three times per second).
//!
//! All randomness comes from SplitMix64 streams. A corpus seed drives one
//! stream that yields a 64-bit seed per video, and each video's parameters are
//! drawn from its own SplitMix64 stream, so every video is a pure function of
//! its seed.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::detector::video_feature;
use crate::error::{Error, Result};
use crate::manifest::{self, DatasetRow, InjectionRow};
use crate::oracle::{self, RASTER_HEIGHT, RASTER_WIDTH};
use crate::video::{self, VideoBuffer};

pub const FPS: u32 = 30;
pub const DURATION_SECONDS: u32 = 10;
pub const FRAME_COUNT: usize = (FPS * DURATION_SECONDS) as usize;
pub const MAX_RATE: u32 = 15;
pub const INJECTION_RATE: u32 = 3;
pub const INJECTION_INTENSITIES: [u8; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerVideoSpec {
    pub seed: u64,
    pub background_flashing: bool,
    /// Complete flashes (up + down) per second.
    pub background_rate: u32,
    pub has_shape: bool,
    pub shape_kind: ShapeKind,
    /// Circle diameter as a fraction of the frame height; rectangles span
    /// this fraction of both frame dimensions.
    pub shape_size: f64,
    pub shape_flashing: bool,
    pub shape_rate: u32,
    pub background_colors: [Rgb; 2],
    pub shape_colors: [Rgb; 2],
}

impl TriggerVideoSpec {
    /// Draws every field from a SplitMix64 stream seeded with `seed`.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        TriggerVideoSpec {
            seed,
            background_flashing: rng.gen(),
            background_rate: rng.gen_range(1..=MAX_RATE),
            has_shape: rng.gen(),
            shape_kind: if rng.gen() {
                ShapeKind::Circle
            } else {
                ShapeKind::Rectangle
            },
            shape_size: f64::from(rng.gen_range(10u32..=90)) / 100.0,
            shape_flashing: rng.gen(),
            shape_rate: rng.gen_range(1..=MAX_RATE),
            background_colors: [rng.gen(), rng.gen()],
            shape_colors: [rng.gen(), rng.gen()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("background_rate", self.background_rate), ("shape_rate", self.shape_rate)] {
            if !(1..=MAX_RATE).contains(&rate) {
                return Err(Error::InvalidSpec(format!("{name} {rate} outside 1..={MAX_RATE}")));
            }
        }
        if !(0.1..=0.9).contains(&self.shape_size) {
            return Err(Error::InvalidSpec(format!(
                "shape_size {} outside 0.1..=0.9",
                self.shape_size
            )));
        }
        Ok(())
    }

    pub fn to_row(&self, path: String, oracle_risky: bool, f_avg: f64) -> DatasetRow {
        DatasetRow {
            path,
            background_flashing: self.background_flashing,
            background_rate: self.background_rate,
            has_shape: self.has_shape,
            shape_kind: self.shape_kind,
            shape_size: self.shape_size,
            shape_flashing: self.shape_flashing,
            shape_rate: self.shape_rate,
            oracle_risky,
            f_avg,
        }
    }
}

/// Square-wave phase of a signal flashing `rate` times per second: 0 or 1.
///
/// Phase is `⌊2·rate·(i+1)/fps⌋ mod 2`, which puts exactly `2·rate` whole-frame
/// transitions in every second whenever `2·rate < fps`.
pub fn square_wave(frame: usize, rate: u32, fps: u32) -> usize {
    (2 * rate as usize * (frame + 1) / fps as usize) % 2
}

/// Pixels covered by the centered shape of `spec`.
pub fn shape_mask(spec: &TriggerVideoSpec, width: usize, height: usize) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    if !spec.has_shape {
        return mask;
    }
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    match spec.shape_kind {
        ShapeKind::Circle => {
            let r = spec.shape_size * width.min(height) as f64 / 2.0;
            for y in 0..height {
                for x in 0..width {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    mask[y * width + x] = dx * dx + dy * dy <= r * r;
                }
            }
        }
        ShapeKind::Rectangle => {
            let w = (spec.shape_size * width as f64).round() as usize;
            let h = (spec.shape_size * height as f64).round() as usize;
            let (x0, y0) = ((width - w) / 2, (height - h) / 2);
            for y in y0..y0 + h {
                mask[y * width + x0..y * width + x0 + w].fill(true);
            }
        }
    }
    mask
}

pub fn gen_trigger_video(spec: &TriggerVideoSpec) -> Result<VideoBuffer> {
    spec.validate()?;
    let (w, h) = (RASTER_WIDTH, RASTER_HEIGHT);
    let shape = shape_mask(spec, w, h);
    // Only four distinct frames exist: (background phase, shape phase).
    let mut templates: [[Option<Vec<u8>>; 2]; 2] = Default::default();
    let mut data = Vec::with_capacity(w * h * 3 * FRAME_COUNT);
    for i in 0..FRAME_COUNT {
        let bg = if spec.background_flashing {
            square_wave(i, spec.background_rate, FPS)
        } else {
            0
        };
        let sh = if spec.shape_flashing {
            square_wave(i, spec.shape_rate, FPS)
        } else {
            0
        };
        let frame = templates[bg][sh].get_or_insert_with(|| {
            let (bgc, shc) = (spec.background_colors[bg], spec.shape_colors[sh]);
            shape
                .iter()
                .flat_map(|&inside| if inside { shc } else { bgc })
                .collect()
        });
        data.extend_from_slice(frame);
    }
    VideoBuffer::new(w, h, FPS, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionVideoSpec {
    pub seed: u64,
    pub base_color: Rgb,
    /// White overlay opacity in percent, a multiple of 10 in 10..=90.
    pub intensity: u8,
}

impl InjectionVideoSpec {
    pub fn validate(&self) -> Result<()> {
        if !INJECTION_INTENSITIES.contains(&self.intensity) {
            return Err(Error::InvalidSpec(format!(
                "intensity {} is not a multiple of 10 in 10..=90",
                self.intensity
            )));
        }
        Ok(())
    }

    pub fn to_row(&self, path: String) -> InjectionRow {
        InjectionRow {
            path,
            seed: self.seed,
            base_r: self.base_color[0],
            base_g: self.base_color[1],
            base_b: self.base_color[2],
            intensity: self.intensity,
        }
    }

    pub fn from_row(row: &InjectionRow) -> Self {
        InjectionVideoSpec {
            seed: row.seed,
            base_color: [row.base_r, row.base_g, row.base_b],
            intensity: row.intensity,
        }
    }
}

/// `c + (255 − c)·intensity/100`, rounded half up.
pub fn composite_white(c: u8, intensity: u8) -> u8 {
    let c = u32::from(c);
    (c + ((255 - c) * u32::from(intensity) + 50) / 100) as u8
}

pub fn gen_injection_video(spec: &InjectionVideoSpec) -> Result<VideoBuffer> {
    spec.validate()?;
    let n = RASTER_WIDTH * RASTER_HEIGHT;
    let base = spec.base_color.repeat(n);
    let flash = spec
        .base_color
        .map(|c| composite_white(c, spec.intensity))
        .repeat(n);
    let rate = INJECTION_RATE as usize;
    let fps = FPS as usize;
    let mut data = Vec::with_capacity(n * 3 * FRAME_COUNT);
    for i in 0..FRAME_COUNT {
        // One frame per 1/rate seconds, on the last frame of each period.
        let flashed = rate * (i + 1) / fps > rate * i / fps;
        data.extend_from_slice(if flashed { &flash } else { &base });
    }
    VideoBuffer::new(RASTER_WIDTH, RASTER_HEIGHT, FPS, data)
}

/// Per-video seeds drawn from the corpus stream.
pub fn video_seeds(corpus_seed: u64, n: usize) -> Vec<u64> {
    let mut stream = SplitMix64::seed_from_u64(corpus_seed);
    (0..n).map(|_| stream.gen()).collect()
}

pub fn trigger_specs(n: usize, seed: u64) -> Vec<TriggerVideoSpec> {
    video_seeds(seed, n)
        .into_iter()
        .map(TriggerVideoSpec::from_seed)
        .collect()
}

/// `n_colors` random base colors, each paired with every intensity.
pub fn injection_specs(n_colors: usize, intensities: &[u8], seed: u64) -> Vec<InjectionVideoSpec> {
    video_seeds(seed, n_colors)
        .into_iter()
        .flat_map(|color_seed| {
            let base_color: Rgb = SplitMix64::seed_from_u64(color_seed).gen();
            intensities.iter().map(move |&intensity| InjectionVideoSpec {
                seed: color_seed,
                base_color,
                intensity,
            })
        })
        .collect()
}

pub fn trigger_video_path(index: usize) -> String {
    format!("videos/trigger_{index:04}.fgrv")
}

/// Oracle label and feature of one generated trigger video.
pub fn label_trigger_video(spec: &TriggerVideoSpec) -> Result<(VideoBuffer, bool, f64)> {
    let v = gen_trigger_video(spec)?;
    let (risky, _) = oracle::classify_risk(&v)?;
    let f_avg = video_feature(&v)?;
    Ok((v, risky, f_avg))
}

/// Generates, labels and (optionally) writes `specs`. Rows come back in
/// spec order regardless of scheduling.
pub fn build_dataset(
    specs: &[TriggerVideoSpec],
    out_dir: &Path,
    write_videos: bool,
) -> Result<Vec<DatasetRow>> {
    if write_videos {
        let dir = out_dir.join("videos");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let (v, risky, f_avg) = label_trigger_video(spec)?;
            let path = trigger_video_path(i);
            if write_videos {
                video::write_video(&v, out_dir.join(&path))?;
            }
            Ok(spec.to_row(path, risky, f_avg))
        })
        .collect()
}

/// Writes `n` labelled trigger videos, `manifest.csv` and `specs.jsonl`
/// (the full per-video parameters) under `out_dir`.
pub fn gen_dataset(n: usize, seed: u64, out_dir: &Path, write_videos: bool) -> Result<Vec<DatasetRow>> {
    if n == 0 {
        return Err(Error::InvalidSpec("dataset size must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let specs = trigger_specs(n, seed);
    let rows = build_dataset(&specs, out_dir, write_videos)?;
    manifest::write_csv(out_dir.join("manifest.csv"), &rows)?;
    manifest::write_json_lines(out_dir.join("specs.jsonl"), &specs)?;
    Ok(rows)
}

/// Writes the injection manifest (and optionally the videos) under `out_dir`.
pub fn gen_injection(
    n_colors: usize,
    intensities: &[u8],
    seed: u64,
    out_dir: &Path,
    write_videos: bool,
) -> Result<Vec<InjectionRow>> {
    let specs = injection_specs(n_colors, intensities, seed);
    for s in &specs {
        s.validate()?;
    }
    let dir = out_dir.join("videos");
    fs::create_dir_all(if write_videos { &dir } else { out_dir })
        .map_err(|e| Error::io(out_dir, e))?;
    let rows = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            if !write_videos {
                return Ok(spec.to_row(String::new()));
            }
            let path = format!("videos/injection_{i:04}.fgrv");
            video::write_video(&gen_injection_video(spec)?, out_dir.join(&path))?;
            Ok(spec.to_row(path))
        })
        .collect::<Result<Vec<_>>>()?;
    manifest::write_csv(out_dir.join("injection.csv"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::count_flashes;
    use proptest::prelude::*;

    fn base_spec() -> TriggerVideoSpec {
        TriggerVideoSpec {
            seed: 0,
            background_flashing: false,
            background_rate: 1,
            has_shape: false,
            shape_kind: ShapeKind::Circle,
            shape_size: 0.5,
            shape_flashing: false,
            shape_rate: 1,
            background_colors: [[0, 0, 0], [255, 255, 255]],
            shape_colors: [[0, 0, 0], [255, 255, 255]],
        }
    }

    #[test]
    fn static_spec_repeats_one_frame() {
        let v = gen_trigger_video(&base_spec()).unwrap();
        assert_eq!(v.frame_count(), FRAME_COUNT);
        assert_eq!((v.width(), v.height(), v.fps()), (341, 256, 30));
        let first = v.frame(0);
        assert!(v.frames().all(|f| f == first));
    }

    #[test]
    fn fast_background_strobe_is_risky() {
        let spec = TriggerVideoSpec {
            background_flashing: true,
            background_rate: 15,
            ..base_spec()
        };
        assert!(count_flashes(&gen_trigger_video(&spec).unwrap()).unwrap().risky);
    }

    #[test]
    fn small_flashing_shape_is_safe() {
        let spec = TriggerVideoSpec {
            has_shape: true,
            shape_size: 0.1,
            shape_flashing: true,
            shape_rate: 15,
            background_colors: [[90, 90, 90]; 2],
            ..base_spec()
        };
        let mask = shape_mask(&spec, RASTER_WIDTH, RASTER_HEIGHT);
        let fraction = mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64;
        assert!(fraction < 0.25);
        let report = count_flashes(&gen_trigger_video(&spec).unwrap()).unwrap();
        assert!(report.events.is_empty() && !report.risky);
    }

    #[test]
    fn large_flashing_rectangle_is_risky() {
        let spec = TriggerVideoSpec {
            has_shape: true,
            shape_kind: ShapeKind::Rectangle,
            shape_size: 0.6,
            shape_flashing: true,
            shape_rate: 8,
            background_colors: [[90, 90, 90]; 2],
            ..base_spec()
        };
        let mask = shape_mask(&spec, RASTER_WIDTH, RASTER_HEIGHT);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 205 * 154);
        assert!(count_flashes(&gen_trigger_video(&spec).unwrap()).unwrap().risky);
    }

    #[test]
    fn square_wave_transition_counts() {
        for rate in 1..=MAX_RATE {
            let transitions = (1..FRAME_COUNT)
                .filter(|&i| square_wave(i, rate, FPS) != square_wave(i - 1, rate, FPS))
                .count();
            let expected = (2 * rate as usize * DURATION_SECONDS as usize).min(FRAME_COUNT - 1);
            assert_eq!(transitions, expected, "rate {rate}");
        }
    }

    #[test]
    fn spec_draws_are_seed_pure_and_in_range() {
        for seed in 0..200 {
            let s = TriggerVideoSpec::from_seed(seed);
            assert_eq!(s, TriggerVideoSpec::from_seed(seed));
            s.validate().unwrap();
        }
        assert_ne!(TriggerVideoSpec::from_seed(1), TriggerVideoSpec::from_seed(2));
        assert!(TriggerVideoSpec { shape_rate: 0, ..base_spec() }.validate().is_err());
        assert!(TriggerVideoSpec { shape_size: 0.95, ..base_spec() }.validate().is_err());
    }

    #[test]
    fn injection_compositing() {
        assert_eq!(composite_white(0, 90), 230);
        assert_eq!(composite_white(255, 40), 255);
        assert_eq!(composite_white(100, 50), 178);
        let spec = InjectionVideoSpec {
            seed: 1,
            base_color: [0, 0, 0],
            intensity: 90,
        };
        let v = gen_injection_video(&spec).unwrap();
        let flashed: Vec<usize> = (0..FRAME_COUNT)
            .filter(|&i| v.frame(i).pixel(0, 0) != [0, 0, 0])
            .collect();
        assert_eq!(flashed.len(), 30);
        assert_eq!(&flashed[..3], &[9, 19, 29]);
        assert_eq!(v.frame(9).pixel(100, 100), [230, 230, 230]);
        let report = count_flashes(&v).unwrap();
        assert_eq!(report.events.len(), 59);
        assert!(report.risky);
    }

    #[test]
    fn white_injection_is_static_and_safe() {
        for intensity in [10, 90] {
            let v = gen_injection_video(&InjectionVideoSpec {
                seed: 0,
                base_color: [255; 3],
                intensity,
            })
            .unwrap();
            assert!(v.frames().all(|f| f == v.frame(0)));
            assert!(!count_flashes(&v).unwrap().risky);
        }
    }

    #[test]
    fn injection_intensity_validation() {
        for bad in [0, 5, 95, 100] {
            let spec = InjectionVideoSpec {
                seed: 0,
                base_color: [1, 2, 3],
                intensity: bad,
            };
            assert!(matches!(gen_injection_video(&spec), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn injection_specs_cover_colors_times_intensities() {
        let specs = injection_specs(4, &INJECTION_INTENSITIES, 9);
        assert_eq!(specs.len(), 36);
        assert!(specs[..9].iter().all(|s| s.base_color == specs[0].base_color));
        assert_ne!(specs[0].base_color, specs[9].base_color);
        assert_eq!(specs, injection_specs(4, &INJECTION_INTENSITIES, 9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(5))]

        #[test]
        fn flash_rate_fidelity(rate in prop::sample::select(vec![1u32, 2, 4, 8, 15])) {
            let spec = TriggerVideoSpec {
                background_flashing: true,
                background_rate: rate,
                ..base_spec()
            };
            let report = count_flashes(&gen_trigger_video(&spec).unwrap()).unwrap();
            // 2·rate·duration transitions fit whenever they are fewer than the
            // frame pairs; at 15/s every pair is a transition.
            let transitions = (2 * rate as usize * DURATION_SECONDS as usize).min(FRAME_COUNT - 1);
            prop_assert_eq!(report.flashes.len(), transitions / 2);
            if rate < 15 {
                prop_assert_eq!(report.flashes.len(), (DURATION_SECONDS * rate) as usize);
            }
        }
    }
}
