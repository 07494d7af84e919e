//! Ground-truth flash analyzer following WCAG 2.3.1 "Three Flashes or Below
//! Threshold".
//!
//! Every frame is resampled to a fixed 341×256 analysis raster. A pair of
//! consecutive frames produces a luminance *transition event* when at least a
//! quarter of the raster changes relative luminance by 0.10 or more in the
//! same direction while the darker of the two states is below 0.80. A
//! separate red tally records pixels moving into or out of saturated red. Two
//! opposing events of the same kind with no same-kind event in between form
//! one flash. A video is risky when more than three flashes of one kind
//! complete inside any one-second interval.

use std::borrow::Cow;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::color::relative_luminance;
use crate::error::{Error, Result};
use crate::video::{Frame, VideoBuffer};

pub const RASTER_WIDTH: usize = 341;
pub const RASTER_HEIGHT: usize = 256;
/// Minimum relative-luminance change for a pixel to vote.
pub const LUMINANCE_STEP: f64 = 0.10;
/// The darker state of a general flash must be below this luminance.
pub const DARK_LIMIT: f64 = 0.80;
/// Fraction of the raster that must vote for an event.
pub const AREA_FRACTION: f64 = 0.25;
/// Flashes allowed in any one-second interval.
pub const MAX_SAFE_FLASHES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlashKind {
    Luminance,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    /// Index of the later frame of the pair.
    pub frame_index: usize,
    pub direction: Direction,
    pub area_fraction: f64,
    pub kind: FlashKind,
}

/// Events produced by one frame pair. The two kinds are independent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Transitions {
    pub luminance: Option<TransitionEvent>,
    pub red: Option<TransitionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashReport {
    pub events: Vec<TransitionEvent>,
    /// `(start_frame, end_frame)` of every flash, ordered by completion.
    pub flashes: Vec<(usize, usize)>,
    pub max_flashes_per_second: u32,
    pub flash_frame_indices: BTreeSet<usize>,
    pub risky: bool,
}

/// Nearest-neighbour resample of every frame to the 341×256 raster.
/// Borrows the input when it already has raster dimensions.
pub fn analysis_raster(v: &VideoBuffer) -> Cow<'_, VideoBuffer> {
    if v.width() == RASTER_WIDTH && v.height() == RASTER_HEIGHT {
        return Cow::Borrowed(v);
    }
    let xs: Vec<usize> = (0..RASTER_WIDTH)
        .map(|x| x * v.width() / RASTER_WIDTH)
        .collect();
    let ys: Vec<usize> = (0..RASTER_HEIGHT)
        .map(|y| y * v.height() / RASTER_HEIGHT)
        .collect();
    let mut data = Vec::with_capacity(RASTER_WIDTH * RASTER_HEIGHT * 3 * v.frame_count());
    for frame in v.frames() {
        let src = frame.as_bytes();
        for &sy in &ys {
            let row = sy * v.width();
            for &sx in &xs {
                let i = (row + sx) * 3;
                data.extend_from_slice(&src[i..i + 3]);
            }
        }
    }
    Cow::Owned(
        VideoBuffer::new(RASTER_WIDTH, RASTER_HEIGHT, v.fps(), data)
            .expect("raster dimensions are valid"),
    )
}

/// Per-pixel luminance and saturated-red flags of one frame.
struct FrameStats {
    luma: Vec<f64>,
    red: Vec<bool>,
}

/// Byte-to-byte channel mapping applied before analysis (identity when
/// `None`). Used to probe darkened copies without materializing them.
pub(crate) type ChannelLut = [u8; 256];

fn is_saturated_red(px: [u8; 3]) -> bool {
    let [r, g, b] = px.map(u32::from);
    // R / (R + G + B) >= 0.8, in integers.
    r >= 128 && 5 * r >= 4 * (r + g + b)
}

fn frame_stats(frame: Frame<'_>, lut: Option<&ChannelLut>) -> FrameStats {
    let n = frame.pixel_count();
    let mut luma = Vec::with_capacity(n);
    let mut red = Vec::with_capacity(n);
    for px in frame.pixels() {
        let px = match lut {
            Some(t) => px.map(|c| t[c as usize]),
            None => px,
        };
        luma.push(relative_luminance(px));
        red.push(is_saturated_red(px));
    }
    FrameStats { luma, red }
}

fn vote(prev: &FrameStats, cur: &FrameStats, frame_index: usize) -> Transitions {
    let (mut up, mut down, mut red_in, mut red_out) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..prev.luma.len() {
        let (a, b) = (prev.luma[i], cur.luma[i]);
        let delta = b - a;
        if a.min(b) < DARK_LIMIT {
            if delta >= LUMINANCE_STEP {
                up += 1;
            } else if -delta >= LUMINANCE_STEP {
                down += 1;
            }
        }
        match (prev.red[i], cur.red[i]) {
            (false, true) => red_in += 1,
            (true, false) => red_out += 1,
            _ => {}
        }
    }
    let total = prev.luma.len();
    Transitions {
        luminance: pick_event(up, down, total, frame_index, FlashKind::Luminance),
        red: pick_event(red_in, red_out, total, frame_index, FlashKind::Red),
    }
}

fn pick_event(
    up: usize,
    down: usize,
    total: usize,
    frame_index: usize,
    kind: FlashKind,
) -> Option<TransitionEvent> {
    // votes >= 0.25 * total, exactly.
    let qualifies = |votes: usize| votes > 0 && 4 * votes >= total;
    let (direction, votes) = match (qualifies(up), qualifies(down)) {
        (false, false) => return None,
        (true, false) => (Direction::Up, up),
        (false, true) => (Direction::Down, down),
        (true, true) if up >= down => (Direction::Up, up),
        (true, true) => (Direction::Down, down),
    };
    Some(TransitionEvent {
        frame_index,
        direction,
        area_fraction: votes as f64 / total as f64,
        kind,
    })
}

/// Transition events between two frames of equal dimensions.
/// `frame_index` is recorded as the index of `cur`.
pub fn detect_transitions(prev: Frame<'_>, cur: Frame<'_>, frame_index: usize) -> Result<Transitions> {
    if prev.width() != cur.width() || prev.height() != cur.height() {
        return Err(Error::Domain(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            cur.width(),
            cur.height()
        )));
    }
    Ok(vote(&frame_stats(prev, None), &frame_stats(cur, None), frame_index))
}

pub fn count_flashes(v: &VideoBuffer) -> Result<FlashReport> {
    scan(v, None)
}

/// Oracle verdict plus the full report.
pub fn classify_risk(v: &VideoBuffer) -> Result<(bool, FlashReport)> {
    let report = count_flashes(v)?;
    Ok((report.risky, report))
}

pub(crate) fn scan(v: &VideoBuffer, lut: Option<&ChannelLut>) -> Result<FlashReport> {
    if v.frame_count() < 2 {
        return Err(Error::Domain(format!(
            "flash analysis needs at least 2 frames, got {}",
            v.frame_count()
        )));
    }
    let raster = analysis_raster(v);
    let mut events = Vec::new();
    let mut prev_frame = raster.frame(0);
    let mut prev_stats = frame_stats(prev_frame, lut);
    for (index, frame) in raster.frames().enumerate().skip(1) {
        // Identical bytes map to identical stats, so no event is possible.
        if frame.as_bytes() == prev_frame.as_bytes() {
            continue;
        }
        let stats = frame_stats(frame, lut);
        let t = vote(&prev_stats, &stats, index);
        events.extend(t.luminance);
        events.extend(t.red);
        prev_frame = frame;
        prev_stats = stats;
    }
    Ok(tally(events, v.fps()))
}

fn tally(events: Vec<TransitionEvent>, fps: u32) -> FlashReport {
    let mut flashes = Vec::new();
    let mut max_flashes_per_second = 0;
    for kind in [FlashKind::Luminance, FlashKind::Red] {
        let mut pending: Option<&TransitionEvent> = None;
        let mut completions = Vec::new();
        for ev in events.iter().filter(|e| e.kind == kind) {
            match pending {
                Some(p) if p.direction != ev.direction => {
                    flashes.push((p.frame_index, ev.frame_index));
                    completions.push(ev.frame_index);
                    pending = None;
                }
                _ => pending = Some(ev),
            }
        }
        max_flashes_per_second = max_flashes_per_second.max(max_in_window(&completions, fps));
    }
    flashes.sort_by_key(|&(start, end)| (end, start));
    let flash_frame_indices = flashes
        .iter()
        .flat_map(|&(start, end)| start..=end)
        .collect();
    FlashReport {
        events,
        flashes,
        max_flashes_per_second,
        flash_frame_indices,
        risky: max_flashes_per_second > MAX_SAFE_FLASHES,
    }
}

/// Largest number of completion frames falling in any closed interval
/// `[t, t + fps]`, i.e. within one second of each other.
fn max_in_window(completions: &[usize], fps: u32) -> u32 {
    let span = fps as usize;
    let mut best = 0;
    let mut hi = 0;
    for (lo, &start) in completions.iter().enumerate() {
        while hi < completions.len() && completions[hi] <= start + span {
            hi += 1;
        }
        best = best.max(hi - lo);
    }
    best as u32
}
