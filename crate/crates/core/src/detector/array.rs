use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DetectorModel;
use crate::color::{flash_metric, rgb_to_lab, LabColor, Rgb};
use crate::error::{Error, Result};
use crate::mask::Rect;
use crate::video::{Frame, VideoBuffer};

/// Trigger-array grid size in nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub cols: usize,
    pub rows: usize,
}

impl GridDims {
    pub const DEFAULT: GridDims = GridDims { cols: 50, rows: 50 };

    pub fn new(cols: usize, rows: usize) -> Self {
        GridDims { cols, rows }
    }

    pub fn node_count(&self) -> usize {
        self.cols * self.rows
    }

    pub(crate) fn check_fits(&self, width: usize, height: usize) -> Result<()> {
        if self.cols == 0 || self.rows == 0 {
            return Err(Error::Domain("grid must have at least one node".into()));
        }
        if self.cols > width || self.rows > height {
            return Err(Error::Domain(format!(
                "grid {self} is larger than the {width}x{height} frame"
            )));
        }
        Ok(())
    }
}

impl Default for GridDims {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.cols, self.rows)
    }
}

impl FromStr for GridDims {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (c, r) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected COLSxROWS, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(GridDims::new(parse(c)?, parse(r)?))
    }
}

/// Pixel coordinate of node `(i, j)`: `⌊(i + 0.5)·W / cols⌋, ⌊(j + 0.5)·H / rows⌋`.
pub fn node_position(grid: GridDims, width: usize, height: usize, i: usize, j: usize) -> (usize, usize) {
    (
        (2 * i + 1) * width / (2 * grid.cols),
        (2 * j + 1) * height / (2 * grid.rows),
    )
}

struct Node {
    pixel: usize,
    last: Option<(Rgb, LabColor)>,
    window: VecDeque<f64>,
    mean: f64,
    active: bool,
    calm_frames: usize,
}

/// Streaming trigger array. Each node keeps the last `fps` flash-metric
/// values of its pixel and activates when their mean exceeds the model's
/// threshold. An active node switches off only after `fps / 2` consecutive
/// frames at or below the threshold.
pub struct TriggerArray {
    width: usize,
    height: usize,
    grid: GridDims,
    window: usize,
    hold: usize,
    model: DetectorModel,
    nodes: Vec<Node>,
    active: Vec<bool>,
}

impl TriggerArray {
    pub fn new(width: usize, height: usize, fps: u32, grid: GridDims, model: DetectorModel) -> Result<Self> {
        grid.check_fits(width, height)?;
        let window = fps.max(1) as usize;
        let mut nodes = Vec::with_capacity(grid.node_count());
        for j in 0..grid.rows {
            for i in 0..grid.cols {
                let (x, y) = node_position(grid, width, height, i, j);
                nodes.push(Node {
                    pixel: y * width + x,
                    last: None,
                    window: VecDeque::with_capacity(window),
                    mean: 0.0,
                    active: false,
                    calm_frames: 0,
                });
            }
        }
        Ok(TriggerArray {
            width,
            height,
            grid,
            window,
            hold: window / 2,
            model,
            active: vec![false; nodes.len()],
            nodes,
        })
    }

    pub fn grid(&self) -> GridDims {
        self.grid
    }

    /// Feeds one frame to every node and returns the row-major activations.
    pub fn update(&mut self, frame: Frame<'_>) -> &[bool] {
        assert_eq!(
            (frame.width(), frame.height()),
            (self.width, self.height),
            "frame size differs from the array's"
        );
        for index in 0..self.nodes.len() {
            self.update_node(index, frame);
        }
        &self.active
    }

    fn update_node(&mut self, index: usize, frame: Frame<'_>) {
        let node = &mut self.nodes[index];
        let px = frame.pixel_at(node.pixel);
        let lab = match node.last {
            Some((rgb, lab)) if rgb == px => lab,
            _ => rgb_to_lab(px),
        };
        if let Some((_, prev)) = node.last {
            if node.window.len() == self.window {
                node.window.pop_front();
            }
            node.window.push_back(flash_metric(prev, lab).value());
            node.mean = node.window.iter().sum::<f64>() / node.window.len() as f64;
        }
        node.last = Some((px, lab));

        if !node.window.is_empty() && self.model.is_risky(node.mean) {
            node.active = true;
            node.calm_frames = 0;
        } else if node.active {
            node.calm_frames += 1;
            if node.calm_frames >= self.hold {
                node.active = false;
                node.calm_frames = 0;
            }
        }
        self.active[index] = node.active;
    }

    pub fn activations(&self) -> &[bool] {
        &self.active
    }

    pub fn rolling_mean(&self, index: usize) -> f64 {
        self.nodes[index].mean
    }

    /// Mask rectangles for the current activations.
    pub fn regions(&self) -> Vec<Rect> {
        interpolate_region(&self.active, self.grid, self.width, self.height)
    }
}

/// Per-frame node activations of a whole video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationMap {
    pub grid: GridDims,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<bool>>,
}

impl ActivationMap {
    pub fn active_count(&self, frame: usize) -> usize {
        self.frames[frame].iter().filter(|&&a| a).count()
    }

    pub fn regions(&self, frame: usize) -> Vec<Rect> {
        interpolate_region(&self.frames[frame], self.grid, self.width, self.height)
    }
}

pub fn run_trigger_array(v: &VideoBuffer, model: &DetectorModel, grid: GridDims) -> Result<ActivationMap> {
    let mut array = TriggerArray::new(v.width(), v.height(), v.fps(), grid, *model)?;
    let frames = v.frames().map(|f| array.update(f).to_vec()).collect();
    Ok(ActivationMap {
        grid,
        width: v.width(),
        height: v.height(),
        frames,
    })
}

/// Turns active nodes into mask rectangles: one per 4-connected component,
/// covering the component's node bounding box grown by half a node pitch on
/// every side and clipped to the frame.
pub fn interpolate_region(active: &[bool], grid: GridDims, width: usize, height: usize) -> Vec<Rect> {
    assert_eq!(active.len(), grid.node_count(), "activation grid size mismatch");
    let (cols, rows) = (grid.cols, grid.rows);
    let half_x = width as f64 / cols as f64 / 2.0;
    let half_y = height as f64 / rows as f64 / 2.0;
    let mut seen = vec![false; active.len()];
    let mut rects = Vec::new();
    let mut stack = Vec::new();

    for start in 0..active.len() {
        if !active[start] || seen[start] {
            continue;
        }
        let (mut i0, mut i1, mut j0, mut j1) = (usize::MAX, 0, usize::MAX, 0);
        seen[start] = true;
        stack.push(start);
        while let Some(n) = stack.pop() {
            let (i, j) = (n % cols, n / cols);
            (i0, i1, j0, j1) = (i0.min(i), i1.max(i), j0.min(j), j1.max(j));
            let mut visit = |m: usize| {
                if active[m] && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            };
            if i > 0 {
                visit(n - 1);
            }
            if i + 1 < cols {
                visit(n + 1);
            }
            if j > 0 {
                visit(n - cols);
            }
            if j + 1 < rows {
                visit(n + cols);
            }
        }
        let (x_lo, y_lo) = node_position(grid, width, height, i0, j0);
        let (x_hi, y_hi) = node_position(grid, width, height, i1, j1);
        // Pixel c is covered when its center lies within half a pitch of the
        // box: x_lo − half ≤ c < x_hi + half.
        let lo = |p: usize, half: f64| (p as f64 - half).ceil().max(0.0) as usize;
        let hi = |p: usize, half: f64, limit: usize| ((p as f64 + half).ceil() as usize).min(limit);
        rects.push(Rect::new(
            lo(x_lo, half_x),
            lo(y_lo, half_y),
            hi(x_hi, half_x, width),
            hi(y_hi, half_y, height),
        ));
    }
    rects
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::oracle::{RASTER_HEIGHT as H, RASTER_WIDTH as W};

    fn model(threshold: f64) -> DetectorModel {
        DetectorModel {
            w: 1.0,
            bias: -threshold,
            feature_mean: 0.0,
            feature_std: 1.0,
        }
    }

    /// Black/white strobe switching every frame inside `region`, gray elsewhere.
    fn strobe(frames: usize, region: impl Fn(usize, usize) -> bool) -> VideoBuffer {
        let data = (0..frames)
            .flat_map(|f| {
                let on = if f % 2 == 0 { 0u8 } else { 255 };
                let region = &region;
                (0..W * H).flat_map(move |p| {
                    let v = if region(p % W, p / W) { on } else { 128 };
                    [v; 3]
                })
            })
            .collect();
        VideoBuffer::new(W, H, 30, data).unwrap()
    }

    #[test]
    fn node_positions() {
        let g = GridDims::new(50, 50);
        assert_eq!(node_position(g, 1024, 768, 0, 0), (10, 7));
        assert_eq!(node_position(g, 1024, 768, 49, 49), (1013, 760));
        assert_eq!(node_position(GridDims::new(1, 1), 341, 256, 0, 0), (170, 128));
    }

    #[test]
    fn grid_parsing_and_bounds() {
        assert_eq!("50x40".parse::<GridDims>().unwrap(), GridDims::new(50, 40));
        assert!("50".parse::<GridDims>().is_err());
        assert!(TriggerArray::new(40, 40, 30, GridDims::new(50, 50), model(1.0)).is_err());
        assert!(TriggerArray::new(40, 40, 30, GridDims::new(0, 5), model(1.0)).is_err());
    }

    #[test]
    fn static_video_never_activates() {
        let v = VideoBuffer::new(W, H, 30, vec![77; W * H * 3 * 40]).unwrap();
        let map = run_trigger_array(&v, &model(1.0), GridDims::DEFAULT).unwrap();
        assert!((0..40).all(|f| map.active_count(f) == 0));
    }

    #[test]
    fn full_frame_strobe_activates_everything() {
        let v = strobe(40, |_, _| true);
        let map = run_trigger_array(&v, &model(10.0), GridDims::DEFAULT).unwrap();
        assert_eq!(map.active_count(0), 0);
        for f in 30..40 {
            assert_eq!(map.active_count(f), 2500, "frame {f}");
        }
        assert_eq!(map.regions(39), vec![Rect::new(0, 0, W, H)]);
    }

    #[test]
    fn left_half_strobe_activates_left_nodes_only() {
        let v = strobe(40, |x, _| x < W / 2);
        let g = GridDims::DEFAULT;
        let map = run_trigger_array(&v, &model(10.0), g).unwrap();
        for j in 0..g.rows {
            for i in 0..g.cols {
                let (x, _) = node_position(g, W, H, i, j);
                assert_eq!(map.frames[39][j * g.cols + i], x < W / 2, "node ({i},{j})");
            }
        }
    }

    #[test]
    fn rolling_mean_is_window_mean_and_hysteresis_holds() {
        // One full-frame black→white step, then static.
        let mut data = vec![0u8; W * H * 3];
        data.extend(vec![255u8; W * H * 3 * 59]);
        let v = VideoBuffer::new(W, H, 30, data).unwrap();
        let mut array = TriggerArray::new(W, H, 30, GridDims::new(2, 2), model(10.0)).unwrap();
        let mut history = Vec::new();
        for (f, frame) in v.frames().enumerate() {
            let active = array.update(frame)[0];
            let metric_count = f.min(30);
            if metric_count > 0 {
                let sum = if f <= 30 { 100.0 } else { 0.0 };
                assert!((array.rolling_mean(0) - sum / metric_count as f64).abs() < 1e-9, "frame {f}");
            }
            history.push(active);
        }
        // Mean 100/f exceeds 10 through frame 9; the node then holds for 15
        // calm frames before switching off.
        assert!(!history[0]);
        assert!(history[1..=9].iter().all(|&a| a));
        assert!(history[10..24].iter().all(|&a| a));
        assert!(!history[24]);
    }

    #[test]
    fn node_update_order_is_irrelevant() {
        let v = strobe(12, |x, y| (x / 40 + y / 40) % 2 == 0);
        let g = GridDims::new(10, 8);
        let mut forward = TriggerArray::new(W, H, 30, g, model(20.0)).unwrap();
        let mut backward = TriggerArray::new(W, H, 30, g, model(20.0)).unwrap();
        for frame in v.frames() {
            forward.update(frame);
            for n in (0..g.node_count()).rev() {
                backward.update_node(n, frame);
            }
            assert_eq!(forward.activations(), backward.activations());
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = GridDims::new(50, 50);
        assert!(interpolate_region(&[false; 2500], g, 500, 500).is_empty());
        assert_eq!(
            interpolate_region(&[true; 2500], g, 1024, 768),
            vec![Rect::new(0, 0, 1024, 768)]
        );
        let mut one = vec![false; 2500];
        one[25 * 50 + 25] = true;
        // Node at (255, 255), pitch 10: covers pixels 250..260 on both axes.
        assert_eq!(interpolate_region(&one, g, 500, 500), vec![Rect::new(250, 250, 260, 260)]);
    }

    #[test]
    fn diagonal_nodes_are_separate_components() {
        let g = GridDims::new(4, 4);
        let mut active = vec![false; 16];
        active[0] = true;
        active[5] = true;
        active[6] = true;
        let rects = interpolate_region(&active, g, 40, 40);
        assert_eq!(rects, vec![Rect::new(0, 0, 10, 10), Rect::new(10, 10, 30, 20)]);
        let mask = Mask::from_rects(40, 40, &rects);
        assert_eq!(mask.count(), 100 + 200);
    }
}
