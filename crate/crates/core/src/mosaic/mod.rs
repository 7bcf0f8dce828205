//! Sliding-window enhancement of the full image onto a streamed canvas.
//!
//! Windows live on the output canvas. Each window crops its footprint from
//! the full image plus some context, runs the enhancer, maps the result back
//! onto the canvas grid and accumulates `value × weight` and `weight` into
//! band buffers. Iterative enhancers run one step per schedule step, with a
//! different stride (and so different window seams) at every step.

mod bands;
mod run;

pub use bands::{band_path, BandWriter, CanvasBands, CanvasHeader, Sample, HEADER_FILE};
pub use run::{run_iterative, run_oneshot, MosaicRun};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhance::EnhanceError;
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("window {window} exceeds canvas side {canvas}")]
    WindowLargerThanCanvas { window: usize, canvas: usize },
    #[error("stride {stride} outside 1..={window}")]
    InvalidStride { stride: usize, window: usize },
    #[error("invalid stride range: {0}")]
    InvalidRange(String),
    #[error("blend margin {margin} exceeds half the window {window}")]
    InvalidMargin { margin: usize, window: usize },
    #[error("band height {band_height} is smaller than the window {window}")]
    InvalidBandHeight { band_height: usize, window: usize },
    #[error("invalid zoom {0}")]
    InvalidZoom(f64),
    #[error("step {step} leaves pixel ({x}, {y}) uncovered")]
    ScheduleCoverageGap { step: usize, x: usize, y: usize },
    #[error("enhancer {0} is not iterative")]
    NotIterative(String),
    #[error("window at ({x}, {y}): {source}")]
    Enhance {
        x: usize,
        y: usize,
        #[source]
        source: EnhanceError,
    },
    #[error("image {width}x{height} is smaller than the {window} px window")]
    TooSmall { width: usize, height: usize, window: usize },
    #[error("corrupt canvas stream: {0}")]
    CorruptStream(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MosaicParams {
    /// Window side at output scale.
    pub window: usize,
    pub stride_min: usize,
    pub stride_max: usize,
    /// Enhancement steps; 1 means a one-shot run at `stride_min`.
    pub steps: u32,
    /// Raised-cosine ramp width at window edges; 0 is plain averaging.
    pub margin: usize,
    pub band_height: usize,
    /// Extra full-image pixels cropped around each window footprint.
    pub context: usize,
}

impl Default for MosaicParams {
    fn default() -> Self {
        MosaicParams {
            window: 1024,
            stride_min: 512,
            stride_max: 768,
            steps: 1,
            margin: 128,
            band_height: 1024,
            context: 4,
        }
    }
}

impl MosaicParams {
    /// Window side on each axis of a `w × h` canvas.
    pub fn window_dims(&self, w: usize, h: usize) -> (usize, usize) {
        (self.window.min(w), self.window.min(h))
    }

    pub fn validate(&self) -> Result<(), MosaicError> {
        if self.window == 0 {
            return Err(MosaicError::InvalidStride {
                stride: self.stride_min,
                window: 0,
            });
        }
        if self.band_height < self.window {
            return Err(MosaicError::InvalidBandHeight {
                band_height: self.band_height,
                window: self.window,
            });
        }
        if self.steps == 0 {
            return Err(MosaicError::InvalidRange("zero steps".into()));
        }
        blend_kernel(self.window, self.margin)?;
        for s in [self.stride_min, self.stride_max] {
            if s == 0 || s > self.window {
                return Err(MosaicError::InvalidStride {
                    stride: s,
                    window: self.window,
                });
            }
        }
        Ok(())
    }

    pub fn strides(&self) -> Result<Vec<usize>, MosaicError> {
        stride_schedule(self.steps as usize, self.stride_min, self.stride_max)
    }

    /// Schedule over a `w × h` canvas; the window shrinks to the canvas on
    /// short axes.
    pub fn schedule(&self, w: usize, h: usize) -> Result<WindowSchedule, MosaicError> {
        self.validate()?;
        let (ww, wh) = self.window_dims(w, h);
        let strides = self.strides()?;
        WindowSchedule::build((w, h), (ww, wh), &strides)
    }
}

/// Window origins along one axis: `0, stride, 2·stride, …`, plus a last
/// origin flush with the end when the regular grid falls short.
pub fn axis_origins(len: usize, window: usize, stride: usize) -> Result<Vec<usize>, MosaicError> {
    if window > len {
        return Err(MosaicError::WindowLargerThanCanvas { window, canvas: len });
    }
    if stride == 0 || stride > window {
        return Err(MosaicError::InvalidStride { stride, window });
    }
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        out.push(o);
        if o + window >= len {
            break;
        }
        o += stride;
        if o + window > len {
            out.push(len - window);
            break;
        }
    }
    Ok(out)
}

/// Per-axis origins for a square window.
pub fn schedule_windows(
    canvas_w: usize,
    canvas_h: usize,
    window: usize,
    stride: usize,
) -> Result<(Vec<usize>, Vec<usize>), MosaicError> {
    Ok((axis_origins(canvas_w, window, stride)?, axis_origins(canvas_h, window, stride)?))
}

/// Strides interpolated linearly from `stride_min` to `stride_max`.
pub fn stride_schedule(step_count: usize, stride_min: usize, stride_max: usize) -> Result<Vec<usize>, MosaicError> {
    if step_count == 0 || stride_min == 0 || stride_min > stride_max {
        return Err(MosaicError::InvalidRange(format!(
            "{step_count} steps from {stride_min} to {stride_max}"
        )));
    }
    if step_count == 1 {
        return Ok(vec![stride_min]);
    }
    let span = (stride_max - stride_min) as f64;
    Ok((0..step_count)
        .map(|k| stride_min + (span * k as f64 / (step_count - 1) as f64).round() as usize)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub stride: usize,
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
}

impl ScheduleStep {
    pub fn window_count(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// Origins in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ys.iter().flat_map(move |&y| self.xs.iter().map(move |&x| (x, y)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub canvas: (usize, usize),
    /// Window size per axis (the square window clamped to the canvas).
    pub window: (usize, usize),
    pub steps: Vec<ScheduleStep>,
}

impl WindowSchedule {
    pub fn build(canvas: (usize, usize), window: (usize, usize), strides: &[usize]) -> Result<WindowSchedule, MosaicError> {
        for (k, w) in strides.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(MosaicError::InvalidRange(format!("stride decreases at step {}", k + 1)));
            }
        }
        let steps = strides
            .iter()
            .map(|&s| {
                Ok(ScheduleStep {
                    stride: s,
                    xs: axis_origins(canvas.0, window.0, s.min(window.0))?,
                    ys: axis_origins(canvas.1, window.1, s.min(window.1))?,
                })
            })
            .collect::<Result<Vec<_>, MosaicError>>()?;
        Ok(WindowSchedule { canvas, window, steps })
    }

    /// Checks that every step covers every canvas pixel.
    pub fn check_coverage(&self) -> Result<(), MosaicError> {
        for (k, s) in self.steps.iter().enumerate() {
            let gap_x = axis_gap(&s.xs, self.window.0, self.canvas.0);
            let gap_y = axis_gap(&s.ys, self.window.1, self.canvas.1);
            if gap_x.is_some() || gap_y.is_some() {
                return Err(MosaicError::ScheduleCoverageGap {
                    step: k,
                    x: gap_x.unwrap_or(0),
                    y: gap_y.unwrap_or(0),
                });
            }
        }
        Ok(())
    }
}

/// First position on `[0, len)` not covered by `[o, o + window)`.
fn axis_gap(origins: &[usize], window: usize, len: usize) -> Option<usize> {
    let mut sorted = origins.to_vec();
    sorted.sort_unstable();
    let mut covered = 0;
    for o in sorted {
        if o > covered {
            return Some(covered);
        }
        covered = covered.max(o + window);
    }
    (covered < len).then_some(covered)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCount {
    pub per_step: Vec<usize>,
    pub total: usize,
    pub average: f64,
}

pub fn window_count(schedule: &WindowSchedule) -> WindowCount {
    let per_step: Vec<usize> = schedule.steps.iter().map(ScheduleStep::window_count).collect();
    let total = per_step.iter().sum();
    let average = if per_step.is_empty() {
        0.0
    } else {
        total as f64 / per_step.len() as f64
    };
    WindowCount {
        per_step,
        total,
        average,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub canvas: usize,
    pub steps: usize,
    pub target: f64,
    pub window: usize,
    pub stride_min: usize,
    pub stride_max: usize,
    pub count: WindowCount,
}

/// Finds the stride range, for each candidate window, whose schedule on a
/// square canvas averages closest to `target` windows per step. Ties favour
/// the narrower stride range, then the smaller `stride_min`.
pub fn calibrate_window_count(
    canvas: usize,
    steps: usize,
    target: f64,
    windows: &[usize],
) -> Result<Vec<Calibration>, MosaicError> {
    let mut out = Vec::new();
    for &window in windows {
        // Windows per axis depend only on the stride, so tabulate them once.
        let per_axis: Vec<usize> = (0..=window)
            .map(|s| if s == 0 { 0 } else { axis_origins(canvas, window, s).map(|o| o.len()).unwrap_or(0) })
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for lo in 1..=window {
            for hi in lo..=window {
                let strides = stride_schedule(steps, lo, hi)?;
                let total: usize = strides.iter().map(|&s| per_axis[s] * per_axis[s]).sum();
                let err = (total as f64 / steps as f64 - target).abs();
                let better = match best {
                    None => true,
                    Some((e, l, h)) => err < e - 1e-12 || ((err - e).abs() <= 1e-12 && (hi - lo, lo) < (h - l, l)),
                };
                if better {
                    best = Some((err, lo, hi));
                }
            }
        }
        let Some((_, lo, hi)) = best else { continue };
        let schedule = WindowSchedule::build((canvas, canvas), (window, window), &stride_schedule(steps, lo, hi)?)?;
        out.push(Calibration {
            canvas,
            steps,
            target,
            window,
            stride_min: lo,
            stride_max: hi,
            count: window_count(&schedule),
        });
    }
    Ok(out)
}

/// Separable blend weights for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendKernel {
    pub margin: usize,
    wx: Vec<f32>,
    wy: Vec<f32>,
}

fn ramp(len: usize, margin: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let d = i.min(len - 1 - i);
            if d >= margin {
                1.0
            } else {
                (0.5 - 0.5 * (std::f64::consts::PI * (d as f64 + 0.5) / margin as f64).cos()) as f32
            }
        })
        .collect()
}

impl BlendKernel {
    /// Kernel for a `w × h` window. The margin shrinks to half of a short
    /// side.
    pub fn new(w: usize, h: usize, margin: usize) -> BlendKernel {
        BlendKernel {
            margin,
            wx: ramp(w, margin.min(w / 2)),
            wy: ramp(h, margin.min(h / 2)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.wx.len(), self.wy.len())
    }

    #[inline]
    pub fn weight(&self, x: usize, y: usize) -> f32 {
        self.wx[x] * self.wy[y]
    }

    pub fn to_image(&self) -> Image {
        Image::from_fn(self.wx.len(), self.wy.len(), 1, |x, y, _| self.weight(x, y))
    }
}

/// Square kernel: raised-cosine ramps of width `margin` at every edge, flat
/// interior.
pub fn blend_kernel(window: usize, margin: usize) -> Result<BlendKernel, MosaicError> {
    if margin > window / 2 {
        return Err(MosaicError::InvalidMargin { margin, window });
    }
    Ok(BlendKernel::new(window, window, margin))
}

/// Largest deviation from 1 of the normalised weights summed over the
/// windows of `step`, together with the least window count at any pixel.
pub fn partition_of_unity_error(schedule: &WindowSchedule, step: usize, kernel: &BlendKernel) -> (f64, usize) {
    let (w, h) = schedule.canvas;
    let s = &schedule.steps[step];
    let (ww, wh) = schedule.window;
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0usize; w * h];
    for (ox, oy) in s.origins() {
        for y in 0..wh {
            for x in 0..ww {
                let i = (oy + y) * w + ox + x;
                sum[i] += kernel.weight(x, y) as f64;
                count[i] += 1;
            }
        }
    }
    let mut normalised = vec![0.0f64; w * h];
    for (ox, oy) in s.origins() {
        for y in 0..wh {
            for x in 0..ww {
                let i = (oy + y) * w + ox + x;
                normalised[i] += kernel.weight(x, y) as f64 / sum[i];
            }
        }
    }
    let err = normalised.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    (err, count.into_iter().min().unwrap_or(0))
}

/// Mean absolute luma step across the window edges of a fixed-stride
/// schedule, relative to the mean step elsewhere. 1.0 means no seam
/// signature.
pub fn seam_energy(img: &Image, window: usize, stride: usize) -> Result<f64, MosaicError> {
    let (w, h) = img.dims();
    if w < window || h < window || w < 2 || h < 2 {
        return Err(MosaicError::TooSmall { width: w, height: h, window });
    }
    let (xs, ys) = schedule_windows(w, h, window, stride)?;
    let boundary = |origins: &[usize], len: usize| {
        let mut b = vec![false; len];
        for &o in origins {
            for e in [o, o + window] {
                if e > 0 && e < len {
                    b[e] = true;
                }
            }
        }
        b
    };
    let bx = boundary(&xs, w);
    let by = boundary(&ys, h);
    let luma = img.to_luma();
    let l = luma.data();
    // [on, off] sums and counts, per direction.
    let mut sx = [(0.0f64, 0usize); 2];
    let mut sy = [(0.0f64, 0usize); 2];
    for y in 0..h {
        for x in 0..w {
            let v = l[y * w + x] as f64;
            if x > 0 {
                let slot = &mut sx[usize::from(!bx[x])];
                slot.0 += (v - l[y * w + x - 1] as f64).abs();
                slot.1 += 1;
            }
            if y > 0 {
                let slot = &mut sy[usize::from(!by[y])];
                slot.0 += (v - l[(y - 1) * w + x] as f64).abs();
                slot.1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    let on = mean(sx[0]) + mean(sy[0]);
    let off = mean(sx[1]) + mean(sy[1]);
    const FLOOR: f64 = 1e-9;
    if on < FLOOR && off < FLOOR {
        return Ok(1.0);
    }
    Ok(on / off.max(FLOOR))
}
