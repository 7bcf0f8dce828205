//! Window execution and band accumulation.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::bands::{BandWriter, CanvasBands, CanvasHeader, Sample};
use super::{BlendKernel, MosaicError, MosaicParams, WindowSchedule};
use crate::degrade::{resample_region, scaled_len};
use crate::enhance::{EnhanceRequest, Enhancer, Mode};
use crate::raster::Image;

/// Result of a mosaic run.
#[derive(Debug)]
pub struct MosaicRun {
    pub canvas: CanvasBands,
    pub schedule: WindowSchedule,
    /// Enhancer invocations.
    pub windows: usize,
    /// Peak resident pixel-buffer samples (accumulators, estimate rows and
    /// in-flight window results).
    pub peak_samples: usize,
}

#[derive(Default)]
struct Gauge {
    peak: usize,
}

impl Gauge {
    fn observe(&mut self, samples: usize) {
        self.peak = self.peak.max(samples);
    }
}

/// One axis of a window's footprint in the full image.
#[derive(Clone, Copy, Debug)]
struct AxisPlan {
    /// Window origin and length on the canvas.
    origin: usize,
    len: usize,
    /// Integer crop of the full image, context included.
    crop: usize,
    crop_len: usize,
    /// Enhancer output length for the crop.
    out_len: usize,
    /// The window's span in enhancer-output coordinates.
    src: f64,
    src_len: f64,
}

/// Scale between canvas and full image along one axis.
#[derive(Clone, Copy)]
struct Axis {
    full: usize,
    canvas: usize,
}

impl Axis {
    fn to_full(self, v: usize) -> f64 {
        (v * self.full) as f64 / self.canvas as f64
    }

    fn to_canvas(self, v: usize) -> f64 {
        (v * self.canvas) as f64 / self.full as f64
    }

    fn plan(self, origin: usize, len: usize, zoom: f64, context: usize) -> AxisPlan {
        let f0 = self.to_full(origin);
        let f1 = self.to_full(origin + len);
        let crop = ((f0 + 1e-9).floor() as usize).saturating_sub(context);
        let end = (((f1 - 1e-9).ceil() as usize) + context).min(self.full);
        let crop_len = end - crop;
        let out_len = scaled_len(crop_len, zoom);
        let k = out_len as f64 / crop_len as f64;
        AxisPlan {
            origin,
            len,
            crop,
            crop_len,
            out_len,
            src: (f0 - crop as f64) * k,
            src_len: (f1 - f0) * k,
        }
    }
}

/// Resamples `(x0, y0, ex, ey)` of `img` to `w × h`, copying directly when
/// the region is an integer-aligned crop at unit scale.
fn sample_region(img: &Image, x0: f64, y0: f64, ex: f64, ey: f64, w: usize, h: usize) -> Image {
    let aligned = |o: f64, e: f64, n: usize| (o - o.round()).abs() < 1e-9 && (e - n as f64).abs() < 1e-9 && o >= -1e-9;
    if aligned(x0, ex, w) && aligned(y0, ey, h) {
        let (x, y) = (x0.round() as usize, y0.round() as usize);
        if x + w <= img.width() && y + h <= img.height() {
            return img.crop(x, y, w, h).expect("bounds checked");
        }
    }
    resample_region(img, x0, y0, ex, ey, w, h)
}

struct Layout {
    ax: Axis,
    ay: Axis,
    zoom: f64,
    context: usize,
}

impl Layout {
    fn new(full: &Image, zoom: f64, context: usize) -> Result<Layout, MosaicError> {
        if !(zoom > 1.0) || !zoom.is_finite() {
            return Err(MosaicError::InvalidZoom(zoom));
        }
        let (w, h) = (scaled_len(full.width(), zoom), scaled_len(full.height(), zoom));
        if w == 0 || h == 0 {
            return Err(MosaicError::InvalidZoom(zoom));
        }
        Ok(Layout {
            ax: Axis {
                full: full.width(),
                canvas: w,
            },
            ay: Axis {
                full: full.height(),
                canvas: h,
            },
            zoom,
            context,
        })
    }

    fn canvas(&self) -> (usize, usize) {
        (self.ax.canvas, self.ay.canvas)
    }

    fn plan(&self, ox: usize, oy: usize, window: (usize, usize)) -> (AxisPlan, AxisPlan) {
        (
            self.ax.plan(ox, window.0, self.zoom, self.context),
            self.ay.plan(oy, window.1, self.zoom, self.context),
        )
    }
}

/// Row-ordered accumulation of weighted window results. Rows above the
/// current window row are final and are normalised and written out.
struct Accumulator {
    writer: BandWriter,
    width: usize,
    base: usize,
    value: Vec<f32>,
    weight: Vec<f32>,
    step: usize,
}

impl Accumulator {
    fn new(writer: BandWriter, step: usize) -> Accumulator {
        Accumulator {
            width: writer.header().width,
            writer,
            base: 0,
            value: Vec::new(),
            weight: Vec::new(),
            step,
        }
    }

    fn samples(&self) -> usize {
        self.value.len() + self.weight.len()
    }

    fn add(&mut self, patch: &Image, ox: usize, oy: usize, kernel: &BlendKernel) {
        let (pw, ph) = patch.dims();
        debug_assert!(oy >= self.base);
        let rows = oy + ph - self.base;
        if self.weight.len() < rows * self.width {
            self.weight.resize(rows * self.width, 0.0);
            self.value.resize(rows * self.width * 3, 0.0);
        }
        for y in 0..ph {
            let row = (oy + y - self.base) * self.width + ox;
            let src = patch.row(y);
            for x in 0..pw {
                let k = kernel.weight(x, y);
                let i = row + x;
                self.weight[i] += k;
                for c in 0..3 {
                    self.value[i * 3 + c] += k * src[x * 3 + c];
                }
            }
        }
    }

    /// Normalises and writes rows `[base, row)`.
    fn flush_before(&mut self, row: usize) -> Result<(), MosaicError> {
        if row <= self.base {
            return Ok(());
        }
        let n = row - self.base;
        let held = self.weight.len() / self.width;
        if held < n {
            let y = self.base + held;
            return Err(MosaicError::ScheduleCoverageGap {
                step: self.step,
                x: 0,
                y,
            });
        }
        let mut out = vec![0.0f32; n * self.width * 3];
        for (i, &wt) in self.weight[..n * self.width].iter().enumerate() {
            if wt <= 0.0 {
                return Err(MosaicError::ScheduleCoverageGap {
                    step: self.step,
                    x: i % self.width,
                    y: self.base + i / self.width,
                });
            }
            for c in 0..3 {
                out[i * 3 + c] = self.value[i * 3 + c] / wt;
            }
        }
        self.writer.write_rows(&out)?;
        self.weight.drain(..n * self.width);
        self.value.drain(..n * self.width * 3);
        self.base = row;
        Ok(())
    }

    fn finish(mut self, height: usize) -> Result<CanvasBands, MosaicError> {
        self.flush_before(height)?;
        self.writer.finish()
    }
}

fn enhance_error(ox: usize, oy: usize) -> impl Fn(crate::enhance::EnhanceError) -> MosaicError {
    move |source| MosaicError::Enhance { x: ox, y: oy, source }
}

fn crop_full(full: &Image, px: &AxisPlan, py: &AxisPlan) -> Image {
    full.crop(px.crop, py.crop, px.crop_len, py.crop_len)
        .expect("crop inside the full image")
}

fn to_window(out: &Image, px: &AxisPlan, py: &AxisPlan) -> Image {
    sample_region(out, px.src, py.src, px.src_len, py.src_len, px.len, py.len)
}

fn check_output(out: &Image, px: &AxisPlan, py: &AxisPlan) -> Result<(), MosaicError> {
    if out.dims() != (px.out_len, py.out_len) {
        return Err(MosaicError::Enhance {
            x: px.origin,
            y: py.origin,
            source: crate::enhance::EnhanceError::DimensionMismatch {
                expected: (px.out_len, py.out_len),
                got: out.dims(),
            },
        });
    }
    Ok(())
}

fn chunk_size() -> usize {
    rayon::current_num_threads().max(1)
}

/// One-shot enhancement of `full` at `zoom` with stride `params.stride_min`.
/// The canvas is written to `out_dir` as 8-bit bands.
pub fn run_oneshot(
    full: &Image,
    enhancer: &dyn Enhancer,
    zoom: f64,
    params: &MosaicParams,
    out_dir: impl AsRef<Path>,
) -> Result<MosaicRun, MosaicError> {
    let layout = Layout::new(full, zoom, params.context)?;
    let (w, h) = layout.canvas();
    let one_step = MosaicParams {
        steps: 1,
        stride_max: params.stride_min,
        ..*params
    };
    let schedule = one_step.schedule(w, h)?;
    schedule.check_coverage()?;
    let kernel = BlendKernel::new(schedule.window.0, schedule.window.1, params.margin);
    let full = full.to_rgb();
    let header = CanvasHeader {
        width: w,
        height: h,
        band_height: params.band_height,
        sample: Sample::U8,
    };
    let mut acc = Accumulator::new(BandWriter::create(out_dir, header)?, 0);
    let mut gauge = Gauge::default();
    let step = &schedule.steps[0];
    for &oy in &step.ys {
        acc.flush_before(oy)?;
        for chunk in step.xs.chunks(chunk_size()) {
            let patches = chunk
                .par_iter()
                .map(|&ox| {
                    let (px, py) = layout.plan(ox, oy, schedule.window);
                    let req = EnhanceRequest {
                        window_origin: (ox as i64, oy as i64),
                        ..EnhanceRequest::new(crop_full(&full, &px, &py), zoom)
                    };
                    let out = enhancer.enhance(&req).map_err(enhance_error(ox, oy))?;
                    check_output(&out, &px, &py)?;
                    Ok((to_window(&out, &px, &py), out.data().len()))
                })
                .collect::<Result<Vec<_>, MosaicError>>()?;
            let inflight: usize = patches.iter().map(|(p, n)| p.data().len().max(*n)).sum();
            for (&ox, (patch, _)) in chunk.iter().zip(&patches) {
                acc.add(patch, ox, oy, &kernel);
                gauge.observe(acc.samples() + inflight);
            }
        }
    }
    let canvas = acc.finish(h)?;
    Ok(MosaicRun {
        canvas,
        windows: step.window_count(),
        schedule,
        peak_samples: gauge.peak,
    })
}

/// Bicubic upsample of `full` to the canvas, streamed as `f32` bands.
fn initial_estimate(full: &Image, layout: &Layout, band_height: usize, dir: &Path) -> Result<CanvasBands, MosaicError> {
    let (w, h) = layout.canvas();
    let header = CanvasHeader {
        width: w,
        height: h,
        band_height,
        sample: Sample::F32,
    };
    let mut writer = BandWriter::create(dir, header)?;
    let ry = full.height() as f64 / h as f64;
    let mut y = 0;
    while y < h {
        let rows = band_height.min(h - y);
        let band = resample_region(full, 0.0, y as f64 * ry, full.width() as f64, rows as f64 * ry, w, rows);
        writer.write_rows(band.data())?;
        y += rows;
    }
    writer.finish()
}

/// Iterative enhancement: starting from a bicubic estimate, every schedule
/// step runs one `enhance_step` per window on the current estimate and
/// blends the results into the next estimate. The final estimate is
/// written to `out_dir` as 8-bit bands.
pub fn run_iterative(
    full: &Image,
    enhancer: &dyn Enhancer,
    zoom: f64,
    schedule: &WindowSchedule,
    params: &MosaicParams,
    out_dir: impl AsRef<Path>,
) -> Result<MosaicRun, MosaicError> {
    let d = enhancer.descriptor();
    if d.mode != Mode::Iterative {
        return Err(MosaicError::NotIterative(d.name));
    }
    let layout = Layout::new(full, zoom, params.context)?;
    let (w, h) = layout.canvas();
    if schedule.canvas != (w, h) {
        return Err(MosaicError::InvalidRange(format!(
            "schedule canvas {:?} differs from {:?}",
            schedule.canvas,
            (w, h)
        )));
    }
    if schedule.steps.is_empty() {
        return Err(MosaicError::InvalidRange("empty schedule".into()));
    }
    schedule.check_coverage()?;
    let window_side = schedule.window.0.max(schedule.window.1);
    if params.band_height < window_side.min(h) {
        return Err(MosaicError::InvalidBandHeight {
            band_height: params.band_height,
            window: window_side,
        });
    }
    let kernel = BlendKernel::new(schedule.window.0, schedule.window.1, params.margin);
    let full = full.to_rgb();
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let scratch = |k: usize| out_dir.join(format!(".estimate_{k}"));

    let mut estimate = initial_estimate(&full, &layout, params.band_height, &scratch(0))?;
    let mut gauge = Gauge::default();
    let step_count = schedule.steps.len() as u32;
    let mut windows = 0;
    for (k, step) in schedule.steps.iter().enumerate() {
        let last = k + 1 == schedule.steps.len();
        let header = CanvasHeader {
            width: w,
            height: h,
            band_height: params.band_height,
            sample: if last { Sample::U8 } else { Sample::F32 },
        };
        let dir = if last { out_dir.to_path_buf() } else { scratch(k + 1) };
        let mut acc = Accumulator::new(BandWriter::create(&dir, header)?, k);
        for &oy in &step.ys {
            acc.flush_before(oy)?;
            let (_, py) = layout.plan(0, oy, schedule.window);
            // Canvas rows the enhancer grid of this window row reads, with
            // room for the interpolation kernel.
            let top = layout.ay.to_canvas(py.crop);
            let bottom = layout.ay.to_canvas(py.crop + py.crop_len);
            let r0 = (top.floor() as usize).saturating_sub(3);
            let r1 = ((bottom.ceil() as usize) + 3).min(h);
            let rows = estimate.read_rows(r0, r1)?;
            for chunk in step.xs.chunks(chunk_size()) {
                let patches = chunk
                    .par_iter()
                    .map(|&ox| {
                        let (px, py) = layout.plan(ox, oy, schedule.window);
                        let current = sample_region(
                            &rows,
                            layout.ax.to_canvas(px.crop),
                            layout.ay.to_canvas(py.crop) - r0 as f64,
                            layout.ax.to_canvas(px.crop + px.crop_len) - layout.ax.to_canvas(px.crop),
                            layout.ay.to_canvas(py.crop + py.crop_len) - layout.ay.to_canvas(py.crop),
                            px.out_len,
                            py.out_len,
                        );
                        let req = EnhanceRequest {
                            lr: crop_full(&full, &px, &py),
                            zoom,
                            step_index: k as u32,
                            step_count,
                            window_origin: (ox as i64, oy as i64),
                        };
                        let out = enhancer.enhance_step(&req, &current).map_err(enhance_error(ox, oy))?;
                        check_output(&out, &px, &py)?;
                        Ok((to_window(&out, &px, &py), out.data().len() + current.data().len()))
                    })
                    .collect::<Result<Vec<_>, MosaicError>>()?;
                let inflight: usize = patches.iter().map(|(p, n)| p.data().len() + *n).sum();
                for (&ox, (patch, _)) in chunk.iter().zip(&patches) {
                    acc.add(patch, ox, oy, &kernel);
                    gauge.observe(acc.samples() + inflight + rows.data().len());
                }
            }
        }
        windows += step.window_count();
        let next = acc.finish(h)?;
        let previous = std::mem::replace(&mut estimate, next);
        let old_dir = previous.dir().to_path_buf();
        previous.remove()?;
        let _ = fs::remove_dir(old_dir);
    }
    Ok(MosaicRun {
        canvas: estimate,
        schedule: schedule.clone(),
        windows,
        peak_samples: gauge.peak,
    })
}
