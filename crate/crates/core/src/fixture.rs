//! Synthetic captures with known ground truth.
//!
//! A master texture is an analytic sum of sinusoids with log-spaced
//! frequencies and equal amplitudes (a roughly 1/f² power spectrum, so every
//! magnification looks statistically alike). Any view of it can be rendered
//! at any resolution; components too fine for the view's pixel grid are
//! faded out, which keeps renders free of aliasing. Close-ups, the full
//! view, and dolly videos between them are all renders of the same texture,
//! so every transform between them is known exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Similarity;
use crate::raster::{Image, RasterError};

const BASE_COLOR: [f64; 3] = [0.52, 0.46, 0.40];

#[derive(Clone, Debug)]
struct Wave {
    k: [f64; 2],
    phase: f64,
    amp: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<Wave>,
}

/// Weight of a component at `cycles` per pixel.
fn taper(cycles: f64) -> f64 {
    const PASS: f64 = 0.2;
    const STOP: f64 = 0.4;
    if cycles <= PASS {
        1.0
    } else if cycles >= STOP {
        0.0
    } else {
        0.5 + 0.5 * (std::f64::consts::PI * (cycles - PASS) / (STOP - PASS)).cos()
    }
}

impl Texture {
    /// Components with periods from `finest` to `coarsest` (master units),
    /// `per_octave` of them per octave.
    pub fn new(seed: u64, finest: f64, coarsest: f64, per_octave: usize, amplitude: f64) -> Texture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let octaves = (coarsest / finest).log2().max(0.0);
        let n = ((octaves * per_octave as f64).ceil() as usize).max(1);
        let waves = (0..n)
            .map(|i| {
                let period = finest * 2f64.powf(i as f64 / per_octave as f64);
                let freq = std::f64::consts::TAU / period;
                let theta = rng.gen::<f64>() * std::f64::consts::PI;
                let phase = rng.gen::<f64>() * std::f64::consts::TAU;
                let mut amp = [0.0; 3];
                for a in &mut amp {
                    *a = amplitude * (1.0 + 0.5 * (rng.gen::<f64>() - 0.5));
                }
                Wave {
                    k: [freq * theta.cos(), freq * theta.sin()],
                    phase,
                    amp,
                }
            })
            .collect();
        Texture { waves }
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }

    /// Renders `view` as a `width × height` RGB image.
    pub fn render(&self, view: &View, width: usize, height: usize) -> Image {
        let m = view.pixel_to_master(width, height);
        // Per component: phase at the centre of pixel (0, 0) and per-pixel
        // increments.
        let active: Vec<(f64, f64, f64, [f64; 3])> = self
            .waves
            .iter()
            .filter_map(|wv| {
                let gx = m.a * wv.k[0] + m.b * wv.k[1];
                let gy = -m.b * wv.k[0] + m.a * wv.k[1];
                let wt = taper(gx.hypot(gy) / std::f64::consts::TAU);
                if wt == 0.0 {
                    return None;
                }
                let p0 = wv.k[0] * m.tx + wv.k[1] * m.ty + wv.phase + 0.5 * (gx + gy);
                Some((p0, gx, gy, wv.amp.map(|a| a * wt)))
            })
            .collect();

        let mut data = vec![0.0f32; width * height * 3];
        data.par_chunks_mut(width * 3).enumerate().for_each(|(y, row)| {
            let mut acc = vec![[0.0f64; 3]; width];
            for &(p0, gx, gy, amp) in &active {
                let start = p0 + gy * y as f64;
                let (mut s, mut c) = start.sin_cos();
                let (ds, dc) = gx.sin_cos();
                for (x, a) in acc.iter_mut().enumerate() {
                    if x % 64 == 0 {
                        // Re-anchor the recurrence to bound rounding drift.
                        let t = start + gx * x as f64;
                        (s, c) = t.sin_cos();
                    }
                    a[0] += amp[0] * s;
                    a[1] += amp[1] * s;
                    a[2] += amp[2] * s;
                    (s, c) = (s * dc + c * ds, c * dc - s * ds);
                }
            }
            for (x, a) in acc.iter().enumerate() {
                for ch in 0..3 {
                    row[x * 3 + ch] = (BASE_COLOR[ch] + a[ch]).clamp(0.0, 1.0) as f32;
                }
            }
        });
        Image::from_vec(width, height, 3, data)
    }
}

/// A square-pixel view of the master plane: `side` master units across
/// the image width, centred at `center`, rotated by `angle`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub center: [f64; 2],
    pub side: f64,
    pub angle: f64,
}

impl View {
    /// Pixel-edge coordinates (pixel `(0, 0)` spans `[0, 1)²`) to master
    /// coordinates.
    pub fn pixel_to_master(&self, width: usize, height: usize) -> Similarity {
        let d = self.side / width as f64;
        let (sn, cs) = self.angle.sin_cos();
        let (a, b) = (d * cs, d * sn);
        let ox = -0.5 * width as f64;
        let oy = -0.5 * height as f64;
        Similarity::new(a, b, self.center[0] + a * ox - b * oy, self.center[1] + b * ox + a * oy)
    }

    /// Transform from pixels of this view to pixels of `other`.
    pub fn pixel_map(&self, size: (usize, usize), other: &View, other_size: (usize, usize)) -> Similarity {
        let to_master = self.pixel_to_master(size.0, size.1);
        let from_master = other
            .pixel_to_master(other_size.0, other_size.1)
            .inverse()
            .expect("view side is positive");
        from_master.after(&to_master)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureSpec {
    pub seed: u64,
    pub full_size: (usize, usize),
    pub closeup_size: (usize, usize),
    pub frame_size: (usize, usize),
    /// Close-up view width relative to the full view, in capture order.
    pub scales: Vec<f64>,
    /// View-size ratio between consecutive frames.
    pub zoom_per_frame: f64,
    /// Largest per-frame pan, as a fraction of the view width.
    pub pan_per_frame: f64,
    /// Largest close-up roll relative to the full view, radians.
    pub max_roll: f64,
}

impl Default for CaptureSpec {
    fn default() -> Self {
        CaptureSpec {
            seed: 1,
            full_size: (384, 384),
            closeup_size: (384, 384),
            frame_size: (256, 256),
            scales: vec![0.125],
            zoom_per_frame: 1.06,
            pan_per_frame: 0.03,
            max_roll: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseupTruth {
    pub view: View,
    /// Close-up pixels to full-image pixels.
    pub transform: Similarity,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTruth {
    pub frames: usize,
    /// First-frame pixels to last-frame pixels.
    pub transform: Similarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub full_view: View,
    pub closeups: Vec<CloseupTruth>,
    pub videos: Vec<VideoTruth>,
}

pub struct Capture {
    pub full: Image,
    pub closeups: Vec<Image>,
    /// RGB frames per video; video `i` runs from close-up `i` to close-up
    /// `i + 1`, the last one to the full view.
    pub videos: Vec<Vec<Image>>,
    pub truth: GroundTruth,
}

fn interpolate_views(a: &View, b: &View, spec: &CaptureSpec) -> Vec<View> {
    let zoom_steps = ((b.side / a.side).ln().abs() / spec.zoom_per_frame.ln()).ceil();
    let pan = (b.center[0] - a.center[0]).hypot(b.center[1] - a.center[1]);
    let dl = b.side - a.side;
    let pan_steps = if dl.abs() > 1e-9 * a.side {
        // The centre moves by pan/|dl| view widths per unit of relative zoom.
        let per_frame = (1.0 + spec.pan_per_frame * dl.abs() / pan.max(1e-300)).ln();
        ((b.side / a.side).ln().abs() / per_frame).ceil()
    } else {
        (pan / (spec.pan_per_frame * a.side)).ceil()
    };
    let roll_steps = ((b.angle - a.angle).abs() / 0.01).ceil();
    let n = zoom_steps.max(pan_steps).max(roll_steps).max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let side = a.side * (b.side / a.side).powf(t);
            // Moving the centre linearly in the side length keeps one master
            // point fixed on screen, like a dolly along the optical axis.
            let u = if dl.abs() > 1e-9 * a.side { (side - a.side) / dl } else { t };
            View {
                center: [
                    a.center[0] + (b.center[0] - a.center[0]) * u,
                    a.center[1] + (b.center[1] - a.center[1]) * u,
                ],
                side,
                angle: a.angle + (b.angle - a.angle) * t,
            }
        })
        .collect()
}

impl Capture {
    pub fn generate(spec: &CaptureSpec) -> Capture {
        assert!(!spec.scales.is_empty(), "at least one close-up");
        assert!(spec.scales.iter().all(|&s| s > 0.0 && s < 1.0), "scales in (0, 1)");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
        let full_view = View {
            center: [0.0, 0.0],
            side: 1.0,
            angle: 0.0,
        };
        let aspect = spec.full_size.1 as f64 / spec.full_size.0 as f64;
        let caspect = spec.closeup_size.1 as f64 / spec.closeup_size.0 as f64;
        let views: Vec<View> = spec
            .scales
            .iter()
            .map(|&s| {
                let roll = spec.max_roll * (2.0 * rng.gen::<f64>() - 1.0);
                // Keep the rotated close-up well inside the full view.
                let half = 0.5 * s * (1.0 + caspect) * 1.05;
                let rx = (0.5 - half).max(0.0) * 0.8;
                let ry = (0.5 * aspect - half).max(0.0) * 0.8;
                View {
                    center: [rx * (2.0 * rng.gen::<f64>() - 1.0), ry * (2.0 * rng.gen::<f64>() - 1.0)],
                    side: s,
                    angle: roll,
                }
            })
            .collect();

        let min_pixel = views
            .iter()
            .map(|v| v.side / spec.closeup_size.0 as f64)
            .chain([1.0 / spec.full_size.0 as f64])
            .fold(f64::INFINITY, f64::min);
        let texture = Texture::new(spec.seed, 2.5 * min_pixel, 2.0, 6, 0.025);

        let full = texture.render(&full_view, spec.full_size.0, spec.full_size.1);
        let closeups: Vec<Image> = views
            .iter()
            .map(|v| texture.render(v, spec.closeup_size.0, spec.closeup_size.1))
            .collect();

        let mut videos = Vec::new();
        let mut video_truth = Vec::new();
        for i in 0..views.len() {
            let end = views.get(i + 1).unwrap_or(&full_view);
            let path = interpolate_views(&views[i], end, spec);
            let frames: Vec<Image> = path
                .iter()
                .map(|v| texture.render(v, spec.frame_size.0, spec.frame_size.1))
                .collect();
            video_truth.push(VideoTruth {
                frames: frames.len(),
                transform: path[0].pixel_map(spec.frame_size, path.last().unwrap(), spec.frame_size),
            });
            videos.push(frames);
        }

        let closeup_truth = views
            .iter()
            .map(|v| {
                let t = v.pixel_map(spec.closeup_size, &full_view, spec.full_size);
                CloseupTruth {
                    view: *v,
                    transform: t,
                    scale: t.scale(),
                }
            })
            .collect();

        Capture {
            full,
            closeups,
            videos,
            truth: GroundTruth {
                full_view,
                closeups: closeup_truth,
                videos: video_truth,
            },
        }
    }

    /// Writes `full.png`, `closeups/closeup_NNN.png`,
    /// `videos/video_NNN/frame_NNNNNN.png` and `ground_truth.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), RasterError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("closeups"))?;
        self.full.save_png(dir.join("full.png"))?;
        for (i, c) in self.closeups.iter().enumerate() {
            c.save_png(dir.join(format!("closeups/closeup_{i:03}.png")))?;
        }
        for (i, frames) in self.videos.iter().enumerate() {
            let vdir = dir.join(format!("videos/video_{i:03}"));
            std::fs::create_dir_all(&vdir)?;
            for (k, f) in frames.iter().enumerate() {
                f.save_png(vdir.join(format!("frame_{k:06}.png")))?;
            }
        }
        let text = serde_json::to_string_pretty(&self.truth).expect("truth serializes");
        std::fs::write(dir.join("ground_truth.json"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_pixel_map_matches_sampling() {
        let v = View {
            center: [0.1, -0.2],
            side: 0.3,
            angle: 0.2,
        };
        let m = v.pixel_to_master(100, 80);
        // Image centre lands on the view centre.
        let c = m.apply([50.0, 40.0]);
        assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] + 0.2).abs() < 1e-12);
        assert!((m.scale() - 0.003).abs() < 1e-15);
    }

    #[test]
    fn renders_agree_across_resolutions() {
        // The same view at two resolutions differs only by resampling.
        let tex = Texture::new(3, 0.02, 2.0, 6, 0.025);
        let v = View {
            center: [0.0, 0.0],
            side: 0.5,
            angle: 0.0,
        };
        let hi = tex.render(&v, 200, 200);
        let lo = tex.render(&v, 100, 100);
        let t = View::pixel_map(&v, (100, 100), &v, (200, 200));
        let p = t.apply([10.0, 20.0]);
        assert_eq!(p, [20.0, 40.0]);
        let avg = (hi.get(20, 40, 0) + hi.get(21, 40, 0) + hi.get(20, 41, 0) + hi.get(21, 41, 0)) / 4.0;
        assert!((avg - lo.get(10, 20, 0)).abs() < 0.03);
    }

    #[test]
    fn recurrence_matches_direct_evaluation() {
        let tex = Texture::new(9, 0.05, 1.0, 3, 0.03);
        let v = View {
            center: [0.2, 0.1],
            side: 0.7,
            angle: 0.4,
        };
        let img = tex.render(&v, 150, 3);
        let m = v.pixel_to_master(150, 3);
        for &x in &[0usize, 63, 64, 149] {
            let u = m.apply([x as f64 + 0.5, 2.5]);
            let mut val = BASE_COLOR[1];
            for w in &tex.waves {
                let g = [m.a * w.k[0] + m.b * w.k[1], -m.b * w.k[0] + m.a * w.k[1]];
                let wt = taper(g[0].hypot(g[1]) / std::f64::consts::TAU);
                val += w.amp[1] * wt * (w.k[0] * u[0] + w.k[1] * u[1] + w.phase).sin();
            }
            assert!((img.get(x, 2, 1) as f64 - val.clamp(0.0, 1.0)).abs() < 1e-5, "x {x}");
        }
    }

    #[test]
    fn ground_truth_scale_is_view_ratio() {
        let spec = CaptureSpec {
            scales: vec![0.125, 0.25],
            full_size: (128, 128),
            closeup_size: (128, 128),
            frame_size: (64, 64),
            ..Default::default()
        };
        let cap = Capture::generate(&spec);
        assert_eq!(cap.closeups.len(), 2);
        assert_eq!(cap.videos.len(), 2);
        assert!((cap.truth.closeups[0].scale - 0.125).abs() < 1e-12);
        // Video 0 goes from 1/8 to 1/4 of the full view: scale 1/2.
        assert!((cap.truth.videos[0].transform.scale() - 0.5).abs() < 1e-12);
        // Footprints lie inside the full image.
        for c in &cap.truth.closeups {
            let fp = crate::geometry::map_footprint(&c.transform, 128.0, 128.0);
            assert!(fp.aabb.contained_in(128, 128), "{:?}", fp.aabb);
        }
    }
}
