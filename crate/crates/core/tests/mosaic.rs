use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use gigazoom::dataset::{prepare_closeup, sample_pairs, CaptureSet};
use gigazoom::degrade::{resample_bicubic, DegradationRecipe};
use gigazoom::enhance::{
    run_isolated, BicubicEnhancer, EnhanceError, EnhanceRequest, Enhancer, EnhancerDescriptor, ExemplarBank,
    ExemplarEnhancer, ExemplarParams, IterativeProxy,
};
use gigazoom::fixture::{Capture, CaptureSpec, Texture, View};
use gigazoom::mosaic::{
    axis_origins, blend_kernel, partition_of_unity_error, run_iterative, run_oneshot, window_count, MosaicError,
    MosaicParams, WindowSchedule,
};
use gigazoom::Image;
use proptest::prelude::*;

fn texture(size: usize, seed: u64) -> Image {
    let v = View {
        center: [0.0, 0.0],
        side: 0.25,
        angle: 0.0,
    };
    Texture::new(seed, 2.5 * 0.25 / size as f64, 2.0, 6, 0.025).render(&v, size, size)
}

fn params(window: usize, stride: usize, margin: usize) -> MosaicParams {
    MosaicParams {
        window,
        stride_min: stride,
        stride_max: stride,
        steps: 1,
        margin,
        band_height: window.max(64),
        context: 4,
    }
}

#[test]
fn tiled_bicubic_matches_whole_image() {
    let f = texture(96, 3);
    for zoom in [2.0, 4.0, 6.93] {
        let oracle = resample_bicubic(&f, zoom).unwrap().quantized();
        for (window, stride, margin) in [(64, 32, 0), (96, 72, 16), (160, 120, 40)] {
            let dir = tempfile::tempdir().unwrap();
            let run = run_oneshot(&f, &BicubicEnhancer, zoom, &params(window, stride, margin), dir.path()).unwrap();
            let out = run.canvas.to_image().unwrap();
            assert_eq!(out.dims(), oracle.dims());
            let err = out.mean_abs_diff(&oracle);
            assert!(err < 1e-3, "zoom {zoom} window {window}: {err}");
        }
    }
}

struct Counting<E> {
    inner: E,
    calls: AtomicUsize,
}

impl<E: Enhancer> Enhancer for Counting<E> {
    fn descriptor(&self) -> EnhancerDescriptor {
        self.inner.descriptor()
    }

    fn enhance(&self, r: &EnhanceRequest) -> Result<Image, EnhanceError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.enhance(r)
    }
}

#[test]
fn canvas_smaller_than_window_is_one_call() {
    let f = texture(20, 1);
    let e = Counting {
        inner: BicubicEnhancer,
        calls: AtomicUsize::new(0),
    };
    let dir = tempfile::tempdir().unwrap();
    let run = run_oneshot(&f, &e, 2.5, &params(128, 64, 16), dir.path()).unwrap();
    assert_eq!(e.calls.load(Ordering::Relaxed), 1);
    assert_eq!(run.windows, 1);
    assert_eq!(run.canvas.to_image().unwrap(), resample_bicubic(&f, 2.5).unwrap().quantized());
}

#[test]
fn constant_input_gives_constant_output() {
    let f = Image::filled(40, 30, 3, 0.6);
    let dir = tempfile::tempdir().unwrap();
    let out = run_oneshot(&f, &BicubicEnhancer, 4.0, &params(64, 40, 8), dir.path())
        .unwrap()
        .canvas
        .to_image()
        .unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 0.02));
}

#[test]
fn band_memory_stays_bounded() {
    let f = texture(128, 5);
    let p = MosaicParams {
        band_height: 96,
        ..params(96, 48, 16)
    };
    let dir = tempfile::tempdir().unwrap();
    let run = run_oneshot(&f, &BicubicEnhancer, 4.0, &p, dir.path()).unwrap();
    let (w, _) = run.canvas.dims();
    assert!(run.peak_samples <= 3 * p.band_height * w * 3, "{} samples", run.peak_samples);
    assert_eq!(run.canvas.header().band_count(), 512usize.div_ceil(96));
}

fn exemplar_bank() -> Arc<ExemplarBank> {
    let spec = CaptureSpec {
        seed: 12,
        scales: vec![0.25],
        full_size: (128, 128),
        closeup_size: (128, 128),
        frame_size: (32, 32),
        ..Default::default()
    };
    let cap = Capture::generate(&spec);
    let set = CaptureSet {
        full: cap.full,
        closeups: cap.closeups,
        transforms: cap.truth.closeups.iter().map(|c| c.transform).collect(),
    };
    let prepared = vec![prepare_closeup(&set, 0, &DegradationRecipe::default()).unwrap()];
    let pairs: Vec<_> = sample_pairs(&prepared, 64, 12, 3)
        .unwrap()
        .into_iter()
        .map(|p| (p.hr, p.lr))
        .collect();
    Arc::new(ExemplarBank::from_pairs(&pairs, 8, 4).unwrap())
}

fn exemplar() -> ExemplarEnhancer {
    let params = ExemplarParams {
        tile: 8,
        stride: 4,
        blend_overlap: 4,
        ..Default::default()
    };
    ExemplarEnhancer::new(exemplar_bank(), &params).unwrap()
}

#[test]
fn output_is_identical_across_thread_counts() {
    let f = texture(64, 8);
    let e = exemplar();
    let run = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let img = pool.install(|| {
            run_oneshot(&f, &e, 4.0, &params(64, 40, 12), dir.path())
                .unwrap()
                .canvas
                .to_image()
                .unwrap()
        });
        img
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn single_window_iteration_matches_isolated_limit() {
    let f = texture(24, 2);
    let e = IterativeProxy::new(exemplar());
    let p = params(128, 64, 16);
    let schedule = MosaicParams { steps: 3, ..p }.schedule(96, 96).unwrap();
    assert_eq!(window_count(&schedule).total, 3);
    let dir = tempfile::tempdir().unwrap();
    let out = run_iterative(&f, &e, 4.0, &schedule, &p, dir.path()).unwrap();
    let req = EnhanceRequest {
        step_count: 3,
        ..EnhanceRequest::new(f.clone(), 4.0)
    };
    let limit = run_isolated(&e, &req, resample_bicubic(&f, 4.0).unwrap()).unwrap();
    let got = out.canvas.to_image().unwrap();
    assert!(got.max_abs_diff(&limit.quantized()) < 1e-6);
    // Scratch estimates are cleaned up.
    let left: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".estimate"))
        .collect();
    assert!(left.is_empty());
}

/// Constant target chosen by window position.
struct ByOrigin;

impl Enhancer for ByOrigin {
    fn descriptor(&self) -> EnhancerDescriptor {
        BicubicEnhancer.descriptor()
    }

    fn enhance(&self, r: &EnhanceRequest) -> Result<Image, EnhanceError> {
        let (w, h) = r.output_dims();
        let v = if r.window_origin.0 == 0 { 0.2 } else { 0.8 };
        Ok(Image::filled(w, h, 3, v))
    }
}

#[test]
fn overlapping_windows_settle_between_their_targets() {
    let f = Image::filled(24, 16, 3, 0.5);
    let p = params(64, 32, 0);
    let schedule = MosaicParams { steps: 4, ..p }.schedule(96, 64).unwrap();
    assert_eq!(schedule.steps[0].xs, vec![0, 32]);
    let dir = tempfile::tempdir().unwrap();
    let out = run_iterative(&f, &IterativeProxy::new(ByOrigin), 4.0, &schedule, &p, dir.path())
        .unwrap()
        .canvas
        .to_image()
        .unwrap();
    for y in [0, 30, 63] {
        assert!((out.get(10, y, 0) - 0.2).abs() < 1e-2);
        assert!((out.get(80, y, 0) - 0.8).abs() < 1e-2);
        let mid = out.get(48, y, 0);
        assert!(mid > 0.25 && mid < 0.75, "{mid}");
    }
}

#[test]
fn iterative_run_requires_iterative_enhancer() {
    let f = texture(32, 1);
    let p = params(64, 32, 0);
    let s = p.schedule(128, 128).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        run_iterative(&f, &BicubicEnhancer, 4.0, &s, &p, dir.path()),
        Err(MosaicError::NotIterative(_))
    ));
    let mut gap = s.clone();
    gap.steps[0].xs = vec![0];
    assert!(matches!(
        run_iterative(&f, &IterativeProxy::new(BicubicEnhancer), 4.0, &gap, &p, dir.path()),
        Err(MosaicError::ScheduleCoverageGap { step: 0, .. })
    ));
}

struct Failing;

impl Enhancer for Failing {
    fn descriptor(&self) -> EnhancerDescriptor {
        BicubicEnhancer.descriptor()
    }

    fn enhance(&self, r: &EnhanceRequest) -> Result<Image, EnhanceError> {
        if r.window_origin == (32, 32) {
            return Err(EnhanceError::Worker("boom".into()));
        }
        BicubicEnhancer.enhance(r)
    }
}

#[test]
fn enhancer_errors_carry_window_position() {
    let f = texture(32, 1);
    let dir = tempfile::tempdir().unwrap();
    match run_oneshot(&f, &Failing, 4.0, &params(64, 32, 0), dir.path()) {
        Err(MosaicError::Enhance { x: 32, y: 32, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn window_count_matches_enumeration() {
    let mut rng = 12345u64;
    let mut next = |n: usize| {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((rng >> 33) as usize) % n
    };
    for _ in 0..100 {
        let window = 8 + next(120);
        let (cw, ch) = (window + next(400), window + next(400));
        let steps = 1 + next(6);
        let lo = 1 + next(window);
        let hi = lo + next(window - lo + 1);
        let strides = gigazoom::mosaic::stride_schedule(steps, lo, hi).unwrap();
        let s = WindowSchedule::build((cw, ch), (window, window), &strides).unwrap();
        let mut brute = 0;
        for &st in &strides {
            let mut nx = 0;
            let mut o = 0;
            // Count origins by walking until the window reaches the edge.
            loop {
                nx += 1;
                if o + window >= cw {
                    break;
                }
                o = (o + st).min(cw - window);
            }
            let mut ny = 0;
            o = 0;
            loop {
                ny += 1;
                if o + window >= ch {
                    break;
                }
                o = (o + st).min(ch - window);
            }
            brute += nx * ny;
        }
        assert_eq!(window_count(&s).total, brute);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn steps_cover_and_weights_sum_to_one(
        window in 4usize..40, extra_w in 0usize..60, extra_h in 0usize..60,
        steps in 1usize..4, lo_frac in 0.05f64..1.0, spread in 0.0f64..1.0, margin_frac in 0.0f64..0.5,
    ) {
        let lo = ((window as f64 * lo_frac) as usize).max(1);
        let hi = lo + ((window - lo) as f64 * spread) as usize;
        let margin = (window as f64 * margin_frac) as usize;
        let strides = gigazoom::mosaic::stride_schedule(steps, lo, hi).unwrap();
        let s = WindowSchedule::build((window + extra_w, window + extra_h), (window, window), &strides).unwrap();
        s.check_coverage().unwrap();
        let k = blend_kernel(window, margin.min(window / 2)).unwrap();
        for step in 0..steps {
            let (err, min) = partition_of_unity_error(&s, step, &k);
            prop_assert!(min >= 1);
            prop_assert!(err < 1e-6);
            let xs = &s.steps[step].xs;
            prop_assert_eq!(*xs.last().unwrap() + window, window + extra_w);
            prop_assert_eq!(xs, &axis_origins(window + extra_w, window, strides[step]).unwrap());
        }
    }
}
