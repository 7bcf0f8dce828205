use std::sync::{Arc, OnceLock};

use gigazoom::dataset::{build_dataset, prepare_closeup, sample_pairs, CaptureSet, DatasetManifest};
use gigazoom::degrade::{laplacian_variance, resample_bicubic, DegradationRecipe};
use gigazoom::enhance::{
    BicubicEnhancer, EnhanceError, EnhanceRequest, Enhancer, ExemplarBank, ExemplarEnhancer, ExemplarParams,
    ExternalConfig, ExternalEnhancer, IterativeProxy,
};
use gigazoom::fixture::{Capture, CaptureSpec};
use gigazoom::Image;
use proptest::prelude::*;
use rayon::prelude::*;

fn capture_set() -> CaptureSet {
    let spec = CaptureSpec {
        seed: 4,
        scales: vec![0.25],
        full_size: (256, 256),
        closeup_size: (256, 256),
        frame_size: (32, 32),
        ..Default::default()
    };
    let cap = Capture::generate(&spec);
    CaptureSet {
        full: cap.full,
        closeups: cap.closeups,
        transforms: cap.truth.closeups.iter().map(|c| c.transform).collect(),
    }
}

/// Twelve 128 px HR patches with their 32 px LR counterparts.
fn pairs() -> &'static Vec<(Image, Image)> {
    static PAIRS: OnceLock<Vec<(Image, Image)>> = OnceLock::new();
    PAIRS.get_or_init(|| {
        let set = capture_set();
        let prepared = vec![prepare_closeup(&set, 0, &DegradationRecipe::default()).unwrap()];
        sample_pairs(&prepared, 128, 12, 17)
            .unwrap()
            .into_iter()
            .map(|p| (p.hr, p.lr))
            .collect()
    })
}

fn bank() -> Arc<ExemplarBank> {
    static BANK: OnceLock<Arc<ExemplarBank>> = OnceLock::new();
    BANK.get_or_init(|| Arc::new(ExemplarBank::from_pairs(&pairs()[..10], 16, 8).unwrap()))
        .clone()
}

fn exemplar(lambda: f32) -> ExemplarEnhancer {
    let params = ExemplarParams {
        lambda,
        ..Default::default()
    };
    ExemplarEnhancer::new(bank(), &params).unwrap()
}

fn builtins() -> Vec<Box<dyn Enhancer>> {
    vec![
        Box::new(BicubicEnhancer),
        Box::new(exemplar(1.0)),
        Box::new(IterativeProxy::new(exemplar(1.0))),
    ]
}

const ZOOMS: [f64; 6] = [2.0, 4.0, 6.93, 8.0, 20.0, 30.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn output_dims_follow_zoom(w in 1usize..48, h in 1usize..48, zi in 0usize..6, seed in 0u32..1000) {
        let z = ZOOMS[zi];
        let lr = Image::from_fn(w, h, 3, |x, y, c| ((x * 13 + y * 7 + c * 5 + seed as usize) % 17) as f32 / 16.0);
        let req = EnhanceRequest::new(lr, z);
        let expected = ((w as f64 * z).round() as usize, (h as f64 * z).round() as usize);
        for e in builtins() {
            let out = e.enhance(&req).unwrap();
            prop_assert_eq!(out.dims(), expected);
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn flat_input_gives_flat_output() {
    let req = EnhanceRequest::new(Image::filled(40, 24, 3, 0.37), 4.0);
    for e in builtins() {
        let out = e.enhance(&req).unwrap();
        let err = out.data().iter().map(|&v| (v - 0.37).abs() as f64).sum::<f64>() / out.data().len() as f64;
        assert!(err < 0.02, "{}: {err}", e.descriptor().name);
    }
}

#[test]
fn builtins_are_deterministic() {
    let req = EnhanceRequest::new(pairs()[11].1.clone(), 6.93);
    for e in builtins() {
        assert_eq!(e.enhance(&req).unwrap(), e.enhance(&req).unwrap());
    }
}

#[test]
fn zero_lambda_is_bicubic() {
    for (_, lr) in &pairs()[9..] {
        let req = EnhanceRequest::new(lr.clone(), 4.0);
        assert_eq!(exemplar(0.0).enhance(&req).unwrap(), BicubicEnhancer.enhance(&req).unwrap());
    }
}

#[test]
fn banked_patch_reproduces_its_hr() {
    let (hr, lr) = &pairs()[3];
    let out = exemplar(1.0).enhance(&EnhanceRequest::new(lr.clone(), 4.0)).unwrap();
    assert_eq!(out.dims(), hr.dims());
    let err = out.mean_abs_diff(hr);
    assert!(err < 0.05, "{err}");
    let bicubic = resample_bicubic(lr, 4.0).unwrap().mean_abs_diff(hr);
    assert!(err < bicubic, "{err} vs {bicubic}");
}

#[test]
fn detail_raises_high_frequency_energy() {
    for (_, lr) in &pairs()[10..] {
        let req = EnhanceRequest::new(lr.clone(), 4.0);
        let ours = laplacian_variance(&exemplar(1.0).enhance(&req).unwrap());
        let base = laplacian_variance(&BicubicEnhancer.enhance(&req).unwrap());
        assert!(ours >= base, "{ours} < {base}");
    }
}

#[test]
fn bank_size_follows_tile_grid() {
    let lr = Image::from_fn(50, 35, 3, |x, y, _| ((x * y) % 9) as f32 / 8.0);
    let hr = resample_bicubic(&lr, 4.0).unwrap();
    let bank = ExemplarBank::from_pairs(&[(hr.clone(), lr.clone())], 16, 16).unwrap();
    assert_eq!(bank.len(), (50 / 16) * (35 / 16));
    let dup = ExemplarBank::from_pairs(&[(hr.clone(), lr.clone()), (hr, lr)], 16, 16).unwrap();
    assert_eq!(dup.len(), 2 * bank.len());
    assert_eq!(dup.entries()[bank.len()].pair, 1);
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(matches!(ExemplarBank::from_pairs(&[], 16, 8), Err(EnhanceError::EmptyManifest)));
    let tiny = ExemplarBank::from_pairs(&[(Image::new(40, 40, 3), Image::new(10, 10, 3))], 16, 8).unwrap();
    assert!(tiny.is_empty());
    assert!(matches!(
        ExemplarEnhancer::new(Arc::new(tiny), &ExemplarParams::default()),
        Err(EnhanceError::EmptyBank)
    ));

    let dir = tempfile::tempdir().unwrap();
    build_dataset(&capture_set(), &DegradationRecipe::default(), 128, 0, 1, dir.path()).unwrap();
    let m = DatasetManifest::load(dir.path()).unwrap();
    assert!(matches!(ExemplarBank::from_manifest(&m, 16, 8), Err(EnhanceError::EmptyManifest)));
}

#[test]
fn bank_from_manifest_matches_pairs() {
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&capture_set(), &DegradationRecipe::default(), 128, 3, 2, dir.path()).unwrap();
    let m = DatasetManifest::load(dir.path()).unwrap();
    let bank = ExemplarBank::from_manifest(&m, 16, 8).unwrap();
    // 32 px LR patches: origins 0, 8, 16 per axis.
    assert_eq!(bank.len(), 3 * 9);
}

fn worker(args: &[&str], timeout_secs: f64) -> Result<ExternalEnhancer, EnhanceError> {
    ExternalEnhancer::start(ExternalConfig {
        command: env!("CARGO_BIN_EXE_echo-worker").into(),
        args: args.iter().map(|s| s.to_string()).collect(),
        timeout_secs,
        workers: 1,
    })
}

fn request() -> EnhanceRequest {
    EnhanceRequest::new(pairs()[0].1.clone(), 2.0)
}

#[test]
fn echo_worker_matches_local_bicubic() {
    let ext = worker(&[], 30.0).unwrap();
    assert_eq!(ext.descriptor().name, "echo-bicubic");
    let req = request();
    assert_eq!(req.lr.dims(), (32, 32));
    let out = ext.enhance(&req).unwrap();
    assert_eq!(out.dims(), (64, 64));
    assert_eq!(out, BicubicEnhancer.enhance(&req).unwrap());
}

#[test]
fn worker_pool_serves_concurrent_requests() {
    let ext = ExternalEnhancer::start(ExternalConfig {
        command: env!("CARGO_BIN_EXE_echo-worker").into(),
        workers: 3,
        ..Default::default()
    })
    .unwrap();
    let outs: Vec<Image> = pairs()
        .par_iter()
        .map(|(_, lr)| ext.enhance(&EnhanceRequest::new(lr.clone(), 3.0)).unwrap())
        .collect();
    for ((_, lr), out) in pairs().iter().zip(&outs) {
        assert_eq!(*out, resample_bicubic(lr, 3.0).unwrap());
    }
}

#[test]
fn wrong_dims_is_protocol_error() {
    let ext = worker(&["--wrong-dims"], 30.0).unwrap();
    assert!(matches!(ext.enhance(&request()), Err(EnhanceError::Protocol(_))));
}

#[test]
fn bad_magic_and_wrong_id_are_protocol_errors() {
    for flag in ["--bad-magic", "--wrong-id"] {
        let ext = worker(&[flag], 30.0).unwrap();
        assert!(matches!(ext.enhance(&request()), Err(EnhanceError::Protocol(_))), "{flag}");
    }
}

#[test]
fn worker_dying_mid_frame_is_worker_exit() {
    let ext = worker(&["--die-mid-frame"], 30.0).unwrap();
    assert!(matches!(ext.enhance(&request()), Err(EnhanceError::WorkerExit(_))));
    // The pool replaces the dead worker.
    assert!(matches!(ext.enhance(&request()), Err(EnhanceError::WorkerExit(_))));
}

#[test]
fn worker_error_frame_is_reported() {
    let ext = worker(&["--error"], 30.0).unwrap();
    for _ in 0..2 {
        match ext.enhance(&request()) {
            Err(EnhanceError::Worker(msg)) => assert_eq!(msg, "refused"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn slow_worker_times_out() {
    let ext = worker(&["--sleep-ms", "3000"], 0.2).unwrap();
    let t = std::time::Instant::now();
    assert!(matches!(ext.enhance(&request()), Err(EnhanceError::Timeout(_))));
    assert!(t.elapsed().as_secs_f64() < 2.5);
}

#[test]
fn missing_worker_fails_to_start() {
    let r = ExternalEnhancer::start(ExternalConfig {
        command: "/nonexistent/worker".into(),
        ..Default::default()
    });
    assert!(matches!(r, Err(EnhanceError::Io(_))));
}
