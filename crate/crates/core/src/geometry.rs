//! 2D similarity transforms: closed-form and RANSAC estimation from point
//! correspondences, composition, inversion and footprint mapping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no consensus: best model has {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("empty transform chain")]
    EmptyChain,
}

pub type Point = [f64; 2];

/// `p' = [[a, -b], [b, a]] p + (tx, ty)`: uniform scale, rotation and
/// translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(a: f64, b: f64, tx: f64, ty: f64) -> Self {
        Self { a, b, tx, ty }
    }

    /// Scale `s`, counter-clockwise rotation `angle` (radians), then translation.
    pub fn from_parts(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        Self {
            a: scale * angle.cos(),
            b: scale * angle.sin(),
            tx,
            ty,
        }
    }

    pub fn scaling(s: f64) -> Self {
        Self::from_parts(s, 0.0, 0.0, 0.0)
    }

    pub fn rotation(angle: f64) -> Self {
        Self::from_parts(1.0, angle, 0.0, 0.0)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, tx, ty)
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    /// Square root of the determinant of the linear part.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn angle(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn is_degenerate(&self) -> bool {
        self.a == 0.0 && self.b == 0.0
    }

    /// Largest absolute coefficient difference.
    pub fn max_coeff_diff(&self, other: &Similarity) -> f64 {
        [
            self.a - other.a,
            self.b - other.b,
            self.tx - other.tx,
            self.ty - other.ty,
        ]
        .iter()
        .fold(0.0_f64, |m, d| m.max(d.abs()))
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Similarity) -> Similarity {
        compose(self, first)
    }

    pub fn inverse(&self) -> Result<Similarity, GeometryError> {
        invert(self)
    }
}

/// Returns the transform equivalent to applying `first` then `second`.
pub fn compose(second: &Similarity, first: &Similarity) -> Similarity {
    // Linear parts multiply like complex numbers (a + ib).
    let a = second.a * first.a - second.b * first.b;
    let b = second.a * first.b + second.b * first.a;
    let [tx, ty] = second.apply([first.tx, first.ty]);
    Similarity { a, b, tx, ty }
}

/// Composes transforms listed in application order (earliest first).
pub fn chain(transforms: &[Similarity]) -> Result<Similarity, GeometryError> {
    let (first, rest) = transforms.split_first().ok_or(GeometryError::EmptyChain)?;
    Ok(rest.iter().fold(*first, |acc, t| compose(t, &acc)))
}

pub fn extract_scale(t: &Similarity) -> Result<f64, GeometryError> {
    if t.is_degenerate() {
        return Err(GeometryError::DegenerateInput("zero linear part".into()));
    }
    Ok(t.scale())
}

pub fn invert(t: &Similarity) -> Result<Similarity, GeometryError> {
    let det = t.a * t.a + t.b * t.b;
    if det == 0.0 {
        return Err(GeometryError::DegenerateInput("zero linear part".into()));
    }
    // (a + ib)^-1 = (a - ib) / |.|^2
    let a = t.a / det;
    let b = -t.b / det;
    let tx = -(a * t.tx - b * t.ty);
    let ty = -(b * t.tx + a * t.ty);
    Ok(Similarity { a, b, tx, ty })
}

/// A single source → target point pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Point,
    pub dst: Point,
}

impl Correspondence {
    pub fn new(src: Point, dst: Point) -> Self {
        Self { src, dst }
    }

    pub fn residual(&self, t: &Similarity) -> f64 {
        let p = t.apply(self.src);
        (p[0] - self.dst[0]).hypot(p[1] - self.dst[1])
    }
}

/// Least-squares similarity minimizing `Σ ‖T(src) − dst‖²`.
///
/// Closed form from centroids and the cross-covariance terms of the centred
/// point sets.
pub fn similarity_from_pairs(corrs: &[Correspondence]) -> Result<Similarity, GeometryError> {
    if corrs.len() < 2 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 2 correspondences, got {}",
            corrs.len()
        )));
    }
    let n = corrs.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for c in corrs {
        sx += c.src[0];
        sy += c.src[1];
        dx += c.dst[0];
        dy += c.dst[1];
    }
    let (sx, sy, dx, dy) = (sx / n, sy / n, dx / n, dy / n);

    let (mut spread, mut dot, mut cross, mut magnitude) = (0.0, 0.0, 0.0, 0.0);
    for c in corrs {
        let (x, y) = (c.src[0] - sx, c.src[1] - sy);
        let (u, v) = (c.dst[0] - dx, c.dst[1] - dy);
        spread += x * x + y * y;
        dot += x * u + y * v;
        cross += x * v - y * u;
        magnitude += c.src[0] * c.src[0] + c.src[1] * c.src[1];
    }
    if spread <= 1e-20 * magnitude.max(1.0) {
        return Err(GeometryError::DegenerateInput(
            "source points are coincident".into(),
        ));
    }
    let a = dot / spread;
    let b = cross / spread;
    Ok(Similarity {
        a,
        b,
        tx: dx - (a * sx - b * sy),
        ty: dy - (b * sx + a * sy),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Inlier residual bound in pixels (strict).
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            iterations: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacFit {
    pub transform: Similarity,
    pub inliers: Vec<bool>,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Score of a candidate model: inlier count, then mean inlier residual.
#[derive(Clone, Copy)]
struct Score {
    count: usize,
    mean_residual: f64,
}

impl Score {
    fn of(model: &Similarity, corrs: &[Correspondence], threshold: f64) -> Score {
        let mut count = 0;
        let mut total = 0.0;
        for c in corrs {
            let r = c.residual(model);
            if r < threshold {
                count += 1;
                total += r;
            }
        }
        let mean_residual = if count > 0 { total / count as f64 } else { f64::INFINITY };
        Score {
            count,
            mean_residual,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.count > other.count
            || (self.count == other.count && self.mean_residual < other.mean_residual)
    }
}

fn inlier_mask(model: &Similarity, corrs: &[Correspondence], threshold: f64) -> Vec<bool> {
    corrs.iter().map(|c| c.residual(model) < threshold).collect()
}

/// RANSAC over minimal two-pair samples followed by one least-squares refit
/// on the consensus set. Deterministic for a fixed seed.
///
/// The returned mask is evaluated under the returned transform, so every
/// flagged inlier has residual below the threshold.
pub fn ransac_similarity(
    corrs: &[Correspondence],
    params: &RansacParams,
) -> Result<RansacFit, GeometryError> {
    if corrs.len() < 2 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 2 correspondences, got {}",
            corrs.len()
        )));
    }
    if !(params.threshold > 0.0) || params.iterations == 0 {
        return Err(GeometryError::DegenerateInput(
            "threshold must be positive and iterations at least 1".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = corrs.len();
    let mut best: Option<(Similarity, Score)> = None;
    for _ in 0..params.iterations {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let Ok(model) = similarity_from_pairs(&[corrs[i], corrs[j]]) else {
            continue;
        };
        let score = Score::of(&model, corrs, params.threshold);
        if best.as_ref().map_or(true, |(_, b)| score.beats(b)) {
            best = Some((model, score));
        }
    }

    let (model, score) = best.ok_or(GeometryError::NoConsensus { inliers: 0 })?;
    if score.count < 2 {
        return Err(GeometryError::NoConsensus {
            inliers: score.count,
        });
    }

    let consensus: Vec<Correspondence> = corrs
        .iter()
        .zip(inlier_mask(&model, corrs, params.threshold))
        .filter_map(|(c, inlier)| inlier.then_some(*c))
        .collect();
    let refit = similarity_from_pairs(&consensus)
        .ok()
        .filter(|t| Score::of(t, corrs, params.threshold).count >= score.count);

    let transform = refit.unwrap_or(model);
    Ok(RansacFit {
        inliers: inlier_mask(&transform, corrs, params.threshold),
        transform,
    })
}

/// Axis-aligned box `(x0, y0, x1, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Aabb {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Integer pixel rectangle `(x, y, w, h)` covering the box, clipped to an
    /// image of the given size. `None` when the intersection is empty.
    pub fn pixel_rect(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = self.x0.floor().max(0.0);
        let y0 = self.y0.floor().max(0.0);
        let x1 = self.x1.ceil().min(width as f64);
        let y1 = self.y1.ceil().min(height as f64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some((x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize))
    }

    pub fn contained_in(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= width as f64 && self.y1 <= height as f64
    }
}

/// Where a `width × height` image lands under a transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub quad: [Point; 4],
    pub aabb: Aabb,
}

pub fn map_footprint(t: &Similarity, width: f64, height: f64) -> Footprint {
    let quad = [
        t.apply([0.0, 0.0]),
        t.apply([width, 0.0]),
        t.apply([width, height]),
        t.apply([0.0, height]),
    ];
    let mut aabb = Aabb {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };
    for p in &quad {
        aabb.x0 = aabb.x0.min(p[0]);
        aabb.y0 = aabb.y0.min(p[1]);
        aabb.x1 = aabb.x1.max(p[0]);
        aabb.y1 = aabb.y1.max(p[1]);
    }
    Footprint { quad, aabb }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn pairs_through(t: &Similarity, pts: &[Point]) -> Vec<Correspondence> {
        pts.iter().map(|&p| Correspondence::new(p, t.apply(p))).collect()
    }

    #[test]
    fn identity_from_three_pairs() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let t = similarity_from_pairs(&pairs_through(&Similarity::IDENTITY, &pts)).unwrap();
        assert!(t.max_coeff_diff(&Similarity::IDENTITY) < 1e-15);
    }

    #[test]
    fn two_point_exact_scale() {
        let corrs = [
            Correspondence::new([0.0, 0.0], [0.0, 0.0]),
            Correspondence::new([1.0, 0.0], [2.0, 0.0]),
        ];
        let t = similarity_from_pairs(&corrs).unwrap();
        assert!(t.max_coeff_diff(&Similarity::scaling(2.0)) < 1e-15);
    }

    #[test]
    fn recovers_known_transform_from_fifty_points() {
        let truth = Similarity::from_parts(0.3, 40f64.to_radians(), 12.0, -7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..50)
            .map(|_| [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)])
            .collect();
        let t = similarity_from_pairs(&pairs_through(&truth, &pts)).unwrap();
        assert!(t.max_coeff_diff(&truth) < 1e-9, "{t:?} vs {truth:?}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let one = [Correspondence::new([1.0, 1.0], [2.0, 2.0])];
        assert!(matches!(similarity_from_pairs(&one), Err(GeometryError::DegenerateInput(_))));
        let same = [
            Correspondence::new([3.0, 4.0], [0.0, 0.0]),
            Correspondence::new([3.0, 4.0], [1.0, 1.0]),
            Correspondence::new([3.0, 4.0], [2.0, 0.0]),
        ];
        assert!(matches!(similarity_from_pairs(&same), Err(GeometryError::DegenerateInput(_))));
        assert!(matches!(
            ransac_similarity(&one, &RansacParams::default()),
            Err(GeometryError::DegenerateInput(_))
        ));
    }

    #[test]
    fn ransac_without_outliers_matches_least_squares() {
        let truth = Similarity::from_parts(1.7, -0.4, 3.0, 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point> = (0..30)
            .map(|_| [rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0)])
            .collect();
        let corrs = pairs_through(&truth, &pts);
        let fit = ransac_similarity(&corrs, &RansacParams::default()).unwrap();
        let ls = similarity_from_pairs(&corrs).unwrap();
        assert!(fit.transform.max_coeff_diff(&ls) < 1e-9);
        assert!(fit.inliers.iter().all(|&b| b));
    }

    #[test]
    fn ransac_rejects_uniform_outliers() {
        let truth = Similarity::from_parts(0.8, 0.3, -20.0, 15.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut corrs: Vec<Correspondence> = (0..60)
            .map(|_| {
                let p = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
                Correspondence::new(p, truth.apply(p))
            })
            .collect();
        for _ in 0..40 {
            let p = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
            let q = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
            corrs.push(Correspondence::new(p, q));
        }
        let fit = ransac_similarity(&corrs, &RansacParams { threshold: 2.0, iterations: 2000, seed: 9 }).unwrap();
        assert!(fit.transform.max_coeff_diff(&truth) < 1e-3);
        assert!(fit.inlier_count() >= 55);
    }

    #[test]
    fn compose_examples() {
        let t = Similarity::from_parts(2.5, 1.0, 4.0, -1.0);
        assert_eq!(compose(&Similarity::IDENTITY, &t), t);
        let id = compose(&Similarity::scaling(2.0), &Similarity::scaling(0.5));
        assert!(id.max_coeff_diff(&Similarity::IDENTITY) < 1e-15);
        // [[2cos30, -2sin30],[...]] · [[3cos15, ...]] by hand: 6·(cos45, sin45)
        let r = compose(
            &Similarity::from_parts(2.0, PI / 6.0, 0.0, 0.0),
            &Similarity::from_parts(3.0, PI / 12.0, 0.0, 0.0),
        );
        let expected = Similarity::new(6.0 * (PI / 4.0).cos(), 6.0 * (PI / 4.0).sin(), 0.0, 0.0);
        assert!(r.max_coeff_diff(&expected) < 1e-12);
    }

    #[test]
    fn compose_applies_first_then_second() {
        let first = Similarity::translation(5.0, 0.0);
        let second = Similarity::scaling(2.0);
        let t = compose(&second, &first);
        assert_eq!(t.apply([1.0, 1.0]), [12.0, 2.0]);
    }

    #[test]
    fn chain_examples() {
        let t = Similarity::from_parts(0.7, 0.2, 1.0, 2.0);
        assert_eq!(chain(&[t]).unwrap(), t);
        assert_eq!(chain(&[Similarity::IDENTITY; 3]).unwrap(), Similarity::IDENTITY);
        let halves = [Similarity::scaling(0.5); 3];
        assert!((extract_scale(&chain(&halves).unwrap()).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(chain(&[]), Err(GeometryError::EmptyChain));
    }

    #[test]
    fn scale_examples() {
        assert_eq!(extract_scale(&Similarity::IDENTITY).unwrap(), 1.0);
        let t = compose(&Similarity::scaling(0.25), &Similarity::rotation(PI / 6.0));
        assert!((extract_scale(&t).unwrap() - 0.25).abs() < 1e-15);
        let t = chain(&[Similarity::scaling(0.5), Similarity::scaling(0.5)]).unwrap();
        assert!((extract_scale(&t).unwrap() - 0.25).abs() < 1e-15);
        assert!(extract_scale(&Similarity::new(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(invert(&Similarity::IDENTITY).unwrap(), Similarity::IDENTITY);
        assert_eq!(invert(&Similarity::scaling(4.0)).unwrap(), Similarity::scaling(0.25));
        assert!(invert(&Similarity::new(0.0, 0.0, 3.0, 3.0)).is_err());
    }

    #[test]
    fn footprint_examples() {
        let f = map_footprint(&Similarity::IDENTITY, 100.0, 100.0);
        assert_eq!(f.aabb, Aabb { x0: 0.0, y0: 0.0, x1: 100.0, y1: 100.0 });
        let f = map_footprint(&Similarity::scaling(0.1), 100.0, 100.0);
        assert!((f.aabb.x1 - 10.0).abs() < 1e-12 && (f.aabb.y1 - 10.0).abs() < 1e-12);
        let f = map_footprint(&Similarity::rotation(PI / 4.0), 100.0, 100.0);
        assert!((f.aabb.width() - 100.0 * 2f64.sqrt()).abs() < 1e-6);
        assert!((f.aabb.height() - 100.0 * 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn transform_json_shape() {
        let t = Similarity::new(1.0, 0.5, -2.0, 3.0);
        let v: serde_json::Value = serde_json::to_value(t).unwrap();
        assert_eq!(v, serde_json::json!({"a": 1.0, "b": 0.5, "tx": -2.0, "ty": 3.0}));
        let chain_json = serde_json::to_string(&vec![t, Similarity::IDENTITY]).unwrap();
        let back: Vec<Similarity> = serde_json::from_str(&chain_json).unwrap();
        assert_eq!(back[0], t);
    }

    fn arb_similarity() -> impl Strategy<Value = Similarity> {
        (0.05f64..20.0, -PI..PI, -1e3f64..1e3, -1e3f64..1e3)
            .prop_map(|(s, r, tx, ty)| Similarity::from_parts(s, r, tx, ty))
    }

    proptest! {
        #[test]
        fn inverse_round_trips(t in arb_similarity(), x in -1e3f64..1e3, y in -1e3f64..1e3) {
            let inv = invert(&t).unwrap();
            let id = compose(&inv, &t);
            prop_assert!(id.max_coeff_diff(&Similarity::IDENTITY) < 1e-9);
            let back = inv.apply(t.apply([x, y]));
            prop_assert!((back[0] - x).abs() < 1e-6 && (back[1] - y).abs() < 1e-6);
        }

        #[test]
        fn chained_scale_is_product(ts in proptest::collection::vec(arb_similarity(), 1..6)) {
            let product: f64 = ts.iter().map(|t| t.scale()).product();
            let s = extract_scale(&chain(&ts).unwrap()).unwrap();
            prop_assert!((s - product).abs() <= 1e-9 * product.max(1.0));
        }

        #[test]
        fn least_squares_recovers_noise_free(t in arb_similarity(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point> = (0..12)
                .map(|_| [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0)])
                .collect();
            let fit = similarity_from_pairs(&pairs_through(&t, &pts)).unwrap();
            prop_assert!(fit.max_coeff_diff(&t) < 1e-9);
        }

        #[test]
        fn ransac_is_deterministic_and_inliers_respect_threshold(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corrs: Vec<Correspondence> = (0..25)
                .map(|_| Correspondence::new(
                    [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)],
                    [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)],
                ))
                .collect();
            let params = RansacParams { threshold: 3.0, iterations: 200, seed };
            let a = ransac_similarity(&corrs, &params).unwrap();
            let b = ransac_similarity(&corrs, &params).unwrap();
            prop_assert_eq!(&a, &b);
            for (c, &inl) in corrs.iter().zip(&a.inliers) {
                if inl {
                    prop_assert!(c.residual(&a.transform) < 3.0);
                }
            }
        }
    }
}
