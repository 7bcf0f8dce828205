//! Enhancer contract and reference implementations.
//!
//! An enhancer turns a low-resolution window of the full image into an
//! output patch of exactly `round(dims × zoom)` pixels. One-shot enhancers
//! answer a request directly; iterative enhancers also refine a current
//! estimate one step at a time, which is what the mosaic's per-step
//! overlap averaging drives.

mod exemplar;
mod external;
pub mod protocol;

pub use exemplar::{BankEntry, ExemplarBank, ExemplarEnhancer, ExemplarParams};
pub use external::{ExternalConfig, ExternalEnhancer};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::degrade::{resample_to, scaled_len};
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("input {width}x{height} exceeds the enhancer limit of {max} px per side")]
    InputTooLarge { width: usize, height: usize, max: usize },
    #[error("exemplar bank is empty")]
    EmptyBank,
    #[error("dataset manifest has no pairs")]
    EmptyManifest,
    #[error("expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("enhancer {0} is not iterative")]
    NotIterative(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("worker exited: {0}")]
    WorkerExit(String),
    #[error("worker did not answer within {0:?}")]
    Timeout(Duration),
    #[error("worker reported: {0}")]
    Worker(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OneShot,
    Iterative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancerDescriptor {
    pub name: String,
    pub mode: Mode,
    /// Largest accepted input side, pixels.
    pub max_input: usize,
    pub deterministic: bool,
}

#[derive(Clone, Debug)]
pub struct EnhanceRequest {
    pub lr: Image,
    pub zoom: f64,
    pub step_index: u32,
    pub step_count: u32,
    /// Window position on the output canvas.
    pub window_origin: (i64, i64),
}

impl EnhanceRequest {
    pub fn new(lr: Image, zoom: f64) -> Self {
        EnhanceRequest {
            lr,
            zoom,
            step_index: 0,
            step_count: 1,
            window_origin: (0, 0),
        }
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (scaled_len(self.lr.width(), self.zoom), scaled_len(self.lr.height(), self.zoom))
    }

    pub fn validate(&self, descriptor: &EnhancerDescriptor) -> Result<(), EnhanceError> {
        if !(self.zoom > 1.0) || !self.zoom.is_finite() {
            return Err(EnhanceError::InvalidRequest(format!("zoom {}", self.zoom)));
        }
        if self.step_count == 0 || self.step_index >= self.step_count {
            return Err(EnhanceError::InvalidRequest(format!(
                "step {} of {}",
                self.step_index, self.step_count
            )));
        }
        if self.lr.channels() != 3 {
            return Err(EnhanceError::InvalidRequest(format!("{} channels", self.lr.channels())));
        }
        let (w, h) = self.lr.dims();
        if w == 0 || h == 0 {
            return Err(EnhanceError::InvalidRequest("empty input".into()));
        }
        if w > descriptor.max_input || h > descriptor.max_input {
            return Err(EnhanceError::InputTooLarge {
                width: w,
                height: h,
                max: descriptor.max_input,
            });
        }
        Ok(())
    }
}

pub trait Enhancer: Send + Sync {
    fn descriptor(&self) -> EnhancerDescriptor;

    /// One-shot enhancement; output is `request.output_dims()`.
    fn enhance(&self, request: &EnhanceRequest) -> Result<Image, EnhanceError>;

    /// One refinement step from `current` (same dims as the output).
    fn enhance_step(&self, _request: &EnhanceRequest, _current: &Image) -> Result<Image, EnhanceError> {
        Err(EnhanceError::NotIterative(self.descriptor().name))
    }
}

impl<E: Enhancer + ?Sized> Enhancer for Box<E> {
    fn descriptor(&self) -> EnhancerDescriptor {
        (**self).descriptor()
    }

    fn enhance(&self, request: &EnhanceRequest) -> Result<Image, EnhanceError> {
        (**self).enhance(request)
    }

    fn enhance_step(&self, request: &EnhanceRequest, current: &Image) -> Result<Image, EnhanceError> {
        (**self).enhance_step(request, current)
    }
}

/// Largest input side accepted by the built-in enhancers.
pub const DEFAULT_MAX_INPUT: usize = 8192;

/// Plain bicubic upsampling.
#[derive(Clone, Debug, Default)]
pub struct BicubicEnhancer;

impl Enhancer for BicubicEnhancer {
    fn descriptor(&self) -> EnhancerDescriptor {
        EnhancerDescriptor {
            name: "bicubic".into(),
            mode: Mode::OneShot,
            max_input: DEFAULT_MAX_INPUT,
            deterministic: true,
        }
    }

    fn enhance(&self, request: &EnhanceRequest) -> Result<Image, EnhanceError> {
        request.validate(&self.descriptor())?;
        let (w, h) = request.output_dims();
        Ok(resample_to(&request.lr, w, h))
    }
}

/// Turns a one-shot enhancer into an iterative one: each step moves the
/// estimate a `1 / (steps left)` fraction of the way to the one-shot
/// result, so an undisturbed window reaches it exactly after the last step.
pub struct IterativeProxy<E> {
    inner: E,
}

impl<E: Enhancer> IterativeProxy<E> {
    pub fn new(inner: E) -> Self {
        IterativeProxy { inner }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Enhancer> Enhancer for IterativeProxy<E> {
    fn descriptor(&self) -> EnhancerDescriptor {
        let d = self.inner.descriptor();
        EnhancerDescriptor {
            name: format!("iterative-{}", d.name),
            mode: Mode::Iterative,
            ..d
        }
    }

    fn enhance(&self, request: &EnhanceRequest) -> Result<Image, EnhanceError> {
        self.inner.enhance(request)
    }

    fn enhance_step(&self, request: &EnhanceRequest, current: &Image) -> Result<Image, EnhanceError> {
        request.validate(&self.descriptor())?;
        let dims = request.output_dims();
        if current.dims() != dims || current.channels() != 3 {
            return Err(EnhanceError::DimensionMismatch {
                expected: dims,
                got: current.dims(),
            });
        }
        let target = self.inner.enhance(request)?;
        let left = (request.step_count - request.step_index) as f32;
        let mut out = current.clone();
        for (o, &t) in out.data_mut().iter_mut().zip(target.data()) {
            *o += (t - *o) / left;
        }
        Ok(out)
    }
}

/// Runs `request` through every step on its own, as an isolated window.
pub fn run_isolated(enhancer: &dyn Enhancer, request: &EnhanceRequest, initial: Image) -> Result<Image, EnhanceError> {
    let mut x = initial;
    for k in 0..request.step_count {
        let r = EnhanceRequest {
            step_index: k,
            ..request.clone()
        };
        x = enhancer.enhance_step(&r, &x)?;
    }
    Ok(x)
}
