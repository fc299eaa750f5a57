//! Black-box filters: the built-in set plus an adapter for external executables.
//!
//! Reversal algorithms only ever see a filter through [`BlackBoxFilter::apply`].
//! [`CountingFilter`] adds the per-call accounting the iteration drivers are
//! measured by.

mod builtin;
mod external;
mod spec;

use std::sync::Arc;

pub use builtin::{
    adaptive_wiener, bilateral_filter, disk_blur, disk_kernel, gaussian_filter, guided_filter_self, motion_blur,
    motion_kernel, Builtin, Kernel,
};
pub use external::{ExternalFilter, DEFAULT_TIMEOUT_SECS};
pub(crate) use spec::parse_key_values;
pub use spec::{FilterKind, FilterSpec, ParamValue};

use crate::error::{Error, Result};
use crate::image::Image;

/// A deterministic image-to-image map whose internals are unknown to the caller.
pub trait BlackBoxFilter: Send + Sync {
    fn apply(&self, img: &Image) -> Result<Image>;

    /// Short identifier used in traces and file names.
    fn label(&self) -> String;
}

impl<T: BlackBoxFilter + ?Sized> BlackBoxFilter for Arc<T> {
    fn apply(&self, img: &Image) -> Result<Image> {
        (**self).apply(img)
    }

    fn label(&self) -> String {
        (**self).label()
    }
}

/// Wraps a closure as a filter. Mostly useful for test doubles.
pub struct FnFilter<F> {
    label: String,
    f: F,
}

impl<F> FnFilter<F>
where
    F: Fn(&Image) -> Result<Image> + Send + Sync,
{
    pub fn new(label: impl Into<String>, f: F) -> Self {
        Self { label: label.into(), f }
    }
}

impl<F> BlackBoxFilter for FnFilter<F>
where
    F: Fn(&Image) -> Result<Image> + Send + Sync,
{
    fn apply(&self, img: &Image) -> Result<Image> {
        (self.f)(img)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// A filter with an invocation counter.
///
/// `apply` increments the counter by exactly one per call. The most recent
/// input/output pair is memoized; since filters are deterministic a repeated
/// request for the same input returns the identical output without running
/// the filter again. The counter still records the request. `peek` evaluates
/// without counting and is reserved for instrumentation.
pub struct CountingFilter {
    inner: Arc<dyn BlackBoxFilter>,
    calls: u64,
    memo: Option<(Image, Image)>,
}

impl CountingFilter {
    pub fn new(inner: Arc<dyn BlackBoxFilter>) -> Self {
        Self {
            inner,
            calls: 0,
            memo: None,
        }
    }

    pub fn call_count(&self) -> u64 {
        self.calls
    }

    pub fn label(&self) -> String {
        self.inner.label()
    }

    pub fn inner(&self) -> &Arc<dyn BlackBoxFilter> {
        &self.inner
    }

    pub fn apply(&mut self, img: &Image) -> Result<Image> {
        self.calls += 1;
        self.evaluate(img)
    }

    pub fn peek(&mut self, img: &Image) -> Result<Image> {
        self.evaluate(img)
    }

    fn evaluate(&mut self, img: &Image) -> Result<Image> {
        if let Some((input, output)) = &self.memo {
            if input == img {
                return Ok(output.clone());
            }
        }
        let out = self.inner.apply(img)?;
        if !out.same_shape(img) {
            return Err(Error::DimensionMismatch {
                left_w: img.width(),
                left_h: img.height(),
                right_w: out.width(),
                right_h: out.height(),
            });
        }
        self.memo = Some((img.clone(), out.clone()));
        Ok(out)
    }
}

/// Result of checking a filter for determinism and shape preservation.
#[derive(Debug, Clone, PartialEq)]
pub struct DoctorReport {
    pub label: String,
    pub deterministic: bool,
    pub preserves_dimensions: bool,
    pub max_abs_difference: f64,
}

impl DoctorReport {
    pub fn healthy(&self) -> bool {
        self.deterministic && self.preserves_dimensions
    }
}

/// Applies `filter` twice to `probe` and compares the outputs bitwise.
pub fn doctor(filter: &dyn BlackBoxFilter, probe: &Image) -> Result<DoctorReport> {
    let first = filter.apply(probe)?;
    let second = filter.apply(probe)?;
    let preserves_dimensions = first.same_shape(probe) && second.same_shape(probe);
    let (deterministic, max_abs_difference) = if first.same_shape(&second) {
        (first == second, first.max_abs_diff(&second)?)
    } else {
        (false, f64::INFINITY)
    };
    Ok(DoctorReport {
        label: filter.label(),
        deterministic,
        preserves_dimensions,
        max_abs_difference,
    })
}
