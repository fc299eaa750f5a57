//! Shared inputs for the criterion benchmarks.

use std::sync::Arc;

use revfilt_core::{BlackBoxFilter, FilterSpec, Image};

/// Deterministic textured test image with edges and smooth regions.
pub fn test_image(size: usize) -> Image {
    let s = size as f64;
    Image::from_fn(size, size, |x, y| {
        let (u, v) = (x as f64 / s, y as f64 / s);
        let disc = if (u - 0.5).powi(2) + (v - 0.45).powi(2) < 0.08 {
            0.35
        } else {
            0.0
        };
        let stripes = 0.15 * (20.0 * u + 7.0 * v).sin();
        (0.3 + 0.4 * u * v + disc + stripes).clamp(0.0, 1.0)
    })
    .expect("finite pixels")
}

pub fn filter(spec: &str) -> Arc<dyn BlackBoxFilter> {
    spec.parse::<FilterSpec>()
        .and_then(|s| s.build())
        .unwrap_or_else(|e| panic!("benchmark filter `{spec}`: {e}"))
}

/// Filters exercised by the benchmarks, at their default parameters.
pub const FILTERS: [&str; 6] = ["gaussian", "motion", "disk", "wiener", "guided_self", "bilateral"];
