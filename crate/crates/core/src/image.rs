//! Single-channel real-valued images and the arithmetic the iterations need.
//!
//! Pixels are stored row-major as `f64`. Values are nominally in `[0, 1]` but
//! are never clamped here: iterates routinely leave that range and the
//! extrapolation schemes depend on exact elementwise algebra. Clamping only
//! happens when an image is quantized for saving.

use crate::error::{Error, Result};

/// PSNR reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Which matrix norm to take of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Square root of the sum of squared pixels (flattened Euclidean norm).
    Frobenius,
    /// Largest singular value of the image viewed as a `height x width` matrix.
    Spectral,
}

/// Power-iteration settings for [`Image::spectral_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

impl Image {
    /// Builds an image from row-major pixels.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::param(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Image::new"));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Wraps a buffer produced by trusted internal code, checking only finiteness.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>, op: &'static str) -> Result<Self> {
        debug_assert_eq!(data.len(), width * height);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    /// Elementwise combination of two equally sized images.
    pub fn zip_map(&self, other: &Image, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Image::from_raw(self.width, self.height, data, op)
    }

    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Image> {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Image::from_raw(self.width, self.height, data, op)
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<Image> {
        self.map("scale", |a| a * c)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Image, c: f64) -> Result<Image> {
        self.zip_map(other, "add_scaled", |a, b| a + c * b)
    }

    /// Frobenius inner product of the flattened images.
    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::Frobenius => self.frobenius_norm(),
            NormKind::Spectral => self.spectral_norm(SpectralSettings::default()),
        }
    }

    /// Largest singular value of the image as a `height x width` matrix.
    ///
    /// Power iteration on `AᵀA` from the all-ones vector. If that start vector
    /// is annihilated (zero Rayleigh quotient) a fixed alternating-sign vector
    /// is used instead. Stops once the relative change of the estimate drops
    /// below `tol`, or after `max_iter` iterations.
    pub fn spectral_norm(&self, settings: SpectralSettings) -> f64 {
        if self.data.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        let cols = self.width;
        let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
        let mut av = vec![0.0; self.height];
        let mut sigma_sq = self.rayleigh(&v, &mut av);
        if sigma_sq == 0.0 {
            let s = 1.0 / (cols as f64).sqrt();
            v = (0..cols).map(|j| if j % 2 == 0 { s } else { -s }).collect();
            sigma_sq = self.rayleigh(&v, &mut av);
            if sigma_sq == 0.0 {
                // Both deterministic starts lie in the null space; fall back
                // to the unit vectors, one of which must hit a nonzero column.
                for j in 0..cols {
                    v.iter_mut().for_each(|e| *e = 0.0);
                    v[j] = 1.0;
                    sigma_sq = self.rayleigh(&v, &mut av);
                    if sigma_sq > 0.0 {
                        break;
                    }
                }
            }
        }
        for _ in 0..settings.max_iter {
            // v <- Aᵀ(A v), normalized. `av` already holds A v.
            let mut w = vec![0.0; cols];
            for (row, &a) in self.data.chunks_exact(cols).zip(av.iter()) {
                for (wj, &rj) in w.iter_mut().zip(row) {
                    *wj += rj * a;
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            v = w;
            let next = self.rayleigh(&v, &mut av);
            let rel = (next - sigma_sq).abs() / next.max(f64::MIN_POSITIVE);
            sigma_sq = next;
            if rel < settings.tol {
                break;
            }
        }
        sigma_sq.sqrt()
    }

    /// Returns `||A v||²` for unit `v`, leaving `A v` in `out`.
    fn rayleigh(&self, v: &[f64], out: &mut [f64]) -> f64 {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.width)) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out.iter().map(|x| x * x).sum()
    }
}

/// Peak signal-to-noise ratio in dB; returns [`PSNR_CAP_DB`] when the images match.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    reference.check_shape(test)?;
    if !(peak > 0.0) {
        return Err(Error::param(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: &[f64]) -> Image {
        Image::new(w, h, v.to_vec()).unwrap()
    }

    /// Largest singular value via cyclic Jacobi eigen-decomposition of AᵀA.
    fn jacobi_sigma_max(a: &Image) -> f64 {
        let n = a.width();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = (0..a.height()).map(|r| a.get(i, r) * a.get(j, r)).sum();
            }
        }
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[i][i]).fold(0.0, f64::max).sqrt()
    }

    #[test]
    fn arithmetic_identities() {
        let x = img(2, 1, &[0.2, 0.4]);
        assert_eq!(x.sub(&x).unwrap(), Image::zeros(2, 1));
        assert_eq!(Image::zeros(2, 1).add(&x).unwrap(), x);
        assert_eq!(x.scale(0.5).unwrap().pixels(), &[0.1, 0.2]);
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let a = Image::zeros(2, 2);
        let b = Image::zeros(4, 1);
        assert!(matches!(a.add(&b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn non_finite_results_are_errors() {
        let a = img(1, 1, &[1e308]);
        assert!(matches!(a.scale(10.0), Err(Error::NonFinite(_))));
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Image::zeros(4, 4).frobenius_norm(), 0.0);
        assert_eq!(img(1, 1, &[3.0]).frobenius_norm(), 3.0);
        assert_eq!(img(2, 2, &[3.0, 4.0, 0.0, 0.0]).frobenius_norm(), 5.0);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = img(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!((a.spectral_norm(SpectralSettings::default()) - 2.0).abs() < 1e-6);
        assert_eq!(Image::zeros(3, 3).spectral_norm(SpectralSettings::default()), 0.0);
    }

    #[test]
    fn spectral_norm_of_rank_one_equals_frobenius() {
        let u = [0.6, 0.0, -0.8];
        let v = [0.5, 0.5, 0.5, -0.5];
        let a = Image::from_fn(4, 3, |x, y| u[y] * v[x]).unwrap();
        let fro = a.frobenius_norm();
        assert!((fro - 1.0).abs() < 1e-12);
        assert!((a.spectral_norm(SpectralSettings::default()) - fro).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_falls_back_when_ones_vector_is_annihilated() {
        // Every row sums to zero, so A·1 = 0.
        let a = img(2, 2, &[1.0, -1.0, 2.0, -2.0]);
        let expected = a.frobenius_norm(); // rank one
        assert!((a.spectral_norm(SpectralSettings::default()) - expected).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        // Small deterministic LCG so the oracle and the matrix are reproducible.
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..5 {
            let a = Image::from_fn(8, 8, |_, _| next()).unwrap();
            let oracle = jacobi_sigma_max(&a);
            let got = a.spectral_norm(SpectralSettings {
                tol: 1e-15,
                max_iter: 100_000,
            });
            assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        }
    }

    #[test]
    fn psnr_examples() {
        let a = img(1, 2, &[0.0, 0.0]);
        let b = img(1, 2, &[0.1, 0.1]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        let c = img(1, 2, &[1.0, 1.0]);
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn image_strategy() -> impl Strategy<Value = Image> {
            (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
                prop::collection::vec(-2.0f64..2.0, w * h).prop_map(move |v| Image::new(w, h, v).unwrap())
            })
        }

        proptest! {
            #[test]
            fn frobenius_is_absolutely_homogeneous(a in image_strategy(), c in -5.0f64..5.0) {
                let lhs = a.scale(c).unwrap().frobenius_norm();
                let rhs = c.abs() * a.frobenius_norm();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
            }

            #[test]
            fn spectral_is_bounded_by_frobenius(a in image_strategy()) {
                let s = a.spectral_norm(SpectralSettings { tol: 1e-12, max_iter: 5000 });
                let f = a.frobenius_norm();
                prop_assert!(s <= f * (1.0 + 1e-9));
                let k = a.width().min(a.height()) as f64;
                prop_assert!(s >= f / k.sqrt() * (1.0 - 1e-6) - 1e-12);
            }

            #[test]
            fn psnr_is_symmetric(a in image_strategy()) {
                let b = a.map("test", |v| v * 0.5 + 0.1).unwrap();
                prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            }

            #[test]
            fn sub_then_add_recovers(a in image_strategy()) {
                let b = a.map("test", |v| v.sin()).unwrap();
                let back = a.sub(&b).unwrap().add(&b).unwrap();
                prop_assert!(back.max_abs_diff(&a).unwrap() <= 1e-12);
            }
        }
    }
}
