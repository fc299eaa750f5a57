//! The reverse-filtering methods, each in fixed-point and gradient form.
//!
//! With `e(x) = b - g(x)`, `t(x) = g(x + e) - g(x)` and
//! `p(x) = g(x + e) - g(x - e)`:
//!
//! | method | `f(x)`                              | `-∇c(x)` | g-calls |
//! |--------|-------------------------------------|----------|---------|
//! | T      | `x + λ e`                           | `e`      | 1       |
//! | R      | `α x + λ e`                         | `e`      | 1       |
//! | TDA    | `x + λ t`                           | `t`      | 2       |
//! | P      | `x + λ ‖e‖₂ / (2 ‖p‖₂) · p`         | `p / 2`  | 3       |
//! | p      | `x + λ p / 2`                       | `p / 2`  | 3       |
//!
//! `‖·‖₂` is the spectral norm. Everything is computed in increment form
//! `F(x) = f(x) - x` so that a unit relaxation or unit step size reproduces
//! the plain fixed-point iterate bit for bit.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filters::{BlackBoxFilter, CountingFilter};
use crate::image::{Image, SpectralSettings};
use crate::trace::Flag;

/// `‖p‖` below this makes the P-method step degenerate.
pub const DEGENERATE_P_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodTag {
    T,
    R,
    Tda,
    /// Norm-ratio scaled variant (upper-case P).
    P,
    /// Norm-free variant (lower-case p).
    SmallP,
}

impl MethodTag {
    pub const ALL: [MethodTag; 5] = [
        MethodTag::T,
        MethodTag::R,
        MethodTag::Tda,
        MethodTag::P,
        MethodTag::SmallP,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MethodTag::T => "T",
            MethodTag::R => "R",
            MethodTag::Tda => "TDA",
            MethodTag::P => "P",
            MethodTag::SmallP => "p",
        }
    }

    /// Filter evaluations per fixed-point or surrogate evaluation.
    pub fn filter_calls(self) -> u64 {
        match self {
            MethodTag::T | MethodTag::R => 1,
            MethodTag::Tda => 2,
            MethodTag::P | MethodTag::SmallP => 3,
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Method names are case-insensitive except `P` versus `p`.
impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "P" => return Ok(MethodTag::P),
            "p" => return Ok(MethodTag::SmallP),
            _ => {}
        }
        match s.trim().to_ascii_lowercase().as_str() {
            "t" => Ok(MethodTag::T),
            "r" => Ok(MethodTag::R),
            "tda" => Ok(MethodTag::Tda),
            other => Err(Error::param(format!(
                "unknown method `{other}` (expected t, r, tda, P or p)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodKind {
    pub tag: MethodTag,
    pub lambda: f64,
    /// Coefficient on `x` in the R-method.
    pub alpha: f64,
}

impl MethodKind {
    pub const DEFAULT_R_ALPHA: f64 = 0.99;

    pub fn new(tag: MethodTag) -> Self {
        Self {
            tag,
            lambda: 1.0,
            alpha: if tag == MethodTag::R {
                Self::DEFAULT_R_ALPHA
            } else {
                1.0
            },
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::param("lambda must be finite"));
        }
        if self.tag == MethodTag::R && !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param(format!(
                "R-method alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        self.tag.label()
    }
}

impl From<MethodTag> for MethodKind {
    fn from(tag: MethodTag) -> Self {
        MethodKind::new(tag)
    }
}

/// A filter, an observation `b`, and the method used to invert the filter.
pub struct BoundProblem {
    filter: CountingFilter,
    b: Image,
    method: MethodKind,
    spectral: SpectralSettings,
    flags: Vec<Flag>,
}

impl BoundProblem {
    pub fn new(filter: Arc<dyn BlackBoxFilter>, b: Image, method: impl Into<MethodKind>) -> Result<Self> {
        let method = method.into();
        method.validate()?;
        Ok(Self {
            filter: CountingFilter::new(filter),
            b,
            method,
            spectral: SpectralSettings::default(),
            flags: Vec::new(),
        })
    }

    /// Filters `truth` to obtain the observation, then binds the problem.
    pub fn synthesize(filter: Arc<dyn BlackBoxFilter>, truth: &Image, method: impl Into<MethodKind>) -> Result<Self> {
        let b = filter.apply(truth)?;
        truth.check_shape(&b)?;
        Self::new(filter, b, method)
    }

    pub fn with_spectral_settings(mut self, settings: SpectralSettings) -> Self {
        self.spectral = settings;
        self
    }

    pub fn observation(&self) -> &Image {
        &self.b
    }

    pub fn method(&self) -> MethodKind {
        self.method
    }

    pub fn filter_label(&self) -> String {
        self.filter.label()
    }

    pub fn call_count(&self) -> u64 {
        self.filter.call_count()
    }

    /// Flags raised since the last call (degenerate P-steps).
    pub fn take_flags(&mut self) -> Vec<Flag> {
        std::mem::take(&mut self.flags)
    }

    fn g(&mut self, x: &Image) -> Result<Image> {
        self.b.check_shape(x)?;
        self.filter.apply(x)
    }

    /// Returns `(g(x), e(x))` using one filter call.
    fn filtered_and_residual(&mut self, x: &Image) -> Result<(Image, Image)> {
        let gx = self.g(x)?;
        let e = self.b.sub(&gx)?;
        Ok((gx, e))
    }

    /// `e(x) = b - g(x)`; one filter call.
    pub fn residual_e(&mut self, x: &Image) -> Result<Image> {
        Ok(self.filtered_and_residual(x)?.1)
    }

    /// `t(x) = g(x + e) - g(x)`; two filter calls in total.
    pub fn step_t(&mut self, x: &Image) -> Result<Image> {
        let (gx, e) = self.filtered_and_residual(x)?;
        self.t_from(x, &gx, &e)
    }

    /// `p(x) = g(x + e) - g(x - e)`; three filter calls in total.
    pub fn step_p(&mut self, x: &Image) -> Result<Image> {
        let (_, e) = self.filtered_and_residual(x)?;
        self.p_from(x, &e)
    }

    fn t_from(&mut self, x: &Image, gx: &Image, e: &Image) -> Result<Image> {
        let forward = self.g(&x.add(e)?)?;
        forward.sub(gx)
    }

    fn p_from(&mut self, x: &Image, e: &Image) -> Result<Image> {
        let forward = self.g(&x.add(e)?)?;
        let backward = self.g(&x.sub(e)?)?;
        forward.sub(&backward)
    }

    /// `-∇c(x)` for the bound method.
    pub fn grad_surrogate(&mut self, x: &Image) -> Result<Image> {
        let (gx, e) = self.filtered_and_residual(x)?;
        match self.method.tag {
            MethodTag::T | MethodTag::R => Ok(e),
            MethodTag::Tda => self.t_from(x, &gx, &e),
            MethodTag::P | MethodTag::SmallP => self.p_from(x, &e)?.scale(0.5),
        }
    }

    /// `F(x) = f(x) - x` for the bound method.
    pub fn fixed_point_increment(&mut self, x: &Image) -> Result<Image> {
        let MethodKind { tag, lambda, alpha } = self.method;
        let (gx, e) = self.filtered_and_residual(x)?;
        match tag {
            MethodTag::T => e.scale(lambda),
            // (α - 1) x + λ e
            MethodTag::R => x.zip_map(&e, "R-method", |xi, ei| (alpha - 1.0) * xi + ei * lambda),
            MethodTag::Tda => self.t_from(x, &gx, &e)?.scale(lambda),
            MethodTag::SmallP => self.p_from(x, &e)?.scale(0.5)?.scale(lambda),
            MethodTag::P => {
                let p = self.p_from(x, &e)?;
                let e_norm = e.spectral_norm(self.spectral);
                if e_norm == 0.0 {
                    return Ok(Image::zeros(x.width(), x.height()));
                }
                let p_norm = p.spectral_norm(self.spectral);
                if p_norm < DEGENERATE_P_NORM {
                    self.flags.push(Flag::DegenerateStep);
                    return Ok(Image::zeros(x.width(), x.height()));
                }
                p.scale(lambda * e_norm / (2.0 * p_norm))
            }
        }
    }

    /// `f(x)` for the bound method.
    pub fn fixed_point_map(&mut self, x: &Image) -> Result<Image> {
        let inc = self.fixed_point_increment(x)?;
        x.add(&inc)
    }

    /// Discrepancy between `-∇c(x)` and `f(x) - x`.
    ///
    /// Maximum absolute pixel difference for T, R, TDA and p; for P, whose
    /// two forms differ by a positive scalar, `1 - cos` of the angle between
    /// them.
    pub fn consistency_check(&mut self, x: &Image) -> Result<f64> {
        let surrogate = self.grad_surrogate(x)?;
        let increment = self.fixed_point_increment(x)?;
        if self.method.tag == MethodTag::P {
            let denom = surrogate.frobenius_norm() * increment.frobenius_norm();
            if denom == 0.0 {
                return Ok(0.0);
            }
            Ok(1.0 - surrogate.dot(&increment)? / denom)
        } else {
            surrogate.max_abs_diff(&increment)
        }
    }

    /// `‖e(x)‖_F` for trace bookkeeping. Not counted as a driver filter call.
    pub fn observe_residual(&mut self, x: &Image) -> Result<f64> {
        self.b.check_shape(x)?;
        let gx = self.filter.peek(x)?;
        Ok(self.b.sub(&gx)?.frobenius_norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FnFilter;

    fn scalar(v: f64) -> Image {
        Image::new(1, 1, vec![v]).unwrap()
    }

    fn filter(f: impl Fn(&Image) -> Result<Image> + Send + Sync + 'static) -> Arc<dyn BlackBoxFilter> {
        Arc::new(FnFilter::new("test", f))
    }

    fn square() -> Arc<dyn BlackBoxFilter> {
        filter(|x| x.map("sq", |v| v * v))
    }

    #[test]
    fn method_parsing_distinguishes_case_of_p() {
        assert_eq!("P".parse::<MethodTag>().unwrap(), MethodTag::P);
        assert_eq!("p".parse::<MethodTag>().unwrap(), MethodTag::SmallP);
        assert_eq!("TDA".parse::<MethodTag>().unwrap(), MethodTag::Tda);
        assert_eq!("t".parse::<MethodTag>().unwrap(), MethodTag::T);
        assert!("f".parse::<MethodTag>().is_err());
    }

    #[test]
    fn r_alpha_must_be_in_unit_interval() {
        let kind = MethodKind::new(MethodTag::R).with_alpha(1.5);
        assert!(BoundProblem::new(square(), scalar(1.0), kind).is_err());
        assert_eq!(MethodKind::new(MethodTag::R).alpha, 0.99);
    }

    #[test]
    fn residual_examples() {
        let mut prob = BoundProblem::new(filter(|x| x.scale(0.5)), scalar(1.0), MethodTag::T).unwrap();
        assert_eq!(prob.residual_e(&scalar(1.0)).unwrap().pixels(), &[0.5]);
        assert_eq!(prob.call_count(), 1);

        let id = filter(|x| Ok(x.clone()));
        let x = Image::constant(3, 2, 0.3);
        let mut prob = BoundProblem::new(id, x.clone(), MethodTag::T).unwrap();
        assert_eq!(prob.residual_e(&x).unwrap(), Image::zeros(3, 2));
    }

    #[test]
    fn scalar_square_filter_p_and_t() {
        // g(x) = x², x = 1, b = 1.25 → e = 0.25.
        let mut prob = BoundProblem::new(square(), scalar(1.25), MethodTag::SmallP).unwrap();
        let p = prob.step_p(&scalar(1.0)).unwrap();
        assert!((p.pixels()[0] - 1.0).abs() < 1e-15);
        assert_eq!(prob.call_count(), 3);
        let t = prob.step_t(&scalar(1.0)).unwrap();
        assert!((t.pixels()[0] - 0.5625).abs() < 1e-15);
        assert_eq!(prob.call_count(), 5);
    }

    #[test]
    fn t_with_identity_filter_solves_in_one_step() {
        let b = Image::from_fn(4, 3, |x, y| (x + 2 * y) as f64 / 10.0).unwrap();
        let id = filter(|x| Ok(x.clone()));
        let mut prob = BoundProblem::new(id, b.clone(), MethodTag::T).unwrap();
        let x = Image::constant(4, 3, 0.7);
        assert!(prob.fixed_point_map(&x).unwrap().max_abs_diff(&b).unwrap() < 1e-15);
    }

    #[test]
    fn call_accounting_per_method() {
        let x = Image::from_fn(5, 4, |x, y| (x * y) as f64 / 20.0).unwrap();
        for tag in MethodTag::ALL {
            let mut prob = BoundProblem::new(square(), Image::constant(5, 4, 0.2), tag).unwrap();
            prob.fixed_point_map(&x).unwrap();
            assert_eq!(prob.call_count(), tag.filter_calls(), "{tag}");
            prob.grad_surrogate(&x).unwrap();
            assert_eq!(prob.call_count(), 2 * tag.filter_calls(), "{tag}");
        }
    }

    #[test]
    fn fixed_points_are_preserved_bitwise() {
        let g = square();
        let x = Image::from_fn(6, 5, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0).unwrap();
        let b = g.apply(&x).unwrap();
        for tag in MethodTag::ALL {
            let kind = MethodKind::new(tag).with_alpha(1.0);
            let mut prob = BoundProblem::new(g.clone(), b.clone(), kind).unwrap();
            assert_eq!(prob.fixed_point_map(&x).unwrap(), x, "{tag}");
            assert!(prob.take_flags().is_empty());
        }
    }

    #[test]
    fn degenerate_p_step_returns_x_and_flags() {
        // A filter that ignores its input has p(x) = 0 while e(x) need not be.
        let constant = filter(|x| Ok(Image::constant(x.width(), x.height(), 0.5)));
        let mut prob = BoundProblem::new(constant, Image::constant(2, 2, 0.9), MethodTag::P).unwrap();
        let x = Image::constant(2, 2, 0.1);
        assert_eq!(prob.fixed_point_map(&x).unwrap(), x);
        assert_eq!(prob.take_flags(), vec![Flag::DegenerateStep]);
    }

    #[test]
    fn consistency_identity_holds() {
        let g = filter(|x| x.map("nl", |v| 0.6 * v + 0.1 * v.sin()));
        let b = Image::from_fn(7, 6, |i, j| ((i + 2 * j) % 5) as f64 / 5.0).unwrap();
        let x = Image::from_fn(7, 6, |i, j| ((3 * i + j) % 4) as f64 / 4.0).unwrap();
        for tag in MethodTag::ALL {
            let kind = MethodKind::new(tag).with_alpha(1.0);
            let mut prob = BoundProblem::new(g.clone(), b.clone(), kind).unwrap();
            let err = prob.consistency_check(&x).unwrap();
            let tol = if tag == MethodTag::P { 1e-10 } else { 1e-12 };
            assert!(err <= tol, "{tag}: {err}");
        }
    }

    #[test]
    fn at_fixed_point_every_surrogate_vanishes() {
        let g = square();
        let x = Image::constant(3, 3, 0.4);
        let b = g.apply(&x).unwrap();
        for tag in MethodTag::ALL {
            let mut prob = BoundProblem::new(g.clone(), b.clone(), tag).unwrap();
            assert_eq!(prob.grad_surrogate(&x).unwrap(), Image::zeros(3, 3));
        }
    }
}
