//! Fixed-point drivers: Picard, segmenting Mann, the clipped Chebyshev
//! schedule, Anderson acceleration, Irons' vector Aitken step and the vector
//! ε-algorithm.
//!
//! Every step function is generic over [`FixedPointMap`], which hands back
//! both `f(x)` and the increment `F(x) = f(x) - x`.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::methods::{BoundProblem, MethodTag};
use crate::trace::{run_loop, Flag, IterationTrace, LoopOptions, RunOutcome, StepOutcome};

pub const DEFAULT_EXTRAPOLATION_GUARD: f64 = 1e-12;
pub const DEFAULT_ANDERSON_RIDGE: f64 = 1e-10;

pub trait FixedPointMap {
    /// Returns `(f(x), f(x) - x)`.
    fn evaluate(&mut self, x: &Image) -> Result<(Image, Image)>;
}

impl FixedPointMap for BoundProblem {
    fn evaluate(&mut self, x: &Image) -> Result<(Image, Image)> {
        let inc = self.fixed_point_increment(x)?;
        Ok((x.add(&inc)?, inc))
    }
}

impl<M: FixedPointMap + ?Sized> FixedPointMap for &mut M {
    fn evaluate(&mut self, x: &Image) -> Result<(Image, Image)> {
        (**self).evaluate(x)
    }
}

/// Adapts a closure returning `f(x)`.
pub struct MapFn<F>(pub F);

impl<F: FnMut(&Image) -> Result<Image>> FixedPointMap for MapFn<F> {
    fn evaluate(&mut self, x: &Image) -> Result<(Image, Image)> {
        let fx = (self.0)(x)?;
        let inc = fx.sub(x)?;
        Ok((fx, inc))
    }
}

pub fn picard_step(f: &mut impl FixedPointMap, x: &Image) -> Result<Image> {
    Ok(f.evaluate(x)?.0)
}

/// `x + ω (f(x) - x)`. `ω = 1` returns `f(x)` itself.
pub fn mann_step(f: &mut impl FixedPointMap, x: &Image, omega: f64) -> Result<Image> {
    if !omega.is_finite() {
        return Err(Error::param("relaxation factor must be finite"));
    }
    let (fx, inc) = f.evaluate(x)?;
    if omega == 1.0 {
        return Ok(fx);
    }
    x.add_scaled(&inc, omega)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyshevSchedule {
    pub period: usize,
    pub clip_alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for ChebyshevSchedule {
    fn default() -> Self {
        Self {
            period: 32,
            clip_alpha: 3.0,
            lambda1: 0.0,
            lambda2: 1.0,
        }
    }
}

impl ChebyshevSchedule {
    /// Period 32, clipped at 1 for the P-method and at 3 otherwise.
    pub fn for_method(tag: MethodTag) -> Self {
        Self {
            clip_alpha: if tag == MethodTag::P { 1.0 } else { 3.0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::param("Chebyshev period must be at least 1"));
        }
        if !(self.clip_alpha > 0.0) {
            return Err(Error::param("Chebyshev clip must be positive"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 > 0.0 && self.lambda1 <= self.lambda2) {
            return Err(Error::param(
                "Chebyshev bounds need 0 <= lambda1 <= lambda2, lambda2 > 0",
            ));
        }
        Ok(())
    }
}

/// The Chebyshev value before clipping, using `k mod T`.
pub fn chebyshev_omega_unclipped(k: usize, sched: &ChebyshevSchedule) -> f64 {
    let t = sched.period.max(1);
    let kk = (k % t) as f64;
    let c = ((2.0 * kk + 1.0) / (2.0 * t as f64) * PI).cos();
    let (l1, l2) = (sched.lambda1, sched.lambda2);
    1.0 / ((l2 + l1) / 2.0 + (l2 - l1) / 2.0 * c)
}

pub fn chebyshev_omega(k: usize, sched: &ChebyshevSchedule) -> f64 {
    chebyshev_omega_unclipped(k, sched).min(sched.clip_alpha)
}

/// Window of past `f(x)` values and increments for Anderson mixing.
#[derive(Debug, Clone)]
pub struct AndersonState {
    window: usize,
    ridge: f64,
    hist_f: Vec<Image>,
    hist_inc: Vec<Image>,
}

impl AndersonState {
    pub fn new(window: usize) -> Self {
        Self::with_ridge(window, DEFAULT_ANDERSON_RIDGE)
    }

    pub fn with_ridge(window: usize, ridge: f64) -> Self {
        Self {
            window,
            ridge,
            hist_f: Vec::with_capacity(window + 1),
            hist_inc: Vec::with_capacity(window + 1),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn history_len(&self) -> usize {
        self.hist_f.len()
    }

    fn push(&mut self, fx: Image, inc: Image) -> Result<()> {
        if let Some(last) = self.hist_f.last() {
            last.check_shape(&fx)?;
        }
        self.hist_f.push(fx);
        self.hist_inc.push(inc);
        if self.hist_f.len() > self.window + 1 {
            self.hist_f.remove(0);
            self.hist_inc.remove(0);
        }
        Ok(())
    }

    /// Solves `min_θ ||F_k + ΔF θ||²` by ridge-regularised normal equations.
    fn coefficients(&self) -> Option<Vec<f64>> {
        let n = self.hist_inc.len();
        let m = n - 1;
        let d_inc: Vec<Image> = (0..m)
            .map(|j| self.hist_inc[j + 1].sub(&self.hist_inc[j]))
            .collect::<Result<_>>()
            .ok()?;
        let current = &self.hist_inc[m];
        let mut gram = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            for j in 0..=i {
                let v = d_inc[i].dot(&d_inc[j]).ok()?;
                gram[i * m + j] = v;
                gram[j * m + i] = v;
            }
            rhs[i] = -d_inc[i].dot(current).ok()?;
        }
        let trace: f64 = (0..m).map(|i| gram[i * m + i]).sum();
        let shift = self.ridge * (trace / m as f64).max(f64::MIN_POSITIVE);
        for i in 0..m {
            gram[i * m + i] += shift;
        }
        let theta = cholesky_solve(&mut gram, &mut rhs, m)?;
        theta.iter().all(|t| t.is_finite()).then_some(theta)
    }
}

/// Solves `A x = b` in place for symmetric positive definite `A`.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(b.to_vec())
}

/// One Anderson step: `x_{k+1} = f(x_k) + Σ θ_j Δf_j` where `θ` minimises
/// `||F(x_k) + Σ θ_j ΔF_j||`. Returns `f(x)` alone while the history is empty.
pub fn anderson_step(state: &mut AndersonState, f: &mut impl FixedPointMap, x: &Image) -> Result<(Image, Vec<Flag>)> {
    let (fx, inc) = f.evaluate(x)?;
    state.push(fx, inc)?;
    let n = state.history_len();
    let newest = &state.hist_f[n - 1];
    if n == 1 {
        return Ok((newest.clone(), Vec::new()));
    }
    let Some(theta) = state.coefficients() else {
        return Ok((newest.clone(), vec![Flag::AndersonFallback]));
    };
    let mut next = newest.clone();
    for (j, t) in theta.iter().enumerate() {
        let df = state.hist_f[j + 1].sub(&state.hist_f[j])?;
        next = next.add_scaled(&df, *t)?;
    }
    Ok((next, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtrapolationKind {
    Irons,
    Epsilon,
}

struct Differences {
    fx: Image,
    dx: Image,
    df: Image,
    d2x: Image,
    d2x_sq: f64,
}

fn differences(f: &mut impl FixedPointMap, x: &Image) -> Result<Differences> {
    let (fx, dx) = f.evaluate(x)?;
    let (_, df) = f.evaluate(&fx)?;
    let d2x = df.sub(&dx)?;
    let d2x_sq = d2x.sum_squares();
    Ok(Differences {
        fx,
        dx,
        df,
        d2x,
        d2x_sq,
    })
}

/// Irons: `x - (Δxᵀ Δ²x / ||Δ²x||²) Δx`. Falls back to `f(x)` when
/// `||Δ²x||² < guard`.
pub fn irons_step(f: &mut impl FixedPointMap, x: &Image, guard: f64) -> Result<(Image, Vec<Flag>)> {
    let d = differences(f, x)?;
    if !(d.d2x_sq >= guard) {
        return Ok((d.fx, vec![Flag::ExtrapolationGuard]));
    }
    let coef = d.dx.dot(&d.d2x)? / d.d2x_sq;
    Ok((x.add_scaled(&d.dx, -coef)?, Vec::new()))
}

/// Vector ε: `f(x) + (||Δx||² Δf - ||Δf||² Δx) / ||Δ²x||²`, with the same
/// guard as [`irons_step`].
pub fn epsilon_step(f: &mut impl FixedPointMap, x: &Image, guard: f64) -> Result<(Image, Vec<Flag>)> {
    let d = differences(f, x)?;
    if !(d.d2x_sq >= guard) {
        return Ok((d.fx, vec![Flag::ExtrapolationGuard]));
    }
    let a = d.dx.sum_squares() / d.d2x_sq;
    let b = d.df.sum_squares() / d.d2x_sq;
    let next = d.fx.zip_map(&d.df, "epsilon", |v, w| v + a * w)?;
    Ok((next.add_scaled(&d.dx, -b)?, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedPointDriver {
    Picard,
    Mann { omega: f64 },
    Chebyshev(ChebyshevSchedule),
    Anderson { window: usize, ridge: f64 },
    Irons { guard: f64 },
    Epsilon { guard: f64 },
}

impl FixedPointDriver {
    pub fn anderson(window: usize) -> Self {
        FixedPointDriver::Anderson {
            window,
            ridge: DEFAULT_ANDERSON_RIDGE,
        }
    }

    pub fn irons() -> Self {
        FixedPointDriver::Irons {
            guard: DEFAULT_EXTRAPOLATION_GUARD,
        }
    }

    pub fn epsilon() -> Self {
        FixedPointDriver::Epsilon {
            guard: DEFAULT_EXTRAPOLATION_GUARD,
        }
    }

    /// Multiplier on the method's per-iteration filter calls.
    pub fn call_multiplier(&self) -> u64 {
        match self {
            FixedPointDriver::Irons { .. } | FixedPointDriver::Epsilon { .. } => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FixedPointDriver::Mann { omega } if !omega.is_finite() => {
                Err(Error::param("relaxation factor must be finite"))
            }
            FixedPointDriver::Chebyshev(s) => s.validate(),
            FixedPointDriver::Anderson { ridge, .. } if !(*ridge >= 0.0) => {
                Err(Error::param("Anderson ridge must be nonnegative"))
            }
            FixedPointDriver::Irons { guard } | FixedPointDriver::Epsilon { guard } if !(*guard > 0.0) => {
                Err(Error::param("extrapolation guard must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FixedPointDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixedPointDriver::Picard => f.write_str("none"),
            FixedPointDriver::Mann { omega } => write!(f, "mann:omega={omega}"),
            FixedPointDriver::Chebyshev(_) => f.write_str("chb"),
            FixedPointDriver::Anderson { window, .. } => write!(f, "anderson:m={window}"),
            FixedPointDriver::Irons { .. } => f.write_str("irons"),
            FixedPointDriver::Epsilon { .. } => f.write_str("epsilon"),
        }
    }
}

/// Runs a fixed-point driver from `x0` (the observation when `None`).
pub fn run_fixed_point(
    prob: &mut BoundProblem,
    driver: FixedPointDriver,
    x0: Option<Image>,
    truth: Option<&Image>,
    opts: LoopOptions,
) -> Result<RunOutcome> {
    driver.validate()?;
    let x0 = x0.unwrap_or_else(|| prob.observation().clone());
    let trace = IterationTrace::new(prob.method().label(), driver.to_string(), prob.filter_label());
    let mut anderson = match driver {
        FixedPointDriver::Anderson { window, ridge } => Some(AndersonState::with_ridge(window, ridge)),
        _ => None,
    };
    run_loop(prob, x0, truth, opts, trace, |prob, x, k| {
        let (next, coefficient, mut flags) = match driver {
            FixedPointDriver::Picard => (picard_step(prob, x)?, Some(1.0), Vec::new()),
            FixedPointDriver::Mann { omega } => (mann_step(prob, x, omega)?, Some(omega), Vec::new()),
            FixedPointDriver::Chebyshev(s) => {
                let omega = chebyshev_omega(k, &s);
                (mann_step(prob, x, omega)?, Some(omega), Vec::new())
            }
            FixedPointDriver::Anderson { .. } => {
                let state = anderson.as_mut().expect("anderson state");
                let (next, flags) = anderson_step(state, prob, x)?;
                (next, None, flags)
            }
            FixedPointDriver::Irons { guard } => {
                let (next, flags) = irons_step(prob, x, guard)?;
                (next, None, flags)
            }
            FixedPointDriver::Epsilon { guard } => {
                let (next, flags) = epsilon_step(prob, x, guard)?;
                (next, None, flags)
            }
        };
        flags.extend(prob.take_flags());
        flags.sort();
        flags.dedup();
        Ok(StepOutcome {
            next,
            coefficient,
            flags,
        })
    })
}
