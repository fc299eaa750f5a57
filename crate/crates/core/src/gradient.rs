//! Accelerated gradient-descent drivers over the methods' gradient surrogates.
//!
//! The surrogate already is `-∇c`, so every rule below steps along
//! `+λ · surrogate`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::methods::BoundProblem;
use crate::trace::{run_loop, IterationTrace, LoopOptions, RunOutcome, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgdKind {
    Gd,
    Mgd,
    Nag,
    RmsProp,
    Adadelta,
    Adam,
    Sgdr,
}

impl AgdKind {
    pub fn name(self) -> &'static str {
        match self {
            AgdKind::Gd => "gd",
            AgdKind::Mgd => "mgd",
            AgdKind::Nag => "nag",
            AgdKind::RmsProp => "rmsprop",
            AgdKind::Adadelta => "adadelta",
            AgdKind::Adam => "adam",
            AgdKind::Sgdr => "sgdr",
        }
    }
}

impl FromStr for AgdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "gd" => AgdKind::Gd,
            "mgd" => AgdKind::Mgd,
            "nag" => AgdKind::Nag,
            "rmsprop" => AgdKind::RmsProp,
            "adadelta" => AgdKind::Adadelta,
            "adam" => AgdKind::Adam,
            "sgdr" => AgdKind::Sgdr,
            other => return Err(Error::param(format!("unknown gradient scheme `{other}`"))),
        })
    }
}

/// Bias correction applied to the ADAM moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdamBias {
    /// Divide by `1 - β^k`.
    #[default]
    Power,
    /// Divide by `1 - β` at every step.
    Printed,
}

impl FromStr for AdamBias {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "power" => Ok(AdamBias::Power),
            "printed" => Ok(AdamBias::Printed),
            other => Err(Error::param(format!(
                "adam bias must be `power` or `printed`, got `{other}`"
            ))),
        }
    }
}

/// Cosine-annealed step size with warm restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdrSchedule {
    pub period: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Iterations since the last restart, in `0..=period`.
    pub t_cur: usize,
}

impl SgdrSchedule {
    pub fn new(period: usize, lambda_min: f64, lambda_max: f64) -> Self {
        Self {
            period,
            lambda_min,
            lambda_max,
            t_cur: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::param("SGDR period must be at least 1"));
        }
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite() && self.lambda_min <= self.lambda_max) {
            return Err(Error::param("SGDR needs finite lambda_min <= lambda_max"));
        }
        Ok(())
    }

    /// Moves to the next iteration; `t_cur` wraps to 0 after reaching the period.
    pub fn advance(&mut self) {
        self.t_cur = if self.t_cur >= self.period { 0 } else { self.t_cur + 1 };
    }
}

impl Default for SgdrSchedule {
    fn default() -> Self {
        Self::new(5, 0.0, 1.0)
    }
}

pub fn sgdr_lambda(sched: &SgdrSchedule) -> f64 {
    let ratio = sched.t_cur as f64 / sched.period.max(1) as f64;
    sched.lambda_min + 0.5 * (sched.lambda_max - sched.lambda_min) * (1.0 + (ratio * PI).cos())
}

#[derive(Debug, Clone)]
pub struct AgdState {
    pub kind: AgdKind,
    pub lambda: f64,
    pub beta: f64,
    pub beta2: f64,
    pub eps: f64,
    pub adam_bias: AdamBias,
    pub schedule: SgdrSchedule,
    velocity: Option<Image>,
    second_moment: Option<Image>,
    delta_accum: Option<Image>,
    step_count: u64,
}

impl AgdState {
    pub fn new(kind: AgdKind) -> Self {
        Self {
            kind,
            lambda: 1.0,
            beta: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            adam_bias: AdamBias::default(),
            schedule: SgdrSchedule::default(),
            velocity: None,
            second_moment: None,
            delta_accum: None,
            step_count: 0,
        }
    }

    pub fn sgdr(schedule: SgdrSchedule) -> Self {
        Self {
            schedule,
            ..Self::new(AgdKind::Sgdr)
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_beta2(mut self, beta2: f64) -> Self {
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_adam_bias(mut self, bias: AdamBias) -> Self {
        self.adam_bias = bias;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn velocity(&self) -> Option<&Image> {
        self.velocity.as_ref()
    }

    pub fn second_moment(&self) -> Option<&Image> {
        self.second_moment.as_ref()
    }

    pub fn delta_accum(&self) -> Option<&Image> {
        self.delta_accum.as_ref()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::param("step size must be finite"));
        }
        for (name, b) in [("beta", self.beta), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::param(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("eps must be positive"));
        }
        if self.kind == AgdKind::Sgdr {
            self.schedule.validate()?;
        }
        Ok(())
    }

    fn accumulators(&mut self, x: &Image) {
        let fresh = |slot: &mut Option<Image>| {
            if !slot.as_ref().is_some_and(|v| v.same_shape(x)) {
                *slot = Some(Image::zeros(x.width(), x.height()));
            }
        };
        fresh(&mut self.velocity);
        fresh(&mut self.second_moment);
        fresh(&mut self.delta_accum);
    }
}

impl fmt::Display for AgdState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AgdKind::Sgdr => write!(
                f,
                "sgdr:T={},min={},max={}",
                self.schedule.period, self.schedule.lambda_min, self.schedule.lambda_max
            ),
            kind => f.write_str(kind.name()),
        }
    }
}

fn square_avg(acc: &Image, g: &Image, beta: f64) -> Result<Image> {
    acc.zip_map(g, "moment", |a, s| beta * a + (1.0 - beta) * s * s)
}

/// One update of `state.kind`; returns the new iterate and the step size used.
pub fn agd_step(state: &mut AgdState, prob: &mut BoundProblem, x: &Image) -> Result<(Image, f64)> {
    state.accumulators(x);
    state.step_count += 1;
    let (lambda, beta, eps) = (state.lambda, state.beta, state.eps);
    let next = match state.kind {
        AgdKind::Gd => x.add_scaled(&prob.grad_surrogate(x)?, lambda)?,
        AgdKind::Mgd | AgdKind::Nag => {
            let v = state.velocity.as_ref().expect("velocity");
            let s = if state.kind == AgdKind::Nag && beta != 0.0 {
                prob.grad_surrogate(&x.add_scaled(v, beta)?)?
            } else {
                prob.grad_surrogate(x)?
            };
            let v = v.zip_map(&s, "momentum", |vi, si| beta * vi + lambda * si)?;
            let next = x.add(&v)?;
            state.velocity = Some(v);
            next
        }
        AgdKind::RmsProp => {
            let s = prob.grad_surrogate(x)?;
            let v = square_avg(state.second_moment.as_ref().expect("moment"), &s, beta)?;
            let step = s.zip_map(&v, "rmsprop", |si, vi| lambda * si / (vi + eps).sqrt())?;
            state.second_moment = Some(v);
            x.add(&step)?
        }
        AgdKind::Adadelta => {
            let s = prob.grad_surrogate(x)?;
            let v = square_avg(state.second_moment.as_ref().expect("moment"), &s, beta)?;
            let u = state.delta_accum.as_ref().expect("delta");
            let scale = u.zip_map(&v, "adadelta", |ui, vi| (ui + eps).sqrt() / (vi + eps).sqrt())?;
            let delta = scale.zip_map(&s, "adadelta", |c, si| c * si)?;
            state.delta_accum = Some(square_avg(u, &delta, beta)?);
            state.second_moment = Some(v);
            x.add_scaled(&delta, lambda)?
        }
        AgdKind::Adam => {
            let s = prob.grad_surrogate(x)?;
            let b2 = state.beta2;
            let m = state
                .velocity
                .as_ref()
                .expect("velocity")
                .zip_map(&s, "adam", |mi, si| beta * mi + (1.0 - beta) * si)?;
            let v = square_avg(state.second_moment.as_ref().expect("moment"), &s, b2)?;
            let (c1, c2) = match state.adam_bias {
                AdamBias::Power => {
                    let k = state.step_count.min(i32::MAX as u64) as i32;
                    (1.0 - beta.powi(k), 1.0 - b2.powi(k))
                }
                AdamBias::Printed => (1.0 - beta, 1.0 - b2),
            };
            let step = m.zip_map(&v, "adam", |mi, vi| lambda * (mi / c1) / ((vi / c2).sqrt() + eps))?;
            state.velocity = Some(m);
            state.second_moment = Some(v);
            x.add(&step)?
        }
        AgdKind::Sgdr => {
            let lambda_k = sgdr_lambda(&state.schedule);
            state.schedule.advance();
            let next = x.add_scaled(&prob.grad_surrogate(x)?, lambda_k)?;
            return Ok((next, lambda_k));
        }
    };
    Ok((next, lambda))
}

/// Runs a gradient scheme from `x0` (the observation when `None`).
pub fn run_gradient_descent(
    prob: &mut BoundProblem,
    mut state: AgdState,
    x0: Option<Image>,
    truth: Option<&Image>,
    opts: LoopOptions,
) -> Result<RunOutcome> {
    state.validate()?;
    let x0 = x0.unwrap_or_else(|| prob.observation().clone());
    let trace = IterationTrace::new(prob.method().label(), state.to_string(), prob.filter_label());
    run_loop(prob, x0, truth, opts, trace, |prob, x, _| {
        let (next, lambda) = agd_step(&mut state, prob, x)?;
        let mut outcome = StepOutcome::plain(next);
        outcome.coefficient = Some(lambda);
        outcome.flags = prob.take_flags();
        Ok(outcome)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{BlackBoxFilter, FnFilter};
    use crate::methods::MethodTag;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn constant_surrogate(g: f64) -> BoundProblem {
        // g(x) = 0 so that e(x) = b everywhere.
        let zero: Arc<dyn BlackBoxFilter> = Arc::new(FnFilter::new("zero", |x: &Image| {
            Ok(Image::zeros(x.width(), x.height()))
        }));
        BoundProblem::new(zero, Image::constant(3, 2, g), MethodTag::T).unwrap()
    }

    fn blur_problem(tag: MethodTag) -> (BoundProblem, Image) {
        let g: Arc<dyn BlackBoxFilter> = Arc::new(FnFilter::new("avg", |x: &Image| {
            Image::from_fn(x.width(), x.height(), |i, j| {
                let (i, j) = (i as isize, j as isize);
                (x.get_clamped(i - 1, j) + x.get_clamped(i, j) + x.get_clamped(i + 1, j) + x.get_clamped(i, j + 1))
                    / 4.0
            })
        }));
        let truth = Image::from_fn(8, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0).unwrap();
        let prob = BoundProblem::synthesize(g, &truth, tag).unwrap();
        (prob, truth)
    }

    #[test]
    fn sgdr_examples() {
        let mut s = SgdrSchedule::new(4, 0.5, 2.5);
        assert_eq!(sgdr_lambda(&s), 2.5);
        s.t_cur = 2;
        assert!((sgdr_lambda(&s) - 1.5).abs() < 1e-15);
        s.t_cur = 4;
        assert!((sgdr_lambda(&s) - 0.5).abs() < 1e-15);
        s.advance();
        assert_eq!(s.t_cur, 0);
        assert_eq!(sgdr_lambda(&s), 2.5);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let g = 0.3;
        let mut prob = constant_surrogate(g);
        let x = Image::zeros(3, 2);
        let lambda = 0.05;
        let mut st = AgdState::new(AgdKind::Adam).with_lambda(lambda);
        let (x1, _) = agd_step(&mut st, &mut prob, &x).unwrap();
        // m̂ = g, v̂ = g² after one bias-corrected step.
        let expect = lambda * g / (g + 1e-8);
        for p in x1.pixels() {
            assert!((p - expect).abs() < 1e-15);
            assert!(*p >= 0.99 * lambda && *p <= lambda);
        }
    }

    #[test]
    fn adam_printed_bias_differs() {
        let mut prob = constant_surrogate(0.3);
        let mut st = AgdState::new(AgdKind::Adam).with_adam_bias(AdamBias::Printed);
        let (x1, _) = agd_step(&mut st, &mut prob, &Image::zeros(3, 2)).unwrap();
        // m/(1-β1) = g, v/(1-β2) = g²: identical at k = 1, diverging afterwards.
        let (x2, _) = agd_step(&mut st, &mut prob, &x1).unwrap();
        let mut power = AgdState::new(AgdKind::Adam);
        let (p1, _) = agd_step(&mut power, &mut prob, &Image::zeros(3, 2)).unwrap();
        let (p2, _) = agd_step(&mut power, &mut prob, &p1).unwrap();
        assert_eq!(x1, p1);
        assert_ne!(x2, p2);
    }

    #[test]
    fn zero_momentum_reduces_to_gd() {
        for tag in [MethodTag::T, MethodTag::Tda, MethodTag::SmallP] {
            let (mut p_gd, _) = blur_problem(tag);
            let (mut p_mgd, _) = blur_problem(tag);
            let (mut p_nag, _) = blur_problem(tag);
            let mut gd = AgdState::new(AgdKind::Gd);
            let mut mgd = AgdState::new(AgdKind::Mgd).with_beta(0.0);
            let mut nag = AgdState::new(AgdKind::Nag).with_beta(0.0);
            let mut x = p_gd.observation().clone();
            let (mut y, mut z) = (x.clone(), x.clone());
            for _ in 0..10 {
                x = agd_step(&mut gd, &mut p_gd, &x).unwrap().0;
                y = agd_step(&mut mgd, &mut p_mgd, &y).unwrap().0;
                z = agd_step(&mut nag, &mut p_nag, &z).unwrap().0;
                assert_eq!(x, y);
                assert_eq!(x, z);
            }
        }
    }

    #[test]
    fn every_scheme_costs_one_surrogate_per_step() {
        for kind in [
            AgdKind::Gd,
            AgdKind::Mgd,
            AgdKind::Nag,
            AgdKind::RmsProp,
            AgdKind::Adadelta,
            AgdKind::Adam,
            AgdKind::Sgdr,
        ] {
            for tag in MethodTag::ALL {
                let (mut prob, _) = blur_problem(tag);
                let mut st = AgdState::new(kind).with_lambda(0.1);
                let mut x = prob.observation().clone();
                for _ in 0..4 {
                    x = agd_step(&mut st, &mut prob, &x).unwrap().0;
                }
                assert_eq!(prob.call_count(), 4 * tag.filter_calls(), "{kind:?} {tag}");
                assert_eq!(st.step_count(), 4);
            }
        }
    }

    #[test]
    fn runs_record_budget_plus_one_rows() {
        let (mut p, truth) = blur_problem(MethodTag::T);
        let plain = run_gradient_descent(
            &mut p,
            AgdState::new(AgdKind::Gd),
            None,
            Some(&truth),
            LoopOptions::with_budget(20),
        )
        .unwrap();
        let (mut p, _) = blur_problem(MethodTag::T);
        let nag = run_gradient_descent(
            &mut p,
            AgdState::new(AgdKind::Nag).with_lambda(0.5),
            None,
            Some(&truth),
            LoopOptions::with_budget(20),
        )
        .unwrap();
        assert_eq!(nag.trace.records.len(), 21);
        assert_eq!(plain.trace.records.len(), 21);
        assert_eq!(nag.trace.records[20].filter_calls, 20);
    }

    #[test]
    fn sgdr_trace_records_schedule() {
        let (mut p, truth) = blur_problem(MethodTag::T);
        let st = AgdState::sgdr(SgdrSchedule::new(5, 1.0, 2.0));
        let out = run_gradient_descent(&mut p, st, None, Some(&truth), LoopOptions::with_budget(18)).unwrap();
        let lambdas: Vec<f64> = out.trace.records[1..].iter().map(|r| r.coefficient.unwrap()).collect();
        assert_eq!(lambdas[0], 2.0);
        assert!((lambdas[5] - 1.0).abs() < 1e-12);
        for k in 0..lambdas.len() - 6 {
            assert_eq!(lambdas[k], lambdas[k + 6]);
        }
    }

    #[test]
    fn invalid_states_are_rejected() {
        assert!(AgdState::new(AgdKind::Mgd).with_beta(1.0).validate().is_err());
        assert!(AgdState::new(AgdKind::Adam).with_eps(0.0).validate().is_err());
        assert!(AgdState::sgdr(SgdrSchedule::new(5, 2.0, 1.0)).validate().is_err());
        assert!("sgd".parse::<AgdKind>().is_err());
    }

    proptest! {
        #[test]
        fn sgdr_boundaries(period in 1usize..40, lo in 0.0f64..2.0, span in 0.0f64..3.0, cycles in 1usize..5) {
            let mut s = SgdrSchedule::new(period, lo, lo + span);
            for _ in 0..cycles {
                prop_assert_eq!(s.t_cur, 0);
                prop_assert!((sgdr_lambda(&s) - (lo + span)).abs() <= 1e-12);
                for _ in 0..period {
                    s.advance();
                }
                prop_assert!((sgdr_lambda(&s) - lo).abs() <= 1e-12);
                s.advance();
            }
        }

        #[test]
        fn second_moments_stay_nonnegative(g in -2.0f64..2.0, steps in 1usize..8) {
            for kind in [AgdKind::RmsProp, AgdKind::Adadelta, AgdKind::Adam] {
                let mut prob = constant_surrogate(g);
                let mut st = AgdState::new(kind).with_lambda(0.01);
                let mut x = Image::zeros(3, 2);
                for _ in 0..steps {
                    x = agd_step(&mut st, &mut prob, &x).unwrap().0;
                }
                prop_assert!(st.second_moment().unwrap().pixels().iter().all(|v| *v >= 0.0));
                prop_assert!(st.delta_accum().unwrap().pixels().iter().all(|v| *v >= 0.0));
            }
        }
    }
}
