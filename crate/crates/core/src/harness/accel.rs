use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filters::parse_key_values;
use crate::fixed_point::{run_fixed_point, ChebyshevSchedule, FixedPointDriver};
use crate::gradient::{run_gradient_descent, AdamBias, AgdKind, AgdState, SgdrSchedule};
use crate::image::Image;
use crate::methods::{BoundProblem, MethodTag};
use crate::trace::{LoopOptions, RunOutcome};

/// ADAM step size when none is given.
pub const ADAM_DEFAULT_LAMBDA: f64 = 0.01;
/// RMSProp step size when none is given.
pub const RMSPROP_DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccelKind {
    None,
    Mann,
    Chebyshev,
    Anderson,
    Irons,
    Epsilon,
    Gd,
    Mgd,
    Nag,
    RmsProp,
    Adadelta,
    Adam,
    Sgdr,
}

impl AccelKind {
    pub const ALL: [AccelKind; 13] = [
        AccelKind::None,
        AccelKind::Mann,
        AccelKind::Chebyshev,
        AccelKind::Anderson,
        AccelKind::Irons,
        AccelKind::Epsilon,
        AccelKind::Gd,
        AccelKind::Mgd,
        AccelKind::Nag,
        AccelKind::RmsProp,
        AccelKind::Adadelta,
        AccelKind::Adam,
        AccelKind::Sgdr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AccelKind::None => "none",
            AccelKind::Mann => "mann",
            AccelKind::Chebyshev => "chb",
            AccelKind::Anderson => "anderson",
            AccelKind::Irons => "irons",
            AccelKind::Epsilon => "epsilon",
            AccelKind::Gd => "gd",
            AccelKind::Mgd => "mgd",
            AccelKind::Nag => "nag",
            AccelKind::RmsProp => "rmsprop",
            AccelKind::Adadelta => "adadelta",
            AccelKind::Adam => "adam",
            AccelKind::Sgdr => "sgdr",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            AccelKind::None => &[],
            AccelKind::Mann => &["omega"],
            AccelKind::Chebyshev => &["T", "alpha", "lambda1", "lambda2"],
            AccelKind::Anderson => &["m", "ridge"],
            AccelKind::Irons | AccelKind::Epsilon => &["guard"],
            AccelKind::Gd => &["lambda"],
            AccelKind::Mgd | AccelKind::Nag => &["lambda", "beta"],
            AccelKind::RmsProp | AccelKind::Adadelta => &["lambda", "beta", "eps"],
            AccelKind::Adam => &["lambda", "beta1", "beta2", "eps", "bias"],
            AccelKind::Sgdr => &["T", "min", "max"],
        }
    }

    /// Whether the scheme drives the fixed-point map (as opposed to the surrogate).
    pub fn is_fixed_point(self) -> bool {
        matches!(
            self,
            AccelKind::None
                | AccelKind::Mann
                | AccelKind::Chebyshev
                | AccelKind::Anderson
                | AccelKind::Irons
                | AccelKind::Epsilon
        )
    }

    /// Multiplier on the method's per-iteration filter calls.
    pub fn call_multiplier(self) -> u64 {
        match self {
            AccelKind::Irons | AccelKind::Epsilon => 2,
            _ => 1,
        }
    }
}

impl FromStr for AccelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "none" | "picard" => AccelKind::None,
            "mann" => AccelKind::Mann,
            "chb" | "chebyshev" => AccelKind::Chebyshev,
            "anderson" | "aa" => AccelKind::Anderson,
            "irons" => AccelKind::Irons,
            "epsilon" => AccelKind::Epsilon,
            "gd" => AccelKind::Gd,
            "mgd" => AccelKind::Mgd,
            "nag" => AccelKind::Nag,
            "rmsprop" => AccelKind::RmsProp,
            "adadelta" => AccelKind::Adadelta,
            "adam" => AccelKind::Adam,
            "sgdr" => AccelKind::Sgdr,
            other => {
                return Err(Error::param(format!(
                    "unknown acceleration `{other}` (expected none, mann, chb, anderson, irons, epsilon, gd, mgd, nag, rmsprop, adadelta, adam or sgdr)"
                )))
            }
        })
    }
}

/// An acceleration scheme plus explicit parameter overrides.
///
/// Parameters not given fall back to per-method presets when the scheme is
/// resolved against a method with [`AccelSpec::driver`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccelSpec {
    pub kind: AccelKind,
    /// Raw override values keyed by parameter name.
    pub overrides: BTreeMap<String, String>,
}

impl AccelSpec {
    pub fn new(kind: AccelKind) -> Self {
        Self {
            kind,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.insert(key.to_string(), value.to_string());
        self
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        match self.overrides.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::param(format!("{}: `{key}` expects a number, got `{v}`", self.kind.name()))),
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.real(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::param(format!(
                "{}: `{key}` must be a nonnegative integer",
                self.kind.name()
            )));
        }
        Ok(v as usize)
    }

    /// Resolves presets for `method` into a runnable driver.
    pub fn driver(&self, method: MethodTag) -> Result<Driver> {
        use AccelKind as K;
        let driver = match self.kind {
            K::None => Driver::Fixed(FixedPointDriver::Picard),
            K::Mann => Driver::Fixed(FixedPointDriver::Mann {
                omega: self.real("omega", 1.0)?,
            }),
            K::Chebyshev => {
                let preset = ChebyshevSchedule::for_method(method);
                Driver::Fixed(FixedPointDriver::Chebyshev(ChebyshevSchedule {
                    period: self.count("T", preset.period)?,
                    clip_alpha: self.real("alpha", preset.clip_alpha)?,
                    lambda1: self.real("lambda1", preset.lambda1)?,
                    lambda2: self.real("lambda2", preset.lambda2)?,
                }))
            }
            K::Anderson => Driver::Fixed(FixedPointDriver::Anderson {
                window: self.count("m", 5)?,
                ridge: self.real("ridge", crate::fixed_point::DEFAULT_ANDERSON_RIDGE)?,
            }),
            K::Irons => Driver::Fixed(FixedPointDriver::Irons {
                guard: self.real("guard", crate::fixed_point::DEFAULT_EXTRAPOLATION_GUARD)?,
            }),
            K::Epsilon => Driver::Fixed(FixedPointDriver::Epsilon {
                guard: self.real("guard", crate::fixed_point::DEFAULT_EXTRAPOLATION_GUARD)?,
            }),
            K::Gd => Driver::Gradient(AgdState::new(AgdKind::Gd).with_lambda(self.real("lambda", 1.0)?)),
            K::Mgd | K::Nag => {
                let kind = if self.kind == K::Mgd {
                    AgdKind::Mgd
                } else {
                    AgdKind::Nag
                };
                Driver::Gradient(
                    AgdState::new(kind)
                        .with_lambda(self.real("lambda", 1.0)?)
                        .with_beta(self.real("beta", 0.9)?),
                )
            }
            K::RmsProp | K::Adadelta => {
                let (kind, lambda) = if self.kind == K::RmsProp {
                    (AgdKind::RmsProp, RMSPROP_DEFAULT_LAMBDA)
                } else {
                    (AgdKind::Adadelta, 1.0)
                };
                Driver::Gradient(
                    AgdState::new(kind)
                        .with_lambda(self.real("lambda", lambda)?)
                        .with_beta(self.real("beta", 0.9)?)
                        .with_eps(self.real("eps", 1e-8)?),
                )
            }
            K::Adam => {
                let bias = match self.overrides.get("bias") {
                    Some(b) => b.parse()?,
                    None => AdamBias::Power,
                };
                Driver::Gradient(
                    AgdState::new(AgdKind::Adam)
                        .with_lambda(self.real("lambda", ADAM_DEFAULT_LAMBDA)?)
                        .with_beta(self.real("beta1", 0.9)?)
                        .with_beta2(self.real("beta2", 0.999)?)
                        .with_eps(self.real("eps", 1e-8)?)
                        .with_adam_bias(bias),
                )
            }
            K::Sgdr => {
                let preset = sgdr_preset(method);
                Driver::Gradient(AgdState::sgdr(SgdrSchedule::new(
                    self.count("T", preset.period)?,
                    self.real("min", preset.lambda_min)?,
                    self.real("max", preset.lambda_max)?,
                )))
            }
        };
        driver.validate()?;
        Ok(driver)
    }
}

/// Per-method SGDR settings; the R-method shares the T-method's.
pub fn sgdr_preset(method: MethodTag) -> SgdrSchedule {
    match method {
        MethodTag::T | MethodTag::R => SgdrSchedule::new(5, 1.0, 2.0),
        MethodTag::Tda | MethodTag::SmallP => SgdrSchedule::new(5, 0.0, 3.0),
        MethodTag::P => SgdrSchedule::new(5, 0.0, 1.0),
    }
}

impl fmt::Display for AccelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        for (i, (k, v)) in self.overrides.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

impl FromStr for AccelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let kind: AccelKind = kind.parse()?;
        let mut spec = AccelSpec::new(kind);
        for (k, v) in parse_key_values(rest)? {
            if !kind.keys().contains(&k.as_str()) {
                return Err(Error::param(format!(
                    "unknown parameter `{k}` for {} (known: {})",
                    kind.name(),
                    if kind.keys().is_empty() {
                        "none".to_string()
                    } else {
                        kind.keys().join(", ")
                    }
                )));
            }
            if spec.overrides.insert(k.clone(), v).is_some() {
                return Err(Error::param(format!("parameter `{k}` given twice")));
            }
        }
        // Surface bad values at parse time.
        spec.driver(MethodTag::T)?;
        Ok(spec)
    }
}

/// A resolved acceleration ready to run.
#[derive(Debug, Clone)]
pub enum Driver {
    Fixed(FixedPointDriver),
    Gradient(AgdState),
}

impl Driver {
    pub fn validate(&self) -> Result<()> {
        match self {
            Driver::Fixed(d) => d.validate(),
            Driver::Gradient(s) => s.validate(),
        }
    }

    pub fn run(
        &self,
        prob: &mut BoundProblem,
        x0: Option<Image>,
        truth: Option<&Image>,
        opts: LoopOptions,
    ) -> Result<RunOutcome> {
        match self {
            Driver::Fixed(d) => run_fixed_point(prob, *d, x0, truth, opts),
            Driver::Gradient(s) => run_gradient_descent(prob, s.clone(), x0, truth, opts),
        }
    }
}
