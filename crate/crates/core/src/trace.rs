//! Per-iteration traces and the shared iteration loop that records them.

use std::fmt;
use std::io::{BufRead, Write};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::methods::BoundProblem;

/// Header of the trace CSV format.
pub const CSV_HEADER: &str = "k,psnr_db,residual,filter_calls,elapsed_ms,omega_or_lambda,flags";

/// Marker for an iteration that took a fallback path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    /// P-method step with a vanishing `||p||` while `||e||` is nonzero.
    DegenerateStep,
    /// Anderson least-squares solve failed; a plain fixed-point step was taken.
    AndersonFallback,
    /// `||Δ²x||²` fell below the guard; a plain fixed-point step was taken.
    ExtrapolationGuard,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::DegenerateStep => "degenerate_step",
            Flag::AndersonFallback => "anderson_fallback",
            Flag::ExtrapolationGuard => "extrapolation_guard",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "degenerate_step" => Some(Flag::DegenerateStep),
            "anderson_fallback" => Some(Flag::AndersonFallback),
            "extrapolation_guard" => Some(Flag::ExtrapolationGuard),
            _ => None,
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub k: usize,
    pub psnr_db: Option<f64>,
    /// Frobenius norm of `e(x_k)`.
    pub residual: f64,
    /// Filter calls consumed by the driver since the start of the run.
    pub filter_calls: u64,
    pub elapsed_ms: f64,
    /// Relaxation factor or step size used to produce this iterate.
    pub coefficient: Option<f64>,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub records: Vec<Record>,
    pub method: String,
    pub accel: String,
    pub filter: String,
    pub image_id: String,
    pub diverged: bool,
}

impl IterationTrace {
    pub fn new(method: impl Into<String>, accel: impl Into<String>, filter: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            accel: accel.into(),
            filter: filter.into(),
            ..Default::default()
        }
    }

    pub fn psnr_series(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.psnr_db).collect()
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.psnr_db)
    }

    pub fn initial_psnr(&self) -> Option<f64> {
        self.records.first().and_then(|r| r.psnr_db)
    }

    /// All fallback markers, in iteration order.
    pub fn flags(&self) -> Vec<(usize, Flag)> {
        self.records
            .iter()
            .flat_map(|r| r.flags.iter().map(move |f| (r.k, *f)))
            .collect()
    }

    /// Writes the CSV form. Wall-clock times are only written when
    /// `with_timing` is set, so that reruns produce identical files.
    pub fn write_csv(&self, mut w: impl Write, with_timing: bool) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let psnr = r.psnr_db.map(|v| format!("{v:.6}")).unwrap_or_default();
            let elapsed = if with_timing {
                format!("{:.3}", r.elapsed_ms)
            } else {
                String::new()
            };
            let coef = r.coefficient.map(|v| format!("{v:.6}")).unwrap_or_default();
            let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
            writeln!(
                w,
                "{},{psnr},{:.9e},{},{elapsed},{coef},{}",
                r.k,
                r.residual,
                r.filter_calls,
                flags.join(";")
            )?;
        }
        Ok(())
    }

    /// Reads records back from the CSV form. Labels are left empty.
    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::Empty("trace CSV"))?
            .map_err(|e| Error::io("<trace>", e))?;
        if header.trim() != CSV_HEADER {
            return Err(Error::Config(format!("unexpected trace header `{header}`")));
        }
        let mut trace = IterationTrace::default();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<trace>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(Error::Config(format!("trace line {}: expected 7 fields", n + 2)));
            }
            let bad = |what: &str| Error::Config(format!("trace line {}: bad {what}", n + 2));
            let opt = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(what))
                }
            };
            trace.records.push(Record {
                k: cols[0].parse().map_err(|_| bad("k"))?,
                psnr_db: opt(cols[1], "psnr_db")?,
                residual: cols[2].parse().map_err(|_| bad("residual"))?,
                filter_calls: cols[3].parse().map_err(|_| bad("filter_calls"))?,
                elapsed_ms: opt(cols[4], "elapsed_ms")?.unwrap_or(0.0),
                coefficient: opt(cols[5], "omega_or_lambda")?,
                flags: cols[6]
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| Flag::parse(s).ok_or_else(|| bad("flag")))
                    .collect::<Result<_>>()?,
            });
        }
        Ok(trace)
    }
}

/// What one driver iteration produced.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: Image,
    pub coefficient: Option<f64>,
    pub flags: Vec<Flag>,
}

impl StepOutcome {
    pub fn plain(next: Image) -> Self {
        Self {
            next,
            coefficient: None,
            flags: Vec::new(),
        }
    }
}

/// Options shared by every iteration driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopOptions {
    pub budget: usize,
    /// Stop once `||e|| / ||b||` drops below this value.
    pub early_stop: Option<f64>,
    /// PSNR below the starting value by more than this marks divergence.
    pub divergence_margin_db: f64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            budget: 100,
            early_stop: None,
            divergence_margin_db: 0.5,
        }
    }
}

impl LoopOptions {
    pub fn with_budget(budget: usize) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: IterationTrace,
    /// Iterate with the highest PSNR (the last iterate without ground truth).
    pub best: Image,
    pub last: Image,
}

/// Runs `step` from `x0` for the configured budget, recording one row per iterate.
pub(crate) fn run_loop(
    prob: &mut BoundProblem,
    x0: Image,
    truth: Option<&Image>,
    opts: LoopOptions,
    mut trace: IterationTrace,
    mut step: impl FnMut(&mut BoundProblem, &Image, usize) -> Result<StepOutcome>,
) -> Result<RunOutcome> {
    if opts.budget == 0 {
        return Err(Error::param("iteration budget must be at least 1"));
    }
    prob.observation().check_shape(&x0)?;
    if let Some(t) = truth {
        t.check_shape(&x0)?;
    }
    let start = Instant::now();
    let calls0 = prob.call_count();
    let b_norm = prob.observation().frobenius_norm();
    let score = |x: &Image| truth.map(|t| psnr(t, x, 1.0)).transpose();

    let mut x = x0;
    let mut best_psnr = score(&x)?;
    let mut best = x.clone();
    trace.records.push(Record {
        k: 0,
        psnr_db: best_psnr,
        residual: prob.observe_residual(&x)?,
        filter_calls: 0,
        elapsed_ms: 0.0,
        coefficient: None,
        flags: Vec::new(),
    });

    for k in 1..=opts.budget {
        let attempt = step(prob, &x, k - 1).and_then(|outcome| {
            let p = score(&outcome.next)?;
            let residual = prob.observe_residual(&outcome.next)?;
            Ok((outcome, p, residual))
        });
        let (outcome, p, residual) = match attempt {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                trace.diverged = true;
                return Err(Error::Diverged {
                    k,
                    trace: Box::new(trace),
                });
            }
            Err(e) => return Err(e),
        };
        x = outcome.next;
        trace.records.push(Record {
            k,
            psnr_db: p,
            residual,
            filter_calls: prob.call_count() - calls0,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            coefficient: outcome.coefficient,
            flags: outcome.flags,
        });
        match (p, best_psnr) {
            (Some(p), Some(bp)) if p > bp => {
                best_psnr = Some(p);
                best = x.clone();
            }
            (None, _) => best = x.clone(),
            _ => {}
        }
        if let Some(tol) = opts.early_stop {
            if b_norm > 0.0 && residual / b_norm < tol {
                break;
            }
        }
    }

    if let (Some(p0), Some(pn)) = (trace.initial_psnr(), trace.final_psnr()) {
        trace.diverged = pn < p0 - opts.divergence_margin_db;
    }
    Ok(RunOutcome { trace, best, last: x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IterationTrace {
        let mut t = IterationTrace::new("T", "none", "gaussian");
        for k in 0..3 {
            t.records.push(Record {
                k,
                psnr_db: if k == 1 { None } else { Some(20.0 + k as f64) },
                residual: 0.5 / (k + 1) as f64,
                filter_calls: k as u64,
                elapsed_ms: 1.25 * k as f64,
                coefficient: if k == 0 { None } else { Some(1.0) },
                flags: if k == 2 {
                    vec![Flag::DegenerateStep, Flag::ExtrapolationGuard]
                } else {
                    vec![]
                },
            });
        }
        t
    }

    #[test]
    fn csv_round_trip_without_timing() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(2).unwrap().starts_with("1,,"));
        let back = IterationTrace::read_csv(&buf[..]).unwrap();
        assert_eq!(back.records.len(), 3);
        assert_eq!(back.records[2].flags, t.records[2].flags);
        assert_eq!(back.records[1].psnr_db, None);
        assert_eq!(back.records[2].elapsed_ms, 0.0);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(IterationTrace::read_csv(&b"a,b\n"[..]).is_err());
    }
}
