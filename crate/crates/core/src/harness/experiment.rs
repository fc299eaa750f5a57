use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::accel::AccelSpec;
use super::config::RunConfig;
use super::metrics::{aggregate_pmax, ImprovementSummary};
use crate::error::{Error, Result};
use crate::filters::BlackBoxFilter;
use crate::image::Image;
use crate::io::load_image;
use crate::methods::{BoundProblem, MethodTag};
use crate::trace::{IterationTrace, LoopOptions};

/// File-name component for a method; distinct for `P` and `p` on
/// case-insensitive file systems.
pub fn method_slug(tag: MethodTag) -> &'static str {
    match tag {
        MethodTag::T => "t",
        MethodTag::R => "r",
        MethodTag::Tda => "tda",
        MethodTag::P => "pn",
        MethodTag::SmallP => "p",
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub filter: String,
    pub method: MethodTag,
    pub accel: String,
    pub image: String,
}

impl CellKey {
    pub fn file_name(&self) -> String {
        format!(
            "{}__{}__{}__{}.csv",
            slug(&self.filter),
            method_slug(self.method),
            slug(&self.accel),
            slug(&self.image)
        )
    }
}

#[derive(Debug, Clone)]
pub enum CellOutcome {
    /// Finished the budget or aborted on a non-finite iterate; see `trace.diverged`.
    Traced(IterationTrace),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub outcome: CellOutcome,
}

/// Aggregate of one (filter, method, accel) cell over all images.
#[derive(Debug, Clone)]
pub struct SummaryCell {
    pub filter: String,
    pub method: MethodTag,
    pub accel: String,
    pub summary: Option<ImprovementSummary>,
    pub failures: usize,
}

impl SummaryCell {
    pub fn usable(&self) -> Option<&ImprovementSummary> {
        if self.failures > 0 {
            None
        } else {
            self.summary.as_ref()
        }
    }

    fn render(&self) -> String {
        match self.usable() {
            None => "ERR".into(),
            Some(s) if s.converged() => format!("{:.3}", s.p_max),
            Some(s) => format!("{:.3}*", s.p_max),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub summaries: Vec<SummaryCell>,
    pub out_dir: PathBuf,
}

impl ExperimentReport {
    pub fn summary(&self, filter: &str, method: MethodTag, accel: &str) -> Option<&SummaryCell> {
        self.summaries
            .iter()
            .find(|s| s.filter == filter && s.method == method && s.accel == accel)
    }

    pub fn failures(&self) -> impl Iterator<Item = (&CellKey, &str)> {
        self.cells.iter().filter_map(|c| match &c.outcome {
            CellOutcome::Failed(msg) => Some((&c.key, msg.as_str())),
            CellOutcome::Traced(_) => None,
        })
    }
}

fn image_ids(paths: &[PathBuf]) -> Result<Vec<String>> {
    let ids: Vec<String> = paths
        .iter()
        .map(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
                .ok_or_else(|| Error::Config(format!("cannot derive an image id from {}", p.display())))
        })
        .collect::<Result<_>>()?;
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config("image file stems must be unique".into()));
    }
    Ok(ids)
}

struct Job<'a> {
    key: CellKey,
    filter: Arc<dyn BlackBoxFilter>,
    truth: &'a Image,
    accel: &'a AccelSpec,
    budget: usize,
}

fn run_cell(cfg: &RunConfig, job: &Job<'_>) -> CellOutcome {
    let attempt = || -> Result<IterationTrace> {
        let driver = job.accel.driver(job.key.method)?;
        let mut prob = BoundProblem::synthesize(job.filter.clone(), job.truth, cfg.method_kind(job.key.method))?;
        let opts = LoopOptions {
            budget: job.budget,
            early_stop: cfg.early_stop,
            ..LoopOptions::default()
        };
        match driver.run(&mut prob, None, Some(job.truth), opts) {
            Ok(out) => Ok(out.trace),
            Err(Error::Diverged { trace, .. }) => Ok(*trace),
            Err(e) => Err(e),
        }
    };
    match attempt() {
        Ok(mut trace) => {
            trace.filter = job.key.filter.clone();
            trace.accel = job.key.accel.clone();
            trace.image_id = job.key.image.clone();
            CellOutcome::Traced(trace)
        }
        Err(e) => CellOutcome::Failed(e.to_string()),
    }
}

/// Runs every (image, filter, method, accel) cell and writes traces and
/// summary tables under `cfg.out_dir`.
///
/// Cells run on `cfg.jobs` worker threads; results are merged in config order,
/// so the output does not depend on the degree of parallelism.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ids = image_ids(&cfg.images)?;
    let truths: Vec<Image> = cfg.images.iter().map(load_image).collect::<Result<_>>()?;
    let filters: Vec<(String, Arc<dyn BlackBoxFilter>, usize)> = cfg
        .filters
        .iter()
        .map(|(label, spec)| Ok((label.clone(), spec.build()?, cfg.budget_for(label, spec))))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for (label, filter, budget) in &filters {
        for method in &cfg.methods {
            for accel in &cfg.accels {
                for (id, truth) in ids.iter().zip(&truths) {
                    jobs.push(Job {
                        key: CellKey {
                            filter: label.clone(),
                            method: *method,
                            accel: accel.to_string(),
                            image: id.clone(),
                        },
                        filter: filter.clone(),
                        truth,
                        accel,
                        budget: *budget,
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| jobs.par_iter().map(|j| run_cell(cfg, j)).collect());
    let cells: Vec<CellResult> = jobs
        .into_iter()
        .zip(outcomes)
        .map(|(job, outcome)| CellResult { key: job.key, outcome })
        .collect();

    let mut summaries = Vec::new();
    for (label, _, _) in &filters {
        for method in &cfg.methods {
            for accel in &cfg.accels {
                let accel = accel.to_string();
                let group: Vec<&CellResult> = cells
                    .iter()
                    .filter(|c| &c.key.filter == label && c.key.method == *method && c.key.accel == accel)
                    .collect();
                let traces: Vec<IterationTrace> = group
                    .iter()
                    .filter_map(|c| match &c.outcome {
                        CellOutcome::Traced(t) => Some(t.clone()),
                        CellOutcome::Failed(_) => None,
                    })
                    .collect();
                let mut failures = group.len() - traces.len();
                let summary = if traces.is_empty() {
                    None
                } else {
                    match aggregate_pmax(&traces) {
                        Ok(s) => Some(s),
                        Err(_) => {
                            failures += 1;
                            None
                        }
                    }
                };
                summaries.push(SummaryCell {
                    filter: label.clone(),
                    method: *method,
                    accel,
                    summary,
                    failures,
                });
            }
        }
    }

    let report = ExperimentReport {
        cells,
        summaries,
        out_dir: cfg.out_dir.clone(),
    };
    write_report(cfg, &report)?;
    Ok(report)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_report(cfg: &RunConfig, report: &ExperimentReport) -> Result<()> {
    let traces_dir = cfg.out_dir.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
    let mut index = String::from("filter,method,accel,image,status,final_psnr_db,max_improvement_pct\n");
    for cell in &report.cells {
        let k = &cell.key;
        let (status, final_psnr, max_imp) = match &cell.outcome {
            CellOutcome::Traced(t) => {
                let path = traces_dir.join(k.file_name());
                let mut w = create(&path)?;
                t.write_csv(&mut w, cfg.timing).map_err(|e| Error::io(&path, e))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
                let status = if t.diverged { "diverged" } else { "ok" };
                let fp = t.final_psnr().map(|v| format!("{v:.6}")).unwrap_or_default();
                let mi = super::metrics::max_improvement(t)
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default();
                (status.to_string(), fp, mi)
            }
            CellOutcome::Failed(msg) => (
                format!("failed: {}", msg.replace([',', '\n'], " ")),
                String::new(),
                String::new(),
            ),
        };
        let _ = writeln!(
            index,
            "{},{},{},{},{status},{final_psnr},{max_imp}",
            k.filter, k.method, k.accel, k.image
        );
    }
    write_text(&cfg.out_dir.join("cells.csv"), &index)?;

    let accels: Vec<String> = cfg.accels.iter().map(|a| a.to_string()).collect();
    let mut markdown = String::new();
    for method in &cfg.methods {
        let mut csv = format!("filter,{}\n", accels.join(","));
        let _ = writeln!(markdown, "## {method}\n");
        let _ = writeln!(markdown, "| filter | {} |", accels.join(" | "));
        let _ = writeln!(markdown, "|---|{}", "---|".repeat(accels.len()));
        for (label, _) in &cfg.filters {
            let row: Vec<&SummaryCell> = accels
                .iter()
                .map(|a| report.summary(label, *method, a).expect("summary for every cell"))
                .collect();
            let _ = writeln!(
                csv,
                "{label},{}",
                row.iter().map(|c| c.render()).collect::<Vec<_>>().join(",")
            );
            let md: Vec<String> = row.iter().map(|c| markdown_cell(c)).collect();
            let _ = writeln!(markdown, "| {label} | {} |", md.join(" | "));
        }
        markdown.push('\n');
        write_text(&cfg.out_dir.join(format!("summary_{}.csv", method_slug(*method))), &csv)?;
    }

    let (best_csv, best_md) = best_of(cfg, report);
    write_text(&cfg.out_dir.join("best_of.csv"), &best_csv)?;
    markdown.push_str(&best_md);
    markdown.push_str("\n`*` / italics: non-convergent in at least one image. Bold: best method for the filter.\n");
    write_text(&cfg.out_dir.join("summary.md"), &markdown)
}

fn markdown_cell(c: &SummaryCell) -> String {
    match c.usable() {
        None => "ERR".into(),
        Some(s) if s.converged() => format!("{:.1}", s.p_max),
        Some(s) => format!("_{:.1}_", s.p_max),
    }
}

/// Best accelerated cell per (filter, method), preferring convergent cells.
fn best_of(cfg: &RunConfig, report: &ExperimentReport) -> (String, String) {
    let mut csv = String::from("filter");
    let mut md = String::from("## Best per method\n\n| filter |");
    for m in &cfg.methods {
        let _ = write!(csv, ",{m}_pmax,{m}_accel");
        let _ = write!(md, " {m} | |");
    }
    csv.push('\n');
    md.push_str("\n|---|");
    md.push_str(&"---|---|".repeat(cfg.methods.len()));
    md.push('\n');

    for (label, _) in &cfg.filters {
        let picks: Vec<Option<&SummaryCell>> = cfg
            .methods
            .iter()
            .map(|m| {
                let mut cands: Vec<&SummaryCell> = report
                    .summaries
                    .iter()
                    .filter(|s| &s.filter == label && s.method == *m && s.usable().is_some())
                    .collect();
                if cands.iter().any(|c| c.usable().unwrap().converged()) {
                    cands.retain(|c| c.usable().unwrap().converged());
                }
                // First maximum in config order breaks ties deterministically.
                cands
                    .into_iter()
                    .fold(None, |best: Option<&SummaryCell>, c| match best {
                        Some(b) if b.usable().unwrap().p_max >= c.usable().unwrap().p_max => Some(b),
                        _ => Some(c),
                    })
            })
            .collect();
        let top = picks
            .iter()
            .flatten()
            .filter(|c| c.usable().unwrap().converged())
            .map(|c| c.usable().unwrap().p_max)
            .fold(f64::NEG_INFINITY, f64::max);
        csv.push_str(label);
        let _ = write!(md, "| {label} |");
        for pick in picks {
            match pick {
                Some(c) => {
                    let s = c.usable().unwrap();
                    let _ = write!(csv, ",{},{}", c.render(), c.accel);
                    let cell = if !s.converged() {
                        format!("_{:.1}_", s.p_max)
                    } else if s.p_max == top {
                        format!("**{:.1}**", s.p_max)
                    } else {
                        format!("{:.1}", s.p_max)
                    };
                    let _ = write!(md, " {cell} | {} |", c.accel);
                }
                None => {
                    csv.push_str(",ERR,");
                    md.push_str(" ERR | |");
                }
            }
        }
        csv.push('\n');
        md.push('\n');
    }
    (csv, md)
}

/// Writes `k psnr_db` pairs, or `k residual` when the trace has no PSNR.
pub fn write_plot_data(trace: &IterationTrace, mut w: impl Write) -> std::io::Result<()> {
    match trace.psnr_series() {
        Some(psnr) if !psnr.is_empty() => {
            writeln!(w, "# k psnr_db")?;
            for (r, p) in trace.records.iter().zip(psnr) {
                writeln!(w, "{} {p:.6}", r.k)?;
            }
        }
        _ => {
            writeln!(w, "# k residual")?;
            for r in &trace.records {
                writeln!(w, "{} {:.9e}", r.k, r.residual)?;
            }
        }
    }
    Ok(())
}
