use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use revfilt_core::filters::doctor;
use revfilt_core::harness::{method_slug, write_plot_data, MOTION_BUDGET};
use revfilt_core::{
    load_image, psnr, run_experiment, save_image, AccelSpec, BoundProblem, Error, FilterKind, FilterSpec, Image,
    IterationTrace, LoopOptions, MethodKind, MethodTag, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "revfilt",
    version,
    about = "Reverse black-box image filters with accelerated iterations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reverse one image.
    Run(RunArgs),
    /// Sweep images x filters x methods x accelerations from a config file.
    Bench(BenchArgs),
    /// Check that a filter is deterministic and preserves dimensions.
    Doctor(DoctorArgs),
    /// Convert trace CSVs into two-column `k psnr_db` text files.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Ground-truth image; the observation is synthesized by filtering it.
    /// With --truth, this is the observation instead.
    #[arg(long)]
    image: PathBuf,
    /// Ground truth for PSNR when --image is already filtered.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Filter spec, e.g. `guided_self:window=5,eps=0.1`.
    #[arg(long)]
    filter: FilterSpec,
    /// One of t, r, tda, P, p.
    #[arg(long, default_value = "t")]
    method: MethodTag,
    /// Acceleration, e.g. `anderson:m=5` or `sgdr:T=5,min=1,max=2`.
    #[arg(long, default_value = "none")]
    accel: AccelSpec,
    /// Iteration budget [default: 100, or 200 for motion blur].
    #[arg(long)]
    iters: Option<usize>,
    /// R-method coefficient on x.
    #[arg(long, default_value_t = MethodKind::DEFAULT_R_ALPHA)]
    r_alpha: f64,
    /// Stop once ||e|| / ||b|| drops below this value.
    #[arg(long)]
    early_stop: Option<f64>,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Include wall-clock times in the trace.
    #[arg(long)]
    timing: bool,
    /// Write the final iterate here (.png or .pgm).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; REVFILT_JOBS takes precedence when set.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct DoctorArgs {
    #[arg(long)]
    filter: FilterSpec,
    /// Probe image; a synthetic 64x64 pattern when omitted.
    #[arg(long)]
    probe: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace CSV files or directories containing them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for the `.dat` files.
    #[arg(long, default_value = "plots")]
    out: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Bench(args) => bench(args),
        Command::Doctor(args) => doctor_cmd(args),
        Command::Plot(args) => plot(args),
    }
}

fn write_trace(path: &Path, trace: &IterationTrace, timing: bool) -> Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf, timing)?;
    fs::write(path, buf).with_context(|| format!("writing trace to {}", path.display()))
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let filter = args.filter.build().context("building filter")?;
    let input = load_image(&args.image)?;
    let (truth, observation) = match &args.truth {
        Some(path) => {
            let truth = load_image(path)?;
            truth
                .check_shape(&input)
                .context("--truth and --image must have the same dimensions")?;
            (truth, input)
        }
        None => {
            let b = filter.apply(&input).context("filtering the ground truth")?;
            (input, b)
        }
    };
    let budget = args.iters.unwrap_or(if args.filter.kind == FilterKind::Motion {
        MOTION_BUDGET
    } else {
        100
    });
    if budget == 0 {
        bail!("--iters must be at least 1");
    }
    let mut kind = MethodKind::new(args.method);
    if args.method == MethodTag::R {
        kind = kind.with_alpha(args.r_alpha);
    }
    let driver = args.accel.driver(args.method)?;
    let mut prob = BoundProblem::new(filter, observation, kind)?;
    let opts = LoopOptions {
        budget,
        early_stop: args.early_stop,
        ..LoopOptions::default()
    };

    let (trace, last, aborted) = match driver.run(&mut prob, None, Some(&truth), opts) {
        Ok(out) => (out.trace, Some(out.last), None),
        Err(Error::Diverged { k, trace }) => (*trace, None, Some(k)),
        Err(e) => return Err(e.into()),
    };
    let mut trace = trace;
    trace.filter = args.filter.to_string();
    trace.accel = args.accel.to_string();
    trace.image_id = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if let Some(path) = &args.trace {
        write_trace(path, &trace, args.timing)?;
    }

    let p0 = trace.initial_psnr().unwrap_or(f64::NAN);
    let best = trace
        .psnr_series()
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (k, p)| if p > b.1 { (k, p) } else { b });
    println!(
        "{} + {} on {}: {} iterations, {} filter calls",
        args.method,
        args.accel,
        args.filter,
        trace.records.len() - 1,
        trace.records.last().map(|r| r.filter_calls).unwrap_or(0)
    );
    println!("psnr start {p0:.3} dB, best {:.3} dB at k={}", best.1, best.0);
    if let Some(k) = aborted {
        eprintln!("aborted: non-finite iterate at k={k}; no image written");
        return Ok(ExitCode::from(2));
    }
    let last = last.expect("completed run has a final iterate");
    println!(
        "psnr final {:.3} dB{}",
        psnr(&truth, &last, 1.0)?,
        if trace.diverged { " (diverged)" } else { "" }
    );
    if let Some(path) = &args.out {
        save_image(&last, path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn jobs_override(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("REVFILT_JOBS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("REVFILT_JOBS must be a positive integer, got `{v}`"))?;
            Ok(Some(n))
        }
        _ => Ok(flag),
    }
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(jobs) = jobs_override(args.jobs)? {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        cfg.jobs = jobs;
    }
    let report = run_experiment(&cfg)?;
    let failures: Vec<_> = report.failures().collect();
    for (key, msg) in &failures {
        eprintln!(
            "failed: {} {} {} {}: {msg}",
            key.filter, key.method, key.accel, key.image
        );
    }
    println!(
        "{} runs, {} failed; results in {}",
        report.cells.len(),
        failures.len(),
        report.out_dir.display()
    );
    for tag in &cfg.methods {
        println!("  summary_{}.csv", method_slug(*tag));
    }
    Ok(ExitCode::SUCCESS)
}

fn probe_image() -> Image {
    Image::from_fn(64, 64, |x, y| {
        let ring = if ((x as f64 - 32.0).powi(2) + (y as f64 - 28.0).powi(2)).sqrt() < 14.0 {
            0.4
        } else {
            0.0
        };
        (0.2 + 0.005 * (x + y) as f64 + ring).min(1.0)
    })
    .expect("finite probe")
}

fn doctor_cmd(args: DoctorArgs) -> Result<ExitCode> {
    let filter = args.filter.build()?;
    let probe = match &args.probe {
        Some(p) => load_image(p)?,
        None => probe_image(),
    };
    let report = match doctor(filter.as_ref(), &probe) {
        Ok(r) => r,
        Err(e) => {
            println!("filter {}: FAILED to run: {e}", args.filter);
            return Ok(ExitCode::FAILURE);
        }
    };
    println!("filter: {}", report.label);
    println!("deterministic: {}", report.deterministic);
    println!("preserves dimensions: {}", report.preserves_dimensions);
    println!(
        "max |difference| between repeated calls: {:e}",
        report.max_abs_difference
    );
    if report.healthy() {
        println!("OK");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED: reversal needs a deterministic, size-preserving filter");
        Ok(ExitCode::FAILURE)
    }
}

fn collect_csvs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no trace CSV files found");
    }
    Ok(files)
}

fn plot(args: PlotArgs) -> Result<ExitCode> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for path in collect_csvs(&args.inputs)? {
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let trace = IterationTrace::read_csv(std::io::BufReader::new(file))
            .with_context(|| format!("parsing {}", path.display()))?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let dest = args.out.join(format!("{stem}.dat"));
        let mut buf = Vec::new();
        write_plot_data(&trace, &mut buf)?;
        fs::write(&dest, buf).with_context(|| format!("writing {}", dest.display()))?;
        println!("{}", dest.display());
    }
    Ok(ExitCode::SUCCESS)
}
