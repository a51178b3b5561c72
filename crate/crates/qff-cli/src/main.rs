//! `qff`: fit neural fields to images and analytic distance fields.
//!
//! Subcommands: `fit-image`, `fit-sdf`, `bench-convergence`, `grad-check`.
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
//! abort, 1 failed gradient check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qff_core::error::{QffError, Result};
use qff_core::gradcheck;
use qff_core::io::config::{parse_run_config, BenchTargetConfig, RunConfig, TaskConfig};
use qff_core::io::{checkpoint, csvout, ppm, read_image};
use qff_core::model::FieldModel;
use qff_core::tasks::bench::{bench_convergence, BenchSpec, BenchTarget, BenchTask};
use qff_core::tasks::image::{fit_image_with, ImageTask};
use qff_core::tasks::sdf::{fit_sdf_with, SdfTask};
use qff_core::tasks::FitOpts;

#[derive(Parser)]
#[command(name = "qff", version, about = "Quantized Fourier feature field training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training steps (overrides optim.steps).
    #[arg(long)]
    steps: Option<u64>,
    /// Random seed (overrides optim.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to an image and report PSNR.
    FitImage(RunArgs),
    /// Fit a model to an analytic signed-distance field.
    FitSdf(RunArgs),
    /// Race several encoder configurations to a target metric.
    BenchConvergence(RunArgs),
    /// Verify gradients of every primitive and full models against
    /// finite differences.
    GradCheck(RunArgs),
}

fn main() -> ExitCode {
    let threads: usize = std::env::var("QFF_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    qff_core::configure_threads(threads);

    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    };
    ExitCode::from(code)
}

fn exit_code_for(err: &QffError) -> u8 {
    match err {
        QffError::Config(_)
        | QffError::Contract(_)
        | QffError::InvalidInput(_)
        | QffError::Shape { .. } => 2,
        QffError::Io(_) | QffError::Format(_) | QffError::Corruption(_) => 3,
        QffError::NumericalAbort { .. } => 4,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::FitImage(args) => cmd_fit_image(&args),
        Command::FitSdf(args) => cmd_fit_sdf(&args),
        Command::BenchConvergence(args) => cmd_bench(&args),
        Command::GradCheck(args) => cmd_grad_check(&args),
    }
}

fn load_config(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| QffError::io_at(&args.config, e))?;
    let mut cfg = parse_run_config(&text)?;
    if let Some(steps) = args.steps {
        cfg.optim.steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.optim.seed = seed;
    }
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| QffError::io_at(&out_dir, e))?;
    Ok((cfg, out_dir))
}

fn fit_opts(cfg: &RunConfig) -> Result<FitOpts> {
    if cfg.optim.steps == 0 {
        return Err(QffError::Config("optim.steps must be >= 1".into()));
    }
    let mut opts = FitOpts::new(cfg.optim.steps, cfg.output.eval_interval);
    opts.bank_lr = cfg.optim.lr_qff;
    opts.mlp_lr = cfg.optim.lr_mlp;
    Ok(opts)
}

fn cmd_fit_image(args: &RunArgs) -> Result<u8> {
    let (cfg, out_dir) = load_config(args)?;
    let TaskConfig::Image { path, sampling } = &cfg.task else {
        return Err(QffError::Config("fit-image requires task.kind=image".into()));
    };
    let opts = fit_opts(&cfg)?;
    let target = read_image(path)?;
    println!(
        "fit-image: {}x{} target, {} encoder, {} steps",
        target.width,
        target.height,
        cfg.encoder.variant.as_str(),
        cfg.optim.steps
    );
    let mut task = ImageTask::new(target, cfg.optim.batch, cfg.optim.seed);
    task.sampling = *sampling;
    let mut model = FieldModel::<f32>::init(cfg.encoder.clone(), cfg.mlp.clone(), cfg.optim.seed)?;
    let out = fit_image_with(&task, &mut model, &opts)?;

    csvout::write_metrics(&out_dir.join("metrics.csv"), &out.run, "psnr")?;
    ppm::write_ppm(&out_dir.join("recon.ppm"), &out.reconstruction)?;
    #[cfg(feature = "png")]
    if path.extension().and_then(|e| e.to_str()) == Some("png") {
        qff_core::io::png::write_png(&out_dir.join("recon.png"), &out.reconstruction)?;
    }
    checkpoint::save_checkpoint(&out_dir.join("model.qff"), &model)?;
    if let Some(last) = out.run.entries.last() {
        println!(
            "done: step {} loss {:.3e} psnr {:.2} dB ({:.1}s)",
            last.step, last.loss, last.metric, last.seconds
        );
    }
    Ok(0)
}

fn cmd_fit_sdf(args: &RunArgs) -> Result<u8> {
    let (cfg, out_dir) = load_config(args)?;
    let TaskConfig::Sdf { shape, eikonal_weight } = &cfg.task else {
        return Err(QffError::Config("fit-sdf requires task.kind=sdf".into()));
    };
    let opts = fit_opts(&cfg)?;
    println!(
        "fit-sdf: {:?}, {} encoder, {} steps",
        shape,
        cfg.encoder.variant.as_str(),
        cfg.optim.steps
    );
    let mut task = SdfTask::new(*shape, cfg.optim.batch, cfg.optim.seed);
    task.eikonal_weight = *eikonal_weight;
    let mut model = FieldModel::<f32>::init(cfg.encoder.clone(), cfg.mlp.clone(), cfg.optim.seed)?;
    let out = fit_sdf_with(&task, &mut model, &opts)?;

    csvout::write_metrics(&out_dir.join("metrics.csv"), &out.run, "mae")?;
    csvout::write_sdf_grid(&out_dir.join("sdf_grid.csv"), &out.grid)?;
    checkpoint::save_checkpoint(&out_dir.join("model.qff"), &model)?;
    if let Some(last) = out.run.entries.last() {
        println!(
            "done: step {} loss {:.3e} grid mae {:.3e} ({:.1}s)",
            last.step, last.loss, last.metric, last.seconds
        );
    }
    Ok(0)
}

fn cmd_bench(args: &RunArgs) -> Result<u8> {
    let (cfg, out_dir) = load_config(args)?;
    let Some(bench) = &cfg.bench else {
        return Err(QffError::Config(
            "bench-convergence requires a bench.runs section".into(),
        ));
    };
    let opts = fit_opts(&cfg)?;
    let task = match &cfg.task {
        TaskConfig::Image { path, sampling } => {
            let target = read_image(path)?;
            let mut t = ImageTask::new(target, cfg.optim.batch, cfg.optim.seed);
            t.sampling = *sampling;
            BenchTask::Image(t)
        }
        TaskConfig::Sdf { shape, eikonal_weight } => {
            let mut t = SdfTask::new(*shape, cfg.optim.batch, cfg.optim.seed);
            t.eikonal_weight = *eikonal_weight;
            BenchTask::Sdf(t)
        }
    };
    let specs: Vec<BenchSpec> = bench
        .runs
        .iter()
        .map(|r| BenchSpec {
            name: r.name.clone(),
            encoding: r.encoder.clone(),
            mlp: r.mlp.clone(),
            seed: cfg.optim.seed,
        })
        .collect();
    let target = match bench.target {
        BenchTargetConfig::Auto => BenchTarget::BaselineFinal,
        BenchTargetConfig::Value(v) => BenchTarget::Fixed(v),
    };
    println!(
        "bench-convergence: {} runs, metric {}, budget {} steps",
        specs.len(),
        task.metric_name(),
        cfg.optim.steps
    );
    let entries = bench_convergence::<f32>(&task, &specs, target, &opts)?;
    let rows: Vec<(String, Option<u64>, f64)> = entries
        .iter()
        .map(|e| (e.name.clone(), e.steps_to_target, e.final_metric))
        .collect();
    csvout::write_convergence(&out_dir.join("convergence.csv"), &rows)?;
    for e in &entries {
        let steps = e
            .steps_to_target
            .map(|s| s.to_string())
            .unwrap_or_else(|| "inf".into());
        println!(
            "{}: steps_to_target={} final {}={:.4} (target {:.4})",
            e.name,
            steps,
            task.metric_name(),
            e.final_metric,
            e.target
        );
    }
    Ok(0)
}

fn cmd_grad_check(args: &RunArgs) -> Result<u8> {
    // The config supplies only the seed; checks always cover every primitive
    // plus full models of all three variants in double precision.
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| QffError::io_at(&args.config, e))?;
    let cfg = parse_run_config(&text)?;
    let seed = args.seed.unwrap_or(cfg.optim.seed);
    let report = gradcheck::full_report(seed)?;
    print!("{report}");
    if report.passed() {
        println!("grad-check passed (worst {:.3e} < {:.0e})", report.worst(), gradcheck::TOLERANCE);
        Ok(0)
    } else {
        eprintln!("grad-check FAILED (worst {:.3e})", report.worst());
        Ok(1)
    }
}

