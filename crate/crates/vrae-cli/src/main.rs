//! `vrae`: dataset preparation, synthetic degradation, training,
//! evaluation, throughput benchmarking, entropy diagnostics and Pareto
//! analysis as one executable. Every run is seeded and writes a
//! `run.json` echoing its resolved settings next to its outputs.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vrae_core::analysis::{
    entropy_csv, entropy_profile, pareto_csv, ParetoPoint, QualityMetric, DEFAULT_ENTROPY_BINS,
};
use vrae_core::data::{
    degrade, ingest_folder, list_image_files, load_record_clean, save_png, DatasetManifest,
    DegradationConfig, NoiseMode, Split,
};
use vrae_core::error::Error;
use vrae_core::metrics::{
    evaluate_model, hardware_string, measure_fps, MetricsReport, REPORT_CSV_HEADER,
};
use vrae_core::model::{Arch, VraeConfig};
use vrae_core::svg::{entropy_svg, pareto_svg};
use vrae_core::tensor::Tensor4;
use vrae_core::trainer::{loss_log_csv, train, Checkpoint, ManifestPairs, TrainConfig};
use vrae_core::{rng::Rng, threading};

#[derive(Parser)]
#[command(name = "vrae", version, about = "Vertical residual autoencoder pipeline")]
struct Cli {
    /// Worker threads for tensor ops (falls back to VRAE_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the timestamp comment in SVG outputs.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a deterministic train/val/test manifest from an image folder.
    Prepare(PrepareArgs),
    /// Materialize degraded copies of a folder of images.
    Degrade(DegradeArgs),
    /// Train a model against on-the-fly degraded inputs.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split and emit a report row.
    Eval(EvalArgs),
    /// Measure single-image forward throughput of a checkpoint.
    Bench(BenchArgs),
    /// Compare the entropy dynamics of two checkpoints.
    Entropy(EntropyArgs),
    /// Extract the Pareto front from a metrics report.
    Pareto(ParetoArgs),
}

#[derive(Args, serde::Serialize)]
struct PrepareArgs {
    /// Folder of source PNG/JPEG images.
    #[arg(long)]
    input: PathBuf,
    /// Output folder for manifest.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grow the training split to exactly this many records.
    #[arg(long = "augment-to", default_value_t = 7000)]
    augment_to: usize,
}

#[derive(Args, serde::Serialize)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Noise mode: literal|zero-mean|off.
    #[arg(long, default_value = "literal")]
    noise: String,
    #[arg(long = "pool-iters", default_value_t = 10)]
    pool_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square size images are resized to before degradation.
    #[arg(long, default_value_t = 256)]
    size: usize,
}

#[derive(Args, serde::Serialize)]
struct TrainArgs {
    /// vrae|ae
    #[arg(long, default_value = "vrae")]
    arch: String,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..=5))]
    depth: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prepared dataset folder (holds manifest.csv).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path; the loss log lands next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "literal")]
    noise: String,
    #[arg(long = "pool-iters", default_value_t = 10)]
    pool_iters: usize,
    /// Square input size (must be a multiple of 2^depth).
    #[arg(long = "image-size", default_value_t = 256)]
    image_size: usize,
    #[arg(long = "eval-every", default_value_t = 1)]
    eval_every: usize,
}

#[derive(Args, serde::Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Prepared dataset folder (test split) or a raw image folder.
    #[arg(long)]
    data: PathBuf,
    /// Report CSV path; a header is written when the file is new.
    #[arg(long)]
    report: PathBuf,
    /// Degradation seed; defaults to the seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "literal")]
    noise: String,
    #[arg(long = "pool-iters", default_value_t = 10)]
    pool_iters: usize,
    /// Timed forward passes for the FPS column; 0 keeps the row
    /// byte-reproducible by skipping timing.
    #[arg(long = "fps-iters", default_value_t = 100)]
    fps_iters: usize,
    #[arg(long = "fps-warmup", default_value_t = 10)]
    fps_warmup: usize,
    /// Cap the number of evaluated images (0 = all).
    #[arg(long, default_value_t = 0)]
    limit: usize,
}

#[derive(Args, serde::Serialize)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Optional CSV output for the measurement.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, serde::Serialize)]
struct EntropyArgs {
    #[arg(long = "ckpt-a")]
    ckpt_a: PathBuf,
    #[arg(long = "ckpt-b")]
    ckpt_b: PathBuf,
    /// Prepared dataset folder or raw image folder for the probe batch.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG of the curves next to the CSV.
    #[arg(long)]
    svg: bool,
    /// Probe batch size (seed-fixed selection from the test split).
    #[arg(long, default_value_t = 16)]
    probe: usize,
    #[arg(long, default_value_t = DEFAULT_ENTROPY_BINS)]
    bins: usize,
    #[arg(long, default_value = "literal")]
    noise: String,
    #[arg(long = "pool-iters", default_value_t = 10)]
    pool_iters: usize,
}

#[derive(Args, serde::Serialize)]
struct ParetoArgs {
    /// Metrics report CSV (the eval output format).
    #[arg(long)]
    metrics: PathBuf,
    /// Speed axis; only fps is defined.
    #[arg(long, default_value = "fps")]
    x: String,
    /// Quality axis: psnr|ssim|nmse.
    #[arg(long, default_value = "psnr")]
    y: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("VRAE_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1);
    threading::set_threads(threads);
    let ctx = RunContext { threads, no_timestamp: cli.no_timestamp };
    let outcome = match cli.command {
        Command::Prepare(args) => run_prepare(args, &ctx),
        Command::Degrade(args) => run_degrade(args, &ctx),
        Command::Train(args) => run_train(args, &ctx),
        Command::Eval(args) => run_eval(args, &ctx),
        Command::Bench(args) => run_bench(args, &ctx),
        Command::Entropy(args) => run_entropy(args, &ctx),
        Command::Pareto(args) => run_pareto(args, &ctx),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

struct RunContext {
    threads: usize,
    no_timestamp: bool,
}

impl RunContext {
    fn timestamp(&self) -> Option<String> {
        if self.no_timestamp {
            None
        } else {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            Some(format!("unix:{secs}"))
        }
    }

    /// Writes `run.json` next to the command's outputs: the subcommand,
    /// its resolved flags and the thread count.
    fn write_run_json(
        &self,
        dir: &Path,
        subcommand: &str,
        args: impl serde::Serialize,
    ) -> Result<(), Error> {
        let value = serde_json::json!({
            "subcommand": subcommand,
            "threads": self.threads,
            "settings": args,
        });
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run.json"), format!("{value:#}\n"))?;
        Ok(())
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn degradation_of(noise: &str, pool_iters: usize, seed: u64) -> Result<DegradationConfig, Error> {
    Ok(DegradationConfig {
        noise_mode: noise.parse::<NoiseMode>()?,
        pool_iterations: pool_iters,
        seed,
        ..DegradationConfig::default()
    })
}

fn run_prepare(args: PrepareArgs, ctx: &RunContext) -> Result<(), Error> {
    let files = list_image_files(&args.input)?;
    let manifest = DatasetManifest::build(&files, args.seed, args.augment_to)?;
    std::fs::create_dir_all(&args.out)?;
    manifest.save(&args.out.join("manifest.csv"))?;
    ctx.write_run_json(&args.out, "prepare", &args)?;
    println!(
        "prepared {} sources -> {} train / {} val / {} test records",
        manifest.source_count,
        manifest.split_records(Split::Train).len(),
        manifest.split_records(Split::Val).len(),
        manifest.split_records(Split::Test).len()
    );
    Ok(())
}

fn run_degrade(args: DegradeArgs, ctx: &RunContext) -> Result<(), Error> {
    let config = degradation_of(&args.noise, args.pool_iters, args.seed)?;
    let (files, tensors) = ingest_folder(&args.input, args.size)?;
    std::fs::create_dir_all(&args.out)?;
    for (id, (file, clean)) in files.iter().zip(&tensors).enumerate() {
        let degraded = degrade(clean, &config, id as u64)?;
        let stem = Path::new(file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("image_{id}"));
        save_png(&degraded, &args.out.join(format!("{stem}.png")))?;
    }
    ctx.write_run_json(&args.out, "degrade", &args)?;
    println!("degraded {} images into {}", files.len(), args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs, ctx: &RunContext) -> Result<(), Error> {
    let arch: Arch = args.arch.parse()?;
    let model =
        VraeConfig::new(arch, args.depth as usize).with_input_hw(args.image_size, args.image_size);
    let manifest = DatasetManifest::load(&args.data.join("manifest.csv"), args.seed)?;
    let degradation = degradation_of(&args.noise, args.pool_iters, args.seed)?;

    let mut config = TrainConfig::new(model, args.seed);
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.lr = args.lr;
    config.eval_every = args.eval_every;
    config.checkpoint_path = Some(args.out.clone());

    let mut train_src = ManifestPairs::new(&manifest, Split::Train, degradation, args.image_size);
    let mut val_src = ManifestPairs::new(&manifest, Split::Val, degradation, args.image_size);
    let outcome = train(&config, &mut train_src, Some(&mut val_src))?;

    let log_path = args.out.with_extension("loss.csv");
    std::fs::write(&log_path, loss_log_csv(&outcome.log))?;
    ctx.write_run_json(&parent_dir(&args.out), "train", &args)?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} for {} epochs: final train mse {:.6}{}",
        outcome.network.label(),
        args.epochs,
        last.train_mse,
        outcome
            .best_val
            .map(|(e, v)| format!(", best val mse {v:.6} at epoch {e}"))
            .unwrap_or_default()
    );
    Ok(())
}

/// Test-split pairs for a prepared folder, or every image of a raw folder.
fn eval_pairs(
    data: &Path,
    target: usize,
    degradation: &DegradationConfig,
    limit: usize,
) -> Result<Vec<(Tensor4, Tensor4)>, Error> {
    let manifest_path = data.join("manifest.csv");
    let mut records: Vec<(u64, vrae_core::data::ManifestRecord)> = if manifest_path.exists() {
        let manifest = DatasetManifest::load(&manifest_path, degradation.seed)?;
        manifest
            .split_records(Split::Test)
            .into_iter()
            .map(|(id, r)| (id as u64, r.clone()))
            .collect()
    } else {
        list_image_files(data)?
            .into_iter()
            .enumerate()
            .map(|(id, path)| {
                (
                    id as u64,
                    vrae_core::data::ManifestRecord { path, split: Split::Test, angle_deg: None },
                )
            })
            .collect()
    };
    if limit > 0 {
        records.truncate(limit);
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("no test images under {}", data.display())));
    }
    let mut cache = std::collections::HashMap::new();
    let mut pairs = Vec::with_capacity(records.len());
    for (id, record) in &records {
        let clean = load_record_clean(record, target, &mut cache)?;
        let degraded = degrade(&clean, degradation, *id)?;
        pairs.push((clean, degraded));
    }
    Ok(pairs)
}

fn run_eval(args: EvalArgs, ctx: &RunContext) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let (net, _) = ckpt.into_network()?;
    let seed = args.seed.unwrap_or(ckpt.seed);
    let degradation = degradation_of(&args.noise, args.pool_iters, seed)?;
    let target = net.config.input.1;
    let pairs = eval_pairs(&args.data, target, &degradation, args.limit)?;
    let report = evaluate_model(&net, &pairs, args.fps_warmup, args.fps_iters)?;
    if report.psnr_capped {
        eprintln!("warning: at least one image pair was identical; its PSNR was capped at 99 dB");
    }

    let mut text = String::new();
    if !args.report.exists() {
        text.push_str(REPORT_CSV_HEADER);
        text.push('\n');
    }
    text.push_str(&report.csv_row());
    text.push('\n');
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(&args.report)?;
    file.write_all(text.as_bytes())?;
    ctx.write_run_json(&parent_dir(&args.report), "eval", &args)?;
    println!("{REPORT_CSV_HEADER}");
    println!("{}", report.csv_row());
    Ok(())
}

fn run_bench(args: BenchArgs, ctx: &RunContext) -> Result<(), Error> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let (net, _) = ckpt.into_network()?;
    let fps = measure_fps(&net, args.warmup, args.iters)?;
    let params = net.count_parameters().total;
    println!(
        "model={} fps={fps:.3} params={params} threads={} hardware={} iters={}",
        net.label(),
        ctx.threads,
        hardware_string(),
        args.iters
    );
    if let Some(out) = &args.out {
        let csv = format!(
            "model,fps,params,threads,hardware,iters\n{},{fps:.3},{params},{},{},{}\n",
            net.label(),
            ctx.threads,
            hardware_string(),
            args.iters
        );
        std::fs::write(out, csv)?;
    }
    let run_dir = args.out.as_deref().unwrap_or(&args.ckpt);
    ctx.write_run_json(&parent_dir(run_dir), "bench", &args)?;
    Ok(())
}

fn run_entropy(args: EntropyArgs, ctx: &RunContext) -> Result<(), Error> {
    let ckpt_a = Checkpoint::load(&args.ckpt_a)?;
    let ckpt_b = Checkpoint::load(&args.ckpt_b)?;
    let (net_a, _) = ckpt_a.into_network()?;
    let (net_b, _) = ckpt_b.into_network()?;
    if net_a.config.input != net_b.config.input {
        return Err(Error::Config(format!(
            "checkpoints take different input dims: {:?} vs {:?}",
            net_a.config.input, net_b.config.input
        )));
    }
    let target = net_a.config.input.1;
    let degradation = degradation_of(&args.noise, args.pool_iters, ckpt_a.seed)?;
    let pairs = eval_pairs(&args.data, target, &degradation, 0)?;

    // Seed-fixed probe selection, then one batched forward per model.
    let mut ids: Vec<usize> = (0..pairs.len()).collect();
    Rng::stream(ckpt_a.seed, "entropy-probe", 0).shuffle(&mut ids);
    ids.truncate(args.probe.max(1));
    let (_, c, h, w) = pairs[0].1.dims();
    let mut probe_data = Vec::with_capacity(ids.len() * c * h * w);
    for &i in &ids {
        probe_data.extend_from_slice(pairs[i].1.data());
    }
    let probe = Tensor4::new((ids.len(), c, h, w), probe_data)?;

    let profile_a = entropy_profile(&net_a, &probe, args.bins)?;
    let profile_b = entropy_profile(&net_b, &probe, args.bins)?;
    let csv = entropy_csv(&[profile_a.clone(), profile_b.clone()]);
    std::fs::write(&args.out, &csv)?;
    if args.svg {
        let svg = entropy_svg(&[profile_a, profile_b], ctx.timestamp().as_deref());
        std::fs::write(args.out.with_extension("svg"), svg)?;
    }
    ctx.write_run_json(&parent_dir(&args.out), "entropy", &args)?;
    print!("{csv}");
    Ok(())
}

fn run_pareto(args: ParetoArgs, ctx: &RunContext) -> Result<(), Error> {
    if args.x != "fps" {
        return Err(Error::Config(format!(
            "unsupported x axis '{}', only fps is defined",
            args.x
        )));
    }
    let metric: QualityMetric = args.y.parse()?;
    let text = std::fs::read_to_string(&args.metrics)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", args.metrics.display())))?;
    let mut points = Vec::new();
    for line in text.lines() {
        if line.is_empty() || line.starts_with("model,") {
            continue;
        }
        let report = MetricsReport::parse_csv_row(line)?;
        points.push(ParetoPoint {
            label: report.model.clone(),
            quality: match metric {
                QualityMetric::Psnr => report.psnr_db,
                QualityMetric::Ssim => report.ssim,
                QualityMetric::Nmse => report.nmse,
            },
            fps: report.fps,
            params: report.params,
        });
    }
    if points.is_empty() {
        return Err(Error::Empty(format!("no data rows in {}", args.metrics.display())));
    }
    let csv = pareto_csv(&points, metric);
    std::fs::write(&args.out, &csv)?;
    if args.svg {
        let svg = pareto_svg(&points, metric, ctx.timestamp().as_deref());
        std::fs::write(args.out.with_extension("svg"), svg)?;
    }
    ctx.write_run_json(&parent_dir(&args.out), "pareto", &args)?;
    print!("{csv}");
    Ok(())
}
