//! End-to-end tests of the `vrae` executable: exit codes, file outputs,
//! and byte-level reproducibility of every CSV/SVG it writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vrae_core::data::save_png;
use vrae_core::rng::Rng;
use vrae_core::tensor::Tensor4;

fn vrae_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vrae"))
}

fn run(args: &[&str]) -> Output {
    vrae_bin().args(args).output().expect("spawn vrae")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Synthetic vehicle-ish test images: smooth background plus a bright
/// plate-like rectangle, varying per index.
fn write_images(dir: &Path, count: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = Rng::new(90);
    for i in 0..count {
        let base = 0.15 + 0.5 * (i as f32 / count as f32);
        let jitter = rng.next_f32() * 0.1;
        let img = Tensor4::from_fn((1, 3, 48, 48), |_, c, h, w| {
            let mut v = base + jitter + 0.1 * ((h as f32) / 12.0).sin() - 0.04 * c as f32;
            if (20..28).contains(&h) && (12..36).contains(&w) {
                v += 0.3;
            }
            v.clamp(0.0, 1.0)
        });
        save_png(&img, &dir.join(format!("img_{i:03}.png"))).unwrap();
    }
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
}

/// Prepares a small dataset folder once; individual tests train on it.
fn pipeline() -> Pipeline {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let images = root.join("images");
    write_images(&images, 12);
    let data = root.join("prepared");
    let out = run(&[
        "prepare",
        "--input",
        images.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "5",
        "--augment-to",
        "10",
    ]);
    assert_success(&out);
    assert!(data.join("manifest.csv").exists());
    assert!(data.join("run.json").exists());
    Pipeline { _tmp: tmp, root, data }
}

fn train_small(p: &Pipeline, arch: &str, out_name: &str, seed: u64) -> PathBuf {
    let ckpt = p.root.join(out_name);
    let out = run(&[
        "train",
        "--arch",
        arch,
        "--depth",
        "2",
        "--epochs",
        "2",
        "--batch",
        "4",
        "--seed",
        &seed.to_string(),
        "--image-size",
        "32",
        "--data",
        p.data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert!(ckpt.exists());
    ckpt
}

#[test]
fn depth_out_of_range_is_a_usage_error() {
    let out = run(&["train", "--depth", "6", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["pareto", "--metrics", "x.csv", "--out", "y.csv", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_fails_with_path_named() {
    let out = run(&["bench", "--ckpt", "/nonexistent/model.ckpt", "--iters", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/model.ckpt"), "{stderr}");
}

#[test]
fn prepare_rejects_empty_folder() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(&[
        "prepare",
        "--input",
        empty.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn degrade_writes_reproducible_pngs() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    write_images(&images, 3);
    let mut bytes = Vec::new();
    for round in 0..2 {
        let out_dir = tmp.path().join(format!("degraded{round}"));
        let out = run(&[
            "degrade",
            "--in",
            images.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--noise",
            "literal",
            "--pool-iters",
            "10",
            "--seed",
            "3",
            "--size",
            "32",
        ]);
        assert_success(&out);
        let mut names: Vec<_> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        names.sort();
        assert_eq!(names.len(), 3);
        bytes.push(names.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(bytes[0], bytes[1], "same seed must write identical PNGs");
}

#[test]
fn train_is_seed_deterministic_at_the_file_level() {
    let p = pipeline();
    let ckpt_a = train_small(&p, "vrae", "a.ckpt", 7);
    let ckpt_b = train_small(&p, "vrae", "b.ckpt", 7);
    assert_eq!(std::fs::read(&ckpt_a).unwrap(), std::fs::read(&ckpt_b).unwrap());
    assert_eq!(
        std::fs::read(ckpt_a.with_extension("loss.csv")).unwrap(),
        std::fs::read(ckpt_b.with_extension("loss.csv")).unwrap()
    );
    let log = std::fs::read_to_string(ckpt_a.with_extension("loss.csv")).unwrap();
    assert!(log.starts_with("epoch,train_mse,val_mse\n"), "{log}");
    assert_eq!(log.lines().count(), 3, "{log}");
}

#[test]
fn eval_produces_a_complete_row_even_untrained_and_is_reproducible() {
    let p = pipeline();
    let ckpt = train_small(&p, "vrae", "model.ckpt", 11);

    // Timing disabled: byte-reproducible report.
    let mut reports = Vec::new();
    for round in 0..2 {
        let report = p.root.join(format!("report{round}.csv"));
        let out = run(&[
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            p.data.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
            "--fps-iters",
            "0",
        ]);
        assert_success(&out);
        reports.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let text = String::from_utf8(reports[0].clone()).unwrap();
    assert!(text.starts_with("model,psnr_db,nmse,ssim,fps,params,threads,hardware\n"));
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("VRAE2,"), "{row}");
    assert_eq!(row.split(',').count(), 8, "complete row: {row}");

    // With timing enabled the fps column is positive.
    let timed = p.root.join("timed.csv");
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        p.data.to_str().unwrap(),
        "--report",
        timed.to_str().unwrap(),
        "--fps-iters",
        "2",
        "--fps-warmup",
        "1",
    ]);
    assert_success(&out);
    let text = std::fs::read_to_string(&timed).unwrap();
    let fps: f64 = text.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert!(fps > 0.0 && fps.is_finite());

    // A raw image folder (no manifest) also works.
    let raw_report = p.root.join("raw.csv");
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        p.root.join("images").to_str().unwrap(),
        "--report",
        raw_report.to_str().unwrap(),
        "--fps-iters",
        "0",
        "--limit",
        "2",
    ]);
    assert_success(&out);
}

#[test]
fn bench_reports_throughput() {
    let p = pipeline();
    let ckpt = train_small(&p, "vrae", "bench.ckpt", 3);
    let out = run(&["bench", "--ckpt", ckpt.to_str().unwrap(), "--iters", "3", "--warmup", "1"]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("model=VRAE2") && stdout.contains("fps="), "{stdout}");
}

#[test]
fn entropy_compares_two_checkpoints() {
    let p = pipeline();
    let vrae = train_small(&p, "vrae", "vrae.ckpt", 13);
    let ae = train_small(&p, "ae", "ae.ckpt", 13);
    let mut outputs = Vec::new();
    for round in 0..2 {
        let csv = p.root.join(format!("entropy{round}.csv"));
        let out = run(&[
            "entropy",
            "--ckpt-a",
            vrae.to_str().unwrap(),
            "--ckpt-b",
            ae.to_str().unwrap(),
            "--data",
            p.data.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
            "--probe",
            "2",
            "--svg",
            "--no-timestamp",
        ]);
        assert_success(&out);
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("model,block,avg_delta_h\n"), "{text}");
        assert!(text.contains("VRAE2,1,") && text.contains("AE2,1,"), "{text}");
        let svg = std::fs::read_to_string(csv.with_extension("svg")).unwrap();
        assert!(svg.contains("<svg") && !svg.contains("generated"));
        outputs.push((text, svg));
    }
    assert_eq!(outputs[0], outputs[1], "entropy outputs must be byte-reproducible");
}

const TABLE_FIXTURE: &str = "\
model,psnr_db,nmse,ssim,fps,params,threads,hardware
GAN,28.743,0.006,0.842,188,14590000,1,fixture
FB,27.093,0.008,0.831,35,25870000,1,fixture
AE2,27.787,0.007,0.840,411,375000,1,fixture
AE3,26.159,0.011,0.802,289,2770000,1,fixture
AE4,29.404,0.005,0.864,189,14590000,1,fixture
AE5,27.243,0.008,0.793,119,48430000,1,fixture
VRAE2,30.319,0.004,0.884,399,376000,1,fixture
VRAE3,31.052,0.003,0.898,194,2780000,1,fixture
VRAE4,30.246,0.004,0.880,90,14610000,1,fixture
VRAE5,30.032,0.003,0.860,45,48480000,1,fixture
";

#[test]
fn pareto_marks_the_published_front() {
    let tmp = tempfile::tempdir().unwrap();
    let metrics = tmp.path().join("metrics.csv");
    // fps sits in column 5 of the report schema.
    std::fs::write(&metrics, TABLE_FIXTURE).unwrap();
    let mut outputs = Vec::new();
    for round in 0..2 {
        let out_csv = tmp.path().join(format!("pareto{round}.csv"));
        let out = run(&[
            "pareto",
            "--metrics",
            metrics.to_str().unwrap(),
            "--x",
            "fps",
            "--y",
            "psnr",
            "--out",
            out_csv.to_str().unwrap(),
            "--svg",
            "--no-timestamp",
        ]);
        assert_success(&out);
        let text = std::fs::read_to_string(&out_csv).unwrap();
        let on_front: Vec<&str> = text
            .lines()
            .skip(1)
            .filter(|l| l.ends_with(",true"))
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(on_front, vec!["AE2", "VRAE2", "VRAE3"], "{text}");
        let svg = std::fs::read_to_string(out_csv.with_extension("svg")).unwrap();
        outputs.push((text, svg));
    }
    assert_eq!(outputs[0], outputs[1], "pareto outputs must be byte-reproducible");

    // The other quality orientations parse and run on the same input.
    for metric in ["ssim", "nmse"] {
        let out_csv = tmp.path().join(format!("pareto_{metric}.csv"));
        let out = run(&[
            "pareto",
            "--metrics",
            metrics.to_str().unwrap(),
            "--x",
            "fps",
            "--y",
            metric,
            "--out",
            out_csv.to_str().unwrap(),
        ]);
        assert_success(&out);
    }

    // Unsupported x axis is a runtime configuration error.
    let out = run(&[
        "pareto",
        "--metrics",
        metrics.to_str().unwrap(),
        "--x",
        "params",
        "--y",
        "psnr",
        "--out",
        tmp.path().join("nope.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_json_echoes_resolved_settings() {
    let p = pipeline();
    let run_json = std::fs::read_to_string(p.data.join("run.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&run_json).unwrap();
    assert_eq!(value["subcommand"], "prepare");
    assert_eq!(value["settings"]["seed"], 5);
    assert_eq!(value["settings"]["augment_to"], 10);
}

#[test]
fn eval_handles_an_untrained_checkpoint() {
    use vrae_core::model::{build_network, Arch, VraeConfig};
    use vrae_core::trainer::Checkpoint;
    let p = pipeline();
    let net = build_network(&VraeConfig::new(Arch::Ae, 2).with_input_hw(32, 32), 9).unwrap();
    let ckpt = p.root.join("untrained.ckpt");
    Checkpoint::from_network(&net, 9, 0, None).save(&ckpt).unwrap();
    let report = p.root.join("untrained.csv");
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        p.data.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--fps-iters",
        "0",
    ]);
    assert_success(&out);
    let text = std::fs::read_to_string(&report).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("AE2,"), "{row}");
    assert_eq!(row.split(',').count(), 8, "complete row even untrained: {row}");
}

#[test]
fn threads_flag_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let images = tmp.path().join("images");
    write_images(&images, 3);
    let out_dir = tmp.path().join("prepared");
    let out = vrae_bin()
        .env("VRAE_THREADS", "3")
        .args([
            "prepare",
            "--input",
            images.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--augment-to",
            "2",
        ])
        .output()
        .unwrap();
    assert_success(&out);
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(value["threads"], 3);
}
