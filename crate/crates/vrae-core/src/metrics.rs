//! Restoration quality metrics (PSNR, NMSE, SSIM) and throughput
//! measurement, aggregated into per-model report rows.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::VraeNetwork;
use crate::tensor::Tensor4;
use crate::threading;

/// Sentinel reported when a pair is exactly identical (MSE 0).
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrScore {
    pub db: f64,
    /// True when the pair was identical and the sentinel cap was used.
    pub capped: bool,
}

fn image_mse(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "metric between {:?} and {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("metric over an empty tensor".into()));
    }
    let mut acc = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p as f64 - t as f64;
        acc += d * d;
    }
    Ok(acc / pred.len() as f64)
}

/// Peak signal-to-noise ratio in dB for one image pair in [0, 1]:
/// `10*log10(1/MSE)`, capped at 99 dB for identical pairs.
pub fn psnr(pred: &Tensor4, target: &Tensor4) -> Result<PsnrScore> {
    let mse = image_mse(pred, target)?;
    if mse == 0.0 {
        return Ok(PsnrScore { db: PSNR_CAP_DB, capped: true });
    }
    Ok(PsnrScore { db: 10.0 * (1.0 / mse).log10(), capped: false })
}

/// Normalized mean squared error for one image pair: error energy over
/// target energy. An all-zero target is rejected.
pub fn nmse(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "metric between {:?} and {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let mut err = 0.0f64;
    let mut sig = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p as f64 - t as f64;
        err += d * d;
        sig += t as f64 * t as f64;
    }
    if sig == 0.0 {
        return Err(Error::Empty("nmse against an all-zero target".into()));
    }
    Ok(err / sig)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for r in 0..SSIM_WINDOW {
        for c in 0..SSIM_WINDOW {
            let d2 = (r as f64 - center).powi(2) + (c as f64 - center).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[r * SSIM_WINDOW + c] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM for one image pair in [0, 1]: 11x11 Gaussian window
/// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1. The score is computed
/// per channel over all fully-valid window positions and averaged.
pub fn ssim(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "metric between {:?} and {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let (n, c, h, w) = pred.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for in_ in 0..n {
        for ic in 0..c {
            let a = pred.plane(in_, ic);
            let b = target.plane(in_, ic);
            for r0 in 0..=(h - SSIM_WINDOW) {
                for c0 in 0..=(w - SSIM_WINDOW) {
                    let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for wr in 0..SSIM_WINDOW {
                        let row = (r0 + wr) * w + c0;
                        for wc in 0..SSIM_WINDOW {
                            let g = window[wr * SSIM_WINDOW + wc];
                            let x = a[row + wc] as f64;
                            let y = b[row + wc] as f64;
                            mx += g * x;
                            my += g * y;
                            mxx += g * x * x;
                            myy += g * y * y;
                            mxy += g * x * y;
                        }
                    }
                    let vx = mxx - mx * mx;
                    let vy = myy - my * my;
                    let cov = mxy - mx * my;
                    let score = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    acc += score;
                    count += 1;
                }
            }
        }
    }
    Ok(acc / count as f64)
}

/// Median single-image forward latency, inverted. Runs in eval mode on a
/// mid-gray probe image of the network's configured input dims.
pub fn measure_fps(net: &VraeNetwork, warmup: usize, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Config("fps measurement needs at least one iteration".into()));
    }
    let (c, h, w) = net.config.input;
    let probe = Tensor4::filled((1, c, h, w), 0.5);
    for _ in 0..warmup {
        net.forward_eval(&probe)?;
    }
    let mut seconds: Vec<f64> = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        net.forward_eval(&probe)?;
        seconds.push(t0.elapsed().as_secs_f64());
    }
    seconds.sort_by(|a, b| a.total_cmp(b));
    let median = if iters % 2 == 1 {
        seconds[iters / 2]
    } else {
        0.5 * (seconds[iters / 2 - 1] + seconds[iters / 2])
    };
    if median <= 0.0 {
        return Err(Error::Numeric("zero median latency".into()));
    }
    Ok(1.0 / median)
}

pub fn hardware_string() -> String {
    format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

/// One Table-style report row for a model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub psnr_db: f64,
    pub nmse: f64,
    pub ssim: f64,
    pub fps: f64,
    pub params: usize,
    pub threads: usize,
    pub hardware: String,
    /// True when any evaluated pair hit the identical-pair PSNR cap.
    pub psnr_capped: bool,
}

pub const REPORT_CSV_HEADER: &str = "model,psnr_db,nmse,ssim,fps,params,threads,hardware";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.6},{:.4},{:.3},{},{},{}",
            self.model,
            self.psnr_db,
            self.nmse,
            self.ssim,
            self.fps,
            self.params,
            self.threads,
            self.hardware
        )
    }

    /// Parses a report row (used by the Pareto command).
    pub fn parse_csv_row(line: &str) -> Result<MetricsReport> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Format(format!(
                "report row needs 8 fields, got {}: {line}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number '{}' in report row: {e}", fields[i])))
        };
        Ok(MetricsReport {
            model: fields[0].trim().to_string(),
            psnr_db: num(1)?,
            nmse: num(2)?,
            ssim: num(3)?,
            fps: num(4)?,
            params: num(5)? as usize,
            threads: num(6)? as usize,
            hardware: fields[7].trim().to_string(),
            psnr_capped: false,
        })
    }
}

/// Mean quality metrics of a model over (clean, degraded) pairs. The
/// prediction is clamped to [0, 1] before the metrics (evaluation
/// context). Pairs whose target is all-zero are excluded from NMSE with a
/// warning.
pub fn restoration_quality(
    net: &VraeNetwork,
    pairs: &[(Tensor4, Tensor4)],
) -> Result<(f64, f64, f64, bool)> {
    if pairs.is_empty() {
        return Err(Error::Empty("no evaluation pairs".into()));
    }
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut nmse_sum = 0.0;
    let mut nmse_count = 0usize;
    let mut capped = false;
    for (clean, degraded) in pairs {
        let pred = net.forward_eval(degraded)?.clamp01();
        let p = psnr(&pred, clean)?;
        capped |= p.capped;
        psnr_sum += p.db;
        ssim_sum += ssim(&pred, clean)?;
        match nmse(&pred, clean) {
            Ok(v) => {
                nmse_sum += v;
                nmse_count += 1;
            }
            Err(e) => eprintln!("warning: excluding image from nmse: {e}"),
        }
    }
    let n = pairs.len() as f64;
    let nmse_mean = if nmse_count > 0 { nmse_sum / nmse_count as f64 } else { f64::NAN };
    Ok((psnr_sum / n, nmse_mean, ssim_sum / n, capped))
}

/// Full report row for a model over evaluation pairs; `fps_iters == 0`
/// skips the timing pass (fps is reported as 0) so the row stays
/// byte-reproducible.
pub fn evaluate_model(
    net: &VraeNetwork,
    pairs: &[(Tensor4, Tensor4)],
    fps_warmup: usize,
    fps_iters: usize,
) -> Result<MetricsReport> {
    let (psnr_db, nmse, ssim, psnr_capped) = restoration_quality(net, pairs)?;
    let fps = if fps_iters == 0 { 0.0 } else { measure_fps(net, fps_warmup, fps_iters)? };
    Ok(MetricsReport {
        model: net.label(),
        psnr_db,
        nmse,
        ssim,
        fps,
        params: net.count_parameters().total,
        threads: threading::threads(),
        hardware: hardware_string(),
        psnr_capped,
    })
}
