//! Diagnostics: feature-map entropy dynamics across encoder blocks and
//! Pareto-front extraction over quality/speed trade-offs.

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, VraeNetwork};
use crate::tensor::Tensor4;

pub const DEFAULT_ENTROPY_BINS: usize = 256;

/// Entropy bookkeeping for one instrumented point of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub layer_id: usize,
    pub block_id: usize,
    /// Number of instrumented layers inside the block.
    pub layer_count: usize,
    /// Feature dims (channels, height, width).
    pub dims: (usize, usize, usize),
    /// Histogram entropy in nats.
    pub entropy: f64,
}

/// Shannon entropy (nats) of a histogram over `bins` uniform cells
/// spanning [min, max] of the values. A degenerate tensor (min == max)
/// has zero entropy.
pub fn histogram_entropy(values: &[f32], bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("entropy of an empty tensor".into()));
    }
    if bins == 0 {
        return Err(Error::Config("entropy needs at least one bin".into()));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        let v = v as f64;
        min = min.min(v);
        max = max.max(v);
    }
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::Numeric("entropy of non-finite values".into()));
    }
    if min == max {
        return Ok(0.0);
    }
    let scale = bins as f64 / (max - min);
    let mut counts = vec![0u64; bins];
    for &v in values {
        let bin = (((v as f64 - min) * scale) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let total = values.len() as f64;
    let mut h = 0.0f64;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total;
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Entropy deltas between consecutive instrumented layers:
/// `dH_l = H(F_{l+1}) - H(F_l)`.
pub fn entropy_changes(entropies: &[f64]) -> Vec<f64> {
    entropies.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Closed-form proxy for the entropy change of one convolution:
/// `(h - p + 1) * (w - q + 1) * ln|c11|`, where `c11` is the top-left
/// kernel coefficient. Undefined (rejected) when |c11| is numerically
/// zero; callers exclude such layers from block averages.
pub fn proxy_entropy_change(h: usize, w: usize, p: usize, q: usize, c11: f64) -> Result<f64> {
    if h < p || w < q {
        return Err(Error::Shape(format!(
            "proxy needs feature dims {h}x{w} >= kernel {p}x{q}"
        )));
    }
    if c11.abs() <= 1e-12 {
        return Err(Error::Numeric(
            "proxy entropy change is undefined for a zero top-left coefficient".into(),
        ));
    }
    Ok(((h - p + 1) * (w - q + 1)) as f64 * c11.abs().ln())
}

/// Arithmetic mean of the entropy changes inside each block, in block
/// order. Rejects empty blocks.
pub fn block_average(blocks: &[Vec<f64>]) -> Result<Vec<f64>> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if b.is_empty() {
                Err(Error::Empty(format!("block {i} has no entropy changes")))
            } else {
                Ok(b.iter().sum::<f64>() / b.len() as f64)
            }
        })
        .collect()
}

/// One Fig.-2-style curve: the average entropy change per encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub model: String,
    /// One value per encoder block (stem, then each bottleneck stage).
    pub per_block: Vec<f64>,
}

/// Instruments an evaluation forward pass of `probe` and returns the
/// per-block entropy change: block i's value is
/// `H(stage_i output) - H(stage_{i-1} output)`, with the network input as
/// stage 0.
pub fn entropy_profile(net: &VraeNetwork, probe: &Tensor4, bins: usize) -> Result<EntropyProfile> {
    let (_, trace) = net.forward_eval_traced(probe)?;
    let records = trace_records(&trace, bins)?;
    let entropies: Vec<f64> = records.iter().map(|r| r.entropy).collect();
    Ok(EntropyProfile { model: net.label(), per_block: entropy_changes(&entropies) })
}

/// Feature records for the instrumented points of a trace: the input plus
/// every encoder stage output.
pub fn trace_records(trace: &ForwardTrace, bins: usize) -> Result<Vec<FeatureRecord>> {
    let mut records = Vec::with_capacity(trace.stage_outputs.len() + 1);
    let mut push = |block_id: usize, layer_id: usize, t: &Tensor4| -> Result<()> {
        let (_, c, h, w) = t.dims();
        records.push(FeatureRecord {
            layer_id,
            block_id,
            layer_count: 1,
            dims: (c, h, w),
            entropy: histogram_entropy(t.data(), bins)?,
        });
        Ok(())
    };
    push(0, 0, &trace.input)?;
    for (i, t) in trace.stage_outputs.iter().enumerate() {
        push(i + 1, i + 1, t)?;
    }
    Ok(records)
}

pub fn entropy_csv(profiles: &[EntropyProfile]) -> String {
    let mut out = String::from("model,block,avg_delta_h\n");
    for p in profiles {
        for (i, v) in p.per_block.iter().enumerate() {
            out.push_str(&format!("{},{},{v:.6}\n", p.model, i + 1));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Pareto analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityMetric {
    Psnr,
    Ssim,
    Nmse,
}

impl QualityMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            QualityMetric::Psnr => "psnr",
            QualityMetric::Ssim => "ssim",
            QualityMetric::Nmse => "nmse",
        }
    }

    /// Maps a raw metric value onto a maximize-me scale (NMSE is negated).
    pub fn oriented(&self, value: f64) -> f64 {
        match self {
            QualityMetric::Nmse => -value,
            _ => value,
        }
    }
}

impl std::str::FromStr for QualityMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(QualityMetric::Psnr),
            "ssim" => Ok(QualityMetric::Ssim),
            "nmse" => Ok(QualityMetric::Nmse),
            other => Err(Error::Config(format!(
                "unknown quality metric '{other}', expected psnr|ssim|nmse"
            ))),
        }
    }
}

/// One model in the (quality, speed) objective space. `quality` is the
/// raw metric value; orientation happens inside the front extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub label: String,
    pub quality: f64,
    pub fps: f64,
    pub params: usize,
}

/// `a` dominates `b` when it is at least as good in both oriented
/// objectives and strictly better in one.
fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 >= b.1 && (a.0 > b.0 || a.1 > b.1)
}

/// Flags the non-dominated points. Points with identical coordinates are
/// all retained (neither dominates the other).
pub fn pareto_flags(points: &[ParetoPoint], metric: QualityMetric) -> Vec<bool> {
    let oriented: Vec<(f64, f64)> =
        points.iter().map(|p| (metric.oriented(p.quality), p.fps)).collect();
    oriented
        .iter()
        .map(|&me| !oriented.iter().any(|&other| dominates(other, me)))
        .collect()
}

/// The non-dominated subset, sorted by fps descending.
pub fn pareto_front(points: &[ParetoPoint], metric: QualityMetric) -> Vec<ParetoPoint> {
    let flags = pareto_flags(points, metric);
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(p, _)| p.clone())
        .collect();
    front.sort_by(|a, b| b.fps.total_cmp(&a.fps));
    front
}

pub fn pareto_csv(points: &[ParetoPoint], metric: QualityMetric) -> String {
    let flags = pareto_flags(points, metric);
    let mut out = String::from("model,quality_metric,quality,fps,params,on_front\n");
    for (p, f) in points.iter().zip(&flags) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.label,
            metric.as_str(),
            p.quality,
            p.fps,
            p.params,
            f
        ));
    }
    out
}
