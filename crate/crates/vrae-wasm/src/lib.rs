//! Browser bindings for the interactive demo page: the synthetic
//! degradation pipeline with a live quality readout, the Pareto-front
//! explorer, and the convolution entropy-change proxy.
//!
//! Build with `wasm-pack build --target web` (or cargo +
//! `wasm-bindgen-cli`); `www/index.html` loads the generated module.

use wasm_bindgen::prelude::*;

use vrae_core::analysis::{pareto_csv, proxy_entropy_change, ParetoPoint, QualityMetric};
use vrae_core::data::{degrade, DegradationConfig, NoiseMode};
use vrae_core::metrics::{nmse, psnr, ssim, MetricsReport};
use vrae_core::svg::pareto_svg;
use vrae_core::tensor::Tensor4;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn rgba_to_tensor(rgba: &[u8], width: u32, height: u32) -> Result<Tensor4, JsValue> {
    let (w, h) = (width as usize, height as usize);
    if rgba.len() != 4 * w * h {
        return Err(js_err(format!("expected {} RGBA bytes, got {}", 4 * w * h, rgba.len())));
    }
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        data[i] = rgba[4 * i] as f32 / 255.0;
        data[plane + i] = rgba[4 * i + 1] as f32 / 255.0;
        data[2 * plane + i] = rgba[4 * i + 2] as f32 / 255.0;
    }
    Tensor4::new((1, 3, h, w), data).map_err(js_err)
}

fn tensor_to_rgba(t: &Tensor4) -> Vec<u8> {
    let (_, _, h, w) = t.dims();
    let plane = w * h;
    let mut rgba = vec![255u8; 4 * plane];
    for i in 0..plane {
        rgba[4 * i] = (t.data()[i].clamp(0.0, 1.0) * 255.0).round() as u8;
        rgba[4 * i + 1] = (t.data()[plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        rgba[4 * i + 2] = (t.data()[2 * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    rgba
}

/// Degrades an RGBA image with the surveillance-footage pipeline
/// (discrete noise, clamp, iterated 3x3 average pooling) and returns the
/// degraded RGBA bytes.
#[wasm_bindgen]
pub fn degrade_image(
    rgba: &[u8],
    width: u32,
    height: u32,
    noise: &str,
    pool_iters: u32,
    seed: u64,
) -> Result<Vec<u8>, JsValue> {
    let clean = rgba_to_tensor(rgba, width, height)?;
    let config = DegradationConfig {
        noise_mode: noise.parse::<NoiseMode>().map_err(js_err)?,
        pool_iterations: pool_iters as usize,
        seed,
        ..DegradationConfig::default()
    };
    let degraded = degrade(&clean, &config, 0).map_err(js_err)?;
    Ok(tensor_to_rgba(&degraded))
}

/// PSNR / NMSE / SSIM between two same-sized RGBA images, as a JSON
/// object string.
#[wasm_bindgen]
pub fn quality_metrics(
    reference_rgba: &[u8],
    processed_rgba: &[u8],
    width: u32,
    height: u32,
) -> Result<String, JsValue> {
    let reference = rgba_to_tensor(reference_rgba, width, height)?;
    let processed = rgba_to_tensor(processed_rgba, width, height)?;
    let p = psnr(&processed, &reference).map_err(js_err)?;
    let n = nmse(&processed, &reference).map_err(js_err)?;
    let s = ssim(&processed, &reference).map_err(js_err)?;
    Ok(format!(
        "{{\"psnr_db\":{:.3},\"psnr_capped\":{},\"nmse\":{:.6},\"ssim\":{:.4}}}",
        p.db, p.capped, n, s
    ))
}

fn parse_report_points(csv: &str, metric: QualityMetric) -> Result<Vec<ParetoPoint>, JsValue> {
    let mut points = Vec::new();
    for line in csv.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("model,") {
            continue;
        }
        let report = MetricsReport::parse_csv_row(line).map_err(js_err)?;
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
        return Err(js_err("no data rows in the metrics CSV"));
    }
    Ok(points)
}

/// Renders the quality/FPS scatter with its Pareto front from a metrics
/// report CSV (`model,psnr_db,nmse,ssim,fps,params,threads,hardware`).
#[wasm_bindgen]
pub fn pareto_svg_from_csv(csv: &str, metric: &str) -> Result<String, JsValue> {
    let metric: QualityMetric = metric.parse().map_err(js_err)?;
    let points = parse_report_points(csv, metric)?;
    Ok(pareto_svg(&points, metric, None))
}

/// The matching front table as CSV (`model,...,on_front`).
#[wasm_bindgen]
pub fn pareto_csv_from_csv(csv: &str, metric: &str) -> Result<String, JsValue> {
    let metric: QualityMetric = metric.parse().map_err(js_err)?;
    let points = parse_report_points(csv, metric)?;
    Ok(pareto_csv(&points, metric))
}

/// Closed-form entropy-change proxy of one convolution layer.
#[wasm_bindgen]
pub fn entropy_proxy(h: u32, w: u32, p: u32, q: u32, c11: f64) -> Result<f64, JsValue> {
    proxy_entropy_change(h as usize, w as usize, p as usize, q as usize, c11).map_err(js_err)
}

/// Curve of the proxy over |c11| in [lo, hi] as a standalone SVG.
#[wasm_bindgen]
pub fn entropy_proxy_curve_svg(
    h: u32,
    w: u32,
    p: u32,
    q: u32,
    lo: f64,
    hi: f64,
    marker_c11: f64,
) -> Result<String, JsValue> {
    if !(lo > 0.0 && hi > lo) {
        return Err(js_err("need 0 < lo < hi for the |c11| range"));
    }
    let samples = 200usize;
    let mut pts = Vec::with_capacity(samples);
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for i in 0..samples {
        // Log-spaced so the small-|c11| blow-up stays readable.
        let t = i as f64 / (samples - 1) as f64;
        let c = lo * (hi / lo).powf(t);
        let v = proxy_entropy_change(h as usize, w as usize, p as usize, q as usize, c)
            .map_err(js_err)?;
        min_v = min_v.min(v);
        max_v = max_v.max(v);
        pts.push((c, v));
    }
    if min_v == max_v {
        min_v -= 1.0;
        max_v += 1.0;
    }
    let (width, height, margin) = (640.0f64, 360.0f64, 48.0f64);
    let x_of = |c: f64| margin + (c / lo).ln() / (hi / lo).ln() * (width - 2.0 * margin);
    let y_of = |v: f64| height - margin - (v - min_v) / (max_v - min_v) * (height - 2.0 * margin);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    );
    svg.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        y0 = height - margin,
        x1 = width - margin,
    ));
    if min_v < 0.0 && max_v > 0.0 {
        svg.push_str(&format!(
            "<line x1=\"{margin}\" y1=\"{y:.1}\" x2=\"{x1}\" y2=\"{y:.1}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n",
            y = y_of(0.0),
            x1 = width - margin
        ));
    }
    let path: Vec<String> =
        pts.iter().map(|&(c, v)| format!("{:.1},{:.1}", x_of(c), y_of(v))).collect();
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
        path.join(" ")
    ));
    if marker_c11 >= lo && marker_c11 <= hi {
        if let Ok(v) =
            proxy_entropy_change(h as usize, w as usize, p as usize, q as usize, marker_c11)
        {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"crimson\"/>\n",
                x_of(marker_c11),
                y_of(v)
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"middle\">|c11| (log scale)</text>\n\
         <text x=\"14\" y=\"{ym}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {ym})\">entropy change (nats)</text>\n</svg>\n",
        x = width / 2.0,
        y = height - 10.0,
        ym = height / 2.0,
    ));
    Ok(svg)
}
