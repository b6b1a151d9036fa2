//! Dataset preparation: folder ingestion, deterministic train/val/test
//! splits with rotation augmentation, and the synthetic clean-to-degraded
//! mapping (discrete additive noise followed by iterated 3x3 average
//! pooling) that imitates low-quality surveillance footage.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::avgpool_3x3_s1_reflect;
use crate::rng::Rng;
use crate::tensor::Tensor4;

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: String,
    pub split: Split,
    /// Rotation augmentation angle; `None` for original images.
    pub angle_deg: Option<f32>,
}

/// The deterministic dataset description: a pure function of the sorted
/// source file list and the seed. Record indices double as image ids for
/// the per-image degradation streams.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub source_count: usize,
    pub records: Vec<ManifestRecord>,
}

pub const AUGMENT_ANGLE_RANGE_DEG: f32 = 15.0;

impl DatasetManifest {
    /// Shuffles the sorted paths with the seed, splits 70/15/15 by the
    /// floor rule and grows the training set to exactly `augment_target`
    /// records by sampling (image, angle) pairs with angles uniform in
    /// [-15, +15] degrees excluding 0. Val/test are never augmented.
    pub fn build(sorted_paths: &[String], seed: u64, augment_target: usize) -> Result<Self> {
        if sorted_paths.is_empty() {
            return Err(Error::Empty("cannot build a manifest from zero images".into()));
        }
        let n = sorted_paths.len();
        let train_n = n * 7 / 10;
        let val_n = n * 15 / 100;
        if augment_target < train_n {
            return Err(Error::Config(format!(
                "augment target {augment_target} is below the train split size {train_n}"
            )));
        }
        let mut shuffled: Vec<&String> = sorted_paths.iter().collect();
        Rng::stream(seed, "split", 0).shuffle(&mut shuffled);

        let mut records = Vec::with_capacity(augment_target + (n - train_n));
        for path in &shuffled[..train_n] {
            records.push(ManifestRecord { path: (*path).clone(), split: Split::Train, angle_deg: None });
        }
        let mut rng = Rng::stream(seed, "augment", 0);
        for _ in train_n..augment_target {
            let source = shuffled[rng.below(train_n as u64) as usize].clone();
            let angle = loop {
                let a = (rng.next_f64() * 2.0 * AUGMENT_ANGLE_RANGE_DEG as f64
                    - AUGMENT_ANGLE_RANGE_DEG as f64) as f32;
                if a != 0.0 {
                    break a;
                }
            };
            records.push(ManifestRecord { path: source, split: Split::Train, angle_deg: Some(angle) });
        }
        for path in &shuffled[train_n..train_n + val_n] {
            records.push(ManifestRecord { path: (*path).clone(), split: Split::Val, angle_deg: None });
        }
        for path in &shuffled[train_n + val_n..] {
            records.push(ManifestRecord { path: (*path).clone(), split: Split::Test, angle_deg: None });
        }
        Ok(DatasetManifest { seed, source_count: n, records })
    }

    /// Record ids (the degradation stream keys) plus records of one split.
    pub fn split_records(&self, split: Split) -> Vec<(usize, &ManifestRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,split,angle_deg\n");
        for r in &self.records {
            let angle = r.angle_deg.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.path, r.split, angle));
        }
        out
    }

    /// Parses the CSV form. The seed is not stored in the CSV (it lives in
    /// the run description next to it), so the caller supplies it.
    pub fn from_csv(text: &str, seed: u64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("path,split,angle_deg") => {}
            other => {
                return Err(Error::Format(format!(
                    "manifest header missing, got {other:?}"
                )))
            }
        }
        let mut records = Vec::new();
        let mut sources = 0usize;
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            // path may contain commas only if quoted paths were used; we
            // split from the right so plain POSIX paths always work.
            let mut parts = line.rsplitn(3, ',');
            let angle_str = parts.next().unwrap_or_default();
            let split_str = parts
                .next()
                .ok_or_else(|| Error::Format(format!("manifest line {} has too few fields", i + 2)))?;
            let path = parts
                .next()
                .ok_or_else(|| Error::Format(format!("manifest line {} has too few fields", i + 2)))?;
            let angle_deg = if angle_str.is_empty() {
                None
            } else {
                Some(angle_str.parse::<f32>().map_err(|e| {
                    Error::Format(format!("manifest line {}: bad angle: {e}", i + 2))
                })?)
            };
            if angle_deg.is_none() {
                sources += 1;
            }
            records.push(ManifestRecord { path: path.to_string(), split: split_str.parse()?, angle_deg });
        }
        if records.is_empty() {
            return Err(Error::Empty("manifest has no records".into()));
        }
        Ok(DatasetManifest { seed, source_count: sources, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, seed)
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Lexicographically sorted PNG/JPEG paths of a folder.
pub fn list_image_files(folder: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(folder)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            files.push(path.to_string_lossy().into_owned());
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no PNG/JPEG files in {}", folder.display())));
    }
    Ok(files)
}

/// Decodes one image, bilinearly resizes it to `target x target` and
/// normalizes to RGB floats in [0, 1], shaped (1, 3, target, target).
pub fn load_image_tensor(path: &Path, target: usize) -> Result<Tensor4> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?;
    let resized = image::imageops::resize(
        &img.to_rgb8(),
        target as u32,
        target as u32,
        image::imageops::FilterType::Triangle,
    );
    let mut data = vec![0.0f32; 3 * target * target];
    let plane = target * target;
    for (i, pixel) in resized.pixels().enumerate() {
        data[i] = pixel.0[0] as f32 / 255.0;
        data[plane + i] = pixel.0[1] as f32 / 255.0;
        data[2 * plane + i] = pixel.0[2] as f32 / 255.0;
    }
    Tensor4::new((1, 3, target, target), data)
}

/// Loads every decodable image of a folder in sorted order; undecodable
/// files are skipped with a warning on stderr.
pub fn ingest_folder(folder: &Path, target: usize) -> Result<(Vec<String>, Vec<Tensor4>)> {
    let files = list_image_files(folder)?;
    let mut kept = Vec::new();
    let mut tensors = Vec::new();
    for file in files {
        match load_image_tensor(Path::new(&file), target) {
            Ok(t) => {
                kept.push(file);
                tensors.push(t);
            }
            Err(e) => eprintln!("warning: skipping {file}: {e}"),
        }
    }
    if tensors.is_empty() {
        return Err(Error::Empty(format!(
            "no decodable images in {}",
            folder.display()
        )));
    }
    Ok((kept, tensors))
}

/// Writes a (1, 3, h, w) tensor in [0, 1] as an 8-bit PNG.
pub fn save_png(tensor: &Tensor4, path: &Path) -> Result<()> {
    let (n, c, h, w) = tensor.dims();
    if n != 1 || c != 3 {
        return Err(Error::Shape(format!("expected (1,3,h,w) image tensor, got {:?}", tensor.dims())));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (tensor.at(0, 0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                (tensor.at(0, 1, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                (tensor.at(0, 2, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Rotation augmentation
// ---------------------------------------------------------------------------

/// Reflects an out-of-range sampling coordinate back into [0, size-1]
/// (triangle wave with period 2*(size-1)).
fn reflect_coord(v: f32, size: usize) -> f32 {
    if size == 1 {
        return 0.0;
    }
    let period = 2.0 * (size as f32 - 1.0);
    let mut m = v.rem_euclid(period);
    if m > size as f32 - 1.0 {
        m = period - m;
    }
    m
}

/// Rotates around the image center with bilinear sampling and reflected
/// out-of-bounds reads.
pub fn rotate_bilinear_reflect(x: &Tensor4, angle_deg: f32) -> Tensor4 {
    let (n, c, h, w) = x.dims();
    let theta = (angle_deg as f64).to_radians();
    let (sin_t, cos_t) = (theta.sin() as f32, theta.cos() as f32);
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let mut out = Tensor4::zeros((n, c, h, w));
    for in_ in 0..n {
        for ic in 0..c {
            let src = x.plane(in_, ic);
            let dst = out.plane_mut(in_, ic);
            for r in 0..h {
                for ccol in 0..w {
                    // Inverse mapping: sample the source at the rotated position.
                    let dy = r as f32 - cy;
                    let dx = ccol as f32 - cx;
                    let sy = reflect_coord(cy + dy * cos_t - dx * sin_t, h);
                    let sx = reflect_coord(cx + dy * sin_t + dx * cos_t, w);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (fy, fx) = (sy - y0 as f32, sx - x0 as f32);
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[r * w + ccol] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Adds `scale * n`, n uniform over {0..levels-1}; shifts brightness up.
    Literal,
    /// Adds `scale * (n - (levels-1)/2)`, centered around zero.
    ZeroMean,
    Off,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::Literal => "literal",
            NoiseMode::ZeroMean => "zero-mean",
            NoiseMode::Off => "off",
        })
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(NoiseMode::Literal),
            "zero-mean" | "zero_mean" => Ok(NoiseMode::ZeroMean),
            "off" => Ok(NoiseMode::Off),
            other => Err(Error::Config(format!(
                "unknown noise mode '{other}', expected literal|zero-mean|off"
            ))),
        }
    }
}

/// The clean-to-degraded mapping: discrete noise, clamp to [0, 1], then
/// `pool_iterations` passes of the size-preserving 3x3 average pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationConfig {
    pub noise_mode: NoiseMode,
    pub noise_scale: f32,
    /// Number of discrete noise values; `10` gives support {0..9}.
    pub noise_levels: u32,
    pub pool_iterations: usize,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            noise_mode: NoiseMode::Literal,
            noise_scale: 0.1,
            noise_levels: 10,
            pool_iterations: 10,
            seed: 0,
        }
    }
}

/// Degrades one clean image (values in [0, 1]). The noise stream is
/// derived from `(config.seed, image_id)`, so results do not depend on
/// processing order. Output dims equal input dims; values stay in [0, 1].
pub fn degrade(clean: &Tensor4, config: &DegradationConfig, image_id: u64) -> Result<Tensor4> {
    let mut out = clean.clone();
    if config.noise_mode != NoiseMode::Off {
        let mut rng = Rng::stream(config.seed, "degrade", image_id);
        let center = (config.noise_levels - 1) as f32 / 2.0;
        for v in out.data_mut() {
            let n = rng.below(config.noise_levels as u64) as f32;
            let noise = match config.noise_mode {
                NoiseMode::Literal => config.noise_scale * n,
                NoiseMode::ZeroMean => config.noise_scale * (n - center),
                NoiseMode::Off => unreachable!(),
            };
            *v = (*v + noise).clamp(0.0, 1.0);
        }
    }
    for _ in 0..config.pool_iterations {
        out = avgpool_3x3_s1_reflect(&out)?;
    }
    Ok(out)
}

/// Loads, resizes, optionally rotates: the clean tensor of one manifest
/// record. A shared decode cache avoids re-reading augmented sources.
pub fn load_record_clean(
    record: &ManifestRecord,
    target: usize,
    cache: &mut HashMap<String, Tensor4>,
) -> Result<Tensor4> {
    let base = match cache.get(&record.path) {
        Some(t) => t.clone(),
        None => {
            let t = load_image_tensor(Path::new(&record.path), target)?;
            cache.insert(record.path.clone(), t.clone());
            t
        }
    };
    Ok(match record.angle_deg {
        Some(angle) => rotate_bilinear_reflect(&base, angle),
        None => base,
    })
}
