//! Labeled image collections: a synthetic generator standing in for a real
//! SAR corpus, and `path,label` manifests for data on disk.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{read_image, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, split: Split) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::Validation(format!(
                "label {} outside [0, {num_classes})",
                s.label
            )));
        }
        Ok(Self {
            samples,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Deterministic per-class split: the last `test_fraction` of each class
    /// (in sample order) goes to the test set.
    pub fn split(&self, test_fraction: f64) -> (Dataset, Dataset) {
        let mut per_class = vec![0usize; self.num_classes];
        for s in &self.samples {
            per_class[s.label] += 1;
        }
        let n_train: Vec<usize> = per_class
            .iter()
            .map(|&n| n - ((n as f64 * test_fraction).round() as usize).min(n))
            .collect();
        let mut seen = vec![0usize; self.num_classes];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for s in &self.samples {
            let k = &mut seen[s.label];
            if *k < n_train[s.label] {
                train.push(s.clone());
            } else {
                test.push(s.clone());
            }
            *k += 1;
        }
        (
            Dataset {
                samples: train,
                num_classes: self.num_classes,
                split: Split::Train,
            },
            Dataset {
                samples: test,
                num_classes: self.num_classes,
                split: Split::Test,
            },
        )
    }
}

/// Shape classes available to the synthetic generator, in label order.
pub const TEMPLATES: [&str; 6] = ["bar", "cross", "blob", "ring", "ell", "tee"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub width: usize,
    pub height: usize,
    pub foreground_fraction: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 100,
            width: 32,
            height: 32,
            foreground_fraction: 0.08,
            noise_level: 0.02,
            seed: 7,
        }
    }
}

/// Generates `num_classes × samples_per_class` images. Each class is a bright
/// shape template at a random 90° rotation and small random offset, on a
/// background of uniform noise in `[0, noise_level)`. Samples are interleaved
/// by class and each one draws from its own seed, so generation is parallel
/// and deterministic.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.num_classes == 0 || cfg.num_classes > TEMPLATES.len() {
        return Err(Error::Config(format!(
            "{} classes requested; the generator has {} templates",
            cfg.num_classes,
            TEMPLATES.len()
        )));
    }
    if !(cfg.foreground_fraction > 0.0 && cfg.foreground_fraction < 1.0) {
        return Err(Error::Config(
            "foreground_fraction must lie in (0, 1)".into(),
        ));
    }
    if !(cfg.noise_level >= 0.0 && cfg.noise_level.is_finite()) {
        return Err(Error::Config("noise_level must be >= 0".into()));
    }
    if cfg.width < 4 || cfg.height < 4 {
        return Err(Error::Config(
            "synthetic images must be at least 4x4".into(),
        ));
    }
    let area = cfg.foreground_fraction * (cfg.width * cfg.height) as f64;
    if area < 4.0 {
        return Err(Error::Config("foreground area under 4 pixels".into()));
    }
    let n = cfg.num_classes * cfg.samples_per_class;
    let samples = (0..n)
        .into_par_iter()
        .map(|k| {
            let label = k % cfg.num_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, k as u64));
            Sample {
                image: render(cfg, label, area, &mut rng),
                label,
            }
        })
        .collect();
    Dataset::new(samples, cfg.num_classes, Split::All)
}

fn sample_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Canonical-orientation mask as a list of `(x, y)` offsets.
fn template(label: usize, area: f64) -> Vec<(i64, i64)> {
    let rect = |x0: i64, y0: i64, w: i64, h: i64| {
        (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| (x, y)))
    };
    let mut cells: Vec<(i64, i64)> = match TEMPLATES[label] {
        "bar" => {
            let t = ((area / 5.0).sqrt().round() as i64).max(1);
            let len = ((area / t as f64).round() as i64).max(t + 1);
            rect(0, 0, len, t).collect()
        }
        "cross" | "ell" | "tee" => {
            let t = ((area / 20.0).sqrt().round() as i64).max(1);
            let len = (((area + (t * t) as f64) / (2 * t) as f64).round() as i64).max(t + 2);
            let mid = (len - t) / 2;
            match TEMPLATES[label] {
                "cross" => rect(0, mid, len, t).chain(rect(mid, 0, t, len)).collect(),
                "ell" => rect(0, len - t, len, t).chain(rect(0, 0, t, len)).collect(),
                _ => rect(0, 0, len, t).chain(rect(mid, 0, t, len)).collect(),
            }
        }
        "blob" => {
            let r = (area / std::f64::consts::PI).sqrt();
            let ri = r.ceil() as i64;
            (-ri..=ri)
                .flat_map(|y| (-ri..=ri).map(move |x| (x, y)))
                .filter(|&(x, y)| ((x * x + y * y) as f64) <= r * r)
                .collect()
        }
        _ => {
            let t = ((area.sqrt() / 9.0).round() as i64).max(1);
            let side =
                (((area + (4 * t * t) as f64) / (4 * t) as f64).round() as i64).max(2 * t + 1);
            rect(0, 0, side, side)
                .filter(|&(x, y)| x < t || y < t || x >= side - t || y >= side - t)
                .collect()
        }
    };
    cells.sort_unstable();
    cells.dedup();
    cells
}

fn render(cfg: &SynthConfig, label: usize, area: f64, rng: &mut ChaCha8Rng) -> Image {
    let (w, h) = (cfg.width as i64, cfg.height as i64);
    let quarter_turns = rng.gen_range(0..4);
    let mut cells = template(label, area);
    for _ in 0..quarter_turns {
        for c in &mut cells {
            *c = (-c.1, c.0);
        }
    }
    let min_x = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let max_x = cells.iter().map(|c| c.0).max().unwrap_or(0);
    let min_y = cells.iter().map(|c| c.1).min().unwrap_or(0);
    let max_y = cells.iter().map(|c| c.1).max().unwrap_or(0);
    let (bw, bh) = (max_x - min_x + 1, max_y - min_y + 1);
    let jitter = (cfg.width.min(cfg.height) as i64 / 10).max(1);
    let dx = rng.gen_range(-jitter..=jitter);
    let dy = rng.gen_range(-jitter..=jitter);
    let x0 = ((w - bw) / 2 + dx).clamp(0, (w - bw).max(0));
    let y0 = ((h - bh) / 2 + dy).clamp(0, (h - bh).max(0));

    let mut pixels: Vec<f32> = if cfg.noise_level > 0.0 {
        (0..w * h)
            .map(|_| rng.gen_range(0.0..cfg.noise_level) as f32)
            .collect()
    } else {
        vec![0.0; (w * h) as usize]
    };
    let base: f64 = rng.gen_range(0.8..1.6);
    for (cx, cy) in cells {
        let (x, y) = (cx - min_x + x0, cy - min_y + y0);
        if (0..w).contains(&x) && (0..h).contains(&y) {
            pixels[(y * w + x) as usize] = (base * rng.gen_range(0.85..1.15)) as f32;
        }
    }
    Image {
        width: cfg.width,
        height: cfg.height,
        pixels,
    }
}

/// Reads a `path,label` manifest. Relative paths resolve against the
/// manifest's directory; blank lines, `#` comments and a leading
/// `path,label` header are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (out.is_empty() && line == "path,label") {
            continue;
        }
        let (p, label) = line.rsplit_once(',').ok_or_else(|| {
            Error::Format(format!("manifest line {}: expected path,label", i + 1))
        })?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("manifest line {}: bad label {label:?}", i + 1)))?;
        let p = PathBuf::from(p.trim());
        out.push((if p.is_absolute() { p } else { base.join(p) }, label));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[(String, usize)]) -> Result<()> {
    let mut text = String::from("path,label\n");
    for (p, label) in entries {
        text.push_str(&format!("{p},{label}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads every image named in a manifest.
pub fn load_dataset(manifest: &Path, num_classes: usize, split: Split) -> Result<Dataset> {
    let entries = read_manifest(manifest)?;
    let samples = entries
        .iter()
        .map(|(p, label)| {
            Ok(Sample {
                image: read_image(p)?,
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, num_classes, split)
}
