//! Grayscale magnitude images and their on-disk formats.
//!
//! Two formats are understood: plain-text CSV (one image row per line,
//! comma-separated reals) and a raw 8/16-bit little-endian raster whose
//! dimensions, bit depth and scale factor live in a small text sidecar.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major magnitudes.
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::Validation(format!(
                "pixel {i} has value {v}; magnitudes must be non-negative"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Divides every pixel by the image maximum (no-op on all-zero images).
    pub fn normalized(&self) -> Self {
        let max = self.pixels.iter().copied().fold(0.0f32, f32::max);
        if max <= 0.0 {
            return self.clone();
        }
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p / max).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.pixels.len() * 8);
        for row in self.pixels.chunks(self.width.max(1)) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageFormat {
    Csv,
    /// Little-endian unsigned samples; magnitude = sample × scale.
    Raster {
        bit_depth: u8,
        scale: f32,
    },
}

/// Decodes `bytes` into an image of the declared size.
pub fn load_image(bytes: &[u8], width: usize, height: usize, format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Csv => {
            let img = parse_csv(bytes)?;
            if img.width != width || img.height != height {
                return Err(Error::Format(format!(
                    "expected {width}x{height} image, found {}x{}",
                    img.width, img.height
                )));
            }
            Ok(img)
        }
        ImageFormat::Raster { bit_depth, scale } => {
            let bytes_per = match bit_depth {
                8 => 1,
                16 => 2,
                other => return Err(Error::Format(format!("unsupported bit depth {other}"))),
            };
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::Validation(format!(
                    "raster scale {scale} must be >= 0"
                )));
            }
            let expected = width * height * bytes_per;
            if bytes.len() != expected || expected == 0 {
                return Err(Error::Format(format!(
                    "raster has {} bytes, expected {expected}",
                    bytes.len()
                )));
            }
            let pixels = if bytes_per == 1 {
                bytes.iter().map(|&b| b as f32 * scale).collect()
            } else {
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 * scale)
                    .collect()
            };
            Image::new(width, height, pixels)
        }
    }
}

/// Parses a CSV image, inferring its dimensions from the text.
pub fn parse_csv(bytes: &[u8]) -> Result<Image> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let mut width = None;
    let mut pixels = Vec::new();
    let mut height = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = pixels.len();
        for field in line.split(',') {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: cannot parse {field:?}")))?;
            pixels.push(v);
        }
        let w = pixels.len() - before;
        match width {
            None => width = Some(w),
            Some(prev) if prev != w => {
                return Err(Error::Format(format!(
                    "row {row} has {w} columns, expected {prev}"
                )))
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format("empty image file".into()))?;
    Image::new(width, height, pixels)
}

/// Text sidecar describing a raw raster: `key = value` lines for `width`,
/// `height`, `bit_depth` and `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub scale: f32,
}

impl RasterHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let (mut w, mut h, mut d, mut s) = (None, None, None, None);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            let value = value.trim();
            let bad = || Error::Format(format!("bad value for {}: {value:?}", key.trim()));
            match key.trim() {
                "width" => w = Some(value.parse().map_err(|_| bad())?),
                "height" => h = Some(value.parse().map_err(|_| bad())?),
                "bit_depth" | "bit-depth" => d = Some(value.parse().map_err(|_| bad())?),
                "scale" => s = Some(value.parse().map_err(|_| bad())?),
                other => return Err(Error::Format(format!("unknown header key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("raster header missing {k}"));
        Ok(Self {
            width: w.ok_or_else(|| missing("width"))?,
            height: h.ok_or_else(|| missing("height"))?,
            bit_depth: d.ok_or_else(|| missing("bit_depth"))?,
            scale: s.ok_or_else(|| missing("scale"))?,
        })
    }

    pub fn format(&self) -> ImageFormat {
        ImageFormat::Raster {
            bit_depth: self.bit_depth,
            scale: self.scale,
        }
    }
}

/// Reads an image from disk. `.csv` files are parsed as text; anything else is
/// treated as a raster with a sidecar at `<path>.hdr`.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        return parse_csv(&bytes);
    }
    let mut hdr_path = path.as_os_str().to_owned();
    hdr_path.push(".hdr");
    let header = RasterHeader::parse(&std::fs::read_to_string(&hdr_path)?)?;
    load_image(&bytes, header.width, header.height, header.format())
}
