//! RGB image containers with PNG and PFM I/O.

use std::io::Write;
use std::path::Path;

use image::ImageEncoder;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Decode { path: String, msg: String },
    #[error("unsupported image extension for {0}")]
    Extension(String),
}

/// Row-major linear RGB image, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let pixels = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, pixels }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Planar `[3, H, W]` data.
    pub fn planar(&self) -> Vec<f64> {
        let n = self.pixels.len();
        let mut out = vec![0.0; 3 * n];
        for (i, p) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                out[c * n + i] = p[c];
            }
        }
        out
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn decode_err(path: &Path, msg: impl ToString) -> ImageError {
    ImageError::Decode {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

/// Reads `.png` or `.pfm` by extension.
pub fn read_image(path: &Path) -> Result<RgbImage, ImageError> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => read_png(path),
        Some("pfm") => read_pfm(path),
        _ => Err(ImageError::Extension(path.display().to_string())),
    }
}

pub fn write_image(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => write_png(img, path),
        Some("pfm") => write_pfm(img, path),
        _ => Err(ImageError::Extension(path.display().to_string())),
    }
}

pub fn read_png(path: &Path) -> Result<RgbImage, ImageError> {
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => io_err(path, io),
        other => decode_err(path, other),
    })?;
    let rgb = dynimg.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0.map(f64::from)).collect();
    Ok(RgbImage {
        width: w,
        height: h,
        pixels,
    })
}

/// 8-bit sRGB-agnostic PNG; values are clamped to [0, 1].
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&bytes, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding");
    out
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    std::fs::write(path, encode_png(img)).map_err(|e| io_err(path, e))
}

/// Portable float map: little-endian (negative scale), rows bottom to top.
pub fn encode_pfm(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels.len() * 12 + 32);
    write!(out, "PF\n{} {}\n-1.0\n", img.width, img.height).unwrap();
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for v in img.get(x, y) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_pfm(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    std::fs::write(path, encode_pfm(img)).map_err(|e| io_err(path, e))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RgbImage, String> {
    // Three whitespace-terminated header tokens, then raw floats.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(format!("bad magic {t}")),
    };
    let w: usize = tokens[1].parse().map_err(|_| "bad width")?;
    let h: usize = tokens[2].parse().map_err(|_| "bad height")?;
    let scale: f64 = tokens[3].parse().map_err(|_| "bad scale")?;
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    let data = bytes.get(pos..pos + need).ok_or("truncated data")?;
    let mut img = RgbImage::new(w, h);
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) } as f64;
        let (pix, c) = (k / channels, k % channels);
        let (x, y_up) = (pix % w, pix / w);
        let y = h - 1 - y_up;
        if channels == 1 {
            img.pixels[y * w + x] = [v; 3];
        } else {
            img.pixels[y * w + x][c] = v;
        }
    }
    Ok(img)
}

pub fn read_pfm(path: &Path) -> Result<RgbImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_pfm(&bytes).map_err(|m| decode_err(path, m))
}
