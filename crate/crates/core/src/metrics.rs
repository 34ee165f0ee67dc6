//! MSE, PSNR and SSIM over grayscale images, plus a PGM (P2/P5) reader.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} (L={2}) vs {3}x{4} (L={5})")]
    DimensionMismatch(usize, usize, u32, usize, usize, u32),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("malformed PGM: {0}")]
    Malformed(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major grayscale image with `levels` intensity levels (pixels in `0..levels`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    levels: u32,
    pixels: Vec<u32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, levels: u32, pixels: Vec<u32>) -> Result<Self, MetricsError> {
        if height == 0 || width == 0 {
            return Err(MetricsError::InvalidImage(format!("empty image {height}x{width}")));
        }
        if levels < 2 {
            return Err(MetricsError::InvalidImage(format!(
                "need at least 2 levels, got {levels}"
            )));
        }
        if pixels.len() != height * width {
            return Err(MetricsError::InvalidImage(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|&&p| p >= levels) {
            return Err(MetricsError::InvalidImage(format!("pixel {p} outside 0..{levels}")));
        }
        Ok(GrayImage {
            height,
            width,
            levels,
            pixels,
        })
    }

    pub fn from_rows(rows: &[&[u32]], levels: u32) -> Result<Self, MetricsError> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(MetricsError::InvalidImage("ragged rows".into()));
        }
        Self::new(rows.len(), width, levels, rows.concat())
    }

    pub fn filled(height: usize, width: usize, levels: u32, value: u32) -> Result<Self, MetricsError> {
        Self::new(height, width, levels, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.pixels[row * self.width + col]
    }
}

fn check_same(o: &GrayImage, g: &GrayImage) -> Result<(), MetricsError> {
    if (o.height, o.width, o.levels) != (g.height, g.width, g.levels) {
        return Err(MetricsError::DimensionMismatch(
            o.height, o.width, o.levels, g.height, g.width, g.levels,
        ));
    }
    Ok(())
}

pub fn mse(o: &GrayImage, g: &GrayImage) -> Result<f64, MetricsError> {
    check_same(o, g)?;
    let sum: u64 = o
        .pixels
        .iter()
        .zip(&g.pixels)
        .map(|(&a, &b)| {
            let d = a.abs_diff(b) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / o.pixels.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(o: &GrayImage, g: &GrayImage) -> Result<f64, MetricsError> {
    let e = mse(o, g)?;
    Ok(psnr_from_mse(e, o.levels))
}

pub fn psnr_from_mse(mse: f64, levels: u32) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    let peak = (levels - 1) as f64;
    10.0 * (peak * peak / mse).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Side of the square sliding window; `None` uses whole-image statistics.
    pub window: Option<usize>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            window: None,
        }
    }
}

impl SsimParams {
    pub fn c1(&self, levels: u32) -> f64 {
        (self.k1 * (levels - 1) as f64).powi(2)
    }

    pub fn c2(&self, levels: u32) -> f64 {
        (self.k2 * (levels - 1) as f64).powi(2)
    }
}

/// Means, population variances and covariance of two equally sized samples.
fn moments(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64, f64, f64) {
    let n = a.clone().count() as f64;
    let mu_a = a.clone().sum::<f64>() / n;
    let mu_b = b.clone().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    (mu_a, mu_b, va / n, vb / n, cov / n)
}

fn ssim_formula(mu_o: f64, mu_g: f64, var_o: f64, var_g: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mu_o * mu_g + c1) * (2.0 * cov + c2)) / ((mu_o * mu_o + mu_g * mu_g + c1) * (var_o + var_g + c2))
}

/// Structural similarity. With `params.window = None` the statistics are taken
/// over the whole image; otherwise the result is the mean over every fully
/// contained `w x w` window (stride 1).
pub fn ssim(o: &GrayImage, g: &GrayImage, params: &SsimParams) -> Result<f64, MetricsError> {
    check_same(o, g)?;
    let (c1, c2) = (params.c1(o.levels), params.c2(o.levels));
    let pix = |img: &GrayImage, r: usize, c: usize| img.get(r, c) as f64;
    match params.window {
        None => {
            let (mo, mg, vo, vg, cov) = moments(o.pixels.iter().map(|&p| p as f64), g.pixels.iter().map(|&p| p as f64));
            Ok(ssim_formula(mo, mg, vo, vg, cov, c1, c2))
        }
        Some(w) => {
            if w == 0 || w > o.height || w > o.width {
                return Err(MetricsError::InvalidImage(format!(
                    "window {w} does not fit a {}x{} image",
                    o.height, o.width
                )));
            }
            let mut total = 0.0;
            let mut count = 0usize;
            for r0 in 0..=o.height - w {
                for c0 in 0..=o.width - w {
                    let cells = (r0..r0 + w).flat_map(move |r| (c0..c0 + w).map(move |c| (r, c)));
                    let (mo, mg, vo, vg, cov) = moments(
                        cells.clone().map(|(r, c)| pix(o, r, c)),
                        cells.map(|(r, c)| pix(g, r, c)),
                    );
                    total += ssim_formula(mo, mg, vo, vg, cov, c1, c2);
                    count += 1;
                }
            }
            Ok(total / count as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    /// `None` encodes +infinity (identical images) in JSON.
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

impl MetricsReport {
    pub fn psnr(&self) -> f64 {
        self.psnr_db.unwrap_or(f64::INFINITY)
    }
}

pub fn compare(o: &GrayImage, g: &GrayImage, params: &SsimParams) -> Result<MetricsReport, MetricsError> {
    let e = mse(o, g)?;
    let p = psnr_from_mse(e, o.levels);
    Ok(MetricsReport {
        mse: e,
        psnr_db: p.is_finite().then_some(p),
        ssim: ssim(o, g, params)?,
    })
}

// ---- PGM --------------------------------------------------------------------

struct Header {
    binary: bool,
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, MetricsError> {
    let malformed = |m: &str| MetricsError::Malformed(m.to_string());
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(malformed("missing P2/P5 magic number")),
    };
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| malformed("header field out of range"))?;
    }
    // Exactly one whitespace byte separates the header from binary data.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) && (binary || pos < bytes.len()) {
        return Err(malformed("missing whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed("maxval must lie in 1..=65535"));
    }
    Ok(Header {
        binary,
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_start: pos + 1,
    })
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, MetricsError> {
    let h = parse_header(bytes)?;
    let count = h.width * h.height;
    let data = bytes.get(h.data_start..).unwrap_or(&[]);
    let pixels: Vec<u32> = if h.binary {
        let bpp = if h.maxval > 255 { 2 } else { 1 };
        if data.len() < count * bpp {
            return Err(MetricsError::Malformed(format!(
                "expected {} bytes of pixel data, found {}",
                count * bpp,
                data.len()
            )));
        }
        if bpp == 1 {
            data[..count].iter().map(|&b| b as u32).collect()
        } else {
            data[..2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                .collect()
        }
    } else {
        let text = std::str::from_utf8(data).map_err(|_| MetricsError::Malformed("non-ASCII pixel data".into()))?;
        let values: Vec<u32> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_ascii_whitespace)
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| MetricsError::Malformed(format!("bad pixel value `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() < count {
            return Err(MetricsError::Malformed(format!(
                "expected {count} pixel values, found {}",
                values.len()
            )));
        }
        values.into_iter().take(count).collect()
    };
    if let Some(p) = pixels.iter().find(|&&p| p > h.maxval) {
        return Err(MetricsError::Malformed(format!(
            "pixel {p} exceeds maxval {}",
            h.maxval
        )));
    }
    GrayImage::new(h.height, h.width, h.maxval + 1, pixels)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, MetricsError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pgm(&bytes)
}

/// Binary (P5) encoding.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let maxval = img.levels - 1;
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    for &p in &img.pixels {
        if maxval > 255 {
            out.extend_from_slice(&(p as u16).to_be_bytes());
        } else {
            out.push(p as u8);
        }
    }
    out
}
