//! Image ingest and preprocessing, and Poisson rate coding for the input layer.
//!
//! The pipeline for every reference and query image is the same:
//! load (8-bit, luma) -> bilinear resize -> per-patch z-scoring -> affine map
//! to `[0, 1]` -> homogeneous Poisson spike trains at `intensity * max_rate`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grayscale image with row-major `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl ImageGray {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image dimensions must be non-zero"));
        }
        if pixels.len() != width * height {
            return Err(Error::config(format!(
                "pixel buffer has {} values, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("image contains non-finite intensities"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Build from 8-bit intensities, scaled to `[0, 1]`.
    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Quantize to 8 bits, clamping to `[0, 1]` first.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Decode an image file as 8-bit grayscale. Color inputs are converted with
/// Rec.601 luma weights.
pub fn load_gray(path: &Path) -> Result<ImageGray> {
    let decoded = image::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<u8> = match decoded {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect(),
    };
    ImageGray::from_u8(w, h, &data).map_err(|e| Error::ingest(path, e.to_string()))
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &ImageGray, width: usize, height: usize) -> Result<ImageGray> {
    if width == 0 || height == 0 {
        return Err(Error::config("resize target must be non-zero"));
    }
    if img.width == width && img.height == height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            let top = f64::from(img.get(x0, y0)) * (1.0 - wx) + f64::from(img.get(x1, y0)) * wx;
            let bottom = f64::from(img.get(x0, y1)) * (1.0 - wx) + f64::from(img.get(x1, y1)) * wx;
            out.push((top * (1.0 - wy) + bottom * wy) as f32);
        }
    }
    ImageGray::new(width, height, out)
}

pub fn load_and_resize(path: &Path, target: (usize, usize)) -> Result<ImageGray> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::config("resize target must be non-zero"));
    }
    let img = load_gray(path)?;
    resize_bilinear(&img, target.0, target.1)
}

/// Write an image as binary PGM (P5), quantized to 8 bits.
pub fn save_pgm(img: &ImageGray, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(file, "P5\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    file.write_all(&img.to_u8()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchNormConfig {
    pub patch_width: usize,
    pub patch_height: usize,
    pub epsilon: f64,
}

impl Default for PatchNormConfig {
    fn default() -> Self {
        Self {
            patch_width: 7,
            patch_height: 7,
            epsilon: 1e-6,
        }
    }
}

impl PatchNormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_width == 0 || self.patch_height == 0 {
            return Err(Error::config("patch dimensions must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("patch normalization epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Standardize each non-overlapping patch independently (population std,
/// floored at `epsilon`). Zero-variance patches map to zero.
pub fn patch_normalize(img: &ImageGray, cfg: &PatchNormConfig) -> Result<ImageGray> {
    cfg.validate()?;
    let (pw, ph) = (cfg.patch_width, cfg.patch_height);
    if img.width % pw != 0 || img.height % ph != 0 {
        return Err(Error::config(format!(
            "{}x{} image is not divisible into {}x{} patches",
            img.width, img.height, pw, ph
        )));
    }
    let mut out = vec![0.0f32; img.len()];
    let n = (pw * ph) as f64;
    for py in (0..img.height).step_by(ph) {
        for px in (0..img.width).step_by(pw) {
            let coords = || (py..py + ph).flat_map(move |y| (px..px + pw).map(move |x| (x, y)));
            let mean = coords().map(|(x, y)| f64::from(img.get(x, y))).sum::<f64>() / n;
            let var = coords()
                .map(|(x, y)| (f64::from(img.get(x, y)) - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt().max(cfg.epsilon);
            for (x, y) in coords() {
                out[y * img.width + x] = ((f64::from(img.get(x, y)) - mean) / std) as f32;
            }
        }
    }
    ImageGray::new(img.width, img.height, out)
}

/// Resize plus patch normalization, applied identically to every image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub width: usize,
    pub height: usize,
    pub patch: PatchNormConfig,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            width: 28,
            height: 28,
            patch: PatchNormConfig::default(),
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("image width and height must be non-zero"));
        }
        self.patch.validate()?;
        if self.width % self.patch.patch_width != 0 || self.height % self.patch.patch_height != 0 {
            return Err(Error::config("image size must be a multiple of the patch size"));
        }
        Ok(())
    }

    pub fn input_count(&self) -> usize {
        self.width * self.height
    }

    pub fn preprocess(&self, img: &ImageGray) -> Result<ImageGray> {
        let resized = resize_bilinear(img, self.width, self.height)?;
        patch_normalize(&resized, &self.patch)
    }

    pub fn load(&self, path: &Path) -> Result<ImageGray> {
        let raw = load_gray(path)?;
        self.preprocess(&raw)
            .map_err(|e| Error::ingest(path, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    /// Rate in Hz for a normalized intensity of 1.0.
    pub max_rate: f64,
    pub presentation_ms: f64,
    pub rest_ms: f64,
    /// Added to `max_rate` on every re-presentation during training.
    pub retry_boost_rate: f64,
    /// Re-present when fewer excitatory spikes than this are elicited; 0 disables.
    pub min_output_spikes: u32,
    pub max_retries: u32,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            max_rate: 63.75,
            presentation_ms: 350.0,
            rest_ms: 150.0,
            retry_boost_rate: 32.0,
            min_output_spikes: 5,
            max_retries: 8,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rate > 0.0 && self.max_rate.is_finite()) {
            return Err(Error::config("encoding max_rate must be > 0"));
        }
        if !(self.presentation_ms > 0.0 && self.presentation_ms.is_finite()) {
            return Err(Error::config("presentation_ms must be > 0"));
        }
        if !(self.rest_ms >= 0.0 && self.rest_ms.is_finite()) {
            return Err(Error::config("rest_ms must be >= 0"));
        }
        if !(self.retry_boost_rate >= 0.0 && self.retry_boost_rate.is_finite()) {
            return Err(Error::config("retry_boost_rate must be >= 0"));
        }
        Ok(())
    }
}

/// Spike times (ms, ascending) for every input neuron over one presentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    duration_ms: f64,
    times: Vec<Vec<f64>>,
}

impl SpikeTrain {
    pub fn new(duration_ms: f64, times: Vec<Vec<f64>>) -> Result<Self> {
        for t in &times {
            if t.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::config("spike times must be sorted"));
            }
            if t.iter().any(|&s| !(0.0..duration_ms).contains(&s)) {
                return Err(Error::config("spike time outside presentation window"));
            }
        }
        Ok(Self { duration_ms, times })
    }

    pub fn silent(inputs: usize, duration_ms: f64) -> Self {
        Self {
            duration_ms,
            times: vec![Vec::new(); inputs],
        }
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration_ms
    }

    pub fn input_count(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self, input: usize) -> &[f64] {
        &self.times[input]
    }

    pub fn total_spikes(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// Spikes grouped by simulation step: `out[k]` lists inputs firing in
    /// `[k*dt, (k+1)*dt)`. An input appears once per spike.
    pub fn binned(&self, dt: f64) -> Vec<Vec<u32>> {
        let steps = (self.duration_ms / dt).round() as usize;
        let mut bins = vec![Vec::new(); steps];
        for (input, ts) in self.times.iter().enumerate() {
            for &t in ts {
                let k = ((t / dt).floor() as usize).min(steps.saturating_sub(1));
                bins[k].push(input as u32);
            }
        }
        for b in &mut bins {
            b.sort_unstable();
        }
        bins
    }
}

/// Map intensities affinely onto `[0, 1]` (min to 0, max to 1). A flat image
/// maps to all zeros.
pub fn unit_intensities(img: &ImageGray) -> Vec<f64> {
    let lo = img.pixels.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = img.pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = f64::from(hi) - f64::from(lo);
    if !(span > 0.0) {
        return vec![0.0; img.len()];
    }
    img.pixels
        .iter()
        .map(|&p| (f64::from(p) - f64::from(lo)) / span)
        .collect()
}

/// Homogeneous Poisson spike trains at the given per-input rates (Hz).
pub fn poisson_from_rates(rates_hz: &[f64], duration_ms: f64, seed: u64) -> SpikeTrain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = rates_hz
        .iter()
        .map(|&rate| {
            let mut ts = Vec::new();
            if rate > 0.0 {
                let isi = Exp::new(rate / 1000.0).expect("positive rate");
                let mut t = isi.sample(&mut rng);
                while t < duration_ms {
                    ts.push(t);
                    t += isi.sample(&mut rng);
                }
            }
            ts
        })
        .collect();
    SpikeTrain { duration_ms, times }
}

/// Encode a preprocessed image with rate `intensity * max_rate`.
pub fn poisson_encode(img: &ImageGray, cfg: &EncodingConfig, seed: u64) -> SpikeTrain {
    poisson_encode_at(img, cfg.max_rate, cfg.presentation_ms, seed)
}

pub fn poisson_encode_at(img: &ImageGray, max_rate: f64, duration_ms: f64, seed: u64) -> SpikeTrain {
    let rates: Vec<f64> = unit_intensities(img).iter().map(|v| v * max_rate).collect();
    poisson_from_rates(&rates, duration_ms, seed)
}

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What an encoded train is used for; keeps the seed streams apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedDomain {
    Train,
    Reference,
    Query,
    WeightInit,
    Synthetic,
}

/// Deterministic seed from `(global seed, domain, module, epoch, image, attempt)`.
/// Scheduling order never enters the derivation.
pub fn derive_seed(
    global: u64,
    domain: SeedDomain,
    module: u64,
    epoch: u64,
    image: u64,
    attempt: u64,
) -> u64 {
    [domain as u64, module, epoch, image, attempt]
        .iter()
        .fold(splitmix64(global), |acc, &v| splitmix64(acc ^ splitmix64(v)))
}
