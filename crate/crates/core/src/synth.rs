//! Seeded synthetic place datasets: one random texture per place for the
//! reference traverse, and a query traverse with the same textures under
//! additive Gaussian noise and a brightness gain.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::imaging::{derive_seed, save_pgm, ImageGray, SeedDomain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub places: usize,
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    /// Multiplicative gain applied to query intensities (1.1 = +10%).
    pub brightness_gain: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            places: 100,
            width: 28,
            height: 28,
            noise_sigma: 0.1,
            brightness_gain: 1.1,
            seed: 2023,
        }
    }
}

/// I.i.d. uniform 8-bit texture for one place.
pub fn texture(width: usize, height: usize, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..width * height).map(|_| rng.random::<u8>()).collect();
    ImageGray::from_u8(width, height, &data).expect("non-empty texture")
}

/// Brightness gain plus Gaussian noise, clipped and re-quantized to 8 bits.
pub fn perturb(img: &ImageGray, noise_sigma: f64, brightness_gain: f64, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("valid sigma");
    let px: Vec<f32> = img
        .pixels()
        .iter()
        .map(|&p| (f64::from(p) * brightness_gain + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    let noisy = ImageGray::new(img.width(), img.height(), px).expect("same geometry");
    ImageGray::from_u8(img.width(), img.height(), &noisy.to_u8()).expect("same geometry")
}

/// `(reference, query)` traverses, index = place id.
pub fn traverses(cfg: &SynthConfig) -> (Vec<ImageGray>, Vec<ImageGray>) {
    let reference: Vec<ImageGray> = (0..cfg.places)
        .map(|p| texture(cfg.width, cfg.height, derive_seed(cfg.seed, SeedDomain::Synthetic, 0, 0, p as u64, 0)))
        .collect();
    let query = reference
        .iter()
        .enumerate()
        .map(|(p, r)| {
            let s = derive_seed(cfg.seed, SeedDomain::Synthetic, 1, 0, p as u64, 0);
            perturb(r, cfg.noise_sigma, cfg.brightness_gain, s)
        })
        .collect();
    (reference, query)
}

/// Write `reference/` and `query/` PGM directories under `dir`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig) -> Result<(PathBuf, PathBuf)> {
    let (reference, query) = traverses(cfg);
    let ref_dir = dir.join("reference");
    let query_dir = dir.join("query");
    for (sub, imgs) in [(&ref_dir, &reference), (&query_dir, &query)] {
        std::fs::create_dir_all(sub).map_err(|e| Error::io(sub, e))?;
        for (p, img) in imgs.iter().enumerate() {
            save_pgm(img, &sub.join(format!("place_{p:05}.pgm")))?;
        }
    }
    Ok((ref_dir, query_dir))
}

/// Plant cross-region responders: in every expert, overwrite
/// `round(fraction * K_E)` evenly spaced neurons with the weights of the
/// strongest neurons of the next expert (one per distinct place), keeping the
/// destination's place label. The copied adaptive threshold is multiplied by
/// `theta_scale`, so values below 1 make the copies fire more readily.
///
/// Reference totals are cleared; rerun hyperactivity detection afterwards.
/// Returns the `(expert, neuron)` pairs that were overwritten.
pub fn inject_cross_region_responders(
    model: &mut EnsembleModel,
    fraction: f64,
    theta_scale: f64,
) -> Result<Vec<(usize, usize)>> {
    let n = model.experts.len();
    if n < 2 {
        return Err(Error::config("injection needs at least two experts"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) || !(theta_scale >= 0.0) {
        return Err(Error::config("fraction must be in (0, 1] and theta_scale >= 0"));
    }
    if !model.is_regularized() {
        return Err(Error::State("injection ranks source neurons by reference totals".into()));
    }
    let sources = model.experts.clone();
    let mut injected = Vec::new();
    for (a, dst) in model.experts.iter_mut().enumerate() {
        let src = &sources[(a + 1) % n];
        let ke = dst.exc_count;
        if src.exc_count != ke || src.input_count != dst.input_count {
            return Err(Error::config("experts differ in shape"));
        }
        let k = ((fraction * ke as f64).round() as usize).clamp(1, ke);
        let totals = src.reference_totals.as_ref().expect("regularized");
        let mut ranked: Vec<usize> = (0..ke).filter(|&e| src.assignments[e].is_some()).collect();
        ranked.sort_by_key(|&e| (std::cmp::Reverse(totals[e]), e));
        let mut seen = std::collections::BTreeSet::new();
        let winners: Vec<usize> = ranked
            .into_iter()
            .filter(|&e| seen.insert(src.assignments[e]))
            .take(k)
            .collect();
        for (j, &w) in winners.iter().enumerate() {
            let e = j * (ke / k);
            for i in 0..dst.input_count {
                dst.weights[i * ke + e] = src.weights[i * ke + w];
            }
            dst.theta[e] = src.theta[w] * theta_scale;
            if dst.assignments[e].is_none() {
                dst.assignments[e] = Some((j % dst.place_count) as u32);
            }
            injected.push((a, e));
        }
    }
    for ex in &mut model.experts {
        ex.reference_totals = None;
        ex.hyperactive.iter_mut().for_each(|h| *h = false);
    }
    Ok(injected)
}
