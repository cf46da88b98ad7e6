//! Stage-1 image augmentation: integer translation with edge replication
//! and fresh additive pixel noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::WordImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_shift_x: usize,
    pub max_shift_y: usize,
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { max_shift_x: 3, max_shift_y: 2, noise_std: 0.05 }
    }
}

pub fn augment(img: &WordImage, cfg: &AugmentConfig, seed: u64) -> WordImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sx, sy) = (cfg.max_shift_x as i64, cfg.max_shift_y as i64);
    let dx = rng.random_range(-sx..=sx);
    let dy = rng.random_range(-sy..=sy);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite noise");
    let (h, w, c) = (img.height as i64, img.width as i64, img.channels);
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        let yy = (y - dy).clamp(0, h - 1) as usize;
        for x in 0..w {
            let xx = (x - dx).clamp(0, w - 1) as usize;
            for ch in 0..c {
                let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                pixels.push(img.pixels[(yy * w as usize + xx) * c + ch] + n);
            }
        }
    }
    WordImage { pixels, ..img.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{render_word_image, Colors, RenderConfig};

    #[test]
    fn shift_only_moves_pixels() {
        let img = render_word_image("cat", 0, Colors::BLACK_ON_WHITE, 1, &RenderConfig::default()).unwrap();
        let a = augment(&img, &AugmentConfig { noise_std: 0.0, ..AugmentConfig::default() }, 9);
        assert_eq!(a.pixels.len(), img.pixels.len());
        assert_eq!(a.pixels, augment(&img, &AugmentConfig { noise_std: 0.0, ..AugmentConfig::default() }, 9).pixels);
        let none = augment(&img, &AugmentConfig { max_shift_x: 0, max_shift_y: 0, noise_std: 0.0 }, 9);
        assert_eq!(none.pixels, img.pixels);
    }
}
