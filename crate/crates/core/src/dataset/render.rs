use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::font::{is_renderable, FONTS};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Colors {
    pub fg: f64,
    pub bg: f64,
}

impl Colors {
    pub const BLACK_ON_WHITE: Colors = Colors { fg: 0.0, bg: 1.0 };

    pub fn inverted(self) -> Colors {
        Colors { fg: self.bg, bg: self.fg }
    }
}

/// Geometry and noise knobs shared by a whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Standard deviation of additive pixel noise, clipped at 3 sigma.
    pub noise_std: f64,
    /// Lower bound of the random fit-scale factor.
    pub min_scale: f64,
    /// Maximum centre offset in pixels along each axis.
    pub max_shift: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { height: 32, width: 96, channels: 1, noise_std: 0.05, min_scale: 0.8, max_shift: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordImage {
    /// Row-major `H x W x C` values in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub word: String,
    pub font_id: usize,
    pub colors: Colors,
    pub speed_factor: f64,
}

impl WordImage {
    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

const SUPERSAMPLE: usize = 4;

pub fn render_word_image(word: &str, font_id: usize, colors: Colors, noise_seed: u64, cfg: &RenderConfig) -> Result<WordImage> {
    let text: Vec<char> = word.chars().collect();
    if text.is_empty() {
        return Err(invalid("cannot render an empty word"));
    }
    if let Some(c) = text.iter().find(|c| !is_renderable(**c)) {
        return Err(invalid(format!("unrenderable glyph {c:?}")));
    }
    let font = FONTS.get(font_id).ok_or_else(|| invalid(format!("unknown font {font_id}")))?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);

    let (tw, th) = font.extent(text.len());
    let margin = 2.0;
    let fit = ((w as f64 - 2.0 * margin) / tw).min((h as f64 - 2.0 * margin) / th);
    let scale = fit * rng.random_range(cfg.min_scale..=1.0);
    let (pw, ph) = (tw * scale, th * scale);
    let slack_x = ((w as f64 - pw) / 2.0 - 1.0).clamp(0.0, cfg.max_shift);
    let slack_y = ((h as f64 - ph) / 2.0 - 1.0).clamp(0.0, cfg.max_shift);
    let ox = (w as f64 - pw) / 2.0 + rng.random_range(-1.0..=1.0) * slack_x;
    let oy = (h as f64 - ph) / 2.0 + rng.random_range(-1.0..=1.0) * slack_y;

    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite noise");
    let bound = 3.0 * cfg.noise_std;
    let mut pixels = Vec::with_capacity(h * w * cfg.channels);
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in 0..h {
        for px in 0..w {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = (px as f64 + (sx as f64 + 0.5) * step - ox) / scale;
                    let v = (py as f64 + (sy as f64 + 0.5) * step - oy) / scale;
                    hits += font.ink(&text, u, v) as usize;
                }
            }
            let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let base = colors.bg + (colors.fg - colors.bg) * cover;
            for _ in 0..cfg.channels {
                let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng).clamp(-bound, bound) } else { 0.0 };
                pixels.push((base + n).clamp(0.0, 1.0));
            }
        }
    }
    Ok(WordImage {
        pixels,
        height: h,
        width: w,
        channels: cfg.channels,
        word: word.to_string(),
        font_id,
        colors,
        speed_factor: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l2(a: &WordImage, b: &WordImage) -> f64 {
        a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = RenderConfig::default();
        let a = render_word_image("cat", 0, Colors::BLACK_ON_WHITE, 7, &cfg).unwrap();
        let b = render_word_image("cat", 0, Colors::BLACK_ON_WHITE, 7, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), [32, 96, 1]);
        assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fonts_differ() {
        let cfg = RenderConfig { noise_std: 0.0, ..RenderConfig::default() };
        let imgs: Vec<_> = (0..FONTS.len())
            .map(|f| render_word_image("cat", f, Colors::BLACK_ON_WHITE, 7, &cfg).unwrap())
            .collect();
        for i in 0..imgs.len() {
            for j in 0..i {
                assert!(l2(&imgs[i], &imgs[j]) > 0.0, "fonts {i} and {j}");
            }
        }
    }

    #[test]
    fn inverted_colors_flip_mean() {
        let cfg = RenderConfig::default();
        let a = render_word_image("cat", 0, Colors::BLACK_ON_WHITE, 7, &cfg).unwrap();
        let b = render_word_image("cat", 0, Colors::BLACK_ON_WHITE.inverted(), 7, &cfg).unwrap();
        assert!(a.mean() > 0.5 && b.mean() < 0.5, "{} {}", a.mean(), b.mean());
    }

    #[test]
    fn long_words_fit_inside() {
        let cfg = RenderConfig { noise_std: 0.0, ..RenderConfig::default() };
        for f in 0..FONTS.len() {
            let img = render_word_image("seventeen", f, Colors::BLACK_ON_WHITE, 1, &cfg).unwrap();
            for y in 0..cfg.height {
                for x in [0, cfg.width - 1] {
                    assert_eq!(img.pixels[y * cfg.width + x], 1.0, "font {f} touches border");
                }
            }
        }
    }

    #[test]
    fn bad_glyph_is_rejected() {
        assert!(render_word_image("c@t", 0, Colors::BLACK_ON_WHITE, 0, &RenderConfig::default()).is_err());
    }
}
