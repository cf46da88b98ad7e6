use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::WordImage;
use crate::error::{invalid, Result};
use crate::pipeline::{recognize, synthesize_e2e, synthesize_tts, thread_count, EncoderModel, ItsModel, TtsModel};

pub const MIN_BENCH_IMAGES: usize = 50;

#[derive(Debug, Clone, Copy)]
pub enum BenchSystem<'a> {
    E2e(&'a ItsModel),
    Pipeline { itt: &'a EncoderModel, tts: &'a TtsModel },
}

impl BenchSystem<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            BenchSystem::E2e(_) => "e2e",
            BenchSystem::Pipeline { .. } => "pipeline",
        }
    }

    /// Weights of every network involved; Griffin-Lim has none.
    pub fn param_count(&self) -> usize {
        match self {
            BenchSystem::E2e(m) => m.param_count(),
            BenchSystem::Pipeline { itt, tts } => itt.param_count() + tts.param_count(),
        }
    }

    /// Inference seconds and synthesized frames for one image. The pipeline's
    /// time is its recognizer's time plus its synthesizer's time.
    fn run(&self, image: &WordImage) -> Result<(f64, usize)> {
        match self {
            BenchSystem::E2e(m) => {
                let t0 = Instant::now();
                let s = synthesize_e2e(image, m)?;
                Ok((t0.elapsed().as_secs_f64(), s.mel.frames))
            }
            BenchSystem::Pipeline { itt, tts } => {
                let t0 = Instant::now();
                let phonemes = recognize(image, itt)?;
                let itt_time = t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let s = synthesize_tts(&phonemes, tts)?;
                Ok((itt_time + t1.elapsed().as_secs_f64(), s.mel.frames))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub system: String,
    pub images_per_sec: f64,
    /// Inference seconds per second of synthesized audio.
    pub rtf: f64,
    pub param_count: usize,
    pub n_images: usize,
    pub runs: usize,
    /// Wall-clock seconds of each timed pass over all images.
    pub run_seconds: Vec<f64>,
    pub audio_seconds: f64,
    pub threads: usize,
}

impl BenchReport {
    /// `(max - min) / median` of the per-run times.
    pub fn spread(&self) -> f64 {
        let max = self.run_seconds.iter().copied().fold(f64::MIN, f64::max);
        let min = self.run_seconds.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / median(&self.run_seconds)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Batch-1 timing over `images`, `runs` times after one untimed warm-up pass.
pub fn bench(system: BenchSystem, images: &[WordImage], runs: usize) -> Result<BenchReport> {
    if images.len() < MIN_BENCH_IMAGES {
        return Err(invalid(format!("bench needs at least {MIN_BENCH_IMAGES} images, got {}", images.len())));
    }
    if runs == 0 {
        return Err(invalid("bench needs at least one run"));
    }
    for img in images {
        system.run(img)?;
    }
    let mut run_seconds = Vec::with_capacity(runs);
    let mut frames = 0;
    for _ in 0..runs {
        let (mut secs, mut f) = (0.0, 0);
        for img in images {
            let (s, n) = system.run(img)?;
            secs += s;
            f += n;
        }
        run_seconds.push(secs);
        frames = f;
    }
    let cfg = match system {
        BenchSystem::E2e(m) => m.cfg.audio,
        BenchSystem::Pipeline { tts, .. } => tts.cfg.audio,
    };
    let audio_seconds = cfg.seconds(frames);
    let t = median(&run_seconds);
    Ok(BenchReport {
        system: system.name().to_string(),
        images_per_sec: images.len() as f64 / t,
        rtf: t / audio_seconds,
        param_count: system.param_count(),
        n_images: images.len(),
        runs,
        run_seconds,
        audio_seconds,
        threads: thread_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn too_few_images() {
        let m = ItsModel::new(0, &crate::pipeline::ModelConfig::default()).unwrap();
        assert!(bench(BenchSystem::E2e(&m), &[], 5).is_err());
    }
}
