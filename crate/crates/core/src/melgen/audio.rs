//! STFT, mel filterbank, Griffin-Lim phase reconstruction and WAV output.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dataset::{AudioConfig, MelSpectrogram};
use crate::error::{invalid, Result};

/// Magnitude below which log-mel values are clamped.
pub const MAG_FLOOR: f64 = 1e-5;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-style mel filters, `n_mels x (n_fft/2 + 1)`, unit peak.
pub fn mel_filterbank(cfg: &AudioConfig) -> Vec<Vec<f64>> {
    let bins = cfg.frame_size / 2 + 1;
    let fmax = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate as f64 / cfg.frame_size as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Short-time Fourier analysis with a periodic Hann window.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        let window = (0..n_fft).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos()).collect();
        Stft { n_fft, hop, window, fwd: planner.plan_fft_forward(n_fft), inv: planner.plan_fft_inverse(n_fft) }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Samples covered by `frames` frames: `hop` per frame.
    pub fn signal_len(&self, frames: usize) -> usize {
        frames * self.hop
    }

    /// Signal index of window position `i` in frame `t`, if inside the signal.
    fn index(&self, t: usize, i: usize, len: usize) -> Option<usize> {
        (t * self.hop + i).checked_sub(self.n_fft / 2).filter(|&n| n < len)
    }

    /// Half spectra, one per frame; frame `t` is centred on sample `t * hop`
    /// and samples outside the signal count as zero.
    pub fn forward(&self, x: &[f64], frames: usize) -> Vec<Vec<Complex64>> {
        (0..frames)
            .map(|t| {
                let mut buf: Vec<Complex64> = (0..self.n_fft)
                    .map(|i| {
                        let v = self.index(t, i, x.len()).map_or(0.0, |n| x[n]);
                        Complex64::new(v * self.window[i], 0.0)
                    })
                    .collect();
                self.fwd.process(&mut buf);
                buf.truncate(self.bins());
                buf
            })
            .collect()
    }

    /// Least-squares inverse: the signal whose STFT is closest to `spec`.
    pub fn inverse(&self, spec: &[Vec<Complex64>]) -> Vec<f64> {
        let len = self.signal_len(spec.len());
        let mut x = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        let n = self.n_fft;
        for (t, half) in spec.iter().enumerate() {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n - half.len() + 1 {
                buf[n - k] = half[k].conj();
            }
            self.inv.process(&mut buf);
            for i in 0..n {
                if let Some(j) = self.index(t, i, len) {
                    let w = self.window[i];
                    x[j] += w * buf[i].re / n as f64;
                    wsum[j] += w * w;
                }
            }
        }
        for (v, w) in x.iter_mut().zip(&wsum) {
            *v = if *w > 1e-10 { *v / w } else { 0.0 };
        }
        x
    }
}

/// Non-negative least squares `min |A s - b|^2, s >= 0` by accelerated projected gradient.
pub fn nnls(a: &[Vec<f64>], b: &[f64], iters: usize) -> Vec<f64> {
    let n = a[0].len();
    let matvec = |s: &[f64]| -> Vec<f64> { a.iter().map(|row| row.iter().zip(s).map(|(x, y)| x * y).sum()).collect() };
    let rmatvec = |r: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (row, ri) in a.iter().zip(r) {
            for (gj, aj) in g.iter_mut().zip(row) {
                *gj += aj * ri;
            }
        }
        g
    };
    // spectral norm of A^T A by power iteration
    let mut v = vec![1.0; n];
    let mut lip = 1.0;
    for _ in 0..50 {
        let w = rmatvec(&matvec(&v));
        lip = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lip == 0.0 {
            return vec![0.0; n];
        }
        v = w.iter().map(|x| x / lip).collect();
    }
    let step = 1.0 / lip;
    let mut s = rmatvec(b).into_iter().map(|x: f64| x.max(0.0) * step).collect::<Vec<_>>();
    let mut y = s.clone();
    let mut mom: f64 = 1.0;
    for _ in 0..iters {
        let r: Vec<f64> = matvec(&y).iter().zip(b).map(|(p, q)| p - q).collect();
        let g = rmatvec(&r);
        let next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| (yi - step * gi).max(0.0)).collect();
        let mom_next = (1.0 + (1.0 + 4.0 * mom * mom).sqrt()) / 2.0;
        let beta = (mom - 1.0) / mom_next;
        y = next.iter().zip(&s).map(|(n, o)| n + beta * (n - o)).collect();
        s = next;
        mom = mom_next;
    }
    s
}

/// Linear magnitudes `[T][bins]` whose mel projection best matches `exp(mel)`.
pub fn mel_to_linear(mel: &MelSpectrogram, fb: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..mel.frames)
        .map(|t| {
            let target: Vec<f64> = mel.frame(t).iter().map(|v| v.exp()).collect();
            nnls(fb, &target, 300)
        })
        .collect()
}

pub fn mel_from_waveform(x: &[f64], frames: usize, cfg: &AudioConfig) -> Result<MelSpectrogram> {
    let stft = Stft::new(cfg.frame_size, cfg.hop);
    let fb = mel_filterbank(cfg);
    let spec = stft.forward(x, frames);
    let mut data = vec![0.0; cfg.n_mels * frames];
    for (t, frame) in spec.iter().enumerate() {
        for (m, row) in fb.iter().enumerate() {
            let e: f64 = row.iter().zip(frame).map(|(w, c)| w * c.norm()).sum();
            data[m * frames + t] = e.max(MAG_FLOOR).ln();
        }
    }
    MelSpectrogram::new(data, cfg.n_mels, frames, *cfg)
}

/// `|S - |X|| / |S|` over a whole spectrogram.
pub fn spectral_convergence(target: &[Vec<f64>], spec: &[Vec<Complex64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, x) in target.iter().zip(spec) {
        for (a, b) in s.iter().zip(x) {
            num += (a - b.norm()).powi(2);
            den += a * a;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Mel-domain convergence between a mel and the mel of a waveform.
pub fn mel_spectral_convergence(mel: &MelSpectrogram, x: &[f64]) -> Result<f64> {
    let re = mel_from_waveform(x, mel.frames, &mel.config)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in mel.data.iter().zip(&re.data) {
        num += (a.exp() - b.exp()).powi(2);
        den += a.exp().powi(2);
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone)]
pub struct GriffinLim {
    pub samples: Vec<f64>,
    /// Spectral convergence after each iteration.
    pub convergence: Vec<f64>,
}

/// Reconstructs a waveform from a log-mel spectrogram.
pub fn griffin_lim(mel: &MelSpectrogram, n_iters: usize, seed: u64) -> Result<GriffinLim> {
    if n_iters == 0 {
        return Err(invalid("griffin-lim needs at least one iteration"));
    }
    let cfg = mel.config;
    if mel.n_mels != cfg.n_mels {
        return Err(invalid("mel band count differs from its audio config"));
    }
    let stft = Stft::new(cfg.frame_size, cfg.hop);
    let fb = mel_filterbank(&cfg);
    let mag = mel_to_linear(mel, &fb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex64>> = mag
        .iter()
        .map(|row| row.iter().map(|&m| Complex64::from_polar(m, rng.random_range(-PI..PI))).collect())
        .collect();
    let mut convergence = Vec::with_capacity(n_iters);
    let mut x = Vec::new();
    for _ in 0..n_iters {
        x = stft.inverse(&spec);
        let est = stft.forward(&x, mel.frames);
        convergence.push(spectral_convergence(&mag, &est));
        spec = mag
            .iter()
            .zip(&est)
            .map(|(row, e)| {
                row.iter()
                    .zip(e)
                    .map(|(&m, c)| if c.norm() > 0.0 { c * (m / c.norm()) } else { Complex64::new(m, 0.0) })
                    .collect()
            })
            .collect();
    }
    Ok(GriffinLim { samples: x, convergence })
}

/// Writes mono 16-bit PCM, normalizing the peak to 0.9 full scale when it exceeds that.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.9 { 0.9 / peak } else { 1.0 };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s * gain * i16::MAX as f64).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_phonemes, synth_oracle_mel, TemplateTable, L};

    #[test]
    fn filterbank_covers_every_band() {
        let fb = mel_filterbank(&AudioConfig::default());
        assert_eq!(fb.len(), 32);
        assert!(fb.iter().all(|row| row.len() == 129 && row.iter().any(|&v| v > 0.1)));
    }

    #[test]
    fn stft_inverse_is_exact_for_consistent_spectra() {
        let stft = Stft::new(256, 64);
        let frames = 12;
        let x: Vec<f64> = (0..stft.signal_len(frames)).map(|n| (n as f64 * 0.21).sin() + 0.3 * (n as f64 * 0.05).cos()).collect();
        let y = stft.inverse(&stft.forward(&x, frames));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn nnls_recovers_non_negative_solution() {
        let a = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let s = nnls(&a, &[2.0, -1.0], 2000);
        assert!(s.iter().all(|&v| v >= 0.0));
        // optimum: s = [2, 0, 0] with residual [0, 1]
        assert!((s[0] - 2.0).abs() < 1e-4 && s[1].abs() < 1e-4 && s[2].abs() < 1e-4, "{s:?}");
    }

    #[test]
    fn convergence_is_monotone() {
        let table = TemplateTable::new(32);
        let (mel, _) = synth_oracle_mel(&parse_phonemes("K AE T").unwrap(), 1.0, L, &table, AudioConfig::default()).unwrap();
        let gl = griffin_lim(&mel, 30, 0).unwrap();
        for w in gl.convergence.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{:?}", gl.convergence);
        }
        let one = griffin_lim(&mel, 1, 0).unwrap();
        assert!(gl.convergence.last() <= one.convergence.last());
    }

    #[test]
    fn dc_band_gives_quiet_low_tone() {
        let cfg = AudioConfig::default();
        let frames = 16;
        let mut data = vec![-12.0; 32 * frames];
        data[..frames].fill(0.0);
        let mel = MelSpectrogram::new(data, 32, frames, cfg).unwrap();
        let gl = griffin_lim(&mel, 20, 1).unwrap();
        let x = &gl.samples;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!(rms > 0.0 && rms < 0.05, "rms {rms}");
        let stft = Stft::new(256, 64);
        let spec = stft.forward(x, frames);
        let mut energy = vec![0.0; stft.bins()];
        for f in &spec {
            for (e, c) in energy.iter_mut().zip(f) {
                *e += c.norm_sqr();
            }
        }
        let peak = (0..energy.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        let hz = peak as f64 * cfg.sample_rate as f64 / 256.0;
        assert!(hz < 100.0, "dominant frequency {hz}");
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &[0.0, 0.5, -0.5, 2.0], 8000).unwrap();
        let r = hound::WavReader::open(&p).unwrap();
        assert_eq!(r.spec().sample_rate, 8000);
        assert_eq!(r.spec().bits_per_sample, 16);
        assert_eq!(r.len(), 4);
    }
}
