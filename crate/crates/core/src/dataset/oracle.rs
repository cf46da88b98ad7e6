//! Deterministic template synthesizer standing in for recorded speech.
//!
//! Each phoneme owns a fixed log-mel pattern made of two Gaussian bumps
//! over a flat floor. A word's mel is the concatenation of its phoneme
//! templates held for their durations; the first frame of every phoneme
//! after the first is the average of the two neighbouring templates.

use serde::{Deserialize, Serialize};

use super::phoneme::{Phoneme, P};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig { sample_rate: 8000, frame_size: 256, hop: 64, n_mels: 32 }
    }
}

impl AudioConfig {
    pub fn seconds(&self, frames: usize) -> f64 {
        (frames * self.hop) as f64 / self.sample_rate as f64
    }
}

/// `n_mels x frames` log-mel magnitudes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f64>,
    pub n_mels: usize,
    pub frames: usize,
    pub config: AudioConfig,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f64>, n_mels: usize, frames: usize, config: AudioConfig) -> Result<Self> {
        if frames == 0 || data.len() != n_mels * frames {
            return Err(invalid(format!("mel data of {} values is not {n_mels} x {frames}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mel contains non-finite values"));
        }
        Ok(MelSpectrogram { data, n_mels, frames, config })
    }

    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.data[band * self.frames + frame]
    }

    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.n_mels).map(|f| self.at(f, t)).collect()
    }

    pub fn l1(&self, other: &MelSpectrogram) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(invalid(format!("mel lengths {} and {} differ", self.frames, other.frames)));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len() as f64)
    }
}

pub const SPEED_RANGE: (f64, f64) = (0.5, 2.0);
pub const MIN_DURATION: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateTable {
    /// Indexed by phoneme id; entry 0 (ε) is unused.
    pub templates: Vec<Vec<f64>>,
    pub base_durations: Vec<usize>,
    pub n_mels: usize,
}

pub const FLOOR: f64 = -4.0;
const BUMP_LOW: [f64; 5] = [2.0, 6.0, 10.0, 14.0, 18.0];
const BUMP_HIGH: [f64; 4] = [20.0, 24.0, 28.0, 31.0];
const BUMP_SIGMA: f64 = 1.5;

pub fn base_duration(p: Phoneme) -> usize {
    if p.is_vowel() {
        return 7;
    }
    match p.name() {
        "L" | "M" | "N" | "R" | "S" | "F" => 5,
        _ => 4,
    }
}

impl TemplateTable {
    pub fn new(n_mels: usize) -> Self {
        let stretch = (n_mels.max(2) - 1) as f64 / 31.0;
        let mut templates = vec![vec![FLOOR; n_mels]];
        let mut base_durations = vec![0];
        for p in Phoneme::all() {
            let k = p.id() - 1;
            let (c1, c2) = (BUMP_LOW[k / 4] * stretch, BUMP_HIGH[k % 4] * stretch);
            let t = (0..n_mels)
                .map(|f| {
                    let bump = |c: f64| (-(f as f64 - c).powi(2) / (2.0 * BUMP_SIGMA * BUMP_SIGMA)).exp();
                    FLOOR * (1.0 - (bump(c1) + bump(c2)).min(1.0))
                })
                .collect();
            templates.push(t);
            base_durations.push(base_duration(p));
        }
        TemplateTable { templates, base_durations, n_mels }
    }

    pub fn template(&self, p: Phoneme) -> &[f64] {
        &self.templates[p.id()]
    }

    pub fn durations_for(&self, phonemes: &[Phoneme], speed: f64) -> Vec<usize> {
        phonemes
            .iter()
            .map(|p| ((self.base_durations[p.id()] as f64 / speed + 0.5).floor() as usize).max(MIN_DURATION))
            .collect()
    }
}

/// Builds the mel for `phonemes` held for `durations` frames each (no ε entries).
pub fn reconstruct_oracle_mel(phonemes: &[Phoneme], durations: &[usize], table: &TemplateTable, config: AudioConfig) -> Result<MelSpectrogram> {
    if phonemes.len() != durations.len() {
        return Err(invalid("phoneme and duration counts differ"));
    }
    if phonemes.is_empty() {
        return Err(invalid("empty phoneme sequence"));
    }
    if let Some(p) = phonemes.iter().find(|p| p.is_epsilon() || p.id() > P) {
        return Err(invalid(format!("cannot synthesize symbol {p}")));
    }
    let total: usize = durations.iter().sum();
    let f = table.n_mels;
    let mut data = vec![0.0; f * total];
    let mut t = 0;
    for (i, (&p, &d)) in phonemes.iter().zip(durations).enumerate() {
        let cur = table.template(p);
        for j in 0..d {
            for b in 0..f {
                data[b * total + t] = if i > 0 && j == 0 { 0.5 * (cur[b] + table.template(phonemes[i - 1])[b]) } else { cur[b] };
            }
            t += 1;
        }
    }
    MelSpectrogram::new(data, f, total, config)
}

/// Synthesizes the oracle mel and its per-slot durations (length `l`, ε tail zero).
pub fn synth_oracle_mel(
    phonemes: &[Phoneme],
    speed_factor: f64,
    l: usize,
    table: &TemplateTable,
    config: AudioConfig,
) -> Result<(MelSpectrogram, Vec<usize>)> {
    if phonemes.is_empty() {
        return Err(invalid("empty phoneme sequence"));
    }
    if !(SPEED_RANGE.0..=SPEED_RANGE.1).contains(&speed_factor) {
        return Err(invalid(format!("speed factor {speed_factor} outside [0.5, 2.0]")));
    }
    if phonemes.len() > l {
        return Err(invalid(format!("{} phonemes exceed {l} slots", phonemes.len())));
    }
    let durs = table.durations_for(phonemes, speed_factor);
    let mel = reconstruct_oracle_mel(phonemes, &durs, table, config)?;
    let mut slots = durs;
    slots.resize(l, 0);
    Ok((mel, slots))
}

#[cfg(test)]
mod tests {
    use super::super::phoneme::{parse_phonemes, L};
    use super::*;

    fn cfg() -> AudioConfig {
        AudioConfig::default()
    }

    #[test]
    fn single_phoneme_with_base_eight() {
        let mut table = TemplateTable::new(32);
        let p = Phoneme(3);
        table.base_durations[p.id()] = 8;
        let (mel, d) = synth_oracle_mel(&[p], 1.0, L, &table, cfg()).unwrap();
        assert_eq!(mel.frames, 8);
        assert_eq!(d[0], 8);
        assert!(d[1..].iter().all(|&x| x == 0));
        assert_eq!(d.len(), L);
    }

    #[test]
    fn double_speed_halves_durations() {
        let table = TemplateTable::new(32);
        let seq = parse_phonemes("S T AA P").unwrap();
        let (_, d1) = synth_oracle_mel(&seq, 1.0, L, &table, cfg()).unwrap();
        let (_, d2) = synth_oracle_mel(&seq, 2.0, L, &table, cfg()).unwrap();
        for (a, b) in d1.iter().zip(&d2).take(seq.len()) {
            assert_eq!(*b, ((*a as f64 / 2.0 + 0.5).floor() as usize).max(2));
        }
    }

    #[test]
    fn cat_conserves_frames() {
        let table = TemplateTable::new(32);
        let seq = parse_phonemes("K AE T").unwrap();
        let (mel, d) = synth_oracle_mel(&seq, 1.0, L, &table, cfg()).unwrap();
        assert_eq!(d.iter().sum::<usize>(), mel.frames);
        assert_eq!(&d[..3], &[4, 7, 4]);
    }

    #[test]
    fn crossfade_frame_is_the_mean() {
        let table = TemplateTable::new(32);
        let seq = parse_phonemes("K AE").unwrap();
        let (mel, _) = synth_oracle_mel(&seq, 1.0, L, &table, cfg()).unwrap();
        let k = table.template(seq[0]);
        let ae = table.template(seq[1]);
        assert_eq!(mel.frame(3), k);
        let mid: Vec<f64> = k.iter().zip(ae).map(|(a, b)| 0.5 * (a + b)).collect();
        assert_eq!(mel.frame(4), mid);
        assert_eq!(mel.frame(5), ae);
    }

    #[test]
    fn templates_are_distinct_and_peak_at_zero() {
        let table = TemplateTable::new(32);
        for p in Phoneme::all() {
            let t = table.template(p);
            assert!(t.iter().all(|v| (FLOOR..=0.0).contains(v)));
            assert!(t.iter().filter(|&&v| v == 0.0).count() >= 2);
            for q in Phoneme::all().filter(|q| q < &p) {
                let d: f64 = t.iter().zip(table.template(q)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 10.0, "{p} vs {q}: {d}");
            }
        }
    }

    #[test]
    fn bad_inputs() {
        let table = TemplateTable::new(32);
        assert!(synth_oracle_mel(&[], 1.0, L, &table, cfg()).is_err());
        assert!(synth_oracle_mel(&[Phoneme(1)], 2.5, L, &table, cfg()).is_err());
        assert!(synth_oracle_mel(&[Phoneme(1)], 0.4, L, &table, cfg()).is_err());
    }
}
