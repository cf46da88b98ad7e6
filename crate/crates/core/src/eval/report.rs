use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CorpusManifest, ManifestEntry, MelSpectrogram, Phoneme, Split, WordImage};
use crate::error::{invalid, Error, Result};
use crate::pipeline::{recognize, synthesize_e2e, synthesize_tts, thread_count, EncoderModel, ItsModel, TtsModel};

use super::decode::OracleDecoder;
use super::metrics::{edit_distance, word_accuracy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub system: String,
    /// Total edits over total reference phonemes.
    pub per: f64,
    pub word_accuracy: f64,
    /// Pooled PER of the items with each reference length.
    pub per_by_length: BTreeMap<usize, f64>,
    pub items_by_length: BTreeMap<usize, usize>,
    pub n_items: usize,
    pub config_hash: String,
    pub threads: usize,
}

impl EvalReport {
    pub fn from_pairs(system: &str, pairs: &[(Vec<Phoneme>, Vec<Phoneme>)], config_hash: &str) -> Result<EvalReport> {
        let acc = word_accuracy(pairs)?;
        let (mut edits, mut total) = (0usize, 0usize);
        let mut by_len: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
        for (r, h) in pairs {
            if r.is_empty() {
                return Err(invalid("empty reference sequence"));
            }
            let e = edit_distance(r, h);
            edits += e;
            total += r.len();
            let b = by_len.entry(r.len()).or_default();
            b.0 += e;
            b.1 += r.len();
            b.2 += 1;
        }
        Ok(EvalReport {
            system: system.to_string(),
            per: edits as f64 / total as f64,
            word_accuracy: acc,
            per_by_length: by_len.iter().map(|(&k, v)| (k, v.0 as f64 / v.1 as f64)).collect(),
            items_by_length: by_len.iter().map(|(&k, v)| (k, v.2)).collect(),
            n_items: pairs.len(),
            config_hash: config_hash.to_string(),
            threads: thread_count(),
        })
    }

    /// Pooled PER over the given reference lengths, or `None` if none occur.
    pub fn per_over(&self, lengths: impl IntoIterator<Item = usize>) -> Option<f64> {
        let (mut edits, mut total) = (0.0, 0.0);
        for l in lengths {
            if let (Some(p), Some(&n)) = (self.per_by_length.get(&l), self.items_by_length.get(&l)) {
                edits += p * (n * l) as f64;
                total += (n * l) as f64;
            }
        }
        (total > 0.0).then(|| edits / total)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Which entries of a manifest to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    Split(Split),
    All,
}

fn entries(manifest: &CorpusManifest, subset: Subset) -> Vec<&ManifestEntry> {
    match subset {
        Subset::Split(s) => manifest.split(s).collect(),
        Subset::All => manifest.entries.iter().collect(),
    }
}

/// Decodes the mel each entry's system produces and scores it against the entry's phonemes.
pub fn evaluate_with(
    system: &str,
    manifest: &CorpusManifest,
    subset: Subset,
    decoder: &OracleDecoder,
    mut synth: impl FnMut(&ManifestEntry, &WordImage) -> Result<Option<MelSpectrogram>>,
) -> Result<EvalReport> {
    let mut pairs = Vec::new();
    for e in entries(manifest, subset) {
        let image = manifest.load_image(e)?;
        let hyp = match synth(e, &image)? {
            Some(mel) => decoder.decode(&mel)?,
            None => vec![],
        };
        pairs.push((e.phoneme_seq()?, hyp));
    }
    if pairs.is_empty() {
        return Err(invalid("no entries to evaluate"));
    }
    EvalReport::from_pairs(system, &pairs, &manifest.config_hash)
}

pub fn evaluate_e2e(model: &ItsModel, manifest: &CorpusManifest, subset: Subset, decoder: &OracleDecoder) -> Result<EvalReport> {
    evaluate_with("e2e", manifest, subset, decoder, |_, img| Ok(Some(synthesize_e2e(img, model)?.mel)))
}

/// Recognize-then-synthesize; an image with no recognized text scores as an empty hypothesis.
pub fn evaluate_pipeline(itt: &EncoderModel, tts: &TtsModel, manifest: &CorpusManifest, subset: Subset, decoder: &OracleDecoder) -> Result<EvalReport> {
    evaluate_with("pipeline", manifest, subset, decoder, |_, img| match synthesize_tts(&recognize(img, itt)?, tts) {
        Ok(s) => Ok(Some(s.mel)),
        Err(Error::NoTextRecognized) => Ok(None),
        Err(e) => Err(e),
    })
}

/// TTS alone, synthesizing each entry's reference phonemes.
pub fn evaluate_tts(tts: &TtsModel, manifest: &CorpusManifest, subset: Subset, decoder: &OracleDecoder) -> Result<EvalReport> {
    evaluate_with("tts", manifest, subset, decoder, |e, _| Ok(Some(synthesize_tts(&e.phoneme_seq()?, tts)?.mel)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_phonemes;

    #[test]
    fn pooled_rates() {
        let p = |s: &str| parse_phonemes(s).unwrap();
        let pairs = vec![(p("K AE T"), p("K AE T")), (p("K AE T"), p("K T")), (p("D AA G"), p("D AA G")), (p("B IY"), p("B IY IY"))];
        let r = EvalReport::from_pairs("x", &pairs, "h").unwrap();
        assert!((r.per - 2.0 / 11.0).abs() < 1e-12);
        assert_eq!(r.word_accuracy, 0.5);
        assert!((r.per_by_length[&3] - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(r.per_by_length[&2], 0.5);
        assert!((r.per_over([2, 3]).unwrap() - r.per).abs() < 1e-12);
        assert_eq!(r.per_over([7]), None);
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
