//! Corpus generation and the JSON manifest.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json
//! images/000000.tsr1   H x W x C, f32
//! mels/000000.tsr1     n_mels x T, f32
//! ```
//!
//! Manifest paths are relative to the directory holding `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use its_tensor::tsr1::{self, DType, RawTensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::font::FONTS;
use super::g2p::{g2p_lookup, lexicon_words};
use super::oracle::{synth_oracle_mel, AudioConfig, MelSpectrogram, TemplateTable};
use super::phoneme::{pad_to_slots, parse_phonemes, phoneme_string, Phoneme, SlotSeq, L};
use super::render::{render_word_image, Colors, RenderConfig, WordImage};
use crate::error::{invalid, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub words: Vec<String>,
    pub samples_per_word: usize,
    /// Sample multiplier for words with fewer than `short_threshold` phonemes.
    pub short_word_boost: usize,
    pub short_threshold: usize,
    pub fonts: Vec<usize>,
    pub speed_range: (f64, f64),
    pub splits: SplitFractions,
    /// Minimum absolute gray-level difference between text and background.
    pub min_contrast: f64,
    pub seed: u64,
    pub slots: usize,
    pub render: RenderConfig,
    pub audio: AudioConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            words: lexicon_words().map(String::from).collect(),
            samples_per_word: 10,
            short_word_boost: 3,
            short_threshold: 4,
            fonts: (0..FONTS.len()).collect(),
            speed_range: (0.8, 1.25),
            splits: SplitFractions { train: 0.8, val: 0.1, test: 0.1 },
            min_contrast: 0.4,
            seed: 1234,
            slots: L,
            render: RenderConfig::default(),
            audio: AudioConfig::default(),
        }
    }
}

pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.words.is_empty() {
            return bad("word list is empty".into());
        }
        if self.samples_per_word == 0 || self.short_word_boost == 0 {
            return bad("samples_per_word and short_word_boost must be positive".into());
        }
        if self.fonts.is_empty() || self.fonts.iter().any(|&f| f >= FONTS.len()) {
            return bad(format!("fonts must be a non-empty subset of 0..{}", FONTS.len()));
        }
        let (lo, hi) = self.speed_range;
        if !(0.5 <= lo && lo <= hi && hi <= 2.0) {
            return bad(format!("speed range {lo}..{hi} outside [0.5, 2.0]"));
        }
        let s = self.splits;
        if [s.train, s.val, s.test].iter().any(|f| *f < 0.0) || ((s.train + s.val + s.test) - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_contrast) {
            return bad("min_contrast must lie in [0, 1]".into());
        }
        let mut seen = BTreeSet::new();
        for w in &self.words {
            if !seen.insert(w) {
                return bad(format!("duplicate word {w:?}"));
            }
            g2p_lookup(w).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn is_short(&self, n_phonemes: usize) -> bool {
        n_phonemes < self.short_threshold
    }

    pub fn samples_for(&self, n_phonemes: usize) -> usize {
        self.samples_per_word * if self.is_short(n_phonemes) { self.short_word_boost } else { 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub word: String,
    pub phonemes: String,
    pub slots: Vec<usize>,
    pub n_phonemes: usize,
    pub durations: Vec<usize>,
    pub frames: usize,
    pub image: String,
    pub mel: String,
    pub split: Split,
    pub speed_factor: f64,
    pub font_id: usize,
    pub fg: f64,
    pub bg: f64,
}

impl ManifestEntry {
    pub fn phoneme_seq(&self) -> Result<Vec<Phoneme>> {
        parse_phonemes(&self.phonemes)
    }

    pub fn slot_seq(&self) -> Result<SlotSeq> {
        SlotSeq::from_ids(&self.slots)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: CorpusConfig,
    pub image_shape: [usize; 3],
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

fn entry_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(its_tensor::dropout_seed(seed, stream, 0x636f_7270))
}

fn split_counts(n: usize, s: SplitFractions) -> (usize, usize) {
    let round = |f: f64| (f * n as f64 + 0.5).floor() as usize;
    let mut test = round(s.test);
    let mut val = round(s.val);
    if n >= 3 {
        test = test.max((s.test > 0.0) as usize);
        val = val.max((s.val > 0.0) as usize);
    }
    while test + val > n {
        if val > 0 {
            val -= 1;
        } else {
            test -= 1;
        }
    }
    (val, test)
}

/// One planned corpus item before it is rendered.
#[derive(Debug, Clone)]
struct Plan {
    word: String,
    phonemes: Vec<Phoneme>,
    split: Split,
}

fn plan(cfg: &CorpusConfig) -> Result<Vec<Plan>> {
    let mut plans = Vec::new();
    for (wi, w) in cfg.words.iter().enumerate() {
        let phonemes = g2p_lookup(w)?;
        let n = cfg.samples_for(phonemes.len());
        let (val, test) = split_counts(n, cfg.splits);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut entry_rng(cfg.seed, 1 << 40 | wi as u64));
        let mut splits = vec![Split::Train; n];
        for (rank, &k) in order.iter().enumerate() {
            if rank < test {
                splits[k] = Split::Test;
            } else if rank < test + val {
                splits[k] = Split::Val;
            }
        }
        for split in splits {
            plans.push(Plan { word: w.clone(), phonemes: phonemes.clone(), split });
        }
    }
    Ok(plans)
}

/// A fully materialized corpus item.
pub struct Sample {
    pub image: WordImage,
    pub mel: MelSpectrogram,
    pub slots: SlotSeq,
    pub durations: Vec<usize>,
}

fn make_sample(cfg: &CorpusConfig, table: &TemplateTable, index: usize, p: &Plan) -> Result<Sample> {
    let mut rng = entry_rng(cfg.seed, index as u64);
    let font = cfg.fonts[rng.random_range(0..cfg.fonts.len())];
    let colors = loop {
        let c = Colors { fg: rng.random(), bg: rng.random() };
        if (c.fg - c.bg).abs() >= cfg.min_contrast {
            break c;
        }
    };
    let (lo, hi) = cfg.speed_range;
    let speed = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let noise_seed: u64 = rng.random();
    let mut image = render_word_image(&p.word, font, colors, noise_seed, &cfg.render)?;
    image.speed_factor = speed;
    let (mel, durations) = synth_oracle_mel(&p.phonemes, speed, cfg.slots, table, cfg.audio)?;
    let slots = pad_to_slots(&p.phonemes, cfg.slots)?;
    Ok(Sample { image, mel, slots, durations })
}

pub fn build_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.validate()?;
    let root = out_dir.as_ref();
    let table = TemplateTable::new(cfg.audio.n_mels);
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("mels"))?;
    let plans = plan(cfg)?;
    let mut entries = Vec::with_capacity(plans.len());
    for (index, p) in plans.iter().enumerate() {
        let s = make_sample(cfg, &table, index, p)?;
        let image = format!("images/{index:06}.tsr1");
        let mel = format!("mels/{index:06}.tsr1");
        let img_raw = RawTensor::new(s.image.shape().to_vec(), s.image.pixels.clone());
        tsr1::save(root.join(&image), &img_raw, DType::F32)?;
        let mel_raw = RawTensor::new(vec![s.mel.n_mels, s.mel.frames], s.mel.data.clone());
        tsr1::save(root.join(&mel), &mel_raw, DType::F32)?;
        entries.push(ManifestEntry {
            index,
            word: p.word.clone(),
            phonemes: phoneme_string(&p.phonemes),
            slots: s.slots.ids(),
            n_phonemes: p.phonemes.len(),
            durations: s.durations,
            frames: s.mel.frames,
            image,
            mel,
            split: p.split,
            speed_factor: s.image.speed_factor,
            font_id: s.image.font_id,
            fg: s.image.colors.fg,
            bg: s.image.colors.bg,
        });
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        image_shape: [cfg.render.height, cfg.render.width, cfg.render.channels],
        entries,
        root: root.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

/// Reads a standalone `H x W x C` image file as written by [`build_corpus`].
pub fn load_word_image(path: impl AsRef<Path>) -> Result<WordImage> {
    let raw = tsr1::load(path.as_ref())?;
    let &[height, width, channels] = raw.shape.as_slice() else {
        return Err(invalid(format!("{}: expected an H x W x C image, got shape {:?}", path.as_ref().display(), raw.shape)));
    };
    Ok(WordImage {
        pixels: raw.data,
        height,
        width,
        channels,
        word: String::new(),
        font_id: 0,
        colors: Colors::BLACK_ON_WHITE,
        speed_factor: 1.0,
    })
}

/// Writes a mel as an `n_mels x frames` F32 tensor.
pub fn save_mel(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    tsr1::save(path, &RawTensor::new(vec![mel.n_mels, mel.frames], mel.data.clone()), DType::F32)?;
    Ok(())
}

impl CorpusManifest {
    pub fn path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn save(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(self.path(), text)?;
        Ok(())
    }

    /// Loads `manifest.json`, or the manifest inside a corpus directory.
    pub fn load(path: impl AsRef<Path>) -> Result<CorpusManifest> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join("manifest.json");
        }
        let text = fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut m: CorpusManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(invalid(format!("manifest version {} unsupported", m.version)));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_image(&self, e: &ManifestEntry) -> Result<WordImage> {
        let raw = tsr1::load(self.root.join(&e.image))?;
        if raw.shape != self.image_shape {
            return Err(invalid(format!("image {} has shape {:?}", e.image, raw.shape)));
        }
        let [height, width, channels] = self.image_shape;
        Ok(WordImage {
            pixels: raw.data,
            height,
            width,
            channels,
            word: e.word.clone(),
            font_id: e.font_id,
            colors: Colors { fg: e.fg, bg: e.bg },
            speed_factor: e.speed_factor,
        })
    }

    pub fn load_mel(&self, e: &ManifestEntry) -> Result<MelSpectrogram> {
        let raw = tsr1::load(self.root.join(&e.mel))?;
        if raw.shape.len() != 2 || raw.shape[0] != self.config.audio.n_mels {
            return Err(invalid(format!("mel {} has shape {:?}", e.mel, raw.shape)));
        }
        MelSpectrogram::new(raw.data, raw.shape[0], raw.shape[1], self.config.audio)
    }

    /// Entry counts per word.
    pub fn word_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.word.as_str()).or_insert(0) += 1;
        }
        m
    }

    pub fn word_list(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.word.as_str()).collect()
    }

    /// Checks every structural invariant, reading each referenced file.
    pub fn validate(&self) -> Result<()> {
        let mut seen_files = BTreeSet::new();
        for e in &self.entries {
            let fail = |m: &str| Err(invalid(format!("entry {}: {m}", e.index)));
            let slots = e.slot_seq()?;
            let ph = e.phoneme_seq()?;
            if slots.n_phonemes != e.n_phonemes || ph.len() != e.n_phonemes || slots.phonemes() != ph.as_slice() {
                return fail("phonemes disagree with slots");
            }
            if e.durations.len() != slots.symbols.len() {
                return fail("durations and slots differ in length");
            }
            for (i, &d) in e.durations.iter().enumerate() {
                if (i < e.n_phonemes) != (d > 0) {
                    return fail("duration positivity does not match the ε tail");
                }
            }
            let mel = self.load_mel(e)?;
            if e.durations.iter().sum::<usize>() != mel.frames || mel.frames != e.frames {
                return fail("duration sum differs from mel length");
            }
            self.load_image(e)?;
            if !seen_files.insert(&e.image) || !seen_files.insert(&e.mel) {
                return fail("file shared between entries");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_cover_every_split() {
        let s = SplitFractions { train: 0.8, val: 0.1, test: 0.1 };
        assert_eq!(split_counts(10, s), (1, 1));
        assert_eq!(split_counts(30, s), (3, 3));
        assert_eq!(split_counts(1, s), (0, 0));
    }

    #[test]
    fn default_plan_counts() {
        let cfg = CorpusConfig::default();
        let plans = plan(&cfg).unwrap();
        let short = plans.iter().filter(|p| p.phonemes.len() < 4).count();
        assert_eq!(short, 20 * 30);
        assert_eq!(plans.len(), 20 * 30 + 30 * 10);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<CorpusConfig>(r#"{"samples_per_wrd": 3}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn empty_word_list_is_a_config_error() {
        let cfg = CorpusConfig { words: vec![], ..CorpusConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
