//! Short-word sample-count ablation: ITS and TTS trained on a full corpus
//! and on one with fewer short-word samples, scored per phoneme length.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CorpusManifest;
use crate::error::{Error, Result};
use crate::pipeline::{train_encoder, train_its, train_tts_baseline, ItsModel, Stage, TrainConfig, TrainOptions, TtsModel};

use super::decode::OracleDecoder;
use super::report::{evaluate_e2e, evaluate_tts, EvalReport, Subset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub encoder: TrainConfig,
    pub its: TrainConfig,
    pub tts: TrainConfig,
    pub lengths: (usize, usize),
    pub short_lengths: (usize, usize),
    pub long_lengths: (usize, usize),
}

/// Shorter schedules than the main recipe; the ablation corpora are smaller.
impl Default for AblationConfig {
    fn default() -> Self {
        let stage = |stage, steps| TrainConfig { steps, ..TrainConfig::for_stage(stage) };
        AblationConfig {
            encoder: stage(Stage::Encoder, 1500),
            its: stage(Stage::Its, 6000),
            tts: stage(Stage::TtsBaseline, 1000),
            lengths: (2, 8),
            short_lengths: (2, 3),
            long_lengths: (7, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub length: usize,
    pub model: String,
    pub per: f64,
    pub n_items: usize,
}

/// PER differences `few - full`; positive means the reduced corpus hurt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Claims {
    pub its_short_gap: f64,
    pub its_long_gap: f64,
    pub tts_short_gap: f64,
    pub few_hurts_short_words: bool,
    pub long_words_less_affected: bool,
    pub its_benefits_more_than_tts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub claims: Claims,
    pub reports: BTreeMap<String, EvalReport>,
}

impl AblationReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("length,model,per,n_items\n");
        for r in &self.rows {
            writeln!(s, "{},{},{:.6},{}", r.length, r.model, r.per, r.n_items).expect("string write");
        }
        s
    }
}

/// Errors unless both corpora hold the same words with identical long-word
/// counts and no more short-word samples in `few` than in `full`.
pub fn check_comparable(full: &CorpusManifest, few: &CorpusManifest) -> Result<()> {
    let bad = |m: String| Err(Error::Config(format!("corpora not comparable: {m}")));
    if full.word_list() != few.word_list() {
        return bad("different word lists".into());
    }
    let (a, b) = (full.word_counts(), few.word_counts());
    let lens: BTreeMap<&str, usize> = full.entries.iter().map(|e| (e.word.as_str(), e.n_phonemes)).collect();
    let mut differs = false;
    for (w, &na) in &a {
        let nb = b[w];
        if full.config.is_short(lens[w]) {
            if nb > na {
                return bad(format!("{w:?} has more samples in the reduced corpus"));
            }
            differs |= nb < na;
        } else if na != nb {
            return bad(format!("long word {w:?} has {na} vs {nb} samples"));
        }
    }
    if !differs {
        return bad("short-word sample counts are identical".into());
    }
    Ok(())
}

/// Trained models of one corpus.
pub struct SystemPair {
    pub its: ItsModel,
    pub tts: TtsModel,
}

/// Trains the encoder, the ITS stage and the TTS baseline on `manifest`, checkpointing under `dir`.
pub fn train_systems(cfg: &AblationConfig, manifest: &Path, dir: &Path) -> Result<SystemPair> {
    let with = |c: &TrainConfig, sub: &str| -> (TrainConfig, TrainOptions) {
        let mut c = c.clone();
        c.manifest = manifest.to_path_buf();
        if c.stage == Stage::Its {
            c.init_checkpoint = Some(dir.join("encoder"));
        }
        (c, TrainOptions { out_dir: Some(dir.join(sub)), ..TrainOptions::default() })
    };
    let (c, o) = with(&cfg.encoder, "encoder");
    train_encoder(&c, &o)?;
    let (c, o) = with(&cfg.its, "its");
    let its = ItsModel::from_checkpoint(&train_its(&c, &o)?.checkpoint)?;
    let (c, o) = with(&cfg.tts, "tts");
    let tts = TtsModel::from_checkpoint(&train_tts_baseline(&c, &o)?.checkpoint)?;
    Ok(SystemPair { its, tts })
}

/// Scores already trained systems on every entry of `eval`.
pub fn compare_systems(cfg: &AblationConfig, full: &SystemPair, few: &SystemPair, eval: &CorpusManifest) -> Result<AblationReport> {
    let dec = OracleDecoder::new(eval.config.audio);
    let mut reports = BTreeMap::new();
    reports.insert("ITS".to_string(), evaluate_e2e(&full.its, eval, Subset::All, &dec)?);
    reports.insert("ITS_few".to_string(), evaluate_e2e(&few.its, eval, Subset::All, &dec)?);
    reports.insert("TTS".to_string(), evaluate_tts(&full.tts, eval, Subset::All, &dec)?);
    reports.insert("TTS_few".to_string(), evaluate_tts(&few.tts, eval, Subset::All, &dec)?);
    let mut rows = Vec::new();
    for (name, r) in &reports {
        for l in cfg.lengths.0..=cfg.lengths.1 {
            if let (Some(&per), Some(&n)) = (r.per_by_length.get(&l), r.items_by_length.get(&l)) {
                rows.push(AblationRow { length: l, model: name.clone(), per, n_items: n });
            }
        }
    }
    rows.sort_by(|a, b| (a.length, &a.model).cmp(&(b.length, &b.model)));
    let bucket = |name: &str, (lo, hi): (usize, usize)| {
        reports[name].per_over(lo..=hi).ok_or_else(|| Error::Config(format!("eval set has no items of length {lo}..={hi}")))
    };
    let its_short_gap = bucket("ITS_few", cfg.short_lengths)? - bucket("ITS", cfg.short_lengths)?;
    let its_long_gap = bucket("ITS_few", cfg.long_lengths)? - bucket("ITS", cfg.long_lengths)?;
    let tts_short_gap = bucket("TTS_few", cfg.short_lengths)? - bucket("TTS", cfg.short_lengths)?;
    let claims = Claims {
        its_short_gap,
        its_long_gap,
        tts_short_gap,
        few_hurts_short_words: its_short_gap > 0.0,
        long_words_less_affected: its_long_gap < its_short_gap,
        its_benefits_more_than_tts: its_short_gap > tts_short_gap,
    };
    Ok(AblationReport { rows, claims, reports })
}

/// Trains all four models, scores them on `eval` and writes `per_by_length.csv`
/// and `ablation.json` under `work_dir`.
pub fn distribution_experiment(cfg: &AblationConfig, full: &Path, few: &Path, eval: &Path, work_dir: &Path) -> Result<AblationReport> {
    let full_m = CorpusManifest::load(full)?;
    let few_m = CorpusManifest::load(few)?;
    let eval_m = CorpusManifest::load(eval)?;
    check_comparable(&full_m, &few_m)?;
    if eval_m.word_list() != full_m.word_list() {
        return Err(Error::Config("eval set must cover the training word list".into()));
    }
    let a = train_systems(cfg, &full_m.path(), &work_dir.join("full"))?;
    let b = train_systems(cfg, &few_m.path(), &work_dir.join("few"))?;
    let report = compare_systems(cfg, &a, &b, &eval_m)?;
    std::fs::create_dir_all(work_dir)?;
    std::fs::write(work_dir.join("per_by_length.csv"), report.csv())?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(work_dir.join("ablation.json"), json)?;
    Ok(report)
}
