//! The three training stages and their shared step loop.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use its_tensor::{dropout_seed, no_grad, Adam, ParamStore, Precision, PrecisionGuard, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{config_hash, CorpusManifest, MelSpectrogram, Split, SlotSeq, WordImage};
use crate::encoder::{decode_slots, encoder_loss, slot_argmax, Encoder, CLASSES};
use crate::error::{invalid, Error, Result};
use crate::expansion::round_durations;
use crate::nn::Mode;

use super::augment::augment;
use super::checkpoint::{Checkpoint, CheckpointMeta, LOG_FILE};
use super::config::{ComputePrecision, ModelConfig, Stage, TrainConfig};
use super::model::{Backend, EncoderModel, ItsModel, TtsModel};

/// Kernel thread count recorded in artifacts, from `ITS_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var("ITS_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Stream ids for per-sample augmentation noise.
const AUGMENT_STREAM_BASE: u64 = 1 << 24;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where the checkpoint and `train_log.jsonl` are written.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint of the same stage.
    pub resume: Option<Checkpoint>,
    /// Print each log record to stdout as one JSON line.
    pub echo: bool,
    /// Stop before this step while keeping the schedule of the full run.
    pub stop_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: Stage,
    pub step: usize,
    pub lr: f64,
    pub losses: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    /// Metrics of the last held-out evaluation.
    pub fn final_metrics(&self) -> BTreeMap<String, f64> {
        self.log.iter().rev().find(|r| !r.metrics.is_empty()).map(|r| r.metrics.clone()).unwrap_or_default()
    }
}

/// Corpus items of one split, loaded into memory.
pub struct Items {
    pub images: Vec<WordImage>,
    pub slots: Vec<SlotSeq>,
    pub durations: Vec<Vec<usize>>,
    pub mels: Vec<MelSpectrogram>,
}

impl Items {
    pub fn load(manifest: &CorpusManifest, split: Split) -> Result<Items> {
        let mut items = Items { images: vec![], slots: vec![], durations: vec![], mels: vec![] };
        for e in manifest.split(split) {
            items.images.push(manifest.load_image(e)?);
            items.slots.push(e.slot_seq()?);
            items.durations.push(e.durations.clone());
            items.mels.push(manifest.load_mel(e)?);
        }
        Ok(items)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Corpus positions for `step`: consecutive slices of per-epoch permutations,
/// so the order depends only on `(seed, step)`.
pub fn batch_indices(seed: u64, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut cache: Option<(usize, Vec<usize>)> = None;
    (0..batch)
        .map(|j| {
            let g = step * batch + j;
            let epoch = g / n;
            if cache.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(dropout_seed(seed, 0x6261_7463, epoch as u64)));
                cache = Some((epoch, perm));
            }
            cache.as_ref().expect("filled above").1[g % n]
        })
        .collect()
}

fn stack_rows(rows: &[&[f64]], l: usize, d: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::new(data, &[rows.len(), l, d])?)
}

struct Loop {
    cfg: TrainConfig,
    adam: Adam,
    log: Vec<LogRecord>,
    writer: Option<BufWriter<File>>,
    echo: bool,
    end: usize,
}

/// Loss terms of one step: the scalar to minimize and named parts for logging.
type StepOutput = (Tensor, Vec<(&'static str, f64)>);

impl Loop {
    fn new(cfg: &TrainConfig, adam: Adam, opts: &TrainOptions) -> Result<Loop> {
        let writer = match &opts.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let f = OpenOptions::new().create(true).append(opts.resume.is_some()).write(true).truncate(opts.resume.is_none()).open(dir.join(LOG_FILE))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        let end = opts.stop_at.unwrap_or(cfg.steps).min(cfg.steps);
        Ok(Loop { cfg: cfg.clone(), adam, log: vec![], writer, echo: opts.echo, end })
    }

    fn record(&mut self, r: LogRecord) -> Result<()> {
        let line = serde_json::to_string(&r)?;
        if let Some(w) = &mut self.writer {
            writeln!(w, "{line}")?;
        }
        if self.echo {
            println!("{line}");
        }
        self.log.push(r);
        Ok(())
    }

    fn run(
        &mut self,
        store: &ParamStore,
        start: usize,
        mut step_fn: impl FnMut(usize) -> Result<StepOutput>,
        mut eval_fn: impl FnMut() -> Result<Vec<(&'static str, f64)>>,
    ) -> Result<()> {
        self.end = self.end.max(start);
        let (total, end) = (self.cfg.steps, self.end);
        for step in start..end {
            store.zero_grad();
            let (loss, parts) = step_fn(step)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Divergence { step: step as u64, loss: value });
            }
            loss.backward()?;
            let lr = self.cfg.lr.at(step, total);
            self.adam.step(store, lr)?;
            let last = step + 1 == end;
            let eval_now = last || (self.cfg.eval_every > 0 && (step + 1) % self.cfg.eval_every == 0);
            if eval_now || step % self.cfg.log_every == 0 {
                let mut losses: BTreeMap<String, f64> = parts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                losses.insert("total".into(), value);
                let metrics = if eval_now { eval_fn()?.into_iter().map(|(k, v)| (k.to_string(), v)).collect() } else { BTreeMap::new() };
                self.record(LogRecord { stage: self.cfg.stage, step, lr, losses, metrics })?;
            }
        }
        if start >= end {
            let metrics = eval_fn()?.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            self.record(LogRecord { stage: self.cfg.stage, step: end, lr: 0.0, losses: BTreeMap::new(), metrics })?;
        }
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(())
    }

    fn finish(self, store: &ParamStore, manifest: &CorpusManifest, model: &ModelConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
        let meta = CheckpointMeta {
            stage: self.cfg.stage,
            step: self.end,
            config_hash: config_hash(&self.cfg),
            corpus_hash: manifest.config_hash.clone(),
            seed: self.cfg.seed,
            frozen: store.frozen_names(),
            threads: thread_count(),
            optimizer_step: 0,
            model: model.clone(),
        };
        let checkpoint = Checkpoint::capture(meta, store, &self.adam);
        if let Some(dir) = &opts.out_dir {
            checkpoint.save(dir)?;
        }
        Ok(TrainOutcome { checkpoint, log: self.log })
    }
}

fn precision_guard(cfg: &TrainConfig) -> PrecisionGuard {
    PrecisionGuard::new(match cfg.precision {
        ComputePrecision::F32 => Precision::F32,
        ComputePrecision::F64 => Precision::F64,
    })
}

/// Model config with the audio settings taken from the corpus.
fn model_config(cfg: &TrainConfig, manifest: &CorpusManifest) -> Result<ModelConfig> {
    let mut m = cfg.model.clone();
    m.audio = manifest.config.audio;
    let [h, w, c] = manifest.image_shape;
    if [m.encoder.height, m.encoder.width, m.encoder.channels] != [h, w, c] {
        return Err(Error::Config(format!("encoder input {:?} does not match corpus images {:?}", [m.encoder.height, m.encoder.width, m.encoder.channels], [h, w, c])));
    }
    if m.encoder.slots != manifest.config.slots {
        return Err(Error::Config(format!("encoder has {} slots, corpus {}", m.encoder.slots, manifest.config.slots)));
    }
    m.validate()?;
    Ok(m)
}

fn load_manifest(cfg: &TrainConfig, stage: Stage) -> Result<CorpusManifest> {
    cfg.validate()?;
    if cfg.stage != stage {
        return Err(Error::StageMismatch { expected: stage.name().into(), found: cfg.stage.name().into() });
    }
    let manifest = CorpusManifest::load(&cfg.manifest)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Starting step and optimizer, from the resume checkpoint if there is one.
fn resume_state(opts: &TrainOptions, stage: Stage, store: &ParamStore, model: &ModelConfig) -> Result<(usize, Adam)> {
    match &opts.resume {
        None => Ok((0, Adam::default())),
        Some(ck) => {
            ck.expect_stage(stage)?;
            if &ck.meta.model != model {
                return Err(Error::Config("resume checkpoint was trained with a different model config".into()));
            }
            ck.load_into(store, "")?;
            Ok((ck.meta.step, ck.adam()))
        }
    }
}

/// Held-out recognition quality of the image encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecognitionMetrics {
    /// Fraction of all slots, ε included, classified correctly.
    pub slot_accuracy: f64,
    /// Same, restricted to slots holding a phoneme.
    pub phoneme_slot_accuracy: f64,
    pub word_accuracy: f64,
}

pub fn recognition_metrics(encoder: &Encoder, images: &[WordImage], slots: &[SlotSeq]) -> Result<RecognitionMetrics> {
    if images.is_empty() {
        return Err(invalid("no held-out images"));
    }
    let (mut ok, mut n, mut ph_ok, mut ph_n, mut words) = (0usize, 0usize, 0usize, 0usize, 0usize);
    no_grad(|| -> Result<()> {
        for (chunk, targets) in images.chunks(32).zip(slots.chunks(32)) {
            let refs: Vec<&WordImage> = chunk.iter().collect();
            let logits = encoder.classify(&encoder.encode_images(&refs)?)?.to_vec();
            let per = logits.len() / chunk.len();
            for (row, t) in logits.chunks(per).zip(targets) {
                let pred = slot_argmax(row, CLASSES);
                for (p, q) in pred.iter().zip(&t.symbols) {
                    n += 1;
                    ok += (p == q) as usize;
                    if !q.is_epsilon() {
                        ph_n += 1;
                        ph_ok += (p == q) as usize;
                    }
                }
                words += (decode_slots(row, CLASSES) == t.phonemes()) as usize;
            }
        }
        Ok(())
    })?;
    Ok(RecognitionMetrics {
        slot_accuracy: ok as f64 / n as f64,
        phoneme_slot_accuracy: ph_ok as f64 / ph_n.max(1) as f64,
        word_accuracy: words as f64 / images.len() as f64,
    })
}

/// Held-out duration and reconstruction quality of a backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionMetrics {
    /// ε slots whose rounded predicted duration is zero.
    pub epsilon_zero_rate: f64,
    /// Phoneme slots whose rounded duration is within two frames of the truth.
    pub within_two_rate: f64,
    /// Mean L1 of mels decoded from the prior mean with ground-truth durations.
    pub mel_l1: f64,
}

/// `hidden` holds one `[1, L, D]` row per item.
pub fn expansion_metrics(backend: &Backend, hidden: &[Tensor], slots: &[SlotSeq], durations: &[Vec<usize>], mels: &[MelSpectrogram]) -> Result<ExpansionMetrics> {
    if hidden.is_empty() {
        return Err(invalid("no held-out items"));
    }
    let (mut eps_ok, mut eps_n, mut ph_ok, mut ph_n, mut l1) = (0usize, 0usize, 0usize, 0usize, 0.0);
    no_grad(|| -> Result<()> {
        for i in 0..hidden.len() {
            let raw = backend.predict_durations(&hidden[i])?.swap_remove(0);
            let pred = round_durations(&raw);
            for ((p, &t), s) in pred.iter().zip(&durations[i]).zip(&slots[i].symbols) {
                if s.is_epsilon() {
                    eps_n += 1;
                    eps_ok += (*p == 0) as usize;
                } else {
                    ph_n += 1;
                    ph_ok += (p.abs_diff(t) <= 2) as usize;
                }
            }
            let s = hidden[i].shape();
            let row = hidden[i].reshape(&[s[1], s[2]])?;
            let mel = backend.render(&row, &durations[i], mels[i].config)?;
            l1 += mel.l1(&mels[i])?;
        }
        Ok(())
    })?;
    Ok(ExpansionMetrics {
        epsilon_zero_rate: eps_ok as f64 / eps_n.max(1) as f64,
        within_two_rate: ph_ok as f64 / ph_n.max(1) as f64,
        mel_l1: l1 / hidden.len() as f64,
    })
}

fn expansion_parts(m: ExpansionMetrics) -> Vec<(&'static str, f64)> {
    vec![("epsilon_zero_rate", m.epsilon_zero_rate), ("within_two_rate", m.within_two_rate), ("mel_l1", m.mel_l1)]
}

/// Stage 1: slot cross-entropy on the image encoder.
pub fn train_encoder(cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let manifest = load_manifest(cfg, Stage::Encoder)?;
    let mcfg = model_config(cfg, &manifest)?;
    let _precision = precision_guard(cfg);
    let model = EncoderModel::new(cfg.seed, &mcfg)?;
    let (start, adam) = resume_state(opts, Stage::Encoder, &model.store, &mcfg)?;
    let train = Items::load(&manifest, Split::Train)?;
    let val = Items::load(&manifest, Split::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("corpus needs non-empty train and val splits".into()));
    }
    let mut lp = Loop::new(cfg, adam, opts)?;
    let enc = &model.encoder;
    lp.run(
        &model.store,
        start,
        |step| {
            let idx = batch_indices(cfg.seed, step, cfg.batch_size, train.len());
            let augmented: Vec<WordImage>;
            let imgs: Vec<&WordImage> = match &cfg.augment {
                Some(a) => {
                    augmented = idx.iter().enumerate().map(|(j, &i)| augment(&train.images[i], a, dropout_seed(cfg.seed, AUGMENT_STREAM_BASE + j as u64, step as u64))).collect();
                    augmented.iter().collect()
                }
                None => idx.iter().map(|&i| &train.images[i]).collect(),
            };
            let targets: Vec<&SlotSeq> = idx.iter().map(|&i| &train.slots[i]).collect();
            let ce = encoder_loss(&enc.classify(&enc.encode_images(&imgs)?)?, &targets)?;
            let v = ce.item();
            Ok((ce.scale(cfg.loss_weights.ce), vec![("ce", v)]))
        },
        || {
            let m = recognition_metrics(enc, &val.images, &val.slots)?;
            Ok(vec![("slot_accuracy", m.slot_accuracy), ("phoneme_slot_accuracy", m.phoneme_slot_accuracy), ("word_accuracy", m.word_accuracy)])
        },
    )?;
    lp.finish(&model.store, &manifest, &mcfg, opts)
}

/// Frozen-encoder hidden rows, one `[1, L, D]` tensor per image.
fn encode_all(encoder: &Encoder, images: &[WordImage]) -> Result<Vec<Tensor>> {
    no_grad(|| {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let refs: Vec<&WordImage> = chunk.iter().collect();
            let h = encoder.encode_images(&refs)?;
            for i in 0..chunk.len() {
                out.push(h.slice(0, i, i + 1)?.detach());
            }
        }
        Ok(out)
    })
}

/// Stage 2: duration predictor, projection and mel generator on top of a frozen encoder.
pub fn train_its(cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let manifest = load_manifest(cfg, Stage::Its)?;
    let mcfg = model_config(cfg, &manifest)?;
    let enc_path = cfg.init_checkpoint.as_ref().ok_or_else(|| Error::Config("its stage requires init_checkpoint".into()))?;
    let enc_ck = Checkpoint::load(enc_path)?;
    enc_ck.expect_stage(Stage::Encoder)?;
    if enc_ck.meta.model.encoder != mcfg.encoder {
        return Err(Error::Config("encoder checkpoint was trained with a different encoder config".into()));
    }
    let _precision = precision_guard(cfg);
    let mut model = ItsModel::new(cfg.seed, &mcfg)?;
    enc_ck.load_into(&model.store, "encoder/")?;
    model.store.freeze_prefix("encoder/");
    let (start, adam) = resume_state(opts, Stage::Its, &model.store, &mcfg)?;
    let train = Items::load(&manifest, Split::Train)?;
    let val = Items::load(&manifest, Split::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("corpus needs non-empty train and val splits".into()));
    }
    let train_h = encode_all(&model.encoder, &train.images)?;
    let val_h = encode_all(&model.encoder, &val.images)?;
    let (l, d) = (mcfg.encoder.slots, mcfg.encoder.hidden);
    let mut lp = Loop::new(cfg, adam, opts)?;
    let backend = &model.backend;
    lp.run(
        &model.store,
        start,
        |step| {
            let idx = batch_indices(cfg.seed, step, cfg.batch_size, train.len());
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| train_h[i].to_vec()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let hidden = stack_rows(&refs, l, d)?;
            backend_step(backend, cfg, step, &hidden, &idx, &train)
        },
        || Ok(expansion_parts(expansion_metrics(backend, &val_h, &val.slots, &val.durations, &val.mels)?)),
    )?;
    verify_frozen(&model.store, &enc_ck)?;
    lp.finish(&model.store, &manifest, &mcfg, opts)
}

fn backend_step(backend: &Backend, cfg: &TrainConfig, step: usize, hidden: &Tensor, idx: &[usize], items: &Items) -> Result<StepOutput> {
    let durs: Vec<Vec<usize>> = idx.iter().map(|&i| items.durations[i].clone()).collect();
    let mels: Vec<&MelSpectrogram> = idx.iter().map(|&i| &items.mels[i]).collect();
    let mode = Mode::Train { seed: cfg.seed, step: step as u64 };
    let out = backend.losses(hidden, &durs, &mels, mode, cfg.kl_weight_at(step))?;
    let w = cfg.loss_weights;
    let parts = vec![("duration", out.duration.item()), ("mel", out.mel.item()), ("l1", out.l1), ("kl", out.kl)];
    Ok((out.duration.scale(w.dur).add(&out.mel.scale(w.mel))?, parts))
}

/// Checks that every encoder parameter still equals its stage-1 value bit for bit.
fn verify_frozen(store: &ParamStore, enc_ck: &Checkpoint) -> Result<()> {
    for (name, t) in enc_ck.params.iter().filter(|(n, _)| n.starts_with("encoder/")) {
        let p = store.get(name).ok_or_else(|| invalid(format!("missing parameter {name}")))?;
        let same = p.tensor.to_vec().iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(invalid(format!("frozen parameter {name} changed during training")));
        }
    }
    Ok(())
}

/// Baseline TTS: phoneme embedding and linguistic encoder trained jointly with the backend.
pub fn train_tts_baseline(cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let manifest = load_manifest(cfg, Stage::TtsBaseline)?;
    let mcfg = model_config(cfg, &manifest)?;
    let _precision = precision_guard(cfg);
    let model = TtsModel::new(cfg.seed, &mcfg)?;
    let (start, adam) = resume_state(opts, Stage::TtsBaseline, &model.store, &mcfg)?;
    let train = Items::load(&manifest, Split::Train)?;
    let val = Items::load(&manifest, Split::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("corpus needs non-empty train and val splits".into()));
    }
    let mut lp = Loop::new(cfg, adam, opts)?;
    let tts = &model;
    lp.run(
        &model.store,
        start,
        |step| {
            let idx = batch_indices(cfg.seed, step, cfg.batch_size, train.len());
            let ids: Vec<Vec<usize>> = idx.iter().map(|&i| train.slots[i].ids()).collect();
            let hidden = tts.hidden(&ids, Mode::Train { seed: cfg.seed, step: step as u64 })?;
            backend_step(&tts.backend, cfg, step, &hidden, &idx, &train)
        },
        || {
            let hidden = no_grad(|| val.slots.iter().map(|s| tts.hidden(&[s.ids()], Mode::Eval)).collect::<Result<Vec<_>>>())?;
            Ok(expansion_parts(expansion_metrics(&tts.backend, &hidden, &val.slots, &val.durations, &val.mels)?))
        },
    )?;
    lp.finish(&model.store, &manifest, &mcfg, opts)
}

/// Runs the stage named in `cfg`.
pub fn train(cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    match cfg.stage {
        Stage::Encoder => train_encoder(cfg, opts),
        Stage::Its => train_its(cfg, opts),
        Stage::TtsBaseline => train_tts_baseline(cfg, opts),
    }
}

impl EncoderModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(Stage::Encoder)?;
        let m = EncoderModel::new(ck.meta.seed, &ck.meta.model)?;
        ck.load_into(&m.store, "")?;
        Ok(m)
    }
}

impl ItsModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(Stage::Its)?;
        let mut m = ItsModel::new(ck.meta.seed, &ck.meta.model)?;
        ck.load_into(&m.store, "")?;
        m.store.freeze_prefix("encoder/");
        Ok(m)
    }
}

impl TtsModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(Stage::TtsBaseline)?;
        let m = TtsModel::new(ck.meta.seed, &ck.meta.model)?;
        ck.load_into(&m.store, "")?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(3, s, 2, n)).collect();
        seen.sort();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert_eq!(batch_indices(3, 7, 3, n), batch_indices(3, 7, 3, n));
        assert_ne!(batch_indices(3, 0, 10, n), batch_indices(4, 0, 10, n));
    }
}
