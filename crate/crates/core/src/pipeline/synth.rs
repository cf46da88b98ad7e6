use its_tensor::no_grad;

use crate::dataset::{pad_to_slots, MelSpectrogram, Phoneme, WordImage};
use crate::encoder::{decode_slots, CLASSES};
use crate::error::{Error, Result};
use crate::nn::Mode;

use super::model::{EncoderModel, ItsModel, TtsModel};

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub raw_durations: Vec<f64>,
    /// Rounded durations used for expansion; they sum to `mel.frames`.
    pub durations: Vec<usize>,
    /// Phonemes read off the slot classifier. The end-to-end path does not
    /// use them; the pipeline synthesizes exactly these.
    pub decoded: Vec<Phoneme>,
}

/// Image to mel through the end-to-end model, decoding from the prior mean.
pub fn synthesize_e2e(image: &WordImage, model: &ItsModel) -> Result<Synthesis> {
    no_grad(|| {
        let hidden = model.encoder.encode_images(&[image])?;
        let decoded = decode_slots(&model.encoder.classify(&hidden)?.to_vec(), CLASSES);
        let out = model.backend.infer(&hidden, model.cfg.audio)?;
        Ok(Synthesis { mel: out.mel, raw_durations: out.raw_durations, durations: out.durations, decoded })
    })
}

/// Image-to-text half of the pipeline: argmax slots truncated at the first ε.
pub fn recognize(image: &WordImage, itt: &EncoderModel) -> Result<Vec<Phoneme>> {
    no_grad(|| Ok(decode_slots(&itt.logits(&[image])?.to_vec(), CLASSES)))
}

/// Text-to-speech half of the pipeline.
pub fn synthesize_tts(phonemes: &[Phoneme], tts: &TtsModel) -> Result<Synthesis> {
    if phonemes.is_empty() {
        return Err(Error::NoTextRecognized);
    }
    let slots = pad_to_slots(phonemes, tts.cfg.encoder.slots)?;
    no_grad(|| {
        let hidden = tts.hidden(&[slots.ids()], Mode::Eval)?;
        let out = tts.backend.infer(&hidden, tts.cfg.audio)?;
        Ok(Synthesis { mel: out.mel, raw_durations: out.raw_durations, durations: out.durations, decoded: phonemes.to_vec() })
    })
}

/// Recognize, then synthesize the recognized phonemes. The hand-off between
/// the two models is a discrete phoneme sequence, so no gradient crosses it.
pub fn synthesize_non_e2e(image: &WordImage, itt: &EncoderModel, tts: &TtsModel) -> Result<Synthesis> {
    let phonemes = recognize(image, itt)?;
    synthesize_tts(&phonemes, tts)
}
