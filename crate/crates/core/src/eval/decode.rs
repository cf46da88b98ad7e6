//! Template-matching decoder standing in for speech recognition.
//!
//! Each phoneme has two states, "first frame" and "settled", so every
//! decoded segment spans at least two frames. Frames are scored by squared
//! distance to the phoneme's template and the cheapest path is read off by
//! Viterbi.

use crate::dataset::oracle::MIN_DURATION;
use crate::dataset::{AudioConfig, MelSpectrogram, Phoneme, TemplateTable, P};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OracleDecoder {
    pub config: AudioConfig,
    table: TemplateTable,
    /// Cost added at every phoneme change.
    pub switch_penalty: f64,
}

impl OracleDecoder {
    pub fn new(config: AudioConfig) -> Self {
        OracleDecoder { config, table: TemplateTable::new(config.n_mels), switch_penalty: 0.0 }
    }

    pub fn with_switch_penalty(mut self, penalty: f64) -> Self {
        self.switch_penalty = penalty;
        self
    }

    /// Best-scoring phoneme sequence for `mel`.
    pub fn decode(&self, mel: &MelSpectrogram) -> Result<Vec<Phoneme>> {
        if mel.config != self.config || mel.n_mels != self.config.n_mels {
            return Err(Error::Config(format!("mel audio config {:?} does not match decoder {:?}", mel.config, self.config)));
        }
        let t_len = mel.frames;
        if t_len == 0 {
            return Ok(vec![]);
        }
        let f = mel.n_mels;
        let mut emit = vec![0.0; t_len * P];
        for t in 0..t_len {
            for p in 0..P {
                let tpl = self.table.template(Phoneme(p as u8 + 1));
                emit[t * P + p] = (0..f).map(|b| (mel.at(b, t) - tpl[b]).powi(2)).sum();
            }
        }
        // state 2p is the first frame of phoneme p, 2p + 1 is any later frame
        let s_len = 2 * P;
        let mut cost = vec![f64::INFINITY; s_len];
        let mut back = vec![usize::MAX; t_len * s_len];
        for p in 0..P {
            cost[2 * p] = emit[p];
        }
        for t in 1..t_len {
            // cheapest and second-cheapest settled states, for entering a different phoneme
            let (mut b1, mut b2) = (usize::MAX, usize::MAX);
            for p in 0..P {
                let c = cost[2 * p + 1];
                if b1 == usize::MAX || c < cost[2 * b1 + 1] {
                    b2 = b1;
                    b1 = p;
                } else if b2 == usize::MAX || c < cost[2 * b2 + 1] {
                    b2 = p;
                }
            }
            let mut next = vec![f64::INFINITY; s_len];
            for p in 0..P {
                let e = emit[t * P + p];
                let q = if b1 != p { b1 } else { b2 };
                let enter = cost[2 * q + 1] + self.switch_penalty;
                if enter.is_finite() {
                    next[2 * p] = enter + e;
                    back[t * s_len + 2 * p] = 2 * q + 1;
                }
                let (stay, from) = if cost[2 * p] <= cost[2 * p + 1] { (cost[2 * p], 2 * p) } else { (cost[2 * p + 1], 2 * p + 1) };
                if stay.is_finite() {
                    next[2 * p + 1] = stay + e;
                    back[t * s_len + 2 * p + 1] = from;
                }
            }
            cost = next;
        }
        let finals: Box<dyn Iterator<Item = usize>> =
            if t_len >= MIN_DURATION { Box::new((0..P).map(|p| 2 * p + 1)) } else { Box::new(0..s_len) };
        let mut state = finals.min_by(|&a, &b| cost[a].total_cmp(&cost[b])).expect("non-empty state set");
        let mut out = vec![];
        for t in (0..t_len).rev() {
            if state % 2 == 0 {
                out.push(Phoneme((state / 2) as u8 + 1));
            }
            if t > 0 {
                state = back[t * s_len + state];
            }
        }
        out.reverse();
        Ok(out)
    }
}
