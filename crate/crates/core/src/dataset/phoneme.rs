use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Phoneme names for ids `1..=P`; id 0 is the ε placeholder.
pub const INVENTORY: [&str; 20] = [
    "AA", "AE", "AH", "EH", "IH", "IY", "OW", "UW", "B", "D", "F", "G", "K", "L", "M", "N", "P", "R", "S", "T",
];

/// Number of real phonemes.
pub const P: usize = INVENTORY.len();

/// Number of output slots per image.
pub const L: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phoneme(pub u8);

impl Phoneme {
    pub const EPSILON: Phoneme = Phoneme(0);

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn is_epsilon(self) -> bool {
        self.0 == 0
    }

    pub fn from_name(name: &str) -> Option<Phoneme> {
        INVENTORY.iter().position(|&n| n == name).map(|i| Phoneme(i as u8 + 1))
    }

    pub fn name(self) -> &'static str {
        if self.is_epsilon() {
            "ε"
        } else {
            INVENTORY[self.id() - 1]
        }
    }

    pub fn is_vowel(self) -> bool {
        (1..=8).contains(&self.0)
    }

    /// Every non-ε phoneme in id order.
    pub fn all() -> impl Iterator<Item = Phoneme> {
        (1..=P as u8).map(Phoneme)
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a space-separated phoneme string such as `"K AE T"`.
pub fn parse_phonemes(s: &str) -> Result<Vec<Phoneme>> {
    s.split_whitespace()
        .map(|n| Phoneme::from_name(n).ok_or_else(|| invalid(format!("unknown phoneme {n:?}"))))
        .collect()
}

pub fn phoneme_string(seq: &[Phoneme]) -> String {
    seq.iter().map(|p| p.name()).collect::<Vec<_>>().join(" ")
}

/// Fixed-length slot sequence: `n_phonemes` phonemes followed by ε.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSeq {
    pub symbols: Vec<Phoneme>,
    pub n_phonemes: usize,
}

impl SlotSeq {
    pub fn ids(&self) -> Vec<usize> {
        self.symbols.iter().map(|p| p.id()).collect()
    }

    pub fn phonemes(&self) -> &[Phoneme] {
        &self.symbols[..self.n_phonemes]
    }

    pub fn from_ids(ids: &[usize]) -> Result<SlotSeq> {
        let symbols: Vec<Phoneme> = ids
            .iter()
            .map(|&i| if i <= P { Ok(Phoneme(i as u8)) } else { Err(invalid(format!("phoneme id {i} > {P}"))) })
            .collect::<Result<_>>()?;
        let n = symbols.iter().take_while(|p| !p.is_epsilon()).count();
        if n == 0 || symbols[n..].iter().any(|p| !p.is_epsilon()) {
            return Err(invalid("slot sequence must be phonemes followed by an ε tail"));
        }
        Ok(SlotSeq { symbols, n_phonemes: n })
    }
}

pub fn pad_to_slots(phonemes: &[Phoneme], l: usize) -> Result<SlotSeq> {
    if phonemes.is_empty() {
        return Err(invalid("cannot pad an empty phoneme sequence"));
    }
    if phonemes.len() > l {
        return Err(invalid(format!("{} phonemes exceed {l} slots", phonemes.len())));
    }
    if phonemes.iter().any(|p| p.is_epsilon()) {
        return Err(invalid("ε inside a phoneme sequence"));
    }
    let mut symbols = phonemes.to_vec();
    symbols.resize(l, Phoneme::EPSILON);
    Ok(SlotSeq { symbols, n_phonemes: phonemes.len() })
}
