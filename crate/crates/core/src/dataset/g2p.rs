//! Toy grapheme-to-phoneme conversion: a fixed lexicon backed by
//! deterministic letter rules for out-of-lexicon words.

use super::phoneme::{parse_phonemes, Phoneme, L};
use crate::error::{invalid, Result};

/// The corpus lexicon, ordered by phoneme count.
pub const LEXICON: [(&str, &str); 50] = [
    ("a", "AH"),
    ("at", "AE T"),
    ("it", "IH T"),
    ("no", "N OW"),
    ("go", "G OW"),
    ("me", "M IY"),
    ("see", "S IY"),
    ("do", "D UW"),
    ("cat", "K AE T"),
    ("dog", "D AA G"),
    ("sun", "S AH N"),
    ("red", "R EH D"),
    ("big", "B IH G"),
    ("map", "M AE P"),
    ("bed", "B EH D"),
    ("run", "R AH N"),
    ("pen", "P EH N"),
    ("book", "B UW K"),
    ("fit", "F IH T"),
    ("leg", "L EH G"),
    ("stop", "S T AA P"),
    ("milk", "M IH L K"),
    ("fast", "F AE S T"),
    ("lamp", "L AE M P"),
    ("desk", "D EH S K"),
    ("bread", "B R EH D"),
    ("green", "G R IY N"),
    ("plan", "P L AE N"),
    ("drum", "D R AH M"),
    ("list", "L IH S T"),
    ("frost", "F R AA S T"),
    ("blend", "B L EH N D"),
    ("print", "P R IH N T"),
    ("stamp", "S T AE M P"),
    ("drink", "D R IH N K"),
    ("plant", "P L AE N T"),
    ("trust", "T R AH S T"),
    ("planet", "P L AE N AH T"),
    ("garden", "G AA R D AH N"),
    ("market", "M AA R K AH T"),
    ("sprint", "S P R IH N T"),
    ("basket", "B AE S K AH T"),
    ("silver", "S IH L F AH R"),
    ("blanket", "B L AE N K AH T"),
    ("problem", "P R AA B L AH M"),
    ("trumpet", "T R AH M P AH T"),
    ("lobster", "L AA B S T AH R"),
    ("computer", "K AH M P UW T AH R"),
    ("remember", "R IH M EH M B AH R"),
    ("seventeen", "S EH F AH N T IY N"),
];

pub fn lexicon_words() -> impl Iterator<Item = &'static str> {
    LEXICON.iter().map(|(w, _)| *w)
}

pub fn g2p_lookup(word: &str) -> Result<Vec<Phoneme>> {
    if word.is_empty() {
        return Err(invalid("empty word"));
    }
    if let Some(c) = word.chars().find(|c| !c.is_ascii_lowercase()) {
        return Err(invalid(format!("non-alphabetic character {c:?} in {word:?}")));
    }
    if word.len() > L {
        return Err(invalid(format!("word {word:?} longer than {L} letters")));
    }
    if let Some((_, p)) = LEXICON.iter().find(|(w, _)| *w == word) {
        return parse_phonemes(p);
    }
    Ok(letter_rules(word))
}

const DIGRAPHS: [(&str, &str); 14] = [
    ("ch", "K"),
    ("ck", "K"),
    ("sh", "S"),
    ("th", "T"),
    ("ph", "F"),
    ("ng", "N"),
    ("qu", "K"),
    ("ee", "IY"),
    ("ea", "IY"),
    ("oo", "UW"),
    ("ou", "OW"),
    ("oa", "OW"),
    ("ai", "EH"),
    ("ay", "EH"),
];

fn single(c: u8) -> &'static str {
    match c {
        b'a' => "AE",
        b'b' => "B",
        b'c' | b'k' | b'q' => "K",
        b'd' | b'j' => "D",
        b'e' => "EH",
        b'f' | b'v' => "F",
        b'g' => "G",
        b'h' => "",
        b'i' => "IH",
        b'l' => "L",
        b'm' => "M",
        b'n' => "N",
        b'o' => "AA",
        b'p' => "P",
        b'r' => "R",
        b's' | b'z' => "S",
        b't' => "T",
        b'u' => "AH",
        b'w' => "UW",
        b'x' => "K S",
        b'y' => "IY",
        _ => unreachable!("checked lowercase ascii"),
    }
}

fn letter_rules(word: &str) -> Vec<Phoneme> {
    let mut bytes = word.as_bytes();
    // silent final e after a consonant
    if bytes.len() > 2 && bytes[bytes.len() - 1] == b'e' && !b"aeiou".contains(&bytes[bytes.len() - 2]) {
        bytes = &bytes[..bytes.len() - 1];
    }
    let mut out: Vec<Phoneme> = Vec::new();
    let mut push = |names: &str| {
        for n in names.split_whitespace() {
            let p = Phoneme::from_name(n).expect("rule phonemes are in the inventory");
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
    };
    let mut i = 0;
    while i < bytes.len() {
        if i + 1 < bytes.len() {
            if let Some((_, p)) = DIGRAPHS.iter().find(|(d, _)| d.as_bytes() == &bytes[i..i + 2]) {
                push(p);
                i += 2;
                continue;
            }
        }
        push(single(bytes[i]));
        i += 1;
    }
    if out.is_empty() {
        out.push(Phoneme::from_name("AH").unwrap());
    }
    out.truncate(L);
    out
}
