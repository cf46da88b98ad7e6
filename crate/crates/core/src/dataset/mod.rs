//! Synthetic corpus: rendered word images, phoneme targets and oracle mels.

pub mod corpus;
pub mod font;
pub mod g2p;
pub mod oracle;
pub mod phoneme;
pub mod render;

pub use corpus::{build_corpus, config_hash, load_word_image, save_mel, CorpusConfig, CorpusManifest, ManifestEntry, Split, SplitFractions};
pub use g2p::{g2p_lookup, LEXICON};
pub use oracle::{reconstruct_oracle_mel, synth_oracle_mel, AudioConfig, MelSpectrogram, TemplateTable};
pub use phoneme::{pad_to_slots, parse_phonemes, phoneme_string, Phoneme, SlotSeq, L, P};
pub use render::{render_word_image, Colors, RenderConfig, WordImage};
