//! Synthetic image/report corpus, tokenizer, vocabulary and on-disk format.

mod dataset;
mod io;
mod synth;
mod text;

pub use dataset::{vocab_for, Dataset};
pub use io::{
    load_dataset, load_named, read_manifest, read_pgm, write_dataset, write_manifest, write_pgm, ManifestEntry,
    MANIFEST_NAME, VOCAB_NAME,
};
pub use synth::{assign_splits, render_glyph, synth_generate, templates, IMAGE_SIZE, NOISE_AMPLITUDE, P_CONDITION};
pub use text::{build_vocab, tokenize, Vocabulary, BOS, EOS, PAD, SENT, SPECIALS, UNK};

use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Cardiomegaly,
    Effusion,
    Opacity,
    Pneumothorax,
    Fracture,
    Device,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Cardiomegaly,
        Condition::Effusion,
        Condition::Opacity,
        Condition::Pneumothorax,
        Condition::Fracture,
        Condition::Device,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Cardiomegaly => "cardiomegaly",
            Condition::Effusion => "effusion",
            Condition::Opacity => "opacity",
            Condition::Pneumothorax => "pneumothorax",
            Condition::Fracture => "fracture",
            Condition::Device => "device",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| contract(format!("unknown condition label {name:?}")))
    }

    /// Top-left corner `(row, col)` of the condition's 8×8 block.
    pub fn region(self) -> (usize, usize) {
        match self {
            Condition::Cardiomegaly => (16, 8),
            Condition::Effusion => (24, 24),
            Condition::Opacity => (8, 16),
            Condition::Pneumothorax => (0, 0),
            Condition::Fracture => (0, 24),
            Condition::Device => (24, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(contract(format!("unknown split {other:?}"))),
        }
    }
}

/// 8-bit grayscale raster; intensity `k` stands for `k / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(contract(format!("image {width}×{height} with {} pixels", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub image: GrayImage,
    pub sentences: Vec<String>,
    /// Ascending condition order.
    pub labels: Vec<Condition>,
    pub style: usize,
    pub split: Split,
}

/// A record ready for the model: unit-range pixels and word ids per
/// sentence (no [BOS]/[EOS]), each with the topic slot it is decoded from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub pixels: Vec<f32>,
    pub sentences: Vec<Vec<usize>>,
    /// Distinct slots below `n_max`, one per sentence.
    pub slots: Vec<usize>,
    pub labels: Vec<Condition>,
}

/// Topic slot of each sentence. A report with one sentence per label plus a
/// closing sentence puts label `c` in slot `c.id()` and the closing sentence
/// in the last slot, provided `n_max` leaves room for every condition.
/// Other reports fill slots in sentence order.
pub fn assign_slots(sentence_count: usize, labels: &[Condition], n_max: usize) -> Vec<usize> {
    let canonical =
        n_max > Condition::ALL.len() && sentence_count == labels.len() + 1 && labels.windows(2).all(|w| w[0] < w[1]);
    if canonical {
        labels.iter().map(|c| c.id()).chain([n_max - 1]).collect()
    } else {
        (0..sentence_count.min(n_max)).collect()
    }
}

impl EncodedRecord {
    /// Keeps at most `max_words` words per sentence and drops sentences
    /// that encode to nothing or have no slot.
    pub fn encode(record: &DatasetRecord, vocab: &Vocabulary, n_max: usize, max_words: usize) -> Self {
        let slots = assign_slots(record.sentences.len(), &record.labels, n_max);
        let (sentences, slots) = record
            .sentences
            .iter()
            .zip(slots)
            .map(|(s, slot)| {
                let mut ids = vocab.encode(&tokenize(s));
                ids.truncate(max_words);
                (ids, slot)
            })
            .filter(|(ids, _)| !ids.is_empty())
            .unzip();
        Self {
            pixels: record.image.to_unit(),
            sentences,
            slots,
            labels: record.labels.clone(),
        }
    }
}
