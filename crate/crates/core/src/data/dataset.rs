use std::path::{Path, PathBuf};

use super::io::{load_named, write_dataset, MANIFEST_NAME, VOCAB_NAME};
use super::{build_vocab, synth_generate, tokenize, DatasetRecord, EncodedRecord, Split, Vocabulary};
use crate::error::Result;

/// A dataset directory: manifest, images and vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub vocab: Vocabulary,
    /// Manifest image name of each record.
    pub images: Vec<String>,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    /// Generates a synthetic corpus, builds the vocabulary from its training
    /// split and writes everything to `dir`.
    pub fn synthesize(dir: &Path, n: usize, seed: u64, style_count: usize, min_freq: usize) -> Result<Self> {
        let records = synth_generate(n, seed, style_count)?;
        let vocab = vocab_for(&records, min_freq)?;
        write_dataset(&records, dir)?;
        vocab.save(&dir.join(VOCAB_NAME))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            vocab,
            images: (0..records.len()).map(|i| format!("rec_{i:06}.pgm")).collect(),
            records,
        })
    }

    pub fn load(dir: &Path, image_size: usize) -> Result<Self> {
        let (images, records) = load_named(&dir.join(MANIFEST_NAME), image_size)?.into_iter().unzip();
        Ok(Self {
            dir: dir.to_path_buf(),
            vocab: Vocabulary::load(&dir.join(VOCAB_NAME))?,
            images,
            records,
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn encoded(&self, split: Split, n_max: usize, max_tokens: usize) -> Vec<EncodedRecord> {
        self.indices(split)
            .into_iter()
            .map(|i| EncodedRecord::encode(&self.records[i], &self.vocab, n_max, max_tokens - 1))
            .collect()
    }
}

/// Vocabulary over the training split only.
pub fn vocab_for(records: &[DatasetRecord], min_freq: usize) -> Result<Vocabulary> {
    let tokens: Vec<Vec<String>> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .flat_map(|r| r.sentences.iter().map(|s| tokenize(s)))
        .collect();
    build_vocab(tokens.iter().map(|t| t.as_slice()), min_freq)
}
