use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Condition, DatasetRecord, GrayImage, Split};
use crate::error::{contract, CoreError, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const VOCAB_NAME: &str = "vocab.txt";

/// One manifest line. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub sentences: Vec<String>,
    pub labels: Vec<String>,
    pub style: usize,
    pub split: String,
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.pixels);
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let bad = |detail: &str| contract(format!("{}: {detail}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed PGM header"));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(bad("PGM maxval must be 255"));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() != width * height {
        return Err(bad("PGM pixel data length does not match header"));
    }
    GrayImage::new(width, height, body.to_vec())
}

fn entry_for(record: &DatasetRecord, image: String) -> ManifestEntry {
    ManifestEntry {
        image,
        sentences: record.sentences.clone(),
        labels: record.labels.iter().map(|c| c.name().to_string()).collect(),
        style: record.style,
        split: record.split.as_str().to_string(),
    }
}

/// Writes `rec_%06d.pgm` images and the manifest into `dir`.
pub fn write_dataset(records: &[DatasetRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut manifest = String::new();
    for (i, record) in records.iter().enumerate() {
        let name = format!("rec_{i:06}.pgm");
        write_pgm(&dir.join(&name), &record.image)?;
        let line = serde_json::to_string(&entry_for(record, name)).expect("manifest entries serialize");
        writeln!(manifest, "{line}").expect("write to string");
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest).map_err(|e| CoreError::io(&path, e))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let line = serde_json::to_string(e).expect("manifest entries serialize");
        writeln!(text, "{line}").expect("write to string");
    }
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

/// Parses manifest lines without touching images.
pub fn read_manifest(path: &Path) -> Result<Vec<(usize, ManifestEntry)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|e| (i + 1, e))
                .map_err(|e| CoreError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    detail: e.to_string(),
                })
        })
        .collect()
}

/// Loads every record of the manifest; image paths are relative to the
/// manifest's directory and must be `image_size` square.
pub fn load_dataset(manifest: &Path, image_size: usize) -> Result<Vec<DatasetRecord>> {
    Ok(load_named(manifest, image_size)?.into_iter().map(|(_, r)| r).collect())
}

/// Like [`load_dataset`], keeping each record's manifest image name.
pub fn load_named(manifest: &Path, image_size: usize) -> Result<Vec<(String, DatasetRecord)>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|(line, entry)| {
            let parse_err = |detail: String| CoreError::Parse {
                path: manifest.to_path_buf(),
                line,
                detail,
            };
            let mut labels = entry
                .labels
                .iter()
                .map(|l| Condition::from_name(l).map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            labels.sort();
            labels.dedup();
            let split = Split::parse(&entry.split).map_err(|e| parse_err(e.to_string()))?;
            let image_path = base.join(&entry.image);
            let image = read_pgm(&image_path)?;
            if image.width != image_size || image.height != image_size {
                return Err(contract(format!(
                    "{}: image is {}×{}, expected {image_size}×{image_size}",
                    image_path.display(),
                    image.width,
                    image.height
                )));
            }
            let record = DatasetRecord {
                image,
                sentences: entry.sentences,
                labels,
                style: entry.style,
                split,
            };
            Ok((entry.image, record))
        })
        .collect()
}
