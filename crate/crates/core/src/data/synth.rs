use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Condition, DatasetRecord, GrayImage, Split};
use crate::error::{contract, Result};

pub const IMAGE_SIZE: usize = 32;
pub const NOISE_AMPLITUDE: f64 = 0.05;
pub const P_CONDITION: f64 = 0.35;
const SEVERITY: (f64, f64) = (0.6, 1.0);
const GLYPH: usize = 8;

type Family = [&'static str; 3];

/// Paraphrase families per style: one row per condition, then the closing
/// sentence.
const TEMPLATES: [[Family; 7]; 3] = [
    [
        [
            "the heart is enlarged",
            "the heart size is enlarged",
            "there is cardiomegaly",
        ],
        [
            "there is a pleural effusion",
            "a small pleural effusion is present",
            "there is a small effusion",
        ],
        [
            "there is a focal opacity",
            "a focal airspace opacity is present",
            "there is patchy opacity",
        ],
        [
            "there is a pneumothorax",
            "a small pneumothorax is present",
            "there is a small apical pneumothorax",
        ],
        [
            "there is a rib fracture",
            "a rib fracture is present",
            "there is a healing rib fracture",
        ],
        [
            "a support device is present",
            "there is a central catheter",
            "a catheter is in place",
        ],
        [
            "no other acute abnormality",
            "the lungs are otherwise clear",
            "no other findings",
        ],
    ],
    [
        [
            "the cardiac silhouette is enlarged",
            "the heart is mildly enlarged",
            "there is mild cardiomegaly",
        ],
        [
            "there is a left pleural effusion",
            "small left pleural effusion",
            "pleural fluid is present",
        ],
        [
            "there is a patchy airspace opacity",
            "focal consolidation is present",
            "there is consolidation",
        ],
        [
            "there is a right pneumothorax",
            "small right apical pneumothorax",
            "pneumothorax is present",
        ],
        [
            "there is a fractured rib",
            "an old rib fracture is seen",
            "rib fracture is present",
        ],
        [
            "there is a pacemaker",
            "a pacemaker device is present",
            "support tube is in place",
        ],
        [
            "otherwise the lungs are clear",
            "no other acute findings",
            "the remaining lungs are clear",
        ],
    ],
    [
        [
            "heart size is increased",
            "the heart appears enlarged",
            "cardiomegaly is present",
        ],
        [
            "a pleural effusion is seen",
            "there is pleural fluid",
            "effusion is present",
        ],
        [
            "an opacity is seen in the lung",
            "airspace opacity is present",
            "there is a lung opacity",
        ],
        [
            "a pneumothorax is seen",
            "the lung is partially collapsed",
            "there is a pneumothorax on the right",
        ],
        [
            "a fracture of the rib is seen",
            "there is a broken rib",
            "there is a left rib fracture",
        ],
        [
            "a support device is seen",
            "there is a support tube",
            "the catheter is in place",
        ],
        [
            "the study is otherwise unremarkable",
            "no other abnormality is seen",
            "the lungs are otherwise clear",
        ],
    ],
];

/// Paraphrases for `style`, indexed by condition id, closing sentence last.
pub fn templates(style: usize) -> &'static [Family; 7] {
    &TEMPLATES[style % TEMPLATES.len()]
}

/// Glyph mask value (0 or 1) at `(r, c)` inside the 8×8 block.
pub fn render_glyph(condition: Condition, r: usize, c: usize) -> f64 {
    let (dy, dx) = (r as f64 - 3.5, c as f64 - 3.5);
    let dist = (dy * dy + dx * dx).sqrt();
    let on = match condition {
        Condition::Cardiomegaly => dist <= 3.0,
        Condition::Effusion => (3..5).contains(&r),
        Condition::Opacity => c <= r,
        Condition::Pneumothorax => (3..5).contains(&r) || (3..5).contains(&c),
        Condition::Fracture => (2.0..=3.6).contains(&dist),
        Condition::Device => {
            let dot = |y: usize, x: usize| (y..y + 2).contains(&r) && (x..x + 2).contains(&c);
            dot(1, 1) || dot(5, 5)
        }
    };
    if on {
        1.0
    } else {
        0.0
    }
}

/// Exact 7:1:2 split from a seeded permutation of record indices.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let n_train = (7 * n + 5) / 10;
    let n_val = (n + 5) / 10;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            splits[i] = Split::Train;
        } else if rank < n_train + n_val {
            splits[i] = Split::Val;
        }
    }
    splits
}

fn synth_record(seed: u64, index: usize, style_count: usize, split: Split) -> DatasetRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let labels: Vec<Condition> = Condition::ALL
        .into_iter()
        .filter(|_| rng.random_bool(P_CONDITION))
        .collect();
    let style = rng.random_range(0..style_count);

    let mut canvas: Vec<f64> = (0..IMAGE_SIZE * IMAGE_SIZE)
        .map(|_| rng.random_range(0.0..NOISE_AMPLITUDE))
        .collect();
    for &cond in &labels {
        let severity = rng.random_range(SEVERITY.0..=SEVERITY.1);
        let (r0, c0) = cond.region();
        for r in 0..GLYPH {
            for c in 0..GLYPH {
                canvas[(r0 + r) * IMAGE_SIZE + c0 + c] += severity * render_glyph(cond, r, c);
            }
        }
    }
    let pixels = canvas
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();

    let family = templates(style);
    let mut sentences: Vec<String> = labels
        .iter()
        .map(|c| family[c.id()][rng.random_range(0..3)].to_string())
        .collect();
    sentences.push(family[6][rng.random_range(0..3)].to_string());

    DatasetRecord {
        image: GrayImage {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            pixels,
        },
        sentences,
        labels,
        style,
        split,
    }
}

/// `n` records; record `i` depends only on `(seed, i, style_count)` apart
/// from its split, which comes from [`assign_splits`].
pub fn synth_generate(n: usize, seed: u64, style_count: usize) -> Result<Vec<DatasetRecord>> {
    if n == 0 {
        return Err(contract("synth_generate: n must be at least 1"));
    }
    if style_count == 0 {
        return Err(contract("synth_generate: style_count must be at least 1"));
    }
    let splits = assign_splits(n, seed);
    Ok(splits
        .into_iter()
        .enumerate()
        .map(|(i, split)| synth_record(seed, i, style_count, split))
        .collect())
}
