//! Paired (original, coded) dataset assembly and the per-epoch batch
//! iterator.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;

use super::{chunk_training_offsets, preemphasis, read_wav, AudioError};

#[derive(Debug, Clone)]
pub struct PairItem {
    pub name: String,
    pub original: Vec<f32>,
    pub coded: Vec<f32>,
}

/// One training window: item index plus sample offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef {
    pub item: usize,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub items: Vec<PairItem>,
    pub chunks: Vec<ChunkRef>,
    /// One line per skipped file: unmatched or too short.
    pub skipped: Vec<String>,
    pub window: usize,
}

fn wav_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, AudioError> {
    let entries = std::fs::read_dir(dir).map_err(|e| AudioError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut out = BTreeMap::new();
    for entry in entries.flatten() {
        let path = entry.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned(), path);
        }
    }
    Ok(out)
}

/// Match WAVs across the two directories by file name, truncate each pair
/// to the shorter clip, and index every full training window. Unmatched or
/// too-short files land in the skip report; unreadable files are fatal.
pub fn pair_dataset(
    original_dir: &Path,
    coded_dir: &Path,
    window: usize,
    hop: usize,
) -> Result<PairedDataset, AudioError> {
    let originals = wav_files(original_dir)?;
    let codeds = wav_files(coded_dir)?;

    let mut items = Vec::new();
    let mut chunks = Vec::new();
    let mut skipped = Vec::new();
    for (name, opath) in &originals {
        let Some(cpath) = codeds.get(name) else {
            skipped.push(format!("{}: no coded counterpart", name));
            continue;
        };
        let original = read_wav(opath)?;
        let coded = read_wav(cpath)?;
        let len = original.samples.len().min(coded.samples.len());
        let offsets = chunk_training_offsets(len, window, hop);
        if offsets.is_empty() {
            skipped.push(format!(
                "{}: {} usable samples, shorter than one {}-sample window",
                name, len, window
            ));
            continue;
        }
        let item = items.len();
        chunks.extend(offsets.into_iter().map(|offset| ChunkRef { item, offset }));
        let mut original = original.samples;
        original.truncate(len);
        let mut coded = coded.samples;
        coded.truncate(len);
        items.push(PairItem {
            name: name.clone(),
            original,
            coded,
        });
    }
    for name in codeds.keys() {
        if !originals.contains_key(name) {
            skipped.push(format!("{}: no original counterpart", name));
        }
    }

    if items.is_empty() {
        return Err(AudioError::EmptyDataset(format!(
            "nothing usable under {} and {}",
            original_dir.display(),
            coded_dir.display()
        )));
    }
    Ok(PairedDataset {
        items,
        chunks,
        skipped,
        window,
    })
}

/// A batch of n paired windows, each flattened as an n x 1 x T buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub original: Vec<f32>,
    pub coded: Vec<f32>,
}

/// One epoch's batches: a seeded permutation of all windows, grouped into
/// full batches (the trailing partial batch is dropped), optionally
/// pre-emphasized per window on both sides.
pub fn epoch_batches(
    dataset: &PairedDataset,
    batch_size: usize,
    preemph: Option<f32>,
    rng: &mut ChaCha20Rng,
) -> Vec<Batch> {
    let t = dataset.window;
    let mut order: Vec<usize> = (0..dataset.chunks.len()).collect();
    order.shuffle(rng);

    order
        .chunks_exact(batch_size)
        .map(|group| {
            let mut original = Vec::with_capacity(batch_size * t);
            let mut coded = Vec::with_capacity(batch_size * t);
            for &ci in group {
                let c = dataset.chunks[ci];
                let item = &dataset.items[c.item];
                let o = &item.original[c.offset..c.offset + t];
                let x = &item.coded[c.offset..c.offset + t];
                match preemph {
                    Some(coeff) => {
                        original.extend_from_slice(&preemphasis(o, coeff));
                        coded.extend_from_slice(&preemphasis(x, coeff));
                    }
                    None => {
                        original.extend_from_slice(o);
                        coded.extend_from_slice(x);
                    }
                }
            }
            Batch {
                n: batch_size,
                original,
                coded,
            }
        })
        .collect()
}
