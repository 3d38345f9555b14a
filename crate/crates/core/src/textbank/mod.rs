//! Action descriptions and their text embeddings.
//!
//! Embeddings are produced offline and read from a table file. Anything the
//! table lacks is embedded on the fly by a deterministic character-trigram
//! hash, so every `(action, bin)` resolves to some unit vector.

mod catalog;
mod table;

use std::fmt;

pub use catalog::{bin_phrase, render_description, ActionDescription, BinKey, DescriptionCatalog};
pub use table::{load_embedding_table, table_key, TextEmbeddingTable};

use crate::error::{invalid, Error, Result};
use crate::geometry::ORIENTATION_BINS;
use crate::numerics::MIN_NORM;

/// Default text embedding width.
pub const DEFAULT_TEXT_DIM: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub t: Vec<f64>,
    pub t_hat: Vec<f64>,
}

impl TextEmbedding {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm >= MIN_NORM) {
            return Err(Error::DegenerateVector {
                norm,
                threshold: MIN_NORM,
            });
        }
        let t_hat = t.iter().map(|x| x / norm).collect();
        Ok(Self { t, t_hat })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    Wildcard,
    Fallback,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Exact => "exact",
            Provenance::Wildcard => "wildcard",
            Provenance::Fallback => "fallback",
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Signed counts of hashed lowercase character trigrams, unit-normalized.
pub fn fallback_embed(text: &str, dim: usize, seed: u64) -> Result<TextEmbedding> {
    if text.is_empty() {
        return Err(invalid("cannot embed empty text"));
    }
    if dim == 0 {
        return Err(invalid("embedding dim must be positive"));
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut v = vec![0.0; dim];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = splitmix64(fnv1a(s.as_bytes()) ^ splitmix64(seed));
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    if chars.len() < 3 {
        add(&chars);
    } else {
        chars.windows(3).for_each(&mut add);
    }
    TextEmbedding::new(v)
}

/// Table entry for `(action, bin)`, then `(action, *)`, then the fallback
/// embedding of the rendered description.
pub fn lookup_embedding(
    table: &TextEmbeddingTable,
    catalog: &DescriptionCatalog,
    action: &str,
    orientation_bin: i32,
    seed: u64,
) -> Result<(TextEmbedding, Provenance)> {
    let bin = BinKey::bin(orientation_bin)?;
    if let Some(v) = table.get(&table_key(action, bin)) {
        return Ok((TextEmbedding::new(v.to_vec())?, Provenance::Exact));
    }
    if let Some(v) = table.get(&table_key(action, BinKey::Wildcard)) {
        return Ok((TextEmbedding::new(v.to_vec())?, Provenance::Wildcard));
    }
    let d = render_description(catalog, action, orientation_bin)?;
    Ok((fallback_embed(&d.text, table.dim(), seed)?, Provenance::Fallback))
}

/// Wildcard lookup, used when only the action is known.
pub fn lookup_wildcard(
    table: &TextEmbeddingTable,
    catalog: &DescriptionCatalog,
    action: &str,
    seed: u64,
) -> Result<(TextEmbedding, Provenance)> {
    if let Some(v) = table.get(&table_key(action, BinKey::Wildcard)) {
        return Ok((TextEmbedding::new(v.to_vec())?, Provenance::Wildcard));
    }
    let text = match catalog.get(action, BinKey::Wildcard) {
        Some(t) => t.to_string(),
        None => format!("A person {}.", action.replace('_', " ")),
    };
    Ok((fallback_embed(&text, table.dim(), seed)?, Provenance::Fallback))
}

/// A table with the catalog and seed used to fill its gaps.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBank {
    pub table: TextEmbeddingTable,
    pub catalog: DescriptionCatalog,
    pub seed: u64,
}

impl TextBank {
    pub fn new(table: TextEmbeddingTable, catalog: DescriptionCatalog, seed: u64) -> Self {
        Self { table, catalog, seed }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    /// Per-bin embedding when `bin` is given, the wildcard one otherwise.
    pub fn embedding(&self, action: &str, bin: Option<i32>) -> Result<TextEmbedding> {
        let (e, p) = match bin {
            Some(b) => lookup_embedding(&self.table, &self.catalog, action, b, self.seed)?,
            None => lookup_wildcard(&self.table, &self.catalog, action, self.seed)?,
        };
        if p == Provenance::Fallback {
            log::debug!("text for `{action}` at {bin:?} comes from the fallback embedder");
        }
        Ok(e)
    }
}

/// Embeds the wildcard and every per-bin description of `actions`.
pub fn build_table(
    catalog: &DescriptionCatalog,
    actions: &[String],
    dim: usize,
    seed: u64,
) -> Result<TextEmbeddingTable> {
    let mut table = TextEmbeddingTable::new(dim)?;
    for action in actions {
        let wildcard = match catalog.get(action, BinKey::Wildcard) {
            Some(t) => t.to_string(),
            None => format!("A person {}.", action.replace('_', " ")),
        };
        table.insert(
            table_key(action, BinKey::Wildcard),
            fallback_embed(&wildcard, dim, seed)?.t_hat,
        )?;
        for &bin in &ORIENTATION_BINS {
            let d = render_description(catalog, action, bin)?;
            table.insert(table_key(action, BinKey::Bin(bin)), fallback_embed(&d.text, dim, seed)?.t_hat)?;
        }
    }
    Ok(table)
}
