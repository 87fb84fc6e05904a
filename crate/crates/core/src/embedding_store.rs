//! Ingestion of precomputed encoder embeddings and their ground-truth labels.
//!
//! Embeddings live in a small binary container:
//!
//! ```text
//! "CXRE" | version: u32 = 1 | rows: u32 | dim: u32 | rows*dim f32, row-major
//! ```
//!
//! All integers and floats are little-endian. Labels and image ids come from a
//! JSON manifest whose records are in the same order as the embedding rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{LabelSet, LabelSetRef, ScanRecord};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"CXRE";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Dense row-major `rows x dim` matrix of single-precision embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::format("embedding dim must be positive"));
        }
        if data.len() != rows * dim {
            return Err(Error::Consistency(format!(
                "payload has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Consistency("ragged embedding rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(format!(
                "embedding file too short for header ({} bytes)",
                bytes.len()
            )));
        }
        if bytes[..4] != EMBEDDING_MAGIC {
            return Err(Error::format("bad embedding magic, expected \"CXRE\""));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != EMBEDDING_VERSION {
            return Err(Error::format(format!("unsupported embedding version {version}")));
        }
        let rows = word(8) as usize;
        let dim = word(12) as usize;
        if dim == 0 {
            return Err(Error::format("embedding dim must be positive"));
        }
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("embedding header overflows"))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::format(format!(
                "payload is {} bytes, header declares {rows}x{dim} ({expected} bytes)",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { rows, dim, data })
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_name: String,
    pub label_set: LabelSet,
    pub records: Vec<ScanRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            r.validate(&self.label_set)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Manifest plus embeddings, row-aligned.
#[derive(Debug, Clone)]
pub struct EmbeddingFrame {
    source_name: String,
    label_set: LabelSetRef,
    records: Vec<ScanRecord>,
    embeddings: EmbeddingMatrix,
}

impl EmbeddingFrame {
    pub fn new(manifest: DatasetManifest, embeddings: EmbeddingMatrix) -> Result<Self> {
        manifest.validate()?;
        if manifest.records.len() != embeddings.rows() {
            return Err(Error::Consistency(format!(
                "manifest has {} records but embedding file has {} rows",
                manifest.records.len(),
                embeddings.rows()
            )));
        }
        Ok(Self {
            source_name: manifest.source_name,
            label_set: Arc::new(manifest.label_set),
            records: manifest.records,
            embeddings,
        })
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn label_set(&self) -> &LabelSetRef {
        &self.label_set
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            source_name: self.source_name.clone(),
            label_set: (*self.label_set).clone(),
            records: self.records.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            source_name: self.source_name.clone(),
            label_set: self.label_set.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            embeddings: self.embeddings.select(indices),
        }
    }

    /// SHA-256 over the embedding container and the label matrix.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.embeddings.to_bytes());
        for r in &self.records {
            h.update(r.image_id.as_bytes());
            h.update([0]);
            h.update(&r.labels);
        }
        hex::encode(h.finalize())
    }
}

pub fn load_frame(manifest_path: impl AsRef<Path>, embedding_path: impl AsRef<Path>) -> Result<EmbeddingFrame> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let embeddings = EmbeddingMatrix::load(embedding_path)?;
    EmbeddingFrame::new(manifest, embeddings)
}

/// Writes the manifest as JSON and the embeddings in the binary container.
pub fn save_frame(
    frame: &EmbeddingFrame,
    manifest_path: impl AsRef<Path>,
    embedding_path: impl AsRef<Path>,
) -> Result<()> {
    frame.manifest().save(manifest_path)?;
    frame.embeddings().save(embedding_path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        if !(train > 0.0 && val > 0.0 && test > 0.0) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions sum to {}, expected 1",
                train + val + test
            )));
        }
        Ok(Self { train, val, test })
    }

    /// Row counts for `n` rows: floor for val and test, remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // tolerance keeps exact products such as 0.15 * 3000 from flooring to 449
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let val = floor(self.val).min(n);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

#[derive(Debug, Clone)]
pub struct FrameSplit {
    pub train: EmbeddingFrame,
    pub val: EmbeddingFrame,
    pub test: EmbeddingFrame,
    /// Row indices of the source frame in each part: train, val, test.
    pub indices: [Vec<usize>; 3],
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

pub fn split_frame(frame: &EmbeddingFrame, fractions: SplitFractions, seed: u64) -> Result<FrameSplit> {
    if frame.is_empty() {
        return Err(Error::invalid("cannot split an empty frame"));
    }
    let (n_train, n_val, _) = fractions.sizes(frame.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = shuffled_indices(frame.len(), &mut rng);
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();
    Ok(FrameSplit {
        train: frame.select(&train),
        val: frame.select(&val),
        test: frame.select(&test),
        indices: [train, val, test],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub total: usize,
    /// Positive count per label, in label-set order.
    pub per_label: Vec<(String, usize)>,
    /// Records with no positive pathology label.
    pub no_finding: usize,
}

impl ClassCounts {
    pub fn get(&self, label: &str) -> Option<usize> {
        self.per_label.iter().find(|(l, _)| l == label).map(|(_, c)| *c)
    }

    pub fn as_map(&self) -> BTreeMap<String, usize> {
        self.per_label.iter().cloned().collect()
    }
}

/// Per-label positive counts. A record counts as no-finding when none of its
/// pathology labels are positive, regardless of the no-finding column.
pub fn class_counts(frame: &EmbeddingFrame) -> ClassCounts {
    let set = frame.label_set();
    let mut counts = vec![0usize; set.len()];
    let mut no_finding = 0;
    for r in frame.records() {
        for (c, &v) in counts.iter_mut().zip(&r.labels) {
            *c += v as usize;
        }
        if r.positive_set(set).is_empty() {
            no_finding += 1;
        }
    }
    ClassCounts {
        total: frame.len(),
        per_label: set.labels().iter().cloned().zip(counts).collect(),
        no_finding,
    }
}
