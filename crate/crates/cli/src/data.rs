//! Loading helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use cxr_core::embedding_store::{load_frame, split_frame, EmbeddingFrame, EmbeddingMatrix, SplitFractions};
use cxr_core::types::Split;
use cxr_core::Error;

#[derive(Args, Debug, Clone)]
pub struct FrameArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Embedding matrix, row-aligned with the manifest.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Train, val and test fractions, used when records carry no split tag.
    #[arg(long, default_value = "0.75,0.10,0.15")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

pub struct Parts {
    pub train: EmbeddingFrame,
    pub val: EmbeddingFrame,
    pub test: EmbeddingFrame,
}

impl FrameArgs {
    pub fn load(&self) -> Result<EmbeddingFrame> {
        load_frame(&self.manifest, &self.embeddings)
            .with_context(|| format!("loading {} with {}", self.manifest.display(), self.embeddings.display()))
    }

    /// Uses the records' split tags when every record has one, otherwise a
    /// seeded split by the configured fractions.
    pub fn parts(&self) -> Result<Parts> {
        let frame = self.load()?;
        let tags: Option<Vec<Split>> = frame.records().iter().map(|r| r.split).collect();
        if let Some(tags) = tags {
            let pick = |want: Split| -> Vec<usize> { (0..tags.len()).filter(|&i| tags[i] == want).collect() };
            return Ok(Parts {
                train: frame.select(&pick(Split::Train)),
                val: frame.select(&pick(Split::Val)),
                test: frame.select(&pick(Split::Test)),
            });
        }
        let s = split_frame(&frame, parse_fractions(&self.split)?, self.split_seed)?;
        Ok(Parts {
            train: s.train,
            val: s.val,
            test: s.test,
        })
    }
}

fn parse_fractions(s: &str) -> Result<SplitFractions> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad split {s:?}, expected three comma-separated fractions")))?;
    match v[..] {
        [a, b, c] => Ok(SplitFractions::new(a, b, c)?),
        _ => Err(Error::invalid(format!("bad split {s:?}, expected three fractions")).into()),
    }
}

/// One embedding vector, from a single-row matrix file or a JSON array.
pub fn read_embedding(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"CXRE") {
        let m = EmbeddingMatrix::from_bytes(&bytes)?;
        if m.rows() != 1 {
            return Err(Error::invalid(format!("{} holds {} rows, expected 1", path.display(), m.rows())).into());
        }
        return Ok(m.row(0).to_vec());
    }
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("{}: not an embedding file or JSON array: {e}", path.display())).into())
}

pub fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
