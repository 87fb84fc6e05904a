//! Synthetic embedding frames with known ground truth.
//!
//! Each label gets a random unit hyperplane; a row is positive for a label
//! when its embedding lies on the positive side with at least `margin`
//! clearance. Rows are drawn as Gaussian clusters on either side of every
//! plane, so the data is linearly separable per label by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding_store::{DatasetManifest, EmbeddingFrame, EmbeddingMatrix};
use crate::error::Result;
use crate::types::{LabelSet, ScanRecord};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub dim: usize,
    /// Pathology labels; a "No Finding" label is prepended.
    pub pathologies: Vec<String>,
    /// Probability that a row is positive for a given pathology.
    pub prevalence: f64,
    /// Distance of each cluster centre from its hyperplane.
    pub margin: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rows: 200,
            dim: 8,
            pathologies: vec!["Pleural Effusion".into(), "Edema".into(), "Atelectasis".into()],
            prevalence: 0.3,
            margin: 2.0,
            noise: 0.3,
            seed: 0,
        }
    }
}

pub struct SyntheticFrame {
    pub frame: EmbeddingFrame,
    /// Ground-truth unit normals, one per pathology, in label order (skipping
    /// the no-finding label).
    pub hyperplanes: Vec<Vec<f64>>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.pathologies.len();
    // orthonormal planes keep the per-label offsets independent
    let hyperplanes = orthonormal(k, spec.dim, &mut rng);

    let mut labels = vec!["No Finding".to_string()];
    labels.extend(spec.pathologies.iter().cloned());
    let label_set = LabelSet::new("synthetic", labels)?.with_no_finding(Some("No Finding".into()))?;

    let mut records = Vec::with_capacity(spec.rows);
    let mut data = Vec::with_capacity(spec.rows * spec.dim);
    for row in 0..spec.rows {
        let positives: Vec<bool> = (0..k).map(|_| rng.gen_bool(spec.prevalence)).collect();
        let mut x: Vec<f64> = (0..spec.dim)
            .map(|_| spec.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        // remove the noise component along each plane, then place the row at
        // +/- margin so its side is fixed
        for (plane, &pos) in hyperplanes.iter().zip(&positives) {
            let along: f64 = plane.iter().zip(&x).map(|(a, b)| a * b).sum();
            let target = if pos { spec.margin } else { -spec.margin };
            let jitter = spec.noise * rng.sample::<f64, _>(StandardNormal).clamp(-1.0, 1.0) * 0.5;
            for (xi, pi) in x.iter_mut().zip(plane) {
                *xi += (target + jitter - along) * pi;
            }
        }
        data.extend(x.iter().map(|&v| v as f32));
        let mut label_vec = vec![u8::from(!positives.iter().any(|&p| p))];
        label_vec.extend(positives.iter().map(|&p| u8::from(p)));
        records.push(ScanRecord {
            image_id: format!("syn-{:05}", row),
            split: None,
            labels: label_vec,
            image_uri: None,
        });
    }

    let manifest = DatasetManifest {
        source_name: format!("synthetic-seed{}", spec.seed),
        label_set,
        records,
    };
    let frame = EmbeddingFrame::new(manifest, EmbeddingMatrix::new(spec.rows, spec.dim, data)?)?;
    Ok(SyntheticFrame { frame, hyperplanes })
}

fn orthonormal(k: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(k <= dim, "need at least as many dimensions as labels");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = b.iter().zip(&v).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sit_on_the_labelled_side() {
        let s = generate(&SyntheticSpec::default()).unwrap();
        let set = s.frame.label_set().clone();
        for (i, r) in s.frame.records().iter().enumerate() {
            let x = s.frame.embeddings().row(i);
            for (j, plane) in s.hyperplanes.iter().enumerate() {
                let side: f64 = plane.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
                assert_eq!(side > 0.0, r.labels[j + 1] == 1);
                assert!(side.abs() > 1.0);
            }
            assert_eq!(r.labels[0] == 1, r.positive_set(&set).is_empty());
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&SyntheticSpec::default()).unwrap();
        let b = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(a.frame.fingerprint(), b.frame.fingerprint());
    }
}
