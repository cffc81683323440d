//! Open-vocabulary features attached to global objects.
//!
//! Embeddings come from an external image/text encoder and are ingested as
//! unit vectors; this module only fuses and queries them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::CandidateObservation;
use crate::stream::SceneSnapshot;

pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticsError {
    #[error("feature is not unit norm (norm = {0})")]
    NotUnitNorm(f64),
    #[error("empty feature vector")]
    Empty,
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label bank is empty")]
    EmptyLabelBank,
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Feature {
    values: Vec<f32>,
}

impl Feature {
    pub fn new(values: Vec<f32>) -> Result<Self, SemanticsError> {
        if values.is_empty() {
            return Err(SemanticsError::Empty);
        }
        let norm = l2(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(SemanticsError::NotUnitNorm(norm));
        }
        Ok(Self { values })
    }

    /// Scales to unit norm; `None` for empty or all-zero input.
    pub fn normalized(values: &[f64]) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        Some(Self { values: values.iter().map(|v| (v / norm) as f32).collect() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dot(&self, other: &Feature) -> Result<f64, SemanticsError> {
        if self.dim() != other.dim() {
            return Err(SemanticsError::DimensionMismatch { expected: self.dim(), actual: other.dim() });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| *a as f64 * *b as f64).sum())
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

impl TryFrom<Vec<f32>> for Feature {
    type Error = SemanticsError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Feature::new(values)
    }
}

impl From<Feature> for Vec<f32> {
    fn from(f: Feature) -> Self {
        f.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextQuery {
    pub label: String,
    pub embedding: Feature,
}

/// Score-weighted mean of the candidates' features, renormalized.
///
/// Candidates without a feature are skipped. Contributions are accumulated in
/// `(frame_id, score)` order so the result does not depend on list order.
pub fn fuse_features(psi: &[CandidateObservation]) -> Option<Feature> {
    let mut featured: Vec<(&CandidateObservation, &Feature)> =
        psi.iter().filter_map(|c| c.feature.as_ref().map(|f| (c, f))).collect();
    let dim = featured.first()?.1.dim();
    featured.retain(|(_, f)| f.dim() == dim);
    featured.sort_by(|(a, fa), (b, fb)| {
        a.frame_id
            .cmp(&b.frame_id)
            .then(a.score.total_cmp(&b.score))
            .then_with(|| fa.values.iter().map(|v| v.to_bits()).cmp(fb.values.iter().map(|v| v.to_bits())))
    });
    let mut acc = vec![0.0f64; dim];
    let mut total_weight = 0.0;
    for (c, f) in &featured {
        // zero-score views still count, just barely
        let w = c.score.max(1e-6);
        total_weight += w;
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += w * *v as f64;
        }
    }
    if total_weight <= 0.0 {
        return None;
    }
    Feature::normalized(&acc)
}

/// Objects ranked by cosine similarity to the query, ties broken by id.
pub fn retrieve(snapshot: &SceneSnapshot, query: &TextQuery, top_k: usize) -> Result<Vec<(u64, f64)>, SemanticsError> {
    let mut scored = Vec::new();
    for obj in &snapshot.objects {
        if let Some(f) = &obj.feature {
            scored.push((obj.id, f.dot(&query.embedding)?));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub object_id: u64,
    pub label_index: usize,
    pub label: String,
    pub similarity: f64,
}

/// Best label per featured object; the lowest label index wins ties.
pub fn classify(snapshot: &SceneSnapshot, label_bank: &[TextQuery]) -> Result<Vec<Classification>, SemanticsError> {
    if label_bank.is_empty() {
        return Err(SemanticsError::EmptyLabelBank);
    }
    let mut out = Vec::new();
    for obj in &snapshot.objects {
        let Some(f) = &obj.feature else { continue };
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, q) in label_bank.iter().enumerate() {
            let s = f.dot(&q.embedding)?;
            if s > best.1 {
                best = (i, s);
            }
        }
        out.push(Classification {
            object_id: obj.id,
            label_index: best.0,
            label: label_bank[best.0].label.clone(),
            similarity: best.1,
        });
    }
    Ok(out)
}
