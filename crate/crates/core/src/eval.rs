//! Class-agnostic 3D detection AP: greedy score-ordered matching and
//! all-point interpolated precision/recall.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{load_groundtruth, load_snapshot, DataError};
use crate::geometry::{aabb_of, exact_iou_3d, McSampler, OrientedBox3D};
use crate::stream::SceneSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Oriented,
    AxisAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IouBackend {
    #[default]
    Exact,
    MonteCarlo { o_n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub mode: EvalMode,
    pub backend: IouBackend,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_thresholds: vec![0.15, 0.25, 0.5], mode: EvalMode::Oriented, backend: IouBackend::Exact }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iou_thresholds.is_empty() {
            return Err("at least one IoU threshold is required".into());
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(format!("IoU threshold {t} is outside (0, 1)"));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err("IoU thresholds must be strictly ascending".into());
        }
        if let IouBackend::MonteCarlo { o_n: 0, .. } = self.backend {
            return Err("monte_carlo backend needs o_n >= 1".into());
        }
        Ok(())
    }
}

/// IoU between every detection (rows) and ground-truth box (columns).
pub fn iou_matrix(dets: &[OrientedBox3D], gts: &[OrientedBox3D], cfg: &EvalConfig) -> Vec<Vec<f64>> {
    let sampler = match cfg.backend {
        IouBackend::MonteCarlo { o_n, seed } if cfg.mode == EvalMode::Oriented => Some(McSampler::new(o_n, seed)),
        _ => None,
    };
    let gt_aabbs: Vec<_> = gts.iter().map(aabb_of).collect();
    dets.iter()
        .map(|d| {
            let da = aabb_of(d);
            gts.iter()
                .zip(&gt_aabbs)
                .map(|(g, ga)| match cfg.mode {
                    EvalMode::AxisAligned => da.iou(ga),
                    EvalMode::Oriented if !da.overlaps(ga) => 0.0,
                    EvalMode::Oriented => match &sampler {
                        Some(s) => s.iou(d, g),
                        None => exact_iou_3d(d, g),
                    },
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Detection indices in processing order (score descending, index ascending).
    pub order: Vec<usize>,
    /// TP flag per entry of `order`.
    pub tp: Vec<bool>,
    /// Matched GT per entry of `order`.
    pub matched_gt: Vec<Option<usize>>,
}

pub fn detection_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy matching against a precomputed IoU matrix: each detection takes the
/// unmatched GT of highest IoU (lowest index on ties) when it reaches `thresh`.
pub fn match_with_ious(scores: &[f64], ious: &[Vec<f64>], n_gt: usize, thresh: f64) -> MatchResult {
    let order = detection_order(scores);
    let mut taken = vec![false; n_gt];
    let mut tp = Vec::with_capacity(order.len());
    let mut matched_gt = Vec::with_capacity(order.len());
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &iou) in ious[d].iter().enumerate() {
            if !taken[g] && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) if iou >= thresh => {
                taken[g] = true;
                tp.push(true);
                matched_gt.push(Some(g));
            }
            _ => {
                tp.push(false);
                matched_gt.push(None);
            }
        }
    }
    MatchResult { order, tp, matched_gt }
}

pub fn match_detections(dets: &[(OrientedBox3D, f64)], gts: &[OrientedBox3D], iou_thresh: f64, cfg: &EvalConfig) -> MatchResult {
    let boxes: Vec<OrientedBox3D> = dets.iter().map(|d| d.0).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    match_with_ious(&scores, &iou_matrix(&boxes, gts, cfg), gts.len(), iou_thresh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
    /// No ground truth: AP is reported as 1.0 without detections, 0.0 with.
    pub undefined: bool,
}

/// All-point interpolated AP over score-ordered TP flags.
pub fn average_precision(flags: &[bool], n_gt: usize) -> PrCurve {
    let mut points = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += f as usize;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        points.push((recall, tp as f64 / (i + 1) as f64));
    }
    if n_gt == 0 {
        return PrCurve { ap: if flags.is_empty() { 1.0 } else { 0.0 }, points, undefined: true };
    }
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(&envelope) {
        ap += (p.0 - prev_recall) * env;
        prev_recall = p.0;
    }
    PrCurve { points, ap, undefined: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub iou_threshold: f64,
    pub ap: f64,
    pub ap_undefined: bool,
    pub n_gt: usize,
    pub n_det: usize,
    pub n_tp: usize,
    pub pr: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub backend: IouBackend,
    pub thresholds: Vec<ThresholdReport>,
}

impl EvalReport {
    pub fn ap_at(&self, thresh: f64) -> Option<f64> {
        self.thresholds.iter().find(|t| (t.iou_threshold - thresh).abs() < 1e-12).map(|t| t.ap)
    }
}

pub fn evaluate(snapshot: &SceneSnapshot, gts: &[OrientedBox3D], cfg: &EvalConfig) -> EvalReport {
    let boxes: Vec<OrientedBox3D> = snapshot.objects.iter().map(|o| o.bbox).collect();
    let scores: Vec<f64> = snapshot.objects.iter().map(|o| o.score).collect();
    let ious = iou_matrix(&boxes, gts, cfg);
    let thresholds = cfg
        .iou_thresholds
        .iter()
        .map(|&t| {
            let m = match_with_ious(&scores, &ious, gts.len(), t);
            let curve = average_precision(&m.tp, gts.len());
            ThresholdReport {
                iou_threshold: t,
                ap: curve.ap,
                ap_undefined: curve.undefined,
                n_gt: gts.len(),
                n_det: boxes.len(),
                n_tp: m.tp.iter().filter(|f| **f).count(),
                pr: curve.points,
            }
        })
        .collect();
    EvalReport { mode: cfg.mode, backend: cfg.backend, thresholds }
}

pub fn evaluate_files(snapshot: &Path, groundtruth: &Path, cfg: &EvalConfig) -> Result<EvalReport, DataError> {
    let snap = load_snapshot(snapshot)?;
    let gt: Vec<OrientedBox3D> = load_groundtruth(groundtruth)?.objects.iter().map(|o| o.bbox).collect();
    Ok(evaluate(&snap, &gt, cfg))
}
