//! Segmentation metrics: binarization of semantic labels, foreground and
//! background IoU, the β-weighted F-score, and dataset aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryMask, LabelGrid};

/// β² used for the F-score.
pub const DEFAULT_BETA2: f64 = 0.3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("shape mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("label grid is empty")]
    EmptyGrid,
}

/// Object labels from semantic labels: every cell becomes `min(label, 1)`.
pub fn binarize_semantic(grid: &LabelGrid) -> Result<BinaryMask, EvalError> {
    let bits = grid.labels.iter().map(|&l| l.min(1) as u8).collect();
    BinaryMask::from_bits(grid.height, grid.width, bits).map_err(|_| EvalError::EmptyGrid)
}

/// Pixel counts for the foreground class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Same counts with foreground and background swapped.
    pub fn inverted(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Foreground IoU; a class absent from both masks scores 1.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn miou(&self) -> f64 {
        (self.iou() + self.inverted().iou()) / 2.0
    }

    pub fn fscore(&self, beta2: f64) -> f64 {
        let pred_fg = self.tp + self.fp;
        let gt_fg = self.tp + self.fn_;
        if pred_fg == 0 && gt_fg == 0 {
            return 1.0;
        }
        if pred_fg == 0 || gt_fg == 0 || self.tp == 0 {
            return 0.0;
        }
        let precision = self.tp as f64 / pred_fg as f64;
        let recall = self.tp as f64 / gt_fg as f64;
        (1.0 + beta2) * precision * recall / (beta2 * precision + recall)
    }
}

fn check_shapes(pred: &BinaryMask, gt: &BinaryMask) -> Result<(), EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.dims(),
            gt: gt.dims(),
        });
    }
    Ok(())
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, EvalError> {
    check_shapes(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn miou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, EvalError> {
    Ok(confusion(pred, gt)?.miou())
}

pub fn fscore(pred: &BinaryMask, gt: &BinaryMask, beta2: f64) -> Result<f64, EvalError> {
    assert!(beta2 > 0.0, "beta2 must be positive");
    Ok(confusion(pred, gt)?.fscore(beta2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub miou: f64,
    pub fscore: f64,
    pub iou_fg: f64,
    pub iou_bg: f64,
}

impl FrameScore {
    pub fn from_counts(c: &ConfusionCounts, beta2: f64) -> Self {
        let iou_fg = c.iou();
        let iou_bg = c.inverted().iou();
        Self {
            miou: (iou_fg + iou_bg) / 2.0,
            fscore: c.fscore(beta2),
            iou_fg,
            iou_bg,
        }
    }
}

pub fn score_frame(pred: &BinaryMask, gt: &BinaryMask, beta2: f64) -> Result<FrameScore, EvalError> {
    Ok(FrameScore::from_counts(&confusion(pred, gt)?, beta2))
}

/// One frame to evaluate. A missing side marks the frame as skipped.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub video_id: String,
    pub frame_index: usize,
    pub pred: Option<BinaryMask>,
    pub gt: Option<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub score: Option<FrameScore>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub frames: usize,
    pub miou: Option<f64>,
    pub fscore: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub subset: String,
    /// How the headline figures were averaged.
    pub aggregation: String,
    pub beta2: f64,
    pub evaluated_frames: usize,
    pub skipped_frames: usize,
    pub videos: usize,
    /// Mean of per-frame scores (headline).
    pub miou: Option<f64>,
    pub fscore: Option<f64>,
    /// Scores of the pooled confusion counts, for cross-checking.
    pub micro_miou: Option<f64>,
    pub micro_fscore: Option<f64>,
    pub per_video: Vec<VideoSummary>,
    pub per_frame: Vec<FrameRecord>,
    #[serde(default)]
    pub config: serde_json::Value,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Macro average over evaluated frames, with per-video means and a pooled
/// (micro) figure alongside.
pub fn aggregate(subset: &str, items: &[EvalItem], beta2: f64) -> DatasetReport {
    let mut per_frame = Vec::with_capacity(items.len());
    let mut pooled = ConfusionCounts::default();
    let mut by_video: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut video_order: Vec<&str> = Vec::new();
    let (mut mious, mut fscores) = (Vec::new(), Vec::new());

    for item in items {
        if !video_order.contains(&item.video_id.as_str()) {
            video_order.push(&item.video_id);
        }
        let outcome = match (&item.pred, &item.gt) {
            (None, _) => Err("missing prediction".to_string()),
            (_, None) => Err("missing ground truth".to_string()),
            (Some(p), Some(g)) => confusion(p, g).map_err(|e| e.to_string()),
        };
        let record = match outcome {
            Ok(c) => {
                pooled.add(&c);
                let s = FrameScore::from_counts(&c, beta2);
                mious.push(s.miou);
                fscores.push(s.fscore);
                let entry = by_video.entry(&item.video_id).or_default();
                entry.0.push(s.miou);
                entry.1.push(s.fscore);
                FrameRecord {
                    video_id: item.video_id.clone(),
                    frame_index: item.frame_index,
                    score: Some(s),
                    skipped: None,
                }
            }
            Err(reason) => FrameRecord {
                video_id: item.video_id.clone(),
                frame_index: item.frame_index,
                score: None,
                skipped: Some(reason),
            },
        };
        per_frame.push(record);
    }

    let per_video = video_order
        .iter()
        .map(|&v| {
            let (m, f) = by_video.get(v).cloned().unwrap_or_default();
            VideoSummary {
                video_id: v.to_string(),
                frames: m.len(),
                miou: mean(&m),
                fscore: mean(&f),
            }
        })
        .collect::<Vec<_>>();
    let evaluated = mious.len();
    DatasetReport {
        subset: subset.to_string(),
        aggregation: "macro mean over evaluated frames".to_string(),
        beta2,
        evaluated_frames: evaluated,
        skipped_frames: items.len() - evaluated,
        videos: per_video.iter().filter(|v| v.frames > 0).count(),
        miou: mean(&mious),
        fscore: mean(&fscores),
        micro_miou: (evaluated > 0).then(|| pooled.miou()),
        micro_fscore: (evaluated > 0).then(|| pooled.fscore(beta2)),
        per_video,
        per_frame,
        config: serde_json::Value::Null,
    }
}

fn fmt_score(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl DatasetReport {
    /// Aligned plain-text table: subset, M_J, M_F, frames, videos.
    pub fn to_table(&self) -> String {
        let rows = [
            (
                self.subset.clone(),
                self.miou,
                self.fscore,
                self.evaluated_frames,
                self.videos,
            ),
            (
                format!("{} (micro)", self.subset),
                self.micro_miou,
                self.micro_fscore,
                self.evaluated_frames,
                self.videos,
            ),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>7}  {:>6}",
            "subset", "M_J", "M_F", "frames", "videos"
        );
        for (name, j, f, frames, videos) in rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>8}  {:>7}  {:>6}",
                name,
                fmt_score(j),
                fmt_score(f),
                frames,
                videos
            );
        }
        let _ = writeln!(
            out,
            "aggregation: {}; skipped frames: {}",
            self.aggregation, self.skipped_frames
        );
        out
    }
}
