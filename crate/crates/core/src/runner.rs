//! Dataset-level runs and scoring of written predictions.

use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{per_video_cost, CostError, CostReport, Ledger};
use crate::dataset::{self, DatasetError, LoadedManifest};
use crate::eval::{self, DatasetReport, EvalItem};
use crate::model::VideoSample;
use crate::orchestrator::{LoadedClip, Orchestrator, PipelineError, PipelineResult, UsageSink};

pub const RESULT_FILE: &str = "result.json";
pub const LEDGER_FILE: &str = "ledger.json";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub overlay: bool,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipOutcome {
    pub video_id: String,
    pub ok: bool,
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dataset: String,
    pub mode: String,
    pub clips: Vec<ClipOutcome>,
    pub failed: usize,
    pub warnings: Vec<String>,
    pub cost: CostReport,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.failed == 0
    }
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, data).map_err(io)
}

#[derive(Debug, Error)]
enum ClipFailure {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Write(#[from] RunError),
}

async fn run_one(
    orch: &Orchestrator,
    sample: &VideoSample,
    opts: &RunOptions,
    sink: &UsageSink,
) -> Result<PipelineResult, ClipFailure> {
    let clip = LoadedClip::load(sample).map_err(PipelineError::from)?;
    let result = orch.run_clip(&clip, sink).await?;
    result.write_masks(&opts.out)?;
    let json = serde_json::to_vec_pretty(&result).expect("result serializes");
    write_file(&opts.out.join(&result.video_id).join(RESULT_FILE), &json)?;
    if opts.overlay {
        for (i, (frame, mask)) in clip.frames.iter().zip(&result.masks).enumerate() {
            let img = dataset::overlay(frame, mask)?;
            let path = opts
                .out
                .join(&result.video_id)
                .join("overlay")
                .join(format!("{i:05}.png"));
            let mut bytes = std::io::Cursor::new(Vec::new());
            img.write_to(&mut bytes, image::ImageFormat::Png)
                .map_err(|e| DatasetError::Decode {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            write_file(&path, bytes.get_ref())?;
        }
    }
    Ok(result)
}

/// Runs every sample, `opts.workers` clips at a time. A failing clip is
/// reported and skipped; the rest continue. Writes masks and `result.json`
/// per clip, then `ledger.json` and `run.json` at the output root, all in
/// manifest order.
pub async fn run_dataset(
    orch: &Orchestrator,
    manifest: &LoadedManifest,
    opts: &RunOptions,
) -> Result<RunSummary, RunError> {
    let mut done: Vec<(usize, ClipOutcome, UsageSink)> = stream::iter(manifest.samples.iter().enumerate())
        .map(|(idx, sample)| async move {
            let sink = UsageSink::new();
            let outcome = match run_one(orch, sample, opts, &sink).await {
                Ok(r) => ClipOutcome {
                    video_id: sample.id.clone(),
                    ok: true,
                    frames: r.masks.len(),
                    error: None,
                    warnings: r.warnings,
                },
                Err(e) => {
                    tracing::error!(video = %sample.id, error = %e, "clip failed");
                    ClipOutcome {
                        video_id: sample.id.clone(),
                        ok: false,
                        frames: 0,
                        error: Some(e.to_string()),
                        warnings: Vec::new(),
                    }
                }
            };
            (idx, outcome, sink)
        })
        .buffer_unordered(opts.workers.max(1))
        .collect()
        .await;
    done.sort_by_key(|(i, _, _)| *i);

    let ledger = Ledger::new();
    let mut clips = Vec::with_capacity(done.len());
    for (_, outcome, sink) in done {
        for e in sink.sorted() {
            ledger.record(&outcome.video_id, &e.stage, e.usage);
        }
        clips.push(outcome);
    }
    write_file(&opts.out.join(LEDGER_FILE), ledger.to_json().as_bytes())?;
    let cost = per_video_cost(&ledger.snapshot(), &orch.config().price_table())?;
    let summary = RunSummary {
        dataset: manifest.dataset.clone(),
        mode: orch.config().translator_mode().cli_name().to_string(),
        failed: clips.iter().filter(|c| !c.ok).count(),
        clips,
        warnings: manifest.warnings.clone(),
        cost,
    };
    let json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    write_file(&opts.out.join(RUN_FILE), &json)?;
    Ok(summary)
}

/// Scores predictions under `pred_dir` against the manifest ground truth.
/// Ground truth counts every nonzero label as object; predictions are
/// thresholded at 128. Frames lacking either side are skipped.
pub fn evaluate(
    manifest: &LoadedManifest,
    pred_dir: &Path,
    beta2: f64,
) -> Result<DatasetReport, DatasetError> {
    let mut items = Vec::new();
    for sample in &manifest.samples {
        for i in 0..sample.len() {
            let gt = match sample.gt_masks.as_ref().and_then(|g| g.get(i)) {
                Some(p) => Some(
                    eval::binarize_semantic(&dataset::load_mask(p)?).map_err(|e| DatasetError::Decode {
                        path: p.display().to_string(),
                        message: e.to_string(),
                    })?,
                ),
                None => None,
            };
            let pred_path = dataset::prediction_path(pred_dir, &sample.id, i);
            let pred = if pred_path.exists() {
                Some(dataset::threshold_grid(&dataset::load_mask(&pred_path)?)?)
            } else {
                None
            };
            items.push(EvalItem {
                video_id: sample.id.clone(),
                frame_index: i,
                pred,
                gt,
            });
        }
    }
    Ok(eval::aggregate(&manifest.dataset, &items, beta2))
}
