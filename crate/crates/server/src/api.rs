//! Request and response bodies. The JSON schemas under `api/v1/` describe
//! the same shapes.

use serde::{Deserialize, Serialize};
use vqbe_core::synth::{HyperFile, PreviewEntry, Progress};
use vqbe_core::{Label, SegmentRecord, SynthesisResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VidLabel {
    pub vid: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchPreset {
    #[default]
    Trajectory,
    SceneGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    pub initial_labels: Vec<VidLabel>,
    #[serde(default)]
    pub hyper: HyperFile,
    #[serde(default)]
    pub search: SearchPreset,
    /// Segments the session may ask about. Defaults to the whole dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingLabels,
    Searching,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub state: SessionState,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProgressView {
    /// Completed iterations.
    pub iterations: usize,
    pub labels_used: usize,
    pub budget: usize,
    pub top: Vec<PreviewEntry>,
}

impl ProgressView {
    pub fn from_progress(p: &Progress) -> Self {
        Self {
            iterations: p.iteration + 1,
            labels_used: p.labels_used,
            budget: p.budget,
            top: p.top.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendingResponse {
    pub id: String,
    pub state: SessionState,
    pub pending: Vec<String>,
    /// Render payloads for the pending segments, in the same order.
    pub segments: Vec<SegmentRecord>,
    pub progress: ProgressView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitLabels {
    pub labels: Vec<VidLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: usize,
    pub state: SessionState,
    pub pending: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preview {
    pub rank: usize,
    pub query: String,
    /// Number of segments the query was run on.
    pub evaluated: usize,
    pub matching: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultResponse<'a> {
    pub id: &'a str,
    pub state: SessionState,
    pub result: &'a SynthesisResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preview: Option<Preview>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub segments: usize,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub frame_count: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
