//! Settings handed to the external mask-proposal generator. They are recorded
//! in run metadata; proposals themselves are produced outside this crate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub model: String,
    pub pred_iou_thresh: f64,
    pub stability_score_thresh: f64,
    pub points_per_side: u32,
    pub crop_n_layers: u32,
    pub box_nms_thresh: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            model: "sam2-hiera-large".into(),
            pred_iou_thresh: 0.75,
            stability_score_thresh: 0.75,
            points_per_side: 24,
            crop_n_layers: 1,
            box_nms_thresh: 0.5,
        }
    }
}
