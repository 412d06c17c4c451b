//! Domain records exchanged between the pipeline stages.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::mask::BinaryMask;

/// Largest per-coordinate disagreement tolerated between a declared proposal
/// box and the box recomputed from its mask. Mask generators differ on whether
/// `x_max` is inclusive, which shifts the far edge by one pixel.
pub const PROPOSAL_BOX_TOLERANCE: f64 = 1.0;

/// One class-agnostic region proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProposal {
    pub id: u64,
    pub image_id: String,
    pub mask: BinaryMask,
    pub bbox: BoundingBox<f64>,
}

impl MaskProposal {
    /// The stored box is always the tight box of `mask`; a declared box is only
    /// checked against it.
    pub fn new(
        id: u64,
        image_id: impl Into<String>,
        mask: BinaryMask,
        declared: Option<BoundingBox<f64>>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        let bbox = mask
            .tight_bbox()
            .ok_or_else(|| Error::InvalidMask(format!("proposal {id} of image {image_id} is empty")))?;
        if let Some(d) = declared {
            let worst = [
                d.x_min - bbox.x_min,
                d.y_min - bbox.y_min,
                d.x_max - bbox.x_max,
                d.y_max - bbox.y_max,
            ]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
            if worst > PROPOSAL_BOX_TOLERANCE {
                return Err(Error::InvalidMask(format!(
                    "proposal {id} of image {image_id}: declared box {:?} disagrees with mask box {:?}",
                    d.to_xywh(),
                    bbox.to_xywh()
                )));
            }
        }
        Ok(MaskProposal {
            id,
            image_id,
            mask,
            bbox,
        })
    }

    /// Key under which this proposal's crop embedding is stored.
    pub fn embedding_key(&self) -> String {
        format!("{}#{}", self.image_id, self.id)
    }
}

/// Per-image category counts reported by the counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPrediction {
    pub image_id: String,
    pub counts: IndexMap<String, u64>,
}

impl CountPrediction {
    pub fn new(image_id: impl Into<String>, counts: IndexMap<String, u64>) -> Result<Self> {
        let p = CountPrediction {
            image_id: image_id.into(),
            counts,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in self.counts.keys() {
            let key = name.trim().to_lowercase();
            if key.is_empty() {
                return Err(Error::InvalidCounts(format!(
                    "empty category name in counts for image {}",
                    self.image_id
                )));
            }
            if !seen.insert(key) {
                return Err(Error::InvalidCounts(format!(
                    "duplicate category {name:?} in counts for image {}",
                    self.image_id
                )));
            }
        }
        Ok(())
    }

    /// Categories with a positive count, in reported order.
    pub fn positive(&self) -> Vec<(&str, u64)> {
        self.counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(k, &n)| (k.as_str(), n))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// A recognized (or ground-truth) object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub category: String,
    pub bbox: BoundingBox<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BinaryMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        category: impl Into<String>,
        bbox: BoundingBox<f64>,
        mask: Option<BinaryMask>,
        score: Option<f64>,
    ) -> Result<Self> {
        bbox.validate()?;
        if let Some(s) = score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Input(format!("detection score {s} outside [0, 1]")));
            }
        }
        Ok(Detection {
            image_id: image_id.into(),
            category: category.into(),
            bbox,
            mask,
            score,
        })
    }

    /// Box-only detection from a mask's tight box.
    pub fn from_mask(
        image_id: impl Into<String>,
        category: impl Into<String>,
        mask: BinaryMask,
    ) -> Result<Self> {
        let bbox = mask
            .tight_bbox()
            .ok_or_else(|| Error::InvalidMask("detection mask is empty".into()))?;
        Self::new(image_id, category, bbox, Some(mask), None)
    }
}
