//! Scoring detections against ground truth, with optional name matching.

use countseg_core::coco::GroundTruth;
use countseg_core::metrics::{evaluate, remap_categories, EvalOptions, EvalReport, DEFAULT_IOU_THRESHOLD};
use countseg_core::similarity::{
    match_generated_categories, EmbeddingProvider, EquivalenceMap, DEFAULT_EQUIVALENCE_THRESHOLD, DEFAULT_TEMPLATE,
};
use countseg_core::Detection;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::prompt::Setting;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub setting: Setting,
    /// Evaluation classes; `None` uses the ground-truth category list for
    /// open-vocabulary runs and the classes present in ground truth or mapped
    /// predictions otherwise.
    pub classes: Option<Vec<String>>,
    pub iou_threshold: f64,
    pub masks: bool,
    pub equivalence_threshold: f64,
    pub template: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            setting: Setting::OpenVocabulary,
            classes: None,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            masks: true,
            equivalence_threshold: DEFAULT_EQUIVALENCE_THRESHOLD,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub equivalence: Option<EquivalenceMap>,
}

fn push_unique(out: &mut Vec<String>, name: &str) {
    if !out.iter().any(|c| c == name) {
        out.push(name.to_string());
    }
}

pub fn evaluate_detections(
    preds: &[Detection],
    gt: &GroundTruth,
    settings: &EvalSettings,
    text_embs: Option<&dyn EmbeddingProvider>,
) -> Result<Evaluation, PipelineError> {
    let (mapped, unmapped, equivalence) = if settings.setting.needs_name_matching() {
        let provider = text_embs.ok_or_else(|| {
            PipelineError::Input(format!(
                "the {} setting needs text embeddings to match predicted names to ground truth",
                settings.setting
            ))
        })?;
        let mut generated = Vec::new();
        for d in preds {
            push_unique(&mut generated, &d.category);
        }
        let map = match_generated_categories(
            &generated,
            &gt.categories,
            provider,
            settings.equivalence_threshold,
            &settings.template,
        )?;
        let (mapped, unmapped) = remap_categories(preds, &map);
        (mapped, unmapped, Some(map))
    } else {
        (preds.to_vec(), 0, None)
    };

    let classes = match &settings.classes {
        Some(c) => c.clone(),
        None if settings.setting.needs_name_matching() => {
            let mut c = Vec::new();
            for name in &gt.categories {
                if gt.objects.iter().any(|o| &o.category == name) || mapped.iter().any(|d| &d.category == name) {
                    c.push(name.clone());
                }
            }
            c
        }
        None => gt.categories.clone(),
    };
    let opts = EvalOptions {
        setting: settings.setting.to_string(),
        iou_threshold: settings.iou_threshold,
        classes,
        masks: settings.masks,
    };
    let mut report = evaluate(&mapped, &gt.objects, &opts)?;
    report.diagnostics.unmapped_predictions = unmapped;
    if let Some(map) = &equivalence {
        for name in map.unmatched() {
            report
                .diagnostics
                .warnings
                .push(format!("predicted category {name:?} matches no ground-truth category"));
        }
    }
    Ok(Evaluation { report, equivalence })
}
