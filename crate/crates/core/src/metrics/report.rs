use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::counting::{counting_prf, CountTable};
use super::detection::{detection_tallies, ApScores, IouKind};
use super::ClassScore;
use crate::error::Result;
use crate::model::Detection;
use crate::similarity::EquivalenceMap;

/// Label carried by every report so readers know which AP_nc reading is used.
pub const AP_NC_LABEL: &str = "AP_nc (single-point)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub setting: String,
    pub iou_threshold: f64,
    pub classes: Vec<String>,
    /// Compute mask metrics; skipped with a warning when any object lacks a mask.
    pub masks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&ClassScore> for ScoreBlock {
    fn from(c: &ClassScore) -> Self {
        ScoreBlock {
            tp: c.tally.tp,
            fp: c.tally.fp,
            fn_: c.tally.fn_,
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub counting: ScoreBlock,
    #[serde(rename = "box")]
    pub bbox: ScoreBlock,
    pub box_ap_nc: f64,
    pub mask: Option<ScoreBlock>,
    pub mask_ap_nc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub cnt_precision: f64,
    pub cnt_recall: f64,
    pub cnt_f1: f64,
    pub box_precision: f64,
    pub box_recall: f64,
    pub box_f1: f64,
    pub box_map_nc: f64,
    pub mask_precision: Option<f64>,
    pub mask_recall: Option<f64>,
    pub mask_f1: Option<f64>,
    pub mask_map_nc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Predictions whose generated category matched no ground-truth name.
    pub unmapped_predictions: u64,
    pub predictions_outside_classes: u64,
    pub ground_truth_outside_classes: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: String,
    pub iou_threshold: f64,
    pub ap_nc_definition: String,
    pub classes: Vec<String>,
    pub per_class: Vec<ClassReport>,
    pub mean: MeanScores,
    pub diagnostics: Diagnostics,
}

fn count_table(dets: &[Detection]) -> CountTable {
    let mut t: CountTable = BTreeMap::new();
    for d in dets {
        *t.entry(d.image_id.clone()).or_default().entry(d.category.clone()).or_default() += 1;
    }
    t
}

/// Full evaluation: counting metrics from per-image object counts, box (and
/// optionally mask) mF1 and mAP_nc at the configured IoU threshold.
pub fn evaluate(preds: &[Detection], gts: &[Detection], opts: &EvalOptions) -> Result<EvalReport> {
    let classes = &opts.classes;
    let counting = counting_prf(&count_table(gts), &count_table(preds), classes);
    let box_t = detection_tallies(preds, gts, classes, IouKind::Box, opts.iou_threshold)?;
    let box_s = box_t.scores();
    let box_ap = ApScores::from_tallies(&box_t);

    let mut diagnostics = Diagnostics {
        predictions_outside_classes: box_t.predictions_outside,
        ground_truth_outside_classes: box_t.ground_truth_outside,
        ..Default::default()
    };

    let mask = if !opts.masks {
        None
    } else if preds.iter().chain(gts).any(|d| d.mask.is_none()) {
        diagnostics
            .warnings
            .push("mask metrics requested but some objects carry no mask; mask metrics omitted".into());
        None
    } else {
        let t = detection_tallies(preds, gts, classes, IouKind::Mask, opts.iou_threshold)?;
        Some((t.scores(), ApScores::from_tallies(&t)))
    };

    let per_class = classes
        .iter()
        .enumerate()
        .map(|(k, c)| ClassReport {
            class: c.clone(),
            counting: (&counting.per_class[k]).into(),
            bbox: (&box_s.per_class[k]).into(),
            box_ap_nc: box_ap.per_class[c],
            mask: mask.as_ref().map(|(s, _)| (&s.per_class[k]).into()),
            mask_ap_nc: mask.as_ref().map(|(_, ap)| ap.per_class[c]),
        })
        .collect();

    let mean = MeanScores {
        cnt_precision: counting.mean_precision,
        cnt_recall: counting.mean_recall,
        cnt_f1: counting.mean_f1,
        box_precision: box_s.mean_precision,
        box_recall: box_s.mean_recall,
        box_f1: box_s.mean_f1,
        box_map_nc: box_ap.map,
        mask_precision: mask.as_ref().map(|(s, _)| s.mean_precision),
        mask_recall: mask.as_ref().map(|(s, _)| s.mean_recall),
        mask_f1: mask.as_ref().map(|(s, _)| s.mean_f1),
        mask_map_nc: mask.as_ref().map(|(_, ap)| ap.map),
    };

    Ok(EvalReport {
        setting: opts.setting.clone(),
        iou_threshold: opts.iou_threshold,
        ap_nc_definition: AP_NC_LABEL.to_string(),
        classes: classes.clone(),
        per_class,
        mean,
        diagnostics,
    })
}

/// Renames predicted categories through `map`. Predictions whose category is
/// unmatched are dropped and counted in the second return value.
pub fn remap_categories(preds: &[Detection], map: &EquivalenceMap) -> (Vec<Detection>, u64) {
    let mut out = Vec::with_capacity(preds.len());
    let mut unmapped = 0;
    for d in preds {
        match map.get(&d.category) {
            Some(gt) => {
                let mut d = d.clone();
                d.category = gt.to_string();
                out.push(d);
            }
            None => unmapped += 1,
        }
    }
    (out, unmapped)
}

/// One row per class plus a final `mean` row. Absent mask metrics are left
/// blank.
pub fn write_csv<W: Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "class",
        "cnt_precision",
        "cnt_recall",
        "cnt_f1",
        "box_precision",
        "box_recall",
        "box_f1",
        "box_ap_nc",
        "mask_precision",
        "mask_recall",
        "mask_f1",
        "mask_ap_nc",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &report.per_class {
        w.write_record([
            c.class.clone(),
            c.counting.precision.to_string(),
            c.counting.recall.to_string(),
            c.counting.f1.to_string(),
            c.bbox.precision.to_string(),
            c.bbox.recall.to_string(),
            c.bbox.f1.to_string(),
            c.box_ap_nc.to_string(),
            opt(c.mask.as_ref().map(|m| m.precision)),
            opt(c.mask.as_ref().map(|m| m.recall)),
            opt(c.mask.as_ref().map(|m| m.f1)),
            opt(c.mask_ap_nc),
        ])?;
    }
    let m = &report.mean;
    w.write_record([
        "mean".to_string(),
        m.cnt_precision.to_string(),
        m.cnt_recall.to_string(),
        m.cnt_f1.to_string(),
        m.box_precision.to_string(),
        m.box_recall.to_string(),
        m.box_f1.to_string(),
        m.box_map_nc.to_string(),
        opt(m.mask_precision),
        opt(m.mask_recall),
        opt(m.mask_f1),
        opt(m.mask_map_nc),
    ])?;
    w.flush().map_err(|e| crate::error::Error::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}
