use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{mean, ClassScores, Tally};
use crate::error::{Error, Result};
use crate::geometry::box_iou;
use crate::mask::mask_iou;
use crate::model::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Box,
    Mask,
}

impl IouKind {
    pub fn iou(self, a: &Detection, b: &Detection) -> Result<f64> {
        match self {
            IouKind::Box => Ok(box_iou(&a.bbox, &b.bbox)),
            IouKind::Mask => match (&a.mask, &b.mask) {
                (Some(x), Some(y)) => mask_iou(x, y),
                _ => Err(Error::Input("mask IoU requested for an object without a mask".into())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub tally: Tally,
    /// `(prediction index, ground-truth index)` in match order.
    pub pairs: Vec<(usize, usize)>,
}

/// Candidate pairs at or above the IoU threshold, best IoU first; ties by
/// prediction index, then ground-truth index.
pub(crate) fn ranked_candidates<P, G>(
    preds: &[P],
    gts: &[G],
    mut iou: impl FnMut(&P, &G) -> Result<f64>,
    iou_thresh: f64,
) -> Result<Vec<(f64, usize, usize)>> {
    let mut cands = Vec::new();
    for (p, pred) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(pred, gt)?;
            if v >= iou_thresh {
                cands.push((v, p, g));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    Ok(cands)
}

/// Greedy one-to-one matching over ranked candidates, skipping predictions for
/// which `keep` is false.
pub(crate) fn greedy(
    cands: &[(f64, usize, usize)],
    n_preds: usize,
    n_gts: usize,
    keep: impl Fn(usize) -> bool,
) -> MatchOutcome {
    let mut used_p = vec![false; n_preds];
    let mut used_g = vec![false; n_gts];
    let mut pairs = Vec::new();
    for &(_, p, g) in cands {
        if used_p[p] || used_g[g] || !keep(p) {
            continue;
        }
        used_p[p] = true;
        used_g[g] = true;
        pairs.push((p, g));
    }
    let kept = (0..n_preds).filter(|&p| keep(p)).count() as u64;
    let tp = pairs.len() as u64;
    MatchOutcome {
        tally: Tally::new(tp, kept - tp, n_gts as u64 - tp),
        pairs,
    }
}

/// Matches predictions to ground truth of one class in one image: pairs with
/// IoU >= `iou_thresh` are taken greedily by descending IoU, each object used
/// at most once.
pub fn match_detections<P, G>(
    preds: &[P],
    gts: &[G],
    iou: impl FnMut(&P, &G) -> f64,
    iou_thresh: f64,
) -> MatchOutcome {
    let mut iou = iou;
    let cands = ranked_candidates(preds, gts, |p, g| Ok(iou(p, g)), iou_thresh).expect("infallible IoU");
    greedy(&cands, preds.len(), gts.len(), |_| true)
}

/// Predictions and ground truth bucketed by (class, image), restricted to the
/// evaluation classes.
pub(crate) struct Buckets<'a> {
    pub groups: BTreeMap<(usize, &'a str), (Vec<&'a Detection>, Vec<&'a Detection>)>,
    pub predictions_outside: u64,
    pub ground_truth_outside: u64,
}

pub(crate) fn bucket<'a>(preds: &'a [Detection], gts: &'a [Detection], classes: &[String]) -> Buckets<'a> {
    let index: IndexMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut groups: BTreeMap<(usize, &str), (Vec<&Detection>, Vec<&Detection>)> = BTreeMap::new();
    let (mut po, mut go) = (0, 0);
    for d in preds {
        match index.get(d.category.as_str()) {
            Some(&c) => groups.entry((c, d.image_id.as_str())).or_default().0.push(d),
            None => po += 1,
        }
    }
    for d in gts {
        match index.get(d.category.as_str()) {
            Some(&c) => groups.entry((c, d.image_id.as_str())).or_default().1.push(d),
            None => go += 1,
        }
    }
    Buckets {
        groups,
        predictions_outside: po,
        ground_truth_outside: go,
    }
}

/// Dataset-level TP/FP/FN per class at a fixed IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTallies {
    pub per_class: IndexMap<String, Tally>,
    pub predictions_outside: u64,
    pub ground_truth_outside: u64,
}

impl DetectionTallies {
    pub fn scores(&self) -> ClassScores {
        ClassScores::from_tallies(
            self.per_class.iter().map(|(c, t)| (c.clone(), *t)),
            self.predictions_outside,
            self.ground_truth_outside,
        )
    }
}

pub fn detection_tallies(
    preds: &[Detection],
    gts: &[Detection],
    classes: &[String],
    kind: IouKind,
    iou_thresh: f64,
) -> Result<DetectionTallies> {
    let b = bucket(preds, gts, classes);
    let mut per_class: IndexMap<String, Tally> = classes.iter().map(|c| (c.clone(), Tally::default())).collect();
    for ((c, _), (p, g)) in &b.groups {
        let cands = ranked_candidates(p, g, |x, y| kind.iou(x, y), iou_thresh)?;
        per_class[*c] += greedy(&cands, p.len(), g.len(), |_| true).tally;
    }
    Ok(DetectionTallies {
        per_class,
        predictions_outside: b.predictions_outside,
        ground_truth_outside: b.ground_truth_outside,
    })
}

/// Per-class detection precision/recall/F1 and their macro mean (mF1).
pub fn detection_mf1(
    preds: &[Detection],
    gts: &[Detection],
    classes: &[String],
    kind: IouKind,
    iou_thresh: f64,
) -> Result<ClassScores> {
    Ok(detection_tallies(preds, gts, classes, kind, iou_thresh)?.scores())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApScores {
    pub per_class: IndexMap<String, f64>,
    pub map: f64,
}

impl ApScores {
    pub fn from_tallies(t: &DetectionTallies) -> Self {
        let per_class: IndexMap<String, f64> = t.per_class.iter().map(|(c, t)| (c.clone(), t.ap_nc())).collect();
        ApScores {
            map: mean(per_class.values().copied()),
            per_class,
        }
    }
}

/// Confidence-free AP: scores are ignored and every prediction is treated as
/// equally confident, so each class contributes `precision * recall`.
pub fn map_nc(
    preds: &[Detection],
    gts: &[Detection],
    classes: &[String],
    kind: IouKind,
    iou_thresh: f64,
) -> Result<ApScores> {
    Ok(ApScores::from_tallies(&detection_tallies(preds, gts, classes, kind, iou_thresh)?))
}

/// Every class name appearing in `dets`, first-seen order.
pub fn classes_of(dets: &[Detection]) -> Vec<String> {
    let mut seen = HashSet::new();
    dets.iter()
        .filter(|d| seen.insert(d.category.as_str()))
        .map(|d| d.category.clone())
        .collect()
}
