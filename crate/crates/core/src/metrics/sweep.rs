use serde::{Deserialize, Serialize};

use super::detection::{bucket, greedy, ranked_candidates, IouKind};
use super::{ClassScores, Tally};
use crate::error::{Error, Result};
use crate::model::Detection;

pub const DEFAULT_STEP: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub mf1: f64,
    /// Predictions surviving the score filter.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub best_threshold: f64,
    pub best_mf1: f64,
    pub curve: Vec<SweepPoint>,
}

/// `0, step, 2 step, ...` up to and including 1, rounded to 1e-9 so that
/// e.g. the 15th step of 0.02 compares equal to a score of exactly 0.3.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Input(format!("sweep step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((k as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Score-threshold sweep for score-bearing detectors: at each grid threshold
/// keep predictions with `score >= t` and compute mF1. The best threshold is
/// the smallest one reaching the maximum.
pub fn sweep_thresholds(
    preds: &[Detection],
    gts: &[Detection],
    classes: &[String],
    kind: IouKind,
    iou_thresh: f64,
    step: f64,
) -> Result<Sweep> {
    if let Some(d) = preds.iter().find(|d| d.score.is_none()) {
        return Err(Error::Input(format!(
            "prediction of class {:?} in image {:?} has no score; unscored detections are \
             confidence-free and should be scored with `eval` instead of a threshold sweep",
            d.category, d.image_id
        )));
    }
    let grid = threshold_grid(step)?;
    let b = bucket(preds, gts, classes);
    let groups: Vec<_> = b
        .groups
        .iter()
        .map(|(&(c, _), (p, g))| {
            let cands = ranked_candidates(p, g, |x, y| kind.iou(x, y), iou_thresh)?;
            let scores: Vec<f64> = p.iter().map(|d| d.score.unwrap_or(0.0)).collect();
            Ok((c, cands, scores, g.len()))
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(grid.len());
    for &t in &grid {
        let mut per_class = vec![Tally::default(); classes.len()];
        let mut kept = 0;
        for (c, cands, scores, n_g) in &groups {
            let outcome = greedy(cands, scores.len(), *n_g, |p| scores[p] >= t);
            kept += scores.iter().filter(|&&s| s >= t).count();
            per_class[*c] += outcome.tally;
        }
        let scores = ClassScores::from_tallies(classes.iter().cloned().zip(per_class), 0, 0);
        curve.push(SweepPoint {
            threshold: t,
            mf1: scores.mean_f1,
            kept,
        });
    }
    let best = curve
        .iter()
        .fold(None::<&SweepPoint>, |acc, p| match acc {
            Some(b) if b.mf1 >= p.mf1 => Some(b),
            _ => Some(p),
        })
        .expect("grid is non-empty");
    Ok(Sweep {
        best_threshold: best.threshold,
        best_mf1: best.mf1,
        curve,
    })
}
