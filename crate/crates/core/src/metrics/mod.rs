//! Counting and confidence-free detection metrics.
//!
//! Zero-denominator convention, used throughout: precision is 1 when a class
//! has no predictions, recall is 1 when it has no ground truth, and F1 is 0
//! only when precision + recall is 0. A class absent from both sides therefore
//! scores a perfect 1 and still enters macro averages.

mod counting;
mod detection;
mod report;
mod sweep;

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

pub use counting::{counting_prf, counting_tally, CountTable};
pub use detection::{
    classes_of, detection_mf1, detection_tallies, map_nc, match_detections, ApScores, DetectionTallies, IouKind,
    MatchOutcome,
};
pub use report::{
    evaluate, remap_categories, write_csv, ClassReport, Diagnostics, EvalOptions, EvalReport, MeanScores,
    ScoreBlock, AP_NC_LABEL,
};
pub use sweep::{sweep_thresholds, threshold_grid, Sweep, SweepPoint, DEFAULT_STEP};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// True positive / false positive / false negative counts. Merging is plain
/// addition, so per-image tallies can be reduced in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Tally {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Tally { tp, fp, fn_ }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }

    /// Single-point average precision: with every prediction at the same
    /// confidence the PR curve is the one aggregate point, and its rectangular
    /// interpolation has area `precision * recall`.
    pub fn ap_nc(&self) -> f64 {
        self.precision() * self.recall()
    }
}

impl Add for Tally {
    type Output = Tally;

    fn add(self, o: Tally) -> Tally {
        Tally::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for Tally {
    fn add_assign(&mut self, o: Tally) {
        *self = *self + o;
    }
}

impl Sum for Tally {
    fn sum<I: Iterator<Item = Tally>>(iter: I) -> Tally {
        iter.fold(Tally::default(), Add::add)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub tally: Tally,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScore {
    pub fn from_tally(class: impl Into<String>, tally: Tally) -> Self {
        ClassScore {
            class: class.into(),
            tally,
            precision: tally.precision(),
            recall: tally.recall(),
            f1: tally.f1(),
        }
    }
}

/// Per-class metrics with their macro means over the evaluation class set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub per_class: Vec<ClassScore>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    /// Predicted objects whose class is outside the evaluation set.
    pub predictions_outside: u64,
    /// Ground-truth objects whose class is outside the evaluation set.
    pub ground_truth_outside: u64,
}

impl ClassScores {
    fn from_tallies(tallies: impl IntoIterator<Item = (String, Tally)>, pred_out: u64, gt_out: u64) -> Self {
        let per_class: Vec<ClassScore> = tallies
            .into_iter()
            .map(|(c, t)| ClassScore::from_tally(c, t))
            .collect();
        ClassScores {
            mean_precision: mean(per_class.iter().map(|c| c.precision)),
            mean_recall: mean(per_class.iter().map(|c| c.recall)),
            mean_f1: mean(per_class.iter().map(|c| c.f1)),
            per_class,
            predictions_outside: pred_out,
            ground_truth_outside: gt_out,
        }
    }

    pub fn get(&self, class: &str) -> Option<&ClassScore> {
        self.per_class.iter().find(|c| c.class == class)
    }
}

/// Arithmetic mean; 0 for an empty class set.
pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
