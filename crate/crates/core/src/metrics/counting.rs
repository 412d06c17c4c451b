use std::collections::{BTreeMap, BTreeSet};

use super::{ClassScores, Tally};

/// image id -> class -> object count. Missing entries count as 0.
pub type CountTable = BTreeMap<String, BTreeMap<String, u64>>;

/// `tp = min(gt, pred)`, over-counts are false positives, under-counts false
/// negatives.
pub fn counting_tally(gt: u64, pred: u64) -> Tally {
    Tally {
        tp: gt.min(pred),
        fp: pred.saturating_sub(gt),
        fn_: gt.saturating_sub(pred),
    }
}

/// Counting precision/recall/F1: per-image tallies summed per class, then
/// macro-averaged over `classes`.
pub fn counting_prf(gt: &CountTable, pred: &CountTable, classes: &[String]) -> ClassScores {
    let wanted: BTreeSet<&str> = classes.iter().map(String::as_str).collect();
    let images: BTreeSet<&String> = gt.keys().chain(pred.keys()).collect();
    let mut tallies: BTreeMap<&str, Tally> = classes.iter().map(|c| (c.as_str(), Tally::default())).collect();
    let (mut pred_out, mut gt_out) = (0u64, 0u64);
    let empty = BTreeMap::new();
    for image in images {
        let g = gt.get(image).unwrap_or(&empty);
        let p = pred.get(image).unwrap_or(&empty);
        pred_out += p.iter().filter(|(c, _)| !wanted.contains(c.as_str())).map(|(_, n)| n).sum::<u64>();
        gt_out += g.iter().filter(|(c, _)| !wanted.contains(c.as_str())).map(|(_, n)| n).sum::<u64>();
        for class in classes {
            let t = counting_tally(*g.get(class).unwrap_or(&0), *p.get(class).unwrap_or(&0));
            *tallies.get_mut(class.as_str()).expect("class registered") += t;
        }
    }
    ClassScores::from_tallies(
        classes.iter().map(|c| (c.clone(), tallies[c.as_str()])),
        pred_out,
        gt_out,
    )
}
