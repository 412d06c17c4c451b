use super::{Assignment, MatchingProblem, Regime};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BRUTE_FORCE_MAX_MASKS: usize = 10;
pub const BRUTE_FORCE_MAX_CATEGORIES: usize = 4;

/// Objectives closer than this are treated as equal before the lexicographic
/// tie-break.
const TIE: f64 = 1e-12;

/// Exhaustive search over every feasible binary assignment. Verification
/// oracle for [`solve_matching`](super::solve_matching); refuses problems larger
/// than 10 masks x 4 categories.
pub fn brute_force_matching<T: Scalar>(problem: &MatchingProblem<T>) -> Result<Assignment<T>> {
    let (n, m) = (problem.n_masks(), problem.n_categories());
    if n > BRUTE_FORCE_MAX_MASKS || m > BRUTE_FORCE_MAX_CATEGORIES {
        return Err(Error::TooLarge {
            masks: n,
            categories: m,
        });
    }
    let regime = problem.regime();
    let mut search = Search {
        problem,
        regime,
        labels: vec![None; n],
        load: vec![0; m],
        best: None,
    };
    search.descend(0);
    let (pairs, objective) = search.best.expect("the empty or full assignment is always feasible");
    Ok(Assignment {
        pairs,
        objective,
        regime,
    })
}

struct Search<'a, T> {
    problem: &'a MatchingProblem<T>,
    regime: Regime,
    labels: Vec<Option<usize>>,
    load: Vec<usize>,
    best: Option<(Vec<(usize, usize)>, T)>,
}

impl<T: Scalar> Search<'_, T> {
    fn descend(&mut self, mask: usize) {
        let (n, m) = (self.problem.n_masks(), self.problem.n_categories());
        if mask == n {
            self.leaf();
            return;
        }
        // in AllProposals every mask needs a label; skip the "unassigned" branch
        if self.regime == Regime::CountExact || m == 0 {
            self.labels[mask] = None;
            self.descend(mask + 1);
        }
        for j in 0..m {
            if self.regime == Regime::CountExact && self.load[j] >= self.problem.counts()[j] {
                continue;
            }
            self.labels[mask] = Some(j);
            self.load[j] += 1;
            self.descend(mask + 1);
            self.load[j] -= 1;
        }
        self.labels[mask] = None;
    }

    fn leaf(&mut self) {
        let feasible = match self.regime {
            Regime::CountExact => self.load.iter().zip(self.problem.counts()).all(|(a, b)| a == b),
            Regime::AllProposals => self.labels.iter().all(Option::is_some),
        };
        if !feasible {
            return;
        }
        let pairs: Vec<(usize, usize)> = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|j| (i, j)))
            .collect();
        let objective = self.problem.objective_of(&pairs);
        let better = match &self.best {
            None => true,
            Some((bp, bo)) => {
                let (o, b) = (objective.as_f64(), bo.as_f64());
                o < b - TIE || ((o - b).abs() <= TIE && pairs < *bp)
            }
        };
        if better {
            self.best = Some((pairs, objective));
        }
    }
}
