//! Counting-constrained mask-label assignment.
//!
//! Given an `N x M` similarity matrix `s` and per-category counts `num_j`, pick
//! a binary assignment `x` minimizing `sum (1 - s_ij) x_ij` such that every
//! mask takes at most one category and either
//!
//! * every category receives exactly `num_j` masks, when `N >= sum num_j`
//!   ([`Regime::CountExact`]), or
//! * every mask is assigned, when `N < sum num_j` ([`Regime::AllProposals`]).
//!
//! The constraint matrix is a transportation structure, so the problem is
//! solved exactly as a min-cost flow ([`solve_matching`]). Among cost-equal
//! optima the lexicographically smallest sorted pair list is returned.

mod brute;
mod flow;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::similarity::SimilarityMatrix;

pub use brute::{brute_force_matching, BRUTE_FORCE_MAX_CATEGORIES, BRUTE_FORCE_MAX_MASKS};
pub use flow::solve_matching;

/// Absolute tolerance for objective comparisons.
pub const OBJECTIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `N >= sum num_j`: each category gets exactly its count.
    CountExact,
    /// `N < sum num_j`: every proposal is assigned.
    AllProposals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingProblem<T> {
    similarity: SimilarityMatrix<T>,
    counts: Vec<usize>,
}

impl<T: Scalar> MatchingProblem<T> {
    pub fn new(similarity: SimilarityMatrix<T>, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != similarity.n_categories() {
            return Err(Error::Shape(format!(
                "{} counts for {} categories",
                counts.len(),
                similarity.n_categories()
            )));
        }
        Ok(MatchingProblem { similarity, counts })
    }

    pub fn similarity(&self) -> &SimilarityMatrix<T> {
        &self.similarity
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_masks(&self) -> usize {
        self.similarity.n_masks()
    }

    pub fn n_categories(&self) -> usize {
        self.similarity.n_categories()
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn regime(&self) -> Regime {
        if self.n_masks() >= self.total_count() {
            Regime::CountExact
        } else {
            Regime::AllProposals
        }
    }

    /// Number of pairs every feasible assignment has.
    pub fn required_pairs(&self) -> usize {
        match self.regime() {
            Regime::CountExact => self.total_count(),
            Regime::AllProposals => self.n_masks(),
        }
    }

    pub fn cost(&self, mask: usize, category: usize) -> T {
        T::one() - self.similarity.get(mask, category)
    }

    /// `sum (1 - s_ij)` over `pairs`, accumulated in pair order.
    pub fn objective_of(&self, pairs: &[(usize, usize)]) -> T {
        pairs.iter().fold(T::zero(), |acc, &(i, j)| acc + self.cost(i, j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment<T> {
    /// `(mask_index, category_index)`, sorted ascending.
    pub pairs: Vec<(usize, usize)>,
    pub objective: T,
    pub regime: Regime,
}

impl<T: Scalar> Assignment<T> {
    pub fn empty(regime: Regime) -> Self {
        Assignment {
            pairs: Vec::new(),
            objective: T::zero(),
            regime,
        }
    }

    /// Category of each mask, `None` for unassigned masks.
    pub fn labels(&self, n_masks: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_masks];
        for &(i, j) in &self.pairs {
            if i < n_masks {
                out[i] = Some(j);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    IndexOutOfBounds { mask: usize, category: usize },
    /// A mask carries more than one category.
    MaskReused { mask: usize, times: usize },
    /// CountExact: a category did not receive exactly its count.
    CategoryCount { category: usize, assigned: usize, required: usize },
    /// AllProposals: not every proposal was assigned.
    TotalCount { assigned: usize, required: usize },
    WrongRegime { expected: Regime, found: Regime },
    ObjectiveMismatch { stored: f64, recomputed: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IndexOutOfBounds { mask, category } => {
                write!(f, "pair ({mask}, {category}) is out of bounds")
            }
            Violation::MaskReused { mask, times } => {
                write!(f, "mask {mask} is assigned {times} times (at most one category per mask)")
            }
            Violation::CategoryCount {
                category,
                assigned,
                required,
            } => write!(f, "category {category} has {assigned} masks, count requires {required}"),
            Violation::TotalCount { assigned, required } => {
                write!(f, "{assigned} masks assigned, all {required} proposals must be assigned")
            }
            Violation::WrongRegime { expected, found } => {
                write!(f, "assignment regime {found:?}, problem requires {expected:?}")
            }
            Violation::ObjectiveMismatch { stored, recomputed } => {
                write!(f, "stored objective {stored} differs from recomputed {recomputed}")
            }
        }
    }
}

/// Lists every constraint the assignment breaks; empty when it is feasible for
/// its regime and its stored objective is consistent.
pub fn validate_assignment<T: Scalar>(problem: &MatchingProblem<T>, assignment: &Assignment<T>) -> Vec<Violation> {
    let (n, m) = (problem.n_masks(), problem.n_categories());
    let mut out = Vec::new();
    let expected = problem.regime();
    if assignment.regime != expected {
        out.push(Violation::WrongRegime {
            expected,
            found: assignment.regime,
        });
    }

    let mut per_mask: BTreeMap<usize, usize> = BTreeMap::new();
    let mut per_cat = vec![0usize; m];
    let mut in_bounds = Vec::with_capacity(assignment.pairs.len());
    for &(i, j) in &assignment.pairs {
        if i >= n || j >= m {
            out.push(Violation::IndexOutOfBounds { mask: i, category: j });
            continue;
        }
        *per_mask.entry(i).or_default() += 1;
        per_cat[j] += 1;
        in_bounds.push((i, j));
    }
    for (&mask, &times) in &per_mask {
        if times > 1 {
            out.push(Violation::MaskReused { mask, times });
        }
    }
    match expected {
        Regime::CountExact => {
            for (category, (&assigned, &required)) in per_cat.iter().zip(problem.counts()).enumerate() {
                if assigned != required {
                    out.push(Violation::CategoryCount {
                        category,
                        assigned,
                        required,
                    });
                }
            }
        }
        Regime::AllProposals => {
            if in_bounds.len() != n {
                out.push(Violation::TotalCount {
                    assigned: in_bounds.len(),
                    required: n,
                });
            }
        }
    }

    let recomputed = problem.objective_of(&in_bounds).as_f64();
    let stored = assignment.objective.as_f64();
    if !((recomputed - stored).abs() <= OBJECTIVE_TOLERANCE) {
        out.push(Violation::ObjectiveMismatch { stored, recomputed });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(rows: &[Vec<f64>], counts: &[usize]) -> MatchingProblem<f64> {
        MatchingProblem::new(SimilarityMatrix::from_rows(rows).unwrap(), counts.to_vec()).unwrap()
    }

    #[test]
    fn regime_split() {
        assert_eq!(problem(&[vec![0.5, 0.5]], &[1, 0]).regime(), Regime::CountExact);
        assert_eq!(problem(&[vec![0.3, 0.7]], &[2, 1]).regime(), Regime::AllProposals);
        assert_eq!(problem(&[vec![0.3, 0.7]], &[2, 1]).required_pairs(), 1);
    }

    #[test]
    fn count_length_checked() {
        let s = SimilarityMatrix::from_rows(&[vec![0.1f64, 0.2]]).unwrap();
        assert!(matches!(MatchingProblem::new(s, vec![1]), Err(Error::Shape(_))));
    }

    #[test]
    fn solver_output_validates() {
        let p = problem(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]], &[1, 1]);
        let a = solve_matching(&p);
        assert!(validate_assignment(&p, &a).is_empty());
    }

    #[test]
    fn reused_mask_is_one_violation() {
        let p = problem(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]], &[1, 1]);
        let pairs = vec![(0, 0), (0, 1)];
        let a = Assignment {
            objective: p.objective_of(&pairs),
            pairs,
            regime: Regime::CountExact,
        };
        let v = validate_assignment(&p, &a);
        assert_eq!(v, vec![Violation::MaskReused { mask: 0, times: 2 }]);
    }

    #[test]
    fn short_category_is_one_violation() {
        let p = problem(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]], &[1, 1]);
        let pairs = vec![(0, 0)];
        let a = Assignment {
            objective: p.objective_of(&pairs),
            pairs,
            regime: Regime::CountExact,
        };
        let v = validate_assignment(&p, &a);
        assert_eq!(
            v,
            vec![Violation::CategoryCount {
                category: 1,
                assigned: 0,
                required: 1
            }]
        );
    }

    #[test]
    fn out_of_bounds_and_objective_reported() {
        let p = problem(&[vec![0.9]], &[1]);
        let a = Assignment {
            pairs: vec![(0, 0), (3, 0)],
            objective: 5.0,
            regime: Regime::CountExact,
        };
        let v = validate_assignment(&p, &a);
        assert!(v.contains(&Violation::IndexOutOfBounds { mask: 3, category: 0 }));
        assert!(v.iter().any(|x| matches!(x, Violation::ObjectiveMismatch { .. })));
    }

    #[test]
    fn all_proposals_total_checked() {
        let p = problem(&[vec![0.3, 0.7], vec![0.1, 0.2]], &[2, 2]);
        let a = Assignment {
            pairs: vec![(0, 1)],
            objective: 0.3,
            regime: Regime::AllProposals,
        };
        let v = validate_assignment(&p, &a);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("all 2 proposals"));
    }
}
