//! Min-cost flow on the network
//!
//! ```text
//! source --(cap 1, cost 0)--> mask i --(cap 1, cost 1 - s_ij)--> category j --(cap c_j)--> sink
//! ```
//!
//! with `c_j = num_j` and demand `sum num_j` in the count-exact regime, or
//! `c_j = N` and demand `N` when every proposal must be assigned.
//!
//! Costs are quantized to integers so that ties are exact. Mask nodes have unit
//! capacity, so every shortest path alternates categories through single masks;
//! the search runs on the contracted category graph (Bellman-Ford over `M`
//! nodes) after an `O(N M)` sweep that prices the category-to-category moves.
//! A second pass walks pairs in index order and swaps in any pair that lies on a
//! zero reduced-cost cycle, which yields the lexicographically smallest optimum.

use std::collections::VecDeque;

use super::{Assignment, MatchingProblem, Regime};
use crate::scalar::Scalar;

/// Cost quantum is `2^-40`; the objective of an `N`-mask problem is within
/// `N * 2^-41` of the real optimum.
const COST_SCALE: f64 = (1u64 << 40) as f64;
const INF: i64 = i64::MAX / 4;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pred {
    None,
    /// Entered from the source through a free mask.
    Source(usize),
    /// Entered from another category by moving a mask.
    Move { from: usize, mask: usize },
}

struct Network {
    n: usize,
    m: usize,
    costs: Vec<i64>,
    caps: Vec<usize>,
    assign: Vec<Option<usize>>,
    load: Vec<usize>,
}

impl Network {
    fn cost(&self, i: usize, j: usize) -> i64 {
        self.costs[i * self.m + j]
    }

    /// Cheapest free mask per category and cheapest single-mask move between
    /// every ordered pair of categories. Ties keep the lower mask index.
    fn price(&self) -> (Vec<(i64, usize)>, Vec<(i64, usize)>, Vec<(i64, usize)>) {
        let m = self.m;
        let mut entry = vec![(INF, usize::MAX); m];
        let mut exit = vec![(INF, usize::MAX); m];
        let mut moves = vec![(INF, usize::MAX); m * m];
        for i in 0..self.n {
            let row = &self.costs[i * m..(i + 1) * m];
            match self.assign[i] {
                None => {
                    for (j, &c) in row.iter().enumerate() {
                        if c < entry[j].0 {
                            entry[j] = (c, i);
                        }
                    }
                }
                Some(a) => {
                    let base = row[a];
                    if -base < exit[a].0 {
                        exit[a] = (-base, i);
                    }
                    let out = &mut moves[a * m..(a + 1) * m];
                    for (j, &c) in row.iter().enumerate() {
                        if j != a && c - base < out[j].0 {
                            out[j] = (c - base, i);
                        }
                    }
                }
            }
        }
        (entry, exit, moves)
    }

    /// One successive-shortest-path augmentation. Returns false when the sink
    /// is unreachable.
    fn augment(&mut self) -> bool {
        let m = self.m;
        let (entry, _, moves) = self.price();
        let mut dist: Vec<i64> = entry.iter().map(|e| e.0).collect();
        let mut pred: Vec<Pred> = entry
            .iter()
            .map(|&(c, i)| if c < INF { Pred::Source(i) } else { Pred::None })
            .collect();
        for _ in 0..m {
            let mut changed = false;
            for a in 0..m {
                if dist[a] >= INF {
                    continue;
                }
                for b in 0..m {
                    let (w, mask) = moves[a * m + b];
                    if w < INF && dist[a] + w < dist[b] {
                        dist[b] = dist[a] + w;
                        pred[b] = Pred::Move { from: a, mask };
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let end = (0..m)
            .filter(|&j| self.load[j] < self.caps[j] && dist[j] < INF)
            .min_by_key(|&j| (dist[j], j));
        let Some(end) = end else {
            return false;
        };

        let mut cur = end;
        for _ in 0..=m {
            match pred[cur] {
                Pred::Source(i) => {
                    self.assign[i] = Some(cur);
                    self.load[end] += 1;
                    return true;
                }
                Pred::Move { from, mask } => {
                    self.assign[mask] = Some(cur);
                    cur = from;
                }
                Pred::None => break,
            }
        }
        unreachable!("shortest-path tree has no cycles once the flow is optimal")
    }

    /// Node potentials certifying optimality: every residual edge has
    /// non-negative reduced cost `c(u, v) + pi(u) - pi(v)`.
    fn potentials(&self) -> Potentials {
        let m = self.m;
        let (source, sink) = (m, m + 1);
        let (entry, exit, moves) = self.price();
        let mut edges: Vec<(usize, usize, i64)> = Vec::new();
        for j in 0..m {
            if entry[j].0 < INF {
                edges.push((source, j, entry[j].0));
            }
            if exit[j].0 < INF {
                edges.push((j, source, exit[j].0));
            }
            if self.load[j] < self.caps[j] {
                edges.push((j, sink, 0));
            }
            if self.load[j] > 0 {
                edges.push((sink, j, 0));
            }
            for k in 0..m {
                if moves[j * m + k].0 < INF {
                    edges.push((j, k, moves[j * m + k].0));
                }
            }
        }
        let mut pi = vec![0i64; m + 2];
        for _ in 0..m + 2 {
            let mut changed = false;
            for &(u, v, w) in &edges {
                if pi[u] + w < pi[v] {
                    pi[v] = pi[u] + w;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let masks = (0..self.n)
            .map(|i| match self.assign[i] {
                Some(a) => pi[a] - self.cost(i, a),
                None => pi[source],
            })
            .collect();
        Potentials {
            category: pi[..m].to_vec(),
            source: pi[source],
            sink: pi[sink],
            mask: masks,
        }
    }

    fn lexicographic_refine(&mut self) {
        let (n, m) = (self.n, self.m);
        let pot = self.potentials();
        let rc = |net: &Network, i: usize, j: usize| net.cost(i, j) + pot.mask[i] - pot.category[j];
        let mut locked = vec![false; n];

        // node ids: masks 0..n, categories n..n+m, source, sink
        let cat = |j: usize| n + j;
        let source = n + m;
        let sink = n + m + 1;
        let mut parent = vec![usize::MAX; n + m + 2];
        let mut queue = VecDeque::new();

        for i in 0..n {
            for j in 0..m {
                if self.assign[i] == Some(j) {
                    locked[i] = true;
                    continue;
                }
                if locked[i] || rc(self, i, j) != 0 {
                    continue;
                }
                let k = i * m + j;
                // search a tight residual path category j ~> mask i that only
                // touches pairs ordered after (i, j)
                parent.fill(usize::MAX);
                queue.clear();
                parent[cat(j)] = cat(j);
                queue.push_back(cat(j));
                let mut found = false;
                while let Some(u) = queue.pop_front() {
                    let visit = |v: usize, parent: &mut Vec<usize>, queue: &mut VecDeque<usize>| {
                        if parent[v] == usize::MAX {
                            parent[v] = u;
                            queue.push_back(v);
                        }
                    };
                    if u < n {
                        let mi = u;
                        for jj in 0..m {
                            if self.assign[mi] != Some(jj) && mi * m + jj > k && rc(self, mi, jj) == 0 {
                                visit(cat(jj), &mut parent, &mut queue);
                            }
                        }
                        if self.assign[mi].is_some() && pot.mask[mi] == pot.source {
                            visit(source, &mut parent, &mut queue);
                        }
                    } else if u < n + m {
                        let c = u - n;
                        for mi in 0..n {
                            if self.assign[mi] == Some(c)
                                && !locked[mi]
                                && pot.category[c] - self.cost(mi, c) == pot.mask[mi]
                            {
                                visit(mi, &mut parent, &mut queue);
                            }
                        }
                        if self.load[c] < self.caps[c] && pot.category[c] == pot.sink {
                            visit(sink, &mut parent, &mut queue);
                        }
                    } else if u == source {
                        for mi in 0..n {
                            if self.assign[mi].is_none() && pot.source == pot.mask[mi] {
                                visit(mi, &mut parent, &mut queue);
                            }
                        }
                    } else {
                        for c in 0..m {
                            if self.load[c] > 0 && pot.sink == pot.category[c] {
                                visit(cat(c), &mut parent, &mut queue);
                            }
                        }
                    }
                    if parent[i] != usize::MAX {
                        found = true;
                        break;
                    }
                }
                if !found {
                    continue;
                }

                // rebuild the path and apply the cycle i -> j ~> i
                let mut path = vec![i];
                let mut v = i;
                while v != cat(j) {
                    v = parent[v];
                    path.push(v);
                }
                path.reverse();
                let mut updates = vec![(i, Some(j))];
                for w in path.windows(2) {
                    let (u, v) = (w[0], w[1]);
                    if u < n && u != i {
                        let target = if v == source { None } else { Some(v - n) };
                        updates.push((u, target));
                    }
                }
                for (mi, target) in updates {
                    if let Some(old) = self.assign[mi] {
                        self.load[old] -= 1;
                    }
                    if let Some(new) = target {
                        self.load[new] += 1;
                    }
                    self.assign[mi] = target;
                }
                locked[i] = true;
            }
        }
    }
}

struct Potentials {
    category: Vec<i64>,
    source: i64,
    sink: i64,
    mask: Vec<i64>,
}

fn quantize(cost: f64) -> i64 {
    (cost * COST_SCALE).round() as i64
}

/// Exact optimum of the counting-constrained assignment problem.
///
/// The regime follows from `N` versus `sum num_j`. Among optima of equal cost
/// the lexicographically smallest sorted `(mask, category)` list is returned.
/// Cost ties are judged on costs quantized to `2^-40`.
pub fn solve_matching<T: Scalar>(problem: &MatchingProblem<T>) -> Assignment<T> {
    let (n, m) = (problem.n_masks(), problem.n_categories());
    let regime = problem.regime();
    let demand = problem.required_pairs();
    if demand == 0 || m == 0 {
        return Assignment::empty(regime);
    }
    let caps = match regime {
        Regime::CountExact => problem.counts().to_vec(),
        Regime::AllProposals => vec![n; m],
    };
    let costs = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| quantize(problem.cost(i, j).as_f64()))
        .collect();
    let mut net = Network {
        n,
        m,
        costs,
        caps,
        assign: vec![None; n],
        load: vec![0; m],
    };
    for _ in 0..demand {
        let ok = net.augment();
        debug_assert!(ok, "demand is always feasible for the selected regime");
        if !ok {
            break;
        }
    }
    net.lexicographic_refine();

    let pairs: Vec<(usize, usize)> = net
        .assign
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|j| (i, j)))
        .collect();
    Assignment {
        objective: problem.objective_of(&pairs),
        pairs,
        regime,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::SimilarityMatrix;

    fn problem(rows: &[Vec<f64>], counts: &[usize]) -> MatchingProblem<f64> {
        MatchingProblem::new(SimilarityMatrix::from_rows(rows).unwrap(), counts.to_vec()).unwrap()
    }

    #[test]
    fn single_pair() {
        let a = solve_matching(&problem(&[vec![0.9]], &[1]));
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!((a.objective - 0.1).abs() < 1e-12);
        assert_eq!(a.regime, Regime::CountExact);
    }

    #[test]
    fn three_by_two() {
        let a = solve_matching(&problem(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]], &[1, 1]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.objective - 0.3).abs() < 1e-12);
    }

    #[test]
    fn fewer_masks_than_counts() {
        let a = solve_matching(&problem(&[vec![0.3, 0.7]], &[2, 1]));
        assert_eq!(a.regime, Regime::AllProposals);
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert!((a.objective - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_counts_and_empty_shapes() {
        let a = solve_matching(&problem(&[vec![0.3, 0.7], vec![0.1, 0.9]], &[0, 0]));
        assert!(a.pairs.is_empty() && a.objective == 0.0);
        let none = MatchingProblem::new(SimilarityMatrix::<f64>::new(0, 2, vec![]).unwrap(), vec![1, 2]).unwrap();
        let a = solve_matching(&none);
        assert_eq!(a.regime, Regime::AllProposals);
        assert!(a.pairs.is_empty());
        let no_cats = MatchingProblem::new(SimilarityMatrix::<f64>::new(3, 0, vec![]).unwrap(), vec![]).unwrap();
        assert!(solve_matching(&no_cats).pairs.is_empty());
    }

    #[test]
    fn ties_resolve_to_lowest_indices() {
        let a = solve_matching(&problem(&[vec![0.5, 0.5]], &[1, 0]));
        assert_eq!(a.pairs, vec![(0, 0)]);
        // every mask identical: pick masks 0 and 1
        let a = solve_matching(&problem(&[vec![0.4], vec![0.4], vec![0.4]], &[2]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 0)]);
        // identical rows, two categories: mask 0 takes category 0
        let rows = vec![vec![0.6, 0.6]; 3];
        let a = solve_matching(&problem(&rows, &[1, 1]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let a = solve_matching(&problem(&rows, &[5, 5]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 0), (2, 0)]);
    }

    #[test]
    fn tie_needs_multi_step_swap() {
        // optimum cost 0.6 is reached by {(0,1),(1,0)} and {(0,0),(1,1)} alike
        let a = solve_matching(&problem(&[vec![0.7, 0.5], vec![0.9, 0.7]], &[1, 1]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn negative_similarities_allowed() {
        let a = solve_matching(&problem(&[vec![-0.9, -0.2], vec![-0.5, -1.0]], &[1, 1]));
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert!((a.objective - 2.7).abs() < 1e-12);
    }

    #[test]
    fn single_precision_problem() {
        let s = SimilarityMatrix::<f32>::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let a = solve_matching(&MatchingProblem::new(s, vec![1, 1]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.objective - 0.3).abs() < 1e-6);
    }
}
