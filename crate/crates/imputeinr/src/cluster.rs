//! Variable clustering: pairwise similarity, agglomerative merging, and
//! the permutation that makes cluster members contiguous so the grouped
//! residual network can slice them by index range.

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesWindow;
use crate::matrix::Matrix;

/// Cluster assignments for the N variables plus the induced permutation.
///
/// `pi[j]` is the original index of the variable placed at reordered
/// position `j`; cluster ids are compact (`0..k`) and equal ids occupy a
/// contiguous range after reordering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub pi: Vec<usize>,
}

impl ClusterPartition {
    /// Build a partition from raw cluster ids, compacting them in numeric
    /// order and deriving the stable contiguity permutation.
    pub fn from_assignment(raw: &[usize]) -> Self {
        assert!(!raw.is_empty(), "partition needs at least one variable");
        let mut ids: Vec<usize> = raw.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let assignment: Vec<usize> = raw
            .iter()
            .map(|id| ids.binary_search(id).expect("id present"))
            .collect();
        let k = ids.len();

        let mut pi: Vec<usize> = (0..raw.len()).collect();
        pi.sort_by_key(|&i| (assignment[i], i));
        ClusterPartition { assignment, k, pi }
    }

    /// Everything in one cluster; the identity permutation.
    pub fn single_group(n: usize) -> Self {
        ClusterPartition::from_assignment(&vec![0; n])
    }

    /// Split `0..n` into `groups` contiguous chunks of near-equal size,
    /// used when clustering is switched off but grouping stays on.
    pub fn contiguous(n: usize, groups: usize) -> Self {
        let groups = groups.clamp(1, n.max(1));
        let assignment: Vec<usize> = (0..n).map(|i| i * groups / n.max(1)).collect();
        ClusterPartition::from_assignment(&assignment)
    }

    pub fn n_vars(&self) -> usize {
        self.assignment.len()
    }

    /// Cluster sizes in cluster-id order, which is also the order groups
    /// appear along the reordered variable axis.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &id in &self.assignment {
            sizes[id] += 1;
        }
        sizes
    }

    /// Clusters as sorted member lists, in cluster-id order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &id) in self.assignment.iter().enumerate() {
            groups[id].push(i);
        }
        groups
    }

    pub fn is_identity(&self) -> bool {
        self.pi.iter().enumerate().all(|(j, &p)| j == p)
    }
}

/// Pearson correlation of every variable pair over the timestamps where
/// both are observed. Pairs with fewer than two common observations, and
/// pairs where either side is constant on the common set, get 0.
pub fn similarity_matrix(w: &TimeSeriesWindow) -> Matrix {
    let n = w.n_vars();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        s.set(i, i, 1.0);
        for j in (i + 1)..n {
            let r = pairwise_pearson(w, i, j);
            s.set(i, j, r);
            s.set(j, i, r);
        }
    }
    s
}

fn pairwise_pearson(w: &TimeSeriesWindow, i: usize, j: usize) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in 0..w.len() {
        if w.mask.get(i, t) == 1.0 && w.mask.get(j, t) == 1.0 {
            xs.push(w.values.get(i, t));
            ys.push(w.values.get(j, t));
        }
    }
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Agglomerative clustering under average-linkage correlation distance
/// `d = 1 - s`. Starts from singletons and merges the closest pair until
/// the minimum distance reaches `epsilon` or one cluster remains. Ties
/// break toward the pair with the lexicographically smallest minimum
/// member indices, so results are reproducible.
pub fn agglomerate(s: &Matrix, epsilon: f64) -> ClusterPartition {
    assert_eq!(s.rows(), s.cols(), "similarity matrix must be square");
    assert!(epsilon >= 0.0, "epsilon must be nonnegative");
    let n = s.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    // Distance, tie-break key, and positions of the best pair to merge.
    type Candidate = (f64, (usize, usize), (usize, usize));

    while clusters.len() > 1 {
        let mut best: Option<Candidate> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let d = average_distance(s, &clusters[a], &clusters[b]);
                let key = (clusters[a][0].min(clusters[b][0]), clusters[a][0].max(clusters[b][0]));
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, (a, b)));
                }
            }
        }
        let (d, _, (a, b)) = best.expect("at least one pair");
        if d >= epsilon {
            break;
        }
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
    }

    // Relabel so the cluster containing the smallest variable index is 0.
    clusters.sort_by_key(|members| members[0]);
    let mut assignment = vec![0usize; n];
    for (id, members) in clusters.iter().enumerate() {
        for &m in members {
            assignment[m] = id;
        }
    }
    ClusterPartition::from_assignment(&assignment)
}

fn average_distance(s: &Matrix, a: &[usize], b: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &i in a {
        for &j in b {
            acc += 1.0 - s.get(i, j);
        }
    }
    acc / (a.len() * b.len()) as f64
}

/// Distance between every pair of final clusters, for asserting the
/// stopping contract.
pub fn min_intercluster_distance(s: &Matrix, p: &ClusterPartition) -> Option<f64> {
    let groups = p.groups();
    let mut min = None;
    for a in 0..groups.len() {
        for b in (a + 1)..groups.len() {
            let d = average_distance(s, &groups[a], &groups[b]);
            min = Some(min.map_or(d, |m: f64| m.min(d)));
        }
    }
    min
}

/// Permute a window's variables (values, mask, names) by `pi`.
pub fn reorder(w: &TimeSeriesWindow, p: &ClusterPartition) -> TimeSeriesWindow {
    assert_eq!(w.n_vars(), p.n_vars(), "partition size");
    let values = reorder_grid(&w.values, p);
    let mask = reorder_grid(&w.mask, p);
    let variable_names = p
        .pi
        .iter()
        .map(|&i| w.variable_names[i].clone())
        .collect();
    TimeSeriesWindow {
        values,
        mask,
        variable_names,
        t_grid: w.t_grid.clone(),
    }
}

/// Row-permute a grid by `pi` (row `j` of the result is row `pi[j]` of the
/// input).
pub fn reorder_grid(grid: &Matrix, p: &ClusterPartition) -> Matrix {
    assert_eq!(grid.rows(), p.n_vars(), "partition size");
    Matrix::from_fn(grid.rows(), grid.cols(), |j, t| grid.get(p.pi[j], t))
}

/// Undo [`reorder_grid`]: row `pi[j]` of the result is row `j` of the input.
pub fn inverse_reorder_grid(grid: &Matrix, p: &ClusterPartition) -> Matrix {
    assert_eq!(grid.rows(), p.n_vars(), "partition size");
    let mut out = Matrix::zeros(grid.rows(), grid.cols());
    for j in 0..grid.rows() {
        let dest = p.pi[j];
        for t in 0..grid.cols() {
            out.set(dest, t, grid.get(j, t));
        }
    }
    out
}
