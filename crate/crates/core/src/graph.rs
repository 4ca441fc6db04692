//! Leader–follower communication digraph.
//!
//! Node 0 is the leader; followers are `1..=N`. An edge `(from, to, w)` means
//! `to` receives information from `from` with weight `a_{to,from} = w`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{eig, Mat, Spectrum};

/// Safety factor applied to [`omega_bound`] when ω is chosen automatically.
pub const OMEGA_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Digraph {
    n_followers: usize,
    edges: Vec<Edge>,
}

impl Digraph {
    pub fn new(n_followers: usize, edges: Vec<Edge>) -> Result<Self> {
        if n_followers == 0 {
            return Err(Error::Graph("at least one follower is required".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.from > n_followers || e.to > n_followers {
                return Err(Error::Graph(format!(
                    "edge {}->{} references a node outside 0..={n_followers}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::Graph(format!("self-loop at node {}", e.from)));
            }
            if e.to == 0 {
                return Err(Error::Graph(format!(
                    "edge {}->0: the leader has no in-neighbours",
                    e.from
                )));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Graph(format!(
                    "edge {}->{} has non-positive weight {}",
                    e.from, e.to, e.weight
                )));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::Graph(format!("duplicate edge {}->{}", e.from, e.to)));
            }
        }
        Ok(Self { n_followers, edges })
    }

    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Weight `a_ij` (`i` receives from `j`), zero when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.edges
            .iter()
            .find(|e| e.to == i && e.from == j)
            .map_or(0.0, |e| e.weight)
    }

    /// In-neighbours of node `i` with their weights, leader included.
    pub fn in_neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .edges
            .iter()
            .filter(|e| e.to == i)
            .map(|e| (e.from, e.weight))
            .collect();
        out.sort_by_key(|&(j, _)| j);
        out
    }

    /// In-neighbours of `i` excluding the leader.
    pub fn follower_neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        self.in_neighbors(i).into_iter().filter(|&(j, _)| j != 0).collect()
    }

    /// Total in-weight `Σ_j a_ij` over all neighbours (leader included).
    pub fn in_weight(&self, i: usize) -> f64 {
        self.in_neighbors(i).iter().map(|&(_, w)| w).sum()
    }

    /// Adjacency matrix over nodes `0..=N`, `a[(i, j)] = a_ij`.
    pub fn adjacency(&self) -> Mat {
        let n = self.n_followers + 1;
        let mut a = DMatrix::zeros(n, n);
        for e in &self.edges {
            a[(e.to, e.from)] = e.weight;
        }
        a
    }
}

#[derive(Clone, Debug)]
pub struct GraphMatrices {
    pub h: Mat,
    pub d: Mat,
    pub dh: Mat,
    pub spectrum_dh: Spectrum,
}

pub fn build_matrices(g: &Digraph) -> Result<GraphMatrices> {
    let n = g.n_followers();
    let adj = g.adjacency();
    let mut h = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    for i in 1..=n {
        let total: f64 = (0..=n).map(|j| adj[(i, j)]).sum();
        if total <= 0.0 {
            return Err(Error::Graph(format!(
                "follower {i} has no in-neighbour: normalization undefined"
            )));
        }
        h[(i - 1, i - 1)] = total;
        for j in 1..=n {
            if j != i {
                h[(i - 1, j - 1)] = -adj[(i, j)];
            }
        }
        d[(i - 1, i - 1)] = 1.0 / total;
    }
    let dh = &d * &h;
    let spectrum_dh = eig(&dh)?;
    Ok(GraphMatrices {
        h,
        d,
        dh,
        spectrum_dh,
    })
}

/// Every follower reachable from the leader.
pub fn check_spanning_tree(g: &Digraph) -> bool {
    let n = g.n_followers();
    let mut reached = vec![false; n + 1];
    reached[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for e in g.edges().iter().filter(|e| e.from == u) {
            if !reached[e.to] {
                reached[e.to] = true;
                queue.push_back(e.to);
            }
        }
    }
    reached.iter().all(|&r| r)
}

/// Upper end of the admissible gain scaling, `2·min Re λ(DH)`.
pub fn omega_bound(gm: &GraphMatrices) -> Result<f64> {
    let min_re = gm.spectrum_dh.min_re();
    if min_re <= 1e-12 {
        return Err(Error::Graph(format!(
            "min Re λ(DH) = {min_re:.3e}: no leader-rooted spanning tree or numerical failure"
        )));
    }
    Ok(2.0 * min_re)
}

/// Random digraph with a leader-rooted spanning tree plus extra edges (cycles allowed).
pub fn random_connected(n_followers: usize, extra_edge_prob: f64, seed: u64) -> Digraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (1..=n_followers).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut edges = Vec::new();
    let mut present = BTreeSet::new();
    let mut attached = vec![0usize];
    for &node in &order {
        let parent = attached[rng.random_range(0..attached.len())];
        edges.push(Edge {
            from: parent,
            to: node,
            weight: rng.random_range(0.5..2.0),
        });
        present.insert((parent, node));
        attached.push(node);
    }
    for to in 1..=n_followers {
        for from in 0..=n_followers {
            if from != to && !present.contains(&(from, to)) && rng.random_bool(extra_edge_prob) {
                edges.push(Edge {
                    from,
                    to,
                    weight: rng.random_range(0.5..2.0),
                });
                present.insert((from, to));
            }
        }
    }
    Digraph::new(n_followers, edges).expect("generated digraph is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::mat;
    use proptest::prelude::*;

    fn edge(from: usize, to: usize) -> Edge {
        Edge {
            from,
            to,
            weight: 1.0,
        }
    }

    pub(crate) fn d1() -> Digraph {
        Digraph::new(3, vec![edge(0, 1), edge(1, 2), edge(2, 3), edge(3, 1)]).unwrap()
    }

    #[test]
    fn d1_matrices() {
        let gm = build_matrices(&d1()).unwrap();
        assert_eq!(
            gm.h,
            mat(3, 3, &[2.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0])
        );
        assert_eq!(gm.d, mat(3, 3, &[0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(
            gm.dh,
            mat(3, 3, &[1.0, 0.0, -0.5, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0])
        );
        assert!((gm.spectrum_dh.min_re() - (1.0 - 0.5f64.cbrt())).abs() < 1e-10);
        assert!((omega_bound(&gm).unwrap() - 0.41260).abs() < 1e-4);
    }

    #[test]
    fn spanning_tree_cases() {
        assert!(check_spanning_tree(&d1()));
        let isolated = Digraph::new(3, vec![edge(0, 1), edge(1, 2)]).unwrap();
        assert!(!check_spanning_tree(&isolated));
        let two_cycle = Digraph::new(2, vec![edge(0, 1), edge(1, 2), edge(2, 1)]).unwrap();
        assert!(check_spanning_tree(&two_cycle));
    }

    #[test]
    fn isolated_follower_has_undefined_normalization() {
        let isolated = Digraph::new(3, vec![edge(0, 1), edge(1, 2)]).unwrap();
        assert!(matches!(build_matrices(&isolated), Err(Error::Graph(_))));
    }

    #[test]
    fn omega_for_star_and_chain() {
        let star = Digraph::new(3, vec![edge(0, 1), edge(0, 2), edge(0, 3)]).unwrap();
        let gm = build_matrices(&star).unwrap();
        assert_eq!(gm.dh, Mat::identity(3, 3));
        assert!((omega_bound(&gm).unwrap() - 2.0).abs() < 1e-12);
        let chain = Digraph::new(2, vec![edge(0, 1), edge(1, 2)]).unwrap();
        let gm = build_matrices(&chain).unwrap();
        assert_eq!(gm.dh, mat(2, 2, &[1.0, 0.0, -1.0, 1.0]));
        assert!((omega_bound(&gm).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_edges() {
        assert!(Digraph::new(2, vec![edge(1, 1)]).is_err());
        assert!(Digraph::new(2, vec![edge(1, 0)]).is_err());
        assert!(Digraph::new(2, vec![Edge { from: 0, to: 1, weight: 0.0 }]).is_err());
        assert!(Digraph::new(2, vec![edge(0, 3)]).is_err());
        assert!(Digraph::new(2, vec![edge(0, 1), edge(0, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn row_sums_expose_leader_weights(n in 1usize..6, p in 0.0f64..0.6, seed in 0u64..1000) {
            let g = random_connected(n, p, seed);
            let gm = build_matrices(&g).unwrap();
            for i in 1..=n {
                let row_sum: f64 = gm.h.row(i - 1).iter().sum();
                prop_assert!((row_sum - g.weight(i, 0)).abs() < 1e-12);
                let dh_sum: f64 = gm.dh.row(i - 1).iter().sum();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&dh_sum));
                prop_assert!((dh_sum - g.weight(i, 0) / g.in_weight(i)).abs() < 1e-12);
            }
        }

        #[test]
        fn connected_graphs_have_right_half_plane_dh(n in 1usize..6, p in 0.0f64..0.8, seed in 0u64..1000) {
            let g = random_connected(n, p, seed);
            prop_assert!(check_spanning_tree(&g));
            let gm = build_matrices(&g).unwrap();
            prop_assert!(gm.spectrum_dh.min_re() > 0.0);
        }
    }
}
