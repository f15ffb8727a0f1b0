//! Multi-seed greedy γ-quasi-clique search and an exhaustive reference.

use serde::{Deserialize, Serialize};

use crate::diagnosis::graph::InterchangeGraph;
use crate::error::{Error, Result};

/// Largest graph the exhaustive oracle accepts.
pub const ORACLE_MAX_NODES: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuasiCliqueParams {
    /// Density threshold in (0, 1]; 1 asks for true cliques.
    pub gamma: f64,
    pub min_size: usize,
    /// Number of highest-degree nodes tried as seeds.
    pub seed_count: usize,
    /// K: at most K − 1 target buckets plus the residual.
    pub max_buckets: usize,
}

impl Default for QuasiCliqueParams {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            min_size: 2,
            seed_count: 10,
            max_buckets: 2,
        }
    }
}

impl QuasiCliqueParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.min_size < 2 || self.seed_count < 1 || self.max_buckets < 2 {
            return Err(Error::InvalidArgument(format!(
                "need min_size >= 2, seed_count >= 1, max_buckets >= 2; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Greedy expansion from the top-degree seeds of `G[available]`.
///
/// Each step adds the candidate giving the highest density, provided it stays
/// ≥ γ; ties go to the lowest node index. Among seeds the largest result wins,
/// the earlier seed on equal size. Returns the chosen nodes in ascending order,
/// or an empty set if nothing reaches `min_size`.
pub fn find_quasi_clique(
    graph: &InterchangeGraph,
    available: &[usize],
    params: &QuasiCliqueParams,
) -> Vec<usize> {
    let mut nodes: Vec<usize> = available.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if nodes.len() < params.min_size {
        return Vec::new();
    }

    let degree = |v: usize| nodes.iter().filter(|&&u| graph.has_edge(v, u)).count();
    let mut by_degree: Vec<(usize, usize)> = nodes.iter().map(|&v| (v, degree(v))).collect();
    // stable: equal degrees keep ascending index order
    by_degree.sort_by_key(|&(_, d)| std::cmp::Reverse(d));

    let mut best: Vec<usize> = Vec::new();
    for &(seed, _) in by_degree.iter().take(params.seed_count.min(nodes.len())) {
        let members = expand(graph, &nodes, seed, params.gamma);
        if members.len() >= params.min_size && members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    best
}

fn expand(graph: &InterchangeGraph, nodes: &[usize], seed: usize, gamma: f64) -> Vec<usize> {
    let mut members = vec![seed];
    // candidates in ascending index order, with their edge count into the current set
    let mut candidates: Vec<(usize, usize)> = nodes
        .iter()
        .filter(|&&w| w != seed)
        .map(|&w| (w, usize::from(graph.has_edge(w, seed))))
        .collect();
    let mut inner_edges = 0usize;
    while !candidates.is_empty() {
        let k = members.len() + 1;
        let pairs = (k * (k - 1) / 2) as f64;
        let mut pick: Option<(usize, f64)> = None;
        for (slot, &(_, links)) in candidates.iter().enumerate() {
            let rho = (inner_edges + links) as f64 / pairs;
            if rho >= gamma && pick.is_none_or(|(_, best)| rho > best) {
                pick = Some((slot, rho));
            }
        }
        let Some((slot, _)) = pick else { break };
        let (chosen, links) = candidates.remove(slot);
        inner_edges += links;
        members.push(chosen);
        for (w, l) in candidates.iter_mut() {
            *l += usize::from(graph.has_edge(*w, chosen));
        }
    }
    members
}

/// Maximum-cardinality subset with density ≥ γ, by exhaustive enumeration.
///
/// Ties are broken by the lexicographically smallest sorted index set. Returns
/// an empty set if no subset of size ≥ `min_size` qualifies.
pub fn exact_quasi_clique_oracle(
    graph: &InterchangeGraph,
    gamma: f64,
    min_size: usize,
) -> Result<Vec<usize>> {
    let n = graph.len();
    if n > ORACLE_MAX_NODES {
        return Err(Error::GraphTooLarge(n, ORACLE_MAX_NODES));
    }
    let adj: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| graph.has_edge(i, j))
                .fold(0u32, |m, j| m | (1 << j))
        })
        .collect();
    for size in (min_size.max(1)..=n).rev() {
        let pairs = (size * (size.saturating_sub(1)) / 2) as f64;
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            let mask = combo.iter().fold(0u32, |m, &i| m | (1 << i));
            let twice_edges: u32 = combo.iter().map(|&i| (adj[i] & mask).count_ones()).sum();
            let rho = if size <= 1 {
                1.0
            } else {
                (twice_edges / 2) as f64 / pairs
            };
            if rho >= gamma {
                return Ok(combo);
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    Ok(Vec::new())
}

/// Advances `c` to the next k-combination of 0..n in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles_with_bridge() -> InterchangeGraph {
        InterchangeGraph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])
            .unwrap()
    }

    fn complete(n: usize) -> InterchangeGraph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        InterchangeGraph::from_edges(n, &edges).unwrap()
    }

    fn params(gamma: f64) -> QuasiCliqueParams {
        QuasiCliqueParams {
            gamma,
            ..QuasiCliqueParams::default()
        }
    }

    #[test]
    fn greedy_examples() {
        let g = two_triangles_with_bridge();
        let all: Vec<usize> = (0..6).collect();
        // degree-3 nodes 2 and 3; seed 2 expands 0, then 1
        assert_eq!(find_quasi_clique(&g, &all, &params(1.0)), vec![0, 1, 2]);

        let k5 = complete(5);
        assert_eq!(
            find_quasi_clique(&k5, &[0, 1, 2, 3, 4], &params(0.98)),
            vec![0, 1, 2, 3, 4]
        );

        let empty = InterchangeGraph::from_edges(5, &[]).unwrap();
        assert!(find_quasi_clique(&empty, &[0, 1, 2, 3, 4], &params(0.98)).is_empty());
        assert!(find_quasi_clique(&k5, &[3], &params(0.98)).is_empty());
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(
            exact_quasi_clique_oracle(&complete(5), 1.0, 2).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        assert_eq!(
            exact_quasi_clique_oracle(&two_triangles_with_bridge(), 1.0, 2).unwrap(),
            vec![0, 1, 2]
        );
        let path = InterchangeGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(
            exact_quasi_clique_oracle(&path, 0.5, 2).unwrap(),
            vec![0, 1, 2]
        );
        assert!(exact_quasi_clique_oracle(&complete(19), 1.0, 2).is_err());
        let empty = InterchangeGraph::from_edges(4, &[]).unwrap();
        assert!(exact_quasi_clique_oracle(&empty, 1.0, 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn combination_order() {
        let mut c = vec![0, 1];
        let mut seen = vec![c.clone()];
        while next_combination(&mut c, 4) {
            seen.push(c.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }

    #[test]
    fn params_validation() {
        assert!(QuasiCliqueParams::default().validate().is_ok());
        for bad in [
            QuasiCliqueParams {
                gamma: 0.0,
                ..Default::default()
            },
            QuasiCliqueParams {
                gamma: 1.5,
                ..Default::default()
            },
            QuasiCliqueParams {
                min_size: 1,
                ..Default::default()
            },
            QuasiCliqueParams {
                seed_count: 0,
                ..Default::default()
            },
            QuasiCliqueParams {
                max_buckets: 1,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
