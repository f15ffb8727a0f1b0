//! The interchangeability graph over a set of task-correct inputs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{Abstraction, LowLevelModel};
use crate::error::{Error, Result};

/// Undirected graph whose edges are bidirectionally interchange-consistent pairs.
///
/// The directed success matrix is kept alongside so that single-direction IIA
/// over any pair set can be read off without re-running the models.
#[derive(Debug, Clone, PartialEq)]
pub struct InterchangeGraph {
    n: usize,
    labels: Vec<String>,
    directed: Vec<bool>,
    adjacency: Vec<bool>,
}

impl InterchangeGraph {
    /// Builds a graph from a directed success relation `success[s * n + b]`.
    pub fn from_directed(labels: Vec<String>, directed: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        if directed.len() != n * n {
            return Err(Error::ShapeMismatch {
                expected: n * n,
                actual: directed.len(),
            });
        }
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = i != j && directed[i * n + j] && directed[j * n + i];
            }
        }
        Ok(Self {
            n,
            labels,
            directed,
            adjacency,
        })
    }

    /// Builds a graph from undirected edges; directed success is taken to match the edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut directed = vec![false; n * n];
        for i in 0..n {
            directed[i * n + i] = true;
        }
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            directed[i * n + j] = true;
            directed[j * n + i] = true;
        }
        Self::from_directed((0..n).map(|i| i.to_string()).collect(), directed)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    /// Whether patching from `source` into `base` succeeded.
    pub fn directed_success(&self, source: usize, base: usize) -> bool {
        self.directed[source * self.n + base]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&e| e).count() / 2
    }

    fn check_nodes(&self, nodes: &[usize]) -> Result<()> {
        match nodes.iter().find(|&&v| v >= self.n) {
            Some(v) => Err(Error::InvalidArgument(format!(
                "node {v} out of range for {} nodes",
                self.n
            ))),
            None => Ok(()),
        }
    }

    /// Edges inside `nodes` over |C|·(|C|−1)/2; 1 for sets of size ≤ 1.
    pub fn density(&self, nodes: &[usize]) -> Result<f64> {
        self.check_nodes(nodes)?;
        let k = nodes.len();
        if k <= 1 {
            return Ok(1.0);
        }
        let mut edges = 0usize;
        for (a, &i) in nodes.iter().enumerate() {
            for &j in &nodes[a + 1..] {
                edges += usize::from(self.has_edge(i, j));
            }
        }
        Ok(edges as f64 / (k * (k - 1) / 2) as f64)
    }

    pub fn global_density(&self) -> f64 {
        let all: Vec<usize> = (0..self.n).collect();
        self.density(&all).expect("all nodes in range")
    }

    /// Directional IIA over ordered pairs (s, b), s ∈ `sources`, b ∈ `bases`, s ≠ b.
    /// `None` when no such pair exists.
    pub fn iia_between(&self, sources: &[usize], bases: &[usize]) -> Option<f64> {
        let (mut hits, mut total) = (0usize, 0usize);
        for &s in sources {
            for &b in bases {
                if s != b {
                    total += 1;
                    hits += usize::from(self.directed_success(s, b));
                }
            }
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }

    pub fn to_export(&self) -> GraphExport {
        let mut directed_failures = Vec::new();
        for s in 0..self.n {
            for b in 0..self.n {
                if s != b && !self.directed_success(s, b) {
                    directed_failures.push([s, b]);
                }
            }
        }
        GraphExport {
            nodes: self.labels.clone(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            directed_failures,
        }
    }

    pub fn from_export(export: &GraphExport) -> Result<Self> {
        let n = export.nodes.len();
        let mut directed = vec![true; n * n];
        for &[s, b] in &export.directed_failures {
            if s >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "failure ({s}, {b}) out of range for {n} nodes"
                )));
            }
            directed[s * n + b] = false;
        }
        let g = Self::from_directed(export.nodes.clone(), directed)?;
        let mut edges: Vec<[usize; 2]> = export
            .edges
            .iter()
            .map(|&[i, j]| if i <= j { [i, j] } else { [j, i] })
            .collect();
        edges.sort_unstable();
        let derived: Vec<[usize; 2]> = g.edges().into_iter().map(|(i, j)| [i, j]).collect();
        if edges != derived {
            return Err(Error::InvalidArgument(
                "edge list disagrees with the directed failure list".into(),
            ));
        }
        Ok(g)
    }

    /// Graphviz rendering; nodes are filled by bucket when `bucket_of` is given.
    pub fn to_dot(&self, bucket_of: Option<&[usize]>) -> String {
        const PALETTE: [&str; 8] = [
            "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
        ];
        let mut out = String::from("graph interchange {\n  node [shape=circle, style=filled];\n");
        for i in 0..self.n {
            let color = bucket_of
                .and_then(|b| b.get(i))
                .map(|&b| PALETTE[b % PALETTE.len()])
                .unwrap_or("#dddddd");
            let _ = writeln!(
                out,
                "  {i} [label=\"{}\", fillcolor=\"{color}\"];",
                self.labels[i].replace('"', "'")
            );
        }
        for (i, j) in self.edges() {
            let _ = writeln!(out, "  {i} -- {j};");
        }
        out.push_str("}\n");
        out
    }
}

/// JSON form: node labels, undirected edges, and the failed directed patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    pub directed_failures: Vec<[usize; 2]>,
}

/// Evaluates every ordered pair of `inputs` under the abstraction.
///
/// `labels` are the task ground truth; an input whose prediction differs is rejected.
pub fn build_graph<L>(
    abstraction: &Abstraction<'_, L>,
    inputs: &[L::Input],
    labels: &[i64],
) -> Result<InterchangeGraph>
where
    L: LowLevelModel,
    L::Input: std::fmt::Display,
{
    if labels.len() != inputs.len() {
        return Err(Error::ShapeMismatch {
            expected: inputs.len(),
            actual: labels.len(),
        });
    }
    for (index, (x, &y)) in inputs.iter().zip(labels).enumerate() {
        if abstraction.low().predict(x, &[])? != y {
            return Err(Error::IncorrectInput { index });
        }
    }
    let n = inputs.len();
    let prepared = abstraction.prepare(inputs)?;
    let rows: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|s| {
            (0..n)
                .map(|b| {
                    if s == b {
                        Ok(true)
                    } else {
                        prepared.directional_success(s, b)
                    }
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    InterchangeGraph::from_directed(
        inputs.iter().map(|x| x.to_string()).collect(),
        rows.into_iter().flatten().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_examples() {
        let tri = InterchangeGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(tri.density(&[0, 1, 2]).unwrap(), 1.0);
        let path = InterchangeGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert!((path.density(&[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(path.density(&[2]).unwrap(), 1.0);
        assert_eq!(path.density(&[]).unwrap(), 1.0);
        assert!(path.density(&[0, 3]).is_err());
    }

    #[test]
    fn export_round_trip_and_dot() {
        let mut directed = vec![true; 9];
        directed[1] = false; // 0 -> 1 fails
        let g = InterchangeGraph::from_directed(vec!["a".into(), "b".into(), "c".into()], directed)
            .unwrap();
        assert_eq!(g.edges(), vec![(0, 2), (1, 2)]);
        let back = InterchangeGraph::from_export(&g.to_export()).unwrap();
        assert_eq!(back, g);
        let dot = g.to_dot(Some(&[0, 1, 0]));
        assert!(dot.contains("0 -- 2;") && dot.contains("1 -- 2;") && !dot.contains("0 -- 1;"));
        assert!(dot.contains("fillcolor=\"#4e79a7\""));

        let mut bad = g.to_export();
        bad.edges.push([0, 1]);
        assert!(InterchangeGraph::from_export(&bad).is_err());
    }

    #[test]
    fn iia_between_skips_self_pairs() {
        let g = InterchangeGraph::from_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(g.iia_between(&[0, 1], &[0, 1]), Some(1.0));
        assert_eq!(g.iia_between(&[2], &[2]), None);
        assert_eq!(g.iia_between(&[0], &[1, 2]), Some(0.5));
    }
}
