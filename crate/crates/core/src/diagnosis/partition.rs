//! Iterated bucket extraction and per-bucket IIA statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::causal::{Abstraction, LowLevelModel};
use crate::diagnosis::graph::{build_graph, InterchangeGraph};
use crate::diagnosis::quasi_clique::{find_quasi_clique, QuasiCliqueParams};
use crate::error::{Error, Result};

/// Target buckets C_1..C_{K−1} in discovery order, plus the residual C_K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub buckets: Vec<Vec<usize>>,
    pub residual: Vec<usize>,
}

impl Partition {
    pub fn node_count(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum::<usize>() + self.residual.len()
    }

    /// Bucket index per node; residual nodes get `buckets.len()`.
    pub fn assignments(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.node_count()];
        for (b, nodes) in self.buckets.iter().enumerate() {
            for &v in nodes {
                out[v] = b;
            }
        }
        for &v in &self.residual {
            out[v] = self.buckets.len();
        }
        out
    }

    pub fn bucket_name(&self, index: usize) -> String {
        if index < self.buckets.len() {
            format!("C{}", index + 1)
        } else {
            "residual".to_string()
        }
    }

    /// Buckets followed by the residual when it is non-empty.
    pub fn groups(&self) -> Vec<(String, &[usize])> {
        let mut out: Vec<(String, &[usize])> = self
            .buckets
            .iter()
            .enumerate()
            .map(|(i, b)| (self.bucket_name(i), b.as_slice()))
            .collect();
        if !self.residual.is_empty() {
            out.push((
                self.bucket_name(self.buckets.len()),
                self.residual.as_slice(),
            ));
        }
        out
    }

    /// Checks disjointness, coverage of `0..n`, and bucket size/density.
    pub fn validate(&self, graph: &InterchangeGraph, params: &QuasiCliqueParams) -> Result<()> {
        let n = graph.len();
        let mut seen = vec![false; n];
        for v in self.buckets.iter().flatten().chain(&self.residual) {
            if *v >= n || std::mem::replace(&mut seen[*v], true) {
                return Err(Error::InvalidArgument(format!(
                    "node {v} is out of range or appears twice"
                )));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "partition does not cover every node".into(),
            ));
        }
        for (i, b) in self.buckets.iter().enumerate() {
            if b.len() < params.min_size || graph.density(b)? < params.gamma {
                return Err(Error::InvalidArgument(format!(
                    "bucket C{} violates size or density bounds",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn to_export(&self) -> PartitionExport {
        let assignments = self.assignments();
        PartitionExport {
            buckets: self.buckets.len(),
            assignment: assignments
                .iter()
                .enumerate()
                .map(|(v, &b)| (v, self.bucket_name(b)))
                .collect(),
        }
    }

    pub fn from_export(export: &PartitionExport) -> Result<Self> {
        let mut buckets = vec![Vec::new(); export.buckets];
        let mut residual = Vec::new();
        for (&v, label) in &export.assignment {
            if label == "residual" {
                residual.push(v);
                continue;
            }
            let k: usize = label
                .strip_prefix('C')
                .and_then(|s| s.parse().ok())
                .filter(|&k| k >= 1 && k <= export.buckets)
                .ok_or_else(|| Error::InvalidArgument(format!("bad bucket label `{label}`")))?;
            buckets[k - 1].push(v);
        }
        Ok(Self { buckets, residual })
    }
}

/// JSON form: node index → bucket label ("C1", "C2", …, "residual").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionExport {
    pub buckets: usize,
    pub assignment: BTreeMap<usize, String>,
}

/// Repeatedly extracts quasi-cliques from the shrinking node set.
pub fn partition_graph(graph: &InterchangeGraph, params: &QuasiCliqueParams) -> Result<Partition> {
    params.validate()?;
    let mut available: Vec<usize> = (0..graph.len()).collect();
    let mut buckets = Vec::new();
    for _ in 0..params.max_buckets - 1 {
        let found = find_quasi_clique(graph, &available, params);
        if found.is_empty() {
            break;
        }
        available.retain(|v| found.binary_search(v).is_err());
        buckets.push(found);
    }
    Ok(Partition {
        buckets,
        residual: available,
    })
}

/// Builds the interchangeability graph and partitions it.
pub fn diagnose<L>(
    abstraction: &Abstraction<'_, L>,
    inputs: &[L::Input],
    labels: &[i64],
    params: &QuasiCliqueParams,
) -> Result<(Partition, InterchangeGraph)>
where
    L: LowLevelModel,
    L::Input: std::fmt::Display,
{
    params.validate()?;
    let graph = build_graph(abstraction, inputs, labels)?;
    let partition = partition_graph(&graph, params)?;
    Ok((partition, graph))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub name: String,
    pub size: usize,
    pub density: f64,
    /// Ordered-pair IIA inside the bucket; absent for singletons.
    pub within_iia: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub node_count: usize,
    pub global_density: f64,
    pub global_iia: Option<f64>,
    pub buckets: Vec<BucketStats>,
    /// `cross_iia[a][b]`: IIA over sources in group `a`, bases in group `b` (diagonal = within).
    pub cross_iia: Vec<Vec<Option<f64>>>,
}

pub fn bucket_report(graph: &InterchangeGraph, partition: &Partition) -> Result<BucketReport> {
    let groups = partition.groups();
    let mut buckets = Vec::with_capacity(groups.len());
    for (name, nodes) in &groups {
        buckets.push(BucketStats {
            name: name.clone(),
            size: nodes.len(),
            density: graph.density(nodes)?,
            within_iia: graph.iia_between(nodes, nodes),
        });
    }
    let cross_iia = groups
        .iter()
        .map(|(_, a)| {
            groups
                .iter()
                .map(|(_, b)| graph.iia_between(a, b))
                .collect()
        })
        .collect();
    let all: Vec<usize> = (0..graph.len()).collect();
    Ok(BucketReport {
        node_count: graph.len(),
        global_density: graph.global_density(),
        global_iia: graph.iia_between(&all, &all),
        buckets,
        cross_iia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_two_cliques() {
        // K4 on 0..4 and K3 on 4..7
        let mut edges = Vec::new();
        for (lo, hi) in [(0, 4), (4, 7)] {
            for i in lo..hi {
                for j in i + 1..hi {
                    edges.push((i, j));
                }
            }
        }
        let g = InterchangeGraph::from_edges(8, &edges).unwrap();
        let params = QuasiCliqueParams {
            gamma: 1.0,
            max_buckets: 4,
            ..Default::default()
        };
        let p = partition_graph(&g, &params).unwrap();
        assert_eq!(p.buckets, vec![vec![0, 1, 2, 3], vec![4, 5, 6]]);
        assert_eq!(p.residual, vec![7]);
        p.validate(&g, &params).unwrap();
        assert_eq!(Partition::from_export(&p.to_export()).unwrap(), p);

        let report = bucket_report(&g, &p).unwrap();
        assert_eq!(report.buckets.len(), 3);
        assert_eq!(report.buckets[0].within_iia, Some(1.0));
        assert_eq!(report.buckets[2].within_iia, None);
        assert_eq!(report.cross_iia[0][1], Some(0.0));
    }

    #[test]
    fn empty_residual_is_omitted() {
        let g = InterchangeGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let p = partition_graph(&g, &QuasiCliqueParams::default()).unwrap();
        assert_eq!(p.buckets, vec![vec![0, 1, 2]]);
        assert!(p.residual.is_empty());
        let report = bucket_report(&g, &p).unwrap();
        assert_eq!(report.cross_iia, vec![vec![Some(1.0)]]);
    }
}
