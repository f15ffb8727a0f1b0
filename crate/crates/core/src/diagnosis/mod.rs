//! Interchangeability graphs, quasi-clique bucketing and bucket statistics.

mod graph;
mod partition;
mod quasi_clique;

pub use graph::{build_graph, GraphExport, InterchangeGraph};
pub use partition::{
    bucket_report, diagnose, partition_graph, BucketReport, BucketStats, Partition, PartitionExport,
};
pub use quasi_clique::{
    exact_quasi_clique_oracle, find_quasi_clique, QuasiCliqueParams, ORACLE_MAX_NODES,
};
