//! Input graphs, their generators, and workload partitioning.
//!
//! Node ids are dense (`0..node_count`). Adjacency lists are symmetric,
//! sorted, and free of self-loops and duplicates; every constructor in this
//! module goes through [`Graph::from_edges`] to keep that invariant.

mod generate;
mod io;
mod partition;
mod stats;

pub use generate::{generate_planar, generate_power_law, generate_random_regular, PLANAR_AVG_DEGREE};
pub use io::{load_edge_list, load_partition_file, parse_edge_list, write_edge_list, write_partition_file};
pub use partition::{partition, ClientId, Partitioning, Scheme};
pub use stats::{partition_stats, ColumnSummary, PartitionRow, PartitionStatsReport};

use crate::error::{Error, Result};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<NodeId>>,
    edge_count: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list, symmetrizing and
    /// deduplicating. Self-loops are rejected.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); node_count];
        for (u, v) in edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            let (ui, vi) = (u as usize, v as usize);
            if ui >= node_count || vi >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            adjacency[ui].push(v);
            adjacency[vi].push(u);
        }
        let mut degree_sum = 0;
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
            degree_sum += list.len();
        }
        Ok(Graph {
            adjacency,
            edge_count: degree_sum / 2,
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node as usize]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node as usize].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.adjacency.len()).map(|n| n as NodeId)
    }

    pub fn is_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u as usize].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(min, max)`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, list)| {
            let u = u as NodeId;
            list.iter().filter(move |&&v| v > u).map(move |&v| (u, v))
        })
    }
}
