use std::fmt::Write as _;

use super::{ClientId, Graph, Partitioning};

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRow {
    pub client: ClientId,
    pub max_degree: usize,
    pub min_degree: usize,
    pub total_degree: usize,
    pub node_count: usize,
    pub average_degree: f64,
    /// Edges with exactly one endpoint in this partition.
    pub external_edges: usize,
    pub internal_edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSummary {
    pub avg: f64,
    pub stdev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionStatsReport {
    pub rows: Vec<PartitionRow>,
    pub max_degree: ColumnSummary,
    pub min_degree: ColumnSummary,
    pub total_degree: ColumnSummary,
    pub node_count: ColumnSummary,
    pub average_degree: ColumnSummary,
    pub external_edges: ColumnSummary,
    pub internal_edges: ColumnSummary,
}

impl PartitionStatsReport {
    /// Text table in the AVG/STDEV layout used for partition comparisons.
    pub fn to_table(&self, title: &str) -> String {
        let mut out = format!("{title}\n{:<16}{:>12}{:>12}\n", "Property", "AVG", "STDEV");
        let rows = [
            ("Max degree", self.max_degree),
            ("Min degree", self.min_degree),
            ("Total degree", self.total_degree),
            ("Node count", self.node_count),
            ("Average degree", self.average_degree),
            ("External edges", self.external_edges),
            ("Internal edges", self.internal_edges),
        ];
        for (name, s) in rows {
            let _ = writeln!(out, "{name:<16}{:>12.1}{:>12.1}", s.avg, s.stdev);
        }
        out
    }
}

/// Population mean and standard deviation.
fn summarize(values: impl Iterator<Item = f64> + Clone) -> ColumnSummary {
    let n = values.clone().count();
    if n == 0 {
        return ColumnSummary { avg: 0.0, stdev: 0.0 };
    }
    let avg = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - avg).powi(2)).sum::<f64>() / n as f64;
    ColumnSummary { avg, stdev: var.sqrt() }
}

pub fn partition_stats(graph: &Graph, p: &Partitioning) -> PartitionStatsReport {
    let rows: Vec<PartitionRow> = (0..p.client_count())
        .map(|c| {
            let client = ClientId(c as u32);
            let nodes = p.nodes_of(client);
            let mut row = PartitionRow {
                client,
                max_degree: 0,
                min_degree: if nodes.is_empty() { 0 } else { usize::MAX },
                total_degree: 0,
                node_count: nodes.len(),
                average_degree: 0.0,
                external_edges: 0,
                internal_edges: 0,
            };
            let mut internal_endpoints = 0;
            for &v in nodes {
                let d = graph.degree(v);
                row.max_degree = row.max_degree.max(d);
                row.min_degree = row.min_degree.min(d);
                row.total_degree += d;
                for &w in graph.neighbors(v) {
                    if p.owner(w) == client {
                        internal_endpoints += 1;
                    } else {
                        row.external_edges += 1;
                    }
                }
            }
            row.internal_edges = internal_endpoints / 2;
            if !nodes.is_empty() {
                row.average_degree = row.total_degree as f64 / nodes.len() as f64;
            }
            row
        })
        .collect();
    macro_rules! col {
        ($field:ident) => {
            summarize(rows.iter().map(|r| r.$field as f64))
        };
    }
    PartitionStatsReport {
        max_degree: col!(max_degree),
        min_degree: col!(min_degree),
        total_degree: col!(total_degree),
        node_count: col!(node_count),
        average_degree: col!(average_degree),
        external_edges: col!(external_edges),
        internal_edges: col!(internal_edges),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_planar, partition, Scheme};

    #[test]
    fn triangle_single_partition() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let p = partition(&g, Scheme::Normal, 1, 0, None).unwrap();
        let r = &partition_stats(&g, &p).rows[0];
        assert_eq!((r.internal_edges, r.external_edges, r.total_degree), (3, 0, 6));
    }

    #[test]
    fn split_edge() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let p = partition(&g, Scheme::Normal, 2, 0, None).unwrap();
        for r in partition_stats(&g, &p).rows {
            assert_eq!((r.external_edges, r.internal_edges), (1, 0));
        }
    }

    #[test]
    fn planar_conservation() {
        let g = generate_planar(500, 2).unwrap();
        let p = partition(&g, Scheme::Normal, 8, 0, None).unwrap();
        let report = partition_stats(&g, &p);
        let total: usize = report.rows.iter().map(|r| 2 * r.internal_edges + r.external_edges).sum();
        assert_eq!(total, 2 * g.edge_count());
        let ext: usize = report.rows.iter().map(|r| r.external_edges).sum();
        assert_eq!(ext % 2, 0);
        assert!(report.to_table("planar").contains("External edges"));
    }
}
