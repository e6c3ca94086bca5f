//! Whitespace-delimited text formats: edge lists (`u v`) and partition files
//! (`node client`). Lines starting with `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ClientId, Graph, NodeId, Partitioning};
use crate::error::{Error, Result};

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, path)
}

/// Parses edge-list text; `origin` is only used in error messages.
pub fn parse_edge_list(text: &str, origin: &Path) -> Result<Graph> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut edges = Vec::new();
    let mut max_id: Option<(NodeId, usize)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some((u, v)) = parse_pair(raw).map_err(|msg| err(line, msg))? else {
            continue;
        };
        if u == v {
            return Err(err(line, format!("self-loop at node {u}")));
        }
        for id in [u, v] {
            if max_id.map_or(true, |(m, _)| id > m) {
                max_id = Some((id, line));
            }
        }
        edges.push((u, v));
    }
    let node_count = max_id.map_or(0, |(m, _)| m as usize + 1);
    let mut seen = vec![false; node_count];
    for &(u, v) in &edges {
        seen[u as usize] = true;
        seen[v as usize] = true;
    }
    let missing: Vec<usize> = seen.iter().enumerate().filter(|(_, s)| !**s).map(|(i, _)| i).collect();
    if let (Some(&first), Some((m, line))) = (missing.first(), max_id) {
        return Err(err(
            line,
            format!(
                "node ids are not dense: id {m} used but {} ids below it never appear (first: {first})",
                missing.len()
            ),
        ));
    }
    Graph::from_edges(node_count, edges)
}

/// Reads `node client` lines into a per-node owner table for `node_count`
/// nodes. Every node must be assigned.
pub fn load_partition_file(path: impl AsRef<Path>, node_count: usize) -> Result<Vec<ClientId>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut owner: Vec<Option<ClientId>> = vec![None; node_count];
    for (idx, raw) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let Some((node, client)) = parse_pair(raw).map_err(parse_err)? else {
            continue;
        };
        let slot = owner
            .get_mut(node as usize)
            .ok_or_else(|| parse_err(format!("node {node} out of range for {node_count} nodes")))?;
        *slot = Some(ClientId(client));
    }
    let missing: Vec<NodeId> = owner
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(i, _)| i as NodeId)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAssignment { missing });
    }
    Ok(owner.into_iter().map(Option::unwrap).collect())
}

pub fn write_edge_list(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("# {} nodes, {} edges\n", graph.node_count(), graph.edge_count());
    for (u, v) in graph.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_partition_file(partitioning: &Partitioning, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!(
        "# scheme {:?}, {} clients\n",
        partitioning.scheme(),
        partitioning.client_count()
    );
    for (node, client) in partitioning.owners().iter().enumerate() {
        let _ = writeln!(out, "{node} {}", client.0);
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_pair(raw: &str) -> std::result::Result<Option<(u32, u32)>, String> {
    let line = raw.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let mut fields = line.split_whitespace();
    let mut next = |what: &str| -> std::result::Result<u32, String> {
        let f = fields.next().ok_or_else(|| format!("expected two fields, missing {what}"))?;
        f.parse().map_err(|_| format!("invalid {what} `{f}`"))
    };
    let a = next("first id")?;
    let b = next("second id")?;
    if let Some(extra) = fields.next() {
        return Err(format!("unexpected trailing field `{extra}`"));
    }
    Ok(Some((a, b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Graph> {
        parse_edge_list(text, Path::new("test.txt"))
    }

    #[test]
    fn path_graph() {
        let g = parse("0 1\n1 2").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = parse("# comment\n0 1\n\n1 0\n").unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn self_loop_reports_line() {
        let err = parse("0 0").unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 1);
                assert!(msg.contains("self-loop"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_sparse() {
        assert!(matches!(parse("0 1\n1 x"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("0 1 2"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("0 1\n3 1"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn partition_file_roundtrip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "0 1\n# c\n2 0\n").unwrap();
        match load_partition_file(&path, 3) {
            Err(Error::MissingAssignment { missing }) => assert_eq!(missing, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "0 1\n1 1\n2 0\n").unwrap();
        let owners = load_partition_file(&path, 3).unwrap();
        assert_eq!(owners, vec![ClientId(1), ClientId(1), ClientId(0)]);
    }
}
