use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CvfRecord, HybridTs, Side};
use crate::algorithms::{NodeState, ProgramKind};
use crate::error::{Error, Result};
use crate::graph::{ClientId, NodeId};
use crate::sim::Time;
use crate::store::Key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CvfAnalysis {
    pub total: usize,
    pub access_nonoverlap: usize,
    pub access_overlap: usize,
    pub output_conflicts: usize,
}

fn access(side: &Side, index: usize, first: &'static str, last: &'static str) -> Result<(Time, Time)> {
    let f = side.first_access.ok_or(Error::MissingInstrumentation { index, field: first })?;
    let l = side.last_access.ok_or(Error::MissingInstrumentation { index, field: last })?;
    Ok((f, l))
}

fn conflicting(kind: ProgramKind, a: &(NodeId, String), b: &(NodeId, String)) -> Result<bool> {
    if a.0 == b.0 {
        return Ok(false);
    }
    let sa = NodeState::decode(kind, &a.1)?;
    let sb = NodeState::decode(kind, &b.1)?;
    Ok(match kind {
        ProgramKind::MaxMatch => {
            let (pa, pb) = (sa.vars.partner(), sb.vars.partner());
            (pa.is_none() && pb.is_none()) || ((pa == Some(b.0)) != (pb == Some(a.0)))
        }
        _ => sa.vars.color().is_some() && sa.vars.color() == sb.vars.color(),
    })
}

/// Fills `access_overlap` and `output_conflict` on every record.
///
/// Access intervals are closed-open. An output conflict needs both sides to
/// have written their endpoint and the pair of writes to violate the
/// program's edge relation.
pub fn annotate(records: &mut [CvfRecord], kind: ProgramKind) -> Result<CvfAnalysis> {
    let mut out = CvfAnalysis::default();
    for (i, r) in records.iter_mut().enumerate() {
        let (fa, la) = access(&r.a, i, "first_access_a", "last_access_a")?;
        let (fb, lb) = access(&r.b, i, "first_access_b", "last_access_b")?;
        let overlap = fa < lb && fb < la;
        let conflict = match (&r.a.written, &r.b.written) {
            (Some(wa), Some(wb)) if overlap => conflicting(kind, wa, wb)?,
            _ => false,
        };
        r.access_overlap = Some(overlap);
        r.output_conflict = Some(conflict);
        out.total += 1;
        if overlap {
            out.access_overlap += 1;
        } else {
            out.access_nonoverlap += 1;
        }
        if conflict {
            out.output_conflicts += 1;
        }
    }
    Ok(out)
}

/// Pure form of [`annotate`].
pub fn classify(records: &[CvfRecord], kind: ProgramKind) -> Result<CvfAnalysis> {
    annotate(&mut records.to_vec(), kind)
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    key: String,
    client_a: u32,
    acq_a: Time,
    rel_a: Option<Time>,
    client_b: u32,
    acq_b: Time,
    rel_b: Option<Time>,
    access_overlap: Option<bool>,
    output_conflict: Option<bool>,
    #[serde(default)]
    first_access_a: Option<Time>,
    #[serde(default)]
    last_access_a: Option<Time>,
    #[serde(default)]
    first_access_b: Option<Time>,
    #[serde(default)]
    last_access_b: Option<Time>,
    #[serde(default)]
    node_a: Option<NodeId>,
    #[serde(default)]
    written_a: Option<String>,
    #[serde(default)]
    node_b: Option<NodeId>,
    #[serde(default)]
    written_b: Option<String>,
}

fn ts(physical: Time, client: u32) -> HybridTs {
    HybridTs {
        physical,
        logical: 0,
        client: ClientId(client),
    }
}

fn written(node: Option<NodeId>, payload: Option<String>) -> Option<(NodeId, String)> {
    node.zip(payload)
}

/// Trace columns first, then the instrumentation columns `classify` needs.
pub fn write_trace_csv(records: &[CvfRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record([
            "key",
            "client_a",
            "acq_a",
            "rel_a",
            "client_b",
            "acq_b",
            "rel_b",
            "access_overlap",
            "output_conflict",
            "first_access_a",
            "last_access_a",
            "first_access_b",
            "last_access_b",
            "node_a",
            "written_a",
            "node_b",
            "written_b",
        ])?;
    }
    for r in records {
        w.serialize(Row {
            key: r.key.to_string(),
            client_a: r.a.client.0,
            acq_a: r.a.acquire.physical,
            rel_a: r.a.release.map(|t| t.physical),
            client_b: r.b.client.0,
            acq_b: r.b.acquire.physical,
            rel_b: r.b.release.map(|t| t.physical),
            access_overlap: r.access_overlap,
            output_conflict: r.output_conflict,
            first_access_a: r.a.first_access,
            last_access_a: r.a.last_access,
            first_access_b: r.b.first_access,
            last_access_b: r.b.last_access,
            node_a: r.a.written.as_ref().map(|w| w.0),
            written_a: r.a.written.as_ref().map(|w| w.1.clone()),
            node_b: r.b.written.as_ref().map(|w| w.0),
            written_b: r.b.written.as_ref().map(|w| w.1.clone()),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(input: impl Read) -> Result<Vec<CvfRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let row = row?;
        let key: Key = match row.key.parse() {
            Ok(k) => k,
            Err(never) => match never {},
        };
        out.push(CvfRecord {
            id: i as u64,
            key,
            a: Side {
                client: ClientId(row.client_a),
                acquire: ts(row.acq_a, row.client_a),
                release: row.rel_a.map(|t| ts(t, row.client_a)),
                first_access: row.first_access_a,
                last_access: row.last_access_a,
                written: written(row.node_a, row.written_a),
            },
            b: Side {
                client: ClientId(row.client_b),
                acquire: ts(row.acq_b, row.client_b),
                release: row.rel_b.map(|t| ts(t, row.client_b)),
                first_access: row.first_access_b,
                last_access: row.last_access_b,
                written: written(row.node_b, row.written_b),
            },
            access_overlap: row.access_overlap,
            output_conflict: row.output_conflict,
        });
    }
    Ok(out)
}
