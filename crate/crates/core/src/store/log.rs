use std::io::Write;
use std::rc::Rc;

use serde::Serialize;

use super::{Key, VClock};
use crate::error::Result;
use crate::graph::ClientId;
use crate::sim::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogKind {
    PutSend,
    PutAck,
    GetSend,
    GetReply,
    Deliver,
    Omit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Get,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ToReplica,
    ToClient,
}

/// One entry of the omniscient message log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    pub event_id: u64,
    pub sim_time: Time,
    pub kind: LogKind,
    pub client: ClientId,
    pub replica: usize,
    pub key: Key,
    pub payload: Option<Rc<str>>,
    pub vclock: Option<VClock>,
    pub request: u64,
    pub op: Op,
    pub round: u8,
    /// For PUT deliveries: whether the replica's contents changed.
    pub applied: bool,
}

#[derive(Serialize)]
struct Row<'a> {
    event_id: u64,
    sim_time: Time,
    kind: LogKind,
    client: u32,
    replica: usize,
    key: String,
    payload: &'a str,
    vclock: String,
}

pub fn write_log_csv(events: &[LogEvent], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if events.is_empty() {
        w.write_record(["event_id", "sim_time", "kind", "client", "replica", "key", "payload", "vclock"])?;
    }
    for e in events {
        w.serialize(Row {
            event_id: e.event_id,
            sim_time: e.sim_time,
            kind: e.kind,
            client: e.client.0,
            replica: e.replica,
            key: e.key.to_string(),
            payload: e.payload.as_deref().unwrap_or(""),
            vclock: e.vclock.as_ref().map(|v| v.to_string()).unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(())
}
