use std::cmp::Ordering;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::ClientId;
use crate::sim::Time;

/// Vector clock over client ids. Missing trailing entries read as zero and
/// are trimmed, so equal clocks compare equal structurally.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct VClock(Rc<[u32]>);

impl VClock {
    pub fn zero() -> Self {
        VClock(Rc::from(Vec::new()))
    }

    pub fn from_entries(mut entries: Vec<u32>) -> Self {
        while entries.last() == Some(&0) {
            entries.pop();
        }
        VClock(Rc::from(entries))
    }

    pub fn get(&self, client: ClientId) -> u32 {
        self.0.get(client.index()).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn incremented(&self, client: ClientId) -> VClock {
        let mut v = self.0.to_vec();
        if v.len() <= client.index() {
            v.resize(client.index() + 1, 0);
        }
        v[client.index()] += 1;
        VClock::from_entries(v)
    }

    pub fn merge(&self, other: &VClock) -> VClock {
        let len = self.0.len().max(other.0.len());
        let v = (0..len)
            .map(|i| {
                let a = self.0.get(i).copied().unwrap_or(0);
                let b = other.0.get(i).copied().unwrap_or(0);
                a.max(b)
            })
            .collect::<Vec<_>>();
        VClock::from_entries(v)
    }

    /// Causal order; `None` when concurrent.
    pub fn causal_cmp(&self, other: &VClock) -> Option<Ordering> {
        let len = self.0.len().max(other.0.len());
        let mut ord = Ordering::Equal;
        for i in 0..len {
            let a = self.0.get(i).copied().unwrap_or(0);
            let b = other.0.get(i).copied().unwrap_or(0);
            match (ord, a.cmp(&b)) {
                (_, Ordering::Equal) => {}
                (Ordering::Equal, o) => ord = o,
                (prev, o) if prev != o => return None,
                _ => {}
            }
        }
        Some(ord)
    }

    /// `self >= other` componentwise.
    pub fn descends(&self, other: &VClock) -> bool {
        matches!(self.causal_cmp(other), Some(Ordering::Greater | Ordering::Equal))
    }

    pub fn dominates(&self, other: &VClock) -> bool {
        self.causal_cmp(other) == Some(Ordering::Greater)
    }
}

impl fmt::Display for VClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("]")
    }
}

/// Origin used for the implicit initial version of unwritten keys.
pub const INITIAL_ORIGIN: ClientId = ClientId(u32::MAX);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VersionedValue {
    pub payload: Rc<str>,
    pub vclock: VClock,
    pub physical_ts: Time,
    pub origin: ClientId,
}

impl VersionedValue {
    pub fn new(payload: impl Into<Rc<str>>, vclock: VClock, physical_ts: Time, origin: ClientId) -> Self {
        VersionedValue {
            payload: payload.into(),
            vclock,
            physical_ts,
            origin,
        }
    }

    pub fn initial(payload: impl Into<Rc<str>>) -> Self {
        VersionedValue::new(payload, VClock::zero(), 0, INITIAL_ORIGIN)
    }

    pub fn is_initial(&self) -> bool {
        self.origin == INITIAL_ORIGIN
    }

    fn lww_key(&self) -> (Time, ClientId, &str, &[u32]) {
        (self.physical_ts, self.origin, &self.payload, self.vclock.entries())
    }
}

/// Versions not strictly dominated by any other in the list, deduplicated.
pub fn maximal(versions: &[VersionedValue]) -> Vec<&VersionedValue> {
    let mut out: Vec<&VersionedValue> = Vec::new();
    for v in versions {
        if versions.iter().any(|o| o.vclock.dominates(&v.vclock)) {
            continue;
        }
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// The store's resolution function: a dominating version wins outright,
/// otherwise the latest `(physical_ts, origin)` among the concurrent maxima.
pub fn resolve(versions: &[VersionedValue]) -> Result<&VersionedValue> {
    maximal(versions)
        .into_iter()
        .max_by(|a, b| a.lww_key().cmp(&b.lww_key()))
        .ok_or(Error::EmptyVersions)
}
