use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_partition_file, Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct ClientId(pub u32);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Contiguous id ranges.
    Normal,
    /// Seeded shuffle, then contiguous chunks of the shuffled order.
    Random,
    /// BFS-grown regions that keep cross-partition edges low.
    GreedyLocality,
    /// Externally produced assignment.
    FromFile,
}

/// Static node-to-client assignment. Immutable once built; locks derive
/// their contender identities from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    scheme: Scheme,
    owner: Vec<ClientId>,
    members: Vec<Vec<NodeId>>,
}

impl Partitioning {
    pub fn from_owners(scheme: Scheme, owner: Vec<ClientId>, client_count: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); client_count];
        for (node, c) in owner.iter().enumerate() {
            let slot = members.get_mut(c.index()).ok_or_else(|| {
                Error::InvalidPartition(format!("node {node} assigned to client {c} but only {client_count} clients"))
            })?;
            slot.push(node as NodeId);
        }
        Ok(Partitioning { scheme, owner, members })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn client_count(&self) -> usize {
        self.members.len()
    }

    pub fn owner(&self, node: NodeId) -> ClientId {
        self.owner[node as usize]
    }

    pub fn owners(&self) -> &[ClientId] {
        &self.owner
    }

    /// Nodes of `client` in ascending id order.
    pub fn nodes_of(&self, client: ClientId) -> &[NodeId] {
        &self.members[client.index()]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn same_owner(&self, a: NodeId, b: NodeId) -> bool {
        self.owner(a) == self.owner(b)
    }
}

pub fn partition(graph: &Graph, scheme: Scheme, k: usize, seed: u64, file: Option<&Path>) -> Result<Partitioning> {
    if k == 0 {
        return Err(Error::InvalidPartition("client count must be at least 1".into()));
    }
    let n = graph.node_count();
    let owner = match scheme {
        Scheme::Normal => chunk_owners(&(0..n as NodeId).collect::<Vec<_>>(), k),
        Scheme::Random => {
            let mut order: Vec<NodeId> = (0..n as NodeId).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            chunk_owners(&order, k)
        }
        Scheme::GreedyLocality => greedy_locality(graph, k, seed),
        Scheme::FromFile => {
            let path = file.ok_or_else(|| Error::InvalidPartition("FromFile scheme requires a partition file".into()))?;
            load_partition_file(path, n)?
        }
    };
    Partitioning::from_owners(scheme, owner, k)
}

/// Sizes `ceil(n/k)` for the first `n % k` clients and `floor(n/k)` after.
fn balanced_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| n / k + usize::from(c < n % k)).collect()
}

fn chunk_owners(order: &[NodeId], k: usize) -> Vec<ClientId> {
    let mut owner = vec![ClientId(0); order.len()];
    let mut it = order.iter();
    for (c, size) in balanced_sizes(order.len(), k).into_iter().enumerate() {
        for &node in it.by_ref().take(size) {
            owner[node as usize] = ClientId(c as u32);
        }
    }
    owner
}

fn greedy_locality(graph: &Graph, k: usize, seed: u64) -> Vec<ClientId> {
    let n = graph.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut owner: Vec<Option<ClientId>> = vec![None; n];
    let mut assigned = 0usize;
    // number of already-assigned neighbors per node; used to seed new
    // regions next to old ones so the unassigned rest stays compact
    let mut assigned_nbrs = vec![0usize; n];
    for (c, size) in balanced_sizes(n, k).into_iter().enumerate() {
        let client = ClientId(c as u32);
        let mut gain = vec![0usize; n];
        let mut frontier: BinaryHeap<(usize, Reverse<NodeId>)> = BinaryHeap::new();
        let mut taken = 0;
        while taken < size {
            let next = loop {
                match frontier.pop() {
                    Some((g, Reverse(v))) if owner[v as usize].is_none() && g == gain[v as usize] => break Some(v),
                    Some(_) => continue,
                    None => break None,
                }
            };
            let v = match next {
                Some(v) => v,
                None => pick_seed(&owner, &assigned_nbrs, assigned, &mut rng),
            };
            owner[v as usize] = Some(client);
            taken += 1;
            assigned += 1;
            for &w in graph.neighbors(v) {
                assigned_nbrs[w as usize] += 1;
                if owner[w as usize].is_none() {
                    gain[w as usize] += 1;
                    frontier.push((gain[w as usize], Reverse(w)));
                }
            }
        }
    }
    owner.into_iter().map(|o| o.expect("every node assigned")).collect()
}

fn pick_seed(owner: &[Option<ClientId>], assigned_nbrs: &[usize], assigned: usize, rng: &mut ChaCha8Rng) -> NodeId {
    if assigned == 0 {
        return rng.gen_range(0..owner.len()) as NodeId;
    }
    let mut best: Option<(usize, NodeId)> = None;
    for (v, o) in owner.iter().enumerate() {
        if o.is_none() && best.map_or(true, |(b, _)| assigned_nbrs[v] > b) {
            best = Some((assigned_nbrs[v], v as NodeId));
        }
    }
    best.expect("an unassigned node remains").1
}
