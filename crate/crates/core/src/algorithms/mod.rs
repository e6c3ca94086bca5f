//! Guarded-command graph programs and their global oracles.
//!
//! Everything here is a pure function of node states; sequencing, timing
//! and the heuristic timestamps belong to the engine.

mod state;

pub use state::{initial_states, InitialState, NodeState, Vars, UNSET};

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// Colors available to the planar program.
pub const PCOLOR_PALETTE: u32 = 6;
/// Successor bound above which a planar node moves up a rank.
pub const PCOLOR_MAX_OUT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProgramKind {
    Color,
    PColor,
    MaxMatch,
    NonstabColor,
}

impl ProgramKind {
    pub fn is_stabilizing(self) -> bool {
        self != ProgramKind::NonstabColor
    }

    pub fn label(self) -> &'static str {
        match self {
            ProgramKind::Color => "COLOR",
            ProgramKind::PColor => "P-COLOR",
            ProgramKind::MaxMatch => "MAX-MATCH",
            ProgramKind::NonstabColor => "NONSTAB-COLOR",
        }
    }
}

impl fmt::Display for ProgramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Action ids; when several are enabled the lowest id runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Recolor = 1,
    RaiseRank = 2,
    PickColor = 3,
    Marry = 4,
    Propose = 5,
    Abandon = 6,
    ColorOnce = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Program {
    pub kind: ProgramKind,
    /// COLOR only: draw uniformly from the free colors instead of the minimum.
    pub random_color: bool,
    /// Largest color index for COLOR and NONSTAB-COLOR.
    pub max_color: u32,
}

impl Program {
    pub fn new(kind: ProgramKind, g: &Graph) -> Program {
        Program {
            kind,
            random_color: false,
            max_color: g.max_degree() as u32,
        }
    }

    pub fn with_random_color(mut self, on: bool) -> Self {
        self.random_color = on;
        self
    }
}

/// Read access to node states by id.
pub trait StateView {
    fn state(&self, v: NodeId) -> Option<&NodeState>;
}

impl StateView for [NodeState] {
    fn state(&self, v: NodeId) -> Option<&NodeState> {
        self.get(v as usize)
    }
}

impl StateView for Vec<NodeState> {
    fn state(&self, v: NodeId) -> Option<&NodeState> {
        self.get(v as usize)
    }
}

impl StateView for HashMap<NodeId, NodeState> {
    fn state(&self, v: NodeId) -> Option<&NodeState> {
        self.get(&v)
    }
}

fn neighbor_vars<'a>(g: &Graph, j: NodeId, nbrs: &'a (impl StateView + ?Sized)) -> Result<Vec<(NodeId, &'a Vars)>> {
    g.neighbors(j)
        .iter()
        .map(|&k| {
            nbrs.state(k)
                .map(|s| (k, &s.vars))
                .ok_or(Error::MissingNeighbor { node: j, neighbor: k })
        })
        .collect()
}

/// Smallest color in `0..=max` not in `used`, or every free one.
fn free_colors(used: impl Iterator<Item = u32>, max: u32) -> Vec<u32> {
    let mut taken = vec![false; max as usize + 1];
    for c in used {
        if c <= max {
            taken[c as usize] = true;
        }
    }
    (0..=max).filter(|&c| !taken[c as usize]).collect()
}

/// Neighbors after `j` in the `(rank, id)` orientation.
fn successors<'a>(j: NodeId, r: u32, nv: &'a [(NodeId, &'a Vars)]) -> impl Iterator<Item = &'a (NodeId, &'a Vars)> {
    nv.iter().filter(move |(k, v)| (r, j) < (v.rank(), *k))
}

/// Actions whose guards hold at `j`, in ascending id order.
pub fn enabled(
    program: &Program,
    g: &Graph,
    j: NodeId,
    local: &NodeState,
    nbrs: &(impl StateView + ?Sized),
) -> Result<Vec<Action>> {
    debug_assert_eq!(program.kind, local.kind());
    let nv = neighbor_vars(g, j, nbrs)?;
    let mut out = Vec::new();
    match local.vars {
        Vars::Color { c } => {
            if nv.iter().any(|(_, v)| v.color() == Some(c)) {
                out.push(Action::Recolor);
            }
        }
        Vars::PColor { r, c } => {
            if successors(j, r, &nv).count() > PCOLOR_MAX_OUT {
                out.push(Action::RaiseRank);
            }
            if successors(j, r, &nv).any(|(_, v)| v.color() == Some(c)) {
                out.push(Action::PickColor);
            }
        }
        Vars::Match { m } => {
            let pointed_at_me = nv.iter().any(|(_, v)| v.partner() == Some(j));
            match m {
                None if pointed_at_me => out.push(Action::Marry),
                None => {
                    if nv.iter().any(|(_, v)| v.partner().is_none()) {
                        out.push(Action::Propose);
                    }
                }
                Some(k) => {
                    let theirs = nv.iter().find(|(n, _)| *n == k).and_then(|(_, v)| v.partner());
                    if theirs.is_some_and(|p| p != j) {
                        out.push(Action::Abandon);
                    }
                }
            }
        }
        Vars::NonstabColor { c: None } => {
            if nv.iter().filter(|(k, _)| *k < j).all(|(_, v)| v.color().is_some()) {
                out.push(Action::ColorOnce);
            }
        }
        Vars::NonstabColor { c: Some(_) } => {}
    }
    Ok(out)
}

/// Runs the lowest enabled action at `j`. Heuristic fields are copied
/// unchanged.
pub fn execute(
    program: &Program,
    g: &Graph,
    j: NodeId,
    local: &NodeState,
    nbrs: &(impl StateView + ?Sized),
    rng: &mut impl Rng,
) -> Result<NodeState> {
    let action = *enabled(program, g, j, local, nbrs)?.first().ok_or(Error::NotEnabled(j))?;
    let nv = neighbor_vars(g, j, nbrs)?;
    let vars = match (action, local.vars) {
        (Action::Recolor, Vars::Color { c }) => {
            let free = free_colors(nv.iter().filter_map(|(_, v)| v.color()), program.max_color);
            let pick = if program.random_color {
                free.choose(rng).copied()
            } else {
                free.first().copied()
            };
            Vars::Color { c: pick.unwrap_or(c) }
        }
        (Action::RaiseRank, Vars::PColor { c, .. }) => Vars::PColor {
            r: 1 + nv.iter().map(|(_, v)| v.rank()).max().unwrap_or(0),
            c,
        },
        (Action::PickColor, Vars::PColor { r, c }) => {
            let free = free_colors(successors(j, r, &nv).filter_map(|(_, v)| v.color()), PCOLOR_PALETTE - 1);
            Vars::PColor {
                r,
                c: free.first().copied().unwrap_or(c),
            }
        }
        (Action::Marry, Vars::Match { .. }) => Vars::Match {
            m: nv.iter().filter(|(_, v)| v.partner() == Some(j)).map(|(k, _)| *k).min(),
        },
        (Action::Propose, Vars::Match { .. }) => Vars::Match {
            m: nv.iter().filter(|(_, v)| v.partner().is_none()).map(|(k, _)| *k).min(),
        },
        (Action::Abandon, Vars::Match { .. }) => Vars::Match { m: None },
        (Action::ColorOnce, Vars::NonstabColor { .. }) => {
            let free = free_colors(nv.iter().filter_map(|(_, v)| v.color()), program.max_color);
            Vars::NonstabColor {
                c: free.first().copied(),
            }
        }
        (a, v) => unreachable!("action {a:?} enabled on {v:?}"),
    };
    Ok(NodeState { vars, ..*local })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixpointReport {
    pub is_fixpoint: bool,
    pub violations: Vec<(NodeId, Action)>,
}

pub fn check_fixpoint(program: &Program, g: &Graph, global: &[NodeState]) -> FixpointReport {
    let mut violations = Vec::new();
    for j in g.nodes() {
        let acts = enabled(program, g, j, &global[j as usize], global).expect("global state covers every node");
        violations.extend(acts.into_iter().map(|a| (j, a)));
    }
    FixpointReport {
        is_fixpoint: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validity {
    pub valid: bool,
    pub reason: Option<String>,
}

impl Validity {
    fn ok() -> Self {
        Validity { valid: true, reason: None }
    }
    fn bad(reason: String) -> Self {
        Validity {
            valid: false,
            reason: Some(reason),
        }
    }
}

pub fn validity_oracle(program: &Program, g: &Graph, global: &[NodeState]) -> Validity {
    match program.kind {
        ProgramKind::Color | ProgramKind::NonstabColor | ProgramKind::PColor => {
            for v in g.nodes() {
                let Some(c) = global[v as usize].vars.color() else {
                    return Validity::bad(format!("node {v} is uncolored"));
                };
                if program.kind == ProgramKind::PColor && c >= PCOLOR_PALETTE {
                    return Validity::bad(format!("node {v} uses color {c} > 5"));
                }
            }
            for (u, v) in g.edges() {
                if global[u as usize].vars.color() == global[v as usize].vars.color() {
                    return Validity::bad(format!("adjacent nodes {u} and {v} share a color"));
                }
            }
            Validity::ok()
        }
        ProgramKind::MaxMatch => {
            for v in g.nodes() {
                if let Some(p) = global[v as usize].vars.partner() {
                    if !g.is_edge(v, p) {
                        return Validity::bad(format!("node {v} points at non-neighbor {p}"));
                    }
                    if global[p as usize].vars.partner() != Some(v) {
                        return Validity::bad(format!("node {v} points at {p} which does not point back"));
                    }
                }
            }
            for (u, v) in g.edges() {
                if global[u as usize].vars.partner().is_none() && global[v as usize].vars.partner().is_none() {
                    return Validity::bad(format!("adjacent nodes {u} and {v} are both unmatched"));
                }
            }
            Validity::ok()
        }
    }
}

/// Largest number of successors any node has under the `(rank, id)`
/// orientation.
pub fn max_out_degree(g: &Graph, global: &[NodeState]) -> usize {
    g.nodes()
        .map(|j| {
            let rj = (global[j as usize].vars.rank(), j);
            g.neighbors(j)
                .iter()
                .filter(|&&k| rj < (global[k as usize].vars.rank(), k))
                .count()
        })
        .max()
        .unwrap_or(0)
}

/// Serial fair execution: sweeps nodes in id order, firing one action per
/// enabled node, until a fixpoint or `max_sweeps`. Returns the number of
/// actions executed, or `None` on hitting the sweep limit.
pub fn run_serial(
    program: &Program,
    g: &Graph,
    global: &mut [NodeState],
    rng: &mut impl Rng,
    max_sweeps: usize,
) -> Option<usize> {
    let mut steps = 0;
    for _ in 0..max_sweeps {
        let mut fired = false;
        for j in g.nodes() {
            let local = global[j as usize];
            if let Ok(next) = execute(program, g, j, &local, &*global, rng) {
                global[j as usize] = next;
                steps += 1;
                fired = true;
            }
        }
        if !fired {
            return Some(steps);
        }
    }
    None
}
