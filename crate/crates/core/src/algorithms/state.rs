use std::fmt::Write as _;

use rand::Rng;

use super::ProgramKind;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::sim::Time;

/// Encoded value of an absent color or partner.
pub const UNSET: i64 = -1;

/// Program variables of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vars {
    Color { c: u32 },
    PColor { r: u32, c: u32 },
    Match { m: Option<NodeId> },
    NonstabColor { c: Option<u32> },
}

impl Vars {
    pub fn kind(&self) -> ProgramKind {
        match self {
            Vars::Color { .. } => ProgramKind::Color,
            Vars::PColor { .. } => ProgramKind::PColor,
            Vars::Match { .. } => ProgramKind::MaxMatch,
            Vars::NonstabColor { .. } => ProgramKind::NonstabColor,
        }
    }

    /// The color, for coloring programs.
    pub fn color(&self) -> Option<u32> {
        match *self {
            Vars::Color { c } | Vars::PColor { c, .. } => Some(c),
            Vars::NonstabColor { c } => c,
            Vars::Match { .. } => None,
        }
    }

    pub fn partner(&self) -> Option<NodeId> {
        match *self {
            Vars::Match { m } => m,
            _ => None,
        }
    }

    pub fn rank(&self) -> u32 {
        match *self {
            Vars::PColor { r, .. } => r,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub vars: Vars,
    /// Last time the owning client found this node disabled.
    pub nd_change: Time,
    /// Last time a neighbor's state changed.
    pub nbr_change: Time,
    /// Duration of the last execution at this node.
    pub delta: Time,
}

impl NodeState {
    pub fn new(vars: Vars) -> Self {
        NodeState {
            vars,
            nd_change: 0,
            nbr_change: 0,
            delta: 0,
        }
    }

    pub fn kind(&self) -> ProgramKind {
        self.vars.kind()
    }

    /// `c|nd|nbr|Δ`, `r|c|nd|nbr|Δ` or `m|nd|nbr|Δ`.
    pub fn encode(&self) -> String {
        let mut s = String::with_capacity(24);
        let opt = |v: Option<u32>| v.map_or(UNSET, i64::from);
        match self.vars {
            Vars::Color { c } => write!(s, "{c}"),
            Vars::PColor { r, c } => write!(s, "{r}|{c}"),
            Vars::Match { m } => write!(s, "{}", opt(m)),
            Vars::NonstabColor { c } => write!(s, "{}", opt(c)),
        }
        .expect("string write");
        write!(s, "|{}|{}|{}", self.nd_change, self.nbr_change, self.delta).expect("string write");
        s
    }

    pub fn decode(kind: ProgramKind, payload: &str) -> Result<NodeState> {
        let bad = |msg: &str| Error::Payload {
            payload: payload.to_string(),
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = payload.split('|').collect();
        let expected = if kind == ProgramKind::PColor { 5 } else { 4 };
        if fields.len() != expected {
            return Err(bad(&format!("expected {expected} fields, found {}", fields.len())));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| bad(&format!("`{s}` is not an integer")));
        let nat = |s: &str| -> Result<u32> {
            let v = int(s)?;
            u32::try_from(v).map_err(|_| bad(&format!("`{s}` out of range")))
        };
        let opt = |s: &str| -> Result<Option<u32>> {
            match int(s)? {
                UNSET => Ok(None),
                v => u32::try_from(v).map(Some).map_err(|_| bad(&format!("`{s}` out of range"))),
            }
        };
        let time = |s: &str| s.parse::<Time>().map_err(|_| bad(&format!("`{s}` is not a timestamp")));
        let (vars, rest) = match kind {
            ProgramKind::Color => (Vars::Color { c: nat(fields[0])? }, &fields[1..]),
            ProgramKind::PColor => (
                Vars::PColor {
                    r: nat(fields[0])?,
                    c: nat(fields[1])?,
                },
                &fields[2..],
            ),
            ProgramKind::MaxMatch => (Vars::Match { m: opt(fields[0])? }, &fields[1..]),
            ProgramKind::NonstabColor => (Vars::NonstabColor { c: opt(fields[0])? }, &fields[1..]),
        };
        Ok(NodeState {
            vars,
            nd_change: time(rest[0])?,
            nbr_change: time(rest[1])?,
            delta: time(rest[2])?,
        })
    }
}

/// How to build the starting global state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// Arbitrary (seeded random) values within each variable's domain.
    #[default]
    Random,
    /// Every node at the all-zero (or unset) value.
    Uniform,
}

pub fn initial_states(kind: ProgramKind, g: &Graph, init: InitialState, rng: &mut impl Rng) -> Vec<NodeState> {
    let delta = g.max_degree() as u32;
    g.nodes()
        .map(|v| {
            let vars = match (kind, init) {
                (ProgramKind::Color, InitialState::Uniform) => Vars::Color { c: 0 },
                (ProgramKind::Color, InitialState::Random) => Vars::Color {
                    c: rng.gen_range(0..=delta),
                },
                (ProgramKind::PColor, InitialState::Uniform) => Vars::PColor { r: 0, c: 0 },
                (ProgramKind::PColor, InitialState::Random) => Vars::PColor {
                    r: rng.gen_range(0..=3),
                    c: rng.gen_range(0..=5),
                },
                (ProgramKind::MaxMatch, InitialState::Uniform) => Vars::Match { m: None },
                (ProgramKind::MaxMatch, InitialState::Random) => {
                    let nbrs = g.neighbors(v);
                    let pick = rng.gen_range(0..=nbrs.len());
                    Vars::Match {
                        m: nbrs.get(pick).copied(),
                    }
                }
                // the non-stabilizing program only works from its designated start
                (ProgramKind::NonstabColor, _) => Vars::NonstabColor { c: None },
            };
            NodeState::new(vars)
        })
        .collect()
}
