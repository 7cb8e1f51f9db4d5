//! Multi-fiber ROADM network description, port-budget validation and the
//! closed-form counts of components and candidate monitor locations.
//!
//! The component graph built here is the physical substrate every other
//! module works on. Its ordering (components and slots) is part of the
//! on-disk contract: uniform monitor deployment indexes slots in this order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub type NodeId = u32;
pub type ComponentId = u32;
pub type SlotId = u32;

/// Fiber attenuation in dB/km.
pub const FIBER_ATTENUATION_DB_PER_KM: f64 = 0.2;
/// Transponder launch power in dBm.
pub const LAUNCH_POWER_DBM: f64 = -1.0;
pub const LOCAL_WSS_IL_DB: (f64, f64) = (3.3, 6.8);
pub const LINE_WSS_IL_DB: f64 = 5.0;
pub const PREAMP_GAIN_DB: (f64, f64) = (18.0, 32.0);
pub const BOOSTER_GAIN_DB: (f64, f64) = (10.0, 20.0);
pub const ILA_GAIN_DB: (f64, f64) = (20.0, 32.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("link {a}-{b} references unknown node {node}")]
    UnknownNode { a: NodeId, b: NodeId, node: NodeId },
    #[error("self-link on node {0}")]
    SelfLink(NodeId),
    #[error("duplicate link between {0} and {1}")]
    DuplicateLink(NodeId, NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("link {0}-{1} must carry at least one fiber per direction")]
    NoFibers(NodeId, NodeId),
    #[error("link {0}-{1} must have a positive length")]
    BadLength(NodeId, NodeId),
    #[error("invalid WSS parameters k={k} m={m} n={n}: need k >= 1, m >= 1, m <= n")]
    BadWss { k: u32, m: u32, n: u32 },
    #[error("span length must be positive, got {0}")]
    BadSpan(f64),
    #[error("port capacity exceeded at node {node}: required {required}, available {available}")]
    PortCapacityExceeded {
        node: NodeId,
        required: u64,
        available: u64,
    },
    #[error("cannot read topology: {0}")]
    Io(String),
    #[error("cannot parse topology: {0}")]
    Parse(String),
}

/// Port counts of the 1xk line-WSS (k) and the nxm local-WSS (m line-facing
/// ports, n transponder-facing ports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WssParams {
    pub k: u32,
    pub m: u32,
    pub n: u32,
}

impl Default for WssParams {
    fn default() -> Self {
        WssParams { k: 32, m: 8, n: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub length_km: f64,
    /// Fibers per direction.
    pub fibers: u32,
}

impl LinkSpec {
    pub fn spans(&self, span_km: f64) -> u32 {
        span_count(self.length_km, span_km)
    }
}

/// Number of spans needed to cover `length_km` with spans of `span_km`.
pub fn span_count(length_km: f64, span_km: f64) -> u32 {
    // tolerate float noise on exact multiples (240 / 80)
    let ratio = length_km / span_km;
    let rounded = ratio.round();
    let s = if (ratio - rounded).abs() < 1e-9 {
        rounded
    } else {
        ratio.ceil()
    };
    (s as u32).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkSpec>,
    pub wss: WssParams,
    pub span_km: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Per-node derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub node: NodeId,
    /// Line-side fibers leaving the node.
    pub line_fibers: u32,
    /// Local add (= drop) WSS count.
    pub lambda: u32,
    pub degree: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComponentCounts {
    pub total: u64,
    pub node: u64,
    pub link: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotCounts {
    pub total: u64,
    pub node: u64,
    pub link: u64,
}

impl Topology {
    pub fn from_toml_str(text: &str) -> Result<Self, TopologyError> {
        toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("topology serializes")
    }

    /// Neighbors of `node` with their per-direction fiber count, ascending by id.
    pub fn neighbors(&self, node: NodeId) -> Vec<(NodeId, u32)> {
        let mut out: Vec<(NodeId, u32)> = self
            .links
            .iter()
            .filter_map(|l| {
                if l.a == node {
                    Some((l.b, l.fibers))
                } else if l.b == node {
                    Some((l.a, l.fibers))
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&LinkSpec> {
        self.links
            .iter()
            .find(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
    }

    pub fn line_fibers(&self, node: NodeId) -> u32 {
        self.neighbors(node).iter().map(|&(_, h)| h).sum()
    }

    pub fn lambda(&self, node: NodeId) -> u32 {
        let m = self.wss.m.max(1);
        self.line_fibers(node).div_ceil(m)
    }

    pub fn node_stats(&self, node: NodeId) -> NodeStats {
        let line_fibers = self.line_fibers(node);
        let lambda = self.lambda(node);
        NodeStats {
            node,
            line_fibers,
            lambda,
            degree: line_fibers + lambda,
        }
    }

    /// Checks structural invariants and the line/local WSS port budgets.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let WssParams { k, m, n } = self.wss;
        if k < 1 || m < 1 || m > n {
            return Err(TopologyError::BadWss { k, m, n });
        }
        if !(self.span_km > 0.0) {
            return Err(TopologyError::BadSpan(self.span_km));
        }
        let mut seen_nodes = std::collections::BTreeSet::new();
        for &node in &self.nodes {
            if !seen_nodes.insert(node) {
                return Err(TopologyError::DuplicateNode(node));
            }
        }
        let mut pairs = std::collections::BTreeSet::new();
        for l in &self.links {
            for node in [l.a, l.b] {
                if !seen_nodes.contains(&node) {
                    return Err(TopologyError::UnknownNode {
                        a: l.a,
                        b: l.b,
                        node,
                    });
                }
            }
            if l.a == l.b {
                return Err(TopologyError::SelfLink(l.a));
            }
            if !pairs.insert((l.a.min(l.b), l.a.max(l.b))) {
                return Err(TopologyError::DuplicateLink(l.a, l.b));
            }
            if l.fibers == 0 {
                return Err(TopologyError::NoFibers(l.a, l.b));
            }
            if !(l.length_km > 0.0) {
                return Err(TopologyError::BadLength(l.a, l.b));
            }
        }
        for &node in &self.nodes {
            let nbrs = self.neighbors(node);
            let total: u64 = nbrs.iter().map(|&(_, h)| h as u64).sum();
            for &(_, h) in &nbrs {
                // every line-WSS reaches all other-degree line-WSSs plus one local-WSS
                let required = total - h as u64 + 1;
                if (k as u64) < required {
                    return Err(TopologyError::PortCapacityExceeded {
                        node,
                        required,
                        available: k as u64,
                    });
                }
            }
            let available = m as u64 * self.lambda(node) as u64;
            if available < total {
                return Err(TopologyError::PortCapacityExceeded {
                    node,
                    required: total,
                    available,
                });
            }
        }
        Ok(())
    }

    pub fn count_components(&self) -> ComponentCounts {
        let n = self.wss.n as u64;
        let node: u64 = self
            .nodes
            .iter()
            .map(|&i| {
                let lambda = self.lambda(i) as u64;
                n * lambda + 2 * lambda + 4 * self.line_fibers(i) as u64
            })
            .sum();
        // each undirected link is counted once from each endpoint
        let link: u64 = self
            .links
            .iter()
            .map(|l| 2 * l.fibers as u64 * (2 * l.spans(self.span_km) as u64 - 1))
            .sum();
        ComponentCounts {
            total: node + link,
            node,
            link,
        }
    }

    pub fn count_opm_slots(&self) -> SlotCounts {
        let n = self.wss.n as u64;
        let node: u64 = self
            .nodes
            .iter()
            .map(|&i| {
                let nbrs = self.neighbors(i);
                let total: u64 = nbrs.iter().map(|&(_, h)| h as u64).sum();
                let per_degree: u64 = nbrs
                    .iter()
                    .map(|&(_, h)| {
                        let h = h as u64;
                        6 * h + h * (total - h)
                    })
                    .sum();
                per_degree + 2 * n * self.lambda(i) as u64
            })
            .sum();
        let link: u64 = self
            .links
            .iter()
            .map(|l| 2 * l.fibers as u64 * 2 * (l.spans(self.span_km) as u64 - 1))
            .sum();
        SlotCounts {
            total: node + link,
            node,
            link,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Transponder,
    LocalWss,
    LineWss,
    Preamp,
    Booster,
    Ila,
    FiberSpan,
}

impl ComponentKind {
    pub fn is_amplifier(self) -> bool {
        matches!(
            self,
            ComponentKind::Preamp | ComponentKind::Booster | ComponentKind::Ila
        )
    }

    pub fn is_wss(self) -> bool {
        matches!(self, ComponentKind::LocalWss | ComponentKind::LineWss)
    }
}

/// Where a component physically sits. Link-side entries are directional
/// (`from` -> `to`); node-side line entries name the neighbor they face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Site {
    Transponder {
        node: NodeId,
        index: u32,
    },
    AddWss {
        node: NodeId,
        index: u32,
    },
    DropWss {
        node: NodeId,
        index: u32,
    },
    LineWssOut {
        node: NodeId,
        toward: NodeId,
        fiber: u32,
    },
    LineWssIn {
        node: NodeId,
        from: NodeId,
        fiber: u32,
    },
    Booster {
        node: NodeId,
        toward: NodeId,
        fiber: u32,
    },
    Preamp {
        node: NodeId,
        from: NodeId,
        fiber: u32,
    },
    Span {
        from: NodeId,
        to: NodeId,
        fiber: u32,
        index: u32,
        length_km: f64,
    },
    Ila {
        from: NodeId,
        to: NodeId,
        fiber: u32,
        index: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: ComponentId,
    pub kind: ComponentKind,
    pub site: Site,
    /// Gain (amplifiers), insertion/fiber loss (WSS, spans), both in dB and
    /// positive; launch power in dBm for transponders.
    pub nominal: f64,
}

impl Component {
    /// Signed dB contribution of the component to a passing signal.
    pub fn nominal_delta_db(&self) -> f64 {
        match self.kind {
            ComponentKind::Preamp | ComponentKind::Booster | ComponentKind::Ila => self.nominal,
            ComponentKind::LocalWss | ComponentKind::LineWss | ComponentKind::FiberSpan => {
                -self.nominal
            }
            ComponentKind::Transponder => 0.0,
        }
    }
}

/// A candidate monitor location between two adjacent components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpmSlot {
    pub id: SlotId,
    pub upstream: ComponentId,
    pub downstream: ComponentId,
    pub in_link: bool,
}

/// Per-direction fiber key: `(from, to, fiber)`.
pub type FiberKey = (NodeId, NodeId, u32);

/// Physical component graph. Immutable once built.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentGraph {
    pub topology: Topology,
    pub components: Vec<Component>,
    pub slots: Vec<OpmSlot>,
    #[serde(skip)]
    index: GraphIndex,
}

#[derive(Debug, Clone, Default)]
struct GraphIndex {
    slot_by_edge: BTreeMap<(ComponentId, ComponentId), SlotId>,
    transponders: BTreeMap<NodeId, Vec<ComponentId>>,
    add_wss: BTreeMap<NodeId, Vec<ComponentId>>,
    drop_wss: BTreeMap<NodeId, Vec<ComponentId>>,
    line_out: BTreeMap<FiberKey, ComponentId>,
    line_in: BTreeMap<FiberKey, ComponentId>,
    booster: BTreeMap<FiberKey, ComponentId>,
    preamp: BTreeMap<FiberKey, ComponentId>,
    chain: BTreeMap<FiberKey, Vec<ComponentId>>,
    // local WSS index serving a line fiber
    add_of_fiber: BTreeMap<FiberKey, u32>,
    drop_of_fiber: BTreeMap<FiberKey, u32>,
}

impl ComponentGraph {
    /// Builds the graph; nominal parameters are drawn with a generator seeded
    /// from the topology seed.
    pub fn build(topology: &Topology) -> Result<Self, TopologyError> {
        topology.validate()?;
        let mut rng = seed::rng(topology.seed, "component-graph");
        let mut b = Builder {
            components: Vec::new(),
            slots: Vec::new(),
            index: GraphIndex::default(),
        };
        let n = topology.wss.n;
        let span_km = topology.span_km;

        for &node in &topology.nodes {
            let lambda = topology.lambda(node);
            let trx: Vec<_> = (0..n * lambda)
                .map(|index| {
                    b.push(
                        ComponentKind::Transponder,
                        Site::Transponder { node, index },
                        LAUNCH_POWER_DBM,
                    )
                })
                .collect();
            let adds: Vec<_> = (0..lambda)
                .map(|index| {
                    let il = rng.gen_range(LOCAL_WSS_IL_DB.0..=LOCAL_WSS_IL_DB.1);
                    b.push(ComponentKind::LocalWss, Site::AddWss { node, index }, il)
                })
                .collect();
            let drops: Vec<_> = (0..lambda)
                .map(|index| {
                    let il = rng.gen_range(LOCAL_WSS_IL_DB.0..=LOCAL_WSS_IL_DB.1);
                    b.push(ComponentKind::LocalWss, Site::DropWss { node, index }, il)
                })
                .collect();
            let mut round_robin = 0u32;
            for (nbr, h) in topology.neighbors(node) {
                for fiber in 0..h {
                    let out = b.push(
                        ComponentKind::LineWss,
                        Site::LineWssOut {
                            node,
                            toward: nbr,
                            fiber,
                        },
                        LINE_WSS_IL_DB,
                    );
                    let g = rng.gen_range(BOOSTER_GAIN_DB.0..=BOOSTER_GAIN_DB.1);
                    let boost = b.push(
                        ComponentKind::Booster,
                        Site::Booster {
                            node,
                            toward: nbr,
                            fiber,
                        },
                        g,
                    );
                    let g = rng.gen_range(PREAMP_GAIN_DB.0..=PREAMP_GAIN_DB.1);
                    let pre = b.push(
                        ComponentKind::Preamp,
                        Site::Preamp {
                            node,
                            from: nbr,
                            fiber,
                        },
                        g,
                    );
                    let inn = b.push(
                        ComponentKind::LineWss,
                        Site::LineWssIn {
                            node,
                            from: nbr,
                            fiber,
                        },
                        LINE_WSS_IL_DB,
                    );
                    let out_key = (node, nbr, fiber);
                    let in_key = (nbr, node, fiber);
                    b.index.line_out.insert(out_key, out);
                    b.index.booster.insert(out_key, boost);
                    b.index.preamp.insert(in_key, pre);
                    b.index.line_in.insert(in_key, inn);
                    let local = round_robin % lambda;
                    b.index.add_of_fiber.insert(out_key, local);
                    b.index.drop_of_fiber.insert(in_key, local);
                    round_robin += 1;
                }
            }
            b.index.transponders.insert(node, trx);
            b.index.add_wss.insert(node, adds);
            b.index.drop_wss.insert(node, drops);
        }

        for link in &topology.links {
            let s = link.spans(span_km);
            for (from, to) in [(link.a, link.b), (link.b, link.a)] {
                for fiber in 0..link.fibers {
                    let mut chain = Vec::with_capacity(2 * s as usize - 1);
                    for index in 0..s {
                        let length_km = if index + 1 < s {
                            span_km
                        } else {
                            link.length_km - span_km * (s - 1) as f64
                        };
                        chain.push(b.push(
                            ComponentKind::FiberSpan,
                            Site::Span {
                                from,
                                to,
                                fiber,
                                index,
                                length_km,
                            },
                            FIBER_ATTENUATION_DB_PER_KM * length_km,
                        ));
                        if index + 1 < s {
                            let g = rng.gen_range(ILA_GAIN_DB.0..=ILA_GAIN_DB.1);
                            chain.push(b.push(
                                ComponentKind::Ila,
                                Site::Ila {
                                    from,
                                    to,
                                    fiber,
                                    index,
                                },
                                g,
                            ));
                        }
                    }
                    b.index.chain.insert((from, to, fiber), chain);
                }
            }
        }

        // node-side slots, node by node, then link-side slots
        for &node in &topology.nodes {
            let trx = b.index.transponders[&node].clone();
            let adds = b.index.add_wss[&node].clone();
            let drops = b.index.drop_wss[&node].clone();
            for (t, &id) in trx.iter().enumerate() {
                let w = t / n as usize;
                b.slot(id, adds[w], false);
            }
            for (t, &id) in trx.iter().enumerate() {
                let w = t / n as usize;
                b.slot(drops[w], id, false);
            }
            let nbrs = topology.neighbors(node);
            for &(nbr, h) in &nbrs {
                for fiber in 0..h {
                    let out_key = (node, nbr, fiber);
                    let in_key = (nbr, node, fiber);
                    let out = b.index.line_out[&out_key];
                    let boost = b.index.booster[&out_key];
                    let pre = b.index.preamp[&in_key];
                    let inn = b.index.line_in[&in_key];
                    let first_span = b.index.chain[&out_key][0];
                    let last_span = *b.index.chain[&in_key].last().expect("non-empty chain");
                    b.slot(adds[b.index.add_of_fiber[&out_key] as usize], out, false);
                    b.slot(out, boost, false);
                    b.slot(boost, first_span, false);
                    b.slot(last_span, pre, false);
                    b.slot(pre, inn, false);
                    b.slot(inn, drops[b.index.drop_of_fiber[&in_key] as usize], false);
                }
            }
            for &(from_nbr, h_in) in &nbrs {
                for fin in 0..h_in {
                    let inn = b.index.line_in[&(from_nbr, node, fin)];
                    for &(to_nbr, h_out) in &nbrs {
                        if to_nbr == from_nbr {
                            continue;
                        }
                        for fout in 0..h_out {
                            let out = b.index.line_out[&(node, to_nbr, fout)];
                            b.slot(inn, out, false);
                        }
                    }
                }
            }
        }
        for link in &topology.links {
            for (from, to) in [(link.a, link.b), (link.b, link.a)] {
                for fiber in 0..link.fibers {
                    let chain = b.index.chain[&(from, to, fiber)].clone();
                    for pair in chain.windows(2) {
                        b.slot(pair[0], pair[1], true);
                    }
                }
            }
        }

        Ok(ComponentGraph {
            topology: topology.clone(),
            components: b.components,
            slots: b.slots,
            index: b.index,
        })
    }

    pub fn component(&self, id: ComponentId) -> &Component {
        &self.components[id as usize]
    }

    pub fn slot_between(&self, upstream: ComponentId, downstream: ComponentId) -> Option<SlotId> {
        self.index
            .slot_by_edge
            .get(&(upstream, downstream))
            .copied()
    }

    pub fn transponders(&self, node: NodeId) -> &[ComponentId] {
        self.index
            .transponders
            .get(&node)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn add_wss(&self, node: NodeId, index: u32) -> ComponentId {
        self.index.add_wss[&node][index as usize]
    }

    pub fn drop_wss(&self, node: NodeId, index: u32) -> ComponentId {
        self.index.drop_wss[&node][index as usize]
    }

    pub fn line_out(&self, key: FiberKey) -> ComponentId {
        self.index.line_out[&key]
    }

    pub fn line_in(&self, key: FiberKey) -> ComponentId {
        self.index.line_in[&key]
    }

    pub fn booster(&self, key: FiberKey) -> ComponentId {
        self.index.booster[&key]
    }

    pub fn preamp(&self, key: FiberKey) -> ComponentId {
        self.index.preamp[&key]
    }

    /// Span/ILA chain of one directional fiber, in propagation order.
    pub fn fiber_chain(&self, key: FiberKey) -> &[ComponentId] {
        &self.index.chain[&key]
    }

    /// Local WSS index feeding the outgoing fiber `key`.
    pub fn add_index_of(&self, key: FiberKey) -> u32 {
        self.index.add_of_fiber[&key]
    }

    /// Local WSS index fed by the incoming fiber `key`.
    pub fn drop_index_of(&self, key: FiberKey) -> u32 {
        self.index.drop_of_fiber[&key]
    }

    /// Local WSS index a transponder hangs off.
    pub fn local_index_of_transponder(&self, id: ComponentId) -> u32 {
        match self.component(id).site {
            Site::Transponder { index, .. } => index / self.topology.wss.n,
            _ => panic!("component {id} is not a transponder"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }
}

struct Builder {
    components: Vec<Component>,
    slots: Vec<OpmSlot>,
    index: GraphIndex,
}

impl Builder {
    fn push(&mut self, kind: ComponentKind, site: Site, nominal: f64) -> ComponentId {
        let id = self.components.len() as ComponentId;
        self.components.push(Component {
            id,
            kind,
            site,
            nominal,
        });
        id
    }

    fn slot(&mut self, upstream: ComponentId, downstream: ComponentId, in_link: bool) {
        let id = self.slots.len() as SlotId;
        self.slots.push(OpmSlot {
            id,
            upstream,
            downstream,
            in_link,
        });
        self.index.slot_by_edge.insert((upstream, downstream), id);
    }
}
