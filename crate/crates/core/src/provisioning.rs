//! Lightpath routing: hop-count shortest path (lexicographically smallest on
//! ties), then first-fit wavelength with first-fit fiber per link under
//! wavelength continuity.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::topology::{ComponentGraph, ComponentId, FiberKey, NodeId, SlotId};

/// Default channel count per fiber (one per port of the 1x32 local WSS).
pub const DEFAULT_WAVELENGTHS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightpathRequest {
    pub id: u32,
    pub source: NodeId,
    pub destination: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lightpath {
    pub id: u32,
    pub source: NodeId,
    pub destination: NodeId,
    pub wavelength: u32,
    /// Node path, source first.
    pub nodes: Vec<NodeId>,
    /// Fiber index used on each traversed link.
    pub fibers: Vec<u32>,
    /// Traversed components, transmitting transponder first.
    pub components: Vec<ComponentId>,
    /// Slot between `components[i]` and `components[i + 1]`.
    pub slots: Vec<SlotId>,
}

impl Lightpath {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn transmitter(&self) -> ComponentId {
        self.components[0]
    }

    pub fn receiver(&self) -> ComponentId {
        *self.components.last().expect("non-empty lightpath")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockReason {
    Unreachable,
    NoWavelength,
    NoTransponder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocked {
    pub request: u32,
    pub reason: BlockReason,
}

#[derive(Debug, Clone, Default)]
pub struct Provisioning {
    pub lightpaths: Vec<Lightpath>,
    pub blocked: Vec<Blocked>,
}

/// Stateful router holding the wavelength and transponder occupancy.
pub struct Router<'g> {
    graph: &'g ComponentGraph,
    wavelengths: u32,
    occupied: BTreeSet<(FiberKey, u32)>,
    tx_used: BTreeSet<ComponentId>,
    rx_used: BTreeSet<ComponentId>,
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
}

impl<'g> Router<'g> {
    pub fn new(graph: &'g ComponentGraph, wavelengths: u32) -> Self {
        assert!(wavelengths >= 1, "need at least one wavelength");
        let topo = &graph.topology;
        let adjacency = topo
            .nodes
            .iter()
            .map(|&n| (n, topo.neighbors(n).into_iter().map(|(j, _)| j).collect()))
            .collect();
        Router {
            graph,
            wavelengths,
            occupied: BTreeSet::new(),
            tx_used: BTreeSet::new(),
            rx_used: BTreeSet::new(),
            adjacency,
        }
    }

    /// Lexicographically smallest among the hop-count shortest node paths.
    pub fn shortest_path(&self, source: NodeId, destination: NodeId) -> Option<Vec<NodeId>> {
        let mut dist: BTreeMap<NodeId, u32> = BTreeMap::new();
        dist.insert(destination, 0);
        let mut queue = VecDeque::from([destination]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for &v in self.adjacency.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        let mut here = source;
        let mut path = vec![source];
        let mut remaining = *dist.get(&source)?;
        while remaining > 0 {
            // neighbor lists are sorted, so the first hit is the smallest id
            here = *self.adjacency[&here]
                .iter()
                .find(|v| dist.get(v) == Some(&(remaining - 1)))?;
            path.push(here);
            remaining -= 1;
        }
        Some(path)
    }

    pub fn route(&mut self, req: &LightpathRequest) -> Result<Lightpath, Blocked> {
        let blocked = |reason| Blocked {
            request: req.id,
            reason,
        };
        if req.source == req.destination {
            return Err(blocked(BlockReason::Unreachable));
        }
        let nodes = self
            .shortest_path(req.source, req.destination)
            .ok_or(blocked(BlockReason::Unreachable))?;
        let topo = &self.graph.topology;
        let fiber_counts: Vec<u32> = nodes
            .windows(2)
            .map(|w| topo.link_between(w[0], w[1]).expect("adjacent").fibers)
            .collect();

        let mut assignment = None;
        'wl: for wl in 0..self.wavelengths {
            let mut fibers = Vec::with_capacity(fiber_counts.len());
            for (hop, w) in nodes.windows(2).enumerate() {
                match (0..fiber_counts[hop])
                    .find(|&f| !self.occupied.contains(&((w[0], w[1], f), wl)))
                {
                    Some(f) => fibers.push(f),
                    None => continue 'wl,
                }
            }
            assignment = Some((wl, fibers));
            break;
        }
        let (wavelength, fibers) = assignment.ok_or(blocked(BlockReason::NoWavelength))?;

        let first = (nodes[0], nodes[1], fibers[0]);
        let last_hop = nodes.len() - 2;
        let last = (nodes[last_hop], nodes[last_hop + 1], fibers[last_hop]);
        let add_index = self.graph.add_index_of(first);
        let drop_index = self.graph.drop_index_of(last);
        let tx = self
            .graph
            .transponders(req.source)
            .iter()
            .copied()
            .find(|&t| {
                self.graph.local_index_of_transponder(t) == add_index && !self.tx_used.contains(&t)
            })
            .ok_or(blocked(BlockReason::NoTransponder))?;
        let rx = self
            .graph
            .transponders(req.destination)
            .iter()
            .copied()
            .find(|&t| {
                self.graph.local_index_of_transponder(t) == drop_index && !self.rx_used.contains(&t)
            })
            .ok_or(blocked(BlockReason::NoTransponder))?;

        let g = self.graph;
        let mut components = vec![tx, g.add_wss(req.source, add_index)];
        for (hop, w) in nodes.windows(2).enumerate() {
            let key = (w[0], w[1], fibers[hop]);
            components.push(g.line_out(key));
            components.push(g.booster(key));
            components.extend_from_slice(g.fiber_chain(key));
            components.push(g.preamp(key));
            components.push(g.line_in(key));
        }
        components.push(g.drop_wss(req.destination, drop_index));
        components.push(rx);
        let slots = components
            .windows(2)
            .map(|p| {
                g.slot_between(p[0], p[1])
                    .expect("lightpath follows graph adjacency")
            })
            .collect();

        for (hop, w) in nodes.windows(2).enumerate() {
            self.occupied
                .insert(((w[0], w[1], fibers[hop]), wavelength));
        }
        self.tx_used.insert(tx);
        self.rx_used.insert(rx);
        Ok(Lightpath {
            id: req.id,
            source: req.source,
            destination: req.destination,
            wavelength,
            nodes,
            fibers,
            components,
            slots,
        })
    }
}

/// Routes requests in order; blocked requests are reported, not fatal.
pub fn route_spff(
    graph: &ComponentGraph,
    requests: &[LightpathRequest],
    wavelengths: u32,
) -> Provisioning {
    let mut router = Router::new(graph, wavelengths);
    let mut out = Provisioning::default();
    for req in requests {
        match router.route(req) {
            Ok(lp) => out.lightpaths.push(lp),
            Err(b) => out.blocked.push(b),
        }
    }
    out
}
