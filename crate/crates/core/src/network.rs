//! Directed road graph with a joint dedicated lane (DL) and a general-purpose
//! lane (GPL) per edge.
//!
//! Node ids in scenario documents are arbitrary labels; the loader assigns
//! dense [`NodeId`]s in document order and keeps the label for reporting.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::VehicleClass;
use crate::scenario::ScenarioDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Intersection,
    BusStation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Identifier used by the scenario document.
    pub label: u32,
    pub kind: NodeKind,
    pub position: [f64; 2],
}

/// Lane classes. The declaration order is the lane tie-break order used by
/// routing: when both lanes of an edge cost the same, the DL wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LaneClass {
    #[serde(rename = "dl")]
    JointDl,
    #[serde(rename = "gpl")]
    Gpl,
}

impl LaneClass {
    pub const ALL: [LaneClass; 2] = [LaneClass::JointDl, LaneClass::Gpl];

    pub fn slot(self) -> usize {
        match self {
            LaneClass::JointDl => 0,
            LaneClass::Gpl => 1,
        }
    }

    pub fn other(self) -> LaneClass {
        match self {
            LaneClass::JointDl => LaneClass::Gpl,
            LaneClass::Gpl => LaneClass::JointDl,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LaneClass::JointDl => "dl",
            LaneClass::Gpl => "gpl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lane {
    pub class: LaneClass,
    /// Vehicles per second.
    pub capacity: f64,
    /// Seconds.
    pub free_flow_time: f64,
}

/// A bus station located on an edge, `offset` free-flow seconds after the
/// edge's start node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusStop {
    pub station: NodeId,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    pub label: u32,
    pub from: NodeId,
    pub to: NodeId,
    lanes: [Option<Lane>; 2],
    pub bus_stop: Option<BusStop>,
}

impl Edge {
    pub fn lane(&self, class: LaneClass) -> Option<&Lane> {
        self.lanes[class.slot()].as_ref()
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.iter().flatten()
    }

    pub fn has_lane(&self, class: LaneClass) -> bool {
        self.lanes[class.slot()].is_some()
    }

    /// Free-flow time of the edge; both lanes share it.
    pub fn free_flow_time(&self) -> f64 {
        self.lanes()
            .next()
            .map(|l| l.free_flow_time)
            .expect("edge has at least one lane")
    }
}

/// One lane on one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneRef {
    pub edge: EdgeId,
    pub class: LaneClass,
}

impl LaneRef {
    pub fn new(edge: EdgeId, class: LaneClass) -> Self {
        Self { edge, class }
    }
}

/// Which lane classes a traveller may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneAccess {
    GplOnly,
    DlOnly,
    Any,
}

impl LaneAccess {
    pub fn for_class(class: VehicleClass, joint_dl_allowed: bool) -> Self {
        match class {
            VehicleClass::Hv => LaneAccess::GplOnly,
            VehicleClass::Bus => LaneAccess::DlOnly,
            VehicleClass::Cav if joint_dl_allowed => LaneAccess::Any,
            VehicleClass::Cav => LaneAccess::GplOnly,
        }
    }

    pub fn permits(self, class: LaneClass) -> bool {
        match self {
            LaneAccess::Any => true,
            LaneAccess::GplOnly => class == LaneClass::Gpl,
            LaneAccess::DlOnly => class == LaneClass::JointDl,
        }
    }
}

/// Edges or individual lanes a search must avoid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exclusions {
    edges: BTreeSet<EdgeId>,
    lanes: BTreeSet<LaneRef>,
}

impl Exclusions {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn edges(edges: impl IntoIterator<Item = EdgeId>) -> Self {
        Self {
            edges: edges.into_iter().collect(),
            lanes: BTreeSet::new(),
        }
    }

    pub fn lane(lane: LaneRef) -> Self {
        let mut ex = Self::default();
        ex.lanes.insert(lane);
        ex
    }

    pub fn exclude_edge(&mut self, edge: EdgeId) {
        self.edges.insert(edge);
    }

    pub fn exclude_lane(&mut self, lane: LaneRef) {
        self.lanes.insert(lane);
    }

    pub fn permits(&self, lane: LaneRef) -> bool {
        !self.edges.contains(&lane.edge) && !self.lanes.contains(&lane)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("duplicate node id {0}")]
    DuplicateNodeId(u32),
    #[error("duplicate edge id {0}")]
    DuplicateEdgeId(u32),
    #[error("edge {edge} references unknown node {node}")]
    DanglingEdgeEndpoint { edge: u32, node: u32 },
    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: u32, node: u32 },
    #[error("edge {0} has no lanes")]
    MissingLane(u32),
    #[error("lane record references unknown edge {0}")]
    LaneOnUnknownEdge(u32),
    #[error("edge {edge} has two {class} lanes")]
    DuplicateLane { edge: u32, class: &'static str },
    #[error("edge {edge} lane {class}: capacity and free-flow time must be finite and positive")]
    InvalidLane { edge: u32, class: &'static str },
    #[error("edge {0}: lanes disagree on free-flow time")]
    FreeFlowMismatch(u32),
    #[error("node {0} has a non-finite position")]
    InvalidPosition(u32),
    #[error("edge {edge}: bus stop {station} is not a bus station node")]
    NotAStation { edge: u32, station: u32 },
    #[error("edge {0}: bus stop requires a dl lane")]
    StopWithoutDl(u32),
    #[error("edge {edge}: stop offset must lie within [0, free-flow time]")]
    InvalidStopOffset { edge: u32 },
    #[error("bus station {0} is not located on any edge")]
    UnplacedStation(u32),
    #[error("bus station {0} is located on more than one edge")]
    StationOnSeveralEdges(u32),
    #[error("network is disconnected: node {0} is unreachable")]
    DisconnectedGraph(u32),
    #[error("network has no nodes")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<EdgeId>>,
    incoming: Vec<Vec<EdgeId>>,
    by_label: BTreeMap<u32, NodeId>,
}

/// Builds and validates a network from the `nodes`, `edges` and `lanes`
/// sections of a scenario document. Returns the first violation found.
pub fn load_network(doc: &ScenarioDoc) -> Result<RoadNetwork, NetworkError> {
    match build(doc) {
        Ok(net) => Ok(net),
        Err(mut errs) => Err(errs.remove(0)),
    }
}

/// Same checks as [`load_network`], reporting every violation.
pub fn network_diagnostics(doc: &ScenarioDoc) -> Vec<NetworkError> {
    build(doc).err().unwrap_or_default()
}

fn build(doc: &ScenarioDoc) -> Result<RoadNetwork, Vec<NetworkError>> {
    let mut errs = Vec::new();
    if doc.nodes.is_empty() {
        return Err(vec![NetworkError::Empty]);
    }

    let mut by_label = BTreeMap::new();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in &doc.nodes {
        if by_label.contains_key(&n.id) {
            errs.push(NetworkError::DuplicateNodeId(n.id));
            continue;
        }
        if !(n.x.is_finite() && n.y.is_finite()) {
            errs.push(NetworkError::InvalidPosition(n.id));
        }
        let id = NodeId(nodes.len() as u32);
        by_label.insert(n.id, id);
        nodes.push(Node {
            id,
            label: n.id,
            kind: n.kind,
            position: [n.x, n.y],
        });
    }

    let mut edge_index = BTreeMap::new();
    let mut edges = Vec::with_capacity(doc.edges.len());
    for e in &doc.edges {
        if edge_index.contains_key(&e.id) {
            errs.push(NetworkError::DuplicateEdgeId(e.id));
            continue;
        }
        let mut endpoint = |label: u32| match by_label.get(&label) {
            Some(&id) => Some(id),
            None => {
                errs.push(NetworkError::DanglingEdgeEndpoint {
                    edge: e.id,
                    node: label,
                });
                None
            }
        };
        let (from, to) = (endpoint(e.from), endpoint(e.to));
        let (Some(from), Some(to)) = (from, to) else {
            continue;
        };
        if from == to {
            errs.push(NetworkError::SelfLoop {
                edge: e.id,
                node: e.from,
            });
            continue;
        }
        let id = EdgeId(edges.len() as u32);
        edge_index.insert(e.id, id);
        edges.push(Edge {
            id,
            label: e.id,
            from,
            to,
            lanes: [None, None],
            bus_stop: None,
        });
    }

    for l in &doc.lanes {
        let Some(&eid) = edge_index.get(&l.edge) else {
            errs.push(NetworkError::LaneOnUnknownEdge(l.edge));
            continue;
        };
        let edge = &mut edges[eid.index()];
        let class = l.class;
        if !(l.capacity.is_finite() && l.capacity > 0.0)
            || !(l.free_flow_time.is_finite() && l.free_flow_time > 0.0)
        {
            errs.push(NetworkError::InvalidLane {
                edge: l.edge,
                class: class.as_str(),
            });
            continue;
        }
        if edge.lanes[class.slot()].is_some() {
            errs.push(NetworkError::DuplicateLane {
                edge: l.edge,
                class: class.as_str(),
            });
            continue;
        }
        edge.lanes[class.slot()] = Some(Lane {
            class,
            capacity: l.capacity,
            free_flow_time: l.free_flow_time,
        });
    }

    let mut station_use: BTreeMap<NodeId, u32> = BTreeMap::new();
    for e in &doc.edges {
        let Some(&eid) = edge_index.get(&e.id) else {
            continue;
        };
        let edge = &mut edges[eid.index()];
        let lanes: Vec<&Lane> = edge.lanes.iter().flatten().collect();
        if lanes.is_empty() {
            errs.push(NetworkError::MissingLane(e.id));
            continue;
        }
        if lanes.len() == 2 && lanes[0].free_flow_time != lanes[1].free_flow_time {
            errs.push(NetworkError::FreeFlowMismatch(e.id));
        }
        let tau0 = lanes[0].free_flow_time;
        if let Some(station) = e.bus_stop {
            let Some(&sid) = by_label.get(&station) else {
                errs.push(NetworkError::DanglingEdgeEndpoint {
                    edge: e.id,
                    node: station,
                });
                continue;
            };
            if nodes[sid.index()].kind != NodeKind::BusStation {
                errs.push(NetworkError::NotAStation {
                    edge: e.id,
                    station,
                });
                continue;
            }
            if !edge.has_lane(LaneClass::JointDl) {
                errs.push(NetworkError::StopWithoutDl(e.id));
                continue;
            }
            let offset = e.stop_offset.unwrap_or(tau0);
            if !(offset.is_finite() && (0.0..=tau0).contains(&offset)) {
                errs.push(NetworkError::InvalidStopOffset { edge: e.id });
                continue;
            }
            *station_use.entry(sid).or_default() += 1;
            edge.bus_stop = Some(BusStop {
                station: sid,
                offset,
            });
        }
    }

    for n in &nodes {
        if n.kind == NodeKind::BusStation {
            match station_use.get(&n.id).copied().unwrap_or(0) {
                0 => errs.push(NetworkError::UnplacedStation(n.label)),
                1 => {}
                _ => errs.push(NetworkError::StationOnSeveralEdges(n.label)),
            }
        }
    }

    if !errs.is_empty() {
        return Err(errs);
    }

    let mut outgoing = vec![Vec::new(); nodes.len()];
    let mut incoming = vec![Vec::new(); nodes.len()];
    for e in &edges {
        outgoing[e.from.index()].push(e.id);
        incoming[e.to.index()].push(e.id);
    }
    let net = RoadNetwork {
        nodes,
        edges,
        outgoing,
        incoming,
        by_label,
    };
    if let Some(orphan) = net.first_weakly_unreachable() {
        return Err(vec![NetworkError::DisconnectedGraph(orphan)]);
    }
    Ok(net)
}

impl RoadNetwork {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.index()]
    }

    pub fn lane(&self, lane: LaneRef) -> Option<&Lane> {
        self.edges.get(lane.edge.index())?.lane(lane.class)
    }

    pub fn outgoing(&self, node: NodeId) -> &[EdgeId] {
        &self.outgoing[node.index()]
    }

    pub fn incoming(&self, node: NodeId) -> &[EdgeId] {
        &self.incoming[node.index()]
    }

    pub fn node_by_label(&self, label: u32) -> Option<NodeId> {
        self.by_label.get(&label).copied()
    }

    pub fn label(&self, id: NodeId) -> u32 {
        self.nodes[id.index()].label
    }

    /// Lowest-id edge from `from` to `to`, if any.
    pub fn edge_between(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.outgoing(from)
            .iter()
            .copied()
            .filter(|&e| self.edge(e).to == to)
            .min()
    }

    pub fn lane_refs(&self) -> impl Iterator<Item = LaneRef> + '_ {
        self.edges
            .iter()
            .flat_map(|e| e.lanes().map(move |l| LaneRef::new(e.id, l.class)))
    }

    fn first_weakly_unreachable(&self) -> Option<u32> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([NodeId(0)]);
        seen[0] = true;
        while let Some(n) = queue.pop_front() {
            let neighbours = self.outgoing[n.index()]
                .iter()
                .map(|&e| self.edge(e).to)
                .chain(self.incoming[n.index()].iter().map(|&e| self.edge(e).from));
            for m in neighbours {
                if !seen[m.index()] {
                    seen[m.index()] = true;
                    queue.push_back(m);
                }
            }
        }
        // Stations sit on edges rather than being traversed, so they only
        // need to be attached through their host edge.
        let attached: BTreeSet<NodeId> = self
            .edges
            .iter()
            .filter_map(|e| e.bus_stop.map(|s| (s.station, e.from)))
            .filter(|(_, host)| seen[host.index()])
            .map(|(s, _)| s)
            .collect();
        self.nodes
            .iter()
            .find(|n| !seen[n.id.index()] && !attached.contains(&n.id))
            .map(|n| n.label)
    }

    /// Lanes of `edge` usable under `access` and `excluded`, in tie-break order.
    pub fn usable_lanes<'a>(
        &'a self,
        edge: EdgeId,
        access: LaneAccess,
        excluded: &'a Exclusions,
    ) -> impl Iterator<Item = &'a Lane> + 'a {
        self.edge(edge)
            .lanes()
            .filter(move |l| access.permits(l.class) && excluded.permits(LaneRef::new(edge, l.class)))
    }

    /// True when some route from `from` to `to` exists under the given
    /// restrictions. Breadth-first, O(V + E).
    pub fn route_exists(
        &self,
        from: NodeId,
        to: NodeId,
        access: LaneAccess,
        excluded: &Exclusions,
    ) -> bool {
        if from == to {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[from.index()] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for &e in self.outgoing(n) {
                if self.usable_lanes(e, access, excluded).next().is_none() {
                    continue;
                }
                let m = self.edge(e).to;
                if m == to {
                    return true;
                }
                if !seen[m.index()] {
                    seen[m.index()] = true;
                    queue.push_back(m);
                }
            }
        }
        false
    }

    /// Enumerates all simple edge paths from `from` to `to` whose every edge
    /// has a usable lane. `from == to` yields a single empty path.
    pub fn feasible_routes<'a>(
        &'a self,
        from: NodeId,
        to: NodeId,
        excluded: &'a Exclusions,
        access: LaneAccess,
    ) -> SimplePaths<'a> {
        SimplePaths::new(self, from, to, excluded, access)
    }

    /// Free-flow duration of a route.
    pub fn route_free_flow_time(&self, route: &Route) -> f64 {
        route.edges.iter().map(|&e| self.edge(e).free_flow_time()).sum()
    }

    /// Checks chaining and lane presence. `start` pins the first node.
    pub fn check_route(&self, route: &Route, start: Option<NodeId>) -> Result<(), RouteError> {
        if route.edges.len() != route.lanes.len() {
            return Err(RouteError::LaneCountMismatch);
        }
        for (i, (&e, &class)) in route.edges.iter().zip(&route.lanes).enumerate() {
            let edge = self.edges.get(e.index()).ok_or(RouteError::UnknownEdge(e))?;
            if !edge.has_lane(class) {
                return Err(RouteError::MissingLane { position: i, edge: e });
            }
            if i == 0 {
                if let Some(s) = start {
                    if edge.from != s {
                        return Err(RouteError::WrongStart);
                    }
                }
            } else if self.edge(route.edges[i - 1]).to != edge.from {
                return Err(RouteError::Broken { position: i });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("route has different numbers of edges and lane choices")]
    LaneCountMismatch,
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("position {position}: edge {edge} lacks the chosen lane")]
    MissingLane { position: usize, edge: EdgeId },
    #[error("route does not start at the expected node")]
    WrongStart,
    #[error("route breaks between positions {} and {position}", position - 1)]
    Broken { position: usize },
}

/// Ordered edge sequence with a lane choice per edge.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub edges: Vec<EdgeId>,
    pub lanes: Vec<LaneClass>,
}

impl Route {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn step(&self, i: usize) -> Option<LaneRef> {
        Some(LaneRef::new(*self.edges.get(i)?, *self.lanes.get(i)?))
    }

    pub fn steps(&self) -> impl Iterator<Item = LaneRef> + '_ {
        self.edges
            .iter()
            .zip(&self.lanes)
            .map(|(&e, &c)| LaneRef::new(e, c))
    }

    pub fn push(&mut self, lane: LaneRef) {
        self.edges.push(lane.edge);
        self.lanes.push(lane.class);
    }

    /// Keeps the first `keep` steps and appends `tail`.
    pub fn splice(&self, keep: usize, tail: &Route) -> Route {
        let mut out = Route {
            edges: self.edges[..keep].to_vec(),
            lanes: self.lanes[..keep].to_vec(),
        };
        out.edges.extend_from_slice(&tail.edges);
        out.lanes.extend_from_slice(&tail.lanes);
        out
    }

    pub fn suffix(&self, from: usize) -> Route {
        Route {
            edges: self.edges[from..].to_vec(),
            lanes: self.lanes[from..].to_vec(),
        }
    }

    pub fn contains_lane(&self, lane: LaneRef) -> bool {
        self.steps().any(|s| s == lane)
    }
}

/// A value per edge-lane (travel time or flow). Lanes absent from the
/// network, or not yet set, read as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneCosts {
    per_edge: Vec<[Option<f64>; 2]>,
}

impl LaneCosts {
    pub fn empty(net: &RoadNetwork) -> Self {
        Self {
            per_edge: vec![[None, None]; net.edges().len()],
        }
    }

    /// Zero on every lane present in `net`.
    pub fn zeroed(net: &RoadNetwork) -> Self {
        let mut c = Self::empty(net);
        for lane in net.lane_refs() {
            c.set(lane, 0.0);
        }
        c
    }

    /// Free-flow time on every lane of `net`.
    pub fn free_flow(net: &RoadNetwork) -> Self {
        let mut c = Self::empty(net);
        for e in net.edges() {
            for l in e.lanes() {
                c.set(LaneRef::new(e.id, l.class), l.free_flow_time);
            }
        }
        c
    }

    pub fn get(&self, lane: LaneRef) -> Option<f64> {
        self.per_edge.get(lane.edge.index())?[lane.class.slot()]
    }

    pub fn get_mut(&mut self, lane: LaneRef) -> Option<&mut f64> {
        self.per_edge.get_mut(lane.edge.index())?[lane.class.slot()].as_mut()
    }

    pub fn set(&mut self, lane: LaneRef, value: f64) {
        self.per_edge[lane.edge.index()][lane.class.slot()] = Some(value);
    }

    /// Sum over the steps of `route`; `None` if any step is unset.
    pub fn route_cost(&self, route: &Route) -> Option<f64> {
        route.steps().map(|s| self.get(s)).sum()
    }
}

/// Depth-first enumerator of simple paths.
pub struct SimplePaths<'a> {
    net: &'a RoadNetwork,
    to: NodeId,
    excluded: &'a Exclusions,
    access: LaneAccess,
    on_path: Vec<bool>,
    // One frame per node on the current path: (node, next outgoing index).
    stack: Vec<(NodeId, usize)>,
    path: Vec<EdgeId>,
    trivial: Option<bool>,
}

impl<'a> SimplePaths<'a> {
    fn new(
        net: &'a RoadNetwork,
        from: NodeId,
        to: NodeId,
        excluded: &'a Exclusions,
        access: LaneAccess,
    ) -> Self {
        let mut on_path = vec![false; net.nodes.len()];
        let trivial = (from == to).then_some(false);
        let stack = if from == to {
            Vec::new()
        } else {
            on_path[from.index()] = true;
            vec![(from, 0)]
        };
        Self {
            net,
            to,
            excluded,
            access,
            on_path,
            stack,
            path: Vec::new(),
            trivial,
        }
    }
}

impl Iterator for SimplePaths<'_> {
    type Item = Vec<EdgeId>;

    fn next(&mut self) -> Option<Vec<EdgeId>> {
        if let Some(done) = self.trivial.as_mut() {
            if *done {
                return None;
            }
            *done = true;
            return Some(Vec::new());
        }
        while let Some(frame) = self.stack.last_mut() {
            let (node, idx) = *frame;
            let out = self.net.outgoing(node);
            if idx >= out.len() {
                self.stack.pop();
                self.on_path[node.index()] = false;
                self.path.pop();
                continue;
            }
            frame.1 += 1;
            let e = out[idx];
            if self
                .net
                .usable_lanes(e, self.access, self.excluded)
                .next()
                .is_none()
            {
                continue;
            }
            let m = self.net.edge(e).to;
            if m == self.to {
                let mut found = self.path.clone();
                found.push(e);
                return Some(found);
            }
            if !self.on_path[m.index()] {
                self.on_path[m.index()] = true;
                self.path.push(e);
                self.stack.push((m, 0));
            }
        }
        None
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scenario::{EdgeDoc, LaneDoc, NodeDoc, ScenarioDoc};

    fn node(id: u32) -> NodeDoc {
        NodeDoc {
            id,
            kind: NodeKind::Intersection,
            x: id as f64,
            y: 0.0,
        }
    }

    fn edge(id: u32, from: u32, to: u32) -> EdgeDoc {
        EdgeDoc {
            id,
            from,
            to,
            bus_stop: None,
            stop_offset: None,
        }
    }

    fn lane(edge: u32, class: LaneClass) -> LaneDoc {
        LaneDoc {
            edge,
            class,
            capacity: 0.5,
            free_flow_time: 10.0,
        }
    }

    fn doc(nodes: Vec<NodeDoc>, edges: Vec<EdgeDoc>, lanes: Vec<LaneDoc>) -> ScenarioDoc {
        ScenarioDoc {
            nodes,
            edges,
            lanes,
            ..ScenarioDoc::empty()
        }
    }

    /// 0 -> 1 -> 3 and 0 -> 2 -> 3, both lanes everywhere.
    pub(crate) fn diamond() -> RoadNetwork {
        let lanes = (0..4)
            .flat_map(|e| [lane(e, LaneClass::JointDl), lane(e, LaneClass::Gpl)])
            .collect();
        load_network(&doc(
            (0..4).map(node).collect(),
            vec![edge(0, 0, 1), edge(1, 1, 3), edge(2, 0, 2), edge(3, 2, 3)],
            lanes,
        ))
        .unwrap()
    }

    #[test]
    fn minimal_document() {
        let net = load_network(&doc(
            vec![node(0), node(1)],
            vec![edge(0, 0, 1)],
            vec![lane(0, LaneClass::Gpl)],
        ))
        .unwrap();
        assert_eq!(net.nodes().len(), 2);
        assert_eq!(net.edges().len(), 1);
        assert_eq!(net.outgoing(NodeId(0)), &[EdgeId(0)]);
    }

    #[test]
    fn dangling_endpoint() {
        let err = load_network(&doc(
            (0..5).map(node).collect(),
            vec![edge(0, 0, 1), edge(1, 1, 99)],
            vec![lane(0, LaneClass::Gpl), lane(1, LaneClass::Gpl)],
        ))
        .unwrap_err();
        assert_eq!(err, NetworkError::DanglingEdgeEndpoint { edge: 1, node: 99 });
    }

    #[test]
    fn duplicate_node_missing_lane_disconnected() {
        let err = load_network(&doc(
            vec![node(0), node(0)],
            vec![],
            vec![],
        ))
        .unwrap_err();
        assert_eq!(err, NetworkError::DuplicateNodeId(0));

        let err = load_network(&doc(vec![node(0), node(1)], vec![edge(0, 0, 1)], vec![]))
            .unwrap_err();
        assert_eq!(err, NetworkError::MissingLane(0));

        let err = load_network(&doc(
            vec![node(0), node(1), node(2)],
            vec![edge(0, 0, 1)],
            vec![lane(0, LaneClass::Gpl)],
        ))
        .unwrap_err();
        assert_eq!(err, NetworkError::DisconnectedGraph(2));
    }

    #[test]
    fn stop_rules() {
        let mut nodes = vec![node(0), node(1)];
        nodes.push(NodeDoc {
            id: 5,
            kind: NodeKind::BusStation,
            x: 0.5,
            y: 0.0,
        });
        let mut e = edge(0, 0, 1);
        e.bus_stop = Some(5);
        let err = load_network(&doc(nodes.clone(), vec![e.clone()], vec![lane(0, LaneClass::Gpl)]))
            .unwrap_err();
        assert_eq!(err, NetworkError::StopWithoutDl(0));

        let net = load_network(&doc(nodes, vec![e], vec![lane(0, LaneClass::JointDl)])).unwrap();
        let stop = net.edge(EdgeId(0)).bus_stop.unwrap();
        assert_eq!(net.label(stop.station), 5);
        assert_eq!(stop.offset, 10.0);
    }

    #[test]
    fn free_flow_must_match() {
        let mut l = lane(0, LaneClass::JointDl);
        l.free_flow_time = 11.0;
        let err = load_network(&doc(
            vec![node(0), node(1)],
            vec![edge(0, 0, 1)],
            vec![lane(0, LaneClass::Gpl), l],
        ))
        .unwrap_err();
        assert_eq!(err, NetworkError::FreeFlowMismatch(0));
    }

    #[test]
    fn adjacency_matches_edges() {
        let net = diamond();
        let mut seen = 0;
        for n in net.nodes() {
            for &e in net.outgoing(n.id) {
                assert_eq!(net.edge(e).from, n.id);
                seen += 1;
            }
        }
        assert_eq!(seen, net.edges().len());
    }

    #[test]
    fn trivial_route() {
        let net = diamond();
        let ex = Exclusions::none();
        let all: Vec<_> = net
            .feasible_routes(NodeId(2), NodeId(2), &ex, LaneAccess::Any)
            .collect();
        assert_eq!(all, vec![Vec::<EdgeId>::new()]);
    }

    // Oracle: brute-force over all edge subsets ordered as sequences.
    fn brute_paths(net: &RoadNetwork, from: NodeId, to: NodeId, ex: &Exclusions) -> BTreeSet<Vec<EdgeId>> {
        fn go(
            net: &RoadNetwork,
            at: NodeId,
            to: NodeId,
            ex: &Exclusions,
            visited: &mut Vec<NodeId>,
            path: &mut Vec<EdgeId>,
            out: &mut BTreeSet<Vec<EdgeId>>,
        ) {
            if at == to {
                out.insert(path.clone());
                return;
            }
            for e in net.edges() {
                if e.from != at || visited.contains(&e.to) {
                    continue;
                }
                if !e.lanes().any(|l| ex.permits(LaneRef::new(e.id, l.class))) {
                    continue;
                }
                visited.push(e.to);
                path.push(e.id);
                go(net, e.to, to, ex, visited, path, out);
                path.pop();
                visited.pop();
            }
        }
        let mut out = BTreeSet::new();
        go(net, from, to, ex, &mut vec![from], &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn diamond_with_exclusion() {
        let net = diamond();
        let ex = Exclusions::edges([EdgeId(1)]);
        let got: BTreeSet<_> = net
            .feasible_routes(NodeId(0), NodeId(3), &ex, LaneAccess::Any)
            .collect();
        assert_eq!(got, brute_paths(&net, NodeId(0), NodeId(3), &ex));
        assert_eq!(got, BTreeSet::from([vec![EdgeId(2), EdgeId(3)]]));
        assert!(net.route_exists(NodeId(0), NodeId(3), LaneAccess::Any, &ex));
        let both = Exclusions::edges([EdgeId(1), EdgeId(3)]);
        assert!(!net.route_exists(NodeId(0), NodeId(3), LaneAccess::Any, &both));
        assert_eq!(net.feasible_routes(NodeId(0), NodeId(3), &both, LaneAccess::Any).count(), 0);
    }

    #[test]
    fn hv_never_on_dl_only_edge() {
        let lanes = vec![
            lane(0, LaneClass::JointDl),
            lane(1, LaneClass::JointDl),
            lane(1, LaneClass::Gpl),
            lane(2, LaneClass::Gpl),
            lane(3, LaneClass::Gpl),
        ];
        let net = load_network(&doc(
            (0..4).map(node).collect(),
            vec![edge(0, 0, 1), edge(1, 1, 3), edge(2, 0, 2), edge(3, 2, 3)],
            lanes,
        ))
        .unwrap();
        let ex = Exclusions::none();
        let hv = LaneAccess::for_class(VehicleClass::Hv, true);
        for p in net.feasible_routes(NodeId(0), NodeId(3), &ex, hv) {
            assert!(!p.contains(&EdgeId(0)));
        }
        assert_eq!(net.feasible_routes(NodeId(0), NodeId(3), &ex, hv).count(), 1);
        let bus = LaneAccess::for_class(VehicleClass::Bus, true);
        assert_eq!(net.feasible_routes(NodeId(0), NodeId(3), &ex, bus).count(), 1);
    }

    #[test]
    fn route_checks() {
        let net = diamond();
        let good = Route {
            edges: vec![EdgeId(0), EdgeId(1)],
            lanes: vec![LaneClass::JointDl, LaneClass::Gpl],
        };
        assert!(net.check_route(&good, Some(NodeId(0))).is_ok());
        let broken = Route {
            edges: vec![EdgeId(0), EdgeId(3)],
            lanes: vec![LaneClass::Gpl, LaneClass::Gpl],
        };
        assert_eq!(
            net.check_route(&broken, None),
            Err(RouteError::Broken { position: 1 })
        );
    }
}
