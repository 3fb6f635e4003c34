//! Routing policies on top of a prediction-aware shortest-path search.
//!
//! * SRP: free-flow shortest path at departure, never changed.
//! * SRP without joint DL: the same, with CAVs kept off the DL.
//! * DRP: every CAV greedily re-plans at each intersection on measured
//!   travel times.
//! * Coordinated: CAVs start on the anticipated-time shortest path and are
//!   re-planned only when a bus's next DL edge is predicted to congest.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowmodel::{
    anticipated_costs, bpr_time, cav_entry_indicator, BprParams, CavSnapshot, FlowError,
    HvEntryLog, MonitorWindow, Windows,
};
use crate::fleet::{VehicleClass, VehicleId};
use crate::network::{
    EdgeId, Exclusions, LaneAccess, LaneClass, LaneCosts, LaneRef, NodeId, RoadNetwork, Route,
};
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "srp")]
    Srp,
    #[serde(rename = "drp")]
    Drp,
    #[serde(rename = "coordinated")]
    Coordinated,
    #[serde(rename = "srp-no-joint-dl")]
    SrpNoJointDl,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::Srp,
        Policy::Drp,
        Policy::Coordinated,
        Policy::SrpNoJointDl,
    ];

    pub fn joint_dl_allowed(self) -> bool {
        self != Policy::SrpNoJointDl
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Srp => "srp",
            Policy::Drp => "drp",
            Policy::Coordinated => "coordinated",
            Policy::SrpNoJointDl => "srp-no-joint-dl",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy `{0}` (expected srp, drp, coordinated or srp-no-joint-dl)")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum RouteFailure {
    #[error("no feasible path from {from:?} to {to:?}")]
    NoFeasiblePath { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerConfig {
    pub lambda: f64,
}

impl TriggerConfig {
    pub fn new(lambda: f64) -> Self {
        assert!(lambda > 0.0, "lambda must be positive");
        Self { lambda }
    }

    pub fn fires(&self, anticipated: f64, free_flow: f64) -> bool {
        anticipated >= (1.0 + self.lambda) * free_flow
    }
}

/// Ticks between a bus entering edge `k-1` and its free-flow arrival at `v_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlHorizon {
    pub start: Seconds,
    pub end: f64,
}

impl ControlHorizon {
    pub fn contains(&self, t: Seconds) -> bool {
        t >= self.start && (t as f64) <= self.end
    }

    pub fn ticks(&self) -> impl Iterator<Item = Seconds> {
        let end = self.end.floor() as Seconds;
        self.start..=end
    }
}

/// First tick of the horizon at which `anticipated(t)` reaches
/// `(1 + lambda) * free_flow`.
pub fn detect_trigger(
    horizon: ControlHorizon,
    free_flow: f64,
    cfg: &TriggerConfig,
    mut anticipated: impl FnMut(Seconds) -> f64,
) -> Option<Seconds> {
    horizon
        .ticks()
        .find(|&t| cfg.fires(anticipated(t), free_flow))
}

/// Anticipated DL time of `target` at `t_sys` from the CAV fleet alone.
pub fn anticipated_dl_time(
    net: &RoadNetwork,
    cavs: &[CavSnapshot],
    target: LaneRef,
    t_sys: Seconds,
    half_width: u32,
    p: &BprParams,
) -> Result<f64, FlowError> {
    let lane = net.lane(target).ok_or(FlowError::NotADlEdge(target.edge))?;
    let w = MonitorWindow::new(t_sys, half_width);
    let flow = crate::flowmodel::anticipated_dl_flow(cavs, &w, target);
    bpr_time(lane.free_flow_time, flow, lane.capacity, p)
}

/// CAVs whose next lane is `target` and whose propagated entry lies in `w`.
pub fn identify_reroute_set(cavs: &[CavSnapshot], target: LaneRef, w: &MonitorWindow) -> Vec<VehicleId> {
    let mut ids: Vec<VehicleId> = cavs
        .iter()
        .filter(|c| cav_entry_indicator(c, w, target) == 1)
        .map(|c| c.id)
        .collect();
    ids.sort();
    ids
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // BinaryHeap is a max-heap: invert so the cheapest, then lowest node id,
    // pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cheapest usable lane of an edge; ties go to the DL.
fn best_lane(
    net: &RoadNetwork,
    costs: &LaneCosts,
    edge: EdgeId,
    access: LaneAccess,
    excluded: &Exclusions,
) -> Option<(LaneClass, f64)> {
    let mut best: Option<(LaneClass, f64)> = None;
    for l in net.usable_lanes(edge, access, excluded) {
        let Some(c) = costs.get(LaneRef::new(edge, l.class)) else {
            continue;
        };
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((l.class, c));
        }
    }
    best
}

/// Dijkstra over anticipated lane times. Nodes are settled lowest cost
/// first, lowest id on ties; among equal-cost predecessors the lowest edge
/// id is kept.
pub fn prediction_aware_shortest_path(
    net: &RoadNetwork,
    costs: &LaneCosts,
    from: NodeId,
    to: NodeId,
    access: LaneAccess,
    excluded: &Exclusions,
) -> Result<(Route, f64), RouteFailure> {
    if from == to {
        return Ok((Route::empty(), 0.0));
    }
    let n = net.nodes().len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<(EdgeId, LaneClass)>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[from.index()] = 0.0;
    heap.push(Frontier { cost: 0.0, node: from });

    while let Some(Frontier { cost, node }) = heap.pop() {
        if settled[node.index()] || cost > dist[node.index()] {
            continue;
        }
        settled[node.index()] = true;
        if node == to {
            break;
        }
        for &e in net.outgoing(node) {
            let m = net.edge(e).to;
            if settled[m.index()] {
                continue;
            }
            let Some((class, c)) = best_lane(net, costs, e, access, excluded) else {
                continue;
            };
            let next = cost + c;
            let slot = m.index();
            let better = next < dist[slot]
                || (next == dist[slot] && pred[slot].is_some_and(|(pe, _)| e < pe));
            if better {
                if next < dist[slot] {
                    dist[slot] = next;
                    heap.push(Frontier { cost: next, node: m });
                }
                pred[slot] = Some((e, class));
            }
        }
    }

    if !dist[to.index()].is_finite() {
        return Err(RouteFailure::NoFeasiblePath { from, to });
    }
    let mut steps = Vec::new();
    let mut at = to;
    while at != from {
        let (e, class) = pred[at.index()].expect("reached nodes have predecessors");
        steps.push(LaneRef::new(e, class));
        at = net.edge(e).from;
    }
    steps.reverse();
    let mut route = Route::empty();
    for s in steps {
        route.push(s);
    }
    Ok((route, dist[to.index()]))
}

/// Everything needed to re-estimate lane times while assigning reroutes.
#[derive(Debug, Clone, Copy)]
pub struct EstimationContext<'a> {
    pub net: &'a RoadNetwork,
    pub hv_log: &'a HvEntryLog,
    pub windows: Windows,
    pub bpr: BprParams,
    pub t_sys: Seconds,
}

impl EstimationContext<'_> {
    pub fn costs(&self, cavs: &[CavSnapshot]) -> LaneCosts {
        anticipated_costs(self.net, cavs, self.hv_log, self.t_sys, self.windows, &self.bpr)
    }
}

/// A detected congestion ahead of a bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trigger {
    pub bus: VehicleId,
    /// Position of the protected edge in the bus route.
    pub edge_index: usize,
    pub time: Seconds,
    /// DL lane of the protected edge.
    pub lane: LaneRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cav: VehicleId,
    /// Route from the rerouting intersection to the CAV's destination.
    pub route: Route,
    /// No feasible alternative: the CAV keeps its previous plan.
    pub kept_original: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerouteEvent {
    pub bus: VehicleId,
    pub edge_index: usize,
    pub trigger_time: Seconds,
    pub rerouted: Vec<VehicleId>,
    pub assignments: Vec<Assignment>,
    pub excluded: LaneRef,
}

/// A CAV to be re-planned from `at` (the head of its current edge).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerouteRequest {
    pub cav: VehicleId,
    pub at: NodeId,
    pub destination: NodeId,
}

/// Assigns each requested CAV the anticipated-time shortest path to its
/// destination avoiding the protected lane. CAVs are served in order of
/// anticipated arrival at the rerouting node; each assignment updates the
/// snapshot `fleet` so later CAVs see the earlier diversions.
pub fn reoptimize_set(
    ctx: &EstimationContext<'_>,
    trigger: &Trigger,
    requests: &[RerouteRequest],
    fleet: &mut [CavSnapshot],
) -> RerouteEvent {
    let excluded = Exclusions::lane(trigger.lane);
    let position = |id: VehicleId, fleet: &[CavSnapshot]| {
        fleet
            .iter()
            .position(|c| c.id == id)
            .expect("requested CAVs are in the fleet snapshot")
    };
    let mut order: Vec<&RerouteRequest> = requests.iter().collect();
    order.sort_by(|a, b| {
        let ta = fleet[position(a.cav, fleet)].next_entry_time();
        let tb = fleet[position(b.cav, fleet)].next_entry_time();
        ta.total_cmp(&tb).then(a.cav.cmp(&b.cav))
    });

    let mut assignments = Vec::with_capacity(order.len());
    for req in order {
        let costs = ctx.costs(fleet);
        match prediction_aware_shortest_path(
            ctx.net,
            &costs,
            req.at,
            req.destination,
            LaneAccess::Any,
            &excluded,
        ) {
            Ok((route, _)) => {
                let ix = position(req.cav, fleet);
                fleet[ix].next = route.step(0);
                assignments.push(Assignment {
                    cav: req.cav,
                    route,
                    kept_original: false,
                });
            }
            Err(RouteFailure::NoFeasiblePath { .. }) => assignments.push(Assignment {
                cav: req.cav,
                route: Route::empty(),
                kept_original: true,
            }),
        }
    }
    let mut rerouted: Vec<VehicleId> = requests.iter().map(|r| r.cav).collect();
    rerouted.sort();
    RerouteEvent {
        bus: trigger.bus,
        edge_index: trigger.edge_index,
        trigger_time: trigger.time,
        rerouted,
        assignments,
        excluded: trigger.lane,
    }
}

/// Greedy re-plan at an intersection: a new route only when strictly
/// cheaper than the current remaining one under `costs`.
pub fn drp_step(
    net: &RoadNetwork,
    costs: &LaneCosts,
    at: NodeId,
    destination: NodeId,
    remaining: &Route,
) -> Option<Route> {
    let current = costs.route_cost(remaining)?;
    let (best, cost) =
        prediction_aware_shortest_path(net, costs, at, destination, LaneAccess::Any, &Exclusions::none())
            .ok()?;
    // Costs are sums of the same f64 terms in different orders.
    (cost < current - 1e-9 * current.max(1.0) && best != *remaining).then_some(best)
}

/// Free-flow shortest path for a vehicle class.
pub fn srp_route(
    net: &RoadNetwork,
    origin: NodeId,
    destination: NodeId,
    class: VehicleClass,
    joint_dl_allowed: bool,
) -> Result<Route, RouteFailure> {
    let access = LaneAccess::for_class(class, joint_dl_allowed);
    prediction_aware_shortest_path(
        net,
        &LaneCosts::free_flow(net),
        origin,
        destination,
        access,
        &Exclusions::none(),
    )
    .map(|(r, _)| r)
}
