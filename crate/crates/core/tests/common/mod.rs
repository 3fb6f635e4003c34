//! Generators and brute-force reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use laneshare_core::flowmodel::{CavSnapshot, HvEntryLog};
use laneshare_core::fleet::VehicleId;
use laneshare_core::network::{
    load_network, EdgeId, Exclusions, LaneAccess, LaneClass, LaneCosts, LaneRef, NodeId, NodeKind,
    RoadNetwork,
};
use laneshare_core::scenario::{EdgeDoc, LaneDoc, NodeDoc, ScenarioDoc};
use laneshare_core::Seconds;
use rand::Rng;

/// Weakly connected random graph with 2..=`max_nodes` nodes. Lane sets per
/// edge are drawn from {GPL}, {DL}, {GPL, DL}.
pub fn random_network<R: Rng>(rng: &mut R, max_nodes: u32) -> RoadNetwork {
    let n = rng.gen_range(2..=max_nodes);
    let mut pairs = BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        pairs.insert(if rng.gen_bool(0.5) { (i, j) } else { (j, i) });
    }
    for _ in 0..rng.gen_range(0..=2 * n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            pairs.insert((a, b));
        }
    }
    let mut edges = Vec::new();
    let mut lanes = Vec::new();
    for (id, (from, to)) in pairs.into_iter().enumerate() {
        let id = id as u32;
        edges.push(EdgeDoc {
            id,
            from,
            to,
            bus_stop: None,
            stop_offset: None,
        });
        let tau0 = rng.gen_range(1..=60) as f64;
        let classes: &[LaneClass] = match rng.gen_range(0..3) {
            0 => &[LaneClass::Gpl],
            1 => &[LaneClass::JointDl],
            _ => &[LaneClass::Gpl, LaneClass::JointDl],
        };
        for &class in classes {
            lanes.push(LaneDoc {
                edge: id,
                class,
                capacity: rng.gen_range(1..=20) as f64 / 40.0,
                free_flow_time: tau0,
            });
        }
    }
    let doc = ScenarioDoc {
        nodes: (0..n)
            .map(|id| NodeDoc {
                id,
                kind: NodeKind::Intersection,
                x: 0.0,
                y: 0.0,
            })
            .collect(),
        edges,
        lanes,
        ..ScenarioDoc::empty()
    };
    load_network(&doc).expect("generated networks are valid")
}

/// Positive costs on a quarter-second grid, so path sums are exact.
pub fn random_costs<R: Rng>(rng: &mut R, net: &RoadNetwork) -> LaneCosts {
    let mut costs = LaneCosts::empty(net);
    for lane in net.lane_refs() {
        costs.set(lane, rng.gen_range(1..=400) as f64 / 4.0);
    }
    costs
}

pub fn random_access<R: Rng>(rng: &mut R) -> LaneAccess {
    match rng.gen_range(0..3) {
        0 => LaneAccess::GplOnly,
        1 => LaneAccess::DlOnly,
        _ => LaneAccess::Any,
    }
}

/// Excludes each edge with probability 0.15 and each remaining lane with
/// probability 0.15.
pub fn random_exclusions<R: Rng>(rng: &mut R, net: &RoadNetwork) -> (Exclusions, BTreeSet<LaneRef>) {
    let mut ex = Exclusions::none();
    let mut banned = BTreeSet::new();
    for e in net.edges() {
        if rng.gen_bool(0.15) {
            ex.exclude_edge(e.id);
            for l in e.lanes() {
                banned.insert(LaneRef::new(e.id, l.class));
            }
        }
    }
    for lane in net.lane_refs() {
        if !banned.contains(&lane) && rng.gen_bool(0.15) {
            ex.exclude_lane(lane);
            banned.insert(lane);
        }
    }
    (ex, banned)
}

fn class_ok(access: LaneAccess, class: LaneClass) -> bool {
    matches!(
        (access, class),
        (LaneAccess::Any, _) | (LaneAccess::GplOnly, LaneClass::Gpl) | (LaneAccess::DlOnly, LaneClass::JointDl)
    )
}

/// Minimum over all simple node paths of the summed cheapest usable lane,
/// by depth-first enumeration. `None` when no path exists.
pub fn exhaustive_min_cost(
    net: &RoadNetwork,
    costs: &LaneCosts,
    from: NodeId,
    to: NodeId,
    access: LaneAccess,
    banned: &BTreeSet<LaneRef>,
) -> Option<f64> {
    fn dfs(
        net: &RoadNetwork,
        costs: &LaneCosts,
        at: NodeId,
        to: NodeId,
        access: LaneAccess,
        banned: &BTreeSet<LaneRef>,
        visited: &mut Vec<bool>,
        acc: f64,
        best: &mut Option<f64>,
    ) {
        if at == to {
            *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
            return;
        }
        for e in net.edges().iter().filter(|e| e.from == at) {
            if visited[e.to.index()] {
                continue;
            }
            let step = [LaneClass::JointDl, LaneClass::Gpl]
                .into_iter()
                .filter(|&c| e.has_lane(c) && class_ok(access, c))
                .map(|c| LaneRef::new(e.id, c))
                .filter(|l| !banned.contains(l))
                .filter_map(|l| costs.get(l))
                .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))));
            if let Some(c) = step {
                visited[e.to.index()] = true;
                dfs(net, costs, e.to, to, access, banned, visited, acc + c, best);
                visited[e.to.index()] = false;
            }
        }
    }
    let mut visited = vec![false; net.nodes().len()];
    visited[from.index()] = true;
    let mut best = None;
    dfs(net, costs, from, to, access, banned, &mut visited, 0.0, &mut best);
    best
}

/// Random CAV snapshots around `t_sys`. A quarter of the entries land
/// exactly on a window boundary for some half-width in 1..=60.
pub fn random_fleet<R: Rng>(rng: &mut R, net: &RoadNetwork, t_sys: Seconds) -> Vec<CavSnapshot> {
    let lanes: Vec<LaneRef> = net.lane_refs().collect();
    (0..rng.gen_range(0..40))
        .map(|i| {
            let ff = if rng.gen_bool(0.25) {
                rng.gen_range(1..=60) as f64
            } else {
                rng.gen_range(0.5..60.0)
            };
            CavSnapshot {
                id: VehicleId(i),
                entry_time: t_sys + rng.gen_range(-150..=90),
                current_free_flow: ff,
                next: rng
                    .gen_bool(0.85)
                    .then(|| lanes[rng.gen_range(0..lanes.len())]),
            }
        })
        .collect()
}

/// HV entries per GPL edge, in time order, around `t_sys`.
pub fn random_hv_log<R: Rng>(rng: &mut R, net: &RoadNetwork, t_sys: Seconds) -> (HvEntryLog, Vec<Vec<Seconds>>) {
    let mut log = HvEntryLog::new(net.edges().len());
    let mut raw = vec![Vec::new(); net.edges().len()];
    for e in net.edges().iter().filter(|e| e.has_lane(LaneClass::Gpl)) {
        let mut ts: Vec<Seconds> = (0..rng.gen_range(0..30))
            .map(|_| t_sys + rng.gen_range(-120..=0))
            .collect();
        ts.sort();
        for &t in &ts {
            log.record(e.id, t);
        }
        raw[e.id.index()] = ts;
    }
    (log, raw)
}

/// Indicator count of CAVs entering `target` inside `[t - hw, t + hw]`.
pub fn brute_cav_count(cavs: &[CavSnapshot], target: LaneRef, t: Seconds, hw: u32) -> u32 {
    let mut n = 0;
    for c in cavs {
        if c.next != Some(target) {
            continue;
        }
        let eta = c.entry_time as f64 + c.current_free_flow;
        if eta >= (t - hw as Seconds) as f64 && eta <= (t + hw as Seconds) as f64 {
            n += 1;
        }
    }
    n
}

/// HV entries in the past half `[t - hw, t]`.
pub fn brute_hv_count(entries: &[Seconds], t: Seconds, hw: u32) -> u32 {
    entries
        .iter()
        .filter(|&&e| e >= t - hw as Seconds && e <= t)
        .count() as u32
}

pub fn edge_ids(net: &RoadNetwork) -> Vec<EdgeId> {
    net.edges().iter().map(|e| e.id).collect()
}
