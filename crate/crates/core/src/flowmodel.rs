//! BPR travel times and anticipated lane flows.
//!
//! Anticipated flows count CAVs whose free-flow propagated arrival at the
//! head of their current edge falls inside a symmetric monitoring window and
//! whose next planned lane is the target. GPL estimates additionally
//! extrapolate the HV entries observed by the lane's start sensor.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::VehicleId;
use crate::network::{EdgeId, LaneClass, LaneCosts, LaneRef, RoadNetwork};
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BprParams {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            beta: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("capacity must be positive (got {0})")]
    NonPositiveCapacity(f64),
    #[error("{0} has no general-purpose lane")]
    NotAGplEdge(EdgeId),
    #[error("{0} has no dedicated lane")]
    NotADlEdge(EdgeId),
}

/// `tau0 * (1 + alpha * (flow / capacity)^beta)`.
pub fn bpr_time(tau0: f64, flow: f64, capacity: f64, p: &BprParams) -> Result<f64, FlowError> {
    if !(capacity > 0.0) {
        return Err(FlowError::NonPositiveCapacity(capacity));
    }
    debug_assert!(tau0 > 0.0 && flow >= 0.0);
    if flow == 0.0 {
        return Ok(tau0);
    }
    Ok(tau0 * (1.0 + p.alpha * (flow / capacity).powf(p.beta)))
}

/// Closed interval `[center - half_width, center + half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorWindow {
    pub center: Seconds,
    pub half_width: u32,
}

impl MonitorWindow {
    pub fn new(center: Seconds, half_width: u32) -> Self {
        assert!(half_width >= 1, "monitoring window half-width must be >= 1");
        Self { center, half_width }
    }

    /// Seconds covered by the window, `2 * half_width`.
    pub fn span(&self) -> f64 {
        2.0 * self.half_width as f64
    }
}

pub fn in_window(t: f64, w: &MonitorWindow) -> bool {
    (t - w.center as f64).abs() <= w.half_width as f64
}

/// What the estimators need to know about one CAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavSnapshot {
    pub id: VehicleId,
    /// Time the CAV entered its current edge.
    pub entry_time: Seconds,
    /// Free-flow time of the current edge.
    pub current_free_flow: f64,
    /// Next planned lane, `None` on the route's last edge.
    pub next: Option<LaneRef>,
}

impl CavSnapshot {
    /// Propagated arrival at the head of the current edge.
    pub fn next_entry_time(&self) -> f64 {
        self.entry_time as f64 + self.current_free_flow
    }
}

pub fn cav_entry_indicator(cav: &CavSnapshot, w: &MonitorWindow, target: LaneRef) -> u32 {
    (cav.next == Some(target) && in_window(cav.next_entry_time(), w)) as u32
}

pub fn anticipated_dl_flow(cavs: &[CavSnapshot], w: &MonitorWindow, target: LaneRef) -> f64 {
    let count: u32 = cavs.iter().map(|c| cav_entry_indicator(c, w, target)).sum();
    count as f64 / w.span()
}

/// HV entry timestamps seen by each GPL start sensor.
#[derive(Debug, Clone, Default)]
pub struct HvEntryLog {
    per_edge: Vec<VecDeque<Seconds>>,
}

impl HvEntryLog {
    pub fn new(edges: usize) -> Self {
        Self {
            per_edge: vec![VecDeque::new(); edges],
        }
    }

    pub fn record(&mut self, edge: EdgeId, t: Seconds) {
        let buf = &mut self.per_edge[edge.index()];
        assert!(
            buf.back().is_none_or(|&last| last <= t),
            "HV entries on {edge} must be logged in time order"
        );
        buf.push_back(t);
    }

    /// Entries with `from <= t <= to`.
    pub fn count_between(&self, edge: EdgeId, from: Seconds, to: Seconds) -> usize {
        self.per_edge[edge.index()]
            .iter()
            .rev()
            .skip_while(|&&t| t > to)
            .take_while(|&&t| t >= from)
            .count()
    }

    pub fn entries(&self, edge: EdgeId) -> impl Iterator<Item = Seconds> + '_ {
        self.per_edge[edge.index()].iter().copied()
    }

    /// Drops entries older than `before`.
    pub fn prune(&mut self, before: Seconds) {
        for buf in &mut self.per_edge {
            while buf.front().is_some_and(|&t| t < before) {
                buf.pop_front();
            }
        }
    }

    /// Expected HV entries over the whole window: twice the entries seen in
    /// its past half.
    pub fn increase(&self, edge: EdgeId, w: &MonitorWindow) -> f64 {
        let n = self.count_between(edge, w.center - w.half_width as Seconds, w.center);
        2.0 * n as f64
    }
}

pub fn anticipated_gpl_flow(
    net: &RoadNetwork,
    cavs: &[CavSnapshot],
    hv_log: &HvEntryLog,
    w: &MonitorWindow,
    target: LaneRef,
) -> Result<f64, FlowError> {
    if target.class != LaneClass::Gpl || !net.edge(target.edge).has_lane(LaneClass::Gpl) {
        return Err(FlowError::NotAGplEdge(target.edge));
    }
    let cav: u32 = cavs.iter().map(|c| cav_entry_indicator(c, w, target)).sum();
    Ok((cav as f64 + hv_log.increase(target.edge, w)) / w.span())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEstimate {
    pub lane: LaneRef,
    pub anticipated_flow: f64,
    pub anticipated_time: f64,
    pub computed_at: Seconds,
}

pub fn anticipated_edge_time(
    net: &RoadNetwork,
    lane: LaneRef,
    flow: f64,
    p: &BprParams,
    at: Seconds,
) -> Result<FlowEstimate, FlowError> {
    let l = net.lane(lane).ok_or(match lane.class {
        LaneClass::Gpl => FlowError::NotAGplEdge(lane.edge),
        LaneClass::JointDl => FlowError::NotADlEdge(lane.edge),
    })?;
    let time = bpr_time(l.free_flow_time, flow, l.capacity, p)?;
    Ok(FlowEstimate {
        lane,
        anticipated_flow: flow,
        anticipated_time: time,
        computed_at: at,
    })
}

/// Window half-widths for the two lane classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Windows {
    pub dl: u32,
    pub gpl: u32,
}

impl Windows {
    pub fn for_class(&self, class: LaneClass) -> u32 {
        match class {
            LaneClass::JointDl => self.dl,
            LaneClass::Gpl => self.gpl,
        }
    }
}

/// Anticipated flow of every lane at `t_sys`, in one pass over the fleet.
/// Agrees exactly with [`anticipated_dl_flow`] / [`anticipated_gpl_flow`].
pub fn anticipated_flows(
    net: &RoadNetwork,
    cavs: &[CavSnapshot],
    hv_log: &HvEntryLog,
    t_sys: Seconds,
    windows: Windows,
) -> LaneCosts {
    let mut counts = LaneCosts::zeroed(net);
    for c in cavs {
        let Some(next) = c.next else { continue };
        let w = MonitorWindow::new(t_sys, windows.for_class(next.class));
        if in_window(c.next_entry_time(), &w) {
            *counts.get_mut(next).expect("planned lanes exist") += 1.0;
        }
    }
    for lane in net.lane_refs() {
        let w = MonitorWindow::new(t_sys, windows.for_class(lane.class));
        let v = counts.get_mut(lane).expect("lane exists");
        if lane.class == LaneClass::Gpl {
            *v += hv_log.increase(lane.edge, &w);
        }
        *v /= w.span();
    }
    counts
}

/// Anticipated BPR time of every lane at `t_sys`.
pub fn anticipated_costs(
    net: &RoadNetwork,
    cavs: &[CavSnapshot],
    hv_log: &HvEntryLog,
    t_sys: Seconds,
    windows: Windows,
    p: &BprParams,
) -> LaneCosts {
    flows_to_times(net, &anticipated_flows(net, cavs, hv_log, t_sys, windows), p)
}

pub fn flows_to_times(net: &RoadNetwork, flows: &LaneCosts, p: &BprParams) -> LaneCosts {
    let mut out = LaneCosts::empty(net);
    for lane in net.lane_refs() {
        let l = net.lane(lane).expect("lane exists");
        let f = flows.get(lane).unwrap_or(0.0);
        let t = bpr_time(l.free_flow_time, f, l.capacity, p).expect("validated capacity");
        out.set(lane, t);
    }
    out
}
