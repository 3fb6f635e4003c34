//! Scenario documents (TOML) and their validated form.
//!
//! See `docs/scenario-format.md` for the field reference.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowmodel::BprParams;
use crate::fleet::{ScheduledStop, Timetable, VehicleClass};
use crate::network::{
    load_network, network_diagnostics, EdgeId, LaneClass, NetworkError, NodeId, NodeKind,
    RoadNetwork, Route,
};

pub const FORMAT_VERSION: u32 = 1;

const VANNESS: &str = include_str!("../../../scenarios/vanness.toml");

/// Names accepted by [`bundled`].
pub const BUNDLED: &[&str] = &["vanness"];

pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "vanness" => Some(VANNESS),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub params: Option<ParamsDoc>,
    #[serde(default)]
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub edges: Vec<EdgeDoc>,
    #[serde(default)]
    pub lanes: Vec<LaneDoc>,
    #[serde(default)]
    pub bus_lines: Vec<BusLineDoc>,
    #[serde(default)]
    pub demand: Vec<DemandDoc>,
}

impl ScenarioDoc {
    /// A document with no content, useful as a base for struct-update syntax.
    pub fn empty() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            name: String::new(),
            params: None,
            nodes: Vec::new(),
            edges: Vec::new(),
            lanes: Vec::new(),
            bus_lines: Vec::new(),
            demand: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario documents always serialize")
    }

    /// Reads a file, or a bundled scenario when `source` names one.
    pub fn load(source: &str) -> Result<Self, ScenarioError> {
        if let Some(text) = bundled(source) {
            return Self::parse(text);
        }
        let text = std::fs::read_to_string(Path::new(source))
            .map_err(|e| ScenarioError::Io(format!("{source}: {e}")))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: u32,
    pub kind: NodeKind,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus_stop: Option<u32>,
    /// Free-flow seconds from the edge start to the stop; defaults to the
    /// edge end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneDoc {
    pub edge: u32,
    pub class: LaneClass,
    pub capacity: f64,
    pub free_flow_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopTimeDoc {
    pub stop: u32,
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusLineDoc {
    pub id: String,
    /// Node labels of the intersections the line passes, origin first.
    pub route: Vec<u32>,
    /// Scheduled offsets from departure; the final entry is the terminal.
    pub timetable: Vec<StopTimeDoc>,
    pub first_departure: i64,
    pub headway: i64,
    pub runs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandClass {
    Cav,
    Hv,
}

impl DemandClass {
    pub fn vehicle_class(self) -> VehicleClass {
        match self {
            DemandClass::Cav => VehicleClass::Cav,
            DemandClass::Hv => VehicleClass::Hv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandDoc {
    pub class: DemandClass,
    pub rate_per_min: f64,
    /// Candidate origin-destination pairs, drawn uniformly per vehicle.
    pub od: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpawnMode {
    #[default]
    FixedInterval,
    Poisson,
}

fn default_alpha() -> f64 {
    0.15
}
fn default_beta() -> f64 {
    4.0
}
fn default_dl_window() -> u32 {
    30
}
fn default_gpl_window() -> u32 {
    60
}
fn default_lambda() -> f64 {
    0.1
}
fn default_horizon() -> u32 {
    3600
}
fn default_tolerance() -> f64 {
    60.0
}
fn default_dwell() -> f64 {
    60.0
}
fn default_drp_window() -> u32 {
    60
}
fn default_drain() -> u32 {
    1800
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_dl_window")]
    pub delta_t_dl: u32,
    #[serde(default = "default_gpl_window")]
    pub delta_t_gpl: u32,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_tolerance")]
    pub on_time_tolerance: f64,
    #[serde(default = "default_dwell")]
    pub dwell: f64,
    /// Monitoring window of the dynamic-route-planning baseline.
    #[serde(default = "default_drp_window")]
    pub drp_window: u32,
    /// Weight of the adjacent lane's congestion term in realized traversal
    /// times. A number applies to both lanes; a table `{ on_gpl, on_dl }`
    /// sets each direction. 0 makes lanes independent.
    #[serde(default)]
    pub lane_interaction: InteractionDoc,
    /// Trailing windows over which entry sensors measure the flow that sets
    /// realized traversal times; default to `delta_t_dl` / `delta_t_gpl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_window_dl: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_window_gpl: Option<u32>,
    #[serde(default)]
    pub spawn_mode: SpawnMode,
    /// Extra seconds after the horizon allowed for scheduled buses to finish.
    #[serde(default = "default_drain")]
    pub drain_limit: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InteractionDoc {
    Both(f64),
    Split { on_gpl: f64, on_dl: f64 },
}

impl Default for InteractionDoc {
    fn default() -> Self {
        InteractionDoc::Both(0.0)
    }
}

impl InteractionDoc {
    fn resolve(self) -> LaneInteraction {
        match self {
            InteractionDoc::Both(g) => LaneInteraction { on_gpl: g, on_dl: g },
            InteractionDoc::Split { on_gpl, on_dl } => LaneInteraction { on_gpl, on_dl },
        }
    }
}

/// How much the other lane's congestion adds to a lane's traversal time:
/// `on_gpl` weighs the DL term for GPL vehicles, `on_dl` the GPL term for
/// DL vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LaneInteraction {
    pub on_gpl: f64,
    pub on_dl: f64,
}

impl LaneInteraction {
    pub fn weight_on(&self, class: LaneClass) -> f64 {
        match class {
            LaneClass::Gpl => self.on_gpl,
            LaneClass::JointDl => self.on_dl,
        }
    }
}

impl Default for ParamsDoc {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            delta_t_dl: default_dl_window(),
            delta_t_gpl: default_gpl_window(),
            lambda: default_lambda(),
            horizon: default_horizon(),
            on_time_tolerance: default_tolerance(),
            dwell: default_dwell(),
            drp_window: default_drp_window(),
            lane_interaction: InteractionDoc::Both(0.0),
            measure_window_dl: None,
            measure_window_gpl: None,
            spawn_mode: SpawnMode::FixedInterval,
            drain_limit: default_drain(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("missing `{0}` section")]
    MissingSection(&'static str),
    #[error("params: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("bus line {line}: node {node} is unknown or not an intersection")]
    BadRouteNode { line: String, node: u32 },
    #[error("bus line {line}: no dl edge from {from} to {to}")]
    NoBusEdge { line: String, from: u32, to: u32 },
    #[error("bus line {line}: stop {stop} is not served by the route")]
    UnknownStop { line: String, stop: u32 },
    #[error("bus line {line}: timetable offsets must strictly increase (stop {stop})")]
    NonIncreasingOffset { line: String, stop: u32 },
    #[error("bus line {line}: timetable must end at the route terminal")]
    TimetableEnd { line: String },
    #[error("bus line {line}: headway and run count must be positive")]
    BadHeadway { line: String },
    #[error("demand {index}: {reason}")]
    BadDemand { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub bpr: BprParams,
    pub delta_t_dl: u32,
    pub delta_t_gpl: u32,
    pub lambda: f64,
    pub horizon: u32,
    pub on_time_tolerance: f64,
    pub dwell: f64,
    pub drp_window: u32,
    pub lane_interaction: LaneInteraction,
    pub measure_window_dl: u32,
    pub measure_window_gpl: u32,
    pub spawn_mode: SpawnMode,
    pub drain_limit: u32,
}

impl Params {
    fn from_doc(p: &ParamsDoc) -> Result<Self, ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidParam(m.to_string()));
        if !(p.alpha.is_finite() && p.alpha >= 0.0) {
            return bad("alpha must be finite and >= 0");
        }
        if !(p.beta.is_finite() && p.beta >= 1.0) {
            return bad("beta must be finite and >= 1");
        }
        let measure_dl = p.measure_window_dl.unwrap_or(p.delta_t_dl);
        let measure_gpl = p.measure_window_gpl.unwrap_or(p.delta_t_gpl);
        if p.delta_t_dl == 0 || p.delta_t_gpl == 0 || p.drp_window == 0 || measure_dl == 0 || measure_gpl == 0 {
            return bad("monitoring windows must be positive integers");
        }
        if !(p.lambda.is_finite() && p.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if p.horizon == 0 {
            return bad("horizon must be positive");
        }
        let lane_interaction = p.lane_interaction.resolve();
        if !(p.on_time_tolerance >= 0.0
            && p.dwell >= 0.0
            && lane_interaction.on_gpl >= 0.0
            && lane_interaction.on_dl >= 0.0)
        {
            return bad("tolerance, dwell and lane_interaction must be >= 0");
        }
        Ok(Self {
            bpr: BprParams {
                alpha: p.alpha,
                beta: p.beta,
            },
            delta_t_dl: p.delta_t_dl,
            delta_t_gpl: p.delta_t_gpl,
            lambda: p.lambda,
            horizon: p.horizon,
            on_time_tolerance: p.on_time_tolerance,
            dwell: p.dwell,
            drp_window: p.drp_window,
            lane_interaction,
            measure_window_dl: measure_dl,
            measure_window_gpl: measure_gpl,
            spawn_mode: p.spawn_mode,
            drain_limit: p.drain_limit,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusLine {
    pub id: String,
    pub route: Route,
    pub timetable: Timetable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub class: VehicleClass,
    pub rate_per_min: f64,
    pub od: Vec<(NodeId, NodeId)>,
}

/// A validated, ready-to-simulate scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network: RoadNetwork,
    pub lines: Vec<BusLine>,
    pub demand: Vec<Demand>,
    pub params: Params,
}

impl Scenario {
    pub fn from_doc(doc: &ScenarioDoc) -> Result<Self, ScenarioError> {
        match Self::build(doc) {
            Ok(s) => Ok(s),
            Err(mut errs) => Err(errs.remove(0)),
        }
    }

    pub fn load(source: &str) -> Result<Self, ScenarioError> {
        Self::from_doc(&ScenarioDoc::load(source)?)
    }

    /// Every problem found in `doc`; empty when the scenario is clean.
    pub fn diagnostics(doc: &ScenarioDoc) -> Vec<ScenarioError> {
        Self::build(doc).err().unwrap_or_default()
    }

    fn build(doc: &ScenarioDoc) -> Result<Self, Vec<ScenarioError>> {
        let mut errs = Vec::new();
        if doc.format_version != FORMAT_VERSION {
            return Err(vec![ScenarioError::UnsupportedVersion(doc.format_version)]);
        }
        let params = match &doc.params {
            None => {
                errs.push(ScenarioError::MissingSection("params"));
                None
            }
            Some(p) => Params::from_doc(p).map_err(|e| errs.push(e)).ok(),
        };
        let network = match load_network(doc) {
            Ok(n) => n,
            Err(_) => {
                errs.extend(network_diagnostics(doc).into_iter().map(ScenarioError::from));
                return Err(errs);
            }
        };
        let mut lines = Vec::new();
        for l in &doc.bus_lines {
            match resolve_line(&network, l) {
                Ok(line) => lines.push(line),
                Err(e) => errs.push(e),
            }
        }
        let mut demand = Vec::new();
        for (index, d) in doc.demand.iter().enumerate() {
            match resolve_demand(&network, index, d) {
                Ok(x) => demand.push(x),
                Err(e) => errs.push(e),
            }
        }
        match (errs.is_empty(), params) {
            (true, Some(params)) => Ok(Scenario {
                name: doc.name.clone(),
                network,
                lines,
                demand,
                params,
            }),
            _ => Err(errs),
        }
    }
}

fn resolve_line(net: &RoadNetwork, l: &BusLineDoc) -> Result<BusLine, ScenarioError> {
    let line = l.id.clone();
    if l.headway <= 0 || l.runs == 0 {
        return Err(ScenarioError::BadHeadway { line });
    }
    let mut nodes = Vec::with_capacity(l.route.len());
    for &label in &l.route {
        match net.node_by_label(label) {
            Some(id) if net.node(id).kind == NodeKind::Intersection => nodes.push(id),
            _ => return Err(ScenarioError::BadRouteNode { line, node: label }),
        }
    }
    if nodes.len() < 2 {
        return Err(ScenarioError::TimetableEnd { line });
    }
    let mut route = Route::empty();
    for pair in nodes.windows(2) {
        let edge = net
            .outgoing(pair[0])
            .iter()
            .copied()
            .filter(|&e| net.edge(e).to == pair[1] && net.edge(e).has_lane(LaneClass::JointDl))
            .min()
            .ok_or_else(|| ScenarioError::NoBusEdge {
                line: line.clone(),
                from: net.label(pair[0]),
                to: net.label(pair[1]),
            })?;
        route.push(crate::network::LaneRef::new(edge, LaneClass::JointDl));
    }

    let terminal = *nodes.last().expect("route has nodes");
    let mut stops = Vec::with_capacity(l.timetable.len());
    let mut last_offset = None;
    let mut last_position = None;
    for (i, entry) in l.timetable.iter().enumerate() {
        let is_last = i + 1 == l.timetable.len();
        let node = net.node_by_label(entry.stop);
        let position = match node {
            Some(n) if is_last && n == terminal => Some((route.len() - 1, true)),
            Some(n) => stop_edge(net, &route.edges, n).map(|ix| (ix, false)),
            None => None,
        };
        let Some((edge_index, terminal_entry)) = position else {
            return Err(if is_last && node.is_some() {
                ScenarioError::TimetableEnd { line }
            } else {
                ScenarioError::UnknownStop {
                    line,
                    stop: entry.stop,
                }
            });
        };
        if last_offset.is_some_and(|o| entry.offset <= o)
            || last_position.is_some_and(|p| edge_index < p)
        {
            return Err(ScenarioError::NonIncreasingOffset {
                line,
                stop: entry.stop,
            });
        }
        last_offset = Some(entry.offset);
        last_position = Some(edge_index);
        stops.push(ScheduledStop {
            node: node.expect("resolved above"),
            edge_index,
            offset: entry.offset,
            terminal: terminal_entry,
        });
    }
    if stops.last().map(|s| s.terminal) != Some(true) {
        return Err(ScenarioError::TimetableEnd { line });
    }
    let departures = (0..l.runs as i64)
        .map(|r| l.first_departure + r * l.headway)
        .collect();
    Ok(BusLine {
        id: l.id.clone(),
        route,
        timetable: Timetable {
            stops,
            departures,
            headway: l.headway,
        },
    })
}

fn stop_edge(net: &RoadNetwork, route: &[EdgeId], station: NodeId) -> Option<usize> {
    route
        .iter()
        .position(|&e| net.edge(e).bus_stop.map(|s| s.station) == Some(station))
}

fn resolve_demand(net: &RoadNetwork, index: usize, d: &DemandDoc) -> Result<Demand, ScenarioError> {
    let bad = |reason: String| ScenarioError::BadDemand { index, reason };
    if !(d.rate_per_min.is_finite() && d.rate_per_min >= 0.0) {
        return Err(bad("rate_per_min must be finite and >= 0".into()));
    }
    if d.od.is_empty() {
        return Err(bad("at least one od pair is required".into()));
    }
    let mut od = Vec::with_capacity(d.od.len());
    for &[o, t] in &d.od {
        let (Some(o), Some(t)) = (net.node_by_label(o), net.node_by_label(t)) else {
            return Err(bad(format!("od ({o}, {t}) references an unknown node")));
        };
        if net.node(o).kind != NodeKind::Intersection || net.node(t).kind != NodeKind::Intersection
        {
            return Err(bad("od endpoints must be intersections".into()));
        }
        od.push((o, t));
    }
    Ok(Demand {
        class: d.class.vehicle_class(),
        rate_per_min: d.rate_per_min,
        od,
    })
}
