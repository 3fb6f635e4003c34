//! Vehicles, bus timetables and demand generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowmodel::CavSnapshot;
use crate::network::{LaneRef, NodeId, RoadNetwork, Route};
use crate::scenario::{Demand, SpawnMode};
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Hv,
    Cav,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 3] = [VehicleClass::Hv, VehicleClass::Cav, VehicleClass::Bus];

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Hv => "hv",
            VehicleClass::Cav => "cav",
            VehicleClass::Bus => "bus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FleetError {
    #[error("stop {0:?} is not on this bus's timetable")]
    UnknownStop(NodeId),
    #[error("vehicle {0:?} is not a bus")]
    NotABus(VehicleId),
}

/// A timetable entry resolved against a line's route.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledStop {
    pub node: NodeId,
    /// Position in the line's route of the edge hosting the stop; the last
    /// edge for the terminal.
    pub edge_index: usize,
    /// Seconds after departure.
    pub offset: Seconds,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timetable {
    pub stops: Vec<ScheduledStop>,
    pub departures: Vec<Seconds>,
    pub headway: Seconds,
}

impl Timetable {
    /// Stations served, excluding the terminal.
    pub fn stations(&self) -> impl Iterator<Item = &ScheduledStop> {
        self.stops.iter().filter(|s| !s.terminal)
    }

    pub fn terminal(&self) -> &ScheduledStop {
        self.stops.last().expect("timetables end at the terminal")
    }
}

/// Where a vehicle is in its trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Spawned this tick, not yet on its first edge.
    Pending,
    Active,
    Finished(Seconds),
}

/// Route plus the vehicle's position on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub route: Route,
    /// Index of the current edge.
    pub cursor: usize,
    /// Tick at which the current edge was entered.
    pub entry_time: Seconds,
    /// Tick at which the vehicle leaves the current edge.
    pub exit_time: Seconds,
    /// Realized driving time on the current edge, excluding dwell.
    pub realized: f64,
}

impl Progress {
    pub fn new(route: Route) -> Self {
        Self {
            route,
            cursor: 0,
            entry_time: 0,
            exit_time: 0,
            realized: 0.0,
        }
    }

    pub fn current(&self) -> LaneRef {
        self.route.step(self.cursor).expect("cursor within route")
    }

    pub fn next(&self) -> Option<LaneRef> {
        self.route.step(self.cursor + 1)
    }

    pub fn on_last_edge(&self) -> bool {
        self.cursor + 1 == self.route.len()
    }

    /// Edges after the current one.
    pub fn ahead(&self) -> Route {
        self.route.suffix(self.cursor + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CavState {
    /// Set while the CAV has been claimed by a reroute trigger; cleared once
    /// it passes this node.
    pub claimed_until: Option<NodeId>,
    pub reroutes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusState {
    pub line: usize,
    pub run: usize,
    pub departure: Seconds,
    /// Absolute scheduled time per timetable entry.
    pub scheduled: Vec<Seconds>,
    /// Observed arrival per timetable entry.
    pub arrivals: Vec<Option<Seconds>>,
    /// Timetable entry the bus is heading to and the tick it reaches it.
    pub pending_stop: Option<(usize, Seconds)>,
    /// Estimated arrival at the head of the current edge.
    pub estimated_next: f64,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VehicleKind {
    Hv,
    Cav(CavState),
    Bus(BusState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub spawn_time: Seconds,
    pub status: Status,
    pub progress: Progress,
    pub kind: VehicleKind,
}

impl Vehicle {
    pub fn class(&self) -> VehicleClass {
        match self.kind {
            VehicleKind::Hv => VehicleClass::Hv,
            VehicleKind::Cav(_) => VehicleClass::Cav,
            VehicleKind::Bus(_) => VehicleClass::Bus,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn bus(&self) -> Option<&BusState> {
        match &self.kind {
            VehicleKind::Bus(b) => Some(b),
            _ => None,
        }
    }

    pub fn cav(&self) -> Option<&CavState> {
        match &self.kind {
            VehicleKind::Cav(c) => Some(c),
            _ => None,
        }
    }

    /// Free-flow arrival at the head of the current edge.
    pub fn propagate_arrival(&self, net: &RoadNetwork) -> f64 {
        let tau0 = net.edge(self.progress.current().edge).free_flow_time();
        propagate_arrival(self.progress.entry_time as f64, tau0)
    }

    pub fn snapshot(&self, net: &RoadNetwork) -> CavSnapshot {
        CavSnapshot {
            id: self.id,
            entry_time: self.progress.entry_time,
            current_free_flow: net.edge(self.progress.current().edge).free_flow_time(),
            next: self.progress.next(),
        }
    }
}

/// Arrival at the next intersection under free flow.
pub fn propagate_arrival(entry_time: f64, free_flow_time: f64) -> f64 {
    assert!(free_flow_time > 0.0, "free-flow times are positive");
    entry_time + free_flow_time
}

/// Estimated arrival of a bus at the head of the edge it has just entered,
/// and its route from that node onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct BusOutlook {
    pub estimated_arrival: f64,
    pub ahead: Route,
}

pub fn bus_estimate_next(bus: &Vehicle, net: &RoadNetwork) -> Result<BusOutlook, FleetError> {
    if bus.bus().is_none() {
        return Err(FleetError::NotABus(bus.id));
    }
    Ok(BusOutlook {
        estimated_arrival: bus.propagate_arrival(net),
        ahead: bus.progress.ahead(),
    })
}

/// Actual minus scheduled arrival at `stop`, in seconds.
pub fn schedule_deviation(bus: &BusState, stops: &Timetable, stop: NodeId, actual: Seconds) -> Result<Seconds, FleetError> {
    let ix = stops
        .stops
        .iter()
        .position(|s| s.node == stop)
        .ok_or(FleetError::UnknownStop(stop))?;
    Ok(actual - bus.scheduled[ix])
}

pub fn is_on_time(deviation: Seconds, tolerance: f64) -> bool {
    (deviation as f64).abs() <= tolerance
}

/// A vehicle the simulation should create this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpawnRequest {
    pub class: VehicleClass,
    pub origin: NodeId,
    pub destination: NodeId,
}

/// Turns demand rates into spawn requests, deterministically per seed.
#[derive(Debug, Clone)]
pub struct Spawner {
    streams: Vec<Stream>,
}

#[derive(Debug, Clone)]
struct Stream {
    demand: Demand,
    mode: SpawnMode,
    rng: ChaCha8Rng,
    next_poisson: f64,
}

const FIXED_EPS: f64 = 1e-9;

impl Stream {
    fn arrivals(&mut self, t: Seconds) -> usize {
        let per_s = self.demand.rate_per_min / 60.0;
        if per_s <= 0.0 {
            return 0;
        }
        match self.mode {
            SpawnMode::FixedInterval => {
                // Vehicle k appears at ceil(k / rate).
                let cum = |t: Seconds| (t as f64 * self.demand.rate_per_min / 60.0 + FIXED_EPS).floor() as i64;
                if t == 0 {
                    1
                } else {
                    (cum(t) - cum(t - 1)) as usize
                }
            }
            SpawnMode::Poisson => {
                let mut n = 0;
                while self.next_poisson < (t + 1) as f64 {
                    if self.next_poisson >= t as f64 {
                        n += 1;
                    }
                    let u: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
                    self.next_poisson += -u.ln() / per_s;
                }
                n
            }
        }
    }
}

impl Spawner {
    pub fn new(demand: &[Demand], mode: SpawnMode, seed: u64) -> Self {
        let streams = demand
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                let next_poisson = match mode {
                    SpawnMode::FixedInterval => 0.0,
                    SpawnMode::Poisson => {
                        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        -u.ln() / (d.rate_per_min / 60.0).max(f64::MIN_POSITIVE)
                    }
                };
                Stream {
                    demand: d.clone(),
                    mode,
                    rng,
                    next_poisson,
                }
            })
            .collect();
        Self { streams }
    }

    /// Spawn requests for tick `t`, in stream order.
    pub fn spawn_demand(&mut self, t: Seconds) -> Vec<SpawnRequest> {
        let mut out = Vec::new();
        for s in &mut self.streams {
            for _ in 0..s.arrivals(t) {
                let (origin, destination) = if s.demand.od.len() == 1 {
                    s.demand.od[0]
                } else {
                    s.demand.od[s.rng.gen_range(0..s.demand.od.len())]
                };
                out.push(SpawnRequest {
                    class: s.demand.class,
                    origin,
                    destination,
                });
            }
        }
        out
    }
}
