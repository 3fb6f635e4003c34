//! Deterministic mesoscopic simulation.
//!
//! Each 1 s tick runs, in order: spawn, sensor update, policy evaluation
//! (bus triggers or greedy re-planning), reroute commit, movement. A vehicle
//! entering a lane has its traversal time fixed from the flow measured at the
//! lane's entry sensor over the trailing monitoring window.

use std::collections::{BTreeSet, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{
    BusState, CavState, Progress, SpawnRequest, Spawner, Status, Vehicle, VehicleClass,
    VehicleId, VehicleKind,
};
use crate::flowmodel::{
    anticipated_costs, anticipated_dl_flow, bpr_time, BprParams, CavSnapshot, HvEntryLog,
    MonitorWindow, Windows,
};
use crate::network::{LaneAccess, LaneClass, LaneCosts, LaneRef, NodeId, RoadNetwork, Route};
use crate::router::{
    drp_step, identify_reroute_set, prediction_aware_shortest_path, reoptimize_set, srp_route,
    EstimationContext, Policy, RerouteRequest, RouteFailure, Trigger, TriggerConfig,
};
use crate::scenario::Scenario;
use crate::Seconds;

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub t: Seconds,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        scenario: String,
        policy: Policy,
        seed: u64,
        horizon: Seconds,
        drain_limit: Seconds,
        windows: [u32; 2],
        lambda: f64,
    },
    Spawn {
        vehicle: VehicleId,
        class: VehicleClass,
        origin: NodeId,
        destination: NodeId,
        /// Free-flow trip time used as the delay reference.
        free_flow: f64,
        route: Route,
    },
    EdgeEnter {
        vehicle: VehicleId,
        lane: LaneRef,
        /// Measured entry flow on the lane, veh/s.
        flow: f64,
        realized: f64,
        exit_at: Seconds,
    },
    EdgeExit {
        vehicle: VehicleId,
        lane: LaneRef,
    },
    StopArrival {
        vehicle: VehicleId,
        stop: NodeId,
        /// Position of the stop in the timetable.
        index: usize,
        terminal: bool,
        scheduled: Seconds,
        deviation: Seconds,
    },
    Dwell {
        vehicle: VehicleId,
        stop: NodeId,
        duration: Seconds,
    },
    Trigger {
        bus: VehicleId,
        edge_index: usize,
        lane: LaneRef,
        anticipated: f64,
        free_flow: f64,
        window: [Seconds; 2],
    },
    Reroute {
        bus: VehicleId,
        edge_index: usize,
        at: NodeId,
        excluded: LaneRef,
        window: [Seconds; 2],
        rerouted: Vec<VehicleId>,
        assignments: Vec<crate::router::Assignment>,
        /// Qualifying CAVs already claimed by another trigger.
        skipped_claimed: Vec<VehicleId>,
    },
    Replan {
        vehicle: VehicleId,
        at: NodeId,
        route: Route,
    },
    TripComplete {
        vehicle: VehicleId,
        class: VehicleClass,
        travel_time: Seconds,
    },
    RunEnd {
        spawned: usize,
        completed: usize,
        in_network: usize,
    },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no route for {class:?} from {origin:?} to {destination:?}")]
    Unroutable {
        class: VehicleClass,
        origin: NodeId,
        destination: NodeId,
    },
    #[error("invariant violated at t={t}: {what}")]
    Invariant { t: Seconds, what: String },
}

/// Entry timestamps of one lane, kept for the longest window in use.
#[derive(Debug, Clone, Default)]
struct Sensor {
    entries: VecDeque<Seconds>,
    /// (exit tick, driving time) of vehicles that left the lane.
    exits: VecDeque<(Seconds, f64)>,
}

impl Sensor {
    fn count_since(&self, from: Seconds) -> usize {
        self.entries.iter().rev().take_while(|&&t| t >= from).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct Fired {
    bus: VehicleId,
    edge_index: usize,
}

pub struct World<'a> {
    sc: &'a Scenario,
    policy: Policy,
    t: Seconds,
    vehicles: Vec<Vehicle>,
    active: Vec<usize>,
    pending: Vec<usize>,
    spawner: Spawner,
    departures: VecDeque<(Seconds, usize, usize)>,
    sensors: Vec<[Sensor; 2]>,
    hv_log: HvEntryLog,
    fired: BTreeSet<(VehicleId, usize)>,
    trace: Vec<Record>,
    seq: u64,
    completed: usize,
    buses_left: usize,
}

pub struct RunOutput {
    pub trace: Vec<Record>,
    pub end: Seconds,
}

impl<'a> World<'a> {
    pub fn new(sc: &'a Scenario, policy: Policy, seed: u64) -> Self {
        let net = &sc.network;
        let mut departures: Vec<(Seconds, usize, usize)> = sc
            .lines
            .iter()
            .enumerate()
            .flat_map(|(l, line)| {
                line.timetable
                    .departures
                    .iter()
                    .enumerate()
                    .map(move |(r, &d)| (d, l, r))
            })
            // Runs scheduled after the horizon are not operated.
            .filter(|&(d, _, _)| d <= sc.params.horizon as Seconds)
            .collect();
        departures.sort();
        let buses_left = departures.len();
        let mut w = Self {
            sc,
            policy,
            t: 0,
            vehicles: Vec::new(),
            active: Vec::new(),
            pending: Vec::new(),
            spawner: Spawner::new(&sc.demand, sc.params.spawn_mode, seed),
            departures: departures.into(),
            sensors: vec![Default::default(); net.edges().len()],
            hv_log: HvEntryLog::new(net.edges().len()),
            fired: BTreeSet::new(),
            trace: Vec::new(),
            seq: 0,
            completed: 0,
            buses_left,
        };
        let p = &sc.params;
        w.emit(Event::RunStart {
            scenario: sc.name.clone(),
            policy,
            seed,
            horizon: p.horizon as Seconds,
            drain_limit: p.drain_limit as Seconds,
            windows: [p.delta_t_dl, p.delta_t_gpl],
            lambda: p.lambda,
        });
        w
    }

    pub fn time(&self) -> Seconds {
        self.t
    }

    pub fn trace(&self) -> &[Record] {
        &self.trace
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn in_network(&self) -> usize {
        self.active.len() + self.pending.len()
    }

    fn net(&self) -> &'a RoadNetwork {
        &self.sc.network
    }

    fn windows(&self) -> Windows {
        Windows {
            dl: self.sc.params.delta_t_dl,
            gpl: self.sc.params.delta_t_gpl,
        }
    }

    fn measure_window(&self, class: LaneClass) -> u32 {
        match class {
            LaneClass::JointDl => self.sc.params.measure_window_dl,
            LaneClass::Gpl => self.sc.params.measure_window_gpl,
        }
    }

    fn emit(&mut self, event: Event) {
        self.trace.push(Record {
            seq: self.seq,
            t: self.t,
            event,
        });
        self.seq += 1;
    }

    /// Whether the run is over: past the horizon with every scheduled bus
    /// finished, or out of drain time.
    pub fn done(&self) -> bool {
        let p = &self.sc.params;
        let horizon = p.horizon as Seconds;
        self.t > horizon && (self.buses_left == 0 || self.t > horizon + p.drain_limit as Seconds)
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.spawn_phase()?;
        self.sensor_phase();
        match self.policy {
            Policy::Coordinated => self.trigger_phase(),
            Policy::Drp => self.drp_phase(),
            Policy::Srp | Policy::SrpNoJointDl => {}
        }
        self.movement_phase()?;
        self.t += 1;
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while !self.done() {
            self.step()?;
        }
        let in_network = self.in_network();
        let spawned = self.vehicles.len();
        let completed = self.completed;
        self.emit(Event::RunEnd {
            spawned,
            completed,
            in_network,
        });
        Ok(RunOutput {
            end: self.t,
            trace: self.trace,
        })
    }

    fn spawn_phase(&mut self) -> Result<(), SimError> {
        for req in self.spawner.spawn_demand(self.t) {
            self.spawn(req)?;
        }
        while self.departures.front().is_some_and(|&(d, _, _)| d <= self.t) {
            let (_, line, run) = self.departures.pop_front().expect("checked");
            self.spawn_bus(line, run);
        }
        Ok(())
    }

    fn initial_route(&self, req: &SpawnRequest) -> Result<Route, RouteFailure> {
        let net = self.net();
        match (req.class, self.policy) {
            (VehicleClass::Cav, Policy::Coordinated) => {
                let costs = self.anticipated_costs();
                prediction_aware_shortest_path(
                    net,
                    &costs,
                    req.origin,
                    req.destination,
                    LaneAccess::Any,
                    &Default::default(),
                )
                .map(|(r, _)| r)
            }
            (VehicleClass::Cav, Policy::Drp) => {
                let costs = self.measured_costs();
                prediction_aware_shortest_path(
                    net,
                    &costs,
                    req.origin,
                    req.destination,
                    LaneAccess::Any,
                    &Default::default(),
                )
                .map(|(r, _)| r)
            }
            (class, policy) => srp_route(net, req.origin, req.destination, class, policy.joint_dl_allowed()),
        }
    }

    fn spawn(&mut self, req: SpawnRequest) -> Result<(), SimError> {
        let route = self.initial_route(&req).map_err(|_| SimError::Unroutable {
            class: req.class,
            origin: req.origin,
            destination: req.destination,
        })?;
        let reference = srp_route(
            self.net(),
            req.origin,
            req.destination,
            req.class,
            self.policy.joint_dl_allowed(),
        )
        .map(|r| self.net().route_free_flow_time(&r))
        .unwrap_or_else(|_| self.net().route_free_flow_time(&route));
        let kind = match req.class {
            VehicleClass::Hv => VehicleKind::Hv,
            VehicleClass::Cav => VehicleKind::Cav(CavState::default()),
            VehicleClass::Bus => unreachable!("buses follow the timetable"),
        };
        self.add_vehicle(req.class, req.origin, req.destination, route, kind, reference);
        Ok(())
    }

    fn spawn_bus(&mut self, line_ix: usize, run: usize) {
        let line = &self.sc.lines[line_ix];
        let net = self.net();
        let departure = line.timetable.departures[run];
        let route = line.route.clone();
        let origin = net.edge(route.edges[0]).from;
        let destination = net.edge(*route.edges.last().expect("lines have edges")).to;
        let stations = line.timetable.stations().count() as f64;
        let reference = net.route_free_flow_time(&route) + stations * self.sc.params.dwell;
        let state = BusState {
            line: line_ix,
            run,
            departure,
            scheduled: line.timetable.stops.iter().map(|s| departure + s.offset).collect(),
            arrivals: vec![None; line.timetable.stops.len()],
            pending_stop: None,
            estimated_next: 0.0,
            dwell: self.sc.params.dwell,
        };
        self.add_vehicle(
            VehicleClass::Bus,
            origin,
            destination,
            route,
            VehicleKind::Bus(state),
            reference,
        );
    }

    fn add_vehicle(
        &mut self,
        class: VehicleClass,
        origin: NodeId,
        destination: NodeId,
        route: Route,
        kind: VehicleKind,
        free_flow: f64,
    ) {
        let id = VehicleId(self.vehicles.len() as u32);
        let mut progress = Progress::new(route.clone());
        progress.entry_time = self.t;
        self.vehicles.push(Vehicle {
            id,
            origin,
            destination,
            spawn_time: self.t,
            status: Status::Pending,
            progress,
            kind,
        });
        self.pending.push(id.0 as usize);
        self.emit(Event::Spawn {
            vehicle: id,
            class,
            origin,
            destination,
            free_flow,
            route,
        });
    }

    fn sensor_phase(&mut self) {
        let p = &self.sc.params;
        let keep = [p.delta_t_dl, p.delta_t_gpl, p.drp_window, p.measure_window_dl, p.measure_window_gpl]
            .into_iter()
            .max()
            .expect("nonempty") as Seconds
            + 1;
        let before = self.t - keep;
        for pair in &mut self.sensors {
            for s in pair.iter_mut() {
                while s.entries.front().is_some_and(|&t| t < before) {
                    s.entries.pop_front();
                }
                while s.exits.front().is_some_and(|&(t, _)| t < before) {
                    s.exits.pop_front();
                }
            }
        }
        self.hv_log.prune(before);
    }

    /// Snapshots of every CAV on the network, pending ones included as
    /// entering their first edge now.
    fn cav_snapshots(&self) -> Vec<CavSnapshot> {
        let net = self.net();
        self.active
            .iter()
            .chain(&self.pending)
            .map(|&i| &self.vehicles[i])
            .filter(|v| v.class() == VehicleClass::Cav)
            .map(|v| v.snapshot(net))
            .collect()
    }

    fn anticipated_costs(&self) -> LaneCosts {
        anticipated_costs(
            self.net(),
            &self.cav_snapshots(),
            &self.hv_log,
            self.t,
            self.windows(),
            &self.sc.params.bpr,
        )
    }

    /// Mean driving time of vehicles that left each lane within the last
    /// `drp_window` seconds; free-flow time where nobody did.
    fn measured_costs(&self) -> LaneCosts {
        let net = self.net();
        let from = self.t - self.sc.params.drp_window as Seconds;
        let mut c = LaneCosts::empty(net);
        for lane in net.lane_refs() {
            let s = &self.sensors[lane.edge.index()][lane.class.slot()];
            let recent: Vec<f64> = s
                .exits
                .iter()
                .rev()
                .take_while(|&&(t, _)| t >= from)
                .map(|&(_, d)| d)
                .collect();
            let tau0 = net.lane(lane).expect("lane exists").free_flow_time;
            let v = if recent.is_empty() {
                tau0
            } else {
                recent.iter().sum::<f64>() / recent.len() as f64
            };
            c.set(lane, v);
        }
        c
    }

    fn trigger_phase(&mut self) {
        let net = self.net();
        let cfg = TriggerConfig::new(self.sc.params.lambda);
        let hw = self.sc.params.delta_t_dl;
        let buses: Vec<usize> = self
            .active
            .iter()
            .copied()
            .filter(|&i| self.vehicles[i].class() == VehicleClass::Bus)
            .collect();
        let mut fleet: Option<Vec<CavSnapshot>> = None;
        for bi in buses {
            let bus = &self.vehicles[bi];
            let k = bus.progress.cursor + 1;
            let Some(target) = bus.progress.route.step(k) else {
                continue;
            };
            let horizon_end = bus.bus().expect("bus").estimated_next;
            if self.t < bus.progress.entry_time
                || self.t as f64 > horizon_end
                || self.fired.contains(&(bus.id, k))
            {
                continue;
            }
            let snap = fleet.get_or_insert_with(|| self.cav_snapshots());
            let w = MonitorWindow::new(self.t, hw);
            let lane = net.lane(target).expect("bus lanes exist");
            let flow = anticipated_dl_flow(snap, &w, target);
            let tau_hat = bpr_time(lane.free_flow_time, flow, lane.capacity, &self.sc.params.bpr)
                .expect("validated capacity");
            if !cfg.fires(tau_hat, lane.free_flow_time) {
                continue;
            }
            let bus_id = bus.id;
            self.fired.insert((bus_id, k));
            let window = [self.t - hw as Seconds, self.t + hw as Seconds];
            self.emit(Event::Trigger {
                bus: bus_id,
                edge_index: k,
                lane: target,
                anticipated: tau_hat,
                free_flow: lane.free_flow_time,
                window,
            });
            let fired = Fired { bus: bus_id, edge_index: k };
            let snap = fleet.take().expect("built above");
            self.reroute(fired, target, &w, snap);
        }
    }

    fn reroute(&mut self, fired: Fired, target: LaneRef, w: &MonitorWindow, mut snap: Vec<CavSnapshot>) {
        let net = self.net();
        let at = net.edge(target.edge).from;
        let qualifying = identify_reroute_set(&snap, target, w);
        let (skipped, eligible): (Vec<VehicleId>, Vec<VehicleId>) = qualifying
            .into_iter()
            .partition(|id| self.vehicles[id.0 as usize].cav().is_some_and(|c| c.claimed_until.is_some()));
        let requests: Vec<RerouteRequest> = eligible
            .iter()
            .map(|&id| RerouteRequest {
                cav: id,
                at,
                destination: self.vehicles[id.0 as usize].destination,
            })
            .collect();
        let ctx = EstimationContext {
            net,
            hv_log: &self.hv_log,
            windows: self.windows(),
            bpr: self.sc.params.bpr,
            t_sys: self.t,
        };
        let trigger = Trigger {
            bus: fired.bus,
            edge_index: fired.edge_index,
            time: self.t,
            lane: target,
        };
        let event = reoptimize_set(&ctx, &trigger, &requests, &mut snap);
        for a in &event.assignments {
            let v = &mut self.vehicles[a.cav.0 as usize];
            if !a.kept_original {
                let keep = v.progress.cursor + 1;
                v.progress.route = v.progress.route.splice(keep, &a.route);
            }
            if let VehicleKind::Cav(c) = &mut v.kind {
                c.claimed_until = Some(at);
                c.reroutes += 1;
            }
        }
        self.emit(Event::Reroute {
            bus: event.bus,
            edge_index: event.edge_index,
            at,
            excluded: event.excluded,
            window: [w.center - w.half_width as Seconds, w.center + w.half_width as Seconds],
            rerouted: event.rerouted,
            assignments: event.assignments,
            skipped_claimed: skipped,
        });
    }

    /// Every `drp_window` seconds each en-route CAV compares the rest of its
    /// route, from the end of its current edge, against the measured costs.
    fn drp_phase(&mut self) {
        if self.t % self.sc.params.drp_window as Seconds != 0 {
            return;
        }
        let net = self.net();
        let due: Vec<usize> = self
            .active
            .iter()
            .copied()
            .filter(|&i| {
                let v = &self.vehicles[i];
                v.class() == VehicleClass::Cav && !v.progress.on_last_edge()
            })
            .collect();
        if due.is_empty() {
            return;
        }
        let costs = self.measured_costs();
        for i in due {
            let v = &self.vehicles[i];
            let at = net.edge(v.progress.current().edge).to;
            let ahead = v.progress.ahead();
            if let Some(route) = drp_step(net, &costs, at, v.destination, &ahead) {
                let v = &mut self.vehicles[i];
                let keep = v.progress.cursor + 1;
                v.progress.route = v.progress.route.splice(keep, &route);
                let id = v.id;
                self.emit(Event::Replan {
                    vehicle: id,
                    at,
                    route,
                });
            }
        }
    }

    fn movement_phase(&mut self) -> Result<(), SimError> {
        let t = self.t;
        let mut still = Vec::with_capacity(self.active.len());
        let active = std::mem::take(&mut self.active);
        for i in active {
            self.bus_stop_arrival(i);
            if self.vehicles[i].progress.exit_time != t {
                still.push(i);
                continue;
            }
            let lane = self.vehicles[i].progress.current();
            let driving = self.vehicles[i].progress.realized;
            self.sensors[lane.edge.index()][lane.class.slot()]
                .exits
                .push_back((t, driving));
            let id = self.vehicles[i].id;
            self.emit(Event::EdgeExit { vehicle: id, lane });
            if self.vehicles[i].progress.on_last_edge() {
                self.finish(i);
            } else {
                self.vehicles[i].progress.cursor += 1;
                self.enter(i)?;
                still.push(i);
            }
        }
        for i in std::mem::take(&mut self.pending) {
            self.vehicles[i].status = Status::Active;
            self.vehicles[i].progress.cursor = 0;
            self.enter(i)?;
            still.push(i);
        }
        still.sort_unstable();
        self.active = still;
        Ok(())
    }

    fn bus_stop_arrival(&mut self, i: usize) {
        let t = self.t;
        let Some(VehicleKind::Bus(b)) = self.vehicles.get(i).map(|v| &v.kind) else {
            return;
        };
        let Some((ix, at)) = b.pending_stop else {
            return;
        };
        if at != t {
            return;
        }
        let line = &self.sc.lines[b.line];
        let stop = line.timetable.stops[ix].node;
        let scheduled = b.scheduled[ix];
        let dwell = b.dwell.round() as Seconds;
        let id = self.vehicles[i].id;
        if let VehicleKind::Bus(b) = &mut self.vehicles[i].kind {
            b.arrivals[ix] = Some(t);
            b.pending_stop = None;
        }
        self.emit(Event::StopArrival {
            vehicle: id,
            stop,
            index: ix,
            terminal: false,
            scheduled,
            deviation: t - scheduled,
        });
        self.emit(Event::Dwell {
            vehicle: id,
            stop,
            duration: dwell,
        });
    }

    fn finish(&mut self, i: usize) {
        let t = self.t;
        let v = &self.vehicles[i];
        let id = v.id;
        let class = v.class();
        let travel_time = t - v.spawn_time;
        if let VehicleKind::Bus(b) = &v.kind {
            let line = &self.sc.lines[b.line];
            let ix = line.timetable.stops.len() - 1;
            let stop = line.timetable.stops[ix].node;
            let scheduled = b.scheduled[ix];
            if let VehicleKind::Bus(b) = &mut self.vehicles[i].kind {
                b.arrivals[ix] = Some(t);
            }
            self.emit(Event::StopArrival {
                vehicle: id,
                stop,
                index: ix,
                terminal: true,
                scheduled,
                deviation: t - scheduled,
            });
            self.buses_left -= 1;
        }
        self.vehicles[i].status = Status::Finished(t);
        self.completed += 1;
        self.emit(Event::TripComplete {
            vehicle: id,
            class,
            travel_time,
        });
    }

    /// Puts vehicle `i` on the lane at its cursor.
    fn enter(&mut self, i: usize) -> Result<(), SimError> {
        let t = self.t;
        let net = self.net();
        let lane_ref = self.vehicles[i].progress.current();
        let edge = net.edge(lane_ref.edge);
        let Some(lane) = edge.lane(lane_ref.class) else {
            return Err(SimError::Invariant {
                t,
                what: format!("vehicle {} routed onto missing lane {lane_ref:?}", i),
            });
        };
        let (flow, realized) = realized_traversal_time(
            net,
            &self.sc.params.bpr,
            self.sc.params.lane_interaction.weight_on(lane_ref.class),
            lane_ref,
            |class| {
                let w = self.measure_window(class);
                let n = self.sensors[lane_ref.edge.index()][class.slot()].count_since(t - w as Seconds);
                n as f64 / w as f64
            },
        );
        let tau0 = lane.free_flow_time;
        let mut exit = t + (realized.round() as Seconds).max(tau0.ceil() as Seconds);
        let v = &mut self.vehicles[i];
        let class = v.class();
        v.progress.entry_time = t;
        v.progress.realized = realized;
        let mut stop_at = None;
        if let VehicleKind::Bus(b) = &mut v.kind {
            b.estimated_next = t as f64 + tau0;
            let line = &self.sc.lines[b.line];
            let cursor = v.progress.cursor;
            if let Some(ix) = line
                .timetable
                .stops
                .iter()
                .position(|s| s.edge_index == cursor && !s.terminal)
            {
                let offset = edge.bus_stop.map(|b| b.offset).unwrap_or(tau0);
                let arrival = t + (offset * realized / tau0).round() as Seconds;
                b.pending_stop = Some((ix, arrival));
                exit += b.dwell.round() as Seconds;
                stop_at = Some(arrival);
            }
        }
        if let VehicleKind::Cav(c) = &mut v.kind {
            c.claimed_until = None;
        }
        v.progress.exit_time = exit;
        let id = v.id;
        if class == VehicleClass::Hv && lane_ref.class == LaneClass::Gpl {
            self.hv_log.record(lane_ref.edge, t);
        }
        self.sensors[lane_ref.edge.index()][lane_ref.class.slot()]
            .entries
            .push_back(t);
        if stop_at == Some(t) {
            self.bus_stop_arrival(i);
        }
        self.emit(Event::EdgeEnter {
            vehicle: id,
            lane: lane_ref,
            flow,
            realized,
            exit_at: exit,
        });
        Ok(())
    }
}

/// Traversal time of a vehicle entering `lane` when `flow(class)` gives the
/// measured entry flow of each lane class on the same edge. The adjacent
/// lane contributes with weight `interaction`. Returns (own flow, time).
pub fn realized_traversal_time(
    net: &RoadNetwork,
    p: &BprParams,
    interaction: f64,
    lane: LaneRef,
    mut flow: impl FnMut(LaneClass) -> f64,
) -> (f64, f64) {
    let edge = net.edge(lane.edge);
    let own = edge.lane(lane.class).expect("lane exists");
    let f = flow(lane.class);
    let mut time = bpr_time(own.free_flow_time, f, own.capacity, p).expect("validated capacity");
    if interaction > 0.0 {
        if let Some(other) = edge.lane(lane.class.other()) {
            let fo = flow(other.class);
            let extra = bpr_time(own.free_flow_time, fo, other.capacity, p).expect("validated capacity")
                - own.free_flow_time;
            time += interaction * extra;
        }
    }
    (f, time)
}

/// Runs a scenario to completion.
pub fn simulate(sc: &Scenario, policy: Policy, seed: u64) -> Result<RunOutput, SimError> {
    World::new(sc, policy, seed).run()
}

/// Writes the trace as JSON lines.
pub fn write_trace(trace: &[Record], mut out: impl Write) -> io::Result<()> {
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(text: &str) -> Result<Vec<Record>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn trace_to_string(trace: &[Record]) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NodeKind;
    use crate::scenario::{ScenarioDoc, StopTimeDoc};

    fn bundled_doc() -> ScenarioDoc {
        ScenarioDoc::load("vanness").unwrap()
    }

    fn build(doc: &ScenarioDoc) -> Scenario {
        Scenario::from_doc(doc).unwrap()
    }

    #[test]
    fn empty_network_only_advances_clock() {
        let mut doc = bundled_doc();
        doc.demand.clear();
        doc.bus_lines.clear();
        let sc = build(&doc);
        let out = simulate(&sc, Policy::Coordinated, 1).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert!(matches!(out.trace[0].event, Event::RunStart { .. }));
        assert_eq!(
            out.trace[1].event,
            Event::RunEnd {
                spawned: 0,
                completed: 0,
                in_network: 0
            }
        );
        assert_eq!(out.end, sc.params.horizon as Seconds + 1);
    }

    /// One bus alone: every arrival follows from free-flow driving and 60 s
    /// dwells, so it is on time at the first stop and 30 s early (the signal
    /// margin) from the second stop on.
    #[test]
    fn lone_bus_follows_timetable() {
        let mut doc = bundled_doc();
        doc.demand.clear();
        doc.bus_lines[0].runs = 1;
        let sc = build(&doc);
        let out = simulate(&sc, Policy::Srp, 1).unwrap();
        let devs: Vec<Seconds> = out
            .trace
            .iter()
            .filter_map(|r| match r.event {
                Event::StopArrival { deviation, .. } => Some(deviation),
                _ => None,
            })
            .collect();
        assert_eq!(devs, vec![0, -30, -30, -30]);
        let net = &sc.network;
        let mut dwells = 0;
        for r in &out.trace {
            match &r.event {
                Event::EdgeEnter {
                    lane, realized, exit_at, ..
                } => {
                    let e = net.edge(lane.edge);
                    assert_eq!(*realized, e.free_flow_time());
                    let stop = if e.bus_stop.is_some() { 60 } else { 0 };
                    assert_eq!(*exit_at - r.t, e.free_flow_time() as Seconds + stop);
                }
                Event::Dwell { duration, .. } => {
                    assert_eq!(*duration, 60);
                    dwells += 1;
                }
                _ => {}
            }
        }
        assert_eq!(dwells, 3);
        let Some(Event::TripComplete { travel_time, .. }) = out.trace.iter().rev().map(|r| &r.event).nth(1) else {
            panic!("bus trip completes last");
        };
        assert_eq!(*travel_time, 537);
    }

    #[test]
    fn stops_must_be_stations() {
        let doc = bundled_doc();
        let sc = build(&doc);
        for line in &sc.lines {
            for s in line.timetable.stations() {
                assert_eq!(sc.network.node(s.node).kind, NodeKind::BusStation);
            }
        }
        let mut bad = doc.clone();
        bad.bus_lines[0].timetable.insert(
            0,
            StopTimeDoc {
                stop: 9,
                offset: 10,
            },
        );
        assert!(Scenario::from_doc(&bad).is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let sc = Scenario::load("vanness").unwrap();
        for policy in [Policy::Coordinated, Policy::Drp] {
            let a = trace_to_string(&simulate(&sc, policy, 7).unwrap().trace);
            let b = trace_to_string(&simulate(&sc, policy, 7).unwrap().trace);
            assert!(a == b, "{policy} not deterministic");
        }
    }

    #[test]
    fn trace_roundtrips() {
        let sc = Scenario::load("vanness").unwrap();
        let trace = simulate(&sc, Policy::Coordinated, 2).unwrap().trace;
        let text = trace_to_string(&trace);
        assert_eq!(read_trace(&text).unwrap(), trace);
    }

    /// Steps a world by hand and checks, every tick, that each edge-enter
    /// event reached the entry sensor of its lane exactly once and that no
    /// vehicle is lost.
    #[test]
    fn sensors_and_conservation_per_tick() {
        let sc = Scenario::load("vanness").unwrap();
        let mut w = World::new(&sc, Policy::Coordinated, 3);
        let mut seen = 0;
        while !w.done() {
            let t = w.time();
            w.step().unwrap();
            let mut expected: std::collections::BTreeMap<LaneRef, usize> = Default::default();
            for r in &w.trace()[seen..] {
                if let Event::EdgeEnter { lane, .. } = r.event {
                    *expected.entry(lane).or_default() += 1;
                }
            }
            seen = w.trace().len();
            for lane in sc.network.lane_refs() {
                let logged = w.sensors[lane.edge.index()][lane.class.slot()]
                    .entries
                    .iter()
                    .filter(|&&e| e == t)
                    .count();
                assert_eq!(logged, expected.get(&lane).copied().unwrap_or(0), "t {t} {lane:?}");
            }
            assert_eq!(w.vehicles().len(), w.completed + w.in_network());
        }
    }

    #[test]
    fn traversal_time_examples() {
        let sc = Scenario::load("vanness").unwrap();
        let net = &sc.network;
        let p = BprParams { alpha: 0.15, beta: 4.0 };
        let dl = net
            .lane_refs()
            .find(|l| l.class == LaneClass::JointDl && net.edge(l.edge).has_lane(LaneClass::Gpl))
            .unwrap();
        let lane = net.lane(dl).unwrap().clone();
        let (_, alone) = realized_traversal_time(net, &p, 0.5, dl, |_| 0.0);
        assert_eq!(alone, lane.free_flow_time);
        let (f, at_cap) = realized_traversal_time(net, &p, 0.0, dl, |c| if c == dl.class { lane.capacity } else { 9.0 });
        assert_eq!(f, lane.capacity);
        assert!((at_cap - 1.15 * lane.free_flow_time).abs() <= 1e-12 * lane.free_flow_time);
        // The adjacent lane at its capacity adds γ·α·τ0.
        let other = net.lane(LaneRef::new(dl.edge, LaneClass::Gpl)).unwrap().capacity;
        let (_, mixed) = realized_traversal_time(net, &p, 0.5, dl, |c| if c == dl.class { 0.0 } else { other });
        assert!((mixed - lane.free_flow_time * (1.0 + 0.5 * 0.15)).abs() < 1e-9);
    }

    #[test]
    fn realized_never_below_free_flow() {
        let sc = Scenario::load("vanness").unwrap();
        let trace = simulate(&sc, Policy::Drp, 1).unwrap().trace;
        for r in &trace {
            if let Event::EdgeEnter { lane, realized, exit_at, .. } = &r.event {
                let tau0 = sc.network.lane(*lane).unwrap().free_flow_time;
                assert!(*realized >= tau0);
                assert!((*exit_at - r.t) as f64 >= tau0);
            }
        }
    }
}
