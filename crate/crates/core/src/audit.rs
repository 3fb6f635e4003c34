//! Post-hoc checks over an event trace.
//!
//! The auditor replays a trace against the scenario it came from and
//! re-derives every vehicle's plan and position from the events alone. It
//! never looks at simulator state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::fleet::{VehicleClass, VehicleId};
use crate::network::{LaneClass, LaneRef, NodeId, Route};
use crate::router::Policy;
use crate::scenario::Scenario;
use crate::sim::{Event, Record};
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Trace framing: sequence numbers, clock, run start and end records.
    Framing,
    /// Every spawned vehicle is pending, on exactly one lane, or finished.
    Conservation,
    /// Lanes entered follow the vehicle's current plan edge by edge from
    /// origin to destination, and exits happen when announced.
    RouteChaining,
    /// HVs stay off the DL, CAVs stay off it when the policy forbids it, and
    /// buses drive only their line.
    ClassLegality,
    /// Rerouted CAVs were heading for the protected lane and their new plans
    /// avoid it.
    ExclusionSoundness,
    /// At most one trigger per bus and edge, inside the control horizon, each
    /// answered by its reroute.
    OneShotTrigger,
    /// Monitoring windows are centred on the trigger time with half-width ΔT.
    WindowSymmetry,
    /// Buses are never re-planned or rerouted.
    BusImmutability,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Framing,
        Check::Conservation,
        Check::RouteChaining,
        Check::ClassLegality,
        Check::ExclusionSoundness,
        Check::OneShotTrigger,
        Check::WindowSymmetry,
        Check::BusImmutability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Check::Framing => "framing",
            Check::Conservation => "conservation",
            Check::RouteChaining => "route_chaining",
            Check::ClassLegality => "class_legality",
            Check::ExclusionSoundness => "exclusion_soundness",
            Check::OneShotTrigger => "one_shot_trigger",
            Check::WindowSymmetry => "window_symmetry",
            Check::BusImmutability => "bus_immutability",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: Check,
    pub seq: u64,
    pub t: Seconds,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] seq {} t {}: {}", self.check, self.seq, self.t, self.detail)
    }
}

/// How many individual assertions each check made, and what failed.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub assertions: BTreeMap<Check, u64>,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn failed(&self, check: Check) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }

    pub fn count(&self, check: Check) -> u64 {
        self.assertions.get(&check).copied().unwrap_or(0)
    }
}

#[derive(Debug)]
struct Tracked {
    class: VehicleClass,
    destination: NodeId,
    plan: Route,
    /// Lanes entered so far.
    entered: usize,
    /// Entry tick of the current lane, spawn tick before the first entry.
    entry_time: Seconds,
    open: Option<(LaneRef, Seconds)>,
    done: bool,
}

impl Tracked {
    /// Plan steps kept when the vehicle is re-planned now: everything up to
    /// and including the lane it is on (or about to enter).
    fn keep(&self) -> usize {
        self.entered.max(1)
    }
}

struct Auditor<'a> {
    sc: &'a Scenario,
    report: AuditReport,
    seq: u64,
    t: Seconds,
}

impl Auditor<'_> {
    fn assert(&mut self, check: Check, ok: bool, detail: impl FnOnce() -> String) {
        *self.report.assertions.entry(check).or_default() += 1;
        if !ok {
            self.report.violations.push(Violation {
                check,
                seq: self.seq,
                t: self.t,
                detail: detail(),
            });
        }
    }

    fn plan_is_chained(&self, plan: &Route, from: NodeId, to: NodeId) -> Result<(), String> {
        let net = &self.sc.network;
        if plan.edges.len() != plan.lanes.len() {
            return Err("edge and lane lists differ in length".into());
        }
        let mut at = from;
        for step in plan.steps() {
            if step.edge.index() >= net.edges().len() {
                return Err(format!("unknown edge {:?}", step.edge));
            }
            let e = net.edge(step.edge);
            if e.from != at {
                return Err(format!("edge {:?} starts at {:?}, expected {:?}", step.edge, e.from, at));
            }
            if e.lane(step.class).is_none() {
                return Err(format!("edge {:?} has no {:?} lane", step.edge, step.class));
            }
            at = e.to;
        }
        if at != to {
            return Err(format!("plan ends at {at:?}, expected {to:?}"));
        }
        Ok(())
    }
}

/// Re-checks a finished run's trace. `sc` must be the scenario it ran on.
pub fn audit_trace(sc: &Scenario, trace: &[Record]) -> AuditReport {
    let mut a = Auditor {
        sc,
        report: AuditReport::default(),
        seq: 0,
        t: 0,
    };
    let net = &sc.network;
    let line_routes: Vec<&Route> = sc.lines.iter().map(|l| &l.route).collect();

    let mut vehicles: BTreeMap<VehicleId, Tracked> = BTreeMap::new();
    let mut fired: BTreeSet<(VehicleId, usize)> = BTreeSet::new();
    let mut awaiting_reroute: Option<(VehicleId, usize, LaneRef, [Seconds; 2])> = None;
    let mut policy = None;
    let mut window_dl: Seconds = 0;
    let mut lambda = 0.0;
    let mut spawned = 0usize;
    let mut completed = 0usize;
    let mut ended = false;

    for (i, rec) in trace.iter().enumerate() {
        let prev_t = a.t;
        a.seq = rec.seq;
        a.t = rec.t;
        a.assert(Check::Framing, rec.seq == i as u64, || format!("sequence number {} at position {i}", rec.seq));
        a.assert(Check::Framing, rec.t >= prev_t, || format!("clock went back from {prev_t}"));
        a.assert(Check::Framing, !ended, || "record after run end".into());
        if rec.t != prev_t {
            // Everything spawned and not finished is on exactly one lane
            // between ticks.
            let open = vehicles.values().filter(|v| v.open.is_some()).count();
            a.assert(Check::Conservation, open == spawned - completed, || {
                format!("after t {prev_t}: {open} on lanes, {spawned} spawned, {completed} completed")
            });
            if let Some((bus, k, ..)) = awaiting_reroute.take() {
                a.assert(Check::OneShotTrigger, false, || format!("trigger for bus {bus:?} edge {k} has no reroute"));
            }
        }
        if i == 0 {
            match &rec.event {
                Event::RunStart {
                    policy: p,
                    windows,
                    lambda: l,
                    ..
                } => {
                    policy = Some(*p);
                    window_dl = windows[0] as Seconds;
                    lambda = *l;
                }
                _ => a.assert(Check::Framing, false, || "trace does not open with run_start".into()),
            }
            continue;
        }
        if awaiting_reroute.is_some() && !matches!(rec.event, Event::Reroute { .. }) {
            let (bus, k, ..) = awaiting_reroute.take().expect("checked");
            a.assert(Check::OneShotTrigger, false, || format!("trigger for bus {bus:?} edge {k} not followed by its reroute"));
        }
        match &rec.event {
            Event::RunStart { .. } => a.assert(Check::Framing, false, || "second run_start".into()),
            Event::Spawn {
                vehicle,
                class,
                origin,
                destination,
                route,
                ..
            } => {
                a.assert(Check::Conservation, !vehicles.contains_key(vehicle), || format!("{vehicle:?} spawned twice"));
                spawned += 1;
                let chained = a.plan_is_chained(route, *origin, *destination);
                a.assert(Check::RouteChaining, chained.is_ok(), || {
                    format!("{vehicle:?} initial plan: {}", chained.clone().unwrap_err())
                });
                match class {
                    VehicleClass::Hv => a.assert(
                        Check::ClassLegality,
                        route.lanes.iter().all(|&c| c == LaneClass::Gpl),
                        || format!("HV {vehicle:?} planned onto a DL"),
                    ),
                    VehicleClass::Cav => a.assert(
                        Check::ClassLegality,
                        policy.is_none_or(|p| p.joint_dl_allowed()) || route.lanes.iter().all(|&c| c == LaneClass::Gpl),
                        || format!("CAV {vehicle:?} planned onto a DL under a GPL-only policy"),
                    ),
                    VehicleClass::Bus => a.assert(Check::ClassLegality, line_routes.contains(&route), || {
                        format!("bus {vehicle:?} route matches no line")
                    }),
                }
                vehicles.insert(
                    *vehicle,
                    Tracked {
                        class: *class,
                        destination: *destination,
                        plan: route.clone(),
                        entered: 0,
                        entry_time: rec.t,
                        open: None,
                        done: false,
                    },
                );
            }
            Event::EdgeEnter {
                vehicle,
                lane,
                exit_at,
                ..
            } => {
                let Some(v) = vehicles.get_mut(vehicle) else {
                    a.assert(Check::Conservation, false, || format!("{vehicle:?} entered before spawning"));
                    continue;
                };
                let (open, done, class) = (v.open, v.done, v.class);
                let expected = v.plan.step(v.entered);
                v.entered += 1;
                v.entry_time = rec.t;
                v.open = Some((*lane, *exit_at));
                a.assert(Check::Conservation, open.is_none() && !done, || {
                    format!("{vehicle:?} entered {lane:?} while on another lane or finished")
                });
                a.assert(Check::RouteChaining, expected == Some(*lane), || {
                    format!("{vehicle:?} entered {lane:?}, plan says {expected:?}")
                });
                a.assert(Check::RouteChaining, *exit_at > rec.t, || format!("{vehicle:?} exit_at {exit_at} not after entry"));
                a.assert(Check::ClassLegality, net.lane(*lane).is_some(), || format!("{lane:?} does not exist"));
                let legal = match class {
                    VehicleClass::Hv => lane.class == LaneClass::Gpl,
                    VehicleClass::Cav => lane.class == LaneClass::Gpl || policy.is_none_or(|p| p.joint_dl_allowed()),
                    VehicleClass::Bus => line_routes.iter().any(|r| r.steps().any(|s| s == *lane)),
                };
                a.assert(Check::ClassLegality, legal, || format!("{class:?} {vehicle:?} on {lane:?}"));
            }
            Event::EdgeExit { vehicle, lane } => {
                let Some(v) = vehicles.get_mut(vehicle) else {
                    a.assert(Check::Conservation, false, || format!("{vehicle:?} exited before spawning"));
                    continue;
                };
                let open = v.open.take();
                a.assert(Check::RouteChaining, open.map(|o| o.0) == Some(*lane), || {
                    format!("{vehicle:?} left {lane:?}, was on {open:?}")
                });
                a.assert(Check::RouteChaining, open.is_none_or(|o| o.1 == rec.t), || {
                    format!("{vehicle:?} left {lane:?} at {}, announced {:?}", rec.t, open.map(|o| o.1))
                });
            }
            Event::TripComplete { vehicle, class, travel_time } => {
                let Some(v) = vehicles.get_mut(vehicle) else {
                    a.assert(Check::Conservation, false, || format!("{vehicle:?} completed before spawning"));
                    continue;
                };
                let ok = !v.done && v.open.is_none() && v.entered == v.plan.len() && v.class == *class;
                v.done = true;
                completed += 1;
                a.assert(Check::Conservation, ok, || format!("{vehicle:?} completed in an inconsistent state"));
                let last = v.plan.edges.last().map(|&e| net.edge(e).to);
                a.assert(Check::RouteChaining, last == Some(v.destination), || {
                    format!("{vehicle:?} finished at {last:?}, destination {:?}", v.destination)
                });
                a.assert(Check::Conservation, *travel_time >= 0, || format!("{vehicle:?} negative travel time"));
            }
            Event::StopArrival { vehicle, .. } | Event::Dwell { vehicle, .. } => {
                let class = vehicles.get(vehicle).map(|v| v.class);
                a.assert(Check::ClassLegality, class == Some(VehicleClass::Bus), || {
                    format!("stop event for non-bus {vehicle:?}")
                });
            }
            Event::Trigger {
                bus,
                edge_index,
                lane,
                anticipated,
                free_flow,
                window,
            } => {
                a.assert(Check::OneShotTrigger, policy == Some(Policy::Coordinated), || "trigger outside coordinated policy".into());
                a.assert(Check::OneShotTrigger, fired.insert((*bus, *edge_index)), || {
                    format!("bus {bus:?} edge {edge_index} triggered twice")
                });
                a.assert(Check::OneShotTrigger, *anticipated >= (1.0 + lambda) * free_flow * (1.0 - 1e-12), || {
                    format!("trigger with anticipated {anticipated} below threshold")
                });
                match vehicles.get(bus) {
                    Some(v) if v.class == VehicleClass::Bus => {
                        a.assert(Check::OneShotTrigger, *edge_index == v.entered && v.plan.step(*edge_index) == Some(*lane), || {
                            format!("trigger for edge {edge_index} / {lane:?} while bus has entered {} lanes", v.entered)
                        });
                        let horizon = v
                            .plan
                            .step(v.entered.saturating_sub(1))
                            .and_then(|s| net.lane(s))
                            .map(|l| v.entry_time as f64 + l.free_flow_time);
                        a.assert(Check::OneShotTrigger, horizon.is_some_and(|end| rec.t as f64 <= end), || {
                            format!("trigger at {} past control horizon end {horizon:?}", rec.t)
                        });
                        a.assert(Check::OneShotTrigger, *free_flow == net.lane(*lane).map_or(f64::NAN, |l| l.free_flow_time), || {
                            "trigger free-flow time does not match the lane".into()
                        });
                    }
                    _ => a.assert(Check::BusImmutability, false, || format!("trigger for non-bus {bus:?}")),
                }
                a.assert(Check::WindowSymmetry, *window == [rec.t - window_dl, rec.t + window_dl], || {
                    format!("trigger window {window:?} not centred on {} with half-width {window_dl}", rec.t)
                });
                awaiting_reroute = Some((*bus, *edge_index, *lane, *window));
            }
            Event::Reroute {
                bus,
                edge_index,
                at,
                excluded,
                window,
                rerouted,
                assignments,
                skipped_claimed,
            } => {
                let expected = awaiting_reroute.take();
                a.assert(
                    Check::OneShotTrigger,
                    expected.is_some_and(|(b, k, l, w)| b == *bus && k == *edge_index && l == *excluded && w == *window),
                    || format!("reroute for bus {bus:?} edge {edge_index} does not answer the preceding trigger"),
                );
                a.assert(Check::WindowSymmetry, *window == [rec.t - window_dl, rec.t + window_dl], || {
                    format!("reroute window {window:?} not centred on {}", rec.t)
                });
                a.assert(Check::ExclusionSoundness, net.edge(excluded.edge).from == *at, || {
                    format!("reroute at {at:?} but excluded lane starts elsewhere")
                });
                let mut assigned: Vec<VehicleId> = assignments.iter().map(|x| x.cav).collect();
                assigned.sort();
                let mut named = rerouted.clone();
                named.sort();
                a.assert(Check::ExclusionSoundness, assigned == named, || "assignment list differs from rerouted set".into());
                for id in rerouted.iter().chain(skipped_claimed) {
                    let class = vehicles.get(id).map(|v| v.class);
                    a.assert(Check::BusImmutability, class == Some(VehicleClass::Cav), || {
                        format!("reroute names {id:?} of class {class:?}")
                    });
                }
                let lo = window[0] as f64;
                let hi = window[1] as f64;
                for x in assignments {
                    let Some(v) = vehicles.get_mut(&x.cav) else {
                        continue;
                    };
                    let keep = v.keep();
                    let heading = v.plan.step(keep);
                    let cur = v.plan.step(keep - 1).and_then(|s| net.lane(s)).map(|l| l.free_flow_time);
                    let eta = cur.map(|tau| v.entry_time as f64 + tau);
                    let ok = heading == Some(*excluded) && eta.is_some_and(|e| e >= lo && e <= hi) && !v.done;
                    let cav = x.cav;
                    let (ok_tail, plan_after) = if x.kept_original {
                        (true, None)
                    } else {
                        let avoids = x.route.steps().all(|s| s != *excluded);
                        (avoids, Some(v.plan.splice(keep, &x.route)))
                    };
                    if let Some(p) = plan_after {
                        v.plan = p;
                    }
                    let dest = v.destination;
                    a.assert(Check::ExclusionSoundness, ok, || {
                        format!("{cav:?} rerouted but was not heading into {excluded:?} within the window")
                    });
                    a.assert(Check::ExclusionSoundness, ok_tail, || format!("{cav:?} new plan uses {excluded:?}"));
                    if !x.kept_original {
                        let chained = a.plan_is_chained(&x.route, *at, dest);
                        a.assert(Check::RouteChaining, chained.is_ok(), || {
                            format!("{cav:?} reroute plan: {}", chained.clone().unwrap_err())
                        });
                    }
                }
            }
            Event::Replan { vehicle, at, route } => {
                a.assert(Check::RouteChaining, policy == Some(Policy::Drp), || "replan outside DRP".into());
                let Some(v) = vehicles.get_mut(vehicle) else {
                    a.assert(Check::Conservation, false, || format!("{vehicle:?} replanned before spawning"));
                    continue;
                };
                let class = v.class;
                let keep = v.keep();
                let cur_end = v.plan.step(keep - 1).map(|s| net.edge(s.edge).to);
                v.plan = v.plan.splice(keep, route);
                let dest = v.destination;
                a.assert(Check::BusImmutability, class == VehicleClass::Cav, || format!("replan of {class:?} {vehicle:?}"));
                a.assert(Check::RouteChaining, cur_end == Some(*at), || {
                    format!("{vehicle:?} replanned at {at:?} but its lane ends at {cur_end:?}")
                });
                let chained = a.plan_is_chained(route, *at, dest);
                a.assert(Check::RouteChaining, chained.is_ok(), || {
                    format!("{vehicle:?} replan: {}", chained.clone().unwrap_err())
                });
            }
            Event::RunEnd {
                spawned: s,
                completed: c,
                in_network,
            } => {
                ended = true;
                let open = vehicles.values().filter(|v| !v.done).count();
                a.assert(Check::Conservation, *s == spawned && *c == completed && *in_network == open, || {
                    format!("run_end says {s}/{c}/{in_network}, trace has {spawned}/{completed}/{open}")
                });
            }
        }
    }
    a.assert(Check::Framing, ended, || "trace has no run_end".into());
    a.report
}
