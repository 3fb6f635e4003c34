//! Run metrics, computed from an event trace alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::fleet::{VehicleClass, VehicleId};
use crate::sim::{Event, Record};
use crate::Seconds;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub spawned: usize,
    /// Trips that started before the horizon and completed.
    pub completed: usize,
    pub p90_travel_time: Option<f64>,
    pub mean_travel_time: Option<f64>,
    pub mean_trip_delay: Option<f64>,
    /// Vehicle-seconds spent in the network up to the horizon.
    pub cumulative_travel_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSummary {
    pub index: usize,
    pub stop: u32,
    pub arrivals: usize,
    pub on_time: usize,
    /// Share of scheduled runs that arrived on time.
    pub on_time_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: Seconds,
    pub end: Seconds,
    pub buses: usize,
    /// Sum over buses of lateness at the terminal.
    pub bus_delay_total: f64,
    /// Accumulated bus delay at each tick `0..=end`.
    pub bus_delay_series: Vec<f64>,
    /// Cumulative vehicle-seconds at each tick `0..=end`, per class.
    pub cumulative: BTreeMap<VehicleClass, Vec<f64>>,
    pub stations: Vec<StationSummary>,
    pub classes: BTreeMap<VehicleClass, ClassSummary>,
}

impl MetricsReport {
    pub fn class(&self, c: VehicleClass) -> &ClassSummary {
        &self.classes[&c]
    }

    pub fn station_average_on_time(&self) -> f64 {
        if self.stations.is_empty() {
            return 0.0;
        }
        self.stations.iter().map(|s| s.on_time_pct).sum::<f64>() / self.stations.len() as f64
    }
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

struct Trip {
    class: VehicleClass,
    spawn: Seconds,
    free_flow: f64,
    done: Option<Seconds>,
}

/// Builds the report. `node_label` maps trace node ids to their scenario
/// labels for the station table.
pub fn accumulate_metrics(trace: &[Record], tolerance: f64, node_label: impl Fn(u32) -> u32) -> MetricsReport {
    let mut horizon = 0;
    let end = trace.last().map(|r| r.t).unwrap_or(0);
    let mut trips: BTreeMap<VehicleId, Trip> = BTreeMap::new();
    let mut terminal_late: Vec<(Seconds, f64)> = Vec::new();
    let mut stops: BTreeMap<usize, (u32, usize, usize)> = BTreeMap::new();

    for r in trace {
        match &r.event {
            Event::RunStart { horizon: h, .. } => horizon = *h,
            Event::Spawn {
                vehicle,
                class,
                free_flow,
                ..
            } => {
                trips.insert(
                    *vehicle,
                    Trip {
                        class: *class,
                        spawn: r.t,
                        free_flow: *free_flow,
                        done: None,
                    },
                );
            }
            Event::TripComplete { vehicle, .. } => {
                if let Some(trip) = trips.get_mut(vehicle) {
                    trip.done = Some(r.t);
                }
            }
            Event::StopArrival {
                stop,
                index,
                terminal,
                deviation,
                ..
            } => {
                if *terminal {
                    terminal_late.push((r.t, (*deviation).max(0) as f64));
                } else {
                    let e = stops.entry(*index).or_insert((node_label(stop.0), 0, 0));
                    e.1 += 1;
                    if crate::fleet::is_on_time(*deviation, tolerance) {
                        e.2 += 1;
                    }
                }
            }
            _ => {}
        }
    }

    let len = (end.max(0) + 1) as usize;
    // Presence deltas: +1 at spawn, -1 at completion.
    let mut delta: BTreeMap<VehicleClass, Vec<i64>> =
        VehicleClass::ALL.iter().map(|&c| (c, vec![0; len + 1])).collect();
    for trip in trips.values() {
        let d = delta.get_mut(&trip.class).expect("all classes");
        d[trip.spawn as usize] += 1;
        if let Some(done) = trip.done {
            d[done as usize] -= 1;
        }
    }
    let mut cumulative = BTreeMap::new();
    for (&class, d) in &delta {
        let mut series = Vec::with_capacity(len);
        let mut present = 0i64;
        let mut acc = 0.0;
        for &step in d.iter().take(len) {
            // Vehicle-seconds before tick t, then presence during tick t.
            series.push(acc);
            present += step;
            acc += present as f64;
        }
        cumulative.insert(class, series);
    }

    let mut bus_delay_series = vec![0.0; len];
    terminal_late.sort_by_key(|x| x.0);
    let mut acc = 0.0;
    let mut it = terminal_late.iter().peekable();
    for (t, slot) in bus_delay_series.iter_mut().enumerate() {
        while it.peek().is_some_and(|x| x.0 <= t as Seconds) {
            acc += it.next().expect("peeked").1;
        }
        *slot = acc;
    }

    let buses = trips.values().filter(|t| t.class == VehicleClass::Bus).count();
    let stations = stops
        .into_iter()
        .map(|(index, (stop, arrivals, on_time))| StationSummary {
            index,
            stop,
            arrivals,
            on_time,
            on_time_pct: if buses == 0 {
                0.0
            } else {
                100.0 * on_time as f64 / buses as f64
            },
        })
        .collect();

    let mut classes = BTreeMap::new();
    for class in VehicleClass::ALL {
        let of_class: Vec<&Trip> = trips.values().filter(|t| t.class == class).collect();
        let finished: Vec<&Trip> = of_class
            .iter()
            .copied()
            .filter(|t| t.spawn <= horizon && t.done.is_some())
            .collect();
        let times: Vec<f64> = finished
            .iter()
            .map(|t| (t.done.expect("finished") - t.spawn) as f64)
            .collect();
        let delays: Vec<f64> = finished
            .iter()
            .zip(&times)
            .map(|(t, &tt)| tt - t.free_flow)
            .collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let series = &cumulative[&class];
        classes.insert(
            class,
            ClassSummary {
                spawned: of_class.len(),
                completed: finished.len(),
                p90_travel_time: percentile(&times, 0.9),
                mean_travel_time: mean(&times),
                mean_trip_delay: mean(&delays),
                cumulative_travel_time: series[(horizon.max(0) as usize).min(series.len() - 1)],
            },
        );
    }

    MetricsReport {
        horizon,
        end,
        buses,
        bus_delay_total: acc,
        bus_delay_series,
        cumulative,
        stations,
        classes,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl MetricsReport {
    /// Columns: class, spawned, completed, p90_travel_time_s,
    /// mean_travel_time_s, mean_trip_delay_s, cumulative_travel_time_s.
    pub fn classes_csv(&self) -> String {
        let mut s = String::from(
            "class,spawned,completed,p90_travel_time_s,mean_travel_time_s,mean_trip_delay_s,cumulative_travel_time_s\n",
        );
        for (class, c) in &self.classes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.1}",
                class.as_str(),
                c.spawned,
                c.completed,
                opt(c.p90_travel_time),
                opt(c.mean_travel_time),
                opt(c.mean_trip_delay),
                c.cumulative_travel_time
            );
        }
        s
    }

    /// Columns: station, stop, arrivals, on_time, on_time_pct.
    pub fn stations_csv(&self) -> String {
        let mut s = String::from("station,stop,arrivals,on_time,on_time_pct\n");
        for (i, st) in self.stations.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{:.1}", i + 1, st.stop, st.arrivals, st.on_time, st.on_time_pct);
        }
        s
    }

    /// Columns: t, bus_delay_s, cum_hv_s, cum_cav_s, cum_bus_s.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("t,bus_delay_s,cum_hv_s,cum_cav_s,cum_bus_s\n");
        let c = &self.cumulative;
        for t in 0..self.bus_delay_series.len() {
            let _ = writeln!(
                s,
                "{t},{},{},{},{}",
                self.bus_delay_series[t],
                c[&VehicleClass::Hv][t],
                c[&VehicleClass::Cav][t],
                c[&VehicleClass::Bus][t]
            );
        }
        s
    }
}
