//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use laneshare_core::audit::audit_trace;
use laneshare_core::experiment::{run_one, Overrides, RunResult};
use laneshare_core::flowmodel::{anticipated_dl_flow, anticipated_gpl_flow, bpr_time, BprParams, MonitorWindow};
use laneshare_core::fleet::VehicleClass;
use laneshare_core::network::{LaneClass, NodeId};
use laneshare_core::router::{prediction_aware_shortest_path, Policy};
use laneshare_core::scenario::Scenario;
use laneshare_core::sim::{simulate, write_trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const BPR_REL_TOL: f64 = 1e-12;
const SP_NETWORKS: usize = 1_000;
const FLOW_SNAPSHOTS: usize = 1_000;
const COORD_MIN_ON_TIME: f64 = 80.0;
const SRP_MAX_AVG_ON_TIME: f64 = 40.0;
const ORDERED_SEEDS_NEEDED: usize = 4;
const DELAY_RATIO_MAX: f64 = 0.25;
const PENETRATIONS: [f64; 3] = [0.1, 0.3, 0.5];
const SWEEP_DEMAND: f64 = 2_000.0;
const BUS_P90_BAND: f64 = 0.10;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn bpr_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = BprParams {
        alpha: 0.15,
        beta: 4.0,
    };
    let mut worst = 0.0f64;
    let mut zero_exact = true;
    for _ in 0..10_000 {
        let tau0 = rng.gen_range(0.01..1_000.0);
        let c = rng.gen_range(1e-3..10.0);
        let t = bpr_time(tau0, c, c, &p).unwrap();
        worst = worst.max(((t - 1.15 * tau0) / (1.15 * tau0)).abs());
        zero_exact &= bpr_time(tau0, 0.0, c, &p).unwrap() == tau0;
    }
    Outcome {
        name: "1 BPR exactness",
        pass: worst <= BPR_REL_TOL && zero_exact,
        detail: format!("max rel err {worst:.2e}, zero flow exact: {zero_exact}"),
    }
}

fn shortest_path_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut queries, mut with_exclusions, mut infeasible, mut mismatches) = (0, 0, 0, 0);
    for _ in 0..SP_NETWORKS {
        let net = random_network(&mut rng, 8);
        let costs = random_costs(&mut rng, &net);
        let n = net.nodes().len() as u32;
        for q in 0..6 {
            let (ex, banned) = if q < 3 {
                (Default::default(), Default::default())
            } else {
                random_exclusions(&mut rng, &net)
            };
            if !banned.is_empty() {
                with_exclusions += 1;
            }
            let access = random_access(&mut rng);
            let (from, to) = (NodeId(rng.gen_range(0..n)), NodeId(rng.gen_range(0..n)));
            let got = prediction_aware_shortest_path(&net, &costs, from, to, access, &ex)
                .ok()
                .map(|(_, c)| c);
            let want = exhaustive_min_cost(&net, &costs, from, to, access, &banned);
            infeasible += want.is_none() as usize;
            mismatches += (got != want) as usize;
            queries += 1;
        }
    }
    Outcome {
        name: "2 shortest-path oracle",
        pass: mismatches == 0,
        detail: format!(
            "{SP_NETWORKS} networks, {queries} queries ({with_exclusions} with exclusions, {infeasible} infeasible), {mismatches} mismatches"
        ),
    }
}

fn flow_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut checks, mut mismatches) = (0, 0);
    for _ in 0..FLOW_SNAPSHOTS {
        let net = random_network(&mut rng, 8);
        let t = rng.gen_range(0..20_000);
        let fleet = random_fleet(&mut rng, &net, t);
        let (log, hv) = random_hv_log(&mut rng, &net, t);
        let hw = rng.gen_range(1..=60);
        let w = MonitorWindow::new(t, hw);
        for lane in net.lane_refs() {
            let cav = brute_cav_count(&fleet, lane, t, hw) as f64;
            let (got, want) = match lane.class {
                LaneClass::JointDl => (anticipated_dl_flow(&fleet, &w, lane), cav / (2.0 * hw as f64)),
                LaneClass::Gpl => (
                    anticipated_gpl_flow(&net, &fleet, &log, &w, lane).unwrap(),
                    (cav + 2.0 * brute_hv_count(&hv[lane.edge.index()], t, hw) as f64) / (2.0 * hw as f64),
                ),
            };
            mismatches += (got != want) as usize;
            checks += 1;
        }
    }
    Outcome {
        name: "3 flow-estimate oracle",
        pass: mismatches == 0,
        detail: format!("{FLOW_SNAPSHOTS} snapshots, {checks} lane estimates, {mismatches} mismatches"),
    }
}

fn trace_bytes(sc: &Scenario, policy: Policy, seed: u64) -> Vec<u8> {
    let out = simulate(sc, policy, seed).unwrap();
    let mut buf = Vec::new();
    write_trace(&out.trace, &mut buf).unwrap();
    buf
}

fn determinism(sc: &Scenario) -> Outcome {
    let same: Vec<(Policy, bool, usize)> = std::thread::scope(|s| {
        let hs: Vec<_> = Policy::ALL
            .iter()
            .map(|&p| s.spawn(move || (p, trace_bytes(sc, p, 1), trace_bytes(sc, p, 1))))
            .collect();
        hs.into_iter()
            .map(|h| {
                let (p, a, b) = h.join().unwrap();
                (p, a == b, a.len())
            })
            .collect()
    });
    Outcome {
        name: "4 determinism",
        pass: same.iter().all(|x| x.1),
        detail: same
            .iter()
            .map(|(p, ok, n)| format!("{}={}({} B)", p.as_str(), if *ok { "same" } else { "DIFF" }, n))
            .collect::<Vec<_>>()
            .join(" "),
    }
}

fn run_matrix(sc: &Scenario, policies: &[Policy]) -> Vec<RunResult> {
    std::thread::scope(|s| {
        let hs: Vec<_> = policies
            .iter()
            .flat_map(|&p| SEEDS.iter().map(move |&seed| (p, seed)))
            .map(|(p, seed)| s.spawn(move || run_one(sc, p, seed).unwrap()))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

struct Matrix<'a>(&'a [RunResult]);

impl Matrix<'_> {
    fn runs(&self, p: Policy) -> impl Iterator<Item = &RunResult> {
        self.0.iter().filter(move |r| r.policy == p)
    }

    fn seed(&self, p: Policy, seed: u64) -> &RunResult {
        self.runs(p).find(|r| r.seed == seed).unwrap()
    }

    fn mean(&self, p: Policy, f: impl Fn(&RunResult) -> f64) -> f64 {
        mean(self.runs(p).map(f))
    }

    fn p90(&self, p: Policy, c: VehicleClass) -> f64 {
        self.mean(p, |r| r.metrics.class(c).p90_travel_time.unwrap())
    }
}

fn on_time_bands(m: &Matrix) -> Outcome {
    let station = |p, i: usize| m.mean(p, |r: &RunResult| r.metrics.stations[i].on_time_pct);
    let coord: Vec<f64> = (0..3).map(|i| station(Policy::Coordinated, i)).collect();
    let srp_avg = m.mean(Policy::Srp, |r| r.metrics.station_average_on_time());
    let ordered = SEEDS
        .iter()
        .filter(|&&s| {
            let avg = |p| m.seed(p, s).metrics.station_average_on_time();
            avg(Policy::Srp) < avg(Policy::Drp) && avg(Policy::Drp) < avg(Policy::Coordinated)
        })
        .count();
    let buses = m.seed(Policy::Srp, 1).metrics.buses;
    let row = |p| {
        (0..3)
            .map(|i| format!("{:.0}", station(p, i)))
            .collect::<Vec<_>>()
            .join("/")
    };
    Outcome {
        name: "5 on-time bands",
        pass: buses == 10
            && coord.iter().all(|&x| x >= COORD_MIN_ON_TIME)
            && srp_avg <= SRP_MAX_AVG_ON_TIME
            && ordered >= ORDERED_SEEDS_NEEDED,
        detail: format!(
            "{buses} buses; srp {} (avg {srp_avg:.1}), drp {}, coordinated {}; ordered in {ordered}/5 seeds",
            row(Policy::Srp),
            row(Policy::Drp),
            row(Policy::Coordinated)
        ),
    }
}

fn bus_delay(m: &Matrix) -> Outcome {
    let d = |p| m.mean(p, |r| r.metrics.bus_delay_total);
    let (srp, coord) = (d(Policy::Srp), d(Policy::Coordinated));
    Outcome {
        name: "6 accumulated bus delay",
        pass: srp > 0.0 && coord <= DELAY_RATIO_MAX * srp,
        detail: format!("coordinated {coord:.0} s vs srp {srp:.0} s (ratio {:.3})", coord / srp),
    }
}

fn cav_cumulative(m: &Matrix) -> Outcome {
    let c = |p| m.mean(p, |r| r.metrics.class(VehicleClass::Cav).cumulative_travel_time);
    let (coord, srp, drp) = (c(Policy::Coordinated), c(Policy::Srp), c(Policy::Drp));
    Outcome {
        name: "7 cumulative CAV time ordering",
        pass: coord < srp && srp < drp,
        detail: format!("coordinated {coord:.0} < srp {srp:.0} < drp {drp:.0} veh-s"),
    }
}

fn penetration_trend(delays: &[f64]) -> Outcome {
    Outcome {
        name: "8 HV delay vs penetration",
        pass: delays.windows(2).all(|w| w[1] <= w[0]),
        detail: PENETRATIONS
            .iter()
            .zip(delays)
            .map(|(p, d)| format!("{:.0}%: {d:.1} s", p * 100.0))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn percentiles(m: &Matrix) -> Outcome {
    use VehicleClass::*;
    let (nj, srp, co) = (Policy::SrpNoJointDl, Policy::Srp, Policy::Coordinated);
    let checks = [
        ("srp cav < no-joint", m.p90(srp, Cav) < m.p90(nj, Cav)),
        ("srp hv < no-joint", m.p90(srp, Hv) < m.p90(nj, Hv)),
        ("srp bus > no-joint", m.p90(srp, Bus) > m.p90(nj, Bus)),
        (
            "coord bus within 10%",
            (m.p90(co, Bus) - m.p90(nj, Bus)).abs() <= BUS_P90_BAND * m.p90(nj, Bus),
        ),
        ("coord cav < srp", m.p90(co, Cav) < m.p90(srp, Cav)),
        ("coord hv < srp", m.p90(co, Hv) < m.p90(srp, Hv)),
    ];
    let row = |p| format!("{:.0}/{:.0}/{:.0}", m.p90(p, Bus), m.p90(p, Cav), m.p90(p, Hv));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome {
        name: "9 p90 travel times",
        pass: failed.is_empty(),
        detail: format!(
            "bus/cav/hv no-joint {}, srp {}, coordinated {}{}",
            row(nj),
            row(srp),
            row(co),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    }
}

fn main() {
    let started = Instant::now();
    let sc = Scenario::load("vanness").unwrap();
    assert_eq!(sc.params.horizon, 3600);
    let rate = |c| -> f64 { sc.demand.iter().filter(|d| d.class == c).map(|d| d.rate_per_min).sum() };
    assert_eq!((rate(VehicleClass::Cav), rate(VehicleClass::Hv)), (8.0, 20.0));

    let mut outcomes = vec![bpr_exactness(), shortest_path_oracle(), flow_oracle(), determinism(&sc)];

    let runs = run_matrix(&sc, &Policy::ALL);
    let m = Matrix(&runs);
    outcomes.push(on_time_bands(&m));
    outcomes.push(bus_delay(&m));
    outcomes.push(cav_cumulative(&m));

    let mut sweep: BTreeMap<usize, Vec<RunResult>> = BTreeMap::new();
    for (i, &pen) in PENETRATIONS.iter().enumerate() {
        let s = Overrides {
            penetration: Some(pen),
            total_demand: Some(SWEEP_DEMAND),
            ..Default::default()
        }
        .apply(&sc)
        .unwrap();
        sweep.insert(i, run_matrix(&s, &[Policy::Coordinated]));
    }
    let hv_delay: Vec<f64> = sweep
        .values()
        .map(|rs| mean(rs.iter().map(|r| r.metrics.class(VehicleClass::Hv).mean_trip_delay.unwrap())))
        .collect();
    outcomes.push(penetration_trend(&hv_delay));
    outcomes.push(percentiles(&m));

    // Every trace produced above goes through the auditor.
    let mut audited = 0;
    let mut failures = Vec::new();
    let mut assertions = 0u64;
    let mut check = |sc: &Scenario, r: &RunResult| {
        let rep = audit_trace(sc, &r.trace);
        audited += 1;
        assertions += rep.assertions.values().sum::<u64>();
        if !rep.is_clean() {
            failures.push(format!(
                "{} seed {}: {}",
                r.policy.as_str(),
                r.seed,
                rep.violations[0].detail
            ));
        }
    };
    for r in &runs {
        check(&sc, r);
    }
    for (i, rs) in &sweep {
        let s = Overrides {
            penetration: Some(PENETRATIONS[*i]),
            total_demand: Some(SWEEP_DEMAND),
            ..Default::default()
        }
        .apply(&sc)
        .unwrap();
        for r in rs {
            check(&s, r);
        }
    }
    outcomes.push(Outcome {
        name: "10 trace audit",
        pass: failures.is_empty(),
        detail: format!(
            "{audited} traces, {assertions} assertions, {} failing{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    });

    let mut failed = 0;
    for o in &outcomes {
        println!("{} {:32} {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += !o.pass as usize;
    }
    println!(
        "{} of {} criteria passed in {:.1} s",
        outcomes.len() - failed,
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
