//! Policy x seed matrices and the tables derived from them.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use laneshare_core::experiment::{prepare, run_one, RunResult};
use laneshare_core::fleet::VehicleClass;
use laneshare_core::router::Policy;
use laneshare_core::scenario::Scenario;
use rayon::prelude::*;

use crate::output::{slug, write_config, write_file, write_run};
use crate::{check_nonempty, parse_policy, CommonArgs};

const CLASSES: [VehicleClass; 3] = [VehicleClass::Bus, VehicleClass::Cav, VehicleClass::Hv];

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated policies, at least two.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy,
          default_value = "srp,drp,coordinated,srp-no-joint-dl")]
    policies: Vec<Policy>,
    /// Seeds as a list (`1,2,7`) or an inclusive range (`1..5`).
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    seeds: SeedList,
    /// CAV share applied to the main matrix, in (0, 1].
    #[arg(long)]
    penetration: Option<f64>,
    /// Comma-separated CAV shares for a penetration sweep, e.g. 0.1,0.3,0.5.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    /// Also write each run's event trace.
    #[arg(long)]
    traces: bool,
    /// Output directory. Defaults to `<root>/compare-<scenario>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = || format!("invalid seed list `{s}`");
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(SeedList(seeds))
}

struct Cell {
    policy: Policy,
    seed: u64,
    penetration: Option<f64>,
}

struct Failure {
    policy: Policy,
    seed: u64,
    penetration: Option<f64>,
    error: String,
}

fn run_cells(sc: &Scenario, cells: &[Cell]) -> (Vec<RunResult>, Vec<Failure>) {
    let results: Vec<_> = cells
        .par_iter()
        .map(|c| run_one(sc, c.policy, c.seed).map_err(|e| (c, e.to_string())))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(run) => ok.push(run),
            Err((c, error)) => failed.push(Failure {
                policy: c.policy,
                seed: c.seed,
                penetration: c.penetration,
                error,
            }),
        }
    }
    (ok, failed)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

fn of(runs: &[RunResult], p: Policy) -> Vec<&RunResult> {
    runs.iter().filter(|r| r.policy == p).collect()
}

/// Mean on-time % per station, rows per policy.
fn on_time_table(runs: &[RunResult], policies: &[Policy]) -> String {
    let stations = runs.first().map_or(0, |r| r.metrics.stations.len());
    let mut s = String::from("policy,runs");
    for i in 1..=stations {
        let _ = write!(s, ",station_{i}");
    }
    s.push_str(",average\n");
    for &p in policies {
        let rs = of(runs, p);
        let _ = write!(s, "{},{}", p.as_str(), rs.len());
        for i in 0..stations {
            let _ = write!(s, ",{}", cell(mean(rs.iter().map(|r| r.metrics.stations[i].on_time_pct))));
        }
        let _ = writeln!(s, ",{}", cell(mean(rs.iter().map(|r| r.metrics.station_average_on_time()))));
    }
    s
}

/// Seed-mean headline metrics per policy.
fn summary(runs: &[RunResult], policies: &[Policy]) -> String {
    let mut s = String::from("policy,runs,bus_delay_total_s");
    for c in CLASSES {
        let n = c.as_str();
        let _ = write!(s, ",cum_{n}_s,p90_{n}_s,mean_travel_{n}_s,mean_delay_{n}_s");
    }
    s.push('\n');
    for &p in policies {
        let rs = of(runs, p);
        let _ = write!(
            s,
            "{},{},{}",
            p.as_str(),
            rs.len(),
            cell(mean(rs.iter().map(|r| r.metrics.bus_delay_total)))
        );
        for c in CLASSES {
            let get = |f: fn(&laneshare_core::metrics::ClassSummary) -> Option<f64>| {
                cell(mean(rs.iter().filter_map(|r| f(r.metrics.class(c)))))
            };
            let _ = write!(
                s,
                ",{},{},{},{}",
                get(|x| Some(x.cumulative_travel_time)),
                get(|x| x.p90_travel_time),
                get(|x| x.mean_travel_time),
                get(|x| x.mean_trip_delay)
            );
        }
        s.push('\n');
    }
    s
}

/// One row per run, so every table cell can be traced to its runs.
fn per_run(runs: &[RunResult], penetration: Option<f64>) -> String {
    let mut s = String::new();
    for r in runs {
        let m = &r.metrics;
        let _ = write!(
            s,
            "{},{},{},{:.3},{:.3}",
            r.policy.as_str(),
            r.seed,
            penetration.map(|p| p.to_string()).unwrap_or_default(),
            m.station_average_on_time(),
            m.bus_delay_total
        );
        for c in CLASSES {
            let x = m.class(c);
            let _ = write!(
                s,
                ",{},{},{:.1},{},{}",
                x.spawned,
                x.completed,
                x.cumulative_travel_time,
                cell(x.p90_travel_time),
                cell(x.mean_trip_delay)
            );
        }
        s.push('\n');
    }
    s
}

fn per_run_header() -> String {
    let mut s = String::from("policy,seed,penetration,on_time_avg_pct,bus_delay_total_s");
    for c in CLASSES {
        let n = c.as_str();
        let _ = write!(s, ",spawned_{n},completed_{n},cum_{n}_s,p90_{n}_s,mean_delay_{n}_s");
    }
    s.push('\n');
    s
}

/// Seed-mean time series up to the horizon, long format.
fn series(runs: &[RunResult], policies: &[Policy]) -> String {
    let mut s = String::from("policy,t,bus_delay_s,cum_hv_s,cum_cav_s,cum_bus_s\n");
    for &p in policies {
        let rs = of(runs, p);
        let Some(first) = rs.first() else { continue };
        let ticks = first.metrics.horizon as usize + 1;
        let at = |v: &[f64], t: usize| v[t.min(v.len() - 1)];
        for t in 0..ticks {
            let m = |f: &dyn Fn(&RunResult) -> f64| cell(mean(rs.iter().map(|r| f(r))));
            let _ = writeln!(
                s,
                "{},{t},{},{},{},{}",
                p.as_str(),
                m(&|r| at(&r.metrics.bus_delay_series, t)),
                m(&|r| at(&r.metrics.cumulative[&VehicleClass::Hv], t)),
                m(&|r| at(&r.metrics.cumulative[&VehicleClass::Cav], t)),
                m(&|r| at(&r.metrics.cumulative[&VehicleClass::Bus], t))
            );
        }
    }
    s
}

fn failures_csv(failures: &[Failure]) -> String {
    let mut s = String::from("policy,seed,penetration,error\n");
    for f in failures {
        let _ = writeln!(
            s,
            "{},{},{},\"{}\"",
            f.policy.as_str(),
            f.seed,
            f.penetration.map(|p| p.to_string()).unwrap_or_default(),
            f.error.replace('"', "'")
        );
    }
    s
}

pub fn run(args: &CompareArgs) -> Result<ExitCode> {
    let mut policies: Vec<Policy> = Vec::new();
    for &p in &args.policies {
        if !policies.contains(&p) {
            policies.push(p);
        }
    }
    if policies.len() < 2 {
        bail!("compare needs at least two policies");
    }
    let seeds = &args.seeds.0;
    check_nonempty("--seeds", seeds)?;
    let overrides = args.common.overrides(args.penetration);
    let (doc, sc) = prepare(&args.common.scenario, &overrides)?;
    for &p in &args.sweep {
        args.common.overrides(Some(p)).validate()?;
    }
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| args.common.out_root.join(format!("compare-{}", slug(&sc.name))));
    write_config(&dir, &args.common.scenario, &doc, &policies, seeds, &overrides)?;

    let cells: Vec<Cell> = policies
        .iter()
        .flat_map(|&policy| {
            seeds.iter().map(move |&seed| Cell {
                policy,
                seed,
                penetration: args.penetration,
            })
        })
        .collect();
    let (runs, mut failures) = run_cells(&sc, &cells);
    for r in &runs {
        write_run(&dir.join("runs").join(format!("{}-s{}", r.policy.as_str(), r.seed)), r, args.traces)?;
    }
    write_file(&dir.join("on_time.csv"), &on_time_table(&runs, &policies))?;
    write_file(&dir.join("summary.csv"), &summary(&runs, &policies))?;
    write_file(&dir.join("series.csv"), &series(&runs, &policies))?;
    let mut runs_csv = per_run_header();
    runs_csv.push_str(&per_run(&runs, args.penetration));

    if !args.sweep.is_empty() {
        let mut sweep = String::from("policy,penetration,runs,class,mean_trip_delay_s,p90_travel_time_s\n");
        for &pen in &args.sweep {
            let o = args.common.overrides(Some(pen));
            let (sdoc, ssc) = prepare(&args.common.scenario, &o)?;
            let sub = dir.join("sweep").join(format!("p{pen}"));
            write_config(&sub, &args.common.scenario, &sdoc, &policies, seeds, &o)?;
            let cells: Vec<Cell> = policies
                .iter()
                .flat_map(|&policy| {
                    seeds.iter().map(move |&seed| Cell {
                        policy,
                        seed,
                        penetration: Some(pen),
                    })
                })
                .collect();
            let (sruns, sfail) = run_cells(&ssc, &cells);
            failures.extend(sfail);
            for r in &sruns {
                write_run(&sub.join("runs").join(format!("{}-s{}", r.policy.as_str(), r.seed)), r, args.traces)?;
            }
            runs_csv.push_str(&per_run(&sruns, Some(pen)));
            for &p in &policies {
                let rs = of(&sruns, p);
                for c in CLASSES {
                    let _ = writeln!(
                        sweep,
                        "{},{pen},{},{},{},{}",
                        p.as_str(),
                        rs.len(),
                        c.as_str(),
                        cell(mean(rs.iter().filter_map(|r| r.metrics.class(c).mean_trip_delay))),
                        cell(mean(rs.iter().filter_map(|r| r.metrics.class(c).p90_travel_time)))
                    );
                }
            }
        }
        write_file(&dir.join("penetration.csv"), &sweep)?;
    }
    write_file(&dir.join("runs.csv"), &runs_csv)?;

    print!("{}", on_time_table(&runs, &policies).replace(',', "\t"));
    let total = cells.len() * (1 + args.sweep.len());
    println!("{} of {total} runs succeeded; wrote {}", total - failures.len(), dir.display());
    if failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    write_file(&dir.join("failures.csv"), &failures_csv(&failures))?;
    for f in &failures {
        eprintln!("failed: {} seed {}: {}", f.policy.as_str(), f.seed, f.error);
    }
    Ok(ExitCode::from(3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..5").unwrap().0, vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3").unwrap().0, vec![3]);
        assert_eq!(parse_seeds("2, 7,9").unwrap().0, vec![2, 7, 9]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("").is_err());
    }
}
