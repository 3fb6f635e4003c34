mod compare;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use laneshare_core::experiment::{prepare, run_one, Overrides};
use laneshare_core::fleet::VehicleClass;
use laneshare_core::network::{Exclusions, LaneAccess};
use laneshare_core::router::Policy;
use laneshare_core::scenario::{Scenario, ScenarioDoc};

/// Simulate buses and CAVs sharing dedicated lanes under several routing
/// policies.
///
/// Examples:
///   laneshare validate --scenario vanness
///   laneshare simulate --scenario vanness --policy coordinated --seed 1
///   laneshare compare --scenario vanness --policies srp,drp,coordinated --seeds 1..5
#[derive(Debug, Parser)]
#[command(name = "laneshare", version, verbatim_doc_comment)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file; exits 0 only when it is clean.
    Validate {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
    },
    /// Run one policy with one seed and write the trace and reports.
    Simulate(SimulateArgs),
    /// Run a policy x seed matrix and write comparison tables.
    Compare(compare::CompareArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// srp, drp, coordinated or srp-no-joint-dl.
    #[arg(long, value_parser = parse_policy)]
    policy: Policy,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CAV share of the CAV + HV demand, in (0, 1].
    #[arg(long)]
    penetration: Option<f64>,
    /// Output directory. Defaults to `<root>/<scenario>-<policy>-s<seed>`,
    /// where the root is $LANESHARE_OUT or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Options shared by `simulate` and `compare`.
#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Simulated seconds; overrides the scenario's horizon.
    #[arg(long)]
    horizon: Option<u32>,
    /// Total CAV + HV demand in veh/h when setting a penetration.
    #[arg(long)]
    total_demand: Option<f64>,
    /// Trigger threshold: reroute when the anticipated time reaches
    /// (1 + lambda) times free flow.
    #[arg(long)]
    lambda: Option<f64>,
    /// Half-width of the DL monitoring window, seconds.
    #[arg(long)]
    window_dl: Option<u32>,
    /// Half-width of the GPL monitoring window, seconds.
    #[arg(long)]
    window_gpl: Option<u32>,
    /// Root for default output directories.
    #[arg(long, env = "LANESHARE_OUT", default_value = "out", hide_env_values = true)]
    out_root: PathBuf,
}

impl CommonArgs {
    fn overrides(&self, penetration: Option<f64>) -> Overrides {
        Overrides {
            horizon: self.horizon,
            penetration,
            total_demand: self.total_demand,
            lambda: self.lambda,
            window_dl: self.window_dl,
            window_gpl: self.window_gpl,
        }
    }
}

pub(crate) fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse::<Policy>().map_err(|_| {
        let names: Vec<_> = Policy::ALL.iter().map(|p| p.as_str()).collect();
        format!("unknown policy `{s}` (expected one of {})", names.join(", "))
    })
}

fn validate(source: &str) -> Result<ExitCode> {
    let doc = match ScenarioDoc::load(source) {
        Ok(d) => d,
        Err(e) => {
            println!("error: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    let mut problems: Vec<String> = Scenario::diagnostics(&doc).iter().map(|e| e.to_string()).collect();
    if problems.is_empty() {
        let sc = Scenario::from_doc(&doc)?;
        problems = unroutable_demand(&sc);
    }
    if problems.is_empty() {
        let sc = Scenario::from_doc(&doc)?;
        println!(
            "{source}: clean ({} nodes, {} edges, {} bus lines, {} demand streams)",
            sc.network.nodes().len(),
            sc.network.edges().len(),
            sc.lines.len(),
            sc.demand.len()
        );
        return Ok(ExitCode::SUCCESS);
    }
    for p in &problems {
        println!("error: {p}");
    }
    println!("{source}: {} problem(s)", problems.len());
    Ok(ExitCode::FAILURE)
}

/// OD pairs that the spawning class could not route even on an empty
/// network.
fn unroutable_demand(sc: &Scenario) -> Vec<String> {
    let net = &sc.network;
    let mut out = Vec::new();
    for (i, d) in sc.demand.iter().enumerate() {
        for &(o, dest) in &d.od {
            if !net.route_exists(o, dest, LaneAccess::for_class(d.class, true), &Exclusions::none()) {
                out.push(format!(
                    "demand {i}: no {} route from node {} to node {}",
                    d.class.as_str(),
                    net.label(o),
                    net.label(dest)
                ));
            }
        }
    }
    out
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let overrides = args.common.overrides(args.penetration);
    let (doc, sc) = prepare(&args.common.scenario, &overrides)?;
    let dir = args.out.clone().unwrap_or_else(|| {
        args.common
            .out_root
            .join(format!("{}-{}-s{}", output::slug(&sc.name), args.policy.as_str(), args.seed))
    });
    output::write_config(&dir, &args.common.scenario, &doc, &[args.policy], &[args.seed], &overrides)?;
    let run = run_one(&sc, args.policy, args.seed).context("simulation aborted")?;
    output::write_run(&dir, &run, true)?;

    let m = &run.metrics;
    println!(
        "{} / {} / seed {}: horizon {} s, run ended at {} s",
        sc.name,
        args.policy.as_str(),
        args.seed,
        m.horizon,
        m.end
    );
    println!("  bus delay (sum at terminal): {:.0} s over {} buses", m.bus_delay_total, m.buses);
    let on_time: Vec<String> = m
        .stations
        .iter()
        .map(|s| format!("{:.0}%", s.on_time_pct))
        .collect();
    println!("  on-time by station: {}", on_time.join(" "));
    for c in [VehicleClass::Bus, VehicleClass::Cav, VehicleClass::Hv] {
        let s = m.class(c);
        println!(
            "  {:3}: {} spawned, {} completed, cumulative {:.0} veh-s, p90 {}",
            c.as_str(),
            s.spawned,
            s.completed,
            s.cumulative_travel_time,
            s.p90_travel_time.map_or("-".into(), |x| format!("{x:.0} s"))
        );
    }
    println!("  wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { scenario } => validate(scenario),
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare::run(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub(crate) fn check_nonempty<T>(what: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        bail!("{what} must not be empty");
    }
    Ok(())
}
