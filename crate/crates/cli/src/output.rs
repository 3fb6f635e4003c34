//! Files written next to every run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use laneshare_core::experiment::{Overrides, RunResult};
use laneshare_core::router::Policy;
use laneshare_core::scenario::ScenarioDoc;
use laneshare_core::sim::write_trace;

pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    if s.is_empty() {
        "scenario".into()
    } else {
        s
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes `scenario.toml` (the effective scenario, overrides applied and
/// defaults filled in) and `run.toml` (everything else needed to repeat
/// the run).
pub fn write_config(
    dir: &Path,
    source: &str,
    doc: &ScenarioDoc,
    policies: &[Policy],
    seeds: &[u64],
    overrides: &Overrides,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("scenario.toml"), &doc.to_toml())?;

    let mut run = toml::Table::new();
    run.insert("laneshare_version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("scenario_source".into(), source.into());
    run.insert("scenario_file".into(), "scenario.toml".into());
    run.insert(
        "policies".into(),
        toml::Value::Array(policies.iter().map(|p| p.as_str().into()).collect()),
    );
    run.insert(
        "seeds".into(),
        toml::Value::Array(seeds.iter().map(|&s| (s as i64).into()).collect()),
    );
    let mut root = toml::Table::new();
    root.insert("run".into(), run.into());
    // Already folded into scenario.toml; kept for reference.
    root.insert("overrides".into(), toml::Value::try_from(overrides)?);
    write_file(&dir.join("run.toml"), &toml::to_string_pretty(&root)?)
}

/// Writes the per-run CSV reports and, when asked, the event trace.
pub fn write_run(dir: &Path, run: &RunResult, trace: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if trace {
        let path = dir.join("trace.jsonl");
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write_trace(&run.trace, &mut f)?;
        f.flush()?;
    }
    let m = &run.metrics;
    write_file(&dir.join("classes.csv"), &m.classes_csv())?;
    write_file(&dir.join("stations.csv"), &m.stations_csv())?;
    write_file(&dir.join("series.csv"), &m.series_csv())
}
