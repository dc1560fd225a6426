use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use staggercast::policy::RuleSet;
use staggercast::scenario::{Scenario, ScenarioRun};
use staggercast::ConfigError;
use staggercast_proxy::ProxyConfig;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// One seed or an inclusive range of seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub first: u64,
    pub last: u64,
}

impl Seeds {
    pub fn iter(self) -> impl Iterator<Item = u64> {
        self.first..=self.last
    }

    pub fn is_single(self) -> bool {
        self.first == self.last
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
        match s.split_once("..") {
            None => num(s).map(|n| Seeds { first: n, last: n }),
            Some((a, b)) => {
                let (first, last) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
                if first > last {
                    return Err(format!("empty seed range {s}"));
                }
                Ok(Seeds { first, last })
            }
        }
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_single() {
            write!(f, "{}", self.first)
        } else {
            write!(f, "{}..{}", self.first, self.last)
        }
    }
}

pub struct Options {
    pub config: PathBuf,
    pub seeds: Seeds,
    pub out: PathBuf,
    pub force: bool,
    pub dsm: bool,
    pub label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub label: String,
    pub dsm: bool,
    pub version: String,
    pub sources: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    /// Per-seed subdirectory, or `.` for a single-seed run.
    pub layout: String,
    pub output_dir: PathBuf,
    pub started_unix_s: u64,
    #[serde(default)]
    pub finished_unix_s: Option<u64>,
}

impl Manifest {
    pub fn seed_dir(&self, run_dir: &Path, seed: u64) -> PathBuf {
        if self.layout == "." {
            run_dir.to_path_buf()
        } else {
            run_dir.join(format!("seed-{seed}"))
        }
    }
}

#[derive(Serialize)]
struct ForcedSummary {
    window_bytes: u64,
    target_bytes: u64,
    deferred_bytes: u64,
    deferred_requests: usize,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Refuse to overwrite a previous run unless forced, and never remove a
/// directory that does not hold one.
fn prepare_out(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() {
        let holds_run = out.join(MANIFEST).is_file();
        if holds_run && force {
            fs::remove_dir_all(out)?;
        } else if holds_run {
            return Err(CliError::runtime(format!(
                "{} already holds a run; pass --force to replace it",
                out.display()
            )));
        } else if fs::read_dir(out)?.next().is_some() {
            return Err(CliError::runtime(format!("{} exists and is not empty", out.display())));
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_run(dir: &Path, run: &ScenarioRun) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), run.report.summary_json())?;
    fs::write(dir.join("series.csv"), run.report.series_csv())?;
    fs::write(dir.join("dispositions.csv"), run.report.dispositions_csv())?;
    if let Some(plan) = &run.forced {
        let forced = ForcedSummary {
            window_bytes: plan.window_bytes,
            target_bytes: plan.target_bytes,
            deferred_bytes: plan.deferred_bytes,
            deferred_requests: plan.deferrals.len(),
        };
        write_json(&dir.join("forced.json"), &forced)?;
    }
    Ok(())
}

pub fn run(opts: &Options) -> Result<(), CliError> {
    let scenario = Scenario::load(&opts.config)?;
    let label =
        opts.label.clone().unwrap_or_else(|| if opts.dsm { scenario.label.clone() } else { "baseline".to_string() });
    prepare_out(&opts.out, opts.force)?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let mut manifest = Manifest {
        run_id: format!("{label}-{}-{:08x}", started.as_secs(), started.subsec_nanos() ^ std::process::id()),
        label: label.clone(),
        dsm: opts.dsm,
        version: env!("STAGGERCAST_VERSION").to_string(),
        sources: scenario.sources.clone(),
        seeds: opts.seeds.iter().collect(),
        layout: if opts.seeds.is_single() { ".".into() } else { "seed-{seed}".into() },
        output_dir: opts.out.clone(),
        started_unix_s: started.as_secs(),
        finished_unix_s: None,
    };
    let manifest_path = opts.out.join(MANIFEST);
    write_json(&manifest_path, &manifest)?;

    log::info!("running {} seed(s) of {}", manifest.seeds.len(), opts.config.display());
    manifest.seeds.par_iter().try_for_each(|&seed| -> Result<(), CliError> {
        let mut run = scenario.run(seed, opts.dsm)?;
        run.report.summary.label = label.clone();
        write_run(&manifest.seed_dir(&opts.out, seed), &run)?;
        log::info!(
            "seed {seed}: transit peak/mean {:?}, acceptance {:?}",
            run.report.summary.peak_to_mean.transit,
            run.report.summary.acceptance_rate
        );
        Ok(())
    })?;

    manifest.finished_unix_s = Some(unix_now());
    write_json(&manifest_path, &manifest)?;
    println!("wrote {} run(s) to {}", manifest.seeds.len(), opts.out.display());
    Ok(())
}

fn read(path: &Path, field: &str) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(ConfigError::new(field, format!("cannot read {}: {e}", path.display()))))
}

/// Check each given file; returns how many were checked.
pub fn validate(scenario: Option<&Path>, proxy: Option<&Path>, ruleset: Option<&Path>) -> Result<usize, CliError> {
    let mut checked = 0;
    if let Some(path) = scenario {
        Scenario::load(path)?;
        checked += 1;
    }
    if let Some(path) = proxy {
        ProxyConfig::from_json(&read(path, "")?)?;
        checked += 1;
    }
    if let Some(path) = ruleset {
        RuleSet::from_json(&read(path, "")?)?;
        checked += 1;
    }
    if checked == 0 {
        return Err(CliError::runtime("nothing to validate; pass --config, --proxy-config or --ruleset"));
    }
    Ok(checked)
}
