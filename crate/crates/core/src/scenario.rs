//! A scenario bundles the four configuration documents a simulation needs.
//!
//! ```json
//! {
//!   "label": "dsm",
//!   "workload": "workload.json",
//!   "population": "population.json",
//!   "ruleset": "ruleset.json",
//!   "network": "network.json",
//!   "forced_deferral": { "peak_window": [64800, 82800], "fraction": 0.05 }
//! }
//! ```
//!
//! Each document may be given inline or as a path relative to the scenario
//! file. The workload may instead be `{"trace": "requests.csv", "horizon_s": 86400}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{sample_profiles_for, PopulationSpec, UserProfile};
use crate::demand::{classify_shiftable, generate_workload, read_trace, Request, ShiftablePolicy, WorkloadConfig};
use crate::error::{from_json_value, ConfigError, SimError, TraceIoError};
use crate::policy::{RuleSet, TimeWindow};
use crate::sim::{index_profiles, plan_forced_deferral, ForcedPlan, NetConfig, SimReport, Simulation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedDeferralSpec {
    /// Time-of-day window whose bytes are the reference amount.
    pub peak_window: TimeWindow,
    pub fraction: f64,
    /// Only defer requests the shiftable classifier accepts.
    #[serde(default = "yes")]
    pub shiftable_only: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceSource {
    trace: String,
    horizon_s: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(default)]
    label: Option<String>,
    workload: Value,
    population: Value,
    ruleset: Value,
    network: Value,
    #[serde(default)]
    forced_deferral: Option<ForcedDeferralSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSource {
    Synthetic(WorkloadConfig),
    Trace { path: PathBuf, requests: Vec<Request>, horizon_s: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub workload: WorkloadSource,
    pub population: PopulationSpec,
    pub ruleset: RuleSet,
    pub network: NetConfig,
    pub forced_deferral: Option<ForcedDeferralSpec>,
    /// Files the scenario was assembled from, scenario file first.
    pub sources: Vec<PathBuf>,
}

/// Outcome of one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: SimReport,
    pub forced: Option<ForcedPlan>,
}

fn read_json(path: &Path, field: &str) -> Result<Value, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::new(field, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError::new(field, format!("{}: {e}", path.display())))
}

/// Resolve a document that is either inline or a path string.
fn resolve(value: Value, base: &Path, field: &str, sources: &mut Vec<PathBuf>) -> Result<Value, ConfigError> {
    match value {
        Value::String(rel) => {
            let path = base.join(rel);
            let v = read_json(&path, field)?;
            sources.push(path);
            Ok(v)
        }
        other => Ok(other),
    }
}

fn trace_error(path: &Path, err: TraceIoError) -> ConfigError {
    ConfigError::new("workload.trace", format!("{}: {err}", path.display()))
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let doc = read_json(path, "")?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(doc, base, vec![path.to_path_buf()])
    }

    /// Build from an already-parsed scenario document; relative paths are
    /// resolved against `base`.
    pub fn from_value(doc: Value, base: &Path, mut sources: Vec<PathBuf>) -> Result<Self, ConfigError> {
        let doc: ScenarioDoc = from_json_value(doc)?;

        let workload_value = resolve(doc.workload, base, "workload", &mut sources)?;
        let is_trace = workload_value.get("trace").is_some();
        let workload = if is_trace {
            let src: TraceSource = from_json_value(workload_value).map_err(|e| e.within("workload"))?;
            let path = base.join(&src.trace);
            let file = fs::File::open(&path)
                .map_err(|e| ConfigError::new("workload.trace", format!("cannot read {}: {e}", path.display())))?;
            let requests = read_trace(file).map_err(|e| trace_error(&path, e))?;
            sources.push(path.clone());
            WorkloadSource::Trace { path, requests, horizon_s: src.horizon_s }
        } else {
            let cfg: WorkloadConfig = from_json_value(workload_value).map_err(|e| e.within("workload"))?;
            cfg.validate().map_err(|e| e.within("workload"))?;
            WorkloadSource::Synthetic(cfg)
        };

        let population: PopulationSpec = from_json_value(resolve(doc.population, base, "population", &mut sources)?)
            .map_err(|e| e.within("population"))?;
        population.validate().map_err(|e| e.within("population"))?;

        let ruleset: RuleSet =
            from_json_value(resolve(doc.ruleset, base, "ruleset", &mut sources)?).map_err(|e| e.within("ruleset"))?;
        let ruleset = RuleSet::new(ruleset.rules().to_vec()).map_err(|e| e.within("ruleset"))?;

        let network: NetConfig =
            from_json_value(resolve(doc.network, base, "network", &mut sources)?).map_err(|e| e.within("network"))?;
        network.validate().map_err(|e| e.within("network"))?;

        if let Some(f) = &doc.forced_deferral {
            if !(f.fraction.is_finite() && (0.0..=1.0).contains(&f.fraction)) {
                return Err(ConfigError::new("forced_deferral.fraction", "must lie in [0, 1]"));
            }
        }

        let scenario = Scenario {
            label: doc.label.unwrap_or_else(|| "dsm".into()),
            workload,
            population,
            ruleset,
            network,
            forced_deferral: doc.forced_deferral,
            sources,
        };
        scenario.cross_validate()?;
        Ok(scenario)
    }

    fn cross_validate(&self) -> Result<(), ConfigError> {
        let net = &self.network;
        match &self.workload {
            WorkloadSource::Synthetic(cfg) => {
                if cfg.bin_s != net.bin_s {
                    return Err(ConfigError::new(
                        "network.bin_s",
                        format!("{} differs from workload.bin_s {}", net.bin_s, cfg.bin_s),
                    ));
                }
                if cfg.clock_offset_s != net.clock_offset_s {
                    return Err(ConfigError::new(
                        "network.clock_offset_s",
                        format!("{} differs from workload.clock_offset_s {}", net.clock_offset_s, cfg.clock_offset_s),
                    ));
                }
            }
            WorkloadSource::Trace { requests, horizon_s, .. } => {
                if *horizon_s == 0 || horizon_s % net.bin_s != 0 {
                    return Err(ConfigError::new("workload.horizon_s", "must be a positive multiple of network.bin_s"));
                }
                if let Some(r) = requests.iter().find(|r| r.arrival_s >= *horizon_s as f64) {
                    return Err(ConfigError::new(
                        "workload.trace",
                        format!("request {} arrives at {}s, past horizon_s", r.request_id, r.arrival_s),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn horizon_s(&self) -> u64 {
        match &self.workload {
            WorkloadSource::Synthetic(cfg) => cfg.horizon_s,
            WorkloadSource::Trace { horizon_s, .. } => *horizon_s,
        }
    }

    /// Requests for `seed`. Synthetic workloads use `seed` in place of the
    /// configured one so that a single number drives the whole run.
    pub fn requests(&self, seed: u64) -> Result<Vec<Request>, ConfigError> {
        match &self.workload {
            WorkloadSource::Synthetic(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                generate_workload(&cfg).map_err(|e| e.within("workload"))
            }
            WorkloadSource::Trace { requests, .. } => Ok(requests.clone()),
        }
    }

    pub fn profiles(&self, requests: &[Request], seed: u64) -> Result<BTreeMap<u64, UserProfile>, ConfigError> {
        let users: BTreeSet<u64> = requests.iter().map(|r| r.user_id).collect();
        sample_profiles_for(&self.population, users, seed).map(index_profiles).map_err(|e| e.within("population"))
    }

    /// Run with DSM on (rules, agents and any forced deferral) or off.
    pub fn run(&self, seed: u64, dsm: bool) -> Result<ScenarioRun, SimError> {
        let requests = self.requests(seed)?;
        self.run_on(&requests, seed, dsm)
    }

    pub fn run_on(&self, requests: &[Request], seed: u64, dsm: bool) -> Result<ScenarioRun, SimError> {
        let horizon = self.horizon_s();
        if !dsm {
            let report = Simulation::new(requests, horizon, &self.network).label("baseline").run(seed)?;
            return Ok(ScenarioRun { report, forced: None });
        }
        let profiles = self.profiles(requests, seed)?;
        let model = self.population.acceptance_model();
        let forced = self.forced_deferral.as_ref().map(|f| {
            let policy = ShiftablePolicy::default();
            plan_forced_deferral(requests, horizon, &self.network, f.peak_window, f.fraction, |r| {
                !r.live && (!f.shiftable_only || classify_shiftable(r, &policy))
            })
        });
        let mut sim = Simulation::new(requests, horizon, &self.network).with_dsm(&profiles, &self.ruleset, &model);
        if let Some(plan) = &forced {
            sim = sim.with_forced_deferrals(&plan.deferrals);
        }
        let report = sim.label(self.label.clone()).run(seed)?;
        Ok(ScenarioRun { report, forced })
    }
}
