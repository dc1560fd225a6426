//! Browser bindings for three operations: simulate one day with and without
//! demand-side management, summarize a sampled survey population, and preview
//! how a listing page is reordered when some titles are cached.
//!
//! Every function returns a JSON string (or HTML for the preview) so the page
//! needs no generated type bindings.

use std::path::Path;

use serde_json::{json, Value};
use staggercast::agents::{sample_population, PopulationSpec, Propensity, VideoDelayAttitude};
use staggercast::demand::Genre;
use staggercast::rewrite::{rewrite_html, RewriteSpec};
use staggercast::scenario::Scenario;
use staggercast::sim::{Resource, SimReport};
use wasm_bindgen::prelude::*;

const WORKLOAD: &str = include_str!("../../../configs/workload.json");
const POPULATION: &str = include_str!("../../../configs/population.json");
const RULESET: &str = include_str!("../../../configs/ruleset.json");
const NETWORK: &str = include_str!("../../../configs/network.json");

/// Population the shipped network capacities are sized for.
const REFERENCE_POPULATION: u64 = 10_000;

fn parse(text: &str) -> Value {
    serde_json::from_str(text).expect("bundled config is valid JSON")
}

fn scale(v: &mut Value, factor: f64) {
    if let Some(n) = v.as_u64() {
        *v = json!(((n as f64 * factor).round() as u64).max(1));
    }
}

/// Shipped scenario resized to `population` users, with capacities scaled to match.
fn scenario(population: u64, shift_fraction: f64, rules: bool) -> Result<Scenario, String> {
    let mut workload = parse(WORKLOAD);
    workload["population_size"] = json!(population);
    let mut network = parse(NETWORK);
    let factor = population as f64 / REFERENCE_POPULATION as f64;
    scale(&mut network["resources"]["transit"]["capacity_bytes_per_bin"], factor);
    scale(&mut network["resources"]["aggregation"]["capacity_bytes_per_bin"], factor);
    scale(&mut network["caches"]["edge_capacity_bytes"], factor);
    scale(&mut network["prefetch_budget_bytes_per_bin"], factor);
    let mut doc = json!({
        "label": "dsm",
        "workload": workload,
        "population": parse(POPULATION),
        "ruleset": if rules { parse(RULESET) } else { json!([]) },
        "network": network,
    });
    if shift_fraction > 0.0 {
        doc["forced_deferral"] = json!({ "peak_window": [64800, 82800], "fraction": shift_fraction });
    }
    Scenario::from_value(doc, Path::new("."), Vec::new()).map_err(|e| e.to_string())
}

fn series(report: &SimReport) -> Vec<u64> {
    report.load_series(Resource::Transit)
}

/// Run one day twice, baseline and with management, on the same requests.
pub fn simulate_day_json(population: u32, seed: u32, shift_percent: f64, rules: bool) -> Result<String, String> {
    if !(1..=50_000).contains(&population) {
        return Err("population must be between 1 and 50000".into());
    }
    if !(0.0..=50.0).contains(&shift_percent) {
        return Err("shift must be between 0 and 50 percent".into());
    }
    let scenario = scenario(u64::from(population), shift_percent / 100.0, rules)?;
    let seed = u64::from(seed);
    let requests = scenario.requests(seed).map_err(|e| e.to_string())?;
    let base = scenario.run_on(&requests, seed, false).map_err(|e| e.to_string())?.report;
    let dsm = scenario.run_on(&requests, seed, true).map_err(|e| e.to_string())?;
    let s = &dsm.report.summary;
    Ok(json!({
        "requests": requests.len(),
        "bin_s": s.bin_s,
        "clock_offset_s": scenario.network.clock_offset_s,
        "capacity": scenario.network.resources.transit.capacity_bytes_per_bin,
        "baseline": series(&base),
        "dsm": series(&dsm.report),
        "baseline_peak_to_mean": base.summary.peak_to_mean.transit,
        "dsm_peak_to_mean": s.peak_to_mean.transit,
        "offers": s.offers_made,
        "accepted": s.offers_accepted,
        "forced_deferred_bytes": dsm.forced.as_ref().map(|f| f.deferred_bytes),
        "cache_hit_ratio": s.cache_hit_ratio,
    })
    .to_string())
}

/// Category fractions of `n` sampled survey profiles.
pub fn population_summary_json(n: u32, seed: u32) -> Result<String, String> {
    if !(1..=100_000).contains(&n) {
        return Err("n must be between 1 and 100000".into());
    }
    let spec = PopulationSpec::default();
    let profiles = sample_population(&spec, u64::from(n), u64::from(seed)).map_err(|e| e.to_string())?;
    let frac = |f: &dyn Fn(&staggercast::agents::UserProfile) -> bool| {
        profiles.iter().filter(|p| f(p)).count() as f64 / profiles.len() as f64
    };
    Ok(json!({
        "n": n,
        "timeshift_never": frac(&|p| p.timeshift_propensity == Propensity::Never),
        "timeshift_occasionally": frac(&|p| p.timeshift_propensity == Propensity::Occasionally),
        "timeshift_often": frac(&|p| p.timeshift_propensity == Propensity::Often),
        "content_shift_never": frac(&|p| p.content_shift_propensity == Propensity::Never),
        "content_shift_occasionally": frac(&|p| p.content_shift_propensity == Propensity::Occasionally),
        "content_shift_often": frac(&|p| p.content_shift_propensity == Propensity::Often),
        "sport_delay_block": frac(&|p| p.blocks_delay(Genre::Sport)),
        "movie_delay_block": frac(&|p| p.blocks_delay(Genre::Movie)),
        "always_delay_video": frac(&|p| p.video_delay == VideoDelayAttitude::Always),
        "never_delay_video": frac(&|p| p.video_delay == VideoDelayAttitude::Never),
    })
    .to_string())
}

/// Reorder marked items in `html` so the listed content ids come first
/// within each listing. `cached` holds ids separated by commas or newlines.
pub fn rewrite_preview_html(html: &str, cached: &str) -> String {
    let ids: Vec<&str> = cached.split([',', '\n']).map(str::trim).filter(|s| !s.is_empty()).collect();
    let out = rewrite_html(html.as_bytes(), &RewriteSpec::default(), |id| ids.contains(&id));
    String::from_utf8_lossy(&out).into_owned()
}

#[wasm_bindgen]
pub fn simulate_day(population: u32, seed: u32, shift_percent: f64, rules: bool) -> Result<String, JsError> {
    simulate_day_json(population, seed, shift_percent, rules).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample_population_summary(n: u32, seed: u32) -> Result<String, JsError> {
    population_summary_json(n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rewrite_preview(html: &str, cached: &str) -> String {
    rewrite_preview_html(html, cached)
}
