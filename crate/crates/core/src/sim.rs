//! Discrete-event simulation of a transit link and an aggregation link with
//! an edge cache at the aggregation head-end.
//!
//! Decisions are made per event in time order. Link service is a fluid
//! approximation: each bin, queued transfers are served first-in first-out
//! up to the remaining capacity of every link on their path, and whatever
//! does not fit waits for the next bin.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{pick_alternative, AcceptanceModel, StageOptions, UserChoice, UserProfile};
use crate::cache::{CacheTier, LruCache};
use crate::demand::{Genre, Request, DAY_S};
use crate::error::{ConfigError, SimError};
use crate::policy::{
    transit_price, ChoiceKind, CreditLedger, CreditReason, DecisionContext, EnactmentDecision, LinkUtilization,
    PriceSchedule, RuleSet, TimeWindow, UserHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Transit,
    Aggregation,
}

impl Resource {
    pub const ALL: [Resource; 2] = [Resource::Transit, Resource::Aggregation];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Transit => "transit",
            Resource::Aggregation => "aggregation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceModel {
    pub capacity_bytes_per_bin: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resources {
    pub transit: ResourceModel,
    pub aggregation: ResourceModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreloadItem {
    pub content_id: String,
    pub size_bytes: u64,
    pub genre: Genre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caches {
    pub edge_capacity_bytes: u64,
    #[serde(default)]
    pub preload: Vec<PreloadItem>,
}

fn default_rewrite_uplift() -> f64 {
    0.5
}

fn default_credits_per_accept() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub bin_s: u64,
    /// Time of day (seconds) at simulation time zero.
    #[serde(default)]
    pub clock_offset_s: u64,
    pub resources: Resources,
    pub caches: Caches,
    /// Chance that a neighbour's home cache holds a redirected item the
    /// edge cache missed.
    #[serde(default)]
    pub neighbor_hit_probability: f64,
    pub off_peak_window: TimeWindow,
    /// Transit bytes per bin available to prefetches; defaults to the
    /// whole transit capacity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefetch_budget_bytes_per_bin: Option<u64>,
    #[serde(default)]
    pub price_schedule: PriceSchedule,
    /// Seconds a queued transfer waits before it is abandoned; unset means
    /// transfers never give up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience_s: Option<f64>,
    /// Probability that a front-page watcher picks a cached item moved up
    /// by a rewritten page.
    #[serde(default = "default_rewrite_uplift")]
    pub rewrite_uplift: f64,
    #[serde(default = "default_credits_per_accept")]
    pub credits_per_accept: u64,
    #[serde(default)]
    pub record_cache_trace: bool,
}

impl NetConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = crate::error::from_json_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bin_s == 0 {
            return Err(ConfigError::new("bin_s", "must be positive"));
        }
        if self.clock_offset_s >= DAY_S as u64 {
            return Err(ConfigError::new("clock_offset_s", "must be less than 86400"));
        }
        if self.resources.transit.capacity_bytes_per_bin == 0 {
            return Err(ConfigError::new("resources.transit.capacity_bytes_per_bin", "must be positive"));
        }
        if self.resources.aggregation.capacity_bytes_per_bin == 0 {
            return Err(ConfigError::new("resources.aggregation.capacity_bytes_per_bin", "must be positive"));
        }
        if let Some(b) = self.prefetch_budget_bytes_per_bin {
            if b > self.resources.transit.capacity_bytes_per_bin {
                return Err(ConfigError::new("prefetch_budget_bytes_per_bin", "cannot exceed transit capacity"));
            }
        }
        for (name, p) in
            [("neighbor_hit_probability", self.neighbor_hit_probability), ("rewrite_uplift", self.rewrite_uplift)]
        {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::new(name, format!("probability {p} outside [0, 1]")));
            }
        }
        if let Some(p) = self.patience_s {
            if p.is_nan() || p < 0.0 {
                return Err(ConfigError::new("patience_s", "must be non-negative"));
            }
        }
        self.price_schedule.validate().map_err(|e| e.within("price_schedule"))?;
        let mut preload_bytes = 0u64;
        for (i, item) in self.caches.preload.iter().enumerate() {
            if item.size_bytes == 0 {
                return Err(ConfigError::new(format!("caches.preload[{i}].size_bytes"), "must be positive"));
            }
            preload_bytes = preload_bytes.saturating_add(item.size_bytes);
        }
        if preload_bytes > self.caches.edge_capacity_bytes {
            return Err(ConfigError::new("caches.preload", "preloaded items exceed edge cache capacity"));
        }
        Ok(())
    }

    pub fn capacity(&self, r: Resource) -> u64 {
        match r {
            Resource::Transit => self.resources.transit.capacity_bytes_per_bin,
            Resource::Aggregation => self.resources.aggregation.capacity_bytes_per_bin,
        }
    }

    pub fn prefetch_budget(&self) -> u64 {
        self.prefetch_budget_bytes_per_bin.unwrap_or(self.resources.transit.capacity_bytes_per_bin)
    }

    pub fn time_of_day(&self, t: f64) -> f64 {
        (t + self.clock_offset_s as f64).rem_euclid(DAY_S)
    }
}

/// Events carried on the simulation queue.
#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    Arrival(Request),
    PrefetchStart { request_id: u64, bin: usize },
    DeferredConsume { request_id: u64, new_access_s: f64 },
}

impl SimEvent {
    fn rank(&self) -> u8 {
        match self {
            SimEvent::Arrival(_) => 0,
            SimEvent::PrefetchStart { .. } => 1,
            SimEvent::DeferredConsume { .. } => 2,
        }
    }

    fn request_id(&self) -> u64 {
        match self {
            SimEvent::Arrival(r) => r.request_id,
            SimEvent::PrefetchStart { request_id, .. } | SimEvent::DeferredConsume { request_id, .. } => *request_id,
        }
    }
}

/// Queue entry ordered by (time, event kind, request id).
#[derive(Debug)]
struct Scheduled {
    time: f64,
    event: SimEvent,
}

impl Scheduled {
    fn key(&self) -> (f64, u8, u64) {
        (self.time, self.event.rank(), self.event.request_id())
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    ServedOriginal,
    ServedAlternative,
    ServedDeferred,
    Abandoned,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub offered: u64,
    pub served: u64,
    pub deferred: u64,
    pub shifted: u64,
    pub prefetch: u64,
    pub utilization: f64,
}

impl BinStats {
    /// Bytes actually carried on the link in this bin.
    pub fn load(&self) -> u64 {
        self.served + self.prefetch
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerResource<T> {
    pub transit: T,
    pub aggregation: T,
}

impl<T> PerResource<T> {
    pub fn get(&self, r: Resource) -> &T {
        match r {
            Resource::Transit => &self.transit,
            Resource::Aggregation => &self.aggregation,
        }
    }

    pub fn get_mut(&mut self, r: Resource) -> &mut T {
        match r {
            Resource::Transit => &mut self.transit,
            Resource::Aggregation => &mut self.aggregation,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub served_original: u64,
    pub served_alternative: u64,
    pub served_deferred: u64,
    pub abandoned: u64,
}

impl DispositionCounts {
    pub fn total(&self) -> u64 {
        self.served_original + self.served_alternative + self.served_deferred + self.abandoned
    }
}

/// Where delivered bytes came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteTotals {
    /// Bytes of all input requests.
    pub demand: u64,
    /// Delivered over transit from the origin.
    pub origin_served: u64,
    /// Delivered from the edge cache over aggregation.
    pub edge_served: u64,
    /// Delivered from a neighbour's home cache.
    pub home_served: u64,
    /// Transit bytes spent filling the edge cache ahead of deferred access.
    pub prefetch: u64,
}

impl ByteTotals {
    pub fn cache_served(&self) -> u64 {
        self.edge_served + self.home_served
    }

    pub fn served(&self) -> u64 {
        self.origin_served + self.cache_served()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub seed: u64,
    pub requests: u64,
    pub bins: usize,
    pub bin_s: u64,
    /// Over per-bin carried load; `None` when a link carried nothing.
    pub peak_to_mean: PerResource<Option<f64>>,
    pub p95_load_bytes: PerResource<u64>,
    pub peak_load_bytes: PerResource<u64>,
    pub cache_lookups: u64,
    pub cache_hits: u64,
    pub cache_hit_ratio: Option<f64>,
    pub offers_made: u64,
    pub offers_accepted: u64,
    pub acceptance_rate: Option<f64>,
    pub credits_issued: u64,
    pub dispositions: DispositionCounts,
    pub bytes: ByteTotals,
    /// Bytes still queued when the horizon ended.
    pub backlog_bytes: PerResource<u64>,
    pub abandoned_bytes: PerResource<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CacheOp {
    Lookup { content_id: String, hit: bool },
    Insert { content_id: String, size_bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub series: PerResource<Vec<BinStats>>,
    pub summary: Summary,
    pub dispositions: BTreeMap<u64, Disposition>,
    pub edge_capacity_bytes: u64,
    /// Edge cache operations in order, when recording was enabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cache_trace: Vec<CacheOp>,
}

impl SimReport {
    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("bin_start_s,resource,offered,served,deferred,shifted,prefetch,utilization\n");
        let bins = self.series.transit.len();
        for b in 0..bins {
            for r in Resource::ALL {
                let s = &self.series.get(r)[b];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    b as u64 * self.summary.bin_s,
                    r.name(),
                    s.offered,
                    s.served,
                    s.deferred,
                    s.shifted,
                    s.prefetch,
                    s.utilization
                );
            }
        }
        out
    }

    pub fn dispositions_csv(&self) -> String {
        let mut out = String::from("request_id,disposition\n");
        for (id, d) in &self.dispositions {
            let _ = writeln!(out, "{id},{d:?}");
        }
        out
    }

    pub fn load_series(&self, r: Resource) -> Vec<u64> {
        self.series.get(r).iter().map(BinStats::load).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("series is empty")]
    Empty,
    #[error("series is all zero")]
    AllZero,
    #[error("series contains a negative or non-finite value")]
    Invalid,
}

/// Maximum over mean of a non-negative series.
pub fn peak_to_mean(series: &[f64]) -> Result<f64, MetricError> {
    if series.is_empty() {
        return Err(MetricError::Empty);
    }
    if series.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(MetricError::Invalid);
    }
    let max = series.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(MetricError::AllZero);
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    // guard against rounding pushing a constant series just below 1
    Ok((max / mean).max(1.0))
}

/// Nearest-rank 95th percentile.
pub fn p95(series: &[u64]) -> u64 {
    if series.is_empty() {
        return 0;
    }
    let mut sorted = series.to_vec();
    sorted.sort_unstable();
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// First-fit placement of prefetch transfers into per-bin transit budget.
#[derive(Debug, Clone)]
pub struct PrefetchPlanner {
    bin_s: u64,
    budget_per_bin: u64,
    used: Vec<u64>,
}

impl PrefetchPlanner {
    pub fn new(bins: usize, bin_s: u64, budget_per_bin: u64) -> Self {
        Self { bin_s, budget_per_bin, used: vec![0; bins] }
    }

    pub fn used(&self) -> &[u64] {
        &self.used
    }

    /// Reserve the earliest bin that starts inside `window`, finishes by
    /// `deadline_s` and still has room for the whole object. Returns the bin
    /// index, or `None` when no bin fits.
    pub fn schedule(&mut self, size_bytes: u64, window: (f64, f64), deadline_s: f64) -> Option<usize> {
        let bin_s = self.bin_s as f64;
        let first = (window.0 / bin_s).ceil().max(0.0) as usize;
        let limit = window.1.min(deadline_s);
        let mut b = first;
        while b < self.used.len() && (b as f64 + 1.0) * bin_s <= limit {
            if self.used[b] + size_bytes <= self.budget_per_bin {
                self.used[b] += size_bytes;
                return Some(b);
            }
            b += 1;
        }
        None
    }
}

/// Requests whose deferral is imposed rather than offered, mapped to their
/// new access time.
pub type ForcedDeferrals = BTreeMap<u64, f64>;

/// Choose requests arriving inside `peak_window` whose bytes add up to as
/// much of `fraction` of the window's bytes as possible without exceeding
/// it. Requests are taken from whichever bin currently carries the most
/// bytes, earliest arrival first, so the highest bins are shaved first.
///
/// Access times are spread evenly over the second half of the next
/// off-peak window, leaving the first half for prefetching.
pub fn plan_forced_deferral(
    workload: &[Request],
    horizon_s: u64,
    net: &NetConfig,
    peak_window: TimeWindow,
    fraction: f64,
    eligible: impl Fn(&Request) -> bool,
) -> ForcedPlan {
    let offset = net.clock_offset_s as f64;
    let bin_s = net.bin_s as f64;
    let bins = (horizon_s / net.bin_s) as usize;
    let mut load = vec![0u64; bins];
    let mut candidates: Vec<VecDeque<&Request>> = vec![VecDeque::new(); bins];
    let mut window_bytes = 0u64;
    for r in workload {
        let b = ((r.arrival_s / bin_s) as usize).min(bins.saturating_sub(1));
        load[b] += r.size_bytes;
        if !peak_window.contains((r.arrival_s + offset).rem_euclid(DAY_S)) {
            continue;
        }
        window_bytes += r.size_bytes;
        let (start, end) = net.off_peak_window.next_occurrence(r.arrival_s, offset);
        if eligible(r) && start < end.min(horizon_s as f64) {
            candidates[b].push_back(r);
        }
    }
    let target = (window_bytes as f64 * fraction).floor() as u64;

    // max-heap on (load, earlier bin first)
    let mut heap: BinaryHeap<(u64, Reverse<usize>)> =
        (0..bins).filter(|b| !candidates[*b].is_empty()).map(|b| (load[b], Reverse(b))).collect();
    let mut chosen: Vec<&Request> = Vec::new();
    let mut deferred_bytes = 0u64;
    while deferred_bytes < target {
        let Some((_, Reverse(b))) = heap.pop() else { break };
        let r = candidates[b].pop_front().expect("heap holds bins with candidates");
        if deferred_bytes + r.size_bytes <= target {
            deferred_bytes += r.size_bytes;
            load[b] -= r.size_bytes;
            chosen.push(r);
        }
        if !candidates[b].is_empty() {
            heap.push((load[b], Reverse(b)));
        }
    }

    chosen.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.request_id.cmp(&b.request_id)));
    let n = chosen.len() as f64;
    let deferrals = chosen
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (start, end) = net.off_peak_window.next_occurrence(r.arrival_s, offset);
            let end = end.min(horizon_s as f64);
            let at = start + (end - start) * (0.5 + 0.5 * (i as f64 + 0.5) / n);
            (r.request_id, at)
        })
        .collect();
    ForcedPlan { deferrals, deferred_bytes, window_bytes, target_bytes: target }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcedPlan {
    pub deferrals: ForcedDeferrals,
    pub deferred_bytes: u64,
    pub window_bytes: u64,
    pub target_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Path {
    /// origin -> transit -> aggregation -> user
    Origin,
    /// edge cache -> aggregation -> user
    Edge,
}

#[derive(Debug)]
struct Job {
    request_id: u64,
    remaining: u64,
    path: Path,
    bin: usize,
}

#[derive(Debug)]
struct Deferred {
    request: Request,
    prefetched: bool,
}

#[derive(Debug, Default)]
struct UserState {
    day: i64,
    history: UserHistory,
}

struct Dsm<'a> {
    profiles: &'a BTreeMap<u64, UserProfile>,
    ruleset: &'a RuleSet,
    model: &'a AcceptanceModel,
}

/// One simulation run. Without [`Simulation::with_dsm`] every request is
/// served from the origin (the DSM-off baseline).
pub struct Simulation<'a> {
    workload: &'a [Request],
    horizon_s: u64,
    net: &'a NetConfig,
    dsm: Option<Dsm<'a>>,
    forced: Option<&'a ForcedDeferrals>,
    label: String,
}

impl<'a> Simulation<'a> {
    pub fn new(workload: &'a [Request], horizon_s: u64, net: &'a NetConfig) -> Self {
        Self { workload, horizon_s, net, dsm: None, forced: None, label: "baseline".into() }
    }

    pub fn with_dsm(
        mut self,
        profiles: &'a BTreeMap<u64, UserProfile>,
        ruleset: &'a RuleSet,
        model: &'a AcceptanceModel,
    ) -> Self {
        self.dsm = Some(Dsm { profiles, ruleset, model });
        self.label = "dsm".into();
        self
    }

    pub fn with_forced_deferrals(mut self, forced: &'a ForcedDeferrals) -> Self {
        self.forced = Some(forced);
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn run(&self, seed: u64) -> Result<SimReport, SimError> {
        self.net.validate()?;
        if self.horizon_s == 0 || !self.horizon_s.is_multiple_of(self.net.bin_s) {
            return Err(ConfigError::new("horizon_s", "must be a positive multiple of bin_s").into());
        }
        let horizon = self.horizon_s as f64;
        for r in self.workload {
            if !(r.arrival_s >= 0.0 && r.arrival_s < horizon) {
                return Err(SimError::ArrivalOutsideHorizon {
                    request_id: r.request_id,
                    arrival_s: r.arrival_s,
                    horizon_s: self.horizon_s,
                });
            }
        }
        if let Some(dsm) = &self.dsm {
            if let Some(r) = self.workload.iter().find(|r| !dsm.profiles.contains_key(&r.user_id)) {
                return Err(SimError::MissingProfile(r.user_id));
            }
        }
        let mut engine = Engine::new(self, seed);
        engine.run()?;
        Ok(engine.finish())
    }
}

/// Run the full pipeline for one seed.
pub fn run(
    workload: &[Request],
    horizon_s: u64,
    profiles: &BTreeMap<u64, UserProfile>,
    ruleset: &RuleSet,
    net: &NetConfig,
    model: &AcceptanceModel,
    seed: u64,
) -> Result<SimReport, SimError> {
    Simulation::new(workload, horizon_s, net).with_dsm(profiles, ruleset, model).run(seed)
}

pub fn run_baseline(workload: &[Request], horizon_s: u64, net: &NetConfig, seed: u64) -> Result<SimReport, SimError> {
    Simulation::new(workload, horizon_s, net).run(seed)
}

pub fn index_profiles(profiles: Vec<UserProfile>) -> BTreeMap<u64, UserProfile> {
    profiles.into_iter().map(|p| (p.user_id, p)).collect()
}

struct Engine<'s, 'a> {
    sim: &'s Simulation<'a>,
    net: &'a NetConfig,
    bins: usize,
    bin_s: f64,
    rng: ChaCha8Rng,
    events: BinaryHeap<Reverse<Scheduled>>,
    settled: usize,
    queue: VecDeque<Job>,
    series: PerResource<Vec<BinStats>>,
    planner: PrefetchPlanner,
    edge: LruCache,
    deferred: BTreeMap<u64, Deferred>,
    users: BTreeMap<u64, UserState>,
    ledger: CreditLedger,
    dispositions: BTreeMap<u64, Disposition>,
    bytes: ByteTotals,
    backlog: PerResource<u64>,
    abandoned: PerResource<u64>,
    cache_lookups: u64,
    cache_hits: u64,
    offers_made: u64,
    offers_accepted: u64,
    trace: Vec<CacheOp>,
    seed: u64,
}

impl<'s, 'a> Engine<'s, 'a> {
    fn new(sim: &'s Simulation<'a>, seed: u64) -> Self {
        let net = sim.net;
        let bins = (sim.horizon_s / net.bin_s) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x51);
        let mut edge = LruCache::new(CacheTier::Edge, net.caches.edge_capacity_bytes);
        for item in &net.caches.preload {
            edge.insert(&item.content_id, item.size_bytes, item.genre).expect("validated preload fits");
        }
        let mut events = BinaryHeap::with_capacity(sim.workload.len());
        for r in sim.workload {
            events.push(Reverse(Scheduled { time: r.arrival_s, event: SimEvent::Arrival(r.clone()) }));
        }
        Self {
            sim,
            net,
            bins,
            bin_s: net.bin_s as f64,
            rng,
            events,
            settled: 0,
            queue: VecDeque::new(),
            series: PerResource {
                transit: vec![BinStats::default(); bins],
                aggregation: vec![BinStats::default(); bins],
            },
            planner: PrefetchPlanner::new(bins, net.bin_s, net.prefetch_budget()),
            edge,
            deferred: BTreeMap::new(),
            users: BTreeMap::new(),
            ledger: CreditLedger::new(),
            dispositions: BTreeMap::new(),
            bytes: ByteTotals { demand: sim.workload.iter().map(|r| r.size_bytes).sum(), ..Default::default() },
            backlog: PerResource::default(),
            abandoned: PerResource::default(),
            cache_lookups: 0,
            cache_hits: 0,
            offers_made: 0,
            offers_accepted: 0,
            trace: Vec::new(),
            seed,
        }
    }

    fn bin_of(&self, t: f64) -> usize {
        ((t / self.bin_s) as usize).min(self.bins.saturating_sub(1))
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(next)) = self.events.pop() {
            if next.time >= self.sim.horizon_s as f64 {
                return Err(SimError::EventAfterHorizon {
                    request_id: next.event.request_id(),
                    time_s: next.time,
                    horizon_s: self.sim.horizon_s,
                });
            }
            let bin = self.bin_of(next.time);
            while self.settled < bin {
                self.settle(self.settled);
                self.settled += 1;
            }
            match next.event {
                SimEvent::Arrival(request) => self.on_arrival(request)?,
                SimEvent::PrefetchStart { request_id, .. } => self.on_prefetch(request_id),
                SimEvent::DeferredConsume { request_id, new_access_s } => self.on_deferred(request_id, new_access_s),
            }
        }
        while self.settled < self.bins {
            self.settle(self.settled);
            self.settled += 1;
        }
        for job in &self.queue {
            self.backlog.aggregation += job.remaining;
            if job.path == Path::Origin {
                self.backlog.transit += job.remaining;
            }
        }
        Ok(())
    }

    fn enqueue(&mut self, request_id: u64, bytes: u64, path: Path, bin: usize) {
        self.series.aggregation[bin].offered += bytes;
        if path == Path::Origin {
            self.series.transit[bin].offered += bytes;
        }
        if bytes > 0 {
            self.queue.push_back(Job { request_id, remaining: bytes, path, bin });
        }
    }

    fn serve_origin(&mut self, request: &Request, bin: usize, disposition: Disposition) {
        self.dispositions.insert(request.request_id, disposition);
        self.enqueue(request.request_id, request.size_bytes, Path::Origin, bin);
    }

    fn lookup(&mut self, content_id: &str) -> bool {
        let hit = self.edge.lookup(content_id);
        self.cache_lookups += 1;
        self.cache_hits += u64::from(hit);
        if self.net.record_cache_trace {
            self.trace.push(CacheOp::Lookup { content_id: content_id.to_string(), hit });
        }
        hit
    }

    fn insert(&mut self, content_id: &str, size: u64, genre: Genre) -> bool {
        let ok = self.edge.insert(content_id, size, genre).is_ok();
        if ok && self.net.record_cache_trace {
            self.trace.push(CacheOp::Insert { content_id: content_id.to_string(), size_bytes: size });
        }
        ok
    }

    fn user_history(&mut self, user_id: u64, t: f64) -> UserHistory {
        let day = ((t + self.net.clock_offset_s as f64) / DAY_S).floor() as i64;
        let state = self.users.entry(user_id).or_default();
        if state.day != day {
            state.day = day;
            state.history.prompts_today = 0;
        }
        state.history.clone()
    }

    fn context(&mut self, request: &Request) -> DecisionContext {
        let t = request.arrival_s;
        let bin = self.bin_of(t);
        let link_utilization = if bin == 0 {
            LinkUtilization::default()
        } else {
            LinkUtilization {
                transit: self.series.transit[bin - 1].utilization,
                aggregation: self.series.aggregation[bin - 1].utilization,
            }
        };
        let tod = self.net.time_of_day(t);
        let mut ctx = DecisionContext::for_request(request, tod);
        ctx.link_utilization = link_utilization;
        ctx.transit_price = transit_price(&self.net.price_schedule, tod);
        ctx.user_history = self.user_history(request.user_id, t);
        ctx
    }

    fn delay_window(&self, request: &Request) -> Option<(f64, f64)> {
        let (start, end) = self.net.off_peak_window.next_occurrence(request.arrival_s, self.net.clock_offset_s as f64);
        let end = end.min(self.sim.horizon_s as f64);
        (start < end).then_some((start, end))
    }

    fn record_removed(&mut self, request: &Request, bin: usize, shifted: bool) {
        for r in Resource::ALL {
            let s = &mut self.series.get_mut(r)[bin];
            if shifted {
                s.shifted += request.size_bytes;
            } else {
                s.deferred += request.size_bytes;
            }
        }
    }

    fn on_arrival(&mut self, request: Request) -> Result<(), SimError> {
        let bin = self.bin_of(request.arrival_s);
        if let Some(&new_access_s) = self.sim.forced.and_then(|f| f.get(&request.request_id)) {
            return self.defer(request, new_access_s, bin);
        }
        let Some(dsm) = &self.sim.dsm else {
            self.serve_origin(&request, bin, Disposition::ServedOriginal);
            return Ok(());
        };
        let (ruleset, model) = (dsm.ruleset, dsm.model);
        let profile = dsm.profiles.get(&request.user_id).ok_or(SimError::MissingProfile(request.user_id))?;

        let mut ctx = self.context(&request);
        let decision = ruleset.evaluate(&request, &mut ctx);
        self.users.get_mut(&request.user_id).expect("history created").history.prompts_today =
            ctx.user_history.prompts_today;

        match decision {
            EnactmentDecision::PassThrough => self.serve_origin(&request, bin, Disposition::ServedOriginal),
            EnactmentDecision::Stage { offer, options, .. } => {
                self.offers_made += 1;
                let stage = StageOptions {
                    delay_window: if options.contains(&ChoiceKind::Delay) { self.delay_window(&request) } else { None },
                    alternative: if options.contains(&ChoiceKind::ShiftContent) {
                        pick_alternative(self.edge.catalog(), &request, profile)
                    } else {
                        None
                    },
                };
                let choice = model.respond(profile, &offer, &request, &stage, &mut self.rng);
                let state = &mut self.users.get_mut(&request.user_id).expect("history created").history;
                if choice.is_accept() {
                    state.accepts_total += 1;
                } else {
                    state.declines_total += 1;
                }
                if choice.is_accept() {
                    self.offers_accepted += 1;
                    let points = offer.credit_points(self.net.credits_per_accept);
                    if points > 0 {
                        let balance = self
                            .ledger
                            .issue_credits(
                                &request.user_id,
                                points,
                                request.arrival_s,
                                CreditReason::OfferAccepted(offer.kind),
                            )
                            .expect("points are positive");
                        self.users.get_mut(&request.user_id).expect("history created").history.credits = balance;
                    }
                }
                match choice {
                    UserChoice::Continue => self.serve_origin(&request, bin, Disposition::ServedOriginal),
                    UserChoice::Delay { new_access_s } => self.defer(request, new_access_s, bin)?,
                    UserChoice::ShiftContent { alternative_content_id } => {
                        self.shift(&request, &alternative_content_id, bin)
                    }
                }
            }
            EnactmentDecision::Redirect { .. } => {
                if self.lookup(&request.content_id) {
                    self.dispositions.insert(request.request_id, Disposition::ServedOriginal);
                    self.enqueue(request.request_id, request.size_bytes, Path::Edge, bin);
                } else if self.net.neighbor_hit_probability > 0.0
                    && self.rng.random::<f64>() < self.net.neighbor_hit_probability
                {
                    self.dispositions.insert(request.request_id, Disposition::ServedOriginal);
                    self.bytes.home_served += request.size_bytes;
                } else {
                    self.serve_origin(&request, bin, Disposition::ServedOriginal);
                    if request.size_bytes <= self.edge.capacity() {
                        self.insert(&request.content_id, request.size_bytes, request.genre);
                    }
                }
            }
            EnactmentDecision::Rewrite { .. } => {
                let alternative = if profile.front_page_watcher {
                    pick_alternative(self.edge.catalog(), &request, profile)
                } else {
                    None
                };
                match alternative {
                    Some(alt) if self.rng.random::<f64>() < self.net.rewrite_uplift => self.shift(&request, &alt, bin),
                    _ => self.serve_origin(&request, bin, Disposition::ServedOriginal),
                }
            }
        }
        Ok(())
    }

    fn shift(&mut self, request: &Request, alternative: &str, bin: usize) {
        if !self.lookup(alternative) {
            self.serve_origin(request, bin, Disposition::ServedOriginal);
            return;
        }
        let size = self.edge.size_of(alternative).expect("hit implies entry");
        self.record_removed(request, bin, true);
        self.dispositions.insert(request.request_id, Disposition::ServedAlternative);
        self.enqueue(request.request_id, size, Path::Edge, bin);
    }

    fn defer(&mut self, request: Request, new_access_s: f64, bin: usize) -> Result<(), SimError> {
        if new_access_s.is_nan() || new_access_s <= request.arrival_s || new_access_s >= self.sim.horizon_s as f64 {
            return Err(SimError::EventAfterHorizon {
                request_id: request.request_id,
                time_s: new_access_s,
                horizon_s: self.sim.horizon_s,
            });
        }
        self.record_removed(&request, bin, false);
        let window = self.net.off_peak_window.next_occurrence(request.arrival_s, self.net.clock_offset_s as f64);
        let prefetch_bin = if request.size_bytes <= self.edge.capacity() {
            self.planner.schedule(request.size_bytes, window, new_access_s)
        } else {
            None
        };
        let id = request.request_id;
        if let Some(pb) = prefetch_bin {
            self.series.transit[pb].prefetch += request.size_bytes;
            self.bytes.prefetch += request.size_bytes;
            self.events.push(Reverse(Scheduled {
                time: pb as f64 * self.bin_s,
                event: SimEvent::PrefetchStart { request_id: id, bin: pb },
            }));
        }
        self.deferred.insert(id, Deferred { request, prefetched: false });
        self.events.push(Reverse(Scheduled {
            time: new_access_s,
            event: SimEvent::DeferredConsume { request_id: id, new_access_s },
        }));
        Ok(())
    }

    fn on_prefetch(&mut self, request_id: u64) {
        let Some(d) = self.deferred.get(&request_id) else { return };
        let (id, size, genre) = (d.request.content_id.clone(), d.request.size_bytes, d.request.genre);
        let ok = self.insert(&id, size, genre);
        if let Some(d) = self.deferred.get_mut(&request_id) {
            d.prefetched = ok;
        }
    }

    fn on_deferred(&mut self, request_id: u64, new_access_s: f64) {
        let Some(d) = self.deferred.remove(&request_id) else { return };
        let bin = self.bin_of(new_access_s);
        if d.prefetched && self.lookup(&d.request.content_id) {
            self.dispositions.insert(request_id, Disposition::ServedDeferred);
            self.enqueue(request_id, d.request.size_bytes, Path::Edge, bin);
        } else {
            self.serve_origin(&d.request, bin, Disposition::ServedOriginal);
        }
    }

    fn settle(&mut self, bin: usize) {
        let cap_t = self.net.capacity(Resource::Transit);
        let cap_a = self.net.capacity(Resource::Aggregation);
        let prefetch = self.series.transit[bin].prefetch;
        let mut avail_t = cap_t - prefetch;
        let mut avail_a = cap_a;

        if let Some(patience) = self.net.patience_s {
            let bin_s = self.bin_s;
            let (abandoned, dispositions) = (&mut self.abandoned, &mut self.dispositions);
            self.queue.retain(|job| {
                let waited = (bin - job.bin) as f64 * bin_s;
                if waited <= patience {
                    return true;
                }
                abandoned.aggregation += job.remaining;
                if job.path == Path::Origin {
                    abandoned.transit += job.remaining;
                }
                dispositions.insert(job.request_id, Disposition::Abandoned);
                false
            });
        }

        let (mut served_t, mut served_a) = (0u64, 0u64);
        for job in self.queue.iter_mut() {
            if avail_a == 0 {
                break;
            }
            let limit = match job.path {
                Path::Origin => avail_t.min(avail_a),
                Path::Edge => avail_a,
            };
            let x = job.remaining.min(limit);
            if x == 0 {
                continue;
            }
            job.remaining -= x;
            avail_a -= x;
            served_a += x;
            match job.path {
                Path::Origin => {
                    avail_t -= x;
                    served_t += x;
                    self.bytes.origin_served += x;
                }
                Path::Edge => self.bytes.edge_served += x,
            }
        }
        self.queue.retain(|j| j.remaining > 0);

        let t = &mut self.series.transit[bin];
        t.served = served_t;
        t.utilization = (served_t + prefetch) as f64 / cap_t as f64;
        let a = &mut self.series.aggregation[bin];
        a.served = served_a;
        a.utilization = served_a as f64 / cap_a as f64;
    }

    fn finish(self) -> SimReport {
        let mut counts = DispositionCounts::default();
        for d in self.dispositions.values() {
            match d {
                Disposition::ServedOriginal => counts.served_original += 1,
                Disposition::ServedAlternative => counts.served_alternative += 1,
                Disposition::ServedDeferred => counts.served_deferred += 1,
                Disposition::Abandoned => counts.abandoned += 1,
            }
        }
        let loads = |v: &[BinStats]| v.iter().map(BinStats::load).collect::<Vec<u64>>();
        let (lt, la) = (loads(&self.series.transit), loads(&self.series.aggregation));
        let ptm = |v: &[u64]| peak_to_mean(&v.iter().map(|x| *x as f64).collect::<Vec<_>>()).ok();
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let summary = Summary {
            label: self.sim.label.clone(),
            seed: self.seed,
            requests: self.sim.workload.len() as u64,
            bins: self.bins,
            bin_s: self.net.bin_s,
            peak_to_mean: PerResource { transit: ptm(&lt), aggregation: ptm(&la) },
            p95_load_bytes: PerResource { transit: p95(&lt), aggregation: p95(&la) },
            peak_load_bytes: PerResource {
                transit: lt.iter().copied().max().unwrap_or(0),
                aggregation: la.iter().copied().max().unwrap_or(0),
            },
            cache_lookups: self.cache_lookups,
            cache_hits: self.cache_hits,
            cache_hit_ratio: ratio(self.cache_hits, self.cache_lookups),
            offers_made: self.offers_made,
            offers_accepted: self.offers_accepted,
            acceptance_rate: ratio(self.offers_accepted, self.offers_made),
            credits_issued: self.ledger.total_issued(),
            dispositions: counts,
            bytes: self.bytes,
            backlog_bytes: self.backlog,
            abandoned_bytes: self.abandoned,
        };
        SimReport {
            series: self.series,
            summary,
            dispositions: self.dispositions,
            edge_capacity_bytes: self.net.caches.edge_capacity_bytes,
            cache_trace: self.trace,
        }
    }
}
