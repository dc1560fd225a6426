//! Reference implementations shared by the integration tests. They are
//! written for clarity, not speed, and share no code with the library.

#![allow(dead_code)]

use staggercast::demand::Request;

/// LRU cache as a recency-ordered list, least recent first.
#[derive(Debug, Clone, Default)]
pub struct RefLru {
    pub capacity: u64,
    pub items: Vec<(String, u64)>,
}

impl RefLru {
    pub fn new(capacity: u64) -> Self {
        Self { capacity, items: Vec::new() }
    }

    pub fn used(&self) -> u64 {
        self.items.iter().map(|(_, s)| s).sum()
    }

    pub fn lookup(&mut self, id: &str) -> bool {
        match self.items.iter().position(|(i, _)| i == id) {
            Some(pos) => {
                let item = self.items.remove(pos);
                self.items.push(item);
                true
            }
            None => false,
        }
    }

    /// Returns false (and leaves the cache alone) when the object can never fit.
    pub fn insert(&mut self, id: &str, size: u64) -> bool {
        if size > self.capacity {
            return false;
        }
        self.items.retain(|(i, _)| i != id);
        while self.used() + size > self.capacity {
            self.items.remove(0);
        }
        self.items.push((id.to_string(), size));
        true
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|(i, _)| i.clone()).collect()
    }
}

/// First-fit bin choice for one prefetch: earliest bin starting at or after
/// the window start that ends by min(window end, deadline) and has room.
pub fn first_fit(
    used: &mut [u64],
    budget: u64,
    bin_s: u64,
    size: u64,
    window: (f64, f64),
    deadline: f64,
) -> Option<usize> {
    let limit = window.1.min(deadline);
    for (b, u) in used.iter_mut().enumerate() {
        let start = (b as u64 * bin_s) as f64;
        let end = start + bin_s as f64;
        if start < window.0 || end > limit {
            continue;
        }
        if *u + size <= budget {
            *u += size;
            return Some(b);
        }
    }
    None
}

/// Per-bin transit bytes for an uncongested network: every request not
/// deferred is carried in its arrival bin, deferred requests are carried in
/// their first-fit prefetch bin, or at their access time when no bin fits.
pub fn replay_transit(
    requests: &[Request],
    deferred: &std::collections::BTreeMap<u64, f64>,
    windows: impl Fn(&Request) -> (f64, f64),
    bins: usize,
    bin_s: u64,
    budget: u64,
) -> Vec<u64> {
    let mut load = vec![0u64; bins];
    let mut used = vec![0u64; bins];
    let bin = |t: f64| (t / bin_s as f64) as usize;
    let mut order: Vec<&Request> = requests.iter().collect();
    order.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.request_id.cmp(&b.request_id)));
    for r in order {
        match deferred.get(&r.request_id) {
            None => load[bin(r.arrival_s)] += r.size_bytes,
            Some(&at) => match first_fit(&mut used, budget, bin_s, r.size_bytes, windows(r), at) {
                Some(b) => load[b] += r.size_bytes,
                None => load[bin(at)] += r.size_bytes,
            },
        }
    }
    load
}

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use staggercast::agents::{sample_profiles_for, PopulationSpec, UserProfile};
use staggercast::demand::{
    generate_workload, AppClass, AppWorkload, DiurnalProfile, Genre, SizeDistribution, WorkloadConfig,
};
use staggercast::policy::{IncentiveKind, IncentiveOffer, Rule, RuleMatch, RuleSet, Strategy, TimeWindow, Trigger};
use staggercast::sim::{
    BinStats, CacheOp, Caches, Disposition, NetConfig, PreloadItem, ResourceModel, Resources, SimReport,
};

/// One randomized simulation input.
pub struct Triple {
    pub requests: Vec<Request>,
    pub horizon_s: u64,
    pub profiles: BTreeMap<u64, UserProfile>,
    pub population: PopulationSpec,
    pub ruleset: RuleSet,
    pub net: NetConfig,
}

const H: f64 = 3600.0;

pub fn random_triple(seed: u64) -> Triple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bin_s = 600u64;
    let bins = rng.random_range(4u64..=48);
    let horizon_s = bins * bin_s;
    let clock_offset_s = rng.random_range(0u64..24) * 3600;
    let population_size = rng.random_range(5u64..50);
    let mut apps = BTreeMap::new();
    for app in AppClass::ALL {
        if rng.random_bool(0.5) {
            continue;
        }
        let weights: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..2.0)).collect();
        let diurnal = DiurnalProfile::new(weights).unwrap_or_else(|_| DiurnalProfile::flat());
        let size_distribution = if rng.random_bool(0.5) {
            SizeDistribution::Constant { value: rng.random_range(1_000..2_000_000) }
        } else {
            SizeDistribution::Lognormal { mu: rng.random_range(8.0..14.0), sigma: rng.random_range(0.0..1.5) }
        };
        let genre = Genre::ALL[rng.random_range(0..Genre::ALL.len())];
        let mut genre_mix = BTreeMap::from([(Genre::Movie, 0.5)]);
        *genre_mix.entry(genre).or_insert(0.0) += 0.5;
        apps.insert(
            app,
            AppWorkload {
                diurnal,
                mean_rate_per_user_per_day: rng.random_range(0.0..60.0),
                size_distribution,
                genre_mix,
                catalog_size: rng.random_range(1..40),
                popularity_skew: rng.random_range(0.0..1.5),
            },
        );
    }
    let cfg = WorkloadConfig { horizon_s, bin_s, population_size, clock_offset_s, apps, seed };
    let mut requests = generate_workload(&cfg).expect("valid random workload");
    requests.truncate(1000);

    let total: u64 = requests.iter().map(|r| r.size_bytes).sum();
    let mean_bin = (total / bins).max(1);
    let transit = ((mean_bin as f64 * rng.random_range(0.3..3.0)) as u64).max(1);
    let aggregation = ((mean_bin as f64 * rng.random_range(0.3..3.0)) as u64).max(1);
    let edge_capacity_bytes = rng.random_range(1u64..20_000_000);
    let mut preload = Vec::new();
    let mut preload_bytes = 0;
    for i in 0..rng.random_range(0..4) {
        let size = rng.random_range(1..1_000_000);
        if preload_bytes + size <= edge_capacity_bytes {
            preload_bytes += size;
            preload.push(PreloadItem {
                content_id: format!("videoondemand-{i}"),
                size_bytes: size,
                genre: Genre::Movie,
            });
        }
    }
    // usually place the off-peak window inside the horizon so prefetch runs
    let start = if rng.random_bool(0.7) {
        let hours = (horizon_s / 3600).max(1);
        ((clock_offset_s / 3600 + rng.random_range(0..hours)) % 24) as f64 * H
    } else {
        rng.random_range(0..24) as f64 * H
    };
    let len = rng.random_range(1..10) as f64 * H;
    let off_peak_window = TimeWindow::new(start, (start + len) % 86_400.0).unwrap();
    let net = NetConfig {
        bin_s,
        clock_offset_s,
        resources: Resources {
            transit: ResourceModel { capacity_bytes_per_bin: transit },
            aggregation: ResourceModel { capacity_bytes_per_bin: aggregation },
        },
        caches: Caches { edge_capacity_bytes, preload },
        neighbor_hit_probability: rng.random_range(0.0..0.5),
        off_peak_window,
        prefetch_budget_bytes_per_bin: rng.random_bool(0.8).then(|| rng.random_range(0..=transit)),
        price_schedule: Default::default(),
        patience_s: rng.random_bool(0.3).then(|| rng.random_range(0.0..3.0) * bin_s as f64),
        rewrite_uplift: rng.random_range(0.0..1.0),
        credits_per_accept: rng.random_range(1..20),
        record_cache_trace: true,
    };

    let rules = (0..rng.random_range(0..5))
        .map(|_| {
            let apps: BTreeSet<AppClass> =
                (0..rng.random_range(0..3)).map(|_| AppClass::ALL[rng.random_range(0..8)]).collect();
            Rule {
                matcher: RuleMatch {
                    app_classes: apps,
                    min_size_bytes: rng.random_range(1..100_000),
                    exclude_live: rng.random_bool(0.5),
                    qos_classes: BTreeSet::new(),
                },
                trigger: Trigger {
                    utilization_gte: rng.random_bool(0.3).then(|| rng.random_range(0.0..1.0)),
                    peak_window: None,
                    transit_price_gte: None,
                },
                per_user_daily_prompt_cap: rng.random_range(0..5),
                strategy: [Strategy::Stage, Strategy::Stage, Strategy::Rewrite, Strategy::Redirect]
                    [rng.random_range(0..4)],
                offer_template: IncentiveOffer {
                    kind: IncentiveKind::ALL[rng.random_range(0..9)],
                    magnitude: rng.random_range(0..50) as f64,
                    expiry_s: 300,
                },
            }
        })
        .collect();
    let ruleset = RuleSet::new(rules).expect("valid random rules");

    let mut population = PopulationSpec::default();
    population.propensity_base.occasionally = rng.random_range(0.0..1.0);
    population.propensity_base.often = rng.random_range(0.0..1.0);
    population.neutralize_incentive_for_content_shift = rng.random_bool(0.5);
    let users: BTreeSet<u64> = requests.iter().map(|r| r.user_id).collect();
    let profiles = sample_profiles_for(&population, users, seed).unwrap().into_iter().map(|p| (p.user_id, p)).collect();
    Triple { requests, horizon_s, profiles, population, ruleset, net }
}

/// Disposition, byte and capacity invariants plus an LRU replay of the
/// recorded cache trace. Returns a description of the first violation.
pub fn check_invariants(report: &SimReport, requests: &[Request], net: &NetConfig) -> Result<(), String> {
    let s = &report.summary;
    let ids: BTreeSet<u64> = requests.iter().map(|r| r.request_id).collect();
    let disposed: BTreeSet<u64> = report.dispositions.keys().copied().collect();
    if ids != disposed {
        return Err("dispositions do not cover exactly the input requests".into());
    }
    if s.dispositions.served_original
        + s.dispositions.served_alternative
        + s.dispositions.served_deferred
        + s.dispositions.abandoned
        != requests.len() as u64
    {
        return Err("disposition counts do not add up to the request count".into());
    }

    let sum = |v: &[BinStats], f: fn(&BinStats) -> u64| v.iter().map(f).sum::<u64>();
    let (t, a) = (&report.series.transit, &report.series.aggregation);
    let b = &s.bytes;
    if sum(t, |x| x.served) != b.origin_served {
        return Err("transit served bytes differ from origin-served bytes".into());
    }
    if sum(t, |x| x.prefetch) != b.prefetch {
        return Err("transit prefetch bytes differ from the prefetch total".into());
    }
    if sum(a, |x| x.served) != b.origin_served + b.edge_served {
        return Err("aggregation served bytes differ from origin + edge bytes".into());
    }
    let transit_bytes = sum(t, |x| x.served);
    if transit_bytes + b.edge_served + b.home_served != b.served() {
        return Err("transit + cache-served bytes differ from total served".into());
    }
    if sum(a, |x| x.offered)
        != b.origin_served + b.edge_served + s.backlog_bytes.aggregation + s.abandoned_bytes.aggregation
    {
        return Err("aggregation offered bytes are not all served, queued or abandoned".into());
    }
    if sum(t, |x| x.offered) != b.origin_served + s.backlog_bytes.transit + s.abandoned_bytes.transit {
        return Err("transit offered bytes are not all served, queued or abandoned".into());
    }
    let deferred_served: u64 = requests
        .iter()
        .filter(|r| report.dispositions[&r.request_id] == Disposition::ServedDeferred)
        .map(|r| r.size_bytes)
        .sum();
    if deferred_served > b.prefetch {
        return Err("deferred requests were served without being prefetched".into());
    }

    let (ct, ca) = (net.resources.transit.capacity_bytes_per_bin, net.resources.aggregation.capacity_bytes_per_bin);
    for (i, (x, y)) in t.iter().zip(a).enumerate() {
        if x.served + x.prefetch > ct {
            return Err(format!("bin {i}: transit carries {} > {ct}", x.served + x.prefetch));
        }
        if y.served > ca {
            return Err(format!("bin {i}: aggregation carries {} > {ca}", y.served));
        }
    }

    if net.record_cache_trace {
        let mut lru = RefLru::new(net.caches.edge_capacity_bytes);
        for p in &net.caches.preload {
            lru.insert(&p.content_id, p.size_bytes);
        }
        let (mut lookups, mut hits) = (0u64, 0u64);
        for (i, op) in report.cache_trace.iter().enumerate() {
            match op {
                CacheOp::Lookup { content_id, hit } => {
                    let want = lru.lookup(content_id);
                    if want != *hit {
                        return Err(format!("cache op {i}: lookup {content_id} hit={hit}, reference says {want}"));
                    }
                    lookups += 1;
                    hits += u64::from(want);
                }
                CacheOp::Insert { content_id, size_bytes } => {
                    if !lru.insert(content_id, *size_bytes) {
                        return Err(format!("cache op {i}: insert of oversized {content_id}"));
                    }
                }
            }
            if lru.used() > net.caches.edge_capacity_bytes {
                return Err(format!("cache op {i}: capacity exceeded"));
            }
        }
        if (lookups, hits) != (s.cache_lookups, s.cache_hits) {
            return Err("cache counters disagree with the trace".into());
        }
    }
    Ok(())
}
