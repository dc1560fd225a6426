//! Request workloads: synthetic diurnal generation, trace CSV I/O and
//! shiftable-flow classification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, TraceError, TraceIoError};

pub const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum AppClass {
    VideoOnDemand,
    LiveVideo,
    Gaming,
    Email,
    RemoteWork,
    Browsing,
    BulkSync,
    P2P,
}

impl AppClass {
    pub const ALL: [AppClass; 8] = [
        AppClass::VideoOnDemand,
        AppClass::LiveVideo,
        AppClass::Gaming,
        AppClass::Email,
        AppClass::RemoteWork,
        AppClass::Browsing,
        AppClass::BulkSync,
        AppClass::P2P,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AppClass::VideoOnDemand => "VideoOnDemand",
            AppClass::LiveVideo => "LiveVideo",
            AppClass::Gaming => "Gaming",
            AppClass::Email => "Email",
            AppClass::RemoteWork => "RemoteWork",
            AppClass::Browsing => "Browsing",
            AppClass::BulkSync => "BulkSync",
            AppClass::P2P => "P2P",
        }
    }

    /// Only live video carries live traffic.
    pub fn is_live(self) -> bool {
        self == AppClass::LiveVideo
    }

    pub fn is_video(self) -> bool {
        matches!(self, AppClass::VideoOnDemand | AppClass::LiveVideo)
    }

    pub fn qos_class(self) -> QosClass {
        match self {
            AppClass::VideoOnDemand | AppClass::LiveVideo => QosClass::Streaming,
            AppClass::Gaming | AppClass::Email | AppClass::RemoteWork | AppClass::Browsing => QosClass::Interactive,
            AppClass::BulkSync | AppClass::P2P => QosClass::Bulk,
        }
    }

    fn index(self) -> u64 {
        AppClass::ALL.iter().position(|a| *a == self).unwrap_or(0) as u64
    }
}

impl fmt::Display for AppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for AppClass {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for AppClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AppClass::ALL.iter().copied().find(|a| a.name() == s).ok_or_else(|| format!("unknown app class {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QosClass {
    Interactive,
    Streaming,
    Bulk,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum Genre {
    Sport,
    Movie,
    Series,
    Music,
    Other,
    #[default]
    #[serde(rename = "None")]
    Unspecified,
}

impl Genre {
    pub const ALL: [Genre; 6] =
        [Genre::Sport, Genre::Movie, Genre::Series, Genre::Music, Genre::Other, Genre::Unspecified];

    pub fn name(self) -> &'static str {
        match self {
            Genre::Sport => "Sport",
            Genre::Movie => "Movie",
            Genre::Series => "Series",
            Genre::Music => "Music",
            Genre::Other => "Other",
            Genre::Unspecified => "None",
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Genre {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for Genre {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Genre::ALL.iter().copied().find(|g| g.name() == s).ok_or_else(|| format!("unknown genre {s:?}"))
    }
}

/// One user demand event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    pub user_id: u64,
    pub app: AppClass,
    pub content_id: String,
    pub genre: Genre,
    pub size_bytes: u64,
    pub arrival_s: f64,
    pub live: bool,
}

/// Relative demand per hour (24 weights) or per quarter hour (96 weights).
///
/// Weights are rescaled on construction so that their mean is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiurnalProfile {
    weights: Vec<f64>,
}

impl DiurnalProfile {
    pub fn new(weights: Vec<f64>) -> Result<Self, String> {
        if weights.len() != 24 && weights.len() != 96 {
            return Err(format!("expected 24 or 96 weights, got {}", weights.len()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(format!("weights must be finite and non-negative, got {w}"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err("at least one weight must be positive".into());
        }
        let mean = sum / weights.len() as f64;
        Ok(Self { weights: weights.into_iter().map(|w| w / mean).collect() })
    }

    pub fn flat() -> Self {
        Self { weights: vec![1.0; 24] }
    }

    /// Synthetic evening-peaked shape: a minor lunchtime bump and a major
    /// 18:00-23:00 peak. Illustrative, not measured.
    pub fn evening_peak() -> Self {
        Self::new(vec![
            0.35, 0.22, 0.15, 0.12, 0.12, 0.15, 0.25, 0.45, 0.60, 0.70, 0.80, 0.90, //
            1.15, 1.20, 0.95, 0.90, 0.95, 1.15, 1.60, 2.00, 2.20, 2.10, 1.70, 0.90,
        ])
        .expect("static profile is valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn slot_s(&self) -> f64 {
        DAY_S / self.weights.len() as f64
    }

    /// Weight at a time of day (seconds, wrapped into one day).
    pub fn weight_at(&self, time_of_day_s: f64) -> f64 {
        let tod = time_of_day_s.rem_euclid(DAY_S);
        let idx = ((tod / self.slot_s()) as usize).min(self.weights.len() - 1);
        self.weights[idx]
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for DiurnalProfile {
    type Error = String;

    fn try_from(weights: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(weights)
    }
}

impl From<DiurnalProfile> for Vec<f64> {
    fn from(p: DiurnalProfile) -> Self {
        p.weights
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDistribution {
    Lognormal { mu: f64, sigma: f64 },
    Constant { value: u64 },
}

impl SizeDistribution {
    fn validate(&self) -> Result<(), ConfigError> {
        match self {
            SizeDistribution::Lognormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(ConfigError::new("mu", "must be finite"));
                }
                if !sigma.is_finite() || *sigma < 0.0 {
                    return Err(ConfigError::new("sigma", "must be finite and non-negative"));
                }
            }
            SizeDistribution::Constant { value } => {
                if *value == 0 {
                    return Err(ConfigError::new("value", "must be at least 1 byte"));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            SizeDistribution::Constant { value } => value,
            SizeDistribution::Lognormal { mu, sigma } => {
                let dist = LogNormal::new(mu, sigma).expect("validated parameters");
                (dist.sample(rng).round() as u64).max(1)
            }
        }
    }
}

fn default_catalog_size() -> u64 {
    1000
}

fn default_popularity_skew() -> f64 {
    0.8
}

fn default_genre_mix() -> BTreeMap<Genre, f64> {
    BTreeMap::from([(Genre::Unspecified, 1.0)])
}

/// Per-application demand parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppWorkload {
    pub diurnal: DiurnalProfile,
    pub mean_rate_per_user_per_day: f64,
    pub size_distribution: SizeDistribution,
    #[serde(default = "default_genre_mix")]
    pub genre_mix: BTreeMap<Genre, f64>,
    /// Distinct content items for this application.
    #[serde(default = "default_catalog_size")]
    pub catalog_size: u64,
    /// Zipf exponent over the catalog.
    #[serde(default = "default_popularity_skew")]
    pub popularity_skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub horizon_s: u64,
    pub bin_s: u64,
    pub population_size: u64,
    /// Time of day (seconds) at simulation time zero.
    #[serde(default)]
    pub clock_offset_s: u64,
    pub apps: BTreeMap<AppClass, AppWorkload>,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = crate::error::from_json_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bin_s == 0 {
            return Err(ConfigError::new("bin_s", "must be positive"));
        }
        if self.horizon_s == 0 {
            return Err(ConfigError::new("horizon_s", "must be positive"));
        }
        if !self.horizon_s.is_multiple_of(self.bin_s) {
            return Err(ConfigError::new("horizon_s", "must be a multiple of bin_s"));
        }
        if self.clock_offset_s >= DAY_S as u64 {
            return Err(ConfigError::new("clock_offset_s", "must be less than 86400"));
        }
        for (app, spec) in &self.apps {
            let at = |field: &str| format!("apps.{app}.{field}");
            let rate = spec.mean_rate_per_user_per_day;
            if !rate.is_finite() || rate < 0.0 {
                return Err(ConfigError::new(at("mean_rate_per_user_per_day"), "must be finite and non-negative"));
            }
            if rate > 0.0 && self.population_size == 0 {
                return Err(ConfigError::new("population_size", "must be positive when any rate is positive"));
            }
            spec.size_distribution.validate().map_err(|e| e.within(&at("size_distribution")))?;
            if spec.genre_mix.is_empty() {
                return Err(ConfigError::new(at("genre_mix"), "must not be empty"));
            }
            if let Some((g, p)) = spec.genre_mix.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                return Err(ConfigError::new(
                    format!("{}.{g}", at("genre_mix")),
                    format!("probability {p} outside [0, 1]"),
                ));
            }
            let total: f64 = spec.genre_mix.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(ConfigError::new(at("genre_mix"), format!("probabilities sum to {total}, expected 1")));
            }
            if spec.catalog_size == 0 {
                return Err(ConfigError::new(at("catalog_size"), "must be positive"));
            }
            if !spec.popularity_skew.is_finite() || spec.popularity_skew < 0.0 {
                return Err(ConfigError::new(at("popularity_skew"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Total expected arrivals over the horizon (all applications).
    pub fn expected_count(&self) -> f64 {
        let bins = self.horizon_s / self.bin_s;
        self.apps.values().map(|spec| (0..bins).map(|b| self.expected_in_bin(spec, b)).sum::<f64>()).sum()
    }

    /// Expected arrivals for one application within one bin.
    pub fn expected_in_bin(&self, spec: &AppWorkload, bin: u64) -> f64 {
        let per_s = self.population_size as f64 * spec.mean_rate_per_user_per_day / DAY_S;
        let start = (bin * self.bin_s) as f64;
        let end = start + self.bin_s as f64;
        // integrate the piecewise-constant profile across slot boundaries
        let slot = spec.diurnal.slot_s();
        let mut t = start;
        let mut acc = 0.0;
        while t < end {
            let tod = (t + self.clock_offset_s as f64).rem_euclid(DAY_S);
            let slot_end = t + (slot - tod.rem_euclid(slot));
            let next = slot_end.min(end);
            acc += spec.diurnal.weight_at(tod) * (next - t);
            t = next;
        }
        per_s * acc
    }
}

/// Default synthetic workload: one day starting at noon, 300 s bins.
pub fn default_workload_config() -> WorkloadConfig {
    let evening = DiurnalProfile::evening_peak();
    let video_genres = BTreeMap::from([
        (Genre::Sport, 0.15),
        (Genre::Movie, 0.30),
        (Genre::Series, 0.40),
        (Genre::Music, 0.05),
        (Genre::Other, 0.10),
    ]);
    let lognormal = |median_bytes: f64, sigma: f64| SizeDistribution::Lognormal { mu: median_bytes.ln(), sigma };
    let app = |diurnal: &DiurnalProfile, rate, size, genre_mix: &BTreeMap<Genre, f64>, catalog| AppWorkload {
        diurnal: diurnal.clone(),
        mean_rate_per_user_per_day: rate,
        size_distribution: size,
        genre_mix: genre_mix.clone(),
        catalog_size: catalog,
        popularity_skew: 0.8,
    };
    let none = default_genre_mix();
    let office = DiurnalProfile::new(vec![
        0.05, 0.03, 0.02, 0.02, 0.02, 0.05, 0.20, 0.80, 1.60, 2.00, 2.00, 1.90, //
        1.50, 1.90, 2.00, 1.90, 1.70, 1.20, 0.60, 0.40, 0.30, 0.20, 0.10, 0.07,
    ])
    .expect("static profile is valid");
    WorkloadConfig {
        horizon_s: 86_400,
        bin_s: 300,
        population_size: 10_000,
        clock_offset_s: 43_200,
        apps: BTreeMap::from([
            (AppClass::VideoOnDemand, app(&evening, 1.5, lognormal(400e6, 0.8), &video_genres, 2000)),
            (AppClass::LiveVideo, app(&evening, 0.3, lognormal(600e6, 0.6), &video_genres, 50)),
            (AppClass::Gaming, app(&evening, 1.0, SizeDistribution::Constant { value: 40_000_000 }, &none, 200)),
            (AppClass::Email, app(&office, 3.0, SizeDistribution::Constant { value: 200_000 }, &none, 10_000)),
            (AppClass::RemoteWork, app(&office, 1.0, lognormal(50e6, 1.0), &none, 1000)),
            (AppClass::Browsing, app(&evening, 3.0, lognormal(3e6, 1.0), &none, 20_000)),
            (AppClass::BulkSync, app(&DiurnalProfile::flat(), 0.2, lognormal(300e6, 1.0), &none, 5000)),
        ]),
        seed: 0,
    }
}

/// Nonhomogeneous Poisson arrivals by thinning, one independent random
/// stream per application. Output is sorted by arrival time with
/// `request_id` assigned in that order.
pub fn generate_workload(config: &WorkloadConfig) -> Result<Vec<Request>, ConfigError> {
    config.validate()?;
    let horizon = config.horizon_s as f64;
    let offset = config.clock_offset_s as f64;
    let mut out: Vec<Request> = Vec::new();

    for (app, spec) in &config.apps {
        let per_user_s = spec.mean_rate_per_user_per_day / DAY_S;
        let peak_rate = config.population_size as f64 * per_user_s * spec.diurnal.max_weight();
        if peak_rate <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(app.index() + 1);

        let genres: Vec<(Genre, f64)> = spec.genre_mix.iter().map(|(g, p)| (*g, *p)).collect();
        let catalog: Vec<(u64, Genre)> = (0..spec.catalog_size)
            .map(|_| {
                let size = spec.size_distribution.sample(&mut rng);
                (size, pick_weighted(&genres, rng.random::<f64>()))
            })
            .collect();
        let zipf = Zipf::new(spec.catalog_size as f64, spec.popularity_skew)
            .map_err(|e| ConfigError::new(format!("apps.{app}.popularity_skew"), e.to_string()))?;
        let gap = Exp::new(peak_rate).expect("positive rate");
        let max_w = spec.diurnal.max_weight();

        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t >= horizon {
                break;
            }
            let accept: f64 = rng.random();
            if accept * max_w >= spec.diurnal.weight_at(t + offset) {
                continue;
            }
            let user_id = rng.random_range(0..config.population_size);
            let item = (zipf.sample(&mut rng) as u64).clamp(1, spec.catalog_size) - 1;
            let (size_bytes, genre) = catalog[item as usize];
            out.push(Request {
                request_id: 0,
                user_id,
                app: *app,
                content_id: format!("{}-{item}", app.name().to_ascii_lowercase()),
                genre,
                size_bytes,
                arrival_s: t,
                live: app.is_live(),
            });
        }
    }

    out.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.app.cmp(&b.app)));
    for (i, r) in out.iter_mut().enumerate() {
        r.request_id = i as u64;
    }
    Ok(out)
}

fn pick_weighted<T: Copy>(items: &[(T, f64)], u: f64) -> T {
    let mut acc = 0.0;
    for (item, p) in items {
        acc += p;
        if u < acc {
            return *item;
        }
    }
    items.last().expect("non-empty mix").0
}

/// Sum of request bytes per arrival bin.
pub fn bin_bytes(requests: &[Request], horizon_s: u64, bin_s: u64) -> Vec<u64> {
    let mut bins = vec![0u64; (horizon_s / bin_s) as usize];
    for r in requests {
        let idx = (r.arrival_s / bin_s as f64) as usize;
        if let Some(slot) = bins.get_mut(idx) {
            *slot += r.size_bytes;
        }
    }
    bins
}

pub const TRACE_HEADER: [&str; 7] = ["arrival_s", "user_id", "app_class", "content_id", "genre", "size_bytes", "live"];

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Request>, TraceIoError> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file))
}

/// Parse trace CSV. `request_id` is the zero-based row index; output is
/// stably sorted by arrival time.
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<Request>, TraceIoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(row) => row.map_err(|e| csv_err(1, e))?,
        None => return Err(TraceError { line: 1, message: "missing header".into() }.into()),
    };
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TraceError { line: 1, message: format!("expected header {}", TRACE_HEADER.join(",")) }.into());
    }

    let mut out = Vec::new();
    for (idx, row) in records.enumerate() {
        let line = idx as u64 + 2;
        let row = row.map_err(|e| csv_err(line, e))?;
        out.push(parse_row(&row, out.len() as u64, line)?);
    }
    out.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
    Ok(out)
}

fn csv_err(line: u64, err: csv::Error) -> TraceError {
    TraceError { line, message: err.to_string() }
}

fn parse_row(row: &csv::StringRecord, request_id: u64, line: u64) -> Result<Request, TraceError> {
    let fail = |message: String| TraceError { line, message };
    if row.len() != TRACE_HEADER.len() {
        return Err(fail(format!("expected {} fields, got {}", TRACE_HEADER.len(), row.len())));
    }
    let arrival_s: f64 = row[0].parse().map_err(|_| fail(format!("bad arrival_s {:?}", &row[0])))?;
    if !arrival_s.is_finite() || arrival_s < 0.0 {
        return Err(fail(format!("arrival_s must be non-negative, got {arrival_s}")));
    }
    let user_id: u64 = row[1].parse().map_err(|_| fail(format!("bad user_id {:?}", &row[1])))?;
    let app: AppClass = row[2].parse().map_err(fail)?;
    let content_id = row[3].to_string();
    let genre: Genre = row[4].parse().map_err(fail)?;
    let size: i128 = row[5].parse().map_err(|_| fail(format!("bad size_bytes {:?}", &row[5])))?;
    if size < 0 {
        return Err(fail(format!("negative size_bytes {size}")));
    }
    let size_bytes = u64::try_from(size).map_err(|_| fail(format!("size_bytes {size} too large")))?;
    let live = match &row[6] {
        "0" => false,
        "1" => true,
        other => return Err(fail(format!("live must be 0 or 1, got {other:?}"))),
    };
    if live && !app.is_live() {
        return Err(fail(format!("live request with non-live app class {app}")));
    }
    Ok(Request { request_id, user_id, app, content_id, genre, size_bytes, arrival_s, live })
}

pub fn write_trace<W: Write>(writer: W, requests: &[Request]) -> Result<(), TraceIoError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let map = |e: csv::Error| TraceError { line: 0, message: e.to_string() };
    wtr.write_record(TRACE_HEADER).map_err(map)?;
    for r in requests {
        wtr.write_record([
            r.arrival_s.to_string(),
            r.user_id.to_string(),
            r.app.name().to_string(),
            r.content_id.clone(),
            r.genre.name().to_string(),
            r.size_bytes.to_string(),
            if r.live { "1" } else { "0" }.to_string(),
        ])
        .map_err(map)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Which flows count as long-lived and movable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftablePolicy {
    pub shiftable_apps: BTreeSet<AppClass>,
    pub min_size_bytes: u64,
}

impl Default for ShiftablePolicy {
    fn default() -> Self {
        Self {
            shiftable_apps: BTreeSet::from([AppClass::VideoOnDemand, AppClass::BulkSync, AppClass::P2P]),
            min_size_bytes: 50_000_000,
        }
    }
}

pub fn classify_shiftable(request: &Request, policy: &ShiftablePolicy) -> bool {
    policy.shiftable_apps.contains(&request.app) && request.size_bytes >= policy.min_size_bytes && !request.live
}
