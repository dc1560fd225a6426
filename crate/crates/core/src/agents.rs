//! Survey-parameterized user population and the offer acceptance model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{AppClass, Genre, Request};
use crate::error::ConfigError;
use crate::policy::{IncentiveKind, IncentiveOffer};

const THREE_HOURS_S: f64 = 3.0 * 3600.0;

/// Stated willingness to shift. `NotAnswered` behaves like `Never` but is
/// kept distinct so answer fractions can be compared against the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Propensity {
    Never,
    Occasionally,
    Often,
    NotAnswered,
}

/// Attitude to delaying video specifically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VideoDelayAttitude {
    Always,
    Sometimes,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u64,
    pub timeshift_propensity: Propensity,
    /// Probability of accepting a delay of more than three hours, per app.
    pub per_app_over3h_willingness: BTreeMap<AppClass, f64>,
    /// Never shifts remote work, regardless of delay length.
    pub remote_work_never: bool,
    pub content_shift_propensity: Propensity,
    pub video_delay: VideoDelayAttitude,
    /// `true` marks genres the user is very unlikely to delay.
    pub genre_delay_block: BTreeMap<Genre, bool>,
    pub incentive_weight: BTreeMap<IncentiveKind, f64>,
    pub specific_video_intent: bool,
    pub front_page_watcher: bool,
    pub vod_everyday: bool,
}

impl UserProfile {
    /// A maximally flexible profile: every weight and willingness 1.
    pub fn flexible(user_id: u64, propensity: Propensity) -> Self {
        Self {
            user_id,
            timeshift_propensity: propensity,
            per_app_over3h_willingness: AppClass::ALL.iter().map(|a| (*a, 1.0)).collect(),
            remote_work_never: false,
            content_shift_propensity: propensity,
            video_delay: VideoDelayAttitude::Sometimes,
            genre_delay_block: Genre::ALL.iter().map(|g| (*g, false)).collect(),
            incentive_weight: IncentiveKind::ALL.iter().map(|k| (*k, 1.0)).collect(),
            specific_video_intent: false,
            front_page_watcher: false,
            vod_everyday: false,
        }
    }

    pub fn weight(&self, kind: IncentiveKind) -> f64 {
        self.incentive_weight.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn blocks_delay(&self, genre: Genre) -> bool {
        self.genre_delay_block.get(&genre).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeshiftMarginals {
    pub never: f64,
    pub often_or_occasionally: f64,
    pub na: f64,
    /// Split of `often_or_occasionally`.
    pub often: f64,
    pub occasionally: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentShiftMarginals {
    pub never: f64,
    pub occasionally: f64,
    pub often: f64,
    pub na: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityBase {
    pub never: f64,
    pub occasionally: f64,
    pub often: f64,
}

impl PropensityBase {
    pub fn of(&self, p: Propensity) -> f64 {
        match p {
            Propensity::Never | Propensity::NotAnswered => 0.0,
            Propensity::Occasionally => self.occasionally,
            Propensity::Often => self.often,
        }
    }
}

impl Default for PropensityBase {
    fn default() -> Self {
        Self { never: 0.0, occasionally: 0.3, often: 0.8 }
    }
}

/// Marginal distributions a population is sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub timeshift: TimeshiftMarginals,
    pub over3h_willingness: BTreeMap<AppClass, f64>,
    pub remote_work_never: f64,
    pub content_shift: ContentShiftMarginals,
    pub always_delay: f64,
    pub never_delay: f64,
    pub genre_delay_block: BTreeMap<Genre, f64>,
    pub incentive_popularity: BTreeMap<IncentiveKind, f64>,
    pub specific_video_intent: f64,
    pub front_page_watcher: f64,
    pub vod_everyday: f64,
    #[serde(default)]
    pub propensity_base: PropensityBase,
    /// Ignore incentive weights when deciding on alternative content.
    #[serde(default)]
    pub neutralize_incentive_for_content_shift: bool,
    /// Free-form labels recording where each default came from
    /// (`"survey"` or `"assumed"`). Not used by the model.
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        use AppClass::*;
        let survey = [
            "timeshift",
            "over3h_willingness.Email",
            "remote_work_never",
            "content_shift",
            "always_delay",
            "never_delay",
            "genre_delay_block",
            "incentive_popularity.EnvironmentalInfo",
            "incentive_popularity.AdRemoval",
            "incentive_popularity.QualityUpgrade",
            "specific_video_intent",
            "front_page_watcher",
            "vod_everyday",
        ];
        let assumed = [
            "timeshift.often",
            "timeshift.occasionally",
            "over3h_willingness",
            "incentive_popularity",
            "propensity_base",
        ];
        let provenance = survey
            .iter()
            .map(|k| (k.to_string(), "survey".to_string()))
            .chain(assumed.iter().map(|k| (k.to_string(), "assumed".to_string())))
            .collect();
        Self {
            timeshift: TimeshiftMarginals {
                never: 0.28,
                often_or_occasionally: 0.70,
                na: 0.02,
                often: 0.20,
                occasionally: 0.50,
            },
            over3h_willingness: BTreeMap::from([
                (VideoOnDemand, 0.55),
                (LiveVideo, 0.10),
                (Gaming, 0.50),
                (Email, 0.06),
                (RemoteWork, 0.10),
                (Browsing, 0.35),
                (BulkSync, 0.70),
                (P2P, 0.65),
            ]),
            remote_work_never: 0.54,
            content_shift: ContentShiftMarginals { never: 0.30, occasionally: 0.56, often: 0.06, na: 0.08 },
            always_delay: 0.15,
            never_delay: 0.12,
            genre_delay_block: BTreeMap::from([(Genre::Sport, 0.44), (Genre::Movie, 0.19)]),
            incentive_popularity: BTreeMap::from([
                (IncentiveKind::QosGuaranteeLater, 0.60),
                (IncentiveKind::ContractDiscount, 0.50),
                (IncentiveKind::ZeroRating, 0.45),
                (IncentiveKind::BundleDiscount, 0.40),
                (IncentiveKind::AdRemoval, 0.52),
                (IncentiveKind::QualityUpgrade, 0.30),
                (IncentiveKind::EnvironmentalInfo, 0.29),
                (IncentiveKind::CongestionInfo, 0.15),
                (IncentiveKind::LoyaltyCredits, 0.35),
            ]),
            specific_video_intent: 0.51,
            front_page_watcher: 0.08,
            vod_everyday: 0.17,
            propensity_base: PropensityBase::default(),
            neutralize_incentive_for_content_shift: false,
            provenance,
        }
    }
}

fn check_prob(path: &str, p: f64) -> Result<(), ConfigError> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("probability {p} outside [0, 1]")))
    }
}

fn check_sum(path: &str, parts: &[f64], target: f64) -> Result<(), ConfigError> {
    let total: f64 = parts.iter().sum();
    if (total - target).abs() > 1e-9 {
        Err(ConfigError::new(path, format!("categories sum to {total}, expected {target}")))
    } else {
        Ok(())
    }
}

impl PopulationSpec {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let spec: Self = crate::error::from_json_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.timeshift;
        for (name, p) in [
            ("never", t.never),
            ("often_or_occasionally", t.often_or_occasionally),
            ("na", t.na),
            ("often", t.often),
            ("occasionally", t.occasionally),
        ] {
            check_prob(&format!("timeshift.{name}"), p)?;
        }
        check_sum("timeshift", &[t.never, t.often_or_occasionally, t.na], 1.0)?;
        check_sum("timeshift.often", &[t.often, t.occasionally], t.often_or_occasionally)?;

        let c = &self.content_shift;
        for (name, p) in [("never", c.never), ("occasionally", c.occasionally), ("often", c.often), ("na", c.na)] {
            check_prob(&format!("content_shift.{name}"), p)?;
        }
        check_sum("content_shift", &[c.never, c.occasionally, c.often, c.na], 1.0)?;

        for (app, p) in &self.over3h_willingness {
            check_prob(&format!("over3h_willingness.{app}"), *p)?;
        }
        check_prob("remote_work_never", self.remote_work_never)?;
        let remote = self.over3h_willingness.get(&AppClass::RemoteWork).copied().unwrap_or(0.0);
        if remote > 1.0 - self.remote_work_never + 1e-12 {
            return Err(ConfigError::new(
                "over3h_willingness.RemoteWork",
                "cannot exceed the share of users who would ever shift remote work",
            ));
        }
        check_prob("always_delay", self.always_delay)?;
        check_prob("never_delay", self.never_delay)?;
        if self.always_delay + self.never_delay > 1.0 + 1e-9 {
            return Err(ConfigError::new("always_delay", "always_delay + never_delay exceeds 1"));
        }
        for (g, p) in &self.genre_delay_block {
            check_prob(&format!("genre_delay_block.{g}"), *p)?;
        }
        for (k, p) in &self.incentive_popularity {
            check_prob(&format!("incentive_popularity.{}", k.name()), *p)?;
        }
        check_prob("specific_video_intent", self.specific_video_intent)?;
        check_prob("front_page_watcher", self.front_page_watcher)?;
        check_prob("vod_everyday", self.vod_everyday)?;
        let b = &self.propensity_base;
        check_prob("propensity_base.never", b.never)?;
        check_prob("propensity_base.occasionally", b.occasionally)?;
        check_prob("propensity_base.often", b.often)?;
        Ok(())
    }

    /// Draw one profile. The draw order is fixed, so a profile depends only
    /// on the random stream it is given.
    pub fn sample_profile<R: Rng + ?Sized>(&self, user_id: u64, rng: &mut R) -> UserProfile {
        let t = &self.timeshift;
        let timeshift_propensity = categorical(
            rng.random(),
            &[
                (Propensity::Never, t.never),
                (Propensity::Often, t.often),
                (Propensity::Occasionally, t.occasionally),
                (Propensity::NotAnswered, t.na),
            ],
        );
        let remote_work_never = rng.random::<f64>() < self.remote_work_never;
        let per_app_over3h_willingness = AppClass::ALL
            .iter()
            .map(|app| {
                let p = self.over3h_willingness.get(app).copied().unwrap_or(0.0);
                let u: f64 = rng.random();
                let willing = if *app == AppClass::RemoteWork {
                    !remote_work_never && u * (1.0 - self.remote_work_never) < p
                } else {
                    u < p
                };
                (*app, if willing { 1.0 } else { 0.0 })
            })
            .collect();
        let c = &self.content_shift;
        let content_shift_propensity = categorical(
            rng.random(),
            &[
                (Propensity::Never, c.never),
                (Propensity::Occasionally, c.occasionally),
                (Propensity::Often, c.often),
                (Propensity::NotAnswered, c.na),
            ],
        );
        let video_delay = categorical(
            rng.random(),
            &[
                (VideoDelayAttitude::Always, self.always_delay),
                (VideoDelayAttitude::Never, self.never_delay),
                (VideoDelayAttitude::Sometimes, 1.0 - self.always_delay - self.never_delay),
            ],
        );
        let genre_delay_block = Genre::ALL
            .iter()
            .map(|g| {
                let p = self.genre_delay_block.get(g).copied().unwrap_or(0.0);
                (*g, rng.random::<f64>() < p)
            })
            .collect();
        let incentive_weight = IncentiveKind::ALL
            .iter()
            .map(|k| {
                let p = self.incentive_popularity.get(k).copied().unwrap_or(0.0);
                (*k, if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            })
            .collect();
        UserProfile {
            user_id,
            timeshift_propensity,
            per_app_over3h_willingness,
            remote_work_never,
            content_shift_propensity,
            video_delay,
            genre_delay_block,
            incentive_weight,
            specific_video_intent: rng.random::<f64>() < self.specific_video_intent,
            front_page_watcher: rng.random::<f64>() < self.front_page_watcher,
            vod_everyday: rng.random::<f64>() < self.vod_everyday,
        }
    }

    pub fn acceptance_model(&self) -> AcceptanceModel {
        AcceptanceModel {
            base: self.propensity_base.clone(),
            neutralize_incentive_for_content_shift: self.neutralize_incentive_for_content_shift,
        }
    }
}

fn categorical<T: Copy>(u: f64, cats: &[(T, f64)]) -> T {
    let mut acc = 0.0;
    for (c, p) in cats {
        acc += p;
        if u < acc {
            return *c;
        }
    }
    cats.last().expect("non-empty categories").0
}

/// Per-user random stream: profiles depend only on (seed, user id).
pub fn profile_rng(seed: u64, user_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_9a9e_0000_0001);
    rng.set_stream(user_id);
    rng
}

pub fn sample_population(spec: &PopulationSpec, n: u64, seed: u64) -> Result<Vec<UserProfile>, ConfigError> {
    sample_profiles_for(spec, 0..n, seed)
}

pub fn sample_profiles_for(
    spec: &PopulationSpec,
    user_ids: impl IntoIterator<Item = u64>,
    seed: u64,
) -> Result<Vec<UserProfile>, ConfigError> {
    spec.validate()?;
    Ok(user_ids.into_iter().map(|id| spec.sample_profile(id, &mut profile_rng(seed, id))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "choice", rename_all = "snake_case")]
pub enum UserChoice {
    Continue,
    Delay { new_access_s: f64 },
    ShiftContent { alternative_content_id: String },
}

impl UserChoice {
    pub fn is_accept(&self) -> bool {
        !matches!(self, UserChoice::Continue)
    }
}

/// What a staging prompt actually offers. Continue is always available.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOptions {
    /// Absolute `[start, end)` the new access time is drawn from; the start
    /// must lie after the request's arrival.
    pub delay_window: Option<(f64, f64)>,
    pub alternative: Option<String>,
}

fn over3h(profile: &UserProfile, app: AppClass) -> f64 {
    profile.per_app_over3h_willingness.get(&app).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceModel {
    pub base: PropensityBase,
    pub neutralize_incentive_for_content_shift: bool,
}

impl AcceptanceModel {
    /// Probability that a Delay is chosen, given it is offered.
    pub fn delay_probability(
        &self,
        profile: &UserProfile,
        offer: &IncentiveOffer,
        request: &Request,
        window_start: f64,
    ) -> f64 {
        if profile.blocks_delay(request.genre) {
            return 0.0;
        }
        let long_delay = window_start - request.arrival_s > THREE_HOURS_S;
        let app_factor = if request.app.is_video() {
            match profile.video_delay {
                VideoDelayAttitude::Never => 0.0,
                VideoDelayAttitude::Always => 1.0,
                VideoDelayAttitude::Sometimes if long_delay => over3h(profile, request.app),
                VideoDelayAttitude::Sometimes => 1.0,
            }
        } else if request.app == AppClass::RemoteWork && profile.remote_work_never {
            0.0
        } else if long_delay {
            over3h(profile, request.app)
        } else {
            1.0
        };
        self.base.of(profile.timeshift_propensity) * profile.weight(offer.kind) * app_factor
    }

    pub fn shift_probability(&self, profile: &UserProfile, offer: &IncentiveOffer) -> f64 {
        let weight = if self.neutralize_incentive_for_content_shift { 1.0 } else { profile.weight(offer.kind) };
        self.base.of(profile.content_shift_propensity) * weight
    }

    /// Probability that the user accepts anything other than Continue.
    pub fn acceptance_probability(
        &self,
        profile: &UserProfile,
        offer: &IncentiveOffer,
        request: &Request,
        options: &StageOptions,
    ) -> f64 {
        let (p_delay, p_shift) = self.choice_probabilities(profile, offer, request, options);
        p_delay + (1.0 - p_delay) * p_shift
    }

    fn choice_probabilities(
        &self,
        profile: &UserProfile,
        offer: &IncentiveOffer,
        request: &Request,
        options: &StageOptions,
    ) -> (f64, f64) {
        let p_delay =
            options.delay_window.map_or(0.0, |(start, _)| self.delay_probability(profile, offer, request, start));
        let p_shift = if options.alternative.is_some() { self.shift_probability(profile, offer) } else { 0.0 };
        (p_delay, p_shift)
    }

    /// Draw the user's answer to a staging prompt. Consumes one uniform,
    /// plus one more when the answer is Delay.
    pub fn respond<R: Rng + ?Sized>(
        &self,
        profile: &UserProfile,
        offer: &IncentiveOffer,
        request: &Request,
        options: &StageOptions,
        rng: &mut R,
    ) -> UserChoice {
        let (p_delay, p_shift) = self.choice_probabilities(profile, offer, request, options);
        let u: f64 = rng.random();
        if u < p_delay {
            let (start, end) = options.delay_window.expect("p_delay > 0 implies a window");
            let t = start + rng.random::<f64>() * (end - start);
            // start > arrival, so t does too
            return UserChoice::Delay { new_access_s: t.max(start) };
        }
        if u < p_delay + (1.0 - p_delay) * p_shift {
            let alt = options.alternative.clone().expect("p_shift > 0 implies an alternative");
            return UserChoice::ShiftContent { alternative_content_id: alt };
        }
        UserChoice::Continue
    }
}

/// One entry of a cache catalog, highest-ranked first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub content_id: String,
    pub genre: Genre,
    pub cached: bool,
}

/// Best cached substitute for `request`: the highest-ranked cached item of
/// the same genre, or for users without a specific title in mind the
/// highest-ranked cached item of any genre.
pub fn pick_alternative<'a>(
    catalog: impl IntoIterator<Item = &'a CatalogItem>,
    request: &Request,
    profile: &UserProfile,
) -> Option<String> {
    if matches!(profile.content_shift_propensity, Propensity::Never | Propensity::NotAnswered) {
        return None;
    }
    let mut first_any: Option<&CatalogItem> = None;
    for item in catalog {
        if !item.cached || item.content_id == request.content_id {
            continue;
        }
        if item.genre == request.genre {
            return Some(item.content_id.clone());
        }
        first_any.get_or_insert(item);
    }
    if profile.specific_video_intent {
        None
    } else {
        first_any.map(|c| c.content_id.clone())
    }
}
