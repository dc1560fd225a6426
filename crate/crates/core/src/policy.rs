//! First-match DSM rule engine, incentive offers, transit pricing and the
//! loyalty credit ledger.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::demand::{AppClass, QosClass, Request, DAY_S};
use crate::error::{ConfigError, LedgerError};
use crate::rewrite::RewriteSpec;

/// Half-open time-of-day window `[start_s, end_s)`; wraps past midnight
/// when `end_s < start_s`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl TimeWindow {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, String> {
        for v in [start_s, end_s] {
            if !v.is_finite() || !(0.0..=DAY_S).contains(&v) {
                return Err(format!("window bound {v} outside [0, 86400]"));
            }
        }
        if start_s.rem_euclid(DAY_S) == end_s.rem_euclid(DAY_S) {
            return Err("window start must differ from end modulo one day".into());
        }
        Ok(Self { start_s, end_s })
    }

    pub fn contains(&self, time_of_day_s: f64) -> bool {
        let t = time_of_day_s.rem_euclid(DAY_S);
        let (s, e) = (self.start_s.rem_euclid(DAY_S), self.end_s.rem_euclid(DAY_S));
        if s < e {
            s <= t && t < e
        } else {
            t >= s || t < e
        }
    }

    pub fn len_s(&self) -> f64 {
        (self.end_s - self.start_s).rem_euclid(DAY_S)
    }

    /// The earliest occurrence `[start, end)` in absolute simulation time
    /// whose start is strictly after `after_s`. `clock_offset_s` is the time
    /// of day at simulation time zero.
    pub fn next_occurrence(&self, after_s: f64, clock_offset_s: f64) -> (f64, f64) {
        let tod = (after_s + clock_offset_s).rem_euclid(DAY_S);
        let mut wait = (self.start_s - tod).rem_euclid(DAY_S);
        if wait == 0.0 {
            wait = DAY_S;
        }
        let start = after_s + wait;
        (start, start + self.len_s())
    }
}

impl TryFrom<[f64; 2]> for TimeWindow {
    type Error = String;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        TimeWindow::new(v[0], v[1])
    }
}

impl From<TimeWindow> for [f64; 2] {
    fn from(w: TimeWindow) -> Self {
        [w.start_s, w.end_s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncentiveKind {
    QosGuaranteeLater,
    ContractDiscount,
    ZeroRating,
    BundleDiscount,
    AdRemoval,
    QualityUpgrade,
    EnvironmentalInfo,
    CongestionInfo,
    LoyaltyCredits,
}

impl IncentiveKind {
    pub const ALL: [IncentiveKind; 9] = [
        IncentiveKind::QosGuaranteeLater,
        IncentiveKind::ContractDiscount,
        IncentiveKind::ZeroRating,
        IncentiveKind::BundleDiscount,
        IncentiveKind::AdRemoval,
        IncentiveKind::QualityUpgrade,
        IncentiveKind::EnvironmentalInfo,
        IncentiveKind::CongestionInfo,
        IncentiveKind::LoyaltyCredits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IncentiveKind::QosGuaranteeLater => "QosGuaranteeLater",
            IncentiveKind::ContractDiscount => "ContractDiscount",
            IncentiveKind::ZeroRating => "ZeroRating",
            IncentiveKind::BundleDiscount => "BundleDiscount",
            IncentiveKind::AdRemoval => "AdRemoval",
            IncentiveKind::QualityUpgrade => "QualityUpgrade",
            IncentiveKind::EnvironmentalInfo => "EnvironmentalInfo",
            IncentiveKind::CongestionInfo => "CongestionInfo",
            IncentiveKind::LoyaltyCredits => "LoyaltyCredits",
        }
    }

    /// Short human-readable description for staging pages.
    pub fn describe(self, magnitude: f64) -> String {
        match self {
            IncentiveKind::QosGuaranteeLater => {
                format!("Guaranteed high quality of service when you watch later ({magnitude} Mbit/s)")
            }
            IncentiveKind::ContractDiscount => format!("{magnitude}% off your next bill"),
            IncentiveKind::ZeroRating => "This download will not count towards your data allowance".into(),
            IncentiveKind::BundleDiscount => format!("{magnitude}% off a night-time data bundle"),
            IncentiveKind::AdRemoval => "Watch without adverts".into(),
            IncentiveKind::QualityUpgrade => "Free upgrade to higher video quality".into(),
            IncentiveKind::EnvironmentalInfo => format!("Waiting saves an estimated {magnitude} Wh of energy"),
            IncentiveKind::CongestionInfo => "Your neighbourhood network is congested right now".into(),
            IncentiveKind::LoyaltyCredits => format!("Earn {magnitude} loyalty points"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncentiveOffer {
    pub kind: IncentiveKind,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default = "default_offer_expiry")]
    pub expiry_s: u64,
}

fn default_offer_expiry() -> u64 {
    300
}

impl IncentiveOffer {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return Err(ConfigError::new("magnitude", "must be finite and non-negative"));
        }
        if self.kind == IncentiveKind::LoyaltyCredits && self.magnitude.fract() != 0.0 {
            return Err(ConfigError::new("magnitude", "loyalty credits must be a whole point count"));
        }
        Ok(())
    }

    /// Points earned for accepting this offer. Loyalty offers carry their own
    /// point count; other kinds earn `default_points`.
    pub fn credit_points(&self, default_points: u64) -> u64 {
        match self.kind {
            IncentiveKind::LoyaltyCredits => self.magnitude as u64,
            _ => default_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceKind {
    Continue,
    Delay,
    ShiftContent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Stage,
    Rewrite,
    Redirect,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    /// Empty means any class.
    #[serde(default)]
    pub app_classes: BTreeSet<AppClass>,
    #[serde(default)]
    pub min_size_bytes: u64,
    #[serde(default)]
    pub exclude_live: bool,
    /// Empty means any class.
    #[serde(default)]
    pub qos_classes: BTreeSet<QosClass>,
}

impl RuleMatch {
    fn is_empty(&self) -> bool {
        self.app_classes.is_empty() && self.min_size_bytes == 0 && !self.exclude_live && self.qos_classes.is_empty()
    }

    pub fn matches(&self, request: &Request, ctx: &DecisionContext) -> bool {
        (self.app_classes.is_empty() || self.app_classes.contains(&request.app))
            && ctx.download_size_bytes >= self.min_size_bytes
            && !(self.exclude_live && request.live)
            && (self.qos_classes.is_empty() || self.qos_classes.contains(&ctx.qos_class))
    }
}

/// All present conditions must hold; an empty trigger always fires.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utilization_gte: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_window: Option<TimeWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transit_price_gte: Option<f64>,
}

impl Trigger {
    pub fn fires(&self, ctx: &DecisionContext) -> bool {
        self.utilization_gte.is_none_or(|u| ctx.link_utilization.max() >= u)
            && self.peak_window.is_none_or(|w| w.contains(ctx.time_of_day_s))
            && self.transit_price_gte.is_none_or(|p| ctx.transit_price >= p)
    }
}

fn default_prompt_cap() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    #[serde(default)]
    pub trigger: Trigger,
    #[serde(default = "default_prompt_cap")]
    pub per_user_daily_prompt_cap: u32,
    pub strategy: Strategy,
    pub offer_template: IncentiveOffer,
}

impl Rule {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.matcher.is_empty() {
            return Err(ConfigError::new("match", "at least one match field must be set"));
        }
        if let Some(u) = self.trigger.utilization_gte {
            if !(0.0..=1.0).contains(&u) {
                return Err(ConfigError::new("trigger.utilization_gte", "must lie in [0, 1]"));
            }
        }
        if let Some(p) = self.trigger.transit_price_gte {
            if !p.is_finite() || p < 0.0 {
                return Err(ConfigError::new("trigger.transit_price_gte", "must be finite and non-negative"));
            }
        }
        self.offer_template.validate().map_err(|e| e.within("offer_template"))
    }

    pub fn applies(&self, request: &Request, ctx: &DecisionContext) -> bool {
        self.matcher.matches(request, ctx)
            && self.trigger.fires(ctx)
            && ctx.user_history.prompts_today < self.per_user_daily_prompt_cap
    }

    fn decision(&self, rule_index: usize) -> EnactmentDecision {
        match self.strategy {
            Strategy::Stage => EnactmentDecision::Stage {
                rule_index,
                offer: self.offer_template.clone(),
                options: BTreeSet::from([ChoiceKind::Continue, ChoiceKind::Delay, ChoiceKind::ShiftContent]),
            },
            Strategy::Rewrite => EnactmentDecision::Rewrite { rule_index, spec: RewriteSpec::default() },
            Strategy::Redirect => EnactmentDecision::Redirect { rule_index, cache_node: "edge".into() },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkUtilization {
    pub transit: f64,
    pub aggregation: f64,
}

impl LinkUtilization {
    pub fn max(&self) -> f64 {
        self.transit.max(self.aggregation)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub prompts_today: u32,
    pub accepts_total: u64,
    pub declines_total: u64,
    pub credits: u64,
}

/// Everything the rule set may condition on for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub link_utilization: LinkUtilization,
    pub transit_price: f64,
    pub user_history: UserHistory,
    pub download_size_bytes: u64,
    pub qos_class: QosClass,
    pub time_of_day_s: f64,
}

impl DecisionContext {
    pub fn for_request(request: &Request, time_of_day_s: f64) -> Self {
        Self {
            link_utilization: LinkUtilization::default(),
            transit_price: 0.0,
            user_history: UserHistory::default(),
            download_size_bytes: request.size_bytes,
            qos_class: request.app.qos_class(),
            time_of_day_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnactmentDecision {
    PassThrough,
    Stage { rule_index: usize, offer: IncentiveOffer, options: BTreeSet<ChoiceKind> },
    Rewrite { rule_index: usize, spec: RewriteSpec },
    Redirect { rule_index: usize, cache_node: String },
}

impl EnactmentDecision {
    pub fn label(&self) -> &'static str {
        match self {
            EnactmentDecision::PassThrough => "pass_through",
            EnactmentDecision::Stage { .. } => "stage",
            EnactmentDecision::Rewrite { .. } => "rewrite",
            EnactmentDecision::Redirect { .. } => "redirect",
        }
    }
}

/// An ordered, validated list of rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<Self, ConfigError> {
        for (i, rule) in rules.iter().enumerate() {
            rule.validate().map_err(|e| e.within(&format!("[{i}]")))?;
        }
        Ok(Self { rules })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let rules: Vec<Rule> = crate::error::from_json_str(text)?;
        Self::new(rules)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Index of the first rule that fully applies, without side effects.
    pub fn first_match(&self, request: &Request, ctx: &DecisionContext) -> Option<usize> {
        self.rules.iter().position(|r| r.applies(request, ctx))
    }

    /// Decide how to enact `request`. Emitting a staging prompt counts
    /// against the user's daily prompt budget in `ctx`.
    pub fn evaluate(&self, request: &Request, ctx: &mut DecisionContext) -> EnactmentDecision {
        let Some(idx) = self.first_match(request, ctx) else {
            return EnactmentDecision::PassThrough;
        };
        let decision = self.rules[idx].decision(idx);
        if matches!(decision, EnactmentDecision::Stage { .. }) {
            ctx.user_history.prompts_today += 1;
        }
        decision
    }
}

/// Piecewise-constant transit price over the day; `default` covers every
/// instant no window claims, and the first containing window wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSchedule {
    pub default: f64,
    #[serde(default)]
    pub windows: Vec<PricedWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricedWindow {
    pub window: TimeWindow,
    pub price: f64,
}

impl PriceSchedule {
    pub fn flat(price: f64) -> Self {
        Self { default: price, windows: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.default.is_finite() || self.default < 0.0 {
            return Err(ConfigError::new("default", "must be finite and non-negative"));
        }
        for (i, w) in self.windows.iter().enumerate() {
            if !w.price.is_finite() || w.price < 0.0 {
                return Err(ConfigError::new(format!("windows[{i}].price"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

impl Default for PriceSchedule {
    fn default() -> Self {
        Self::flat(1.0)
    }
}

pub fn transit_price(schedule: &PriceSchedule, time_of_day_s: f64) -> f64 {
    schedule.windows.iter().find(|w| w.window.contains(time_of_day_s)).map_or(schedule.default, |w| w.price)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditReason {
    OfferAccepted(IncentiveKind),
    Redemption,
    /// Storage contributed to a shared cache.
    CacheContribution,
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub time_s: f64,
    pub delta: i64,
    pub reason: CreditReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreditAccount {
    balance: u64,
    log: Vec<LedgerEntry>,
}

impl CreditAccount {
    pub fn balance(&self) -> u64 {
        self.balance
    }

    pub fn log(&self) -> &[LedgerEntry] {
        &self.log
    }
}

/// Per-user loyalty points with an append-only log. Balances never go
/// negative and credits never expire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditLedger<K: Ord = u64> {
    accounts: BTreeMap<K, CreditAccount>,
}

impl<K: Ord> Default for CreditLedger<K> {
    fn default() -> Self {
        Self { accounts: BTreeMap::new() }
    }
}

impl<K: Ord + Clone> CreditLedger<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn balance(&self, user: &K) -> u64 {
        self.accounts.get(user).map_or(0, CreditAccount::balance)
    }

    pub fn account(&self, user: &K) -> Option<&CreditAccount> {
        self.accounts.get(user)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&K, &CreditAccount)> {
        self.accounts.iter()
    }

    pub fn issue_credits(
        &mut self,
        user: &K,
        points: u64,
        time_s: f64,
        reason: CreditReason,
    ) -> Result<u64, LedgerError> {
        if points == 0 {
            return Err(LedgerError::NonPositive);
        }
        let account = self.accounts.entry(user.clone()).or_default();
        account.balance += points;
        account.log.push(LedgerEntry { time_s, delta: points as i64, reason });
        Ok(account.balance)
    }

    pub fn redeem_credits(
        &mut self,
        user: &K,
        points: u64,
        time_s: f64,
        reason: CreditReason,
    ) -> Result<u64, LedgerError> {
        if points == 0 {
            return Err(LedgerError::NonPositive);
        }
        let balance = self.balance(user);
        if points > balance {
            return Err(LedgerError::Insufficient { balance, requested: points });
        }
        let account = self.accounts.get_mut(user).expect("positive balance implies account");
        account.balance -= points;
        account.log.push(LedgerEntry { time_s, delta: -(points as i64), reason });
        Ok(account.balance)
    }

    pub fn total_issued(&self) -> u64 {
        self.accounts.values().flat_map(|a| a.log.iter()).filter(|e| e.delta > 0).map(|e| e.delta as u64).sum()
    }
}
