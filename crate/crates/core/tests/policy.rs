use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use staggercast::demand::{AppClass, Genre, QosClass, Request};
use staggercast::error::LedgerError;
use staggercast::policy::Strategy;
use staggercast::policy::*;

const H: f64 = 3600.0;

fn request(app: AppClass, size: u64, live: bool) -> Request {
    Request {
        request_id: 1,
        user_id: 42,
        app,
        content_id: "c".into(),
        genre: Genre::Movie,
        size_bytes: size,
        arrival_s: 0.0,
        live,
    }
}

fn ctx_for(r: &Request, utilization: f64, tod: f64, price: f64, prompts: u32) -> DecisionContext {
    let mut ctx = DecisionContext::for_request(r, tod);
    ctx.link_utilization = LinkUtilization { transit: utilization, aggregation: 0.0 };
    ctx.transit_price = price;
    ctx.user_history.prompts_today = prompts;
    ctx
}

fn stage_rule(apps: &[AppClass], min: u64, util: Option<f64>) -> Rule {
    Rule {
        matcher: RuleMatch {
            app_classes: apps.iter().copied().collect(),
            min_size_bytes: min,
            exclude_live: false,
            qos_classes: BTreeSet::new(),
        },
        trigger: Trigger { utilization_gte: util, peak_window: None, transit_price_gte: None },
        per_user_daily_prompt_cap: 3,
        strategy: Strategy::Stage,
        offer_template: IncentiveOffer { kind: IncentiveKind::ZeroRating, magnitude: 1.0, expiry_s: 300 },
    }
}

#[test]
fn empty_ruleset_passes_through() {
    let r = request(AppClass::VideoOnDemand, 500_000_000, false);
    let mut ctx = ctx_for(&r, 1.0, 0.0, 9.0, 0);
    assert_eq!(RuleSet::empty().evaluate(&r, &mut ctx), EnactmentDecision::PassThrough);
    assert_eq!(ctx.user_history.prompts_today, 0);
}

#[test]
fn worked_example_stage_then_cap() {
    let rules = RuleSet::new(vec![stage_rule(&[AppClass::VideoOnDemand], 100_000_000, Some(0.8))]).unwrap();
    let r = request(AppClass::VideoOnDemand, 500_000_000, false);
    let mut ctx = ctx_for(&r, 0.85, 0.0, 0.0, 0);
    match rules.evaluate(&r, &mut ctx) {
        EnactmentDecision::Stage { offer, options, rule_index } => {
            assert_eq!(rule_index, 0);
            assert_eq!(offer.kind, IncentiveKind::ZeroRating);
            assert!(options.contains(&ChoiceKind::Continue));
        }
        other => panic!("expected Stage, got {other:?}"),
    }
    assert_eq!(ctx.user_history.prompts_today, 1);

    let mut capped = ctx_for(&r, 0.85, 0.0, 0.0, 3);
    assert_eq!(rules.evaluate(&r, &mut capped), EnactmentDecision::PassThrough);
    assert_eq!(capped.user_history.prompts_today, 3);
}

/// Five independent predicates: app class, size, liveness, utilization,
/// peak window. The rule must fire exactly when all five hold.
#[test]
fn exhaustive_predicate_table() {
    let rule = Rule {
        matcher: RuleMatch {
            app_classes: BTreeSet::from([AppClass::VideoOnDemand, AppClass::LiveVideo]),
            min_size_bytes: 100,
            exclude_live: true,
            qos_classes: BTreeSet::new(),
        },
        trigger: Trigger {
            utilization_gte: Some(0.8),
            peak_window: Some(TimeWindow::new(18.0 * H, 23.0 * H).unwrap()),
            transit_price_gte: None,
        },
        per_user_daily_prompt_cap: 3,
        strategy: Strategy::Stage,
        offer_template: IncentiveOffer { kind: IncentiveKind::AdRemoval, magnitude: 0.0, expiry_s: 60 },
    };
    let rules = RuleSet::new(vec![rule]).unwrap();
    for bits in 0u32..32 {
        let p = |i: u32| bits & (1 << i) != 0;
        // the liveness flag is set directly so all five bits vary independently
        let app = if p(0) { AppClass::VideoOnDemand } else { AppClass::Email };
        let r = request(app, if p(1) { 100 } else { 99 }, !p(2));
        let ctx_util = if p(3) { 0.8 } else { 0.79 };
        let tod = if p(4) { 18.0 * H } else { 23.0 * H };
        let mut ctx = ctx_for(&r, ctx_util, tod, 0.0, 0);

        let app_ok = matches!(r.app, AppClass::VideoOnDemand | AppClass::LiveVideo);
        let expect_fire =
            app_ok && r.size_bytes >= 100 && !r.live && ctx_util >= 0.8 && (18.0 * H..23.0 * H).contains(&tod);
        let fired = matches!(rules.evaluate(&r, &mut ctx), EnactmentDecision::Stage { .. });
        assert_eq!(fired, expect_fire, "bits {bits:05b}");
    }
}

#[test]
fn exclude_live_never_fires_on_live() {
    let mut rule = stage_rule(&[AppClass::LiveVideo], 0, None);
    rule.matcher.exclude_live = true;
    let rules = RuleSet::new(vec![rule]).unwrap();
    for size in [1, 1_000, 10_000_000_000] {
        let r = request(AppClass::LiveVideo, size, true);
        let mut ctx = ctx_for(&r, 1.0, 0.0, 0.0, 0);
        assert_eq!(rules.evaluate(&r, &mut ctx), EnactmentDecision::PassThrough);
    }
}

#[test]
fn transit_price_lookup() {
    assert_eq!(transit_price(&PriceSchedule::flat(1.0), 0.0), 1.0);
    assert_eq!(transit_price(&PriceSchedule::flat(1.0), 86_399.0), 1.0);
    let sched = PriceSchedule {
        default: 0.5,
        windows: vec![PricedWindow { window: TimeWindow::new(18.0 * H, 23.0 * H).unwrap(), price: 2.0 }],
    };
    assert_eq!(transit_price(&sched, 20.0 * H), 2.0);
    assert_eq!(transit_price(&sched, 18.0 * H), 2.0);
    assert_eq!(transit_price(&sched, 23.0 * H), 0.5);
    assert_eq!(transit_price(&sched, 3.0 * H), 0.5);
}

#[test]
fn wrapping_window_is_half_open() {
    let w = TimeWindow::new(22.0 * H, 2.0 * H).unwrap();
    assert!(w.contains(23.0 * H));
    assert!(w.contains(0.0));
    assert!(w.contains(1.5 * H));
    assert!(!w.contains(2.0 * H));
    assert!(!w.contains(21.9 * H));
    assert!(TimeWindow::new(5.0, 5.0).is_err());
    // start and end coincide modulo a day
    assert!(TimeWindow::new(0.0, 86_400.0).is_err());
    assert!(TimeWindow::new(0.0, 86_399.0).is_ok());
}

#[test]
fn loader_reports_rule_index() {
    let err = RuleSet::from_json(
        r#"[{"match": {"app_classes": ["Email"]}, "strategy": "Stage", "offer_template": {"kind": "ZeroRating"}},
            {"match": {"app_classes": ["Fax"]}, "strategy": "Stage", "offer_template": {"kind": "ZeroRating"}}]"#,
    )
    .unwrap_err();
    assert!(err.path.starts_with("[1].match"), "{err}");

    let err =
        RuleSet::from_json(r#"[{"match": {}, "strategy": "Redirect", "offer_template": {"kind": "ZeroRating"}}]"#)
            .unwrap_err();
    assert_eq!(err.path, "[0].match");

    let err = RuleSet::from_json(
        r#"[{"match": {"min_size_bytes": 1}, "strategy": "Stage", "offer_template": {"kind": "ZeroRating"}, "colour": 1}]"#,
    )
    .unwrap_err();
    assert!(err.message.contains("colour"), "{err}");

    let err = RuleSet::from_json(
        r#"[{"match": {"min_size_bytes": 1}, "trigger": {"peak_window": [3600, 3600]}, "strategy": "Stage", "offer_template": {"kind": "ZeroRating"}}]"#,
    )
    .unwrap_err();
    assert_eq!(err.path, "[0].trigger.peak_window");
}

#[test]
fn ledger_examples() {
    let mut l: CreditLedger = CreditLedger::new();
    assert_eq!(l.issue_credits(&1, 10, 0.0, CreditReason::Redemption), Ok(10));
    let mut l: CreditLedger = CreditLedger::new();
    l.issue_credits(&1, 5, 0.0, CreditReason::CacheContribution).unwrap();
    assert_eq!(l.issue_credits(&1, 7, 1.0, CreditReason::CacheContribution), Ok(12));
    assert_eq!(l.account(&1).unwrap().log().len(), 2);
    assert_eq!(l.redeem_credits(&1, 12, 2.0, CreditReason::Redemption), Ok(0));
    assert_eq!(l.issue_credits(&1, 0, 3.0, CreditReason::Redemption), Err(LedgerError::NonPositive));

    let mut l: CreditLedger = CreditLedger::new();
    l.issue_credits(&2, 5, 0.0, CreditReason::Redemption).unwrap();
    let before = l.clone();
    assert_eq!(
        l.redeem_credits(&2, 6, 1.0, CreditReason::Redemption),
        Err(LedgerError::Insufficient { balance: 5, requested: 6 })
    );
    assert_eq!(l, before);

    let mut l: CreditLedger = CreditLedger::new();
    l.issue_credits(&3, 10, 0.0, CreditReason::Redemption).unwrap();
    l.redeem_credits(&3, 4, 1.0, CreditReason::Redemption).unwrap();
    l.issue_credits(&3, 1, 2.0, CreditReason::Redemption).unwrap();
    let fold: i64 = l.account(&3).unwrap().log().iter().map(|e| e.delta).sum();
    assert_eq!((l.balance(&3), fold), (7, 7));
}

/// Independent statement of the rule semantics used as a reference.
fn reference_fires(rule: &Rule, r: &Request, ctx: &DecisionContext) -> bool {
    let m = &rule.matcher;
    let t = &rule.trigger;
    let app_ok = m.app_classes.is_empty() || m.app_classes.iter().any(|a| *a == r.app);
    let qos = match r.app {
        AppClass::VideoOnDemand | AppClass::LiveVideo => QosClass::Streaming,
        AppClass::BulkSync | AppClass::P2P => QosClass::Bulk,
        _ => QosClass::Interactive,
    };
    let qos_ok = m.qos_classes.is_empty() || m.qos_classes.contains(&qos);
    let util = ctx.link_utilization.transit.max(ctx.link_utilization.aggregation);
    let in_window = |w: &TimeWindow| {
        let [s, e]: [f64; 2] = (*w).into();
        let tod = ctx.time_of_day_s;
        if s < e {
            s <= tod && tod < e
        } else {
            tod >= s || tod < e
        }
    };
    app_ok
        && r.size_bytes >= m.min_size_bytes
        && !(m.exclude_live && r.live)
        && qos_ok
        && t.utilization_gte.is_none_or(|u| util >= u)
        && t.peak_window.as_ref().is_none_or(in_window)
        && t.transit_price_gte.is_none_or(|p| ctx.transit_price >= p)
        && ctx.user_history.prompts_today < rule.per_user_daily_prompt_cap
}

fn arb_rule() -> impl proptest::strategy::Strategy<Value = Rule> {
    (
        proptest::collection::btree_set(0usize..8, 0..3),
        prop_oneof![Just(0u64), Just(100), Just(1000)],
        any::<bool>(),
        proptest::collection::btree_set(0usize..3, 0..2),
        proptest::option::of(prop_oneof![Just(0.5), Just(0.8)]),
        proptest::option::of(prop_oneof![Just((18.0 * H, 23.0 * H)), Just((22.0 * H, 2.0 * H))]),
        proptest::option::of(prop_oneof![Just(1.0), Just(2.0)]),
        0u32..3,
        0usize..3,
    )
        .prop_map(|(apps, min, excl, qos, util, win, price, cap, strat)| Rule {
            matcher: RuleMatch {
                app_classes: apps.into_iter().map(|i| AppClass::ALL[i]).collect(),
                // keep at least one match field set
                min_size_bytes: min.max(1),
                exclude_live: excl,
                qos_classes: qos
                    .into_iter()
                    .map(|i| [QosClass::Interactive, QosClass::Streaming, QosClass::Bulk][i])
                    .collect(),
            },
            trigger: Trigger {
                utilization_gte: util,
                peak_window: win.map(|(s, e)| TimeWindow::new(s, e).unwrap()),
                transit_price_gte: price,
            },
            per_user_daily_prompt_cap: cap,
            strategy: [Strategy::Stage, Strategy::Rewrite, Strategy::Redirect][strat],
            offer_template: IncentiveOffer { kind: IncentiveKind::CongestionInfo, magnitude: 0.0, expiry_s: 300 },
        })
}

fn arb_case() -> impl proptest::strategy::Strategy<Value = (Request, DecisionContext)> {
    (
        0usize..8,
        prop_oneof![Just(1u64), Just(100), Just(5000)],
        any::<bool>(),
        prop_oneof![Just(0.0), Just(0.5), Just(0.79), Just(0.8), Just(1.0)],
        prop_oneof![Just(0.0), Just(1.0 * H), Just(18.0 * H), Just(22.5 * H), Just(23.0 * H)],
        prop_oneof![Just(0.5), Just(1.0), Just(2.0)],
        0u32..4,
    )
        .prop_map(|(app, size, live, util, tod, price, prompts)| {
            let app = AppClass::ALL[app];
            let r = request(app, size, live && app == AppClass::LiveVideo);
            let mut ctx = ctx_for(&r, 0.0, tod, price, prompts);
            ctx.link_utilization.aggregation = util;
            (r, ctx)
        })
}

proptest! {
    #[test]
    fn evaluate_matches_brute_force(rules in proptest::collection::vec(arb_rule(), 0..5), (r, ctx) in arb_case()) {
        let set = RuleSet::new(rules.clone()).unwrap();
        let expected = rules.iter().position(|rule| reference_fires(rule, &r, &ctx));
        let mut c = ctx.clone();
        let decision = set.evaluate(&r, &mut c);
        match expected {
            None => prop_assert_eq!(decision, EnactmentDecision::PassThrough),
            Some(i) => {
                let idx = match &decision {
                    EnactmentDecision::Stage { rule_index, .. }
                    | EnactmentDecision::Rewrite { rule_index, .. }
                    | EnactmentDecision::Redirect { rule_index, .. } => *rule_index,
                    EnactmentDecision::PassThrough => usize::MAX,
                };
                prop_assert_eq!(idx, i);
                let staged = rules[i].strategy == Strategy::Stage;
                prop_assert_eq!(c.user_history.prompts_today, ctx.user_history.prompts_today + u32::from(staged));
            }
        }
    }

    #[test]
    fn rules_below_first_match_are_irrelevant(
        rules in proptest::collection::vec(arb_rule(), 1..6),
        (r, ctx) in arb_case(),
        shuffle in any::<u64>(),
    ) {
        let set = RuleSet::new(rules.clone()).unwrap();
        let first = set.first_match(&r, &ctx);
        let cut = first.map_or(rules.len(), |i| i + 1);
        let mut tail: Vec<Rule> = rules[cut..].to_vec();
        // deterministic permutation from the shuffle seed
        let mut s = shuffle;
        for i in (1..tail.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            tail.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut permuted = rules[..cut].to_vec();
        permuted.extend(tail);
        let other = RuleSet::new(permuted).unwrap();
        if first.is_some() {
            prop_assert_eq!(set.evaluate(&r, &mut ctx.clone()), other.evaluate(&r, &mut ctx.clone()));
        } else {
            prop_assert_eq!(other.evaluate(&r, &mut ctx.clone()), EnactmentDecision::PassThrough);
        }
    }

    #[test]
    fn ledger_balance_is_fold_of_log(ops in proptest::collection::vec((0u64..3, any::<bool>(), 0u64..20), 0..60)) {
        let mut ledger: CreditLedger = CreditLedger::new();
        let mut shadow = [0i64; 3];
        for (i, (user, issue, pts)) in ops.into_iter().enumerate() {
            let t = i as f64;
            let res = if issue {
                ledger.issue_credits(&user, pts, t, CreditReason::Other("test".into()))
            } else {
                ledger.redeem_credits(&user, pts, t, CreditReason::Redemption)
            };
            let want_ok = pts > 0 && (issue || pts as i64 <= shadow[user as usize]);
            prop_assert_eq!(res.is_ok(), want_ok);
            if want_ok {
                shadow[user as usize] += if issue { pts as i64 } else { -(pts as i64) };
            }
            for u in 0..3u64 {
                let fold: i64 = ledger.account(&u).map_or(0, |a| a.log().iter().map(|e| e.delta).sum());
                prop_assert_eq!(ledger.balance(&u) as i64, fold);
                prop_assert_eq!(fold, shadow[u as usize]);
            }
        }
    }
}
