//! Hazard, loss and response data model plus the elementary quantitative kernels.
//!
//! A hazard is a finite set of independent annual event scenarios. Each scenario
//! carries a per-occurrence monetary magnitude for every loss it touches, so the
//! expected annual loss of a loss item is an exact finite sum.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::CycleConfig;
use crate::error::{Diagnostic, PclError, Result};
use crate::scenario_io::ScenarioDocument;

pub type EventId = String;
pub type LossId = String;
pub type ActionId = String;
pub type InstrumentId = String;
pub type GroupId = String;

/// Tolerance on the incidence-sum rule.
pub const INCIDENCE_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardModel {
    pub hazard_id: String,
    pub name: String,
    pub currency_unit: String,
    #[serde(default)]
    pub events: Vec<EventScenario>,
}

impl HazardModel {
    pub fn event(&self, event_id: &str) -> Option<&EventScenario> {
        self.events.iter().find(|e| e.event_id == event_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventScenario {
    pub event_id: EventId,
    pub annual_probability: f64,
    #[serde(default)]
    pub magnitudes: BTreeMap<LossId, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCategory {
    Human,
    Physical,
    Socioeconomic,
    Sociocultural,
    Environmental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tolerability {
    #[default]
    Unclassified,
    Tolerable,
    Intolerable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossItem {
    pub loss_id: LossId,
    #[serde(default)]
    pub description: String,
    pub category: LossCategory,
    /// Share of the loss burden borne by each income group.
    pub incidence: BTreeMap<GroupId, f64>,
    #[serde(default)]
    pub tolerability: Tolerability,
}

/// A preemptive (P-cluster) measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseAction {
    pub action_id: ActionId,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub annual_cost: f64,
    #[serde(default)]
    pub capital_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime_years: Option<u32>,
    pub reductions: BTreeMap<LossId, f64>,
}

impl ResponseAction {
    /// Recurring cost plus annualized capital cost.
    pub fn annualized_cost(&self, discount_rate: f64) -> Result<f64> {
        if self.capital_cost > 0.0 {
            let lifetime = self.lifetime_years.ok_or_else(|| {
                PclError::Domain(format!("action {} has capital cost but no lifetime", self.action_id))
            })?;
            Ok(self.annual_cost + annualize_capital(self.capital_cost, lifetime, discount_rate)?)
        } else {
            Ok(self.annual_cost)
        }
    }

    /// Reduction fraction on a loss, 0 when the action does not touch it.
    pub fn reduction(&self, loss_id: &str) -> f64 {
        self.reductions.get(loss_id).copied().unwrap_or(0.0)
    }
}

/// A contingent (C-cluster) instrument covering one loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContingentInstrument {
    pub instrument_id: InstrumentId,
    #[serde(default)]
    pub description: String,
    pub covers: LossId,
    pub coverage: f64,
    pub loading: f64,
    #[serde(default)]
    pub fixed_annual_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synergy {
    pub p_action: ActionId,
    pub c_instrument: InstrumentId,
    pub discounted_loading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionCluster {
    P,
    C,
    L,
}

impl fmt::Display for ActionCluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionCluster::P => "P",
            ActionCluster::C => "C",
            ActionCluster::L => "L",
        };
        f.write_str(s)
    }
}

/// Σ p·magnitude over the considered events.
pub fn expected_annual_loss(loss_id: &str, hazard: &HazardModel, considered_events: &BTreeSet<EventId>) -> Result<f64> {
    let mut total = 0.0;
    for event_id in considered_events {
        let event = hazard
            .event(event_id)
            .ok_or_else(|| PclError::Reference(format!("unknown event {event_id} in hazard {}", hazard.hazard_id)))?;
        if let Some(magnitude) = event.magnitudes.get(loss_id) {
            total += event.annual_probability * magnitude;
        }
    }
    Ok(total)
}

/// Multiplicative composition of reductions: Π(1 − r).
pub fn residual_fraction(reductions: &[f64]) -> Result<f64> {
    let mut residual = 1.0;
    for &r in reductions {
        if !(0.0..=1.0).contains(&r) {
            return Err(PclError::Domain(format!("reduction fraction {r} outside [0,1]")));
        }
        residual *= 1.0 - r;
    }
    Ok(residual)
}

/// Capital cost spread over its lifetime with a capital-recovery factor.
pub fn annualize_capital(capital: f64, lifetime_years: u32, discount_rate: f64) -> Result<f64> {
    if lifetime_years < 1 {
        return Err(PclError::Domain("lifetime_years must be at least 1".into()));
    }
    if discount_rate < 0.0 || !discount_rate.is_finite() {
        return Err(PclError::Domain(format!("discount rate {discount_rate} must be non-negative")));
    }
    let years = f64::from(lifetime_years);
    if discount_rate == 0.0 {
        return Ok(capital / years);
    }
    let growth = (1.0 + discount_rate).powf(years);
    Ok(capital * discount_rate * growth / (growth - 1.0))
}

/// Loading in effect for an instrument given the synergies whose P action is in place.
pub fn effective_loading<'a>(
    instrument: &ContingentInstrument,
    active_synergies: impl IntoIterator<Item = &'a Synergy>,
) -> Result<f64> {
    let mut loading = instrument.loading;
    for synergy in active_synergies {
        if synergy.c_instrument != instrument.instrument_id {
            return Err(PclError::Reference(format!(
                "synergy ({}, {}) does not reference instrument {}",
                synergy.p_action, synergy.c_instrument, instrument.instrument_id
            )));
        }
        loading = loading.min(synergy.discounted_loading);
    }
    Ok(loading)
}

/// Annual cost of a contingent instrument: fixed part plus loaded expected payout.
pub fn contingent_cost<'a>(
    instrument: &ContingentInstrument,
    residual_eal: f64,
    active_synergies: impl IntoIterator<Item = &'a Synergy>,
) -> Result<f64> {
    if residual_eal < 0.0 {
        return Err(PclError::Domain(format!("residual EAL {residual_eal} is negative")));
    }
    let loading = effective_loading(instrument, active_synergies)?;
    Ok(instrument.fixed_annual_cost + instrument.coverage * residual_eal * loading)
}

fn unit_interval(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn duplicates<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dup.insert(id);
        }
    }
    dup.into_iter().collect()
}

/// Checks every type invariant and cross-reference of a scenario.
///
/// Violations are returned as data; an empty list means the scenario is usable.
pub fn validate_model(doc: &ScenarioDocument) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut v = |code: &str, loc: String, msg: String| out.push(Diagnostic::new(code, loc, msg));

    let loss_ids: BTreeSet<&str> = doc.losses.iter().map(|l| l.loss_id.as_str()).collect();
    let action_ids: BTreeSet<&str> = doc.actions.iter().map(|a| a.action_id.as_str()).collect();
    let groups: BTreeSet<&str> = doc.income_groups.iter().map(String::as_str).collect();

    let id_ok = !doc.scenario_id.is_empty()
        && doc.scenario_id != "."
        && doc.scenario_id != ".."
        && doc.scenario_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !id_ok {
        v(
            "scenario.id_format",
            "scenario_id".into(),
            format!("scenario id {:?} must be non-empty and use only letters, digits, '-', '_' and '.'", doc.scenario_id),
        );
    }

    for id in duplicates(doc.income_groups.iter().map(String::as_str)) {
        v("group.duplicate_id", format!("income_groups[{id}]"), format!("income group {id} is declared more than once"));
    }

    for id in duplicates(doc.hazard.events.iter().map(|e| e.event_id.as_str())) {
        v("event.duplicate_id", format!("hazard.events[{id}]"), format!("event id {id} is not unique"));
    }
    for event in &doc.hazard.events {
        let p = event.annual_probability;
        if !(p > 0.0 && p <= 1.0) {
            v(
                "event.probability_range",
                format!("hazard.events[{}].annual_probability", event.event_id),
                format!("event {} has annual probability {p}, must lie in (0, 1]", event.event_id),
            );
        }
        for (loss_id, &magnitude) in &event.magnitudes {
            if !loss_ids.contains(loss_id.as_str()) {
                v(
                    "event.unknown_loss",
                    format!("hazard.events[{}].magnitudes[{loss_id}]", event.event_id),
                    format!("event {} references unknown loss {loss_id}", event.event_id),
                );
            }
            if !non_negative(magnitude) {
                v(
                    "event.magnitude_negative",
                    format!("hazard.events[{}].magnitudes[{loss_id}]", event.event_id),
                    format!("magnitude {magnitude} of loss {loss_id} must be non-negative"),
                );
            }
        }
    }

    for id in duplicates(doc.losses.iter().map(|l| l.loss_id.as_str())) {
        v("loss.duplicate_id", format!("losses[{id}]"), format!("loss id {id} is not unique"));
    }
    for loss in &doc.losses {
        if loss.incidence.is_empty() {
            v("loss.incidence_empty", format!("losses[{}].incidence", loss.loss_id), format!("loss {} has no incidence", loss.loss_id));
            continue;
        }
        let mut sum = 0.0;
        for (group, &share) in &loss.incidence {
            sum += share;
            if !non_negative(share) {
                v(
                    "loss.incidence_negative",
                    format!("losses[{}].incidence[{group}]", loss.loss_id),
                    format!("incidence share {share} must be non-negative"),
                );
            }
            if !groups.contains(group.as_str()) {
                v(
                    "loss.unknown_group",
                    format!("losses[{}].incidence[{group}]", loss.loss_id),
                    format!("loss {} references undeclared income group {group}", loss.loss_id),
                );
            }
        }
        if (sum - 1.0).abs() > INCIDENCE_SUM_TOLERANCE {
            v(
                "loss.incidence_sum",
                format!("losses[{}].incidence", loss.loss_id),
                format!("incidence of loss {} sums to {sum}, must sum to 1", loss.loss_id),
            );
        }
    }

    for id in duplicates(doc.actions.iter().map(|a| a.action_id.as_str())) {
        v("action.duplicate_id", format!("actions[{id}]"), format!("action id {id} is not unique"));
    }
    for action in &doc.actions {
        let loc = format!("actions[{}]", action.action_id);
        if !non_negative(action.annual_cost) {
            v("action.cost_negative", format!("{loc}.annual_cost"), format!("annual cost {} must be non-negative", action.annual_cost));
        }
        if !non_negative(action.capital_cost) {
            v("action.cost_negative", format!("{loc}.capital_cost"), format!("capital cost {} must be non-negative", action.capital_cost));
        }
        if action.capital_cost > 0.0 && action.lifetime_years.unwrap_or(0) < 1 {
            v(
                "action.lifetime_missing",
                format!("{loc}.lifetime_years"),
                format!("action {} has capital cost and needs lifetime_years >= 1", action.action_id),
            );
        }
        if action.reductions.is_empty() {
            v("action.no_reductions", format!("{loc}.reductions"), format!("action {} reduces no loss", action.action_id));
        }
        for (loss_id, &r) in &action.reductions {
            if !unit_interval(r) {
                v("action.reduction_range", format!("{loc}.reductions[{loss_id}]"), format!("reduction {r} must lie in [0, 1]"));
            }
            if !loss_ids.contains(loss_id.as_str()) {
                v(
                    "action.unknown_loss",
                    format!("{loc}.reductions[{loss_id}]"),
                    format!("action {} references unknown loss {loss_id}", action.action_id),
                );
            }
        }
    }

    for id in duplicates(doc.instruments.iter().map(|i| i.instrument_id.as_str())) {
        v("instrument.duplicate_id", format!("instruments[{id}]"), format!("instrument id {id} is not unique"));
    }
    for instrument in &doc.instruments {
        let loc = format!("instruments[{}]", instrument.instrument_id);
        if action_ids.contains(instrument.instrument_id.as_str()) {
            v(
                "instrument.id_collision",
                loc.clone(),
                format!("instrument id {} collides with an action id", instrument.instrument_id),
            );
        }
        if !loss_ids.contains(instrument.covers.as_str()) {
            v(
                "instrument.unknown_loss",
                format!("{loc}.covers"),
                format!("instrument {} covers unknown loss {}", instrument.instrument_id, instrument.covers),
            );
        }
        if !unit_interval(instrument.coverage) {
            v("instrument.coverage_range", format!("{loc}.coverage"), format!("coverage {} must lie in [0, 1]", instrument.coverage));
        }
        if !(instrument.loading.is_finite() && instrument.loading >= 1.0) {
            v("instrument.loading_range", format!("{loc}.loading"), format!("base loading {} must be at least 1", instrument.loading));
        }
        if !non_negative(instrument.fixed_annual_cost) {
            v(
                "instrument.cost_negative",
                format!("{loc}.fixed_annual_cost"),
                format!("fixed annual cost {} must be non-negative", instrument.fixed_annual_cost),
            );
        }
    }

    let mut pairs = BTreeSet::new();
    for synergy in &doc.synergies {
        let loc = format!("synergies[{},{}]", synergy.p_action, synergy.c_instrument);
        if !pairs.insert((synergy.p_action.as_str(), synergy.c_instrument.as_str())) {
            v("synergy.duplicate", loc.clone(), "synergy pair declared more than once".into());
        }
        if !action_ids.contains(synergy.p_action.as_str()) {
            v("synergy.unknown_action", format!("{loc}.p_action"), format!("synergy cites unknown action {}", synergy.p_action));
        }
        match doc.instruments.iter().find(|i| i.instrument_id == synergy.c_instrument) {
            None => v(
                "synergy.unknown_instrument",
                format!("{loc}.c_instrument"),
                format!("synergy cites unknown instrument {}", synergy.c_instrument),
            ),
            Some(instrument) => {
                if !(non_negative(synergy.discounted_loading) && synergy.discounted_loading < instrument.loading) {
                    v(
                        "synergy.loading_range",
                        format!("{loc}.discounted_loading"),
                        format!(
                            "discounted loading {} must be non-negative and below base loading {}",
                            synergy.discounted_loading, instrument.loading
                        ),
                    );
                }
            }
        }
    }

    out.extend(validate_config(&doc.defaults, Some(&groups)));
    out
}

/// Range checks on a cycle config; equity-weight groups are checked against
/// `known_groups` when given.
pub fn validate_config(cfg: &CycleConfig, known_groups: Option<&BTreeSet<&str>>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut v = |code: &str, loc: String, msg: String| out.push(Diagnostic::new(code, loc, msg));
    if !(cfg.likelihood_threshold >= 0.0 && cfg.likelihood_threshold < 1.0) {
        v("config.likelihood_threshold", "defaults.likelihood_threshold".into(), format!("threshold {} must lie in [0, 1)", cfg.likelihood_threshold));
    }
    if !(cfg.aggregation_threshold > 0.0 && cfg.aggregation_threshold <= 1.0) {
        v(
            "config.aggregation_threshold",
            "defaults.aggregation_threshold".into(),
            format!("aggregation threshold {} must lie in (0, 1]", cfg.aggregation_threshold),
        );
    }
    if !(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0) {
        v("config.epsilon", "defaults.epsilon".into(), format!("epsilon {} must lie in [0, 1)", cfg.epsilon));
    }
    let appraisal = &cfg.appraisal;
    if !(appraisal.hardship_multiplier.is_finite() && appraisal.hardship_multiplier >= 1.0) {
        v(
            "config.hardship_multiplier",
            "defaults.appraisal.hardship_multiplier".into(),
            format!("hardship multiplier {} must be at least 1", appraisal.hardship_multiplier),
        );
    }
    if !non_negative(appraisal.discount_rate) {
        v("config.discount_rate", "defaults.appraisal.discount_rate".into(), format!("discount rate {} must be non-negative", appraisal.discount_rate));
    }
    for (group, &w) in &appraisal.equity_weights {
        if !non_negative(w) {
            v("config.equity_weight", format!("defaults.appraisal.equity_weights[{group}]"), format!("equity weight {w} must be non-negative"));
        }
        if known_groups.is_some_and(|g| !g.contains(group.as_str())) {
            v(
                "config.unknown_group",
                format!("defaults.appraisal.equity_weights[{group}]"),
                format!("equity weight names undeclared income group {group}"),
            );
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_io::mini_scenario;
    use proptest::prelude::*;

    fn two_event_hazard() -> HazardModel {
        HazardModel {
            hazard_id: "h".into(),
            name: "h".into(),
            currency_unit: "USD".into(),
            events: vec![
                EventScenario {
                    event_id: "e1".into(),
                    annual_probability: 0.10,
                    magnitudes: [("L2".to_string(), 100.0)].into(),
                },
                EventScenario {
                    event_id: "e2".into(),
                    annual_probability: 0.01,
                    magnitudes: [("L2".to_string(), 1000.0)].into(),
                },
            ],
        }
    }

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn eal_sums_probability_times_magnitude() {
        let h = two_event_hazard();
        assert!((expected_annual_loss("L2", &h, &ids(&["e1", "e2"])).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(expected_annual_loss("L2", &h, &BTreeSet::new()).unwrap(), 0.0);
        assert_eq!(expected_annual_loss("L9", &h, &ids(&["e1"])).unwrap(), 0.0);
    }

    #[test]
    fn eal_rejects_unknown_event() {
        let h = two_event_hazard();
        let err = expected_annual_loss("L2", &h, &ids(&["e9"])).unwrap_err();
        assert_eq!(err.code(), "reference");
    }

    #[test]
    fn mini_l2_eal_is_same_with_or_without_rare_event() {
        let doc = mini_scenario();
        let all: BTreeSet<String> = doc.hazard.events.iter().map(|e| e.event_id.clone()).collect();
        let frequent = ids(&["e1", "e2"]);
        // e1: 0.10 × 100, e2: 0.01 × 1000, e3 carries no L2 magnitude
        let by_hand = 0.10 * 100.0 + 0.01 * 1000.0;
        let full = expected_annual_loss("L2", &doc.hazard, &all).unwrap();
        let filtered = expected_annual_loss("L2", &doc.hazard, &frequent).unwrap();
        assert!((full - by_hand).abs() < 1e-12);
        assert!((filtered - 20.0).abs() < 1e-12);
    }

    #[test]
    fn residual_fraction_cases() {
        assert!((residual_fraction(&[0.6, 0.6]).unwrap() - 0.16).abs() < 1e-12);
        assert_eq!(residual_fraction(&[]).unwrap(), 1.0);
        assert_eq!(residual_fraction(&[0.95, 1.0]).unwrap(), 0.0);
        assert_eq!(residual_fraction(&[1.2]).unwrap_err().code(), "domain");
        assert_eq!(residual_fraction(&[-0.1]).unwrap_err().code(), "domain");
    }

    #[test]
    fn annualize_capital_cases() {
        // Independent recomputation: capital / annuity factor Σ_{t=1..T} (1+d)^-t.
        let annuity: f64 = (1..=20).map(|t| 1.05f64.powi(-t)).sum();
        let expected = 100.0 / annuity;
        let got = annualize_capital(100.0, 20, 0.05).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 8.024).abs() < 5e-4);
        assert_eq!(annualize_capital(100.0, 4, 0.0).unwrap(), 25.0);
        assert_eq!(annualize_capital(0.0, 10, 0.05).unwrap(), 0.0);
        assert_eq!(annualize_capital(10.0, 0, 0.05).unwrap_err().code(), "domain");
    }

    fn instrument(coverage: f64, loading: f64, fixed: f64) -> ContingentInstrument {
        ContingentInstrument {
            instrument_id: "I1".into(),
            description: String::new(),
            covers: "L2".into(),
            coverage,
            loading,
            fixed_annual_cost: fixed,
        }
    }

    #[test]
    fn contingent_cost_cases() {
        let i1 = instrument(1.0, 1.3, 0.0);
        assert!((contingent_cost(&i1, 8.0, []).unwrap() - 10.4).abs() < 1e-12);
        let syn = Synergy {
            p_action: "A3".into(),
            c_instrument: "I1".into(),
            discounted_loading: 0.9,
        };
        assert!((contingent_cost(&i1, 8.0, [&syn]).unwrap() - 7.2).abs() < 1e-12);
        let zero = instrument(0.0, 1.3, 2.5);
        assert_eq!(contingent_cost(&zero, 8.0, []).unwrap(), 2.5);
    }

    #[test]
    fn contingent_cost_uses_minimum_discount_and_checks_reference() {
        let i1 = instrument(0.5, 1.4, 1.0);
        let a = Synergy { p_action: "A".into(), c_instrument: "I1".into(), discounted_loading: 1.2 };
        let b = Synergy { p_action: "B".into(), c_instrument: "I1".into(), discounted_loading: 1.1 };
        let got = contingent_cost(&i1, 10.0, [&a, &b]).unwrap();
        assert!((got - (1.0 + 0.5 * 10.0 * 1.1)).abs() < 1e-12);
        let wrong = Synergy { p_action: "A".into(), c_instrument: "I2".into(), discounted_loading: 1.0 };
        assert_eq!(contingent_cost(&i1, 10.0, [&wrong]).unwrap_err().code(), "reference");
    }

    #[test]
    fn validate_accepts_mini_scenario() {
        assert_eq!(validate_model(&mini_scenario()), vec![]);
    }

    #[test]
    fn validate_flags_incidence_sum() {
        let mut doc = mini_scenario();
        doc.losses[1].incidence = [("poor".to_string(), 0.4), ("rich".to_string(), 0.5)].into();
        let violations = validate_model(&doc);
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert_eq!(violations[0].code, "loss.incidence_sum");
        assert!(violations[0].location.contains("L2"));
    }

    #[test]
    fn validate_flags_unknown_synergy_instrument() {
        let mut doc = mini_scenario();
        doc.synergies[0].c_instrument = "I9".into();
        let violations = validate_model(&doc);
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert_eq!(violations[0].code, "synergy.unknown_instrument");
    }

    #[test]
    fn validate_flags_probability_and_reduction_bounds() {
        let mut doc = mini_scenario();
        doc.hazard.events[0].annual_probability = 1.5;
        doc.actions[0].reductions.insert("L1".into(), 1.2);
        doc.instruments[0].loading = 0.8;
        let codes: Vec<String> = validate_model(&doc).into_iter().map(|d| d.code).collect();
        assert!(codes.contains(&"event.probability_range".to_string()));
        assert!(codes.contains(&"action.reduction_range".to_string()));
        assert!(codes.contains(&"instrument.loading_range".to_string()));
    }

    #[test]
    fn validate_is_idempotent() {
        let mut doc = mini_scenario();
        doc.hazard.events.push(doc.hazard.events[0].clone());
        let first = validate_model(&doc);
        let second = validate_model(&doc);
        assert_eq!(first, second);
        assert_eq!(first[0].code, "event.duplicate_id");
    }

    proptest! {
        #[test]
        fn eal_is_linear_in_magnitudes(
            probs in proptest::collection::vec(0.001f64..1.0, 1..6),
            mags in proptest::collection::vec(0.0f64..1e6, 6),
            k in 0.01f64..100.0,
        ) {
            let events: Vec<EventScenario> = probs.iter().enumerate().map(|(i, &p)| EventScenario {
                event_id: format!("e{i}"),
                annual_probability: p,
                magnitudes: [("L".to_string(), mags[i])].into(),
            }).collect();
            let mut hazard = HazardModel { hazard_id: "h".into(), name: "h".into(), currency_unit: "X".into(), events };
            let considered: BTreeSet<String> = hazard.events.iter().map(|e| e.event_id.clone()).collect();
            let base = expected_annual_loss("L", &hazard, &considered).unwrap();
            for e in &mut hazard.events {
                *e.magnitudes.get_mut("L").unwrap() *= k;
            }
            let scaled = expected_annual_loss("L", &hazard, &considered).unwrap();
            prop_assert!((scaled - k * base).abs() <= 1e-9 * (k * base).abs().max(1e-12));
        }

        #[test]
        fn residual_fraction_commutes_and_is_monotone(
            mut rs in proptest::collection::vec(0.0f64..=1.0, 0..8),
            bump in 0.0f64..=1.0,
        ) {
            let forward = residual_fraction(&rs).unwrap();
            rs.reverse();
            let backward = residual_fraction(&rs).unwrap();
            prop_assert!((forward - backward).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&forward));
            if !rs.is_empty() {
                let before = residual_fraction(&rs).unwrap();
                rs[0] = rs[0].max(bump);
                prop_assert!(residual_fraction(&rs).unwrap() <= before + 1e-15);
            }
        }

        #[test]
        fn contingent_cost_is_monotone(
            eal in 0.0f64..1e5, extra in 0.0f64..1e4,
            loading in 1.0f64..3.0, extra_loading in 0.0f64..1.0,
            coverage in 0.0f64..=1.0,
        ) {
            let low = instrument(coverage, loading, 1.0);
            let high = instrument(coverage, loading + extra_loading, 1.0);
            let c = contingent_cost(&low, eal, []).unwrap();
            prop_assert!(contingent_cost(&low, eal + extra, []).unwrap() >= c);
            prop_assert!(contingent_cost(&high, eal, []).unwrap() >= c);
        }

        #[test]
        fn zero_rate_annualization_recovers_capital(capital in 0u32..1_000_000, years in 1u32..60) {
            let c = f64::from(capital);
            // one division and one multiplication: at most two roundings
            let per_year = annualize_capital(c, years, 0.0).unwrap();
            prop_assert!((per_year * f64::from(years) - c).abs() <= c * f64::EPSILON * 2.0);
        }
    }
}
