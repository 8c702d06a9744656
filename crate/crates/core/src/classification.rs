//! Likelihood filter and stakeholder tolerability classification.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::DEFAULT_AGGREGATION_THRESHOLD;
use crate::error::{PclError, Result};
use crate::risk_model::{EventId, GroupId, HazardModel, LossId};
use crate::scenario_io::{scenario_digest, ScenarioDocument};

/// One exposure of an event rarer than the consideration threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedExposure {
    pub loss_id: LossId,
    pub event_id: EventId,
    pub annual_probability: f64,
    pub magnitude: f64,
}

impl RetainedExposure {
    pub fn expected(&self) -> f64 {
        self.annual_probability * self.magnitude
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodFilter {
    pub threshold: f64,
    pub considered: BTreeSet<EventId>,
    /// Exposures of excluded events, ordered by (loss, event).
    pub retained: Vec<RetainedExposure>,
}

impl LikelihoodFilter {
    pub fn retained_pairs(&self) -> BTreeSet<(LossId, EventId)> {
        self.retained.iter().map(|r| (r.loss_id.clone(), r.event_id.clone())).collect()
    }
}

/// Keeps events whose annual probability is strictly above `threshold`.
///
/// Every positive exposure of an excluded event is reported as retained.
pub fn filter_by_likelihood(hazard: &HazardModel, threshold: f64) -> LikelihoodFilter {
    let mut considered = BTreeSet::new();
    let mut retained = Vec::new();
    for event in &hazard.events {
        if event.annual_probability > threshold {
            considered.insert(event.event_id.clone());
        } else {
            for (loss_id, &magnitude) in &event.magnitudes {
                if magnitude > 0.0 {
                    retained.push(RetainedExposure {
                        loss_id: loss_id.clone(),
                        event_id: event.event_id.clone(),
                        annual_probability: event.annual_probability,
                        magnitude,
                    });
                }
            }
        }
    }
    retained.sort_by(|a, b| (&a.loss_id, &a.event_id).cmp(&(&b.loss_id, &b.event_id)));
    LikelihoodFilter {
        threshold,
        considered,
        retained,
    }
}

/// Losses with a positive magnitude in at least one considered event.
pub fn considered_losses(doc: &ScenarioDocument, filter: &LikelihoodFilter) -> BTreeSet<LossId> {
    doc.hazard
        .events
        .iter()
        .filter(|e| filter.considered.contains(&e.event_id))
        .flat_map(|e| e.magnitudes.iter().filter(|(_, &m)| m > 0.0).map(|(l, _)| l.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Tolerable,
    Intolerable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    #[default]
    Open,
    Closed,
}

/// Group-fraction rule: a loss is intolerable when at least `threshold` of groups say so.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub threshold: f64,
}

impl Default for AggregationRule {
    fn default() -> Self {
        AggregationRule {
            threshold: DEFAULT_AGGREGATION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub loss_id: LossId,
    pub intolerable: usize,
    pub tolerable: usize,
    pub groups: usize,
}

/// Record of one consultation: which stakeholder groups judged which losses intolerable.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsultationSession {
    pub session_id: String,
    pub scenario_digest: String,
    pub groups: Vec<GroupId>,
    pub filter: LikelihoodFilter,
    pub considered_losses: BTreeSet<LossId>,
    pub votes: BTreeMap<(GroupId, LossId), Verdict>,
    pub status: SessionStatus,
}

impl ConsultationSession {
    /// Opens an empty session bound to a scenario under the given likelihood threshold.
    pub fn open(
        session_id: impl Into<String>,
        doc: &ScenarioDocument,
        groups: Vec<GroupId>,
        likelihood_threshold: f64,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(PclError::Domain("a consultation needs at least one stakeholder group".into()));
        }
        let unique: BTreeSet<&GroupId> = groups.iter().collect();
        if unique.len() != groups.len() {
            return Err(PclError::Domain("stakeholder group ids must be unique".into()));
        }
        let filter = filter_by_likelihood(&doc.hazard, likelihood_threshold);
        let considered_losses = considered_losses(doc, &filter);
        let mut groups = groups;
        groups.sort();
        Ok(ConsultationSession {
            session_id: session_id.into(),
            scenario_digest: scenario_digest(doc),
            groups,
            filter,
            considered_losses,
            votes: BTreeMap::new(),
            status: SessionStatus::Open,
        })
    }

    /// Sets (or overwrites) one group's verdict on one considered loss.
    pub fn record_vote(&mut self, group: &str, loss_id: &str, verdict: Verdict) -> Result<()> {
        if self.status == SessionStatus::Closed {
            return Err(PclError::State(format!("session {} is closed", self.session_id)));
        }
        if !self.groups.iter().any(|g| g == group) {
            return Err(PclError::Reference(format!("unknown stakeholder group {group}")));
        }
        if !self.considered_losses.contains(loss_id) {
            return Err(PclError::Reference(format!(
                "loss {loss_id} is not under consideration in session {}",
                self.session_id
            )));
        }
        self.votes.insert((group.to_string(), loss_id.to_string()), verdict);
        Ok(())
    }

    /// Carries the groups and still-applicable votes over to an updated scenario.
    ///
    /// Votes on losses that are no longer under consideration are dropped; newly
    /// considered losses start unvoted. The rebound session is open.
    pub fn rebind(&self, doc: &ScenarioDocument, likelihood_threshold: f64) -> Result<Self> {
        let mut next = ConsultationSession::open(self.session_id.clone(), doc, self.groups.clone(), likelihood_threshold)?;
        for ((group, loss), verdict) in &self.votes {
            if next.considered_losses.contains(loss) {
                next.votes.insert((group.clone(), loss.clone()), *verdict);
            }
        }
        Ok(next)
    }

    pub fn close(&mut self) {
        self.status = SessionStatus::Closed;
    }

    pub fn reopen(&mut self) {
        self.status = SessionStatus::Open;
    }

    /// (group, loss) pairs still lacking a vote, in sorted order.
    pub fn missing_votes(&self) -> Vec<(GroupId, LossId)> {
        let mut missing = Vec::new();
        for loss in &self.considered_losses {
            for group in &self.groups {
                if !self.votes.contains_key(&(group.clone(), loss.clone())) {
                    missing.push((group.clone(), loss.clone()));
                }
            }
        }
        missing
    }

    pub fn is_complete(&self) -> bool {
        self.missing_votes().is_empty()
    }

    pub fn tally(&self) -> Vec<VoteTally> {
        self.considered_losses
            .iter()
            .map(|loss| {
                let mut tally = VoteTally {
                    loss_id: loss.clone(),
                    intolerable: 0,
                    tolerable: 0,
                    groups: self.groups.len(),
                };
                for group in &self.groups {
                    match self.votes.get(&(group.clone(), loss.clone())) {
                        Some(Verdict::Intolerable) => tally.intolerable += 1,
                        Some(Verdict::Tolerable) => tally.tolerable += 1,
                        None => {}
                    }
                }
                tally
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TolerabilityPartition {
    pub intolerable: BTreeSet<LossId>,
    pub tolerable: BTreeSet<LossId>,
    pub retained_by_default: Vec<RetainedExposure>,
    pub rule_used: AggregationRule,
}

/// Splits the considered losses by the share of groups voting intolerable.
pub fn classify(session: &ConsultationSession, rule: AggregationRule) -> Result<TolerabilityPartition> {
    if !(rule.threshold > 0.0 && rule.threshold <= 1.0) {
        return Err(PclError::Domain(format!("aggregation threshold {} must lie in (0, 1]", rule.threshold)));
    }
    let missing = session.missing_votes();
    if !missing.is_empty() {
        return Err(PclError::Incomplete { missing });
    }
    let mut intolerable = BTreeSet::new();
    let mut tolerable = BTreeSet::new();
    for tally in session.tally() {
        let share = tally.intolerable as f64 / tally.groups as f64;
        if share >= rule.threshold {
            intolerable.insert(tally.loss_id);
        } else {
            tolerable.insert(tally.loss_id);
        }
    }
    Ok(TolerabilityPartition {
        intolerable,
        tolerable,
        retained_by_default: session.filter.retained.clone(),
        rule_used: rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk_model::{expected_annual_loss, EventScenario};
    use crate::scenario_io::mini_scenario;
    use proptest::prelude::*;

    fn groups(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn rare_event_is_retained_not_considered() {
        let doc = mini_scenario();
        let f = filter_by_likelihood(&doc.hazard, 0.005);
        assert!(f.considered.contains("e1") && f.considered.contains("e2"));
        assert!(!f.considered.contains("e3"));
        assert_eq!(f.retained_pairs(), [("L1".to_string(), "e3".to_string())].into());
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let hazard = HazardModel {
            hazard_id: "h".into(),
            name: "h".into(),
            currency_unit: "X".into(),
            events: vec![EventScenario {
                event_id: "e".into(),
                annual_probability: 0.005,
                magnitudes: [("L".to_string(), 1.0)].into(),
            }],
        };
        let f = filter_by_likelihood(&hazard, 0.005);
        assert!(f.considered.is_empty());
        assert_eq!(f.retained.len(), 1);
    }

    #[test]
    fn zero_threshold_considers_everything() {
        let doc = mini_scenario();
        let f = filter_by_likelihood(&doc.hazard, 0.0);
        assert_eq!(f.considered.len(), doc.hazard.events.len());
        assert!(f.retained.is_empty());
    }

    #[test]
    fn filter_preserves_total_exposure() {
        let doc = mini_scenario();
        let all: BTreeSet<String> = doc.hazard.events.iter().map(|e| e.event_id.clone()).collect();
        let f = filter_by_likelihood(&doc.hazard, 0.005);
        for loss in &doc.losses {
            let unfiltered = expected_annual_loss(&loss.loss_id, &doc.hazard, &all).unwrap();
            let kept = expected_annual_loss(&loss.loss_id, &doc.hazard, &f.considered).unwrap();
            let retained: f64 = f.retained.iter().filter(|r| r.loss_id == loss.loss_id).map(|r| r.expected()).sum();
            assert!((kept + retained - unfiltered).abs() < 1e-9);
        }
    }

    fn session(n: usize) -> ConsultationSession {
        ConsultationSession::open("s", &mini_scenario(), groups(n), 0.005).unwrap()
    }

    #[test]
    fn votes_count_and_overwrite() {
        let mut s = session(5);
        s.record_vote("g1", "L1", Verdict::Intolerable).unwrap();
        let l1 = |s: &ConsultationSession| s.tally().into_iter().find(|t| t.loss_id == "L1").unwrap();
        assert_eq!(l1(&s).intolerable + l1(&s).tolerable, 1);
        s.record_vote("g1", "L1", Verdict::Tolerable).unwrap();
        assert_eq!(l1(&s).intolerable, 0);
        assert_eq!(l1(&s).tolerable, 1);
    }

    #[test]
    fn vote_errors() {
        let mut doc = mini_scenario();
        // make a loss that is only exposed to the filtered-out event
        doc.losses.push(crate::risk_model::LossItem {
            loss_id: "L3".into(),
            description: String::new(),
            category: crate::risk_model::LossCategory::Sociocultural,
            incidence: [("poor".to_string(), 1.0)].into(),
            tolerability: Default::default(),
        });
        doc.hazard.events[2].magnitudes.insert("L3".into(), 50.0);
        let mut s = ConsultationSession::open("s", &doc, groups(2), 0.005).unwrap();
        assert_eq!(s.record_vote("g1", "L3", Verdict::Intolerable).unwrap_err().code(), "reference");
        assert_eq!(s.record_vote("g9", "L1", Verdict::Intolerable).unwrap_err().code(), "reference");
        s.close();
        assert_eq!(s.record_vote("g1", "L1", Verdict::Intolerable).unwrap_err().code(), "state");
    }

    #[test]
    fn classify_by_group_fraction() {
        let mut s = session(5);
        for (i, g) in groups(5).iter().enumerate() {
            s.record_vote(g, "L1", if i < 3 { Verdict::Intolerable } else { Verdict::Tolerable }).unwrap();
            s.record_vote(g, "L2", if i < 2 { Verdict::Intolerable } else { Verdict::Tolerable }).unwrap();
        }
        let p = classify(&s, AggregationRule::default()).unwrap();
        assert_eq!(p.intolerable, ["L1".to_string()].into());
        assert_eq!(p.tolerable, ["L2".to_string()].into());
        assert_eq!(p.retained_by_default.len(), 1);
    }

    #[test]
    fn classify_reports_missing_pairs() {
        let mut s = session(2);
        s.record_vote("g1", "L1", Verdict::Intolerable).unwrap();
        s.record_vote("g2", "L1", Verdict::Intolerable).unwrap();
        match classify(&s, AggregationRule::default()).unwrap_err() {
            PclError::Incomplete { missing } => {
                assert_eq!(missing, vec![("g1".into(), "L2".into()), ("g2".into(), "L2".into())]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn session_from_matrix(n: usize, matrix: &[bool]) -> ConsultationSession {
        let mut s = session(n);
        let losses: Vec<String> = s.considered_losses.iter().cloned().collect();
        for (gi, g) in groups(n).iter().enumerate() {
            for (li, l) in losses.iter().enumerate() {
                let v = if matrix[gi * losses.len() + li] { Verdict::Intolerable } else { Verdict::Tolerable };
                s.record_vote(g, l, v).unwrap();
            }
        }
        s
    }

    proptest! {
        #[test]
        fn partition_is_total_and_disjoint(n in 1usize..8, matrix in proptest::collection::vec(any::<bool>(), 16), t in 0.05f64..=1.0) {
            let s = session_from_matrix(n, &matrix);
            let p = classify(&s, AggregationRule { threshold: t }).unwrap();
            prop_assert!(p.intolerable.is_disjoint(&p.tolerable));
            let union: BTreeSet<String> = p.intolerable.union(&p.tolerable).cloned().collect();
            prop_assert_eq!(union, s.considered_losses.clone());
        }

        #[test]
        fn raising_threshold_never_grows_intolerable(n in 1usize..8, matrix in proptest::collection::vec(any::<bool>(), 16), a in 0.05f64..=1.0, b in 0.05f64..=1.0) {
            let s = session_from_matrix(n, &matrix);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let low = classify(&s, AggregationRule { threshold: lo }).unwrap();
            let high = classify(&s, AggregationRule { threshold: hi }).unwrap();
            prop_assert!(high.intolerable.is_subset(&low.intolerable));
        }

        #[test]
        fn classification_ignores_group_order(n in 2usize..8, matrix in proptest::collection::vec(any::<bool>(), 16)) {
            let s = session_from_matrix(n, &matrix);
            let mut reordered = s.clone();
            reordered.groups.reverse();
            prop_assert_eq!(
                classify(&s, AggregationRule::default()).unwrap(),
                classify(&reordered, AggregationRule::default()).unwrap()
            );
        }
    }
}
