//! One full pass of the cycle: filter, classify, eliminate intolerable losses,
//! propagate ancillary benefits, optimize the tolerable portfolio, and compare
//! against the accept-everything baseline. Records are kept per scenario lineage
//! so that periodic revisions can be diffed against their predecessor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classification::{classify, AggregationRule, ConsultationSession, RetainedExposure, TolerabilityPartition};
use crate::config::{AppraisalConfig, CycleConfig};
use crate::error::{PclError, Result};
use crate::risk_model::{expected_annual_loss, validate_model, ActionCluster, ActionId, LossCategory, LossId, Tolerability};
use crate::scenario_io::{digest_hex, emit_config, emit_scenario, emit_votes_canonical, scenario_digest, ScenarioDocument, RECORD_SCHEMA_VERSION};
use crate::step1_cover::{eliminate_intolerable_with_limit, propagate_ancillary, CoverSolution, RevisedLoss, SolverMode};
use crate::step2_portfolio::{
    accept_all, appraise, optimize, Appraisal, ForcedChoices, Outlay, Portfolio, PortfolioProblem, TolerableLoss,
};
use crate::store::RecordStore;

pub const DETERMINISTIC_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverModes {
    pub step1: SolverMode,
    pub step2: SolverMode,
}

/// Stacked P/C/L amounts of one scenario line.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterSeries {
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub total: f64,
}

impl From<&Outlay> for ClusterSeries {
    fn from(o: &Outlay) -> Self {
        ClusterSeries {
            p: o.p_cost,
            c: o.c_cost,
            l: o.accepted_weighted_loss,
            total: o.total,
        }
    }
}

/// An intolerable loss: reported with its exposure but never priced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntolerableExposure {
    pub loss_id: LossId,
    pub eal: f64,
    pub residual_fraction: f64,
    pub residual_eal: f64,
    pub eliminated: bool,
    pub priced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedSummary {
    pub exposures: Vec<RetainedExposure>,
    pub total_expected: f64,
}

impl RetainedSummary {
    pub fn from_exposures(exposures: &[RetainedExposure]) -> Self {
        RetainedSummary {
            exposures: exposures.to_vec(),
            total_expected: exposures.iter().map(RetainedExposure::expected).sum(),
        }
    }
}

/// Unoptimized (accept every tolerable loss) versus optimized comparison.
///
/// The tolerable-cluster totals drive `savings`; Step-1 spending is reported
/// alongside in `combined_total` because it is constraint-driven, not traded off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub unoptimized_total: f64,
    pub optimized_total: f64,
    pub savings: f64,
    pub step1_cost: f64,
    pub combined_total: f64,
    pub unoptimized: ClusterSeries,
    pub optimized: ClusterSeries,
    pub intolerable_exposure: Vec<IntolerableExposure>,
    pub retained_by_default: RetainedSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub code: String,
    pub message: String,
}

impl Flag {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Flag {
            code: code.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub schema_version: u32,
    pub cycle_id: String,
    pub lineage: String,
    pub revision: u32,
    pub inputs_digest: String,
    pub scenario_digest: String,
    pub currency_unit: String,
    pub config: CycleConfig,
    /// EAL of every considered loss over the considered events, before any action.
    pub eal: BTreeMap<LossId, f64>,
    pub partition: TolerabilityPartition,
    pub step1: CoverSolution,
    pub revised_tolerable: Vec<RevisedLoss>,
    pub step2: Portfolio,
    pub appraisal: Appraisal,
    pub gap: GapReport,
    pub solver_modes: SolverModes,
    pub flags: Vec<Flag>,
    pub created_at: String,
}

impl CycleRecord {
    pub fn escalated(&self) -> bool {
        !self.step1.feasible
    }
}

/// Everything a cycle was computed from; stored next to each record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleInputs {
    pub scenario: ScenarioDocument,
    pub votes: crate::scenario_io::VoteLedger,
    pub config: CycleConfig,
}

/// Decisions of a cycle without lineage bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub inputs_digest: String,
    pub scenario_digest: String,
    pub currency_unit: String,
    pub config: CycleConfig,
    pub eal: BTreeMap<LossId, f64>,
    pub partition: TolerabilityPartition,
    pub step1: CoverSolution,
    pub revised_tolerable: Vec<RevisedLoss>,
    pub problem: PortfolioProblem,
    pub step2: Portfolio,
    pub appraisal: Appraisal,
    pub gap: GapReport,
    pub flags: Vec<Flag>,
}

/// How the clock is read when stamping records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    /// Fixed epoch timestamp for golden comparisons.
    Deterministic,
}

impl Clock {
    pub fn now(self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Clock::Deterministic => DETERMINISTIC_TIMESTAMP.to_string(),
        }
    }
}

/// Content hash over the canonical scenario, the vote matrix and the config.
pub fn inputs_digest(doc: &ScenarioDocument, session: &ConsultationSession, config: &CycleConfig) -> String {
    let mut text = emit_scenario(doc);
    text.push('\n');
    text.push_str(&emit_votes_canonical(session));
    text.push('\n');
    text.push_str(&emit_config(config));
    digest_hex(text.as_bytes())
}

/// Runs the cycle without persisting anything.
pub fn evaluate_cycle(doc: &ScenarioDocument, session: &ConsultationSession, config: &CycleConfig) -> Result<CycleOutcome> {
    evaluate_cycle_with(doc, session, config, &ForcedChoices::default())
}

/// Runs the cycle with what-if constraints on the candidate pools.
///
/// Forced exclusions remove actions and instruments from both steps; forced
/// inclusions only bind the Step-2 portfolio.
pub fn evaluate_cycle_with(
    doc: &ScenarioDocument,
    session: &ConsultationSession,
    config: &CycleConfig,
    forced: &ForcedChoices,
) -> Result<CycleOutcome> {
    let mut checked = doc.clone();
    checked.defaults = config.clone();
    let violations = validate_model(&checked);
    if !violations.is_empty() {
        return Err(PclError::Invalid {
            class: crate::error::DiagnosticClass::Validation,
            diagnostics: violations,
        });
    }
    let scenario_digest = scenario_digest(doc);
    if session.scenario_digest != scenario_digest {
        return Err(PclError::Reference(format!(
            "session {} was opened against a different scenario",
            session.session_id
        )));
    }
    // The session's filter must be the one this config implies.
    let filter = crate::classification::filter_by_likelihood(&doc.hazard, config.likelihood_threshold);
    if filter.considered != session.filter.considered {
        return Err(PclError::Consistency(format!(
            "session {} was opened under a different likelihood threshold",
            session.session_id
        )));
    }

    let partition = classify(session, AggregationRule { threshold: config.aggregation_threshold })?;
    let mut eal = BTreeMap::new();
    for loss_id in &session.considered_losses {
        eal.insert(loss_id.clone(), expected_annual_loss(loss_id, &doc.hazard, &filter.considered)?);
    }

    if let Some(id) = forced.include.intersection(&forced.exclude).next() {
        return Err(PclError::Consistency(format!("{id} is both forced in and forced out")));
    }
    for id in forced.include.iter().chain(&forced.exclude) {
        let known = doc.actions.iter().any(|a| &a.action_id == id) || doc.instruments.iter().any(|i| &i.instrument_id == id);
        if !known {
            return Err(PclError::Reference(format!("forced choice names unknown action or instrument {id}")));
        }
    }

    let catalog: Vec<_> = doc.actions.iter().filter(|a| !forced.exclude.contains(&a.action_id)).cloned().collect();
    let appraisal_config: &AppraisalConfig = &config.appraisal;
    let step1 = eliminate_intolerable_with_limit(
        &partition.intolerable,
        &catalog,
        config.epsilon,
        appraisal_config.discount_rate,
        config.search.step1_exact_limit,
    )?;

    let tolerable: Vec<(LossId, f64)> = partition.tolerable.iter().map(|l| (l.clone(), eal[l])).collect();
    let revised_tolerable = propagate_ancillary(&step1.selected, &catalog, &tolerable)?;

    let problem = PortfolioProblem {
        losses: revised_tolerable
            .iter()
            .filter(|r| !r.fully_addressed)
            .map(|r| TolerableLoss {
                loss: doc.losses.iter().find(|l| l.loss_id == r.loss_id).cloned().expect("validated loss reference"),
                eal: r.eal,
            })
            .collect(),
        actions: catalog.iter().filter(|a| !step1.selected.contains(&a.action_id)).cloned().collect(),
        instruments: doc.instruments.clone(),
        synergies: doc.synergies.clone(),
        implemented: step1.selected.clone(),
        forced: ForcedChoices {
            include: forced.include.iter().filter(|id| !step1.selected.contains(*id)).cloned().collect(),
            // excluded actions never reached the catalog
            exclude: forced.exclude.iter().filter(|id| doc.instruments.iter().any(|i| &&i.instrument_id == id)).cloned().collect(),
        },
    };
    let step2 = optimize(&problem, appraisal_config, &config.search)?;
    let appraisal = appraise(&step2, &problem, appraisal_config)?;
    let gap = gap_report(&problem, appraisal_config, &step1, &step2, &partition, &eal)?;

    let mut flags = Vec::new();
    if !step1.feasible {
        flags.push(Flag::new(
            "step1.infeasible",
            format!(
                "no combination of preemptive actions brings every intolerable loss to residual <= {}; escalate",
                config.epsilon
            ),
        ));
    }
    if step1.mode == SolverMode::Heuristic {
        flags.push(Flag::new("step1.heuristic", "intolerable-loss cover found by greedy exchange search"));
    }
    if step2.mode == SolverMode::Heuristic {
        flags.push(Flag::new("step2.heuristic", "portfolio found by seeded local search"));
    }
    if !partition.intolerable.is_empty() {
        flags.push(Flag::new("intolerable.unpriced", "intolerable exposure is reported but not priced"));
    }
    for r in &revised_tolerable {
        if r.fully_addressed {
            flags.push(Flag::new("loss.fully_addressed", format!("{} is fully addressed by Step-1 actions", r.loss_id)));
        }
    }
    for tl in &problem.losses {
        if tl.loss.category == LossCategory::Sociocultural {
            flags.push(Flag::new(
                "loss.intangible",
                format!("{} is sociocultural; its monetization rests on scenario-supplied magnitudes", tl.loss.loss_id),
            ));
        }
    }
    if !partition.retained_by_default.is_empty() {
        flags.push(Flag::new(
            "risk.retained_by_default",
            format!(
                "{} exposure(s) of events at or below {} per year are retained by default",
                partition.retained_by_default.len(),
                config.likelihood_threshold
            ),
        ));
    }

    Ok(CycleOutcome {
        inputs_digest: inputs_digest(doc, session, config),
        scenario_digest,
        currency_unit: doc.hazard.currency_unit.clone(),
        config: config.clone(),
        eal,
        partition,
        step1,
        revised_tolerable,
        problem,
        step2,
        appraisal,
        gap,
        flags,
    })
}

fn gap_report(
    problem: &PortfolioProblem,
    config: &AppraisalConfig,
    step1: &CoverSolution,
    step2: &Portfolio,
    partition: &TolerabilityPartition,
    eal: &BTreeMap<LossId, f64>,
) -> Result<GapReport> {
    let baseline = accept_all(problem, config)?;
    let unoptimized_total = baseline.outlay.total;
    let optimized_total = step2.outlay.total;
    let intolerable_exposure = partition
        .intolerable
        .iter()
        .map(|l| {
            let residual = step1.residuals.get(l).copied().unwrap_or(1.0);
            IntolerableExposure {
                loss_id: l.clone(),
                eal: eal[l],
                residual_fraction: residual,
                residual_eal: eal[l] * residual,
                eliminated: residual <= step1.epsilon + crate::step1_cover::FEASIBILITY_TOLERANCE,
                priced: false,
            }
        })
        .collect();
    Ok(GapReport {
        unoptimized_total,
        optimized_total,
        savings: unoptimized_total - optimized_total,
        step1_cost: step1.annualized_cost,
        combined_total: step1.annualized_cost + optimized_total,
        unoptimized: ClusterSeries::from(&baseline.outlay),
        optimized: ClusterSeries::from(&step2.outlay),
        intolerable_exposure,
        retained_by_default: RetainedSummary::from_exposures(&partition.retained_by_default),
    })
}

fn into_record(outcome: CycleOutcome, lineage: &str, revision: u32, clock: Clock) -> CycleRecord {
    let solver_modes = SolverModes {
        step1: outcome.step1.mode,
        step2: outcome.step2.mode,
    };
    CycleRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        cycle_id: cycle_id(lineage, revision),
        lineage: lineage.to_string(),
        revision,
        inputs_digest: outcome.inputs_digest,
        scenario_digest: outcome.scenario_digest,
        currency_unit: outcome.currency_unit,
        config: outcome.config,
        eal: outcome.eal,
        partition: outcome.partition,
        step1: outcome.step1,
        revised_tolerable: outcome.revised_tolerable,
        solver_modes,
        step2: outcome.step2,
        appraisal: outcome.appraisal,
        gap: outcome.gap,
        flags: outcome.flags,
        created_at: clock.now(),
    }
}

impl CycleOutcome {
    /// Stamps the outcome as an unpersisted record (used for what-if answers).
    pub fn into_ephemeral_record(self, lineage: &str, revision: u32, clock: Clock) -> CycleRecord {
        into_record(self, lineage, revision, clock)
    }
}

pub fn cycle_id(lineage: &str, revision: u32) -> String {
    format!("{lineage}-r{revision}")
}

/// Runs a cycle and appends it to the scenario's lineage in `store`.
pub fn run_cycle(
    store: &RecordStore,
    doc: &ScenarioDocument,
    session: &ConsultationSession,
    config: &CycleConfig,
    clock: Clock,
) -> Result<CycleRecord> {
    let outcome = evaluate_cycle(doc, session, config)?;
    let lineage = doc.scenario_id.as_str();
    let revision = store.latest_revision(lineage)?.map_or(1, |r| r + 1);
    let record = into_record(outcome, lineage, revision, clock);
    let inputs = CycleInputs {
        scenario: doc.clone(),
        votes: crate::scenario_io::VoteLedger::from_session(session),
        config: config.clone(),
    };
    store.append(&record, &inputs)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reclassification {
    pub loss_id: LossId,
    pub from: Option<Tolerability>,
    pub to: Option<Tolerability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentChange {
    pub loss_id: LossId,
    pub from: Option<ActionCluster>,
    pub to: Option<ActionCluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionDiff {
    pub from_revision: u32,
    pub to_revision: u32,
    pub reclassified: Vec<Reclassification>,
    pub step1_added: BTreeSet<ActionId>,
    pub step1_removed: BTreeSet<ActionId>,
    pub step2_added: BTreeSet<String>,
    pub step2_removed: BTreeSet<String>,
    pub assignment_changes: Vec<AssignmentChange>,
    pub tolerable_total_delta: f64,
    pub combined_total_delta: f64,
}

impl RevisionDiff {
    /// No decision changed. Outlay deltas alone (e.g. a price update) do not count.
    pub fn is_empty(&self) -> bool {
        self.reclassified.is_empty()
            && self.step1_added.is_empty()
            && self.step1_removed.is_empty()
            && self.step2_added.is_empty()
            && self.step2_removed.is_empty()
            && self.assignment_changes.is_empty()
    }
}

fn tolerability_of(partition: &TolerabilityPartition, loss: &str) -> Option<Tolerability> {
    if partition.intolerable.contains(loss) {
        Some(Tolerability::Intolerable)
    } else if partition.tolerable.contains(loss) {
        Some(Tolerability::Tolerable)
    } else {
        None
    }
}

pub fn diff_records(previous: &CycleRecord, next: &CycleRecord) -> RevisionDiff {
    let losses: BTreeSet<&LossId> = previous
        .partition
        .intolerable
        .iter()
        .chain(&previous.partition.tolerable)
        .chain(&next.partition.intolerable)
        .chain(&next.partition.tolerable)
        .collect();
    let reclassified = losses
        .iter()
        .filter_map(|l| {
            let from = tolerability_of(&previous.partition, l);
            let to = tolerability_of(&next.partition, l);
            (from != to).then(|| Reclassification { loss_id: (*l).clone(), from, to })
        })
        .collect();

    let step2_ids = |r: &CycleRecord| -> BTreeSet<String> { r.step2.p_selected.iter().chain(&r.step2.c_selected).cloned().collect() };
    let (old2, new2) = (step2_ids(previous), step2_ids(next));

    let assigned: BTreeSet<&LossId> = previous.step2.assignments.keys().chain(next.step2.assignments.keys()).collect();
    let assignment_changes = assigned
        .into_iter()
        .filter_map(|l| {
            let from = previous.step2.assignments.get(l).copied();
            let to = next.step2.assignments.get(l).copied();
            (from != to).then(|| AssignmentChange { loss_id: l.clone(), from, to })
        })
        .collect();

    RevisionDiff {
        from_revision: previous.revision,
        to_revision: next.revision,
        reclassified,
        step1_added: next.step1.selected.difference(&previous.step1.selected).cloned().collect(),
        step1_removed: previous.step1.selected.difference(&next.step1.selected).cloned().collect(),
        step2_added: new2.difference(&old2).cloned().collect(),
        step2_removed: old2.difference(&new2).cloned().collect(),
        assignment_changes,
        tolerable_total_delta: next.gap.optimized_total - previous.gap.optimized_total,
        combined_total_delta: next.gap.combined_total - previous.gap.combined_total,
    }
}

/// Re-runs the cycle on updated inputs as the next revision of `previous`'s lineage.
pub fn revise_cycle(
    store: &RecordStore,
    previous: &CycleRecord,
    doc: &ScenarioDocument,
    session: &ConsultationSession,
    config: &CycleConfig,
    clock: Clock,
) -> Result<(CycleRecord, RevisionDiff)> {
    if doc.scenario_id != previous.lineage {
        return Err(PclError::Reference(format!(
            "scenario {} does not continue lineage {}",
            doc.scenario_id, previous.lineage
        )));
    }
    match store.latest_revision(&previous.lineage)? {
        Some(latest) if latest == previous.revision => {}
        Some(latest) => {
            return Err(PclError::State(format!(
                "revision {} is not the latest of lineage {} (latest is {latest})",
                previous.revision, previous.lineage
            )))
        }
        None => {
            return Err(PclError::Reference(format!("lineage {} has no stored records", previous.lineage)));
        }
    }
    let record = run_cycle(store, doc, session, config, clock)?;
    let diff = diff_records(previous, &record);
    Ok((record, diff))
}

/// Stored records of a lineage in revision order; empty for unknown lineages.
pub fn history(store: &RecordStore, lineage: &str) -> Result<Vec<CycleRecord>> {
    store.history(lineage)
}

/// Recomputes the unoptimized-versus-optimized comparison from a record's own data.
///
/// The accept-all baseline is rebuilt from the appraised revised EALs under the
/// record's appraisal mode, so a tampered or stale `gap` section is not trusted.
pub fn compare_scenarios(record: &CycleRecord) -> GapReport {
    let appraisal = &record.config.appraisal;
    let accepted: f64 = record
        .appraisal
        .losses
        .iter()
        .map(|l| {
            let factor = match appraisal.mode {
                crate::config::AppraisalMode::Financial => 1.0,
                crate::config::AppraisalMode::Economic => appraisal.hardship_multiplier,
                crate::config::AppraisalMode::Social => appraisal.hardship_multiplier * l.equity_factor,
            };
            factor * l.revised_eal
        })
        .sum();
    let baseline = Outlay {
        p_cost: 0.0,
        c_cost: 0.0,
        accepted_weighted_loss: accepted,
        total: accepted,
    };
    let optimized_total = record.step2.outlay.total;
    GapReport {
        unoptimized_total: accepted,
        optimized_total,
        savings: accepted - optimized_total,
        step1_cost: record.step1.annualized_cost,
        combined_total: record.step1.annualized_cost + optimized_total,
        unoptimized: ClusterSeries::from(&baseline),
        optimized: ClusterSeries::from(&record.step2.outlay),
        intolerable_exposure: record.gap.intolerable_exposure.clone(),
        retained_by_default: RetainedSummary::from_exposures(&record.partition.retained_by_default),
    }
}
