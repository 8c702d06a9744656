//! Tolerability-driven climate risk engine.
//!
//! A cycle filters a hazard's event set by likelihood, classifies the remaining
//! losses by stakeholder vote, buys preemptive actions until every intolerable
//! loss is virtually eliminated, and then chooses the cheapest mix of further
//! preemptive actions, contingent instruments and accepted loss for the rest.
//!
//! ```
//! use pcl_core::{evaluate_cycle, scenario_io, ConsultationSession, Verdict};
//!
//! let doc = scenario_io::mini_scenario();
//! let config = doc.defaults.clone();
//! let mut session = ConsultationSession::open("demo", &doc, vec!["g1".into()], config.likelihood_threshold).unwrap();
//! session.record_vote("g1", "L1", Verdict::Intolerable).unwrap();
//! session.record_vote("g1", "L2", Verdict::Tolerable).unwrap();
//! let outcome = evaluate_cycle(&doc, &session, &config).unwrap();
//! assert_eq!(outcome.step1.selected.iter().collect::<Vec<_>>(), ["A1"]);
//! assert!((outcome.step2.outlay.total - 12.2).abs() < 1e-9);
//! ```

pub mod classification;
pub mod config;
pub mod cycle;
pub mod error;
pub mod risk_model;
pub mod scenario_io;
pub mod step1_cover;
pub mod step2_portfolio;
pub mod store;

pub use classification::{
    classify, filter_by_likelihood, AggregationRule, ConsultationSession, LikelihoodFilter, RetainedExposure, SessionStatus,
    TolerabilityPartition, Verdict, VoteTally,
};
pub use config::{AppraisalConfig, AppraisalMode, CycleConfig, SearchOptions};
pub use cycle::{
    compare_scenarios, diff_records, evaluate_cycle, evaluate_cycle_with, history, revise_cycle, run_cycle, Clock, CycleInputs,
    CycleOutcome, CycleRecord, GapReport, RevisionDiff,
};
pub use error::{Diagnostic, DiagnosticClass, PclError, Result};
pub use risk_model::{
    expected_annual_loss, validate_model, ActionCluster, ContingentInstrument, EventScenario, HazardModel, LossCategory, LossItem,
    ResponseAction, Synergy, Tolerability,
};
pub use scenario_io::{emit_report, emit_scenario, parse_scenario, ScenarioDocument, VoteLedger};
pub use step1_cover::{eliminate_intolerable, propagate_ancillary, CoverSolution, RevisedLoss, SolverMode};
pub use step2_portfolio::{optimize, optimize_oracle, ForcedChoices, Outlay, Portfolio, PortfolioProblem, TolerableLoss};
pub use store::RecordStore;
