//! File formats: scenarios, vote ledgers, configs and cycle records.
//!
//! Every document is UTF-8 JSON with a top-level `schema_version`. Emission is
//! canonical: lists of identified entities are sorted by id, maps are ordered by
//! key, and output is pretty-printed with a trailing newline, so two documents
//! with the same value always produce the same bytes. See `docs/formats.md`.

mod report;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classification::{ConsultationSession, SessionStatus, Verdict};
use crate::config::CycleConfig;
use crate::cycle::CycleRecord;
use crate::error::{Diagnostic, DiagnosticClass, PclError, Result};
use crate::risk_model::{validate_config, validate_model, ContingentInstrument, GroupId, HazardModel, LossId, LossItem, ResponseAction, Synergy};

pub use report::{emit_report, plot_data, PlotData, PlotSeries, ReportFormat};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const VOTES_SCHEMA_VERSION: u32 = 1;
pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    /// Also the lineage name under which cycle records are stored.
    pub scenario_id: String,
    #[serde(default)]
    pub description: String,
    pub hazard: HazardModel,
    #[serde(default)]
    pub income_groups: Vec<GroupId>,
    #[serde(default)]
    pub losses: Vec<LossItem>,
    #[serde(default)]
    pub actions: Vec<ResponseAction>,
    #[serde(default)]
    pub instruments: Vec<ContingentInstrument>,
    #[serde(default)]
    pub synergies: Vec<Synergy>,
    #[serde(default)]
    pub defaults: CycleConfig,
}

impl ScenarioDocument {
    /// Sorts every identified list so that document equality ignores authoring order.
    pub fn canonicalize(&mut self) {
        self.hazard.events.sort_by(|a, b| a.event_id.cmp(&b.event_id));
        self.income_groups.sort();
        self.losses.sort_by(|a, b| a.loss_id.cmp(&b.loss_id));
        self.actions.sort_by(|a, b| a.action_id.cmp(&b.action_id));
        self.instruments.sort_by(|a, b| a.instrument_id.cmp(&b.instrument_id));
        self.synergies
            .sort_by(|a, b| (&a.p_action, &a.c_instrument).cmp(&(&b.p_action, &b.c_instrument)));
    }

    pub fn canonical(&self) -> ScenarioDocument {
        let mut doc = self.clone();
        doc.canonicalize();
        doc
    }
}

/// Lowercase hex SHA-256.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("document types serialize infallibly");
    text.push('\n');
    text
}

fn syntax_error(err: &serde_json::Error) -> PclError {
    PclError::Invalid {
        class: DiagnosticClass::Syntax,
        diagnostics: vec![Diagnostic::new(
            "syntax.json",
            format!("{}:{}", err.line(), err.column()),
            strip_position(&err.to_string()),
        )],
    }
}

fn schema_error(code: &str, location: impl Into<String>, message: impl Into<String>) -> PclError {
    PclError::Invalid {
        class: DiagnosticClass::Schema,
        diagnostics: vec![Diagnostic::new(code, location, message)],
    }
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

/// Syntax check, schema-version check, then typed decoding.
fn decode<T: DeserializeOwned>(text: &str, kind: &str, supported: u32) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| syntax_error(&e))?;
    check_version(&value, kind, supported)?;
    serde_json::from_str(text).map_err(|e| {
        schema_error(
            &format!("{kind}.schema"),
            format!("{}:{}", e.line(), e.column()),
            strip_position(&e.to_string()),
        )
    })
}

fn check_version(value: &serde_json::Value, kind: &str, supported: u32) -> Result<()> {
    let object = value
        .as_object()
        .ok_or_else(|| schema_error(&format!("{kind}.schema"), "$", format!("a {kind} document must be a JSON object")))?;
    match object.get("schema_version") {
        None => Err(schema_error("schema.version_missing", "schema_version", "schema_version is required")),
        Some(v) if v.as_u64() == Some(u64::from(supported)) => Ok(()),
        Some(v) => Err(schema_error(
            "schema.version_unsupported",
            "schema_version",
            format!("{kind} schema_version {v} is not supported (expected {supported})"),
        )),
    }
}

/// Parses and validates a scenario file; the returned document is canonical.
pub fn parse_scenario(text: &str) -> Result<ScenarioDocument> {
    let mut doc: ScenarioDocument = decode(text, "scenario", SCENARIO_SCHEMA_VERSION)?;
    doc.canonicalize();
    let diagnostics = validate_model(&doc);
    if !diagnostics.is_empty() {
        return Err(PclError::Invalid {
            class: DiagnosticClass::Validation,
            diagnostics,
        });
    }
    Ok(doc)
}

pub fn emit_scenario(doc: &ScenarioDocument) -> String {
    to_pretty(&doc.canonical())
}

/// Digest of the canonical emission; independent of authoring order.
pub fn scenario_digest(doc: &ScenarioDocument) -> String {
    digest_hex(emit_scenario(doc).as_bytes())
}

/// Config files carry `schema_version` next to the `CycleConfig` fields.
pub fn parse_config(text: &str) -> Result<CycleConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| syntax_error(&e))?;
    check_version(&value, "config", CONFIG_SCHEMA_VERSION)?;
    value.as_object_mut().expect("checked object").remove("schema_version");
    let config: CycleConfig = serde_json::from_value(value).map_err(|e| schema_error("config.schema", "$", e.to_string()))?;
    let diagnostics = validate_config(&config, None);
    if !diagnostics.is_empty() {
        return Err(PclError::Invalid {
            class: DiagnosticClass::Validation,
            diagnostics,
        });
    }
    Ok(config)
}

pub fn emit_config(config: &CycleConfig) -> String {
    let mut value = serde_json::to_value(config).expect("config serializes");
    value
        .as_object_mut()
        .expect("config is an object")
        .insert("schema_version".into(), CONFIG_SCHEMA_VERSION.into());
    to_pretty(&value)
}

/// The smallest valid scenario: one hazard with no events and nothing else.
pub fn empty_scenario(scenario_id: &str) -> ScenarioDocument {
    ScenarioDocument {
        schema_version: SCENARIO_SCHEMA_VERSION,
        scenario_id: scenario_id.to_string(),
        description: String::new(),
        hazard: HazardModel {
            hazard_id: "none".into(),
            name: String::new(),
            currency_unit: String::new(),
            events: Vec::new(),
        },
        income_groups: Vec::new(),
        losses: Vec::new(),
        actions: Vec::new(),
        instruments: Vec::new(),
        synergies: Vec::new(),
        defaults: CycleConfig::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteEntry {
    pub group: GroupId,
    pub loss_id: LossId,
    pub verdict: Verdict,
}

/// File form of a consultation session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteLedger {
    pub schema_version: u32,
    pub session_id: String,
    /// Digest of the scenario the votes were cast on.
    pub scenario_digest: String,
    pub groups: Vec<GroupId>,
    #[serde(default)]
    pub status: SessionStatus,
    #[serde(default)]
    pub votes: Vec<VoteEntry>,
}

impl VoteLedger {
    pub fn from_session(session: &ConsultationSession) -> Self {
        VoteLedger {
            schema_version: VOTES_SCHEMA_VERSION,
            session_id: session.session_id.clone(),
            scenario_digest: session.scenario_digest.clone(),
            groups: session.groups.clone(),
            status: session.status,
            votes: session
                .votes
                .iter()
                .map(|((group, loss_id), verdict)| VoteEntry {
                    group: group.clone(),
                    loss_id: loss_id.clone(),
                    verdict: *verdict,
                })
                .collect(),
        }
    }

    /// Replays the ledger into a session bound to `doc`.
    pub fn into_session(&self, doc: &ScenarioDocument, likelihood_threshold: f64) -> Result<ConsultationSession> {
        let digest = scenario_digest(doc);
        if self.scenario_digest != digest {
            return Err(PclError::Invalid {
                class: DiagnosticClass::Validation,
                diagnostics: vec![Diagnostic::new(
                    "votes.scenario_mismatch",
                    "scenario_digest",
                    format!("ledger was cast on scenario {} but the scenario given is {digest}", self.scenario_digest),
                )],
            });
        }
        let mut session = ConsultationSession::open(self.session_id.clone(), doc, self.groups.clone(), likelihood_threshold)?;
        let mut diagnostics = Vec::new();
        for (i, vote) in self.votes.iter().enumerate() {
            let key = (vote.group.clone(), vote.loss_id.clone());
            if session.votes.contains_key(&key) {
                diagnostics.push(Diagnostic::new(
                    "vote.duplicate",
                    format!("votes[{i}]"),
                    format!("group {} votes twice on loss {}", vote.group, vote.loss_id),
                ));
                continue;
            }
            if let Err(e) = session.record_vote(&vote.group, &vote.loss_id, vote.verdict) {
                diagnostics.push(Diagnostic::new(
                    "vote.reference",
                    format!("votes[{i}]"),
                    e.to_string(),
                ));
            }
        }
        if !diagnostics.is_empty() {
            return Err(PclError::Invalid {
                class: DiagnosticClass::Validation,
                diagnostics,
            });
        }
        session.status = self.status;
        Ok(session)
    }
}

/// Parses a vote ledger and replays it against `doc`.
pub fn parse_votes(text: &str, doc: &ScenarioDocument, likelihood_threshold: f64) -> Result<ConsultationSession> {
    let ledger: VoteLedger = decode(text, "votes", VOTES_SCHEMA_VERSION)?;
    ledger.into_session(doc, likelihood_threshold)
}

pub fn emit_votes(session: &ConsultationSession) -> String {
    to_pretty(&VoteLedger::from_session(session))
}

#[derive(Serialize)]
struct VoteMatrix<'a> {
    scenario_digest: &'a str,
    groups: &'a [GroupId],
    votes: Vec<VoteEntry>,
}

/// The decision-relevant part of a session: scenario binding, groups and verdicts.
///
/// Session ids and open/closed status are left out so that the same votes
/// digest identically whether they came from a file or a live session.
pub fn emit_votes_canonical(session: &ConsultationSession) -> String {
    let ledger = VoteLedger::from_session(session);
    to_pretty(&VoteMatrix {
        scenario_digest: &ledger.scenario_digest,
        groups: &ledger.groups,
        votes: ledger.votes,
    })
}

pub fn emit_record(record: &CycleRecord) -> String {
    to_pretty(record)
}

pub fn parse_record(text: &str) -> Result<CycleRecord> {
    decode(text, "record", RECORD_SCHEMA_VERSION)
}

/// The shipped canonical example scenario.
pub fn mini_scenario() -> ScenarioDocument {
    parse_scenario(MINI_SCENARIO).expect("shipped mini scenario is valid")
}

pub const MINI_SCENARIO: &str = include_str!("../../../../scenarios/coastal-flood-mini.json");
