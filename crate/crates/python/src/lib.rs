//! Python bindings: scenarios, consultation sessions, cycle evaluation and the record store.
//!
//! Documents cross the boundary as JSON text; `to_dict` helpers decode them with
//! Python's own `json` module.

use std::collections::BTreeSet;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use pcl_core::error::PclError as CoreError;
use pcl_core::scenario_io::{self, emit_record, emit_votes, parse_config, parse_votes, scenario_digest};
use pcl_core::{
    classify, evaluate_cycle_with, AggregationRule, Clock, ConsultationSession, CycleConfig, CycleRecord, ForcedChoices,
    ScenarioDocument, Verdict,
};

create_exception!(pcl, PclError, PyException, "Engine error; args are (code, message, diagnostics).");

fn to_py(e: CoreError) -> PyErr {
    let diagnostics: Vec<(String, String, String)> = e
        .diagnostics()
        .into_iter()
        .map(|d| (d.code, d.location, d.message))
        .collect();
    PclError::new_err((e.code(), e.to_string(), diagnostics))
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_verdict(text: &str) -> PyResult<Verdict> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .map_err(|_| to_py(CoreError::Usage(format!("unknown verdict {text:?} (expected intolerable or tolerable)"))))
}

#[pyclass(name = "Scenario", module = "pcl", frozen)]
struct PyScenario {
    doc: ScenarioDocument,
}

#[pymethods]
impl PyScenario {
    /// Parses and validates scenario JSON.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            doc: pcl_core::parse_scenario(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| to_py(CoreError::Io(e)))?;
        Self::parse(&text)
    }

    /// The mini coastal-flood scenario bundled with the engine.
    #[staticmethod]
    fn mini() -> Self {
        PyScenario {
            doc: scenario_io::mini_scenario(),
        }
    }

    #[getter]
    fn scenario_id(&self) -> String {
        self.doc.scenario_id.clone()
    }

    #[getter]
    fn digest(&self) -> String {
        scenario_digest(&self.doc)
    }

    #[getter]
    fn loss_ids(&self) -> Vec<String> {
        self.doc.losses.iter().map(|l| l.loss_id.clone()).collect()
    }

    #[getter]
    fn defaults(&self) -> String {
        scenario_io::emit_config(&self.doc.defaults)
    }

    fn to_json(&self) -> String {
        pcl_core::emit_scenario(&self.doc)
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?})", self.doc.scenario_id)
    }
}

#[pyclass(name = "Session", module = "pcl")]
struct PySession {
    doc: ScenarioDocument,
    session: ConsultationSession,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (scenario, groups, likelihood_threshold=None, session_id="session"))]
    fn new(scenario: &PyScenario, groups: Vec<String>, likelihood_threshold: Option<f64>, session_id: &str) -> PyResult<Self> {
        let threshold = likelihood_threshold.unwrap_or(scenario.doc.defaults.likelihood_threshold);
        let session = ConsultationSession::open(session_id, &scenario.doc, groups, threshold).map_err(to_py)?;
        Ok(PySession {
            doc: scenario.doc.clone(),
            session,
        })
    }

    /// Binds a vote ledger to `scenario`; the ledger's digest must match.
    #[staticmethod]
    #[pyo3(signature = (text, scenario, likelihood_threshold=None))]
    fn from_ledger(text: &str, scenario: &PyScenario, likelihood_threshold: Option<f64>) -> PyResult<Self> {
        let threshold = likelihood_threshold.unwrap_or(scenario.doc.defaults.likelihood_threshold);
        Ok(PySession {
            doc: scenario.doc.clone(),
            session: parse_votes(text, &scenario.doc, threshold).map_err(to_py)?,
        })
    }

    fn vote(&mut self, group: &str, loss_id: &str, verdict: &str) -> PyResult<()> {
        let verdict = parse_verdict(verdict)?;
        self.session.record_vote(group, loss_id, verdict).map_err(to_py)
    }

    fn reopen(&mut self) {
        self.session.reopen();
    }

    #[getter]
    fn considered_losses(&self) -> Vec<String> {
        self.session.considered_losses.iter().cloned().collect()
    }

    #[getter]
    fn complete(&self) -> bool {
        self.session.is_complete()
    }

    fn missing(&self) -> Vec<(String, String)> {
        self.session.missing_votes()
    }

    /// Returns the (intolerable, tolerable) loss ids.
    #[pyo3(signature = (aggregation_threshold=None))]
    fn classify(&self, aggregation_threshold: Option<f64>) -> PyResult<(Vec<String>, Vec<String>)> {
        let threshold = aggregation_threshold.unwrap_or(self.doc.defaults.aggregation_threshold);
        let partition = classify(&self.session, AggregationRule { threshold }).map_err(to_py)?;
        Ok((partition.intolerable.into_iter().collect(), partition.tolerable.into_iter().collect()))
    }

    fn to_json(&self) -> String {
        emit_votes(&self.session)
    }
}

#[pyclass(name = "Record", module = "pcl", frozen)]
struct PyRecord {
    record: CycleRecord,
}

#[pymethods]
impl PyRecord {
    #[getter]
    fn cycle_id(&self) -> String {
        self.record.cycle_id.clone()
    }

    #[getter]
    fn revision(&self) -> u32 {
        self.record.revision
    }

    #[getter]
    fn inputs_digest(&self) -> String {
        self.record.inputs_digest.clone()
    }

    #[getter]
    fn intolerable(&self) -> Vec<String> {
        self.record.partition.intolerable.iter().cloned().collect()
    }

    #[getter]
    fn step1_selected(&self) -> Vec<String> {
        self.record.step1.selected.iter().cloned().collect()
    }

    #[getter]
    fn step1_feasible(&self) -> bool {
        self.record.step1.feasible
    }

    #[getter]
    fn step1_cost(&self) -> f64 {
        self.record.step1.annualized_cost
    }

    #[getter]
    fn p_selected(&self) -> Vec<String> {
        self.record.step2.p_selected.iter().cloned().collect()
    }

    #[getter]
    fn c_selected(&self) -> Vec<String> {
        self.record.step2.c_selected.iter().cloned().collect()
    }

    /// Loss id to cluster letter (P, C or L).
    #[getter]
    fn assignments(&self) -> Vec<(String, String)> {
        self.record.step2.assignments.iter().map(|(l, c)| (l.clone(), c.to_string())).collect()
    }

    #[getter]
    fn total(&self) -> f64 {
        self.record.step2.outlay.total
    }

    #[getter]
    fn unoptimized_total(&self) -> f64 {
        self.record.gap.unoptimized_total
    }

    #[getter]
    fn savings(&self) -> f64 {
        self.record.gap.savings
    }

    #[getter]
    fn flags(&self) -> Vec<String> {
        self.record.flags.iter().map(|f| f.code.clone()).collect()
    }

    #[pyo3(signature = (format="human"))]
    fn report(&self, format: &str) -> PyResult<String> {
        pcl_core::emit_report(&self.record, format).map_err(to_py)
    }

    fn to_json(&self) -> String {
        emit_record(&self.record)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_loads(py, &emit_record(&self.record))
    }

    fn __repr__(&self) -> String {
        format!("Record({:?}, total={})", self.record.cycle_id, self.record.step2.outlay.total)
    }
}

fn config_or_defaults(doc: &ScenarioDocument, config: Option<&str>) -> PyResult<CycleConfig> {
    match config {
        Some(text) => parse_config(text).map_err(to_py),
        None => Ok(doc.defaults.clone()),
    }
}

/// Runs a cycle without storing it; the record has revision 0.
#[pyfunction]
#[pyo3(signature = (scenario, session, config=None, force_include=None, force_exclude=None))]
fn evaluate(
    scenario: &PyScenario,
    session: &PySession,
    config: Option<&str>,
    force_include: Option<BTreeSet<String>>,
    force_exclude: Option<BTreeSet<String>>,
) -> PyResult<PyRecord> {
    let cfg = config_or_defaults(&scenario.doc, config)?;
    let forced = ForcedChoices {
        include: force_include.unwrap_or_default(),
        exclude: force_exclude.unwrap_or_default(),
    };
    let outcome = evaluate_cycle_with(&scenario.doc, &session.session, &cfg, &forced).map_err(to_py)?;
    Ok(PyRecord {
        record: outcome.into_ephemeral_record(&scenario.doc.scenario_id, 0, Clock::Deterministic),
    })
}

#[pyclass(name = "Store", module = "pcl", frozen)]
struct PyStore {
    store: pcl_core::RecordStore,
}

#[pymethods]
impl PyStore {
    #[new]
    fn new(path: &str) -> Self {
        PyStore {
            store: pcl_core::RecordStore::new(path),
        }
    }

    /// Runs a cycle and appends it as the next revision of the scenario's lineage.
    #[pyo3(signature = (scenario, session, config=None, deterministic=false))]
    fn run_cycle(&self, scenario: &PyScenario, session: &PySession, config: Option<&str>, deterministic: bool) -> PyResult<PyRecord> {
        let cfg = config_or_defaults(&scenario.doc, config)?;
        let clock = if deterministic { Clock::Deterministic } else { Clock::System };
        let record = pcl_core::run_cycle(&self.store, &scenario.doc, &session.session, &cfg, clock).map_err(to_py)?;
        Ok(PyRecord { record })
    }

    fn load(&self, lineage: &str, revision: u32) -> PyResult<PyRecord> {
        Ok(PyRecord {
            record: self.store.load(lineage, revision).map_err(to_py)?,
        })
    }

    fn history(&self, lineage: &str) -> PyResult<Vec<PyRecord>> {
        let records = self.store.history(lineage).map_err(to_py)?;
        Ok(records.into_iter().map(|record| PyRecord { record }).collect())
    }

    fn lineages(&self) -> PyResult<Vec<String>> {
        self.store.lineages().map_err(to_py)
    }
}

#[pymodule]
fn pcl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PclError", m.py().get_type::<PclError>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyStore>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
