//! Report rendering for cycle records.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cycle::{compare_scenarios, ClusterSeries, CycleRecord};
use crate::error::{PclError, Result};

use super::{emit_record, to_pretty};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Tabular text for people.
    Human,
    /// The record itself as canonical JSON; also the service wire format.
    Machine,
    /// Stacked P/C/L series of the unoptimized and optimized lines.
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = PclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(ReportFormat::Human),
            "machine" => Ok(ReportFormat::Machine),
            "plotdata" => Ok(ReportFormat::Plotdata),
            other => Err(PclError::Usage(format!("unknown report format {other:?} (expected human, machine or plotdata)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub total: f64,
}

impl PlotSeries {
    fn new(name: &str, s: &ClusterSeries) -> Self {
        PlotSeries {
            name: name.into(),
            p: s.p,
            c: s.c,
            l: s.l,
            total: s.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub cycle_id: String,
    pub currency_unit: String,
    pub stack_order: Vec<String>,
    pub series: Vec<PlotSeries>,
    pub savings: f64,
    /// Spending on intolerable losses, drawn outside the stacked comparison.
    pub step1_cost: f64,
    pub retained_by_default_expected: f64,
}

pub fn plot_data(record: &CycleRecord) -> PlotData {
    let gap = compare_scenarios(record);
    PlotData {
        cycle_id: record.cycle_id.clone(),
        currency_unit: record.currency_unit.clone(),
        stack_order: vec!["P".into(), "C".into(), "L".into()],
        series: vec![
            PlotSeries::new("unoptimized", &gap.unoptimized),
            PlotSeries::new("optimized", &gap.optimized),
        ],
        savings: gap.savings,
        step1_cost: gap.step1_cost,
        retained_by_default_expected: gap.retained_by_default.total_expected,
    }
}

/// Renders a record; `format` is one of `human`, `machine`, `plotdata`.
pub fn emit_report(record: &CycleRecord, format: &str) -> Result<String> {
    Ok(match format.parse::<ReportFormat>()? {
        ReportFormat::Human => human(record),
        ReportFormat::Machine => emit_record(record),
        ReportFormat::Plotdata => to_pretty(&plot_data(record)),
    })
}

fn join<'a>(ids: impl IntoIterator<Item = &'a String>) -> String {
    let v: Vec<&str> = ids.into_iter().map(String::as_str).collect();
    if v.is_empty() {
        "(none)".into()
    } else {
        v.join(", ")
    }
}

fn human(r: &CycleRecord) -> String {
    let mut out = String::new();
    let cur = if r.currency_unit.is_empty() { String::new() } else { format!(" {}", r.currency_unit) };
    let cfg = &r.config;
    let a = &cfg.appraisal;

    // Writing to a String cannot fail.
    let _ = writeln!(out, "Cycle {} (lineage {}, revision {})", r.cycle_id, r.lineage, r.revision);
    let _ = writeln!(out, "created      {}", r.created_at);
    let _ = writeln!(out, "inputs       {}", r.inputs_digest);
    let _ = writeln!(out, "scenario     {}", r.scenario_digest);
    let _ = writeln!(out);
    let _ = writeln!(out, "Settings");
    let _ = writeln!(out, "  likelihood threshold   {}", cfg.likelihood_threshold);
    let _ = writeln!(out, "  aggregation threshold  {}", cfg.aggregation_threshold);
    let _ = writeln!(out, "  epsilon                {}", cfg.epsilon);
    let _ = writeln!(out, "  appraisal mode         {}", a.mode.as_str());
    let _ = writeln!(out, "  hardship multiplier    {}", a.hardship_multiplier);
    let _ = writeln!(out, "  discount rate          {}", a.discount_rate);
    if !a.equity_weights.is_empty() {
        let w: Vec<String> = a.equity_weights.iter().map(|(g, w)| format!("{g}={w}")).collect();
        let _ = writeln!(out, "  equity weights         {}", w.join(", "));
    }
    let _ = writeln!(out, "  solver modes           step1 {}, step2 {}", r.solver_modes.step1.as_str(), r.solver_modes.step2.as_str());
    let _ = writeln!(out, "  seed                   {}", cfg.search.seed);
    let _ = writeln!(out);

    let _ = writeln!(out, "Classification");
    let _ = writeln!(out, "  {:<12} {:>14}  class", "loss", "EAL");
    for (loss, eal) in &r.eal {
        let class = if r.partition.intolerable.contains(loss) { "intolerable" } else { "tolerable" };
        let _ = writeln!(out, "  {:<12} {:>14.4}  {}", loss, eal, class);
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Step 1: eliminate intolerable losses");
    let _ = writeln!(out, "  selected     {}", join(&r.step1.selected));
    let _ = writeln!(out, "  cost         {:.4}{cur}/yr", r.step1.annualized_cost);
    let _ = writeln!(out, "  feasible     {}", if r.step1.feasible { "yes" } else { "NO (escalate)" });
    for (loss, residual) in &r.step1.residuals {
        let _ = writeln!(out, "  residual     {loss} {residual:.6} (target <= {})", r.step1.epsilon);
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Revised tolerable losses");
    let _ = writeln!(out, "  {:<12} {:>14} {:>14}", "loss", "before", "after");
    for rl in &r.revised_tolerable {
        let note = if rl.fully_addressed { "  fully addressed" } else { "" };
        let _ = writeln!(out, "  {:<12} {:>14.4} {:>14.4}{note}", rl.loss_id, rl.original_eal, rl.eal);
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Step 2: tolerable-loss portfolio");
    let _ = writeln!(out, "  preemptive   {}", join(&r.step2.p_selected));
    let _ = writeln!(out, "  contingent   {}", join(&r.step2.c_selected));
    for (loss, cluster) in &r.step2.assignments {
        let _ = writeln!(out, "  assignment   {loss} -> {cluster}");
    }
    for i in &r.appraisal.instruments {
        let _ = writeln!(
            out,
            "  loading      {} on {}: coverage {}, base {}, effective {}, cost {:.4}",
            i.instrument_id, i.covers, i.coverage, i.base_loading, i.effective_loading, i.annual_cost
        );
    }
    let o = &r.step2.outlay;
    let _ = writeln!(out, "  outlay       P {:.4} + C {:.4} + L {:.4} = {:.4}{cur}/yr", o.p_cost, o.c_cost, o.accepted_weighted_loss, o.total);
    let _ = writeln!(out);

    let _ = writeln!(out, "Outlay by appraisal mode");
    for (mode, o) in &r.appraisal.modes {
        let _ = writeln!(out, "  {:<10} {:>14.4}", mode.as_str(), o.total);
    }
    let _ = writeln!(out);

    let g = &r.gap;
    let _ = writeln!(out, "Gap (tolerable losses)");
    let _ = writeln!(out, "  unoptimized  {:.4}{cur}/yr", g.unoptimized_total);
    let _ = writeln!(out, "  optimized    {:.4}{cur}/yr", g.optimized_total);
    let _ = writeln!(out, "  savings      {:.4}{cur}/yr", g.savings);
    let _ = writeln!(out, "  step 1 cost  {:.4}{cur}/yr", g.step1_cost);
    let _ = writeln!(out, "  combined     {:.4}{cur}/yr", g.combined_total);
    for e in &g.intolerable_exposure {
        let _ = writeln!(
            out,
            "  intolerable  {} EAL {:.4}, residual {:.4} (unpriced)",
            e.loss_id, e.eal, e.residual_eal
        );
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Retained by default");
    if g.retained_by_default.exposures.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for x in &g.retained_by_default.exposures {
        let _ = writeln!(out, "  {} in {} (p={}): magnitude {}", x.loss_id, x.event_id, x.annual_probability, x.magnitude);
    }
    if !r.flags.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Flags");
        for f in &r.flags {
            let _ = writeln!(out, "  [{}] {}", f.code, f.message);
        }
    }
    out
}
