//! `pcl`: run the cycle from scenario, vote and config files.
//!
//! Exit codes: 0 success, 1 diagnostic failure (bad input, missing file, no
//! record), 2 usage error. Records are stored under `$PCL_STORE` (default
//! `./pcl-store`); `serve` listens on `$PCL_PORT` (default 8080).

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pcl_core::classification::ConsultationSession;
use pcl_core::config::CycleConfig;
use pcl_core::cycle::{compare_scenarios, evaluate_cycle, run_cycle, Clock, CycleOutcome, GapReport};
use pcl_core::error::{Diagnostic, DiagnosticClass, PclError, Result};
use pcl_core::scenario_io::{emit_report, emit_scenario, parse_config, parse_scenario, parse_votes, scenario_digest, ReportFormat};
use pcl_core::store::RecordStore;
use pcl_core::ScenarioDocument;

const DEFAULT_STORE: &str = "pcl-store";

#[derive(Parser, Debug)]
#[command(name = "pcl", version, about = "Tolerability-driven climate risk cycle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a scenario; machine format prints its canonical form.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Tally votes and split considered losses into tolerable and intolerable.
    Classify(RunArgs),
    /// Choose the cheapest preemptive actions that eliminate intolerable losses.
    Step1(RunArgs),
    /// Run the whole cycle without storing a record.
    Optimize(RunArgs),
    /// Run the whole cycle and append the record to the store.
    Cycle(RunArgs),
    /// Compare the latest stored cycle of a scenario against accepting every loss.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Start the HTTP service.
    Serve {
        /// Stamp records with a fixed timestamp.
        #[arg(long)]
        deterministic: bool,
    },
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// human, machine or plotdata
    #[arg(long, default_value = "human")]
    format: String,
    /// Write the document here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    votes: PathBuf,
    /// Defaults to the scenario's own `defaults` section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured local-search seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Stamp records with a fixed timestamp.
    #[arg(long)]
    deterministic: bool,
    #[command(flatten)]
    out: OutputArgs,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PclError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_scenario(path: &Path) -> Result<ScenarioDocument> {
    parse_scenario(&read(path)?).map_err(|e| locate(e, path))
}

/// Prefixes diagnostic locations with the file they came from.
fn locate(e: PclError, path: &Path) -> PclError {
    match e {
        PclError::Invalid { class, diagnostics } => PclError::Invalid {
            class,
            diagnostics: diagnostics
                .into_iter()
                .map(|d| Diagnostic {
                    location: format!("{}:{}", path.display(), d.location),
                    ..d
                })
                .collect(),
        },
        other => other,
    }
}

struct Inputs {
    doc: ScenarioDocument,
    session: ConsultationSession,
    config: CycleConfig,
}

fn load_inputs(args: &RunArgs) -> Result<Inputs> {
    let doc = load_scenario(&args.scenario)?;
    let mut config = match &args.config {
        Some(path) => parse_config(&read(path)?).map_err(|e| locate(e, path))?,
        None => doc.defaults.clone(),
    };
    if let Some(seed) = args.seed {
        config.search.seed = seed;
    }
    let session = parse_votes(&read(&args.votes)?, &doc, config.likelihood_threshold).map_err(|e| locate(e, &args.votes))?;
    Ok(Inputs { doc, session, config })
}

fn store() -> RecordStore {
    RecordStore::new(std::env::var_os("PCL_STORE").map_or_else(|| PathBuf::from(DEFAULT_STORE), PathBuf::from))
}

fn clock(deterministic: bool) -> Clock {
    if deterministic {
        Clock::Deterministic
    } else {
        Clock::System
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("documents serialize") + "\n"
}

/// Formats that only make sense for full cycle records are refused elsewhere.
fn section_format(format: &str) -> Result<ReportFormat> {
    match format.parse()? {
        ReportFormat::Plotdata => Err(PclError::Usage("plotdata is only available for optimize, cycle and compare".into())),
        f => Ok(f),
    }
}

fn emit(out: &OutputArgs, text: &str) -> Result<()> {
    match &out.output {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn validate(scenario: &Path, out: &OutputArgs) -> Result<()> {
    let format = section_format(&out.format)?;
    let doc = load_scenario(scenario)?;
    let text = match format {
        ReportFormat::Machine => emit_scenario(&doc),
        _ => format!(
            "{}: valid ({} events, {} losses, {} actions, {} instruments)\ndigest {}\n",
            doc.scenario_id,
            doc.hazard.events.len(),
            doc.losses.len(),
            doc.actions.len(),
            doc.instruments.len(),
            scenario_digest(&doc)
        ),
    };
    emit(out, &text)
}

#[derive(Serialize)]
struct ClassifyReport<'a> {
    scenario_id: &'a str,
    session_id: &'a str,
    tally: Vec<pcl_core::VoteTally>,
    partition: &'a pcl_core::TolerabilityPartition,
}

fn classify_cmd(args: &RunArgs) -> Result<()> {
    let format = section_format(&args.out.format)?;
    let inputs = load_inputs(args)?;
    let rule = pcl_core::AggregationRule {
        threshold: inputs.config.aggregation_threshold,
    };
    let partition = pcl_core::classify(&inputs.session, rule)?;
    let tally = inputs.session.tally();
    let text = match format {
        ReportFormat::Machine => to_json(&ClassifyReport {
            scenario_id: &inputs.doc.scenario_id,
            session_id: &inputs.session.session_id,
            tally,
            partition: &partition,
        }),
        _ => {
            let mut s = format!("{:<12} {:>12} {:>10}  class\n", "loss", "intolerable", "tolerable");
            for t in &tally {
                let class = if partition.intolerable.contains(&t.loss_id) { "intolerable" } else { "tolerable" };
                s.push_str(&format!("{:<12} {:>12} {:>10}  {class}\n", t.loss_id, t.intolerable, t.tolerable));
            }
            for r in &partition.retained_by_default {
                s.push_str(&format!(
                    "retained by default: {} in {} (p={}, magnitude {})\n",
                    r.loss_id, r.event_id, r.annual_probability, r.magnitude
                ));
            }
            s
        }
    };
    emit(&args.out, &text)
}

#[derive(Serialize)]
struct Step1Report<'a> {
    scenario_id: &'a str,
    step1: &'a pcl_core::CoverSolution,
    revised_tolerable: &'a [pcl_core::RevisedLoss],
}

fn step1_cmd(args: &RunArgs) -> Result<()> {
    let format = section_format(&args.out.format)?;
    let inputs = load_inputs(args)?;
    let outcome: CycleOutcome = evaluate_cycle(&inputs.doc, &inputs.session, &inputs.config)?;
    let text = match format {
        ReportFormat::Machine => to_json(&Step1Report {
            scenario_id: &inputs.doc.scenario_id,
            step1: &outcome.step1,
            revised_tolerable: &outcome.revised_tolerable,
        }),
        _ => {
            let s1 = &outcome.step1;
            let selected: Vec<&str> = s1.selected.iter().map(String::as_str).collect();
            let mut s = format!(
                "selected  {}\ncost      {}\nfeasible  {}\nmode      {}\nepsilon   {}\n",
                if selected.is_empty() { "(none)".to_string() } else { selected.join(", ") },
                s1.annualized_cost,
                s1.feasible,
                s1.mode.as_str(),
                s1.epsilon
            );
            for (loss, r) in &s1.residuals {
                s.push_str(&format!("residual  {loss} {r}\n"));
            }
            for r in &outcome.revised_tolerable {
                s.push_str(&format!("revised   {} {} -> {}\n", r.loss_id, r.original_eal, r.eal));
            }
            s
        }
    };
    emit(&args.out, &text)
}

fn optimize_cmd(args: &RunArgs) -> Result<()> {
    args.out.format.parse::<ReportFormat>()?;
    let inputs = load_inputs(args)?;
    let outcome = evaluate_cycle(&inputs.doc, &inputs.session, &inputs.config)?;
    // Revision 0 marks a record that was never stored.
    let record = outcome.into_ephemeral_record(&inputs.doc.scenario_id, 0, clock(args.deterministic));
    emit(&args.out, &emit_report(&record, &args.out.format)?)
}

fn cycle_cmd(args: &RunArgs) -> Result<()> {
    args.out.format.parse::<ReportFormat>()?;
    let inputs = load_inputs(args)?;
    let record = run_cycle(&store(), &inputs.doc, &inputs.session, &inputs.config, clock(args.deterministic))?;
    emit(&args.out, &emit_report(&record, &args.out.format)?)
}

fn gap_table(gap: &GapReport, cycle_id: &str) -> String {
    let mut s = format!("comparison for {cycle_id}\n{:<12} {:>12} {:>12} {:>12} {:>12}\n", "line", "P", "C", "L", "total");
    for (name, series) in [("unoptimized", &gap.unoptimized), ("optimized", &gap.optimized)] {
        s.push_str(&format!(
            "{:<12} {:>12.4} {:>12.4} {:>12.4} {:>12.4}\n",
            name, series.p, series.c, series.l, series.total
        ));
    }
    s.push_str(&format!("savings      {:.4}\nstep 1 cost  {:.4}\ncombined     {:.4}\n", gap.savings, gap.step1_cost, gap.combined_total));
    s
}

fn compare_cmd(scenario: &Path, out: &OutputArgs) -> Result<()> {
    let format = out.format.parse::<ReportFormat>()?;
    let doc = load_scenario(scenario)?;
    let store = store();
    let latest = store.latest_revision(&doc.scenario_id)?.ok_or_else(|| PclError::Invalid {
        class: DiagnosticClass::Validation,
        diagnostics: vec![Diagnostic::new(
            "record.none",
            doc.scenario_id.clone(),
            format!("no record for scenario {} in {}; run `pcl cycle` first", doc.scenario_id, store.root().display()),
        )],
    })?;
    let record = store.load(&doc.scenario_id, latest)?;
    let text = match format {
        ReportFormat::Human => gap_table(&compare_scenarios(&record), &record.cycle_id),
        ReportFormat::Machine => to_json(&compare_scenarios(&record)),
        ReportFormat::Plotdata => emit_report(&record, "plotdata")?,
    };
    emit(out, &text)
}

fn serve_cmd(deterministic: bool) -> Result<()> {
    let port = pcl_service::port_from_env().map_err(PclError::Usage)?;
    let state = Arc::new(pcl_service::AppState::new(store(), clock(deterministic)));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(pcl_service::serve(addr, state))?;
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Validate { scenario, out } => validate(&scenario, &out),
        Command::Classify(args) => classify_cmd(&args),
        Command::Step1(args) => step1_cmd(&args),
        Command::Optimize(args) => optimize_cmd(&args),
        Command::Cycle(args) => cycle_cmd(&args),
        Command::Compare { scenario, out } => compare_cmd(&scenario, &out),
        Command::Serve { deterministic } => serve_cmd(deterministic),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(PclError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", e.code());
            for d in e.diagnostics() {
                eprintln!("  {d}");
            }
            ExitCode::from(1)
        }
    }
}
