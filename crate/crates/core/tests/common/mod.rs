//! Shared test support: instance generators and brute-force oracles.
//!
//! The oracles recompute everything from the scenario fields with plain loops
//! and do not call into the solvers they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pcl_core::classification::ConsultationSession;
use pcl_core::config::{AppraisalConfig, AppraisalMode};
use pcl_core::risk_model::{ContingentInstrument, EventScenario, HazardModel, LossCategory, LossItem, ResponseAction, Synergy};
use pcl_core::scenario_io::{ScenarioDocument, SCENARIO_SCHEMA_VERSION};
use pcl_core::step2_portfolio::{PortfolioProblem, TolerableLoss};
use pcl_core::Verdict;

pub const FEASIBILITY_SLACK: f64 = 1e-12;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Scenario files of the golden corpus (votes, configs and invalid files excluded).
pub fn golden_corpus() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

/// Five groups: four call L1 intolerable, one calls L2 intolerable.
pub fn mini_session(doc: &ScenarioDocument) -> ConsultationSession {
    let groups: Vec<String> = (1..=5).map(|i| format!("g{i}")).collect();
    let mut session = ConsultationSession::open("mini", doc, groups, doc.defaults.likelihood_threshold).unwrap();
    for i in 1..=5 {
        let g = format!("g{i}");
        let l1 = if i <= 4 { Verdict::Intolerable } else { Verdict::Tolerable };
        let l2 = if i == 1 { Verdict::Intolerable } else { Verdict::Tolerable };
        session.record_vote(&g, "L1", l1).unwrap();
        session.record_vote(&g, "L2", l2).unwrap();
    }
    session
}

/// Every group casts `verdict(loss)` on every considered loss.
pub fn uniform_session(doc: &ScenarioDocument, groups: usize, verdict: impl Fn(&str) -> Verdict) -> ConsultationSession {
    let names: Vec<String> = (1..=groups).map(|i| format!("g{i}")).collect();
    let mut session = ConsultationSession::open("uniform", doc, names.clone(), doc.defaults.likelihood_threshold).unwrap();
    for loss in session.considered_losses.clone() {
        for g in &names {
            session.record_vote(g, &loss, verdict(&loss)).unwrap();
        }
    }
    session
}

pub fn annualized(action: &ResponseAction, rate: f64) -> f64 {
    let capital = if action.capital_cost > 0.0 {
        let t = f64::from(action.lifetime_years.unwrap());
        if rate == 0.0 {
            action.capital_cost / t
        } else {
            action.capital_cost * rate / (1.0 - (1.0 + rate).powf(-t))
        }
    } else {
        0.0
    };
    action.annual_cost + capital
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Preference among equal-cost selections: fewer ids, then lexicographic.
fn prefer(cost: f64, ids: &BTreeSet<String>, best: &Option<(f64, BTreeSet<String>)>) -> bool {
    match best {
        None => true,
        Some((bc, bids)) => {
            if !rel_close(cost, *bc, 1e-9) {
                cost < *bc
            } else {
                (ids.len(), ids.iter().collect::<Vec<_>>()) < (bids.len(), bids.iter().collect::<Vec<_>>())
            }
        }
    }
}

/// Exhaustive minimum-cost cover; `None` when no subset reaches `epsilon`.
///
/// Residuals and costs of each subset are built from the subset without its
/// lowest action, so every subset costs O(losses).
pub fn cover_oracle(
    intolerable: &BTreeSet<String>,
    actions: &[ResponseAction],
    epsilon: f64,
    rate: f64,
) -> Option<(f64, BTreeSet<String>)> {
    let n = actions.len();
    assert!(n <= 20, "oracle limited to 20 actions");
    let losses: Vec<&String> = intolerable.iter().collect();
    let m = losses.len();
    let factor: Vec<Vec<f64>> = actions
        .iter()
        .map(|a| losses.iter().map(|l| 1.0 - a.reductions.get(*l).copied().unwrap_or(0.0)).collect())
        .collect();
    let price: Vec<f64> = actions.iter().map(|a| annualized(a, rate)).collect();
    let size = 1usize << n;
    let mut residual = vec![1.0; size * m];
    let mut cost = vec![0.0; size];
    let mut best: Option<(f64, BTreeSet<String>)> = None;
    for mask in 0..size {
        if mask > 0 {
            let low = mask.trailing_zeros() as usize;
            let rest = mask & (mask - 1);
            cost[mask] = cost[rest] + price[low];
            for i in 0..m {
                residual[mask * m + i] = residual[rest * m + i] * factor[low][i];
            }
        }
        if residual[mask * m..(mask + 1) * m].iter().any(|r| *r > epsilon + FEASIBILITY_SLACK) {
            continue;
        }
        let ids: BTreeSet<String> = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| actions[j].action_id.clone()).collect();
        if prefer(cost[mask], &ids, &best) {
            best = Some((cost[mask], ids));
        }
    }
    best
}

/// Residual of every intolerable loss when all actions are applied.
pub fn best_possible_residuals(intolerable: &BTreeSet<String>, actions: &[ResponseAction]) -> BTreeMap<String, f64> {
    intolerable
        .iter()
        .map(|l| {
            let r: f64 = actions.iter().map(|a| 1.0 - a.reductions.get(l).copied().unwrap_or(0.0)).product();
            (l.clone(), r)
        })
        .collect()
}

fn acceptance(loss: &LossItem, config: &AppraisalConfig) -> f64 {
    match config.mode {
        AppraisalMode::Financial => 1.0,
        AppraisalMode::Economic => config.hardship_multiplier,
        AppraisalMode::Social => {
            let total: f64 = loss.incidence.values().sum();
            let weighted: f64 = loss
                .incidence
                .iter()
                .map(|(g, s)| s * config.equity_weights.get(g).copied().unwrap_or(1.0))
                .sum();
            config.hardship_multiplier * if total > 0.0 { weighted / total } else { 1.0 }
        }
    }
}

/// Objective of one selection, `None` when two selected instruments cover the same loss.
pub fn portfolio_total(
    problem: &PortfolioProblem,
    config: &AppraisalConfig,
    p: &BTreeSet<String>,
    c: &BTreeSet<String>,
) -> Option<f64> {
    let actions: Vec<&ResponseAction> = problem.actions.iter().filter(|a| p.contains(&a.action_id)).collect();
    let instruments: Vec<&ContingentInstrument> = problem.instruments.iter().filter(|i| c.contains(&i.instrument_id)).collect();
    let mut covered = BTreeSet::new();
    for i in &instruments {
        if !covered.insert(i.covers.as_str()) {
            return None;
        }
    }
    let mut total: f64 = actions.iter().map(|a| annualized(a, config.discount_rate)).sum();
    let loading = |i: &ContingentInstrument| {
        problem
            .synergies
            .iter()
            .filter(|s| s.c_instrument == i.instrument_id && (p.contains(&s.p_action) || problem.implemented.contains(&s.p_action)))
            .map(|s| s.discounted_loading)
            .fold(i.loading, f64::min)
    };
    for tl in &problem.losses {
        let id = &tl.loss.loss_id;
        let residual = tl.eal * actions.iter().map(|a| 1.0 - a.reductions.get(id).copied().unwrap_or(0.0)).product::<f64>();
        let cover = instruments.iter().find(|i| &i.covers == id);
        let uncompensated = match cover {
            Some(i) => {
                total += i.fixed_annual_cost + i.coverage * residual * loading(i);
                (1.0 - i.coverage) * residual
            }
            None => residual,
        };
        total += acceptance(&tl.loss, config) * uncompensated;
    }
    for i in &instruments {
        if !problem.losses.iter().any(|tl| tl.loss.loss_id == i.covers) {
            total += i.fixed_annual_cost;
        }
    }
    Some(total)
}

/// Exhaustive minimum over every admissible (actions, instruments) selection.
pub fn portfolio_oracle(problem: &PortfolioProblem, config: &AppraisalConfig) -> (f64, BTreeSet<String>, BTreeSet<String>) {
    let a_ids: Vec<&String> = problem.actions.iter().map(|a| &a.action_id).collect();
    let i_ids: Vec<&String> = problem.instruments.iter().map(|i| &i.instrument_id).collect();
    let n = a_ids.len() + i_ids.len();
    assert!(n <= 20, "oracle limited to 20 candidates");
    let mut best: Option<(f64, BTreeSet<String>, BTreeSet<String>)> = None;
    for mask in 0u32..(1 << n) {
        let pick = |k: usize| mask & (1 << k) != 0;
        let p: BTreeSet<String> = (0..a_ids.len()).filter(|&k| pick(k)).map(|k| a_ids[k].clone()).collect();
        let c: BTreeSet<String> = (0..i_ids.len()).filter(|&k| pick(a_ids.len() + k)).map(|k| i_ids[k].clone()).collect();
        let chosen: BTreeSet<&String> = p.iter().chain(&c).collect();
        if problem.forced.include.iter().any(|id| !chosen.contains(id)) || problem.forced.exclude.iter().any(|id| chosen.contains(id)) {
            continue;
        }
        let Some(total) = portfolio_total(problem, config, &p, &c) else { continue };
        if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
            best = Some((total, p, c));
        }
    }
    best.expect("the forced-only selection is admissible")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

fn pick_reduction(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..6) {
        0 => 0.5,
        1 => 0.8,
        2 => 0.95,
        3 => 1.0,
        _ => (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0,
    }
}

/// Step-1 instance: `m` intolerable losses, up to `max_actions` actions, an epsilon.
pub fn random_cover_instance(rng: &mut ChaCha8Rng, max_actions: usize, max_losses: usize) -> (BTreeSet<String>, Vec<ResponseAction>, f64) {
    let m = rng.gen_range(1..=max_losses);
    let n = rng.gen_range(1..=max_actions);
    let losses: BTreeSet<String> = (0..m).map(|i| format!("L{i}")).collect();
    let actions = (0..n)
        .map(|j| {
            let mut reductions = BTreeMap::new();
            for i in 0..m {
                if rng.gen_bool(0.5) {
                    reductions.insert(format!("L{i}"), pick_reduction(rng));
                }
            }
            if reductions.is_empty() {
                reductions.insert(format!("L{}", rng.gen_range(0..m)), pick_reduction(rng));
            }
            ResponseAction {
                action_id: format!("A{j:02}"),
                description: String::new(),
                annual_cost: f64::from(rng.gen_range(1u32..40)),
                capital_cost: 0.0,
                lifetime_years: None,
                reductions,
            }
        })
        .collect();
    let epsilon = *[0.01, 0.05, 0.1, 0.2].choose(rng).unwrap();
    (losses, actions, epsilon)
}

fn random_incidence(rng: &mut ChaCha8Rng, groups: &[String]) -> BTreeMap<String, f64> {
    let k = rng.gen_range(1..=groups.len());
    let chosen: Vec<&String> = groups.choose_multiple(rng, k).collect();
    let raw: Vec<u32> = chosen.iter().map(|_| rng.gen_range(1..10)).collect();
    let sum: u32 = raw.iter().sum();
    let mut out = BTreeMap::new();
    let mut acc = 0.0;
    for (idx, (g, r)) in chosen.iter().zip(&raw).enumerate() {
        let share = if idx + 1 == chosen.len() { 1.0 - acc } else { f64::from(*r) / f64::from(sum) };
        acc += share;
        out.insert((*g).clone(), share);
    }
    out
}

fn random_config(rng: &mut ChaCha8Rng, groups: &[String]) -> AppraisalConfig {
    let mode = *AppraisalMode::ALL.choose(rng).unwrap();
    AppraisalConfig {
        mode,
        equity_weights: groups.iter().map(|g| (g.clone(), f64::from(rng.gen_range(1u32..=8)) * 0.25)).collect(),
        hardship_multiplier: 1.0 + f64::from(rng.gen_range(0u32..=10)) * 0.1,
        discount_rate: *[0.0, 0.03, 0.05].choose(rng).unwrap(),
    }
}

/// Step-2 instance with up to `max_candidates` actions plus instruments.
pub fn random_problem(rng: &mut ChaCha8Rng, max_candidates: usize, max_losses: usize) -> (PortfolioProblem, AppraisalConfig) {
    let groups: Vec<String> = vec!["poor".into(), "middle".into(), "rich".into()];
    let m = rng.gen_range(1..=max_losses);
    let losses: Vec<TolerableLoss> = (0..m)
        .map(|i| TolerableLoss {
            loss: LossItem {
                loss_id: format!("L{i}"),
                description: String::new(),
                category: LossCategory::Physical,
                incidence: random_incidence(rng, &groups),
                tolerability: Default::default(),
            },
            eal: f64::from(rng.gen_range(1u32..200)) / 2.0,
        })
        .collect();
    let total = rng.gen_range(1..=max_candidates);
    let n_instr = rng.gen_range(0..=total.min(m + 2));
    let n_actions = total - n_instr;
    let actions: Vec<ResponseAction> = (0..n_actions)
        .map(|j| {
            let mut reductions = BTreeMap::new();
            for i in 0..m {
                if rng.gen_bool(0.4) {
                    reductions.insert(format!("L{i}"), pick_reduction(rng));
                }
            }
            if reductions.is_empty() {
                reductions.insert(format!("L{}", rng.gen_range(0..m)), pick_reduction(rng));
            }
            let capital = rng.gen_bool(0.2);
            ResponseAction {
                action_id: format!("A{j:02}"),
                description: String::new(),
                annual_cost: f64::from(rng.gen_range(1u32..60)),
                capital_cost: if capital { f64::from(rng.gen_range(10u32..300)) } else { 0.0 },
                lifetime_years: capital.then(|| rng.gen_range(5..40)),
                reductions,
            }
        })
        .collect();
    let instruments: Vec<ContingentInstrument> = (0..n_instr)
        .map(|k| ContingentInstrument {
            instrument_id: format!("I{k:02}"),
            description: String::new(),
            covers: format!("L{}", rng.gen_range(0..m)),
            coverage: *[0.5, 0.8, 1.0].choose(rng).unwrap(),
            loading: 1.0 + f64::from(rng.gen_range(0u32..=10)) * 0.1,
            fixed_annual_cost: f64::from(rng.gen_range(0u32..5)),
        })
        .collect();
    let mut synergies = Vec::new();
    for i in &instruments {
        if !actions.is_empty() && rng.gen_bool(0.4) && i.loading > 1.0 {
            synergies.push(Synergy {
                p_action: actions[rng.gen_range(0..actions.len())].action_id.clone(),
                c_instrument: i.instrument_id.clone(),
                discounted_loading: 1.0 + (i.loading - 1.0) * 0.5,
            });
        }
    }
    let config = random_config(rng, &groups);
    (
        PortfolioProblem {
            losses,
            actions,
            instruments,
            synergies,
            implemented: BTreeSet::new(),
            forced: Default::default(),
        },
        config,
    )
}

/// A whole valid scenario plus a complete session with random votes.
pub fn random_scenario(rng: &mut ChaCha8Rng, id: &str) -> (ScenarioDocument, ConsultationSession) {
    let groups: Vec<String> = (0..rng.gen_range(1..=3)).map(|g| format!("grp{g}")).collect();
    let m = rng.gen_range(1..=5);
    let losses: Vec<LossItem> = (0..m)
        .map(|i| LossItem {
            loss_id: format!("L{i}"),
            description: String::new(),
            category: *[LossCategory::Human, LossCategory::Physical, LossCategory::Socioeconomic, LossCategory::Sociocultural]
                .choose(rng)
                .unwrap(),
            incidence: random_incidence(rng, &groups),
            tolerability: Default::default(),
        })
        .collect();
    let events: Vec<EventScenario> = (0..rng.gen_range(1..=4))
        .map(|e| EventScenario {
            event_id: format!("e{e}"),
            annual_probability: *[0.002, 0.004, 0.01, 0.02, 0.05, 0.1, 0.25].choose(rng).unwrap(),
            magnitudes: {
                let mut mags = BTreeMap::new();
                for i in 0..m {
                    if rng.gen_bool(0.7) {
                        mags.insert(format!("L{i}"), f64::from(rng.gen_range(1u32..2000)));
                    }
                }
                mags
            },
        })
        .collect();
    let (problem, _) = random_problem(rng, 12, m);
    let appraisal = random_config(rng, &groups);
    let doc = ScenarioDocument {
        schema_version: SCENARIO_SCHEMA_VERSION,
        scenario_id: id.to_string(),
        description: String::new(),
        hazard: HazardModel {
            hazard_id: "h".into(),
            name: "random".into(),
            currency_unit: "u".into(),
            events,
        },
        income_groups: groups.clone(),
        losses,
        actions: problem.actions,
        instruments: problem.instruments,
        synergies: problem.synergies,
        defaults: pcl_core::CycleConfig {
            epsilon: *[0.05, 0.1, 0.3].choose(rng).unwrap(),
            appraisal,
            ..Default::default()
        },
    }
    .canonical();
    let voters = rng.gen_range(1..=5);
    let names: Vec<String> = (0..voters).map(|v| format!("s{v}")).collect();
    let mut session = ConsultationSession::open("random", &doc, names.clone(), doc.defaults.likelihood_threshold).unwrap();
    for loss in session.considered_losses.clone() {
        for g in &names {
            let verdict = if rng.gen_bool(0.35) { Verdict::Intolerable } else { Verdict::Tolerable };
            session.record_vote(g, &loss, verdict).unwrap();
        }
    }
    (doc, session)
}

/// Multiplies every monetary input by `k`.
pub fn scale_money(doc: &ScenarioDocument, k: f64) -> ScenarioDocument {
    let mut out = doc.clone();
    for e in &mut out.hazard.events {
        for m in e.magnitudes.values_mut() {
            *m *= k;
        }
    }
    for a in &mut out.actions {
        a.annual_cost *= k;
        a.capital_cost *= k;
    }
    for i in &mut out.instruments {
        i.fixed_annual_cost *= k;
    }
    out
}
