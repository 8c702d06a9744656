//! P/C/L portfolio optimization over the revised tolerable losses.
//!
//! A portfolio selects preemptive actions and contingent instruments. Its annual
//! outlay is the annualized cost of the actions, the loaded premiums of the
//! instruments, and the appraisal-weighted loss that stays uncompensated:
//!
//! ```text
//! total = Σ P cost + Σ (fixed + coverage · residual EAL · loading) + factor · Σ uncompensated EAL
//! ```
//!
//! where `factor` is 1 in financial mode, the hardship multiplier in economic mode,
//! and the hardship multiplier times the loss's incidence-weighted equity factor in
//! social mode. A loss carries at most one instrument.
//!
//! Two evaluation routes exist on purpose: [`total_outlay`] walks the catalog types
//! directly and backs [`optimize_oracle`] and the reported outlays, while the search
//! in [`optimize`] runs on a compiled index form with a bounding function.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AppraisalConfig, AppraisalMode, SearchOptions};
use crate::error::{PclError, Result};
use crate::risk_model::{
    contingent_cost, effective_loading, residual_fraction, ActionCluster, ActionId, ContingentInstrument, GroupId,
    InstrumentId, LossCategory, LossId, LossItem, ResponseAction, Synergy,
};
use crate::step1_cover::{compare_selection, costs_tied, SolverMode};

/// Largest candidate pool [`optimize_oracle`] accepts.
pub const ORACLE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TolerableLoss {
    pub loss: LossItem,
    /// EAL after Step-1 ancillary benefits.
    pub eal: f64,
}

/// What-if constraints on the candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ForcedChoices {
    #[serde(default)]
    pub include: BTreeSet<String>,
    #[serde(default)]
    pub exclude: BTreeSet<String>,
}

impl ForcedChoices {
    pub fn is_empty(&self) -> bool {
        self.include.is_empty() && self.exclude.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortfolioProblem {
    pub losses: Vec<TolerableLoss>,
    /// Candidate P actions (Step-1 selections excluded).
    pub actions: Vec<ResponseAction>,
    pub instruments: Vec<ContingentInstrument>,
    pub synergies: Vec<Synergy>,
    /// Actions already in place; their synergies are always active.
    pub implemented: BTreeSet<ActionId>,
    pub forced: ForcedChoices,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Outlay {
    pub p_cost: f64,
    pub c_cost: f64,
    pub accepted_weighted_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub p_selected: BTreeSet<ActionId>,
    pub c_selected: BTreeSet<InstrumentId>,
    pub assignments: BTreeMap<LossId, ActionCluster>,
    pub outlay: Outlay,
    pub mode: SolverMode,
}

impl Portfolio {
    pub fn selection_count(&self) -> usize {
        self.p_selected.len() + self.c_selected.len()
    }

    /// All selected ids, sorted; the last tie-break key.
    pub fn selected_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.p_selected.iter().chain(&self.c_selected).map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

/// Incidence-weighted equity factor of a loss; exactly 1 when every weight is 1.
pub fn equity_factor(loss: &LossItem, config: &AppraisalConfig) -> f64 {
    if config.mode != AppraisalMode::Social {
        return 1.0;
    }
    let share: f64 = loss.incidence.values().sum();
    if share <= 0.0 {
        return 1.0;
    }
    let weighted: f64 = loss.incidence.iter().map(|(g, s)| s * config.weight(g)).sum();
    weighted / share
}

/// EAL scaled by Σ incidence·weight (weights are 1 outside social mode).
pub fn weighted_eal(loss: &LossItem, eal: f64, config: &AppraisalConfig) -> f64 {
    eal * equity_factor(loss, config)
}

/// Cost per unit of uncompensated EAL under the config's mode.
pub fn acceptance_factor(loss: &LossItem, config: &AppraisalConfig) -> f64 {
    match config.mode {
        AppraisalMode::Financial => 1.0,
        AppraisalMode::Economic => config.hardship_multiplier,
        AppraisalMode::Social => config.hardship_multiplier * equity_factor(loss, config),
    }
}

fn active_synergies<'a>(
    problem: &'a PortfolioProblem,
    instrument_id: &'a str,
    p_selected: &'a BTreeSet<ActionId>,
) -> impl Iterator<Item = &'a Synergy> + 'a {
    problem.synergies.iter().filter(move |s| {
        s.c_instrument == instrument_id && (p_selected.contains(&s.p_action) || problem.implemented.contains(&s.p_action))
    })
}

struct LossOutcome {
    residual_eal: f64,
    compensated_eal: f64,
    uncompensated_eal: f64,
    instrument: Option<(InstrumentId, f64)>,
}

/// Per-loss evaluation shared by [`selection_outlay`] and [`appraise`].
fn evaluate_losses(
    problem: &PortfolioProblem,
    p_selected: &BTreeSet<ActionId>,
    c_selected: &BTreeSet<InstrumentId>,
) -> Result<(Vec<LossOutcome>, f64)> {
    let actions: Vec<&ResponseAction> = p_selected
        .iter()
        .map(|id| {
            problem
                .actions
                .iter()
                .find(|a| &a.action_id == id)
                .ok_or_else(|| PclError::Reference(format!("portfolio selects unknown action {id}")))
        })
        .collect::<Result<_>>()?;
    let instruments: Vec<&ContingentInstrument> = c_selected
        .iter()
        .map(|id| {
            problem
                .instruments
                .iter()
                .find(|i| &i.instrument_id == id)
                .ok_or_else(|| PclError::Reference(format!("portfolio selects unknown instrument {id}")))
        })
        .collect::<Result<_>>()?;

    let mut outcomes = Vec::with_capacity(problem.losses.len());
    let mut c_cost = 0.0;
    for tl in &problem.losses {
        let loss_id = &tl.loss.loss_id;
        let reductions: Vec<f64> = actions.iter().map(|a| a.reduction(loss_id)).collect();
        let residual_eal = tl.eal * residual_fraction(&reductions)?;
        let covering: Vec<&&ContingentInstrument> = instruments.iter().filter(|i| &i.covers == loss_id).collect();
        let outcome = match covering.as_slice() {
            [] => LossOutcome {
                residual_eal,
                compensated_eal: 0.0,
                uncompensated_eal: residual_eal,
                instrument: None,
            },
            [instrument] => {
                let cost = contingent_cost(instrument, residual_eal, active_synergies(problem, &instrument.instrument_id, p_selected))?;
                c_cost += cost;
                LossOutcome {
                    residual_eal,
                    compensated_eal: instrument.coverage * residual_eal,
                    uncompensated_eal: (1.0 - instrument.coverage) * residual_eal,
                    instrument: Some((instrument.instrument_id.clone(), cost)),
                }
            }
            _ => {
                return Err(PclError::Consistency(format!(
                    "loss {loss_id} is covered by more than one selected instrument"
                )))
            }
        };
        outcomes.push(outcome);
    }
    // Instruments on losses outside the problem still cost their fixed part.
    for instrument in &instruments {
        if !problem.losses.iter().any(|tl| tl.loss.loss_id == instrument.covers) {
            c_cost += contingent_cost(instrument, 0.0, active_synergies(problem, &instrument.instrument_id, p_selected))?;
        }
    }
    Ok((outcomes, c_cost))
}

/// Outlay of a selection, without consulting any assignment map.
pub fn selection_outlay(
    problem: &PortfolioProblem,
    p_selected: &BTreeSet<ActionId>,
    c_selected: &BTreeSet<InstrumentId>,
    config: &AppraisalConfig,
) -> Result<Outlay> {
    let mut p_cost = 0.0;
    for id in p_selected {
        let action = problem
            .actions
            .iter()
            .find(|a| &a.action_id == id)
            .ok_or_else(|| PclError::Reference(format!("portfolio selects unknown action {id}")))?;
        p_cost += action.annualized_cost(config.discount_rate)?;
    }
    let (outcomes, c_cost) = evaluate_losses(problem, p_selected, c_selected)?;
    let accepted_weighted_loss: f64 = problem
        .losses
        .iter()
        .zip(&outcomes)
        .map(|(tl, o)| acceptance_factor(&tl.loss, config) * o.uncompensated_eal)
        .sum();
    Ok(Outlay {
        p_cost,
        c_cost,
        accepted_weighted_loss,
        total: p_cost + c_cost + accepted_weighted_loss,
    })
}

/// Outlay of a portfolio after checking that its assignments are consistent.
pub fn total_outlay(portfolio: &Portfolio, problem: &PortfolioProblem, config: &AppraisalConfig) -> Result<Outlay> {
    for tl in &problem.losses {
        let loss_id = &tl.loss.loss_id;
        let label = portfolio
            .assignments
            .get(loss_id)
            .ok_or_else(|| PclError::Consistency(format!("loss {loss_id} has no cluster assignment")))?;
        let covered = problem
            .instruments
            .iter()
            .any(|i| &i.covers == loss_id && portfolio.c_selected.contains(&i.instrument_id));
        if *label == ActionCluster::C && !covered {
            return Err(PclError::Consistency(format!(
                "loss {loss_id} is assigned to C but no selected instrument covers it"
            )));
        }
    }
    if let Some(extra) = portfolio
        .assignments
        .keys()
        .find(|l| !problem.losses.iter().any(|tl| &tl.loss.loss_id == *l))
    {
        return Err(PclError::Consistency(format!("assignment for loss {extra} outside the problem")));
    }
    selection_outlay(problem, &portfolio.p_selected, &portfolio.c_selected, config)
}

/// C if a selected instrument covers the loss, else P if a selected action reduces it, else L.
pub fn assign_clusters(portfolio: &Portfolio, problem: &PortfolioProblem) -> BTreeMap<LossId, ActionCluster> {
    cluster_labels(problem, &portfolio.p_selected, &portfolio.c_selected)
}

fn cluster_labels(
    problem: &PortfolioProblem,
    p_selected: &BTreeSet<ActionId>,
    c_selected: &BTreeSet<InstrumentId>,
) -> BTreeMap<LossId, ActionCluster> {
    problem
        .losses
        .iter()
        .map(|tl| {
            let id = &tl.loss.loss_id;
            let insured = problem.instruments.iter().any(|i| &i.covers == id && c_selected.contains(&i.instrument_id));
            let reduced = problem.actions.iter().any(|a| p_selected.contains(&a.action_id) && a.reduction(id) > 0.0);
            let label = if insured {
                ActionCluster::C
            } else if reduced {
                ActionCluster::P
            } else {
                ActionCluster::L
            };
            (id.clone(), label)
        })
        .collect()
}

fn build_portfolio(
    problem: &PortfolioProblem,
    p_selected: BTreeSet<ActionId>,
    c_selected: BTreeSet<InstrumentId>,
    config: &AppraisalConfig,
    mode: SolverMode,
) -> Result<Portfolio> {
    let outlay = selection_outlay(problem, &p_selected, &c_selected, config)?;
    let assignments = cluster_labels(problem, &p_selected, &c_selected);
    Ok(Portfolio {
        p_selected,
        c_selected,
        assignments,
        outlay,
        mode,
    })
}

/// The portfolio that selects nothing: every loss accepted.
pub fn accept_all(problem: &PortfolioProblem, config: &AppraisalConfig) -> Result<Portfolio> {
    build_portfolio(problem, BTreeSet::new(), BTreeSet::new(), config, SolverMode::Exact)
}

fn check_forced(problem: &PortfolioProblem) -> Result<()> {
    let forced = &problem.forced;
    if let Some(id) = forced.include.intersection(&forced.exclude).next() {
        return Err(PclError::Consistency(format!("{id} is both forced in and forced out")));
    }
    for id in forced.include.iter().chain(&forced.exclude) {
        let known = problem.actions.iter().any(|a| &a.action_id == id)
            || problem.instruments.iter().any(|i| &i.instrument_id == id)
            || problem.implemented.contains(id);
        if !known {
            return Err(PclError::Reference(format!("forced choice names unknown action or instrument {id}")));
        }
    }
    let forced_instruments: Vec<&ContingentInstrument> =
        problem.instruments.iter().filter(|i| forced.include.contains(&i.instrument_id)).collect();
    for (k, a) in forced_instruments.iter().enumerate() {
        if forced_instruments[k + 1..].iter().any(|b| b.covers == a.covers) {
            return Err(PclError::Consistency(format!("more than one forced instrument covers loss {}", a.covers)));
        }
    }
    Ok(())
}

/// Compiled index form of a problem used by the search.
struct Compiled<'a> {
    ids: Vec<&'a str>,
    n_actions: usize,
    forced: Vec<bool>,
    /// annualized cost for actions, fixed annual cost for instruments
    fixed_cost: Vec<f64>,
    eal: Vec<f64>,
    accept: Vec<f64>,
    /// factor[a][l] = 1 − reduction of candidate action a on loss l
    factor: Vec<Vec<f64>>,
    /// per instrument (indexed from 0): covered loss index, if inside the problem
    covers: Vec<Option<usize>>,
    coverage: Vec<f64>,
    base_loading: Vec<f64>,
    /// per instrument: (item index of the P action or None when always active, discounted loading)
    synergies: Vec<Vec<(Option<usize>, f64)>>,
    /// per loss: instrument item indices covering it
    covering: Vec<Vec<usize>>,
}

impl<'a> Compiled<'a> {
    fn new(problem: &'a PortfolioProblem, config: &AppraisalConfig) -> Result<Self> {
        let forced = &problem.forced;
        let loss_index: BTreeMap<&str, usize> =
            problem.losses.iter().enumerate().map(|(i, tl)| (tl.loss.loss_id.as_str(), i)).collect();

        let mut instruments: Vec<&ContingentInstrument> = problem
            .instruments
            .iter()
            .filter(|i| !forced.exclude.contains(&i.instrument_id))
            .filter(|i| loss_index.contains_key(i.covers.as_str()) || forced.include.contains(&i.instrument_id))
            .collect();
        instruments.sort_by(|a, b| a.instrument_id.cmp(&b.instrument_id));

        let mut actions: Vec<&ResponseAction> = problem
            .actions
            .iter()
            .filter(|a| !problem.implemented.contains(&a.action_id) && !forced.exclude.contains(&a.action_id))
            .filter(|a| {
                forced.include.contains(&a.action_id)
                    || problem.losses.iter().any(|tl| tl.eal > 0.0 && a.reduction(&tl.loss.loss_id) > 0.0)
                    || problem.synergies.iter().any(|s| {
                        s.p_action == a.action_id && instruments.iter().any(|i| i.instrument_id == s.c_instrument)
                    })
            })
            .collect();
        actions.sort_by(|a, b| a.action_id.cmp(&b.action_id));

        let n_actions = actions.len();
        let mut ids = Vec::new();
        let mut fixed_cost = Vec::new();
        let mut is_forced = Vec::new();
        let mut factor = Vec::new();
        for a in &actions {
            ids.push(a.action_id.as_str());
            fixed_cost.push(a.annualized_cost(config.discount_rate)?);
            is_forced.push(forced.include.contains(&a.action_id));
            factor.push(problem.losses.iter().map(|tl| 1.0 - a.reduction(&tl.loss.loss_id)).collect());
        }
        let mut covers = Vec::new();
        let mut coverage = Vec::new();
        let mut base_loading = Vec::new();
        let mut synergies = Vec::new();
        let mut covering = vec![Vec::new(); problem.losses.len()];
        for (k, i) in instruments.iter().enumerate() {
            ids.push(i.instrument_id.as_str());
            fixed_cost.push(i.fixed_annual_cost);
            is_forced.push(forced.include.contains(&i.instrument_id));
            let l = loss_index.get(i.covers.as_str()).copied();
            if let Some(l) = l {
                covering[l].push(n_actions + k);
            }
            covers.push(l);
            coverage.push(i.coverage);
            base_loading.push(i.loading);
            let syn = problem
                .synergies
                .iter()
                .filter(|s| s.c_instrument == i.instrument_id)
                .filter_map(|s| {
                    if problem.implemented.contains(&s.p_action) {
                        Some((None, s.discounted_loading))
                    } else {
                        actions.iter().position(|a| a.action_id == s.p_action).map(|j| (Some(j), s.discounted_loading))
                    }
                })
                .collect();
            synergies.push(syn);
        }

        Ok(Compiled {
            ids,
            n_actions,
            forced: is_forced,
            fixed_cost,
            eal: problem.losses.iter().map(|tl| tl.eal).collect(),
            accept: problem.losses.iter().map(|tl| acceptance_factor(&tl.loss, config)).collect(),
            factor,
            covers,
            coverage,
            base_loading,
            synergies,
            covering,
        })
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn loading(&self, k: usize, sel: &[bool]) -> f64 {
        self.synergies[k]
            .iter()
            .filter(|(a, _)| a.is_none_or(|j| sel[j]))
            .fold(self.base_loading[k], |acc, &(_, d)| acc.min(d))
    }

    /// Total outlay of a full selection; None when two instruments share a loss.
    fn total(&self, sel: &[bool]) -> Option<f64> {
        let mut total = 0.0;
        for (j, _) in sel.iter().enumerate().filter(|(_, s)| **s) {
            total += self.fixed_cost[j];
        }
        for l in 0..self.eal.len() {
            let mut residual = self.eal[l];
            for a in 0..self.n_actions {
                if sel[a] {
                    residual *= self.factor[a][l];
                }
            }
            let mut chosen = self.covering[l].iter().filter(|&&j| sel[j]);
            match (chosen.next(), chosen.next()) {
                (None, _) => total += self.accept[l] * residual,
                (Some(&j), None) => {
                    let k = j - self.n_actions;
                    let cov = self.coverage[k];
                    total += cov * residual * self.loading(k, sel) + (1.0 - cov) * residual * self.accept[l];
                }
                (Some(_), Some(_)) => return None,
            }
        }
        Some(total)
    }

    /// Lower bound on any completion of `sel` whose first `k` items are decided.
    fn lower_bound(&self, k: usize, sel: &[bool]) -> f64 {
        let decided_on = |j: usize| j < k && sel[j];
        let possible = |j: usize| j >= k || sel[j];
        let mut bound: f64 = (0..k).filter(|&j| sel[j]).map(|j| self.fixed_cost[j]).sum();
        for l in 0..self.eal.len() {
            let mut residual = self.eal[l];
            for a in 0..self.n_actions {
                if possible(a) {
                    residual *= self.factor[a][l];
                }
            }
            let unit_via = |j: usize| {
                let i = j - self.n_actions;
                let best_loading = self.synergies[i]
                    .iter()
                    .filter(|(a, _)| a.is_none_or(possible))
                    .fold(self.base_loading[i], |acc, &(_, d)| acc.min(d));
                self.coverage[i] * best_loading + (1.0 - self.coverage[i]) * self.accept[l]
            };
            let unit = match self.covering[l].iter().find(|&&j| decided_on(j)) {
                Some(&j) => unit_via(j),
                None => self.covering[l]
                    .iter()
                    .filter(|&&j| j >= k)
                    .map(|&j| unit_via(j))
                    .fold(self.accept[l], f64::min),
            };
            bound += residual * unit;
        }
        bound
    }

    /// Whether selecting instrument item `j` would double-cover its loss.
    fn conflicts(&self, j: usize, sel: &[bool]) -> bool {
        if j < self.n_actions {
            return false;
        }
        match self.covers[j - self.n_actions] {
            Some(l) => self.covering[l].iter().any(|&o| o != j && sel[o]),
            None => false,
        }
    }

    fn ids_of(&self, sel: &[bool]) -> Vec<&'a str> {
        let mut ids: Vec<&str> = self.ids.iter().zip(sel).filter(|(_, s)| **s).map(|(id, _)| *id).collect();
        ids.sort_unstable();
        ids
    }

    fn compare(&self, a: (f64, &[bool]), b: (f64, &[bool])) -> Ordering {
        compare_selection(a.0, &self.ids_of(a.1), b.0, &self.ids_of(b.1))
    }

    fn split(&self, sel: &[bool]) -> (BTreeSet<ActionId>, BTreeSet<InstrumentId>) {
        let mut p = BTreeSet::new();
        let mut c = BTreeSet::new();
        for (j, _) in sel.iter().enumerate().filter(|(_, s)| **s) {
            if j < self.n_actions {
                p.insert(self.ids[j].to_string());
            } else {
                c.insert(self.ids[j].to_string());
            }
        }
        (p, c)
    }
}

struct BranchAndBound<'c, 'a> {
    c: &'c Compiled<'a>,
    sel: Vec<bool>,
    best: Option<(f64, Vec<bool>)>,
}

impl BranchAndBound<'_, '_> {
    fn visit(&mut self, k: usize) {
        if k == self.c.len() {
            if let Some(total) = self.c.total(&self.sel) {
                let better = match &self.best {
                    None => true,
                    Some((best_total, best_sel)) => self.c.compare((total, &self.sel), (*best_total, best_sel)) == Ordering::Less,
                };
                if better {
                    self.best = Some((total, self.sel.clone()));
                }
            }
            return;
        }
        if let Some((best_total, _)) = &self.best {
            let bound = self.c.lower_bound(k, &self.sel);
            if bound > *best_total && !costs_tied(bound, *best_total) {
                return;
            }
        }
        if !self.c.forced[k] {
            self.visit(k + 1);
        }
        if !self.c.conflicts(k, &self.sel) {
            self.sel[k] = true;
            self.visit(k + 1);
            self.sel[k] = false;
        }
    }
}

fn local_search(c: &Compiled, options: &SearchOptions) -> Option<Vec<bool>> {
    let n = c.len();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<(f64, Vec<bool>)> = None;

    for restart in 0..=options.restarts {
        let mut sel: Vec<bool> = c.forced.clone();
        if restart > 0 {
            for j in 0..n {
                if !sel[j] && rng.gen_bool(0.5) && !c.conflicts(j, &sel) {
                    sel[j] = true;
                }
            }
        }
        let Some(mut current) = c.total(&sel) else { continue };

        loop {
            let mut step: Option<(f64, Vec<bool>)> = None;
            for j in (0..n).filter(|&j| !c.forced[j]) {
                let mut next = sel.clone();
                if next[j] {
                    next[j] = false;
                } else {
                    // switching instruments on a loss counts as one move
                    if j >= c.n_actions {
                        if let Some(l) = c.covers[j - c.n_actions] {
                            for &o in &c.covering[l] {
                                if c.forced[o] && next[o] {
                                    continue;
                                }
                                next[o] = false;
                            }
                        }
                    }
                    if c.conflicts(j, &next) {
                        continue;
                    }
                    next[j] = true;
                }
                let Some(total) = c.total(&next) else { continue };
                let improves = match &step {
                    None => c.compare((total, &next), (current, &sel)) == Ordering::Less,
                    Some((t, s)) => c.compare((total, &next), (*t, s)) == Ordering::Less,
                };
                if improves {
                    step = Some((total, next));
                }
            }
            match step {
                Some((total, next)) => {
                    current = total;
                    sel = next;
                }
                None => break,
            }
        }

        let better = match &best {
            None => true,
            Some((t, s)) => c.compare((current, &sel), (*t, s)) == Ordering::Less,
        };
        if better {
            best = Some((current, sel));
        }
    }
    best.map(|(_, sel)| sel)
}

/// Cost-minimal portfolio: exact branch-and-bound up to `step2_exact_limit`
/// candidates, seeded steepest-descent local search with restarts above.
///
/// Candidates that cannot lower the outlay are dropped before the crossover test:
/// actions that reduce no problem loss and unlock no synergy, and instruments on
/// losses outside the problem (unless forced in).
pub fn optimize(problem: &PortfolioProblem, config: &AppraisalConfig, options: &SearchOptions) -> Result<Portfolio> {
    check_forced(problem)?;
    let compiled = Compiled::new(problem, config)?;
    let (mode, found) = if compiled.len() <= options.step2_exact_limit {
        let mut search = BranchAndBound {
            c: &compiled,
            sel: vec![false; compiled.len()],
            best: None,
        };
        search.visit(0);
        (SolverMode::Exact, search.best.map(|(_, sel)| sel))
    } else {
        (SolverMode::Heuristic, local_search(&compiled, options))
    };
    let sel = found.ok_or_else(|| PclError::Consistency("forced choices admit no consistent portfolio".into()))?;
    let (p, c) = compiled.split(&sel);
    build_portfolio(problem, p, c, config, mode)
}

/// Exhaustive enumeration over every subset of the (unpruned) candidate pool.
pub fn optimize_oracle(problem: &PortfolioProblem, config: &AppraisalConfig) -> Result<Portfolio> {
    check_forced(problem)?;
    let forced = &problem.forced;
    let mut actions: Vec<&str> = problem
        .actions
        .iter()
        .map(|a| a.action_id.as_str())
        .filter(|id| !problem.implemented.contains(*id) && !forced.exclude.contains(*id))
        .collect();
    actions.sort_unstable();
    let mut instruments: Vec<&str> = problem
        .instruments
        .iter()
        .map(|i| i.instrument_id.as_str())
        .filter(|id| !forced.exclude.contains(*id))
        .collect();
    instruments.sort_unstable();
    let size = actions.len() + instruments.len();
    if size > ORACLE_LIMIT {
        return Err(PclError::TooLarge { size, limit: ORACLE_LIMIT });
    }

    let mut best: Option<(Outlay, BTreeSet<String>, BTreeSet<String>)> = None;
    for mask in 0u64..(1u64 << size) {
        let bit = |j: usize| mask & (1 << j) != 0;
        let p: BTreeSet<String> = actions.iter().enumerate().filter(|(j, _)| bit(*j)).map(|(_, id)| id.to_string()).collect();
        let c: BTreeSet<String> = instruments
            .iter()
            .enumerate()
            .filter(|(j, _)| bit(actions.len() + j))
            .map(|(_, id)| id.to_string())
            .collect();
        let satisfies_forced = forced
            .include
            .iter()
            .all(|id| p.contains(id) || c.contains(id) || problem.implemented.contains(id));
        if !satisfies_forced {
            continue;
        }
        let outlay = match selection_outlay(problem, &p, &c, config) {
            Ok(o) => o,
            Err(PclError::Consistency(_)) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some((o, bp, bc)) => {
                let mut a_ids: Vec<&str> = p.iter().chain(&c).map(String::as_str).collect();
                a_ids.sort_unstable();
                let mut b_ids: Vec<&str> = bp.iter().chain(bc).map(String::as_str).collect();
                b_ids.sort_unstable();
                compare_selection(outlay.total, &a_ids, o.total, &b_ids) == Ordering::Less
            }
        };
        if better {
            best = Some((outlay, p, c));
        }
    }
    let (_, p, c) = best.ok_or_else(|| PclError::Consistency("forced choices admit no consistent portfolio".into()))?;
    build_portfolio(problem, p, c, config, SolverMode::Exact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAppraisal {
    pub loss_id: LossId,
    pub category: LossCategory,
    pub revised_eal: f64,
    pub residual_eal: f64,
    pub compensated_eal: f64,
    pub uncompensated_eal: f64,
    pub equity_factor: f64,
    pub cluster: ActionCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentUse {
    pub instrument_id: InstrumentId,
    pub covers: LossId,
    pub coverage: f64,
    pub base_loading: f64,
    pub effective_loading: f64,
    pub annual_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterTotals {
    pub cost: f64,
    /// EAL averted (P), expected compensation (C); zero for L.
    pub benefit: f64,
}

/// Financial, economic and social view of one portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appraisal {
    pub losses: Vec<LossAppraisal>,
    pub instruments: Vec<InstrumentUse>,
    /// Uncompensated EAL borne by each income group.
    pub group_burden: BTreeMap<GroupId, f64>,
    pub modes: BTreeMap<AppraisalMode, Outlay>,
    pub clusters: BTreeMap<ActionCluster, ClusterTotals>,
}

pub fn appraise(portfolio: &Portfolio, problem: &PortfolioProblem, config: &AppraisalConfig) -> Result<Appraisal> {
    let (outcomes, _) = evaluate_losses(problem, &portfolio.p_selected, &portfolio.c_selected)?;
    let social = config.with_mode(AppraisalMode::Social);

    let mut losses = Vec::with_capacity(outcomes.len());
    let mut group_burden: BTreeMap<GroupId, f64> = BTreeMap::new();
    let mut averted = 0.0;
    let mut compensated = 0.0;
    for (tl, o) in problem.losses.iter().zip(&outcomes) {
        for (group, share) in &tl.loss.incidence {
            *group_burden.entry(group.clone()).or_default() += share * o.uncompensated_eal;
        }
        averted += tl.eal - o.residual_eal;
        compensated += o.compensated_eal;
        losses.push(LossAppraisal {
            loss_id: tl.loss.loss_id.clone(),
            category: tl.loss.category,
            revised_eal: tl.eal,
            residual_eal: o.residual_eal,
            compensated_eal: o.compensated_eal,
            uncompensated_eal: o.uncompensated_eal,
            equity_factor: equity_factor(&tl.loss, &social),
            cluster: portfolio.assignments.get(&tl.loss.loss_id).copied().unwrap_or(ActionCluster::L),
        });
    }

    let mut instruments = Vec::new();
    for id in &portfolio.c_selected {
        let Some(instrument) = problem.instruments.iter().find(|i| &i.instrument_id == id) else { continue };
        let active = active_synergies(problem, id, &portfolio.p_selected);
        let effective = effective_loading(instrument, active)?;
        let cost = outcomes
            .iter()
            .filter_map(|o| o.instrument.as_ref())
            .find(|(iid, _)| iid == id)
            .map(|(_, c)| *c)
            .unwrap_or(instrument.fixed_annual_cost);
        instruments.push(InstrumentUse {
            instrument_id: id.clone(),
            covers: instrument.covers.clone(),
            coverage: instrument.coverage,
            base_loading: instrument.loading,
            effective_loading: effective,
            annual_cost: cost,
        });
    }

    let mut modes = BTreeMap::new();
    for mode in AppraisalMode::ALL {
        let outlay = selection_outlay(problem, &portfolio.p_selected, &portfolio.c_selected, &config.with_mode(mode))?;
        modes.insert(mode, outlay);
    }
    let outlay = modes[&config.mode];
    let clusters = BTreeMap::from([
        (ActionCluster::P, ClusterTotals { cost: outlay.p_cost, benefit: averted }),
        (ActionCluster::C, ClusterTotals { cost: outlay.c_cost, benefit: compensated }),
        (ActionCluster::L, ClusterTotals { cost: outlay.accepted_weighted_loss, benefit: 0.0 }),
    ]);

    Ok(Appraisal {
        losses,
        instruments,
        group_burden,
        modes,
        clusters,
    })
}
