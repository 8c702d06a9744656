//! Minimum-cost elimination of intolerable losses.
//!
//! This is a cost-effectiveness problem: the outcome (every intolerable loss at or
//! below the residual target ε) is fixed, and only the cost of reaching it is
//! minimized. Monetary magnitudes of the intolerable losses never enter the search.
//!
//! Up to `exact_limit` relevant actions are searched exactly by depth-first
//! branch-and-bound; larger catalogs use a greedy cover followed by drop and swap
//! exchanges, and the solution is labeled heuristic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::DEFAULT_STEP1_EXACT_LIMIT;
use crate::error::{PclError, Result};
use crate::risk_model::{residual_fraction, ActionId, LossId, ResponseAction};

/// Absolute slack on `residual ≤ ε`; 1 − 0.95 is not exactly 0.05 in binary.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-12;

/// Relative tolerance under which two costs count as tied.
pub const COST_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Exact,
    Heuristic,
}

impl SolverMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverMode::Exact => "exact",
            SolverMode::Heuristic => "heuristic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSolution {
    pub selected: BTreeSet<ActionId>,
    pub annualized_cost: f64,
    /// Composed residual fraction of each intolerable loss under `selected`.
    pub residuals: BTreeMap<LossId, f64>,
    pub feasible: bool,
    pub epsilon: f64,
    pub mode: SolverMode,
}

pub(crate) fn costs_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= COST_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Preference order on selections: lower cost, then fewer ids, then lexicographic ids.
pub(crate) fn compare_selection(a_cost: f64, a_ids: &[&str], b_cost: f64, b_ids: &[&str]) -> Ordering {
    if !costs_tied(a_cost, b_cost) {
        return a_cost.partial_cmp(&b_cost).unwrap_or(Ordering::Equal);
    }
    a_ids.len().cmp(&b_ids.len()).then_with(|| a_ids.cmp(b_ids))
}

struct CoverInstance<'a> {
    ids: Vec<&'a str>,
    costs: Vec<f64>,
    /// factors[j][i] = 1 − reduction of action j on intolerable loss i
    factors: Vec<Vec<f64>>,
    /// number of intolerable losses
    losses: usize,
    target: f64,
}

impl CoverInstance<'_> {
    fn residuals(&self, chosen: &[usize]) -> Vec<f64> {
        let mut res = vec![1.0; self.losses];
        for &j in chosen {
            for (r, f) in res.iter_mut().zip(&self.factors[j]) {
                *r *= f;
            }
        }
        res
    }

    fn feasible(&self, residuals: &[f64]) -> bool {
        residuals.iter().all(|&r| r <= self.target)
    }

    fn cost(&self, chosen: &[usize]) -> f64 {
        chosen.iter().map(|&j| self.costs[j]).sum()
    }

    fn sorted_ids(&self, chosen: &[usize]) -> Vec<&str> {
        let mut ids: Vec<&str> = chosen.iter().map(|&j| self.ids[j]).collect();
        ids.sort_unstable();
        ids
    }

    fn better(&self, a: &[usize], b: &[usize]) -> bool {
        compare_selection(self.cost(a), &self.sorted_ids(a), self.cost(b), &self.sorted_ids(b)) == Ordering::Less
    }
}

/// Solves Step 1 with the default exact/heuristic crossover.
pub fn eliminate_intolerable(
    intolerable: &BTreeSet<LossId>,
    actions: &[ResponseAction],
    epsilon: f64,
    discount_rate: f64,
) -> Result<CoverSolution> {
    eliminate_intolerable_with_limit(intolerable, actions, epsilon, discount_rate, DEFAULT_STEP1_EXACT_LIMIT)
}

pub fn eliminate_intolerable_with_limit(
    intolerable: &BTreeSet<LossId>,
    actions: &[ResponseAction],
    epsilon: f64,
    discount_rate: f64,
    exact_limit: usize,
) -> Result<CoverSolution> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(PclError::Domain(format!("epsilon {epsilon} must lie in [0, 1)")));
    }
    let losses: Vec<&LossId> = intolerable.iter().collect();

    // Only actions that reduce some intolerable loss can ever be part of a best cover.
    let mut relevant: Vec<&ResponseAction> = actions
        .iter()
        .filter(|a| losses.iter().any(|l| a.reduction(l) > 0.0))
        .collect();
    relevant.sort_by(|a, b| a.action_id.cmp(&b.action_id));

    let mut costs = Vec::with_capacity(relevant.len());
    let mut factors = Vec::with_capacity(relevant.len());
    for action in &relevant {
        costs.push(action.annualized_cost(discount_rate)?);
        let mut row = Vec::with_capacity(losses.len());
        for loss in &losses {
            row.push(residual_fraction(&[action.reduction(loss)])?);
        }
        factors.push(row);
    }
    let instance = CoverInstance {
        ids: relevant.iter().map(|a| a.action_id.as_str()).collect(),
        costs,
        factors,
        losses: losses.len(),
        target: epsilon + FEASIBILITY_TOLERANCE,
    };

    let mode = if relevant.len() <= exact_limit { SolverMode::Exact } else { SolverMode::Heuristic };
    let found = if losses.is_empty() {
        Some(Vec::new())
    } else {
        match mode {
            SolverMode::Exact => branch_and_bound(&instance),
            SolverMode::Heuristic => greedy_with_exchange(&instance),
        }
    };

    let (chosen, feasible) = match found {
        Some(chosen) => (chosen, true),
        None => (best_effort(&instance), false),
    };
    let residual_values = instance.residuals(&chosen);
    Ok(CoverSolution {
        selected: chosen.iter().map(|&j| instance.ids[j].to_string()).collect(),
        annualized_cost: instance.cost(&chosen),
        residuals: losses.iter().map(|l| (*l).clone()).zip(residual_values).collect(),
        feasible,
        epsilon,
        mode,
    })
}

fn branch_and_bound(inst: &CoverInstance) -> Option<Vec<usize>> {
    let n = inst.ids.len();
    let m = inst.losses;

    // suffix_best[k][i]: smallest residual of loss i reachable with actions k..n
    let mut suffix_best = vec![vec![1.0; m]; n + 1];
    for k in (0..n).rev() {
        for i in 0..m {
            suffix_best[k][i] = suffix_best[k + 1][i] * inst.factors[k][i];
        }
    }
    let mut suffix_min_cost = vec![f64::INFINITY; n + 1];
    for k in (0..n).rev() {
        suffix_min_cost[k] = suffix_min_cost[k + 1].min(inst.costs[k]);
    }

    struct Search<'s, 'a> {
        inst: &'s CoverInstance<'a>,
        suffix_best: Vec<Vec<f64>>,
        suffix_min_cost: Vec<f64>,
        best: Option<(Vec<usize>, f64)>,
    }

    impl Search<'_, '_> {
        fn prune_on_cost(&self, lower_bound: f64) -> bool {
            match &self.best {
                Some((_, best_cost)) => lower_bound > *best_cost && !costs_tied(lower_bound, *best_cost),
                None => false,
            }
        }

        fn visit(&mut self, k: usize, chosen: &mut Vec<usize>, cost: f64, residuals: &[f64]) {
            if self.inst.feasible(residuals) {
                // supersets cost at least as much and have more actions
                let better = match &self.best {
                    None => true,
                    Some((best, _)) => self.inst.better(chosen, best),
                };
                if better {
                    self.best = Some((chosen.clone(), cost));
                }
                return;
            }
            if k == self.inst.ids.len() {
                return;
            }
            if self.prune_on_cost(cost + self.suffix_min_cost[k]) {
                return;
            }
            let reachable = residuals
                .iter()
                .zip(&self.suffix_best[k])
                .all(|(r, s)| r * s <= self.inst.target);
            if !reachable {
                return;
            }

            let with: Vec<f64> = residuals.iter().zip(&self.inst.factors[k]).map(|(r, f)| r * f).collect();
            chosen.push(k);
            self.visit(k + 1, chosen, cost + self.inst.costs[k], &with);
            chosen.pop();
            self.visit(k + 1, chosen, cost, residuals);
        }
    }

    let mut search = Search {
        inst,
        suffix_best,
        suffix_min_cost,
        best: None,
    };
    search.visit(0, &mut Vec::new(), 0.0, &vec![1.0; m]);
    search.best.map(|(chosen, _)| chosen)
}

/// Σ over losses of how far (in log space) each residual sits above the target.
fn deficit(inst: &CoverInstance, residuals: &[f64]) -> f64 {
    residuals
        .iter()
        .map(|&r| if r <= inst.target { 0.0 } else { (r / inst.target).ln() })
        .sum()
}

fn greedy_with_exchange(inst: &CoverInstance) -> Option<Vec<usize>> {
    let n = inst.ids.len();
    let mut chosen: Vec<usize> = Vec::new();
    let mut residuals = inst.residuals(&chosen);

    while !inst.feasible(&residuals) {
        let current = deficit(inst, &residuals);
        let mut pick: Option<(usize, f64, f64)> = None;
        for j in (0..n).filter(|j| !chosen.contains(j)) {
            let after: Vec<f64> = residuals.iter().zip(&inst.factors[j]).map(|(r, f)| r * f).collect();
            let gain = current - deficit(inst, &after);
            if gain <= 0.0 {
                continue;
            }
            let ratio = if inst.costs[j] > 0.0 { gain / inst.costs[j] } else { f64::INFINITY };
            let replace = match pick {
                None => true,
                Some((_, best_ratio, best_gain)) => ratio > best_ratio || (ratio == best_ratio && gain > best_gain),
            };
            if replace {
                pick = Some((j, ratio, gain));
            }
        }
        let (j, _, _) = pick?;
        chosen.push(j);
        residuals = inst.residuals(&chosen);
    }

    loop {
        let mut changed = false;

        // drop: most expensive first
        let mut order = chosen.clone();
        order.sort_by(|&a, &b| inst.costs[b].total_cmp(&inst.costs[a]).then(a.cmp(&b)));
        for j in order {
            let without: Vec<usize> = chosen.iter().copied().filter(|&x| x != j).collect();
            if inst.feasible(&inst.residuals(&without)) {
                chosen = without;
                changed = true;
            }
        }

        // swap: replace one chosen action by a cheaper unchosen one
        'swap: for idx in 0..chosen.len() {
            for u in (0..n).filter(|u| !chosen.contains(u)) {
                let mut candidate = chosen.clone();
                candidate[idx] = u;
                if inst.feasible(&inst.residuals(&candidate)) && inst.better(&candidate, &chosen) {
                    chosen = candidate;
                    changed = true;
                    break 'swap;
                }
            }
        }

        if !changed {
            break;
        }
    }
    chosen.sort_unstable();
    Some(chosen)
}

/// Cheapest subset of all relevant actions that still attains their joint residuals.
fn best_effort(inst: &CoverInstance) -> Vec<usize> {
    let mut chosen: Vec<usize> = (0..inst.ids.len()).collect();
    let target = inst.residuals(&chosen);
    let mut order = chosen.clone();
    order.sort_by(|&a, &b| inst.costs[b].total_cmp(&inst.costs[a]).then(b.cmp(&a)));
    for j in order {
        let without: Vec<usize> = chosen.iter().copied().filter(|&x| x != j).collect();
        if inst.residuals(&without) == target {
            chosen = without;
        }
    }
    chosen
}

/// A tolerable loss after Step-1 ancillary benefits have been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisedLoss {
    pub loss_id: LossId,
    pub original_eal: f64,
    pub eal: f64,
    /// Revised EAL fell to zero; the loss leaves Step 2.
    pub fully_addressed: bool,
}

/// Applies the residual fraction of the Step-1 selection to each tolerable loss.
pub fn propagate_ancillary(
    selected: &BTreeSet<ActionId>,
    catalog: &[ResponseAction],
    tolerable_losses: &[(LossId, f64)],
) -> Result<Vec<RevisedLoss>> {
    let chosen: Vec<&ResponseAction> = catalog.iter().filter(|a| selected.contains(&a.action_id)).collect();
    if chosen.len() != selected.len() {
        let known: BTreeSet<&str> = chosen.iter().map(|a| a.action_id.as_str()).collect();
        let unknown: Vec<&str> = selected.iter().map(String::as_str).filter(|id| !known.contains(id)).collect();
        return Err(PclError::Reference(format!("selected actions not in catalog: {}", unknown.join(", "))));
    }
    tolerable_losses
        .iter()
        .map(|(loss_id, eal)| {
            let reductions: Vec<f64> = chosen.iter().map(|a| a.reduction(loss_id)).collect();
            let revised = eal * residual_fraction(&reductions)?;
            Ok(RevisedLoss {
                loss_id: loss_id.clone(),
                original_eal: *eal,
                eal: revised,
                fully_addressed: revised == 0.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_io::mini_scenario;
    use proptest::prelude::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    /// Exhaustive minimum over all 2^n subsets, independent of the search above.
    fn enumerate_min(intolerable: &BTreeSet<String>, actions: &[ResponseAction], eps: f64) -> Option<(f64, BTreeSet<String>)> {
        let n = actions.len();
        let mut best: Option<(f64, Vec<String>)> = None;
        for mask in 0u32..(1 << n) {
            let picked: Vec<&ResponseAction> = (0..n).filter(|j| mask & (1 << j) != 0).map(|j| &actions[j]).collect();
            let ok = intolerable.iter().all(|l| {
                let res: f64 = picked.iter().map(|a| 1.0 - a.reductions.get(l).copied().unwrap_or(0.0)).product();
                res <= eps + FEASIBILITY_TOLERANCE
            });
            if !ok {
                continue;
            }
            let cost: f64 = picked.iter().map(|a| a.annual_cost).sum();
            let mut ids: Vec<String> = picked.iter().map(|a| a.action_id.clone()).collect();
            ids.sort();
            let replace = match &best {
                None => true,
                Some((c, b)) => {
                    let a_ids: Vec<&str> = ids.iter().map(String::as_str).collect();
                    let b_ids: Vec<&str> = b.iter().map(String::as_str).collect();
                    compare_selection(cost, &a_ids, *c, &b_ids) == Ordering::Less
                }
            };
            if replace {
                best = Some((cost, ids));
            }
        }
        best.map(|(c, ids)| (c, ids.into_iter().collect()))
    }

    #[test]
    fn mini_cover_selects_a1() {
        let doc = mini_scenario();
        let sol = eliminate_intolerable(&set(&["L1"]), &doc.actions, 0.05, 0.05).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.selected, set(&["A1"]));
        assert_eq!(sol.annualized_cost, 10.0);
        assert!((sol.residuals["L1"] - 0.05).abs() < 1e-12);
        assert_eq!(sol.mode, SolverMode::Exact);
        let oracle = enumerate_min(&set(&["L1"]), &doc.actions, 0.05).unwrap();
        assert_eq!(oracle, (10.0, set(&["A1"])));
    }

    #[test]
    fn mini_cover_without_a1_is_infeasible() {
        let doc = mini_scenario();
        let rest: Vec<ResponseAction> = doc.actions.iter().filter(|a| a.action_id != "A1").cloned().collect();
        assert!(enumerate_min(&set(&["L1"]), &rest, 0.05).is_none());
        let sol = eliminate_intolerable(&set(&["L1"]), &rest, 0.05, 0.05).unwrap();
        assert!(!sol.feasible);
        assert_eq!(sol.selected, set(&["A2"]));
        assert!((sol.residuals["L1"] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_intolerable_set_is_trivially_feasible() {
        let doc = mini_scenario();
        let sol = eliminate_intolerable(&BTreeSet::new(), &doc.actions, 0.05, 0.05).unwrap();
        assert!(sol.feasible);
        assert!(sol.selected.is_empty());
        assert_eq!(sol.annualized_cost, 0.0);
    }

    #[test]
    fn epsilon_out_of_range_is_domain_error() {
        let doc = mini_scenario();
        let err = eliminate_intolerable(&set(&["L1"]), &doc.actions, 1.0, 0.05).unwrap_err();
        assert_eq!(err.code(), "domain");
    }

    #[test]
    fn ties_prefer_fewer_then_lexicographic() {
        let a = |id: &str, cost: f64, r: f64| ResponseAction {
            action_id: id.into(),
            description: String::new(),
            annual_cost: cost,
            capital_cost: 0.0,
            lifetime_years: None,
            reductions: [("L".to_string(), r)].into(),
        };
        // {X} and {Y,Z} both cost 6; {B} and {C} tie on everything but id
        let actions = vec![a("X", 6.0, 0.96), a("Y", 3.0, 0.8), a("Z", 3.0, 0.8)];
        let sol = eliminate_intolerable(&set(&["L"]), &actions, 0.05, 0.0).unwrap();
        assert_eq!(sol.selected, set(&["X"]));
        let actions = vec![a("C", 5.0, 0.99), a("B", 5.0, 0.99)];
        let sol = eliminate_intolerable(&set(&["L"]), &actions, 0.05, 0.0).unwrap();
        assert_eq!(sol.selected, set(&["B"]));
    }

    #[test]
    fn heuristic_mode_is_labeled_and_sound() {
        let doc = mini_scenario();
        let sol = eliminate_intolerable_with_limit(&set(&["L1"]), &doc.actions, 0.05, 0.05, 0).unwrap();
        assert_eq!(sol.mode, SolverMode::Heuristic);
        assert!(sol.feasible);
        assert_eq!(sol.selected, set(&["A1"]));
    }

    #[test]
    fn ancillary_benefits_compose() {
        let doc = mini_scenario();
        let revised = propagate_ancillary(&set(&["A1"]), &doc.actions, &[("L2".into(), 20.0)]).unwrap();
        assert_eq!(revised[0].eal, 10.0);
        let same = propagate_ancillary(&BTreeSet::new(), &doc.actions, &[("L2".into(), 20.0)]).unwrap();
        assert_eq!(same[0].eal, 20.0);
        let mut actions = doc.actions.clone();
        actions[2].reductions.insert("L2".into(), 0.5);
        let both = propagate_ancillary(&set(&["A1", "A3"]), &actions, &[("L2".into(), 20.0)]).unwrap();
        assert!((both[0].eal - 5.0).abs() < 1e-12);
        assert!(propagate_ancillary(&set(&["A9"]), &doc.actions, &[]).is_err());
    }

    #[test]
    fn fully_eliminated_tolerable_loss_is_marked() {
        let doc = mini_scenario();
        let mut actions = doc.actions.clone();
        actions[0].reductions.insert("L2".into(), 1.0);
        let revised = propagate_ancillary(&set(&["A1"]), &actions, &[("L2".into(), 20.0)]).unwrap();
        assert!(revised[0].fully_addressed);
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<ResponseAction>, usize)> {
        (1usize..=4, 1usize..=9).prop_flat_map(|(m, n)| {
            let action = (
                1u32..20,
                proptest::collection::vec(prop_oneof![Just(0.0), Just(0.5), Just(0.8), Just(0.95), Just(1.0), 0.0f64..1.0], m),
            );
            (proptest::collection::vec(action, n), Just(m)).prop_map(|(raw, m)| {
                let actions = raw
                    .into_iter()
                    .enumerate()
                    .map(|(j, (cost, rs))| ResponseAction {
                        action_id: format!("A{j:02}"),
                        description: String::new(),
                        annual_cost: f64::from(cost),
                        capital_cost: 0.0,
                        lifetime_years: None,
                        reductions: rs.into_iter().enumerate().map(|(i, r)| (format!("L{i}"), r)).collect(),
                    })
                    .collect();
                (actions, m)
            })
        })
    }

    proptest! {
        #[test]
        fn exact_cover_matches_enumeration((actions, m) in arb_instance(), eps in prop_oneof![Just(0.05), Just(0.2), 0.0f64..0.5]) {
            let intolerable: BTreeSet<String> = (0..m).map(|i| format!("L{i}")).collect();
            let sol = eliminate_intolerable(&intolerable, &actions, eps, 0.0).unwrap();
            match enumerate_min(&intolerable, &actions, eps) {
                Some((cost, ids)) => {
                    prop_assert!(sol.feasible);
                    prop_assert!((sol.annualized_cost - cost).abs() <= 1e-9 * cost.max(1.0));
                    prop_assert_eq!(sol.selected, ids);
                }
                None => prop_assert!(!sol.feasible),
            }
        }

        #[test]
        fn adding_an_action_never_raises_cover_cost((actions, m) in arb_instance(), eps in 0.0f64..0.5) {
            let intolerable: BTreeSet<String> = (0..m).map(|i| format!("L{i}")).collect();
            let fewer = &actions[..actions.len() - 1];
            let small = eliminate_intolerable(&intolerable, fewer, eps, 0.0).unwrap();
            let large = eliminate_intolerable(&intolerable, &actions, eps, 0.0).unwrap();
            if small.feasible {
                prop_assert!(large.feasible);
                prop_assert!(large.annualized_cost <= small.annualized_cost + 1e-9);
            }
        }

        #[test]
        fn ancillary_never_increases_eal(rs in proptest::collection::vec(0.0f64..=1.0, 1..5), eal in 0.0f64..1e6) {
            let actions: Vec<ResponseAction> = rs.iter().enumerate().map(|(j, &r)| ResponseAction {
                action_id: format!("A{j}"),
                description: String::new(),
                annual_cost: 1.0,
                capital_cost: 0.0,
                lifetime_years: None,
                reductions: [("L".to_string(), r)].into(),
            }).collect();
            let selected: BTreeSet<String> = actions.iter().map(|a| a.action_id.clone()).collect();
            let revised = propagate_ancillary(&selected, &actions, &[("L".into(), eal)]).unwrap();
            prop_assert!(revised[0].eal <= eal);
        }
    }
}
