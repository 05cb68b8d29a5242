//! The teacher: finds the best admissible FSC within a family (or proves
//! none exists) via quotient-MDP abstraction refinement, counterexample
//! pruning over a conflict store, or a time-sliced hybrid of both.

use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::checker::{
    check_constraint, eval_mc, expected_visits, solve_mdp_masked, CheckError, MdpPolicy,
    ValueVector,
};
use crate::family::{
    extract_fsc, induced_mc, policy_consistency, quotient_mdp, ConsistencyInfo, FamilyError, Fsc,
    FscFamily, InducedMc, ProductState, QuotientMdp,
};
use crate::model::{Constraint, Mc, OptDir, Pomdp, PropKind, Relation, Specification};

#[derive(Debug, Error)]
pub enum InnerError {
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("counterexample search exhausted the product without violation")]
    CeInconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ar,
    Cegis,
    Hybrid,
}

/// Search mode: complete exploration keeps every member reachable,
/// incomplete restricts towards the abstraction policy.
#[derive(Debug, Clone, Copy)]
pub struct InnerConfig {
    pub method: Method,
    pub complete: bool,
    pub eps_rel: f64,
    pub eps_abs: f64,
    pub hybrid_slice: Duration,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            method: Method::Ar,
            complete: false,
            eps_rel: 0.0,
            eps_abs: 1e-9,
            hybrid_slice: Duration::from_secs(1),
        }
    }
}

/// Cooperative cancellation plus an optional wall-clock deadline.
#[derive(Debug, Clone)]
pub struct Budget {
    pub start: Instant,
    pub deadline: Option<Instant>,
    pub cancel: Arc<AtomicBool>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget {
            start: Instant::now(),
            deadline: None,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        let start = Instant::now();
        Budget {
            start,
            deadline: Some(start + timeout),
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn expired(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
            || self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// Running optimum of the objective value; `None` until the first
/// admissible FSC is found.
#[derive(Debug, Clone, Copy)]
pub struct RunningOptimum {
    pub direction: OptDir,
    pub value: Option<f64>,
    pub eps_rel: f64,
    pub eps_abs: f64,
}

impl RunningOptimum {
    pub fn trivial(direction: OptDir, eps_rel: f64, eps_abs: f64) -> Self {
        RunningOptimum {
            direction,
            value: None,
            eps_rel,
            eps_abs,
        }
    }

    /// Threshold a value must beat to count as an improvement.
    pub fn bound(&self) -> f64 {
        match (self.direction, self.value) {
            (OptDir::Max, None) => f64::NEG_INFINITY,
            (OptDir::Min, None) => f64::INFINITY,
            (OptDir::Max, Some(v)) => v * (1.0 + self.eps_rel) + self.eps_abs,
            (OptDir::Min, Some(v)) => v * (1.0 - self.eps_rel) - self.eps_abs,
        }
    }

    /// True iff `value` strictly improves on the incumbent (and clears
    /// the epsilon margin, when one is configured).
    pub fn beats(&self, value: f64) -> bool {
        // a non-finite objective (e.g. unreachable reward target) is never
        // admissible, so it can never become the incumbent
        if !value.is_finite() {
            return false;
        }
        let b = self.bound();
        match self.direction {
            OptDir::Max => {
                let strict = self.value.map_or(value > f64::NEG_INFINITY, |v| value > v);
                strict && (b == f64::NEG_INFINITY || value >= b)
            }
            OptDir::Min => {
                let strict = self.value.map_or(value < f64::INFINITY, |v| value < v);
                strict && (b == f64::INFINITY || value <= b)
            }
        }
    }

    /// True iff a family whose favourable-direction bound is `bound` may
    /// still contain an improving member. Unlike `beats`, an unbounded
    /// bound (e.g. +inf under maximisation) carries no information and
    /// cannot be used to prune.
    pub fn bound_improves(&self, bound: f64) -> bool {
        if bound.is_nan() {
            return true;
        }
        match self.direction {
            OptDir::Max if bound == f64::INFINITY => true,
            OptDir::Min if bound == f64::NEG_INFINITY => true,
            _ => self.beats(bound),
        }
    }

    /// The tightened constraint realising the running optimum, when finite.
    pub fn as_constraint(&self, kind: PropKind, label: &str) -> Option<Constraint> {
        let b = self.bound();
        if !b.is_finite() {
            return None;
        }
        Some(Constraint {
            kind,
            relation: match self.direction {
                OptDir::Max => Relation::Geq,
                OptDir::Min => Relation::Leq,
            },
            threshold: b,
            label: label.to_string(),
        })
    }
}

fn favourable(c: &Constraint) -> OptDir {
    match c.relation {
        Relation::Geq => OptDir::Max,
        Relation::Leq => OptDir::Min,
    }
}

/// Analysis context shared across one inner-loop run: the POMDP, the
/// specification with resolved target masks, and the shared quotient.
pub struct FamilyContext {
    pub pomdp: Pomdp,
    pub spec: Specification,
    pub constraint_targets: Vec<Vec<bool>>,
    pub objective_targets: Vec<bool>,
    pub quotient: QuotientMdp,
    pub root: FscFamily,
}

impl FamilyContext {
    pub fn new(pomdp: &Pomdp, spec: &Specification, family: FscFamily) -> Result<Self, InnerError> {
        let constraint_targets = spec
            .constraints
            .iter()
            .map(|c| pomdp.target_mask(&c.label))
            .collect::<Result<Vec<_>, _>>()?;
        let objective_targets = pomdp.target_mask(&spec.objective.label)?;
        let quotient = quotient_mdp(pomdp, &family);
        Ok(FamilyContext {
            pomdp: pomdp.clone(),
            spec: spec.clone(),
            constraint_targets,
            objective_targets,
            quotient,
            root: family,
        })
    }

    fn solve(
        &mut self,
        family: &FscFamily,
        targets: &[bool],
        direction: OptDir,
        kind: PropKind,
    ) -> Result<(ValueVector, MdpPolicy), CheckError> {
        self.quotient.set_targets(targets);
        let mask = self.quotient.action_mask(family);
        solve_mdp_masked(&self.quotient.mdp, direction, kind, Some(&mask))
    }

    /// Exact per-constraint values and objective value of one member.
    pub fn evaluate_member(&self, fsc: &Fsc) -> Result<MemberEvaluation, InnerError> {
        let mut product = induced_mc(
            &self.pomdp,
            fsc,
            &self.root.base.memory,
            &self.objective_targets,
        )?;
        let mut constraint_values = Vec::with_capacity(self.spec.constraints.len());
        for (c, mask) in self.spec.constraints.iter().zip(&self.constraint_targets) {
            product.set_targets(mask);
            let v = eval_mc(&product.mc, c.kind)?;
            constraint_values.push(v.at(product.mc.initial));
        }
        product.set_targets(&self.objective_targets);
        let v = eval_mc(&product.mc, self.spec.objective.kind)?;
        Ok(MemberEvaluation {
            constraint_values,
            objective_value: v.at(product.mc.initial),
        })
    }
}

#[derive(Debug, Clone)]
pub struct MemberEvaluation {
    pub constraint_values: Vec<f64>,
    pub objective_value: f64,
}

impl MemberEvaluation {
    pub fn violated(&self, spec: &Specification) -> Vec<usize> {
        spec.constraints
            .iter()
            .enumerate()
            .filter(|(i, c)| !check_constraint(self.constraint_values[*i], c))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Verdict of one family analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictTag {
    /// Some constraint is violated by every member.
    PrunedAllViolate(usize),
    /// Even the abstraction optimum cannot improve the running optimum.
    PrunedByOptimum,
    /// A consistent admissible member improving the optimum was found.
    ImprovingFscFound,
    /// Every member satisfies all constraints; objective still open.
    AllMembersSatisfy,
    Undecided,
}

pub struct FamilyAnalysis {
    pub tag: VerdictTag,
    /// Improving member plus its exact objective value.
    pub improving: Option<(Fsc, f64, MemberEvaluation)>,
    /// Optimum-constraint policy on the quotient.
    pub pi_star: Option<MdpPolicy>,
    /// Favourable-direction objective bound per product state.
    pub bound_fav: Option<ValueVector>,
    /// Adverse-direction objective bound per product state.
    pub bound_adv: Option<ValueVector>,
    pub consistency: Option<ConsistencyInfo>,
    /// Favourable objective bound at the initial state.
    pub init_bound: f64,
}

/// Analyses one family against the specification plus the running-optimum
/// constraint. Favourable-direction solves prune and search for consistent
/// policies; adverse-direction solves certify family-wide satisfaction.
pub fn analyze_family(
    ctx: &mut FamilyContext,
    family: &FscFamily,
    optimum: &RunningOptimum,
) -> Result<FamilyAnalysis, InnerError> {
    // singleton families are decided by direct evaluation
    if let Some(fsc) = family.sole_member() {
        let eval = ctx.evaluate_member(&fsc)?;
        let violated = eval.violated(&ctx.spec);
        let tag = if let Some(&i) = violated.first() {
            VerdictTag::PrunedAllViolate(i)
        } else if !optimum.beats(eval.objective_value) {
            VerdictTag::PrunedByOptimum
        } else {
            VerdictTag::ImprovingFscFound
        };
        let improving = if tag == VerdictTag::ImprovingFscFound {
            let value = eval.objective_value;
            Some((fsc, value, eval))
        } else {
            None
        };
        return Ok(FamilyAnalysis {
            tag,
            improving,
            pi_star: None,
            bound_fav: None,
            bound_adv: None,
            consistency: None,
            init_bound: f64::NAN,
        });
    }

    let mut all_satisfy = true;
    let mut candidate_policies: Vec<MdpPolicy> = Vec::new();
    for i in 0..ctx.spec.constraints.len() {
        let c = ctx.spec.constraints[i].clone();
        let targets = ctx.constraint_targets[i].clone();
        let (fav_values, fav_policy) = ctx.solve(family, &targets, favourable(&c), c.kind)?;
        if !check_constraint(fav_values.at(ctx.quotient.mdp.initial), &c) {
            return Ok(FamilyAnalysis {
                tag: VerdictTag::PrunedAllViolate(i),
                improving: None,
                pi_star: None,
                bound_fav: None,
                bound_adv: None,
                consistency: None,
                init_bound: f64::NAN,
            });
        }
        let adverse_dir = match favourable(&c) {
            OptDir::Max => OptDir::Min,
            OptDir::Min => OptDir::Max,
        };
        let (adv_values, _) = ctx.solve(family, &targets, adverse_dir, c.kind)?;
        if !check_constraint(adv_values.at(ctx.quotient.mdp.initial), &c) {
            all_satisfy = false;
        }
        candidate_policies.push(fav_policy);
    }

    // optimum constraint: favourable solve of the objective itself
    let obj = ctx.spec.objective.clone();
    let obj_targets = ctx.objective_targets.clone();
    let (bound_fav, pi_star) = ctx.solve(family, &obj_targets, obj.direction, obj.kind)?;
    let init_bound = bound_fav.at(ctx.quotient.mdp.initial);
    if !optimum.bound_improves(init_bound) {
        return Ok(FamilyAnalysis {
            tag: VerdictTag::PrunedByOptimum,
            improving: None,
            pi_star: Some(pi_star),
            bound_fav: Some(bound_fav),
            bound_adv: None,
            consistency: None,
            init_bound,
        });
    }
    let adverse_dir = match obj.direction {
        OptDir::Max => OptDir::Min,
        OptDir::Min => OptDir::Max,
    };
    let (bound_adv, _) = ctx.solve(family, &obj_targets, adverse_dir, obj.kind)?;

    // consistency of the optimum-constraint policy first, then of the
    // per-constraint policies
    let consistency = policy_consistency(family, &ctx.quotient, &pi_star);
    let mut improving = None;
    let check = |info: &ConsistencyInfo,
                     ctx: &FamilyContext|
     -> Result<Option<(Fsc, f64, MemberEvaluation)>, InnerError> {
        if !info.is_consistent() {
            return Ok(None);
        }
        let fsc = extract_fsc(family, info)?;
        let eval = ctx.evaluate_member(&fsc)?;
        if eval.violated(&ctx.spec).is_empty() && optimum.beats(eval.objective_value) {
            let value = eval.objective_value;
            Ok(Some((fsc, value, eval)))
        } else {
            Ok(None)
        }
    };
    if let Some(found) = check(&consistency, ctx)? {
        improving = Some(found);
    } else {
        for policy in &candidate_policies {
            let info = policy_consistency(family, &ctx.quotient, policy);
            if let Some(found) = check(&info, ctx)? {
                improving = Some(found);
                break;
            }
        }
    }

    let tag = if improving.is_some() {
        VerdictTag::ImprovingFscFound
    } else if all_satisfy && !ctx.spec.constraints.is_empty() {
        VerdictTag::AllMembersSatisfy
    } else {
        VerdictTag::Undecided
    };
    Ok(FamilyAnalysis {
        tag,
        improving,
        pi_star: Some(pi_star),
        bound_fav: Some(bound_fav),
        bound_adv: Some(bound_adv),
        consistency: Some(consistency),
        init_bound,
    })
}

/// Per-parameter significance of the inconsistencies of `policy`:
/// Q-value advantage of the policy's choice over the best alternative
/// chosen elsewhere for the same parameter, weighted by expected visit
/// frequency. Nonnegative for maximisation; for minimisation the scores
/// are nonpositive, and arg-max selection still picks the inconsistency
/// whose forced resolution distorts the policy least.
pub fn significances(
    ctx: &QuotientMdp,
    family: &FscFamily,
    policy: &MdpPolicy,
    values: &ValueVector,
    consistency: &ConsistencyInfo,
) -> Result<Vec<f64>, CheckError> {
    let chain = ctx.mdp.induced_chain(policy);
    let visits = expected_visits(&chain)?;
    let mask = ctx.action_mask(family);
    let reachable = ctx.reachable(&mask);
    let mut sig = vec![0.0; family.num_params()];
    for i in 0..ctx.states.len() {
        if !reachable[i] || ctx.mdp.targets[i] {
            continue;
        }
        let Some(p) = ctx.param_of_state[i] else {
            continue;
        };
        if consistency.is_param_consistent(p) {
            continue;
        }
        let own_opt = ctx.option_of_action[i][policy.choice[i]];
        let own_q = ctx
            .mdp
            .q_value(values.kind, &values.values, i, policy.choice[i]);
        // best alternative among the options chosen elsewhere for p
        let mut alt: Option<f64> = None;
        for (a, &opt) in ctx.option_of_action[i].iter().enumerate() {
            if opt == own_opt || !consistency.chosen[p].contains(&opt) {
                continue;
            }
            let q = ctx.mdp.q_value(values.kind, &values.values, i, a);
            alt = Some(match alt {
                None => q,
                Some(b) => b.max(q),
            });
        }
        let Some(alt) = alt else { continue };
        let term = visits.at(i) * (own_q - alt);
        if !term.is_nan() {
            sig[p] += term;
        }
    }
    Ok(sig)
}

/// Splits a family at the most significant inconsistent parameter: each
/// policy-chosen option becomes a singleton child, the unchosen remainder
/// one more child.
pub fn split(
    family: &FscFamily,
    consistency: &ConsistencyInfo,
    significance: &[f64],
) -> Result<Vec<FscFamily>, FamilyError> {
    let inconsistent = consistency.inconsistent_params();
    debug_assert!(!inconsistent.is_empty());
    let p = *inconsistent
        .iter()
        .max_by(|&&a, &&b| {
            significance[a]
                .total_cmp(&significance[b])
                .then(b.cmp(&a)) // prefer the lowest index on ties
        })
        .expect("split requires an inconsistent parameter");
    let chosen = &consistency.chosen[p];
    let mut children = Vec::with_capacity(chosen.len() + 1);
    for &o in chosen {
        children.push(family.restrict(p, &[o])?);
    }
    let remainder: Vec<usize> = family.domains[p]
        .iter()
        .copied()
        .filter(|o| !chosen.contains(o))
        .collect();
    if !remainder.is_empty() {
        children.push(family.restrict(p, &remainder)?);
    }
    Ok(children)
}

/// Incomplete refinement: fixes consistent parameters (including perfectly
/// observable ones) to the policy's choice and drops unchosen options from
/// inconsistent parameters. Unreachable parameters keep their domains.
pub fn incomplete_restrict(family: &FscFamily, consistency: &ConsistencyInfo) -> FscFamily {
    let mut out = family.clone();
    for (p, chosen) in consistency.chosen.iter().enumerate() {
        if !chosen.is_empty() {
            out = out
                .restrict(p, chosen)
                .expect("policy choices lie in the domain");
        }
    }
    out
}

/// A generalized counterexample: every member agreeing with `assignment`
/// on all listed parameters violates `constraint`.
#[derive(Debug, Clone)]
pub struct Conflict {
    pub assignment: Vec<(usize, usize)>,
    pub constraint: Constraint,
    /// Index into the specification constraints; `None` for the
    /// running-optimum or implicit-reachability constraint.
    pub spec_index: Option<usize>,
}

/// Counterexample: product-state subset whose rerouted sub-MC already
/// violates the constraint.
#[derive(Debug, Clone)]
pub struct Counterexample {
    /// Indices into the induced MC of the refuted member.
    pub states: Vec<usize>,
    /// Family parameters touched by the counterexample.
    pub relevant_params: Vec<usize>,
    pub sub_value: f64,
}

/// Builds and evaluates the rerouted sub-MC of Def-5 shape for a state
/// subset `c` of `product`.
fn rerouted_value(
    product: &InducedMc,
    targets_in_product: &[bool],
    c: &[usize],
    bound_of: &dyn Fn(usize) -> f64,
    constraint: &Constraint,
) -> Result<f64, InnerError> {
    let mut index: HashMap<usize, usize> = HashMap::new();
    for (i, &s) in c.iter().enumerate() {
        index.insert(s, i);
    }
    let n_c = c.len();
    // layout: C states, then one completion gadget per outside successor,
    // then s_top, s_bot
    let mut outside: Vec<usize> = Vec::new();
    let mut outside_index: HashMap<usize, usize> = HashMap::new();
    for &s in c {
        for &(t, p) in &product.mc.rows[s] {
            if p > 0.0 && !index.contains_key(&t) && !outside_index.contains_key(&t) {
                outside_index.insert(t, outside.len());
                outside.push(t);
            }
        }
    }
    let top = n_c + outside.len();
    let bot = top + 1;
    let total = bot + 1;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(total);
    let mut rewards: Vec<f64> = vec![0.0; total];
    let mut targets: Vec<bool> = vec![false; total];
    for (i, &s) in c.iter().enumerate() {
        let row = product.mc.rows[s]
            .iter()
            .map(|&(t, p)| match index.get(&t) {
                Some(&j) => (j, p),
                None => (n_c + outside_index[&t], p),
            })
            .collect();
        rows.push(row);
        rewards[i] = product.mc.rewards[s];
        targets[i] = targets_in_product[s];
    }
    for (g, &t) in outside.iter().enumerate() {
        let b = bound_of(t);
        let gadget = n_c + g;
        match constraint.kind {
            PropKind::Probability => {
                let b = b.clamp(0.0, 1.0);
                let mut row = Vec::new();
                if b > 0.0 {
                    row.push((top, b));
                }
                if b < 1.0 {
                    row.push((bot, 1.0 - b));
                }
                rows.push(row);
            }
            PropKind::ExpectedReward => {
                if b.is_finite() {
                    // enter s_top after accumulating the bound value
                    rewards[gadget] = b;
                    rows.push(vec![(top, 1.0)]);
                } else {
                    // infinite completion: absorb outside the target
                    rows.push(vec![(gadget, 1.0)]);
                }
            }
        }
    }
    rows.push(vec![(top, 1.0)]);
    rows.push(vec![(bot, 1.0)]);
    targets[top] = true;
    let sub = Mc {
        num_states: total,
        initial: index[&product.mc.initial],
        rows,
        rewards,
        targets,
    };
    let v = eval_mc(&sub, constraint.kind)?;
    Ok(v.at(sub.initial))
}

/// Greedy counterexample computation: breadth-first waves from the initial
/// product state, stopping at the first violating wave, then a reverse
/// greedy shrink pass.
pub fn compute_ce(
    product: &InducedMc,
    constraint_targets: &[bool],
    constraint: &Constraint,
    bound_of: &dyn Fn(ProductState) -> f64,
    family: &FscFamily,
    obs_of: &[usize],
) -> Result<Counterexample, InnerError> {
    let targets_in_product: Vec<bool> = product
        .states
        .iter()
        .map(|ps| match *ps {
            ProductState::Bootstrap => false,
            ProductState::Pair { state, .. } => constraint_targets[state],
        })
        .collect();
    let bound_idx = |i: usize| bound_of(product.states[i]);

    // BFS layers over the induced MC
    let n = product.mc.num_states;
    let mut dist = vec![usize::MAX; n];
    let mut order: Vec<usize> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    dist[product.mc.initial] = 0;
    queue.push_back(product.mc.initial);
    while let Some(s) = queue.pop_front() {
        order.push(s);
        for &(t, p) in &product.mc.rows[s] {
            if p > 0.0 && dist[t] == usize::MAX {
                dist[t] = dist[s] + 1;
                queue.push_back(t);
            }
        }
    }

    // violation with a small slack so solver residue near the threshold
    // never produces a conflict that is not mathematically justified
    let slack = 1e-9 * (1.0 + constraint.threshold.abs());
    let clearly_violates = |v: f64| match constraint.relation {
        Relation::Geq => v < constraint.threshold - slack,
        Relation::Leq => v > constraint.threshold + slack,
    };

    let mut c: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut value = f64::NAN;
    let mut violating = false;
    while cursor < order.len() {
        let wave = dist[order[cursor]];
        while cursor < order.len() && dist[order[cursor]] == wave {
            c.push(order[cursor]);
            cursor += 1;
        }
        value = rerouted_value(product, &targets_in_product, &c, &bound_idx, constraint)?;
        if clearly_violates(value) {
            violating = true;
            break;
        }
    }
    if !violating {
        // the member violates only within the slack margin: keep the
        // whole reachable set, where the sub-MC value is exact
        value = rerouted_value(product, &targets_in_product, &c, &bound_idx, constraint)?;
        if check_constraint(value, constraint) {
            return Err(InnerError::CeInconsistent);
        }
    }

    // greedy shrink, reverse insertion order, keeping the violation
    let mut keep: Vec<usize> = c.clone();
    for pos in (0..keep.len()).rev() {
        if keep[pos] == product.mc.initial {
            continue;
        }
        let trial: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != pos)
            .map(|(_, &s)| s)
            .collect();
        let v = rerouted_value(product, &targets_in_product, &trial, &bound_idx, constraint)?;
        if clearly_violates(v) {
            keep = trial;
            value = v;
        }
    }

    let mut relevant: Vec<usize> = Vec::new();
    for &i in &keep {
        if let ProductState::Pair { state, node } = product.states[i] {
            let z = obs_of[state];
            if let Some(p) = family.base.param_of[node][z] {
                if !relevant.contains(&p) {
                    relevant.push(p);
                }
            }
        }
    }
    relevant.sort_unstable();
    Ok(Counterexample {
        states: keep,
        relevant_params: relevant,
        sub_value: value,
    })
}

/// Turns a counterexample for `candidate` into a conflict. In incomplete
/// mode, parameters on which the candidate agrees with the (unique)
/// abstraction-policy choice are dropped from the conflict.
pub fn generalize_ce(
    ce: &Counterexample,
    candidate: &[usize],
    constraint: &Constraint,
    spec_index: Option<usize>,
    root_consistency: Option<&ConsistencyInfo>,
) -> Conflict {
    let assignment = ce
        .relevant_params
        .iter()
        .copied()
        .filter(|&p| match root_consistency {
            Some(info) => !(info.chosen[p].len() == 1 && info.chosen[p][0] == candidate[p]),
            None => true,
        })
        .map(|p| (p, candidate[p]))
        .collect();
    Conflict {
        assignment,
        constraint: constraint.clone(),
        spec_index,
    }
}

/// Accumulated conflicts plus backtracking candidate enumeration.
#[derive(Debug, Default)]
pub struct ConflictStore {
    pub conflicts: Vec<Conflict>,
}

impl ConflictStore {
    pub fn matches(&self, conflict: &Conflict, assignment: &[usize]) -> bool {
        conflict
            .assignment
            .iter()
            .all(|&(p, o)| assignment[p] == o)
    }

    pub fn refutes(&self, assignment: &[usize]) -> bool {
        self.conflicts.iter().any(|c| self.matches(c, assignment))
    }

    /// Lowest lexicographic member of `family` (by parameter index, then
    /// option index) refuted by no stored conflict.
    pub fn next_candidate(&self, family: &FscFamily) -> Option<Vec<usize>> {
        let n = family.num_params();
        // conflicts bucketed by the last parameter they mention, so each
        // is tested as soon as all its literals are assigned
        let mut buckets: Vec<Vec<&Conflict>> = vec![Vec::new(); n];
        for c in &self.conflicts {
            match c.assignment.iter().map(|&(p, _)| p).max() {
                Some(p) => buckets[p].push(c),
                None => return None, // empty conflict refutes everything
            }
        }
        if n == 0 {
            return Some(Vec::new());
        }
        let mut assignment: Vec<usize> = Vec::with_capacity(n);
        let mut cursor: Vec<usize> = Vec::with_capacity(n);
        let mut pos = 0usize;
        loop {
            let d = assignment.len();
            if pos < family.domains[d].len() {
                assignment.push(family.domains[d][pos]);
                cursor.push(pos);
                let blocked = buckets[d]
                    .iter()
                    .any(|c| c.assignment.iter().all(|&(p, o)| assignment[p] == o));
                if blocked {
                    assignment.pop();
                    pos = cursor.pop().unwrap() + 1;
                    continue;
                }
                if assignment.len() == n {
                    return Some(assignment);
                }
                pos = 0;
            } else if assignment.is_empty() {
                return None;
            } else {
                assignment.pop();
                pos = cursor.pop().unwrap() + 1;
            }
        }
    }
}

fn safe_default(constraint: &Constraint) -> f64 {
    match (constraint.kind, constraint.relation) {
        (PropKind::Probability, Relation::Geq) => 1.0,
        (PropKind::Probability, Relation::Leq) => 0.0,
        (PropKind::ExpectedReward, Relation::Geq) => f64::INFINITY,
        (PropKind::ExpectedReward, Relation::Leq) => 0.0,
    }
}

fn bound_map(quotient: &QuotientMdp, values: &ValueVector) -> HashMap<ProductState, f64> {
    quotient
        .states
        .iter()
        .zip(&values.values)
        .map(|(&ps, &v)| (ps, v))
        .collect()
}

/// Per-run state of the counterexample-guided engine: one favourable
/// bound vector per constraint (over the quotient product), one for the
/// objective, and one for the implicit almost-sure-reachability check.
pub struct CegisEngine {
    pub store: ConflictStore,
    constraint_bounds: Vec<HashMap<ProductState, f64>>,
    objective_bound: HashMap<ProductState, f64>,
    reach_bound: HashMap<ProductState, f64>,
    root_consistency: Option<ConsistencyInfo>,
    pub exhausted: bool,
}

pub enum CegisStep {
    Improving(Fsc, f64, MemberEvaluation),
    Refuted(usize),
    Exhausted,
}

impl CegisEngine {
    pub fn new(ctx: &mut FamilyContext, complete: bool) -> Result<Self, InnerError> {
        let family = ctx.root.clone();
        let mut constraint_bounds = Vec::new();
        for i in 0..ctx.spec.constraints.len() {
            let c = ctx.spec.constraints[i].clone();
            let targets = ctx.constraint_targets[i].clone();
            let (v, _) = ctx.solve(&family, &targets, favourable(&c), c.kind)?;
            constraint_bounds.push(bound_map(&ctx.quotient, &v));
        }
        let obj = ctx.spec.objective.clone();
        let targets = ctx.objective_targets.clone();
        let (v, pi) = ctx.solve(&family, &targets, obj.direction, obj.kind)?;
        let objective_bound = bound_map(&ctx.quotient, &v);
        let (pr, _) = ctx.solve(&family, &targets, OptDir::Max, PropKind::Probability)?;
        let reach_bound = bound_map(&ctx.quotient, &pr);
        let root_consistency = if complete {
            None
        } else {
            Some(policy_consistency(&family, &ctx.quotient, &pi))
        };
        Ok(CegisEngine {
            store: ConflictStore::default(),
            constraint_bounds,
            objective_bound,
            reach_bound,
            root_consistency,
            exhausted: false,
        })
    }

    /// One candidate: enumerate, evaluate exactly, learn a conflict or
    /// report an improving member.
    pub fn step(
        &mut self,
        ctx: &FamilyContext,
        optimum: &RunningOptimum,
    ) -> Result<CegisStep, InnerError> {
        let family = &ctx.root;
        let Some(candidate) = self.store.next_candidate(family) else {
            self.exhausted = true;
            return Ok(CegisStep::Exhausted);
        };
        let fsc = family.member(&candidate);
        let mut product = induced_mc(
            &ctx.pomdp,
            &fsc,
            &family.base.memory,
            &ctx.objective_targets,
        )?;
        let mut eval = MemberEvaluation {
            constraint_values: Vec::with_capacity(ctx.spec.constraints.len()),
            objective_value: f64::NAN,
        };
        for (c, mask) in ctx.spec.constraints.iter().zip(&ctx.constraint_targets) {
            product.set_targets(mask);
            let v = eval_mc(&product.mc, c.kind)?;
            eval.constraint_values.push(v.at(product.mc.initial));
        }
        product.set_targets(&ctx.objective_targets);
        let v = eval_mc(&product.mc, ctx.spec.objective.kind)?;
        eval.objective_value = v.at(product.mc.initial);

        let violated = eval.violated(&ctx.spec);
        let learn = |engine: &mut Self,
                     product: &mut InducedMc,
                     targets: &[bool],
                     constraint: &Constraint,
                     bounds: &HashMap<ProductState, f64>,
                     spec_index: Option<usize>|
         -> Result<usize, InnerError> {
            product.set_targets(targets);
            let default = safe_default(constraint);
            let bound_of = |ps: ProductState| bounds.get(&ps).copied().unwrap_or(default);
            let ce = compute_ce(
                product,
                targets,
                constraint,
                &bound_of,
                family,
                &ctx.pomdp.obs_of,
            )?;
            let conflict = generalize_ce(
                &ce,
                &candidate,
                constraint,
                spec_index,
                engine.root_consistency.as_ref(),
            );
            let size = ce.states.len();
            engine.store.conflicts.push(conflict);
            Ok(size)
        };

        if !violated.is_empty() {
            // one conflict per violated constraint
            let mut total = 0;
            for &i in &violated {
                let c = ctx.spec.constraints[i].clone();
                let targets = ctx.constraint_targets[i].clone();
                let bounds = std::mem::take(&mut self.constraint_bounds[i]);
                total += learn(self, &mut product, &targets, &c, &bounds, Some(i))?;
                self.constraint_bounds[i] = bounds;
            }
            return Ok(CegisStep::Refuted(total));
        }
        if optimum.beats(eval.objective_value) && eval.objective_value.is_finite() {
            // pin the improving member so it is never enumerated again
            let all: Vec<(usize, usize)> =
                candidate.iter().copied().enumerate().collect();
            let mut next = *optimum;
            next.value = Some(eval.objective_value);
            let pinned = next
                .as_constraint(ctx.spec.objective.kind, &ctx.spec.objective.label)
                .unwrap_or(Constraint {
                    kind: ctx.spec.objective.kind,
                    relation: Relation::Geq,
                    threshold: 0.0,
                    label: ctx.spec.objective.label.clone(),
                });
            self.store.conflicts.push(Conflict {
                assignment: all,
                constraint: pinned,
                spec_index: None,
            });
            let value = eval.objective_value;
            return Ok(CegisStep::Improving(fsc, value, eval));
        }
        // not an improvement: refute against the running-optimum
        // constraint, or the implicit reachability constraint when the
        // value is infinite or no incumbent exists yet
        let (constraint, bounds) = match optimum
            .as_constraint(ctx.spec.objective.kind, &ctx.spec.objective.label)
        {
            Some(c) if eval.objective_value.is_finite() => {
                (c, std::mem::take(&mut self.objective_bound))
            }
            _ => (
                Constraint {
                    kind: PropKind::Probability,
                    relation: Relation::Geq,
                    threshold: 1.0,
                    label: ctx.spec.objective.label.clone(),
                },
                std::mem::take(&mut self.reach_bound),
            ),
        };
        let targets = ctx.objective_targets.clone();
        let size = learn(self, &mut product, &targets, &constraint, &bounds, None)?;
        match constraint.kind {
            PropKind::Probability if constraint.threshold == 1.0 => self.reach_bound = bounds,
            _ => self.objective_bound = bounds,
        }
        Ok(CegisStep::Refuted(size))
    }
}

struct ArItem {
    priority: f64,
    seq: u64,
    family: FscFamily,
    analysis: FamilyAnalysis,
}

impl PartialEq for ArItem {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority && self.seq == other.seq
    }
}
impl Eq for ArItem {}
impl PartialOrd for ArItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ArItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Worklist-driven abstraction refinement, best quotient bound first.
pub struct ArEngine {
    heap: BinaryHeap<ArItem>,
    seq: u64,
    complete: bool,
    pub exhausted: bool,
}

pub enum ArStep {
    Improving(Fsc, f64, MemberEvaluation),
    Progress,
    Exhausted,
}

impl ArEngine {
    pub fn new(complete: bool) -> Self {
        ArEngine {
            heap: BinaryHeap::new(),
            seq: 0,
            complete,
            exhausted: false,
        }
    }

    fn priority(direction: OptDir, bound: f64) -> f64 {
        match direction {
            OptDir::Max => bound,
            OptDir::Min => -bound,
        }
    }

    /// Analyses `family` and queues it if undecided. Improving members
    /// tighten the optimum and re-queue the family for the rest of its
    /// members. Returns the first improving member found, if any.
    #[allow(clippy::too_many_arguments)]
    pub fn schedule(
        &mut self,
        ctx: &mut FamilyContext,
        family: FscFamily,
        optimum: &mut RunningOptimum,
        filter: Option<&ConflictStore>,
        stats: &mut InnerStats,
        root_info: &mut Option<RootInfo>,
        diag: &mut dyn FnMut(String),
    ) -> Result<Option<(Fsc, f64, MemberEvaluation)>, InnerError> {
        let family = family;
        let mut best_improving = None;
        loop {
            if let (Some(store), Some(fsc)) = (filter, family.sole_member()) {
                let assignment = assignment_of(&family, &fsc);
                if store.refutes(&assignment) {
                    stats.members_pruned += 1;
                    return Ok(best_improving);
                }
            }
            let analysis = analyze_family(ctx, &family, optimum)?;
            stats.families_analyzed += 1;
            if root_info.is_none() {
                *root_info = Some(RootInfo::from_analysis(ctx, &family, &analysis)?);
            }
            match analysis.tag {
                VerdictTag::PrunedAllViolate(i) => {
                    stats.members_pruned += family.member_count();
                    diag(format!(
                        "prune family of {} members: all violate constraint {}",
                        family.member_count(),
                        i
                    ));
                    return Ok(best_improving);
                }
                VerdictTag::PrunedByOptimum => {
                    stats.members_pruned += family.member_count();
                    diag(format!(
                        "prune family of {} members: bound {} cannot improve",
                        family.member_count(),
                        analysis.init_bound
                    ));
                    return Ok(best_improving);
                }
                VerdictTag::ImprovingFscFound => {
                    let (fsc, value, eval) =
                        analysis.improving.expect("improving verdict carries member");
                    optimum.value = Some(value);
                    diag(format!("improving member found, value {value}"));
                    // later finds are strictly better: keep the latest
                    best_improving = Some((fsc, value, eval));
                    // the remaining members may still improve further
                    continue;
                }
                VerdictTag::AllMembersSatisfy | VerdictTag::Undecided => {
                    let priority =
                        Self::priority(ctx.spec.objective.direction, analysis.init_bound);
                    self.heap.push(ArItem {
                        priority,
                        seq: self.seq,
                        family,
                        analysis,
                    });
                    self.seq += 1;
                    return Ok(best_improving);
                }
            }
        }
    }

    /// Pops the most promising family and refines it.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        ctx: &mut FamilyContext,
        optimum: &mut RunningOptimum,
        filter: Option<&ConflictStore>,
        stats: &mut InnerStats,
        root_info: &mut Option<RootInfo>,
        diag: &mut dyn FnMut(String),
    ) -> Result<ArStep, InnerError> {
        let Some(item) = self.heap.pop() else {
            self.exhausted = true;
            return Ok(ArStep::Exhausted);
        };
        // the optimum may have tightened since this item was queued
        if !optimum.bound_improves(item.analysis.init_bound) {
            stats.members_pruned += item.family.member_count();
            return Ok(ArStep::Progress);
        }
        let consistency = item
            .analysis
            .consistency
            .clone()
            .expect("queued families carry consistency info");
        let children = if !self.complete {
            let restricted = incomplete_restrict(&item.family, &consistency);
            if restricted.domains != item.family.domains {
                vec![restricted]
            } else {
                self.split_children(ctx, &item, &consistency)?
            }
        } else {
            self.split_children(ctx, &item, &consistency)?
        };
        let mut improving = None;
        for child in children {
            if let Some(found) =
                self.schedule(ctx, child, optimum, filter, stats, root_info, diag)?
            {
                improving = Some(found);
            }
        }
        Ok(match improving {
            Some((fsc, value, eval)) => ArStep::Improving(fsc, value, eval),
            None => ArStep::Progress,
        })
    }

    fn split_children(
        &self,
        ctx: &mut FamilyContext,
        item: &ArItem,
        consistency: &ConsistencyInfo,
    ) -> Result<Vec<FscFamily>, InnerError> {
        if !consistency.is_consistent() {
            let values = item
                .analysis
                .bound_fav
                .as_ref()
                .expect("queued families carry bounds");
            ctx.quotient.set_targets(&ctx.objective_targets.clone());
            let sig = significances(
                &ctx.quotient,
                &item.family,
                item.analysis.pi_star.as_ref().expect("policy present"),
                values,
                consistency,
            )?;
            return Ok(split(&item.family, consistency, &sig)?);
        }
        // the objective policy is consistent but its member is not
        // admissible: fall back to a constraint policy, then to a plain
        // binary split
        for i in 0..ctx.spec.constraints.len() {
            let c = ctx.spec.constraints[i].clone();
            let targets = ctx.constraint_targets[i].clone();
            let (_, policy) = ctx.solve(&item.family, &targets, favourable(&c), c.kind)?;
            let info = policy_consistency(&item.family, &ctx.quotient, &policy);
            if !info.is_consistent() {
                let sig = vec![0.0; item.family.num_params()];
                return Ok(split(&item.family, &info, &sig)?);
            }
        }
        for (p, dom) in item.family.domains.iter().enumerate() {
            if dom.len() > 1 {
                let first = item.family.restrict(p, &dom[..1])?;
                let rest = item.family.restrict(p, &dom[1..])?;
                return Ok(vec![first, rest]);
            }
        }
        // fully refined yet undecided: nothing left to do
        Ok(Vec::new())
    }
}

pub fn assignment_of(family: &FscFamily, fsc: &Fsc) -> Vec<usize> {
    family
        .base
        .params
        .iter()
        .map(|param| {
            let pair = (
                fsc.action[param.node][param.obs],
                fsc.update[param.node][param.obs],
            );
            param
                .options
                .iter()
                .position(|&o| o == pair)
                .expect("member option present in parameter options")
        })
        .collect()
}

/// Diagnostics of the first (root) family analysis, kept for the outer
/// loop's injection heuristics.
pub struct RootInfo {
    pub pi_star: Option<MdpPolicy>,
    pub bound_fav: Option<ValueVector>,
    pub consistency: Option<ConsistencyInfo>,
    pub significance: Vec<f64>,
    pub init_bound: f64,
}

impl RootInfo {
    fn from_analysis(
        ctx: &mut FamilyContext,
        family: &FscFamily,
        analysis: &FamilyAnalysis,
    ) -> Result<Self, InnerError> {
        let significance = match (&analysis.pi_star, &analysis.bound_fav, &analysis.consistency)
        {
            (Some(pi), Some(values), Some(info)) => {
                ctx.quotient.set_targets(&ctx.objective_targets.clone());
                significances(&ctx.quotient, family, pi, values, info)?
            }
            _ => vec![0.0; family.num_params()],
        };
        Ok(RootInfo {
            pi_star: analysis.pi_star.clone(),
            bound_fav: analysis.bound_fav.clone(),
            consistency: analysis.consistency.clone(),
            significance,
            init_bound: analysis.init_bound,
        })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct InnerStats {
    pub families_analyzed: usize,
    pub members_pruned: u128,
    pub candidates_evaluated: usize,
    pub conflicts_learned: usize,
    pub incumbents: usize,
}

pub struct Incumbent {
    pub fsc: Fsc,
    pub value: f64,
    pub evaluation: MemberEvaluation,
}

pub struct InnerOutcome {
    pub incumbent: Option<Incumbent>,
    pub optimum: RunningOptimum,
    /// True iff the search space was exhausted, so the incumbent (or its
    /// absence) is conclusive for this family and mode.
    pub proof: bool,
    pub root: Option<RootInfo>,
    pub stats: InnerStats,
    /// Conflicts learned by the counterexample engine, if one ran.
    pub conflicts: Vec<Conflict>,
}

/// Searches `ctx.root` for the best admissible FSC improving on
/// `optimum`, with the configured method, reporting each incumbent via
/// `on_incumbent` as it is found.
pub fn inner_synthesize(
    ctx: &mut FamilyContext,
    cfg: &InnerConfig,
    mut optimum: RunningOptimum,
    budget: &Budget,
    on_incumbent: &mut dyn FnMut(&Fsc, f64, &MemberEvaluation),
    diag: &mut dyn FnMut(String),
) -> Result<InnerOutcome, InnerError> {
    let mut stats = InnerStats::default();
    let mut root_info: Option<RootInfo> = None;
    let mut incumbent: Option<Incumbent> = None;
    let record =
        |fsc: Fsc, value: f64, eval: MemberEvaluation, incumbent: &mut Option<Incumbent>,
         stats: &mut InnerStats,
         on_incumbent: &mut dyn FnMut(&Fsc, f64, &MemberEvaluation)| {
            stats.incumbents += 1;
            on_incumbent(&fsc, value, &eval);
            *incumbent = Some(Incumbent {
                fsc,
                value,
                evaluation: eval,
            });
        };

    let mut ar = (cfg.method != Method::Cegis).then(|| ArEngine::new(cfg.complete));
    let mut cegis = if cfg.method != Method::Ar {
        Some(CegisEngine::new(ctx, cfg.complete)?)
    } else {
        None
    };

    if let Some(ar) = ar.as_mut() {
        let root = ctx.root.clone();
        let filter_store = cegis.as_ref().map(|c| &c.store);
        if let Some((fsc, value, eval)) = ar.schedule(
            ctx,
            root,
            &mut optimum,
            filter_store,
            &mut stats,
            &mut root_info,
            diag,
        )? {
            record(fsc, value, eval, &mut incumbent, &mut stats, on_incumbent);
        }
    }

    let mut proof = false;
    'outer: loop {
        if budget.expired() {
            break;
        }
        match cfg.method {
            Method::Ar => {
                let ar = ar.as_mut().unwrap();
                match ar.step(ctx, &mut optimum, None, &mut stats, &mut root_info, diag)? {
                    ArStep::Exhausted => {
                        proof = true;
                        break;
                    }
                    ArStep::Improving(fsc, value, eval) => {
                        record(fsc, value, eval, &mut incumbent, &mut stats, on_incumbent);
                    }
                    ArStep::Progress => {}
                }
            }
            Method::Cegis => {
                let engine = cegis.as_mut().unwrap();
                match engine.step(ctx, &optimum)? {
                    CegisStep::Exhausted => {
                        proof = true;
                        break;
                    }
                    CegisStep::Improving(fsc, value, eval) => {
                        stats.candidates_evaluated += 1;
                        stats.conflicts_learned += 1;
                        optimum.value = Some(value);
                        record(fsc, value, eval, &mut incumbent, &mut stats, on_incumbent);
                    }
                    CegisStep::Refuted(size) => {
                        stats.candidates_evaluated += 1;
                        stats.conflicts_learned += 1;
                        diag(format!("conflict learned from a {size}-state counterexample"));
                    }
                }
            }
            Method::Hybrid => {
                // alternate fixed time slices, sharing the running optimum;
                // the conflict store filters singleton families on the
                // abstraction side
                for use_ar in [true, false] {
                    let slice_end = Instant::now() + cfg.hybrid_slice;
                    while Instant::now() < slice_end {
                        if budget.expired() {
                            break 'outer;
                        }
                        if use_ar {
                            let engine = ar.as_mut().unwrap();
                            if engine.exhausted {
                                break;
                            }
                            let store = cegis.as_ref().map(|c| &c.store);
                            match engine.step(
                                ctx,
                                &mut optimum,
                                store,
                                &mut stats,
                                &mut root_info,
                                diag,
                            )? {
                                ArStep::Exhausted => {
                                    proof = true;
                                    break 'outer;
                                }
                                ArStep::Improving(fsc, value, eval) => record(
                                    fsc,
                                    value,
                                    eval,
                                    &mut incumbent,
                                    &mut stats,
                                    on_incumbent,
                                ),
                                ArStep::Progress => {}
                            }
                        } else {
                            let engine = cegis.as_mut().unwrap();
                            if engine.exhausted {
                                break;
                            }
                            match engine.step(ctx, &optimum)? {
                                CegisStep::Exhausted => {
                                    proof = true;
                                    break 'outer;
                                }
                                CegisStep::Improving(fsc, value, eval) => {
                                    stats.candidates_evaluated += 1;
                                    stats.conflicts_learned += 1;
                                    optimum.value = Some(value);
                                    record(
                                        fsc,
                                        value,
                                        eval,
                                        &mut incumbent,
                                        &mut stats,
                                        on_incumbent,
                                    );
                                }
                                CegisStep::Refuted(size) => {
                                    stats.candidates_evaluated += 1;
                                    stats.conflicts_learned += 1;
                                    diag(format!(
                                        "conflict learned from a {size}-state counterexample"
                                    ));
                                }
                            }
                        }
                    }
                }
                let ar_done = ar.as_ref().is_some_and(|e| e.exhausted);
                let cegis_done = cegis.as_ref().is_some_and(|e| e.exhausted);
                if ar_done || cegis_done {
                    proof = true;
                    break;
                }
            }
        }
    }
    let conflicts = match &cegis {
        Some(c) => {
            stats.conflicts_learned = c.store.conflicts.len();
            c.store.conflicts.clone()
        }
        None => Vec::new(),
    };
    Ok(InnerOutcome {
        incumbent,
        optimum,
        proof,
        root: root_info,
        stats,
        conflicts,
    })
}
