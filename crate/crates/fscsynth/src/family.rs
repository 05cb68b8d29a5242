//! Deterministic FSCs, families of FSCs (full and reduced), induced Markov
//! chains, the quotient-MDP abstraction and consistency analysis of
//! abstraction policies.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::checker::{MdpPolicy, SparseMdp};
use crate::model::{Mc, Pomdp};

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("FSC selects action `{action}` which is disabled in state {state}")]
    DisabledAction { state: usize, action: String },
    #[error("parameter {param} restricted to an empty domain")]
    EmptyDomain { param: usize },
    #[error("cannot extract an FSC from an inconsistent policy (parameter {param})")]
    Inconsistent { param: usize },
}

/// Deterministic finite-state controller in Mealy form. `action[n][z]` is
/// the action taken in node `n` under observation `z`; `update[n][z]` the
/// successor node. The initial node is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fsc {
    pub nodes: usize,
    pub action: Vec<Vec<usize>>,
    pub update: Vec<Vec<usize>>,
}

/// Per-observation memory-node budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryModel {
    pub budget: Vec<usize>,
}

impl MemoryModel {
    pub fn uniform(num_obs: usize, k: usize) -> Self {
        MemoryModel {
            budget: vec![k; num_obs],
        }
    }

    /// Node count of the reduced family: max over observations.
    pub fn nodes(&self) -> usize {
        self.budget.iter().copied().max().unwrap_or(1)
    }
}

/// One family parameter `(node, observation)` with its full option list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyParam {
    pub node: usize,
    pub obs: usize,
    /// `(action, successor node)`, lexicographically ordered.
    pub options: Vec<(usize, usize)>,
}

/// Shared structure of a family: the parameter set and full option lists.
/// Subfamilies restrict domains without rebuilding this structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyBase {
    pub nodes: usize,
    pub memory: MemoryModel,
    pub params: Vec<FamilyParam>,
    /// `param_of[n][z]`, `None` when `n >= memory.budget[z]`.
    pub param_of: Vec<Vec<Option<usize>>>,
}

/// A (sub)family of deterministic FSCs: shared base plus per-parameter
/// allowed option subsets (indices into the base option lists).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FscFamily {
    pub base: Arc<FamilyBase>,
    pub domains: Vec<Vec<usize>>,
}

impl FscFamily {
    pub fn num_params(&self) -> usize {
        self.base.params.len()
    }

    /// Number of member FSCs (saturating at `u128::MAX`).
    pub fn member_count(&self) -> u128 {
        self.domains
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.len() as u128))
    }

    pub fn is_singleton(&self) -> bool {
        self.domains.iter().all(|d| d.len() == 1)
    }

    /// Restricts one parameter to a subset of its current domain.
    pub fn restrict(&self, param: usize, subdomain: &[usize]) -> Result<FscFamily, FamilyError> {
        if subdomain.is_empty() {
            return Err(FamilyError::EmptyDomain { param });
        }
        debug_assert!(subdomain.iter().all(|o| self.domains[param].contains(o)));
        let mut domains = self.domains.clone();
        let mut sub: Vec<usize> = subdomain.to_vec();
        sub.sort_unstable();
        sub.dedup();
        domains[param] = sub;
        Ok(FscFamily {
            base: Arc::clone(&self.base),
            domains,
        })
    }

    /// The unique member of a singleton family.
    pub fn sole_member(&self) -> Option<Fsc> {
        if !self.is_singleton() {
            return None;
        }
        let assignment: Vec<usize> = self.domains.iter().map(|d| d[0]).collect();
        Some(self.member(&assignment))
    }

    /// Builds the member selected by `assignment` (option index per
    /// parameter, into the base option lists). Entries for invalid
    /// `(n, z)` pairs mirror node 0, realising the update redirection.
    pub fn member(&self, assignment: &[usize]) -> Fsc {
        let base = &self.base;
        let num_obs = base.memory.budget.len();
        let mut action = vec![vec![0; num_obs]; base.nodes];
        let mut update = vec![vec![0; num_obs]; base.nodes];
        for (pid, param) in base.params.iter().enumerate() {
            let (a, next) = param.options[assignment[pid]];
            // redirect an update that is invalid at the *current* observation
            // of the successor; resolved per target state during product
            // construction, here we only store the raw choice
            action[param.node][param.obs] = a;
            update[param.node][param.obs] = next;
        }
        // invalid pairs behave as node 0
        for z in 0..num_obs {
            for n in base.memory.budget[z]..base.nodes {
                action[n][z] = action[0][z];
                update[n][z] = update[0][z];
            }
        }
        Fsc {
            nodes: base.nodes,
            action,
            update,
        }
    }
}

/// Family of all full k-FSCs: every observation gets `k` nodes and the
/// domains are the per-observation enabled actions crossed with all nodes.
pub fn make_full_family(pomdp: &Pomdp, k: usize) -> FscFamily {
    assert!(k >= 1);
    make_reduced_family(pomdp, &MemoryModel::uniform(pomdp.num_obs, k))
}

/// Reduced family for a memory model: parameters only for `n < mu(z)`;
/// memory updates invalid in a successor observation are redirected to
/// node 0 at product construction time.
pub fn make_reduced_family(pomdp: &Pomdp, memory: &MemoryModel) -> FscFamily {
    assert_eq!(memory.budget.len(), pomdp.num_obs);
    assert!(memory.budget.iter().all(|&b| b >= 1));
    let nodes = memory.nodes();
    let mut params = Vec::new();
    let mut param_of = vec![vec![None; pomdp.num_obs]; nodes];
    for n in 0..nodes {
        for z in 0..pomdp.num_obs {
            if n < memory.budget[z] {
                let actions = pomdp.actions_enabled_under_obs(z);
                let mut options = Vec::with_capacity(actions.len() * nodes);
                for &a in &actions {
                    for next in 0..nodes {
                        options.push((a, next));
                    }
                }
                param_of[n][z] = Some(params.len());
                params.push(FamilyParam {
                    node: n,
                    obs: z,
                    options,
                });
            }
        }
    }
    let domains = params
        .iter()
        .map(|p| (0..p.options.len()).collect())
        .collect();
    FscFamily {
        base: Arc::new(FamilyBase {
            nodes,
            memory: memory.clone(),
            params,
            param_of,
        }),
        domains,
    }
}

/// A product state: `Bootstrap` is the fresh state dispatching a
/// non-degenerate initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProductState {
    Bootstrap,
    Pair { state: usize, node: usize },
}

fn redirect(node: usize, obs: usize, memory: &MemoryModel) -> usize {
    if node < memory.budget[obs] {
        node
    } else {
        0
    }
}

/// Markov chain induced by an FSC, over the reachable product only.
#[derive(Debug, Clone)]
pub struct InducedMc {
    pub mc: Mc,
    pub states: Vec<ProductState>,
}

impl InducedMc {
    /// Replaces the target set by the product lift of a POMDP state mask.
    pub fn set_targets(&mut self, pomdp_targets: &[bool]) {
        for (i, ps) in self.states.iter().enumerate() {
            self.mc.targets[i] = match *ps {
                ProductState::Bootstrap => false,
                ProductState::Pair { state, .. } => pomdp_targets[state],
            };
        }
    }
}

/// Builds the MC induced by imposing `fsc` on `pomdp`, with the update
/// redirection of `memory` applied (pass a uniform model for full FSCs).
pub fn induced_mc(
    pomdp: &Pomdp,
    fsc: &Fsc,
    memory: &MemoryModel,
    pomdp_targets: &[bool],
) -> Result<InducedMc, FamilyError> {
    let mut states: Vec<ProductState> = Vec::new();
    let mut index: HashMap<ProductState, usize> = HashMap::new();
    let mut frontier: Vec<usize> = Vec::new();
    let push = |ps: ProductState,
                    states: &mut Vec<ProductState>,
                    index: &mut HashMap<ProductState, usize>,
                    frontier: &mut Vec<usize>| {
        *index.entry(ps).or_insert_with(|| {
            states.push(ps);
            frontier.push(states.len() - 1);
            states.len() - 1
        })
    };

    let initial = if let Some(s0) = pomdp.initial_state() {
        push(
            ProductState::Pair { state: s0, node: 0 },
            &mut states,
            &mut index,
            &mut frontier,
        )
    } else {
        push(ProductState::Bootstrap, &mut states, &mut index, &mut frontier)
    };

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rewards: Vec<f64> = Vec::new();
    while let Some(i) = frontier.pop() {
        while rows.len() <= i {
            rows.push(Vec::new());
            rewards.push(0.0);
        }
        match states[i] {
            ProductState::Bootstrap => {
                let mut row = Vec::new();
                for &(s, p) in &pomdp.initial {
                    let node = redirect(0, pomdp.obs_of[s], memory);
                    let j = push(
                        ProductState::Pair { state: s, node },
                        &mut states,
                        &mut index,
                        &mut frontier,
                    );
                    row.push((j, p));
                }
                rows[i] = merge_row(row);
                rewards[i] = 0.0;
            }
            ProductState::Pair { state: s, node: n } => {
                let z = pomdp.obs_of[s];
                let a = fsc.action[n][z];
                let next = fsc.update[n][z];
                let Some(dist) = &pomdp.transitions[s][a] else {
                    return Err(FamilyError::DisabledAction {
                        state: s,
                        action: pomdp.actions[a].clone(),
                    });
                };
                let mut row = Vec::new();
                for &(t, p) in dist {
                    let node = redirect(next, pomdp.obs_of[t], memory);
                    let j = push(
                        ProductState::Pair { state: t, node },
                        &mut states,
                        &mut index,
                        &mut frontier,
                    );
                    row.push((j, p));
                }
                rows[i] = merge_row(row);
                rewards[i] = pomdp.rewards[s][a];
            }
        }
    }
    let targets: Vec<bool> = states
        .iter()
        .map(|ps| match *ps {
            ProductState::Bootstrap => false,
            ProductState::Pair { state, .. } => pomdp_targets[state],
        })
        .collect();
    Ok(InducedMc {
        mc: Mc {
            num_states: states.len(),
            initial,
            rows,
            rewards,
            targets,
        },
        states,
    })
}

fn merge_row(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_unstable_by_key(|&(t, _)| t);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (t, p) in row {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 += p,
            _ => out.push((t, p)),
        }
    }
    out
}

/// Quotient MDP over-approximating the induced-MC family. Built once per
/// family base and shared by all subfamilies via enabled-option masks.
#[derive(Debug, Clone)]
pub struct QuotientMdp {
    pub mdp: SparseMdp,
    pub states: Vec<ProductState>,
    /// Family parameter governing each product state (`None` for bootstrap).
    pub param_of_state: Vec<Option<usize>>,
    /// Local action index -> option index into the parameter's option list.
    /// Bootstrap has a single unparameterised action.
    pub option_of_action: Vec<Vec<usize>>,
}

impl QuotientMdp {
    /// Replaces the target set by the product lift of a POMDP state mask.
    pub fn set_targets(&mut self, pomdp_targets: &[bool]) {
        for (i, ps) in self.states.iter().enumerate() {
            self.mdp.targets[i] = match *ps {
                ProductState::Bootstrap => false,
                ProductState::Pair { state, .. } => pomdp_targets[state],
            };
        }
    }

    /// Enabled-action mask realising a subfamily's domains.
    pub fn action_mask(&self, family: &FscFamily) -> Vec<Vec<bool>> {
        self.param_of_state
            .iter()
            .zip(&self.option_of_action)
            .map(|(param, options)| match param {
                None => vec![true; options.len()],
                Some(p) => options
                    .iter()
                    .map(|o| family.domains[*p].contains(o))
                    .collect(),
            })
            .collect()
    }

    /// Product states reachable from the initial state under a mask.
    pub fn reachable(&self, mask: &[Vec<bool>]) -> Vec<bool> {
        let mut seen = vec![false; self.states.len()];
        let mut stack = vec![self.mdp.initial];
        seen[self.mdp.initial] = true;
        while let Some(i) = stack.pop() {
            for (a, row) in self.mdp.rows[i].iter().enumerate() {
                if !mask[i][a] {
                    continue;
                }
                for &(j, p) in row {
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        seen
    }
}

/// Builds the quotient MDP of a family base: one product action per option
/// of the governing parameter.
pub fn quotient_mdp(pomdp: &Pomdp, family: &FscFamily) -> QuotientMdp {
    let base = &family.base;
    let memory = &base.memory;
    let mut states: Vec<ProductState> = Vec::new();
    let mut index: HashMap<ProductState, usize> = HashMap::new();
    let mut frontier: Vec<usize> = Vec::new();
    let push = |ps: ProductState,
                    states: &mut Vec<ProductState>,
                    index: &mut HashMap<ProductState, usize>,
                    frontier: &mut Vec<usize>| {
        *index.entry(ps).or_insert_with(|| {
            states.push(ps);
            frontier.push(states.len() - 1);
            states.len() - 1
        })
    };

    let initial = if let Some(s0) = pomdp.initial_state() {
        push(
            ProductState::Pair { state: s0, node: 0 },
            &mut states,
            &mut index,
            &mut frontier,
        )
    } else {
        push(ProductState::Bootstrap, &mut states, &mut index, &mut frontier)
    };

    let mut rows: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    let mut param_of_state: Vec<Option<usize>> = Vec::new();
    let mut option_of_action: Vec<Vec<usize>> = Vec::new();
    while let Some(i) = frontier.pop() {
        while rows.len() <= i {
            rows.push(Vec::new());
            rewards.push(Vec::new());
            param_of_state.push(None);
            option_of_action.push(Vec::new());
        }
        match states[i] {
            ProductState::Bootstrap => {
                let mut row = Vec::new();
                for &(s, p) in &pomdp.initial {
                    let node = redirect(0, pomdp.obs_of[s], memory);
                    let j = push(
                        ProductState::Pair { state: s, node },
                        &mut states,
                        &mut index,
                        &mut frontier,
                    );
                    row.push((j, p));
                }
                rows[i] = vec![merge_row(row)];
                rewards[i] = vec![0.0];
                param_of_state[i] = None;
                option_of_action[i] = vec![0];
            }
            ProductState::Pair { state: s, node: n } => {
                let z = pomdp.obs_of[s];
                let pid = base.param_of[n][z].expect("product node within memory budget");
                let param = &base.params[pid];
                let mut state_rows = Vec::with_capacity(param.options.len());
                let mut state_rewards = Vec::with_capacity(param.options.len());
                let mut opts = Vec::with_capacity(param.options.len());
                for (oid, &(a, next)) in param.options.iter().enumerate() {
                    let dist = pomdp.transitions[s][a]
                        .as_ref()
                        .expect("family options restricted to enabled actions");
                    let mut row = Vec::new();
                    for &(t, p) in dist {
                        let node = redirect(next, pomdp.obs_of[t], memory);
                        let j = push(
                            ProductState::Pair { state: t, node },
                            &mut states,
                            &mut index,
                            &mut frontier,
                        );
                        row.push((j, p));
                    }
                    state_rows.push(merge_row(row));
                    state_rewards.push(pomdp.rewards[s][a]);
                    opts.push(oid);
                }
                rows[i] = state_rows;
                rewards[i] = state_rewards;
                param_of_state[i] = Some(pid);
                option_of_action[i] = opts;
            }
        }
    }
    QuotientMdp {
        mdp: SparseMdp {
            initial,
            rows,
            rewards,
            targets: vec![false; states.len()],
        },
        states,
        param_of_state,
        option_of_action,
    }
}

/// Per-parameter option choices of a quotient policy, restricted to the
/// product states reachable under the family's domains.
#[derive(Debug, Clone)]
pub struct ConsistencyInfo {
    /// Distinct options chosen per parameter, sorted.
    pub chosen: Vec<Vec<usize>>,
}

impl ConsistencyInfo {
    pub fn inconsistent_params(&self) -> Vec<usize> {
        (0..self.chosen.len())
            .filter(|&p| self.chosen[p].len() >= 2)
            .collect()
    }

    pub fn is_consistent(&self) -> bool {
        self.chosen.iter().all(|c| c.len() <= 1)
    }

    pub fn is_param_consistent(&self, p: usize) -> bool {
        self.chosen[p].len() <= 1
    }
}

/// Collects, per parameter, the set of distinct options a quotient policy
/// selects across the parameter's reachable product states.
pub fn policy_consistency(
    family: &FscFamily,
    quotient: &QuotientMdp,
    policy: &MdpPolicy,
) -> ConsistencyInfo {
    let mask = quotient.action_mask(family);
    let reachable = quotient.reachable(&mask);
    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); family.num_params()];
    for i in 0..quotient.states.len() {
        if !reachable[i] {
            continue;
        }
        if let Some(p) = quotient.param_of_state[i] {
            let opt = quotient.option_of_action[i][policy.choice[i]];
            if !chosen[p].contains(&opt) {
                chosen[p].push(opt);
            }
        }
    }
    for c in &mut chosen {
        c.sort_unstable();
    }
    ConsistencyInfo { chosen }
}

/// Reads the FSC off a consistent quotient policy. Parameters without a
/// reachable product state default to the lowest-index domain option.
pub fn extract_fsc(
    family: &FscFamily,
    consistency: &ConsistencyInfo,
) -> Result<Fsc, FamilyError> {
    let mut assignment = Vec::with_capacity(family.num_params());
    for (p, chosen) in consistency.chosen.iter().enumerate() {
        match chosen.len() {
            0 => assignment.push(family.domains[p][0]),
            1 => assignment.push(chosen[0]),
            _ => return Err(FamilyError::Inconsistent { param: p }),
        }
    }
    Ok(family.member(&assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{eval_mc, solve_mdp, solve_mdp_masked};
    use crate::model::{OptDir, PropKind};
    use crate::parse::parse_model;

    fn maze() -> Pomdp {
        parse_model(include_str!("../../../models/maze.pomdp")).unwrap()
    }

    #[test]
    fn maze_observation_layout() {
        let p = maze();
        assert_eq!(p.num_states, 11);
        assert_eq!(p.num_obs, 6);
        assert_eq!(p.obs_of[1], 1);
        assert_eq!(p.obs_of[3], 1);
    }

    #[test]
    fn full_family_of_maze_2fscs() {
        let p = maze();
        let f = make_full_family(&p, 2);
        assert_eq!(f.num_params(), 12);
        for param in &f.base.params {
            assert_eq!(param.options.len(), 8);
        }
        assert_eq!(f.member_count(), 8u128.pow(12));
    }

    #[test]
    fn memoryless_family_counts_enabled_actions() {
        let p = maze();
        let f = make_full_family(&p, 1);
        // all four actions are enabled everywhere in the maze
        assert_eq!(f.member_count(), 4u128.pow(6));
    }

    #[test]
    fn reduced_family_with_memory_in_z1() {
        let p = maze();
        let mut mu = MemoryModel::uniform(p.num_obs, 1);
        mu.budget[1] = 2;
        let f = make_reduced_family(&p, &mu);
        assert_eq!(f.num_params(), 7);
    }

    #[test]
    fn update_redirection_behaves_as_node_zero() {
        let p = maze();
        let mut mu = MemoryModel::uniform(p.num_obs, 1);
        mu.budget[1] = 2;
        let f = make_reduced_family(&p, &mu);
        let quotient = quotient_mdp(&p, &f);
        // no product state may carry a node outside the budget
        for ps in &quotient.states {
            if let ProductState::Pair { state, node } = *ps {
                assert!(node < mu.budget[p.obs_of[state]]);
            }
        }
    }

    #[test]
    fn induced_mc_rows_are_stochastic_and_duplicate_s2() {
        let p = maze();
        let targets = p.target_mask("goal").unwrap();
        // 2-FSC switching memory on observation 1
        let fsc = Fsc {
            nodes: 2,
            action: vec![vec![3, 3, 1, 2, 0, 0], vec![3, 2, 1, 2, 0, 0]],
            update: vec![vec![0, 1, 0, 1, 0, 0], vec![0, 1, 1, 1, 1, 1]],
        };
        let product = induced_mc(&p, &fsc, &MemoryModel::uniform(p.num_obs, 2), &targets).unwrap();
        product.mc.validate().unwrap();
        let copies = product
            .states
            .iter()
            .filter(|ps| matches!(ps, ProductState::Pair { state: 2, .. }))
            .count();
        assert_eq!(copies, 2);
    }

    #[test]
    fn singleton_family_quotient_equals_induced_mc() {
        let p = maze();
        let targets = p.target_mask("goal").unwrap();
        let full = make_full_family(&p, 1);
        // restrict every parameter to its first option
        let mut f = full.clone();
        for d in &mut f.domains {
            d.truncate(1);
        }
        let fsc = f.sole_member().unwrap();
        let product = induced_mc(&p, &fsc, &f.base.memory, &targets).unwrap();
        let mut quotient = quotient_mdp(&p, &f);
        quotient.set_targets(&targets);
        let mask = quotient.action_mask(&f);
        let (v, _) =
            solve_mdp_masked(&quotient.mdp, OptDir::Max, PropKind::Probability, Some(&mask))
                .unwrap();
        let direct = eval_mc(&product.mc, PropKind::Probability).unwrap();
        assert!((v.at(quotient.mdp.initial) - direct.at(product.mc.initial)).abs() < 1e-9);
    }

    #[test]
    fn quotient_action_count_matches_domains() {
        let p = maze();
        let f = make_full_family(&p, 1);
        let quotient = quotient_mdp(&p, &f);
        for i in 0..quotient.states.len() {
            if let Some(pid) = quotient.param_of_state[i] {
                assert_eq!(
                    quotient.mdp.rows[i].len(),
                    f.base.params[pid].options.len()
                );
            }
        }
    }

    #[test]
    fn maze_1fsc_quotient_policy_inconsistent_in_z1_and_z4() {
        let p = maze();
        let targets = p.target_mask("goal").unwrap();
        let f = make_full_family(&p, 1);
        let mut quotient = quotient_mdp(&p, &f);
        quotient.set_targets(&targets);
        let (_, policy) = solve_mdp(&quotient.mdp, OptDir::Max, PropKind::Probability).unwrap();
        let info = policy_consistency(&f, &quotient, &policy);
        let inconsistent_obs: Vec<usize> = info
            .inconsistent_params()
            .into_iter()
            .map(|pid| f.base.params[pid].obs)
            .collect();
        assert_eq!(inconsistent_obs, vec![1, 4]);
    }

    #[test]
    fn extract_fsc_from_singleton_domains() {
        let p = maze();
        let f = make_full_family(&p, 1);
        let mut g = f.clone();
        for d in &mut g.domains {
            d.truncate(1);
        }
        let quotient = quotient_mdp(&p, &g);
        let mask = quotient.action_mask(&g);
        let targets = p.target_mask("goal").unwrap();
        let mut q = quotient.clone();
        q.set_targets(&targets);
        let (_, policy) =
            solve_mdp_masked(&q.mdp, OptDir::Max, PropKind::Probability, Some(&mask)).unwrap();
        let info = policy_consistency(&g, &quotient, &policy);
        assert!(info.is_consistent());
        let fsc = extract_fsc(&g, &info).unwrap();
        assert_eq!(fsc, g.sole_member().unwrap());
    }

    #[test]
    fn restrict_partitions_member_counts() {
        let p = maze();
        let f = make_full_family(&p, 1);
        let total = f.member_count();
        let c1 = f.restrict(0, &[0]).unwrap();
        let c2 = f.restrict(0, &[1]).unwrap();
        let rest: Vec<usize> = f.domains[0][2..].to_vec();
        let c3 = f.restrict(0, &rest).unwrap();
        assert_eq!(c1.member_count() + c2.member_count() + c3.member_count(), total);
        // restricting to the full domain is the identity
        let id = f.restrict(0, &f.domains[0].clone()).unwrap();
        assert_eq!(id, f);
    }

    #[test]
    fn restrict_rejects_empty_subdomain() {
        let p = maze();
        let f = make_full_family(&p, 1);
        assert!(matches!(
            f.restrict(0, &[]),
            Err(FamilyError::EmptyDomain { .. })
        ));
    }
}
