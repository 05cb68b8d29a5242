//! The learner: drives synthesis by iterating inner-loop searches over
//! growing design spaces, choosing where to inject memory and applying
//! symmetry reduction to freshly injected observations.

use std::collections::HashMap;
use std::time::Duration;

use crate::checker::{eval_mc, expected_visits, MdpPolicy, ValueVector};
use crate::family::{
    induced_mc, make_reduced_family, ConsistencyInfo, Fsc, FscFamily, MemoryModel,
    ProductState,
};
use crate::inner::{
    inner_synthesize, Budget, FamilyContext, Incumbent, InnerConfig, InnerError, InnerStats,
    RootInfo, RunningOptimum,
};
use crate::model::{normalize_initial, OptDir, Pomdp, Specification};

#[derive(Debug, Clone, Copy)]
pub struct OuterConfig {
    pub inner: InnerConfig,
    pub symmetry: bool,
    /// Maximum number of memory nodes per observation.
    pub memory_limit: usize,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            inner: InnerConfig::default(),
            symmetry: true,
            memory_limit: 2,
        }
    }
}

/// One symmetry reduction: after injecting a node into `obs`, action
/// `first_action` is removed from the node-`first_node` parameter and
/// `new_action` from the freshly added node-`new_node` parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymmetryRecord {
    pub obs: usize,
    pub first_node: usize,
    pub first_action: usize,
    pub new_node: usize,
    pub new_action: usize,
}

#[derive(Debug, Default, Clone)]
pub struct OuterStats {
    pub rounds: usize,
    pub families_analyzed: usize,
    pub members_pruned: u128,
    pub candidates_evaluated: usize,
    pub conflicts_learned: usize,
    pub incumbents: usize,
}

impl OuterStats {
    fn absorb(&mut self, inner: &InnerStats) {
        self.rounds += 1;
        self.families_analyzed += inner.families_analyzed;
        self.members_pruned += inner.members_pruned;
        self.candidates_evaluated += inner.candidates_evaluated;
        self.conflicts_learned += inner.conflicts_learned;
        self.incumbents += inner.incumbents;
    }
}

pub struct OuterOutcome {
    pub incumbent: Option<Incumbent>,
    pub optimum: RunningOptimum,
    pub memory: MemoryModel,
    pub injections: Vec<usize>,
    pub symmetry: Vec<SymmetryRecord>,
    /// Quotient bound of the memoryless family at the initial state: the
    /// value of the underlying fully-observable relaxation.
    pub base_bound: f64,
    /// Incumbent matches `base_bound`: no FSC of any size can do better.
    pub globally_optimal: bool,
    /// Search stopped because no further injection can help (as opposed
    /// to running out of budget).
    pub saturated: bool,
    /// A final round without symmetry reduction was run after saturation.
    pub fallback_ran: bool,
    pub stats: OuterStats,
    pub wall: Duration,
}

/// Adds one memory node to observation `z`.
pub fn inject_memory(memory: &mut MemoryModel, z: usize) {
    memory.budget[z] += 1;
}

/// Applies one symmetry-reduction record to a freshly rebuilt family.
/// Returns false (leaving the family unchanged for that parameter) if a
/// removal would empty a domain.
pub fn apply_symmetry(family: &FscFamily, record: &SymmetryRecord) -> (FscFamily, bool) {
    let mut out = family.clone();
    let mut applied = true;
    for (node, action) in [
        (record.first_node, record.first_action),
        (record.new_node, record.new_action),
    ] {
        let Some(p) = family.base.param_of[node][record.obs] else {
            applied = false;
            continue;
        };
        let keep: Vec<usize> = out.domains[p]
            .iter()
            .copied()
            .filter(|&o| family.base.params[p].options[o].0 != action)
            .collect();
        if keep.is_empty() {
            applied = false;
            continue;
        }
        out = out.restrict(p, &keep).expect("non-empty subdomain");
    }
    (out, applied)
}

/// Per-action significance weight at the parameters of one observation:
/// the magnitude of each chosen action's visit-weighted Q-advantage.
fn action_weights(
    ctx: &FamilyContext,
    family: &FscFamily,
    policy: &MdpPolicy,
    values: &ValueVector,
    consistency: &ConsistencyInfo,
    obs: usize,
) -> Result<Vec<f64>, InnerError> {
    let quotient = &ctx.quotient;
    let chain = quotient.mdp.induced_chain(policy);
    let visits = expected_visits(&chain)?;
    let mask = quotient.action_mask(family);
    let reachable = quotient.reachable(&mask);
    let mut weights = vec![0.0; ctx.pomdp.actions.len()];
    for i in 0..quotient.states.len() {
        if !reachable[i] || quotient.mdp.targets[i] {
            continue;
        }
        let Some(p) = quotient.param_of_state[i] else {
            continue;
        };
        if family.base.params[p].obs != obs {
            continue;
        }
        let own_opt = quotient.option_of_action[i][policy.choice[i]];
        let own_action = family.base.params[p].options[own_opt].0;
        let own_q = quotient
            .mdp
            .q_value(values.kind, &values.values, i, policy.choice[i]);
        let mut alt: Option<f64> = None;
        for (a, &opt) in quotient.option_of_action[i].iter().enumerate() {
            if opt == own_opt || !consistency.chosen[p].contains(&opt) {
                continue;
            }
            let q = quotient.mdp.q_value(values.kind, &values.values, i, a);
            alt = Some(match alt {
                None => q,
                Some(b) => b.max(q),
            });
        }
        let Some(alt) = alt else { continue };
        let term = (visits.at(i) * (own_q - alt)).abs();
        if !term.is_nan() {
            weights[own_action] += term;
        }
    }
    Ok(weights)
}

/// The two highest-weighted distinct actions chosen by the policy at the
/// parameters of `obs` (ties towards the lower action index).
pub fn top_two_actions(
    ctx: &FamilyContext,
    family: &FscFamily,
    root: &RootInfo,
    obs: usize,
) -> Result<Option<(usize, usize)>, InnerError> {
    let (Some(policy), Some(values), Some(consistency)) =
        (&root.pi_star, &root.bound_fav, &root.consistency)
    else {
        return Ok(None);
    };
    let weights = action_weights(ctx, family, policy, values, consistency, obs)?;
    // distinct actions chosen across the observation's parameters
    let mut chosen_actions: Vec<usize> = Vec::new();
    for (p, param) in family.base.params.iter().enumerate() {
        if param.obs != obs {
            continue;
        }
        for &o in &consistency.chosen[p] {
            let a = param.options[o].0;
            if !chosen_actions.contains(&a) {
                chosen_actions.push(a);
            }
        }
    }
    if chosen_actions.len() < 2 {
        return Ok(None);
    }
    chosen_actions.sort_by(|&a, &b| {
        let (wa, wb) = (weights[a], weights[b]);
        // weights that agree up to solver residue count as tied
        if (wa - wb).abs() <= 1e-9 * (1.0 + wa.abs().max(wb.abs())) {
            a.cmp(&b)
        } else {
            wb.total_cmp(&wa)
        }
    });
    Ok(Some((chosen_actions[0], chosen_actions[1])))
}

fn injectable(pomdp: &Pomdp, memory: &MemoryModel, limit: usize, z: usize) -> bool {
    !pomdp.is_trivial_obs(z) && memory.budget[z] < limit
}

/// Picks the observation to inject memory into, or `None` on saturation.
///
/// Without an incumbent: the inconsistent observation with the largest
/// aggregated parameter significance. With an incumbent: the observation
/// where the incumbent disagrees with the abstraction policy, scored by
/// the incumbent's visit frequencies times the per-state bound
/// improvement estimate.
pub fn choose_injection(
    ctx: &FamilyContext,
    family: &FscFamily,
    root: &RootInfo,
    incumbent: Option<&Incumbent>,
    memory: &MemoryModel,
    limit: usize,
) -> Result<Option<usize>, InnerError> {
    match incumbent {
        None => {
            let Some(consistency) = &root.consistency else {
                return Ok(None);
            };
            let mut best: Option<(usize, f64)> = None;
            for z in 0..ctx.pomdp.num_obs {
                if !injectable(&ctx.pomdp, memory, limit, z) {
                    continue;
                }
                let mut agg = 0.0;
                let mut any = false;
                for (p, param) in family.base.params.iter().enumerate() {
                    if param.obs == z && !consistency.is_param_consistent(p) {
                        agg += root.significance[p];
                        any = true;
                    }
                }
                if !any {
                    continue;
                }
                best = Some(match best {
                    None => (z, agg),
                    Some((bz, bv)) => {
                        if agg > bv {
                            (z, agg)
                        } else {
                            (bz, bv)
                        }
                    }
                });
            }
            Ok(best.map(|(z, _)| z))
        }
        Some(star) => {
            let (Some(policy), Some(bound)) = (&root.pi_star, &root.bound_fav) else {
                return Ok(None);
            };
            let mut product = induced_mc(
                &ctx.pomdp,
                &star.fsc,
                &family.base.memory,
                &ctx.objective_targets,
            )?;
            product.set_targets(&ctx.objective_targets);
            let values = eval_mc(&product.mc, ctx.spec.objective.kind)?;
            let visits = expected_visits(&product.mc)?;
            let index: HashMap<ProductState, usize> = ctx
                .quotient
                .states
                .iter()
                .enumerate()
                .map(|(i, &ps)| (ps, i))
                .collect();
            let mut score = vec![0.0; ctx.pomdp.num_obs];
            for (i, &ps) in product.states.iter().enumerate() {
                let ProductState::Pair { state, node } = ps else {
                    continue;
                };
                if product.mc.targets[i] {
                    continue;
                }
                let z = ctx.pomdp.obs_of[state];
                let Some(&q) = index.get(&ps) else { continue };
                let Some(p) = ctx.quotient.param_of_state[q] else {
                    continue;
                };
                let star_option = family.base.params[p]
                    .options
                    .iter()
                    .position(|&o| o == (star.fsc.action[node][z], star.fsc.update[node][z]));
                let pi_option = ctx.quotient.option_of_action[q][policy.choice[q]];
                if star_option == Some(pi_option) {
                    continue;
                }
                let gain = match ctx.spec.objective.direction {
                    OptDir::Max => bound.at(q) - values.at(i),
                    OptDir::Min => values.at(i) - bound.at(q),
                };
                let term = visits.at(i) * gain.max(0.0);
                if !term.is_nan() && term > 0.0 {
                    score[z] += term;
                }
            }
            let mut best: Option<(usize, f64)> = None;
            for z in 0..ctx.pomdp.num_obs {
                if score[z] <= 0.0 || !injectable(&ctx.pomdp, memory, limit, z) {
                    continue;
                }
                if best.is_none_or(|(_, bv)| score[z] > bv) {
                    best = Some((z, score[z]));
                }
            }
            Ok(best.map(|(z, _)| z))
        }
    }
}

fn build_family(
    pomdp: &Pomdp,
    memory: &MemoryModel,
    symmetry: &[SymmetryRecord],
    diag: &mut dyn FnMut(String),
) -> FscFamily {
    let mut family = make_reduced_family(pomdp, memory);
    for record in symmetry {
        let (reduced, applied) = apply_symmetry(&family, record);
        if applied {
            family = reduced;
        } else {
            diag(format!(
                "symmetry reduction on observation {} skipped: domain would become empty",
                record.obs
            ));
        }
    }
    family
}

/// Runs the full outer loop: anytime stream of improving admissible FSCs
/// over families grown by memory injection.
pub fn synthesize(
    pomdp: &Pomdp,
    spec: &Specification,
    cfg: &OuterConfig,
    budget: &Budget,
    on_incumbent: &mut dyn FnMut(&Fsc, f64, Duration),
    diag: &mut dyn FnMut(String),
) -> Result<OuterOutcome, InnerError> {
    // a distribution initial becomes a point mass at a fresh bootstrap
    // state; its controller row then carries the entry node as an explicit
    // family parameter, which keeps the node-swap symmetry intact when an
    // initial state carries a freshly injected observation
    let normalized = normalize_initial(pomdp);
    let pomdp = &normalized;
    let mut memory = MemoryModel::uniform(pomdp.num_obs, 1);
    let mut injections: Vec<usize> = Vec::new();
    let mut symmetry: Vec<SymmetryRecord> = Vec::new();
    let mut optimum = RunningOptimum::trivial(
        spec.objective.direction,
        cfg.inner.eps_rel,
        cfg.inner.eps_abs,
    );
    let mut incumbent: Option<Incumbent> = None;
    let mut stats = OuterStats::default();
    let mut base_bound = f64::NAN;
    let mut saturated = false;
    let mut fallback_pending = false;
    let mut fallback_ran = false;

    loop {
        let family = if fallback_pending {
            build_family(pomdp, &memory, &[], diag)
        } else {
            build_family(pomdp, &memory, &symmetry, diag)
        };
        diag(format!(
            "round {}: memory {:?}, {} members",
            stats.rounds + 1,
            memory.budget,
            family.member_count()
        ));
        let mut ctx = FamilyContext::new(pomdp, spec, family.clone())?;
        let start = budget.start;
        let outcome = inner_synthesize(
            &mut ctx,
            &cfg.inner,
            optimum,
            budget,
            &mut |fsc, value, _| on_incumbent(fsc, value, start.elapsed()),
            diag,
        )?;
        stats.absorb(&outcome.stats);
        optimum = outcome.optimum;
        if let Some(found) = outcome.incumbent {
            incumbent = Some(found);
        }
        if stats.rounds == 1 {
            base_bound = outcome
                .root
                .as_ref()
                .map(|r| r.init_bound)
                .unwrap_or(f64::NAN);
        }
        if fallback_pending {
            fallback_ran = true;
            saturated = true;
            break;
        }
        if let Some(star) = &incumbent {
            if (star.value - base_bound).abs() <= 1e-9 * (1.0 + base_bound.abs()) {
                diag("incumbent matches the relaxation bound: globally optimal".into());
                saturated = true;
                break;
            }
        }
        if budget.expired() {
            break;
        }
        let Some(root) = outcome.root else {
            saturated = true;
            break;
        };
        let choice = choose_injection(
            &ctx,
            &family,
            &root,
            incumbent.as_ref(),
            &memory,
            cfg.memory_limit,
        )?;
        let Some(z) = choice else {
            // saturation: optionally one more round without symmetry
            if cfg.symmetry && !symmetry.is_empty() {
                diag("saturated: rerunning the final design space without symmetry".into());
                fallback_pending = true;
                continue;
            }
            saturated = true;
            break;
        };
        // when the initial state itself carries observation z, the entry
        // node is pinned to 0 and the two nodes are not interchangeable;
        // reducing there can cut off the optimum
        let initial_has_z = pomdp
            .initial_state()
            .is_some_and(|s0| pomdp.obs_of[s0] == z);
        let pair = if cfg.symmetry && !initial_has_z {
            top_two_actions(&ctx, &family, &root, z)?
        } else {
            None
        };
        inject_memory(&mut memory, z);
        injections.push(z);
        diag(format!("memory injected into observation {z}"));
        if let Some((a_i, a_j)) = pair {
            let record = SymmetryRecord {
                obs: z,
                first_node: 0,
                first_action: a_i,
                new_node: memory.budget[z] - 1,
                new_action: a_j,
            };
            symmetry.push(record);
            diag(format!(
                "symmetry reduction at observation {z}: removed action {} from node {} and action {} from node {}",
                pomdp.actions[a_i], record.first_node, pomdp.actions[a_j], record.new_node
            ));
        }
    }

    let globally_optimal = incumbent
        .as_ref()
        .is_some_and(|s| (s.value - base_bound).abs() <= 1e-9 * (1.0 + base_bound.abs()));
    Ok(OuterOutcome {
        incumbent,
        optimum,
        memory,
        injections,
        symmetry,
        base_bound,
        globally_optimal,
        saturated,
        fallback_ran,
        stats,
        wall: budget.start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::eval_mc;
    use crate::family::induced_mc;
    use crate::parse::{parse_model, parse_spec};

    fn maze() -> Pomdp {
        parse_model(include_str!("../../../models/maze.pomdp")).unwrap()
    }

    // expected-steps optimum of the final maze design space, confirmed by
    // `maze_reduced_family_brute_force`
    const MAZE_OPT: f64 = 430.0 / 99.0;

    fn maze_memory_and_symmetry() -> (MemoryModel, [SymmetryRecord; 2]) {
        let p = maze();
        let mut memory = MemoryModel::uniform(p.num_obs, 1);
        memory.budget[1] = 2;
        memory.budget[4] = 2;
        let records = [
            SymmetryRecord { obs: 1, first_node: 0, first_action: 2, new_node: 1, new_action: 3 },
            SymmetryRecord { obs: 4, first_node: 0, first_action: 1, new_node: 1, new_action: 0 },
        ];
        (memory, records)
    }

    #[test]
    fn maze_injects_corridor_junction_then_corridor_ends() {
        let p = maze();
        let spec = parse_spec("R min reach goal").unwrap();
        let cfg = OuterConfig::default();
        let budget = Budget::with_timeout(Duration::from_secs(120));
        let mut stream: Vec<f64> = Vec::new();
        let out = synthesize(&p, &spec, &cfg, &budget, &mut |_, v, _| stream.push(v), &mut |_| {})
            .unwrap();
        assert_eq!(out.injections, vec![1, 4]);
        let inc = out.incumbent.expect("admissible controller");
        assert!((inc.value - MAZE_OPT).abs() < 1e-9, "value {}", inc.value);
        assert!(out.saturated);
        assert!(out.fallback_ran);
        // fully-observable relaxation: mean optimal distance 39/11, slip 0.9
        assert!((out.base_bound - 39.0 / 11.0 / 0.9).abs() < 1e-9);
        // anytime stream improves monotonically for a minimisation objective
        assert!(stream.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(stream.last().copied(), Some(inc.value));
    }

    #[test]
    fn maze_symmetry_removes_mirrored_action_pairs() {
        // u=0 d=1 l=2 r=3: the junction observation keeps {u,d,r} in the
        // initial node and {u,d,l} in the fresh one; the corridor-end
        // observation keeps {u,l,r} and {d,l,r}
        let p = maze();
        let spec = parse_spec("R min reach goal").unwrap();
        let cfg = OuterConfig::default();
        let budget = Budget::with_timeout(Duration::from_secs(120));
        let out = synthesize(&p, &spec, &cfg, &budget, &mut |_, _, _| {}, &mut |_| {}).unwrap();
        let (_, expected) = maze_memory_and_symmetry();
        assert_eq!(out.symmetry, expected.to_vec());
    }

    #[test]
    fn injection_grows_the_design_space() {
        let p = maze();
        let mut memory = MemoryModel::uniform(p.num_obs, 1);
        let before = make_reduced_family(&p, &memory).member_count();
        inject_memory(&mut memory, 1);
        let after = make_reduced_family(&p, &memory).member_count();
        assert_eq!(before, 4096);
        assert!(after > before);
    }

    #[test]
    fn symmetry_reduction_shrinks_both_node_domains() {
        let p = maze();
        let (memory, records) = maze_memory_and_symmetry();
        let family = make_reduced_family(&p, &memory);
        let (reduced, applied) = apply_symmetry(&family, &records[0]);
        assert!(applied);
        let p0 = family.base.param_of[0][1].unwrap();
        let p1 = family.base.param_of[1][1].unwrap();
        // one action (of four) dropped from each domain, update choice kept
        assert_eq!(reduced.domains[p0].len(), family.domains[p0].len() - family.base.nodes);
        assert_eq!(reduced.domains[p1].len(), family.domains[p1].len() - family.base.nodes);
        assert!(reduced.domains[p0].iter().all(|&o| family.base.params[p0].options[o].0 != 2));
        assert!(reduced.domains[p1].iter().all(|&o| family.base.params[p1].options[o].0 != 3));
    }

    #[test]
    fn symmetry_reduction_refuses_to_empty_a_domain() {
        let p = maze();
        let (memory, _) = maze_memory_and_symmetry();
        let family = make_reduced_family(&p, &memory);
        let p0 = family.base.param_of[0][1].unwrap();
        // keep only l-options in node 0 first, then ask to remove l
        let keep: Vec<usize> = family.domains[p0]
            .iter()
            .copied()
            .filter(|&o| family.base.params[p0].options[o].0 == 2)
            .collect();
        let narrowed = family.restrict(p0, &keep).unwrap();
        let record = SymmetryRecord { obs: 1, first_node: 0, first_action: 2, new_node: 1, new_action: 3 };
        let (out, applied) = apply_symmetry(&narrowed, &record);
        assert!(!applied);
        assert_eq!(out.domains[p0], narrowed.domains[p0]);
    }

    #[test]
    #[ignore = "exhaustive 10.6M-member sweep, ~50s in release"]
    fn maze_reduced_family_brute_force() {
        let p = normalize_initial(&maze());
        let spec = parse_spec("R min reach goal").unwrap();
        let targets: Vec<bool> =
            (0..p.num_states).map(|s| p.labels["goal"].contains(&s)).collect();
        let mut memory = MemoryModel::uniform(p.num_obs, 1);
        memory.budget[1] = 2;
        memory.budget[4] = 2;
        let (_, records) = maze_memory_and_symmetry();
        let family = build_family(&p, &memory, &records, &mut |_| {});
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; family.domains.len()];
        let mut assignment = vec![0usize; family.domains.len()];
        'outer: loop {
            for (q, &i) in idx.iter().enumerate() {
                assignment[q] = family.domains[q][i];
            }
            let fsc = family.member(&assignment);
            let mut prod = induced_mc(&p, &fsc, &memory, &targets).unwrap();
            prod.set_targets(&targets);
            if let Ok(v) = eval_mc(&prod.mc, spec.objective.kind) {
                best = best.min(v.at(prod.mc.initial));
            }
            let mut q = 0;
            loop {
                if q == idx.len() {
                    break 'outer;
                }
                idx[q] += 1;
                if idx[q] < family.domains[q].len() {
                    break;
                }
                idx[q] = 0;
                q += 1;
            }
        }
        assert!((best - MAZE_OPT).abs() < 1e-9, "best {best}");
    }
}
