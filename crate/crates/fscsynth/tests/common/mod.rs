//! Shared helpers for the integration suites: a seeded random-instance
//! generator and exhaustive member evaluation.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fscsynth::family::{make_reduced_family, Fsc, FscFamily, MemoryModel};
use fscsynth::inner::{FamilyContext, MemberEvaluation};
use fscsynth::model::{
    normalize_initial, Constraint, Objective, OptDir, Pomdp, PropKind, Relation, Specification,
};

pub struct Instance {
    pub pomdp: Pomdp,
    pub spec: Specification,
    pub memory: MemoryModel,
}

/// Random POMDP with ≤ 8 states, ≤ 3 actions, ≤ 4 observations. Action 0
/// is enabled everywhere so every observation admits a common action.
pub fn random_pomdp(rng: &mut ChaCha8Rng) -> Pomdp {
    let num_states = rng.gen_range(2..=8);
    let num_actions = rng.gen_range(1..=3);
    let num_obs = rng.gen_range(1..=4.min(num_states));
    let mut obs_of: Vec<usize> = (0..num_states)
        .map(|s| if s < num_obs { s } else { rng.gen_range(0..num_obs) })
        .collect();
    obs_of.shuffle(rng);
    // surjectivity can be lost by the shuffle only if num_obs > count; it
    // cannot be, because the first num_obs entries cover every index
    let mut transitions: Vec<Vec<Option<Vec<(usize, f64)>>>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    for _ in 0..num_states {
        let mut row: Vec<Option<Vec<(usize, f64)>>> = Vec::new();
        let mut rrow: Vec<f64> = Vec::new();
        for a in 0..num_actions {
            let enabled = a == 0 || rng.gen_bool(0.8);
            if enabled {
                let support = rng.gen_range(1..=3.min(num_states));
                let mut succ: Vec<usize> = (0..num_states).collect();
                succ.shuffle(rng);
                succ.truncate(support);
                // integer weights keep the row exactly stochastic
                let weights: Vec<u32> = (0..support).map(|_| rng.gen_range(1..=4)).collect();
                let total: u32 = weights.iter().sum();
                let dist = succ
                    .iter()
                    .zip(&weights)
                    .map(|(&s, &w)| (s, f64::from(w) / f64::from(total)))
                    .collect();
                row.push(Some(dist));
            } else {
                row.push(None);
            }
            rrow.push(f64::from(rng.gen_range(0..=3u32)));
        }
        transitions.push(row);
        rewards.push(rrow);
    }
    let goal_size = rng.gen_range(1..num_states.max(2));
    let mut order: Vec<usize> = (0..num_states).collect();
    order.shuffle(rng);
    let mut goal: Vec<usize> = order[..goal_size].to_vec();
    goal.sort_unstable();
    let mut labels = BTreeMap::new();
    labels.insert("goal".to_string(), goal);
    if rng.gen_bool(0.5) {
        let mut bad: Vec<usize> = (0..num_states).filter(|_| rng.gen_bool(0.3)).collect();
        if bad.is_empty() {
            bad.push(rng.gen_range(0..num_states));
        }
        bad.sort_unstable();
        labels.insert("bad".to_string(), bad);
    }
    let initial = if rng.gen_bool(0.5) {
        vec![(rng.gen_range(0..num_states), 1.0)]
    } else {
        let support = rng.gen_range(2..=num_states);
        let mut states: Vec<usize> = (0..num_states).collect();
        states.shuffle(rng);
        states.truncate(support);
        states.sort_unstable();
        let p = 1.0 / support as f64;
        states.into_iter().map(|s| (s, p)).collect()
    };
    let pomdp = Pomdp {
        num_states,
        actions: (0..num_actions).map(|a| format!("a{a}")).collect(),
        num_obs,
        initial,
        obs_of,
        transitions,
        rewards,
        labels,
    };
    pomdp.validate().expect("generated model is well-formed");
    pomdp
}

/// Random specification over the model's labels.
pub fn random_spec(rng: &mut ChaCha8Rng, pomdp: &Pomdp) -> Specification {
    let direction = if rng.gen_bool(0.5) {
        OptDir::Max
    } else {
        OptDir::Min
    };
    let kind = if rng.gen_bool(0.7) {
        PropKind::Probability
    } else {
        PropKind::ExpectedReward
    };
    let objective = Objective {
        kind,
        direction,
        label: "goal".to_string(),
    };
    let mut constraints = Vec::new();
    if pomdp.labels.contains_key("bad") && rng.gen_bool(0.5) {
        constraints.push(Constraint {
            kind: PropKind::Probability,
            relation: Relation::Leq,
            threshold: f64::from(rng.gen_range(2..=9u32)) / 10.0,
            label: "bad".to_string(),
        });
    } else if rng.gen_bool(0.3) {
        constraints.push(Constraint {
            kind: PropKind::Probability,
            relation: Relation::Geq,
            threshold: f64::from(rng.gen_range(1..=8u32)) / 10.0,
            label: "goal".to_string(),
        });
    }
    Specification {
        constraints,
        objective,
    }
}

/// Random memory model whose reduced family stays within `cap` members.
pub fn random_memory(rng: &mut ChaCha8Rng, pomdp: &Pomdp, cap: u128) -> MemoryModel {
    let mut memory = MemoryModel::uniform(pomdp.num_obs, 1);
    for z in 0..pomdp.num_obs {
        if rng.gen_bool(0.4) {
            memory.budget[z] = 2;
        }
    }
    loop {
        let family = make_reduced_family(pomdp, &memory);
        if family.member_count() <= cap {
            return memory;
        }
        // shrink the widest budget until the family fits
        let z = (0..pomdp.num_obs)
            .max_by_key(|&z| memory.budget[z])
            .expect("at least one observation");
        if memory.budget[z] == 1 {
            return memory;
        }
        memory.budget[z] -= 1;
    }
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // families are built over the normalized form throughout the pipeline,
    // so the oracle must enumerate the same design space
    let pomdp = normalize_initial(&random_pomdp(&mut rng));
    let spec = random_spec(&mut rng, &pomdp);
    let memory = random_memory(&mut rng, &pomdp, 10_000);
    Instance {
        pomdp,
        spec,
        memory,
    }
}

/// Exact evaluation of every member of a family, in enumeration order.
pub fn all_member_evaluations(
    pomdp: &Pomdp,
    spec: &Specification,
    family: &FscFamily,
) -> Vec<(Fsc, MemberEvaluation)> {
    let ctx = FamilyContext::new(pomdp, spec, family.clone()).expect("context");
    let mut out = Vec::new();
    let n = family.domains.len();
    let mut idx = vec![0usize; n];
    let mut assignment = vec![0usize; n];
    loop {
        for (p, &i) in idx.iter().enumerate() {
            assignment[p] = family.domains[p][i];
        }
        let fsc = family.member(&assignment);
        let eval = ctx.evaluate_member(&fsc).expect("member evaluation");
        out.push((fsc, eval));
        let mut p = 0;
        loop {
            if p == n {
                return out;
            }
            idx[p] += 1;
            if idx[p] < family.domains[p].len() {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

/// Best admissible objective value among evaluated members.
pub fn best_admissible(
    spec: &Specification,
    evals: &[(Fsc, MemberEvaluation)],
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (_, e) in evals {
        if !e.violated(spec).is_empty() || !e.objective_value.is_finite() {
            continue;
        }
        best = Some(match (best, spec.objective.direction) {
            (None, _) => e.objective_value,
            (Some(b), OptDir::Max) => b.max(e.objective_value),
            (Some(b), OptDir::Min) => b.min(e.objective_value),
        });
    }
    best
}
