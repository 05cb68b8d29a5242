//! Brute-force enumeration oracle: evaluates every member of a family
//! exactly and reports the true optimum among admissible members.

use thiserror::Error;

use crate::family::{Fsc, FscFamily};
use crate::inner::{FamilyContext, InnerError, MemberEvaluation};
use crate::model::{OptDir, Pomdp, Specification};

#[derive(Debug, Error)]
pub enum EnumerateError {
    #[error("family has {members} members, exceeding the enumeration cap {cap}")]
    CapExceeded { members: u128, cap: u128 },
    #[error(transparent)]
    Inner(#[from] InnerError),
}

#[derive(Debug, Clone)]
pub struct EnumerateOutcome {
    pub members: u128,
    pub admissible: u64,
    /// Best admissible member, its exact evaluation, and its assignment.
    pub best: Option<(Fsc, MemberEvaluation, Vec<usize>)>,
}

impl EnumerateOutcome {
    pub fn best_value(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, e, _)| e.objective_value)
    }
}

/// Evaluates the induced Markov chain of every member. A member is
/// admissible when it satisfies all constraints and its objective value
/// is finite. Ties keep the first member in enumeration order, so the
/// result is deterministic.
pub fn enumerate_family(
    pomdp: &Pomdp,
    spec: &Specification,
    family: &FscFamily,
    cap: u128,
) -> Result<EnumerateOutcome, EnumerateError> {
    let members = family.member_count();
    if members > cap {
        return Err(EnumerateError::CapExceeded { members, cap });
    }
    let ctx = FamilyContext::new(pomdp, spec, family.clone())?;
    let num_params = family.domains.len();
    let mut idx = vec![0usize; num_params];
    let mut assignment = vec![0usize; num_params];
    let mut admissible: u64 = 0;
    let mut best: Option<(Fsc, MemberEvaluation, Vec<usize>)> = None;
    loop {
        for (p, &i) in idx.iter().enumerate() {
            assignment[p] = family.domains[p][i];
        }
        let fsc = family.member(&assignment);
        let eval = ctx.evaluate_member(&fsc)?;
        if eval.violated(spec).is_empty() && eval.objective_value.is_finite() {
            admissible += 1;
            let better = match &best {
                None => true,
                Some((_, b, _)) => match spec.objective.direction {
                    OptDir::Max => eval.objective_value > b.objective_value,
                    OptDir::Min => eval.objective_value < b.objective_value,
                },
            };
            if better {
                best = Some((fsc, eval, assignment.clone()));
            }
        }
        // odometer over the domains, least-significant parameter first
        let mut p = 0;
        loop {
            if p == num_params {
                return Ok(EnumerateOutcome {
                    members,
                    admissible,
                    best,
                });
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{make_full_family, make_reduced_family, MemoryModel};
    use crate::parse::{parse_model, parse_spec};

    #[test]
    fn singleton_family_reports_that_member() {
        // two states, one action, deterministic step into the target
        let text = "states 2\nactions a\nobservations 1\ninitial-dist 0:1\n\
                    obs 0 0\nobs 1 0\ntrans 0 a 1 1\ntrans 1 a 1 1\n\
                    reward 0 a 1\nlabel goal 1\n";
        let p = parse_model(text).unwrap();
        let spec = parse_spec("R min reach goal").unwrap();
        let family = make_full_family(&p, 1);
        let out = enumerate_family(&p, &spec, &family, 10).unwrap();
        assert_eq!(out.members, 1);
        assert_eq!(out.admissible, 1);
        assert!((out.best_value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let p = parse_model(include_str!("../../../models/maze.pomdp")).unwrap();
        let spec = parse_spec("R min reach goal").unwrap();
        let family = make_full_family(&p, 1);
        let err = enumerate_family(&p, &spec, &family, 100).unwrap_err();
        assert!(matches!(err, EnumerateError::CapExceeded { members: 4096, cap: 100 }));
    }

    #[test]
    fn maze_has_no_admissible_memoryless_controller() {
        let p = parse_model(include_str!("../../../models/maze.pomdp")).unwrap();
        let spec = parse_spec("R min reach goal").unwrap();
        let family = make_reduced_family(&p, &MemoryModel::uniform(p.num_obs, 1));
        let out = enumerate_family(&p, &spec, &family, 1 << 20).unwrap();
        assert_eq!(out.members, 4096);
        // every memoryless controller strands some initial state, so the
        // expected number of steps is infinite for all 4096 members
        assert_eq!(out.admissible, 0);
        assert!(out.best.is_none());
    }
}
