//! Core domain types: POMDPs, Markov chains, and specifications.

use std::collections::BTreeMap;

use thiserror::Error;

/// Tolerance for checking that distributions sum to one.
pub const STOCHASTICITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state {state} has no enabled action")]
    NoEnabledAction { state: usize },
    #[error("distribution for state {state}, action `{action}` sums to {sum}, expected 1")]
    RowNotStochastic {
        state: usize,
        action: String,
        sum: f64,
    },
    #[error("initial distribution sums to {sum}, expected 1")]
    InitialNotStochastic { sum: f64 },
    #[error("reward for state {state}, action `{action}` is {value}, must be finite and >= 0")]
    BadReward {
        state: usize,
        action: String,
        value: f64,
    },
    #[error("unknown label `{label}`")]
    UnknownLabel { label: String },
    #[error("label `{label}` resolves to an empty state set")]
    EmptyLabel { label: String },
}

/// Explicit-state POMDP with a deterministic observation labelling.
///
/// States, actions and observations are dense indices in declaration order.
/// A `None` entry in `transitions[s][a]` means action `a` is disabled in `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pomdp {
    pub num_states: usize,
    pub actions: Vec<String>,
    pub num_obs: usize,
    /// Initial distribution over states (sparse, weights sum to 1).
    pub initial: Vec<(usize, f64)>,
    /// Observation index per state.
    pub obs_of: Vec<usize>,
    /// Sparse transition rows, `transitions[s][a] -> [(s', p)]`.
    pub transitions: Vec<Vec<Option<Vec<(usize, f64)>>>>,
    /// State-action rewards, 0 by default.
    pub rewards: Vec<Vec<f64>>,
    /// Named state sets; specifications refer to targets by label.
    pub labels: BTreeMap<String, Vec<usize>>,
}

impl Pomdp {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn enabled_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.transitions[s]
            .iter()
            .enumerate()
            .filter(|(_, row)| row.is_some())
            .map(|(a, _)| a)
    }

    pub fn is_enabled(&self, s: usize, a: usize) -> bool {
        self.transitions[s][a].is_some()
    }

    /// Actions enabled in every state carrying observation `z`.
    pub fn actions_enabled_under_obs(&self, z: usize) -> Vec<usize> {
        let mut enabled = vec![true; self.num_actions()];
        for s in 0..self.num_states {
            if self.obs_of[s] == z {
                for a in 0..self.num_actions() {
                    enabled[a] &= self.is_enabled(s, a);
                }
            }
        }
        (0..self.num_actions()).filter(|&a| enabled[a]).collect()
    }

    /// True if exactly one state carries observation `z`.
    pub fn is_trivial_obs(&self, z: usize) -> bool {
        self.obs_of.iter().filter(|&&o| o == z).count() == 1
    }

    pub fn states_of_label(&self, label: &str) -> Result<&[usize], ModelError> {
        let states = self
            .labels
            .get(label)
            .ok_or_else(|| ModelError::UnknownLabel {
                label: label.to_string(),
            })?;
        if states.is_empty() {
            return Err(ModelError::EmptyLabel {
                label: label.to_string(),
            });
        }
        Ok(states)
    }

    pub fn target_mask(&self, label: &str) -> Result<Vec<bool>, ModelError> {
        let mut mask = vec![false; self.num_states];
        for &s in self.states_of_label(label)? {
            mask[s] = true;
        }
        Ok(mask)
    }

    /// Checks all structural invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        let init_sum: f64 = self.initial.iter().map(|&(_, p)| p).sum();
        if (init_sum - 1.0).abs() > STOCHASTICITY_TOL {
            return Err(ModelError::InitialNotStochastic { sum: init_sum });
        }
        for s in 0..self.num_states {
            if self.enabled_actions(s).next().is_none() {
                return Err(ModelError::NoEnabledAction { state: s });
            }
            for a in 0..self.num_actions() {
                if let Some(row) = &self.transitions[s][a] {
                    let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                    if (sum - 1.0).abs() > STOCHASTICITY_TOL {
                        return Err(ModelError::RowNotStochastic {
                            state: s,
                            action: self.actions[a].clone(),
                            sum,
                        });
                    }
                }
                let r = self.rewards[s][a];
                if !r.is_finite() || r < 0.0 {
                    return Err(ModelError::BadReward {
                        state: s,
                        action: self.actions[a].clone(),
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }

    /// True if the initial distribution is a point mass.
    pub fn has_point_initial(&self) -> bool {
        self.initial.len() == 1 && (self.initial[0].1 - 1.0).abs() <= STOCHASTICITY_TOL
    }

    /// The unique initial state, if the initial distribution is a point mass.
    pub fn initial_state(&self) -> Option<usize> {
        if self.has_point_initial() {
            Some(self.initial[0].0)
        } else {
            None
        }
    }
}

/// Replaces a non-degenerate initial distribution by a fresh bootstrap state.
///
/// The fresh state carries a single fresh action whose outcome distribution
/// equals the original initial distribution, a fresh trivial observation and
/// zero reward. Point-mass initial distributions are returned unchanged.
pub fn normalize_initial(pomdp: &Pomdp) -> Pomdp {
    if pomdp.has_point_initial() {
        return pomdp.clone();
    }
    let mut out = pomdp.clone();
    let init_state = out.num_states;
    let mut init_action_name = String::from("@init");
    while out.actions.contains(&init_action_name) {
        init_action_name.push('_');
    }
    let init_action = out.actions.len();
    out.actions.push(init_action_name);
    for s in 0..out.num_states {
        out.transitions[s].push(None);
        out.rewards[s].push(0.0);
    }
    out.num_states += 1;
    let mut fresh_row = vec![None; out.actions.len()];
    fresh_row[init_action] = Some(pomdp.initial.clone());
    out.transitions.push(fresh_row);
    out.rewards.push(vec![0.0; out.actions.len()]);
    out.obs_of.push(out.num_obs);
    out.num_obs += 1;
    out.initial = vec![(init_state, 1.0)];
    out
}

/// Markov chain: an MDP with one enabled action per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mc {
    pub num_states: usize,
    pub initial: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rewards: Vec<f64>,
    pub targets: Vec<bool>,
}

impl Mc {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (s, row) in self.rows.iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > STOCHASTICITY_TOL {
                return Err(ModelError::RowNotStochastic {
                    state: s,
                    action: String::new(),
                    sum,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropKind {
    Probability,
    ExpectedReward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Geq,
    Leq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptDir {
    Max,
    Min,
}

/// Threshold constraint over a reachability or expected-reward property.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub kind: PropKind,
    pub relation: Relation,
    pub threshold: f64,
    pub label: String,
}

/// Optimisation objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: PropKind,
    pub direction: OptDir,
    pub label: String,
}

/// A list of constraints plus exactly one optimisation objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Specification {
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
}

impl Specification {
    /// Checks that all target labels resolve against `pomdp`.
    pub fn validate(&self, pomdp: &Pomdp) -> Result<(), ModelError> {
        for c in &self.constraints {
            pomdp.states_of_label(&c.label)?;
        }
        pomdp.states_of_label(&self.objective.label)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_model;

    fn uniform_pomdp(n: usize) -> Pomdp {
        let mut text = format!("states {n}\nactions a\nobservations {n}\n");
        let weights: Vec<String> = (0..n)
            .map(|s| format!("{s}:{}", 1.0 / n as f64))
            .collect();
        text.push_str(&format!("initial-dist {}\n", weights.join(" ")));
        for s in 0..n {
            text.push_str(&format!("obs {s} {s}\ntrans {s} a {s} 1\n"));
        }
        text.push_str("label goal 0\n");
        parse_model(&text).unwrap()
    }

    #[test]
    fn normalize_point_mass_is_identity() {
        let mut p = uniform_pomdp(3);
        p.initial = vec![(1, 1.0)];
        let q = normalize_initial(&p);
        assert_eq!(p, q);
    }

    #[test]
    fn normalize_uniform_adds_bootstrap_state() {
        let p = uniform_pomdp(10);
        let q = normalize_initial(&p);
        assert_eq!(q.num_states, 11);
        assert_eq!(q.num_obs, 11);
        assert!(q.is_trivial_obs(q.num_obs - 1));
        assert_eq!(q.initial, vec![(10, 1.0)]);
        // the bootstrap action reproduces the original initial distribution
        let row = q.transitions[10]
            .iter()
            .flatten()
            .next()
            .expect("bootstrap action");
        assert_eq!(row, &p.initial);
        assert_eq!(q.rewards[10].iter().copied().sum::<f64>(), 0.0);
        q.validate().unwrap();
    }

    #[test]
    fn validate_rejects_subnormalized_row() {
        let mut p = uniform_pomdp(2);
        p.transitions[0][0] = Some(vec![(0, 0.95)]);
        assert!(matches!(
            p.validate(),
            Err(ModelError::RowNotStochastic { state: 0, .. })
        ));
    }
}
