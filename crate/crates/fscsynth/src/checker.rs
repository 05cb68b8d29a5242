//! Numerical evaluation of MCs and MDPs: reachability probabilities,
//! expected total rewards until target, optimal policies and expected
//! visit counts.
//!
//! Two backends are provided for MC evaluation: a direct linear solve
//! (Gaussian elimination on the transient part) and value iteration with
//! a topological SCC decomposition. They must agree within 1e-8.

use thiserror::Error;

use crate::model::{Constraint, Mc, OptDir, PropKind, Relation};

/// Absolute residual for value-iteration convergence.
pub const VI_RESIDUAL: f64 = 1e-10;
/// Sweep cap per strongly-connected component.
pub const VI_MAX_SWEEPS: usize = 1_000_000;
/// Tolerance when collecting near-optimal actions during policy extraction.
const Q_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("value iteration did not converge: residual {residual} after {sweeps} sweeps")]
    NonConvergence { residual: f64, sweeps: usize },
    #[error("singular linear system in MC evaluation")]
    Singular,
}

/// Per-state value vector with a semantics tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    pub kind: PropKind,
    pub values: Vec<f64>,
}

impl ValueVector {
    pub fn at(&self, s: usize) -> f64 {
        self.values[s]
    }
}

/// Deterministic memoryless policy: one local action index per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdpPolicy {
    pub choice: Vec<usize>,
}

/// Explicit MDP shape consumed by the solver. Actions are local per state.
#[derive(Debug, Clone)]
pub struct SparseMdp {
    pub initial: usize,
    /// `rows[s][a] -> [(s', p)]`, at least one action per state.
    pub rows: Vec<Vec<Vec<(usize, f64)>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub targets: Vec<bool>,
}

impl SparseMdp {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn from_mc(mc: &Mc) -> Self {
        SparseMdp {
            initial: mc.initial,
            rows: mc.rows.iter().map(|r| vec![r.clone()]).collect(),
            rewards: mc.rewards.iter().map(|&r| vec![r]).collect(),
            targets: mc.targets.clone(),
        }
    }

    /// The MC induced by fixing a policy.
    pub fn induced_chain(&self, policy: &MdpPolicy) -> Mc {
        Mc {
            num_states: self.num_states(),
            initial: self.initial,
            rows: (0..self.num_states())
                .map(|s| self.rows[s][policy.choice[s]].clone())
                .collect(),
            rewards: (0..self.num_states())
                .map(|s| self.rewards[s][policy.choice[s]])
                .collect(),
            targets: self.targets.clone(),
        }
    }

    pub fn q_value(&self, kind: PropKind, values: &[f64], s: usize, a: usize) -> f64 {
        let mut q = match kind {
            PropKind::Probability => 0.0,
            PropKind::ExpectedReward => self.rewards[s][a],
        };
        for &(t, p) in &self.rows[s][a] {
            if p > 0.0 {
                let v = if self.targets[t] {
                    match kind {
                        PropKind::Probability => 1.0,
                        PropKind::ExpectedReward => 0.0,
                    }
                } else {
                    values[t]
                };
                if v.is_infinite() {
                    return f64::INFINITY;
                }
                q += p * v;
            }
        }
        q
    }
}

/// States from which `seeds` is reachable through `edges` (backward search).
fn backward_reachable(
    num_states: usize,
    seeds: &[bool],
    edges: impl Fn(usize) -> Vec<usize>,
) -> Vec<bool> {
    // predecessor lists
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); num_states];
    for s in 0..num_states {
        for t in edges(s) {
            preds[t].push(s);
        }
    }
    let mut reach = seeds.to_vec();
    let mut stack: Vec<usize> = (0..num_states).filter(|&s| reach[s]).collect();
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !reach[s] {
                reach[s] = true;
                stack.push(s);
            }
        }
    }
    reach
}

/// Iterative Tarjan SCC; components are returned with successors first
/// (reverse topological order of the condensation).
fn tarjan_scc(num_states: usize, succ: impl Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    let mut index = vec![usize::MAX; num_states];
    let mut lowlink = vec![0usize; num_states];
    let mut on_stack = vec![false; num_states];
    let mut stack: Vec<usize> = Vec::new();
    let mut sccs: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0usize;
    // explicit DFS stack: (node, successor list, next successor position)
    let mut dfs: Vec<(usize, Vec<usize>, usize)> = Vec::new();

    for root in 0..num_states {
        if index[root] != usize::MAX {
            continue;
        }
        dfs.push((root, succ(root), 0));
        index[root] = counter;
        lowlink[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(top) = dfs.last_mut() {
            let v = top.0;
            if top.2 < top.1.len() {
                let w = top.1[top.2];
                top.2 += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    lowlink[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    dfs.push((w, succ(w), 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
            } else {
                dfs.pop();
                if let Some(parent) = dfs.last() {
                    let p = parent.0;
                    lowlink[p] = lowlink[p].min(lowlink[v]);
                }
                if lowlink[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    sccs.push(comp);
                }
            }
        }
    }
    sccs
}

/// Dense Gaussian elimination with partial pivoting; solves `A x = b` in place.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, CheckError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-14 {
            return Err(CheckError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// States of an MC from which the target set is unreachable.
fn mc_cannot_reach(mc: &Mc) -> Vec<bool> {
    let reach = backward_reachable(mc.num_states, &mc.targets, |s| {
        if mc.targets[s] {
            Vec::new()
        } else {
            mc.rows[s]
                .iter()
                .filter(|&&(_, p)| p > 0.0)
                .map(|&(t, _)| t)
                .collect()
        }
    });
    reach.iter().map(|&r| !r).collect()
}

/// Exact set of MC states reaching the target with probability one.
fn mc_prob1(mc: &Mc) -> Vec<bool> {
    let cannot = mc_cannot_reach(mc);
    // a state has P(reach T) < 1 iff it can reach `cannot` avoiding T
    let risky = backward_reachable(mc.num_states, &cannot, |s| {
        if mc.targets[s] {
            Vec::new()
        } else {
            mc.rows[s]
                .iter()
                .filter(|&&(_, p)| p > 0.0)
                .map(|&(t, _)| t)
                .collect()
        }
    });
    risky.iter().map(|&r| !r).collect()
}

/// Direct linear-solve backend for MC evaluation.
pub fn eval_mc(mc: &Mc, kind: PropKind) -> Result<ValueVector, CheckError> {
    let n = mc.num_states;
    let mut values = vec![0.0; n];
    match kind {
        PropKind::Probability => {
            let cannot = mc_cannot_reach(mc);
            let unknown: Vec<usize> = (0..n)
                .filter(|&s| !mc.targets[s] && !cannot[s])
                .collect();
            let pos: Vec<Option<usize>> = {
                let mut p = vec![None; n];
                for (i, &s) in unknown.iter().enumerate() {
                    p[s] = Some(i);
                }
                p
            };
            let m = unknown.len();
            let mut a = vec![vec![0.0; m]; m];
            let mut b = vec![0.0; m];
            for (i, &s) in unknown.iter().enumerate() {
                a[i][i] = 1.0;
                for &(t, p) in &mc.rows[s] {
                    if mc.targets[t] {
                        b[i] += p;
                    } else if let Some(j) = pos[t] {
                        a[i][j] -= p;
                    }
                }
            }
            let x = solve_dense(&mut a, &mut b)?;
            for (i, &s) in unknown.iter().enumerate() {
                values[s] = x[i].clamp(0.0, 1.0);
            }
            for s in 0..n {
                if mc.targets[s] {
                    values[s] = 1.0;
                }
            }
        }
        PropKind::ExpectedReward => {
            let prob1 = mc_prob1(mc);
            let unknown: Vec<usize> = (0..n).filter(|&s| !mc.targets[s] && prob1[s]).collect();
            let pos: Vec<Option<usize>> = {
                let mut p = vec![None; n];
                for (i, &s) in unknown.iter().enumerate() {
                    p[s] = Some(i);
                }
                p
            };
            let m = unknown.len();
            let mut a = vec![vec![0.0; m]; m];
            let mut b = vec![0.0; m];
            for (i, &s) in unknown.iter().enumerate() {
                a[i][i] = 1.0;
                b[i] = mc.rewards[s];
                for &(t, p) in &mc.rows[s] {
                    if !mc.targets[t] {
                        if let Some(j) = pos[t] {
                            a[i][j] -= p;
                        }
                    }
                }
            }
            let x = solve_dense(&mut a, &mut b)?;
            for (i, &s) in unknown.iter().enumerate() {
                values[s] = x[i].max(0.0);
            }
            for s in 0..n {
                if !mc.targets[s] && !prob1[s] {
                    values[s] = f64::INFINITY;
                }
            }
        }
    }
    Ok(ValueVector { kind, values })
}

/// Value-iteration backend for MC evaluation.
pub fn eval_mc_vi(mc: &Mc, kind: PropKind) -> Result<ValueVector, CheckError> {
    let mdp = SparseMdp::from_mc(mc);
    let (v, _) = solve_mdp(&mdp, OptDir::Max, kind)?;
    Ok(v)
}

/// Enabled-action mask, local indices mirroring `SparseMdp::rows`.
pub type ActionMask = Vec<Vec<bool>>;

/// Optimal value and deterministic memoryless policy for an MDP.
pub fn solve_mdp(
    mdp: &SparseMdp,
    direction: OptDir,
    kind: PropKind,
) -> Result<(ValueVector, MdpPolicy), CheckError> {
    solve_mdp_masked(mdp, direction, kind, None)
}

/// As [`solve_mdp`], restricted to actions allowed by `mask`.
pub fn solve_mdp_masked(
    mdp: &SparseMdp,
    direction: OptDir,
    kind: PropKind,
    mask: Option<&ActionMask>,
) -> Result<(ValueVector, MdpPolicy), CheckError> {
    let n = mdp.num_states();
    let allowed = |s: usize, a: usize| mask.map_or(true, |m| m[s][a]);
    let actions_of = |s: usize| -> Vec<usize> {
        (0..mdp.rows[s].len()).filter(|&a| allowed(s, a)).collect()
    };

    // frozen values from qualitative precomputation
    let mut frozen: Vec<Option<f64>> = vec![None; n];
    for s in 0..n {
        if mdp.targets[s] {
            frozen[s] = Some(match kind {
                PropKind::Probability => 1.0,
                PropKind::ExpectedReward => 0.0,
            });
        }
    }
    match (kind, direction) {
        (PropKind::Probability, OptDir::Max) => {
            let reach = backward_reachable(n, &mdp.targets, |s| {
                if mdp.targets[s] {
                    Vec::new()
                } else {
                    actions_of(s)
                        .into_iter()
                        .flat_map(|a| mdp.rows[s][a].iter().filter(|&&(_, p)| p > 0.0).map(|&(t, _)| t))
                        .collect()
                }
            });
            for s in 0..n {
                if !reach[s] && !mdp.targets[s] {
                    frozen[s] = Some(0.0);
                }
            }
        }
        (PropKind::Probability, OptDir::Min) => {}
        (PropKind::ExpectedReward, OptDir::Min) => {
            let win = prob1_exists(mdp, &actions_of);
            for s in 0..n {
                if !win[s] && !mdp.targets[s] {
                    frozen[s] = Some(f64::INFINITY);
                }
            }
        }
        (PropKind::ExpectedReward, OptDir::Max) => {
            let win = prob1_forall(mdp, &actions_of);
            for s in 0..n {
                if !win[s] && !mdp.targets[s] {
                    frozen[s] = Some(f64::INFINITY);
                }
            }
        }
    }

    let mut values = vec![0.0; n];
    for s in 0..n {
        if let Some(v) = frozen[s] {
            values[s] = v;
        }
    }

    // topological SCC decomposition over non-frozen states
    let free_succ = |s: usize| -> Vec<usize> {
        if frozen[s].is_some() {
            return Vec::new();
        }
        actions_of(s)
            .into_iter()
            .flat_map(|a| {
                mdp.rows[s][a]
                    .iter()
                    .filter(|&&(t, p)| p > 0.0 && frozen[t].is_none())
                    .map(|&(t, _)| t)
            })
            .collect()
    };
    let sccs = tarjan_scc(n, free_succ);

    let bellman = |values: &[f64], s: usize| -> f64 {
        let mut best: Option<f64> = None;
        for a in actions_of(s) {
            let q = mdp.q_value(kind, values, s, a);
            best = Some(match best {
                None => q,
                Some(b) => match direction {
                    OptDir::Max => b.max(q),
                    OptDir::Min => b.min(q),
                },
            });
        }
        best.unwrap_or(0.0)
    };

    for comp in sccs {
        let comp: Vec<usize> = comp.into_iter().filter(|&s| frozen[s].is_none()).collect();
        if comp.is_empty() {
            continue;
        }
        if comp.len() == 1 {
            let s = comp[0];
            let has_self_loop = actions_of(s)
                .into_iter()
                .any(|a| mdp.rows[s][a].iter().any(|&(t, p)| t == s && p > 0.0));
            if !has_self_loop {
                values[s] = bellman(&values, s);
                continue;
            }
        }
        let mut sweeps = 0;
        loop {
            let mut residual: f64 = 0.0;
            for &s in &comp {
                let old = values[s];
                let new = bellman(&values, s);
                values[s] = new;
                let d = if old.is_infinite() && new.is_infinite() {
                    0.0
                } else {
                    (new - old).abs()
                };
                residual = residual.max(d);
            }
            sweeps += 1;
            if residual < VI_RESIDUAL {
                break;
            }
            if sweeps >= VI_MAX_SWEEPS {
                return Err(CheckError::NonConvergence { residual, sweeps });
            }
        }
    }

    let policy = extract_policy(mdp, direction, kind, &values, mask);
    Ok((ValueVector { kind, values }, policy))
}

/// States with an action-conditioned strategy reaching `T` almost surely
/// (Prob1E of the classical qualitative analysis).
fn prob1_exists(mdp: &SparseMdp, actions_of: &impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
    let n = mdp.num_states();
    let mut x: Vec<bool> = vec![true; n];
    loop {
        // Y = least fixpoint of: targets, plus states with an action staying
        // inside X while reaching Y with positive probability
        let mut y = mdp.targets.clone();
        loop {
            let mut changed = false;
            for s in 0..n {
                if y[s] {
                    continue;
                }
                let ok = actions_of(s).into_iter().any(|a| {
                    let row = &mdp.rows[s][a];
                    row.iter().all(|&(t, p)| p == 0.0 || x[t])
                        && row.iter().any(|&(t, p)| p > 0.0 && y[t])
                });
                if ok {
                    y[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if y == x {
            return x;
        }
        x = y;
    }
}

/// States from which every policy reaches `T` almost surely (Prob1A).
fn prob1_forall(mdp: &SparseMdp, actions_of: &impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
    let n = mdp.num_states();
    // maximal set closed under some action and avoiding T
    let mut avoid: Vec<bool> = mdp.targets.iter().map(|&t| !t).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !avoid[s] {
                continue;
            }
            let ok = actions_of(s)
                .into_iter()
                .any(|a| mdp.rows[s][a].iter().all(|&(t, p)| p == 0.0 || avoid[t]));
            if !ok {
                avoid[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // positive-probability existential reachability of `avoid` through non-targets
    let risky = backward_reachable(n, &avoid, |s| {
        if mdp.targets[s] {
            Vec::new()
        } else {
            actions_of(s)
                .into_iter()
                .flat_map(|a| mdp.rows[s][a].iter().filter(|&&(_, p)| p > 0.0).map(|&(t, _)| t))
                .collect()
        }
    });
    risky.iter().map(|&r| !r).collect()
}

/// Greedy policy extraction with lowest-index tie-breaking. Among actions
/// whose Q-value ties with the optimum, actions making graph progress
/// towards the target are preferred in the target-seeking directions; this
/// keeps the extracted policy proper when self-loops tie in value.
fn extract_policy(
    mdp: &SparseMdp,
    direction: OptDir,
    kind: PropKind,
    values: &[f64],
    mask: Option<&ActionMask>,
) -> MdpPolicy {
    let n = mdp.num_states();
    let allowed = |s: usize, a: usize| mask.map_or(true, |m| m[s][a]);
    let actions_of = |s: usize| -> Vec<usize> {
        (0..mdp.rows[s].len()).filter(|&a| allowed(s, a)).collect()
    };

    // near-optimal action sets
    let mut optimal: Vec<Vec<usize>> = Vec::with_capacity(n);
    for s in 0..n {
        let acts = actions_of(s);
        if mdp.targets[s] {
            optimal.push(acts);
            continue;
        }
        let qs: Vec<f64> = acts.iter().map(|&a| mdp.q_value(kind, values, s, a)).collect();
        let best = qs
            .iter()
            .copied()
            .reduce(|x, y| match direction {
                OptDir::Max => x.max(y),
                OptDir::Min => x.min(y),
            })
            .unwrap_or(0.0);
        let tol = Q_TIE_TOL * (1.0 + if best.is_finite() { best.abs() } else { 0.0 });
        let near: Vec<usize> = acts
            .iter()
            .zip(&qs)
            .filter(|&(_, &q)| {
                if best.is_infinite() {
                    q.is_infinite()
                } else {
                    (q - best).abs() <= tol
                }
            })
            .map(|(&a, _)| a)
            .collect();
        optimal.push(near);
    }

    let target_seeking = matches!(
        (direction, kind),
        (OptDir::Max, PropKind::Probability) | (OptDir::Min, PropKind::ExpectedReward)
    );
    let mut choice = vec![0usize; n];
    if target_seeking {
        // BFS distance to targets through near-optimal edges
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        for s in 0..n {
            if mdp.targets[s] {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in 0..n {
            if mdp.targets[s] {
                continue;
            }
            for &a in &optimal[s] {
                for &(t, p) in &mdp.rows[s][a] {
                    if p > 0.0 {
                        preds[t].push(s);
                    }
                }
            }
        }
        while let Some(t) = queue.pop_front() {
            for &s in &preds[t] {
                if dist[s] == usize::MAX {
                    dist[s] = dist[t] + 1;
                    queue.push_back(s);
                }
            }
        }
        for s in 0..n {
            let fallback = *optimal[s].first().unwrap_or(&0);
            if mdp.targets[s] || dist[s] == usize::MAX {
                choice[s] = fallback;
                continue;
            }
            choice[s] = optimal[s]
                .iter()
                .copied()
                .find(|&a| {
                    mdp.rows[s][a]
                        .iter()
                        .any(|&(t, p)| p > 0.0 && dist[t] < dist[s])
                })
                .unwrap_or(fallback);
        }
    } else {
        for s in 0..n {
            choice[s] = *optimal[s].first().unwrap_or(&0);
        }
    }
    MdpPolicy { choice }
}

/// Expected number of visits of each MC state before absorption in targets
/// or recurrent classes. States inside reachable non-target recurrent
/// classes report +inf.
pub fn expected_visits(mc: &Mc) -> Result<ValueVector, CheckError> {
    let n = mc.num_states;
    // targets act as absorbing sinks
    let succ = |s: usize| -> Vec<usize> {
        if mc.targets[s] {
            Vec::new()
        } else {
            mc.rows[s]
                .iter()
                .filter(|&&(_, p)| p > 0.0)
                .map(|&(t, _)| t)
                .collect()
        }
    };
    // recurrent = member of a bottom SCC of the target-absorbed chain
    let sccs = tarjan_scc(n, succ);
    let mut recurrent = vec![false; n];
    for comp in &sccs {
        let bottom = comp.iter().all(|&s| {
            mc.targets[s] || succ(s).iter().all(|t| comp.contains(t))
        });
        if bottom {
            for &s in comp {
                if !mc.targets[s] {
                    recurrent[s] = true;
                }
            }
        }
    }

    // forward reachability from the initial state
    let mut reachable = vec![false; n];
    let mut stack = vec![mc.initial];
    reachable[mc.initial] = true;
    while let Some(s) = stack.pop() {
        for t in succ(s) {
            if !reachable[t] {
                reachable[t] = true;
                stack.push(t);
            }
        }
    }

    let transient: Vec<usize> = (0..n)
        .filter(|&s| reachable[s] && !recurrent[s] && !mc.targets[s])
        .collect();
    let pos: Vec<Option<usize>> = {
        let mut p = vec![None; n];
        for (i, &s) in transient.iter().enumerate() {
            p[s] = Some(i);
        }
        p
    };
    // v_j = [j = init] + sum_i v_i P(j | i) over transient states
    let m = transient.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (j, &sj) in transient.iter().enumerate() {
        a[j][j] = 1.0;
        if sj == mc.initial {
            b[j] = 1.0;
        }
    }
    for (i, &si) in transient.iter().enumerate() {
        for &(t, p) in &mc.rows[si] {
            if let Some(j) = pos[t] {
                a[j][i] -= p;
            }
        }
    }
    let v = solve_dense(&mut a, &mut b)?;

    let mut values = vec![0.0; n];
    for (i, &s) in transient.iter().enumerate() {
        values[s] = v[i].max(0.0);
    }
    for s in 0..n {
        if recurrent[s] && reachable[s] {
            values[s] = f64::INFINITY;
        }
    }
    // absorbed states: one visit per entry
    for s in 0..n {
        if mc.targets[s] && reachable[s] {
            let mut inflow = if s == mc.initial { 1.0 } else { 0.0 };
            for (i, &si) in transient.iter().enumerate() {
                for &(t, p) in &mc.rows[si] {
                    if t == s {
                        inflow += v[i] * p;
                    }
                }
            }
            values[s] = inflow;
        }
    }
    Ok(ValueVector {
        kind: PropKind::ExpectedReward,
        values,
    })
}

/// Verdict of a value against a threshold constraint; comparisons are exact
/// on the computed double, with no epsilon slack.
pub fn check_constraint(value: f64, constraint: &Constraint) -> bool {
    match constraint.relation {
        Relation::Geq => value >= constraint.threshold,
        Relation::Leq => value <= constraint.threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Constraint;

    fn geometric_chain(p_exit: f64, step_reward: f64) -> Mc {
        Mc {
            num_states: 2,
            initial: 0,
            rows: vec![vec![(0, 1.0 - p_exit), (1, p_exit)], vec![(1, 1.0)]],
            rewards: vec![step_reward, 0.0],
            targets: vec![false, true],
        }
    }

    #[test]
    fn geometric_reach_probability_is_one() {
        let mc = geometric_chain(0.5, 0.0);
        let v = eval_mc(&mc, PropKind::Probability).unwrap();
        assert!((v.at(0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn geometric_expected_steps() {
        let mc = geometric_chain(0.5, 1.0);
        let v = eval_mc(&mc, PropKind::ExpectedReward).unwrap();
        assert!((v.at(0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn unreachable_target_gives_infinite_reward() {
        let mut mc = geometric_chain(0.5, 1.0);
        // leak to an absorbing non-target state
        mc.num_states = 3;
        mc.rows[0] = vec![(0, 0.25), (1, 0.5), (2, 0.25)];
        mc.rows.push(vec![(2, 1.0)]);
        mc.rewards.push(0.0);
        mc.targets.push(false);
        let v = eval_mc(&mc, PropKind::ExpectedReward).unwrap();
        assert!(v.at(0).is_infinite());
        let p = eval_mc(&mc, PropKind::Probability).unwrap();
        assert!((p.at(0) - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn backends_agree_on_geometric_chain() {
        let mc = geometric_chain(0.3, 1.0);
        for kind in [PropKind::Probability, PropKind::ExpectedReward] {
            let a = eval_mc(&mc, kind).unwrap();
            let b = eval_mc_vi(&mc, kind).unwrap();
            for s in 0..mc.num_states {
                assert!((a.at(s) - b.at(s)).abs() < 1e-8, "{kind:?} state {s}");
            }
        }
    }

    fn two_action_mdp() -> SparseMdp {
        // state 0: action 0 -> target, action 1 -> sink
        SparseMdp {
            initial: 0,
            rows: vec![
                vec![vec![(1, 1.0)], vec![(2, 1.0)]],
                vec![vec![(1, 1.0)]],
                vec![vec![(2, 1.0)]],
            ],
            rewards: vec![vec![0.0, 0.0], vec![0.0], vec![0.0]],
            targets: vec![false, true, false],
        }
    }

    #[test]
    fn max_and_min_pick_target_and_sink() {
        let mdp = two_action_mdp();
        let (vmax, pmax) = solve_mdp(&mdp, OptDir::Max, PropKind::Probability).unwrap();
        assert!((vmax.at(0) - 1.0).abs() < 1e-10);
        assert_eq!(pmax.choice[0], 0);
        let (vmin, pmin) = solve_mdp(&mdp, OptDir::Min, PropKind::Probability).unwrap();
        assert!(vmin.at(0).abs() < 1e-10);
        assert_eq!(pmin.choice[0], 1);
    }

    #[test]
    fn single_action_mdp_equals_mc() {
        let mc = geometric_chain(0.4, 1.0);
        let mdp = SparseMdp::from_mc(&mc);
        for kind in [PropKind::Probability, PropKind::ExpectedReward] {
            let (v, _) = solve_mdp(&mdp, OptDir::Min, kind).unwrap();
            let direct = eval_mc(&mc, kind).unwrap();
            for s in 0..mc.num_states {
                assert!((v.at(s) - direct.at(s)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn extraction_avoids_value_preserving_self_loop() {
        // both actions have Q = 1 at the fixpoint, but only action 1 is proper
        let mdp = SparseMdp {
            initial: 0,
            rows: vec![
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
                vec![vec![(1, 1.0)]],
            ],
            rewards: vec![vec![0.0, 0.0], vec![0.0]],
            targets: vec![false, true],
        };
        let (v, pol) = solve_mdp(&mdp, OptDir::Max, PropKind::Probability).unwrap();
        assert!((v.at(0) - 1.0).abs() < 1e-9);
        assert_eq!(pol.choice[0], 1);
    }

    #[test]
    fn visits_of_single_path() {
        let mc = Mc {
            num_states: 2,
            initial: 0,
            rows: vec![vec![(1, 1.0)], vec![(1, 1.0)]],
            rewards: vec![0.0, 0.0],
            targets: vec![false, true],
        };
        let v = expected_visits(&mc).unwrap();
        assert!((v.at(0) - 1.0).abs() < 1e-10);
        assert!((v.at(1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn visits_of_geometric_loop() {
        let mc = geometric_chain(0.5, 0.0);
        let v = expected_visits(&mc).unwrap();
        assert!((v.at(0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn visits_infinite_in_reachable_nontarget_bscc() {
        let mc = Mc {
            num_states: 3,
            initial: 0,
            rows: vec![
                vec![(1, 0.5), (2, 0.5)],
                vec![(1, 1.0)],
                vec![(2, 1.0)],
            ],
            rewards: vec![0.0, 0.0, 0.0],
            targets: vec![false, true, false],
        };
        let v = expected_visits(&mc).unwrap();
        assert!((v.at(0) - 1.0).abs() < 1e-10);
        assert!((v.at(1) - 0.5).abs() < 1e-10);
        assert!(v.at(2).is_infinite());
    }

    #[test]
    fn constraint_verdicts() {
        let geq = Constraint {
            kind: PropKind::Probability,
            relation: Relation::Geq,
            threshold: 0.9,
            label: "goal".into(),
        };
        assert!(check_constraint(0.93, &geq));
        assert!(!check_constraint(0.89, &geq));
        let leq = Constraint {
            kind: PropKind::ExpectedReward,
            relation: Relation::Leq,
            threshold: 10.0,
            label: "goal".into(),
        };
        assert!(!check_constraint(f64::INFINITY, &leq));
        assert!(check_constraint(43.0 / 6.0, &Constraint { threshold: 7.17, ..leq }));
    }
}
