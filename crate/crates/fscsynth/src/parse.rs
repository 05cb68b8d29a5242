//! Line-oriented parsers for the model, specification and FSC file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::family::Fsc;
use crate::model::{
    Constraint, ModelError, Objective, OptDir, Pomdp, PropKind, Relation, Specification,
    STOCHASTICITY_TOL,
};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: dangling reference: {msg}")]
    Dangling { line: usize, msg: String },
    #[error("state {state}, action `{action}`: transition row sums to {sum}, expected 1")]
    RowSum {
        state: usize,
        action: String,
        sum: f64,
    },
    #[error("missing `obs` declaration for state {state}")]
    MissingObs { state: usize },
    #[error("missing initial distribution")]
    MissingInitial,
    #[error("duplicate `{what}` declaration on line {line}")]
    Duplicate { what: String, line: usize },
    #[error("threshold {value} out of range for {kind} constraint (line {line})")]
    ThresholdRange {
        value: f64,
        kind: String,
        line: usize,
    },
    #[error("specification must end with exactly one objective")]
    MissingObjective,
    #[error("more than one objective (line {line})")]
    ExtraObjective { line: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

/// Column (1-based) of the `idx`-th whitespace-separated token of `line`.
fn token_col(line: &str, idx: usize) -> usize {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if seen == idx {
                return i + 1;
            }
            seen += 1;
            in_token = true;
        }
    }
    line.len() + 1
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses a probability or reward written as a decimal or `p/q` rational.
fn parse_number(tok: &str) -> Option<f64> {
    if let Some((num, den)) = tok.split_once('/') {
        let n: f64 = num.trim().parse().ok()?;
        let d: f64 = den.trim().parse().ok()?;
        if d == 0.0 {
            return None;
        }
        Some(n / d)
    } else {
        tok.parse().ok()
    }
}

fn parse_index(tok: &str, bound: usize, what: &str, lno: usize, col: usize) -> Result<usize, ParseError> {
    let idx: usize = tok
        .parse()
        .map_err(|_| syntax(lno, col, format!("expected {what} index, got `{tok}`")))?;
    if idx >= bound {
        return Err(ParseError::Dangling {
            line: lno,
            msg: format!("{what} index {idx} out of range (declared {bound})"),
        });
    }
    Ok(idx)
}

/// Parses a POMDP model file and validates all structural invariants.
pub fn parse_model(text: &str) -> Result<Pomdp, ParseError> {
    let mut num_states: Option<usize> = None;
    let mut actions: Option<Vec<String>> = None;
    let mut num_obs: Option<usize> = None;
    let mut initial: Option<Vec<(usize, f64)>> = None;
    let mut obs_of: Vec<Option<usize>> = Vec::new();
    let mut transitions: Vec<Vec<Option<Vec<(usize, f64)>>>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    let mut labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut trans_lines: Vec<(usize, usize)> = Vec::new(); // (state, action) -> first line seen

    for (lno0, raw) in text.lines().enumerate() {
        let lno = lno0 + 1;
        let line = strip_comment(raw);
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let need_header = |have: bool, what: &str| -> Result<(), ParseError> {
            if have {
                Ok(())
            } else {
                Err(syntax(lno, 1, format!("`{what}` must be declared first")))
            }
        };
        match toks[0] {
            "states" => {
                if num_states.is_some() {
                    return Err(ParseError::Duplicate {
                        what: "states".into(),
                        line: lno,
                    });
                }
                if toks.len() != 2 {
                    return Err(syntax(lno, 1, "usage: states N"));
                }
                let n: usize = toks[1]
                    .parse()
                    .map_err(|_| syntax(lno, token_col(raw, 1), "expected state count"))?;
                if n == 0 {
                    return Err(syntax(lno, token_col(raw, 1), "state count must be positive"));
                }
                num_states = Some(n);
                obs_of = vec![None; n];
            }
            "actions" => {
                if actions.is_some() {
                    return Err(ParseError::Duplicate {
                        what: "actions".into(),
                        line: lno,
                    });
                }
                if toks.len() < 2 {
                    return Err(syntax(lno, 1, "usage: actions name1 name2 ..."));
                }
                let names: Vec<String> = toks[1..].iter().map(|s| s.to_string()).collect();
                for (i, n) in names.iter().enumerate() {
                    if names[..i].contains(n) {
                        return Err(syntax(
                            lno,
                            token_col(raw, 1 + i),
                            format!("duplicate action name `{n}`"),
                        ));
                    }
                }
                actions = Some(names);
            }
            "observations" => {
                if num_obs.is_some() {
                    return Err(ParseError::Duplicate {
                        what: "observations".into(),
                        line: lno,
                    });
                }
                if toks.len() != 2 {
                    return Err(syntax(lno, 1, "usage: observations M"));
                }
                let m: usize = toks[1]
                    .parse()
                    .map_err(|_| syntax(lno, token_col(raw, 1), "expected observation count"))?;
                if m == 0 {
                    return Err(syntax(lno, token_col(raw, 1), "observation count must be positive"));
                }
                num_obs = Some(m);
            }
            "initial" => {
                need_header(num_states.is_some(), "states")?;
                if initial.is_some() {
                    return Err(ParseError::Duplicate {
                        what: "initial".into(),
                        line: lno,
                    });
                }
                if toks.len() != 2 {
                    return Err(syntax(lno, 1, "usage: initial i"));
                }
                let s = parse_index(toks[1], num_states.unwrap(), "state", lno, token_col(raw, 1))?;
                initial = Some(vec![(s, 1.0)]);
            }
            "initial-dist" => {
                need_header(num_states.is_some(), "states")?;
                if initial.is_some() {
                    return Err(ParseError::Duplicate {
                        what: "initial".into(),
                        line: lno,
                    });
                }
                if toks.len() < 2 {
                    return Err(syntax(lno, 1, "usage: initial-dist i:p j:q ..."));
                }
                let mut dist = Vec::new();
                for (i, tok) in toks[1..].iter().enumerate() {
                    let col = token_col(raw, 1 + i);
                    let (s, p) = tok
                        .split_once(':')
                        .ok_or_else(|| syntax(lno, col, format!("expected `state:prob`, got `{tok}`")))?;
                    let s = parse_index(s, num_states.unwrap(), "state", lno, col)?;
                    let p = parse_number(p)
                        .ok_or_else(|| syntax(lno, col, format!("bad probability `{p}`")))?;
                    dist.push((s, p));
                }
                initial = Some(dist);
            }
            "obs" => {
                need_header(num_states.is_some(), "states")?;
                need_header(num_obs.is_some(), "observations")?;
                if toks.len() != 3 {
                    return Err(syntax(lno, 1, "usage: obs s z"));
                }
                let s = parse_index(toks[1], num_states.unwrap(), "state", lno, token_col(raw, 1))?;
                let z = parse_index(toks[2], num_obs.unwrap(), "observation", lno, token_col(raw, 2))?;
                if obs_of[s].is_some() {
                    return Err(ParseError::Duplicate {
                        what: format!("obs {s}"),
                        line: lno,
                    });
                }
                obs_of[s] = Some(z);
            }
            "trans" => {
                need_header(num_states.is_some(), "states")?;
                need_header(actions.is_some(), "actions")?;
                let acts = actions.as_ref().unwrap();
                if transitions.is_empty() {
                    transitions =
                        vec![vec![None; acts.len()]; num_states.unwrap()];
                    rewards = vec![vec![0.0; acts.len()]; num_states.unwrap()];
                }
                if toks.len() != 5 {
                    return Err(syntax(lno, 1, "usage: trans s action s' p"));
                }
                let s = parse_index(toks[1], num_states.unwrap(), "state", lno, token_col(raw, 1))?;
                let a = acts.iter().position(|n| n == toks[2]).ok_or_else(|| {
                    ParseError::Dangling {
                        line: lno,
                        msg: format!("unknown action `{}`", toks[2]),
                    }
                })?;
                let t = parse_index(toks[3], num_states.unwrap(), "state", lno, token_col(raw, 3))?;
                let p = parse_number(toks[4]).ok_or_else(|| {
                    syntax(lno, token_col(raw, 4), format!("bad probability `{}`", toks[4]))
                })?;
                if !(0.0..=1.0 + STOCHASTICITY_TOL).contains(&p) {
                    return Err(syntax(
                        lno,
                        token_col(raw, 4),
                        format!("probability {p} outside [0, 1]"),
                    ));
                }
                let row = transitions[s][a].get_or_insert_with(Vec::new);
                if row.is_empty() {
                    trans_lines.push((s, a));
                }
                row.push((t, p));
            }
            "reward" => {
                need_header(num_states.is_some(), "states")?;
                need_header(actions.is_some(), "actions")?;
                let acts = actions.as_ref().unwrap();
                if rewards.is_empty() {
                    transitions =
                        vec![vec![None; acts.len()]; num_states.unwrap()];
                    rewards = vec![vec![0.0; acts.len()]; num_states.unwrap()];
                }
                if toks.len() != 4 {
                    return Err(syntax(lno, 1, "usage: reward s action v"));
                }
                let s = parse_index(toks[1], num_states.unwrap(), "state", lno, token_col(raw, 1))?;
                let a = acts.iter().position(|n| n == toks[2]).ok_or_else(|| {
                    ParseError::Dangling {
                        line: lno,
                        msg: format!("unknown action `{}`", toks[2]),
                    }
                })?;
                let v = parse_number(toks[3]).ok_or_else(|| {
                    syntax(lno, token_col(raw, 3), format!("bad reward `{}`", toks[3]))
                })?;
                rewards[s][a] = v;
            }
            "label" => {
                need_header(num_states.is_some(), "states")?;
                if toks.len() < 3 {
                    return Err(syntax(lno, 1, "usage: label name s1 s2 ..."));
                }
                let name = toks[1].to_string();
                if labels.contains_key(&name) {
                    return Err(ParseError::Duplicate {
                        what: format!("label {name}"),
                        line: lno,
                    });
                }
                let mut states = Vec::new();
                for (i, tok) in toks[2..].iter().enumerate() {
                    let s =
                        parse_index(tok, num_states.unwrap(), "state", lno, token_col(raw, 2 + i))?;
                    if !states.contains(&s) {
                        states.push(s);
                    }
                }
                states.sort_unstable();
                labels.insert(name, states);
            }
            other => {
                return Err(syntax(lno, 1, format!("unknown directive `{other}`")));
            }
        }
    }

    let num_states = num_states.ok_or_else(|| syntax(1, 1, "missing `states` declaration"))?;
    let actions = actions.ok_or_else(|| syntax(1, 1, "missing `actions` declaration"))?;
    let num_obs = num_obs.ok_or_else(|| syntax(1, 1, "missing `observations` declaration"))?;
    let initial = initial.ok_or(ParseError::MissingInitial)?;
    if transitions.is_empty() {
        transitions = vec![vec![None; actions.len()]; num_states];
        rewards = vec![vec![0.0; actions.len()]; num_states];
    }
    let mut obs = Vec::with_capacity(num_states);
    for (s, z) in obs_of.iter().enumerate() {
        obs.push(z.ok_or(ParseError::MissingObs { state: s })?);
    }

    // per-row stochasticity, reported with the offending row
    for &(s, a) in &trans_lines {
        let sum: f64 = transitions[s][a].as_ref().unwrap().iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > STOCHASTICITY_TOL {
            return Err(ParseError::RowSum {
                state: s,
                action: actions[a].clone(),
                sum,
            });
        }
    }

    let pomdp = Pomdp {
        num_states,
        actions,
        num_obs,
        initial,
        obs_of: obs,
        transitions,
        rewards,
        labels,
    };
    pomdp.validate()?;
    Ok(pomdp)
}

/// Serialises a POMDP back into the model format. Re-parsing the result
/// yields an identical structure.
pub fn serialize_model(pomdp: &Pomdp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "states {}", pomdp.num_states);
    let _ = writeln!(out, "actions {}", pomdp.actions.join(" "));
    let _ = writeln!(out, "observations {}", pomdp.num_obs);
    if let Some(s) = pomdp.initial_state() {
        let _ = writeln!(out, "initial {s}");
    } else {
        let parts: Vec<String> = pomdp
            .initial
            .iter()
            .map(|&(s, p)| format!("{s}:{p}"))
            .collect();
        let _ = writeln!(out, "initial-dist {}", parts.join(" "));
    }
    for s in 0..pomdp.num_states {
        let _ = writeln!(out, "obs {s} {}", pomdp.obs_of[s]);
    }
    for s in 0..pomdp.num_states {
        for a in 0..pomdp.num_actions() {
            if let Some(row) = &pomdp.transitions[s][a] {
                for &(t, p) in row {
                    let _ = writeln!(out, "trans {s} {} {t} {p}", pomdp.actions[a]);
                }
            }
            if pomdp.rewards[s][a] != 0.0 {
                let _ = writeln!(out, "reward {s} {} {}", pomdp.actions[a], pomdp.rewards[s][a]);
            }
        }
    }
    for (name, states) in &pomdp.labels {
        let parts: Vec<String> = states.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "label {name} {}", parts.join(" "));
    }
    out
}

/// Parses a specification: constraint lines followed by one objective line.
/// Lines may also be separated by `;`.
pub fn parse_spec(text: &str) -> Result<Specification, ParseError> {
    let mut constraints = Vec::new();
    let mut objective: Option<Objective> = None;
    let mut lno = 0;
    for raw_line in text.lines() {
        lno += 1;
        for part in strip_comment(raw_line).split(';') {
            let toks: Vec<&str> = part.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            if toks.len() != 4 && toks.len() != 5 {
                return Err(syntax(lno, 1, "expected `P|R >=|<= λ reach <label>` or `P|R max|min reach <label>`"));
            }
            let kind = match toks[0] {
                "P" => PropKind::Probability,
                "R" => PropKind::ExpectedReward,
                other => return Err(syntax(lno, 1, format!("expected `P` or `R`, got `{other}`"))),
            };
            match toks[1] {
                "max" | "min" => {
                    if toks.len() != 4 || toks[2] != "reach" {
                        return Err(syntax(lno, 1, "usage: P|R max|min reach <label>"));
                    }
                    if objective.is_some() {
                        return Err(ParseError::ExtraObjective { line: lno });
                    }
                    objective = Some(Objective {
                        kind,
                        direction: if toks[1] == "max" { OptDir::Max } else { OptDir::Min },
                        label: toks[3].to_string(),
                    });
                }
                rel @ (">=" | "<=") => {
                    if objective.is_some() {
                        // objective must come last
                        return Err(ParseError::ExtraObjective { line: lno });
                    }
                    if toks.len() != 5 || toks[3] != "reach" {
                        return Err(syntax(lno, 1, "usage: P|R >=|<= λ reach <label>"));
                    }
                    let threshold = parse_number(toks[2]).ok_or_else(|| {
                        syntax(lno, token_col(part, 2), format!("bad threshold `{}`", toks[2]))
                    })?;
                    let in_range = match kind {
                        PropKind::Probability => (0.0..=1.0).contains(&threshold),
                        PropKind::ExpectedReward => threshold >= 0.0 && threshold.is_finite(),
                    };
                    if !in_range {
                        return Err(ParseError::ThresholdRange {
                            value: threshold,
                            kind: if kind == PropKind::Probability {
                                "probability".into()
                            } else {
                                "reward".into()
                            },
                            line: lno,
                        });
                    }
                    constraints.push(Constraint {
                        kind,
                        relation: if rel == ">=" { Relation::Geq } else { Relation::Leq },
                        threshold,
                        label: toks[4].to_string(),
                    });
                }
                other => {
                    return Err(syntax(lno, 1, format!("expected `>=`, `<=`, `max` or `min`, got `{other}`")));
                }
            }
        }
    }
    let objective = objective.ok_or(ParseError::MissingObjective)?;
    Ok(Specification {
        constraints,
        objective,
    })
}

/// Parses an FSC file (`nodes k`, then `node obs action next-node` lines)
/// against the given POMDP for action-name resolution.
pub fn parse_fsc(text: &str, pomdp: &Pomdp) -> Result<Fsc, ParseError> {
    let mut k: Option<usize> = None;
    let mut action: Vec<Vec<Option<usize>>> = Vec::new();
    let mut update: Vec<Vec<usize>> = Vec::new();
    for (lno0, raw) in text.lines().enumerate() {
        let lno = lno0 + 1;
        let toks: Vec<&str> = strip_comment(raw).split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "nodes" => {
                if toks.len() != 2 {
                    return Err(syntax(lno, 1, "usage: nodes k"));
                }
                let n: usize = toks[1]
                    .parse()
                    .map_err(|_| syntax(lno, token_col(raw, 1), "expected node count"))?;
                if n == 0 {
                    return Err(syntax(lno, token_col(raw, 1), "node count must be positive"));
                }
                k = Some(n);
                action = vec![vec![None; pomdp.num_obs]; n];
                update = vec![vec![0; pomdp.num_obs]; n];
            }
            _ => {
                let k = k.ok_or_else(|| syntax(lno, 1, "`nodes k` must come first"))?;
                if toks.len() != 4 {
                    return Err(syntax(lno, 1, "usage: node obs action next-node"));
                }
                let n = parse_index(toks[0], k, "node", lno, token_col(raw, 0))?;
                let z = parse_index(toks[1], pomdp.num_obs, "observation", lno, token_col(raw, 1))?;
                let a = pomdp
                    .actions
                    .iter()
                    .position(|name| name == toks[2])
                    .ok_or_else(|| ParseError::Dangling {
                        line: lno,
                        msg: format!("unknown action `{}`", toks[2]),
                    })?;
                let next = parse_index(toks[3], k, "node", lno, token_col(raw, 3))?;
                action[n][z] = Some(a);
                update[n][z] = next;
            }
        }
    }
    let k = k.ok_or_else(|| syntax(1, 1, "missing `nodes` declaration"))?;
    let mut act = vec![vec![0; pomdp.num_obs]; k];
    for n in 0..k {
        for z in 0..pomdp.num_obs {
            match action[n][z] {
                Some(a) => act[n][z] = a,
                None => {
                    // unlisted pairs default to the lowest enabled action
                    let enabled = pomdp.actions_enabled_under_obs(z);
                    act[n][z] = *enabled.first().ok_or_else(|| ParseError::Dangling {
                        line: 0,
                        msg: format!("observation {z} has no action enabled in all its states"),
                    })?;
                }
            }
        }
    }
    Ok(Fsc {
        nodes: k,
        action: act,
        update,
    })
}

/// Serialises an FSC into the export format.
pub fn write_fsc(fsc: &Fsc, pomdp: &Pomdp, value: Option<f64>) -> String {
    let mut out = String::new();
    if let Some(v) = value {
        let _ = writeln!(out, "# value {v}");
    }
    let _ = writeln!(out, "nodes {}", fsc.nodes);
    for n in 0..fsc.nodes {
        for z in 0..pomdp.num_obs {
            let _ = writeln!(
                out,
                "{n} {z} {} {}",
                pomdp.actions[fsc.action[n][z]],
                fsc.update[n][z]
            );
        }
    }
    out
}
