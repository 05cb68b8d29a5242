//! Monte-Carlo cross-check of the induced-chain analysis: episode
//! simulation of the maze under its optimal controller must agree with
//! the linear-algebra visit counts and value within 1% relative.

mod common;

use std::collections::HashMap;
use std::time::Duration;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fscsynth::checker::expected_visits;
use fscsynth::family::{induced_mc, Fsc, MemoryModel, ProductState};
use fscsynth::inner::Budget;
use fscsynth::model::{normalize_initial, Pomdp};
use fscsynth::outer::{synthesize, OuterConfig};
use fscsynth::parse::{parse_model, parse_spec};

const EPISODES: usize = 1_000_000;

fn sample<'a, R: Rng>(rng: &mut R, dist: &'a [(usize, f64)]) -> usize {
    let mut u: f64 = rng.gen();
    for &(s, p) in dist {
        if u < p {
            return s;
        }
        u -= p;
    }
    dist.last().expect("non-empty distribution").0
}

fn optimal_maze_fsc(pomdp: &Pomdp) -> (Fsc, f64, MemoryModel) {
    let spec = parse_spec("R min reach goal").unwrap();
    let cfg = OuterConfig::default();
    let budget = Budget::with_timeout(Duration::from_secs(120));
    let out = synthesize(pomdp, &spec, &cfg, &budget, &mut |_, _, _| {}, &mut |_| {}).unwrap();
    let inc = out.incumbent.expect("admissible controller");
    (inc.fsc, inc.value, out.memory)
}

#[test]
fn monte_carlo_agrees_with_linear_visit_analysis() {
    let raw = parse_model(include_str!("../../../models/maze.pomdp")).unwrap();
    let (fsc, value, memory) = optimal_maze_fsc(&raw);
    // the controller is defined over the normalized model: its bootstrap
    // row fixes the memory node in which episodes start
    let pomdp = normalize_initial(&raw);
    let targets = pomdp.target_mask("goal").unwrap();
    let bootstrap_obs = pomdp.num_obs - 1;
    let entry_node = fsc.update[0][bootstrap_obs];

    let product = induced_mc(&pomdp, &fsc, &memory, &targets).unwrap();
    let visits = expected_visits(&product.mc).unwrap();
    let index: HashMap<(usize, usize), usize> = product
        .states
        .iter()
        .enumerate()
        .filter_map(|(i, ps)| match *ps {
            ProductState::Pair { state, node } => Some(((state, node), i)),
            ProductState::Bootstrap => None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x51u64);
    let mut sim_visits: HashMap<(usize, usize), f64> = HashMap::new();
    let mut total_steps = 0u64;
    for _ in 0..EPISODES {
        let mut s = sample(&mut rng, &raw.initial);
        let mut n = if entry_node < memory.budget[pomdp.obs_of[s]] {
            entry_node
        } else {
            0
        };
        let mut steps = 0usize;
        while !targets[s] {
            *sim_visits.entry((s, n)).or_default() += 1.0;
            let z = pomdp.obs_of[s];
            let a = fsc.action[n][z];
            let next_n = fsc.update[n][z];
            s = sample(
                &mut rng,
                pomdp.transitions[s][a].as_ref().expect("enabled action"),
            );
            // a memory update into an invalid node of the next observation
            // falls back to node 0
            n = if next_n < memory.budget[pomdp.obs_of[s]] {
                next_n
            } else {
                0
            };
            steps += 1;
            assert!(steps < 100_000, "episode did not terminate");
        }
        total_steps += steps as u64;
    }

    let sim_value = total_steps as f64 / EPISODES as f64;
    assert!(
        (sim_value - value).abs() <= 0.01 * value,
        "simulated {sim_value} vs analysed {value}"
    );

    for (&(s, n), &count) in &sim_visits {
        let expected = visits.at(index[&(s, n)]);
        let simulated = count / EPISODES as f64;
        // skip thin mass: relative agreement is only meaningful with
        // enough samples
        if expected < 0.05 {
            continue;
        }
        assert!(
            (simulated - expected).abs() <= 0.01 * expected,
            "visits at state {s} node {n}: simulated {simulated} vs {expected}"
        );
    }
}
