//! Property-based checks over seeded random models: serialization
//! round-trips, initial-distribution normalization is value-preserving,
//! the running optimum tightens monotonically, and quotient bounds
//! enclose member values.

mod common;

use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fscsynth::checker::{eval_mc, solve_mdp_masked};
use fscsynth::family::{induced_mc, make_reduced_family, quotient_mdp, Fsc, MemoryModel};
use fscsynth::inner::RunningOptimum;
use fscsynth::model::{normalize_initial, OptDir, Pomdp, PropKind};
use fscsynth::parse::{parse_model, serialize_model};

use common::random_pomdp;

fn seeded(seed: u64) -> (ChaCha8Rng, Pomdp) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pomdp = random_pomdp(&mut rng);
    (rng, pomdp)
}

/// A random memoryless controller over the model's enabled actions.
fn random_fsc(rng: &mut ChaCha8Rng, pomdp: &Pomdp) -> Fsc {
    let family = make_reduced_family(pomdp, &MemoryModel::uniform(pomdp.num_obs, 1));
    let assignment: Vec<usize> = family
        .domains
        .iter()
        .map(|d| *d.choose(rng).unwrap())
        .collect();
    family.member(&assignment)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_serialization_round_trips(seed in any::<u64>()) {
        let (_, pomdp) = seeded(seed);
        let reparsed = parse_model(&serialize_model(&pomdp)).unwrap();
        prop_assert_eq!(pomdp, reparsed);
    }

    #[test]
    fn normalize_initial_preserves_values(seed in any::<u64>()) {
        let (mut rng, pomdp) = seeded(seed);
        let normalized = normalize_initial(&pomdp);
        if pomdp.has_point_initial() {
            prop_assert_eq!(&pomdp, &normalized);
            return Ok(());
        }
        prop_assert_eq!(normalized.num_states, pomdp.num_states + 1);
        prop_assert_eq!(normalized.num_obs, pomdp.num_obs + 1);
        let memory = MemoryModel::uniform(pomdp.num_obs, 1);
        let memory_n = MemoryModel::uniform(normalized.num_obs, 1);
        let fsc = random_fsc(&mut rng, &pomdp);
        // the same controller, extended with the forced bootstrap row
        let mut fsc_n = fsc.clone();
        fsc_n.action[0].push(normalized.actions.len() - 1);
        fsc_n.update[0].push(0);
        for label in pomdp.labels.keys() {
            let mask = pomdp.target_mask(label).unwrap();
            let mask_n = normalized.target_mask(label).unwrap();
            let mut prod = induced_mc(&pomdp, &fsc, &memory, &mask).unwrap();
            prod.set_targets(&mask);
            let mut prod_n = induced_mc(&normalized, &fsc_n, &memory_n, &mask_n).unwrap();
            prod_n.set_targets(&mask_n);
            for kind in [PropKind::Probability, PropKind::ExpectedReward] {
                let v = eval_mc(&prod.mc, kind).unwrap().at(prod.mc.initial);
                let v_n = eval_mc(&prod_n.mc, kind).unwrap().at(prod_n.mc.initial);
                let same = (v - v_n).abs() <= 1e-9 * (1.0 + v.abs())
                    || (v.is_infinite() && v_n.is_infinite());
                prop_assert!(same, "label {label} {kind:?}: raw {v} normalized {v_n}");
            }
        }
    }

    #[test]
    fn running_optimum_tightens_monotonically(
        direction in prop_oneof![Just(OptDir::Max), Just(OptDir::Min)],
        values in prop::collection::vec(-1e6..1e6f64, 1..40),
    ) {
        let mut opt = RunningOptimum::trivial(direction, 0.0, 0.0);
        let mut accepted: Vec<f64> = Vec::new();
        for v in values {
            if opt.beats(v) {
                opt.value = Some(v);
                accepted.push(v);
            }
        }
        let monotone = accepted.windows(2).all(|w| match direction {
            OptDir::Max => w[1] > w[0],
            OptDir::Min => w[1] < w[0],
        });
        prop_assert!(monotone);
        if let Some(&last) = accepted.last() {
            prop_assert!(!opt.beats(last));
        }
    }

    #[test]
    fn quotient_bounds_enclose_member_values(seed in any::<u64>()) {
        let (mut rng, pomdp) = seeded(seed);
        let pomdp = normalize_initial(&pomdp);
        let family = make_reduced_family(&pomdp, &MemoryModel::uniform(pomdp.num_obs, 1));
        let targets = pomdp.target_mask("goal").unwrap();
        let mut quotient = quotient_mdp(&pomdp, &family);
        quotient.set_targets(&targets);
        let mask = quotient.action_mask(&family);
        for kind in [PropKind::Probability, PropKind::ExpectedReward] {
            let (hi, _) = solve_mdp_masked(&quotient.mdp, OptDir::Max, kind, Some(&mask)).unwrap();
            let (lo, _) = solve_mdp_masked(&quotient.mdp, OptDir::Min, kind, Some(&mask)).unwrap();
            let hi = hi.at(quotient.mdp.initial);
            let lo = lo.at(quotient.mdp.initial);
            for _ in 0..5 {
                let fsc = random_fsc(&mut rng, &pomdp);
                let mut prod = induced_mc(&pomdp, &fsc, &family.base.memory, &targets).unwrap();
                prod.set_targets(&targets);
                let v = eval_mc(&prod.mc, kind).unwrap().at(prod.mc.initial);
                prop_assert!(
                    v <= hi + 1e-6 * (1.0 + hi.abs()) || hi.is_infinite(),
                    "{kind:?}: member {v} above quotient max {hi}"
                );
                prop_assert!(
                    v >= lo - 1e-6 * (1.0 + lo.abs()) || v.is_infinite(),
                    "{kind:?}: member {v} below quotient min {lo}"
                );
            }
        }
    }
}
