#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;

use fscsynth::model::Pomdp;
use fscsynth::parse::{parse_fsc, parse_model};

fn maze() -> &'static Pomdp {
    static MAZE: OnceLock<Pomdp> = OnceLock::new();
    MAZE.get_or_init(|| parse_model(include_str!("../../models/maze.pomdp")).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let pomdp = maze();
    if let Ok(fsc) = parse_fsc(text, pomdp) {
        // accepted controllers always have full, in-range tables
        assert!(fsc.nodes >= 1);
        assert_eq!(fsc.action.len(), fsc.nodes);
        assert_eq!(fsc.update.len(), fsc.nodes);
        for n in 0..fsc.nodes {
            assert_eq!(fsc.action[n].len(), pomdp.num_obs);
            assert_eq!(fsc.update[n].len(), pomdp.num_obs);
            for z in 0..pomdp.num_obs {
                assert!(fsc.action[n][z] < pomdp.actions.len());
                assert!(fsc.update[n][z] < fsc.nodes);
            }
        }
    }
});
