#![no_main]

use libfuzzer_sys::fuzz_target;

use fscsynth::parse::{parse_model, serialize_model};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(pomdp) = parse_model(text) {
        pomdp.validate().expect("accepted models are well-formed");
        // serialization must round-trip every accepted model
        let again = parse_model(&serialize_model(&pomdp)).expect("round-trip parses");
        assert_eq!(pomdp, again);
    }
});
