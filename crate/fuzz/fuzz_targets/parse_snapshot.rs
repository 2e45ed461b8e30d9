#![no_main]

use active_sysid::estimator::PosteriorState;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(state) = PosteriorState::from_snapshot_json(text) {
            let again = PosteriorState::from_snapshot_json(&state.to_snapshot_json()).expect("re-encoded snapshot decodes");
            assert_eq!(again.d(), state.d());
            assert_eq!(again.m(), state.m());
        }
    }
});
