#![no_main]

use htp_core::trajectory_csv::{parse_tracks, write_tracks};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(tracks) = parse_tracks(data, "fuzz") else {
        return;
    };
    // Whatever parses must survive a write and re-read unchanged.
    let mut out = Vec::new();
    write_tracks(&mut out, &tracks).unwrap();
    let again = parse_tracks(out.as_slice(), "fuzz-roundtrip").unwrap();
    assert_eq!(tracks, again);
});
