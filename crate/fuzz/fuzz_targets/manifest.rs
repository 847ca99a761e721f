#![no_main]

use htp_core::data::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = DatasetManifest::parse(text) {
        let again = DatasetManifest::parse(&m.to_toml()).unwrap();
        assert_eq!(m.split.len(), again.split.len());
    }
});
