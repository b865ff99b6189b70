#![no_main]

use libfuzzer_sys::fuzz_target;
use meltsim::io::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = RunConfig::from_toml_str(text) else {
        return;
    };
    // Anything accepted must serialize and parse back to the same config.
    let again = config.to_toml_string().expect("accepted config serializes");
    let reparsed = RunConfig::from_toml_str(&again).expect("serialized config parses");
    assert_eq!(config, reparsed);
});
