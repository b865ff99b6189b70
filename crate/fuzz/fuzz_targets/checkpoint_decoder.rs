#![no_main]

use libfuzzer_sys::fuzz_target;
use meltsim::io::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok((model, adam)) = decode_checkpoint(data) else {
        return;
    };
    let bytes = encode_checkpoint(&model, adam.as_ref()).expect("decoded checkpoint re-encodes");
    let (model2, adam2) = decode_checkpoint(&bytes).expect("re-encoded checkpoint decodes");
    assert_eq!(model.flatten(), model2.flatten());
    assert_eq!(adam.is_some(), adam2.is_some());
});
