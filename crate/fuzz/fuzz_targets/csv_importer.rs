#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use meltsim::grid::StructuredGrid;
use meltsim::io::{field_from_records, read_field_records};
use meltsim::verify::slab_grid;
use meltsim::UM;

/// 3 x 2 x 3 nodes, matching the seed files.
fn grid() -> &'static StructuredGrid {
    static GRID: OnceLock<StructuredGrid> = OnceLock::new();
    GRID.get_or_init(|| slab_grid(2, 20.0 * UM, 2, 20.0 * UM).expect("valid slab"))
}

fuzz_target!(|data: &[u8]| {
    let Ok(records) = read_field_records(data) else {
        return;
    };
    assert!(records.iter().all(|r| r.temperature.is_finite() && r.time.is_finite()));
    if let Ok(field) = field_from_records(&records, grid()) {
        assert_eq!(field.temperature.len(), grid().node_count());
    }
});
