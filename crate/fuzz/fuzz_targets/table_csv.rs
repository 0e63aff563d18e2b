#![no_main]

use lcm_ident::io::{parse_table_csv, table_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_table_csv(text) {
        let again = parse_table_csv(&table_to_csv(&table)).expect("serialized table parses");
        assert_eq!(again, table);
    }
});
