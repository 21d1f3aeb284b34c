//! Holds the `acceptance` test target, which prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails. It lives in its own package so
//! that `cargo test --workspace` runs every other suite before it.
