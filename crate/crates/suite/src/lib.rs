//! Holds the end-to-end acceptance test target (`tests/acceptance.rs`).
//! Kept in its own package so it runs after every other test binary.
