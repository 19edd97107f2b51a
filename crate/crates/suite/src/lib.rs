//! Acceptance checks for `docaug`. Everything lives in `tests/acceptance.rs`;
//! run it with `cargo test -p docaug-suite --test acceptance`.
