//! Acceptance criteria for `mvpure`. Run with `cargo test -p mvpure-validation`.
