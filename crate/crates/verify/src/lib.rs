//! Holds the workspace acceptance suite (`tests/acceptance.rs`).
