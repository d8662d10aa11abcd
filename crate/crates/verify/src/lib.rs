//! Holds the acceptance suite (`tests/acceptance.rs`) and its data fixtures.
