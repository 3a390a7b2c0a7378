//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line for its
//! criterion (written straight to stdout so it shows up even when output is captured).

mod cli;
mod gradients;
mod losses;
mod metrics;
mod operators;
mod support;
