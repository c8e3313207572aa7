//! Cost-driven caching for pay-per-use clouds: closed-form policy costs,
//! workload generation, and a discrete-event simulator with an exact
//! storage/compute/transmission ledger.

pub mod analytic;
pub mod cli;
pub mod engine;
pub mod policies;
pub mod workload;
