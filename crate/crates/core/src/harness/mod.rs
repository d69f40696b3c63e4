//! Synthetic instances with planted ground truth, and brute-force oracles.

pub mod oracle;
pub mod rng;
pub mod synth;

pub use oracle::{ct_oracle, ot_oracle_exact, ot_oracle_exact_cost};
pub use rng::SynthRng;
pub use synth::{generate_instance, random_workload, write_instance, Instance, SynthParams};
