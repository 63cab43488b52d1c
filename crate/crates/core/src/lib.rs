pub mod fields;
pub mod gaussian;
pub mod harness;
pub mod integrator;
pub mod lattice;
pub mod rng;
pub mod stats;
