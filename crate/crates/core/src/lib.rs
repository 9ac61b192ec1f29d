pub mod cli;
pub mod eval;
pub mod flat;
pub mod loss;
pub mod model;
pub mod pairs;
pub mod perturb;
pub mod rng;
pub mod suite;
