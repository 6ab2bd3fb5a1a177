//! Meta-learned Bayesian optimization for adapting designs to individual
//! users under changing multi-objective preferences.

pub mod acquisition;
pub mod bench;
pub mod config;
pub mod design_space;
pub mod error;
pub mod gp;
pub mod naf;
pub mod nn;
pub mod optimizers;
pub mod novelty;
pub mod ppo;
pub mod seed;
pub mod stats;
pub mod users;

pub use design_space::{make_grid, DesignGrid, DesignSpace, ObjectiveWeights};
pub use error::{Error, Result};
