//! PPO with a visitation-divergence regularizer estimated by a DICE-style
//! discriminator, plus exact tabular computations used to check it.

pub mod autodiff;
pub mod divergence;
pub mod error;
pub mod mdp;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod ppo;
pub mod regularizer;
pub mod space;
pub mod train;

pub use error::{Error, Result};
