pub mod bidding;
pub mod cli;
pub mod counterfactual;
pub mod demand;
pub mod error;
pub mod linalg;
pub mod market_data;
pub mod seeds;
pub mod supply;

pub use error::{Error, Result};
