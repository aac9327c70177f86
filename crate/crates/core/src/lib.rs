pub mod error;
pub mod lindblad;
pub mod rng;
pub mod special;
pub mod spectral;
pub mod units;
pub mod bayes;
pub mod dynamics;
pub mod sim;
pub mod protocol;
pub mod fit;
pub mod config;
pub mod io;
