//! Detection of radio-frequency interference and jamming in uniform
//! rectangular antenna arrays.
//!
//! The processing chain is: simulate array snapshots ([`sim`]), estimate the
//! spatial correlation and fold it onto redundant baselines ([`correlation`]),
//! form 2-D DFT dirty images over azimuth/elevation ([`imaging`]), assemble
//! image sequences ([`dataset`]), train a sparse LSTM autoencoder on clean
//! sequences ([`autoencoder`]) and flag sequences whose reconstruction error
//! exceeds a training percentile ([`detector`]).

pub mod array;
pub mod autoencoder;
pub mod correlation;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod imaging;
pub mod pipeline;
pub mod seed;
pub mod sim;

pub use array::{ArrayGeometry, Direction};
pub use error::{Error, Result};
pub use num_complex::Complex64;
