//! Trajectory-level style transfer for adapting cutting policies from a
//! simulator to a perturbed target domain.
//!
//! The pipeline: simulate source episodes ([`cutsim`]), window them
//! ([`trajdata`]), train a convolutional VAE ([`vae`]), pair source and target
//! windows in latent space ([`pairing`]), synthesise adapted windows by
//! optimising content and Gram-matrix style losses ([`styletx`]), retrain the
//! policy by behavioural cloning ([`adapt`]) and compare strategies
//! ([`evalstat`]). [`pipeline`] strings the stages together on disk.

pub mod adapt;
pub mod cutsim;
pub mod error;
pub mod evalstat;
pub mod gradsuite;
pub mod io;
pub mod matrix;
pub mod numkern;
pub mod pairing;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod styletx;
pub mod trajdata;
pub mod vae;

pub use error::{Error, ErrorClass, Result};
pub use matrix::Matrix;
pub use par::Exec;
