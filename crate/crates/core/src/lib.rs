//! Soft-LIF networks: train rate-based networks whose nonlinearity is a
//! smoothed leaky integrate-and-fire response curve, convert them with
//! identical parameters into spiking networks with alpha synapses, simulate
//! them, and estimate their energy cost on neuromorphic hardware.

pub mod convert;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod model_io;
pub mod network;
pub mod neuron;
pub mod rng;
pub mod sim;
pub mod synapse;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
