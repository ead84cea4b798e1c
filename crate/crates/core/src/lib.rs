//! Mesh-free weak solutions of first-order Friedrichs systems.
//!
//! A solution network is trained against an adversarial test network on the
//! ratio `|(u, T̃v) − (f, v) + ∮ vᵀ𝓑u| / ‖T̃v‖`, which vanishes exactly at
//! weak solutions. Everything is sampled: no mesh is built.

pub mod autodiff;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod problems;
pub mod quadrature;
pub mod sampler;
pub mod system;
pub mod trainer;
pub mod verify;
