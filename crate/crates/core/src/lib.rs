//! Simulation and analysis of biphoton frequency combs from a microring
//! source: spectral model, pair and detection events, coincidence counting,
//! Franson interference, grating dispersion and Schmidt analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlator;
pub mod dispersion;
pub mod error;
pub mod events;
pub mod franson;
pub mod jsi;
pub mod rng;
pub mod schmidt;
pub mod spectral;
pub mod state;
pub mod tagio;
pub mod units;

pub use error::{Error, Result};
pub use events::{Channel, ChannelConfig, Gate, SourceConfig, TimeTag, Truth};
pub use jsi::{JsiMatrix, JsiNormalization};
pub use spectral::{RingParams, SidebandWeights, WeightModel};
pub use state::{BiphotonState, CorrelationCurve};
