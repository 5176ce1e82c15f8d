//! Behavioral simulation of memristor crossbar weight matrices.
//!
//! Two crossbar configurations are modeled:
//!
//! * **voltage mode**: columns are driven by voltages and each weight is the
//!   device conductance normalized by `G_max`;
//! * **current mode**: columns are driven by currents and each weight is the
//!   device conductance divided by the total conductance of its column, so
//!   every column of the weight matrix sums to one.
//!
//! On top of the device model the crate provides mapping of arbitrary target
//! matrices onto column-normalized crossbars ([`mapping`]), crossbar-backed
//! feedforward networks ([`network`]), gradient rules that act directly on
//! conductances ([`training`]), stuck-device defect studies ([`defects`]),
//! data loading ([`dataset`]) and the experiment drivers used by the `xbar`
//! command line tool ([`experiment`]).

pub mod dataset;
pub mod defects;
pub mod device;
pub mod error;
pub mod experiment;
pub mod mapping;
pub mod network;
pub mod stats;
pub mod training;

pub use dataset::Sample;
pub use defects::DefectMask;
pub use device::{CrossbarState, DeviceModel, Mode, WeightMatrix};
pub use error::{Error, Result};
pub use mapping::{BoxBounds, TargetWeights};
pub use network::{Activation, Encoding, Layer, LayerConfig, Mlp};
pub use training::{Rule, TrainConfig, TrainReport};
