//! Truncated polynomial expansion (TPE) precoding for massive MIMO.
//!
//! Channel synthesis from cluster scattering geometries, large-system moment
//! recursions, optimal TPE weights, uplink/downlink duality, power control,
//! reference precoders and an FPGA latency model. The numerical core is generic
//! over [`Real`]; `f64` aliases live at the crate root.

pub mod asymptotics;
pub mod baselines;
pub mod channel;
pub mod duality;
pub mod error;
pub mod harness;
pub mod latency;
pub mod power_control;
pub mod scalar;
pub mod tpe;

pub use error::{Error, Result};
pub use scalar::{CMat, CVec, Real};

pub type SystemConfig = channel::SystemConfig<f64>;
pub type ScatteringGeometry = channel::ScatteringGeometry<f64>;
pub type CovarianceModel = channel::CovarianceModel<f64>;
pub type VarianceProfile = channel::VarianceProfile<f64>;
pub type ChannelRealization = channel::ChannelRealization<f64>;
pub type MomentTable = asymptotics::MomentTable<f64>;
pub type TpeQuadratics = tpe::TpeQuadratics<f64>;
pub type TpeWeights = tpe::TpeWeights<f64>;
pub type PrecoderMatrix = tpe::PrecoderMatrix<f64>;
pub type DualityCoupling = duality::DualityCoupling<f64>;
pub type ZareiModel = baselines::ZareiModel<f64>;
pub type Complex64 = num_complex::Complex<f64>;
