//! Simulation and analysis toolkit for NV-center ODMR sensing.
//!
//! The numeric kernels are generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`, which is what the CLI and the
//! file formats use.

pub mod config;
pub mod fit;
pub mod io;
pub mod linalg;
pub mod lindblad;
pub mod scalar;
pub mod sensing;
pub mod signal;
pub mod spin;

pub use scalar::Real;

pub type SpinOperators = spin::SpinOperators<f64>;
pub type NvParams = spin::NvParams<f64>;
pub type Orientation = spin::Orientation<f64>;
pub type FieldEnvironment = spin::FieldEnvironment<f64>;
pub type LatticeModel = spin::LatticeModel<f64>;
pub type Transitions = spin::Transitions<f64>;
pub type DensityMatrix = lindblad::DensityMatrix<f64>;
pub type DissipatorSpec = lindblad::DissipatorSpec<f64>;
pub type SweepConfig = lindblad::SweepConfig<f64>;
pub type OdmrSpectrum = lindblad::OdmrSpectrum<f64>;
pub type EmgParams = fit::EmgParams<f64>;
pub type TwoPeakFit = fit::TwoPeakFit<f64>;
pub type TimeSeries = signal::TimeSeries<f64>;
pub type ModulationSpec = signal::ModulationSpec<f64>;
pub type ContrastImage = signal::ContrastImage<f64>;
pub type EmissionTable = signal::EmissionTable<f64>;
pub type Emitter = signal::Emitter<f64>;
pub type LinearCalibration = sensing::LinearCalibration<f64>;
pub type CalibrationPoint = sensing::CalibrationPoint<f64>;
pub type SensitivityInput = sensing::SensitivityInput<f64>;

pub use config::{ExperimentConfig, RunManifest};
