//! Simulator for dual-comb spectroscopy with an entangled (two-mode squeezed)
//! signal comb: Gaussian pair states, comb construction, gas absorption,
//! heterodyne detection, interferogram DSP and advantage metrics.
//!
//! Quadratures are in shot-noise units, so vacuum variance is 1.

pub mod absorption;
pub mod comb;
pub mod detection;
pub mod dsp;
pub mod error;
pub mod gaussian;
pub mod metrics;
mod optim;
pub mod units;
pub mod voigt;

pub use absorption::{FitResult, GasCell, MeasuredPoint, SpectralLine};
pub use comb::{CombConfig, EntangledComb, EntangledCombSpec, PairSqueezing, SqueezingProfile};
pub use detection::{BeatnoteRecord, DetectionImperfections};
pub use dsp::{Interferogram, Spectrum, SynthesisConfig, Window};
pub use error::{EdcsError, Result};
pub use gaussian::{PairState, QuadratureSelector};
pub use metrics::{Experiment, SpeedupResult, UarSweepResult};
