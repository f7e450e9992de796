//! ECG motion-artifact denoising and inter-beat-interval estimation.
//!
//! Pipeline: [`ingest`] WFDB records → [`sigproc`] resample/normalise/window →
//! [`noisemix`] SNR-controlled noise ladders → [`tiramisu`] FC-DenseNet 1D
//! denoiser → [`beats`] R-peaks and IBIs → [`evalkit`] metrics and reports.

pub mod beats;
pub mod error;
pub mod evalkit;
pub mod ingest;
pub mod noisemix;
pub mod sigproc;
pub mod tiramisu;

pub use error::{Error, ErrorKind, Result};
