//! Hybrid wideband mmWave MIMO channel simulation under hardware impairments
//! and beam squint, with compressive channel estimation and dictionary
//! learning.
//!
//! The library is organized around the life cycle of one experiment:
//!
//! * [`sysmodel`] — system configuration, array geometry, hardware
//!   impairments and frequency-dependent steering vectors;
//! * [`pulse`] — the delay–frequency distortion of the combined
//!   transmit/receive filter and the central/side subcarrier partition;
//! * [`channel`] — frequency-domain channel synthesis plus an independent
//!   time-domain oracle;
//! * [`sounding`] — random hybrid training, sensing-matrix assembly, noise
//!   whitening and least-squares initial estimates;
//! * [`estimator`] — greedy sparse channel estimation (distortion-aware OMP
//!   over beam-squint dictionaries);
//! * [`dictlearn`] — alternating sparse coding / gradient-descent learning of
//!   the impairment-related dictionary factors;
//! * [`metrics`] — NMSE, spectral efficiency and QPSK/MMSE bit error rate.
//!
//! All numeric code is generic over the real scalar via [`real::Real`];
//! the aliases below fix the default double-precision instantiation.

pub mod channel;
pub mod dictlearn;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pulse;
pub mod real;
pub mod seed;
pub mod sounding;
pub mod sysmodel;

pub use real::{rf, Real};

/// Generic complex scalar.
pub type C<T> = num_complex::Complex<T>;
/// Generic dynamically-sized complex matrix (column-major storage).
pub type CMat<T> = nalgebra::DMatrix<C<T>>;
/// Generic dynamically-sized complex column vector.
pub type CVec<T> = nalgebra::DVector<C<T>>;
/// Generic dynamically-sized real column vector.
pub type RVec<T> = nalgebra::DVector<T>;

/// Default real scalar for applications and the CLI.
pub type F = f64;
/// Default complex scalar.
pub type C64 = C<F>;
/// Default complex matrix.
pub type CMat64 = CMat<F>;
/// Default complex vector.
pub type CVec64 = CVec<F>;
