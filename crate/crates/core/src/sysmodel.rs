//! System configuration, array geometry, hardware impairments and
//! frequency-dependent steering vectors.
//!
//! Subcarrier `k` of `K` sits at `f_k = f_c + delta_f(k)` with
//! `delta_f(k) = -1/(2 T_s) + k/(K T_s)`. Steering vectors come in two
//! flavours: the ideal frequency-dependent response of a nominal ULA, and the
//! impaired response that additionally carries per-element location errors,
//! gain/phase errors and mutual coupling.

use crate::real::{rf, Real};
use crate::{CMat, CVec, C};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Which end of the link an array-level quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Tx,
    Rx,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("subcarrier index {index} out of range (K = {k})")]
    SubcarrierOutOfRange { index: usize, k: usize },
    #[error("angle {0} rad outside [-pi/2, pi/2]")]
    AngleOutOfRange(f64),
    #[error("impairment dimensions do not match the array sizes")]
    DimensionMismatch,
    #[error("invalid system configuration: {0}")]
    BadConfig(String),
}

/// OFDM/array geometry parameters shared by every stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig<T: Real> {
    /// Carrier frequency in Hz.
    pub f_c: T,
    /// Sampling period in seconds.
    pub t_s: T,
    /// Number of subcarriers.
    pub k: usize,
    /// Pulse roll-off factor in [0, 1].
    pub beta: T,
    /// Transmit / receive antenna counts.
    pub n_t: usize,
    pub n_r: usize,
    /// Transmit / receive RF-chain counts.
    pub l_t: usize,
    pub l_r: usize,
    /// Number of data streams.
    pub n_s: usize,
    /// Nominal antenna spacings in meters.
    pub d_t: T,
    pub d_r: T,
}

impl<T: Real> SystemConfig<T> {
    /// Config with half-wavelength spacing on both arrays.
    #[allow(clippy::too_many_arguments)]
    pub fn half_wavelength(
        f_c: T,
        t_s: T,
        k: usize,
        beta: T,
        n_t: usize,
        n_r: usize,
        l_t: usize,
        l_r: usize,
        n_s: usize,
    ) -> Self {
        let d = rf::<T>(SPEED_OF_LIGHT) / f_c / rf::<T>(2.0);
        Self {
            f_c,
            t_s,
            k,
            beta,
            n_t,
            n_r,
            l_t,
            l_r,
            n_s,
            d_t: d,
            d_r: d,
        }
    }

    pub fn lambda_c(&self) -> T {
        rf::<T>(SPEED_OF_LIGHT) / self.f_c
    }

    pub fn antennas(&self, side: Side) -> usize {
        match side {
            Side::Tx => self.n_t,
            Side::Rx => self.n_r,
        }
    }

    pub fn spacing(&self, side: Side) -> T {
        match side {
            Side::Tx => self.d_t,
            Side::Rx => self.d_r,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 || self.n_t == 0 || self.n_r == 0 || self.l_t == 0 || self.l_r == 0 {
            return Err(ModelError::BadConfig("all counts must be >= 1".into()));
        }
        if self.n_s > self.l_t.min(self.l_r) {
            return Err(ModelError::BadConfig(
                "stream count exceeds min RF-chain count".into(),
            ));
        }
        if self.beta < T::zero() || self.beta > T::one() {
            return Err(ModelError::BadConfig("roll-off must lie in [0, 1]".into()));
        }
        if self.f_c <= T::zero() || self.t_s <= T::zero() {
            return Err(ModelError::BadConfig(
                "carrier frequency and sampling period must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Baseband frequency offset of subcarrier `k`.
pub fn delta_f<T: Real>(cfg: &SystemConfig<T>, k: usize) -> Result<T, ModelError> {
    if k >= cfg.k {
        return Err(ModelError::SubcarrierOutOfRange { index: k, k: cfg.k });
    }
    let half = T::one() / (rf::<T>(2.0) * cfg.t_s);
    Ok(rf::<T>(k as f64) / (rf::<T>(cfg.k as f64) * cfg.t_s) - half)
}

/// Absolute frequency of subcarrier `k`.
pub fn f_k<T: Real>(cfg: &SystemConfig<T>, k: usize) -> Result<T, ModelError> {
    Ok(cfg.f_c + delta_f(cfg, k)?)
}

/// Per-side hardware impairments: mutual coupling, gain/phase errors and
/// antenna location errors.
///
/// Coupling matrices are symmetric (`C = C^T`), the first location error on
/// each side is normalized to zero, and gain magnitudes are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareImpairments<T: Real> {
    pub c_t: CMat<T>,
    pub c_r: CMat<T>,
    pub gamma_t: CVec<T>,
    pub gamma_r: CVec<T>,
    pub eps_t: Vec<T>,
    pub eps_r: Vec<T>,
}

impl<T: Real> HardwareImpairments<T> {
    /// No impairments: identity coupling, unit gains, zero location errors.
    pub fn identity(cfg: &SystemConfig<T>) -> Self {
        let one = C::new(T::one(), T::zero());
        Self {
            c_t: CMat::identity(cfg.n_t, cfg.n_t),
            c_r: CMat::identity(cfg.n_r, cfg.n_r),
            gamma_t: CVec::from_element(cfg.n_t, one),
            gamma_r: CVec::from_element(cfg.n_r, one),
            eps_t: vec![T::zero(); cfg.n_t],
            eps_r: vec![T::zero(); cfg.n_r],
        }
    }

    pub fn coupling(&self, side: Side) -> &CMat<T> {
        match side {
            Side::Tx => &self.c_t,
            Side::Rx => &self.c_r,
        }
    }

    pub fn gain_phase(&self, side: Side) -> &CVec<T> {
        match side {
            Side::Tx => &self.gamma_t,
            Side::Rx => &self.gamma_r,
        }
    }

    pub fn location_errors(&self, side: Side) -> &[T] {
        match side {
            Side::Tx => &self.eps_t,
            Side::Rx => &self.eps_r,
        }
    }

    /// Combined gain/coupling distortion `diag(gamma) * C` for one side.
    pub fn distortion_matrix(&self, side: Side) -> CMat<T> {
        let c = self.coupling(side);
        let g = self.gain_phase(side);
        let mut out = c.clone();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] *= g[i];
            }
        }
        out
    }

    pub fn validate(&self, cfg: &SystemConfig<T>) -> Result<(), ModelError> {
        if self.c_t.nrows() != cfg.n_t
            || self.c_t.ncols() != cfg.n_t
            || self.c_r.nrows() != cfg.n_r
            || self.c_r.ncols() != cfg.n_r
            || self.gamma_t.len() != cfg.n_t
            || self.gamma_r.len() != cfg.n_r
            || self.eps_t.len() != cfg.n_t
            || self.eps_r.len() != cfg.n_r
        {
            return Err(ModelError::DimensionMismatch);
        }
        Ok(())
    }
}

/// Draw ranges for [`sample_impairments`]; all deviations are maxima of
/// uniform draws, so all-zero ranges reproduce the identity impairments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpairmentRanges<T: Real> {
    /// Max gain deviation: |gamma| drawn in [1 - dev, 1 + dev].
    pub gain_dev: T,
    /// Max phase error in radians.
    pub phase_dev: T,
    /// Off-diagonal coupling magnitude bounds.
    pub coupling_min: T,
    pub coupling_max: T,
    /// Max antenna location error in meters.
    pub location_dev: T,
}

impl<T: Real> ImpairmentRanges<T> {
    /// Reference ranges: 5% gain, 20 deg phase, coupling in [0.01, 0.4],
    /// location errors within a tenth of a wavelength.
    pub fn reference(lambda_c: T) -> Self {
        Self {
            gain_dev: rf::<T>(0.05),
            phase_dev: rf::<T>(20.0) * T::pi() / rf::<T>(180.0),
            coupling_min: rf::<T>(0.01),
            coupling_max: rf::<T>(0.4),
            location_dev: rf::<T>(0.1) * lambda_c,
        }
    }

    pub fn zero() -> Self {
        Self {
            gain_dev: T::zero(),
            phase_dev: T::zero(),
            coupling_min: T::zero(),
            coupling_max: T::zero(),
            location_dev: T::zero(),
        }
    }
}

/// Sorted angle grid in radians, uniform in `sin(angle)` over [-1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid<T: Real> {
    values: Vec<T>,
}

impl<T: Real> AngleGrid<T> {
    /// `size` angles with sines at `-1 + 2 i / size`, mapped through asin.
    pub fn uniform_sin(size: usize) -> Self {
        assert!(size >= 1);
        let values = (0..size)
            .map(|i| (rf::<T>(-1.0) + rf::<T>(2.0 * i as f64) / rf::<T>(size as f64)).asin())
            .collect();
        Self { values }
    }

    pub fn from_values(values: Vec<T>) -> Result<Self, ModelError> {
        let half_pi = T::pi() / rf::<T>(2.0);
        for w in values.windows(2) {
            if w[1] <= w[0] {
                return Err(ModelError::BadConfig("angle grid not increasing".into()));
            }
        }
        if values
            .iter()
            .any(|&a| a < -half_pi || a > half_pi)
        {
            return Err(ModelError::BadConfig("angle outside [-pi/2, pi/2]".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

fn check_angle<T: Real>(angle: T) -> Result<(), ModelError> {
    let half_pi = T::pi() / rf::<T>(2.0);
    // Allow a hair of slack so asin(±1) round-trips.
    if angle.abs() > half_pi * (T::one() + rf::<T>(1e-12)) {
        return Err(ModelError::AngleOutOfRange(
            angle.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(())
}

/// Ideal frequency-dependent ULA steering vector at subcarrier `k`.
///
/// Entry `n` is `(1/sqrt(N)) exp(-j 2 pi f_k n d sin(angle) / c)`.
pub fn steer_ideal<T: Real>(
    cfg: &SystemConfig<T>,
    side: Side,
    k: usize,
    angle: T,
) -> Result<CVec<T>, ModelError> {
    check_angle(angle)?;
    let n = cfg.antennas(side);
    let d = cfg.spacing(side);
    let fk = f_k(cfg, k)?;
    let scale = T::one() / rf::<T>(n as f64).sqrt();
    let c_light = rf::<T>(SPEED_OF_LIGHT);
    let rate = -rf::<T>(2.0) * T::pi() * fk * d * angle.sin() / c_light;
    Ok(CVec::from_fn(n, |i, _| {
        let phase = rate * rf::<T>(i as f64);
        C::new(phase.cos() * scale, phase.sin() * scale)
    }))
}

/// Unit-modulus location-error phase profile at the carrier frequency.
///
/// Entry `n` is `exp(-j 2 pi f_c eps_n sin(angle) / c)`; this is the
/// frequency-flat factor the dictionary model attributes to spacing errors.
pub fn location_error_factor<T: Real>(
    f_c: T,
    eps: &[T],
    angle: T,
) -> Result<CVec<T>, ModelError> {
    check_angle(angle)?;
    let c_light = rf::<T>(SPEED_OF_LIGHT);
    let rate = -rf::<T>(2.0) * T::pi() * f_c * angle.sin() / c_light;
    Ok(CVec::from_fn(eps.len(), |i, _| {
        let phase = rate * eps[i];
        C::new(phase.cos(), phase.sin())
    }))
}

/// Impaired steering vector `diag(gamma) C a_check`, where `a_check` carries
/// the location errors at the full subcarrier frequency (exact form, not the
/// carrier-only approximation).
pub fn steer_impaired<T: Real>(
    cfg: &SystemConfig<T>,
    imp: &HardwareImpairments<T>,
    side: Side,
    k: usize,
    angle: T,
) -> Result<CVec<T>, ModelError> {
    check_angle(angle)?;
    imp.validate(cfg)?;
    let n = cfg.antennas(side);
    let d = cfg.spacing(side);
    let eps = imp.location_errors(side);
    let fk = f_k(cfg, k)?;
    let scale = T::one() / rf::<T>(n as f64).sqrt();
    let c_light = rf::<T>(SPEED_OF_LIGHT);
    let rate = -rf::<T>(2.0) * T::pi() * fk * angle.sin() / c_light;
    let bare = CVec::from_fn(n, |i, _| {
        let phase = rate * (rf::<T>(i as f64) * d + eps[i]);
        C::new(phase.cos() * scale, phase.sin() * scale)
    });
    let mut out = imp.coupling(side) * bare;
    let g = imp.gain_phase(side);
    for i in 0..n {
        out[i] *= g[i];
    }
    Ok(out)
}

/// Draw a random impairment set satisfying the structural invariants:
/// symmetric coupling with unit diagonal and off-diagonal magnitudes inside
/// the configured band (decaying with element separation, random phase),
/// positive gains, and location errors with the first element pinned to zero.
pub fn sample_impairments<T: Real, R: Rng + ?Sized>(
    cfg: &SystemConfig<T>,
    ranges: &ImpairmentRanges<T>,
    rng: &mut R,
) -> HardwareImpairments<T> {
    let two_pi = rf::<T>(2.0) * T::pi();
    let coupling = |n: usize, rng: &mut R| -> CMat<T> {
        let mut c = CMat::identity(n, n);
        if ranges.coupling_max <= T::zero() {
            return c;
        }
        let base = T::uniform(rng, ranges.coupling_min, ranges.coupling_max);
        let decay = T::uniform(rng, rf(0.3), rf(0.7));
        for i in 0..n {
            for j in (i + 1)..n {
                let sep = (j - i) as f64;
                let mut mag = base * decay.powi(sep as i32 - 1);
                if mag < ranges.coupling_min {
                    mag = ranges.coupling_min;
                }
                let phase = T::uniform(rng, T::zero(), two_pi);
                let v = C::new(mag * phase.cos(), mag * phase.sin());
                c[(i, j)] = v;
                c[(j, i)] = v; // symmetric, not Hermitian
            }
        }
        c
    };
    let gains = |n: usize, rng: &mut R| -> CVec<T> {
        CVec::from_fn(n, |_, _| {
            let g = T::one() + T::uniform(rng, -ranges.gain_dev, ranges.gain_dev);
            let p = T::uniform(rng, -ranges.phase_dev, ranges.phase_dev);
            C::new(g * p.cos(), g * p.sin())
        })
    };
    let eps = |n: usize, rng: &mut R| -> Vec<T> {
        (0..n)
            .map(|i| {
                if i == 0 {
                    T::zero()
                } else {
                    T::uniform(rng, -ranges.location_dev, ranges.location_dev)
                }
            })
            .collect()
    };
    // Fixed draw order keeps a given seed reproducible.
    let c_t = coupling(cfg.n_t, rng);
    let c_r = coupling(cfg.n_r, rng);
    let gamma_t = gains(cfg.n_t, rng);
    let gamma_r = gains(cfg.n_r, rng);
    let eps_t = eps(cfg.n_t, rng);
    let eps_r = eps(cfg.n_r, rng);
    HardwareImpairments {
        c_t,
        c_r,
        gamma_t,
        gamma_r,
        eps_t,
        eps_r,
    }
}
