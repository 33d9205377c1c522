//! Delay–frequency distortion of the combined transmit/receive filter.
//!
//! Sampling a delayed band-limited pulse at the symbol rate and taking a DFT
//! leaves each subcarrier with a factor `g(k, tau) * exp(-j 2 pi delta_f_k
//! tau)`. Inside the flat part of the spectrum (`2 |delta_f_k| <= (1 -
//! beta)/T_s`, the *central* subcarriers) `g` is delay-independent; on the
//! roll-off edges (*side* subcarriers) one spectral alias contributes a
//! delay-dependent term. This module evaluates `g` for the raised-cosine
//! closed form and for arbitrary tabulated spectra, and builds the
//! per-antenna-pair distortion matrices.

use crate::real::{rf, Real};
use crate::sysmodel::{delta_f, SystemConfig, SPEED_OF_LIGHT};
use crate::{CMat, C};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("tabulated spectrum does not cover frequency {0} Hz")]
    TableOutOfRange(f64),
    #[error("tabulated spectrum needs at least two increasing frequency points")]
    BadTable,
    #[error("pulse parameters disagree with system config (beta/T_s)")]
    ConfigMismatch,
    #[error("per-antenna delay is not finite")]
    NonFiniteDelay,
    #[error(transparent)]
    Model(#[from] crate::sysmodel::ModelError),
}

/// Sampled Fourier transform of the combined pulse on an increasing
/// frequency grid. Values are real (symmetric real pulse).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabulatedSpectrum<T: Real> {
    freqs: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> TabulatedSpectrum<T> {
    pub fn new(freqs: Vec<T>, values: Vec<T>) -> Result<Self, PulseError> {
        if freqs.len() < 2 || freqs.len() != values.len() {
            return Err(PulseError::BadTable);
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PulseError::BadTable);
        }
        Ok(Self { freqs, values })
    }

    /// Uniformly sample the raised-cosine spectrum over its full support.
    pub fn raised_cosine(beta: T, t_s: T, points: usize) -> Self {
        let half = (T::one() + beta) / (rf::<T>(2.0) * t_s);
        let n = points.max(2);
        let freqs: Vec<T> = (0..n)
            .map(|i| -half + rf::<T>(2.0) * half * rf::<T>(i as f64) / rf::<T>((n - 1) as f64))
            .collect();
        let values = freqs
            .iter()
            .map(|&f| raised_cosine_spectrum(f, beta, t_s))
            .collect();
        Self { freqs, values }
    }

    /// Parse a two-column CSV (`frequency_hz,value`); `#`-prefixed lines and
    /// a non-numeric header row are skipped.
    pub fn from_csv_str(text: &str) -> Result<Self, PulseError> {
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(PulseError::BadTable);
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(f), Ok(v)) => {
                    freqs.push(rf::<T>(f));
                    values.push(rf::<T>(v));
                }
                // Tolerate one header row.
                _ if freqs.is_empty() => continue,
                _ => return Err(PulseError::BadTable),
            }
        }
        Self::new(freqs, values)
    }

    /// Raw table view: `(frequencies, values)`.
    pub fn raw(&self) -> (&[T], &[T]) {
        (&self.freqs, &self.values)
    }

    /// Linear interpolation; zero outside the tabulated span is rejected so
    /// silent truncation cannot masquerade as band-limiting.
    fn eval(&self, f: T) -> Result<T, PulseError> {
        let n = self.freqs.len();
        if f < self.freqs[0] || f > self.freqs[n - 1] {
            return Err(PulseError::TableOutOfRange(f.to_f64().unwrap_or(f64::NAN)));
        }
        // Binary search for the bracketing interval.
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.freqs[mid] <= f {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (f0, f1) = (self.freqs[lo], self.freqs[hi]);
        let (v0, v1) = (self.values[lo], self.values[hi]);
        let t = (f - f0) / (f1 - f0);
        Ok(v0 + (v1 - v0) * t)
    }
}

/// Which evaluation path `g` takes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PulseKind<T: Real> {
    /// Raised cosine with the closed-form branch values.
    RaisedCosine,
    /// Generic band-limited spectrum, evaluated through the alias sum.
    Tabulated(TabulatedSpectrum<T>),
}

/// Combined transmit/receive pulse description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseSpec<T: Real> {
    pub kind: PulseKind<T>,
    pub beta: T,
    pub t_s: T,
}

impl<T: Real> PulseSpec<T> {
    pub fn raised_cosine(cfg: &SystemConfig<T>) -> Self {
        Self {
            kind: PulseKind::RaisedCosine,
            beta: cfg.beta,
            t_s: cfg.t_s,
        }
    }

    pub fn tabulated(cfg: &SystemConfig<T>, table: TabulatedSpectrum<T>) -> Self {
        Self {
            kind: PulseKind::Tabulated(table),
            beta: cfg.beta,
            t_s: cfg.t_s,
        }
    }

    pub fn validate_against(&self, cfg: &SystemConfig<T>) -> Result<(), PulseError> {
        let close = |a: T, b: T| (a - b).abs() <= rf::<T>(1e-9) * (a.abs() + b.abs() + T::one());
        if close(self.beta, cfg.beta) && close(self.t_s, cfg.t_s) {
            Ok(())
        } else {
            Err(PulseError::ConfigMismatch)
        }
    }

    /// `F(p)[f] / T_s` through whichever spectrum this spec carries.
    fn spectrum_over_ts(&self, f: T) -> Result<T, PulseError> {
        match &self.kind {
            PulseKind::RaisedCosine => Ok(raised_cosine_spectrum(f, self.beta, self.t_s) / self.t_s),
            PulseKind::Tabulated(tab) => Ok(tab.eval(f)? / self.t_s),
        }
    }
}

/// Raised-cosine spectrum `F(p)[f]` with unit in-band value `T_s`.
pub fn raised_cosine_spectrum<T: Real>(f: T, beta: T, t_s: T) -> T {
    let af = f.abs();
    let flat_edge = (T::one() - beta) / (rf::<T>(2.0) * t_s);
    let outer_edge = (T::one() + beta) / (rf::<T>(2.0) * t_s);
    if af <= flat_edge {
        t_s
    } else if af <= outer_edge && beta > T::zero() {
        let arg = T::pi() * t_s / beta * (af - flat_edge);
        t_s / rf::<T>(2.0) * (T::one() + arg.cos())
    } else {
        T::zero()
    }
}

/// Delay–frequency distortion `g(k, tau)`.
///
/// Three branches keyed on `2 delta_f_k` against `(1 - beta)/T_s`: flat band,
/// upper roll-off (alias from `delta_f_k - 1/T_s`), lower roll-off (alias
/// from `delta_f_k + 1/T_s`). Any finite `tau` is accepted; per-antenna
/// delays may dip below zero.
pub fn g<T: Real>(
    pulse: &PulseSpec<T>,
    cfg: &SystemConfig<T>,
    k: usize,
    tau: T,
) -> Result<C<T>, PulseError> {
    if !tau.is_finite() {
        return Err(PulseError::NonFiniteDelay);
    }
    let df = delta_f(cfg, k)?;
    let edge = (T::one() - pulse.beta) / pulse.t_s;
    let two_df = rf::<T>(2.0) * df;
    let two_pi_tau = rf::<T>(2.0) * T::pi() * tau / pulse.t_s;
    if two_df.abs() <= edge {
        return Ok(C::new(pulse.spectrum_over_ts(df)?, T::zero()));
    }
    match &pulse.kind {
        PulseKind::RaisedCosine => {
            // Closed form: (1/2)(1 + e^{±j 2 pi tau/T_s}
            //               + (1 - e^{±j 2 pi tau/T_s}) cos(pi T_s/beta (|df| - (1-beta)/(2 T_s)))).
            let sign = if two_df > edge { T::one() } else { -T::one() };
            let rot = C::new((sign * two_pi_tau).cos(), (sign * two_pi_tau).sin());
            let flat_edge = (T::one() - pulse.beta) / (rf::<T>(2.0) * pulse.t_s);
            let cosv = (T::pi() * pulse.t_s / pulse.beta * (df.abs() - flat_edge)).cos();
            let one = C::new(T::one(), T::zero());
            Ok((one + rot + (one - rot) * C::new(cosv, T::zero()))
                * C::new(rf::<T>(0.5), T::zero()))
        }
        PulseKind::Tabulated(_) => {
            let main = pulse.spectrum_over_ts(df)?;
            let inv_ts = T::one() / pulse.t_s;
            let (alias_f, rot) = if two_df > edge {
                (df - inv_ts, C::new(two_pi_tau.cos(), two_pi_tau.sin()))
            } else {
                (df + inv_ts, C::new(two_pi_tau.cos(), -two_pi_tau.sin()))
            };
            let alias = pulse.spectrum_over_ts(alias_f)?;
            Ok(C::new(main, T::zero()) + C::new(alias, T::zero()) * rot)
        }
    }
}

/// In-band gain `F(p)[delta_f_k]/T_s` (exactly 1 for the raised cosine on
/// central subcarriers).
pub fn central_gain<T: Real>(
    pulse: &PulseSpec<T>,
    cfg: &SystemConfig<T>,
    k: usize,
) -> Result<T, PulseError> {
    pulse.spectrum_over_ts(delta_f(cfg, k)?)
}

/// Central/side index partition of the subcarrier grid.
///
/// `k` is central iff `2 |delta_f_k| <= (1 - beta)/T_s`; boundary
/// subcarriers count as central since the flat-band value is exact there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcarrierPartition {
    pub central: Vec<usize>,
    pub side: Vec<usize>,
}

impl SubcarrierPartition {
    pub fn is_central(&self, k: usize) -> bool {
        self.central.binary_search(&k).is_ok()
    }
}

pub fn partition<T: Real>(cfg: &SystemConfig<T>) -> SubcarrierPartition {
    let edge = (T::one() - cfg.beta) / cfg.t_s;
    let mut central = Vec::new();
    let mut side = Vec::new();
    for k in 0..cfg.k {
        let df = delta_f(cfg, k).expect("k in range");
        if (rf::<T>(2.0) * df).abs() <= edge {
            central.push(k);
        } else {
            side.push(k);
        }
    }
    SubcarrierPartition { central, side }
}

/// Per-antenna-pair propagation delay: path delay plus the spatial delay
/// across both apertures, including location errors.
#[inline]
pub fn pair_delay<T: Real>(
    cfg: &SystemConfig<T>,
    eps_r: &[T],
    eps_t: &[T],
    tau: T,
    aoa: T,
    aod: T,
    n_r: usize,
    n_t: usize,
) -> T {
    let c_light = rf::<T>(SPEED_OF_LIGHT);
    tau + (rf::<T>(n_r as f64) * cfg.d_r + eps_r[n_r]) * aoa.sin() / c_light
        - (rf::<T>(n_t as f64) * cfg.d_t + eps_t[n_t]) * aod.sin() / c_light
}

/// Distortion matrix: entry `(n_r, n_t)` is `g(k, tau_{n_r,n_t})` with the
/// per-antenna delays of [`pair_delay`]. Location-error slices may be zeros
/// when the caller models a nominal array.
#[allow(clippy::too_many_arguments)]
pub fn distortion_matrix<T: Real>(
    pulse: &PulseSpec<T>,
    cfg: &SystemConfig<T>,
    eps_r: &[T],
    eps_t: &[T],
    k: usize,
    tau: T,
    aoa: T,
    aod: T,
) -> Result<CMat<T>, PulseError> {
    let mut out = CMat::zeros(cfg.n_r, cfg.n_t);
    for nt in 0..cfg.n_t {
        for nr in 0..cfg.n_r {
            let d = pair_delay(cfg, eps_r, eps_t, tau, aoa, aod, nr, nt);
            out[(nr, nt)] = g(pulse, cfg, k, d)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::sysmodel::{sample_impairments, ImpairmentRanges};
    use approx::assert_relative_eq;

    fn cfg() -> SystemConfig<f64> {
        SystemConfig::half_wavelength(28e9, 1e-9, 64, 0.25, 8, 4, 2, 2, 2)
    }

    #[test]
    fn partition_counts_match_rolloff() {
        let c = cfg();
        let p = partition(&c);
        // |K_cen| is floor((1-beta) K) up to the boundary subcarrier.
        let target = ((1.0 - c.beta) * c.k as f64).floor() as i64;
        assert!((p.central.len() as i64 - target).abs() <= 1);
        assert_eq!(p.central.len() + p.side.len(), c.k);
        for k in &p.central {
            assert!(p.is_central(*k));
        }
        for k in &p.side {
            assert!(!p.is_central(*k));
        }
    }

    #[test]
    fn partition_limit_cases() {
        let mut c = cfg();
        c.beta = 0.0;
        let p = partition(&c);
        assert_eq!(p.central.len(), c.k);
        assert!(p.side.is_empty());
        c.beta = 1.0;
        let p = partition(&c);
        // Only delta_f = 0 passes 2|df| <= 0.
        assert_eq!(p.central, vec![c.k / 2]);
    }

    #[test]
    fn g_is_one_on_central_subcarriers() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        let p = partition(&c);
        for &k in &p.central {
            for tau in [0.0, 0.3e-9, 2.7e-9, 15.9e-9] {
                let v = g(&pulse, &c, k, tau).unwrap();
                assert_relative_eq!((v - C::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn g_is_one_at_zero_delay_everywhere() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        for k in 0..c.k {
            let v = g(&pulse, &c, k, 0.0).unwrap();
            assert_relative_eq!((v - C::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn closed_form_matches_tabulated_branch() {
        let c = cfg();
        let rc = PulseSpec::raised_cosine(&c);
        let tab = PulseSpec::tabulated(
            &c,
            TabulatedSpectrum::raised_cosine(c.beta, c.t_s, (1 << 20) + 1),
        );
        // Includes the delay 0.5 T_s at delta_f = +0.45/T_s from the worked
        // side-subcarrier case: k with df = 0.45 GHz is k = 0.95*64 = 60.8,
        // so sweep all k and a tau grid instead of a single point.
        for k in (0..c.k).step_by(3) {
            for i in 0..17 {
                let tau = 0.5e-9 * i as f64 / 4.0;
                let a = g(&rc, &c, k, tau).unwrap();
                let b = g(&tab, &c, k, tau).unwrap();
                assert!((a - b).norm() < 1e-10, "k={k} tau={tau}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn g_periodic_in_tau() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        for k in [0usize, 5, 60, 63] {
            for tau in [0.13e-9, 0.77e-9, 3.4e-9] {
                let a = g(&pulse, &c, k, tau).unwrap();
                let b = g(&pulse, &c, k, tau + c.t_s).unwrap();
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn g_magnitude_bounded_by_one() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        for k in 0..c.k {
            for i in 0..32 {
                let tau = c.t_s * i as f64 / 32.0;
                assert!(g(&pulse, &c, k, tau).unwrap().norm() <= 1.0 + 1e-13);
            }
        }
    }

    #[test]
    fn branches_agree_at_partition_boundary() {
        // At 2|df| = (1-beta)/T_s the roll-off cosine equals 1 and the side
        // expression collapses to the flat-band value.
        let mut c = cfg();
        // Choose K so some delta_f lands exactly on the boundary:
        // df = (1-beta)/(2 T_s) = 0.375 GHz needs k/K = 0.875 -> k = 56.
        c.beta = 0.25;
        let pulse = PulseSpec::raised_cosine(&c);
        let df = delta_f(&c, 56).unwrap();
        assert_relative_eq!(df, 0.375e9, max_relative = 1e-12);
        for tau in [0.0, 0.4e-9, 1.3e-9] {
            //

            let flat = C::new(1.0, 0.0);
            // Evaluate the side-branch formula by hand at the boundary.
            let rot = C::from_polar(1.0, 2.0 * std::f64::consts::PI * tau / c.t_s);
            let cosv = 1.0; // cos(0)
            let side = (C::new(1.0, 0.0) + rot + (C::new(1.0, 0.0) - rot) * cosv) * 0.5;
            assert!((side - flat).norm() < 1e-14);
            assert!((g(&pulse, &c, 56, tau).unwrap() - flat).norm() < 1e-13);
        }
    }

    #[test]
    fn g_conjugate_symmetric_in_frequency() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        for k in 1..c.k {
            let k_mirror = c.k - k;
            if k_mirror >= c.k {
                continue;
            }
            let dfa = delta_f(&c, k).unwrap();
            let dfb = delta_f(&c, k_mirror).unwrap();
            assert_relative_eq!(dfa, -dfb, epsilon = 1.0);
            for tau in [0.21e-9, 0.9e-9] {
                let a = g(&pulse, &c, k, tau).unwrap();
                let b = g(&pulse, &c, k_mirror, tau).unwrap();
                assert!((a - b.conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn distortion_matrix_cases() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        let p = partition(&c);
        let zr = vec![0.0; c.n_r];
        let zt = vec![0.0; c.n_t];
        // Central: all-ones regardless of geometry.
        let m = distortion_matrix(&pulse, &c, &zr, &zt, p.central[3], 4.2e-9, 0.7, -0.4).unwrap();
        assert!(m.iter().all(|z| (z - C::new(1.0, 0.0)).norm() < 1e-13));
        // Broadside both sides: constant matrix g(k, tau).
        let k_side = p.side[0];
        let tau = 1.9e-9;
        let m = distortion_matrix(&pulse, &c, &zr, &zt, k_side, tau, 0.0, 0.0).unwrap();
        let expect = g(&pulse, &c, k_side, tau).unwrap();
        assert!(m.iter().all(|z| (z - expect).norm() < 1e-13));
    }

    #[test]
    fn distortion_matrix_matches_per_pair_oracle() {
        let c = cfg();
        let pulse = PulseSpec::raised_cosine(&c);
        let ranges = ImpairmentRanges::reference(c.lambda_c());
        let imp = sample_impairments(&c, &ranges, &mut seed::stream(5, "imp", 9));
        let (k, tau, aoa, aod) = (62usize, 2.3e-9, 0.55, -1.0);
        let m =
            distortion_matrix(&pulse, &c, &imp.eps_r, &imp.eps_t, k, tau, aoa, aod).unwrap();
        for nt in 0..c.n_t {
            for nr in 0..c.n_r {
                let d = tau
                    + (nr as f64 * c.d_r + imp.eps_r[nr]) * aoa.sin() / SPEED_OF_LIGHT
                    - (nt as f64 * c.d_t + imp.eps_t[nt]) * aod.sin() / SPEED_OF_LIGHT;
                let expect = g(&pulse, &c, k, d).unwrap();
                assert!((m[(nr, nt)] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn csv_loader_round_trips() {
        let table = TabulatedSpectrum::<f64>::raised_cosine(0.25, 1e-9, 64);
        let mut text = String::from("freq_hz,value\n");
        for (f, v) in table.freqs.iter().zip(&table.values) {
            text.push_str(&format!("{f:.9e},{v:.9e}\n"));
        }
        let parsed = TabulatedSpectrum::<f64>::from_csv_str(&text).unwrap();
        assert_eq!(parsed.freqs.len(), 64);
        let probe = 0.31e9;
        assert_relative_eq!(
            parsed.eval(probe).unwrap(),
            table.eval(probe).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn tabulated_rejects_out_of_range() {
        let c = cfg();
        // Table covering only half the needed span: side subcarriers need
        // the alias frequency near -(1+beta)/(2 T_s).
        let tab = TabulatedSpectrum::<f64>::new(vec![-0.3e9, 0.3e9], vec![1e-9, 1e-9]).unwrap();
        let pulse = PulseSpec::tabulated(&c, tab);
        let err = g(&pulse, &c, 63, 0.4e-9);
        assert!(matches!(err, Err(PulseError::TableOutOfRange(_))));
    }
}
