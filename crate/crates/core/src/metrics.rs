//! Evaluation metrics: NMSE, spectral efficiency with SVD precoding from the
//! estimate, and QPSK bit error rate under per-subcarrier MMSE detection.

use crate::channel::ChannelFD;
use crate::linalg;
use crate::real::{rf, Real};
use crate::{CMat, CVec, C};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// dB floor reported when the estimate matches the truth exactly.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Normalized mean squared error in dB, aggregated over all subcarriers as a
/// single energy ratio.
pub fn nmse<T: Real>(h_true: &ChannelFD<T>, h_est: &ChannelFD<T>) -> T {
    assert_eq!(h_true.k(), h_est.k(), "subcarrier count mismatch");
    let mut num = T::zero();
    let mut den = T::zero();
    for (a, b) in h_est.h.iter().zip(&h_true.h) {
        num += linalg::fro2(&(a - b));
        den += linalg::fro2(b);
    }
    assert!(den > T::zero(), "zero true channel");
    let ratio = num / den;
    if ratio <= T::zero() {
        return rf::<T>(NMSE_FLOOR_DB);
    }
    let db = rf::<T>(10.0) * ratio.log10();
    if db < rf::<T>(NMSE_FLOOR_DB) {
        rf::<T>(NMSE_FLOOR_DB)
    } else {
        db
    }
}

/// Dominant `n_s` left/right singular vectors of a matrix.
fn dominant_subspaces<T: Real>(m: &CMat<T>, n_s: usize) -> (CMat<T>, CMat<T>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let u_s = u.columns(0, n_s).into_owned();
    let v_s = vt.rows(0, n_s).adjoint();
    (u_s, v_s)
}

/// Spectral efficiency in bits/s/Hz: fully-digital precoding/combining with
/// the `n_s` dominant singular vectors of the *estimate*, applied to the
/// *true* channel, equal power per stream, log base 2.
pub fn spectral_efficiency<T: Real>(
    h_true: &ChannelFD<T>,
    h_est: &ChannelFD<T>,
    snr: T,
    n_s: usize,
) -> T {
    assert_eq!(h_true.k(), h_est.k());
    assert!(n_s <= h_true.n_r().min(h_true.n_t()));
    let k_count = h_true.k();
    let mut acc = T::zero();
    for k in 0..k_count {
        let (u_s, v_s) = dominant_subspaces(&h_est.h[k], n_s);
        let h_eff = u_s.adjoint() * &h_true.h[k] * v_s;
        let sv = h_eff.svd(false, false).singular_values;
        for n in 0..n_s.min(sv.len()) {
            acc += (T::one() + snr / rf::<T>(n_s as f64) * sv[n] * sv[n]).log2();
        }
    }
    acc / rf::<T>(k_count as f64)
}

/// QPSK-over-MMSE bit error rate.
///
/// Per subcarrier: precoder/combiner are the `n_s` dominant singular vectors
/// of the estimate; the effective true channel carries `n_symbols` Gray-
/// mapped QPSK vectors at the given SNR; the MMSE equalizer uses the true
/// (unit) noise variance. Returns `(ber, standard_error)`.
pub fn ber_qpsk_mmse<T: Real, R: Rng + ?Sized>(
    h_true: &ChannelFD<T>,
    h_est: &ChannelFD<T>,
    snr: T,
    n_s: usize,
    n_symbols: usize,
    rng: &mut R,
) -> (T, T) {
    assert_eq!(h_true.k(), h_est.k());
    let k_count = h_true.k();
    let half = rf::<T>(0.5);
    let inv_sqrt2 = T::one() / rf::<T>(2.0).sqrt();
    let gain = (snr / rf::<T>(n_s as f64)).sqrt();
    let mut errors = 0u64;
    let mut bits = 0u64;
    for k in 0..k_count {
        let (u_s, v_s) = dominant_subspaces(&h_est.h[k], n_s);
        let a = (u_s.adjoint() * &h_true.h[k] * v_s) * C::new(gain, T::zero());
        // MMSE equalizer with unit-variance noise: (A^* A + I)^{-1} A^*.
        let gram = a.adjoint() * &a + CMat::identity(n_s, n_s);
        let eq = match gram.clone().cholesky() {
            Some(ch) => ch.inverse() * a.adjoint(),
            None => linalg::pinv(&gram) * a.adjoint(),
        };
        for _ in 0..n_symbols {
            let s = CVec::from_fn(n_s, |_, _| {
                let re = if T::uniform(rng, T::zero(), T::one()) < half {
                    inv_sqrt2
                } else {
                    -inv_sqrt2
                };
                let im = if T::uniform(rng, T::zero(), T::one()) < half {
                    inv_sqrt2
                } else {
                    -inv_sqrt2
                };
                C::new(re, im)
            });
            let noise = CVec::from_fn(n_s, |_, _| {
                C::new(
                    T::std_normal(rng) * inv_sqrt2,
                    T::std_normal(rng) * inv_sqrt2,
                )
            });
            let y = &a * &s + noise;
            let s_hat = &eq * y;
            for n in 0..n_s {
                // Gray-mapped QPSK: independent signs on I and Q.
                if (s_hat[n].re > T::zero()) != (s[n].re > T::zero()) {
                    errors += 1;
                }
                if (s_hat[n].im > T::zero()) != (s[n].im > T::zero()) {
                    errors += 1;
                }
                bits += 2;
            }
        }
    }
    let p = rf::<T>(errors as f64) / rf::<T>(bits as f64);
    let stderr = (p * (T::one() - p) / rf::<T>(bits as f64)).sqrt();
    (p, stderr)
}

/// One evaluated operating point, as appended to the results CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub snr_db: f64,
    pub m_symbols: usize,
    pub dictionary: String,
    pub estimator: String,
    pub seed: u64,
    pub nmse_db: f64,
    pub se: f64,
    pub ber: f64,
    pub ber_stderr: f64,
    pub wall_ms: f64,
    pub realizations: usize,
}

/// Fixed CSV header for [`MetricReport`] rows.
pub const CSV_HEADER: &str =
    "snr_db,m_symbols,dictionary,estimator,seed,nmse_db,se,ber,ber_stderr,wall_ms";

impl MetricReport {
    /// One CSV row under [`CSV_HEADER`]. All numeric fields except the wall
    /// time are formatted with fixed precision so identical runs emit
    /// identical bytes.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6e},{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.3}",
            self.snr_db,
            self.m_symbols,
            self.dictionary,
            self.estimator,
            self.seed,
            self.nmse_db,
            self.se,
            self.ber,
            self.ber_stderr,
            self.wall_ms
        )
    }
}
