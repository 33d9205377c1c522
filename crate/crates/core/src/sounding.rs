//! Training-phase measurement generation: random hybrid precoders and
//! combiners, sensing-matrix assembly, noise injection with the impaired
//! combiner covariance, whitening, and least-squares initial estimates.

use crate::channel::ChannelFD;
use crate::linalg::{self, hermitian_inv_sqrt};
use crate::real::{rf, Real};
use crate::sysmodel::{HardwareImpairments, ModelError, Side, SystemConfig};
use crate::{CMat, CVec, C};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SoundingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("whitening factor singular after {0} redraws")]
    SingularWhitener(usize),
    #[error("dimension mismatch between sounding set and input")]
    DimensionMismatch,
}

/// Per-symbol training quantities plus the stacked sensing matrix and its
/// block-diagonal whitening factor.
#[derive(Debug, Clone)]
pub struct SoundingSet<T: Real> {
    /// Per-symbol precoders `N_T x L_T`.
    pub f: Vec<CMat<T>>,
    /// Per-symbol combiners `N_R x L_R`.
    pub w: Vec<CMat<T>>,
    /// Per-symbol training vectors `L_T`.
    pub q: Vec<CVec<T>>,
    /// Impairment-distorted combiners `(diag(gamma_R) C_R)^* W_m`.
    pub w_breve: Vec<CMat<T>>,
    /// Whitening blocks `(w_breve^* w_breve)^{-1/2}`, one per symbol.
    pub l_w: Vec<CMat<T>>,
    /// Stacked sensing matrix, `M L_R x N_R N_T`.
    pub phi: CMat<T>,
    /// Whitened sensing matrix `L_w phi`.
    pub phi_w: CMat<T>,
    /// Training spreading factor (noise variance divisor).
    pub spreading: usize,
}

impl<T: Real> SoundingSet<T> {
    pub fn symbols(&self) -> usize {
        self.w.len()
    }

    pub fn l_r(&self) -> usize {
        self.w.first().map_or(0, CMat::ncols)
    }

    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }

    /// Apply the block-diagonal whitening factor to a stacked vector.
    pub fn whiten(&self, y: &CVec<T>) -> CVec<T> {
        let l_r = self.l_r();
        assert_eq!(y.len(), self.rows(), "whiten: length mismatch");
        let mut out = CVec::zeros(y.len());
        for (m, block) in self.l_w.iter().enumerate() {
            let seg = y.rows(m * l_r, l_r).into_owned();
            let w = block * seg;
            out.rows_mut(m * l_r, l_r).copy_from(&w);
        }
        out
    }
}

/// Stacked per-subcarrier measurements from one location.
#[derive(Debug, Clone)]
pub struct MeasurementSet<T: Real> {
    /// One `M L_R` vector per subcarrier.
    pub y: Vec<CVec<T>>,
    /// Noise variance before spreading.
    pub sigma2: T,
    pub spreading: usize,
    /// Location index `u` the measurements were taken at.
    pub location: usize,
}

fn unit_modulus_matrix<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> CMat<T> {
    let scale = T::one() / rf::<T>(rows as f64).sqrt();
    let two_pi = rf::<T>(2.0) * T::pi();
    CMat::from_fn(rows, cols, |_, _| {
        let p = T::uniform(rng, T::zero(), two_pi);
        C::new(p.cos() * scale, p.sin() * scale)
    })
}

/// Draw a sounding set: phase-only training entries scaled `1/sqrt(N)`,
/// unit-norm training vectors, sensing blocks `q_m^T F_m^T kron W_m^*` and
/// whitening blocks from the impaired combiners. A symbol whose whitener is
/// singular is redrawn a bounded number of times.
pub fn gen_sounding<T: Real, R: Rng + ?Sized>(
    cfg: &SystemConfig<T>,
    imp: &HardwareImpairments<T>,
    m_symbols: usize,
    spreading: usize,
    rng: &mut R,
) -> Result<SoundingSet<T>, SoundingError> {
    imp.validate(cfg)?;
    assert!(m_symbols >= 1 && spreading >= 1);
    let n = cfg.n_r * cfg.n_t;
    let dist_r = imp.distortion_matrix(Side::Rx);
    let mut f = Vec::with_capacity(m_symbols);
    let mut w = Vec::with_capacity(m_symbols);
    let mut q = Vec::with_capacity(m_symbols);
    let mut w_breve = Vec::with_capacity(m_symbols);
    let mut l_w = Vec::with_capacity(m_symbols);
    let mut phi = CMat::<T>::zeros(m_symbols * cfg.l_r, n);
    let mut phi_w = phi.clone();
    for m in 0..m_symbols {
        let f_m = unit_modulus_matrix(cfg.n_t, cfg.l_t, rng);
        let q_scale = T::one() / rf::<T>(cfg.l_t as f64).sqrt();
        let two_pi = rf::<T>(2.0) * T::pi();
        let q_m = CVec::from_fn(cfg.l_t, |_, _| {
            let p = T::uniform(rng, T::zero(), two_pi);
            C::new(p.cos() * q_scale, p.sin() * q_scale)
        });
        let mut w_m = unit_modulus_matrix(cfg.n_r, cfg.l_r, rng);
        let mut breve = dist_r.adjoint() * &w_m;
        let mut lw_m = hermitian_inv_sqrt(&(breve.adjoint() * &breve));
        let mut retries = 0usize;
        while lw_m.is_none() {
            retries += 1;
            if retries > 8 {
                return Err(SoundingError::SingularWhitener(retries));
            }
            w_m = unit_modulus_matrix(cfg.n_r, cfg.l_r, rng);
            breve = dist_r.adjoint() * &w_m;
            lw_m = hermitian_inv_sqrt(&(breve.adjoint() * &breve));
        }
        let lw_m = lw_m.unwrap();
        // Sensing block: row l_r, column (n_t * N_R + n_r) holds
        // [F_m q_m]_{n_t} * conj(W_m[n_r, l_r]).
        let b = &f_m * &q_m;
        for lr in 0..cfg.l_r {
            for nt in 0..cfg.n_t {
                for nr in 0..cfg.n_r {
                    phi[(m * cfg.l_r + lr, nt * cfg.n_r + nr)] = b[nt] * w_m[(nr, lr)].conj();
                }
            }
        }
        let block = phi.rows(m * cfg.l_r, cfg.l_r).into_owned();
        let wh = &lw_m * block;
        phi_w.rows_mut(m * cfg.l_r, cfg.l_r).copy_from(&wh);
        f.push(f_m);
        w.push(w_m);
        q.push(q_m);
        w_breve.push(breve);
        l_w.push(lw_m);
    }
    Ok(SoundingSet {
        f,
        w,
        q,
        w_breve,
        l_w,
        phi,
        phi_w,
        spreading,
    })
}

/// Sound a channel: `y[k] = Phi vec(H[k]) + n[k]`, with per-block noise
/// `w_breve_m^* z_m` where `z_m` is white with variance `sigma2 / spreading`
/// per complex dimension.
pub fn measure<T: Real, R: Rng + ?Sized>(
    sound: &SoundingSet<T>,
    h: &ChannelFD<T>,
    sigma2: T,
    location: usize,
    rng: &mut R,
) -> Result<MeasurementSet<T>, SoundingError> {
    let n = h.n_r() * h.n_t();
    if sound.phi.ncols() != n {
        return Err(SoundingError::DimensionMismatch);
    }
    let l_r = sound.l_r();
    let sig_eff = sigma2 / rf::<T>(sound.spreading as f64);
    let per_dim = (sig_eff / rf::<T>(2.0)).sqrt();
    let mut y = Vec::with_capacity(h.k());
    for k in 0..h.k() {
        let hv = crate::channel::vectorize(&h.h[k]);
        let mut yk = &sound.phi * hv;
        if sig_eff > T::zero() {
            for (m, breve) in sound.w_breve.iter().enumerate() {
                let z = CVec::from_fn(breve.nrows(), |_, _| {
                    C::new(T::std_normal(rng) * per_dim, T::std_normal(rng) * per_dim)
                });
                let nb = breve.adjoint() * z;
                for lr in 0..l_r {
                    y_idx_add(&mut yk, m * l_r + lr, nb[lr]);
                }
            }
        }
        y.push(yk);
    }
    Ok(MeasurementSet {
        y,
        sigma2,
        spreading: sound.spreading,
        location,
    })
}

#[inline]
fn y_idx_add<T: Real>(v: &mut CVec<T>, i: usize, x: C<T>) {
    v[i] += x;
}

/// Least-squares initial channel estimate `Phi^dag y[k]` per subcarrier.
pub struct LsEstimate<T: Real> {
    /// Vectorized estimates, one per subcarrier.
    pub h: Vec<CVec<T>>,
    /// Set when `M L_R < N_R N_T`: only a minimum-norm solution exists.
    pub underdetermined: bool,
    /// Set when the sensing matrix is rank-deficient.
    pub rank_deficient: bool,
}

impl<T: Real> LsEstimate<T> {
    pub fn to_channel(&self, n_r: usize, n_t: usize) -> ChannelFD<T> {
        ChannelFD {
            h: self
                .h
                .iter()
                .map(|v| crate::channel::unvectorize(v, n_r, n_t))
                .collect(),
        }
    }
}

pub fn ls_estimate<T: Real>(
    sound: &SoundingSet<T>,
    meas: &MeasurementSet<T>,
) -> Result<LsEstimate<T>, SoundingError> {
    if meas.y.iter().any(|v| v.len() != sound.rows()) {
        return Err(SoundingError::DimensionMismatch);
    }
    let n = sound.phi.ncols();
    let underdetermined = sound.rows() < n;
    let svd = sound.phi.clone().svd(true, true);
    let s_max = svd
        .singular_values
        .iter()
        .cloned()
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let tol = rf::<T>(1e-12) * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let rank_deficient = rank < n.min(sound.rows());
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let h = meas
        .y
        .iter()
        .map(|y| {
            let mut w = u.adjoint() * y;
            for i in 0..svd.singular_values.len() {
                let s = svd.singular_values[i];
                w[i] = if s > tol {
                    w[i] / C::new(s, T::zero())
                } else {
                    C::new(T::zero(), T::zero())
                };
            }
            vt.adjoint() * w
        })
        .collect();
    Ok(LsEstimate {
        h,
        underdetermined,
        rank_deficient,
    })
}

/// Mean per-entry noise variance of the LS estimate, from the exact
/// propagation of the block noise covariance through the pseudo-inverse.
pub fn ls_noise_variance<T: Real>(sound: &SoundingSet<T>, sigma2: T) -> T {
    let pinv = linalg::pinv(&sound.phi);
    let l_r = sound.l_r();
    let sig_eff = sigma2 / rf::<T>(sound.spreading as f64);
    let n = pinv.nrows();
    let mut acc = T::zero();
    for (m, breve) in sound.w_breve.iter().enumerate() {
        // Columns of pinv for block m, times w_breve^*: row norms give the
        // diagonal contribution of this block.
        let cols = pinv.columns(m * l_r, l_r).into_owned();
        let b = cols * breve.adjoint();
        acc += linalg::fro2(&b);
    }
    acc * sig_eff / rf::<T>(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_paths, synth_channel};
    use crate::pulse::PulseSpec;
    use crate::seed;
    use crate::sysmodel::{sample_impairments, ImpairmentRanges};
    use approx::assert_relative_eq;

    fn cfg() -> SystemConfig<f64> {
        SystemConfig::half_wavelength(28e9, 1e-9, 8, 0.25, 4, 2, 2, 2, 2)
    }

    fn imp(cfg: &SystemConfig<f64>, idx: u64) -> HardwareImpairments<f64> {
        sample_impairments(
            cfg,
            &ImpairmentRanges::reference(cfg.lambda_c()),
            &mut seed::stream(31, "sound-imp", idx),
        )
    }

    fn random_channel(cfg: &SystemConfig<f64>, idx: u64) -> ChannelFD<f64> {
        let imp = imp(cfg, idx);
        let pulse = PulseSpec::raised_cosine(cfg);
        let paths = sample_paths(4, 6.0 * cfg.t_s, &mut seed::stream(32, "sound-path", idx));
        synth_channel(cfg, &imp, &pulse, &paths).unwrap()
    }

    #[test]
    fn sensing_blocks_match_kronecker_oracle() {
        let cfg = cfg();
        let imp = imp(&cfg, 0);
        let sound = gen_sounding(&cfg, &imp, 3, 1, &mut seed::stream(1, "snd", 0)).unwrap();
        let h = random_channel(&cfg, 0);
        let y = &sound.phi * crate::channel::vectorize(&h.h[2]);
        for m in 0..sound.symbols() {
            // vec(W_m^* H F_m q_m) block by block.
            let expect = sound.w[m].adjoint() * &h.h[2] * &sound.f[m] * &sound.q[m];
            for lr in 0..cfg.l_r {
                let got = y[m * cfg.l_r + lr];
                assert_relative_eq!((got - expect[lr]).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_combiner_gives_identity_whitener() {
        let cfg = SystemConfig::<f64>::half_wavelength(28e9, 1e-9, 8, 0.25, 4, 2, 2, 2, 2);
        let clean = HardwareImpairments::identity(&cfg);
        // Hand-build a sounding set with W = I (L_R = N_R) and check the
        // structural identities instead of relying on the random draw.
        let mut cfg2 = cfg.clone();
        cfg2.l_r = cfg.n_r;
        let mut sound = gen_sounding(&cfg2, &clean, 1, 1, &mut seed::stream(2, "snd", 0)).unwrap();
        let eye = CMat::identity(cfg2.n_r, cfg2.n_r);
        sound.w[0] = eye.clone();
        sound.w_breve[0] = eye.clone();
        sound.l_w[0] = eye.clone();
        let b = &sound.f[0] * &sound.q[0];
        for nt in 0..cfg2.n_t {
            for nr in 0..cfg2.n_r {
                for lr in 0..cfg2.n_r {
                    sound.phi[(lr, nt * cfg2.n_r + nr)] = if nr == lr {
                        b[nt]
                    } else {
                        C::new(0.0, 0.0)
                    };
                }
            }
        }
        // Phi block equals q^T F^T kron I.
        let kron = crate::linalg::kron(
            &CMat::from_fn(1, cfg2.n_t, |_, j| b[j]),
            &CMat::identity(cfg2.n_r, cfg2.n_r),
        );
        assert_relative_eq!((kron - &sound.phi).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!((&sound.l_w[0] - &eye).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sounding_is_deterministic_per_seed() {
        let cfg = cfg();
        let imp = imp(&cfg, 1);
        let a = gen_sounding(&cfg, &imp, 4, 2, &mut seed::stream(5, "snd", 1)).unwrap();
        let b = gen_sounding(&cfg, &imp, 4, 2, &mut seed::stream(5, "snd", 1)).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.phi_w, b.phi_w);
    }

    #[test]
    fn whitening_is_exact() {
        let cfg = cfg();
        let imp = imp(&cfg, 2);
        let sound = gen_sounding(&cfg, &imp, 5, 1, &mut seed::stream(6, "snd", 2)).unwrap();
        for m in 0..sound.symbols() {
            let cov = sound.w_breve[m].adjoint() * &sound.w_breve[m];
            let w = &sound.l_w[m] * cov * sound.l_w[m].adjoint();
            let eye = CMat::identity(cfg.l_r, cfg.l_r);
            assert!((w - eye).norm() < 1e-10);
        }
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let cfg = cfg();
        let impair = imp(&cfg, 3);
        let sound = gen_sounding(&cfg, &impair, 4, 1, &mut seed::stream(7, "snd", 3)).unwrap();
        let h = random_channel(&cfg, 3);
        let meas = measure(&sound, &h, 0.0, 0, &mut seed::stream(8, "noise", 0)).unwrap();
        for k in 0..h.k() {
            let clean = &sound.phi * crate::channel::vectorize(&h.h[k]);
            assert_relative_eq!((&meas.y[k] - clean).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn noise_covariance_matches_model() {
        let cfg = cfg();
        let impair = imp(&cfg, 4);
        let spreading = 2;
        let sound =
            gen_sounding(&cfg, &impair, 2, spreading, &mut seed::stream(9, "snd", 4)).unwrap();
        let zero = ChannelFD::zeros(&cfg);
        let sigma2 = 0.7;
        let rows = sound.rows();
        let draws = 10_000;
        let mut cov = CMat::<f64>::zeros(rows, rows);
        let mut cov_w = CMat::<f64>::zeros(rows, rows);
        let mut rng = seed::stream(10, "noise", 1);
        for _ in 0..draws {
            let m = measure(&sound, &zero, sigma2, 0, &mut rng).unwrap();
            let y = &m.y[0];
            let yw = sound.whiten(y);
            cov += y * y.adjoint();
            cov_w += &yw * yw.adjoint();
        }
        cov /= C::new(draws as f64, 0.0);
        cov_w /= C::new(draws as f64, 0.0);
        let sig_eff = sigma2 / spreading as f64;
        let mut expect = CMat::<f64>::zeros(rows, rows);
        for m in 0..sound.symbols() {
            let block = (sound.w_breve[m].adjoint() * &sound.w_breve[m]) * C::new(sig_eff, 0.0);
            expect
                .view_mut((m * cfg.l_r, m * cfg.l_r), (cfg.l_r, cfg.l_r))
                .copy_from(&block);
        }
        let rel = (cov - &expect).norm() / expect.norm();
        assert!(rel < 0.05, "covariance error {rel}");
        let eye = CMat::<f64>::identity(rows, rows) * C::new(sig_eff, 0.0);
        let rel_w = (cov_w - &eye).norm() / eye.norm();
        assert!(rel_w < 0.05, "whitened covariance error {rel_w}");
    }

    #[test]
    fn ls_recovers_noiseless_channel() {
        let mut cfg = cfg();
        cfg.l_r = 2;
        // M L_R = 8 >= N_R N_T = 8: unique LS solution.
        let impair = imp(&cfg, 5);
        let sound = gen_sounding(&cfg, &impair, 4, 1, &mut seed::stream(11, "snd", 5)).unwrap();
        let h = random_channel(&cfg, 5);
        let meas = measure(&sound, &h, 0.0, 0, &mut seed::stream(12, "noise", 2)).unwrap();
        let est = ls_estimate(&sound, &meas).unwrap();
        assert!(!est.underdetermined);
        assert!(!est.rank_deficient);
        let est_ch = est.to_channel(cfg.n_r, cfg.n_t);
        assert!(est_ch.max_relative_error(&h) < 1e-10);
    }

    #[test]
    fn square_sensing_agrees_with_direct_inverse() {
        let mut cfg = cfg();
        cfg.l_r = 2;
        let impair = imp(&cfg, 6);
        let sound = gen_sounding(&cfg, &impair, 4, 1, &mut seed::stream(13, "snd", 6)).unwrap();
        assert_eq!(sound.rows(), sound.phi.ncols());
        let h = random_channel(&cfg, 6);
        let meas = measure(&sound, &h, 0.0, 0, &mut seed::stream(14, "noise", 3)).unwrap();
        let est = ls_estimate(&sound, &meas).unwrap();
        let lu = sound.phi.clone().lu();
        for k in [0usize, 3] {
            let direct = lu.solve(&meas.y[k]).expect("invertible");
            assert!((&est.h[k] - &direct).norm() < 1e-9 * direct.norm().max(1e-12));
        }
    }

    #[test]
    fn ls_error_shrinks_like_one_over_m() {
        let cfg = cfg();
        let impair = imp(&cfg, 7);
        let sigma2 = 0.2;
        let ms = [8usize, 16, 32];
        let mut mse = Vec::new();
        for (i, &m_sym) in ms.iter().enumerate() {
            let mut acc = 0.0;
            let trials = 24;
            for t in 0..trials {
                let idx = (i * trials + t) as u64;
                let sound =
                    gen_sounding(&cfg, &impair, m_sym, 1, &mut seed::stream(15, "snd", idx))
                        .unwrap();
                let h = random_channel(&cfg, 100 + idx);
                let meas =
                    measure(&sound, &h, sigma2, 0, &mut seed::stream(16, "noise", idx)).unwrap();
                let est = ls_estimate(&sound, &meas).unwrap().to_channel(cfg.n_r, cfg.n_t);
                let num: f64 = est
                    .h
                    .iter()
                    .zip(&h.h)
                    .map(|(a, b)| crate::linalg::fro2(&(a - b)))
                    .sum();
                acc += num / h.energy();
            }
            mse.push(acc / trials as f64);
        }
        let slope = (mse[2] / mse[0]).log2() / ((ms[2] as f64) / (ms[0] as f64)).log2();
        assert!(
            (slope + 1.0).abs() < 0.35,
            "noise-averaging slope {slope}, mse {mse:?}"
        );
    }
}
