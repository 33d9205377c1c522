//! Greedy sparse channel estimation over beam-squint dictionaries.
//!
//! One estimation round per path: initialize delay/AoA/AoD on the central
//! subcarriers (where the distortion factor is flat and the three searches
//! decouple), refine each parameter with the normalized correlation
//! objective, compensate the side-subcarrier residuals by dividing out the
//! selected path's distortion profile, re-estimate the parameters over the
//! whole band, then jointly refit all path gains by least squares and
//! update the residual. The loop stops when the residual MSE falls below
//! the configured threshold or the path budget is exhausted.

use crate::channel::ChannelFD;
use crate::linalg;
use crate::pulse::{central_gain, distortion_matrix, partition, PulseError, PulseSpec, SubcarrierPartition};
use crate::real::{rf, Real};
use crate::sounding::{MeasurementSet, SoundingError, SoundingSet};
use crate::sysmodel::{delta_f, steer_ideal, AngleGrid, HardwareImpairments, ModelError, Side, SystemConfig};
use crate::{CMat, CVec, RVec, C};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Sounding(#[from] SoundingError),
    #[error("dictionary dimensions do not match the system config")]
    DimensionMismatch,
    #[error("measurement count per subcarrier disagrees with the sensing operator")]
    BadInput,
}

/// Angle- and delay-gridded dictionary: the frequency-flat learned factors
/// plus the known frequency-dependent steering grids they multiply.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionarySet<T: Real> {
    /// Gain/coupling factor, receive side (`N_R x N_R`).
    pub d_r1: CMat<T>,
    /// Gain/coupling factor, transmit side (`N_T x N_T`).
    pub d_t1: CMat<T>,
    /// Antenna location-error estimates defining the phase factor per side.
    pub eps_r: RVec<T>,
    pub eps_t: RVec<T>,
    pub aoa_grid: AngleGrid<T>,
    pub aod_grid: AngleGrid<T>,
    /// Delay grid in seconds.
    pub tau_grid: Vec<T>,
}

/// Delay grid spanning `K` sampling periods with `points` bins.
pub fn default_tau_grid<T: Real>(cfg: &SystemConfig<T>, points: usize) -> Vec<T> {
    (0..points)
        .map(|l| rf::<T>(l as f64) * rf::<T>(cfg.k as f64) * cfg.t_s / rf::<T>(points as f64))
        .collect()
}

impl<T: Real> DictionarySet<T> {
    /// Ideal-array dictionary: identity flat factors, zero location errors.
    pub fn ideal(cfg: &SystemConfig<T>, k_r: usize, k_t: usize, l_v: usize) -> Self {
        Self {
            d_r1: CMat::identity(cfg.n_r, cfg.n_r),
            d_t1: CMat::identity(cfg.n_t, cfg.n_t),
            eps_r: RVec::zeros(cfg.n_r),
            eps_t: RVec::zeros(cfg.n_t),
            aoa_grid: AngleGrid::uniform_sin(k_r),
            aod_grid: AngleGrid::uniform_sin(k_t),
            tau_grid: default_tau_grid(cfg, l_v),
        }
    }

    /// Dictionary built from known impairments (the genie reference).
    pub fn from_impairments(
        cfg: &SystemConfig<T>,
        imp: &HardwareImpairments<T>,
        k_r: usize,
        k_t: usize,
        l_v: usize,
    ) -> Self {
        Self {
            d_r1: imp.distortion_matrix(Side::Rx),
            d_t1: imp.distortion_matrix(Side::Tx),
            eps_r: RVec::from_row_slice(&imp.eps_r),
            eps_t: RVec::from_row_slice(&imp.eps_t),
            aoa_grid: AngleGrid::uniform_sin(k_r),
            aod_grid: AngleGrid::uniform_sin(k_t),
            tau_grid: default_tau_grid(cfg, l_v),
        }
    }

    /// Carrier-frequency phase factor `f(eps)` for one side: entry `(n, i)`
    /// is `exp(-j 2 pi f_c eps_n sin(angle_i) / c)`.
    pub fn location_factor(&self, f_c: T, side: Side) -> CMat<T> {
        let (eps, grid) = match side {
            Side::Rx => (&self.eps_r, &self.aoa_grid),
            Side::Tx => (&self.eps_t, &self.aod_grid),
        };
        let c_light = rf::<T>(crate::sysmodel::SPEED_OF_LIGHT);
        let two_pi = rf::<T>(2.0) * T::pi();
        CMat::from_fn(eps.len(), grid.len(), |n, i| {
            let ph = -two_pi * f_c * eps[n] * grid.values()[i].sin() / c_light;
            C::new(ph.cos(), ph.sin())
        })
    }

    /// Assembled atoms for one side and subcarrier: `D_1 (D_2 ⊙ A_k)`.
    pub fn atoms(
        &self,
        cfg: &SystemConfig<T>,
        side: Side,
        k: usize,
    ) -> Result<CMat<T>, EstimatorError> {
        let (d1, grid) = match side {
            Side::Rx => (&self.d_r1, &self.aoa_grid),
            Side::Tx => (&self.d_t1, &self.aod_grid),
        };
        let d2 = self.location_factor(cfg.f_c, side);
        let n = d1.nrows();
        let mut b = CMat::zeros(n, grid.len());
        for (i, &angle) in grid.values().iter().enumerate() {
            let a = steer_ideal(cfg, side, k, angle)?;
            for row in 0..n {
                b[(row, i)] = d2[(row, i)] * a[row];
            }
        }
        Ok(d1 * b)
    }

    pub fn validate(&self, cfg: &SystemConfig<T>) -> Result<(), EstimatorError> {
        if self.d_r1.nrows() != cfg.n_r
            || self.d_r1.ncols() != cfg.n_r
            || self.d_t1.nrows() != cfg.n_t
            || self.d_t1.ncols() != cfg.n_t
            || self.eps_r.len() != cfg.n_r
            || self.eps_t.len() != cfg.n_t
        {
            return Err(EstimatorError::DimensionMismatch);
        }
        Ok(())
    }
}

/// One detected path, all parameters snapped to the dictionary grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPath<T: Real> {
    pub alpha: C<T>,
    pub tau: T,
    pub aoa: T,
    pub aod: T,
    pub tau_index: usize,
    pub aoa_index: usize,
    pub aod_index: usize,
}

/// Per-iteration record for debugging and the acceptance tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace<T: Real> {
    pub iteration: usize,
    pub tau_index: usize,
    pub aoa_index: usize,
    pub aod_index: usize,
    pub mse: T,
}

/// Estimator output: detected paths, final residual MSE, per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate<T: Real> {
    pub paths: Vec<EstimatedPath<T>>,
    pub mse: T,
    pub trace: Vec<IterationTrace<T>>,
    /// Set when a rank-deficient gain fit forced an early stop.
    pub degraded: bool,
}

/// Stopping and safeguard knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorParams<T: Real> {
    /// Residual-MSE stop threshold.
    pub stop_eps: T,
    /// Hard cap on detected paths.
    pub max_paths: usize,
    /// Refinement sweeps per stage (the listing does one).
    pub sweep_rounds: usize,
    /// Relative magnitude floor for the distortion-compensation divide.
    pub g_floor_rel: T,
}

impl<T: Real> EstimatorParams<T> {
    /// Noise-calibrated stop: `1.1 sigma2 / spreading`, path budget `2 L`.
    pub fn noise_calibrated(sigma2: T, spreading: usize, l: usize) -> Self {
        Self {
            stop_eps: rf::<T>(1.1) * sigma2 / rf::<T>(spreading as f64),
            max_paths: 2 * l,
            sweep_rounds: 1,
            g_floor_rel: rf::<T>(1e-3),
        }
    }
}

enum SensingKind<T: Real> {
    /// Measurements are direct channel vectors (sparse-coding over initial
    /// estimates): the sensing operator is the identity.
    Identity { n: usize },
    /// Whitened hybrid sounding with its per-symbol factors.
    Hybrid {
        phi_w: CMat<T>,
        phi_w_adj: CMat<T>,
        /// `pinv(phi_w^*)`, applied for the residual-domain MSE.
        pinv_adj: CMat<T>,
        /// `L_w,m W_m^*` per symbol.
        w_tilde: Vec<CMat<T>>,
        /// `F_m q_m` per symbol.
        fq: Vec<CVec<T>>,
        l_r: usize,
    },
}

/// Whitened sensing operator handed to the estimator.
pub struct SensingOp<T: Real> {
    kind: SensingKind<T>,
}

impl<T: Real> SensingOp<T> {
    /// Identity operator over `n`-dimensional channel vectors.
    pub fn identity(n: usize) -> Self {
        Self {
            kind: SensingKind::Identity { n },
        }
    }

    /// Build the whitened operator from a sounding set.
    pub fn from_sounding(sound: &SoundingSet<T>) -> Self {
        let phi_w = sound.phi_w.clone();
        let phi_w_adj = phi_w.adjoint();
        let pinv_adj = linalg::pinv(&phi_w_adj);
        let w_tilde = sound
            .l_w
            .iter()
            .zip(&sound.w)
            .map(|(l, w)| l * w.adjoint())
            .collect();
        let fq = sound.f.iter().zip(&sound.q).map(|(f, q)| f * q).collect();
        Self {
            kind: SensingKind::Hybrid {
                phi_w,
                phi_w_adj,
                pinv_adj,
                w_tilde,
                fq,
                l_r: sound.l_r(),
            },
        }
    }

    /// Measurement-domain dimension per subcarrier.
    pub fn rows(&self) -> usize {
        match &self.kind {
            SensingKind::Identity { n } => *n,
            SensingKind::Hybrid { phi_w, .. } => phi_w.nrows(),
        }
    }

    /// Channel-domain dimension.
    pub fn n(&self) -> usize {
        match &self.kind {
            SensingKind::Identity { n } => *n,
            SensingKind::Hybrid { phi_w, .. } => phi_w.ncols(),
        }
    }

    fn apply(&self, x: &CVec<T>) -> CVec<T> {
        match &self.kind {
            SensingKind::Identity { .. } => x.clone(),
            SensingKind::Hybrid { phi_w, .. } => phi_w * x,
        }
    }

    fn adjoint(&self, y: &CVec<T>) -> CVec<T> {
        match &self.kind {
            SensingKind::Identity { .. } => y.clone(),
            SensingKind::Hybrid { phi_w_adj, .. } => phi_w_adj * y,
        }
    }

    fn pinv_adjoint(&self, r: &CVec<T>) -> CVec<T> {
        match &self.kind {
            SensingKind::Identity { .. } => r.clone(),
            SensingKind::Hybrid { pinv_adj, .. } => pinv_adj * r,
        }
    }
}

/// Whiten a measurement batch for estimation.
pub fn whiten_measurements<T: Real>(
    sound: &SoundingSet<T>,
    meas: &MeasurementSet<T>,
) -> (SensingOp<T>, Vec<CVec<T>>) {
    let op = SensingOp::from_sounding(sound);
    let y_w = meas.y.iter().map(|y| sound.whiten(y)).collect();
    (op, y_w)
}

/// Prepared estimator: assembled dictionary atoms and projection caches for
/// one `(config, dictionary, pulse, sensing)` combination.
pub struct DaOmpBs<'a, T: Real> {
    cfg: &'a SystemConfig<T>,
    pulse: &'a PulseSpec<T>,
    dict: &'a DictionarySet<T>,
    sensing: &'a SensingOp<T>,
    part: SubcarrierPartition,
    dfs: Vec<T>,
    /// Flat in-band gain per subcarrier (zero on side subcarriers).
    flat: Vec<T>,
    /// Atoms per subcarrier: receive `N_R x K_R`, transmit `N_T x K_T`.
    rx: Vec<CMat<T>>,
    tx: Vec<CMat<T>>,
    /// Hybrid-only: per-symbol energies of the whitened receive-atom
    /// projections `L_w,m W_m^* rx[k]`, one `M x K_R` matrix per k.
    rx_proj_en: Vec<nalgebra::DMatrix<T>>,
    /// Hybrid-only: transmit-atom pilots, `M x K_T` per k.
    pilot_tx: Vec<CMat<T>>,
    /// Hybrid-only: `||F_m q_m||^2` per symbol.
    fq_norm2: Vec<T>,
    /// Identity-only: atom column energies per subcarrier.
    rx_col_en: Vec<Vec<T>>,
    tx_col_en: Vec<Vec<T>>,
}

impl<'a, T: Real> DaOmpBs<'a, T> {
    pub fn new(
        cfg: &'a SystemConfig<T>,
        dict: &'a DictionarySet<T>,
        pulse: &'a PulseSpec<T>,
        sensing: &'a SensingOp<T>,
    ) -> Result<Self, EstimatorError> {
        dict.validate(cfg)?;
        pulse.validate_against(cfg)?;
        if sensing.n() != cfg.n_r * cfg.n_t {
            return Err(EstimatorError::DimensionMismatch);
        }
        let part = partition(cfg);
        let dfs: Vec<T> = (0..cfg.k).map(|k| delta_f(cfg, k).unwrap()).collect();
        let mut flat = vec![T::zero(); cfg.k];
        for &k in &part.central {
            flat[k] = central_gain(pulse, cfg, k)?;
        }
        let mut rx = Vec::with_capacity(cfg.k);
        let mut tx = Vec::with_capacity(cfg.k);
        for k in 0..cfg.k {
            rx.push(dict.atoms(cfg, Side::Rx, k)?);
            tx.push(dict.atoms(cfg, Side::Tx, k)?);
        }
        let (mut rx_proj_en, mut pilot_tx, mut fq_norm2) =
            (Vec::new(), Vec::new(), Vec::new());
        let (mut rx_col_en, mut tx_col_en) = (Vec::new(), Vec::new());
        match &sensing.kind {
            SensingKind::Hybrid { w_tilde, fq, l_r, .. } => {
                let m_sym = w_tilde.len();
                fq_norm2 = fq.iter().map(linalg::norm2).collect();
                for k in 0..cfg.k {
                    let mut en = nalgebra::DMatrix::<T>::zeros(m_sym, dict.aoa_grid.len());
                    for (m, wt) in w_tilde.iter().enumerate() {
                        let block = wt * &rx[k];
                        for i in 0..dict.aoa_grid.len() {
                            let mut acc = T::zero();
                            for lr in 0..*l_r {
                                acc += block[(lr, i)].norm_sqr();
                            }
                            en[(m, i)] = acc;
                        }
                    }
                    rx_proj_en.push(en);
                    let mut pt = CMat::zeros(m_sym, dict.aod_grid.len());
                    for (m, f) in fq.iter().enumerate() {
                        for j in 0..dict.aod_grid.len() {
                            // (atom_j)^* F_m q_m
                            let mut acc = C::new(T::zero(), T::zero());
                            for row in 0..cfg.n_t {
                                acc += tx[k][(row, j)].conj() * f[row];
                            }
                            pt[(m, j)] = acc;
                        }
                    }
                    pilot_tx.push(pt);
                }
            }
            SensingKind::Identity { .. } => {
                for k in 0..cfg.k {
                    rx_col_en.push(
                        (0..dict.aoa_grid.len())
                            .map(|i| rx[k].column(i).iter().map(|z| z.norm_sqr()).fold(T::zero(), |a, b| a + b))
                            .collect(),
                    );
                    tx_col_en.push(
                        (0..dict.aod_grid.len())
                            .map(|j| tx[k].column(j).iter().map(|z| z.norm_sqr()).fold(T::zero(), |a, b| a + b))
                            .collect(),
                    );
                }
            }
        }
        Ok(Self {
            cfg,
            pulse,
            dict,
            sensing,
            part,
            dfs,
            flat,
            rx,
            tx,
            rx_proj_en,
            pilot_tx,
            fq_norm2,
            rx_col_en,
            tx_col_en,
        })
    }

    fn derotation(&self, k: usize, tau: T) -> C<T> {
        let ph = rf::<T>(2.0) * T::pi() * self.dfs[k] * tau;
        C::new(ph.cos(), ph.sin())
    }

    /// Energy of the whitened sensing response of the `(i, j)` atom over
    /// `k_set`: `sum_k ||Phi_w atom_{i,j,k}||^2`.
    ///
    /// The per-subcarrier energies are summed outside the norm. Summing the
    /// derotated responses inside the norm instead aggregates the delay
    /// phases into a Dirichlet kernel that vanishes for delays beyond about
    /// one symbol, turning the ratio into 0/0 noise across most of the delay
    /// grid; the energy normalization is delay-independent and keeps the
    /// matched-filter ratio well defined everywhere.
    fn denominator(&self, i: usize, j: usize, k_set: &[usize]) -> T {
        match &self.sensing.kind {
            SensingKind::Identity { .. } => {
                let mut acc = T::zero();
                for &k in k_set {
                    acc += self.rx_col_en[k][i] * self.tx_col_en[k][j];
                }
                acc
            }
            SensingKind::Hybrid { .. } => {
                let mut acc = T::zero();
                for &k in k_set {
                    let en = &self.rx_proj_en[k];
                    let pt = &self.pilot_tx[k];
                    for m in 0..en.nrows() {
                        acc += pt[(m, j)].norm_sqr() * en[(m, i)];
                    }
                }
                acc
            }
        }
    }

    /// Normalized correlation objective for atom `(tau, i, j)` over `k_set`.
    ///
    /// Numerator: squared magnitude of the delay-derotated, dictionary-
    /// projected residual sum. Denominator: the same projection applied to
    /// the whitened sensing operator. A zero denominator flags degeneracy
    /// and scores zero.
    pub fn objective(
        &self,
        residual: &[CMat<T>],
        tau: T,
        i: usize,
        j: usize,
        k_set: &[usize],
    ) -> (T, bool) {
        let mut num = C::new(T::zero(), T::zero());
        for &k in k_set {
            let rot = self.derotation(k, tau);
            let a = self.rx[k].column(i);
            let b = self.tx[k].column(j);
            // a^* R b
            let mut s = C::new(T::zero(), T::zero());
            for nt in 0..self.cfg.n_t {
                let mut col = C::new(T::zero(), T::zero());
                for nr in 0..self.cfg.n_r {
                    col += a[nr].conj() * residual[k][(nr, nt)];
                }
                s += col * b[nt];
            }
            num += s * rot;
        }
        let den = self.denominator(i, j, k_set);
        if den <= T::zero() {
            (T::zero(), true)
        } else {
            (num.norm_sqr() / den, false)
        }
    }

    /// Initial delay metric: energy of the derotated residual sum.
    fn delay_init_metric(&self, residual: &[CMat<T>], tau: T, k_set: &[usize]) -> T {
        let mut acc = CMat::<T>::zeros(self.cfg.n_r, self.cfg.n_t);
        for &k in k_set {
            let rot = self.derotation(k, tau);
            acc += &residual[k] * rot;
        }
        linalg::fro2(&acc)
    }

    /// Initial AoA metric: receive-only projection ratio with the
    /// `I kron a` structure.
    fn aoa_init_metric(&self, residual: &[CMat<T>], tau: T, i: usize, k_set: &[usize]) -> T {
        let n_t = self.cfg.n_t;
        let mut num_vec = CVec::<T>::zeros(n_t);
        for &k in k_set {
            let rot = self.derotation(k, tau);
            let a = self.rx[k].column(i);
            for nt in 0..n_t {
                let mut col = C::new(T::zero(), T::zero());
                for nr in 0..self.cfg.n_r {
                    col += a[nr].conj() * residual[k][(nr, nt)];
                }
                num_vec[nt] += col * rot;
            }
        }
        let num = linalg::norm2(&num_vec);
        // Same energy normalization as the main objective, with the
        // `I kron a` projector: per-subcarrier response energies summed.
        let den = match &self.sensing.kind {
            SensingKind::Identity { .. } => {
                let mut acc = T::zero();
                for &k in k_set {
                    acc += self.rx_col_en[k][i];
                }
                acc * rf::<T>(n_t as f64)
            }
            SensingKind::Hybrid { .. } => {
                let mut acc = T::zero();
                for &k in k_set {
                    let en = &self.rx_proj_en[k];
                    for m in 0..en.nrows() {
                        acc += self.fq_norm2[m] * en[(m, i)];
                    }
                }
                acc
            }
        };
        if den <= T::zero() {
            T::zero()
        } else {
            num / den
        }
    }

    /// Distortion profile of a selected path at subcarrier `k`: flat scalar
    /// in-band, per-pair matrix on the roll-off. Uses the dictionary's
    /// location-error estimates in the per-antenna delays.
    fn path_distortion(&self, k: usize, tau: T, aoa: T, aod: T) -> Result<CMat<T>, EstimatorError> {
        if self.part.is_central(k) {
            Ok(CMat::from_element(
                self.cfg.n_r,
                self.cfg.n_t,
                C::new(self.flat[k], T::zero()),
            ))
        } else {
            Ok(distortion_matrix(
                self.pulse,
                self.cfg,
                self.dict.eps_r.as_slice(),
                self.dict.eps_t.as_slice(),
                k,
                tau,
                aoa,
                aod,
            )?)
        }
    }

    /// Whitened model column of one path at subcarrier `k`.
    fn path_column(
        &self,
        k: usize,
        path: &EstimatedPath<T>,
    ) -> Result<CVec<T>, EstimatorError> {
        let g_mat = self.path_distortion(k, path.tau, path.aoa, path.aod)?;
        let a = self.rx[k].column(path.aoa_index);
        let b = self.tx[k].column(path.aod_index);
        let rot = self.derotation(k, path.tau).conj(); // e^{-j 2 pi df tau}
        let n_r = self.cfg.n_r;
        let mut atom = CVec::<T>::zeros(self.cfg.n_r * self.cfg.n_t);
        for nt in 0..self.cfg.n_t {
            let bc = b[nt].conj() * rot;
            for nr in 0..n_r {
                atom[nt * n_r + nr] = g_mat[(nr, nt)] * a[nr] * bc;
            }
        }
        Ok(self.sensing.apply(&atom))
    }

    /// Reconstruct the model channel from estimated paths.
    pub fn reconstruct(&self, paths: &[EstimatedPath<T>]) -> Result<ChannelFD<T>, EstimatorError> {
        let mut out = ChannelFD::zeros(self.cfg);
        for k in 0..self.cfg.k {
            let hk = &mut out.h[k];
            for p in paths {
                let g_mat = self.path_distortion(k, p.tau, p.aoa, p.aod)?;
                let a = self.rx[k].column(p.aoa_index);
                let b = self.tx[k].column(p.aod_index);
                let rot = self.derotation(k, p.tau).conj();
                let coef = p.alpha * rot;
                for nt in 0..self.cfg.n_t {
                    let bc = b[nt].conj() * coef;
                    for nr in 0..self.cfg.n_r {
                        hk[(nr, nt)] += g_mat[(nr, nt)] * a[nr] * bc;
                    }
                }
            }
        }
        Ok(out)
    }

    fn argmax<F: Fn(usize) -> T>(count: usize, f: F) -> usize {
        let mut best = 0usize;
        let mut best_v = f(0);
        for idx in 1..count {
            let v = f(idx);
            // Strictly-greater keeps the lowest index on ties.
            if v > best_v {
                best_v = v;
                best = idx;
            }
        }
        best
    }

    /// Run the estimator on whitened per-subcarrier measurements.
    pub fn run(
        &self,
        y_w: &[CVec<T>],
        params: &EstimatorParams<T>,
    ) -> Result<PathEstimate<T>, EstimatorError> {
        if y_w.len() != self.cfg.k || y_w.iter().any(|v| v.len() != self.sensing.rows()) {
            return Err(EstimatorError::BadInput);
        }
        let k_all: Vec<usize> = (0..self.cfg.k).collect();
        let cen = self.part.central.clone();
        let n_r = self.cfg.n_r;
        let n_t = self.cfg.n_t;
        let rows = self.sensing.rows();
        let mse_norm = rf::<T>((rows * self.cfg.k) as f64);
        let mut residual: Vec<CMat<T>> = (0..self.cfg.k)
            .map(|k| linalg::unvec(&self.sensing.adjoint(&y_w[k]), n_r, n_t))
            .collect();
        let mut paths: Vec<EstimatedPath<T>> = Vec::new();
        let mut columns: Vec<Vec<CVec<T>>> = Vec::new(); // per path, per k
        let mut gram = CMat::<T>::zeros(0, 0);
        let mut rhs = CVec::<T>::zeros(0);
        let mut trace = Vec::new();
        let mut prev_mse = T::max_value().unwrap_or(T::one() / rf::<T>(1e-300));
        let mut degraded = false;
        while paths.len() < params.max_paths {
            // Initial parameter estimation on central subcarriers.
            let mut it = Self::argmax(self.dict.tau_grid.len(), |l| {
                self.delay_init_metric(&residual, self.dict.tau_grid[l], &cen)
            });
            let mut tau = self.dict.tau_grid[it];
            let mut ia = Self::argmax(self.dict.aoa_grid.len(), |i| {
                self.aoa_init_metric(&residual, tau, i, &cen)
            });
            let mut id = Self::argmax(self.dict.aod_grid.len(), |j| {
                self.objective(&residual, tau, ia, j, &cen).0
            });
            // Refine over central subcarriers.
            for _ in 0..params.sweep_rounds {
                it = Self::argmax(self.dict.tau_grid.len(), |l| {
                    self.objective(&residual, self.dict.tau_grid[l], ia, id, &cen).0
                });
                tau = self.dict.tau_grid[it];
                ia = Self::argmax(self.dict.aoa_grid.len(), |i| {
                    self.objective(&residual, tau, i, id, &cen).0
                });
                id = Self::argmax(self.dict.aod_grid.len(), |j| {
                    self.objective(&residual, tau, ia, j, &cen).0
                });
            }
            // Distortion compensation on side subcarriers.
            let aoa = self.dict.aoa_grid.values()[ia];
            let aod = self.dict.aod_grid.values()[id];
            for &k in &self.part.side {
                let g_mat = self.path_distortion(k, tau, aoa, aod)?;
                let mut peak = T::zero();
                for z in g_mat.iter() {
                    let m = z.norm_sqr().sqrt();
                    if m > peak {
                        peak = m;
                    }
                }
                let floor = params.g_floor_rel * peak;
                for nt in 0..n_t {
                    for nr in 0..n_r {
                        let gval = g_mat[(nr, nt)];
                        let mag = gval.norm_sqr().sqrt();
                        let divisor = if mag >= floor && mag > T::zero() {
                            gval
                        } else if mag > T::zero() {
                            gval * C::new(floor / mag, T::zero())
                        } else {
                            C::new(floor, T::zero())
                        };
                        residual[k][(nr, nt)] /= divisor;
                    }
                }
            }
            // Re-estimate over all subcarriers.
            for _ in 0..params.sweep_rounds {
                it = Self::argmax(self.dict.tau_grid.len(), |l| {
                    self.objective(&residual, self.dict.tau_grid[l], ia, id, &k_all).0
                });
                tau = self.dict.tau_grid[it];
                ia = Self::argmax(self.dict.aoa_grid.len(), |i| {
                    self.objective(&residual, tau, i, id, &k_all).0
                });
                id = Self::argmax(self.dict.aod_grid.len(), |j| {
                    self.objective(&residual, tau, ia, j, &k_all).0
                });
            }
            let path = EstimatedPath {
                alpha: C::new(T::zero(), T::zero()),
                tau: self.dict.tau_grid[it],
                aoa: self.dict.aoa_grid.values()[ia],
                aod: self.dict.aod_grid.values()[id],
                tau_index: it,
                aoa_index: ia,
                aod_index: id,
            };
            // Joint gain refit over all subcarriers.
            let mut cols = Vec::with_capacity(self.cfg.k);
            for k in 0..self.cfg.k {
                cols.push(self.path_column(k, &path)?);
            }
            let l_new = paths.len() + 1;
            let mut gram_new = CMat::<T>::zeros(l_new, l_new);
            gram_new.view_mut((0, 0), (l_new - 1, l_new - 1)).copy_from(&gram);
            let mut rhs_new = CVec::<T>::zeros(l_new);
            rhs_new.rows_mut(0, l_new - 1).copy_from(&rhs);
            for k in 0..self.cfg.k {
                let ck = &cols[k];
                for (lp, old) in columns.iter().enumerate() {
                    let mut acc = C::new(T::zero(), T::zero());
                    for row in 0..rows {
                        acc += old[k][row].conj() * ck[row];
                    }
                    gram_new[(lp, l_new - 1)] += acc;
                }
                let mut diag = C::new(T::zero(), T::zero());
                let mut proj = C::new(T::zero(), T::zero());
                for row in 0..rows {
                    diag += ck[row].conj() * ck[row];
                    proj += ck[row].conj() * y_w[k][row];
                }
                gram_new[(l_new - 1, l_new - 1)] += diag;
                rhs_new[l_new - 1] += proj;
            }
            for lp in 0..l_new - 1 {
                gram_new[(l_new - 1, lp)] = gram_new[(lp, l_new - 1)].conj();
            }
            let solve = linalg::lstsq(&gram_new, &rhs_new);
            if solve.rank_deficient {
                // The newest atom adds no information; drop it and stop.
                degraded = true;
                break;
            }
            let alphas = solve.solution;
            paths.push(path);
            columns.push(cols);
            gram = gram_new;
            rhs = rhs_new;
            for (p, a) in paths.iter_mut().zip(alphas.iter()) {
                p.alpha = *a;
            }
            // Residual and MSE update.
            let mut mse = T::zero();
            for k in 0..self.cfg.k {
                let mut y_res = y_w[k].clone();
                for (lp, p) in paths.iter().enumerate() {
                    let a = p.alpha;
                    for row in 0..rows {
                        y_res[row] -= a * columns[lp][k][row];
                    }
                }
                let r = self.sensing.adjoint(&y_res);
                mse += linalg::norm2(&self.sensing.pinv_adjoint(&r));
                residual[k] = linalg::unvec(&r, n_r, n_t);
            }
            mse /= mse_norm;
            trace.push(IterationTrace {
                iteration: paths.len(),
                tau_index: it,
                aoa_index: ia,
                aod_index: id,
                mse,
            });
            if mse <= params.stop_eps {
                prev_mse = mse;
                break;
            }
            if mse > prev_mse * (T::one() + rf::<T>(1e-9)) {
                // LS over a grown column set cannot increase the projected
                // residual; treat any numeric increase as saturation.
                break;
            }
            prev_mse = mse;
        }
        let mse = trace.last().map_or(prev_mse, |t| t.mse);
        Ok(PathEstimate {
            paths,
            mse,
            trace,
            degraded,
        })
    }
}

/// Standalone joint gain refit: least-squares fit of all path gains against
/// the whitened measurements, across all subcarriers.
pub fn gain_refit<T: Real>(
    est: &DaOmpBs<'_, T>,
    y_w: &[CVec<T>],
    paths: &[EstimatedPath<T>],
) -> Result<(Vec<C<T>>, bool), EstimatorError> {
    let l = paths.len();
    let rows = est.sensing.rows();
    let mut gram = CMat::<T>::zeros(l, l);
    let mut rhs = CVec::<T>::zeros(l);
    let mut cols: Vec<CVec<T>> = Vec::with_capacity(l);
    for k in 0..est.cfg.k {
        cols.clear();
        for p in paths {
            cols.push(est.path_column(k, p)?);
        }
        for a in 0..l {
            for b in a..l {
                let mut acc = C::new(T::zero(), T::zero());
                for row in 0..rows {
                    acc += cols[a][row].conj() * cols[b][row];
                }
                gram[(a, b)] += acc;
            }
            let mut pr = C::new(T::zero(), T::zero());
            for row in 0..rows {
                pr += cols[a][row].conj() * y_w[k][row];
            }
            rhs[a] += pr;
        }
    }
    for a in 0..l {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)].conj();
        }
    }
    let solve = linalg::lstsq(&gram, &rhs);
    Ok((solve.solution.iter().cloned().collect(), solve.rank_deficient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_paths_on_grid, synth_channel, PathSet};
    use crate::seed;
    use crate::sounding::{gen_sounding, measure};
    use crate::sysmodel::{sample_impairments, ImpairmentRanges};

    fn cfg() -> SystemConfig<f64> {
        SystemConfig::half_wavelength(28e9, 1e-9, 32, 0.25, 8, 4, 2, 2, 2)
    }

    /// Coupling-and-gain impairments with zero location errors: exactly
    /// representable by the dictionary model, so recovery can be exact.
    fn representable_imp(cfg: &SystemConfig<f64>, idx: u64) -> HardwareImpairments<f64> {
        let mut ranges = ImpairmentRanges::reference(cfg.lambda_c());
        ranges.location_dev = 0.0;
        sample_impairments(cfg, &ranges, &mut seed::stream(41, "est-imp", idx))
    }

    fn grids() -> (usize, usize, usize) {
        (16, 16, 64)
    }

    struct Setup {
        cfg: SystemConfig<f64>,
        imp: HardwareImpairments<f64>,
        pulse: PulseSpec<f64>,
        dict: DictionarySet<f64>,
        sound: crate::sounding::SoundingSet<f64>,
    }

    fn setup(idx: u64, m_symbols: usize) -> Setup {
        let cfg = cfg();
        let imp = representable_imp(&cfg, idx);
        let pulse = PulseSpec::raised_cosine(&cfg);
        let (k_r, k_t, l_v) = grids();
        let dict = DictionarySet::from_impairments(&cfg, &imp, k_r, k_t, l_v);
        let sound = gen_sounding(&cfg, &imp, m_symbols, 1, &mut seed::stream(42, "est-snd", idx))
            .unwrap();
        Setup {
            cfg,
            imp,
            pulse,
            dict,
            sound,
        }
    }

    fn on_grid_paths(s: &Setup, l: usize, idx: u64) -> PathSet<f64> {
        sample_paths_on_grid(
            &s.dict.aoa_grid,
            &s.dict.aod_grid,
            &s.dict.tau_grid,
            l,
            2,
            &mut seed::stream(43, "est-paths", idx),
        )
    }

    #[test]
    fn objective_zero_residual_scores_zero() {
        let s = setup(0, 16);
        let op = SensingOp::from_sounding(&s.sound);
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let zero: Vec<CMat<f64>> = (0..s.cfg.k)
            .map(|_| CMat::zeros(s.cfg.n_r, s.cfg.n_t))
            .collect();
        let ks: Vec<usize> = (0..s.cfg.k).collect();
        let (v, degenerate) = est.objective(&zero, s.dict.tau_grid[3], 2, 5, &ks);
        assert!(!degenerate);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn objective_scales_quadratically_and_argmax_is_stable() {
        let s = setup(1, 16);
        let op = SensingOp::from_sounding(&s.sound);
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let paths = on_grid_paths(&s, 1, 1);
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let meas = measure(&s.sound, &h, 0.0, 0, &mut seed::stream(44, "n", 1)).unwrap();
        let (op2, y_w) = whiten_measurements(&s.sound, &meas);
        let est2 = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op2).unwrap();
        let residual: Vec<CMat<f64>> = (0..s.cfg.k)
            .map(|k| linalg::unvec(&op2.adjoint(&y_w[k]), s.cfg.n_r, s.cfg.n_t))
            .collect();
        let ks: Vec<usize> = (0..s.cfg.k).collect();
        let tau = s.dict.tau_grid[paths.paths[0].tau.round() as usize % 64];
        let (base, _) = est2.objective(&residual, tau, 3, 7, &ks);
        // Scaling all residuals by c scales the objective by |c|^2.
        let c = C::new(0.0, 2.0); // a global phase rotation times 2
        let scaled: Vec<CMat<f64>> = residual.iter().map(|r| r * c).collect();
        let (scaled_v, _) = est2.objective(&scaled, tau, 3, 7, &ks);
        assert!((scaled_v - 4.0 * base).abs() <= 1e-9 * scaled_v.abs().max(1e-30));
        // Argmax over the AoA axis is unchanged by the rotation.
        let pick = |r: &Vec<CMat<f64>>| {
            let mut best = (0usize, f64::MIN);
            for i in 0..s.dict.aoa_grid.len() {
                let (v, _) = est2.objective(r, tau, i, 7, &ks);
                if v > best.1 {
                    best = (i, v);
                }
            }
            best.0
        };
        assert_eq!(pick(&residual), pick(&scaled));
        let _ = (est, base);
    }

    #[test]
    fn single_path_exact_recovery() {
        // Full-sampling regime: the estimator sees the channel vectors
        // directly, as in the sparse-coding stage of dictionary learning.
        let s = setup(2, 16);
        let paths = on_grid_paths(&s, 1, 2);
        let truth = &paths.paths[0];
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let op = SensingOp::identity(s.cfg.n_r * s.cfg.n_t);
        let y: Vec<CVec<f64>> = h.h.iter().map(crate::channel::vectorize).collect();
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let params = EstimatorParams {
            stop_eps: 1e-16,
            max_paths: 4,
            sweep_rounds: 1,
            g_floor_rel: 1e-3,
        };
        let out = est.run(&y, &params).unwrap();
        assert!(!out.paths.is_empty());
        let p = &out.paths[0];
        assert_eq!(p.tau, truth.tau);
        assert_eq!(p.aoa, truth.aoa);
        assert_eq!(p.aod, truth.aod);
        let rel = (p.alpha - truth.alpha).norm() / truth.alpha.norm();
        assert!(rel < 1e-8, "gain error {rel}");
        assert!(out.mse < 1e-16, "mse {}", out.mse);
    }

    #[test]
    fn compressive_recovery_noiseless_is_accurate() {
        // Compressive sounding at M L_R < N: the correlation-domain
        // compensation is approximate, so recovery is near-exact rather
        // than machine-exact.
        let s = setup(2, 30);
        let paths = on_grid_paths(&s, 2, 12);
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let meas = measure(&s.sound, &h, 0.0, 0, &mut seed::stream(45, "n", 2)).unwrap();
        let (op, y_w) = whiten_measurements(&s.sound, &meas);
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let params = EstimatorParams {
            stop_eps: 1e-16,
            max_paths: 8,
            sweep_rounds: 1,
            g_floor_rel: 1e-3,
        };
        let out = est.run(&y_w, &params).unwrap();
        let rec = est.reconstruct(&out.paths).unwrap();
        let nmse = crate::metrics::nmse(&h, &rec);
        assert!(nmse < -25.0, "compressive noiseless NMSE {nmse} dB");
    }

    #[test]
    fn multi_path_exact_recovery_and_monotone_mse() {
        let s = setup(3, 20);
        let l = 3;
        let paths = on_grid_paths(&s, l, 3);
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let op = SensingOp::identity(s.cfg.n_r * s.cfg.n_t);
        let y_w: Vec<CVec<f64>> = h.h.iter().map(crate::channel::vectorize).collect();
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let params = EstimatorParams {
            stop_eps: 1e-13,
            max_paths: 2 * l,
            sweep_rounds: 1,
            g_floor_rel: 1e-3,
        };
        let out = est.run(&y_w, &params).unwrap();
        for w in out.trace.windows(2) {
            assert!(
                w[1].mse <= w[0].mse * (1.0 + 1e-9),
                "MSE increased: {} -> {}",
                w[0].mse,
                w[1].mse
            );
        }
        assert!(out.mse < 1e-12, "mse {}", out.mse);
        // Every true path recovered (order-free).
        for t in &paths.paths {
            assert!(
                out.paths
                    .iter()
                    .any(|p| p.tau == t.tau && p.aoa == t.aoa && p.aod == t.aod),
                "missing path {t:?}"
            );
        }
        // Reconstruction matches the channel.
        let rec = est.reconstruct(&out.paths).unwrap();
        assert!(rec.max_relative_error(&h) < 1e-6);
    }

    #[test]
    fn compensation_flattens_single_path_side_residuals() {
        // With full sampling (identity sensing), dividing the side residual
        // by the path's distortion profile leaves exactly the flat-band
        // model of the same path.
        let s = setup(4, 16);
        let paths = on_grid_paths(&s, 1, 4);
        let p = &paths.paths[0];
        let ia = s
            .dict
            .aoa_grid
            .values()
            .iter()
            .position(|&x| x == p.aoa)
            .unwrap();
        let id = s
            .dict
            .aod_grid
            .values()
            .iter()
            .position(|&x| x == p.aod)
            .unwrap();
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let op = SensingOp::identity(s.cfg.n_r * s.cfg.n_t);
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let part = partition(&s.cfg);
        for &k in &part.side {
            let g_mat = est.path_distortion(k, p.tau, p.aoa, p.aod).unwrap();
            let mut compensated = h.h[k].clone();
            for nt in 0..s.cfg.n_t {
                for nr in 0..s.cfg.n_r {
                    compensated[(nr, nt)] /= g_mat[(nr, nt)];
                }
            }
            // Flat-band model of the same path at this subcarrier.
            let a = est.rx[k].column(ia).into_owned();
            let b = est.tx[k].column(id).into_owned();
            let rot = est.derotation(k, p.tau).conj();
            let mut model = CMat::<f64>::zeros(s.cfg.n_r, s.cfg.n_t);
            for nt in 0..s.cfg.n_t {
                for nr in 0..s.cfg.n_r {
                    model[(nr, nt)] = p.alpha * rot * a[nr] * b[nt].conj();
                }
            }
            let rel = (&compensated - &model).norm() / model.norm();
            assert!(rel < 1e-9, "k={k} rel={rel}");
        }
    }

    #[test]
    fn brick_wall_pulse_skips_compensation() {
        let mut c = cfg();
        c.beta = 0.0;
        let imp = representable_imp(&c, 5);
        let pulse = PulseSpec::raised_cosine(&c);
        let (k_r, k_t, l_v) = grids();
        let dict = DictionarySet::from_impairments(&c, &imp, k_r, k_t, l_v);
        let part = partition(&c);
        assert!(part.side.is_empty());
        let sound = gen_sounding(&c, &imp, 16, 1, &mut seed::stream(47, "snd", 5)).unwrap();
        let paths = sample_paths_on_grid(
            &dict.aoa_grid,
            &dict.aod_grid,
            &dict.tau_grid,
            2,
            2,
            &mut seed::stream(48, "p", 5),
        );
        let h = synth_channel(&c, &imp, &pulse, &paths).unwrap();
        let meas = measure(&sound, &h, 0.0, 0, &mut seed::stream(49, "n", 5)).unwrap();
        let (op, y_w) = whiten_measurements(&sound, &meas);
        let _ = &sound;
        let est = DaOmpBs::new(&c, &dict, &pulse, &op).unwrap();
        let params = EstimatorParams {
            stop_eps: 1e-15,
            max_paths: 4,
            sweep_rounds: 1,
            g_floor_rel: 1e-3,
        };
        let out = est.run(&y_w, &params).unwrap();
        assert!(out.mse < 1e-13);
    }

    #[test]
    fn gain_refit_single_path_is_exact() {
        let s = setup(6, 16);
        let paths = on_grid_paths(&s, 1, 6);
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let meas = measure(&s.sound, &h, 0.0, 0, &mut seed::stream(50, "n", 6)).unwrap();
        let (op, y_w) = whiten_measurements(&s.sound, &meas);
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let t = &paths.paths[0];
        let known = EstimatedPath {
            alpha: C::new(0.0, 0.0),
            tau: t.tau,
            aoa: t.aoa,
            aod: t.aod,
            tau_index: s.dict.tau_grid.iter().position(|&x| x == t.tau).unwrap(),
            aoa_index: s
                .dict
                .aoa_grid
                .values()
                .iter()
                .position(|&x| x == t.aoa)
                .unwrap(),
            aod_index: s
                .dict
                .aod_grid
                .values()
                .iter()
                .position(|&x| x == t.aod)
                .unwrap(),
        };
        let (alphas, deficient) = gain_refit(&est, &y_w, &[known]).unwrap();
        assert!(!deficient);
        let rel = (alphas[0] - t.alpha).norm() / t.alpha.norm();
        assert!(rel < 1e-10, "refit error {rel}");
    }

    #[test]
    fn gain_refit_matches_normal_equations_and_scales_linearly() {
        let s = setup(7, 16);
        let paths = on_grid_paths(&s, 2, 7);
        let h = synth_channel(&s.cfg, &s.imp, &s.pulse, &paths).unwrap();
        let meas = measure(&s.sound, &h, 0.0, 0, &mut seed::stream(51, "n", 7)).unwrap();
        let (op, y_w) = whiten_measurements(&s.sound, &meas);
        let est = DaOmpBs::new(&s.cfg, &s.dict, &s.pulse, &op).unwrap();
        let known: Vec<EstimatedPath<f64>> = paths
            .paths
            .iter()
            .map(|t| EstimatedPath {
                alpha: C::new(0.0, 0.0),
                tau: t.tau,
                aoa: t.aoa,
                aod: t.aod,
                tau_index: s.dict.tau_grid.iter().position(|&x| x == t.tau).unwrap(),
                aoa_index: s
                    .dict
                    .aoa_grid
                    .values()
                    .iter()
                    .position(|&x| x == t.aoa)
                    .unwrap(),
                aod_index: s
                    .dict
                    .aod_grid
                    .values()
                    .iter()
                    .position(|&x| x == t.aod)
                    .unwrap(),
            })
            .collect();
        let (alphas, _) = gain_refit(&est, &y_w, &known).unwrap();
        // Closed-form 2x2 normal equations from explicitly stacked columns.
        let mut a00 = C::new(0.0, 0.0);
        let mut a01 = C::new(0.0, 0.0);
        let mut a11 = C::new(0.0, 0.0);
        let mut b0 = C::new(0.0, 0.0);
        let mut b1 = C::new(0.0, 0.0);
        for k in 0..s.cfg.k {
            let c0 = est.path_column(k, &known[0]).unwrap();
            let c1 = est.path_column(k, &known[1]).unwrap();
            for r in 0..op.rows() {
                a00 += c0[r].conj() * c0[r];
                a01 += c0[r].conj() * c1[r];
                a11 += c1[r].conj() * c1[r];
                b0 += c0[r].conj() * y_w[k][r];
                b1 += c1[r].conj() * y_w[k][r];
            }
        }
        let det = a00 * a11 - a01 * a01.conj();
        let x0 = (a11 * b0 - a01 * b1) / det;
        let x1 = (a00 * b1 - a01.conj() * b0) / det;
        assert!((alphas[0] - x0).norm() < 1e-9 * x0.norm());
        assert!((alphas[1] - x1).norm() < 1e-9 * x1.norm());
        // Linearity: scaling the measurements scales the gains.
        let y2: Vec<CVec<f64>> = y_w.iter().map(|y| y * C::new(3.0, 0.0)).collect();
        let (alphas2, _) = gain_refit(&est, &y2, &known).unwrap();
        for (a, b) in alphas2.iter().zip(&alphas) {
            assert!((a - b * C::new(3.0, 0.0)).norm() < 1e-9 * a.norm());
        }
    }
}
