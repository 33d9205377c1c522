//! Alternating sparse coding / gradient-descent learning of the
//! impairment-related dictionary factors.
//!
//! The objective is the squared representation error of the initial channel
//! estimates under the gridded model: on central subcarriers the per-path
//! distortion is the flat in-band gain, on side subcarriers it is the frozen
//! per-pair profile captured when the path was coded. The four learnable
//! components are the two gain/coupling factors and the two location-error
//! vectors; the phase factors they induce are always reconstructed from the
//! location errors, so they stay unit-modulus by construction.

use crate::estimator::{DaOmpBs, DictionarySet, EstimatedPath, EstimatorError, EstimatorParams, SensingOp};
use crate::linalg;
use crate::pulse::{central_gain, distortion_matrix, partition, PulseSpec, SubcarrierPartition};
use crate::real::{rf, Real};
use crate::sysmodel::{delta_f, f_k, AngleGrid, Side, SystemConfig, SPEED_OF_LIGHT};
use crate::{CMat, CVec, RVec, C};
use serde::{Deserialize, Serialize};

/// Immutable learning context: config, band partition, and the per-location
/// initial channel estimates `H_hat[u][k]`.
pub struct DlProblem<'a, T: Real> {
    pub cfg: &'a SystemConfig<T>,
    pub pulse: &'a PulseSpec<T>,
    pub estimates: &'a [Vec<CMat<T>>],
    part: SubcarrierPartition,
    dfs: Vec<T>,
    flat: Vec<T>,
}

impl<'a, T: Real> DlProblem<'a, T> {
    pub fn new(
        cfg: &'a SystemConfig<T>,
        pulse: &'a PulseSpec<T>,
        estimates: &'a [Vec<CMat<T>>],
    ) -> Self {
        let part = partition(cfg);
        let dfs = (0..cfg.k).map(|k| delta_f(cfg, k).unwrap()).collect();
        let flat = (0..cfg.k)
            .map(|k| {
                if part.is_central(k) {
                    central_gain(pulse, cfg, k).unwrap_or(T::one())
                } else {
                    T::one()
                }
            })
            .collect();
        Self {
            cfg,
            pulse,
            estimates,
            part,
            dfs,
            flat,
        }
    }

    pub fn locations(&self) -> usize {
        self.estimates.len()
    }

    pub fn partition(&self) -> &SubcarrierPartition {
        &self.part
    }
}

/// Sparse codes of one location: grid-snapped path tuples plus the
/// distortion profiles frozen at coding time (`g_side[l][s]` indexes
/// [`SubcarrierPartition::side`]).
#[derive(Debug, Clone)]
pub struct LocationCodes<T: Real> {
    pub paths: Vec<EstimatedPath<T>>,
    pub g_side: Vec<Vec<CMat<T>>>,
}

impl<T: Real> LocationCodes<T> {
    pub fn empty() -> Self {
        Self {
            paths: Vec::new(),
            g_side: Vec::new(),
        }
    }
}

/// Capture codes from an estimator run: the side-subcarrier distortion
/// profiles are evaluated with the dictionary's current location-error
/// estimates and then held fixed, matching the treatment of the profiles as
/// constants in the dictionary-update derivatives.
pub fn freeze_codes<T: Real>(
    prob: &DlProblem<'_, T>,
    dict: &DictionarySet<T>,
    paths: Vec<EstimatedPath<T>>,
) -> LocationCodes<T> {
    let g_side = paths
        .iter()
        .map(|p| {
            prob.part
                .side
                .iter()
                .map(|&k| {
                    distortion_matrix(
                        prob.pulse,
                        prob.cfg,
                        dict.eps_r.as_slice(),
                        dict.eps_t.as_slice(),
                        k,
                        p.tau,
                        p.aoa,
                        p.aod,
                    )
                    .expect("distortion profile")
                })
                .collect()
        })
        .collect();
    LocationCodes { paths, g_side }
}

/// Bare steering-with-location-error profile for one side: entry `n` is
/// `exp(-j 2 pi (f_c eps_n + f_k n d) sin(angle) / c) / sqrt(N)`.
fn bare_profile<T: Real>(
    cfg: &SystemConfig<T>,
    eps: &RVec<T>,
    side: Side,
    k: usize,
    angle: T,
) -> CVec<T> {
    let n = cfg.antennas(side);
    let d = cfg.spacing(side);
    let fk = f_k(cfg, k).expect("subcarrier");
    let c_light = rf::<T>(SPEED_OF_LIGHT);
    let scale = T::one() / rf::<T>(n as f64).sqrt();
    let rate = -rf::<T>(2.0) * T::pi() * angle.sin() / c_light;
    CVec::from_fn(n, |i, _| {
        let ph = rate * (cfg.f_c * eps[i] + fk * rf::<T>(i as f64) * d);
        C::new(ph.cos() * scale, ph.sin() * scale)
    })
}

/// Per-path quantities shared by the objective and all four gradients.
struct PathTerm<'c, T: Real> {
    gamma: C<T>,
    u: CVec<T>,
    v: CVec<T>,
    du: CVec<T>,
    dv: CVec<T>,
    /// None on central subcarriers (profile is all-ones there).
    g: Option<&'c CMat<T>>,
    sin_aoa: T,
    sin_aod: T,
}

fn path_terms<'c, T: Real>(
    prob: &DlProblem<'_, T>,
    dict: &DictionarySet<T>,
    codes: &'c LocationCodes<T>,
    k: usize,
    side_pos: Option<usize>,
) -> Vec<PathTerm<'c, T>> {
    codes
        .paths
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let ph = -rf::<T>(2.0) * T::pi() * prob.dfs[k] * p.tau;
            let gamma = p.alpha * C::new(ph.cos(), ph.sin()) * C::new(prob.flat[k], T::zero());
            let u = bare_profile(prob.cfg, &dict.eps_r, Side::Rx, k, p.aoa);
            let v = bare_profile(prob.cfg, &dict.eps_t, Side::Tx, k, p.aod);
            let du = &dict.d_r1 * &u;
            let dv = &dict.d_t1 * &v;
            let g = side_pos.map(|s| &codes.g_side[l][s]);
            PathTerm {
                gamma,
                u,
                v,
                du,
                dv,
                g,
                sin_aoa: p.aoa.sin(),
                sin_aod: p.aod.sin(),
            }
        })
        .collect()
}

fn model_from_terms<T: Real>(terms: &[PathTerm<'_, T>], n_r: usize, n_t: usize) -> CMat<T> {
    let mut m = CMat::zeros(n_r, n_t);
    for t in terms {
        for nt in 0..n_t {
            let col = t.gamma * t.dv[nt].conj();
            match t.g {
                None => {
                    for nr in 0..n_r {
                        m[(nr, nt)] += col * t.du[nr];
                    }
                }
                Some(g) => {
                    for nr in 0..n_r {
                        m[(nr, nt)] += col * g[(nr, nt)] * t.du[nr];
                    }
                }
            }
        }
    }
    m
}

/// Representation error of one location under the current dictionary.
pub fn location_objective<T: Real>(
    prob: &DlProblem<'_, T>,
    dict: &DictionarySet<T>,
    codes: &LocationCodes<T>,
    u: usize,
) -> T {
    let mut j = T::zero();
    for k in 0..prob.cfg.k {
        let side_pos = prob.part.side.iter().position(|&s| s == k);
        let terms = path_terms(prob, dict, codes, k, side_pos);
        let m = model_from_terms(&terms, prob.cfg.n_r, prob.cfg.n_t);
        j += linalg::fro2(&(&prob.estimates[u][k] - m));
    }
    j
}

/// Full learning objective: sum of all location representation errors.
pub fn dl_objective<T: Real>(
    prob: &DlProblem<'_, T>,
    dict: &DictionarySet<T>,
    codes: &[LocationCodes<T>],
) -> T {
    assert_eq!(codes.len(), prob.locations());
    (0..prob.locations())
        .map(|u| location_objective(prob, dict, &codes[u], u))
        .fold(T::zero(), |a, b| a + b)
}

/// One accumulated gradient pass over every `(location, subcarrier, path)`
/// term; the four outputs share all intermediate products.
pub struct Gradients<T: Real> {
    pub d_r1: CMat<T>,
    pub d_t1: CMat<T>,
    pub eps_r: RVec<T>,
    pub eps_t: RVec<T>,
}

/// All four derivatives of [`dl_objective`] at the current point.
///
/// The complex-factor entries follow the derivative-with-respect-to-the-
/// unconjugated-variable convention, so the finite-difference gradient of
/// the real objective along `Re/Im` of an entry `g` is `2 Re(g)` /
/// `-2 Im(g)`, and the descent direction is the conjugate. The location
/// error gradients are plain real gradients.
pub fn gradients<T: Real>(
    prob: &DlProblem<'_, T>,
    dict: &DictionarySet<T>,
    codes: &[LocationCodes<T>],
) -> Gradients<T> {
    let n_r = prob.cfg.n_r;
    let n_t = prob.cfg.n_t;
    let mut g_r1 = CMat::<T>::zeros(n_r, n_r);
    let mut g_t1 = CMat::<T>::zeros(n_t, n_t);
    let mut g_er = RVec::<T>::zeros(n_r);
    let mut g_et = RVec::<T>::zeros(n_t);
    let c_light = rf::<T>(SPEED_OF_LIGHT);
    let sin_rate = -rf::<T>(2.0) * T::pi() * prob.cfg.f_c / c_light;
    let d_r1_t = dict.d_r1.transpose();
    let d_t1_adj = dict.d_t1.adjoint();
    for u in 0..prob.locations() {
        let codes_u = &codes[u];
        if codes_u.paths.is_empty() {
            continue;
        }
        for k in 0..prob.cfg.k {
            let side_pos = prob.part.side.iter().position(|&s| s == k);
            let terms = path_terms(prob, dict, codes_u, k, side_pos);
            let m = model_from_terms(&terms, n_r, n_t);
            let e = &prob.estimates[u][k] - m;
            for t in &terms {
                // eg = conj(E) ⊙ G_l (G all-ones on central subcarriers).
                // w = eg * conj(Dv):    N_R
                // z = eg^T * Du:        N_T
                let mut w = CVec::<T>::zeros(n_r);
                let mut z = CVec::<T>::zeros(n_t);
                match t.g {
                    None => {
                        for nt in 0..n_t {
                            let dvc = t.dv[nt].conj();
                            let mut zacc = C::new(T::zero(), T::zero());
                            for nr in 0..n_r {
                                let eg = e[(nr, nt)].conj();
                                w[nr] += eg * dvc;
                                zacc += eg * t.du[nr];
                            }
                            z[nt] = zacc;
                        }
                    }
                    Some(g) => {
                        for nt in 0..n_t {
                            let dvc = t.dv[nt].conj();
                            let mut zacc = C::new(T::zero(), T::zero());
                            for nr in 0..n_r {
                                let eg = e[(nr, nt)].conj() * g[(nr, nt)];
                                w[nr] += eg * dvc;
                                zacc += eg * t.du[nr];
                            }
                            z[nt] = zacc;
                        }
                    }
                }
                // dJ/dD_R1 -= gamma * w u^T
                for col in 0..n_r {
                    let uc = t.u[col] * t.gamma;
                    for row in 0..n_r {
                        g_r1[(row, col)] -= w[row] * uc;
                    }
                }
                // dJ/dD_T1 -= conj(gamma) * conj(z) v^T
                let gc = t.gamma.conj();
                for col in 0..n_t {
                    let vc = t.v[col] * gc;
                    for row in 0..n_t {
                        g_t1[(row, col)] -= z[row].conj() * vc;
                    }
                }
                // dJ/deps_R -= 2 Re{ gamma s_l (D_R1^T w) ⊙ u }
                let s_l = C::new(T::zero(), sin_rate * t.sin_aoa);
                let dw = &d_r1_t * &w;
                for nr in 0..n_r {
                    g_er[nr] -= rf::<T>(2.0) * (t.gamma * s_l * dw[nr] * t.u[nr]).re;
                }
                // dJ/deps_T -= 2 Re{ gamma conj(s'_l) conj(v) ⊙ (D_T1^* z) }
                let s_t = C::new(T::zero(), sin_rate * t.sin_aod);
                let dz = &d_t1_adj * &z;
                for nt in 0..n_t {
                    g_et[nt] -= rf::<T>(2.0) * (t.gamma * s_t.conj() * t.v[nt].conj() * dz[nt]).re;
                }
            }
        }
    }
    Gradients {
        d_r1: g_r1,
        d_t1: g_t1,
        eps_r: g_er,
        eps_t: g_et,
    }
}

/// Which dictionary component a line-search step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DlParam {
    DR1,
    DT1,
    EpsR,
    EpsT,
}

/// Backtracking line-search parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSearchCfg<T: Real> {
    pub eta0: T,
    pub rho: T,
    pub c1: T,
    pub t_max: usize,
}

impl<T: Real> Default for LineSearchCfg<T> {
    fn default() -> Self {
        Self {
            eta0: T::one(),
            rho: rf(0.5),
            c1: rf(1e-4),
            t_max: 30,
        }
    }
}

/// Outcome of one accepted or stalled line-search step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome<T: Real> {
    pub eta: T,
    pub objective: T,
    pub stalled: bool,
}

/// Armijo backtracking on one dictionary component. Complex factors step
/// along the conjugated derivative (the steepest-descent direction of the
/// real objective); location errors step along their real gradient. On
/// stall the parameter is left unchanged.
pub fn line_search_step<T: Real>(
    prob: &DlProblem<'_, T>,
    dict: &mut DictionarySet<T>,
    codes: &[LocationCodes<T>],
    param: DlParam,
    ls: &LineSearchCfg<T>,
    current_objective: T,
) -> StepOutcome<T> {
    let grads = gradients(prob, dict, codes);
    let norm2 = match param {
        DlParam::DR1 => linalg::fro2(&grads.d_r1),
        DlParam::DT1 => linalg::fro2(&grads.d_t1),
        DlParam::EpsR => grads.eps_r.iter().map(|x| *x * *x).fold(T::zero(), |a, b| a + b),
        DlParam::EpsT => grads.eps_t.iter().map(|x| *x * *x).fold(T::zero(), |a, b| a + b),
    };
    if !(norm2 > T::zero()) {
        return StepOutcome {
            eta: T::zero(),
            objective: current_objective,
            stalled: false,
        };
    }
    let mut eta = ls.eta0;
    for _ in 0..ls.t_max {
        let mut candidate = dict.clone();
        match param {
            DlParam::DR1 => {
                let step = grads.d_r1.map(|g| g.conj() * C::new(eta, T::zero()));
                candidate.d_r1 -= step;
            }
            DlParam::DT1 => {
                let step = grads.d_t1.map(|g| g.conj() * C::new(eta, T::zero()));
                candidate.d_t1 -= step;
            }
            DlParam::EpsR => {
                for i in 0..candidate.eps_r.len() {
                    candidate.eps_r[i] -= eta * grads.eps_r[i];
                }
            }
            DlParam::EpsT => {
                for i in 0..candidate.eps_t.len() {
                    candidate.eps_t[i] -= eta * grads.eps_t[i];
                }
            }
        }
        let j_new = dl_objective(prob, &candidate, codes);
        if j_new <= current_objective - ls.c1 * eta * norm2 {
            *dict = candidate;
            return StepOutcome {
                eta,
                objective: j_new,
                stalled: false,
            };
        }
        eta *= ls.rho;
    }
    StepOutcome {
        eta: T::zero(),
        objective: current_objective,
        stalled: true,
    }
}

/// Greedy farthest-point dictionary initialization.
///
/// The combined per-side dictionary is seeded with normalized data columns
/// of maximal diversity (lowest worst-case correlation with the already
/// selected set). Because the structured dictionary ties atom `i` to grid
/// angle `i`, each selected column is then assigned to its best-matching
/// ideal grid atom (greedy by correlation, one column per slot; unmatched
/// slots keep the ideal atom), and the flat factor is extracted by
/// multiplying with the pseudo-inverse of the ideal steering grid at the
/// band-centre subcarrier. Location errors start at zero.
pub fn dia_init<T: Real>(
    prob: &DlProblem<'_, T>,
    k_r: usize,
    k_t: usize,
    l_v: usize,
) -> DictionarySet<T> {
    let cfg = prob.cfg;
    let aoa_grid = AngleGrid::uniform_sin(k_r);
    let aod_grid = AngleGrid::uniform_sin(k_t);
    let k0 = (0..cfg.k)
        .min_by(|&a, &b| {
            let da = prob.dfs[a].abs();
            let db = prob.dfs[b].abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap_or(cfg.k / 2);
    let collect_pool = |transpose: bool| -> Vec<CVec<T>> {
        let mut pool = Vec::new();
        for u in 0..prob.locations() {
            for &k in &prob.part.central {
                let m = &prob.estimates[u][k];
                let cols = if transpose { m.nrows() } else { m.ncols() };
                for j in 0..cols {
                    let v: CVec<T> = if transpose {
                        CVec::from_fn(m.ncols(), |i, _| m[(j, i)].conj())
                    } else {
                        m.column(j).into_owned()
                    };
                    let n = linalg::norm2(&v).sqrt();
                    if n > rf::<T>(1e-12) {
                        pool.push((n, v / C::new(n, T::zero())));
                    }
                }
            }
        }
        // Keep the pool bounded; stride deterministically.
        let stride = (pool.len() / 4096).max(1);
        pool.into_iter()
            .step_by(stride)
            .map(|(_, v)| v)
            .collect()
    };
    let greedy = |pool: &[CVec<T>], count: usize, dim: usize| -> Option<CMat<T>> {
        if pool.len() < count {
            return None;
        }
        let mut selected: Vec<usize> = vec![0];
        let mut worst: Vec<T> = pool
            .iter()
            .map(|v| {
                let mut acc = C::new(T::zero(), T::zero());
                for (a, b) in v.iter().zip(pool[0].iter()) {
                    acc += a.conj() * *b;
                }
                acc.norm_sqr()
            })
            .collect();
        while selected.len() < count {
            let mut best = None;
            let mut best_v = T::max_value().unwrap_or(rf(1e300));
            for (i, w) in worst.iter().enumerate() {
                if selected.contains(&i) {
                    continue;
                }
                if *w < best_v {
                    best_v = *w;
                    best = Some(i);
                }
            }
            let pick = best?;
            selected.push(pick);
            for (i, v) in pool.iter().enumerate() {
                let mut acc = C::new(T::zero(), T::zero());
                for (a, b) in v.iter().zip(pool[pick].iter()) {
                    acc += a.conj() * *b;
                }
                let c = acc.norm_sqr();
                if c > worst[i] {
                    worst[i] = c;
                }
            }
        }
        let mut m = CMat::zeros(dim, count);
        for (j, &i) in selected.iter().enumerate() {
            m.set_column(j, &pool[i]);
        }
        Some(m)
    };
    let ideal_grid = |side: Side, grid: &AngleGrid<T>| -> CMat<T> {
        let n = cfg.antennas(side);
        let mut a = CMat::zeros(n, grid.len());
        for (i, &ang) in grid.values().iter().enumerate() {
            let col = crate::sysmodel::steer_ideal(cfg, side, k0, ang).expect("steering");
            a.set_column(i, &col);
        }
        a
    };
    let perturbed_identity = |n: usize| -> CMat<T> {
        CMat::from_fn(n, n, |i, j| {
            if i == j {
                C::new(T::one(), T::zero())
            } else {
                let ph = rf::<T>(0.7548776662) * rf::<T>((i * n + j) as f64);
                C::new(ph.cos(), ph.sin()) * C::new(rf::<T>(0.01), T::zero())
            }
        })
    };
    // Assign selected columns to grid slots by correlation, best first.
    let align = |selection: CMat<T>, grid_atoms: &CMat<T>| -> CMat<T> {
        let count = grid_atoms.ncols();
        let mut triples: Vec<(usize, usize, T)> = Vec::new();
        for c in 0..selection.ncols() {
            for gidx in 0..count {
                let mut acc = C::new(T::zero(), T::zero());
                for row in 0..selection.nrows() {
                    acc += selection[(row, c)].conj() * grid_atoms[(row, gidx)];
                }
                triples.push((c, gidx, acc.norm_sqr()));
            }
        }
        triples.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        let mut out = grid_atoms.clone();
        let mut col_used = vec![false; selection.ncols()];
        let mut slot_used = vec![false; count];
        for (c, gidx, _) in triples {
            if col_used[c] || slot_used[gidx] {
                continue;
            }
            col_used[c] = true;
            slot_used[gidx] = true;
            // Rotate the data column so its inner product with the ideal
            // atom is real-positive; data columns carry arbitrary path
            // phases that would otherwise scramble the flat factor.
            let mut acc = C::new(T::zero(), T::zero());
            for row in 0..selection.nrows() {
                acc += selection[(row, c)].conj() * grid_atoms[(row, gidx)];
            }
            let mag = acc.norm_sqr().sqrt();
            let rot = if mag > T::zero() {
                acc / C::new(mag, T::zero())
            } else {
                C::new(T::one(), T::zero())
            };
            let aligned = selection.column(c) * rot;
            out.set_column(gidx, &aligned);
        }
        out
    };
    let d_r1 = match greedy(&collect_pool(false), k_r, cfg.n_r) {
        Some(init) => {
            let a = ideal_grid(Side::Rx, &aoa_grid);
            align(init, &a) * linalg::pinv(&a)
        }
        None => perturbed_identity(cfg.n_r),
    };
    let d_t1 = match greedy(&collect_pool(true), k_t, cfg.n_t) {
        Some(init) => {
            let a = ideal_grid(Side::Tx, &aod_grid);
            align(init, &a) * linalg::pinv(&a)
        }
        None => perturbed_identity(cfg.n_t),
    };
    DictionarySet {
        d_r1,
        d_t1,
        eps_r: RVec::zeros(cfg.n_r),
        eps_t: RVec::zeros(cfg.n_t),
        aoa_grid,
        aod_grid,
        tau_grid: crate::estimator::default_tau_grid(cfg, l_v),
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DlHyper<T: Real> {
    pub k_r: usize,
    pub k_t: usize,
    pub l_v: usize,
    /// Gradient passes over the four components per outer iteration.
    pub inner_passes: usize,
    pub outer_max: usize,
    /// Relative objective-decrease stop.
    pub outer_tol: T,
    pub line_search: LineSearchCfg<T>,
    /// Sparse-coding stop and budget.
    pub coding: EstimatorParams<T>,
}

impl<T: Real> DlHyper<T> {
    pub fn defaults(k_r: usize, k_t: usize, l_v: usize, coding: EstimatorParams<T>) -> Self {
        Self {
            k_r,
            k_t,
            l_v,
            inner_passes: 5,
            outer_max: 50,
            outer_tol: rf(1e-4),
            line_search: LineSearchCfg::default(),
            coding,
        }
    }
}

/// Training output: the learned dictionary, the accepted objective values
/// (one per outer iteration, led by the post-initialization value), and any
/// per-location warnings.
pub struct DlOutcome<T: Real> {
    pub dict: DictionarySet<T>,
    pub trace: Vec<T>,
    pub warnings: Vec<String>,
    pub objective: T,
}

/// Alternate sparse coding and dictionary updates until the objective
/// decrease stalls. The accepted objective sequence is non-increasing by
/// construction (per-location keep-best coding, Armijo-guarded updates) and
/// asserted to stay so.
pub fn dlhwbs_train<T: Real>(
    prob: &DlProblem<'_, T>,
    hyper: &DlHyper<T>,
) -> Result<DlOutcome<T>, EstimatorError> {
    let n = prob.cfg.n_r * prob.cfg.n_t;
    let mut dict = dia_init(prob, hyper.k_r, hyper.k_t, hyper.l_v);
    let mut codes: Vec<LocationCodes<T>> =
        (0..prob.locations()).map(|_| LocationCodes::empty()).collect();
    let mut warnings = Vec::new();
    let mut objective = dl_objective(prob, &dict, &codes);
    let mut trace = vec![objective];
    let sensing = SensingOp::<T>::identity(n);
    for outer in 0..hyper.outer_max {
        // Sparse coding stage: re-estimate codes with the current
        // dictionary, keeping the previous codes wherever they represent
        // the location better under the updated dictionary.
        {
            let est = DaOmpBs::new(prob.cfg, &dict, prob.pulse, &sensing)?;
            for u in 0..prob.locations() {
                let y: Vec<CVec<T>> = prob.estimates[u]
                    .iter()
                    .map(crate::channel::vectorize)
                    .collect();
                let run = est.run(&y, &hyper.coding)?;
                if run.paths.is_empty() {
                    warnings.push(format!(
                        "outer {outer}: location {u} produced no paths; codes kept"
                    ));
                    continue;
                }
                let fresh = freeze_codes(prob, &dict, run.paths);
                let j_new = location_objective(prob, &dict, &fresh, u);
                let j_old = location_objective(prob, &dict, &codes[u], u);
                if j_new <= j_old {
                    codes[u] = fresh;
                }
            }
        }
        let after_coding = dl_objective(prob, &dict, &codes);
        assert!(
            after_coding <= objective * (T::one() + rf(1e-9)) + rf(1e-12),
            "objective increased in sparse coding: {objective} -> {after_coding}"
        );
        let mut j = after_coding;
        // Dictionary update stage.
        for _ in 0..hyper.inner_passes {
            for param in [DlParam::DR1, DlParam::DT1, DlParam::EpsR, DlParam::EpsT] {
                let out = line_search_step(prob, &mut dict, &codes, param, &hyper.line_search, j);
                j = out.objective;
            }
        }
        assert!(
            j <= after_coding * (T::one() + rf(1e-9)) + rf(1e-12),
            "objective increased in dictionary update: {after_coding} -> {j}"
        );
        let decrease = objective - j;
        objective = j;
        trace.push(objective);
        if decrease <= hyper.outer_tol * objective.max(rf(1e-30)) {
            break;
        }
    }
    Ok(DlOutcome {
        dict,
        trace,
        warnings,
        objective,
    })
}
