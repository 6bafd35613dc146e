//! Spatial covariance of generated channels.
//!
//! With `H = R diag(w) S^T` and `w = rho . psi . nu(t) . xi(f)`:
//!
//! * receive side (`R x R`): `K_R = E[H H^H] = R U D_R U^H R^H`, with
//!   `D_R = E_t[V(t) S^T S^* V(t)^H]`;
//! * transmit side (`S x S`): `K_S = E[H^H H] = S^* U^* D_S U^T S^T`, with
//!   `D_S = E_t[V(t)^H R^H R V(t)]`.
//!
//! Time-averaging keeps entry `(m, m')` of the Gram matrix only when
//! `nu_m = nu_m'` (see [`doppler_gram`]). When every Doppler coefficient is
//! distinct `D` is diagonal, the phase and frequency terms cancel, and the
//! covariance reduces to `R diag(rho) D diag(rho) R^H`: independent of
//! frequency and of time. [`theoretical_covariance`] returns that form,
//! which is also the limit of the phase-randomized ensemble average at any
//! `(f, t)`. When some coefficients coincide (all of them, for static
//! endpoints) the time average keeps the off-diagonal blocks instead; that
//! limit depends on `f` and the initial phases and is returned by
//! [`time_limit_covariance`].
//!
//! Naming follows which array matrix sandwiches the expression: `R ... R^H`
//! is the receive-side covariance.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{RankMProduct, SpatialMatrices};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_relative_error, CMatrix, C64};
use crate::rng::substream;

/// Default tolerance under which two Doppler coefficients count as equal.
pub const DEFAULT_NU_TOLERANCE: f64 = 1e-12;

/// Draws or samples summed sequentially inside one reduction chunk.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Receive,
    Transmit,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Receive => "receive",
            Side::Transmit => "transmit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Theoretical,
    /// Infinite-horizon time average at frequency `f`.
    TimeLimit { f: f64 },
    TimeSample { n_samples: usize, interval: f64 },
    EnsembleSample { n_draws: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub matrix: CMatrix,
    pub side: Side,
    pub provenance: Provenance,
    pub frobenius_error_vs_theoretical: Option<f64>,
    /// Subpaths sharing their Doppler coefficient with at least one other.
    /// Nonzero means the time average does not converge to the theoretical
    /// covariance.
    pub degenerate_doppler_subpaths: usize,
}

impl CovarianceReport {
    pub fn hermitian_defect(&self) -> f64 {
        self.matrix.hermitian_defect()
    }

    /// Smallest eigenvalue over largest, for the PSD check.
    pub fn min_eigen_ratio(&self) -> f64 {
        let ev = self.matrix.hermitian_eigenvalues();
        let max = ev.last().copied().unwrap_or(0.0);
        if max <= 0.0 {
            return if ev.iter().all(|e| *e == 0.0) { 0.0 } else { f64::NEG_INFINITY };
        }
        ev[0] / max
    }

    pub fn is_hermitian_psd(&self) -> bool {
        self.hermitian_defect() <= 1e-10 && self.min_eigen_ratio() >= -1e-9
    }
}

/// Time average of `V(t) G V(t)^H` for the Gram matrix `G` of one side.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerGram {
    /// `M x M`; zero wherever the two Doppler coefficients differ.
    pub matrix: CMatrix,
    /// Connected groups of equal Doppler coefficients (ascending indices).
    pub equal_doppler_groups: Vec<Vec<usize>>,
}

impl DopplerGram {
    pub fn is_diagonal(&self) -> bool {
        self.equal_doppler_groups.iter().all(|g| g.len() == 1)
    }

    pub fn degenerate_subpaths(&self) -> usize {
        self.equal_doppler_groups.iter().filter(|g| g.len() > 1).map(Vec::len).sum()
    }
}

/// `G_{m,m'} = sum_e A_{e,m} conj(A_{e,m'})`.
fn column_gram(a: &CMatrix) -> CMatrix {
    let m = a.cols();
    let mut g = CMatrix::zeros(m, m);
    for e in 0..a.rows() {
        let row = a.row(e);
        for i in 0..m {
            let x = row[i];
            for j in 0..m {
                g[(i, j)] += x * row[j].conj();
            }
        }
    }
    g
}

/// Gram matrix entering `D`: `S^T S^*` for the receive side, `R^H R` for the
/// transmit side.
fn side_gram(sp: &SpatialMatrices, side: Side) -> CMatrix {
    match side {
        Side::Receive => column_gram(&sp.s),
        Side::Transmit => column_gram(&sp.r).conj(),
    }
}

fn doppler_groups(nu: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..nu.len()).collect();
    order.sort_by(|a, b| nu[*a].total_cmp(&nu[*b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k > 0 && (nu[i] - nu[order[k - 1]]).abs() <= tol {
            groups.last_mut().expect("group opened").push(i);
        } else {
            groups.push(vec![i]);
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

fn grouped_gram(gram: CMatrix, nu: &[f64], tol: f64) -> DopplerGram {
    let groups = doppler_groups(nu, tol);
    let mut label = vec![0usize; nu.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            label[i] = gi;
        }
    }
    let mut matrix = gram;
    let m = nu.len();
    for i in 0..m {
        for j in 0..m {
            if label[i] != label[j] {
                matrix[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    DopplerGram {
        matrix,
        equal_doppler_groups: groups,
    }
}

/// Receive-side `D = E_t[V(t) S^T S^* V(t)^H]`.
///
/// Entry `(m, m')` keeps `(S^T S^*)_{m,m'}` when the two subpaths fall in the
/// same equal-Doppler group (coefficients chained within `nu_tolerance`),
/// and is zero otherwise.
pub fn doppler_gram(sp: &SpatialMatrices, nu_tolerance: f64) -> DopplerGram {
    doppler_gram_for(sp, Side::Receive, nu_tolerance)
}

/// [`doppler_gram`] for either side.
pub fn doppler_gram_for(sp: &SpatialMatrices, side: Side, nu_tolerance: f64) -> DopplerGram {
    grouped_gram(side_gram(sp, side), &sp.nu, nu_tolerance)
}

/// `A diag(d) A^H` with real weights `d`.
fn weighted_outer(a: &CMatrix, d: &[f64]) -> CMatrix {
    let n = a.rows();
    CMatrix::from_fn(n, n, |i, j| {
        a.row(i)
            .iter()
            .zip(a.row(j))
            .zip(d)
            .map(|((x, y), w)| x * y.conj() * w)
            .sum()
    })
}

/// WSSUS covariance `R diag(rho) diag(D) diag(rho) R^H` (receive) or its
/// transmit mirror `S^* diag(rho) diag(D_S) diag(rho) S^T`.
///
/// Takes neither `f` nor `t`: the result is frequency-flat and does not move
/// with the endpoints.
pub fn theoretical_covariance(sp: &SpatialMatrices, side: Side, nu_tolerance: f64) -> CovarianceReport {
    let gram = doppler_gram_for(sp, side, nu_tolerance);
    let d: Vec<f64> = (0..sp.subpath_count())
        .map(|m| sp.rho[m] * gram.matrix[(m, m)].re * sp.rho[m])
        .collect();
    let matrix = match side {
        Side::Receive => weighted_outer(&sp.r, &d),
        Side::Transmit => weighted_outer(&sp.s.conj(), &d),
    };
    CovarianceReport {
        matrix,
        side,
        provenance: Provenance::Theoretical,
        frobenius_error_vs_theoretical: Some(0.0),
        degenerate_doppler_subpaths: gram.degenerate_subpaths(),
    }
}

/// Exact infinite-horizon time average of `H H^H` (or `H^H H`) at `f`,
/// equal-Doppler blocks included. Matches [`theoretical_covariance`] when
/// every Doppler coefficient is distinct.
pub fn time_limit_covariance(sp: &SpatialMatrices, f: f64, side: Side, nu_tolerance: f64) -> CovarianceReport {
    let gram = doppler_gram_for(sp, side, nu_tolerance);
    // u = rho . psi . xi(f)
    let u: Vec<C64> = (0..sp.subpath_count())
        .map(|m| sp.psi[m] * sp.rho[m] * C64::from_polar(1.0, -TAU * f * sp.tau[m]))
        .collect();
    let (outer, u) = match side {
        Side::Receive => (sp.r.clone(), u),
        Side::Transmit => (sp.s.conj(), u.iter().map(|z| z.conj()).collect()),
    };
    let m = u.len();
    // B = outer diag(u); K = B D B^H
    let b = CMatrix::from_fn(outer.rows(), m, |e, k| outer[(e, k)] * u[k]);
    let matrix = &(&b * &gram.matrix) * &b.adjoint();
    let theory = theoretical_covariance(sp, side, nu_tolerance);
    CovarianceReport {
        frobenius_error_vs_theoretical: Some(frobenius_relative_error(&matrix, &theory.matrix)),
        matrix,
        side,
        provenance: Provenance::TimeLimit { f },
        degenerate_doppler_subpaths: gram.degenerate_subpaths(),
    }
}

/// `H H^H` for the receive side, `H^H H` for the transmit side.
fn outer_product(h: &CMatrix, side: Side) -> CMatrix {
    match side {
        Side::Receive => {
            let n = h.rows();
            CMatrix::from_fn(n, n, |i, j| h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b.conj()).sum())
        }
        Side::Transmit => {
            let (rows, n) = h.shape();
            CMatrix::from_fn(n, n, |i, j| (0..rows).map(|r| h[(r, i)].conj() * h[(r, j)]).sum())
        }
    }
}

/// Sum of `term(k)` over `range`, reduced in fixed-size chunks whose partial
/// sums are added in order. The result does not depend on the thread count.
fn chunked_sum<F>(range: Range<usize>, dim: usize, term: F) -> CMatrix
where
    F: Fn(usize) -> CMatrix + Sync,
{
    let start = range.start;
    let len = range.len();
    let chunks = len.div_ceil(CHUNK);
    let partials: Vec<CMatrix> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = start + c * CHUNK;
            let hi = (lo + CHUNK).min(range.end);
            let mut acc = CMatrix::zeros(dim, dim);
            for k in lo..hi {
                acc += &term(k);
            }
            acc
        })
        .collect();
    let mut total = CMatrix::zeros(dim, dim);
    for p in &partials {
        total += p;
    }
    total
}

/// Running averages of `term` at each checkpoint (ascending sample counts).
fn running_averages<F>(checkpoints: &[usize], dim: usize, term: F) -> Vec<CMatrix>
where
    F: Fn(usize) -> CMatrix + Sync,
{
    let mut total = CMatrix::zeros(dim, dim);
    let mut done = 0;
    checkpoints
        .iter()
        .map(|&n| {
            total += &chunked_sum(done..n, dim, &term);
            done = n;
            total.scale(1.0 / n as f64)
        })
        .collect()
}

fn side_dim(sp: &SpatialMatrices, side: Side) -> usize {
    match side {
        Side::Receive => sp.rx_count(),
        Side::Transmit => sp.tx_count(),
    }
}

fn check_checkpoints(name: &'static str, checkpoints: &[usize]) -> Result<()> {
    if checkpoints.is_empty() || checkpoints[0] == 0 {
        return Err(Error::invalid(name, "need at least one positive budget"));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(name, "budgets must be strictly increasing"));
    }
    Ok(())
}

/// Channel at `(f, t)` given precomputed `rho`-weighted `R` and `xi(f)`.
struct PointEvaluator<'a> {
    sp: &'a SpatialMatrices,
    product: RankMProduct,
    freq: Vec<C64>,
}

impl<'a> PointEvaluator<'a> {
    fn new(sp: &'a SpatialMatrices, f: f64) -> Self {
        PointEvaluator {
            sp,
            product: RankMProduct::new(sp.power_weighted_rx(), &sp.s),
            freq: sp.frequency_vector(f),
        }
    }

    fn channel(&self, psi: &[C64], t: f64) -> CMatrix {
        let doppler = self.sp.doppler_vector(t);
        let w: Vec<C64> = psi
            .iter()
            .zip(&doppler)
            .zip(&self.freq)
            .map(|((p, d), x)| p * d * x)
            .collect();
        self.product.eval(&w)
    }
}

/// `(1/T) sum_t H H^H` over the given time points at frequency `f`.
pub fn sample_covariance_time(sp: &SpatialMatrices, f: f64, times: &[f64], side: Side) -> Result<CovarianceReport> {
    if times.is_empty() {
        return Err(Error::invalid("times", "need at least one time point"));
    }
    let eval = PointEvaluator::new(sp, f);
    let dim = side_dim(sp, side);
    let sum = chunked_sum(0..times.len(), dim, |k| outer_product(&eval.channel(&sp.psi, times[k]), side));
    let matrix = sum.scale(1.0 / times.len() as f64);
    let interval = if times.len() > 1 {
        (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
    } else {
        0.0
    };
    Ok(finish_sample(sp, matrix, side, Provenance::TimeSample {
        n_samples: times.len(),
        interval,
    }))
}

/// Time-average estimates on the grid `t_k = k * interval` after each
/// checkpoint number of samples.
pub fn time_covariance_curve(
    sp: &SpatialMatrices,
    f: f64,
    interval: f64,
    checkpoints: &[usize],
    side: Side,
) -> Result<Vec<CovarianceReport>> {
    check_checkpoints("time_budgets", checkpoints)?;
    let eval = PointEvaluator::new(sp, f);
    let dim = side_dim(sp, side);
    let averages = running_averages(checkpoints, dim, |k| {
        outer_product(&eval.channel(&sp.psi, k as f64 * interval), side)
    });
    Ok(averages
        .into_iter()
        .zip(checkpoints)
        .map(|(m, &n)| finish_sample(sp, m, side, Provenance::TimeSample { n_samples: n, interval }))
        .collect())
}

/// Phases of ensemble draw `draw`: the same stream and order
/// [`crate::params::redraw_phases_with`] uses on `substream(seed, draw)`.
fn draw_psi(seed: u64, draw: usize, m: usize) -> Vec<C64> {
    let mut rng = substream(seed, draw as u64);
    (0..m)
        .map(|_| {
            let phase: f64 = rng.random_range(0.0..TAU);
            C64::from_polar(1.0, phase)
        })
        .collect()
}

/// Average of `H H^H` (or `H^H H`) over `n_draws` phase-randomized copies of
/// the link at a fixed `(f, t)`. Everything except the initial phases stays
/// fixed. Draw `k` uses RNG stream `(seed, k)`.
pub fn sample_covariance_ensemble(
    sp: &SpatialMatrices,
    f: f64,
    t: f64,
    n_draws: usize,
    seed: u64,
    side: Side,
) -> Result<CovarianceReport> {
    if n_draws == 0 {
        return Err(Error::invalid("n_draws", "must be >= 1"));
    }
    Ok(ensemble_covariance_curve(sp, f, t, &[n_draws], seed, side)?
        .pop()
        .expect("one checkpoint"))
}

/// Ensemble estimates after each checkpoint number of draws.
pub fn ensemble_covariance_curve(
    sp: &SpatialMatrices,
    f: f64,
    t: f64,
    checkpoints: &[usize],
    seed: u64,
    side: Side,
) -> Result<Vec<CovarianceReport>> {
    check_checkpoints("n_draws", checkpoints)?;
    let eval = PointEvaluator::new(sp, f);
    let dim = side_dim(sp, side);
    let m = sp.subpath_count();
    let averages = running_averages(checkpoints, dim, |k| {
        outer_product(&eval.channel(&draw_psi(seed, k, m), t), side)
    });
    Ok(averages
        .into_iter()
        .zip(checkpoints)
        .map(|(mat, &n)| finish_sample(sp, mat, side, Provenance::EnsembleSample { n_draws: n }))
        .collect())
}

fn finish_sample(sp: &SpatialMatrices, matrix: CMatrix, side: Side, provenance: Provenance) -> CovarianceReport {
    let theory = theoretical_covariance(sp, side, DEFAULT_NU_TOLERANCE);
    CovarianceReport {
        frobenius_error_vs_theoretical: Some(frobenius_relative_error(&matrix, &theory.matrix)),
        matrix,
        side,
        provenance,
        degenerate_doppler_subpaths: theory.degenerate_doppler_subpaths,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Time,
    Ensemble,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Time => "time",
            Estimator::Ensemble => "ensemble",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    /// Evaluation frequency, Hz.
    pub f: f64,
    /// Fixed time of the ensemble draws, s.
    pub ensemble_time: f64,
    /// Spacing of successive time samples, s.
    pub sample_interval: f64,
    /// Numbers of time samples at which the error is reported.
    pub time_budgets: Vec<usize>,
    /// Numbers of ensemble draws at which the error is reported.
    pub ensemble_budgets: Vec<usize>,
    pub seed: u64,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub estimator: Estimator,
    pub budget: usize,
    pub frobenius_error: f64,
}

/// Error of the time and ensemble estimators against the theoretical
/// covariance, one row per (estimator, budget).
pub fn convergence_experiment(sp: &SpatialMatrices, cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRow>> {
    if !(cfg.sample_interval.is_finite() && cfg.sample_interval > 0.0) {
        return Err(Error::invalid("sample_interval", "must be > 0"));
    }
    let time = time_covariance_curve(sp, cfg.f, cfg.sample_interval, &cfg.time_budgets, cfg.side)?;
    let ens = ensemble_covariance_curve(sp, cfg.f, cfg.ensemble_time, &cfg.ensemble_budgets, cfg.seed, cfg.side)?;
    let row = |estimator, budget, r: &CovarianceReport| ConvergenceRow {
        estimator,
        budget,
        frobenius_error: r.frobenius_error_vs_theoretical.expect("sample reports carry an error"),
    };
    Ok(time
        .iter()
        .zip(&cfg.time_budgets)
        .map(|(r, &b)| row(Estimator::Time, b, r))
        .chain(ens.iter().zip(&cfg.ensemble_budgets).map(|(r, &b)| row(Estimator::Ensemble, b, r)))
        .collect())
}

/// Smallest budget at which `estimator` reaches `threshold`, if any.
pub fn budget_to_reach(rows: &[ConvergenceRow], estimator: Estimator, threshold: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.estimator == estimator && r.frobenius_error <= threshold)
        .map(|r| r.budget)
        .min()
}
