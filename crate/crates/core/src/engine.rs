//! Channel coefficient generation.
//!
//! Two routes compute the same `R x S` frequency response `H(f, t)` of a
//! link:
//!
//! * [`channel_baseline`] evaluates the per-element subpath sum directly,
//!   recomputing every direction, gain and phase term for each `(r, s, m)`;
//! * [`precompute_spatial`] + [`channel_optimized`] factor the sum as
//!   `H = R diag(psi . rho . nu(t) . xi(f)) S^T`, where the spatial matrices
//!   `S` (tx) and `R` (rx) depend only on geometry and are computed once.
//!
//! `f` is the absolute frequency of the evaluated point, Hz. The subpath sum
//! carries no internal normalization; link power lives in the subpath
//! powers.
//!
//! The optimized route never builds the `M x M` diagonal: rows of `R` are
//! scaled by `rho` (once per grid), by the per-point weights, then dotted
//! with rows of `S`. Summation over subpaths is always in ascending index
//! order.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::antenna::ArrayDescriptor;
use crate::error::{Error, Result};
use crate::geometry::{direction_unit_vector, doppler_coefficient, wavenumber, LinkMultipath};
use crate::linalg::{CMatrix, C64};

#[inline]
fn cis(phase: f64) -> C64 {
    let (s, c) = phase.sin_cos();
    C64::new(c, s)
}

/// Precomputed per-link state of the factored channel product.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMatrices {
    /// `S x M`, `F_s(dep_m) exp(j k0 p_s . d_m)`.
    pub s: CMatrix,
    /// `R x M`, `F_r(arr_m) exp(j k0 p_r . a_m)`.
    pub r: CMatrix,
    /// `sqrt(P_m)`.
    pub rho: Vec<f64>,
    /// Doppler coefficients, m/s.
    pub nu: Vec<f64>,
    /// Delays, s.
    pub tau: Vec<f64>,
    /// `exp(j psi_m)`.
    pub psi: Vec<C64>,
    /// Center wavenumber, rad/m.
    pub k0: f64,
}

impl SpatialMatrices {
    pub fn subpath_count(&self) -> usize {
        self.rho.len()
    }

    pub fn tx_count(&self) -> usize {
        self.s.rows()
    }

    pub fn rx_count(&self) -> usize {
        self.r.rows()
    }

    /// Doppler vector `exp(j k0 nu_m t)`.
    pub fn doppler_vector(&self, t: f64) -> Vec<C64> {
        self.nu.iter().map(|nu| cis(self.k0 * nu * t)).collect()
    }

    /// Frequency vector `exp(-j 2 pi f tau_m)`.
    pub fn frequency_vector(&self, f: f64) -> Vec<C64> {
        self.tau.iter().map(|tau| cis(-TAU * f * tau)).collect()
    }

    /// `R` with column `m` scaled by `rho_m`.
    pub fn power_weighted_rx(&self) -> CMatrix {
        weight_columns(&self.r, &self.rho)
    }

    /// Bytes held by the two spatial matrices with `real_width_bytes` per real.
    pub fn memory_bytes(&self, real_width_bytes: u64) -> u64 {
        let entries = (self.s.rows() + self.r.rows()) as u64 * self.subpath_count() as u64;
        entries * 2 * real_width_bytes
    }
}

pub(crate) fn weight_columns(m: &CMatrix, w: &[f64]) -> CMatrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for (z, k) in out.row_mut(r).iter_mut().zip(w) {
            *z *= k;
        }
    }
    out
}

/// `(A . diag(w)) B^T` for row-major `A` (`R x M`) and `B` (`S x M`).
///
/// Row `r` of `A` is scaled by `w` into a scratch row, then dotted with each
/// row of `B` accumulating in ascending `m`.
/// `A diag(w) B^T` for fixed `A` (`R x M`) and `B` (`S x M`), with `B`
/// stored transposed and split into real and imaginary planes so the inner
/// loop runs across the `S` outputs. Every entry sums over `m` in ascending
/// order.
pub(crate) struct RankMProduct {
    a: CMatrix,
    cols: usize,
    bt_re: Vec<f64>,
    bt_im: Vec<f64>,
}

impl RankMProduct {
    pub(crate) fn new(a: CMatrix, b: &CMatrix) -> Self {
        debug_assert_eq!(a.cols(), b.cols());
        let (cols, m) = b.shape();
        let mut bt_re = vec![0.0; m * cols];
        let mut bt_im = vec![0.0; m * cols];
        for s in 0..cols {
            for (k, z) in b.row(s).iter().enumerate() {
                bt_re[k * cols + s] = z.re;
                bt_im[k * cols + s] = z.im;
            }
        }
        RankMProduct { a, cols, bt_re, bt_im }
    }

    pub(crate) fn eval(&self, w: &[C64]) -> CMatrix {
        let mut out = CMatrix::zeros(self.a.rows(), self.cols);
        self.eval_into(w, out.as_mut_slice());
        out
    }

    /// Writes the row-major `R x S` product into `out`.
    pub(crate) fn eval_into(&self, w: &[C64], out: &mut [C64]) {
        debug_assert_eq!(self.a.cols(), w.len());
        let n = self.cols;
        debug_assert_eq!(out.len(), self.a.rows() * n);
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for (r, out_row) in out.chunks_exact_mut(n).enumerate() {
            re.iter_mut().for_each(|x| *x = 0.0);
            im.iter_mut().for_each(|x| *x = 0.0);
            for (k, (x, y)) in self.a.row(r).iter().zip(w).enumerate() {
                let t = x * y;
                let b_re = &self.bt_re[k * n..(k + 1) * n];
                let b_im = &self.bt_im[k * n..(k + 1) * n];
                for (((x_re, x_im), br), bi) in re.iter_mut().zip(im.iter_mut()).zip(b_re).zip(b_im) {
                    *x_re += t.re * br - t.im * bi;
                    *x_im += t.re * bi + t.im * br;
                }
            }
            for (o, (x, y)) in out_row.iter_mut().zip(re.iter().zip(&im)) {
                *o = C64::new(*x, *y);
            }
        }
    }
}

/// One-off `A diag(w) B^T`; same arithmetic as [`RankMProduct::eval`].
pub(crate) fn rank_m_product(a: &CMatrix, w: &[C64], b: &CMatrix) -> CMatrix {
    RankMProduct::new(a.clone(), b).eval(w)
}

/// Per-point subpath weights `psi . nu(t) . xi(f)`, power excluded.
#[inline]
/// Per-frequency columns of time cells, reordered row-major over `(t, f)`.
pub(crate) fn transpose_columns<T>(columns: Vec<Vec<T>>, times: usize) -> Vec<T> {
    let mut values = Vec::with_capacity(times * columns.len());
    let mut iters: Vec<_> = columns.into_iter().map(Vec::into_iter).collect();
    for _ in 0..times {
        for it in &mut iters {
            values.push(it.next().expect("one cell per time"));
        }
    }
    values
}

fn point_weights(psi: &[C64], doppler: &[C64], freq: &[C64]) -> Vec<C64> {
    psi.iter()
        .zip(doppler)
        .zip(freq)
        .map(|((p, d), x)| p * d * x)
        .collect()
}

fn check_link_arrays(link: &LinkMultipath, tx: &ArrayDescriptor, rx: &ArrayDescriptor) -> Result<f64> {
    link.validate()?;
    tx.check_frequency(link.f0)?;
    rx.check_frequency(link.f0)?;
    wavenumber(link.f0)
}

/// Direct evaluation of every `H_{r,s}(f, t)` as a sum over subpaths.
pub fn channel_baseline(
    link: &LinkMultipath,
    tx: &ArrayDescriptor,
    rx: &ArrayDescriptor,
    f: f64,
    t: f64,
) -> Result<CMatrix> {
    let k0 = check_link_arrays(link, tx, rx)?;
    let tx_pattern = tx.scalar_pattern()?;
    let rx_pattern = rx.scalar_pattern()?;
    let mut h = CMatrix::zeros(rx.element_count(), tx.element_count());
    for (r, p_r) in rx.positions.iter().enumerate() {
        for (s, p_s) in tx.positions.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for sp in &link.subpaths {
                let d = direction_unit_vector(sp.departure);
                let a = direction_unit_vector(sp.arrival);
                let nu = doppler_coefficient(a, d, link.v_rx, link.v_tx);
                acc += sp.power.sqrt()
                    * tx_pattern.gain(sp.departure)
                    * cis(sp.phase)
                    * rx_pattern.gain(sp.arrival)
                    * cis(k0 * p_s.dot(d))
                    * cis(k0 * p_r.dot(a))
                    * cis(k0 * nu * t)
                    * cis(-TAU * f * sp.delay);
            }
            h[(r, s)] = acc;
        }
    }
    Ok(h)
}

/// Build the spatial matrices and per-subpath vectors of one link.
pub fn precompute_spatial(link: &LinkMultipath, tx: &ArrayDescriptor, rx: &ArrayDescriptor) -> Result<SpatialMatrices> {
    let k0 = check_link_arrays(link, tx, rx)?;
    let tx_pattern = tx.scalar_pattern()?;
    let rx_pattern = rx.scalar_pattern()?;
    let m = link.len();
    let dirs: Vec<_> = link
        .subpaths
        .iter()
        .map(|sp| (direction_unit_vector(sp.departure), direction_unit_vector(sp.arrival)))
        .collect();

    let tx_gain: Vec<f64> = link.subpaths.iter().map(|sp| tx_pattern.gain(sp.departure)).collect();
    let rx_gain: Vec<f64> = link.subpaths.iter().map(|sp| rx_pattern.gain(sp.arrival)).collect();
    let s = CMatrix::from_fn(tx.element_count(), m, |s, k| {
        tx_gain[k] * cis(k0 * tx.positions[s].dot(dirs[k].0))
    });
    let r = CMatrix::from_fn(rx.element_count(), m, |r, k| {
        rx_gain[k] * cis(k0 * rx.positions[r].dot(dirs[k].1))
    });
    Ok(SpatialMatrices {
        s,
        r,
        rho: link.subpaths.iter().map(|sp| sp.power.sqrt()).collect(),
        nu: dirs
            .iter()
            .map(|(d, a)| doppler_coefficient(*a, *d, link.v_rx, link.v_tx))
            .collect(),
        tau: link.subpaths.iter().map(|sp| sp.delay).collect(),
        psi: link.subpaths.iter().map(|sp| cis(sp.phase)).collect(),
        k0,
    })
}

/// `H(f, t) = R diag(psi . rho . nu(t) . xi(f)) S^T`.
pub fn channel_optimized(sp: &SpatialMatrices, f: f64, t: f64) -> CMatrix {
    let weighted = sp.power_weighted_rx();
    let w = point_weights(&sp.psi, &sp.doppler_vector(t), &sp.frequency_vector(f));
    rank_m_product(&weighted, &w, &sp.s)
}

/// Frequencies evaluated together by [`channel_grid`].
const FREQ_BLOCK: usize = 16;

/// Channel matrices over a time x frequency grid, indexed `[t][f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    pub times: Vec<f64>,
    pub freqs: Vec<f64>,
    pub rx_count: usize,
    pub tx_count: usize,
    /// Cells row-major over `(t_index, f_index)`, each a row-major
    /// `rx_count x tx_count` block.
    pub data: Vec<C64>,
}

impl ChannelGrid {
    pub fn cell(&self, t_index: usize, f_index: usize) -> &[C64] {
        let size = self.rx_count * self.tx_count;
        let start = (t_index * self.freqs.len() + f_index) * size;
        &self.data[start..start + size]
    }

    pub fn get(&self, t_index: usize, f_index: usize) -> CMatrix {
        CMatrix::from_row_major(self.rx_count, self.tx_count, self.cell(t_index, f_index).to_vec())
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.times.len(), self.freqs.len(), self.rx_count, self.tx_count)
    }

    /// All cells in grid order.
    pub fn matrices(&self) -> Vec<CMatrix> {
        (0..self.times.len())
            .flat_map(|t| (0..self.freqs.len()).map(move |f| (t, f)))
            .map(|(t, f)| self.get(t, f))
            .collect()
    }
}

/// Evaluate the factored product over every `(t, f)` cell.
///
/// `rho` is folded into `R` once for the whole grid, Doppler vectors are
/// computed once per time and frequency vectors once per frequency. Cells
/// are independent, so the result is bitwise identical whatever the number
/// of threads, and each cell equals the matching [`channel_optimized`] call.
pub fn channel_grid(sp: &SpatialMatrices, freqs: &[f64], times: &[f64]) -> Result<ChannelGrid> {
    if freqs.is_empty() {
        return Err(Error::invalid("freqs", "frequency grid is empty"));
    }
    if times.is_empty() {
        return Err(Error::invalid("times", "time grid is empty"));
    }
    let m = sp.subpath_count();
    let product = RankMProduct::new(sp.power_weighted_rx(), &sp.s);
    let doppler: Vec<C64> = times.iter().flat_map(|t| sp.doppler_vector(*t)).collect();
    let (nt, nf) = (times.len(), freqs.len());
    let size = sp.rx_count() * sp.tx_count();
    let mut data = vec![C64::new(0.0, 0.0); nt * nf * size];
    // Frequencies go in small blocks whose vectors stay in cache while the
    // block sweeps every time; a whole F x M table does not on wide grids.
    let eval_block = |block: usize, out: &mut dyn FnMut(usize, usize, &[C64])| {
        let lo = block * FREQ_BLOCK;
        let hi = (lo + FREQ_BLOCK).min(nf);
        let freq: Vec<Vec<C64>> = freqs[lo..hi].iter().map(|f| sp.frequency_vector(*f)).collect();
        let mut cell = vec![C64::new(0.0, 0.0); size];
        for ti in 0..nt {
            for (j, fv) in freq.iter().enumerate() {
                product.eval_into(&point_weights(&sp.psi, &doppler[ti * m..(ti + 1) * m], fv), &mut cell);
                out(ti, lo + j, &cell);
            }
        }
    };
    if nt == 1 {
        data.par_chunks_mut(FREQ_BLOCK * size).enumerate().for_each(|(block, out)| {
            eval_block(block, &mut |_, fi, cell| {
                let j = fi % FREQ_BLOCK;
                out[j * size..(j + 1) * size].copy_from_slice(cell);
            })
        });
    } else {
        let blocks: Vec<Vec<C64>> = (0..nf.div_ceil(FREQ_BLOCK))
            .into_par_iter()
            .map(|block| {
                let mut buf = Vec::new();
                eval_block(block, &mut |_, _, cell| buf.extend_from_slice(cell));
                buf
            })
            .collect();
        for (block, buf) in blocks.iter().enumerate() {
            let lo = block * FREQ_BLOCK;
            let width = (nf - lo).min(FREQ_BLOCK);
            for (k, cell) in buf.chunks_exact(size).enumerate() {
                let (ti, fi) = (k / width, lo + k % width);
                let at = (ti * nf + fi) * size;
                data[at..at + size].copy_from_slice(cell);
            }
        }
    }
    Ok(ChannelGrid {
        times: times.to_vec(),
        freqs: freqs.to_vec(),
        rx_count: sp.rx_count(),
        tx_count: sp.tx_count(),
        data,
    })
}

/// Spatial-matrix footprint of `links` links as the closed form
/// `4 L M (R + S)` reals of `real_width_bytes` each.
///
/// This is twice what [`SpatialMatrices::memory_bytes`] reports for the
/// matrices alone (`M (R + S)` complex entries per link); the extra factor
/// leaves room for a power-weighted copy of each matrix.
pub fn spatial_memory_bytes(links: u64, subpaths: u64, rx: u64, tx: u64, real_width_bytes: u64) -> Result<u64> {
    for (name, v) in [
        ("links", links),
        ("subpaths", subpaths),
        ("rx", rx),
        ("tx", tx),
        ("real_width_bytes", real_width_bytes),
    ] {
        if v == 0 {
            return Err(Error::invalid(name, "must be >= 1"));
        }
    }
    let overflow = || Error::invalid("spatial_memory_bytes", "result overflows u64");
    let elements = rx.checked_add(tx).ok_or_else(overflow)?;
    [4, links, subpaths, elements, real_width_bytes]
        .into_iter()
        .try_fold(1u64, |acc, v| acc.checked_mul(v))
        .ok_or_else(overflow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::{make_ula, ArrayPattern, ElementPattern};
    use crate::geometry::{Angles, Subpath, Vec3};
    use crate::linalg::max_relative_difference;
    use crate::params::{generate_link, ScenarioConfig};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn single_path(power: f64, delay: f64) -> LinkMultipath {
        let a = Angles::new(1.0, 0.5);
        LinkMultipath::new(
            vec![Subpath::new(power, delay, a, a, 0.0, 0).unwrap()],
            3e9,
            Vec3::ZERO,
            Vec3::ZERO,
        )
        .unwrap()
    }

    fn random_setup(seed: u64, tx: usize, rx: usize) -> (LinkMultipath, ArrayDescriptor, ArrayDescriptor) {
        let cfg = ScenarioConfig {
            rng_seed: seed,
            link_count: 1,
            tx_speed: crate::params::SpeedRange::fixed(3.0),
            ..ScenarioConfig::default()
        };
        let link = generate_link(&cfg, 0).unwrap();
        let tx = make_ula(tx, 0.5, cfg.f0, Vec3::Y)
            .unwrap()
            .with_pattern(ArrayPattern::Scalar(ElementPattern::sectorized(65.0, 65.0, 30.0)))
            .unwrap();
        let rx = make_ula(rx, 0.5, cfg.f0, Vec3::X).unwrap();
        (link, tx, rx)
    }

    #[test]
    fn degenerate_geometry_collapses_to_delay_phase() {
        let link = single_path(1.0, 37e-9);
        let one = ArrayDescriptor::single_isotropic();
        let h = channel_baseline(&link, &one, &one, 0.0, 12.3).unwrap();
        assert!((h[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        let f = 3.1e9;
        let h = channel_baseline(&link, &one, &one, f, 0.4).unwrap();
        assert!((h[(0, 0)] - cis(-TAU * f * 37e-9)).norm() < 1e-12);
        let h4 = channel_baseline(&single_path(4.0, 0.0), &one, &one, f, 0.4).unwrap();
        assert!((h4[(0, 0)].norm() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn baseline_rejects_mismatched_carrier() {
        let link = single_path(1.0, 0.0);
        let tx = make_ula(2, 0.5, 28e9, Vec3::Y).unwrap();
        let one = ArrayDescriptor::single_isotropic();
        assert!(matches!(
            channel_baseline(&link, &tx, &one, 0.0, 0.0),
            Err(Error::InvalidParameter { name: "f0", .. })
        ));
        assert!(precompute_spatial(&link, &one, &tx).is_err());
    }

    #[test]
    fn spatial_single_element_is_ones() {
        let (link, _, _) = random_setup(1, 4, 4);
        let one = ArrayDescriptor::single_isotropic();
        let sp = precompute_spatial(&link, &one, &one).unwrap();
        assert!(sp.s.as_slice().iter().all(|z| *z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn spatial_ula_endfire_phase_difference() {
        let a = Angles::new(FRAC_PI_2, FRAC_PI_2);
        let link = LinkMultipath::new(vec![Subpath::new(1.0, 0.0, a, a, 0.0, 0).unwrap()], 3e9, Vec3::ZERO, Vec3::ZERO).unwrap();
        let tx = make_ula(2, 0.5, 3e9, Vec3::Y).unwrap();
        let sp = precompute_spatial(&link, &tx, &ArrayDescriptor::single_isotropic()).unwrap();
        // elements at -+lambda/4 along the wave: phases -+pi/2 (up to the
        // tiny residue of cos(pi/2) in the unit vector)
        assert!((sp.s[(0, 0)] - cis(-FRAC_PI_2)).norm() < 1e-12);
        assert!((sp.s[(1, 0)] - cis(FRAC_PI_2)).norm() < 1e-12);
        assert!(((sp.s[(1, 0)] / sp.s[(0, 0)]).arg().abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn spatial_zenith_is_broadside() {
        let a = Angles::new(0.0, 0.3);
        let link = LinkMultipath::new(vec![Subpath::new(1.0, 0.0, a, a, 0.0, 0).unwrap()], 3e9, Vec3::ZERO, Vec3::ZERO).unwrap();
        let tx = make_ula(5, 0.5, 3e9, Vec3::Y).unwrap();
        let sp = precompute_spatial(&link, &tx, &ArrayDescriptor::single_isotropic()).unwrap();
        for s in 0..5 {
            assert_eq!(sp.s[(s, 0)], sp.s[(0, 0)]);
        }
    }

    #[test]
    fn spatial_moduli_are_pattern_gains() {
        let (link, tx, rx) = random_setup(2, 8, 4);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let pat = tx.scalar_pattern().unwrap();
        for (m, sub) in link.subpaths.iter().enumerate() {
            for s in 0..8 {
                assert!((sp.s[(s, m)].norm() - pat.gain(sub.departure)).abs() < 1e-12);
            }
            for r in 0..4 {
                assert!((sp.r[(r, m)].norm() - 1.0).abs() < 1e-12);
            }
            assert!(sp.rho[m] >= 0.0);
        }
    }

    #[test]
    fn optimized_matches_baseline() {
        for seed in 0..10 {
            let (link, tx, rx) = random_setup(seed, 8, 4);
            let sp = precompute_spatial(&link, &tx, &rx).unwrap();
            for (f, t) in [(3e9, 0.0), (3.02e9, 0.013), (2.9e9, 4.5)] {
                let base = channel_baseline(&link, &tx, &rx, f, t).unwrap();
                let opt = channel_optimized(&sp, f, t);
                assert!(max_relative_difference(&opt, &base) <= 1e-12);
            }
        }
    }

    #[test]
    fn static_channel_is_time_invariant() {
        let (mut link, tx, rx) = random_setup(3, 4, 4);
        link.v_rx = Vec3::ZERO;
        link.v_tx = Vec3::ZERO;
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let h0 = channel_optimized(&sp, 3e9, 0.0);
        for t in [1e-3, 0.5, 1e4] {
            assert_eq!(channel_optimized(&sp, 3e9, t), h0);
        }
    }

    #[test]
    fn power_scaling_is_linear() {
        let (link, tx, rx) = random_setup(4, 4, 2);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let mut scaled = sp.clone();
        scaled.rho.iter_mut().for_each(|r| *r *= 4.0);
        let h = channel_optimized(&sp, 3e9, 0.1);
        let h4 = channel_optimized(&scaled, 3e9, 0.1);
        // powers of two keep the scaling exact
        assert_eq!(h4, h.scale(4.0));
    }

    #[test]
    fn single_path_frequency_shift() {
        let link = single_path(2.0, 55e-9);
        let tx = make_ula(3, 0.5, 3e9, Vec3::Y).unwrap();
        let rx = make_ula(2, 0.5, 3e9, Vec3::Z).unwrap();
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let (f, delta) = (3e9, 1.5e6);
        let h = channel_optimized(&sp, f, 0.2);
        let shifted = channel_optimized(&sp, f + delta, 0.2);
        let expected = CMatrix::from_fn(2, 3, |r, s| h[(r, s)] * cis(-TAU * delta * 55e-9));
        assert!(max_relative_difference(&shifted, &expected) < 1e-9);
    }

    #[test]
    fn conjugate_inputs_conjugate_the_channel() {
        let (link, tx, rx) = random_setup(5, 4, 3);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let mirrored = SpatialMatrices {
            s: sp.s.conj(),
            r: sp.r.conj(),
            psi: sp.psi.iter().map(|z| z.conj()).collect(),
            nu: sp.nu.iter().map(|v| -v).collect(),
            tau: sp.tau.iter().map(|v| -v).collect(),
            ..sp.clone()
        };
        let h = channel_optimized(&sp, 3e9, 0.3);
        let hc = channel_optimized(&mirrored, 3e9, 0.3);
        assert!(max_relative_difference(&hc, &h.conj()) < 1e-14);
    }

    #[test]
    fn grid_cells_equal_pointwise_calls() {
        let (link, tx, rx) = random_setup(6, 8, 4);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let freqs = [3e9, 3e9 + 15e3, 3e9 + 15e3, 3e9 - 1e6];
        let times = [0.0, 1e-3, 0.25];
        let grid = channel_grid(&sp, &freqs, &times).unwrap();
        assert_eq!(grid.dims(), (3, 4, 4, 8));
        for (i, t) in times.iter().enumerate() {
            for (k, f) in freqs.iter().enumerate() {
                assert_eq!(grid.get(i, k), channel_optimized(&sp, *f, *t));
            }
            assert_eq!(grid.get(i, 1), grid.get(i, 2));
        }
        let one = channel_grid(&sp, &[3e9], &[0.5]).unwrap();
        assert_eq!(one.matrices(), vec![channel_optimized(&sp, 3e9, 0.5)]);
    }

    #[test]
    fn grid_rejects_empty_axes() {
        let (link, tx, rx) = random_setup(7, 2, 2);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        assert!(channel_grid(&sp, &[], &[0.0]).is_err());
        assert!(channel_grid(&sp, &[3e9], &[]).is_err());
    }

    #[test]
    fn grid_is_thread_count_invariant() {
        let (link, tx, rx) = random_setup(8, 8, 4);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        let freqs: Vec<f64> = (0..24).map(|k| 3e9 + 30e3 * k as f64).collect();
        let times = [0.0, 0.01, 0.02];
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| channel_grid(&sp, &freqs, &times).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn memory_formula() {
        assert_eq!(spatial_memory_bytes(10, 240, 4, 256, 8).unwrap(), 19_968_000);
        assert_eq!(spatial_memory_bytes(1, 1, 1, 1, 1).unwrap(), 8);
        assert_eq!(spatial_memory_bytes(10, 240, 4, 8, 8).unwrap(), 4 * 10 * 240 * 12 * 8);
        assert_eq!(spatial_memory_bytes(10, 240, 4, 8, 8).unwrap(), 921_600);
        assert!(spatial_memory_bytes(0, 1, 1, 1, 8).is_err());
        assert!(spatial_memory_bytes(u64::MAX, 2, 1, 1, 8).is_err());
        let (link, tx, rx) = random_setup(9, 8, 4);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        // the closed form counts four reals per (subpath, element) pair, twice
        // what the two complex matrices actually hold
        assert_eq!(2 * sp.memory_bytes(8), spatial_memory_bytes(1, 240, 4, 8, 8).unwrap());
    }
}
