//! Dual-polarized extension of the factored channel product.
//!
//! Each array carries a vertical and a horizontal response, giving four
//! spatial matrices per link. Per subpath a 2x2 coupling matrix
//!
//! ```text
//!            tx V                       tx H
//! rx V  [ exp(j psi_vv)             exp(j psi_vh) / sqrt(kappa) ]
//! rx H  [ exp(j psi_hv) / sqrt(kappa)   exp(j psi_hh)           ]
//! ```
//!
//! sits between the receive and transmit responses. The channel splits into
//! four rank-M products `H^{xy} = R^x diag(c . psi^{xy} . rho . nu(t) . xi(f)) (S^y)^T`
//! with `c = 1/sqrt(kappa)` on the cross-polar terms and 1 on the co-polar
//! ones. Labels are receive polarization first.

use rayon::prelude::*;

use crate::antenna::{ArrayDescriptor, ElementPattern};
use crate::engine::{transpose_columns, weight_columns, RankMProduct};
use crate::error::{Error, Result};
use crate::geometry::{direction_unit_vector, doppler_coefficient, wavenumber, LinkMultipath, Vec3};
use crate::linalg::{CMatrix, C64};

#[inline]
fn cis(phase: f64) -> C64 {
    let (s, c) = phase.sin_cos();
    C64::new(c, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolTerm {
    VV,
    VH,
    HV,
    HH,
}

impl PolTerm {
    pub const ALL: [PolTerm; 4] = [PolTerm::VV, PolTerm::VH, PolTerm::HV, PolTerm::HH];

    pub fn label(self) -> &'static str {
        match self {
            PolTerm::VV => "VV",
            PolTerm::VH => "VH",
            PolTerm::HV => "HV",
            PolTerm::HH => "HH",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedSpatialMatrices {
    pub s_v: CMatrix,
    pub s_h: CMatrix,
    pub r_v: CMatrix,
    pub r_h: CMatrix,
    /// `1 / sqrt(kappa_m)`.
    pub kappa: Vec<f64>,
    pub psi_vv: Vec<C64>,
    pub psi_vh: Vec<C64>,
    pub psi_hv: Vec<C64>,
    pub psi_hh: Vec<C64>,
    pub rho: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau: Vec<f64>,
    pub k0: f64,
}

impl PolarizedSpatialMatrices {
    pub fn subpath_count(&self) -> usize {
        self.rho.len()
    }

    pub fn rx_count(&self) -> usize {
        self.r_v.rows()
    }

    pub fn tx_count(&self) -> usize {
        self.s_v.rows()
    }

    /// Bytes held by the four spatial matrices.
    pub fn memory_bytes(&self, real_width_bytes: u64) -> u64 {
        let entries = 2 * (self.tx_count() + self.rx_count()) as u64 * self.subpath_count() as u64;
        entries * 2 * real_width_bytes
    }

    fn rx_matrix(&self, term: PolTerm) -> &CMatrix {
        match term {
            PolTerm::VV | PolTerm::VH => &self.r_v,
            PolTerm::HV | PolTerm::HH => &self.r_h,
        }
    }

    fn tx_matrix(&self, term: PolTerm) -> &CMatrix {
        match term {
            PolTerm::VV | PolTerm::HV => &self.s_v,
            PolTerm::VH | PolTerm::HH => &self.s_h,
        }
    }

    /// Subpath phase factors of `term`, cross-polar leakage included.
    fn coupling(&self, term: PolTerm) -> Vec<C64> {
        match term {
            PolTerm::VV => self.psi_vv.clone(),
            PolTerm::HH => self.psi_hh.clone(),
            PolTerm::VH => self.kappa.iter().zip(&self.psi_vh).map(|(k, p)| k * p).collect(),
            PolTerm::HV => self.kappa.iter().zip(&self.psi_hv).map(|(k, p)| k * p).collect(),
        }
    }

    fn doppler_vector(&self, t: f64) -> Vec<C64> {
        self.nu.iter().map(|nu| cis(self.k0 * nu * t)).collect()
    }

    fn frequency_vector(&self, f: f64) -> Vec<C64> {
        self.tau.iter().map(|tau| cis(-std::f64::consts::TAU * f * tau)).collect()
    }
}

/// The four polarization components of one channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedChannel {
    pub vv: CMatrix,
    pub vh: CMatrix,
    pub hv: CMatrix,
    pub hh: CMatrix,
}

impl PolarizedChannel {
    pub fn term(&self, term: PolTerm) -> &CMatrix {
        match term {
            PolTerm::VV => &self.vv,
            PolTerm::VH => &self.vh,
            PolTerm::HV => &self.hv,
            PolTerm::HH => &self.hh,
        }
    }

    /// `VV + VH + HV + HH`.
    pub fn sum(&self) -> CMatrix {
        let mut h = self.vv.clone();
        h += &self.vh;
        h += &self.hv;
        h += &self.hh;
        h
    }
}

/// `gain_m exp(j k0 p_e . dir_m)` for every element `e` and subpath `m`.
fn spatial_matrix(positions: &[Vec3], directions: &[Vec3], gains: &[f64], k0: f64) -> CMatrix {
    CMatrix::from_fn(positions.len(), directions.len(), |e, k| {
        gains[k] * cis(k0 * positions[e].dot(directions[k]))
    })
}

pub fn precompute_polarized(
    link: &LinkMultipath,
    tx: &ArrayDescriptor,
    rx: &ArrayDescriptor,
) -> Result<PolarizedSpatialMatrices> {
    link.validate()?;
    tx.check_frequency(link.f0)?;
    rx.check_frequency(link.f0)?;
    let k0 = wavenumber(link.f0)?;
    let tx_pattern = tx.polarized_pattern()?;
    let rx_pattern = rx.polarized_pattern()?;
    let extras = link
        .polarization
        .as_ref()
        .ok_or_else(|| Error::invalid("polarization", "link carries no polarization parameters"))?;
    let departures: Vec<Vec3> = link.subpaths.iter().map(|sp| direction_unit_vector(sp.departure)).collect();
    let arrivals: Vec<Vec3> = link.subpaths.iter().map(|sp| direction_unit_vector(sp.arrival)).collect();
    let tx_gains = |p: &ElementPattern| -> Vec<f64> { link.subpaths.iter().map(|sp| p.gain(sp.departure)).collect() };
    let rx_gains = |p: &ElementPattern| -> Vec<f64> { link.subpaths.iter().map(|sp| p.gain(sp.arrival)).collect() };

    let s_v = spatial_matrix(&tx.positions, &departures, &tx_gains(&tx_pattern.vertical), k0);
    let s_h = spatial_matrix(&tx.positions, &departures, &tx_gains(&tx_pattern.horizontal), k0);
    let r_v = spatial_matrix(&rx.positions, &arrivals, &rx_gains(&rx_pattern.vertical), k0);
    let r_h = spatial_matrix(&rx.positions, &arrivals, &rx_gains(&rx_pattern.horizontal), k0);

    Ok(PolarizedSpatialMatrices {
        s_v,
        s_h,
        r_v,
        r_h,
        kappa: extras.iter().map(|e| 1.0 / e.kappa.sqrt()).collect(),
        psi_vv: extras.iter().map(|e| cis(e.phase_vv)).collect(),
        psi_vh: extras.iter().map(|e| cis(e.phase_vh)).collect(),
        psi_hv: extras.iter().map(|e| cis(e.phase_hv)).collect(),
        psi_hh: extras.iter().map(|e| cis(e.phase_hh)).collect(),
        rho: link.subpaths.iter().map(|sp| sp.power.sqrt()).collect(),
        nu: arrivals
            .iter()
            .zip(&departures)
            .map(|(a, d)| doppler_coefficient(*a, *d, link.v_rx, link.v_tx))
            .collect(),
        tau: link.subpaths.iter().map(|sp| sp.delay).collect(),
        k0,
    })
}

/// Direct per-entry evaluation with the full 2x2 coupling in the inner
/// loop. Slow; reference for the factored path.
pub fn polarized_baseline(
    link: &LinkMultipath,
    tx: &ArrayDescriptor,
    rx: &ArrayDescriptor,
    f: f64,
    t: f64,
) -> Result<CMatrix> {
    link.validate()?;
    tx.check_frequency(link.f0)?;
    rx.check_frequency(link.f0)?;
    let k0 = wavenumber(link.f0)?;
    let tx_pattern = tx.polarized_pattern()?;
    let rx_pattern = rx.polarized_pattern()?;
    let extras = link
        .polarization
        .as_ref()
        .ok_or_else(|| Error::invalid("polarization", "link carries no polarization parameters"))?;
    let mut h = CMatrix::zeros(rx.element_count(), tx.element_count());
    for (r, p_r) in rx.positions.iter().enumerate() {
        for (s, p_s) in tx.positions.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (sp, ex) in link.subpaths.iter().zip(extras) {
                let d = direction_unit_vector(sp.departure);
                let a = direction_unit_vector(sp.arrival);
                let nu = doppler_coefficient(a, d, link.v_rx, link.v_tx);
                let leak = 1.0 / ex.kappa.sqrt();
                let rx_g = [rx_pattern.vertical.gain(sp.arrival), rx_pattern.horizontal.gain(sp.arrival)];
                let tx_g = [tx_pattern.vertical.gain(sp.departure), tx_pattern.horizontal.gain(sp.departure)];
                let coupling = [
                    [cis(ex.phase_vv), leak * cis(ex.phase_vh)],
                    [leak * cis(ex.phase_hv), cis(ex.phase_hh)],
                ];
                let mut pol = C64::new(0.0, 0.0);
                for x in 0..2 {
                    for y in 0..2 {
                        pol += rx_g[x] * coupling[x][y] * tx_g[y];
                    }
                }
                acc += sp.power.sqrt()
                    * pol
                    * cis(k0 * p_s.dot(d))
                    * cis(k0 * p_r.dot(a))
                    * cis(k0 * nu * t)
                    * cis(-std::f64::consts::TAU * f * sp.delay);
            }
            h[(r, s)] = acc;
        }
    }
    Ok(h)
}

struct TermKernel {
    products: [RankMProduct; 4],
    coupling: [Vec<C64>; 4],
}

impl TermKernel {
    fn new(psp: &PolarizedSpatialMatrices) -> Self {
        TermKernel {
            products: PolTerm::ALL.map(|t| RankMProduct::new(weight_columns(psp.rx_matrix(t), &psp.rho), psp.tx_matrix(t))),
            coupling: PolTerm::ALL.map(|t| psp.coupling(t)),
        }
    }

    fn eval(&self, doppler: &[C64], freq: &[C64]) -> PolarizedChannel {
        let [vv, vh, hv, hh] = [0, 1, 2, 3].map(|i| {
            let w: Vec<C64> = self.coupling[i]
                .iter()
                .zip(doppler)
                .zip(freq)
                .map(|((c, d), x)| c * d * x)
                .collect();
            self.products[i].eval(&w)
        });
        PolarizedChannel { vv, vh, hv, hh }
    }
}

/// All four polarization components at `(f, t)`.
pub fn polarized_terms(psp: &PolarizedSpatialMatrices, f: f64, t: f64) -> PolarizedChannel {
    TermKernel::new(psp).eval(&psp.doppler_vector(t), &psp.frequency_vector(f))
}

/// `H(f, t) = H^VV + H^VH + H^HV + H^HH`.
pub fn polarized_channel(psp: &PolarizedSpatialMatrices, f: f64, t: f64) -> CMatrix {
    polarized_terms(psp, f, t).sum()
}

/// Polarized components over a time x frequency grid, row-major over
/// `(t_index, f_index)`.
pub fn polarized_grid(psp: &PolarizedSpatialMatrices, freqs: &[f64], times: &[f64]) -> Result<Vec<PolarizedChannel>> {
    if freqs.is_empty() {
        return Err(Error::invalid("freqs", "frequency grid is empty"));
    }
    if times.is_empty() {
        return Err(Error::invalid("times", "time grid is empty"));
    }
    let kernel = TermKernel::new(psp);
    let doppler: Vec<Vec<C64>> = times.iter().map(|t| psp.doppler_vector(*t)).collect();
    let columns: Vec<Vec<PolarizedChannel>> = freqs
        .par_iter()
        .map(|f| {
            let freq = psp.frequency_vector(*f);
            doppler.iter().map(|d| kernel.eval(d, &freq)).collect()
        })
        .collect();
    Ok(transpose_columns(columns, times.len()))
}
