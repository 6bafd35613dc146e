//! Brute-force reference implementations shared by the integration tests.
//!
//! Written from the model definitions with plain loops and `f64` arithmetic;
//! nothing here calls the engines under test.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use gbscm::antenna::{make_ula, ArrayDescriptor, ArrayPattern, ElementPattern, PolarizedPattern};
use gbscm::geometry::{Angles, LinkMultipath, Vec3};
use gbscm::linalg::{CMatrix, C64};
use gbscm::params::{generate_link, ScenarioConfig};

pub const C: f64 = 299_792_458.0;

pub fn unit(a: Angles) -> [f64; 3] {
    let (t, p) = (a.theta(), a.phi());
    [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
}

pub fn dot(a: [f64; 3], b: Vec3) -> f64 {
    a[0] * b.x + a[1] * b.y + a[2] * b.z
}

pub fn phasor(x: f64) -> C64 {
    C64::new(x.cos(), x.sin())
}

fn wrap_deg(mut d: f64) -> f64 {
    while d >= 180.0 {
        d -= 360.0;
    }
    while d < -180.0 {
        d += 360.0;
    }
    d
}

/// Element amplitude gain, recomputed from the pattern parameters.
pub fn gain(p: &ElementPattern, a: Angles) -> f64 {
    match p {
        ElementPattern::Isotropic => 1.0,
        ElementPattern::CosinePower { exponent, boresight } => {
            let u = unit(a);
            let b = unit(*boresight);
            let c = u[0] * b[0] + u[1] * b[1] + u[2] * b[2];
            if c <= 0.0 {
                0.0
            } else {
                c.powf(*exponent)
            }
        }
        ElementPattern::Sectorized {
            azimuth_3db_deg,
            elevation_3db_deg,
            max_attenuation_db,
            boresight_azimuth,
        } => {
            let az = wrap_deg((a.phi() - boresight_azimuth) * 180.0 / PI);
            let el = a.theta() * 180.0 / PI - 90.0;
            let ah = f64::min(12.0 * (az / azimuth_3db_deg) * (az / azimuth_3db_deg), *max_attenuation_db);
            let av = f64::min(12.0 * (el / elevation_3db_deg) * (el / elevation_3db_deg), *max_attenuation_db);
            10f64.powf(-f64::min(ah + av, *max_attenuation_db) / 20.0)
        }
        ElementPattern::Weighted { weight, base } => weight * gain(base, a),
    }
}

fn scalar(p: &ArrayPattern) -> &ElementPattern {
    match p {
        ArrayPattern::Scalar(e) => e,
        ArrayPattern::Polarized(_) => panic!("scalar pattern expected"),
    }
}

fn polarized(p: &ArrayPattern) -> &PolarizedPattern {
    match p {
        ArrayPattern::Polarized(e) => e,
        ArrayPattern::Scalar(_) => panic!("polarized pattern expected"),
    }
}

/// `H_{r,s}(f,t)` summed subpath by subpath.
pub fn oracle_channel(link: &LinkMultipath, tx: &ArrayDescriptor, rx: &ArrayDescriptor, f: f64, t: f64) -> CMatrix {
    let k0 = TAU * link.f0 / C;
    let (gt, gr) = (scalar(&tx.pattern), scalar(&rx.pattern));
    let mut h = CMatrix::zeros(rx.positions.len(), tx.positions.len());
    for r in 0..rx.positions.len() {
        for s in 0..tx.positions.len() {
            let mut sum = C64::new(0.0, 0.0);
            for p in &link.subpaths {
                let (a, d) = (unit(p.arrival), unit(p.departure));
                let nu = dot(a, link.v_rx) + dot(d, link.v_tx);
                let phase = p.phase + k0 * dot(d, tx.positions[s]) + k0 * dot(a, rx.positions[r]) + k0 * nu * t
                    - TAU * f * p.delay;
                sum += phasor(phase) * (p.power.sqrt() * gain(gt, p.departure) * gain(gr, p.arrival));
            }
            h[(r, s)] = sum;
        }
    }
    h
}

/// Dual-polarized channel: for each subpath the receive response vector
/// `[g_V, g_H]`, the 2x2 coupling and the transmit response vector are
/// multiplied out explicitly.
pub fn oracle_polarized_channel(link: &LinkMultipath, tx: &ArrayDescriptor, rx: &ArrayDescriptor, f: f64, t: f64) -> CMatrix {
    let k0 = TAU * link.f0 / C;
    let (pt, pr) = (polarized(&tx.pattern), polarized(&rx.pattern));
    let extras = link.polarization.as_ref().expect("polarized link");
    let mut h = CMatrix::zeros(rx.positions.len(), tx.positions.len());
    for r in 0..rx.positions.len() {
        for s in 0..tx.positions.len() {
            let mut sum = C64::new(0.0, 0.0);
            for (p, e) in link.subpaths.iter().zip(extras) {
                let x = 1.0 / e.kappa.sqrt();
                let coupling = [
                    [phasor(e.phase_vv), phasor(e.phase_vh) * x],
                    [phasor(e.phase_hv) * x, phasor(e.phase_hh)],
                ];
                let gr = [gain(&pr.vertical, p.arrival), gain(&pr.horizontal, p.arrival)];
                let gt = [gain(&pt.vertical, p.departure), gain(&pt.horizontal, p.departure)];
                // gr^T * coupling * gt
                let mut pol = C64::new(0.0, 0.0);
                for (i, row) in coupling.iter().enumerate() {
                    let v = row[0] * gt[0] + row[1] * gt[1];
                    pol += v * gr[i];
                }
                let (a, d) = (unit(p.arrival), unit(p.departure));
                let nu = dot(a, link.v_rx) + dot(d, link.v_tx);
                let phase =
                    k0 * dot(d, tx.positions[s]) + k0 * dot(a, rx.positions[r]) + k0 * nu * t - TAU * f * p.delay;
                sum += pol * phasor(phase) * p.power.sqrt();
            }
            h[(r, s)] = sum;
        }
    }
    h
}

/// Steering column `g(dir) exp(j k0 p_e . dir)` of an array towards one subpath.
pub fn steering(array: &ArrayDescriptor, dir: Angles, k0: f64) -> Vec<C64> {
    let g = gain(scalar(&array.pattern), dir);
    let u = unit(dir);
    array.positions.iter().map(|p| phasor(k0 * dot(u, *p)) * g).collect()
}

/// Single-link scenario whose seed and endpoint speeds vary with `seed`.
pub fn random_link(seed: u64, subpaths_per_cluster: usize, polarized: bool) -> LinkMultipath {
    use gbscm::params::{PolarizationConfig, SpeedRange};
    let v = 0.5 + (seed % 7) as f64;
    let cfg = ScenarioConfig {
        link_count: 1,
        cluster_count: 12,
        subpaths_per_cluster,
        rx_speed: SpeedRange { min: 0.0, max: v },
        tx_speed: SpeedRange { min: 0.0, max: v / 3.0 },
        polarization: polarized.then(PolarizationConfig::default),
        rng_seed: seed,
        ..ScenarioConfig::default()
    };
    generate_link(&cfg, 0).expect("valid scenario")
}

pub fn sector() -> ElementPattern {
    ElementPattern::sectorized(65.0, 65.0, 30.0)
}

pub fn ula(count: usize, f0: f64, axis: Vec3, pattern: ArrayPattern) -> ArrayDescriptor {
    make_ula(count, 0.5, f0, axis).unwrap().with_pattern(pattern).unwrap()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Largest entrywise difference over the largest reference entry.
pub fn rel_diff(a: &CMatrix, reference: &CMatrix) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.as_slice().iter().zip(reference.as_slice()) {
        let d = (x - y).norm();
        if d.is_nan() {
            return f64::NAN;
        }
        diff = diff.max(d);
        scale = scale.max(y.norm());
    }
    diff / scale
}

/// `sum_e A_{e,i} conj(A_{e,j})`, accumulated in ascending `e`.
pub fn column_gram(a: &CMatrix) -> CMatrix {
    let m = a.cols();
    let mut g = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut acc = C64::new(0.0, 0.0);
            for e in 0..a.rows() {
                acc += a[(e, i)] * a[(e, j)].conj();
            }
            g[(i, j)] = acc;
        }
    }
    g
}

/// Largest off-diagonal magnitude of `(1/N) sum_k V(t_k) G V(t_k)^H` on the
/// grid `t_k = k dt`, reported after each checkpoint number of samples.
/// `V(t) = diag(exp(j k0 nu t))`.
pub fn time_averaged_offdiagonal(gram: &CMatrix, nu: &[f64], k0: f64, dt: f64, checkpoints: &[usize]) -> Vec<f64> {
    let m = nu.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let mut sums = vec![C64::new(0.0, 0.0); pairs.len()];
    let mut out = Vec::new();
    let mut k = 0usize;
    for &n in checkpoints {
        while k < n {
            let t = k as f64 * dt;
            for (acc, &(i, j)) in sums.iter_mut().zip(&pairs) {
                *acc += phasor(k0 * (nu[i] - nu[j]) * t);
            }
            k += 1;
        }
        let worst = sums
            .iter()
            .zip(&pairs)
            .map(|(s, &(i, j))| (gram[(i, j)] * s / n as f64).norm())
            .fold(0.0, f64::max);
        out.push(worst);
    }
    out
}
