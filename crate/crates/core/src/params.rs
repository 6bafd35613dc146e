//! Seedable generation of link multipath sets.
//!
//! Stages run in the usual GBSCM order: drop endpoints and draw large-scale
//! parameters, draw clusters, refine clusters into subpaths, draw phases.
//! Distributions are deliberately simple:
//!
//! * cluster delays are i.i.d. exponential with scale `delay_spread`;
//! * cluster powers follow `exp(-power_decay * delay / delay_spread)`,
//!   normalized to one;
//! * cluster mean angles scatter around a per-link direction with the
//!   inter-cluster spread, subpath angles scatter around their cluster mean
//!   with the intra-cluster spread (Gaussian offsets, wrapped onto the
//!   sphere). Offsets are re-centered so the cluster mean is exact;
//! * subpaths split their cluster power equally and share its delay;
//! * initial phases are uniform on `[0, 2pi)`.
//!
//! Large-scale parameters are drawn independently per link. Every link owns
//! its own RNG stream derived from `(seed, link index)`, so results do not
//! depend on how links are scheduled.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wavenumber, Angles, LinkMultipath, PolarizedSubpathExtras, Subpath, Vec3};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularSpread {
    /// Standard deviation of cluster means around the link direction.
    pub inter_cluster_deg: f64,
    /// Standard deviation of subpaths around their cluster mean.
    pub intra_cluster_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedRange {
    pub min: f64,
    pub max: f64,
}

impl SpeedRange {
    pub const fn fixed(speed: f64) -> Self {
        SpeedRange { min: speed, max: speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationConfig {
    /// Mean cross-polarization ratio, dB.
    pub xpr_db: f64,
    /// Standard deviation of the XPR draw, dB.
    pub xpr_std_db: f64,
    /// Draw one ratio per subpath (`true`) or one per link.
    pub per_subpath: bool,
}

impl Default for PolarizationConfig {
    fn default() -> Self {
        PolarizationConfig {
            xpr_db: 8.0,
            xpr_std_db: 3.0,
            per_subpath: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Carrier, Hz.
    pub f0: f64,
    pub link_count: usize,
    pub cluster_count: usize,
    pub subpaths_per_cluster: usize,
    /// Seconds.
    pub delay_spread: f64,
    pub power_decay: f64,
    pub azimuth_spread: AngularSpread,
    pub elevation_spread: AngularSpread,
    /// Log-normal spread of the per-link power scale, dB. Zero gives unit
    /// power on every link.
    pub shadowing_std_db: f64,
    /// m/s; directions are uniform in the horizontal plane.
    pub rx_speed: SpeedRange,
    pub tx_speed: SpeedRange,
    pub polarization: Option<PolarizationConfig>,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            f0: 3e9,
            link_count: 10,
            cluster_count: 12,
            subpaths_per_cluster: 20,
            delay_spread: 100e-9,
            power_decay: 1.0,
            azimuth_spread: AngularSpread {
                inter_cluster_deg: 30.0,
                intra_cluster_deg: 5.0,
            },
            elevation_spread: AngularSpread {
                inter_cluster_deg: 10.0,
                intra_cluster_deg: 2.0,
            },
            shadowing_std_db: 0.0,
            rx_speed: SpeedRange::fixed(1.0),
            tx_speed: SpeedRange::fixed(0.0),
            polarization: None,
            rng_seed: 0,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be >= 0, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        wavenumber(self.f0)?;
        if self.link_count == 0 {
            return Err(Error::invalid("link_count", "must be >= 1"));
        }
        if self.cluster_count == 0 {
            return Err(Error::invalid("cluster_count", "must be >= 1"));
        }
        if self.subpaths_per_cluster == 0 {
            return Err(Error::invalid("subpaths_per_cluster", "must be >= 1"));
        }
        positive("delay_spread", self.delay_spread)?;
        nonnegative("power_decay", self.power_decay)?;
        positive("azimuth_spread.inter_cluster_deg", self.azimuth_spread.inter_cluster_deg)?;
        positive("azimuth_spread.intra_cluster_deg", self.azimuth_spread.intra_cluster_deg)?;
        positive("elevation_spread.inter_cluster_deg", self.elevation_spread.inter_cluster_deg)?;
        positive("elevation_spread.intra_cluster_deg", self.elevation_spread.intra_cluster_deg)?;
        nonnegative("shadowing_std_db", self.shadowing_std_db)?;
        for (name, r) in [("rx_speed", self.rx_speed), ("tx_speed", self.tx_speed)] {
            nonnegative(name, r.min)?;
            if !(r.max.is_finite() && r.max >= r.min) {
                return Err(Error::invalid(name, "max must be finite and >= min"));
            }
        }
        if let Some(p) = &self.polarization {
            if !p.xpr_db.is_finite() {
                return Err(Error::invalid("polarization.xpr_db", "must be finite"));
            }
            nonnegative("polarization.xpr_std_db", p.xpr_std_db)?;
        }
        Ok(())
    }

    /// Subpaths per link.
    pub fn subpath_count(&self) -> usize {
        self.cluster_count * self.subpaths_per_cluster
    }
}

/// Per-link large-scale parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleParams {
    /// Linear total power of the link.
    pub power_scale: f64,
    pub delay_spread: f64,
    pub azimuth_spread: AngularSpread,
    pub elevation_spread: AngularSpread,
    pub v_rx: Vec3,
    pub v_tx: Vec3,
    /// Link-level mean departure and arrival directions.
    pub departure: Angles,
    pub arrival: Angles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub delay: f64,
    /// Linear, clusters of one link sum to one.
    pub power: f64,
    pub arrival: Angles,
    pub departure: Angles,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn horizontal_velocity(rng: &mut ChaCha8Rng, range: SpeedRange) -> Vec3 {
    let speed = if range.max > range.min {
        rng.random_range(range.min..=range.max)
    } else {
        range.min
    };
    let heading = rng.random_range(-PI..PI);
    Vec3::new(speed * heading.cos(), speed * heading.sin(), 0.0)
}

pub fn draw_large_scale(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> LargeScaleParams {
    let power_scale = 10f64.powf(cfg.shadowing_std_db * gaussian(rng) / 10.0);
    let v_rx = horizontal_velocity(rng, cfg.rx_speed);
    let v_tx = horizontal_velocity(rng, cfg.tx_speed);
    let departure = Angles::new(FRAC_PI_2, rng.random_range(-PI..PI));
    let arrival = Angles::new(FRAC_PI_2, rng.random_range(-PI..PI));
    LargeScaleParams {
        power_scale,
        delay_spread: cfg.delay_spread,
        azimuth_spread: cfg.azimuth_spread,
        elevation_spread: cfg.elevation_spread,
        v_rx,
        v_tx,
        departure,
        arrival,
    }
}

fn scatter(rng: &mut ChaCha8Rng, mean: Angles, az_deg: f64, el_deg: f64) -> Angles {
    Angles::new(
        mean.theta() + el_deg.to_radians() * gaussian(rng),
        mean.phi() + az_deg.to_radians() * gaussian(rng),
    )
}

pub fn draw_clusters(cfg: &ScenarioConfig, lsp: &LargeScaleParams, rng: &mut ChaCha8Rng) -> Vec<ClusterParams> {
    let exp = Exp::new(1.0 / lsp.delay_spread).expect("delay spread validated positive");
    let mut clusters: Vec<ClusterParams> = (0..cfg.cluster_count)
        .map(|_| {
            let delay = exp.sample(rng);
            let departure = scatter(
                rng,
                lsp.departure,
                lsp.azimuth_spread.inter_cluster_deg,
                lsp.elevation_spread.inter_cluster_deg,
            );
            let arrival = scatter(
                rng,
                lsp.arrival,
                lsp.azimuth_spread.inter_cluster_deg,
                lsp.elevation_spread.inter_cluster_deg,
            );
            ClusterParams {
                delay,
                power: (-cfg.power_decay * delay / lsp.delay_spread).exp(),
                arrival,
                departure,
            }
        })
        .collect();
    let total: f64 = clusters.iter().map(|c| c.power).sum();
    for c in &mut clusters {
        c.power /= total;
    }
    clusters
}

/// Zero-mean Gaussian offsets (radians) re-centered on their sample mean.
fn centered_offsets(rng: &mut ChaCha8Rng, count: usize, spread_deg: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..count).map(|_| spread_deg.to_radians() * gaussian(rng)).collect();
    let mean = v.iter().sum::<f64>() / count as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

fn refine_cluster(
    cfg: &ScenarioConfig,
    lsp: &LargeScaleParams,
    index: usize,
    cluster: &ClusterParams,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Subpath>,
) {
    let n = cfg.subpaths_per_cluster;
    let az = lsp.azimuth_spread.intra_cluster_deg;
    let el = lsp.elevation_spread.intra_cluster_deg;
    let arr_az = centered_offsets(rng, n, az);
    let arr_el = centered_offsets(rng, n, el);
    let dep_az = centered_offsets(rng, n, az);
    let dep_el = centered_offsets(rng, n, el);
    let power = cluster.power * lsp.power_scale / n as f64;
    for k in 0..n {
        out.push(Subpath {
            power,
            delay: cluster.delay,
            arrival: Angles::new(cluster.arrival.theta() + arr_el[k], cluster.arrival.phi() + arr_az[k]),
            departure: Angles::new(cluster.departure.theta() + dep_el[k], cluster.departure.phi() + dep_az[k]),
            phase: 0.0,
            cluster_index: index,
        });
    }
}

fn draw_polarization(cfg: &PolarizationConfig, count: usize, rng: &mut ChaCha8Rng) -> Vec<PolarizedSubpathExtras> {
    let draw_kappa = |rng: &mut ChaCha8Rng| 10f64.powf((cfg.xpr_db + cfg.xpr_std_db * gaussian(rng)) / 10.0);
    let link_kappa = draw_kappa(rng);
    (0..count)
        .map(|_| {
            let kappa = if cfg.per_subpath { draw_kappa(rng) } else { link_kappa };
            PolarizedSubpathExtras {
                phase_vv: 0.0,
                phase_vh: 0.0,
                phase_hv: 0.0,
                phase_hh: 0.0,
                kappa,
            }
        })
        .collect()
}

fn draw_phases(link: &mut LinkMultipath, rng: &mut ChaCha8Rng) {
    for s in &mut link.subpaths {
        s.phase = rng.random_range(0.0..TAU);
    }
    if let Some(extras) = &mut link.polarization {
        for e in extras {
            e.phase_vv = rng.random_range(0.0..TAU);
            e.phase_vh = rng.random_range(0.0..TAU);
            e.phase_hv = rng.random_range(0.0..TAU);
            e.phase_hh = rng.random_range(0.0..TAU);
        }
    }
}

/// Generate link `index` of the scenario from its own RNG stream.
pub fn generate_link(cfg: &ScenarioConfig, index: usize) -> Result<LinkMultipath> {
    cfg.validate()?;
    let mut rng = substream(cfg.rng_seed, index as u64);
    let lsp = draw_large_scale(cfg, &mut rng);
    let clusters = draw_clusters(cfg, &lsp, &mut rng);
    let mut subpaths = Vec::with_capacity(cfg.subpath_count());
    for (n, c) in clusters.iter().enumerate() {
        refine_cluster(cfg, &lsp, n, c, &mut rng, &mut subpaths);
    }
    let total: f64 = subpaths.iter().map(|s| s.power).sum();
    let fix = lsp.power_scale / total;
    subpaths.iter_mut().for_each(|s| s.power *= fix);

    let polarization = cfg
        .polarization
        .as_ref()
        .map(|p| draw_polarization(p, subpaths.len(), &mut rng));
    let mut link = LinkMultipath {
        subpaths,
        f0: cfg.f0,
        v_tx: lsp.v_tx,
        v_rx: lsp.v_rx,
        polarization,
    };
    draw_phases(&mut link, &mut rng);
    link.validate()?;
    Ok(link)
}

/// Generate all `link_count` links. Deterministic in `(cfg, cfg.rng_seed)`
/// whatever the number of worker threads.
pub fn generate_links(cfg: &ScenarioConfig) -> Result<Vec<LinkMultipath>> {
    cfg.validate()?;
    (0..cfg.link_count)
        .into_par_iter()
        .map(|i| generate_link(cfg, i))
        .collect()
}

/// Copy of `link` with every initial phase redrawn uniformly on `[0, 2pi)`;
/// powers, delays, angles and velocities are left untouched. All four
/// polarization phases are redrawn when present.
pub fn redraw_phases(link: &LinkMultipath, rng_seed: u64) -> LinkMultipath {
    let mut rng = substream(rng_seed, 0);
    let mut out = link.clone();
    draw_phases(&mut out, &mut rng);
    out
}

/// Redraw phases in place from a caller-provided stream.
pub fn redraw_phases_with(link: &mut LinkMultipath, rng: &mut ChaCha8Rng) {
    draw_phases(link, rng);
}
