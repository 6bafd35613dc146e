//! Geometry, units and the per-link multipath data model.
//!
//! Angle convention: `theta` is the **zenith** angle measured from the +z
//! axis (so `theta = pi/2` lies in the horizontal plane), and `phi` is the
//! azimuth in the x-y plane measured from +x. This is the spherical
//! parameterization used by 3GPP TR 38.901, not the colloquial elevation
//! above the horizon.
//!
//! All quantities are SI: Hz, seconds, meters, m/s and radians. Powers are
//! linear.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_pi(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Wrap an angle into `[0, 2pi)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Direction of a plane wave as (zenith, azimuth) in radians.
///
/// Construct through [`Angles::new`], which folds any input onto
/// `theta in [0, pi]`, `phi in [-pi, pi)`. A zenith angle past either pole
/// is reflected back and the azimuth turned by pi, which keeps the
/// represented direction unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    theta: f64,
    phi: f64,
}

impl Angles {
    pub fn new(theta: f64, phi: f64) -> Self {
        let mut theta = wrap_two_pi(theta);
        let mut phi = phi;
        if theta > PI {
            theta = TAU - theta;
            phi += PI;
        }
        Angles {
            theta,
            phi: wrap_pi(phi),
        }
    }

    /// Zenith angle from +z, radians in `[0, pi]`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Azimuth from +x, radians in `[-pi, pi)`.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Self {
        Angles::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    /// Recover the angles of a (nonzero) direction vector.
    pub fn from_direction(v: Vec3) -> Self {
        let n = v.norm();
        let theta = (v.z / n).clamp(-1.0, 1.0).acos();
        let phi = v.y.atan2(v.x);
        Angles::new(theta, phi)
    }
}

/// Unit vector pointing along `angles`: `(sin t cos p, sin t sin p, cos t)`.
///
/// Used for both departure and arrival directions.
#[inline]
pub fn direction_unit_vector(angles: Angles) -> Vec3 {
    let (st, ct) = angles.theta.sin_cos();
    let (sp, cp) = angles.phi.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

/// Center wavenumber `k0 = 2 pi f0 / c` in rad/m.
pub fn wavenumber(f0: f64) -> Result<f64> {
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(Error::invalid("f0", format!("must be a positive frequency, got {f0}")));
    }
    Ok(TAU * f0 / SPEED_OF_LIGHT)
}

/// Doppler coefficient of a subpath in m/s: projection of the receiver
/// velocity on the arrival direction plus the transmitter velocity on the
/// departure direction.
#[inline]
pub fn doppler_coefficient(arrival: Vec3, departure: Vec3, v_rx: Vec3, v_tx: Vec3) -> f64 {
    arrival.dot(v_rx) + departure.dot(v_tx)
}

/// One planar-wave multipath component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subpath {
    /// Linear power.
    pub power: f64,
    /// Seconds.
    pub delay: f64,
    pub arrival: Angles,
    pub departure: Angles,
    /// Initial phase, radians in `[0, 2pi)`.
    pub phase: f64,
    /// Cluster the subpath was refined from. Provenance only.
    pub cluster_index: usize,
}

impl Subpath {
    pub fn new(
        power: f64,
        delay: f64,
        arrival: Angles,
        departure: Angles,
        phase: f64,
        cluster_index: usize,
    ) -> Result<Self> {
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::invalid("power", format!("must be >= 0, got {power}")));
        }
        if !(delay.is_finite() && delay >= 0.0) {
            return Err(Error::invalid("delay", format!("must be >= 0, got {delay}")));
        }
        Ok(Subpath {
            power,
            delay,
            arrival,
            departure,
            phase: wrap_two_pi(phase),
            cluster_index,
        })
    }
}

/// Extra per-subpath parameters of the dual-polarized model.
///
/// Phases are labelled receive-polarization first: `phase_hv` couples the
/// horizontal receive response with the vertical transmit response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizedSubpathExtras {
    pub phase_vv: f64,
    pub phase_vh: f64,
    pub phase_hv: f64,
    pub phase_hh: f64,
    /// Cross-polarization power ratio (linear, > 0). Cross terms scale by
    /// `1 / sqrt(kappa)`.
    pub kappa: f64,
}

/// Flattened subpath set of one link plus the context needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMultipath {
    pub subpaths: Vec<Subpath>,
    /// Center frequency, Hz.
    pub f0: f64,
    pub v_tx: Vec3,
    pub v_rx: Vec3,
    /// Present when the link was generated for the dual-polarized model;
    /// one entry per subpath, same order.
    pub polarization: Option<Vec<PolarizedSubpathExtras>>,
}

impl LinkMultipath {
    pub fn new(subpaths: Vec<Subpath>, f0: f64, v_tx: Vec3, v_rx: Vec3) -> Result<Self> {
        let link = LinkMultipath {
            subpaths,
            f0,
            v_tx,
            v_rx,
            polarization: None,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn with_polarization(mut self, extras: Vec<PolarizedSubpathExtras>) -> Result<Self> {
        self.polarization = Some(extras);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subpaths.is_empty() {
            return Err(Error::invalid("subpaths", "a link needs at least one subpath"));
        }
        wavenumber(self.f0)?;
        if let Some(extras) = &self.polarization {
            if extras.len() != self.subpaths.len() {
                return Err(Error::invalid(
                    "polarization",
                    format!(
                        "{} polarization entries for {} subpaths",
                        extras.len(),
                        self.subpaths.len()
                    ),
                ));
            }
            if let Some(bad) = extras.iter().find(|e| !(e.kappa > 0.0)) {
                return Err(Error::invalid(
                    "kappa",
                    format!("depolarization ratio must be > 0, got {}", bad.kappa),
                ));
            }
        }
        Ok(())
    }

    /// Total number of subpaths `M`.
    pub fn len(&self) -> usize {
        self.subpaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subpaths.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.subpaths.iter().map(|s| s.power).sum()
    }

    /// Doppler coefficient of every subpath, in subpath order.
    pub fn doppler_coefficients(&self) -> Vec<f64> {
        self.subpaths
            .iter()
            .map(|s| {
                doppler_coefficient(
                    direction_unit_vector(s.arrival),
                    direction_unit_vector(s.departure),
                    self.v_rx,
                    self.v_tx,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn unit_vector_zenith_and_boresight() {
        let z = direction_unit_vector(Angles::new(0.0, 1.234));
        assert!((z - Vec3::Z).norm() < 1e-15);
        let x = direction_unit_vector(Angles::new(FRAC_PI_2, 0.0));
        assert!((x - Vec3::X).norm() < 1e-15);
    }

    #[test]
    fn unit_vector_matches_scalar_trig() {
        // theta = pi/3, phi = pi/4
        let v = direction_unit_vector(Angles::new(PI / 3.0, PI / 4.0));
        let s3 = 3f64.sqrt() / 2.0;
        let s2 = 2f64.sqrt() / 2.0;
        assert!((v.x - s3 * s2).abs() < 1e-15);
        assert!((v.y - s3 * s2).abs() < 1e-15);
        assert!((v.z - 0.5).abs() < 1e-15);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wavenumber_values() {
        let k = wavenumber(3e9).unwrap();
        assert!((k - 62.875_350_658_550_445).abs() < 1e-12);
        // 20 pi is the same quantity with c rounded to 3e8
        assert!((k - 20.0 * PI).abs() / (20.0 * PI) < 1e-3);
        assert!((wavenumber(SPEED_OF_LIGHT / TAU).unwrap() - 1.0).abs() < 1e-15);
        let k28 = wavenumber(28e9).unwrap();
        assert!((k28 - 586.836_606_146_470_9).abs() < 1e-10);
    }

    #[test]
    fn wavenumber_rejects_nonpositive() {
        for f in [0.0, -1.0, f64::NAN] {
            assert!(matches!(wavenumber(f), Err(Error::InvalidParameter { name: "f0", .. })));
        }
    }

    #[test]
    fn doppler_orthonormal_decomposition() {
        let nu = doppler_coefficient(Vec3::X, Vec3::Y, Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0));
        assert_eq!(nu, 5.0);
        assert_eq!(doppler_coefficient(Vec3::X, Vec3::Y, Vec3::ZERO, Vec3::ZERO), 0.0);
    }

    #[test]
    fn angles_fold_past_the_pole() {
        let a = Angles::new(PI + 0.25, 0.5);
        assert!((a.theta() - (PI - 0.25)).abs() < 1e-15);
        assert!((a.phi() - (0.5 - PI)).abs() < 1e-15);
        let raw = Vec3::new(
            (PI + 0.25_f64).sin() * 0.5f64.cos(),
            (PI + 0.25_f64).sin() * 0.5f64.sin(),
            (PI + 0.25_f64).cos(),
        );
        assert!((direction_unit_vector(a) - raw).norm() < 1e-14);
    }

    #[test]
    fn subpath_validation() {
        let a = Angles::new(1.0, 0.0);
        assert!(Subpath::new(-1.0, 0.0, a, a, 0.0, 0).is_err());
        assert!(Subpath::new(1.0, -1e-9, a, a, 0.0, 0).is_err());
        let s = Subpath::new(1.0, 0.0, a, a, -0.5, 0).unwrap();
        assert!((s.phase - (TAU - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn link_validation() {
        assert!(LinkMultipath::new(vec![], 3e9, Vec3::ZERO, Vec3::ZERO).is_err());
        let a = Angles::new(1.0, 0.0);
        let s = Subpath::new(1.0, 0.0, a, a, 0.0, 0).unwrap();
        assert!(LinkMultipath::new(vec![s.clone()], -3e9, Vec3::ZERO, Vec3::ZERO).is_err());
        let link = LinkMultipath::new(vec![s], 3e9, Vec3::ZERO, Vec3::ZERO).unwrap();
        let extras = PolarizedSubpathExtras {
            phase_vv: 0.0,
            phase_vh: 0.0,
            phase_hv: 0.0,
            phase_hh: 0.0,
            kappa: 0.0,
        };
        assert!(link.clone().with_polarization(vec![extras]).is_err());
        assert!(link.with_polarization(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn unit_vector_has_unit_norm(theta in -10.0..10.0f64, phi in -10.0..10.0f64) {
            let v = direction_unit_vector(Angles::new(theta, phi));
            prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn normalization_is_idempotent(theta in -20.0..20.0f64, phi in -20.0..20.0f64) {
            let a = Angles::new(theta, phi);
            prop_assert!((0.0..=PI).contains(&a.theta()));
            prop_assert!((-PI..PI).contains(&a.phi()));
            let b = Angles::new(a.theta(), a.phi());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn doppler_bounded_by_speeds(
            t1 in 0.0..PI, p1 in -PI..PI, t2 in 0.0..PI, p2 in -PI..PI,
            vr in prop::array::uniform3(-30.0..30.0f64),
            vs in prop::array::uniform3(-30.0..30.0f64),
        ) {
            let a = direction_unit_vector(Angles::new(t1, p1));
            let d = direction_unit_vector(Angles::new(t2, p2));
            let vr = Vec3::new(vr[0], vr[1], vr[2]);
            let vs = Vec3::new(vs[0], vs[1], vs[2]);
            let nu = doppler_coefficient(a, d, vr, vs);
            prop_assert!(nu.abs() <= vr.norm() + vs.norm() + 1e-12);
        }
    }
}
