//! Antenna arrays: element phase-center positions and angular responses.
//!
//! Patterns return *amplitude* gains since they multiply straight into the
//! complex channel coefficient. Every element of one array shares the same
//! pattern.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction_unit_vector, Angles, Vec3, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ElementPattern {
    Isotropic,
    /// `max(0, cos g)^exponent`, `g` the great-circle angle to `boresight`.
    CosinePower { exponent: f64, boresight: Angles },
    /// Parabolic-in-dB sector pattern clipped at `max_attenuation_db`, the
    /// usual 3GPP single-element shape. Boresight is the horizontal direction
    /// `boresight_azimuth` (radians).
    Sectorized {
        azimuth_3db_deg: f64,
        elevation_3db_deg: f64,
        max_attenuation_db: f64,
        boresight_azimuth: f64,
    },
    /// `weight * base(angles)`, weight >= 0. Zero weight gives a null response.
    Weighted { weight: f64, base: Box<ElementPattern> },
}

impl ElementPattern {
    pub fn sectorized(azimuth_3db_deg: f64, elevation_3db_deg: f64, max_attenuation_db: f64) -> Self {
        ElementPattern::Sectorized {
            azimuth_3db_deg,
            elevation_3db_deg,
            max_attenuation_db,
            boresight_azimuth: 0.0,
        }
    }

    pub fn null() -> Self {
        ElementPattern::Weighted {
            weight: 0.0,
            base: Box::new(ElementPattern::Isotropic),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ElementPattern::Isotropic => Ok(()),
            ElementPattern::CosinePower { exponent, .. } => {
                if exponent.is_finite() && *exponent >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("exponent", format!("must be >= 0, got {exponent}")))
                }
            }
            ElementPattern::Sectorized {
                azimuth_3db_deg,
                elevation_3db_deg,
                max_attenuation_db,
                ..
            } => {
                if !(*azimuth_3db_deg > 0.0 && *elevation_3db_deg > 0.0) {
                    return Err(Error::invalid("beamwidth", "3 dB beamwidths must be > 0"));
                }
                if !(*max_attenuation_db >= 0.0) {
                    return Err(Error::invalid("max_attenuation_db", "must be >= 0"));
                }
                Ok(())
            }
            ElementPattern::Weighted { weight, base } => {
                if !(weight.is_finite() && *weight >= 0.0) {
                    return Err(Error::invalid("weight", format!("must be >= 0, got {weight}")));
                }
                base.validate()
            }
        }
    }

    /// Amplitude response towards `angles`.
    pub fn gain(&self, angles: Angles) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::CosinePower { exponent, boresight } => {
                let c = direction_unit_vector(angles).dot(direction_unit_vector(*boresight));
                c.max(0.0).powf(*exponent)
            }
            ElementPattern::Sectorized {
                azimuth_3db_deg,
                elevation_3db_deg,
                max_attenuation_db,
                boresight_azimuth,
            } => {
                let az = crate::geometry::wrap_pi(angles.phi() - boresight_azimuth).to_degrees();
                let zen = angles.theta().to_degrees();
                let horizontal = (12.0 * (az / azimuth_3db_deg).powi(2)).min(*max_attenuation_db);
                let vertical = (12.0 * ((zen - 90.0) / elevation_3db_deg).powi(2)).min(*max_attenuation_db);
                let attenuation_db = (horizontal + vertical).min(*max_attenuation_db);
                10f64.powf(-attenuation_db / 20.0)
            }
            ElementPattern::Weighted { weight, base } => weight * base.gain(angles),
        }
    }
}

/// Amplitude response of `pattern` towards `angles`.
pub fn gain(pattern: &ElementPattern, angles: Angles) -> f64 {
    pattern.gain(angles)
}

/// Vertical and horizontal responses of a dual-polarized element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizedPattern {
    pub vertical: ElementPattern,
    pub horizontal: ElementPattern,
}

impl PolarizedPattern {
    /// Element slanted by `slant` radians from vertical: the base response is
    /// split as `cos(slant)` on V and `sin(slant)` on H.
    pub fn slanted(base: ElementPattern, slant: f64) -> Result<Self> {
        let (s, c) = slant.sin_cos();
        if s < 0.0 || c < 0.0 {
            return Err(Error::invalid("slant", "must lie in [0, pi/2]"));
        }
        Ok(PolarizedPattern {
            vertical: ElementPattern::Weighted {
                weight: c,
                base: Box::new(base.clone()),
            },
            horizontal: ElementPattern::Weighted {
                weight: s,
                base: Box::new(base),
            },
        })
    }

    pub fn vertical_only(base: ElementPattern) -> Self {
        PolarizedPattern {
            vertical: base,
            horizontal: ElementPattern::null(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArrayPattern {
    Scalar(ElementPattern),
    Polarized(PolarizedPattern),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayDescriptor {
    /// Element phase centers, meters.
    pub positions: Vec<Vec3>,
    pub pattern: ArrayPattern,
    /// Frequency the geometry was laid out for, when it was built from a
    /// wavelength-relative spacing.
    pub design_frequency: Option<f64>,
}

impl ArrayDescriptor {
    pub fn new(positions: Vec<Vec3>, pattern: ArrayPattern) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("positions", "an array needs at least one element"));
        }
        match &pattern {
            ArrayPattern::Scalar(p) => p.validate()?,
            ArrayPattern::Polarized(p) => {
                p.vertical.validate()?;
                p.horizontal.validate()?;
            }
        }
        Ok(ArrayDescriptor {
            positions,
            pattern,
            design_frequency: None,
        })
    }

    pub fn single_isotropic() -> Self {
        ArrayDescriptor {
            positions: vec![Vec3::ZERO],
            pattern: ArrayPattern::Scalar(ElementPattern::Isotropic),
            design_frequency: None,
        }
    }

    pub fn with_pattern(self, pattern: ArrayPattern) -> Result<Self> {
        let design_frequency = self.design_frequency;
        let mut out = ArrayDescriptor::new(self.positions, pattern)?;
        out.design_frequency = design_frequency;
        Ok(out)
    }

    pub fn element_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_polarized(&self) -> bool {
        matches!(self.pattern, ArrayPattern::Polarized(_))
    }

    /// The single-polarization pattern, or an error for dual-polarized arrays.
    pub fn scalar_pattern(&self) -> Result<&ElementPattern> {
        match &self.pattern {
            ArrayPattern::Scalar(p) => Ok(p),
            ArrayPattern::Polarized(_) => Err(Error::invalid(
                "pattern",
                "the scalar engine needs a single-polarization pattern",
            )),
        }
    }

    pub fn polarized_pattern(&self) -> Result<&PolarizedPattern> {
        match &self.pattern {
            ArrayPattern::Polarized(p) => Ok(p),
            ArrayPattern::Scalar(_) => Err(Error::invalid(
                "pattern",
                "the polarized engine needs a dual-polarized pattern",
            )),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.positions.iter().fold(Vec3::ZERO, |acc, p| acc + *p);
        sum * (1.0 / self.positions.len() as f64)
    }

    /// Fails when the array was laid out for a different carrier than `f0`.
    pub fn check_frequency(&self, f0: f64) -> Result<()> {
        match self.design_frequency {
            Some(design) if ((design - f0) / f0).abs() > 1e-12 => Err(Error::invalid(
                "f0",
                format!("array was built for {design} Hz but the link carrier is {f0} Hz"),
            )),
            _ => Ok(()),
        }
    }
}

fn check_spacing(spacing_wavelengths: f64, f0: f64) -> Result<f64> {
    if !(spacing_wavelengths.is_finite() && spacing_wavelengths > 0.0) {
        return Err(Error::invalid("spacing", format!("must be > 0, got {spacing_wavelengths}")));
    }
    crate::geometry::wavenumber(f0)?;
    Ok(spacing_wavelengths * SPEED_OF_LIGHT / f0)
}

/// Uniform linear array of `count` isotropic elements along `axis`, spaced
/// `spacing_wavelengths` wavelengths at `f0`, centered on the origin.
pub fn make_ula(count: usize, spacing_wavelengths: f64, f0: f64, axis: Vec3) -> Result<ArrayDescriptor> {
    if count == 0 {
        return Err(Error::invalid("count", "must be >= 1"));
    }
    if !axis.is_unit(1e-12) {
        return Err(Error::invalid("axis", "must be a unit vector"));
    }
    let d = check_spacing(spacing_wavelengths, f0)?;
    let center = (count as f64 - 1.0) / 2.0;
    let positions = (0..count).map(|k| axis * ((k as f64 - center) * d)).collect();
    Ok(ArrayDescriptor {
        positions,
        pattern: ArrayPattern::Scalar(ElementPattern::Isotropic),
        design_frequency: Some(f0),
    })
}

/// Uniform planar array in the y-z plane: columns along +y, rows along +z,
/// centered on the origin.
pub fn make_upa(rows: usize, cols: usize, spacing_wavelengths: f64, f0: f64) -> Result<ArrayDescriptor> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("count", "rows and cols must be >= 1"));
    }
    let d = check_spacing(spacing_wavelengths, f0)?;
    let rc = (rows as f64 - 1.0) / 2.0;
    let cc = (cols as f64 - 1.0) / 2.0;
    let mut positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            positions.push(Vec3::new(0.0, (c as f64 - cc) * d, (r as f64 - rc) * d));
        }
    }
    Ok(ArrayDescriptor {
        positions,
        pattern: ArrayPattern::Scalar(ElementPattern::Isotropic),
        design_frequency: Some(f0),
    })
}
