//! Piecewise-constant permittivity profiles for the periodic cell and the
//! defect layer.
//!
//! Lengths are in units of the crystal period, so a unit cell always has
//! total thickness 1.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

const PERIOD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub thickness: f64,
    pub epsilon: f64,
}

/// Ordered list of homogeneous layers, left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct LayerProfile {
    layers: Vec<Layer>,
}

impl LayerProfile {
    pub fn new(layers: &[(f64, f64)]) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyProfile);
        }
        for (index, &(thickness, epsilon)) in layers.iter().enumerate() {
            if !thickness.is_finite() || !epsilon.is_finite() {
                return Err(Error::NonFiniteLayer { index });
            }
            if thickness <= 0.0 {
                return Err(Error::NonPositiveThickness { index, thickness });
            }
            if epsilon == 0.0 {
                return Err(Error::ZeroPermittivity { index });
            }
        }
        Ok(Self {
            layers: layers
                .iter()
                .map(|&(thickness, epsilon)| Layer { thickness, epsilon })
                .collect(),
        })
    }

    /// Slices a smooth profile `eps(x)` on `[0, width]` into `slices`
    /// equal-width layers, sampling at slice midpoints.
    pub fn sliced(width: f64, slices: usize, eps: impl Fn(f64) -> f64) -> Result<Self> {
        if slices == 0 {
            return Err(Error::EmptyProfile);
        }
        let d = width / slices as f64;
        let layers: Vec<(f64, f64)> = (0..slices)
            .map(|i| (d, eps((i as f64 + 0.5) * d)))
            .collect();
        Self::new(&layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn width(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Same layers in the opposite order.
    pub fn reversed(&self) -> Self {
        let mut layers = self.layers.clone();
        layers.reverse();
        Self { layers }
    }

    pub fn as_pairs(&self) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .map(|l| (l.thickness, l.epsilon))
            .collect()
    }

    /// Permittivity at `x`. Interfaces take the value of the layer to their
    /// right; the right end of the profile belongs to the last layer.
    pub fn epsilon_at(&self, x: f64) -> Result<f64> {
        let width = self.width();
        if !(0.0..=width).contains(&x) {
            return Err(Error::OutOfDomain { x, width });
        }
        let mut left = 0.0;
        for layer in &self.layers {
            let right = left + layer.thickness;
            if x < right {
                return Ok(layer.epsilon);
            }
            left = right;
        }
        Ok(self.layers[self.layers.len() - 1].epsilon)
    }
}

impl TryFrom<Vec<(f64, f64)>> for LayerProfile {
    type Error = Error;

    fn try_from(layers: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(&layers)
    }
}

impl From<LayerProfile> for Vec<(f64, f64)> {
    fn from(p: LayerProfile) -> Self {
        p.as_pairs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub width: f64,
    pub profile: LayerProfile,
}

impl DefectSpec {
    pub fn new(width: f64, layers: &[(f64, f64)]) -> Result<Self> {
        let profile = LayerProfile::new(layers)?;
        let sum = profile.width();
        if !(width > 0.0) {
            return Err(Error::NonPositiveThickness {
                index: 0,
                thickness: width,
            });
        }
        if (sum - width).abs() > PERIOD_TOL * width.max(1.0) {
            return Err(Error::DefectWidthMismatch { width, sum });
        }
        Ok(Self { width, profile })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    /// Electric field along the invariant axis, q = 1.
    #[serde(rename = "E")]
    EPar,
    /// Magnetic field along the invariant axis, q = epsilon.
    #[serde(rename = "H")]
    HPar,
}

impl Polarization {
    pub fn q(self, epsilon: f64) -> f64 {
        match self {
            Polarization::EPar => 1.0,
            Polarization::HPar => epsilon,
        }
    }
}

/// How the transverse wavenumber is tied to k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Incidence {
    FixedAlpha(f64),
    FixedTheta(f64),
}

impl Incidence {
    pub fn fixed_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > -PI && alpha <= PI) {
            return Err(Error::AlphaOutOfRange { alpha });
        }
        Ok(Incidence::FixedAlpha(alpha))
    }

    pub fn fixed_theta(theta: f64) -> Result<Self> {
        if !(theta.abs() < FRAC_PI_2) {
            return Err(Error::ThetaOutOfRange { theta });
        }
        Ok(Incidence::FixedTheta(theta))
    }

    pub fn alpha_at(self, k: f64) -> f64 {
        match self {
            Incidence::FixedAlpha(a) => a,
            Incidence::FixedTheta(theta) => k * theta.sin(),
        }
    }
}

/// A validated periodic crystal with one defect layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    pub cell: LayerProfile,
    pub defect: DefectSpec,
}

impl CrystalSpec {
    /// The same crystal with every layer list reversed.
    pub fn reversed(&self) -> Self {
        Self {
            cell: self.cell.reversed(),
            defect: DefectSpec {
                width: self.defect.width,
                profile: self.defect.profile.reversed(),
            },
        }
    }

    /// Replace the defect by one copy of the unit cell.
    pub fn with_period_defect(&self) -> Self {
        Self {
            cell: self.cell.clone(),
            defect: DefectSpec {
                width: self.cell.width(),
                profile: self.cell.clone(),
            },
        }
    }
}

pub fn validate_crystal(cell: &LayerProfile, defect: &DefectSpec) -> Result<CrystalSpec> {
    let cell = LayerProfile::new(&cell.as_pairs())?;
    let sum = cell.width();
    if (sum - 1.0).abs() > PERIOD_TOL {
        return Err(Error::NonUnitPeriod { sum });
    }
    let defect = DefectSpec::new(defect.width, &defect.profile.as_pairs())?;
    Ok(CrystalSpec { cell, defect })
}

/// Convenience constructor from raw `(thickness, epsilon)` pairs.
pub fn crystal(
    cell: &[(f64, f64)],
    defect_width: f64,
    defect: &[(f64, f64)],
) -> Result<CrystalSpec> {
    let cell = LayerProfile::new(cell)?;
    let defect = DefectSpec::new(defect_width, defect)?;
    validate_crystal(&cell, &defect)
}

/// Quarter-ish Bragg cell (eps 4 / 1, half period each) with a 0.8-wide
/// eps = 2.25 defect; the reference structure used throughout the tests.
pub fn golden_crystal() -> CrystalSpec {
    crystal(&[(0.5, 4.0), (0.5, 1.0)], 0.8, &[(0.8, 2.25)]).expect("golden crystal is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn valid_spec() {
        let spec = crystal(&[(0.5, 4.0), (0.5, 1.0)], 0.8, &[(0.8, 2.25)]).unwrap();
        assert_eq!(spec.cell.layers().len(), 2);
        assert_eq!(spec.defect.width, 0.8);
    }

    #[test]
    fn rejects_bad_cells() {
        assert!(matches!(
            crystal(&[(0.5, 4.0), (0.4, 1.0)], 0.8, &[(0.8, 2.25)]),
            Err(Error::NonUnitPeriod { .. })
        ));
        assert!(matches!(
            crystal(&[(1.0, 0.0)], 0.8, &[(0.8, 2.25)]),
            Err(Error::ZeroPermittivity { index: 0 })
        ));
        assert!(matches!(
            crystal(&[(1.5, 4.0), (-0.5, 1.0)], 0.8, &[(0.8, 2.25)]),
            Err(Error::NonPositiveThickness { index: 1, .. })
        ));
        assert!(matches!(
            crystal(&[(1.0, 2.0)], 0.8, &[(0.7, 2.25)]),
            Err(Error::DefectWidthMismatch { .. })
        ));
    }

    #[test]
    fn epsilon_lookup() {
        let p = LayerProfile::new(&[(0.5, 4.0), (0.5, 1.0)]).unwrap();
        assert_eq!(p.epsilon_at(0.25).unwrap(), 4.0);
        assert_eq!(p.epsilon_at(0.5).unwrap(), 1.0);
        assert_eq!(p.epsilon_at(0.0).unwrap(), 4.0);
        assert_eq!(p.epsilon_at(1.0).unwrap(), 1.0);
        assert!(matches!(p.epsilon_at(1.2), Err(Error::OutOfDomain { .. })));
        assert!(matches!(p.epsilon_at(-0.1), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn incidence_domains() {
        assert!(Incidence::fixed_alpha(PI).is_ok());
        assert!(Incidence::fixed_alpha(-PI).is_err());
        assert!(Incidence::fixed_theta(FRAC_PI_2).is_err());
        let inc = Incidence::fixed_theta(0.3).unwrap();
        assert!((inc.alpha_at(2.0) - 2.0 * 0.3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn sliced_profile() {
        let p = LayerProfile::sliced(1.0, 64, |x| 2.0 + x).unwrap();
        assert_eq!(p.layers().len(), 64);
        assert!((p.width() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let spec = golden_crystal();
        let s = serde_json::to_string(&spec.cell).unwrap();
        assert_eq!(s, "[[0.5,4.0],[0.5,1.0]]");
        let bad: std::result::Result<LayerProfile, _> =
            serde_json::from_str("[[0.5,-1.0],[0.5,0.0]]");
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(ts in proptest::collection::vec(0.05f64..1.0, 1..6),
                                    es in proptest::collection::vec(1.0f64..12.0, 6)) {
            let total: f64 = ts.iter().sum();
            let layers: Vec<(f64, f64)> = ts.iter().zip(&es).map(|(t, e)| (t / total, *e)).collect();
            let cell = LayerProfile::new(&layers).unwrap();
            let defect = DefectSpec::new(0.8, &[(0.8, 2.25)]).unwrap();
            if let Ok(spec) = validate_crystal(&cell, &defect) {
                let again = validate_crystal(&spec.cell, &spec.defect).unwrap();
                prop_assert_eq!(spec, again);
            }
        }

        #[test]
        fn epsilon_right_continuous(x in 0.0f64..1.0) {
            let p = LayerProfile::new(&[(0.3, 4.0), (0.2, 2.0), (0.5, 1.0)]).unwrap();
            let e = p.epsilon_at(x).unwrap();
            let e_right = p.epsilon_at((x + 1e-13).min(1.0)).unwrap();
            // only differs if x sits just left of an interface
            if (x - 0.3).abs() > 1e-12 && (x - 0.5).abs() > 1e-12 {
                prop_assert_eq!(e, e_right);
            }
        }
    }
}
