//! 2x2 transfer matrices acting on the state `U = (u, q^-1 u')`.
//!
//! Each homogeneous layer has the closed-form propagator
//!
//! ```text
//! [  C(z)       q S(z) ]
//! [ -z S(z)/q   C(z)   ]      z = k^2 eps - alpha^2
//! ```
//!
//! with `C(z) = cos(sqrt(z) d)` and `S(z) = sin(sqrt(z) d) / sqrt(z)`. Both are
//! entire functions of `z`, so the result does not depend on which square
//! root is taken and continues analytically to complex `k`.

use num_complex::Complex64;
use std::ops::{Mul, Sub};

use crate::error::{Error, Result};
use crate::medium::{CrystalSpec, LayerProfile, Polarization};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Below this value of `|z| d^2` the power series is used for C and S.
const SERIES_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m: [[C64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[ONE, ZERO], [ZERO, ONE]],
    };

    pub fn new(m11: C64, m12: C64, m21: C64, m22: C64) -> Self {
        Self {
            m: [[m11, m12], [m21, m22]],
        }
    }

    pub fn real(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Self::new(m11.into(), m12.into(), m21.into(), m22.into())
    }

    pub fn det(&self) -> C64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> C64 {
        self.m[0][0] + self.m[1][1]
    }

    /// Max absolute entry.
    pub fn norm(&self) -> f64 {
        self.m
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Adjugate; equals the inverse when `det == 1`.
    pub fn adjugate(&self) -> Self {
        Self::new(self.m[1][1], -self.m[0][1], -self.m[1][0], self.m[0][0])
    }

    pub fn apply(&self, x: [C64; 2]) -> [C64; 2] {
        [
            self.m[0][0] * x[0] + self.m[0][1] * x[1],
            self.m[1][0] * x[0] + self.m[1][1] * x[1],
        ]
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }

    /// `self^n` by repeated squaring.
    pub fn pow(&self, mut n: u32) -> Self {
        let mut base = *self;
        let mut acc = Mat2::IDENTITY;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        (*self - *other).norm()
    }

    pub fn max_imag(&self) -> f64 {
        self.m
            .iter()
            .flatten()
            .map(|z| z.im.abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, b: Mat2) -> Mat2 {
        let a = &self.m;
        let b = &b.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    fn sub(self, b: Mat2) -> Mat2 {
        let a = &self.m;
        let b = &b.m;
        Mat2::new(
            a[0][0] - b[0][0],
            a[0][1] - b[0][1],
            a[1][0] - b[1][0],
            a[1][1] - b[1][1],
        )
    }
}

/// Wavenumber, transverse Bloch frequency, polarization, and the vacuum
/// normal wavenumber `beta0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPoint {
    pub k: C64,
    pub alpha: C64,
    pub beta0: C64,
    pub pol: Polarization,
}

impl SpectralPoint {
    /// Real `(k, alpha)`; `beta0` is the principal root of `k^2 - alpha^2`.
    pub fn new(k: f64, alpha: f64, pol: Polarization) -> Self {
        let k = C64::from(k);
        let alpha = C64::from(alpha);
        Self {
            k,
            alpha,
            beta0: (k * k - alpha * alpha).sqrt(),
            pol,
        }
    }

    /// Plane-wave incidence at a fixed angle: `alpha = k sin(theta)` and
    /// `beta0 = k cos(theta)`, both entire in `k`.
    pub fn fixed_theta(k: C64, theta: f64, pol: Polarization) -> Self {
        Self {
            k,
            alpha: k * theta.sin(),
            beta0: k * theta.cos(),
            pol,
        }
    }

    pub fn beta0_sq(&self) -> C64 {
        self.k * self.k - self.alpha * self.alpha
    }

    pub fn beta_sq(&self, eps: f64) -> C64 {
        self.k * self.k * eps - self.alpha * self.alpha
    }
}

/// `(C(z), S(z))` for a layer of thickness `d`.
fn cos_sinc(z: C64, d: f64) -> (C64, C64) {
    let x = z * d * d;
    if x.norm() < SERIES_THRESHOLD {
        // C = sum (-x)^j/(2j)!, S = d * sum (-x)^j/(2j+1)!
        let mut c = ONE;
        let mut s = ONE;
        let mut term_c = ONE;
        let mut term_s = ONE;
        for j in 1..8 {
            let j = j as f64;
            term_c = -term_c * x / ((2.0 * j - 1.0) * (2.0 * j));
            term_s = -term_s * x / ((2.0 * j) * (2.0 * j + 1.0));
            c += term_c;
            s += term_s;
        }
        (c, s * d)
    } else {
        let root = z.sqrt();
        let arg = root * d;
        (arg.cos(), arg.sin() / root)
    }
}

pub fn layer_matrix(eps: f64, d: f64, pt: &SpectralPoint) -> Result<Mat2> {
    if !(d > 0.0) {
        return Err(Error::DegenerateLayer(d));
    }
    if pt.pol == Polarization::HPar && eps == 0.0 {
        return Err(Error::ZeroPermittivity { index: 0 });
    }
    let q = pt.pol.q(eps);
    let z = pt.beta_sq(eps);
    let (c, s) = cos_sinc(z, d);
    Ok(Mat2::new(c, s * q, -z * s / q, c))
}

/// Product of layer matrices over a profile; the last layer ends up leftmost.
pub fn profile_monodromy(profile: &LayerProfile, pt: &SpectralPoint) -> Result<Mat2> {
    profile
        .layers()
        .iter()
        .try_fold(Mat2::IDENTITY, |acc, layer| {
            Ok(layer_matrix(layer.epsilon, layer.thickness, pt)? * acc)
        })
}

pub fn cell_monodromy(spec: &CrystalSpec, pt: &SpectralPoint) -> Result<Mat2> {
    profile_monodromy(&spec.cell, pt)
}

pub fn defect_monodromy(spec: &CrystalSpec, pt: &SpectralPoint) -> Result<Mat2> {
    profile_monodromy(&spec.defect.profile, pt)
}

/// `T^n T0 T^n`: n periods, the defect, n periods.
pub fn matrix_power_product(t: &Mat2, t0: &Mat2, n: u32) -> Mat2 {
    let tn = t.pow(n);
    tn * *t0 * tn
}

/// Total transfer matrix of the finite structure with `n` periods on each
/// side of the defect.
pub fn structure_matrix(spec: &CrystalSpec, pt: &SpectralPoint, n: u32) -> Result<Mat2> {
    let t = cell_monodromy(spec, pt)?;
    let t0 = defect_monodromy(spec, pt)?;
    Ok(matrix_power_product(&t, &t0, n))
}
