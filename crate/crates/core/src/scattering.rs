//! Reflection and transmission of the finite structure (n periods, defect,
//! n periods) embedded in vacuum.
//!
//! Two independent routes are provided: [`rt_analytic`] evaluates the
//! closed-form ratio `r = p(mu^2n) / q(mu^2n)` built from the Floquet basis,
//! and [`rt_direct`] solves the radiation boundary-value problem for the
//! total transfer matrix.

use rayon::prelude::*;
use serde::Serialize;

use crate::bands::{BandKind, EigenBasis};
use crate::defect::{DefectCoeffs, FloquetPoint};
use crate::error::{Error, Result};
use crate::medium::{CrystalSpec, Polarization};
use crate::transfer::{matrix_power_product, Mat2, SpectralPoint, C64};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiMatrix {
    pub chi11: C64,
    pub chi12: C64,
    pub chi21: C64,
    pub chi22: C64,
}

impl ChiMatrix {
    pub fn det(&self) -> C64 {
        self.chi11 * self.chi22 - self.chi12 * self.chi21
    }
}

/// Coordinates of the vacuum plane waves `(1, +i beta0)` (first column) and
/// `(1, -i beta0)` (second column) in the basis `(v, w)`.
pub fn chi_matrix(basis: &EigenBasis, beta0: C64) -> Result<ChiMatrix> {
    if beta0.norm() == 0.0 {
        return Err(Error::GrazingIncidence);
    }
    let (v, w) = (basis.v, basis.w);
    Ok(ChiMatrix {
        chi11: w[1] - I * beta0 * w[0],
        chi12: w[1] + I * beta0 * w[0],
        chi21: -v[1] + I * beta0 * v[0],
        chi22: -v[1] - I * beta0 * v[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterResult {
    pub r: C64,
    pub t: C64,
    /// `| |r|^2 + |t|^2 - 1 |`; only meaningful for real lossless
    /// propagating inputs.
    pub energy_residual: f64,
}

impl ScatterResult {
    fn new(r: C64, t: C64) -> Self {
        Self {
            r,
            t,
            energy_residual: (r.norm_sqr() + t.norm_sqr() - 1.0).abs(),
        }
    }
}

/// Quadratics `p(X) = p2 X^2 + p1 X + p0` and `q(X) = q2 X^2 + q1 X + q0`
/// with `r = p/q` and `t = -2 i beta0 X / q` at `X = mu^2n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtPolynomials {
    pub p: [C64; 3],
    pub q: [C64; 3],
}

impl RtPolynomials {
    pub fn new(c: &DefectCoeffs, chi: &ChiMatrix) -> Self {
        let ChiMatrix {
            chi11,
            chi12,
            chi21,
            chi22,
        } = *chi;
        Self {
            p: [
                -chi21 * chi11 * c.d0,
                chi21 * chi21 * c.c0 - chi11 * chi11 * c.b0,
                chi21 * chi11 * c.a0,
            ],
            q: [
                chi11 * chi22 * c.d0,
                -chi21 * chi22 * c.c0 + chi11 * chi12 * c.b0,
                -chi21 * chi12 * c.a0,
            ],
        }
    }

    pub fn eval_p(&self, x: C64) -> C64 {
        (self.p[2] * x + self.p[1]) * x + self.p[0]
    }

    pub fn eval_q(&self, x: C64) -> C64 {
        (self.q[2] * x + self.q[1]) * x + self.q[0]
    }

    pub fn p_scale(&self) -> f64 {
        self.p.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn q_scale(&self) -> f64 {
        self.q.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

pub fn rt_analytic(
    coeffs: &DefectCoeffs,
    chi: &ChiMatrix,
    mu: C64,
    n: u32,
    beta0: C64,
) -> Result<ScatterResult> {
    let polys = RtPolynomials::new(coeffs, chi);
    let x = mu.powu(2 * n);
    let q = polys.eval_q(x);
    if q.norm() < 1e-14 * polys.q_scale() {
        return Err(Error::PoleOnAxis(q.norm()));
    }
    let r = polys.eval_p(x) / q;
    let t = -2.0 * I * beta0 * x / q;
    Ok(ScatterResult::new(r, t))
}

/// Boundary-value oracle for a total transfer matrix `m` with vacuum on both
/// sides.
///
/// The outgoing condition on the right fixes `U(L) = t (1, i beta0)`; the
/// state is carried back with `m^-1 = adj(m)` and the incoming condition
/// `i beta0 u(0) + u'(0) = 2 i beta0` determines `t`. Then `r = u(0) - 1`.
pub fn rt_direct(m: &Mat2, beta0: C64) -> Result<ScatterResult> {
    let [[m11, m12], [m21, m22]] = m.m;
    let ib = I * beta0;
    // U(0)/t = adj(m) (1, i beta0)
    let u0 = m22 - m12 * ib;
    let du0 = -m21 + m11 * ib;
    let denom = ib * u0 + du0;
    if denom.norm() <= 1e-300 || !denom.is_finite() || beta0.norm() == 0.0 {
        return Err(Error::SingularSystem);
    }
    let t = 2.0 * ib / denom;
    let r = t * u0 - 1.0;
    Ok(ScatterResult::new(r, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtLimits {
    /// Large-n limit of `r_n` at a defect mode (`d0 = 0`); `None` when the
    /// expression is 0/0 (no coupling, `b0 = c0 = 0`).
    pub at_mode: Option<C64>,
    /// Large-n limit away from a mode: `-chi21 / chi22`.
    pub off_mode: C64,
}

/// Limits of `r_n` as n grows. At a mode `r_n -> p1 / q1` (the linear
/// coefficients of the quadratics), otherwise `r_n -> p0 / q0`.
pub fn rt_limits(coeffs: &DefectCoeffs, chi: &ChiMatrix) -> RtLimits {
    let polys = RtPolynomials::new(coeffs, chi);
    let off_mode = -chi.chi21 / chi.chi22;
    let num = polys.p[1];
    let den = polys.q[1];
    let scale = (chi.chi11.norm() + chi.chi21.norm()).powi(2)
        * (coeffs.b0.norm() + coeffs.c0.norm()).max(1e-300);
    let at_mode = (den.norm() > 1e-14 * scale && scale > 1e-250).then(|| num / den);
    RtLimits { at_mode, off_mode }
}

/// Upper envelope of `|r|` over any number of repetitions of a periodic
/// block `tt`, valid inside a band of that block:
/// `sqrt(1 - (4 - tr^2) / (t12 beta0 - t21 / beta0)^2)`.
///
/// With `det tt = 1` the radicand equals
/// `((t11 - t22)^2 + (t12 beta0 + t21 / beta0)^2) / (t12 beta0 - t21 / beta0)^2`,
/// which is what gets evaluated: it has no cancellation when the envelope
/// is close to zero.
pub fn envelope(tt: &Mat2, beta0: f64) -> Result<f64> {
    let tr = tt.trace().re;
    if tr.abs() > 2.0 {
        return Err(Error::OutsideBand(tr.abs()));
    }
    let [[a, b], [c, d]] = tt.m.map(|row| row.map(|z| z.re));
    let x = b * beta0 - c / beta0;
    let y = b * beta0 + c / beta0;
    let value = (a - d).hypot(y) / x.abs();
    let literal = 1.0 - (4.0 - tr * tr) / (x * x);
    if literal < -1e-12 {
        return Err(Error::Numerical(format!("envelope radicand {literal} < 0")));
    }
    Ok(value.min(1.0))
}

/// Both routes at one real spectral point.
#[derive(Debug, Clone, Copy)]
pub struct ScatterPair {
    pub analytic: ScatterResult,
    pub direct: ScatterResult,
}

impl ScatterPair {
    /// `||(dr, dt)|| / ||(r, t)||` between the routes.
    pub fn deviation(&self) -> f64 {
        let dr = (self.analytic.r - self.direct.r).norm_sqr();
        let dt = (self.analytic.t - self.direct.t).norm_sqr();
        let s = self.direct.r.norm_sqr() + self.direct.t.norm_sqr();
        ((dr + dt) / s).sqrt()
    }
}

pub fn analytic_at(fp: &FloquetPoint, n: u32) -> Result<ScatterResult> {
    let chi = chi_matrix(&fp.basis, fp.point.beta0)?;
    rt_analytic(&fp.coeffs, &chi, fp.mu(), n, fp.point.beta0)
}

pub fn direct_at(fp: &FloquetPoint, n: u32) -> Result<ScatterResult> {
    rt_direct(&matrix_power_product(&fp.t, &fp.t0, n), fp.point.beta0)
}

pub fn scatter(spec: &CrystalSpec, pt: SpectralPoint, n: u32) -> Result<ScatterPair> {
    let fp = FloquetPoint::at(spec, pt)?;
    Ok(ScatterPair {
        analytic: analytic_at(&fp, n)?,
        direct: direct_at(&fp, n)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: f64,
    pub theta: f64,
    pub n: u32,
    pub r: C64,
    pub t: C64,
    pub energy_residual: f64,
    /// Envelope of the single super-period; `None` when the
    /// point is outside a band of `T^n T0 T^n`.
    pub envelope: Option<f64>,
    pub class: BandKind,
}

/// Fixed-angle sweep over `ks` using the analytic route; falls back to the
/// direct route at band edges of the base crystal, where the Floquet basis
/// degenerates.
pub fn sweep(
    spec: &CrystalSpec,
    theta: f64,
    n: u32,
    ks: &[f64],
    pol: Polarization,
) -> Result<Vec<SweepRow>> {
    ks.par_iter()
        .map(|&k| {
            let pt = SpectralPoint::new(k, k * theta.sin(), pol);
            let tt = crate::transfer::structure_matrix(spec, &pt, n)?;
            let (res, class) = match FloquetPoint::at(spec, pt) {
                Ok(fp) => (
                    analytic_at(&fp, n).or_else(|_| direct_at(&fp, n))?,
                    fp.class.kind,
                ),
                Err(Error::DegenerateEigenvalues(_)) => (rt_direct(&tt, pt.beta0)?, BandKind::Edge),
                Err(e) => return Err(e),
            };
            Ok(SweepRow {
                k,
                theta,
                n,
                r: res.r,
                t: res.t,
                energy_residual: res.energy_residual,
                envelope: envelope(&tt, pt.beta0.re).ok(),
                class,
            })
        })
        .collect()
}
