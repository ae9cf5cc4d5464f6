//! Continuation of `r_n` to complex k at fixed incidence angle, and the
//! pole/zero pair that a defect mode produces below the real axis.
//!
//! Along a fixed angle, `alpha = k sin(theta)` and `beta0 = k cos(theta)`
//! are entire in k, and so are the monodromy entries. The only branched
//! ingredient is the multiplier `mu`, which is carried along a path from a
//! real anchor inside a gap by [`Continuation::advance`]. The quadratics
//! `p` and `q` are invariant under rescaling of the Floquet basis, so they
//! are analytic wherever `mu` is.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::bands::{classify, eigenbasis_for, host_gap, multipliers, BandKind, GapInterval};
use crate::defect::{defect_coeffs, DefectCoeffs, FloquetPoint};
use crate::error::{Error, Result};
use crate::fit::{fit_circle, CircleFit};
use crate::medium::{CrystalSpec, Incidence, Polarization};
use crate::scattering::{chi_matrix, rt_analytic, ChiMatrix, RtPolynomials};
use crate::transfer::{cell_monodromy, defect_monodromy, SpectralPoint, C64};

const MAX_STEP: f64 = 0.01;
const MIN_STEP: f64 = 1e-14;

/// Fixed-angle continuation problem for one crystal.
#[derive(Debug, Clone, Copy)]
pub struct Continuation<'a> {
    pub spec: &'a CrystalSpec,
    pub theta: f64,
    pub pol: Polarization,
}

/// A point on a continuation path together with the tracked multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchState {
    pub k: C64,
    pub mu: C64,
    disc: C64,
}

/// All ingredients of `r_n` at one complex k.
#[derive(Debug, Clone, Copy)]
pub struct ContinuedPoint {
    pub k: C64,
    pub mu: C64,
    pub beta0: C64,
    pub coeffs: DefectCoeffs,
    pub chi: ChiMatrix,
    pub polys: RtPolynomials,
}

impl ContinuedPoint {
    pub fn x(&self, n: u32) -> C64 {
        self.mu.powu(2 * n)
    }

    pub fn r(&self, n: u32) -> C64 {
        let x = self.x(n);
        self.polys.eval_p(x) / self.polys.eval_q(x)
    }

    /// Zero equation, `p / (-chi21 chi11)`.
    pub fn f_zero(&self, n: u32) -> C64 {
        let x = self.x(n);
        let ChiMatrix { chi11, chi21, .. } = self.chi;
        let c = &self.coeffs;
        x * x * c.a0 + x * (chi21 / chi11 * c.c0 - chi11 / chi21 * c.b0) - c.d0
    }

    /// Pole equation, `q / (-chi11 chi22)`.
    pub fn f_pole(&self, n: u32) -> C64 {
        let x = self.x(n);
        let ChiMatrix {
            chi11,
            chi12,
            chi21,
            chi22,
        } = self.chi;
        let c = &self.coeffs;
        x * x * (chi21 * chi12 / (chi11 * chi22)) * c.a0
            + x * (chi21 / chi11 * c.c0 - chi12 / chi22 * c.b0)
            - c.d0
    }

    fn coeff_scale(&self) -> f64 {
        let c = &self.coeffs;
        [c.a0, c.b0, c.c0, c.d0]
            .iter()
            .map(|z| z.norm())
            .fold(1.0, f64::max)
    }
}

impl<'a> Continuation<'a> {
    pub fn new(spec: &'a CrystalSpec, theta: f64, pol: Polarization) -> Self {
        Self { spec, theta, pol }
    }

    fn point(&self, k: C64) -> SpectralPoint {
        SpectralPoint::fixed_theta(k, self.theta, self.pol)
    }

    /// Start at a real k inside a gap with the decaying multiplier.
    pub fn anchor(&self, k: f64) -> Result<BranchState> {
        let pt = self.point(C64::from(k));
        let t = cell_monodromy(self.spec, &pt)?;
        if classify(&t)?.kind != BandKind::Gap {
            return Err(Error::NotInGap {
                k,
                alpha: k * self.theta.sin(),
            });
        }
        let h = t.trace() / 2.0;
        Ok(BranchState {
            k: C64::from(k),
            mu: multipliers(&t).0,
            disc: h * h - 1.0,
        })
    }

    /// Move the state along the straight segment to `target`, halving the
    /// step whenever the discriminant `tr^2/4 - 1` turns by more than a
    /// quarter turn or the multiplier choice becomes ambiguous.
    pub fn advance(&self, s: &mut BranchState, target: C64) -> Result<()> {
        let mut h = MAX_STEP;
        while s.k != target {
            let rem = target - s.k;
            let cand = if rem.norm() <= h {
                target
            } else {
                s.k + rem * (h / rem.norm())
            };
            let t = cell_monodromy(self.spec, &self.point(cand))?;
            let half = t.trace() / 2.0;
            let disc = half * half - 1.0;
            let (m1, m2) = multipliers(&t);
            let mu = if (m1 - s.mu).norm() <= (m2 - s.mu).norm() {
                m1
            } else {
                m2
            };
            let turned = disc.norm() == 0.0 || (disc / s.disc).arg().abs() > PI / 2.0;
            let ambiguous = (mu - s.mu).norm() > 0.5 * (m1 - m2).norm();
            if turned || ambiguous {
                h *= 0.5;
                if h < MIN_STEP {
                    return Err(Error::BranchTrackingLost(cand));
                }
                continue;
            }
            *s = BranchState { k: cand, mu, disc };
            h = (2.0 * h).min(MAX_STEP);
        }
        Ok(())
    }

    pub fn evaluate(&self, s: &BranchState) -> Result<ContinuedPoint> {
        let pt = self.point(s.k);
        let t = cell_monodromy(self.spec, &pt)?;
        let t0 = defect_monodromy(self.spec, &pt)?;
        let basis = eigenbasis_for(&t, s.mu)?;
        let coeffs = defect_coeffs(&t0, &basis);
        let chi = chi_matrix(&basis, pt.beta0)?;
        Ok(ContinuedPoint {
            k: s.k,
            mu: s.mu,
            beta0: pt.beta0,
            coeffs,
            chi,
            polys: RtPolynomials::new(&coeffs, &chi),
        })
    }

    /// Advance a copy of `s` to `k` and evaluate there.
    pub fn evaluate_at(&self, s: &BranchState, k: C64) -> Result<ContinuedPoint> {
        let mut s = *s;
        self.advance(&mut s, k)?;
        self.evaluate(&s)
    }

    /// Continue from the real anchor `anchor` vertically to `Im k`, then
    /// horizontally to `k`.
    pub fn reach(&self, anchor: f64, k: C64) -> Result<BranchState> {
        let mut s = self.anchor(anchor)?;
        self.advance(&mut s, C64::new(anchor, k.im))?;
        self.advance(&mut s, k)?;
        Ok(s)
    }
}

/// Continued reflection coefficient at complex k, anchored at `Re k`, which
/// has to lie in a gap.
pub fn rn_complex(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    k: C64,
    pol: Polarization,
) -> Result<C64> {
    rn_complex_from(spec, theta0, n, k.re, k, pol)
}

/// As [`rn_complex`] with an explicit real gap anchor.
pub fn rn_complex_from(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    anchor: f64,
    k: C64,
    pol: Polarization,
) -> Result<C64> {
    let c = Continuation::new(spec, theta0, pol);
    let s = c.reach(anchor, k)?;
    Ok(c.evaluate(&s)?.r(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoleZeroPair {
    pub n: u32,
    pub k_zero: C64,
    pub k_pole: C64,
    /// `-Im k_pole`
    pub delta_n: f64,
    /// `Im k_zero / Im k_pole`
    pub gamma_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Central-difference step relative to `|k0|`.
    pub fd_rel_step: f64,
    pub f_tol: f64,
    pub step_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            fd_rel_step: 1e-7,
            f_tol: 1e-12,
            step_tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy)]
enum Target {
    Zero,
    Pole,
}

fn newton(
    c: &Continuation,
    n: u32,
    k0: f64,
    gap: &GapInterval,
    which: Target,
    opts: &NewtonOptions,
) -> Result<(C64, ContinuedPoint)> {
    let f = |p: &ContinuedPoint| match which {
        Target::Zero => p.f_zero(n),
        Target::Pole => p.f_pole(n),
    };
    let mut s = c.anchor(k0)?;
    let fp0 = c.evaluate(&s)?;
    let eps0 = fp0.mu.norm().powi(2 * n as i32);
    let mut k = C64::new(k0, -eps0);
    c.advance(&mut s, k)?;
    let h = opts.fd_rel_step * k0.abs();
    for _ in 0..opts.max_iter {
        let here = c.evaluate(&s)?;
        let fk = f(&here);
        let fplus = f(&c.evaluate_at(&s, k + h)?);
        let fminus = f(&c.evaluate_at(&s, k - h)?);
        let df = (fplus - fminus) / (2.0 * h);
        if df.norm() == 0.0 || !df.is_finite() {
            return Err(Error::SingularSystem);
        }
        let step = fk / df;
        if step.norm() < opts.step_tol && fk.norm() < opts.f_tol * here.coeff_scale() {
            return Ok((k, here));
        }
        k -= step;
        if (k - k0).norm() > gap.width() || !k.is_finite() {
            return Err(Error::EscapedNeighborhood((k - k0).norm()));
        }
        c.advance(&mut s, k)?;
    }
    Err(Error::NoConvergence(opts.max_iter))
}

/// Zero and pole of `r_n` spawned by the defect mode at real `k0`.
pub fn find_pair(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    k0: f64,
    pol: Polarization,
) -> Result<PoleZeroPair> {
    find_pair_with(spec, theta0, n, k0, pol, &NewtonOptions::default())
}

pub fn find_pair_with(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    k0: f64,
    pol: Polarization,
    opts: &NewtonOptions,
) -> Result<PoleZeroPair> {
    let gap = host_gap(spec, Incidence::FixedTheta(theta0), pol, k0)?;
    let c = Continuation::new(spec, theta0, pol);
    let (k_zero, at_zero) = newton(&c, n, k0, &gap, Target::Zero, opts)?;
    let (k_pole, at_pole) = newton(&c, n, k0, &gap, Target::Pole, opts)?;
    let pz = at_zero.polys.eval_p(at_zero.x(n)).norm();
    if pz > 1e-10 * at_zero.polys.p_scale() {
        return Err(Error::Numerical(format!(
            "|p| = {pz:e} at the zero {k_zero}"
        )));
    }
    let qp = at_pole.polys.eval_q(at_pole.x(n)).norm();
    if qp > 1e-10 * at_pole.polys.q_scale() {
        return Err(Error::Numerical(format!(
            "|q| = {qp:e} at the pole {k_pole}"
        )));
    }
    Ok(PoleZeroPair {
        n,
        k_zero,
        k_pole,
        delta_n: -k_pole.im,
        gamma_n: k_zero.im / k_pole.im,
    })
}

/// Limit of `Im k_zero / Im k_pole` as n grows, from the linear
/// coefficients of the zero and pole equations at a mode:
/// `Im(Bz) / Im(Bp)` with `Bz = (chi21/chi11) c0 - (chi11/chi21) b0` and
/// `Bp = (chi21/chi11) c0 - (chi12/chi22) b0`.
pub fn gamma_closed_form(coeffs: &DefectCoeffs, chi: &ChiMatrix) -> Result<f64> {
    if coeffs.d0.norm() > 1e-6 {
        return Err(Error::UndefinedAtNonMode(coeffs.d0.norm()));
    }
    let ChiMatrix {
        chi11,
        chi12,
        chi21,
        chi22,
    } = *chi;
    let bz = chi21 / chi11 * coeffs.c0 - chi11 / chi21 * coeffs.b0;
    let bp = chi21 / chi11 * coeffs.c0 - chi12 / chi22 * coeffs.b0;
    if bp.im == 0.0 {
        return Err(Error::SingularSystem);
    }
    Ok(bz.im / bp.im)
}

/// The complex ratio `(chi11^2 b0 / chi21 - chi21 c0) / (chi21 c0 - chi11 chi12 b0 / chi22)`.
/// It equals -1 when `b0 = 0` and does not in general reproduce the
/// tracked ratio; kept for comparison with [`gamma_closed_form`].
pub fn gamma_literal_form(coeffs: &DefectCoeffs, chi: &ChiMatrix) -> C64 {
    let ChiMatrix {
        chi11,
        chi12,
        chi21,
        chi22,
    } = *chi;
    (chi11 * chi11 / chi21 * coeffs.b0 - chi21 * coeffs.c0)
        / (chi21 * coeffs.c0 - chi11 * chi12 / chi22 * coeffs.b0)
}

/// `gamma_closed_form` at the real mode `k0` along incidence `theta0`.
pub fn gamma_at_mode(spec: &CrystalSpec, theta0: f64, k0: f64, pol: Polarization) -> Result<f64> {
    let fp = FloquetPoint::at(spec, SpectralPoint::new(k0, k0 * theta0.sin(), pol))?;
    let chi = chi_matrix(&fp.basis, fp.point.beta0)?;
    gamma_closed_form(&fp.coeffs, &chi)
}

/// Closed rectangle `[re_lo, re_hi] x [im_lo, im_hi]` in the k-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingRect {
    pub re_lo: f64,
    pub re_hi: f64,
    pub im_lo: f64,
    pub im_hi: f64,
}

impl TrackingRect {
    /// Half-width `min(gap/4, 0.9 * distance to the nearer gap edge)`
    /// around `k0`, from the real axis down to `Im k = -0.2`.
    pub fn around(k0: f64, gap: &GapInterval) -> Self {
        let edge = (k0 - gap.lo).min(gap.hi - k0);
        let hw = (0.25 * gap.width()).min(0.9 * edge);
        Self {
            re_lo: k0 - hw,
            re_hi: k0 + hw,
            im_lo: -0.2,
            im_hi: 0.0,
        }
    }

    pub fn contains(&self, k: C64) -> bool {
        k.re > self.re_lo && k.re < self.re_hi && k.im > self.im_lo && k.im < self.im_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Winding {
    pub p: i32,
    pub q: i32,
}

const SAMPLES_PER_EDGE: usize = 400;
const MAX_DEPTH: u32 = 60;

struct PhaseWalk<'c, 'a> {
    c: &'c Continuation<'a>,
    n: u32,
}

impl PhaseWalk<'_, '_> {
    fn values(&self, pt: &ContinuedPoint) -> [C64; 2] {
        let x = pt.x(self.n);
        [pt.polys.eval_p(x), pt.polys.eval_q(x)]
    }

    /// Phase increments of `p` and `q` from the current state to `b`,
    /// subdividing while either increment exceeds a quarter turn.
    fn segment(
        &self,
        s: &mut BranchState,
        fa: [C64; 2],
        b: C64,
        depth: u32,
    ) -> Result<([f64; 2], [C64; 2])> {
        let mut sb = *s;
        self.c.advance(&mut sb, b)?;
        let fb = self.values(&self.c.evaluate(&sb)?);
        let d = [(fb[0] / fa[0]).arg(), (fb[1] / fa[1]).arg()];
        if d.iter().all(|x| x.abs() <= PI / 2.0) {
            *s = sb;
            return Ok((d, fb));
        }
        if depth >= MAX_DEPTH {
            return Err(Error::Numerical(format!(
                "p or q vanishes on the contour near {b}"
            )));
        }
        let mid = 0.5 * (s.k + b);
        let (d1, fm) = self.segment(s, fa, mid, depth + 1)?;
        let (d2, fb) = self.segment(s, fm, b, depth + 1)?;
        Ok(([d1[0] + d2[0], d1[1] + d2[1]], fb))
    }
}

/// Winding numbers of `p(mu^2n)` and `q(mu^2n)` around the rectangle,
/// traversed counterclockwise starting from its upper-left corner, which
/// must be a real gap point.
pub fn winding_numbers(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    pol: Polarization,
    rect: &TrackingRect,
) -> Result<Winding> {
    let c = Continuation::new(spec, theta0, pol);
    let walk = PhaseWalk { c: &c, n };
    let corners = [
        C64::new(rect.re_lo, rect.im_hi),
        C64::new(rect.re_lo, rect.im_lo),
        C64::new(rect.re_hi, rect.im_lo),
        C64::new(rect.re_hi, rect.im_hi),
        C64::new(rect.re_lo, rect.im_hi),
    ];
    let start = c.reach(rect.re_lo, corners[0])?;
    let mut s = start;
    let mut f = walk.values(&c.evaluate(&s)?);
    let mut total = [0.0; 2];
    for edge in corners.windows(2) {
        for j in 1..=SAMPLES_PER_EDGE {
            let b = edge[0] + (edge[1] - edge[0]) * (j as f64 / SAMPLES_PER_EDGE as f64);
            let (d, fb) = walk.segment(&mut s, f, b, 0)?;
            total[0] += d[0];
            total[1] += d[1];
            f = fb;
        }
    }
    if (s.mu - start.mu).norm() > 1e-8 * start.mu.norm().max(1e-300) {
        return Err(Error::BranchTrackingLost(s.k));
    }
    let wind = |phase: f64| {
        let w = phase / (2.0 * PI);
        if (w - w.round()).abs() > 0.1 {
            Err(Error::Numerical(format!("non-integer winding {w}")))
        } else {
            Ok(w.round() as i32)
        }
    };
    Ok(Winding {
        p: wind(total[0])?,
        q: wind(total[1])?,
    })
}

/// One row of the pole/zero tracking table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackRow {
    pub pair: PoleZeroPair,
    pub gamma_closed_form: f64,
    pub winding: Winding,
}

/// Pairs, closed-form gamma and winding certificates for each n, in the
/// order given.
pub fn track_pairs(
    spec: &CrystalSpec,
    theta0: f64,
    k0: f64,
    ns: &[u32],
    pol: Polarization,
) -> Result<Vec<TrackRow>> {
    let gap = host_gap(spec, Incidence::FixedTheta(theta0), pol, k0)?;
    let rect = TrackingRect::around(k0, &gap);
    let gamma = gamma_at_mode(spec, theta0, k0, pol)?;
    ns.par_iter()
        .map(|&n| {
            let pair = find_pair(spec, theta0, n, k0, pol)?;
            let winding = winding_numbers(spec, theta0, n, pol, &rect)?;
            Ok(TrackRow {
                pair,
                gamma_closed_form: gamma,
                winding,
            })
        })
        .collect()
}

/// Samples `r_n` at `samples` real points of `[center - window, center + window]`.
pub fn sample_rn(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    center: f64,
    window: f64,
    samples: usize,
    pol: Polarization,
) -> Result<Vec<C64>> {
    crate::bands::linspace(center - window, center + window, samples)
        .par_iter()
        .map(|&k| {
            let fp = FloquetPoint::at(spec, SpectralPoint::new(k, k * theta0.sin(), pol))?;
            let chi = chi_matrix(&fp.basis, fp.point.beta0)?;
            Ok(rt_analytic(&fp.coeffs, &chi, fp.mu(), n, fp.point.beta0)?.r)
        })
        .collect()
}

pub const CIRCLE_SAMPLES: usize = 401;

/// Least-squares circle through `r_n(k)` for real k within `window` of
/// `k0`.
pub fn circle_fit(
    spec: &CrystalSpec,
    theta0: f64,
    n: u32,
    k0: f64,
    pol: Polarization,
    window: f64,
) -> Result<CircleFit> {
    let pts = sample_rn(spec, theta0, n, k0, window, CIRCLE_SAMPLES, pol)?;
    let fit = fit_circle(&pts).ok_or(Error::PoorFit {
        rms: f64::INFINITY,
        diameter: 0.0,
    })?;
    if !(fit.rms_residual < 1e-3 * fit.diameter) || !fit.diameter.is_finite() {
        return Err(Error::PoorFit {
            rms: fit.rms_residual,
            diameter: fit.diameter,
        });
    }
    Ok(fit)
}
