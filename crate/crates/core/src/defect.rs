//! Defect matrix in the Floquet basis and the defect-mode condition `d0 = 0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bands::{
    bisect, classify, eigenbasis, find_gaps, linspace, BandClass, BandKind, EigenBasis,
};
use crate::error::{Error, Result};
use crate::medium::{CrystalSpec, Incidence, Polarization};
use crate::transfer::{cell_monodromy, defect_monodromy, Mat2, SpectralPoint, C64};

/// `T0 v = a0 v + b0 w`, `T0 w = c0 v + d0 w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectCoeffs {
    pub a0: C64,
    pub b0: C64,
    pub c0: C64,
    pub d0: C64,
}

impl DefectCoeffs {
    pub fn det(&self) -> C64 {
        self.a0 * self.d0 - self.c0 * self.b0
    }

    /// Maps the coefficients back to the canonical basis.
    pub fn reconstruct(&self, basis: &EigenBasis) -> Mat2 {
        let p = Mat2::new(basis.v[0], basis.w[0], basis.v[1], basis.w[1]);
        let c = Mat2::new(self.a0, self.c0, self.b0, self.d0);
        p * c * p.adjugate()
    }
}

/// Change of basis `P^-1 T0 P` with `P = (v | w)`; `P^-1` is the adjugate
/// because `det P = 1`.
pub fn defect_coeffs(t0: &Mat2, basis: &EigenBasis) -> DefectCoeffs {
    let p = Mat2::new(basis.v[0], basis.w[0], basis.v[1], basis.w[1]);
    let c = p.adjugate() * *t0 * p;
    DefectCoeffs {
        a0: c.m[0][0],
        c0: c.m[0][1],
        b0: c.m[1][0],
        d0: c.m[1][1],
    }
}

/// Everything derived from one spectral point: both monodromy matrices,
/// the classification, the Floquet basis and the defect coefficients.
#[derive(Debug, Clone, Copy)]
pub struct FloquetPoint {
    pub point: SpectralPoint,
    pub t: Mat2,
    pub t0: Mat2,
    pub class: BandClass,
    pub basis: EigenBasis,
    pub coeffs: DefectCoeffs,
}

impl FloquetPoint {
    /// Real spectral point; fails at band edges.
    pub fn at(spec: &CrystalSpec, point: SpectralPoint) -> Result<Self> {
        let t = cell_monodromy(spec, &point)?;
        let t0 = defect_monodromy(spec, &point)?;
        let class = classify(&t)?;
        let basis = eigenbasis(&t, &class)?;
        let coeffs = defect_coeffs(&t0, &basis);
        Ok(Self {
            point,
            t,
            t0,
            class,
            basis,
            coeffs,
        })
    }

    pub fn mu(&self) -> C64 {
        self.basis.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispersion {
    pub d0: C64,
    /// `det(T0 w, v)`, which equals `-d0`.
    pub det_t0w_v: C64,
}

/// `d0(k, alpha)`; zero exactly at defect modes.
pub fn dispersion(spec: &CrystalSpec, k: f64, alpha: f64, pol: Polarization) -> Result<Dispersion> {
    let fp = FloquetPoint::at(spec, SpectralPoint::new(k, alpha, pol)).map_err(|e| match e {
        Error::DegenerateEigenvalues(_) => Error::NotInGap { k, alpha },
        other => other,
    })?;
    if fp.class.kind != BandKind::Gap {
        return Err(Error::NotInGap { k, alpha });
    }
    let t0w = fp.t0.apply(fp.basis.w);
    let v = fp.basis.v;
    let det_t0w_v = t0w[0] * v[1] - t0w[1] * v[0];
    let d0 = fp.coeffs.d0;
    if (det_t0w_v + d0).norm() > 1e-10 * d0.norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "det(T0 w, v) = {det_t0w_v} does not match -d0 = {}",
            -d0
        )));
    }
    Ok(Dispersion { d0, det_t0w_v })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefectMode {
    pub k0: f64,
    pub alpha0: f64,
    /// Incidence angle, defined when `|alpha0| < k0`.
    pub theta0: Option<f64>,
    pub gap_index: usize,
    /// `|d0(k0, alpha0)|`
    pub residual: f64,
}

impl DefectMode {
    pub fn scatterable(&self) -> bool {
        self.theta0.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeScan {
    pub gaps: Vec<crate::bands::GapInterval>,
    pub modes: Vec<DefectMode>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSearch {
    /// Samples for the gap-edge scan over the window.
    pub gap_samples: usize,
    /// Samples of `d0` per gap.
    pub scan_points: usize,
    /// Bisection phase ends at this bracket width.
    pub bisect_tol: f64,
    /// Secant phase ends when the step falls below this.
    pub secant_tol: f64,
}

impl Default for ModeSearch {
    fn default() -> Self {
        Self {
            gap_samples: 2000,
            scan_points: 2000,
            bisect_tol: 1e-6,
            secant_tol: 1e-11,
        }
    }
}

/// Real part of `d0` along the incidence line; `d0` is real for real gap
/// points.
fn d0_along(spec: &CrystalSpec, incidence: Incidence, pol: Polarization, k: f64) -> Result<f64> {
    Ok(dispersion(spec, k, incidence.alpha_at(k), pol)?.d0.re)
}

/// Bisection to `bisect_tol`, then secant kept inside the bracket.
fn refine_root(
    f: &impl Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    opts: &ModeSearch,
) -> Result<f64> {
    let mid = bisect(lo, hi, opts.bisect_tol, f)?;
    let half = 0.5 * opts.bisect_tol;
    let (mut a, mut b) = ((mid - half).max(lo), (mid + half).min(hi));
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 || (fa > 0.0) == (fb > 0.0) {
        return Ok(mid);
    }
    let (mut x0, mut x1) = (a, b);
    let (mut f0, mut f1) = (fa, fb);
    for _ in 0..60 {
        let mut x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        if !(x2 > a && x2 < b) {
            x2 = 0.5 * (a + b);
        }
        let f2 = f(x2)?;
        if f2 == 0.0 {
            return Ok(x2);
        }
        if (f2 > 0.0) == (fa > 0.0) {
            a = x2;
            fa = f2;
        } else {
            b = x2;
            fb = f2;
        }
        let step = (x2 - x1).abs();
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f2;
        if step < opts.secant_tol {
            break;
        }
    }
    // best of the final bracket
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// Defect modes along an incidence line inside `[k_lo, k_hi]`, sorted by k.
pub fn find_defect_modes(
    spec: &CrystalSpec,
    incidence: Incidence,
    k_lo: f64,
    k_hi: f64,
    pol: Polarization,
    opts: &ModeSearch,
) -> Result<ModeScan> {
    let gaps = find_gaps(spec, incidence, pol, k_lo, k_hi, opts.gap_samples)?;
    let f = |k: f64| d0_along(spec, incidence, pol, k);
    let mut modes = Vec::new();
    let mut warnings = Vec::new();
    for (gap_index, gap) in gaps.iter().enumerate() {
        let margin = 1e-9 * gap.width().max(1e-3);
        let ks = linspace(gap.lo + margin, gap.hi - margin, opts.scan_points.max(3));
        let vals: Vec<f64> = ks.par_iter().map(|&k| f(k)).collect::<Result<_>>()?;
        for i in 0..ks.len() - 1 {
            let (a, b) = (vals[i], vals[i + 1]);
            if a == 0.0 || (a > 0.0) != (b > 0.0) {
                let k0 = if a == 0.0 {
                    ks[i]
                } else {
                    refine_root(&f, ks[i], ks[i + 1], opts)?
                };
                let alpha0 = incidence.alpha_at(k0);
                let residual = dispersion(spec, k0, alpha0, pol)?.d0.norm();
                let theta0 = (alpha0.abs() < k0).then(|| (alpha0 / k0).asin());
                modes.push(DefectMode {
                    k0,
                    alpha0,
                    theta0,
                    gap_index,
                    residual,
                });
            }
        }
        // touching without crossing: a local minimum of |d0| near zero
        for i in 1..ks.len() - 1 {
            let (l, c, r) = (vals[i - 1], vals[i], vals[i + 1]);
            let same_sign = (l > 0.0) == (c > 0.0) && (c > 0.0) == (r > 0.0);
            if same_sign && c.abs() < l.abs() && c.abs() < r.abs() {
                let kmin = golden_min(&|k| Ok(f(k)?.abs()), ks[i - 1], ks[i + 1], 1e-12)?;
                let dmin = f(kmin)?.abs();
                if dmin < 1e-9 {
                    warnings.push(format!(
                        "gap {gap_index}: |d0| touches {dmin:e} at k = {kmin} without a sign change (even-order root)"
                    ));
                }
            }
        }
    }
    modes.sort_by(|a, b| a.k0.total_cmp(&b.k0));
    Ok(ModeScan {
        gaps,
        modes,
        warnings,
    })
}

fn golden_min(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{crystal, golden_crystal};
    use proptest::prelude::*;

    const E: Polarization = Polarization::EPar;

    #[test]
    fn identity_defect() {
        let t = Mat2::real(2.5, 0.3, -0.2, 0.376);
        let b = eigenbasis(&t, &classify(&t).unwrap()).unwrap();
        let c = defect_coeffs(&Mat2::IDENTITY, &b);
        assert!((c.a0 - 1.0).norm() < 1e-14 && c.b0.norm() < 1e-14);
        assert!(c.c0.norm() < 1e-14 && (c.d0 - 1.0).norm() < 1e-14);
    }

    #[test]
    fn period_defect_is_diagonal() {
        let spec = golden_crystal().with_period_defect();
        let fp = FloquetPoint::at(&spec, SpectralPoint::new(2.0, 0.0, E)).unwrap();
        let c = fp.coeffs;
        let mu = fp.mu();
        assert!((c.a0 - mu).norm() < 1e-13 && (c.d0 - mu.inv()).norm() < 1e-13);
        assert!(c.b0.norm() < 1e-13 && c.c0.norm() < 1e-13);
        let d = dispersion(&spec, 2.0, 0.0, E).unwrap();
        assert!(d.d0.norm() > 1.0);
    }

    #[test]
    fn golden_coeffs_by_hand() {
        let spec = golden_crystal();
        let fp = FloquetPoint::at(&spec, SpectralPoint::new(2.0, 0.0, E)).unwrap();
        let (v, w) = (fp.basis.v, fp.basis.w);
        let t0 = fp.t0.m;
        // independent arithmetic: T0 v and T0 w expanded with Cramer's rule
        let solve = |x: [C64; 2]| {
            let det = v[0] * w[1] - v[1] * w[0];
            (
                (x[0] * w[1] - x[1] * w[0]) / det,
                (v[0] * x[1] - v[1] * x[0]) / det,
            )
        };
        let t0v = [
            t0[0][0] * v[0] + t0[0][1] * v[1],
            t0[1][0] * v[0] + t0[1][1] * v[1],
        ];
        let t0w = [
            t0[0][0] * w[0] + t0[0][1] * w[1],
            t0[1][0] * w[0] + t0[1][1] * w[1],
        ];
        let (a0, b0) = solve(t0v);
        let (c0, d0) = solve(t0w);
        let c = fp.coeffs;
        for (x, y) in [(a0, c.a0), (b0, c.b0), (c0, c.c0), (d0, c.d0)] {
            assert!((x - y).norm() < 1e-13);
        }
        assert!((c.det() - 1.0).norm() < 1e-12);
        assert!(c.reconstruct(&fp.basis).max_abs_diff(&fp.t0) < 1e-12);
    }

    #[test]
    fn band_point_is_rejected() {
        assert!(matches!(
            dispersion(&golden_crystal(), 1.0, 0.0, E),
            Err(Error::NotInGap { .. })
        ));
    }

    #[test]
    fn golden_mode_matches_dense_scan() {
        let spec = golden_crystal();
        let inc = Incidence::FixedTheta(0.0);
        let scan = find_defect_modes(
            &spec,
            inc,
            0.05,
            std::f64::consts::PI,
            E,
            &ModeSearch::default(),
        )
        .unwrap();
        assert_eq!(scan.gaps.len(), 1);
        let gap = scan.gaps[0];
        // dense scan oracle, 1e4 points over the gap
        let ks = linspace(gap.lo + 1e-9, gap.hi - 1e-9, 10_000);
        let vals: Vec<f64> = ks
            .iter()
            .map(|&k| dispersion(&spec, k, 0.0, E).unwrap().d0.re)
            .collect();
        let changes: Vec<f64> = ks
            .windows(2)
            .zip(vals.windows(2))
            .filter(|(_, v)| (v[0] > 0.0) != (v[1] > 0.0))
            .map(|(k, _)| k[0])
            .collect();
        assert_eq!(changes.len(), scan.modes.len());
        assert_eq!(changes.len(), 1);
        let m = scan.modes[0];
        assert!((m.k0 - changes[0]).abs() < (gap.width() / 9_999.0) * 1.01);
        assert!(m.residual < 1e-9);
        assert!((m.k0 - 1.841_797_668_228_9).abs() < 1e-11);
        assert_eq!(m.theta0, Some(0.0));
        assert!(scan.warnings.is_empty());
    }

    #[test]
    fn vacuum_has_no_modes() {
        let spec = crystal(&[(1.0, 1.0)], 0.8, &[(0.8, 2.25)]).unwrap();
        let scan = find_defect_modes(
            &spec,
            Incidence::FixedTheta(0.0),
            0.05,
            6.0,
            E,
            &ModeSearch::default(),
        )
        .unwrap();
        assert!(scan.gaps.is_empty() && scan.modes.is_empty());
    }

    #[test]
    fn period_copy_has_no_modes() {
        let spec = golden_crystal().with_period_defect();
        let scan = find_defect_modes(
            &spec,
            Incidence::FixedTheta(0.0),
            0.05,
            6.0,
            E,
            &ModeSearch::default(),
        )
        .unwrap();
        assert!(scan.gaps.len() >= 2);
        assert!(scan.modes.is_empty());
    }

    #[test]
    fn oblique_h_modes_have_small_residual() {
        let spec = golden_crystal();
        let scan = find_defect_modes(
            &spec,
            Incidence::FixedTheta(0.4),
            0.05,
            6.0,
            Polarization::HPar,
            &ModeSearch::default(),
        )
        .unwrap();
        for m in &scan.modes {
            assert!(m.residual < 1e-9);
            assert!((m.theta0.unwrap() - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_alpha_mode_beyond_light_line_not_scatterable() {
        let spec = golden_crystal();
        // alpha above k inside the first gap of this line
        let scan = find_defect_modes(
            &spec,
            Incidence::FixedAlpha(3.0),
            1.0,
            2.99,
            E,
            &ModeSearch::default(),
        )
        .unwrap();
        for m in &scan.modes {
            assert!(!m.scatterable());
        }
    }

    proptest! {
        #[test]
        fn gauge_behaviour(k in 1.75f64..2.4, re in -2.0f64..2.0, im in -2.0f64..2.0) {
            prop_assume!(re.abs() + im.abs() > 0.1);
            let spec = golden_crystal();
            let fp = FloquetPoint::at(&spec, SpectralPoint::new(k, 0.0, E)).unwrap();
            let s = C64::new(re, im);
            let c1 = fp.coeffs;
            let c2 = defect_coeffs(&fp.t0, &fp.basis.rescaled(s));
            prop_assert!((c1.a0 - c2.a0).norm() < 1e-12 && (c1.d0 - c2.d0).norm() < 1e-12);
            prop_assert!((c1.b0 * s * s - c2.b0).norm() < 1e-11 * (1.0 + s.norm_sqr()));
            prop_assert!((c1.c0 / (s * s) - c2.c0).norm() < 1e-11 * (1.0 + s.norm_sqr().recip()));
            prop_assert!((c1.b0 * c1.c0 - c2.b0 * c2.c0).norm() < 1e-11);
        }

        #[test]
        fn det_identity(k in 1.7f64..2.45) {
            let d = dispersion(&golden_crystal(), k, 0.0, E);
            if let Ok(d) = d {
                prop_assert!((d.det_t0w_v + d.d0).norm() < 1e-10);
                prop_assert!(d.d0.im.abs() < 1e-12);
            }
        }
    }
}
