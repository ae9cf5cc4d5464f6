//! Gap/band classification from the trace of the monodromy matrix, and the
//! unimodular Floquet eigenbasis.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::medium::{CrystalSpec, Incidence, Polarization};
use crate::transfer::{cell_monodromy, Mat2, SpectralPoint, C64};

pub const EDGE_TOL: f64 = 1e-9;
const NON_REAL_TRACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BandKind {
    Gap,
    Band,
    Edge,
}

impl BandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BandKind::Gap => "gap",
            BandKind::Band => "band",
            BandKind::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandClass {
    pub kind: BandKind,
    /// `|tr T| - 2`
    pub discriminant: f64,
}

pub fn classify(t: &Mat2) -> Result<BandClass> {
    classify_with_tol(t, EDGE_TOL)
}

pub fn classify_with_tol(t: &Mat2, tol: f64) -> Result<BandClass> {
    let tr = t.trace();
    if tr.im.abs() > NON_REAL_TRACE_TOL {
        return Err(Error::NonRealTrace(tr.im));
    }
    let discriminant = tr.re.abs() - 2.0;
    let kind = if discriminant > tol {
        BandKind::Gap
    } else if discriminant < -tol {
        BandKind::Band
    } else {
        BandKind::Edge
    };
    Ok(BandClass { kind, discriminant })
}

/// Eigenpairs `(v, mu)`, `(w, 1/mu)` of a unimodular matrix with
/// `det(v, w) = v1 w2 - v2 w1 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBasis {
    pub v: [C64; 2],
    pub w: [C64; 2],
    pub mu: C64,
}

impl EigenBasis {
    pub fn det(&self) -> C64 {
        self.v[0] * self.w[1] - self.v[1] * self.w[0]
    }

    /// `(s v, w / s)`; every invariant is preserved.
    pub fn rescaled(&self, s: C64) -> Self {
        Self {
            v: [self.v[0] * s, self.v[1] * s],
            w: [self.w[0] / s, self.w[1] / s],
            mu: self.mu,
        }
    }

    /// `max(|T v - mu v|, |T w - w/mu|)`.
    pub fn residual(&self, t: &Mat2) -> f64 {
        let tv = t.apply(self.v);
        let tw = t.apply(self.w);
        let inv = self.mu.inv();
        let rv = (tv[0] - self.mu * self.v[0])
            .norm()
            .max((tv[1] - self.mu * self.v[1]).norm());
        let rw = (tw[0] - inv * self.w[0])
            .norm()
            .max((tw[1] - inv * self.w[1]).norm());
        rv.max(rw)
    }
}

/// Null vector of `T - lambda I` from the row with the larger pivot.
fn null_vector(t: &Mat2, lambda: C64) -> [C64; 2] {
    let a = [
        [t.m[0][0] - lambda, t.m[0][1]],
        [t.m[1][0], t.m[1][1] - lambda],
    ];
    let n0 = a[0][0].norm().max(a[0][1].norm());
    let n1 = a[1][0].norm().max(a[1][1].norm());
    let row = if n0 >= n1 { a[0] } else { a[1] };
    if row[0].norm() == 0.0 && row[1].norm() == 0.0 {
        // T = lambda I; any vector works
        return [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    }
    [-row[1], row[0]]
}

/// Scale to unit 2-norm with the largest-modulus component real positive.
fn normalize(x: [C64; 2]) -> [C64; 2] {
    let pivot = if x[0].norm() >= x[1].norm() {
        x[0]
    } else {
        x[1]
    };
    let norm = (x[0].norm_sqr() + x[1].norm_sqr()).sqrt();
    let s = pivot.conj() / (pivot.norm() * norm);
    [x[0] * s, x[1] * s]
}

/// The two roots of `mu^2 - tr mu + 1 = 0`, smaller modulus first. The
/// larger root is formed without cancellation and the smaller one as its
/// reciprocal.
pub fn multipliers(t: &Mat2) -> (C64, C64) {
    let h = t.trace() / 2.0;
    let s = (h * h - 1.0).sqrt();
    let big = if (h + s).norm() >= (h - s).norm() {
        h + s
    } else {
        h - s
    };
    (big.inv(), big)
}

/// Eigenbasis for a prescribed multiplier `mu` (the partner is `1/mu`).
pub fn eigenbasis_for(t: &Mat2, mu: C64) -> Result<EigenBasis> {
    let v = normalize(null_vector(t, mu));
    let w = normalize(null_vector(t, mu.inv()));
    let det = v[0] * w[1] - v[1] * w[0];
    if det.norm() < 1e-14 {
        return Err(Error::DegenerateEigenvalues((t.trace().norm() - 2.0).abs()));
    }
    Ok(EigenBasis {
        v,
        w: [w[0] / det, w[1] / det],
        mu,
    })
}

/// Floquet eigenbasis. In a gap `|mu| < 1`; in a band `|mu| = 1` with
/// `Im mu >= 0`.
pub fn eigenbasis(t: &Mat2, class: &BandClass) -> Result<EigenBasis> {
    let mu = match class.kind {
        BandKind::Edge => return Err(Error::DegenerateEigenvalues(class.discriminant)),
        BandKind::Gap => multipliers(t).0,
        BandKind::Band => {
            let h = t.trace().re / 2.0;
            let im = (1.0 - h * h).max(0.0).sqrt();
            C64::new(h, im)
        }
    };
    eigenbasis_for(t, mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub k: f64,
    pub alpha: f64,
    pub trace: f64,
    pub class: BandKind,
}

/// Transverse parameter of a band map: explicit alpha values or a fixed angle.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaAxis {
    Values(Vec<f64>),
    Theta(f64),
}

/// Uniform grid of `points` values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Classify every grid point. Rows are ordered alpha-major, then k.
pub fn band_map(
    spec: &CrystalSpec,
    ks: &[f64],
    alphas: &AlphaAxis,
    pol: Polarization,
    tol: f64,
) -> Result<Vec<BandPoint>> {
    let grid: Vec<(f64, f64)> = match alphas {
        AlphaAxis::Values(values) => values
            .iter()
            .flat_map(|&a| ks.iter().map(move |&k| (k, a)))
            .collect(),
        AlphaAxis::Theta(theta) => ks.iter().map(|&k| (k, k * theta.sin())).collect(),
    };
    grid.par_iter()
        .map(|&(k, alpha)| {
            let t = cell_monodromy(spec, &SpectralPoint::new(k, alpha, pol))?;
            let class = classify_with_tol(&t, tol)?;
            Ok(BandPoint {
                k,
                alpha,
                trace: t.trace().re,
                class: class.kind,
            })
        })
        .collect()
}

/// `|tr T| - 2` at real k under the given incidence.
pub fn trace_discriminant(
    spec: &CrystalSpec,
    k: f64,
    incidence: Incidence,
    pol: Polarization,
) -> Result<f64> {
    let t = cell_monodromy(spec, &SpectralPoint::new(k, incidence.alpha_at(k), pol))?;
    Ok(t.trace().re.abs() - 2.0)
}

/// Open k-interval where the base crystal is evanescent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapInterval {
    pub lo: f64,
    pub hi: f64,
}

impl GapInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, k: f64) -> bool {
        k > self.lo && k < self.hi
    }
}

/// Bisection on a sign change of `f` in `[a, b]` down to `tol` in k.
pub fn bisect(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut fa = f(a)?;
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m)?;
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Gaps of the base crystal inside `[k_lo, k_hi]`, found by scanning
/// `|tr T| - 2` on `samples` points and refining each edge by bisection to
/// 1e-12. Gaps cut by the window boundary are clipped to it.
pub fn find_gaps(
    spec: &CrystalSpec,
    incidence: Incidence,
    pol: Polarization,
    k_lo: f64,
    k_hi: f64,
    samples: usize,
) -> Result<Vec<GapInterval>> {
    let ks = linspace(k_lo, k_hi, samples.max(2));
    let f = |k: f64| trace_discriminant(spec, k, incidence, pol);
    let vals: Vec<f64> = ks.par_iter().map(|&k| f(k)).collect::<Result<_>>()?;
    let mut gaps = Vec::new();
    let mut open: Option<f64> = if vals[0] > 0.0 { Some(ks[0]) } else { None };
    for i in 1..ks.len() {
        let (prev, cur) = (vals[i - 1] > 0.0, vals[i] > 0.0);
        if prev == cur {
            continue;
        }
        let edge = bisect(ks[i - 1], ks[i], 1e-12, f)?;
        if cur {
            open = Some(edge);
        } else if let Some(lo) = open.take() {
            gaps.push(GapInterval { lo, hi: edge });
        }
    }
    if let Some(lo) = open {
        gaps.push(GapInterval {
            lo,
            hi: ks[ks.len() - 1],
        });
    }
    Ok(gaps)
}

/// The gap of the base crystal containing `k`, searched in `[k - 4, k + 4]`.
pub fn host_gap(
    spec: &CrystalSpec,
    incidence: Incidence,
    pol: Polarization,
    k: f64,
) -> Result<GapInterval> {
    let lo = (k - 4.0).max(1e-6);
    let gaps = find_gaps(spec, incidence, pol, lo, k + 4.0, 4000)?;
    gaps.into_iter()
        .find(|g| g.contains(k))
        .ok_or(Error::NotInGap {
            k,
            alpha: incidence.alpha_at(k),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{crystal, golden_crystal};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn vacuum() -> CrystalSpec {
        crystal(&[(1.0, 1.0)], 0.8, &[(0.8, 2.25)]).unwrap()
    }

    #[test]
    fn vacuum_classification() {
        let spec = vacuum();
        for &k in &[0.3, 1.0, 2.0, 3.0] {
            let t = cell_monodromy(&spec, &SpectralPoint::new(k, 0.0, Polarization::EPar)).unwrap();
            assert_eq!(classify(&t).unwrap().kind, BandKind::Band);
        }
        let t = cell_monodromy(&spec, &SpectralPoint::new(PI, 0.0, Polarization::EPar)).unwrap();
        assert_eq!(classify(&t).unwrap().kind, BandKind::Edge);
    }

    #[test]
    fn diagonal_gap() {
        let t = Mat2::real(3.0, 0.0, 0.0, 1.0 / 3.0);
        assert_eq!(classify(&t).unwrap().kind, BandKind::Gap);
        let bad = Mat2::new(C64::new(1.0, 1e-3), 0.0.into(), 0.0.into(), 1.0.into());
        assert!(matches!(classify(&bad), Err(Error::NonRealTrace(_))));
    }

    #[test]
    fn diagonal_eigenbasis() {
        let t = Mat2::real(2.5, 0.0, 0.0, 0.4);
        let b = eigenbasis(&t, &classify(&t).unwrap()).unwrap();
        assert!((b.mu - 0.4).norm() < 1e-15);
        assert!((b.det() - 1.0).norm() < 1e-15);
        assert!(b.v[0].norm() < 1e-15 && b.w[1].norm() < 1e-15);
        assert!(b.residual(&t) < 1e-15);
    }

    #[test]
    fn vacuum_band_eigenbasis() {
        let spec = vacuum();
        let t = cell_monodromy(
            &spec,
            &SpectralPoint::new(PI / 2.0, 0.0, Polarization::EPar),
        )
        .unwrap();
        let b = eigenbasis(&t, &classify(&t).unwrap()).unwrap();
        assert!((b.mu.norm() - 1.0).abs() < 1e-12);
        assert!(b.mu.im >= 0.0);
        assert!((b.mu - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((b.det() - 1.0).norm() < 1e-12);
        assert!(b.residual(&t) < 1e-12);
    }

    #[test]
    fn edge_has_no_basis() {
        let t = Mat2::real(1.0, 1.0, 0.0, 1.0);
        let c = classify(&t).unwrap();
        assert_eq!(c.kind, BandKind::Edge);
        assert!(matches!(
            eigenbasis(&t, &c),
            Err(Error::DegenerateEigenvalues(_))
        ));
    }

    #[test]
    fn golden_gaps_match_dense_scan() {
        let spec = golden_crystal();
        let inc = Incidence::FixedAlpha(0.0);
        let gaps = find_gaps(&spec, inc, Polarization::EPar, 0.01, 2.0 * PI, 400).unwrap();
        // dense scan oracle
        let ks = linspace(0.01, 2.0 * PI, 20001);
        let mut crossings = Vec::new();
        let mut prev = trace_discriminant(&spec, ks[0], inc, Polarization::EPar).unwrap() > 0.0;
        for w in ks.windows(2) {
            let cur = trace_discriminant(&spec, w[1], inc, Polarization::EPar).unwrap() > 0.0;
            if cur != prev {
                crossings.push(0.5 * (w[0] + w[1]));
            }
            prev = cur;
        }
        assert_eq!(crossings.len(), 2 * gaps.len());
        for (g, pair) in gaps.iter().zip(crossings.chunks(2)) {
            assert!((g.lo - pair[0]).abs() < 2e-3 && (g.hi - pair[1]).abs() < 2e-3);
            for edge in [g.lo, g.hi] {
                let t = cell_monodromy(&spec, &SpectralPoint::new(edge, 0.0, Polarization::EPar))
                    .unwrap();
                assert!((t.trace().re.abs() - 2.0).abs() < 1e-9);
            }
        }
        assert!(gaps[0].lo < PI && gaps[0].hi > 1.6);
        assert!((gaps[0].lo - 1.682_137_341_1).abs() < 1e-9);
        assert!((gaps[0].hi - 2.461_918_834_7).abs() < 1e-9);
    }

    #[test]
    fn gap_center_eigenbasis() {
        let spec = golden_crystal();
        let t = cell_monodromy(&spec, &SpectralPoint::new(2.07, 0.0, Polarization::EPar)).unwrap();
        let c = classify(&t).unwrap();
        assert_eq!(c.kind, BandKind::Gap);
        let b = eigenbasis(&t, &c).unwrap();
        // characteristic polynomial roots by substitution
        let tr = t.trace();
        assert!((b.mu * b.mu - tr * b.mu + 1.0).norm() < 1e-14);
        assert!(b.mu.norm() < 1.0 && b.mu.im.abs() < 1e-15);
        assert!(b.residual(&t) < 1e-12);
        assert!((b.det() - 1.0).norm() < 1e-12);
    }

    #[test]
    fn vacuum_map_has_no_gap() {
        let map = band_map(
            &vacuum(),
            &linspace(0.01, 3.0, 300),
            &AlphaAxis::Values(vec![0.0]),
            Polarization::EPar,
            EDGE_TOL,
        )
        .unwrap();
        assert!(map.iter().all(|p| p.class != BandKind::Gap));
    }

    #[test]
    fn bragg_map_has_gap_below_pi() {
        let ks = linspace(0.01, PI, 300);
        let map = band_map(
            &golden_crystal(),
            &ks,
            &AlphaAxis::Values(vec![0.0]),
            Polarization::EPar,
            EDGE_TOL,
        )
        .unwrap();
        assert!(map.iter().any(|p| p.class == BandKind::Gap));
    }

    #[test]
    fn map_ignores_defect() {
        let a = golden_crystal();
        let b = a.with_period_defect();
        let ks = linspace(0.1, 5.0, 50);
        let axis = AlphaAxis::Values(vec![-1.0, 0.0, 0.5]);
        assert_eq!(
            band_map(&a, &ks, &axis, Polarization::HPar, EDGE_TOL).unwrap(),
            band_map(&b, &ks, &axis, Polarization::HPar, EDGE_TOL).unwrap()
        );
    }

    proptest! {
        #[test]
        fn basis_invariants(k in 0.05f64..6.0, a in -1.0f64..1.0, h in any::<bool>()) {
            let pol = if h { Polarization::HPar } else { Polarization::EPar };
            let t = cell_monodromy(&golden_crystal(), &SpectralPoint::new(k, a, pol)).unwrap();
            let c = classify(&t).unwrap();
            prop_assume!(c.discriminant.abs() > 1e-3);
            let b = eigenbasis(&t, &c).unwrap();
            prop_assert!((b.det() - 1.0).norm() < 1e-12);
            prop_assert!(b.residual(&t) < 1e-10 * t.norm().max(1.0));
            match c.kind {
                BandKind::Gap => {
                    prop_assert!(b.mu.norm() < 1.0);
                    prop_assert!(b.mu.im.abs() < 1e-14);
                }
                BandKind::Band => {
                    prop_assert!((b.mu.norm() - 1.0).abs() < 1e-12);
                    prop_assert!((b.mu.inv() - b.mu.conj()).norm() < 1e-12);
                    prop_assert!(b.mu.im >= 0.0);
                }
                BandKind::Edge => unreachable!(),
            }
            let s = C64::from_polar(0.1 + 3.0 * k.fract(), a);
            let r = b.rescaled(s);
            prop_assert!((r.det() - 1.0).norm() < 1e-12);
            prop_assert!(r.residual(&t) < 1e-10 * t.norm().max(1.0) * s.norm().max(1.0 / s.norm()));
        }

        #[test]
        fn classification_similarity_invariant(k in 0.05f64..6.0, p11 in -2.0f64..2.0, p12 in -2.0f64..2.0, p21 in -2.0f64..2.0) {
            prop_assume!((1.0 + p12 * p21).abs() > 0.1);
            // unimodular P = [[p11', p12], [p21, p22]] with p22 solving det = 1
            let p11 = if p11.abs() < 0.1 { 1.0 } else { p11 };
            let p22 = (1.0 + p12 * p21) / p11;
            let p = Mat2::real(p11, p12, p21, p22);
            let t = cell_monodromy(&golden_crystal(), &SpectralPoint::new(k, 0.0, Polarization::EPar)).unwrap();
            let c1 = classify(&t).unwrap();
            let c2 = classify(&(p * t * p.adjugate())).unwrap();
            prop_assume!(c1.discriminant.abs() > 1e-6);
            prop_assert_eq!(c1.kind, c2.kind);
        }
    }
}
