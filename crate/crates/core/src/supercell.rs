//! Periodized defect: the superstructure `T^n T0 T^n` repeated forever.
//! Near a defect mode its trace is small and a narrow band `J_n` opens
//! inside the host gap.

use rayon::prelude::*;
use serde::Serialize;

use crate::bands::{classify, host_gap, linspace, BandKind};
use crate::defect::{defect_coeffs, FloquetPoint};
use crate::error::{Error, Result};
use crate::medium::{CrystalSpec, Incidence, Polarization};
use crate::transfer::{matrix_power_product, Mat2, SpectralPoint, C64};

/// Past this size of `|mu|^-2n` the matrix product is not formed.
const OVERFLOW_LIMIT: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuperTrace {
    /// `tr(T^n T0 T^n)` by matrix product; `None` past the overflow limit.
    pub product: Option<C64>,
    /// `mu^2n a0 + mu^-2n d0`.
    pub identity: C64,
    pub mu: C64,
    pub a0: C64,
}

impl SuperTrace {
    /// Product value when available, identity value otherwise.
    pub fn value(&self) -> C64 {
        self.product.unwrap_or(self.identity)
    }

    /// `|product - identity| / |identity|`, or 0 without a product.
    pub fn relative_deviation(&self) -> f64 {
        self.product
            .map_or(0.0, |p| (p - self.identity).norm() / self.identity.norm())
    }
}

/// Trace of the superstructure matrix from the cell and defect matrices.
/// `t` must be a gap matrix.
pub fn trace_from(t: &Mat2, t0: &Mat2, n: u32) -> Result<SuperTrace> {
    let class = classify(t)?;
    if class.kind != BandKind::Gap {
        return Err(Error::NotInGap {
            k: f64::NAN,
            alpha: f64::NAN,
        });
    }
    let basis = crate::bands::eigenbasis(t, &class)?;
    let c = defect_coeffs(t0, &basis);
    let x = basis.mu.powu(2 * n);
    let x_inv = basis.mu.inv().powu(2 * n);
    let identity = x * c.a0 + c.d0 * x_inv;
    let product = (x_inv.norm() <= OVERFLOW_LIMIT).then(|| matrix_power_product(t, t0, n).trace());
    Ok(SuperTrace {
        product,
        identity,
        mu: basis.mu,
        a0: c.a0,
    })
}

pub fn super_trace(
    spec: &CrystalSpec,
    n: u32,
    k: f64,
    alpha: f64,
    pol: Polarization,
) -> Result<SuperTrace> {
    let fp = FloquetPoint::at(spec, SpectralPoint::new(k, alpha, pol)).map_err(|e| match e {
        Error::DegenerateEigenvalues(_) => Error::NotInGap { k, alpha },
        other => other,
    })?;
    if fp.class.kind != BandKind::Gap {
        return Err(Error::NotInGap { k, alpha });
    }
    trace_from(&fp.t, &fp.t0, n).map_err(|e| match e {
        Error::NotInGap { .. } => Error::NotInGap { k, alpha },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandInterval {
    pub lo: f64,
    pub hi: f64,
}

impl BandInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Distance from `k` to the closed interval.
    pub fn distance(&self, k: f64) -> f64 {
        (self.lo - k).max(k - self.hi).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupercellReport {
    pub n: u32,
    pub trace_at_mode: C64,
    pub mu_at_mode: C64,
    pub a0_at_mode: C64,
    pub j_n: BandInterval,
    pub width: f64,
    /// Further intervals with `|tr| < 2` seen by the scan of the bracket.
    pub other_intervals: Vec<BandInterval>,
}

const LOG_SCAN: usize = 240;
const LINEAR_SCAN: usize = 2000;

/// The band of the periodized structure containing the mode `k0`.
///
/// The edges are located by stepping outward from `k0` on a logarithmic
/// grid up to half the gap width and bisecting the first crossing of
/// `|tr| = 2`. A uniform scan of the same bracket reports any further
/// band intervals.
pub fn defect_band(
    spec: &CrystalSpec,
    n: u32,
    incidence: Incidence,
    k0: f64,
    pol: Polarization,
) -> Result<SupercellReport> {
    let gap = host_gap(spec, incidence, pol, k0)?;
    let f = |k: f64| -> Result<f64> {
        let tr = super_trace(spec, n, k, incidence.alpha_at(k), pol)?.value();
        Ok(tr.re.abs() - 2.0)
    };
    let at_mode = super_trace(spec, n, k0, incidence.alpha_at(k0), pol)?;
    if f(k0)? >= 0.0 {
        return Err(Error::NoBandFound(at_mode.value().norm()));
    }
    let margin = 1e-9 * gap.width();
    let lo_lim = (k0 - 0.5 * gap.width()).max(gap.lo + margin);
    let hi_lim = (k0 + 0.5 * gap.width()).min(gap.hi - margin);
    let edge = |limit: f64| -> Result<f64> {
        let span = (limit - k0).abs();
        let dir = (limit - k0).signum();
        let mut inside = k0;
        for j in 0..=LOG_SCAN {
            let s = span * 1e-14f64.powf(1.0 - j as f64 / LOG_SCAN as f64);
            let k = k0 + dir * s;
            if f(k)? >= 0.0 {
                return crate::bands::bisect(inside, k, 1e-14 * k0.abs().max(1.0), f);
            }
            inside = k;
        }
        Err(Error::NoBandFound(at_mode.value().norm()))
    };
    let (lo, hi) = (edge(lo_lim)?, edge(hi_lim)?);
    let j_n = BandInterval { lo, hi };

    let ks = linspace(lo_lim, hi_lim, LINEAR_SCAN);
    let vals: Vec<f64> = ks.par_iter().map(|&k| f(k)).collect::<Result<_>>()?;
    let mut other_intervals = Vec::new();
    let mut start: Option<f64> = None;
    for (i, (&k, &v)) in ks.iter().zip(&vals).enumerate() {
        match (v < 0.0, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                let iv = BandInterval {
                    lo: s,
                    hi: ks[i - 1],
                };
                if iv.hi < j_n.lo || iv.lo > j_n.hi {
                    other_intervals.push(iv);
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        let iv = BandInterval {
            lo: s,
            hi: ks[ks.len() - 1],
        };
        if iv.hi < j_n.lo || iv.lo > j_n.hi {
            other_intervals.push(iv);
        }
    }

    Ok(SupercellReport {
        n,
        trace_at_mode: at_mode.value(),
        mu_at_mode: at_mode.mu,
        a0_at_mode: at_mode.a0,
        j_n,
        width: j_n.width(),
        other_intervals,
    })
}

/// One row of the width-convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u32,
    pub k_lo: f64,
    pub k_hi: f64,
    pub width: f64,
    pub log_width: f64,
    pub predicted_slope: f64,
}

pub fn convergence_table(
    spec: &CrystalSpec,
    ns: &[u32],
    incidence: Incidence,
    k0: f64,
    pol: Polarization,
) -> Result<(Vec<SupercellReport>, Vec<ConvergenceRow>)> {
    let reports: Vec<SupercellReport> = ns
        .par_iter()
        .map(|&n| defect_band(spec, n, incidence, k0, pol))
        .collect::<Result<_>>()?;
    let rows = reports
        .iter()
        .map(|r| ConvergenceRow {
            n: r.n,
            k_lo: r.j_n.lo,
            k_hi: r.j_n.hi,
            width: r.width,
            log_width: r.width.ln(),
            predicted_slope: 2.0 * r.mu_at_mode.norm().ln(),
        })
        .collect();
    Ok((reports, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::linear_fit;
    use crate::medium::golden_crystal;
    use crate::transfer::cell_monodromy;

    const E: Polarization = Polarization::EPar;
    const K0: f64 = 1.841_797_668_228_934_5;

    fn normal() -> Incidence {
        Incidence::FixedTheta(0.0)
    }

    #[test]
    fn identity_defect_gives_power_trace() {
        let t = Mat2::real(2.5, 0.3, -0.2, 0.376);
        for n in [1, 3, 7] {
            let st = trace_from(&t, &Mat2::IDENTITY, n).unwrap();
            let want = t.pow(2 * n).trace();
            assert!((st.identity - want).norm() < 1e-12 * want.norm());
            assert!((st.product.unwrap() - want).norm() < 1e-12 * want.norm());
        }
    }

    #[test]
    fn generic_gap_point_identity() {
        let st = super_trace(&golden_crystal(), 8, 2.1, 0.0, E).unwrap();
        assert!(
            st.relative_deviation() < 1e-10,
            "{}",
            st.relative_deviation()
        );
    }

    #[test]
    fn band_point_is_rejected() {
        assert!(matches!(
            super_trace(&golden_crystal(), 4, 1.0, 0.0, E),
            Err(Error::NotInGap { .. })
        ));
    }

    #[test]
    fn overflow_uses_identity_only() {
        let spec = golden_crystal();
        let st = super_trace(&spec, 720, K0, 0.0, E).unwrap();
        assert!(st.product.is_none());
        assert!(st.value().is_finite());
        assert!(super_trace(&spec, 700, K0, 0.0, E)
            .unwrap()
            .product
            .is_some());
    }

    #[test]
    fn trace_at_mode_vanishes() {
        let spec = golden_crystal();
        let mut prev = f64::INFINITY;
        for n in [4, 6, 8, 10] {
            let st = super_trace(&spec, n, K0, 0.0, E).unwrap();
            let target = st.mu.powu(2 * n) * st.a0;
            assert!((st.value() - target).norm() < 1e-9 * st.a0.norm().max(1.0));
            assert!(st.value().norm() < prev);
            prev = st.value().norm();
        }
    }

    #[test]
    fn golden_widths() {
        let want = [
            (4, 0.015_314),
            (6, 0.002_171_4),
            (8, 3.0971e-4),
            (10, 4.4187e-5),
        ];
        let spec = golden_crystal();
        for (n, w) in want {
            let r = defect_band(&spec, n, normal(), K0, E).unwrap();
            assert!(((r.width - w) / w).abs() < 1e-3, "n={n}: {}", r.width);
            assert!(r.j_n.distance(K0) <= r.width);
            assert!(r.other_intervals.is_empty());
        }
    }

    #[test]
    fn widths_shrink_exponentially_and_nest() {
        let spec = golden_crystal();
        let ns: Vec<u32> = (4..=10).collect();
        let (reports, rows) = convergence_table(&spec, &ns, normal(), K0, E).unwrap();
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.log_width).collect();
        let fit = linear_fit(&xs, &ys);
        let slope = rows[0].predicted_slope;
        assert!(
            ((fit.slope - slope) / slope).abs() < 0.05,
            "{} vs {slope}",
            fit.slope
        );
        assert!(fit.r_squared > 0.99);
        for w in reports.windows(2) {
            assert!(w[1].width < w[0].width);
            assert!(w[1].j_n.lo > K0 - w[0].width && w[1].j_n.hi < K0 + w[0].width);
        }
    }

    #[test]
    fn no_band_without_defect() {
        let spec = golden_crystal().with_period_defect();
        let r = defect_band(&spec, 5, normal(), 2.0, E);
        assert!(matches!(r, Err(Error::NoBandFound(_))), "{r:?}");
        // sanity: the host matrix at that point is a gap matrix
        let t = cell_monodromy(&spec, &SpectralPoint::new(2.0, 0.0, E)).unwrap();
        assert_eq!(classify(&t).unwrap().kind, BandKind::Gap);
    }
}
