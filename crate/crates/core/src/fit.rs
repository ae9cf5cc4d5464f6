//! Small least-squares helpers: straight lines and circles.

use serde::Serialize;

use crate::transfer::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleFit {
    pub center: C64,
    pub diameter: f64,
    /// RMS of the radial residuals `| |z - c| - R |`.
    pub rms_residual: f64,
}

/// Algebraic (Kasa) circle fit: least squares on
/// `x^2 + y^2 = A x + B y + C`, computed on mean-centred data.
pub fn fit_circle(points: &[C64]) -> Option<CircleFit> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<C64>() / n;
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for p in points {
        let z = p - mean;
        let row = [z.re, z.im, 1.0];
        let rhs = z.norm_sqr();
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * rhs;
        }
    }
    let [a, b, c] = solve3(ata, atb)?;
    let center = C64::new(a / 2.0, b / 2.0);
    let r2 = c + center.norm_sqr();
    if !(r2 > 0.0) {
        return None;
    }
    let radius = r2.sqrt();
    let rms = (points
        .iter()
        .map(|p| ((p - mean - center).norm() - radius).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(CircleFit {
        center: center + mean,
        diameter: 2.0 * radius,
        rms_residual: rms,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 3.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_circle() {
        let c = C64::new(-0.3, 0.7);
        let pts: Vec<C64> = (0..50)
            .map(|i| c + C64::from_polar(0.4, 0.05 * i as f64))
            .collect();
        let f = fit_circle(&pts).unwrap();
        assert!((f.center - c).norm() < 1e-12);
        assert!((f.diameter - 0.8).abs() < 1e-12);
        assert!(f.rms_residual < 1e-12);
    }

    #[test]
    fn collinear_points_do_not_fit() {
        let pts: Vec<C64> = (0..10)
            .map(|i| C64::new(i as f64, 2.0 * i as f64))
            .collect();
        assert!(fit_circle(&pts).is_none_or(|f| f.diameter > 1e6));
    }
}
