//! Adaptive Simpson quadrature on finite intervals.

use crate::error::{Error, Result};

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    min_width: f64,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    // Accept once the estimate is within tolerance, or once the panel is so
    // narrow (relative to the original interval) that a jump discontinuity is
    // pinned down to rounding level.
    if delta.abs() <= 15.0 * tol || b - a <= min_width {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numerical(
            "adaptive quadrature failed to converge".into(),
        ));
    }
    let l = adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, min_width)?;
    let r = adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, min_width)?;
    Ok(l + r)
}

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}]")));
    }
    // Seed with a handful of panels so narrow features are not missed by the
    // first Simpson estimate.
    let panels = 16;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = lo + h;
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(fa, fm, fb, lo, hi);
        total += adapt(
            &f,
            lo,
            hi,
            fa,
            fm,
            fb,
            whole,
            tol / panels as f64,
            60,
            1e-14 * (b - a),
        )?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-10); // 4 - 4 + 2
    }

    #[test]
    fn gaussian_mass() {
        let v = adaptive_simpson(
            |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -12.0,
            12.0,
            1e-12,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn narrow_spike() {
        // A spike of width 1e-3 centred off the initial grid.
        let v = adaptive_simpson(
            |x| (-(x - 0.1234f64).powi(2) / 2e-6).exp(),
            -1.0,
            1.0,
            1e-12,
        )
        .unwrap();
        let exact = (2.0 * std::f64::consts::PI * 1e-6).sqrt();
        assert!((v - exact).abs() < 1e-9);
    }
}
