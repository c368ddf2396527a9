//! Derivative-free minimizers: Nelder-Mead simplex for multivariate
//! objectives and Brent's method for univariate ones.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub ftol: f64,
    pub xtol: f64,
    pub max_evals: usize,
    /// Initial simplex edge length per coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-8,
            xtol: 1e-8,
            max_evals: 5000,
            initial_step: 0.5,
        }
    }
}

/// Standard Nelder-Mead with reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2. Objectives may return +inf to reject a region.
pub fn nelder_mead<F>(mut f: F, start: &[f64], opts: &NelderMeadOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty start point".into()));
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // n+1 vertices
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    loop {
        // Order vertices by objective value.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let best = idx[0];
        let worst = idx[n];
        let second_worst = idx[n - 1];

        let f_spread = (fvals[worst] - fvals[best]).abs();
        let x_spread = (0..n)
            .map(|j| {
                simplex
                    .iter()
                    .map(|v| v[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    })
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0f64, f64::max);
        if (f_spread < opts.ftol && x_spread < opts.xtol) || evals >= opts.max_evals {
            return Ok(OptimResult {
                x: simplex[best].clone(),
                fx: fvals[best],
                evaluations: evals,
                converged: evals < opts.max_evals,
            });
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (k, v) in simplex.iter().enumerate() {
            if k != worst {
                for j in 0..n {
                    centroid[j] += v[j] / n as f64;
                }
            }
        }

        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + (centroid[j] - simplex[worst][j]))
            .collect();
        let fr = eval(&reflect, &mut evals);

        if fr < fvals[best] {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]))
                .collect();
            let fe = eval(&expand, &mut evals);
            if fe < fr {
                simplex[worst] = expand;
                fvals[worst] = fe;
            } else {
                simplex[worst] = reflect;
                fvals[worst] = fr;
            }
        } else if fr < fvals[second_worst] {
            simplex[worst] = reflect;
            fvals[worst] = fr;
        } else {
            // Contraction toward the better of worst/reflected.
            let (target, ft) = if fr < fvals[worst] {
                (&reflect, fr)
            } else {
                (&simplex[worst].clone(), fvals[worst])
            };
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 0.5 * (target[j] - centroid[j]))
                .collect();
            let fc = eval(&contract, &mut evals);
            if fc < ft {
                simplex[worst] = contract;
                fvals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_v = simplex[best].clone();
                for k in 0..=n {
                    if k == best {
                        continue;
                    }
                    for j in 0..n {
                        simplex[k][j] = best_v[j] + 0.5 * (simplex[k][j] - best_v[j]);
                    }
                    fvals[k] = eval(&simplex[k].clone(), &mut evals);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BrentOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BrentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// Brent's minimization on the bracket [a, b].
pub fn brent_min<F>(mut f: F, a: f64, b: f64, opts: &BrentOptions) -> Result<OptimResult>
where
    F: FnMut(f64) -> f64,
{
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("bad bracket [{a}, {b}]")));
    }
    const GOLD: f64 = 0.381_966_011_250_105_1; // (3 - sqrt(5)) / 2
    let (mut lo, mut hi) = (a, b);
    let mut x = lo + GOLD * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 1usize;

    for _ in 0..opts.max_iters {
        let xm = 0.5 * (lo + hi);
        let tol1 = opts.tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (hi - lo) {
            return Ok(OptimResult {
                x: vec![x],
                fx,
                evaluations: evals,
                converged: true,
            });
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // Parabolic interpolation through x, v, w.
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let mut p = (x - v) * q0 - (x - w) * r;
            let mut q = 2.0 * (q0 - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if xm > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { lo - x } else { hi - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d > 0.0 { tol1 } else { -tol1 }
        };
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(OptimResult {
        x: vec![x],
        fx,
        evaluations: evals,
        converged: false,
    })
}

/// Coarse grid scan followed by Brent around the best grid point. Used when no
/// bracket is known a priori.
pub fn grid_then_brent<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    grid_points: usize,
    opts: &BrentOptions,
) -> Result<OptimResult>
where
    F: FnMut(f64) -> f64,
{
    if grid_points < 3 {
        return Err(Error::InvalidArgument("need at least 3 grid points".into()));
    }
    let h = (hi - lo) / (grid_points - 1) as f64;
    let mut best_i = 0;
    let mut best_f = f64::INFINITY;
    for i in 0..grid_points {
        let v = f(lo + i as f64 * h);
        if v < best_f {
            best_f = v;
            best_i = i;
        }
    }
    let a = lo + (best_i.saturating_sub(1)) as f64 * h;
    let b = lo + ((best_i + 1).min(grid_points - 1)) as f64 * h;
    let mut res = brent_min(&mut f, a, b, opts)?;
    res.evaluations += grid_points;
    if best_f < res.fx {
        res.x = vec![lo + best_i as f64 * h];
        res.fx = best_f;
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_quadratic() {
        let res = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-4);
        assert!((res.x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let res = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadOptions {
                max_evals: 20_000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-3);
        assert!((res.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn nelder_mead_handles_infinite_regions() {
        let res = nelder_mead(
            |x| {
                if x[0] < 0.0 {
                    f64::INFINITY
                } else {
                    (x[0] - 2.0).powi(2)
                }
            },
            &[5.0],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!((res.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn brent_cosine() {
        let res = brent_min(|x| x.cos(), 2.0, 4.0, &BrentOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.x[0] - std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn grid_then_brent_finds_global_in_range() {
        let res = grid_then_brent(
            |x| (x - 1.3).powi(2) + 0.1 * (5.0 * x).sin(),
            -10.0,
            10.0,
            41,
            &BrentOptions::default(),
        )
        .unwrap();
        assert!((res.x[0] - 1.3).abs() < 0.2);
    }
}
