//! Small numerical kernels shared by the physics modules: bracketed root
//! finding, scalar minimization, Gauss-Legendre nodes and a dense
//! Levenberg-Marquardt solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign.
///
/// Stops when `|f(x)| <= ftol` or the bracket is narrower than `xtol`.
pub fn brent_root<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, ftol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa.abs() <= ftol {
        return Ok(a);
    }
    if fb.abs() <= ftol {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NotFound(format!(
            "root is not bracketed on [{a:e}, {b:e}] (f = {fa:e}, {fb:e})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NonConvergence {
        what: "brent root",
        iterations: max_iter,
        residual: fb.abs(),
        last: vec![b],
    })
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_min<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, max_iter: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..max_iter {
        if (b - a).abs() <= xtol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative step tolerance on the parameter vector.
    pub xtol: f64,
    /// Relative tolerance on the decrease of the squared residual.
    pub ftol: f64,
    /// Relative finite-difference step for the Jacobian.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            xtol: 1e-12,
            ftol: 1e-15,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals at the solution.
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt minimization of `sum r_i(p)^2` with a forward
/// difference Jacobian.
pub fn levenberg_marquardt<F>(mut residuals: F, start: &[f64], opts: &LmOptions) -> Result<LmResult>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = start.len();
    let mut p = DVector::from_column_slice(start);
    let mut r = DVector::from_vec(residuals(p.as_slice()));
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::InvalidInput(
            "residuals are not finite at the start point".into(),
        ));
    }
    let m = r.len();
    let mut lambda = 1e-3;
    for iter in 0..opts.max_iter {
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for k in 0..n {
            let h = opts.fd_step * p[k].abs().max(1e-3);
            let mut pk = p.clone();
            pk[k] += h;
            let rk = residuals(pk.as_slice());
            for i in 0..m {
                jac[(i, k)] = (rk[i] - r[i]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let trial = &p + &step;
            let rt = DVector::from_vec(residuals(trial.as_slice()));
            let ct = rt.norm_squared();
            if ct.is_finite() && ct < cost {
                let rel_drop = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                let rel_step = step.norm() / (p.norm() + opts.xtol);
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel_drop < opts.ftol || rel_step < opts.xtol {
                    return Ok(LmResult {
                        params: p.as_slice().to_vec(),
                        cost,
                        iterations: iter + 1,
                    });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // No downhill step at any damping: stationary point.
            return Ok(LmResult {
                params: p.as_slice().to_vec(),
                cost,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "Levenberg-Marquardt",
        iterations: opts.max_iter,
        residual: cost,
        last: p.as_slice().to_vec(),
    })
}

/// Fits `y = amplitude * exp(-x / tau) + offset`; returns `(amplitude, tau, offset)`.
pub fn fit_exponential(x: &[f64], y: &[f64], tau_guess: f64) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InsufficientData(
            "exponential fit needs at least 3 points".into(),
        ));
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let first = y[0] / scale;
    let last = y[y.len() - 1] / scale;
    let start = [first - last, tau_guess.ln(), last];
    let res = levenberg_marquardt(
        |p| {
            let tau = p[1].exp();
            x.iter()
                .zip(y)
                .map(|(&xi, &yi)| p[0] * (-xi / tau).exp() + p[2] - yi / scale)
                .collect()
        },
        &start,
        &LmOptions::default(),
    )?;
    Ok((res.params[0] * scale, res.params[1].exp(), res.params[2] * scale))
}

/// Least-squares slope and intercept of `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Values on a rectilinear grid, `values[iy * xs.len() + ix]`, with bilinear
/// interpolation. Queries outside the grid are clamped to its boundary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Grid2 {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl Grid2 {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 nodes per axis".into()));
        }
        if values.len() != xs.len() * ys.len() {
            return Err(Error::InvalidInput(format!(
                "grid has {} values for {}x{} nodes",
                values.len(),
                xs.len(),
                ys.len()
            )));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&xs) || !increasing(&ys) {
            return Err(Error::InvalidInput("grid axes must be strictly increasing".into()));
        }
        Ok(Self { xs, ys, values })
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let (ix, tx) = locate(&self.xs, x);
        let (iy, ty) = locate(&self.ys, y);
        let nx = self.xs.len();
        let v = |i: usize, j: usize| self.values[j * nx + i];
        let lo = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let hi = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        if ty == 0.0 {
            lo
        } else {
            lo * (1.0 - ty) + hi * ty
        }
    }
}

/// Segment index and fractional position of `x` in a sorted axis, clamped.
pub fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    if x <= axis[0] {
        return (0, 0.0);
    }
    if x >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    let i = axis.partition_point(|&a| a <= x) - 1;
    let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
    (i, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| Ok(x * x * x - 2.0), 0.0, 2.0, 1e-14, 0.0, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn brent_rejects_unbracketed() {
        assert!(matches!(
            brent_root(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 0.0, 50),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        let integral: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(12)).sum();
        assert!((integral - 2.0 / 13.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn grid_is_exact_at_nodes_and_bilinear_between() {
        let xs = vec![0.0, 1.0, 3.0];
        let ys = vec![-1.0, 2.0];
        let f = |x: f64, y: f64| 2.0 * x - 0.5 * y + 0.25 * x * y + 1.0;
        let values = ys.iter().flat_map(|&y| xs.iter().map(move |&x| f(x, y))).collect();
        let g = Grid2::new(xs.clone(), ys.clone(), values).unwrap();
        for &x in &xs {
            for &y in &ys {
                assert_eq!(g.at(x, y), f(x, y));
            }
        }
        assert!((g.at(2.2, 0.4) - f(2.2, 0.4)).abs() < 1e-12);
        assert_eq!(g.at(10.0, 5.0), f(3.0, 2.0));
    }

    #[test]
    fn golden_min_quadratic() {
        let (x, _) = golden_min(|x| Ok((x - 0.3) * (x - 0.3)), 0.0, 1.0, 1e-10, 200).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn exponential_fit_recovers_parameters() {
        let x: Vec<f64> = (0..40).map(|k| k as f64 * 0.25e-3).collect();
        let y: Vec<f64> = x.iter().map(|&t| -3.0 * (-t / 2e-3).exp() + 3.0).collect();
        let (a, tau, c) = fit_exponential(&x, &y, 1e-3).unwrap();
        assert!((a + 3.0).abs() < 1e-8, "{a}");
        assert!((tau - 2e-3).abs() < 1e-11, "{tau}");
        assert!((c - 3.0).abs() < 1e-8);
    }
}
