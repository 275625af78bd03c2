//! Small unconstrained minimizers used by the verifiers.

use crate::error::{invalid, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop once `‖∇f‖∞` falls below this.
    pub gtol: f64,
    /// Stop once the relative decrease over one step falls below this.
    pub ftol: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, gtol: 1e-12, ftol: 1e-15, memory: 8 }
    }
}

/// Limited-memory BFGS with Armijo backtracking.
///
/// `fg(x, g)` returns `f(x)` and writes `∇f(x)` into `g`. Returns the best
/// point seen and its value.
pub fn lbfgs<F>(mut fg: F, x0: &[f64], opts: LbfgsOptions) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = fg(&x, &mut g);
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for _ in 0..opts.max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.gtol {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &d);
            axpy(&mut d, -alpha[i], &y_hist[i]);
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            axpy(&mut d, alpha[i] - beta, &s_hist[i]);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut step = if k == 0 { 1.0 / norm(&d).max(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = fg(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        let f_old = fx;
        fx = f_new;
        if dot(&s, &y) > 1e-300 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if decrease <= opts.ftol * f_old.abs().max(1e-300) {
            break;
        }
    }
    (x, fx)
}

/// Nelder–Mead simplex search started from `x0` with initial edge `step`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, max_iter: usize, ftol: f64) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i] != 0.0 { step * p[i].abs().max(1e-3) } else { step };
        let v = f(&p);
        simplex.push((p, v));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= ftol * best.abs().max(1e-300) {
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect()
        };
        let worst_pt = simplex[n].0.clone();
        let reflected = along(-1.0, &worst_pt);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0, &worst_pt);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = if fr < worst { along(-0.5, &worst_pt) } else { along(0.5, &worst_pt) };
            let fc = f(&contracted);
            if fc < worst.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best_pt = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best_pt.iter().zip(&p.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = f(&shrunk);
                    *p = (shrunk, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Central finite-difference gradient.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
pub fn solve_spd(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(invalid("solve_spd: shape mismatch"));
    }
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(invalid("solve_spd: matrix is not positive definite"));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut v = x[(i, c)];
            for k in 0..i {
                v -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = x[(i, c)];
            for k in i + 1..n {
                v -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = v / l[(i, i)];
        }
    }
    Ok(x)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(a, b)| *a += alpha * b);
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let (x, f) = lbfgs(rosenbrock, &[-1.2, 1.0], LbfgsOptions { max_iter: 2000, ..Default::default() });
        assert!(f < 1e-14, "{f}");
        assert!((x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let (x, f) = nelder_mead(|p| (p[0] - 2.0).powi(2) + 3.0 * (p[1] + 1.0).powi(2), &[0.0, 0.0], 0.5, 2000, 1e-16);
        assert!(f < 1e-10);
        assert!((x[0] - 2.0).abs() < 1e-4 && (x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn fd_matches_analytic() {
        let g = fd_gradient(|p| p[0] * p[0] * p[1], &[3.0, 2.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-8 && (g[1] - 9.0).abs() < 1e-8);
    }

    #[test]
    fn cholesky_solves() {
        let a = DenseMatrix::from_rows(&[[4.0, 1.0], [1.0, 3.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let x = solve_spd(&a, &b).unwrap();
        assert!(a.matmul(&x).unwrap().sub(&b).unwrap().max_abs() < 1e-14);
        assert!(solve_spd(&DenseMatrix::zeros(2, 2), &b).is_err());
    }
}
