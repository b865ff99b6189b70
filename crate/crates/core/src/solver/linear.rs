//! Matrix-free seven-point operators and Krylov solvers.

use crate::error::{Error, Result};

/// Seven-point operator on an `nx × ny × nz` node lattice:
/// `(A x)[n] = diag[n]·x[n] − Σ_dir off[dir][n]·x[neighbour(dir, n)]`.
/// Directions are −x, +x, −y, +y, −z, +z; couplings to missing neighbours
/// must be zero.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub dims: [usize; 3],
    pub diag: Vec<f64>,
    pub off: [Vec<f64>; 6],
}

impl Stencil {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            diag: vec![0.0; n],
            off: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn clear(&mut self) {
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        for o in &mut self.off {
            o.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Index offsets of the six directions.
    pub fn strides(&self) -> [usize; 3] {
        [1, self.dims[0], self.dims[0] * self.dims[1]]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let [sx, sy, sz] = self.strides();
        let n = self.len();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            let o = &self.off;
            if o[0][i] != 0.0 {
                acc -= o[0][i] * x[i - sx];
            }
            if o[1][i] != 0.0 {
                acc -= o[1][i] * x[i + sx];
            }
            if o[2][i] != 0.0 {
                acc -= o[2][i] * x[i - sy];
            }
            if o[3][i] != 0.0 {
                acc -= o[3][i] * x[i + sy];
            }
            if o[4][i] != 0.0 {
                acc -= o[4][i] * x[i - sz];
            }
            if o[5][i] != 0.0 {
                acc -= o[5][i] * x[i + sz];
            }
            y[i] = acc;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final `‖b − A x‖ / ‖b‖`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite stencil. `x` holds the initial guess and receives the solution.
pub fn pcg(a: &Stencil, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diag.iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: res });
        }
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::LinearSolve(format!(
                "operator not positive definite (pᵀAp = {pq:e}) at iteration {it}"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / bnorm;
    if res <= tol {
        Ok(SolveStats { iterations: max_iter, relative_residual: res })
    } else {
        Err(Error::LinearSolve(format!(
            "conjugate gradients stalled at relative residual {res:e} after {max_iter} iterations"
        )))
    }
}

/// Jacobi-preconditioned BiCGSTAB for non-symmetric stencils.
pub fn bicgstab(a: &Stencil, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diag.iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: res });
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::LinearSolve(format!("BiCGSTAB breakdown at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_diag[i];
        }
        a.apply(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats { iterations: it + 1, relative_residual: norm(&s) / bnorm });
        }
        for i in 0..n {
            zz[i] = s[i] * inv_diag[i];
        }
        a.apply(&zz, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    let res = norm(&r) / bnorm;
    if res <= tol {
        Ok(SolveStats { iterations: max_iter, relative_residual: res })
    } else {
        Err(Error::LinearSolve(format!(
            "BiCGSTAB stalled at relative residual {res:e} after {max_iter} iterations"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D Laplacian with Dirichlet ends folded into the diagonal.
    fn laplacian(n: usize, shift: f64, skew: f64) -> Stencil {
        let mut a = Stencil::zeros([n, 1, 1]);
        for i in 0..n {
            a.diag[i] = 2.0 + shift;
            if i > 0 {
                a.off[0][i] = 1.0 - skew;
            }
            if i + 1 < n {
                a.off[1][i] = 1.0 + skew;
            }
        }
        a
    }

    #[test]
    fn pcg_solves_laplacian() {
        let a = laplacian(50, 0.01, 0.0);
        let exact: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.apply(&exact, &mut b);
        let mut x = vec![0.0; 50];
        let stats = pcg(&a, &b, &mut x, 1e-12, 500).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let a = laplacian(40, 0.5, 0.2);
        let exact: Vec<f64> = (0..40).map(|i| 1.0 + i as f64 * 0.01).collect();
        let mut b = vec![0.0; 40];
        a.apply(&exact, &mut b);
        let mut x = vec![0.0; 40];
        bicgstab(&a, &b, &mut x, 1e-12, 500).unwrap();
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn pcg_rejects_indefinite() {
        let mut a = laplacian(10, 0.0, 0.0);
        a.diag[3] = -5.0;
        let b = vec![1.0; 10];
        let mut x = vec![0.0; 10];
        assert!(pcg(&a, &b, &mut x, 1e-12, 100).is_err());
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplacian(5, 1.0, 0.0);
        let mut x = vec![3.0; 5];
        pcg(&a, &[0.0; 5], &mut x, 1e-12, 10).unwrap();
        assert_eq!(x, vec![0.0; 5]);
    }
}
