//! Restarted GMRES for grids too large to factor.

use num_complex::Complex64;

use super::field::inner;

#[derive(Debug, Clone, Copy)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b` with GMRES(`restart`), starting from `x`.
/// `apply(v, out)` must overwrite `out` with `A v`.
pub fn gmres<F>(apply: F, b: &[Complex64], x: &mut [Complex64], tol: f64, restart: usize, max_iter: usize) -> GmresOutcome
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = zero);
        return GmresOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let m = restart.max(1);
    let mut r = vec![zero; n];
    let mut w = vec![zero; n];
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![zero; m]; m + 1];
    let mut cs = vec![0.0f64; m];
    let mut sn = vec![zero; m];
    let mut g = vec![zero; m + 1];
    let mut total = 0;
    let mut relres;

    loop {
        apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm(&r);
        relres = beta / bnorm;
        if relres <= tol || total >= max_iter {
            return GmresOutcome { iterations: total, relative_residual: relres, converged: relres <= tol };
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = zero);
        g[0] = Complex64::new(beta, 0.0);

        let mut k_used = 0;
        for k in 0..m {
            apply(&basis[k], &mut w);
            // modified Gram-Schmidt
            for (i, q) in basis.iter().enumerate() {
                let hik = inner(q, &w);
                h[i][k] = hik;
                for (wj, qj) in w.iter_mut().zip(q) {
                    *wj -= hik * qj;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = Complex64::new(hn, 0.0);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i].conj() * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (a, bb) = (h[k][k], h[k + 1][k]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = zero;
            } else {
                cs[k] = a.norm() / denom;
                let phase = if a.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { a / a.norm() };
                sn[k] = phase * bb.conj() / denom;
            }
            h[k][k] = cs[k] * a + sn[k] * bb;
            h[k + 1][k] = zero;
            g[k + 1] = -sn[k].conj() * g[k];
            g[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            relres = g[k + 1].norm() / bnorm;
            if relres <= tol || total >= max_iter || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution on the k_used x k_used triangle
        let mut y = vec![zero; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, qi) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * qi;
            }
        }
    }
}
