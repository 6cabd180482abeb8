//! Banded LU factorization with partial pivoting for complex matrices.
//!
//! Storage follows the LAPACK `gbtrf` layout: column-major with leading
//! dimension `2 * kl + ku + 1`, element `(i, j)` stored at row
//! `kl + ku + i - j` of column `j`. The top `kl` rows hold fill-in produced by
//! row interchanges.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[inline]
fn cabs1(z: Complex64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// A square banded matrix awaiting factorization.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedMatrix { n, kl, ku, ldab, ab: vec![Complex64::new(0.0, 0.0); ldab * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "({i},{j}) outside band");
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let k = self.offset(i, j);
        self.ab[k] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i + self.ku < j || j + self.kl < i {
            return Complex64::new(0.0, 0.0);
        }
        self.ab[self.offset(i, j)]
    }

    /// In-place LU factorization, `A = P L U`.
    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl, ku, ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let ab = &mut self.ab;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let base = j * ldab + kv;
            let mut jp = 0;
            let mut best = cabs1(ab[base]);
            for r in 1..=km {
                let v = cabs1(ab[base + r]);
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(Error::Solver(format!("banded LU: exactly singular pivot in column {j} of {n}")));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = c * ldab + kv + j - c;
                    ab.swap(a, a + jp);
                }
            }
            if km > 0 {
                let inv = ab[base].inv();
                for v in &mut ab[base + 1..=base + km] {
                    *v *= inv;
                }
                for c in j + 1..=ju {
                    let t = ab[c * ldab + kv + j - c];
                    if t.re == 0.0 && t.im == 0.0 {
                        continue;
                    }
                    let (left, right) = ab.split_at_mut(c * ldab);
                    let l = &left[base + 1..=base + km];
                    let start = kv + j + 1 - c;
                    let dst = &mut right[start..start + km];
                    for (d, &li) in dst.iter_mut().zip(l) {
                        *d -= li * t;
                    }
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ldab, ab: self.ab, ipiv })
    }
}

/// Factors of a banded matrix. Read-only after construction, so it can be
/// shared between threads solving different right-hand sides.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<Complex64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Bytes held by the factors.
    pub fn memory_bytes(&self) -> usize {
        self.ab.len() * std::mem::size_of::<Complex64>() + self.ipiv.len() * std::mem::size_of::<usize>()
    }

    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        let ab = &self.ab;
        if kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
                let bj = b[j];
                if bj.re == 0.0 && bj.im == 0.0 {
                    continue;
                }
                let col = &ab[j * ldab + kv + 1..=j * ldab + kv + lm];
                for (x, &lv) in b[j + 1..=j + lm].iter_mut().zip(col) {
                    *x -= lv * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let base = j * ldab + kv;
            b[j] /= ab[base];
            let t = b[j];
            if t.re == 0.0 && t.im == 0.0 {
                continue;
            }
            let lo = j.saturating_sub(kv);
            let col = &ab[base - (j - lo)..base];
            for (x, &u) in b[lo..j].iter_mut().zip(col) {
                *x -= u * t;
            }
        }
    }

    /// Overwrites `b` with the solution of `A^H x = b`.
    pub fn solve_adjoint_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, ldab) = (self.n, self.kl, self.ldab);
        let kv = self.kl + self.ku;
        let ab = &self.ab;
        for j in 0..n {
            let base = j * ldab + kv;
            let lo = j.saturating_sub(kv);
            let col = &ab[base - (j - lo)..base];
            let mut s = b[j];
            for (x, &u) in b[lo..j].iter().zip(col) {
                s -= u.conj() * x;
            }
            b[j] = s / ab[base].conj();
        }
        if kl > 0 {
            for j in (0..n.saturating_sub(1)).rev() {
                let lm = kl.min(n - 1 - j);
                let col = &ab[j * ldab + kv + 1..=j * ldab + kv + lm];
                let mut s = b[j];
                for (x, &lv) in b[j + 1..=j + lm].iter().zip(col) {
                    s -= lv.conj() * x;
                }
                b[j] = s;
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> (BandedMatrix, Vec<Vec<Complex64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = BandedMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for j in 0..n {
            for i in j.saturating_sub(ku)..(j + kl + 1).min(n) {
                // small diagonal forces pivoting; triangular cases need a
                // dominant one to stay well conditioned
                let mut v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if i == j {
                    v = if kl > 0 && ku > 0 { v * 0.05 } else { v + 4.0 };
                }
                m.set(i, j, v);
                dense[i][j] = v;
            }
        }
        (m, dense)
    }

    fn matvec(a: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
        a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn adjoint_matvec(a: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
        let n = a.len();
        (0..n).map(|j| (0..n).map(|i| a[i][j].conj() * x[i]).sum()).collect()
    }

    #[test]
    fn solves_match_dense_products() {
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (40, 3, 5), (60, 7, 2), (33, 0, 4), (33, 4, 0)] {
            let (m, dense) = random_banded(n, kl, ku, n as u64 * 31 + kl as u64);
            let lu = m.factor().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();

            let mut b = matvec(&dense, &x);
            lu.solve_in_place(&mut b);
            let err: f64 = b.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n} kl={kl} ku={ku} err={err}");

            let mut c = adjoint_matvec(&dense, &x);
            lu.solve_adjoint_in_place(&mut c);
            let err: f64 = c.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "adjoint n={n} kl={kl} ku={ku} err={err}");
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = BandedMatrix::zeros(4, 1, 1);
        assert!(matches!(m.factor(), Err(Error::Solver(_))));
    }
}
