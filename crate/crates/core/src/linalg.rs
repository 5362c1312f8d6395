//! Small dense complex matrix helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_all(ops: &[CMat]) -> CMat {
    ops.iter().skip(1).fold(ops[0].clone(), |acc, op| acc.kronecker(op))
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), -I, I, C64::new(0.0, 0.0)])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0)])
}

pub fn hadamard() -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_row_slice(2, 2, &[C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0)])
}

/// Spin operators `(I_x, I_y, I_z)` for spin `twice_spin / 2` in the
/// Zeeman basis ordered `m = I, I-1, ..., -I`.
pub fn spin_operators(twice_spin: u32) -> (CMat, CMat, CMat) {
    let dim = twice_spin as usize + 1;
    let s = twice_spin as f64 / 2.0;
    let m = |k: usize| s - k as f64;
    let mut plus = CMat::zeros(dim, dim);
    // <m+1| I+ |m> between rows k-1 and k
    for k in 1..dim {
        let mk = m(k);
        plus[(k - 1, k)] = C64::new((s * (s + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let minus = plus.adjoint();
    let ix = (&plus + &minus) * C64::new(0.5, 0.0);
    let iy = (&plus - &minus) * C64::new(0.0, -0.5);
    let iz = CMat::from_diagonal(&nalgebra::DVector::from_fn(dim, |k, _| C64::new(m(k), 0.0)));
    (ix, iy, iz)
}

/// Largest entry of `|A - A^dagger|`.
pub fn hermiticity_deviation(a: &CMat) -> f64 {
    let d = a - a.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max |A_ij - B_ij|`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn operator_norm(a: &CMat) -> f64 {
    a.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

/// `exp(-i H tau)` for Hermitian `H`.
pub fn expm_hermitian(h: &CMat, tau: f64) -> CMat {
    // Taylor series in A = -i H tau after scaling to ||A||_1 <= 1/2, then
    // squaring back. Terms are summed until they fall below machine epsilon.
    let norm = h.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
        * tau.abs();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let a = h * C64::new(0.0, -tau / f64::from(1u32 << squarings));
    let dim = h.nrows();
    let mut out = identity(dim);
    let mut term = identity(dim);
    for k in 1..=30 {
        term = &term * &a * C64::new(1.0 / k as f64, 0.0);
        out += &term;
        let size = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if size < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        out = &out * &out;
    }
    out
}

/// Overwrites `u` with `exp(-i H tau) u`.
///
/// For small `||H tau||` the Taylor series is applied to `u` directly, which
/// avoids forming the exponential.
pub fn apply_expm_hermitian(h: &CMat, tau: f64, u: &mut CMat) {
    let n = h.nrows();
    let norm = h.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
        * tau.abs();
    if norm > 0.5 || u.nrows() != n {
        *u = expm_hermitian(h, tau) * &*u;
        return;
    }
    let m = u.ncols();
    let hs = h.as_slice();
    let mut term: Vec<C64> = u.as_slice().to_vec();
    let mut next = vec![C64::new(0.0, 0.0); n * m];
    let acc = u.as_mut_slice();
    for k in 1..=30 {
        let c = C64::new(0.0, -tau / k as f64);
        next.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for j in 0..m {
            let col = &mut next[j * n..(j + 1) * n];
            for l in 0..n {
                let s = term[j * n + l] * c;
                if s.re == 0.0 && s.im == 0.0 {
                    continue;
                }
                for (o, hv) in col.iter_mut().zip(&hs[l * n..(l + 1) * n]) {
                    *o += hv * s;
                }
            }
        }
        let mut size = 0.0f64;
        for (a, v) in acc.iter_mut().zip(&next) {
            *a += v;
            size = size.max(v.norm_sqr());
        }
        std::mem::swap(&mut term, &mut next);
        if size < 1e-36 {
            break;
        }
    }
}

/// Reference exponential through the eigendecomposition of `h`.
pub fn expm_hermitian_eigen(h: &CMat, tau: f64) -> CMat {
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = C64::from_polar(1.0, -lambda * tau);
        for z in scaled.column_mut(j).iter_mut() {
            *z *= phase;
        }
    }
    scaled * v.adjoint()
}

/// `‖U^dagger U - I‖_max`.
pub fn unitarity_deviation(u: &CMat) -> f64 {
    let g = u.adjoint() * u;
    max_abs_diff(&g, &identity(u.nrows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_exponential_matches_eigen() {
        let mut h = CMat::zeros(6, 6);
        for r in 0..6 {
            for c in 0..6 {
                let v = C64::new(((r * 7 + c * 3) % 5) as f64 - 2.0, ((r * c) % 3) as f64 - 1.0);
                h[(r, c)] += v;
                h[(c, r)] += v.conj();
            }
        }
        for tau in [1e-3, 0.01, 0.1, 2.0, 40.0] {
            let a = expm_hermitian(&h, tau);
            let b = expm_hermitian_eigen(&h, tau);
            let mut c = identity(6);
            apply_expm_hermitian(&h, tau, &mut c);
            assert!(max_abs_diff(&c, &b) < 1e-11 * (1.0 + tau), "tau {tau}");
            assert!(max_abs_diff(&a, &b) < 1e-11 * (1.0 + tau), "tau {tau}");
            assert!(unitarity_deviation(&a) < 1e-11 * (1.0 + tau));
        }
    }

    #[test]
    fn spin_half_matches_pauli_over_two() {
        let (x, y, z) = spin_operators(1);
        let half = C64::new(0.5, 0.0);
        assert!(max_abs_diff(&x, &(pauli_x() * half)) < 1e-15);
        assert!(max_abs_diff(&y, &(pauli_y() * half)) < 1e-15);
        assert!(max_abs_diff(&z, &(pauli_z() * half)) < 1e-15);
    }

    #[test]
    fn spin_one_commutation() {
        let (x, y, z) = spin_operators(2);
        let comm = &x * &y - &y * &x;
        assert!(max_abs_diff(&comm, &(z.clone() * I)) < 1e-14);
        let casimir = &x * &x + &y * &y + &z * &z;
        assert!(max_abs_diff(&casimir, &(identity(3) * C64::new(2.0, 0.0))) < 1e-14);
    }

    #[test]
    fn exponential_of_pauli() {
        let theta = 0.37;
        let u = expm_hermitian(&pauli_x(), theta);
        let expect = identity(2) * C64::new(theta.cos(), 0.0) - pauli_x() * (I * theta.sin());
        assert!(max_abs_diff(&u, &expect) < 1e-14);
        assert!(unitarity_deviation(&u) < 1e-14);
    }

    #[test]
    fn hadamard_conjugates_x_to_z() {
        let h = hadamard();
        assert!(max_abs_diff(&(&h * pauli_x() * &h), &pauli_z()) < 1e-15);
    }
}
