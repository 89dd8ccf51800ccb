//! Brute-force reference computations.
//!
//! Each function here recomputes a quantity along a route that shares no
//! code with the production path it checks: explicit index loops instead of
//! block views, a Taylor-series propagator instead of the eigenbasis, and so
//! on. They are slow and only meant for small dimensions.

use crate::dynamics::{DegeneracyClasses, EigenSystem};
use crate::rng::NormalStream;
use crate::{CMatrix, Complex64};

/// `U diag(p) U†` with `U` a seeded random unitary (QR of a complex
/// Gaussian matrix).
pub fn random_density_matrix(dim: usize, spectrum: &[f64], seed: u64) -> CMatrix {
    assert_eq!(spectrum.len(), dim, "spectrum length must equal dimension");
    let mut stream = NormalStream::new(seed, "oracle/random-unitary");
    let g = CMatrix::from_fn(dim, dim, |_, _| stream.complex_normal());
    let u = g.qr().q();
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        spectrum.iter().map(|p| Complex64::new(*p, 0.0)),
    ));
    &u * d * u.adjoint()
}

/// Random spectrum on the probability simplex, sorted descending.
pub fn random_probabilities(dim: usize, seed: u64) -> Vec<f64> {
    let mut stream = NormalStream::new(seed, "oracle/probabilities");
    let raw: Vec<f64> = (0..dim).map(|_| -stream.uniform().ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    p.sort_by(|a, b| b.total_cmp(a));
    p
}

/// Partial trace by looping over every `(i, n, k, k')` and keeping `k = k'`.
pub fn partial_trace_loop(rho: &CMatrix, n_levels: usize, n_bath: usize) -> CMatrix {
    let mut out = CMatrix::zeros(n_levels, n_levels);
    for i in 0..n_levels {
        for n in 0..n_levels {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n_bath {
                for kp in 0..n_bath {
                    if k == kp {
                        acc += rho[(i * n_bath + k, n * n_bath + kp)];
                    }
                }
            }
            out[(i, n)] = acc;
        }
    }
    out
}

/// `exp(A)` by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &CMatrix) -> CMatrix {
    let dim = a.nrows();
    let norm1 = (0..dim)
        .map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm1 * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a.map(|z| z * scale);
    let mut result = CMatrix::identity(dim, dim);
    let mut term = CMatrix::identity(dim, dim);
    for k in 1..=30 {
        term = &term * &x / Complex64::new(k as f64, 0.0);
        result += &term;
        let size = term.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if size < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `U ρ U†` with `U = exp(+i H t)`.
pub fn propagate_by_exponential(h: &CMatrix, rho0: &CMatrix, t: f64) -> CMatrix {
    let u = expm(&h.map(|z| z * Complex64::new(0.0, t)));
    &u * rho0 * u.adjoint()
}

/// `f_j` by the literal quadruple loop over `(l, m, k)` with a class test.
pub fn f_weights_loop(eig: &EigenSystem, classes: &DegeneracyClasses, initial: usize, target: usize) -> Vec<f64> {
    let nb = eig.n_bath();
    let d = eig.dim();
    let class: Vec<usize> = (0..d).map(|l| classes.class_of(l).expect("class partition")).collect();
    (0..nb)
        .map(|j| {
            let pj = initial * nb + j;
            let mut acc = Complex64::new(0.0, 0.0);
            for l in 0..d {
                for m in 0..d {
                    if class[l] != class[m] {
                        continue;
                    }
                    for k in 0..nb {
                        let pk = target * nb + k;
                        acc += eig.transform(l, pj).conj()
                            * eig.transform(m, pj)
                            * eig.transform(l, pk)
                            * eig.transform(m, pk).conj();
                    }
                }
            }
            acc.re
        })
        .collect()
}
