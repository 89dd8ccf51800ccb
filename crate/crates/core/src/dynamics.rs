//! Unitary dynamics of the composite in its interacting eigenbasis.
//!
//! Conventions: `T_{l(p)} = ⟨p|l⟩` is the component of interacting
//! eigenvector `l` on product state `p`; the eigenvector matrix `V` stores it
//! as `V[(p, l)]`. A matrix element `⟨l|ρ|m⟩` evolves as
//! `exp(+i (ω_l - ω_m) t)`, i.e. `ρ(t) = U ρ U†` with `U = exp(+i H t)`.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::bath::{DensityOfStates, ThermalWeights};
use crate::hilbert::{
    check_capacity, hermiticity_deviation, is_diagonal, partial_trace_matrix, CompositeHamiltonian,
    DensityMatrix, Space, DEFAULT_MAX_DIMENSION,
};
use crate::{CMatrix, Complex64, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Interacting eigenfrequencies (ascending) and eigenvectors of the composite.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    frequencies: Vec<f64>,
    vectors: CMatrix,
    n_levels: usize,
    n_bath: usize,
}

impl EigenSystem {
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Columns are eigenvectors in the product basis.
    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    /// `T_{l(p)}` for eigenvector `l` and composite product index `p`.
    pub fn transform(&self, l: usize, p: usize) -> Complex64 {
        self.vectors[(p, l)]
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len()
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_bath(&self) -> usize {
        self.n_bath
    }

    /// `V† M V`.
    pub fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.vectors.adjoint() * m * &self.vectors
    }

    /// `V M V†`.
    pub fn from_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        &self.vectors * m * self.vectors.adjoint()
    }

    /// `V diag(ω) V†`.
    pub fn reconstruct(&self) -> CMatrix {
        let scaled = CMatrix::from_fn(self.dim(), self.dim(), |p, l| {
            self.vectors[(p, l)] * self.frequencies[l]
        });
        scaled * self.vectors.adjoint()
    }

    /// `max |V†V - I|`.
    pub fn unitarity_error(&self) -> f64 {
        let g = self.vectors.adjoint() * &self.vectors;
        let mut worst = 0.0_f64;
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let ideal = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g[(r, c)] - Complex64::new(ideal, 0.0)).norm());
            }
        }
        worst
    }

    /// Largest `‖H v_l - ω_l v_l‖` over eigenpairs.
    pub fn max_residual(&self, h: &CMatrix) -> f64 {
        let hv = h * &self.vectors;
        (0..self.dim())
            .map(|l| {
                let r = hv.column(l) - self.vectors.column(l) * Complex64::new(self.frequencies[l], 0.0);
                r.norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn eigendecompose(h: &CompositeHamiltonian) -> Result<EigenSystem> {
    eigendecompose_matrix(h.matrix(), h.n_levels(), h.n_bath())
}

/// Full spectral decomposition of a Hermitian matrix on an `n_levels × n_bath`
/// product space. Frequencies ascend; each eigenvector is rotated so that its
/// largest-magnitude component (lowest index on ties) is real and positive.
pub fn eigendecompose_matrix(h: &CMatrix, n_levels: usize, n_bath: usize) -> Result<EigenSystem> {
    let dim = n_levels * n_bath;
    if h.nrows() != dim || h.ncols() != dim || dim == 0 {
        return Err(Error::Shape(format!(
            "Hamiltonian is {}x{}, expected {dim}x{dim}",
            h.nrows(),
            h.ncols()
        )));
    }
    check_capacity(dim, DEFAULT_MAX_DIMENSION.max(dim))?;
    let scale = h.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
    let herm = hermiticity_deviation(h);
    if herm > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "Hamiltonian is not Hermitian (deviation {herm:e})"
        )));
    }

    let (values, vectors) = if is_diagonal(h) {
        (h.diagonal().iter().map(|z| z.re).collect::<Vec<_>>(), CMatrix::identity(dim, dim))
    } else {
        let eig = h.clone().symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let frequencies: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted = CMatrix::zeros(dim, dim);
    for (l, &src) in order.iter().enumerate() {
        let col = vectors.column(src);
        let mut pivot = 0;
        let mut best = -1.0;
        for (p, z) in col.iter().enumerate() {
            let m = z.norm();
            if m > best {
                best = m;
                pivot = p;
            }
        }
        let phase = if best > 0.0 { col[pivot].conj() / best } else { Complex64::new(1.0, 0.0) };
        for p in 0..dim {
            sorted[(p, l)] = col[p] * phase;
        }
        sorted[(pivot, l)] = Complex64::new(sorted[(pivot, l)].norm(), 0.0);
    }
    Ok(EigenSystem { frequencies, vectors: sorted, n_levels, n_bath })
}

/// `ρ(0) = Σ_j A_j |i₀ j⟩⟨i₀ j|`.
pub fn initial_composite_state(n_levels: usize, level: usize, weights: &ThermalWeights) -> Result<DensityMatrix> {
    if level >= n_levels {
        return Err(Error::Index(format!(
            "initial level {level} outside 0..{n_levels}"
        )));
    }
    let nb = weights.len();
    let mut diag = vec![ZERO; n_levels * nb];
    for (j, a) in weights.weights().iter().enumerate() {
        diag[level * nb + j] = Complex64::new(*a, 0.0);
    }
    DensityMatrix::new(Space::Composite, CMatrix::from_diagonal(&DVector::from_vec(diag)))
}

fn check_composite(rho: &DensityMatrix, eig: &EigenSystem) -> Result<()> {
    if rho.space() != Space::Composite {
        return Err(Error::Shape("expected a composite density matrix".into()));
    }
    if rho.dim() != eig.dim() {
        return Err(Error::Shape(format!(
            "density matrix has dimension {}, eigensystem {}",
            rho.dim(),
            eig.dim()
        )));
    }
    Ok(())
}

/// Apply the phases `exp(i (ω_l - ω_m) t)` to an eigenbasis matrix.
fn dephase(rho_eig: &mut CMatrix, frequencies: &[f64], t: f64) {
    let phases: Vec<Complex64> = frequencies.iter().map(|w| Complex64::cis(w * t)).collect();
    let d = frequencies.len();
    for m in 0..d {
        let cm = phases[m].conj();
        for l in 0..d {
            rho_eig[(l, m)] *= phases[l] * cm;
        }
    }
}

/// Composite state at time `t`.
pub fn evolve(rho0: &DensityMatrix, eig: &EigenSystem, t: f64) -> Result<DensityMatrix> {
    check_composite(rho0, eig)?;
    if !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite, got {t}")));
    }
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let mut rho_eig = eig.to_eigenbasis(rho0.matrix());
    dephase(&mut rho_eig, eig.frequencies(), t);
    DensityMatrix::new(Space::Composite, eig.from_eigenbasis(&rho_eig))
}

/// Partition of the eigenindices into runs of (numerically) equal frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyClasses {
    classes: Vec<Range<usize>>,
    tolerance: f64,
}

impl DegeneracyClasses {
    pub fn classes(&self) -> &[Range<usize>] {
        &self.classes
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|r| r.len()).collect()
    }

    /// Class size → number of classes of that size.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for s in self.sizes() {
            *h.entry(s).or_insert(0) += 1;
        }
        h
    }

    pub fn max_size(&self) -> usize {
        self.sizes().into_iter().max().unwrap_or(0)
    }

    /// Largest `max ω - min ω` inside one class. Greedy chaining can push
    /// this above the tolerance.
    pub fn max_spread(&self, frequencies: &[f64]) -> f64 {
        self.classes
            .iter()
            .map(|r| frequencies[r.end - 1] - frequencies[r.start])
            .fold(0.0, f64::max)
    }

    /// Index of the class containing eigenindex `l`.
    pub fn class_of(&self, l: usize) -> Option<usize> {
        self.classes
            .binary_search_by(|r| {
                if l < r.start {
                    std::cmp::Ordering::Greater
                } else if l >= r.end {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .ok()
    }

    /// Check that the partition is exhaustive, contiguous and agrees with
    /// the gap rule on `frequencies`.
    pub fn check(&self, frequencies: &[f64]) -> Result<()> {
        let mut next = 0;
        for (c, r) in self.classes.iter().enumerate() {
            if r.start != next || r.is_empty() {
                return Err(Error::Consistency(format!("class {c} ({r:?}) breaks the partition")));
            }
            for l in r.start + 1..r.end {
                if frequencies[l] - frequencies[l - 1] > self.tolerance {
                    return Err(Error::Consistency(format!(
                        "class {c} contains a gap above the tolerance at index {l}"
                    )));
                }
            }
            if r.start > 0 && frequencies[r.start] - frequencies[r.start - 1] <= self.tolerance {
                return Err(Error::Consistency(format!(
                    "classes {} and {c} should have been merged",
                    c - 1
                )));
            }
            next = r.end;
        }
        if next != frequencies.len() {
            return Err(Error::Consistency(format!(
                "classes cover {next} of {} frequencies",
                frequencies.len()
            )));
        }
        Ok(())
    }
}

/// `1e-9 · (ω_max - ω_min)`.
pub fn default_degeneracy_tolerance(frequencies: &[f64]) -> f64 {
    match (frequencies.first(), frequencies.last()) {
        (Some(lo), Some(hi)) => 1e-9 * (hi - lo),
        _ => 0.0,
    }
}

/// Greedy left-to-right clustering: a new class starts whenever the gap to
/// the previous frequency exceeds `tolerance`.
pub fn degeneracy_classes(frequencies: &[f64], tolerance: f64) -> DegeneracyClasses {
    let mut classes = Vec::new();
    let mut start = 0;
    for l in 1..frequencies.len() {
        if frequencies[l] - frequencies[l - 1] > tolerance {
            classes.push(start..l);
            start = l;
        }
    }
    if !frequencies.is_empty() {
        classes.push(start..frequencies.len());
    }
    DegeneracyClasses { classes, tolerance }
}

#[derive(Debug, Clone)]
pub struct DiagonalEnsembleResult {
    /// Infinite-time reduced state of the system.
    pub system: DensityMatrix,
    /// Infinite-time composite state (intra-class eigenbasis entries only).
    pub composite: DensityMatrix,
    /// Ground-state population `(ρ_S)_{00}`.
    pub p0: f64,
    /// `f_j` for ground-state preparation and ground-state readout.
    pub f_weights: Vec<f64>,
    /// Contribution of each degeneracy class to `p0`.
    pub class_contributions: Vec<f64>,
    /// Part of `p0` from diagonal (`l = m`) eigenbasis entries.
    pub diagonal_part: f64,
    /// Part of `p0` from intra-class coherences (`l ≠ m`, `ω_l ≈ ω_m`).
    pub coherence_part: f64,
}

/// Infinite-time average of `ρ(t)`: keep the eigenbasis entries whose
/// frequencies fall in the same degeneracy class, transform back and trace
/// out the bath.
pub fn diagonal_ensemble(
    eig: &EigenSystem,
    rho0: &DensityMatrix,
    classes: &DegeneracyClasses,
) -> Result<DiagonalEnsembleResult> {
    check_composite(rho0, eig)?;
    classes.check(eig.frequencies())?;
    let d = eig.dim();
    let nb = eig.n_bath();
    let full = eig.to_eigenbasis(rho0.matrix());
    let mut kept = CMatrix::zeros(d, d);
    for r in classes.classes() {
        for m in r.clone() {
            for l in r.clone() {
                kept[(l, m)] = full[(l, m)];
            }
        }
    }
    let composite = DensityMatrix::new(Space::Composite, eig.from_eigenbasis(&kept))?;
    let system = DensityMatrix::new(
        Space::System,
        partial_trace_matrix(composite.matrix(), eig.n_levels(), nb)?,
    )?;
    let p0 = system.matrix()[(0, 0)].re;

    let v = eig.vectors();
    let mut class_contributions = Vec::with_capacity(classes.len());
    let mut diagonal_part = 0.0;
    for r in classes.classes() {
        let mut total = ZERO;
        for l in r.clone() {
            for m in r.clone() {
                let g: Complex64 = (0..nb).map(|k| v[(k, l)] * v[(k, m)].conj()).sum();
                let term = kept[(l, m)] * g;
                total += term;
                if l == m {
                    diagonal_part += term.re;
                }
            }
        }
        class_contributions.push(total.re);
    }
    let coherence_part = class_contributions.iter().sum::<f64>() - diagonal_part;

    Ok(DiagonalEnsembleResult {
        system,
        composite,
        p0,
        f_weights: f_weights(eig, classes, 0)?,
        class_contributions,
        diagonal_part,
        coherence_part,
    })
}

/// `f_j` for a system prepared in level 0 and read out in `target`, summed
/// over intra-class `(l, m)` pairs and bath index `k`. No temperature enters.
pub fn f_weights(eig: &EigenSystem, classes: &DegeneracyClasses, target: usize) -> Result<Vec<f64>> {
    f_weights_between(eig, classes, 0, target)
}

/// `f_j = Σ_{l,m same class} Σ_k T*_{l(i j)} T_{m(i j)} T_{l(n k)} T*_{m(n k)}`
/// for initial level `i` and target level `n`.
pub fn f_weights_between(
    eig: &EigenSystem,
    classes: &DegeneracyClasses,
    initial: usize,
    target: usize,
) -> Result<Vec<f64>> {
    let n = eig.n_levels();
    if initial >= n || target >= n {
        return Err(Error::Index(format!(
            "levels ({initial}, {target}) outside 0..{n}"
        )));
    }
    classes.check(eig.frequencies())?;
    let nb = eig.n_bath();
    let v = eig.vectors();
    let (ib, tb) = (initial * nb, target * nb);
    let mut f = vec![0.0; nb];
    for r in classes.classes() {
        let s = r.len();
        // G_{lm} = Σ_k T_{l(n k)} T*_{m(n k)}
        let mut g = vec![ZERO; s * s];
        for (a, l) in r.clone().enumerate() {
            for (b, m) in r.clone().enumerate() {
                g[a * s + b] = (0..nb).map(|k| v[(tb + k, l)] * v[(tb + k, m)].conj()).sum();
            }
        }
        for (j, fj) in f.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (a, l) in r.clone().enumerate() {
                let al = v[(ib + j, l)].conj();
                let mut inner = ZERO;
                for (b, m) in r.clone().enumerate() {
                    inner += v[(ib + j, m)] * g[a * s + b];
                }
                acc += al * inner;
            }
            *fj += acc.re;
        }
    }
    Ok(f)
}

/// One histogram bin of `f` over bath energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `Ω` on this bin (states per unit energy).
    pub density: f64,
    /// Mean bath energy of the states in the bin; `None` for empty bins.
    pub centroid: Option<f64>,
    /// Mean `f_j` over the bin; `None` for empty bins.
    pub f_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedF {
    pub bins: Vec<FBin>,
}

/// Aggregate `f_j` by bath energy onto the bins of `dos`.
pub fn f_binned(f: &[f64], bath_energies: &[f64], dos: &DensityOfStates) -> Result<BinnedF> {
    if f.len() != bath_energies.len() {
        return Err(Error::Shape(format!(
            "{} f values for {} bath energies",
            f.len(),
            bath_energies.len()
        )));
    }
    let nbins = dos.n_bins();
    let mut f_sum = vec![0.0; nbins];
    let mut e_sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for (fj, ej) in f.iter().zip(bath_energies) {
        let b = dos
            .bin_of(*ej)
            .ok_or_else(|| Error::Domain(format!("bath energy {ej} outside histogram range")))?;
        f_sum[b] += fj;
        e_sum[b] += ej;
        count[b] += 1;
    }
    let bins = (0..nbins)
        .map(|b| {
            let filled = count[b] > 0;
            FBin {
                lo: dos.edges[b],
                hi: dos.edges[b + 1],
                count: count[b],
                density: dos.density[b],
                centroid: filled.then(|| e_sum[b] / count[b] as f64),
                f_mean: filled.then(|| f_sum[b] / count[b] as f64),
            }
        })
        .collect();
    Ok(BinnedF { bins })
}

/// Eigenbasis weights of the reduced-state matrix elements:
/// `(ρ_S(t))_{ab} = Σ_{lm} M^{ab}_{lm} exp(i (ω_l - ω_m) t)` with
/// `M^{ab}_{lm} = ⟨l|ρ0|m⟩ Σ_k T_{l(a k)} T*_{m(b k)}`.
pub struct ReducedKernel {
    n_levels: usize,
    dim: usize,
    weights: Vec<CMatrix>,
}

impl ReducedKernel {
    pub fn new(rho0: &DensityMatrix, eig: &EigenSystem) -> Result<Self> {
        check_composite(rho0, eig)?;
        let n = eig.n_levels();
        let nb = eig.n_bath();
        let d = eig.dim();
        let rho_eig = eig.to_eigenbasis(rho0.matrix());
        let v = eig.vectors();
        let mut weights = Vec::with_capacity(n * n);
        for a in 0..n {
            let ba = v.rows(a * nb, nb);
            for b in 0..n {
                let bb = v.rows(b * nb, nb);
                // K_{lm} = Σ_k V[ak, l] conj(V[bk, m])
                let k = ba.transpose() * bb.map(|z| z.conj());
                weights.push(CMatrix::from_fn(d, d, |l, m| rho_eig[(l, m)] * k[(l, m)]));
            }
        }
        Ok(Self { n_levels: n, dim: d, weights })
    }

    /// `M^{ab}` for system indices `(a, b)`.
    pub fn weight(&self, a: usize, b: usize) -> &CMatrix {
        &self.weights[a * self.n_levels + b]
    }

    /// Reduced state at time `t` from the precomputed weights.
    pub fn reduced_at(&self, frequencies: &[f64], t: f64) -> CMatrix {
        let phases: Vec<Complex64> = frequencies.iter().map(|w| Complex64::cis(w * t)).collect();
        let n = self.n_levels;
        let mut out = CMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let w = self.weight(a, b);
                let mut acc = ZERO;
                for m in 0..self.dim {
                    let col = w.column(m);
                    let mut inner = ZERO;
                    for l in 0..self.dim {
                        inner += phases[l] * col[l];
                    }
                    acc += inner * phases[m].conj();
                }
                out[(a, b)] = acc;
            }
        }
        out
    }

    /// Smallest `|ω_l - ω_m| > floor` over pairs carrying weight in the
    /// ground-state population. `None` when every weighted pair is
    /// degenerate.
    pub fn smallest_weighted_gap(&self, frequencies: &[f64], floor: f64) -> Option<f64> {
        let w = self.weight(0, 0);
        let mut best: Option<f64> = None;
        for m in 0..self.dim {
            for l in 0..self.dim {
                if w[(l, m)].norm() <= 1e-14 {
                    continue;
                }
                let gap = (frequencies[l] - frequencies[m]).abs();
                if gap > floor && best.is_none_or(|b| gap < b) {
                    best = Some(gap);
                }
            }
        }
        best
    }
}

const TIME_AVERAGE_CHUNK: usize = 256;

/// Uniform-grid average of the reduced state over `t ∈ [0, t_avg]` with
/// `n_samples` points including both ends. Chunks are summed in index order,
/// so the result does not depend on the worker count.
pub fn time_average(rho0: &DensityMatrix, eig: &EigenSystem, t_avg: f64, n_samples: usize) -> Result<DensityMatrix> {
    if !(t_avg.is_finite() && t_avg > 0.0) {
        return Err(Error::Domain(format!("averaging time must be finite and > 0, got {t_avg}")));
    }
    if n_samples < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n_samples}")));
    }
    let kernel = ReducedKernel::new(rho0, eig)?;
    let n = eig.n_levels();
    let dt = t_avg / (n_samples - 1) as f64;
    let starts: Vec<usize> = (0..n_samples).step_by(TIME_AVERAGE_CHUNK).collect();
    let partials: Vec<CMatrix> = starts
        .par_iter()
        .map(|&s0| {
            let mut acc = CMatrix::zeros(n, n);
            for s in s0..(s0 + TIME_AVERAGE_CHUNK).min(n_samples) {
                acc += kernel.reduced_at(eig.frequencies(), s as f64 * dt);
            }
            acc
        })
        .collect();
    let mut total = CMatrix::zeros(n, n);
    for p in &partials {
        total += p;
    }
    DensityMatrix::new(Space::System, total.map(|z| z / n_samples as f64))
}
