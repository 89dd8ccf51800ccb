//! Product-space bookkeeping for the system ⊗ bath composite.
//!
//! Composite basis states `|i j⟩` (system level `i`, bath state `j`) are
//! stored system-major: internal index `i * N + j0` with `j0 = j - 1` the
//! zero-based bath index. With this ordering the bath trace is a sum over
//! the diagonal of each `N × N` block.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::rng::{label, NormalStream};
use crate::{CMatrix, Complex64, Error, Result};

/// Largest composite dimension accepted unless a caller raises the cap.
pub const DEFAULT_MAX_DIMENSION: usize = 4096;

/// Thresholds shared by every density-matrix check.
pub const TRACE_TOLERANCE: f64 = 1e-10;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
pub const POSITIVITY_TOLERANCE: f64 = 1e-10;

/// Level structure of the small system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSpec {
    level_energies: Vec<f64>,
}

impl SystemSpec {
    /// Two levels at `[0, gap]`.
    pub fn two_level(gap: f64) -> Result<Self> {
        Self::new(vec![0.0, gap])
    }

    /// Equally spaced levels `0, gap, 2 gap, ...`.
    pub fn ladder(n_levels: usize, gap: f64) -> Result<Self> {
        Self::new((0..n_levels).map(|i| i as f64 * gap).collect())
    }

    pub fn new(level_energies: Vec<f64>) -> Result<Self> {
        if level_energies.len() < 2 {
            return Err(Error::Domain(format!(
                "system needs at least 2 levels, got {}",
                level_energies.len()
            )));
        }
        if level_energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("system level energies must be finite".into()));
        }
        if level_energies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "system level energies must be strictly ascending".into(),
            ));
        }
        Ok(Self { level_energies })
    }

    pub fn n_levels(&self) -> usize {
        self.level_energies.len()
    }

    pub fn level_energies(&self) -> &[f64] {
        &self.level_energies
    }

    /// Spacing between the two lowest levels.
    pub fn gap(&self) -> f64 {
        self.level_energies[1] - self.level_energies[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingStructure {
    /// Dense random Hermitian matrix on the whole composite space.
    #[default]
    RandomHermitian,
    /// Nearest-level flip on the system tensored with a random Hermitian
    /// bath operator.
    SystemFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub strength: f64,
    pub structure: CouplingStructure,
    pub seed: u64,
}

impl CouplingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(Error::Domain(format!(
                "coupling strength must be finite and >= 0, got {}",
                self.strength
            )));
        }
        Ok(())
    }
}

/// Map `(system level, 1-based bath index)` onto the composite basis index.
pub fn product_index(level: usize, bath_state: usize, n_levels: usize, n_bath: usize) -> Result<usize> {
    if level >= n_levels {
        return Err(Error::Index(format!(
            "system level {level} outside 0..{n_levels}"
        )));
    }
    if bath_state == 0 || bath_state > n_bath {
        return Err(Error::Index(format!(
            "bath state {bath_state} outside 1..={n_bath}"
        )));
    }
    Ok(level * n_bath + (bath_state - 1))
}

/// Inverse of [`product_index`]; returns `(level, 1-based bath index)`.
pub fn split_index(index: usize, n_levels: usize, n_bath: usize) -> Result<(usize, usize)> {
    if n_bath == 0 || index >= n_levels * n_bath {
        return Err(Error::Index(format!(
            "composite index {index} outside 0..{}",
            n_levels * n_bath
        )));
    }
    Ok((index / n_bath, index % n_bath + 1))
}

pub(crate) fn check_capacity(dim: usize, cap: usize) -> Result<()> {
    if dim > cap {
        return Err(Error::Capacity { dim, cap });
    }
    Ok(())
}

/// `H = H_S ⊗ I + I ⊗ H_R + λ V` on the `n · N` dimensional product space.
#[derive(Debug, Clone)]
pub struct CompositeHamiltonian {
    system_levels: Vec<f64>,
    bath_energies: Vec<f64>,
    coupling: CMatrix,
    strength: f64,
    matrix: CMatrix,
}

impl CompositeHamiltonian {
    /// Assemble from explicit parts. `coupling` is used as given (no
    /// normalization); level energies need not be ordered.
    pub fn assemble(
        system_levels: &[f64],
        bath_energies: &[f64],
        coupling: CMatrix,
        strength: f64,
    ) -> Result<Self> {
        let n = system_levels.len();
        let nb = bath_energies.len();
        let dim = n * nb;
        if n == 0 || nb == 0 {
            return Err(Error::Shape("empty system or bath".into()));
        }
        if coupling.nrows() != dim || coupling.ncols() != dim {
            return Err(Error::Shape(format!(
                "coupling is {}x{}, composite dimension is {dim}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        if bath_energies.iter().chain(system_levels).any(|e| !e.is_finite()) {
            return Err(Error::Domain("energies must be finite".into()));
        }
        let scale = Complex64::new(strength, 0.0);
        let mut matrix = coupling.map(|v| v * scale);
        for (i, es) in system_levels.iter().enumerate() {
            for (j, eb) in bath_energies.iter().enumerate() {
                let p = i * nb + j;
                matrix[(p, p)] += Complex64::new(es + eb, 0.0);
            }
        }
        Ok(Self {
            system_levels: system_levels.to_vec(),
            bath_energies: bath_energies.to_vec(),
            coupling,
            strength,
            matrix,
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_levels(&self) -> usize {
        self.system_levels.len()
    }

    pub fn n_bath(&self) -> usize {
        self.bath_energies.len()
    }

    pub fn system_levels(&self) -> &[f64] {
        &self.system_levels
    }

    pub fn bath_energies(&self) -> &[f64] {
        &self.bath_energies
    }

    /// The unit-norm coupling `V` before scaling.
    pub fn coupling(&self) -> &CMatrix {
        &self.coupling
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// `H_S ⊗ I + I ⊗ H_R` alone.
    pub fn uncoupled(&self) -> CMatrix {
        let nb = self.n_bath();
        let energies: Vec<Complex64> = self
            .system_levels
            .iter()
            .flat_map(|es| self.bath_energies.iter().map(move |eb| Complex64::new(es + eb, 0.0)))
            .collect();
        debug_assert_eq!(energies.len(), self.n_levels() * nb);
        CMatrix::from_diagonal(&nalgebra::DVector::from_vec(energies))
    }
}

/// Build the composite Hamiltonian, generating the seeded unit-norm coupling.
pub fn build_hamiltonian(
    system: &SystemSpec,
    bath_energies: &[f64],
    coupling: &CouplingSpec,
    max_dimension: usize,
) -> Result<CompositeHamiltonian> {
    coupling.validate()?;
    let dim = system.n_levels() * bath_energies.len();
    check_capacity(dim, max_dimension)?;
    let v = coupling_matrix(system.n_levels(), bath_energies.len(), coupling.structure, coupling.seed)?;
    CompositeHamiltonian::assemble(system.level_energies(), bath_energies, v, coupling.strength)
}

/// Seeded Hermitian coupling with unit operator norm. Temperature plays no
/// part in its construction.
pub fn coupling_matrix(
    n_levels: usize,
    n_bath: usize,
    structure: CouplingStructure,
    seed: u64,
) -> Result<CMatrix> {
    let dim = n_levels * n_bath;
    if dim == 0 {
        return Err(Error::Shape("empty composite space".into()));
    }
    let v = match structure {
        CouplingStructure::RandomHermitian => {
            let mut stream = NormalStream::new(seed, label::COUPLING_RANDOM_HERMITIAN);
            random_hermitian(dim, &mut stream)
        }
        CouplingStructure::SystemFlip => {
            let mut flip = CMatrix::zeros(n_levels, n_levels);
            for i in 0..n_levels - 1 {
                flip[(i, i + 1)] = Complex64::new(1.0, 0.0);
                flip[(i + 1, i)] = Complex64::new(1.0, 0.0);
            }
            let mut stream = NormalStream::new(seed, label::COUPLING_BATH_OPERATOR);
            let bath_op = random_hermitian(n_bath, &mut stream);
            flip.kronecker(&bath_op)
        }
    };
    let norm = hermitian_operator_norm(&v);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Domain(format!("coupling has degenerate norm {norm}")));
    }
    Ok(v.map(|z| z / norm))
}

/// `(A + A†) / 2` with `A` filled row-major by complex normal deviates.
pub(crate) fn random_hermitian(dim: usize, stream: &mut NormalStream) -> CMatrix {
    let mut a = CMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            a[(r, c)] = stream.complex_normal();
        }
    }
    let adj = a.adjoint();
    (a + adj).map(|z| z * 0.5)
}

/// Spectral norm of a Hermitian matrix (largest |eigenvalue|).
pub fn hermitian_operator_norm(m: &CMatrix) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, e| acc.max(e.abs()))
}

/// Largest entrywise `|M - M†|`.
pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

fn max_abs_entry(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub(crate) fn is_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    (0..n).all(|c| (0..n).all(|r| r == c || m[(r, c)] == Complex64::new(0.0, 0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Composite,
    System,
}

#[derive(Debug, Clone)]
pub struct DensityMatrix {
    space: Space,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Wrap a square matrix. The physical invariants are checked by
    /// [`DensityMatrix::validate`], not here.
    pub fn new(space: Space, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Shape(format!(
                "density matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn validate(&self) -> Diagnostics {
        validate_density_matrix(&self.matrix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub trace_deviation: f64,
    pub hermiticity_deviation: f64,
    pub min_eigenvalue: f64,
    pub trace_violated: bool,
    pub hermiticity_violated: bool,
    pub positivity_violated: bool,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        !(self.trace_violated || self.hermiticity_violated || self.positivity_violated)
    }
}

/// Trace deviation, Hermiticity deviation and smallest eigenvalue of the
/// Hermitian part, with a flag for each tolerance that is exceeded.
pub fn validate_density_matrix(m: &CMatrix) -> Diagnostics {
    let trace_deviation = (m.trace() - Complex64::new(1.0, 0.0)).norm();
    let hermiticity_deviation = hermiticity_deviation(m);
    let min_eigenvalue = if is_diagonal(m) {
        m.diagonal().iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    } else {
        let herm = (m + m.adjoint()).map(|z| z * 0.5);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    };
    Diagnostics {
        trace_deviation,
        hermiticity_deviation,
        min_eigenvalue,
        trace_violated: !(trace_deviation <= TRACE_TOLERANCE),
        hermiticity_violated: !(hermiticity_deviation <= HERMITICITY_TOLERANCE),
        positivity_violated: !(min_eigenvalue >= -POSITIVITY_TOLERANCE),
    }
}

/// `(ρ_S)_{ab} = Σ_k ρ_{(a k),(b k)}` on a raw matrix.
pub fn partial_trace_matrix(m: &CMatrix, n_levels: usize, n_bath: usize) -> Result<CMatrix> {
    let dim = n_levels * n_bath;
    if m.nrows() != dim || m.ncols() != dim || dim == 0 {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, expected {dim}x{dim} for {n_levels} levels and {n_bath} bath states",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut out = CMatrix::zeros(n_levels, n_levels);
    for a in 0..n_levels {
        for b in 0..n_levels {
            let block = m.view((a * n_bath, b * n_bath), (n_bath, n_bath));
            out[(a, b)] = block.diagonal().sum();
        }
    }
    Ok(out)
}

/// Trace out the bath of a composite density matrix.
pub fn partial_trace_bath(rho: &DensityMatrix, n_levels: usize, n_bath: usize) -> Result<DensityMatrix> {
    if rho.space() != Space::Composite {
        return Err(Error::Shape("partial trace needs a composite density matrix".into()));
    }
    DensityMatrix::new(Space::System, partial_trace_matrix(rho.matrix(), n_levels, n_bath)?)
}

/// `ρ_S ⊗ ρ_R` in the system-major ordering.
pub fn tensor_product(system: &CMatrix, bath: &CMatrix) -> CMatrix {
    system.kronecker(bath)
}

/// Convert a real matrix to complex.
pub fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Maximum entry-wise distance between two equally sized matrices.
pub fn max_abs_difference(a: &CMatrix, b: &CMatrix) -> f64 {
    max_abs_entry(&(a - b))
}
