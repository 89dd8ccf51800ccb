//! Reservoir spectra, Gibbs weights and densities of states.

use serde::{Deserialize, Serialize};

use crate::hilbert::random_hermitian;
use crate::rng::{label, NormalStream};
use crate::{CMatrix, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ensemble {
    /// Real symmetric Gaussian matrices.
    Goe,
    /// Complex Hermitian Gaussian matrices.
    #[default]
    Gue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum BathModel {
    /// Equally spaced levels spanning `[0, W]`.
    Ladder,
    /// Eigenvalues of a seeded Gaussian matrix, affinely mapped onto `[0, W]`.
    RandomMatrix {
        #[serde(default)]
        ensemble: Ensemble,
    },
    /// Non-interacting gas of `k` two-level particles: every subset sum of
    /// the per-particle splittings. Without explicit splittings each
    /// particle gets `W / k`.
    SpinGas {
        #[serde(default)]
        splittings: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    #[serde(flatten)]
    pub model: BathModel,
    pub n_states: usize,
    pub width: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BathSpec {
    pub fn ladder(n_states: usize, width: f64) -> Self {
        Self { model: BathModel::Ladder, n_states, width, seed: 0 }
    }

    pub fn random_matrix(n_states: usize, width: f64, ensemble: Ensemble, seed: u64) -> Self {
        Self { model: BathModel::RandomMatrix { ensemble }, n_states, width, seed }
    }

    /// Spin gas of `k` particles (`N = 2^k`) with the given splittings, or
    /// equal splittings `width / k` when `splittings` is `None`.
    pub fn spin_gas(k: u32, width: f64, splittings: Option<Vec<f64>>) -> Self {
        Self {
            model: BathModel::SpinGas { splittings },
            n_states: 1usize << k,
            width,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::Domain("bath needs at least one state".into()));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Domain(format!(
                "bath spectral width must be finite and > 0, got {}",
                self.width
            )));
        }
        if let BathModel::SpinGas { splittings } = &self.model {
            if !self.n_states.is_power_of_two() {
                return Err(Error::Domain(format!(
                    "spin-gas bath size must be a power of two, got {}",
                    self.n_states
                )));
            }
            let k = self.n_states.trailing_zeros() as usize;
            if let Some(s) = splittings {
                if s.len() != k {
                    return Err(Error::Domain(format!(
                        "spin-gas with N = {} needs {k} splittings, got {}",
                        self.n_states,
                        s.len()
                    )));
                }
                if s.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Domain("spin-gas splittings must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Sorted bath energies `E_1 <= ... <= E_N` and the `BathSpec` that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BathSpectrum {
    energies: Vec<f64>,
    spec: BathSpec,
}

impl BathSpectrum {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn spec(&self) -> &BathSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

pub fn bath_spectrum(spec: &BathSpec) -> Result<BathSpectrum> {
    spec.validate()?;
    let n = spec.n_states;
    let w = spec.width;
    let mut energies = match &spec.model {
        BathModel::Ladder => {
            if n == 1 {
                vec![0.0]
            } else {
                (0..n).map(|j| j as f64 * w / (n - 1) as f64).collect()
            }
        }
        BathModel::RandomMatrix { ensemble } => {
            let mut stream = NormalStream::new(spec.seed, label::BATH_RANDOM_MATRIX);
            let m = match ensemble {
                Ensemble::Gue => random_hermitian(n, &mut stream),
                Ensemble::Goe => {
                    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
                    for r in 0..n {
                        for c in 0..n {
                            a[(r, c)] = stream.normal();
                        }
                    }
                    let sym = (&a + a.transpose()) * 0.5;
                    crate::hilbert::complexify(&sym)
                }
            };
            rescale_to_width(sorted_eigenvalues(m), w)
        }
        BathModel::SpinGas { splittings } => {
            let k = n.trailing_zeros() as usize;
            let s = splittings
                .clone()
                .unwrap_or_else(|| vec![if k == 0 { 0.0 } else { w / k as f64 }; k]);
            (0..n)
                .map(|mask| {
                    s.iter()
                        .enumerate()
                        .filter(|(bit, _)| mask >> bit & 1 == 1)
                        .map(|(_, e)| e)
                        .sum()
                })
                .collect()
        }
    };
    energies.sort_by(f64::total_cmp);
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::Domain("bath spectrum is not finite".into()));
    }
    Ok(BathSpectrum { energies, spec: spec.clone() })
}

fn sorted_eigenvalues(m: CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn rescale_to_width(ev: Vec<f64>, width: f64) -> Vec<f64> {
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if hi <= lo {
        return vec![0.0; ev.len()];
    }
    let last = ev.len() - 1;
    ev.iter()
        .enumerate()
        .map(|(i, e)| if i == last { width } else { (e - lo) / (hi - lo) * width })
        .collect()
}

/// Gibbs weights `A_j` of the bath at inverse temperature `β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalWeights {
    beta: f64,
    weights: Vec<f64>,
    energy_shift: f64,
    shifted_partition: f64,
}

impl ThermalWeights {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E_min`, the shift used when exponentiating.
    pub fn energy_shift(&self) -> f64 {
        self.energy_shift
    }

    /// `Σ_j exp(-β (E_j - E_min))`.
    pub fn shifted_partition(&self) -> f64 {
        self.shifted_partition
    }

    /// `Z = Σ_j exp(-β E_j)` when it is representable as a finite positive
    /// double.
    pub fn partition(&self) -> Option<f64> {
        let z = (-self.beta * self.energy_shift).exp() * self.shifted_partition;
        (z.is_finite() && z > 0.0).then_some(z)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn gibbs_weights(spectrum: &BathSpectrum, beta: f64) -> Result<ThermalWeights> {
    gibbs_weights_for(spectrum.energies(), beta)
}

/// [`gibbs_weights`] on a bare energy list.
pub fn gibbs_weights_for(energies: &[f64], beta: f64) -> Result<ThermalWeights> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Domain(format!(
            "inverse temperature must be finite and >= 0, got {beta}"
        )));
    }
    if energies.is_empty() {
        return Err(Error::Domain("no bath energies".into()));
    }
    let shift = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let boltzmann: Vec<f64> = energies.iter().map(|e| (-beta * (e - shift)).exp()).collect();
    let z: f64 = boltzmann.iter().sum();
    Ok(ThermalWeights {
        beta,
        weights: boltzmann.iter().map(|b| b / z).collect(),
        energy_shift: shift,
        shifted_partition: z,
    })
}

/// Histogram estimate of a density of states on equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityOfStates {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts divided by bin width.
    pub density: Vec<f64>,
    pub total: usize,
}

impl DensityOfStates {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self, bin: usize) -> f64 {
        self.edges[bin + 1] - self.edges[bin]
    }

    /// Bin holding `energy`; the upper edge belongs to the last bin.
    pub fn bin_of(&self, energy: f64) -> Option<usize> {
        let lo = self.edges[0];
        let hi = self.edges[self.edges.len() - 1];
        if !(energy >= lo && energy <= hi) {
            return None;
        }
        let w = (hi - lo) / self.n_bins() as f64;
        let idx = ((energy - lo) / w).floor() as usize;
        Some(idx.min(self.n_bins() - 1))
    }

    /// `Σ Ω_b Δx_b`, which equals the number of states.
    pub fn integral(&self) -> f64 {
        (0..self.n_bins()).map(|b| self.density[b] * self.bin_width(b)).sum()
    }
}

/// Histogram with `n_bins` equal bins spanning `[min E, max E]`. A fully
/// degenerate spectrum gets a single bin of width 1 centred on the level.
pub fn density_of_states(energies: &[f64], n_bins: usize) -> Result<DensityOfStates> {
    if n_bins == 0 {
        return Err(Error::Domain("need at least one bin".into()));
    }
    if energies.is_empty() {
        return Err(Error::Domain("need at least one energy".into()));
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::Domain("energies must be finite".into()));
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (edges, n_bins) = if hi > lo {
        let w = (hi - lo) / n_bins as f64;
        let mut edges: Vec<f64> = (0..n_bins).map(|b| lo + b as f64 * w).collect();
        edges.push(hi);
        (edges, n_bins)
    } else {
        (vec![lo - 0.5, lo + 0.5], 1)
    };
    let mut dos = DensityOfStates {
        edges,
        counts: vec![0; n_bins],
        density: vec![0.0; n_bins],
        total: energies.len(),
    };
    for &e in energies {
        let b = dos.bin_of(e).expect("energy inside histogram range");
        dos.counts[b] += 1;
    }
    for b in 0..n_bins {
        dos.density[b] = dos.counts[b] as f64 / dos.bin_width(b);
    }
    Ok(dos)
}
