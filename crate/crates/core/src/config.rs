//! Experiment configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bath::{BathModel, BathSpec, Ensemble};
use crate::hilbert::{CouplingSpec, CouplingStructure, SystemSpec, DEFAULT_MAX_DIMENSION};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_levels: usize,
    /// Spacing of the equally spaced default levels.
    pub gap: f64,
    /// Explicit ascending level energies; overrides `n_levels` and `gap`.
    pub level_energies: Option<Vec<f64>>,
    /// Level the system is prepared in.
    pub initial_level: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { n_levels: 2, gap: 1.0, level_energies: None, initial_level: 0 }
    }
}

impl SystemConfig {
    pub fn spec(&self) -> Result<SystemSpec> {
        match &self.level_energies {
            Some(levels) => SystemSpec::new(levels.clone()),
            None => {
                if !(self.gap.is_finite() && self.gap > 0.0) {
                    return Err(Error::Config(format!("system.gap must be > 0, got {}", self.gap)));
                }
                SystemSpec::ladder(self.n_levels, self.gap)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BathKind {
    Ladder,
    RandomMatrix,
    SpinGas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    pub model: BathKind,
    pub n_states: usize,
    pub width: f64,
    /// Random-matrix symmetry class.
    pub ensemble: Ensemble,
    /// Spin-gas per-particle splittings (length log2 N).
    pub splittings: Option<Vec<f64>>,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            model: BathKind::RandomMatrix,
            n_states: 32,
            width: 2.0,
            ensemble: Ensemble::Gue,
            splittings: None,
        }
    }
}

impl BathConfig {
    pub fn spec(&self, n_states: usize, seed: u64) -> BathSpec {
        let model = match self.model {
            BathKind::Ladder => BathModel::Ladder,
            BathKind::RandomMatrix => BathModel::RandomMatrix { ensemble: self.ensemble },
            BathKind::SpinGas => BathModel::SpinGas { splittings: self.splittings.clone() },
        };
        BathSpec { model, n_states, width: self.width, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub structure: CouplingStructure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeAverageConfig {
    pub enabled: bool,
    /// Averaging window; `null` means `10^4 / Δ_min`.
    pub t_avg: Option<f64>,
    pub n_samples: usize,
}

impl Default for TimeAverageConfig {
    fn default() -> Self {
        Self { enabled: false, t_avg: None, n_samples: 1 << 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write density matrices as JSON `[re, im]` pairs.
    pub dump_matrices: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), dump_matrices: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub bath: BathConfig,
    pub coupling: CouplingConfig,
    pub betas: Vec<f64>,
    /// Absolute coupling strengths λ.
    pub lambdas: Vec<f64>,
    /// Each seed drives both the bath and the coupling streams.
    pub seeds: Vec<u64>,
    /// Optional list of bath sizes to sweep; overrides `bath.n_states`.
    pub bath_sizes: Option<Vec<usize>>,
    /// Degeneracy tolerance; `null` means `1e-9 · (ω_max - ω_min)`.
    pub degeneracy_tolerance: Option<f64>,
    pub time_average: TimeAverageConfig,
    /// Bins for the f(x) histogram; `null` means `max(1, N / 4)`.
    pub dos_bins: Option<usize>,
    pub output: OutputConfig,
    /// Worker threads; `null` means the `THERMALEQ_THREADS` variable, else 1.
    pub threads: Option<usize>,
    pub max_dimension: usize,
    pub max_beta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            bath: BathConfig::default(),
            coupling: CouplingConfig::default(),
            betas: vec![1.0],
            lambdas: vec![0.1],
            seeds: vec![1],
            bath_sizes: None,
            degeneracy_tolerance: None,
            time_average: TimeAverageConfig::default(),
            dos_bins: None,
            output: OutputConfig::default(),
            threads: None,
            max_dimension: DEFAULT_MAX_DIMENSION,
            max_beta: 1e6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn bath_sizes(&self) -> Vec<usize> {
        self.bath_sizes.clone().unwrap_or_else(|| vec![self.bath.n_states])
    }

    pub fn coupling_spec(&self, lambda: f64, seed: u64) -> CouplingSpec {
        CouplingSpec { strength: lambda, structure: self.coupling.structure, seed }
    }

    pub fn dos_bins_for(&self, n_states: usize) -> usize {
        self.dos_bins.unwrap_or((n_states / 4).max(1))
    }

    pub fn thread_count(&self) -> usize {
        self.threads.unwrap_or(1)
    }

    /// Check every field before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let system = self.system.spec()?;
        if self.system.initial_level >= system.n_levels() {
            return fail(format!(
                "system.initial_level = {} but the system has {} levels",
                self.system.initial_level,
                system.n_levels()
            ));
        }
        if self.betas.is_empty() || self.lambdas.is_empty() || self.seeds.is_empty() {
            return fail("betas, lambdas and seeds must all be non-empty".into());
        }
        if !(self.max_beta.is_finite() && self.max_beta > 0.0) {
            return fail(format!("max_beta must be finite and > 0, got {}", self.max_beta));
        }
        for &b in &self.betas {
            if !(b.is_finite() && (0.0..=self.max_beta).contains(&b)) {
                return fail(format!("β = {b} outside [0, max_beta = {}]", self.max_beta));
            }
        }
        for &l in &self.lambdas {
            if !(l.is_finite() && l >= 0.0) {
                return fail(format!("λ = {l} must be finite and >= 0"));
            }
        }
        let sizes = self.bath_sizes();
        if sizes.is_empty() {
            return fail("bath_sizes must be non-empty".into());
        }
        for &n in &sizes {
            self.bath.spec(n, 0).validate().map_err(|e| Error::Config(e.to_string()))?;
            let dim = n * system.n_levels();
            if dim > self.max_dimension {
                return fail(format!(
                    "composite dimension {dim} (N = {n}) exceeds max_dimension = {}",
                    self.max_dimension
                ));
            }
            if self.dos_bins_for(n) == 0 {
                return fail("dos_bins must be >= 1".into());
            }
        }
        if let Some(eps) = self.degeneracy_tolerance {
            if !(eps.is_finite() && eps >= 0.0) {
                return fail(format!("degeneracy_tolerance must be >= 0, got {eps}"));
            }
        }
        if self.time_average.n_samples < 2 {
            return fail("time_average.n_samples must be >= 2".into());
        }
        if let Some(t) = self.time_average.t_avg {
            if !(t.is_finite() && t > 0.0) {
                return fail(format!("time_average.t_avg must be > 0, got {t}"));
            }
        }
        if self.threads == Some(0) {
            return fail("threads must be >= 1".into());
        }
        Ok(())
    }
}

/// Field-by-field documentation emitted by `config-schema`.
pub fn field_docs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("system.n_levels", "number of system levels (default 2)"),
        ("system.gap", "spacing δ of the default equally spaced levels (default 1.0)"),
        ("system.level_energies", "explicit strictly ascending level energies; overrides n_levels and gap"),
        ("system.initial_level", "level the system is prepared in (default 0)"),
        ("bath.model", "ladder | random-matrix | spin-gas (default random-matrix)"),
        ("bath.n_states", "bath size N; spin-gas requires a power of two (default 32)"),
        ("bath.width", "spectral width W of the bath (default 2.0)"),
        ("bath.ensemble", "random-matrix symmetry class: goe | gue (default gue)"),
        ("bath.splittings", "spin-gas per-particle splittings; default W / log2(N) each"),
        ("coupling.structure", "random-hermitian | system-flip (default random-hermitian); unit operator norm before scaling by λ"),
        ("betas", "inverse temperatures (default [1.0])"),
        ("lambdas", "absolute coupling strengths λ (default [0.1])"),
        ("seeds", "seeds for the bath and coupling streams (default [1])"),
        ("bath_sizes", "optional list of N values to sweep; overrides bath.n_states"),
        ("degeneracy_tolerance", "frequency tolerance for degeneracy classes; null = 1e-9 · (ω_max − ω_min)"),
        ("time_average.enabled", "also compute the finite-time average oracle (default false)"),
        ("time_average.t_avg", "averaging window; null = 1e4 / Δ_min"),
        ("time_average.n_samples", "uniform time-grid points (default 65536)"),
        ("dos_bins", "bins of the f(x) histogram; null = max(1, N / 4)"),
        ("output.dir", "output directory (default \"out\")"),
        ("output.dump_matrices", "write density matrices as JSON [re, im] pairs, row-major (default false)"),
        ("threads", "worker threads; null = THERMALEQ_THREADS, else 1"),
        ("max_dimension", "largest accepted composite dimension n·N (default 4096)"),
        ("max_beta", "largest accepted inverse temperature (default 1e6)"),
    ]
}
