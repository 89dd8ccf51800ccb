use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use thermaleq::config::{field_docs, ExperimentConfig};
use thermaleq::laplace::{PartitionModel, DEFAULT_REFERENCE_BETA};
use thermaleq::runner::{
    oracle_default_config, run_laplace, run_oracle_check, run_single, run_sweep, LaplaceRequest,
};
use thermaleq::{Error, Result};

/// Exact-diagonalization thermalization experiments for a small system
/// coupled to a finite bath.
#[derive(Parser)]
#[command(name = "thermaleq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (N, β, λ, seed) point and write result.json.
    Simulate(RunArgs),
    /// Run every (N, β, λ, seed) combination and write sweep.csv / sweep.json.
    Sweep(RunArgs),
    /// Residue report for the pole series of the Laplace-space identity.
    Laplace(LaplaceArgs),
    /// Compare production results against brute-force oracles (D <= 64).
    OracleCheck(RunArgs),
    /// Print every config field with its default, then the default document.
    ConfigSchema,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides `threads`).
    #[arg(long, env = "THERMALEQ_THREADS")]
    threads: Option<usize>,
    /// Inverse temperatures (overrides `betas`).
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    /// Coupling strengths (overrides `lambdas`).
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Seeds (overrides `seeds`).
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Bath sizes (overrides `bath.n_states` and `bath_sizes`).
    #[arg(long, value_delimiter = ',')]
    n_states: Option<Vec<usize>>,
    /// Degeneracy tolerance (overrides `degeneracy_tolerance`).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Write density matrices as JSON.
    #[arg(long)]
    dump_matrices: bool,
}

impl RunArgs {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => base,
        };
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(b) = &self.beta {
            cfg.betas = b.clone();
        }
        if let Some(l) = &self.lambda {
            cfg.lambdas = l.clone();
        }
        if let Some(s) = &self.seed {
            cfg.seeds = s.clone();
        }
        if let Some(n) = &self.n_states {
            if let [single] = n.as_slice() {
                cfg.bath.n_states = *single;
                cfg.bath_sizes = None;
            } else {
                cfg.bath_sizes = Some(n.clone());
            }
        }
        if let Some(e) = self.epsilon {
            cfg.degeneracy_tolerance = Some(e);
        }
        if self.dump_matrices {
            cfg.output.dump_matrices = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    /// (1 + e^{-β g})^{N_p}
    TwoLevelGas,
    /// c β^{-3 N_p / 2}
    ClassicalIdealGas,
    /// Π (1 - e^{-β ω_i})^{-1}
    OscillatorBath,
    /// Σ e^{-β E_k}
    ExplicitSpectrum,
    /// Z̄ ≡ 1
    Constant,
}

#[derive(Args)]
struct LaplaceArgs {
    /// System gap δ.
    #[arg(long)]
    delta: f64,
    #[arg(long, value_enum)]
    model: ModelName,
    /// Largest partial-sum index K; poles n = -K..K-1 are used.
    #[arg(long)]
    nmax: usize,
    /// Transform variables x.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    x: Vec<f64>,
    /// Particle count N_p (two-level and classical gases).
    #[arg(long, default_value_t = 1)]
    particles: u32,
    /// Two-level-gas splitting; defaults to δ.
    #[arg(long)]
    gap: Option<f64>,
    /// Classical-gas prefactor c.
    #[arg(long, default_value_t = 1.0)]
    volume_factor: f64,
    /// Oscillator frequencies.
    #[arg(long, value_delimiter = ',')]
    frequencies: Vec<f64>,
    /// Explicit-spectrum energies.
    #[arg(long, value_delimiter = ',')]
    energies: Vec<f64>,
    /// Real β at which Z̄ is normalized to 1.
    #[arg(long, default_value_t = DEFAULT_REFERENCE_BETA)]
    reference_beta: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl LaplaceArgs {
    fn request(&self) -> LaplaceRequest {
        let model = match self.model {
            ModelName::TwoLevelGas => {
                PartitionModel::TwoLevelGas { particles: self.particles, gap: self.gap.unwrap_or(self.delta) }
            }
            ModelName::ClassicalIdealGas => {
                PartitionModel::ClassicalIdealGas { particles: self.particles, volume_factor: self.volume_factor }
            }
            ModelName::OscillatorBath => PartitionModel::OscillatorBath { frequencies: self.frequencies.clone() },
            ModelName::ExplicitSpectrum => PartitionModel::ExplicitSpectrum { energies: self.energies.clone() },
            ModelName::Constant => PartitionModel::ExplicitSpectrum { energies: vec![0.0] },
        };
        LaplaceRequest {
            delta: self.delta,
            model,
            k_max: self.nmax,
            xs: self.x.clone(),
            reference_beta: self.reference_beta,
        }
    }
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.resolve(ExperimentConfig::default())?;
            let out = run_single(&cfg)?;
            report_files(&out.files);
            Ok(out.all_ok)
        }
        Command::Sweep(args) => {
            let cfg = args.resolve(ExperimentConfig::default())?;
            let out = run_sweep(&cfg)?;
            report_files(&out.files);
            if !out.all_ok {
                eprintln!("some sweep points did not finish with status ok; see sweep.csv");
            }
            Ok(out.all_ok)
        }
        Command::Laplace(args) => {
            let req = args.request();
            let (report, out) = run_laplace(&req, &args.out)?;
            for s in &report.series {
                let exponent = s.behaviour.fitted_exponent.map_or("n/a".to_string(), |p| format!("{p:.4}"));
                println!("x = {:<8} verdict = {:<12?} fitted exponent = {exponent}", s.x, s.behaviour.verdict);
            }
            report_files(&out.files);
            Ok(out.all_ok)
        }
        Command::OracleCheck(args) => {
            let cfg = args.resolve(oracle_default_config())?;
            let (report, out) = run_oracle_check(&cfg)?;
            for r in &report.results {
                let mark = if r.passed { "PASS" } else { "FAIL" };
                println!("{mark} {:<42} {:<36} error {:.3e} <= {:.1e}", r.name, r.instance, r.error, r.threshold);
            }
            report_files(&out.files);
            Ok(out.all_ok)
        }
        Command::ConfigSchema => {
            for (field, doc) in field_docs() {
                println!("{field:<26} {doc}");
            }
            println!();
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default()).map_err(Error::from)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
