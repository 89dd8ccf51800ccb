//! Experiment orchestration: single runs, sweeps, Laplace reports and the
//! oracle check, plus the files they write.
//!
//! Result files hold no wall-clock data, so a rerun of the same config
//! reproduces them byte for byte. Timings go to a separate `timings.csv`.
//! The config echoed in result headers omits `threads` and `output.dir`,
//! which change where and how fast a run happens but not what it computes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::bath::{bath_spectrum, density_of_states, gibbs_weights, BathSpectrum};
use crate::config::ExperimentConfig;
use crate::dynamics::{
    default_degeneracy_tolerance, degeneracy_classes, diagonal_ensemble, eigendecompose, evolve,
    f_binned, f_weights_between, initial_composite_state, time_average, DegeneracyClasses,
    EigenSystem, ReducedKernel,
};
use crate::hilbert::{
    build_hamiltonian, hermitian_operator_norm, max_abs_difference, partial_trace_bath,
    partial_trace_matrix, CompositeHamiltonian, DensityMatrix, Diagnostics, Space, SystemSpec,
};
use crate::laplace::{
    deviation_report_for_levels, p0_quadrature, residue_partial_sums, LaplaceReport,
    NormalizedPartition, PartitionModel,
};
use crate::rng::NormalStream;
use crate::{oracles, CMatrix, Error, Result, VERSION};

/// Write non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`,
/// which plain JSON cannot represent.
pub fn serialize_extended_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn serialize_extended_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => serialize_extended_f64(x, s),
        None => s.serialize_none(),
    }
}

/// Consistency tolerance for the population identity and the sum rule.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-10;

/// Everything about one `(N, λ, seed)` instance that does not depend on β.
pub struct PreparedInstance {
    pub n_states: usize,
    pub lambda: f64,
    pub seed: u64,
    pub system: SystemSpec,
    pub spectrum: BathSpectrum,
    pub hamiltonian: CompositeHamiltonian,
    pub eigen: EigenSystem,
    pub classes: DegeneracyClasses,
    /// `f` for the configured initial level, one vector per readout level.
    pub f_by_level: Vec<Vec<f64>>,
    pub unitarity_residual: f64,
    pub sum_rule_residual: f64,
}

pub fn prepare(cfg: &ExperimentConfig, n_states: usize, lambda: f64, seed: u64) -> Result<PreparedInstance> {
    let system = cfg.system.spec()?;
    let spectrum = bath_spectrum(&cfg.bath.spec(n_states, seed))?;
    let hamiltonian = build_hamiltonian(
        &system,
        spectrum.energies(),
        &cfg.coupling_spec(lambda, seed),
        cfg.max_dimension,
    )?;
    let eigen = eigendecompose(&hamiltonian)?;
    let tolerance = cfg
        .degeneracy_tolerance
        .unwrap_or_else(|| default_degeneracy_tolerance(eigen.frequencies()));
    let classes = degeneracy_classes(eigen.frequencies(), tolerance);
    let f_by_level = (0..system.n_levels())
        .map(|n| f_weights_between(&eigen, &classes, cfg.system.initial_level, n))
        .collect::<Result<Vec<_>>>()?;
    let sum_rule_residual = (0..n_states)
        .map(|j| (f_by_level.iter().map(|f| f[j]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let unitarity_residual = eigen.unitarity_error();
    Ok(PreparedInstance {
        n_states,
        lambda,
        seed,
        system,
        spectrum,
        hamiltonian,
        eigen,
        classes,
        f_by_level,
        unitarity_residual,
        sum_rule_residual,
    })
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub n_states: usize,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub status: String,
    pub p0_diag: f64,
    pub p0_gibbs: f64,
    pub deviation: f64,
    #[serde(serialize_with = "serialize_extended_f64")]
    pub beta_eff: f64,
    /// `Σ_j A_j f_j`.
    pub weighted_f_sum: f64,
    pub identity_residual: f64,
    pub sum_rule_residual: f64,
    pub unitarity_residual: f64,
    pub trace_deviation: f64,
    pub hermiticity_deviation: f64,
    pub min_eigenvalue: f64,
    pub p0_quadrature: f64,
    pub quadrature_relative_error: f64,
    pub n_classes: usize,
    pub max_class_size: usize,
    pub coherence_part: f64,
    #[serde(serialize_with = "serialize_extended_opt")]
    pub p0_time_average: Option<f64>,
    #[serde(serialize_with = "serialize_extended_opt")]
    pub time_average_error: Option<f64>,
    #[serde(serialize_with = "serialize_extended_opt")]
    pub t_avg: Option<f64>,
}

impl Record {
    fn failed(n_states: usize, beta: f64, lambda: f64, seed: u64, err: &Error) -> Self {
        Record {
            n_states,
            beta,
            lambda,
            seed,
            status: format!("error: {err}"),
            p0_diag: f64::NAN,
            p0_gibbs: f64::NAN,
            deviation: f64::NAN,
            beta_eff: f64::NAN,
            weighted_f_sum: f64::NAN,
            identity_residual: f64::NAN,
            sum_rule_residual: f64::NAN,
            unitarity_residual: f64::NAN,
            trace_deviation: f64::NAN,
            hermiticity_deviation: f64::NAN,
            min_eigenvalue: f64::NAN,
            p0_quadrature: f64::NAN,
            quadrature_relative_error: f64::NAN,
            n_classes: 0,
            max_class_size: 0,
            coherence_part: f64::NAN,
            p0_time_average: None,
            time_average_error: None,
            t_avg: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Worst of several diagnostics.
fn worst(diags: &[Diagnostics]) -> (f64, f64, f64, bool) {
    let trace = diags.iter().map(|d| d.trace_deviation).fold(0.0, f64::max);
    let herm = diags.iter().map(|d| d.hermiticity_deviation).fold(0.0, f64::max);
    let min_eig = diags.iter().map(|d| d.min_eigenvalue).fold(f64::INFINITY, f64::min);
    (trace, herm, min_eig, diags.iter().all(Diagnostics::is_valid))
}

/// Averaging window for the finite-time oracle: `10^4 / Δ_min`, with `Δ_min`
/// taken above the default degeneracy tolerance.
pub fn default_averaging_time(kernel: &ReducedKernel, frequencies: &[f64]) -> f64 {
    let floor = default_degeneracy_tolerance(frequencies);
    match kernel.smallest_weighted_gap(frequencies, floor) {
        Some(gap) => 1e4 / gap,
        None => 1.0,
    }
}

/// Full β-dependent evaluation of a prepared instance.
pub struct Evaluation {
    pub record: Record,
    pub initial: DensityMatrix,
    pub composite: DensityMatrix,
    pub system: DensityMatrix,
}

pub fn evaluate(cfg: &ExperimentConfig, inst: &PreparedInstance, beta: f64) -> Result<Evaluation> {
    let n = inst.system.n_levels();
    let weights = gibbs_weights(&inst.spectrum, beta)?;
    let rho0 = initial_composite_state(n, cfg.system.initial_level, &weights)?;
    let de = diagonal_ensemble(&inst.eigen, &rho0, &inst.classes)?;

    let f0 = &inst.f_by_level[0];
    let weighted_f_sum: f64 = weights.weights().iter().zip(f0).map(|(a, f)| a * f).sum();
    let identity_residual = (de.p0 - weighted_f_sum).abs();
    let dev = deviation_report_for_levels(de.p0, beta, inst.system.level_energies());

    let energies = inst.spectrum.energies();
    let dos = density_of_states(energies, cfg.dos_bins_for(inst.n_states))?;
    let p0_quad = p0_quadrature(&f_binned(f0, energies, &dos)?, beta)?;
    let quad_err = if weighted_f_sum != 0.0 { (p0_quad - weighted_f_sum).abs() / weighted_f_sum.abs() } else { (p0_quad - weighted_f_sum).abs() };

    let mut diags = vec![rho0.validate(), de.composite.validate(), de.system.validate()];
    let (mut p0_ta, mut ta_err, mut t_avg) = (None, None, None);
    if cfg.time_average.enabled {
        let kernel = ReducedKernel::new(&rho0, &inst.eigen)?;
        let t = cfg
            .time_average
            .t_avg
            .unwrap_or_else(|| default_averaging_time(&kernel, inst.eigen.frequencies()));
        let avg = time_average(&rho0, &inst.eigen, t, cfg.time_average.n_samples)?;
        diags.push(avg.validate());
        let p = avg.matrix()[(0, 0)].re;
        p0_ta = Some(p);
        ta_err = Some((p - de.p0).abs());
        t_avg = Some(t);
    }
    let (trace, herm, min_eig, valid) = worst(&diags);
    let consistent = identity_residual <= CONSISTENCY_TOLERANCE && inst.sum_rule_residual <= CONSISTENCY_TOLERANCE;
    let status = if valid && consistent { "ok" } else { "inconsistent" };

    let record = Record {
        n_states: inst.n_states,
        beta,
        lambda: inst.lambda,
        seed: inst.seed,
        status: status.to_string(),
        p0_diag: de.p0,
        p0_gibbs: dev.p0_gibbs,
        deviation: dev.deviation,
        beta_eff: dev.beta_eff,
        weighted_f_sum,
        identity_residual,
        sum_rule_residual: inst.sum_rule_residual,
        unitarity_residual: inst.unitarity_residual,
        trace_deviation: trace,
        hermiticity_deviation: herm,
        min_eigenvalue: min_eig,
        p0_quadrature: p0_quad,
        quadrature_relative_error: quad_err,
        n_classes: inst.classes.len(),
        max_class_size: inst.classes.max_size(),
        coherence_part: de.coherence_part,
        p0_time_average: p0_ta,
        time_average_error: ta_err,
        t_avg,
    };
    Ok(Evaluation { record, initial: rho0, composite: de.composite, system: de.system })
}

#[derive(Serialize)]
struct Header<'a> {
    version: &'a str,
    config: serde_json::Value,
}

impl Header<'_> {
    fn of(cfg: &ExperimentConfig) -> Result<Self> {
        let mut config = serde_json::to_value(cfg)?;
        if let Some(obj) = config.as_object_mut() {
            obj.remove("threads");
            if let Some(out) = obj.get_mut("output").and_then(|o| o.as_object_mut()) {
                out.remove("dir");
            }
        }
        Ok(Header { version: VERSION, config })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub task: String,
    pub n_states: usize,
    pub lambda: f64,
    pub seed: u64,
    pub beta: Option<f64>,
    pub threads: usize,
    pub seconds: f64,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Flat row-major list of `[re, im]` pairs.
pub fn matrix_pairs(m: &CMatrix) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            out.push([z.re, z.im]);
        }
    }
    out
}

#[derive(Serialize)]
struct MatrixDump {
    space: Space,
    rows: usize,
    cols: usize,
    entries: Vec<[f64; 2]>,
}

impl MatrixDump {
    fn of(rho: &DensityMatrix) -> Self {
        let m = rho.matrix();
        MatrixDump { space: rho.space(), rows: m.nrows(), cols: m.ncols(), entries: matrix_pairs(m) }
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    energy: f64,
}

#[derive(Serialize)]
struct SingleReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    record: &'a Record,
    system_density_matrix: Vec<[f64; 2]>,
    degeneracy_tolerance: f64,
    class_size_histogram: Vec<(usize, usize)>,
    max_class_spread: f64,
    f_weights: &'a [f64],
    f_weights_by_level: &'a [Vec<f64>],
    hamiltonian_norm: f64,
}

/// Paths written by a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub all_ok: bool,
}

fn single_value<T: Copy>(name: &str, values: &[T]) -> Result<T> {
    match values {
        [v] => Ok(*v),
        _ => Err(Error::Config(format!(
            "simulate needs exactly one value in `{name}` ({} given); use `sweep` for lists",
            values.len()
        ))),
    }
}

pub fn run_single(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let beta = single_value("betas", &cfg.betas)?;
    let lambda = single_value("lambdas", &cfg.lambdas)?;
    let seed = single_value("seeds", &cfg.seeds)?;
    let n_states = single_value("bath_sizes", &cfg.bath_sizes())?;
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;

    let threads = cfg.thread_count();
    let (inst, ev, prep_seconds, eval_seconds) = build_pool(threads)?.install(|| -> Result<_> {
        let t0 = Instant::now();
        let inst = prepare(cfg, n_states, lambda, seed)?;
        let prep_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let ev = evaluate(cfg, &inst, beta)?;
        Ok((inst, ev, prep_seconds, t1.elapsed().as_secs_f64()))
    })?;

    let mut files = Vec::new();
    let report = SingleReport {
        header: Header::of(cfg)?,
        record: &ev.record,
        system_density_matrix: matrix_pairs(ev.system.matrix()),
        degeneracy_tolerance: inst.classes.tolerance(),
        class_size_histogram: inst.classes.size_histogram().into_iter().collect(),
        max_class_spread: inst.classes.max_spread(inst.eigen.frequencies()),
        f_weights: &inst.f_by_level[0],
        f_weights_by_level: &inst.f_by_level,
        hamiltonian_norm: hermitian_operator_norm(inst.hamiltonian.matrix()),
    };
    let path = dir.join("result.json");
    write_json(&path, &report)?;
    files.push(path);

    let rows: Vec<SpectrumRow> = inst
        .spectrum
        .energies()
        .iter()
        .enumerate()
        .map(|(j, e)| SpectrumRow { index: j + 1, energy: *e })
        .collect();
    let path = dir.join("bath_spectrum.csv");
    write_csv(&path, &rows)?;
    files.push(path);

    if cfg.output.dump_matrices {
        for (name, rho) in [
            ("rho_initial.json", &ev.initial),
            ("rho_composite.json", &ev.composite),
            ("rho_system.json", &ev.system),
        ] {
            let path = dir.join(name);
            write_json(&path, &MatrixDump::of(rho))?;
            files.push(path);
        }
    }

    let timings = [
        Timing { task: "prepare".into(), n_states, lambda, seed, beta: None, threads, seconds: prep_seconds },
        Timing { task: "evaluate".into(), n_states, lambda, seed, beta: Some(beta), threads, seconds: eval_seconds },
    ];
    let path = dir.join("timings.csv");
    write_csv(&path, &timings)?;
    files.push(path);
    Ok(RunOutput { files, all_ok: ev.record.is_ok() })
}

/// Records for every `(N, β, λ, seed)`, ordered by those indices.
pub struct SweepResult {
    pub records: Vec<Record>,
    pub timings: Vec<Timing>,
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

/// Compute a sweep without writing files.
pub fn sweep_records(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let sizes = cfg.bath_sizes();
    let mut groups = Vec::new();
    for &n in &sizes {
        for &lambda in &cfg.lambdas {
            for &seed in &cfg.seeds {
                groups.push((n, lambda, seed));
            }
        }
    }
    let threads = cfg.thread_count();
    let pool = build_pool(threads)?;
    let per_group: Vec<(Vec<Record>, Vec<Timing>)> = pool.install(|| {
        groups
            .par_iter()
            .map(|&(n, lambda, seed)| {
                let mut timings = Vec::new();
                let t0 = Instant::now();
                let prepared = prepare(cfg, n, lambda, seed);
                timings.push(Timing {
                    task: "prepare".into(),
                    n_states: n,
                    lambda,
                    seed,
                    beta: None,
                    threads,
                    seconds: t0.elapsed().as_secs_f64(),
                });
                let records = cfg
                    .betas
                    .iter()
                    .map(|&beta| {
                        let t = Instant::now();
                        let r = match &prepared {
                            Ok(inst) => evaluate(cfg, inst, beta)
                                .map(|e| e.record)
                                .unwrap_or_else(|e| Record::failed(n, beta, lambda, seed, &e)),
                            Err(e) => Record::failed(n, beta, lambda, seed, e),
                        };
                        timings.push(Timing {
                            task: "evaluate".into(),
                            n_states: n,
                            lambda,
                            seed,
                            beta: Some(beta),
                            threads,
                            seconds: t.elapsed().as_secs_f64(),
                        });
                        r
                    })
                    .collect();
                (records, timings)
            })
            .collect()
    });

    // groups are (N, λ, seed)-major; records go out (N, β, λ, seed)-major
    let (nl, ns, nb) = (cfg.lambdas.len(), cfg.seeds.len(), cfg.betas.len());
    let mut records = Vec::with_capacity(groups.len() * nb);
    for ni in 0..sizes.len() {
        for bi in 0..nb {
            for li in 0..nl {
                for si in 0..ns {
                    let g = (ni * nl + li) * ns + si;
                    records.push(per_group[g].0[bi].clone());
                }
            }
        }
    }
    let timings = per_group.into_iter().flat_map(|(_, t)| t).collect();
    Ok(SweepResult { records, timings })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationCurve {
    pub n_states: usize,
    pub lambda: f64,
    pub seed: u64,
    pub betas: Vec<f64>,
    pub deviations: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeTrend {
    pub n_states: usize,
    pub beta: f64,
    pub lambda: f64,
    pub mean_deviation: f64,
    pub mean_abs_deviation: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub records: usize,
    pub failed: usize,
    pub max_abs_deviation: f64,
    pub max_identity_residual: f64,
    pub max_sum_rule_residual: f64,
    pub curves: Vec<DeviationCurve>,
    pub size_trend: Vec<SizeTrend>,
}

pub fn summarize(cfg: &ExperimentConfig, records: &[Record]) -> SweepSummary {
    let ok: Vec<&Record> = records.iter().filter(|r| r.is_ok()).collect();
    let max_of = |f: fn(&Record) -> f64| ok.iter().map(|r| f(r)).fold(0.0, f64::max);
    let mut curves = Vec::new();
    let mut size_trend = Vec::new();
    for &n in &cfg.bath_sizes() {
        for &lambda in &cfg.lambdas {
            for &seed in &cfg.seeds {
                let pts: Vec<&Record> = records
                    .iter()
                    .filter(|r| r.n_states == n && r.lambda == lambda && r.seed == seed)
                    .collect();
                curves.push(DeviationCurve {
                    n_states: n,
                    lambda,
                    seed,
                    betas: pts.iter().map(|r| r.beta).collect(),
                    deviations: pts.iter().map(|r| r.deviation).collect(),
                });
            }
            for &beta in &cfg.betas {
                let devs: Vec<f64> = ok
                    .iter()
                    .filter(|r| r.n_states == n && r.lambda == lambda && r.beta == beta)
                    .map(|r| r.deviation)
                    .collect();
                let count = devs.len().max(1) as f64;
                size_trend.push(SizeTrend {
                    n_states: n,
                    beta,
                    lambda,
                    mean_deviation: devs.iter().sum::<f64>() / count,
                    mean_abs_deviation: devs.iter().map(|d| d.abs()).sum::<f64>() / count,
                    samples: devs.len(),
                });
            }
        }
    }
    SweepSummary {
        records: records.len(),
        failed: records.len() - ok.len(),
        max_abs_deviation: max_of(|r| r.deviation.abs()),
        max_identity_residual: max_of(|r| r.identity_residual),
        max_sum_rule_residual: max_of(|r| r.sum_rule_residual),
        curves,
        size_trend,
    }
}

#[derive(Serialize)]
struct SweepReport<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    summary: &'a SweepSummary,
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let result = sweep_records(cfg)?;
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let summary = summarize(cfg, &result.records);
    let mut files = Vec::new();
    let path = dir.join("sweep.csv");
    write_csv(&path, &result.records)?;
    files.push(path);
    let path = dir.join("sweep.json");
    write_json(&path, &SweepReport { header: Header::of(cfg)?, summary: &summary })?;
    files.push(path);
    let path = dir.join("timings.csv");
    write_csv(&path, &result.timings)?;
    files.push(path);
    Ok(RunOutput { files, all_ok: summary.failed == 0 })
}

/// Inputs of a Laplace report.
#[derive(Debug, Clone, Serialize)]
pub struct LaplaceRequest {
    pub delta: f64,
    pub model: PartitionModel,
    pub k_max: usize,
    pub xs: Vec<f64>,
    pub reference_beta: f64,
}

#[derive(Serialize)]
struct LaplaceFile<'a> {
    version: &'a str,
    request: &'a LaplaceRequest,
    report: &'a LaplaceReport,
}

#[derive(Serialize)]
struct LaplaceRow {
    x: f64,
    n: i64,
    /// Partial-sum index `K` that first includes this term.
    k: usize,
    pole_im: f64,
    formula_re: Option<f64>,
    formula_im: Option<f64>,
    numeric_re: Option<f64>,
    numeric_im: Option<f64>,
    relative_difference: Option<f64>,
    partial_sum_re: f64,
    partial_sum_im: f64,
    excluded: Option<String>,
}

pub fn laplace_report(req: &LaplaceRequest) -> Result<LaplaceReport> {
    let zbar = NormalizedPartition::new(req.model.clone(), req.reference_beta)?;
    residue_partial_sums(&req.xs, req.delta, &zbar, req.k_max)
}

pub fn run_laplace(req: &LaplaceRequest, dir: &Path) -> Result<(LaplaceReport, RunOutput)> {
    let report = laplace_report(req)?;
    ensure_dir(dir)?;
    let mut files = Vec::new();
    let path = dir.join("laplace.json");
    write_json(&path, &LaplaceFile { version: VERSION, request: req, report: &report })?;
    files.push(path);

    let mut rows = Vec::new();
    for s in &report.series {
        for t in &s.terms {
            let k = if t.n >= 0 { t.n as usize + 1 } else { (-t.n) as usize };
            let ps = s.partial_sums.iter().find(|p| p.k == k).map(|p| p.value);
            let ps = ps.unwrap_or_default();
            rows.push(LaplaceRow {
                x: s.x,
                n: t.n,
                k,
                pole_im: t.pole_im,
                formula_re: t.formula.map(|z| z.re),
                formula_im: t.formula.map(|z| z.im),
                numeric_re: t.numeric.map(|z| z.re),
                numeric_im: t.numeric.map(|z| z.im),
                relative_difference: t.relative_difference,
                partial_sum_re: ps.re,
                partial_sum_im: ps.im,
                excluded: t.excluded.clone(),
            });
        }
    }
    let path = dir.join("laplace.csv");
    write_csv(&path, &rows)?;
    files.push(path);
    Ok((report, RunOutput { files, all_ok: true }))
}

/// Largest composite dimension the oracle check accepts.
pub const ORACLE_MAX_DIMENSION: usize = 64;
/// Agreement required between the diagonal ensemble and the time average.
pub const TIME_AVERAGE_TOLERANCE: f64 = 1e-3;
const ORACLE_TIMES: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub name: String,
    pub instance: String,
    pub error: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub results: Vec<OracleResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    fn push(&mut self, name: &str, instance: &str, error: f64, threshold: f64) {
        self.results.push(OracleResult {
            name: name.into(),
            instance: instance.into(),
            error,
            threshold,
            // NaN never passes
            passed: error <= threshold,
        });
    }
}

/// Run every brute-force oracle on each configured instance.
pub fn oracle_check(cfg: &ExperimentConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let n_levels = cfg.system.spec()?.n_levels();
    for &n in &cfg.bath_sizes() {
        if n * n_levels > ORACLE_MAX_DIMENSION {
            return Err(Error::Capacity { dim: n * n_levels, cap: ORACLE_MAX_DIMENSION });
        }
    }
    let mut report = OracleReport { results: Vec::new() };
    for &n in &cfg.bath_sizes() {
        for &lambda in &cfg.lambdas {
            for &seed in &cfg.seeds {
                let inst = prepare(cfg, n, lambda, seed)?;
                check_instance(cfg, &inst, &mut report)?;
            }
        }
    }

    let delta = cfg.system.spec()?.gap();
    let zbar = NormalizedPartition::new(PartitionModel::ClassicalIdealGas { particles: 2, volume_factor: 1.0 }, 1.0)?;
    let lr = residue_partial_sums(&[0.5, 1.0, 2.0], delta, &zbar, 8)?;
    report.push("laplace/pole-denominator", "classical-ideal-gas N_p=2", lr.max_denominator_abs(), 1e-12);
    report.push("laplace/residue-numeric-limit", "classical-ideal-gas N_p=2", lr.max_relative_difference(), 1e-6);
    Ok(report)
}

fn check_instance(cfg: &ExperimentConfig, inst: &PreparedInstance, report: &mut OracleReport) -> Result<()> {
    let eig = &inst.eigen;
    let h = inst.hamiltonian.matrix();
    let hnorm = hermitian_operator_norm(h).max(1.0);
    let nl = inst.system.n_levels();
    let nb = inst.n_states;
    let tag = format!("N={nb} lambda={} seed={}", inst.lambda, inst.seed);

    report.push("eigen/reconstruction", &tag, max_abs_difference(&eig.reconstruct(), h) / hnorm, 1e-9);
    report.push("eigen/residual", &tag, eig.max_residual(h) / hnorm, 1e-8);
    report.push("eigen/unitarity", &tag, inst.unitarity_residual, 1e-9);
    report.push("f/sum-rule", &tag, inst.sum_rule_residual, CONSISTENCY_TOLERANCE);
    let mut f_loop_err: f64 = 0.0;
    for (target, f) in inst.f_by_level.iter().enumerate() {
        let brute = oracles::f_weights_loop(eig, &inst.classes, cfg.system.initial_level, target);
        for (a, b) in f.iter().zip(&brute) {
            f_loop_err = f_loop_err.max((a - b).abs());
        }
    }
    report.push("f/quadruple-loop", &tag, f_loop_err, 1e-12);

    let mut times = NormalStream::new(inst.seed, "oracle/times");
    for &beta in &cfg.betas {
        let btag = format!("{tag} beta={beta}");
        let mut run_cfg = cfg.clone();
        run_cfg.time_average.enabled = true;
        let ev = evaluate(&run_cfg, inst, beta)?;
        let rec = &ev.record;
        report.push("diagonal-ensemble/population-identity", &btag, rec.identity_residual, CONSISTENCY_TOLERANCE);
        report.push(
            "diagonal-ensemble/time-average",
            &btag,
            rec.time_average_error.unwrap_or(f64::NAN),
            TIME_AVERAGE_TOLERANCE,
        );

        let pt = partial_trace_matrix(ev.composite.matrix(), nl, nb)?;
        let brute = oracles::partial_trace_loop(ev.composite.matrix(), nl, nb);
        report.push("partial-trace/index-loop", &btag, max_abs_difference(&pt, &brute), 1e-14);

        let mut prop_err: f64 = 0.0;
        let mut diags = vec![ev.initial.validate(), ev.composite.validate(), ev.system.validate()];
        let scale = 20.0 / inst.system.gap();
        for _ in 0..ORACLE_TIMES {
            let t = scale * times.uniform();
            let rho_t = evolve(&ev.initial, eig, t)?;
            let brute = oracles::propagate_by_exponential(h, ev.initial.matrix(), t);
            prop_err = prop_err.max(max_abs_difference(rho_t.matrix(), &brute));
            diags.push(rho_t.validate());
            diags.push(partial_trace_bath(&rho_t, nl, nb)?.validate());
        }
        report.push("evolve/matrix-exponential", &btag, prop_err, 1e-8);
        let (trace, herm, min_eig, _) = worst(&diags);
        report.push("density-matrix/trace", &btag, trace, crate::hilbert::TRACE_TOLERANCE);
        report.push("density-matrix/hermiticity", &btag, herm, crate::hilbert::HERMITICITY_TOLERANCE);
        report.push("density-matrix/positivity", &btag, (-min_eig).max(0.0), crate::hilbert::POSITIVITY_TOLERANCE);
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleFile<'a> {
    #[serde(flatten)]
    header: Header<'a>,
    passed: bool,
    results: &'a [OracleResult],
}

pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<(OracleReport, RunOutput)> {
    let report = oracle_check(cfg)?;
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let path = dir.join("oracle_check.json");
    write_json(
        &path,
        &OracleFile { header: Header::of(cfg)?, passed: report.passed(), results: &report.results },
    )?;
    let all_ok = report.passed();
    Ok((report, RunOutput { files: vec![path], all_ok }))
}

/// Small default instance for `oracle-check` without a config file.
pub fn oracle_default_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.bath.n_states = 16;
    cfg.seeds = vec![1, 2];
    cfg.betas = vec![0.5, 2.0];
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BathKind;
    use crate::hilbert::CouplingStructure;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.bath.n_states = 8;
        cfg.betas = vec![0.0, 1.0];
        cfg.lambdas = vec![0.0, 0.2];
        cfg.seeds = vec![3, 3];
        cfg
    }

    #[test]
    fn extended_floats_serialize_as_strings() {
        #[derive(Serialize)]
        struct W(#[serde(serialize_with = "serialize_extended_f64")] f64);
        assert_eq!(serde_json::to_string(&W(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&W(f64::NEG_INFINITY)).unwrap(), "\"-inf\"");
        assert_eq!(serde_json::to_string(&W(f64::NAN)).unwrap(), "\"nan\"");
        assert_eq!(serde_json::to_string(&W(0.25)).unwrap(), "0.25");
    }

    #[test]
    fn sweep_order_and_count() {
        let cfg = small();
        let res = sweep_records(&cfg).unwrap();
        assert_eq!(res.records.len(), 2 * 2 * 2);
        let keys: Vec<(f64, f64)> = res.records.iter().map(|r| (r.beta, r.lambda)).collect();
        assert_eq!(
            keys,
            vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.2), (0.0, 0.2), (1.0, 0.0), (1.0, 0.0), (1.0, 0.2), (1.0, 0.2)]
        );
        for pair in res.records.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        for r in &res.records {
            assert!(r.is_ok(), "{r:?}");
            if r.beta == 0.0 {
                assert_eq!(r.p0_gibbs, 0.5);
            }
            if r.lambda == 0.0 {
                // exact up to the rounding of Σ A_j
                assert!((r.p0_diag - 1.0).abs() < 1e-15);
                assert!(r.beta_eff.is_infinite());
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = small();
        cfg.seeds = vec![1, 2, 3];
        cfg.threads = Some(1);
        let a = sweep_records(&cfg).unwrap().records;
        cfg.threads = Some(3);
        let b = sweep_records(&cfg).unwrap().records;
        assert_eq!(a, b);
    }

    #[test]
    fn rabi_single_instance() {
        let mut cfg = ExperimentConfig::default();
        cfg.bath.model = BathKind::Ladder;
        cfg.bath.n_states = 1;
        cfg.coupling.structure = CouplingStructure::SystemFlip;
        let (lambda, delta) = (0.3, 1.0);
        cfg.lambdas = vec![lambda];
        let inst = prepare(&cfg, 1, lambda, 1).unwrap();
        let rec = evaluate(&cfg, &inst, 1.0).unwrap().record;
        let expected = 1.0 - 2.0 * lambda * lambda / (4.0 * lambda * lambda + delta * delta);
        assert!((rec.p0_diag - expected).abs() < 1e-12);
    }

    #[test]
    fn three_level_deviation_uses_all_levels() {
        let mut cfg = small();
        cfg.system.n_levels = 3;
        cfg.lambdas = vec![0.0];
        cfg.seeds = vec![1];
        let res = sweep_records(&cfg).unwrap();
        let r = &res.records[1];
        let expected = 1.0 / (1.0 + (-1.0f64).exp() + (-2.0f64).exp());
        assert!((r.p0_gibbs - expected).abs() < 1e-15);
        assert!((r.p0_diag - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simulate_rejects_lists() {
        let cfg = small();
        assert!(matches!(run_single(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_check_rejects_large_instances() {
        let mut cfg = ExperimentConfig::default();
        cfg.bath.n_states = 40;
        assert!(matches!(oracle_check(&cfg), Err(Error::Capacity { .. })));
    }

    #[test]
    fn laplace_rows_cover_every_term() {
        let req = LaplaceRequest {
            delta: 1.0,
            model: PartitionModel::TwoLevelGas { particles: 1, gap: 1.0 },
            k_max: 4,
            xs: vec![0.5, 1.0],
            reference_beta: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let (report, out) = run_laplace(&req, dir.path()).unwrap();
        assert_eq!(out.files.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("laplace.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 8);
        for s in &report.series {
            assert!(s.partial_sums.iter().all(|p| p.value.norm() == 0.0));
        }
    }
}
