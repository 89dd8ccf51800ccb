//! Gibbs prediction for the system, deviation metrics, and the pole/residue
//! analysis of `∫ e^{-βx} f̄(x) dx = Z̄(β) / (1 + e^{-βδ})`.
//!
//! The right-hand side has simple poles at `β_n = i (2n + 1) π / δ`. If an
//! inverse Laplace transform `f̄(x)` existed it would be the sum over `n` of
//! the residues `e^{β_n x} Z̄(β_n) / δ`. [`residue_partial_sums`] evaluates
//! those residues for a chosen partition model, checks them against a
//! numerical contour limit, and reports how the partial sums behave.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::BinnedF;
use crate::{Complex64, Error, Result};

/// Ground-state probability of a two-level system in a Gibbs state.
pub fn gibbs_p0(beta: f64, delta: f64) -> f64 {
    1.0 / (1.0 + (-beta * delta).exp())
}

/// Simulated population compared with the Gibbs value at the bath
/// temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub p0_sim: f64,
    pub p0_gibbs: f64,
    /// `p0_sim - p0_gibbs`.
    pub deviation: f64,
    /// `ln(p0 / (1 - p0)) / δ`; `±∞` when `p0` saturates.
    #[serde(serialize_with = "crate::runner::serialize_extended_f64")]
    pub beta_eff: f64,
    pub beta_eff_unbounded: bool,
}

/// Populations closer than this to 0 or 1 count as saturated.
pub const SATURATION: f64 = 1e-13;

/// Inverse temperature a Gibbs state would need to give `p0`.
pub fn effective_beta(p0: f64, delta: f64) -> f64 {
    if p0 >= 1.0 - SATURATION {
        f64::INFINITY
    } else if p0 <= SATURATION {
        f64::NEG_INFINITY
    } else {
        (p0 / (1.0 - p0)).ln() / delta
    }
}

pub fn deviation_report(p0_sim: f64, beta: f64, delta: f64) -> Deviation {
    let p0_gibbs = gibbs_p0(beta, delta);
    let beta_eff = effective_beta(p0_sim, delta);
    Deviation {
        p0_sim,
        p0_gibbs,
        deviation: p0_sim - p0_gibbs,
        beta_eff,
        beta_eff_unbounded: beta_eff.is_infinite(),
    }
}

/// Ground-state population of a Gibbs state over arbitrary ascending levels.
/// Equals [`gibbs_p0`] for two levels up to rounding.
pub fn gibbs_ground_population(levels: &[f64], beta: f64) -> f64 {
    let e0 = levels[0];
    1.0 / levels.iter().map(|e| (-beta * (e - e0)).exp()).sum::<f64>()
}

/// Inverse temperature at which [`gibbs_ground_population`] equals `p0`,
/// found by bisection. Saturated populations give `±∞`.
pub fn effective_beta_for_levels(p0: f64, levels: &[f64]) -> f64 {
    if levels.len() == 2 {
        return effective_beta(p0, levels[1] - levels[0]);
    }
    let n = levels.len() as f64;
    if p0 >= 1.0 - SATURATION {
        return f64::INFINITY;
    }
    if p0 <= SATURATION {
        return f64::NEG_INFINITY;
    }
    let f = |b: f64| gibbs_ground_population(levels, b) - p0;
    let (mut lo, mut hi) = if p0 >= 1.0 / n { (0.0, 1.0) } else { (-1.0, 0.0) };
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    while f(lo) > 0.0 {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            return f64::NEG_INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// [`deviation_report`] for a system with arbitrary ascending levels.
pub fn deviation_report_for_levels(p0_sim: f64, beta: f64, levels: &[f64]) -> Deviation {
    if levels.len() == 2 {
        return deviation_report(p0_sim, beta, levels[1] - levels[0]);
    }
    let p0_gibbs = gibbs_ground_population(levels, beta);
    let beta_eff = effective_beta_for_levels(p0_sim, levels);
    Deviation {
        p0_sim,
        p0_gibbs,
        deviation: p0_sim - p0_gibbs,
        beta_eff,
        beta_eff_unbounded: beta_eff.is_infinite(),
    }
}

/// Histogram version of `P_0 = (1/Z) ∫ e^{-βx} f(x) Ω(x) dx`, with `Z`
/// integrated on the same bins. Bins are evaluated at their energy
/// centroids; empty bins are skipped.
pub fn p0_quadrature(binned: &BinnedF, beta: f64) -> Result<f64> {
    let filled: Vec<(f64, f64, f64)> = binned
        .bins
        .iter()
        .filter_map(|b| {
            let x = b.centroid?;
            let f = b.f_mean?;
            Some((x, f, b.density * (b.hi - b.lo)))
        })
        .collect();
    if filled.is_empty() {
        return Err(Error::Domain("no populated bins".into()));
    }
    let x0 = filled.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, f, mass) in filled {
        let w = (-beta * (x - x0)).exp() * mass;
        num += w * f;
        den += w;
    }
    Ok(num / den)
}

/// Partition functions that can be continued to complex `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PartitionModel {
    /// `(1 + e^{-β g})^{N_p}`: `N_p` independent two-level particles.
    TwoLevelGas { particles: u32, gap: f64 },
    /// `c · β^{-3 N_p / 2}` (principal branch).
    ClassicalIdealGas { particles: u32, volume_factor: f64 },
    /// `Π_i (1 - e^{-β ω_i})^{-1}`.
    OscillatorBath { frequencies: Vec<f64> },
    /// `Σ_k e^{-β E_k}`.
    ExplicitSpectrum { energies: Vec<f64> },
}

const MODEL_POLE_GUARD: f64 = 1e-8;

impl PartitionModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        match self {
            PartitionModel::TwoLevelGas { particles, gap } => {
                if *particles == 0 || !(gap.is_finite() && *gap > 0.0) {
                    return bad("two-level gas needs particles >= 1 and gap > 0");
                }
            }
            PartitionModel::ClassicalIdealGas { particles, volume_factor } => {
                if *particles == 0 || !(volume_factor.is_finite() && *volume_factor > 0.0) {
                    return bad("classical ideal gas needs particles >= 1 and volume factor > 0");
                }
            }
            PartitionModel::OscillatorBath { frequencies } => {
                if frequencies.is_empty() || frequencies.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return bad("oscillator bath needs positive finite frequencies");
                }
            }
            PartitionModel::ExplicitSpectrum { energies } => {
                if energies.is_empty() || energies.iter().any(|e| !e.is_finite()) {
                    return bad("explicit spectrum needs finite energies");
                }
            }
        }
        Ok(())
    }

    /// Order of the zero of `Z` at `β`, when the model has one there by
    /// construction.
    pub fn zero_order_at(&self, beta: Complex64) -> u32 {
        match self {
            PartitionModel::TwoLevelGas { particles, gap } => {
                // 1 + e^{-β g} = 0  ⇔  β g = i (2n + 1) π
                if beta.re.abs() > 1e-12 * beta.norm().max(1.0) {
                    return 0;
                }
                let k = beta.im * gap / PI;
                let odd = k.round();
                if (k - odd).abs() <= 1e-9 * k.abs().max(1.0) && (odd as i64).rem_euclid(2) == 1 {
                    *particles
                } else {
                    0
                }
            }
            _ => 0,
        }
    }
}

pub fn partition_value(model: &PartitionModel, beta: Complex64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    match model {
        PartitionModel::TwoLevelGas { particles, gap } => Ok((one + (-beta * gap).exp()).powu(*particles)),
        PartitionModel::ClassicalIdealGas { particles, volume_factor } => {
            if beta.norm() < MODEL_POLE_GUARD {
                return Err(Error::PoleCollision(format!(
                    "classical ideal gas is singular at β = 0 (|β| = {:e})",
                    beta.norm()
                )));
            }
            let exponent = -1.5 * *particles as f64;
            Ok((beta.ln() * exponent).exp() * volume_factor)
        }
        PartitionModel::OscillatorBath { frequencies } => {
            let mut z = one;
            for w in frequencies {
                let denom = one - (-beta * w).exp();
                if denom.norm() < MODEL_POLE_GUARD {
                    return Err(Error::PoleCollision(format!(
                        "oscillator ω = {w} has a pole at β = {beta}"
                    )));
                }
                z /= denom;
            }
            Ok(z)
        }
        PartitionModel::ExplicitSpectrum { energies } => Ok(energies.iter().map(|e| (-beta * e).exp()).sum()),
    }
}

/// A partition model divided by its value at a real reference `β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedPartition {
    pub model: PartitionModel,
    pub reference_beta: f64,
    pub normalization: f64,
}

pub const DEFAULT_REFERENCE_BETA: f64 = 1.0;

impl NormalizedPartition {
    pub fn new(model: PartitionModel, reference_beta: f64) -> Result<Self> {
        model.validate()?;
        if !(reference_beta.is_finite() && reference_beta > 0.0) {
            return Err(Error::Domain(format!("reference β must be > 0, got {reference_beta}")));
        }
        let z = partition_value(&model, Complex64::new(reference_beta, 0.0))?;
        if !(z.re.is_finite() && z.re > 0.0) {
            return Err(Error::Domain(format!("Z(β_ref) = {z} cannot normalize")));
        }
        Ok(Self { model, reference_beta, normalization: z.re })
    }

    /// `Z̄(β) = Z(β) / Z(β_ref)`.
    pub fn value(&self, beta: Complex64) -> Result<Complex64> {
        Ok(partition_value(&self.model, beta)? / self.normalization)
    }
}

/// `β_n = i (2n + 1) π / δ` for each `n` in `range`.
pub fn poles(delta: f64, range: std::ops::Range<i64>) -> Vec<Complex64> {
    range.map(|n| pole(delta, n)).collect()
}

pub fn pole(delta: f64, n: i64) -> Complex64 {
    Complex64::new(0.0, (2 * n + 1) as f64 * PI / delta)
}

/// `|1 + e^{-β δ}|`.
pub fn denominator(beta: Complex64, delta: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) + (-beta * delta).exp()
}

const RHS_POLE_GUARD: f64 = 1e-10;

/// `Z̄(β) / (1 + e^{-βδ})`.
pub fn rhs_function(beta: Complex64, delta: f64, zbar: &NormalizedPartition) -> Result<Complex64> {
    if beta.re.abs() < RHS_POLE_GUARD {
        let n = ((beta.im * delta / PI - 1.0) / 2.0).round() as i64;
        let dist = (beta - pole(delta, n)).norm();
        if dist < RHS_POLE_GUARD {
            return Err(Error::PoleCollision(format!(
                "β = {beta} lies {dist:e} from the pole n = {n}"
            )));
        }
    }
    Ok(zbar.value(beta)? / denominator(beta, delta))
}

/// Residue at `β_n` of `e^{βx}` times the right-hand side, by formula and by
/// a shrinking-circle limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residue {
    pub n: i64,
    pub x: f64,
    pub formula: Complex64,
    pub numeric: Complex64,
    /// Radius of the last circle used.
    pub radius: f64,
    /// `|formula - numeric| / max(|formula|, scale)`.
    pub relative_difference: f64,
}

const CIRCLE_POINTS: usize = 64;
const LIMIT_TOLERANCE: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

fn circle_mean(
    center: Complex64,
    radius: f64,
    x: f64,
    delta: f64,
    zbar: &NormalizedPartition,
) -> Result<(Complex64, f64)> {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for k in 0..CIRCLE_POINTS {
        let offset = Complex64::from_polar(radius, std::f64::consts::TAU * k as f64 / CIRCLE_POINTS as f64);
        let beta = center + offset;
        let h = offset * (beta * x).exp() * rhs_function(beta, delta, zbar)?;
        scale += h.norm();
        sum += h;
    }
    Ok((sum / CIRCLE_POINTS as f64, scale / CIRCLE_POINTS as f64))
}

/// Radius for the first circle around `β_n`: a tenth of the distance to the
/// neighbouring poles, and at most half the distance to any singularity of
/// the model.
fn initial_radius(center: Complex64, delta: f64, model: &PartitionModel) -> f64 {
    let mut r = 0.1 * PI / delta;
    match model {
        PartitionModel::ClassicalIdealGas { .. } => r = r.min(0.5 * center.norm()),
        PartitionModel::OscillatorBath { frequencies } => {
            for w in frequencies {
                // Poles of the model at β = 2π i m / ω.
                let m = (center.im * w / std::f64::consts::TAU).round();
                let p = Complex64::new(0.0, std::f64::consts::TAU * m / w);
                let dist = (center - p).norm();
                if dist > 0.0 {
                    r = r.min(0.5 * dist);
                }
            }
        }
        _ => {}
    }
    r
}

pub fn residue(n: i64, x: f64, delta: f64, zbar: &NormalizedPartition) -> Result<Residue> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("δ must be > 0, got {delta}")));
    }
    let center = pole(delta, n);
    let formula = if zbar.model.zero_order_at(center) >= 1 {
        Complex64::new(0.0, 0.0)
    } else {
        (center * x).exp() * zbar.value(center)? / delta
    };

    let mut radius = initial_radius(center, delta, &zbar.model);
    let (mut prev, _) = circle_mean(center, radius, x, delta, zbar)?;
    let mut history = vec![prev];
    for _ in 0..MAX_HALVINGS {
        radius *= 0.5;
        let (est, scale) = circle_mean(center, radius, x, delta, zbar)?;
        history.push(est);
        let diff = (est - prev).norm();
        if diff <= LIMIT_TOLERANCE * est.norm().max(scale) {
            let relative_difference = (formula - est).norm() / formula.norm().max(scale);
            return Ok(Residue { n, x, formula, numeric: est, radius, relative_difference });
        }
        prev = est;
    }
    Err(Error::Conditioning(format!(
        "residue at n = {n}, x = {x}: circle estimates did not settle; last values {:?}",
        &history[history.len().saturating_sub(3)..]
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Oscillatory,
    Diverging,
}

/// One residue term in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidueTerm {
    pub n: i64,
    pub pole_im: f64,
    pub formula: Option<Complex64>,
    pub numeric: Option<Complex64>,
    pub relative_difference: Option<f64>,
    /// Why the term was left out of the partial sums, if it was.
    pub excluded: Option<String>,
    /// Numeric-limit failure that did not affect the formula value.
    pub numeric_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialSum {
    pub k: usize,
    pub value: Complex64,
    /// Magnitude of the terms added at this `K`: `|r_{K-1}| + |r_{-K}|`.
    pub added_magnitude: f64,
}

/// Observations about the residue series at one `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesBehaviour {
    /// Every included residue vanishes.
    pub zero_at_every_pole: bool,
    /// Fitted exponent `p` in `|r_n| ∝ |β_n|^p` over the upper half of `K`.
    pub fitted_exponent: Option<f64>,
    /// The term magnitudes decrease with `n`.
    pub magnitudes_decrease: bool,
    /// Paired terms `r_n + r_{-n-1}` vanish (cancellation by symmetry).
    pub pairs_cancel: bool,
    /// Growth exponent of `|S_K|` versus `K` over the upper half of `K`.
    pub partial_sum_growth: Option<f64>,
    /// Spread of `S_K` over the last quarter divided by that over the
    /// preceding quarter.
    pub tail_spread_ratio: Option<f64>,
    pub tail_magnitude: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XSeries {
    pub x: f64,
    pub terms: Vec<ResidueTerm>,
    pub partial_sums: Vec<PartialSum>,
    pub behaviour: SeriesBehaviour,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoleEntry {
    pub n: i64,
    pub beta: Complex64,
    pub denominator_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaplaceReport {
    pub delta: f64,
    pub partition: NormalizedPartition,
    pub k_max: usize,
    pub poles: Vec<PoleEntry>,
    pub series: Vec<XSeries>,
}

impl LaplaceReport {
    pub fn max_denominator_abs(&self) -> f64 {
        self.poles.iter().map(|p| p.denominator_abs).fold(0.0, f64::max)
    }

    pub fn max_relative_difference(&self) -> f64 {
        self.series
            .iter()
            .flat_map(|s| s.terms.iter().filter_map(|t| t.relative_difference))
            .fold(0.0, f64::max)
    }
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn spread(values: &[Complex64]) -> f64 {
    let mut worst = 0.0_f64;
    for a in values {
        for b in values {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}

fn classify(delta: f64, terms: &[ResidueTerm], sums: &[PartialSum]) -> SeriesBehaviour {
    let k_max = sums.len();
    let value = |n: i64| -> Option<Complex64> {
        terms.iter().find(|t| t.n == n).and_then(|t| t.formula.filter(|_| t.excluded.is_none()))
    };
    let included: Vec<Complex64> = terms
        .iter()
        .filter(|t| t.excluded.is_none())
        .filter_map(|t| t.formula)
        .collect();
    let zero_at_every_pole = !included.is_empty() && included.iter().all(|z| z.norm() == 0.0);

    let tail_start = (k_max / 2).max(1);
    let mut log_beta = Vec::new();
    let mut log_mag = Vec::new();
    for s in &sums[tail_start - 1..] {
        if s.added_magnitude > 0.0 {
            log_beta.push(((2 * s.k - 1) as f64 * PI / delta).ln());
            log_mag.push(s.added_magnitude.ln());
        }
    }
    let fitted_exponent = if log_mag.len() == k_max - tail_start + 1 { slope(&log_beta, &log_mag) } else { None };

    let mut pairs_cancel = true;
    for k in 0..k_max as i64 {
        if let (Some(a), Some(b)) = (value(k), value(-k - 1)) {
            if (a + b).norm() > 1e-12 * (a.norm() + b.norm()) {
                pairs_cancel = false;
            }
        }
    }

    let mut log_k = Vec::new();
    let mut log_s = Vec::new();
    for s in &sums[tail_start - 1..] {
        if s.value.norm() > 0.0 {
            log_k.push((s.k as f64).ln());
            log_s.push(s.value.norm().ln());
        }
    }
    let partial_sum_growth = if log_s.len() == k_max - tail_start + 1 { slope(&log_k, &log_s) } else { None };

    let q = k_max / 4;
    let tail_spread_ratio = if q >= 2 {
        let last = spread(&sums[k_max - q..].iter().map(|s| s.value).collect::<Vec<_>>());
        let before = spread(&sums[k_max - 2 * q..k_max - q].iter().map(|s| s.value).collect::<Vec<_>>());
        (before > 0.0).then(|| last / before)
    } else {
        None
    };

    let tail_magnitude = sums.last().map_or(0.0, |s| s.added_magnitude);
    let magnitudes_decrease = fitted_exponent.is_some_and(|p| p < -0.05);

    let verdict = if zero_at_every_pole || (included.is_empty() && tail_magnitude == 0.0) {
        Verdict::Converged
    } else {
        match fitted_exponent {
            Some(p) if p < -1.05 => Verdict::Converged,
            Some(p) if p > 0.05 => Verdict::Diverging,
            _ if partial_sum_growth.is_some_and(|g| g > 0.25) => Verdict::Diverging,
            Some(p) if p >= -0.05 => Verdict::Oscillatory,
            Some(_) if tail_spread_ratio.is_some_and(|r| r < 1.0) => Verdict::Converged,
            _ => Verdict::Oscillatory,
        }
    };

    SeriesBehaviour {
        zero_at_every_pole,
        fitted_exponent,
        magnitudes_decrease,
        pairs_cancel,
        partial_sum_growth,
        tail_spread_ratio,
        tail_magnitude,
        verdict,
    }
}

/// Residues for `n ∈ [-K_max, K_max)` at each `x`, partial sums
/// `S_K(x) = Σ_{n=-K}^{K-1} r_n(x)` for `K = 1..=K_max`, and a verdict per
/// `x` read off the measured tail.
pub fn residue_partial_sums(xs: &[f64], delta: f64, zbar: &NormalizedPartition, k_max: usize) -> Result<LaplaceReport> {
    if k_max < 2 {
        return Err(Error::Domain(format!("K_max must be >= 2, got {k_max}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("δ must be > 0, got {delta}")));
    }
    if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("x grid must be non-empty and finite".into()));
    }
    let k = k_max as i64;
    let pole_list: Vec<PoleEntry> = (-k..k)
        .map(|n| {
            let beta = pole(delta, n);
            PoleEntry { n, beta, denominator_abs: denominator(beta, delta).norm() }
        })
        .collect();

    let series = xs
        .iter()
        .map(|&x| {
            let terms: Vec<ResidueTerm> = (-k..k)
                .map(|n| {
                    let pole_im = pole(delta, n).im;
                    match residue(n, x, delta, zbar) {
                        Ok(r) => ResidueTerm {
                            n,
                            pole_im,
                            formula: Some(r.formula),
                            numeric: Some(r.numeric),
                            relative_difference: Some(r.relative_difference),
                            excluded: None,
                            numeric_error: None,
                        },
                        Err(Error::Conditioning(msg)) => {
                            let center = pole(delta, n);
                            let formula = if zbar.model.zero_order_at(center) >= 1 {
                                Ok(Complex64::new(0.0, 0.0))
                            } else {
                                zbar.value(center).map(|z| (center * x).exp() * z / delta)
                            };
                            match formula {
                                Ok(f) => ResidueTerm {
                                    n,
                                    pole_im,
                                    formula: Some(f),
                                    numeric: None,
                                    relative_difference: None,
                                    excluded: None,
                                    numeric_error: Some(msg),
                                },
                                Err(e) => excluded_term(n, pole_im, e),
                            }
                        }
                        Err(e) => excluded_term(n, pole_im, e),
                    }
                })
                .collect();

            let at = |n: i64| -> Complex64 {
                terms[(n + k) as usize]
                    .formula
                    .filter(|_| terms[(n + k) as usize].excluded.is_none())
                    .unwrap_or_default()
            };
            let mut running = Complex64::new(0.0, 0.0);
            let partial_sums: Vec<PartialSum> = (1..=k_max)
                .map(|kk| {
                    let hi = at(kk as i64 - 1);
                    let lo = at(-(kk as i64));
                    running += hi + lo;
                    PartialSum { k: kk, value: running, added_magnitude: hi.norm() + lo.norm() }
                })
                .collect();
            let behaviour = classify(delta, &terms, &partial_sums);
            XSeries { x, terms, partial_sums, behaviour }
        })
        .collect();

    Ok(LaplaceReport { delta, partition: zbar.clone(), k_max, poles: pole_list, series })
}

fn excluded_term(n: i64, pole_im: f64, e: Error) -> ResidueTerm {
    ResidueTerm {
        n,
        pole_im,
        formula: None,
        numeric: None,
        relative_difference: None,
        excluded: Some(e.to_string()),
        numeric_error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_one() -> NormalizedPartition {
        NormalizedPartition::new(PartitionModel::ExplicitSpectrum { energies: vec![0.0] }, 1.0).unwrap()
    }

    fn classical(particles: u32) -> NormalizedPartition {
        NormalizedPartition::new(PartitionModel::ClassicalIdealGas { particles, volume_factor: 1.0 }, 1.0).unwrap()
    }

    #[test]
    fn gibbs_values() {
        assert_eq!(gibbs_p0(0.0, 1.3), 0.5);
        assert!((gibbs_p0(2f64.ln(), 1.0) - 2.0 / 3.0).abs() <= 1e-14);
        assert!((gibbs_p0(3f64.ln() / 2.0, 2.0) - 0.75).abs() <= 1e-14);
    }

    #[test]
    fn deviation_examples() {
        let d = deviation_report(0.5, 1.0, 3.0);
        assert_eq!(d.beta_eff, 0.0);
        let d = deviation_report(2.0 / 3.0, 0.0, 1.0);
        assert!((d.beta_eff - 2f64.ln()).abs() < 1e-15);
        assert!((d.deviation - (2.0 / 3.0 - 0.5)).abs() < 1e-15);
        let d = deviation_report(1.0, 1.0, 1.0);
        // 1 - 1 / (1 + e^{-1}), 40-digit reference
        assert!((d.deviation - 0.268_941_421_369_995_12).abs() < 1e-15);
        assert!(d.beta_eff_unbounded && d.beta_eff == f64::INFINITY);
        assert_eq!(deviation_report(0.0, 1.0, 1.0).beta_eff, f64::NEG_INFINITY);
    }

    #[test]
    fn partition_examples() {
        let d = 0.8;
        let two = PartitionModel::TwoLevelGas { particles: 1, gap: d };
        let b = Complex64::new(0.7, 0.2);
        assert!((partition_value(&two, b).unwrap() - (1.0 + (-b * d).exp())).norm() < 1e-15);
        let gas = PartitionModel::ClassicalIdealGas { particles: 2, volume_factor: 1.0 };
        assert!((partition_value(&gas, Complex64::new(2.0, 0.0)).unwrap() - 0.125).norm() < 1e-15);
        assert!(matches!(partition_value(&gas, Complex64::new(0.0, 0.0)), Err(Error::PoleCollision(_))));
        let expl = PartitionModel::ExplicitSpectrum { energies: vec![0.0, 1.0, 2.0] };
        let z = partition_value(&expl, Complex64::new(1.0, 0.0)).unwrap();
        assert!((z.re - 1.503_214_724_408_055).abs() < 1e-15 && z.im == 0.0);
        let osc = PartitionModel::OscillatorBath { frequencies: vec![2.0] };
        assert!(matches!(partition_value(&osc, Complex64::new(0.0, PI)), Err(Error::PoleCollision(_))));
        let z = partition_value(&osc, Complex64::new(1.0, 0.0)).unwrap();
        assert!((z.re - 1.0 / (1.0 - (-2f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn rhs_examples() {
        let zbar = NormalizedPartition::new(PartitionModel::ExplicitSpectrum { energies: vec![0.0, 0.5] }, 1.0).unwrap();
        let z0 = zbar.value(Complex64::new(0.0, 0.0)).unwrap();
        let r = rhs_function(Complex64::new(0.0, 0.0), 1.0, &zbar).unwrap();
        assert!((r - z0 / 2.0).norm() < 1e-15);

        let two = NormalizedPartition::new(PartitionModel::TwoLevelGas { particles: 1, gap: 1.0 }, 1.0).unwrap();
        let b = Complex64::new(40.0, 0.0);
        assert!((rhs_function(b, 1.0, &two).unwrap() - two.value(b).unwrap()).norm() < 1e-15);

        for b in [Complex64::new(0.3, 1.7), Complex64::new(2.0, -5.1)] {
            let a = rhs_function(b.conj(), 1.0, &zbar).unwrap();
            let c = rhs_function(b, 1.0, &zbar).unwrap().conj();
            assert!((a - c).norm() < 1e-14);
        }
        assert!(matches!(rhs_function(pole(1.0, 3), 1.0, &zbar), Err(Error::PoleCollision(_))));
    }

    #[test]
    fn pole_examples() {
        let p = poles(PI, -1..2);
        let expected = [-1.0, 1.0, 3.0];
        for (z, e) in p.iter().zip(expected) {
            assert_eq!(z.re, 0.0);
            assert!((z.im - e).abs() < 1e-15);
        }
        let delta = 0.37;
        let p = poles(delta, -6..6);
        for w in p.windows(2) {
            assert!(((w[1] - w[0]).im - std::f64::consts::TAU / delta).abs() < 1e-12);
        }
        for z in p {
            assert!(denominator(z, delta).norm() <= 1e-12);
        }
    }

    #[test]
    fn residue_examples() {
        let r = residue(0, 0.0, 1.0, &constant_one()).unwrap();
        assert!((r.formula - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(r.relative_difference < 1e-6);

        let matched = NormalizedPartition::new(PartitionModel::TwoLevelGas { particles: 1, gap: 1.0 }, 1.0).unwrap();
        for n in [-3, 0, 5] {
            let r = residue(n, 0.7, 1.0, &matched).unwrap();
            assert_eq!(r.formula, Complex64::new(0.0, 0.0));
            assert!(r.numeric.norm() < 1e-12);
        }

        let r = residue(0, 1.0, 1.0, &classical(2)).unwrap();
        assert!((r.formula.norm() - PI.powi(-3)).abs() < 1e-15);
        assert!(r.relative_difference < 1e-6, "{}", r.relative_difference);
    }

    #[test]
    fn constant_model_terms_do_not_decay() {
        let report = residue_partial_sums(&[0.0], 1.0, &constant_one(), 16).unwrap();
        let s = &report.series[0];
        for t in &s.terms {
            assert!((t.formula.unwrap().norm() - 1.0).abs() < 1e-12);
        }
        assert_ne!(s.behaviour.verdict, Verdict::Converged);
        assert!(!s.behaviour.magnitudes_decrease);
    }

    #[test]
    fn matched_two_level_gas_sums_vanish() {
        let zbar = NormalizedPartition::new(PartitionModel::TwoLevelGas { particles: 3, gap: 0.6 }, 1.0).unwrap();
        let report = residue_partial_sums(&[0.5, 1.0, 2.0], 0.6, &zbar, 12).unwrap();
        for s in &report.series {
            assert!(s.partial_sums.iter().all(|p| p.value == Complex64::new(0.0, 0.0)));
            assert!(s.behaviour.zero_at_every_pole);
            assert_eq!(s.behaviour.verdict, Verdict::Converged);
        }
    }

    #[test]
    fn classical_gas_decay_exponent() {
        for particles in [1u32, 2, 4] {
            let report = residue_partial_sums(&[0.5, 1.0], 1.0, &classical(particles), 16).unwrap();
            for s in &report.series {
                let p = s.behaviour.fitted_exponent.unwrap();
                let target = -1.5 * particles as f64;
                assert!((p - target).abs() <= 0.05 * target.abs(), "{p} vs {target}");
                for t in &s.terms {
                    let beta = pole(1.0, t.n);
                    let closed = beta.norm().powf(target);
                    assert!((t.formula.unwrap().norm() - closed).abs() <= 1e-10 * closed);
                }
            }
        }
    }

    #[test]
    fn classical_gas_partial_sums_are_real() {
        let report = residue_partial_sums(&[1.0], 2.0, &classical(2), 8).unwrap();
        for s in &report.series[0].partial_sums {
            assert!(s.value.im.abs() < 1e-14 * s.value.norm().max(1e-300));
        }
        assert_eq!(report.series[0].behaviour.verdict, Verdict::Converged);
    }

    #[test]
    fn oscillator_pole_collisions_are_excluded() {
        // ω = 2δ puts the model's poles 2π i m / ω on every β_n.
        let zbar = NormalizedPartition::new(PartitionModel::OscillatorBath { frequencies: vec![2.0] }, 1.0).unwrap();
        let report = residue_partial_sums(&[1.0], 1.0, &zbar, 4).unwrap();
        assert!(report.series[0].terms.iter().all(|t| t.excluded.is_some()));

        let zbar = NormalizedPartition::new(PartitionModel::OscillatorBath { frequencies: vec![0.7, 1.3] }, 1.0).unwrap();
        let report = residue_partial_sums(&[1.0], 1.0, &zbar, 4).unwrap();
        assert!(report.series[0].terms.iter().all(|t| t.excluded.is_none()));
        assert!(report.max_relative_difference() < 1e-6);
    }

    #[test]
    fn quadrature_examples() {
        use crate::bath::density_of_states;
        use crate::dynamics::f_binned;
        let single = f_binned(&[0.8], &[2.0], &density_of_states(&[2.0], 1).unwrap()).unwrap();
        assert!((p0_quadrature(&single, 3.0).unwrap() - 0.8).abs() < 1e-15);
        let e = [0.0, 0.5, 1.0, 1.5];
        let f = [0.9, 0.7, 0.6, 0.2];
        let b = f_binned(&f, &e, &density_of_states(&e, 2).unwrap()).unwrap();
        assert!((p0_quadrature(&b, 0.0).unwrap() - 0.6).abs() < 1e-15);
        let empty = BinnedF { bins: vec![] };
        assert!(p0_quadrature(&empty, 1.0).is_err());
    }
}
