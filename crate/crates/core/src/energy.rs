//! Weights, energies and the super-energy continuation monitor.
//!
//! `Φ(t,ξ) = C₀ min{(T−t)⁻¹ + 1, ⟨ξ⟩}` switches from the hyperbolic to the
//! Kovalewskian regime at `τ(ξ) = T − |ξ|⁻¹`, and `ρ(t,ξ) = ∫_t^T Φ`. Mode
//! sums over `|k| ≤ K` stand in for `ξ`-integrals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equation::{uniform_grid, CoefficientEvalError, CoefficientSpec};
use crate::json;
use crate::quasisym::{build_quasi_symmetrizer, quadratic_form};
use crate::spectral::{companion_matrix, SpectralState, Trajectory};
use crate::symbol::{characteristic_roots, SymbolError};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("quadratic form is negative ({value:e}) beyond round-off")]
    NegativeForm { value: f64 },
    #[error("forcing was not recorded along the trajectory")]
    MissingForcing,
    #[error("trajectory needs at least {0} snapshots")]
    ShortTrajectory(usize),
    #[error("J_max = {jmax} must be at least nu = {nu}")]
    Truncation { jmax: usize, nu: u32 },
    #[error(transparent)]
    Coefficient(#[from] CoefficientEvalError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

/// `⟨ξ⟩ = 1 + |ξ|`.
pub fn bracket(xi: f64) -> f64 {
    1.0 + xi.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub c0: f64,
    pub horizon: f64,
    /// Loss exponent `N` of the linear estimate.
    pub n_loss: u32,
}

/// `Φ(t,ξ)`; at `t = T` the Kovalewskian branch `C₀⟨ξ⟩` is returned.
pub fn phi_weight(t: f64, xi: f64, p: &WeightParams) -> f64 {
    let hyperbolic = if t < p.horizon { 1.0 / (p.horizon - t) + 1.0 } else { f64::INFINITY };
    p.c0 * hyperbolic.min(bracket(xi))
}

/// Closed form of `∫_t^T Φ(s,ξ) ds`.
pub fn rho_weight(t: f64, xi: f64, p: &WeightParams) -> f64 {
    let x = xi.abs();
    let rem = (p.horizon - t).max(0.0);
    if x * p.horizon <= 1.0 {
        return p.c0 * bracket(x) * rem;
    }
    let tau = p.horizon - 1.0 / x;
    if t >= tau {
        p.c0 * bracket(x) * rem
    } else {
        p.c0 * ((rem * x).ln() + (tau - t)) + p.c0 * bracket(x) / x
    }
}

/// `Λ_k` as a constant or as samples on a uniform grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaProfile {
    Constant(f64),
    Sampled(Vec<f64>),
}

impl LambdaProfile {
    /// `∫_t^T Λ(s) ds` (trapezoid with linear interpolation for samples).
    pub fn integral(&self, t: f64, horizon: f64) -> f64 {
        match self {
            LambdaProfile::Constant(c) => c * (horizon - t),
            LambdaProfile::Sampled(v) if v.len() == 1 => v[0] * (horizon - t),
            LambdaProfile::Sampled(v) => {
                let n = v.len() - 1;
                let h = horizon / n as f64;
                let at = |s: f64| {
                    let x = (s / h).clamp(0.0, n as f64);
                    let i = (x.floor() as usize).min(n - 1);
                    let w = x - i as f64;
                    v[i] * (1.0 - w) + v[i + 1] * w
                };
                let mut acc = 0.0;
                let first = ((t / h).floor() as usize + 1).min(n);
                let mut prev = t;
                for i in first..=n {
                    let s = i as f64 * h;
                    acc += 0.5 * (at(prev) + at(s)) * (s - prev);
                    prev = s;
                }
                acc
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevreyWeight {
    pub value: f64,
    /// `k < 2(m−1)`: sub-additivity in `ξ` is not guaranteed.
    pub below_threshold: bool,
}

/// `|ξ|^{2(m−1)/k} ∫_t^T Λ_k + (T − t)`.
pub fn gevrey_weight(
    t: f64,
    xi: f64,
    k: u32,
    lambda: &LambdaProfile,
    order: usize,
    horizon: f64,
) -> GevreyWeight {
    let expo = 2.0 * (order as f64 - 1.0) / k as f64;
    GevreyWeight {
        value: xi.abs().powf(expo) * lambda.integral(t, horizon) + (horizon - t),
        below_threshold: (k as usize) < 2 * (order - 1),
    }
}

/// `(Q V, V)`, rejecting values below `−1e−12 ‖Q‖ |V|²`.
pub fn mode_energy(q: &DMatrix<f64>, v: &[Complex64]) -> Result<f64, EnergyError> {
    let value = quadratic_form(q, v);
    let scale = q.norm() * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    if value < -1e-12 * scale {
        return Err(EnergyError::NegativeForm { value });
    }
    Ok(value.max(0.0))
}

/// `ln Σ_k e^{ρ(t,k)} |k|^j |V_k|` in log-sum form.
fn log_weighted_sum(state: &SpectralState, p: &WeightParams, j: u32) -> f64 {
    let terms: Vec<f64> = state
        .ks()
        .filter_map(|k| {
            let w = state.mode_norm(k) * (k.unsigned_abs() as f64).powi(j as i32);
            (w > 0.0).then(|| rho_weight(state.t, k as f64, p) + w.ln())
        })
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + terms.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// `ln 𝓔(t)`.
pub fn log_cinf_energy(state: &SpectralState, p: &WeightParams) -> f64 {
    log_weighted_sum(state, p, 0)
}

/// `𝓔(t) = Σ_k e^{ρ(t,k)} |V_k|`.
pub fn cinf_energy(state: &SpectralState, p: &WeightParams) -> f64 {
    let direct_safe = state.ks().all(|k| rho_weight(state.t, k as f64, p) <= 700.0);
    if direct_safe {
        state.ks().map(|k| rho_weight(state.t, k as f64, p).exp() * state.mode_norm(k)).sum()
    } else {
        log_cinf_energy(state, p).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEnergies {
    /// `𝓔_j = Σ e^{ρ} |k|^j |V_k|`.
    pub energies: Vec<f64>,
    /// `M_j = Σ |k|^j |V_k|`.
    pub moments: Vec<f64>,
}

pub fn derivative_energies(state: &SpectralState, p: &WeightParams, jmax: usize) -> DerivativeEnergies {
    let mut energies = vec![0.0; jmax + 1];
    let mut moments = vec![0.0; jmax + 1];
    for k in state.ks() {
        let v = state.mode_norm(k);
        let w = rho_weight(state.t, k as f64, p).exp();
        let ak = k.unsigned_abs() as f64;
        let mut pow = 1.0;
        for j in 0..=jmax {
            moments[j] += pow * v;
            energies[j] += pow * w * v;
            pow *= ak;
        }
    }
    DerivativeEnergies { energies, moments }
}

/// `Σ_k |k|^j |V_k| ⟨k⟩^N` for `j ≤ J_max`.
pub fn initial_alpha(state: &SpectralState, n_loss: u32, jmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; jmax + 1];
    for k in state.ks() {
        let base = state.mode_norm(k) * bracket(k as f64).powi(n_loss as i32);
        let ak = k.unsigned_abs() as f64;
        let mut pow = 1.0;
        for o in out.iter_mut() {
            *o += pow * base;
            pow *= ak;
        }
    }
    out
}

/// `ν`-fold Cauchy product of a sequence, truncated to its own length.
/// `ν = 0` gives the zero sequence (no source term).
pub fn sequence_power(x: &[f64], nu: u32) -> Vec<f64> {
    let n = x.len();
    if nu == 0 {
        return vec![0.0; n];
    }
    let mut cur = x.to_vec();
    for _ in 1..nu {
        let mut next = vec![0.0; n];
        for (j, slot) in next.iter_mut().enumerate() {
            for h in 0..=j {
                *slot += cur[h] * x[j - h];
            }
        }
        cur = next;
    }
    cur
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for j in 1..=n {
        f[j] = f[j - 1] * j as f64;
    }
    f
}

/// `Σ_j a_j r^j / j!` and its tail ratio `(a_J r^J / J!) / sum`.
pub fn generating_sum(a: &[f64], r: f64) -> (f64, f64) {
    let fact = factorials(a.len());
    let terms: Vec<f64> = a.iter().enumerate().map(|(j, x)| x * r.powi(j as i32) / fact[j]).collect();
    let sum: f64 = terms.iter().sum();
    let last = *terms.last().unwrap_or(&0.0);
    let tail = if sum > 0.0 { last.abs() / sum } else { 0.0 };
    (sum, tail)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperEnergies {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// `α_j(t)` per recorded time.
    pub alpha: Vec<Vec<f64>>,
    pub tail_f: Vec<f64>,
    pub tail_g: Vec<f64>,
    /// Some tail ratio exceeded 0.1.
    pub diverged: bool,
}

/// `𝓕`, `α_j` and `𝓖` along recorded samples. `energies[i][j] = 𝓔_j(tᵢ)`,
/// `alpha0[j] = α_j(0)`, `r[i] = r(tᵢ)`; time integrals use the trapezoid rule.
pub fn super_energies(
    times: &[f64],
    energies: &[Vec<f64>],
    alpha0: &[f64],
    r: &[f64],
    nu: u32,
) -> Result<SuperEnergies, EnergyError> {
    let jmax = alpha0.len() - 1;
    if (jmax as u32) < nu {
        return Err(EnergyError::Truncation { jmax, nu });
    }
    let fact = factorials(jmax);
    let c: Vec<Vec<f64>> = energies
        .iter()
        .map(|e| {
            let scaled: Vec<f64> = e[..=jmax].iter().zip(&fact).map(|(x, f)| x / f).collect();
            sequence_power(&scaled, nu)
        })
        .collect();
    let mut alpha = Vec::with_capacity(times.len());
    let mut integral = vec![0.0; jmax + 1];
    for i in 0..times.len() {
        if i > 0 {
            let h = times[i] - times[i - 1];
            for j in 0..=jmax {
                integral[j] += 0.5 * h * (c[i - 1][j] + c[i][j]);
            }
        }
        alpha.push((0..=jmax).map(|j| alpha0[j] + fact[j] * integral[j]).collect::<Vec<f64>>());
    }
    let mut out = SuperEnergies {
        f: Vec::new(),
        g: Vec::new(),
        alpha: Vec::new(),
        tail_f: Vec::new(),
        tail_g: Vec::new(),
        diverged: false,
    };
    for i in 0..times.len() {
        let (f, tf) = generating_sum(&energies[i][..=jmax], r[i]);
        let (g, tg) = generating_sum(&alpha[i], r[i]);
        out.f.push(f);
        out.g.push(g);
        out.tail_f.push(tf);
        out.tail_g.push(tg);
        out.diverged |= tf > 0.1 || tg > 0.1 || !f.is_finite() || !g.is_finite();
    }
    out.alpha = alpha;
    Ok(out)
}

/// Largest `r₀` (bisection) with tail ratio of `Σ α_j r₀^j/j!` at most `target`.
pub fn calibrate_r0(alpha0: &[f64], target: f64) -> f64 {
    let tail = |r: f64| generating_sum(alpha0, r).1;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while tail(hi) <= target && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tail(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `φ(L) = C^ν (M + L)^{ν−1}`; zero when there is no source (`ν = 0`).
pub fn phi_of(c: f64, m_const: f64, l: f64, nu: u32) -> f64 {
    if nu == 0 {
        0.0
    } else {
        c.powi(nu as i32) * (m_const + l).powi(nu as i32 - 1)
    }
}

/// `r(t) = r₀ e^{−φ t}`.
pub fn radius_schedule(r0: f64, phi: f64, t: f64) -> f64 {
    r0 * (-phi * t).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub pass: bool,
    pub first_crossing: Option<f64>,
    /// `𝓖(0) ≥ L` already at the start.
    pub degenerate_start: bool,
    /// `𝓖(t) ≤ 𝓖(0) + (CM)^ν t` at every sample.
    pub interior_bound_holds: bool,
    /// `max_t (𝓖(t) − 𝓖(0) − (CM)^ν t)`.
    pub interior_excess: f64,
}

pub fn continuation_check(times: &[f64], g: &[f64], l: f64, growth: f64) -> ContinuationReport {
    let g0 = g.first().copied().unwrap_or(0.0);
    let first_crossing = times.iter().zip(g).find(|(_, &gi)| !(gi < l)).map(|(&t, _)| t);
    let interior_excess =
        times.iter().zip(g).map(|(&t, &gi)| gi - g0 - growth * t).fold(f64::NEG_INFINITY, f64::max);
    ContinuationReport {
        pass: first_crossing.is_none(),
        first_crossing,
        degenerate_start: !(g0 < l),
        interior_bound_holds: interior_excess <= 0.0,
        interior_excess,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterEstimate {
    pub n_loss: u32,
    #[serde(with = "json::ext_real")]
    pub ratio: f64,
    /// Smallest `N ≤ 2m + 4` with `R(N) ≤ C`.
    pub fitted_n: Option<u32>,
}

/// Per-mode time integrals `∫₀ᵗ e^{ρ(s,k)} |F_k(s)| ds` at each snapshot.
fn forcing_integrals(traj: &Trajectory, p: &WeightParams, nu: u32) -> Result<Vec<Vec<f64>>, EnergyError> {
    let first = &traj.snapshots[0].state;
    let width = 2 * first.modes + 1;
    let weighted: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| match (&s.forcing, nu) {
            (Some(f), _) => Ok(s
                .state
                .ks()
                .zip(f)
                .map(|(k, fk)| rho_weight(s.t(), k as f64, p).exp() * fk.norm())
                .collect()),
            (None, 0) => Ok(vec![0.0; width]),
            (None, _) => Err(EnergyError::MissingForcing),
        })
        .collect::<Result<_, _>>()?;
    let mut acc = vec![0.0; width];
    let mut out = vec![acc.clone()];
    for i in 1..weighted.len() {
        let h = traj.snapshots[i].t() - traj.snapshots[i - 1].t();
        for k in 0..width {
            acc[k] += 0.5 * h * (weighted[i - 1][k] + weighted[i][k]);
        }
        out.push(acc.clone());
    }
    Ok(out)
}

/// `R(N) = max_{t,k} e^{ρ}|V_k(t)| / (⟨k⟩^N |V_k(0)| + ⟨k⟩^{m−1} ∫₀ᵗ e^{ρ}|F_k|)`.
pub fn master_ratio(traj: &Trajectory, p: &WeightParams, nu: u32, n_loss: u32) -> Result<f64, EnergyError> {
    let integrals = forcing_integrals(traj, p, nu)?;
    Ok(master_ratio_with(traj, p, &integrals, n_loss))
}

fn master_ratio_with(traj: &Trajectory, p: &WeightParams, integrals: &[Vec<f64>], n_loss: u32) -> f64 {
    master_ratio_series(traj, p, integrals, n_loss).into_iter().fold(0.0, f64::max)
}

/// `max_k` of the master ratio at each snapshot.
fn master_ratio_series(traj: &Trajectory, p: &WeightParams, integrals: &[Vec<f64>], n_loss: u32) -> Vec<f64> {
    let s0 = &traj.snapshots[0].state;
    let m = s0.order as i32;
    traj.snapshots
        .par_iter()
        .zip(integrals.par_iter())
        .map(|(snap, int)| {
            let s = &snap.state;
            s.ks()
                .zip(int)
                .map(|(k, ik)| {
                    let b = bracket(k as f64);
                    let num = rho_weight(s.t, k as f64, p).exp() * s.mode_norm(k);
                    let den = b.powi(n_loss as i32) * s0.mode_norm(k) + b.powi(m - 1) * ik;
                    num / den.max(1e-300)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn master_estimate_check(
    traj: &Trajectory,
    p: &WeightParams,
    nu: u32,
    c: f64,
) -> Result<MasterEstimate, EnergyError> {
    let integrals = forcing_integrals(traj, p, nu)?;
    let ratio = master_ratio_with(traj, p, &integrals, p.n_loss);
    let m = traj.snapshots[0].state.order as u32;
    let fitted_n = (m - 1..=2 * m + 4).find(|&n| master_ratio_with(traj, p, &integrals, n) <= c);
    Ok(MasterEstimate { n_loss: p.n_loss, ratio, fitted_n })
}

/// `max(1, sup_t ‖A(t)‖₂)` over `10⁴` samples.
pub fn default_c0(spec: &CoefficientSpec) -> Result<f64, EnergyError> {
    let mut worst = 1.0f64;
    for t in uniform_grid(spec.horizon, 10_000) {
        let a = companion_matrix(&spec.coeffs_at(t)?);
        worst = worst.max(a.svd(false, false).singular_values.max());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyInequalityReport {
    pub checked: usize,
    pub violations: usize,
    /// `max (d/dt √E_*) / (C₀((T−t)⁻¹+1)√E_* + C₀|F|)` over checked points.
    #[serde(with = "json::ext_real")]
    pub worst_ratio: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Finite-difference check of
/// `d/dt √E_* ≤ C₀((T−t)⁻¹ + 1)√E_* + C₀|F|` at interior samples, with
/// `E_* = (Q_{ε*} V_k, V_k)` and `ε* = ⟨k⟩⁻¹`.
pub fn energy_inequality_check(
    traj: &Trajectory,
    spec: &CoefficientSpec,
    c0: f64,
    slack: f64,
) -> Result<EnergyInequalityReport, EnergyError> {
    let snaps = &traj.snapshots;
    if snaps.len() < 3 {
        return Err(EnergyError::ShortTrajectory(3));
    }
    let sqrt_e: Vec<Vec<f64>> = snaps
        .iter()
        .map(|s| {
            let roots = characteristic_roots(&spec.coeffs_at(s.t())?)?;
            let q = build_quasi_symmetrizer(&roots).expect("order >= 2");
            s.state
                .ks()
                .map(|k| {
                    let qe = q.assemble(1.0 / bracket(k as f64));
                    mode_energy(&qe, s.state.mode(k)).map(f64::sqrt)
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, EnergyError>>()?;
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for i in 1..snaps.len() - 1 {
        let (t0, t, t1) = (snaps[i - 1].t(), snaps[i].t(), snaps[i + 1].t());
        let weight = 1.0 / (spec.horizon - t) + 1.0;
        for idx in 0..sqrt_e[i].len() {
            let lhs = (sqrt_e[i + 1][idx] - sqrt_e[i - 1][idx]) / (t1 - t0);
            let f = snaps[i].forcing.as_ref().map_or(0.0, |f| f[idx].norm());
            let rhs = c0 * weight * sqrt_e[i][idx] + c0 * f;
            checked += 1;
            if lhs > slack * rhs {
                violations += 1;
            }
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            } else if lhs > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(EnergyInequalityReport { checked, violations, worst_ratio: worst, slack, pass: violations == 0 })
}

/// Knobs for [`build_ledger`].
#[derive(Debug, Clone)]
pub struct LedgerOptions {
    pub c0: Option<f64>,
    pub n_loss: Option<u32>,
    pub c: Option<f64>,
    pub r0: Option<f64>,
    pub jmax: usize,
    /// Multiplies the calibrated `r₀`.
    pub eta: f64,
    pub tail_target: f64,
}

impl Default for LedgerOptions {
    fn default() -> Self {
        Self { c0: None, n_loss: None, c: None, r0: None, jmax: 24, eta: 1.0, tail_target: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    pub cinf: Vec<f64>,
    /// `𝓔_j(t)`, `j ≤ J_max`.
    pub energies: Vec<Vec<f64>>,
    pub moments: Vec<Vec<f64>>,
    pub radius: Vec<f64>,
    pub super_energies: SuperEnergies,
    pub params: WeightParams,
    pub jmax: usize,
    pub nu: u32,
    /// `sup_t 𝓔(t)`.
    pub m0: f64,
    /// `sup_t Σ|k|^N |V_k|`.
    pub k_n: f64,
    pub m_const: f64,
    pub c: f64,
    pub l: f64,
    pub r0: f64,
    pub eta: f64,
    pub phi: f64,
    pub master: MasterEstimate,
    /// Master ratio at each recorded time.
    pub master_series: Vec<f64>,
    pub continuation: ContinuationReport,
}

/// Evaluate every energy diagnostic along a trajectory. Defaults: `C₀` from
/// [`default_c0`], `N = m + 1`, `C = max(1, R(N))`, `r₀` calibrated so the
/// tail ratio of `𝓖(0)` is at most `tail_target`, then scaled by `η`.
pub fn build_ledger(
    traj: &Trajectory,
    spec: &CoefficientSpec,
    opts: &LedgerOptions,
) -> Result<EnergyLedger, EnergyError> {
    if traj.snapshots.is_empty() {
        return Err(EnergyError::ShortTrajectory(1));
    }
    let jmax = opts.jmax;
    if (jmax as u32) < spec.nu {
        return Err(EnergyError::Truncation { jmax, nu: spec.nu });
    }
    let c0 = match opts.c0 {
        Some(c) => c,
        None => default_c0(spec)?,
    };
    let params =
        WeightParams { c0, horizon: spec.horizon, n_loss: opts.n_loss.unwrap_or(spec.order as u32 + 1) };
    let nu = spec.nu;
    let times = traj.times();
    let per: Vec<(f64, DerivativeEnergies)> = traj
        .snapshots
        .par_iter()
        .map(|s| {
            (
                cinf_energy(&s.state, &params),
                derivative_energies(&s.state, &params, jmax.max(params.n_loss as usize)),
            )
        })
        .collect();
    let cinf: Vec<f64> = per.iter().map(|p| p.0).collect();
    let energies: Vec<Vec<f64>> = per.iter().map(|p| p.1.energies[..=jmax].to_vec()).collect();
    let moments: Vec<Vec<f64>> = per.iter().map(|p| p.1.moments.clone()).collect();
    let m0 = cinf.iter().copied().fold(0.0, f64::max);
    let k_n = moments.iter().map(|m| m[params.n_loss as usize]).fold(0.0, f64::max);
    let m_const = k_n + m0;

    let integrals = forcing_integrals(traj, &params, nu)?;
    let master_series = master_ratio_series(traj, &params, &integrals, params.n_loss);
    let ratio = master_series.iter().copied().fold(0.0, f64::max);
    let c = opts.c.unwrap_or(ratio.max(1.0));
    let m = spec.order as u32;
    let fitted_n = (m - 1..=2 * m + 4).find(|&n| master_ratio_with(traj, &params, &integrals, n) <= c);
    let master = MasterEstimate { n_loss: params.n_loss, ratio, fitted_n };

    let alpha0 = initial_alpha(&traj.snapshots[0].state, params.n_loss, jmax);
    let r0 = opts.r0.unwrap_or_else(|| calibrate_r0(&alpha0, opts.tail_target)) * opts.eta;
    let (g0, _) = generating_sum(&alpha0, r0);
    let growth = (c * m_const).powi(nu as i32);
    let l = g0 + growth * spec.horizon;
    let phi = phi_of(c, m_const, l, nu);
    let radius: Vec<f64> = times.iter().map(|&t| radius_schedule(r0, phi, t)).collect();
    let super_energies = super_energies(&times, &energies, &alpha0, &radius, nu)?;
    let continuation = continuation_check(&times, &super_energies.g, l, growth);
    Ok(EnergyLedger {
        times,
        cinf,
        energies,
        moments,
        radius,
        super_energies,
        params,
        jmax,
        nu,
        m0,
        k_n,
        m_const,
        c,
        l,
        r0,
        eta: opts.eta,
        phi,
        master,
        master_series,
        continuation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const P: WeightParams = WeightParams { c0: 1.0, horizon: 1.0, n_loss: 3 };

    #[test]
    fn phi_examples() {
        assert_eq!(phi_weight(0.0, 1.0, &P), 2.0);
        for t in [0.0, 0.3, 0.99] {
            assert_eq!(phi_weight(t, 0.0, &P), 1.0);
        }
        assert_eq!(phi_weight(1.0 - 1e-9, 50.0, &P), 51.0);
    }

    #[test]
    fn rho_examples() {
        assert_relative_eq!(rho_weight(0.0, 1.0, &P), 2.0);
        assert_relative_eq!(rho_weight(0.0, std::f64::consts::E, &P), 3.0, epsilon = 1e-14);
        assert_relative_eq!(rho_weight(0.25, 0.0, &P), 0.75);
        assert_eq!(rho_weight(1.0, 7.0, &P), 0.0);
    }

    #[test]
    fn gevrey_examples() {
        let g = gevrey_weight(0.0, 3.0, 2, &LambdaProfile::Constant(1.0), 2, 1.0);
        assert_relative_eq!(g.value, 4.0);
        assert!(!g.below_threshold);
        assert_eq!(gevrey_weight(0.4, 0.0, 2, &LambdaProfile::Constant(1.0), 2, 1.0).value, 0.6);
        let g = gevrey_weight(0.0, 16.0, 8, &LambdaProfile::Constant(2.0), 3, 1.0);
        assert_relative_eq!(g.value, 9.0);
        assert!(gevrey_weight(0.0, 1.0, 2, &LambdaProfile::Constant(1.0), 3, 1.0).below_threshold);
        let sampled = LambdaProfile::Sampled(vec![2.0; 11]);
        assert_relative_eq!(sampled.integral(0.35, 1.0), 1.3, epsilon = 1e-14);
        // Λ(s) = s
        let ramp = LambdaProfile::Sampled((0..=10).map(|i| i as f64 / 10.0).collect());
        assert_relative_eq!(ramp.integral(0.0, 1.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(ramp.integral(0.25, 1.0), 0.5 - 0.03125, epsilon = 1e-14);
    }

    #[test]
    fn mode_energy_examples() {
        let eps: f64 = 0.2;
        let q = DMatrix::from_row_slice(2, 2, &[2.0 + 2.0 * eps * eps, 0.0, 0.0, 2.0]);
        let v = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        assert_relative_eq!(mode_energy(&q, &v).unwrap(), 2.0 + 2.0 * eps * eps);
        let id = DMatrix::identity(3, 3);
        let v = [Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0), Complex64::new(3.0, 0.0)];
        assert_relative_eq!(mode_energy(&id, &v).unwrap(), 15.0);
        assert_eq!(mode_energy(&id, &[Complex64::new(0.0, 0.0); 3]).unwrap(), 0.0);
        let neg = -DMatrix::<f64>::identity(2, 2);
        assert!(mode_energy(&neg, &[Complex64::new(1.0, 0.0); 2]).is_err());
    }

    fn state_with(modes: usize, entries: &[(i64, f64)]) -> SpectralState {
        let mut s = SpectralState::zeros(2, modes);
        for &(k, v) in entries {
            let idx = (k + modes as i64) as usize;
            s.data[idx * 2 + 1] = Complex64::new(v, 0.0);
        }
        s
    }

    #[test]
    fn cinf_examples() {
        let s = state_with(8, &[(0, 1.0)]);
        assert_relative_eq!(cinf_energy(&s, &P), std::f64::consts::E);
        let s = state_with(8, &[(0, 1.0), (3, 0.5), (-5, 0.25)]);
        let scaled = state_with(8, &[(0, 3.0), (3, 1.5), (-5, 0.75)]);
        assert_relative_eq!(cinf_energy(&scaled, &P), 3.0 * cinf_energy(&s, &P), epsilon = 1e-13);
        // exponents beyond 700 stay representable in log form
        let big = WeightParams { c0: 400.0, horizon: 1.0, n_loss: 3 };
        let s = state_with(8, &[(0, 1e-300), (1, 1e-300)]);
        let l = log_cinf_energy(&s, &big);
        assert!(l.is_finite() && l > 0.0, "{l}");
        assert_relative_eq!(cinf_energy(&s, &big), l.exp(), max_relative = 1e-12);
    }

    #[test]
    fn derivative_energy_examples() {
        let s = state_with(8, &[(1, 0.7), (-1, 0.7)]);
        let d = derivative_energies(&s, &P, 6);
        assert!(d.energies.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
        let s = state_with(8, &[(0, 1.0)]);
        let d = derivative_energies(&s, &P, 4);
        assert!(d.energies[1..].iter().all(|&e| e == 0.0));
        assert!(d.energies[0] > 0.0);
    }

    #[test]
    fn geometric_moment_growth() {
        // |V_k| = 2^{-|k|}: M_j / j! ≤ C (1/ln 2)^j
        let kk: i64 = 200;
        let entries: Vec<(i64, f64)> = (-kk..=kk).map(|k| (k, 0.5f64.powi(k.abs() as i32))).collect();
        let s = state_with(kk as usize, &entries);
        let d = derivative_energies(&s, &P, 20);
        let fact = factorials(20);
        let ratios: Vec<f64> =
            (0..=20).map(|j| d.moments[j] / fact[j] / (1.0 / 2f64.ln()).powi(j as i32)).collect();
        let c = ratios.iter().copied().fold(0.0, f64::max);
        assert!(c < 4.0, "{ratios:?}");
    }

    #[test]
    fn super_energy_examples() {
        // 𝓔_j = j! a^j, a r = 1/2
        let jmax = 24;
        let fact = factorials(jmax);
        let a: f64 = 3.0;
        let e: Vec<f64> = (0..=jmax).map(|j| fact[j] * a.powi(j as i32)).collect();
        let (f, tail) = generating_sum(&e, 0.5 / a);
        assert_relative_eq!(f, 2.0 - 0.5f64.powi(jmax as i32), epsilon = 1e-12);
        assert_relative_eq!(tail, 0.5f64.powi(jmax as i32) / f, max_relative = 1e-10);

        let x = [0.3, 0.0, 1.5, 2.0];
        assert_eq!(sequence_power(&x, 1), x.to_vec());
        let delta = [0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(sequence_power(&delta, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(sequence_power(&delta, 0), vec![0.0; 5]);
    }

    #[test]
    fn super_energies_integrate() {
        // ν = 1, 𝓔_j ≡ 1: α_j(t) = α_j(0) + t
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let energies = vec![vec![1.0; 4]; 11];
        let alpha0 = vec![0.5; 4];
        let r = vec![0.1; 11];
        let s = super_energies(&times, &energies, &alpha0, &r, 1).unwrap();
        for (t, a) in times.iter().zip(&s.alpha) {
            assert_relative_eq!(a[0], 0.5 + t, epsilon = 1e-14);
            assert_relative_eq!(a[3], 0.5 + t, epsilon = 1e-12);
        }
        assert!(!s.diverged);
        let wide = super_energies(&times, &energies, &alpha0, &[100.0; 11], 1).unwrap();
        assert!(wide.diverged);
    }

    #[test]
    fn calibration_hits_target() {
        let fact = factorials(24);
        let alpha0: Vec<f64> = (0..=24).map(|j| fact[j] * 2f64.powi(j as i32)).collect();
        let r0 = calibrate_r0(&alpha0, 1e-3);
        let (_, tail) = generating_sum(&alpha0, r0);
        assert!(tail <= 1e-3);
        assert!(generating_sum(&alpha0, r0 * 1.01).1 > 1e-3);
    }

    #[test]
    fn schedule_examples() {
        assert_relative_eq!(radius_schedule(0.5, 1.0, 2f64.ln()), 0.25);
        assert_eq!(radius_schedule(0.5, 3.0, 0.0), 0.5);
        assert_eq!(phi_of(2.5, 10.0, 7.0, 1), 2.5);
        assert_eq!(phi_of(2.5, 10.0, 7.0, 0), 0.0);
    }

    #[test]
    fn continuation_examples() {
        let t = [0.0, 0.5, 0.7, 1.0];
        let r = continuation_check(&t, &[3.0; 4], 5.0, 0.0);
        assert!(r.pass && !r.degenerate_start && r.interior_bound_holds);
        let r = continuation_check(&t, &[3.0, 4.0, 5.0, 6.0], 5.0, 1.0);
        assert!(!r.pass);
        assert_eq!(r.first_crossing, Some(0.7));
        let r = continuation_check(&t, &[5.0, 5.0, 5.0, 5.0], 5.0, 1.0);
        assert!(r.degenerate_start);
        assert_eq!(r.first_crossing, Some(0.0));
    }

    proptest! {
        #[test]
        fn rho_is_continuous_and_bounded(t in 0.0f64..1.0, xi in 0.0f64..1e4) {
            let rho = rho_weight(t, xi, &P);
            prop_assert!(rho >= 0.0);
            let p2 = WeightParams { horizon: 2.0, ..P };
            let tau = 2.0 - 1.0 / xi.max(0.6);
            let below = rho_weight(tau - 1e-12, xi.max(0.6), &p2);
            let above = rho_weight(tau + 1e-12, xi.max(0.6), &p2);
            // Φ ≤ C₀⟨ξ⟩ bounds the jump across a 2e−12 window
            prop_assert!((below - above).abs() < 1e-9 * (1.0 + xi));
        }

        #[test]
        fn gevrey_subadditive_above_threshold(k1 in 0i64..2000, k2 in 0i64..2000, t in 0.0f64..1.0) {
            let g = |x: i64| gevrey_weight(t, x as f64, 4, &LambdaProfile::Constant(1.5), 3, 1.0).value;
            prop_assert!(g(k1 + k2) <= g(k1) + g(k2) + 1e-12);
        }
    }

    #[test]
    fn gevrey_subadditivity_fails_below_threshold() {
        // m = 3, k = 2: exponent 2
        let g = |x: f64| gevrey_weight(0.0, x, 2, &LambdaProfile::Constant(1.0), 3, 1.0).value;
        assert!(g(20.0) > g(10.0) + g(10.0));
    }
}
