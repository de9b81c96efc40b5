//! Fourier-side solver on the periodic domain `[0, 2π)`.
//!
//! Each mode carries `V_k = ((ik)^{m−1}û_k, (ik)^{m−2}∂ₜû_k, …, ∂ₜ^{m−1}û_k)`
//! and obeys `V_k' + ik A(t) V_k = F_k` with `F_k = (0, …, 0, (û^{*ν})_k)`.
//! At `k = 0` the leading components of `V_0` vanish, so the state also keeps
//! the chain `(û_0, ∂ₜû_0, …, ∂ₜ^{m−2}û_0)` driven by the last slot of `V_0`.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::equation::{CoefficientEvalError, CoefficientSpec};
use crate::exprdsl::EvalError;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("grid size {grid} must be a power of two and at least 4K = {}", 4 * modes)]
    Grid { grid: usize, modes: usize },
    #[error("initial datum {index} at x = {x}: {source}")]
    Initial { index: usize, x: f64, source: EvalError },
    #[error(transparent)]
    Coefficient(#[from] CoefficientEvalError),
    #[error(
        "stability guard violated: dt (1 + {spectral_radius}) K = {value} > 2.5 (dt = {dt}, K = {modes})"
    )]
    Stability { dt: f64, modes: usize, spectral_radius: f64, value: f64 },
    #[error("non-finite state produced by the step from t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid time step {0}")]
    TimeStep(f64),
}

/// `A(t)`: `−1` on the superdiagonal, last row `(a_m, …, a_1)`.
pub fn companion_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let m = coeffs.len();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m - 1 {
        a[(i, i + 1)] = -1.0;
    }
    for h in 1..=m {
        a[(m - 1, m - h)] = coeffs[h - 1];
    }
    a
}

/// Largest eigenvalue modulus of `A`.
pub fn spectral_radius(coeffs: &[f64]) -> f64 {
    companion_matrix(coeffs).complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub order: usize,
    pub modes: usize,
    pub t: f64,
    /// `V_k` for `k = −K..=K`, row-major: slot `(k + K) * m + l`.
    pub data: Vec<Complex64>,
    /// `û_0, ∂ₜû_0, …, ∂ₜ^{m−2}û_0`.
    pub chain: Vec<Complex64>,
    pub real_symmetric: bool,
}

impl SpectralState {
    pub fn zeros(order: usize, modes: usize) -> Self {
        Self {
            order,
            modes,
            t: 0.0,
            data: vec![ZERO; (2 * modes + 1) * order],
            chain: vec![ZERO; order - 1],
            real_symmetric: true,
        }
    }

    /// State with a single Fourier coefficient profile `û^{(h)}_k`, indexed
    /// `[h][k + K]`.
    pub fn from_coefficients(order: usize, modes: usize, uhat: &[Vec<Complex64>]) -> Self {
        let mut s = Self::zeros(order, modes);
        let m = order;
        for k in -(modes as i64)..=modes as i64 {
            let ik = I * k as f64;
            let idx = (k + modes as i64) as usize;
            for (l, row) in uhat.iter().enumerate().take(m) {
                s.data[idx * m + l] = ik.powu((m - 1 - l) as u32) * row[idx];
            }
        }
        for (slot, row) in s.chain.iter_mut().zip(uhat) {
            *slot = row[modes];
        }
        s
    }

    pub fn mode(&self, k: i64) -> &[Complex64] {
        let idx = (k + self.modes as i64) as usize;
        &self.data[idx * self.order..(idx + 1) * self.order]
    }

    pub fn ks(&self) -> impl Iterator<Item = i64> {
        let k = self.modes as i64;
        -k..=k
    }

    /// `|V_k|`.
    pub fn mode_norm(&self, k: i64) -> f64 {
        let v = self.mode(k);
        let scale = v.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        scale * v.iter().map(|z| (z / scale).norm_sqr()).sum::<f64>().sqrt()
    }

    /// `û_k`.
    pub fn u_hat(&self, k: i64) -> Complex64 {
        if k == 0 {
            self.chain[0]
        } else {
            self.mode(k)[0] / (I * k as f64).powu(self.order as u32 - 1)
        }
    }

    /// `û_k` for `k = −K..=K`.
    pub fn u_hat_all(&self) -> Vec<Complex64> {
        self.ks().map(|k| self.u_hat(k)).collect()
    }

    /// `|V_k| / |k|^{m−1}` for `k ≠ 0`, `|û_0|` at `k = 0`.
    pub fn amplitude(&self, k: i64) -> f64 {
        if k == 0 {
            self.chain[0].norm()
        } else {
            self.mode_norm(k) / (k.unsigned_abs() as f64).powi(self.order as i32 - 1)
        }
    }

    pub fn sup_norm(&self) -> f64 {
        let v = self.ks().map(|k| self.mode_norm(k)).fold(0.0, f64::max);
        self.chain.iter().map(|z| z.norm()).fold(v, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().chain(&self.chain).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `max_k |V_{−k} − conj V_k| / max_k |V_k|`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let scale = self.sup_norm();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for k in 1..=self.modes as i64 {
            for (a, b) in self.mode(k).iter().zip(self.mode(-k)) {
                worst = worst.max((a.conj() - b).norm());
            }
        }
        for z in self.chain.iter().chain(self.mode(0)) {
            worst = worst.max(z.im.abs());
        }
        worst / scale
    }

    fn axpy(&self, h: f64, d: &Derivative) -> Self {
        let mut out = self.clone();
        for (x, dx) in out.data.iter_mut().zip(&d.data) {
            *x += dx * h;
        }
        for (x, dx) in out.chain.iter_mut().zip(&d.chain) {
            *x += dx * h;
        }
        out
    }
}

/// Sample the initial data on `G` points and build `V_k` for `|k| ≤ K`.
pub fn assemble_state(
    spec: &CoefficientSpec,
    modes: usize,
    grid: usize,
) -> Result<SpectralState, SpectralError> {
    if !grid.is_power_of_two() || grid < 4 * modes {
        return Err(SpectralError::Grid { grid, modes });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(grid);
    let mut uhat = Vec::with_capacity(spec.order);
    for (index, expr) in spec.initial.iter().enumerate() {
        let mut buf = (0..grid)
            .map(|j| {
                let x = 2.0 * std::f64::consts::PI * j as f64 / grid as f64;
                expr.eval_at("x", x)
                    .map(|v| Complex64::new(v, 0.0))
                    .map_err(|source| SpectralError::Initial { index, x, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        fft.process(&mut buf);
        let scale = 1.0 / grid as f64;
        let mut coeffs = vec![ZERO; 2 * modes + 1];
        coeffs[modes] = Complex64::new(buf[0].re * scale, 0.0);
        for k in 1..=modes {
            let c = buf[k] * scale;
            // real data: enforce exact conjugate symmetry
            let c = 0.5 * (c + (buf[grid - k] * scale).conj());
            coeffs[modes + k] = c;
            coeffs[modes - k] = c.conj();
        }
        uhat.push(coeffs);
    }
    Ok(SpectralState::from_coefficients(spec.order, modes, &uhat))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    #[default]
    Direct,
    /// Zero-padded transform; exact up to round-off.
    Padded,
}

/// `(û^{*ν})_k` for `|k| ≤ K`, indexed `k + K`.
pub fn convolution_power(u: &[Complex64], nu: u32, method: ConvolutionMethod) -> Vec<Complex64> {
    let modes = (u.len() - 1) / 2;
    match nu {
        0 => {
            let mut out = vec![ZERO; u.len()];
            out[modes] = Complex64::new(1.0, 0.0);
            out
        }
        1 => u.to_vec(),
        _ => match method {
            ConvolutionMethod::Direct => direct_power(u, nu),
            ConvolutionMethod::Padded => padded_power(u, nu),
        },
    }
}

fn direct_power(u: &[Complex64], nu: u32) -> Vec<Complex64> {
    let kk = ((u.len() - 1) / 2) as i64;
    let nu = nu as i64;
    // p-fold partial product, kept on |k| ≤ min(p, ν−p+1)·K
    let mut cur = u.to_vec();
    let mut width = kk;
    for p in 2..=nu {
        let new_width = p.min(nu - p + 1) * kk;
        let prev = &cur;
        let next: Vec<Complex64> = (-new_width..=new_width)
            .into_par_iter()
            .map(|k| {
                let lo = (-kk).max(k - width);
                let hi = kk.min(k + width);
                let mut acc = ZERO;
                for j in lo..=hi {
                    acc += prev[(k - j + width) as usize] * u[(j + kk) as usize];
                }
                acc
            })
            .collect();
        cur = next;
        width = new_width;
    }
    debug_assert_eq!(width, kk);
    cur
}

fn padded_power(u: &[Complex64], nu: u32) -> Vec<Complex64> {
    let kk = (u.len() - 1) / 2;
    let n = ((nu as usize + 1) * kk + 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf = vec![ZERO; n];
    for k in 0..=kk {
        buf[k] = u[kk + k];
        if k > 0 {
            buf[n - k] = u[kk - k];
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for z in buf.iter_mut() {
        *z = z.powu(nu);
    }
    planner.plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let mut out = vec![ZERO; 2 * kk + 1];
    for k in 0..=kk {
        out[kk + k] = buf[k] * scale;
        if k > 0 {
            out[kk - k] = buf[n - k] * scale;
        }
    }
    out
}

/// `F_k = (0, …, 0, f_k)`; returns `f_k` for `k = −K..=K`. `ν = 0` disables
/// the source.
pub fn nonlinear_rhs(state: &SpectralState, nu: u32, method: ConvolutionMethod) -> Vec<Complex64> {
    if nu == 0 {
        return vec![ZERO; 2 * state.modes + 1];
    }
    convolution_power(&state.u_hat_all(), nu, method)
}

struct Derivative {
    data: Vec<Complex64>,
    chain: Vec<Complex64>,
}

/// Right-hand side of the mode system with frozen coefficients.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub nu: u32,
    pub method: ConvolutionMethod,
}

impl Dynamics {
    fn derivative(&self, s: &SpectralState, coeffs: &[f64]) -> Derivative {
        let m = s.order;
        let kk = s.modes as i64;
        let f = nonlinear_rhs(s, self.nu, self.method);
        let data: Vec<Complex64> = s
            .data
            .par_chunks(m)
            .zip(f.par_iter())
            .enumerate()
            .flat_map_iter(|(idx, (v, fk))| {
                let ik = I * (idx as i64 - kk) as f64;
                let mut d = vec![ZERO; m];
                // −ik A V
                for l in 0..m - 1 {
                    d[l] = ik * v[l + 1];
                }
                let mut last = ZERO;
                for h in 1..=m {
                    last += v[m - h] * coeffs[h - 1];
                }
                d[m - 1] = *fk - ik * last;
                d
            })
            .collect();
        let mut chain = s.chain[1..].to_vec();
        chain.push(s.data[kk as usize * m + m - 1]);
        Derivative { data, chain }
    }
}

/// Classical RK4 step; the caller supplies `a(t)` at `t`, `t + dt/2`, `t + dt`.
pub fn step(
    state: &SpectralState,
    dt: f64,
    coeffs: [&[f64]; 3],
    dynamics: &Dynamics,
) -> Result<SpectralState, SpectralError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SpectralError::TimeStep(dt));
    }
    let k1 = dynamics.derivative(state, coeffs[0]);
    let k2 = dynamics.derivative(&state.axpy(0.5 * dt, &k1), coeffs[1]);
    let k3 = dynamics.derivative(&state.axpy(0.5 * dt, &k2), coeffs[1]);
    let k4 = dynamics.derivative(&state.axpy(dt, &k3), coeffs[2]);
    let mut out = state.clone();
    let w = dt / 6.0;
    for i in 0..out.data.len() {
        out.data[i] += w * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
    }
    for i in 0..out.chain.len() {
        out.chain[i] += w * (k1.chain[i] + 2.0 * k2.chain[i] + 2.0 * k3.chain[i] + k4.chain[i]);
    }
    out.t = state.t + dt;
    if !out.is_finite() {
        return Err(SpectralError::NonFinite { t: state.t });
    }
    Ok(out)
}

/// `max_t ρ_spec(A(t))` over a uniform grid of `points + 1` samples.
pub fn max_spectral_radius(spec: &CoefficientSpec, points: usize) -> Result<f64, SpectralError> {
    let mut worst = 0.0f64;
    for t in crate::equation::uniform_grid(spec.horizon, points) {
        worst = worst.max(spectral_radius(&spec.coeffs_at(t)?));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct SimulationSettings {
    pub modes: usize,
    pub grid: usize,
    pub dt: f64,
    /// Record every `stride` steps (the initial and final states are always recorded).
    pub stride: usize,
    /// Abort once `sup_k |V_k|` exceeds this.
    pub ceiling: f64,
    pub record_forcing: bool,
    pub method: ConvolutionMethod,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            modes: 64,
            grid: 256,
            dt: 1e-3,
            stride: 1,
            ceiling: 1e8,
            record_forcing: false,
            method: ConvolutionMethod::Direct,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: SpectralState,
    /// `f_k` for `k = −K..=K` when forcing is recorded.
    pub forcing: Option<Vec<Complex64>>,
}

impl Snapshot {
    pub fn t(&self) -> f64 {
        self.state.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    /// `sup_k |V_k|` exceeded the ceiling; `t` is the last valid time.
    BlowUp {
        t: f64,
        sup: f64,
    },
    NonFinite {
        t: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub abort: Option<Abort>,
}

impl Trajectory {
    pub fn last(&self) -> &SpectralState {
        &self.snapshots.last().expect("trajectory has a first snapshot").state
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(Snapshot::t).collect()
    }
}

/// Integrate from `t = 0` to `T` with fixed `dt` (the final step is
/// shortened to land on `T`).
pub fn simulate(spec: &CoefficientSpec, settings: &SimulationSettings) -> Result<Trajectory, SpectralError> {
    let dt = settings.dt;
    if !(dt > 0.0 && dt < spec.horizon) {
        return Err(SpectralError::TimeStep(dt));
    }
    let rho = max_spectral_radius(spec, 1000)?;
    let guard = dt * (1.0 + rho) * settings.modes as f64;
    if guard > 2.5 {
        return Err(SpectralError::Stability {
            dt,
            modes: settings.modes,
            spectral_radius: rho,
            value: guard,
        });
    }
    let dynamics = Dynamics { nu: spec.nu, method: settings.method };
    let mut state = assemble_state(spec, settings.modes, settings.grid)?;
    let snap = |s: &SpectralState| Snapshot {
        forcing: settings.record_forcing.then(|| nonlinear_rhs(s, dynamics.nu, dynamics.method)),
        state: s.clone(),
    };
    let mut snapshots = vec![snap(&state)];
    let steps = ((spec.horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let stride = settings.stride.max(1);
    let mut abort = None;
    for n in 0..steps {
        let t0 = n as f64 * dt;
        let t1 = if n + 1 == steps { spec.horizon } else { (n + 1) as f64 * dt };
        let h = t1 - t0;
        let c0 = spec.coeffs_at(t0)?;
        let ch = spec.coeffs_at(t0 + 0.5 * h)?;
        let c1 = spec.coeffs_at(t1)?;
        let next = match step(&state, h, [&c0, &ch, &c1], &dynamics) {
            Ok(s) => s,
            Err(SpectralError::NonFinite { t }) => {
                abort = Some(Abort::NonFinite { t });
                break;
            }
            Err(e) => return Err(e),
        };
        let sup = next.sup_norm();
        if sup > settings.ceiling {
            abort = Some(Abort::BlowUp { t: state.t, sup });
            break;
        }
        state = next;
        state.t = t1;
        if (n + 1) % stride == 0 || n + 1 == steps {
            snapshots.push(snap(&state));
        }
    }
    if abort.is_some() && snapshots.last().map(Snapshot::t) != Some(state.t) {
        snapshots.push(snap(&state));
    }
    Ok(Trajectory { dt, snapshots, abort })
}

/// `t,k,re_V1,im_V1,…` with 17 significant digits.
pub fn write_spectrum_csv<W: Write>(mut w: W, traj: &Trajectory) -> std::io::Result<()> {
    let m = traj.snapshots.first().map_or(0, |s| s.state.order);
    write!(w, "t,k")?;
    for l in 1..=m {
        write!(w, ",re_V{l},im_V{l}")?;
    }
    writeln!(w)?;
    for snap in &traj.snapshots {
        let s = &snap.state;
        for k in s.ks() {
            write!(w, "{:.16e},{}", s.t, k)?;
            for z in s.mode(k) {
                write!(w, ",{:.16e},{:.16e}", z.re, z.im)?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
