//! Strip-width estimates from a spectrum: a log-linear decay fit and the
//! ratio test on spatial moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::SpectralState;

#[derive(Debug, Error, PartialEq)]
pub enum RadiusError {
    #[error("only {found} modes with |k| >= 2 above the floor (need {needed})")]
    InsufficientBand { found: usize, needed: usize },
    #[error("moment M_{0} vanishes")]
    ZeroMoment(usize),
    #[error("moment window needs at least 4 entries (got {0})")]
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    pub r_hat: f64,
    pub prefactor: f64,
    pub band_lo: u64,
    pub band_hi: u64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub s: f64,
}

/// Mode amplitudes `(k, |V_k| / |k|^{m−1})`; for the wave equation these
/// equal `|û_k|` at `t = 0` and stay free of the nodes of `|û_k(t)|`.
pub fn mode_amplitudes(state: &SpectralState) -> Vec<(i64, f64)> {
    state.ks().map(|k| (k, state.amplitude(k))).collect()
}

/// Default noise floor relative to the largest amplitude.
pub const RELATIVE_FLOOR: f64 = 1e-13;
const MIN_MODES: usize = 8;

/// Least-squares fit of `ln a_k ≈ ln C − r |k|^{1/s}` over modes with
/// `|k| ≥ 2` and `a_k > floor`. `spectrum` holds `(k, a_k)` pairs.
pub fn fit_decay(spectrum: &[(i64, f64)], floor: f64, s: f64) -> Result<RadiusEstimate, RadiusError> {
    let pts: Vec<(u64, f64, f64)> = spectrum
        .iter()
        .filter(|(k, a)| k.unsigned_abs() >= 2 && *a > floor && a.is_finite())
        .map(|&(k, a)| (k.unsigned_abs(), (k.unsigned_abs() as f64).powf(1.0 / s), a.ln()))
        .collect();
    if pts.len() < MIN_MODES {
        return Err(RadiusError::InsufficientBand { found: pts.len(), needed: MIN_MODES });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.2).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.1 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.1 - mx) * (p.2 - my)).sum();
    if sxx == 0.0 {
        return Err(RadiusError::InsufficientBand { found: 1, needed: MIN_MODES });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.2 - intercept - slope * p.1).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RadiusEstimate {
        r_hat: (-slope).max(0.0),
        prefactor: intercept.exp(),
        band_lo: pts.iter().map(|p| p.0).min().unwrap_or(0),
        band_hi: pts.iter().map(|p| p.0).max().unwrap_or(0),
        residual,
        s,
    })
}

/// [`fit_decay`] with the floor set to `1e−13 · max a_k`.
pub fn fit_decay_default(spectrum: &[(i64, f64)], s: f64) -> Result<RadiusEstimate, RadiusError> {
    let top = spectrum.iter().map(|p| p.1).fold(0.0, f64::max);
    fit_decay(spectrum, RELATIVE_FLOOR * top, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRadius {
    pub r_hat: f64,
    /// `(j + 1) M_j / M_{j+1}` over the window.
    pub ratios: Vec<f64>,
    /// Ratios grow across the window instead of settling.
    pub non_factorial: bool,
}

/// Median over `j ∈ [lo, hi)` of `(j + 1) M_j / M_{j+1}`.
pub fn fit_moment_radius(moments: &[f64], lo: usize, hi: usize) -> Result<MomentRadius, RadiusError> {
    let hi = hi.min(moments.len().saturating_sub(1));
    if hi < lo + 4 {
        return Err(RadiusError::Window(hi.saturating_sub(lo)));
    }
    if let Some(j) = (lo..=hi).find(|&j| moments[j] == 0.0) {
        return Err(RadiusError::ZeroMoment(j));
    }
    let ratios: Vec<f64> = (lo..hi).map(|j| (j + 1) as f64 * moments[j] / moments[j + 1]).collect();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    // factorial-geometric growth makes the ratio settle; polynomial growth makes it climb like j
    let first = ratios[0];
    let last = ratios[n - 1];
    let non_factorial = last > 1.5 * first && ratios.windows(2).all(|w| w[1] >= w[0]);
    Ok(MomentRadius { r_hat: median, ratios, non_factorial })
}
