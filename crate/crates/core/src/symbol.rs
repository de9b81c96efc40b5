//! Characteristic roots, the root-separation condition
//! `λᵢ² + λⱼ² ≤ M(λᵢ − λⱼ)²` and its discriminant forms for `m = 2, 3`.
//!
//! Roots are those of `λᵐ + a₁λᵐ⁻¹ + … + a_m`. The system matrix used by the
//! solver has the negated spectrum; every check here is invariant under
//! `λ → −λ`, so verdicts do not depend on that convention.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equation::{CoefficientEvalError, CoefficientSpec};
use crate::json;

#[derive(Debug, Error)]
pub enum SymbolError {
    #[error("non-hyperbolic symbol{}: root with |Im| = {max_imag:e} exceeds tolerance {tolerance:e}",
        .t.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    NonHyperbolic { t: Option<f64>, max_imag: f64, tolerance: f64 },
    #[error("order must be at least 2 (got {0})")]
    Order(usize),
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("discriminant form only available for m = 2 or 3 (got {0})")]
    UnsupportedOrder(usize),
    #[error(transparent)]
    Coefficient(#[from] CoefficientEvalError),
}

/// Sorted real roots at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootProfile {
    pub t: f64,
    pub roots: Vec<f64>,
    /// Largest |Im| discarded while folding eigenvalues onto the real line.
    pub max_imag: f64,
}

/// Default hyperbolicity tolerance `1e-8 (1 + max|a_h|)`.
pub fn hyperbolicity_tolerance(coeffs: &[f64]) -> f64 {
    1e-8 * (1.0 + coeffs.iter().fold(0.0f64, |m, a| m.max(a.abs())))
}

/// Companion matrix of the monic polynomial: ones on the superdiagonal and
/// last row `(-a_m, …, -a_1)`; its eigenvalues are the characteristic roots.
fn root_companion(coeffs: &[f64]) -> DMatrix<f64> {
    let m = coeffs.len();
    let mut c = DMatrix::zeros(m, m);
    for k in 0..m - 1 {
        c[(k, k + 1)] = 1.0;
    }
    for (h, a) in coeffs.iter().enumerate() {
        // a_{h+1} multiplies λ^{m-h-1}
        c[(m - 1, m - 1 - h)] = -a;
    }
    c
}

/// Parlett–Reinsch diagonal balancing with power-of-two scalings.
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let radix = 2.0f64;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= radix * radix;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Roots of `λᵐ + a₁λᵐ⁻¹ + … + a_m`, ascending, with imaginary parts below
/// `tolerance` folded to zero.
///
/// Eigenvalues of a balanced companion matrix. Roots closer than
/// `10·tolerance·scale` are merged to their mean (rounding splits a double
/// root by about `sqrt(ε_mach)·scale`), and roots within that distance of
/// zero snap to zero.
pub fn characteristic_roots_with_tolerance(
    coeffs: &[f64],
    tolerance: f64,
) -> Result<RootProfile, SymbolError> {
    let m = coeffs.len();
    if m < 2 {
        return Err(SymbolError::Order(m));
    }
    if coeffs.iter().any(|a| !a.is_finite()) {
        return Err(SymbolError::NonFinite);
    }
    let mut c = root_companion(coeffs);
    balance(&mut c);
    let eig = c.complex_eigenvalues();
    let max_imag = eig.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    if max_imag > tolerance {
        return Err(SymbolError::NonHyperbolic { t: None, max_imag, tolerance });
    }
    let mut roots: Vec<f64> = eig.iter().map(|z| z.re).collect();
    roots.sort_by(f64::total_cmp);

    let scale = 1.0 + roots.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    let merge = 10.0 * tolerance * scale;
    let mut i = 0;
    while i < m {
        let mut j = i + 1;
        while j < m && roots[j] - roots[j - 1] <= merge {
            j += 1;
        }
        if j - i > 1 {
            let mean = roots[i..j].iter().sum::<f64>() / (j - i) as f64;
            roots[i..j].iter_mut().for_each(|r| *r = mean);
        }
        i = j;
    }
    for r in roots.iter_mut() {
        if r.abs() <= merge {
            *r = 0.0;
        }
    }
    Ok(RootProfile { t: f64::NAN, roots, max_imag })
}

pub fn characteristic_roots(coeffs: &[f64]) -> Result<Vec<f64>, SymbolError> {
    characteristic_roots_with_tolerance(coeffs, hyperbolicity_tolerance(coeffs)).map(|p| p.roots)
}

/// Roots at time `t` of the equation's symbol.
pub fn root_profile(spec: &CoefficientSpec, t: f64) -> Result<RootProfile, SymbolError> {
    let coeffs = spec.coeffs_at(t)?;
    match characteristic_roots_with_tolerance(&coeffs, hyperbolicity_tolerance(&coeffs)) {
        Ok(mut p) => {
            p.t = t;
            Ok(p)
        }
        Err(SymbolError::NonHyperbolic { max_imag, tolerance, .. }) => {
            Err(SymbolError::NonHyperbolic { t: Some(t), max_imag, tolerance })
        }
        Err(e) => Err(e),
    }
}

/// `max_{i≠j} (λᵢ² + λⱼ²)/(λᵢ − λⱼ)²`; a `0 = 0` pair contributes 0 and a
/// coinciding nonzero pair gives `+∞`.
pub fn diam_ratio(roots: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &a) in roots.iter().enumerate() {
        for &b in &roots[i + 1..] {
            let num = a * a + b * b;
            let gap = (a - b) * (a - b);
            let q = if gap == 0.0 {
                if num == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                num / gap
            };
            worst = worst.max(q);
        }
    }
    worst
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiamReport {
    pub grid: Vec<f64>,
    #[serde(rename = "M", with = "json::ext_real_vec")]
    pub m_values: Vec<f64>,
    #[serde(rename = "M_sup", with = "json::ext_real")]
    pub m_sup: f64,
    pub satisfied: bool,
    pub failure_times: Vec<f64>,
}

pub fn check_diam(spec: &CoefficientSpec, grid: &[f64]) -> Result<DiamReport, SymbolError> {
    let mut m_values = Vec::with_capacity(grid.len());
    let mut failure_times = Vec::new();
    for &t in grid {
        let p = root_profile(spec, t)?;
        let m = diam_ratio(&p.roots);
        if !m.is_finite() {
            failure_times.push(t);
        }
        m_values.push(m);
    }
    let m_sup = m_values.iter().copied().fold(0.0f64, f64::max);
    Ok(DiamReport { grid: grid.to_vec(), m_values, m_sup, satisfied: m_sup.is_finite(), failure_times })
}

/// Coefficient form of the separation condition at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantReport {
    pub delta: f64,
    pub rhs: f64,
    #[serde(with = "json::ext_real")]
    pub ratio: f64,
    pub holds: bool,
}

/// Double-double accumulator; the discriminant cancels badly near a double
/// root, so its terms are summed without intermediate rounding.
#[derive(Clone, Copy)]
struct Compensated(f64, f64);

impl Compensated {
    fn product(a: f64, b: f64) -> Self {
        let p = a * b;
        Self(p, a.mul_add(b, -p))
    }

    fn scale(self, b: f64) -> Self {
        let Self(hi, lo) = Self::product(self.0, b);
        Self::sum(hi, lo + self.1 * b)
    }

    fn sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let v = s - a;
        Self(s, (a - (s - v)) + (b - v))
    }

    fn add(self, other: Self) -> Self {
        let Self(hi, lo) = Self::sum(self.0, other.0);
        Self::sum(hi, lo + self.1 + other.1)
    }

    fn value(self) -> f64 {
        self.0 + self.1
    }
}

/// `Δ` and the comparison term for `m = 2` (`a₁² − 4a₂` vs `a₁²`) and
/// `m = 3` (cubic discriminant vs `(a₁a₂ − 9a₃)²`). The condition holds
/// when `Δ ≥ 0` and `Δ/rhs ≥ c`.
pub fn discriminant_check(coeffs: &[f64], c: f64) -> Result<DiscriminantReport, SymbolError> {
    let (delta, rhs) = match *coeffs {
        [a1, a2] => (Compensated::product(a1, a1).add(Compensated(-4.0 * a2, 0.0)).value(), a1 * a1),
        [a1, a2, a3] => {
            let terms = [
                Compensated::product(a2, a2).scale(a2).scale(-4.0),
                Compensated::product(a3, a3).scale(-27.0),
                Compensated::product(a1, a1).scale(a2).scale(a2),
                Compensated::product(a1, a1).scale(a1).scale(a3).scale(-4.0),
                Compensated::product(a1, a2).scale(a3).scale(18.0),
            ];
            let delta = terms[1..].iter().fold(terms[0], |acc, t| acc.add(*t)).value();
            let gap = Compensated::product(a1, a2).add(Compensated::product(a3, -9.0)).value();
            (delta, gap * gap)
        }
        _ => return Err(SymbolError::UnsupportedOrder(coeffs.len())),
    };
    let ratio = if rhs == 0.0 {
        if delta == 0.0 {
            1.0
        } else if delta > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        delta / rhs
    };
    Ok(DiscriminantReport { delta, rhs, ratio, holds: delta >= 0.0 && ratio >= c })
}

/// Monic polynomial coefficients `[a_1, …, a_m]` with the given roots.
pub fn coefficients_from_roots(roots: &[f64]) -> Vec<f64> {
    // p(λ) = Π (λ − r); poly[d] holds the coefficient of λ^{deg-d}
    let mut poly = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; poly.len() + 1];
        for (d, c) in poly.iter().enumerate() {
            next[d] += c;
            next[d + 1] -= c * r;
        }
        poly = next;
    }
    poly[1..].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn roots_examples() {
        let r = characteristic_roots(&[0.0, -1.0]).unwrap();
        assert_relative_eq!(r[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(r[1], 1.0, epsilon = 1e-14);
        let r = characteristic_roots(&[0.0, -1.0, 0.0]).unwrap();
        assert_relative_eq!(r[0], -1.0, epsilon = 1e-14);
        assert_eq!(r[1], 0.0);
        assert_relative_eq!(r[2], 1.0, epsilon = 1e-14);
        assert!(matches!(characteristic_roots(&[0.0, 1.0]), Err(SymbolError::NonHyperbolic { .. })));
    }

    #[test]
    fn multiple_roots_coincide() {
        let r = characteristic_roots(&[-2.0, 1.0]).unwrap();
        assert_eq!(r[0], r[1]);
        assert_relative_eq!(r[0], 1.0, epsilon = 1e-12);
        assert_eq!(characteristic_roots(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // (λ+1)²(λ−2)
        let r = characteristic_roots(&coefficients_from_roots(&[-1.0, -1.0, 2.0])).unwrap();
        assert_eq!(r[0], r[1]);
        assert_relative_eq!(r[0], -1.0, epsilon = 1e-7);
    }

    #[test]
    fn diam_examples() {
        assert_eq!(diam_ratio(&[-1.0, 1.0]), 0.5);
        assert_eq!(diam_ratio(&[0.0, 0.0]), 0.0);
        assert_eq!(diam_ratio(&[-1.0, 0.0, 1.0]), 1.0);
        assert_eq!(diam_ratio(&[1.0, 1.0]), f64::INFINITY);
    }

    #[test]
    fn check_diam_examples() {
        let grid = crate::equation::uniform_grid(1.0, 100);
        let spec = CoefficientSpec::from_sources(2, 1.0, &["0", "-t^2"], 0, &["0", "0"]).unwrap();
        let rep = check_diam(&spec, &grid).unwrap();
        assert!(rep.satisfied);
        assert_relative_eq!(rep.m_sup, 0.5, epsilon = 1e-12);

        let spec = CoefficientSpec::from_sources(2, 1.0, &["0", "-1"], 0, &["0", "0"]).unwrap();
        let rep = check_diam(&spec, &grid).unwrap();
        assert!(rep.satisfied);
        assert_relative_eq!(rep.m_sup, 0.5, epsilon = 1e-12);

        let spec = CoefficientSpec::from_sources(2, 1.0, &["-2", "1"], 0, &["0", "0"]).unwrap();
        let rep = check_diam(&spec, &grid).unwrap();
        assert!(!rep.satisfied);
        assert!(rep.m_values.iter().all(|m| m.is_infinite()));
        assert_eq!(rep.failure_times.len(), grid.len());
        let js = serde_json::to_value(&rep).unwrap();
        assert_eq!(js["M_sup"], "inf");
    }

    #[test]
    fn non_hyperbolic_reports_time() {
        let spec = CoefficientSpec::from_sources(2, 1.0, &["0", "t - 0.5"], 0, &["0", "0"]).unwrap();
        let grid = crate::equation::uniform_grid(1.0, 10);
        match check_diam(&spec, &grid) {
            Err(SymbolError::NonHyperbolic { t: Some(t), .. }) => assert!(t > 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn discriminant_examples() {
        let d = discriminant_check(&[0.0, -1.0], 0.1).unwrap();
        assert_eq!((d.delta, d.rhs, d.ratio), (4.0, 0.0, f64::INFINITY));
        assert!(d.holds);
        let d = discriminant_check(&[-2.0, 1.0], 0.1).unwrap();
        assert_eq!((d.delta, d.rhs, d.ratio), (0.0, 4.0, 0.0));
        assert!(!d.holds);
        let d = discriminant_check(&[0.0, -1.0, 0.0], 0.1).unwrap();
        assert_eq!((d.delta, d.rhs, d.ratio), (4.0, 0.0, f64::INFINITY));
        let d = discriminant_check(&[0.0, 0.0], 0.1).unwrap();
        assert_eq!(d.ratio, 1.0);
        assert!(matches!(discriminant_check(&[0.0; 4], 0.1), Err(SymbolError::UnsupportedOrder(4))));
    }

    #[test]
    fn cubic_discriminant_matches_root_product() {
        // roots {-1, 0, 1}: Π(λᵢ−λⱼ)² = 1·4·1
        let roots = [-1.0, 0.0, 1.0];
        let mut prod = 1.0;
        for i in 0..3 {
            for j in i + 1..3 {
                prod *= (roots[i] - roots[j]) * (roots[i] - roots[j]);
            }
        }
        assert_eq!(prod, 4.0);
        assert_eq!(discriminant_check(&[0.0, -1.0, 0.0], 0.0).unwrap().delta, prod);
    }

    proptest! {
        #[test]
        fn diam_sign_and_scale_invariant(
            roots in proptest::collection::vec(-3.0f64..3.0, 2..6),
            s in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
        ) {
            let m = diam_ratio(&roots);
            let flipped: Vec<f64> = roots.iter().map(|r| -r).collect();
            let scaled: Vec<f64> = roots.iter().map(|r| s * r).collect();
            prop_assert!((diam_ratio(&flipped) - m).abs() <= 1e-12 * m.max(1.0));
            prop_assert!((diam_ratio(&scaled) - m).abs() <= 1e-9 * m.max(1.0));
        }

        #[test]
        fn quadratic_discriminant_is_squared_gap(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            prop_assume!((a - b).abs() > 1e-3);
            let coeffs = coefficients_from_roots(&[a, b]);
            let r = characteristic_roots(&coeffs).unwrap();
            let gap2 = (r[1] - r[0]).powi(2);
            let delta = discriminant_check(&coeffs, 0.0).unwrap().delta;
            prop_assert!((delta - gap2).abs() <= 1e-10 * gap2.max(1e-300) + 1e-14);
        }

        #[test]
        fn bounded_diam_excludes_nonzero_coincidence(
            roots in proptest::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0, Just(1.0)], 2..5),
        ) {
            let m = diam_ratio(&roots);
            if m.is_finite() {
                for (i, a) in roots.iter().enumerate() {
                    for b in &roots[i + 1..] {
                        prop_assert!(a != b || *a == 0.0);
                    }
                }
            }
        }
    }
}
