//! The scalar equation
//! `∂ₜᵐu + a₁(t)∂ₜᵐ⁻¹∂ₓu + … + a_m(t)∂ₓᵐu = u^ν` on `[0,T] × 𝕋`.

use thiserror::Error;

use crate::exprdsl::{self, EvalError, Expression, ParseError};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("order m must be at least 2 (got {0})")]
    Order(usize),
    #[error("expected {expected} {what} expressions, got {got}")]
    Arity { what: &'static str, expected: usize, got: usize },
    #[error("{what}[{index}]: {source}")]
    Parse { what: &'static str, index: usize, source: ParseError },
    #[error("horizon T must be positive and finite (got {0})")]
    Horizon(f64),
}

#[derive(Debug, Error)]
#[error("coefficient a_{index}({t}): {source}")]
pub struct CoefficientEvalError {
    pub index: usize,
    pub t: f64,
    pub source: EvalError,
}

/// Coefficients, horizon, nonlinearity and initial data of one equation.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    pub order: usize,
    pub horizon: f64,
    /// `a_1(t), …, a_m(t)`.
    pub coefficients: Vec<Expression>,
    /// Monomial degree of the right-hand side; `0` disables it.
    pub nu: u32,
    /// `∂ₜʰu(0,x)` for `h = 0, …, m-1`.
    pub initial: Vec<Expression>,
}

impl CoefficientSpec {
    pub fn from_sources<S: AsRef<str>>(
        order: usize,
        horizon: f64,
        coefficients: &[S],
        nu: u32,
        initial: &[S],
    ) -> Result<Self, SpecError> {
        if order < 2 {
            return Err(SpecError::Order(order));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SpecError::Horizon(horizon));
        }
        let parse_all = |what: &'static str, srcs: &[S], var: &str| {
            if srcs.len() != order {
                return Err(SpecError::Arity { what, expected: order, got: srcs.len() });
            }
            srcs.iter()
                .enumerate()
                .map(|(index, s)| {
                    exprdsl::parse(s.as_ref(), &[var]).map_err(|source| SpecError::Parse {
                        what,
                        index,
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(Self {
            order,
            horizon,
            coefficients: parse_all("coefficients", coefficients, "t")?,
            nu,
            initial: parse_all("initial", initial, "x")?,
        })
    }

    /// `[a_1(t), …, a_m(t)]`.
    pub fn coeffs_at(&self, t: f64) -> Result<Vec<f64>, CoefficientEvalError> {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.eval_at("t", t).map_err(|source| CoefficientEvalError { index: i + 1, t, source })
            })
            .collect()
    }
}

/// `n + 1` equispaced points on `[0, T]`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_evaluates() {
        let spec = CoefficientSpec::from_sources(2, 1.0, &["0", "-t^2"], 2, &["cos(x)", "0"]).unwrap();
        assert_eq!(spec.coeffs_at(0.5).unwrap(), vec![0.0, -0.25]);
    }

    #[test]
    fn rejects_wrong_arity_and_variables() {
        assert!(matches!(
            CoefficientSpec::from_sources(2, 1.0, &["0"], 0, &["0", "0"]),
            Err(SpecError::Arity { .. })
        ));
        assert!(matches!(
            CoefficientSpec::from_sources(2, 1.0, &["x", "0"], 0, &["0", "0"]),
            Err(SpecError::Parse { .. })
        ));
        assert!(matches!(CoefficientSpec::from_sources(1, 1.0, &["0"], 0, &["0"]), Err(SpecError::Order(1))));
    }
}
