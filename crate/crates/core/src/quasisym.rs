//! Layered quasi-symmetrizer `Q_ε = Σ_r ε^{2r} Q_r` for the companion system
//! matrix, a numerical certificate of its defining inequalities, and the
//! scalar tools used to control `Q_ε'` (zero partition, logarithmic
//! derivative bound, Glaeser-type quotient).
//!
//! Layer `r` is built from the subsets `S ⊂ {1..m}` with `|S| = r`:
//!
//! ```text
//! Q_r = Σ_{|S|=r} Σ_{j∉S} w_{S,j} w_{S,j}ᵀ,    w_{S,j} ↔ Π_{i∉S, i≠j} (λ − λ_i)
//! ```
//!
//! where a polynomial is stored as its ascending coefficient vector padded
//! to length `m`. `Q_0` is the exact (Bezoutian) symmetrizer; for `r ≥ 1`
//! the commutator of the `S` block is `p_S p_S'ᵀ − p_S' p_Sᵀ` with
//! `p_S = Π_{i∉S}(λ − λ_i)`, and `p_S` is itself a row of layer `r − 1`.
//! That pairing is what makes the commutator bound linear in `ε`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json;
use crate::symbol::diam_ratio;

#[derive(Debug, Error, PartialEq)]
pub enum QuasiSymError {
    #[error("dimension mismatch: symmetrizer of order {order}, matrix is {rows}x{cols}")]
    DimensionMismatch { order: usize, rows: usize, cols: usize },
    #[error("epsilon values must lie in (0, 1] (got {0})")]
    Epsilon(f64),
    #[error("at least two roots are required")]
    Order,
}

/// One generator row `ε^r w_{S,j}` of `Q_ε = GᵀG`.
#[derive(Debug, Clone)]
struct Generator {
    layer: usize,
    coeffs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QuasiSymmetrizer {
    pub order: usize,
    pub roots: Vec<f64>,
    /// `Q_0, …, Q_{m-1}`.
    pub layers: Vec<DMatrix<f64>>,
    generators: Vec<Generator>,
}

/// Ascending coefficients of `Π (λ − r)` over `roots`, padded to `len`.
fn poly_from_roots(roots: impl Iterator<Item = f64>, len: usize) -> Vec<f64> {
    let mut p = vec![0.0; len.max(1)];
    p[0] = 1.0;
    let mut deg = 0;
    for r in roots {
        deg += 1;
        assert!(deg < len, "polynomial degree exceeds slot count");
        for d in (1..=deg).rev() {
            p[d] = p[d - 1] - r * p[d];
        }
        p[0] *= -r;
    }
    p
}

pub fn build_quasi_symmetrizer(roots: &[f64]) -> Result<QuasiSymmetrizer, QuasiSymError> {
    let m = roots.len();
    if m < 2 {
        return Err(QuasiSymError::Order);
    }
    let mut layers = vec![DMatrix::zeros(m, m); m];
    let mut generators = Vec::new();
    for mask in 0u32..(1 << m) {
        let r = mask.count_ones() as usize;
        if r >= m {
            continue;
        }
        for j in (0..m).filter(|j| mask & (1 << j) == 0) {
            let w = poly_from_roots((0..m).filter(|&i| i != j && mask & (1 << i) == 0).map(|i| roots[i]), m);
            let wv = DVector::from_column_slice(&w);
            layers[r] += &wv * wv.transpose();
            generators.push(Generator { layer: r, coeffs: w });
        }
    }
    Ok(QuasiSymmetrizer { order: m, roots: roots.to_vec(), layers, generators })
}

impl QuasiSymmetrizer {
    pub fn assemble(&self, eps: f64) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.order, self.order);
        let mut w = 1.0;
        for layer in &self.layers {
            q += layer * w;
            w *= eps * eps;
        }
        q
    }

    /// Hermitian quadratic form `(Q_ε V, V)`.
    pub fn form(&self, eps: f64, v: &[Complex64]) -> f64 {
        quadratic_form(&self.assemble(eps), v)
    }

    /// Generator matrix `G_ε` with `Q_ε = G_εᵀ G_ε`.
    fn generator_matrix(&self, eps: f64) -> DMatrix<f64> {
        let m = self.order;
        DMatrix::from_fn(self.generators.len(), m, |row, col| {
            let g = &self.generators[row];
            eps.powi(g.layer as i32) * g.coeffs[col]
        })
    }
}

/// `V* Q V` for real symmetric `Q`.
pub fn quadratic_form(q: &DMatrix<f64>, v: &[Complex64]) -> f64 {
    let m = v.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += q[(i, j)] * (v[i].conj() * v[j]).re;
        }
    }
    acc
}

/// Measured constants at one `ε`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonRecord {
    pub eps: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `sup_V |((Q_εA − AᵀQ_ε)V,V)| / (ε (Q_εV,V))`.
    pub c_comm: f64,
    /// `inf_V (Q_εV,V) / Σ_j q_{ε,jj}|v_j|²`.
    pub c_nd: f64,
    pub sampled_c_comm: f64,
    pub sampled_c_nd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetrizerCertificate {
    pub roots: Vec<f64>,
    pub eps_set: Vec<f64>,
    #[serde(with = "json::ext_real")]
    pub c_upper: f64,
    #[serde(with = "json::ext_real")]
    pub c_lower: f64,
    #[serde(with = "json::ext_real")]
    pub c_comm: f64,
    #[serde(with = "json::ext_real")]
    pub c_nd: f64,
    #[serde(with = "json::ext_real")]
    pub diam_ratio: f64,
    pub samples: usize,
    pub seed: u64,
    pub qs1_pass: bool,
    pub qs2_pass: bool,
    pub nd_pass: bool,
    pub pass: bool,
    pub per_eps: Vec<EpsilonRecord>,
}

impl SymmetrizerCertificate {
    /// Single constant `C` valid for both sides of the two-sided bound.
    pub fn qs1_constant(&self) -> f64 {
        self.c_upper.max(self.c_lower)
    }

    /// Commutator constant at the largest tested `ε`.
    pub fn c_comm_at_largest_eps(&self) -> f64 {
        self.per_eps.iter().max_by(|a, b| a.eps.total_cmp(&b.eps)).map_or(f64::NAN, |r| r.c_comm)
    }
}

fn random_unit(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..m)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        })
        .collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= n);
    v
}

/// Measure the two-sided bound, the `ε`-linear commutator bound and the
/// nearly-diagonal constant of `q` against the system matrix `a`.
///
/// Exact values come from factorizations of `Q_ε = GᵀG` (`G = UR`): the
/// two-sided bound from the singular values of `G`, the commutator ratio as
/// `‖Uᵀ Y − Yᵀ U‖₂` with `Y = (G A) R⁻¹`, and the nearly-diagonal constant
/// from the smallest singular value of `G D^{-1/2}`. Random complex unit
/// vectors (seeded) give an independent sampled estimate of the last two.
pub fn verify_quasi_symmetrizer(
    q: &QuasiSymmetrizer,
    a: &DMatrix<f64>,
    eps_set: &[f64],
    samples: usize,
    seed: u64,
) -> Result<SymmetrizerCertificate, QuasiSymError> {
    let m = q.order;
    if a.nrows() != m || a.ncols() != m {
        return Err(QuasiSymError::DimensionMismatch { order: m, rows: a.nrows(), cols: a.ncols() });
    }
    if let Some(&bad) = eps_set.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(QuasiSymError::Epsilon(bad));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_eps = Vec::with_capacity(eps_set.len());
    for &eps in eps_set {
        let g = q.generator_matrix(eps);
        let sv = g.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();

        let qr = g.clone().qr();
        let u = qr.q();
        let r = qr.r();
        let ga = &g * a;
        let y = r.transpose().solve_lower_triangular(&ga.transpose()).map(|yt| yt.transpose());
        let c_comm = match y {
            Some(y) => {
                let k = u.transpose() * &y - y.transpose() * &u;
                k.svd(false, false).singular_values.max() / eps
            }
            None => f64::INFINITY,
        };

        let qe = q.assemble(eps);
        let diag: Vec<f64> = (0..m).map(|i| qe[(i, i)]).collect();
        let c_nd = if diag.iter().all(|&d| d > 0.0) {
            let mut gd = g.clone();
            for (col, d) in diag.iter().enumerate() {
                gd.column_mut(col).scale_mut(1.0 / d.sqrt());
            }
            gd.svd(false, false).singular_values.min().powi(2)
        } else {
            0.0
        };

        let comm = &qe * a - a.transpose() * &qe;
        let mut sampled_c_comm = 0.0f64;
        let mut sampled_c_nd = f64::INFINITY;
        for _ in 0..samples {
            let v = random_unit(&mut rng, m);
            let e = quadratic_form(&qe, &v);
            let mut cross = Complex64::new(0.0, 0.0);
            for i in 0..m {
                for j in 0..m {
                    cross += v[i].conj() * comm[(i, j)] * v[j];
                }
            }
            sampled_c_comm = sampled_c_comm.max(cross.norm() / (eps * e));
            let d: f64 = (0..m).map(|j| diag[j] * v[j].norm_sqr()).sum();
            sampled_c_nd = sampled_c_nd.min(e / d);
        }

        per_eps.push(EpsilonRecord {
            eps,
            lambda_min: smin * smin,
            lambda_max: smax * smax,
            c_comm,
            c_nd,
            sampled_c_comm,
            sampled_c_nd,
        });
    }

    let c_upper = per_eps.iter().map(|r| r.lambda_max).fold(0.0, f64::max);
    let c_lower =
        per_eps
            .iter()
            .map(|r| {
                if r.lambda_min > 0.0 {
                    r.eps.powi(2 * (m as i32 - 1)) / r.lambda_min
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
    let c_comm = per_eps.iter().map(|r| r.c_comm).fold(0.0, f64::max);
    let c_nd = per_eps.iter().map(|r| r.c_nd).fold(f64::INFINITY, f64::min);
    let diam = diam_ratio(&q.roots);
    let qs1_pass = c_upper.is_finite() && c_lower.is_finite();
    let qs2_pass = c_comm.is_finite();
    let nd_pass = c_nd.is_finite() && c_nd > 0.0 && diam.is_finite();
    Ok(SymmetrizerCertificate {
        roots: q.roots.clone(),
        eps_set: eps_set.to_vec(),
        c_upper,
        c_lower,
        c_comm,
        c_nd,
        diam_ratio: diam,
        samples,
        seed,
        qs1_pass,
        qs2_pass,
        nd_pass,
        pass: qs1_pass && qs2_pass && nd_pass,
        per_eps,
    })
}

/// Outcome of [`partition_by_zeros`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroPartition {
    /// `0 = t_0 < … < t_N = T`.
    pub breakpoints: Vec<f64>,
    /// Per entry: true when the entry vanishes identically on the grid.
    pub identically_zero: Vec<bool>,
}

impl ZeroPartition {
    pub fn interior(&self) -> &[f64] {
        let n = self.breakpoints.len();
        if n <= 2 {
            &[]
        } else {
            &self.breakpoints[1..n - 1]
        }
    }
}

fn bisect_zero<F: Fn(f64) -> f64 + ?Sized>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Union of the isolated zeros of the non-trivial entries, as a partition of
/// `[grid[0], grid[last]]`.
///
/// An entry is identically zero when its sampled maximum is at most
/// `1e-10` times the largest sampled magnitude over all entries. Zeros are
/// sign changes (refined by bisection) and near-zero local minima of `|q|`
/// below `1e-10 · max|q|`.
pub fn partition_by_zeros(entries: &[&dyn Fn(f64) -> f64], grid: &[f64]) -> ZeroPartition {
    let (t0, t1) = (grid[0], grid[grid.len() - 1]);
    let samples: Vec<Vec<f64>> = entries.iter().map(|f| grid.iter().map(|&t| f(t)).collect()).collect();
    let maxes: Vec<f64> = samples.iter().map(|s| s.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
    let global = maxes.iter().copied().fold(0.0f64, f64::max);
    let identically_zero: Vec<bool> = maxes.iter().map(|&m| m <= 1e-10 * global || m == 0.0).collect();

    let spacing = (t1 - t0) / (grid.len().max(2) - 1) as f64;
    let mut points = Vec::new();
    for ((f, s), (&mx, &zero)) in entries.iter().zip(&samples).zip(maxes.iter().zip(&identically_zero)) {
        if zero {
            continue;
        }
        let tol = 1e-10 * mx;
        for i in 0..s.len() {
            let near = s[i].abs() <= tol;
            let local_min = (i == 0 || s[i].abs() <= s[i - 1].abs())
                && (i + 1 == s.len() || s[i].abs() <= s[i + 1].abs());
            if near && local_min {
                points.push(grid[i]);
            }
            if i + 1 < s.len() && s[i].abs() > tol && s[i + 1].abs() > tol && s[i] * s[i + 1] < 0.0 {
                points.push(bisect_zero(*f, grid[i], grid[i + 1]));
            }
        }
    }
    points.sort_by(f64::total_cmp);
    let mut breakpoints = vec![t0];
    for p in points {
        if p - t0 <= 0.5 * spacing || t1 - p <= 0.5 * spacing {
            continue;
        }
        if p - breakpoints[breakpoints.len() - 1] > 0.5 * spacing {
            breakpoints.push(p);
        }
    }
    breakpoints.push(t1);
    ZeroPartition { breakpoints, identically_zero }
}

/// Second-order finite-difference derivative of uniformly spaced samples.
pub fn gradient(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    if n < 3 {
        return vec![if n == 2 { (values[1] - values[0]) / h } else { 0.0 }; n];
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// `sup_{t<T} |q'(t)| (T − t) / |q(t)|` on a uniform grid over `[0, T)`;
/// `+∞` if `q` vanishes on the sampled interval.
pub fn entry_derivative_bound(entry: &dyn Fn(f64) -> f64, horizon: f64, points: usize) -> f64 {
    let n = points.max(3);
    let h = horizon / n as f64;
    let grid: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| entry(t)).collect();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return f64::INFINITY;
    }
    if vals.iter().any(|v| v.abs() <= 1e-10 * scale) {
        return f64::INFINITY;
    }
    let d = gradient(&vals, h);
    grid.iter()
        .zip(vals.iter().zip(&d))
        .map(|(&t, (&v, &dv))| dv.abs() * (horizon - t) / v.abs())
        .fold(0.0, f64::max)
}

/// Uniformly sampled function on `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct SampledFn {
    pub t0: f64,
    pub t1: f64,
    pub values: Vec<f64>,
}

impl SampledFn {
    pub fn from_fn(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> Self {
        let h = (t1 - t0) / (n - 1) as f64;
        Self { t0, t1, values: (0..n).map(|i| f(t0 + i as f64 * h)).collect() }
    }

    pub fn spacing(&self) -> f64 {
        (self.t1 - self.t0) / (self.values.len() - 1) as f64
    }

    /// `max_{i≤k} sup |f^{(i)}|` from repeated finite differences.
    pub fn ck_norm(&self, k: u32) -> f64 {
        let h = self.spacing();
        let mut cur = self.values.clone();
        let mut norm = cur.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for _ in 0..k {
            cur = gradient(&cur, h);
            norm = norm.max(cur.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        norm
    }
}

/// `sup_t |f'| / (|f|^{1−1/k} ‖f‖_{C^k}^θ)`, skipping points where both
/// `|f|` and `|f'|` are negligible. `+∞` when `f` vanishes with `f' ≠ 0`.
pub fn glaeser_quotient(f: &SampledFn, k: u32, theta: f64) -> f64 {
    assert!(k >= 1, "glaeser_quotient needs k >= 1");
    let d = gradient(&f.values, f.spacing());
    let fmax = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if dmax == 0.0 {
        return 0.0;
    }
    let norm = f.ck_norm(k).powf(theta);
    let tol_f = 1e-12 * fmax.max(1e-300);
    let tol_d = 1e-9 * dmax;
    let expo = 1.0 - 1.0 / k as f64;
    let mut sup = 0.0f64;
    for (&v, &dv) in f.values.iter().zip(&d) {
        if v.abs() <= tol_f && dv.abs() <= tol_d {
            continue;
        }
        let denom = if expo == 0.0 { 1.0 } else { v.abs().powf(expo) } * norm;
        let qv = if denom == 0.0 { f64::INFINITY } else { dv.abs() / denom };
        sup = sup.max(qv);
    }
    sup
}
