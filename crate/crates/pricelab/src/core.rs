//! Shared domain types: parameter bundles, path batches, payoffs and the
//! Cholesky factorization used for correlated Gaussians.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

/// Pivot tolerance: pivots in [-tol, tol] are treated as exact zeros so that
/// perfectly correlated inputs factor cleanly.
pub const PIVOT_TOL: f64 = 1e-12;

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return invalid("matrix must be square");
        }
        Ok(Matrix { n, data: rows.concat() })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// `out = self * x`.
    #[inline]
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `self * selfᵀ`.
    pub fn gram(&self) -> Matrix {
        let n = self.n;
        let mut g = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let s = (0..n).map(|k| self.get(i, k) * self.get(j, k)).sum();
                g.set(i, j, s);
            }
        }
        g
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Validates a correlation matrix: square, finite, symmetric, unit diagonal.
pub fn check_correlation(corr: &Matrix) -> Result<()> {
    let n = corr.n;
    for i in 0..n {
        if (corr.get(i, i) - 1.0).abs() > 1e-12 {
            return invalid(format!("correlation diagonal entry {i} is {} (expected 1)", corr.get(i, i)));
        }
        for j in 0..n {
            let (a, b) = (corr.get(i, j), corr.get(j, i));
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("correlation entry ({i},{j})")));
            }
            if (a - b).abs() > 1e-12 {
                return invalid(format!("correlation not symmetric at ({i},{j})"));
            }
        }
    }
    Ok(())
}

/// Lower-triangular `A` with `A Aᵀ = corr`. Rank-deficient (PSD) inputs are
/// accepted; a pivot below `-PIVOT_TOL` is reported by index.
pub fn cholesky(corr: &Matrix) -> Result<Matrix> {
    check_correlation(corr)?;
    let n = corr.n;
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = corr.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d < -PIVOT_TOL {
            return Err(Error::NotPsd { pivot: j, value: d });
        }
        let ljj = if d <= PIVOT_TOL { 0.0 } else { d.sqrt() };
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = corr.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if ljj == 0.0 {
                // Zero pivot: the remaining column must vanish for PSD input.
                if s.abs() > 1e-9 {
                    return Err(Error::NotPsd { pivot: j, value: d });
                }
                l.set(i, j, 0.0);
            } else {
                l.set(i, j, s / ljj);
            }
        }
    }
    Ok(l)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return invalid(format!("{name} must be finite and > 0, got {v}"));
    }
    Ok(())
}

/// Multi-asset geometric Brownian motion.
#[derive(Clone, Debug)]
pub struct GbmParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub corr: Matrix,
    pub s0: Vec<f64>,
    chol: Matrix,
}

impl GbmParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, corr: Matrix, s0: Vec<f64>) -> Result<Self> {
        let d = s0.len();
        if d == 0 || mu.len() != d || sigma.len() != d || corr.n != d {
            return invalid("GBM dimensions disagree");
        }
        for (i, &s) in sigma.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return invalid(format!("sigma[{i}] must be >= 0"));
            }
        }
        for (i, &s) in s0.iter().enumerate() {
            check_positive(&format!("s0[{i}]"), s)?;
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mu".into()));
        }
        let chol = cholesky(&corr)?;
        Ok(GbmParams { mu, sigma, corr, s0, chol })
    }

    pub fn single(mu: f64, sigma: f64, s0: f64) -> Result<Self> {
        GbmParams::new(vec![mu], vec![sigma], Matrix::identity(1), vec![s0])
    }

    pub fn d(&self) -> usize {
        self.s0.len()
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().cloned().fold(0.0, f64::max)
    }
}

/// Cox–Ingersoll–Ross variance process observed at spacing `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub v0: f64,
    pub delta: f64,
}

impl CirParams {
    pub fn new(kappa: f64, theta: f64, sigma: f64, v0: f64, delta: f64) -> Result<Self> {
        let p = CirParams { kappa, theta, sigma, v0, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        check_positive("theta", self.theta)?;
        check_positive("sigma", self.sigma)?;
        check_positive("v0", self.v0)?;
        check_positive("delta", self.delta)
    }

    /// Degrees of freedom of the transition, 4θκ/σ².
    pub fn eta(&self) -> f64 {
        4.0 * self.theta * self.kappa / (self.sigma * self.sigma)
    }

    /// ξ = η/2 − 1; positive iff the Feller condition holds strictly.
    pub fn feller_gap(&self) -> f64 {
        self.eta() / 2.0 - 1.0
    }

    pub fn feller(&self) -> bool {
        self.feller_gap() > 0.0
    }

    /// η ≥ 5, the regime assumed by the loading and bit-count results.
    pub fn loading_valid(&self) -> bool {
        self.eta() >= 5.0
    }

    /// Stationary law is Gamma(shape 2κθ/σ², scale σ²/2κ).
    pub fn stationary_shape_scale(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        (2.0 * self.kappa * self.theta / s2, s2 / (2.0 * self.kappa))
    }
}

/// Per-asset outcome of the four truncation-feasibility conditions, evaluated
/// at the half-step `dt = delta / 2` that the increment formula uses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Feasibility {
    pub asset: usize,
    pub half_step: f64,
    pub conditions: [bool; 4],
    pub values: [f64; 4],
}

impl Feasibility {
    pub fn feasible(&self) -> bool {
        self.conditions.iter().all(|&c| c)
    }

    /// 1-based index of the first failing condition.
    pub fn first_violation(&self) -> Option<u8> {
        self.conditions.iter().position(|c| !c).map(|i| i as u8 + 1)
    }
}

/// The four parameter conditions for a single asset at half-step `dt`.
/// `values` holds the left-hand sides minus the thresholds where that makes
/// sense (negative means satisfied for 2 and 4).
pub fn truncation_conditions(kappa: f64, sigma: f64, rho: f64, dt: f64) -> ([bool; 4], [f64; 4]) {
    let c1 = dt >= 1.0;
    let g = (-kappa * dt / 2.0).exp();
    let lhs2 = g + (-kappa * dt).exp();
    let c2 = lhs2 < 1.0;
    let mid = 2.0 * kappa * sigma * rho - rho * rho * sigma * sigma;
    let c3 = kappa * kappa > mid && mid >= 0.0;
    let e2 = (-2.0 * kappa * dt).exp();
    let lhs4 = (1.0 + e2) / 4.0 + rho * sigma / kappa * (1.0 - e2) / 4.0;
    let rhs4 = 1.0 / (2.0 * (1.0 + g));
    let c4 = lhs4 < rhs4;
    ([c1, c2, c3, c4], [dt, lhs2 - 1.0, mid, lhs4 - rhs4])
}

/// Multi-asset Heston with independent variance processes and asset–asset
/// correlation.
#[derive(Clone, Debug)]
pub struct HestonParams {
    pub cir: Vec<CirParams>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub corr: Matrix,
    pub s0: Vec<f64>,
    chol: Matrix,
}

impl HestonParams {
    pub fn new(cir: Vec<CirParams>, mu: Vec<f64>, rho: Vec<f64>, corr: Matrix, s0: Vec<f64>) -> Result<Self> {
        let d = s0.len();
        if d == 0 || cir.len() != d || mu.len() != d || rho.len() != d || corr.n != d {
            return invalid("Heston dimensions disagree");
        }
        for c in &cir {
            c.validate()?;
        }
        if cir.windows(2).any(|w| w[0].delta != w[1].delta) {
            return invalid("all assets must share the monitoring spacing");
        }
        for (i, &r) in rho.iter().enumerate() {
            if !(-1.0..=1.0).contains(&r) {
                return invalid(format!("rho[{i}] outside [-1, 1]"));
            }
        }
        for (i, &s) in s0.iter().enumerate() {
            check_positive(&format!("s0[{i}]"), s)?;
        }
        let chol = cholesky(&corr)?;
        Ok(HestonParams { cir, mu, rho, corr, s0, chol })
    }

    pub fn single(cir: CirParams, mu: f64, rho: f64, s0: f64) -> Result<Self> {
        HestonParams::new(vec![cir], vec![mu], vec![rho], Matrix::identity(1), vec![s0])
    }

    pub fn d(&self) -> usize {
        self.s0.len()
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn delta(&self) -> f64 {
        self.cir[0].delta
    }

    pub fn feasibility(&self) -> Vec<Feasibility> {
        self.cir
            .iter()
            .zip(&self.rho)
            .enumerate()
            .map(|(asset, (c, &rho))| {
                let dt = c.delta / 2.0;
                let (conditions, values) = truncation_conditions(c.kappa, c.sigma, rho, dt);
                Feasibility { asset, half_step: dt, conditions, values }
            })
            .collect()
    }
}

/// Primitive draws retained alongside the paths, flattened per path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Increments {
    pub gaussian: Vec<f64>,
    pub chi2: Vec<f64>,
    pub int_cir: Vec<f64>,
    pub levy: Vec<f64>,
}

/// `n_paths` realizations of a process at `t` monitoring points with `d`
/// components. `values[(p * t + k) * d + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub n_paths: usize,
    pub t: usize,
    pub d: usize,
    pub values: Vec<f64>,
    pub increments: Increments,
}

impl PathBatch {
    pub fn new(n_paths: usize, t: usize, d: usize) -> Self {
        PathBatch { n_paths, t, d, values: vec![0.0; n_paths * t * d], increments: Increments::default() }
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.t * self.d;
        &self.values[p * w..(p + 1) * w]
    }

    #[inline]
    pub fn at(&self, p: usize, k: usize, i: usize) -> f64 {
        self.values[(p * self.t + k) * self.d + i]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Concatenates batches produced by independent chunks.
    pub fn concat(parts: Vec<PathBatch>) -> PathBatch {
        let (t, d) = parts.first().map(|b| (b.t, b.d)).unwrap_or((0, 0));
        let mut out = PathBatch::new(0, t, d);
        for b in parts {
            out.n_paths += b.n_paths;
            out.values.extend(b.values);
            out.increments.gaussian.extend(b.increments.gaussian);
            out.increments.chi2.extend(b.increments.chi2);
            out.increments.int_cir.extend(b.increments.int_cir);
            out.increments.levy.extend(b.increments.levy);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PayoffKind {
    EuropeanCall,
    EuropeanPut,
    AsianCall,
    /// Piecewise-linear function of the terminal basket mean, given by knots
    /// and values; flat outside the knot range.
    CustomPiecewiseLinear { knots: Vec<f64>, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub kind: PayoffKind,
    pub strike: f64,
    pub slope_bound: f64,
}

impl Payoff {
    pub fn european_call(strike: f64) -> Self {
        Payoff { kind: PayoffKind::EuropeanCall, strike, slope_bound: 1.0 }
    }

    pub fn european_put(strike: f64) -> Self {
        Payoff { kind: PayoffKind::EuropeanPut, strike, slope_bound: 1.0 }
    }

    pub fn asian_call(strike: f64) -> Self {
        Payoff { kind: PayoffKind::AsianCall, strike, slope_bound: 1.0 }
    }

    pub fn piecewise(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return invalid("piecewise payoff needs >= 2 matching knots and values");
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("knots must be strictly increasing");
        }
        let slope = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
            .fold(0.0, f64::max);
        Ok(Payoff { kind: PayoffKind::CustomPiecewiseLinear { knots, values }, strike: 0.0, slope_bound: slope })
    }

    /// Cash value of a `t × d` path. Multi-asset paths use the equally
    /// weighted basket; the Asian payoff averages over time and assets.
    pub fn evaluate(&self, path: &[f64], t: usize, d: usize) -> Result<f64> {
        if path.len() != t * d || t == 0 {
            return invalid("path shape mismatch");
        }
        if path.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN in path".into()));
        }
        let terminal = || path[(t - 1) * d..].iter().sum::<f64>() / d as f64;
        Ok(match &self.kind {
            PayoffKind::EuropeanCall => (terminal() - self.strike).max(0.0),
            PayoffKind::EuropeanPut => (self.strike - terminal()).max(0.0),
            PayoffKind::AsianCall => (path.iter().sum::<f64>() / (t * d) as f64 - self.strike).max(0.0),
            PayoffKind::CustomPiecewiseLinear { knots, values } => interp_flat(knots, values, terminal()),
        })
    }
}

fn interp_flat(knots: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= knots[0] {
        return values[0];
    }
    let last = knots.len() - 1;
    if x >= knots[last] {
        return values[last];
    }
    let i = knots.partition_point(|&k| k <= x) - 1;
    let w = (x - knots[i]) / (knots[i + 1] - knots[i]);
    values[i] + w * (values[i + 1] - values[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&Matrix::identity(2)).unwrap();
        assert_eq!(l, Matrix::identity(2));
    }

    #[test]
    fn cholesky_rank_one() {
        let c = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let l = cholesky(&c).unwrap();
        assert_eq!(l.to_rows(), vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn cholesky_half_correlation() {
        let c = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let l = cholesky(&c).unwrap();
        assert_abs_diff_eq!(l.get(1, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(l.get(1, 1), 0.75f64.sqrt(), epsilon = 1e-15);
        assert!(l.gram().max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn cholesky_names_failing_pivot() {
        let c = Matrix::from_rows(&[
            vec![1.0, 0.9, 0.9],
            vec![0.9, 1.0, -0.9],
            vec![0.9, -0.9, 1.0],
        ])
        .unwrap();
        match cholesky(&c) {
            Err(Error::NotPsd { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn payoff_examples() {
        let call = Payoff::european_call(1.0);
        assert_eq!(call.evaluate(&[0.5, 1.0], 2, 1).unwrap(), 0.0);
        assert_eq!(call.evaluate(&[0.5, 1.5], 2, 1).unwrap(), 0.5);
        let asian = Payoff::asian_call(0.0);
        assert_eq!(asian.evaluate(&[2.0; 6], 3, 2).unwrap(), 2.0);
        assert!(call.evaluate(&[f64::NAN, 1.0], 2, 1).is_err());
    }

    #[test]
    fn piecewise_payoff() {
        let p = Payoff::piecewise(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(p.slope_bound, 2.0);
        assert_eq!(p.evaluate(&[0.5], 1, 1).unwrap(), 1.0);
        assert_eq!(p.evaluate(&[5.0], 1, 1).unwrap(), 1.0);
        assert_eq!(p.evaluate(&[-5.0], 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn cir_derived_quantities() {
        let c = CirParams::new(2.0, 0.04, 0.2, 0.04, 1.0).unwrap();
        assert_abs_diff_eq!(c.eta(), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.feller_gap(), 3.0, epsilon = 1e-12);
        assert!(c.loading_valid());
        assert!(CirParams::new(-1.0, 0.04, 0.2, 0.04, 1.0).is_err());
    }

    fn random_corr(d: usize, seed: &[f64]) -> Matrix {
        // Gram matrix of random vectors, normalized to unit diagonal.
        let k = d + 1;
        let v: Vec<f64> = (0..d * k).map(|i| seed[i % seed.len()] * ((i * 7919 % 13) as f64 - 6.0)).collect();
        let mut g = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                g.set(i, j, (0..k).map(|m| v[i * k + m] * v[j * k + m]).sum());
            }
        }
        let diag: Vec<f64> = (0..d).map(|i| g.get(i, i).sqrt()).collect();
        for i in 0..d {
            for j in 0..d {
                let x = if i == j { 1.0 } else { g.get(i, j) / (diag[i] * diag[j]) };
                g.set(i, j, x);
            }
        }
        // Symmetrize exactly.
        for i in 0..d {
            for j in 0..i {
                let x = g.get(i, j);
                g.set(j, i, x);
            }
        }
        g
    }

    proptest! {
        #[test]
        fn cholesky_round_trip(d in 1usize..=16, seed in proptest::collection::vec(0.1f64..2.0, 1..40)) {
            let c = random_corr(d, &seed);
            if let Ok(l) = cholesky(&c) {
                prop_assert!(l.gram().max_abs_diff(&c) < 1e-12);
            }
        }

        #[test]
        fn payoffs_are_lipschitz(
            x in proptest::collection::vec(0.0f64..200.0, 12),
            y in proptest::collection::vec(0.0f64..200.0, 12),
            k in 0.0f64..150.0,
        ) {
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            for p in [Payoff::european_call(k), Payoff::european_put(k), Payoff::asian_call(k),
                      Payoff::piecewise(vec![0.0, 50.0, 120.0], vec![0.0, 25.0, 5.0]).unwrap()] {
                let fx = p.evaluate(&x, 4, 3).unwrap();
                let fy = p.evaluate(&y, 4, 3).unwrap();
                prop_assert!((fx - fy).abs() <= p.slope_bound * dist + 1e-9);
            }
        }
    }
}
