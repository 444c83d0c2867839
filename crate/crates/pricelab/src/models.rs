//! Exact path samplers: GBM in closed form, CIR through its non-central χ²
//! transition, and Heston with asset–asset correlation via the conditional
//! law of the integrated variance.

use crate::charinv::{log_bessel_i, CharFunction, InversionTable, TableSettings};
use crate::core::{CirParams, GbmParams, HestonParams, PathBatch};
use crate::dists::{normal_cdf, CentralChi2};
use crate::error::{invalid, Result};
use crate::rng::{par_chunks, RngStream};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use std::f64::consts::LN_2;

/// Anything that produces batches of monitored paths from a stream.
pub trait PathSource: Sync {
    /// (monitoring points, components)
    fn shape(&self) -> (usize, usize);
    fn simulate(&self, n: usize, stream: &mut RngStream) -> Result<PathBatch>;
    /// Primitive random draws consumed per path.
    fn draws_per_path(&self) -> usize;
}

/// Simulates `n` paths in fixed chunks; chunk `c` uses `base.child(c)`.
pub fn simulate_batch(src: &dyn PathSource, n: usize, base: &RngStream) -> Result<PathBatch> {
    let parts = par_chunks(n, base, |r, s| src.simulate(r.len(), s));
    let parts: Result<Vec<_>> = parts.into_iter().collect();
    Ok(PathBatch::concat(parts?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// log-drift μ, so E[S(t)] = S₀ e^{(μ + σ²/2)t}
    Raw,
    /// log-drift μ − σ²/2, so E[S(t)] = S₀ e^{μt}
    #[default]
    Martingale,
}

#[derive(Clone, Debug)]
pub struct GbmModel {
    pub params: GbmParams,
    pub t: usize,
    pub delta: f64,
    pub mode: DriftMode,
}

impl GbmModel {
    pub fn new(params: GbmParams, t: usize, delta: f64, mode: DriftMode) -> Result<Self> {
        if t < 1 {
            return invalid("need at least one monitoring point");
        }
        if !(delta > 0.0) {
            return invalid("delta must be > 0");
        }
        Ok(GbmModel { params, t, delta, mode })
    }
}

impl PathSource for GbmModel {
    fn shape(&self) -> (usize, usize) {
        (self.t, self.params.d())
    }

    fn draws_per_path(&self) -> usize {
        self.t * self.params.d()
    }

    fn simulate(&self, n: usize, stream: &mut RngStream) -> Result<PathBatch> {
        let p = &self.params;
        let d = p.d();
        let sq = self.delta.sqrt();
        let drift: Vec<f64> = (0..d)
            .map(|i| {
                let m = match self.mode {
                    DriftMode::Raw => p.mu[i],
                    DriftMode::Martingale => p.mu[i] - 0.5 * p.sigma[i] * p.sigma[i],
                };
                m * self.delta
            })
            .collect();
        let mut out = PathBatch::new(n, self.t, d);
        let mut z = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut s = vec![0.0; d];
        for path in 0..n {
            s.copy_from_slice(&p.s0);
            for k in 0..self.t {
                stream.fill_normal(&mut z);
                p.chol().mul_vec(&z, &mut y);
                for i in 0..d {
                    s[i] *= (drift[i] + p.sigma[i] * sq * y[i]).exp();
                    out.values[(path * self.t + k) * d + i] = s[i];
                }
            }
        }
        Ok(out)
    }
}

/// `n` GBM paths at `t` monitoring points spaced `delta`.
pub fn gbm_paths(params: &GbmParams, t: usize, delta: f64, mode: DriftMode, stream: &RngStream, n: usize) -> Result<PathBatch> {
    let m = GbmModel::new(params.clone(), t, delta, mode)?;
    simulate_batch(&m, n, stream)
}

/// Black–Scholes call price with continuous rate `r`.
pub fn bs_call(s0: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    if sigma * t.sqrt() == 0.0 {
        return (s0 - k * (-r * t).exp()).max(0.0);
    }
    let sd = sigma * t.sqrt();
    let d1 = ((s0 / k).ln() + (r + 0.5 * sigma * sigma) * t) / sd;
    s0 * normal_cdf(d1) - k * (-r * t).exp() * normal_cdf(d1 - sd)
}

pub fn bs_put(s0: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    bs_call(s0, k, r, sigma, t) - s0 + k * (-r * t).exp()
}

/// Constants of the CIR transition over a step `dt`:
/// V' = c(Y + (√(βV) + Z)²), Y ~ χ²_{η−1}, Z ~ N(0,1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CirFfConstants {
    pub beta: f64,
    pub eta: f64,
    pub c: f64,
    pub gamma: f64,
    pub dt: f64,
}

impl CirFfConstants {
    pub fn new(p: &CirParams, dt: f64) -> Self {
        let e = (-p.kappa * dt).exp();
        let s2 = p.sigma * p.sigma;
        let om = -(-p.kappa * dt).exp_m1();
        CirFfConstants {
            beta: 4.0 * p.kappa * e / (s2 * om),
            eta: p.eta(),
            c: s2 * om / (4.0 * p.kappa),
            gamma: (-p.kappa * dt / 2.0).exp(),
            dt,
        }
    }

    /// γ + γ² < 1, needed by the pathwise bound.
    pub fn path_bound_valid(&self) -> bool {
        self.gamma + self.gamma * self.gamma < 1.0
    }
}

/// One exact CIR transition. Returns (v_next, y, z).
#[inline]
pub fn cir_transition(k: &CirFfConstants, chi: &CentralChi2, v: f64, stream: &mut RngStream) -> (f64, f64, f64) {
    let y = chi.sample(stream);
    let z = stream.normal();
    let s = (k.beta * v).sqrt() + z;
    (k.c * (y + s * s), y, z)
}

pub fn cir_step(k: &CirFfConstants, v_prev: f64, stream: &mut RngStream) -> Result<f64> {
    if k.eta < 1.0 {
        return invalid(format!("eta = {} < 1: chi-square part undefined", k.eta));
    }
    if !(v_prev >= 0.0) {
        return invalid("v_prev must be >= 0");
    }
    let chi = CentralChi2::new(k.eta - 1.0);
    Ok(cir_transition(k, &chi, v_prev, stream).0)
}

/// CIR observed at spacing `delta`; retains the χ² and Gaussian increments.
#[derive(Clone, Debug)]
pub struct CirModel {
    pub params: CirParams,
    pub t: usize,
    pub consts: CirFfConstants,
}

impl CirModel {
    pub fn new(params: CirParams, t: usize) -> Result<Self> {
        params.validate()?;
        if params.eta() < 1.0 {
            return invalid("eta < 1 is not supported by the chi-square recursion");
        }
        Ok(CirModel { params, t, consts: CirFfConstants::new(&params, params.delta) })
    }
}

impl PathSource for CirModel {
    fn shape(&self) -> (usize, usize) {
        (self.t, 1)
    }

    fn draws_per_path(&self) -> usize {
        2 * self.t
    }

    fn simulate(&self, n: usize, stream: &mut RngStream) -> Result<PathBatch> {
        let chi = CentralChi2::new(self.consts.eta - 1.0);
        let mut out = PathBatch::new(n, self.t, 1);
        out.increments.chi2.reserve(n * self.t);
        out.increments.gaussian.reserve(n * self.t);
        for p in 0..n {
            let mut v = self.params.v0;
            for k in 0..self.t {
                let (nv, y, z) = cir_transition(&self.consts, &chi, v, stream);
                v = nv;
                out.values[p * self.t + k] = v;
                out.increments.chi2.push(y);
                out.increments.gaussian.push(z);
            }
        }
        Ok(out)
    }
}

/// Running upper bound v₀ + c(1+γ)Σ_{j<k}(y_j + z_j²) for each monitoring point.
pub fn cir_path_bound(k: &CirFfConstants, v0: f64, y: &[f64], z: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    y.iter()
        .zip(z)
        .map(|(y, z)| {
            acc += y + z * z;
            v0 + k.c * (1.0 + k.gamma) * acc
        })
        .collect()
}

/// Number of monitoring points in `batch` where a CIR path exceeds its bound.
pub fn cir_path_bound_violations(model: &CirModel, batch: &PathBatch) -> usize {
    let t = batch.t;
    (0..batch.n_paths)
        .filter(|&p| {
            let r = p * t..(p + 1) * t;
            let b = cir_path_bound(&model.consts, model.params.v0, &batch.increments.chi2[r.clone()], &batch.increments.gaussian[r]);
            batch.path(p).iter().zip(&b).any(|(v, b)| v > b)
        })
        .count()
}

/// Conditional characteristic function of I = ∫V over one monitoring window
/// of length `2h`, given both endpoints.
#[derive(Clone, Debug)]
pub struct BkCharFn {
    pub kappa: f64,
    pub sigma: f64,
    pub h: f64,
    pub v_start: f64,
    pub v_end: f64,
    pub xi: f64,
    c1: f64,
    log_2c2: Option<f64>,
    log_ks: f64,
    kcoth: f64,
    log_i0: Complex64,
}

/// log sinh w and w coth w for Re w > 0.
fn sinh_parts(w: Complex64) -> (Complex64, Complex64) {
    let e = (-2.0 * w).exp();
    let one = Complex64::new(1.0, 0.0);
    (w + (one - e).ln() - LN_2, w * (one + e) / (one - e))
}

impl BkCharFn {
    pub fn new(cir: &CirParams, v_start: f64, v_end: f64) -> Self {
        let (kappa, sigma, h) = (cir.kappa, cir.sigma, cir.delta / 2.0);
        let s2 = sigma * sigma;
        let xi = cir.feller_gap();
        let (ls, kc) = sinh_parts(Complex64::new(kappa * h, 0.0));
        let log_ks = kappa.ln() - ls.re;
        let prod = v_start * v_end;
        let log_2c2 = (prod > 0.0).then(|| (2.0 * prod.sqrt() / s2).ln());
        let log_i0 = log_2c2.map_or(Complex64::new(0.0, 0.0), |l| log_bessel_i(xi, Complex64::new(l + log_ks, 0.0)));
        BkCharFn {
            kappa,
            sigma,
            h,
            v_start,
            v_end,
            xi,
            c1: (v_start + v_end) / s2,
            log_2c2,
            log_ks,
            kcoth: kc.re / h,
            log_i0,
        }
    }

    /// Conditional mean and variance of I from the cumulant probe.
    pub fn moments(&self) -> (f64, f64) {
        crate::charinv::moments_auto(self, self.h * (self.v_start + self.v_end).max(1e-12))
    }
}

impl CharFunction for BkCharFn {
    fn eval(&self, a: f64) -> Complex64 {
        self.log_eval(a).exp()
    }

    fn log_eval(&self, a: f64) -> Complex64 {
        if a == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let s2 = self.sigma * self.sigma;
        let g = Complex64::new(self.kappa * self.kappa, -2.0 * s2 * a).sqrt();
        let (ls, gc) = sinh_parts(g * self.h);
        let log_gs = g.ln() - ls;
        let mut out = log_gs - self.log_ks + self.c1 * (self.kcoth - gc / self.h);
        out += match self.log_2c2 {
            Some(l) => log_bessel_i(self.xi, l + log_gs) - self.log_i0,
            // I_ξ(z) ~ (z/2)^ξ / Γ(ξ+1) as z → 0
            None => self.xi * (log_gs - self.log_ks),
        };
        out
    }
}

/// Settings of the integrated-variance sampler.
#[derive(Clone, Copy, Debug)]
pub struct IcirSettings {
    pub table: TableSettings,
    /// Log-spaced endpoint nodes per axis.
    pub nodes: usize,
    /// Stationary tail mass left outside the endpoint grid, per side.
    pub tail_q: f64,
}

impl Default for IcirSettings {
    fn default() -> Self {
        IcirSettings { table: TableSettings { tol: 1e-10, ..Default::default() }, nodes: 32, tail_q: 1e-7 }
    }
}

/// Draws I = ∫V over a monitoring window given both endpoints, by inverse
/// cdf. Tables sit on a log-spaced endpoint grid; quantiles of the four
/// surrounding nodes are blended bilinearly in v. Endpoints below the grid
/// use its first node; endpoints above it get an exact table on the fly.
#[derive(Clone, Debug)]
pub struct IntegratedCirSampler {
    pub cir: CirParams,
    pub settings: IcirSettings,
    grid: Vec<f64>,
    tables: Vec<InversionTable>,
}

fn tri(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

impl IntegratedCirSampler {
    pub fn new(cir: CirParams, settings: IcirSettings) -> Result<Self> {
        cir.validate()?;
        let (shape, scale) = cir.stationary_shape_scale();
        let g = Gamma::new(shape, 1.0 / scale).map_err(|e| crate::Error::InvalidParam(e.to_string()))?;
        let lo = g.inverse_cdf(settings.tail_q).min(cir.v0).max(1e-10 * cir.theta);
        let hi = 2.0 * g.inverse_cdf(1.0 - settings.tail_q).max(cir.v0);
        let n = settings.nodes.max(2);
        let grid: Vec<f64> = (0..n).map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).exp()).collect();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|b| (0..=b).map(move |a| (a, b))).collect();
        let tables: Result<Vec<_>> = pairs
            .par_iter()
            .map(|&(a, b)| Self::table_for(&cir, grid[a], grid[b], &settings.table))
            .collect();
        Ok(IntegratedCirSampler { cir, settings, grid, tables: tables? })
    }

    fn table_for(cir: &CirParams, vs: f64, ve: f64, st: &TableSettings) -> Result<InversionTable> {
        let phi = BkCharFn::new(cir, vs, ve);
        InversionTable::build(&phi, Some(0.0), cir.delta * 0.5 * (vs + ve), st)
    }

    /// Table for exactly these endpoints.
    pub fn exact_table(&self, vs: f64, ve: f64) -> Result<InversionTable> {
        if !(vs > 0.0 && ve > 0.0) {
            return invalid("endpoints must be > 0");
        }
        Self::table_for(&self.cir, vs, ve, &self.settings.table)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn tables(&self) -> &[InversionTable] {
        &self.tables
    }

    fn locate(&self, v: f64) -> Option<(usize, f64)> {
        let g = &self.grid;
        if v <= g[0] {
            return Some((0, 0.0));
        }
        if v > g[g.len() - 1] {
            return None;
        }
        let j = g.partition_point(|&x| x < v).clamp(1, g.len() - 1);
        Some((j - 1, (v - g[j - 1]) / (g[j] - g[j - 1])))
    }

    /// Quantile of I at level `u` given the endpoints.
    pub fn quantile(&self, vs: f64, ve: f64, u: f64) -> Result<f64> {
        match (self.locate(vs), self.locate(ve)) {
            (Some((i, wi)), Some((j, wj))) => {
                let q = |a: usize, b: usize| self.tables[tri(a, b)].quantile(u);
                let i1 = (i + 1).min(self.grid.len() - 1);
                let j1 = (j + 1).min(self.grid.len() - 1);
                let mut s = (1.0 - wi) * (1.0 - wj) * q(i, j);
                if wi > 0.0 {
                    s += wi * (1.0 - wj) * q(i1, j);
                }
                if wj > 0.0 {
                    s += (1.0 - wi) * wj * q(i, j1);
                }
                if wi > 0.0 && wj > 0.0 {
                    s += wi * wj * q(i1, j1);
                }
                Ok(s.max(0.0))
            }
            _ => Ok(self.exact_table(vs, ve)?.quantile(u).max(0.0)),
        }
    }

    /// One draw of ∫V over the window.
    pub fn sample(&self, vs: f64, ve: f64, stream: &mut RngStream) -> Result<f64> {
        let u = stream.uniform();
        self.quantile(vs, ve, u)
    }
}

/// Exact draw from a fixed-endpoint table.
pub fn integrated_cir_sample(table: &InversionTable, stream: &mut RngStream) -> f64 {
    table.quantile(stream.uniform()).max(0.0)
}

/// Heston paths: per asset and monitoring step, two exact CIR half-steps, one
/// draw of the time-averaged variance X, and correlated Gaussians W.
#[derive(Clone, Debug)]
pub struct HestonModel {
    pub params: HestonParams,
    pub t: usize,
    half: Vec<CirFfConstants>,
    samplers: Vec<IntegratedCirSampler>,
}

impl HestonModel {
    pub fn new(params: HestonParams, t: usize, settings: IcirSettings) -> Result<Self> {
        if t < 1 {
            return invalid("need at least one monitoring point");
        }
        for (i, c) in params.cir.iter().enumerate() {
            if c.eta() < 1.0 {
                return invalid(format!("asset {i}: eta < 1 is not supported by the chi-square recursion"));
            }
        }
        let half = params.cir.iter().map(|c| CirFfConstants::new(c, c.delta / 2.0)).collect();
        let samplers: Result<Vec<_>> = params.cir.iter().map(|c| IntegratedCirSampler::new(*c, settings)).collect();
        Ok(HestonModel { params, t, half, samplers: samplers? })
    }

    pub fn sampler(&self, i: usize) -> &IntegratedCirSampler {
        &self.samplers[i]
    }
}

impl PathSource for HestonModel {
    fn shape(&self) -> (usize, usize) {
        (self.t, self.params.d())
    }

    fn draws_per_path(&self) -> usize {
        6 * self.t * self.params.d()
    }

    fn simulate(&self, n: usize, stream: &mut RngStream) -> Result<PathBatch> {
        let p = &self.params;
        let d = p.d();
        let h = p.delta() / 2.0;
        let chis: Vec<CentralChi2> = self.half.iter().map(|k| CentralChi2::new(k.eta - 1.0)).collect();
        let mut out = PathBatch::new(n, self.t, d);
        out.increments.int_cir.reserve(n * self.t * d);
        out.increments.gaussian.reserve(n * self.t * d);
        let mut v = vec![0.0; d];
        let mut logs = vec![0.0; d];
        let mut xs = vec![0.0; d];
        let mut dv = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut w = vec![0.0; d];
        for path in 0..n {
            for i in 0..d {
                v[i] = p.cir[i].v0;
                logs[i] = p.s0[i].ln();
            }
            for k in 0..self.t {
                for i in 0..d {
                    let (mid, _, _) = cir_transition(&self.half[i], &chis[i], v[i], stream);
                    let (end, _, _) = cir_transition(&self.half[i], &chis[i], mid, stream);
                    xs[i] = self.samplers[i].sample(v[i], end, stream)? / (2.0 * h);
                    dv[i] = end - v[i];
                    v[i] = end;
                }
                stream.fill_normal(&mut z);
                p.chol().mul_vec(&z, &mut w);
                for i in 0..d {
                    let c = &p.cir[i];
                    let (rho, kap, sig) = (p.rho[i], c.kappa, c.sigma);
                    let u = 2.0 * h * p.mu[i] - 2.0 * kap * c.theta * h * rho / sig
                        + rho / sig * dv[i]
                        + (2.0 * kap * h * rho / sig - h) * xs[i]
                        + (2.0 * h * (1.0 - rho * rho) * xs[i]).sqrt() * w[i];
                    logs[i] += u;
                    out.values[(path * self.t + k) * d + i] = logs[i].exp();
                    out.increments.int_cir.push(xs[i]);
                    out.increments.gaussian.push(w[i]);
                }
            }
        }
        Ok(out)
    }
}

pub fn heston_paths(params: &HestonParams, t: usize, stream: &RngStream, n: usize) -> Result<PathBatch> {
    let m = HestonModel::new(params.clone(), t, IcirSettings::default())?;
    simulate_batch(&m, n, stream)
}

/// Conditional moments of V over one step: mean and variance.
pub fn cir_conditional_moments(p: &CirParams, v: f64, dt: f64) -> (f64, f64) {
    let e = (-p.kappa * dt).exp();
    let s2 = p.sigma * p.sigma;
    let mean = v * e + p.theta * (1.0 - e);
    let var = v * s2 / p.kappa * (e - e * e) + p.theta * s2 / (2.0 * p.kappa) * (1.0 - e).powi(2);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Matrix;
    use approx::assert_abs_diff_eq;

    fn cir() -> CirParams {
        CirParams::new(2.0, 0.04, 0.3, 0.04, 1.0).unwrap()
    }

    #[test]
    fn gbm_noiseless_is_deterministic() {
        let p = GbmParams::single(0.05, 0.0, 100.0).unwrap();
        let b = gbm_paths(&p, 4, 0.25, DriftMode::Raw, &RngStream::new(1, 0), 10).unwrap();
        for path in 0..10 {
            for k in 0..4 {
                let want = 100.0 * (0.05 * 0.25 * (k + 1) as f64).exp();
                assert!((b.at(path, k, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gbm_martingale_mean() {
        let p = GbmParams::single(0.0, 0.2, 1.0).unwrap();
        let b = gbm_paths(&p, 1, 1.0, DriftMode::Martingale, &RngStream::new(2, 0), 1_000_000).unwrap();
        let m: f64 = b.values.iter().sum::<f64>() / 1e6;
        let sd = ((0.04f64).exp() - 1.0).sqrt() / 1e3;
        assert!((m - 1.0).abs() < 4.0 * sd, "{m}");
        let r = gbm_paths(&p, 1, 1.0, DriftMode::Raw, &RngStream::new(2, 0), 1_000_000).unwrap();
        let m: f64 = r.values.iter().sum::<f64>() / 1e6;
        assert!((m - 0.02f64.exp()).abs() < 4.0 * sd * 1.03, "{m}");
    }

    #[test]
    fn gbm_independent_assets_uncorrelated() {
        let p = GbmParams::new(vec![0.0; 2], vec![0.2; 2], Matrix::identity(2), vec![1.0; 2]).unwrap();
        let b = gbm_paths(&p, 1, 1.0, DriftMode::Raw, &RngStream::new(3, 0), 100_000).unwrap();
        let (x, y): (Vec<f64>, Vec<f64>) = (0..b.n_paths).map(|i| (b.at(i, 0, 0).ln(), b.at(i, 0, 1).ln())).unzip();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (y.iter().map(|a| (a - my).powi(2)).sum::<f64>() / n).sqrt();
        assert!((cov / (sx * sy)).abs() < 0.01);
    }

    #[test]
    fn cir_constants_identity() {
        let k = CirFfConstants::new(&cir(), 1.0);
        assert_abs_diff_eq!((k.c * k.beta).sqrt(), k.gamma, epsilon = 1e-12);
        assert_abs_diff_eq!(k.gamma, (-1.0f64).exp(), epsilon = 1e-12);
        assert!(k.path_bound_valid());
    }

    #[test]
    fn cir_step_conditional_mean_from_theta() {
        let p = cir();
        let k = CirFfConstants::new(&p, 1.0);
        let chi = CentralChi2::new(k.eta - 1.0);
        let mut s = RngStream::new(4, 0);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| cir_transition(&k, &chi, p.theta, &mut s).0).sum();
        let (m, v) = cir_conditional_moments(&p, p.theta, 1.0);
        assert_abs_diff_eq!(m, p.theta, epsilon = 1e-15);
        assert!((sum / n as f64 - m).abs() < 4.0 * (v / n as f64).sqrt());
    }

    #[test]
    fn cir_step_small_sigma_follows_ode() {
        let p = CirParams::new(1.5, 0.05, 1e-4, 0.2, 0.5).unwrap();
        let k = CirFfConstants::new(&p, 0.5);
        let mut s = RngStream::new(5, 0);
        let v = cir_step(&k, 0.2, &mut s).unwrap();
        let e = (-0.75f64).exp();
        assert_abs_diff_eq!(v, 0.2 * e + 0.05 * (1.0 - e), epsilon = 1e-3);
    }

    #[test]
    fn cir_step_from_zero_is_scaled_central_chi2() {
        let p = cir();
        let k = CirFfConstants::new(&p, 1.0);
        let mut s = RngStream::new(6, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| cir_step(&k, 0.0, &mut s).unwrap() / k.c).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        assert!((m - k.eta).abs() < 4.0 * (2.0 * k.eta / n as f64).sqrt());
        assert!((v / (2.0 * k.eta) - 1.0).abs() < 0.03);
    }

    #[test]
    fn cir_step_rejects_small_eta() {
        let p = CirParams::new(0.1, 0.01, 1.0, 0.01, 1.0).unwrap();
        let k = CirFfConstants::new(&p, 1.0);
        assert!(cir_step(&k, 0.01, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn path_bound_holds() {
        let p = CirParams::new(1.0, 0.04, 0.2, 0.06, 1.0).unwrap();
        let m = CirModel::new(p, 12).unwrap();
        assert!(m.consts.path_bound_valid());
        let b = simulate_batch(&m, 20_000, &RngStream::new(7, 0)).unwrap();
        assert_eq!(cir_path_bound_violations(&m, &b), 0);
    }

    #[test]
    fn bk_phi_basic_properties() {
        let phi = BkCharFn::new(&cir(), 0.03, 0.05);
        assert_abs_diff_eq!(phi.eval(0.0).re, 1.0, epsilon = 1e-12);
        for a in [0.1, 1.0, 10.0, 100.0, 1000.0] {
            assert!(phi.eval(a).norm() <= 1.0 + 1e-12);
        }
        // The law of I is symmetric in its endpoints.
        let swapped = BkCharFn::new(&cir(), 0.05, 0.03);
        for a in [0.5, 5.0, 50.0] {
            assert!((phi.eval(a) - swapped.eval(a)).norm() < 1e-12);
        }
    }

    #[test]
    fn bk_mean_matches_bridge_limit() {
        // Tiny σ: the variance follows the ODE, so ∫V is the ODE integral.
        let p = CirParams::new(1.0, 0.04, 1e-3, 0.04, 1.0).unwrap();
        let phi = BkCharFn::new(&p, 0.04, 0.04);
        let (m, v) = phi.moments();
        assert_abs_diff_eq!(m, 0.04, epsilon = 1e-6);
        assert!(v.sqrt() < 1e-3);
    }

    #[test]
    fn exact_table_mass_and_positive_draws() {
        let s = IntegratedCirSampler { cir: cir(), settings: IcirSettings::default(), grid: vec![0.04], tables: vec![] };
        let t = s.exact_table(0.03, 0.05).unwrap();
        assert!((t.mass - 1.0).abs() < 1e-3, "{}", t.mass);
        let mut st = RngStream::new(8, 0);
        assert!((0..1000).all(|_| integrated_cir_sample(&t, &mut st) > 0.0));
        assert!(t.cdf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn heston_perfect_correlation_shares_w() {
        let c = cir();
        let corr = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = HestonParams::new(vec![c, c], vec![0.0; 2], vec![-0.5, 0.3], corr, vec![1.0, 2.0]).unwrap();
        let st = IcirSettings { nodes: 8, ..Default::default() };
        let m = HestonModel::new(p, 3, st).unwrap();
        let b = simulate_batch(&m, 500, &RngStream::new(9, 0)).unwrap();
        let w = &b.increments.gaussian;
        assert!(w.chunks(2).all(|c| c[0] == c[1]));
        assert!(b.values.iter().all(|&x| x > 0.0 && x.is_finite()));
    }
}
