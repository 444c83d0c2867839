//! Error-budget and resource calculators: truncation radii, discretization
//! bit counts, quadrature and tail bounds, moment-explosion times and Toffoli
//! counting models.
//!
//! Asymptotic statements are made concrete with unit constants and a single
//! multiplicative safety factor applied to the resource (radius or grid size),
//! never to an exponent.

use crate::charinv::gauss_legendre;
use crate::core::{truncation_conditions, CirParams, HestonParams};
use crate::error::{invalid, Error, Result};
use crate::models::heston_paths;
use crate::qsim::qae_error_bound;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

pub const SAFETY: f64 = 4.0;
/// Floor for the near-zero integrated-variance cutoff, which underflows for
/// any realistic (T, d).
pub const ALPHA4_FLOOR: f64 = 1e-12;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid(format!("eps = {eps} must lie in (0, 1)"));
    }
    Ok(())
}

/// ln(max(x, e)): keeps the log factors ≥ 1 when B is tiny relative to ε.
fn ln1(x: f64) -> f64 {
    x.max(E).ln()
}

// ---------------------------------------------------------------- quadrature

/// Left-endpoint rule error bound on the box `[lo, hi]` with `n` cells per
/// axis: Σ_cells sup‖∇f‖∞ · vol(cell) · ℓ1-diam(box)/n.
/// `grad_sup[c]` is indexed with the first axis slowest.
pub fn left_endpoint_bound(grad_sup: &[f64], lo: &[f64], hi: &[f64], n: usize) -> Result<f64> {
    let dim = lo.len();
    if dim == 0 || hi.len() != dim || n == 0 {
        return invalid("box and grid must be non-empty");
    }
    if lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
        return invalid("box must satisfy lo < hi on every axis");
    }
    let cells = n.checked_pow(dim as u32).ok_or_else(|| Error::InvalidParam("too many cells".into()))?;
    if grad_sup.len() != cells {
        return invalid(format!("expected {cells} gradient bounds, got {}", grad_sup.len()));
    }
    let widths: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / n as f64).collect();
    let vol: f64 = widths.iter().product();
    let diam_over_n: f64 = widths.iter().sum();
    Ok(grad_sup.iter().sum::<f64>() * vol * diam_over_n)
}

/// Cell corners of the `n`-per-axis grid, first axis slowest.
fn for_each_cell(lo: &[f64], hi: &[f64], n: usize, mut f: impl FnMut(&[f64], &[f64])) {
    let dim = lo.len();
    let w: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / n as f64).collect();
    let mut idx = vec![0usize; dim];
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    loop {
        for k in 0..dim {
            a[k] = lo[k] + idx[k] as f64 * w[k];
            b[k] = a[k] + w[k];
        }
        f(&a, &b);
        let mut k = dim;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Per-cell gradient bounds from a closure `(cell_lo, cell_hi) -> sup‖∇f‖∞`.
pub fn cell_gradient_bounds(lo: &[f64], hi: &[f64], n: usize, sup: impl Fn(&[f64], &[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for_each_cell(lo, hi, n, |a, b| out.push(sup(a, b)));
    out
}

/// Left-endpoint Riemann sum of `f` and its error against `exact`.
pub fn left_endpoint_check(f: impl Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], n: usize, exact: f64) -> Result<(f64, f64)> {
    if lo.is_empty() || hi.len() != lo.len() || n == 0 {
        return invalid("box and grid must be non-empty");
    }
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a) / n as f64).product();
    let mut sum = 0.0;
    for_each_cell(lo, hi, n, |a, _| sum += f(a));
    let r = sum * vol;
    Ok((r, (r - exact).abs()))
}

// ------------------------------------------------------------- truncation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Gbm,
    Cir,
    Heston,
    Milstein,
}

/// Per-primitive truncation regions for a target truncation error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationBudget {
    pub model: ModelTag,
    pub eps_trunc: f64,
    pub safety: f64,
    pub gaussian: Option<f64>,
    pub chi2: Option<(f64, f64)>,
    /// (α₄, α₃): near-zero cutoff and ℓ1 upper radius of the integrated variance.
    pub int_cir: Option<(f64, f64)>,
    pub levy: Option<f64>,
    pub milstein: Option<f64>,
    pub alpha4_clipped: bool,
    /// α₄ before clipping, as log10 since it underflows.
    pub alpha4_log10: Option<f64>,
}

impl TruncationBudget {
    fn empty(model: ModelTag, eps: f64) -> Self {
        TruncationBudget {
            model,
            eps_trunc: eps,
            safety: SAFETY,
            gaussian: None,
            chi2: None,
            int_cir: None,
            levy: None,
            milstein: None,
            alpha4_clipped: false,
            alpha4_log10: None,
        }
    }

    pub fn gbm(b: f64, t: usize, d: usize, sigma_max: f64, eps: f64) -> Result<Self> {
        let mut s = Self::empty(ModelTag::Gbm, eps);
        s.gaussian = Some(gbm_truncation_radius(b, t, d, sigma_max, eps)?);
        Ok(s)
    }

    pub fn cir(b: f64, t: usize, eta: f64, eps: f64) -> Result<Self> {
        let c = cir_truncation(b, t, eta - 1.0, eps)?;
        let mut s = Self::empty(ModelTag::Cir, eps);
        s.gaussian = Some(c.a);
        s.chi2 = Some((c.b_lower, c.b_upper));
        Ok(s)
    }

    pub fn milstein(b: f64, x0_l1: f64, t: usize, d: usize, eps: f64) -> Result<Self> {
        let r = milstein_truncation(b, x0_l1, t, d, eps)?;
        let mut s = Self::empty(ModelTag::Milstein, eps);
        s.gaussian = Some(r);
        s.levy = Some(r);
        s.milstein = Some(r);
        Ok(s)
    }
}

/// ℓ∞ radius for the standard Gaussians of a GBM discrete sum:
/// SAFETY · (√2 σ_max + c √d T^{3/2} ln(BTd/ε)) with c = 1.
pub fn gbm_truncation_radius(b: f64, t: usize, d: usize, sigma_max: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(b > 0.0) || t == 0 || d == 0 || !(sigma_max >= 0.0) {
        return invalid("need B > 0, T ≥ 1, d ≥ 1, sigma_max ≥ 0");
    }
    let (tf, df) = (t as f64, d as f64);
    Ok(SAFETY * (2f64.sqrt() * sigma_max + df.sqrt() * tf.powf(1.5) * ln1(b * tf * df / eps)))
}

/// CIR truncation: χ² increments kept in [b_L, b_U], Gaussians in [−a, a].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CirTruncation {
    pub b_lower: f64,
    pub b_upper: f64,
    pub a: f64,
}

/// `r` is the χ² degrees of freedom η − 1.
/// b_L = ε/(BT²r)/SAFETY, b_U = SAFETY(r + ln(BT/ε)), a = SAFETY √ln(BT/ε).
pub fn cir_truncation(b: f64, t: usize, r: f64, eps: f64) -> Result<CirTruncation> {
    check_eps(eps)?;
    if !(r >= 1.0) {
        return invalid(format!("eta = {} < 2: the chi-square lower cutoff needs r = eta - 1 >= 1", r + 1.0));
    }
    if !(b > 0.0) || t == 0 {
        return invalid("need B > 0 and T ≥ 1");
    }
    let tf = t as f64;
    let l = ln1(b * tf / eps);
    Ok(CirTruncation {
        b_lower: eps / (b * tf * tf * r) / SAFETY,
        b_upper: SAFETY * (r + l),
        a: SAFETY * l.sqrt(),
    })
}

/// Heston truncation: checks the four parameter conditions per asset at the
/// half-step, then returns the common ℓ∞ radius
/// SAFETY (T^{3/2}√d + T²) ln(Td/ε), the integrated-variance radius
/// SAFETY T² ln(Td/ε), and α₄ = (ε/Td)^{T³d+1} clipped at [`ALPHA4_FLOOR`].
pub fn heston_truncation(params: &HestonParams, b: f64, t: usize, d: usize, eps: f64) -> Result<TruncationBudget> {
    check_eps(eps)?;
    if !(b > 0.0) || t == 0 || d == 0 {
        return invalid("need B > 0, T ≥ 1, d ≥ 1");
    }
    for (i, (c, &rho)) in params.cir.iter().zip(&params.rho).enumerate() {
        let dt = c.delta / 2.0;
        let (ok, vals) = truncation_conditions(c.kappa, c.sigma, rho, dt);
        if let Some(k) = ok.iter().position(|x| !x) {
            let failing: Vec<String> = ok
                .iter()
                .enumerate()
                .filter(|(_, x)| !**x)
                .map(|(j, _)| format!("{} (value {:.6})", j + 1, vals[j]))
                .collect();
            return Err(Error::Infeasible {
                condition: k as u8 + 1,
                detail: format!(
                    "asset {i}: kappa={}, sigma={}, rho={}, half-step={}; failing conditions {}",
                    c.kappa,
                    c.sigma,
                    rho,
                    dt,
                    failing.join(", ")
                ),
            });
        }
    }
    let (tf, df) = (t as f64, d as f64);
    let l = ln1(tf * df / eps);
    let radius = SAFETY * (tf.powf(1.5) * df.sqrt() + tf * tf) * l;
    let alpha3 = SAFETY * tf * tf * l;
    let expo = tf.powi(3) * df + 1.0;
    let log10 = expo * (eps / (tf * df)).log10();
    let raw = 10f64.powf(log10);
    let clipped = !(raw >= ALPHA4_FLOOR);
    let mut s = TruncationBudget::empty(ModelTag::Heston, eps);
    s.gaussian = Some(radius);
    s.chi2 = Some((0.0, radius));
    s.int_cir = Some((if clipped { ALPHA4_FLOOR } else { raw }, alpha3));
    s.alpha4_clipped = clipped;
    s.alpha4_log10 = Some(log10);
    Ok(s)
}

/// ℓ∞ radius for the Gaussians and Lévy areas of a Milstein path:
/// SAFETY · T ln(B‖X₀‖₁Td/ε).
pub fn milstein_truncation(b: f64, x0_l1: f64, t: usize, d: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(b > 0.0) || !(x0_l1 > 0.0) || t == 0 || d == 0 {
        return invalid("need B > 0, |x0|_1 > 0, T ≥ 1, d ≥ 1");
    }
    let (tf, df) = (t as f64, d as f64);
    Ok(SAFETY * tf * ln1(b * x0_l1 * tf * df / eps))
}

// ------------------------------------------------------------ tail bounds

/// Conditional tail bound on the integrated variance over one monitoring
/// window of length 2h (h = delta/2):
/// (h sinh(κh)/2κ)^{ξ+1} exp(κ coth(κh)(V_s+V_e)/σ²) exp(−κ²x/2σ²).
/// Stated for h ≥ 1 under the Feller condition.
pub fn integrated_cir_tail(params: &CirParams, v_start: f64, v_end: f64, x: f64) -> f64 {
    integrated_cir_log_tail(params, v_start, v_end, x).exp()
}

pub fn integrated_cir_log_tail(p: &CirParams, v_start: f64, v_end: f64, x: f64) -> f64 {
    let h = p.delta / 2.0;
    let (k, s2) = (p.kappa, p.sigma * p.sigma);
    let xi = p.feller_gap();
    (xi + 1.0) * (h * (k * h).sinh() / (2.0 * k)).ln() + k / (k * h).tanh() * (v_start + v_end) / s2 - k * k * x / (2.0 * s2)
}

/// e^{βα}P[X ≥ α] + ∫_α^∞ β e^{βy} P[X ≥ y] dy, which equals
/// ∫_α^∞ e^{βx} p(x) dx. `sf` is the survival function; the integral is
/// truncated at `upper`.
pub fn parts_identity(beta: f64, alpha: f64, upper: f64, sf: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(32);
    let panels = 256;
    let step = (upper - alpha) / panels as f64;
    let mut acc = 0.0;
    for j in 0..panels {
        let a = alpha + j as f64 * step;
        for (xi, wi) in x.iter().zip(&w) {
            let y = a + (xi + 1.0) * step / 2.0;
            acc += wi * step / 2.0 * beta * (beta * y).exp() * sf(y);
        }
    }
    (beta * alpha).exp() * sf(alpha) + acc
}

/// If e^{βy}P[X ≥ y] ≤ c e^{−(θ−β)y} for y ≥ α with θ > β, then
/// ∫_α^∞ e^{βx} p(x) dx ≤ c (1 + β/(θ−β)) e^{−(θ−β)α}.
pub fn tail_trick_bound(beta: f64, theta: f64, alpha: f64, c: f64) -> Result<f64> {
    if !(theta > beta) || !(beta > 0.0) {
        return invalid("tail trick needs theta > beta > 0");
    }
    let g = theta - beta;
    Ok(c * (1.0 + beta / g) * (-g * alpha).exp())
}

// ------------------------------------------------------ moment explosion

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplosionCase {
    /// ω = 1: the martingale moment.
    Unit,
    /// b < 0 with a real root: never explodes.
    Stable,
    /// b ≥ 0 with a real root.
    RealRoots,
    /// b² < 4ac.
    Complex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentExplosion {
    pub t_star: f64,
    pub case: ExplosionCase,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Explosion time of E[S^ω] for single-asset Heston with coefficients
/// a = σ²/2, b = ρσω − κ, c = (ω² − ω)/2 of the moment Riccati equation.
pub fn moment_explosion_time(params: &HestonParams, omega: f64) -> Result<MomentExplosion> {
    if params.d() != 1 {
        return invalid("moment explosion is defined for a single asset");
    }
    let c = &params.cir[0];
    moment_explosion_raw(c.kappa, c.sigma, params.rho[0], omega)
}

pub fn moment_explosion_raw(kappa: f64, sigma: f64, rho: f64, omega: f64) -> Result<MomentExplosion> {
    if !(omega >= 1.0) {
        return invalid(format!("omega = {omega} must be >= 1"));
    }
    let a = sigma * sigma / 2.0;
    let b = rho * sigma * omega - kappa;
    let c = (omega * omega - omega) / 2.0;
    let mk = |t_star, case| Ok(MomentExplosion { t_star, case, a, b, c });
    if omega == 1.0 {
        return mk(f64::INFINITY, ExplosionCase::Unit);
    }
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        if b < 0.0 {
            return mk(f64::INFINITY, ExplosionCase::Stable);
        }
        let g = disc.sqrt();
        let t = if g > 1e-8 * b { ((b + g) / (b - g)).ln() / g } else { 2.0 / b };
        return mk(t, ExplosionCase::RealRoots);
    }
    let beta = (-disc).sqrt();
    mk((PI - 2.0 * (b / beta).atan()) / beta, ExplosionCase::Complex)
}

/// Running means of S(t)^ω at n₀, 2n₀, …, n₀2^K paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceProbe {
    pub t: f64,
    pub omega: f64,
    pub n: Vec<u64>,
    pub means: Vec<f64>,
    /// Final over first running mean.
    pub growth: f64,
    pub divergent: bool,
}

/// Growth factor of the running mean over the doublings that flags a moment
/// as divergent.
pub const DIVERGENCE_GROWTH: f64 = 2.0;

/// Simulates single-asset Heston to time `t` in one exact step and tracks
/// the running mean of S^ω. A finite moment settles; an exploded one keeps
/// being pushed up by ever larger draws.
pub fn divergence_probe(params: &HestonParams, omega: f64, t: f64, n0: usize, doublings: u32, stream: &RngStream) -> Result<DivergenceProbe> {
    if params.d() != 1 || !(t > 0.0) || n0 == 0 {
        return invalid("probe needs one asset, t > 0 and n0 >= 1");
    }
    let mut p = params.clone();
    p.cir[0].delta = t;
    let n_max = n0 << doublings;
    let batch = heston_paths(&p, 1, stream, n_max)?;
    let mut acc = 0.0;
    let (mut n, mut means) = (Vec::new(), Vec::new());
    let mut next = n0;
    for (i, s) in batch.values.iter().enumerate() {
        acc += s.powf(omega);
        if i + 1 == next {
            n.push(next as u64);
            means.push(acc / next as f64);
            next *= 2;
        }
    }
    let growth = means[means.len() - 1] / means[0];
    Ok(DivergenceProbe { t, omega, n, means, growth, divergent: !(growth < DIVERGENCE_GROWTH) })
}

/// Blow-up time of ψ' = aψ² + bψ + c, ψ(0) = 0, by RK4 with a step that
/// shrinks like 1/ψ; past ψ = 10⁷ the remainder is closed by ∫ dψ/(aψ²).
/// Infinite if ψ stays bounded up to `t_max`. Used as an independent check
/// on the closed-form explosion times.
pub fn riccati_blowup_time(a: f64, b: f64, c: f64, t_max: f64) -> f64 {
    let f = |p: f64| a * p * p + b * p + c;
    let (mut t, mut p) = (0.0, 0.0);
    while t < t_max {
        let h = if p > 1.0 { (1e-3 / (a * p)).min(1e-4) } else { 1e-4 };
        let k1 = f(p);
        let k2 = f(p + h / 2.0 * k1);
        let k3 = f(p + h / 2.0 * k2);
        let k4 = f(p + h * k3);
        p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        if p > 1e7 {
            return t + 1.0 / (a * p);
        }
    }
    f64::INFINITY
}

// ------------------------------------------------------------ bit budgets

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum BitModel {
    /// Relative error on a GBM discrete sum.
    GbmRel { sigma: f64 },
    /// Absolute error on a CIR discrete sum with transition dof η.
    CirAbs { eta: f64 },
    HestonAbs,
    /// Milstein discrete sum at MLMC level `level`.
    Milstein { x0_l1: f64, level: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BitBudget {
    pub model: BitModel,
    pub bits_per_primitive: u32,
    pub primitives: u64,
    pub total_qubits: u64,
    pub safety: f64,
}

/// Grid bits per primitive distribution and total register size.
///
/// - gbm_rel: ⌈log₂(SAFETY (1+σ) d T / ε_disc)⌉ for each of dT Gaussians.
/// - cir_abs: ⌈log₂(SAFETY η B T / (ε_disc ε_trunc))⌉ for 2T draws per asset.
/// - heston_abs: total ⌈T⁴d² ln^{3/2}(SAFETY Td/ε_trunc) log₂(SAFETY Td/ε_disc)⌉
///   spread over the 4Td primitives.
/// - milstein: left-endpoint grid for gradient B T 2^ℓ ‖X₀‖₁ (dR²)^T over
///   2Td2^ℓ primitives of half-width R.
pub fn bit_budget(model: BitModel, b: f64, t: usize, d: usize, eps_disc: f64, eps_trunc: f64) -> Result<BitBudget> {
    check_eps(eps_disc)?;
    check_eps(eps_trunc)?;
    if !(b > 0.0) || t == 0 || d == 0 {
        return invalid("need B > 0, T ≥ 1, d ≥ 1");
    }
    let (tf, df) = (t as f64, d as f64);
    let bits = |x: f64| x.max(2.0).log2().ceil() as u32;
    let (bpp, prim, total) = match model {
        BitModel::GbmRel { sigma } => {
            let n = bits(SAFETY * (1.0 + sigma) * df * tf / eps_disc);
            let p = (t * d) as u64;
            (n, p, p * n as u64)
        }
        BitModel::CirAbs { eta } => {
            if !(eta > 0.0) {
                return invalid("eta must be positive");
            }
            let n = bits(SAFETY * eta * b * tf / (eps_disc * eps_trunc));
            let p = 2 * (t * d) as u64;
            (n, p, p * n as u64)
        }
        BitModel::HestonAbs => {
            let total = (tf.powi(4) * df * df * ln1(SAFETY * tf * df / eps_trunc).powf(1.5) * (SAFETY * tf * df / eps_disc).log2()).ceil() as u64;
            let p = 4 * (t * d) as u64;
            (total.div_ceil(p) as u32, p, total)
        }
        BitModel::Milstein { x0_l1, level } => {
            let r = milstein_truncation(b, x0_l1, t, d, eps_trunc)?;
            let fine = tf * 2f64.powi(level as i32);
            let n_dim = 2.0 * fine * df;
            let log2_grad = (b * fine * x0_l1).log2() + tf * (df * r * r).log2();
            let log2_n = SAFETY.log2() + log2_grad + (2.0 * r * n_dim).log2() - eps_disc.log2();
            let n = log2_n.max(1.0).ceil() as u32;
            let p = n_dim as u64;
            (n, p, p * n as u64)
        }
    };
    Ok(BitBudget { model, bits_per_primitive: bpp, primitives: prim, total_qubits: total, safety: SAFETY })
}

// ------------------------------------------------------------ gate counts

/// Toffoli count of an n-bit fixed-point multiplication with p integer bits.
pub fn t_mul(n: u64, p: u64) -> f64 {
    let (n, p) = (n as f64, p as f64);
    1.5 * n * n + 3.0 * n * p + 1.5 * n - 3.0 * p * p + 3.0 * p
}

pub fn t_add(n: u64) -> f64 {
    3.0 * n as f64
}

/// `m` Newton steps of the inverse square root.
pub fn t_invsqrt(n: u64, p: u64, m: u64) -> f64 {
    let (n, p, m) = (n as f64, p as f64, m as f64);
    n * n * (7.5 * m + 3.0) + 15.0 * n * p * m + n * (11.5 * m + 5.0) - 15.0 * p * p * m + 15.0 * p * m - 2.0 * m
}

/// √x = x · x^{−1/2}.
pub fn t_sqrt(n: u64, p: u64, m: u64) -> f64 {
    t_invsqrt(n, p, m) + t_mul(n, p)
}

/// Degree-`deg` polynomial by Horner's rule.
pub fn t_poly(n: u64, deg: u64, p: u64) -> f64 {
    let (n, d, p) = (n as f64, deg as f64, p as f64);
    1.5 * n * n * d + 3.0 * n * p * d + 3.5 * n * d - 3.0 * p * p * d + 3.0 * p * d - d
}

pub fn t_asin(n: u64, p: u64) -> f64 {
    t_poly(n, p, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSettings {
    pub t: usize,
    pub d: usize,
    pub log_n: u32,
    /// Truncation half-width b.
    pub b: f64,
    /// χ² degrees of freedom r = η − 1.
    pub r: f64,
    pub big_b: f64,
    pub eps: f64,
    /// Gates to evaluate the payoff.
    pub n_f: f64,
    /// Qsample normalization; amplification cost is 1/Z_p.
    pub z_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceReport {
    pub model: ModelTag,
    pub bits_per_primitive: u32,
    pub primitives: u64,
    pub total_qubits: u64,
    pub terms: Vec<GateTerm>,
    pub gate_total: f64,
    pub amplification_cost: f64,
    pub qae_bits: u32,
    pub qae_queries: u64,
    pub notes: Vec<String>,
}

/// Smallest m with π/2^m + π²/4^m ≤ target.
pub fn qae_bits_for(target: f64) -> u32 {
    (1..63).find(|&m| qae_error_bound(m) <= target).unwrap_or(63)
}

/// Gate-count model with unit constants; logs are base 2.
pub fn gate_count(model: ModelTag, s: &GateSettings) -> Result<ResourceReport> {
    if s.t == 0 || s.d == 0 || s.log_n == 0 || !(s.b > 0.0) || !(s.big_b > 0.0) || !(s.z_p > 0.0 && s.z_p <= 1.0) {
        return invalid("gate settings need T, d, log N ≥ 1, b, B > 0 and Z_p in (0, 1]");
    }
    check_eps(s.eps)?;
    let (t, d, ln, b, r) = (s.t as f64, s.d as f64, s.log_n as f64, s.b, s.r);
    let lg = f64::log2;
    let term = |name: &str, value: f64| GateTerm { name: name.to_string(), value };
    let mut notes = Vec::new();
    let (terms, primitives) = match model {
        ModelTag::Cir => (
            vec![
                term("transition_arithmetic", t * t * ln * ln * lg(t)),
                term("chi2_gaussian_loading", t * (b + r) * ln * lg(s.big_b * t * b / s.eps)),
                term("payoff_rotation", lg(s.big_b * t * b * 2f64.powf(ln)).powi(3)),
                term("payoff_oracle", s.n_f),
            ],
            2 * s.t as u64,
        ),
        ModelTag::Heston => {
            let e = d * t * t * b.powf(1.5);
            let log_lambda = lg(s.big_b * t * d) + e / std::f64::consts::LN_2;
            notes.push(
                "statement gives poly(T,d,b,log B) + N_f; the itemized terms below carry log(BTd/eps) and log N, \
                 and the grid condition N = Omega(Td BTdr e^{dT^2 b^{3/2}}/eps) is not enforced on log N"
                    .to_string(),
            );
            (
                vec![
                    term("cir_loading", e * t * d * (b + r) * ln * lg(s.big_b * t * d / s.eps) + d * t * t * ln * ln * lg(t)),
                    term("gaussian_loading", e * t * d * b * ln * lg(s.big_b * t * d / s.eps)),
                    term("int_cir_loading", t * d * (b * t).powi(4) * lg(b * t * 2f64.powf(ln)).powi(4)),
                    term("log_increment_arithmetic", t * d * d * ln * ln),
                    term("exponentials", d * t * e * e * lg(t * d * 2f64.powf(ln))),
                    term("payoff_rotation", (log_lambda + ln).powi(3)),
                    term("payoff_oracle", s.n_f),
                ],
                4 * (s.t * s.d) as u64,
            )
        }
        _ => return invalid("gate_count supports the CIR and Heston loaders"),
    };
    let gate_total = terms.iter().map(|t| t.value).sum();
    let qae_bits = qae_bits_for(s.eps * s.z_p);
    Ok(ResourceReport {
        model,
        bits_per_primitive: s.log_n,
        primitives,
        total_qubits: primitives * s.log_n as u64,
        terms,
        gate_total,
        amplification_cost: 1.0 / s.z_p,
        qae_bits,
        qae_queries: (1u64 << qae_bits) - 1,
        notes,
    })
}
