//! Characteristic-function inversion and the series toolkit it relies on:
//! z/sinh z, z/tanh z, modified Bessel I_ν and the lower incomplete gamma.

use crate::error::{invalid, Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{FRAC_PI_4, LN_2, PI};
use std::sync::OnceLock;

/// Φ(a) = E[e^{iaX}] for real a ≥ 0. Negative frequencies follow from
/// Φ(−a) = conj Φ(a).
pub trait CharFunction: Sync {
    fn eval(&self, a: f64) -> Complex64;

    /// log Φ(a) on a branch continuous in a. Implementations that can form the
    /// logarithm without overflow should override this.
    fn log_eval(&self, a: f64) -> Complex64 {
        self.eval(a).ln()
    }
}

/// Closure adapter.
pub struct FnChar<F>(pub F);

impl<F: Fn(f64) -> Complex64 + Sync> CharFunction for FnChar<F> {
    fn eval(&self, a: f64) -> Complex64 {
        (self.0)(a)
    }
}

/// Extends Φ to negative frequencies by conjugate symmetry.
pub fn eval_signed(phi: &dyn CharFunction, a: f64) -> Complex64 {
    if a >= 0.0 {
        phi.eval(a)
    } else {
        phi.eval(-a).conj()
    }
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(16))
}

/// Composite 16-point Gauss–Legendre nodes on [0, m]; `n_quad` is rounded up
/// to a multiple of 16. The first panel is split geometrically toward zero so
/// that Φ varying on a scale far below the panel width is still resolved.
pub fn composite_nodes(m: f64, n_quad: usize) -> (Vec<f64>, Vec<f64>) {
    const GRADED: i32 = 8;
    let (x, w) = gl16();
    let panels = n_quad.div_ceil(16).max(1);
    let h = m / panels as f64;
    let mut a = Vec::with_capacity((panels + GRADED as usize) * 16);
    let mut wt = Vec::with_capacity(a.capacity());
    let mut push = |lo: f64, hi: f64| {
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (xi, wi) in x.iter().zip(w) {
            a.push(c + r * xi);
            wt.push(r * wi);
        }
    };
    push(0.0, h * 0.5f64.powi(GRADED));
    for g in (0..GRADED).rev() {
        push(h * 0.5f64.powi(g + 1), h * 0.5f64.powi(g));
    }
    for p in 1..panels {
        push(p as f64 * h, (p + 1) as f64 * h);
    }
    (a, wt)
}

/// Φ tabulated on a quadrature rule over [0, M]; densities at any x are then
/// cheap trigonometric sums.
#[derive(Clone, Debug)]
pub struct Inverter {
    pub m_cut: f64,
    a: Vec<f64>,
    w: Vec<f64>,
    phi: Vec<Complex64>,
}

impl Inverter {
    pub fn new(phi: &dyn CharFunction, m_cut: f64, n_quad: usize) -> Result<Self> {
        if !(m_cut > 0.0) {
            return invalid("frequency cutoff M must be > 0");
        }
        if n_quad < 16 {
            return invalid("n_quad must be >= 16");
        }
        let (a, w) = composite_nodes(m_cut, n_quad);
        let vals: Vec<Complex64> = a.par_iter().map(|&ai| phi.eval(ai)).collect();
        if let Some(i) = vals.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(format!("characteristic function at node a = {}", a[i])));
        }
        Ok(Inverter { m_cut, a, w, phi: vals })
    }

    pub fn n_nodes(&self) -> usize {
        self.a.len()
    }

    /// (1/π) ∫₀^M Re[e^{−iax} Φ(a)] da.
    pub fn density(&self, x: f64) -> f64 {
        let s: f64 = self
            .a
            .iter()
            .zip(&self.w)
            .zip(&self.phi)
            .map(|((&a, &w), p)| {
                let (s, c) = (a * x).sin_cos();
                w * (c * p.re + s * p.im)
            })
            .sum();
        s / PI
    }

    /// Densities on the uniform grid `x0 + i dx`, `i < n`, by a per-node
    /// phase recurrence.
    pub fn density_grid(&self, x0: f64, dx: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        // Re-anchor the recurrence every 64 steps to bound drift.
        const BLOCK: usize = 64;
        let parts: Vec<(usize, Vec<f64>)> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let i0 = b * BLOCK;
                let len = BLOCK.min(n - i0);
                let mut acc = vec![0.0; len];
                let xs = x0 + i0 as f64 * dx;
                for ((&a, &w), p) in self.a.iter().zip(&self.w).zip(&self.phi) {
                    let mut cur = Complex64::from_polar(1.0, -a * xs) * p * w;
                    let step = Complex64::from_polar(1.0, -a * dx);
                    for v in acc.iter_mut() {
                        *v += cur.re;
                        cur *= step;
                    }
                }
                (i0, acc)
            })
            .collect();
        for (i0, acc) in parts {
            for (k, v) in acc.into_iter().enumerate() {
                out[i0 + k] = v / PI;
            }
        }
        out
    }
}

/// One-shot inversion at a single point.
pub fn invert_pdf(phi: &dyn CharFunction, x: f64, m_cut: f64, n_quad: usize) -> Result<f64> {
    Ok(Inverter::new(phi, m_cut, n_quad)?.density(x))
}

/// Smallest frequency on a geometric scan beyond which |Φ| stays below
/// `tol` for twenty consecutive probes.
pub fn find_cutoff(phi: &dyn CharFunction, tol: f64, start: f64) -> f64 {
    let mut a = start.max(1e-12);
    let mut below = 0;
    let mut first_below = a;
    for _ in 0..4000 {
        if phi.eval(a).norm() < tol {
            if below == 0 {
                first_below = a;
            }
            below += 1;
            if below >= 20 {
                return first_below;
            }
        } else {
            below = 0;
        }
        a *= 1.04;
    }
    a
}

/// Mean and variance from log Φ at steps `h` and `h/2`, using
/// log Φ(h) = iκ₁h − κ₂h²/2 − iκ₃h³/6 + … with one Richardson step.
/// Working with cumulants avoids the mean² cancellation of raw moments.
pub fn moments_from_phi(phi: &dyn CharFunction, h: f64) -> (f64, f64) {
    let (l1, l2) = (phi.log_eval(h), phi.log_eval(h / 2.0));
    let (g1, g2) = (l1.im / h, l2.im / (h / 2.0));
    let (q1, q2) = (-2.0 * l1.re / (h * h), -8.0 * l2.re / (h * h));
    ((4.0 * g2 - g1) / 3.0, ((4.0 * q2 - q1) / 3.0).max(0.0))
}

/// Like [`moments_from_phi`] but picks the steps from the law's own scale.
/// A first probe at a tiny step fixes the mean without phase wrapping; the
/// variance then comes from the centred law.
pub fn moments_auto(phi: &dyn CharFunction, scale_guess: f64) -> (f64, f64) {
    let mut h = 1e-6 / scale_guess.max(1e-300);
    let mut mean = 0.0;
    for _ in 0..20 {
        let im = phi.log_eval(h).im;
        mean = im / h;
        if im.abs() < 1.0 {
            break;
        }
        h /= 1e3;
    }
    let mut var = 0.0;
    h = 1e-2 / scale_guess.max(1e-300);
    for _ in 0..6 {
        let c = Shifted { inner: phi, shift: mean };
        let (dm, v) = moments_from_phi(&c, h);
        mean += dm;
        var = v;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            break;
        }
        let next = 1e-2 / sd;
        if (next / h - 1.0).abs() < 0.1 && dm.abs() < 1e-3 * sd {
            break;
        }
        h = next;
    }
    (mean, var)
}

/// Φ of X − `shift`.
pub struct Shifted<'a> {
    pub inner: &'a dyn CharFunction,
    pub shift: f64,
}

impl CharFunction for Shifted<'_> {
    fn eval(&self, a: f64) -> Complex64 {
        self.inner.eval(a) * Complex64::from_polar(1.0, -a * self.shift)
    }

    /// Phase reduced to (−π, π]: the centred law is probed only at small a.
    fn log_eval(&self, a: f64) -> Complex64 {
        let l = self.inner.log_eval(a) - Complex64::new(0.0, a * self.shift);
        let tau = 2.0 * PI;
        Complex64::new(l.re, l.im - tau * (l.im / tau).round())
    }
}

/// Densities below `−NEG_FLOOR × peak` mean the inversion settings are too
/// coarse; shallower ripples are clipped to zero.
pub const NEG_FLOOR: f64 = 1e-6;

/// Settings for [`InversionTable::build`].
#[derive(Clone, Copy, Debug)]
pub struct TableSettings {
    /// |Φ| threshold that fixes the frequency cutoff.
    pub tol: f64,
    /// Points on the x grid.
    pub n_grid: usize,
    /// Grid extent below and above the mean, in standard deviations.
    pub lo_sd: f64,
    pub hi_sd: f64,
    /// Bounds on the number of 16-node panels.
    pub min_panels: usize,
    pub max_panels: usize,
}

impl Default for TableSettings {
    fn default() -> Self {
        TableSettings { tol: 1e-11, n_grid: 512, lo_sd: 10.0, hi_sd: 15.0, min_panels: 8, max_panels: 4096 }
    }
}

/// Density and cdf of a law tabulated on a uniform grid by inversion of its
/// characteristic function.
#[derive(Clone, Debug)]
pub struct InversionTable {
    pub mean: f64,
    pub sd: f64,
    pub x0: f64,
    pub dx: f64,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Trapezoid mass before renormalization.
    pub mass: f64,
    /// Mass removed by clipping shallow negative ripples.
    pub clipped: f64,
    pub m_cut: f64,
    pub n_quad: usize,
}

impl InversionTable {
    /// `support_lo` is a hard lower end of the support (0 for positive laws).
    /// `scale_guess` is any rough magnitude of the spread, used only to seed
    /// the moment probe.
    pub fn build(phi: &dyn CharFunction, support_lo: Option<f64>, scale_guess: f64, st: &TableSettings) -> Result<Self> {
        let (mean, var) = moments_auto(phi, scale_guess);
        let sd = var.sqrt();
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::NonFinite(format!("moment probe gave mean {mean}, sd {sd}")));
        }
        let centred = Shifted { inner: phi, shift: mean };
        let m_cut = find_cutoff(&centred, st.tol, 0.05 / sd);
        let mut lo = -st.lo_sd * sd;
        if let Some(s) = support_lo {
            lo = lo.max(s - mean);
        }
        let hi = st.hi_sd * sd;
        let reach = lo.abs().max(hi);
        let panels = ((m_cut * reach / 4.0).ceil() as usize).clamp(st.min_panels, st.max_panels);
        let inv = Inverter::new(&centred, m_cut, 16 * panels)?;
        let n = st.n_grid.max(8);
        let dx = (hi - lo) / (n - 1) as f64;
        let mut pdf = inv.density_grid(lo, dx, n);
        let peak = pdf.iter().cloned().fold(0.0, f64::max);
        let mut clipped = 0.0;
        for (i, v) in pdf.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v < -NEG_FLOOR * peak {
                    return Err(Error::NegativeDensity { x: mean + lo + i as f64 * dx, value: *v });
                }
                clipped -= *v * dx;
                *v = 0.0;
            }
        }
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * dx * (pdf[i - 1] + pdf[i]);
        }
        let mass = cdf[n - 1];
        if !(mass > 0.0) {
            return Err(Error::NonFinite("tabulated density has no mass".into()));
        }
        for v in cdf.iter_mut() {
            *v /= mass;
        }
        for v in pdf.iter_mut() {
            *v /= mass;
        }
        Ok(InversionTable { mean, sd, x0: mean + lo, dx, pdf, cdf, mass, clipped, m_cut, n_quad: 16 * panels })
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    /// Inverse cdf with linear interpolation between grid points.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        let j = self.cdf.partition_point(|&c| c < u).clamp(1, n - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let t = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
        self.x0 + (j as f64 - 1.0 + t) * self.dx
    }

    /// Tabulated density, linearly interpolated; zero off the grid.
    pub fn pdf_at(&self, x: f64) -> f64 {
        let s = (x - self.x0) / self.dx;
        if s < 0.0 || s > (self.pdf.len() - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(self.pdf.len() - 2);
        let t = s - i as f64;
        self.pdf[i] * (1.0 - t) + self.pdf[i + 1] * t
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        let s = (x - self.x0) / self.dx;
        if s <= 0.0 {
            return 0.0;
        }
        if s >= (self.cdf.len() - 1) as f64 {
            return 1.0;
        }
        let i = s.floor() as usize;
        let t = s - i as f64;
        self.cdf[i] * (1.0 - t) + self.cdf[i + 1] * t
    }

    /// Mean of the tabulated law (trapezoid).
    pub fn tabulated_moment(&self, k: i32) -> f64 {
        let n = self.pdf.len();
        (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * self.x_at(i).powi(k) * self.pdf[i]
            })
            .sum::<f64>()
            * self.dx
    }
}

fn region_ok(z: Complex64) -> bool {
    if z.norm() == 0.0 {
        return true;
    }
    let t = z.arg().abs();
    t <= FRAC_PI_4 + 1e-12 || t >= 3.0 * FRAC_PI_4 - 1e-12
}

/// B_{2n}/(2n)! for n = 0..60 via ζ(2n).
fn bernoulli_ratio() -> &'static [f64] {
    static C: OnceLock<Vec<f64>> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = vec![1.0];
        for n in 1..=60 {
            let zeta = if n == 1 {
                PI * PI / 6.0
            } else {
                (1..200_000).map(|k| (k as f64).powi(-2 * n)).take_while(|t| *t > 1e-300).sum()
            };
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            c.push(sign * 2.0 * zeta / (2.0 * PI).powi(2 * n as i32));
        }
        c
    })
}

enum CothKind {
    Sinh,
    Tanh,
}

fn z_over_hyp(z: Complex64, eps: f64, kind: CothKind) -> Result<(Complex64, usize)> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid("eps must lie in (0, 1)");
    }
    if !region_ok(z) {
        return invalid(format!("z = {z} lies outside the sector |arg z| <= pi/4 (mod pi)"));
    }
    if z.norm() == 0.0 {
        return Ok((Complex64::new(1.0, 0.0), 0));
    }
    // Both functions are even; work with Re z >= 0.
    let z = if z.re < 0.0 { -z } else { z };
    if z.re >= 1.0 {
        // Geometric series in e^{−2z}; tail after K terms is
        // |z| e^{−2K Re z} / sinh(Re z) for sinh, times (1+e^{−2Re z}) for tanh.
        let x = z.re;
        let lead = match kind {
            CothKind::Sinh => z.norm() / x.sinh(),
            CothKind::Tanh => z.norm() * (1.0 + (-2.0 * x).exp()) / (1.0 - (-2.0 * x).exp()),
        };
        let k = ((lead / eps).ln() / (2.0 * x)).ceil().max(1.0) as usize;
        let q = (-2.0 * z).exp();
        let mut s = Complex64::new(0.0, 0.0);
        let mut t = Complex64::new(1.0, 0.0);
        for _ in 0..k {
            s += t;
            t *= q;
        }
        let v = match kind {
            CothKind::Sinh => 2.0 * z * (-z).exp() * s,
            CothKind::Tanh => z * (1.0 + q) * s,
        };
        return Ok((v, k));
    }
    // |z| < √2 < π here: Bernoulli series, tail ≤ 2ζ(2) q^N / (1 − q).
    let c = bernoulli_ratio();
    let q = z.norm_sqr() / (PI * PI);
    let z2 = z * z;
    let mut s = Complex64::new(0.0, 0.0);
    let mut zp = Complex64::new(1.0, 0.0);
    let mut n = 0;
    loop {
        let coef = match kind {
            CothKind::Sinh => 2.0 * (1.0 - 2f64.powi(2 * n as i32 - 1)) * c[n],
            CothKind::Tanh => 4f64.powi(n as i32) * c[n],
        };
        s += coef * zp;
        zp *= z2;
        n += 1;
        let tail = 2.0 * (PI * PI / 6.0) * q.powi(n as i32) / (1.0 - q);
        if tail <= eps || n >= c.len() {
            break;
        }
    }
    Ok((s, 2 * (n - 1)))
}

/// z/sinh z to additive error `eps`, with the number of terms used.
pub fn series_z_over_sinh(z: Complex64, eps: f64) -> Result<(Complex64, usize)> {
    z_over_hyp(z, eps, CothKind::Sinh)
}

/// z/tanh z to additive error `eps`, with the number of terms used.
pub fn series_z_over_tanh(z: Complex64, eps: f64) -> Result<(Complex64, usize)> {
    z_over_hyp(z, eps, CothKind::Tanh)
}

/// Largest |z| accepted by [`bessel_i`].
pub const BESSEL_CAP: f64 = 500.0;

/// log Σ_k (z²/4)^k / (k! Γ(ν+k+1)) and the index at which the sum stopped.
fn bessel_series_log(nu: f64, z2: Complex64, eps: f64) -> (Complex64, usize) {
    let (s, k) = bessel_series_ratio(nu, z2, eps);
    (s.ln() - ln_gamma(nu + 1.0), k)
}

/// Σ_k (z²/4)^k Γ(ν+1) / (k! Γ(ν+k+1)).
fn bessel_series_ratio(nu: f64, z2: Complex64, eps: f64) -> (Complex64, usize) {
    let q = z2 / 4.0;
    let qa = q.norm();
    let mut t = Complex64::new(1.0, 0.0);
    let mut s = t;
    let mut k = 0usize;
    loop {
        k += 1;
        t *= q / (k as f64 * (nu + k as f64));
        s += t;
        let r = qa / ((k + 1) as f64 * (nu + k as f64 + 1.0));
        if r < 0.5 && t.norm() * r / (1.0 - r) <= eps * s.norm().max(f64::MIN_POSITIVE) {
            return (s, k);
        }
        if k > 100_000 {
            return (s, k);
        }
    }
}

/// I_ν(z) from the power series, with the truncation index. Principal
/// branch of z^ν.
pub fn bessel_i(nu: f64, z: Complex64, eps: f64) -> Result<(Complex64, usize)> {
    if !(nu >= 0.0) {
        return invalid("Bessel order must be >= 0");
    }
    let absz = z.norm();
    if absz > BESSEL_CAP {
        return invalid(format!("|z| = {absz} exceeds the series cap {BESSEL_CAP}"));
    }
    if absz == 0.0 {
        return Ok((Complex64::new(if nu == 0.0 { 1.0 } else { 0.0 }, 0.0), 0));
    }
    let (ls, k) = bessel_series_log(nu, z * z, eps);
    Ok((((z / 2.0).ln() * nu + ls).exp(), k))
}

/// Radius below which [`log_bessel_i`] uses the power series.
const SERIES_RADIUS: f64 = 40.0;

fn hankel_log_principal(nu: f64, z: Complex64) -> Complex64 {
    let mu = 4.0 * nu * nu;
    let mut s = Complex64::new(1.0, 0.0);
    let mut t = Complex64::new(1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kk = (2 * k - 1) as f64;
        t *= -(mu - kk * kk) / (k as f64 * 8.0) / z;
        let tn = t.norm();
        if tn > last {
            break;
        }
        s += t;
        last = tn;
        if tn < 1e-17 {
            break;
        }
    }
    z - 0.5 * (2.0 * PI * z).ln() + s.ln()
}

fn debye_u(p: Complex64) -> [Complex64; 6] {
    let p2 = p * p;
    let poly = |c: &[f64]| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * p2 + ci);
    [
        Complex64::new(1.0, 0.0),
        p * poly(&[3.0, -5.0]) / 24.0,
        p2 * poly(&[81.0, -462.0, 385.0]) / 1152.0,
        p * p2 * poly(&[30375.0, -369603.0, 765765.0, -425425.0]) / 414720.0,
        p2 * p2 * poly(&[4465125.0, -94121676.0, 349922430.0, -446185740.0, 185910725.0]) / 39813120.0,
        p * p2 * p2
            * poly(&[1519035525.0, -49286948607.0, 284499769554.0, -614135872350.0, 566098157625.0, -188699385875.0])
            / 6688604160.0,
    ]
}

fn debye_log_principal(nu: f64, z: Complex64) -> Complex64 {
    let w = z / nu;
    let s = (1.0 + w * w).sqrt();
    let eta = s + (w / (1.0 + s)).ln();
    let p = 1.0 / s;
    let u = debye_u(p);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut nk = 1.0;
    for uk in u {
        sum += uk / nk;
        nk *= nu;
    }
    nu * eta - 0.5 * (2.0 * PI * nu).ln() - 0.5 * s.ln() + sum.ln()
}

/// log I_ν(z) where z = exp(`log_z`) and z^ν is taken on the branch fixed by
/// `log_z`. Continuity in `log_z` is what keeps Bessel ratios free of branch
/// jumps along a frequency sweep.
pub fn log_bessel_i(nu: f64, log_z: Complex64) -> Complex64 {
    let absz = log_z.re.exp();
    if absz <= SERIES_RADIUS {
        let z2 = (2.0 * log_z).exp();
        let (ls, _) = bessel_series_log(nu, z2, 1e-17);
        return nu * (log_z - LN_2) + ls;
    }
    // I_ν(z e^{iπm}) = e^{iπmν} I_ν(z): rotate into |arg| ≤ π/2.
    let m = (log_z.im / PI).round();
    let lz = log_z - Complex64::new(0.0, PI * m);
    let z = lz.exp();
    let base = if nu < 1.0 { hankel_log_principal(nu, z) } else { debye_log_principal(nu, z) };
    base + Complex64::new(0.0, PI * m * nu)
}

/// Γ_m(s+1) = ∫₀^m t^s e^{−t} dt.
///
/// For m ≤ 2 the alternating series m^{s+1} Σ (−m)^k / (k!(s+1+k)) is
/// summed directly; larger m, where it cancels badly, switch to the positive-term form
/// m^{s+1} e^{−m} Σ m^k / ((s+1)(s+2)…(s+1+k)).
pub fn lower_incomplete_gamma(s: f64, m: f64, eps: f64) -> Result<f64> {
    if !(s > -1.0) {
        return invalid(format!("s = {s}: the integral diverges for s <= -1"));
    }
    if !(m >= 0.0) {
        return invalid("upper limit m must be >= 0");
    }
    if m == 0.0 {
        return Ok(0.0);
    }
    let a = s + 1.0;
    if m <= 2.0 {
        let mut term = 1.0; // (−m)^k / k!
        let mut sum = 1.0 / a;
        for k in 1..10_000 {
            term *= -m / k as f64;
            let add = term / (a + k as f64);
            sum += add;
            if add.abs() <= eps * 1e-3 * sum.abs() && (k as f64) > m {
                break;
            }
        }
        return Ok(m.powf(a) * sum);
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    for k in 1..100_000 {
        term *= m / (a + k as f64);
        sum += term;
        if term <= eps * 1e-3 * sum {
            break;
        }
    }
    Ok((a * m.ln() - m + sum.ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian() -> FnChar<impl Fn(f64) -> Complex64 + Sync> {
        FnChar(|a: f64| Complex64::new((-a * a / 2.0).exp(), 0.0))
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert_abs_diff_eq!(i, 2.0 / 31.0, epsilon = 1e-14);
    }

    #[test]
    fn invert_gaussian_at_zero() {
        let v = invert_pdf(&gaussian(), 0.0, 12.0, 64).unwrap();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-6);
        let far = invert_pdf(&gaussian(), 10.0, 12.0, 256).unwrap();
        assert!(far.abs() < 1e-15);
    }

    #[test]
    fn invert_exponential() {
        let phi = FnChar(|a: f64| 1.0 / Complex64::new(1.0, -2.0 * a));
        let v = invert_pdf(&phi, 2.0, 1.0e6, 1 << 21).unwrap();
        assert_abs_diff_eq!(v, 0.5 * (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn invert_rejects_bad_settings_and_nonfinite() {
        assert!(invert_pdf(&gaussian(), 0.0, 0.0, 64).is_err());
        assert!(invert_pdf(&gaussian(), 0.0, 1.0, 8).is_err());
        let bad = FnChar(|a: f64| Complex64::new(if a > 0.5 { f64::NAN } else { 1.0 }, 0.0));
        match invert_pdf(&bad, 0.0, 1.0, 16) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("a =")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadrature_doubling_is_stable() {
        let a = invert_pdf(&gaussian(), 0.7, 12.0, 128).unwrap();
        let b = invert_pdf(&gaussian(), 0.7, 12.0, 256).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn grid_matches_pointwise() {
        let inv = Inverter::new(&gaussian(), 12.0, 256).unwrap();
        let g = inv.density_grid(-6.0, 0.01, 1201);
        for (i, &v) in g.iter().enumerate().step_by(97) {
            assert_abs_diff_eq!(v, inv.density(-6.0 + i as f64 * 0.01), epsilon = 1e-13);
        }
        let mass: f64 = g.iter().sum::<f64>() * 0.01;
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn cutoff_and_moments() {
        let m = find_cutoff(&gaussian(), 1e-12, 0.1);
        assert!(m > 7.0 && m < 8.2, "{m}");
        let (mean, var) = moments_from_phi(&gaussian(), 1e-4);
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn table_of_chi2_law() {
        // χ²₈: Φ = (1 − 2ia)^{−4}, mean 8, sd 4, cdf(8) from the gamma oracle.
        let phi = FnChar(|a: f64| Complex64::new(1.0, -2.0 * a).powi(-4));
        let st = TableSettings { n_grid: 2048, max_panels: 1 << 14, tol: 1e-9, ..Default::default() };
        let t = InversionTable::build(&phi, Some(0.0), 2.0, &st).unwrap();
        assert_abs_diff_eq!(t.mean, 8.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.sd, 4.0, epsilon = 1e-4);
        assert!((t.mass - 1.0).abs() < 1e-3, "{}", t.mass);
        let want = statrs::function::gamma::gamma_lr(4.0, 4.0);
        assert_abs_diff_eq!(t.cdf_at(8.0), want, epsilon = 1e-3);
        assert!(t.cdf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn table_of_narrow_gaussian_far_from_zero() {
        let (m, s) = (1000.0, 0.01);
        let phi = FnChar(move |a: f64| Complex64::from_polar((-a * a * s * s / 2.0).exp(), a * m));
        let t = InversionTable::build(&phi, Some(0.0), 1.0, &TableSettings::default()).unwrap();
        assert_abs_diff_eq!(t.mean, m, epsilon = 1e-8);
        assert_abs_diff_eq!(t.sd, s, epsilon = 1e-8);
        assert_abs_diff_eq!(t.mass, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.quantile(0.975), m + 1.959964 * s, epsilon = 1e-4);
    }

    #[test]
    fn z_over_sinh_examples() {
        let (v, _) = series_z_over_sinh(Complex64::new(0.0, 0.0), 1e-12).unwrap();
        assert_eq!(v, Complex64::new(1.0, 0.0));
        let (v, _) = series_z_over_sinh(Complex64::new(1.0, 0.0), 1e-12).unwrap();
        assert_abs_diff_eq!(v.re, 0.8509181282393215, epsilon = 1e-12);
        // Oracle: mpmath, 40 digits.
        let (v, _) = series_z_over_sinh(Complex64::new(2.0, 1.0), 1e-13).unwrap();
        assert_abs_diff_eq!(v.re, 0.5111011088245022, epsilon = 1e-13);
        assert_abs_diff_eq!(v.im, -0.31538710958696539, epsilon = 1e-13);
        assert!(series_z_over_sinh(Complex64::new(0.5, 2.0), 1e-6).is_err());
    }

    #[test]
    fn series_match_direct_evaluation() {
        for &(re, im) in &[(0.3, 0.2), (0.9, -0.8), (-0.5, 0.1), (3.0, 2.5), (-4.0, -1.0), (1.0, 1.0), (0.0, 0.0)] {
            let z = Complex64::new(re, im);
            for eps in [1e-4, 1e-8, 1e-12] {
                let (s, _) = series_z_over_sinh(z, eps).unwrap();
                let (t, _) = series_z_over_tanh(z, eps).unwrap();
                if z.norm() > 0.0 {
                    assert!((s - z / z.sinh()).norm() <= eps, "{z} {eps}");
                    assert!((t - z / z.tanh()).norm() <= eps, "{z} {eps}");
                }
            }
        }
    }

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_i(0.0, Complex64::new(0.0, 0.0), 1e-15).unwrap().0.re, 1.0);
        assert_eq!(bessel_i(1.0, Complex64::new(0.0, 0.0), 1e-15).unwrap().0.re, 0.0);
        let (v, _) = bessel_i(0.0, Complex64::new(1.0, 0.0), 1e-15).unwrap();
        assert_abs_diff_eq!(v.re, 1.266065877752008, epsilon = 1e-8);
        assert!(bessel_i(0.5, Complex64::new(600.0, 0.0), 1e-10).is_err());
    }

    // Oracle values: mpmath.besseli at 40 significant digits.
    const BESSEL_ORACLE: &[(f64, f64, f64, f64, f64)] = &[
        (0.0, 1.0, 0.0, 1.266065877752008335598, 0.0),
        (2.5, 3.0, 4.0, -1.505376900844460879145, -2.055163614885521886543),
        (0.7, 20.0, 0.0, 43014058.2094389751708665956, 0.0),
        (3.0, 100.0, 0.0, 1.026274017565190058250e42, 0.0),
        (1.5, -2.0, 1.0, -1.055304931265689188284, -0.5866920484027926689037),
        (12.3, 60.0, 25.0, 1.910037800685635076523e24, 2.300554992317549294206e23),
        (0.3, 45.0, -40.0, -6.43232943618442019890e17, -1.678901755015269069251e18),
    ];

    #[test]
    fn bessel_series_matches_oracle() {
        for &(nu, re, im, ore, oim) in BESSEL_ORACLE {
            let z = Complex64::new(re, im);
            let o = Complex64::new(ore, oim);
            if z.norm() <= 40.0 {
                let (v, _) = bessel_i(nu, z, 1e-15).unwrap();
                assert!((v - o).norm() <= 1e-10 * o.norm(), "nu={nu} z={z} got {v}");
            }
        }
    }

    #[test]
    fn log_bessel_matches_oracle() {
        for &(nu, re, im, ore, oim) in BESSEL_ORACLE {
            let z = Complex64::new(re, im);
            let o = Complex64::new(ore, oim);
            let v = log_bessel_i(nu, z.ln()).exp();
            assert!((v - o).norm() <= 1e-8 * o.norm(), "nu={nu} z={z} got {v} want {o}");
        }
    }

    #[test]
    fn bessel_truncation_index_grows_logarithmically() {
        let z = Complex64::new(5.0, 0.0);
        let k: Vec<usize> = [1e-4, 1e-8, 1e-12].iter().map(|&e| bessel_i(1.0, z, e).unwrap().1).collect();
        assert!(k[0] < k[1] && k[1] < k[2]);
        assert!(k[2] < 40);
    }

    #[test]
    fn incomplete_gamma_examples() {
        assert_abs_diff_eq!(lower_incomplete_gamma(0.0, 1.0, 1e-12).unwrap(), 1.0 - (-1.0f64).exp(), epsilon = 1e-10);
        assert_eq!(lower_incomplete_gamma(0.5, 0.0, 1e-12).unwrap(), 0.0);
        assert_abs_diff_eq!(lower_incomplete_gamma(1.0, 2.0, 1e-12).unwrap(), 1.0 - 3.0 * (-2.0f64).exp(), epsilon = 1e-10);
        assert!(lower_incomplete_gamma(-1.0, 1.0, 1e-12).is_err());
        assert!(lower_incomplete_gamma(-2.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn incomplete_gamma_matches_regularized_oracle() {
        use statrs::function::gamma::{gamma, gamma_lr};
        for &s in &[-0.5, 0.0, 0.7, 2.0, 5.5] {
            for &m in &[0.1, 1.0, 7.5, 19.0, 35.0, 80.0] {
                let want = gamma_lr(s + 1.0, m) * gamma(s + 1.0);
                let got = lower_incomplete_gamma(s, m, 1e-12).unwrap();
                assert!((got - want).abs() <= 1e-10 * want.max(1.0), "s={s} m={m}: {got} vs {want}");
            }
        }
    }
}
