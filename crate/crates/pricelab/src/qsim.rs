//! Classical simulation of the quantum pricing pipeline: discrete qsamples,
//! amplitude encoding of a payoff sum, amplitude estimation drawn from its
//! exact outcome law, and polynomial state-preparation fidelity.

use crate::charinv::gauss_legendre;
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_BITS: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QsampleMode {
    /// p(a + k(b−a)/N)·(b−a)/N
    LeftEndpoint,
    /// ∫ p over the cell, 16-point Gauss–Legendre
    CellMass,
}

/// One-dimensional discrete qsample on [a, b] with N = 2ⁿ cells.
#[derive(Clone, Debug)]
pub struct Qsample1d {
    pub a: f64,
    pub b: f64,
    pub n_bits: u32,
    /// Unnormalized squared amplitudes (cell weights).
    pub weights: Vec<f64>,
    /// Z_p² = Σ weights.
    pub z2: f64,
}

impl Qsample1d {
    pub fn n(&self) -> usize {
        1 << self.n_bits
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / self.n() as f64
    }

    /// Left cell endpoints a + k(b−a)/N.
    pub fn points(&self) -> Vec<f64> {
        (0..self.n()).map(|k| self.a + k as f64 * self.dx()).collect()
    }

    /// Normalized amplitudes √(w_k / Z_p²).
    pub fn amplitudes(&self) -> Vec<f64> {
        self.weights.iter().map(|w| (w / self.z2).sqrt()).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.z2).collect()
    }
}

pub fn build_qsample(pdf: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64, n_bits: u32, mode: QsampleMode) -> Result<Qsample1d> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return invalid("box must be finite with b > a");
    }
    if n_bits == 0 || n_bits > MAX_BITS {
        return invalid(format!("n_bits must be in 1..={MAX_BITS}"));
    }
    let n = 1usize << n_bits;
    let dx = (b - a) / n as f64;
    let (gx, gw) = gauss_legendre(16);
    let weights: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let x0 = a + k as f64 * dx;
            match mode {
                QsampleMode::LeftEndpoint => pdf(x0) * dx,
                QsampleMode::CellMass => {
                    let c = x0 + 0.5 * dx;
                    gx.iter().zip(&gw).map(|(x, w)| w * pdf(c + 0.5 * dx * x)).sum::<f64>() * 0.5 * dx
                }
            }
        })
        .collect();
    if let Some(k) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::NonFinite(format!("pdf weight {} at cell {k}", weights[k])));
    }
    let z2: f64 = weights.iter().sum();
    if z2 < 0.5 {
        return invalid(format!("box holds mass {z2} < 1/2"));
    }
    Ok(Qsample1d { a, b, n_bits, weights, z2 })
}

/// Product-law qsample stored as its one-dimensional factors.
#[derive(Clone, Debug)]
pub struct DiscreteQsample {
    pub dims: Vec<Qsample1d>,
}

impl DiscreteQsample {
    pub fn product(dims: Vec<Qsample1d>) -> Result<Self> {
        if dims.is_empty() {
            return invalid("need at least one dimension");
        }
        Ok(DiscreteQsample { dims })
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().map(|q| q.n()).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn z2(&self) -> f64 {
        self.dims.iter().map(|q| q.z2).product()
    }

    /// Multi-index of flat cell `j`, first dimension slowest.
    pub fn index(&self, mut j: usize) -> Vec<usize> {
        let mut out = vec![0; self.d()];
        for (o, q) in out.iter_mut().zip(&self.dims).rev() {
            *o = j % q.n();
            j /= q.n();
        }
        out
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        self.index(j).iter().zip(&self.dims).map(|(&k, q)| q.a + k as f64 * q.dx()).collect()
    }

    pub fn probability(&self, j: usize) -> f64 {
        self.index(j).iter().zip(&self.dims).map(|(&k, q)| q.weights[k] / q.z2).product()
    }

    /// Full normalized amplitude vector; refuses more than 2²² cells.
    pub fn tensor(&self) -> Result<Vec<f64>> {
        if self.len() > 1 << 22 {
            return invalid("tensor too large");
        }
        Ok((0..self.len()).map(|j| self.probability(j).sqrt()).collect())
    }
}

/// |0⟩-branch probability ã of an amplitude encoder, with the scale that
/// maps it back to a price.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudeEncoder {
    pub amplitude: f64,
    pub scale: f64,
    pub label: String,
}

impl AmplitudeEncoder {
    pub fn price(&self) -> f64 {
        self.scale * self.amplitude
    }
}

/// ã = Σ_j (f_j / scale)·|ψ_j|². `values` follows the flat cell order of
/// [`DiscreteQsample::index`].
pub fn encode_payoff_sum(q: &DiscreteQsample, values: &[f64], scale: f64, label: &str) -> Result<AmplitudeEncoder> {
    if values.len() != q.len() {
        return invalid(format!("expected {} values, got {}", q.len(), values.len()));
    }
    if !(scale > 0.0) {
        return invalid("scale must be > 0");
    }
    let mut a = 0.0;
    for (j, &f) in values.iter().enumerate() {
        let r = f / scale;
        if !(0.0..=1.0).contains(&r) {
            return invalid(format!("cell {j} at {:?}: f/scale = {r} outside [0, 1]", q.point(j)));
        }
        a += r * q.probability(j);
    }
    Ok(AmplitudeEncoder { amplitude: a.clamp(0.0, 1.0), scale, label: label.to_string() })
}

/// Evaluates `f` at the cell points and encodes with scale max f.
pub fn encode_payoff_fn(q: &DiscreteQsample, f: &(dyn Fn(&[f64]) -> f64 + Sync), label: &str) -> Result<AmplitudeEncoder> {
    let values: Vec<f64> = (0..q.len()).into_par_iter().map(|j| f(&q.point(j))).collect();
    let scale = values.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(AmplitudeEncoder { amplitude: 0.0, scale: 1.0, label: label.to_string() });
    }
    encode_payoff_sum(q, &values, scale, label)
}

/// sin²(Mπδ) / (M² sin²(πδ)), equal to 1 at integer δ.
fn fejer(m: f64, delta: f64) -> f64 {
    let r = delta - delta.round();
    if r.abs() < 1e-9 {
        return 1.0 - (m * m - 1.0) * (PI * r).powi(2) / 3.0;
    }
    ((m * PI * r).sin() / (m * (PI * r).sin())).powi(2)
}

/// Outcome law of canonical phase-estimation amplitude estimation with
/// M = 2^m grid points on a known amplitude.
#[derive(Clone, Copy, Debug)]
pub struct QaeDistribution {
    pub amplitude: f64,
    pub m_bits: u32,
    theta: f64,
}

impl QaeDistribution {
    pub fn new(amplitude: f64, m_bits: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) {
            return invalid("amplitude must lie in [0, 1]");
        }
        if m_bits == 0 || m_bits > 40 {
            return invalid("m_bits must be in 1..=40");
        }
        Ok(QaeDistribution { amplitude, m_bits, theta: amplitude.sqrt().asin() / PI })
    }

    pub fn grid(&self) -> usize {
        1 << self.m_bits
    }

    /// Grover calls used: M − 1.
    pub fn queries(&self) -> u64 {
        (1u64 << self.m_bits) - 1
    }

    pub fn prob(&self, y: usize) -> f64 {
        let m = self.grid() as f64;
        let t = y as f64 / m;
        0.5 * (fejer(m, t - self.theta) + fejer(m, t + self.theta))
    }

    pub fn estimate(&self, y: usize) -> f64 {
        (PI * y as f64 / self.grid() as f64).sin().powi(2)
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.grid()).map(|y| self.prob(y)).collect()
    }

    /// (E[ã̂], E[(ã̂ − ã)²]) by summing over all outcomes.
    pub fn exact_moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut mse = 0.0;
        for y in 0..self.grid() {
            let p = self.prob(y);
            let e = self.estimate(y);
            mean += p * e;
            mse += p * (e - self.amplitude).powi(2);
        }
        (mean, mse)
    }

    /// Draws an outcome: picks one of the two eigenphase branches, then walks
    /// outward from its peak accumulating the branch kernel.
    pub fn sample(&self, stream: &mut RngStream) -> usize {
        let m = self.grid();
        let mf = m as f64;
        let sign = if stream.uniform() < 0.5 { -1.0 } else { 1.0 };
        let u = stream.uniform();
        let c = sign * self.theta * mf;
        let base = c.floor() as i64;
        let mut acc = 0.0;
        let mut last = 0;
        for j in 0..m as i64 {
            let off = if j % 2 == 1 { (j + 1) / 2 } else { -j / 2 };
            let y = (base + off).rem_euclid(m as i64) as usize;
            acc += fejer(mf, (base + off) as f64 / mf - sign * self.theta);
            last = y;
            if acc > u {
                return y;
            }
        }
        last
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QaeResult {
    pub estimate: f64,
    pub outcome: usize,
    pub queries: u64,
}

pub fn qae_estimate(amplitude: f64, m_bits: u32, stream: &mut RngStream) -> Result<QaeResult> {
    let dist = QaeDistribution::new(amplitude, m_bits)?;
    let y = dist.sample(stream);
    Ok(QaeResult { estimate: dist.estimate(y), outcome: y, queries: dist.queries() })
}

/// Smallest m with 2^m ≥ budget + 1.
pub fn bits_for_budget(budget: u64) -> u32 {
    64 - budget.leading_zeros()
}

/// The accuracy QAE guarantees with probability ≥ 8/π².
pub fn qae_error_bound(m_bits: u32) -> f64 {
    let m = (1u64 << m_bits) as f64;
    PI / m + PI * PI / (m * m)
}

/// Chebyshev interpolant on [lo, hi] through first-kind nodes.
#[derive(Clone, Debug)]
pub struct Chebyshev {
    pub lo: f64,
    pub hi: f64,
    pub coef: Vec<f64>,
}

impl Chebyshev {
    pub fn interpolate(f: &dyn Fn(f64) -> f64, degree: usize, lo: f64, hi: f64) -> Self {
        let n = degree + 1;
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let t = (PI * (k as f64 + 0.5) / n as f64).cos();
                f(lo + 0.5 * (t + 1.0) * (hi - lo))
            })
            .collect();
        let coef = (0..n)
            .map(|j| {
                let s: f64 = vals.iter().enumerate().map(|(k, v)| v * (PI * j as f64 * (k as f64 + 0.5) / n as f64).cos()).sum();
                s * if j == 0 { 1.0 } else { 2.0 } / n as f64
            })
            .collect();
        Chebyshev { lo, hi, coef }
    }

    pub fn degree(&self) -> usize {
        self.coef.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0;
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coef.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coef[0]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatePrepReport {
    pub degree: usize,
    /// sup over [0, sin 1] of |P(y) − √p(a + (b−a) arcsin y)|
    pub uniform_error: f64,
    pub tvd: f64,
    pub z_p: f64,
    /// √(Σ P(sin(k/N))² / N)
    pub filling_fraction: f64,
    pub amplification_cost: f64,
}

impl StatePrepReport {
    /// Uniform error below which the TVD is guaranteed ≤ eps.
    pub fn delta_for(&self, eps: f64, width: f64) -> f64 {
        eps * self.z_p.powi(4) / (width * width)
    }
}

/// Fits √p(a + (b−a) arcsin y) on [0, sin 1] and compares the induced
/// computational-basis distribution with the left-endpoint qsample.
pub fn stateprep_fidelity(pdf: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64, n_bits: u32, degree: usize) -> Result<StatePrepReport> {
    if degree < 1 {
        return invalid("degree must be >= 1");
    }
    let q = build_qsample(pdf, a, b, n_bits, QsampleMode::LeftEndpoint)?;
    let g = |y: f64| pdf(a + (b - a) * y.clamp(0.0, 1.0).asin()).max(0.0).sqrt();
    let y1 = 1f64.sin();
    let poly = Chebyshev::interpolate(&g, degree, 0.0, y1);
    let n = q.n();
    let approx: Vec<f64> = (0..n).map(|k| poly.eval((k as f64 / n as f64).sin())).collect();
    let mut err = approx.iter().enumerate().map(|(k, v)| (v - g((k as f64 / n as f64).sin())).abs()).fold(0.0, f64::max);
    for i in 0..=4096 {
        let y = y1 * i as f64 / 4096.0;
        err = err.max((poly.eval(y) - g(y)).abs());
    }
    let s2: f64 = approx.iter().map(|v| v * v).sum();
    let tvd = 0.5 * approx.iter().zip(&q.weights).map(|(v, w)| (v * v / s2 - w / q.z2).abs()).sum::<f64>();
    let z_p = q.z2.sqrt();
    Ok(StatePrepReport {
        degree,
        uniform_error: err,
        tvd,
        z_p,
        filling_fraction: (s2 / n as f64).sqrt(),
        amplification_cost: 1.0 / z_p,
    })
}

/// Smallest degree ≤ `max_degree` whose uniform error is ≤ `delta`.
pub fn required_degree(pdf: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64, delta: f64, max_degree: usize) -> Option<usize> {
    let g = |y: f64| pdf(a + (b - a) * y.clamp(0.0, 1.0).asin()).max(0.0).sqrt();
    let y1 = 1f64.sin();
    let probe: Vec<f64> = (0..=2048).map(|i| y1 * i as f64 / 2048.0).collect();
    let gv: Vec<f64> = probe.iter().map(|&y| g(y)).collect();
    (1..=max_degree).find(|&d| {
        let p = Chebyshev::interpolate(&g, d, 0.0, y1);
        probe.iter().zip(&gv).all(|(&y, v)| (p.eval(y) - v).abs() <= delta)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::normal_pdf;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_qsample_is_flat() {
        let q = build_qsample(&|_| 1.0, 0.0, 1.0, 3, QsampleMode::LeftEndpoint).unwrap();
        for a in q.amplitudes() {
            assert_abs_diff_eq!(a, 1.0 / 8f64.sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn gaussian_mass_on_box() {
        for mode in [QsampleMode::LeftEndpoint, QsampleMode::CellMass] {
            let q = build_qsample(&normal_pdf, -6.0, 6.0, 10, mode).unwrap();
            assert_abs_diff_eq!(q.z2, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn left_endpoint_error_halves_per_bit() {
        // Exp(1) on [0, 20]: the jump at 0 gives a first-order rule.
        let p = |x: f64| (-x).exp();
        let mass = 1.0 - (-20f64).exp();
        let errs: Vec<f64> = (8..12).map(|n| (build_qsample(&p, 0.0, 20.0, n, QsampleMode::LeftEndpoint).unwrap().z2 - mass).abs()).collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 0.05, "{errs:?}");
        }
    }

    #[test]
    fn small_mass_rejected() {
        assert!(build_qsample(&normal_pdf, 3.0, 9.0, 4, QsampleMode::CellMass).is_err());
    }

    #[test]
    fn encoder_constant_and_null() {
        let q = DiscreteQsample::product(vec![build_qsample(&normal_pdf, -5.0, 5.0, 8, QsampleMode::LeftEndpoint).unwrap()]).unwrap();
        let n = q.len();
        assert_abs_diff_eq!(encode_payoff_sum(&q, &vec![3.0; n], 3.0, "c").unwrap().amplitude, 1.0, epsilon = 1e-12);
        assert_eq!(encode_payoff_sum(&q, &vec![0.0; n], 3.0, "z").unwrap().amplitude, 0.0);
        let mut bad = vec![1.0; n];
        bad[17] = 4.0;
        let e = encode_payoff_sum(&q, &bad, 3.0, "x").unwrap_err();
        assert!(e.to_string().contains("cell 17"));
    }

    #[test]
    fn encoder_half_normal_mean() {
        let q = DiscreteQsample::product(vec![build_qsample(&normal_pdf, -5.0, 5.0, 12, QsampleMode::LeftEndpoint).unwrap()]).unwrap();
        let enc = encode_payoff_fn(&q, &|x| x[0].max(0.0), "half").unwrap();
        let direct: f64 = (0..q.len()).map(|j| q.point(j)[0].max(0.0) * q.probability(j)).sum();
        assert_abs_diff_eq!(enc.price(), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.price(), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn qae_on_grid_and_null() {
        let a = (PI * 3.0 / 8.0).sin().powi(2);
        let d = QaeDistribution::new(a, 3).unwrap();
        let mut s = RngStream::new(1, 0);
        for _ in 0..100 {
            assert_abs_diff_eq!(d.estimate(d.sample(&mut s)), a, epsilon = 1e-15);
        }
        let z = QaeDistribution::new(0.0, 5).unwrap();
        assert_abs_diff_eq!(z.prob(0), 1.0, epsilon = 1e-15);
        assert_eq!(qae_estimate(0.0, 5, &mut s).unwrap().estimate, 0.0);
        assert_eq!(d.queries(), 7);
    }

    #[test]
    fn qae_probabilities_sum_to_one_and_bound_holds() {
        for &a in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            for m in [3, 6, 9] {
                let d = QaeDistribution::new(a, m).unwrap();
                let p = d.probs();
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                let bound = qae_error_bound(m);
                let within: f64 = (0..d.grid()).filter(|&y| (d.estimate(y) - a).abs() <= bound).map(|y| p[y]).sum();
                assert!(within >= 8.0 / (PI * PI), "a={a} m={m} {within}");
            }
        }
    }

    #[test]
    fn qae_sampler_matches_law() {
        let d = QaeDistribution::new(0.3, 4).unwrap();
        let mut s = RngStream::new(2, 0);
        let n = 200_000;
        let mut counts = vec![0usize; 16];
        for _ in 0..n {
            counts[d.sample(&mut s)] += 1;
        }
        for (y, c) in counts.iter().enumerate() {
            let p = d.prob(y);
            let f = *c as f64 / n as f64;
            assert!((f - p).abs() < 5.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-6, "y={y} {f} {p}");
        }
    }

    #[test]
    fn budget_bits() {
        assert_eq!(bits_for_budget(0), 0);
        assert_eq!(bits_for_budget(1), 1);
        assert_eq!(bits_for_budget(7), 3);
        assert_eq!(bits_for_budget(8), 4);
    }

    #[test]
    fn chebyshev_reproduces_polynomials() {
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
        let c = Chebyshev::interpolate(&f, 3, -1.0, 2.0);
        for x in [-1.0, 0.1, 1.7, 2.0] {
            assert_abs_diff_eq!(c.eval(x), f(x), epsilon = 1e-13);
        }
    }

    #[test]
    fn stateprep_exact_for_squared_polynomial() {
        // √p(arcsin y) = c(1 + y) on [0, 1].
        let q = |x: f64| (1.0 + x.sin()).powi(2);
        let (gx, gw) = gauss_legendre(32);
        let z: f64 = gx.iter().zip(&gw).map(|(x, w)| w * q(0.5 * (x + 1.0))).sum::<f64>() * 0.5;
        let p = move |x: f64| q(x) / z;
        let r = stateprep_fidelity(&p, 0.0, 1.0, 8, 1).unwrap();
        assert!(r.tvd < 1e-10, "{}", r.tvd);
        assert!(r.uniform_error < 1e-12);
    }

    #[test]
    fn stateprep_gaussian_contract() {
        let b = 4.0;
        for deg in [6, 10, 16, 24] {
            let r = stateprep_fidelity(&normal_pdf, -b, b, 10, deg).unwrap();
            for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                if r.uniform_error <= r.delta_for(eps, 2.0 * b) {
                    assert!(r.tvd <= eps, "deg {deg} eps {eps}: {}", r.tvd);
                }
            }
            assert_abs_diff_eq!(r.amplification_cost, 1.0 / r.z_p, epsilon = 0.0);
        }
        assert!(stateprep_fidelity(&normal_pdf, -b, b, 10, 0).is_err());
    }
}
