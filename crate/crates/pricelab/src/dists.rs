//! Primitive one-dimensional laws: standard Gaussian, central and
//! non-central χ².
//!
//! Non-centrality follows the conventional λ (mean r + λ). The sampler draws
//! `Y + (√λ + Z)²` with `Y ~ χ²_{r−1}` and `Z ~ N(0,1)`.

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use std::f64::consts::{LN_2, PI};

pub fn sample_gaussian(stream: &mut RngStream, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return invalid("n must be >= 1");
    }
    let mut v = vec![0.0; n];
    stream.fill_normal(&mut v);
    Ok(v)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquareSpec {
    pub dof: f64,
    pub noncentrality: f64,
}

impl ChiSquareSpec {
    pub fn central(dof: f64) -> Self {
        ChiSquareSpec { dof, noncentrality: 0.0 }
    }

    pub fn new(dof: f64, noncentrality: f64) -> Result<Self> {
        let s = ChiSquareSpec { dof, noncentrality };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dof.is_finite() && self.dof >= 1.0) {
            return invalid(format!("chi-square dof must be >= 1, got {}", self.dof));
        }
        if !(self.noncentrality.is_finite() && self.noncentrality >= 0.0) {
            return invalid("noncentrality must be >= 0");
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.dof + self.noncentrality
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.dof + 4.0 * self.noncentrality
    }
}

/// Central χ²_r draw via Gamma(r/2, 2). `r = 0` gives the point mass at 0.
#[inline]
pub fn sample_central_chi2(r: f64, stream: &mut RngStream) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    Gamma::new(r / 2.0, 2.0).expect("valid gamma").sample(stream)
}

/// Sampler with the gamma law prebuilt, for hot loops with fixed dof.
#[derive(Clone, Copy, Debug)]
pub struct CentralChi2 {
    gamma: Option<Gamma<f64>>,
}

impl CentralChi2 {
    pub fn new(r: f64) -> Self {
        CentralChi2 { gamma: (r > 0.0).then(|| Gamma::new(r / 2.0, 2.0).expect("valid gamma")) }
    }

    #[inline]
    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        self.gamma.map_or(0.0, |g| g.sample(stream))
    }
}

pub fn sample_chi2(spec: &ChiSquareSpec, stream: &mut RngStream) -> Result<f64> {
    spec.validate()?;
    if spec.noncentrality == 0.0 {
        return Ok(sample_central_chi2(spec.dof, stream));
    }
    let y = sample_central_chi2(spec.dof - 1.0, stream);
    let z = stream.normal();
    let s = spec.noncentrality.sqrt() + z;
    Ok(y + s * s)
}

fn central_log_pdf(r: f64, x: f64) -> f64 {
    let k = r / 2.0;
    if x == 0.0 {
        return if k < 1.0 {
            f64::INFINITY
        } else if k == 1.0 {
            -LN_2
        } else {
            f64::NEG_INFINITY
        };
    }
    (k - 1.0) * x.ln() - x / 2.0 - k * LN_2 - ln_gamma(k)
}

/// Poisson weights e^{−λ/2}(λ/2)^j/j!, summed until the remaining mass is
/// below 1e-17.
fn poisson_terms(lambda: f64) -> impl Iterator<Item = (usize, f64)> {
    let m = lambda / 2.0;
    let jmax = (m + 12.0 * m.sqrt() + 40.0).ceil() as usize;
    (0..=jmax).map(move |j| {
        let lw = -m + j as f64 * m.ln() - ln_gamma(j as f64 + 1.0);
        (j, lw.exp())
    })
}

pub fn log_pdf_chi2(spec: &ChiSquareSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    if x < 0.0 {
        return invalid("chi-square density needs x >= 0");
    }
    if spec.noncentrality == 0.0 {
        return Ok(central_log_pdf(spec.dof, x));
    }
    let s: f64 = poisson_terms(spec.noncentrality)
        .map(|(j, w)| w * central_log_pdf(spec.dof + 2.0 * j as f64, x).exp())
        .sum();
    Ok(s.ln())
}

pub fn pdf_chi2(spec: &ChiSquareSpec, x: f64) -> Result<f64> {
    Ok(log_pdf_chi2(spec, x)?.exp())
}

pub fn cdf_chi2(spec: &ChiSquareSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if spec.noncentrality == 0.0 {
        return Ok(gamma_lr(spec.dof / 2.0, x / 2.0));
    }
    Ok(poisson_terms(spec.noncentrality)
        .map(|(j, w)| w * gamma_lr(spec.dof / 2.0 + j as f64, x / 2.0))
        .sum())
}

/// Upper tail P[Y ≥ x] computed without cancellation.
pub fn sf_chi2(spec: &ChiSquareSpec, x: f64) -> Result<f64> {
    spec.validate()?;
    if x <= 0.0 {
        return Ok(1.0);
    }
    if spec.noncentrality == 0.0 {
        return Ok(gamma_ur(spec.dof / 2.0, x / 2.0));
    }
    Ok(poisson_terms(spec.noncentrality)
        .map(|(j, w)| w * gamma_ur(spec.dof / 2.0 + j as f64, x / 2.0))
        .sum())
}

/// Chernoff bound with λ = 1/4: P[Y ≥ b] ≤ exp(−b/4 + ((r+2)/2) ln 2).
pub fn chi2_tail_bound(r: f64, b: f64) -> f64 {
    (-b / 4.0 + (r + 2.0) / 2.0 * LN_2).exp()
}

/// ∫_α^∞ e^{my} p_r(y) dy = (1−2m)^{−r/2} P[Y ≥ (1−2m)α] for m < 1/2.
pub fn chi2_shift_integral(r: f64, m: f64, alpha: f64) -> Result<f64> {
    if m >= 0.5 {
        return Err(Error::InvalidParam(format!("shift m = {m} must be < 1/2")));
    }
    Ok((1.0 - 2.0 * m).powf(-r / 2.0) * sf_chi2(&ChiSquareSpec::central(r), (1.0 - 2.0 * m) * alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_rejects_empty() {
        assert!(sample_gaussian(&mut RngStream::new(0, 0), 0).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let v = sample_gaussian(&mut RngStream::new(1, 0), 1_000_000).unwrap();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 0.004, "mean {m}");
        assert!((var - 1.0).abs() < 0.006, "var {var}");
    }

    #[test]
    fn pdf_examples() {
        let c2 = ChiSquareSpec::central(2.0);
        assert_abs_diff_eq!(pdf_chi2(&c2, 0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pdf_chi2(&c2, 2.0).unwrap(), (-1.0f64).exp() / 2.0, epsilon = 1e-15);
        assert_eq!(pdf_chi2(&ChiSquareSpec::central(4.0), 0.0).unwrap(), 0.0);
        assert!(pdf_chi2(&c2, -1.0).is_err());
    }

    #[test]
    fn pdf_matches_cdf_derivative() {
        for &(r, l) in &[(2.0, 0.0), (3.0, 0.0), (5.0, 1.0), (9.0, 4.0), (2.5, 0.7)] {
            let s = ChiSquareSpec::new(r, l).unwrap();
            for &x in &[0.3, 1.0, 2.5, 7.0, 15.0] {
                let h = 1e-4;
                let num = (cdf_chi2(&s, x + h).unwrap() - cdf_chi2(&s, x - h).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(num, pdf_chi2(&s, x).unwrap(), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn pdf_sup_norm_at_most_one() {
        for &r in &[2.0, 2.2, 3.0, 4.0, 7.5] {
            let s = ChiSquareSpec::central(r);
            let mx = (0..20_000).map(|i| pdf_chi2(&s, i as f64 * 1e-3).unwrap()).fold(0.0, f64::max);
            assert!(mx <= 1.0);
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for &(r, l) in &[(2.0, 0.0), (3.0, 1.0), (9.0, 4.0)] {
            let s = ChiSquareSpec::new(r, l).unwrap();
            // Simpson on [0, 200] with an x = u² substitution near 0.
            let n = 200_000;
            let umax = 200f64.sqrt();
            let h = umax / n as f64;
            let f = |u: f64| 2.0 * u * pdf_chi2(&s, u * u).unwrap();
            let mut acc = f(0.0) + f(umax);
            for i in 1..n {
                acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert_abs_diff_eq!(acc * h / 3.0, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn tail_bound_examples() {
        let exact = sf_chi2(&ChiSquareSpec::central(2.0), 40.0).unwrap();
        assert_abs_diff_eq!(exact, (-20.0f64).exp(), epsilon = 1e-20);
        assert!((exact - 2.06e-9).abs() < 1e-11);
        assert!(chi2_tail_bound(2.0, 40.0) >= exact);
        for r in [1.0, 2.0, 5.0, 30.0] {
            assert!(chi2_tail_bound(r, 0.0) >= 1.0);
        }
        assert!(chi2_tail_bound(4.0, 20.0) >= sf_chi2(&ChiSquareSpec::central(4.0), 20.0).unwrap());
    }

    #[test]
    fn tail_bound_dominates_on_grid() {
        let mut violations = 0;
        for &r in &[2.0, 3.0, 5.0, 10.0] {
            for &b in &[0.5, 5.0, 20.0, 50.0, 120.0] {
                if chi2_tail_bound(r, b) < sf_chi2(&ChiSquareSpec::central(r), b).unwrap() {
                    violations += 1;
                }
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn shift_identity_matches_quadrature() {
        let (r, m, alpha) = (4.0, 0.2, 3.0);
        let s = ChiSquareSpec::central(r);
        let n = 400_000;
        let (a, b) = (alpha, 200.0);
        let h = (b - a) / n as f64;
        let q: f64 = (0..n)
            .map(|i| {
                let y = a + (i as f64 + 0.5) * h;
                (m * y).exp() * pdf_chi2(&s, y).unwrap()
            })
            .sum::<f64>()
            * h;
        assert_abs_diff_eq!(chi2_shift_integral(r, m, alpha).unwrap(), q, epsilon = 1e-7);
    }

    #[test]
    fn sampler_moments() {
        let mut st = RngStream::new(5, 1);
        let spec = ChiSquareSpec::new(3.0, 2.0).unwrap();
        let n = 200_000;
        let v: Vec<f64> = (0..n).map(|_| sample_chi2(&spec, &mut st).unwrap()).collect();
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se_m = (spec.variance() / n as f64).sqrt();
        assert!((m - spec.mean()).abs() < 4.0 * se_m);
        // Var of the sample variance needs the 4th central moment; use a loose 4% band.
        assert!((var / spec.variance() - 1.0).abs() < 0.04);
        assert!(sample_chi2(&ChiSquareSpec { dof: 0.5, noncentrality: 0.0 }, &mut st).is_err());
    }
}
