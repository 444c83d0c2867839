//! Euler–Maruyama and Milstein steppers for Itô SDEs dX = μ(X)dt + σ(X)dW,
//! and coupled fine/coarse path generation for multilevel estimators.

use crate::core::PathBatch;
use crate::error::{invalid, Error, Result};
use crate::levy::{default_sampler, LevySampler};
use crate::rng::{par_chunks, RngStream};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `f(x, out)` writing a flat vector or matrix.
pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Time-homogeneous Itô SDE in `d` dimensions driven by `m` Brownian motions.
/// `sigma` writes the d×m matrix row-major; `sigma_jac` writes
/// ∂σ_ik/∂x_l at index (i·m + k)·d + l.
#[derive(Clone)]
pub struct SdeSpec {
    pub d: usize,
    pub m: usize,
    pub mu: VecFn,
    pub sigma: VecFn,
    pub sigma_jac: VecFn,
    /// Disjoint pairs of noise indices whose Lévy areas are sampled.
    pub pairing: Option<Vec<(usize, usize)>>,
    pub x0: Vec<f64>,
}

impl std::fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeSpec").field("d", &self.d).field("m", &self.m).field("pairing", &self.pairing).finish()
    }
}

impl SdeSpec {
    pub fn new(d: usize, m: usize, mu: VecFn, sigma: VecFn, sigma_jac: VecFn, pairing: Option<Vec<(usize, usize)>>, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != d || d == 0 || m == 0 {
            return invalid("dimension mismatch");
        }
        if let Some(p) = &pairing {
            let mut seen = vec![false; m];
            for &(j, k) in p {
                if j == k || j >= m || k >= m || seen[j] || seen[k] {
                    return invalid(format!("pairing ({j}, {k}) is not a disjoint pair of noise indices"));
                }
                seen[j] = true;
                seen[k] = true;
            }
        }
        Ok(SdeSpec { d, m, mu, sigma, sigma_jac, pairing, x0 })
    }

    /// dX = μX dt + σX dW, scalar.
    pub fn gbm(mu: f64, sigma: f64, x0: f64) -> Self {
        Self::gbm_diag(vec![mu], vec![sigma], vec![x0])
    }

    /// Independent GBMs with diagonal diffusion.
    pub fn gbm_diag(mu: Vec<f64>, sigma: Vec<f64>, x0: Vec<f64>) -> Self {
        let d = x0.len();
        let (m1, s1, s2) = (mu.clone(), sigma.clone(), sigma);
        SdeSpec {
            d,
            m: d,
            mu: Arc::new(move |x, o| o.iter_mut().zip(x).zip(&m1).for_each(|((o, x), m)| *o = m * x)),
            sigma: Arc::new(move |x, o| {
                o.fill(0.0);
                for i in 0..d {
                    o[i * d + i] = s1[i] * x[i];
                }
            }),
            sigma_jac: Arc::new(move |_, o| {
                o.fill(0.0);
                for i in 0..d {
                    o[(i * d + i) * d + i] = s2[i];
                }
            }),
            pairing: None,
            x0,
        }
    }

    /// Zero drift, σ_ik(x) = b_ik + Σ_l c_ikl x_l.
    pub fn affine(d: usize, m: usize, b: Vec<f64>, c: Vec<f64>, pairing: Option<Vec<(usize, usize)>>, x0: Vec<f64>) -> Result<Self> {
        if b.len() != d * m || c.len() != d * m * d {
            return invalid("affine coefficient shapes");
        }
        let (b1, c1, c2) = (b, c.clone(), c);
        Self::new(
            d,
            m,
            Arc::new(|_, o| o.fill(0.0)),
            Arc::new(move |x, o| {
                for ik in 0..d * m {
                    o[ik] = b1[ik] + (0..d).map(|l| c1[ik * d + l] * x[l]).sum::<f64>();
                }
            }),
            Arc::new(move |_, o| o.copy_from_slice(&c2)),
            pairing,
            x0,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Em,
    Milstein,
}

/// Lévy areas A_jk = I_jk − I_kj for the listed pairs over one step.
#[derive(Clone, Copy, Debug)]
pub struct LevyAreas<'a> {
    pub pairs: &'a [(usize, usize)],
    pub values: &'a [f64],
}

impl LevyAreas<'_> {
    fn get(&self, j: usize, k: usize) -> Option<f64> {
        self.pairs.iter().zip(self.values).find_map(|(&(a, b), &v)| {
            if (a, b) == (j, k) {
                Some(v)
            } else if (a, b) == (k, j) {
                Some(-v)
            } else {
                None
            }
        })
    }
}

/// Reusable buffers for stepping one SDE.
pub struct Stepper<'a> {
    spec: &'a SdeSpec,
    mu: Vec<f64>,
    sig: Vec<f64>,
    jac: Vec<f64>,
    /// Lévy-area lookups performed so far.
    pub levy_reads: usize,
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a SdeSpec) -> Self {
        let (d, m) = (spec.d, spec.m);
        Stepper { spec, mu: vec![0.0; d], sig: vec![0.0; d * m], jac: vec![0.0; d * m * d], levy_reads: 0 }
    }

    fn eval_coeffs(&mut self, x: &[f64]) -> Result<()> {
        (self.spec.mu)(x, &mut self.mu);
        (self.spec.sigma)(x, &mut self.sig);
        check_finite(&self.mu, "drift")?;
        check_finite(&self.sig, "diffusion")
    }

    pub fn em(&mut self, x: &[f64], h: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        self.eval_coeffs(x)?;
        let m = self.spec.m;
        for i in 0..self.spec.d {
            out[i] = x[i] + self.mu[i] * h + (0..m).map(|k| self.sig[i * m + k] * dw[k]).sum::<f64>();
        }
        Ok(())
    }

    /// Itô–Milstein: adds Σ_{j,k} L^jσ_ik I_jk with I_jj = ½(ΔW_j² − h) and,
    /// for j ≠ k, I_jk = ½(ΔW_jΔW_k + A_jk). Areas are read only where
    /// L^jσ_ik ≠ L^kσ_ij.
    pub fn milstein(&mut self, x: &[f64], h: f64, dw: &[f64], areas: Option<&LevyAreas>, out: &mut [f64]) -> Result<()> {
        self.em(x, h, dw, out)?;
        (self.spec.sigma_jac)(x, &mut self.jac);
        check_finite(&self.jac, "diffusion derivative")?;
        let (d, m) = (self.spec.d, self.spec.m);
        let lop = |j: usize, i: usize, k: usize, sig: &[f64], jac: &[f64]| -> f64 {
            (0..d).map(|l| sig[l * m + j] * jac[(i * m + k) * d + l]).sum()
        };
        for i in 0..d {
            let mut add = 0.0;
            for j in 0..m {
                add += lop(j, i, j, &self.sig, &self.jac) * 0.5 * (dw[j] * dw[j] - h);
                for k in j + 1..m {
                    let ljk = lop(j, i, k, &self.sig, &self.jac);
                    let lkj = lop(k, i, j, &self.sig, &self.jac);
                    add += 0.5 * (ljk + lkj) * dw[j] * dw[k];
                    let anti = ljk - lkj;
                    if anti.abs() > 1e-12 * (ljk.abs() + lkj.abs()) {
                        let a = areas.and_then(|a| a.get(j, k)).ok_or(Error::MissingLevyArea(j, k))?;
                        self.levy_reads += 1;
                        add += 0.5 * anti * a;
                    }
                }
            }
            out[i] += add;
        }
        check_finite(out, "state")
    }
}

pub fn em_step(spec: &SdeSpec, x: &[f64], h: f64, dw: &[f64]) -> Result<Vec<f64>> {
    if !(h > 0.0) || dw.len() != spec.m {
        return invalid("need h > 0 and one Brownian increment per noise");
    }
    let mut out = vec![0.0; spec.d];
    Stepper::new(spec).em(x, h, dw, &mut out)?;
    Ok(out)
}

pub fn milstein_step(spec: &SdeSpec, x: &[f64], h: f64, dw: &[f64], areas: Option<&LevyAreas>) -> Result<Vec<f64>> {
    if !(h > 0.0) || dw.len() != spec.m {
        return invalid("need h > 0 and one Brownian increment per noise");
    }
    let mut out = vec![0.0; spec.d];
    Stepper::new(spec).milstein(x, h, dw, areas, &mut out)?;
    Ok(out)
}

/// Fine paths at h_l = h₀2^{−l} and, for l ≥ 1, coarse paths at 2h_l driven by
/// the pair-summed fine increments. Paths hold the `t_mon` monitoring points
/// spaced h₀.
#[derive(Clone, Debug)]
pub struct CoupledPaths {
    pub level: usize,
    pub fine: PathBatch,
    pub coarse: Option<PathBatch>,
    pub levy_reads: usize,
    /// Fine steps per path.
    pub steps: usize,
}

/// Draws one fine step of noise: Gaussians, with paired components and their
/// areas taken jointly from the Lévy sampler when Milstein needs them.
pub(crate) fn draw_noise(spec: &SdeSpec, scheme: Scheme, lev: Option<&LevySampler>, h: f64, s: &mut RngStream, dw: &mut [f64], areas: &mut [f64]) -> Result<()> {
    let sq = h.sqrt();
    match (scheme, &spec.pairing, lev) {
        (Scheme::Milstein, Some(pairs), Some(lev)) => {
            let mut paired = vec![false; spec.m];
            for (p, &(j, k)) in pairs.iter().enumerate() {
                let (a, b, area) = lev.sample_joint(h, s)?;
                dw[j] = a;
                dw[k] = b;
                areas[p] = area;
                paired[j] = true;
                paired[k] = true;
            }
            for (k, w) in dw.iter_mut().enumerate() {
                if !paired[k] {
                    *w = sq * s.normal();
                }
            }
        }
        _ => {
            for w in dw.iter_mut() {
                *w = sq * s.normal();
            }
        }
    }
    Ok(())
}

fn simulate_chunk(spec: &SdeSpec, scheme: Scheme, t_mon: usize, h0: f64, level: usize, n: usize, s: &mut RngStream) -> Result<CoupledPaths> {
    let (d, m) = (spec.d, spec.m);
    let sub = 1usize << level;
    let hf = h0 / sub as f64;
    let pairs: Vec<(usize, usize)> = spec.pairing.clone().unwrap_or_default();
    let lev = if scheme == Scheme::Milstein && !pairs.is_empty() { Some(default_sampler()?) } else { None };
    let mut fine = PathBatch::new(n, t_mon, d);
    let mut coarse = (level > 0).then(|| PathBatch::new(n, t_mon, d));
    let mut st = Stepper::new(spec);
    let mut xf = spec.x0.clone();
    let mut xc = spec.x0.clone();
    let mut tmp = vec![0.0; d];
    let mut dw = [vec![0.0; m], vec![0.0; m]];
    let mut ar = [vec![0.0; pairs.len()], vec![0.0; pairs.len()]];
    let mut dwc = vec![0.0; m];
    let mut arc = vec![0.0; pairs.len()];
    let step = |st: &mut Stepper, x: &mut Vec<f64>, tmp: &mut Vec<f64>, h: f64, dw: &[f64], ar: &[f64]| -> Result<()> {
        match scheme {
            Scheme::Em => st.em(x, h, dw, tmp)?,
            Scheme::Milstein => {
                let la = LevyAreas { pairs: &pairs, values: ar };
                st.milstein(x, h, dw, Some(&la), tmp)?
            }
        }
        std::mem::swap(x, tmp);
        Ok(())
    };
    for p in 0..n {
        xf.copy_from_slice(&spec.x0);
        xc.copy_from_slice(&spec.x0);
        for k in 0..t_mon {
            if level == 0 {
                draw_noise(spec, scheme, lev, hf, s, &mut dw[0], &mut ar[0])?;
                step(&mut st, &mut xf, &mut tmp, hf, &dw[0], &ar[0])?;
            } else {
                for _ in 0..sub / 2 {
                    for half in 0..2 {
                        draw_noise(spec, scheme, lev, hf, s, &mut dw[half], &mut ar[half])?;
                        step(&mut st, &mut xf, &mut tmp, hf, &dw[half], &ar[half])?;
                    }
                    for q in 0..m {
                        dwc[q] = dw[0][q] + dw[1][q];
                    }
                    for (q, &(j, kk)) in pairs.iter().enumerate() {
                        arc[q] = ar[0][q] + ar[1][q] + dw[0][j] * dw[1][kk] - dw[0][kk] * dw[1][j];
                    }
                    step(&mut st, &mut xc, &mut tmp, 2.0 * hf, &dwc, &arc)?;
                }
            }
            let o = (p * t_mon + k) * d;
            fine.values[o..o + d].copy_from_slice(&xf);
            if let Some(c) = coarse.as_mut() {
                c.values[o..o + d].copy_from_slice(&xc);
            }
        }
    }
    Ok(CoupledPaths { level, fine, coarse, levy_reads: st.levy_reads, steps: sub * t_mon })
}

/// Level-`l` paths (fine only at l = 0), in fixed chunks.
pub fn simulate_level(spec: &SdeSpec, scheme: Scheme, t_mon: usize, h0: f64, level: usize, stream: &RngStream, n: usize) -> Result<CoupledPaths> {
    if t_mon == 0 || !(h0 > 0.0) {
        return invalid("need t_mon >= 1 and h0 > 0");
    }
    let parts = par_chunks(n, stream, |r, s| simulate_chunk(spec, scheme, t_mon, h0, level, r.len(), s));
    let mut fine = Vec::new();
    let mut coarse = Vec::new();
    let mut reads = 0;
    for part in parts {
        let part = part?;
        reads += part.levy_reads;
        fine.push(part.fine);
        if let Some(c) = part.coarse {
            coarse.push(c);
        }
    }
    Ok(CoupledPaths {
        level,
        fine: PathBatch::concat(fine),
        coarse: (level > 0).then(|| PathBatch::concat(coarse)),
        levy_reads: reads,
        steps: (1 << level) * t_mon,
    })
}

pub fn simulate_coupled(spec: &SdeSpec, scheme: Scheme, t_mon: usize, h0: f64, level: usize, stream: &RngStream, n: usize) -> Result<CoupledPaths> {
    if level < 1 {
        return invalid("coupled simulation needs level >= 1");
    }
    simulate_level(spec, scheme, t_mon, h0, level, stream, n)
}

/// sup_k E|X̂(kh) − X(kh)|² for scalar GBM against its exact solution driven
/// by the same Brownian path, over [0, t_end].
pub fn strong_error_gbm(mu: f64, sigma: f64, x0: f64, t_end: f64, h: f64, scheme: Scheme, n: usize, stream: &RngStream) -> Result<f64> {
    let steps = (t_end / h).round() as usize;
    if steps == 0 {
        return invalid("h exceeds the horizon");
    }
    let spec = SdeSpec::gbm(mu, sigma, x0);
    let parts = par_chunks(n, stream, |r, s| -> Result<Vec<f64>> {
        let mut st = Stepper::new(&spec);
        let mut acc = vec![0.0; steps];
        let mut x = [x0];
        let mut out = [0.0];
        for _ in r {
            x[0] = x0;
            let mut w = 0.0;
            for (k, a) in acc.iter_mut().enumerate() {
                let dw = [h.sqrt() * s.normal()];
                w += dw[0];
                match scheme {
                    Scheme::Em => st.em(&x, h, &dw, &mut out)?,
                    Scheme::Milstein => st.milstein(&x, h, &dw, None, &mut out)?,
                }
                x[0] = out[0];
                let t = (k + 1) as f64 * h;
                let exact = x0 * ((mu - 0.5 * sigma * sigma) * t + sigma * w).exp();
                *a += (x[0] - exact).powi(2);
            }
        }
        Ok(acc)
    });
    let mut tot = vec![0.0; steps];
    for p in parts {
        for (t, v) in tot.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(tot.into_iter().fold(0.0, f64::max) / n as f64)
}

/// Least-squares slope of y on x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn frozen() -> SdeSpec {
        SdeSpec::affine(2, 2, vec![0.0; 4], vec![0.0; 8], None, vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn em_examples() {
        assert_eq!(em_step(&frozen(), &[1.0, 2.0], 0.1, &[0.3, -0.2]).unwrap(), vec![1.0, 2.0]);
        let g = SdeSpec::gbm(0.05, 0.2, 1.0);
        let x = em_step(&g, &[2.0], 0.01, &[0.1]).unwrap()[0];
        assert_abs_diff_eq!(x, 2.0 * (1.0 + 0.05 * 0.01 + 0.2 * 0.1), epsilon = 1e-15);
        let x = em_step(&g, &[2.0], 0.01, &[0.0]).unwrap()[0];
        assert_abs_diff_eq!(x, 2.0 * (1.0 + 0.05 * 0.01), epsilon = 1e-15);
    }

    #[test]
    fn milstein_scalar_gbm() {
        let g = SdeSpec::gbm(0.05, 0.2, 1.0);
        let (x, h, dw) = (2.0, 0.01, 0.13);
        let got = milstein_step(&g, &[x], h, &[dw], None).unwrap()[0];
        let want = x + 0.05 * x * h + 0.2 * x * dw + 0.5 * 0.04 * x * (dw * dw - h);
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
    }

    #[test]
    fn milstein_constant_sigma_is_em() {
        let s = SdeSpec::affine(2, 2, vec![0.3, 0.1, -0.2, 0.5], vec![0.0; 8], Some(vec![(0, 1)]), vec![0.0; 2]).unwrap();
        let x = [0.4, -0.1];
        let dw = [0.2, -0.3];
        let a = LevyAreas { pairs: &[(0, 1)], values: &[0.7] };
        assert_eq!(milstein_step(&s, &x, 0.05, &dw, Some(&a)).unwrap(), em_step(&s, &x, 0.05, &dw).unwrap());
    }

    #[test]
    fn commutative_pair_ignores_area() {
        let g = SdeSpec::gbm_diag(vec![0.0, 0.0], vec![0.2, 0.3], vec![1.0, 1.0]);
        let mut st = Stepper::new(&g);
        let x = [1.1, 0.9];
        let dw = [0.1, -0.05];
        let mut o1 = [0.0; 2];
        let mut o2 = [0.0; 2];
        st.milstein(&x, 0.01, &dw, Some(&LevyAreas { pairs: &[(0, 1)], values: &[1.0] }), &mut o1).unwrap();
        st.milstein(&x, 0.01, &dw, Some(&LevyAreas { pairs: &[(0, 1)], values: &[-1.0] }), &mut o2).unwrap();
        assert!((o1[0] - o2[0]).abs() < 1e-14 && (o1[1] - o2[1]).abs() < 1e-14);
        assert_eq!(st.levy_reads, 0);
    }

    #[test]
    fn noncommutative_without_area_errors() {
        // σ = [[1, 0], [0, x₀]]: L⁰σ₁₁ = 1 but L¹σ₁₀ = 0.
        let mut c = vec![0.0; 8];
        c[(1 * 2 + 1) * 2] = 1.0;
        let s = SdeSpec::affine(2, 2, vec![1.0, 0.0, 0.0, 0.0], c, None, vec![0.0; 2]).unwrap();
        match milstein_step(&s, &[0.5, 0.5], 0.01, &[0.1, 0.1], None) {
            Err(Error::MissingLevyArea(0, 1)) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coupling_is_exact_pair_sum() {
        // With σ = 0 the paths are deterministic Euler solutions.
        let s = SdeSpec::gbm(0.5, 0.0, 1.0);
        let c = simulate_coupled(&s, Scheme::Em, 1, 1.0, 3, &RngStream::new(1, 0), 10).unwrap();
        let f = c.fine.values[0];
        let g = c.coarse.unwrap().values[0];
        assert_abs_diff_eq!(f, (1.0 + 0.5 / 8.0f64).powi(8), epsilon = 1e-14);
        assert_abs_diff_eq!(g, (1.0 + 0.5 / 4.0f64).powi(4), epsilon = 1e-14);
    }

    #[test]
    fn coupled_brownian_increments_agree() {
        // Additive noise: terminal value is x0 + W(T) at every level.
        let s = SdeSpec::affine(1, 1, vec![1.0], vec![0.0], None, vec![0.0]).unwrap();
        let c = simulate_coupled(&s, Scheme::Milstein, 2, 0.5, 4, &RngStream::new(2, 0), 100).unwrap();
        let co = c.coarse.unwrap();
        for (a, b) in c.fine.values.iter().zip(&co.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn area_composition_matches_fine_double_integral() {
        // A over [0, 2h] from two halves equals the area of the concatenated
        // Riemann–Itô sums on a fine grid.
        let mut s = RngStream::new(3, 0);
        let n = 64;
        let h = 1.0 / n as f64;
        let w: Vec<[f64; 2]> = (0..2 * n).map(|_| [h.sqrt() * s.normal(), h.sqrt() * s.normal()]).collect();
        let area = |seg: &[[f64; 2]]| {
            let (mut w1, mut w2, mut a) = (0.0, 0.0, 0.0);
            for dw in seg {
                a += w1 * dw[1] - w2 * dw[0];
                w1 += dw[0];
                w2 += dw[1];
            }
            (w1, w2, a)
        };
        let (a1x, a1y, a1) = area(&w[..n]);
        let (a2x, a2y, a2) = area(&w[n..]);
        let (_, _, a) = area(&w);
        assert_abs_diff_eq!(a1 + a2 + a1x * a2y - a1y * a2x, a, epsilon = 1e-12);
    }

    #[test]
    fn slope_fit() {
        let x = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(fit_slope(&x, &[2.0, 4.0, 6.0]), 2.0, epsilon = 1e-14);
    }
}
