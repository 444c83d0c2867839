//! Lévy area A = I₁₂ − I₂₁ of a two-dimensional Brownian motion, sampled
//! jointly with the increments by inverting the characteristic function
//! conditioned on r² = |ΔW|²/h.

use crate::charinv::{find_cutoff, CharFunction, Inverter, InversionTable, TableSettings, NEG_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::schemes::SdeSpec;
use num_complex::Complex64;
use rayon::prelude::*;

fn x_over_sinh(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else if x.abs() > 700.0 {
        0.0
    } else {
        x / x.sinh()
    }
}

fn x_over_tanh(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 3.0
    } else {
        x / x.tanh()
    }
}

/// E[e^{ixA} | r²] = (x/sinh x) exp(r²/2 − r² x / (2 tanh x)) at unit step.
pub fn levy_char(x: f64, r2: f64) -> f64 {
    x_over_sinh(x) * (0.5 * r2 * (1.0 - x_over_tanh(x))).exp()
}

/// log of [`levy_char`], finite where the value underflows.
pub fn levy_log_char(x: f64, r2: f64) -> f64 {
    let ax = x.abs();
    let lxs = if ax < 1e-4 { -ax * ax / 6.0 } else { ax.ln() - ax - (-(-2.0 * ax).exp()).ln_1p() + std::f64::consts::LN_2 };
    lxs + 0.5 * r2 * (1.0 - x_over_tanh(x))
}

/// Marginal law: E[e^{ixA}] = 1/cosh x.
pub fn levy_marginal_char(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// Var(A | r²) = (1 + r²)/3.
pub fn levy_conditional_variance(r2: f64) -> f64 {
    (1.0 + r2) / 3.0
}

struct Cond {
    r2: f64,
}

impl CharFunction for Cond {
    fn eval(&self, a: f64) -> Complex64 {
        Complex64::new(levy_char(a, self.r2), 0.0)
    }

    fn log_eval(&self, a: f64) -> Complex64 {
        Complex64::new(levy_log_char(a, self.r2), 0.0)
    }
}

/// Conditional law of the unit-step area given r².
#[derive(Clone, Debug)]
pub struct LevyConditional {
    pub r2: f64,
    inv: Inverter,
    table: InversionTable,
}

impl LevyConditional {
    pub fn new(r2: f64, st: &TableSettings) -> Result<Self> {
        if !(r2 >= 0.0) {
            return invalid("r2 must be >= 0");
        }
        let phi = Cond { r2 };
        let sd = levy_conditional_variance(r2).sqrt();
        let m = find_cutoff(&phi, st.tol, 0.05 / sd);
        let reach = st.hi_sd * sd;
        let panels = ((m * reach / 4.0).ceil() as usize).clamp(st.min_panels, st.max_panels);
        let inv = Inverter::new(&phi, m, 16 * panels)?;
        let table = InversionTable::build(&phi, None, sd, st)?;
        Ok(LevyConditional { r2, inv, table })
    }

    /// Density of A at unit step; even in A by construction since Φ is real.
    pub fn pdf(&self, a: f64) -> Result<f64> {
        let v = self.inv.density(a);
        let peak = self.inv.density(0.0);
        if v < -NEG_FLOOR * peak {
            return Err(Error::NegativeDensity { x: a, value: v });
        }
        Ok(v.max(0.0))
    }

    pub fn table(&self) -> &InversionTable {
        &self.table
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.table.quantile(u)
    }
}

/// Density of the unit-step area given r², with default settings.
pub fn levy_pdf(a: f64, r2: f64) -> Result<f64> {
    LevyConditional::new(r2, &levy_settings())?.pdf(a)
}

pub fn levy_settings() -> TableSettings {
    TableSettings { tol: 1e-12, n_grid: 1024, lo_sd: 15.0, hi_sd: 15.0, min_panels: 8, max_panels: 4096 }
}

/// Conditional tables at log-spaced r² nodes over the central 99.99% of the
/// Exp(1/2) law of r². Quantiles are blended after standardising by the
/// conditional sd; r² outside the nodes is inverted on the fly.
#[derive(Clone, Debug)]
pub struct LevySampler {
    nodes: Vec<f64>,
    tables: Vec<LevyConditional>,
    settings: TableSettings,
}

impl LevySampler {
    pub fn new(n_nodes: usize) -> Result<Self> {
        let st = levy_settings();
        let lo = -2.0 * (-5e-5f64).ln_1p();
        let hi = -2.0 * (5e-5f64).ln();
        let n = n_nodes.max(2);
        let nodes: Vec<f64> = (0..n).map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).exp()).collect();
        let tables: Result<Vec<_>> = nodes.par_iter().map(|&r2| LevyConditional::new(r2, &st)).collect();
        Ok(LevySampler { nodes, tables: tables?, settings: st })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Unit-step conditional quantile.
    pub fn quantile(&self, r2: f64, u: f64) -> Result<f64> {
        let n = &self.nodes;
        if r2 < n[0] || r2 > n[n.len() - 1] {
            return Ok(LevyConditional::new(r2, &self.settings)?.quantile(u));
        }
        let j = n.partition_point(|&x| x < r2).clamp(1, n.len() - 1);
        let w = (r2 - n[j - 1]) / (n[j] - n[j - 1]);
        let std = |i: usize| self.tables[i].quantile(u) / levy_conditional_variance(n[i]).sqrt();
        let z = (1.0 - w) * std(j - 1) + w * std(j);
        Ok(z * levy_conditional_variance(r2).sqrt())
    }

    /// (ΔW₁, ΔW₂, A) over a step of length h.
    pub fn sample_joint(&self, h: f64, stream: &mut RngStream) -> Result<(f64, f64, f64)> {
        if !(h > 0.0) {
            return invalid("h must be > 0");
        }
        let z1 = stream.normal();
        let z2 = stream.normal();
        let u = stream.uniform();
        let a = self.quantile(z1 * z1 + z2 * z2, u)?;
        let s = h.sqrt();
        Ok((s * z1, s * z2, h * a))
    }
}

/// Joint draw with a sampler built on first use.
pub fn sample_levy_joint(h: f64, stream: &mut RngStream) -> Result<(f64, f64, f64)> {
    default_sampler()?.sample_joint(h, stream)
}

pub fn default_sampler() -> Result<&'static LevySampler> {
    static S: std::sync::OnceLock<std::result::Result<LevySampler, Error>> = std::sync::OnceLock::new();
    S.get_or_init(|| LevySampler::new(64)).as_ref().map_err(|e| e.clone())
}

/// L^j σ_ik = Σ_l σ_lj ∂_l σ_ik at `x`, indexed [(i·m + j)·m + k].
pub fn l_operator(spec: &SdeSpec, x: &[f64]) -> Vec<f64> {
    let (d, m) = (spec.d, spec.m);
    let mut sig = vec![0.0; d * m];
    let mut jac = vec![0.0; d * m * d];
    (spec.sigma)(x, &mut sig);
    (spec.sigma_jac)(x, &mut jac);
    let mut out = vec![0.0; d * m * m];
    for i in 0..d {
        for j in 0..m {
            for k in 0..m {
                out[(i * m + j) * m + k] = (0..d).map(|l| sig[l * m + j] * jac[(i * m + k) * d + l]).sum();
            }
        }
    }
    out
}

/// Flags[(i·m + j)·m + k]: L^k σ_ij = L^j σ_ik at every probe point (tol 1e-9).
pub fn check_commutativity(spec: &SdeSpec, probes: &[Vec<f64>]) -> Vec<bool> {
    let (d, m) = (spec.d, spec.m);
    let mut flags = vec![true; d * m * m];
    for x in probes {
        let l = l_operator(spec, x);
        for i in 0..d {
            for j in 0..m {
                for k in 0..m {
                    let lhs = l[(i * m + k) * m + j];
                    let rhs = l[(i * m + j) * m + k];
                    if (lhs - rhs).abs() > 1e-9 * (1.0 + lhs.abs() + rhs.abs()) {
                        flags[(i * m + j) * m + k] = false;
                    }
                }
            }
        }
    }
    flags
}

/// `count` probe points drawn around `center` with unit Gaussian spread.
pub fn probe_points(center: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = RngStream::new(seed, 0x1e7);
    (0..count).map(|_| center.iter().map(|c| c + s.normal()).collect()).collect()
}
