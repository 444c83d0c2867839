//! Plain Monte Carlo and multilevel Monte Carlo, classical (δ = 1) and with
//! each level mean read out by simulated amplitude estimation (δ = 2).

use crate::core::{PathBatch, Payoff};
use crate::error::{invalid, Result};
use crate::levy::default_sampler;
use crate::models::PathSource;
use crate::qsim::{bits_for_budget, QaeDistribution};
use crate::rng::{par_chunks, RngStream};
use crate::schemes::{draw_noise, simulate_level, LevyAreas, Scheme, SdeSpec, Stepper};
use serde::{Deserialize, Serialize};

/// Running mean and sum of squared deviations; merged in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Stats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Stats) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn from_slice(xs: &[f64]) -> Stats {
        let mut s = Stats::default();
        xs.iter().for_each(|&x| s.push(x));
        s
    }

    /// Unbiased sample variance; 0 below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    /// Fine steps per path.
    pub steps: u64,
    pub cost: f64,
    pub queries: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub levels: Vec<LevelReport>,
    pub total_cost: f64,
    pub bias: Option<f64>,
    pub queries: Option<u64>,
}

impl EstimateReport {
    pub fn ci95(&self) -> (f64, f64) {
        (self.estimate - 1.96 * self.stderr, self.estimate + 1.96 * self.stderr)
    }

    pub fn covers(&self, x: f64) -> bool {
        let (lo, hi) = self.ci95();
        lo <= x && x <= hi
    }
}

fn payoff_stats(batch: &PathBatch, payoff: &Payoff) -> Result<Stats> {
    let mut s = Stats::default();
    for p in 0..batch.n_paths {
        s.push(payoff.evaluate(batch.path(p), batch.t, batch.d)?);
    }
    Ok(s)
}

/// Sample mean of the payoff over `n` paths with standard error s/√n.
pub fn mci_price(src: &dyn PathSource, payoff: &Payoff, n: usize, stream: &RngStream) -> Result<EstimateReport> {
    if n < 2 {
        return invalid("mci_price needs n >= 2");
    }
    let parts = par_chunks(n, stream, |r, s| src.simulate(r.len(), s).and_then(|b| payoff_stats(&b, payoff)));
    let mut st = Stats::default();
    for p in parts {
        st.merge(&p?);
    }
    let (t, _) = src.shape();
    let cost = n as f64 * src.draws_per_path() as f64;
    Ok(EstimateReport {
        estimate: st.mean,
        stderr: st.stderr(),
        n: st.n,
        levels: vec![LevelReport { level: 0, n: st.n, mean: st.mean, variance: st.variance(), steps: t as u64, cost, queries: None }],
        total_cost: cost,
        bias: None,
        queries: None,
    })
}

/// Asymptotic total-cost regime, from comparing γ with β/δ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostRegime {
    VarianceDominated,
    Balanced,
    CostDominated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmcSchedule {
    pub l_max: usize,
    pub m: u32,
    pub n: Vec<u64>,
    pub h: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
}

impl MlmcSchedule {
    pub fn regime(&self) -> CostRegime {
        let r = self.beta / self.delta;
        if (self.gamma - r).abs() <= 1e-12 * r.max(1.0) {
            CostRegime::Balanced
        } else if self.gamma < r {
            CostRegime::VarianceDominated
        } else {
            CostRegime::CostDominated
        }
    }

    /// Order of the total cost, constants dropped:
    /// γ < β/δ: ε^{−2/δ} log^{1/δ}(1/ε) + ε^{−γ/α};
    /// γ = β/δ: ε^{−2/δ} log^{1/δ+1}(1/ε) + ε^{−γ/α};
    /// γ > β/δ: ε^{−γ/α − (2−β/α)/δ} log^{1/δ}(1/ε).
    pub fn cost_envelope(&self) -> f64 {
        let (a, b, g, d, e) = (self.alpha, self.beta, self.gamma, self.delta, self.eps);
        let lg = (1.0 / e).ln().max(1.0);
        match self.regime() {
            CostRegime::VarianceDominated => e.powf(-2.0 / d) * lg.powf(1.0 / d) + e.powf(-g / a),
            CostRegime::Balanced => e.powf(-2.0 / d) * lg.powf(1.0 / d + 1.0) + e.powf(-g / a),
            CostRegime::CostDominated => e.powf(-g / a - (2.0 - b / a) / d) * lg.powf(1.0 / d),
        }
    }

    /// Σ N_l h_l^{−γ}.
    pub fn nominal_cost(&self) -> f64 {
        self.n.iter().zip(&self.h).map(|(&n, h)| n as f64 * h.powf(-self.gamma)).sum()
    }

    pub fn total_samples(&self) -> u64 {
        self.n.iter().sum()
    }
}

/// L = ⌈log(√2·c₁·h₀^α/ε) / (α log M)⌉ and
/// N_l = ⌈(ε² h_l^{−β} / (2c₂(L+1)))^{−1/δ}⌉ with h_l = h₀M^{−l}.
#[allow(clippy::too_many_arguments)]
pub fn mlmc_schedule(c1: f64, c2: f64, alpha: f64, beta: f64, gamma: f64, delta: f64, eps: f64, m: u32, h0: f64) -> Result<MlmcSchedule> {
    if !(eps > 0.0 && eps < 1.0) {
        return invalid("eps must lie in (0, 1)");
    }
    if !(alpha > 0.0 && beta > 0.0 && gamma > 0.0 && delta > 0.0 && h0 > 0.0) {
        return invalid("rates and h0 must be positive");
    }
    if !(c1 >= 0.0 && c2 >= 0.0) || m < 2 {
        return invalid("need c1, c2 >= 0 and M >= 2");
    }
    let mf = m as f64;
    let raw = if c1 > 0.0 { ((2f64.sqrt() * c1 * h0.powf(alpha) / eps).ln() / (alpha * mf.ln())).ceil() } else { 0.0 };
    let l_max = raw.max(0.0) as usize;
    let h: Vec<f64> = (0..=l_max).map(|l| h0 * mf.powi(-(l as i32))).collect();
    let n = h
        .iter()
        .map(|hl| {
            let base = eps * eps * hl.powf(-beta) / (2.0 * c2 * (l_max + 1) as f64);
            let v = if c2 > 0.0 { base.powf(-1.0 / delta).ceil() } else { 1.0 };
            if !(v < 1e15) {
                return invalid("sample count overflows");
            }
            Ok((v as u64).max(1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MlmcSchedule { l_max, m, n, h, alpha, beta, gamma, delta, c1, c2, eps })
}

/// A monitored SDE, its scheme and payoff: what the multilevel estimators price.
#[derive(Clone, Debug)]
pub struct MlmcProblem {
    pub spec: SdeSpec,
    pub scheme: Scheme,
    pub t_mon: usize,
    /// Coarsest step, one per monitoring interval.
    pub h0: f64,
    pub payoff: Payoff,
}

impl MlmcProblem {
    /// f(Ŷ_l) − f(Ŷ_{l−1}) (just f(Ŷ₀) at level 0) per path, and fine steps per path.
    pub fn level_samples(&self, level: usize, n: usize, stream: &RngStream) -> Result<(Vec<f64>, u64)> {
        let cp = simulate_level(&self.spec, self.scheme, self.t_mon, self.h0, level, stream, n)?;
        let (t, d) = (self.t_mon, self.spec.d);
        let mut out = Vec::with_capacity(n);
        for p in 0..n {
            let mut y = self.payoff.evaluate(cp.fine.path(p), t, d)?;
            if let Some(c) = &cp.coarse {
                y -= self.payoff.evaluate(c.path(p), t, d)?;
            }
            out.push(y);
        }
        Ok((out, cp.steps as u64))
    }

    /// (c₁, c₂) from `n` pilot paths at levels 0 and 1:
    /// c₂ = max_l V_l h_l^{−β}; c₁ = (|Ȳ₁| + 2·se)/(h₁^α (M^α − 1)).
    pub fn pilot_constants(&self, alpha: f64, beta: f64, n: usize, stream: &RngStream) -> Result<(f64, f64)> {
        let mut c2: f64 = 0.0;
        let mut c1 = 0.0;
        for l in 0..2 {
            let (y, _) = self.level_samples(l, n, &stream.child(l as u64))?;
            let s = Stats::from_slice(&y);
            let h = self.h0 / (1u64 << l) as f64;
            c2 = c2.max(s.variance() * h.powf(-beta));
            if l == 1 {
                c1 = (s.mean.abs() + 2.0 * s.stderr()) / (h.powf(alpha) * (2f64.powf(alpha) - 1.0));
            }
        }
        Ok((c1, c2))
    }
}

fn check_schedule(prob: &MlmcProblem, sch: &MlmcSchedule) -> Result<()> {
    if sch.m != 2 {
        return invalid("coupled paths refine by M = 2 only");
    }
    if (sch.h[0] - prob.h0).abs() > 1e-12 * prob.h0 {
        return invalid("schedule h0 differs from the problem's coarse step");
    }
    Ok(())
}

/// Telescoping estimator Σ_l mean(f(Ŷ_l) − f(Ŷ_{l−1})); level l uses
/// `stream.child(l)`. C_l = N_l · (fine steps per path).
pub fn mlmc_price(prob: &MlmcProblem, sch: &MlmcSchedule, stream: &RngStream) -> Result<EstimateReport> {
    check_schedule(prob, sch)?;
    let mut levels = Vec::with_capacity(sch.l_max + 1);
    for (l, &n) in sch.n.iter().enumerate() {
        let (y, steps) = prob.level_samples(l, n as usize, &stream.child(l as u64))?;
        let s = Stats::from_slice(&y);
        levels.push(LevelReport { level: l, n, mean: s.mean, variance: s.variance(), steps, cost: n as f64 * steps as f64, queries: None });
    }
    Ok(EstimateReport {
        estimate: levels.iter().map(|r| r.mean).sum(),
        stderr: levels.iter().map(|r| r.variance / r.n as f64).sum::<f64>().sqrt(),
        n: sch.total_samples(),
        total_cost: levels.iter().map(|r| r.cost).sum(),
        levels,
        bias: None,
        queries: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantumLevel {
    pub estimate: f64,
    /// Mean of the reference sample the amplitude is built from.
    pub reference: f64,
    pub bias: f64,
    pub variance: f64,
    pub queries: u64,
}

/// Maps `samples` into [0, 1] by their range, takes the mean as the amplitude
/// and reads it out with 2^m grid points, m = ⌈log₂(budget + 1)⌉. Bias and
/// variance come from the exact outcome law when M ≤ 2²².
pub fn quantum_level_estimate(samples: &[f64], budget: u64, stream: &mut RngStream) -> Result<QuantumLevel> {
    if samples.is_empty() {
        return invalid("empty reference sample");
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let reference = Stats::from_slice(samples).mean;
    let bits = bits_for_budget(budget).max(1);
    let qae_queries = (1u64 << bits) - 1;
    if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
        return Ok(QuantumLevel { estimate: reference, reference, bias: 0.0, variance: 0.0, queries: qae_queries });
    }
    let w = hi - lo;
    let a = ((reference - lo) / w).clamp(0.0, 1.0);
    let dist = QaeDistribution::new(a, bits)?;
    let y = dist.sample(stream);
    let (bias, variance) = if bits <= 22 {
        let (mean, mse) = dist.exact_moments();
        (w * (mean - a), w * w * (mse - (mean - a).powi(2)).max(0.0))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(QuantumLevel { estimate: lo + w * dist.estimate(y), reference, bias, variance, queries: dist.queries() })
}

/// Level means read out by simulated amplitude estimation with budget N_l.
/// `n_ref` paths per level define the amplitude; their mean is the level's
/// reference value. Cost counts queries × fine steps.
pub fn simulated_quantum_mlmc(prob: &MlmcProblem, sch: &MlmcSchedule, n_ref: usize, stream: &RngStream) -> Result<EstimateReport> {
    check_schedule(prob, sch)?;
    let mut levels = Vec::new();
    let mut bias = 0.0;
    let mut var = 0.0;
    for (l, &n) in sch.n.iter().enumerate() {
        let (y, steps) = prob.level_samples(l, n_ref, &stream.child(l as u64))?;
        let mut qs = stream.child((1 << 32) + l as u64);
        let q = quantum_level_estimate(&y, n, &mut qs)?;
        bias += q.bias;
        var += q.variance;
        levels.push(LevelReport { level: l, n, mean: q.estimate, variance: q.variance, steps, cost: q.queries as f64 * steps as f64, queries: Some(q.queries) });
    }
    let queries = levels.iter().filter_map(|r| r.queries).sum();
    Ok(EstimateReport {
        estimate: levels.iter().map(|r| r.mean).sum(),
        stderr: var.sqrt(),
        n: sch.total_samples(),
        total_cost: levels.iter().map(|r| r.cost).sum(),
        levels,
        bias: Some(bias),
        queries: Some(queries),
    })
}

/// Paths at every level 0..=l_max driven by one fine Brownian path (and its
/// areas) per sample; coarser noise is built by pairwise composition.
pub fn simulate_hierarchy(spec: &SdeSpec, scheme: Scheme, t_mon: usize, h0: f64, l_max: usize, stream: &RngStream, n: usize) -> Result<Vec<PathBatch>> {
    if t_mon == 0 || !(h0 > 0.0) {
        return invalid("need t_mon >= 1 and h0 > 0");
    }
    let (d, m) = (spec.d, spec.m);
    let pairs: Vec<(usize, usize)> = spec.pairing.clone().unwrap_or_default();
    let np = pairs.len();
    let lev = if scheme == Scheme::Milstein && np > 0 { Some(default_sampler()?) } else { None };
    let fine = 1usize << l_max;
    let parts = par_chunks(n, stream, |r, s| -> Result<Vec<PathBatch>> {
        let mut out: Vec<PathBatch> = (0..=l_max).map(|_| PathBatch::new(r.len(), t_mon, d)).collect();
        let mut st = Stepper::new(spec);
        let mut x: Vec<Vec<f64>> = vec![spec.x0.clone(); l_max + 1];
        let mut tmp = vec![0.0; d];
        let mut dw = vec![0.0; fine * m];
        let mut ar = vec![0.0; fine * np];
        for p in 0..r.len() {
            x.iter_mut().for_each(|v| v.copy_from_slice(&spec.x0));
            for k in 0..t_mon {
                let hf = h0 / fine as f64;
                for j in 0..fine {
                    draw_noise(spec, scheme, lev, hf, s, &mut dw[j * m..(j + 1) * m], &mut ar[j * np..(j + 1) * np])?;
                }
                let mut count = fine;
                let mut h = hf;
                for l in (0..=l_max).rev() {
                    for j in 0..count {
                        let w = &dw[j * m..(j + 1) * m];
                        match scheme {
                            Scheme::Em => st.em(&x[l], h, w, &mut tmp)?,
                            Scheme::Milstein => {
                                let la = LevyAreas { pairs: &pairs, values: &ar[j * np..(j + 1) * np] };
                                st.milstein(&x[l], h, w, Some(&la), &mut tmp)?
                            }
                        }
                        x[l].copy_from_slice(&tmp);
                    }
                    if l > 0 {
                        for j in 0..count / 2 {
                            for (q, &(a, b)) in pairs.iter().enumerate() {
                                let (u, v) = (2 * j * m, (2 * j + 1) * m);
                                ar[j * np + q] = ar[2 * j * np + q] + ar[(2 * j + 1) * np + q] + dw[u + a] * dw[v + b] - dw[u + b] * dw[v + a];
                            }
                            for c in 0..m {
                                dw[j * m + c] = dw[2 * j * m + c] + dw[(2 * j + 1) * m + c];
                            }
                        }
                        count /= 2;
                        h *= 2.0;
                    }
                }
                let o = (p * t_mon + k) * d;
                for (l, b) in out.iter_mut().enumerate() {
                    b.values[o..o + d].copy_from_slice(&x[l]);
                }
            }
        }
        Ok(out)
    });
    let mut by_level: Vec<Vec<PathBatch>> = (0..=l_max).map(|_| Vec::new()).collect();
    for part in parts {
        for (l, b) in part?.into_iter().enumerate() {
            by_level[l].push(b);
        }
    }
    Ok(by_level.into_iter().map(PathBatch::concat).collect())
}

/// SDE paths at a fixed level as a [`PathSource`].
#[derive(Clone, Debug)]
pub struct SdeSource {
    pub spec: SdeSpec,
    pub scheme: Scheme,
    pub t_mon: usize,
    pub h0: f64,
    pub level: usize,
}

impl PathSource for SdeSource {
    fn shape(&self) -> (usize, usize) {
        (self.t_mon, self.spec.d)
    }

    fn draws_per_path(&self) -> usize {
        self.t_mon * (1 << self.level) * self.spec.m
    }

    fn simulate(&self, n: usize, stream: &mut RngStream) -> Result<PathBatch> {
        Ok(simulate_level(&self.spec, self.scheme, self.t_mon, self.h0, self.level, stream, n)?.fine)
    }
}

/// Least-squares slopes of log|mean_l| and log V_l against log h_l over
/// levels ≥ 1: estimates of (α, β).
pub fn fit_rates(levels: &[LevelReport], h: &[f64]) -> (f64, f64) {
    let sel: Vec<usize> = (1..levels.len()).filter(|&l| levels[l].variance > 0.0).collect();
    let lh: Vec<f64> = sel.iter().map(|&l| h[l].ln()).collect();
    let lm: Vec<f64> = sel.iter().map(|&l| levels[l].mean.abs().max(1e-300).ln()).collect();
    let lv: Vec<f64> = sel.iter().map(|&l| levels[l].variance.ln()).collect();
    (crate::schemes::fit_slope(&lh, &lm), crate::schemes::fit_slope(&lh, &lv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::GbmParams;
    use crate::models::{bs_call, DriftMode, GbmModel};
    use approx::assert_abs_diff_eq;

    struct Constant;
    impl PathSource for Constant {
        fn shape(&self) -> (usize, usize) {
            (1, 1)
        }
        fn draws_per_path(&self) -> usize {
            0
        }
        fn simulate(&self, n: usize, _: &mut RngStream) -> Result<PathBatch> {
            let mut b = PathBatch::new(n, 1, 1);
            b.values.iter_mut().for_each(|v| *v = 2.0);
            Ok(b)
        }
    }

    #[test]
    fn stats_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut a = Stats::from_slice(&xs[..313]);
        a.merge(&Stats::from_slice(&xs[313..]));
        let b = Stats::from_slice(&xs);
        assert_abs_diff_eq!(a.mean, b.mean, epsilon = 1e-12);
        assert_abs_diff_eq!(a.variance(), b.variance(), epsilon = 1e-10);
    }

    #[test]
    fn constant_payoff_zero_stderr() {
        let pay = Payoff::piecewise(vec![0.0, 10.0], vec![1.0, 1.0]).unwrap();
        let r = mci_price(&Constant, &pay, 5000, &RngStream::new(1, 0)).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.stderr, 0.0);
        assert!(mci_price(&Constant, &pay, 1, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn noiseless_asian() {
        let p = GbmParams::single(0.05, 0.0, 1.0).unwrap();
        let m = GbmModel::new(p, 4, 0.25, DriftMode::Raw).unwrap();
        let r = mci_price(&m, &Payoff::asian_call(0.9), 100, &RngStream::new(3, 0)).unwrap();
        let want = (1..=4).map(|k| (0.05 * 0.25 * k as f64).exp()).sum::<f64>() / 4.0 - 0.9;
        assert_abs_diff_eq!(r.estimate, want, epsilon = 1e-14);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn gbm_call_ci_covers_black_scholes() {
        let p = GbmParams::single(0.0, 0.2, 100.0).unwrap();
        let m = GbmModel::new(p, 1, 1.0, DriftMode::Martingale).unwrap();
        let r = mci_price(&m, &Payoff::european_call(100.0), 200_000, &RngStream::new(7, 0)).unwrap();
        assert!(r.covers(bs_call(100.0, 100.0, 0.0, 0.2, 1.0)), "{r:?}");
    }

    #[test]
    fn schedule_levels_example() {
        let s = mlmc_schedule(1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 0.1, 2, 1.0).unwrap();
        assert_eq!(s.l_max, 4);
        assert_eq!(s.h.len(), 5);
        assert_eq!(s.h[4], 1.0 / 16.0);
        let want0 = (2.0 * 1.0 * 5.0 / 0.01f64).ceil() as u64;
        assert_eq!(s.n[0], want0);
        assert_eq!(s.regime(), CostRegime::VarianceDominated);
        assert!(mlmc_schedule(1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2, 1.0).is_err());
    }

    #[test]
    fn quantum_schedule_never_larger() {
        for eps in [0.3, 0.05, 0.01] {
            let a = mlmc_schedule(0.5, 0.2, 1.0, 2.0, 1.0, 1.0, eps, 2, 1.0).unwrap();
            let b = mlmc_schedule(0.5, 0.2, 1.0, 2.0, 1.0, 2.0, eps, 2, 1.0).unwrap();
            assert!(a.n.iter().zip(&b.n).all(|(x, y)| y <= x));
            if eps < 0.1 {
                assert!(b.total_samples() < a.total_samples());
            }
        }
    }

    #[test]
    fn regimes() {
        let mk = |g: f64, d: f64| mlmc_schedule(1.0, 1.0, 1.0, 2.0, g, d, 0.1, 2, 1.0).unwrap().regime();
        assert_eq!(mk(1.0, 2.0), CostRegime::Balanced);
        assert_eq!(mk(1.5, 2.0), CostRegime::CostDominated);
        assert_eq!(mk(1.0, 1.0), CostRegime::VarianceDominated);
    }

    fn problem() -> MlmcProblem {
        MlmcProblem { spec: SdeSpec::gbm(0.05, 0.2, 1.0), scheme: Scheme::Milstein, t_mon: 1, h0: 1.0, payoff: Payoff::european_call(1.0) }
    }

    #[test]
    fn level_zero_schedule_is_mci() {
        let pr = problem();
        let s = mlmc_schedule(0.0, 0.04, 1.0, 2.0, 1.0, 1.0, 0.01, 2, 1.0).unwrap();
        assert_eq!(s.l_max, 0);
        let st = RngStream::new(9, 0);
        let r = mlmc_price(&pr, &s, &st).unwrap();
        let (y, _) = pr.level_samples(0, s.n[0] as usize, &st.child(0)).unwrap();
        assert_eq!(r.estimate, Stats::from_slice(&y).mean);
        assert_eq!(r.total_cost, s.n[0] as f64);
    }

    #[test]
    fn telescoping_on_shared_paths() {
        let pr = problem();
        let lv = simulate_hierarchy(&pr.spec, pr.scheme, 2, 0.5, 4, &RngStream::new(5, 0), 100).unwrap();
        let f = |b: &PathBatch, p: usize| pr.payoff.evaluate(b.path(p), b.t, b.d).unwrap();
        let mut tele = 0.0;
        for l in 0..lv.len() {
            let s: f64 = (0..100).map(|p| f(&lv[l], p) - if l > 0 { f(&lv[l - 1], p) } else { 0.0 }).sum();
            tele += s / 100.0;
        }
        let top = (0..100).map(|p| f(&lv[4], p)).sum::<f64>() / 100.0;
        assert_abs_diff_eq!(tele, top, epsilon = 1e-12);
    }

    #[test]
    fn hierarchy_finest_level_matches_direct_law() {
        let pr = problem();
        let lv = simulate_hierarchy(&pr.spec, pr.scheme, 1, 1.0, 3, &RngStream::new(6, 0), 40_000).unwrap();
        let a: Vec<f64> = (0..40_000).map(|p| pr.payoff.evaluate(lv[3].path(p), 1, 1).unwrap()).collect();
        let cp = simulate_level(&pr.spec, pr.scheme, 1, 1.0, 3, &RngStream::new(6, 1), 40_000).unwrap();
        let y: Vec<f64> = (0..40_000).map(|p| pr.payoff.evaluate(cp.fine.path(p), 1, 1).unwrap()).collect();
        let (sa, sb) = (Stats::from_slice(&a), Stats::from_slice(&y));
        assert!((sa.mean - sb.mean).abs() < 4.0 * (sa.stderr().powi(2) + sb.stderr().powi(2)).sqrt());
    }

    #[test]
    fn mlmc_agrees_with_mci_and_cost_accounting() {
        let pr = problem();
        let (c1, c2) = pr.pilot_constants(1.0, 2.0, 200, &RngStream::new(1, 99)).unwrap();
        let s = mlmc_schedule(c1, c2, 1.0, 2.0, 1.0, 1.0, 0.005, 2, 1.0).unwrap();
        let r = mlmc_price(&pr, &s, &RngStream::new(2, 0)).unwrap();
        for lr in &r.levels {
            assert_eq!(lr.cost, lr.n as f64 * (1u64 << lr.level) as f64);
        }
        let exact = bs_call(1.0, 1.0, 0.05, 0.2, 1.0) * 0.05f64.exp();
        assert!((r.estimate - exact).abs() < 4.0 * r.stderr + 0.005, "{} {exact}", r.estimate);
    }

    #[test]
    fn quantum_level_on_grid_is_exact() {
        // amplitude 1/2 = sin²(π·2/8)
        let y: Vec<f64> = (0..64).map(|i| (i % 2) as f64 * 3.0).collect();
        let mut s = RngStream::new(4, 0);
        let q = quantum_level_estimate(&y, 7, &mut s).unwrap();
        assert_eq!(q.queries, 7);
        assert_abs_diff_eq!(q.estimate, 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(q.variance, 0.0, epsilon = 1e-14);
    }
}
