//! Statistics on chain output: test functions and ergodic averages, QQ
//! standardization, normality statistics, Hill tail-index estimation and
//! one-dimensional distances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::random::RngStream;
use crate::targets::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    /// `1{|x| >= threshold}`
    IndicatorNormGe { threshold: f64 },
    /// `|x|^s`
    PowerNorm { s: f64 },
    /// `|x_1|`
    AbsFirstCoord,
}

impl TestFunctionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TestFunctionSpec::IndicatorNormGe { threshold } if !(threshold > 0.0 && threshold.is_finite()) => Err(
                Error::param("g.threshold", format!("must be positive, got {threshold}")),
            ),
            TestFunctionSpec::PowerNorm { s } if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::param("g.s", format!("must be non-negative, got {s}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunctionSpec::IndicatorNormGe { threshold } => {
                if norm2(x) >= threshold * threshold {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunctionSpec::PowerNorm { s } => {
                if s == 0.0 {
                    1.0
                } else {
                    norm2(x).powf(0.5 * s)
                }
            }
            TestFunctionSpec::AbsFirstCoord => x[0].abs(),
        }
    }
}

pub fn eval_test_function(g: &TestFunctionSpec, x: &[f64]) -> f64 {
    g.eval(x)
}

/// Neumaier's compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Streaming `(1/(n - n_b)) sum_{k > n_b} g(X_k)`.
#[derive(Debug, Clone)]
pub struct ErgodicAverager {
    n_burn: u64,
    seen: u64,
    sum: NeumaierSum,
}

impl ErgodicAverager {
    pub fn new(n_burn: u64) -> Self {
        ErgodicAverager {
            n_burn,
            seen: 0,
            sum: NeumaierSum::new(),
        }
    }

    /// Records `g(X_k)` for the next `k`.
    #[inline]
    pub fn push(&mut self, gx: f64) {
        self.seen += 1;
        if self.seen > self.n_burn {
            self.sum.add(gx);
        }
    }

    pub fn count(&self) -> u64 {
        self.seen.saturating_sub(self.n_burn)
    }

    pub fn average(&self) -> Result<f64> {
        let m = self.count();
        if m == 0 {
            return Err(Error::Degenerate("empty post-burn-in window"));
        }
        Ok(self.sum.value() / m as f64)
    }
}

/// Ergodic average of `g` over states `X_1, ..., X_{n_total}`, discarding the
/// first `n_burn`. Consumes at most `n_total` states.
pub fn ergodic_average<'a, I>(states: I, g: &TestFunctionSpec, n_total: u64, n_burn: u64) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if n_burn >= n_total {
        return Err(Error::Degenerate("empty post-burn-in window"));
    }
    let mut avg = ErgodicAverager::new(n_burn);
    for x in states.into_iter().take(n_total as usize) {
        avg.push(g.eval(x));
    }
    avg.average()
}

pub fn std_normal() -> Normal {
    Normal::standard()
}

/// `Phi^{-1}(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QQData {
    pub empirical_quantiles: Vec<f64>,
    pub theoretical_quantiles: Vec<f64>,
    pub mu_hat: f64,
    pub sigma_hat: f64,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mut s = NeumaierSum::new();
    x.iter().for_each(|&v| s.add(v));
    let mean = s.value() / n;
    let mut ss = NeumaierSum::new();
    x.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    (mean, (ss.value() / (n - 1.0)).sqrt())
}

/// Standardizes replicate averages, `Z_i = (S_i - mu_hat) / sigma_hat`, and
/// pairs their order statistics with `Phi^{-1}((i - 1/2)/N)`.
pub fn standardize(averages: &[f64]) -> Result<QQData> {
    let n = averages.len();
    if n < 2 {
        return Err(Error::param("averages", "need at least two replicates"));
    }
    if averages.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("replicate averages"));
    }
    let (mu_hat, sigma_hat) = mean_sd(averages);
    if !(sigma_hat > 0.0) {
        return Err(Error::Degenerate("replicate averages have zero variance"));
    }
    let mut z: Vec<f64> = averages.iter().map(|a| (a - mu_hat) / sigma_hat).collect();
    z.sort_by(f64::total_cmp);
    let theoretical_quantiles = (1..=n)
        .map(|i| normal_quantile((i as f64 - 0.5) / n as f64))
        .collect();
    Ok(QQData {
        empirical_quantiles: z,
        theoretical_quantiles,
        mu_hat,
        sigma_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityStats {
    pub excess_kurtosis: f64,
    /// Anderson-Darling statistic with mean and variance estimated from the
    /// sample, including the small-sample factor `1 + 0.75/n + 2.25/n^2`.
    pub anderson_darling: f64,
    pub n: usize,
}

/// Upper 95% and 99% points of the estimated-parameter Anderson-Darling
/// statistic under normality (asymptotic tables; see also
/// [`ad_null_quantile`]).
pub const AD_CRITICAL_95: f64 = 0.752;
pub const AD_CRITICAL_99: f64 = 1.035;

/// Bias-corrected sample excess kurtosis `G2`.
pub fn excess_kurtosis(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 4 {
        return Err(Error::param("z", "need at least four values for kurtosis"));
    }
    let nf = n as f64;
    let (mean, _) = mean_sd(x);
    let (mut m2, mut m4) = (NeumaierSum::new(), NeumaierSum::new());
    for &v in x {
        let c = (v - mean) * (v - mean);
        m2.add(c);
        m4.add(c * c);
    }
    let (m2, m4) = (m2.value() / nf, m4.value() / nf);
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("sample has zero variance"));
    }
    let g2 = m4 / (m2 * m2) - 3.0;
    Ok(((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)))
}

/// Anderson-Darling `A*^2` for normality with estimated mean and variance.
pub fn anderson_darling(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 8 {
        return Err(Error::param("z", "need at least eight values"));
    }
    let (mean, sd) = mean_sd(x);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("sample has zero variance"));
    }
    let mut y: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    y.sort_by(f64::total_cmp);
    let normal = std_normal();
    let nf = n as f64;
    let mut s = NeumaierSum::new();
    for i in 0..n {
        // ln(1 - Phi(y)) = ln Phi(-y) avoids cancellation in the upper tail
        let lo = normal.cdf(y[i]).max(f64::MIN_POSITIVE).ln();
        let hi = normal.cdf(-y[n - 1 - i]).max(f64::MIN_POSITIVE).ln();
        s.add((2.0 * i as f64 + 1.0) * (lo + hi));
    }
    let a2 = -nf - s.value() / nf;
    Ok(a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf)))
}

pub fn normality_stats(z: &[f64]) -> Result<NormalityStats> {
    if z.len() < 8 {
        return Err(Error::param("z", "need at least eight values"));
    }
    Ok(NormalityStats {
        excess_kurtosis: excess_kurtosis(z)?,
        anderson_darling: anderson_darling(z)?,
        n: z.len(),
    })
}

/// Upper `q`-quantile of `A*^2` for Gaussian samples of size `n`, by
/// simulation with `reps` replicates.
pub fn ad_null_quantile(n: usize, q: f64, reps: usize, seed: u64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param("q", format!("must lie in (0, 1), got {q}")));
    }
    let mut rng = RngStream::new(seed, 0);
    let mut buf = vec![0.0; n];
    let mut stats = Vec::with_capacity(reps);
    for _ in 0..reps {
        rng.fill_normal(1.0, &mut buf);
        stats.push(anderson_darling(&buf)?);
    }
    stats.sort_by(f64::total_cmp);
    Ok(empirical_quantile(&stats, q))
}

/// Linear-interpolation quantile of sorted data.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn sorted_desc_positive(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::param("samples", "Hill estimation needs positive finite values"));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Hill estimate of the tail index from the `k` largest values:
/// `k / sum_{i<=k} log(X_(n-i+1) / X_(n-k))`.
pub fn hill_estimator(samples: &[f64], k: usize) -> Result<f64> {
    if k < 10 || k >= samples.len() {
        return Err(Error::param(
            "k",
            format!("need 10 <= k < n = {}, got {k}", samples.len()),
        ));
    }
    let s = sorted_desc_positive(samples)?;
    HillCurve::from_sorted(s).at(k)
}

/// Hill estimates for every `k`, from one descending sort.
#[derive(Debug, Clone)]
pub struct HillCurve {
    sorted: Vec<f64>,
    cum_log: Vec<f64>,
}

impl HillCurve {
    pub fn new(samples: &[f64]) -> Result<Self> {
        Ok(Self::from_sorted(sorted_desc_positive(samples)?))
    }

    fn from_sorted(sorted: Vec<f64>) -> Self {
        let mut cum_log = Vec::with_capacity(sorted.len() + 1);
        let mut acc = NeumaierSum::new();
        cum_log.push(0.0);
        for &x in &sorted {
            acc.add(x.ln());
            cum_log.push(acc.value());
        }
        HillCurve { sorted, cum_log }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn at(&self, k: usize) -> Result<f64> {
        if k == 0 || k >= self.sorted.len() {
            return Err(Error::param("k", format!("need 0 < k < n = {}, got {k}", self.sorted.len())));
        }
        let denom = self.cum_log[k] - k as f64 * self.sorted[k].ln();
        if !(denom > 0.0) {
            return Err(Error::Degenerate("top order statistics are tied"));
        }
        Ok(k as f64 / denom)
    }

    /// Threshold `X_(n-k)` used by the estimate at `k`.
    pub fn threshold(&self, k: usize) -> f64 {
        self.sorted[k]
    }
}

/// Ratio of the estimate at the smallest `k` to that at the largest `k`
/// above which the tail is reported as light (estimate keeps growing as the
/// threshold rises).
pub const LIGHT_TAIL_RATIO: f64 = 1.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillReport {
    pub n: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Median of the estimates over `k in [k_min, k_max]`.
    pub estimate: f64,
    /// Estimate at the default `k = floor(n^0.6)`.
    pub estimate_default_k: f64,
    pub light_tail: bool,
    /// `(k, estimate)` on a log-spaced grid, for Hill plots.
    pub curve: Vec<(usize, f64)>,
}

/// Hill plateau scan over `k in [n^0.4, n^0.7]`.
pub fn hill_plateau(samples: &[f64]) -> Result<HillReport> {
    hill_plateau_top(samples, samples.len())
}

/// Number of largest values a streaming recorder must keep so that
/// [`hill_plateau_top`] sees every `k` it scans.
pub fn hill_top_len(n: usize) -> usize {
    (n as f64).powf(0.7).floor() as usize + 2
}

/// [`hill_plateau`] for a sample of size `n` of which only the largest
/// values `top` (any order, at least [`hill_top_len`] of them unless `top`
/// is the whole sample) were kept.
pub fn hill_plateau_top(top: &[f64], n: usize) -> Result<HillReport> {
    let curve = HillCurve::new(top)?;
    if curve.len() > n {
        return Err(Error::param("n", format!("{} values kept from a sample of {n}", curve.len())));
    }
    let nf = n as f64;
    let k_min = (nf.powf(0.4).floor() as usize).max(10);
    let k_max = (nf.powf(0.7).floor() as usize).min(n - 1);
    if k_min >= k_max {
        return Err(Error::param("samples", format!("too few values ({n}) for a plateau scan")));
    }
    if k_max >= curve.len() {
        return Err(Error::param(
            "top",
            format!("plateau scan needs {} largest values, got {}", k_max + 1, curve.len()),
        ));
    }
    let mut ests = (k_min..=k_max).map(|k| curve.at(k)).collect::<Result<Vec<_>>>()?;
    let lo = ests[0];
    let hi = *ests.last().unwrap();
    let mut grid = Vec::new();
    let steps = 200;
    let ratio = (k_max as f64 / k_min as f64).powf(1.0 / steps as f64);
    let mut kf = k_min as f64;
    let mut last = 0;
    for _ in 0..=steps {
        let k = (kf.round() as usize).clamp(k_min, k_max);
        if k != last {
            grid.push((k, ests[k - k_min]));
            last = k;
        }
        kf *= ratio;
    }
    ests.sort_by(f64::total_cmp);
    let m = ests.len();
    let estimate = if m % 2 == 1 {
        ests[m / 2]
    } else {
        0.5 * (ests[m / 2 - 1] + ests[m / 2])
    };
    let k_def = (nf.powf(0.6).floor() as usize).clamp(1, n - 1);
    Ok(HillReport {
        n,
        k_min,
        k_max,
        estimate,
        estimate_default_k: curve.at(k_def)?,
        light_tail: lo > LIGHT_TAIL_RATIO * hi,
        curve: grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    TvBinned { bins: usize },
    W1Sorted,
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Distance between two one-dimensional samples.
///
/// `TvBinned` is half the L1 distance between histograms over bins whose
/// edges are quantiles of the pooled sample. `W1Sorted` is the mean absolute
/// difference of order statistics; for unequal sizes it is evaluated as
/// `int |F_a - F_b|`, which coincides with it on equal sizes.
pub fn distance_1d(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("samples", "both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("distance samples"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    match metric {
        Metric::W1Sorted => Ok(w1_sorted(&sa, &sb)),
        Metric::TvBinned { bins } => {
            if bins < 1 {
                return Err(Error::param("bins", "need at least one bin"));
            }
            let mut pooled = Vec::with_capacity(sa.len() + sb.len());
            pooled.extend_from_slice(&sa);
            pooled.extend_from_slice(&sb);
            pooled.sort_by(f64::total_cmp);
            let mut edges: Vec<f64> = (1..bins)
                .map(|j| pooled[j * pooled.len() / bins])
                .collect();
            edges.dedup();
            let hist = |s: &[f64]| {
                // counts of values below each edge, differenced
                let mut counts = Vec::with_capacity(edges.len() + 1);
                let mut prev = 0;
                for e in &edges {
                    let c = s.partition_point(|x| x < e);
                    counts.push((c - prev) as f64 / s.len() as f64);
                    prev = c;
                }
                counts.push((s.len() - prev) as f64 / s.len() as f64);
                counts
            };
            let (ha, hb) = (hist(&sa), hist(&sb));
            Ok(0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>())
        }
    }
}

fn w1_sorted(sa: &[f64], sb: &[f64]) -> f64 {
    if sa.len() == sb.len() {
        let mut s = NeumaierSum::new();
        sa.iter().zip(sb).for_each(|(x, y)| s.add((x - y).abs()));
        return s.value() / sa.len() as f64;
    }
    // merge the two step CDFs
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = sa[0].min(sb[0]);
    let mut total = NeumaierSum::new();
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        total.add((fa - fb).abs() * (next - prev));
        while i < sa.len() && sa[i] <= next {
            i += 1;
        }
        while j < sb.len() && sb[j] <= next {
            j += 1;
        }
        prev = next;
    }
    total.value()
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("samples", "must be non-empty"));
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("samples", "both samples must be non-empty"));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}
