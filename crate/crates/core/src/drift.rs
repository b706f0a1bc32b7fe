//! Monte Carlo checks of drift conditions: Lyapunov functions, one-step
//! drift estimates at probe points, power-law fits and excursion durations.

use serde::{Deserialize, Serialize};

use crate::diagnostics::NeumaierSum;
use crate::error::{Error, Result};
use crate::kernels::{ChainState, Kernel, KernelConfig};
use crate::oracle::AlgorithmId;
use crate::par::{map_indexed, pairwise_sum, Execution};
use crate::random::RngStream;
use crate::targets::{norm2, TargetKind, TargetSpec};

/// Slack added to the critical exponent of polynomial `Psi`.
pub const PSI_EPSILON: f64 = 0.5;

/// Draws per parallel chunk in [`estimate_drift`].
const DRIFT_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovKind {
    /// `max(|x|, 1)`
    AbsNorm,
    /// `max(log|x|, 1)`
    LogNorm,
    /// `max((1 - z(x))^{-gamma}, 1)` with `z` the height on the sphere
    SphereGamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub kind: LyapunovKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl LyapunovSpec {
    pub fn abs_norm() -> Self {
        LyapunovSpec {
            kind: LyapunovKind::AbsNorm,
            gamma: None,
        }
    }

    pub fn log_norm() -> Self {
        LyapunovSpec {
            kind: LyapunovKind::LogNorm,
            gamma: None,
        }
    }

    pub fn sphere_gamma(gamma: f64) -> Self {
        LyapunovSpec {
            kind: LyapunovKind::SphereGamma,
            gamma: Some(gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LyapunovKind::SphereGamma {
            match self.gamma {
                Some(g) if g > 0.0 && g.is_finite() => Ok(()),
                _ => Err(Error::param("gamma", "SphereGamma needs a positive gamma")),
            }
        } else {
            Ok(())
        }
    }

    /// `V` as a function of `|x|^2`.
    #[inline]
    pub fn eval_r2(&self, r2: f64) -> f64 {
        match self.kind {
            LyapunovKind::AbsNorm => r2.sqrt().max(1.0),
            LyapunovKind::LogNorm => (0.5 * r2.ln()).max(1.0),
            LyapunovKind::SphereGamma => {
                // 1 - z = 2 / (1 + |x|^2)
                let gamma = self.gamma.unwrap_or(1.0);
                (0.5 * (1.0 + r2)).powf(gamma).max(1.0)
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_r2(norm2(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "f", rename_all = "snake_case")]
pub enum FKind {
    /// `1 / V`
    ReciprocalV,
    /// Polynomial `Psi(V) = max(V^s, 1)`
    PsiOfV { s: f64 },
    /// `V^s`
    PowerOfV { s: f64 },
}

impl FKind {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            FKind::ReciprocalV => 1.0 / v,
            FKind::PsiOfV { s } => v.powf(s).max(1.0),
            FKind::PowerOfV { s } => {
                if s == 0.0 {
                    1.0
                } else {
                    v.powf(s)
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            FKind::ReciprocalV => "reciprocal_v".into(),
            FKind::PsiOfV { s } => format!("psi_of_v(s={s})"),
            FKind::PowerOfV { s } => format!("power_of_v(s={s})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub probe: Vec<f64>,
    pub probe_norm: f64,
    pub f_kind: FKind,
    /// `(1/M) sum [f(V(X_1)) - f(V(x))]`
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `P(f o V)(x) - f(V(x))` from `samples` independent
/// one-step draws of the kernel started at `probe`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_drift(
    cfg: &KernelConfig,
    target: &TargetSpec,
    lyapunov: &LyapunovSpec,
    f_kind: FKind,
    probe: &[f64],
    samples: usize,
    rng: &mut RngStream,
    exec: Execution,
) -> Result<DriftEstimate> {
    if samples < 1000 {
        return Err(Error::param("samples", format!("need at least 1000, got {samples}")));
    }
    if probe.len() != target.d {
        return Err(Error::DimensionMismatch {
            expected: target.d,
            got: probe.len(),
        });
    }
    lyapunov.validate()?;
    let kernel = Kernel::new(cfg, target)?;
    let f0 = f_kind.apply(lyapunov.eval(probe));
    if !f0.is_finite() {
        return Err(Error::NonFinite("f(V(probe))"));
    }
    let proto = ChainState::new(probe.to_vec(), target)?;
    let n_chunks = samples.div_ceil(DRIFT_CHUNK);
    let streams: Vec<RngStream> = (0..n_chunks).map(|c| rng.split(c as u64)).collect();
    let parts = map_indexed(n_chunks, exec, |c| -> Result<(f64, f64)> {
        let mut rng = streams[c].clone();
        let m = DRIFT_CHUNK.min(samples - c * DRIFT_CHUNK);
        let mut st = proto.clone();
        let (mut s1, mut s2) = (NeumaierSum::new(), NeumaierSum::new());
        for _ in 0..m {
            st.x.copy_from_slice(probe);
            st.log_pi = proto.log_pi;
            st.grad.clone_from(&proto.grad);
            kernel.step(&mut st, target, &mut rng)?;
            let delta = f_kind.apply(lyapunov.eval(&st.x)) - f0;
            s1.add(delta);
            s2.add(delta * delta);
        }
        Ok((s1.value(), s2.value()))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let sum = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let sumsq = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sumsq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(DriftEstimate {
        probe: probe.to_vec(),
        probe_norm: norm2(probe).sqrt(),
        f_kind,
        mean,
        stderr: (var / m).sqrt(),
        samples,
    })
}

/// Probe points `r e_1` for `r = start, 2 start, 4 start, ...`.
pub fn probe_grid(start: f64, count: usize, d: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let mut x = vec![0.0; d];
            x[0] = start * 2f64.powi(i as i32);
            x
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `log|y|` on `log x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::param("points", format!("need at least 3, got {}", points.len())));
    }
    if points.iter().any(|&(x, _)| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::param("points", "x values must be positive and finite"));
    }
    if points.iter().any(|&(_, y)| y == 0.0 || !y.is_finite()) {
        return Err(Error::param("points", "y values must be non-zero and finite"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.abs().ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all x values are equal"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(PowerLawFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "growth", rename_all = "snake_case")]
pub enum RateLaw {
    /// `r^{-exponent}` for `phi(1/r)`, `r^{exponent}` for `Psi(r)`
    Polynomial { exponent: f64 },
    /// `exp(-rate r)` for `phi(1/r)`, `exp(rate r)` for `Psi(r)`
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProfile {
    pub algorithm: AlgorithmId,
    pub lyapunov: LyapunovSpec,
    pub phi: RateLaw,
    pub psi: RateLaw,
}

impl DriftProfile {
    /// `phi(1/r)` up to its constant.
    pub fn phi_at(&self, r: f64) -> f64 {
        match self.phi {
            RateLaw::Polynomial { exponent } => r.powf(-exponent),
            RateLaw::Exponential { rate } => (-rate * r).exp(),
        }
    }

    /// `Psi(r)` up to its constant.
    pub fn psi_at(&self, r: f64) -> f64 {
        match self.psi {
            RateLaw::Polynomial { exponent } => r.powf(exponent).max(1.0),
            RateLaw::Exponential { rate } => (rate * r).exp(),
        }
    }
}

const COVERED: &str = "fv-rwm, iv-rwm, mala, ula (polynomial targets); sps (polynomial, v < d); \
                       independence sampler (exponential targets, k > v); levy-em";

/// Lyapunov function and rate functions certifying the drift conditions for
/// `alg` on `target`. `gamma` selects the SPS Lyapunov function (default 1).
pub fn drift_profile(alg: AlgorithmId, target: &TargetSpec, gamma: Option<f64>) -> Result<DriftProfile> {
    alg.validate()?;
    target.validate()?;
    let v = target.v;
    let d = target.d as f64;
    let poly = target.is_polynomial();
    let uncovered = || Error::Unsupported(format!("no drift profile for {alg} on {:?}; covered: {COVERED}", target.kind));
    let (lyapunov, phi, psi) = match alg {
        AlgorithmId::FvRwm | AlgorithmId::Mala | AlgorithmId::Ula if poly => (
            LyapunovSpec::abs_norm(),
            RateLaw::Polynomial { exponent: 3.0 },
            RateLaw::Polynomial {
                exponent: v + 2.0 + PSI_EPSILON,
            },
        ),
        AlgorithmId::IvRwm { eta } if poly => (
            LyapunovSpec::abs_norm(),
            RateLaw::Polynomial { exponent: 1.0 + eta },
            RateLaw::Polynomial {
                exponent: v + eta + PSI_EPSILON,
            },
        ),
        AlgorithmId::Sps if poly && v < d => {
            let g = gamma.unwrap_or(1.0);
            if !(g > 0.0) {
                return Err(Error::param("gamma", format!("must be positive, got {g}")));
            }
            (
                LyapunovSpec::sphere_gamma(g),
                RateLaw::Polynomial {
                    exponent: (d - v) / (2.0 * g),
                },
                RateLaw::Polynomial { exponent: d / (2.0 * g) },
            )
        }
        AlgorithmId::IndependenceSampler { k } if target.kind == TargetKind::ExponentialTail && k > v => (
            LyapunovSpec::abs_norm(),
            RateLaw::Exponential { rate: k - v },
            RateLaw::Exponential { rate: k },
        ),
        AlgorithmId::LevyEm { alpha } => (
            LyapunovSpec::log_norm(),
            RateLaw::Polynomial { exponent: 2.0 },
            RateLaw::Exponential { rate: alpha },
        ),
        _ => return Err(uncovered()),
    };
    Ok(DriftProfile {
        algorithm: alg,
        lyapunov,
        phi,
        psi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub level_ell: f64,
    /// Lengths of completed excursions of `V(X)` at or above `ell`.
    pub durations: Vec<u64>,
    /// Number of excursions unfinished at the horizon (0 or 1).
    pub censored: u64,
    /// Length of the unfinished excursion, if any.
    pub censored_length: u64,
    pub time_below: u64,
    pub total_steps: u64,
}

/// Runs one chain from `init` for `total_steps` and records the lengths of
/// the maximal runs of `V(X_n) >= ell`, `n = 1..total_steps`.
pub fn collect_excursions(
    cfg: &KernelConfig,
    target: &TargetSpec,
    lyapunov: &LyapunovSpec,
    ell: f64,
    total_steps: u64,
    init: &[f64],
    rng: &mut RngStream,
) -> Result<ExcursionStats> {
    if !(ell > 1.0) {
        return Err(Error::param("ell", format!("must exceed 1, got {ell}")));
    }
    lyapunov.validate()?;
    let kernel = Kernel::new(cfg, target)?;
    let mut st = ChainState::new(init.to_vec(), target)?;
    let mut durations = Vec::new();
    let mut run = 0u64;
    let mut time_below = 0u64;
    for _ in 0..total_steps {
        kernel.step(&mut st, target, rng)?;
        if lyapunov.eval(&st.x) >= ell {
            run += 1;
        } else {
            if run > 0 {
                durations.push(run);
                run = 0;
            }
            time_below += 1;
        }
    }
    Ok(ExcursionStats {
        level_ell: ell,
        durations,
        censored: u64::from(run > 0),
        censored_length: run,
        time_below,
        total_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelConfig;

    #[test]
    fn lyapunov_values() {
        assert_eq!(LyapunovSpec::abs_norm().eval(&[3.0, 4.0]), 5.0);
        assert_eq!(LyapunovSpec::abs_norm().eval(&[0.1]), 1.0);
        assert_eq!(LyapunovSpec::log_norm().eval(&[2.0]), 1.0);
        assert!((LyapunovSpec::log_norm().eval(&[1e4]) - 4.0 * 10f64.ln()).abs() < 1e-12);
        // |x| = 3: 1 - z = 2/10
        assert!((LyapunovSpec::sphere_gamma(1.0).eval(&[3.0]) - 5.0).abs() < 1e-12);
        assert!(LyapunovSpec::sphere_gamma(-1.0).validate().is_err());
    }

    #[test]
    fn constant_f_has_zero_drift() {
        let target = TargetSpec::student_t(1.0, 1).unwrap();
        let mut rng = RngStream::new(31, 0);
        let e = estimate_drift(
            &KernelConfig::rwm_gaussian(2.4),
            &target,
            &LyapunovSpec::abs_norm(),
            FKind::PowerOfV { s: 0.0 },
            &[10.0],
            5000,
            &mut rng,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn drift_is_thread_invariant() {
        let target = TargetSpec::student_t(1.0, 1).unwrap();
        let run = |exec| {
            let mut rng = RngStream::new(32, 0);
            estimate_drift(
                &KernelConfig::rwm_gaussian(2.4),
                &target,
                &LyapunovSpec::abs_norm(),
                FKind::ReciprocalV,
                &[20.0],
                100_000,
                &mut rng,
                exec,
            )
            .unwrap()
        };
        let a = run(Execution::Parallel);
        let b = run(Execution::Sequential);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn power_law_examples() {
        let pts: Vec<(f64, f64)> = (1..10).map(|i| (i as f64, 5.0 * (i as f64).powi(2))).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.intercept - 5f64.ln()).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = (1..10).map(|i| (i as f64, 0.3 / (i as f64).powi(3))).collect();
        assert!((fit_power_law(&pts).unwrap().slope + 3.0).abs() < 1e-12);
        let mut rng = RngStream::new(33, 0);
        let pts: Vec<(f64, f64)> = (1..50)
            .map(|i| {
                let x = i as f64;
                (x, x.powf(1.5) * (1.0 + 0.01 * rng.normal()))
            })
            .collect();
        let s = fit_power_law(&pts).unwrap().slope;
        assert!(s > 1.45 && s < 1.55);
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn registry_entries() {
        let t11 = TargetSpec::student_t(1.0, 1).unwrap();
        let p = drift_profile(AlgorithmId::FvRwm, &t11, None).unwrap();
        assert_eq!(p.phi, RateLaw::Polynomial { exponent: 3.0 });
        assert_eq!(p.psi, RateLaw::Polynomial { exponent: 3.5 });
        let p = drift_profile(AlgorithmId::IvRwm { eta: 0.5 }, &t11, None).unwrap();
        assert_eq!(p.phi, RateLaw::Polynomial { exponent: 1.5 });
        let t14 = TargetSpec::student_t(1.0, 4).unwrap();
        let p = drift_profile(AlgorithmId::Sps, &t14, Some(1.0)).unwrap();
        assert_eq!(p.phi, RateLaw::Polynomial { exponent: 1.5 });
        assert_eq!(p.psi, RateLaw::Polynomial { exponent: 2.0 });
        let e = TargetSpec::new(TargetKind::ExponentialTail, 1.0, 1).unwrap();
        let p = drift_profile(AlgorithmId::IndependenceSampler { k: 2.0 }, &e, None).unwrap();
        assert_eq!(p.phi, RateLaw::Exponential { rate: 1.0 });
        assert_eq!(p.psi, RateLaw::Exponential { rate: 2.0 });
        let p = drift_profile(AlgorithmId::LevyEm { alpha: 1.5 }, &t11, None).unwrap();
        assert_eq!(p.lyapunov.kind, LyapunovKind::LogNorm);
        assert!(drift_profile(AlgorithmId::Sps, &t11, None).is_err());
        assert!(drift_profile(AlgorithmId::FvRwm, &e, None).is_err());
    }

    #[test]
    fn excursions_partition_time() {
        let target = TargetSpec::student_t(1.0, 1).unwrap();
        let mut rng = RngStream::new(34, 0);
        let s = collect_excursions(
            &KernelConfig::rwm_gaussian(2.4),
            &target,
            &LyapunovSpec::abs_norm(),
            5.0,
            200_000,
            &[0.0],
            &mut rng,
        )
        .unwrap();
        assert!(!s.durations.is_empty());
        assert!(s.durations.iter().all(|&d| d >= 1));
        let total: u64 = s.durations.iter().sum::<u64>() + s.time_below + s.censored_length;
        assert_eq!(total, 200_000);
    }

    #[test]
    fn confined_chain_has_no_excursions() {
        let target = TargetSpec::student_t(30.0, 1).unwrap();
        let mut rng = RngStream::new(35, 0);
        let s = collect_excursions(
            &KernelConfig::rwm_gaussian(2.4),
            &target,
            &LyapunovSpec::abs_norm(),
            1e6,
            100_000,
            &[0.0],
            &mut rng,
        )
        .unwrap();
        assert!(s.durations.is_empty());
        assert_eq!(s.censored, 0);
        assert_eq!(s.time_below, 100_000);
    }
}
