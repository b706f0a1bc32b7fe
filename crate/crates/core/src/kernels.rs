//! One-step transition kernels and the shared Metropolis acceptance rule.
//!
//! A [`KernelConfig`] is the user-facing (serializable) description; it is
//! validated once into a [`Kernel`], which owns any precomputed proposal laws.
//! Chains advance in place through [`Kernel::step`]. All log-ratios are formed
//! as differences of log-densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{IsotropicStable, RadialExponential, RngStream, StudentTVec};
use crate::sphere;
use crate::targets::{norm2, TargetKind, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(alias = "fv-rwm", alias = "fv_rwm")]
    RwmGaussian,
    #[serde(alias = "iv-rwm", alias = "iv_rwm")]
    RwmStudentT,
    Mala,
    Ula,
    #[serde(alias = "is", alias = "independence")]
    IndependenceSampler,
    #[serde(alias = "levy-em")]
    LevyEm,
    Sps,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::RwmGaussian => "rwm_gaussian",
            Algorithm::RwmStudentT => "rwm_student_t",
            Algorithm::Mala => "mala",
            Algorithm::Ula => "ula",
            Algorithm::IndependenceSampler => "independence_sampler",
            Algorithm::LevyEm => "levy_em",
            Algorithm::Sps => "sps",
        }
    }
}

/// Drift field `b` of the stable-driven Euler chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `b(x) = -x`
    Linear,
    /// `b(x) = -x |x|^delta`
    Superlinear { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftKind>,
}

impl KernelConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        KernelConfig {
            algorithm,
            h: None,
            proposal_eta: None,
            is_k: None,
            levy_alpha: None,
            drift: None,
        }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    pub fn rwm_gaussian(h: f64) -> Self {
        Self::new(Algorithm::RwmGaussian).with_h(h)
    }

    pub fn rwm_student_t(h: f64, eta: f64) -> Self {
        let mut c = Self::new(Algorithm::RwmStudentT).with_h(h);
        c.proposal_eta = Some(eta);
        c
    }

    pub fn mala(h: f64) -> Self {
        Self::new(Algorithm::Mala).with_h(h)
    }

    pub fn ula(h: f64) -> Self {
        Self::new(Algorithm::Ula).with_h(h)
    }

    pub fn sps(h: f64) -> Self {
        Self::new(Algorithm::Sps).with_h(h)
    }

    pub fn independence(k: f64) -> Self {
        let mut c = Self::new(Algorithm::IndependenceSampler);
        c.is_k = Some(k);
        c
    }

    pub fn levy_em(h: f64, alpha: f64, drift: DriftKind) -> Self {
        let mut c = Self::new(Algorithm::LevyEm).with_h(h);
        c.levy_alpha = Some(alpha);
        c.drift = Some(drift);
        c
    }

    /// Step size used when `h` is not given.
    pub fn default_h(algorithm: Algorithm, d: usize) -> f64 {
        let d = d as f64;
        match algorithm {
            Algorithm::RwmGaussian | Algorithm::RwmStudentT => 2.4 / d.sqrt(),
            Algorithm::Mala | Algorithm::Ula => 0.1,
            Algorithm::Sps => 1.0 / d.sqrt(),
            Algorithm::LevyEm => 0.01,
            Algorithm::IndependenceSampler => 1.0,
        }
    }

    pub fn resolved_h(&self, d: usize) -> f64 {
        self.h.unwrap_or_else(|| Self::default_h(self.algorithm, d))
    }
}

fn require(name: &'static str, v: Option<f64>, alg: Algorithm) -> Result<f64> {
    v.ok_or_else(|| Error::param(name, format!("required for algorithm `{}`", alg.name())))
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

/// Proposal of the independence sampler: same family as the target, decay `k`.
#[derive(Debug, Clone, Copy)]
pub enum IsProposal {
    Polynomial { law: StudentTVec, k: f64, scale: f64 },
    Exponential { law: RadialExponential, k: f64, scale: f64 },
}

impl IsProposal {
    #[inline]
    fn log_q_r2(&self, r2: f64, d: usize) -> f64 {
        match *self {
            IsProposal::Polynomial { k, scale, .. } => {
                -0.5 * (k + d as f64) * (r2 / (scale * scale * k)).ln_1p()
            }
            IsProposal::Exponential { k, scale, .. } => -k * (1.0 + r2 / (scale * scale)).sqrt(),
        }
    }

    fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        match self {
            IsProposal::Polynomial { law, .. } => law.fill(rng, out),
            IsProposal::Exponential { law, .. } => law.fill(rng, out),
        }
    }
}

/// A validated kernel.
#[derive(Debug, Clone)]
pub enum Kernel {
    RwmGaussian { h: f64 },
    RwmStudentT { h: f64, eta: f64, law: StudentTVec },
    Mala { h: f64 },
    Ula { h: f64 },
    Independence { k: f64, proposal: IsProposal },
    LevyEm { h: f64, alpha: f64, noise_scale: f64, law: IsotropicStable, drift: DriftKind },
    Sps { h: f64 },
}

impl Kernel {
    pub fn new(cfg: &KernelConfig, target: &TargetSpec) -> Result<Self> {
        target.validate()?;
        let alg = cfg.algorithm;
        let h = positive("h", cfg.resolved_h(target.d))?;
        Ok(match alg {
            Algorithm::RwmGaussian => Kernel::RwmGaussian { h },
            Algorithm::RwmStudentT => {
                let eta = positive("proposal_eta", require("proposal_eta", cfg.proposal_eta, alg)?)?;
                Kernel::RwmStudentT {
                    h,
                    eta,
                    law: StudentTVec::new(eta, h)?,
                }
            }
            Algorithm::Mala => Kernel::Mala { h },
            Algorithm::Ula => Kernel::Ula { h },
            Algorithm::Sps => Kernel::Sps { h },
            Algorithm::IndependenceSampler => {
                let k = positive("is_k", require("is_k", cfg.is_k, alg)?)?;
                let proposal = match target.kind {
                    TargetKind::StudentT | TargetKind::PolynomialTail => IsProposal::Polynomial {
                        law: StudentTVec::new(k, target.scale)?,
                        k,
                        scale: target.scale,
                    },
                    TargetKind::ExponentialTail => IsProposal::Exponential {
                        law: RadialExponential::new(k, target.d, target.scale)?,
                        k,
                        scale: target.scale,
                    },
                };
                Kernel::Independence { k, proposal }
            }
            Algorithm::LevyEm => {
                let alpha = require("levy_alpha", cfg.levy_alpha, alg)?;
                if !(alpha > 1.0 && alpha < 2.0) {
                    return Err(Error::param(
                        "levy_alpha",
                        format!("must lie in (1, 2), got {alpha}"),
                    ));
                }
                let drift = cfg
                    .drift
                    .ok_or_else(|| Error::param("drift", "required for algorithm `levy_em`"))?;
                if let DriftKind::Superlinear { delta } = drift {
                    positive("drift.delta", delta)?;
                }
                Kernel::LevyEm {
                    h,
                    alpha,
                    noise_scale: h.powf(1.0 / alpha),
                    law: IsotropicStable::new(alpha)?,
                    drift,
                }
            }
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Kernel::RwmGaussian { .. } => Algorithm::RwmGaussian,
            Kernel::RwmStudentT { .. } => Algorithm::RwmStudentT,
            Kernel::Mala { .. } => Algorithm::Mala,
            Kernel::Ula { .. } => Algorithm::Ula,
            Kernel::Independence { .. } => Algorithm::IndependenceSampler,
            Kernel::LevyEm { .. } => Algorithm::LevyEm,
            Kernel::Sps { .. } => Algorithm::Sps,
        }
    }

    pub fn is_metropolis(&self) -> bool {
        !matches!(self, Kernel::Ula { .. } | Kernel::LevyEm { .. })
    }

    /// Advances `state` by one transition. Returns whether the move was
    /// accepted (unadjusted kernels always move).
    ///
    /// Unadjusted kernels return [`Error::Diverged`] once the position stops
    /// being finite; the state is left at the non-finite value.
    pub fn step(&self, state: &mut ChainState, target: &TargetSpec, rng: &mut RngStream) -> Result<bool> {
        let accepted = match self {
            Kernel::RwmGaussian { h } => {
                let h = *h;
                step_rwm(state, target, rng, |rng, out| rng.fill_normal(h, out))?
            }
            Kernel::RwmStudentT { law, .. } => step_rwm(state, target, rng, |rng, out| law.fill(rng, out))?,
            Kernel::Mala { h } => step_mala(state, *h, target, rng)?,
            Kernel::Ula { h } => step_ula(state, *h, target, rng)?,
            Kernel::Independence { proposal, .. } => step_is(state, proposal, target, rng)?,
            Kernel::LevyEm {
                h,
                noise_scale,
                law,
                drift,
                ..
            } => step_levy_em(state, *h, *noise_scale, law, *drift, rng)?,
            Kernel::Sps { h } => sphere::step_sps(state, *h, target, rng)?,
        };
        state.steps += 1;
        if accepted {
            state.accepts += 1;
        }
        Ok(accepted)
    }
}

/// Current position of a chain with cached log-density and gradient.
///
/// `log_pi` always equals the target log-density at `x`, except for the
/// stable-driven Euler chain, which has no target and stores NaN.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub log_pi: f64,
    pub grad: Option<Vec<f64>>,
    pub steps: u64,
    pub accepts: u64,
    pub(crate) proposal: Vec<f64>,
    pub(crate) proposal_grad: Vec<f64>,
}

impl ChainState {
    pub fn new(x: Vec<f64>, target: &TargetSpec) -> Result<Self> {
        let log_pi = target.log_density(&x)?;
        let d = x.len();
        Ok(ChainState {
            x,
            log_pi,
            grad: None,
            steps: 0,
            accepts: 0,
            proposal: vec![0.0; d],
            proposal_grad: vec![0.0; d],
        })
    }

    pub fn origin(target: &TargetSpec) -> Self {
        Self::new(vec![0.0; target.d], target).expect("origin is a valid point")
    }

    /// Moves the chain to `x`, refreshing the caches. Counters are kept.
    pub fn set_position(&mut self, x: &[f64], target: &TargetSpec) -> Result<()> {
        self.log_pi = target.log_density(x)?;
        self.x.clear();
        self.x.extend_from_slice(x);
        self.grad = None;
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepts as f64 / self.steps as f64
        }
    }

    /// Makes the proposal buffer the current position.
    pub(crate) fn accept_proposal(&mut self, log_pi: f64) {
        std::mem::swap(&mut self.x, &mut self.proposal);
        self.log_pi = log_pi;
    }

    fn ensure_grad(&mut self, target: &TargetSpec) -> &Vec<f64> {
        if self.grad.is_none() {
            let c = target.grad_factor_r2(norm2(&self.x));
            self.grad = Some(self.x.iter().map(|xi| c * xi).collect());
        }
        self.grad.as_ref().unwrap()
    }
}

/// `min(1, exp(log_ratio))`.
#[inline]
pub fn accept_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Metropolis accept/reject: true with probability `min(1, exp(log_ratio))`.
///
/// `+inf` (the `pi(x) q(x, y) = 0` branch) always accepts; NaN is an error.
#[inline]
pub fn mh_accept(log_ratio: f64, rng: &mut RngStream) -> Result<bool> {
    if log_ratio.is_nan() {
        return Err(Error::NonFinite("Metropolis log-ratio"));
    }
    if log_ratio >= 0.0 {
        return Ok(true);
    }
    Ok(rng.uniform_open().ln() < log_ratio)
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|c| c.is_finite())
}

fn step_rwm<F>(state: &mut ChainState, target: &TargetSpec, rng: &mut RngStream, mut noise: F) -> Result<bool>
where
    F: FnMut(&mut RngStream, &mut [f64]),
{
    let mut y = std::mem::take(&mut state.proposal);
    y.resize(state.x.len(), 0.0);
    noise(rng, &mut y);
    for (yi, xi) in y.iter_mut().zip(&state.x) {
        *yi += xi;
    }
    state.proposal = y;
    if !all_finite(&state.proposal) {
        // proposals beyond f64 range have zero target density
        rng.uniform();
        return Ok(false);
    }
    let log_pi_y = target.log_density_r2(norm2(&state.proposal));
    if mh_accept(log_pi_y - state.log_pi, rng)? {
        state.accept_proposal(log_pi_y);
        state.grad = None;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Log proposal density of MALA from `a` to `b`, up to a constant:
/// `-|b - a - h grad(a)|^2 / (4h)`.
pub fn mala_log_q(target: &TargetSpec, h: f64, a: &[f64], b: &[f64]) -> f64 {
    let c = target.grad_factor_r2(norm2(a));
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| {
            let m = bi - ai - h * c * ai;
            m * m
        })
        .sum();
    -s / (4.0 * h)
}

/// Log acceptance probability of MALA for the move `x -> y`.
pub fn mala_log_alpha(target: &TargetSpec, h: f64, x: &[f64], y: &[f64]) -> f64 {
    let r = target.log_density_r2(norm2(y)) - target.log_density_r2(norm2(x)) + mala_log_q(target, h, y, x)
        - mala_log_q(target, h, x, y);
    r.min(0.0)
}

fn step_mala(state: &mut ChainState, h: f64, target: &TargetSpec, rng: &mut RngStream) -> Result<bool> {
    let d = state.x.len();
    let sd = (2.0 * h).sqrt();
    state.ensure_grad(target);
    let mut y = std::mem::take(&mut state.proposal);
    y.resize(d, 0.0);
    let mut z2 = 0.0;
    {
        let gx = state.grad.as_ref().unwrap();
        for i in 0..d {
            let z = rng.normal();
            z2 += z * z;
            y[i] = state.x[i] + h * gx[i] + sd * z;
        }
    }
    if !all_finite(&y) {
        state.proposal = y;
        rng.uniform();
        return Ok(false);
    }
    let r2y = norm2(&y);
    let log_pi_y = target.log_density_r2(r2y);
    let cy = target.grad_factor_r2(r2y);
    let mut gy = std::mem::take(&mut state.proposal_grad);
    gy.resize(d, 0.0);
    let mut back = 0.0;
    for i in 0..d {
        gy[i] = cy * y[i];
        let m = state.x[i] - y[i] - h * gy[i];
        back += m * m;
    }
    // log q(x -> y) = -|sqrt(2h) z|^2 / (4h) = -|z|^2 / 2
    let log_ratio = log_pi_y - state.log_pi - back / (4.0 * h) + 0.5 * z2;
    state.proposal = y;
    if mh_accept(log_ratio, rng)? {
        state.accept_proposal(log_pi_y);
        let old = state.grad.replace(gy).unwrap();
        state.proposal_grad = old;
        Ok(true)
    } else {
        state.proposal_grad = gy;
        Ok(false)
    }
}

/// `x + h grad + sqrt(2h) z`, written into `out`.
pub fn ula_update(x: &[f64], grad: &[f64], h: f64, z: &[f64], out: &mut [f64]) {
    let sd = (2.0 * h).sqrt();
    for i in 0..x.len() {
        out[i] = x[i] + h * grad[i] + sd * z[i];
    }
}

fn step_ula(state: &mut ChainState, h: f64, target: &TargetSpec, rng: &mut RngStream) -> Result<bool> {
    let sd = (2.0 * h).sqrt();
    let c = target.grad_factor_r2(norm2(&state.x));
    for xi in state.x.iter_mut() {
        *xi += h * c * *xi + sd * rng.normal();
    }
    state.grad = None;
    if !all_finite(&state.x) {
        return Err(Error::Diverged { step: state.steps + 1 });
    }
    state.log_pi = target.log_density_r2(norm2(&state.x));
    Ok(true)
}

fn step_is(state: &mut ChainState, proposal: &IsProposal, target: &TargetSpec, rng: &mut RngStream) -> Result<bool> {
    let d = state.x.len();
    let mut y = std::mem::take(&mut state.proposal);
    y.resize(d, 0.0);
    proposal.fill(rng, &mut y);
    state.proposal = y;
    if !all_finite(&state.proposal) {
        rng.uniform();
        return Ok(false);
    }
    let r2y = norm2(&state.proposal);
    let log_pi_y = target.log_density_r2(r2y);
    let log_ratio = is_log_ratio(proposal, d, state.log_pi, norm2(&state.x), log_pi_y, r2y);
    if mh_accept(log_ratio, rng)? {
        state.accept_proposal(log_pi_y);
        state.grad = None;
        Ok(true)
    } else {
        Ok(false)
    }
}

#[inline]
fn is_log_ratio(proposal: &IsProposal, d: usize, log_pi_x: f64, r2x: f64, log_pi_y: f64, r2y: f64) -> f64 {
    (log_pi_y - log_pi_x) + (proposal.log_q_r2(r2x, d) - proposal.log_q_r2(r2y, d))
}

/// Acceptance probability of the independence sampler for `x -> y`.
pub fn is_acceptance_probability(kernel: &Kernel, target: &TargetSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    let Kernel::Independence { proposal, .. } = kernel else {
        return Err(Error::Unsupported("not an independence sampler".into()));
    };
    let lx = target.log_density(x)?;
    let ly = target.log_density(y)?;
    Ok(accept_probability(is_log_ratio(
        proposal,
        target.d,
        lx,
        norm2(x),
        ly,
        norm2(y),
    )))
}

/// Draws one independence-sampler proposal.
pub fn is_propose(kernel: &Kernel, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
    let Kernel::Independence { proposal, .. } = kernel else {
        return Err(Error::Unsupported("not an independence sampler".into()));
    };
    proposal.fill(rng, out);
    Ok(())
}

#[inline]
fn drift_factor(drift: DriftKind, r2: f64) -> f64 {
    match drift {
        DriftKind::Linear => -1.0,
        DriftKind::Superlinear { delta } => -(r2.sqrt().powf(delta)),
    }
}

/// `x + h b(x) + h^{1/alpha} z`, written into `out`.
pub fn levy_em_update(x: &[f64], h: f64, alpha: f64, drift: DriftKind, z: &[f64], out: &mut [f64]) {
    let c = drift_factor(drift, norm2(x));
    let s = h.powf(1.0 / alpha);
    for i in 0..x.len() {
        out[i] = x[i] + h * c * x[i] + s * z[i];
    }
}

fn step_levy_em(
    state: &mut ChainState,
    h: f64,
    noise_scale: f64,
    law: &IsotropicStable,
    drift: DriftKind,
    rng: &mut RngStream,
) -> Result<bool> {
    let c = drift_factor(drift, norm2(&state.x));
    let mut z = std::mem::take(&mut state.proposal);
    z.resize(state.x.len(), 0.0);
    law.fill(rng, &mut z);
    for (xi, zi) in state.x.iter_mut().zip(&z) {
        *xi += h * c * *xi + noise_scale * zi;
    }
    state.proposal = z;
    state.log_pi = f64::NAN;
    state.grad = None;
    if !all_finite(&state.x) {
        return Err(Error::Diverged { step: state.steps + 1 });
    }
    Ok(true)
}
