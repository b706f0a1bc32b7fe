//! Theoretical verdicts for the samplers: CLT validity for ergodic averages,
//! polynomial convergence-rate exponents and tail-exploration type.
//!
//! Every CLT statement has the same shape. Each algorithm carries a
//! threshold `beta` (2 for fv-RWM, MALA and ULA; `eta` for iv-RWM; `d/2` for
//! SPS; `k - v` for the independence sampler). For a target with tail index
//! `v`, the CLT for a test function `g ~ |x|^s` fails when
//! `2s in (v - beta, v)` and holds below `v - beta`; bounded `g` behaves like
//! `s = 0`. Which side is proved here and which is quoted from earlier work is
//! recorded in the [`Source`] of each verdict.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::DriftKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "alg", rename_all = "snake_case")]
pub enum AlgorithmId {
    FvRwm,
    IvRwm { eta: f64 },
    Mala,
    Ula,
    Sps,
    IndependenceSampler { k: f64 },
    LevyEm { alpha: f64 },
}

impl AlgorithmId {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlgorithmId::IvRwm { eta } if !(eta > 0.0 && eta < 2.0) => {
                Err(Error::param("eta", format!("must lie in (0, 2), got {eta}")))
            }
            AlgorithmId::IndependenceSampler { k } if !(k.is_finite() && k > 0.0) => {
                Err(Error::param("k", format!("must be positive, got {k}")))
            }
            AlgorithmId::LevyEm { alpha } if !(alpha > 1.0 && alpha < 2.0) => {
                Err(Error::param("alpha", format!("must lie in (1, 2), got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AlgorithmId::FvRwm => "fv-rwm".into(),
            AlgorithmId::IvRwm { eta } => format!("iv-rwm(eta={eta})"),
            AlgorithmId::Mala => "mala".into(),
            AlgorithmId::Ula => "ula".into(),
            AlgorithmId::Sps => "sps".into(),
            AlgorithmId::IndependenceSampler { k } => format!("is(k={k})"),
            AlgorithmId::LevyEm { alpha } => format!("levy-em(alpha={alpha})"),
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Growth class of the test function `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "growth", rename_all = "snake_case")]
pub enum CltQuery {
    Bounded,
    /// `g(x) ~ |x|^s`
    Power { s: f64 },
    /// `g(x) ~ exp(s |x|)`, for exponentially tailed targets
    ExponentialGrowth { s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Holds,
    Fails,
    Boundary,
    OutsideTheory,
}

/// Whether a verdict is established by the drift-condition theory in this
/// crate or quoted from earlier literature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Proved,
    LiteratureCited,
    None,
}

/// Anchor naming the result a verdict rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Citation {
    FvRwmCltPower,
    FvRwmCltBounded,
    IvRwmCltPower,
    IvRwmCltBounded,
    MalaCltPower,
    MalaCltBounded,
    UlaCltPower,
    UlaCltBounded,
    SpsCltPower,
    SpsCltBounded,
    SpsUniformErgodicity,
    IsPolyCltPower,
    IsPolyCltBounded,
    IsExpCltExponential,
    IsUniformErgodicity,
    IsCltCharacterisation,
    RwmPolynomialDrift,
    LevyEmInvariantTail,
    LevyEmTransience,
    NoApplicableResult,
}

impl Citation {
    pub const ALL: [Citation; 20] = [
        Citation::FvRwmCltPower,
        Citation::FvRwmCltBounded,
        Citation::IvRwmCltPower,
        Citation::IvRwmCltBounded,
        Citation::MalaCltPower,
        Citation::MalaCltBounded,
        Citation::UlaCltPower,
        Citation::UlaCltBounded,
        Citation::SpsCltPower,
        Citation::SpsCltBounded,
        Citation::SpsUniformErgodicity,
        Citation::IsPolyCltPower,
        Citation::IsPolyCltBounded,
        Citation::IsExpCltExponential,
        Citation::IsUniformErgodicity,
        Citation::IsCltCharacterisation,
        Citation::RwmPolynomialDrift,
        Citation::LevyEmInvariantTail,
        Citation::LevyEmTransience,
        Citation::NoApplicableResult,
    ];

    pub fn anchor(&self) -> &'static str {
        match self {
            Citation::FvRwmCltPower => "fv-rwm/clt-power",
            Citation::FvRwmCltBounded => "fv-rwm/clt-bounded",
            Citation::IvRwmCltPower => "iv-rwm/clt-power",
            Citation::IvRwmCltBounded => "iv-rwm/clt-bounded",
            Citation::MalaCltPower => "mala/clt-power",
            Citation::MalaCltBounded => "mala/clt-bounded",
            Citation::UlaCltPower => "ula/asymptotic-variance-power",
            Citation::UlaCltBounded => "ula/asymptotic-variance-bounded",
            Citation::SpsCltPower => "sps/clt-power",
            Citation::SpsCltBounded => "sps/clt-bounded",
            Citation::SpsUniformErgodicity => "sps/uniform-ergodicity",
            Citation::IsPolyCltPower => "is-polynomial/clt-power",
            Citation::IsPolyCltBounded => "is-polynomial/clt-bounded",
            Citation::IsExpCltExponential => "is-exponential/clt-exponential",
            Citation::IsUniformErgodicity => "is/uniform-ergodicity",
            Citation::IsCltCharacterisation => "is/clt-characterisation",
            Citation::RwmPolynomialDrift => "rwm-mala/polynomial-drift",
            Citation::LevyEmInvariantTail => "levy-em/invariant-tail",
            Citation::LevyEmTransience => "levy-em/transience",
            Citation::NoApplicableResult => "none",
        }
    }
}

impl fmt::Display for Citation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.anchor())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub citation: Citation,
    pub source: Source,
    /// Human-readable statement in the wording of the governing result.
    pub statement: String,
}

impl Verdict {
    fn new(status: Status, citation: Citation, source: Source, ula: bool) -> Self {
        let statement = match (status, ula) {
            (Status::Holds, _) => "CLT holds",
            (Status::Fails, false) => "CLT fails",
            (Status::Fails, true) => "asymptotic variance is infinite",
            (Status::Boundary, _) => "boundary case: not resolved by theory",
            (Status::OutsideTheory, _) => "no applicable result",
        };
        Verdict {
            status,
            citation,
            source,
            statement: statement.into(),
        }
    }

    fn outside() -> Self {
        Self::new(Status::OutsideTheory, Citation::NoApplicableResult, Source::None, false)
    }
}

fn check_v(v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param("v", format!("must be positive, got {v}")))
    }
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        Err(Error::param("d", "dimension must be at least 1"))
    } else {
        Ok(())
    }
}

/// CLT threshold `beta` of an algorithm: the bounded-`g` CLT fails for
/// `v < beta` and holds for `v > beta`. `None` when the algorithm is
/// uniformly ergodic for this target or has no CLT theory.
pub fn clt_threshold(alg: AlgorithmId, v: f64, d: usize) -> Option<f64> {
    match alg {
        AlgorithmId::FvRwm | AlgorithmId::Mala | AlgorithmId::Ula => Some(2.0),
        AlgorithmId::IvRwm { eta } => Some(eta),
        AlgorithmId::Sps if v >= d as f64 => None,
        AlgorithmId::Sps => Some(0.5 * d as f64),
        AlgorithmId::IndependenceSampler { k } if k <= v => None,
        AlgorithmId::IndependenceSampler { k } => Some(k - v),
        AlgorithmId::LevyEm { .. } => None,
    }
}

fn compare(a: f64, b: f64) -> Ordering {
    // exact comparison on purpose: equality is the boundary case
    a.partial_cmp(&b).expect("finite inputs")
}

/// CLT verdict for the ergodic average of `g` under `alg` targeting a law
/// with tail index `v` in dimension `d`.
pub fn clt_verdict(alg: AlgorithmId, v: f64, d: usize, q: CltQuery) -> Result<Verdict> {
    alg.validate()?;
    check_v(v)?;
    check_d(d)?;
    let s = match q {
        CltQuery::Bounded => 0.0,
        CltQuery::Power { s } | CltQuery::ExponentialGrowth { s } => s,
    };
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::param("s", format!("must be non-negative, got {s}")));
    }
    let ula = matches!(alg, AlgorithmId::Ula);
    let exp_query = matches!(q, CltQuery::ExponentialGrowth { .. });
    let bounded = s == 0.0;

    let (power_cite, bounded_cite, holds_source) = match alg {
        AlgorithmId::FvRwm => (Citation::FvRwmCltPower, Citation::FvRwmCltBounded, Source::LiteratureCited),
        AlgorithmId::IvRwm { .. } => (Citation::IvRwmCltPower, Citation::IvRwmCltBounded, Source::LiteratureCited),
        AlgorithmId::Mala => (Citation::MalaCltPower, Citation::MalaCltBounded, Source::LiteratureCited),
        AlgorithmId::Ula => (Citation::UlaCltPower, Citation::UlaCltBounded, Source::LiteratureCited),
        AlgorithmId::Sps => (Citation::SpsCltPower, Citation::SpsCltBounded, Source::Proved),
        AlgorithmId::IndependenceSampler { .. } if exp_query => (
            Citation::IsExpCltExponential,
            Citation::IsPolyCltBounded,
            Source::LiteratureCited,
        ),
        AlgorithmId::IndependenceSampler { .. } => {
            (Citation::IsPolyCltPower, Citation::IsPolyCltBounded, Source::LiteratureCited)
        }
        AlgorithmId::LevyEm { .. } => return Ok(Verdict::outside()),
    };
    if exp_query && !bounded && !matches!(alg, AlgorithmId::IndependenceSampler { .. }) {
        // exponential moments do not exist under polynomial tails
        return Ok(Verdict::outside());
    }
    // g must be square integrable
    if 2.0 * s >= v {
        return Ok(Verdict::outside());
    }

    let Some(beta) = clt_threshold(alg, v, d) else {
        let cite = match alg {
            AlgorithmId::Sps => Citation::SpsUniformErgodicity,
            _ => Citation::IsUniformErgodicity,
        };
        return Ok(Verdict::new(Status::Holds, cite, Source::LiteratureCited, false));
    };

    let (cite, holds_cite) = if bounded {
        (bounded_cite, bounded_cite)
    } else {
        (power_cite, power_cite)
    };
    let holds_cite = match (alg, holds_source) {
        (AlgorithmId::IndependenceSampler { .. }, _) => Citation::IsCltCharacterisation,
        (AlgorithmId::Sps, _) => holds_cite,
        _ => Citation::RwmPolynomialDrift,
    };
    // fails for 2s in (v - beta, v); holds below
    Ok(match compare(2.0 * s, v - beta) {
        Ordering::Greater => Verdict::new(Status::Fails, cite, Source::Proved, ula),
        Ordering::Equal => Verdict::new(Status::Boundary, cite, Source::None, ula),
        Ordering::Less => Verdict::new(Status::Holds, holds_cite, holds_source, ula),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TvRate {
    /// `||P^n(x, .) - pi||_TV` decays no faster than `n^{-rho}`
    Polynomial(f64),
    UniformlyErgodic,
}

impl TvRate {
    fn rank_key(&self) -> f64 {
        match self {
            TvRate::Polynomial(r) => *r,
            TvRate::UniformlyErgodic => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpType {
    ManyJump,
    SingleJump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub algorithm: AlgorithmId,
    pub v: f64,
    pub d: usize,
    pub tv_exponent: TvRate,
    /// Denominator of the rate exponents; `None` when uniformly ergodic.
    pub beta: Option<f64>,
    pub jump_type: JumpType,
}

impl RatePrediction {
    /// Exponent of the lower bound in `f_p`-variation, `(v - p) / beta`,
    /// for `0 <= p < v`.
    pub fn f_variation_exponent(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0 && p < self.v) {
            return Err(Error::param("p", format!("must lie in [0, v) = [0, {}), got {p}", self.v)));
        }
        let beta = self.polynomial_beta()?;
        Ok((self.v - p) / beta)
    }

    /// Exponent of the lower bound in `W_p`, `(v - p) / (beta p)`, for
    /// `1 <= p < v`.
    pub fn wasserstein_exponent(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0 && p < self.v) {
            return Err(Error::param("p", format!("must lie in [1, v) = [1, {}), got {p}", self.v)));
        }
        let beta = self.polynomial_beta()?;
        Ok((self.v - p) / (beta * p))
    }

    fn polynomial_beta(&self) -> Result<f64> {
        self.beta
            .ok_or_else(|| Error::Unsupported("chain is uniformly ergodic; rates are geometric".into()))
    }
}

/// Rate exponents and jump type.
pub fn rate_prediction(alg: AlgorithmId, v: f64, d: usize) -> Result<RatePrediction> {
    alg.validate()?;
    check_v(v)?;
    check_d(d)?;
    let (beta, jump_type) = match alg {
        AlgorithmId::FvRwm | AlgorithmId::Mala | AlgorithmId::Ula => (Some(2.0), JumpType::ManyJump),
        AlgorithmId::IvRwm { eta } => (Some(eta), JumpType::ManyJump),
        AlgorithmId::Sps if v >= d as f64 => (None, JumpType::SingleJump),
        AlgorithmId::Sps => (Some(d as f64 - v), JumpType::SingleJump),
        AlgorithmId::IndependenceSampler { k } if k <= v => {
            return Err(Error::Unsupported(format!(
                "independence sampler with k = {k} <= v = {v} has no polynomial rate"
            )))
        }
        AlgorithmId::IndependenceSampler { k } => (Some(k - v), JumpType::SingleJump),
        AlgorithmId::LevyEm { .. } => {
            return Err(Error::Unsupported(
                "the stable-driven Euler chain has no rate prediction; see levy_classification".into(),
            ))
        }
    };
    let tv_exponent = match beta {
        Some(b) => TvRate::Polynomial(v / b),
        None => TvRate::UniformlyErgodic,
    };
    Ok(RatePrediction {
        algorithm: alg,
        v,
        d,
        tv_exponent,
        beta,
        jump_type,
    })
}

/// Width of the range of `2s` for which the CLT holds; `v` when uniformly
/// ergodic.
fn clt_window_width(alg: AlgorithmId, v: f64, d: usize) -> f64 {
    match clt_threshold(alg, v, d) {
        Some(beta) => (v - beta).max(0.0),
        None => v,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub algorithm: AlgorithmId,
    pub tv_exponent: TvRate,
    pub clt_window: f64,
}

/// Candidates ordered from fastest to slowest predicted convergence;
/// uniformly ergodic chains first, ties broken by the wider CLT window.
pub fn best_algorithm(v: f64, d: usize, candidates: &[AlgorithmId]) -> Result<Vec<Ranked>> {
    if candidates.is_empty() {
        return Err(Error::param("candidates", "need at least one algorithm"));
    }
    let mut ranked = candidates
        .iter()
        .map(|&a| {
            Ok(Ranked {
                algorithm: a,
                tv_exponent: rate_prediction(a, v, d)?.tv_exponent,
                clt_window: clt_window_width(a, v, d),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // stable sort keeps input order for complete ties
    ranked.sort_by(|a, b| {
        b.tv_exponent
            .rank_key()
            .total_cmp(&a.tv_exponent.rank_key())
            .then(b.clt_window.total_cmp(&a.clt_window))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevyStatus {
    /// Any invariant law has `pi_h(|x| > r) >= C r^{-alpha - eps}`: infinite
    /// `alpha`-th moment, whatever the target.
    HeavyTailedInvariant,
    Transient,
    OutsideTheory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyVerdict {
    pub status: LevyStatus,
    pub citation: Citation,
    /// Upper bound on the tail index of the invariant law, when one exists.
    pub tail_index_bound: Option<f64>,
}

/// Classification of the stable-driven Euler chain. Linear growth needs
/// `h < 1/(2C)` with `|b(x)| <= C(|x| + 1)`; for `b(x) = -x` that is `h < 1/2`.
pub fn levy_classification(alpha: f64, drift: DriftKind, h: f64) -> Result<LevyVerdict> {
    AlgorithmId::LevyEm { alpha }.validate()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::param("h", format!("must be positive, got {h}")));
    }
    Ok(match drift {
        DriftKind::Linear if h < 0.5 => LevyVerdict {
            status: LevyStatus::HeavyTailedInvariant,
            citation: Citation::LevyEmInvariantTail,
            tail_index_bound: Some(alpha),
        },
        DriftKind::Linear => LevyVerdict {
            status: LevyStatus::OutsideTheory,
            citation: Citation::NoApplicableResult,
            tail_index_bound: None,
        },
        DriftKind::Superlinear { delta } => {
            if !(delta > 0.0) {
                return Err(Error::param("delta", format!("must be positive, got {delta}")));
            }
            LevyVerdict {
                status: LevyStatus::Transient,
                citation: Citation::LevyEmTransience,
                tail_index_bound: None,
            }
        }
    })
}
