//! Spherically symmetric heavy-tailed target laws.
//!
//! All densities are unnormalized. Each target depends on `x` only through
//! `|x|^2`, so kernels call the radial fast paths [`TargetSpec::log_density_r2`]
//! and [`TargetSpec::grad_factor_r2`] and skip per-call validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Multivariate t with `v` degrees of freedom: `(1 + |x|^2 / v)^{-(v+d)/2}`.
    StudentT,
    /// Density `~ |x|^{-(v+d)}` in the tails. Shares the Student-t functional
    /// form; kept distinct so callers can state which assumption they rely on.
    PolynomialTail,
    /// `exp(-v sqrt(1 + |x|^2))`: smooth at the origin, `exp(-v|x|)` tails.
    ExponentialTail,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub v: f64,
    pub d: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl TargetSpec {
    pub fn new(kind: TargetKind, v: f64, d: usize) -> Result<Self> {
        let t = TargetSpec {
            kind,
            v,
            d,
            scale: 1.0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn student_t(v: f64, d: usize) -> Result<Self> {
        Self::new(TargetKind::StudentT, v, d)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        self.scale = scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(Error::param("v", format!("must be positive, got {}", self.v)));
        }
        if self.d == 0 {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::param(
                "scale",
                format!("must be positive, got {}", self.scale),
            ));
        }
        Ok(())
    }

    pub fn tail_index(&self) -> f64 {
        self.v
    }

    /// Whether the target has the polynomial `(1 + |x|^2/v)` form.
    pub fn is_polynomial(&self) -> bool {
        matches!(self.kind, TargetKind::StudentT | TargetKind::PolynomialTail)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("target argument"));
        }
        Ok(())
    }

    /// Unnormalized log-density as a function of `r2 = |x|^2`.
    #[inline]
    pub fn log_density_r2(&self, r2: f64) -> f64 {
        let u = r2 / (self.scale * self.scale);
        match self.kind {
            TargetKind::StudentT | TargetKind::PolynomialTail => {
                -0.5 * (self.v + self.d as f64) * (u / self.v).ln_1p()
            }
            TargetKind::ExponentialTail => -self.v * (1.0 + u).sqrt(),
        }
    }

    /// Scalar `c` with `grad log pi(x) = c * x`.
    #[inline]
    pub fn grad_factor_r2(&self, r2: f64) -> f64 {
        let s2 = self.scale * self.scale;
        match self.kind {
            TargetKind::StudentT | TargetKind::PolynomialTail => {
                -(self.v + self.d as f64) / (self.v * s2 + r2)
            }
            TargetKind::ExponentialTail => -self.v / (s2 * (1.0 + r2 / s2).sqrt()),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.log_density_r2(norm2(x)))
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let c = self.grad_factor_r2(norm2(x));
        Ok(x.iter().map(|xi| c * xi).collect())
    }

    /// `P(X <= x)` for a one-dimensional target, by quadrature.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        Ok(Cdf1d::new(self)?.cdf(x))
    }
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum()
}

const CDF_TOL: f64 = 1e-10;

/// One-dimensional CDF with the normalizing constant computed once.
///
/// The half line `[0, inf)` is mapped onto `[0, 1)` by `t = x / (1 + x)` and
/// integrated with adaptive Simpson; negative arguments use symmetry.
#[derive(Debug, Clone)]
pub struct Cdf1d {
    target: TargetSpec,
    half_mass: f64,
}

impl Cdf1d {
    pub fn new(target: &TargetSpec) -> Result<Self> {
        target.validate()?;
        if target.d != 1 {
            return Err(Error::Unsupported(format!(
                "cdf_1d needs a one-dimensional target, got d = {}",
                target.d
            )));
        }
        let mut c = Cdf1d {
            target: *target,
            half_mass: 1.0,
        };
        c.half_mass = c.mass_below_t(1.0);
        Ok(c)
    }

    fn integrand(&self, t: f64) -> f64 {
        // the mapped density is singular or undefined at t = 1; evaluate just inside
        let t = t.min(1.0 - 1e-12);
        let x = t / (1.0 - t);
        let jac = 1.0 / ((1.0 - t) * (1.0 - t));
        self.target.log_density_r2(x * x).exp() * jac
    }

    fn mass_below_t(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        adaptive_simpson(&|s| self.integrand(s), 0.0, t, CDF_TOL)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        let a = x.abs();
        let upper = (0.5 * self.mass_below_t(a / (1.0 + a)) / self.half_mass).min(0.5);
        if x >= 0.0 {
            0.5 + upper
        } else {
            0.5 - upper
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_grad(t: &TargetSpec, x: &[f64], step: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i] += step;
                dn[i] -= step;
                (t.log_density(&up).unwrap() - t.log_density(&dn).unwrap()) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn log_density_examples() {
        let t1 = TargetSpec::student_t(1.0, 1).unwrap();
        assert_eq!(t1.log_density(&[0.0]).unwrap(), 0.0);
        let t3 = TargetSpec::student_t(3.0, 1).unwrap();
        let got = t3.log_density(&[3f64.sqrt()]).unwrap();
        assert!((got + 2.0 * 2f64.ln()).abs() < 1e-12);
        let e = TargetSpec::new(TargetKind::ExponentialTail, 2.0, 1).unwrap();
        let got = e.log_density(&[5.0]).unwrap();
        assert!((got + 2.0 * 26f64.sqrt()).abs() < 1e-12);
        // tail agrees with -v|x| up to the O(1/|x|) core offset
        assert!((got + 10.0).abs() < 2.0 / 5.0);
    }

    #[test]
    fn log_density_rejects_bad_input() {
        let t = TargetSpec::student_t(1.0, 2).unwrap();
        assert!(matches!(
            t.log_density(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(t.log_density(&[1.0, f64::NAN]).is_err());
        assert!(t.log_density(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(TargetSpec::student_t(0.0, 1).is_err());
        assert!(TargetSpec::student_t(-1.0, 1).is_err());
        assert!(TargetSpec::student_t(1.0, 0).is_err());
        assert!(TargetSpec::student_t(1.0, 1).unwrap().with_scale(0.0).is_err());
    }

    #[test]
    fn gradient_examples() {
        let t = TargetSpec::student_t(2.5, 3).unwrap();
        assert_eq!(t.grad_log_density(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        let t1 = TargetSpec::student_t(1.0, 1).unwrap();
        assert_eq!(t1.grad_log_density(&[1.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = TargetSpec::student_t(3.0, 2).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-10.0..10.0)).collect();
            let g = t.grad_log_density(&x).unwrap();
            let fd = fd_grad(&t, &x, 1e-5);
            let gn = norm2(&g).sqrt();
            let err = norm2(&g.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt();
            assert!(err / (1.0 + gn) < 1e-6, "x = {x:?}");
        }
    }

    #[test]
    fn tail_index_is_the_decay_parameter() {
        assert_eq!(TargetSpec::student_t(1.0, 20).unwrap().tail_index(), 1.0);
        assert_eq!(TargetSpec::student_t(3.0, 1).unwrap().tail_index(), 3.0);
        let p = TargetSpec::new(TargetKind::PolynomialTail, 2.5, 4).unwrap();
        assert_eq!(p.tail_index(), 2.5);
    }

    #[test]
    fn tail_exponent_is_v_plus_d() {
        for (v, d) in [(1.0, 1), (3.0, 1), (2.5, 4), (0.5, 20)] {
            for kind in [TargetKind::StudentT, TargetKind::PolynomialTail] {
                let t = TargetSpec::new(kind, v, d).unwrap();
                let at = |r: f64| {
                    let mut x = vec![0.0; d];
                    x[0] = r;
                    t.log_density(&x).unwrap()
                };
                let slope = (at(1e6) - at(1e2)) / (1e6f64.ln() - 1e2f64.ln());
                assert!((slope + (v + d as f64)).abs() < 1e-3, "slope {slope}");
            }
        }
    }

    #[test]
    fn cdf_examples() {
        let c = TargetSpec::student_t(1.0, 1).unwrap();
        assert!((c.cdf_1d(0.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((c.cdf_1d(1.0).unwrap() - 0.75).abs() < 1e-8);
        assert!((c.cdf_1d(-1.0).unwrap() - 0.25).abs() < 1e-8);
        let t3 = TargetSpec::student_t(3.0, 1).unwrap();
        assert!((t3.cdf_1d(0.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(t3.cdf_1d(f64::INFINITY).unwrap(), 1.0);
        assert!(TargetSpec::student_t(1.0, 2).unwrap().cdf_1d(0.0).is_err());
    }

    #[test]
    fn cdf_matches_cauchy_closed_form_and_is_monotone() {
        let c = Cdf1d::new(&TargetSpec::student_t(1.0, 1).unwrap()).unwrap();
        let mut prev = 0.0;
        for i in -200..=200 {
            let x = i as f64 * 0.37;
            let exact = 0.5 + x.atan() / std::f64::consts::PI;
            let got = c.cdf(x);
            assert!((got - exact).abs() < 1e-8, "x = {x}");
            assert!(got >= prev);
            prev = got;
        }
        let e = Cdf1d::new(&TargetSpec::new(TargetKind::ExponentialTail, 1.0, 1).unwrap()).unwrap();
        assert!((e.cdf(1e6) - 1.0).abs() < 1e-9);
    }
}
