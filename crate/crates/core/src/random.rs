//! Reproducible random streams and the variate generators used by the kernels.
//!
//! [`RngStream`] is a ChaCha8 generator whose 64-bit stream id is the chain
//! index, so chain `i` draws the same numbers whichever thread runs it.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream_id: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    key: StreamKey,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            key: StreamKey { seed, stream_id },
            inner,
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    #[inline]
    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    /// A fresh stream seeded from this one, for splitting work into chunks.
    pub fn split(&mut self, chunk: u64) -> RngStream {
        let base = self.inner.next_u64();
        RngStream::new(base, chunk)
    }

    pub(crate) fn fill_normal(&mut self, sigma: f64, out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = sigma * self.normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Log of a `Gamma(shape, 1)` variate.
///
/// Shapes below one use `G(1 + a) U^{1/a}` in log space; the plain product
/// underflows to zero for the small shapes needed by `t(0.05)` proposals.
pub fn log_gamma_variate(rng: &mut RngStream, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape validated by caller");
        let x: f64 = g.sample(rng);
        x.ln()
    } else {
        let g = Gamma::new(1.0 + shape, 1.0).expect("shape validated by caller");
        let x: f64 = g.sample(rng);
        x.ln() + rng.uniform_open().ln() / shape
    }
}

/// Chi-square with (possibly non-integer) `k` degrees of freedom; `k = 0`
/// gives the point mass at zero.
pub fn chi_square(rng: &mut RngStream, k: f64) -> f64 {
    if k == 0.0 {
        return 0.0;
    }
    (2f64.ln() + log_gamma_variate(rng, 0.5 * k)).exp()
}

pub fn sample_gaussian_vec(rng: &mut RngStream, d: usize, sigma: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be at least 1"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
    }
    let mut out = vec![0.0; d];
    rng.fill_normal(sigma, &mut out);
    Ok(out)
}

/// Standard symmetric alpha-stable law with characteristic function
/// `exp(-|t|^alpha)`, sampled by the Chambers-Mallows-Stuck transform.
#[derive(Debug, Clone, Copy)]
pub struct StableSym {
    alpha: f64,
}

impl StableSym {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 2], got {alpha}")));
        }
        Ok(StableSym { alpha })
    }

    #[inline]
    pub fn draw(&self, rng: &mut RngStream) -> f64 {
        let u = PI * (rng.uniform_open() - 0.5);
        if self.alpha == 1.0 {
            return u.tan();
        }
        let a = self.alpha;
        let e = rng.exp1();
        (a * u).sin() / u.cos().powf(1.0 / a) * (((1.0 - a) * u).cos() / e).powf((1.0 - a) / a)
    }
}

pub fn sample_stable_sym(rng: &mut RngStream, alpha: f64) -> Result<f64> {
    Ok(StableSym::new(alpha)?.draw(rng))
}

/// Positive stable law with Laplace transform `exp(-s^a)`, `a` in `(0, 1)`,
/// via Kanter's representation.
#[derive(Debug, Clone, Copy)]
pub struct PositiveStable {
    a: f64,
}

impl PositiveStable {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::param("a", format!("must lie in (0, 1), got {a}")));
        }
        Ok(PositiveStable { a })
    }

    #[inline]
    pub fn draw(&self, rng: &mut RngStream) -> f64 {
        let a = self.a;
        let v = PI * rng.uniform_open();
        let e = rng.exp1();
        (a * v).sin() / v.sin().powf(1.0 / a) * (((1.0 - a) * v).sin() / e).powf((1.0 - a) / a)
    }
}

/// Isotropic alpha-stable vector `sqrt(2A) G` with `A` positive
/// `(alpha/2)`-stable; every one-dimensional projection has characteristic
/// function `exp(-|t|^alpha)`.
#[derive(Debug, Clone, Copy)]
pub struct IsotropicStable {
    sub: PositiveStable,
}

impl IsotropicStable {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 2), got {alpha}")));
        }
        Ok(IsotropicStable {
            sub: PositiveStable::new(0.5 * alpha)?,
        })
    }

    #[inline]
    pub fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        let s = (2.0 * self.sub.draw(rng)).sqrt();
        rng.fill_normal(s, out);
    }
}

pub fn sample_isotropic_stable_vec(rng: &mut RngStream, alpha: f64, d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be at least 1"));
    }
    let law = IsotropicStable::new(alpha)?;
    let mut out = vec![0.0; d];
    law.fill(rng, &mut out);
    Ok(out)
}

/// Multivariate t with `eta` degrees of freedom: `scale * Z * sqrt(eta / W)`.
///
/// The mixing factor is formed in log space. For tiny `eta` it can exceed the
/// f64 range, in which case the draw contains infinities; kernels treat such
/// proposals as rejected.
#[derive(Debug, Clone, Copy)]
pub struct StudentTVec {
    eta: f64,
    scale: f64,
}

impl StudentTVec {
    pub fn new(eta: f64, scale: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::param("eta", format!("must be positive, got {eta}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param("scale", format!("must be positive, got {scale}")));
        }
        Ok(StudentTVec { eta, scale })
    }

    #[inline]
    pub fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        let log_w = 2f64.ln() + log_gamma_variate(rng, 0.5 * self.eta);
        let factor = self.scale * (0.5 * (self.eta.ln() - log_w)).exp();
        rng.fill_normal(1.0, out);
        for o in out.iter_mut() {
            *o *= factor;
        }
    }
}

pub fn sample_student_t_vec(rng: &mut RngStream, eta: f64, d: usize, scale: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be at least 1"));
    }
    let law = StudentTVec::new(eta, scale)?;
    let mut out = vec![0.0; d];
    law.fill(rng, &mut out);
    Ok(out)
}

/// Radial-exponential law with density `~ exp(-k sqrt(1 + |y|^2 / s^2))`.
///
/// The radius is drawn by rejection from `Gamma(d, s/k)` (density
/// `r^{d-1} e^{-kr/s}`), accepting with `exp(-k (sqrt(1 + r^2/s^2) - r/s))`,
/// which is at least `exp(-k)`; the direction is uniform.
#[derive(Debug, Clone, Copy)]
pub struct RadialExponential {
    k: f64,
    scale: f64,
    radius: Gamma<f64>,
}

impl RadialExponential {
    pub fn new(k: f64, d: usize, scale: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::param("k", format!("must be positive, got {k}")));
        }
        if d == 0 {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        let radius = Gamma::new(d as f64, scale / k).map_err(|e| Error::param("k", e.to_string()))?;
        Ok(RadialExponential { k, scale, radius })
    }

    pub fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        let r = loop {
            let r: f64 = self.radius.sample(rng);
            let u = r / self.scale;
            if rng.uniform() < (-self.k * ((1.0 + u * u).sqrt() - u)).exp() {
                break r;
            }
        };
        loop {
            rng.fill_normal(1.0, out);
            let n = out.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 0.0 {
                for o in out.iter_mut() {
                    *o *= r / n;
                }
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empirical_cf(xs: &[f64], t: f64) -> f64 {
        xs.iter().map(|x| (t * x).cos()).sum::<f64>() / xs.len() as f64
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn streams_are_deterministic() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let xa = sample_gaussian_vec(&mut a, 5, 1.0).unwrap();
        let xb = sample_gaussian_vec(&mut b, 5, 1.0).unwrap();
        assert_eq!(xa, xb);
        for _ in 0..100 {
            assert_eq!(
                sample_stable_sym(&mut a, 1.3).unwrap().to_bits(),
                sample_stable_sym(&mut b, 1.3).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let n = 10_000;
        let ua: Vec<f64> = (0..n).map(|_| a.uniform()).collect();
        let ub: Vec<f64> = (0..n).map(|_| b.uniform()).collect();
        let (ma, va) = mean_var(&ua);
        let (mb, vb) = mean_var(&ub);
        let cov = ua.iter().zip(&ub).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64;
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngStream::new(2, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.normal()).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.005);
        assert!(v > 0.99 && v < 1.01);

        let mut per_coord = vec![Vec::new(); 3];
        for _ in 0..200_000 {
            let x = sample_gaussian_vec(&mut rng, 3, 2.0).unwrap();
            for (c, xi) in per_coord.iter_mut().zip(x) {
                c.push(xi);
            }
        }
        for c in &per_coord {
            let (_, v) = mean_var(c);
            assert!((v / 4.0 - 1.0).abs() < 0.02, "variance {v}");
        }
        assert!(sample_gaussian_vec(&mut rng, 0, 1.0).is_err());
    }

    #[test]
    fn stable_alpha_two_is_gaussian_with_variance_two() {
        let mut rng = RngStream::new(3, 0);
        let law = StableSym::new(2.0).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| law.draw(&mut rng)).collect();
        let (_, v) = mean_var(&xs);
        assert!(v > 1.98 && v < 2.02, "variance {v}");
    }

    #[test]
    fn stable_alpha_one_is_centred_cauchy() {
        let mut rng = RngStream::new(4, 0);
        let mut xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_stable_sym(&mut rng, 1.0).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let median = xs[xs.len() / 2];
        assert!(median.abs() < 0.01);
    }

    #[test]
    fn stable_characteristic_function_across_alpha() {
        for (i, alpha) in [0.3, 0.7, 1.0, 1.3, 1.5, 1.7].into_iter().enumerate() {
            let mut rng = RngStream::new(5, i as u64);
            let law = StableSym::new(alpha).unwrap();
            let xs: Vec<f64> = (0..1_000_000).map(|_| law.draw(&mut rng)).collect();
            for t in [0.5, 1.0, 2.0] {
                let err = (empirical_cf(&xs, t) - (-f64::powf(t, alpha)).exp()).abs();
                assert!(err < 0.02, "alpha {alpha} t {t} err {err}");
            }
        }
    }

    #[test]
    fn stable_rejects_bad_alpha() {
        let mut rng = RngStream::new(0, 0);
        assert!(sample_stable_sym(&mut rng, 0.0).is_err());
        assert!(sample_stable_sym(&mut rng, 2.5).is_err());
        assert!(sample_isotropic_stable_vec(&mut rng, 2.0, 2).is_err());
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = RngStream::new(6, 0);
        let law = PositiveStable::new(0.75).unwrap();
        let n = 1_000_000;
        let lt = (0..n).map(|_| (-law.draw(&mut rng)).exp()).sum::<f64>() / n as f64;
        assert!((lt - (-1f64).exp()).abs() < 0.005, "lt {lt}");
    }

    #[test]
    fn isotropic_stable_projection_and_symmetry() {
        let mut rng = RngStream::new(8, 0);
        let law = IsotropicStable::new(1.5).unwrap();
        let d = 3;
        let u = [0.6, 0.0, 0.8];
        let n = 1_000_000;
        let mut proj = Vec::with_capacity(n);
        let mut dir_sum = [0.0; 3];
        let mut x = vec![0.0; d];
        for _ in 0..n {
            law.fill(&mut rng, &mut x);
            proj.push(x.iter().zip(u).map(|(a, b)| a * b).sum::<f64>());
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            for j in 0..d {
                dir_sum[j] += x[j] / r;
            }
        }
        assert!((empirical_cf(&proj, 1.0) - (-1f64).exp()).abs() < 0.03);
        // each coordinate of a uniform direction has variance 1/d
        let se = (1.0 / d as f64 / n as f64).sqrt();
        for s in dir_sum {
            assert!((s / n as f64).abs() < 3.0 * se);
        }
    }

    #[test]
    fn student_t_eta_one_is_cauchy() {
        let mut rng = RngStream::new(9, 0);
        let n = 1_000_000;
        let mut exceed = 0usize;
        for _ in 0..n {
            let x = sample_student_t_vec(&mut rng, 1.0, 1, 1.0).unwrap();
            if x[0].abs() > 10.0 {
                exceed += 1;
            }
        }
        let p = exceed as f64 / n as f64;
        let exact = 2.0 * 0.1f64.atan() / PI;
        assert!((p - exact).abs() < 0.003, "p {p} vs {exact}");
    }

    #[test]
    fn student_t_large_eta_is_near_gaussian() {
        let mut rng = RngStream::new(10, 0);
        let law = StudentTVec::new(1e6, 1.0).unwrap();
        let mut x = [0.0];
        let xs: Vec<f64> = (0..400_000)
            .map(|_| {
                law.fill(&mut rng, &mut x);
                x[0]
            })
            .collect();
        let (_, v) = mean_var(&xs);
        assert!((v - 1.0).abs() < 0.02);
    }

    #[test]
    fn chi_square_mean_matches_degrees_of_freedom() {
        let mut rng = RngStream::new(12, 0);
        for k in [0.1, 1.0, 3.0, 7.5] {
            let n = 400_000;
            let m = (0..n).map(|_| chi_square(&mut rng, k)).sum::<f64>() / n as f64;
            assert!((m / k - 1.0).abs() < 0.03, "k {k} mean {m}");
        }
        assert_eq!(chi_square(&mut rng, 0.0), 0.0);
    }

    #[test]
    fn radial_exponential_matches_one_dimensional_density() {
        // d = 1, k = 1: P(|Y| > 3) = int_3^inf e^{-sqrt(1+y^2)} / int_0^inf e^{-sqrt(1+y^2)}
        let f = |y: f64| (-(1.0 + y * y).sqrt()).exp();
        let tail = crate::quad::adaptive_simpson(&f, 3.0, 60.0, 1e-12);
        let total = crate::quad::adaptive_simpson(&f, 0.0, 60.0, 1e-12);
        let exact = tail / total;
        let law = RadialExponential::new(1.0, 1, 1.0).unwrap();
        let mut rng = RngStream::new(13, 0);
        let mut y = [0.0];
        let n = 1_000_000;
        let mut hits = 0;
        for _ in 0..n {
            law.fill(&mut rng, &mut y);
            if y[0].abs() > 3.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((p - exact).abs() < 5.0 * se, "p {p} exact {exact}");
    }
}
