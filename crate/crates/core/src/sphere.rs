//! Stereographic projection and the stereographic projection sampler.
//!
//! `R^d` is identified with the unit sphere `S^d` in `R^{d+1}` minus the North
//! Pole `(0, ..., 0, 1)`:
//!
//! ```text
//! z_i     = 2 x_i / (1 + |x|^2)
//! z_{d+1} = (|x|^2 - 1) / (|x|^2 + 1)
//! x_i     = z_i / (1 - z_{d+1})
//! ```
//!
//! so that `1 + |x|^2 = 2 / (1 - z_{d+1})`.

use crate::error::{Error, Result};
use crate::kernels::{mh_accept, ChainState};
use crate::random::{chi_square, RngStream};
use crate::targets::{norm2, TargetSpec};

/// Proposals with `1 - z_{d+1}` below this are rejected outright; their
/// Euclidean image would be beyond `|x| ~ 1.4e7`, where the target mass is
/// negligible for every supported tail.
pub const NORTH_POLE_GUARD: f64 = 1e-14;

/// A point of the unit sphere `S^d`, stored as `d + 1` coordinates with the
/// height last.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    /// Normalizes `coords` onto the sphere.
    pub fn new(mut coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::param("coords", "sphere point needs at least two coordinates"));
        }
        let n = norm2(&coords).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate("cannot normalize a zero or non-finite vector"));
        }
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(SpherePoint { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Dimension `d` of the sphere (one less than the number of coordinates).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// Last coordinate `z`.
    pub fn height(&self) -> f64 {
        self.coords[self.dim()]
    }

    /// `1 - z`, accurate near the North Pole.
    pub fn one_minus_height(&self) -> f64 {
        one_minus_last(&self.coords)
    }

    /// Euclidean distance to the North Pole.
    pub fn distance_to_north_pole(&self) -> f64 {
        let d = self.dim();
        (norm2(&self.coords[..d]) + self.one_minus_height().powi(2)).sqrt()
    }
}

fn inverse_into(x: &[f64], z: &mut [f64]) {
    let r2 = norm2(x);
    let denom = 1.0 + r2;
    let d = x.len();
    for i in 0..d {
        z[i] = 2.0 * x[i] / denom;
    }
    z[d] = (r2 - 1.0) / denom;
}

/// `1 - z_{d+1}`, using `|y|^2 / (1 + z_{d+1})` in the northern hemisphere to
/// avoid cancellation.
#[inline]
fn one_minus_last(z: &[f64]) -> f64 {
    let d = z.len() - 1;
    let last = z[d];
    if last > 0.0 {
        norm2(&z[..d]) / (1.0 + last)
    } else {
        1.0 - last
    }
}

/// Maps `x in R^d` onto the sphere.
pub fn sp_inverse(x: &[f64]) -> SpherePoint {
    let mut z = vec![0.0; x.len() + 1];
    inverse_into(x, &mut z);
    SpherePoint { coords: z }
}

/// Projects a sphere point `(y, z)` to `y / (1 - z)`. Points within `1e-12`
/// of the North Pole have no usable image.
pub fn sp_forward(p: &SpherePoint) -> Result<Vec<f64>> {
    if p.distance_to_north_pole() < 1e-12 {
        return Err(Error::Degenerate("North Pole has no Euclidean image"));
    }
    let om = p.one_minus_height();
    Ok(p.coords[..p.dim()].iter().map(|c| c / om).collect())
}

/// Moves `z` by the projection of `w` onto the tangent space at `z`, then
/// renormalizes. `w` is overwritten with the new point. Returns false if
/// `|z + w'|` underflows, in which case `w` is unusable.
pub fn sphere_move(z: &[f64], w: &mut [f64]) -> bool {
    let dot: f64 = z.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
    for (wi, zi) in w.iter_mut().zip(z) {
        *wi = zi + (*wi - dot * zi);
    }
    let n = norm2(w).sqrt();
    if !(n >= 1e-300) {
        return false;
    }
    for wi in w.iter_mut() {
        *wi /= n;
    }
    true
}

/// SPS proposal with the ambient noise `noise` (`d + 1` coordinates, already
/// scaled by `h`). `None` in the measure-zero event `|p + z'| < 1e-300`.
pub fn sps_propose_with_noise(p: &SpherePoint, noise: &[f64]) -> Option<SpherePoint> {
    let mut w = noise.to_vec();
    sphere_move(&p.coords, &mut w).then_some(SpherePoint { coords: w })
}

/// One SPS proposal on the sphere: ambient `N(0, h^2 I)` noise projected onto
/// the tangent space at `p`, then renormalized.
pub fn sps_propose(p: &SpherePoint, h: f64, rng: &mut RngStream) -> SpherePoint {
    let mut noise = vec![0.0; p.coords.len()];
    loop {
        rng.fill_normal(h, &mut noise);
        if let Some(q) = sps_propose_with_noise(p, &noise) {
            return q;
        }
    }
}

/// SPS log acceptance ratio for `x -> y`, computed in `R^d`.
pub fn sps_log_ratio(target: &TargetSpec, x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let (rx, ry) = (norm2(x), norm2(y));
    target.log_density_r2(ry) - target.log_density_r2(rx) + d * (ry.ln_1p() - rx.ln_1p())
}

/// Log of the target pulled back to the sphere, `pi(SP(p)) (1 - z)^{-d}`, up
/// to a constant.
pub fn sphere_log_density(target: &TargetSpec, p: &SpherePoint) -> Result<f64> {
    let x = sp_forward(p)?;
    Ok(target.log_density(&x)? - p.dim() as f64 * p.one_minus_height().ln())
}

pub(crate) fn step_sps(state: &mut ChainState, h: f64, target: &TargetSpec, rng: &mut RngStream) -> Result<bool> {
    let d = state.x.len();
    let mut z = std::mem::take(&mut state.proposal_grad);
    let mut w = std::mem::take(&mut state.proposal);
    z.resize(d + 1, 0.0);
    w.resize(d + 1, 0.0);
    inverse_into(&state.x, &mut z);
    rng.fill_normal(h, &mut w);
    let moved = sphere_move(&z, &mut w);
    let om = if moved { one_minus_last(&w) } else { 0.0 };
    state.proposal_grad = z;
    w.truncate(d);
    if om < NORTH_POLE_GUARD {
        state.proposal = w;
        return Ok(false);
    }
    for wi in w.iter_mut() {
        *wi /= om;
    }
    // 1 + |y|^2 = 2 / (1 - z_{d+1})
    let log1p_ry = (2.0 / om).ln();
    let log_pi_y = target.log_density_r2(norm2(&w));
    let log1p_rx = norm2(&state.x).ln_1p();
    let log_ratio = log_pi_y - state.log_pi + d as f64 * (log1p_ry - log1p_rx);
    state.proposal = w;
    if mh_accept(log_ratio, rng)? {
        state.accept_proposal(log_pi_y);
        state.grad = None;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Last coordinate after one SPS proposal from a point whose last coordinate
/// is `z`, given the meridian component `u` and the squared norm `u_perp2` of
/// the remaining tangent components (both in units of `h`).
#[inline]
pub fn sps_z_update(z: f64, h: f64, u: f64, u_perp2: f64) -> f64 {
    let s = (1.0 - z * z).max(0.0).sqrt();
    (z + s * h * u) / (1.0 + h * h * (u * u + u_perp2)).sqrt()
}

/// Samples the last coordinate of an SPS proposal from height `z` on `S^d`,
/// without building the full vector.
pub fn sps_z_marginal(z: f64, h: f64, d: usize, rng: &mut RngStream) -> f64 {
    let u = rng.normal();
    let perp = chi_square(rng, (d - 1) as f64);
    sps_z_update(z, h, u, perp)
}
