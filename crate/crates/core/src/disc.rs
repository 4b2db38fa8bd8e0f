//! Poincaré disc conventions and Brownian motion on the disc.
//!
//! Area form `g_P = 2/(1-|ζ|²)² i dζ∧dζ̄` (curvature -1 metric `4|dζ|²/(1-|ζ|²)²`)
//! and `Δ_P f = ((1-|ζ|²)²/2) f_{ζζ̄}`, half the Laplace–Beltrami operator.
//! Brownian motion with generator `Δ_P` has asymptotic radial speed 1/2.

use crate::error::{Error, Result};
use crate::rng::{complex_normal, stream};
use crate::stats::{batch_means, Estimate, BATCH_SIZE};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Smallest admissible `1 - |ζ|²`, i.e. `|ζ| <= 1 - 1e-12` up to the factor `1 + |ζ|`.
const Q_MIN: f64 = 2e-12;

/// Point of the open unit disc, storing `q = 1 - |ζ|²` alongside `ζ` so that
/// distances stay accurate far out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscPoint {
    pub zeta: C64,
    pub q: f64,
}

impl DiscPoint {
    pub const ORIGIN: DiscPoint = DiscPoint {
        zeta: C64::new(0.0, 0.0),
        q: 1.0,
    };

    pub fn new(zeta: C64) -> Self {
        let mut q = 1.0 - zeta.norm_sqr();
        let mut zeta = zeta;
        if q < Q_MIN {
            static WARNED: std::sync::Once = std::sync::Once::new();
            WARNED.call_once(|| log::warn!("disc point clamped at |zeta| = 1 - 1e-12 (reported once)"));
            q = Q_MIN;
            zeta = zeta / zeta.norm() * (1.0 - Q_MIN).sqrt();
        }
        Self { zeta, q }
    }

    /// Poincaré distance to the origin.
    pub fn dist_origin(&self) -> f64 {
        2.0 * self.zeta.norm().ln_1p() - self.q.ln()
    }
}

/// Poincaré distance of the curvature -1 metric `2|dζ|/(1-|ζ|²)`.
pub fn dist_p(a: &DiscPoint, b: &DiscPoint) -> f64 {
    let num = (a.zeta - b.zeta).norm();
    if num == 0.0 {
        return 0.0;
    }
    let den = (C64::new(1.0, 0.0) - a.zeta.conj() * b.zeta).norm();
    let t = num / den;
    // log((1+t)/(1-t)) with 1 - t^2 = q_a q_b / |1 - conj(a) b|^2.
    2.0 * t.ln_1p() - a.q.ln() - b.q.ln() + 2.0 * den.ln()
}

/// Disc automorphism `ζ -> e^{iθ} (ζ - a)/(1 - conj(a) ζ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mobius {
    pub a: C64,
    pub theta: f64,
}

impl Mobius {
    pub fn apply(&self, p: &DiscPoint) -> DiscPoint {
        let one = C64::new(1.0, 0.0);
        let den = one - self.a.conj() * p.zeta;
        let zeta = C64::from_polar(1.0, self.theta) * (p.zeta - self.a) / den;
        // 1 - |m(ζ)|^2 = (1-|a|^2)(1-|ζ|^2)/|1 - conj(a) ζ|^2.
        let q = (1.0 - self.a.norm_sqr()) * p.q / den.norm_sqr();
        DiscPoint { zeta, q }
    }
}

/// `Δ_P f(ζ)` by the 5-point stencil with `h = 1e-4 (1 - |ζ|)`.
pub fn laplacian_p<F: Fn(C64) -> f64>(f: F, zeta: C64) -> Result<f64> {
    let r = zeta.norm();
    if r >= 1.0 {
        return Err(Error::StencilOutside);
    }
    let h = 1e-4 * (1.0 - r);
    let lap =
        (f(zeta + h) + f(zeta - h) + f(zeta + C64::new(0.0, h)) + f(zeta - C64::new(0.0, h)) - 4.0 * f(zeta)) / (h * h);
    let q = 1.0 - r * r;
    // f_{ζζ̄} = lap / 4.
    Ok(q * q / 8.0 * lap)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscBrownianConfig {
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
}

impl DiscBrownianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 1e-2 * self.t_max.max(1.0)) || !(self.t_max >= 0.0) {
            return Err(Error::Config(format!(
                "need 0 < dt <= 1e-2 max(1, t_max); got dt = {}, t_max = {}",
                self.dt, self.t_max
            )));
        }
        Ok(())
    }

    /// Number of steps; elapsed time is always `steps * dt`.
    pub fn steps(&self) -> u64 {
        (self.t_max / self.dt).round() as u64
    }
}

/// One Euler–Maruyama step `δζ = ((1-|ζ|²)/2) sqrt(2 dt) N` with `E|N|² = 1`.
#[inline]
pub fn bm_step(p: &DiscPoint, noise: C64, sqrt_2dt: f64) -> DiscPoint {
    let eps = noise * (0.5 * sqrt_2dt);
    let zeta = p.zeta + eps * p.q;
    let factor = 1.0 - 2.0 * (p.zeta.conj() * eps).re - p.q * eps.norm_sqr();
    let q = p.q * factor;
    if q < Q_MIN || !(factor > 0.0) {
        return DiscPoint::new(zeta);
    }
    DiscPoint { zeta, q }
}

/// Sampler for Brownian motion on the disc started at `start`.
pub struct DiscWalker {
    pub point: DiscPoint,
    pub steps: u64,
    rng: crate::rng::StreamRng,
    sqrt_2dt: f64,
}

impl DiscWalker {
    pub fn new(start: DiscPoint, dt: f64, seed: u64, stream_id: u64) -> Self {
        Self {
            point: start,
            steps: 0,
            rng: stream(seed, stream_id),
            sqrt_2dt: (2.0 * dt).sqrt(),
        }
    }

    #[inline]
    pub fn step(&mut self) -> DiscPoint {
        let n = complex_normal(&mut self.rng);
        self.point = bm_step(&self.point, n, self.sqrt_2dt);
        self.steps += 1;
        self.point
    }
}

/// Full discrete path at times `k dt`, starting at 0 (stream `stream_id`).
pub fn sample_bm(config: &DiscBrownianConfig, stream_id: u64) -> Result<Vec<DiscPoint>> {
    config.validate()?;
    let mut w = DiscWalker::new(DiscPoint::ORIGIN, config.dt, config.seed, stream_id);
    let n = config.steps();
    let mut path = Vec::with_capacity(n as usize + 1);
    path.push(w.point);
    for _ in 0..n {
        path.push(w.step());
    }
    Ok(path)
}

/// Monte Carlo value of a diffusion functional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub estimate: Estimate,
    pub min: f64,
    pub max: f64,
}

fn endpoint(start: DiscPoint, config: &DiscBrownianConfig, stream_id: u64) -> DiscPoint {
    let mut w = DiscWalker::new(start, config.dt, config.seed, stream_id);
    for _ in 0..config.steps() {
        w.step();
    }
    w.point
}

/// `(D_t f)(start)` as the mean of `f(ω(t))` over `n_paths` paths.
pub fn diffuse_from<F>(f: F, start: DiscPoint, config: &DiscBrownianConfig, n_paths: usize) -> Result<DiffusionEstimate>
where
    F: Fn(&DiscPoint) -> f64 + Sync,
{
    config.validate()?;
    let vals: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| f(&endpoint(start, config, i)))
        .collect();
    if let Some(bad) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("f(ω(t)) on path {bad}")));
    }
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut estimate = batch_means(&vals, BATCH_SIZE);
    if min == max {
        estimate.mean = min;
        estimate.half_width = 0.0;
    }
    Ok(DiffusionEstimate { estimate, min, max })
}

/// `(D_t f)(0)`.
pub fn diffuse<F>(f: F, config: &DiscBrownianConfig, n_paths: usize) -> Result<DiffusionEstimate>
where
    F: Fn(&DiscPoint) -> f64 + Sync,
{
    diffuse_from(f, DiscPoint::ORIGIN, config, n_paths)
}

/// `D_t(D_s f)(0)` with the inner expectation estimated from `n_inner` paths per outer endpoint.
pub fn diffuse_nested<F>(
    f: F,
    outer: &DiscBrownianConfig,
    inner: &DiscBrownianConfig,
    n_outer: usize,
    n_inner: usize,
) -> Result<DiffusionEstimate>
where
    F: Fn(&DiscPoint) -> f64 + Sync,
{
    let f = &f;
    diffuse(
        |p: &DiscPoint| {
            let cfg = DiscBrownianConfig {
                seed: inner.seed ^ (p.zeta.re.to_bits().rotate_left(17) ^ p.zeta.im.to_bits()),
                ..*inner
            };
            let vals: Vec<f64> = (0..n_inner as u64).map(|i| f(&endpoint(*p, &cfg, i))).collect();
            vals.iter().sum::<f64>() / n_inner as f64
        },
        outer,
        n_outer,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynkinResult {
    /// `(D_t f)(0) - f(0)`.
    pub lhs: f64,
    /// `∫_0^t (D_s Δ_P f)(0) ds` (trapezoid, 32 nodes).
    pub rhs: f64,
    pub residual: f64,
    /// Range of `f` over the sampled node values.
    pub f_range: f64,
}

/// Dynkin formula check for `f`; both sides from the same paths.
pub fn dynkin_residual<F>(f: F, config: &DiscBrownianConfig, n_paths: usize) -> Result<DynkinResult>
where
    F: Fn(C64) -> f64 + Sync,
{
    config.validate()?;
    const NODES: usize = 32;
    let n_steps = config.steps();
    let node_steps: Vec<u64> = (0..NODES)
        .map(|k| ((k as f64) * n_steps as f64 / (NODES - 1) as f64).round() as u64)
        .collect();
    let f = &f;
    // Per path: Δ_P f at the nodes, final f, and the range of f.
    type PathNodes = (Vec<f64>, f64, f64, f64);
    let per_path: Vec<Result<PathNodes>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = DiscWalker::new(DiscPoint::ORIGIN, config.dt, config.seed, i);
            let mut lap = Vec::with_capacity(NODES);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut next = 0;
            let mut last = 0.0;
            for s in 0..=n_steps {
                if s > 0 {
                    w.step();
                }
                while next < NODES && node_steps[next] == s {
                    let z = w.point.zeta;
                    let fv = f(z);
                    let lv = laplacian_p(f, z)?;
                    if !fv.is_finite() || !lv.is_finite() {
                        return Err(Error::NonFinite(format!("f or Δ_P f on path {i}")));
                    }
                    lo = lo.min(fv);
                    hi = hi.max(fv);
                    lap.push(lv);
                    last = fv;
                    next += 1;
                }
            }
            Ok((lap, last, lo, hi))
        })
        .collect();
    let mut mean_lap = vec![0.0; NODES];
    let mut mean_end = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in per_path {
        let (lap, end, l, h) = r?;
        for (m, v) in mean_lap.iter_mut().zip(&lap) {
            *m += v / n_paths as f64;
        }
        mean_end += end / n_paths as f64;
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let times: Vec<f64> = node_steps.iter().map(|&s| s as f64 * config.dt).collect();
    let rhs: f64 = (1..NODES)
        .map(|k| 0.5 * (times[k] - times[k - 1]) * (mean_lap[k] + mean_lap[k - 1]))
        .sum();
    let lhs = mean_end - f(C64::new(0.0, 0.0));
    Ok(DynkinResult {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        f_range: hi - lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let a = DiscPoint::new(C64::new(0.5, 0.0));
        assert!((dist_p(&DiscPoint::ORIGIN, &a) - 3f64.ln()).abs() < 1e-14);
        assert!((a.dist_origin() - 3f64.ln()).abs() < 1e-14);
        assert_eq!(dist_p(&a, &a), 0.0);
    }

    #[test]
    fn laplacian_examples() {
        let v = laplacian_p(|z: C64| z.norm_sqr(), C64::new(0.0, 0.0)).unwrap();
        assert!((v - 0.5).abs() < 1e-6);
        let v = laplacian_p(|z: C64| z.re, C64::new(0.3, -0.4)).unwrap();
        assert!(v.abs() < 1e-6);
        assert!(laplacian_p(|z: C64| z.re, C64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn zero_noise_step_is_identity() {
        let p = DiscPoint::new(C64::new(0.2, 0.7));
        assert_eq!(bm_step(&p, C64::new(0.0, 0.0), 0.1), p);
    }
}
