//! Linear model `Z = z d/dz + lambda w d/dw` of a hyperbolic singularity on the unit bidisc.
//!
//! Leaves are parametrised by `psi_x(zeta) = (z e^{i zeta}, w e^{i lambda zeta})`,
//! the flow of `iZ`. The ambient metric is Euclidean.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Comparability constant between the model curvature density and
/// `rho(x) L(x)^2`, from [`calibrate_kappa_constant`] with `lambda = i`,
/// 10^4 points and seed [`KAPPA_C_SEED`]. Frozen.
pub const KAPPA_C: f64 = 3.599_994_961_970_65;
pub const KAPPA_C_SEED: u64 = 20_240_601;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub z: C64,
    pub w: C64,
}

impl ModelPoint {
    pub fn new(z: C64, w: C64) -> Self {
        Self { z, w }
    }

    pub fn norm(&self) -> f64 {
        (self.z.norm_sqr() + self.w.norm_sqr()).sqrt()
    }

    pub fn in_bidisc(&self) -> bool {
        self.z.norm() < 1.0 && self.w.norm() < 1.0
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.w, self.z)
    }
}

/// `1 + |log s|`.
#[inline]
pub fn log_star(s: f64) -> f64 {
    1.0 + s.ln().abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub lambda: C64,
}

/// The admissible complex times `{v > log|z|} ∩ {Im(lambda zeta) > log|w|}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorDescriptor {
    pub log_z: f64,
    pub log_w: f64,
    pub lambda: C64,
}

impl SectorDescriptor {
    pub fn contains(&self, zeta: C64) -> bool {
        zeta.im > self.log_z && (self.lambda * zeta).im > self.log_w
    }

    /// Intersection point of the two boundary lines.
    pub fn vertex(&self) -> C64 {
        let (a, b) = (self.log_z, self.log_w);
        C64::new((b - self.lambda.re * a) / self.lambda.im, a)
    }

    /// Opening angle `pi - arg lambda` (for `Im lambda > 0`).
    pub fn opening(&self) -> f64 {
        PI - self.lambda.arg()
    }
}

impl LocalModel {
    /// Any non-real `lambda` is accepted; the convention used for singular
    /// points is `Im lambda > 0` (see [`LocalModel::oriented`]).
    pub fn new(lambda: C64) -> Result<Self> {
        if !lambda.is_finite() || lambda.im.abs() <= crate::singular::HYPERBOLIC_TOL {
            return Err(Error::NonHyperbolic(format!("lambda = {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn is_oriented(&self) -> bool {
        self.lambda.im > 0.0
    }

    /// Swaps the axes if needed so that `Im lambda > 0`; returns whether it flipped.
    pub fn oriented(&self) -> (Self, bool) {
        if self.is_oriented() {
            (*self, false)
        } else {
            (
                Self {
                    lambda: self.lambda.inv(),
                },
                true,
            )
        }
    }

    /// Model with the axes exchanged: `(z, w, lambda) -> (w, z, 1/lambda)`, times `zeta -> lambda zeta`.
    pub fn flipped(&self) -> Self {
        Self {
            lambda: self.lambda.inv(),
        }
    }

    /// `Z(x) = (z, lambda w)`.
    pub fn field(&self, x: &ModelPoint) -> [C64; 2] {
        [x.z, self.lambda * x.w]
    }

    pub fn field_norm(&self, x: &ModelPoint) -> f64 {
        (x.z.norm_sqr() + (self.lambda * x.w).norm_sqr()).sqrt()
    }

    pub fn sector(&self, x: &ModelPoint) -> SectorDescriptor {
        SectorDescriptor {
            log_z: x.z.norm().ln(),
            log_w: x.w.norm().ln(),
            lambda: self.lambda,
        }
    }

    /// `psi_x(zeta)` and whether it lies in the open bidisc.
    pub fn psi(&self, x: &ModelPoint, zeta: C64) -> (ModelPoint, bool) {
        let p = ModelPoint::new(x.z * (I * zeta).exp(), x.w * (I * self.lambda * zeta).exp());
        (p, p.in_bidisc())
    }

    fn check_segment(&self, x: &ModelPoint, zeta: C64) -> Result<()> {
        // The sector is convex and contains 0 when x is in the bidisc.
        if !x.in_bidisc() || !self.psi(x, zeta).1 {
            return Err(Error::SegmentExitsBidisc);
        }
        Ok(())
    }

    /// Closed-form holonomy along `t -> psi_x(t zeta)`, `t in [0, 1]`.
    pub fn holonomy_phi(&self, x: &ModelPoint, zeta: C64) -> Result<f64> {
        self.check_segment(x, zeta)?;
        Ok(self.log_phi_unchecked(x, zeta).exp())
    }

    /// `log Phi_x(zeta)` without the bidisc check.
    pub fn log_phi_unchecked(&self, x: &ModelPoint, zeta: C64) -> f64 {
        let l = self.lambda;
        let e1 = (I * zeta).exp();
        let e2 = (I * l * zeta).exp();
        let a = x.z.norm_sqr() + (l * x.w).norm_sqr();
        let b = (x.z * e1).norm_sqr() + (l * x.w * e2).norm_sqr();
        // log|e^{i zeta}| = -Im zeta, log|e^{i lambda zeta}| = -Im(lambda zeta).
        -zeta.im - (l * zeta).im + 0.5 * (a.ln() - b.ln())
    }

    /// Coefficient of `i dzeta ∧ dzeta-bar` in `i∂∂̄ log Phi_x` at `zeta`.
    pub fn log_phi_hessian(&self, x: &ModelPoint, zeta: C64) -> Result<f64> {
        self.check_segment(x, zeta)?;
        let (p, _) = self.psi(x, zeta);
        let l = self.lambda;
        let a = p.z.norm_sqr();
        let b = (l * p.w).norm_sqr();
        if a == 0.0 || b == 0.0 {
            return Ok(0.0);
        }
        Ok(-((l - 1.0).norm_sqr() / 2.0) * a * b / ((a + b) * (a + b)))
    }

    /// Exact Poincaré density of the leaf through `x` in the bidisc.
    ///
    /// The leaf is `psi_x` of a sector with vertex `zeta0` and opening
    /// `alpha`; `(zeta - zeta0)^(pi/alpha)` maps it to the upper half plane.
    pub fn sector_eta(&self, x: &ModelPoint) -> Result<f64> {
        let (m, flipped) = self.oriented();
        let x = if flipped { x.swapped() } else { *x };
        if !x.in_bidisc() || x.z == C64::new(0.0, 0.0) || x.w == C64::new(0.0, 0.0) {
            return Err(Error::Config(
                "sector_eta needs a point off the axes in the bidisc".into(),
            ));
        }
        let s = m.sector(&x);
        let z0 = s.vertex();
        let k = PI / s.opening();
        let theta = (-z0).arg();
        Ok(m.field_norm(&x) * z0.norm() * (k * theta).sin() / k)
    }

    /// Curvature density `Δ_P log Phi_x (0)` of the model with its exact Poincaré metric.
    pub fn kappa_exact(&self, x: &ModelPoint) -> Result<f64> {
        let eta = self.sector_eta(x)?;
        let h = self.log_phi_hessian(x, C64::new(0.0, 0.0))?;
        let zn = self.field_norm(x);
        Ok(2.0 * eta * eta * h / (zn * zn))
    }

    /// Upper bound `|zeta| <= e^{c R} |log ||x|| |` on times reached before hyperbolic time `R`.
    pub fn go_deeper_bound(c: f64, r: f64, x: &ModelPoint) -> f64 {
        (c * r).exp() * x.norm().ln().abs()
    }
}

/// `rho(x) = |z|^2 |w|^2 / (|z|^2 + |w|^2)^2`.
pub fn rho(x: &ModelPoint) -> f64 {
    let a = x.z.norm_sqr();
    let b = x.w.norm_sqr();
    if a + b == 0.0 {
        0.0
    } else {
        a * b / ((a + b) * (a + b))
    }
}

/// `W(x) = log*||x|| + rho(x) (log*||x||)^2`.
pub fn weight_w(x: &ModelPoint) -> f64 {
    let l = log_star(x.norm());
    l + rho(x) * l * l
}

/// `W*(x) = log*||x|| W(x)`.
pub fn weight_wstar(x: &ModelPoint) -> f64 {
    log_star(x.norm()) * weight_w(x)
}

/// Shape `s log* s` of the Poincaré density near a singular point.
pub fn eta_asymptotic(s: f64) -> f64 {
    s * log_star(s)
}

/// Two-sided bounds `(-c rho L^2, -c^{-1} rho L^2)` with `L = log*||x||`.
pub fn kappa_local_bounds(x: &ModelPoint) -> (f64, f64) {
    kappa_bounds_with(x, KAPPA_C)
}

pub fn kappa_bounds_with(x: &ModelPoint, c: f64) -> (f64, f64) {
    let l = log_star(x.norm());
    let base = rho(x) * l * l;
    (-c * base, -base / c)
}

/// Random point of the half-bidisc off the axes, log-uniform in modulus.
pub fn sample_half_bidisc<R: Rng>(rng: &mut R) -> ModelPoint {
    let mut coord = || {
        let r = 0.5 * (-8.0 * rng.random::<f64>()).exp();
        C64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))
    };
    ModelPoint::new(coord(), coord())
}

/// `max max(r, 1/r)` over `n` half-bidisc points of `r = kappa_exact / (-rho L^2)`.
pub fn calibrate_kappa_constant(model: &LocalModel, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c: f64 = 1.0;
    for _ in 0..n {
        let x = sample_half_bidisc(&mut rng);
        let Ok(k) = model.kappa_exact(&x) else { continue };
        let l = log_star(x.norm());
        let base = rho(&x) * l * l;
        if base <= 0.0 || k >= 0.0 {
            continue;
        }
        let r = -k / base;
        c = c.max(r).max(1.0 / r);
    }
    c
}
