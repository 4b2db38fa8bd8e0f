//! Locating and classifying the singular points of a foliation.

use crate::chart::{eigenvalues, eigenvector, fs_distance, solve, ChartPoint, Mat2};
use crate::error::{Error, Result};
use crate::poly::PolyVectorField;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default cap on the singular-box radius (Fubini–Study units).
pub const BOX_RADIUS_MAX: f64 = 0.2;
/// Tolerance on `|Im lambda|` below which a singularity is not hyperbolic.
pub const HYPERBOLIC_TOL: f64 = 1e-9;
/// Newton starts per chart.
pub const STARTS_PER_CHART: usize = 200;

const DEDUPE_DIST: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Singularity {
    /// Location in its canonical chart.
    pub location: ChartPoint,
    /// Eigenvalues `(l1, l2)` of the linear part, ordered so that `Im(l2/l1) >= 0`.
    pub eigenvalues: (C64, C64),
    pub ratio: C64,
    pub hyperbolic: bool,
    pub box_radius: f64,
    /// Linear part of the chart field at the singularity.
    pub linear_part: Mat2,
    /// Unit eigenvectors (chart coordinates) for `l1` and `l2`.
    pub eigenvectors: [[C64; 2]; 2],
    pub residual: f64,
}

/// Plain Newton polishing in the point's own chart.
pub fn polish(field: &PolyVectorField, p: &ChartPoint, iters: usize) -> Option<(ChartPoint, f64)> {
    let mut q = *p;
    for _ in 0..iters {
        let f = field.eval(&q);
        let j = field.jacobian(&q);
        let step = solve(&j, &[-f[0], -f[1]])?;
        q = q.with_coords([q.u + step[0], q.v + step[1]]);
        if !q.is_finite() {
            return None;
        }
        if step[0].norm() + step[1].norm() < 1e-16 * (1.0 + q.max_coord()) {
            break;
        }
    }
    let f = field.eval(&q);
    Some((q, (f[0].norm_sqr() + f[1].norm_sqr()).sqrt()))
}

/// Newton iteration on `V / prod_k l(p - r_k)` where `l` is a random linear form.
fn deflated_newton(
    field: &PolyVectorField,
    start: ChartPoint,
    roots: &[ChartPoint],
    form: [C64; 2],
) -> Option<ChartPoint> {
    let mut q = start;
    for _ in 0..80 {
        let f = field.eval(&q);
        let j = field.jacobian(&q);
        let mut s = [C64::new(0.0, 0.0); 2];
        for r in roots {
            let l = form[0] * (q.u - r.u) + form[1] * (q.v - r.v);
            if l.norm() < 1e-300 {
                return None;
            }
            s[0] += form[0] / l;
            s[1] += form[1] / l;
        }
        let m = [
            [j[0][0] - f[0] * s[0], j[0][1] - f[0] * s[1]],
            [j[1][0] - f[1] * s[0], j[1][1] - f[1] * s[1]],
        ];
        let step = solve(&m, &[-f[0], -f[1]])?;
        // Damp huge steps.
        let sn = step[0].norm().max(step[1].norm());
        let damp = if sn > 1.0 { 1.0 / sn } else { 1.0 };
        q = q.with_coords([q.u + step[0] * damp, q.v + step[1] * damp]);
        if !q.is_finite() || q.max_coord() > 1e6 {
            return None;
        }
        if sn < 1e-13 * (1.0 + q.max_coord()) {
            return Some(q);
        }
    }
    let f = field.eval(&q);
    ((f[0].norm() + f[1].norm()) < 1e-8).then_some(q)
}

/// All singular points of `field`, polished, classified and with box radii assigned.
pub fn find_singularities(field: &PolyVectorField) -> Result<Vec<Singularity>> {
    let d = field.degree;
    let expected = d * d + d + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_5196);
    let mut found: Vec<(ChartPoint, f64)> = Vec::new();
    let mut max_residual: f64 = 0.0;
    for chart in 0..3 {
        let form = [
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        ];
        for _ in 0..STARTS_PER_CHART {
            let mut coord = || {
                let r = 2.0 * rng.random::<f64>().sqrt();
                C64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))
            };
            let start = ChartPoint::new(chart, coord(), coord());
            let known: Vec<ChartPoint> = found.iter().filter_map(|(r, _)| r.to_chart(chart)).collect();
            let Some(root) = deflated_newton(field, start, &known, form) else {
                continue;
            };
            let Some((root, _)) = polish(field, &root, 30) else {
                continue;
            };
            let Some((root, res)) = polish(field, &root.canonical(), 30) else {
                continue;
            };
            if res > 1e-10 {
                max_residual = max_residual.max(res);
                continue;
            }
            let jac = field.jacobian(&root);
            let scale = jac.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
            let dt = crate::chart::det(&jac).norm();
            if dt < 1e-9 * scale * scale.max(1.0) {
                return Err(Error::Degenerate(format!(
                    "singular Jacobian at root ({:.6}, {:.6}) in chart {} (|det| = {dt:.3e})",
                    root.u, root.v, root.chart
                )));
            }
            if found.iter().all(|(r, _)| fs_distance(r, &root) > DEDUPE_DIST) {
                found.push((root, res));
            }
        }
    }
    if found.len() != expected {
        let max_residual = found.iter().map(|(_, r)| *r).fold(max_residual, f64::max);
        return Err(Error::IncompleteSingularities {
            found: found.len(),
            expected,
            max_residual,
        });
    }
    // Deterministic order: by chart, then by coordinates.
    found.sort_by(|(a, _), (b, _)| {
        (a.chart, a.u.re, a.u.im, a.v.re, a.v.im)
            .partial_cmp(&(b.chart, b.u.re, b.u.im, b.v.re, b.v.im))
            .unwrap()
    });
    let mut sings = found
        .iter()
        .map(|(p, res)| {
            let mut s = classify_singularity(field, p);
            s.residual = *res;
            s
        })
        .collect::<Vec<_>>();
    assign_box_radii(&mut sings, BOX_RADIUS_MAX);
    Ok(sings)
}

/// Linear part, eigenvalues and oriented ratio at a polished root.
pub fn classify_singularity(field: &PolyVectorField, location: &ChartPoint) -> Singularity {
    let loc = location.canonical();
    let jac = field.jacobian(&loc);
    let f = field.eval(&loc);
    let mut s = classify_linear_part(&jac);
    s.location = loc;
    s.residual = (f[0].norm_sqr() + f[1].norm_sqr()).sqrt();
    s
}

/// Classification from the linear part alone; location is left at the origin of chart 2.
pub fn classify_linear_part(jac: &Mat2) -> Singularity {
    let (mut l1, mut l2) = eigenvalues(jac);
    let mut ratio = l2 / l1;
    if ratio.im < 0.0 {
        std::mem::swap(&mut l1, &mut l2);
        ratio = l2 / l1;
    }
    let hyperbolic = ratio.is_finite() && ratio.im.abs() > HYPERBOLIC_TOL;
    Singularity {
        location: ChartPoint::new(2, C64::new(0.0, 0.0), C64::new(0.0, 0.0)),
        eigenvalues: (l1, l2),
        ratio,
        hyperbolic,
        box_radius: BOX_RADIUS_MAX,
        linear_part: *jac,
        eigenvectors: [eigenvector(jac, l1), eigenvector(jac, l2)],
        residual: 0.0,
    }
}

/// Largest radii `r <= r_max` with pairwise disjoint `2r`-balls (common radius
/// per pair, i.e. `r_a <= dist(a, b) / 4`).
pub fn assign_box_radii(sings: &mut [Singularity], r_max: f64) {
    let n = sings.len();
    for i in 0..n {
        let mut r = r_max;
        for j in 0..n {
            if i != j {
                r = r.min(fs_distance(&sings[i].location, &sings[j].location) / 4.0);
            }
        }
        sings[i].box_radius = r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_classification() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let s = classify_linear_part(&[[one, zero], [zero, C64::new(0.0, 1.0)]]);
        assert!((s.ratio - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(s.hyperbolic);
        let s = classify_linear_part(&[[one, zero], [zero, C64::new(2.0, 0.0)]]);
        assert!(!s.hyperbolic);
        assert!(s.ratio.im.abs() < 1e-15);
    }
}
