//! Affine charts of P² and the Fubini–Study metric.
//!
//! Chart `j` is `{Z_j != 0}` with coordinates `(Z_a/Z_j, Z_b/Z_j)` where
//! `a < b` are the two remaining indices: chart 0 is `(y, z)`, chart 1 is
//! `(x, z)`, chart 2 is `(x, y)`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

pub type Vec2 = [C64; 2];
/// Row-major 2×2 complex matrix.
pub type Mat2 = [[C64; 2]; 2];

/// Coordinate modulus above which points are moved to a better chart.
pub const SWITCH_THRESHOLD: f64 = 2.5;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Homogeneous indices used as affine coordinates in chart `j`.
pub const fn others(chart: usize) -> [usize; 2] {
    match chart {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: usize,
    pub u: C64,
    pub v: C64,
}

impl ChartPoint {
    pub fn new(chart: usize, u: C64, v: C64) -> Self {
        assert!(chart < 3, "chart index out of range");
        Self { chart, u, v }
    }

    pub fn coords(&self) -> Vec2 {
        [self.u, self.v]
    }

    pub fn with_coords(&self, c: Vec2) -> Self {
        Self::new(self.chart, c[0], c[1])
    }

    /// Lift with `Z_chart = 1`.
    pub fn homogeneous(&self) -> [C64; 3] {
        let mut z = [ONE; 3];
        let [a, b] = others(self.chart);
        z[a] = self.u;
        z[b] = self.v;
        z
    }

    /// Point of P² represented by `z` in chart `chart`, if `z[chart] != 0`.
    pub fn from_homogeneous(z: [C64; 3], chart: usize) -> Option<Self> {
        let zj = z[chart];
        if zj == ZERO {
            return None;
        }
        let [a, b] = others(chart);
        let p = Self::new(chart, z[a] / zj, z[b] / zj);
        (p.u.is_finite() && p.v.is_finite()).then_some(p)
    }

    pub fn to_chart(&self, chart: usize) -> Option<Self> {
        if chart == self.chart {
            return Some(*self);
        }
        Self::from_homogeneous(self.homogeneous(), chart)
    }

    /// Chart in which the lift has the largest coordinate (all |coords| <= 1 there).
    pub fn canonical_chart(&self) -> usize {
        let z = self.homogeneous();
        let mut best = 0;
        for k in 1..3 {
            if z[k].norm() > z[best].norm() {
                best = k;
            }
        }
        best
    }

    pub fn canonical(&self) -> Self {
        self.to_chart(self.canonical_chart())
            .expect("canonical chart always contains the point")
    }

    pub fn max_coord(&self) -> f64 {
        self.u.norm().max(self.v.norm())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.u.norm_sqr() + self.v.norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Derivative of the transition map from `p.chart` to chart `k`, at `p`.
pub fn transition_jacobian(p: &ChartPoint, k: usize) -> Mat2 {
    if k == p.chart {
        return identity();
    }
    let z = p.homogeneous();
    let [a, b] = others(p.chart);
    let zk = z[k];
    let mut m = [[ZERO; 2]; 2];
    // dZ for the two coordinate directions of chart p.chart.
    for (col, idx) in [a, b].into_iter().enumerate() {
        let mut dz = [ZERO; 3];
        dz[idx] = ONE;
        for (row, c) in others(k).into_iter().enumerate() {
            m[row][col] = dz[c] / zk - z[c] * dz[k] / (zk * zk);
        }
    }
    m
}

/// Euclidean-chart inner product `sum v_i conj(w_i)`.
#[inline]
pub fn herm(v: &Vec2, w: &Vec2) -> C64 {
    v[0] * w[0].conj() + v[1] * w[1].conj()
}

/// Fubini–Study hermitian product of tangent vectors at `p`.
///
/// This is the metric with Kähler form `i∂∂̄ log(1+|p|²)`; it does not depend
/// on the chart used to express the vectors.
#[inline]
pub fn fs_inner(p: &ChartPoint, v: &Vec2, w: &Vec2) -> C64 {
    let pc = p.coords();
    let s = 1.0 + p.norm_sqr();
    (herm(v, w) * s - herm(v, &pc) * herm(&pc, w)) / (s * s)
}

#[inline]
pub fn fs_norm(p: &ChartPoint, v: &Vec2) -> f64 {
    fs_inner(p, v, v).re.max(0.0).sqrt()
}

/// Fubini–Study distance (in [0, π/2]) between two points of P².
pub fn fs_distance(p: &ChartPoint, q: &ChartPoint) -> f64 {
    let z = p.homogeneous();
    let w = q.homogeneous();
    let zw: C64 = (0..3).map(|i| z[i] * w[i].conj()).sum();
    let mut wedge = 0.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            wedge += (z[i] * w[j] - z[j] * w[i]).norm_sqr();
        }
    }
    wedge.sqrt().atan2(zw.norm())
}

/// Ambient metric used for norms of tangent vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmbientMetric {
    FubiniStudy,
    /// Flat metric of the current chart; only meaningful for single-chart fixtures.
    EuclideanChart,
}

impl AmbientMetric {
    #[inline]
    pub fn inner(&self, p: &ChartPoint, v: &Vec2, w: &Vec2) -> C64 {
        match self {
            AmbientMetric::FubiniStudy => fs_inner(p, v, w),
            AmbientMetric::EuclideanChart => herm(v, w),
        }
    }

    #[inline]
    pub fn norm(&self, p: &ChartPoint, v: &Vec2) -> f64 {
        self.inner(p, v, v).re.max(0.0).sqrt()
    }
}

pub fn identity() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

#[inline]
pub fn mat_vec(m: &Mat2, v: &Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

#[inline]
pub fn det(m: &Mat2) -> C64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Solves `m x = r`; `None` if `m` is numerically singular.
pub fn solve(m: &Mat2, r: &Vec2) -> Option<Vec2> {
    let d = det(m);
    let scale = m.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
    if d.norm() <= 1e-300 || d.norm() < 1e-15 * scale * scale {
        return None;
    }
    Some([
        (m[1][1] * r[0] - m[0][1] * r[1]) / d,
        (m[0][0] * r[1] - m[1][0] * r[0]) / d,
    ])
}

/// Eigenvalues of a 2×2 complex matrix.
pub fn eigenvalues(m: &Mat2) -> (C64, C64) {
    let tr = m[0][0] + m[1][1];
    let dt = det(m);
    let disc = (tr * tr - dt * 4.0).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    // Recompute the smaller root from the product to avoid cancellation.
    if l1.norm() >= l2.norm() && l1.norm() > 0.0 {
        (l1, dt / l1)
    } else if l2.norm() > 0.0 {
        (dt / l2, l2)
    } else {
        (l1, l2)
    }
}

/// Unit eigenvector of `m` for eigenvalue `l`.
pub fn eigenvector(m: &Mat2, l: C64) -> Vec2 {
    let a = [m[0][0] - l, m[0][1]];
    let b = [m[1][0], m[1][1] - l];
    // Null vector of a row is (row[1], -row[0]); pick the better-conditioned row.
    let row = if a[0].norm() + a[1].norm() >= b[0].norm() + b[1].norm() {
        a
    } else {
        b
    };
    let mut v = [row[1], -row[0]];
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    if n == 0.0 {
        v = [ONE, ZERO];
    } else {
        v = [v[0] / n, v[1] / n];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn transitions_are_involutive() {
        let p = ChartPoint::new(2, c(0.7, -1.2), c(-1.9, 0.4));
        for k in 0..3 {
            let q = p.to_chart(k).unwrap().to_chart(2).unwrap();
            assert!((q.u - p.u).norm() < 1e-12 * p.u.norm());
            assert!((q.v - p.v).norm() < 1e-12 * p.v.norm());
        }
    }

    #[test]
    fn transition_jacobian_matches_differences() {
        let p = ChartPoint::new(1, c(0.3, 0.8), c(-1.1, 0.2));
        let h = 1e-6;
        for k in [0, 2] {
            let m = transition_jacobian(&p, k);
            for col in 0..2 {
                let mut cp = p.coords();
                let mut cm = p.coords();
                cp[col] += h;
                cm[col] -= h;
                let fp = p.with_coords(cp).to_chart(k).unwrap();
                let fm = p.with_coords(cm).to_chart(k).unwrap();
                let d = [(fp.u - fm.u) / (2.0 * h), (fp.v - fm.v) / (2.0 * h)];
                for row in 0..2 {
                    assert!((d[row] - m[row][col]).norm() < 1e-8, "k={k} col={col}");
                }
            }
        }
    }

    #[test]
    fn fs_norm_is_chart_independent() {
        let p = ChartPoint::new(0, c(0.5, 0.2), c(-0.3, 0.9));
        let v = [c(0.1, -0.7), c(1.3, 0.2)];
        let n0 = fs_norm(&p, &v);
        for k in [1, 2] {
            let q = p.to_chart(k).unwrap();
            let w = mat_vec(&transition_jacobian(&p, k), &v);
            assert!((fs_norm(&q, &w) - n0).abs() < 1e-12 * n0);
        }
    }

    #[test]
    fn fs_distance_small_and_symmetric() {
        let p = ChartPoint::new(2, c(0.2, 0.1), c(0.0, -0.4));
        let v = [c(1e-7, 0.0), c(0.0, 2e-7)];
        let q = p.with_coords([p.u + v[0], p.v + v[1]]);
        let d = fs_distance(&p, &q);
        assert!((d - fs_norm(&p, &v)).abs() < 1e-6 * d);
        assert!((fs_distance(&q, &p) - d).abs() < 1e-20);
        assert_eq!(fs_distance(&p, &p), 0.0);
        // Coordinate points are at distance π/2.
        let a = ChartPoint::new(2, c(0.0, 0.0), c(0.0, 0.0));
        let b = ChartPoint::new(0, c(0.0, 0.0), c(0.0, 0.0));
        assert!((fs_distance(&a, &b) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn eigen_decomposition() {
        let m = [[c(-3.0, 0.0), c(2.0, 0.0)], [c(-2.0, 0.0), c(-1.0, 0.0)]];
        let (l1, l2) = eigenvalues(&m);
        let s3 = 3f64.sqrt();
        let mut ls = [l1, l2];
        ls.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((ls[0] - c(-2.0, -s3)).norm() < 1e-14);
        assert!((ls[1] - c(-2.0, s3)).norm() < 1e-14);
        for l in ls {
            let e = eigenvector(&m, l);
            let me = mat_vec(&m, &e);
            assert!((me[0] - l * e[0]).norm() + (me[1] - l * e[1]).norm() < 1e-13);
        }
    }
}
