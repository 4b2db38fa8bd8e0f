//! Polynomial vector fields on P² and their affine chart expressions.

use crate::chart::{fs_norm, mat_vec, others, transition_jacobian, ChartPoint, Mat2, Vec2};
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Dense bivariate polynomial `sum c_ij u^i v^j` over `i + j <= deg`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiPoly {
    deg: usize,
    coeffs: Vec<C64>,
}

#[inline]
fn tri_index(deg: usize, i: usize, j: usize) -> usize {
    // Row i holds deg - i + 1 entries.
    i * (deg + 1) - i * (i.saturating_sub(1)) / 2 + j
}

impl BiPoly {
    pub fn zero(deg: usize) -> Self {
        Self {
            deg,
            coeffs: vec![ZERO; (deg + 1) * (deg + 2) / 2],
        }
    }

    pub fn from_terms(deg: usize, terms: &[(usize, usize, C64)]) -> Result<Self> {
        let mut p = Self::zero(deg);
        for &(i, j, c) in terms {
            if i + j > deg {
                return Err(Error::Config(format!("monomial u^{i} v^{j} exceeds degree {deg}")));
            }
            p.add(i, j, c);
        }
        Ok(p)
    }

    pub fn deg(&self) -> usize {
        self.deg
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i + j > self.deg {
            ZERO
        } else {
            self.coeffs[tri_index(self.deg, i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, c: C64) {
        let k = tri_index(self.deg, i, j);
        self.coeffs[k] += c;
    }

    /// Nonzero terms `(i, j, c)`.
    pub fn terms(&self) -> Vec<(usize, usize, C64)> {
        let mut out = Vec::new();
        for i in 0..=self.deg {
            for j in 0..=(self.deg - i) {
                let c = self.get(i, j);
                if c != ZERO {
                    out.push((i, j, c));
                }
            }
        }
        out
    }

    /// Horner evaluation.
    #[inline]
    pub fn eval(&self, u: C64, v: C64) -> C64 {
        let mut acc = ZERO;
        for i in (0..=self.deg).rev() {
            let row = &self.coeffs[tri_index(self.deg, i, 0)..=tri_index(self.deg, i, self.deg - i)];
            let mut inner = ZERO;
            for c in row.iter().rev() {
                inner = inner * v + c;
            }
            acc = acc * u + inner;
        }
        acc
    }

    pub fn du(&self) -> Self {
        let deg = self.deg.saturating_sub(1);
        let mut p = Self::zero(deg);
        for (i, j, c) in self.terms() {
            if i > 0 {
                p.add(i - 1, j, c * i as f64);
            }
        }
        p
    }

    pub fn dv(&self) -> Self {
        let deg = self.deg.saturating_sub(1);
        let mut p = Self::zero(deg);
        for (i, j, c) in self.terms() {
            if j > 0 {
                p.add(i, j - 1, c * j as f64);
            }
        }
        p
    }
}

/// Homogeneous degree-`d` field `X = sum X_k d/dZ_k` on C³ given by monomial lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousField {
    pub degree: usize,
    /// `components[k]` lists `([ex, ey, ez], c)` with `ex + ey + ez = degree`.
    pub components: [Vec<([usize; 3], C64)>; 3],
}

impl HomogeneousField {
    pub fn eval(&self, z: &[C64; 3]) -> [C64; 3] {
        let mut out = [ZERO; 3];
        for (k, comp) in self.components.iter().enumerate() {
            for (e, c) in comp {
                out[k] += c * z[0].powu(e[0] as u32) * z[1].powu(e[1] as u32) * z[2].powu(e[2] as u32);
            }
        }
        out
    }

    /// Affine restriction of component `k` to chart `j` as a polynomial in the chart coordinates.
    fn restrict(&self, k: usize, chart: usize) -> BiPoly {
        let [a, b] = others(chart);
        let mut p = BiPoly::zero(self.degree);
        for (e, c) in &self.components[k] {
            p.add(e[a], e[b], *c);
        }
        p
    }

    /// Chart field `(X_a - u X_j, X_b - v X_j)` at the lift `Z_j = 1`.
    pub fn chart_polys(&self, chart: usize) -> (BiPoly, BiPoly) {
        let [a, b] = others(chart);
        let xj = self.restrict(chart, chart);
        let mut p = BiPoly::zero(self.degree + 1);
        let mut q = BiPoly::zero(self.degree + 1);
        for (i, jj, c) in self.restrict(a, chart).terms() {
            p.add(i, jj, c);
        }
        for (i, jj, c) in self.restrict(b, chart).terms() {
            q.add(i, jj, c);
        }
        for (i, jj, c) in xj.terms() {
            p.add(i + 1, jj, -c);
            q.add(i, jj + 1, -c);
        }
        (p, q)
    }
}

/// The two chart polynomials and their first partial derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartField {
    pub p: BiPoly,
    pub q: BiPoly,
    pu: BiPoly,
    pv: BiPoly,
    qu: BiPoly,
    qv: BiPoly,
}

impl ChartField {
    pub fn new(p: BiPoly, q: BiPoly) -> Self {
        Self {
            pu: p.du(),
            pv: p.dv(),
            qu: q.du(),
            qv: q.dv(),
            p,
            q,
        }
    }

    #[inline]
    pub fn eval(&self, u: C64, v: C64) -> Vec2 {
        [self.p.eval(u, v), self.q.eval(u, v)]
    }

    #[inline]
    pub fn jacobian(&self, u: C64, v: C64) -> Mat2 {
        [
            [self.pu.eval(u, v), self.pv.eval(u, v)],
            [self.qu.eval(u, v), self.qv.eval(u, v)],
        ]
    }
}

/// A degree-`d` foliation of P² given by its three chart vector fields.
///
/// The chart fields are related on overlaps by `V_c = Z_c^{-(d-1)} V_j`
/// (pushed forward), where `Z` is the lift normalised in chart `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyVectorField {
    pub degree: usize,
    pub charts: [ChartField; 3],
    pub homogeneous: Option<HomogeneousField>,
}

impl PolyVectorField {
    pub fn from_homogeneous(h: HomogeneousField) -> Self {
        let charts = [0, 1, 2].map(|j| {
            let (p, q) = h.chart_polys(j);
            ChartField::new(p, q)
        });
        Self {
            degree: h.degree,
            charts,
            homogeneous: Some(h),
        }
    }

    /// Builds the field from explicit monomials of one chart.
    ///
    /// The degree `d + 1` part must have the form `(u g, v g)`; this is what
    /// makes the field extend to a foliation of degree `d` on P².
    pub fn from_chart_terms(
        degree: usize,
        chart: usize,
        p_terms: &[(usize, usize, C64)],
        q_terms: &[(usize, usize, C64)],
    ) -> Result<Self> {
        if chart > 2 {
            return Err(Error::Config(format!("chart index {chart} out of range")));
        }
        if degree == 0 {
            return Err(Error::Config("degree must be positive".into()));
        }
        let p = BiPoly::from_terms(degree + 1, p_terms)?;
        let q = BiPoly::from_terms(degree + 1, q_terms)?;
        let d = degree;
        // Top-degree part: P_top = u g, Q_top = v g.
        let mut g = vec![ZERO; d + 1]; // g_{i, d-i}
        for i in 0..=(d + 1) {
            let c = p.get(i, d + 1 - i);
            if i == 0 {
                if c != ZERO {
                    return Err(Error::Config("top-degree part of P is not divisible by u".into()));
                }
            } else {
                g[i - 1] = c;
            }
        }
        for i in 0..=(d + 1) {
            let want = if i <= d { g[i] } else { ZERO };
            if (q.get(i, d + 1 - i) - want).norm() > 1e-14 * (1.0 + want.norm()) {
                return Err(Error::Config(
                    "top-degree parts of P and Q are not of the form (u g, v g)".into(),
                ));
            }
        }
        let [a, b] = others(chart);
        let mut comps: [Vec<([usize; 3], C64)>; 3] = Default::default();
        let hom = |i: usize, j: usize| {
            let mut e = [0usize; 3];
            e[a] = i;
            e[b] = j;
            e[chart] = d - i - j;
            e
        };
        for (i, j, c) in p.terms() {
            if i + j <= d {
                comps[a].push((hom(i, j), c));
            }
        }
        for (i, j, c) in q.terms() {
            if i + j <= d {
                comps[b].push((hom(i, j), c));
            }
        }
        for (i, gi) in g.iter().enumerate() {
            if *gi != ZERO {
                comps[chart].push((hom(i, d - i), -gi));
            }
        }
        Ok(Self::from_homogeneous(HomogeneousField {
            degree,
            components: comps,
        }))
    }

    #[inline]
    pub fn eval(&self, p: &ChartPoint) -> Vec2 {
        self.charts[p.chart].eval(p.u, p.v)
    }

    #[inline]
    pub fn jacobian(&self, p: &ChartPoint) -> Mat2 {
        self.charts[p.chart].jacobian(p.u, p.v)
    }

    /// Field of chart `field_chart` expressed at `p` (in `p.chart` coordinates).
    pub fn eval_in(&self, p: &ChartPoint, field_chart: usize) -> Vec2 {
        let v = self.eval(p);
        if field_chart == p.chart || self.degree == 1 {
            return v;
        }
        let z = p.homogeneous()[field_chart];
        let g = z.powi(-(self.degree as i32 - 1));
        [v[0] * g, v[1] * g]
    }

    /// Maximum over `n` random overlap points of the sine of the angle between
    /// the chart-`i` field pushed to chart `k` and the chart-`k` field.
    pub fn coherence_defect<R: rand::Rng>(&self, n: usize, rng: &mut R) -> f64 {
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let i = rng.random_range(0..3);
            let k = (i + rng.random_range(1..3)) % 3;
            let mut coord = || {
                let r = rng.random_range(0.3..2.0);
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                C64::from_polar(r, t)
            };
            let p = ChartPoint::new(i, coord(), coord());
            let Some(q) = p.to_chart(k) else { continue };
            let a = mat_vec(&transition_jacobian(&p, k), &self.eval(&p));
            let b = self.eval(&q);
            let na = fs_norm(&q, &a);
            let nb = fs_norm(&q, &b);
            if na < 1e-12 || nb < 1e-12 {
                continue;
            }
            let cross = (a[0] * b[1] - a[1] * b[0]).norm()
                / ((a[0].norm_sqr() + a[1].norm_sqr()).sqrt() * (b[0].norm_sqr() + b[1].norm_sqr()).sqrt());
            worst = worst.max(cross);
        }
        worst
    }

    /// Adds `delta` to one coefficient of one chart's `P` (fault injection).
    pub fn perturb_coefficient(&mut self, chart: usize, i: usize, j: usize, delta: C64) {
        let p = &self.charts[chart].p;
        let mut p2 = p.clone();
        p2.add(i, j, delta);
        let q = self.charts[chart].q.clone();
        self.charts[chart] = ChartField::new(p2, q);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn horner_matches_naive() {
        let p = BiPoly::from_terms(
            3,
            &[
                (0, 0, c(1.0)),
                (1, 2, C64::new(0.5, -2.0)),
                (3, 0, c(-1.0)),
                (0, 3, c(2.0)),
            ],
        )
        .unwrap();
        let (u, v) = (C64::new(0.3, 0.7), C64::new(-1.1, 0.4));
        let naive = c(1.0) + C64::new(0.5, -2.0) * u * v * v - u * u * u + c(2.0) * v * v * v;
        assert!((p.eval(u, v) - naive).norm() < 1e-14);
        let du = C64::new(0.5, -2.0) * v * v - c(3.0) * u * u;
        assert!((p.du().eval(u, v) - du).norm() < 1e-14);
    }

    #[test]
    fn jouanolou_chart_two() {
        let mut comps: [Vec<([usize; 3], C64)>; 3] = Default::default();
        comps[0].push(([0, 2, 0], c(1.0)));
        comps[1].push(([0, 0, 2], c(1.0)));
        comps[2].push(([2, 0, 0], c(1.0)));
        let f = PolyVectorField::from_homogeneous(HomogeneousField {
            degree: 2,
            components: comps,
        });
        let (x, y) = (C64::new(0.4, 0.1), C64::new(-0.2, 0.9));
        let v = f.eval(&ChartPoint::new(2, x, y));
        assert!((v[0] - (y * y - x * x * x)).norm() < 1e-14);
        assert!((v[1] - (c(1.0) - x * x * y)).norm() < 1e-14);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(f.coherence_defect(100, &mut rng) < 1e-9);
    }

    #[test]
    fn chart_terms_roundtrip() {
        // Jouanolou d = 2 written in chart 2.
        let f = PolyVectorField::from_chart_terms(
            2,
            2,
            &[(0, 2, c(1.0)), (3, 0, c(-1.0))],
            &[(0, 0, c(1.0)), (2, 1, c(-1.0))],
        )
        .unwrap();
        let p = ChartPoint::new(0, C64::new(0.3, 0.2), C64::new(-0.5, 0.1));
        let (y, z) = (p.u, p.v);
        let v = f.eval(&p);
        assert!((v[0] - (z * z - y * y * y)).norm() < 1e-14);
        assert!((v[1] - (c(1.0) - z * y * y)).norm() < 1e-14);
        assert!(PolyVectorField::from_chart_terms(2, 2, &[(0, 3, c(1.0))], &[]).is_err());
    }
}
