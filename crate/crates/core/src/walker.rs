//! Leafwise Brownian motion and the holonomy cocycle.
//!
//! One step draws `δζ = sqrt(2 dt) N η/||V||` (`E|N|² = 1`) and flows the
//! field of the canonical chart of the step's start point for complex time
//! `δζ`, in sub-segments short enough to stay away from the singular set.
//! The normal vector is transported by the flow Jacobian and projected back
//! onto the orthogonal complement of the leaf; the log of its length is the
//! holonomy increment.
//!
//! Very close to a singular point (`dist < DEEP_ENTER`) the walker switches to
//! the linear part of the field in eigen-coordinates kept in log-polar form,
//! where flow and transport are exact at any depth. Absolute chart
//! coordinates cannot resolve the offsets reached there.

use crate::chart::{mat_vec, transition_jacobian, AmbientMetric, ChartPoint, Mat2, Vec2};
use crate::error::{Error, Result};
use crate::eta::EtaSource;
use crate::flow::{flow_field, FlowOptions, FlowSegmentResult};
use crate::foliation::FoliationSpec;
use crate::local_model::KAPPA_C;
use crate::rng::{complex_normal, StreamRng};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Largest ambient displacement of one flow sub-segment.
pub const MAX_SEGMENT_DISPLACEMENT: f64 = 0.05;
/// Maximum number of halvings of a step.
pub const MAX_HALVINGS: u32 = 20;
/// Distance below which the walker moves to eigen-coordinates.
pub const DEEP_ENTER: f64 = 1e-7;
/// Distance above which it moves back to chart coordinates.
pub const DEEP_EXIT: f64 = 2e-7;
/// Without eigen-coordinates, steps ending closer than this are redrawn.
pub const DEPTH_FLOOR: f64 = 1e-10;
/// Redraws allowed before a step is reported as failed.
pub const MAX_REDRAWS: u32 = 64;

const STENCIL: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(-1.0, 0.0),
    C64::new(0.0, 1.0),
    C64::new(0.0, -1.0),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkerFlags {
    pub box_entries: u64,
    pub guard_trips: u64,
    pub split_steps: u64,
    pub retries: u64,
    pub floor_redraws: u64,
    pub deep_entries: u64,
    pub deep_steps: u64,
}

/// Bookkeeping for the hyperbolic-time guard while inside a singular box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxVisit {
    pub singularity: Option<usize>,
    pub entry_steps: u64,
    /// `|log ||x|| |` at entry, `||x||` the box-normalised distance.
    pub entry_log: f64,
    /// Accumulated model time (complex).
    pub zeta: C64,
    pub tripped: bool,
}

/// Eigen-coordinates `z_k = exp(log_abs_k + i arg_k)` around a singular point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepCoords {
    pub singularity: usize,
    pub log_abs: [f64; 2],
    pub arg: [f64; 2],
}

impl DeepCoords {
    /// `(m, z e^{-m})` with `m = max log|z_k|`.
    fn scaled(&self) -> (f64, [C64; 2]) {
        let m = self.log_abs[0].max(self.log_abs[1]);
        (
            m,
            [
                C64::from_polar((self.log_abs[0] - m).exp(), self.arg[0]),
                C64::from_polar((self.log_abs[1] - m).exp(), self.arg[1]),
            ],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafWalkerState {
    pub point: ChartPoint,
    /// Number of steps taken; Poincaré time is `steps * dt`.
    pub steps: u64,
    pub log_holonomy: f64,
    /// Unit normal in `point`'s chart, or in eigen-coordinates while `deep` is set.
    pub normal_unit: Vec2,
    pub deep: Option<DeepCoords>,
    #[serde(skip, default = "default_rng")]
    pub rng: StreamRng,
    pub flags: WalkerFlags,
    pub visit: BoxVisit,
}

fn default_rng() -> StreamRng {
    crate::rng::stream(0, 0)
}

impl LeafWalkerState {
    pub fn poincare_time(&self, dt: f64) -> f64 {
        self.steps as f64 * dt
    }
}

/// Linear part of the field at a singular point, in metric-unit eigen-coordinates.
#[derive(Clone, Debug)]
struct LinearBox {
    a: ChartPoint,
    mu: [C64; 2],
    /// Columns are the eigenvectors.
    e: Mat2,
    e_inv: Mat2,
    /// Gram matrix `h[k][l] = <e_k, e_l>`.
    h: Mat2,
    radius: f64,
}

impl LinearBox {
    fn new(a: ChartPoint, lin: &Mat2, radius: f64, metric: AmbientMetric) -> Option<Self> {
        let (l1, l2) = crate::chart::eigenvalues(lin);
        let mut cols = [crate::chart::eigenvector(lin, l1), crate::chart::eigenvector(lin, l2)];
        for c in cols.iter_mut() {
            let n = metric.norm(&a, c);
            *c = [c[0] / n, c[1] / n];
        }
        let e = [[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]];
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        if det.norm() < 1e-12 {
            return None;
        }
        let e_inv = [[e[1][1] / det, -e[0][1] / det], [-e[1][0] / det, e[0][0] / det]];
        let mut h = [[C64::new(0.0, 0.0); 2]; 2];
        for k in 0..2 {
            for l in 0..2 {
                h[k][l] = metric.inner(&a, &cols[k], &cols[l]);
            }
        }
        Some(Self {
            a,
            mu: [l1, l2],
            e,
            e_inv,
            h,
            radius,
        })
    }

    fn inner(&self, x: &[C64; 2], y: &[C64; 2]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..2 {
            for l in 0..2 {
                acc += x[k] * y[l].conj() * self.h[k][l];
            }
        }
        acc
    }

    fn norm(&self, x: &[C64; 2]) -> f64 {
        self.inner(x, x).re.max(0.0).sqrt()
    }

    fn field(&self, z: &[C64; 2]) -> [C64; 2] {
        [self.mu[0] * z[0], self.mu[1] * z[1]]
    }

    /// Projection of `n` off `v`; `(unit vector, length)`.
    fn project(&self, v: &[C64; 2], n: &[C64; 2]) -> Result<([C64; 2], f64)> {
        let vv = self.inner(v, v).re;
        if !(vv > 0.0) {
            return Err(Error::DegenerateProjection(0.0));
        }
        let c = self.inner(n, v) / vv;
        let m = [n[0] - c * v[0], n[1] - c * v[1]];
        let len = self.norm(&m);
        if !(len >= 1e-14) || !len.is_finite() {
            return Err(Error::DegenerateProjection(len));
        }
        Ok(([m[0] / len, m[1] / len], len))
    }

    fn unit_normal(&self, zh: &[C64; 2]) -> Result<[C64; 2]> {
        let v = self.field(zh);
        Ok(self.project(&v, &[-v[1].conj(), v[0].conj()])?.0)
    }

    fn log_dist(&self, d: &DeepCoords) -> f64 {
        let (m, zh) = d.scaled();
        m + 0.5 * self.inner(&zh, &zh).re.ln()
    }

    fn chart_point(&self, d: &DeepCoords) -> ChartPoint {
        let (m, zh) = d.scaled();
        let s = m.exp();
        let x = mat_vec(&self.e, &zh);
        self.a.with_coords([self.a.u + x[0] * s, self.a.v + x[1] * s])
    }

    fn eigen_coords(&self, p: &ChartPoint) -> Option<[C64; 2]> {
        let q = p.to_chart(self.a.chart)?;
        Some(mat_vec(&self.e_inv, &[q.u - self.a.u, q.v - self.a.v]))
    }

    fn enter(&self, i: usize, p: &ChartPoint, n: &Vec2) -> Option<(DeepCoords, [C64; 2])> {
        let z = self.eigen_coords(p)?;
        if z[0].norm() == 0.0 || z[1].norm() == 0.0 {
            return None;
        }
        let n = if p.chart == self.a.chart {
            *n
        } else {
            mat_vec(&transition_jacobian(p, self.a.chart), n)
        };
        let d = DeepCoords {
            singularity: i,
            log_abs: [z[0].norm().ln(), z[1].norm().ln()],
            arg: [z[0].arg(), z[1].arg()],
        };
        let ne = mat_vec(&self.e_inv, &n);
        let (_, zh) = d.scaled();
        let ne = self.project(&self.field(&zh), &ne).ok()?.0;
        Some((d, ne))
    }

    fn exit(&self, d: &DeepCoords, ne: &[C64; 2], metric: AmbientMetric) -> (ChartPoint, Vec2) {
        let p = self.chart_point(d);
        let n = mat_vec(&self.e, ne);
        let len = metric.norm(&p, &n);
        (p, [n[0] / len, n[1] / len])
    }

    /// Exact flow by `tau`: `(new coords, transported normal, log-length increment)`.
    fn flow(&self, d: &DeepCoords, ne: &[C64; 2], tau: C64) -> Result<(DeepCoords, [C64; 2], f64)> {
        let mut out = *d;
        let mut n = *ne;
        for k in 0..2 {
            let g = self.mu[k] * tau;
            out.log_abs[k] += g.re;
            out.arg[k] = (out.arg[k] + g.im).rem_euclid(TAU);
            n[k] *= g.exp();
        }
        if !(out.log_abs[0].is_finite() && out.log_abs[1].is_finite()) {
            return Err(Error::NonFinite("deep coordinates".into()));
        }
        let (_, zh) = out.scaled();
        let (n, len) = self.project(&self.field(&zh), &n)?;
        Ok((out, n, len.ln()))
    }

    /// `rho` of the local model in eigen-coordinates.
    fn rho(z: &[C64; 2]) -> f64 {
        let a = z[0].norm_sqr();
        let b = z[1].norm_sqr();
        if a + b == 0.0 {
            0.0
        } else {
            a * b / ((a + b) * (a + b))
        }
    }
}

/// Everything a walker needs besides its state.
pub struct Leafwise<'a> {
    pub spec: &'a FoliationSpec,
    pub eta: &'a dyn EtaSource,
    pub metric: AmbientMetric,
    pub flow: FlowOptions,
    /// Disable the singular-distance part of the split rule and eigen-coordinates (pure fixtures).
    pub ignore_singularities: bool,
    boxes: Vec<Option<LinearBox>>,
}

impl<'a> Leafwise<'a> {
    pub fn new(spec: &'a FoliationSpec, eta: &'a dyn EtaSource) -> Self {
        Self::with_metric(spec, eta, AmbientMetric::FubiniStudy)
    }

    pub fn with_metric(spec: &'a FoliationSpec, eta: &'a dyn EtaSource, metric: AmbientMetric) -> Self {
        let boxes = spec
            .singularities
            .iter()
            .map(|s| LinearBox::new(s.location, &s.linear_part, s.box_radius, metric))
            .collect();
        Self {
            spec,
            eta,
            metric,
            flow: FlowOptions::default(),
            ignore_singularities: false,
            boxes,
        }
    }

    fn dist(&self, p: &ChartPoint) -> (Option<usize>, f64) {
        if self.ignore_singularities {
            return (None, f64::INFINITY);
        }
        match self.spec.nearest_singularity(p) {
            Some((i, d)) => (Some(i), d),
            None => (None, f64::INFINITY),
        }
    }

    fn deep_box(&self, i: usize) -> Option<(&LinearBox, f64)> {
        if self.ignore_singularities {
            return None;
        }
        let b = self.boxes.get(i)?.as_ref()?;
        Some((b, self.eta.box_scale(i)?))
    }

    /// Unit normal to the leaf at `p` (orthogonal complement of `V(p)`).
    pub fn unit_normal(&self, p: &ChartPoint) -> Result<Vec2> {
        let v = self.spec.field.eval(p);
        // (-conj(v1), conj(v0)) is Euclidean-orthogonal; project in the metric anyway.
        let n = [-v[1].conj(), v[0].conj()];
        let (n, len) = self.project(p, &v, &n)?;
        Ok([n[0] / len, n[1] / len])
    }

    /// Projection of `n` onto the metric-orthogonal complement of `v`, with its length.
    fn project(&self, p: &ChartPoint, v: &Vec2, n: &Vec2) -> Result<(Vec2, f64)> {
        let vv = self.metric.inner(p, v, v).re;
        if !(vv > 0.0) {
            return Err(Error::DegenerateProjection(0.0));
        }
        let c = self.metric.inner(p, n, v) / vv;
        let m = [n[0] - c * v[0], n[1] - c * v[1]];
        let len = self.metric.norm(p, &m);
        if !(len >= 1e-14) || !len.is_finite() {
            return Err(Error::DegenerateProjection(len));
        }
        Ok((m, len))
    }

    /// Starting state at `p` with stream `rng`.
    pub fn start(&self, p: &ChartPoint, rng: StreamRng) -> Result<LeafWalkerState> {
        let mut s = LeafWalkerState {
            point: *p,
            steps: 0,
            log_holonomy: 0.0,
            normal_unit: self.unit_normal(p)?,
            deep: None,
            rng,
            flags: WalkerFlags::default(),
            visit: BoxVisit::default(),
        };
        self.maybe_enter(&mut s);
        Ok(s)
    }

    fn maybe_enter(&self, state: &mut LeafWalkerState) {
        let (Some(i), d) = self.dist(&state.point) else { return };
        if d >= DEEP_ENTER {
            return;
        }
        if let Some((b, _)) = self.deep_box(i) {
            if let Some((dc, ne)) = b.enter(i, &state.point, &state.normal_unit) {
                state.deep = Some(dc);
                state.normal_unit = ne;
                state.flags.deep_entries += 1;
            }
        }
    }

    /// `(increment, new unit normal)` for a flow segment starting at the walker's point.
    pub fn holonomy_increment(&self, seg: &FlowSegmentResult, normal: &Vec2) -> Result<(f64, Vec2)> {
        let n = mat_vec(&seg.jacobian, normal);
        let q = &seg.endpoint;
        let v = self.spec.field.eval(q);
        let (m, len) = self.project(q, &v, &n)?;
        Ok((len.ln(), [m[0] / len, m[1] / len]))
    }

    /// `(field chart, V, ||V||)` at `p`; `V` is the canonical-chart field in `p.chart` coordinates.
    pub fn field_at(&self, p: &ChartPoint) -> (usize, Vec2, f64) {
        let c = p.canonical_chart();
        let v = self.spec.field.eval_in(p, c);
        (c, v, self.metric.norm(p, &v))
    }

    /// Flow by `zeta` in `pieces` equal sub-segments, accumulating the holonomy.
    fn flow_pieces(
        &self,
        start: &ChartPoint,
        normal: &Vec2,
        zeta: C64,
        field_chart: usize,
        pieces: u64,
    ) -> Result<(ChartPoint, Vec2, f64)> {
        let piece = zeta / pieces as f64;
        let mut p = *start;
        let mut n = *normal;
        let mut acc = 0.0;
        for _ in 0..pieces {
            let seg = flow_field(&self.spec.field, &p, piece, field_chart, &self.flow)?;
            let (inc, n2) = self.holonomy_increment(&seg, &n)?;
            acc += inc;
            n = n2;
            p = seg.endpoint;
        }
        Ok((p, n, acc))
    }

    /// One Brownian step with the given complex noise (`E|N|^2 = 1`).
    ///
    /// Returns `false` (state untouched) if the endpoint falls below [`DEPTH_FLOOR`]
    /// where eigen-coordinates are unavailable.
    pub fn step_with_noise(&self, state: &mut LeafWalkerState, noise: C64, dt: f64) -> Result<bool> {
        if noise == C64::new(0.0, 0.0) {
            state.steps += 1;
            return Ok(true);
        }
        if let Some(d) = state.deep {
            self.deep_step(state, d, noise, dt)?;
            return Ok(true);
        }
        let p = state.point;
        let (c, _, nv) = self.field_at(&p);
        let eta = self.eta.eta(&p);
        if !(nv > 0.0) || !eta.is_finite() || !(eta > 0.0) {
            return Err(Error::NonFinite(format!("eta = {eta}, |V| = {nv}")));
        }
        let zeta = noise * ((2.0 * dt).sqrt() * eta / nv);
        let (_, dist) = self.dist(&p);
        let cap = MAX_SEGMENT_DISPLACEMENT.min(dist / 4.0);
        let disp = zeta.norm() * nv;
        let mut pieces: u64 = 1;
        while disp / pieces as f64 >= cap && pieces < (1 << MAX_HALVINGS) {
            pieces *= 2;
        }
        if pieces > 1 {
            state.flags.split_steps += 1;
        }
        let mut tries = 0;
        let (q, n, inc) = loop {
            match self.flow_pieces(&p, &state.normal_unit, zeta, c, pieces) {
                Ok(r) => break r,
                Err(e) if e.is_numerical() && tries < MAX_HALVINGS => {
                    tries += 1;
                    pieces *= 2;
                    state.flags.retries += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let (near_q, dist_q) = self.dist(&q);
        let deep_ok = near_q.is_some_and(|i| self.deep_box(i).is_some());
        if !self.ignore_singularities && !deep_ok && dist_q < DEPTH_FLOOR {
            return Ok(false);
        }
        state.point = q;
        state.normal_unit = n;
        state.log_holonomy += inc;
        state.steps += 1;
        if dist_q < DEEP_ENTER {
            self.maybe_enter(state);
        }
        self.track_box(state, near_q, dist_q.ln(), zeta, dt);
        Ok(true)
    }

    fn deep_step(&self, state: &mut LeafWalkerState, d: DeepCoords, noise: C64, dt: f64) -> Result<()> {
        let i = d.singularity;
        let (b, scale) = self
            .deep_box(i)
            .ok_or_else(|| Error::Config("eigen-coordinates unavailable".into()))?;
        let (_, zh) = d.scaled();
        let log_s = b.log_dist(&d);
        // eta/||V|| is scale-free: c s log*s / (e^m ||mu zh||).
        let ratio = scale * b.norm(&zh) * (1.0 + log_s.abs()) / b.norm(&b.field(&zh));
        let tau = noise * ((2.0 * dt).sqrt() * ratio);
        let (d2, n2, inc) = b.flow(&d, &state.normal_unit, tau)?;
        state.log_holonomy += inc;
        state.steps += 1;
        state.flags.deep_steps += 1;
        let log_s2 = b.log_dist(&d2);
        if log_s2 > DEEP_EXIT.ln() {
            let (p, n) = b.exit(&d2, &n2, self.metric);
            state.point = p;
            state.normal_unit = n;
            state.deep = None;
        } else {
            state.point = b.chart_point(&d2);
            state.normal_unit = n2;
            state.deep = Some(d2);
        }
        self.track_box(state, Some(i), log_s2, tau, dt);
        Ok(())
    }

    /// Hyperbolic-time guard: inside a box, model time should stay below
    /// `e^{c R} |log ||x|| |` with `R` the Poincaré time since entry.
    fn track_box(&self, state: &mut LeafWalkerState, near: Option<usize>, log_dist: f64, zeta: C64, dt: f64) {
        let Some(i) = near else { return };
        let s = &self.spec.singularities[i];
        let log_r = s.box_radius.ln();
        if log_dist >= log_r {
            state.visit = BoxVisit::default();
            return;
        }
        if state.visit.singularity != Some(i) {
            state.flags.box_entries += 1;
            state.visit = BoxVisit {
                singularity: Some(i),
                entry_steps: state.steps,
                entry_log: (log_dist - log_r).abs(),
                zeta: C64::new(0.0, 0.0),
                tripped: false,
            };
        }
        // Model time is the flow time of the linear part normalised to eigenvalue 1.
        state.visit.zeta += zeta * s.eigenvalues.0.norm();
        let r = (state.steps - state.visit.entry_steps) as f64 * dt;
        let bound = (KAPPA_C * r).exp() * state.visit.entry_log.max(1.0);
        if !state.visit.tripped && state.visit.zeta.norm() > bound {
            state.visit.tripped = true;
            state.flags.guard_trips += 1;
            log::debug!("hyperbolic-time guard tripped near singularity {i}");
        }
    }

    pub fn bm_step(&self, state: &mut LeafWalkerState, dt: f64) -> Result<()> {
        for _ in 0..MAX_REDRAWS {
            let noise = complex_normal(&mut state.rng);
            if self.step_with_noise(state, noise, dt)? {
                return Ok(());
            }
            state.flags.floor_redraws += 1;
        }
        Err(Error::NearSingularity(self.dist(&state.point).1))
    }

    /// `log dist(x, E)` at the walker's position.
    pub fn log_dist(&self, state: &LeafWalkerState) -> f64 {
        match (state.deep, &state.deep.and_then(|d| self.boxes[d.singularity].as_ref())) {
            (Some(d), Some(b)) => b.log_dist(&d),
            _ => self.dist(&state.point).1.ln(),
        }
    }

    /// `eta` at the walker's position.
    pub fn eta_of(&self, state: &LeafWalkerState) -> f64 {
        self.eta_trust_of(state).0
    }

    /// `(eta, trust)` at the walker's position.
    pub fn eta_trust_of(&self, state: &LeafWalkerState) -> (f64, f64) {
        match state.deep {
            Some(d) => {
                let scale = self.eta.box_scale(d.singularity).unwrap_or(1.0);
                let ls = self.log_dist(state);
                ((scale.ln() + ls + (1.0 + ls.abs()).ln()).exp(), 1.0)
            }
            None => self.eta.eta_trust(&state.point),
        }
    }

    /// `(log* dist(x, E), W(x))` with `W = L + rho L^2` inside singular boxes
    /// (`rho` in eigen-coordinates) and `W = L` elsewhere.
    pub fn weights_of(&self, state: &LeafWalkerState) -> (f64, f64) {
        let l = 1.0 + self.log_dist(state).abs();
        let rho = match state.deep {
            Some(d) => LinearBox::rho(&d.scaled().1),
            None => match self.dist(&state.point) {
                (Some(i), s) => match &self.boxes[i] {
                    Some(b) if s < b.radius => b.eigen_coords(&state.point).map_or(0.0, |z| LinearBox::rho(&z)),
                    _ => 0.0,
                },
                _ => 0.0,
            },
        };
        (l, l + rho * l * l)
    }

    /// `κ̂` at the walker's position.
    pub fn kappa_of(&self, state: &LeafWalkerState, h_rel: f64) -> Result<f64> {
        match state.deep {
            Some(d) => self.deep_kappa(&d, h_rel),
            None => self.kappa_probe(&state.point, h_rel),
        }
    }

    fn deep_kappa(&self, d: &DeepCoords, h_rel: f64) -> Result<f64> {
        let (b, scale) = self.deep_box(d.singularity).ok_or(Error::StencilOutside)?;
        let (_, zh) = d.scaled();
        let q = b.norm(&zh);
        let nv = b.norm(&b.field(&zh));
        let ratio = scale * q * (1.0 + b.log_dist(d).abs()) / nv;
        let n0 = b.unit_normal(&zh)?;
        let h = h_rel * q / (4.0 * nv);
        let mut sum = 0.0;
        for dir in STENCIL {
            sum += b.flow(d, &n0, dir * h)?.2;
        }
        Ok(ratio * ratio / 2.0 * sum / (h * h))
    }

    /// `κ̂(p) = η²/(2||V||²) · Lap_ζ[log H(p -> flow(p, ζ))](0)` by a 5-point stencil.
    ///
    /// `h_rel` is the stencil step relative to the safe radius `min(0.25, dist/4)/||V||`.
    pub fn kappa_probe(&self, p: &ChartPoint, h_rel: f64) -> Result<f64> {
        let (c, _, nv) = self.field_at(p);
        if !(nv > 0.0) {
            return Err(Error::DegenerateProjection(nv));
        }
        let eta = self.eta.eta(p);
        let normal = self.unit_normal(p)?;
        let (_, dist) = self.dist(p);
        let safe = 0.25f64.min(dist / 4.0) / nv;
        let opts = FlowOptions {
            rtol: 1e-13,
            atol: 1e-13,
            ..self.flow
        };
        let mut h = h_rel * safe;
        'shrink: for _ in 0..=4 {
            let mut sum = 0.0;
            for d in STENCIL {
                match flow_field(&self.spec.field, p, d * h, c, &opts)
                    .and_then(|seg| self.holonomy_increment(&seg, &normal))
                {
                    Ok((inc, _)) => sum += inc,
                    Err(_) => {
                        h *= 0.5;
                        continue 'shrink;
                    }
                }
            }
            return Ok(eta * eta / (2.0 * nv * nv) * sum / (h * h));
        }
        Err(Error::StencilOutside)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eta::ConstantEta;
    use crate::foliation::jouanolou;
    use crate::rng::stream;

    #[test]
    fn zero_noise_leaves_state() {
        let spec = jouanolou(2).unwrap();
        let eta = ConstantEta(0.5);
        let lw = Leafwise::new(&spec, &eta);
        let p = ChartPoint::new(2, C64::new(0.3, 0.1), C64::new(-0.2, 0.4));
        let mut s = lw.start(&p, stream(1, 0)).unwrap();
        let before = s.clone();
        lw.step_with_noise(&mut s, C64::new(0.0, 0.0), 1e-3).unwrap();
        assert_eq!(s.point, before.point);
        assert_eq!(s.log_holonomy, 0.0);
        assert_eq!(s.steps, 1);
    }

    struct BoxEta;
    impl EtaSource for BoxEta {
        fn eta(&self, _: &ChartPoint) -> f64 {
            0.5
        }
        fn box_scale(&self, _: usize) -> Option<f64> {
            Some(0.4)
        }
    }

    #[test]
    fn deep_round_trip() {
        let spec = jouanolou(2).unwrap();
        let lw = Leafwise::new(&spec, &BoxEta);
        let b = lw.boxes[0].as_ref().unwrap();
        let a = spec.singularities[0].location;
        let p = a.with_coords([a.u + C64::new(3e-8, 1e-8), a.v + C64::new(-2e-8, 4e-8)]);
        let n = lw.unit_normal(&p).unwrap();
        let (d, ne) = b.enter(0, &p, &n).unwrap();
        let (q, n2) = b.exit(&d, &ne, lw.metric);
        assert!((q.u - p.u).norm() < 1e-15 && (q.v - p.v).norm() < 1e-15);
        // Normals agree up to phase and the O(dist) metric change.
        let c = crate::chart::fs_inner(&p, &n, &n2).norm();
        assert!((c - 1.0).abs() < 1e-6, "{c}");
    }

    #[test]
    fn deep_flow_matches_chart_flow() {
        // At depth 1e-5 the linear part and the full field agree to O(1e-5) relative.
        let spec = jouanolou(2).unwrap();
        let lw = Leafwise::new(&spec, &BoxEta);
        let b = lw.boxes[0].as_ref().unwrap();
        let a = spec.singularities[0].location;
        let p = a.with_coords([a.u + C64::new(6e-6, 1e-6), a.v + C64::new(-2e-6, 5e-6)]);
        let n = lw.unit_normal(&p).unwrap();
        let (d, ne) = b.enter(0, &p, &n).unwrap();
        let tau = C64::new(0.3, -0.2);
        let (d2, _, inc) = b.flow(&d, &ne, tau).unwrap();
        let seg = flow_field(&spec.field, &p, tau, a.chart, &FlowOptions::default()).unwrap();
        let (inc_chart, _) = lw.holonomy_increment(&seg, &n).unwrap();
        let q = b.chart_point(&d2);
        let scale = (p.u - a.u).norm();
        assert!((q.u - seg.endpoint.u).norm() / scale < 1e-4);
        assert!((inc - inc_chart).abs() < 1e-4, "{inc} {inc_chart}");
    }

    #[test]
    fn deep_kappa_matches_chart_probe() {
        let spec = jouanolou(2).unwrap();
        let lw = Leafwise::new(&spec, &BoxEta);
        let b = lw.boxes[0].as_ref().unwrap();
        let a = spec.singularities[0].location;
        let p = a.with_coords([a.u + C64::new(6e-6, 1e-6), a.v + C64::new(-2e-6, 5e-6)]);
        let chart = lw.kappa_probe(&p, 1e-3).unwrap() / 0.25;
        let n = lw.unit_normal(&p).unwrap();
        let (d, _) = b.enter(0, &p, &n).unwrap();
        let ls = b.log_dist(&d);
        let eta = 0.4 * ls.exp() * (1.0 + ls.abs());
        let deep = lw.deep_kappa(&d, 1e-3).unwrap() / (eta * eta);
        assert!(chart < 0.0);
        assert!((deep - chart).abs() < 1e-3 * chart.abs(), "{deep} {chart}");
    }
}
