//! Estimates of the leafwise Poincaré density `eta`.
//!
//! Outside singular boxes `eta` is bounded below by the derivative at 0 of
//! flow discs `zeta -> flow(p, rho zeta)`: the largest radius whose boundary
//! rays avoid the half-radius boxes gives `eta ≈ beta rho_max ||V(p)||`.
//! Inside the box of a singular point `a`, `eta ≈ c_a s log* s` with
//! `s = dist(p, a)` and `c_a` matched on the box boundary.

use crate::chart::{fs_distance, fs_norm, ChartPoint};
use crate::flow::{flow_guarded, FlowOptions, FlowOutcome};
use crate::foliation::FoliationSpec;
use crate::local_model::log_star;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaMethod {
    FlowDisc,
    SingularBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub value: f64,
    pub method: EtaMethod,
    /// Ratio of the bracketing radii of the search (1 for exact or capped values).
    pub trust: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaOptions {
    pub beta: f64,
    /// Brody cap on `eta`.
    pub c_brody: f64,
    pub rays: usize,
    pub bisections: usize,
    /// Ambient length `rho ||V||` of the first candidate disc.
    pub initial_length: f64,
    pub rtol: f64,
}

impl Default for EtaOptions {
    fn default() -> Self {
        Self {
            beta: 1.0,
            c_brody: 4.0,
            rays: 12,
            bisections: 8,
            initial_length: 0.05,
            rtol: 1e-8,
        }
    }
}

/// Flow-disc and box estimator for one foliation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaModel {
    pub opts: EtaOptions,
    /// Box constants `c_a`, one per singular point.
    pub box_constants: Vec<f64>,
    /// Per-singularity `(location, box radius)` copy for guards.
    boxes: Vec<(ChartPoint, f64)>,
    min_box: f64,
}

/// Point at Fubini–Study distance `r` from `a` in the chart direction `dir`.
pub fn point_at_distance(a: &ChartPoint, dir: [C64; 2], r: f64) -> ChartPoint {
    let at = |t: f64| a.with_coords([a.u + dir[0] * t, a.v + dir[1] * t]);
    let (mut lo, mut hi) = (0.0, r);
    while fs_distance(a, &at(hi)) < r {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if fs_distance(a, &at(mid)) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

impl EtaModel {
    /// Builds the estimator, matching the box constants on 64 boundary points per singular point.
    pub fn new(spec: &FoliationSpec, opts: EtaOptions) -> Self {
        let boxes: Vec<(ChartPoint, f64)> = spec.singularities.iter().map(|s| (s.location, s.box_radius)).collect();
        let min_box = boxes.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let mut model = Self {
            opts,
            box_constants: vec![1.0; boxes.len()],
            boxes,
            min_box,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0xb0c5);
        let raw = EtaOptions { beta: 1.0, ..opts };
        let mut constants = Vec::with_capacity(model.boxes.len());
        for &(a, r) in &model.boxes {
            let mut acc = 0.0;
            let mut n = 0;
            for _ in 0..64 {
                let dir = [
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                ];
                let p = point_at_distance(&a, dir, r * (1.0 + 1e-9));
                if let Some(e) = model.flow_disc(spec, &p, &raw) {
                    acc += e.0;
                    n += 1;
                }
            }
            let c = if n > 0 { acc / n as f64 / (r * log_star(r)) } else { 1.0 };
            constants.push(c);
        }
        model.box_constants = constants;
        model
    }

    pub fn boxes(&self) -> &[(ChartPoint, f64)] {
        &self.boxes
    }

    fn nearest(&self, p: &ChartPoint) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, (a, _)) in self.boxes.iter().enumerate() {
            let d = fs_distance(p, a);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// `beta c_a` for singularity `i`.
    pub fn box_scale(&self, i: usize) -> Option<f64> {
        self.box_constants.get(i).map(|c| self.opts.beta * c)
    }

    fn box_value(&self, idx: usize, s: f64) -> f64 {
        (self.opts.beta * self.box_constants[idx] * s * log_star(s)).min(self.opts.c_brody)
    }

    /// Raw flow-disc search: `(rho_max ||V||, trust)`, or `None` if the search collapses.
    fn flow_disc(&self, spec: &FoliationSpec, p: &ChartPoint, opts: &EtaOptions) -> Option<(f64, f64)> {
        let p = p.canonical();
        let c = p.chart;
        let v = spec.field.eval(&p);
        let nv = fs_norm(&p, &v);
        if !(nv > 0.0) {
            return None;
        }
        let flow_opts = FlowOptions {
            rtol: opts.rtol,
            atol: opts.rtol,
            track_jacobian: false,
            max_displacement: (self.min_box / 4.0).min(0.05),
            max_steps: 20_000,
            min_step: 1e-10,
            ..FlowOptions::default()
        };
        let boxes = &self.boxes;
        let guard = |q: &ChartPoint| boxes.iter().all(|(a, r)| fs_distance(q, a) >= 0.5 * r);
        let dirs: Vec<C64> = (0..opts.rays)
            .map(|k| C64::from_polar(1.0, std::f64::consts::TAU * k as f64 / opts.rays as f64))
            .collect();
        // Ray states: point reached at the current lower radius.
        let mut states: Vec<ChartPoint> = vec![p; opts.rays];
        let mut lo = 0.0;
        let try_radius = |states: &[ChartPoint], lo: f64, rho: f64| -> Option<Vec<ChartPoint>> {
            let mut next = Vec::with_capacity(states.len());
            for (st, d) in states.iter().zip(&dirs) {
                match flow_guarded(&spec.field, st, *d * (rho - lo), c, &flow_opts, guard) {
                    Ok(FlowOutcome::Completed(r)) => next.push(r.endpoint),
                    _ => return None,
                }
            }
            Some(next)
        };
        let cap = opts.c_brody / (opts.beta * nv);
        let mut rho = (opts.initial_length / nv).min(cap);
        let mut hi = f64::INFINITY;
        // Doubling (or halving if the first candidate already fails).
        match try_radius(&states, lo, rho) {
            Some(s) => {
                states = s;
                lo = rho;
                while lo < cap {
                    let cand = (2.0 * lo).min(cap);
                    match try_radius(&states, lo, cand) {
                        Some(s) => {
                            states = s;
                            lo = cand;
                        }
                        None => {
                            hi = cand;
                            break;
                        }
                    }
                }
            }
            None => {
                hi = rho;
                let mut found = false;
                for _ in 0..10 {
                    rho *= 0.5;
                    if let Some(s) = try_radius(&states, 0.0, rho) {
                        states = s;
                        lo = rho;
                        found = true;
                        break;
                    }
                    hi = rho;
                }
                if !found {
                    return None;
                }
            }
        }
        if hi.is_infinite() {
            return Some((lo * nv, 1.0));
        }
        for _ in 0..opts.bisections {
            let mid = 0.5 * (lo + hi);
            match try_radius(&states, lo, mid) {
                Some(s) => {
                    states = s;
                    lo = mid;
                }
                None => hi = mid,
            }
        }
        Some((lo * nv, lo / hi))
    }

    /// `eta` estimate at `p` (not a singular point).
    pub fn eta_estimate(&self, spec: &FoliationSpec, p: &ChartPoint) -> EtaEstimate {
        let (idx, s) = self.nearest(p);
        if s < self.boxes[idx].1 {
            return EtaEstimate {
                value: self.box_value(idx, s),
                method: EtaMethod::SingularBox,
                trust: 1.0,
            };
        }
        match self.flow_disc(spec, p, &self.opts) {
            Some((len, trust)) => EtaEstimate {
                value: (self.opts.beta * len).min(self.opts.c_brody),
                method: EtaMethod::FlowDisc,
                trust,
            },
            None => EtaEstimate {
                value: self.box_value(idx, s),
                method: EtaMethod::SingularBox,
                trust: 0.0,
            },
        }
    }
}

/// Source of `eta` values for walkers.
pub trait EtaSource: Sync {
    fn eta(&self, p: &ChartPoint) -> f64;

    /// Constant `c` with `eta = c s log* s` inside the box of singularity `i`, if the
    /// source follows that shape there.
    fn box_scale(&self, _singularity: usize) -> Option<f64> {
        None
    }

    /// `eta` together with a trust score in `[0, 1]`.
    fn eta_trust(&self, p: &ChartPoint) -> (f64, f64) {
        (self.eta(p), 1.0)
    }
}

/// Direct (uncached) flow-disc evaluation.
pub struct DirectEta<'a> {
    pub spec: &'a FoliationSpec,
    pub model: &'a EtaModel,
}

impl EtaSource for DirectEta<'_> {
    fn eta(&self, p: &ChartPoint) -> f64 {
        self.model.eta_estimate(self.spec, p).value
    }

    fn eta_trust(&self, p: &ChartPoint) -> (f64, f64) {
        let e = self.model.eta_estimate(self.spec, p);
        (e.value, e.trust)
    }

    fn box_scale(&self, i: usize) -> Option<f64> {
        self.model.box_scale(i)
    }
}

/// Constant `eta` (fixtures).
pub struct ConstantEta(pub f64);

impl EtaSource for ConstantEta {
    fn eta(&self, _p: &ChartPoint) -> f64 {
        self.0
    }
}

impl<F: Fn(&ChartPoint) -> f64 + Sync> EtaSource for F {
    fn eta(&self, p: &ChartPoint) -> f64 {
        self(p)
    }
}

/// Lazily filled grid of `log eta` with multilinear interpolation.
///
/// Each chart `c` carries a grid over `Re u, Im u, Re v, Im v in [-1, 1]` of
/// its canonical region. Node values depend only on the node, so the table is
/// deterministic regardless of fill order or thread count. Points inside a
/// singular box use the box formula directly.
pub struct EtaTable<'a> {
    spec: &'a FoliationSpec,
    model: &'a EtaModel,
    n: usize,
    nodes: Vec<AtomicU64>,
    trust: Vec<AtomicU64>,
    filled: AtomicU64,
}

const EMPTY: u64 = u64::MAX;

impl<'a> EtaTable<'a> {
    pub fn new(spec: &'a FoliationSpec, model: &'a EtaModel, nodes_per_axis: usize) -> Self {
        let n = nodes_per_axis.max(2);
        let total = 3 * n * n * n * n;
        Self {
            spec,
            model,
            n,
            nodes: (0..total).map(|_| AtomicU64::new(EMPTY)).collect(),
            trust: (0..total).map(|_| AtomicU64::new(0)).collect(),
            filled: AtomicU64::new(0),
        }
    }

    pub fn filled(&self) -> u64 {
        self.filled.load(Ordering::Relaxed)
    }

    fn coord(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / (self.n - 1) as f64
    }

    /// `(log eta, trust)` at a node, computing it on first use.
    fn node(&self, chart: usize, idx: [usize; 4]) -> (f64, f64) {
        let n = self.n;
        let flat = (((chart * n + idx[0]) * n + idx[1]) * n + idx[2]) * n + idx[3];
        let bits = self.nodes[flat].load(Ordering::Acquire);
        if bits != EMPTY {
            return (
                f64::from_bits(bits),
                f64::from_bits(self.trust[flat].load(Ordering::Relaxed)),
            );
        }
        let p = ChartPoint::new(
            chart,
            C64::new(self.coord(idx[0]), self.coord(idx[1])),
            C64::new(self.coord(idx[2]), self.coord(idx[3])),
        );
        let est = self.model.eta_estimate(self.spec, &p);
        let v = est.value.max(1e-300).ln();
        self.trust[flat].store(est.trust.to_bits(), Ordering::Relaxed);
        self.nodes[flat].store(v.to_bits(), Ordering::Release);
        self.filled.fetch_add(1, Ordering::Relaxed);
        (v, est.trust)
    }

    fn interpolate(&self, p: &ChartPoint) -> (f64, f64) {
        let (idx, s) = self.model.nearest(p);
        if s < self.model.boxes[idx].1 {
            return (self.model.box_value(idx, s), 1.0);
        }
        let q = p.canonical();
        let x = [q.u.re, q.u.im, q.v.re, q.v.im];
        let step = 2.0 / (self.n - 1) as f64;
        let mut base = [0usize; 4];
        let mut frac = [0.0; 4];
        for i in 0..4 {
            let t = ((x[i] + 1.0) / step).clamp(0.0, (self.n - 1) as f64);
            let k = (t.floor() as usize).min(self.n - 2);
            base[i] = k;
            frac[i] = t - k as f64;
        }
        let mut acc = 0.0;
        let mut trust = 0.0;
        for corner in 0..16usize {
            let mut w = 1.0;
            let mut idx = base;
            for i in 0..4 {
                if corner >> i & 1 == 1 {
                    idx[i] += 1;
                    w *= frac[i];
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w > 0.0 {
                let (v, t) = self.node(q.chart, idx);
                acc += w * v;
                trust += w * t;
            }
        }
        (acc.exp(), trust)
    }
}

impl EtaSource for EtaTable<'_> {
    fn box_scale(&self, i: usize) -> Option<f64> {
        self.model.box_scale(i)
    }

    fn eta(&self, p: &ChartPoint) -> f64 {
        self.interpolate(p).0
    }

    fn eta_trust(&self, p: &ChartPoint) -> (f64, f64) {
        self.interpolate(p)
    }
}
