//! Numerical oracle suites shared by the acceptance harness, `selftest` and
//! `verify-local-model`. Each returns residual maxima; thresholds live with the caller
//! except in [`CheckTable`]s, which carry their own.

use crate::chart::{AmbientMetric, ChartPoint, Vec2};
use crate::disc::{diffuse, dynkin_residual, DiscBrownianConfig, DiscPoint};
use crate::error::{Error, Result};
use crate::eta::{ConstantEta, EtaSource};
use crate::flow::{flow_field, FlowOptions};
use crate::foliation::{linear_model, FoliationSpec};
use crate::local_model::{calibrate_kappa_constant, LocalModel, ModelPoint};
use crate::rng::stream;
use crate::stats::{batch_means, Estimate, BATCH_SIZE};
use crate::walker::Leafwise;
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `None` for informational rows.
    pub threshold: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: Some(threshold),
            pass: value < threshold,
        }
    }

    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            pass: value <= threshold,
            ..Self::below(name, value, threshold)
        }
    }

    pub fn info(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: None,
            pass: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTable {
    pub checks: Vec<Check>,
}

impl CheckTable {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let thr = c.threshold.map_or("-".to_string(), |t| format!("{t:.1e}"));
            let verdict = match (c.threshold, c.pass) {
                (None, _) => "info",
                (_, true) => "pass",
                (_, false) => "FAIL",
            };
            let _ = writeln!(s, "{:<28} {:>12.4e}  {:>9}  {verdict}", c.name, c.value, thr);
        }
        s
    }
}

fn tight() -> FlowOptions {
    FlowOptions {
        rtol: 1e-13,
        atol: 1e-300,
        ..FlowOptions::default()
    }
}

/// Random `(x, zeta)` with `psi_x([0, zeta])` inside the bidisc and both moduli in `[e^-3, 0.9]`.
fn model_sample<R: Rng>(m: &LocalModel, rng: &mut R) -> (ModelPoint, C64) {
    loop {
        let mut coord = || {
            C64::from_polar(
                0.9 * (-3.0 * rng.random::<f64>()).exp(),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        };
        let x = ModelPoint::new(coord(), coord());
        let zeta = C64::from_polar(rng.random::<f64>(), rng.random_range(0.0..std::f64::consts::TAU));
        if m.psi(&x, zeta).1 {
            return (x, zeta);
        }
    }
}

/// Relative error of `exp(a - b)` against 1.
fn rel_log(a: f64, b: f64) -> f64 {
    (a - b).exp_m1().abs()
}

/// Transported holonomy along `psi_x` against the closed form `Phi_x`:
/// `(variational max rel err, central-difference max rel err)`.
pub fn local_holonomy_residuals(model: &LocalModel, n: usize, seed: u64) -> Result<(f64, f64)> {
    let spec = linear_model(model.lambda)?;
    let eta = ConstantEta(1.0);
    let lw = Leafwise::with_metric(&spec, &eta, AmbientMetric::EuclideanChart);
    let opts = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut var, mut fd): (f64, f64) = (0.0, 0.0);
    for _ in 0..n {
        let (x, zeta) = model_sample(model, &mut rng);
        let exact = model.log_phi_unchecked(&x, zeta);
        let p = ChartPoint::new(2, x.z, x.w);
        let normal = lw.unit_normal(&p)?;
        // psi_x is the flow of iZ.
        let seg = flow_field(&spec.field, &p, I * zeta, 2, &opts)?;
        let (lv, _) = lw.holonomy_increment(&seg, &normal)?;
        var = var.max(rel_log(lv, exact));

        let eps = 1e-5 * x.norm();
        let shifted = |s: f64| -> Result<Vec2> {
            let q = ChartPoint::new(2, x.z + normal[0] * s, x.w + normal[1] * s);
            Ok(flow_field(&spec.field, &q, I * zeta, 2, &opts)?.endpoint.coords())
        };
        let (a, b) = (shifted(eps)?, shifted(-eps)?);
        let jn = [(a[0] - b[0]) / (2.0 * eps), (a[1] - b[1]) / (2.0 * eps)];
        let end = seg.endpoint;
        let v = spec.field.eval(&end);
        let vv = v[0].norm_sqr() + v[1].norm_sqr();
        let c = (jn[0] * v[0].conj() + jn[1] * v[1].conj()) / vv;
        let m = [jn[0] - c * v[0], jn[1] - c * v[1]];
        let lf = (m[0].norm_sqr() + m[1].norm_sqr()).sqrt().ln();
        fd = fd.max(rel_log(lf, exact));
    }
    Ok((var, fd))
}

/// Analytic `∂∂̄ log Phi_x` against 5-point second differences: max relative error.
pub fn curvature_form_residual(model: &LocalModel, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (x, zeta) = model_sample(model, &mut rng);
        let exact = model.log_phi_hessian(&x, zeta)?;
        let h = 1e-3;
        let f = |z: C64| model.log_phi_unchecked(&x, z);
        let lap = (f(zeta + h) + f(zeta - h) + f(zeta + I * h) + f(zeta - I * h) - 4.0 * f(zeta)) / (h * h);
        worst = worst.max((lap / 4.0 - exact).abs() / exact.abs());
    }
    Ok(worst)
}

/// Full local-model suite for `verify-local-model`.
pub fn verify_local_model(lambda: C64, samples: usize, seed: u64) -> Result<CheckTable> {
    let model = LocalModel::new(lambda)?.oriented().0;
    let (var, fd) = local_holonomy_residuals(&model, samples, seed)?;
    let curv = curvature_form_residual(&model, samples, seed ^ 1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let flip = model.flipped();
    let (mut flip_res, mut sign_bad, mut sector_bad): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let (x, zeta) = model_sample(&model, &mut rng);
        let a = model.log_phi_unchecked(&x, zeta);
        let b = flip.log_phi_unchecked(&x.swapped(), model.lambda * zeta);
        flip_res = flip_res.max((a - b).abs() / a.abs().max(1.0));
        if model.kappa_exact(&x)? >= 0.0 {
            sign_bad += 1.0;
        }
        let probe = C64::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let s = model.sector(&x);
        // Points within 1e-9 of the boundary are skipped.
        let margin = (probe.im - s.log_z)
            .abs()
            .min(((model.lambda * probe).im - s.log_w).abs());
        if margin > 1e-9 && s.contains(probe) != model.psi(&x, probe).1 {
            sector_bad += 1.0;
        }
    }
    let c = calibrate_kappa_constant(&model, samples, seed ^ 3);
    Ok(CheckTable {
        checks: vec![
            Check::below("holonomy_variational", var, 1e-6),
            Check::below("holonomy_finite_difference", fd, 1e-6),
            Check::below("curvature_form", curv, 1e-4),
            Check::below("flip_symmetry", flip_res, 1e-9),
            Check::at_most("kappa_sign_violations", sign_bad, 0.0),
            Check::at_most("sector_mismatches", sector_bad, 0.0),
            Check::info("kappa_comparability_const", c),
        ],
    })
}

/// Point off the singular boxes, uniform for the Fubini–Study volume.
fn regular_point<R: Rng>(spec: &FoliationSpec, rng: &mut R) -> ChartPoint {
    loop {
        let z = [0, 1, 2].map(|_| crate::rng::complex_normal(rng));
        let k = (0..3).max_by(|&a, &b| z[a].norm().total_cmp(&z[b].norm())).unwrap_or(2);
        let Some(p) = ChartPoint::from_homogeneous(z, k) else {
            continue;
        };
        if spec
            .nearest_singularity(&p)
            .is_none_or(|(i, s)| s > 2.0 * spec.singularities[i].box_radius)
        {
            return p;
        }
    }
}

/// Random segment of ambient length at most `len` from a regular point.
fn random_segment<R: Rng>(spec: &FoliationSpec, rng: &mut R, len: f64) -> (ChartPoint, C64, usize) {
    let p = regular_point(spec, rng);
    let c = p.canonical_chart();
    let v = spec.field.eval_in(&p, c);
    let nv = AmbientMetric::FubiniStudy.norm(&p, &v);
    let zeta = C64::from_polar(
        len * rng.random_range(0.2..1.0) / nv,
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    (p, zeta, c)
}

fn diff_rel(a: &ChartPoint, b: &ChartPoint) -> f64 {
    let b = b.to_chart(a.chart).unwrap_or(*b);
    let d = ((a.u - b.u).norm_sqr() + (a.v - b.v).norm_sqr()).sqrt();
    d / (a.u.norm_sqr() + a.v.norm_sqr()).sqrt().max(1.0)
}

/// `(Jacobian vs central differences, group property)` maximum relative errors.
pub fn flow_consistency(spec: &FoliationSpec, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = tight();
    let (mut jac, mut group): (f64, f64) = (0.0, 0.0);
    for _ in 0..n {
        let (p, zeta, c) = random_segment(spec, &mut rng, 0.5);
        let seg = flow_field(&spec.field, &p, zeta, c, &opts)?;
        let end = seg.endpoint;
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..2 {
            let shift = |s: f64| -> Result<Vec2> {
                let mut q = p;
                if k == 0 {
                    q.u += s;
                } else {
                    q.v += s;
                }
                let e = flow_field(&spec.field, &q, zeta, c, &opts)?.endpoint;
                Ok(e.to_chart(end.chart).ok_or(Error::StencilOutside)?.coords())
            };
            let (a, b) = (shift(h)?, shift(-h)?);
            for r in 0..2 {
                let fdv = (a[r] - b[r]) / (2.0 * h);
                num += (fdv - seg.jacobian[r][k]).norm_sqr();
                den += seg.jacobian[r][k].norm_sqr();
            }
        }
        jac = jac.max((num / den).sqrt());
        let split = rng.random_range(0.2..0.8);
        let first = flow_field(&spec.field, &p, zeta * split, c, &opts)?;
        let second = flow_field(&spec.field, &first.endpoint, zeta * (1.0 - split), c, &opts)?;
        group = group.max(diff_rel(&end, &second.endpoint));
    }
    Ok((jac, group))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConventions {
    /// `D_t 1` at `t = 1`.
    pub d_t_one: f64,
    /// `E[dist_P(0, ω(t))] / t`.
    pub radial_speed: f64,
    /// `|lhs - rhs| / |lhs|` of the Dynkin formula for `|ζ|²` at `t = 2`.
    pub dynkin_rel: f64,
}

/// Disc Brownian motion conventions with `n_paths` paths up to time `t_speed`.
pub fn disc_conventions(n_paths: usize, t_speed: f64, seed: u64) -> Result<DiscConventions> {
    let one = diffuse(
        |_: &DiscPoint| 1.0,
        &DiscBrownianConfig {
            dt: 1e-3,
            t_max: 1.0,
            seed,
        },
        64,
    )?;
    let cfg = DiscBrownianConfig {
        dt: 1e-2,
        t_max: t_speed,
        seed: seed ^ 1,
    };
    let speed = diffuse(|p: &DiscPoint| p.dist_origin(), &cfg, n_paths)?;
    let dyn_cfg = DiscBrownianConfig {
        dt: 1e-3,
        t_max: 2.0,
        seed: seed ^ 2,
    };
    let dy = dynkin_residual(|z: C64| z.norm_sqr(), &dyn_cfg, n_paths)?;
    Ok(DiscConventions {
        d_t_one: one.estimate.mean,
        radial_speed: speed.estimate.mean / t_speed,
        dynkin_rel: dy.residual / dy.lhs.abs(),
    })
}

/// Smooth positive `eta` without box structure, for fixtures.
pub fn fixture_eta(spec: &FoliationSpec) -> impl EtaSource + '_ {
    move |p: &ChartPoint| {
        let s = spec.dist_to_singular_set(p);
        0.4 * s / (s + 0.05)
    }
}

/// `(multiplicativity residual per split, chart-switch independence per path)`:
/// `log H` over a segment against the sum over its two halves, and whole walker
/// paths with switch thresholds 2.0 and 2.5 (relative to `max(1, |log H|)`).
pub fn cocycle_algebra(spec: &FoliationSpec, n_paths: usize, steps: u64, seed: u64) -> Result<(f64, f64)> {
    let eta = fixture_eta(spec);
    let mut lw = Leafwise::new(spec, &eta);
    lw.flow = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mult: f64 = 0.0;
    for _ in 0..n_paths {
        let (p, zeta, c) = random_segment(spec, &mut rng, 0.2);
        let n0 = lw.unit_normal(&p)?;
        let whole = flow_field(&spec.field, &p, zeta, c, &lw.flow)?;
        let (l, _) = lw.holonomy_increment(&whole, &n0)?;
        let split = rng.random_range(0.2..0.8);
        let a = flow_field(&spec.field, &p, zeta * split, c, &lw.flow)?;
        let (la, n1) = lw.holonomy_increment(&a, &n0)?;
        let b = flow_field(&spec.field, &a.endpoint, zeta * (1.0 - split), c, &lw.flow)?;
        let (lb, _) = lw.holonomy_increment(&b, &n1)?;
        mult = mult.max((l - la - lb).abs());
    }

    let starts: Vec<ChartPoint> = (0..n_paths).map(|_| regular_point(spec, &mut rng)).collect();
    let run = |threshold: f64| -> Result<Vec<f64>> {
        let mut w = Leafwise::new(spec, &eta);
        w.flow.switch_threshold = threshold;
        starts
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut s = w.start(p, stream(seed, i as u64))?;
                for _ in 0..steps {
                    w.bm_step(&mut s, 1e-3)?;
                }
                Ok(s.log_holonomy)
            })
            .collect()
    };
    let (a, b) = (run(2.0)?, run(2.5)?);
    let chart = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max);
    Ok((mult, chart))
}

fn guarded(checks: &mut Vec<Check>, names: &[(&str, f64)], r: Result<Vec<f64>>, below: bool) {
    match r {
        Ok(vals) => {
            for ((name, thr), v) in names.iter().zip(vals) {
                checks.push(if below {
                    Check::below(name, v, *thr)
                } else {
                    Check::at_most(name, v, *thr)
                });
            }
        }
        Err(e) => {
            log::warn!("{}: {e}", names[0].0);
            for (name, thr) in names {
                checks.push(Check {
                    name: (*name).into(),
                    value: f64::NAN,
                    threshold: Some(*thr),
                    pass: false,
                });
            }
        }
    }
}

/// Cocycle and curvature channels of the pure local model at `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalExponent {
    pub chi: Estimate,
    pub chi_kappa: Estimate,
}

/// Leafwise Brownian motion on the leaf of `x` inside the bidisc, with the leaf's
/// exact Poincaré metric and the flat transverse metric.
///
/// The leaf is a sector `v + w^(1/k)`, `w` in the upper half plane, `k = pi/opening`.
/// Half-plane Brownian motion is `d log y = dB_2 - dt/2`, `dx = y dB_1`. The holonomy
/// is path independent, so the cocycle channel is `log Phi_x(zeta_T) / T`; the
/// curvature channel averages `2 y^2 |dzeta/dw|^2 ∂∂̄ log Phi_x` every `kappa_every` steps.
pub fn local_model_exponent(
    lambda: C64,
    x: ModelPoint,
    n_paths: usize,
    t_max: f64,
    dt: f64,
    seed: u64,
) -> Result<LocalExponent> {
    let (m, flipped) = LocalModel::new(lambda)?.oriented();
    let x = if flipped { x.swapped() } else { x };
    if !x.in_bidisc() || x.z.norm() == 0.0 || x.w.norm() == 0.0 {
        return Err(Error::Config("x must lie in the bidisc off the axes".into()));
    }
    if !(dt > 0.0 && t_max > dt) {
        return Err(Error::Config(format!("need 0 < dt < t_max, got {dt} and {t_max}")));
    }
    let sector = m.sector(&x);
    let v = sector.vertex();
    let k = std::f64::consts::PI / sector.opening();
    let w0 = C64::from_polar((-v).norm().powf(k), k * (-v).arg());
    let l = m.lambda;
    let c_h = -(l - 1.0).norm_sqr() / 2.0;
    let steps = (t_max / dt).round() as u64;
    let kappa_every = (0.25 / dt).round().max(1.0) as u64;
    let sq = dt.sqrt();
    let per_path: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            let (mut re, mut ls) = (w0.re, w0.im.ln());
            let (mut ksum, mut kn) = (0.0, 0u64);
            for n in 1..=steps {
                let n1 = rng.sample::<f64, _>(rand_distr::StandardNormal);
                let n2 = rng.sample::<f64, _>(rand_distr::StandardNormal);
                re += ls.exp() * sq * n1;
                ls += sq * n2 - 0.5 * dt;
                if n % kappa_every == 0 {
                    let w = C64::new(re, ls.exp());
                    let zeta = v + w.powf(1.0 / k);
                    let (p, _) = m.psi(&x, zeta);
                    let a = p.z.norm_sqr();
                    let b = (l * p.w).norm_sqr();
                    let h = c_h * a * b / ((a + b) * (a + b));
                    let dz = w.powf(1.0 / k - 1.0) / k;
                    ksum += 2.0 * w.im * w.im * dz.norm_sqr() * h;
                    kn += 1;
                }
            }
            let zeta = v + C64::new(re, ls.exp()).powf(1.0 / k);
            (m.log_phi_unchecked(&x, zeta) / t_max, ksum / kn.max(1) as f64)
        })
        .collect();
    let (chi, kap): (Vec<f64>, Vec<f64>) = per_path.into_iter().unzip();
    if chi.iter().chain(&kap).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("local model exponent".into()));
    }
    Ok(LocalExponent {
        chi: batch_means(&chi, BATCH_SIZE),
        chi_kappa: batch_means(&kap, BATCH_SIZE),
    })
}

/// Reduced-scale acceptance suite. `inject_fault` corrupts one chart coefficient of
/// the test foliation.
pub fn selftest(inject_fault: bool) -> Result<CheckTable> {
    use crate::checkpoint::Checkpoint;
    use crate::estimators::{RunConfig, Simulation};
    use crate::eta::EtaTable;
    use crate::foliation::{jouanolou, SpecFile};

    let mut spec = jouanolou(2)?;
    if inject_fault {
        spec.field.perturb_coefficient(1, 1, 0, C64::new(0.25, 0.0));
    }
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    checks.push(Check::below(
        "chart_coherence",
        spec.field.coherence_defect(100, &mut rng),
        1e-9,
    ));

    let model = LocalModel::new(C64::new(0.3, 1.1))?;
    guarded(
        &mut checks,
        &[("c1_holonomy_variational", 1e-6), ("c1_holonomy_finite_diff", 1e-6)],
        local_holonomy_residuals(&model, 20, 1).map(|(a, b)| vec![a, b]),
        true,
    );
    guarded(
        &mut checks,
        &[("c2_curvature_form", 1e-4)],
        curvature_form_residual(&model, 20, 2).map(|a| vec![a]),
        true,
    );
    guarded(
        &mut checks,
        &[("c3_jacobian_vs_fd", 1e-5), ("c3_group_property", 1e-8)],
        flow_consistency(&spec, 20, 3).map(|(a, b)| vec![a, b]),
        true,
    );
    guarded(
        &mut checks,
        &[
            ("c4_d_t_one", 0.0),
            ("c4_radial_speed_off_half", 0.025),
            ("c4_dynkin_rel", 0.02),
        ],
        disc_conventions(2000, 50.0, 4)
            .map(|d| vec![(d.d_t_one - 1.0).abs(), (d.radial_speed - 0.5).abs(), d.dynkin_rel]),
        false,
    );
    guarded(
        &mut checks,
        &[("c5_multiplicativity", 1e-10), ("c5_chart_independence", 1e-6)],
        cocycle_algebra(&spec, 8, 500, 5).map(|(a, b)| vec![a, b]),
        true,
    );

    let cfg = RunConfig {
        foliation: SpecFile {
            family: Some("jouanolou".into()),
            degree: Some(2),
            ..SpecFile::default()
        },
        n_paths: 32,
        t_max: 3.0,
        burn_in: 1.0,
        eta_nodes: 5,
        seed: 6,
        ..RunConfig::default()
    };
    let eta_model = cfg.eta_model(&spec);
    let table = EtaTable::new(&spec, &eta_model, cfg.eta_nodes);
    let run = || -> Result<Vec<f64>> {
        let mut a = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone())?;
        let ra = a.run();
        let mut b = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone())?;
        let rb = b.run();
        let mut c = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone())?;
        c.advance_to(c.total_steps() / 2);
        let text = Checkpoint {
            config: c.cfg.clone(),
            step: c.step,
            paths: c.paths.clone(),
        }
        .to_text()?;
        let ck = Checkpoint::parse(&text)?;
        let mut r = Simulation::restore(cfg.leafwise(&spec, &table), ck.config, ck.step, ck.paths)?;
        let rc = r.run();
        let finite = [
            ra.chi_cocycle.mean,
            ra.chi_kappa.mean,
            ra.fs_mass.mean,
            ra.integrability.w.mean,
        ]
        .iter()
        .all(|x| x.is_finite());
        Ok(vec![
            if finite { 0.0 } else { 1.0 },
            ra.calibrated.residual_mass_identity,
            if ra.ergodicity.is_some() { 0.0 } else { 1.0 },
            if ra.to_json()? == rb.to_json()? { 0.0 } else { 1.0 },
            if ra.to_json()? == rc.to_json()? { 0.0 } else { 1.0 },
        ])
    };
    guarded(
        &mut checks,
        &[
            ("c6_channels_finite", 0.0),
            ("c6_calibrated_mass_residual", 1e-12),
            ("c8_ergodicity_reported", 0.0),
            ("c10_determinism", 0.0),
            ("c10_resume_equivalence", 0.0),
        ],
        run(),
        false,
    );
    Ok(CheckTable { checks })
}
