//! Ensemble estimators: Lyapunov exponent (cocycle and curvature channels),
//! Fubini–Study mass, and the identities tying them together.
//!
//! Paths are the i.i.d. unit: every channel first reduces each path to a
//! time average, then batch means over groups of [`BATCH_SIZE`] paths give
//! 95% intervals.

use crate::chart::{AmbientMetric, ChartPoint};
use crate::error::{Error, Result};
use crate::eta::{EtaModel, EtaOptions, EtaSource};
use crate::foliation::{FoliationSpec, SpecFile};
use crate::rng::{complex_normal, stream};
use crate::stats::{batch_means, ratio_means, Estimate, RunningSum, BATCH_SIZE};
use crate::walker::{LeafWalkerState, Leafwise, WalkerFlags};
use crate::C64;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Bins of the `eta` trust histogram over `[0, 1]`.
pub const TRUST_BINS: usize = 10;
/// Largest tolerated fraction of aborted paths.
pub const MAX_ABORTED_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(with = "ratio_text")]
    pub chi: Ratio<i64>,
    pub deg_nor: i64,
    pub deg_cotan: i64,
}

/// Rationals as `"-5/2"` strings.
mod ratio_text {
    use num_rational::Ratio;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<i64>, D::Error> {
        let t = String::deserialize(d)?;
        t.parse().map_err(D::Error::custom)
    }
}

/// `chi = -(d+2)/(d-1)` with the normal and cotangent degrees.
pub fn predict_chi(d: usize) -> Result<Prediction> {
    if d < 2 {
        return Err(Error::Config(format!("degree must be at least 2, got {d}")));
    }
    let d = d as i64;
    Ok(Prediction {
        chi: Ratio::new(-(d + 2), d - 1),
        deg_nor: d + 2,
        deg_cotan: d - 1,
    })
}

/// `|(d-1) m - 1|`.
pub fn mass_identity_residual(d: usize, m: f64) -> f64 {
    ((d as f64 - 1.0) * m - 1.0).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaMode {
    Raw,
    Calibrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StartMode {
    /// Every path starts at this point.
    Fixed { chart: usize, u: [f64; 2], v: [f64; 2] },
    /// Each start group gets its own Fubini–Study-uniform random point.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub foliation: SpecFile,
    pub n_paths: usize,
    /// Poincaré time horizon.
    pub t_max: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub eta_mode: EtaMode,
    pub start_mode: StartMode,
    /// Path `i` belongs to start group `i % start_groups`.
    pub start_groups: usize,
    /// Initial global scale of `eta`.
    pub beta: f64,
    pub c_brody: f64,
    /// Nodes per axis of the `eta` table.
    pub eta_nodes: usize,
    /// Poincaré time between curvature samples.
    pub kappa_interval: f64,
    /// Relative stencil step of the curvature probe.
    pub kappa_h: f64,
    /// Poincaré time between mass and weight samples.
    pub sample_interval: f64,
    pub metric: AmbientMetric,
    pub switch_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            foliation: SpecFile {
                family: Some("jouanolou".into()),
                degree: Some(2),
                ..SpecFile::default()
            },
            n_paths: 64,
            t_max: 200.0,
            dt: 1e-3,
            burn_in: 20.0,
            seed: 1,
            eta_mode: EtaMode::Calibrated,
            start_mode: StartMode::Random,
            start_groups: 2,
            beta: 1.0,
            c_brody: 4.0,
            eta_nodes: 9,
            kappa_interval: 0.25,
            kappa_h: 1e-3,
            sample_interval: 0.01,
            metric: AmbientMetric::FubiniStudy,
            switch_threshold: crate::flow::FlowOptions::default().switch_threshold,
        }
    }
}

fn steps_of(t: f64, dt: f64) -> u64 {
    (t / dt).round() as u64
}

impl RunConfig {
    /// Parses a TOML run configuration; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_max && self.t_max.is_finite()) {
            return bad(format!(
                "need 0 <= burn_in < t_max, got {} and {}",
                self.burn_in, self.t_max
            ));
        }
        if steps_of(self.t_max, self.dt) <= steps_of(self.burn_in, self.dt) {
            return bad("averaging window shorter than one step".into());
        }
        if self.n_paths < BATCH_SIZE {
            return bad(format!("n_paths must be at least {BATCH_SIZE}, got {}", self.n_paths));
        }
        if self.start_groups == 0 || self.start_groups > self.n_paths {
            return bad(format!(
                "start_groups must be in 1..=n_paths, got {}",
                self.start_groups
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.c_brody > 0.0) {
            return bad(format!("c_brody must be positive, got {}", self.c_brody));
        }
        if self.eta_nodes < 2 {
            return bad("eta_nodes must be at least 2".into());
        }
        if !(self.kappa_interval > 0.0 && self.sample_interval > 0.0) {
            return bad("sampling intervals must be positive".into());
        }
        if !(self.kappa_h > 0.0 && self.kappa_h < 1.0) {
            return bad(format!("kappa_h must be in (0, 1), got {}", self.kappa_h));
        }
        if !(self.switch_threshold > 1.0) {
            return bad(format!("switch_threshold must exceed 1, got {}", self.switch_threshold));
        }
        if let StartMode::Fixed { chart, .. } = self.start_mode {
            if chart > 2 {
                return bad(format!("chart must be 0, 1 or 2, got {chart}"));
            }
        }
        Ok(())
    }

    pub fn eta_options(&self) -> EtaOptions {
        EtaOptions {
            beta: self.beta,
            c_brody: self.c_brody,
            ..EtaOptions::default()
        }
    }

    pub fn eta_model(&self, spec: &FoliationSpec) -> EtaModel {
        EtaModel::new(spec, self.eta_options())
    }

    /// Walker dynamics configured from this run.
    pub fn leafwise<'a>(&self, spec: &'a FoliationSpec, eta: &'a dyn EtaSource) -> Leafwise<'a> {
        let mut lw = Leafwise::with_metric(spec, eta, self.metric);
        lw.flow.switch_threshold = self.switch_threshold;
        lw
    }

    fn plan(&self) -> Plan {
        let every = |t: f64| steps_of(t, self.dt).max(1);
        let total = steps_of(self.t_max, self.dt);
        Plan {
            dt: self.dt,
            total,
            burn: steps_of(self.burn_in, self.dt),
            half: steps_of(0.5 * self.t_max, self.dt),
            sample_every: every(self.sample_interval),
            kappa_every: every(self.kappa_interval),
            window: every(1.0),
            kappa_h: self.kappa_h,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Plan {
    dt: f64,
    total: u64,
    burn: u64,
    half: u64,
    sample_every: u64,
    kappa_every: u64,
    window: u64,
    kappa_h: f64,
}

/// Per-path time averages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathAccum {
    pub log_h_burn: f64,
    pub eta2: RunningSum,
    pub eta2_half: RunningSum,
    pub w: RunningSum,
    pub w_half: RunningSum,
    pub logstar: RunningSum,
    pub logstar_half: RunningSum,
    pub kappa: RunningSum,
    pub kappa_failures: u64,
    pub eta_max: f64,
    pub trust: [u64; TRUST_BINS],
    /// Largest `|Δ log H| / mean log* dist` over unit-time windows.
    pub f1_ratio_max: f64,
    pub window_log_h: f64,
    pub window_logstar: RunningSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub id: usize,
    pub group: usize,
    pub walker: LeafWalkerState,
    pub acc: PathAccum,
    pub aborted: Option<String>,
}

/// Curvature probe override (fixtures).
pub type KappaProbe<'a> = dyn Fn(&LeafWalkerState) -> Result<f64> + Sync + 'a;

/// `(path, time, chart, u, v, log H)` at a sampling instant.
pub type TrajectoryRow = (usize, f64, usize, [f64; 2], [f64; 2], f64);

/// A running ensemble that can be advanced in chunks and reported at any time.
pub struct Simulation<'a> {
    pub cfg: RunConfig,
    lw: Leafwise<'a>,
    probe: Option<&'a KappaProbe<'a>>,
    plan: Plan,
    pub paths: Vec<PathState>,
    pub step: u64,
}

/// Fubini–Study-uniform random point of `P^2`, away from singular boxes.
pub fn random_start(spec: &FoliationSpec, seed: u64, group: usize) -> ChartPoint {
    let mut rng = stream(seed, u64::MAX - group as u64);
    loop {
        let z = [
            complex_normal(&mut rng),
            complex_normal(&mut rng),
            complex_normal(&mut rng),
        ];
        let k = (0..3).max_by(|&a, &b| z[a].norm().total_cmp(&z[b].norm())).unwrap_or(2);
        let Some(p) = ChartPoint::from_homogeneous(z, k) else {
            continue;
        };
        let clear = spec
            .nearest_singularity(&p)
            .is_none_or(|(i, s)| s > 2.0 * spec.singularities[i].box_radius);
        if clear {
            return p;
        }
    }
}

impl<'a> Simulation<'a> {
    pub fn new(lw: Leafwise<'a>, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        lw.spec.validate_for_runs()?;
        let starts: Vec<ChartPoint> = match cfg.start_mode {
            StartMode::Fixed { chart, u, v } => {
                let p = ChartPoint::new(chart, C64::new(u[0], u[1]), C64::new(v[0], v[1]));
                if !p.is_finite() {
                    return Err(Error::Config("non-finite start point".into()));
                }
                vec![p; cfg.start_groups]
            }
            StartMode::Random => (0..cfg.start_groups)
                .map(|g| random_start(lw.spec, cfg.seed, g))
                .collect(),
        };
        let paths = (0..cfg.n_paths)
            .map(|id| {
                let group = id % cfg.start_groups;
                let walker = lw.start(&starts[group], stream(cfg.seed, id as u64))?;
                Ok(PathState {
                    id,
                    group,
                    walker,
                    acc: PathAccum::default(),
                    aborted: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let plan = cfg.plan();
        Ok(Self {
            cfg,
            lw,
            probe: None,
            plan,
            paths,
            step: 0,
        })
    }

    /// Rebuilds a simulation from saved path states.
    pub fn restore(lw: Leafwise<'a>, cfg: RunConfig, step: u64, paths: Vec<PathState>) -> Result<Self> {
        cfg.validate()?;
        if paths.len() != cfg.n_paths {
            return Err(Error::Checkpoint(format!(
                "{} path states for {} paths",
                paths.len(),
                cfg.n_paths
            )));
        }
        let plan = cfg.plan();
        if step > plan.total {
            return Err(Error::Checkpoint(format!("step {step} beyond horizon {}", plan.total)));
        }
        Ok(Self {
            cfg,
            lw,
            probe: None,
            plan,
            paths,
            step,
        })
    }

    pub fn with_kappa_probe(mut self, probe: &'a KappaProbe<'a>) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn total_steps(&self) -> u64 {
        self.plan.total
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.plan.total
    }

    pub fn leafwise(&self) -> &Leafwise<'a> {
        &self.lw
    }

    /// Advances every live path to step `min(target, total)`.
    pub fn advance_to(&mut self, target: u64) {
        let to = target.min(self.plan.total);
        if to <= self.step {
            return;
        }
        let from = self.step;
        let (lw, plan, probe) = (&self.lw, self.plan, self.probe);
        self.paths
            .par_iter_mut()
            .for_each(|p| advance_path(lw, &plan, probe, p, from, to));
        self.step = to;
    }

    pub fn run(&mut self) -> EstimatorReport {
        self.advance_to(self.plan.total);
        self.report()
    }

    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        let t = self.step as f64 * self.plan.dt;
        self.paths
            .iter()
            .filter(|p| p.aborted.is_none())
            .map(|p| {
                let q = &p.walker.point;
                (
                    p.id,
                    t,
                    q.chart,
                    [q.u.re, q.u.im],
                    [q.v.re, q.v.im],
                    p.walker.log_holonomy,
                )
            })
            .collect()
    }

    pub fn report(&self) -> EstimatorReport {
        build_report(self)
    }
}

fn advance_path(lw: &Leafwise, plan: &Plan, probe: Option<&KappaProbe>, path: &mut PathState, from: u64, to: u64) {
    if path.aborted.is_some() {
        return;
    }
    let (w, acc) = (&mut path.walker, &mut path.acc);
    for k in from..to {
        if k == plan.burn {
            acc.log_h_burn = w.log_holonomy;
            acc.window_log_h = w.log_holonomy;
        }
        if k >= plan.burn {
            let j = k - plan.burn;
            if j > 0 && j.is_multiple_of(plan.window) {
                let scale = acc.window_logstar.mean();
                if scale > 0.0 {
                    let r = (w.log_holonomy - acc.window_log_h).abs() / (plan.window as f64 * plan.dt) / scale;
                    acc.f1_ratio_max = acc.f1_ratio_max.max(r);
                }
                acc.window_log_h = w.log_holonomy;
                acc.window_logstar = RunningSum::default();
            }
            if j.is_multiple_of(plan.sample_every) {
                let (eta, trust) = lw.eta_trust_of(w);
                let (ls, weight) = lw.weights_of(w);
                acc.eta2.push(eta * eta);
                acc.w.push(weight);
                acc.logstar.push(ls);
                acc.window_logstar.push(ls);
                if k < plan.half {
                    acc.eta2_half.push(eta * eta);
                    acc.w_half.push(weight);
                    acc.logstar_half.push(ls);
                }
                acc.eta_max = acc.eta_max.max(eta);
                let bin = ((trust.clamp(0.0, 1.0) * TRUST_BINS as f64) as usize).min(TRUST_BINS - 1);
                acc.trust[bin] += 1;
            }
            if j.is_multiple_of(plan.kappa_every) {
                let v = match probe {
                    Some(f) => f(w),
                    None => lw.kappa_of(w, plan.kappa_h),
                };
                match v {
                    Ok(v) if v.is_finite() => acc.kappa.push(v),
                    _ => acc.kappa_failures += 1,
                }
            }
        }
        if let Err(e) = lw.bm_step(w, plan.dt) {
            log::warn!("path {} aborted at step {k}: {e}", path.id);
            path.aborted = Some(e.to_string());
            return;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub chi_cocycle: Estimate,
    pub chi_kappa: Estimate,
    pub fs_mass: Estimate,
    pub residual_mass_identity: f64,
    pub residual_cross: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub residual: f64,
    pub chi_negative: bool,
    pub pass: bool,
}

/// Largest pairwise discrepancy among `chi_cocycle`, `chi_kappa` and `-(d+2) m`
/// in combined half-widths; passes iff at most 2 and `chi_cocycle` is certainly negative.
pub fn cross_consistency(chi_c: &Estimate, chi_k: &Estimate, m: &Estimate, d: usize) -> CrossCheck {
    let from_mass = m.scaled(-(d as f64 + 2.0));
    let residual = chi_c
        .discrepancy(chi_k)
        .max(chi_c.discrepancy(&from_mass))
        .max(chi_k.discrepancy(&from_mass));
    let chi_negative = chi_c.hi() < 0.0;
    CrossCheck {
        residual,
        chi_negative,
        pass: residual <= 2.0 && chi_negative,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ergodicity {
    /// Calibrated cocycle exponent per start group.
    pub group_chi: Vec<Estimate>,
    pub starts: Vec<ChartPoint>,
    pub discrepancy: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrability {
    pub w: Estimate,
    pub w_half: Estimate,
    pub w_change: f64,
    pub logstar: Estimate,
    pub logstar_half: Estimate,
    pub logstar_change: f64,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaSystematics {
    /// Quartiles of the per-path ratio `chi_i / m_i`.
    pub ratio_quartiles: [f64; 3],
    pub corr_mass_chi: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    pub completed_paths: usize,
    pub aborted_paths: usize,
    pub aborted_fraction: f64,
    pub abort_reasons: Vec<String>,
    pub walker: WalkerFlags,
    pub kappa_samples: u64,
    pub kappa_failures: u64,
    pub eta_trust_histogram: [u64; TRUST_BINS],
    pub eta_max: f64,
    /// Measured constant in `|F1| <= c log* dist` over unit-time windows.
    pub f1_growth_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub status: RunStatus,
    pub family: String,
    pub degree: usize,
    pub config: RunConfig,
    #[serde(with = "ratio_text")]
    pub predicted_chi: Ratio<i64>,
    pub deg_nor: i64,
    pub deg_cotan: i64,
    pub eta_mode: EtaMode,
    /// Headline channels in the selected `eta_mode`.
    pub chi_cocycle: Estimate,
    pub chi_kappa: Estimate,
    pub fs_mass: Estimate,
    pub beta_fit: f64,
    /// Factor `(beta_fit / beta)^2` applied to raw exponents by calibration.
    pub calibration_factor: f64,
    pub residual_mass_identity: f64,
    pub residual_cross: f64,
    pub cross_consistency: CrossCheck,
    pub raw: ChannelSet,
    pub calibrated: ChannelSet,
    pub ergodicity: Option<Ergodicity>,
    pub integrability: Integrability,
    pub diagnostics: Diagnostics,
    pub eta_systematics: Option<EtaSystematics>,
    pub notes: Vec<String>,
}

fn quartiles(mut v: Vec<f64>) -> [f64; 3] {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return [f64::NAN; 3];
    }
    v.sort_by(f64::total_cmp);
    let q = |f: f64| v[((v.len() - 1) as f64 * f).round() as usize];
    [q(0.25), q(0.5), q(0.75)]
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn relative_change(full: f64, half: f64) -> f64 {
    ((full - half) / full).abs()
}

fn build_report(sim: &Simulation) -> EstimatorReport {
    let cfg = &sim.cfg;
    let plan = &sim.plan;
    let d = sim.lw.spec.degree();
    let pred = predict_chi(d).unwrap_or(Prediction {
        chi: Ratio::from_integer(0),
        deg_nor: d as i64 + 2,
        deg_cotan: d as i64 - 1,
    });
    let live: Vec<&PathState> = sim.paths.iter().filter(|p| p.aborted.is_none()).collect();
    let window = (sim.step.saturating_sub(plan.burn)) as f64 * plan.dt;
    let chi: Vec<f64> = live
        .iter()
        .map(|p| (p.walker.log_holonomy - p.acc.log_h_burn) / window)
        .collect();
    let kap: Vec<f64> = live.iter().map(|p| p.acc.kappa.mean()).collect();
    let mass: Vec<f64> = live.iter().map(|p| p.acc.eta2.mean()).collect();
    let per = |f: &dyn Fn(&PathAccum) -> f64| -> Vec<f64> { live.iter().map(|p| f(&p.acc)).collect() };

    let raw_c = batch_means(&chi, BATCH_SIZE);
    let raw_k = batch_means(&kap, BATCH_SIZE);
    let raw_m = batch_means(&mass, BATCH_SIZE);
    let cross = cross_consistency(&raw_c, &raw_k, &raw_m, d);
    let raw = ChannelSet {
        chi_cocycle: raw_c,
        chi_kappa: raw_k,
        fs_mass: raw_m,
        residual_mass_identity: mass_identity_residual(d, raw_m.mean),
        residual_cross: cross.residual,
    };

    let dm1 = d as f64 - 1.0;
    let factor = 1.0 / (dm1 * raw_m.mean);
    let cal_m = raw_m.scaled(factor);
    let calibrated = ChannelSet {
        chi_cocycle: ratio_means(&chi, &mass, BATCH_SIZE).scaled(1.0 / dm1),
        chi_kappa: ratio_means(&kap, &mass, BATCH_SIZE).scaled(1.0 / dm1),
        fs_mass: cal_m,
        residual_mass_identity: mass_identity_residual(d, cal_m.mean),
        residual_cross: cross.residual,
    };
    let head = match cfg.eta_mode {
        EtaMode::Raw => &raw,
        EtaMode::Calibrated => &calibrated,
    };

    let ergodicity = (cfg.start_mode == StartMode::Random && cfg.start_groups >= 2).then(|| {
        let group_chi: Vec<Estimate> = (0..cfg.start_groups)
            .map(|g| {
                let idx: Vec<usize> = (0..live.len()).filter(|&i| live[i].group == g).collect();
                let c: Vec<f64> = idx.iter().map(|&i| chi[i]).collect();
                let m: Vec<f64> = idx.iter().map(|&i| mass[i]).collect();
                ratio_means(&c, &m, BATCH_SIZE).scaled(1.0 / dm1)
            })
            .collect();
        let mut disc: f64 = 0.0;
        for a in 0..group_chi.len() {
            for b in a + 1..group_chi.len() {
                disc = disc.max(group_chi[a].discrepancy(&group_chi[b]));
            }
        }
        let pass = disc <= 1.0 && group_chi.iter().all(|g| g.half_width.is_finite());
        Ergodicity {
            starts: (0..cfg.start_groups)
                .map(|g| random_start(sim.lw.spec, cfg.seed, g))
                .collect(),
            group_chi,
            discrepancy: disc,
            pass,
        }
    });

    let w = batch_means(&per(&|a| a.w.mean()), BATCH_SIZE);
    let w_half = batch_means(&per(&|a| a.w_half.mean()), BATCH_SIZE);
    let ls = batch_means(&per(&|a| a.logstar.mean()), BATCH_SIZE);
    let ls_half = batch_means(&per(&|a| a.logstar_half.mean()), BATCH_SIZE);
    let w_change = relative_change(w.mean, w_half.mean);
    let logstar_change = relative_change(ls.mean, ls_half.mean);
    let integrability = Integrability {
        w,
        w_half,
        w_change,
        logstar: ls,
        logstar_half: ls_half,
        logstar_change,
        stable: w.mean.is_finite() && ls.mean.is_finite() && w_change < 0.05 && logstar_change < 0.05,
    };

    let mut flags = WalkerFlags::default();
    let mut trust = [0u64; TRUST_BINS];
    let (mut ks, mut kf, mut eta_max, mut f1): (u64, u64, f64, f64) = (0, 0, 0.0, 0.0);
    for p in &sim.paths {
        let f = &p.walker.flags;
        flags.box_entries += f.box_entries;
        flags.guard_trips += f.guard_trips;
        flags.split_steps += f.split_steps;
        flags.retries += f.retries;
        flags.floor_redraws += f.floor_redraws;
        flags.deep_entries += f.deep_entries;
        flags.deep_steps += f.deep_steps;
        for (t, c) in trust.iter_mut().zip(p.acc.trust) {
            *t += c;
        }
        ks += p.acc.kappa.count;
        kf += p.acc.kappa_failures;
        eta_max = eta_max.max(p.acc.eta_max);
        f1 = f1.max(p.acc.f1_ratio_max);
    }
    let aborted = sim.paths.len() - live.len();
    let aborted_fraction = aborted as f64 / sim.paths.len() as f64;
    let diagnostics = Diagnostics {
        steps: sim.step,
        completed_paths: live.len(),
        aborted_paths: aborted,
        aborted_fraction,
        abort_reasons: sim.paths.iter().filter_map(|p| p.aborted.clone()).take(8).collect(),
        walker: flags,
        kappa_samples: ks,
        kappa_failures: kf,
        eta_trust_histogram: trust,
        eta_max,
        f1_growth_constant: f1,
    };

    let eta_systematics = (!cross.pass).then(|| EtaSystematics {
        ratio_quartiles: quartiles(chi.iter().zip(&mass).map(|(c, m)| c / m).collect()),
        corr_mass_chi: correlation(&mass, &chi),
        note: "channels disagree; eta is estimated only up to a bounded factor, \
               see raw mass and per-path ratios"
            .into(),
    });

    let status = if aborted_fraction > MAX_ABORTED_FRACTION {
        RunStatus::Failed(format!("{aborted} of {} paths aborted", sim.paths.len()))
    } else if sim.step < plan.total {
        RunStatus::Incomplete
    } else {
        RunStatus::Complete
    };

    let mut notes = vec![
        "cross-consistency cannot detect an eta bias correlated with curvature; \
         the mass identity channel partially constrains it"
            .to_string(),
    ];
    if sim.lw.spec.family_tag.starts_with("random") {
        notes.push("random foliation: absence of invariant algebraic curves assumed, not checked".into());
    }
    notes.extend(sim.lw.spec.assumptions.iter().cloned());

    EstimatorReport {
        status,
        family: sim.lw.spec.family_tag.clone(),
        degree: d,
        config: cfg.clone(),
        predicted_chi: pred.chi,
        deg_nor: pred.deg_nor,
        deg_cotan: pred.deg_cotan,
        eta_mode: cfg.eta_mode,
        chi_cocycle: head.chi_cocycle,
        chi_kappa: head.chi_kappa,
        fs_mass: head.fs_mass,
        beta_fit: cfg.beta * factor.sqrt(),
        calibration_factor: factor,
        residual_mass_identity: head.residual_mass_identity,
        residual_cross: cross.residual,
        cross_consistency: cross,
        raw,
        calibrated,
        ergodicity,
        integrability,
        diagnostics,
        eta_systematics,
        notes,
    }
}

/// Convenience: full run with a cached `eta` table.
pub fn lyapunov_run(spec: &FoliationSpec, cfg: &RunConfig) -> Result<EstimatorReport> {
    let model = cfg.eta_model(spec);
    let table = crate::eta::EtaTable::new(spec, &model, cfg.eta_nodes);
    let mut sim = Simulation::new(cfg.leafwise(spec, &table), cfg.clone())?;
    Ok(sim.run())
}

/// `beta` that puts the Brody cap `c_brody` at `factor` times the largest observed
/// `eta` over a sweep.
pub fn fit_brody_cap(observed_max: f64, factor: f64) -> f64 {
    observed_max * factor
}

pub const CSV_HEADER: [&str; 17] = [
    "family",
    "d",
    "n_paths",
    "t_max",
    "dt",
    "seed",
    "chi_cocycle",
    "ci_lo",
    "ci_hi",
    "chi_kappa",
    "ci_lo",
    "ci_hi",
    "m_hat",
    "beta_fit",
    "residual_mass",
    "residual_cross",
    "predicted_chi",
];

impl EstimatorReport {
    pub fn csv_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x:e}");
        vec![
            self.family.clone(),
            self.degree.to_string(),
            self.config.n_paths.to_string(),
            f(self.config.t_max),
            f(self.config.dt),
            self.config.seed.to_string(),
            f(self.chi_cocycle.mean),
            f(self.chi_cocycle.lo()),
            f(self.chi_cocycle.hi()),
            f(self.chi_kappa.mean),
            f(self.chi_kappa.lo()),
            f(self.chi_kappa.hi()),
            f(self.fs_mass.mean),
            f(self.beta_fit),
            f(self.residual_mass_identity),
            f(self.residual_cross),
            self.predicted_chi.to_string(),
        ]
    }

    /// Header plus one summary row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(io)?;
        w.write_record(self.csv_record()).map_err(io)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let e = |x: &Estimate| format!("{:+.4} ± {:.4} (n_b = {})", x.mean, x.half_width, x.n_batches);
        let mut s = String::new();
        let _ = writeln!(s, "family {} (d = {}), {:?}", self.family, self.degree, self.status);
        let _ = writeln!(
            s,
            "paths {}  t_max {}  dt {}  burn_in {}  seed {}  eta_mode {:?}",
            self.config.n_paths,
            self.config.t_max,
            self.config.dt,
            self.config.burn_in,
            self.config.seed,
            self.eta_mode
        );
        let _ = writeln!(
            s,
            "predicted chi {}  (nor = O({}), cotan = O({}))",
            self.predicted_chi, self.deg_nor, self.deg_cotan
        );
        for (name, c) in [("raw", &self.raw), ("calibrated", &self.calibrated)] {
            let _ = writeln!(s, "[{name}]");
            let _ = writeln!(s, "  chi_cocycle  {}", e(&c.chi_cocycle));
            let _ = writeln!(s, "  chi_kappa    {}", e(&c.chi_kappa));
            let _ = writeln!(s, "  fs_mass      {}", e(&c.fs_mass));
            let _ = writeln!(s, "  residual_mass_identity {:.3e}", c.residual_mass_identity);
        }
        let _ = writeln!(
            s,
            "beta_fit {:.6}  calibration factor {:.6}",
            self.beta_fit, self.calibration_factor
        );
        let _ = writeln!(
            s,
            "residual_cross {:.3}  cross-consistency {}",
            self.residual_cross,
            if self.cross_consistency.pass { "pass" } else { "FAIL" }
        );
        if let Some(g) = &self.ergodicity {
            let chis: Vec<String> = g.group_chi.iter().map(e).collect();
            let _ = writeln!(
                s,
                "ergodicity: groups [{}], discrepancy {:.3} {}",
                chis.join(", "),
                g.discrepancy,
                if g.pass { "pass" } else { "FAIL" }
            );
        }
        let i = &self.integrability;
        let _ = writeln!(
            s,
            "integrability: W {:.4} (half {:.4}, change {:.2}%), log* {:.4} (half {:.4}, change {:.2}%)",
            i.w.mean,
            i.w_half.mean,
            100.0 * i.w_change,
            i.logstar.mean,
            i.logstar_half.mean,
            100.0 * i.logstar_change
        );
        let g = &self.diagnostics;
        let _ = writeln!(
            s,
            "diagnostics: aborted {}/{}  guard trips {}  box entries {}  deep entries {}  floor redraws {}",
            g.aborted_paths,
            g.aborted_paths + g.completed_paths,
            g.walker.guard_trips,
            g.walker.box_entries,
            g.walker.deep_entries,
            g.walker.floor_redraws
        );
        let _ = writeln!(
            s,
            "  kappa samples {} (failed {})  eta max {:.4}  F1 growth constant {:.3}",
            g.kappa_samples, g.kappa_failures, g.eta_max, g.f1_growth_constant
        );
        let _ = writeln!(s, "  eta trust histogram {:?}", g.eta_trust_histogram);
        if let Some(x) = &self.eta_systematics {
            let _ = writeln!(
                s,
                "eta systematics: chi/m quartiles {:?}, corr(m, chi) {:.3}; {}",
                x.ratio_quartiles, x.corr_mass_chi, x.note
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
