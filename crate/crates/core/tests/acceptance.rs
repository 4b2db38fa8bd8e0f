//! Acceptance harness: one pass/fail line per criterion.
//!
//! Runs at full scale by default (about two hours on one core). Set
//! `HOLOLEAF_ACCEPTANCE=quick` for reduced Monte Carlo runs; quick lines are
//! tagged and do not establish the criteria. Failing criteria are reported but do
//! not fail the process unless `HOLOLEAF_ACCEPTANCE_STRICT=1`.

use hololeaf::checkpoint::Checkpoint;
use hololeaf::estimators::{EstimatorReport, EtaMode, RunConfig, Simulation};
use hololeaf::eta::EtaTable;
use hololeaf::foliation::{jouanolou, SpecFile};
use hololeaf::local_model::LocalModel;
use hololeaf::oracles::{
    cocycle_algebra, curvature_form_residual, disc_conventions, flow_consistency, local_holonomy_residuals,
};
use hololeaf::{Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

struct Line {
    id: u8,
    pass: bool,
    detail: String,
}

struct Scale {
    quick: bool,
    disc_paths: usize,
    headline: (usize, f64, f64),
    trend: (usize, f64, f64),
}

impl Scale {
    fn from_env() -> Self {
        if std::env::var("HOLOLEAF_ACCEPTANCE").as_deref() == Ok("quick") {
            Self {
                quick: true,
                disc_paths: 2000,
                headline: (64, 40.0, 5.0),
                trend: (32, 40.0, 5.0),
            }
        } else {
            Self {
                quick: false,
                disc_paths: 10_000,
                headline: (1024, 200.0, 20.0),
                trend: (256, 200.0, 20.0),
            }
        }
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn random_model<R: Rng>(rng: &mut R) -> LocalModel {
    LocalModel::new(C64::new(rng.random_range(-2.0..2.0), rng.random_range(0.2..2.0))).unwrap()
}

fn c1() -> Line {
    let (r, el) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            let (v, f) = local_holonomy_residuals(&random_model(&mut rng), 1, 1000 + i)?;
            worst = worst.max(v).max(f);
        }
        Ok(worst)
    });
    match r {
        Ok(w) => Line {
            id: 1,
            pass: w < 1e-6 && el.as_secs_f64() < 10.0,
            detail: format!("max rel err {w:.2e} (< 1e-6), {:.1} s (< 10 s)", el.as_secs_f64()),
        },
        Err(e) => failed(1, e),
    }
}

fn c2() -> Line {
    let (r, el) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            worst = worst.max(curvature_form_residual(&random_model(&mut rng), 1, 2000 + i)?);
        }
        Ok(worst)
    });
    match r {
        Ok(w) => Line {
            id: 2,
            pass: w < 1e-4 && el.as_secs_f64() < 5.0,
            detail: format!("max rel err {w:.2e} (< 1e-4), {:.1} s (< 5 s)", el.as_secs_f64()),
        },
        Err(e) => failed(2, e),
    }
}

fn c3() -> Line {
    let (r, el) = timed(|| flow_consistency(&jouanolou(2)?, 100, 103));
    match r {
        Ok((jac, group)) => Line {
            id: 3,
            pass: jac < 1e-5 && group < 1e-8 && el.as_secs_f64() < 30.0,
            detail: format!(
                "jacobian {jac:.2e} (< 1e-5), group {group:.2e} (< 1e-8), {:.1} s (< 30 s)",
                el.as_secs_f64()
            ),
        },
        Err(e) => failed(3, e),
    }
}

fn c4(s: &Scale) -> Line {
    let (r, el) = timed(|| disc_conventions(s.disc_paths, 50.0, 104));
    match r {
        Ok(d) => Line {
            id: 4,
            pass: d.d_t_one == 1.0
                && (0.475..=0.525).contains(&d.radial_speed)
                && d.dynkin_rel < 0.02
                && el.as_secs_f64() < 120.0,
            detail: format!(
                "D_t1 = {}, speed {:.4} in [0.475, 0.525], Dynkin {:.2e} (< 2e-2), {} paths, {:.1} s (< 120 s)",
                d.d_t_one,
                d.radial_speed,
                d.dynkin_rel,
                s.disc_paths,
                el.as_secs_f64()
            ),
        },
        Err(e) => failed(4, e),
    }
}

fn c5() -> Line {
    let (r, el) = timed(|| cocycle_algebra(&jouanolou(2)?, 64, 2000, 105));
    match r {
        Ok((mult, chart)) => Line {
            id: 5,
            pass: mult < 1e-10 && chart < 1e-6 && el.as_secs_f64() < 60.0,
            detail: format!(
                "multiplicativity {mult:.2e} (< 1e-10), chart switch {chart:.2e} (< 1e-6), {:.1} s (< 60 s)",
                el.as_secs_f64()
            ),
        },
        Err(e) => failed(5, e),
    }
}

fn failed(id: u8, e: hololeaf::Error) -> Line {
    Line {
        id,
        pass: false,
        detail: format!("error: {e}"),
    }
}

fn run_config(degree: usize, (n_paths, t_max, burn_in): (usize, f64, f64)) -> RunConfig {
    RunConfig {
        foliation: SpecFile {
            family: Some("jouanolou".into()),
            degree: Some(degree),
            ..SpecFile::default()
        },
        n_paths,
        t_max,
        burn_in,
        dt: 1e-3,
        eta_mode: EtaMode::Calibrated,
        seed: 2024 + degree as u64,
        ..RunConfig::default()
    }
}

fn estimate(cfg: &RunConfig) -> Result<(EstimatorReport, Duration)> {
    let t = Instant::now();
    let spec = cfg.foliation.build()?;
    let model = cfg.eta_model(&spec);
    let table = EtaTable::new(&spec, &model, cfg.eta_nodes);
    let mut sim = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone())?;
    let r = sim.run();
    let el = t.elapsed();
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR"));
    let d = cfg.foliation.degree.unwrap_or(0);
    let _ = std::fs::write(dir.join(format!("acceptance_d{d}.json")), r.to_json()?);
    eprintln!("--- degree {d}, {:.0} s\n{}", el.as_secs_f64(), r.to_text());
    Ok((r, el))
}

fn verdict(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

fn c6(r: &EstimatorReport, el: Duration) -> Line {
    let chi = r.calibrated.chi_cocycle;
    let a = chi.hi() < 0.0;
    let disc = chi.discrepancy(&r.calibrated.chi_kappa);
    let b = disc <= 2.0;
    let mass = (r.degree as f64 - 1.0) * r.raw.fs_mass.mean;
    let c = (0.6..=1.7).contains(&mass);
    let off = (chi.mean + 4.0).abs() / 4.0;
    let d = off <= 0.25;
    let budget = el.as_secs_f64() <= 7200.0;
    Line {
        id: 6,
        pass: a && b && c && d && budget && r.diagnostics.aborted_fraction <= 0.01,
        detail: format!(
            "(a) chi {:.4} ± {:.4} {}; (b) |chi - chi_kappa| = {disc:.2} half-widths {}; \
             (c) (d-1) m_raw = {mass:.4} in [0.6, 1.7] {}; (d) {:.1}% from -4 {}; \
             aborted {}/{}; {:.0} s",
            chi.mean,
            chi.half_width,
            verdict(a),
            verdict(b),
            verdict(c),
            100.0 * off,
            verdict(d),
            r.diagnostics.aborted_paths,
            r.config.n_paths,
            el.as_secs_f64()
        ),
    }
}

fn c7(runs: &[(usize, f64)], el: Duration) -> Line {
    let chi2 = runs[0].1;
    let increasing = runs.windows(2).all(|w| w[0].1 < w[1].1);
    let mut ratios = Vec::new();
    let mut within = true;
    for &(d, chi) in &runs[1..] {
        let want = ((d as f64 + 2.0) / (d as f64 - 1.0)) / 4.0;
        let got = chi / chi2;
        let rel = (got / want - 1.0).abs();
        within &= rel <= 0.2;
        ratios.push(format!("d={d}: {got:.3} vs {want:.3} ({:.1}%)", 100.0 * rel));
    }
    let chis: Vec<String> = runs.iter().map(|(d, c)| format!("{d}: {c:.4}")).collect();
    Line {
        id: 7,
        pass: increasing && within && el.as_secs_f64() <= 6.0 * 3600.0,
        detail: format!(
            "chi [{}] increasing {}; ratios {} {}; {:.0} s",
            chis.join(", "),
            verdict(increasing),
            ratios.join(", "),
            verdict(within),
            el.as_secs_f64()
        ),
    }
}

fn c8(r: &EstimatorReport) -> Line {
    match &r.ergodicity {
        Some(e) => Line {
            id: 8,
            pass: e.pass,
            detail: format!(
                "groups [{}], discrepancy {:.2} combined half-widths (<= 1)",
                e.group_chi
                    .iter()
                    .map(|g| format!("{:.4} ± {:.4}", g.mean, g.half_width))
                    .collect::<Vec<_>>()
                    .join(", "),
                e.discrepancy
            ),
        },
        None => Line {
            id: 8,
            pass: false,
            detail: "no ergodicity block".into(),
        },
    }
}

fn c9(r: &EstimatorReport) -> Line {
    let i = &r.integrability;
    Line {
        id: 9,
        pass: i.stable,
        detail: format!(
            "W {:.4} (change {:.2}%), log* {:.4} (change {:.2}%) between t_max/2 and t_max (< 5%)",
            i.w.mean,
            100.0 * i.w_change,
            i.logstar.mean,
            100.0 * i.logstar_change
        ),
    }
}

fn c10() -> Line {
    let (r, el) = timed(|| {
        let cfg = RunConfig {
            n_paths: 64,
            t_max: 8.0,
            burn_in: 2.0,
            seed: 110,
            ..RunConfig::default()
        };
        let spec = cfg.foliation.build()?;
        let model = cfg.eta_model(&spec);
        let table = EtaTable::new(&spec, &model, cfg.eta_nodes);
        let fresh = || Simulation::new(cfg.leafwise(&spec, &table), cfg.clone());
        let a = fresh()?.run().to_json()?;
        let b = fresh()?.run().to_json()?;
        let mut part = fresh()?;
        part.advance_to(part.total_steps() * 3 / 7);
        let text = Checkpoint {
            config: part.cfg.clone(),
            step: part.step,
            paths: part.paths.clone(),
        }
        .to_text()?;
        drop(part);
        let ck = Checkpoint::parse(&text)?;
        let c = Simulation::restore(cfg.leafwise(&spec, &table), ck.config, ck.step, ck.paths)?
            .run()
            .to_json()?;
        Ok((a == b, a == c))
    });
    match r {
        Ok((same, resumed)) => Line {
            id: 10,
            pass: same && resumed && el.as_secs_f64() < 300.0,
            detail: format!(
                "identical seeds byte-identical {}; checkpoint-resume identical {}; {:.1} s (< 300 s)",
                verdict(same),
                verdict(resumed),
                el.as_secs_f64()
            ),
        },
        Err(e) => failed(10, e),
    }
}

fn main() {
    let scale = Scale::from_env();
    let mut lines = vec![c1(), c2(), c3(), c4(&scale), c5()];

    match estimate(&run_config(2, scale.headline)) {
        Ok((r6, el6)) => {
            lines.push(c6(&r6, el6));
            let mut trend = vec![(2, r6.calibrated.chi_cocycle.mean)];
            let mut el7 = Duration::ZERO;
            let mut err = None;
            for d in [3, 4] {
                match estimate(&run_config(d, scale.trend)) {
                    Ok((r, el)) => {
                        trend.push((d, r.calibrated.chi_cocycle.mean));
                        el7 += el;
                    }
                    Err(e) => err = Some(e),
                }
            }
            lines.push(match err {
                None => c7(&trend, el7 + el6),
                Some(e) => failed(7, e),
            });
            lines.push(c8(&r6));
            lines.push(c9(&r6));
        }
        Err(e) => {
            for id in 6..=9 {
                lines.push(failed(id, e.clone()));
            }
        }
    }
    lines.push(c10());

    let tag = if scale.quick { " [quick]" } else { "" };
    for l in &lines {
        let t = if scale.quick && (l.id == 4 || (6..=9).contains(&l.id)) {
            tag
        } else {
            ""
        };
        println!("criterion {:>2}: {}{t}  {}", l.id, verdict(l.pass), l.detail);
    }
    let failures = lines.iter().filter(|l| !l.pass).count();
    println!(
        "acceptance: {} of {} criteria pass{tag}",
        lines.len() - failures,
        lines.len()
    );
    if failures > 0 && std::env::var("HOLOLEAF_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
