use hololeaf::estimators::{
    cross_consistency, mass_identity_residual, predict_chi, EstimatorReport, EtaMode, KappaProbe, RunConfig, RunStatus,
    Simulation, StartMode, CSV_HEADER,
};
use hololeaf::eta::EtaTable;
use hololeaf::foliation::jouanolou;
use hololeaf::stats::Estimate;
use hololeaf::walker::LeafWalkerState;
use num_rational::Ratio;

fn small(seed: u64) -> RunConfig {
    RunConfig {
        n_paths: 32,
        t_max: 2.0,
        burn_in: 0.5,
        eta_nodes: 3,
        seed,
        ..RunConfig::default()
    }
}

fn run(cfg: &RunConfig) -> EstimatorReport {
    let spec = cfg.foliation.build().unwrap();
    let model = cfg.eta_model(&spec);
    let table = EtaTable::new(&spec, &model, cfg.eta_nodes);
    let mut sim = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone()).unwrap();
    sim.run()
}

fn est(mean: f64, half_width: f64) -> Estimate {
    Estimate {
        mean,
        half_width,
        n_batches: 8,
    }
}

#[test]
fn predictions_for_small_degrees() {
    let want = [(2, -4, 1), (3, -5, 2), (4, -2, 1), (5, -7, 4)];
    for (d, n, q) in want {
        let p = predict_chi(d).unwrap();
        assert_eq!(p.chi, Ratio::new(n, q));
        assert_eq!((p.deg_nor, p.deg_cotan), (d as i64 + 2, d as i64 - 1));
    }
    assert!(predict_chi(1).is_err());
    let json = serde_json::to_string(&predict_chi(3).unwrap()).unwrap();
    assert!(json.contains("\"-5/2\""), "{json}");
    assert_eq!(mass_identity_residual(3, 0.5), 0.0);
    assert!((mass_identity_residual(2, 0.9) - 0.1).abs() < 1e-15);
}

#[test]
fn cross_consistency_on_synthetic_channels() {
    // d = 2: chi = -4 m.
    let ok = cross_consistency(&est(-4.0, 0.5), &est(-4.3, 0.5), &est(1.0, 0.1), 2);
    assert!(ok.pass && ok.chi_negative && ok.residual < 1.0);
    let split = cross_consistency(&est(-4.0, 0.1), &est(-2.0, 0.1), &est(1.0, 0.01), 2);
    assert!(!split.pass && split.residual > 2.0);
    let straddles = cross_consistency(&est(-0.1, 0.5), &est(-0.1, 0.5), &est(0.025, 0.1), 2);
    assert!(!straddles.chi_negative && !straddles.pass);
}

#[test]
fn rejects_bad_configs() {
    let zero = RunConfig {
        t_max: 0.0,
        burn_in: 0.0,
        ..RunConfig::default()
    };
    assert!(zero.validate().is_err());
    assert!(RunConfig {
        burn_in: 300.0,
        ..RunConfig::default()
    }
    .validate()
    .is_err());
    assert!(RunConfig {
        n_paths: 8,
        ..RunConfig::default()
    }
    .validate()
    .is_err());
    assert!(RunConfig {
        dt: -1e-3,
        ..RunConfig::default()
    }
    .validate()
    .is_err());
    assert!(RunConfig::from_toml("n_path = 3").is_err());
    let c = RunConfig::from_toml("n_paths = 128\n[foliation]\nfamily = \"jouanolou\"\ndegree = 3\n").unwrap();
    assert_eq!(c.n_paths, 128);
    assert_eq!(c.foliation.degree, Some(3));
    assert_eq!(c.dt, RunConfig::default().dt);
}

#[test]
fn constant_curvature_probe_is_reproduced() {
    let cfg = small(2);
    let spec = jouanolou(2).unwrap();
    let model = cfg.eta_model(&spec);
    let table = EtaTable::new(&spec, &model, cfg.eta_nodes);
    let probe: &KappaProbe = &|_: &LeafWalkerState| Ok(-1.25);
    let mut sim = Simulation::new(cfg.leafwise(&spec, &table), cfg.clone())
        .unwrap()
        .with_kappa_probe(probe);
    let r = sim.run();
    assert_eq!(r.raw.chi_kappa.mean, -1.25);
    assert_eq!(r.raw.chi_kappa.half_width, 0.0);
    assert!(r.diagnostics.kappa_samples > 0);
}

#[test]
fn calibration_is_exact_for_every_beta() {
    let mut fits = Vec::new();
    for beta in [0.5, 1.0, 2.0] {
        let r = run(&RunConfig { beta, ..small(3) });
        assert_eq!(r.status, RunStatus::Complete);
        assert!(r.calibrated.residual_mass_identity < 1e-12, "beta {beta}");
        assert!(r.chi_cocycle.mean.is_finite() && r.chi_kappa.mean.is_finite());
        assert!((r.calibration_factor * (r.raw.fs_mass.mean) - 1.0).abs() < 1e-12);
        fits.push(r.beta_fit);
    }
    assert!(fits.iter().all(|f| f.is_finite() && *f > 0.0), "{fits:?}");
}

#[test]
fn raw_mode_reports_raw_channels() {
    let r = run(&RunConfig {
        eta_mode: EtaMode::Raw,
        ..small(4)
    });
    assert_eq!(r.chi_cocycle, r.raw.chi_cocycle);
    assert_eq!(r.fs_mass, r.raw.fs_mass);
}

#[test]
fn reports_are_deterministic_and_serializable() {
    let a = run(&small(5));
    let b = run(&small(5));
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.to_text(), b.to_text());
    let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(v["predicted_chi"], "-4");
    // Single-batch intervals have no finite width.
    assert!(v["ergodicity"]["group_chi"][0]["half_width"].is_null());
    let csv = a.to_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), CSV_HEADER.len());
    assert_eq!(lines.next().unwrap().split(',').count(), CSV_HEADER.len());
    let erg = a.ergodicity.as_ref().unwrap();
    assert_eq!(erg.group_chi.len(), 2);
    assert_ne!(erg.starts[0], erg.starts[1]);
    assert_ne!(run(&small(6)).to_json().unwrap(), a.to_json().unwrap());
}

#[test]
fn fixed_start_has_no_ergodicity_block() {
    let r = run(&RunConfig {
        start_mode: StartMode::Fixed {
            chart: 2,
            u: [0.3, 0.1],
            v: [-0.2, 0.5],
        },
        ..small(7)
    });
    assert!(r.ergodicity.is_none());
    assert_eq!(r.diagnostics.completed_paths, 32);
}
