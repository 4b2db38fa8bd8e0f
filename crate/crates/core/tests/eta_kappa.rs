use hololeaf::chart::AmbientMetric;
use hololeaf::disc::{bm_step, dist_p, DiscPoint};
use hololeaf::estimators::random_start;
use hololeaf::eta::{point_at_distance, ConstantEta, EtaMethod, EtaModel, EtaOptions, EtaSource};
use hololeaf::foliation::{jouanolou, linear_model};
use hololeaf::local_model::{eta_asymptotic, kappa_local_bounds, LocalModel, ModelPoint};
use hololeaf::rng::{complex_normal, stream};
use hololeaf::walker::Leafwise;
use hololeaf::{ChartPoint, C64};
use rand::Rng;

struct ModelEta(LocalModel);

impl EtaSource for ModelEta {
    fn eta(&self, p: &ChartPoint) -> f64 {
        self.0.sector_eta(&ModelPoint::new(p.u, p.v)).unwrap_or(0.0)
    }
}

#[test]
fn eta_follows_singular_shape_along_a_ray() {
    let spec = jouanolou(2).unwrap();
    let model = EtaModel::new(&spec, EtaOptions::default());
    let sing = &spec.singularities[0];
    let dir = [C64::new(0.3, 0.7), C64::new(-0.5, 0.2)];
    let logs: Vec<f64> = (0..=8)
        .map(|k| {
            let s = 1e-4 * 10f64.powf(k as f64 / 4.0);
            let p = point_at_distance(&sing.location, dir, s);
            let e = model.eta_estimate(&spec, &p);
            eprintln!(
                "s {s:.2e} eta {:.4e} {:?} box {:.3e}",
                e.value, e.method, sing.box_radius
            );
            e.value.ln() - eta_asymptotic(s).ln()
        })
        .collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi - lo <= 0.3, "{logs:?}");
}

#[test]
fn brody_cap_sweep() {
    let spec = jouanolou(2).unwrap();
    let opts = EtaOptions {
        c_brody: f64::INFINITY,
        ..EtaOptions::default()
    };
    let model = EtaModel::new(&spec, opts);
    let mut max: f64 = 0.0;
    for i in 0..400 {
        let p = random_start(&spec, 77, i);
        let e = model.eta_estimate(&spec, &p);
        assert!(e.value.is_finite() && e.value > 0.0, "{p:?} {e:?}");
        max = max.max(e.value);
    }
    eprintln!("largest uncapped eta over 400 points: {max:.4}");
    assert!(max <= EtaOptions::default().c_brody, "{max}");
}

#[test]
fn eta_is_comparable_to_local_model() {
    let lambda = C64::new(0.0, 1.0);
    let spec = linear_model(lambda).unwrap();
    let local = LocalModel::new(lambda).unwrap();
    let model = EtaModel::new(&spec, EtaOptions::default());
    let mut rng = stream(5, 0);
    let mut ratios = Vec::new();
    for _ in 0..40 {
        let mut c = || {
            C64::from_polar(
                10f64.powf(rng.random_range(-1.3..-0.3)),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        };
        let x = ModelPoint::new(c(), c());
        let p = ChartPoint::new(2, x.z, x.w);
        let e = model.eta_estimate(&spec, &p);
        if e.method == EtaMethod::FlowDisc {
            ratios.push(e.value / local.sector_eta(&x).unwrap());
        }
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    eprintln!("{} flow-disc points, eta ratio in [{lo:.3}, {hi:.3}]", ratios.len());
    assert!(ratios.len() >= 20);
    assert!(hi / lo < 20.0);
}

#[test]
fn kappa_probe_matches_local_model() {
    let lambda = C64::new(0.0, 1.0);
    let spec = linear_model(lambda).unwrap();
    let local = LocalModel::new(lambda).unwrap();
    let eta = ModelEta(local);
    let lw = Leafwise::with_metric(&spec, &eta, AmbientMetric::EuclideanChart);
    for t in [0.4, 0.2, 0.05, 0.01] {
        let x = ModelPoint::new(C64::new(t, 0.0), C64::new(t, 0.0));
        let k = lw.kappa_probe(&ChartPoint::new(2, x.z, x.w), 1e-2).unwrap();
        let exact = local.kappa_exact(&x).unwrap();
        let (lo, hi) = kappa_local_bounds(&x);
        eprintln!("t {t}: probe {k:.6} exact {exact:.6} bounds [{lo:.4}, {hi:.4}]");
        assert!(lo <= k && k <= hi, "t {t}: {k} not in [{lo}, {hi}]");
        assert!((k - exact).abs() < 1e-3 * exact.abs(), "t {t}: {k} vs {exact}");
    }
}

#[test]
fn kappa_is_negative_inside_boxes() {
    let spec = jouanolou(2).unwrap();
    let eta = ConstantEta(1.0);
    let lw = Leafwise::new(&spec, &eta);
    let mut rng = stream(6, 0);
    for sing in &spec.singularities {
        for _ in 0..4 {
            let dir = [complex_normal(&mut rng), complex_normal(&mut rng)];
            let p = point_at_distance(&sing.location, dir, 0.5 * sing.box_radius);
            let k = lw.kappa_probe(&p, 1e-2).unwrap();
            assert!(k < 0.0, "{p:?}: {k}");
        }
    }
}

#[test]
fn kappa_stencil_refinement() {
    let spec = jouanolou(2).unwrap();
    let eta = ConstantEta(1.0);
    let lw = Leafwise::new(&spec, &eta);
    for i in 0..12 {
        let p = random_start(&spec, 8, i);
        let a = lw.kappa_probe(&p, 2e-2).unwrap();
        let b = lw.kappa_probe(&p, 1e-2).unwrap();
        assert!((a - b).abs() < 0.01 * b.abs(), "{p:?}: {a} vs {b}");
    }
}

#[test]
fn disc_time_step_refinement() {
    // Coarse and fine walks driven by the same Brownian increments.
    let (t, dt, n): (f64, f64, u64) = (10.0, 1e-2, 4000);
    let steps = (t / dt) as usize;
    let (mut coarse, mut fine) = (0.0, 0.0);
    let origin = DiscPoint::new(C64::new(0.0, 0.0));
    for path in 0..n {
        let mut rng = stream(10, path);
        let (mut a, mut b) = (origin, origin);
        for _ in 0..steps {
            let (n1, n2) = (complex_normal(&mut rng), complex_normal(&mut rng));
            a = bm_step(&a, (n1 + n2) / 2f64.sqrt(), (2.0 * dt).sqrt());
            b = bm_step(&b, n1, dt.sqrt());
            b = bm_step(&b, n2, dt.sqrt());
        }
        coarse += dist_p(&origin, &a);
        fine += dist_p(&origin, &b);
    }
    let (coarse, fine) = (coarse / n as f64, fine / n as f64);
    eprintln!("E dist: dt {coarse:.5}, dt/2 {fine:.5}");
    assert!((coarse - fine).abs() < 0.01 * fine);
}
