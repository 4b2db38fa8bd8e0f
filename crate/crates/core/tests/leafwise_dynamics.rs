use hololeaf::chart::ChartPoint;
use hololeaf::eta::ConstantEta;
use hololeaf::flow::{flow_segment, FlowOptions};
use hololeaf::foliation::{jouanolou, random_foliation};
use hololeaf::oracles::{cocycle_algebra, fixture_eta, flow_consistency};
use hololeaf::rng::{complex_normal, stream};
use hololeaf::walker::Leafwise;
use hololeaf::{Error, C64};

#[test]
fn jacobian_and_group_property_on_jouanolou() {
    let spec = jouanolou(2).unwrap();
    let (jac, group) = flow_consistency(&spec, 100, 17).unwrap();
    assert!(jac < 1e-5, "jacobian {jac}");
    assert!(group < 1e-8, "group {group}");
}

#[test]
fn jacobian_and_group_property_on_random_foliation() {
    let spec = random_foliation(2, 5).unwrap();
    let (jac, group) = flow_consistency(&spec, 30, 18).unwrap();
    assert!(jac < 1e-5, "jacobian {jac}");
    assert!(group < 1e-8, "group {group}");
}

#[test]
fn cocycle_is_multiplicative_and_chart_independent() {
    let spec = jouanolou(2).unwrap();
    let (mult, chart) = cocycle_algebra(&spec, 16, 400, 19).unwrap();
    assert!(mult < 1e-10, "multiplicativity {mult}");
    assert!(chart < 1e-6, "chart independence {chart}");
}

#[test]
fn flow_backwards_returns_home() {
    let spec = jouanolou(3).unwrap();
    let opts = FlowOptions {
        rtol: 1e-12,
        atol: 1e-14,
        ..FlowOptions::default()
    };
    let p = ChartPoint::new(2, C64::new(0.4, -0.2), C64::new(-0.3, 0.5));
    let zeta = C64::new(0.05, 0.03);
    let there = flow_segment(&spec, &p, zeta, &opts).unwrap();
    let back = flow_segment(&spec, &there.endpoint, -zeta, &opts).unwrap();
    let q = back.endpoint.to_chart(2).unwrap();
    assert!((q.u - p.u).norm() + (q.v - p.v).norm() < 1e-10);
}

#[test]
fn flow_refuses_singular_start() {
    let spec = jouanolou(2).unwrap();
    let p = ChartPoint::new(2, C64::new(1.0, 0.0), C64::new(1.0, 0.0));
    let r = flow_segment(&spec, &p, C64::new(0.1, 0.0), &FlowOptions::default());
    assert!(matches!(r, Err(Error::NearSingularity(_))));
}

#[test]
fn walker_streams_are_reproducible() {
    let spec = jouanolou(2).unwrap();
    let eta = fixture_eta(&spec);
    let lw = Leafwise::new(&spec, &eta);
    let p = ChartPoint::new(2, C64::new(0.2, 0.1), C64::new(-0.4, 0.3));
    let run = |s: u64| {
        let mut w = lw.start(&p, stream(7, s)).unwrap();
        for _ in 0..300 {
            lw.bm_step(&mut w, 1e-3).unwrap();
        }
        w
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.point, b.point);
    assert_eq!(a.log_holonomy, b.log_holonomy);
    assert_ne!(a.point, c.point);
    assert!(a.log_holonomy.is_finite());
}

#[test]
fn unit_normal_is_normal_and_unit() {
    let spec = jouanolou(2).unwrap();
    let eta = ConstantEta(1.0);
    let lw = Leafwise::new(&spec, &eta);
    let p = ChartPoint::new(2, C64::new(0.7, -0.1), C64::new(0.2, 0.9));
    let n = lw.unit_normal(&p).unwrap();
    let (_, v, _) = lw.field_at(&p);
    let inner = lw.metric.inner(&p, &n, &v);
    assert!(inner.norm() < 1e-12 * lw.metric.norm(&p, &v));
    assert!((lw.metric.norm(&p, &n) - 1.0).abs() < 1e-12);
}

#[test]
fn complex_normal_has_unit_second_moment() {
    let mut r = stream(3, 0);
    let n = 200_000;
    let (mut m2, mut m) = (0.0, C64::new(0.0, 0.0));
    for _ in 0..n {
        let z = complex_normal(&mut r);
        m2 += z.norm_sqr();
        m += z * z;
    }
    assert!((m2 / n as f64 - 1.0).abs() < 0.01);
    // Circular: E[N^2] = 0.
    assert!((m / n as f64).norm() < 0.01);
}
