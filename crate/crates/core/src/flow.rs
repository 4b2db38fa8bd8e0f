//! Complex-time flows of the foliation with the transported Jacobian.
//!
//! The flow of "the field of chart `c`" is integrated in whatever chart the
//! point currently lives in: in chart `j` it is `g V_j` with
//! `g = Z_c^{-(d-1)}`. Keeping `c` fixed makes the flow map independent of the
//! chart-switch threshold.

use crate::chart::{
    fs_distance, identity, mat_mul, others, transition_jacobian, ChartPoint, Mat2, Vec2, SWITCH_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::foliation::FoliationSpec;
use crate::poly::PolyVectorField;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub switch_threshold: f64,
    pub max_steps: usize,
    /// Smallest admissible step in the segment parameter `s in [0, 1]`.
    pub min_step: f64,
    pub track_jacobian: bool,
    /// Cap on the chart displacement of a single Runge–Kutta step.
    pub max_displacement: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            switch_threshold: SWITCH_THRESHOLD,
            max_steps: 200_000,
            min_step: 1e-12,
            track_jacobian: true,
            max_displacement: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSegmentResult {
    pub endpoint: ChartPoint,
    /// Derivative of the flow map from start-chart to end-chart coordinates.
    pub jacobian: Mat2,
    pub zeta_used: C64,
    pub chart_switches: u32,
    pub steps: u32,
    /// Chart whose field was flowed.
    pub field_chart: usize,
}

/// Outcome of a guarded flow: either the whole segment or the point where the guard stopped it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowOutcome {
    Completed(FlowSegmentResult),
    Stopped { s: f64, point: ChartPoint },
}

/// Right-hand side: `g V_j` and its Jacobian, for field chart `c`.
#[inline]
fn rhs(field: &PolyVectorField, chart: usize, c: usize, q: &Vec2, with_jac: bool) -> (Vec2, Mat2) {
    let cf = &field.charts[chart];
    let v = cf.eval(q[0], q[1]);
    let dv = if with_jac {
        cf.jacobian(q[0], q[1])
    } else {
        [[ZERO; 2]; 2]
    };
    if c == chart || field.degree == 1 {
        return (v, dv);
    }
    // Z_c is one of the chart coordinates.
    let idx = if others(chart)[0] == c { 0 } else { 1 };
    let zc = q[idx];
    let e = field.degree as i32 - 1;
    let g = zc.powi(-e);
    let fv = [v[0] * g, v[1] * g];
    if !with_jac {
        return (fv, dv);
    }
    let dg = -(e as f64) * g / zc;
    let mut m = [[dv[0][0] * g, dv[0][1] * g], [dv[1][0] * g, dv[1][1] * g]];
    m[0][idx] += v[0] * dg;
    m[1][idx] += v[1] * dg;
    (fv, m)
}

type State = [C64; 6];

#[inline]
fn deriv(field: &PolyVectorField, chart: usize, c: usize, zeta: C64, y: &State, jac: bool) -> State {
    let (f, df) = rhs(field, chart, c, &[y[0], y[1]], jac);
    let mut out = [ZERO; 6];
    out[0] = zeta * f[0];
    out[1] = zeta * f[1];
    if jac {
        // d/ds J = zeta DF J, J stored row-major in y[2..6].
        let j = [[y[2], y[3]], [y[4], y[5]]];
        let m = mat_mul(&df, &j);
        out[2] = zeta * m[0][0];
        out[3] = zeta * m[0][1];
        out[4] = zeta * m[1][0];
        out[5] = zeta * m[1][1];
    }
    out
}

// Dormand–Prince 5(4) tableau (autonomous system, no time nodes needed).
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn comb(y: &State, h: f64, terms: &[(f64, &State)], n: usize) -> State {
    let mut out = *y;
    for i in 0..n {
        let mut acc = ZERO;
        for (a, k) in terms {
            acc += k[i] * *a;
        }
        out[i] += acc * h;
    }
    out
}

/// Flow of the field of chart `field_chart` from `p` for complex time `zeta`.
///
/// `guard` is called after every accepted step; returning `false` stops the flow.
pub fn flow_guarded<G>(
    field: &PolyVectorField,
    p: &ChartPoint,
    zeta: C64,
    field_chart: usize,
    opts: &FlowOptions,
    mut guard: G,
) -> Result<FlowOutcome>
where
    G: FnMut(&ChartPoint) -> bool,
{
    let n = if opts.track_jacobian { 6 } else { 2 };
    let id = identity();
    let mut chart = p.chart;
    let mut y: State = [p.u, p.v, id[0][0], id[0][1], id[1][0], id[1][1]];
    let mut result = FlowSegmentResult {
        endpoint: *p,
        jacobian: id,
        zeta_used: zeta,
        chart_switches: 0,
        steps: 0,
        field_chart,
    };
    if zeta == ZERO {
        return Ok(FlowOutcome::Completed(result));
    }
    let jac = opts.track_jacobian;
    let mut k1 = deriv(field, chart, field_chart, zeta, &y, jac);
    let speed = (k1[0].norm_sqr() + k1[1].norm_sqr()).sqrt();
    let mut h = if speed > 0.0 { (0.1 / speed).min(1.0) } else { 1.0 };
    let mut s = 0.0;
    let mut steps = 0usize;
    while s < 1.0 {
        if steps >= opts.max_steps {
            return Err(Error::StepUnderflow {
                s,
                zeta_abs: zeta.norm(),
            });
        }
        let speed = (k1[0].norm_sqr() + k1[1].norm_sqr()).sqrt();
        if !speed.is_finite() {
            return Err(Error::NonFinite(format!("field speed at s = {s}")));
        }
        if speed * h > opts.max_displacement {
            h = opts.max_displacement / speed;
        }
        let last = s + h >= 1.0;
        if last {
            h = 1.0 - s;
        }
        if h < opts.min_step && !last {
            return Err(Error::StepUnderflow {
                s,
                zeta_abs: zeta.norm(),
            });
        }
        let y2 = comb(&y, h, &[(A21, &k1)], n);
        let k2 = deriv(field, chart, field_chart, zeta, &y2, jac);
        let y3 = comb(&y, h, &[(A31, &k1), (A32, &k2)], n);
        let k3 = deriv(field, chart, field_chart, zeta, &y3, jac);
        let y4 = comb(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)], n);
        let k4 = deriv(field, chart, field_chart, zeta, &y4, jac);
        let y5 = comb(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], n);
        let k5 = deriv(field, chart, field_chart, zeta, &y5, jac);
        let y6 = comb(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], n);
        let k6 = deriv(field, chart, field_chart, zeta, &y6, jac);
        let yn = comb(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], n);
        let k7 = deriv(field, chart, field_chart, zeta, &yn, jac);
        let mut err = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let sc = opts.atol + opts.rtol * y[i].norm().max(yn[i].norm());
            let r = e.norm() / sc;
            err += r * r;
            finite &= yn[i].is_finite();
        }
        let err = (err / n as f64).sqrt();
        if !finite || !err.is_finite() {
            h *= 0.25;
            if h < opts.min_step {
                return Err(Error::StepUnderflow {
                    s,
                    zeta_abs: zeta.norm(),
                });
            }
            continue;
        }
        if err <= 1.0 {
            s = if last { 1.0 } else { s + h };
            steps += 1;
            y = yn;
            k1 = k7;
            let mut pt = ChartPoint::new(chart, y[0], y[1]);
            if pt.max_coord() > opts.switch_threshold {
                let k = pt.canonical_chart();
                let t = transition_jacobian(&pt, k);
                pt = pt.to_chart(k).ok_or_else(|| Error::NonFinite("chart switch".into()))?;
                let j = mat_mul(&t, &[[y[2], y[3]], [y[4], y[5]]]);
                y = [pt.u, pt.v, j[0][0], j[0][1], j[1][0], j[1][1]];
                chart = k;
                result.chart_switches += 1;
                k1 = deriv(field, chart, field_chart, zeta, &y, jac);
            }
            if !guard(&pt) && s < 1.0 {
                return Ok(FlowOutcome::Stopped { s, point: pt });
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
    result.endpoint = ChartPoint::new(chart, y[0], y[1]);
    result.jacobian = [[y[2], y[3]], [y[4], y[5]]];
    result.steps = steps as u32;
    Ok(FlowOutcome::Completed(result))
}

/// Unguarded flow of the field of chart `field_chart`.
pub fn flow_field(
    field: &PolyVectorField,
    p: &ChartPoint,
    zeta: C64,
    field_chart: usize,
    opts: &FlowOptions,
) -> Result<FlowSegmentResult> {
    match flow_guarded(field, p, zeta, field_chart, opts, |_| true)? {
        FlowOutcome::Completed(r) => Ok(r),
        FlowOutcome::Stopped { .. } => unreachable!("guard never stops"),
    }
}

/// Minimum distance to the singular set below which flows are refused.
pub const NEAR_SINGULARITY: f64 = 1e-8;

/// Flow of the field of `p`'s chart for complex time `zeta`.
pub fn flow_segment(spec: &FoliationSpec, p: &ChartPoint, zeta: C64, opts: &FlowOptions) -> Result<FlowSegmentResult> {
    flow_segment_with_field(spec, p, zeta, p.chart, opts)
}

pub fn flow_segment_with_field(
    spec: &FoliationSpec,
    p: &ChartPoint,
    zeta: C64,
    field_chart: usize,
    opts: &FlowOptions,
) -> Result<FlowSegmentResult> {
    let d = spec.dist_to_singular_set(p);
    if d < NEAR_SINGULARITY {
        return Err(Error::NearSingularity(d));
    }
    flow_field(&spec.field, p, zeta, field_chart, opts)
}

/// Fubini–Study distance travelled between start and end (diagnostic).
pub fn displacement(r: &FlowSegmentResult, start: &ChartPoint) -> f64 {
    fs_distance(start, &r.endpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foliation::linear_model;

    #[test]
    fn linear_flow_closed_form() {
        let spec = linear_model(C64::new(0.0, 1.0)).unwrap();
        let p = ChartPoint::new(2, C64::new(0.1, 0.0), C64::new(0.1, 0.0));
        let r = flow_segment(&spec, &p, C64::new(1.0, 0.0), &FlowOptions::default()).unwrap();
        let e = std::f64::consts::E;
        let ei = C64::new(0.0, 1.0).exp();
        assert!((r.endpoint.u - C64::new(0.1 * e, 0.0)).norm() < 1e-10);
        assert!((r.endpoint.v - ei * 0.1).norm() < 1e-10);
        assert!((r.jacobian[0][0] - e).norm() < 1e-9);
        assert!((r.jacobian[1][1] - ei).norm() < 1e-9);
        assert!(r.jacobian[0][1].norm() < 1e-12 && r.jacobian[1][0].norm() < 1e-12);
    }

    #[test]
    fn zero_time_is_identity() {
        let spec = linear_model(C64::new(0.0, 1.0)).unwrap();
        let p = ChartPoint::new(2, C64::new(0.3, 0.0), C64::new(0.1, 0.2));
        let r = flow_segment(&spec, &p, C64::new(0.0, 0.0), &FlowOptions::default()).unwrap();
        assert_eq!(r.endpoint, p);
        assert_eq!(r.jacobian, identity());
    }
}
