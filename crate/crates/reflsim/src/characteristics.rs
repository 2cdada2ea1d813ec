//! Characteristic curves of the hyperbolic system and the exponential
//! weights carried along them.
//!
//! The `j`-th characteristic through `(x, t)` solves `dx/dθ = a_j(x, θ)`.
//! Tracing is parametrized by time (uniformly valid as speeds approach
//! the floor `Λ₀`) with a classical 4-stage one-step method of fixed
//! step `h`; a boundary crossing is located by bisection on the last
//! step to `1e-12` in `x`. Under the sign condition the curve is
//! monotone in `x`, so a backward trace exits either through the inflow
//! boundary of the component or through the initial-time line.
//!
//! Along the stored polyline the weights
//!
//! ```text
//! c_j(ξ,x,t) = exp ∫_x^ξ (b_jj / a_j)(η, ω_j(η,x,t)) dη,
//! d_j(ξ,x,t) = c_j(ξ,x,t) / a_j(ξ, ω_j(ξ,x,t))
//! ```
//!
//! are evaluated by the composite trapezoid rule without re-tracing.

use thiserror::Error;

use crate::expr::EvalError;
use crate::system::SystemSpec;

/// Where a backward-traced characteristic left the space-time domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    InitialTime,
    LeftBoundary,
    RightBoundary,
}

/// One node of a traced characteristic polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    pub x: f64,
    pub t: f64,
}

/// Result of tracing a characteristic backward from `(x, t)`.
///
/// `path` is ordered from `(x, t)` down to the foot point and is dense
/// enough for the weight integrals along the curve.
#[derive(Debug, Clone)]
pub struct ExitEvent {
    pub kind: ExitKind,
    pub foot_x: f64,
    pub foot_t: f64,
    pub path: Vec<PathNode>,
}

#[derive(Debug, Clone, Error)]
pub enum TraceError {
    #[error("speed a[{j}] evaluated non-finite at ({x}, {t})")]
    NonFiniteSpeed { j: usize, x: f64, t: f64 },
    #[error("coefficient evaluation failed at ({x}, {t}): {source}")]
    Eval {
        x: f64,
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error("tracing exceeded the step limit (h too small or speed degenerate)")]
    StepLimit,
    #[error("invalid trace input: {0}")]
    BadInput(String),
}

pub(crate) fn speed(spec: &SystemSpec, j: usize, x: f64, t: f64) -> Result<f64, TraceError> {
    let v = spec.a[j]
        .eval(x, t)
        .map_err(|source| TraceError::Eval { x, t, source })?;
    if !v.is_finite() {
        return Err(TraceError::NonFiniteSpeed { j, x, t });
    }
    Ok(v)
}

/// One classical 4-stage step of `dx/dθ = a_j(x, θ)` over a signed
/// increment `dt` (negative = backward in time).
pub(crate) fn rk4_step(
    spec: &SystemSpec,
    j: usize,
    x: f64,
    t: f64,
    dt: f64,
) -> Result<f64, TraceError> {
    let k1 = speed(spec, j, x, t)?;
    let k2 = speed(spec, j, x + 0.5 * dt * k1, t + 0.5 * dt)?;
    let k3 = speed(spec, j, x + 0.5 * dt * k2, t + 0.5 * dt)?;
    let k4 = speed(spec, j, x + dt * k3, t + dt)?;
    Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Integrate the characteristic ODE from `(x0, t0)` to time `t1` in
/// either direction with fixed step `h`, ignoring the spatial domain.
/// Returns the sampled polyline from `t0` to `t1`.
pub fn flow(
    spec: &SystemSpec,
    j: usize,
    x0: f64,
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Vec<PathNode>, TraceError> {
    if !(h > 0.0) {
        return Err(TraceError::BadInput(format!("step h={h} must be positive")));
    }
    let mut path = vec![PathNode { x: x0, t: t0 }];
    let span = t1 - t0;
    let nsteps = (span.abs() / h).ceil() as usize;
    let sign = span.signum();
    let mut x = x0;
    let mut t = t0;
    for _ in 0..nsteps {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-15 {
            break;
        }
        let step = sign * remaining.min(h);
        x = rk4_step(spec, j, x, t, step)?;
        t += step;
        path.push(PathNode { x, t });
    }
    Ok(path)
}

const CROSSING_TOL: f64 = 1e-12;

/// Trace the `j`-th characteristic backward in time from `(x, t)` until
/// it crosses a lateral boundary or reaches the time floor `t_floor`.
pub fn trace_back(
    spec: &SystemSpec,
    j: usize,
    x: f64,
    t: f64,
    t_floor: f64,
    h: f64,
) -> Result<ExitEvent, TraceError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(TraceError::BadInput(format!("x={x} outside [0,1]")));
    }
    if !(h > 0.0) {
        return Err(TraceError::BadInput(format!("step h={h} must be positive")));
    }
    if t <= t_floor {
        return Err(TraceError::BadInput(format!(
            "t={t} must exceed t_floor={t_floor}"
        )));
    }
    // Backward in time a rightward component moves toward x=0, a
    // leftward one toward x=1.
    let rightward = j < spec.m;
    let boundary = if rightward { 0.0 } else { 1.0 };
    let crossed = |x: f64| {
        if rightward {
            x < boundary
        } else {
            x > boundary
        }
    };

    let mut path = vec![PathNode { x, t }];
    if x == boundary {
        return Ok(ExitEvent {
            kind: if rightward {
                ExitKind::LeftBoundary
            } else {
                ExitKind::RightBoundary
            },
            foot_x: boundary,
            foot_t: t,
            path,
        });
    }

    let max_steps = ((t - t_floor) / h).ceil() as usize + 8;
    let mut cur_x = x;
    let mut cur_t = t;
    for _ in 0..max_steps {
        let remaining = cur_t - t_floor;
        if remaining <= 1e-15 {
            break;
        }
        let step = remaining.min(h);
        let next_x = rk4_step(spec, j, cur_x, cur_t, -step)?;
        if crossed(next_x) {
            // Bisect the step size for the crossing point.
            let mut lo = 0.0f64; // inside
            let mut hi = step; // outside
            let mut best_x = next_x;
            let mut best_s = step;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let xm = rk4_step(spec, j, cur_x, cur_t, -mid)?;
                if (xm - boundary).abs() <= CROSSING_TOL {
                    best_x = xm;
                    best_s = mid;
                    break;
                }
                if crossed(xm) {
                    hi = mid;
                } else {
                    lo = mid;
                }
                best_x = xm;
                best_s = mid;
            }
            let _ = best_x;
            let foot_t = cur_t - best_s;
            path.push(PathNode {
                x: boundary,
                t: foot_t,
            });
            return Ok(ExitEvent {
                kind: if rightward {
                    ExitKind::LeftBoundary
                } else {
                    ExitKind::RightBoundary
                },
                foot_x: boundary,
                foot_t,
                path,
            });
        }
        cur_x = next_x;
        cur_t -= step;
        path.push(PathNode { x: cur_x, t: cur_t });
        if cur_t - t_floor <= 1e-15 {
            break;
        }
    }
    if cur_t - t_floor > 1e-12 {
        return Err(TraceError::StepLimit);
    }
    Ok(ExitEvent {
        kind: ExitKind::InitialTime,
        foot_x: cur_x.clamp(0.0, 1.0),
        foot_t: t_floor,
        path,
    })
}

fn diag_over_speed(spec: &SystemSpec, j: usize, node: PathNode) -> Result<f64, TraceError> {
    let b = spec.b[j][j]
        .eval(node.x, node.t)
        .map_err(|source| TraceError::Eval {
            x: node.x,
            t: node.t,
            source,
        })?;
    let a = speed(spec, j, node.x, node.t)?;
    if a == 0.0 {
        return Err(TraceError::NonFiniteSpeed {
            j,
            x: node.x,
            t: node.t,
        });
    }
    Ok(b / a)
}

/// Exponential weight `c_j` from `(x, t)` to the exit point of a traced
/// event: `exp ∫_x^{foot} (b_jj / a_j) dη` by the composite trapezoid
/// rule on the stored polyline.
pub fn weight_c(
    spec: &SystemSpec,
    j: usize,
    event: &ExitEvent,
    _x: f64,
    _t: f64,
) -> Result<f64, TraceError> {
    if spec.b[j][j].is_zero() {
        return Ok(1.0);
    }
    let mut integral = 0.0;
    let mut prev = event.path[0];
    let mut g_prev = diag_over_speed(spec, j, prev)?;
    for &node in &event.path[1..] {
        let g = diag_over_speed(spec, j, node)?;
        integral += 0.5 * (node.x - prev.x) * (g + g_prev);
        prev = node;
        g_prev = g;
    }
    Ok(integral.exp())
}

/// Weight `d_j(ξ, x, t) = c_j(ξ, x, t) / a_j(ξ, ω_j(ξ))` for a point `ξ`
/// on the traced path.
pub fn weight_d(
    spec: &SystemSpec,
    j: usize,
    xi: f64,
    _x: f64,
    _t: f64,
    path: &[PathNode],
) -> Result<f64, TraceError> {
    if path.is_empty() {
        return Err(TraceError::BadInput("empty path".to_string()));
    }
    // Walk the x-monotone path until the segment containing ξ, keeping
    // the running trapezoid integral of b_jj/a_j.
    let has_diag = !spec.b[j][j].is_zero();
    let mut integral = 0.0;
    let mut prev = path[0];
    let mut g_prev = if has_diag {
        diag_over_speed(spec, j, prev)?
    } else {
        0.0
    };
    let mut omega = None;
    let between = |a: f64, b: f64, v: f64| (v - a) * (v - b) <= 0.0;
    if between(prev.x, prev.x, xi) {
        omega = Some(prev.t);
    }
    if omega.is_none() {
        for &node in &path[1..] {
            if between(prev.x, node.x, xi) {
                let frac = if (node.x - prev.x).abs() < 1e-300 {
                    0.0
                } else {
                    (xi - prev.x) / (node.x - prev.x)
                };
                let t_xi = prev.t + frac * (node.t - prev.t);
                if has_diag {
                    let g = diag_over_speed(spec, j, PathNode { x: xi, t: t_xi })?;
                    integral += 0.5 * (xi - prev.x) * (g + g_prev);
                }
                omega = Some(t_xi);
                break;
            }
            if has_diag {
                let g = diag_over_speed(spec, j, node)?;
                integral += 0.5 * (node.x - prev.x) * (g + g_prev);
                g_prev = g;
            }
            prev = node;
        }
    }
    let omega = omega.ok_or_else(|| {
        TraceError::BadInput(format!("xi={xi} does not lie on the traced path"))
    })?;
    let a = speed(spec, j, xi, omega)?;
    if a == 0.0 {
        return Err(TraceError::NonFiniteSpeed { j, x: xi, t: omega });
    }
    Ok(integral.exp() / a)
}

/// Trace component `j` from `(x, t)` back to its inflow boundary and
/// return `(ω_j(x_j, x, t), c_j(x_j, x, t))`. Valid whenever the exit is
/// through the boundary, i.e. at least one transit time above the
/// initial line; enforced here with a floor of `1.5/Λ₀` below `t`.
pub fn boundary_transit(
    spec: &SystemSpec,
    j: usize,
    x: f64,
    t: f64,
    h: f64,
) -> Result<(f64, f64), TraceError> {
    let floor = t - 1.5 / spec.lambda0 - 10.0 * h;
    let event = trace_back(spec, j, x, t, floor, h)?;
    match event.kind {
        ExitKind::InitialTime => Err(TraceError::BadInput(format!(
            "characteristic {j} from ({x}, {t}) did not reach the boundary within 1.5 transit times"
        ))),
        _ => {
            let c = weight_c(spec, j, &event, x, t)?;
            Ok((event.foot_t, c))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtins, Coeff, ReactorParams, SystemSpec};

    fn scalar_spec(a: &str, b: &str, m: usize, lambda0: f64) -> SystemSpec {
        let n = 1;
        SystemSpec::new(
            n,
            m,
            vec![Coeff::parse(a).unwrap()],
            vec![vec![Coeff::parse(b).unwrap()]],
            vec![vec![0.0]],
            lambda0,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn constant_speed_boundary_exit() {
        let spec = scalar_spec("1", "0", 1, 1.0);
        let ev = trace_back(&spec, 0, 0.7, 2.0, 0.0, 0.05).unwrap();
        assert_eq!(ev.kind, ExitKind::LeftBoundary);
        assert!((ev.foot_t - 1.3).abs() < 1e-10);
        assert_eq!(ev.foot_x, 0.0);
    }

    #[test]
    fn constant_speed_initial_exit() {
        let spec = scalar_spec("1", "0", 1, 1.0);
        let ev = trace_back(&spec, 0, 0.7, 0.5, 0.0, 0.05).unwrap();
        assert_eq!(ev.kind, ExitKind::InitialTime);
        assert!((ev.foot_x - 0.2).abs() < 1e-10);
        assert_eq!(ev.foot_t, 0.0);
    }

    #[test]
    fn leftward_speed_right_exit() {
        let spec = SystemSpec::new(
            2,
            1,
            vec![Coeff::Const(1.0), Coeff::Const(-1.0)],
            vec![
                vec![Coeff::zero(), Coeff::zero()],
                vec![Coeff::zero(), Coeff::zero()],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            1.0,
            "pair",
        )
        .unwrap();
        let ev = trace_back(&spec, 1, 0.3, 2.0, 0.0, 0.05).unwrap();
        assert_eq!(ev.kind, ExitKind::RightBoundary);
        assert!((ev.foot_t - 1.3).abs() < 1e-10);
        assert_eq!(ev.foot_x, 1.0);
    }

    #[test]
    fn exit_abscissa_constant_beyond_one_transit() {
        // t - t_floor > 1/Λ₀ forces a boundary exit on the correct side.
        let spec = builtins::ex11(0.5).unwrap();
        for &x in &[0.0, 0.21, 0.5, 0.84, 1.0] {
            let ev = trace_back(&spec, 0, x, 3.0, 0.0, 0.01).unwrap();
            assert_eq!(ev.kind, ExitKind::LeftBoundary, "x={x}");
            let ev = trace_back(&spec, 1, x, 3.0, 0.0, 0.01).unwrap();
            assert_eq!(ev.kind, ExitKind::RightBoundary, "x={x}");
        }
    }

    #[test]
    fn constant_speed_feet_are_affine_exact() {
        let spec = scalar_spec("2", "0", 1, 2.0);
        let ev = trace_back(&spec, 0, 0.9, 1.0, 0.7, 0.013).unwrap();
        assert_eq!(ev.kind, ExitKind::InitialTime);
        assert!((ev.foot_x - (0.9 - 2.0 * 0.3)).abs() < 1e-10);
        let ev = trace_back(&spec, 0, 0.9, 1.0, 0.0, 0.013).unwrap();
        assert_eq!(ev.kind, ExitKind::LeftBoundary);
        assert!((ev.foot_t - (1.0 - 0.45)).abs() < 1e-10);
    }

    #[test]
    fn reversibility_forward_returns_within_10_h4() {
        // variable speed bounded in [0.5, 1.5]; the half-unit window keeps
        // the foot interior
        let spec = scalar_spec("1+0.5*sin(pi*x)*cos(t)", "0", 1, 0.5);
        let h = 0.02;
        let ev = trace_back(&spec, 0, 0.9, 1.0, 0.5, h).unwrap();
        assert_eq!(ev.kind, ExitKind::InitialTime);
        let fwd = flow(&spec, 0, ev.foot_x, ev.foot_t, 1.0, h).unwrap();
        let back = fwd.last().unwrap();
        assert!((back.t - 1.0).abs() < 1e-12);
        assert!(
            (back.x - 0.9).abs() <= 10.0 * h.powi(4),
            "returned to {} (err {:.2e})",
            back.x,
            (back.x - 0.9).abs()
        );
    }

    #[test]
    fn flow_semigroup_within_10_h4() {
        let spec = scalar_spec("1+0.4*cos(2*t)*sin(pi*x)", "0", 1, 0.5);
        let h = 0.01;
        let direct = trace_back(&spec, 0, 0.9, 1.0, 0.2, h).unwrap();
        let mid = trace_back(&spec, 0, 0.9, 1.0, 0.6, h).unwrap();
        assert_eq!(mid.kind, ExitKind::InitialTime);
        let second = trace_back(&spec, 0, mid.foot_x, 0.6, 0.2, h).unwrap();
        assert_eq!(direct.kind, ExitKind::InitialTime);
        assert_eq!(second.kind, ExitKind::InitialTime);
        assert!((direct.foot_x - second.foot_x).abs() <= 10.0 * h.powi(4));
    }

    #[test]
    fn weight_c_trivial_and_constant_diag() {
        let spec = scalar_spec("1", "0", 1, 1.0);
        let ev = trace_back(&spec, 0, 0.6, 2.0, 0.0, 0.05).unwrap();
        assert_eq!(weight_c(&spec, 0, &ev, 0.6, 2.0).unwrap(), 1.0);

        // b11 = κ, a = 1, exit through x=0: c = exp(−κ x)
        let kappa = 0.8;
        let spec = scalar_spec("1", "0.8", 1, 1.0);
        let ev = trace_back(&spec, 0, 0.6, 2.0, 0.0, 0.01).unwrap();
        let c = weight_c(&spec, 0, &ev, 0.6, 2.0).unwrap();
        assert!(
            (c - (-kappa * 0.6f64).exp()).abs() < 1e-10,
            "c={c}, expected {}",
            (-kappa * 0.6f64).exp()
        );
    }

    #[test]
    fn weight_c_matches_reactor2_closed_form() {
        // constant Θ₀: c₁(0,x,t) = exp((qk e^{θ0} − μ) x)
        let rp = ReactorParams {
            theta0_const: 0.4,
            ..ReactorParams::new(0.5, 0.3, 1.2, 2.0)
        };
        let spec = builtins::reactor2(&rp).unwrap();
        let x = 0.7;
        let ev = trace_back(&spec, 0, x, 10.0, 0.0, 0.01).unwrap();
        assert_eq!(ev.kind, ExitKind::LeftBoundary);
        let c = weight_c(&spec, 0, &ev, x, 10.0).unwrap();
        let expected = ((1.2 * 0.3 * 0.4f64.exp() - 0.5) * x).exp();
        assert!((c - expected).abs() < 1e-8, "c={c}, expected {expected}");

        // x-dependent Θ₀(x) = x: ∫₀ˣ (qk e^η − μ) dη = qk (e^x − 1) − μ x
        let rp = ReactorParams {
            theta0_expr: Some(crate::expr::parse("x").unwrap()),
            ..ReactorParams::new(0.5, 0.3, 1.2, 1.0)
        };
        let spec = builtins::reactor2(&rp).unwrap();
        let ev = trace_back(&spec, 0, x, 10.0, 0.0, 2e-4).unwrap();
        let c = weight_c(&spec, 0, &ev, x, 10.0).unwrap();
        let expected = (1.2 * 0.3 * (x.exp() - 1.0) - 0.5 * x).exp();
        assert!((c - expected).abs() < 1e-8, "c={c}, expected {expected}");
    }

    #[test]
    fn weight_d_constant_speeds() {
        let spec = scalar_spec("1", "0", 1, 1.0);
        let ev = trace_back(&spec, 0, 0.6, 2.0, 0.0, 0.05).unwrap();
        let d = weight_d(&spec, 0, 0.3, 0.6, 2.0, &ev.path).unwrap();
        assert!((d - 1.0).abs() < 1e-12);

        let spec2 = SystemSpec::new(
            1,
            0,
            vec![Coeff::Const(-1.0)],
            vec![vec![Coeff::zero()]],
            vec![vec![0.0]],
            1.0,
            "left",
        )
        .unwrap();
        let ev = trace_back(&spec2, 0, 0.4, 2.0, 0.0, 0.05).unwrap();
        let d = weight_d(&spec2, 0, 0.7, 0.4, 2.0, &ev.path).unwrap();
        assert!((d + 1.0).abs() < 1e-12);

        let spec3 = scalar_spec("2", "0", 1, 2.0);
        let ev = trace_back(&spec3, 0, 0.9, 2.0, 0.0, 0.05).unwrap();
        let d = weight_d(&spec3, 0, 0.5, 0.9, 2.0, &ev.path).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_transit_matches_shift_for_unit_speed() {
        let spec = builtins::bjj(0.0).unwrap();
        let (omega, c) = boundary_transit(&spec, 0, 0.4, 5.0, 0.01).unwrap();
        assert!((omega - 4.6).abs() < 1e-10);
        assert_eq!(c, 1.0);
        // component 2 carries the diagonal ε: c = exp(ε x)
        let spec = builtins::bjj(0.3).unwrap();
        let (omega, c) = boundary_transit(&spec, 1, 0.4, 5.0, 0.01).unwrap();
        assert!((omega - 4.6).abs() < 1e-10);
        assert!((c - (0.3f64 * 0.4).exp()).abs() < 1e-10);
    }

    #[test]
    fn failing_speed_evaluation_is_an_error() {
        // division by zero at every point surfaces as a trace error
        let spec = scalar_spec("1/(x-x)", "0", 1, 0.1);
        let err = trace_back(&spec, 0, 0.5, 1.0, 0.0, 0.01);
        assert!(err.is_err());
    }
}
