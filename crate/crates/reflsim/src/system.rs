//! Problem specifications: speeds, zeroth-order coupling, reflection matrix.
//!
//! A [`SystemSpec`] describes one hyperbolic problem
//! `∂_t u + a(x,t) ∂_x u + b(x,t) u = 0` on the strip `[0,1] × ℝ` with
//! reflection boundary conditions
//!
//! ```text
//! u_j(0,t) = Σ_{k≤m} p_jk u_k(1,t) + Σ_{k>m} p_jk u_k(0,t),   j ≤ m,
//! u_j(1,t) = Σ_{k≤m} p_jk u_k(1,t) + Σ_{k>m} p_jk u_k(0,t),   j > m.
//! ```
//!
//! Components `1..m` travel rightward (`a_j ≥ Λ₀`), the rest leftward
//! (`a_j ≤ −Λ₀`). The reflection coefficients `p_jk` are real constants.
//! Specs are immutable after construction and safe to share across
//! workers.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::expr::{self, EvalError, Expr, Func, ParseError};

/// Coefficient function of `(x, t)`.
///
/// `Const` is the fast path used by every shipped builtin; `Table` holds
/// grid-sampled values for piecewise coefficients that the expression
/// grammar cannot represent; `Sum` arises from [`SystemSpec::perturb`]
/// when a table is involved.
#[derive(Debug, Clone, PartialEq)]
pub enum Coeff {
    Const(f64),
    Expr(Expr),
    Table(Table),
    Sum(Vec<Coeff>),
}

/// Uniform-grid samples of a coefficient, bilinearly interpolated and
/// clamped outside the sampled rectangle. `nt = 1` means constant in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x0: f64,
    pub x1: f64,
    pub nx: usize,
    pub t0: f64,
    pub t1: f64,
    pub nt: usize,
    /// Row-major `nt × nx`: `values[it * nx + ix]`.
    pub values: Vec<f64>,
}

impl Table {
    fn axis_pos(v: f64, lo: f64, hi: f64, n: usize) -> (usize, f64) {
        if n == 1 || hi <= lo {
            return (0, 0.0);
        }
        let s = ((v - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let (ix, fx) = Self::axis_pos(x, self.x0, self.x1, self.nx);
        let (it, ft) = Self::axis_pos(t, self.t0, self.t1, self.nt);
        let at = |it: usize, ix: usize| self.values[it * self.nx + ix];
        if self.nt == 1 {
            return at(0, ix) * (1.0 - fx) + at(0, (ix + 1).min(self.nx - 1)) * fx;
        }
        let ix1 = (ix + 1).min(self.nx - 1);
        let it1 = (it + 1).min(self.nt - 1);
        let v0 = at(it, ix) * (1.0 - fx) + at(it, ix1) * fx;
        let v1 = at(it1, ix) * (1.0 - fx) + at(it1, ix1) * fx;
        v0 * (1.0 - ft) + v1 * ft
    }
}

impl Coeff {
    pub fn zero() -> Coeff {
        Coeff::Const(0.0)
    }

    /// Wrap an expression, folding closed trees to constants.
    pub fn from_expr(e: Expr) -> Coeff {
        match e.as_constant() {
            Some(v) => Coeff::Const(v),
            None => Coeff::Expr(e),
        }
    }

    pub fn parse(src: &str) -> Result<Coeff, ParseError> {
        Ok(Coeff::from_expr(expr::parse(src)?))
    }

    pub fn eval(&self, x: f64, t: f64) -> Result<f64, EvalError> {
        match self {
            Coeff::Const(v) => Ok(*v),
            Coeff::Expr(e) => e.eval(x, t),
            Coeff::Table(tb) => Ok(tb.eval(x, t)),
            Coeff::Sum(parts) => {
                let mut acc = 0.0;
                for p in parts {
                    acc += p.eval(x, t)?;
                }
                Ok(acc)
            }
        }
    }

    /// Structurally zero (the solver and the extinction test treat these
    /// entries as absent coupling).
    pub fn is_zero(&self) -> bool {
        match self {
            Coeff::Const(v) => *v == 0.0,
            Coeff::Expr(_) => false,
            Coeff::Table(tb) => tb.values.iter().all(|v| *v == 0.0),
            Coeff::Sum(parts) => parts.iter().all(|p| p.is_zero()),
        }
    }

    pub fn add(self, other: Coeff) -> Coeff {
        if other.is_zero() {
            return self;
        }
        if self.is_zero() {
            return other;
        }
        match (self, other) {
            (Coeff::Const(a), Coeff::Const(b)) => Coeff::Const(a + b),
            (Coeff::Expr(a), Coeff::Expr(b)) => {
                Coeff::from_expr(Expr::Add(Box::new(a), Box::new(b)))
            }
            (Coeff::Const(a), Coeff::Expr(b)) | (Coeff::Expr(b), Coeff::Const(a)) => {
                Coeff::from_expr(Expr::Add(Box::new(Expr::Num(a)), Box::new(b)))
            }
            (Coeff::Sum(mut parts), other) => {
                parts.push(other);
                Coeff::Sum(parts)
            }
            (this, Coeff::Sum(mut parts)) => {
                parts.insert(0, this);
                Coeff::Sum(parts)
            }
            (this, other) => Coeff::Sum(vec![this, other]),
        }
    }

    pub fn scale(&self, factor: f64) -> Coeff {
        if factor == 0.0 {
            return Coeff::zero();
        }
        match self {
            Coeff::Const(v) => Coeff::Const(factor * v),
            Coeff::Expr(e) => Coeff::from_expr(Expr::Mul(
                Box::new(Expr::Num(factor)),
                Box::new(e.clone()),
            )),
            Coeff::Table(tb) => {
                let mut tb = tb.clone();
                for v in &mut tb.values {
                    *v *= factor;
                }
                Coeff::Table(tb)
            }
            Coeff::Sum(parts) => Coeff::Sum(parts.iter().map(|p| p.scale(factor)).collect()),
        }
    }

    /// True when the coefficient does not depend on `t`.
    pub fn is_autonomous(&self) -> bool {
        fn expr_has_t(e: &Expr) -> bool {
            match e {
                Expr::T => true,
                Expr::Num(_) | Expr::X | Expr::Pi | Expr::E => false,
                Expr::Neg(a) | Expr::Call(_, a) => expr_has_t(a),
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                    expr_has_t(a) || expr_has_t(b)
                }
            }
        }
        match self {
            Coeff::Const(_) => true,
            Coeff::Expr(e) => !expr_has_t(e),
            Coeff::Table(tb) => tb.nt == 1,
            Coeff::Sum(parts) => parts.iter().all(|p| p.is_autonomous()),
        }
    }
}

impl fmt::Display for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coeff::Const(v) => write!(f, "{v}"),
            Coeff::Expr(e) => write!(f, "{e}"),
            Coeff::Table(tb) => write!(f, "table[{}x{}]", tb.nt, tb.nx),
            Coeff::Sum(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum SpecError {
    #[error("n must be at least 1, got {0}")]
    BadSize(usize),
    #[error("split index m={m} out of range 0..={n}")]
    BadSplit { m: usize, n: usize },
    #[error("lambda0 must be positive, got {0}")]
    BadLambda0(f64),
    #[error("{what} has wrong dimensions: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
    #[error("builtin `{builtin}` requires parameter `{param}`")]
    MissingParam { builtin: String, param: String },
    #[error("parameter `{param}`: {message}")]
    BadParam { param: String, message: String },
    #[error("expression error in {slot}: {source}")]
    Parse {
        slot: String,
        #[source]
        source: ParseError,
    },
}

/// Full description of one hyperbolic problem.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub n: usize,
    /// Components `0..m` (0-based) travel rightward, `m..n` leftward.
    pub m: usize,
    /// Speeds `a_j(x,t)`, length `n`.
    pub a: Vec<Coeff>,
    /// Zeroth-order coupling `b_jk(x,t)`, `n × n`.
    pub b: Vec<Vec<Coeff>>,
    /// Reflection coefficients, `n × n`, constant in time.
    pub p: Vec<Vec<f64>>,
    /// Speed floor `Λ₀ > 0`.
    pub lambda0: f64,
    pub name: String,
}

/// One sampled violation of a validation condition.
#[derive(Debug, Clone)]
pub struct GridViolation {
    pub component: usize,
    pub x: f64,
    pub t: f64,
    pub value: f64,
}

/// Result of sampling the sign/floor and boundedness conditions.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub pass: bool,
    /// Worst sampled margin of the speed floor condition (negative = violated).
    pub worst_margin: f64,
    /// Sampled points violating the floor condition (capped).
    pub violations: Vec<GridViolation>,
    /// Sampled sup-norms of the speeds.
    pub sup_a: Vec<f64>,
    /// Sampled sup-norms of the coupling entries.
    pub sup_b: Vec<Vec<f64>>,
    /// Coefficient evaluation failures, if any.
    pub eval_errors: Vec<String>,
}

/// One sampled Levy-condition violation: speeds coincide but the
/// off-diagonal coupling does not vanish there.
#[derive(Debug, Clone)]
pub struct LevyViolation {
    pub j: usize,
    pub k: usize,
    pub x: f64,
    pub t: f64,
    pub speed_gap: f64,
    pub coupling: f64,
}

#[derive(Debug, Clone)]
pub struct LevyReport {
    pub pass: bool,
    pub violations: Vec<LevyViolation>,
}

const MAX_REPORTED_VIOLATIONS: usize = 64;

impl SystemSpec {
    pub fn new(
        n: usize,
        m: usize,
        a: Vec<Coeff>,
        b: Vec<Vec<Coeff>>,
        p: Vec<Vec<f64>>,
        lambda0: f64,
        name: impl Into<String>,
    ) -> Result<SystemSpec, SpecError> {
        if n == 0 {
            return Err(SpecError::BadSize(n));
        }
        if m > n {
            return Err(SpecError::BadSplit { m, n });
        }
        if !(lambda0 > 0.0) {
            return Err(SpecError::BadLambda0(lambda0));
        }
        if a.len() != n {
            return Err(SpecError::Dimension {
                what: "a",
                expected: format!("{n}"),
                got: format!("{}", a.len()),
            });
        }
        for (what, rows) in [("b", b.len()), ("p", p.len())] {
            if rows != n {
                return Err(SpecError::Dimension {
                    what,
                    expected: format!("{n} rows"),
                    got: format!("{rows}"),
                });
            }
        }
        if b.iter().any(|row| row.len() != n) || p.iter().any(|row| row.len() != n) {
            return Err(SpecError::Dimension {
                what: "b/p rows",
                expected: format!("{n} columns"),
                got: "ragged".to_string(),
            });
        }
        Ok(SystemSpec {
            n,
            m,
            a,
            b,
            p,
            lambda0,
            name: name.into(),
        })
    }

    /// Outflow boundary abscissa of component `j`: where its trace feeds
    /// the reflection operator (1 for rightward, 0 for leftward).
    pub fn outflow_x(&self, j: usize) -> f64 {
        if j < self.m {
            1.0
        } else {
            0.0
        }
    }

    /// Inflow boundary abscissa of component `j` (where its boundary
    /// condition is imposed) — also the constant exit abscissa of its
    /// backward characteristics once `t - τ` exceeds one transit time.
    pub fn inflow_x(&self, j: usize) -> f64 {
        if j < self.m {
            0.0
        } else {
            1.0
        }
    }

    /// Apply the reflection matrix to a vector of outflow traces.
    pub fn reflect(&self, out_traces: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                (0..self.n)
                    .map(|k| self.p[j][k] * out_traces[k])
                    .sum::<f64>()
            })
            .collect()
    }

    /// Sample the sign/floor condition `a_j ≥ Λ₀` (rightward) /
    /// `a_j ≤ −Λ₀` (leftward) and the sup-norms of all coefficients on an
    /// `nx × nt` grid over `[0,1] × t_range`.
    pub fn validate(&self, nx: usize, nt: usize, t_range: (f64, f64)) -> ValidationReport {
        let nx = nx.max(2);
        let nt = nt.max(2);
        let mut report = ValidationReport {
            pass: true,
            worst_margin: f64::INFINITY,
            violations: Vec::new(),
            sup_a: vec![0.0; self.n],
            sup_b: vec![vec![0.0; self.n]; self.n],
            eval_errors: Vec::new(),
        };
        let grid_x: Vec<f64> = (0..nx).map(|i| i as f64 / (nx - 1) as f64).collect();
        let grid_t: Vec<f64> = (0..nt)
            .map(|i| t_range.0 + (t_range.1 - t_range.0) * i as f64 / (nt - 1) as f64)
            .collect();
        for j in 0..self.n {
            for &t in &grid_t {
                for &x in &grid_x {
                    match self.a[j].eval(x, t) {
                        Ok(v) => {
                            report.sup_a[j] = report.sup_a[j].max(v.abs());
                            let margin = if j < self.m {
                                v - self.lambda0
                            } else {
                                -self.lambda0 - v
                            };
                            report.worst_margin = report.worst_margin.min(margin);
                            if margin < 0.0 {
                                report.pass = false;
                                if report.violations.len() < MAX_REPORTED_VIOLATIONS {
                                    report.violations.push(GridViolation {
                                        component: j,
                                        x,
                                        t,
                                        value: v,
                                    });
                                }
                            }
                        }
                        Err(e) => {
                            report.pass = false;
                            if report.eval_errors.len() < MAX_REPORTED_VIOLATIONS {
                                report
                                    .eval_errors
                                    .push(format!("a[{j}] at ({x}, {t}): {e}"));
                            }
                        }
                    }
                    for k in 0..self.n {
                        match self.b[j][k].eval(x, t) {
                            Ok(v) => {
                                report.sup_b[j][k] = report.sup_b[j][k].max(v.abs());
                            }
                            Err(e) => {
                                report.pass = false;
                                if report.eval_errors.len() < MAX_REPORTED_VIOLATIONS {
                                    report
                                        .eval_errors
                                        .push(format!("b[{j}][{k}] at ({x}, {t}): {e}"));
                                }
                            }
                        }
                    }
                }
            }
        }
        report
    }

    /// Numerical screen for the Levy condition `b_jk = β_jk (a_k − a_j)`:
    /// flags sampled points where the speeds (nearly) coincide but the
    /// off-diagonal coupling does not vanish. A necessary-condition
    /// check, not a proof.
    pub fn check_levy(
        &self,
        tol: f64,
        nx: usize,
        nt: usize,
        t_range: (f64, f64),
    ) -> Result<LevyReport, EvalError> {
        let nx = nx.max(2);
        let nt = nt.max(2);
        let mut report = LevyReport {
            pass: true,
            violations: Vec::new(),
        };
        for it in 0..nt {
            let t = t_range.0 + (t_range.1 - t_range.0) * it as f64 / (nt - 1) as f64;
            for ix in 0..nx {
                let x = ix as f64 / (nx - 1) as f64;
                for j in 0..self.n {
                    for k in 0..self.n {
                        if j == k || self.b[j][k].is_zero() {
                            continue;
                        }
                        let gap = (self.a[k].eval(x, t)? - self.a[j].eval(x, t)?).abs();
                        if gap > tol {
                            continue;
                        }
                        let coupling = self.b[j][k].eval(x, t)?;
                        if coupling.abs() > tol {
                            report.pass = false;
                            if report.violations.len() < MAX_REPORTED_VIOLATIONS {
                                report.violations.push(LevyViolation {
                                    j,
                                    k,
                                    x,
                                    t,
                                    speed_gap: gap,
                                    coupling,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(report)
    }

    /// Additively perturb the coupling: returns a spec with `b + b̃` and
    /// unchanged `a`, `p`, `m`.
    pub fn perturb(&self, btilde: &[Vec<Coeff>]) -> Result<SystemSpec, SpecError> {
        if btilde.len() != self.n || btilde.iter().any(|row| row.len() != self.n) {
            return Err(SpecError::Dimension {
                what: "btilde",
                expected: format!("{0}x{0}", self.n),
                got: format!("{}x?", btilde.len()),
            });
        }
        let mut spec = self.clone();
        for j in 0..self.n {
            for k in 0..self.n {
                spec.b[j][k] = spec.b[j][k].clone().add(btilde[j][k].clone());
            }
        }
        spec.name = format!("{}+perturbation", self.name);
        Ok(spec)
    }

    /// The spec with off-diagonal coupling stripped (diagonal part kept).
    pub fn decoupled_part(&self) -> SystemSpec {
        let mut spec = self.clone();
        for j in 0..self.n {
            for k in 0..self.n {
                if j != k {
                    spec.b[j][k] = Coeff::zero();
                }
            }
        }
        spec.name = format!("{} (decoupled)", self.name);
        spec
    }

    /// True when the off-diagonal coupling is structurally zero.
    pub fn is_decoupled(&self) -> bool {
        (0..self.n).all(|j| (0..self.n).all(|k| j == k || self.b[j][k].is_zero()))
    }

    /// True when no coefficient depends on `t`.
    pub fn is_autonomous(&self) -> bool {
        self.a.iter().all(|c| c.is_autonomous())
            && self
                .b
                .iter()
                .all(|row| row.iter().all(|c| c.is_autonomous()))
    }

    /// Largest sampled `|a_j|` over `[0,1] × t_range` (used for CFL caps).
    pub fn max_speed(&self, t_range: (f64, f64)) -> Result<f64, EvalError> {
        let mut amax: f64 = 0.0;
        let nt = if self.is_autonomous() { 1 } else { 33 };
        for j in 0..self.n {
            for it in 0..nt {
                let t = if nt == 1 {
                    t_range.0
                } else {
                    t_range.0 + (t_range.1 - t_range.0) * it as f64 / (nt - 1) as f64
                };
                for ix in 0..129 {
                    let x = ix as f64 / 128.0;
                    amax = amax.max(self.a[j].eval(x, t)?.abs());
                }
            }
        }
        Ok(amax)
    }
}

/// Loosely-typed builtin parameter value (numbers or expression strings).
#[derive(Debug, Clone)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

pub type Params = BTreeMap<String, ParamValue>;

fn need_num(builtin: &str, params: &Params, key: &str) -> Result<f64, SpecError> {
    match params.get(key) {
        Some(ParamValue::Num(v)) => Ok(*v),
        Some(ParamValue::Text(s)) => Err(SpecError::BadParam {
            param: key.to_string(),
            message: format!("expected a number, got `{s}`"),
        }),
        None => Err(SpecError::MissingParam {
            builtin: builtin.to_string(),
            param: key.to_string(),
        }),
    }
}

fn opt_num(params: &Params, key: &str, default: f64) -> Result<f64, SpecError> {
    match params.get(key) {
        Some(ParamValue::Num(v)) => Ok(*v),
        Some(ParamValue::Text(s)) => Err(SpecError::BadParam {
            param: key.to_string(),
            message: format!("expected a number, got `{s}`"),
        }),
        None => Ok(default),
    }
}

fn opt_expr(params: &Params, key: &str) -> Result<Option<Expr>, SpecError> {
    match params.get(key) {
        Some(ParamValue::Text(s)) => expr::parse(s)
            .map(Some)
            .map_err(|source| SpecError::Parse {
                slot: key.to_string(),
                source,
            }),
        Some(ParamValue::Num(v)) => Ok(Some(Expr::Num(*v))),
        None => Ok(None),
    }
}

/// Construct a builtin spec by name. See [`catalog`] for the list.
pub fn builtin(name: &str, params: &Params) -> Result<SystemSpec, SpecError> {
    match name {
        "transport" => builtins::transport(),
        "f1ex1" => builtins::f1ex1(),
        "ex11" => builtins::ex11(need_num(name, params, "nu")?),
        "example" => builtins::example(
            need_num(name, params, "mu")?,
            need_num(name, params, "nu")?,
        ),
        "reactor2" | "reactor3" => {
            let rp = ReactorParams {
                mu: need_num(name, params, "mu")?,
                k: need_num(name, params, "k")?,
                q: need_num(name, params, "q")?,
                beta: need_num(name, params, "beta")?,
                theta0_const: opt_num(params, "theta0", 0.0)?,
                theta0_expr: opt_expr(params, "theta0_expr")?,
                c0_expr: opt_expr(params, "c0_expr")?,
            };
            if name == "reactor2" {
                builtins::reactor2(&rp)
            } else {
                builtins::reactor3(&rp)
            }
        }
        "control" => builtins::control(
            need_num(name, params, "a1")?,
            need_num(name, params, "a2")?,
            opt_num(params, "gain", 1.0)?,
        ),
        "bjj" => builtins::bjj(need_num(name, params, "eps")?),
        _ => Err(SpecError::UnknownBuiltin(name.to_string())),
    }
}

/// Stationary-profile hooks for the reactor builtins. The default
/// profiles are the constants `Θ₀ = theta0_const` and `C₀ = 0`; the
/// expression hooks override them with functions of `x`.
#[derive(Debug, Clone)]
pub struct ReactorParams {
    pub mu: f64,
    pub k: f64,
    pub q: f64,
    pub beta: f64,
    pub theta0_const: f64,
    pub theta0_expr: Option<Expr>,
    pub c0_expr: Option<Expr>,
}

impl ReactorParams {
    pub fn new(mu: f64, k: f64, q: f64, beta: f64) -> ReactorParams {
        ReactorParams {
            mu,
            k,
            q,
            beta,
            theta0_const: 0.0,
            theta0_expr: None,
            c0_expr: None,
        }
    }
}

/// Typed constructors for the shipped example systems.
pub mod builtins {
    use super::*;

    fn num(v: f64) -> Expr {
        Expr::Num(v)
    }
    fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }
    fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }
    fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }
    fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }
    fn exp(a: Expr) -> Expr {
        Expr::Call(Func::Exp, Box::new(a))
    }

    fn zeros(n: usize) -> Vec<Vec<Coeff>> {
        (0..n).map(|_| (0..n).map(|_| Coeff::zero()).collect()).collect()
    }

    /// Scalar transport `∂_t u + ∂_x u = 0`, `u(0,t) = 0`. All solutions
    /// vanish identically after one transit time.
    pub fn transport() -> Result<SystemSpec, SpecError> {
        SystemSpec::new(
            1,
            1,
            vec![Coeff::Const(1.0)],
            zeros(1),
            vec![vec![0.0]],
            1.0,
            "transport",
        )
    }

    /// Levy-condition counterexample: equal speeds with nonzero coupling
    /// `∂_t u₁ + ∂_x u₁ = 0`, `∂_t u₂ + ∂_x u₂ − u₁ = 0`,
    /// `u₁(0,t) = u₂(1,t)`, `u₂(0,t) = 0`.
    pub fn f1ex1() -> Result<SystemSpec, SpecError> {
        let mut b = zeros(2);
        b[1][0] = Coeff::Const(-1.0);
        SystemSpec::new(
            2,
            2,
            vec![Coeff::Const(1.0), Coeff::Const(1.0)],
            b,
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            1.0,
            "f1ex1",
        )
    }

    /// Superstable pair with off-diagonal perturbation `ν`:
    /// `∂_t u₁ + ∂_x u₁ = ν u₂`, `∂_t u₂ − ∂_x u₂ = 0`,
    /// `u₁(0,t) = 0`, `u₂(1,t) = u₁(1,t)`. Not exponentially stable for `ν > 1`.
    pub fn ex11(nu: f64) -> Result<SystemSpec, SpecError> {
        let mut b = zeros(2);
        b[0][1] = Coeff::Const(-nu);
        SystemSpec::new(
            2,
            1,
            vec![Coeff::Const(1.0), Coeff::Const(-1.0)],
            b,
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            1.0,
            format!("ex11(nu={nu})"),
        )
    }

    /// Diagonal damping `μ` with off-diagonal perturbation `ν`:
    /// `∂_t u₁ + ∂_x u₁ + μ u₁ − ν u₂ = 0`, `∂_t u₂ − ∂_x u₂ = 0`,
    /// `u₁(0,t) = 0`, `u₂(1,t) = u₁(1,t)`.
    pub fn example(mu: f64, nu: f64) -> Result<SystemSpec, SpecError> {
        let mut b = zeros(2);
        b[0][0] = Coeff::Const(mu);
        b[0][1] = Coeff::Const(-nu);
        SystemSpec::new(
            2,
            1,
            vec![Coeff::Const(1.0), Coeff::Const(-1.0)],
            b,
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            1.0,
            format!("example(mu={mu},nu={nu})"),
        )
    }

    fn theta0_coeff(rp: &ReactorParams) -> Expr {
        rp.theta0_expr
            .clone()
            .unwrap_or_else(|| num(rp.theta0_const))
    }

    fn c0_coeff(rp: &ReactorParams) -> Expr {
        rp.c0_expr.clone().unwrap_or_else(|| num(0.0))
    }

    /// Zero-order reactor linearization (2×2), in normal form after
    /// dividing the first equation by `β` (so `a₁ = 1/β`):
    ///
    /// `∂_t u + (1/β) ∂_x u − (1/β)[(QK e^{Θ₀} − μ) u + μ v] = 0`,
    /// `∂_t v − ∂_x v − μ(u − v) = 0`,
    /// `u(0,t) = v(0,t)`, `v(1,t) = 0`.
    pub fn reactor2(rp: &ReactorParams) -> Result<SystemSpec, SpecError> {
        if rp.beta <= 0.0 {
            return Err(SpecError::BadParam {
                param: "beta".to_string(),
                message: "must be positive".to_string(),
            });
        }
        let theta0 = theta0_coeff(rp);
        // growth coefficient of the first equation: QK e^{Θ₀(x)} − μ
        let g = sub(mul(num(rp.q * rp.k), exp(theta0)), num(rp.mu));
        let mut b = zeros(2);
        b[0][0] = Coeff::from_expr(div(neg(g), num(rp.beta)));
        b[0][1] = Coeff::Const(-rp.mu / rp.beta);
        b[1][0] = Coeff::Const(-rp.mu);
        b[1][1] = Coeff::Const(rp.mu);
        SystemSpec::new(
            2,
            1,
            vec![Coeff::Const(1.0 / rp.beta), Coeff::Const(-1.0)],
            b,
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            (1.0 / rp.beta).min(1.0),
            format!(
                "reactor2(mu={},k={},q={},beta={})",
                rp.mu, rp.k, rp.q, rp.beta
            ),
        )
    }

    /// First-order reactor linearization (3×3), normal form with
    /// `a = (1/β, 1, −1)`:
    ///
    /// `∂_t u + (1/β) ∂_x u − (1/β)[(QK e^{Θ₀}(1−C₀) − μ) u − QK e^{Θ₀} v + μ w] = 0`,
    /// `∂_t v + ∂_x v − K e^{Θ₀}(1−C₀) u + K e^{Θ₀} v = 0`,
    /// `∂_t w − ∂_x w − μ(u − w) = 0`,
    /// `u(0,t) = w(0,t)`, `v(0,t) = 0`, `w(1,t) = 0`.
    pub fn reactor3(rp: &ReactorParams) -> Result<SystemSpec, SpecError> {
        if rp.beta <= 0.0 {
            return Err(SpecError::BadParam {
                param: "beta".to_string(),
                message: "must be positive".to_string(),
            });
        }
        let theta0 = theta0_coeff(rp);
        let c0 = c0_coeff(rp);
        let qke = mul(num(rp.q * rp.k), exp(theta0.clone()));
        let ke = mul(num(rp.k), exp(theta0));
        let one_minus_c0 = sub(num(1.0), c0);
        // first-equation growth: QK e^{Θ₀}(1−C₀) − μ
        let g1 = sub(mul(qke.clone(), one_minus_c0.clone()), num(rp.mu));
        let mut b = zeros(3);
        b[0][0] = Coeff::from_expr(div(neg(g1), num(rp.beta)));
        b[0][1] = Coeff::from_expr(div(qke, num(rp.beta)));
        b[0][2] = Coeff::Const(-rp.mu / rp.beta);
        b[1][0] = Coeff::from_expr(neg(mul(ke.clone(), one_minus_c0)));
        b[1][1] = Coeff::from_expr(ke);
        b[2][0] = Coeff::Const(-rp.mu);
        b[2][2] = Coeff::Const(rp.mu);
        SystemSpec::new(
            3,
            2,
            vec![
                Coeff::Const(1.0 / rp.beta),
                Coeff::Const(1.0),
                Coeff::Const(-1.0),
            ],
            b,
            vec![
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
            (1.0 / rp.beta).min(1.0),
            format!(
                "reactor3(mu={},k={},q={},beta={})",
                rp.mu, rp.k, rp.q, rp.beta
            ),
        )
    }

    /// Boundary-control linearization:
    /// `∂_t u + a₁ ∂_x u = b(x) u + c(x) v`,
    /// `∂_t v − a₂ ∂_x v = (1−b(x)) u + (1−c(x)) v`,
    /// `u(0,t) = 0`, `v(1,t) = gain · u(1,t)`,
    /// with the profile choices `b(x) = x`, `c(x) = 1 − x`.
    pub fn control(a1: f64, a2: f64, gain: f64) -> Result<SystemSpec, SpecError> {
        if a1 <= 0.0 || a2 <= 0.0 {
            return Err(SpecError::BadParam {
                param: "a1/a2".to_string(),
                message: "speeds must be positive".to_string(),
            });
        }
        let bx = Expr::X;
        let cx = sub(num(1.0), Expr::X);
        let mut b = zeros(2);
        b[0][0] = Coeff::from_expr(neg(bx.clone()));
        b[0][1] = Coeff::from_expr(neg(cx.clone()));
        b[1][0] = Coeff::from_expr(neg(sub(num(1.0), bx)));
        b[1][1] = Coeff::from_expr(neg(sub(num(1.0), cx)));
        SystemSpec::new(
            2,
            1,
            vec![Coeff::Const(a1), Coeff::Const(-a2)],
            b,
            vec![vec![0.0, 0.0], vec![gain, 0.0]],
            a1.min(a2),
            format!("control(a1={a1},a2={a2})"),
        )
    }

    /// Superstable 3×3 system perturbed in the diagonal lower-order part:
    /// `∂_t u₁ + ∂_x u₁ = 0`, `∂_t u₂ + ∂_x u₂ = ε u₂`, `∂_t u₃ − ∂_x u₃ = 0`,
    /// `u₁(0,t) = u₃(0,t)`, `u₂(0,t) = u₃(0,t)`, `u₃(1,t) = u₁(1,t) − u₂(1,t)`.
    ///
    /// At `ε = 0` the reflection cascade vanishes after three applications
    /// by cancellation; any `ε ≠ 0` destroys that for every order.
    pub fn bjj(eps: f64) -> Result<SystemSpec, SpecError> {
        let mut b = zeros(3);
        b[1][1] = Coeff::Const(-eps);
        SystemSpec::new(
            3,
            2,
            vec![Coeff::Const(1.0), Coeff::Const(1.0), Coeff::Const(-1.0)],
            b,
            vec![
                vec![0.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, -1.0, 0.0],
            ],
            1.0,
            format!("bjj(eps={eps})"),
        )
    }
}

/// One catalog row describing a builtin.
#[derive(Debug, Clone)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub params: &'static str,
    pub description: &'static str,
}

/// The builtin catalog, with the example each entry reproduces.
pub fn catalog() -> Vec<BuiltinInfo> {
    vec![
        BuiltinInfo {
            name: "transport",
            params: "",
            description: "scalar transport with zero inflow; extinct after one transit",
        },
        BuiltinInfo {
            name: "f1ex1",
            params: "",
            description: "Levy-condition counterexample (equal speeds, nonzero coupling)",
        },
        BuiltinInfo {
            name: "ex11",
            params: "nu",
            description: "superstable pair with off-diagonal perturbation; unstable for nu > 1",
        },
        BuiltinInfo {
            name: "example",
            params: "mu, nu",
            description: "diagonal damping mu with off-diagonal perturbation nu",
        },
        BuiltinInfo {
            name: "reactor2",
            params: "mu, k, q, beta [, theta0, theta0_expr, c0_expr]",
            description: "zero-order chemical reactor linearization (2x2), extinction order 2",
        },
        BuiltinInfo {
            name: "reactor3",
            params: "mu, k, q, beta [, theta0, theta0_expr, c0_expr]",
            description: "first-order chemical reactor linearization (3x3), extinction order 2",
        },
        BuiltinInfo {
            name: "control",
            params: "a1, a2 [, gain]",
            description: "boundary-control linearization, extinction order 2",
        },
        BuiltinInfo {
            name: "bjj",
            params: "eps",
            description: "diagonal perturbation destroying reflection nilpotency (order 3 at eps=0)",
        },
    ]
}
