//! Boundary reflection operators, finite-time extinction, decay-rate
//! fits, perturbation sweeps, and the smoothing probe.
//!
//! For a decoupled system the boundary cascade is governed by
//! `(CPz)_j(x,t) = c_j(x_j, x, t) · (Pz)_j(ω_j(x_j, x, t))`, where `P`
//! combines outflow traces through the reflection matrix and `C`
//! transports them inward with the exponential weight `c_j`. Finite-time
//! extinction holds iff some power `(CP)^k` vanishes identically; the
//! order is decided here on seeded trigonometric probe functions, with a
//! structural nilpotency test of the reflection graph as a sufficient
//! certificate. Cancellations can vanish beyond structure, so the probe
//! result is authoritative when the two disagree.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::characteristics::{trace_back, weight_c, ExitKind, TraceError};
use crate::solver::{evolve_with, l2_norm, EvolveOptions, Field, SolveError, Trajectory};
use crate::system::{Coeff, SystemSpec};

#[derive(Debug, Clone, Error)]
pub enum StabilityError {
    #[error("operation requires a decoupled system (off-diagonal b ≡ 0)")]
    CoupledSystem,
    #[error("too few usable samples: got {got}, need {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("base system is not superstable (no extinction order up to kmax)")]
    NotSuperstable,
    #[error("probe window exhausted before reaching kmax")]
    WindowExhausted,
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

// ---------------------------------------------------------------------
// Boundary ensembles and the CP operator
// ---------------------------------------------------------------------

/// One probe function on the strip, represented by its outflow boundary
/// traces (which close the CP iteration) plus full grid samples (which
/// supply the sup-norm residuals). `NaN` marks samples that fell outside
/// the stored time window.
#[derive(Debug, Clone)]
pub struct Probe {
    /// `out_traces[j][i]`: `z_j` at its outflow boundary at time `t_i`.
    pub out_traces: Vec<Vec<f64>>,
    /// `grid[j][ix][it]`: `z_j(xs[ix], t_it)`.
    pub grid: Vec<Vec<Vec<f64>>>,
}

/// A set of probe functions sampled on a common window `[t0, t0 + (nt−1)Δt]`.
#[derive(Debug, Clone)]
pub struct BoundaryEnsemble {
    pub t0: f64,
    pub dt: f64,
    pub nt: usize,
    pub xs: Vec<f64>,
    pub probes: Vec<Probe>,
    /// Number of CP applications applied so far.
    pub iterations: usize,
}

impl BoundaryEnsemble {
    /// Sample closures `z_j(x, t)` into an ensemble.
    pub fn from_fns<F>(n: usize, m: usize, t0: f64, dt: f64, nt: usize, nx: usize, fns: &[F]) -> BoundaryEnsemble
    where
        F: Fn(usize, f64, f64) -> f64,
    {
        let xs: Vec<f64> = (0..nx).map(|i| i as f64 / (nx - 1) as f64).collect();
        let probes = fns
            .iter()
            .map(|f| {
                let grid: Vec<Vec<Vec<f64>>> = (0..n)
                    .map(|j| {
                        xs.iter()
                            .map(|&x| (0..nt).map(|it| f(j, x, t0 + it as f64 * dt)).collect())
                            .collect()
                    })
                    .collect();
                let out_traces = (0..n)
                    .map(|j| {
                        let xb = if j < m { 1.0 } else { 0.0 };
                        (0..nt).map(|it| f(j, xb, t0 + it as f64 * dt)).collect()
                    })
                    .collect();
                Probe { out_traces, grid }
            })
            .collect();
        BoundaryEnsemble {
            t0,
            dt,
            nt,
            xs,
            probes,
            iterations: 0,
        }
    }

    /// Sup of `|values|` over all probes and valid (non-`NaN`) samples.
    /// Also returns how many samples were valid.
    pub fn sup_norm(&self) -> (f64, usize) {
        let mut sup: f64 = 0.0;
        let mut valid = 0usize;
        for probe in &self.probes {
            for comp in &probe.grid {
                for col in comp {
                    for &v in col {
                        if v.is_nan() {
                            continue;
                        }
                        valid += 1;
                        sup = sup.max(v.abs());
                    }
                }
            }
        }
        (sup, valid)
    }

    fn interp_signal(&self, signal: &[f64], t: f64) -> f64 {
        let s = (t - self.t0) / self.dt;
        if s < -1e-9 || s > (self.nt - 1) as f64 + 1e-9 {
            return f64::NAN;
        }
        let s = s.clamp(0.0, (self.nt - 1) as f64);
        let i0 = (s.floor() as usize).min(self.nt - 2);
        let frac = s - i0 as f64;
        signal[i0] * (1.0 - frac) + signal[i0 + 1] * frac
    }
}

/// Transit data of component `j` from abscissa `x` back to its inflow
/// boundary: time lag `Δ` with `ω_j(x_j, x, t) = t − Δ` (autonomous
/// case) and weight `c_j(x_j, x, t)`.
struct TransitCache {
    /// `lag[j][ix]`, `weight[j][ix]` on the ensemble's x grid.
    lag: Vec<Vec<f64>>,
    weight: Vec<Vec<f64>>,
    /// index of x = outflow abscissa per component
    out_ix: Vec<usize>,
}

fn build_transit_cache(
    spec: &SystemSpec,
    xs: &[f64],
    h: f64,
) -> Result<TransitCache, StabilityError> {
    if !spec.is_autonomous() {
        return Err(StabilityError::BadInput(
            "CP iteration requires autonomous coefficients (time-dependent c_j, ω_j not cacheable)"
                .to_string(),
        ));
    }
    let mut lag = vec![vec![0.0; xs.len()]; spec.n];
    let mut weight = vec![vec![1.0; xs.len()]; spec.n];
    let mut out_ix = vec![0usize; spec.n];
    for j in 0..spec.n {
        for (ix, &x) in xs.iter().enumerate() {
            let t_ref = 0.0;
            let floor = t_ref - 1.5 / spec.lambda0 - 10.0 * h;
            let event = trace_back(spec, j, x, t_ref, floor, h)?;
            if event.kind == ExitKind::InitialTime {
                return Err(StabilityError::BadInput(format!(
                    "component {j} did not exit through its boundary from x={x}"
                )));
            }
            lag[j][ix] = t_ref - event.foot_t;
            weight[j][ix] = weight_c(spec, j, &event, x, t_ref)?;
        }
        let xb = spec.outflow_x(j);
        out_ix[j] = xs
            .iter()
            .position(|&x| (x - xb).abs() < 1e-12)
            .ok_or_else(|| StabilityError::BadInput("x grid must contain 0 and 1".into()))?;
    }
    Ok(TransitCache {
        lag,
        weight,
        out_ix,
    })
}

/// One application of the boundary cascade operator `CP` to every probe
/// of the ensemble. Rejects coupled systems: the extinction
/// characterization applies to the decoupled part only.
pub fn apply_cp(
    spec: &SystemSpec,
    ens: &BoundaryEnsemble,
) -> Result<BoundaryEnsemble, StabilityError> {
    let h = 1.0 / (128.0 * spec.lambda0);
    let cache = build_transit_cache(spec, &ens.xs, h)?;
    apply_cp_cached(spec, ens, &cache)
}

fn apply_cp_cached(
    spec: &SystemSpec,
    ens: &BoundaryEnsemble,
    cache: &TransitCache,
) -> Result<BoundaryEnsemble, StabilityError> {
    if !spec.is_decoupled() {
        return Err(StabilityError::CoupledSystem);
    }
    let n = spec.n;
    // p rows as sparse (k, p_jk) lists; empty row ⇒ identically zero signal
    let prow: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&k| spec.p[j][k] != 0.0)
                .map(|k| (k, spec.p[j][k]))
                .collect()
        })
        .collect();
    let mut out = ens.clone();
    out.iterations = ens.iterations + 1;
    for (probe, new_probe) in ens.probes.iter().zip(out.probes.iter_mut()) {
        // (Pz)_j sampled on the window
        let pz: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                (0..ens.nt)
                    .map(|it| {
                        let mut acc = 0.0;
                        for &(k, pjk) in &prow[j] {
                            acc += pjk * probe.out_traces[k][it];
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        for j in 0..n {
            for (ix, _) in ens.xs.iter().enumerate() {
                let lag = cache.lag[j][ix];
                let c = cache.weight[j][ix];
                for it in 0..ens.nt {
                    let v = if prow[j].is_empty() {
                        0.0
                    } else {
                        let t = ens.t0 + it as f64 * ens.dt;
                        c * ens.interp_signal(&pz[j], t - lag)
                    };
                    new_probe.grid[j][ix][it] = v;
                }
            }
            let oix = cache.out_ix[j];
            for it in 0..ens.nt {
                new_probe.out_traces[j][it] = new_probe.grid[j][oix][it];
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Extinction order
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtinctionMethod {
    /// Probe order confirmed by nilpotency of the reflection graph.
    Structural,
    /// Decided by the probe iteration alone.
    Probe,
}

/// Outcome of the extinction-order decision.
#[derive(Debug, Clone)]
pub struct ExtinctionResult {
    /// Least `k` with sup-residual ≤ tol across all probes, if any.
    pub order: Option<usize>,
    /// Nilpotency index of the reflection adjacency, if nilpotent.
    pub structural_order: Option<usize>,
    pub method: ExtinctionMethod,
    /// `residuals[k]` = sup after `k` applications; `residuals[0]` is the
    /// initial probe sup-norm.
    pub residuals: Vec<f64>,
    pub tol_abs: f64,
    pub warnings: Vec<String>,
}

/// Nilpotency index of the boolean reflection graph (edge `k → j` iff
/// `p_jk ≠ 0`), or `None` when the graph has a cycle. Entries below
/// `1e-15` in magnitude are treated as absent with a warning.
pub fn structural_order(p: &[Vec<f64>]) -> (Option<usize>, Vec<String>) {
    let n = p.len();
    let mut warnings = Vec::new();
    let mut adj = vec![vec![false; n]; n];
    for j in 0..n {
        for k in 0..n {
            let v = p[j][k].abs();
            if v > 1e-15 {
                adj[j][k] = true;
            } else if v > 0.0 {
                warnings.push(format!(
                    "p[{}][{}] = {:e} below 1e-15 treated as zero",
                    j + 1,
                    k + 1,
                    p[j][k]
                ));
            }
        }
    }
    let zero = |m: &Vec<Vec<bool>>| m.iter().all(|row| row.iter().all(|&v| !v));
    // cur = N^k; a nilpotent n×n matrix vanishes by k = n
    let mut cur = adj.clone();
    let mut k = 1;
    loop {
        if zero(&cur) {
            return (Some(k), warnings);
        }
        if k == n {
            return (None, warnings);
        }
        let mut next = vec![vec![false; n]; n];
        for j in 0..n {
            for l in 0..n {
                if !cur[j][l] {
                    continue;
                }
                for i in 0..n {
                    if adj[l][i] {
                        next[j][i] = true;
                    }
                }
            }
        }
        cur = next;
        k += 1;
    }
}

/// Decide the extinction order of a decoupled system by iterating `CP`
/// on `r` seeded trigonometric probes, with the structural nilpotency
/// test run alongside. Residual tolerance is `tol` relative to the
/// initial probe sup-norm.
pub fn extinction_order(
    spec: &SystemSpec,
    kmax: usize,
    r: usize,
    tol: f64,
    seed: u64,
) -> Result<ExtinctionResult, StabilityError> {
    if !spec.is_decoupled() {
        return Err(StabilityError::CoupledSystem);
    }
    if kmax < 1 {
        return Err(StabilityError::BadInput("kmax must be at least 1".into()));
    }
    if r < 3 {
        return Err(StabilityError::BadInput("need at least 3 probes".into()));
    }
    if !(tol > 0.0) {
        return Err(StabilityError::BadInput("tol must be positive".into()));
    }
    let transit = 1.0 / spec.lambda0;
    let window = (kmax as f64 + 2.0) * transit;
    let dt = transit / 64.0;
    let nt = (window / dt).ceil() as usize + 1;
    let nx = 33;
    let degree = 6;
    let base_freq = 1.3 * spec.lambda0;

    // probe coefficient tables, seeded per (probe, component, mode)
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = Vec::new();
    for _ in 0..r {
        let per_comp: Vec<Vec<(f64, f64, f64)>> = (0..spec.n)
            .map(|_| {
                (0..=degree)
                    .map(|_| {
                        (
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(0.0..std::f64::consts::TAU),
                            rng.gen_range(0.0..std::f64::consts::TAU),
                        )
                    })
                    .collect()
            })
            .collect();
        coeffs.push(per_comp);
    }
    let fns: Vec<_> = coeffs
        .into_iter()
        .map(|per_comp| {
            move |j: usize, x: f64, t: f64| {
                per_comp[j]
                    .iter()
                    .enumerate()
                    .map(|(d, &(amp, ph_x, ph_t))| {
                        amp * (d as f64 * std::f64::consts::PI * x + ph_x).cos()
                            * (d as f64 * base_freq * t + ph_t).cos()
                    })
                    .sum::<f64>()
            }
        })
        .collect();
    let mut ens = BoundaryEnsemble::from_fns(spec.n, spec.m, 0.0, dt, nt, nx, &fns);

    let (initial_sup, _) = ens.sup_norm();
    let tol_abs = tol * initial_sup.max(1e-300);
    let mut residuals = vec![initial_sup];
    let h = 1.0 / (128.0 * spec.lambda0);
    let cache = build_transit_cache(spec, &ens.xs, h)?;
    for _ in 1..=kmax {
        ens = apply_cp_cached(spec, &ens, &cache)?;
        let (sup, valid) = ens.sup_norm();
        if valid == 0 {
            return Err(StabilityError::WindowExhausted);
        }
        residuals.push(sup);
    }
    let order = (1..=kmax).find(|&k| residuals[k] <= tol_abs);
    let (structural, warnings) = structural_order(&spec.p);
    let method = if structural.is_some() && structural == order {
        ExtinctionMethod::Structural
    } else {
        ExtinctionMethod::Probe
    };
    Ok(ExtinctionResult {
        order,
        structural_order: structural,
        method,
        residuals,
        tol_abs,
        warnings,
    })
}

// ---------------------------------------------------------------------
// Decay fits
// ---------------------------------------------------------------------

/// Exponential fit `‖u(t)‖ ≈ m_hat · e^{−gamma_hat t}` (positive
/// `gamma_hat` = decay) by least squares on the log of the series.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    pub gamma_hat: f64,
    /// Prefactor at `t = 0`.
    pub m_hat: f64,
    pub r2: f64,
    pub window: (f64, f64),
    pub samples_used: usize,
}

/// Fit a decay/growth rate on a norm time series over a window, skipping
/// samples below the extinction floor `1e-14 ×` the initial norm.
pub fn fit_decay(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit, StabilityError> {
    if series.is_empty() {
        return Err(StabilityError::TooFewSamples { got: 0, need: 5 });
    }
    let floor = 1e-14 * series[0].1;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| {
            *t >= window.0 - 1e-12 && *t <= window.1 + 1e-12 && *v > 1e-300 && *v > floor
        })
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(StabilityError::TooFewSamples {
            got: pts.len(),
            need: 5,
        });
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(StabilityError::BadInput(
            "degenerate time samples in fit window".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(t, y) in &pts {
        let fit = intercept + slope * t;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r2 = if ss_tot <= 1e-300 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        gamma_hat: -slope,
        m_hat: intercept.exp(),
        r2,
        window,
        samples_used: pts.len(),
    })
}

// ---------------------------------------------------------------------
// Perturbation size for a requested decay rate
// ---------------------------------------------------------------------

/// Solve `(1/d)·log(c_u ε d) + c_u ε = −γ` for the unique `ε` in
/// `(0, 1/(c_u d))`; the left side increases strictly from `−∞` there,
/// so bisection always succeeds for `γ > 0`.
pub fn epsilon_for_gamma(c_u: f64, d: f64, gamma: f64) -> Result<f64, StabilityError> {
    if !(c_u > 0.0) || !(d > 0.0) || !(gamma > 0.0) {
        return Err(StabilityError::BadInput(format!(
            "need c_u, d, gamma positive; got ({c_u}, {d}, {gamma})"
        )));
    }
    let f = |eps: f64| (c_u * eps * d).ln() / d + c_u * eps + gamma;
    let hi_end = 1.0 / (c_u * d);
    let mut lo = hi_end * 1e-300_f64.max(f64::MIN_POSITIVE);
    // ensure the lower end is on the negative side
    while f(lo) > 0.0 {
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Err(StabilityError::BadInput(
                "no sign change found (degenerate parameters)".into(),
            ));
        }
    }
    let mut hi = hi_end;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-17 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------
// Perturbation sweeps
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub eps: f64,
    pub fit: Option<DecayFit>,
    pub blowup: bool,
    pub final_l2: f64,
    pub final_time: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Permit nonzero diagonal entries in the sweep direction.
    pub allow_diagonal: bool,
    /// Fit window; defaults to `[τ + 2/Λ₀, t_end]`.
    pub window: Option<(f64, f64)>,
    /// Verify that the base spec's decoupled part is superstable first.
    pub check_superstable: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            allow_diagonal: false,
            window: None,
            check_superstable: true,
        }
    }
}

/// Evolve `perturb(spec0, ε · direction)` for each `ε` and fit the decay
/// rate of the `L²` norm series. Solver blow-up is recorded as a row
/// flag, not a failure. Rows are computed in parallel and returned in
/// input order.
pub fn sweep(
    spec0: &SystemSpec,
    direction: &[Vec<Coeff>],
    eps_list: &[f64],
    tau: f64,
    t_end: f64,
    dt: f64,
    phi: &Field,
    opts: SweepOptions,
) -> Result<SweepTable, StabilityError> {
    if direction.len() != spec0.n || direction.iter().any(|row| row.len() != spec0.n) {
        return Err(StabilityError::BadInput(format!(
            "direction must be {0}x{0}",
            spec0.n
        )));
    }
    if !opts.allow_diagonal {
        for (j, row) in direction.iter().enumerate() {
            if !row[j].is_zero() {
                return Err(StabilityError::BadInput(format!(
                    "direction has a diagonal entry at ({0},{0}); pass allow_diagonal to override",
                    j + 1
                )));
            }
        }
    }
    if opts.check_superstable {
        let base = spec0.decoupled_part();
        let res = extinction_order(&base, 8, 3, 1e-8, 20_220_531)?;
        if res.order.is_none() {
            return Err(StabilityError::NotSuperstable);
        }
    }
    let window = opts
        .window
        .unwrap_or((tau + 2.0 / spec0.lambda0, t_end));
    let rows: Result<Vec<SweepRow>, StabilityError> = eps_list
        .par_iter()
        .map(|&eps| {
            let scaled: Vec<Vec<Coeff>> = direction
                .iter()
                .map(|row| row.iter().map(|c| c.scale(eps)).collect())
                .collect();
            let spec = spec0
                .perturb(&scaled)
                .map_err(|e| StabilityError::BadInput(e.to_string()))?;
            let traj = evolve_with(
                &spec,
                phi,
                tau,
                t_end,
                dt,
                EvolveOptions {
                    store_stride: usize::MAX,
                },
            )?;
            let series: Vec<(f64, f64)> = traj.norms.iter().map(|s| (s.time, s.l2)).collect();
            let fit = fit_decay(&series, window).ok();
            let last = traj.norms.last().unwrap();
            Ok(SweepRow {
                eps,
                fit,
                blowup: traj.blowup.is_some(),
                final_l2: last.l2,
                final_time: last.time,
            })
        })
        .collect();
    Ok(SweepTable {
        rows: rows?,
        window,
    })
}

// ---------------------------------------------------------------------
// Smoothing probe
// ---------------------------------------------------------------------

/// Result of the refinement-based `L² → C¹` smoothing probe.
#[derive(Debug, Clone)]
pub struct SmoothingReport {
    pub resolutions: Vec<usize>,
    /// Common comparison times (the coarsest run's step times).
    pub times: Vec<f64>,
    /// `series[r][k]`: discrete `C¹` seminorm of resolution `r` at `times[k]`.
    pub series: Vec<Vec<f64>>,
    /// Earliest time after which all consecutive-refinement ratios stay
    /// within the stable band; `None` when no such time exists.
    pub t_hat: Option<f64>,
    /// `sup_{t ≥ T̂} C¹/‖φ‖_{L²}` at the finest and second-finest runs.
    pub k_hat_top: Option<f64>,
    pub k_hat_prev: Option<f64>,
    pub phi_l2: f64,
    pub levy_pass: bool,
    /// Median over times of the finest-pair ratio (≈ 2 signals a
    /// persistent `1/Δx` divergence).
    pub median_top_ratio: f64,
    pub converged: bool,
}

const RATIO_STABLE_LO: f64 = 0.5;
// Ratios at the top of the admissible band are the signature of a
// seminorm growing like 1/Δx; treat them as divergent.
const RATIO_STABLE_HI: f64 = 1.8;

/// Evolve the same rough initial data at nested resolutions and find the
/// earliest time after which the discrete `C¹` seminorm is
/// resolution-stable. `phi_fine` is given at the finest grid and is
/// restricted to the coarser nested grids; `dt_fine` is the finest step.
pub fn smoothing_probe(
    spec: &SystemSpec,
    phi_fine: &Field,
    tau: f64,
    t_end: f64,
    dt_fine: f64,
    refinements: usize,
) -> Result<SmoothingReport, StabilityError> {
    if refinements < 2 {
        return Err(StabilityError::BadInput(
            "need at least 2 refinements".into(),
        ));
    }
    let top_factor = 1usize << (refinements - 1);
    if (phi_fine.nx - 1) % top_factor != 0 {
        return Err(StabilityError::BadInput(format!(
            "nx−1 = {} not divisible by 2^{}",
            phi_fine.nx - 1,
            refinements - 1
        )));
    }
    let levy_pass = spec
        .check_levy(1e-9, 33, 9, (tau, t_end))
        .map_err(|e| StabilityError::BadInput(e.to_string()))?
        .pass;
    let phi_l2 = l2_norm(phi_fine);

    let runs: Result<Vec<(usize, Vec<f64>)>, StabilityError> = (0..refinements)
        .into_par_iter()
        .map(|r| {
            let factor = 1usize << (refinements - 1 - r);
            let nx_r = (phi_fine.nx - 1) / factor + 1;
            let phi_r = phi_fine
                .restrict(nx_r)
                .ok_or_else(|| StabilityError::BadInput("non-nested restriction".into()))?;
            let dt_r = dt_fine * factor as f64;
            let traj = evolve_with(
                spec,
                &phi_r,
                tau,
                t_end,
                dt_r,
                EvolveOptions {
                    store_stride: usize::MAX,
                },
            )?;
            if traj.blowup.is_some() {
                return Err(StabilityError::BadInput(
                    "solution blew up during the smoothing probe".into(),
                ));
            }
            Ok((nx_r, traj.norms.iter().map(|s| s.c1).collect()))
        })
        .collect();
    let runs = runs?;
    let resolutions: Vec<usize> = runs.iter().map(|(nx, _)| *nx).collect();

    // common times: the coarsest run's steps
    let coarse_len = runs[0].1.len();
    let times: Vec<f64> = (0..coarse_len)
        .map(|k| tau + k as f64 * dt_fine * top_factor as f64)
        .collect();
    let series: Vec<Vec<f64>> = runs
        .iter()
        .enumerate()
        .map(|(r, (_, c1))| {
            let stride = 1usize << r;
            (0..coarse_len).map(|k| c1[k * stride]).collect()
        })
        .collect();

    let tiny = 1e-12 * series.iter().flat_map(|s| s.iter()).fold(0.0f64, |a, &b| a.max(b));
    let ratio = |r: usize, k: usize| -> f64 {
        let lo = series[r][k];
        let hi = series[r + 1][k];
        if lo.max(hi) <= tiny {
            1.0
        } else if lo <= tiny {
            f64::INFINITY
        } else {
            hi / lo
        }
    };
    let stable_at = |k: usize| -> bool {
        (0..refinements - 1).all(|r| {
            let rho = ratio(r, k);
            (RATIO_STABLE_LO..RATIO_STABLE_HI).contains(&rho)
        })
    };
    let mut t_hat_idx: Option<usize> = None;
    for k in (0..coarse_len).rev() {
        if stable_at(k) {
            t_hat_idx = Some(k);
        } else {
            break;
        }
    }
    // require a non-trivial stable tail (more than the last sample)
    if let Some(idx) = t_hat_idx {
        if coarse_len - idx < 3 {
            t_hat_idx = None;
        }
    }
    let t_hat = t_hat_idx.map(|k| times[k]);
    let (k_hat_top, k_hat_prev) = if let Some(idx) = t_hat_idx {
        let sup_from = |r: usize| {
            series[r][idx..]
                .iter()
                .copied()
                .fold(0.0f64, f64::max)
                / phi_l2
        };
        (
            Some(sup_from(refinements - 1)),
            Some(sup_from(refinements - 2)),
        )
    } else {
        (None, None)
    };
    let mut top_ratios: Vec<f64> = (0..coarse_len)
        .map(|k| ratio(refinements - 2, k))
        .filter(|v| v.is_finite())
        .collect();
    top_ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_top_ratio = if top_ratios.is_empty() {
        f64::NAN
    } else {
        top_ratios[top_ratios.len() / 2]
    };
    Ok(SmoothingReport {
        resolutions,
        times,
        series,
        t_hat,
        k_hat_top,
        k_hat_prev,
        phi_l2,
        levy_pass,
        median_top_ratio,
        converged: t_hat.is_some(),
    })
}

// ---------------------------------------------------------------------
// Operator D and the integral-representation residual
// ---------------------------------------------------------------------

/// Functions sampled on an `(x, t)` slab; `NaN` marks undefined samples.
#[derive(Debug, Clone)]
pub struct GridSlab {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[j][it][ix]`
    pub values: Vec<Vec<Vec<f64>>>,
}

impl GridSlab {
    pub fn from_fn(
        n: usize,
        xs: Vec<f64>,
        times: Vec<f64>,
        f: impl Fn(usize, f64, f64) -> f64,
    ) -> GridSlab {
        let values = (0..n)
            .map(|j| {
                times
                    .iter()
                    .map(|&t| xs.iter().map(|&x| f(j, x, t)).collect())
                    .collect()
            })
            .collect();
        GridSlab { xs, times, values }
    }

    pub fn sample(&self, j: usize, x: f64, t: f64) -> f64 {
        let nt = self.times.len();
        let nx = self.xs.len();
        if nt == 0 || nx == 0 {
            return f64::NAN;
        }
        let t0 = self.times[0];
        let dt = if nt > 1 {
            self.times[1] - self.times[0]
        } else {
            1.0
        };
        let s = (t - t0) / dt;
        if s < -1e-9 || s > (nt - 1) as f64 + 1e-9 {
            return f64::NAN;
        }
        let s = s.clamp(0.0, (nt - 1) as f64);
        let it = (s.floor() as usize).min(nt.saturating_sub(2));
        let ft = s - it as f64;
        let x0 = self.xs[0];
        let dx = if nx > 1 { self.xs[1] - self.xs[0] } else { 1.0 };
        let sx = ((x - x0) / dx).clamp(0.0, (nx - 1) as f64);
        let ix = (sx.floor() as usize).min(nx.saturating_sub(2));
        let fx = sx - ix as f64;
        let at = |it: usize, ix: usize| self.values[j][it][ix];
        let v0 = at(it, ix) * (1.0 - fx) + at(it, ix + 1) * fx;
        let v1 = at(it + 1, ix) * (1.0 - fx) + at(it + 1, ix + 1) * fx;
        v0 * (1.0 - ft) + v1 * ft
    }
}

/// Coupling integral along the traced path of component `j` from
/// `(x, t)`: `−∫_{x_j}^{x} d_j(ξ) Σ_{k≠j} b_jk(ξ, ω_j(ξ)) w_k(ξ, ω_j(ξ)) dξ`
/// by the trapezoid rule on the path nodes. Returns `None` when a needed
/// sample of `w` is unavailable.
fn coupling_integral_along(
    spec: &SystemSpec,
    j: usize,
    path: &[crate::characteristics::PathNode],
    value_at: &dyn Fn(usize, f64, f64) -> Option<f64>,
) -> Result<Option<f64>, StabilityError> {
    let cols: Vec<usize> = (0..spec.n)
        .filter(|&k| k != j && !spec.b[j][k].is_zero())
        .collect();
    if cols.is_empty() {
        return Ok(Some(0.0));
    }
    let eval = |c: &Coeff, x: f64, t: f64| -> Result<f64, StabilityError> {
        c.eval(x, t)
            .map_err(|e| StabilityError::BadInput(format!("coefficient at ({x}, {t}): {e}")))
    };
    let has_diag = !spec.b[j][j].is_zero();
    let mut cum = 0.0; // ∫ b_jj/a_j from path start
    let mut prev = path[0];
    let mut a_prev = eval(&spec.a[j], prev.x, prev.t)?;
    let mut g_prev = if has_diag {
        eval(&spec.b[j][j], prev.x, prev.t)? / a_prev
    } else {
        0.0
    };
    let integrand = |k_vals: f64, c: f64, a: f64| c / a * k_vals;
    let mut s_prev = 0.0;
    for &k in &cols {
        match value_at(k, prev.x, prev.t) {
            Some(v) => s_prev += eval(&spec.b[j][k], prev.x, prev.t)? * v,
            None => return Ok(None),
        }
    }
    let mut i_prev = integrand(s_prev, 1.0, a_prev);
    let mut total = 0.0;
    for &node in &path[1..] {
        let a = eval(&spec.a[j], node.x, node.t)?;
        if has_diag {
            let g = eval(&spec.b[j][j], node.x, node.t)? / a;
            cum += 0.5 * (node.x - prev.x) * (g + g_prev);
            g_prev = g;
        }
        let c = cum.exp();
        let mut s = 0.0;
        for &k in &cols {
            match value_at(k, node.x, node.t) {
                Some(v) => s += eval(&spec.b[j][k], node.x, node.t)? * v,
                None => return Ok(None),
            }
        }
        let i_cur = integrand(s, c, a);
        // Σ ½ Δξ (g_s + g_{s+1}) accumulates ∫_x^{exit} = −∫_{exit}^x
        total += 0.5 * (node.x - prev.x) * (i_prev + i_cur);
        i_prev = i_cur;
        a_prev = a;
        prev = node;
    }
    let _ = a_prev;
    Ok(Some(total))
}

/// Apply the coupling operator `D` to gridded functions on a time slab.
/// Defined where the backward characteristic stays inside the slab, i.e.
/// for `t` at least one transit time above the slab start; other samples
/// come back as `NaN`.
pub fn operator_d_apply(
    spec: &SystemSpec,
    w: &GridSlab,
    h: f64,
) -> Result<GridSlab, StabilityError> {
    let t0 = *w
        .times
        .first()
        .ok_or_else(|| StabilityError::BadInput("empty slab".into()))?;
    let t1 = *w.times.last().unwrap();
    let transit = 1.0 / spec.lambda0;
    if t1 - t0 < transit {
        return Err(StabilityError::BadInput(format!(
            "slab of length {} shorter than one transit time {transit}",
            t1 - t0
        )));
    }
    let mut out = GridSlab::from_fn(spec.n, w.xs.clone(), w.times.clone(), |_, _, _| f64::NAN);
    let value_at = |k: usize, x: f64, t: f64| -> Option<f64> {
        let v = w.sample(k, x, t);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    };
    for j in 0..spec.n {
        for (it, &t) in w.times.iter().enumerate() {
            if t - t0 < transit {
                continue;
            }
            for (ix, &x) in w.xs.iter().enumerate() {
                let event = trace_back(spec, j, x, t, t0, h)?;
                if event.kind == ExitKind::InitialTime {
                    continue; // marginal: leave NaN
                }
                if let Some(v) = coupling_integral_along(spec, j, &event.path, &value_at)? {
                    out.values[j][it][ix] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Sup-norm of the integral-representation residual `u − Qu − Du` of a
/// computed trajectory over a sample window, evaluated with the same
/// path machinery as `operator_d_apply`. A converged trajectory drives
/// this to zero at first order under refinement.
pub fn representation_residual(
    spec: &SystemSpec,
    traj: &Trajectory,
    window: (f64, f64),
    nx_samples: usize,
    nt_samples: usize,
    h: f64,
) -> Result<f64, StabilityError> {
    if traj.store_stride != 1 {
        return Err(StabilityError::BadInput(
            "representation residual needs store_stride = 1".into(),
        ));
    }
    let tau = traj.tau;
    let t_last = traj.time_of_step(traj.completed_steps());
    if window.0 < tau || window.1 > t_last + 1e-9 {
        return Err(StabilityError::BadInput(format!(
            "window ({}, {}) outside trajectory range ({tau}, {t_last})",
            window.0, window.1
        )));
    }
    let phi = &traj.fields[0];
    let value_at = |k: usize, x: f64, t: f64| traj.value_at(k, x, t);
    let mut worst: f64 = 0.0;
    for jt in 0..nt_samples {
        let t = window.0 + (window.1 - window.0) * jt as f64 / (nt_samples - 1).max(1) as f64;
        for jx in 0..nx_samples {
            let x = jx as f64 / (nx_samples - 1) as f64;
            for j in 0..spec.n {
                let event = trace_back(spec, j, x, t, tau, h)?;
                let c = weight_c(spec, j, &event, x, t)?;
                let qu = match event.kind {
                    ExitKind::InitialTime => c * phi.sample(j, event.foot_x),
                    _ => {
                        // (Pu)_j at the crossing time from recorded traces
                        let mut acc = 0.0;
                        let mut ok = true;
                        for k in 0..spec.n {
                            if spec.p[j][k] == 0.0 {
                                continue;
                            }
                            match traj.trace_at(k, k < spec.m, event.foot_t) {
                                Some(v) => acc += spec.p[j][k] * v,
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if !ok {
                            continue;
                        }
                        c * acc
                    }
                };
                let du = match coupling_integral_along(spec, j, &event.path, &value_at)? {
                    Some(v) => v,
                    None => continue,
                };
                let u = match traj.value_at(j, x, t) {
                    Some(v) => v,
                    None => continue,
                };
                worst = worst.max((u - qu - du).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr;
    use crate::solver::InitialData;
    use crate::system::{builtins, ReactorParams};

    fn probe_ensemble(spec: &SystemSpec, seed: u64) -> BoundaryEnsemble {
        let transit = 1.0 / spec.lambda0;
        let dt = transit / 64.0;
        let nt = (8.0 * transit / dt).ceil() as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<Vec<(f64, f64)>> = (0..spec.n)
            .map(|_| {
                (0..=4)
                    .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.28)))
                    .collect()
            })
            .collect();
        let f = move |j: usize, x: f64, t: f64| {
            coeffs[j]
                .iter()
                .enumerate()
                .map(|(d, &(a, p))| a * (d as f64 * (x + 0.7 * t) + p).cos())
                .sum::<f64>()
        };
        BoundaryEnsemble::from_fns(spec.n, spec.m, 0.0, dt, nt, 33, &[f])
    }

    #[test]
    fn reactor2_cascade_vanishes_at_two() {
        let spec = builtins::reactor2(&ReactorParams::new(0.4, 0.3, 1.0, 2.0))
            .unwrap()
            .decoupled_part();
        let ens = probe_ensemble(&spec, 9);
        let one = apply_cp(&spec, &ens).unwrap();
        // (CPz)₂ ≡ 0: its reflection row is empty
        for col in &one.probes[0].grid[1] {
            assert!(col.iter().all(|v| *v == 0.0));
        }
        let (sup1, _) = one.sup_norm();
        assert!(sup1 > 1e-3, "first application should not vanish: {sup1}");
        let two = apply_cp(&spec, &one).unwrap();
        let (sup2, valid) = two.sup_norm();
        assert!(valid > 0);
        assert_eq!(sup2, 0.0, "second application must vanish exactly");
    }

    #[test]
    fn zero_reflection_kills_everything() {
        let spec = builtins::transport().unwrap();
        let ens = probe_ensemble(&spec, 1);
        let one = apply_cp(&spec, &ens).unwrap();
        let (sup, _) = one.sup_norm();
        assert_eq!(sup, 0.0);
    }

    #[test]
    fn coupled_system_rejected() {
        let spec = builtins::ex11(1.0).unwrap();
        let ens = probe_ensemble(&spec, 1);
        assert!(matches!(
            apply_cp(&spec, &ens),
            Err(StabilityError::CoupledSystem)
        ));
    }

    #[test]
    fn bjj_residual_scales_with_eps() {
        let res_at = |eps: f64| {
            let spec = builtins::bjj(eps).unwrap();
            extinction_order(&spec, 3, 3, 1e-8, 77).unwrap().residuals[3]
        };
        let r03 = res_at(0.3);
        let r06 = res_at(0.6);
        assert!(r03 > 1e-3);
        // (CP)³ carries the factor (1 − e^ε) (times e^{εx} on one row)
        let ratio = r06 / r03;
        let lo = ((1.0 - (0.6f64).exp()) / (1.0 - (0.3f64).exp())).abs();
        assert!(
            ratio >= lo * 0.95 && ratio <= lo * (0.6f64 - 0.3).exp() * 1.05,
            "ratio {ratio} outside [{}, {}]",
            lo * 0.95,
            lo * (0.3f64).exp() * 1.05
        );
    }

    #[test]
    fn cp_is_linear_on_probes() {
        let spec = builtins::bjj(0.4).unwrap();
        let e1 = probe_ensemble(&spec, 5);
        let e2 = probe_ensemble(&spec, 6);
        // third probe = sum of the two
        let mut sum = e1.clone();
        for j in 0..spec.n {
            for ix in 0..sum.xs.len() {
                for it in 0..sum.nt {
                    sum.probes[0].grid[j][ix][it] += e2.probes[0].grid[j][ix][it];
                }
            }
            for it in 0..sum.nt {
                sum.probes[0].out_traces[j][it] += e2.probes[0].out_traces[j][it];
            }
        }
        let a1 = apply_cp(&spec, &e1).unwrap();
        let a2 = apply_cp(&spec, &e2).unwrap();
        let asum = apply_cp(&spec, &sum).unwrap();
        for j in 0..spec.n {
            for ix in 0..asum.xs.len() {
                for it in 0..asum.nt {
                    let lhs = asum.probes[0].grid[j][ix][it];
                    let rhs = a1.probes[0].grid[j][ix][it] + a2.probes[0].grid[j][ix][it];
                    if lhs.is_nan() || rhs.is_nan() {
                        continue;
                    }
                    assert!((lhs - rhs).abs() <= 1e-12, "additivity violated");
                }
            }
        }
    }

    #[test]
    fn extinction_orders_of_builtins() {
        let reactor2 = builtins::reactor2(&ReactorParams::new(0.4, 0.3, 1.0, 2.0))
            .unwrap()
            .decoupled_part();
        let res = extinction_order(&reactor2, 8, 3, 1e-8, 1).unwrap();
        assert_eq!(res.order, Some(2));
        assert_eq!(res.structural_order, Some(2));
        assert_eq!(res.method, ExtinctionMethod::Structural);
        // monotone residual: exact zero persists
        assert!(res.residuals[2] <= res.tol_abs);
        assert!(res.residuals[3] <= res.tol_abs);

        let reactor3 = builtins::reactor3(&ReactorParams::new(0.4, 0.3, 1.0, 0.5))
            .unwrap()
            .decoupled_part();
        let res = extinction_order(&reactor3, 8, 3, 1e-8, 2).unwrap();
        assert_eq!(res.order, Some(2));

        let control = builtins::control(1.0, 2.0, 1.5).unwrap().decoupled_part();
        let res = extinction_order(&control, 8, 3, 1e-8, 3).unwrap();
        assert_eq!(res.order, Some(2));

        let transport = builtins::transport().unwrap();
        let res = extinction_order(&transport, 4, 3, 1e-8, 4).unwrap();
        assert_eq!(res.order, Some(1));

        // bjj: cancellation at ε=0 gives order 3 beyond structure
        let res = extinction_order(&builtins::bjj(0.0).unwrap(), 8, 3, 1e-8, 5).unwrap();
        assert_eq!(res.order, Some(3));
        assert_eq!(res.structural_order, None);
        assert_eq!(res.method, ExtinctionMethod::Probe);
        assert!(res.residuals[2] > res.tol_abs);

        let res = extinction_order(&builtins::bjj(0.5).unwrap(), 8, 3, 1e-8, 6).unwrap();
        assert_eq!(res.order, None);
        assert!(res.residuals.iter().skip(1).all(|&v| v > res.tol_abs));
    }

    #[test]
    fn structural_order_cases() {
        // chain 1→2→3: nilpotent with index 3
        let p = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        assert_eq!(structural_order(&p).0, Some(3));
        // zero matrix: index 1
        let p = vec![vec![0.0; 2]; 2];
        assert_eq!(structural_order(&p).0, Some(1));
        // self-loop: never nilpotent
        let p = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(structural_order(&p).0, None);
        // tiny entry treated as zero with a warning
        let p = vec![vec![1e-16, 0.0], vec![0.0, 0.0]];
        let (order, warnings) = structural_order(&p);
        assert_eq!(order, Some(1));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn fit_decay_exact_and_noisy() {
        let series: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.05;
                (t, 3.0 * (-2.0 * t).exp())
            })
            .collect();
        let fit = fit_decay(&series, (0.0, 10.0)).unwrap();
        assert!((fit.gamma_hat - 2.0).abs() < 1e-6);
        assert!((fit.m_hat - 3.0).abs() < 1e-6);
        assert!(fit.r2 >= 0.999999);

        // 1% multiplicative noise recovers γ within 2%
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let noisy: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.02;
                let noise: f64 = 1.0 + 0.01 * rng.gen_range(-1.0..1.0);
                (t, 1.7 * (-0.9 * t).exp() * noise)
            })
            .collect();
        let fit = fit_decay(&noisy, (0.0, 8.0)).unwrap();
        assert!(
            (fit.gamma_hat - 0.9).abs() / 0.9 < 0.02,
            "γ̂ = {}",
            fit.gamma_hat
        );
    }

    #[test]
    fn fit_decay_respects_floor_and_sample_minimum() {
        // series hits the extinction floor midway
        let series: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.1;
                let v = if t < 5.0 { (-3.0 * t).exp() } else { 1e-290 };
                (t, v)
            })
            .collect();
        let fit = fit_decay(&series, (0.0, 10.0)).unwrap();
        assert!(fit.gamma_hat.is_finite());
        assert!((fit.gamma_hat - 3.0).abs() < 1e-6);

        let too_few = vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)];
        assert!(matches!(
            fit_decay(&too_few, (0.0, 3.0)),
            Err(StabilityError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn epsilon_for_gamma_reference_values() {
        // c_u = d = 1, γ → 0⁺: log ε + ε = 0 at ε ≈ 0.5671 (Ω constant)
        let eps = epsilon_for_gamma(1.0, 1.0, 1e-12).unwrap();
        assert!((eps - 0.567143).abs() < 1e-4, "{eps}");
        // γ = 1: log ε + ε = −1 at ε ≈ 0.2785
        let eps = epsilon_for_gamma(1.0, 1.0, 1.0).unwrap();
        assert!((eps - 0.2785).abs() < 1e-4, "{eps}");
        // defining equality
        for &(cu, d, g) in &[(1.0, 1.0, 1.0), (2.5, 0.7, 3.0), (0.2, 4.0, 0.1)] {
            let eps = epsilon_for_gamma(cu, d, g).unwrap();
            let lhs = (cu * eps * d).ln() / d + cu * eps;
            assert!((lhs + g).abs() < 1e-10, "({cu},{d},{g}): residual {lhs}");
        }
        // monotone decreasing in γ; bracket endpoint halves with 2c_u
        let e1 = epsilon_for_gamma(1.0, 1.0, 0.5).unwrap();
        let e2 = epsilon_for_gamma(1.0, 1.0, 1.5).unwrap();
        assert!(e2 < e1);
        let e3 = epsilon_for_gamma(2.0, 1.0, 0.5).unwrap();
        assert!(e3 < 0.5);
    }

    #[test]
    fn sweep_rates_increase_as_eps_shrinks() {
        let spec0 = builtins::reactor2(&ReactorParams::new(0.4, 0.3, 1.0, 1.0))
            .unwrap()
            .decoupled_part();
        let mut direction = vec![vec![Coeff::zero(), Coeff::zero()]; 2];
        direction[0][1] = Coeff::Const(1.0);
        direction[1][0] = Coeff::Const(1.0);
        let nx = 101;
        let dt = 1.0 / (nx - 1) as f64;
        let phi = InitialData::Exprs(vec![
            expr::parse("sin(pi*x)").unwrap(),
            expr::parse("x*(1-x)").unwrap(),
        ])
        .sample(2, nx, 0.0)
        .unwrap();
        let table = sweep(
            &spec0,
            &direction,
            &[0.4, 0.2, 0.1],
            0.0,
            9.0,
            dt,
            &phi,
            SweepOptions::default(),
        )
        .unwrap();
        let gammas: Vec<f64> = table
            .rows
            .iter()
            .map(|r| r.fit.as_ref().expect("fit").gamma_hat)
            .collect();
        assert!(
            gammas[0] < gammas[1] && gammas[1] < gammas[2],
            "γ̂ not monotone over the ε decade: {gammas:?}"
        );
        assert!(table.rows.iter().all(|r| !r.blowup));
    }

    #[test]
    fn sweep_rejects_diagonal_direction() {
        let spec0 = builtins::ex11(0.0).unwrap();
        let mut direction = vec![vec![Coeff::zero(), Coeff::zero()]; 2];
        direction[0][0] = Coeff::Const(1.0);
        let phi = Field::zeros(2, 51, 0.0);
        let err = sweep(
            &spec0,
            &direction,
            &[0.1],
            0.0,
            1.0,
            0.02,
            &phi,
            SweepOptions::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn smoothing_probe_smooth_data_stable_from_start() {
        let spec = builtins::transport().unwrap();
        let nx_fine = 201;
        let dt_fine = 1.0 / (nx_fine - 1) as f64;
        let phi = InitialData::Exprs(vec![expr::parse("sin(pi*x)").unwrap()])
            .sample(1, nx_fine, 0.0)
            .unwrap();
        let report = smoothing_probe(&spec, &phi, 0.0, 0.8, dt_fine, 2).unwrap();
        assert!(report.levy_pass);
        assert!(report.converged);
        assert_eq!(report.t_hat, Some(0.0));
    }

    #[test]
    fn operator_d_trivial_cases() {
        // decoupled ⇒ Dw ≡ 0
        let spec = builtins::bjj(0.2).unwrap();
        let xs: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let times: Vec<f64> = (0..41).map(|i| i as f64 * 0.05).collect();
        let w = GridSlab::from_fn(3, xs.clone(), times.clone(), |j, x, t| {
            (j as f64 + 1.0) * (x + t).sin()
        });
        let dw = operator_d_apply(&spec, &w, 0.02).unwrap();
        for j in 0..3 {
            for col in &dw.values[j] {
                for v in col {
                    assert!(v.is_nan() || *v == 0.0);
                }
            }
        }

        // w ≡ 0 ⇒ Dw ≡ 0 even with coupling
        let spec = builtins::ex11(0.5).unwrap();
        let w = GridSlab::from_fn(2, xs.clone(), times.clone(), |_, _, _| 0.0);
        let dw = operator_d_apply(&spec, &w, 0.02).unwrap();
        for j in 0..2 {
            for col in &dw.values[j] {
                for v in col {
                    assert!(v.is_nan() || *v == 0.0);
                }
            }
        }
    }

    #[test]
    fn operator_d_constant_coupling_closed_form() {
        // ex11(ν): (Dw)₁(x,t) = ν ∫ w₂ along the rightward characteristic;
        // with w₂ ≡ 1 this is ν·x once the exit is through x = 0.
        let nu = 0.5;
        let spec = builtins::ex11(nu).unwrap();
        let xs: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();
        let times: Vec<f64> = (0..81).map(|i| i as f64 * 0.025).collect();
        let w = GridSlab::from_fn(2, xs.clone(), times.clone(), |j, _, _| {
            if j == 1 {
                1.0
            } else {
                0.0
            }
        });
        let dw = operator_d_apply(&spec, &w, 0.01).unwrap();
        let it = times.len() - 1; // t = 2.0: boundary exit for every x
        for (ix, &x) in xs.iter().enumerate() {
            let v = dw.values[0][it][ix];
            assert!(
                (v - nu * x).abs() < 1e-10,
                "Dw₁({x}) = {v}, expected {}",
                nu * x
            );
        }
    }

    #[test]
    fn operator_d_linearity() {
        let spec = builtins::ex11(0.8).unwrap();
        let xs: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let times: Vec<f64> = (0..61).map(|i| i as f64 * 0.04).collect();
        let w1 = GridSlab::from_fn(2, xs.clone(), times.clone(), |j, x, t| {
            ((j + 1) as f64 * x - t).cos()
        });
        let w2 = GridSlab::from_fn(2, xs.clone(), times.clone(), |j, x, t| {
            (x + (j as f64 + 0.5) * t).sin()
        });
        let wsum = GridSlab::from_fn(2, xs.clone(), times.clone(), |j, x, t| {
            2.5 * ((j + 1) as f64 * x - t).cos() + (x + (j as f64 + 0.5) * t).sin()
        });
        let d1 = operator_d_apply(&spec, &w1, 0.02).unwrap();
        let d2 = operator_d_apply(&spec, &w2, 0.02).unwrap();
        let dsum = operator_d_apply(&spec, &wsum, 0.02).unwrap();
        for j in 0..2 {
            for it in 0..times.len() {
                for ix in 0..xs.len() {
                    let lhs = dsum.values[j][it][ix];
                    let rhs = 2.5 * d1.values[j][it][ix] + d2.values[j][it][ix];
                    if lhs.is_nan() || rhs.is_nan() {
                        continue;
                    }
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn representation_residual_shrinks_under_refinement() {
        let spec = builtins::ex11(0.5).unwrap();
        let resid = |nx: usize| {
            let dt = 1.0 / (nx - 1) as f64;
            let phi = InitialData::Exprs(vec![
                expr::parse("sin(pi*x)").unwrap(),
                expr::parse("x*(1-x)").unwrap(),
            ])
            .sample(2, nx, 0.0)
            .unwrap();
            let traj = crate::solver::evolve(&spec, &phi, 0.0, 2.2, dt).unwrap();
            representation_residual(&spec, &traj, (1.1, 2.0), 21, 5, dt).unwrap()
        };
        let r1 = resid(101);
        let r2 = resid(201);
        assert!(r1 < 0.05, "coarse residual {r1}");
        assert!(
            r1 / r2 >= 1.8,
            "residual ratio {} too small ({r1} → {r2})",
            r1 / r2
        );
    }
}
