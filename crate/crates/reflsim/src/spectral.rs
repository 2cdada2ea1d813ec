//! Roots of the characteristic quasipolynomial `z + a + b e^{-z}` and
//! stability classification of the autonomous examples.
//!
//! Root counting uses the argument principle: the winding of `f` over a
//! rectangle boundary is tracked by adaptive sampling with
//! argument-increment steps below `π/2` (no quadrature of `f'/f`).
//! Boxes are subdivided until each contains a single root, which is then
//! polished by damped Newton. `f'' = b e^{-z}` never vanishes, so roots
//! have multiplicity at most two; a persistent winding-2 cluster is
//! resolved by Newton on `f'`. Real roots are additionally located by a
//! sign-change scan plus bisection on the box's real section.
//!
//! For the example systems the spectral variable relates to field rates
//! by `z = 2λ`; reports carry both.

use num_complex::Complex64;
use thiserror::Error;

/// The entire function `z ↦ z + a + b e^{-z}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiPoly {
    pub a: f64,
    pub b: f64,
}

impl QuasiPoly {
    pub fn new(a: f64, b: f64) -> QuasiPoly {
        QuasiPoly { a, b }
    }

    /// Quasipolynomial of the damped/coupled pair: `a = μ − ν`, `b = ν e^{−μ}`.
    pub fn from_mu_nu(mu: f64, nu: f64) -> QuasiPoly {
        QuasiPoly {
            a: mu - nu,
            b: nu * (-mu).exp(),
        }
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        z + self.a + self.b * (-z).exp()
    }

    pub fn deriv(&self, z: Complex64) -> Complex64 {
        Complex64::new(1.0, 0.0) - self.b * (-z).exp()
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        x + self.a + self.b * (-x).exp()
    }

    /// Default search box: the rightmost root of `z + a + b e^{-z}` lies
    /// in a strip computable from `a, b` because root chains bend left
    /// as `|Im z|` grows.
    pub fn default_box(&self) -> Rect {
        let re_lo = -(10.0f64).max(2.0 * self.a.abs() + 2.0 * self.b.abs());
        let re_hi = (2.0f64).max(self.a.abs() + self.b.abs());
        Rect {
            re0: re_lo,
            re1: re_hi,
            im0: -40.0,
            im1: 40.0,
        }
    }
}

/// Axis-aligned search rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub re0: f64,
    pub re1: f64,
    pub im0: f64,
    pub im1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.re1 - self.re0
    }
    pub fn height(&self) -> f64 {
        self.im1 - self.im0
    }
    pub fn diag(&self) -> f64 {
        self.width().hypot(self.height())
    }
    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))
    }
    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re0 - slack
            && z.re <= self.re1 + slack
            && z.im >= self.im0 - slack
            && z.im <= self.im1 + slack
    }
    fn expand(&self, d: f64) -> Rect {
        Rect {
            re0: self.re0 - d,
            re1: self.re1 + d,
            im0: self.im0 - d,
            im1: self.im1 + d,
        }
    }
    fn split(&self, frac: f64) -> (Rect, Rect) {
        if self.width() >= self.height() {
            let cut = self.re0 + frac * self.width();
            (
                Rect { re1: cut, ..*self },
                Rect { re0: cut, ..*self },
            )
        } else {
            let cut = self.im0 + frac * self.height();
            (
                Rect { im1: cut, ..*self },
                Rect { im0: cut, ..*self },
            )
        }
    }
}

/// Winding and polish outcome for one leaf of the subdivision.
#[derive(Debug, Clone, Copy)]
pub struct BoxAudit {
    pub rect: Rect,
    pub winding: i32,
    pub roots_found: usize,
}

/// Root-finding report for one quasipolynomial over one box.
#[derive(Debug, Clone)]
pub struct RootReport {
    /// Root with maximal real part found in the box (with multiplicity,
    /// double roots appear once here).
    pub rightmost: Option<Complex64>,
    /// All polished roots, multiplicity-repeated.
    pub roots: Vec<Complex64>,
    /// Real roots in the box's real section (sign-change scan + bisection).
    pub real_roots: Vec<f64>,
    /// Total winding count of the outer box.
    pub winding_total: i32,
    /// Per-leaf audit: winding vs polished roots.
    pub leaves: Vec<BoxAudit>,
    /// Largest residual `|f(root)|` over reported roots.
    pub max_residual: f64,
    /// The box actually searched (after any jitter retries).
    pub box_used: Rect,
    pub jitter_retries: u32,
}

impl RootReport {
    /// Every leaf's winding equals its polished-root count.
    pub fn audit_passes(&self) -> bool {
        self.leaves
            .iter()
            .all(|l| l.winding as usize == l.roots_found)
            && self.winding_total as usize == self.roots.len()
    }
}

#[derive(Debug, Clone, Error)]
pub enum SpectralError {
    #[error("|f| fell below the boundary floor near {0} on every jittered box")]
    BoundaryTooClose(Complex64),
    #[error("winding inconsistency after max subdivisions near {0} (winding {1})")]
    WindingInconsistent(Complex64, i32),
    #[error("invalid input: {0}")]
    BadInput(String),
}

const BOUNDARY_FLOOR: f64 = 1e-8;
const MAX_SEG: f64 = 0.5;
const MAX_EDGE_DEPTH: u32 = 48;
const POLISH_TARGET: f64 = 1e-12;

enum EdgeIssue {
    TooClose(Complex64),
    PhaseJump(Complex64),
}

fn edge_arg(q: &QuasiPoly, z0: Complex64, z1: Complex64, depth: u32) -> Result<f64, EdgeIssue> {
    let f0 = q.eval(z0);
    let f1 = q.eval(z1);
    if f0.norm() < BOUNDARY_FLOOR {
        return Err(EdgeIssue::TooClose(z0));
    }
    if f1.norm() < BOUNDARY_FLOOR {
        return Err(EdgeIssue::TooClose(z1));
    }
    let seg = (z1 - z0).norm();
    let d = (f1 / f0).arg();
    if (seg <= MAX_SEG && d.abs() <= std::f64::consts::FRAC_PI_2) || seg < 1e-13 {
        return Ok(d);
    }
    if depth >= MAX_EDGE_DEPTH {
        return Err(EdgeIssue::PhaseJump(z0));
    }
    let mid = 0.5 * (z0 + z1);
    Ok(edge_arg(q, z0, mid, depth + 1)? + edge_arg(q, mid, z1, depth + 1)?)
}

fn winding(q: &QuasiPoly, rect: &Rect) -> Result<i32, EdgeIssue> {
    let c00 = Complex64::new(rect.re0, rect.im0);
    let c10 = Complex64::new(rect.re1, rect.im0);
    let c11 = Complex64::new(rect.re1, rect.im1);
    let c01 = Complex64::new(rect.re0, rect.im1);
    let total = edge_arg(q, c00, c10, 0)?
        + edge_arg(q, c10, c11, 0)?
        + edge_arg(q, c11, c01, 0)?
        + edge_arg(q, c01, c00, 0)?;
    let w = total / std::f64::consts::TAU;
    let rounded = w.round();
    if (w - rounded).abs() > 0.25 {
        return Err(EdgeIssue::PhaseJump(rect.center()));
    }
    Ok(rounded as i32)
}

/// Damped Newton for a simple root; step clamped to the box scale.
fn polish_simple(q: &QuasiPoly, start: Complex64, max_step: f64) -> Option<Complex64> {
    let mut z = start;
    for _ in 0..200 {
        let f = q.eval(z);
        let df = q.deriv(z);
        if df.norm() < 1e-300 {
            return None;
        }
        let mut dz = f / df;
        let n = dz.norm();
        if n > max_step {
            dz *= max_step / n;
        }
        z -= dz;
        if dz.norm() <= 1e-16 * (1.0 + z.norm()) {
            break;
        }
    }
    if q.eval(z).norm() <= POLISH_TARGET {
        Some(z)
    } else {
        None
    }
}

/// Newton on `f'` resolves a double root (`f'' = b e^{-z}` never
/// vanishes, so multiplicity never exceeds two).
fn polish_double(q: &QuasiPoly, start: Complex64) -> Option<Complex64> {
    let mut z = start;
    for _ in 0..200 {
        let df = q.deriv(z);
        // f'' = b e^{-z}
        let d2 = q.b * (-z).exp();
        if d2.norm() < 1e-300 {
            return None;
        }
        let dz = df / d2;
        z -= dz;
        if dz.norm() <= 1e-16 * (1.0 + z.norm()) {
            break;
        }
    }
    if q.eval(z).norm() <= 1e-10 && q.deriv(z).norm() <= 1e-8 {
        Some(z)
    } else {
        None
    }
}

fn split_fractions() -> [f64; 7] {
    [0.5, 0.461, 0.543, 0.417, 0.583, 0.371, 0.629]
}

struct Search<'q> {
    q: &'q QuasiPoly,
    roots: Vec<Complex64>,
    leaves: Vec<BoxAudit>,
}

impl<'q> Search<'q> {
    fn run(&mut self, rect: Rect, w: i32) -> Result<(), SpectralError> {
        if w == 0 {
            self.leaves.push(BoxAudit {
                rect,
                winding: 0,
                roots_found: 0,
            });
            return Ok(());
        }
        let scale = 1.0 + rect.center().norm();
        if w == 1 {
            if let Some(root) = polish_simple(self.q, rect.center(), 2.0 * rect.diag()) {
                if rect.contains(root, 1e-9 * scale) {
                    self.roots.push(root);
                    self.leaves.push(BoxAudit {
                        rect,
                        winding: 1,
                        roots_found: 1,
                    });
                    return Ok(());
                }
            }
        }
        if rect.diag() < 1e-6 * scale {
            if w == 2 {
                if let Some(root) = polish_double(self.q, rect.center()) {
                    if rect.contains(root, 1e-6 * scale) {
                        self.roots.push(root);
                        self.roots.push(root);
                        self.leaves.push(BoxAudit {
                            rect,
                            winding: 2,
                            roots_found: 2,
                        });
                        return Ok(());
                    }
                }
            }
            return Err(SpectralError::WindingInconsistent(rect.center(), w));
        }
        // Split along the longest side, nudging the cut until the two
        // halves yield consistent windings.
        let mut last_issue = rect.center();
        for frac in split_fractions() {
            let (ra, rb) = rect.split(frac);
            let wa = match winding(self.q, &ra) {
                Ok(w) => w,
                Err(EdgeIssue::TooClose(z)) | Err(EdgeIssue::PhaseJump(z)) => {
                    last_issue = z;
                    continue;
                }
            };
            let wb = match winding(self.q, &rb) {
                Ok(w) => w,
                Err(EdgeIssue::TooClose(z)) | Err(EdgeIssue::PhaseJump(z)) => {
                    last_issue = z;
                    continue;
                }
            };
            if wa + wb != w {
                last_issue = rect.center();
                continue;
            }
            self.run(ra, wa)?;
            self.run(rb, wb)?;
            return Ok(());
        }
        Err(SpectralError::WindingInconsistent(last_issue, w))
    }
}

fn real_roots_scan(q: &QuasiPoly, rect: &Rect) -> Vec<f64> {
    if rect.im0 > 0.0 || rect.im1 < 0.0 {
        return Vec::new();
    }
    let nsamp = 4001;
    let mut roots = Vec::new();
    let mut prev_x = rect.re0;
    let mut prev_f = q.eval_real(prev_x);
    for i in 1..nsamp {
        let x = rect.re0 + rect.width() * i as f64 / (nsamp - 1) as f64;
        let f = q.eval_real(x);
        if prev_f == 0.0 {
            roots.push(prev_x);
        } else if prev_f * f < 0.0 {
            let mut lo = prev_x;
            let mut hi = x;
            let mut flo = prev_f;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = q.eval_real(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
                if hi - lo < 1e-15 * (1.0 + mid.abs()) {
                    break;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_f = f;
    }
    if prev_f == 0.0 {
        roots.push(prev_x);
    }
    roots
}

/// Locate all roots of `q` in `rect` by winding subdivision, polish them,
/// and return the one with maximal real part together with audit data.
///
/// Boxes whose boundary sampling dips below the floor `1e-8` are retried
/// with deterministically expanded boxes.
pub fn rightmost_root(q: &QuasiPoly, rect: Rect) -> Result<RootReport, SpectralError> {
    if !(rect.re1 > rect.re0) || !(rect.im1 > rect.im0) {
        return Err(SpectralError::BadInput("empty box".to_string()));
    }
    let scale = 1.0 + rect.diag();
    let mut last_close = rect.center();
    for attempt in 0..8u32 {
        let delta = attempt as f64 * attempt as f64 * 1.3e-3 * scale / 64.0;
        let outer = rect.expand(delta);
        let w = match winding(q, &outer) {
            Ok(w) => w,
            Err(EdgeIssue::TooClose(z)) | Err(EdgeIssue::PhaseJump(z)) => {
                last_close = z;
                continue;
            }
        };
        let mut search = Search {
            q,
            roots: Vec::new(),
            leaves: Vec::new(),
        };
        search.run(outer, w)?;
        let mut roots = search.roots;
        // multiplicity-aware dedupe of polish coincidences across leaves
        roots.sort_by(|p, r| {
            p.re.partial_cmp(&r.re)
                .unwrap()
                .then(p.im.partial_cmp(&r.im).unwrap())
        });
        let real_roots = real_roots_scan(q, &outer);
        let mut max_residual: f64 = 0.0;
        for z in &roots {
            max_residual = max_residual.max(q.eval(*z).norm());
        }
        for x in &real_roots {
            max_residual = max_residual.max(q.eval_real(*x).abs());
        }
        let mut rightmost: Option<Complex64> = None;
        for z in roots
            .iter()
            .copied()
            .chain(real_roots.iter().map(|x| Complex64::new(*x, 0.0)))
        {
            if rightmost.map_or(true, |r| z.re > r.re) {
                rightmost = Some(z);
            }
        }
        return Ok(RootReport {
            rightmost,
            roots,
            real_roots,
            winding_total: w,
            leaves: search.leaves,
            max_residual,
            box_used: outer,
            jitter_retries: attempt,
        });
    }
    Err(SpectralError::BoundaryTooClose(last_close))
}

/// Unique positive solution `γ` of `ν (1 − e^{−γ}) = γ`, present exactly
/// when `ν > 1`; located by bisection on `(0, ν]`.
pub fn gamma_root(nu: f64) -> Option<f64> {
    if !nu.is_finite() || nu <= 1.0 {
        return None;
    }
    let g = |x: f64| nu * (1.0 - (-x).exp()) - x;
    let mut lo = 1e-12;
    let mut hi = nu;
    if g(lo) <= 0.0 || g(hi) >= 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid);
        if v == 0.0 {
            return Some(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 * (1.0 + mid) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Stability verdict from the closed-form thresholds alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityClass {
    Stable,
    Unstable,
    InconclusiveByThreshold,
}

impl StabilityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::InconclusiveByThreshold => "inconclusive-by-threshold",
        }
    }
}

/// Classification of the damped/coupled pair at `(μ, ν)`.
#[derive(Debug, Clone)]
pub struct Classification {
    pub mu: f64,
    pub nu: f64,
    /// `ν < μ/(1+e^{−μ})` ⇒ stable; `ν > (μ+1)/(1−e^{−μ})` ⇒ unstable.
    pub class: StabilityClass,
    pub stable_threshold: f64,
    pub unstable_threshold: f64,
    /// Root report for `z + (μ−ν) + ν e^{−μ} e^{−z}` over the default
    /// box; decisive when the thresholds are inconclusive.
    pub report: RootReport,
    pub re_rightmost: Option<f64>,
}

pub fn mu_nu_classify(mu: f64, nu: f64) -> Result<Classification, SpectralError> {
    if !(mu > 0.0) || !(nu > 0.0) {
        return Err(SpectralError::BadInput(format!(
            "mu={mu}, nu={nu}: both must be positive"
        )));
    }
    let stable_threshold = mu / (1.0 + (-mu).exp());
    let unstable_threshold = (mu + 1.0) / (1.0 - (-mu).exp());
    let class = if nu < stable_threshold {
        StabilityClass::Stable
    } else if nu > unstable_threshold {
        StabilityClass::Unstable
    } else {
        StabilityClass::InconclusiveByThreshold
    };
    let q = QuasiPoly::from_mu_nu(mu, nu);
    let report = rightmost_root(&q, q.default_box())?;
    let re_rightmost = report.rightmost.map(|z| z.re);
    Ok(Classification {
        mu,
        nu,
        class,
        stable_threshold,
        unstable_threshold,
        report,
        re_rightmost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test-only oracle: principal Lambert branch by Halley iteration on
    /// `w e^w = μ`, independent of the winding/Newton implementation.
    fn lambert_w0(mu: Complex64, start: Complex64) -> Complex64 {
        let mut w = start;
        for _ in 0..200 {
            let ew = w.exp();
            let f = w * ew - mu;
            let df = ew * (w + 1.0);
            let d2f = ew * (w + 2.0);
            let denom = df - f * d2f / (2.0 * df);
            let dw = f / denom;
            w -= dw;
            if dw.norm() < 1e-16 * (1.0 + w.norm()) {
                break;
            }
        }
        w
    }

    fn lambert_w0_real(mu: f64) -> f64 {
        let start = if mu > 0.0 { mu.ln_1p() } else { -0.5 };
        lambert_w0(Complex64::new(mu, 0.0), Complex64::new(start, 0.0)).re
    }

    #[test]
    fn gamma_root_examples() {
        // ν = 2: γ = ν + W₀(−ν e^{−ν})
        let g = gamma_root(2.0).unwrap();
        let oracle = 2.0 + lambert_w0_real(-2.0 * (-2.0f64).exp());
        assert!((g - oracle).abs() < 1e-10, "γ={g}, oracle={oracle}");
        assert!((g - 1.5936).abs() < 1e-4);
        // defining equality
        assert!((2.0 * (1.0 - (-g).exp()) - g).abs() < 1e-12);
        assert!(gamma_root(1.0).is_none());
        assert!(gamma_root(0.5).is_none());
        assert!(gamma_root(-3.0).is_none());
    }

    #[test]
    fn linear_case_single_root() {
        let q = QuasiPoly::new(1.7, 0.0);
        let report = rightmost_root(&q, q.default_box()).unwrap();
        assert_eq!(report.winding_total, 1);
        let z = report.rightmost.unwrap();
        assert!((z - Complex64::new(-1.7, 0.0)).norm() < 1e-12);
        assert!(report.audit_passes());
    }

    #[test]
    fn substitution_root_mu1_nu05() {
        // a = 0.5, b = 0.5/e: z = −1 satisfies −1 + 0.5 + 0.5 e^{−1} e = 0
        let q = QuasiPoly::from_mu_nu(1.0, 0.5);
        assert!(q.eval(Complex64::new(-1.0, 0.0)).norm() <= 1e-12);
        let report = rightmost_root(&q, Rect { re0: -4.0, re1: 1.0, im0: -8.0, im1: 8.0 }).unwrap();
        let z = report.rightmost.unwrap();
        assert!((z.re + 1.0).abs() < 1e-9, "rightmost {z}");
        assert!(z.im.abs() < 1e-9);
        assert!(report.max_residual <= 1e-10);
        assert!(report.audit_passes());
    }

    #[test]
    fn ex11_correspondence_real_rightmost() {
        // γ − ν + ν e^{−γ} = 0 is the quasipoly (a, b) = (−ν, ν); its
        // rightmost real root for ν > 1 is the positive γ.
        let nu = 2.0;
        let q = QuasiPoly::new(-nu, nu);
        let report = rightmost_root(&q, q.default_box()).unwrap();
        let g = gamma_root(nu).unwrap();
        let best_real = report
            .real_roots
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best_real - g).abs() < 1e-10, "scan {best_real} vs γ {g}");
        let z = report.rightmost.unwrap();
        assert!((z.re - g).abs() < 1e-10 && z.im.abs() < 1e-9);
        // z = 0 is also an exact root and must be found
        assert!(report.roots.iter().any(|r| r.norm() < 1e-9));
    }

    #[test]
    fn known_complex_pair() {
        // a = 0, b = 1: rightmost pair is W₀(−1) with its conjugate
        let q = QuasiPoly::new(0.0, 1.0);
        let report = rightmost_root(&q, q.default_box()).unwrap();
        let z = report.rightmost.unwrap();
        let oracle = lambert_w0(Complex64::new(-1.0, 0.0), Complex64::new(-0.3, 1.3));
        assert!(
            (z.re - oracle.re).abs() < 1e-9 && (z.im.abs() - oracle.im.abs()).abs() < 1e-9,
            "impl {z} vs oracle {oracle}"
        );
        assert!(report.audit_passes());
        // conjugate pair both present
        assert!(report
            .roots
            .iter()
            .any(|r| (r.im - oracle.im.abs()).abs() < 1e-8));
        assert!(report
            .roots
            .iter()
            .any(|r| (r.im + oracle.im.abs()).abs() < 1e-8));
    }

    #[test]
    fn rightmost_matches_lambert_on_real_branch() {
        // parameter range where −b e^a ∈ (−1/e, 0]: rightmost is real
        // and equals −a + W₀(−b e^a)
        let cases = [
            (-1.5, 0.05),
            (-0.3, 0.2),
            (0.0, 0.3),
            (1.0, 0.1),
            (2.0, 0.02),
            (0.5, -2.0),
            (-1.0, -1.0),
        ];
        for (a, b) in cases {
            let q = QuasiPoly::new(a, b);
            let report = rightmost_root(&q, q.default_box()).unwrap();
            let z = report.rightmost.unwrap();
            let oracle = -a + lambert_w0_real(-b * a.exp());
            assert!(
                (z.re - oracle).abs() < 1e-9 && z.im.abs() < 1e-9,
                "(a={a}, b={b}): impl {z} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn double_root_at_nu_one() {
        // ν = 1 puts −b e^a = −1/e exactly: double root at z = −μ
        let q = QuasiPoly::from_mu_nu(1.0, 1.0);
        let report = rightmost_root(&q, q.default_box()).unwrap();
        let z = report.rightmost.unwrap();
        assert!((z - Complex64::new(-1.0, 0.0)).norm() < 1e-6, "{z}");
        // multiplicity two is reflected in the count
        assert!(report
            .roots
            .iter()
            .filter(|r| (*r - Complex64::new(-1.0, 0.0)).norm() < 1e-5)
            .count() >= 2);
    }

    #[test]
    fn every_root_satisfies_residual_bound() {
        let q = QuasiPoly::new(-3.0, 4.0 * (-1.0f64).exp());
        let report = rightmost_root(&q, q.default_box()).unwrap();
        assert!(report.max_residual <= 1e-10);
        for z in &report.roots {
            assert!(q.eval(*z).norm() <= 1e-10);
        }
    }

    #[test]
    fn classify_thresholds() {
        let c = mu_nu_classify(1.0, 0.5).unwrap();
        assert_eq!(c.class, StabilityClass::Stable);
        assert!((c.stable_threshold - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((c.stable_threshold - 0.7311).abs() < 1e-4);
        assert!(c.re_rightmost.unwrap() < 0.0);

        let c = mu_nu_classify(1.0, 4.0).unwrap();
        assert_eq!(c.class, StabilityClass::Unstable);
        assert!((c.unstable_threshold - 2.0 / (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((c.unstable_threshold - 3.1640).abs() < 1e-4);
        assert!(c.re_rightmost.unwrap() > 0.0);

        let c = mu_nu_classify(1.0, 1.0).unwrap();
        assert_eq!(c.class, StabilityClass::InconclusiveByThreshold);
        // the attached report decides: double root at −1 ⇒ stable
        assert!(c.re_rightmost.unwrap() < 0.0);

        assert!(mu_nu_classify(-1.0, 1.0).is_err());
    }

    #[test]
    fn unstable_case_rate_against_simulation_constant() {
        // μ=1, ν=4: rightmost real root of z − 3 + 4e^{−1}e^{−z}
        let q = QuasiPoly::from_mu_nu(1.0, 4.0);
        let report = rightmost_root(&q, q.default_box()).unwrap();
        let z = report.rightmost.unwrap();
        assert!(z.im.abs() < 1e-9);
        // oracle: z = −a + W₀(−b e^a), real branch (−b e^a ≈ −0.0733 > −1/e)
        let oracle = 3.0 + lambert_w0_real(-4.0 * (-1.0f64).exp() * (-3.0f64).exp());
        assert!((z.re - oracle).abs() < 1e-9, "impl {} oracle {oracle}", z.re);
        assert!((z.re - 2.9206).abs() < 2e-4);
    }

    #[test]
    fn random_audit_sample() {
        // a smaller version of the acceptance self-audit
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let a = rng.gen_range(-5.0..5.0);
            let b = rng.gen_range(-5.0..5.0);
            let q = QuasiPoly::new(a, b);
            let report = rightmost_root(&q, q.default_box()).unwrap();
            assert!(report.audit_passes(), "(a={a}, b={b})");
            assert!(report.max_residual <= 1e-10, "(a={a}, b={b})");
            assert!(report.rightmost.is_some(), "(a={a}, b={b})");
        }
    }
}
