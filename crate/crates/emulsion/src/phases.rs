//! Phase classification, critical curves and transition-order probes.
//!
//! Points are addressed along diagonals `(β + r, β)`. The phases D1, D2, L1
//! and L2 are told apart by excursion criteria evaluated at the maximizers of
//! the reduced variational formulas; every criterion that involves `φ^I`
//! carries a noise band, and a band straddling zero yields `Uncertain`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{excursion_margin, localization_test};
use crate::error::{domain, Error, Result};
use crate::frequencies::FrequencyTriple;
use crate::interface::{annealed_bound, HatKappa, InteractionPoint, InterfaceEstimator};
use crate::noise::{Margin, Sign};
use crate::numerics::{bisect, richardson_derivatives};
use crate::solver::{solve_f_d1, solve_f_d2, solve_f_l1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    D1,
    D2,
    L1,
    L2,
    Uncertain,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::D1 => "D1",
            Phase::D2 => "D2",
            Phase::L1 => "L1",
            Phase::L2 => "L2",
            Phase::Uncertain => "UNCERTAIN",
        }
    }

    /// Position along a diagonal: D1 and D2 come first, then L1, then L2.
    pub fn rank(self) -> Option<u8> {
        match self {
            Phase::D1 | Phase::D2 => Some(0),
            Phase::L1 => Some(1),
            Phase::L2 => Some(2),
            Phase::Uncertain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMargin {
    pub criterion: String,
    pub margin: Margin,
    /// Slope at which the criterion was decided, if any.
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabel {
    pub point: InteractionPoint,
    pub label: Phase,
    /// Phases compatible with the noise bands; a single entry unless `Uncertain`.
    pub candidates: Vec<Phase>,
    pub margins: Vec<NamedMargin>,
}

/// Settings for curve tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// Largest `β` searched along a diagonal.
    pub beta_max: f64,
    /// Bracket width at which bisection stops.
    pub beta_tol: f64,
    /// Step of the upward search for a bracket.
    pub beta_step: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig { beta_max: 16.0, beta_tol: 1e-3, beta_step: 0.25 }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_max > 0.0 && self.beta_tol > 0.0 && self.beta_step > 0.0) {
            return Err(Error::Config("beta_max, beta_tol and beta_step must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a classification needs besides the point.
pub struct PhaseContext<'a> {
    pub p: f64,
    pub rho: FrequencyTriple,
    pub estimator: &'a InterfaceEstimator,
    pub cfg: PhaseConfig,
}

/// `log(1 + √(1 − e^{−r}))`: both critical curves lie on or above it.
pub fn lower_bound_curve(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return domain(format!("r must be >= 0, got {r}"));
    }
    Ok(annealed_bound(r))
}

/// Value of `sup_μ {κ̂(μ) + α/2 − G(μ, ȳ(α))}` with `ȳ` from `f_D1` at `r = α`.
pub fn d1_exit_profile(alpha: f64, rho: &FrequencyTriple) -> Result<f64> {
    let d1 = solve_f_d1(alpha, rho)?;
    Ok(excursion_margin(&HatKappa::default(), 0.5 * alpha, d1.y)?.0.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaStar {
    pub alpha: f64,
    /// Profile value at the returned root.
    pub residual: f64,
}

/// `α*(p)`: where A excursions from B blocks start to pay along the
/// horizontal axis.
pub fn alpha_star(p: f64, rho: &FrequencyTriple) -> Result<AlphaStar> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("p must lie in (0, 1), got {p}"));
    }
    let at_zero = d1_exit_profile(0.0, rho)?;
    if !(at_zero < 0.0) {
        return Err(Error::Bracket(format!("D1 exit profile at alpha=0 is {at_zero}, expected < 0")));
    }
    let mut hi = 1.0;
    while d1_exit_profile(hi, rho)? <= 0.0 {
        hi *= 2.0;
        if hi > 1024.0 {
            return Err(Error::Bracket("D1 exit profile stays negative up to alpha=1024".into()));
        }
    }
    let mut failure = None;
    let alpha = bisect(
        |a| match d1_exit_profile(a, rho) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        hi,
        1e-12,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    // Report the side of the root where the profile is nonpositive.
    let mut a = alpha;
    let mut residual = d1_exit_profile(a, rho)?;
    if residual > 0.0 {
        a -= 1e-12;
        residual = d1_exit_profile(a, rho)?;
    }
    Ok(AlphaStar { alpha: a, residual })
}

fn combine(signs: &[Sign]) -> Sign {
    if signs.contains(&Sign::Positive) {
        Sign::Positive
    } else if signs.iter().all(|&s| s == Sign::NonPositive) {
        Sign::NonPositive
    } else {
        Sign::Uncertain
    }
}

/// Sign of the D1 exit criterion at `point`: positive means the point has left D1.
pub fn d1_exit(point: InteractionPoint, ctx: &PhaseContext) -> Result<NamedMargin> {
    let phi = ctx.estimator.accessor(point)?;
    let d1 = solve_f_d1(point.r(), &ctx.rho)?;
    let (margin, mu) = excursion_margin(&*phi, 0.5 * point.r(), d1.y)?;
    Ok(NamedMargin { criterion: "d1_exit".into(), margin, mu: Some(mu) })
}

/// The two D2 exit criteria at `point`: an AB excursion at `x̄` of `f_D2`,
/// and interface localization at the BA excursion of `ȳ`.
pub fn d2_exit(point: InteractionPoint, ctx: &PhaseContext) -> Result<(Sign, Vec<NamedMargin>)> {
    let phi = ctx.estimator.accessor(point)?;
    let d2 = solve_f_d2(point.r(), &ctx.rho)?;
    let (ab, mu) = excursion_margin(&*phi, 0.0, d2.x)?;
    let loc = localization_test(point, d2.y, &*phi)?;
    let mut margins = vec![NamedMargin { criterion: "d2_ab_exit".into(), margin: ab, mu: Some(mu) }];
    let mut signs = vec![ab.sign()];
    match loc.margin {
        Some(m) => {
            margins.push(NamedMargin { criterion: "d2_localization".into(), margin: m, mu: loc.slope });
            signs.push(loc.sign);
        }
        None => margins.push(NamedMargin { criterion: "d2_localization".into(), margin: Margin::exact(0.0), mu: None }),
    }
    Ok((combine(&signs), margins))
}

/// Sign of the L1 exit criterion: an AB excursion at `x̄` of `f_L1`.
pub fn l1_exit(point: InteractionPoint, ctx: &PhaseContext) -> Result<NamedMargin> {
    let phi = ctx.estimator.accessor(point)?;
    let l1 = solve_f_l1(point, &ctx.rho, &*phi)?;
    let (margin, mu) = excursion_margin(&*phi, 0.0, l1.x)?;
    Ok(NamedMargin { criterion: "l1_ab_exit".into(), margin, mu: Some(mu) })
}

/// Classifies `point`, testing D1, D2 and L1 in turn.
pub fn classify(point: InteractionPoint, ctx: &PhaseContext) -> Result<PhaseLabel> {
    let mut candidates = Vec::new();
    let mut margins = Vec::new();
    let d1 = d1_exit(point, ctx)?;
    let s1 = d1.margin.sign();
    margins.push(d1);
    let mut stop = record(Phase::D1, s1, &mut candidates);
    if !stop {
        let (s2, m2) = d2_exit(point, ctx)?;
        margins.extend(m2);
        stop = record(Phase::D2, s2, &mut candidates);
    }
    if !stop {
        let l1 = l1_exit(point, ctx)?;
        let s3 = l1.margin.sign();
        margins.push(l1);
        stop = record(Phase::L1, s3, &mut candidates);
    }
    if !stop {
        candidates.push(Phase::L2);
    }
    let label = if candidates.len() == 1 { candidates[0] } else { Phase::Uncertain };
    Ok(PhaseLabel { point, label, candidates, margins })
}

/// Adds `phase` when the exit criterion does not certainly fire; returns
/// true when the point certainly stays in `phase`.
fn record(phase: Phase, exit: Sign, candidates: &mut Vec<Phase>) -> bool {
    match exit {
        Sign::NonPositive => {
            candidates.push(phase);
            true
        }
        Sign::Uncertain => {
            candidates.push(phase);
            false
        }
        Sign::Positive => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    BetaC1,
    BetaC2,
    LowerBound,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::BetaC1 => "beta_c1",
            CurveKind::BetaC2 => "beta_c2",
            CurveKind::LowerBound => "lower_bound",
        }
    }
}

/// A located crossing of a membership criterion along one diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    pub beta: f64,
    /// Half-width of `[lower, upper]` plus the bisection tolerance.
    pub uncertainty: f64,
    /// Last `β` where membership is certain.
    pub lower: f64,
    /// First `β` where the exit is certain.
    pub upper: f64,
    /// No certain exit was found below `beta_max`; `upper` is then `beta_max`.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalCurve {
    pub kind: CurveKind,
    pub samples: Vec<CurvePoint>,
    pub alpha_star: f64,
}

/// Locates where `exit` turns from certainly nonpositive to certainly
/// positive along the diagonal of `r`, starting at the cone edge `β = −r/2`.
fn trace_exit<F>(r: f64, cfg: &PhaseConfig, exit: F) -> Result<CurvePoint>
where
    F: Fn(InteractionPoint) -> Result<Sign>,
{
    cfg.validate()?;
    let sign_at = |beta: f64| exit(InteractionPoint::on_diagonal(r, beta)?);
    let start = -0.5 * r;
    if sign_at(start)? != Sign::NonPositive {
        return Err(Error::Bracket(format!("exit criterion is not certainly negative at the cone edge for r={r}")));
    }
    // Walk up to bracket the first certain exit.
    let mut below = start;
    let mut above = None;
    let mut beta = start;
    while beta < cfg.beta_max {
        beta = (beta + cfg.beta_step).min(cfg.beta_max);
        match sign_at(beta)? {
            Sign::Positive => {
                above = Some(beta);
                break;
            }
            Sign::NonPositive => below = beta,
            Sign::Uncertain => {}
        }
    }
    let Some(mut hi) = above else {
        return Ok(CurvePoint {
            r,
            beta: cfg.beta_max,
            uncertainty: cfg.beta_max - below,
            lower: below,
            upper: cfg.beta_max,
            censored: true,
        });
    };
    // `upper`: first certain exit; `lower`: last certain membership.
    let mut lo = (hi - cfg.beta_step).max(start);
    while hi - lo > cfg.beta_tol {
        let mid = 0.5 * (lo + hi);
        if sign_at(mid)? == Sign::Positive {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let upper = hi;
    let (mut lo, mut hi) = (below, upper);
    while hi - lo > cfg.beta_tol {
        let mid = 0.5 * (lo + hi);
        if sign_at(mid)? == Sign::NonPositive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lower = lo;
    Ok(CurvePoint {
        r,
        beta: 0.5 * (lower + upper),
        uncertainty: 0.5 * (upper - lower) + cfg.beta_tol,
        lower,
        upper,
        censored: false,
    })
}

/// `β_c^1(r)` for `0 ≤ r ≤ α*`: the end of D1 along the diagonal.
pub fn beta_c1(r: f64, alpha_star: f64, ctx: &PhaseContext) -> Result<CurvePoint> {
    if !(r >= 0.0 && r <= alpha_star + 1e-12) {
        return domain(format!("beta_c1 needs 0 <= r <= alpha* = {alpha_star}, got {r}"));
    }
    trace_exit(r, &ctx.cfg, |pt| Ok(d1_exit(pt, ctx)?.margin.sign()))
}

/// `β_c^2(r)` for `r > α*`: the end of D2 along the diagonal.
pub fn beta_c2(r: f64, alpha_star: f64, ctx: &PhaseContext) -> Result<CurvePoint> {
    if !(r > alpha_star) {
        return domain(format!("beta_c2 needs r > alpha* = {alpha_star}, got {r}"));
    }
    trace_exit(r, &ctx.cfg, |pt| Ok(d2_exit(pt, ctx)?.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    D1D2,
    D1L1,
    D2L1,
}

impl TransitionKind {
    pub fn name(self) -> &'static str {
        match self {
            TransitionKind::D1D2 => "D1D2",
            TransitionKind::D1L1 => "D1L1",
            TransitionKind::D2L1 => "D2L1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub delta: f64,
    pub gap: f64,
    pub stderr: f64,
    /// `gap < 3·stderr`.
    pub noise_dominated: bool,
}

impl GapRow {
    pub fn over_delta(&self) -> f64 {
        self.gap / self.delta
    }

    pub fn over_delta_sq(&self) -> f64 {
        self.gap / (self.delta * self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapProbe {
    pub kind: TransitionKind,
    /// Diagonal of the probe (`α*` for D1D2).
    pub r: f64,
    /// Critical `β` the offsets are measured from.
    pub beta_c: f64,
    /// `f'_D1`, `f''_D1` at `α*` (D1D2 only).
    pub taylor: Option<(f64, f64)>,
    /// Change of the Taylor coefficients under step halving.
    pub taylor_drift: Option<(f64, f64)>,
    pub rows: Vec<GapRow>,
}

/// Step of the central differences for the Taylor coefficients of `f_D1`.
pub const TAYLOR_STEP: f64 = 1e-3;

/// Free-energy gaps across a transition at offsets `δ`.
///
/// - `D1D2`: `f_D2(α* + δ)` minus the second-order Taylor polynomial of `f_D1` at `α*` (`r` is ignored).
/// - `D1L1`: `f_L1` at `β_c^1(r) + δ` minus `f_D1(r)`.
/// - `D2L1`: `f_L1` at `β_c^2(r) + δ` minus `f_D2(r)`.
pub fn transition_gap_probe(
    kind: TransitionKind,
    r: f64,
    alpha_star: f64,
    deltas: &[f64],
    ctx: &PhaseContext,
) -> Result<GapProbe> {
    if deltas.iter().any(|&d| !(d > 0.0)) {
        return domain("gap offsets must be positive");
    }
    let row = |delta: f64, gap: f64, stderr: f64| GapRow { delta, gap, stderr, noise_dominated: gap < 3.0 * stderr };
    match kind {
        TransitionKind::D1D2 => {
            let a = alpha_star;
            let f_d1 = |x: f64| solve_f_d1(x, &ctx.rho).map(|s| s.value).unwrap_or(f64::NAN);
            let f0 = solve_f_d1(a, &ctx.rho)?.value;
            let (d1, d2) = richardson_derivatives(f_d1, a, TAYLOR_STEP);
            let (e1, e2) = richardson_derivatives(f_d1, a, 0.5 * TAYLOR_STEP);
            if !(d1.is_finite() && d2.is_finite()) {
                return Err(Error::Convergence(format!("f_D1 derivatives at alpha*={a} are not finite")));
            }
            let rows = deltas
                .iter()
                .map(|&d| {
                    let v = solve_f_d2(a + d, &ctx.rho)?.value;
                    Ok(row(d, v - f0 - d1 * d - 0.5 * d2 * d * d, 0.0))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GapProbe {
                kind,
                r: a,
                beta_c: 0.0,
                taylor: Some((d1, d2)),
                taylor_drift: Some(((d1 - e1).abs(), (d2 - e2).abs())),
                rows,
            })
        }
        TransitionKind::D1L1 | TransitionKind::D2L1 => {
            let (crit, base) = if kind == TransitionKind::D1L1 {
                (beta_c1(r, alpha_star, ctx)?, solve_f_d1(r, &ctx.rho)?.value)
            } else {
                (beta_c2(r, alpha_star, ctx)?, solve_f_d2(r, &ctx.rho)?.value)
            };
            let rows = deltas
                .iter()
                .map(|&d| {
                    let pt = InteractionPoint::on_diagonal(r, crit.beta + d)?;
                    let phi = ctx.estimator.accessor(pt)?;
                    let l1 = solve_f_l1(pt, &ctx.rho, &*phi)?;
                    Ok(row(d, l1.value - base, l1.stderr))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GapProbe { kind, r, beta_c: crit.beta, taylor: None, taylor_drift: None, rows })
        }
    }
}

/// Output of [`trace_phase_diagram`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub p: f64,
    pub alpha_star: AlphaStar,
    pub curves: Vec<CriticalCurve>,
    pub grid: Vec<PhaseLabel>,
    /// The L1/L2 boundary is not established; labels there are exploratory.
    pub l1_l2_conjectural: bool,
}

impl PhaseDiagram {
    pub fn has_uncertain(&self) -> bool {
        self.grid.iter().any(|c| c.label == Phase::Uncertain)
    }

    /// The point where D1, D2 and L1 meet, from the `β_c^1` sample at `α*`.
    pub fn tricritical(&self) -> Option<(f64, f64)> {
        let a = self.alpha_star.alpha;
        self.curves
            .iter()
            .filter(|c| c.kind == CurveKind::BetaC1)
            .flat_map(|c| c.samples.iter())
            .find(|s| (s.r - a).abs() < 1e-12)
            .map(|s| (a + s.beta, s.beta))
    }
}

/// Traces `β_c^1` on `r_grid ∩ [0, α*]` (always including `α*`), `β_c^2` on
/// `r_grid ∩ (α*, ∞)`, the lower-bound curve, and classifies every cone
/// point of the `alphas × betas` grid.
pub fn trace_phase_diagram(r_grid: &[f64], alphas: &[f64], betas: &[f64], ctx: &PhaseContext) -> Result<PhaseDiagram> {
    if r_grid.iter().any(|&r| !(r >= 0.0)) {
        return domain("r grid values must be >= 0");
    }
    let star = alpha_star(ctx.p, &ctx.rho)?;
    let a = star.alpha;
    let mut c1_rs: Vec<f64> = r_grid.iter().copied().filter(|&r| r <= a).collect();
    c1_rs.push(a);
    let c2_rs: Vec<f64> = r_grid.iter().copied().filter(|&r| r > a).collect();
    let c1 = c1_rs.par_iter().map(|&r| beta_c1(r, a, ctx)).collect::<Result<Vec<_>>>()?;
    let c2 = c2_rs.par_iter().map(|&r| beta_c2(r, a, ctx)).collect::<Result<Vec<_>>>()?;
    let lower = r_grid
        .iter()
        .map(|&r| {
            let beta = lower_bound_curve(r)?;
            Ok(CurvePoint { r, beta, uncertainty: 0.0, lower: beta, upper: beta, censored: false })
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<InteractionPoint> = alphas
        .iter()
        .flat_map(|&al| betas.iter().map(move |&be| (al, be)))
        .filter_map(|(al, be)| InteractionPoint::new(al, be).ok())
        .collect();
    let grid = points.par_iter().map(|&pt| classify(pt, ctx)).collect::<Result<Vec<_>>>()?;
    Ok(PhaseDiagram {
        p: ctx.p,
        alpha_star: star,
        curves: vec![
            CriticalCurve { kind: CurveKind::BetaC1, samples: c1, alpha_star: a },
            CriticalCurve { kind: CurveKind::BetaC2, samples: c2, alpha_star: a },
            CriticalCurve { kind: CurveKind::LowerBound, samples: lower, alpha_star: a },
        ],
        grid,
        l1_l2_conjectural: true,
    })
}
