//! Free energies of a copolymer crossing one block while seeing a neighbour.
//!
//! For the pair `kl` the polymer crosses a `k` block diagonally in `aL`
//! steps and may make an excursion of `cL` steps, `bL` of them horizontal,
//! along the interface with the neighbouring `l` block. Writing
//! `K(a, b) = a·κ(a, b)` and `Φ(μ) = μ·φ^I(μ)`, the excursion objective is
//!
//! ```text
//! a·ψ = sup_{(b,c) ∈ DOM(a)} [ b·Φ(c/b) + K(a − c, 1 − b) − δ (a − c) r/2 ]
//! ```
//!
//! with `δ = 1` when the crossed block is B. Both terms are jointly concave
//! in `(b, c)`, so nested golden-section searches find the maximum.

use serde::{Deserialize, Serialize};

use crate::entropy::{block_entropy, block_entropy_diag, block_entropy_run, entropy_g, interface_entropy};
use crate::error::{domain, Result};
use crate::interface::{HatKappa, InteractionPoint, InterfaceFreeEnergy};
use crate::noise::{Margin, Sign};
use crate::numerics::{geometric_grid, golden_max, grid_sup, Argmax};

/// Excursion widths below this count as no excursion.
pub const NO_EXCURSION: f64 = 1e-7;

/// Largest slope considered in suprema over `μ`.
pub const SLOPE_CAP: f64 = 1e6;

const TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    AA,
    BB,
    BAHat,
    BA,
    AB,
}

/// Width `b` and length `c` of an excursion along the interface, per `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionPair {
    pub b: f64,
    pub c: f64,
}

impl ExcursionPair {
    pub const NONE: ExcursionPair = ExcursionPair { b: 0.0, c: 0.0 };

    /// `c/b`, or `None` when there is no excursion width.
    pub fn slope(&self) -> Option<f64> {
        (self.b > NO_EXCURSION).then(|| self.c / self.b)
    }

    pub fn in_domain(&self, a: f64) -> bool {
        self.b >= 0.0 && self.b <= 1.0 && self.c >= self.b - 1e-12 && a - self.c >= 2.0 - self.b - 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFreeEnergy {
    pub kind: BlockKind,
    pub a: f64,
    pub value: f64,
    pub maximizer: Option<ExcursionPair>,
    pub stderr: f64,
    /// The excursion gain is within the noise band.
    pub uncertain: bool,
}

impl BlockFreeEnergy {
    fn exact(kind: BlockKind, a: f64, value: f64, maximizer: Option<ExcursionPair>) -> Self {
        BlockFreeEnergy { kind, a, value, maximizer, stderr: 0.0, uncertain: false }
    }

    /// `a·ψ(a)`.
    pub fn total(&self) -> f64 {
        self.a * self.value
    }
}

fn check_a(a: f64) -> Result<()> {
    if !(a >= 2.0) || !a.is_finite() {
        return domain(format!("block crossings need a >= 2, got {a}"));
    }
    Ok(())
}

pub fn psi_aa(a: f64) -> Result<BlockFreeEnergy> {
    check_a(a)?;
    Ok(BlockFreeEnergy::exact(BlockKind::AA, a, block_entropy_diag(a) / a, None))
}

pub fn psi_bb(r: f64, a: f64) -> Result<BlockFreeEnergy> {
    check_a(a)?;
    Ok(BlockFreeEnergy::exact(BlockKind::BB, a, block_entropy_diag(a) / a - 0.5 * r, None))
}

/// `K(a − c, 1 − b) − δ (a − c) r/2`, the part of the objective spent
/// crossing the block.
fn crossing_total(a: f64, b: f64, c: f64, penalty: f64) -> f64 {
    let rest = (a - c).max(2.0 - b);
    block_entropy(rest, 1.0 - b).unwrap_or(f64::NEG_INFINITY) - penalty * rest
}

fn hat_objective(r: f64, a: f64, b: f64, c: f64) -> f64 {
    interface_entropy(c.max(b), b).unwrap_or(0.0) + crossing_total(a, b, c, 0.5 * r)
}

fn best_c(r: f64, a: f64, b: f64) -> Argmax {
    golden_max(|c| hat_objective(r, a, b, c), b, a - 2.0 + b, TOL)
}

/// `ψ_BA^κ̂(r; a)` with its maximizer `(b̄, c̄)`.
pub fn psi_ba_hat(r: f64, a: f64) -> Result<BlockFreeEnergy> {
    check_a(a)?;
    let outer = golden_max(|b| best_c(r, a, b).value, 0.0, 1.0, TOL);
    let inner = best_c(r, a, outer.x);
    let corner = block_entropy_diag(a) - 0.5 * r * a;
    let (value, pair) = if corner >= inner.value || outer.x < NO_EXCURSION {
        (corner.max(inner.value), ExcursionPair::NONE)
    } else {
        (inner.value, ExcursionPair { b: outer.x, c: inner.x })
    };
    Ok(BlockFreeEnergy::exact(BlockKind::BAHat, a, value / a, Some(pair)))
}

/// `ψ_BA^κ̂(r; a)` by coordinate-wise golden passes from `start`; used to
/// check that the maximizer does not depend on where the search begins.
pub fn psi_ba_hat_from(r: f64, a: f64, start: ExcursionPair) -> Result<BlockFreeEnergy> {
    check_a(a)?;
    if !start.in_domain(a) {
        return domain(format!("start ({}, {}) is outside DOM({a})", start.b, start.c));
    }
    let (mut b, mut c) = (start.b, start.c);
    let mut value = hat_objective(r, a, b, c);
    for _ in 0..20_000 {
        let nc = golden_max(|c| hat_objective(r, a, b, c), b, a - 2.0 + b, TOL);
        c = nc.x;
        let nb = golden_max(|b| hat_objective(r, a, b, c), (c - a + 2.0).max(0.0), c.min(1.0), TOL);
        b = nb.x;
        let improved = nb.value - value;
        value = nb.value;
        if improved <= 1e-15 * value.abs().max(1.0) {
            break;
        }
    }
    // Joint refinement on a small box around the coordinate optimum.
    let (blo, bhi) = ((b - 1e-3).max(0.0), (b + 1e-3).min(1.0));
    let refined = golden_max(
        |bb| golden_max(|cc| hat_objective(r, a, bb, cc), bb.max(c - 1e-3), (a - 2.0 + bb).min(c + 1e-3), TOL).value,
        blo,
        bhi,
        TOL,
    );
    let rc = golden_max(|cc| hat_objective(r, a, refined.x, cc), refined.x.max(c - 1e-3), (a - 2.0 + refined.x).min(c + 1e-3), TOL);
    if rc.value > value {
        b = refined.x;
        c = rc.x;
        value = rc.value;
    }
    let pair = if b < NO_EXCURSION { ExcursionPair::NONE } else { ExcursionPair { b, c } };
    Ok(BlockFreeEnergy::exact(BlockKind::BAHat, a, value / a, Some(pair)))
}

/// `d/da [a·ψ_BA^κ̂(r; a)]` by the envelope theorem.
pub fn psi_ba_hat_total_slope(r: f64, a: f64) -> Result<f64> {
    let psi = psi_ba_hat(r, a)?;
    let pair = psi.maximizer.unwrap_or(ExcursionPair::NONE);
    crossing_slope(a, pair, 0.5 * r)
}

fn crossing_slope(a: f64, pair: ExcursionPair, penalty: f64) -> Result<f64> {
    let s = block_entropy_run(a - pair.c, 1.0 - pair.b)?;
    Ok(0.5 * (s.d_u() + s.d_d()) - penalty)
}

/// Slopes used for suprema over `μ`: the accessor's grid, continued
/// geometrically up to `SLOPE_CAP`.
pub fn slope_grid(phi: &dyn InterfaceFreeEnergy) -> Vec<f64> {
    let mut grid = phi.mu_grid().to_vec();
    let last = *grid.last().unwrap_or(&1.0);
    grid.extend(geometric_grid(last, SLOPE_CAP, 1.25).into_iter().skip(1));
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrossKind {
    AB,
    BA,
}

impl CrossKind {
    fn penalty(self, point: InteractionPoint) -> f64 {
        match self {
            CrossKind::AB => 0.0,
            CrossKind::BA => 0.5 * point.r(),
        }
    }

    fn block_kind(self) -> BlockKind {
        match self {
            CrossKind::AB => BlockKind::AB,
            CrossKind::BA => BlockKind::BA,
        }
    }
}

/// Best excursion of width `b` at slope `μ`: `b·Φ(μ) + K(a − μb, 1 − b) − δ (a − μb) r/2`.
fn best_width(phi_total: f64, mu: f64, a: f64, penalty: f64) -> Argmax {
    let b_max = if mu > 1.0 { ((a - 2.0) / (mu - 1.0)).min(1.0) } else { 1.0 };
    golden_max(|b| b * phi_total + crossing_total(a, b, mu * b, penalty), 0.0, b_max, TOL)
}

/// `ψ_AB` or `ψ_BA` at `point`, with `φ^I` supplied by `phi`.
pub fn psi_cross(kind: CrossKind, point: InteractionPoint, a: f64, phi: &dyn InterfaceFreeEnergy) -> Result<BlockFreeEnergy> {
    check_a(a)?;
    let penalty = kind.penalty(point);
    let grid = slope_grid(phi);
    let at = |mu: f64| {
        let phi_total = mu * phi.phi(mu).0;
        best_width(phi_total, mu, a, penalty)
    };
    let best = grid_sup(|mu| at(mu).value, &grid, TOL);
    let width = at(best.x);
    let corner = block_entropy_diag(a) - penalty * a;
    if width.x < NO_EXCURSION || corner >= width.value {
        return Ok(BlockFreeEnergy::exact(kind.block_kind(), a, corner.max(width.value) / a, Some(ExcursionPair::NONE)));
    }
    let pair = ExcursionPair { b: width.x, c: best.x * width.x };
    let stderr = pair.c * phi.phi(best.x).1 / a;
    let gain = (width.value - corner) / a;
    Ok(BlockFreeEnergy {
        kind: kind.block_kind(),
        a,
        value: width.value / a,
        maximizer: Some(pair),
        stderr,
        uncertain: gain <= crate::noise::BAND_SIGMAS * stderr,
    })
}

/// `d/da [a·ψ(a)]` at the maximizer of `psi`, by the envelope theorem.
pub fn psi_total_slope(psi: &BlockFreeEnergy, point: InteractionPoint) -> Result<f64> {
    let pair = psi.maximizer.unwrap_or(ExcursionPair::NONE);
    let penalty = match psi.kind {
        BlockKind::AA | BlockKind::AB => 0.0,
        BlockKind::BB | BlockKind::BA | BlockKind::BAHat => 0.5 * point.r(),
    };
    crossing_slope(psi.a, pair, penalty)
}

/// Supremum over `μ ≥ 1` of `φ(μ) + shift − G(μ, a)`, with the slope
/// attaining it.
pub fn excursion_margin(phi: &dyn InterfaceFreeEnergy, shift: f64, a: f64) -> Result<(Margin, f64)> {
    if !(a >= 2.0) {
        return domain(format!("excursion criterion needs a >= 2, got {a}"));
    }
    let grid = slope_grid(phi);
    let f = |mu: f64| phi.phi(mu).0 + shift - entropy_g(mu, a).unwrap_or(f64::INFINITY);
    let best = grid_sup(f, &grid, TOL);
    Ok((Margin::new(best.value, phi.phi(best.x).1), best.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// Does an excursion help an AB crossing: `ψ_AB > ψ_AA`?
    AbVsAa,
    /// Does an excursion help a BA crossing at `φ^I = κ̂`: `ψ_BA^κ̂ > ψ_BB`?
    BaHatVsBb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub margin: Margin,
    pub mu: f64,
}

/// Positive margin means the excursion strictly raises the free energy.
pub fn excursion_criterion(
    point: InteractionPoint,
    a: f64,
    which: Criterion,
    phi: &dyn InterfaceFreeEnergy,
) -> Result<CriterionValue> {
    let (margin, mu) = match which {
        Criterion::AbVsAa => excursion_margin(phi, 0.0, a)?,
        Criterion::BaHatVsBb => excursion_margin(&HatKappa::new(phi.mu_grid().to_vec()), 0.5 * point.r(), a)?,
    };
    Ok(CriterionValue { margin, mu })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTest {
    /// `φ^I(μ̄) − κ̂(μ̄)` at `μ̄ = c̄/b̄`; absent without an excursion.
    pub margin: Option<Margin>,
    pub slope: Option<f64>,
    pub excursion: ExcursionPair,
    pub sign: Sign,
}

impl LocalizationTest {
    pub fn localized(&self) -> bool {
        self.sign == Sign::Positive
    }
}

/// Is `ψ_BA(a) > ψ_BA^κ̂(a)`? Decided by comparing `φ^I` with `κ̂` at the
/// slope of the `ψ_BA^κ̂` maximizer. Without an excursion there is no
/// interface time, and the answer is no.
pub fn localization_test(point: InteractionPoint, a: f64, phi: &dyn InterfaceFreeEnergy) -> Result<LocalizationTest> {
    let hat = psi_ba_hat(point.r(), a)?;
    let pair = hat.maximizer.unwrap_or(ExcursionPair::NONE);
    let Some(mu) = pair.slope() else {
        return Ok(LocalizationTest { margin: None, slope: None, excursion: pair, sign: Sign::NonPositive });
    };
    let (value, stderr) = phi.excess(mu);
    let margin = Margin::new(value, stderr);
    Ok(LocalizationTest { margin: Some(margin), slope: Some(mu), excursion: pair, sign: margin.sign() })
}
