//! Variational formulas for the emulsion free energy.
//!
//! Each formula is a ratio `Σ ρ_k a_k ψ_k(a_k) / Σ ρ_k a_k` maximized over
//! aspect ratios `a_k ∈ [2, A_MAX]`, solved by Dinkelbach iteration: for a
//! trial value `f`, every component maximizes `a·ψ_k(a) − f·a` on its own,
//! and `f` is replaced by the ratio at those maximizers.
//!
//! For components with an interface excursion the inner problem splits as
//!
//! ```text
//! max_a [a ψ(a) − f a] = max_b { b·Φ*(f) + max_s [K(s, 1−b) − (δ r/2 + f) s] }
//! ```
//!
//! with `Φ*(f) = sup_μ [μ φ(μ) − f μ]`, crossing length `s = a − c` and
//! `c = μ̄ b`.

use serde::{Deserialize, Serialize};

use crate::blocks::{slope_grid, ExcursionPair, NO_EXCURSION};
use crate::entropy::{
    block_diag_inverse_slope, block_entropy, block_entropy_diag, block_entropy_diag_slope, block_entropy_run,
};
use crate::error::{domain, Error, Result};
use crate::frequencies::{lexicographic_counts, max_weighted_path, BlockField, FieldConfig, FrequencyTriple, PairType};
use crate::interface::{HatKappa, InteractionPoint, InterfaceFreeEnergy};
use crate::numerics::{golden_max, grid_sup, mean_stderr};

/// Largest aspect ratio searched.
pub const A_MAX: f64 = 256.0;

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolutionKind {
    D1,
    D2,
    L1,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSolution {
    pub label: SolutionKind,
    pub value: f64,
    /// Aspect ratio of A-block crossings.
    pub x: f64,
    /// Aspect ratio of B-block crossings next to A blocks.
    pub y: f64,
    /// Aspect ratio of B-block crossings next to B blocks.
    pub z: Option<f64>,
    /// Aspect ratio of A-block crossings next to B blocks, when distinct from `x`.
    pub w: Option<f64>,
    /// Excursion of the BA crossing.
    pub excursion: Option<ExcursionPair>,
    /// Excursion of the AB crossing.
    pub ab_excursion: Option<ExcursionPair>,
    pub stderr: f64,
    pub frequencies: FrequencyTriple,
    /// Successive Dinkelbach values.
    pub trace: Vec<f64>,
    /// Distinct values of `y` found by restarts (more than one flags multiplicity).
    pub y_clusters: Vec<f64>,
}

/// Best response of one component to a trial value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    /// Aspect ratio `a`.
    pub a: f64,
    /// `a·ψ(a)`.
    pub total: f64,
    pub excursion: ExcursionPair,
    /// Standard error of `total`.
    pub stderr: f64,
}

/// Best diagonal crossing when each step is charged `s`: maximizes
/// `K(a, 1) − s a`; the maximizer solves `½ log(a/(a−2)) = s`.
pub fn diag_response(s: f64, penalty: f64) -> Response {
    let a = if s > 0.0 { block_diag_inverse_slope(s).min(A_MAX) } else { A_MAX };
    Response { a, total: block_entropy_diag(a) - penalty * a, excursion: ExcursionPair::NONE, stderr: 0.0 }
}

/// `sup_μ [μ φ(μ) − f μ]` with its maximizers (all local maxima within
/// `1e-10` of the best).
pub fn conjugate(phi: &dyn InterfaceFreeEnergy, f: f64) -> (f64, Vec<f64>) {
    let grid = slope_grid(phi);
    let g = |mu: f64| mu * phi.phi(mu).0 - f * mu;
    let values: Vec<f64> = grid.iter().map(|&m| g(m)).collect();
    let mut peaks = Vec::new();
    for i in 0..grid.len() {
        let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < grid.len() { values[i + 1] } else { f64::NEG_INFINITY };
        if values[i] >= left && values[i] >= right {
            let lo = grid[i.saturating_sub(1)];
            let hi = grid[(i + 1).min(grid.len() - 1)];
            let r = golden_max(g, lo, hi, TOL);
            peaks.push(if r.value >= values[i] { (r.x, r.value) } else { (grid[i], values[i]) });
        }
    }
    let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut at: Vec<f64> = peaks.iter().filter(|p| p.1 >= best - 1e-10).map(|p| p.0).collect();
    if at.is_empty() {
        let r = grid_sup(g, &grid, TOL);
        return (r.value, vec![r.x]);
    }
    at.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    (best, at)
}

fn crossing(b: f64, t: f64) -> (f64, f64) {
    let lo = 2.0 - b;
    let r = golden_max(|s| block_entropy(s, 1.0 - b).unwrap_or(f64::NEG_INFINITY) - t * s, lo, A_MAX, TOL);
    (r.x, r.value)
}

/// Best excursion crossing for conjugate value `phi_star` at slope `mu`,
/// step charge `penalty` inside the block and trial value `f`.
pub fn excursion_response(phi_star: f64, mu: f64, penalty: f64, f: f64, mu_stderr: f64) -> Response {
    let t = penalty + f;
    let outer = golden_max(|b| b * phi_star + crossing(b, t).1, 0.0, 1.0, TOL);
    let corner = crossing(0.0, t);
    let (b, (s, inner)) = if outer.x < NO_EXCURSION || corner.1 >= outer.value {
        (0.0, corner)
    } else {
        (outer.x, crossing(outer.x, t))
    };
    let c = mu * b;
    let a = s + c;
    // a ψ(a) = bΦ(μ) + K(s, 1−b) − penalty·s with bΦ(μ) = bΦ* + f c, and
    // the inner value is K(s, 1−b) − (penalty + f) s.
    Response {
        a,
        total: b * phi_star + f * c + inner + f * s,
        excursion: if b > 0.0 { ExcursionPair { b, c } } else { ExcursionPair::NONE },
        stderr: c * mu_stderr,
    }
}

/// A component of a variational formula.
#[derive(Clone, Copy)]
pub enum Component<'a> {
    /// Diagonal crossing charged `penalty` per step (AA: 0, BB: r/2).
    Diagonal { penalty: f64 },
    /// Crossing with an excursion along an interface described by `phi`.
    Excursion { penalty: f64, phi: &'a dyn InterfaceFreeEnergy },
}

impl Component<'_> {
    /// All best responses to `f` (several only when the excursion slope is
    /// not unique).
    pub fn responses(&self, f: f64) -> Vec<Response> {
        match *self {
            Component::Diagonal { penalty } => vec![diag_response(f + penalty, penalty)],
            Component::Excursion { penalty, phi } => {
                let (star, mus) = conjugate(phi, f);
                mus.iter().map(|&mu| excursion_response(star, mu, penalty, f, phi.phi(mu).1)).collect()
            }
        }
    }

    pub fn respond(&self, f: f64) -> Response {
        self.responses(f).into_iter().next().expect("at least one response")
    }
}

fn start_value(parts: &[(f64, Component)]) -> f64 {
    let a = 2.5;
    let (mut num, mut den) = (0.0, 0.0);
    for (rho, c) in parts {
        let pen = match c {
            Component::Diagonal { penalty } | Component::Excursion { penalty, .. } => *penalty,
        };
        num += rho * (block_entropy_diag(a) - pen * a);
        den += rho * a;
    }
    num / den
}

fn check_pinned(name: &str, a: f64) -> Result<()> {
    if a >= A_MAX * (1.0 - 1e-9) {
        return Err(Error::Convergence(format!("maximizer {name} pinned at A_MAX = {A_MAX}")));
    }
    Ok(())
}

struct Dinkelbach {
    value: f64,
    responses: Vec<Response>,
    trace: Vec<f64>,
}

fn dinkelbach(parts: &[(f64, Component)]) -> Result<Dinkelbach> {
    let mut f = start_value(parts);
    let mut trace = vec![f];
    for _ in 0..MAX_ITER {
        let responses: Vec<Response> = parts.iter().map(|(_, c)| c.respond(f)).collect();
        let num: f64 = parts.iter().zip(&responses).map(|((rho, _), r)| rho * r.total).sum();
        let den: f64 = parts.iter().zip(&responses).map(|((rho, _), r)| rho * r.a).sum();
        let next = num / den;
        trace.push(next);
        if (next - f).abs() <= 1e-14 * next.abs().max(1.0) {
            let responses = parts.iter().map(|(_, c)| c.respond(next)).collect();
            return Ok(Dinkelbach { value: next, responses, trace });
        }
        f = next;
    }
    Err(Error::Convergence(format!("Dinkelbach did not converge in {MAX_ITER} iterations (last {f})")))
}

fn check_rho(rho: &FrequencyTriple) -> Result<()> {
    if !(rho.rho_star > 0.0 && rho.rho_star <= 1.0) {
        return domain(format!("rho* must lie in (0, 1], got {}", rho.rho_star));
    }
    Ok(())
}

/// `f_D1(r)`: A blocks and B blocks crossed diagonally.
pub fn solve_f_d1(r: f64, rho: &FrequencyTriple) -> Result<PhaseSolution> {
    if !(r >= 0.0) {
        return domain(format!("coupling r must be >= 0, got {r}"));
    }
    check_rho(rho)?;
    let parts = [
        (rho.rho_star, Component::Diagonal { penalty: 0.0 }),
        (1.0 - rho.rho_star, Component::Diagonal { penalty: 0.5 * r }),
    ];
    let d = dinkelbach(&parts)?;
    let (x, y) = (d.responses[0].a, d.responses[1].a);
    check_pinned("x", x)?;
    if rho.rho_star < 1.0 {
        check_pinned("y", y)?;
    }
    let residual = xysol_residuals(r, rho.rho_star, x, y);
    if residual.0.abs().max(residual.1.abs()) > 1e-8 {
        return Err(Error::Convergence(format!("f_D1 stationarity residuals {residual:?}")));
    }
    Ok(PhaseSolution {
        label: SolutionKind::D1,
        value: d.value,
        x,
        y,
        z: None,
        w: None,
        excursion: None,
        ab_excursion: None,
        stderr: 0.0,
        frequencies: *rho,
        trace: d.trace,
        y_clusters: vec![y],
    })
}

/// Residuals of the two stationarity equations of `f_D1`:
/// `log 2 + ρ log(x−2) + (1−ρ) log(y−2)` and `r + log[x(y−2)/(y(x−2))]`.
pub fn xysol_residuals(r: f64, rho: f64, x: f64, y: f64) -> (f64, f64) {
    let first = std::f64::consts::LN_2 + rho * (x - 2.0).ln() + (1.0 - rho) * (y - 2.0).ln();
    let second = r + (x * (y - 2.0) / (y * (x - 2.0))).ln();
    (first, second)
}

fn three_part(
    label: SolutionKind,
    r: f64,
    rho: &FrequencyTriple,
    ba: Component,
) -> Result<PhaseSolution> {
    let parts = [
        (rho.rho_star, Component::Diagonal { penalty: 0.0 }),
        (rho.rho_ba, ba),
        (rho.rho_bb, Component::Diagonal { penalty: 0.5 * r }),
    ];
    let d = dinkelbach(&parts)?;
    let (x, yr, z) = (d.responses[0].a, d.responses[1], d.responses[2].a);
    check_pinned("x", x)?;
    if rho.rho_ba > 0.0 {
        check_pinned("y", yr.a)?;
    }
    if rho.rho_bb > 0.0 {
        check_pinned("z", z)?;
    }
    let den: f64 = parts.iter().zip(&d.responses).map(|((w, _), resp)| w * resp.a).sum();
    let y_clusters = {
        let mut ys: Vec<f64> = ba.responses(d.value).iter().map(|resp| resp.a).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup_by(|a, b| (*a - *b).abs() <= 1e-4);
        ys
    };
    Ok(PhaseSolution {
        label,
        value: d.value,
        x,
        y: yr.a,
        z: Some(z),
        w: None,
        excursion: Some(yr.excursion),
        ab_excursion: None,
        stderr: rho.rho_ba * yr.stderr / den,
        frequencies: *rho,
        trace: d.trace,
        y_clusters,
    })
}

/// `f_D2(r)`: as `f_D1`, with B-block crossings next to A blocks allowed an
/// excursion along a delocalized interface.
pub fn solve_f_d2(r: f64, rho: &FrequencyTriple) -> Result<PhaseSolution> {
    if !(r >= 0.0) {
        return domain(format!("coupling r must be >= 0, got {r}"));
    }
    check_rho(rho)?;
    let hat = HatKappa::default();
    three_part(SolutionKind::D2, r, rho, Component::Excursion { penalty: 0.5 * r, phi: &hat })
}

/// `f_L1(α, β)`: as `f_D2`, with the quenched interface free energy `phi`.
pub fn solve_f_l1(point: InteractionPoint, rho: &FrequencyTriple, phi: &dyn InterfaceFreeEnergy) -> Result<PhaseSolution> {
    check_rho(rho)?;
    let r = point.r();
    three_part(SolutionKind::L1, r, rho, Component::Excursion { penalty: 0.5 * r, phi })
}

/// Sampled fields shared by repeated full solves.
pub struct FieldSet {
    pub fields: Vec<BlockField>,
    pub t: usize,
}

impl FieldSet {
    pub fn sample(p: f64, cfg: &FieldConfig) -> Result<Self> {
        cfg.validate()?;
        let fields = (0..cfg.fields).map(|i| cfg.sample(p, i)).collect::<Result<Vec<_>>>()?;
        Ok(FieldSet { fields, t: cfg.t })
    }

    /// Pooled frequencies of the lexicographically best paths, with
    /// standard errors over fields.
    pub fn frequencies(&self) -> Result<FrequencyTriple> {
        let counts = self.fields.iter().map(|f| lexicographic_counts(f, self.t)).collect::<Result<Vec<_>>>()?;
        let t = self.t as f64;
        let share = |ks: &[usize]| -> Vec<f64> { counts.iter().map(|c| ks.iter().map(|&k| c[k] as f64).sum::<f64>() / t).collect() };
        let (rho_star, se_star) = mean_stderr(&share(&[0, 1]));
        let (rho_ba, se_ba) = mean_stderr(&share(&[2]));
        let (_, se_bb) = mean_stderr(&share(&[3]));
        Ok(FrequencyTriple { rho_star, rho_ba, rho_bb: 1.0 - rho_star - rho_ba, stderr: [se_star, se_ba, se_bb] })
    }
}

/// The full free energy: the supremum over frequencies is replaced by the
/// best coarse paths through sampled fields, pooled over fields.
pub fn solve_f_full(point: InteractionPoint, fields: &FieldSet, phi: &dyn InterfaceFreeEnergy) -> Result<PhaseSolution> {
    let r = point.r();
    let comps: [Component; 4] = [
        Component::Diagonal { penalty: 0.0 },
        Component::Excursion { penalty: 0.0, phi },
        Component::Excursion { penalty: 0.5 * r, phi },
        Component::Diagonal { penalty: 0.5 * r },
    ];
    let parts: Vec<(f64, Component)> = comps.iter().map(|c| (0.25, *c)).collect();
    let mut f = start_value(&parts);
    let mut trace = vec![f];
    for _ in 0..MAX_ITER {
        let resp: Vec<Response> = comps.iter().map(|c| c.respond(f)).collect();
        let w: [f64; 4] = std::array::from_fn(|k| resp[k].total - f * resp[k].a);
        let paths = fields
            .fields
            .iter()
            .map(|field| max_weighted_path(field, w, fields.t))
            .collect::<Result<Vec<_>>>()?;
        let (mut num, mut den) = (0.0, 0.0);
        for path in &paths {
            for k in 0..4 {
                num += path.counts[k] as f64 * resp[k].total;
                den += path.counts[k] as f64 * resp[k].a;
            }
        }
        let next = num / den;
        trace.push(next);
        if (next - f).abs() <= 1e-14 * next.abs().max(1.0) {
            return full_solution(next, &resp, &paths, trace, fields.t);
        }
        f = next;
    }
    Err(Error::Convergence(format!("full Dinkelbach did not converge in {MAX_ITER} iterations")))
}

fn full_solution(
    value: f64,
    resp: &[Response],
    paths: &[crate::frequencies::WeightedPath],
    trace: Vec<f64>,
    t: usize,
) -> Result<PhaseSolution> {
    let mut counts = [0u64; 4];
    let mut per_field = Vec::with_capacity(paths.len());
    for path in paths {
        let (mut n, mut d) = (0.0, 0.0);
        for k in 0..4 {
            counts[k] += path.counts[k];
            n += path.counts[k] as f64 * resp[k].total;
            d += path.counts[k] as f64 * resp[k].a;
        }
        per_field.push(n / d);
    }
    let used = |k: usize| counts[k] > 0;
    for (k, name) in ["x", "w", "y", "z"].iter().enumerate() {
        if used(k) {
            check_pinned(name, resp[k].a)?;
        }
    }
    let total = (paths.len() * t) as f64;
    let den: f64 = (0..4).map(|k| counts[k] as f64 * resp[k].a).sum();
    let phi_se = (counts[PairType::AB.index()] as f64 * resp[1].stderr + counts[PairType::BA.index()] as f64 * resp[2].stderr) / den;
    let field_se = if per_field.len() > 1 { mean_stderr(&per_field).1 } else { 0.0 };
    let rho_star = (counts[0] + counts[1]) as f64 / total;
    let rho_ba = counts[2] as f64 / total;
    Ok(PhaseSolution {
        label: SolutionKind::Full,
        value,
        x: resp[0].a,
        y: resp[2].a,
        z: Some(resp[3].a),
        w: Some(resp[1].a),
        excursion: Some(resp[2].excursion),
        ab_excursion: Some(resp[1].excursion),
        stderr: phi_se.hypot(field_se),
        frequencies: FrequencyTriple { rho_star, rho_ba, rho_bb: 1.0 - rho_star - rho_ba, stderr: [0.0; 3] },
        trace,
        y_clusters: vec![resp[2].a],
    })
}

/// `d/da [a ψ(a)]` for a diagonal crossing.
pub fn diag_total_slope(a: f64, penalty: f64) -> f64 {
    block_entropy_diag_slope(a) - penalty
}

/// `d/ds K(s, 1−b)`, the marginal entropy of a crossing.
pub fn crossing_slope(s: f64, b: f64) -> Result<f64> {
    let run = block_entropy_run(s, 1.0 - b)?;
    Ok(0.5 * (run.d_u() + run.d_d()))
}
