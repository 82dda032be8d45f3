//! Exact finite-size free energy of the emulsion model.
//!
//! A path is a chain of block crossings, each running from a block corner to
//! the diagonally opposite corner while staying inside the crossed block and
//! its neighbour. Conditional on the coarse trajectory and on the step count
//! at which each crossing starts, the weight factorizes over crossings, so
//! `Z` is computed by an outer DP over (crossings made, row, steps used, last
//! step) fed by per-window crossing partition functions.
//!
//! Conventions fixed here:
//! - Within a crossing, horizontal steps on the line between the two blocks
//!   belong to the crossed block; a step counts as crossed-block when it lies
//!   on the crossed side of that line. This keeps up and down crossings
//!   mirror images of each other.
//! - A crossing ends at its first visit to the target corner, and at most
//!   `a_max · L` steps are spent in one crossing.
//! - The path ends at a corner after exactly `n` steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::frequencies::{sample_field_stream, BlockField, PairType};
use crate::interface::{water_log_weight, InteractionPoint, Monomer, MonomerSequence};
use crate::numerics::mean_stderr;

/// Default cap on steps per crossing, in units of `L`.
pub const DEFAULT_A_MAX: usize = 8;

/// Largest estimated operation count accepted by [`finite_log_partition`].
pub const MAX_WORK: f64 = 4e10;

#[derive(Debug, Clone)]
pub struct FiniteInstance {
    pub n: usize,
    pub l: usize,
    pub a_max: usize,
    pub omega: MonomerSequence,
    pub field: BlockField,
    pub point: InteractionPoint,
}

impl FiniteInstance {
    /// Instance with `ω` and `Ω` drawn from `seed` (separate streams).
    pub fn sample(n: usize, l: usize, p: f64, point: InteractionPoint, seed: u64) -> Result<Self> {
        let omega = MonomerSequence::sample(n, seed, 1);
        let field = sample_field_stream(p, field_size(n, l), seed, 2)?;
        let inst = FiniteInstance { n, l, a_max: DEFAULT_A_MAX, omega, field, point };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 {
            return domain("block size must be positive");
        }
        if self.n < 2 * self.l || !self.n.is_multiple_of(2) {
            return domain(format!("n = {} must be even and at least 2L = {}", self.n, 2 * self.l));
        }
        if self.a_max < 2 {
            return domain("a_max must be at least 2");
        }
        if self.omega.len() != self.n {
            return domain(format!("monomer sequence has {} symbols, expected {}", self.omega.len(), self.n));
        }
        let need = field_size(self.n, self.l);
        if self.field.size() < need {
            return domain(format!("field of side {} is too small; {need} needed", self.field.size()));
        }
        Ok(())
    }

    /// Largest number of crossings a path can make.
    pub fn max_crossings(&self) -> usize {
        self.n / (2 * self.l)
    }

    fn cap(&self) -> usize {
        self.a_max * self.l
    }

    /// Rough operation count of the nested DP.
    pub fn work_estimate(&self) -> f64 {
        let (n, l, cap) = (self.n as f64, self.l as f64, self.cap() as f64);
        let inner = n / 2.0 * 2.0 * cap * (l + 1.0) * 2.0 * l * 9.0;
        let m = self.max_crossings() as f64;
        let outer = n / 2.0 * (cap / 2.0) * m * (2.0 * m + 1.0) * 12.0;
        inner + outer
    }
}

/// Field side that keeps every reachable block distinct on the torus.
pub fn field_size(n: usize, l: usize) -> usize {
    2 * (n / (2 * l).max(1)) + 2
}

const R: usize = 0;
const U: usize = 1;
const D: usize = 2;

/// How the step before a crossing relates to its direction.
const IN_FREE: usize = 0;
const IN_FORWARD: usize = 1;
const IN_BACKWARD: usize = 2;

/// Per-window crossing partition functions for one pair type, in the
/// crossing's own frame (forward = up). `value[in][s/2][out]` is linear and
/// scaled by `exp(scale)`; `out` is 0 for a final right step, 1 for a final
/// forward step.
#[derive(Debug, Clone)]
struct CrossingTable {
    scale: f64,
    value: Vec<[[f64; 2]; 3]>,
}

/// Relative-frame DP over one crossing. `weight(i, crossed_side)` is the
/// log-weight of step `i` of the crossing; returns log partition functions
/// `[in][s/2][out]` for `s ≤ s_max`, `-inf` where no path exists.
fn crossing_logs<F: Fn(usize, bool) -> f64>(l: usize, s_max: usize, weight: F) -> Vec<[[f64; 2]; 3]> {
    let li = l as i64;
    let ny = 2 * l;
    let nx = l + 1;
    // y runs over (−L, L]; index y + L − 1.
    let yi = |y: i64| (y + li - 1) as usize;
    let idx = |x: usize, y: usize, last: usize| (x * ny + y) * 3 + last;
    let size = nx * ny * 3;
    let mut out = vec![[[f64::NEG_INFINITY; 2]; 3]; s_max / 2 + 1];
    for (inc, first_last) in [(IN_FREE, R), (IN_FORWARD, U), (IN_BACKWARD, D)] {
        let mut cur = vec![0.0f64; size];
        let mut next = vec![0.0f64; size];
        cur[idx(0, yi(0), first_last)] = 1.0;
        let mut log_scale = 0.0f64;
        for s in 1..=s_max {
            next.iter_mut().for_each(|v| *v = 0.0);
            let w_cross = weight(s - 1, true).exp();
            let w_nb = weight(s - 1, false).exp();
            for x in 0..nx {
                for y in (1 - li)..=li {
                    for last in 0..3 {
                        let v = cur[idx(x, yi(y), last)];
                        if v == 0.0 {
                            continue;
                        }
                        if x < l {
                            let w = if y >= 0 { w_cross } else { w_nb };
                            next[idx(x + 1, yi(y), R)] += v * w;
                        }
                        if last != D && y < li {
                            let w = if y >= 0 { w_cross } else { w_nb };
                            next[idx(x, yi(y + 1), U)] += v * w;
                        }
                        if last != U && y - 1 > -li {
                            let w = if y > 0 { w_cross } else { w_nb };
                            next[idx(x, yi(y - 1), D)] += v * w;
                        }
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            // The crossing ends at the first visit to the target corner.
            let end_r = std::mem::take(&mut cur[idx(l, yi(li), R)]);
            let end_u = std::mem::take(&mut cur[idx(l, yi(li), U)]);
            if s % 2 == 0 && s >= 2 * l {
                out[s / 2][inc] = [log_of(end_r) + log_scale, log_of(end_u) + log_scale];
            }
            let max = cur.iter().copied().fold(0.0f64, f64::max);
            if max == 0.0 {
                break;
            }
            cur.iter_mut().for_each(|v| *v /= max);
            log_scale += max.ln();
        }
    }
    out
}

fn log_of(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn to_table(logs: Vec<[[f64; 2]; 3]>) -> CrossingTable {
    let scale = logs
        .iter()
        .flat_map(|a| a.iter().flat_map(|b| b.iter()))
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let value = logs
        .iter()
        .map(|a| a.map(|b| b.map(|v| if scale.is_finite() { (v - scale).exp() } else { 0.0 })))
        .collect();
    CrossingTable { scale, value }
}

fn block_weight(block: Monomer, m: Monomer, point: InteractionPoint) -> f64 {
    match block {
        Monomer::A => 0.0,
        Monomer::B => water_log_weight(m, point),
    }
}

fn pair_blocks(pair: PairType) -> (Monomer, Monomer) {
    match pair {
        PairType::AA => (Monomer::A, Monomer::A),
        PairType::AB => (Monomer::A, Monomer::B),
        PairType::BA => (Monomer::B, Monomer::A),
        PairType::BB => (Monomer::B, Monomer::B),
    }
}

/// Crossing tables for every even window start and pair type.
fn crossing_tables(inst: &FiniteInstance) -> Vec<[CrossingTable; 4]> {
    let (n, l, cap) = (inst.n, inst.l, inst.cap());
    let counts = crossing_logs(l, cap.min(n), |_, _| 0.0);
    let omega = &inst.omega.symbols;
    let point = inst.point;
    (0..n / 2)
        .into_par_iter()
        .map(|half| {
            let t = 2 * half;
            let s_max = cap.min(n - t);
            let aa = to_table(counts[..=s_max / 2].to_vec());
            // All steps of a BB crossing are in water: weight = count × window product.
            let mut prefix = vec![0.0f64; s_max + 1];
            for i in 0..s_max {
                prefix[i + 1] = prefix[i] + water_log_weight(omega[t + i], point);
            }
            let bb = to_table(
                counts[..=s_max / 2]
                    .iter()
                    .enumerate()
                    .map(|(h, a)| a.map(|b| b.map(|v| v + prefix[2 * h])))
                    .collect(),
            );
            let mixed = |pair: PairType| {
                let (crossed, nb) = pair_blocks(pair);
                to_table(crossing_logs(l, s_max, |i, side| {
                    block_weight(if side { crossed } else { nb }, omega[t + i], point)
                }))
            };
            [aa, mixed(PairType::AB), mixed(PairType::BA), bb]
        })
        .collect()
}

/// `(1/n) log Z` of the instance, exact up to rounding.
pub fn finite_log_partition(inst: &FiniteInstance) -> Result<f64> {
    inst.validate()?;
    let work = inst.work_estimate();
    if work > MAX_WORK {
        return Err(Error::Resource(format!(
            "n={}, L={} needs about {work:.1e} operations (limit {MAX_WORK:.0e}); reduce n or L",
            inst.n, inst.l
        )));
    }
    let tables = crossing_tables(inst);
    let (n, l, cap) = (inst.n, inst.l, inst.cap());
    let mm = inst.max_crossings();
    let rows = 2 * mm + 1;
    let slice_len = (mm + 1) * rows * 3;
    let at = |m: usize, j: i64, last: usize| (m * rows + (j + mm as i64) as usize) * 3 + last;
    let ring = cap / 2 + 1;
    let mut slices = vec![vec![0.0f64; slice_len]; ring];
    let mut scales = vec![f64::NEG_INFINITY; ring];
    slices[0][at(0, 0, R)] = 1.0;
    scales[0] = 0.0;
    for k in (2..=n).step_by(2) {
        let slot = (k / 2) % ring;
        let sources: Vec<usize> = (2 * l..=cap.min(k)).step_by(2).map(|s| k - s).collect();
        let mut scale = f64::NEG_INFINITY;
        for &src in &sources {
            let s_scale = scales[(src / 2) % ring];
            if s_scale.is_finite() {
                for table in &tables[src / 2] {
                    scale = scale.max(s_scale + table.scale);
                }
            }
        }
        let mut target = vec![0.0f64; slice_len];
        if scale.is_finite() {
            for &src in &sources {
                let s_slot = (src / 2) % ring;
                let s_scale = scales[s_slot];
                if !s_scale.is_finite() {
                    continue;
                }
                let half = (k - src) / 2;
                let factor: [f64; 4] = std::array::from_fn(|p| (s_scale + tables[src / 2][p].scale - scale).exp());
                let source = &slices[s_slot];
                let m_lo = src.div_ceil(cap);
                let m_hi = (src / (2 * l)).min(mm - 1);
                for m in m_lo..=m_hi {
                    let mi = m as i64;
                    for j in -mi..=mi {
                        for last in 0..3 {
                            let v = source[at(m, j, last)];
                            if v == 0.0 {
                                continue;
                            }
                            for up in [true, false] {
                                let pair = inst.field.pair(mi, j, up).index();
                                let fwd = if up { U } else { D };
                                let inc = if last == R {
                                    IN_FREE
                                } else if last == fwd {
                                    IN_FORWARD
                                } else {
                                    IN_BACKWARD
                                };
                                let z = &tables[src / 2][pair].value[half][inc];
                                let w = v * factor[pair];
                                let j2 = if up { j + 1 } else { j - 1 };
                                target[at(m + 1, j2, R)] += w * z[0];
                                target[at(m + 1, j2, fwd)] += w * z[1];
                            }
                        }
                    }
                }
            }
        }
        let max = target.iter().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            target.iter_mut().for_each(|v| *v /= max);
            scales[slot] = scale + max.ln();
        } else {
            scales[slot] = f64::NEG_INFINITY;
        }
        slices[slot] = target;
    }
    let slot = (n / 2) % ring;
    let total: f64 = slices[slot].iter().sum();
    if !(total > 0.0) || !scales[slot].is_finite() {
        return domain(format!("no admissible path of {n} steps for L={l}"));
    }
    Ok((scales[slot] + total.ln()) / n as f64)
}

/// One rung of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub n: usize,
    pub l: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub spread: f64,
    pub stderr: f64,
}

/// The ladder `L = √(n/8)` rounded, for the given lengths.
pub fn sqrt_ladder(ns: &[usize]) -> Vec<(usize, usize)> {
    ns.iter().map(|&n| (n, ((n as f64 / 8.0).sqrt().round() as usize).max(1))).collect()
}

/// `(1/n) log Z` over `seeds` for each `(n, L)` on the ladder.
pub fn convergence_study(point: InteractionPoint, p: f64, ladder: &[(usize, usize)], seeds: &[u64]) -> Result<Vec<Rung>> {
    if ladder.is_empty() || seeds.is_empty() {
        return domain("convergence study needs a ladder and at least one seed");
    }
    ladder
        .iter()
        .map(|&(n, l)| {
            let values = seeds
                .iter()
                .map(|&seed| finite_log_partition(&FiniteInstance::sample(n, l, p, point, seed)?))
                .collect::<Result<Vec<_>>>()?;
            let (mean, stderr) = mean_stderr(&values);
            let spread = stderr * (values.len() as f64).sqrt();
            Ok(Rung { n, l, values, mean, spread, stderr })
        })
        .collect()
}

/// Limit of the rung means under `mean ≈ f + c·log(L)/L`, fitted by least
/// squares; `None` with fewer than two distinct block sizes.
pub fn extrapolate_rungs(rungs: &[Rung]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rungs.iter().map(|r| ((r.l as f64).ln() / r.l as f64, r.mean)).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx <= 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Some(my - slope * mx)
}
