//! Path entropies of the directed three-step walk (right, up, down, with no
//! immediate vertical reversal).
//!
//! A path with `n` right steps decomposes into `n + 1` vertical runs, each of
//! which is empty, all-up or all-down. Counting paths with `u` up and `d` down
//! steps therefore reduces to choosing which runs go up or down and composing
//! `u` and `d` into them. On the linear scale `L` the exponential rate of that
//! count is the maximum over run frequencies `(k, m)` of
//!
//! ```text
//! S = n·H(k/n, m/n, 1 − (k+m)/n) + u·h(k/u) + d·h(m/d)
//! ```
//!
//! and the maximizer solves `k² = r(u − k)`, `m² = r(d − m)`, `r = n − k − m`.
//! [`run_entropy`] solves that one-dimensional equation in `r`.

use num_bigint::BigUint;
use num_traits::Zero;

use crate::error::{domain, Error, Result};
use crate::numerics::{binary_entropy, intercept_weights, xlogx};

/// Maximized run entropy for `n` right steps, `u` up steps and `d` down steps
/// (all on the scale of `L`), together with the optimal run frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunEntropy {
    pub value: f64,
    /// Frequency of empty runs.
    pub r: f64,
    /// Frequency of up runs.
    pub k: f64,
    /// Frequency of down runs.
    pub m: f64,
    pub n: f64,
    pub u: f64,
    pub d: f64,
}

impl RunEntropy {
    /// `∂S/∂n`.
    pub fn d_n(&self) -> f64 {
        (self.n / self.r).ln()
    }

    /// `∂S/∂u`.
    pub fn d_u(&self) -> f64 {
        ratio_log(self.u, self.k)
    }

    /// `∂S/∂d`.
    pub fn d_d(&self) -> f64 {
        ratio_log(self.d, self.m)
    }
}

fn ratio_log(total: f64, used: f64) -> f64 {
    if total <= 0.0 {
        return f64::INFINITY;
    }
    -(-used / total).ln_1p()
}

fn runs_for(r: f64, total: f64) -> f64 {
    if total <= 0.0 || r <= 0.0 {
        return 0.0;
    }
    2.0 * r * total / (r + (r * r + 4.0 * r * total).sqrt())
}

pub fn run_entropy(n: f64, u: f64, d: f64) -> RunEntropy {
    let mut out = RunEntropy { value: 0.0, r: n, k: 0.0, m: 0.0, n, u, d };
    if n <= 0.0 {
        out.r = 0.0;
        return out;
    }
    // g(r) = r + k(r) + m(r) − n is increasing, g(0) < 0 <= g(n): safeguarded Newton.
    let (mut lo, mut hi) = (0.0_f64, n);
    let mut r = 0.5 * n;
    for _ in 0..200 {
        let k = runs_for(r, u);
        let m = runs_for(r, d);
        let gr = r + k + m - n;
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let dk = if u > 0.0 { (u - k) / (2.0 * k + r) } else { 0.0 };
        let dm = if d > 0.0 { (d - m) / (2.0 * m + r) } else { 0.0 };
        let mut next = r - gr / (1.0 + dk + dm);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 1e-16 * n.max(1e-300) || hi - lo <= 1e-17 * n {
            r = next;
            break;
        }
        r = next;
    }
    let k = runs_for(r, u);
    let m = runs_for(r, d);
    let r = (n - k - m).max(0.0);
    let multinomial = xlogx(n) - xlogx(k) - xlogx(m) - xlogx(r);
    let up = if u > 0.0 { u * binary_entropy(k / u) } else { 0.0 };
    let down = if d > 0.0 { d * binary_entropy(m / d) } else { 0.0 };
    out.value = multinomial + up + down;
    out.r = r;
    out.k = k;
    out.m = m;
    out
}

fn check_dom(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) || b < 0.0 || a < 1.0 + b - 1e-12 {
        return domain(format!("(a, b) = ({a}, {b}) is outside {{a >= 1 + b, b >= 0}}"));
    }
    Ok(())
}

/// Entropy of block crossings on the scale of `L`: `a·κ(a, b)`.
pub fn block_entropy_run(a: f64, b: f64) -> Result<RunEntropy> {
    check_dom(a, b)?;
    let v = (a - b).max(1.0);
    Ok(run_entropy(b, 0.5 * (v + 1.0), 0.5 * (v - 1.0)))
}

/// `a·κ(a, b)`.
pub fn block_entropy(a: f64, b: f64) -> Result<f64> {
    Ok(block_entropy_run(a, b)?.value)
}

/// Per-step entropy `κ(a, b)` of paths in `W_{aL,bL}` (large-deviation
/// rate; confinement does not change it).
pub fn kappa_block(a: f64, b: f64) -> Result<f64> {
    check_dom(a, b)?;
    Ok(block_entropy(a, b)? / a)
}

/// Partial derivatives of `(a, b) ↦ a·κ(a, b)`, from the run-frequency
/// maximizer (envelope theorem).
pub fn block_entropy_gradient(a: f64, b: f64) -> Result<(f64, f64)> {
    let s = block_entropy_run(a, b)?;
    let du = s.d_u();
    let dd = s.d_d();
    Ok((0.5 * (du + dd), s.d_n() - 0.5 * (du + dd)))
}

/// Closed form of `κ(a, 1)`.
pub fn kappa_diag(a: f64) -> Result<f64> {
    if !(a >= 2.0) || !a.is_finite() {
        return domain(format!("kappa_diag needs a >= 2, got {a}"));
    }
    Ok(block_entropy_diag(a) / a)
}

/// `a·κ(a, 1) = log 2 + ½[a log a − (a−2) log(a−2)]`, valid for `a ≥ 2`.
pub(crate) fn block_entropy_diag(a: f64) -> f64 {
    std::f64::consts::LN_2 + 0.5 * (xlogx(a) - xlogx(a - 2.0))
}

/// `(∂₁κ(a, 1), ∂₂κ(a, 1))`.
pub fn kappa_diag_derivatives(a: f64) -> Result<(f64, f64)> {
    if !(a > 2.0) || !a.is_finite() {
        return domain(format!("kappa_diag_derivatives needs a > 2, got {a}"));
    }
    let a2 = a * a;
    let d1 = -std::f64::consts::LN_2 / a2 - (a - 2.0).ln() / a2;
    let d2 = (4.0 * (a - 2.0) * (a - 1.0).powi(2) / a).ln() / (2.0 * a);
    Ok((d1, d2))
}

/// `∂/∂a [a·κ(a, 1)] = ½ log(a/(a−2))`.
pub(crate) fn block_entropy_diag_slope(a: f64) -> f64 {
    0.5 * (a / (a - 2.0)).ln()
}

/// The aspect ratio at which `∂/∂a[a·κ(a,1)] = s`, for `s > 0`.
pub(crate) fn block_diag_inverse_slope(s: f64) -> f64 {
    2.0 / -(-2.0 * s).exp_m1()
}

/// Entropy of interface paths on the scale of `L`: `c·κ̂(c/b)` for `c` steps
/// and `b` right steps (`c ≥ b ≥ 0`). Continuous at `b = 0` with value 0.
pub fn interface_entropy_run(c: f64, b: f64) -> Result<RunEntropy> {
    if !(b >= 0.0) || !(c >= b - 1e-12) || !c.is_finite() {
        return domain(format!("interface entropy needs c >= b >= 0, got c={c}, b={b}"));
    }
    let half = 0.5 * (c - b).max(0.0);
    Ok(run_entropy(b, half, half))
}

pub fn interface_entropy(c: f64, b: f64) -> Result<f64> {
    Ok(interface_entropy_run(c, b)?.value)
}

/// Per-step entropy `κ̂(μ)` of paths returning to height 0 with slope `μ`.
pub fn hat_kappa(mu: f64) -> Result<f64> {
    if !(mu >= 1.0) || !mu.is_finite() {
        return domain(format!("hat_kappa needs mu >= 1, got {mu}"));
    }
    Ok(interface_entropy(mu, 1.0)? / mu)
}

/// Derivative of `μ ↦ μ·κ̂(μ)`.
pub fn hat_kappa_total_slope(mu: f64) -> Result<f64> {
    let s = interface_entropy_run(mu, 1.0)?;
    Ok(0.5 * (s.d_u() + s.d_d()))
}

/// The comparison function
/// `G(μ, a) = ½((μ−1)/μ) log(a/(a−2)) + (1/μ) log[2(a−1)]`.
pub fn entropy_g(mu: f64, a: f64) -> Result<f64> {
    if !(mu >= 1.0) || !(a >= 2.0) || !mu.is_finite() || !a.is_finite() {
        return domain(format!("G needs mu >= 1 and a >= 2, got ({mu}, {a})"));
    }
    let tail = (2.0 * (a - 1.0)).ln() / mu;
    if mu == 1.0 {
        return Ok(tail);
    }
    if a == 2.0 {
        return Ok(f64::INFINITY);
    }
    Ok(0.5 * ((mu - 1.0) / mu) * (a / (a - 2.0)).ln() + tail)
}

/// Default bound on DP table cells for exact counting.
pub const DEFAULT_MAX_CELLS: u64 = 400_000_000;

const START: usize = 0;
const UP: usize = 1;
const DOWN: usize = 2;

/// Exact `|W_{aL,bL}|` with `steps = aL` and `width = bL`: directed paths from
/// `(0,0)` to `(bL, L)` with vertical position confined to `(−L, L]`.
pub fn count_block_paths(l: u32, steps: u32, width: u32) -> Result<BigUint> {
    count_block_paths_bounded(l, steps, width, DEFAULT_MAX_CELLS)
}

pub fn count_block_paths_bounded(l: u32, steps: u32, width: u32, max_cells: u64) -> Result<BigUint> {
    if l == 0 {
        return domain("L must be positive");
    }
    let rows = 2 * l as usize;
    let cells = (steps as u64 + 1) * (width as u64 + 1) * rows as u64 * 3;
    if cells > max_cells {
        return Err(Error::Resource(format!(
            "count_block_paths needs {cells} cells, limit {max_cells}"
        )));
    }
    // Row index y + L − 1 for y ∈ (−L, L].
    let off = l as i64 - 1;
    let target = (width as usize, (l as i64 + off) as usize);
    Ok(count_paths(steps, width, rows, off as usize, Some(target)))
}

/// Exact `|W_{cL,bL}|` for the interface class: `steps = cL`, `width = bL`,
/// endpoint `(bL, 0)`, no confinement.
pub fn count_interface_paths(steps: u32, width: u32) -> Result<BigUint> {
    if width > steps {
        return domain(format!("interface path needs steps >= width, got {steps} < {width}"));
    }
    let v = (steps - width) as usize;
    let half = v / 2;
    let rows = 2 * half + 1;
    let cells = (steps as u64 + 1) * (width as u64 + 1) * rows as u64 * 3;
    if cells > DEFAULT_MAX_CELLS {
        return Err(Error::Resource(format!(
            "count_interface_paths needs {cells} cells, limit {DEFAULT_MAX_CELLS}"
        )));
    }
    if v % 2 == 1 {
        return Ok(BigUint::zero());
    }
    Ok(count_paths(steps, width, rows, half, Some((width as usize, half))))
}

fn count_paths(
    steps: u32,
    width: u32,
    rows: usize,
    origin_row: usize,
    target: Option<(usize, usize)>,
) -> BigUint {
    let cols = width as usize + 1;
    let idx = |x: usize, y: usize, dir: usize| (x * rows + y) * 3 + dir;
    let mut cur = vec![BigUint::zero(); cols * rows * 3];
    cur[idx(0, origin_row, START)] = BigUint::from(1u32);
    for _ in 0..steps {
        let mut next = vec![BigUint::zero(); cols * rows * 3];
        for x in 0..cols {
            for y in 0..rows {
                for dir in 0..3 {
                    let v = &cur[idx(x, y, dir)];
                    if v.is_zero() {
                        continue;
                    }
                    if x + 1 < cols {
                        next[idx(x + 1, y, START)] += v;
                    }
                    if dir != DOWN && y + 1 < rows {
                        next[idx(x, y + 1, UP)] += v;
                    }
                    if dir != UP && y > 0 {
                        next[idx(x, y - 1, DOWN)] += v;
                    }
                }
            }
        }
        cur = next;
    }
    let (tx, ty) = target.unwrap_or((width as usize, origin_row));
    (0..3).map(|dir| cur[idx(tx, ty, dir)].clone()).sum()
}

/// Natural log of a big integer (−∞ for zero).
pub fn big_ln(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        let f: f64 = x.to_string().parse().unwrap_or(f64::INFINITY);
        if f.is_finite() {
            return f.ln();
        }
    }
    let shift = bits.saturating_sub(60);
    let top = x >> shift;
    let f: f64 = top.to_string().parse().unwrap_or(f64::NAN);
    f.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Finite-size extrapolation `y(L) = κ + c₁ log(L)/L + c₂/L`, returning `κ`.
pub fn extrapolate_log_rate(ls: &[f64], values: &[f64]) -> Result<f64> {
    if ls.len() != values.len() {
        return domain("ladder and values differ in length");
    }
    let basis: Vec<Vec<f64>> = ls.iter().map(|l| vec![l.ln() / l, 1.0 / l]).collect();
    let w = intercept_weights(&basis)?;
    Ok(w.iter().zip(values).map(|(a, b)| a * b).sum())
}
