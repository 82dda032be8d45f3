//! Small scalar routines shared by the solvers: golden-section search,
//! bracketed root finding, grid-plus-refine suprema and least-squares
//! extrapolation weights.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Location and value of a maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Argmax {
    pub x: f64,
    pub value: f64,
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
///
/// The endpoints are compared against the interior optimum at the end, so a
/// maximum sitting on the boundary of the interval is returned exactly.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Argmax {
    if hi <= lo {
        return Argmax { x: lo, value: f(lo) };
    }
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iter = 0;
    while (b - a) > tol * (1.0 + a.abs().max(b.abs())) && iter < 300 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
        iter += 1;
    }
    let mut best = if f1 >= f2 {
        Argmax { x: x1, value: f1 }
    } else {
        Argmax { x: x2, value: f2 }
    };
    for x in [lo, hi] {
        let v = f(x);
        if v > best.value {
            best = Argmax { x, value: v };
        }
    }
    best
}

/// Bisection for a root of a function with `f(lo)` and `f(hi)` of opposite
/// signs. Stops when the bracket is below `tol` (absolute).
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Bracket(format!(
            "no sign change on [{lo}, {hi}]: f = {fa}, {fb}"
        )));
    }
    let neg_at_a = fa < 0.0;
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a) <= tol || m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm < 0.0) == neg_at_a {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Geometric grid from `lo` to `hi` with the given ratio, always ending at `hi`.
pub fn geometric_grid(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    let mut out = vec![lo];
    let mut x = lo;
    while x * ratio < hi * (1.0 - 1e-12) {
        x *= ratio;
        out.push(x);
    }
    if hi > lo {
        out.push(hi);
    }
    out
}

/// Supremum over a grid followed by golden-section refinement on the
/// bracketing triple around the best grid point.
pub fn grid_sup<F: FnMut(f64) -> f64>(mut f: F, grid: &[f64], tol: f64) -> Argmax {
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut i_best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[i_best] {
            i_best = i;
        }
    }
    let best = Argmax { x: grid[i_best], value: values[i_best] };
    if grid.len() < 2 {
        return best;
    }
    let lo = grid[i_best.saturating_sub(1)];
    let hi = grid[(i_best + 1).min(grid.len() - 1)];
    let refined = golden_max(&mut f, lo, hi, tol);
    if refined.value > best.value {
        refined
    } else {
        best
    }
}

/// Weights `w` such that the least-squares intercept of `y ≈ Σ_j c_j g_j(x)`
/// (with `g_0 ≡ 1`) equals `Σ_i w_i y_i`.
///
/// `basis` lists the non-constant basis functions evaluated at each `x_i`.
pub fn intercept_weights(basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = basis.len();
    if n == 0 {
        return Err(Error::Domain("empty extrapolation ladder".into()));
    }
    let p = basis[0].len() + 1;
    if n < p {
        return Err(Error::Domain(format!(
            "extrapolation needs at least {p} points, got {n}"
        )));
    }
    let row = |i: usize| -> Vec<f64> {
        let mut r = vec![1.0];
        r.extend_from_slice(&basis[i]);
        r
    };
    // Normal matrix M = XᵀX; intercept weights are e₀ᵀ M⁻¹ Xᵀ.
    let mut m = vec![vec![0.0; p]; p];
    for i in 0..n {
        let r = row(i);
        for a in 0..p {
            for b in 0..p {
                m[a][b] += r[a] * r[b];
            }
        }
    }
    let mut e0 = vec![0.0; p];
    e0[0] = 1.0;
    let z = solve_dense(m, e0)?;
    Ok((0..n)
        .map(|i| row(i).iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect())
}

fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Result<Vec<f64>> {
    let p = rhs.len();
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        if m[piv][col].abs() < 1e-300 {
            return Err(Error::Domain("singular extrapolation design".into()));
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in (col + 1)..p {
            let factor = m[r][col] / m[col][col];
            for c in col..p {
                m[r][c] -= factor * m[col][c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = ((r + 1)..p).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Ok(x)
}

/// First and second derivatives by central differences with one Richardson
/// step (`h` and `h/2`).
pub fn richardson_derivatives<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> (f64, f64) {
    let mut d = |h: f64| {
        let fp = f(x + h);
        let fm = f(x - h);
        let f0 = f(x);
        ((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h))
    };
    let (d1h, d2h) = d(h);
    let (d1h2, d2h2) = d(0.5 * h);
    ((4.0 * d1h2 - d1h) / 3.0, (4.0 * d2h2 - d2h) / 3.0)
}

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.ln() - (1.0 - p) * (-p).ln_1p()
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln Σ e^{x_i}` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let r = golden_max(|x| -(x - 0.3).powi(2), -1.0, 2.0, 1e-12);
        assert!((r.x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn golden_returns_boundary_maximum() {
        let r = golden_max(|x| x, 0.0, 1.0, 1e-10);
        assert_eq!(r.x, 1.0);
    }

    #[test]
    fn linear_intercept_weights_reproduce_line() {
        let xs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        let w = intercept_weights(&xs.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = xs.iter().map(|x| 0.7 - 3.0 * x).collect();
        let c: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((c - 0.7).abs() < 1e-12);
    }

    #[test]
    fn bisect_requires_sign_change() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-9).is_err());
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }
}
