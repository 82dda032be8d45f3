#![allow(dead_code)]

use std::collections::HashMap;

use emulsion::frequencies::FieldConfig;
use emulsion::interface::EstimatorConfig;

pub mod enumerate;

/// Log of the number of directed three-step paths with `steps` steps that
/// end at `(width, height)` with every visited height in `[lo, hi]`.
///
/// The state is `(x, y, last vertical step)`; counts are kept as `f64`, which
/// is exact far beyond the sizes used here in relative terms.
pub fn log_count(steps: usize, width: i64, height: i64, lo: i64, hi: i64) -> f64 {
    // last: 0 = horizontal or start, 1 = up, 2 = down
    let mut cur: HashMap<(i64, i64, u8), f64> = HashMap::from([((0, 0, 0), 1.0)]);
    let mut log_scale = 0.0;
    for k in 0..steps {
        let mut next: HashMap<(i64, i64, u8), f64> = HashMap::new();
        let left = (steps - k - 1) as i64;
        for (&(x, y, last), &c) in &cur {
            let moves = [(1, 0, 0u8), (0, 1, 1), (0, -1, 2)];
            for (dx, dy, nl) in moves {
                if (nl == 1 && last == 2) || (nl == 2 && last == 1) {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if nx > width || ny < lo || ny > hi {
                    continue;
                }
                if (width - nx) + (height - ny).abs() > left {
                    continue;
                }
                *next.entry((nx, ny, nl)).or_default() += c;
            }
        }
        let m = next.values().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            for v in next.values_mut() {
                *v /= m;
            }
            log_scale += m.ln();
        }
        cur = next;
    }
    let total: f64 = cur.iter().filter(|(&(x, y, _), _)| x == width && y == height).map(|(_, c)| c).sum();
    total.ln() + log_scale
}

/// Per-step log count of block crossings: `aL` steps from `(0,0)` to
/// `(bL, L)` inside `(−L, L]`.
pub fn block_rate(l: usize, a: f64, b: f64) -> f64 {
    let steps = (a * l as f64).round() as usize;
    let width = (b * l as f64).round() as i64;
    let l = l as i64;
    log_count(steps, width, l, -l + 1, l) / steps as f64
}

/// Per-step log count of interface paths: `μw` steps from `(0,0)` to `(w, 0)`.
pub fn interface_rate(w: usize, mu: f64) -> f64 {
    let steps = (mu * w as f64).round() as usize;
    let reach = steps as i64;
    log_count(steps, w as i64, 0, -reach, reach) / steps as f64
}

/// Intercept `κ` of the exact fit `y = κ + c₁ log(L)/L + c₂/L` through three
/// points, by Cramer's rule.
pub fn three_point_limit(ls: [f64; 3], ys: [f64; 3]) -> f64 {
    let row = |l: f64| [1.0, l.ln() / l, 1.0 / l];
    let m = [row(ls[0]), row(ls[1]), row(ls[2])];
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let mut first = m;
    for i in 0..3 {
        first[i][0] = ys[i];
    }
    det(first) / det(m)
}

/// A ladder small enough for debug-free test runs that still leaves three
/// extrapolation rungs.
pub fn cheap_estimator() -> EstimatorConfig {
    EstimatorConfig { l_ladder: vec![8, 16, 32], samples: 16, mu_max: 32.0, ..Default::default() }
}

pub fn cheap_fields() -> FieldConfig {
    FieldConfig { m: 256, t: 1024, fields: 4, ..Default::default() }
}
