use emulsion::finite_model::FiniteInstance;
use emulsion::interface::Monomer;

/// Brute-force sum over all admissible paths, labelling every step from
/// absolute coordinates.
struct Enumerator<'a> {
    inst: &'a FiniteInstance,
    total: f64,
    compensation: f64,
}

impl Enumerator<'_> {
    fn block(&self, i: i64, j: i64) -> Monomer {
        self.inst.field.at(i, j)
    }

    fn step_weight(&self, k: usize, block: Monomer) -> f64 {
        match (block, self.inst.omega.symbols[k]) {
            (Monomer::A, _) => 0.0,
            (Monomer::B, Monomer::A) => -self.inst.point.alpha,
            (Monomer::B, Monomer::B) => self.inst.point.beta,
        }
    }

    fn continue_from_corner(&mut self, cx: i64, cy: i64, last: u8, k: usize, logw: f64) {
        if k == self.inst.n {
            // Neumaier summation: ~10⁸ terms of mixed size.
            let x = logw.exp();
            let t = self.total + x;
            if self.total.abs() >= x.abs() {
                self.compensation += (self.total - t) + x;
            } else {
                self.compensation += (x - t) + self.total;
            }
            self.total = t;
            return;
        }
        for up in [true, false] {
            self.walk(cx, cy, up, cx, cy, last, 0, k, logw);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(&mut self, cx: i64, cy: i64, up: bool, x: i64, y: i64, last: u8, s: usize, k: usize, logw: f64) {
        let l = self.inst.l as i64;
        let (tx, ty) = (cx + l, if up { cy + l } else { cy - l });
        if s > 0 && x == tx && y == ty {
            self.continue_from_corner(tx, ty, last, k, logw);
            return;
        }
        let cap = self.inst.a_max * self.inst.l;
        let budget = (cap - s).min(self.inst.n - k) as i64;
        if (tx - x) + (ty - y).abs() > budget {
            return;
        }
        let inside = |y: i64| if up { y > cy - l && y <= cy + l } else { y >= cy - l && y < cy + l };
        let (bi, bj) = (cx.div_euclid(l), cy.div_euclid(l));
        let above = self.block(bi, bj);
        let below = self.block(bi, bj - 1);
        // (dx, dy, new last)
        for (dx, dy, nl) in [(1i64, 0i64, b'R'), (0, 1, b'U'), (0, -1, b'D')] {
            if (nl == b'U' && last == b'D') || (nl == b'D' && last == b'U') {
                continue;
            }
            let (nx, ny) = (x + dx, y + dy);
            if nx > tx || !inside(ny) {
                continue;
            }
            let is_above = if dy == 0 { y > cy || (y == cy && up) } else { y.min(ny) >= cy };
            let w = self.step_weight(k, if is_above { above } else { below });
            self.walk(cx, cy, up, nx, ny, nl, s + 1, k + 1, logw + w);
        }
    }
}

pub fn enumerate(inst: &FiniteInstance) -> f64 {
    let mut e = Enumerator { inst, total: 0.0, compensation: 0.0 };
    e.continue_from_corner(0, 0, b'R', 0, 0.0);
    (e.total + e.compensation).ln() / inst.n as f64
}
