//! Block-visit frequencies of coarse-grained paths through a random field
//! of oil (A) and water (B) blocks.
//!
//! A coarse path moves between block corners by up-right or down-right
//! diagonal crossings. At corner `(i, j)` the block above is `Ω(i, j)` and the
//! block below is `Ω(i, j − 1)`. An up move crosses the block above and sees
//! the block below as its neighbour (pair `kl` = above, below); a down move
//! crosses the block below and sees the block above. The field is a torus.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interface::Monomer;
use crate::numerics::mean_stderr;

/// The four (crossed, neighbour) block pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairType {
    AA,
    AB,
    BA,
    BB,
}

impl PairType {
    pub const ALL: [PairType; 4] = [PairType::AA, PairType::AB, PairType::BA, PairType::BB];

    pub fn of(crossed: Monomer, neighbour: Monomer) -> PairType {
        match (crossed, neighbour) {
            (Monomer::A, Monomer::A) => PairType::AA,
            (Monomer::A, Monomer::B) => PairType::AB,
            (Monomer::B, Monomer::A) => PairType::BA,
            (Monomer::B, Monomer::B) => PairType::BB,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockField {
    /// `grid[i][j]`: column `i`, row `j`.
    pub grid: Vec<Vec<Monomer>>,
    pub p: f64,
    pub seed: u64,
}

impl BlockField {
    pub fn size(&self) -> usize {
        self.grid.len()
    }

    /// Block at column `i`, row `j`, with torus wrap-around.
    pub fn at(&self, i: i64, j: i64) -> Monomer {
        let m = self.size() as i64;
        self.grid[i.rem_euclid(m) as usize][j.rem_euclid(m) as usize]
    }

    /// Pair crossed by the move from corner `(i, j)`; `up` selects the move.
    pub fn pair(&self, i: i64, j: i64, up: bool) -> PairType {
        let above = self.at(i, j);
        let below = self.at(i, j - 1);
        if up {
            PairType::of(above, below)
        } else {
            PairType::of(below, above)
        }
    }

    /// Rows of `A`/`B` characters, top row first, for the text dump format.
    pub fn to_text(&self) -> String {
        let m = self.size();
        let mut out = String::with_capacity(m * (m + 1));
        for j in (0..m).rev() {
            for i in 0..m {
                out.push(match self.grid[i][j] {
                    Monomer::A => 'A',
                    Monomer::B => 'B',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, p: f64, seed: u64) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let m = rows.len();
        if m < 2 {
            return domain("a block field needs at least 2 rows");
        }
        let mut grid = vec![vec![Monomer::A; m]; m];
        for (r, line) in rows.iter().enumerate() {
            let j = m - 1 - r;
            if line.chars().count() != m {
                return domain(format!("field row {} has {} cells, expected {m}", r + 1, line.chars().count()));
            }
            for (i, ch) in line.chars().enumerate() {
                grid[i][j] = match ch {
                    'A' => Monomer::A,
                    'B' => Monomer::B,
                    other => return domain(format!("unexpected field character {other:?}")),
                };
            }
        }
        Ok(BlockField { grid, p, seed })
    }
}

impl fmt::Display for BlockField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// I.i.d. field with `P(A) = p`, reproducible from `seed`.
pub fn sample_field(p: f64, m: usize, seed: u64) -> Result<BlockField> {
    sample_field_stream(p, m, seed, 0)
}

/// As [`sample_field`], drawing from the numbered stream of `seed`.
pub fn sample_field_stream(p: f64, m: usize, seed: u64, stream: u64) -> Result<BlockField> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("p must lie in [0, 1], got {p}"));
    }
    if m < 2 {
        return domain(format!("field size must be at least 2, got {m}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut grid = vec![vec![Monomer::B; m]; m];
    for column in grid.iter_mut() {
        for cell in column.iter_mut() {
            if rng.random::<f64>() < p {
                *cell = Monomer::A;
            }
        }
    }
    Ok(BlockField { grid, p, seed })
}

/// Best coarse path of `T` moves for per-pair weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPath {
    /// Average weight per move.
    pub value: f64,
    /// Number of moves of each pair type, indexed by [`PairType::index`].
    pub counts: [u64; 4],
}

/// Largest cell count `M·T` accepted by the path DP.
pub const MAX_PATH_CELLS: u64 = 1 << 32;

/// Maximizes `(1/T) Σ_t w[pair_t]` over coarse paths of `T` moves starting in
/// column 0 at any row. Ties go to the lower row, then to the up move.
pub fn max_weighted_path(field: &BlockField, w: [f64; 4], t: usize) -> Result<WeightedPath> {
    let m = field.size();
    if t == 0 {
        return domain("path length must be positive");
    }
    if (m as u64) * (t as u64) > MAX_PATH_CELLS {
        return Err(Error::Resource(format!("{m}x{t} path DP exceeds {MAX_PATH_CELLS} cells")));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return domain("path weights must be finite");
    }
    let mut value = vec![0.0f64; m];
    let mut counts = vec![[0u64; 4]; m];
    let mut next_value = vec![0.0f64; m];
    let mut next_counts = vec![[0u64; 4]; m];
    for step in 0..t {
        let i = (step % m) as i64;
        for j in 0..m {
            // Arrive at row j by an up move from j − 1 or a down move from j + 1.
            let from_below = (j + m - 1) % m;
            let from_above = (j + 1) % m;
            let up = field.pair(i, from_below as i64, true);
            let down = field.pair(i, from_above as i64, false);
            let v_up = value[from_below] + w[up.index()];
            let v_down = value[from_above] + w[down.index()];
            let (v, src, kind) = if v_up >= v_down { (v_up, from_below, up) } else { (v_down, from_above, down) };
            next_value[j] = v;
            let mut c = counts[src];
            c[kind.index()] += 1;
            next_counts[j] = c;
        }
        std::mem::swap(&mut value, &mut next_value);
        std::mem::swap(&mut counts, &mut next_counts);
    }
    let mut best = 0;
    for j in 1..m {
        if value[j] > value[best] {
            best = j;
        }
    }
    Ok(WeightedPath { value: value[best] / t as f64, counts: counts[best] })
}

/// `(ρ*, ρ*_BA, ρ*_BB)` with standard errors over sampled fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTriple {
    pub rho_star: f64,
    pub rho_ba: f64,
    pub rho_bb: f64,
    pub stderr: [f64; 3],
}

impl FrequencyTriple {
    /// A triple with `ρ*_BB = 1 − ρ* − ρ*_BA` and no error.
    pub fn new(rho_star: f64, rho_ba: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho_star) || rho_ba < 0.0 || rho_star + rho_ba > 1.0 + 1e-12 {
            return domain(format!("invalid frequencies rho*={rho_star}, rho_BA={rho_ba}"));
        }
        Ok(FrequencyTriple { rho_star, rho_ba, rho_bb: (1.0 - rho_star - rho_ba).max(0.0), stderr: [0.0; 3] })
    }
}

/// Settings for sampled-field estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Side of the square torus, in blocks.
    pub m: usize,
    /// Moves per coarse path.
    pub t: usize,
    pub fields: usize,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { m: 512, t: 2048, fields: 16, seed: 1 }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.t == 0 || self.fields == 0 {
            return Err(Error::Config("field size >= 2, path length and field count > 0 required".into()));
        }
        Ok(())
    }

    pub fn sample(&self, p: f64, index: usize) -> Result<BlockField> {
        sample_field_stream(p, self.m, self.seed, index as u64)
    }
}

/// Per-field pair counts of the lexicographically best path: most A
/// crossings, then most BA crossings.
pub fn lexicographic_counts(field: &BlockField, t: usize) -> Result<[u64; 4]> {
    let big = (t + 1) as f64;
    Ok(max_weighted_path(field, [big, big, 1.0, 0.0], t)?.counts)
}

/// Estimates `(ρ*(p), ρ*_BA(p), ρ*_BB(p))`.
pub fn rho_star_estimate(p: f64, cfg: &FieldConfig) -> Result<FrequencyTriple> {
    cfg.validate()?;
    let per_field: Result<Vec<[u64; 4]>> = (0..cfg.fields)
        .into_par_iter()
        .map(|i| lexicographic_counts(&cfg.sample(p, i)?, cfg.t))
        .collect();
    let per_field = per_field?;
    let t = cfg.t as f64;
    let stars: Vec<f64> = per_field.iter().map(|c| (c[0] + c[1]) as f64 / t).collect();
    let bas: Vec<f64> = per_field.iter().map(|c| c[2] as f64 / t).collect();
    let bbs: Vec<f64> = per_field.iter().map(|c| c[3] as f64 / t).collect();
    let (rho_star, se_star) = mean_stderr(&stars);
    let (rho_ba, se_ba) = mean_stderr(&bas);
    let (_, se_bb) = mean_stderr(&bbs);
    Ok(FrequencyTriple { rho_star, rho_ba, rho_bb: 1.0 - rho_star - rho_ba, stderr: [se_star, se_ba, se_bb] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let f = sample_field(0.5, 6, 3).unwrap();
        let g = BlockField::from_text(&f.to_text(), 0.5, 3).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn equal_weights_give_the_weight() {
        let f = sample_field(0.4, 16, 2).unwrap();
        let w = max_weighted_path(&f, [0.7; 4], 50).unwrap();
        assert!((w.value - 0.7).abs() < 1e-15);
        assert_eq!(w.counts.iter().sum::<u64>(), 50);
    }
}
