//! Quenched free energy of a copolymer near a single flat interface.
//!
//! The upper half-plane is oil and the lower half-plane, interface
//! included, is water. A step lies in the lower half-plane when both of its
//! endpoints have height `≤ 0`; there an A monomer costs `α` and a B monomer
//! gains `β`. Everything is measured relative to the upper half-plane, so
//! `log Z` counts paths weighted by `Π exp(−α 1{A} + β 1{B})` over lower steps.
//!
//! [`phi_i`] estimates `φ^I(α, β; μ)` from exact partition functions of
//! sampled monomer sequences. One forward pass per sequence yields
//! `log Z_{n,h}` for every width `h` at each ladder length `n`, so all slopes
//! `μ = n/h` come out of the same pass. The estimator subtracts the exactly
//! known entropy `log |W_{n,h}|` at finite size, extrapolates the remainder
//! in `1/L` and adds back `κ̂(μ)`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::hat_kappa;
use crate::error::{domain, Error, Result};
use crate::numerics::{geometric_grid, intercept_weights, log_add, mean_stderr};

/// Interaction strengths `(α, β)` in the cone `α ≥ |β|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionPoint {
    pub alpha: f64,
    pub beta: f64,
}

impl InteractionPoint {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha + 1e-12 < beta.abs() {
            return domain(format!("(alpha, beta) = ({alpha}, {beta}) is outside the cone alpha >= |beta|"));
        }
        Ok(InteractionPoint { alpha, beta })
    }

    /// The point `(β + r, β)` on the diagonal of coupling `r`.
    pub fn on_diagonal(r: f64, beta: f64) -> Result<Self> {
        Self::new(beta + r, beta)
    }

    pub fn r(&self) -> f64 {
        self.alpha - self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Monomer {
    A,
    B,
}

/// A fair i.i.d. A/B sequence, reproducible from `(seed, stream)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomerSequence {
    pub symbols: Vec<Monomer>,
    pub seed: u64,
    pub stream: u64,
}

impl MonomerSequence {
    pub fn sample(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let symbols = (0..len)
            .map(|_| if rng.random::<bool>() { Monomer::A } else { Monomer::B })
            .collect();
        MonomerSequence { symbols, seed, stream }
    }

    pub fn from_symbols(symbols: Vec<Monomer>) -> Self {
        MonomerSequence { symbols, seed: 0, stream: 0 }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// `log` of the Boltzmann factor of one monomer in the water half-plane.
pub fn water_log_weight(m: Monomer, point: InteractionPoint) -> f64 {
    match m {
        Monomer::A => -point.alpha,
        Monomer::B => point.beta,
    }
}

/// True iff the annealed bound forces `φ^I = κ̂`:
/// `β ≤ log(1 + √(1 − e^{−r}))`.
pub fn in_annealed_region(point: InteractionPoint) -> bool {
    point.beta <= annealed_bound(point.r())
}

/// `log(1 + √(1 − e^{−r}))`, the annealed lower bound on the critical curves.
pub fn annealed_bound(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    (1.0 + (-(-r).exp_m1()).sqrt()).ln()
}

const E: usize = 0;
const U: usize = 1;
const D: usize = 2;

/// Exact `log Σ_{π ∈ W_{steps,width}} exp(−H(π))` for paths from `(0,0)` to
/// `(width, 0)`, computed in log-sum-exp arithmetic.
pub fn interface_log_partition(
    omega: &MonomerSequence,
    point: InteractionPoint,
    steps: usize,
    width: usize,
) -> Result<f64> {
    if width > steps {
        return domain(format!("interface path needs steps >= width, got {steps} < {width}"));
    }
    if omega.len() < steps {
        return domain(format!("sequence of length {} is shorter than {steps}", omega.len()));
    }
    let cells = (steps as u64 + 1) * (width as u64 + 1) * (steps as u64 + 1) * 3;
    if cells > 2_000_000_000 {
        return Err(Error::Resource(format!("{cells} DP cells requested")));
    }
    let v = steps - width;
    if v % 2 == 1 {
        return Ok(f64::NEG_INFINITY);
    }
    let half = v / 2;
    let rows = 2 * half + 1;
    let cols = width + 1;
    let idx = |x: usize, y: usize, dir: usize| (x * rows + y) * 3 + dir;
    let ninf = f64::NEG_INFINITY;
    let mut cur = vec![ninf; cols * rows * 3];
    cur[idx(0, half, E)] = 0.0;
    for (i, &m) in omega.symbols[..steps].iter().enumerate() {
        let w = water_log_weight(m, point);
        let mut next = vec![ninf; cols * rows * 3];
        let remaining = steps - i - 1;
        for x in 0..cols {
            for yi in 0..rows {
                let y = yi as i64 - half as i64;
                for dir in 0..3 {
                    let val = cur[idx(x, yi, dir)];
                    if val == ninf {
                        continue;
                    }
                    if x + 1 < cols {
                        let add = if y <= 0 { w } else { 0.0 };
                        let t = &mut next[idx(x + 1, yi, E)];
                        *t = log_add(*t, val + add);
                    }
                    if dir != D && yi + 1 < rows {
                        let add = if y < 0 { w } else { 0.0 };
                        let t = &mut next[idx(x, yi + 1, U)];
                        *t = log_add(*t, val + add);
                    }
                    if dir != U && yi > 0 {
                        let add = if y <= 0 { w } else { 0.0 };
                        let t = &mut next[idx(x, yi - 1, D)];
                        *t = log_add(*t, val + add);
                    }
                }
            }
        }
        // Drop states that can no longer reach the endpoint.
        for x in 0..cols {
            for yi in 0..rows {
                let y = (yi as i64 - half as i64).unsigned_abs() as usize;
                if (width - x) + y > remaining {
                    for dir in 0..3 {
                        next[idx(x, yi, dir)] = ninf;
                    }
                }
            }
        }
        cur = next;
    }
    let z = (0..3).fold(ninf, |acc, dir| log_add(acc, cur[idx(width, half, dir)]));
    Ok(z)
}

/// `log Z_{n,h}` returning to height 0, for every width `h ≤ n` at each
/// requested length `n` (entries with `n − h` odd are `−∞`).
///
/// Works in linear arithmetic with one logarithmic scale per width slice,
/// which keeps slices with very different magnitudes exact.
pub fn log_partition_table(
    omega: &[Monomer],
    point: InteractionPoint,
    lengths: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let n_max = lengths.iter().copied().max().unwrap_or(0);
    if omega.len() < n_max {
        return domain(format!("sequence of length {} is shorter than {n_max}", omega.len()));
    }
    let ymax = n_max / 2;
    let ny = 2 * ymax + 1;
    let slice = 3 * ny;
    let mut cur = vec![0.0f64; (n_max + 1) * slice];
    let mut nxt = vec![0.0f64; (n_max + 1) * slice];
    let mut scale = vec![f64::NEG_INFINITY; n_max + 1];
    let mut new_scale = vec![f64::NEG_INFINITY; n_max + 1];
    cur[E * ny + ymax] = 1.0;
    scale[0] = 0.0;
    let mut out: Vec<Vec<f64>> = lengths.iter().map(|&n| vec![f64::NEG_INFINITY; n + 1]).collect();
    let read = |n: usize, cur: &[f64], scale: &[f64], out: &mut Vec<Vec<f64>>| {
        for (li, &len) in lengths.iter().enumerate() {
            if len != n {
                continue;
            }
            for h in 0..=n {
                if (n - h) % 2 == 1 || scale[h] == f64::NEG_INFINITY {
                    continue;
                }
                let base = h * slice + ymax;
                let z = cur[base + E * ny] + cur[base + U * ny] + cur[base + D * ny];
                if z > 0.0 {
                    out[li][h] = scale[h] + z.ln();
                }
            }
        }
    };
    read(0, &cur, &scale, &mut out);
    for n in 0..n_max {
        let w = water_log_weight(omega[n], point).exp();
        let step = n + 1;
        let reach = n_max - step;
        for h in 0..=step.min(n_max) {
            let vertical = step - h;
            let range = vertical.min(reach);
            let s_same = if h <= n { scale[h] } else { f64::NEG_INFINITY };
            let s_left = if h >= 1 { scale[h - 1] } else { f64::NEG_INFINITY };
            let reference = s_same.max(s_left);
            let dst = h * slice;
            if reference == f64::NEG_INFINITY {
                new_scale[h] = f64::NEG_INFINITY;
                for dir in 0..3 {
                    let lo = dst + dir * ny + ymax - range;
                    nxt[lo..=lo + 2 * range].fill(0.0);
                }
                continue;
            }
            let f_same = (s_same - reference).exp();
            let f_left = (s_left - reference).exp();
            let mut peak = 0.0f64;
            let src = h * slice;
            let left = if h >= 1 { (h - 1) * slice } else { 0 };
            for yi in (ymax - range)..=(ymax + range) {
                let y = yi as i64 - ymax as i64;
                let e_val = if h >= 1 && f_left > 0.0 {
                    (cur[left + E * ny + yi] + cur[left + U * ny + yi] + cur[left + D * ny + yi])
                        * f_left
                        * if y <= 0 { w } else { 1.0 }
                } else {
                    0.0
                };
                let (u_val, d_val) = if h <= n && f_same > 0.0 {
                    let u_val = if yi >= 1 {
                        (cur[src + E * ny + yi - 1] + cur[src + U * ny + yi - 1])
                            * f_same
                            * if y <= 0 { w } else { 1.0 }
                    } else {
                        0.0
                    };
                    let d_val = if yi + 1 < ny {
                        (cur[src + E * ny + yi + 1] + cur[src + D * ny + yi + 1])
                            * f_same
                            * if y < 0 { w } else { 1.0 }
                    } else {
                        0.0
                    };
                    (u_val, d_val)
                } else {
                    (0.0, 0.0)
                };
                nxt[dst + E * ny + yi] = e_val;
                nxt[dst + U * ny + yi] = u_val;
                nxt[dst + D * ny + yi] = d_val;
                peak = peak.max(e_val).max(u_val).max(d_val);
            }
            // Clear the two cells just outside the active window so stale
            // values from earlier steps are never read.
            for dir in 0..3 {
                let base = dst + dir * ny;
                if ymax > range {
                    nxt[base + ymax - range - 1] = 0.0;
                }
                if ymax + range + 1 < ny {
                    nxt[base + ymax + range + 1] = 0.0;
                }
            }
            if peak > 0.0 {
                let inv = 1.0 / peak;
                for dir in 0..3 {
                    let lo = dst + dir * ny + ymax - range;
                    for v in &mut nxt[lo..=lo + 2 * range] {
                        *v *= inv;
                    }
                }
                new_scale[h] = reference + peak.ln();
            } else {
                new_scale[h] = f64::NEG_INFINITY;
            }
        }
        std::mem::swap(&mut cur, &mut nxt);
        std::mem::swap(&mut scale, &mut new_scale);
        for s in new_scale.iter_mut() {
            *s = f64::NEG_INFINITY;
        }
        read(step, &cur, &scale, &mut out);
    }
    Ok(out)
}

/// How finite-size values are extrapolated to `L = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extrapolation {
    /// `v(L) = v + c/L`.
    Linear,
    /// `v(L) = v + c₁ log(L)/L + c₂/L`.
    LogLinear,
    /// `v(L) = v + c₁/L + c₂/L²`.
    Quadratic,
}

impl Extrapolation {
    fn min_rungs(self) -> usize {
        match self {
            Extrapolation::Linear => 2,
            Extrapolation::LogLinear | Extrapolation::Quadratic => 3,
        }
    }

    fn basis(self, l: f64) -> Vec<f64> {
        match self {
            Extrapolation::Linear => vec![1.0 / l],
            Extrapolation::LogLinear => vec![l.ln() / l, 1.0 / l],
            Extrapolation::Quadratic => vec![1.0 / l, 1.0 / (l * l)],
        }
    }

    /// The competing model whose disagreement measures the extrapolation error.
    fn alternative(self) -> Extrapolation {
        match self {
            Extrapolation::Linear => Extrapolation::LogLinear,
            Extrapolation::LogLinear | Extrapolation::Quadratic => Extrapolation::Quadratic,
        }
    }
}

/// Settings of the `φ^I` estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Block sizes `L`; a path at size `L` has `steps_per_l · L` steps.
    pub l_ladder: Vec<usize>,
    pub steps_per_l: usize,
    pub samples: usize,
    pub seed: u64,
    pub extrapolation: Extrapolation,
    /// Add the disagreement between `extrapolation` and a competing model
    /// to the reported error (in quadrature).
    pub model_error: bool,
    /// Largest slope kept on the tabulation grid.
    pub mu_max: f64,
    /// Ratio of the geometric slope grid.
    pub mu_ratio: f64,
    /// Warn when an estimate's stderr exceeds this.
    pub stderr_warn: f64,
    /// Serve exact `κ̂` in the annealed region instead of estimating.
    #[serde(default = "yes")]
    pub annealed_shortcut: bool,
}

fn yes() -> bool {
    true
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            l_ladder: vec![16, 32, 64],
            steps_per_l: 8,
            samples: 32,
            seed: 1,
            extrapolation: Extrapolation::LogLinear,
            model_error: true,
            mu_max: 64.0,
            mu_ratio: 1.05,
            stderr_warn: 0.05,
            annealed_shortcut: true,
        }
    }
}

impl EstimatorConfig {
    pub fn lengths(&self) -> Vec<usize> {
        self.l_ladder.iter().map(|l| l * self.steps_per_l).collect()
    }

    pub fn mu_grid(&self) -> Vec<f64> {
        geometric_grid(1.0, self.mu_max, self.mu_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_ladder.is_empty() || self.l_ladder.contains(&0) {
            return Err(Error::Config("L-ladder must be nonempty and positive".into()));
        }
        let need = self.extrapolation.min_rungs();
        if self.l_ladder.len() > 1 && self.l_ladder.len() < need {
            return Err(Error::Config(format!("extrapolation needs at least {need} ladder rungs")));
        }
        if self.samples == 0 || self.steps_per_l == 0 {
            return Err(Error::Config("samples and steps-per-L must be positive".into()));
        }
        let n_min = self.lengths().into_iter().min().unwrap_or(0) as f64;
        if !(self.mu_max >= 1.0) || self.mu_max > 0.5 * n_min {
            return Err(Error::Config(format!(
                "mu_max = {} must lie in [1, {}] for the shortest ladder length",
                self.mu_max,
                0.5 * n_min
            )));
        }
        if !(self.mu_ratio > 1.0) {
            return Err(Error::Config("mu grid ratio must exceed 1".into()));
        }
        Ok(())
    }

    fn weights_for(&self, model: Extrapolation) -> Result<Vec<f64>> {
        if self.l_ladder.len() == 1 {
            return Ok(vec![1.0]);
        }
        let basis: Vec<Vec<f64>> = self.l_ladder.iter().map(|&l| model.basis(l as f64)).collect();
        intercept_weights(&basis)
    }

    /// Weights of the systematic-error contrast, if it applies.
    fn contrast_weights(&self) -> Result<Option<Vec<f64>>> {
        let alt = self.extrapolation.alternative();
        if !self.model_error || alt == self.extrapolation || self.l_ladder.len() < alt.min_rungs() {
            return Ok(None);
        }
        let w = self.weights_for(self.extrapolation)?;
        let v = self.weights_for(alt)?;
        Ok(Some(w.iter().zip(&v).map(|(a, b)| a - b).collect()))
    }

    /// Short text identifying the settings that change estimates.
    pub fn ladder_key(&self) -> String {
        let ls: Vec<String> = self.l_ladder.iter().map(|l| l.to_string()).collect();
        ls.join("/")
    }

    fn signature(&self) -> String {
        format!(
            "steps_per_l={} extrapolation={:?} model_error={} mu_max={} mu_ratio={}",
            self.steps_per_l, self.extrapolation, self.model_error, self.mu_max, self.mu_ratio
        )
    }
}

/// Estimate of `φ^I(α, β; μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceEstimate {
    pub mu: f64,
    pub value: f64,
    /// Total error: `statistical` and `systematic` in quadrature.
    pub stderr: f64,
    /// Standard error of the mean over disorder samples.
    pub statistical: f64,
    /// Extrapolation-model disagreement.
    pub systematic: f64,
    pub l_used: Vec<usize>,
    pub samples: usize,
    pub extrapolated: bool,
}

/// Per-sample finite-size data of one interaction point.
#[derive(Debug, Clone)]
pub struct SampledProfile {
    pub point: InteractionPoint,
    lengths: Vec<usize>,
    l_ladder: Vec<usize>,
    weights: Vec<f64>,
    contrast: Option<Vec<f64>>,
    /// `[sample][rung][h]`: `(log Z_{n,h} − log|W_{n,h}|)/n`.
    excess: Vec<Vec<Vec<f64>>>,
}

type EntropyTable = Arc<Vec<Vec<f64>>>;

fn entropy_table(lengths: &[usize]) -> Result<EntropyTable> {
    static CACHE: OnceLock<Mutex<HashMap<Vec<usize>, EntropyTable>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("entropy table lock").get(lengths) {
        return Ok(t.clone());
    }
    let n_max = lengths.iter().copied().max().unwrap_or(0);
    let flat = vec![Monomer::A; n_max];
    let table = Arc::new(log_partition_table(&flat, InteractionPoint { alpha: 0.0, beta: 0.0 }, lengths)?);
    cache.lock().expect("entropy table lock").insert(lengths.to_vec(), table.clone());
    Ok(table)
}

impl SampledProfile {
    pub fn compute(point: InteractionPoint, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let lengths = cfg.lengths();
        let n_max = lengths.iter().copied().max().unwrap_or(0);
        let counts = entropy_table(&lengths)?;
        let excess: Result<Vec<Vec<Vec<f64>>>> = (0..cfg.samples)
            .into_par_iter()
            .map(|s| {
                let omega = MonomerSequence::sample(n_max, cfg.seed, s as u64);
                let table = log_partition_table(&omega.symbols, point, &lengths)?;
                Ok(table
                    .iter()
                    .zip(counts.iter())
                    .zip(&lengths)
                    .map(|((z, w), &n)| {
                        z.iter()
                            .zip(w)
                            .map(|(a, b)| if b.is_finite() { (a - b) / n as f64 } else { f64::NAN })
                            .collect()
                    })
                    .collect())
            })
            .collect();
        Ok(SampledProfile {
            point,
            lengths,
            l_ladder: cfg.l_ladder.clone(),
            weights: cfg.weights_for(cfg.extrapolation)?,
            contrast: cfg.contrast_weights()?,
            excess: excess?,
        })
    }

    fn rung_value(&self, sample: usize, rung: usize, mu: f64) -> f64 {
        let n = self.lengths[rung];
        let row = &self.excess[sample][rung];
        let hstar = n as f64 / mu;
        // Widths with n − h odd have no paths; interpolate between the
        // neighbouring admissible widths, never using h = 0.
        let first = if n.is_multiple_of(2) { 2 } else { 1 };
        let mut h_lo = (hstar.floor() as usize).min(n);
        if (n - h_lo) % 2 == 1 {
            h_lo -= 1;
        }
        let h_lo = h_lo.max(first);
        if h_lo + 2 > n {
            return row[h_lo];
        }
        let t = ((hstar - h_lo as f64) / 2.0).clamp(0.0, 1.0);
        row[h_lo] * (1.0 - t) + row[h_lo + 2] * t
    }

    /// Mean and standard error of the finite-size excess at each rung.
    pub fn rung_stats(&self, mu: f64) -> Vec<(f64, f64)> {
        (0..self.lengths.len())
            .map(|j| {
                let xs: Vec<f64> = (0..self.excess.len()).map(|s| self.rung_value(s, j, mu)).collect();
                mean_stderr(&xs)
            })
            .collect()
    }

    /// Estimate at slope `μ`, with standard error from the spread of the
    /// per-sample extrapolations.
    pub fn estimate(&self, mu: f64) -> Result<InterfaceEstimate> {
        if !(mu >= 1.0) {
            return domain(format!("slope must be >= 1, got {mu}"));
        }
        let n_min = self.lengths.iter().copied().min().unwrap_or(0) as f64;
        if mu > 0.5 * n_min {
            return domain(format!("slope {mu} too large for ladder length {n_min}"));
        }
        let base = hat_kappa(mu)?;
        if mu == 1.0 {
            // Only the flat path has slope exactly one; the free energy is
            // continuous there and equals max(0, (β−α)/2) = 0 in the cone.
            return Ok(InterfaceEstimate {
                mu,
                value: base,
                stderr: 0.0,
                statistical: 0.0,
                systematic: 0.0,
                l_used: self.l_ladder.clone(),
                samples: self.excess.len(),
                extrapolated: false,
            });
        }
        let per_sample: Vec<f64> = (0..self.excess.len())
            .map(|s| {
                (0..self.lengths.len())
                    .map(|j| self.weights[j] * self.rung_value(s, j, mu))
                    .sum()
            })
            .collect();
        let (mean, statistical) = mean_stderr(&per_sample);
        let systematic = match &self.contrast {
            Some(c) => self
                .rung_stats(mu)
                .iter()
                .zip(c)
                .map(|((m, _), w)| m * w)
                .sum::<f64>()
                .abs(),
            None => 0.0,
        };
        Ok(InterfaceEstimate {
            mu,
            value: base + mean,
            stderr: statistical.hypot(systematic),
            statistical,
            systematic,
            l_used: self.l_ladder.clone(),
            samples: self.excess.len(),
            extrapolated: self.lengths.len() > 1,
        })
    }
}

fn key_round(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    alpha: i64,
    beta: i64,
    mu: i64,
    ladder: String,
    seed: u64,
    samples: usize,
}

/// Append-only text cache of estimates, one record per line:
/// `alpha,beta,mu,L,seed,samples,value,stderr`.
#[derive(Debug, Default)]
pub struct PhiCache {
    path: Option<PathBuf>,
    records: HashMap<CacheKey, (f64, f64)>,
}

const CACHE_HEADER: &str = "# phi-cache v1";

impl PhiCache {
    pub fn in_memory() -> Self {
        PhiCache::default()
    }

    /// Opens (or creates) a cache file for the given estimator settings.
    pub fn open(path: &Path, cfg: &EstimatorConfig) -> Result<Self> {
        let header = format!("{CACHE_HEADER} {}", cfg.signature());
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if lineno == 0 {
                    if line.trim() != header {
                        return Err(Error::Cache(format!(
                            "{}: header {:?} does not match the current estimator ({:?})",
                            path.display(),
                            line.trim(),
                            header
                        )));
                    }
                    continue;
                }
                if line.trim().is_empty() {
                    continue;
                }
                let (key, value) = parse_record(&line).map_err(|e| {
                    Error::Cache(format!("{} line {}: {e}", path.display(), lineno + 1))
                })?;
                records.insert(key, value);
            }
        } else {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            let mut f = File::create(path)?;
            writeln!(f, "{header}")?;
        }
        Ok(PhiCache { path: Some(path.to_path_buf()), records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn key(point: InteractionPoint, mu: f64, cfg: &EstimatorConfig) -> CacheKey {
        CacheKey {
            alpha: key_round(point.alpha),
            beta: key_round(point.beta),
            mu: key_round(mu),
            ladder: cfg.ladder_key(),
            seed: cfg.seed,
            samples: cfg.samples,
        }
    }

    pub fn get(&self, point: InteractionPoint, mu: f64, cfg: &EstimatorConfig) -> Option<(f64, f64)> {
        self.records.get(&Self::key(point, mu, cfg)).copied()
    }

    pub fn put(&mut self, point: InteractionPoint, mu: f64, cfg: &EstimatorConfig, value: f64, stderr: f64) -> Result<()> {
        let key = Self::key(point, mu, cfg);
        if self.records.contains_key(&key) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).open(path)?;
            writeln!(
                f,
                "{},{},{},{},{},{},{:e},{:e}",
                point.alpha, point.beta, mu, key.ladder, key.seed, key.samples, value, stderr
            )?;
        }
        self.records.insert(key, (value, stderr));
        Ok(())
    }
}

fn parse_record(line: &str) -> std::result::Result<(CacheKey, (f64, f64)), String> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        let v: f64 = fields[i].parse().map_err(|_| format!("field {} is not a number: {:?}", i + 1, fields[i]))?;
        if v.is_nan() {
            return Err(format!("field {} is NaN", i + 1));
        }
        Ok(v)
    };
    if fields[3].is_empty() || !fields[3].split('/').all(|s| s.parse::<usize>().is_ok()) {
        return Err(format!("malformed L-ladder {:?}", fields[3]));
    }
    let seed: u64 = fields[4].parse().map_err(|_| format!("malformed seed {:?}", fields[4]))?;
    let samples: usize = fields[5].parse().map_err(|_| format!("malformed sample count {:?}", fields[5]))?;
    let key = CacheKey {
        alpha: key_round(num(0)?),
        beta: key_round(num(1)?),
        mu: key_round(num(2)?),
        ladder: fields[3].to_string(),
        seed,
        samples,
    };
    let stderr = num(7)?;
    if stderr < 0.0 {
        return Err("negative stderr".into());
    }
    Ok((key, (num(6)?, stderr)))
}

/// A source of `φ^I(μ)` values with standard errors.
pub trait InterfaceFreeEnergy: Send + Sync {
    /// `(φ^I(μ), stderr)`.
    fn phi(&self, mu: f64) -> (f64, f64);
    /// True when values carry no statistical error.
    fn is_exact(&self) -> bool;
    /// Grid used for suprema over `μ`.
    fn mu_grid(&self) -> &[f64];
    /// `(φ^I(μ) − κ̂(μ), stderr)` before any flooring at zero.
    fn excess(&self, mu: f64) -> (f64, f64) {
        let (v, se) = self.phi(mu);
        (v - hat_kappa(mu.max(1.0)).unwrap_or(0.0), se)
    }
}

/// `φ^I ≡ κ̂`, exact in the annealed region.
#[derive(Debug, Clone)]
pub struct HatKappa {
    grid: Vec<f64>,
}

impl HatKappa {
    pub fn new(grid: Vec<f64>) -> Self {
        HatKappa { grid }
    }
}

impl Default for HatKappa {
    fn default() -> Self {
        HatKappa::new(EstimatorConfig::default().mu_grid())
    }
}

impl InterfaceFreeEnergy for HatKappa {
    fn phi(&self, mu: f64) -> (f64, f64) {
        (hat_kappa(mu.max(1.0)).unwrap_or(0.0), 0.0)
    }
    fn is_exact(&self) -> bool {
        true
    }
    fn mu_grid(&self) -> &[f64] {
        &self.grid
    }
}

/// `φ^I` tabulated on a slope grid, interpolated linearly in `μ·φ^I(μ)`.
/// Beyond the last node the excess over `μ·κ̂(μ)` is held constant.
/// Values are floored at `κ̂`, which bounds `φ^I` from below; the raw
/// interpolant stays available through `excess`.
#[derive(Debug, Clone)]
pub struct TabulatedPhi {
    pub point: InteractionPoint,
    grid: Vec<f64>,
    values: Vec<f64>,
    stderrs: Vec<f64>,
}

impl TabulatedPhi {
    pub fn new(point: InteractionPoint, grid: Vec<f64>, values: Vec<f64>, stderrs: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() || grid.len() != stderrs.len() {
            return domain("tabulated phi needs matching grids of length >= 2");
        }
        Ok(TabulatedPhi { point, grid, values, stderrs })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stderrs(&self) -> &[f64] {
        &self.stderrs
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderrs.iter().copied().fold(0.0, f64::max)
    }
}

impl TabulatedPhi {
    fn raw(&self, mu: f64) -> (f64, f64) {
        let mu = mu.max(1.0);
        let last = self.grid.len() - 1;
        if mu >= self.grid[last] {
            let m = self.grid[last];
            let excess = m * (self.values[last] - hat_kappa(m).unwrap_or(0.0));
            return (hat_kappa(mu).unwrap_or(0.0) + excess / mu, self.stderrs[last] * m / mu);
        }
        let i = self.grid.partition_point(|&g| g <= mu).saturating_sub(1).min(last - 1);
        let (m0, m1) = (self.grid[i], self.grid[i + 1]);
        let t = (mu - m0) / (m1 - m0);
        let total = (1.0 - t) * m0 * self.values[i] + t * m1 * self.values[i + 1];
        let se = (1.0 - t) * m0 * self.stderrs[i] + t * m1 * self.stderrs[i + 1];
        (total / mu, se / mu)
    }
}

impl InterfaceFreeEnergy for TabulatedPhi {
    fn phi(&self, mu: f64) -> (f64, f64) {
        let (v, se) = self.raw(mu);
        (v.max(hat_kappa(mu.max(1.0)).unwrap_or(0.0)), se)
    }
    fn excess(&self, mu: f64) -> (f64, f64) {
        let (v, se) = self.raw(mu);
        (v - hat_kappa(mu.max(1.0)).unwrap_or(0.0), se)
    }
    fn is_exact(&self) -> bool {
        false
    }
    fn mu_grid(&self) -> &[f64] {
        &self.grid
    }
}

/// Estimator of `φ^I` with in-memory profiles and an optional file cache.
pub struct InterfaceEstimator {
    pub cfg: EstimatorConfig,
    cache: Mutex<PhiCache>,
    profiles: Mutex<HashMap<(i64, i64), Arc<SampledProfile>>>,
    tables: Mutex<HashMap<(i64, i64), Arc<TabulatedPhi>>>,
}

impl InterfaceEstimator {
    pub fn new(cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(InterfaceEstimator {
            cfg,
            cache: Mutex::new(PhiCache::in_memory()),
            profiles: Mutex::new(HashMap::new()),
            tables: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_cache_file(cfg: EstimatorConfig, path: &Path) -> Result<Self> {
        let cache = PhiCache::open(path, &cfg)?;
        let mut est = Self::new(cfg)?;
        est.cache = Mutex::new(cache);
        Ok(est)
    }

    /// Finite-size data at `point`, computed once per point.
    pub fn profile(&self, point: InteractionPoint) -> Result<Arc<SampledProfile>> {
        let key = (key_round(point.alpha), key_round(point.beta));
        if let Some(p) = self.profiles.lock().expect("profile lock").get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(SampledProfile::compute(point, &self.cfg)?);
        let mut guard = self.profiles.lock().expect("profile lock");
        if guard.len() > 512 {
            guard.clear();
        }
        guard.insert(key, p.clone());
        Ok(p)
    }

    /// Estimate of `φ^I(α, β; μ)`, served from the cache when present.
    pub fn phi_i(&self, point: InteractionPoint, mu: f64) -> Result<InterfaceEstimate> {
        if !(mu >= 1.0) {
            return domain(format!("slope must be >= 1, got {mu}"));
        }
        let hit = self.cache.lock().expect("cache lock").get(point, mu, &self.cfg);
        if let Some((value, stderr)) = hit {
            // The cache keeps only the total error.
            return Ok(InterfaceEstimate {
                mu,
                value,
                stderr,
                statistical: stderr,
                systematic: 0.0,
                l_used: self.cfg.l_ladder.clone(),
                samples: self.cfg.samples,
                extrapolated: self.cfg.l_ladder.len() > 1 && mu > 1.0,
            });
        }
        let est = self.profile(point)?.estimate(mu)?;
        self.cache
            .lock()
            .expect("cache lock")
            .put(point, mu, &self.cfg, est.value, est.stderr)?;
        Ok(est)
    }

    /// `φ^I` at `point` tabulated on the configured slope grid.
    pub fn tabulate(&self, point: InteractionPoint) -> Result<Arc<TabulatedPhi>> {
        let key = (key_round(point.alpha), key_round(point.beta));
        if let Some(t) = self.tables.lock().expect("table lock").get(&key) {
            return Ok(t.clone());
        }
        let grid = self.cfg.mu_grid();
        let mut values = Vec::with_capacity(grid.len());
        let mut stderrs = Vec::with_capacity(grid.len());
        for &mu in &grid {
            let e = self.phi_i(point, mu)?;
            values.push(e.value);
            stderrs.push(e.stderr);
        }
        let t = Arc::new(TabulatedPhi::new(point, grid, values, stderrs)?);
        self.tables.lock().expect("table lock").insert(key, t.clone());
        Ok(t)
    }

    /// The accessor used by the variational formulas: exact `κ̂` in the
    /// annealed region, the tabulated estimate elsewhere.
    pub fn accessor(&self, point: InteractionPoint) -> Result<Arc<dyn InterfaceFreeEnergy>> {
        if self.cfg.annealed_shortcut && in_annealed_region(point) {
            return Ok(Arc::new(HatKappa::new(self.cfg.mu_grid())));
        }
        Ok(self.tabulate(point)?)
    }

    /// Estimates at `(α₀ + u, β₀ + u)` for each `u`, sharing the disorder
    /// samples across the grid.
    pub fn phi_i_along_diagonal(
        &self,
        start: InteractionPoint,
        us: &[f64],
        mu: f64,
    ) -> Result<Vec<(InteractionPoint, InterfaceEstimate)>> {
        us.iter()
            .map(|&u| {
                let p = InteractionPoint::new(start.alpha + u, start.beta + u)?;
                Ok((p, self.phi_i(p, mu)?))
            })
            .collect()
    }
}

/// Estimate of `φ^I` with the given settings and no persistent cache.
pub fn phi_i(point: InteractionPoint, mu: f64, cfg: &EstimatorConfig) -> Result<InterfaceEstimate> {
    SampledProfile::compute(point, cfg)?.estimate(mu)
}
