//! Command-line front end: configuration, table output and exit codes.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::{excursion_criterion, localization_test, psi_aa, psi_ba_hat, psi_bb, psi_cross, Criterion, CrossKind};
use crate::entropy::{entropy_g, hat_kappa, kappa_block, kappa_diag};
use crate::error::{Error, Result};
use crate::finite_model::{convergence_study, extrapolate_rungs, sqrt_ladder};
use crate::frequencies::{rho_star_estimate, FieldConfig};
use crate::interface::{EstimatorConfig, InteractionPoint, InterfaceEstimator};
use crate::noise::{BAND_SIGMAS, EXACT_TOL};
use crate::phases::{
    alpha_star, lower_bound_curve, trace_phase_diagram, transition_gap_probe, Phase, PhaseConfig, PhaseContext,
    TransitionKind,
};
use crate::solver::{solve_f_d1, solve_f_d2, solve_f_full, solve_f_l1, FieldSet, PhaseSolution, A_MAX};

/// Environment variable naming the `φ^I` cache file.
pub const CACHE_ENV: &str = "PHI_CACHE_PATH";

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_UNCERTAIN: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "emulsion", version, about = "Phase diagram of a directed copolymer in a random emulsion")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Oil density of the emulsion.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Diagonal `r = α − β`.
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Comma-separated values; meaning depends on the subcommand.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Disorder samples per `φ^I` estimate.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Block sizes of the `φ^I` extrapolation ladder.
    #[arg(long = "L-ladder", global = true, value_delimiter = ',')]
    pub l_ladder: Option<Vec<usize>>,
    /// Directory for output files; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// `φ^I` cache file (also `PHI_CACHE_PATH`).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// TOML file with defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Closed-form entropies κ(a, b), κ(a, 1), κ̂(μ) and G(μ, a).
    Entropy {
        #[arg(long = "kappa-diag", value_delimiter = ',')]
        kappa_diag: Vec<f64>,
        #[arg(long = "hat-kappa", value_delimiter = ',')]
        hat_kappa: Vec<f64>,
        /// Pairs `μ:a`.
        #[arg(long = "G", value_delimiter = ',')]
        g: Vec<String>,
        /// Pairs `a:b`.
        #[arg(long = "kappa", value_delimiter = ',')]
        kappa: Vec<String>,
    },
    /// Single-interface free energy `φ^I(μ)` on `--grid` slopes.
    Phi,
    /// Block-pair free energies on `--grid` aspect ratios.
    Blocks,
    /// Frequencies `(ρ*, ρ*_BA, ρ*_BB)` at `--p` (or each `--grid` value of p).
    Freq {
        #[command(flatten)]
        fields: FieldArgs,
    },
    /// The free energies `f_D1`, `f_D2`, `f_L1` and the sampled-path `f`.
    Solve {
        #[command(flatten)]
        fields: FieldArgs,
    },
    /// Critical curves on the `--grid` diagonals and a classified grid.
    Phase {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        betas: Option<Vec<f64>>,
        /// Exit 0 even when some cells are uncertain.
        #[arg(long)]
        allow_uncertain: bool,
        #[command(flatten)]
        fields: FieldArgs,
    },
    /// Free-energy gaps across a transition at `--grid` offsets.
    ProbeOrder {
        #[arg(long, value_enum)]
        kind: ProbeKind,
        #[command(flatten)]
        fields: FieldArgs,
    },
    /// Finite-size free energies against the sampled-path `f`.
    Validate {
        /// Path lengths; block sizes follow `L = √(n/8)`.
        #[arg(long = "n-ladder", value_delimiter = ',')]
        n_ladder: Option<Vec<usize>>,
        /// Number of seeds per rung.
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        /// Largest accepted `|mean − f|` at the top rung.
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        #[command(flatten)]
        fields: FieldArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
pub enum ProbeKind {
    #[value(name = "D1D2")]
    D1D2,
    #[value(name = "D1L1")]
    D1L1,
    #[value(name = "D2L1")]
    D2L1,
}

impl From<ProbeKind> for TransitionKind {
    fn from(k: ProbeKind) -> Self {
        match k {
            ProbeKind::D1D2 => TransitionKind::D1D2,
            ProbeKind::D1L1 => TransitionKind::D1L1,
            ProbeKind::D2L1 => TransitionKind::D2L1,
        }
    }
}

/// Sampled-field settings shared by the frequency-based subcommands.
#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    /// Side of the sampled block fields.
    #[arg(long)]
    pub m: Option<usize>,
    /// Moves per coarse path.
    #[arg(long)]
    pub t: Option<usize>,
    /// Number of sampled fields.
    #[arg(long)]
    pub fields: Option<usize>,
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub l_ladder: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub cache: Option<PathBuf>,
    pub estimator: Option<EstimatorConfig>,
    pub fields: Option<FieldConfig>,
    pub phase: Option<PhaseConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }
}

/// Fully resolved settings of one run; its hash identifies the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub p: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub fields: FieldConfig,
    pub phase: PhaseConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Subcommand-specific options.
    pub options: serde_json::Value,
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let file = match &cli.common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let c = &cli.common;
        let seed = c.seed.or(file.seed).unwrap_or(1);
        let mut estimator = file.estimator.clone().unwrap_or_default();
        if let Some(s) = c.samples.or(file.samples) {
            estimator.samples = s;
        }
        if let Some(l) = c.l_ladder.clone().or(file.l_ladder.clone()) {
            estimator.l_ladder = l;
        }
        if c.seed.is_some() || file.seed.is_some() {
            estimator.seed = seed;
        }
        // Slopes beyond half the shortest path are unreachable.
        let n_min = estimator.lengths().into_iter().min().unwrap_or(0) as f64;
        if n_min >= 2.0 {
            estimator.mu_max = estimator.mu_max.min(0.5 * n_min);
        }
        let mut fields = file.fields.clone().unwrap_or_default();
        if c.seed.is_some() || file.seed.is_some() {
            fields.seed = seed;
        }
        if let Some(fa) = field_args(&cli.command) {
            fields.m = fa.m.unwrap_or(fields.m);
            fields.t = fa.t.unwrap_or(fields.t);
            fields.fields = fa.fields.unwrap_or(fields.fields);
        }
        let cache = c
            .cache
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or(file.cache.clone());
        let cfg = RunConfig {
            command: command_name(&cli.command).to_string(),
            p: c.p.or(file.p).unwrap_or(0.3),
            alpha: c.alpha.or(file.alpha),
            beta: c.beta.or(file.beta),
            r: c.r.or(file.r),
            grid: c.grid.clone().or(file.grid.clone()),
            seed,
            estimator,
            fields,
            phase: file.phase.clone().unwrap_or_default(),
            format: c.format.or(file.format).unwrap_or(Format::Csv),
            out: c.out.clone().or(file.out.clone()),
            cache,
            options: command_options(&cli.command),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if let Some(g) = &self.grid {
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("grid must be a nonempty list of finite numbers".into()));
            }
        }
        self.estimator.validate()?;
        self.fields.validate()?;
        self.phase.validate()
    }

    /// SHA-256 of the canonical JSON form, excluding output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The interaction point from `--alpha/--beta`, or `(β + r, β)` with `β = 0` by default.
    pub fn point(&self) -> Result<InteractionPoint> {
        match (self.alpha, self.beta, self.r) {
            (Some(a), Some(b), _) => InteractionPoint::new(a, b),
            (None, b, Some(r)) => InteractionPoint::on_diagonal(r, b.unwrap_or(0.0)),
            (Some(a), None, Some(r)) => InteractionPoint::new(a, a - r),
            _ => Err(Error::Config("give --alpha and --beta, or --r (with optional --beta)".into())),
        }
    }

    fn estimator(&self) -> Result<InterfaceEstimator> {
        match &self.cache {
            Some(path) => InterfaceEstimator::with_cache_file(self.estimator.clone(), path),
            None => InterfaceEstimator::new(self.estimator.clone()),
        }
    }

    fn grid_or(&self, default: &[f64]) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| default.to_vec())
    }
}

fn field_args(cmd: &Command) -> Option<&FieldArgs> {
    match cmd {
        Command::Freq { fields }
        | Command::Solve { fields }
        | Command::Phase { fields, .. }
        | Command::ProbeOrder { fields, .. }
        | Command::Validate { fields, .. } => Some(fields),
        _ => None,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Entropy { .. } => "entropy",
        Command::Phi => "phi",
        Command::Blocks => "blocks",
        Command::Freq { .. } => "freq",
        Command::Solve { .. } => "solve",
        Command::Phase { .. } => "phase",
        Command::ProbeOrder { .. } => "probe-order",
        Command::Validate { .. } => "validate",
    }
}

fn command_options(cmd: &Command) -> serde_json::Value {
    use serde_json::json;
    match cmd {
        Command::Entropy { kappa_diag, hat_kappa, g, kappa } => {
            json!({ "kappa_diag": kappa_diag, "hat_kappa": hat_kappa, "G": g, "kappa": kappa })
        }
        Command::Phase { alphas, betas, allow_uncertain, .. } => {
            json!({ "alphas": alphas, "betas": betas, "allow_uncertain": allow_uncertain })
        }
        Command::ProbeOrder { kind, .. } => json!({ "kind": kind }),
        Command::Validate { n_ladder, seeds, tol, .. } => json!({ "n_ladder": n_ladder, "seeds": seeds, "tol": tol }),
        _ => json!({}),
    }
}

/// A cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(v) if v.is_finite() => serde_json::json!(v),
            Cell::Num(v) => serde_json::json!(v.to_string()),
            Cell::Int(v) => serde_json::json!(v),
            Cell::Text(s) => serde_json::json!(s),
            Cell::Bool(b) => serde_json::json!(b),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::text)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> =
                    self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "name": self.name, "columns": self.columns, "rows": rows })
    }
}

/// Tables and notes produced by one subcommand.
#[derive(Debug, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub uncertain: bool,
    /// Set when a check failed; the tables are still written.
    pub failure: Option<String>,
}

fn metadata(cfg: &RunConfig, report: &Report) -> serde_json::Value {
    serde_json::json!({
        "tool": "emulsion",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "tolerances": {
            "band_sigmas": BAND_SIGMAS,
            "exact_tol": EXACT_TOL,
            "a_max": A_MAX,
            "beta_tol": cfg.phase.beta_tol,
            "beta_max": cfg.phase.beta_max,
        },
        "uncertain": report.uncertain,
        "failure": report.failure,
        "notes": report.notes,
        "config": cfg,
    })
}

/// Writes the report to `out` (or to files under `cfg.out`).
pub fn emit(cfg: &RunConfig, report: &Report, out: &mut dyn Write) -> Result<()> {
    let meta = metadata(cfg, report);
    match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for t in &report.tables {
                let (file, body) = match cfg.format {
                    Format::Csv => (format!("{}.csv", t.name), t.to_csv()?),
                    Format::Json => (format!("{}.json", t.name), pretty(&t.to_json())),
                };
                fs::write(dir.join(&file), body)?;
            }
            fs::write(dir.join("metadata.json"), pretty(&meta))?;
        }
        None => match cfg.format {
            Format::Csv => {
                writeln!(out, "# metadata: {}", serde_json::to_string(&meta).expect("metadata serializes"))?;
                for t in &report.tables {
                    writeln!(out, "# table: {}", t.name)?;
                    out.write_all(t.to_csv()?.as_bytes())?;
                }
            }
            Format::Json => {
                let tables: Vec<_> = report.tables.iter().map(Table::to_json).collect();
                out.write_all(pretty(&serde_json::json!({ "metadata": meta, "tables": tables })).as_bytes())?;
            }
        },
    }
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("expected a pair like 1.5:3, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn cmd_entropy(kappa_diag_at: &[f64], hat_at: &[f64], g_at: &[String], kappa_at: &[String]) -> Result<Report> {
    let mut report = Report::default();
    if kappa_diag_at.is_empty() && hat_at.is_empty() && g_at.is_empty() && kappa_at.is_empty() {
        return Err(Error::Config("entropy needs at least one of --kappa-diag, --hat-kappa, --G, --kappa".into()));
    }
    if !kappa_diag_at.is_empty() {
        let mut t = Table::new("kappa_diag", &["a", "kappa"]);
        for &a in kappa_diag_at {
            t.push(vec![a.into(), kappa_diag(a)?.into()]);
        }
        report.tables.push(t);
    }
    if !kappa_at.is_empty() {
        let mut t = Table::new("kappa", &["a", "b", "kappa"]);
        for s in kappa_at {
            let (a, b) = parse_pair(s)?;
            t.push(vec![a.into(), b.into(), kappa_block(a, b)?.into()]);
        }
        report.tables.push(t);
    }
    if !hat_at.is_empty() {
        let mut t = Table::new("hat_kappa", &["mu", "hat_kappa"]);
        for &mu in hat_at {
            t.push(vec![mu.into(), hat_kappa(mu)?.into()]);
        }
        report.tables.push(t);
    }
    if !g_at.is_empty() {
        let mut t = Table::new("G", &["mu", "a", "G"]);
        for s in g_at {
            let (mu, a) = parse_pair(s)?;
            t.push(vec![mu.into(), a.into(), entropy_g(mu, a)?.into()]);
        }
        report.tables.push(t);
    }
    Ok(report)
}

fn cmd_phi(cfg: &RunConfig) -> Result<Report> {
    let point = cfg.point()?;
    let est = cfg.estimator()?;
    let mut t = Table::new(
        "phi",
        &["alpha", "beta", "mu", "phi", "stderr", "statistical", "systematic", "hat_kappa", "samples", "ladder"],
    );
    let mut report = Report::default();
    for mu in cfg.grid_or(&[1.0, 1.125, 1.5, 2.0, 4.0]) {
        let e = est.phi_i(point, mu)?;
        if e.stderr > cfg.estimator.stderr_warn {
            report.notes.push(format!("stderr {:.3e} at mu={mu} exceeds {}", e.stderr, cfg.estimator.stderr_warn));
        }
        t.push(vec![
            point.alpha.into(),
            point.beta.into(),
            mu.into(),
            e.value.into(),
            e.stderr.into(),
            e.statistical.into(),
            e.systematic.into(),
            hat_kappa(mu)?.into(),
            e.samples.into(),
            cfg.estimator.ladder_key().into(),
        ]);
    }
    report.tables.push(t);
    Ok(report)
}

fn cmd_blocks(cfg: &RunConfig) -> Result<Report> {
    let point = cfg.point()?;
    let r = point.r();
    let est = cfg.estimator()?;
    let phi = est.accessor(point)?;
    let mut t = Table::new(
        "blocks",
        &[
            "a",
            "psi_aa",
            "psi_bb",
            "psi_ba_hat",
            "psi_ab",
            "psi_ab_stderr",
            "psi_ba",
            "psi_ba_stderr",
            "ab_criterion",
            "ba_hat_criterion",
            "localized",
            "uncertain",
        ],
    );
    let mut uncertain = false;
    for a in cfg.grid_or(&[2.5, 3.0, 4.0, 6.0]) {
        let ab = psi_cross(CrossKind::AB, point, a, &*phi)?;
        let ba = psi_cross(CrossKind::BA, point, a, &*phi)?;
        let c_ab = excursion_criterion(point, a, Criterion::AbVsAa, &*phi)?;
        let c_ba = excursion_criterion(point, a, Criterion::BaHatVsBb, &*phi)?;
        let loc = localization_test(point, a, &*phi)?;
        let cell_uncertain = ab.uncertain || ba.uncertain || loc.sign == crate::noise::Sign::Uncertain;
        uncertain |= cell_uncertain;
        t.push(vec![
            a.into(),
            psi_aa(a)?.value.into(),
            psi_bb(r, a)?.value.into(),
            psi_ba_hat(r, a)?.value.into(),
            ab.value.into(),
            ab.stderr.into(),
            ba.value.into(),
            ba.stderr.into(),
            c_ab.margin.value.into(),
            c_ba.margin.value.into(),
            loc.localized().into(),
            cell_uncertain.into(),
        ]);
    }
    Ok(Report { tables: vec![t], uncertain, ..Default::default() })
}

fn cmd_freq(cfg: &RunConfig) -> Result<Report> {
    let mut t = Table::new(
        "frequencies",
        &["p", "rho_star", "rho_ba", "rho_bb", "rho_star_stderr", "rho_ba_stderr", "rho_bb_stderr"],
    );
    let ps = cfg.grid.clone().unwrap_or_else(|| vec![cfg.p]);
    for p in ps {
        let f = rho_star_estimate(p, &cfg.fields)?;
        t.push(vec![
            p.into(),
            f.rho_star.into(),
            f.rho_ba.into(),
            f.rho_bb.into(),
            f.stderr[0].into(),
            f.stderr[1].into(),
            f.stderr[2].into(),
        ]);
    }
    Ok(Report { tables: vec![t], ..Default::default() })
}

fn solution_row(s: &PhaseSolution) -> Vec<Cell> {
    let (b, c) = s.excursion.map_or((None, None), |e| (Some(e.b), Some(e.c)));
    vec![
        format!("{:?}", s.label).into(),
        s.value.into(),
        s.stderr.into(),
        s.x.into(),
        s.y.into(),
        s.z.into(),
        s.w.into(),
        b.into(),
        c.into(),
        s.frequencies.rho_star.into(),
        s.frequencies.rho_ba.into(),
        (s.trace.len() - 1).into(),
        (s.y_clusters.len() > 1).into(),
    ]
}

const SOLUTION_COLUMNS: [&str; 13] =
    ["kind", "f", "stderr", "x", "y", "z", "w", "b", "c", "rho_star", "rho_ba", "iterations", "multiple_y"];

fn cmd_solve(cfg: &RunConfig) -> Result<Report> {
    let point = cfg.point()?;
    let fields = FieldSet::sample(cfg.p, &cfg.fields)?;
    let rho = fields.frequencies()?;
    let est = cfg.estimator()?;
    let phi = est.accessor(point)?;
    let mut t = Table::new("solutions", &SOLUTION_COLUMNS);
    let solutions = [
        solve_f_d1(point.r(), &rho)?,
        solve_f_d2(point.r(), &rho)?,
        solve_f_l1(point, &rho, &*phi)?,
        solve_f_full(point, &fields, &*phi)?,
    ];
    let mut report = Report::default();
    for s in &solutions {
        if s.y_clusters.len() > 1 {
            report.notes.push(format!("{:?}: several maximizing y: {:?}", s.label, s.y_clusters));
        }
        t.push(solution_row(s));
    }
    report.tables.push(t);
    Ok(report)
}

fn cmd_phase(cfg: &RunConfig, alphas: &Option<Vec<f64>>, betas: &Option<Vec<f64>>, allow_uncertain: bool) -> Result<Report> {
    let fields = FieldSet::sample(cfg.p, &cfg.fields)?;
    let rho = fields.frequencies()?;
    let est = cfg.estimator()?;
    let ctx = PhaseContext { p: cfg.p, rho, estimator: &est, cfg: cfg.phase.clone() };
    let r_grid = cfg.grid_or(&[0.0, 0.05, 0.1, 0.5, 1.0, 2.0]);
    let alphas = alphas.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 3.0]);
    let betas = betas.clone().unwrap_or_else(|| vec![-0.5, 0.0, 0.5, 1.0, 2.0]);
    let diagram = trace_phase_diagram(&r_grid, &alphas, &betas, &ctx)?;
    let mut curves = Table::new("curves", &["curve", "r", "beta", "uncertainty", "lower", "upper", "censored", "lower_bound"]);
    for c in &diagram.curves {
        for s in &c.samples {
            curves.push(vec![
                c.kind.name().into(),
                s.r.into(),
                s.beta.into(),
                s.uncertainty.into(),
                s.lower.into(),
                s.upper.into(),
                s.censored.into(),
                lower_bound_curve(s.r)?.into(),
            ]);
        }
    }
    let mut grid = Table::new("grid", &["alpha", "beta", "r", "label", "candidates", "margins"]);
    for cell in &diagram.grid {
        let candidates: Vec<&str> = cell.candidates.iter().map(|c| c.name()).collect();
        let margins: Vec<String> = cell
            .margins
            .iter()
            .map(|m| format!("{}={}±{}", m.criterion, m.margin.value, m.margin.stderr))
            .collect();
        grid.push(vec![
            cell.point.alpha.into(),
            cell.point.beta.into(),
            cell.point.r().into(),
            cell.label.name().into(),
            candidates.join("|").into(),
            margins.join(";").into(),
        ]);
    }
    let mut summary = Table::new("summary", &["quantity", "value"]);
    summary.push(vec!["p".into(), cfg.p.into()]);
    summary.push(vec!["rho_star".into(), rho.rho_star.into()]);
    summary.push(vec!["rho_ba".into(), rho.rho_ba.into()]);
    summary.push(vec!["alpha_star".into(), diagram.alpha_star.alpha.into()]);
    summary.push(vec!["alpha_star_residual".into(), diagram.alpha_star.residual.into()]);
    if let Some((a, b)) = diagram.tricritical() {
        summary.push(vec!["tricritical_alpha".into(), a.into()]);
        summary.push(vec!["tricritical_beta".into(), b.into()]);
    }
    let uncertain = diagram.has_uncertain();
    let mut notes = vec!["L1/L2 labels are exploratory: the boundary between them is conjectural".to_string()];
    let skipped = alphas.len() * betas.len() - diagram.grid.len();
    if skipped > 0 {
        notes.push(format!("{skipped} grid points outside the cone alpha >= |beta| were skipped"));
    }
    if uncertain {
        let n = diagram.grid.iter().filter(|c| c.label == Phase::Uncertain).count();
        notes.push(format!("{n} grid cells are UNCERTAIN"));
    }
    Ok(Report { tables: vec![summary, curves, grid], notes, uncertain: uncertain && !allow_uncertain, failure: None })
}

fn cmd_probe(cfg: &RunConfig, kind: ProbeKind) -> Result<Report> {
    let fields = FieldSet::sample(cfg.p, &cfg.fields)?;
    let rho = fields.frequencies()?;
    let est = cfg.estimator()?;
    let ctx = PhaseContext { p: cfg.p, rho, estimator: &est, cfg: cfg.phase.clone() };
    let star = alpha_star(cfg.p, &rho)?;
    let r = match kind {
        ProbeKind::D1D2 => star.alpha,
        _ => cfg.r.ok_or_else(|| Error::Config("probe-order D1L1/D2L1 needs --r".into()))?,
    };
    let deltas = cfg.grid_or(&[0.02, 0.04, 0.06, 0.08, 0.1]);
    let probe = transition_gap_probe(kind.into(), r, star.alpha, &deltas, &ctx)?;
    let mut t = Table::new("gaps", &["delta", "gap", "stderr", "gap_over_delta", "gap_over_delta_sq", "noise_dominated"]);
    for row in &probe.rows {
        t.push(vec![
            row.delta.into(),
            row.gap.into(),
            row.stderr.into(),
            row.over_delta().into(),
            row.over_delta_sq().into(),
            row.noise_dominated.into(),
        ]);
    }
    let mut s = Table::new("summary", &["quantity", "value"]);
    s.push(vec!["kind".into(), probe.kind.name().into()]);
    s.push(vec!["alpha_star".into(), star.alpha.into()]);
    s.push(vec!["r".into(), probe.r.into()]);
    s.push(vec!["beta_c".into(), probe.beta_c.into()]);
    if let (Some((d1, d2)), Some((e1, e2))) = (probe.taylor, probe.taylor_drift) {
        s.push(vec!["f_d1_prime".into(), d1.into()]);
        s.push(vec!["f_d1_second".into(), d2.into()]);
        s.push(vec!["f_d1_prime_drift".into(), e1.into()]);
        s.push(vec!["f_d1_second_drift".into(), e2.into()]);
    }
    if let Some(order) = effective_order(&probe.rows) {
        s.push(vec!["effective_order".into(), order.into()]);
    }
    let uncertain = probe.rows.iter().any(|r| r.noise_dominated);
    Ok(Report { tables: vec![s, t], uncertain, ..Default::default() })
}

/// Least-squares slope of `log gap` against `log δ` over positive gaps.
pub fn effective_order(rows: &[crate::phases::GapRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.gap > 0.0).map(|r| (r.delta.ln(), r.gap.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Default points of `validate`: inside the annealed region, where `φ^I` is exact.
pub const VALIDATION_POINTS: [(f64, f64); 3] = [(0.5, 0.1), (1.0, 0.2), (1.5, 0.3)];

fn cmd_validate(cfg: &RunConfig, n_ladder: &Option<Vec<usize>>, seeds: usize, tol: f64) -> Result<Report> {
    if seeds == 0 || !(tol > 0.0) {
        return Err(Error::Config("validate needs --seeds >= 1 and --tol > 0".into()));
    }
    let ladder = sqrt_ladder(&n_ladder.clone().unwrap_or_else(|| vec![128, 512, 2048]));
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| cfg.seed + i).collect();
    let points: Vec<InteractionPoint> = match (cfg.alpha, cfg.beta) {
        (Some(a), Some(b)) => vec![InteractionPoint::new(a, b)?],
        _ => VALIDATION_POINTS.iter().map(|&(a, b)| InteractionPoint::new(a, b)).collect::<Result<_>>()?,
    };
    let fields = FieldSet::sample(cfg.p, &cfg.fields)?;
    let est = cfg.estimator()?;
    let mut rungs = Table::new("rungs", &["alpha", "beta", "n", "L", "mean", "spread", "stderr"]);
    let mut checks = Table::new(
        "checks",
        &["alpha", "beta", "top_mean", "extrapolated", "f_full", "f_full_stderr", "difference", "spread_shrinks", "pass"],
    );
    let mut failures = Vec::new();
    for point in points {
        let study = convergence_study(point, cfg.p, &ladder, &seed_list)?;
        for r in &study {
            rungs.push(vec![
                point.alpha.into(),
                point.beta.into(),
                r.n.into(),
                r.l.into(),
                r.mean.into(),
                r.spread.into(),
                r.stderr.into(),
            ]);
        }
        let phi = est.accessor(point)?;
        let full = solve_f_full(point, &fields, &*phi)?;
        let top = study.last().expect("nonempty ladder");
        // Reported only: with small L the log(L)/L fit overshoots.
        let extrapolated = extrapolate_rungs(&study);
        let diff = top.mean - full.value;
        let shrinks = study.windows(2).all(|w| w[1].spread <= w[0].spread);
        let pass = diff.abs() <= tol;
        if !pass {
            failures.push(format!("({}, {}): |{diff:.4}| > {tol}", point.alpha, point.beta));
        }
        checks.push(vec![
            point.alpha.into(),
            point.beta.into(),
            top.mean.into(),
            extrapolated.into(),
            full.value.into(),
            full.stderr.into(),
            diff.into(),
            shrinks.into(),
            pass.into(),
        ]);
    }
    let failure = (!failures.is_empty()).then(|| format!("validation tolerance exceeded: {}", failures.join("; ")));
    Ok(Report { tables: vec![rungs, checks], failure, ..Default::default() })
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<Report> {
    match &cli.command {
        Command::Entropy { kappa_diag, hat_kappa, g, kappa } => cmd_entropy(kappa_diag, hat_kappa, g, kappa),
        Command::Phi => cmd_phi(cfg),
        Command::Blocks => cmd_blocks(cfg),
        Command::Freq { .. } => cmd_freq(cfg),
        Command::Solve { .. } => cmd_solve(cfg),
        Command::Phase { alphas, betas, allow_uncertain, .. } => cmd_phase(cfg, alphas, betas, *allow_uncertain),
        Command::ProbeOrder { kind, .. } => cmd_probe(cfg, *kind),
        Command::Validate { n_ladder, seeds, tol, .. } => cmd_validate(cfg, n_ladder, *seeds, *tol),
    }
}

/// Runs the command line `args`, writing tables to `out` and diagnostics to
/// `err`; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = RunConfig::resolve(&cli).and_then(|cfg| {
        let report = execute(&cli, &cfg)?;
        emit(&cfg, &report, out)?;
        Ok(report)
    });
    match result {
        Ok(report) => {
            for note in &report.notes {
                let _ = writeln!(err, "note: {note}");
            }
            if let Some(f) = &report.failure {
                let _ = writeln!(err, "error: {f}");
                EXIT_ERROR
            } else if report.uncertain {
                EXIT_UNCERTAIN
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}
