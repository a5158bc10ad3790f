//! Config-driven studies. Each study kind runs a batch of computations,
//! writes CSV tables and per-run series, checkpoints and a JSON summary with
//! one verdict per acceptance criterion it covers.
//!
//! Output layout under the study directory:
//!
//! - `config.json`: the resolved configuration
//! - `summary.json`: verdicts, fitted rates, run outcomes, artifact list
//! - `<table>.csv`: study-level tables
//! - `<run>/series.csv`, `<run>/final.eplb`, `<run>/checkpoint_NNNNN.eplb`
//! - `plot/*.csv`: long-format plot tables
//!
//! Every CSV starts with the line `# eplb-csv v1`, then a header row.
//! The per-run series columns are `t, step, dt, max_speed`, then for each
//! species prefix (`ion_`, `electron_`) the raw norms `n_inf, v_inf, w_inf,
//! n_q, x_dot_1, x_dot_s, grad_phi_inf, grad_phi_l2`, the weighted
//! quantities `wn_inf, wv_inf, wn_q, y_dot_1, y_dot_s, y_tilde, y` and
//! `support_radius, support_bound, mass, negative_cells, min_density`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::burgers::{decay_norms_u_hat, BurgersInitial};
use crate::checkpoint;
use crate::diagnostics::{error_vs_limit, fit_decay_rate, fit_loglog, ode_inequality_report, ErrorRow, HdotMethod, RateFit};
use crate::error::{Error, Result};
use crate::grid::{interpolate, laplacian_7pt, GridField, GridSpec, StencilOrder};
use crate::limit::ExactIonDensity;
use crate::model::{DensityKind, DensityProfile, SymmState};
use crate::params::{FluidParams, Species};
use crate::poisson::{rhs_from_densities, sphere_flux, FreeSpacePoisson, BOUNDARY_MARGIN};
use crate::solver::{BipolarSolver, RunOutput, RunRecord, SolverConfig};

pub const CSV_HEADER: &str = "# eplb-csv v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    BurgersCheck,
    PoissonCheck,
    DecayStudy,
    EpsilonSweep,
    TruncationStudy,
    SelfConvergence,
}

impl StudyKind {
    pub const ALL: [StudyKind; 6] = [
        StudyKind::BurgersCheck,
        StudyKind::PoissonCheck,
        StudyKind::DecayStudy,
        StudyKind::EpsilonSweep,
        StudyKind::TruncationStudy,
        StudyKind::SelfConvergence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::BurgersCheck => "burgers-check",
            StudyKind::PoissonCheck => "poisson-check",
            StudyKind::DecayStudy => "decay-study",
            StudyKind::EpsilonSweep => "epsilon-sweep",
            StudyKind::TruncationStudy => "truncation-study",
            StudyKind::SelfConvergence => "self-convergence",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.as_str()).collect();
            Error::Config(format!("unknown study kind `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesPair<T> {
    pub ion: T,
    pub electron: T,
}

impl<T> SpeciesPair<T> {
    pub fn get(&self, species: Species) -> &T {
        match species {
            Species::Ion => &self.ion,
            Species::Electron => &self.electron,
        }
    }
}

/// Solver settings shared by every run of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverKnobs {
    pub artificial_viscosity: f64,
    pub stencil: StencilOrder,
    pub record_every: usize,
    pub undershoot_tolerance: f64,
    pub clip_negative: bool,
    pub support_threshold: f64,
    pub hdot_method: HdotMethod,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        let c = SolverConfig::new(0.0);
        Self {
            artificial_viscosity: c.artificial_viscosity,
            stencil: c.stencil,
            record_every: c.record_every,
            undershoot_tolerance: c.undershoot_tolerance,
            clip_negative: c.clip_negative,
            support_threshold: c.support_threshold,
            hdot_method: c.hdot_method,
        }
    }
}

fn default_cfl() -> f64 {
    0.4
}
fn default_decay_window() -> [f64; 2] {
    [1.0, 50.0]
}
fn default_decay_samples() -> usize {
    12
}
fn default_samples() -> usize {
    200
}
fn default_time_levels() -> usize {
    3
}
fn default_kappa() -> f64 {
    1e-6
}

/// A study description. Which fields are required depends on the kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Optional; when present it must agree with the requested kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<StudyKind>,
    pub grid: GridSpec,
    #[serde(default)]
    pub params: FluidParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<SpeciesPair<BurgersInitial>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<SpeciesPair<DensityProfile>>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Truncation radii N.
    #[serde(default)]
    pub truncations: Vec<f64>,
    /// Cells per axis of the self-convergence grids, or of the manufactured
    /// Poisson problems.
    #[serde(default)]
    pub grids: Vec<usize>,
    /// Sample times of burgers-check and truncation-study.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Rate-fit window for PDE series; defaults to [T/2, T].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_decay_window")]
    pub decay_window: [f64; 2],
    #[serde(default = "default_decay_samples")]
    pub decay_samples: usize,
    /// Number of random oracle points of poisson-check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Number of step sizes of the temporal refinement (each half the last).
    #[serde(default = "default_time_levels")]
    pub time_levels: usize,
    /// Required distance of spec(∇u⁰) from the non-positive real axis.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seed for sample-point selection only.
    #[serde(default)]
    pub seed: u64,
    /// Write a checkpoint every this many records (final state always).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub solver: SolverKnobs,
}

fn config_err(key: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {msg}"))
}

impl StudyConfig {
    /// Minimal config on `grid`; everything else at defaults.
    pub fn new(grid: GridSpec) -> Self {
        Self {
            kind: None,
            grid,
            params: FluidParams::default(),
            flow: None,
            density: None,
            epsilons: Vec::new(),
            truncations: Vec::new(),
            grids: Vec::new(),
            times: Vec::new(),
            t_final: None,
            cfl: default_cfl(),
            window: None,
            decay_window: default_decay_window(),
            decay_samples: default_decay_samples(),
            samples: default_samples(),
            time_levels: default_time_levels(),
            kappa: default_kappa(),
            output_dir: None,
            seed: 0,
            checkpoint_every: None,
            solver: SolverKnobs::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid study config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fills kind-specific defaults.
    pub fn resolved(&self, kind: StudyKind) -> Self {
        let mut c = self.clone();
        c.kind = Some(kind);
        if c.times.is_empty() {
            c.times = match kind {
                StudyKind::BurgersCheck => vec![0.0, 1.0, 5.0, 20.0],
                StudyKind::TruncationStudy => vec![0.0, 1.0, 4.0],
                _ => Vec::new(),
            };
        }
        if kind == StudyKind::PoissonCheck && c.grids.is_empty() {
            c.grids = vec![c.grid.cells];
        }
        if matches!(kind, StudyKind::DecayStudy | StudyKind::EpsilonSweep) && c.window.is_none() {
            if let Some(t) = c.t_final {
                c.window = Some([0.5 * t, t]);
            }
        }
        c
    }

    fn flow(&self) -> Result<&SpeciesPair<BurgersInitial>> {
        self.flow.as_ref().ok_or_else(|| config_err("flow", "required by this study kind"))
    }

    fn density(&self) -> Result<&SpeciesPair<DensityProfile>> {
        self.density.as_ref().ok_or_else(|| config_err("density", "required by this study kind"))
    }

    fn t_final(&self) -> Result<f64> {
        match self.t_final {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(config_err("t_final", format!("must be positive and finite, got {t}"))),
            None => Err(config_err("t_final", "required by this study kind")),
        }
    }

    /// Checks the fields the given kind uses.
    pub fn validate(&self, kind: StudyKind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(config_err("kind", format!("config declares {k} but {kind} was requested")));
            }
        }
        self.grid.validate().map_err(|e| config_err("grid", e))?;
        self.params.validate().map_err(|e| config_err("params", e))?;
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(config_err("cfl", format!("must lie in (0, 1), got {}", self.cfl)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(config_err("checkpoint_every", "must be at least 1"));
        }
        self.solver_config(1.0).validate().map_err(|e| config_err("solver", e))?;
        let needs_pde = matches!(
            kind,
            StudyKind::DecayStudy | StudyKind::EpsilonSweep | StudyKind::TruncationStudy | StudyKind::SelfConvergence
        );
        if needs_pde || kind == StudyKind::BurgersCheck {
            let flow = self.flow()?;
            for species in Species::BOTH {
                flow.get(species)
                    .check_kappa(self.grid.points(), self.kappa)
                    .map_err(|e| config_err(&format!("flow.{species}"), e))?;
            }
        }
        if needs_pde {
            self.t_final()?;
            let density = self.density()?;
            for species in Species::BOTH {
                density.get(species).validate().map_err(|e| config_err(&format!("density.{species}"), e))?;
            }
        }
        if let Some(d) = &self.density {
            for species in Species::BOTH {
                d.get(species).validate().map_err(|e| config_err(&format!("density.{species}"), e))?;
            }
        }
        match kind {
            StudyKind::BurgersCheck => {
                if self.times.iter().any(|t| !(*t >= 0.0)) {
                    return Err(config_err("times", "sample times must be nonnegative"));
                }
                let [lo, hi] = self.decay_window;
                if !(lo >= 0.0 && hi > lo) {
                    return Err(config_err("decay_window", format!("need 0 <= lo < hi, got [{lo}, {hi}]")));
                }
                if self.decay_samples < 5 {
                    return Err(config_err("decay_samples", "need at least 5 samples for a rate fit"));
                }
            }
            StudyKind::PoissonCheck => {
                if self.samples == 0 {
                    return Err(config_err("samples", "must be at least 1"));
                }
                for &n in &self.grids {
                    GridSpec::new(self.grid.half_length, n).map_err(|e| config_err("grids", e))?;
                }
            }
            StudyKind::DecayStudy => {}
            StudyKind::EpsilonSweep => {
                if self.epsilons.len() < 2 {
                    return Err(config_err("epsilons", "need at least two values"));
                }
                if self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                    return Err(config_err("epsilons", "values must lie in (0, 1]"));
                }
            }
            StudyKind::TruncationStudy => {
                if self.truncations.is_empty() {
                    return Err(config_err("truncations", "need at least one radius N"));
                }
                if self.truncations.iter().any(|n| !(*n >= 1.0)) {
                    return Err(config_err("truncations", "radii must be at least 1"));
                }
                if self.times.iter().any(|t| !(*t >= 0.0)) {
                    return Err(config_err("times", "sample times must be nonnegative"));
                }
            }
            StudyKind::SelfConvergence => {
                if self.grids.len() < 3 {
                    return Err(config_err("grids", "need at least three grids"));
                }
                if self.grids.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(config_err("grids", "cell counts must increase strictly"));
                }
                for &n in &self.grids {
                    GridSpec::new(self.grid.half_length, n).map_err(|e| config_err("grids", e))?;
                }
                if self.time_levels < 3 {
                    return Err(config_err("time_levels", "need at least three step sizes"));
                }
            }
        }
        Ok(())
    }

    pub fn solver_config(&self, t_final: f64) -> SolverConfig {
        let k = &self.solver;
        SolverConfig {
            cfl: self.cfl,
            t_final,
            artificial_viscosity: k.artificial_viscosity,
            stencil: k.stencil,
            truncation: None,
            record_every: k.record_every,
            fixed_dt: None,
            undershoot_tolerance: k.undershoot_tolerance,
            clip_negative: k.clip_negative,
            support_threshold: k.support_threshold,
            hdot_method: k.hdot_method,
            record_norms: true,
        }
    }

    /// Densities sampled on `spec`, at rest.
    pub fn initial_state(&self, spec: &GridSpec) -> Result<SymmState> {
        let d = self.density()?;
        let n_i = d.ion.sample_n(spec, &self.params.ion);
        let n_e = d.electron.sample_n(spec, &self.params.electron);
        SymmState::at_rest(n_i, n_e, 0.0)
    }

    pub fn bipolar_solver(&self, spec: GridSpec, params: FluidParams, config: SolverConfig) -> Result<BipolarSolver> {
        let flow = self.flow()?;
        BipolarSolver::new(spec, params, config, flow.ion.clone(), flow.electron.clone())
    }
}

/// Output directory precedence: explicit flag, then `EPLB_OUT`, then the
/// config, then `eplb-out`.
pub fn resolve_output_root(flag: Option<&Path>, env: Option<&std::ffi::OsStr>, config: &StudyConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("eplb-out"))
}

/// Verdict on one acceptance criterion.
#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: String,
    pub detail: String,
}

impl Criterion {
    fn at_most(name: &str, measured: f64, limit: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured <= limit,
            measured,
            threshold: format!("<= {limit:e}"),
            detail,
        }
    }

    fn at_least(name: &str, measured: f64, limit: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured >= limit,
            measured,
            threshold: format!(">= {limit}"),
            detail,
        }
    }

    fn within(name: &str, measured: f64, lo: f64, hi: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured >= lo && measured <= hi,
            measured,
            threshold: format!("in [{lo}, {hi}]"),
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub cells: usize,
    pub steps: usize,
    pub t_end: f64,
    pub error: Option<String>,
}

/// A CSV table with preformatted cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses a table written by [`to_csv`](Self::to_csv).
    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Config(format!("{name}: empty table")))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(Error::Config(format!("{name}: row {} has {} cells, expected {}", i + 1, row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(Self {
            name: name.into(),
            columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some(self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect())
    }
}

/// Shortest round-trip scientific notation.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

const SPECIES_COLUMNS: [&str; 20] = [
    "n_inf",
    "v_inf",
    "w_inf",
    "n_q",
    "x_dot_1",
    "x_dot_s",
    "grad_phi_inf",
    "grad_phi_l2",
    "wn_inf",
    "wv_inf",
    "wn_q",
    "y_dot_1",
    "y_dot_s",
    "y_tilde",
    "y",
    "support_radius",
    "support_bound",
    "mass",
    "negative_cells",
    "min_density",
];

/// The per-run series table.
pub fn series_table(record: &RunRecord) -> Table {
    let mut cols: Vec<String> = ["t", "step", "dt", "max_speed"].iter().map(|s| s.to_string()).collect();
    for species in Species::BOTH {
        for c in SPECIES_COLUMNS {
            cols.push(format!("{species}_{c}"));
        }
    }
    let mut table = Table {
        name: "series".into(),
        columns: cols,
        rows: Vec::new(),
    };
    for k in 0..record.times.len() {
        let mut row = vec![num(record.times[k]), record.steps[k].to_string(), num(record.dt[k]), num(record.max_speed[k])];
        for species in Species::BOTH {
            let r = &record.species(species)[k];
            let (n, w) = (&r.norms, &r.weighted);
            for v in [
                n.n_inf,
                n.v_inf,
                n.w_inf,
                n.n_q,
                n.x_dot_1,
                n.x_dot_s,
                n.grad_phi_inf,
                n.grad_phi_l2,
                w.n_inf,
                w.v_inf,
                w.n_q,
                w.y_dot_1,
                w.y_dot_s,
                w.y_tilde,
                w.y,
                r.support_radius,
                r.support_bound,
                r.mass,
            ] {
                row.push(num(v));
            }
            row.push(r.negative_cells.to_string());
            row.push(num(r.min_density));
        }
        table.push(row);
    }
    table
}

/// Result of a study before it is written to disk.
pub struct StudyOutcome {
    pub kind: StudyKind,
    pub criteria: Vec<Criterion>,
    pub fits: Map<String, Value>,
    pub runs: Vec<RunSummary>,
    pub tables: Vec<Table>,
    /// Named PDE runs whose series are written as `<name>/series.csv`.
    pub series: Vec<(String, RunRecord)>,
    /// Final states of the named runs.
    pub states: Vec<(String, SymmState)>,
    pub error: Option<String>,
}

impl StudyOutcome {
    fn new(kind: StudyKind) -> Self {
        Self {
            kind,
            criteria: Vec::new(),
            fits: Map::new(),
            runs: Vec::new(),
            tables: Vec::new(),
            series: Vec::new(),
            states: Vec::new(),
            error: None,
        }
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.error.is_none() && self.criteria.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            2
        } else if self.criteria.iter().all(|c| c.passed) {
            0
        } else {
            1
        }
    }

    pub fn record(&self, name: &str) -> Option<&RunRecord> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn state(&self, name: &str) -> Option<&SymmState> {
        self.states.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    fn add_run(&mut self, name: &str, out: RunOutput) {
        self.runs.push(RunSummary {
            name: name.into(),
            cells: out.state.spec().cells,
            steps: out.steps,
            t_end: out.state.t,
            error: out.error.as_ref().map(|e| e.to_string()),
        });
        if let Some(e) = &out.error {
            let msg = format!("run {name}: {e}");
            self.error = Some(match self.error.take() {
                Some(prev) => format!("{prev}; {msg}"),
                None => msg,
            });
        }
        self.series.push((name.into(), out.record));
        self.states.push((name.into(), out.state));
    }

    fn fit(&mut self, key: &str, fit: &RateFit) {
        self.fits.insert(key.into(), serde_json::to_value(fit).unwrap_or(Value::Null));
    }
}

/// Where runs write checkpoints, if anywhere.
#[derive(Clone, Debug, Default)]
pub struct ArtifactSink {
    pub dir: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl ArtifactSink {
    fn run_dir(&self, name: &str) -> Result<Option<PathBuf>> {
        match &self.dir {
            Some(d) => {
                let p = d.join(name);
                std::fs::create_dir_all(&p)?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    }
}

fn run_bipolar(sink: &ArtifactSink, name: &str, solver: &BipolarSolver, initial: SymmState) -> Result<RunOutput> {
    let dir = sink.run_dir(name)?;
    let params = solver.params.clone();
    let every = sink.checkpoint_every;
    let started = Instant::now();
    let out = solver.run_with(initial, |i, state| {
        if let (Some(d), Some(k)) = (&dir, every) {
            if i % k == 0 {
                checkpoint::save(d.join(format!("checkpoint_{i:05}.eplb")), state, &params)?;
            }
        }
        Ok(())
    })?;
    if let Some(d) = &dir {
        checkpoint::save(d.join("final.eplb"), &out.state, &params)?;
    }
    log::info!("run {name}: {} steps to t = {} in {:.1?}", out.steps, out.state.t, started.elapsed());
    Ok(out)
}

/// max_k |m(t_k)/m(0) − 1| / t_last.
pub fn mass_drift_rate(record: &RunRecord, species: Species) -> f64 {
    let rows = record.species(species);
    let (Some(first), Some(t_last)) = (rows.first(), record.times.last()) else {
        return 0.0;
    };
    if first.mass == 0.0 || *t_last <= 0.0 {
        return 0.0;
    }
    rows.iter().map(|r| (r.mass / first.mass - 1.0).abs()).fold(0.0, f64::max) / t_last
}

/// Discrete L² distance between `coarse` and `fine` sampled at the coarse
/// points, the fine fields interpolated with six-point Lagrange stencils.
pub fn state_distance(coarse: &SymmState, fine: &SymmState) -> f64 {
    let spec = coarse.spec();
    let fs = fine.spec();
    let mut acc = 0.0;
    for ((_, c), (_, f)) in coarse.field_blocks().into_iter().zip(fine.field_blocks()) {
        for comp in 0..c.components {
            let src = f.component(comp);
            for (idx, v) in c.component(comp).iter().enumerate() {
                let d = v - interpolate(&fs, src, spec.point(idx), 6);
                acc += d * d;
            }
        }
    }
    (acc * spec.cell_volume()).sqrt()
}

/// Discrete L² norm of the difference of two states on one grid.
pub fn state_l2_diff(a: &SymmState, b: &SymmState) -> f64 {
    let mut acc = 0.0;
    for ((_, x), (_, y)) in a.field_blocks().into_iter().zip(b.field_blocks()) {
        acc += x.data.iter().zip(&y.data).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    }
    (acc * a.spec().cell_volume()).sqrt()
}

/// Order p with e₀/e₁ = (h₀^p − h₂^p)/(h₁^p − h₂^p): errors of two coarse
/// grids measured against the finest grid h₂.
pub fn richardson_order(h: [f64; 3], e: [f64; 2]) -> Option<f64> {
    if !(e[0] > 0.0 && e[1] > 0.0 && h[0] > h[1] && h[1] > h[2]) {
        return None;
    }
    let target = e[0] / e[1];
    let g = |p: f64| (h[0].powf(p) - h[2].powf(p)) / (h[1].powf(p) - h[2].powf(p));
    let (mut lo, mut hi) = (1e-3, 20.0);
    if target < g(lo) || target > g(hi) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn distinct_flows(cfg: &StudyConfig) -> Result<Vec<(String, BurgersInitial)>> {
    let flow = cfg.flow()?;
    let mut out = vec![("ion".to_string(), flow.ion.clone())];
    if flow.electron != flow.ion {
        out.push(("electron".to_string(), flow.electron.clone()));
    }
    Ok(out)
}

/// Closed form of (û, ∇û) for affine data u⁰ = A x + b.
fn affine_closed_form(u0: &BurgersInitial, t: f64, x: [f64; 3]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let a = Matrix3::from_fn(|i, j| u0.a[i][j]);
    let m = Matrix3::identity() + a * t;
    let inv = m.try_inverse()?;
    let xv = Vector3::from(x);
    let b = Vector3::from(u0.b);
    Some((inv * (a * xv + b), inv * a))
}

pub fn burgers_check(cfg: &StudyConfig) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::new(StudyKind::BurgersCheck);
    let spec = cfg.grid;
    let mut exact = Table::new("burgers_exactness", &["flow", "t", "u_error", "k_error", "k_max", "footpoint_residual"]);
    let mut worst_affine = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut any_affine = false;
    let mut decay = Table::new("burgers_decay", &["flow", "t", "hessian_inf", "hessian_l2"]);
    for (name, u0) in distinct_flows(cfg)? {
        let affine = u0.perturbation.is_none();
        any_affine |= affine;
        for &t in &cfg.times {
            let (mut u_err, mut k_err, mut k_max, mut res) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let s = 1.0 + t;
            for x in spec.points() {
                let sol = u0.eval_x0(t, x)?;
                res = res.max(sol.residual);
                let (u, g) = u0.u_hat_and_grad(t, x)?;
                let k = g * (s * s) - Matrix3::identity() * s;
                k_max = k_max.max(k.norm());
                if affine {
                    if let Some((uc, gc)) = affine_closed_form(&u0, t, x) {
                        u_err = u_err.max((Vector3::from(u) - uc).norm());
                        let kc = gc * (s * s) - Matrix3::identity() * s;
                        k_err = k_err.max((k - kc).norm());
                    }
                }
            }
            if affine {
                worst_affine = worst_affine.max(u_err).max(k_err);
            }
            worst_residual = worst_residual.max(res);
            exact.push(vec![name.clone(), num(t), num(u_err), num(k_err), num(k_max), num(res)]);
        }
        if !affine {
            let [lo, hi] = cfg.decay_window;
            let m = cfg.decay_samples;
            let ts: Vec<f64> = (0..m)
                .map(|i| {
                    let (a, b) = ((1.0 + lo).ln(), (1.0 + hi).ln());
                    (a + (b - a) * i as f64 / (m - 1) as f64).exp() - 1.0
                })
                .collect();
            let rows = decay_norms_u_hat(&u0, &ts, &[2], &spec)?;
            let hess_inf: Vec<f64> = rows.iter().map(|r| r.hess_inf).collect();
            let hess_l2: Vec<f64> = rows.iter().map(|r| r.hdot[0]).collect();
            for r in &rows {
                decay.push(vec![name.clone(), num(r.t), num(r.hess_inf), num(r.hdot[0])]);
            }
            let window = (ts[0] - 1e-12, ts[m - 1] + 1e-12);
            let fi = fit_decay_rate(&ts, &hess_inf, window)?;
            let f2 = fit_decay_rate(&ts, &hess_l2, window)?;
            out.fit(&format!("{name}_hessian_inf"), &fi);
            out.fit(&format!("{name}_hessian_l2"), &f2);
            out.criteria.push(Criterion::within(
                &format!("burgers-decay-hessian-inf-{name}"),
                fi.slope,
                -3.3,
                -2.7,
                format!("slope of |D²û|_inf against 1+t over t in [{lo}, {hi}], residual {:e}", fi.residual),
            ));
            out.criteria.push(Criterion::within(
                &format!("burgers-decay-hessian-l2-{name}"),
                f2.slope,
                -2.8,
                -2.2,
                format!("slope of |D²û|_2 against 1+t over t in [{lo}, {hi}], residual {:e}", f2.residual),
            ));
        }
    }
    if any_affine {
        out.criteria.push(Criterion::at_most(
            "burgers-exactness",
            worst_affine,
            1e-10,
            "max |û − closed form| and max |K − closed form| over grid and sample times".into(),
        ));
    }
    out.criteria.push(Criterion::at_most(
        "burgers-footpoint",
        worst_residual,
        1e-10,
        "max |x₀ + t u⁰(x₀) − x| of the foot-point solves".into(),
    ));
    out.tables.push(exact);
    if !decay.rows.is_empty() {
        out.tables.push(decay);
    }
    Ok(out)
}

/// Test potential e^{−|x−c|²/σ²} with σ = 0.16 L and its Laplacian.
fn manufactured(spec: &GridSpec) -> (impl Fn([f64; 3]) -> f64, impl Fn([f64; 3]) -> f64) {
    let l = spec.half_length;
    let sigma = 0.16 * l;
    let c = [0.05 * l, -0.03 * l, 0.02 * l];
    let r2 = move |x: [f64; 3]| (0..3).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>();
    let phi = move |x: [f64; 3]| (-r2(x) / (sigma * sigma)).exp();
    let lap = move |x: [f64; 3]| {
        let s2 = sigma * sigma;
        (4.0 * r2(x) / (s2 * s2) - 6.0 / s2) * (-r2(x) / s2).exp()
    };
    (phi, lap)
}

/// Default charge for poisson-check when the config has no densities.
fn default_density(spec: &GridSpec) -> SpeciesPair<DensityProfile> {
    let l = spec.half_length;
    let p = |amplitude: f64, width: f64, center: [f64; 3]| DensityProfile {
        kind: DensityKind::SoundSpeedBump,
        amplitude,
        width,
        center,
    };
    SpeciesPair {
        ion: p(0.5, 0.45 * l, [0.1 * l, 0.0, 0.0]),
        electron: p(0.4, 0.35 * l, [-0.1 * l, 0.05 * l, 0.0]),
    }
}

pub fn poisson_check(cfg: &StudyConfig) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::new(StudyKind::PoissonCheck);
    let spec = cfg.grid;
    let density = cfg.density.clone().unwrap_or_else(|| default_density(&spec));
    let n_i = density.ion.sample_n(&spec, &cfg.params.ion);
    let n_e = density.electron.sample_n(&spec, &cfg.params.electron);
    let rhs = rhs_from_densities(&n_i.data, &n_e.data, &spec, &cfg.params)?;
    let solver = FreeSpacePoisson::new(spec);
    let sol = solver.solve_rhs(&rhs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (BOUNDARY_MARGIN, spec.cells - BOUNDARY_MARGIN);
    let cells: Vec<[usize; 3]> = (0..cfg.samples)
        .map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)])
        .collect();
    let oracle = solver.oracle_quadrature(&rhs, &cells);
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut table = Table::new("poisson_oracle", &["i", "j", "k", "convolution", "oracle", "relative_error"]);
    let mut worst = 0.0f64;
    for (c, o) in cells.iter().zip(&oracle) {
        let v = sol.phi.data[spec.index(c[0], c[1], c[2])];
        let rel = if scale > 0.0 { (v - o).abs() / scale } else { (v - o).abs() };
        worst = worst.max(rel);
        table.push(vec![c[0].to_string(), c[1].to_string(), c[2].to_string(), num(v), num(*o), num(rel)]);
    }
    out.tables.push(table);
    out.criteria.push(Criterion::at_most(
        "poisson-oracle",
        worst,
        1e-6,
        format!("{} random interior cells, error relative to max |oracle|", cfg.samples),
    ));

    let mut table = Table::new("poisson_manufactured", &["cells", "h", "discrete_relative_l2", "continuum_relative_l2"]);
    let mut worst_discrete = 0.0f64;
    let mut cont = Vec::new();
    for &n in &cfg.grids {
        let s = GridSpec::new(spec.half_length, n)?;
        let (phi, lap) = manufactured(&s);
        let exact = GridField::from_fn(s, &phi);
        let solver = FreeSpacePoisson::new(s);
        let rel = |approx: &[f64]| {
            let (mut num_, mut den) = (0.0, 0.0);
            for (i, (a, e)) in approx.iter().zip(&exact.data).enumerate() {
                if s.boundary_distance(i) >= BOUNDARY_MARGIN {
                    num_ += (a - e).powi(2);
                    den += e * e;
                }
            }
            (num_ / den).sqrt()
        };
        let discrete = rel(&solver.potential(&laplacian_7pt(&s, &exact.data))?);
        let f: Vec<f64> = s.points().map(&lap).collect();
        let continuum = rel(&solver.potential(&f)?);
        worst_discrete = worst_discrete.max(discrete);
        cont.push((s.spacing(), continuum));
        table.push(vec![n.to_string(), num(s.spacing()), num(discrete), num(continuum)]);
    }
    if cont.len() >= 2 {
        let h: Vec<f64> = cont.iter().map(|c| c.0).collect();
        let e: Vec<f64> = cont.iter().map(|c| c.1).collect();
        out.fit("manufactured_continuum_order", &fit_loglog(&h, &e, None)?);
    }
    out.tables.push(table);
    out.criteria.push(Criterion::at_most(
        "poisson-manufactured",
        worst_discrete,
        1e-6,
        "interior relative L2 error for φ = e^{−|x−c|²/σ²} with f the 7-point Laplacian of φ".into(),
    ));

    // Gauss law for the ion charge alone
    let zero = vec![0.0; spec.len()];
    let ion_rhs = rhs_from_densities(&n_i.data, &zero, &spec, &cfg.params)?;
    let charge: f64 = ion_rhs.iter().sum::<f64>() * spec.cell_volume();
    let ion_sol = solver.solve_rhs(&ion_rhs)?;
    let reach = density.ion.support_radius().unwrap_or(0.5 * spec.half_length);
    let radius = 0.5 * (reach + spec.half_length - 2.0 * spec.spacing());
    let flux = sphere_flux(&ion_sol.grad_phi, radius, 24);
    let rel = if charge != 0.0 { (flux - charge).abs() / charge.abs() } else { flux.abs() };
    out.fits.insert("gauss_flux".into(), json!({"radius": radius, "flux": flux, "charge": charge}));
    out.criteria.push(Criterion::at_most(
        "poisson-gauss-flux",
        rel,
        1e-3,
        format!("flux of ∇φ through the sphere of radius {radius:.4} against the enclosed ion charge"),
    ));
    Ok(out)
}

pub fn decay_study(cfg: &StudyConfig, sink: &ArtifactSink) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::new(StudyKind::DecayStudy);
    let t_final = cfg.t_final()?;
    let solver = cfg.bipolar_solver(cfg.grid, cfg.params.clone(), cfg.solver_config(t_final))?;
    let run = run_bipolar(sink, "run", &solver, cfg.initial_state(&cfg.grid)?)?;
    out.add_run("run", run);
    let record = out.series[0].1.clone();
    let h = cfg.grid.spacing();
    let mut boot = Table::new("bootstrap", &["t", "ion_y", "ion_z", "electron_y", "electron_z"]);
    let mut z_cols = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut worst_drift = 0.0f64;
    let mut support_ok = true;
    for species in Species::BOTH {
        let rows = record.species(species);
        let t: Vec<f64> = rows.iter().map(|r| r.norms.t).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.weighted.y).collect();
        let a = cfg.params.decay_a(species);
        let report = ode_inequality_report(&t, &y, a, cfg.params.law(species).gamma)?;
        worst_ratio = worst_ratio.max(report.z_ratio_max);
        let mut rep = serde_json::to_value(&report)?;
        if let Some(o) = rep.as_object_mut() {
            o.remove("z");
        }
        out.fits.insert(format!("{species}_inequality"), rep);
        z_cols.push((y, report.z));
        worst_drift = worst_drift.max(mass_drift_rate(&record, species));
        support_ok &= rows.iter().all(|r| r.support_radius <= r.support_bound + 2.0 * h);
        if let Some([lo, hi]) = cfg.window {
            for (key, vals) in [
                ("y", rows.iter().map(|r| r.weighted.y).collect::<Vec<f64>>()),
                ("n_inf", rows.iter().map(|r| r.norms.n_inf).collect()),
                ("v_inf", rows.iter().map(|r| r.norms.v_inf).collect()),
                ("x_dot_1", rows.iter().map(|r| r.norms.x_dot_1).collect()),
                ("x_dot_s", rows.iter().map(|r| r.norms.x_dot_s).collect()),
            ] {
                match fit_decay_rate(&t, &vals, (lo, hi)) {
                    Ok(f) => out.fit(&format!("{species}_{key}_rate"), &f),
                    Err(e) => log::warn!("{species} {key}: {e}"),
                }
            }
        }
    }
    for k in 0..record.times.len() {
        boot.push(vec![num(record.times[k]), num(z_cols[0].0[k]), num(z_cols[0].1[k]), num(z_cols[1].0[k]), num(z_cols[1].1[k])]);
    }
    out.tables.push(boot);
    out.criteria.push(Criterion::at_most(
        "bootstrap-functional",
        worst_ratio,
        10.0,
        format!("max over t in [0, {t_final}] and species of Z(t)/Z(0) with fitted c₃, η"),
    ));
    out.criteria.push(Criterion::at_most(
        "mass-conservation",
        worst_drift,
        1e-6,
        format!("max relative mass drift per unit time on {}³", cfg.grid.cells),
    ));
    out.criteria.push(Criterion {
        name: "support-bound".into(),
        passed: support_ok,
        measured: if support_ok { 0.0 } else { 1.0 },
        threshold: "support radius <= growth bound + 2h at every record".into(),
        detail: String::new(),
    });
    Ok(out)
}

/// ε of the run standing in for the discrete limit: its ions follow the
/// reference flow up to O(ε²).
pub const REFERENCE_EPSILON: f64 = 1e-6;

pub fn epsilon_sweep(cfg: &StudyConfig, sink: &ArtifactSink) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::new(StudyKind::EpsilonSweep);
    let t_final = cfg.t_final()?;
    let spec = cfg.grid;
    let flow = cfg.flow()?;
    let density = cfg.density()?;
    let sc = cfg.solver_config(t_final);
    let limit_job = || -> Result<RunOutput> {
        let ions = ExactIonDensity::new(density.ion, flow.ion.clone(), cfg.params.ion);
        let solver = cfg.bipolar_solver(spec, cfg.params.clone(), sc.clone())?.with_ion_background(Box::new(ions));
        run_bipolar(sink, "limit", &solver, cfg.initial_state(&spec)?)
    };
    let mut eps_list = cfg.epsilons.clone();
    eps_list.push(REFERENCE_EPSILON);
    let bipolar_jobs = || -> Vec<Result<RunOutput>> {
        eps_list
            .par_iter()
            .map(|&eps| {
                let solver = cfg.bipolar_solver(spec, cfg.params.clone().with_epsilon(eps), sc.clone())?;
                run_bipolar(sink, &format!("eps_{eps}"), &solver, cfg.initial_state(&spec)?)
            })
            .collect()
    };
    let (limit, runs) = rayon::join(limit_job, bipolar_jobs);
    let limit = limit?;
    let mut runs: Vec<RunOutput> = runs.into_iter().collect::<Result<_>>()?;
    let reference = runs.pop().expect("reference run");
    let limit_grad = limit.grad_phi.clone();
    // the limit ions are the transported closed form, not the frozen channel
    let mut limit_state = limit.state.clone();
    let ions = ExactIonDensity::new(density.ion, flow.ion.clone(), cfg.params.ion);
    limit_state.n_i = GridField::scalar(spec, ions.sample(&spec, limit_state.t)?.as_ref().clone())?;
    limit_state.v_i = GridField::zeros(spec, 3);
    out.add_run("limit", limit);
    let mut rows: Vec<ErrorRow> = Vec::new();
    let mut discrete_rows: Vec<ErrorRow> = Vec::new();
    let mut y_max: Vec<[f64; 2]> = Vec::new();
    let mut y_final: Vec<[f64; 2]> = Vec::new();
    for (eps, run) in cfg.epsilons.iter().zip(runs) {
        let params = cfg.params.clone().with_epsilon(*eps);
        if run.error.is_none() {
            rows.push(error_vs_limit(&run.state, &limit_state, &run.grad_phi, &limit_grad, &params)?);
            if reference.error.is_none() {
                let mut r = error_vs_limit(&run.state, &reference.state, &run.grad_phi, &reference.grad_phi, &params)?;
                // the reference ion velocity is w_i = ε_ref V_i, not zero
                let w_ref: Vec<f64> = reference.state.v_i.data.iter().map(|v| REFERENCE_EPSILON * v).collect();
                r.ion_velocity_inf = run
                    .state
                    .v_i
                    .data
                    .iter()
                    .zip(&w_ref)
                    .map(|(v, w)| (eps * v - w).abs())
                    .fold(0.0, f64::max);
                discrete_rows.push(r);
            }
        }
        let ym = Species::BOTH.map(|s| run.record.species(s).iter().map(|r| r.weighted.y).fold(0.0, f64::max));
        y_max.push(ym);
        y_final.push(Species::BOTH.map(|s| run.record.species(s).last().map_or(0.0, |r| r.weighted.y)));
        out.add_run(&format!("eps_{eps}"), run);
    }
    out.add_run(&format!("eps_{REFERENCE_EPSILON}"), reference);
    if out.error.is_some() {
        return Ok(out);
    }
    let mut table = Table::new(
        "errors",
        &[
            "epsilon",
            "t",
            "electron_density",
            "electron_velocity",
            "electron_total",
            "ion_density",
            "ion_velocity_inf",
            "potential_grad_inf",
            "potential_grad_l2",
            "ion_y_max",
            "electron_y_max",
        ],
    );
    for (r, ym) in rows.iter().zip(&y_max) {
        table.push(
            [
                r.epsilon,
                r.t,
                r.electron_density,
                r.electron_velocity,
                r.electron_total,
                r.ion_density,
                r.ion_velocity_inf,
                r.potential_grad_inf,
                r.potential_grad_l2,
                ym[0],
                ym[1],
            ]
            .map(num)
            .to_vec(),
        );
    }
    out.tables.push(table);
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let series = |f: fn(&ErrorRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let fe = fit_loglog(&eps, &series(|r| r.electron_total), None)?;
    let fi = fit_loglog(&eps, &series(|r| r.ion_velocity_inf), None)?;
    out.fit("electron_total_order", &fe);
    out.fit("ion_velocity_order", &fi);
    for (key, f) in [
        ("electron_density_order", (|r: &ErrorRow| r.electron_density) as fn(&ErrorRow) -> f64),
        ("electron_velocity_order", |r| r.electron_velocity),
        ("ion_density_order", |r| r.ion_density),
        ("potential_grad_order", |r| r.potential_grad_inf),
    ] {
        if let Ok(fit) = fit_loglog(&eps, &series(f), None) {
            out.fit(key, &fit);
        }
    }
    let mut table = Table::new(
        "errors_discrete_limit",
        &["epsilon", "electron_density", "electron_velocity", "electron_total", "ion_density", "ion_velocity_inf", "potential_grad_inf"],
    );
    for r in &discrete_rows {
        table.push(
            [r.epsilon, r.electron_density, r.electron_velocity, r.electron_total, r.ion_density, r.ion_velocity_inf, r.potential_grad_inf]
                .map(num)
                .to_vec(),
        );
    }
    out.tables.push(table);
    if discrete_rows.len() == rows.len() {
        let d = |f: fn(&ErrorRow) -> f64| discrete_rows.iter().map(f).collect::<Vec<f64>>();
        for (key, f) in [
            ("electron_total_order_discrete_limit", (|r: &ErrorRow| r.electron_total) as fn(&ErrorRow) -> f64),
            ("ion_density_order_discrete_limit", |r| r.ion_density),
            ("ion_velocity_order_discrete_limit", |r| r.ion_velocity_inf),
        ] {
            if let Ok(fit) = fit_loglog(&eps, &d(f), None) {
                out.fit(key, &fit);
            }
        }
    }
    out.criteria.push(Criterion::within(
        "limit-rate-electron",
        fe.slope,
        0.8,
        1.3,
        format!("order in ε of |·|_inf + Ḣ¹ + Ḣ^s electron error, regression residual {:e}", fe.residual),
    ));
    out.criteria.push(Criterion::at_least(
        "limit-rate-ion-velocity",
        fi.slope,
        0.9,
        format!("order in ε of |u_i − û_i|_inf, regression residual {:e}", fi.residual),
    ));
    let spread = |ys: &[[f64; 2]]| {
        (0..2)
            .map(|s| {
                let lo = ys.iter().map(|y| y[s]).fold(f64::INFINITY, f64::min);
                let hi = ys.iter().map(|y| y[s]).fold(0.0, f64::max);
                if lo > 0.0 {
                    (hi - lo) / lo
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    };
    let final_spread = spread(&y_final);
    out.fits.insert("y_final_spread".into(), json!(final_spread));
    out.criteria.push(Criterion::at_most(
        "epsilon-uniform-bound",
        spread(&y_max),
        0.2,
        format!("max over species of (max − min)/min across ε of max_t Y_s; the same spread of Y_s(T) is {final_spread:.3e}"),
    ));
    Ok(out)
}

/// sup over ℝ³ of (1+t)|∇û^N − ∇û| (Frobenius), sampled on the box
/// [−2.5N, 2.5N]³ with `cells` points per axis. The difference is constant
/// along rays beyond |x| = 2N for affine flows, so the box holds the sup.
pub fn truncation_gradient_gap(u0: &BurgersInitial, t: f64, n: f64, cells: usize) -> Result<f64> {
    let spec = GridSpec::new(2.5 * n, cells)?;
    let mut worst = 0.0f64;
    for x in spec.points() {
        let full = u0.eval_grad_u_hat(t, x)?;
        let cut = u0.truncated_grad(t, x, n)?;
        worst = worst.max((cut - full).norm());
    }
    Ok((1.0 + t) * worst)
}

pub fn truncation_study(cfg: &StudyConfig, sink: &ArtifactSink) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::new(StudyKind::TruncationStudy);
    let t_final = cfg.t_final()?;
    let mut ns = cfg.truncations.clone();
    ns.sort_by(f64::total_cmp);
    let mut gap = Table::new("truncation_gradient", &["flow", "t", "n", "value"]);
    let mut monotone = true;
    let mut worst_increase = 0.0f64;
    for (name, u0) in distinct_flows(cfg)? {
        for &t in &cfg.times {
            let vals: Vec<f64> = ns
                .par_iter()
                .map(|&n| truncation_gradient_gap(&u0, t, n, cfg.grid.cells))
                .collect::<Result<_>>()?;
            for (n, v) in ns.iter().zip(&vals) {
                gap.push(vec![name.clone(), num(t), num(*n), num(*v)]);
            }
            for w in vals.windows(2) {
                let inc = (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE);
                worst_increase = worst_increase.max(inc);
                if w[1] > w[0] * (1.0 + 1e-12) {
                    monotone = false;
                }
            }
        }
    }
    out.tables.push(gap);
    out.criteria.push(Criterion {
        name: "truncation-gradient-monotone".into(),
        passed: monotone,
        measured: worst_increase,
        threshold: "relative increase <= 1e-12 between consecutive N".into(),
        detail: format!("(1+t) sup |∇û^N − ∇û| for N in {ns:?} at t in {:?}", cfg.times),
    });

    let spec = cfg.grid;
    let base = cfg.solver_config(t_final);
    let jobs: Vec<Option<f64>> = std::iter::once(None).chain(ns.iter().map(|&n| Some(n))).collect();
    let results: Vec<Result<RunOutput>> = jobs
        .par_iter()
        .map(|job| {
            let mut sc = base.clone();
            sc.truncation = *job;
            let solver = cfg.bipolar_solver(spec, cfg.params.clone(), sc)?;
            let name = job.map_or("untruncated".to_string(), |n| format!("n_{n}"));
            run_bipolar(sink, &name, &solver, cfg.initial_state(&spec)?)
        })
        .collect();
    let mut finals = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        let r = r?;
        let name = job.map_or("untruncated".to_string(), |n| format!("n_{n}"));
        finals.push(r.state.clone());
        out.add_run(&name, r);
    }
    if out.error.is_some() {
        return Ok(out);
    }
    let reference = &out.series[0].1;
    let bound = Species::BOTH
        .iter()
        .flat_map(|&s| reference.species(s).iter().map(|r| r.support_bound))
        .fold(0.0, f64::max);
    let mut table = Table::new("truncation_runs", &["n", "max_state_difference", "qualifies"]);
    let mut worst = 0.0f64;
    let mut qualified = 0;
    for (n, state) in ns.iter().zip(&finals[1..]) {
        let d = finals[0].max_diff(state);
        let q = *n >= 2.0 * bound;
        if q {
            qualified += 1;
            worst = worst.max(d);
        }
        table.push(vec![num(*n), num(d), q.to_string()]);
    }
    out.tables.push(table);
    out.fits.insert("support_bound".into(), json!(bound));
    out.criteria.push(Criterion {
        name: "truncation-agreement".into(),
        passed: qualified > 0 && worst <= 1e-10,
        measured: worst,
        threshold: "<= 1e-10 for every N >= 2 x support bound".into(),
        detail: format!("{qualified} radii exceed twice the support bound {bound:.4}"),
    });
    Ok(out)
}

pub fn self_convergence(cfg: &StudyConfig, sink: &ArtifactSink) -> Result<StudyOutcome> {
    let mut out = StudyOutcome::new(StudyKind::SelfConvergence);
    let t_final = cfg.t_final()?;
    let l = cfg.grid.half_length;
    let specs: Vec<GridSpec> = cfg.grids.iter().map(|&n| GridSpec::new(l, n)).collect::<Result<_>>()?;

    // temporal refinement on the coarsest grid with fixed steps
    let coarse = specs[0];
    let probe = cfg.bipolar_solver(coarse, cfg.params.clone(), cfg.solver_config(t_final))?;
    let init = cfg.initial_state(&coarse)?;
    let dt0 = 0.9 * probe.stable_dt(&init)?;
    let steps0 = (t_final / dt0).ceil().max(1.0) as usize;
    let levels: Vec<usize> = (0..cfg.time_levels).map(|k| steps0 << k).collect();

    let space_jobs = || -> Vec<Result<RunOutput>> {
        specs
            .par_iter()
            .map(|spec| {
                let solver = cfg.bipolar_solver(*spec, cfg.params.clone(), cfg.solver_config(t_final))?;
                run_bipolar(sink, &format!("grid_{}", spec.cells), &solver, cfg.initial_state(spec)?)
            })
            .collect()
    };
    let time_jobs = || -> Vec<Result<RunOutput>> {
        levels
            .par_iter()
            .map(|&steps| {
                let mut sc = cfg.solver_config(t_final);
                sc.fixed_dt = Some(t_final / steps as f64);
                let solver = cfg.bipolar_solver(coarse, cfg.params.clone(), sc)?;
                run_bipolar(sink, &format!("steps_{steps}"), &solver, init.clone())
            })
            .collect()
    };
    let (space, time) = rayon::join(space_jobs, time_jobs);
    let space: Vec<RunOutput> = space.into_iter().collect::<Result<_>>()?;
    let time: Vec<RunOutput> = time.into_iter().collect::<Result<_>>()?;
    let space_states: Vec<SymmState> = space.iter().map(|r| r.state.clone()).collect();
    let time_states: Vec<SymmState> = time.iter().map(|r| r.state.clone()).collect();
    for (spec, r) in specs.iter().zip(space) {
        out.add_run(&format!("grid_{}", spec.cells), r);
    }
    for (steps, r) in levels.iter().zip(time) {
        out.add_run(&format!("steps_{steps}"), r);
    }
    if out.error.is_some() {
        return Ok(out);
    }

    let m = specs.len();
    let finest = &space_states[m - 1];
    let mut table = Table::new("space_convergence", &["cells", "h", "error_vs_finest", "ion_mass_drift_rate", "electron_mass_drift_rate"]);
    let mut errs = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let e = if k + 1 < m { state_distance(&space_states[k], finest) } else { 0.0 };
        errs.push(e);
        let rec = &out.series[k].1;
        table.push(vec![
            spec.cells.to_string(),
            num(spec.spacing()),
            num(e),
            num(mass_drift_rate(rec, Species::Ion)),
            num(mass_drift_rate(rec, Species::Electron)),
        ]);
    }
    out.tables.push(table);
    let h = [specs[m - 3].spacing(), specs[m - 2].spacing(), specs[m - 1].spacing()];
    let richardson = richardson_order(h, [errs[m - 3], errs[m - 2]]);
    let two_grid = (errs[m - 3] / errs[m - 2]).ln() / (h[0] / h[1]).ln();
    out.fits.insert("spatial_order".into(), json!({"two_grid": two_grid, "richardson": richardson}));
    out.criteria.push(Criterion::at_least(
        "spatial-order",
        two_grid,
        3.0,
        format!(
            "log(e₀/e₁)/log(h₀/h₁) with errors of {}³ and {}³ against {}³; Richardson-corrected {}",
            specs[m - 3].cells,
            specs[m - 2].cells,
            specs[m - 1].cells,
            richardson.map_or("undefined".to_string(), |p| format!("{p:.3}"))
        ),
    ));

    let mut table = Table::new("time_convergence", &["steps", "dt", "difference_to_next"]);
    let mut diffs = Vec::new();
    for k in 0..levels.len() {
        let d = if k + 1 < levels.len() { state_l2_diff(&time_states[k], &time_states[k + 1]) } else { 0.0 };
        diffs.push(d);
        table.push(vec![levels[k].to_string(), num(t_final / levels[k] as f64), num(d)]);
    }
    out.tables.push(table);
    let orders: Vec<f64> = diffs.windows(2).take(levels.len() - 2).map(|w| (w[0] / w[1]).log2()).collect();
    out.fits.insert("temporal_orders".into(), json!(orders));
    out.criteria.push(Criterion::at_least(
        "temporal-order",
        orders[0],
        3.8,
        format!("log2 ratio of successive step-halving differences on {}³, steps {levels:?}", coarse.cells),
    ));
    Ok(out)
}

/// Runs the computations of a study without touching the disk unless the
/// sink has a directory.
pub fn execute(kind: StudyKind, cfg: &StudyConfig, sink: &ArtifactSink) -> Result<StudyOutcome> {
    match kind {
        StudyKind::BurgersCheck => burgers_check(cfg),
        StudyKind::PoissonCheck => poisson_check(cfg),
        StudyKind::DecayStudy => decay_study(cfg, sink),
        StudyKind::EpsilonSweep => epsilon_sweep(cfg, sink),
        StudyKind::TruncationStudy => truncation_study(cfg, sink),
        StudyKind::SelfConvergence => self_convergence(cfg, sink),
    }
}

/// What a finished study left on disk.
#[derive(Debug)]
pub struct StudyReport {
    pub dir: PathBuf,
    pub summary: Value,
    pub exit_code: i32,
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Validates, executes and persists a study under `root/<kind>`. Validation
/// errors return `Err` before anything is written; runtime errors end up in
/// the summary with exit code 2.
pub fn run_study(kind: StudyKind, config: &StudyConfig, root: &Path, threads: Option<usize>) -> Result<StudyReport> {
    if threads == Some(0) {
        return Err(Error::Config("`--threads` must be at least 1".into()));
    }
    let cfg = config.resolved(kind);
    cfg.validate(kind)?;
    let dir = root.join(kind.as_str());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let sink = ArtifactSink {
        dir: Some(dir.clone()),
        checkpoint_every: cfg.checkpoint_every,
    };
    let started = Instant::now();
    let result = with_threads(threads, || execute(kind, &cfg, &sink))?;
    let elapsed = started.elapsed().as_secs_f64();
    let mut artifacts = vec!["config.json".to_string(), "summary.json".to_string()];
    let summary = match result {
        Ok(outcome) => {
            for t in &outcome.tables {
                let file = format!("{}.csv", t.name);
                std::fs::write(dir.join(&file), t.to_csv())?;
                artifacts.push(file);
            }
            for (name, rec) in &outcome.series {
                let file = format!("{name}/series.csv");
                std::fs::create_dir_all(dir.join(name))?;
                std::fs::write(dir.join(&file), series_table(rec).to_csv())?;
                artifacts.push(file);
            }
            let status = match outcome.exit_code() {
                0 => "pass",
                1 => "fail",
                _ => "error",
            };
            json!({
                "kind": kind,
                "status": status,
                "exit_code": outcome.exit_code(),
                "criteria": outcome.criteria,
                "fits": outcome.fits,
                "runs": outcome.runs,
                "error": outcome.error,
                "artifacts": artifacts,
                "elapsed_seconds": elapsed,
                "config": cfg,
            })
        }
        Err(e) => json!({
            "kind": kind,
            "status": "error",
            "exit_code": 2,
            "criteria": [],
            "fits": {},
            "runs": [],
            "error": e.to_string(),
            "artifacts": artifacts,
            "elapsed_seconds": elapsed,
            "config": cfg,
        }),
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if let Err(e) = emit_plotdata(&dir) {
        log::warn!("plot data not written: {e}");
    }
    let exit_code = summary["exit_code"].as_i64().unwrap_or(2) as i32;
    Ok(StudyReport { dir, summary, exit_code })
}

fn read_table(dir: &Path, file: &str) -> Result<Table> {
    let text = std::fs::read_to_string(dir.join(file))?;
    Table::from_csv(file, &text)
}

fn ln_or_empty(v: f64) -> String {
    if v > 0.0 {
        num(v.ln())
    } else {
        String::new()
    }
}

/// Long-format tables (`series, x, value`, plus log columns where they make
/// sense) under `dir/plot/`. Returns the files written.
pub fn emit_plotdata(dir: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        return Err(Error::MissingArtifacts {
            dir: dir.display().to_string(),
            expected: vec!["summary.json".into(), "config.json".into()],
        });
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
    let listed: Vec<String> = summary["artifacts"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    let missing: Vec<String> = listed.iter().filter(|f| !dir.join(f).exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts {
            dir: dir.display().to_string(),
            expected: missing,
        });
    }
    let kind: Option<StudyKind> = serde_json::from_value(summary["kind"].clone()).ok();
    let plot = dir.join("plot");
    std::fs::create_dir_all(&plot)?;
    let mut written = Vec::new();
    let mut save = |name: String, t: Table| -> Result<()> {
        let p = plot.join(format!("{name}.csv"));
        std::fs::write(&p, t.to_csv())?;
        written.push(p);
        Ok(())
    };
    match kind {
        Some(StudyKind::DecayStudy) => {
            let series = read_table(dir, "run/series.csv")?;
            let t = series.column("t").unwrap_or_default();
            for (c, col) in series.columns.iter().enumerate().skip(2) {
                let mut out = Table::new(col, &["series", "t", "value", "log_1p_t", "log_value"]);
                for (k, row) in series.rows.iter().enumerate() {
                    let v: f64 = row[c].parse().unwrap_or(f64::NAN);
                    out.push(vec![col.clone(), num(t[k]), num(v), num((1.0 + t[k]).ln()), ln_or_empty(v)]);
                }
                save(format!("decay_{col}"), out)?;
            }
        }
        Some(StudyKind::EpsilonSweep) => {
            let errors = read_table(dir, "errors.csv")?;
            let eps = errors.column("epsilon").unwrap_or_default();
            let mut out = Table::new("error_vs_epsilon", &["series", "epsilon", "value", "log_epsilon", "log_value"]);
            for col in ["electron_total", "electron_density", "electron_velocity", "ion_density", "ion_velocity_inf", "potential_grad_inf"] {
                if let Some(vals) = errors.column(col) {
                    for (e, v) in eps.iter().zip(vals) {
                        out.push(vec![col.into(), num(*e), num(v), num(e.ln()), ln_or_empty(v)]);
                    }
                }
            }
            save("error_vs_epsilon".into(), out)?;
            let mut fit = Table::new("error_fit", &["series", "epsilon", "value"]);
            let (lo, hi) = (eps.iter().copied().fold(f64::INFINITY, f64::min), eps.iter().copied().fold(0.0, f64::max));
            for (series, key) in [("electron_total", "electron_total_order"), ("ion_velocity_inf", "ion_velocity_order")] {
                let f = &summary["fits"][key];
                if let (Some(s), Some(c)) = (f["slope"].as_f64(), f["intercept"].as_f64()) {
                    for e in [lo, hi] {
                        fit.push(vec![series.into(), num(e), num((c + s * e.ln()).exp())]);
                    }
                }
            }
            save("error_fit".into(), fit)?;
        }
        _ => {
            for file in listed.iter().filter(|f| f.ends_with(".csv") && !f.contains('/')) {
                let t = read_table(dir, file)?;
                let stem = file.trim_end_matches(".csv");
                let mut out = Table::new(stem, &["series", &t.columns[0], "value"]);
                for (c, col) in t.columns.iter().enumerate().skip(1) {
                    for row in &t.rows {
                        out.push(vec![col.clone(), row[0].clone(), row[c].clone()]);
                    }
                }
                save(stem.to_string(), out)?;
            }
        }
    }
    Ok(written)
}
