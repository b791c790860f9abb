//! Run configuration: TOML schema, defaults and the checks that turn it into a
//! problem and a sweep configuration.

use std::path::{Path, PathBuf};

use galerkin_bounds::certify::{OracleChoice, SweepConfig};
use galerkin_bounds::sets::UpperSetMode;
use galerkin_bounds::solver::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use galerkin_bounds::{LtiProblem, SetDescription};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

/// A configuration problem, reported with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(field: &str, msg: impl std::fmt::Display) -> Result<T, ConfigError> {
    Err(ConfigError(format!("{field}: {msg}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub state_set: SetConfig,
    #[serde(default)]
    pub input_set: SetConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetConfig {
    #[default]
    Unconstrained,
    /// `|v_i| ≤ bounds[i]`.
    Box { bounds: Vec<f64> },
    /// `G v ≤ h`.
    Polyhedron {
        #[serde(rename = "G")]
        g: Vec<Vec<f64>>,
        h: Vec<f64>,
    },
    /// `|v| ≤ radius`.
    Ball { radius: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub p: f64,
    #[serde(default = "one")]
    pub s_min: usize,
    pub s_max: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    #[serde(default)]
    pub upper_set_mode: UpperSetMode,
    pub weight_count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub kind: OracleChoice,
    /// Collocation horizon; defaults to 30 closed-loop time constants.
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    /// Collocation intervals.
    #[serde(rename = "N", default = "default_intervals")]
    pub intervals: usize,
}

fn default_intervals() -> usize {
    3000
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleChoice::Auto,
            horizon: None,
            intervals: default_intervals(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_json")]
    pub json: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_plot")]
    pub plot: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_json() -> String {
    "report.json".into()
}

fn default_csv() -> String {
    "report.csv".into()
}

fn default_plot() -> String {
    "plot.csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            json: default_json(),
            csv: default_csv(),
            plot: default_plot(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {}", e.to_string().trim_end())))
    }

    /// Cross-checks dimensions and builds the problem.
    pub fn problem(&self) -> Result<LtiProblem, ConfigError> {
        let pc = &self.problem;
        let a = matrix("problem.A", &pc.a)?;
        let n = a.nrows();
        if a.ncols() != n {
            return err("problem.A", format!("must be square, found {}x{}", n, a.ncols()));
        }
        let b = matrix("problem.B", &pc.b)?;
        if b.nrows() != n {
            return err("problem.B", format!("expected {n} rows to match A, found {}", b.nrows()));
        }
        if pc.x0.len() != n {
            return err("problem.x0", format!("expected length {n}, found {}", pc.x0.len()));
        }
        finite("problem.x0", &pc.x0)?;
        let state = set("problem.state_set", &pc.state_set, n)?;
        let input = set("problem.input_set", &pc.input_set, b.ncols())?;
        LtiProblem::new(a, b, DVector::from_column_slice(&pc.x0), state, input)
            .map_err(|e| ConfigError(format!("problem: {e}")))
    }

    pub fn sweep(&self, threads: Option<usize>) -> Result<SweepConfig, ConfigError> {
        let b = &self.basis;
        if !(b.p.is_finite() && b.p > 0.0) {
            return err("basis.p", format!("must be positive and finite, got {}", b.p));
        }
        if b.s_min == 0 || b.s_max < b.s_min {
            return err("basis.s_max", format!("empty range {}..={}", b.s_min, b.s_max));
        }
        if b.s_max > galerkin_bounds::basis::MAX_BASIS_SIZE {
            return err("basis.s_max", format!("at most {}", galerkin_bounds::basis::MAX_BASIS_SIZE));
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            return err("solver.tol", format!("must be positive and finite, got {}", self.solver.tol));
        }
        if self.solver.max_iter == 0 {
            return err("solver.max_iter", "must be at least 1");
        }
        if self.modes.weight_count == Some(0) {
            return err("modes.weight_count", "must be at least 1");
        }
        if let Some(t) = self.oracle.horizon {
            if !(t.is_finite() && t > 0.0) {
                return err("oracle.T", format!("must be positive and finite, got {t}"));
            }
        }
        if self.oracle.intervals < 10 {
            return err("oracle.N", format!("must be at least 10, got {}", self.oracle.intervals));
        }
        Ok(SweepConfig {
            s_min: b.s_min,
            s_max: b.s_max,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            upper_mode: self.modes.upper_set_mode,
            weight_count: self.modes.weight_count,
            oracle: self.oracle.kind,
            horizon: self.oracle.horizon,
            intervals: self.oracle.intervals,
            threads,
            ..SweepConfig::default()
        })
    }
}

fn finite(field: &str, v: &[f64]) -> Result<(), ConfigError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => err(field, format!("entry {i} is not finite")),
        None => Ok(()),
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() || rows[0].is_empty() {
        return err(field, "must be a nonempty nested array");
    }
    let cols = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return err(field, format!("row {i} has {} entries, expected {cols}", r.len()));
        }
        finite(field, r)?;
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn set(field: &str, cfg: &SetConfig, dim: usize) -> Result<SetDescription, ConfigError> {
    let wrap = |r: galerkin_bounds::Result<SetDescription>| r.map_err(|e| ConfigError(format!("{field}: {e}")));
    match cfg {
        SetConfig::Unconstrained => Ok(SetDescription::Unconstrained),
        SetConfig::Box { bounds } => {
            if bounds.len() != dim {
                return err(field, format!("expected {dim} bounds, found {}", bounds.len()));
            }
            wrap(SetDescription::symmetric_box(bounds))
        }
        SetConfig::Polyhedron { g, h } => {
            let gm = matrix(&format!("{field}.G"), g)?;
            if gm.ncols() != dim {
                return err(field, format!("G must have {dim} columns, found {}", gm.ncols()));
            }
            if h.len() != gm.nrows() {
                return err(field, format!("h must have {} entries, found {}", gm.nrows(), h.len()));
            }
            wrap(SetDescription::polyhedron(gm, DVector::from_column_slice(h)))
        }
        SetConfig::Ball { radius } => wrap(SetDescription::ball(*radius)),
    }
}
