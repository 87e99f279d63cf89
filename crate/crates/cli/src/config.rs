//! TOML experiment configuration.

use std::path::PathBuf;

use relspec::asymptotics::ExponentStep;
use relspec::heat::TraceMethod;
use relspec::linalg;
use relspec::model::ModelSpec;
use relspec::quadrature::QuadratureRule;
use relspec::zeta::ZetaConfig;
use serde::{Deserialize, Serialize};

/// A validation failure pinned to the offending config field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn issue(path: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
}

fn default_spacing() -> Spacing {
    Spacing::Log
}

impl GridConfig {
    pub fn points(&self) -> Vec<f64> {
        match self.spacing {
            Spacing::Log => linalg::log_grid(self.min, self.max, self.count),
            Spacing::Linear => linalg::linear_grid(self.min, self.max, self.count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    GaussLegendre,
    SplitGaussLegendre,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    #[serde(default = "default_rule")]
    pub kind: RuleKind,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Times at which the Duhamel difference is assembled and checked.
    #[serde(default = "default_duhamel_times")]
    pub times: Vec<f64>,
    /// Uniform trace-norm scan [a0, a1] with this many samples.
    #[serde(default = "default_scan")]
    pub scan: (f64, f64, usize),
}

fn default_rule() -> RuleKind {
    RuleKind::GaussLegendre
}

fn default_nodes() -> usize {
    64
}

fn default_duhamel_times() -> Vec<f64> {
    vec![0.1, 1.0, 5.0]
}

fn default_scan() -> (f64, f64, usize) {
    (0.1, 10.0, 50)
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { kind: default_rule(), nodes: default_nodes(), times: default_duhamel_times(), scan: default_scan() }
    }
}

impl QuadratureConfig {
    pub fn rule(&self, t: f64) -> relspec::Result<QuadratureRule> {
        match self.kind {
            RuleKind::GaussLegendre => QuadratureRule::gauss_legendre(self.nodes, t),
            RuleKind::SplitGaussLegendre => QuadratureRule::split_gauss_legendre(self.nodes, t),
            RuleKind::Midpoint => QuadratureRule::midpoint(self.nodes, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    #[serde(default)]
    pub n_dim: u32,
    #[serde(default = "default_l")]
    pub l: usize,
    /// Fit window for the reported expansion; the first two decades of the
    /// grid when absent.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default = "default_step")]
    pub step: ExponentStep,
}

fn default_l() -> usize {
    4
}

fn default_step() -> ExponentStep {
    ExponentStep::Auto
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { n_dim: 0, l: default_l(), window: None, step: default_step() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaSection {
    #[serde(default = "default_split")]
    pub split_point: f64,
    #[serde(default = "default_s_list")]
    pub s_list: Vec<f64>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Window for the pipeline's internal expansion; scaled to λ_max when absent.
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
}

fn default_split() -> f64 {
    1.0
}

fn default_s_list() -> Vec<f64> {
    vec![0.5, 1.0, 1.5, 2.0]
}

fn default_fd_step() -> f64 {
    1e-4
}

impl Default for ZetaSection {
    fn default() -> Self {
        Self { split_point: default_split(), s_list: default_s_list(), fd_step: default_fd_step(), fit_window: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub t_grid: GridConfig,
    #[serde(default = "default_trace")]
    pub trace: TraceMethod,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub expansion: ExpansionConfig,
    #[serde(default)]
    pub zeta: ZetaSection,
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_trace() -> TraceMethod {
    TraceMethod::DenseSpectral
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigIssue> {
        toml::from_str(text).map_err(|e| issue("<toml>", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes to TOML")
    }

    /// Trace method with a stochastic seed taken from `seed` when it is unset.
    pub fn trace_method(&self) -> TraceMethod {
        match self.trace {
            TraceMethod::Stochastic { probes, seed: 0 } => TraceMethod::Stochastic { probes, seed: self.seed },
            m => m,
        }
    }

    pub fn zeta_config(&self) -> ZetaConfig {
        ZetaConfig {
            split_point: self.zeta.split_point,
            n_dim: self.expansion.n_dim,
            l: self.expansion.l,
            fit_window: self.zeta.fit_window,
            step: self.expansion.step,
            fd_step: self.zeta.fd_step,
        }
    }

    /// Expansion window, defaulting to [t_min, 100 t_min] clipped to the grid.
    pub fn expansion_window(&self) -> (f64, f64) {
        self.expansion.window.unwrap_or((self.t_grid.min, (100.0 * self.t_grid.min).min(self.t_grid.max)))
    }

    /// Range checks that can be made without building the model.
    pub fn validate(&self) -> Result<(), ConfigIssue> {
        let g = &self.t_grid;
        if !(g.min > 0.0 && g.min.is_finite()) {
            return Err(issue("t_grid.min", format!("must be positive, got {}", g.min)));
        }
        if !(g.max > g.min && g.max.is_finite()) {
            return Err(issue("t_grid.max", format!("must exceed t_grid.min, got {}", g.max)));
        }
        if g.count < 2 {
            return Err(issue("t_grid.count", "needs at least two points"));
        }
        if let TraceMethod::Stochastic { probes: 0, .. } = self.trace {
            return Err(issue("trace.probes", "needs at least one probe"));
        }
        let q = &self.quadrature;
        if q.nodes == 0 {
            return Err(issue("quadrature.nodes", "needs at least one node"));
        }
        if let Some(t) = q.times.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return Err(issue("quadrature.times", format!("times must be positive, got {t}")));
        }
        let (a0, a1, n) = q.scan;
        if !(a0 > 0.0 && a1 > a0 && a1.is_finite() && n > 0) {
            return Err(issue("quadrature.scan", format!("invalid scan [{a0}, {a1}] with {n} samples")));
        }
        let (lo, hi) = self.expansion_window();
        if !(lo > 0.0 && hi > lo) {
            return Err(issue("expansion.window", format!("invalid window ({lo}, {hi})")));
        }
        if lo < g.min * (1.0 - 1e-12) || hi > g.max * (1.0 + 1e-12) {
            return Err(issue("expansion.window", "window must lie inside the t grid"));
        }
        let inside = self.t_grid.points().iter().filter(|&&t| t >= lo && t <= hi).count();
        if inside < 2 * (self.expansion.l + 1) {
            return Err(issue(
                "expansion.window",
                format!("{inside} grid points in the window, need {}", 2 * (self.expansion.l + 1)),
            ));
        }
        let z = &self.zeta;
        if !(z.split_point > 0.0 && z.split_point.is_finite()) {
            return Err(issue("zeta.split_point", format!("must be positive, got {}", z.split_point)));
        }
        if !(z.fd_step > 0.0 && z.fd_step < 0.1) {
            return Err(issue("zeta.fd_step", format!("must lie in (0, 0.1), got {}", z.fd_step)));
        }
        if let Some(s) = z.s_list.iter().find(|s| !s.is_finite()) {
            return Err(issue("zeta.s_list", format!("non-finite s = {s}")));
        }
        if let Some((a, b)) = z.fit_window {
            if !(a > 0.0 && b > a && b < z.split_point) {
                return Err(issue("zeta.fit_window", format!("invalid window ({a}, {b})")));
            }
        }
        if self.outputs.formats.is_empty() {
            return Err(issue("outputs.formats", "list at least one format"));
        }
        if self.outputs.directory.as_os_str().is_empty() {
            return Err(issue("outputs.directory", "must not be empty"));
        }
        Ok(())
    }
}
