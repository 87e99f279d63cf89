//! Staged experiment runner: validate, build, heat series, Duhamel checks,
//! expansion, zeta, invariants, write.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use relspec::asymptotics::{fit_expansion_with, AsymptoticExpansion};
use relspec::duhamel::{
    direct_difference, duhamel_difference, duhamel_difference_metric, trace_norm, uniform_bound_scan, BoundScan,
};
use relspec::heat::{relative_heat_trace, HeatTraceSeries};
use relspec::hodge::build_hodge_tower;
use relspec::model::{build_graded, build_model, ModelSpec};
use relspec::operator::{PerturbationPair, DENSE_THRESHOLD};
use relspec::zeta::{
    dense_log_torsion, relative_index, relative_torsion, RelativeIndex, WeightConvention, ZetaPipeline, ZetaResult,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Format};

/// Overrides the directory that relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "RELSPEC_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Build,
    HeatSeries,
    Duhamel,
    Expansion,
    Zeta,
    Invariants,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Build => "build",
            Stage::HeatSeries => "heat_series",
            Stage::Duhamel => "duhamel",
            Stage::Expansion => "expansion",
            Stage::Zeta => "zeta",
            Stage::Invariants => "invariants",
            Stage::Write => "write",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Numerical,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 1,
            FailureKind::Numerical => 2,
            FailureKind::Io => 3,
        }
    }

    fn of(e: &relspec::Error) -> Self {
        use relspec::Error as E;
        match e {
            E::NotSymmetric { .. }
            | E::DimensionMismatch { .. }
            | E::InvalidModel(_)
            | E::InvalidComplex(_)
            | E::Domain(_)
            | E::Parameter(_) => FailureKind::Validation,
            E::Capability(_) | E::Pole { .. } | E::TailNotConverged { .. } | E::Degenerate(_) | E::Numerical(_) => {
                FailureKind::Numerical
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub stage: Stage,
    /// Config field blamed for the failure, e.g. `t_grid.min`.
    pub field: String,
    /// File the config was read from, when known.
    pub config_file: Option<PathBuf>,
    pub kind: FailureKind,
    pub message: String,
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed", self.stage.name())?;
        if let Some(p) = &self.config_file {
            write!(f, " (config {}", p.display())?;
            write!(f, ", field {})", self.field)?;
        } else {
            write!(f, " (field {})", self.field)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for RunError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuhamelRow {
    pub t: f64,
    /// ‖Q − (e^{-tA} − e^{-tA'})‖_F / ‖e^{-tA} − e^{-tA'}‖_F.
    pub residual: f64,
    pub trace_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionRecord {
    /// Alternating (−1)^q weights, the default convention.
    pub log_torsion: f64,
    pub q_weighted: f64,
    pub dense_oracle: f64,
    pub per_degree: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerRecord {
    pub characteristic: i64,
    /// (t, Σ_q (−1)^q tr e^{-tΔ_q}).
    pub supertraces: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub label: String,
    pub kind: String,
    pub dim: usize,
    pub kernel_dims: (usize, usize),
    pub h: i64,
    pub det_rel: f64,
    pub log_det_rel: f64,
    pub zeta_prime_at_zero: f64,
    pub zeta_prime_error_estimate: f64,
    pub uniform_bound: Option<BoundScan>,
    pub duhamel: Vec<DuhamelRow>,
    pub relative_index: Option<RelativeIndex>,
    pub torsion: Option<TorsionRecord>,
    pub euler: Option<EulerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub config: ExperimentConfig,
    pub config_toml: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub invariants: InvariantRecord,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where a config's outputs land: relative directories resolve against
/// `$RELSPEC_OUTPUT_ROOT` (or the working directory); with the variable set,
/// absolute directories keep only their last component.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => {
            let root = PathBuf::from(root);
            if dir.is_absolute() {
                root.join(dir.file_name().unwrap_or_default())
            } else {
                root.join(dir)
            }
        }
        _ => dir.to_path_buf(),
    }
}

struct Ctx<'a> {
    config_file: Option<&'a Path>,
    log: String,
}

impl Ctx<'_> {
    fn fail(&self, stage: Stage, field: &str, kind: FailureKind, message: impl Into<String>) -> RunError {
        RunError {
            stage,
            field: field.to_string(),
            config_file: self.config_file.map(Path::to_path_buf),
            kind,
            message: message.into(),
        }
    }

    fn lift<T>(&self, stage: Stage, field: &str, r: relspec::Result<T>) -> Result<T, RunError> {
        r.map_err(|e| self.fail(stage, field, FailureKind::of(&e), e.to_string()))
    }

    fn note(&mut self, stage: Stage, msg: impl AsRef<str>) {
        let _ = writeln!(self.log, "[{}] {}", stage.name(), msg.as_ref());
    }
}

/// Runs every stage in memory, then writes all artifacts through a staging
/// directory. Nothing is left behind on failure.
pub fn run_experiment(config: &ExperimentConfig, config_file: Option<&Path>) -> Result<RunSummary, RunError> {
    let mut ctx = Ctx { config_file, log: String::new() };

    if let Err(issue) = config.validate() {
        return Err(ctx.fail(Stage::Validate, &issue.path, FailureKind::Validation, issue.message));
    }
    ctx.note(Stage::Validate, "ok");

    let pair = ctx.lift(Stage::Build, "model", build_model(&config.model))?;
    let kernel_dims = ctx.lift(Stage::Build, "model", pair.kernel_dims())?;
    ctx.note(
        Stage::Build,
        format!(
            "kind={} label={} dim={} kernel_dims=({}, {}) eta_norm={:.6e} decay_flag={}",
            config.model.kind_name(),
            pair.label(),
            pair.dim(),
            kernel_dims.0,
            kernel_dims.1,
            pair.decay_profile().total_norm,
            pair.decay_profile().flagged
        ),
    );

    let grid = config.t_grid.points();
    let method = config.trace_method();
    let series = ctx.lift(Stage::HeatSeries, "trace", relative_heat_trace(&pair, &grid, method))?;
    ctx.note(
        Stage::HeatSeries,
        format!("{} samples on [{:e}, {:e}] via {:?}", series.len(), grid[0], grid[grid.len() - 1], method.kind()),
    );

    let (duhamel, scan) = duhamel_stage(&mut ctx, config, &pair)?;

    let window = config.expansion_window();
    let expansion = ctx.lift(
        Stage::Expansion,
        "expansion",
        fit_expansion_with(&series, config.expansion.n_dim, config.expansion.l, window, config.expansion.step),
    )?;
    ctx.note(
        Stage::Expansion,
        format!(
            "n_dim={} L={} window=[{:e}, {:e}] condition={:.3e} rms={:.3e}",
            expansion.n_dim, expansion.l, window.0, window.1, expansion.condition_number, expansion.residual_rms
        ),
    );
    for w in &expansion.warnings {
        ctx.note(Stage::Expansion, format!("warning: {w}"));
    }

    let zeta_cfg = config.zeta_config();
    let pipe = ctx.lift(Stage::Zeta, "zeta", ZetaPipeline::new(&pair, &zeta_cfg))?;
    let s_values: Vec<Complex64> = config.zeta.s_list.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    let zeta = ctx.lift(Stage::Zeta, "zeta.s_list", pipe.result(&s_values))?;
    ctx.note(
        Stage::Zeta,
        format!(
            "h={} zeta'(0)={:.12e} det_rel={:.12e} poles={}",
            zeta.h,
            zeta.zeta_prime_at_zero,
            zeta.determinant,
            zeta.poles.len()
        ),
    );

    let invariants = invariants_stage(&mut ctx, config, &pair, kernel_dims, &zeta, duhamel, scan)?;

    let files = render_files(config, &series, &expansion, &zeta, &invariants)?;
    let output_dir = resolve_output_dir(&config.outputs.directory);
    ctx.note(Stage::Write, format!("{} data files", files.len()));
    let manifest = write_outputs(&ctx, config, &output_dir, files)?;
    Ok(RunSummary { output_dir, manifest, invariants })
}

fn duhamel_stage(
    ctx: &mut Ctx<'_>,
    config: &ExperimentConfig,
    pair: &PerturbationPair,
) -> Result<(Vec<DuhamelRow>, Option<BoundScan>), RunError> {
    if pair.dim() > DENSE_THRESHOLD {
        ctx.note(Stage::Duhamel, format!("skipped: dim {} above the dense threshold", pair.dim()));
        return Ok((Vec::new(), None));
    }
    let mut rows = Vec::new();
    for &t in &config.quadrature.times {
        let rule = ctx.lift(Stage::Duhamel, "quadrature", config.quadrature.rule(t))?;
        let (q, want) = if pair.weight_change().is_some() {
            let m = ctx.lift(Stage::Duhamel, "quadrature", duhamel_difference_metric(pair, t, &rule))?;
            (m.total, ctx.lift(Stage::Duhamel, "model", direct_difference(pair, t))?)
        } else {
            (
                ctx.lift(Stage::Duhamel, "quadrature", duhamel_difference(pair, t, &rule))?,
                ctx.lift(Stage::Duhamel, "model", direct_difference(pair, t))?,
            )
        };
        let scale = want.norm();
        let residual = if scale > 0.0 { (&q - &want).norm() / scale } else { q.norm() };
        rows.push(DuhamelRow { t, residual, trace_norm: trace_norm(&want) });
        ctx.note(Stage::Duhamel, format!("t={t:e} residual={residual:.3e} trace_norm={:.12e}", trace_norm(&want)));
    }
    let (a0, a1, n) = config.quadrature.scan;
    let scan = ctx.lift(Stage::Duhamel, "quadrature.scan", uniform_bound_scan(pair, a0, a1, n))?;
    ctx.note(Stage::Duhamel, format!("scan max={:.12e} at t={:e}", scan.max, scan.argmax));
    Ok((rows, Some(scan)))
}

fn invariants_stage(
    ctx: &mut Ctx<'_>,
    config: &ExperimentConfig,
    pair: &PerturbationPair,
    kernel_dims: (usize, usize),
    zeta: &ZetaResult,
    duhamel: Vec<DuhamelRow>,
    uniform_bound: Option<BoundScan>,
) -> Result<InvariantRecord, RunError> {
    let st = Stage::Invariants;
    let mut relative = None;
    let mut torsion = None;
    let mut euler = None;
    match &config.model {
        ModelSpec::GradedBlock(g) => {
            let (a, b) = ctx.lift(st, "model", build_graded(g))?;
            let r = ctx.lift(st, "model", relative_index(&a, &b, &[0.1, 1.0, 10.0]))?;
            ctx.note(st, format!("relative index {:.12e} (kernel count {})", r.mean, r.kernel_index_difference));
            relative = Some(r);
        }
        ModelSpec::HodgeComplex(c) => {
            let tower = ctx.lift(st, "model", build_hodge_tower(c))?;
            let zc = config.zeta_config();
            let pw = ctx.lift(st, "zeta", relative_torsion(&tower, WeightConvention::PaperAsWritten, &zc))?;
            let qw = WeightConvention::QWeighted;
            let q_weighted = 0.5 * pw.per_degree.iter().map(|&(q, z)| qw.weight(q) * z).sum::<f64>();
            let dense = ctx.lift(st, "model", dense_log_torsion(&tower))?;
            ctx.note(st, format!("log torsion {:.12e} (dense {:.12e})", pw.log_torsion, dense));
            torsion = Some(TorsionRecord {
                log_torsion: pw.log_torsion,
                q_weighted,
                dense_oracle: dense,
                per_degree: pw.per_degree,
            });
            let complex = ctx.lift(st, "model", c.chain_complex())?;
            let mut supertraces = Vec::new();
            for &t in &[0.01, 0.1, 1.0, 10.0, 100.0] {
                let mut v = 0.0;
                for (q, p) in tower.iter().enumerate() {
                    let ev = ctx.lift(st, "model", p.base().eigenvalues())?;
                    let tr: f64 = ev.iter().map(|&l| (-t * l).exp()).sum();
                    v += if q % 2 == 0 { tr } else { -tr };
                }
                supertraces.push((t, v));
            }
            euler = Some(EulerRecord { characteristic: complex.euler_characteristic(), supertraces });
        }
        _ => {}
    }
    Ok(InvariantRecord {
        label: pair.label().to_string(),
        kind: config.model.kind_name().to_string(),
        dim: pair.dim(),
        kernel_dims,
        h: zeta.h,
        det_rel: zeta.determinant,
        log_det_rel: -zeta.zeta_prime_at_zero,
        zeta_prime_at_zero: zeta.zeta_prime_at_zero,
        zeta_prime_error_estimate: zeta.diagnostics.zeta_prime_error_estimate,
        uniform_bound,
        duhamel,
        relative_index: relative,
        torsion,
        euler,
    })
}

fn render_files(
    config: &ExperimentConfig,
    series: &HeatTraceSeries,
    expansion: &AsymptoticExpansion,
    zeta: &ZetaResult,
    inv: &InvariantRecord,
) -> Result<Vec<(String, Vec<u8>)>, RunError> {
    let mut files = Vec::new();
    let formats = &config.outputs.formats;
    if formats.contains(&Format::Csv) {
        files.push(("series.csv".to_string(), series.to_csv().into_bytes()));
        files.push(("expansion.csv".to_string(), expansion.to_csv().into_bytes()));
        let mut z = String::from("s,re,im\n");
        for (s, v) in zeta.s_values.iter().zip(&zeta.zeta_values) {
            let _ = writeln!(z, "{:.16e},{:.16e},{:.16e}", s.re, v.re, v.im);
        }
        files.push(("zeta.csv".to_string(), z.into_bytes()));
        if !inv.duhamel.is_empty() {
            let mut d = String::from("t,residual,trace_norm\n");
            for r in &inv.duhamel {
                let _ = writeln!(d, "{:.16e},{:.16e},{:.16e}", r.t, r.residual, r.trace_norm);
            }
            files.push(("duhamel.csv".to_string(), d.into_bytes()));
        }
        if let Some(scan) = &inv.uniform_bound {
            let mut d = String::from("t,trace_norm\n");
            for (t, v) in scan.t_grid.iter().zip(&scan.trace_norms) {
                let _ = writeln!(d, "{t:.16e},{v:.16e}");
            }
            files.push(("trace_norm_scan.csv".to_string(), d.into_bytes()));
        }
    }
    if formats.contains(&Format::Json) {
        files.push(("zeta.json".to_string(), pretty(zeta).into_bytes()));
        files.push(("invariants.json".to_string(), pretty(inv).into_bytes()));
    }
    Ok(files)
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("records serialize to JSON");
    s.push('\n');
    s
}

fn write_outputs(
    ctx: &Ctx<'_>,
    config: &ExperimentConfig,
    output_dir: &Path,
    files: Vec<(String, Vec<u8>)>,
) -> Result<Manifest, RunError> {
    let io = |e: std::io::Error, what: &str| {
        ctx.fail(Stage::Write, "outputs.directory", FailureKind::Io, format!("{what}: {e}"))
    };
    let mut all = files;
    all.push(("run.log".to_string(), ctx.log.clone().into_bytes()));
    let manifest = Manifest {
        tool: format!("relspec {}", env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        config_toml: config.to_toml(),
        files: all
            .iter()
            .map(|(name, bytes)| ManifestEntry { name: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() })
            .collect(),
    };
    all.push(("manifest.json".to_string(), pretty(&manifest).into_bytes()));

    if output_dir.exists() {
        let ours = output_dir.join("manifest.json").is_file();
        let empty = fs::read_dir(output_dir).map_err(|e| io(e, "reading output directory"))?.next().is_none();
        if !ours && !empty {
            return Err(ctx.fail(
                Stage::Write,
                "outputs.directory",
                FailureKind::Io,
                format!("{} exists and holds files from something else", output_dir.display()),
            ));
        }
    }
    let parent = match output_dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| io(e, "creating output parent"))?;
    let name = output_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        for (name, bytes) in &all {
            fs::write(staging.join(name), bytes)?;
        }
        if output_dir.exists() {
            fs::remove_dir_all(output_dir)?;
        }
        fs::rename(&staging, output_dir)
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(io(e, "writing outputs"));
    }
    Ok(manifest)
}

/// Recomputes the hashes listed in `dir/manifest.json`; returns the names
/// whose contents no longer match.
pub fn check_manifest(dir: &Path) -> std::io::Result<Vec<String>> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut bad = Vec::new();
    for f in &manifest.files {
        match fs::read(dir.join(&f.name)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            _ => bad.push(f.name.clone()),
        }
    }
    Ok(bad)
}
