//! Human-readable summaries of run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use relspec::asymptotics::AsymptoticExpansion;
use relspec::heat::{HeatTraceSeries, MethodKind};
use relspec::zeta::ZetaResult;

use crate::run::{check_manifest, FailureKind, InvariantRecord, Manifest};

#[derive(Debug)]
pub struct InspectError {
    pub kind: FailureKind,
    pub message: String,
}

impl std::fmt::Display for InspectError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn unreadable(path: &Path, what: impl std::fmt::Display) -> InspectError {
    InspectError { kind: FailureKind::Validation, message: format!("{}: {what}", path.display()) }
}

/// Summarizes a manifest, zeta record, invariant record, series CSV or
/// expansion CSV. A directory is treated as its manifest.
pub fn inspect(path: &Path) -> Result<String, InspectError> {
    let path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&path)
        .map_err(|e| InspectError { kind: FailureKind::Io, message: format!("{}: {e}", path.display()) })?;
    let mut out = String::new();
    if path.extension().is_some_and(|e| e == "csv") {
        if text.lines().any(|l| l.trim() == "order,coefficient,stderr") {
            let e = AsymptoticExpansion::from_csv(&text).map_err(|e| unreadable(&path, e))?;
            let _ = writeln!(out, "expansion: n_dim {} L {} samples {}", e.n_dim, e.l, e.samples);
            let _ = writeln!(
                out,
                "window [{:e}, {:e}] condition {:.3e} rms {:.3e}",
                e.fit_window.0, e.fit_window.1, e.condition_number, e.residual_rms
            );
            for ((p, a), se) in e.exponents.iter().zip(&e.coefficients).zip(&e.stderr) {
                let _ = writeln!(out, "  t^{p:<5} {a:+.10e} ± {se:.2e}");
            }
            for w in &e.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
        } else {
            let s = HeatTraceSeries::from_csv(&text, MethodKind::DenseSpectral, "")
                .or_else(|_| HeatTraceSeries::from_csv(&text, MethodKind::Stochastic, ""))
                .map_err(|e| unreadable(&path, e))?;
            let (t, v) = (s.t_grid(), s.values());
            let _ = writeln!(out, "series: {} samples on [{:e}, {:e}]", s.len(), t[0], t[t.len() - 1]);
            let _ = writeln!(out, "first {:.10e}  last {:.10e}", v[0], v[v.len() - 1]);
        }
        return Ok(out);
    }
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| unreadable(&path, e))?;
    if value.get("files").is_some() {
        let m: Manifest = serde_json::from_value(value).map_err(|e| unreadable(&path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let bad = check_manifest(dir).map_err(|e| InspectError { kind: FailureKind::Io, message: e.to_string() })?;
        let _ = writeln!(out, "manifest: {} ({} files, model {})", m.tool, m.files.len(), m.config.model.kind_name());
        for f in &m.files {
            let status = if bad.contains(&f.name) { "MISMATCH" } else { "ok" };
            let _ = writeln!(out, "  {:<22} {:>9} bytes  {}  {status}", f.name, f.bytes, &f.sha256[..16]);
        }
        if !bad.is_empty() {
            return Err(InspectError {
                kind: FailureKind::Io,
                message: format!("{out}hash mismatch: {}", bad.join(", ")),
            });
        }
    } else if value.get("zeta_values").is_some() {
        let z: ZetaResult = serde_json::from_value(value).map_err(|e| unreadable(&path, e))?;
        let _ = writeln!(
            out,
            "zeta: h {} split {} zeta'(0) {:.12e} det {:.12e}",
            z.h, z.split_point, z.zeta_prime_at_zero, z.determinant
        );
        for (s, v) in z.s_values.iter().zip(&z.zeta_values) {
            let _ = writeln!(out, "  zeta({}) = {:+.12e} {:+.3e}i", s.re, v.re, v.im);
        }
        for p in &z.poles {
            let _ = writeln!(out, "  pole at {} residue {:.6e}", p.location, p.residue);
        }
        let d = &z.diagnostics;
        let _ = writeln!(
            out,
            "diagnostics: gap {:.3e} tail {:.1e} remainder {:.1e} fd error {:.1e}",
            d.gap, d.tail_deviation, d.small_t_remainder, d.zeta_prime_error_estimate
        );
    } else if value.get("det_rel").is_some() {
        let r: InvariantRecord = serde_json::from_value(value).map_err(|e| unreadable(&path, e))?;
        let _ = writeln!(out, "invariants: {} ({}, dim {})", r.label, r.kind, r.dim);
        let _ = writeln!(out, "  kernel dims {:?}  h {}", r.kernel_dims, r.h);
        let _ = writeln!(out, "  det_rel {:.12e}  zeta'(0) {:.12e}", r.det_rel, r.zeta_prime_at_zero);
        if let Some(b) = &r.uniform_bound {
            let _ = writeln!(out, "  trace-norm max {:.6e} at t = {}", b.max, b.argmax);
        }
        for d in &r.duhamel {
            let _ = writeln!(out, "  duhamel t={} residual {:.2e}", d.t, d.residual);
        }
        if let Some(i) = &r.relative_index {
            let _ = writeln!(out, "  relative index {:.12e} (spread {:.1e})", i.mean, i.max_deviation);
        }
        if let Some(t) = &r.torsion {
            let _ = writeln!(
                out,
                "  log torsion {:.12e} (dense {:.12e}, q-weighted {:.12e})",
                t.log_torsion, t.dense_oracle, t.q_weighted
            );
        }
        if let Some(e) = &r.euler {
            let _ = writeln!(out, "  euler characteristic {}", e.characteristic);
        }
    } else {
        return Err(unreadable(&path, "not a relspec record"));
    }
    Ok(out)
}
