//! Finite self-adjoint operators, graded operators and perturbation pairs.
//!
//! An [`OperatorHandle`] stands in for a nonnegative operator such as D² or a
//! Hodge Laplacian Δ_q. It stores a symmetric matrix (dense or sparse) and
//! lazily caches its spectrum. A [`PerturbationPair`] couples a base operator
//! A with a perturbed operator A' and records η = A' − A together with the
//! kernel-dimension difference h used by the large-time analysis.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest dimension for which dense spectral decompositions are allowed.
pub const DENSE_THRESHOLD: usize = 2000;

/// Eigenvalues below `KERNEL_REL_THRESHOLD · λ_max` count as zero.
pub const KERNEL_REL_THRESHOLD: f64 = 1e-9;

/// Relative asymmetry tolerated at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Nonnegativity slack for Laplacian-kind operators.
pub const NEGATIVITY_TOL: f64 = 1e-10;

/// Symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds from (row, col, value) triplets. Duplicates are summed and exact
    /// zeros dropped.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.max(c) + 1 });
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        let keep: Vec<bool> = vals.iter().map(|&v| v != 0.0).collect();
        let mut k = 0;
        let (mut c2, mut v2) = (Vec::new(), Vec::new());
        for (idx, &r) in rows.iter().enumerate() {
            if keep[idx] {
                row_ptr[r + 1] += 1;
                c2.push(cols[idx]);
                v2.push(vals[idx]);
                k += 1;
            }
        }
        debug_assert_eq!(k, c2.len());
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { dim, row_ptr, cols: c2, vals: v2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim, (0..self.dim).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum::<f64>()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (c, v) in self.row(i) {
                m[(i, c)] = v;
            }
        }
        m
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.dim).flat_map(|i| self.row(i).map(move |(c, v)| (i, c, v))).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn relative_asymmetry(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let mut diff = 0.0;
        for (i, j, v) in self.triplets() {
            let d = v - self.get(j, i);
            diff += d * d;
        }
        diff.sqrt() / norm
    }

    /// Diagonal and first off-diagonal when the pattern is tridiagonal.
    pub fn tridiagonal_parts(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut diag = vec![0.0; self.dim];
        let mut off = vec![0.0; self.dim.saturating_sub(1)];
        for i in 0..self.dim {
            for (c, v) in self.row(i) {
                match c as isize - i as isize {
                    0 => diag[i] = v,
                    1 => off[i] = v,
                    -1 => {}
                    _ => return None,
                }
            }
        }
        Some((diag, off))
    }
}

/// Storage backing an [`OperatorHandle`].
#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    Dense(DMatrix<f64>),
    Sparse(SparseSymmetric),
}

/// Full eigendecomposition with eigenvalues nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    /// Q f(Λ) Qᵀ.
    pub fn function_matrix(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        &scaled * self.vectors.transpose()
    }

    /// Q f(Λ) Qᵀ v.
    pub fn function_apply(&self, f: impl Fn(f64) -> f64, v: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.vectors.tr_mul(v);
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c *= f(self.values[k]);
        }
        &self.vectors * coeffs
    }
}

/// A finite symmetric operator with a lazily filled spectral cache.
#[derive(Clone)]
pub struct OperatorHandle {
    label: String,
    storage: Storage,
    spectrum: OnceLock<Arc<Spectrum>>,
    eigenvalues: OnceLock<Arc<Vec<f64>>>,
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .field("sparse", &self.is_sparse())
            .finish()
    }
}

impl PartialEq for OperatorHandle {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label && self.storage == other.storage
    }
}

impl OperatorHandle {
    /// Dense symmetric operator. Asymmetry up to [`SYMMETRY_TOL`] is removed
    /// by averaging with the transpose.
    pub fn dense(label: impl Into<String>, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch { expected: entries.nrows(), found: entries.ncols() });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("operator entries must be finite".into()));
        }
        let asym = linalg::relative_asymmetry(&entries);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let entries = if asym > 0.0 { (&entries + entries.transpose()) * 0.5 } else { entries };
        Ok(Self::from_storage(label.into(), Storage::Dense(entries)))
    }

    /// Sparse symmetric operator from (row, col, value) triplets.
    pub fn sparse(label: impl Into<String>, dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if triplets.iter().any(|t| !t.2.is_finite()) {
            return Err(Error::Domain("operator entries must be finite".into()));
        }
        let m = SparseSymmetric::from_triplets(dim, triplets)?;
        let asym = m.relative_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::from_storage(label.into(), Storage::Sparse(m)))
    }

    /// Diagonal operator.
    pub fn diagonal(label: impl Into<String>, diag: &[f64]) -> Result<Self> {
        Self::dense(label, DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    fn from_storage(label: String, storage: Storage) -> Self {
        Self { label, storage, spectrum: OnceLock::new(), eigenvalues: OnceLock::new() }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn dim(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.nrows(),
            Storage::Sparse(s) => s.dim(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(s) => s.to_dense(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[(i, j)],
            Storage::Sparse(s) => s.get(i, j),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.storage {
            Storage::Dense(m) => m * v,
            Storage::Sparse(s) => s.matvec(v),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m.norm(),
            Storage::Sparse(s) => s.frobenius_norm(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entry(i, i)).sum()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            Storage::Dense(m) => {
                let mut out = Vec::new();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        if m[(i, j)] != 0.0 {
                            out.push((i, j, m[(i, j)]));
                        }
                    }
                }
                out
            }
            Storage::Sparse(s) => s.triplets(),
        }
    }

    pub fn tridiagonal_parts(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.storage {
            Storage::Sparse(s) => s.tridiagonal_parts(),
            Storage::Dense(_) => None,
        }
    }

    /// Full eigendecomposition, computed once. Not available above
    /// [`DENSE_THRESHOLD`].
    pub fn spectrum(&self) -> Result<Arc<Spectrum>> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s.clone());
        }
        if self.dim() > DENSE_THRESHOLD {
            return Err(Error::Capability(format!(
                "dense eigendecomposition of '{}' (dim {}) exceeds the dense threshold {}",
                self.label,
                self.dim(),
                DENSE_THRESHOLD
            )));
        }
        let (values, vectors) = linalg::sorted_symmetric_eigen(&self.to_dense());
        Ok(self.spectrum.get_or_init(|| Arc::new(Spectrum { values, vectors })).clone())
    }

    /// Eigenvalues, nonincreasing. Tridiagonal operators of any size use an
    /// O(n²) QL sweep; everything else needs the dense decomposition.
    pub fn eigenvalues(&self) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.eigenvalues.get() {
            return Ok(v.clone());
        }
        let values = if let Some(s) = self.spectrum.get() {
            s.values.iter().copied().collect()
        } else if let Some((diag, off)) = self.tridiagonal_parts() {
            linalg::tridiagonal_eigenvalues(&diag, &off)?
        } else {
            self.spectrum()?.values.iter().copied().collect()
        };
        Ok(self.eigenvalues.get_or_init(|| Arc::new(values)).clone())
    }

    /// Largest eigenvalue (0 for the empty operator).
    pub fn lambda_max(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    /// ‖Q Λ Qᵀ − entries‖_F / ‖entries‖_F for the cached decomposition.
    pub fn reconstruction_error(&self) -> Result<f64> {
        let spec = self.spectrum()?;
        let dense = self.to_dense();
        let norm = dense.norm();
        let rebuilt = spec.function_matrix(|x| x);
        Ok(if norm == 0.0 { rebuilt.norm() } else { (rebuilt - dense).norm() / norm })
    }

    /// Fails when an eigenvalue lies below −[`NEGATIVITY_TOL`]·max(1, λ_max).
    pub fn check_nonnegative(&self) -> Result<()> {
        let values = self.eigenvalues()?;
        let scale = values.first().copied().unwrap_or(0.0).abs().max(1.0);
        if let Some(&min) = values.last() {
            if min < -NEGATIVITY_TOL * scale {
                return Err(Error::InvalidModel(format!(
                    "operator '{}' has negative eigenvalue {min:.3e}",
                    self.label
                )));
            }
        }
        Ok(())
    }

    /// Graph distances from `site` along the sparsity pattern. Dense storage
    /// carries no locality structure.
    pub fn distances_from(&self, site: usize) -> Result<Vec<Option<usize>>> {
        let Storage::Sparse(s) = &self.storage else {
            return Err(Error::Capability(format!("operator '{}' is dense and has no distance structure", self.label)));
        };
        if site >= s.dim() {
            return Err(Error::Parameter(format!("site {site} out of range (dim {})", s.dim())));
        }
        let mut dist = vec![None; s.dim()];
        dist[site] = Some(0);
        let mut queue = VecDeque::from([site]);
        while let Some(i) = queue.pop_front() {
            let d = dist[i].unwrap();
            for (j, _) in s.row(i) {
                if dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        Ok(dist)
    }

    /// Writes `row col value` lines (zero-based) after a `# dim N` header.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# {} dim {}", self.label, self.dim())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:.16e}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`OperatorHandle::write_triplets`].
    pub fn read_triplets<R: BufRead>(label: impl Into<String>, input: R) -> Result<Self> {
        let mut dim = None;
        let mut triplets = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::Parameter(format!("triplet read failed: {e}")))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(pos) = rest.rfind("dim ") {
                    dim = rest[pos + 4..].trim().parse::<usize>().ok();
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse_err = || Error::Parameter(format!("malformed triplet line '{line}'"));
            let i: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(parse_err)?;
            let j: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(parse_err)?;
            let v: f64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(parse_err)?;
            triplets.push((i, j, v));
        }
        let dim = dim.ok_or_else(|| Error::Parameter("triplet file lacks a '# dim N' header".into()))?;
        Self::sparse(label, dim, &triplets)
    }
}

/// Counts eigenvalues at or below `threshold`.
pub fn kernel_dim(values: &[f64], threshold: f64) -> usize {
    values.iter().filter(|&&v| v <= threshold).count()
}

/// Per-region Frobenius norms of η and the tail flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub region_size: usize,
    pub regions: Vec<(usize, f64)>,
    pub total_norm: f64,
    pub tail_norm: f64,
    pub flagged: bool,
}

/// Tail regions whose norm exceeds this fraction of ‖η‖_F raise the flag.
pub const DECAY_TAIL_REL: f64 = 1e-8;

/// A base operator A = D², a perturbed operator A' = D'², and η = A' − A.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    label: String,
    degree: Option<usize>,
    base: OperatorHandle,
    perturbed: OperatorHandle,
    eta: OperatorHandle,
    decay_profile: DecayReport,
    weight_change: Option<DVector<f64>>,
    kernel_dims: OnceLock<(usize, usize)>,
}

impl PerturbationPair {
    pub fn new(label: impl Into<String>, base: OperatorHandle, perturbed: OperatorHandle) -> Result<Self> {
        if base.dim() != perturbed.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), found: perturbed.dim() });
        }
        let eta = match (base.storage(), perturbed.storage()) {
            (Storage::Sparse(a), Storage::Sparse(b)) => {
                let mut t = b.triplets();
                t.extend(a.triplets().into_iter().map(|(i, j, v)| (i, j, -v)));
                OperatorHandle::sparse("eta", base.dim(), &t)?
            }
            _ => OperatorHandle::dense("eta", perturbed.to_dense() - base.to_dense())?,
        };
        let dim = base.dim();
        let mut pair = Self {
            label: label.into(),
            degree: None,
            base,
            perturbed,
            eta,
            decay_profile: DecayReport {
                region_size: 1,
                regions: Vec::new(),
                total_norm: 0.0,
                tail_norm: 0.0,
                flagged: false,
            },
            weight_change: None,
            kernel_dims: OnceLock::new(),
        };
        if dim > 0 {
            pair.decay_profile = decay_report(&pair, (dim / 10).max(1))?;
        }
        Ok(pair)
    }

    /// Attaches the diagonal density Ω for which the perturbed operator is
    /// self-adjoint; `perturbed` then holds its symmetrized form Ω^{1/2} A'_op Ω^{-1/2}.
    pub fn with_weight_change(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: weights.len() });
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Domain("weight change must be strictly positive".into()));
        }
        self.weight_change = Some(weights);
        Ok(self)
    }

    pub fn with_degree(mut self, q: usize) -> Self {
        self.degree = Some(q);
        self
    }

    /// The same operators with roles exchanged.
    pub fn reversed(&self) -> Result<Self> {
        let mut p = Self::new(format!("{}-reversed", self.label), self.perturbed.clone(), self.base.clone())?;
        p.degree = self.degree;
        Ok(p)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn degree(&self) -> Option<usize> {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &OperatorHandle {
        &self.base
    }

    pub fn perturbed(&self) -> &OperatorHandle {
        &self.perturbed
    }

    pub fn eta(&self) -> &OperatorHandle {
        &self.eta
    }

    pub fn decay_profile(&self) -> &DecayReport {
        &self.decay_profile
    }

    pub fn weight_change(&self) -> Option<&DVector<f64>> {
        self.weight_change.as_ref()
    }

    /// max(λ_max(A), λ_max(A')).
    pub fn spectral_scale(&self) -> Result<f64> {
        Ok(self.base.lambda_max()?.max(self.perturbed.lambda_max()?))
    }

    /// Eigenvalues at or below this count as zero.
    pub fn kernel_threshold(&self) -> Result<f64> {
        Ok(KERNEL_REL_THRESHOLD * self.spectral_scale()?)
    }

    /// (dim ker A, dim ker A').
    pub fn kernel_dims(&self) -> Result<(usize, usize)> {
        if let Some(&k) = self.kernel_dims.get() {
            return Ok(k);
        }
        let thr = self.kernel_threshold()?;
        let k = (kernel_dim(&self.base.eigenvalues()?, thr), kernel_dim(&self.perturbed.eigenvalues()?, thr));
        Ok(*self.kernel_dims.get_or_init(|| k))
    }

    /// h = dim ker A − dim ker A'.
    pub fn kernel_dim_diff(&self) -> Result<i64> {
        let (a, b) = self.kernel_dims()?;
        Ok(a as i64 - b as i64)
    }

    /// The perturbed operator as it acts in base coordinates,
    /// Ω^{-1/2} S' Ω^{1/2} (equal to `perturbed` when no weight change is set).
    pub fn perturbed_raw(&self) -> DMatrix<f64> {
        let s = self.perturbed.to_dense();
        match &self.weight_change {
            None => s,
            Some(w) => {
                let n = s.nrows();
                DMatrix::from_fn(n, n, |i, j| s[(i, j)] * (w[j] / w[i]).sqrt())
            }
        }
    }
}

/// Partitions indices into consecutive regions of `region_size` and reports
/// ‖η‖_F over the rows of each region. The flag is raised when the first or
/// last region carries more than [`DECAY_TAIL_REL`] of ‖η‖_F.
pub fn decay_report(pair: &PerturbationPair, region_size: usize) -> Result<DecayReport> {
    let dim = pair.dim();
    if region_size == 0 || region_size > dim {
        return Err(Error::Parameter(format!("region size {region_size} must lie in 1..={dim}")));
    }
    let mut row_sq = vec![0.0; dim];
    for (i, _, v) in pair.eta().triplets() {
        row_sq[i] += v * v;
    }
    let regions: Vec<(usize, f64)> =
        row_sq.chunks(region_size).enumerate().map(|(k, chunk)| (k, chunk.iter().sum::<f64>().sqrt())).collect();
    let total_norm = row_sq.iter().sum::<f64>().sqrt();
    let tail_norm = regions.first().map(|r| r.1).unwrap_or(0.0).max(regions.last().map(|r| r.1).unwrap_or(0.0));
    let flagged = total_norm > 0.0 && tail_norm > DECAY_TAIL_REL * total_norm;
    Ok(DecayReport { region_size, regions, total_norm, tail_norm, flagged })
}

/// A Dirac-type operator D with grading τ = diag(±1) such that τD = −Dτ.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedOperator {
    dirac: DMatrix<f64>,
    grading: Vec<i8>,
}

/// Tolerance on ‖τD + Dτ‖_F relative to max(1, ‖D‖_F).
pub const ANTICOMMUTATION_TOL: f64 = 1e-12;

impl GradedOperator {
    pub fn new(dirac: DMatrix<f64>, grading: Vec<i8>) -> Result<Self> {
        let n = dirac.nrows();
        if dirac.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: dirac.ncols() });
        }
        if grading.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: grading.len() });
        }
        if grading.iter().any(|&g| g != 1 && g != -1) {
            return Err(Error::Parameter("grading entries must be +1 or -1".into()));
        }
        let asym = linalg::relative_asymmetry(&dirac);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let op = Self { dirac, grading };
        let anti = op.anticommutator_norm();
        if anti > ANTICOMMUTATION_TOL * op.dirac.norm().max(1.0) {
            return Err(Error::Parameter(format!(
                "dirac operator does not anticommute with the grading (‖τD + Dτ‖ = {anti:.3e})"
            )));
        }
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.grading.len()
    }

    pub fn dirac(&self) -> &DMatrix<f64> {
        &self.dirac
    }

    pub fn grading(&self) -> &[i8] {
        &self.grading
    }

    pub fn grading_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(self.dim(), self.grading.iter().map(|&g| g as f64)))
    }

    pub fn plus_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.grading[i] == 1).collect()
    }

    pub fn minus_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.grading[i] == -1).collect()
    }

    /// ‖τD + Dτ‖_F.
    pub fn anticommutator_norm(&self) -> f64 {
        let n = self.dim();
        let mut sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = (self.grading[i] as f64 + self.grading[j] as f64) * self.dirac[(i, j)];
                sq += v * v;
            }
        }
        sq.sqrt()
    }

    pub fn dirac_squared(&self) -> DMatrix<f64> {
        &self.dirac * &self.dirac
    }

    /// D⁺: the block mapping the +1 eigenspace of τ into the −1 eigenspace.
    pub fn dplus(&self) -> DMatrix<f64> {
        let (p, m) = (self.plus_indices(), self.minus_indices());
        DMatrix::from_fn(m.len(), p.len(), |r, c| self.dirac[(m[r], p[c])])
    }

    /// The blocks D⁻D⁺ (on the + space) and D⁺D⁻ (on the − space) of D².
    pub fn squared_blocks(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d2 = self.dirac_squared();
        let (p, m) = (self.plus_indices(), self.minus_indices());
        let plus = DMatrix::from_fn(p.len(), p.len(), |r, c| d2[(p[r], p[c])]);
        let minus = DMatrix::from_fn(m.len(), m.len(), |r, c| d2[(m[r], m[c])]);
        (plus, minus)
    }

    /// (dim ker D⁺, dim ker D⁻), thresholding eigenvalues of D² at
    /// [`KERNEL_REL_THRESHOLD`] · λ_max(D²).
    pub fn kernel_dims(&self) -> (usize, usize) {
        let (plus, minus) = self.squared_blocks();
        let ev_p = linalg::symmetric_eigenvalues(&plus);
        let ev_m = linalg::symmetric_eigenvalues(&minus);
        let lmax = ev_p.first().copied().unwrap_or(0.0).max(ev_m.first().copied().unwrap_or(0.0));
        let thr = KERNEL_REL_THRESHOLD * lmax;
        (kernel_dim(&ev_p, thr), kernel_dim(&ev_m, thr))
    }

    /// ind D = dim ker D⁺ − dim ker D⁻.
    pub fn index(&self) -> i64 {
        let (p, m) = self.kernel_dims();
        p as i64 - m as i64
    }

    pub fn same_grading(&self, other: &Self) -> bool {
        self.grading == other.grading
    }
}

/// Assembles D = [[0, D⁻], [D⁺, 0]] with D⁻ = (D⁺)ᵀ and τ = diag(+1…, −1…),
/// the + block spanning the columns of `dplus`.
pub fn graded_from_block(dplus: &DMatrix<f64>) -> GradedOperator {
    let (m, p) = dplus.shape();
    let n = p + m;
    let mut dirac = DMatrix::zeros(n, n);
    for r in 0..m {
        for c in 0..p {
            dirac[(p + r, c)] = dplus[(r, c)];
            dirac[(c, p + r)] = dplus[(r, c)];
        }
    }
    let grading = std::iter::repeat_n(1i8, p).chain(std::iter::repeat_n(-1i8, m)).collect();
    GradedOperator { dirac, grading }
}
