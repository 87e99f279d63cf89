//! Simplicial chain complexes and weighted Hodge Laplacians.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::rows_to_matrix;
use crate::operator::{OperatorHandle, PerturbationPair};

/// Relative Frobenius tolerance for ∂_{q−1}∂_q = 0.
pub const CHAIN_TOL: f64 = 1e-12;

/// A weighted complex: either generating simplices (closed under faces) or
/// explicit boundary matrices, plus two positive weightings per degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpec {
    /// Generating simplices as vertex lists.
    #[serde(default)]
    pub simplices: Option<Vec<Vec<usize>>>,
    /// `boundaries[q − 1]` is ∂_q as a row list (n_{q−1} rows, n_q columns).
    #[serde(default)]
    pub boundaries: Option<Vec<Vec<Vec<f64>>>>,
    /// `weights[q]` has one entry per q-cell; unit weights when absent.
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub weights_prime: Option<Vec<Vec<f64>>>,
}

/// Cell counts and boundary maps ∂_q : C_q → C_{q−1}, q = 1..=top.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainComplex {
    counts: Vec<usize>,
    boundaries: Vec<DMatrix<f64>>,
}

impl ChainComplex {
    /// Checks shapes and the chain condition.
    pub fn from_boundaries(counts: Vec<usize>, boundaries: Vec<DMatrix<f64>>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidComplex("complex has no cells".into()));
        }
        if boundaries.len() + 1 != counts.len() {
            return Err(Error::InvalidComplex(format!(
                "{} degrees need {} boundary maps, got {}",
                counts.len(),
                counts.len() - 1,
                boundaries.len()
            )));
        }
        for (k, b) in boundaries.iter().enumerate() {
            if b.shape() != (counts[k], counts[k + 1]) {
                return Err(Error::InvalidComplex(format!(
                    "boundary ∂_{} has shape {:?}, expected ({}, {})",
                    k + 1,
                    b.shape(),
                    counts[k],
                    counts[k + 1]
                )));
            }
        }
        for k in 1..boundaries.len() {
            let prod = &boundaries[k - 1] * &boundaries[k];
            let scale = boundaries[k - 1].norm() * boundaries[k].norm();
            if prod.norm() > CHAIN_TOL * scale.max(1.0) {
                return Err(Error::InvalidComplex(format!("∂_{}∂_{} ≠ 0 (norm {:.3e})", k, k + 1, prod.norm())));
            }
        }
        Ok(Self { counts, boundaries })
    }

    /// Closure of the generating simplices with lexicographically ordered
    /// cells and the standard alternating-sign boundary.
    pub fn from_simplices(generators: &[Vec<usize>]) -> Result<Self> {
        let mut by_dim: Vec<BTreeSet<Vec<usize>>> = Vec::new();
        for g in generators {
            let mut s = g.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != g.len() || s.is_empty() {
                return Err(Error::InvalidComplex(format!("degenerate simplex {g:?}")));
            }
            // every nonempty subset is a face
            let k = s.len();
            if k > 20 {
                return Err(Error::InvalidComplex("simplex dimension too large".into()));
            }
            for mask in 1u32..(1 << k) {
                let face: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| s[i]).collect();
                let d = face.len() - 1;
                if by_dim.len() <= d {
                    by_dim.resize(d + 1, BTreeSet::new());
                }
                by_dim[d].insert(face);
            }
        }
        if by_dim.is_empty() {
            return Err(Error::InvalidComplex("complex has no simplices".into()));
        }
        let cells: Vec<Vec<Vec<usize>>> = by_dim.into_iter().map(|s| s.into_iter().collect()).collect();
        let index: Vec<BTreeMap<&Vec<usize>, usize>> =
            cells.iter().map(|level| level.iter().enumerate().map(|(i, c)| (c, i)).collect()).collect();
        let mut boundaries = Vec::with_capacity(cells.len().saturating_sub(1));
        for q in 1..cells.len() {
            let mut b = DMatrix::zeros(cells[q - 1].len(), cells[q].len());
            for (j, cell) in cells[q].iter().enumerate() {
                for drop in 0..cell.len() {
                    let face: Vec<usize> =
                        cell.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, &v)| v).collect();
                    let row = index[q - 1][&face];
                    b[(row, j)] = if drop % 2 == 0 { 1.0 } else { -1.0 };
                }
            }
            boundaries.push(b);
        }
        let counts = cells.iter().map(Vec::len).collect();
        Self::from_boundaries(counts, boundaries)
    }

    pub fn top_degree(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// ∂_q for q = 1..=top.
    pub fn boundary(&self, q: usize) -> Option<&DMatrix<f64>> {
        if q == 0 {
            None
        } else {
            self.boundaries.get(q - 1)
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.counts.iter().enumerate().map(|(q, &c)| if q % 2 == 0 { c as i64 } else { -(c as i64) }).sum()
    }

    /// b_q = n_q − rank ∂_q − rank ∂_{q+1}.
    pub fn betti_numbers(&self) -> Vec<usize> {
        let ranks: Vec<usize> = self.boundaries.iter().map(|b| linalg::numerical_rank(b, 1e-10)).collect();
        (0..self.counts.len())
            .map(|q| {
                let down = if q == 0 { 0 } else { ranks[q - 1] };
                let up = ranks.get(q).copied().unwrap_or(0);
                self.counts[q] - down - up
            })
            .collect()
    }

    /// Δ_q = B_qᵀB_q + B_{q+1}B_{q+1}ᵀ with B_q = W_{q−1}^{1/2} ∂_q W_q^{−1/2}.
    pub fn hodge_laplacians(&self, weights: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>> {
        self.check_weights(weights)?;
        let scaled: Vec<DMatrix<f64>> = self
            .boundaries
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let (lo, hi) = (&weights[k], &weights[k + 1]);
                DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * (lo[i] / hi[j]).sqrt())
            })
            .collect();
        Ok((0..self.counts.len())
            .map(|q| {
                let n = self.counts[q];
                let mut lap = DMatrix::zeros(n, n);
                if q > 0 {
                    lap += scaled[q - 1].tr_mul(&scaled[q - 1]);
                }
                if let Some(b) = scaled.get(q) {
                    lap += b * b.transpose();
                }
                lap
            })
            .collect())
    }

    fn check_weights(&self, weights: &[Vec<f64>]) -> Result<()> {
        if weights.len() != self.counts.len() {
            return Err(Error::InvalidModel(format!(
                "weights given for {} degrees, complex has {}",
                weights.len(),
                self.counts.len()
            )));
        }
        for (q, (w, &n)) in weights.iter().zip(&self.counts).enumerate() {
            if w.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: w.len() });
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidModel(format!("degree-{q} weights must be strictly positive")));
            }
        }
        Ok(())
    }

    pub fn unit_weights(&self) -> Vec<Vec<f64>> {
        self.counts.iter().map(|&n| vec![1.0; n]).collect()
    }
}

impl ComplexSpec {
    pub fn chain_complex(&self) -> Result<ChainComplex> {
        match (&self.simplices, &self.boundaries) {
            (Some(s), None) => ChainComplex::from_simplices(s),
            (None, Some(bs)) => {
                let mats: Vec<DMatrix<f64>> = bs.iter().map(|b| rows_to_matrix(b)).collect::<Result<_>>()?;
                let mut counts = Vec::with_capacity(mats.len() + 1);
                if let Some(first) = mats.first() {
                    counts.push(first.nrows());
                    counts.extend(mats.iter().map(|m| m.ncols()));
                } else {
                    return Err(Error::InvalidComplex("explicit complexes need at least one boundary map".into()));
                }
                ChainComplex::from_boundaries(counts, mats)
            }
            _ => Err(Error::InvalidComplex("give exactly one of `simplices` or `boundaries`".into())),
        }
    }
}

/// One perturbation pair per degree q = 0..=top, labelled by degree.
pub fn build_hodge_tower(spec: &ComplexSpec) -> Result<Vec<PerturbationPair>> {
    let complex = spec.chain_complex()?;
    let w = spec.weights.clone().unwrap_or_else(|| complex.unit_weights());
    let wp = spec.weights_prime.clone().unwrap_or_else(|| w.clone());
    let base = complex.hodge_laplacians(&w)?;
    let pert = complex.hodge_laplacians(&wp)?;
    base.into_iter()
        .zip(pert)
        .enumerate()
        .map(|(q, (a, b))| {
            let pair = PerturbationPair::new(
                format!("hodge_q{q}"),
                OperatorHandle::dense(format!("Δ_{q}"), a)?,
                OperatorHandle::dense(format!("Δ'_{q}"), b)?,
            )?
            .with_degree(q);
            pair.base().check_nonnegative()?;
            pair.perturbed().check_nonnegative()?;
            Ok(pair)
        })
        .collect()
}
