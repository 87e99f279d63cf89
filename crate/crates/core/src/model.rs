//! Desk-scale model problems: discretized Schrödinger operators, graph
//! Laplacians, weighted Hodge Laplacians, random SPD matrices and graded blocks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hodge::{build_hodge_tower, ComplexSpec};
use crate::linalg;
use crate::operator::{graded_from_block, GradedOperator, OperatorHandle, PerturbationPair};

/// Grid samples of a potential (or density) on the interior points of a 1D mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Constant(f64),
    Samples(Vec<f64>),
    /// `offset + amplitude · exp(1 − 1/(1 − r²))` for |r| < 1 with
    /// r = (x − center)/half_width; equal to `offset` elsewhere.
    Bump {
        center: f64,
        half_width: f64,
        amplitude: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl Profile {
    /// Values at x_i = (i + 1)·dx, i = 0..n.
    pub fn sample(&self, n: usize, dx: f64) -> Result<Vec<f64>> {
        match self {
            Profile::Zero => Ok(vec![0.0; n]),
            Profile::Constant(c) => Ok(vec![*c; n]),
            Profile::Samples(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: v.len() });
                }
                Ok(v.clone())
            }
            Profile::Bump { center, half_width, amplitude, offset } => {
                if !(*half_width > 0.0) {
                    return Err(Error::InvalidModel("bump half width must be positive".into()));
                }
                Ok((0..n)
                    .map(|i| {
                        let r = ((i as f64 + 1.0) * dx - center) / half_width;
                        if r.abs() < 1.0 {
                            offset + amplitude * (1.0 - 1.0 / (1.0 - r * r)).exp()
                        } else {
                            *offset
                        }
                    })
                    .collect())
            }
        }
    }
}

fn default_one() -> f64 {
    1.0
}

/// −d²/dx² + V on (0, length) with Dirichlet ends, `n` interior points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchrodingerSpec {
    pub n: usize,
    pub length: f64,
    /// Index window [start, end) outside which `potential − background` and
    /// `potential_prime − background` vanish.
    pub window: (usize, usize),
    #[serde(default = "zero_profile")]
    pub background: Profile,
    pub potential: Profile,
    pub potential_prime: Profile,
    /// Optional density Ω (equal to 1 outside the window) for which the
    /// perturbed operator Ω⁻¹(−Δ + V') is self-adjoint.
    #[serde(default)]
    pub density: Option<Profile>,
}

fn zero_profile() -> Profile {
    Profile::Zero
}

impl SchrodingerSpec {
    pub fn mesh_width(&self) -> f64 {
        self.length / (self.n as f64 + 1.0)
    }
}

/// Weighted graph Laplacian on a path or cycle, scaled by 1/mesh_width².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n: usize,
    #[serde(default = "default_one")]
    pub mesh_width: f64,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub weights_prime: Option<Vec<f64>>,
    #[serde(default)]
    pub potential: Option<Vec<f64>>,
    #[serde(default)]
    pub potential_prime: Option<Vec<f64>>,
}

fn default_amplitude() -> f64 {
    0.25
}

fn default_shift() -> f64 {
    0.5
}

/// A = BBᵀ/n + shift·I with Gaussian B; η a random symmetric block on
/// `window` scaled to ‖η‖₂ = amplitude · λ_min(A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSpdSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub window: Option<(usize, usize)>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_shift")]
    pub shift: f64,
    /// Restrict η to be positive semidefinite (A' ≥ A).
    #[serde(default)]
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedBlockSpec {
    pub dplus: Vec<Vec<f64>>,
    pub dplus_prime: Vec<Vec<f64>>,
}

/// Explicit dense matrices, rows listed top to bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitSpec {
    pub base: Vec<Vec<f64>>,
    pub perturbed: Vec<Vec<f64>>,
    #[serde(default)]
    pub weight_change: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    #[serde(rename = "schrodinger_1d")]
    Schrodinger1d(SchrodingerSpec),
    CycleGraph(GraphSpec),
    PathGraph(GraphSpec),
    HodgeComplex(ComplexSpec),
    RandomSpd(RandomSpdSpec),
    GradedBlock(GradedBlockSpec),
    Explicit(ExplicitSpec),
}

impl ModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Schrodinger1d(_) => "schrodinger_1d",
            ModelSpec::CycleGraph(_) => "cycle_graph",
            ModelSpec::PathGraph(_) => "path_graph",
            ModelSpec::HodgeComplex(_) => "hodge_complex",
            ModelSpec::RandomSpd(_) => "random_spd",
            ModelSpec::GradedBlock(_) => "graded_block",
            ModelSpec::Explicit(_) => "explicit",
        }
    }

    /// Whether the operators are nonnegative by construction (Laplacians and squares).
    pub fn is_laplacian_kind(&self) -> bool {
        !matches!(self, ModelSpec::Explicit(_))
    }
}

/// Builds the operator pair described by `spec`.
pub fn build_model(spec: &ModelSpec) -> Result<PerturbationPair> {
    let pair = match spec {
        ModelSpec::Schrodinger1d(s) => build_schrodinger(s)?,
        ModelSpec::CycleGraph(g) => build_graph(g, true)?,
        ModelSpec::PathGraph(g) => build_graph(g, false)?,
        ModelSpec::HodgeComplex(c) => build_hodge_tower(c)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidComplex("complex has no vertices".into()))?,
        ModelSpec::RandomSpd(r) => build_random_spd(r)?,
        ModelSpec::GradedBlock(g) => {
            let (a, b) = build_graded(g)?;
            PerturbationPair::new(
                "graded_block",
                OperatorHandle::dense("D^2", a.dirac_squared())?,
                OperatorHandle::dense("D'^2", b.dirac_squared())?,
            )?
        }
        ModelSpec::Explicit(e) => build_explicit(e)?,
    };
    if spec.is_laplacian_kind() {
        pair.base().check_nonnegative()?;
        pair.perturbed().check_nonnegative()?;
    }
    Ok(pair)
}

/// The two graded operators of a `graded_block` model.
pub fn build_graded(spec: &GradedBlockSpec) -> Result<(GradedOperator, GradedOperator)> {
    let a = rows_to_matrix(&spec.dplus)?;
    let b = rows_to_matrix(&spec.dplus_prime)?;
    if a.shape() != b.shape() {
        return Err(Error::InvalidModel(format!("graded blocks differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((graded_from_block(&a), graded_from_block(&b)))
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch { expected: ncols, found: r.len() });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn build_explicit(e: &ExplicitSpec) -> Result<PerturbationPair> {
    let a = OperatorHandle::dense("A", rows_to_matrix(&e.base)?)?;
    let b = OperatorHandle::dense("A'", rows_to_matrix(&e.perturbed)?)?;
    let pair = PerturbationPair::new("explicit", a, b)?;
    match &e.weight_change {
        Some(w) => pair.with_weight_change(DVector::from_column_slice(w)),
        None => Ok(pair),
    }
}

fn build_schrodinger(s: &SchrodingerSpec) -> Result<PerturbationPair> {
    if s.n == 0 || !(s.length > 0.0) {
        return Err(Error::InvalidModel("schrodinger_1d needs n > 0 and length > 0".into()));
    }
    let (lo, hi) = s.window;
    if lo > hi || hi > s.n {
        return Err(Error::InvalidModel(format!("window [{lo}, {hi}) outside 0..{}", s.n)));
    }
    let dx = s.mesh_width();
    let bg = s.background.sample(s.n, dx)?;
    let v = s.potential.sample(s.n, dx)?;
    let vp = s.potential_prime.sample(s.n, dx)?;
    for (name, p) in [("potential", &v), ("potential_prime", &vp)] {
        if let Some(i) = (0..s.n).find(|&i| (i < lo || i >= hi) && p[i] != bg[i]) {
            return Err(Error::InvalidModel(format!(
                "{name} differs from the background at index {i}, outside window [{lo}, {hi})"
            )));
        }
    }
    let inv = 1.0 / (dx * dx);
    let tridiag = |pot: &[f64]| -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(3 * s.n);
        for (i, &p) in pot.iter().enumerate().take(s.n) {
            t.push((i, i, 2.0 * inv + p));
            if i + 1 < s.n {
                t.push((i, i + 1, -inv));
                t.push((i + 1, i, -inv));
            }
        }
        t
    };
    let base = OperatorHandle::sparse("-Δ+V", s.n, &tridiag(&v))?;
    match &s.density {
        None => {
            let pert = OperatorHandle::sparse("-Δ+V'", s.n, &tridiag(&vp))?;
            PerturbationPair::new("schrodinger_1d", base, pert)
        }
        Some(profile) => {
            let rho = profile.sample(s.n, dx)?;
            if rho.iter().any(|&r| !(r > 0.0)) {
                return Err(Error::InvalidModel("density must be strictly positive".into()));
            }
            if let Some(i) = (0..s.n).find(|&i| (i < lo || i >= hi) && rho[i] != 1.0) {
                return Err(Error::InvalidModel(format!(
                    "density differs from 1 at index {i}, outside window [{lo}, {hi})"
                )));
            }
            // S' = Ω^{-1/2} K' Ω^{-1/2}
            let sym: Vec<_> = tridiag(&vp).into_iter().map(|(i, j, k)| (i, j, k / (rho[i] * rho[j]).sqrt())).collect();
            let pert = OperatorHandle::sparse("Ω^{-1/2}(-Δ+V')Ω^{-1/2}", s.n, &sym)?;
            PerturbationPair::new("schrodinger_1d", base, pert)?.with_weight_change(DVector::from_vec(rho))
        }
    }
}

fn build_graph(g: &GraphSpec, cycle: bool) -> Result<PerturbationPair> {
    let n = g.n;
    let min_n = if cycle { 3 } else { 1 };
    if n < min_n {
        return Err(Error::InvalidModel(format!("graph needs at least {min_n} vertices")));
    }
    if !(g.mesh_width > 0.0) {
        return Err(Error::InvalidModel("mesh width must be positive".into()));
    }
    let edges: Vec<(usize, usize)> = if cycle {
        (0..n).map(|i| (i, (i + 1) % n)).collect()
    } else {
        (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
    };
    let inv = 1.0 / (g.mesh_width * g.mesh_width);
    let laplacian = |weights: &Option<Vec<f64>>, pot: &Option<Vec<f64>>, label: &str| -> Result<OperatorHandle> {
        let w = weights.clone().unwrap_or_else(|| vec![1.0; edges.len()]);
        if w.len() != edges.len() {
            return Err(Error::DimensionMismatch { expected: edges.len(), found: w.len() });
        }
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidModel("edge weights must be nonnegative".into()));
        }
        let mut t = Vec::with_capacity(4 * edges.len() + n);
        for (&(i, j), &wij) in edges.iter().zip(&w) {
            let c = wij * inv;
            t.extend([(i, i, c), (j, j, c), (i, j, -c), (j, i, -c)]);
        }
        if let Some(p) = pot {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: p.len() });
            }
            t.extend(p.iter().enumerate().map(|(i, &v)| (i, i, v)));
        }
        OperatorHandle::sparse(label, n, &t)
    };
    let name = if cycle { "cycle_graph" } else { "path_graph" };
    let base = laplacian(&g.weights, &g.potential, "L")?;
    let weights_prime = g.weights_prime.clone().or_else(|| g.weights.clone());
    let potential_prime = g.potential_prime.clone().or_else(|| g.potential.clone());
    let pert = laplacian(&weights_prime, &potential_prime, "L'")?;
    PerturbationPair::new(name, base, pert)
}

fn build_random_spd(r: &RandomSpdSpec) -> Result<PerturbationPair> {
    let n = r.n;
    if n == 0 {
        return Err(Error::InvalidModel("random_spd needs n > 0".into()));
    }
    let (lo, hi) = r.window.unwrap_or((0, n));
    if lo >= hi || hi > n {
        return Err(Error::InvalidModel(format!("window [{lo}, {hi}) invalid for n = {n}")));
    }
    if !(r.amplitude > 0.0 && r.amplitude < 1.0) || !(r.shift > 0.0) {
        return Err(Error::InvalidModel("random_spd needs 0 < amplitude < 1 and shift > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let b = DMatrix::from_fn(n, n, |_, _| gauss());
    let mut a = (&b * b.transpose()) / n as f64;
    for i in 0..n {
        a[(i, i)] += r.shift;
    }
    let a = (&a + a.transpose()) * 0.5;
    let w = hi - lo;
    let c = DMatrix::from_fn(w, w, |_, _| gauss());
    let block = if r.monotone { &c * c.transpose() } else { (&c + c.transpose()) * 0.5 };
    let block_norm = linalg::symmetric_eigenvalues(&block).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let lambda_min = *linalg::symmetric_eigenvalues(&a).last().unwrap();
    let scale = if block_norm > 0.0 { r.amplitude * lambda_min / block_norm } else { 0.0 };
    let mut ap = a.clone();
    for i in 0..w {
        for j in 0..w {
            ap[(lo + i, lo + j)] += scale * block[(i, j)];
        }
    }
    PerturbationPair::new("random_spd", OperatorHandle::dense("A", a)?, OperatorHandle::dense("A'", ap)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::decay_report;

    fn graph(n: usize) -> GraphSpec {
        GraphSpec { n, mesh_width: 1.0, weights: None, weights_prime: None, potential: None, potential_prime: None }
    }

    #[test]
    fn cycle_three_spectrum() {
        let pair = build_model(&ModelSpec::CycleGraph(graph(3))).unwrap();
        let ev = pair.base().eigenvalues().unwrap();
        // 2 − 2cos(2πk/3), k = 0, 1, 2
        let mut expected: Vec<f64> =
            (0..3).map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / 3.0).cos()).collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ev.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((expected[0] - 3.0).abs() < 1e-12 && expected[2].abs() < 1e-12);
    }

    #[test]
    fn path_two() {
        let pair = build_model(&ModelSpec::PathGraph(graph(2))).unwrap();
        assert_eq!(pair.base().to_dense(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let ev = pair.base().eigenvalues().unwrap();
        assert!((ev[0] - 2.0).abs() < 1e-14 && ev[1].abs() < 1e-14);
    }

    fn schrodinger(v_prime: Profile) -> SchrodingerSpec {
        SchrodingerSpec {
            n: 100,
            length: 10.0,
            window: (45, 55),
            background: Profile::Zero,
            potential: Profile::Zero,
            potential_prime: v_prime,
            density: None,
        }
    }

    #[test]
    fn schrodinger_identical_pair() {
        let pair = build_model(&ModelSpec::Schrodinger1d(schrodinger(Profile::Zero))).unwrap();
        assert_eq!(pair.eta().frobenius_norm(), 0.0);
        assert_eq!(pair.kernel_dim_diff().unwrap(), 0);
    }

    #[test]
    fn schrodinger_window_enforced() {
        let bump = Profile::Bump { center: 5.0, half_width: 2.0, amplitude: 1.0, offset: 0.0 };
        let err = build_model(&ModelSpec::Schrodinger1d(schrodinger(bump)));
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn schrodinger_middle_support_decay_profile() {
        let bump = Profile::Bump { center: 5.0, half_width: 0.45, amplitude: 1.0, offset: 0.0 };
        let pair = build_model(&ModelSpec::Schrodinger1d(schrodinger(bump))).unwrap();
        let rep = decay_report(&pair, 10).unwrap();
        for (k, norm) in &rep.regions {
            if *k == 4 || *k == 5 {
                assert!(*norm > 0.0);
            } else {
                assert_eq!(*norm, 0.0, "region {k}");
            }
        }
        assert!(!rep.flagged);
    }

    #[test]
    fn random_dense_perturbation_flagged() {
        let spec = RandomSpdSpec { n: 30, seed: 3, window: None, amplitude: 0.25, shift: 0.5, monotone: false };
        let pair = build_model(&ModelSpec::RandomSpd(spec.clone())).unwrap();
        assert!(decay_report(&pair, 3).unwrap().flagged);
        let local = RandomSpdSpec { window: Some((10, 20)), ..spec };
        let pair = build_model(&ModelSpec::RandomSpd(local)).unwrap();
        assert!(!decay_report(&pair, 3).unwrap().flagged);
    }

    #[test]
    fn random_spd_is_deterministic_and_positive() {
        let spec = ModelSpec::RandomSpd(RandomSpdSpec {
            n: 12,
            seed: 99,
            window: Some((4, 8)),
            amplitude: 0.5,
            shift: 0.5,
            monotone: false,
        });
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        assert_eq!(a.base().to_dense(), b.base().to_dense());
        assert_eq!(a.perturbed().to_dense(), b.perturbed().to_dense());
        assert!(*a.perturbed().eigenvalues().unwrap().last().unwrap() > 0.0);
        assert_eq!(a.kernel_dim_diff().unwrap(), 0);
    }

    #[test]
    fn graded_block_pair() {
        let spec =
            ModelSpec::GradedBlock(GradedBlockSpec { dplus: vec![vec![1.0, 0.0]], dplus_prime: vec![vec![1.0, 1.0]] });
        let pair = build_model(&spec).unwrap();
        assert_eq!(pair.dim(), 3);
        let bad = GradedBlockSpec { dplus: vec![vec![1.0, 0.0]], dplus_prime: vec![vec![1.0]] };
        assert!(build_graded(&bad).is_err());
    }

    #[test]
    fn negative_model_rejected() {
        let spec = GraphSpec { potential: Some(vec![-5.0, 0.0, 0.0]), ..graph(3) };
        let err = build_model(&ModelSpec::PathGraph(spec));
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
kind = "schrodinger_1d"
n = 50
length = 5.0
window = [20, 30]
potential = "zero"
potential_prime = { bump = { center = 2.55, half_width = 0.4, amplitude = 2.0 } }
"#;
        let spec: ModelSpec = toml::from_str(text).unwrap();
        let pair = build_model(&spec).unwrap();
        assert!(pair.eta().frobenius_norm() > 0.0);
        let back: ModelSpec = toml::from_str(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
