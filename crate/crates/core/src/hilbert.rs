//! Discrete inner-product space: sampled signals, orthonormal bases built by
//! rank-one expansion, orthogonal projection, and Gram pseudo-inversion.
//!
//! The inner product is the plain Euclidean dot product of sample vectors.
//! No quadrature weights are applied, so Gram entries are grid-independent up
//! to a uniform scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative threshold for accepting a new basis direction.
pub const DEFAULT_ACCEPT_TOL: f64 = 1e-8;
/// Default relative truncation threshold for Gram pseudo-inversion.
pub const DEFAULT_PINV_REL_TOL: f64 = 1e-12;

/// Uniform sampling grid `start, start + h, ..., stop` with `count` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    start: f64,
    stop: f64,
    count: usize,
}

impl SamplingGrid {
    pub fn new(start: f64, stop: f64, count: usize) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite()) || stop <= start {
            return Err(Error::InvalidArgument(format!(
                "grid requires finite stop > start, got [{start}, {stop}]"
            )));
        }
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid requires at least 2 points, got {count}"
            )));
        }
        Ok(Self { start, stop, count })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn stop(&self) -> f64 {
        self.stop
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.stop - self.start) / (self.count - 1) as f64
    }

    /// The i-th grid point. The last point is pinned to `stop` exactly.
    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.stop
        } else {
            self.start + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(move |i| self.point(i))
    }
}

/// A real signal sampled on a [`SamplingGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    grid: SamplingGrid,
    values: DVector<f64>,
}

impl SampledSignal {
    pub fn new(grid: SamplingGrid, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(grid, DVector::from_vec(values))
    }

    pub fn from_vector(grid: SamplingGrid, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: SamplingGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_vector(grid, DVector::from_iterator(grid.len(), grid.points().map(f)))
    }

    pub fn zeros(grid: SamplingGrid) -> Self {
        Self {
            grid,
            values: DVector::zeros(grid.len()),
        }
    }

    /// Builds without the finiteness scan. Callers guarantee the length.
    pub(crate) fn from_parts(grid: SamplingGrid, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn inner(&self, other: &SampledSignal) -> Result<f64> {
        inner(self, other)
    }

    pub(crate) fn check_grid(&self, grid: &SamplingGrid) -> Result<()> {
        if &self.grid == grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// `self - other`, computed sample by sample.
    pub fn sub(&self, other: &SampledSignal) -> Result<SampledSignal> {
        other.check_grid(&self.grid)?;
        Ok(Self::from_parts(self.grid, &self.values - &other.values))
    }

    pub fn add(&self, other: &SampledSignal) -> Result<SampledSignal> {
        other.check_grid(&self.grid)?;
        Ok(Self::from_parts(self.grid, &self.values + &other.values))
    }

    pub fn scaled(&self, a: f64) -> SampledSignal {
        Self::from_parts(self.grid, &self.values * a)
    }

    /// Round every sample to the nearest `f32` and widen back.
    pub fn to_single_precision(&self) -> SampledSignal {
        Self::from_parts(self.grid, self.values.map(|v| v as f32 as f64))
    }
}

/// Euclidean inner product of the sample vectors.
pub fn inner(a: &SampledSignal, b: &SampledSignal) -> Result<f64> {
    b.check_grid(&a.grid)?;
    Ok(a.values.dot(&b.values))
}

/// Result of trying to extend an [`OrthoBasis`] by one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionOutcome {
    /// Component of the input orthogonal to the basis before expansion.
    pub gamma: DVector<f64>,
    pub gamma_norm: f64,
    pub accepted: bool,
}

/// Ordered orthonormal vectors on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    grid: SamplingGrid,
    vectors: Vec<DVector<f64>>,
    source_norms: Vec<f64>,
}

impl OrthoBasis {
    pub fn new(grid: SamplingGrid) -> Self {
        Self {
            grid,
            vectors: Vec::new(),
            source_norms: Vec::new(),
        }
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    /// Norms of the orthogonalized inputs recorded when each vector was added.
    pub fn source_norms(&self) -> &[f64] {
        &self.source_norms
    }

    /// `u - P u`, with the projection subtracted twice.
    pub fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut gamma = u.clone();
        for _ in 0..2 {
            for q in &self.vectors {
                let c = q.dot(&gamma);
                gamma.axpy(-c, q, 1.0);
            }
        }
        gamma
    }

    /// `Σ q_i ⟨q_i|f⟩`.
    pub fn project_vector(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(f.len());
        for q in &self.vectors {
            out.axpy(q.dot(f), q, 1.0);
        }
        out
    }

    pub fn project(&self, f: &SampledSignal) -> Result<SampledSignal> {
        f.check_grid(&self.grid)?;
        Ok(SampledSignal::from_parts(self.grid, self.project_vector(f.values())))
    }

    /// Orthogonalize `u` against the basis and append the normalized remainder
    /// when its norm exceeds `accept_tol * ||u||`.
    pub fn expand(&mut self, u: &SampledSignal, accept_tol: f64) -> Result<ExpansionOutcome> {
        u.check_grid(&self.grid)?;
        Ok(self.expand_vector(u.values(), accept_tol))
    }

    pub(crate) fn expand_vector(&mut self, u: &DVector<f64>, accept_tol: f64) -> ExpansionOutcome {
        let u_norm = u.norm();
        let gamma = self.residual(u);
        let gamma_norm = gamma.norm();
        let accepted = u_norm > 0.0 && gamma_norm > accept_tol * u_norm;
        if accepted {
            self.vectors.push(&gamma / gamma_norm);
            self.source_norms.push(gamma_norm);
        }
        ExpansionOutcome {
            gamma,
            gamma_norm,
            accepted,
        }
    }

    /// Rebuild from scratch as the orthonormalized span of `spanners`.
    pub(crate) fn from_spanners<'a>(
        grid: SamplingGrid,
        spanners: impl IntoIterator<Item = &'a DVector<f64>>,
        accept_tol: f64,
    ) -> (Self, Vec<usize>) {
        let mut basis = Self::new(grid);
        let mut rejected = Vec::new();
        for (i, s) in spanners.into_iter().enumerate() {
            if !basis.expand_vector(s, accept_tol).accepted {
                rejected.push(i);
            }
        }
        (basis, rejected)
    }

    /// Largest deviation of the stored vectors' Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.dot(b) - target).abs());
            }
        }
        worst
    }
}

/// Symmetric matrix of pairwise inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps a square matrix, rejecting it if asymmetric beyond `1e-12`
    /// relative to its largest entry.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidArgument("Gram matrix must be square".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        let asym = (&entries - entries.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "Gram matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self { entries })
    }

    /// `G_ij = ⟨a_i|a_j⟩`, symmetric by construction.
    pub fn from_vectors(atoms: &[DVector<f64>]) -> Self {
        let k = atoms.len();
        let mut g = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = atoms[i].dot(&atoms[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Self { entries: g }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.dim() == 0 {
            return Vec::new();
        }
        let mut s: Vec<f64> = self
            .entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|l| l.abs())
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Moore–Penrose pseudo-inverse; see [`pinv_gram`].
    pub fn pinv(&self, rel_tol: f64) -> DMatrix<f64> {
        pinv_gram(self, rel_tol)
    }
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix.
///
/// Computed from the symmetric eigendecomposition `G = Q Λ Qᵀ`, whose
/// singular values are `|λ_i|`. Values `σ ≤ rel_tol · σ_max` are treated as
/// zero. An all-zero matrix maps to the zero matrix.
pub fn pinv_gram(g: &GramMatrix, rel_tol: f64) -> DMatrix<f64> {
    let k = g.dim();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = g.entries.clone().symmetric_eigen();
    let sigma_max = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(k, k);
    if sigma_max <= 0.0 {
        return out;
    }
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= rel_tol * sigma_max {
            continue;
        }
        let q = eig.eigenvectors.column(idx);
        out.ger(1.0 / lambda, &q, &q, 1.0);
    }
    out
}
