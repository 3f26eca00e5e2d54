//! Batch construction of the oblique projector onto `V` along `W⊥`.
//!
//! Given spanners `v_i` of `V` and spanners of `W⊥`, the projected atoms
//! `u_i = v_i - P_{W⊥} v_i` span `W`, the Gram matrix is `G = UᵀU`, and the
//! dual (measurement) vectors are `w_i = Σ_j u_j (G†)_{ji}`. The projector is
//! then `E f = Σ_i v_i ⟨w_i|f⟩`.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{GramMatrix, OrthoBasis, SampledSignal, SamplingGrid, DEFAULT_ACCEPT_TOL};

/// Identifies what an atom is; used for reporting and CSV headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AtomLabel {
    Oscillator { frequency: u32 },
    Pulse { index: u32, center: f64 },
    BSpline { translate: i64, center: f64 },
    Blackbody { temperature: f64 },
    Named { name: String },
}

impl fmt::Display for AtomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomLabel::Oscillator { frequency } => write!(f, "osc_n{frequency}"),
            AtomLabel::Pulse { index, .. } => write!(f, "pulse_j{index}"),
            AtomLabel::BSpline { translate, .. } => write!(f, "bspline_k{translate}"),
            AtomLabel::Blackbody { temperature } => write!(f, "blackbody_T{temperature}"),
            AtomLabel::Named { name } => f.write_str(name),
        }
    }
}

/// Ordered atoms on a shared grid with unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    grid: SamplingGrid,
    atoms: Vec<SampledSignal>,
    labels: Vec<AtomLabel>,
    degenerate: Vec<bool>,
}

impl Dictionary {
    pub fn new(grid: SamplingGrid, atoms: Vec<SampledSignal>, labels: Vec<AtomLabel>) -> Result<Self> {
        if atoms.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: atoms.len(),
                found: labels.len(),
            });
        }
        for (i, a) in atoms.iter().enumerate() {
            a.check_grid(&grid)?;
            if a.norm() == 0.0 {
                return Err(Error::InvalidArgument(format!("atom {i} ({}) is zero", labels[i])));
            }
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.to_string()) {
                return Err(Error::InvalidArgument(format!("duplicate atom label {l}")));
            }
        }
        let degenerate = vec![false; atoms.len()];
        Ok(Self {
            grid,
            atoms,
            labels,
            degenerate,
        })
    }

    pub fn empty(grid: SamplingGrid) -> Self {
        Self {
            grid,
            atoms: Vec::new(),
            labels: Vec::new(),
            degenerate: Vec::new(),
        }
    }

    /// Unlabelled atoms get `atom_<i>` names.
    pub fn from_signals(grid: SamplingGrid, atoms: Vec<SampledSignal>) -> Result<Self> {
        let labels = (0..atoms.len())
            .map(|i| AtomLabel::Named { name: format!("atom_{i}") })
            .collect();
        Self::new(grid, atoms, labels)
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[SampledSignal] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &SampledSignal {
        &self.atoms[i]
    }

    pub fn labels(&self) -> &[AtomLabel] {
        &self.labels
    }

    /// True for projected atoms that vanished (`u_i = 0`).
    pub fn is_degenerate(&self, i: usize) -> bool {
        self.degenerate[i]
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    /// Sub-dictionary in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dictionary> {
        let mut out = Dictionary::empty(self.grid);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            out.atoms.push(self.atoms[i].clone());
            out.labels.push(self.labels[i].clone());
            out.degenerate.push(self.degenerate[i]);
        }
        Ok(out)
    }

    /// Sum of `coeffs[i] * atom[indices[i]]`.
    pub fn combine(&self, indices: &[usize], coeffs: &[f64]) -> Result<SampledSignal> {
        if indices.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                found: coeffs.len(),
            });
        }
        let mut out = DVector::zeros(self.grid.len());
        for (&i, &c) in indices.iter().zip(coeffs) {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            out.axpy(c, self.atoms[i].values(), 1.0);
        }
        Ok(SampledSignal::from_parts(self.grid, out))
    }

    pub(crate) fn vectors(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.atoms.iter().map(|a| a.values())
    }
}

/// Orthonormalized `W⊥` together with the spanners found dependent.
#[derive(Debug, Clone, PartialEq)]
pub struct WperpBasis {
    pub basis: OrthoBasis,
    pub rejected: Vec<usize>,
}

/// Orthonormal basis for the numerical span of the `W⊥` spanners.
pub fn orthonormalize_wperp(spanners: &Dictionary, accept_tol: f64) -> WperpBasis {
    let (basis, rejected) = OrthoBasis::from_spanners(spanners.grid, spanners.vectors(), accept_tol);
    WperpBasis { basis, rejected }
}

/// `u_i = v_i - P_{W⊥} v_i`. Atoms whose projection is at or below
/// `DEFAULT_ACCEPT_TOL · ||v_i||` are zeroed and flagged degenerate.
pub fn build_u_atoms(v_atoms: &Dictionary, wperp_basis: &OrthoBasis) -> Result<Dictionary> {
    build_u_atoms_with_tol(v_atoms, wperp_basis, DEFAULT_ACCEPT_TOL)
}

pub fn build_u_atoms_with_tol(
    v_atoms: &Dictionary,
    wperp_basis: &OrthoBasis,
    accept_tol: f64,
) -> Result<Dictionary> {
    if v_atoms.grid != *wperp_basis.grid() {
        return Err(Error::GridMismatch);
    }
    let mut out = Dictionary::empty(v_atoms.grid);
    for (v, label) in v_atoms.atoms.iter().zip(&v_atoms.labels) {
        let u = wperp_basis.residual(v.values());
        let degenerate = u.norm() <= accept_tol * v.norm();
        let u = if degenerate { DVector::zeros(u.len()) } else { u };
        out.atoms.push(SampledSignal::from_parts(v_atoms.grid, u));
        out.labels.push(label.clone());
        out.degenerate.push(degenerate);
    }
    Ok(out)
}

/// Spectrum of the Gram matrix used by a batch build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub singular_values: Vec<f64>,
    pub numeric_rank: usize,
    pub condition_number: f64,
}

impl ConditionReport {
    pub fn from_singular_values(singular_values: Vec<f64>, rel_tol: f64) -> Self {
        let smax = singular_values.first().copied().unwrap_or(0.0);
        let retained: Vec<f64> = singular_values
            .iter()
            .copied()
            .filter(|&s| smax > 0.0 && s > rel_tol * smax)
            .collect();
        let condition_number = match retained.last() {
            Some(&smin) => smax / smin,
            None => f64::INFINITY,
        };
        Self {
            numeric_rank: retained.len(),
            singular_values,
            condition_number,
        }
    }
}

/// Oblique projector `E = Σ v_i ⟨w_i|·⟩` with its duals.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueProjector {
    v_atoms: Dictionary,
    duals: Vec<DVector<f64>>,
    wperp_basis: OrthoBasis,
}

impl ObliqueProjector {
    pub fn v_atoms(&self) -> &Dictionary {
        &self.v_atoms
    }

    pub fn duals(&self) -> &[DVector<f64>] {
        &self.duals
    }

    pub fn wperp_basis(&self) -> &OrthoBasis {
        &self.wperp_basis
    }

    /// Expansion coefficients `⟨w_i|f⟩`.
    pub fn coefficients(&self, f: &SampledSignal) -> Result<Vec<f64>> {
        f.check_grid(self.v_atoms.grid())?;
        Ok(self.duals.iter().map(|w| w.dot(f.values())).collect())
    }

    pub fn apply(&self, f: &SampledSignal) -> Result<SampledSignal> {
        apply_oblique(self, f)
    }
}

/// Builds the projector from scratch over the whole of `v_atoms`.
pub fn build_oblique_batch(
    v_atoms: &Dictionary,
    wperp_spanners: &Dictionary,
    rel_tol: f64,
) -> Result<(ObliqueProjector, ConditionReport)> {
    if v_atoms.grid != wperp_spanners.grid {
        return Err(Error::GridMismatch);
    }
    let wperp = orthonormalize_wperp(wperp_spanners, DEFAULT_ACCEPT_TOL);
    build_oblique_with_basis(v_atoms, wperp.basis, rel_tol)
}

/// As [`build_oblique_batch`] with `W⊥` already orthonormalized.
pub fn build_oblique_with_basis(
    v_atoms: &Dictionary,
    wperp_basis: OrthoBasis,
    rel_tol: f64,
) -> Result<(ObliqueProjector, ConditionReport)> {
    if v_atoms.is_empty() {
        return Err(Error::InvalidArgument("V dictionary is empty".into()));
    }
    let u_atoms = build_u_atoms(v_atoms, &wperp_basis)?;
    let u_vecs: Vec<DVector<f64>> = u_atoms.vectors().cloned().collect();
    let gram = GramMatrix::from_vectors(&u_vecs);
    let report = ConditionReport::from_singular_values(gram.singular_values(), rel_tol);
    let g_pinv = gram.pinv(rel_tol);

    let n = v_atoms.grid.len();
    let m = v_atoms.len();
    let u_mat = DMatrix::from_columns(&u_vecs);
    debug_assert_eq!(u_mat.shape(), (n, m));
    let w_mat = &u_mat * &g_pinv;
    let duals = w_mat.column_iter().map(|c| c.into_owned()).collect();

    Ok((
        ObliqueProjector {
            v_atoms: v_atoms.clone(),
            duals,
            wperp_basis,
        },
        report,
    ))
}

/// `Σ_i v_i ⟨w_i|f⟩`.
pub fn apply_oblique(e: &ObliqueProjector, f: &SampledSignal) -> Result<SampledSignal> {
    f.check_grid(e.v_atoms.grid())?;
    let mut out = DVector::zeros(f.len());
    for (v, w) in e.v_atoms.vectors().zip(&e.duals) {
        out.axpy(w.dot(f.values()), v, 1.0);
    }
    Ok(SampledSignal::from_parts(*f.grid(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> SamplingGrid {
        SamplingGrid::new(0.0, 1.0, n).unwrap()
    }

    fn dict(vectors: &[&[f64]]) -> Dictionary {
        let g = grid(vectors[0].len());
        Dictionary::from_signals(
            g,
            vectors.iter().map(|v| SampledSignal::new(g, v.to_vec()).unwrap()).collect(),
        )
        .unwrap()
    }

    fn sig(values: &[f64]) -> SampledSignal {
        SampledSignal::new(grid(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn dictionary_validation() {
        let g = grid(2);
        let a = SampledSignal::new(g, vec![1.0, 0.0]).unwrap();
        let z = SampledSignal::zeros(g);
        assert!(Dictionary::from_signals(g, vec![z]).is_err());
        let dup = vec![
            AtomLabel::Oscillator { frequency: 1 },
            AtomLabel::Oscillator { frequency: 1 },
        ];
        assert!(Dictionary::new(g, vec![a.clone(), a.clone()], dup).is_err());
        let other = SampledSignal::new(SamplingGrid::new(0.0, 2.0, 2).unwrap(), vec![1.0, 0.0]).unwrap();
        assert_eq!(
            Dictionary::from_signals(g, vec![a, other]),
            Err(Error::GridMismatch)
        );
    }

    #[test]
    fn wperp_orthonormalization() {
        let b = orthonormalize_wperp(&dict(&[&[1.0, 0.0, 0.0]]), DEFAULT_ACCEPT_TOL);
        assert_eq!(b.basis.len(), 1);
        assert!(b.rejected.is_empty());

        let b = orthonormalize_wperp(&dict(&[&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]), DEFAULT_ACCEPT_TOL);
        assert_eq!(b.basis.len(), 1);
        assert_eq!(b.basis.vectors()[0].as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(b.rejected, vec![1]);
    }

    #[test]
    fn u_atoms_examples() {
        let wperp = orthonormalize_wperp(&dict(&[&[0.0, 1.0]]), DEFAULT_ACCEPT_TOL).basis;
        let u = build_u_atoms(&dict(&[&[1.0, 0.0]]), &wperp).unwrap();
        assert_eq!(u.atom(0).as_slice(), &[1.0, 0.0]);
        assert!(!u.is_degenerate(0));

        let u = build_u_atoms(&dict(&[&[0.0, 3.0]]), &wperp).unwrap();
        assert_eq!(u.atom(0).as_slice(), &[0.0, 0.0]);
        assert!(u.is_degenerate(0));

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let wperp = orthonormalize_wperp(&dict(&[&[s, s]]), DEFAULT_ACCEPT_TOL).basis;
        let u = build_u_atoms(&dict(&[&[1.0, 0.0]]), &wperp).unwrap();
        assert_abs_diff_eq!(u.atom(0).as_slice()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u.atom(0).as_slice()[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_dimensional_splitting() {
        // f = (2,1) = 1·(1,0) + 1·(1,1): Ef = (1,0); dual w = (1,-1).
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (e, report) =
            build_oblique_batch(&dict(&[&[1.0, 0.0]]), &dict(&[&[s, s]]), 1e-12).unwrap();
        assert_abs_diff_eq!(e.duals()[0][0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.duals()[0][1], -1.0, epsilon = 1e-14);
        let ef = apply_oblique(&e, &sig(&[2.0, 1.0])).unwrap();
        assert_abs_diff_eq!(ef.as_slice()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ef.as_slice()[1], 0.0, epsilon = 1e-14);
        assert_eq!(report.numeric_rank, 1);

        let g = apply_oblique(&e, &sig(&[3.0, 3.0])).unwrap();
        assert!(g.norm() <= 1e-8 * 18f64.sqrt());
    }

    #[test]
    fn empty_wperp_gives_orthogonal_projector() {
        let v = dict(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let (e, _) = build_oblique_batch(&v, &Dictionary::empty(*v.grid()), 1e-12).unwrap();
        for (w, a) in e.duals().iter().zip(v.atoms()) {
            assert_abs_diff_eq!(w, a.values(), epsilon = 1e-15);
        }
        let p = apply_oblique(&e, &sig(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn range_identity() {
        let v = dict(&[&[1.0, 0.2, 0.0, 0.1], &[0.0, 1.0, 0.5, 0.0]]);
        let wp = dict(&[&[0.0, 0.0, 1.0, 1.0]]);
        let (e, _) = build_oblique_batch(&v, &wp, 1e-12).unwrap();
        for a in v.atoms() {
            let ea = apply_oblique(&e, a).unwrap();
            assert!(ea.sub(a).unwrap().norm() <= 1e-8 * a.norm());
        }
        let g = apply_oblique(&e, wp.atom(0)).unwrap();
        assert!(g.norm() <= 1e-8 * wp.atom(0).norm());
    }

    #[test]
    fn degenerate_atom_gets_zero_dual() {
        let v = dict(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        let wp = dict(&[&[0.0, 0.0, 1.0]]);
        let (e, report) = build_oblique_batch(&v, &wp, 1e-12).unwrap();
        assert_eq!(e.duals()[1].norm(), 0.0);
        assert_eq!(report.numeric_rank, 1);
    }

    #[test]
    fn batch_rejects_empty_and_mismatch() {
        let v = dict(&[&[1.0, 0.0]]);
        assert!(build_oblique_batch(&Dictionary::empty(*v.grid()), &v, 1e-12).is_err());
        let e = build_oblique_batch(&v, &Dictionary::empty(*v.grid()), 1e-12).unwrap().0;
        let wrong = SampledSignal::zeros(SamplingGrid::new(0.0, 1.0, 3).unwrap());
        assert_eq!(apply_oblique(&e, &wrong), Err(Error::GridMismatch));
    }

    #[test]
    fn condition_report_counts_rank() {
        let r = ConditionReport::from_singular_values(vec![4.0, 2.0, 1e-20], 1e-12);
        assert_eq!(r.numeric_rank, 2);
        assert_eq!(r.condition_number, 2.0);
        let r = ConditionReport::from_singular_values(vec![0.0], 1e-12);
        assert_eq!(r.numeric_rank, 0);
        assert!(r.condition_number.is_infinite());
    }
}
