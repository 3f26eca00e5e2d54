//! Independent oracles and random instances shared by integration tests.
//!
//! The oracles go through nalgebra's QR and LU factorizations, never through
//! the library's Gram-Schmidt basis or eigen-based pseudo-inverse.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use obpursuit::hilbert::{SampledSignal, SamplingGrid};
use obpursuit::oblique::Dictionary;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

pub fn grid(n: usize) -> SamplingGrid {
    SamplingGrid::new(0.0, 1.0, n).unwrap()
}

pub fn gaussian_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_dictionary(rng: &mut impl Rng, n: usize, m: usize) -> Dictionary {
    let g = grid(n);
    let atoms = (0..m)
        .map(|_| SampledSignal::from_vector(g, gaussian_vector(rng, n)).unwrap())
        .collect();
    Dictionary::from_signals(g, atoms).unwrap()
}

pub fn signal(g: SamplingGrid, v: DVector<f64>) -> SampledSignal {
    SampledSignal::from_vector(g, v).unwrap()
}

pub fn columns(d: &Dictionary) -> DMatrix<f64> {
    if d.is_empty() {
        return DMatrix::zeros(d.grid().len(), 0);
    }
    let cols: Vec<DVector<f64>> = d.atoms().iter().map(|a| a.values().clone()).collect();
    DMatrix::from_columns(&cols)
}

pub fn columns_of(vs: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    if vs.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(vs)
    }
}

/// Orthogonal projection of `f` onto the column span of `a` (full column rank).
pub fn project_onto(a: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(f.len());
    }
    let q = a.clone().qr().q();
    &q * (q.transpose() * f)
}

pub fn reject_from(a: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    f - project_onto(a, f)
}

/// `u_i = v_i - P_{W⊥} v_i` for every column of `v`.
pub fn projected_atoms(v: &DMatrix<f64>, wperp: &DMatrix<f64>) -> DMatrix<f64> {
    let mut u = v.clone();
    for j in 0..v.ncols() {
        let col = reject_from(wperp, &v.column(j).into_owned());
        u.set_column(j, &col);
    }
    u
}

/// Duals `W = U (UᵀU)⁻¹` for a full-column-rank `U`.
pub fn duals(u: &DMatrix<f64>) -> DMatrix<f64> {
    let g = u.transpose() * u;
    let inv = g.lu().try_inverse().expect("selected Gram matrix is invertible");
    u * inv
}

/// `||P_W f - P_{span U} P_W f||²`.
pub fn residual_sq(u_sel: &DMatrix<f64>, pw_f: &DVector<f64>) -> f64 {
    reject_from(u_sel, pw_f).norm_squared()
}

/// `|⟨γ_n|pw_f⟩| / ||γ_n||` recomputed from scratch for every candidate.
pub fn oracle_forward_scores(u_all: &DMatrix<f64>, selected: &[usize], pw_f: &DVector<f64>, tol: f64) -> Vec<Option<f64>> {
    let sel_cols: Vec<DVector<f64>> = selected.iter().map(|&i| u_all.column(i).into_owned()).collect();
    let u_sel = columns_of(&sel_cols, u_all.nrows());
    (0..u_all.ncols())
        .map(|n| {
            if selected.contains(&n) {
                return None;
            }
            let u = u_all.column(n).into_owned();
            let gamma = reject_from(&u_sel, &u);
            (gamma.norm() > tol * u.norm()).then(|| gamma.dot(pw_f).abs() / gamma.norm())
        })
        .collect()
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// 2-norm condition number of the Gram matrix `UᵀU` via nalgebra's SVD of `U`.
pub fn gram_condition(u: &DMatrix<f64>) -> f64 {
    let sv = u.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    (max / min).powi(2)
}

/// Random well-posed instance: `M` atoms and `p` W⊥ spanners in `R^n`.
pub struct Instance {
    pub v: Dictionary,
    pub wperp: Dictionary,
    pub f: SampledSignal,
}

pub fn random_instance(rng: &mut impl Rng, n: usize, m: usize, p: usize) -> Instance {
    let v = gaussian_dictionary(rng, n, m);
    let wperp = if p == 0 {
        Dictionary::empty(grid(n))
    } else {
        gaussian_dictionary(rng, n, p)
    };
    let f = signal(grid(n), gaussian_vector(rng, n));
    Instance { v, wperp, f }
}
