//! Adaptive selection of a sparse sub-subspace of `V` and recursive
//! maintenance of the oblique projector onto it.
//!
//! The search runs on the projected signal `P_W f` over the projected atoms
//! `u_n = P_W v_n`. Forward steps pick the atom whose component `γ_n`
//! orthogonal to the current `W_k` best explains the residual
//! (`|⟨γ_n|f⟩| / ||γ_n||`), backward steps drop the atom with the smallest
//! `|c_i| / ||w_i||`, and swap refinement alternates the two, escalating to
//! multi-atom exchanges when single swaps stop improving.
//!
//! All selections break ties toward the lowest index or position.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{OrthoBasis, SampledSignal, DEFAULT_ACCEPT_TOL};
use crate::oblique::{build_u_atoms_with_tol, orthonormalize_wperp, Dictionary};

/// Residual below this fraction of `||f||` counts as zero when `δ = 0`.
pub const RESIDUAL_FLOOR: f64 = 1e-12;
/// A swap must lower `residual_sq` by more than this fraction of `||P_W f||²`.
pub const SWAP_IMPROVEMENT: f64 = 1e-12;
/// Relative coefficient drift above which the result is flagged.
pub const COEFFICIENT_DRIFT_TOL: f64 = 1e-6;

/// Predicate on candidate reconstructions `f_V`.
pub trait ReconstructionConstraint: Send + Sync + fmt::Debug {
    fn admits(&self, reconstruction: &DVector<f64>) -> bool;
}

/// Reject reconstructions with `min < -rel_tol · max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonNegative {
    pub rel_tol: f64,
}

impl Default for NonNegative {
    fn default() -> Self {
        Self { rel_tol: 1e-10 }
    }
}

impl ReconstructionConstraint for NonNegative {
    fn admits(&self, reconstruction: &DVector<f64>) -> bool {
        if reconstruction.is_empty() {
            return true;
        }
        let max = reconstruction.max().max(0.0);
        reconstruction.min() >= -self.rel_tol * max
    }
}

#[derive(Debug, Clone)]
pub struct PursuitParams {
    /// Largest number of measurement vectors the run may hold at once.
    pub max_rank: usize,
    /// Target sparsity K. The final selection is pruned to K atoms.
    pub sparsity: Option<usize>,
    /// Stop once `||P_W f - P_{W_k} f|| ≤ delta`.
    pub delta: f64,
    pub accept_tol: f64,
    pub max_swap_stage: usize,
    pub constraint: Option<Arc<dyn ReconstructionConstraint>>,
}

impl Default for PursuitParams {
    fn default() -> Self {
        Self {
            max_rank: usize::MAX,
            sparsity: None,
            delta: 0.0,
            accept_tol: DEFAULT_ACCEPT_TOL,
            max_swap_stage: 2,
            constraint: None,
        }
    }
}

impl PursuitParams {
    pub fn validate(&self, atom_count: usize) -> Result<()> {
        if self.max_rank == 0 {
            return Err(Error::InvalidArgument("max_rank must be at least 1".into()));
        }
        if let Some(k) = self.sparsity {
            if k == 0 || k > self.max_rank {
                return Err(Error::InvalidArgument(format!(
                    "sparsity {k} must lie in 1..=max_rank ({})",
                    self.max_rank
                )));
            }
            if k > atom_count {
                return Err(Error::InvalidArgument(format!(
                    "sparsity {k} exceeds dictionary size {atom_count}"
                )));
            }
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!("delta must be finite and ≥ 0, got {}", self.delta)));
        }
        if !(self.accept_tol >= 0.0) {
            return Err(Error::InvalidArgument("accept_tol must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Number of atoms the forward phase may select.
    pub fn forward_budget(&self, atom_count: usize) -> usize {
        self.max_rank.min(atom_count)
    }
}

/// Which inner product drives the update of existing duals on a forward
/// step. Both are algebraically identical because `w_i ∈ W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualUpdate {
    /// `w_i ← w_i - w_new ⟨u_new|w_i⟩`.
    #[default]
    ProjectedAtom,
    /// `w_i ← w_i - w_new ⟨v_new|w_i⟩`.
    RawAtom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    ResidualBelowDelta,
    RankBudgetExhausted,
    SwapConverged,
    ConstraintBlocked,
}

/// Selection, measurement vectors and coefficients of one pursuit run.
#[derive(Debug, Clone)]
pub struct PursuitState {
    v_atoms: Arc<Dictionary>,
    u_atoms: Arc<Dictionary>,
    u_norms: Arc<Vec<f64>>,
    f: SampledSignal,
    pw_f: DVector<f64>,
    pw_f_norm_sq: f64,
    accept_tol: f64,
    selected: Vec<usize>,
    w_basis: OrthoBasis,
    duals: Vec<DVector<f64>>,
    coeffs: Vec<f64>,
    residual_sq: f64,
    /// `u_n - P_{W_k} u_n` for every atom, kept current across steps.
    candidates: Vec<DVector<f64>>,
}

/// Prepare the search: `P_W f` and the projected atoms.
pub fn init_state(
    v_atoms: &Dictionary,
    wperp_basis: &OrthoBasis,
    f: &SampledSignal,
    params: &PursuitParams,
) -> Result<PursuitState> {
    if v_atoms.is_empty() {
        return Err(Error::InvalidArgument("V dictionary is empty".into()));
    }
    f.check_grid(v_atoms.grid())?;
    f.check_grid(wperp_basis.grid())?;
    let u_atoms = build_u_atoms_with_tol(v_atoms, wperp_basis, params.accept_tol)?;
    let pw_f = wperp_basis.residual(f.values());
    let pw_f_norm_sq = pw_f.norm_squared();
    let u_norms = u_atoms.atoms().iter().map(|u| u.norm()).collect();
    let candidates = u_atoms.atoms().iter().map(|u| u.values().clone()).collect();
    Ok(PursuitState {
        v_atoms: Arc::new(v_atoms.clone()),
        u_atoms: Arc::new(u_atoms),
        u_norms: Arc::new(u_norms),
        f: f.clone(),
        pw_f,
        pw_f_norm_sq,
        accept_tol: params.accept_tol,
        selected: Vec::new(),
        w_basis: OrthoBasis::new(*v_atoms.grid()),
        duals: Vec::new(),
        coeffs: Vec::new(),
        residual_sq: pw_f_norm_sq,
        candidates,
    })
}

impl PursuitState {
    pub fn v_atoms(&self) -> &Dictionary {
        &self.v_atoms
    }

    pub fn u_atoms(&self) -> &Dictionary {
        &self.u_atoms
    }

    pub fn signal(&self) -> &SampledSignal {
        &self.f
    }

    /// `P_W f`.
    pub fn pw_f(&self) -> &DVector<f64> {
        &self.pw_f
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }

    pub fn duals(&self) -> &[DVector<f64>] {
        &self.duals
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn w_basis(&self) -> &OrthoBasis {
        &self.w_basis
    }

    /// `||P_W f - P_{W_k} f||²` as maintained by the recursions.
    pub fn residual_sq(&self) -> f64 {
        self.residual_sq
    }

    /// `||P_W f - P_{W_k} f||²` recomputed from the basis.
    pub fn exact_residual_sq(&self) -> f64 {
        (&self.pw_f - self.w_basis.project_vector(&self.pw_f)).norm_squared()
    }

    pub fn pw_f_norm_sq(&self) -> f64 {
        self.pw_f_norm_sq
    }

    /// `Σ c_i v_{ℓ_i}`.
    pub fn reconstruction(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.pw_f.len());
        for (&l, &c) in self.selected.iter().zip(&self.coeffs) {
            out.axpy(c, self.v_atoms.atom(l).values(), 1.0);
        }
        out
    }

    fn is_selected(&self, n: usize) -> bool {
        self.selected.contains(&n)
    }

    fn stop_threshold_sq(&self, delta: f64) -> f64 {
        let floor = RESIDUAL_FLOOR * self.f.norm();
        delta.max(floor).powi(2)
    }

    fn passes_screen(&self, n: usize) -> bool {
        let un = self.u_norms[n];
        un > 0.0 && self.candidates[n].norm() > self.accept_tol * un
    }

    /// Recompute every cached `γ_n` and the residual from the current basis.
    fn refresh(&mut self) {
        for (cand, u) in self.candidates.iter_mut().zip(self.u_atoms.atoms()) {
            *cand = self.w_basis.residual(u.values());
        }
        self.residual_sq = self.exact_residual_sq();
    }

    fn sorted_selection(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }
}

/// `|⟨γ_n|f⟩| / ||γ_n||` for each unselected atom passing the screen.
pub fn forward_scores(state: &PursuitState) -> Vec<Option<f64>> {
    (0..state.u_atoms.len())
        .map(|n| {
            if state.is_selected(n) || !state.passes_screen(n) {
                return None;
            }
            let g = &state.candidates[n];
            Some(g.dot(&state.pw_f).abs() / g.norm())
        })
        .collect()
}

/// Relative consistency error of each candidate's new measurement vector:
/// `|⟨w_new| f - E_{V_k} f⟩| / ||w_new||` with `w_new = γ_n / ||γ_n||²`.
/// Maximized by the same atom as [`forward_scores`].
pub fn relative_consistency_errors(state: &PursuitState) -> Vec<Option<f64>> {
    let f = state.f.values();
    let misfit = f - state.reconstruction();
    (0..state.u_atoms.len())
        .map(|n| {
            if state.is_selected(n) || !state.passes_screen(n) {
                return None;
            }
            let g = &state.candidates[n];
            let w_new = g / g.norm_squared();
            Some(w_new.dot(&misfit).abs() / w_new.norm())
        })
        .collect()
}

/// Outcome of scoring the forward candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardChoice {
    Atom(usize),
    /// The residual is already at or below `delta`.
    BelowDelta,
    /// No unselected atom passes the accept_tol screen.
    NoCandidate,
    /// Candidates exist but the constraint rejects every one of them.
    Blocked,
}

fn ranked_candidates(state: &PursuitState) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = forward_scores(state)
        .into_iter()
        .enumerate()
        .filter_map(|(n, s)| s.map(|s| (n, s)))
        .collect();
    // stable sort keeps the lowest index first among equal scores
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

/// `f_{V_k} - E_{V_k} v_n α + v_n α` with `α = ⟨γ_n|f⟩ / ||γ_n||²`.
fn tentative_reconstruction(state: &PursuitState, current: &DVector<f64>, n: usize) -> DVector<f64> {
    let g = &state.candidates[n];
    let alpha = g.dot(&state.pw_f) / g.norm_squared();
    let v_n = state.v_atoms.atom(n).values();
    let mut out = current.clone();
    for (&l, w) in state.selected.iter().zip(&state.duals) {
        out.axpy(-alpha * w.dot(v_n), state.v_atoms.atom(l).values(), 1.0);
    }
    out.axpy(alpha, v_n, 1.0);
    out
}

fn choose(state: &PursuitState, params: &PursuitParams, check_delta: bool) -> ForwardChoice {
    if check_delta && state.residual_sq <= state.stop_threshold_sq(params.delta) {
        return ForwardChoice::BelowDelta;
    }
    let ranked = ranked_candidates(state);
    if ranked.is_empty() {
        return ForwardChoice::NoCandidate;
    }
    match &params.constraint {
        None => ForwardChoice::Atom(ranked[0].0),
        Some(constraint) => {
            let current = state.reconstruction();
            ranked
                .iter()
                .find(|(n, _)| constraint.admits(&tentative_reconstruction(state, &current, *n)))
                .map_or(ForwardChoice::Blocked, |(n, _)| ForwardChoice::Atom(*n))
        }
    }
}

/// Forward choice with the full outcome distinction.
pub fn forward_choice(state: &PursuitState, params: &PursuitParams) -> ForwardChoice {
    choose(state, params, true)
}

/// Index of the next atom to add, if any.
pub fn select_forward(state: &PursuitState, params: &PursuitParams) -> Option<usize> {
    match forward_choice(state, params) {
        ForwardChoice::Atom(n) => Some(n),
        _ => None,
    }
}

/// Forward choice after a removal. The removed atom is a valid candidate;
/// re-selecting it means the swap is rejected.
pub fn select_swap_forward(state: &PursuitState, params: &PursuitParams) -> Option<usize> {
    match choose(state, params, false) {
        ForwardChoice::Atom(n) => Some(n),
        _ => None,
    }
}

pub fn step_forward(state: &mut PursuitState, idx: usize) -> Result<()> {
    step_forward_with(state, idx, DualUpdate::default())
}

/// Add atom `idx` and update every measurement vector and coefficient.
pub fn step_forward_with(state: &mut PursuitState, idx: usize, rule: DualUpdate) -> Result<()> {
    let m = state.u_atoms.len();
    if idx >= m {
        return Err(Error::IndexOutOfRange { index: idx, len: m });
    }
    if state.is_selected(idx) {
        return Err(Error::AlreadySelected(idx));
    }
    let u_new = state.u_atoms.atom(idx).values().clone();
    let outcome = state.w_basis.expand_vector(&u_new, state.accept_tol);
    if !outcome.accepted {
        return Err(Error::DegenerateAtom {
            index: idx,
            norm: outcome.gamma_norm,
        });
    }
    let gamma = outcome.gamma;
    let gamma_norm_sq = outcome.gamma_norm * outcome.gamma_norm;
    let w_new = &gamma / gamma_norm_sq;

    let v_new = state.v_atoms.atom(idx).values();
    let c_new = w_new.dot(&state.pw_f);
    for (c, w) in state.coeffs.iter_mut().zip(&state.duals) {
        *c -= c_new * w.dot(v_new);
    }
    let driver = match rule {
        DualUpdate::ProjectedAtom => &u_new,
        DualUpdate::RawAtom => v_new,
    };
    for w in state.duals.iter_mut() {
        let a = driver.dot(w);
        w.axpy(-a, &w_new, 1.0);
    }

    let g_f = gamma.dot(&state.pw_f);
    state.residual_sq -= g_f * g_f / gamma_norm_sq;

    let q = state.w_basis.vectors().last().expect("basis just expanded");
    for cand in state.candidates.iter_mut() {
        let a = q.dot(cand);
        cand.axpy(-a, q, 1.0);
    }

    state.selected.push(idx);
    state.duals.push(w_new);
    state.coeffs.push(c_new);
    Ok(())
}

/// Atom index and coefficient dropped by [`remove_atom`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovedAtom {
    pub index: usize,
    pub coeff: f64,
}

/// Drop the atom at `position` (0-based) from the selection.
pub fn remove_atom(state: &mut PursuitState, position: usize) -> Result<RemovedAtom> {
    let k = state.k();
    if position >= k {
        return Err(Error::IndexOutOfRange { index: position, len: k });
    }
    let w_j = state.duals[position].clone();
    let c_j = state.coeffs[position];
    let nj_sq = w_j.norm_squared();

    for i in 0..k {
        if i == position {
            continue;
        }
        let a = w_j.dot(&state.duals[i]) / nj_sq;
        state.duals[i].axpy(-a, &w_j, 1.0);
        state.coeffs[i] -= a * c_j;
    }
    state.residual_sq += c_j * c_j / nj_sq;

    // P_{W_{k∖j}} = P_{W_k} - ŵ ŵᵀ, so γ_n gains ŵ ⟨ŵ|u_n⟩.
    let w_hat = &w_j / nj_sq.sqrt();
    for (cand, u) in state.candidates.iter_mut().zip(state.u_atoms.atoms()) {
        let a = w_hat.dot(u.values());
        cand.axpy(a, &w_hat, 1.0);
    }

    let index = state.selected.remove(position);
    state.duals.remove(position);
    state.coeffs.remove(position);
    let (basis, _) = OrthoBasis::from_spanners(*state.w_basis.grid(), &state.duals, 0.0);
    state.w_basis = basis;
    Ok(RemovedAtom { index, coeff: c_j })
}

/// `|c_i| / ||w_i||` per selected position.
pub fn backward_scores(state: &PursuitState) -> Vec<f64> {
    state
        .coeffs
        .iter()
        .zip(&state.duals)
        .map(|(c, w)| c.abs() / w.norm())
        .collect()
}

/// Position whose removal increases the residual least.
pub fn select_backward(state: &PursuitState) -> Result<usize> {
    backward_ranking(state).first().copied().ok_or(Error::EmptySelection)
}

fn backward_ranking(state: &PursuitState) -> Vec<usize> {
    let scores = backward_scores(state);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Bookkeeping from [`refine_by_swapping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SwapSummary {
    pub swaps_performed: usize,
    pub stage_reached: usize,
}

fn admissible(state: &PursuitState, params: &PursuitParams) -> bool {
    params
        .constraint
        .as_ref()
        .is_none_or(|c| c.admits(&state.reconstruction()))
}

/// Try one exchange of `stage` atoms, starting the removals at `first`.
fn try_exchange(
    state: &PursuitState,
    params: &PursuitParams,
    stage: usize,
    first: usize,
) -> Option<PursuitState> {
    let mut trial = state.clone();
    remove_atom(&mut trial, first).ok()?;
    for _ in 1..stage {
        let pos = select_backward(&trial).ok()?;
        remove_atom(&mut trial, pos).ok()?;
    }
    for _ in 0..stage {
        let n = select_swap_forward(&trial, params)?;
        step_forward(&mut trial, n).ok()?;
    }
    Some(trial)
}

/// Swap-based refinement at fixed selection size.
///
/// Stage `s` removes `s` atoms (the first chosen by backward rank, the rest
/// re-evaluated after each removal) and re-selects `s` atoms forward. A
/// result is accepted only when the residual strictly improves; after an
/// acceptance the search restarts at stage 1. When an exchange lands on an
/// index set already visited, the stage restarts from the next-ranked
/// backward candidate. Stops when no stage up to `max_swap_stage` improves
/// or the residual reaches `delta`.
pub fn refine_by_swapping(state: &mut PursuitState, params: &PursuitParams) -> SwapSummary {
    let mut summary = SwapSummary::default();
    state.refresh();
    let stop_sq = state.stop_threshold_sq(params.delta);
    if state.k() == 0 || state.residual_sq <= stop_sq {
        return summary;
    }
    let margin = SWAP_IMPROVEMENT * state.pw_f_norm_sq;
    let mut visited: HashSet<Vec<usize>> = HashSet::new();
    visited.insert(state.sorted_selection());

    let mut stage = 1;
    while stage <= params.max_swap_stage && stage <= state.k() {
        summary.stage_reached = summary.stage_reached.max(stage);
        let mut improved = false;
        for first in backward_ranking(state) {
            let Some(mut trial) = try_exchange(state, params, stage, first) else {
                continue;
            };
            if !visited.insert(trial.sorted_selection()) {
                continue;
            }
            trial.refresh();
            if trial.residual_sq < state.residual_sq - margin && admissible(&trial, params) {
                *state = trial;
                summary.swaps_performed += 1;
                improved = true;
                break;
            }
        }
        if improved {
            if state.residual_sq <= stop_sq {
                break;
            }
            stage = 1;
        } else {
            stage += 1;
        }
    }
    summary
}

/// Backward steps until at most `sparsity` atoms remain. Once the right
/// subspace is inside the selection the surplus atoms carry zero
/// coefficients, so this drops exactly those. Under a constraint, the
/// best-ranked admissible removal is taken; pruning stops if none is.
/// Returns the number of atoms removed.
pub fn prune_to_sparsity(state: &mut PursuitState, params: &PursuitParams) -> usize {
    let Some(target) = params.sparsity else {
        return 0;
    };
    let mut removed = 0;
    while state.k() > target {
        let next = backward_ranking(state).into_iter().find_map(|pos| {
            let mut trial = state.clone();
            remove_atom(&mut trial, pos).ok()?;
            admissible(&trial, params).then_some(trial)
        });
        match next {
            Some(trial) => *state = trial,
            None => break,
        }
        removed += 1;
    }
    if removed > 0 {
        state.refresh();
    }
    removed
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    /// Selected atom indices in selection order.
    pub selected: Vec<usize>,
    pub coeffs: Vec<f64>,
    /// `f_V = Σ c_i v_{ℓ_i}`.
    pub component_v: SampledSignal,
    /// `f - f_V`.
    pub component_wperp: SampledSignal,
    /// `||P_W f - P_{W_k} f||`.
    pub final_residual: f64,
    /// Forward steps taken before refinement.
    pub iterations: usize,
    /// Surplus atoms dropped to meet the sparsity target.
    pub pruned: usize,
    pub swaps_performed: usize,
    pub stage_reached: usize,
    pub termination_reason: TerminationReason,
    /// Largest relative gap between recursive coefficients and `⟨w_i|f⟩`.
    pub coefficient_drift: f64,
    pub ill_conditioned: bool,
    /// Indices of `W⊥` spanners found linearly dependent.
    pub rejected_wperp: Vec<usize>,
}

/// Serializable digest of a [`DecompositionResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub selected: Vec<usize>,
    pub labels: Vec<String>,
    pub coeffs: Vec<f64>,
    pub final_residual: f64,
    pub iterations: usize,
    pub pruned: usize,
    pub swaps_performed: usize,
    pub stage_reached: usize,
    pub termination_reason: TerminationReason,
    pub coefficient_drift: f64,
    pub ill_conditioned: bool,
    pub rejected_wperp: Vec<usize>,
}

impl DecompositionResult {
    pub fn summary(&self, v_atoms: &Dictionary) -> DecompositionSummary {
        DecompositionSummary {
            selected: self.selected.clone(),
            labels: self.selected.iter().map(|&i| v_atoms.labels()[i].to_string()).collect(),
            coeffs: self.coeffs.clone(),
            final_residual: self.final_residual,
            iterations: self.iterations,
            pruned: self.pruned,
            swaps_performed: self.swaps_performed,
            stage_reached: self.stage_reached,
            termination_reason: self.termination_reason,
            coefficient_drift: self.coefficient_drift,
            ill_conditioned: self.ill_conditioned,
            rejected_wperp: self.rejected_wperp.clone(),
        }
    }
}

/// Forward selection until the budget or `delta` is reached. Returns the
/// number of steps and whether the constraint blocked progress.
fn forward_phase(state: &mut PursuitState, params: &PursuitParams, budget: usize) -> (usize, bool) {
    let mut steps = 0;
    while state.k() < budget {
        match forward_choice(state, params) {
            ForwardChoice::Atom(n) => {
                if step_forward(state, n).is_err() {
                    // The cached γ_n passed the screen but the two-pass
                    // residual did not; the atom is numerically in W_k.
                    state.candidates[n].fill(0.0);
                    continue;
                }
                steps += 1;
            }
            ForwardChoice::Blocked => return (steps, true),
            ForwardChoice::BelowDelta | ForwardChoice::NoCandidate => break,
        }
    }
    (steps, false)
}

/// Split `f` into a component in `V` and a component in `W⊥`.
pub fn run_pursuit(
    v_atoms: &Dictionary,
    wperp_spanners: &Dictionary,
    f: &SampledSignal,
    params: &PursuitParams,
) -> Result<DecompositionResult> {
    params.validate(v_atoms.len())?;
    if v_atoms.grid() != wperp_spanners.grid() {
        return Err(Error::GridMismatch);
    }
    let wperp = orthonormalize_wperp(wperp_spanners, params.accept_tol);
    let mut state = init_state(v_atoms, &wperp.basis, f, params)?;
    let budget = params.forward_budget(v_atoms.len());

    let (iterations, blocked) = forward_phase(&mut state, params, budget);
    let stop_sq = state.stop_threshold_sq(params.delta);
    let mut swaps = SwapSummary::default();
    let mut termination_reason = if blocked {
        TerminationReason::ConstraintBlocked
    } else if state.residual_sq <= stop_sq {
        TerminationReason::ResidualBelowDelta
    } else if params.max_swap_stage == 0 {
        TerminationReason::RankBudgetExhausted
    } else {
        swaps = refine_by_swapping(&mut state, params);
        if state.residual_sq <= stop_sq {
            TerminationReason::ResidualBelowDelta
        } else {
            TerminationReason::SwapConverged
        }
    };
    let pruned = prune_to_sparsity(&mut state, params);
    if pruned > 0 && !blocked && params.max_swap_stage > 0 && state.residual_sq > stop_sq {
        // Pruning after an early stop can discard a needed atom; refine
        // again at the target size.
        let again = refine_by_swapping(&mut state, params);
        swaps.swaps_performed += again.swaps_performed;
        swaps.stage_reached = swaps.stage_reached.max(again.stage_reached);
        termination_reason = if state.residual_sq <= stop_sq {
            TerminationReason::ResidualBelowDelta
        } else {
            TerminationReason::SwapConverged
        };
    }

    let direct: Vec<f64> = state.duals.iter().map(|w| w.dot(&state.pw_f)).collect();
    let scale = direct.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
    let coefficient_drift = state
        .coeffs
        .iter()
        .zip(&direct)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;

    let grid = *f.grid();
    let component_v = SampledSignal::from_parts(grid, state.reconstruction());
    let component_wperp = SampledSignal::from_parts(grid, f.values() - component_v.values());
    Ok(DecompositionResult {
        selected: state.selected.clone(),
        coeffs: state.coeffs.clone(),
        component_v,
        component_wperp,
        final_residual: state.exact_residual_sq().sqrt(),
        iterations,
        pruned,
        swaps_performed: swaps.swaps_performed,
        stage_reached: swaps.stage_reached,
        termination_reason,
        coefficient_drift,
        ill_conditioned: coefficient_drift > COEFFICIENT_DRIFT_TOL,
        rejected_wperp: wperp.rejected,
    })
}
