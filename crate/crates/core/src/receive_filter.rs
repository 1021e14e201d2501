//! Radar receive filter design.
//!
//! The filter maximizes the worst radar SINR over the angle grid. Each SINR
//! is a ratio `|ς₀|²·ϰ_k(w) / D(w)` with
//!
//! ```text
//! ϰ_k(w) = ‖wᴴ Ã(θ_k) Y‖²,   D(w) = ‖wᴴ L‖² + σ_r² ‖w‖²
//! ```
//!
//! The ratio is handled with the quadratic transform (auxiliary `l_k`) and
//! the concave numerator is minorized around the current filter, which
//! yields a convex QCQP in `(w, t_1..t_K, c)` per outer iteration.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::{receive_steering, transmit_steering, SystemConfig};
use crate::error::{Result, SheError};
use crate::metrics::radar_sinr_effective;
use crate::qcqp::{self, QcqpProblem, SolveStatus, SolverOptions};
use crate::{CMatrix, CVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiveFilterState {
    pub w: CVector,
    pub l: Vec<f64>,
    pub c: f64,
    pub iteration: usize,
}

/// Per-iteration record of the receive-filter loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTraceRow {
    pub iteration: usize,
    pub min_sinr: f64,
    pub sinr: Vec<f64>,
}

/// Minorization data built at the expansion point `w^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveMmCache {
    /// `Λ_k` stored as a column so that `Λ_k w = lambda[k].dotc(w)`.
    pub lambda: Vec<CVector>,
    pub kappa_bar: Vec<f64>,
    /// Clutter stack `L`, one block of `U+1` columns per clutter patch.
    pub clutter_stack: CMatrix,
}

/// Clutter-plus-noise covariance `L Lᴴ + σ_r² I`.
pub fn interference_covariance(effective: &CMatrix, config: &SystemConfig) -> CMatrix {
    let g = &config.geometry;
    let mut r = CMatrix::identity(g.num_rx, g.num_rx) * Complex64::from(config.noise_radar);
    for (&angle, amp) in config.clutter_angles.iter().zip(&config.clutter_amplitudes) {
        let ar = receive_steering(angle, g);
        let s = (transmit_steering(angle, g).adjoint() * effective).norm_squared();
        r += &ar * ar.adjoint() * Complex64::from(amp.norm_sqr() * s);
    }
    r
}

pub fn clutter_stack(effective: &CMatrix, config: &SystemConfig) -> CMatrix {
    let g = &config.geometry;
    let cols = effective.ncols();
    let mut l = CMatrix::zeros(g.num_rx, cols * config.num_clutter());
    for (i, (&angle, amp)) in config.clutter_angles.iter().zip(&config.clutter_amplitudes).enumerate() {
        let ar = receive_steering(angle, g);
        let row = transmit_steering(angle, g).adjoint() * effective;
        l.columns_mut(i * cols, cols).copy_from(&(&ar * row * *amp));
    }
    l
}

/// Target energy `‖a_t(θ)ᴴ Y‖²` seen through the transmit side.
fn transmit_energy(theta: f64, effective: &CMatrix, config: &SystemConfig) -> f64 {
    (transmit_steering(theta, &config.geometry).adjoint() * effective).norm_squared()
}

fn numerator_parts(w: &CVector, effective: &CMatrix, grid: &[f64], config: &SystemConfig) -> Vec<f64> {
    grid.iter()
        .map(|&theta| {
            let ar = receive_steering(theta, &config.geometry);
            w.dotc(&ar).norm_sqr() * transmit_energy(theta, effective, config)
        })
        .collect()
}

/// Quadratic-transform auxiliaries `l_k = |ς₀|√ϰ_k / D(w)`.
pub fn update_auxiliary_l(w: &CVector, effective: &CMatrix, config: &SystemConfig, grid: &[f64]) -> Vec<f64> {
    let r = interference_covariance(effective, config);
    let den = w.dotc(&(&r * w)).re;
    let amp = config.target_amplitude.norm();
    numerator_parts(w, effective, grid, config)
        .into_iter()
        .map(|kappa| amp * kappa.sqrt() / den)
        .collect()
}

pub fn build_mm_cache(w: &CVector, effective: &CMatrix, config: &SystemConfig, grid: &[f64]) -> ReceiveMmCache {
    let mut lambda = Vec::with_capacity(grid.len());
    let mut kappa_bar = Vec::with_capacity(grid.len());
    for &theta in grid {
        let ar = receive_steering(theta, &config.geometry);
        let s = transmit_energy(theta, effective, config);
        let proj = w.dotc(&ar);
        // Λ_k w = s (w^tᴴ a_r)(a_rᴴ w), so the column form is s·conj(w^tᴴ a_r)·a_r.
        lambda.push(&ar * (proj.conj() * s));
        kappa_bar.push(s * proj.norm_sqr());
    }
    ReceiveMmCache { lambda, kappa_bar, clutter_stack: clutter_stack(effective, config) }
}

/// Convex surrogate over `(w, t_1..t_K, c)`; extras are ordered `t_1..t_K, c`.
pub fn build_mm_subproblem(
    state: &ReceiveFilterState,
    cache: &ReceiveMmCache,
    config: &SystemConfig,
) -> Result<QcqpProblem> {
    let mr = state.w.len();
    let k = cache.kappa_bar.len();
    if let Some((index, &value)) = cache.kappa_bar.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(SheError::DegenerateCache { index, value });
    }
    let l_stack = &cache.clutter_stack;
    let r = l_stack * l_stack.adjoint() + CMatrix::identity(mr, mr) * Complex64::from(config.noise_radar);
    let amp = config.target_amplitude.norm();
    let mut problem = QcqpProblem::new(mr, k + 1);
    problem.objective.extra_lin[k] = -1.0;
    for j in 0..k {
        let lj = state.l[j];
        let mut f = problem.new_function();
        if lj > 0.0 {
            f.add_block(0, &r * Complex64::from(lj * lj));
        }
        f.extra_lin[j] = -2.0 * lj * amp;
        f.extra_lin[k] = 1.0;
        problem.constraints.push(f);

        let mut g = problem.new_function();
        g.extra_quad[j] = 1.0;
        g.lin = -&cache.lambda[j];
        g.constant = cache.kappa_bar[j];
        problem.constraints.push(g);
    }
    Ok(problem)
}

/// Closed-form quadratic-transform value `2l|ς₀|√ϰ − l²D` for each angle.
pub fn transformed_values(state: &ReceiveFilterState, cache: &ReceiveMmCache, r: &CMatrix, amp: f64) -> Vec<f64> {
    let den = state.w.dotc(&(r * &state.w)).re;
    state
        .l
        .iter()
        .zip(&cache.kappa_bar)
        .map(|(&l, &kappa)| 2.0 * l * amp * kappa.sqrt() - l * l * den)
        .collect()
}

fn min_sinr(w: &CVector, effective: &CMatrix, grid: &[f64], config: &SystemConfig) -> Result<(f64, Vec<f64>)> {
    let sinr: Vec<f64> = grid
        .iter()
        .map(|&t| radar_sinr_effective(w, effective, t, config))
        .collect::<Result<_>>()?;
    Ok((sinr.iter().copied().fold(f64::INFINITY, f64::min), sinr))
}

fn normalized(w: &CVector) -> CVector {
    w / Complex64::from(w.norm())
}

/// Max-min radar SINR receive filter by alternating `l` updates and convex
/// surrogate solves. Returns the final state (unit-norm `w`) and the trace.
pub fn optimize_receive_filter(
    effective: &CMatrix,
    w_init: &CVector,
    config: &SystemConfig,
    grid: &[f64],
    tol: f64,
    max_outer: usize,
) -> Result<(ReceiveFilterState, Vec<FilterTraceRow>)> {
    if !(w_init.norm() > 0.0) {
        return Err(SheError::ZeroFilter);
    }
    let mut w = normalized(w_init);
    let (mut best, sinr) = min_sinr(&w, effective, grid, config)?;
    let mut trace = vec![FilterTraceRow { iteration: 0, min_sinr: best, sinr }];
    let mut state = ReceiveFilterState { w: w.clone(), l: vec![0.0; grid.len()], c: best, iteration: 0 };
    if effective.norm_squared() == 0.0 {
        return Ok((state, trace));
    }
    let r = interference_covariance(effective, config);
    let amp = config.target_amplitude.norm();
    for iteration in 1..=max_outer {
        let l = update_auxiliary_l(&w, effective, config, grid);
        let cache = build_mm_cache(&w, effective, config, grid);
        let current = ReceiveFilterState { w: w.clone(), l, c: best, iteration };
        let problem = build_mm_subproblem(&current, &cache, config)?;

        // Shrinking t below √ϰ makes the epigraph constraints strict; c sits
        // just under the resulting transformed values.
        let den = w.dotc(&(&r * &w)).re;
        let mut hint = DVector::zeros(grid.len() + 1);
        let mut floor = f64::INFINITY;
        for j in 0..grid.len() {
            hint[j] = 0.99 * cache.kappa_bar[j].sqrt();
            let lj = current.l[j];
            floor = floor.min(2.0 * lj * amp * hint[j] - lj * lj * den);
        }
        hint[grid.len()] = floor - 1e-3 * floor.abs().max(1e-12);
        let options = SolverOptions::with_tol(1e-9, 200).hint(w.clone(), hint);
        let sol = qcqp::solve(&problem, &options)?;
        log::debug!("filter iter {iteration}: status {:?} c {} best {best} kkt {:e} iters {}", sol.status, sol.extras[grid.len()], sol.kkt_residual, sol.iterations);
        // A loss of accuracy near the optimum still leaves a usable interior
        // point; it is judged below by the exact SINR like any other candidate.
        let imprecise = sol.status == SolveStatus::NumericalFailure && sol.max_constraint_violation <= 0.0;
        if !imprecise && !matches!(sol.status, SolveStatus::Optimal | SolveStatus::IterationLimit) {
            return Err(SheError::SolverFailure(format!("receive filter subproblem: {:?}", sol.status)));
        }
        if !(sol.x.norm() > 0.0) {
            return Err(SheError::ZeroFilter);
        }
        let candidate = normalized(&sol.x);
        let (value, sinr) = min_sinr(&candidate, effective, grid, config)?;
        if imprecise && value < best {
            break;
        }
        if value < best - 1e-7 * best.abs() {
            return Err(SheError::SolverStall { before: best, after: value });
        }
        let change = (value - best).abs() / best.abs().max(1e-300);
        state = ReceiveFilterState { w: candidate.clone(), l: current.l, c: sol.extras[grid.len()], iteration };
        if value >= best {
            w = candidate;
            best = value;
            trace.push(FilterTraceRow { iteration, min_sinr: value, sinr });
        } else {
            // Solver noise below the stall threshold: keep the previous filter.
            let previous = trace.last().expect("trace starts non-empty").sinr.clone();
            trace.push(FilterTraceRow { iteration, min_sinr: best, sinr: previous });
        }
        if change < tol || imprecise {
            break;
        }
    }
    state.w = w;
    Ok((state, trace))
}

/// Principal generalized eigenvector of `(N, D)` at a single angle.
///
/// `N = |ς₀|² Ã Y Yᴴ Ãᴴ` and `D` is the clutter-plus-noise covariance.
pub fn closed_form_single_angle(effective: &CMatrix, config: &SystemConfig, theta: f64) -> CVector {
    let g = &config.geometry;
    let ar = receive_steering(theta, g);
    let n = &ar * ar.adjoint() * Complex64::from(config.target_amplitude.norm_sqr() * transmit_energy(theta, effective, config));
    let d = interference_covariance(effective, config);
    let chol = nalgebra::Cholesky::new(d).expect("clutter-plus-noise covariance is positive definite");
    let lower = chol.l();
    let linv = lower.clone().try_inverse().expect("triangular factor is invertible");
    let c = &linv * n * linv.adjoint();
    let c = (&c + c.adjoint()) * Complex64::from(0.5);
    let eig = nalgebra::SymmetricEigen::new(c);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top).into_owned();
    let w = linv.adjoint() * v;
    normalized(&w)
}
