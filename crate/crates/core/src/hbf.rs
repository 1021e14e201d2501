//! Hybrid beamformer optimization for a fixed radar receive filter.
//!
//! The inner loop follows an augmented-Lagrangian split: the effective
//! beamformer `Y` is decoupled from the hybrid product `A·D_CI` and the two
//! are driven to consensus through a scaled dual `Z`. One inner iteration
//! performs, in order:
//!
//! 1. a convex step in `(Y, η)` built from the WMMSE bound and MM
//!    linearizations of the eavesdropper and radar constraints,
//! 2. element-wise phase updates of the analog stage `A`,
//! 3. the least-squares digital update `D_CI = (AᴴA)⁻¹Aᴴ(Y + Z)`,
//! 4. the equalizer and weight updates `κ`, `ω`,
//! 5. the dual update `Z ← Z + Y − A·D_CI`.
//!
//! After the loop a digital-only refinement (`polish_digital`) re-solves the
//! same surrogate with `Y = A·D_CI` substituted, so the returned hybrid
//! beamformer satisfies the exact constraints rather than only `Y` doing so.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_model::{receive_steering, transmit_steering, ChannelSet, SystemConfig};
use crate::error::{Result, SheError};
use crate::metrics::{self, AnalogStage, BeamformerSet};
use crate::qcqp::{self, QcqpProblem, QuadFunction, SolveStatus, SolverOptions};
use crate::{CMatrix, CVector};

/// Which parts of the design are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbfMode {
    /// Optimize the I2S stream `d_I`; when false it is pinned to zero.
    pub use_i2s: bool,
    /// Enforce the radar SINR constraint.
    pub radar: bool,
    /// Bypass the analog stage (`A = I`).
    pub fully_digital: bool,
}

impl HbfMode {
    pub const SHE: HbfMode = HbfMode { use_i2s: true, radar: true, fully_digital: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbfOptions {
    pub penalty: f64,
    /// Multiplier applied to the penalty after every inner iteration (1 keeps it fixed).
    pub penalty_growth: f64,
    pub max_inner: usize,
    /// Consensus tolerance relative to `√P`.
    pub consensus_tol: f64,
    pub eta_tol: f64,
    pub bcd_sweeps: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub polish_iterations: usize,
    pub polish_tol: f64,
}

impl Default for HbfOptions {
    fn default() -> Self {
        Self {
            penalty: 10.0,
            penalty_growth: 1.0,
            max_inner: 100,
            consensus_tol: 1e-3,
            eta_tol: 1e-4,
            bcd_sweeps: 1,
            solver_tol: 1e-8,
            solver_max_iter: 300,
            polish_iterations: 30,
            polish_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmmseState {
    pub kappa: Vec<Complex64>,
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlState {
    pub effective: CMatrix,
    pub dual: CMatrix,
    pub penalty: f64,
    pub eta: f64,
    pub inner_iteration: usize,
}

/// Linearization data for the eavesdropper and radar constraints at `Y^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HbfMmCache {
    /// Eavesdropper samples `h_n`; `G_n = h_n h_nᴴ`.
    pub eue: Vec<CVector>,
    /// `Υ_{u,n} = γ_{e,u}(|h_nᴴ y_0^t|² − σ_e²)`.
    pub upsilon: Vec<Vec<f64>>,
    /// `g_0^{u,n} = γ_{e,u} G_n y_0^t`.
    pub g0: Vec<Vec<CVector>>,
    /// `J_k = v_k v_kᴴ` with `v_k = a_t(θ_k)·(a_r(θ_k)ᴴ w)`.
    pub radar_dirs: Vec<CVector>,
    /// `Ψ_k = (|ς₀|²/γ) Σ_v |v_kᴴ y_v^t|²`.
    pub psi: Vec<f64>,
    /// `M_k = (2|ς₀|²/γ)(Y^t)ᴴ J_k`, a `(U+1) × M_t` matrix.
    pub m_lin: Vec<CMatrix>,
    /// Clutter filter rows `ς_i (wᴴ a_r(θ_i)) a_t(θ_i)ᴴ`.
    pub clutter_rows: CMatrix,
    /// `γ_{e,u} = 2^{ξ_u} − 1`.
    pub gamma_eue: Vec<f64>,
    pub gamma_radar: f64,
    pub noise_radar_term: f64,
}

impl HbfMmCache {
    pub fn g_matrix(&self, n: usize) -> CMatrix {
        &self.eue[n] * self.eue[n].adjoint()
    }

    pub fn j_matrix(&self, k: usize) -> CMatrix {
        &self.radar_dirs[k] * self.radar_dirs[k].adjoint()
    }
}

/// Per-iteration record of the inner loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerTraceRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub eta: f64,
    pub worst_case_sr: f64,
    pub min_radar_sinr: f64,
    pub consensus_residual: f64,
    pub max_eue_rate: f64,
}

/// `κ_u = y_uᴴ h_u / (‖h_uᴴ Y‖² + σ_u²)`, the MMSE equalizer of each user.
pub fn update_equalizers(effective: &CMatrix, channels: &ChannelSet, noise_user: &[f64]) -> Vec<Complex64> {
    (0..channels.num_users())
        .map(|u| {
            let h = channels.lue.column(u);
            let total: f64 = (0..effective.ncols()).map(|v| h.dotc(&effective.column(v)).norm_sqr()).sum();
            effective.column(u + 1).dotc(&h) / (total + noise_user[u])
        })
        .collect()
}

/// `ω_u = 1 + SINR_u`.
pub fn update_weights(lue_sinrs: &[f64]) -> Vec<f64> {
    lue_sinrs.iter().map(|s| 1.0 + s).collect()
}

pub fn wmmse_update(effective: &CMatrix, channels: &ChannelSet, config: &SystemConfig) -> WmmseState {
    let kappa = update_equalizers(effective, channels, &config.noise_user);
    let sinrs: Vec<f64> = (0..channels.num_users())
        .map(|u| metrics::lue_sinr_effective(u, &channels.lue, effective, config.noise_user[u]))
        .collect();
    WmmseState { kappa, omega: update_weights(&sinrs) }
}

/// Lower bound on user `u`'s rate in bits, `(ln ω − ω ε + 1)/ln 2`, tight at
/// the MMSE equalizer with `ω = 1 + SINR`.
pub fn rate_lower_bound(u: usize, wmmse: &WmmseState, channels: &ChannelSet, effective: &CMatrix, noise_user: f64) -> f64 {
    let eps = metrics::mse(u, wmmse.kappa[u], channels, effective, noise_user);
    let omega = wmmse.omega[u];
    (omega.ln() - omega * eps + 1.0) / LN_2
}

pub fn build_mm_cache(
    effective: &CMatrix,
    channels: &ChannelSet,
    w: &CVector,
    config: &SystemConfig,
    grid: &[f64],
    gamma_radar: f64,
) -> HbfMmCache {
    let g = &config.geometry;
    let users = config.num_users;
    let y0 = effective.column(0).into_owned();
    let gamma_eue: Vec<f64> = config.eue_rate_caps.iter().map(|xi| 2f64.powf(*xi) - 1.0).collect();
    let mut upsilon = vec![Vec::with_capacity(channels.eue_samples.len()); users];
    let mut g0 = vec![Vec::with_capacity(channels.eue_samples.len()); users];
    for u in 0..users {
        for h in &channels.eue_samples {
            let proj = h.dotc(&y0);
            upsilon[u].push(gamma_eue[u] * (proj.norm_sqr() - config.noise_eue));
            g0[u].push(h * (proj * gamma_eue[u]));
        }
    }
    let amp2 = config.target_amplitude.norm_sqr();
    let radar_dirs: Vec<CVector> = grid
        .iter()
        .map(|&theta| transmit_steering(theta, g) * receive_steering(theta, g).dotc(w))
        .collect();
    let scale = if gamma_radar > 0.0 { amp2 / gamma_radar } else { 0.0 };
    let psi = radar_dirs
        .iter()
        .map(|v| scale * (v.adjoint() * effective).norm_squared())
        .collect();
    let m_lin = radar_dirs
        .iter()
        .map(|v| effective.adjoint() * v * v.adjoint() * Complex64::from(2.0 * scale))
        .collect();
    let mut clutter_rows = CMatrix::zeros(config.num_clutter(), g.num_tx);
    for (i, (&angle, amp)) in config.clutter_angles.iter().zip(&config.clutter_amplitudes).enumerate() {
        let gain = *amp * w.dotc(&receive_steering(angle, g));
        clutter_rows.set_row(i, &(transmit_steering(angle, g).adjoint() * gain));
    }
    HbfMmCache {
        eue: channels.eue_samples.clone(),
        upsilon,
        g0,
        radar_dirs,
        psi,
        m_lin,
        clutter_rows,
        gamma_eue,
        gamma_radar,
        noise_radar_term: config.noise_radar * w.norm_squared(),
    }
}

/// Exact eavesdropper constraint `|h_nᴴy_u|² − γ(|h_nᴴy_0|² + σ_e²)` (≤ 0 when met).
pub fn eue_constraint_exact(cache: &HbfMmCache, u: usize, n: usize, effective: &CMatrix, noise_eue: f64) -> f64 {
    let h = &cache.eue[n];
    h.dotc(&effective.column(u + 1)).norm_sqr()
        - cache.gamma_eue[u] * (h.dotc(&effective.column(0)).norm_sqr() + noise_eue)
}

/// MM restriction of the eavesdropper constraint around `Y^t`.
pub fn eue_constraint_linearized(cache: &HbfMmCache, u: usize, n: usize, effective: &CMatrix) -> f64 {
    let h = &cache.eue[n];
    h.dotc(&effective.column(u + 1)).norm_sqr() - 2.0 * cache.g0[u][n].dotc(&effective.column(0)).re
        + cache.upsilon[u][n]
}

/// Exact radar constraint `‖BY‖² + σ_r²‖w‖² − (|ς₀|²/γ)‖v_kᴴY‖²` (≤ 0 when met).
pub fn radar_constraint_exact(cache: &HbfMmCache, k: usize, effective: &CMatrix, config: &SystemConfig) -> f64 {
    let v = &cache.radar_dirs[k];
    let scale = config.target_amplitude.norm_sqr() / cache.gamma_radar;
    (&cache.clutter_rows * effective).norm_squared() + cache.noise_radar_term - scale * (v.adjoint() * effective).norm_squared()
}

pub fn radar_constraint_linearized(cache: &HbfMmCache, k: usize, effective: &CMatrix) -> f64 {
    let trace: Complex64 = (&cache.m_lin[k] * effective).trace();
    (&cache.clutter_rows * effective).norm_squared() + cache.noise_radar_term - trace.re + cache.psi[k]
}

/// Column layout of the optimization variable. Active columns of `Y` are
/// stacked in order, each occupying `block` complex coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub columns: Vec<usize>,
    pub block: usize,
}

impl Layout {
    pub fn new(mode: HbfMode, users: usize, block: usize) -> Self {
        let first = if mode.use_i2s { 0 } else { 1 };
        Self { columns: (first..=users).collect(), block }
    }

    pub fn offset(&self, column: usize) -> Option<usize> {
        self.columns.iter().position(|&c| c == column).map(|p| p * self.block)
    }

    pub fn dimension(&self) -> usize {
        self.columns.len() * self.block
    }

    pub fn pack(&self, m: &CMatrix) -> CVector {
        let mut x = CVector::zeros(self.dimension());
        for (p, &c) in self.columns.iter().enumerate() {
            x.rows_mut(p * self.block, self.block).copy_from(&m.column(c));
        }
        x
    }

    pub fn unpack(&self, x: &CVector, total_columns: usize) -> CMatrix {
        let mut m = CMatrix::zeros(self.block, total_columns);
        for (p, &c) in self.columns.iter().enumerate() {
            m.set_column(c, &x.rows(p * self.block, self.block));
        }
        m
    }
}

fn add_quad(f: &mut QuadFunction, layout: &Layout, column: usize, q: &CMatrix) {
    if let Some(off) = layout.offset(column) {
        f.add_block(off, q.clone());
    }
}

fn add_lin(f: &mut QuadFunction, layout: &Layout, column: usize, b: &CVector) {
    if let Some(off) = layout.offset(column) {
        f.add_lin(off, b);
    }
}

/// Index ranges of the constraint groups in a built subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintIndex {
    pub rate: std::ops::Range<usize>,
    pub power: usize,
    /// `eue[u][n]` is the constraint index for user `u`, sample `n`.
    pub eue: Vec<Vec<usize>>,
    pub radar: std::ops::Range<usize>,
}

/// Constraints shared by the consensus step and the digital refinement, in
/// `Y` coordinates. Extras: a single `η`.
fn build_constraints(
    problem: &mut QcqpProblem,
    layout: &Layout,
    wmmse: &WmmseState,
    cache: &HbfMmCache,
    channels: &ChannelSet,
    config: &SystemConfig,
    mode: HbfMode,
) -> ConstraintIndex {
    let users = config.num_users;
    let columns = users + 1;
    let rate_start = problem.constraints.len();
    for u in 0..users {
        let h = channels.lue.column(u).into_owned();
        let omega = wmmse.omega[u];
        let kappa = wmmse.kappa[u];
        let q = &h * h.adjoint() * Complex64::from(omega * kappa.norm_sqr() / LN_2);
        let mut f = problem.new_function();
        for v in 0..columns {
            add_quad(&mut f, layout, v, &q);
        }
        add_lin(&mut f, layout, u + 1, &(&h * (-kappa.conj() * omega / LN_2)));
        f.constant = (omega * (kappa.norm_sqr() * config.noise_user[u] + 1.0) - omega.ln() - 1.0) / LN_2;
        f.extra_lin[0] = 1.0;
        problem.constraints.push(f);
    }
    let rate = rate_start..problem.constraints.len();

    let mut power = problem.new_function();
    let eye = CMatrix::identity(layout.block, layout.block);
    for v in 0..columns {
        add_quad(&mut power, layout, v, &eye);
    }
    power.constant = -config.power_budget;
    let power_index = problem.constraints.len();
    problem.constraints.push(power);

    let mut eue = vec![Vec::new(); users];
    for (n, h) in cache.eue.iter().enumerate() {
        let g = h * h.adjoint();
        for u in 0..users {
            let mut f = problem.new_function();
            add_quad(&mut f, layout, u + 1, &g);
            if mode.use_i2s {
                add_lin(&mut f, layout, 0, &(-&cache.g0[u][n]));
                f.constant = cache.upsilon[u][n];
            } else {
                f.constant = -cache.gamma_eue[u] * config.noise_eue;
            }
            eue[u].push(problem.constraints.len());
            problem.constraints.push(f);
        }
    }

    let radar_start = problem.constraints.len();
    if mode.radar && cache.gamma_radar > 0.0 {
        let btb = cache.clutter_rows.adjoint() * &cache.clutter_rows;
        for k in 0..cache.radar_dirs.len() {
            let mut f = problem.new_function();
            for v in 0..columns {
                if btb.norm() > 0.0 {
                    add_quad(&mut f, layout, v, &btb);
                }
                // 2Re(bᴴ y_v) = −Re(M_k[v,:] y_v), so b = −½ M_k[v,:]ᴴ.
                let row = cache.m_lin[k].row(v).adjoint() * Complex64::from(-0.5);
                add_lin(&mut f, layout, v, &row);
            }
            f.constant = cache.noise_radar_term + cache.psi[k];
            problem.constraints.push(f);
        }
    }
    let radar = radar_start..problem.constraints.len();
    ConstraintIndex { rate, power: power_index, eue, radar }
}

/// The consensus step over `(Y, η)`:
/// minimize `−η + (ρ/2)‖Y − A·D_CI + Z‖²` subject to the rate bound, power,
/// linearized eavesdropper and linearized radar constraints.
pub fn build_y_subproblem(
    al: &AlState,
    hybrid: &CMatrix,
    wmmse: &WmmseState,
    cache: &HbfMmCache,
    channels: &ChannelSet,
    config: &SystemConfig,
    mode: HbfMode,
) -> (QcqpProblem, Layout, ConstraintIndex) {
    let layout = Layout::new(mode, config.num_users, config.geometry.num_tx);
    let mut problem = QcqpProblem::new(layout.dimension(), 1);
    problem.objective.extra_lin[0] = -1.0;
    let anchor = hybrid - &al.dual;
    let half = 0.5 * al.penalty;
    let eye = CMatrix::identity(layout.block, layout.block) * Complex64::from(half);
    for &c in &layout.columns {
        add_quad(&mut problem.objective, &layout, c, &eye);
        add_lin(&mut problem.objective, &layout, c, &(anchor.column(c) * Complex64::from(-half)));
        problem.objective.constant += half * anchor.column(c).norm_squared();
    }
    let index = build_constraints(&mut problem, &layout, wmmse, cache, channels, config, mode);
    (problem, layout, index)
}

/// Rewrites a problem posed over the active columns of `Y` as one over the
/// matching columns of `D_CI`, using `y_v = A d_v`.
pub fn substitute_analog(problem: &QcqpProblem, layout: &Layout, analog: &CMatrix) -> (QcqpProblem, Layout) {
    let n_rf = analog.ncols();
    let digital_layout = Layout { columns: layout.columns.clone(), block: n_rf };
    let convert = |f: &QuadFunction| -> QuadFunction {
        let mut g = QuadFunction::zero(digital_layout.dimension(), problem.extras);
        for b in &f.blocks {
            let p = b.offset / layout.block;
            g.add_block(p * n_rf, analog.adjoint() * &b.matrix * analog);
        }
        for p in 0..layout.columns.len() {
            let seg = f.lin.rows(p * layout.block, layout.block);
            g.add_lin(p * n_rf, &(analog.adjoint() * seg));
        }
        g.extra_quad = f.extra_quad.clone();
        g.extra_lin = f.extra_lin.clone();
        g.constant = f.constant;
        g
    };
    let out = QcqpProblem {
        dimension: digital_layout.dimension(),
        extras: problem.extras,
        objective: convert(&problem.objective),
        constraints: problem.constraints.iter().map(convert).collect(),
    };
    (out, digital_layout)
}

/// Outcome of the element-wise analog update.
#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome {
    pub phases: DMatrix<f64>,
    /// `‖T − A·D‖²` before any update followed by its value after every element update.
    pub objective_trace: Vec<f64>,
}

/// Element-wise BCD on `‖T − A·D‖²` over unit-modulus `A`, with the residual
/// kept up to date row by row. A zero coefficient keeps the previous phase.
pub fn update_analog_bcd(target: &CMatrix, phases: &DMatrix<f64>, digital: &CMatrix, sweeps: usize) -> BcdOutcome {
    let mut phases = phases.clone();
    let analog = phases.map(metrics::unit_phasor);
    let mut residual = target - &analog * digital;
    let mut objective = residual.norm_squared();
    let mut trace = vec![objective];
    let (rows, n_rf) = phases.shape();
    for _ in 0..sweeps {
        for i in 0..rows {
            for j in 0..n_rf {
                let a_old = metrics::unit_phasor(phases[(i, j)]);
                let d = digital.row(j);
                let before = residual.row(i).norm_squared();
                // Residual of row i with element (i, j) removed.
                let r = residual.row(i) + d * a_old;
                let c: Complex64 = r.iter().zip(d.iter()).map(|(x, y)| x * y.conj()).sum();
                if c.norm() > 0.0 {
                    phases[(i, j)] = c.arg();
                }
                let a_new = metrics::unit_phasor(phases[(i, j)]);
                let updated = r - d * a_new;
                residual.set_row(i, &updated);
                objective += updated.norm_squared() - before;
                trace.push(objective);
            }
        }
    }
    BcdOutcome { phases, objective_trace: trace }
}

/// Condition number beyond which the Gram matrix is regularized.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// `D_CI = (AᴴA)⁻¹Aᴴ(Y + Z)`. Returns the digital matrix and whether the Gram
/// matrix had to be regularized.
pub fn update_digital(target: &CMatrix, analog: &AnalogStage) -> (CMatrix, bool) {
    if analog.is_fully_digital() {
        return (target.clone(), false);
    }
    let a = analog.matrix();
    let mut gram = a.adjoint() * &a;
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let regularized = !(min > 0.0 && max / min <= GRAM_CONDITION_LIMIT);
    if regularized {
        log::warn!("analog Gram matrix is ill-conditioned (eigenvalues {min:e}..{max:e}); regularizing");
        let reg = 1e-10 * a.nrows() as f64;
        for i in 0..gram.nrows() {
            gram[(i, i)] += Complex64::from(reg);
        }
    }
    let rhs = a.adjoint() * target;
    let d = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).expect("regularized Gram matrix is invertible"),
    };
    (d, regularized)
}

/// `Z ← Z + Y − A·D_CI`.
pub fn update_dual(dual: &CMatrix, effective: &CMatrix, hybrid: &CMatrix) -> CMatrix {
    dual + effective - hybrid
}

/// Starting point of the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerStart {
    pub analog: AnalogStage,
    pub digital: CMatrix,
    /// Effective beamformer the consensus variable starts from.
    pub effective: CMatrix,
}

/// Matched-filter initialization with the user beams projected away from
/// the eavesdropper estimate and equal power per stream.
pub fn initial_start<R: Rng + ?Sized>(
    channels: &ChannelSet,
    config: &SystemConfig,
    mode: HbfMode,
    rng: &mut R,
) -> InnerStart {
    let g = &config.geometry;
    let mt = g.num_tx;
    let users = config.num_users;
    let columns = users + 1;
    let estimate = &channels.eue_samples[0];
    let mut y = CMatrix::zeros(mt, columns);
    for u in 0..users {
        let h = channels.lue.column(u).into_owned();
        let mut dir = h.clone();
        let e2 = estimate.norm_squared();
        if e2 > 0.0 {
            dir -= estimate * (estimate.dotc(&h) / e2);
        }
        if dir.norm() < 1e-9 * h.norm().max(1e-300) {
            dir = h;
        }
        y.set_column(u + 1, &dir);
    }
    if mode.use_i2s {
        y.set_column(0, &transmit_steering(config.target_angle, g));
    }
    let active = if mode.use_i2s { columns } else { users };
    let per = config.power_budget / active as f64;
    for c in 0..columns {
        let norm = y.column(c).norm();
        if norm > 0.0 {
            let scaled = y.column(c) * Complex64::from((per).sqrt() / norm);
            y.set_column(c, &scaled);
        }
    }
    let analog = if mode.fully_digital {
        AnalogStage::FullyDigital { dim: mt }
    } else {
        let phases = DMatrix::from_fn(mt, config.num_rf, |_, _| rng.random::<f64>() * std::f64::consts::TAU);
        AnalogStage::from_phases(phases)
    };
    let (digital, _) = update_digital(&y, &analog);
    InnerStart { analog, digital, effective: y }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub analog: AnalogStage,
    pub digital: CMatrix,
    pub al: AlState,
    pub wmmse: WmmseState,
    pub trace: Vec<InnerTraceRow>,
    pub converged: bool,
    pub regularized_gram: bool,
}

impl InnerOutcome {
    pub fn beamformers(&self) -> BeamformerSet {
        BeamformerSet::from_stacked(self.analog.clone(), &self.digital)
    }
}

fn solve_checked(problem: &QcqpProblem, options: SolverOptions, what: &str) -> Result<qcqp::QcqpSolution> {
    let sol = qcqp::solve(problem, &options)?;
    match sol.status {
        SolveStatus::Infeasible => Err(SheError::InfeasibleSubproblem(what.to_string())),
        SolveStatus::Optimal | SolveStatus::IterationLimit => Ok(sol),
        SolveStatus::NumericalFailure if sol.max_constraint_violation <= 1e-9 => {
            log::debug!("{what}: accepting feasible point after numerical failure (kkt {:e})", sol.kkt_residual);
            Ok(sol)
        }
        SolveStatus::NumericalFailure => Err(SheError::SolverFailure(format!("{what}: numerical failure"))),
    }
}

/// Largest `η` that keeps the rate constraints strictly satisfied at `Y`.
fn eta_hint(wmmse: &WmmseState, channels: &ChannelSet, effective: &CMatrix, config: &SystemConfig) -> f64 {
    let min = (0..config.num_users)
        .map(|u| rate_lower_bound(u, wmmse, channels, effective, config.noise_user[u]))
        .fold(f64::INFINITY, f64::min);
    min - 1e-3 * (1.0 + min.abs())
}

fn trace_row(
    outer: usize,
    inner: usize,
    eta: f64,
    consensus: f64,
    hybrid: &CMatrix,
    channels: &ChannelSet,
    w: &CVector,
    config: &SystemConfig,
    grid: &[f64],
) -> Result<InnerTraceRow> {
    let report = metrics::evaluate_effective(config, channels, hybrid, w, grid)?;
    Ok(InnerTraceRow {
        outer_iter: outer,
        inner_iter: inner,
        eta,
        worst_case_sr: report.secrecy_rate_worst,
        min_radar_sinr: report.min_radar_sinr,
        consensus_residual: consensus,
        max_eue_rate: report.eue_rate_worst.iter().copied().fold(0.0, f64::max),
    })
}

/// Runs the augmented-Lagrangian inner loop from `start`.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop(
    channels: &ChannelSet,
    w: &CVector,
    start: &InnerStart,
    config: &SystemConfig,
    grid: &[f64],
    gamma_radar: f64,
    mode: HbfMode,
    options: &HbfOptions,
    outer_iter: usize,
) -> Result<InnerOutcome> {
    let mut analog = start.analog.clone();
    let mut digital = start.digital.clone();
    let mut hybrid = analog.matrix() * &digital;
    let mut al = AlState {
        effective: start.effective.clone(),
        dual: CMatrix::zeros(start.effective.nrows(), start.effective.ncols()),
        penalty: options.penalty,
        eta: f64::NEG_INFINITY,
        inner_iteration: 0,
    };
    let mut wmmse = wmmse_update(&al.effective, channels, config);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut regularized_gram = false;
    let consensus_tol = options.consensus_tol * config.power_budget.sqrt();

    for inner in 1..=options.max_inner {
        al.inner_iteration = inner;
        let cache = build_mm_cache(&al.effective, channels, w, config, grid, gamma_radar);
        let (problem, layout, _) = build_y_subproblem(&al, &hybrid, &wmmse, &cache, channels, config, mode);
        let hint_eta = eta_hint(&wmmse, channels, &al.effective, config);
        let opts = SolverOptions::with_tol(options.solver_tol, options.solver_max_iter)
            .hint(layout.pack(&al.effective), DVector::from_element(1, hint_eta));
        let sol = solve_checked(&problem, opts, "consensus step")?;
        let previous_eta = al.eta;
        al.effective = layout.unpack(&sol.x, config.num_users + 1);
        al.eta = sol.extras[0];

        let target = &al.effective + &al.dual;
        if let AnalogStage::PhaseShifters { phases } = &analog {
            let out = update_analog_bcd(&target, phases, &digital, options.bcd_sweeps);
            analog = AnalogStage::from_phases(out.phases);
        }
        let (d, reg) = update_digital(&target, &analog);
        regularized_gram |= reg;
        digital = d;
        if !mode.use_i2s {
            digital.column_mut(0).fill(Complex64::from(0.0));
        }
        hybrid = analog.matrix() * &digital;
        wmmse = wmmse_update(&al.effective, channels, config);
        al.dual = update_dual(&al.dual, &al.effective, &hybrid);
        let consensus = (&al.effective - &hybrid).norm();
        trace.push(trace_row(outer_iter, inner, al.eta, consensus, &hybrid, channels, w, config, grid)?);
        al.penalty *= options.penalty_growth;
        if consensus <= consensus_tol && (al.eta - previous_eta).abs() <= options.eta_tol {
            converged = true;
            break;
        }
    }
    Ok(InnerOutcome { analog, digital, al, wmmse, trace, converged, regularized_gram })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishReport {
    pub iterations: usize,
    pub min_rate: f64,
    /// True when the final power is below the budget because scaling up would
    /// break an eavesdropper or radar constraint.
    pub power_slack: bool,
    /// True when no feasible refinement was found and the input was kept.
    pub infeasible: bool,
}

fn constraints_hold(
    effective: &CMatrix,
    channels: &ChannelSet,
    w: &CVector,
    config: &SystemConfig,
    grid: &[f64],
    gamma_radar: f64,
    mode: HbfMode,
) -> Result<bool> {
    let eue = metrics::eue_rates(channels, effective, config.noise_eue);
    let eue_ok = eue
        .iter()
        .zip(&config.eue_rate_caps)
        .all(|(rates, cap)| rates.iter().all(|&r| r <= cap + 1e-9));
    let radar_ok = if mode.radar && gamma_radar > 0.0 {
        metrics::radar_sinr_grid(w, effective, grid, config)?
            .iter()
            .all(|&s| s >= gamma_radar * (1.0 - 1e-9))
    } else {
        true
    };
    Ok(eue_ok && radar_ok)
}

/// Digital-only MM refinement with the analog stage fixed.
///
/// Each step solves the surrogate problem in `D_CI` coordinates, so every
/// accepted iterate satisfies the exact eavesdropper and radar constraints
/// and the minimum rate never decreases. Finally the beamformer is scaled to
/// the full power budget if that keeps every constraint satisfied.
#[allow(clippy::too_many_arguments)]
pub fn polish_digital(
    channels: &ChannelSet,
    w: &CVector,
    analog: &AnalogStage,
    digital: &CMatrix,
    config: &SystemConfig,
    grid: &[f64],
    gamma_radar: f64,
    mode: HbfMode,
    options: &HbfOptions,
) -> Result<(CMatrix, PolishReport)> {
    let a = analog.matrix();
    let mut digital = digital.clone();
    if !mode.use_i2s {
        digital.column_mut(0).fill(Complex64::from(0.0));
    }
    let min_rate = |y: &CMatrix| -> f64 {
        (0..config.num_users)
            .map(|u| metrics::rate(metrics::lue_sinr_effective(u, &channels.lue, y, config.noise_user[u])))
            .fold(f64::INFINITY, f64::min)
    };
    let mut effective = &a * &digital;
    let mut feasible = constraints_hold(&effective, channels, w, config, grid, gamma_radar, mode)?
        && effective.norm_squared() <= config.power_budget * (1.0 + 1e-12);
    let mut best = min_rate(&effective);
    let mut iterations = 0;
    let mut infeasible = false;
    for it in 0..options.polish_iterations {
        let wmmse = wmmse_update(&effective, channels, config);
        let cache = build_mm_cache(&effective, channels, w, config, grid, gamma_radar);
        let layout = Layout::new(mode, config.num_users, config.geometry.num_tx);
        let mut problem = QcqpProblem::new(layout.dimension(), 1);
        problem.objective.extra_lin[0] = -1.0;
        build_constraints(&mut problem, &layout, &wmmse, &cache, channels, config, mode);
        let (dproblem, dlayout) = substitute_analog(&problem, &layout, &a);
        let opts = SolverOptions::with_tol(options.solver_tol, options.solver_max_iter)
            .hint(dlayout.pack(&digital), DVector::from_element(1, eta_hint(&wmmse, channels, &effective, config)));
        let sol = match solve_checked(&dproblem, opts, "digital refinement") {
            Ok(s) => s,
            Err(SheError::InfeasibleSubproblem(_)) if it == 0 => {
                infeasible = true;
                break;
            }
            Err(e) => {
                log::debug!("digital refinement stopped: {e}");
                break;
            }
        };
        let candidate = dlayout.unpack(&sol.x, config.num_users + 1);
        let cand_eff = &a * &candidate;
        let value = min_rate(&cand_eff);
        let ok = constraints_hold(&cand_eff, channels, w, config, grid, gamma_radar, mode)?
            && cand_eff.norm_squared() <= config.power_budget * (1.0 + 1e-12);
        iterations = it + 1;
        if !ok || (feasible && value < best) {
            break;
        }
        let gain = value - best;
        digital = candidate;
        effective = cand_eff;
        best = value;
        let was_feasible = feasible;
        feasible = true;
        if was_feasible && gain.abs() <= options.polish_tol * (1.0 + best.abs()) {
            break;
        }
    }

    let mut power_slack = false;
    let power = effective.norm_squared();
    if power > 0.0 && power < config.power_budget {
        let scaled = &digital * Complex64::from((config.power_budget / power).sqrt());
        let scaled_eff = &a * &scaled;
        if constraints_hold(&scaled_eff, channels, w, config, grid, gamma_radar, mode)? || !feasible {
            digital = scaled;
            effective = scaled_eff;
        } else if power < config.power_budget * (1.0 - 1e-9) {
            power_slack = true;
            log::warn!("power budget left slack ({power:.6} of {}) to keep constraints satisfied", config.power_budget);
        }
    } else if power > config.power_budget {
        digital *= Complex64::from((config.power_budget / power).sqrt());
        effective = &a * &digital;
    }
    Ok((digital, PolishReport { iterations, min_rate: min_rate(&effective), power_slack, infeasible: infeasible || !feasible }))
}
