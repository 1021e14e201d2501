//! Primal-dual interior-point solver for convex quadratically-constrained
//! quadratic programs over complex vectors.
//!
//! Variables are a complex vector `x ∈ ℂⁿ` plus `e` real extras. Every
//! function has the form
//!
//! ```text
//! f(x, s) = Σ_b x_bᴴ Q_b x_b + 2 Re(bᴴ x) + Σ_i d_i s_i² + gᵀ s + c
//! ```
//!
//! where each `Q_b` is a Hermitian PSD block acting on a contiguous range of
//! complex coordinates and `d ≥ 0`. Constraints read `f_i ≤ 0`.
//!
//! The problem is embedded into `ℝ^{2n+e}` with interleaved real and
//! imaginary parts. A phase-1 problem (`min s` s.t. `f_i ≤ s`) provides a
//! strictly feasible start when the hint is not strictly feasible.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Result, SheError};
use crate::{CMatrix, CVector};

/// Hermitian block on complex coordinates `offset..offset + matrix.nrows()`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBlock {
    pub offset: usize,
    pub matrix: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadFunction {
    pub blocks: Vec<QuadBlock>,
    pub lin: CVector,
    /// Diagonal quadratic weights on the real extras.
    pub extra_quad: DVector<f64>,
    pub extra_lin: DVector<f64>,
    pub constant: f64,
}

impl QuadFunction {
    pub fn zero(dimension: usize, extras: usize) -> Self {
        Self {
            blocks: Vec::new(),
            lin: CVector::zeros(dimension),
            extra_quad: DVector::zeros(extras),
            extra_lin: DVector::zeros(extras),
            constant: 0.0,
        }
    }

    pub fn add_block(&mut self, offset: usize, matrix: CMatrix) -> &mut Self {
        self.blocks.push(QuadBlock { offset, matrix });
        self
    }

    /// Adds `v` to the linear coefficient on coordinates `offset..offset + v.len()`.
    pub fn add_lin(&mut self, offset: usize, v: &CVector) -> &mut Self {
        let mut seg = self.lin.rows_mut(offset, v.len());
        seg += v;
        self
    }

    pub fn evaluate(&self, x: &CVector, extras: &DVector<f64>) -> f64 {
        let mut value = self.constant + 2.0 * self.lin.dotc(x).re;
        for b in &self.blocks {
            let xb = x.rows(b.offset, b.matrix.nrows());
            value += xb.dotc(&(&b.matrix * xb)).re;
        }
        for i in 0..extras.len() {
            value += self.extra_quad[i] * extras[i] * extras[i] + self.extra_lin[i] * extras[i];
        }
        value
    }

    fn check_shapes(&self, n: usize, e: usize) -> Result<()> {
        if self.lin.len() != n || self.extra_quad.len() != e || self.extra_lin.len() != e {
            return Err(SheError::InvalidProblem("coefficient length mismatch".into()));
        }
        for b in &self.blocks {
            if b.matrix.nrows() != b.matrix.ncols() || b.offset + b.matrix.nrows() > n {
                return Err(SheError::InvalidProblem("block out of range".into()));
            }
        }
        if self.extra_quad.iter().any(|&d| d < 0.0) {
            return Err(SheError::InvalidProblem("negative extra quadratic weight".into()));
        }
        let finite = self.constant.is_finite()
            && self.lin.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            && self.extra_lin.iter().all(|v| v.is_finite())
            && self.blocks.iter().all(|b| b.matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        if !finite {
            return Err(SheError::InvalidProblem("non-finite coefficient".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub dimension: usize,
    pub extras: usize,
    pub objective: QuadFunction,
    pub constraints: Vec<QuadFunction>,
}

impl QcqpProblem {
    pub fn new(dimension: usize, extras: usize) -> Self {
        Self {
            dimension,
            extras,
            objective: QuadFunction::zero(dimension, extras),
            constraints: Vec::new(),
        }
    }

    pub fn new_function(&self) -> QuadFunction {
        QuadFunction::zero(self.dimension, self.extras)
    }

    /// Symmetrizes every block and repairs tiny negative eigenvalues.
    ///
    /// Eigenvalues in `[−1e-6, −1e-9)` (relative to the block scale) are clipped
    /// to zero; anything more negative is rejected.
    pub fn repair(&mut self) -> Result<()> {
        let (n, e) = (self.dimension, self.extras);
        for f in std::iter::once(&mut self.objective).chain(self.constraints.iter_mut()) {
            f.check_shapes(n, e)?;
            for b in &mut f.blocks {
                repair_block(&mut b.matrix)?;
            }
        }
        Ok(())
    }

    /// Writes a plain-text dump of the problem for offline inspection.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "qcqp dimension {} extras {}", self.dimension, self.extras)?;
        let all = std::iter::once(("objective", &self.objective))
            .chain(self.constraints.iter().map(|c| ("constraint", c)));
        for (i, (kind, f)) in all.enumerate() {
            writeln!(out, "{kind} {i} constant {:e}", f.constant)?;
            write!(out, "lin")?;
            for z in f.lin.iter() {
                write!(out, " {:e} {:e}", z.re, z.im)?;
            }
            writeln!(out)?;
            writeln!(out, "extra_quad {}", join(f.extra_quad.iter()))?;
            writeln!(out, "extra_lin {}", join(f.extra_lin.iter()))?;
            for b in &f.blocks {
                writeln!(out, "block offset {} size {}", b.offset, b.matrix.nrows())?;
                for r in 0..b.matrix.nrows() {
                    let row: Vec<String> = (0..b.matrix.ncols())
                        .map(|c| format!("{:e} {:e}", b.matrix[(r, c)].re, b.matrix[(r, c)].im))
                        .collect();
                    writeln!(out, "{}", row.join(" "))?;
                }
            }
        }
        Ok(())
    }
}

fn join<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

fn repair_block(m: &mut CMatrix) -> Result<()> {
    let scale = 1.0 + m.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let asym = (&*m - m.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if asym > 1e-8 * scale {
        return Err(SheError::InvalidProblem(format!("block not Hermitian (asymmetry {asym:e})")));
    }
    let sym = (&*m + m.adjoint()) * Complex64::from(0.5);
    *m = sym;
    // Complex Cholesky takes complex square roots and never fails on an
    // indefinite input, so the definiteness test runs on the real embedding.
    let mut shifted = embed_hermitian(m);
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += 1e-9 * scale;
    }
    if Cholesky::new(shifted).is_some() {
        return Ok(());
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-6 * scale {
        return Err(SheError::InvalidProblem(format!("block not PSD (min eigenvalue {min:e})")));
    }
    let clipped = eig.eigenvalues.map(|v| Complex64::from(v.max(0.0)));
    *m = &eig.eigenvectors * CMatrix::from_diagonal(&clipped) * eig.eigenvectors.adjoint();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub initial_x: Option<CVector>,
    pub initial_extras: Option<DVector<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, initial_x: None, initial_extras: None }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, ..Self::default() }
    }

    pub fn hint(mut self, x: CVector, extras: DVector<f64>) -> Self {
        self.initial_x = Some(x);
        self.initial_extras = Some(extras);
        self
    }
}

/// One damped Newton step of the interior-point method.
///
/// `merit_change` is the change of the barrier objective `t·f₀ − Σ log(−f_i)`
/// at the step's barrier parameter; the line search makes it negative.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub phase: u8,
    pub iteration: usize,
    pub objective: f64,
    pub gap: f64,
    pub barrier_parameter: f64,
    pub newton_decrement: f64,
    pub merit_change: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub x: CVector,
    pub extras: DVector<f64>,
    /// Lagrange multipliers, one per constraint.
    pub multipliers: DVector<f64>,
    pub status: SolveStatus,
    pub objective_value: f64,
    pub max_constraint_violation: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
}

impl QcqpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub fn embed_vector(x: &CVector, extras: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut z = DVector::zeros(2 * n + extras.len());
    for (j, v) in x.iter().enumerate() {
        z[2 * j] = v.re;
        z[2 * j + 1] = v.im;
    }
    z.rows_mut(2 * n, extras.len()).copy_from(extras);
    z
}

pub fn recover_vector(z: &DVector<f64>, n: usize) -> (CVector, DVector<f64>) {
    let x = CVector::from_fn(n, |j, _| Complex64::new(z[2 * j], z[2 * j + 1]));
    let extras = z.rows(2 * n, z.len() - 2 * n).into_owned();
    (x, extras)
}

fn embed_hermitian(m: &CMatrix) -> DMatrix<f64> {
    let b = m.nrows();
    let mut r = DMatrix::zeros(2 * b, 2 * b);
    for j in 0..b {
        for k in 0..b {
            let h = m[(j, k)];
            r[(2 * j, 2 * k)] = h.re;
            r[(2 * j, 2 * k + 1)] = -h.im;
            r[(2 * j + 1, 2 * k)] = h.im;
            r[(2 * j + 1, 2 * k + 1)] = h.re;
        }
    }
    r
}

/// Real-embedded quadratic `zᵀPz + qᵀz + r`, with the gradient support cached.
#[derive(Debug, Clone)]
struct RealFunction {
    blocks: Vec<(usize, DMatrix<f64>)>,
    diag: Vec<(usize, f64)>,
    q: DVector<f64>,
    r: f64,
    support: Vec<usize>,
}

impl RealFunction {
    fn from_complex(f: &QuadFunction, n: usize, extra_cols: usize) -> Self {
        let e = f.extra_lin.len();
        let d = 2 * n + extra_cols;
        let mut q = DVector::zeros(d);
        for (j, v) in f.lin.iter().enumerate() {
            q[2 * j] = 2.0 * v.re;
            q[2 * j + 1] = 2.0 * v.im;
        }
        for i in 0..e {
            q[2 * n + i] = f.extra_lin[i];
        }
        let blocks = f.blocks.iter().map(|b| (2 * b.offset, embed_hermitian(&b.matrix))).collect();
        let diag = (0..e)
            .filter(|&i| f.extra_quad[i] != 0.0)
            .map(|i| (2 * n + i, f.extra_quad[i]))
            .collect();
        let mut rf = Self { blocks, diag, q, r: f.constant, support: Vec::new() };
        rf.refresh_support();
        rf
    }

    fn refresh_support(&mut self) {
        let d = self.q.len();
        let mut mark = vec![false; d];
        for (off, p) in &self.blocks {
            for i in 0..p.nrows() {
                mark[off + i] = true;
            }
        }
        for &(i, _) in &self.diag {
            mark[i] = true;
        }
        for i in 0..d {
            if self.q[i] != 0.0 {
                mark[i] = true;
            }
        }
        self.support = (0..d).filter(|&i| mark[i]).collect();
    }

    fn scale(&self) -> f64 {
        let mut s = self.r.abs().max(self.q.amax());
        for (_, p) in &self.blocks {
            s = s.max(p.amax());
        }
        for &(_, v) in &self.diag {
            s = s.max(v);
        }
        if s > 0.0 { s } else { 1.0 }
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|(o, p)| (*o, p * factor)).collect(),
            diag: self.diag.iter().map(|&(i, v)| (i, v * factor)).collect(),
            q: &self.q * factor,
            r: self.r * factor,
            support: self.support.clone(),
        }
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        let mut v = self.r + self.q.dot(z);
        for (off, p) in &self.blocks {
            let zb = z.rows(*off, p.nrows());
            v += zb.dot(&(p * zb));
        }
        for &(i, w) in &self.diag {
            v += w * z[i] * z[i];
        }
        v
    }

    /// Value and gradient (dense, length `d`).
    fn value_grad(&self, z: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        grad.copy_from(&self.q);
        let mut v = self.r + self.q.dot(z);
        for (off, p) in &self.blocks {
            let zb = z.rows(*off, p.nrows());
            let pz = p * zb;
            v += zb.dot(&pz);
            let mut g = grad.rows_mut(*off, p.nrows());
            g.axpy(2.0, &pz, 1.0);
        }
        for &(i, w) in &self.diag {
            v += w * z[i] * z[i];
            grad[i] += 2.0 * w * z[i];
        }
        v
    }

    /// `dᵀPd`, the curvature of the function along `d`.
    fn quad_form(&self, d: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        for (off, p) in &self.blocks {
            let db = d.rows(*off, p.nrows());
            v += db.dot(&(p * db));
        }
        for &(i, w) in &self.diag {
            v += w * d[i] * d[i];
        }
        v
    }

    fn add_hessian(&self, h: &mut DMatrix<f64>, weight: f64) {
        for (off, p) in &self.blocks {
            let scale = 2.0 * weight;
            let mut view = h.view_mut((*off, *off), (p.nrows(), p.ncols()));
            view.zip_apply(p, |a, b| *a += scale * b);
        }
        for &(i, w) in &self.diag {
            h[(i, i)] += 2.0 * weight * w;
        }
    }

    fn with_extra_column(&self, coefficient: f64) -> Self {
        let d = self.q.len();
        let mut q = DVector::zeros(d + 1);
        q.rows_mut(0, d).copy_from(&self.q);
        q[d] = coefficient;
        let mut f = Self { blocks: self.blocks.clone(), diag: self.diag.clone(), q, r: self.r, support: Vec::new() };
        f.refresh_support();
        f
    }
}

struct RealProblem {
    dim: usize,
    objective: RealFunction,
    constraints: Vec<RealFunction>,
}

struct IpmOutcome {
    z: DVector<f64>,
    lambda: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
}

const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;
const MU: f64 = 10.0;
/// Centering stops once half the squared Newton decrement drops below this,
/// or below the round-off level of the barrier objective at large `t`.
const CENTERING_TOL: f64 = 1e-10;
const ROUNDOFF_SCALE: f64 = 1e-13;
/// An `Optimal` status is only reported when the KKT residual is below this.
pub const KKT_ACCEPT: f64 = 1e-7;

fn solve_newton(mut h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let d = h.nrows();
    let scale = (0..d).fold(0.0f64, |a, i| a.max(h[(i, i)].abs())).max(1e-300);
    let mut delta = 0.0;
    for _ in 0..12 {
        if let Some(ch) = Cholesky::new(h.clone()) {
            let x = ch.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        let next = if delta == 0.0 { 1e-13 * scale } else { delta * 100.0 };
        for i in 0..d {
            h[(i, i)] += next - delta;
        }
        delta = next;
    }
    None
}

/// Starting barrier parameter.
///
/// The least-squares fit of the dual residual is accurate near a centered
/// point, but far from the optimum it overstates `t` badly and centering then
/// crawls along the boundary. Capping it by `m / (1 + |f₀|)` keeps the implied
/// gap at least of the order of the objective itself.
fn initial_barrier_parameter(f0: f64, g0: &DVector<f64>, grads: &[DVector<f64>], f: &[f64]) -> f64 {
    let mut b = DVector::zeros(g0.len());
    for (g, &fi) in grads.iter().zip(f) {
        b.axpy(1.0 / -fi, g, 1.0);
    }
    let denom = g0.norm_squared();
    let fit = if denom > 0.0 { -g0.dot(&b) / denom } else { 1.0 };
    let cap = f.len() as f64 / (1.0 + f0.abs());
    if fit.is_finite() && fit > 0.0 { fit.min(cap) } else { cap }
}

/// Log-barrier interior-point method from a strictly feasible `z`.
///
/// Each centering step minimizes `t·f₀ − Σ log(−f_i)` by damped Newton. The
/// line search evaluates the exact quadratic expansion of every function
/// along the step, which keeps the barrier decrease accurate for large `t`.
fn barrier_method(
    problem: &RealProblem,
    mut z: DVector<f64>,
    tol: f64,
    max_iter: usize,
    phase: u8,
    log: &mut Vec<IterationLog>,
    early_stop: &dyn Fn(&DVector<f64>, &[f64]) -> bool,
) -> IpmOutcome {
    let d = problem.dim;
    let m = problem.constraints.len();
    let mut g0 = DVector::zeros(d);
    let mut grads: Vec<DVector<f64>> = vec![DVector::zeros(d); m];
    let mut f = vec![0.0; m];
    let eval = |z: &DVector<f64>, grads: &mut Vec<DVector<f64>>, f: &mut Vec<f64>, g0: &mut DVector<f64>| -> f64 {
        for (i, c) in problem.constraints.iter().enumerate() {
            f[i] = c.value_grad(z, &mut grads[i]);
        }
        problem.objective.value_grad(z, g0)
    };
    let mut f0 = eval(&z, &mut grads, &mut f, &mut g0);
    let mut t = initial_barrier_parameter(f0, &g0, &grads, &f);
    let mut steps = 0;
    let lambda_of = |t: f64, f: &[f64]| DVector::from_fn(f.len(), |i, _| 1.0 / (-t * f[i]));

    let mut last_step: DVector<f64>;
    loop {
        // Centering at the current barrier parameter.
        loop {
            if f.iter().any(|v| !v.is_finite()) || !f0.is_finite() {
                return IpmOutcome { lambda: lambda_of(t, &f), z, status: SolveStatus::NumericalFailure, iterations: steps };
            }
            if early_stop(&z, &f) {
                return IpmOutcome { lambda: lambda_of(t, &f), z, status: SolveStatus::Optimal, iterations: steps };
            }
            if steps >= max_iter {
                return IpmOutcome { lambda: lambda_of(t, &f), z, status: SolveStatus::IterationLimit, iterations: steps };
            }
            let mut h = DMatrix::zeros(d, d);
            problem.objective.add_hessian(&mut h, t);
            let mut grad = &g0 * t;
            // Columns g_i / (−f_i); their Gram matrix is the barrier's rank-m term.
            let mut scaled_grads = DMatrix::zeros(d, m);
            for (i, c) in problem.constraints.iter().enumerate() {
                let inv = 1.0 / -f[i];
                c.add_hessian(&mut h, inv);
                scaled_grads.column_mut(i).axpy(inv, &grads[i], 0.0);
                grad.axpy(inv, &grads[i], 1.0);
            }
            h.gemm(1.0, &scaled_grads, &scaled_grads.transpose(), 1.0);
            let Some(dz) = solve_newton(h, &(-&grad)) else {
                return IpmOutcome { lambda: lambda_of(t, &f), z, status: SolveStatus::NumericalFailure, iterations: steps };
            };
            let decrement = -grad.dot(&dz);
            let threshold = CENTERING_TOL.max(ROUNDOFF_SCALE * t * (1.0 + f0.abs()));
            if !(decrement > 2.0 * threshold) {
                last_step = dz;
                break;
            }
            let a0 = g0.dot(&dz);
            let q0 = problem.objective.quad_form(&dz);
            let lin: Vec<f64> = grads.iter().map(|g| g.dot(&dz)).collect();
            let quad: Vec<f64> = problem.constraints.iter().map(|c| c.quad_form(&dz)).collect();
            let change = |s: f64| -> Option<f64> {
                let mut delta = t * (s * a0 + s * s * q0);
                for i in 0..m {
                    let fi = f[i] + s * lin[i] + s * s * quad[i];
                    if !(fi < 0.0) {
                        return None;
                    }
                    delta -= (fi / f[i]).ln();
                }
                Some(delta)
            };
            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                if let Some(delta) = change(s) {
                    if delta <= -ALPHA * s * decrement {
                        accepted = Some(delta);
                        break;
                    }
                }
                s *= BETA;
            }
            let Some(delta) = accepted else {
                // The decrease is below floating-point resolution; treat as centered.
                last_step = dz;
                break;
            };
            z.axpy(s, &dz, 1.0);
            f0 = eval(&z, &mut grads, &mut f, &mut g0);
            steps += 1;
            log.push(IterationLog {
                phase,
                iteration: steps,
                objective: f0,
                gap: m as f64 / t,
                barrier_parameter: t,
                newton_decrement: decrement,
                merit_change: delta,
                step: s,
            });
        }
        if m as f64 / t <= tol * (1.0 + f0.abs()) {
            // First-order multiplier correction along the last Newton step. It
            // removes the O(1/f_i²) part of the barrier residual, which
            // dominates the Lagrangian residual near active constraints.
            let lambda = DVector::from_fn(m, |i, _| {
                let u = -f[i];
                (1.0 + grads[i].dot(&last_step) / u).max(0.0) / (t * u)
            });
            // Centering stops at a round-off level that grows with t; the
            // pending Newton step removes most of the remaining stationarity
            // error, and the corrected multipliers already describe that point.
            let stepped = &z + &last_step;
            if problem.constraints.iter().all(|c| c.value(&stepped) < 0.0) {
                z = stepped;
            }
            return IpmOutcome { lambda, z, status: SolveStatus::Optimal, iterations: steps };
        }
        t *= MU;
    }
}

/// Unconstrained case: minimize a convex quadratic by Newton's method.
fn unconstrained(problem: &RealProblem, z: DVector<f64>, tol: f64, log: &mut Vec<IterationLog>) -> IpmOutcome {
    let d = problem.dim;
    let mut z = z;
    let mut g = DVector::zeros(d);
    for iter in 0..3 {
        let f0 = problem.objective.value_grad(&z, &mut g);
        if g.amax() / (1.0 + g.amax()) <= tol * 1e-3 {
            return IpmOutcome { z, lambda: DVector::zeros(0), status: SolveStatus::Optimal, iterations: iter };
        }
        let mut h = DMatrix::zeros(d, d);
        problem.objective.add_hessian(&mut h, 1.0);
        let Some(dz) = Cholesky::new(h).map(|c| c.solve(&(-&g))) else {
            return IpmOutcome { z, lambda: DVector::zeros(0), status: SolveStatus::NumericalFailure, iterations: iter };
        };
        let decrement = -g.dot(&dz);
        z += dz;
        let merit_change = problem.objective.value(&z) - f0;
        log.push(IterationLog {
            phase: 2,
            iteration: iter + 1,
            objective: f0 + merit_change,
            gap: 0.0,
            barrier_parameter: 1.0,
            newton_decrement: decrement,
            merit_change,
            step: 1.0,
        });
    }
    let _ = problem.objective.value_grad(&z, &mut g);
    let status = if g.amax() <= tol * (1.0 + g.amax()) { SolveStatus::Optimal } else { SolveStatus::NumericalFailure };
    IpmOutcome { z, lambda: DVector::zeros(0), status, iterations: 3 }
}

/// Solves a convex QCQP. Returns `Err` only for malformed problems; solver
/// outcomes (including infeasibility) are reported through `status`.
pub fn solve(problem: &QcqpProblem, options: &SolverOptions) -> Result<QcqpSolution> {
    if !(options.tol > 0.0) {
        return Err(SheError::InvalidProblem("tolerance must be positive".into()));
    }
    let mut problem = problem.clone();
    problem.repair()?;
    let n = problem.dimension;
    let e = problem.extras;
    let d = 2 * n + e;

    let objective_raw = RealFunction::from_complex(&problem.objective, n, e);
    let constraints_raw: Vec<RealFunction> =
        problem.constraints.iter().map(|c| RealFunction::from_complex(c, n, e)).collect();
    let obj_scale = objective_raw.scale();
    let con_scales: Vec<f64> = constraints_raw.iter().map(|c| c.scale()).collect();
    let scaled = RealProblem {
        dim: d,
        objective: objective_raw.scaled(1.0 / obj_scale),
        constraints: constraints_raw.iter().zip(&con_scales).map(|(c, s)| c.scaled(1.0 / s)).collect(),
    };

    let x0 = options.initial_x.clone().unwrap_or_else(|| CVector::zeros(n));
    let s0 = options.initial_extras.clone().unwrap_or_else(|| DVector::zeros(e));
    if x0.len() != n || s0.len() != e {
        return Err(SheError::InvalidProblem("initial point has wrong dimension".into()));
    }
    let mut z = embed_vector(&x0, &s0);
    let mut log = Vec::new();
    let mut iterations = 0;

    let outcome = if scaled.constraints.is_empty() {
        unconstrained(&scaled, z, options.tol, &mut log)
    } else {
        let worst = scaled.constraints.iter().map(|c| c.value(&z)).fold(f64::NEG_INFINITY, f64::max);
        if worst > -1e-9 {
            match phase_one(&scaled, &z, worst, options, &mut log) {
                Some((zf, it)) => {
                    z = zf;
                    iterations += it;
                }
                None => {
                    return Ok(finish(&problem, &constraints_raw, z, DVector::zeros(scaled.constraints.len()), SolveStatus::Infeasible, iterations, log));
                }
            }
        }
        barrier_method(&scaled, z, options.tol, options.max_iter, 2, &mut log, &|_, _| false)
    };
    iterations += outcome.iterations;
    let unscale = |lambda: &DVector<f64>| DVector::from_fn(lambda.len(), |i, _| lambda[i] * obj_scale / con_scales[i]);
    let mut sol = finish(&problem, &constraints_raw, outcome.z, unscale(&outcome.lambda), outcome.status, iterations, log);
    // A gap-optimal point whose multiplier estimate misses the KKT threshold is
    // re-centered from where it stopped with a tighter gap.
    let mut tol = options.tol;
    for _ in 0..KKT_RETRIES {
        let gap_optimal = sol.status == SolveStatus::NumericalFailure && outcome.status == SolveStatus::Optimal;
        if !gap_optimal || iterations >= options.max_iter {
            break;
        }
        tol *= 1e-2;
        let z = embed_vector(&sol.x, &sol.extras);
        let mut log = std::mem::take(&mut sol.log);
        let retry = barrier_method(&scaled, z, tol, options.max_iter - iterations, 2, &mut log, &|_, _| false);
        iterations += retry.iterations;
        let next = finish(&problem, &constraints_raw, retry.z, unscale(&retry.lambda), retry.status, iterations, log);
        if next.kkt_residual < sol.kkt_residual || next.status == SolveStatus::Optimal {
            sol = next;
        } else {
            sol.log = next.log;
            sol.iterations = iterations;
        }
    }
    Ok(sol)
}

/// Re-centering attempts for gap-optimal points that fail the KKT check.
const KKT_RETRIES: usize = 2;

/// Squared radius of the phase-one search ball, relative to `1 + ‖z₀‖²`.
const PHASE_ONE_RADIUS: f64 = 1e4;

fn phase_one(
    problem: &RealProblem,
    z: &DVector<f64>,
    worst: f64,
    options: &SolverOptions,
    log: &mut Vec<IterationLog>,
) -> Option<(DVector<f64>, usize)> {
    let d = problem.dim;
    let mut constraints: Vec<RealFunction> = problem.constraints.iter().map(|c| c.with_extra_column(-1.0)).collect();
    // s >= -1 keeps the auxiliary problem bounded.
    let mut floor = RealFunction { blocks: vec![], diag: vec![], q: DVector::zeros(d + 1), r: -1.0, support: vec![] };
    floor.q[d] = -1.0;
    floor.refresh_support();
    constraints.push(floor);
    // A wide ball around the start bounds directions along which the barrier
    // would otherwise decrease forever (e.g. an epigraph variable going to −∞).
    let radius2 = PHASE_ONE_RADIUS * (1.0 + z.norm_squared());
    let mut ball = RealFunction {
        blocks: vec![],
        diag: (0..d).map(|i| (i, 1.0)).collect(),
        q: DVector::zeros(d + 1),
        r: z.norm_squared() - radius2,
        support: vec![],
    };
    ball.q.rows_mut(0, d).copy_from(&(z * -2.0));
    ball.refresh_support();
    constraints.push(ball);
    let mut objective = RealFunction { blocks: vec![], diag: vec![], q: DVector::zeros(d + 1), r: 0.0, support: vec![] };
    objective.q[d] = 1.0;
    objective.refresh_support();
    let aux = RealProblem { dim: d + 1, objective, constraints };

    let mut start = DVector::zeros(d + 1);
    start.rows_mut(0, d).copy_from(z);
    start[d] = worst.max(0.0) + 1.0;
    let m = problem.constraints.len();
    let stop = |zz: &DVector<f64>, f: &[f64]| -> bool {
        // f[i] = g_i(z) - s, so g_i(z) = f[i] + s.
        let s = zz[d];
        (0..m).map(|i| f[i] + s).fold(f64::NEG_INFINITY, f64::max) <= -1e-4
    };
    let out = barrier_method(&aux, start, options.tol, options.max_iter, 1, log, &stop);
    let zf = out.z.rows(0, d).into_owned();
    let worst_after = problem.constraints.iter().map(|c| c.value(&zf)).fold(f64::NEG_INFINITY, f64::max);
    if worst_after < -1e-11 {
        Some((zf, out.iterations))
    } else {
        None
    }
}

fn finish(
    problem: &QcqpProblem,
    _raw: &[RealFunction],
    z: DVector<f64>,
    multipliers: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
    log: Vec<IterationLog>,
) -> QcqpSolution {
    let (x, extras) = recover_vector(&z, problem.dimension);
    let objective_value = problem.objective.evaluate(&x, &extras);
    let max_constraint_violation = problem
        .constraints
        .iter()
        .map(|c| c.evaluate(&x, &extras).max(0.0))
        .fold(0.0, f64::max);
    let mut sol = QcqpSolution {
        x,
        extras,
        multipliers,
        status,
        objective_value,
        max_constraint_violation,
        kkt_residual: f64::INFINITY,
        iterations,
        log,
    };
    if sol.multipliers.len() == problem.constraints.len() {
        sol.kkt_residual = kkt_residual(problem, &sol);
    }
    if sol.status == SolveStatus::Optimal && !(sol.kkt_residual <= KKT_ACCEPT) {
        sol.status = SolveStatus::NumericalFailure;
    }
    sol
}

/// KKT residual `max(stationarity, primal violation, complementarity)`.
///
/// Stationarity is the ∞-norm of the Lagrangian gradient relative to
/// `1 + ‖∇f₀‖∞`. Each constraint violation is divided by the constraint's
/// largest coefficient magnitude (at least 1). Complementarity is `Σ|λ_i f_i|`
/// relative to `1 + |f₀|`.
pub fn kkt_residual(problem: &QcqpProblem, solution: &QcqpSolution) -> f64 {
    let n = problem.dimension;
    let e = problem.extras;
    let z = embed_vector(&solution.x, &solution.extras);
    let d = z.len();
    let obj = RealFunction::from_complex(&problem.objective, n, e);
    let mut g0 = DVector::zeros(d);
    let f0 = obj.value_grad(&z, &mut g0);
    let mut lag = g0.clone();
    let mut g = DVector::zeros(d);
    let mut violation = 0.0f64;
    let mut comp = 0.0;
    for (i, c) in problem.constraints.iter().enumerate() {
        let rf = RealFunction::from_complex(c, n, e);
        let fi = rf.value_grad(&z, &mut g);
        let li = solution.multipliers.get(i).copied().unwrap_or(0.0);
        lag.axpy(li, &g, 1.0);
        violation = violation.max(fi.max(0.0) / rf.scale().max(1.0));
        comp += (li * fi).abs();
        if li < 0.0 {
            violation = violation.max(-li);
        }
    }
    let stat = lag.amax() / (1.0 + g0.amax());
    stat.max(violation).max(comp / (1.0 + f0.abs()))
}
