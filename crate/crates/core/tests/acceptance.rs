//! Acceptance suite. Every criterion is checked against an oracle written
//! here, independently of the library code path it validates, and reported
//! on its own line. The process exits non-zero if any criterion fails.

use std::f64::consts::{LN_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use she_core::array_model::{complex_gaussian, realize_channels, seeded_rng, SystemConfig};
use she_core::driver::{run_she, run_variant, RunOptions, RunResult, RunStatus, Variant};
use she_core::hbf::{self, HbfMmCache};
use she_core::metrics::{self, matched_receive_filter, AnalogStage};
use she_core::qcqp::{self, QcqpProblem, SolveStatus, SolverOptions};
use she_core::receive_filter::{self, optimize_receive_filter, ReceiveFilterState};
use she_core::{db_to_linear, CMatrix, CVector};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

fn random_vector<R: Rng>(len: usize, rng: &mut R) -> CVector {
    CVector::from_fn(len, |_, _| complex_gaussian(rng))
}

fn scaled_to_power(y: CMatrix, power: f64) -> CMatrix {
    let s = (power / y.norm_squared()).sqrt();
    y * c(s)
}

/// Uniform linear array response, entry by entry.
fn steer(theta_deg: f64, len: usize, spacing: f64) -> CVector {
    let s = theta_deg.to_radians().sin();
    CVector::from_fn(len, |m, _| {
        let phase = 2.0 * PI * spacing * m as f64 * s;
        Complex64::new(phase.cos(), phase.sin())
    })
}

/// `Σ_m conj(a_m) b_m` as an explicit loop.
fn inner(a: &CVector, b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn column(y: &CMatrix, j: usize) -> Vec<Complex64> {
    (0..y.nrows()).map(|i| y[(i, j)]).collect()
}

fn user_sinr_oracle(u: usize, h: &CVector, y: &CMatrix, noise: f64) -> f64 {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for v in 0..y.ncols() {
        let g = inner(h, &column(y, v)).norm_sqr();
        if v == u + 1 {
            signal = g;
        } else {
            interference += g;
        }
    }
    signal / (interference + noise)
}

fn eue_rate_oracle(u: usize, h: &CVector, y: &CMatrix, noise: f64) -> f64 {
    let signal = inner(h, &column(y, u + 1)).norm_sqr();
    let jam = inner(h, &column(y, 0)).norm_sqr();
    (1.0 + signal / (jam + noise)).log2()
}

/// Radar SINR summed term by term over clutter patches and beamformer columns.
fn radar_sinr_oracle(w: &CVector, y: &CMatrix, theta: f64, config: &SystemConfig) -> f64 {
    let g = &config.geometry;
    let energy = |angle: f64| -> f64 {
        let ar = steer(angle, g.num_rx, g.spacing_ratio);
        let at = steer(angle, g.num_tx, g.spacing_ratio);
        let gain = inner(w, ar.as_slice()).norm_sqr();
        (0..y.ncols()).map(|v| gain * inner(&at, &column(y, v)).norm_sqr()).sum()
    };
    let signal = config.target_amplitude.norm_sqr() * energy(theta);
    let mut den = config.noise_radar * w.norm_squared();
    for (angle, amp) in config.clutter_angles.iter().zip(&config.clutter_amplitudes) {
        den += amp.norm_sqr() * energy(*angle);
    }
    signal / den
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn pooled(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / 2.0).sqrt()
}

// ---------------------------------------------------------------------------
// 1. WMMSE identities
// ---------------------------------------------------------------------------

fn wmmse_identities() -> Check {
    let mut config = SystemConfig::desk();
    let mut rng = seeded_rng(101);
    let (mut worst_mse, mut worst_rate) = (0.0f64, 0.0f64);
    for instance in 0..100 {
        config.power_budget = 10f64.powf(rng.random_range(-1.0..1.0));
        let channels = realize_channels(&config, 5000 + instance);
        let y = scaled_to_power(random_matrix(16, 3, &mut rng), config.power_budget);
        let state = hbf::wmmse_update(&y, &channels, &config);
        for u in 0..2 {
            let h = channels.user(u);
            let sinr = user_sinr_oracle(u, &h, &y, config.noise_user[u]);
            let eps = metrics::mse(u, state.kappa[u], &channels, &y, config.noise_user[u]);
            worst_mse = worst_mse.max((eps - 1.0 / (1.0 + sinr)).abs());
            let omega = state.omega[u];
            ensure((omega - (1.0 + sinr)).abs() <= 1e-9 * omega, || format!("weight {omega} vs 1 + SINR {}", 1.0 + sinr))?;
            let bound = omega.ln() / LN_2 - omega * eps + 1.0;
            worst_rate = worst_rate.max((bound - (1.0 + sinr).log2()).abs());
        }
    }
    ensure(worst_mse <= 1e-9, || format!("max |ε − 1/(1+SINR)| = {worst_mse:e}"))?;
    ensure(worst_rate <= 1e-9, || format!("max |log₂ω − ωε + 1 − Rate| = {worst_rate:e}"))?;
    Ok(format!("100 instances, max MSE error {worst_mse:.1e}, max rate error {worst_rate:.1e}"))
}

// ---------------------------------------------------------------------------
// 2. MM and quadratic-transform surrogates
// ---------------------------------------------------------------------------

fn ratio_recovery(config: &SystemConfig, rng: &mut impl Rng) -> Result<f64, String> {
    let grid = config.angle_grid();
    let y = scaled_to_power(random_matrix(config.geometry.num_tx, config.num_users + 1, rng), config.power_budget);
    let w = random_vector(config.geometry.num_rx, rng);
    let l = receive_filter::update_auxiliary_l(&w, &y, config, &grid);
    let cache = receive_filter::build_mm_cache(&w, &y, config, &grid);
    let r = receive_filter::interference_covariance(&y, config);
    let state = ReceiveFilterState { w: w.clone(), l, c: 0.0, iteration: 0 };
    let values = receive_filter::transformed_values(&state, &cache, &r, config.target_amplitude.norm());
    let mut worst = 0.0f64;
    for (k, &theta) in grid.iter().enumerate() {
        let sinr = radar_sinr_oracle(&w, &y, theta, config);
        worst = worst.max((values[k] - sinr).abs() / sinr);

        // The numerator minorizer 2Re(λᴴw') − κ̄ is tight at w and below κ(w') elsewhere.
        let ar = steer(theta, config.geometry.num_rx, config.geometry.spacing_ratio);
        let at = steer(theta, config.geometry.num_tx, config.geometry.spacing_ratio);
        let s = (0..y.ncols()).map(|v| inner(&at, &column(&y, v)).norm_sqr()).sum::<f64>();
        let kappa = |x: &CVector| s * inner(x, ar.as_slice()).norm_sqr();
        let minor = |x: &CVector| 2.0 * cache.lambda[k].dotc(x).re - cache.kappa_bar[k];
        if (minor(&w) - kappa(&w)).abs() > 1e-9 * kappa(&w) {
            return Err(format!("receive minorizer not tight at angle {theta}"));
        }
        for _ in 0..50 {
            let probe = random_vector(config.geometry.num_rx, rng);
            if minor(&probe) > kappa(&probe) + 1e-9 * kappa(&probe).max(1.0) {
                return Err(format!("receive minorizer exceeds the numerator at angle {theta}"));
            }
        }
    }
    Ok(worst)
}

/// `Y^t` with slack in every constraint plus the matching cache.
fn slack_instance(config: &mut SystemConfig, seed: u64) -> (CMatrix, HbfMmCache, she_core::array_model::ChannelSet) {
    let mut rng = seeded_rng(seed);
    let channels = realize_channels(config, seed);
    let mut y = scaled_to_power(random_matrix(16, 3, &mut rng), config.power_budget);
    // A stronger I2S column makes the eavesdropper constraints slack.
    let boosted = y.column(0) * c(3.0);
    y.set_column(0, &boosted);
    let w = matched_receive_filter(config.target_angle, config);
    let grid = config.angle_grid();
    let mut ratio = 0.0f64;
    for u in 0..config.num_users {
        for h in &channels.eue_samples {
            let s = inner(h, &column(&y, u + 1)).norm_sqr();
            let j = inner(h, &column(&y, 0)).norm_sqr();
            ratio = ratio.max(s / (j + config.noise_eue));
        }
    }
    config.set_uniform_rate_cap((1.0 + 2.0 * ratio).log2());
    let min_sinr = grid.iter().map(|&t| radar_sinr_oracle(&w, &y, t, config)).fold(f64::INFINITY, f64::min);
    let cache = hbf::build_mm_cache(&y, &channels, &w, config, &grid, 0.5 * min_sinr);
    (y, cache, channels)
}

fn mm_surrogates() -> Check {
    let mut rng = seeded_rng(202);
    let mut worst_ratio = 0.0f64;
    for _ in 0..10 {
        worst_ratio = worst_ratio.max(ratio_recovery(&SystemConfig::desk(), &mut rng)?);
    }
    ensure(worst_ratio <= 1e-10, || format!("ratio recovery error {worst_ratio:e}"))?;

    let amp2 = SystemConfig::desk().target_amplitude.norm_sqr();
    let (mut worst_tight, mut worst_gap, mut below) = (0.0f64, 0.0f64, 0usize);
    let (mut feasible, mut implied) = (0usize, 0usize);
    for instance in 0..10 {
        let mut config = SystemConfig::desk();
        let (y_t, cache, _) = slack_instance(&mut config, 300 + instance);
        let users = config.num_users;
        let samples = cache.eue.len();
        let angles = cache.radar_dirs.len();
        let eval = |y: &CMatrix| {
            let mut exact = Vec::new();
            let mut lin = Vec::new();
            let mut gap = Vec::new();
            for u in 0..users {
                for n in 0..samples {
                    exact.push(hbf::eue_constraint_exact(&cache, u, n, y, config.noise_eue));
                    lin.push(hbf::eue_constraint_linearized(&cache, u, n, y));
                    let d = &y.column(0) - &y_t.column(0);
                    gap.push(cache.gamma_eue[u] * inner(&cache.eue[n], d.as_slice()).norm_sqr());
                }
            }
            for k in 0..angles {
                exact.push(hbf::radar_constraint_exact(&cache, k, y, &config));
                lin.push(hbf::radar_constraint_linearized(&cache, k, y));
                let d = y - &y_t;
                let proj: f64 = (0..3).map(|v| inner(&cache.radar_dirs[k], &column(&d, v)).norm_sqr()).sum();
                gap.push(amp2 / cache.gamma_radar * proj);
            }
            (exact, lin, gap)
        };
        let (exact, lin, _) = eval(&y_t);
        for (e, l) in exact.iter().zip(&lin) {
            worst_tight = worst_tight.max((e - l).abs() / (1.0 + e.abs()));
        }
        ensure(exact.iter().all(|&e| e < 0.0), || "expansion point is not strictly feasible".into())?;
        for probe in 0..1000 {
            let scale = 10f64.powf(-3.0 + 3.5 * probe as f64 / 1000.0);
            let y = &y_t + random_matrix(16, 3, &mut rng) * c(scale * config.power_budget.sqrt() / 4.0);
            let (exact, lin, gap) = eval(&y);
            let mut lin_ok = true;
            for i in 0..exact.len() {
                if lin[i] < exact[i] - 1e-9 * (1.0 + exact[i].abs()) {
                    below += 1;
                }
                worst_gap = worst_gap.max(((lin[i] - exact[i]) - gap[i]).abs() / (1.0 + exact[i].abs() + gap[i]));
                lin_ok &= lin[i] <= 0.0;
            }
            if lin_ok {
                feasible += 1;
                if exact.iter().all(|&e| e <= 0.0) {
                    implied += 1;
                }
            }
        }
    }
    ensure(worst_tight <= 1e-9, || format!("tightness error {worst_tight:e}"))?;
    ensure(below == 0, || format!("{below} probe evaluations where the surrogate is below the exact constraint"))?;
    ensure(worst_gap <= 1e-9, || format!("surrogate gap differs from its quadratic form by {worst_gap:e}"))?;
    ensure(feasible >= 1000, || format!("only {feasible} surrogate-feasible probes"))?;
    ensure(implied == feasible, || format!("{} surrogate-feasible probes violate the exact constraints", feasible - implied))?;
    Ok(format!(
        "ratio error {worst_ratio:.1e}, tightness {worst_tight:.1e}, 10000 probes with 0 bound violations, {feasible} feasible probes all exactly feasible"
    ))
}

// ---------------------------------------------------------------------------
// 3. Receive filter against the eigenvector maximum
// ---------------------------------------------------------------------------

/// Largest generalized eigenvalue of `(N, R)` via `R = LLᴴ`, and the
/// equivalent closed form `|ς₀|² s a_rᴴ R⁻¹ a_r`.
fn eigen_maximum(y: &CMatrix, config: &SystemConfig, theta: f64) -> (f64, f64) {
    let g = &config.geometry;
    let energy = |angle: f64| -> f64 {
        let at = steer(angle, g.num_tx, g.spacing_ratio);
        (0..y.ncols()).map(|v| inner(&at, &column(y, v)).norm_sqr()).sum()
    };
    let mut r = CMatrix::identity(g.num_rx, g.num_rx) * c(config.noise_radar);
    for (angle, amp) in config.clutter_angles.iter().zip(&config.clutter_amplitudes) {
        let ar = steer(*angle, g.num_rx, g.spacing_ratio);
        r += &ar * ar.adjoint() * c(amp.norm_sqr() * energy(*angle));
    }
    let ar = steer(theta, g.num_rx, g.spacing_ratio);
    let n = &ar * ar.adjoint() * c(config.target_amplitude.norm_sqr() * energy(theta));
    let l = r.clone().cholesky().expect("covariance is positive definite").l();
    let li = l.try_inverse().expect("invertible factor");
    let m = &li * n * li.adjoint();
    let eig = SymmetricEigen::new((&m + m.adjoint()) * c(0.5));
    let closed = config.target_amplitude.norm_sqr() * energy(theta) * ar.dotc(&r.lu().solve(&ar).unwrap()).re;
    (eig.eigenvalues.max(), closed)
}

fn receive_filter_oracle() -> Check {
    let mut worst = 0.0f64;
    let mut count = 0;
    for clutter in [0usize, 2] {
        for num_rx in [4usize, 8] {
            for seed in 0..20u64 {
                let mut config = SystemConfig::desk();
                config.geometry.num_rx = num_rx;
                config.angle_uncertainty = 0.0;
                config.clutter_angles.truncate(clutter);
                config.clutter_amplitudes.truncate(clutter);
                let mut rng = seeded_rng(400 + seed);
                let y = scaled_to_power(random_matrix(16, 3, &mut rng), config.power_budget);
                let grid = config.angle_grid();
                let w0 = matched_receive_filter(grid[0], &config);
                let (state, _) = optimize_receive_filter(&y, &w0, &config, &grid, 1e-9, 60)
                    .map_err(|e| format!("I={clutter} M_r={num_rx} seed {seed}: {e}"))?;
                let achieved = radar_sinr_oracle(&state.w, &y, grid[0], &config);
                let (lambda, closed) = eigen_maximum(&y, &config, grid[0]);
                ensure((lambda - closed).abs() <= 1e-8 * closed, || format!("eigen oracle disagrees: {lambda} vs {closed}"))?;
                let shortfall = (lambda - achieved) / lambda;
                ensure(shortfall <= 1e-3, || {
                    format!("I={clutter} M_r={num_rx} seed {seed}: SINR {achieved} vs maximum {lambda}")
                })?;
                worst = worst.max(shortfall);
                count += 1;
            }
        }
    }
    Ok(format!("{count} cases, worst relative shortfall {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. QCQP solver
// ---------------------------------------------------------------------------

/// Trust-region subproblem `min xᴴQx + 2Re(bᴴx)` s.t. `‖x‖ ≤ Δ` by
/// eigendecomposition and bisection on the secular equation.
fn trust_region_oracle(q: &CMatrix, b: &CVector, radius: f64) -> CVector {
    let eig = SymmetricEigen::new(q.clone());
    let coeff = eig.eigenvectors.adjoint() * b;
    let solve = |shift: f64| -> CVector {
        let scaled = CVector::from_fn(b.len(), |i, _| coeff[i] / c(eig.eigenvalues[i] + shift));
        -(&eig.eigenvectors * scaled)
    };
    if eig.eigenvalues.min() > 1e-12 {
        let x = solve(0.0);
        if x.norm() <= radius {
            return x;
        }
    }
    let (mut lo, mut hi) = (0.0, b.norm() / radius);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if solve(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve(0.5 * (lo + hi))
}

fn ball_constraint(problem: &QcqpProblem, n: usize, radius2: f64) -> qcqp::QuadFunction {
    let mut f = problem.new_function();
    f.add_block(0, CMatrix::identity(n, n));
    f.constant = -radius2;
    f
}

fn qcqp_solver() -> Check {
    let mut rng = seeded_rng(505);
    let mut worst_kkt = 0.0f64;
    let mut optimal = 0;
    let mut record = |sol: &qcqp::QcqpSolution, label: &str| -> Result<(), String> {
        ensure(sol.status == SolveStatus::Optimal, || format!("{label}: status {:?}, KKT residual {:e}", sol.status, sol.kkt_residual))?;
        ensure(sol.kkt_residual <= 1e-7, || format!("{label}: KKT residual {:e}", sol.kkt_residual))?;
        worst_kkt = worst_kkt.max(sol.kkt_residual);
        optimal += 1;
        Ok(())
    };
    let mut worst_closed = 0.0f64;
    for n in 1..=6 {
        let p = random_vector(n, &mut rng);
        let p = &p * c(2.0 / p.norm());
        let mut prob = QcqpProblem::new(n, 0);
        prob.objective.add_block(0, CMatrix::identity(n, n));
        prob.objective.lin = -&p;
        prob.objective.constant = 4.0;
        prob.constraints.push(ball_constraint(&prob, n, 1.0));
        let sol = qcqp::solve(&prob, &SolverOptions::default()).map_err(|e| e.to_string())?;
        record(&sol, &format!("ball projection n={n}"))?;
        worst_closed = worst_closed.max((&sol.x - &p * c(0.5)).norm()).max((sol.objective_value - 1.0).abs());

        let b = random_vector(n, &mut rng);
        let mut prob = QcqpProblem::new(n, 0);
        prob.objective.lin = b.clone();
        prob.constraints.push(ball_constraint(&prob, n, 1.0));
        let sol = qcqp::solve(&prob, &SolverOptions::default()).map_err(|e| e.to_string())?;
        record(&sol, &format!("linear over ball n={n}"))?;
        let expect = -&b / c(b.norm());
        worst_closed = worst_closed.max((&sol.x - expect).norm()).max((sol.objective_value + 2.0 * b.norm()).abs());
    }
    ensure(worst_closed <= 1e-8, || format!("closed-form error {worst_closed:e}"))?;

    let mut worst_tr = 0.0f64;
    for instance in 0..50 {
        let n = rng.random_range(2..=8);
        let rank = rng.random_range(1..=n);
        let g = random_matrix(n, rank, &mut rng);
        let q = &g * g.adjoint();
        let b = random_vector(n, &mut rng) * c(rng.random_range(0.2..3.0));
        let radius = rng.random_range(0.3..2.0);
        let mut prob = QcqpProblem::new(n, 0);
        prob.objective.add_block(0, q.clone());
        prob.objective.lin = b.clone();
        prob.constraints.push(ball_constraint(&prob, n, radius * radius));
        let sol = qcqp::solve(&prob, &SolverOptions::default()).map_err(|e| e.to_string())?;
        record(&sol, &format!("trust region {instance}"))?;
        let x = trust_region_oracle(&q, &b, radius);
        worst_tr = worst_tr.max((&sol.x - &x).norm() / x.norm().max(1.0));
    }
    ensure(worst_tr <= 1e-6, || format!("trust-region error {worst_tr:e}"))?;
    Ok(format!(
        "closed forms {worst_closed:.1e}, 50 trust-region instances {worst_tr:.1e}, {optimal} optimal returns with KKT ≤ {worst_kkt:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 5. Element-wise analog update
// ---------------------------------------------------------------------------

fn objective(t: &CMatrix, phases: &DMatrix<f64>, d: &CMatrix) -> f64 {
    let a = phases.map(|p| Complex64::from_polar(1.0, p));
    (t - a * d).norm_squared()
}

fn angle_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d).to_degrees()
}

fn analog_bcd() -> Check {
    let mut rng = seeded_rng(606);
    let mut worst_deg = 0.0f64;
    for _ in 0..20 {
        let t = random_matrix(2, 2, &mut rng);
        let d = random_matrix(2, 2, &mut rng);
        let start = DMatrix::from_fn(2, 2, |_, _| rng.random_range(0.0..2.0 * PI));
        let out = hbf::update_analog_bcd(&t, &start, &d, 1);
        // Brute force: each element in sweep order over a 0.1° grid, others held.
        let mut brute = start.clone();
        for i in 0..2 {
            for j in 0..2 {
                let mut best = (f64::INFINITY, 0.0);
                for step in 0..3600 {
                    let phi = (step as f64 * 0.1).to_radians();
                    brute[(i, j)] = phi;
                    let value = objective(&t, &brute, &d);
                    if value < best.0 {
                        best = (value, phi);
                    }
                }
                brute[(i, j)] = best.1;
            }
        }
        for (a, b) in out.phases.iter().zip(brute.iter()) {
            worst_deg = worst_deg.max(angle_distance_deg(*a, *b));
        }
    }
    ensure(worst_deg <= 0.2, || format!("phase-grid mismatch {worst_deg:.3}°"))?;

    let mut non_unit = 0usize;
    let mut updates = 0usize;
    for _ in 0..20 {
        let t = random_matrix(16, 3, &mut rng);
        let d = random_matrix(4, 3, &mut rng);
        let start = DMatrix::from_fn(16, 4, |_, _| rng.random_range(0.0..2.0 * PI));
        let out = hbf::update_analog_bcd(&t, &start, &d, 2);
        ensure((out.objective_trace[0] - objective(&t, &start, &d)).abs() <= 1e-10 * out.objective_trace[0], || {
            "trace does not start at the initial objective".into()
        })?;
        for pair in out.objective_trace.windows(2) {
            ensure(pair[1] <= pair[0] * (1.0 + 1e-12), || format!("objective rose from {} to {}", pair[0], pair[1]))?;
            updates += 1;
        }
        let last = *out.objective_trace.last().unwrap();
        let direct = objective(&t, &out.phases, &d);
        ensure((last - direct).abs() <= 1e-9 * direct, || format!("tracked objective {last} vs direct {direct}"))?;
        let a = AnalogStage::from_phases(out.phases.clone()).matrix();
        non_unit += a.iter().filter(|z| z.norm() != 1.0).count();
    }
    ensure(non_unit == 0, || format!("{non_unit} analog entries with modulus != 1"))?;
    Ok(format!("2×2 grid match within {worst_deg:.3}°, {updates} monotone element updates, all moduli exactly 1"))
}

// ---------------------------------------------------------------------------
// 6. End-to-end desk run
// ---------------------------------------------------------------------------

fn post_hoc(result: &RunResult, config: &SystemConfig) -> Result<String, String> {
    let channels = realize_channels(config, result.seed);
    let y = result.beamformers.effective();
    let mut max_excess = f64::NEG_INFINITY;
    for u in 0..config.num_users {
        for h in &channels.eue_samples {
            max_excess = max_excess.max(eue_rate_oracle(u, h, &y, config.noise_eue) - config.eue_rate_caps[u]);
        }
    }
    ensure(max_excess <= 1e-4, || format!("eavesdropping rate exceeds its cap by {max_excess:e}"))?;
    let gamma = result.achieved_gamma_radar;
    let grid = config.angle_grid();
    let min_radar = grid.iter().map(|&t| radar_sinr_oracle(&result.filter.w, &y, t, config)).fold(f64::INFINITY, f64::min);
    ensure(min_radar >= gamma - 1e-6, || format!("radar SINR {min_radar} below {gamma}"))?;
    let power = y.norm_squared();
    let p = config.power_budget;
    ensure(power >= p - 1e-6 && power <= p + 1e-12, || format!("transmit power {power} outside [P − 1e-6, P]"))?;
    ensure(result.consensus_residual <= 1e-3, || format!("consensus residual {:e}", result.consensus_residual))?;
    if let AnalogStage::PhaseShifters { .. } = result.beamformers.analog {
        let a = result.beamformers.analog.matrix();
        ensure(a.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-15), || "analog entry off the unit circle".into())?;
    }
    Ok(format!(
        "max EUE excess {max_excess:.1e}, min radar SINR {:.2} dB vs {:.2} dB, power {power:.9}",
        10.0 * min_radar.log10(),
        10.0 * gamma.log10()
    ))
}

fn end_to_end() -> Check {
    let config = SystemConfig::desk();
    ensure(config.angle_grid().len() == 5 && config.num_samples == 10, || "desk preset does not have K = 5, N = 10".into())?;
    let options = RunOptions { max_outer: 100, ..RunOptions::default() };
    let started = Instant::now();
    let result = run_she(&config, 1, &options).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(result.status == RunStatus::Converged, || format!("status {}", result.status))?;
    ensure(elapsed <= Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    ensure((result.achieved_gamma_radar - db_to_linear(10.0)).abs() < 1e-9, || "radar target was relaxed".into())?;
    let detail = post_hoc(&result, &config)?;
    Ok(format!(
        "converged in {} outer iterations, {:.1} s, SR {:.4}; {detail}",
        result.trace.len(),
        elapsed.as_secs_f64(),
        result.secrecy_rate()
    ))
}

// ---------------------------------------------------------------------------
// 7. Convergence traces
// ---------------------------------------------------------------------------

fn convergence_traces() -> Check {
    let pairs = [(10.0, 0.5), (20.0, 0.2)];
    let mut parts = Vec::new();
    for (gamma_db, cap) in pairs {
        let mut config = SystemConfig::desk();
        config.radar_sinr_target = db_to_linear(gamma_db);
        config.set_uniform_rate_cap(cap);
        let options = RunOptions { max_outer: 100, ..RunOptions::default() };
        let result = run_she(&config, 1, &options).map_err(|e| e.to_string())?;
        let sr: Vec<f64> = result.trace.iter().map(|r| r.worst_case_sr).collect();
        for (i, pair) in sr.windows(2).enumerate() {
            ensure(pair[1] >= pair[0] - 1e-3, || format!("γ={gamma_db} dB ξ={cap}: SR fell from {} to {} at iteration {}", pair[0], pair[1], i + 1))?;
        }
        ensure(result.status == RunStatus::Converged, || format!("γ={gamma_db} dB ξ={cap}: status {}", result.status))?;
        let window = options.plateau_window;
        let tail = &sr[sr.len().saturating_sub(window + 1)..];
        let flat = tail.windows(2).all(|p| (p[1] - p[0]).abs() <= options.outer_tol * p[0].abs().max(p[1].abs()));
        ensure(sr.len() > window && flat, || format!("γ={gamma_db} dB ξ={cap}: trace does not end on a plateau"))?;
        ensure(sr[sr.len() - 1] >= sr[0] - 1e-3, || format!("γ={gamma_db} dB ξ={cap}: final SR below the first"))?;
        parts.push(format!("(γ={gamma_db} dB, ξ={cap}) {:.4}→{:.4} in {} its", sr[0], sr[sr.len() - 1], sr.len()));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 8 and 9. Monte Carlo trends
// ---------------------------------------------------------------------------

const SEEDS: u64 = 10;

fn secrecy_rates(jobs: Vec<(SystemConfig, Variant, u64)>) -> Result<Vec<f64>, String> {
    let options = RunOptions::default();
    jobs.into_par_iter()
        .map(|(config, variant, seed)| {
            run_variant(&config, variant, seed, &options)
                .map(|r| r.secrecy_rate())
                .map_err(|e| format!("{variant} seed {seed}: {e}"))
        })
        .collect()
}

fn architecture_trends() -> Check {
    let gammas = [10.0, 20.0, 30.0];
    let variants = [Variant::FdBf, Variant::She, Variant::ConvHbf];
    let mut jobs = Vec::new();
    for &gamma in &gammas {
        let mut config = SystemConfig::desk();
        config.radar_sinr_target = db_to_linear(gamma);
        for &variant in &variants {
            for seed in 1..=SEEDS {
                jobs.push((config.clone(), variant, seed));
            }
        }
    }
    let rates = secrecy_rates(jobs)?;
    let stats: Vec<Vec<(f64, f64)>> = rates
        .chunks(SEEDS as usize)
        .collect::<Vec<_>>()
        .chunks(variants.len())
        .map(|per_gamma| per_gamma.iter().map(|r| mean_std(r)).collect())
        .collect();
    let mut summary = Vec::new();
    for (g, row) in stats.iter().enumerate() {
        let (fd, she, conv) = (row[0], row[1], row[2]);
        ensure(fd.0 >= she.0 - pooled(fd.1, she.1), || format!("γ={} dB: FD-BF {:.4} < SHE {:.4}", gammas[g], fd.0, she.0))?;
        ensure(she.0 >= conv.0 - pooled(she.1, conv.1), || format!("γ={} dB: SHE {:.4} < ConvHBF {:.4}", gammas[g], she.0, conv.0))?;
        summary.push(format!("{} dB: {:.3}/{:.3}/{:.3}", gammas[g], fd.0, she.0, conv.0));
    }
    for (v, variant) in variants.iter().enumerate() {
        for g in 1..gammas.len() {
            let (prev, next) = (stats[g - 1][v], stats[g][v]);
            ensure(next.0 <= prev.0 + pooled(prev.1, next.1), || {
                format!("{variant}: mean SR rose from {:.4} to {:.4} between {} and {} dB", prev.0, next.0, gammas[g - 1], gammas[g])
            })?;
        }
    }
    Ok(format!("{SEEDS} seeds, mean SR FD-BF/SHE/ConvHBF at {}", summary.join(", ")))
}

fn uncertainty_trends() -> Check {
    let gammas = [10.0, 20.0];
    let settings = [(0.0, 0.0), (0.01, 5.0)];
    let mut jobs = Vec::new();
    for &gamma in &gammas {
        for &(var, width) in &settings {
            let mut config = SystemConfig::desk();
            config.radar_sinr_target = db_to_linear(gamma);
            config.csi_error_var = var;
            config.angle_uncertainty = width;
            for seed in 1..=SEEDS {
                jobs.push((config.clone(), Variant::She, seed));
            }
        }
    }
    let rates = secrecy_rates(jobs)?;
    let stats: Vec<(f64, f64)> = rates.chunks(SEEDS as usize).map(mean_std).collect();
    let mut summary = Vec::new();
    for (g, pair) in stats.chunks(2).enumerate() {
        let (perfect, imperfect) = (pair[0], pair[1]);
        ensure(imperfect.0 <= perfect.0 + pooled(perfect.1, imperfect.1), || {
            format!("γ={} dB: imperfect {:.4} above perfect {:.4}", gammas[g], imperfect.0, perfect.0)
        })?;
        summary.push(format!("{} dB: perfect {:.3}, uncertain {:.3}", gammas[g], perfect.0, imperfect.0));
    }
    Ok(format!("{SEEDS} seeds, {}", summary.join("; ")))
}

// ---------------------------------------------------------------------------
// 10. Detection probability
// ---------------------------------------------------------------------------

/// `e^{−z} I₀(z)` from `(1/π)∫₀^π e^{z(cos t − 1)} dt`; the trapezoid rule is
/// spectrally accurate for this periodic integrand.
fn bessel_i0_scaled(z: f64) -> f64 {
    let n = 4096;
    let h = PI / n as f64;
    let mut sum = 0.5 * (1.0 + (-2.0 * z).exp());
    for i in 1..n {
        sum += (z * ((i as f64 * h).cos() - 1.0)).exp();
    }
    sum * h / PI
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// `Q₁(a, b) = ∫_b^∞ x e^{−(x² + a²)/2} I₀(ax) dx`, integrated over the
/// shorter side of `b` to keep the result accurate near 0 and near 1.
fn marcum_oracle(a: f64, b: f64) -> f64 {
    let density = |x: f64| x * (-0.5 * (x - a) * (x - a)).exp() * bessel_i0_scaled(a * x);
    let upper = a + 40.0;
    if b >= a {
        adaptive_simpson(&density, b, upper.max(b + 40.0), 1e-14)
    } else {
        1.0 - adaptive_simpson(&density, 0.0, b, 1e-14)
    }
}

fn detection_probability() -> Check {
    let mut cases = vec![(10.0, 1.0), (0.0, 1e-4)];
    for sinr_db in [-5.0, 0.0, 5.0, 10.0, 13.0, 16.0] {
        for pfa in [1e-2, 1e-4, 1e-6] {
            cases.push((db_to_linear(sinr_db), pfa));
        }
    }
    ensure(cases.len() == 20, || "grid must have 20 points".into())?;
    let mut worst = 0.0f64;
    for &(sinr, pfa) in &cases {
        let got = metrics::detection_probability(sinr, pfa);
        let want = if pfa == 1.0 {
            1.0
        } else if sinr == 0.0 {
            pfa
        } else {
            marcum_oracle((2.0 * sinr).sqrt(), (-2.0 * pfa.ln()).sqrt())
        };
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-8, || format!("P_d({sinr}, {pfa}) = {got}, oracle {want}"))?;
    }
    Ok(format!("20 grid points, max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("WMMSE identities", wmmse_identities),
        ("MM and quadratic-transform surrogates", mm_surrogates),
        ("receive filter vs eigenvector maximum", receive_filter_oracle),
        ("QCQP solver oracles", qcqp_solver),
        ("element-wise analog update", analog_bcd),
        ("end-to-end desk run", end_to_end),
        ("convergence traces", convergence_traces),
        ("architecture trends over gamma", architecture_trends),
        ("uncertainty trends", uncertainty_trends),
        ("detection probability", detection_probability),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({secs:.1} s): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1} s): {reason}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
