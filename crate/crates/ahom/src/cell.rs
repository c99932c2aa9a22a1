//! The discrete cell problem: for a loading b and cell size R, minimize the
//! grid average of f(x, b + w(x)) over RQ-periodic, A-free, mean-zero
//! fields w, then take the best value over a sweep of R.
//!
//! The feasible set is a linear subspace with the cheap orthogonal projector
//! of the projection module, so the solver iterates in full field space and
//! projects the gradient: each step moves along D = P grad with an Armijo
//! backtracking line search (pointwise evaluations only, since w - t D stays
//! feasible for every t). Kernels with kinks run a Huber continuation
//! schedule delta_0 -> delta_min; the reported value is always the raw
//! (unsmoothed) objective at the final iterate, and an explicit
//! zero-competitor guard keeps it at or below the grid average of f(x, b).
//!
//! Convex x-independent integrands finish at iteration zero from the w = 0
//! start: their gradient field is constant, and constants project to zero.

use crate::error::{Error, Result};
use crate::fields::{apply_a, Grid, PeriodicField};
use crate::integrand::Integrand;
use crate::operator::{nullspace_basis, Operator};
use crate::projection::{build_plan, ProjectorPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Points per chunk of the parallel reductions. Fixed so chunk boundaries,
/// and therefore floating-point summation order, never depend on the thread
/// count.
const CHUNK: usize = 2048;

/// Armijo sufficient-decrease parameter.
const ARMIJO_C1: f64 = 1e-4;

/// Tunables of the cell solver. `Default` gives the documented defaults;
/// all fields are plain data so configs can override any subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Number of starts: w = 0 plus n_starts - 1 seeded random feasible
    /// fields (low-frequency spectra, L2 norm |b| + 1).
    pub n_starts: usize,
    /// Gradient-iteration budget per continuation stage.
    pub max_iters_per_stage: usize,
    /// Value agreement expected of independent runs; consumed by callers
    /// (property checks, budgets), not by the iteration itself.
    pub value_tol: f64,
    /// Early stop when the objective decreases by less than this relative
    /// amount in one iteration.
    pub rel_change_tol: f64,
    /// First Huber parameter is delta0_scale * (1 + |b|).
    pub delta0_scale: f64,
    /// Last Huber parameter of the continuation schedule.
    pub delta_min: f64,
    /// Feasibility: require |A w| <= feas_tol_a * (1 + |w|).
    pub feas_tol_a: f64,
    /// Feasibility: require every component mean of w below this.
    pub feas_tol_mean: f64,
    /// Rank tolerance handed to the projector build.
    pub rank_tol: f64,
    /// Random starts keep spectral modes with |k|_inf <= max_mode.
    pub max_mode: i64,
    /// Seed for the random starts; fixed seed => reproducible solve.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            n_starts: 5,
            max_iters_per_stage: 2000,
            value_tol: 1e-3,
            rel_change_tol: 1e-9,
            delta0_scale: 0.1,
            delta_min: 1e-4,
            feas_tol_a: 1e-8,
            feas_tol_mean: 1e-10,
            rank_tol: 1e-10,
            max_mode: 4,
            seed: 0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::InvalidArgument("n_starts must be >= 1".into()));
        }
        if self.max_iters_per_stage == 0 {
            return Err(Error::InvalidArgument("max_iters_per_stage must be >= 1".into()));
        }
        for (v, name) in [
            (self.value_tol, "value_tol"),
            (self.rel_change_tol, "rel_change_tol"),
            (self.delta0_scale, "delta0_scale"),
            (self.delta_min, "delta_min"),
            (self.feas_tol_a, "feas_tol_a"),
            (self.feas_tol_mean, "feas_tol_mean"),
            (self.rank_tol, "rank_tol"),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "solver option {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.max_mode < 1 {
            return Err(Error::InvalidArgument("max_mode must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solver telemetry for one cell solve.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Accepted gradient iterations of the winning start, all stages.
    pub iterations: usize,
    /// L2 norm of the last accepted update of the winning start.
    pub final_step_norm: f64,
    /// Max - min of the per-start final values.
    pub multistart_spread: f64,
    /// |A w*| in the cell-averaged L2 norm.
    pub residual_a: f64,
    /// Largest component mean of w* in absolute value.
    pub residual_mean: f64,
    /// Final raw value of every start, in start order.
    pub per_start_values: Vec<f64>,
}

/// Outcome of one (b, R) cell solve.
#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Discrete average of f(x, b + w*) — the raw objective, never the
    /// smoothed surrogate.
    pub value: f64,
    pub minimizer: PeriodicField,
    pub r: usize,
    pub grid: Grid,
    pub diagnostics: Diagnostics,
}

/// f_hom estimate for one loading b: the per-R profile and its minimum.
#[derive(Debug, Clone)]
pub struct HomDensityResult {
    pub b: Vec<f64>,
    pub per_r: BTreeMap<usize, CellSolution>,
    /// R values whose solve failed, with the error text; the sweep keeps
    /// going and reports the minimum over the successes.
    pub failures: BTreeMap<usize, String>,
    /// min over per_r of the cell values.
    pub estimate: f64,
}

/// One A-quasiconvexity test: a loading b and a single-mode A-free field
/// w(y) = 2 amp cos(2 pi xi.y) v with S(xi) v = 0.
#[derive(Debug, Clone)]
pub struct AqcTest {
    pub b: Vec<f64>,
    pub frequency: Vec<i64>,
    pub amplitude: f64,
    /// avg_y fhom(b + w(y)) - fhom(b); nonnegative up to `budget` when fhom
    /// is A-quasiconvex.
    pub margin: f64,
    /// Combined solver + quadrature allowance for this test.
    pub budget: f64,
}

#[derive(Debug, Clone)]
pub struct AqcReport {
    pub tests: Vec<AqcTest>,
    pub worst_margin: f64,
    /// Number of tests with margin < -budget.
    pub violations: usize,
}

/// Grid average of f(x, b + w(x) + t*dir(x)) with Huber parameter `delta`
/// (0 = raw). Chunked, order-fixed reduction: deterministic at any thread
/// count.
fn objective(
    f: &dyn Integrand,
    grid: Grid,
    b: &[f64],
    w: &[f64],
    dir: Option<(&[f64], f64)>,
    delta: f64,
) -> f64 {
    let d = b.len();
    let npts = grid.num_points();
    let n_chunks = npts.div_ceil(CHUNK);
    let sums: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * CHUNK;
            let hi = (lo + CHUNK).min(npts);
            let mut x = vec![0.0; grid.dim()];
            let mut zeta = vec![0.0; d];
            let mut acc = 0.0;
            for p in lo..hi {
                grid.point_coords(p, &mut x);
                let wp = &w[p * d..(p + 1) * d];
                match dir {
                    Some((dv, t)) => {
                        let dp = &dv[p * d..(p + 1) * d];
                        for i in 0..d {
                            zeta[i] = b[i] + wp[i] + t * dp[i];
                        }
                    }
                    None => {
                        for i in 0..d {
                            zeta[i] = b[i] + wp[i];
                        }
                    }
                }
                acc += f.eval_smoothed(&x, &zeta, delta);
            }
            acc
        })
        .collect();
    sums.iter().sum::<f64>() / npts as f64
}

/// Writes grad_smoothed(x_p, b + w_p, delta) into `g`.
fn gradient(f: &dyn Integrand, grid: Grid, b: &[f64], w: &[f64], delta: f64, g: &mut [f64]) {
    let d = b.len();
    g.par_chunks_mut(CHUNK * d).enumerate().for_each(|(ci, gchunk)| {
        let lo = ci * CHUNK;
        let mut x = vec![0.0; grid.dim()];
        let mut zeta = vec![0.0; d];
        for (j, gp) in gchunk.chunks_exact_mut(d).enumerate() {
            let p = lo + j;
            grid.point_coords(p, &mut x);
            for i in 0..d {
                zeta[i] = b[i] + w[p * d + i];
            }
            f.grad_smoothed(&x, &zeta, delta, gp);
        }
    });
}

fn continuation_schedule(f: &dyn Integrand, b_norm: f64, opts: &SolverOptions) -> Vec<f64> {
    if !f.needs_smoothing() {
        return vec![0.0];
    }
    let mut schedule = Vec::new();
    let mut delta = opts.delta0_scale * (1.0 + b_norm);
    while delta > opts.delta_min {
        schedule.push(delta);
        delta *= 0.5;
    }
    schedule.push(opts.delta_min);
    schedule
}

/// Seeded feasible random start: white noise low-passed to |k|_inf <=
/// max_mode (Nyquist bins dropped), projected, then rescaled to target_l2.
fn random_start(
    plan: &ProjectorPlan,
    d: usize,
    max_mode: i64,
    target_l2: f64,
    seed: u64,
) -> Result<PeriodicField> {
    let grid = plan.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = PeriodicField::zeros(grid, d);
    for v in raw.values_mut() {
        *v = rng.gen::<f64>() * 2.0 - 1.0;
    }
    let mut spec = raw.forward_spectrum();
    let nyq = (grid.points_per_axis() / 2) as i64;
    let mut kvec = vec![0i64; grid.dim()];
    for p in 0..grid.num_points() {
        grid.freq_components(p, &mut kvec);
        let keep = kvec.iter().any(|&k| k != 0)
            && kvec.iter().all(|&k| k.abs() <= max_mode && k.abs() < nyq);
        if !keep {
            for c in 0..d {
                spec.data_mut()[p * d + c] = num_complex::Complex64::new(0.0, 0.0);
            }
        }
    }
    let mut w = plan.project(&spec.inverse())?;
    let norm = w.l2_norm();
    if norm > 1e-12 {
        let s = target_l2 / norm;
        for v in w.values_mut() {
            *v *= s;
        }
    }
    Ok(w)
}

/// Projected-gradient descent with Armijo backtracking through the
/// continuation schedule. Returns the final iterate, the number of accepted
/// iterations, and the L2 norm of the last accepted update.
fn minimize(
    f: &dyn Integrand,
    plan: &ProjectorPlan,
    b: &[f64],
    mut w: PeriodicField,
    schedule: &[f64],
    opts: &SolverOptions,
) -> Result<(PeriodicField, usize, f64)> {
    let grid = plan.grid();
    let d = b.len();
    let mut g_field = PeriodicField::zeros(grid, d);
    let mut iters = 0usize;
    let mut last_step_norm = 0.0;
    let mut step = 1.0 / f.lipschitz().max(1e-12);
    for &delta in schedule {
        let mut e = objective(f, grid, b, w.values(), None, delta);
        if !e.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "objective non-finite at continuation stage delta = {delta}"
            )));
        }
        for _ in 0..opts.max_iters_per_stage {
            gradient(f, grid, b, w.values(), delta, g_field.values_mut());
            let dir = plan.project(&g_field)?;
            // <grad, dir> = |dir|^2 because the projector is self-adjoint
            // and idempotent in the mean inner product
            let g2 = dir.values().iter().map(|v| v * v).sum::<f64>() / grid.num_points() as f64;
            let gnorm = g2.sqrt();
            if gnorm <= 1e-12 * (1.0 + e.abs()) {
                break; // stationary within the feasible subspace
            }
            let mut t = step;
            let mut accepted = None;
            for _ in 0..60 {
                let e_try = objective(f, grid, b, w.values(), Some((dir.values(), -t)), delta);
                if e_try <= e - ARMIJO_C1 * t * g2 {
                    accepted = Some(e_try);
                    break;
                }
                t *= 0.5;
            }
            let Some(e_new) = accepted else {
                break; // no decrease along the projected gradient: stage done
            };
            for (wi, di) in w.values_mut().iter_mut().zip(dir.values()) {
                *wi -= t * di;
            }
            iters += 1;
            last_step_norm = t * gnorm;
            let decrease = e - e_new;
            e = e_new;
            step = (t * 2.0).min(1e12);
            if decrease <= opts.rel_change_tol * (1.0 + e.abs()) {
                break;
            }
        }
    }
    Ok((w, iters, last_step_norm))
}

/// Solves one cell problem with a prebuilt projector plan (reuse the plan
/// when sweeping many loadings on one grid).
pub fn solve_cell_with_plan(
    f: &dyn Integrand,
    plan: &ProjectorPlan,
    b: &[f64],
    opts: &SolverOptions,
) -> Result<CellSolution> {
    opts.validate()?;
    let op = plan.operator().clone();
    let grid = plan.grid();
    let d = op.field_dim();
    if f.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "integrand dimension {} vs operator d = {}",
            f.dim(),
            d
        )));
    }
    if b.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "loading has {} components, operator d = {}",
            b.len(),
            d
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("loading b must be finite".into()));
    }
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let schedule = continuation_schedule(f, b_norm, opts);

    let mut per_start_values = Vec::with_capacity(opts.n_starts);
    let mut best: Option<(f64, PeriodicField, usize, f64)> = None;
    for start in 0..opts.n_starts {
        let w0 = if start == 0 {
            PeriodicField::zeros(grid, d)
        } else {
            let seed = opts
                .seed
                .wrapping_add((start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            random_start(plan, d, opts.max_mode, b_norm + 1.0, seed)?
        };
        let (w, iters, last_step) = minimize(f, plan, b, w0, &schedule, opts)?;
        let w = plan.project(&w)?; // clear accumulated roundoff drift
        let value = objective(f, grid, b, w.values(), None, 0.0);
        if !value.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "start {start} produced a non-finite value"
            )));
        }
        per_start_values.push(value);
        if best.as_ref().map_or(true, |(bv, ..)| value < *bv) {
            best = Some((value, w, iters, last_step));
        }
    }
    let (mut value, mut minimizer, mut iterations, mut final_step_norm) =
        best.expect("n_starts >= 1");

    // exact upper bound by the zero competitor
    let zeros = PeriodicField::zeros(grid, d);
    let zero_value = objective(f, grid, b, zeros.values(), None, 0.0);
    if zero_value < value {
        value = zero_value;
        minimizer = zeros;
        iterations = 0;
        final_step_norm = 0.0;
    }

    let residual_a = apply_a(&op, &minimizer)?.l2_norm();
    let residual_mean =
        minimizer.mean().iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    if residual_a > opts.feas_tol_a * (1.0 + minimizer.l2_norm())
        || residual_mean > opts.feas_tol_mean
    {
        return Err(Error::NumericalFailure(format!(
            "minimizer violates feasibility: |A w| = {residual_a}, |mean w| = {residual_mean}"
        )));
    }
    let spread = per_start_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - per_start_values.iter().cloned().fold(f64::INFINITY, f64::min);

    Ok(CellSolution {
        value,
        minimizer,
        r: grid.period(),
        grid,
        diagnostics: Diagnostics {
            iterations,
            final_step_norm,
            multistart_spread: spread,
            residual_a,
            residual_mean,
            per_start_values,
        },
    })
}

/// Solves the cell problem for loading `b` on cell RQ. `grid` must carry
/// period R; the projector plan is built here (see `solve_cell_with_plan`
/// to amortize that build over many loadings).
pub fn solve_cell(
    f: &dyn Integrand,
    op: &Operator,
    b: &[f64],
    r: usize,
    grid: Grid,
    opts: &SolverOptions,
) -> Result<CellSolution> {
    if grid.period() != r {
        return Err(Error::InvalidArgument(format!(
            "grid period {} does not match requested cell size R = {r}",
            grid.period()
        )));
    }
    let plan = build_plan(op, grid, opts.rank_tol)?;
    solve_cell_with_plan(f, &plan, b, opts)
}

/// Sweeps the cell problem over `r_list` at fixed per-unit-cell resolution
/// (points per axis = points_per_unit * R, so the grid spacing never depends
/// on R) and reports the per-R profile with its minimum. Individual R
/// failures are recorded and skipped; only a fully failed sweep is an error.
pub fn f_hom(
    f: &dyn Integrand,
    op: &Operator,
    b: &[f64],
    r_list: &[usize],
    points_per_unit: usize,
    opts: &SolverOptions,
) -> Result<HomDensityResult> {
    if r_list.is_empty() {
        return Err(Error::InvalidArgument("r_list must be nonempty".into()));
    }
    if r_list.windows(2).any(|w| w[0] >= w[1]) || r_list[0] == 0 {
        return Err(Error::InvalidArgument(
            "r_list must be strictly ascending positive integers".into(),
        ));
    }
    if points_per_unit < 2 || points_per_unit % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "points_per_unit must be even and >= 2, got {points_per_unit}"
        )));
    }
    let mut per_r = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for &r in r_list {
        let attempt = Grid::new(op.spatial_dim(), r, points_per_unit * r)
            .and_then(|grid| solve_cell(f, op, b, r, grid, opts));
        match attempt {
            Ok(sol) => {
                per_r.insert(r, sol);
            }
            Err(e) => {
                failures.insert(r, e.to_string());
            }
        }
    }
    if per_r.is_empty() {
        let detail = failures
            .iter()
            .map(|(r, e)| format!("R={r}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::NumericalFailure(format!("every cell size failed ({detail})")));
    }
    let estimate = per_r.values().map(|s| s.value).fold(f64::INFINITY, f64::min);
    Ok(HomDensityResult { b: b.to_vec(), per_r, failures, estimate })
}

/// Tests the Jensen-type inequality fhom(b) <= avg_y fhom(b + w(y)) on
/// `n_tests` random loadings with single-mode A-free trigonometric fields
/// w(y) = 2 amp cos(2 pi xi.y) v, S(xi) v = 0.
///
/// Because w depends on y only through s = frac(xi.y), the cell average
/// reduces exactly to a 1-D average over s in [0, 1), quadratured here with
/// `quad_points` midpoints. The per-test budget combines the caller's value
/// tolerance (twice: once for the left side, once for the averaged side)
/// with the midpoint-rule error bound L_g / (4 q), where L_g <= lipschitz *
/// 4 pi amp bounds the s-derivative of s -> fhom(b + w(s)).
pub fn aqc_check<F>(
    mut fhom: F,
    op: &Operator,
    n_tests: usize,
    lipschitz: f64,
    value_tol: f64,
    quad_points: usize,
    seed: u64,
) -> Result<AqcReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if n_tests == 0 || quad_points < 2 {
        return Err(Error::InvalidArgument(
            "aqc_check needs n_tests >= 1 and quad_points >= 2".into(),
        ));
    }
    if !(lipschitz.is_finite() && lipschitz > 0.0 && value_tol.is_finite() && value_tol > 0.0) {
        return Err(Error::InvalidArgument(
            "aqc_check needs positive finite lipschitz and value_tol".into(),
        ));
    }
    let d = op.field_dim();
    let n = op.spatial_dim();
    let mut tests = Vec::with_capacity(n_tests);
    let mut worst = f64::INFINITY;
    let mut violations = 0usize;
    for test_idx in 0..n_tests {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_add((test_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let mut b: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        if b.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.3 {
            b[0] += 0.7;
        }
        // frequency with a nontrivial symbol nullspace
        let mut found = None;
        for _ in 0..50 {
            let xi: Vec<i64> = (0..n).map(|_| rng.gen_range(-2i64..=2)).collect();
            if xi.iter().all(|&k| k == 0) {
                continue;
            }
            let xf: Vec<f64> = xi.iter().map(|&k| k as f64).collect();
            let (_c, null) = nullspace_basis(&op.symbol(&xf), 1e-10);
            if !null.is_empty() {
                found = Some((xi, null));
                break;
            }
        }
        let Some((xi, null)) = found else {
            return Err(Error::NumericalFailure(
                "no frequency with nontrivial symbol nullspace found in 50 draws".into(),
            ));
        };
        // random unit direction inside the nullspace
        let mut v = vec![0.0; d];
        loop {
            for (c, basis_vec) in null.iter().enumerate() {
                let coeff = rng.gen::<f64>() * 2.0 - 1.0;
                for i in 0..d {
                    v[i] += coeff * basis_vec[i];
                    if c == 0 && coeff == 0.0 {
                        // no-op; keeps clippy quiet about unused c
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for x in &mut v {
                    *x /= norm;
                }
                break;
            }
            v.fill(0.0);
        }
        let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let amp = 0.25 * (1.0 + b_norm) * (0.5 + 0.5 * rng.gen::<f64>());

        let lhs = fhom(&b)?;
        let mut acc = 0.0;
        let mut zeta = vec![0.0; d];
        for j in 0..quad_points {
            let s = (j as f64 + 0.5) / quad_points as f64;
            let c = 2.0 * amp * (std::f64::consts::TAU * s).cos();
            for i in 0..d {
                zeta[i] = b[i] + c * v[i];
            }
            acc += fhom(&zeta)?;
        }
        let rhs = acc / quad_points as f64;
        let margin = rhs - lhs;
        let budget = 2.0 * value_tol
            + lipschitz * 4.0 * std::f64::consts::PI * amp / (4.0 * quad_points as f64);
        if margin < -budget {
            violations += 1;
        }
        worst = worst.min(margin);
        tests.push(AqcTest { b, frequency: xi, amplitude: amp, margin, budget });
    }
    Ok(AqcReport { tests, worst_margin: worst, violations })
}
