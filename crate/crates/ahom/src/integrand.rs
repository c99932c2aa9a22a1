//! Energy densities f(x, zeta): nonnegative, Q-periodic in x (period 1 in
//! every coordinate), Lipschitz in zeta, and of linear growth
//!
//! ```text
//!     C1 |zeta| <= f(x, zeta) <= C2 (1 + |zeta|).
//! ```
//!
//! Kernels built on |.| are nonsmooth at their kinks, so each integrand also
//! exposes a Huber-smoothed surrogate parametrized by delta > 0 for use in a
//! continuation loop: the surrogate is C^1, dominates the raw value, and
//! exceeds it by at most O(delta). Integrands report any valid selection
//! from the zeta-subdifferential, a global zeta-Lipschitz constant, growth
//! constants, and a convexity flag.
//!
//! `QuadraticKernel` intentionally violates linear growth (it reports
//! `has_linear_growth() == false`); it exists because two-phase laminates
//! with quadratic kernels have closed-form effective coefficients, which
//! makes them the standard end-to-end solver oracle.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Scalar coefficient a(x) > 0, periodic with period 1 in every coordinate.
///
/// Interfaces of the two-phase patterns sit at fractional coordinates that
/// are multiples of simple rationals, so on cell-centered grids with an even
/// point count per unit cell no sample ever lands on an interface and phase
/// volume fractions are resolved exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// Two-phase layering normal to `axis`: value `lo` where the fractional
    /// coordinate of x_axis - offset is below `fraction`, `hi` elsewhere.
    Laminate { axis: usize, fraction: f64, lo: f64, hi: f64, offset: f64 },
    /// 2^N-cell checkerboard: `lo` where sum_i floor(2 frac(x_i)) is even.
    Checkerboard { lo: f64, hi: f64 },
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl Coefficient {
    /// Validates positivity and parameter ranges; `n` is the spatial
    /// dimension the coefficient will be evaluated in.
    pub fn validate(&self, n: usize) -> Result<()> {
        let check_pos = |v: f64, what: &str| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "coefficient {what} must be positive and finite, got {v}"
                )));
            }
            Ok(())
        };
        match *self {
            Coefficient::Constant(v) => check_pos(v, "value"),
            Coefficient::Laminate { axis, fraction, lo, hi, offset } => {
                check_pos(lo, "lo")?;
                check_pos(hi, "hi")?;
                if axis >= n {
                    return Err(Error::InvalidArgument(format!(
                        "laminate axis {axis} out of range for dimension {n}"
                    )));
                }
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "laminate fraction must lie in (0,1), got {fraction}"
                    )));
                }
                if !offset.is_finite() {
                    return Err(Error::InvalidArgument("laminate offset must be finite".into()));
                }
                Ok(())
            }
            Coefficient::Checkerboard { lo, hi } => {
                check_pos(lo, "lo")?;
                check_pos(hi, "hi")
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Coefficient::Constant(v) => v,
            Coefficient::Laminate { axis, fraction, lo, hi, offset } => {
                if frac(x[axis] - offset) < fraction {
                    lo
                } else {
                    hi
                }
            }
            Coefficient::Checkerboard { lo, hi } => {
                let parity: i64 = x.iter().map(|&xi| (2.0 * frac(xi)).floor() as i64).sum();
                if parity % 2 == 0 {
                    lo
                } else {
                    hi
                }
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        match *self {
            Coefficient::Constant(v) => v,
            Coefficient::Laminate { lo, hi, .. } | Coefficient::Checkerboard { lo, hi } => {
                lo.min(hi)
            }
        }
    }

    pub fn max_value(&self) -> f64 {
        match *self {
            Coefficient::Constant(v) => v,
            Coefficient::Laminate { lo, hi, .. } | Coefficient::Checkerboard { lo, hi } => {
                lo.max(hi)
            }
        }
    }

    /// True when a(x) does not actually depend on x.
    pub fn is_constant(&self) -> bool {
        self.min_value() == self.max_value()
    }
}

/// An energy density f(x, zeta) with the structure the cell solver needs.
pub trait Integrand: Send + Sync + std::fmt::Debug {
    /// Number of components d of zeta.
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], zeta: &[f64]) -> f64;

    /// Writes any selection from the zeta-subdifferential at (x, zeta).
    fn subgrad(&self, x: &[f64], zeta: &[f64], out: &mut [f64]);

    /// Smoothed surrogate; must agree with `eval` at delta = 0 and satisfy
    /// eval <= eval_smoothed <= eval + O(delta). Smooth integrands keep the
    /// default (the raw value).
    fn eval_smoothed(&self, x: &[f64], zeta: &[f64], _delta: f64) -> f64 {
        self.eval(x, zeta)
    }

    /// Gradient of the smoothed surrogate.
    fn grad_smoothed(&self, x: &[f64], zeta: &[f64], _delta: f64, out: &mut [f64]) {
        self.subgrad(x, zeta, out);
    }

    /// True when `eval` has kinks and the solver should run the Huber
    /// continuation schedule instead of a single raw stage.
    fn needs_smoothing(&self) -> bool {
        false
    }

    /// Global Lipschitz constant of zeta -> f(x, zeta) (a reference scale on
    /// the unit ball for kernels without a global constant).
    fn lipschitz(&self) -> f64;

    /// (C1, C2) with C1 |zeta| <= f(x, zeta) <= C2 (1 + |zeta|) whenever
    /// `has_linear_growth()`.
    fn growth(&self) -> (f64, f64);

    fn convex_in_zeta(&self) -> bool;

    /// False only for solver-oracle kernels outside the linear-growth class.
    fn has_linear_growth(&self) -> bool {
        true
    }

    /// True when f(x, zeta) does not depend on x.
    fn x_independent(&self) -> bool;
}

fn norm(zeta: &[f64]) -> f64 {
    zeta.iter().map(|z| z * z).sum::<f64>().sqrt()
}

/// Huber smoothing of r >= 0: r^2/(2 delta) + delta/2 below delta, r above.
/// Dominates r, exceeds it by at most delta/2, and is C^1 in r.
fn huber(r: f64, delta: f64) -> f64 {
    if delta <= 0.0 || r > delta {
        r
    } else {
        r * r / (2.0 * delta) + delta / 2.0
    }
}

/// f(x, zeta) = a(x) |zeta|.
#[derive(Debug, Clone)]
pub struct NormKernel {
    coeff: Coefficient,
    d: usize,
}

impl NormKernel {
    pub fn new(coeff: Coefficient, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("integrand needs d >= 1".into()));
        }
        Ok(NormKernel { coeff, d })
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.coeff
    }
}

impl Integrand for NormKernel {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], zeta: &[f64]) -> f64 {
        self.coeff.value(x) * norm(zeta)
    }

    fn subgrad(&self, x: &[f64], zeta: &[f64], out: &mut [f64]) {
        let r = norm(zeta);
        if r == 0.0 {
            out.fill(0.0); // 0 lies in the subdifferential of |.| at 0
            return;
        }
        let s = self.coeff.value(x) / r;
        for (o, z) in out.iter_mut().zip(zeta) {
            *o = s * z;
        }
    }

    fn eval_smoothed(&self, x: &[f64], zeta: &[f64], delta: f64) -> f64 {
        self.coeff.value(x) * huber(norm(zeta), delta)
    }

    fn grad_smoothed(&self, x: &[f64], zeta: &[f64], delta: f64, out: &mut [f64]) {
        let r = norm(zeta).max(delta);
        if r == 0.0 {
            out.fill(0.0);
            return;
        }
        let s = self.coeff.value(x) / r;
        for (o, z) in out.iter_mut().zip(zeta) {
            *o = s * z;
        }
    }

    fn needs_smoothing(&self) -> bool {
        true
    }

    fn lipschitz(&self) -> f64 {
        self.coeff.max_value()
    }

    fn growth(&self) -> (f64, f64) {
        (self.coeff.min_value(), self.coeff.max_value())
    }

    fn convex_in_zeta(&self) -> bool {
        true
    }

    fn x_independent(&self) -> bool {
        self.coeff.is_constant()
    }
}

/// f(x, zeta) = a(x) sqrt(eps^2 + |zeta|^2): smooth, linear growth.
#[derive(Debug, Clone)]
pub struct SmoothLinearKernel {
    coeff: Coefficient,
    eps: f64,
    d: usize,
}

impl SmoothLinearKernel {
    pub fn new(coeff: Coefficient, eps: f64, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("integrand needs d >= 1".into()));
        }
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "smooth-linear eps must be positive, got {eps}"
            )));
        }
        Ok(SmoothLinearKernel { coeff, eps, d })
    }
}

impl Integrand for SmoothLinearKernel {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], zeta: &[f64]) -> f64 {
        let r2: f64 = zeta.iter().map(|z| z * z).sum();
        self.coeff.value(x) * (self.eps * self.eps + r2).sqrt()
    }

    fn subgrad(&self, x: &[f64], zeta: &[f64], out: &mut [f64]) {
        let r2: f64 = zeta.iter().map(|z| z * z).sum();
        let s = self.coeff.value(x) / (self.eps * self.eps + r2).sqrt();
        for (o, z) in out.iter_mut().zip(zeta) {
            *o = s * z;
        }
    }

    fn lipschitz(&self) -> f64 {
        self.coeff.max_value()
    }

    fn growth(&self) -> (f64, f64) {
        // a sqrt(eps^2+r^2) <= a (eps + r) <= a max(eps, 1) (1 + r)
        (self.coeff.min_value(), self.coeff.max_value() * self.eps.max(1.0))
    }

    fn convex_in_zeta(&self) -> bool {
        true
    }

    fn x_independent(&self) -> bool {
        self.coeff.is_constant()
    }
}

/// f(x, zeta) = a(x) |M zeta| for a fixed full-column-rank matrix M.
#[derive(Debug, Clone)]
pub struct AnisotropicKernel {
    coeff: Coefficient,
    mat: DMatrix<f64>,
    sigma_min: f64,
    sigma_max: f64,
}

impl AnisotropicKernel {
    pub fn new(coeff: Coefficient, mat: DMatrix<f64>) -> Result<Self> {
        if mat.ncols() == 0 || mat.nrows() == 0 {
            return Err(Error::InvalidArgument("anisotropy matrix must be nonempty".into()));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("anisotropy matrix must be finite".into()));
        }
        let svals = mat.clone().svd(false, false).singular_values;
        let sigma_max = svals.iter().cloned().fold(0.0_f64, f64::max);
        let sigma_min = svals.iter().cloned().fold(f64::INFINITY, f64::min);
        // fewer singular values than columns means a nontrivial kernel
        if mat.nrows() < mat.ncols() || sigma_min <= 1e-12 * sigma_max {
            return Err(Error::InvalidArgument(
                "anisotropy matrix must have full column rank (C1 > 0 fails otherwise)".into(),
            ));
        }
        Ok(AnisotropicKernel { coeff, mat, sigma_min, sigma_max })
    }

    fn mz(&self, zeta: &[f64]) -> nalgebra::DVector<f64> {
        let z = nalgebra::DVector::from_column_slice(zeta);
        &self.mat * z
    }
}

impl Integrand for AnisotropicKernel {
    fn dim(&self) -> usize {
        self.mat.ncols()
    }

    fn eval(&self, x: &[f64], zeta: &[f64]) -> f64 {
        self.coeff.value(x) * self.mz(zeta).norm()
    }

    fn subgrad(&self, x: &[f64], zeta: &[f64], out: &mut [f64]) {
        let mz = self.mz(zeta);
        let r = mz.norm();
        if r == 0.0 {
            out.fill(0.0);
            return;
        }
        let g = self.mat.transpose() * mz * (self.coeff.value(x) / r);
        out.copy_from_slice(g.as_slice());
    }

    fn eval_smoothed(&self, x: &[f64], zeta: &[f64], delta: f64) -> f64 {
        self.coeff.value(x) * huber(self.mz(zeta).norm(), delta)
    }

    fn grad_smoothed(&self, x: &[f64], zeta: &[f64], delta: f64, out: &mut [f64]) {
        let mz = self.mz(zeta);
        let r = mz.norm().max(delta);
        if r == 0.0 {
            out.fill(0.0);
            return;
        }
        let g = self.mat.transpose() * mz * (self.coeff.value(x) / r);
        out.copy_from_slice(g.as_slice());
    }

    fn needs_smoothing(&self) -> bool {
        true
    }

    fn lipschitz(&self) -> f64 {
        self.coeff.max_value() * self.sigma_max
    }

    fn growth(&self) -> (f64, f64) {
        (self.coeff.min_value() * self.sigma_min, self.coeff.max_value() * self.sigma_max)
    }

    fn convex_in_zeta(&self) -> bool {
        true
    }

    fn x_independent(&self) -> bool {
        self.coeff.is_constant()
    }
}

/// f(zeta) = min(|zeta - p|, |zeta + p|) + |zeta|: linear growth, 2-Lipschitz,
/// nonconvex across the ridge {zeta . p = 0} (x-independent).
#[derive(Debug, Clone)]
pub struct NonconvexKernel {
    p: Vec<f64>,
}

impl NonconvexKernel {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|v| !v.is_finite()) || norm(&p) == 0.0 {
            return Err(Error::InvalidArgument(
                "nonconvex kernel needs a nonzero finite offset p".into(),
            ));
        }
        Ok(NonconvexKernel { p })
    }

    fn branch_dists(&self, zeta: &[f64]) -> (f64, f64) {
        let mut dm = 0.0;
        let mut dp = 0.0;
        for (z, p) in zeta.iter().zip(&self.p) {
            dm += (z - p) * (z - p);
            dp += (z + p) * (z + p);
        }
        (dm.sqrt(), dp.sqrt())
    }
}

impl Integrand for NonconvexKernel {
    fn dim(&self) -> usize {
        self.p.len()
    }

    fn eval(&self, _x: &[f64], zeta: &[f64]) -> f64 {
        let (dm, dp) = self.branch_dists(zeta);
        dm.min(dp) + norm(zeta)
    }

    fn subgrad(&self, x: &[f64], zeta: &[f64], out: &mut [f64]) {
        self.grad_smoothed(x, zeta, 0.0, out);
    }

    fn eval_smoothed(&self, _x: &[f64], zeta: &[f64], delta: f64) -> f64 {
        let (dm, dp) = self.branch_dists(zeta);
        huber(dm, delta).min(huber(dp, delta)) + huber(norm(zeta), delta)
    }

    fn grad_smoothed(&self, _x: &[f64], zeta: &[f64], delta: f64, out: &mut [f64]) {
        let (dm, dp) = self.branch_dists(zeta);
        // gradient of the active (smaller) branch plus the |zeta| term
        let sign = if huber(dm, delta) <= huber(dp, delta) { -1.0 } else { 1.0 };
        let dist = if sign < 0.0 { dm } else { dp };
        let sb = if dist.max(delta) > 0.0 { 1.0 / dist.max(delta) } else { 0.0 };
        let r = norm(zeta);
        let sr = if r.max(delta) > 0.0 { 1.0 / r.max(delta) } else { 0.0 };
        for ((o, z), p) in out.iter_mut().zip(zeta).zip(&self.p) {
            *o = sb * (z + sign * p) + sr * z;
        }
    }

    fn needs_smoothing(&self) -> bool {
        true
    }

    fn lipschitz(&self) -> f64 {
        2.0
    }

    fn growth(&self) -> (f64, f64) {
        // f >= |zeta|; f <= |zeta| + |p| + |zeta| <= max(2, |p|)(1 + |zeta|)
        (1.0, 2.0_f64.max(norm(&self.p)))
    }

    fn convex_in_zeta(&self) -> bool {
        false
    }

    fn x_independent(&self) -> bool {
        true
    }
}

/// f(x, zeta) = a(x) |zeta|^2: the classical quadratic oracle. Outside the
/// linear-growth class on purpose; `growth()` returns the coefficient range
/// as a scale reference only.
#[derive(Debug, Clone)]
pub struct QuadraticKernel {
    coeff: Coefficient,
    d: usize,
}

impl QuadraticKernel {
    pub fn new(coeff: Coefficient, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("integrand needs d >= 1".into()));
        }
        Ok(QuadraticKernel { coeff, d })
    }
}

impl Integrand for QuadraticKernel {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], zeta: &[f64]) -> f64 {
        self.coeff.value(x) * zeta.iter().map(|z| z * z).sum::<f64>()
    }

    fn subgrad(&self, x: &[f64], zeta: &[f64], out: &mut [f64]) {
        let s = 2.0 * self.coeff.value(x);
        for (o, z) in out.iter_mut().zip(zeta) {
            *o = s * z;
        }
    }

    fn lipschitz(&self) -> f64 {
        // gradient scale on the unit ball; the line search adapts beyond it
        2.0 * self.coeff.max_value()
    }

    fn growth(&self) -> (f64, f64) {
        (self.coeff.min_value(), self.coeff.max_value())
    }

    fn convex_in_zeta(&self) -> bool {
        true
    }

    fn has_linear_growth(&self) -> bool {
        false
    }

    fn x_independent(&self) -> bool {
        self.coeff.is_constant()
    }
}
