//! Periodic vector fields sampled on a regular grid over the cell R*Q,
//! Q = (-1/2, 1/2)^N, with a discrete Fourier representation.
//!
//! Sampling is cell-centered: along each axis the k-th coordinate is
//! x_k = R*(k/n - 1/2 + 1/(2n)), so no sample lands on the unit-cell faces
//! where piecewise-constant coefficients jump. The forward transform is
//! normalized so the k=0 coefficient equals the mean; frequencies run over
//! the integer box (-n/2, n/2]^N with n even. Applying the operator A is a
//! per-frequency multiplication by i*(2*pi/R)*S(k), the exact derivative of
//! the trigonometric interpolant.
//!
//! Coefficients are taken with respect to the sample-index harmonics
//! exp(2*pi*i*k.j/n). Relative to physical-coordinate harmonics each
//! coefficient carries the fixed unimodular phase of the cell-centering
//! offset; diagonal operations (derivative multipliers, per-frequency
//! projectors) and all norms are identical in both conventions, and the k=0
//! coefficient is the mean in both.

use crate::error::{Error, Result};
use crate::operator::Operator;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::io::{BufRead, Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

/// Regular cell-centered grid on R*Q with the same even point count per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    period: usize,
    n_axis: usize,
}

impl Grid {
    /// `dim` spatial dimensions, period multiplier `period` (the R of the cell
    /// R*Q), `n_axis` points per axis. `n_axis` must be even so the Nyquist
    /// frequency is unambiguous.
    pub fn new(dim: usize, period: usize, n_axis: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("grid dimension must be >= 1".into()));
        }
        if period == 0 {
            return Err(Error::InvalidArgument("period multiplier must be >= 1".into()));
        }
        if n_axis == 0 || n_axis % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "points per axis must be positive and even, got {n_axis}"
            )));
        }
        let mut total: usize = 1;
        for _ in 0..dim {
            total = total.checked_mul(n_axis).ok_or_else(|| {
                Error::InvalidArgument(format!("grid {n_axis}^{dim} overflows usize"))
            })?;
        }
        if total > (1 << 28) {
            return Err(Error::InvalidArgument(format!(
                "grid {n_axis}^{dim} = {total} points exceeds the supported size"
            )));
        }
        Ok(Grid { dim, period, n_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Period multiplier R.
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn points_per_axis(&self) -> usize {
        self.n_axis
    }

    /// Grid spacing R/n, identical on every axis.
    pub fn spacing(&self) -> f64 {
        self.period as f64 / self.n_axis as f64
    }

    pub fn num_points(&self) -> usize {
        self.n_axis.pow(self.dim as u32)
    }

    /// Coordinate of axis index k: R*(k/n - 1/2 + 1/(2n)).
    pub fn coordinate(&self, idx: usize) -> f64 {
        let n = self.n_axis as f64;
        self.period as f64 * (idx as f64 / n - 0.5 + 0.5 / n)
    }

    /// Writes the coordinates of flat point `p` (C order, last axis fastest).
    pub fn point_coords(&self, p: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut rem = p;
        for a in (0..self.dim).rev() {
            out[a] = self.coordinate(rem % self.n_axis);
            rem /= self.n_axis;
        }
    }

    /// Writes the integer frequency vector of flat spectral index `p`; each
    /// component lies in (-n/2, n/2].
    pub fn freq_components(&self, p: usize, out: &mut [i64]) {
        debug_assert_eq!(out.len(), self.dim);
        let n = self.n_axis;
        let mut rem = p;
        for a in (0..self.dim).rev() {
            let idx = rem % n;
            rem /= n;
            out[a] = if idx <= n / 2 { idx as i64 } else { idx as i64 - n as i64 };
        }
    }
}

/// A d-vector field on a grid; values are stored point-major (all components
/// of a point contiguous, points in C order).
#[derive(Debug, Clone)]
pub struct PeriodicField {
    grid: Grid,
    d: usize,
    values: Vec<f64>,
}

/// Complex spectrum of a field, same layout as the field values.
#[derive(Debug, Clone)]
pub struct Spectrum {
    grid: Grid,
    d: usize,
    data: Vec<Complex64>,
}

impl PeriodicField {
    pub fn zeros(grid: Grid, d: usize) -> Self {
        assert!(d >= 1);
        PeriodicField { grid, d, values: vec![0.0; grid.num_points() * d] }
    }

    /// Samples `f(coords, out_components)` at every grid point.
    pub fn from_fn(grid: Grid, d: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut field = PeriodicField::zeros(grid, d);
        let mut x = vec![0.0; grid.dim()];
        for p in 0..grid.num_points() {
            grid.point_coords(p, &mut x);
            f(&x, &mut field.values[p * d..(p + 1) * d]);
        }
        field
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Number of vector components per point.
    pub fn components(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.values[p * self.d..(p + 1) * self.d]
    }

    /// Arithmetic average over grid points, one entry per component.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for chunk in self.values.chunks_exact(self.d) {
            for (a, v) in acc.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        let npts = self.grid.num_points() as f64;
        acc.iter_mut().for_each(|a| *a /= npts);
        acc
    }

    /// Cell-averaged L1 norm: avg over points of the Euclidean norm of the
    /// d-vector, so constants c have norm |c|.
    pub fn l1_norm(&self) -> f64 {
        let s: f64 = self
            .values
            .chunks_exact(self.d)
            .map(|chunk| chunk.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        s / self.grid.num_points() as f64
    }

    /// Cell-averaged L2 norm: sqrt(avg |v|^2); constants c have norm |c|.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s / self.grid.num_points() as f64).sqrt()
    }

    /// Forward DFT, normalized so the zero-frequency coefficient is the mean.
    pub fn forward_spectrum(&self) -> Spectrum {
        let mut data: Vec<Complex64> =
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_all_axes(&mut data, self.grid, self.d, FftDirection::Forward);
        let scale = 1.0 / self.grid.num_points() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
        Spectrum { grid: self.grid, d: self.d, data }
    }
}

impl Spectrum {
    pub fn zeros(grid: Grid, d: usize) -> Self {
        Spectrum { grid, d, data: vec![Complex64::new(0.0, 0.0); grid.num_points() * d] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Inverse DFT; the real part is returned, discarding the imaginary
    /// residue of nearly-Hermitian spectra.
    pub fn inverse(&self) -> PeriodicField {
        let mut data = self.data.clone();
        fft_all_axes(&mut data, self.grid, self.d, FftDirection::Inverse);
        PeriodicField {
            grid: self.grid,
            d: self.d,
            values: data.iter().map(|z| z.re).collect(),
        }
    }
}

/// Applies A as a Fourier multiplier: out_hat(k) = i*(2*pi/R)*S(k)*in_hat(k).
/// The result has M components (one per constraint row).
pub fn apply_a(op: &Operator, field: &PeriodicField) -> Result<PeriodicField> {
    if op.spatial_dim() != field.grid().dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator N = {} vs grid dimension {}",
            op.spatial_dim(),
            field.grid().dim()
        )));
    }
    if op.field_dim() != field.components() {
        return Err(Error::DimensionMismatch(format!(
            "operator d = {} vs field components {}",
            op.field_dim(),
            field.components()
        )));
    }
    let grid = field.grid();
    let (m, d, n_dim) = (op.constraint_dim(), op.field_dim(), grid.dim());
    let spec = field.forward_spectrum();
    let mut out = Spectrum::zeros(grid, m);
    let mats = op.coefficient_matrices();
    let factor = std::f64::consts::TAU / grid.period() as f64;
    let mut kvec = vec![0i64; n_dim];
    let mut s = vec![0.0; m * d];
    for p in 0..grid.num_points() {
        grid.freq_components(p, &mut kvec);
        if kvec.iter().all(|&k| k == 0) {
            continue;
        }
        s.iter_mut().for_each(|x| *x = 0.0);
        for (a, &k) in kvec.iter().enumerate() {
            if k != 0 {
                let ka = k as f64;
                let mat = &mats[a];
                for r in 0..m {
                    for c in 0..d {
                        s[r * d + c] += ka * mat[(r, c)];
                    }
                }
            }
        }
        let inp = &spec.data()[p * d..(p + 1) * d];
        let outp = &mut out.data_mut()[p * m..(p + 1) * m];
        for r in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..d {
                acc += s[r * d + c] * inp[c];
            }
            // multiply by i*factor
            outp[r] = Complex64::new(-factor * acc.im, factor * acc.re);
        }
    }
    Ok(out.inverse())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum FftDirection {
    Forward,
    Inverse,
}

fn plan(n: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    let mut planner = PLANNER
        .get_or_init(|| Mutex::new(FftPlanner::new()))
        .lock()
        .expect("fft planner lock");
    match dir {
        FftDirection::Forward => planner.plan_fft_forward(n),
        FftDirection::Inverse => planner.plan_fft_inverse(n),
    }
}

/// In-place multidimensional FFT over all axes of point-major multi-component
/// data, one strided 1-D transform per line and component.
fn fft_all_axes(data: &mut [Complex64], grid: Grid, d: usize, dir: FftDirection) {
    let n = grid.points_per_axis();
    let n_dim = grid.dim();
    let fft = plan(n, dir);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..n_dim {
        // Points whose index on `axis` is zero: outer * n * stride + inner.
        let stride_pts = n.pow((n_dim - 1 - axis) as u32);
        let outer_count = n.pow(axis as u32);
        let step = stride_pts * d;
        for outer in 0..outer_count {
            for inner in 0..stride_pts {
                let base_pt = outer * n * stride_pts + inner;
                for c in 0..d {
                    let base = base_pt * d + c;
                    for (t, lv) in line.iter_mut().enumerate() {
                        *lv = data[base + t * step];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (t, lv) in line.iter().enumerate() {
                        data[base + t * step] = *lv;
                    }
                }
            }
        }
    }
}

// --- snapshot formats ---

const BINARY_HEADER_LEN: usize = 32;

impl PeriodicField {
    /// CSV snapshot: header `x0,..,v0,..`, one row per grid point in flat
    /// order, coordinates then components, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let n_dim = self.grid.dim();
        let mut header = Vec::with_capacity(n_dim + self.d);
        header.extend((0..n_dim).map(|a| format!("x{a}")));
        header.extend((0..self.d).map(|c| format!("v{c}")));
        writeln!(out, "{}", header.join(","))?;
        let mut x = vec![0.0; n_dim];
        for p in 0..self.grid.num_points() {
            self.grid.point_coords(p, &mut x);
            let row: Vec<String> = x
                .iter()
                .chain(self.point(p))
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a snapshot produced by `write_csv`. The grid is reconstructed
    /// from the header arity, the row count, and the coordinate spacing.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let n_dim = cols.iter().take_while(|c| c.starts_with('x')).count();
        let d = cols.len() - n_dim;
        if n_dim == 0 || d == 0 || !cols[n_dim..].iter().all(|c| c.starts_with('v')) {
            return Err(Error::Parse(format!("unrecognized field CSV header: {header}")));
        }
        let mut coords_first = Vec::new();
        let mut values = Vec::new();
        let mut rows = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim().split(',');
            for a in 0..n_dim {
                let v: f64 = fields
                    .next()
                    .ok_or_else(|| Error::Parse("short CSV row".into()))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad coordinate: {e}")))?;
                if rows == 0 {
                    coords_first.push(v);
                }
                let _ = a;
            }
            for _ in 0..d {
                values.push(
                    fields
                        .next()
                        .ok_or_else(|| Error::Parse("short CSV row".into()))?
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value: {e}")))?,
                );
            }
            rows += 1;
        }
        let n_axis = (rows as f64).powf(1.0 / n_dim as f64).round() as usize;
        if n_axis.pow(n_dim as u32) != rows {
            return Err(Error::Parse(format!(
                "{rows} rows is not a perfect {n_dim}-th power"
            )));
        }
        // First row holds the smallest coordinates: x = R*(1/(2n) - 1/2),
        // so R = -2*x*n/(n-1) ... recovered more robustly from the spacing.
        let x0 = coords_first[n_dim - 1];
        let period_f = -2.0 * x0 / (1.0 - 1.0 / n_axis as f64);
        let period = period_f.round() as usize;
        let grid = Grid::new(n_dim, period.max(1), n_axis)?;
        if (grid.coordinate(0) - x0).abs() > 1e-9 * (1.0 + period_f.abs()) {
            return Err(Error::Parse("CSV coordinates do not match a centered cell grid".into()));
        }
        Ok(PeriodicField { grid, d, values })
    }

    /// Raw little-endian snapshot: a 32-byte header of four u64 values
    /// (dims, points per axis, period, components) followed by the values in
    /// flat order.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> Result<()> {
        for v in [
            self.grid.dim() as u64,
            self.grid.points_per_axis() as u64,
            self.grid.period() as u64,
            self.d as u64,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> Result<Self> {
        let mut header = [0u8; BINARY_HEADER_LEN];
        input.read_exact(&mut header)?;
        let mut words = [0u64; 4];
        for (i, w) in words.iter_mut().enumerate() {
            *w = u64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().unwrap());
        }
        let [n_dim, n_axis, period, d] = words.map(|w| w as usize);
        let grid = Grid::new(n_dim, period, n_axis)?;
        if d == 0 {
            return Err(Error::Parse("binary field header declares zero components".into()));
        }
        let count = grid.num_points() * d;
        let mut values = vec![0.0; count];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            input.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(PeriodicField { grid, d, values })
    }
}
