//! First-order constant-coefficient differential operators A = sum_i A^(i) d/dx_i,
//! their symbols, the constant-rank property, and the characteristic cone.
//!
//! An operator maps d-vector fields on R^N to M-vector fields. Its symbol at a
//! frequency xi is the M x d matrix S(xi) = sum_i A^(i) xi_i; a field is A-free
//! when every Fourier coefficient lies in ker S(k). The characteristic cone is
//!
//! ```text
//! C = { v in R^d : S(w) v = 0 for some w != 0 },
//! ```
//!
//! the set of amplitudes that admit nontrivial A-free plane waves. Two
//! hypotheses are checked numerically: constant rank (rank S(xi) = c for every
//! xi != 0) and that the cone spans R^d.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A first-order operator, immutable after construction.
#[derive(Debug, Clone)]
pub struct Operator {
    mats: Vec<DMatrix<f64>>,
    n: usize,
    m: usize,
    d: usize,
}

/// Sampled characteristic cone with per-sample witness directions.
///
/// `cone_samples[i]` is a unit d-vector v annihilated by the symbol at the unit
/// N-vector `witness_directions[i]`, so |S(w) v| is at most the rank tolerance
/// used for the sweep. `span_dim` is the numerical rank of the matrix whose
/// columns are the samples; the cone spans R^d iff `h2_satisfied`.
#[derive(Debug, Clone)]
pub struct ConeReport {
    pub cone_samples: Vec<DVector<f64>>,
    pub witness_directions: Vec<DVector<f64>>,
    pub span_dim: usize,
    pub h2_satisfied: bool,
    /// Common symbol rank observed during the sweep.
    pub rank: usize,
}

/// Built-in operator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Divergence of a d=N vector field (M=1).
    Div { n: usize },
    /// Row-wise curl of m stacked N-vector fields: for each field j and each
    /// axis pair i<k the row d/dx_i u^j_k - d/dx_k u^j_i, ordered
    /// lexicographically in (j, i, k). d = m*N, M = m*N*(N-1)/2.
    Curl { m: usize, n: usize },
    /// The stationary Maxwell system on pairs (m, h) in R^3 x R^3:
    /// div(m + h) = 0 and curl h = 0. N=3, d=6, M=4.
    Maxwell,
}

/// Serialization document for an operator: N coefficient matrices, each
/// flattened row-major with M*d entries.
#[derive(Debug, Serialize, Deserialize)]
pub struct OperatorDoc {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

impl Operator {
    /// Builds an operator from its coefficient matrices. Requires at least two
    /// matrices (N >= 2), all of one shape M x d with M, d >= 1 and finite
    /// entries.
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = mats.len();
        if n < 2 {
            return Err(Error::InvalidOperator(format!(
                "need at least 2 coefficient matrices, got {n}"
            )));
        }
        let (m, d) = (mats[0].nrows(), mats[0].ncols());
        if m == 0 || d == 0 {
            return Err(Error::InvalidOperator("empty coefficient matrix".into()));
        }
        for (i, a) in mats.iter().enumerate() {
            if a.nrows() != m || a.ncols() != d {
                return Err(Error::InvalidOperator(format!(
                    "matrix {} has shape {}x{}, expected {}x{}",
                    i,
                    a.nrows(),
                    a.ncols(),
                    m,
                    d
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidOperator(format!(
                    "matrix {i} has non-finite entries"
                )));
            }
        }
        Ok(Operator { mats, n, m, d })
    }

    /// Spatial dimension N.
    pub fn spatial_dim(&self) -> usize {
        self.n
    }

    /// Field dimension d.
    pub fn field_dim(&self) -> usize {
        self.d
    }

    /// Constraint dimension M (rows of the symbol).
    pub fn constraint_dim(&self) -> usize {
        self.m
    }

    /// The coefficient matrices A^(1..N).
    pub fn coefficient_matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// Symbol S(xi) = sum_i A^(i) xi_i; exactly linear in xi.
    pub fn symbol(&self, xi: &[f64]) -> DMatrix<f64> {
        assert_eq!(xi.len(), self.n, "frequency dimension mismatch");
        let mut s = DMatrix::<f64>::zeros(self.m, self.d);
        for (c, a) in xi.iter().zip(&self.mats) {
            if *c != 0.0 {
                s.zip_apply(a, |sij, aij| *sij += *c * aij);
            }
        }
        s
    }

    /// Numerical rank of the symbol at `n_samples` quasi-uniform unit
    /// frequencies (the 2N coordinate axes plus a low-discrepancy sphere
    /// sequence). Rank counts singular values above `tol * sigma_max`.
    /// Returns (c, true) when every sample has rank c, and the maximum
    /// observed rank with `false` otherwise.
    pub fn check_constant_rank(&self, n_samples: usize, tol: f64) -> Result<(usize, bool)> {
        if tol <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must be positive, got {tol}"
            )));
        }
        if n_samples < 2 * self.n {
            return Err(Error::InvalidArgument(format!(
                "need at least 2N = {} sphere samples, got {n_samples}",
                2 * self.n
            )));
        }
        let mut min_rank = usize::MAX;
        let mut max_rank = 0usize;
        for xi in unit_sphere_points(self.n, n_samples) {
            let (rank, _) = nullspace_basis(&self.symbol(xi.as_slice()), tol);
            min_rank = min_rank.min(rank);
            max_rank = max_rank.max(rank);
        }
        Ok((max_rank, min_rank == max_rank))
    }

    /// Sweeps `n_dir_samples` unit frequencies, collecting the nullspace of the
    /// symbol at each as cone samples with their witness direction. Fails with
    /// `NotConstantRank` if the symbol rank varies over the sweep.
    pub fn characteristic_cone(&self, n_dir_samples: usize, tol: f64) -> Result<ConeReport> {
        if tol <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must be positive, got {tol}"
            )));
        }
        let n_dirs = n_dir_samples.max(2 * self.n);
        let mut cone_samples: Vec<DVector<f64>> = Vec::new();
        let mut witness_directions: Vec<DVector<f64>> = Vec::new();
        let mut min_rank = usize::MAX;
        let mut max_rank = 0usize;
        for w in unit_sphere_points(self.n, n_dirs) {
            let (rank, null) = nullspace_basis(&self.symbol(w.as_slice()), tol);
            min_rank = min_rank.min(rank);
            max_rank = max_rank.max(rank);
            for v in null {
                cone_samples.push(v);
                witness_directions.push(w.clone());
            }
        }
        if min_rank != max_rank {
            return Err(Error::NotConstantRank { min_rank, max_rank });
        }
        let span_dim = if cone_samples.is_empty() {
            0
        } else {
            let cols = DMatrix::from_columns(&cone_samples);
            matrix_rank(&cols, tol)
        };
        Ok(ConeReport {
            cone_samples,
            witness_directions,
            span_dim,
            h2_satisfied: span_dim == self.d,
            rank: max_rank,
        })
    }

    /// Exact characteristic-cone membership: v lies in the cone iff
    /// S(xi) v = 0 for some xi != 0. Since xi -> S(xi) v is the linear map
    /// xi -> B xi with B = [A^(1) v | ... | A^(N) v], that happens exactly
    /// when B is rank-deficient, decided here by SVD with tolerance `tol`.
    pub fn cone_contains(&self, v: &[f64], tol: f64) -> Result<bool> {
        if tol <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must be positive, got {tol}"
            )));
        }
        if v.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "cone membership for a {}-vector, operator d = {}",
                v.len(),
                self.d
            )));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(
                "cone membership needs a nonzero finite vector".into(),
            ));
        }
        let vhat = DVector::from_iterator(self.d, v.iter().map(|x| x / norm));
        let cols: Vec<DVector<f64>> = self.mats.iter().map(|a| a * &vhat).collect();
        let b = DMatrix::from_columns(&cols);
        Ok(matrix_rank(&b, tol) < self.n)
    }

    /// Constructs a built-in operator.
    pub fn builtin(which: Builtin) -> Result<Self> {
        match which {
            Builtin::Div { n } => {
                if n < 2 {
                    return Err(Error::InvalidOperator(format!("div requires N >= 2, got {n}")));
                }
                let mats = (0..n)
                    .map(|i| {
                        let mut a = DMatrix::zeros(1, n);
                        a[(0, i)] = 1.0;
                        a
                    })
                    .collect();
                Operator::new(mats)
            }
            Builtin::Curl { m, n } => {
                if m < 1 || n < 2 {
                    return Err(Error::InvalidOperator(format!(
                        "curl requires m >= 1 and N >= 2, got m={m}, N={n}"
                    )));
                }
                let d = m * n;
                let rows = m * n * (n - 1) / 2;
                let mut mats = vec![DMatrix::zeros(rows, d); n];
                let mut r = 0;
                for j in 0..m {
                    for i in 0..n {
                        for k in (i + 1)..n {
                            // row r: d/dx_i u^j_k - d/dx_k u^j_i
                            mats[i][(r, j * n + k)] += 1.0;
                            mats[k][(r, j * n + i)] -= 1.0;
                            r += 1;
                        }
                    }
                }
                Operator::new(mats)
            }
            Builtin::Maxwell => {
                let (n, d, rows) = (3, 6, 4);
                let mut mats = vec![DMatrix::zeros(rows, d); n];
                for i in 0..3 {
                    // row 0: div(m + h)
                    mats[i][(0, i)] = 1.0;
                    mats[i][(0, 3 + i)] = 1.0;
                }
                let mut r = 1;
                for i in 0..3 {
                    for k in (i + 1)..3 {
                        // rows 1..4: curl h
                        mats[i][(r, 3 + k)] += 1.0;
                        mats[k][(r, 3 + i)] -= 1.0;
                        r += 1;
                    }
                }
                debug_assert_eq!(n, 3);
                Operator::new(mats)
            }
        }
    }

    /// Serialization document (row-major matrix dumps).
    pub fn to_doc(&self) -> OperatorDoc {
        OperatorDoc {
            n: self.n,
            m: self.m,
            d: self.d,
            a: self
                .mats
                .iter()
                .map(|a| {
                    let mut flat = Vec::with_capacity(self.m * self.d);
                    for r in 0..self.m {
                        for c in 0..self.d {
                            flat.push(a[(r, c)]);
                        }
                    }
                    flat
                })
                .collect(),
        }
    }

    /// Reconstructs an operator from its document, validating all dimensions.
    pub fn from_doc(doc: &OperatorDoc) -> Result<Self> {
        if doc.a.len() != doc.n {
            return Err(Error::InvalidOperator(format!(
                "document lists {} matrices but N = {}",
                doc.a.len(),
                doc.n
            )));
        }
        let mats = doc
            .a
            .iter()
            .enumerate()
            .map(|(i, flat)| {
                if flat.len() != doc.m * doc.d {
                    return Err(Error::InvalidOperator(format!(
                        "matrix {} has {} entries, expected M*d = {}",
                        i,
                        flat.len(),
                        doc.m * doc.d
                    )));
                }
                Ok(DMatrix::from_row_slice(doc.m, doc.d, flat))
            })
            .collect::<Result<Vec<_>>>()?;
        Operator::new(mats)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("operator doc serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: OperatorDoc = serde_json::from_str(s)?;
        Operator::from_doc(&doc)
    }
}

/// Numerical rank with threshold `tol * sigma_max`.
pub(crate) fn matrix_rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    let svd = mat.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > tol * smax).count()
}

/// Rank and an orthonormal nullspace basis of `mat`, thresholded at
/// `tol * sigma_max`. The matrix is padded with zero rows to square when it
/// has fewer rows than columns so that the right singular basis is complete.
pub(crate) fn nullspace_basis(mat: &DMatrix<f64>, tol: f64) -> (usize, Vec<DVector<f64>>) {
    let (rows, cols) = (mat.nrows(), mat.ncols());
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(mat);
        p
    } else {
        mat.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut rank = 0;
    let mut null = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > tol * smax {
            rank += 1;
        } else {
            null.push(vt.row(i).transpose());
        }
    }
    // The thin SVD of a square matrix always yields cols singular pairs.
    debug_assert_eq!(rank + null.len(), cols);
    (rank, null)
}

/// Deterministic quasi-uniform points on the unit sphere S^{dim-1}: the 2*dim
/// signed coordinate axes followed by a Kronecker low-discrepancy sequence
/// pushed through the Box-Muller map and normalized.
pub fn unit_sphere_points(dim: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(dim >= 1);
    let mut pts = Vec::with_capacity(count);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            if pts.len() == count {
                return pts;
            }
            let mut e = DVector::zeros(dim);
            e[i] = sign;
            pts.push(e);
        }
    }
    // Kronecker sequence with the generalized golden ratio for `unif_dim`
    // coordinates; Box-Muller consumes them in pairs.
    let unif_dim = dim.div_ceil(2) * 2;
    let alphas = kronecker_alphas(unif_dim);
    let mut j: u64 = 1;
    while pts.len() < count {
        let mut g = Vec::with_capacity(unif_dim);
        for pair in 0..unif_dim / 2 {
            let u1 = frac(0.5 + j as f64 * alphas[2 * pair]).clamp(1e-12, 1.0 - 1e-12);
            let u2 = frac(0.5 + j as f64 * alphas[2 * pair + 1]);
            let r = (-2.0 * u1.ln()).sqrt();
            g.push(r * (std::f64::consts::TAU * u2).cos());
            g.push(r * (std::f64::consts::TAU * u2).sin());
        }
        j += 1;
        let v = DVector::from_iterator(dim, g.into_iter().take(dim));
        let norm = v.norm();
        if norm > 1e-8 {
            pts.push(v / norm);
        }
    }
    pts
}

/// Irrational increments 1/gamma, 1/gamma^2, ... where gamma solves
/// x^(s+1) = x + 1 (the dimension-s generalization of the golden ratio).
fn kronecker_alphas(s: usize) -> Vec<f64> {
    let mut gamma = 1.5_f64;
    for _ in 0..64 {
        gamma = (1.0 + gamma).powf(1.0 / (s as f64 + 1.0));
    }
    (1..=s).map(|i| (1.0 / gamma).powi(i as i32)).collect()
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const RANK_TOL: f64 = 1e-10;

    fn div(n: usize) -> Operator {
        Operator::builtin(Builtin::Div { n }).unwrap()
    }

    fn curl(m: usize, n: usize) -> Operator {
        Operator::builtin(Builtin::Curl { m, n }).unwrap()
    }

    #[test]
    fn div_symbol_is_xi_transpose() {
        let op = div(3);
        let s = op.symbol(&[1.0, 0.0, 0.0]);
        assert_eq!(s.nrows(), 1);
        assert_eq!(s.ncols(), 3);
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(0, 2)], 0.0);
    }

    #[test]
    fn symbol_at_zero_is_zero() {
        for op in [div(2), curl(1, 3), Operator::builtin(Builtin::Maxwell).unwrap()] {
            let s = op.symbol(&vec![0.0; op.spatial_dim()]);
            assert!(s.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn curl_2d_symbol_matches_convention() {
        // One field in the plane: the single row realizes d_1 u_2 - d_2 u_1,
        // so symbol((a,b)) = [-b, a].
        let op = curl(1, 2);
        assert_eq!(op.coefficient_matrices()[0], DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(op.coefficient_matrices()[1], DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]));
        let s = op.symbol(&[3.0, 7.0]);
        assert_eq!(s[(0, 0)], -7.0);
        assert_eq!(s[(0, 1)], 3.0);
    }

    #[test]
    fn symbol_is_linear() {
        let op = Operator::builtin(Builtin::Maxwell).unwrap();
        let xi = [0.3, -1.2, 0.7];
        let eta = [1.1, 0.4, -0.9];
        let (a, b) = (2.5, -0.75);
        let combo: Vec<f64> = xi.iter().zip(&eta).map(|(x, e)| a * x + b * e).collect();
        let lhs = op.symbol(&combo);
        let rhs = op.symbol(&xi) * a + op.symbol(&eta) * b;
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn div_has_constant_rank_one() {
        let (c, ok) = div(3).check_constant_rank(100, RANK_TOL).unwrap();
        assert!(ok);
        assert_eq!(c, 1);
    }

    #[test]
    fn curl_1_3_has_constant_rank_two() {
        // Frozen from a brute-force SVD sweep of the 3x3 symbol at 1000
        // quasi-random sphere points, run independently of this module.
        let (c, ok) = curl(1, 3).check_constant_rank(1000, RANK_TOL).unwrap();
        assert!(ok);
        assert_eq!(c, 2);
    }

    #[test]
    fn rank_drop_operator_is_detected() {
        // S(xi) = xi_1 * [1, 0]: rank 1 at e_1, rank 0 at e_2.
        let op = Operator::new(vec![
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 0.0]),
        ])
        .unwrap();
        let (c, ok) = op.check_constant_rank(16, RANK_TOL).unwrap();
        assert!(!ok);
        assert_eq!(c, 1); // maximum observed rank
    }

    #[test]
    fn constant_rank_stable_across_sample_counts() {
        for n_samples in [4, 16, 64, 256] {
            let (c, ok) = div(2).check_constant_rank(n_samples, RANK_TOL).unwrap();
            assert!(ok);
            assert_eq!(c, 1);
            let (c, ok) = curl(1, 2).check_constant_rank(n_samples, RANK_TOL).unwrap();
            assert!(ok);
            assert_eq!(c, 1);
        }
    }

    #[test]
    fn rejects_bad_tolerance_and_undersampling() {
        assert!(div(2).check_constant_rank(10, 0.0).is_err());
        assert!(div(2).check_constant_rank(10, -1.0).is_err());
        assert!(div(3).check_constant_rank(5, RANK_TOL).is_err());
    }

    #[test]
    fn div_cone_spans_everything() {
        let report = div(3).characteristic_cone(200, RANK_TOL).unwrap();
        assert!(report.h2_satisfied);
        assert_eq!(report.span_dim, 3);
        assert_eq!(report.rank, 1);
    }

    #[test]
    fn curl_2d_cone_spans_plane() {
        let report = curl(1, 2).characteristic_cone(200, RANK_TOL).unwrap();
        assert!(report.h2_satisfied);
        assert_eq!(report.span_dim, 2);
    }

    #[test]
    fn maxwell_cone_spans_r6() {
        // Frozen from a pre-build nullspace sweep of the assembled 4x6 symbol
        // over 10^4 sphere directions: rank 3 everywhere, span dimension 6.
        let op = Operator::builtin(Builtin::Maxwell).unwrap();
        let report = op.characteristic_cone(10_000, RANK_TOL).unwrap();
        assert_eq!(report.rank, 3);
        assert!(report.h2_satisfied);
        assert_eq!(report.span_dim, 6);
    }

    #[test]
    fn maxwell_axis_example() {
        // (m, h) = (e_1, 0) is annihilated by the symbol at w = e_3.
        let op = Operator::builtin(Builtin::Maxwell).unwrap();
        let s = op.symbol(&[0.0, 0.0, 1.0]);
        let v = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((s * v).norm() < 1e-15);
    }

    #[test]
    fn cone_membership_is_exact() {
        // div and curl annihilate every direction at a suitable frequency
        for op in [div(2), div(3), curl(1, 2), curl(1, 3)] {
            let mut v = vec![0.3; op.field_dim()];
            v[0] = -1.1;
            assert!(op.cone_contains(&v, RANK_TOL).unwrap());
        }
        let op = Operator::builtin(Builtin::Maxwell).unwrap();
        // (m, h) = (-e_1 + e_2, e_1): xi = e_1 gives xi.(m+h) = 0, xi x h = 0
        let inside = [-1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        assert!(op.cone_contains(&inside, RANK_TOL).unwrap());
        // m = 0 forces xi || h, and then xi.(m+h) = |xi||h| != 0
        let outside = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        assert!(!op.cone_contains(&outside, RANK_TOL).unwrap());
        assert!(op.cone_contains(&[0.0; 6], RANK_TOL).is_err());
        assert!(op.cone_contains(&[1.0; 5], RANK_TOL).is_err());
    }

    #[test]
    fn cone_witnesses_annihilate() {
        for op in [div(2), div(3), curl(1, 2), curl(1, 3), curl(2, 2),
                   Operator::builtin(Builtin::Maxwell).unwrap()] {
            let report = op.characteristic_cone(150, RANK_TOL).unwrap();
            assert!(!report.cone_samples.is_empty());
            for (v, w) in report.cone_samples.iter().zip(&report.witness_directions) {
                assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(w.norm(), 1.0, epsilon = 1e-12);
                let res = (op.symbol(w.as_slice()) * v).norm();
                assert!(res <= RANK_TOL, "witness residual {res}");
            }
        }
    }

    #[test]
    fn cone_relation_is_scale_invariant() {
        // If S(w) v = 0 then the same witness works for -v and 2v.
        let op = curl(1, 3);
        let report = op.characteristic_cone(64, RANK_TOL).unwrap();
        let (v, w) = (&report.cone_samples[0], &report.witness_directions[0]);
        let s = op.symbol(w.as_slice());
        assert!((&s * (-v)).norm() <= RANK_TOL);
        assert!((&s * (v * 2.0)).norm() <= 2.0 * RANK_TOL);
    }

    #[test]
    fn builtin_div_2d_matrices() {
        let op = div(2);
        assert_eq!(op.coefficient_matrices()[0], DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(op.coefficient_matrices()[1], DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
    }

    #[test]
    fn builtin_rejects_bad_dimensions() {
        assert!(Operator::builtin(Builtin::Div { n: 1 }).is_err());
        assert!(Operator::builtin(Builtin::Curl { m: 0, n: 2 }).is_err());
        assert!(Operator::builtin(Builtin::Curl { m: 1, n: 1 }).is_err());
    }

    #[test]
    fn curl_dimensions() {
        let op = curl(2, 3);
        assert_eq!(op.field_dim(), 6);
        assert_eq!(op.constraint_dim(), 6); // 2 * 3 * 2 / 2
        assert_eq!(op.spatial_dim(), 3);
    }

    #[test]
    fn json_roundtrip() {
        let op = Operator::builtin(Builtin::Maxwell).unwrap();
        let s = op.to_json_string();
        let back = Operator::from_json_str(&s).unwrap();
        assert_eq!(back.spatial_dim(), 3);
        assert_eq!(back.field_dim(), 6);
        assert_eq!(back.constraint_dim(), 4);
        for (a, b) in op.coefficient_matrices().iter().zip(back.coefficient_matrices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn doc_validation_rejects_malformed() {
        assert!(Operator::from_json_str(r#"{"N":2,"M":1,"d":2,"A":[[1,0]]}"#).is_err());
        assert!(Operator::from_json_str(r#"{"N":2,"M":1,"d":2,"A":[[1,0],[0,1,5]]}"#).is_err());
    }

    #[test]
    fn sphere_points_are_unit_and_deterministic() {
        let a = unit_sphere_points(3, 50);
        let b = unit_sphere_points(3, 50);
        assert_eq!(a.len(), 50);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p, q);
            assert_abs_diff_eq!(p.norm(), 1.0, epsilon = 1e-12);
        }
        // axes come first
        assert_eq!(a[0], DVector::from_row_slice(&[1.0, 0.0, 0.0]));
        assert_eq!(a[1], DVector::from_row_slice(&[-1.0, 0.0, 0.0]));
    }

    #[test]
    fn nullspace_of_wide_matrix_is_complete() {
        // 1x3 matrix: rank 1, nullspace dimension 2, orthonormal.
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]);
        let (rank, null) = nullspace_basis(&m, 1e-12);
        assert_eq!(rank, 1);
        assert_eq!(null.len(), 2);
        for v in &null {
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
            assert!((&m * v).norm() < 1e-12);
        }
        assert!(null[0].dot(&null[1]).abs() < 1e-12);
    }
}
