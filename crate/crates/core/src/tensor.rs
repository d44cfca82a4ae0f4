//! Rank-3 tensor algebra: unfolding, mode products, energy-truncated SVD,
//! sequentially truncated HOSVD, and reduced-coordinate projection.
//!
//! A data cube `χ ∈ R^{I×J×T}` (operating conditions × behaviors × angle
//! samples) is compressed as a Tucker decomposition
//!
//! ```text
//!   χ ≈ ξ ×₁ U ×₂ V ×₃ W
//! ```
//!
//! where `ξ` is a small core tensor and `U, V, W` have orthonormal
//! columns. Ranks are chosen per mode by an energy threshold on the
//! singular spectrum of the mode unfolding. Truncation is *sequential*
//! (ST-HOSVD): after each mode is truncated the working tensor is
//! contracted by the factor transpose, so later modes decompose an
//! already-smaller tensor. Sequential truncation has an exact error
//! identity — the squared Frobenius reconstruction error equals the sum
//! of the discarded squared singular values across the per-mode steps —
//! which the tests exploit.
//!
//! Layout conventions (fixed, byte-reproducible):
//! - tensors are row-major with the last index fastest: `(i,j,t) →
//!   (i·J + j)·T + t`;
//! - the mode-n unfolding has rows indexed by mode n and columns by the
//!   remaining modes in ascending order, last varying fastest;
//! - in every factor column the entry of largest magnitude is positive,
//!   ties broken by lowest row index.

use crate::linalg::{thin_svd, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-mode energy thresholds `(conditions, behaviors, angles)`.
/// The behavior mode is kept at full rank: with only two behaviors
/// (drag, lift), truncating it to one column would merge them.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.95, 1.0, 0.95];

/// Default mode processing order for [`st_hosvd`]: ascending.
pub const DEFAULT_MODE_ORDER: [usize; 3] = [1, 2, 3];

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid tensor mode {mode}: expected 1, 2, or 3")]
    InvalidMode { mode: usize },
    #[error("mode order {order:?} is not a permutation of (1, 2, 3)")]
    InvalidModeOrder { order: [usize; 3] },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("energy threshold {value} outside (0, 1]")]
    InvalidThreshold { value: f64 },
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error("unsupported tensor layout {order:?}: expected \"row-major\"")]
    UnsupportedOrder { order: String },
    #[error("factor matrix columns not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dense rank-3 tensor, row-major with the last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    /// Build from a row-major buffer, validating length and finiteness.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(TensorError::ShapeMismatch {
                context: format!(
                    "data length {} does not match dims {:?}",
                    data.len(),
                    dims
                ),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(dims);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let v = f(i, j, k);
                    t.set(i, j, k, v);
                }
            }
        }
        t
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, t: usize) -> f64 {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && t < self.dims[2]);
        self.data[(i * self.dims[1] + j) * self.dims[2] + t]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, t: usize, v: f64) {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && t < self.dims[2]);
        self.data[(i * self.dims[1] + j) * self.dims[2] + t] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Serialize to the on-disk JSON form
    /// `{"dims":[I,J,T],"order":"row-major","data":[...]}`.
    pub fn to_json(&self) -> String {
        let file = TensorFile {
            dims: self.dims,
            order: "row-major".to_string(),
            data: self.data.clone(),
        };
        serde_json::to_string(&file).expect("tensor serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, TensorError> {
        let file: TensorFile = serde_json::from_str(s)?;
        if file.order != "row-major" {
            return Err(TensorError::UnsupportedOrder { order: file.order });
        }
        Tensor3::from_vec(file.dims, file.data)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    dims: [usize; 3],
    order: String,
    data: Vec<f64>,
}

/// Matrix with orthonormal columns and canonical signs, as produced by
/// [`truncated_svd`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    m: Matrix,
}

impl FactorMatrix {
    /// Wrap a matrix, checking column orthonormality to 1e-10.
    pub fn new(m: Matrix) -> Result<Self, TensorError> {
        let defect = orthonormality_defect(&m);
        if defect > 1e-10 {
            return Err(TensorError::NotOrthonormal { defect });
        }
        Ok(FactorMatrix { m })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.m.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.m.cols()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.m.at(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }
}

/// Max-norm of `MᵀM − I`.
pub fn orthonormality_defect(m: &Matrix) -> f64 {
    let g = m.t_matmul(m);
    let mut defect = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let id = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((g.at(i, j) - id).abs());
        }
    }
    defect
}

/// Mode-n unfolding. Rows are indexed by the chosen mode; columns by the
/// remaining modes in ascending order, last varying fastest.
pub fn unfold(t: &Tensor3, mode: usize) -> Result<Matrix, TensorError> {
    let [i_dim, j_dim, t_dim] = t.dims();
    match mode {
        1 => Ok(Matrix::from_vec(i_dim, j_dim * t_dim, t.data().to_vec())),
        2 => {
            let mut m = Matrix::zeros(j_dim, i_dim * t_dim);
            for i in 0..i_dim {
                for j in 0..j_dim {
                    for k in 0..t_dim {
                        m.set(j, i * t_dim + k, t.at(i, j, k));
                    }
                }
            }
            Ok(m)
        }
        3 => {
            let mut m = Matrix::zeros(t_dim, i_dim * j_dim);
            for i in 0..i_dim {
                for j in 0..j_dim {
                    for k in 0..t_dim {
                        m.set(k, i * j_dim + j, t.at(i, j, k));
                    }
                }
            }
            Ok(m)
        }
        _ => Err(TensorError::InvalidMode { mode }),
    }
}

/// Inverse of [`unfold`]: reassemble a tensor of shape `dims` from its
/// mode-n unfolding.
pub fn fold(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3, TensorError> {
    let [i_dim, j_dim, t_dim] = dims;
    let expected = match mode {
        1 => (i_dim, j_dim * t_dim),
        2 => (j_dim, i_dim * t_dim),
        3 => (t_dim, i_dim * j_dim),
        _ => return Err(TensorError::InvalidMode { mode }),
    };
    if (m.rows(), m.cols()) != expected {
        return Err(TensorError::ShapeMismatch {
            context: format!(
                "mode-{mode} fold of {}×{} into dims {:?} (expected {}×{})",
                m.rows(),
                m.cols(),
                dims,
                expected.0,
                expected.1
            ),
        });
    }
    match mode {
        1 => Tensor3::from_vec(dims, m.data().to_vec()),
        2 => {
            let mut t = Tensor3::zeros(dims);
            for i in 0..i_dim {
                for j in 0..j_dim {
                    for k in 0..t_dim {
                        t.set(i, j, k, m.at(j, i * t_dim + k));
                    }
                }
            }
            Ok(t)
        }
        3 => {
            let mut t = Tensor3::zeros(dims);
            for i in 0..i_dim {
                for j in 0..j_dim {
                    for k in 0..t_dim {
                        t.set(i, j, k, m.at(k, i * j_dim + j));
                    }
                }
            }
            Ok(t)
        }
        _ => unreachable!(),
    }
}

/// Mode-n product `t ×ₙ m`: the extent along `mode` is replaced by
/// `m.rows()`. Requires `m.cols()` equal to the current extent.
pub fn mode_product(t: &Tensor3, m: &Matrix, mode: usize) -> Result<Tensor3, TensorError> {
    if !(1..=3).contains(&mode) {
        return Err(TensorError::InvalidMode { mode });
    }
    if m.cols() != t.dims()[mode - 1] {
        return Err(TensorError::ShapeMismatch {
            context: format!(
                "mode-{mode} product: matrix has {} columns, tensor extent is {}",
                m.cols(),
                t.dims()[mode - 1]
            ),
        });
    }
    let mut dims = t.dims();
    dims[mode - 1] = m.rows();
    let unf = unfold(t, mode)?;
    fold(&m.matmul(&unf), mode, dims)
}

/// Result of an energy-truncated SVD: the first `rank` left singular
/// vectors plus the full (nonzero) singular spectrum.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub factor: FactorMatrix,
    /// All singular values above the relative zero floor, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

/// Keep the smallest leading rank whose cumulative squared singular
/// values reach `energy_threshold` of the total. An all-zero matrix
/// yields rank 0 with an empty factor (sentinel, not an error).
pub fn truncated_svd(m: &Matrix, energy_threshold: f64) -> Result<TruncatedSvd, TensorError> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(TensorError::InvalidThreshold { value: energy_threshold });
    }
    let svd = thin_svd(m);
    let s = svd.s;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut rank = 0;
    if total > 0.0 {
        let mut cum = 0.0;
        for &sv in &s {
            cum += sv * sv;
            rank += 1;
            if cum / total >= energy_threshold {
                break;
            }
        }
    }
    let mut u = Matrix::zeros(m.rows(), rank);
    for i in 0..m.rows() {
        for j in 0..rank {
            u.set(i, j, svd.u.at(i, j));
        }
    }
    Ok(TruncatedSvd { factor: FactorMatrix::new(u)?, singular_values: s, rank })
}

/// Tucker decomposition `χ ≈ ξ ×₁ U ×₂ V ×₃ W` with the per-mode
/// singular spectra recorded at the step where each mode was processed.
#[derive(Debug, Clone)]
pub struct TuckerDecomp {
    pub core: Tensor3,
    /// Factors in mode order: `[U (I×r1), V (J×r2), W (T×r3)]`.
    pub factors: [FactorMatrix; 3],
    /// Per-mode singular spectra (descending, non-negative). Spectra for
    /// later modes in the processing order describe the partially
    /// contracted tensor, as is inherent to sequential truncation.
    pub spectra: [Vec<f64>; 3],
}

impl TuckerDecomp {
    pub fn u(&self) -> &FactorMatrix {
        &self.factors[0]
    }

    pub fn v(&self) -> &FactorMatrix {
        &self.factors[1]
    }

    pub fn w(&self) -> &FactorMatrix {
        &self.factors[2]
    }

    /// Retained ranks `(r1, r2, r3)`.
    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims()
    }

    pub fn to_json(&self) -> String {
        let file = TuckerFile {
            core: TensorFile {
                dims: self.core.dims(),
                order: "row-major".to_string(),
                data: self.core.data().to_vec(),
            },
            factors: self
                .factors
                .iter()
                .map(|f| MatrixFile {
                    rows: f.rows(),
                    cols: f.cols(),
                    data: f.matrix().data().to_vec(),
                })
                .collect(),
            spectra: self.spectra.to_vec(),
        };
        serde_json::to_string(&file).expect("decomposition serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, TensorError> {
        let file: TuckerFile = serde_json::from_str(s)?;
        if file.core.order != "row-major" {
            return Err(TensorError::UnsupportedOrder { order: file.core.order });
        }
        let core = Tensor3::from_vec(file.core.dims, file.core.data)?;
        if file.factors.len() != 3 || file.spectra.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                context: "decomposition requires exactly 3 factors and 3 spectra".into(),
            });
        }
        let mut factors = Vec::new();
        for (n, f) in file.factors.into_iter().enumerate() {
            if f.data.len() != f.rows * f.cols {
                return Err(TensorError::ShapeMismatch {
                    context: format!("factor {n} data length"),
                });
            }
            if f.cols != core.dims()[n] {
                return Err(TensorError::ShapeMismatch {
                    context: format!(
                        "factor {n} has {} columns but core extent is {}",
                        f.cols,
                        core.dims()[n]
                    ),
                });
            }
            factors.push(FactorMatrix::new(Matrix::from_vec(f.rows, f.cols, f.data))?);
        }
        let spectra: [Vec<f64>; 3] = file
            .spectra
            .try_into()
            .map_err(|_| TensorError::ShapeMismatch { context: "spectra".into() })?;
        let factors: [FactorMatrix; 3] =
            factors.try_into().expect("length checked above");
        Ok(TuckerDecomp { core, factors, spectra })
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TuckerFile {
    core: TensorFile,
    factors: Vec<MatrixFile>,
    spectra: Vec<Vec<f64>>,
}

/// Sequentially truncated higher-order SVD.
///
/// Modes are processed in `mode_order`; at each step the working
/// tensor's mode unfolding is decomposed with [`truncated_svd`] at that
/// mode's threshold and the working tensor is contracted by the factor
/// transpose. The result is deterministic: identical input bytes yield
/// identical output bytes.
pub fn st_hosvd(
    t: &Tensor3,
    thresholds: [f64; 3],
    mode_order: [usize; 3],
) -> Result<TuckerDecomp, TensorError> {
    {
        let mut sorted = mode_order;
        sorted.sort_unstable();
        if sorted != [1, 2, 3] {
            return Err(TensorError::InvalidModeOrder { order: mode_order });
        }
    }
    for &tau in &thresholds {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(TensorError::InvalidThreshold { value: tau });
        }
    }
    let mut working = t.clone();
    let mut factors: [Option<FactorMatrix>; 3] = [None, None, None];
    let mut spectra: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &mode in &mode_order {
        let unf = unfold(&working, mode)?;
        let tsvd = truncated_svd(&unf, thresholds[mode - 1])?;
        working = mode_product(&working, &tsvd.factor.matrix().transpose(), mode)?;
        spectra[mode - 1] = tsvd.singular_values;
        factors[mode - 1] = Some(tsvd.factor);
    }
    let factors = factors.map(|f| f.expect("every mode visited once"));
    Ok(TuckerDecomp { core: working, factors, spectra })
}

/// [`st_hosvd`] with [`DEFAULT_THRESHOLDS`] and ascending mode order.
pub fn st_hosvd_default(t: &Tensor3) -> Result<TuckerDecomp, TensorError> {
    st_hosvd(t, DEFAULT_THRESHOLDS, DEFAULT_MODE_ORDER)
}

/// Low-dimensional parameters: one row of `r3` temporal coefficients per
/// (condition, behavior) pair, i.e. `A ∈ R^{I×J×r3}` stored as an
/// `(I·J)×r3` matrix with row index `i·J + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedParams {
    pub conditions: usize,
    pub behaviors: usize,
    pub temporal_rank: usize,
    matrix: Matrix,
}

impl ReducedParams {
    pub fn from_matrix(
        conditions: usize,
        behaviors: usize,
        matrix: Matrix,
    ) -> Result<Self, TensorError> {
        if matrix.rows() != conditions * behaviors {
            return Err(TensorError::ShapeMismatch {
                context: format!(
                    "reduced parameters need {}×r rows, got {}",
                    conditions * behaviors,
                    matrix.rows()
                ),
            });
        }
        Ok(ReducedParams {
            conditions,
            behaviors,
            temporal_rank: matrix.cols(),
            matrix,
        })
    }

    /// Coefficient `A[i, j, k]`.
    #[inline]
    pub fn at(&self, condition: usize, behavior: usize, k: usize) -> f64 {
        self.matrix.at(condition * self.behaviors + behavior, k)
    }

    /// The `(I·J)×r3` coefficient matrix.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Temporal coefficient row for one (condition, behavior) pair.
    pub fn row(&self, condition: usize, behavior: usize) -> &[f64] {
        self.matrix.row(condition * self.behaviors + behavior)
    }
}

/// Project a decomposition to reduced parameters: `A = ξ ×₁ U ×₂ V`,
/// the coefficients of the data in the truncated temporal basis. When
/// modes 1 and 2 are untruncated this equals the direct projection
/// `χ ×₃ W̃ᵀ` of the original data.
pub fn project_reduced(d: &TuckerDecomp) -> Result<ReducedParams, TensorError> {
    let b = mode_product(&d.core, d.u().matrix(), 1)?;
    let b = mode_product(&b, d.v().matrix(), 2)?;
    let [i_dim, j_dim, r3] = b.dims();
    // Row-major (i,j,k) storage is already the (I·J)×r3 layout.
    let m = Matrix::from_vec(i_dim * j_dim, r3, b.data().to_vec());
    ReducedParams::from_matrix(i_dim, j_dim, m)
}

/// Full reconstruction `ξ ×₁ U ×₂ V ×₃ W`.
pub fn reconstruct(d: &TuckerDecomp) -> Result<Tensor3, TensorError> {
    let t = mode_product(&d.core, d.u().matrix(), 1)?;
    let t = mode_product(&t, d.v().matrix(), 2)?;
    mode_product(&t, d.w().matrix(), 3)
}

/// Reconstruction through the temporal basis only: `A ×₃ W̃`. Identical
/// to [`reconstruct`] of the decomposition the parameters came from.
pub fn reconstruct_reduced(
    a: &ReducedParams,
    w: &FactorMatrix,
) -> Result<Tensor3, TensorError> {
    let t = Tensor3::from_vec(
        [a.conditions, a.behaviors, a.temporal_rank],
        a.matrix().data().to_vec(),
    )?;
    mode_product(&t, w.matrix(), 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_err(a: &Tensor3, b: &Tensor3) -> f64 {
        assert_eq!(a.dims(), b.dims());
        let num: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        num / b.frobenius_norm().max(1e-300)
    }

    /// 3×2×4 reference tensor (frozen from a seeded generator) used for
    /// the cross-checked decomposition below.
    fn reference_tensor() -> Tensor3 {
        let data = vec![
            0.30471707975443135,
            -1.0399841062404955,
            0.75045119580645725,
            0.94056471639121386,
            -1.9510351886538364,
            -1.3021795068623181,
            0.12784040316728537,
            -0.31624259234358221,
            -0.016801157504288795,
            -0.85304392757358005,
            0.87939797486282856,
            0.77779193542894831,
            0.066030697561216045,
            1.1272412069680329,
            0.4675093422520456,
            -0.85929246288323824,
            0.36875078408249884,
            -0.9588826008289989,
            0.87845030130727253,
            -0.049925910986252896,
            -0.18486236354526056,
            -0.68092954440394138,
            1.2225413386740303,
            -0.15452948206880215,
        ];
        Tensor3::from_vec([3, 2, 4], data).unwrap()
    }

    #[test]
    fn counting_tensor_unfoldings_match_index_enumeration() {
        let t = Tensor3::from_vec([2, 2, 2], (1..=8).map(|x| x as f64).collect()).unwrap();
        let m1 = unfold(&t, 1).unwrap();
        assert_eq!(m1.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let m2 = unfold(&t, 2).unwrap();
        assert_eq!(m2.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let m3 = unfold(&t, 3).unwrap();
        assert_eq!(m3.data(), &[1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_tensor_unfolds_to_zero_matrix() {
        let t = Tensor3::zeros([3, 4, 5]);
        let m = unfold(&t, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 20));
        assert!(m.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_mode_is_rejected() {
        let t = Tensor3::zeros([2, 2, 2]);
        assert!(matches!(unfold(&t, 0), Err(TensorError::InvalidMode { mode: 0 })));
        assert!(matches!(unfold(&t, 4), Err(TensorError::InvalidMode { mode: 4 })));
        let m = Matrix::identity(2);
        assert!(matches!(
            mode_product(&t, &m, 5),
            Err(TensorError::InvalidMode { mode: 5 })
        ));
    }

    #[test]
    fn mode_product_identity_and_scaling() {
        let t = reference_tensor();
        let id = Matrix::identity(3);
        let same = mode_product(&t, &id, 1).unwrap();
        assert_eq!(same.data(), t.data());
        let mut twice = Matrix::identity(2);
        for i in 0..2 {
            twice.set(i, i, 2.0);
        }
        let doubled = mode_product(&t, &twice, 2).unwrap();
        for (a, b) in doubled.data().iter().zip(t.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn mode_product_shape_mismatch_is_rejected() {
        let t = Tensor3::zeros([3, 2, 4]);
        let m = Matrix::identity(5);
        assert!(matches!(
            mode_product(&t, &m, 1),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rank_one_mode_product_matches_outer_product_oracle() {
        // t = u∘v∘w; (m·u)∘v∘w must equal t ×₁ m.
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0];
        let w = [0.5, 2.0, -1.0, 4.0];
        let t = Tensor3::from_fn([3, 2, 4], |i, j, k| u[i] * v[j] * w[k]);
        let m = Matrix::from_rows(2, 3, &[1.0, 1.0, 0.0, 0.5, -1.0, 2.0]);
        let got = mode_product(&t, &m, 1).unwrap();
        let mu = [
            1.0 * u[0] + 1.0 * u[1] + 0.0 * u[2],
            0.5 * u[0] - 1.0 * u[1] + 2.0 * u[2],
        ];
        let want = Tensor3::from_fn([2, 2, 4], |i, j, k| mu[i] * v[j] * w[k]);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn truncated_svd_rank_one_diagonal() {
        let m = Matrix::from_rows(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let t = truncated_svd(&m, 0.95).unwrap();
        assert_eq!(t.rank, 1);
        assert_eq!(t.singular_values, vec![3.0]);
        assert_eq!(t.factor.cols(), 1);
    }

    #[test]
    fn truncated_svd_full_threshold_keeps_all_nonzero_directions() {
        let m = Matrix::from_rows(3, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0, 2.0, 0.0, 2.0]);
        // Rank-2 matrix (third column = sum of first two).
        let t = truncated_svd(&m, 1.0).unwrap();
        assert_eq!(t.rank, 2);
        assert!(orthonormality_defect(t.factor.matrix()) <= 1e-10);
    }

    #[test]
    fn truncated_svd_equal_spectrum_needs_all_columns() {
        // Orthogonal 4×4 matrix: all singular values 1; 0.95·4 > 3.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = Matrix::from_rows(
            4,
            4,
            &[
                s, s, 0.0, 0.0, //
                s, -s, 0.0, 0.0, //
                0.0, 0.0, s, s, //
                0.0, 0.0, s, -s,
            ],
        );
        let t = truncated_svd(&m, 0.95).unwrap();
        assert_eq!(t.rank, 4);
    }

    #[test]
    fn truncated_svd_zero_matrix_sentinel() {
        let m = Matrix::zeros(3, 2);
        let t = truncated_svd(&m, 0.9).unwrap();
        assert_eq!(t.rank, 0);
        assert_eq!(t.factor.cols(), 0);
        assert!(t.singular_values.is_empty());
    }

    #[test]
    fn truncated_svd_rejects_bad_thresholds() {
        let m = Matrix::identity(2);
        for tau in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                truncated_svd(&m, tau),
                Err(TensorError::InvalidThreshold { .. })
            ));
        }
    }

    #[test]
    fn st_hosvd_matches_reference_decomposition() {
        // Frozen from an independent implementation (LAPACK SVD with the
        // same unfolding, threshold, and sign conventions).
        let t = reference_tensor();
        let d = st_hosvd(&t, [0.85, 1.0, 0.92], [1, 2, 3]).unwrap();
        assert_eq!(d.ranks(), [2, 2, 3]);
        let want_s1 = [3.2132137209737204, 2.0587732878089833, 1.3644434175740592];
        let want_s2 = [2.9700810001221636, 2.3962280191924412];
        let want_s3 = [
            2.9539675657656876,
            1.9582465815301622,
            1.4104110810484389,
            0.11565637049102352,
        ];
        for (got, want) in [
            (&d.spectra[0], &want_s1[..]),
            (&d.spectra[1], &want_s2[..]),
            (&d.spectra[2], &want_s3[..]),
        ] {
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-10, "spectrum: {g} vs {w}");
            }
        }
        let want_u = [
            0.84323701294789766,
            -0.38998191802356452,
            0.25785143274623867,
            0.89733522047758496,
            0.47166087247663385,
            0.20664850762854778,
        ];
        let want_v = [
            0.30221501112485954,
            0.95323978465588666,
            0.95323978465588666,
            -0.30221501112485954,
        ];
        let want_w = [
            0.38045472837856098,
            0.80307234196799171,
            0.0080151682741725627,
            0.8069497557644274,
            -0.09584377122781268,
            0.28792304380385575,
            -0.39478714238618595,
            0.29497662305210726,
            0.84592080781063228,
            -0.21961193850215913,
            0.50880013456725004,
            -0.44883634527215704,
        ];
        let want_core = [
            -2.2207993461243443,
            -0.84470316141420798,
            0.62663923182557524,
            -1.1881990873723036,
            1.6949290202527962,
            0.010678858188198359,
            1.007226735646704,
            0.42987884976443863,
            1.2580577079726663,
            -1.1694664918737332,
            0.252242014742803,
            -0.11730070792470655,
        ];
        for (got, want, label) in [
            (d.u().matrix().data(), &want_u[..], "U"),
            (d.v().matrix().data(), &want_v[..], "V"),
            (d.w().matrix().data(), &want_w[..], "W"),
            (d.core.data(), &want_core[..], "core"),
        ] {
            assert_eq!(got.len(), want.len(), "{label} size");
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-9, "{label}: {g} vs {w}");
            }
        }
        // Reference reconstruction error for this truncation.
        let recon = reconstruct(&d).unwrap();
        let err = rel_err(&recon, &t);
        assert!((err - 0.33787614258057286).abs() <= 1e-10);
    }

    #[test]
    fn st_hosvd_error_equals_discarded_energy() {
        // Sequential truncation discards mutually orthogonal components,
        // so the squared reconstruction error is exactly the sum of the
        // dropped squared singular values across the per-mode steps.
        let t = reference_tensor();
        let d = st_hosvd(&t, [0.85, 1.0, 0.92], [1, 2, 3]).unwrap();
        let recon = reconstruct(&d).unwrap();
        let err_sq: f64 = recon
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ranks = d.ranks();
        let dropped: f64 = (0..3)
            .map(|n| d.spectra[n][ranks[n]..].iter().map(|s| s * s).sum::<f64>())
            .sum();
        assert!(
            (err_sq - dropped).abs() <= 1e-10 * dropped.max(1.0),
            "err² {err_sq} vs discarded energy {dropped}"
        );
        // And the threshold bound: err² ≤ Σ_n (1 − τ_n) · total energy.
        let total = t.frobenius_norm().powi(2);
        let bound = (1.0 - 0.85) + (1.0 - 1.0) + (1.0 - 0.92);
        assert!(err_sq / total <= bound + 1e-12);
    }

    #[test]
    fn rank_one_tensor_is_exact_at_rank_one() {
        let u = [1.0, -0.5, 2.0, 0.25];
        let v = [1.0, 3.0];
        let w = [0.1, -0.2, 0.4, 1.0, -1.5];
        let t = Tensor3::from_fn([4, 2, 5], |i, j, k| u[i] * v[j] * w[k]);
        let d = st_hosvd(&t, [1.0, 1.0, 1.0], [1, 2, 3]).unwrap();
        assert_eq!(d.ranks(), [1, 1, 1]);
        let recon = reconstruct(&d).unwrap();
        assert!(rel_err(&recon, &t) <= 1e-10);
    }

    #[test]
    fn lossless_thresholds_reconstruct_exactly() {
        let t = reference_tensor();
        let d = st_hosvd(&t, [1.0, 1.0, 1.0], [1, 2, 3]).unwrap();
        let recon = reconstruct(&d).unwrap();
        assert!(rel_err(&recon, &t) <= 1e-10);
    }

    #[test]
    fn decomposition_is_bitwise_deterministic() {
        let t = reference_tensor();
        let d1 = st_hosvd(&t, [0.9, 1.0, 0.9], [1, 2, 3]).unwrap();
        let d2 = st_hosvd(&t, [0.9, 1.0, 0.9], [1, 2, 3]).unwrap();
        assert_eq!(d1.core.data(), d2.core.data());
        for n in 0..3 {
            assert_eq!(d1.factors[n].matrix().data(), d2.factors[n].matrix().data());
            assert_eq!(d1.spectra[n], d2.spectra[n]);
        }
    }

    #[test]
    fn factor_signs_are_canonical() {
        let t = reference_tensor();
        let d = st_hosvd(&t, [1.0, 1.0, 1.0], [1, 2, 3]).unwrap();
        for f in &d.factors {
            for j in 0..f.cols() {
                let col: Vec<f64> = (0..f.rows()).map(|i| f.at(i, j)).collect();
                let mut imax = 0;
                let mut vmax = 0.0f64;
                for (i, &x) in col.iter().enumerate() {
                    if x.abs() > vmax {
                        vmax = x.abs();
                        imax = i;
                    }
                }
                assert!(col[imax] > 0.0, "column {j} sign not canonical");
            }
        }
    }

    #[test]
    fn raising_a_threshold_never_lowers_the_rank() {
        let t = reference_tensor();
        let grid = [0.3, 0.5, 0.7, 0.9, 0.99, 1.0];
        for mode in 0..3 {
            let mut last = 0usize;
            for &tau in &grid {
                let mut taus = [1.0, 1.0, 1.0];
                taus[mode] = tau;
                let d = st_hosvd(&t, taus, [1, 2, 3]).unwrap();
                let r = d.ranks()[mode];
                assert!(r >= last, "mode {mode}: rank fell from {last} to {r} at τ={tau}");
                last = r;
            }
        }
    }

    #[test]
    fn invalid_mode_order_is_rejected() {
        let t = Tensor3::zeros([2, 2, 2]);
        assert!(matches!(
            st_hosvd(&t, [1.0, 1.0, 1.0], [1, 1, 3]),
            Err(TensorError::InvalidModeOrder { .. })
        ));
    }

    #[test]
    fn projected_params_match_direct_temporal_projection() {
        // With modes 1 and 2 untruncated, A = ξ ×₁ U ×₂ V equals the
        // direct projection χ ×₃ W̃ᵀ. Conditions get independent random
        // weights over a smooth temporal basis so mode 1 is full rank
        // (square orthogonal U ⇒ the identity holds to working
        // precision) while the temporal mode still compresses.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let coef: Vec<f64> = (0..5 * 2 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = Tensor3::from_fn([5, 2, 50], |i, j, k| {
            let x = k as f64 / 49.0;
            (0..6)
                .map(|m| {
                    let c = coef[(i * 2 + j) * 6 + m];
                    c * (std::f64::consts::PI * (m as f64 + 1.0) * x).cos()
                })
                .sum()
        });
        let d = st_hosvd(&t, [1.0, 1.0, 0.95], [1, 2, 3]).unwrap();
        let r3 = d.ranks()[2];
        assert!(r3 < 50, "temporal mode should truncate");
        let a = project_reduced(&d).unwrap();
        assert_eq!(a.matrix().rows(), 10);
        assert_eq!(a.matrix().cols(), r3);
        let direct = mode_product(&t, &d.w().matrix().transpose(), 3).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                for k in 0..r3 {
                    let diff = (a.at(i, j, k) - direct.at(i, j, k)).abs();
                    assert!(diff <= 1e-10, "A[{i},{j},{k}] off by {diff}");
                }
            }
        }
        // Reconstruction through W̃ matches the full reconstruction.
        let via_reduced = reconstruct_reduced(&a, d.w()).unwrap();
        let full = reconstruct(&d).unwrap();
        for (x, y) in via_reduced.data().iter().zip(full.data()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_tensor_projects_to_empty_params() {
        let t = Tensor3::zeros([3, 2, 5]);
        let d = st_hosvd(&t, [0.95, 1.0, 0.95], [1, 2, 3]).unwrap();
        assert_eq!(d.ranks(), [0, 0, 0]);
        let a = project_reduced(&d).unwrap();
        // One (empty) coefficient row per (condition, behavior) pair.
        assert_eq!(a.matrix().rows(), 6);
        assert_eq!(a.matrix().cols(), 0);
        assert!(a.matrix().data().is_empty());
        // Reconstruction of the empty decomposition is the zero tensor.
        let r = reconstruct(&d).unwrap();
        assert_eq!(r.dims(), [3, 2, 5]);
        assert!(r.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn full_rank_projection_round_trips() {
        let t = reference_tensor();
        let d = st_hosvd(&t, [1.0, 1.0, 1.0], [1, 2, 3]).unwrap();
        let a = project_reduced(&d).unwrap();
        let recon = reconstruct_reduced(&a, d.w()).unwrap();
        assert!(rel_err(&recon, &t) <= 1e-10);
    }

    #[test]
    fn rank_111_core_is_scaled_outer_product() {
        let core = Tensor3::from_vec([1, 1, 1], vec![2.5]).unwrap();
        let u = FactorMatrix::new(Matrix::from_rows(3, 1, &[0.6, 0.8, 0.0])).unwrap();
        let v = FactorMatrix::new(Matrix::from_rows(2, 1, &[1.0, 0.0])).unwrap();
        let w = FactorMatrix::new(Matrix::from_rows(2, 1, &[0.0, 1.0])).unwrap();
        let d = TuckerDecomp {
            core,
            factors: [u, v, w],
            spectra: [vec![2.5], vec![2.5], vec![2.5]],
        };
        let t = reconstruct(&d).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..2 {
                    let want = 2.5
                        * [0.6, 0.8, 0.0][i]
                        * [1.0, 0.0][j]
                        * [0.0, 1.0][k];
                    assert!((t.at(i, j, k) - want).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn tensor_json_round_trip_preserves_exact_bytes() {
        let t = reference_tensor();
        let s = t.to_json();
        assert!(s.contains("\"dims\":[3,2,4]"));
        assert!(s.contains("\"order\":\"row-major\""));
        let back = Tensor3::from_json(&s).unwrap();
        assert_eq!(back.dims(), t.dims());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn tensor_json_rejects_bad_inputs() {
        assert!(matches!(
            Tensor3::from_json(r#"{"dims":[2,2,2],"order":"column-major","data":[0,0,0,0,0,0,0,0]}"#),
            Err(TensorError::UnsupportedOrder { .. })
        ));
        assert!(matches!(
            Tensor3::from_json(r#"{"dims":[2,2,2],"order":"row-major","data":[1,2,3]}"#),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(Tensor3::from_json("not json").is_err());
    }

    #[test]
    fn tucker_json_round_trip() {
        let t = reference_tensor();
        let d = st_hosvd(&t, [0.85, 1.0, 0.92], [1, 2, 3]).unwrap();
        let s = d.to_json();
        let back = TuckerDecomp::from_json(&s).unwrap();
        assert_eq!(back.core.data(), d.core.data());
        for n in 0..3 {
            assert_eq!(back.factors[n].matrix().data(), d.factors[n].matrix().data());
            assert_eq!(back.spectra[n], d.spectra[n]);
        }
        let recon = reconstruct(&back).unwrap();
        assert_eq!(recon.dims(), [3, 2, 4]);
    }

    #[test]
    fn non_finite_data_is_rejected_at_construction() {
        let err = Tensor3::from_vec([1, 1, 2], vec![1.0, f64::NAN]);
        assert!(matches!(err, Err(TensorError::NonFinite { index: 1 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fold_unfold_round_trips_exactly(
            i in 1usize..=8,
            j in 1usize..=8,
            k in 1usize..=8,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..i * j * k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let t = Tensor3::from_vec([i, j, k], data).unwrap();
            for mode in 1..=3 {
                let m = unfold(&t, mode).unwrap();
                let back = fold(&m, mode, [i, j, k]).unwrap();
                prop_assert_eq!(back.data(), t.data());
            }
        }

        #[test]
        fn lossless_hosvd_on_random_tensors(
            i in 1usize..=6,
            j in 1usize..=6,
            k in 1usize..=6,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..i * j * k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let t = Tensor3::from_vec([i, j, k], data).unwrap();
            let d = st_hosvd(&t, [1.0, 1.0, 1.0], [1, 2, 3]).unwrap();
            let recon = reconstruct(&d).unwrap();
            prop_assert!(rel_err(&recon, &t) <= 1e-10);
            for f in &d.factors {
                prop_assert!(orthonormality_defect(f.matrix()) <= 1e-10);
            }
        }

        #[test]
        fn mode_products_on_distinct_modes_commute(
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = {
                let data: Vec<f64> = (0..3 * 4 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
                Tensor3::from_vec([3, 4, 5], data).unwrap()
            };
            let a_data: Vec<f64> = (0..2 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b_data: Vec<f64> = (0..2 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = Matrix::from_vec(2, 3, a_data);
            let b = Matrix::from_vec(2, 5, b_data);
            let ab = mode_product(&mode_product(&t, &a, 1).unwrap(), &b, 3).unwrap();
            let ba = mode_product(&mode_product(&t, &b, 3).unwrap(), &a, 1).unwrap();
            for (x, y) in ab.data().iter().zip(ba.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
