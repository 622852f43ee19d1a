//! Dense third-order tensors and the linear algebra around Tucker decompositions.
//!
//! Entries are stored mode-1-fastest: element `(i, j, k)` of a `d1 × d2 × d3`
//! tensor lives at `i + d1 * (j + d2 * k)`. With that layout the mode-1
//! matricization is the column-major `d1 × (d2·d3)` reshape of the buffer, and
//! its column blocks are the frontal slices, so a VAR transition tensor with
//! slices `A_1, …, A_p` has mode-1 matricization `(A_1, …, A_p)`.
//!
//! Matricizations follow the Kolda–Bader column ordering: in mode `s` the
//! remaining indices are enumerated in increasing mode order with the lowest
//! mode varying fastest.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// One of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Zero-based position of the mode.
    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    /// Converts a one-based mode number.
    fn try_from(mode: usize) -> Result<Self> {
        match mode {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => invalid(format!("mode must be 1, 2 or 3, got {other}")),
        }
    }
}

/// A dense real tensor of order three.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    /// Wraps a buffer laid out mode-1-fastest.
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return invalid(format!(
                "tensor of dims {dims:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive");
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    t.data[i + dims[0] * (j + dims[1] * k)] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Stacks `d1 × d2` matrices along the third mode.
    pub fn from_frontal_slices(slices: &[Matrix]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return invalid("at least one frontal slice is required");
        };
        let (rows, cols) = first.shape();
        if slices.iter().any(|s| s.shape() != (rows, cols)) {
            return invalid("frontal slices must share a shape");
        }
        let mut data = Vec::with_capacity(rows * cols * slices.len());
        for s in slices {
            data.extend_from_slice(s.as_slice());
        }
        Self::new([rows, cols, slices.len()], data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn dim(&self, mode: Mode) -> usize {
        self.dims[mode.index()]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    /// The `k`-th frontal slice `X[:, :, k]`.
    pub fn frontal_slice(&self, k: usize) -> Matrix {
        let [d1, d2, _] = self.dims;
        Matrix::from_column_slice(d1, d2, &self.data[k * d1 * d2..(k + 1) * d1 * d2])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of squared entries.
    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn inner(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "inner product of mismatched tensors");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, c: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor3) {
        assert_eq!(self.dims, other.dims, "axpy of mismatched tensors");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Mode-`s` matricization (unfolding).
    pub fn matricize(&self, mode: Mode) -> Matrix {
        let [d1, d2, d3] = self.dims;
        match mode {
            Mode::One => Matrix::from_column_slice(d1, d2 * d3, &self.data),
            Mode::Two => Matrix::from_fn(d2, d1 * d3, |j, c| {
                let (i, k) = (c % d1, c / d1);
                self.data[i + d1 * (j + d2 * k)]
            }),
            Mode::Three => Matrix::from_fn(d3, d1 * d2, |k, c| self.data[c + d1 * d2 * k]),
        }
    }

    /// Inverse of [`Tensor3::matricize`].
    pub fn fold(m: &Matrix, mode: Mode, dims: [usize; 3]) -> Result<Tensor3> {
        check_dims(dims)?;
        let [d1, d2, d3] = dims;
        let rows = dims[mode.index()];
        let cols = d1 * d2 * d3 / rows;
        if m.shape() != (rows, cols) {
            return invalid(format!(
                "cannot fold a {}x{} matrix along mode {} into dims {dims:?}",
                m.nrows(),
                m.ncols(),
                mode.index() + 1
            ));
        }
        let t = match mode {
            Mode::One => Tensor3 {
                dims,
                data: m.as_slice().to_vec(),
            },
            Mode::Two => Tensor3::from_fn(dims, |i, j, k| m[(j, i + d1 * k)]),
            Mode::Three => Tensor3::from_fn(dims, |i, j, k| m[(k, i + d1 * j)]),
        };
        Ok(t)
    }

    /// Mode-`s` product `X ×_s M`, replacing `d_s` by `M.nrows()`.
    pub fn mode_product(&self, m: &Matrix, mode: Mode) -> Result<Tensor3> {
        let d = self.dim(mode);
        if m.ncols() != d {
            return invalid(format!(
                "mode-{} product needs a matrix with {d} columns, got {}",
                mode.index() + 1,
                m.ncols()
            ));
        }
        if m.nrows() == 0 {
            return invalid("mode product with an empty matrix");
        }
        let mut dims = self.dims;
        dims[mode.index()] = m.nrows();
        if mode == Mode::One {
            // Mode-1 products act directly on the column-major buffer.
            let unfolded = self.matricize(Mode::One);
            let prod = m * unfolded;
            return Ok(Tensor3 {
                dims,
                data: prod.as_slice().to_vec(),
            });
        }
        let prod = m * self.matricize(mode);
        Tensor3::fold(&prod, mode, dims)
    }

    /// Applies `×_1 m1 ×_2 m2 ×_3 m3`.
    pub fn multilinear(&self, m1: &Matrix, m2: &Matrix, m3: &Matrix) -> Result<Tensor3> {
        self.mode_product(m1, Mode::One)?
            .mode_product(m2, Mode::Two)?
            .mode_product(m3, Mode::Three)
    }

    /// Projects onto the factor spaces: `X ×_1 m1ᵀ ×_2 m2ᵀ ×_3 m3ᵀ`.
    pub fn project(&self, m1: &Matrix, m2: &Matrix, m3: &Matrix) -> Result<Tensor3> {
        self.multilinear(&m1.transpose(), &m2.transpose(), &m3.transpose())
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return invalid(format!("tensor dims must be positive, got {dims:?}"));
    }
    Ok(())
}

impl Add for &Tensor3 {
    type Output = Tensor3;

    fn add(self, rhs: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, rhs.dims, "adding mismatched tensors");
        Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Tensor3 {
    type Output = Tensor3;

    fn sub(self, rhs: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, rhs.dims, "subtracting mismatched tensors");
        Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &Tensor3 {
    type Output = Tensor3;

    fn mul(self, c: f64) -> Tensor3 {
        self.scale(c)
    }
}

impl Neg for &Tensor3 {
    type Output = Tensor3;

    fn neg(self) -> Tensor3 {
        self.scale(-1.0)
    }
}

/// Core tensor plus one factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: Tensor3,
    /// Factor matrices for modes 1, 2 and 3; factor `j` is `d_j × r_j`.
    pub factors: [Matrix; 3],
    /// Whether every factor has orthonormal columns.
    pub orthonormal: bool,
}

impl TuckerFactors {
    pub fn new(core: Tensor3, factors: [Matrix; 3], orthonormal: bool) -> Result<Self> {
        for mode in Mode::ALL {
            let f = &factors[mode.index()];
            if f.ncols() != core.dim(mode) {
                return invalid(format!(
                    "factor {} has {} columns but the core has rank {}",
                    mode.index() + 1,
                    f.ncols(),
                    core.dim(mode)
                ));
            }
            if f.nrows() < f.ncols() {
                return invalid(format!(
                    "factor {} is {}x{}; rank cannot exceed dimension",
                    mode.index() + 1,
                    f.nrows(),
                    f.ncols()
                ));
            }
        }
        Ok(Self {
            core,
            factors,
            orthonormal,
        })
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims()
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.factors[0].nrows(),
            self.factors[1].nrows(),
            self.factors[2].nrows(),
        ]
    }

    /// `⟦core; U, V, L⟧`.
    pub fn reconstruct(&self) -> Result<Tensor3> {
        tucker_reconstruct(
            &self.core,
            &self.factors[0],
            &self.factors[1],
            &self.factors[2],
        )
    }
}

/// `core ×_1 u ×_2 v ×_3 l`.
pub fn tucker_reconstruct(core: &Tensor3, u: &Matrix, v: &Matrix, l: &Matrix) -> Result<Tensor3> {
    core.multilinear(u, v, l)
}

/// Leading singular triplets of a matrix.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `rows × r`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `cols × r`, orthonormal columns.
    pub v: Matrix,
}

/// All singular values of `m` in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// The rank-`r` truncated SVD. Each left singular vector is signed so that
/// its largest-magnitude entry is non-negative.
pub fn truncated_svd(m: &Matrix, r: usize) -> Result<TruncatedSvd> {
    let k = m.nrows().min(m.ncols());
    if r == 0 || r > k {
        return invalid(format!(
            "truncation rank {r} outside 1..={k} for a {}x{} matrix",
            m.nrows(),
            m.ncols()
        ));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical {
            message: "SVD of a matrix with non-finite entries".into(),
            trace: Vec::new(),
        });
    }
    let svd = m.clone().svd(true, true);
    let u_full = svd.u.expect("left singular vectors requested");
    let vt_full = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut u = Matrix::zeros(m.nrows(), r);
    let mut v = Matrix::zeros(m.ncols(), r);
    let mut s = Vec::with_capacity(r);
    for (dst, &src) in order.iter().take(r).enumerate() {
        let mut ucol = u_full.column(src).into_owned();
        let mut vcol = vt_full.row(src).transpose();
        if sign_flip_needed(ucol.as_slice()) {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
        s.push(svd.singular_values[src].max(0.0));
    }
    Ok(TruncatedSvd {
        u,
        singular_values: s,
        v,
    })
}

/// True when the largest-magnitude entry (first one on ties) is negative.
pub(crate) fn sign_flip_needed(col: &[f64]) -> bool {
    let mut best = 0.0f64;
    let mut best_val = 0.0f64;
    for &x in col {
        if x.abs() > best {
            best = x.abs();
            best_val = x;
        }
    }
    best_val < 0.0
}

/// Truncated higher-order SVD with the requested multilinear ranks.
pub fn hosvd(t: &Tensor3, ranks: [usize; 3]) -> Result<TuckerFactors> {
    let dims = t.dims();
    for (j, (&r, &d)) in ranks.iter().zip(&dims).enumerate() {
        if r == 0 || r > d {
            return invalid(format!("rank {r} for mode {} outside 1..={d}", j + 1));
        }
    }
    let mut factors: [Matrix; 3] = Default::default();
    for mode in Mode::ALL {
        let unfolded = t.matricize(mode);
        factors[mode.index()] = truncated_svd(&unfolded, ranks[mode.index()])?.u;
    }
    let core = t.project(&factors[0], &factors[1], &factors[2])?;
    TuckerFactors::new(core, factors, true)
}

/// Orthonormal basis `Q` and the invertible factor `P` with `m = Q P`.
#[derive(Debug, Clone)]
pub struct PolarFactors {
    pub basis: Matrix,
    pub factor: Matrix,
}

/// Polar decomposition of a full-column-rank matrix via its SVD:
/// `m = (U Vᵀ)(V Σ Vᵀ)`.
pub fn polar_decompose(m: &Matrix) -> Result<PolarFactors> {
    let (rows, cols) = m.shape();
    if cols == 0 || cols > rows {
        return Err(Error::RankDeficient(format!(
            "a {rows}x{cols} matrix cannot have full column rank"
        )));
    }
    let svd = truncated_svd(m, cols)?;
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[cols - 1];
    let tol = f64::EPSILON * rows as f64 * smax;
    if smax == 0.0 || smin <= tol {
        return Err(Error::RankDeficient(format!(
            "smallest singular value {smin:.3e} vs largest {smax:.3e}"
        )));
    }
    let basis = &svd.u * svd.v.transpose();
    let factor =
        &svd.v * Matrix::from_diagonal(&Vector::from_vec(svd.singular_values)) * svd.v.transpose();
    Ok(PolarFactors { basis, factor })
}

/// Orthonormal basis of the column space of `m`.
pub fn orthonormalize(m: &Matrix) -> Result<Matrix> {
    Ok(polar_decompose(m)?.basis)
}

/// Largest deviation of `mᵀm` from the identity.
pub fn orthonormality_defect(m: &Matrix) -> f64 {
    let gram = m.transpose() * m;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Largest sine of the principal angles between the column spaces of two
/// orthonormal matrices, i.e. `‖(I − BBᵀ)A‖₂`.
pub fn sin_theta_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return invalid(format!(
            "sin-theta distance needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    for (name, m) in [("first", a), ("second", b)] {
        let defect = orthonormality_defect(m);
        if defect > 1e-8 {
            return invalid(format!(
                "{name} argument is not orthonormal (defect {defect:.3e})"
            ));
        }
    }
    let residual = a - b * (b.transpose() * a);
    let s = singular_values(&residual);
    Ok(s.first().copied().unwrap_or(0.0).clamp(0.0, 1.0))
}

/// Orthogonal projector onto the complement of span(`q`) for orthonormal `q`.
pub fn complement_projector(q: &Matrix) -> Matrix {
    Matrix::identity(q.nrows(), q.nrows()) - q * q.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting_tensor() -> Tensor3 {
        Tensor3::new([2, 2, 2], (1..=8).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn matricize_matches_index_map() {
        let t = counting_tensor();
        let m1 = t.matricize(Mode::One);
        assert_eq!(
            m1,
            Matrix::from_row_slice(2, 4, &[1., 3., 5., 7., 2., 4., 6., 8.])
        );
        let m3 = t.matricize(Mode::Three);
        assert_eq!(
            m3,
            Matrix::from_row_slice(2, 4, &[1., 2., 3., 4., 5., 6., 7., 8.])
        );
        let m2 = t.matricize(Mode::Two);
        assert_eq!(
            m2,
            Matrix::from_row_slice(2, 4, &[1., 2., 5., 6., 3., 4., 7., 8.])
        );
    }

    #[test]
    fn degenerate_modes_give_a_column() {
        let t = Tensor3::new([3, 1, 1], vec![4., 5., 6.]).unwrap();
        assert_eq!(
            t.matricize(Mode::One),
            Matrix::from_column_slice(3, 1, &[4., 5., 6.])
        );
    }

    #[test]
    fn fold_round_trips() {
        let t = counting_tensor();
        for mode in Mode::ALL {
            assert_eq!(
                Tensor3::fold(&t.matricize(mode), mode, t.dims()).unwrap(),
                t
            );
        }
        let scalar = Tensor3::fold(&Matrix::from_element(1, 1, 5.0), Mode::Two, [1, 1, 1]).unwrap();
        assert_eq!(scalar.as_slice(), &[5.0]);
    }

    #[test]
    fn fold_rejects_bad_shape() {
        let m = Matrix::zeros(3, 3);
        assert!(matches!(
            Tensor3::fold(&m, Mode::One, [2, 2, 2]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invalid_mode_number() {
        assert!(Mode::try_from(0).is_err());
        assert!(Mode::try_from(4).is_err());
        assert_eq!(Mode::try_from(2).unwrap(), Mode::Two);
    }

    #[test]
    fn mode_product_identity_and_zero() {
        let t = counting_tensor();
        assert_eq!(
            t.mode_product(&Matrix::identity(2, 2), Mode::One).unwrap(),
            t
        );
        let z = t.mode_product(&Matrix::zeros(3, 2), Mode::Three).unwrap();
        assert_eq!(z.dims(), [2, 2, 3]);
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        assert!(t.mode_product(&Matrix::zeros(2, 3), Mode::Two).is_err());
    }

    #[test]
    fn frontal_slices_form_mode_one_blocks() {
        let a1 = Matrix::from_row_slice(2, 2, &[1., 2., 3., 4.]);
        let a2 = Matrix::from_row_slice(2, 2, &[5., 6., 7., 8.]);
        let t = Tensor3::from_frontal_slices(&[a1.clone(), a2.clone()]).unwrap();
        let m = t.matricize(Mode::One);
        assert_eq!(m.columns(0, 2), a1);
        assert_eq!(m.columns(2, 2), a2);
        assert_eq!(t.frontal_slice(1), a2);
    }

    #[test]
    fn tucker_single_entry() {
        let core = Tensor3::new([1, 1, 1], vec![2.0]).unwrap();
        let e1 = |n| {
            let mut m = Matrix::zeros(n, 1);
            m[(0, 0)] = 1.0;
            m
        };
        let f = TuckerFactors::new(core, [e1(3), e1(2), e1(2)], true).unwrap();
        let t = f.reconstruct().unwrap();
        assert_eq!(t.get(0, 0, 0), 2.0);
        assert_eq!(t.norm_squared(), 4.0);
    }

    #[test]
    fn tucker_identity_factors() {
        let t = counting_tensor();
        let i2 = Matrix::identity(2, 2);
        let f = TuckerFactors::new(t.clone(), [i2.clone(), i2.clone(), i2], false).unwrap();
        assert_eq!(f.reconstruct().unwrap(), t);
    }

    #[test]
    fn tucker_rejects_mismatched_factor() {
        let core = Tensor3::zeros([2, 2, 2]);
        let r = TuckerFactors::new(
            core,
            [
                Matrix::zeros(3, 2),
                Matrix::zeros(3, 1),
                Matrix::zeros(2, 2),
            ],
            false,
        );
        assert!(r.is_err());
    }

    #[test]
    fn svd_of_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 2.0, 1.0]));
        let svd = truncated_svd(&m, 2).unwrap();
        assert_eq!(svd.singular_values.len(), 2);
        assert!((svd.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((svd.singular_values[1] - 2.0).abs() < 1e-14);
        let id = truncated_svd(&Matrix::identity(3, 3), 3).unwrap();
        for s in id.singular_values {
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!(truncated_svd(&m, 0).is_err());
        assert!(truncated_svd(&m, 4).is_err());
    }

    #[test]
    fn svd_sign_rule() {
        let m = Matrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, -1.0]);
        let svd = truncated_svd(&m, 2).unwrap();
        for c in 0..2 {
            assert!(!sign_flip_needed(svd.u.column(c).as_slice()));
        }
    }

    #[test]
    fn hosvd_of_zero_tensor() {
        let t = Tensor3::zeros([3, 3, 2]);
        let f = hosvd(&t, [2, 2, 1]).unwrap();
        assert!(f.core.frobenius_norm() == 0.0);
        for m in &f.factors {
            assert!(orthonormality_defect(m) < 1e-10);
        }
        assert!(f.reconstruct().unwrap().frobenius_norm() == 0.0);
        assert!(hosvd(&t, [4, 1, 1]).is_err());
    }

    #[test]
    fn orthonormalize_scaled_identity() {
        let q = orthonormalize(&(Matrix::identity(3, 3) * 2.0)).unwrap();
        assert!((q - Matrix::identity(3, 3)).abs().max() < 1e-14);
        let rank_def = Matrix::from_row_slice(3, 2, &[1., 2., 2., 4., 3., 6.]);
        assert!(matches!(
            orthonormalize(&rank_def),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn sin_theta_basic_geometry() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(sin_theta_distance(&e1, &e1).unwrap() < 1e-15);
        assert!((sin_theta_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-15);
        let theta: f64 = 0.3;
        let b = Matrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()]);
        assert!((sin_theta_distance(&e1, &b).unwrap() - theta.sin()).abs() < 1e-14);
        let not_orth = Matrix::from_column_slice(2, 1, &[2.0, 0.0]);
        assert!(sin_theta_distance(&not_orth, &e1).is_err());
    }
}
