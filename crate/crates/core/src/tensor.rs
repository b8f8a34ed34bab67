//! Dense reference tensors and the tensor-algebra operations over them.
//!
//! Everything here is a plain function of immutable inputs. The compiler uses
//! the shape rules for static checking, and the test-suites use the value
//! semantics as the ground truth that compiled programs are compared against.
//!
//! Layout is row-major: the last index varies fastest, so last-mode fibers are
//! contiguous slices of the data array.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("tensor extents must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("data length {got} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: expected {expected}, got shape {got}")]
    BadOperand {
        op: &'static str,
        expected: &'static str,
        got: Shape,
    },
    #[error("index {index:?} out of bounds for shape {shape}")]
    OutOfBounds { index: Vec<usize>, shape: Shape },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Ordered list of positive extents. Rank 0 is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(TensorError::ZeroExtent(dims));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn vector(len: usize) -> Result<Self> {
        Shape::new(vec![len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Extent of the last mode (1 for scalars).
    pub fn last(&self) -> usize {
        self.0.last().copied().unwrap_or(1)
    }

    /// Number of last-mode fibers: the product of all extents but the last.
    pub fn fiber_count(&self) -> usize {
        match self.0.split_last() {
            Some((_, lead)) => lead.iter().product(),
            None => 1,
        }
    }

    /// Left-pad with extents of 1 up to `rank`.
    pub fn padded_to(&self, rank: usize) -> Shape {
        if self.rank() >= rank {
            return self.clone();
        }
        let mut dims = vec![1; rank - self.rank()];
        dims.extend_from_slice(&self.0);
        Shape(dims)
    }

    pub fn ravel(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() || index.iter().zip(&self.0).any(|(&i, &d)| i >= d) {
            return Err(TensorError::OutOfBounds {
                index: index.to_vec(),
                shape: self.clone(),
            });
        }
        Ok(ravel(index, &self.0))
    }

    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        unravel(flat, &self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Row-major flat offset of `index` within `dims`. No bounds checking.
pub fn ravel(index: &[usize], dims: &[usize]) -> usize {
    index.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Inverse of [`ravel`].
pub fn unravel(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut index = vec![0; dims.len()];
    for (slot, &d) in index.iter_mut().zip(dims).rev() {
        *slot = flat % d;
        flat /= d;
    }
    index
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let expected = shape.numel();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(DenseTensor { shape, data })
    }

    /// Convenience constructor for tests and literals; panics on a bad shape.
    pub fn from_dims(dims: &[usize], data: Vec<f64>) -> Self {
        let shape = Shape::new(dims.to_vec()).expect("positive extents");
        DenseTensor::new(shape, data).expect("data length matches shape")
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        DenseTensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let shape = Shape::vector(data.len()).expect("non-empty vector");
        DenseTensor { shape, data }
    }

    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DenseTensor::from_dims(&[rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = DenseTensor::zeros(Shape::new(vec![n, n]).expect("positive extent"));
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.shape.ravel(index)?])
    }

    /// Same data viewed under a different shape with the same element count.
    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        DenseTensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let &[rows, cols] = self.dims() else {
            return Err(TensorError::BadOperand {
                op: "transpose",
                expected: "a matrix",
                got: self.shape.clone(),
            });
        };
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = self.data[r * cols + c];
            }
        }
        DenseTensor::new(Shape(vec![cols, rows]), data)
    }

    fn column(&self, k: usize) -> DenseTensor {
        let (rows, cols) = (self.dims()[0], self.dims()[1]);
        DenseTensor::vector((0..rows).map(|r| self.data[r * cols + k]).collect())
    }

    fn row(&self, k: usize) -> DenseTensor {
        let cols = self.dims()[1];
        DenseTensor::vector(self.data[k * cols..(k + 1) * cols].to_vec())
    }
}

pub fn scalar_tensor_product(lambda: f64, x: &DenseTensor) -> DenseTensor {
    x.map(|v| lambda * v)
}

/// Elementwise sum (`sign = 1.0`) or difference (`sign = -1.0`) of equal shapes.
pub fn elementwise_add(x: &DenseTensor, y: &DenseTensor, sign: f64) -> Result<DenseTensor> {
    if x.shape != y.shape {
        return Err(TensorError::ShapeMismatch {
            op: "elementwise",
            lhs: x.shape.clone(),
            rhs: y.shape.clone(),
        });
    }
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| a + sign * b)
        .collect();
    DenseTensor::new(x.shape.clone(), data)
}

/// Result shape of the rank-n Kronecker product; the lower-rank operand is
/// padded with leading extents of 1.
pub fn kronecker_shape(x: &Shape, y: &Shape) -> Shape {
    let rank = x.rank().max(y.rank());
    let (xp, yp) = (x.padded_to(rank), y.padded_to(rank));
    Shape(xp.0.iter().zip(&yp.0).map(|(a, b)| a * b).collect())
}

pub fn kronecker(x: &DenseTensor, y: &DenseTensor) -> DenseTensor {
    let rank = x.rank().max(y.rank());
    let xs = x.shape.padded_to(rank);
    let ys = y.shape.padded_to(rank);
    let out_shape = kronecker_shape(&xs, &ys);
    let mut out = DenseTensor::zeros(out_shape.clone());
    let mut pos = vec![0; rank];
    for (fx, &xv) in x.data.iter().enumerate() {
        let xi = xs.unravel(fx);
        for (fy, &yv) in y.data.iter().enumerate() {
            let yi = ys.unravel(fy);
            for k in 0..rank {
                pos[k] = xi[k] * ys.0[k] + yi[k];
            }
            out.data[ravel(&pos, out_shape.dims())] = xv * yv;
        }
    }
    out
}

pub fn inner_product(x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    if x.shape != y.shape {
        return Err(TensorError::ShapeMismatch {
            op: "inner product",
            lhs: x.shape.clone(),
            rhs: y.shape.clone(),
        });
    }
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| a * b).sum())
}

/// Mode of `y` contracted by the dot product: second-to-last, or the only
/// mode of a vector.
pub fn dot_contraction_mode(y: &Shape) -> usize {
    y.rank().saturating_sub(2)
}

/// Shape of `x · y`: the contracted modes are dropped and the remaining
/// modes of `x` are followed by those of `y`.
pub fn dot_shape(x: &Shape, y: &Shape) -> Result<Shape> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "dot",
        lhs: x.clone(),
        rhs: y.clone(),
    };
    if x.rank() == 0 || y.rank() == 0 {
        return Err(mismatch());
    }
    let c = dot_contraction_mode(y);
    if x.last() != y.0[c] {
        return Err(mismatch());
    }
    let mut dims = x.0[..x.rank() - 1].to_vec();
    dims.extend(
        y.0.iter()
            .enumerate()
            .filter(|&(k, _)| k != c)
            .map(|(_, &d)| d),
    );
    Ok(Shape(dims))
}

/// Tensor dot product, contracting the last mode of `x` with the
/// second-to-last mode of `y` (the sole mode when `y` is a vector).
///
/// Computed fiber-by-fiber: each last-mode fiber of `x` is paired with each
/// contraction fiber of `y`.
pub fn dot(x: &DenseTensor, y: &DenseTensor) -> Result<DenseTensor> {
    let shape = dot_shape(&x.shape, &y.shape)?;
    let k_len = x.shape.last();
    let c = dot_contraction_mode(&y.shape);
    // y viewed as [outer, k, inner] around the contraction mode
    let outer: usize = y.dims()[..c].iter().product();
    let inner: usize = y.dims()[c + 1..].iter().product();
    let free = outer * inner;

    let mut data = Vec::with_capacity(shape.numel());
    for xf in x.data.chunks(k_len) {
        for o in 0..outer {
            for i in 0..inner {
                let base = o * k_len * inner + i;
                let s = xf
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| a * y.data[base + k * inner])
                    .sum();
                data.push(s);
            }
        }
    }
    debug_assert_eq!(data.len(), x.shape.fiber_count() * free);
    DenseTensor::new(shape, data)
}

fn require_matrix(op: &'static str, t: &DenseTensor) -> Result<(usize, usize)> {
    match t.dims() {
        &[r, c] => Ok((r, c)),
        _ => Err(TensorError::BadOperand {
            op,
            expected: "a matrix",
            got: t.shape.clone(),
        }),
    }
}

pub fn khatri_rao_shape(a: &Shape, b: &Shape) -> Result<Shape> {
    match (a.dims(), b.dims()) {
        (&[i, ka], &[j, kb]) if ka == kb => Ok(Shape(vec![i * j, ka])),
        _ => Err(TensorError::ShapeMismatch {
            op: "Khatri-Rao product",
            lhs: a.clone(),
            rhs: b.clone(),
        }),
    }
}

/// Column-wise Kronecker product: column k of the result is `a_k ⊗ b_k`.
pub fn khatri_rao(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    require_matrix("Khatri-Rao product", a)?;
    require_matrix("Khatri-Rao product", b)?;
    let shape = khatri_rao_shape(&a.shape, &b.shape)?;
    let (rows, cols) = (shape.dims()[0], shape.dims()[1]);
    let mut data = vec![0.0; rows * cols];
    for k in 0..cols {
        let col = kronecker(&a.column(k), &b.column(k));
        for (r, &v) in col.data.iter().enumerate() {
            data[r * cols + k] = v;
        }
    }
    DenseTensor::new(shape, data)
}

pub fn face_splitting_shape(a: &Shape, b: &Shape) -> Result<Shape> {
    match (a.dims(), b.dims()) {
        (&[ka, i], &[kb, j]) if ka == kb => Ok(Shape(vec![ka, i * j])),
        _ => Err(TensorError::ShapeMismatch {
            op: "face-splitting product",
            lhs: a.clone(),
            rhs: b.clone(),
        }),
    }
}

/// Row-wise Kronecker product: row k of the result is `a_k ⊗ b_k`.
pub fn face_splitting(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    require_matrix("face-splitting product", a)?;
    require_matrix("face-splitting product", b)?;
    let shape = face_splitting_shape(&a.shape, &b.shape)?;
    let data = (0..shape.dims()[0])
        .flat_map(|k| kronecker(&a.row(k), &b.row(k)).data)
        .collect();
    DenseTensor::new(shape, data)
}

pub fn cross(u: &DenseTensor, v: &DenseTensor) -> Result<DenseTensor> {
    for t in [u, v] {
        if t.dims() != [3] {
            return Err(TensorError::BadOperand {
                op: "cross product",
                expected: "a vector of length 3",
                got: t.shape.clone(),
            });
        }
    }
    let (a, b) = (&u.data, &v.data);
    Ok(DenseTensor::vector(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]))
}

/// Last-mode fibers in lexicographic order of their leading indices.
pub fn fibers(x: &DenseTensor) -> Result<Vec<DenseTensor>> {
    if x.rank() == 0 {
        return Err(TensorError::BadOperand {
            op: "fibers",
            expected: "rank of at least 1",
            got: x.shape.clone(),
        });
    }
    Ok(x.data
        .chunks(x.shape.last())
        .map(|c| DenseTensor::vector(c.to_vec()))
        .collect())
}

/// True iff shapes match and `max |x - y| <= tol * max(1, max |y|)`.
pub fn approx_equal(x: &DenseTensor, y: &DenseTensor, tol: f64) -> bool {
    if x.shape != y.shape {
        return false;
    }
    let scale = y.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    x.data
        .iter()
        .zip(&y.data)
        .all(|(a, b)| (a - b).abs() <= tol * scale)
}
