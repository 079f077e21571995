use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Column vector `[n, 1]`.
    pub fn column(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(
                op,
                format!("expected a matrix, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row-wise argmax; ties resolve to the lowest column.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let c = self.cols();
        self.data
            .chunks(c.max(1))
            .map(|row| {
                let mut best = 0;
                for (j, x) in row.iter().enumerate().skip(1) {
                    if *x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

/// `a[n,k] · b[k,m]`, accumulating into a fresh buffer.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// `a[n,k] · b[m,k]ᵀ`.
pub(crate) fn matmul_nt_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (x, y) in arow.iter().zip(brow) {
                acc = acc + *x * *y;
            }
            out[i * m + j] = acc;
        }
    }
    out
}

/// `a[k,n]ᵀ · b[k,m]`.
pub(crate) fn matmul_tn_raw<T: Scalar>(a: &[T], b: &[T], k: usize, n: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for p in 0..k {
        let arow = &a[p * n..(p + 1) * n];
        let brow = &b[p * m..(p + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}
