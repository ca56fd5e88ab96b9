use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Row-major dense array of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::dim("tensor data", &[want], &[data.len()]));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("tensor holds a non-finite entry".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Last extent; 1 for a scalar.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of every extent but the last.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// Elementwise `lambda * a + (1 - lambda) * b`.
pub fn mixup<T: Scalar>(a: &DenseTensor<T>, b: &DenseTensor<T>, lambda: T) -> Result<DenseTensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mixup", a.shape(), b.shape()));
    }
    Ok(DenseTensor {
        shape: a.shape.clone(),
        data: mix_slices(&a.data, &b.data, lambda),
    })
}

/// Weights `(w_a, w_b)` with `w_a + w_b = 1` chosen so that swapping the
/// operands and passing `1 - lambda` reproduces the same pair bit for bit.
pub fn mix_weights<T: Scalar>(lambda: T) -> (T, T) {
    let half = T::lit(0.5);
    if lambda >= half {
        (lambda, T::one() - lambda)
    } else {
        let wb = T::one() - lambda;
        (T::one() - wb, wb)
    }
}

pub(crate) fn mix_slices<T: Scalar>(a: &[T], b: &[T], lambda: T) -> Vec<T> {
    let (wa, wb) = mix_weights(lambda);
    a.iter().zip(b).map(|(&x, &y)| wa * x + wb * y).collect()
}
