use super::real::Real;

/// Dense activation tensor laid out `[channels, batch, depth, height, width]`.
///
/// Channel-major order lets a convolution over the whole batch be a single
/// matrix product, and makes a batch of 2D images a plain reshape of a
/// single-channel volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 5],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn filled(shape: [usize; 5], v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn batch(&self) -> usize {
        self.shape[1]
    }

    /// `[depth, height, width]`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: [usize; 5]) -> Self {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        assert_eq!(a.shape[1..], b.shape[1..], "concat shape mismatch");
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        let mut shape = a.shape;
        shape[0] += b.shape[0];
        Tensor { shape, data }
    }

    /// Inverse of [`Tensor::concat_channels`]: first `c` channels, rest.
    pub fn split_channels(&self, c: usize) -> (Tensor<T>, Tensor<T>) {
        let per = self.len() / self.shape[0];
        let mut s1 = self.shape;
        s1[0] = c;
        let mut s2 = self.shape;
        s2[0] = self.shape[0] - c;
        (
            Tensor::from_vec(s1, self.data[..c * per].to_vec()),
            Tensor::from_vec(s2, self.data[c * per..].to_vec()),
        )
    }
}
