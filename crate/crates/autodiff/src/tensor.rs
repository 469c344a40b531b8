use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Result};

/// Dense row-major tensor; 4-D tensors are laid out NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and nonnegative");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(n, c, h, w)` of a 4-D tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err(format!("expected a 4-D tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Round every value to the nearest 32-bit float.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub(crate) fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

/// Spatial output size of a convolution: floor((in + 2 pad - k) / stride) + 1.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(shape_err("kernel and stride must be positive"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(shape_err(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Spatial output size of a transposed convolution:
/// (in - 1) stride - 2 pad + k + output_padding.
pub fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return Err(shape_err("input, kernel and stride must be positive"));
    }
    if output_padding >= stride {
        return Err(shape_err("output padding must be smaller than the stride"));
    }
    let full = (input - 1) * stride + kernel + output_padding;
    if full <= 2 * padding {
        return Err(shape_err("padding removes the whole output"));
    }
    Ok(full - 2 * padding)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[1, 2, 1, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.dims4().unwrap(), (1, 2, 1, 3));
        assert!(Tensor::zeros(&[3]).dims4().is_err());
    }

    #[test]
    fn f32_rounding() {
        let mut t = Tensor::from_vec(&[2], vec![0.1, 1.0 / 3.0]).unwrap();
        t.round_to_f32();
        assert_eq!(t.data()[0], f64::from(0.1f32));
        assert_eq!(t.data()[1] as f32 as f64, t.data()[1]);
    }

    #[test]
    fn output_size_examples() {
        assert_eq!(conv_out_size(64, 3, 2, 1).unwrap(), 32);
        assert_eq!(conv_out_size(64, 4, 2, 1).unwrap(), 32);
        assert_eq!(conv_out_size(16, 4, 1, 1).unwrap(), 15);
        assert_eq!(conv_transpose_out_size(8, 3, 2, 1, 1).unwrap(), 16);
        assert!(conv_out_size(2, 5, 1, 0).is_err());
    }
}
