use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    /// Shape as `[C, H, W]`, or an error naming `what`.
    pub fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::usage(format!(
                "{what}: expected a rank-3 [C,H,W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::usage(format!(
                "{what}: expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f32) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Copy of channels `[from, to)` of a `[C,H,W]` tensor.
    pub fn channels(&self, from: usize, to: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3("channels")?;
        if from > to || to > c {
            return Err(Error::usage(format!(
                "channel range {from}..{to} out of bounds for {c} channels"
            )));
        }
        let plane = h * w;
        Tensor::from_vec(
            &[to - from, h, w],
            self.data[from * plane..to * plane].to_vec(),
        )
    }

    /// Transpose `[C, P]`-ordered (channel-major) data into `[P, C]` rows.
    pub fn chw_to_rows(&self) -> Vec<f32> {
        let c = self.shape[0];
        let plane = self.data.len() / c.max(1);
        let mut rows = vec![0.0; self.data.len()];
        for ch in 0..c {
            let src = &self.data[ch * plane..(ch + 1) * plane];
            for (p, &v) in src.iter().enumerate() {
                rows[p * c + ch] = v;
            }
        }
        rows
    }

    /// Inverse of [`Tensor::chw_to_rows`].
    pub fn from_rows(rows: &[f32], c: usize, h: usize, w: usize) -> Tensor {
        let plane = h * w;
        let mut data = vec![0.0; c * plane];
        for p in 0..plane {
            for ch in 0..c {
                data[ch * plane + p] = rows[p * c + ch];
            }
        }
        Tensor {
            shape: vec![c, h, w],
            data,
        }
    }
}
