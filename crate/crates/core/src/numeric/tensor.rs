use std::fmt;

use super::NumericError;

/// Dense row-major `f64` tensor.
///
/// Every constructor and every operation rejects NaN/Inf, so a `Tensor`
/// that exists is always finite.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<(), NumericError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericError::NonFinite { op })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        check_finite("tensor", &data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, NumericError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place updates. Callers are responsible for
    /// keeping values finite (the optimizer re-checks after each step).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<(), NumericError> {
        if self.shape != other.shape {
            return Err(NumericError::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(())
    }

    fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor, NumericError> {
        check_finite(op, &self.data)?;
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(op, &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Matrix product of a 2-D (or 1-D, read as a row) left operand with a
    /// 2-D (or 1-D, read as a column) right operand.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        let (m, k) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                return Err(NumericError::Shape {
                    op: "matmul",
                    detail: format!("left operand has rank {}", s.len()),
                })
            }
        };
        let (k2, n) = match other.shape.as_slice() {
            [r] => (*r, 1),
            [r, c] => (*r, *c),
            s => {
                return Err(NumericError::Shape {
                    op: "matmul",
                    detail: format!("right operand has rank {}", s.len()),
                })
            }
        };
        if k != k2 {
            return Err(NumericError::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.data[i * k + p] * other.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        check_finite("matmul", &out)?;
        Tensor::new(vec![m, n], out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect::<Vec<_>>();
        check_finite("add", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, NumericError> {
        self.same_shape(other, "mul")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect::<Vec<_>>();
        check_finite("mul", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn tanh(&self) -> Result<Tensor, NumericError> {
        self.map("tanh", f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor, NumericError> {
        self.map("sigmoid", sigmoid)
    }

    /// Concatenates 1-D tensors.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
        let mut data = Vec::new();
        for p in parts {
            if p.shape.len() != 1 {
                return Err(NumericError::Shape {
                    op: "concat",
                    detail: format!("expected vectors, got shape {:?}", p.shape),
                });
            }
            data.extend_from_slice(&p.data);
        }
        Tensor::vector(data)
    }

    pub fn softmax(&self) -> Result<Tensor, NumericError> {
        if self.shape.len() != 1 || self.data.is_empty() {
            return Err(NumericError::Shape {
                op: "softmax",
                detail: format!("expected a non-empty vector, got shape {:?}", self.shape),
            });
        }
        check_finite("softmax", &self.data)?;
        Tensor::vector(softmax(&self.data))
    }

    pub fn embedding_lookup(table: &Tensor, id: usize) -> Result<Tensor, NumericError> {
        if table.shape.len() != 2 {
            return Err(NumericError::Shape {
                op: "embedding_lookup",
                detail: format!("table must be 2-D, got {:?}", table.shape),
            });
        }
        if id >= table.rows() {
            return Err(NumericError::Index {
                op: "embedding_lookup",
                index: id,
                len: table.rows(),
            });
        }
        Tensor::vector(table.row(id).to_vec())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax over a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let total: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}
