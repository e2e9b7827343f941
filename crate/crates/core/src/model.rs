//! The hashing head: MAC pooling, a dimensionality-reduction layer and a
//! hash-code layer, both affine with linear activations.
//!
//! `f = (x · w1 + b1) · w2 + b2`

use std::fs;
use std::path::Path;

use crate::dataset::ByteReader;
use crate::error::{Error, Result};
use crate::numkit::{pca, Matrix};

pub const HEAD_MAGIC: &[u8; 4] = b"HASH";

/// Convolutional activations of shape `width × height × channels`.
///
/// Stored with the channel index fastest: entry `(x, y, k)` lives at
/// `(x * height + y) * channels + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "empty feature maps {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} maps need {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[(x * self.height + y) * self.channels + k]
    }

    pub fn set(&mut self, x: usize, y: usize, k: usize, v: f64) {
        self.data[(x * self.height + y) * self.channels + k] = v;
    }
}

/// Maximum activation of each channel over all spatial positions.
pub fn mac_pool(maps: &FeatureMaps) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; maps.channels];
    for cell in maps.data.chunks_exact(maps.channels) {
        for (o, &v) in out.iter_mut().zip(cell) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

/// DR layer `(w1, b1)` mapping D → L and HC layer `(w2, b2)` mapping L → L.
#[derive(Debug, Clone, PartialEq)]
pub struct HashHead {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Gradients of a scalar objective with respect to every head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl HashHead {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        let (d, l) = w1.shape();
        if b1.len() != l || w2.shape() != (l, l) || b2.len() != l {
            return Err(Error::Shape(format!(
                "inconsistent head: w1 {d}x{l}, b1 {}, w2 {}x{}, b2 {}",
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        let head = Self { w1, b1, w2, b2 };
        if !head.is_finite() {
            return Err(Error::Shape("head has non-finite parameters".into()));
        }
        Ok(head)
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn code_len(&self) -> usize {
        self.w1.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }

    /// DR-layer output `x · w1 + b1`.
    pub fn reduce(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::Shape(format!(
                "input has {} features, head expects {}",
                x.cols(),
                self.d_in()
            )));
        }
        let mut h = x.matmul(&self.w1)?;
        h.add_row_vector(&self.b1);
        Ok(h)
    }

    /// Head outputs for every row of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut f = self.reduce(x)?.matmul(&self.w2)?;
        f.add_row_vector(&self.b2);
        Ok(f)
    }

    /// Backpropagates `upstream = ∂J/∂f` (one row per input row) to the
    /// parameters.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<HeadGrad> {
        let h = self.reduce(x)?;
        if upstream.shape() != (x.rows(), self.code_len()) {
            return Err(Error::Shape(format!(
                "upstream gradient {}x{} for {} inputs of a {}-bit head",
                upstream.rows(),
                upstream.cols(),
                x.rows(),
                self.code_len()
            )));
        }
        let w2 = h.transpose().matmul(upstream)?;
        let b2 = upstream.column_sums();
        let dh = upstream.matmul(&self.w2.transpose())?;
        let w1 = x.transpose().matmul(&dh)?;
        let b1 = dh.column_sums();
        Ok(HeadGrad { w1, b1, w2, b2 })
    }

    /// Flattened parameters in file order: w1, b1, w2, b2.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_parameters());
        p.extend_from_slice(self.w1.data());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(self.w2.data());
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn num_parameters(&self) -> usize {
        let l = self.code_len();
        self.d_in() * l + l + l * l + l
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_parameters());
        let (a, rest) = p.split_at(self.w1.data().len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.data().len());
        self.w1.data_mut().copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.data_mut().copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = u32::try_from(self.d_in()).map_err(|_| Error::Param("D too large".into()))?;
        let l = u32::try_from(self.code_len()).map_err(|_| Error::Param("L too large".into()))?;
        let mut out = Vec::with_capacity(12 + 4 * self.num_parameters());
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&d.to_le_bytes());
        out.extend_from_slice(&l.to_le_bytes());
        for v in self.parameters() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(HEAD_MAGIC)?;
        let d = r.u32()? as usize;
        let l = r.u32()? as usize;
        let count = d
            .checked_mul(l)
            .and_then(|dl| l.checked_mul(l).and_then(|ll| dl.checked_add(ll)))
            .and_then(|c| c.checked_add(2 * l))
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(4, format!("shape overflow: D={d} L={l}")))?;
        if count * 4 != r.remaining() {
            let what = if count * 4 > r.remaining() {
                "truncated"
            } else {
                "oversized"
            };
            return Err(Error::format(
                (12 + (count * 4).min(r.remaining())) as u64,
                format!(
                    "{what} parameters: D={d} L={l} needs {} bytes, file has {}",
                    count * 4,
                    r.remaining()
                ),
            ));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::format(at as u64, "non-finite parameter"));
            }
            params.push(v as f64);
        }
        let mut head = HashHead {
            w1: Matrix::zeros(d, l),
            b1: vec![0.0; l],
            w2: Matrix::zeros(l, l),
            b2: vec![0.0; l],
        };
        head.set_parameters(&params);
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// PCA initialization on the training features (rows of `x`):
/// `w1` holds the top `code_len` components, `b1 = -w1ᵀ·mean`, `w2 = I`,
/// `b2 = 0`. The initial head is therefore the mean-centered PCA projection.
pub fn init_head(x: &Matrix, code_len: usize) -> Result<HashHead> {
    let (n, d) = x.shape();
    if code_len == 0 || n < 2 || code_len > (n - 1).min(d) {
        return Err(Error::Init(format!(
            "code length {code_len} needs 1 <= L <= min(N-1, D) = {} (N={n}, D={d})",
            n.saturating_sub(1).min(d)
        )));
    }
    let p = pca(x, code_len)?;
    let b1 = (0..code_len)
        .map(|c| {
            -(0..d)
                .map(|r| p.components.get(r, c) * p.mean[r])
                .sum::<f64>()
        })
        .collect();
    HashHead::new(
        p.components,
        b1,
        Matrix::identity(code_len),
        vec![0.0; code_len],
    )
}
