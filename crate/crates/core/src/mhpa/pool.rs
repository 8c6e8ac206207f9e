use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Extent (or stride) along time, height and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Grid3 {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid3 {
    pub const fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }

    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    /// `ceil(self / stride)` per axis.
    pub fn pooled(&self, stride: Grid3) -> Grid3 {
        Grid3::new(
            self.t.div_ceil(stride.t),
            self.h.div_ceil(stride.h),
            self.w.div_ceil(stride.w),
        )
    }
}

impl fmt::Display for Grid3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}

impl FromStr for Grid3 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X', ',']).map(str::trim).collect();
        let bad = || Error::Config(format!("expected TxHxW, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n = |p: &str| p.parse::<usize>().map_err(|_| bad());
        Ok(Grid3::new(n(parts[0])?, n(parts[1])?, n(parts[2])?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingKind {
    /// Mean over each window.
    Average,
    /// Window origin element.
    Strided,
}

impl FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "average" | "avg" => Ok(Self::Average),
            "strided" | "strided-subsample" => Ok(Self::Strided),
            other => Err(Error::Config(format!("unknown pooling kind `{other}`"))),
        }
    }
}

/// Tokens of a flattened `t x h x w` grid (time-major), optionally led by a
/// class token that is never pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    tokens: Matrix,
    grid: Grid3,
    cls: bool,
}

impl TokenTensor {
    pub fn new(tokens: Matrix, grid: Grid3, cls: bool) -> Result<Self> {
        let expected = grid.volume() + usize::from(cls);
        if tokens.rows() != expected {
            return Err(Error::shape(
                format!("{expected} tokens for grid {grid}{}", if cls { " + class token" } else { "" }),
                format!("{} tokens", tokens.rows()),
            ));
        }
        if !tokens.is_finite() {
            return Err(Error::Domain("tokens contain non-finite values".into()));
        }
        Ok(Self { tokens, grid, cls })
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn into_tokens(self) -> Matrix {
        self.tokens
    }

    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn has_cls(&self) -> bool {
        self.cls
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Pool grid tokens with windows equal to `stride` (ceil at the edges).
pub fn pool_tokens(x: &TokenTensor, stride: Grid3, kind: PoolingKind) -> Result<TokenTensor> {
    if stride.t == 0 || stride.h == 0 || stride.w == 0 {
        return Err(Error::param("stride", "strides must be >= 1"));
    }
    let g = x.grid;
    let out_grid = g.pooled(stride);
    let offset = usize::from(x.cls);
    let dim = x.dim();
    let mut out = Matrix::zeros(out_grid.volume() + offset, dim);
    if x.cls {
        out.row_mut(0).copy_from_slice(x.tokens.row(0));
    }
    let index = |t: usize, h: usize, w: usize| offset + (t * g.h + h) * g.w + w;
    for ot in 0..out_grid.t {
        for oh in 0..out_grid.h {
            for ow in 0..out_grid.w {
                let dst = offset + (ot * out_grid.h + oh) * out_grid.w + ow;
                let (t0, h0, w0) = (ot * stride.t, oh * stride.h, ow * stride.w);
                match kind {
                    PoolingKind::Strided => {
                        out.row_mut(dst).copy_from_slice(x.tokens.row(index(t0, h0, w0)));
                    }
                    PoolingKind::Average => {
                        let mut count = 0usize;
                        let mut acc = vec![0.0; dim];
                        for t in t0..(t0 + stride.t).min(g.t) {
                            for h in h0..(h0 + stride.h).min(g.h) {
                                for w in w0..(w0 + stride.w).min(g.w) {
                                    for (a, v) in acc.iter_mut().zip(x.tokens.row(index(t, h, w))) {
                                        *a += v;
                                    }
                                    count += 1;
                                }
                            }
                        }
                        let inv = 1.0 / count as f64;
                        for (o, a) in out.row_mut(dst).iter_mut().zip(acc) {
                            *o = a * inv;
                        }
                    }
                }
            }
        }
    }
    TokenTensor::new(out, out_grid, x.cls)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(grid: Grid3, dim: usize, cls: bool) -> TokenTensor {
        let n = grid.volume() + usize::from(cls);
        let data = (0..n * dim).map(|i| i as f64 * 0.25 - 3.0).collect();
        TokenTensor::new(Matrix::from_vec(n, dim, data).unwrap(), grid, cls).unwrap()
    }

    #[test]
    fn unit_stride_is_identity() {
        let x = seq(Grid3::new(2, 3, 3), 4, true);
        for kind in [PoolingKind::Average, PoolingKind::Strided] {
            assert_eq!(pool_tokens(&x, Grid3::new(1, 1, 1), kind).unwrap(), x);
        }
    }

    #[test]
    fn averaging_a_constant() {
        let x = TokenTensor::new(Matrix::from_vec(16, 3, vec![2.5; 48]).unwrap(), Grid3::new(1, 4, 4), false)
            .unwrap();
        let y = pool_tokens(&x, Grid3::new(1, 2, 2), PoolingKind::Average).unwrap();
        assert_eq!(y.grid(), Grid3::new(1, 2, 2));
        assert!(y.tokens().as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn ceil_on_ragged_edges() {
        let x = seq(Grid3::new(1, 3, 5), 1, false);
        let y = pool_tokens(&x, Grid3::new(1, 2, 2), PoolingKind::Average).unwrap();
        assert_eq!(y.grid(), Grid3::new(1, 2, 3));
        // last window in the bottom-right corner holds a single token
        assert_eq!(y.tokens()[(5, 0)], x.tokens()[(14, 0)]);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let m = Matrix::zeros(10, 2);
        assert!(TokenTensor::new(m, Grid3::new(1, 3, 3), false).is_err());
    }

    #[test]
    fn parse_grid() {
        assert_eq!("1x2x2".parse::<Grid3>().unwrap(), Grid3::new(1, 2, 2));
        assert!("1x2".parse::<Grid3>().is_err());
    }
}
