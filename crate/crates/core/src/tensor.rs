//! Dense row-major `f64` arrays and the handful of kernels the layers need.
//!
//! Every kernel accumulates in a fixed order so that identical inputs always
//! produce bit-identical outputs. Convolution is cross-correlation (no kernel
//! flip), stride 1, no padding.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expected} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// 1-D tensor over `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extent of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of values per slice along the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension(format!(
            "{what} must be 2-D, got shape {:?}",
            t.shape()
        ))),
    }
}

/// `a · b` for `a: [m×k]`, `b: [k×n]`.
///
/// Each output row is accumulated over `k` in ascending order. Zero entries
/// of `a` are skipped, which leaves the result unchanged for finite `b`
/// while making sparse spike-count inputs cheap.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "left operand")?;
    let (k2, n) = dims2(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · b` for `a: [k×m]`, `b: [k×n]`, accumulated over `k` ascending.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = dims2(a, "left operand")?;
    let (k2, n) = dims2(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_tn leading extents differ: {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let b_row = &b.data[p * n..(p + 1) * n];
        for (i, &x) in a.data[p * m..(p + 1) * m].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`; each entry is a dot product over `k`
/// ascending.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "left operand")?;
    let (n, k2) = dims2(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt trailing extents differ: {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        if a_row.iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..n {
            let b_row = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Splits a `[C×H×W]` or `[N×C×H×W]` shape into `(N, C, H, W)`.
fn feature_map_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(format!(
            "{what} must be C×H×W or N×C×H×W, got {:?}",
            t.shape()
        ))),
    }
}

fn with_batch_shape(batched: bool, n: usize, rest: &[usize]) -> Vec<usize> {
    let mut shape = Vec::with_capacity(rest.len() + 1);
    if batched {
        shape.push(n);
    }
    shape.extend_from_slice(rest);
    shape
}

fn kernel_dims(kernels: &Tensor) -> Result<(usize, usize, usize)> {
    match *kernels.shape() {
        [cout, cin, kh, kw] if kh == kw => Ok((cout, cin, kh)),
        _ => Err(Error::Dimension(format!(
            "kernels must be Cout×Cin×k×k, got {:?}",
            kernels.shape()
        ))),
    }
}

/// Valid (unpadded, stride 1) cross-correlation.
///
/// `input` is `[Cin×H×W]` or `[N×Cin×H×W]`, `kernels` is `[Cout×Cin×k×k]`;
/// the result keeps the batch axis if the input had one. Every output value
/// is accumulated over `(cin, ky, kx)` in ascending order.
pub fn conv2d_valid(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (n, cin, h, w) = feature_map_dims(input, "conv input")?;
    let (cout, kcin, k) = kernel_dims(kernels)?;
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "kernels expect {kcin} input channels, input {:?} has {cin}",
            input.shape()
        )));
    }
    if k > h || k > w {
        return Err(Error::Dimension(format!(
            "kernel {k}×{k} larger than input {h}×{w}"
        )));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let in_len = cin * h * w;
    let out_len = cout * oh * ow;
    let mut out = vec![0.0; n * out_len];
    for s in 0..n {
        let x = &input.data[s * in_len..(s + 1) * in_len];
        let y = &mut out[s * out_len..(s + 1) * out_len];
        for co in 0..cout {
            let y_map = &mut y[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..cin {
                let x_map = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kernels.data[((co * cin + ci) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let src = &x_map[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                            let dst = &mut y_map[oy * ow..(oy + 1) * ow];
                            for (d, &v) in dst.iter_mut().zip(src) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(
        with_batch_shape(input.rank() == 4, n, &[cout, oh, ow]),
        out,
    )
}

/// Gradient of a valid convolution with respect to its input: the full
/// correlation of `upstream` with the flipped kernels, written as a scatter.
pub fn conv2d_grad_input(
    kernels: &Tensor,
    upstream: &Tensor,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    let (n, cout, oh, ow) = feature_map_dims(upstream, "upstream gradient")?;
    let (kcout, cin, k) = kernel_dims(kernels)?;
    if kcout != cout || in_h + 1 != oh + k || in_w + 1 != ow + k {
        return Err(Error::Dimension(format!(
            "upstream {:?} inconsistent with kernels {:?} on a {in_h}×{in_w} input",
            upstream.shape(),
            kernels.shape()
        )));
    }
    let in_len = cin * in_h * in_w;
    let up_len = cout * oh * ow;
    let mut out = vec![0.0; n * in_len];
    for s in 0..n {
        let g = &upstream.data[s * up_len..(s + 1) * up_len];
        let dx = &mut out[s * in_len..(s + 1) * in_len];
        for co in 0..cout {
            let g_map = &g[co * oh * ow..(co + 1) * oh * ow];
            if g_map.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ci in 0..cin {
                let dx_map = &mut dx[ci * in_h * in_w..(ci + 1) * in_h * in_w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kernels.data[((co * cin + ci) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let src = &g_map[oy * ow..(oy + 1) * ow];
                            let row = (oy + ky) * in_w + kx;
                            for (d, &v) in dx_map[row..row + ow].iter_mut().zip(src) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(
        with_batch_shape(upstream.rank() == 4, n, &[cin, in_h, in_w]),
        out,
    )
}

/// Gradient of a valid convolution with respect to its kernels, summed over
/// the batch: the correlation of `input` with `upstream`.
pub fn conv2d_grad_kernels(input: &Tensor, upstream: &Tensor, k: usize) -> Result<Tensor> {
    let (n, cin, h, w) = feature_map_dims(input, "conv input")?;
    let (un, cout, oh, ow) = feature_map_dims(upstream, "upstream gradient")?;
    if un != n || k == 0 || k > h || k > w || oh != h - k + 1 || ow != w - k + 1 {
        return Err(Error::Dimension(format!(
            "upstream {:?} inconsistent with input {:?} and kernel size {k}",
            upstream.shape(),
            input.shape()
        )));
    }
    let in_len = cin * h * w;
    let up_len = cout * oh * ow;
    let mut out = vec![0.0; cout * cin * k * k];
    for s in 0..n {
        let x = &input.data[s * in_len..(s + 1) * in_len];
        let g = &upstream.data[s * up_len..(s + 1) * up_len];
        for co in 0..cout {
            let g_map = &g[co * oh * ow..(co + 1) * oh * ow];
            if g_map.iter().all(|&v| v == 0.0) {
                continue;
            }
            for ci in 0..cin {
                let x_map = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let src = &x_map[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                            let gr = &g_map[oy * ow..(oy + 1) * ow];
                            acc += src.iter().zip(gr).map(|(&a, &b)| a * b).sum::<f64>();
                        }
                        out[((co * cin + ci) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, cin, k, k], out)
}

/// Both convolution gradients: `(grad_input, grad_kernels)`.
pub fn conv2d_grads(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = feature_map_dims(input, "conv input")?;
    let (_, _, k) = kernel_dims(kernels)?;
    let grad_input = conv2d_grad_input(kernels, upstream, h, w)?;
    let grad_kernels = conv2d_grad_kernels(input, upstream, k)?;
    Ok((grad_input, grad_kernels))
}

/// Non-overlapping `size×size` average pooling (stride = size).
pub fn avgpool2d(input: &Tensor, size: usize) -> Result<Tensor> {
    let (n, c, h, w) = feature_map_dims(input, "pool input")?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(Error::Dimension(format!(
            "{h}×{w} map is not divisible into {size}×{size} windows"
        )));
    }
    let (oh, ow) = (h / size, w / size);
    let inv = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane, dst) in out.chunks_exact_mut(oh * ow).enumerate() {
        let src = &input.data[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..size {
                    let row = (oy * size + dy) * w + ox * size;
                    for &v in &src[row..row + size] {
                        acc += v;
                    }
                }
                dst[oy * ow + ox] = acc * inv;
            }
        }
    }
    Tensor::new(with_batch_shape(input.rank() == 4, n, &[c, oh, ow]), out)
}

/// Spreads every upstream value, divided by the window area, over its window.
pub fn avgpool2d_grad(upstream: &Tensor, size: usize) -> Result<Tensor> {
    let (n, c, oh, ow) = feature_map_dims(upstream, "upstream gradient")?;
    if size == 0 {
        return Err(Error::Dimension("pool size must be positive".into()));
    }
    let (h, w) = (oh * size, ow * size);
    let inv = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; n * c * h * w];
    for (plane, dst) in out.chunks_exact_mut(h * w).enumerate() {
        let src = &upstream.data[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / size) * ow + x / size] * inv;
            }
        }
    }
    Tensor::new(with_batch_shape(upstream.rank() == 4, n, &[c, h, w]), out)
}
