use rand::Rng;
use rand_distr::StandardNormal;

use crate::Float;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = acc;
        acc *= shape[d];
    }
    strides
}

/// Numpy-style broadcast of two shapes (right aligned).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not hold {} elements",
            data.len()
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_vec(shape, vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(&[], vec![value])
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        Self::from_vec(shape, (0..numel(shape)).map(f).collect())
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::of(rng.sample::<f64, _>(StandardNormal)))
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(numel(shape), self.data.len(), "cannot reshape {:?} to {shape:?}", self.shape);
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, d| if d > m { d } else { m })
    }

    // ---- raw kernels used by the differentiable ops ----

    /// Materialize a broadcast of `self` to `shape`.
    pub(crate) fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_src_strides(&self.shape, shape);
        let mut out = Vec::with_capacity(numel(shape));
        strided_gather(&self.data, shape, &strides, &mut out);
        Self::from_vec(shape, out)
    }

    /// Sum-reduce `self` down to a shape it was broadcast from.
    pub(crate) fn sum_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_src_strides(shape, &self.shape);
        let mut out = vec![T::zero(); numel(shape)];
        strided_accumulate(&self.data, &self.shape, &strides, &mut out);
        Self::from_vec(shape, out)
    }

    pub(crate) fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.shape.len(), "permutation rank mismatch");
        let src_strides = contiguous_strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        strided_gather(&self.data, &shape, &strides, &mut out);
        Self::from_vec(&shape, out)
    }

    /// Matrix product of 2-D tensors with optional transposition of either operand.
    pub(crate) fn matmul(&self, other: &Self, ta: bool, tb: bool) -> Self {
        assert_eq!(self.shape.len(), 2, "matmul lhs must be 2-D, got {:?}", self.shape);
        assert_eq!(other.shape.len(), 2, "matmul rhs must be 2-D, got {:?}", other.shape);
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (other.shape[0], other.shape[1]);
        let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac as isize) } else { (ar, ac, ac as isize, 1) };
        let (k2, n, rsb, csb) = if tb { (bc, br, 1, bc as isize) } else { (br, bc, bc as isize, 1) };
        assert_eq!(k, k2, "matmul inner dimension mismatch: {:?} x {:?} (ta={ta}, tb={tb})", self.shape, other.shape);
        let mut out = vec![T::zero(); m * n];
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: dimensions and strides describe the owned buffers exactly.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    self.data.as_ptr(),
                    rsa,
                    csa,
                    other.data.as_ptr(),
                    rsb,
                    csb,
                    T::zero(),
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Self::from_vec(&[m, n], out)
    }

    pub(crate) fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        assert!(start + len <= dim, "narrow out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::from_vec(&shape, out)
    }

    /// Zero-pad along `axis` so that `self` occupies `[start, start + len)` of `total`.
    pub(crate) fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Self {
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let len = self.shape[axis];
        let mut out = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let dst = o * total * inner + start * inner;
            let src = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = total;
        Self::from_vec(&shape, out)
    }

    pub(crate) fn concat(parts: &[&Self], axis: usize) -> Self {
        let first = parts[0];
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        for p in parts {
            assert_eq!(p.shape.len(), first.shape.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape.iter().zip(&first.shape).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {:?} vs {:?}", p.shape, first.shape);
            }
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Self::from_vec(&shape, out)
    }

    /// Rows of a 2-D table selected by `idx`.
    pub(crate) fn index_rows(&self, idx: &[usize]) -> Self {
        assert_eq!(self.shape.len(), 2, "index_rows expects a 2-D table");
        let d = self.shape[1];
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < self.shape[0], "row index {i} out of range {}", self.shape[0]);
            out.extend_from_slice(&self.data[i * d..(i + 1) * d]);
        }
        Self::from_vec(&[idx.len(), d], out)
    }

    /// Adjoint of [`Tensor::index_rows`]: scatter-add rows into a `rows x d` table.
    pub(crate) fn scatter_rows(&self, idx: &[usize], rows: usize) -> Self {
        let d = self.shape[1];
        let mut out = vec![T::zero(); rows * d];
        for (r, &i) in idx.iter().enumerate() {
            let dst = &mut out[i * d..(i + 1) * d];
            for (o, &v) in dst.iter_mut().zip(&self.data[r * d..(r + 1) * d]) {
                *o = *o + v;
            }
        }
        Self::from_vec(&[rows, d], out)
    }

    /// im2col for NCHW input: output `[N, C*k*k, Ho*Wo]`.
    pub(crate) fn im2col(&self, k: usize, stride: usize, pad: usize) -> Self {
        let (n, c, h, w) = dims4(&self.shape);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let rows = c * k * k;
        let mut out = vec![T::zero(); n * rows * p];
        for ni in 0..n {
            for ci in 0..c {
                let src = &self.data[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dst_row = &mut out[(ni * rows + row) * p..(ni * rows + row + 1) * p];
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut dst_row[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                // valid ox range: 0 <= ox + kx - pad < w
                                let lo = pad.saturating_sub(kx);
                                let hi = (w + pad - kx).min(wo);
                                if lo < hi {
                                    let s0 = lo + kx - pad;
                                    dst[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                                }
                            } else {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix >= 0 && ix < w as isize {
                                        *d = src_row[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Self::from_vec(&[n, rows, p], out)
    }

    /// Adjoint of [`Tensor::im2col`] for an NCHW target shape.
    pub(crate) fn col2im(&self, shape: &[usize], k: usize, stride: usize, pad: usize) -> Self {
        let (n, c, h, w) = dims4(shape);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let rows = c * k * k;
        assert_eq!(self.shape, [n, rows, p], "col2im input shape mismatch");
        let mut out = vec![T::zero(); n * c * h * w];
        for ni in 0..n {
            for ci in 0..c {
                let dst = &mut out[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let src_row = &self.data[(ni * rows + row) * p..(ni * rows + row + 1) * p];
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                            let src = &src_row[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                let lo = pad.saturating_sub(kx);
                                let hi = (w + pad - kx).min(wo);
                                if lo < hi {
                                    let d0 = lo + kx - pad;
                                    for (d, &v) in dst_row[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                        *d = *d + v;
                                    }
                                }
                                continue;
                            }
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] = dst_row[ix as usize] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Self::from_vec(shape, out)
    }

    /// `out[n] = op(w) * x[n]` for `w [O, K]` (or `[K, O]` when `tw`) and `x [N, K, P]`.
    pub(crate) fn bmm_shared(&self, x: &Self, tw: bool) -> Self {
        assert_eq!(self.shape.len(), 2, "bmm_shared weight must be 2-D");
        assert_eq!(x.shape.len(), 3, "bmm_shared input must be 3-D");
        let (r, c) = (self.shape[0], self.shape[1]);
        let (o, k, rsa, csa) = if tw { (c, r, 1, c as isize) } else { (r, c, c as isize, 1) };
        let (n, k2, p) = (x.shape[0], x.shape[1], x.shape[2]);
        assert_eq!(k, k2, "bmm_shared inner dimension mismatch: {:?} x {:?}", self.shape, x.shape);
        let mut out = vec![T::zero(); n * o * p];
        if o > 0 && p > 0 && k > 0 {
            for ni in 0..n {
                // SAFETY: each sample block is an in-bounds contiguous [k, p] / [o, p] matrix.
                unsafe {
                    T::gemm(
                        o,
                        k,
                        p,
                        T::one(),
                        self.data.as_ptr(),
                        rsa,
                        csa,
                        x.data.as_ptr().add(ni * k * p),
                        p as isize,
                        1,
                        T::zero(),
                        out.as_mut_ptr().add(ni * o * p),
                        p as isize,
                        1,
                    );
                }
            }
        }
        Self::from_vec(&[n, o, p], out)
    }

    /// `sum_n a[n] * b[n]^T` for `a [N, O, P]`, `b [N, K, P]`, giving `[O, K]`.
    pub(crate) fn bmm_reduce(&self, b: &Self) -> Self {
        assert_eq!(self.shape.len(), 3);
        assert_eq!(b.shape.len(), 3);
        let (n, o, p) = (self.shape[0], self.shape[1], self.shape[2]);
        let (n2, k, p2) = (b.shape[0], b.shape[1], b.shape[2]);
        assert!(n == n2 && p == p2, "bmm_reduce shape mismatch {:?} vs {:?}", self.shape, b.shape);
        let mut out = vec![T::zero(); o * k];
        if o > 0 && k > 0 && p > 0 {
            for ni in 0..n {
                // SAFETY: blocks are in-bounds; `out` is accumulated with beta = 1.
                unsafe {
                    T::gemm(
                        o,
                        p,
                        k,
                        T::one(),
                        self.data.as_ptr().add(ni * o * p),
                        p as isize,
                        1,
                        b.data.as_ptr().add(ni * k * p),
                        1,
                        p as isize,
                        if ni == 0 { T::zero() } else { T::one() },
                        out.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
        }
        Self::from_vec(&[o, k], out)
    }

    /// 2x2 average pooling with stride 2 over the last two axes.
    pub(crate) fn avg_pool2(&self) -> Self {
        let (outer, h, w) = split_hw(&self.shape);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(outer * ho * wo);
        for o in 0..outer {
            let src = &self.data[o * h * w..(o + 1) * h * w];
            for y in 0..ho {
                let r0 = &src[2 * y * w..(2 * y + 1) * w];
                let r1 = &src[(2 * y + 1) * w..(2 * y + 2) * w];
                for x in 0..wo {
                    out.push((r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter);
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Self::from_vec(&shape, out)
    }

    /// Nearest-neighbour 2x upsampling over the last two axes.
    pub(crate) fn upsample_nearest2(&self) -> Self {
        let (outer, h, w) = split_hw(&self.shape);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(outer * ho * wo);
        for o in 0..outer {
            let src = &self.data[o * h * w..(o + 1) * h * w];
            for y in 0..ho {
                let row = &src[(y / 2) * w..(y / 2 + 1) * w];
                for x in 0..wo {
                    out.push(row[x / 2]);
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Self::from_vec(&shape, out)
    }

    /// Bilinear 2x upsampling (half-pixel centers, edge clamped) over the last two axes.
    pub(crate) fn bilinear_up2(&self) -> Self {
        let (outer, h, w) = split_hw(&self.shape);
        let ty = up2_taps(h);
        let tx = up2_taps(w);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(outer * ho * wo);
        for o in 0..outer {
            let src = &self.data[o * h * w..(o + 1) * h * w];
            for &(y0, wy0, y1, wy1) in &ty {
                for &(x0, wx0, x1, wx1) in &tx {
                    let v = T::of(wy0 * wx0) * src[y0 * w + x0]
                        + T::of(wy0 * wx1) * src[y0 * w + x1]
                        + T::of(wy1 * wx0) * src[y1 * w + x0]
                        + T::of(wy1 * wx1) * src[y1 * w + x1];
                    out.push(v);
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        Self::from_vec(&shape, out)
    }

    /// Adjoint of [`Tensor::bilinear_up2`].
    pub(crate) fn bilinear_up2_adjoint(&self) -> Self {
        let (outer, ho, wo) = split_hw(&self.shape);
        let (h, w) = (ho / 2, wo / 2);
        let ty = up2_taps(h);
        let tx = up2_taps(w);
        let mut out = vec![T::zero(); outer * h * w];
        for o in 0..outer {
            let src = &self.data[o * ho * wo..(o + 1) * ho * wo];
            let dst = &mut out[o * h * w..(o + 1) * h * w];
            for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                    let g = src[oy * wo + ox];
                    dst[y0 * w + x0] = dst[y0 * w + x0] + T::of(wy0 * wx0) * g;
                    dst[y0 * w + x1] = dst[y0 * w + x1] + T::of(wy0 * wx1) * g;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + T::of(wy1 * wx0) * g;
                    dst[y1 * w + x1] = dst[y1 * w + x1] + T::of(wy1 * wx1) * g;
                }
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = h;
        shape[r - 1] = w;
        Self::from_vec(&shape, out)
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

fn split_hw(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    assert!(r >= 2, "spatial op needs rank >= 2, got {shape:?}");
    (shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1])
}

/// Per output index: (lo, w_lo, hi, w_hi) for 2x bilinear upsampling of a length-`n` axis.
fn up2_taps(n: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let f = src.floor();
            let frac = src - f;
            let clamp = |i: f64| i.max(0.0).min((n - 1) as f64) as usize;
            (clamp(f), 1.0 - frac, clamp(f + 1.0), frac)
        })
        .collect()
}

/// Strides into a `src`-shaped buffer for iterating over the broadcast shape `dst`.
fn broadcast_src_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    assert!(src.len() <= dst.len(), "cannot broadcast {src:?} to {dst:?}");
    let offset = dst.len() - src.len();
    let cs = contiguous_strides(src);
    (0..dst.len())
        .map(|d| {
            if d < offset {
                0
            } else {
                let s = src[d - offset];
                assert!(s == dst[d] || s == 1, "cannot broadcast {src:?} to {dst:?}");
                if s == 1 {
                    0
                } else {
                    cs[d - offset]
                }
            }
        })
        .collect()
}

fn strided_gather<T: Copy>(src: &[T], shape: &[usize], strides: &[usize], out: &mut Vec<T>) {
    fn rec<T: Copy>(src: &[T], shape: &[usize], strides: &[usize], offset: usize, out: &mut Vec<T>) {
        if shape.len() == 1 {
            let s = strides[0];
            if s == 1 {
                out.extend_from_slice(&src[offset..offset + shape[0]]);
            } else {
                out.extend((0..shape[0]).map(|i| src[offset + i * s]));
            }
            return;
        }
        for i in 0..shape[0] {
            rec(src, &shape[1..], &strides[1..], offset + i * strides[0], out);
        }
    }
    if shape.is_empty() {
        out.push(src[0]);
    } else if numel(shape) > 0 {
        rec(src, shape, strides, 0, out);
    }
}

fn strided_accumulate<T: Float>(src: &[T], shape: &[usize], dst_strides: &[usize], out: &mut [T]) {
    fn rec<T: Float>(src: &[T], shape: &[usize], strides: &[usize], src_off: &mut usize, dst_off: usize, out: &mut [T]) {
        if shape.len() == 1 {
            let s = strides[0];
            for i in 0..shape[0] {
                let d = dst_off + i * s;
                out[d] = out[d] + src[*src_off];
                *src_off += 1;
            }
            return;
        }
        for i in 0..shape[0] {
            rec(src, &shape[1..], &strides[1..], src_off, dst_off + i * strides[0], out);
        }
    }
    if shape.is_empty() {
        out[0] = out[0] + src[0];
    } else if numel(shape) > 0 {
        let mut off = 0;
        rec(src, shape, dst_strides, &mut off, 0, out);
    }
}
