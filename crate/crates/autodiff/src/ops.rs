use crate::graph::{Backward, Var};
use crate::tensor::{broadcast_shapes, Tensor};
use crate::Float;

macro_rules! op_name {
    ($name:literal) => {
        fn name(&self) -> &'static str {
            $name
        }
    };
}

fn need<T: Float>(needs: &[bool], i: usize, f: impl FnOnce() -> Var<T>) -> Option<Var<T>> {
    if needs[i] {
        Some(f())
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// elementwise binary

struct AddOp;
impl<T: Float> Backward<T> for AddOp {
    op_name!("add");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.clone()), need(needs, 1, || g.clone())]
    }
}

struct SubOp;
impl<T: Float> Backward<T> for SubOp {
    op_name!("sub");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.clone()), need(needs, 1, || g.neg())]
    }
}

struct MulOp;
impl<T: Float> Backward<T> for MulOp {
    op_name!("mul");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.mul(&x[1])), need(needs, 1, || g.mul(&x[0]))]
    }
}

struct DivOp;
impl<T: Float> Backward<T> for DivOp {
    op_name!("div");
    fn backward(&self, x: &[Var<T>], out: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.div(&x[1])), need(needs, 1, || g.mul(out).div(&x[1]).neg())]
    }
}

// ---------------------------------------------------------------------------
// elementwise unary

struct ScaleOp(f64);
impl<T: Float> Backward<T> for ScaleOp {
    op_name!("scale");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.scale(self.0))]
    }
}

struct AddScalarOp;
impl<T: Float> Backward<T> for AddScalarOp {
    op_name!("add_scalar");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.clone())]
    }
}

struct PowOp(f64);
impl<T: Float> Backward<T> for PowOp {
    op_name!("pow");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let p = self.0;
        vec![need(needs, 0, || {
            if p == 1.0 {
                g.clone()
            } else if p == 2.0 {
                g.mul(&x[0]).scale(2.0)
            } else {
                g.mul(&x[0].powf(p - 1.0)).scale(p)
            }
        })]
    }
}

struct ExpOp;
impl<T: Float> Backward<T> for ExpOp {
    op_name!("exp");
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.mul(out))]
    }
}

struct LnOp;
impl<T: Float> Backward<T> for LnOp {
    op_name!("ln");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.div(&x[0]))]
    }
}

struct TanhOp;
impl<T: Float> Backward<T> for TanhOp {
    op_name!("tanh");
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        // 1 - y^2
        vec![need(needs, 0, || g.mul(&out.mul(out).neg().add_scalar(1.0)))]
    }
}

struct SigmoidOp;
impl<T: Float> Backward<T> for SigmoidOp {
    op_name!("sigmoid");
    fn backward(&self, _: &[Var<T>], out: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.mul(&out.mul(&out.neg().add_scalar(1.0))))]
    }
}

struct SoftplusOp;
impl<T: Float> Backward<T> for SoftplusOp {
    op_name!("softplus");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.mul(&x[0].sigmoid()))]
    }
}

/// Multiplies the incoming gradient by a fixed elementwise mask (piecewise-linear ops).
struct MaskGradOp<T>(Tensor<T>);
impl<T: Float> Backward<T> for MaskGradOp<T> {
    op_name!("piecewise_linear");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.mul(&Var::constant(self.0.clone())))]
    }
}

struct SmoothL1Op {
    beta: f64,
}
impl<T: Float> Backward<T> for SmoothL1Op {
    op_name!("smooth_l1");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.mul(&x[0].smooth_l1_slope(self.beta)))]
    }
}

// ---------------------------------------------------------------------------
// shape ops and reductions

struct BroadcastOp;
impl<T: Float> Backward<T> for BroadcastOp {
    op_name!("broadcast_to");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.sum_to(x[0].shape()))]
    }
}

struct SumToOp;
impl<T: Float> Backward<T> for SumToOp {
    op_name!("sum_to");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.broadcast_to(x[0].shape()))]
    }
}

struct ReshapeOp;
impl<T: Float> Backward<T> for ReshapeOp {
    op_name!("reshape");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.reshape(x[0].shape()))]
    }
}

struct PermuteOp(Vec<usize>);
impl<T: Float> Backward<T> for PermuteOp {
    op_name!("permute");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        vec![need(needs, 0, || g.permute(&inv))]
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
    total: usize,
}
impl<T: Float> Backward<T> for NarrowOp {
    op_name!("narrow");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.pad_axis(self.axis, self.start, self.total))]
    }
}

struct PadAxisOp {
    axis: usize,
    start: usize,
}
impl<T: Float> Backward<T> for PadAxisOp {
    op_name!("pad_axis");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.narrow(self.axis, self.start, x[0].shape()[self.axis]))]
    }
}

struct ConcatOp {
    axis: usize,
}
impl<T: Float> Backward<T> for ConcatOp {
    op_name!("concat");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let mut start = 0;
        x.iter()
            .enumerate()
            .map(|(i, xi)| {
                let len = xi.shape()[self.axis];
                let r = need(needs, i, || g.narrow(self.axis, start, len));
                start += len;
                r
            })
            .collect()
    }
}

struct IndexRowsOp {
    idx: std::rc::Rc<Vec<usize>>,
}
impl<T: Float> Backward<T> for IndexRowsOp {
    op_name!("index_rows");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.scatter_rows_rc(self.idx.clone(), x[0].shape()[0]))]
    }
}

struct ScatterRowsOp {
    idx: std::rc::Rc<Vec<usize>>,
}
impl<T: Float> Backward<T> for ScatterRowsOp {
    op_name!("scatter_rows");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.index_rows_rc(self.idx.clone()))]
    }
}

// ---------------------------------------------------------------------------
// linear algebra and spatial ops

struct MatMulOp {
    ta: bool,
    tb: bool,
}
impl<T: Float> Backward<T> for MatMulOp {
    op_name!("matmul");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let (a, b) = (&x[0], &x[1]);
        let (ta, tb) = (self.ta, self.tb);
        let ga = need(needs, 0, || if ta { b.matmul_t(g, tb, true) } else { g.matmul_t(b, false, !tb) });
        let gb = need(needs, 1, || if tb { g.matmul_t(a, true, ta) } else { a.matmul_t(g, !ta, false) });
        vec![ga, gb]
    }
}

struct BmmSharedOp {
    tw: bool,
}
impl<T: Float> Backward<T> for BmmSharedOp {
    op_name!("bmm_shared");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let (w, xs) = (&x[0], &x[1]);
        let gw = need(needs, 0, || if self.tw { xs.bmm_reduce(g) } else { g.bmm_reduce(xs) });
        let gx = need(needs, 1, || w.bmm_shared(g, !self.tw));
        vec![gw, gx]
    }
}

struct BmmReduceOp;
impl<T: Float> Backward<T> for BmmReduceOp {
    op_name!("bmm_reduce");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let (a, b) = (&x[0], &x[1]);
        vec![need(needs, 0, || g.bmm_shared(b, false)), need(needs, 1, || g.bmm_shared(a, true))]
    }
}

struct Im2ColOp {
    k: usize,
    stride: usize,
    pad: usize,
}
impl<T: Float> Backward<T> for Im2ColOp {
    op_name!("im2col");
    fn backward(&self, x: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.col2im(x[0].shape(), self.k, self.stride, self.pad))]
    }
}

struct Col2ImOp {
    k: usize,
    stride: usize,
    pad: usize,
}
impl<T: Float> Backward<T> for Col2ImOp {
    op_name!("col2im");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.im2col(self.k, self.stride, self.pad))]
    }
}

struct AvgPool2Op;
impl<T: Float> Backward<T> for AvgPool2Op {
    op_name!("avg_pool2");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.upsample_nearest2().scale(0.25))]
    }
}

struct UpNearest2Op;
impl<T: Float> Backward<T> for UpNearest2Op {
    op_name!("upsample_nearest2");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.avg_pool2().scale(4.0))]
    }
}

struct BilinearUp2Op;
impl<T: Float> Backward<T> for BilinearUp2Op {
    op_name!("bilinear_up2");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.bilinear_up2_adjoint())]
    }
}

struct BilinearUp2AdjointOp;
impl<T: Float> Backward<T> for BilinearUp2AdjointOp {
    op_name!("bilinear_up2_adjoint");
    fn backward(&self, _: &[Var<T>], _: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        vec![need(needs, 0, || g.bilinear_up2())]
    }
}

// ---------------------------------------------------------------------------

impl<T: Float> Var<T> {
    fn binary(&self, other: &Var<T>, f: impl Fn(T, T) -> T, op: impl Backward<T> + 'static) -> Var<T> {
        if self.shape() == other.shape() {
            let v = self.value().zip_map(other.value(), f);
            Var::from_op(v, vec![self.clone(), other.clone()], op)
        } else {
            let shape = broadcast_shapes(self.shape(), other.shape())
                .unwrap_or_else(|| panic!("shapes {:?} and {:?} do not broadcast", self.shape(), other.shape()));
            let a = self.broadcast_to(&shape);
            let b = other.broadcast_to(&shape);
            let v = a.value().zip_map(b.value(), f);
            Var::from_op(v, vec![a, b], op)
        }
    }

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, |a, b| a + b, AddOp)
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, |a, b| a - b, SubOp)
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, |a, b| a * b, MulOp)
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        self.binary(other, |a, b| a / b, DivOp)
    }

    /// Multiply by a constant tensor (broadcast allowed).
    pub fn mul_const(&self, c: &Tensor<T>) -> Var<T> {
        self.mul(&Var::constant(c.clone()))
    }

    pub fn add_const(&self, c: &Tensor<T>) -> Var<T> {
        self.add(&Var::constant(c.clone()))
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var<T> {
        let k = T::of(c);
        Var::from_op(self.value().map(|x| x * k), vec![self.clone()], ScaleOp(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let k = T::of(c);
        Var::from_op(self.value().map(|x| x + k), vec![self.clone()], AddScalarOp)
    }

    pub fn powf(&self, p: f64) -> Var<T> {
        let k = T::of(p);
        let v = if p == 2.0 { self.value().map(|x| x * x) } else { self.value().map(|x| x.powf(k)) };
        Var::from_op(v, vec![self.clone()], PowOp(p))
    }

    pub fn square(&self) -> Var<T> {
        self.powf(2.0)
    }

    pub fn exp(&self) -> Var<T> {
        Var::from_op(self.value().map(|x| x.exp()), vec![self.clone()], ExpOp)
    }

    pub fn ln(&self) -> Var<T> {
        Var::from_op(self.value().map(|x| x.ln()), vec![self.clone()], LnOp)
    }

    pub fn tanh(&self) -> Var<T> {
        Var::from_op(self.value().map(|x| x.tanh()), vec![self.clone()], TanhOp)
    }

    pub fn sigmoid(&self) -> Var<T> {
        let v = self.value().map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        Var::from_op(v, vec![self.clone()], SigmoidOp)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self) -> Var<T> {
        let v = self.value().map(|x| x.max(T::zero()) + (-x.abs()).exp().ln_1p());
        Var::from_op(v, vec![self.clone()], SoftplusOp)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::of(slope);
        let v = self.value().map(|x| if x > T::zero() { x } else { x * s });
        let mask = self.value().map(|x| if x > T::zero() { T::one() } else { s });
        Var::from_op(v, vec![self.clone()], MaskGradOp(mask))
    }

    /// Elementwise smooth-L1: `0.5 d^2 / beta` for `|d| < beta`, else `|d| - 0.5 beta`.
    pub fn smooth_l1(&self, beta: f64) -> Var<T> {
        let b = T::of(beta);
        let half = T::of(0.5);
        let v = self.value().map(|d| if d.abs() < b { half * d * d / b } else { d.abs() - half * b });
        Var::from_op(v, vec![self.clone()], SmoothL1Op { beta })
    }

    /// Derivative of smooth-L1: `clamp(d / beta, -1, 1)`.
    fn smooth_l1_slope(&self, beta: f64) -> Var<T> {
        let b = T::of(beta);
        let v = self.value().map(|d| {
            if d.abs() < b {
                d / b
            } else if d > T::zero() {
                T::one()
            } else {
                -T::one()
            }
        });
        let mask = self.value().map(|d| if d.abs() < b { T::one() / b } else { T::zero() });
        Var::from_op(v, vec![self.clone()], MaskGradOp(mask))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(self.value().broadcast_to(shape), vec![self.clone()], BroadcastOp)
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(self.value().sum_to(shape), vec![self.clone()], SumToOp)
    }

    /// Sum over every element, giving a rank-0 scalar.
    pub fn sum(&self) -> Var<T> {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Var<T> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var<T> {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(1.0 / n.max(1) as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(self.value().clone().reshape(shape), vec![self.clone()], ReshapeOp)
    }

    pub fn permute(&self, perm: &[usize]) -> Var<T> {
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.clone();
        }
        Var::from_op(self.value().permute(perm), vec![self.clone()], PermuteOp(perm.to_vec()))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let total = self.shape()[axis];
        if start == 0 && len == total {
            return self.clone();
        }
        Var::from_op(self.value().narrow(axis, start, len), vec![self.clone()], NarrowOp { axis, start, total })
    }

    fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Var<T> {
        Var::from_op(self.value().pad_axis(axis, start, total), vec![self.clone()], PadAxisOp { axis, start })
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Var<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        Var::from_op(Tensor::concat(&values, axis), parts.to_vec(), ConcatOp { axis })
    }

    /// Select rows of a 2-D table.
    pub fn index_rows(&self, idx: &[usize]) -> Var<T> {
        self.index_rows_rc(std::rc::Rc::new(idx.to_vec()))
    }

    fn index_rows_rc(&self, idx: std::rc::Rc<Vec<usize>>) -> Var<T> {
        let v = self.value().index_rows(&idx);
        Var::from_op(v, vec![self.clone()], IndexRowsOp { idx })
    }

    fn scatter_rows_rc(&self, idx: std::rc::Rc<Vec<usize>>, rows: usize) -> Var<T> {
        let v = self.value().scatter_rows(&idx, rows);
        Var::from_op(v, vec![self.clone()], ScatterRowsOp { idx })
    }

    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, other: &Var<T>, ta: bool, tb: bool) -> Var<T> {
        let v = self.value().matmul(other.value(), ta, tb);
        Var::from_op(v, vec![self.clone(), other.clone()], MatMulOp { ta, tb })
    }

    /// `out[n] = op(self) * x[n]`: one shared 2-D matrix applied to a batch of `[K, P]` blocks.
    pub fn bmm_shared(&self, x: &Var<T>, tw: bool) -> Var<T> {
        let v = self.value().bmm_shared(x.value(), tw);
        Var::from_op(v, vec![self.clone(), x.clone()], BmmSharedOp { tw })
    }

    /// `sum_n self[n] * b[n]^T`.
    pub fn bmm_reduce(&self, b: &Var<T>) -> Var<T> {
        let v = self.value().bmm_reduce(b.value());
        Var::from_op(v, vec![self.clone(), b.clone()], BmmReduceOp)
    }

    pub fn im2col(&self, k: usize, stride: usize, pad: usize) -> Var<T> {
        Var::from_op(self.value().im2col(k, stride, pad), vec![self.clone()], Im2ColOp { k, stride, pad })
    }

    fn col2im(&self, shape: &[usize], k: usize, stride: usize, pad: usize) -> Var<T> {
        Var::from_op(self.value().col2im(shape, k, stride, pad), vec![self.clone()], Col2ImOp { k, stride, pad })
    }

    pub fn avg_pool2(&self) -> Var<T> {
        Var::from_op(self.value().avg_pool2(), vec![self.clone()], AvgPool2Op)
    }

    pub fn upsample_nearest2(&self) -> Var<T> {
        Var::from_op(self.value().upsample_nearest2(), vec![self.clone()], UpNearest2Op)
    }

    pub fn bilinear_up2(&self) -> Var<T> {
        Var::from_op(self.value().bilinear_up2(), vec![self.clone()], BilinearUp2Op)
    }

    fn bilinear_up2_adjoint(&self) -> Var<T> {
        Var::from_op(self.value().bilinear_up2_adjoint(), vec![self.clone()], BilinearUp2AdjointOp)
    }
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    /// Stride 1, "same" padding.
    pub fn same(kernel: usize) -> Self {
        Self { kernel, stride: 1, padding: kernel / 2 }
    }
}

/// NCHW convolution with weight `[O, C, k, k]`, no bias.
pub fn conv2d<T: Float>(x: &Var<T>, w: &Var<T>, spec: Conv2dSpec) -> Var<T> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
    assert_eq!(ws.len(), 4, "conv2d weight must be [O, C, k, k], got {ws:?}");
    assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
    assert_eq!(ws[2], spec.kernel);
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let o = ws[0];
    let k = spec.kernel;
    let ho = (h + 2 * spec.padding - k) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - k) / spec.stride + 1;
    let cols = if k == 1 && spec.stride == 1 && spec.padding == 0 {
        x.reshape(&[n, c, h * wd])
    } else {
        x.im2col(k, spec.stride, spec.padding)
    };
    let w2 = w.reshape(&[o, c * k * k]);
    w2.bmm_shared(&cols, false).reshape(&[n, o, ho, wo])
}

/// `x [N, in] * w[out, in]^T + b[out]`.
pub fn linear<T: Float>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Var<T> {
    let y = x.matmul_t(w, false, true);
    match b {
        Some(b) => y.add(b),
        None => y,
    }
}
