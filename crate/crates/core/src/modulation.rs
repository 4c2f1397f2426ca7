//! Surface-adaptive modulation: per-pixel styles from ω, modulation before convolution,
//! normalization after.

use rand::Rng;
use sgg_autodiff::{Float, Tensor, Var};

use crate::error::{invalid, Result};
use crate::nn::{lrelu, Bound, EqConv2d, ParamId, ParamSet};

pub const NORM_EPS: f64 = 1e-8;

/// Affine maps A_γ, A_β from ω to one layer's channels, stored as one 1×1 convolution.
#[derive(Clone, Debug)]
pub struct StyleProjection {
    pub weight: ParamId,
    pub bias: ParamId,
    pub omega_dim: usize,
    pub channels: usize,
}

impl StyleProjection {
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        omega_dim: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::randn(&[2 * channels, omega_dim], rng));
        // γ bias 1, β bias 0
        let bias = Tensor::from_fn(&[2 * channels], |i| if i < channels { T::one() } else { T::zero() });
        let bias = params.add(format!("{name}.bias"), bias);
        Self { weight, bias, omega_dim, channels }
    }
}

/// Per-pixel (γ, β) of one layer from a field [N, D, H, W]; each is [N, c, H, W].
pub fn styles<T: Float>(p: &Bound<T>, proj: &StyleProjection, field: &Var<T>) -> Result<(Var<T>, Var<T>)> {
    let s = field.shape();
    if s.len() != 4 || s[1] != proj.omega_dim {
        return Err(invalid!("field shape {:?} does not match projection input {}", s, proj.omega_dim));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let c = proj.channels;
    let weight = p.get(proj.weight).scale(1.0 / (proj.omega_dim as f64).sqrt());
    let x = field.reshape(&[n, proj.omega_dim, h * w]);
    let y = weight.bmm_shared(&x, false).reshape(&[n, 2 * c, h, w]).add(&p.get(proj.bias).reshape(&[1, 2 * c, 1, 1]));
    Ok((y.narrow(1, 0, c), y.narrow(1, c, c)))
}

/// γ·x + β, elementwise.
pub fn modulate<T: Float>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    if x.shape() != gamma.shape() || x.shape() != beta.shape() {
        return Err(invalid!("modulation shapes differ: x {:?}, γ {:?}, β {:?}", x.shape(), gamma.shape(), beta.shape()));
    }
    Ok(x.mul(gamma).add(beta))
}

/// Per-image, per-channel standardization over spatial positions; no affine.
pub fn normalize<T: Float>(x: &Var<T>) -> Var<T> {
    let centered = x.sub(&x.mean_axes(&[2, 3]));
    let inv_std = centered.square().mean_axes(&[2, 3]).add_scalar(NORM_EPS).powf(-0.5);
    centered.mul(&inv_std)
}

/// Modulated convolution: modulate → conv → (normalize → lrelu).
/// Without a projection the layer is a plain convolution.
#[derive(Clone, Debug)]
pub struct SamConv {
    pub proj: Option<StyleProjection>,
    pub conv: EqConv2d,
    /// False for the output layer, which keeps its bias and skips normalization and activation.
    pub hidden: bool,
}

impl SamConv {
    /// `omega_dim` 0 builds an unmodulated layer.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        omega_dim: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        hidden: bool,
        rng: &mut R,
    ) -> Self {
        let proj = (omega_dim > 0).then(|| StyleProjection::new(params, &format!("{name}.style"), omega_dim, in_channels, rng));
        // a bias before normalization would be cancelled by it
        let bias = if hidden { None } else { Some(0.0) };
        let conv = EqConv2d::new(params, &format!("{name}.conv"), in_channels, out_channels, kernel, bias, rng);
        Self { proj, conv, hidden }
    }

    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>, field: Option<&Var<T>>) -> Result<Var<T>> {
        let x = match (&self.proj, field) {
            (Some(proj), Some(field)) => {
                let (gamma, beta) = styles(p, proj, field)?;
                modulate(x, &gamma, &beta)?
            }
            (None, _) => x.clone(),
            (Some(_), None) => return Err(invalid!("modulated layer needs a style field")),
        };
        let y = self.conv.forward(p, &x);
        Ok(if self.hidden { lrelu(&normalize(&y)) } else { y })
    }
}
