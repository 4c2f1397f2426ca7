//! Parameter storage and equalized-learning-rate layers.

use rand::Rng;
use sgg_autodiff::{conv2d, grad, Conv2dSpec, Float, Tensor, Var};

pub const LRELU_SLOPE: f64 = 0.2;

pub fn lrelu<T: Float>(x: &Var<T>) -> Var<T> {
    x.leaky_relu(LRELU_SLOPE)
}

/// Leaky ReLU rescaled by √2 to keep unit variance.
pub fn lrelu_gain<T: Float>(x: &Var<T>) -> Var<T> {
    x.leaky_relu(LRELU_SLOPE).scale(std::f64::consts::SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one network.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Float> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// Graph handles for every parameter; `trainable` decides whether they receive gradients.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { Var::leaf(v.clone()) } else { Var::constant(v.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), values: self.values.iter().map(Tensor::cast).collect() }
    }
}

/// Parameters bound into the current computation graph.
pub struct Bound<T: Float> {
    vars: Vec<Var<T>>,
}

impl<T: Float> Bound<T> {
    pub fn get(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }

    /// Gradients of a scalar loss with respect to every bound parameter.
    pub fn grads(&self, loss: &Var<T>) -> Vec<Tensor<T>> {
        let refs: Vec<&Var<T>> = self.vars.iter().collect();
        grad(loss, &refs, false).into_iter().map(|g| g.value().clone()).collect()
    }
}

fn randn<T: Float, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, rng)
}

/// Fully connected layer with runtime weight scaling 1/√fan_in.
#[derive(Clone, Debug)]
pub struct EqLinear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
    scale: f64,
}

impl EqLinear {
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias_init: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), randn(&[out_dim, in_dim], rng));
        let bias = bias_init.map(|b| params.add(format!("{name}.bias"), Tensor::full(&[out_dim], T::of(b))));
        Self { weight, bias, in_dim, out_dim, scale: 1.0 / (in_dim as f64).sqrt() }
    }

    /// `x` is [N, in_dim]; returns [N, out_dim].
    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let w = p.get(self.weight).scale(self.scale);
        let y = x.matmul_t(&w, false, true);
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => y,
        }
    }
}

/// 2-D convolution with runtime weight scaling 1/√(C·k²) and "same" padding.
#[derive(Clone, Debug)]
pub struct EqConv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    scale: f64,
}

impl EqConv2d {
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias_init: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), randn(&[out_channels, in_channels, kernel, kernel], rng));
        let bias = bias_init.map(|b| params.add(format!("{name}.bias"), Tensor::full(&[out_channels], T::of(b))));
        let fan_in = (in_channels * kernel * kernel) as f64;
        Self { weight, bias, in_channels, out_channels, kernel, scale: 1.0 / fan_in.sqrt() }
    }

    /// `x` is [N, C, H, W]; returns [N, O, H, W].
    pub fn forward<T: Float>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let w = p.get(self.weight).scale(self.scale);
        let y = conv2d(x, &w, Conv2dSpec::same(self.kernel));
        match self.bias {
            Some(b) => y.add(&p.get(b).reshape(&[1, self.out_channels, 1, 1])),
            None => y,
        }
    }
}
