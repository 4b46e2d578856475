//! Parameterized layers: convolution, transposed convolution, batch norm.
//!
//! Initialization is Kaiming-style fan-in scaling: conv weights are drawn
//! uniformly from [-sqrt(3/fan_in), sqrt(3/fan_in)] (variance 1/fan_in) with
//! fan_in = in_channels * kernel_h * kernel_w. The gain is the linear one:
//! every ReLU in this network sits behind a batch norm, which erases the
//! scale of its preceding conv, while the remaining convs form long linear
//! chains (MIEM branches, pyramid fusion, steering, both heads) where a ReLU
//! gain would double activation variance per layer and saturate the sigmoid
//! heads at init. Biases start at zero, batch-norm gains at one, shifts at
//! zero, running statistics at (mean 0, var 1).

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{batch_norm, conv2d, conv_transpose2d, relu, BnMode, ConvSpec, Shape, Tensor};

/// Named trainable parameter. `decay` marks participation in weight decay.
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub decay: bool,
}

/// Named non-trainable state (batch-norm running statistics).
pub struct BufferEntry {
    pub name: String,
    pub data: Rc<RefCell<Vec<f64>>>,
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, count: usize, fan_in: usize) -> Vec<f64> {
    let bound = (3.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Convolution layer owning its weights and optional bias.
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec, rng: &mut ChaCha8Rng) -> ConvLayer {
        let shape = spec.weight_shape();
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let weights = Tensor::param(shape, kaiming_uniform(rng, shape.numel(), fan_in));
        let bias = spec
            .has_bias
            .then(|| Tensor::param(Shape([1, spec.out_channels, 1, 1]), vec![0.0; spec.out_channels]));
        ConvLayer { spec, weights, bias }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        conv2d(input, &self.spec, &self.weights, self.bias.as_ref())
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>) {
        params.push(ParamEntry {
            name: format!("{prefix}.weight"),
            tensor: self.weights.clone(),
            decay: true,
        });
        if let Some(b) = &self.bias {
            params.push(ParamEntry { name: format!("{prefix}.bias"), tensor: b.clone(), decay: false });
        }
    }
}

/// Transposed convolution layer. Weight layout is (in, out, kh, kw).
pub struct TConvLayer {
    pub spec: ConvSpec,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl TConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> TConvLayer {
        let spec = ConvSpec::new(in_channels, out_channels, kernel, kernel).stride(stride);
        let count = in_channels * out_channels * kernel * kernel;
        let fan_in = in_channels * kernel * kernel;
        let weights = Tensor::param(
            Shape([in_channels, out_channels, kernel, kernel]),
            kaiming_uniform(rng, count, fan_in),
        );
        let bias = Tensor::param(Shape([1, out_channels, 1, 1]), vec![0.0; out_channels]);
        TConvLayer { spec, weights, bias }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        conv_transpose2d(input, &self.spec, &self.weights, Some(&self.bias))
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>) {
        params.push(ParamEntry {
            name: format!("{prefix}.weight"),
            tensor: self.weights.clone(),
            decay: true,
        });
        params.push(ParamEntry {
            name: format!("{prefix}.bias"),
            tensor: self.bias.clone(),
            decay: false,
        });
    }
}

/// Batch normalization layer with owned running statistics.
pub struct BnLayer {
    pub channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Rc<RefCell<Vec<f64>>>,
    pub running_var: Rc<RefCell<Vec<f64>>>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BnLayer {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> BnLayer {
        BnLayer {
            channels,
            gamma: Tensor::param(Shape([1, channels, 1, 1]), vec![1.0; channels]),
            beta: Tensor::param(Shape([1, channels, 1, 1]), vec![0.0; channels]),
            running_mean: Rc::new(RefCell::new(vec![0.0; channels])),
            running_var: Rc::new(RefCell::new(vec![1.0; channels])),
            momentum,
            epsilon,
        }
    }

    pub fn forward(&self, input: &Tensor, mode: BnMode) -> Tensor {
        let mut mean = self.running_mean.borrow_mut();
        let mut var = self.running_var.borrow_mut();
        batch_norm(input, &self.gamma, &self.beta, &mut mean, &mut var, mode, self.momentum, self.epsilon)
    }

    pub fn collect(
        &self,
        prefix: &str,
        params: &mut Vec<ParamEntry>,
        buffers: &mut Vec<BufferEntry>,
    ) {
        params.push(ParamEntry {
            name: format!("{prefix}.gamma"),
            tensor: self.gamma.clone(),
            decay: false,
        });
        params.push(ParamEntry {
            name: format!("{prefix}.beta"),
            tensor: self.beta.clone(),
            decay: false,
        });
        buffers.push(BufferEntry {
            name: format!("{prefix}.running_mean"),
            data: Rc::clone(&self.running_mean),
        });
        buffers.push(BufferEntry {
            name: format!("{prefix}.running_var"),
            data: Rc::clone(&self.running_var),
        });
    }
}

/// Conv -> BN -> ReLU unit. The convolution is bias-free since BN absorbs it.
pub struct ConvBnRelu {
    pub conv: ConvLayer,
    pub bn: BnLayer,
}

impl ConvBnRelu {
    pub fn new(spec: ConvSpec, momentum: f64, epsilon: f64, rng: &mut ChaCha8Rng) -> ConvBnRelu {
        assert!(!spec.has_bias, "BN absorbs the conv bias");
        let out = spec.out_channels;
        ConvBnRelu { conv: ConvLayer::new(spec, rng), bn: BnLayer::new(out, momentum, epsilon) }
    }

    pub fn forward(&self, input: &Tensor, mode: BnMode) -> Tensor {
        relu(&self.bn.forward(&self.conv.forward(input), mode))
    }

    pub fn collect(
        &self,
        prefix: &str,
        params: &mut Vec<ParamEntry>,
        buffers: &mut Vec<BufferEntry>,
    ) {
        self.conv.collect(&format!("{prefix}.conv"), params);
        self.bn.collect(&format!("{prefix}.bn"), params, buffers);
    }
}
