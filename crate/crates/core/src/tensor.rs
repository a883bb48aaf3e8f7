//! Dense height × width × channel tensors and the forward-pass building
//! blocks of a CSPDarknet-style network: convolution, activations, residual
//! and cross-stage-partial blocks, pooling, SPP and neck routing.
//!
//! Everything here is a pure function of its inputs. Values are stored
//! row-major in `(row, column, channel)` order.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        dim: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("value buffer has {found} elements, shape requires {expected}")]
    BufferLength { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// A dense 3-D feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(TensorError::BufferLength {
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    values.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.values[i] = value;
    }

    /// Channels `start..end` of every spatial position.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.channels {
            return Err(TensorError::InvalidParameter(format!(
                "channel range {start}..{end} outside 0..{}",
                self.channels
            )));
        }
        let depth = end - start;
        let mut values = Vec::with_capacity(self.height * self.width * depth);
        for pixel in self.values.chunks_exact(self.channels.max(1)) {
            values.extend_from_slice(&pixel[start..end]);
        }
        if self.channels == 0 {
            values.clear();
        }
        Tensor::new(self.height, self.width, depth, values)
    }

    /// Element-wise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_dim("height", self.height, other.height)?;
        check_dim("width", self.width, other.width)?;
        check_dim("channels", self.channels, other.channels)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(self.height, self.width, self.channels, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn check_dim(dim: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            dim,
            expected,
            found,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Linear,
    Leaky,
    Mish,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Leaky => leaky_relu(x, LEAKY_SLOPE),
            Activation::Mish => mish(x),
        }
    }
}

/// Darknet's leaky slope.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Above this input, `ln(1 + e^x)` is replaced by `x`.
const SOFTPLUS_CUTOFF: f64 = 20.0;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_CUTOFF {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Mish activation, `x · tanh(ln(1 + eˣ))`. Total on all finite inputs.
#[inline]
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// A square convolution kernel bank.
///
/// Weights are laid out `[filter][in_channel][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    filters: usize,
    in_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl ConvParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        filters: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if filters == 0 || kernel == 0 || stride == 0 {
            return Err(TensorError::InvalidParameter(format!(
                "filters ({filters}), kernel ({kernel}) and stride ({stride}) must be positive"
            )));
        }
        let expected = filters * in_channels * kernel * kernel;
        if weights.len() != expected {
            return Err(TensorError::BufferLength {
                expected,
                found: weights.len(),
            });
        }
        if bias.len() != filters {
            return Err(TensorError::BufferLength {
                expected: filters,
                found: bias.len(),
            });
        }
        Ok(Self {
            filters,
            in_channels,
            kernel,
            stride,
            pad,
            weights,
            bias,
            activation,
        })
    }

    /// 1×1, stride 1, linear convolution that copies its input.
    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = 1.0;
        }
        Self {
            filters: channels,
            in_channels: channels,
            kernel: 1,
            stride: 1,
            pad: 0,
            weights,
            bias: vec![0.0; channels],
            activation: Activation::Linear,
        }
    }

    /// All-zero weights and bias.
    pub fn zeroed(
        filters: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(
            filters,
            in_channels,
            kernel,
            stride,
            pad,
            vec![0.0; filters * in_channels * kernel * kernel],
            vec![0.0; filters],
            activation,
        )
    }

    pub fn filters(&self) -> usize {
        self.filters
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn kernel(&self) -> usize {
        self.kernel
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn pad(&self) -> usize {
        self.pad
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    #[inline]
    fn weight(&self, filter: usize, channel: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((filter * self.in_channels + channel) * self.kernel + ky) * self.kernel + kx]
    }
}

/// Output length of a sliding window along one axis.
pub fn window_output(
    dim: &'static str,
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(TensorError::ShapeMismatch {
            dim,
            expected: kernel,
            found: padded,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    check_dim("channels", params.in_channels, input.channels)?;
    let out_h = window_output("height", input.height, params.kernel, params.stride, params.pad)?;
    let out_w = window_output("width", input.width, params.kernel, params.stride, params.pad)?;
    let k = params.kernel as isize;
    let pad = params.pad as isize;
    let mut out = Tensor::zeros(out_h, out_w, params.filters);

    for oy in 0..out_h {
        for ox in 0..out_w {
            let y0 = (oy * params.stride) as isize - pad;
            let x0 = (ox * params.stride) as isize - pad;
            for f in 0..params.filters {
                let mut acc = params.bias[f];
                for ky in 0..k {
                    let y = y0 + ky;
                    if y < 0 || y >= input.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let x = x0 + kx;
                        if x < 0 || x >= input.width as isize {
                            continue;
                        }
                        let base = input.index(y as usize, x as usize, 0);
                        for c in 0..input.channels {
                            acc += input.values[base + c]
                                * params.weight(f, c, ky as usize, kx as usize);
                        }
                    }
                }
                out.set(oy, ox, f, params.activation.apply(acc));
            }
        }
    }
    Ok(out)
}

/// `y = F(x) + x` where `F` is a 1×1 convolution followed by a 3×3 one.
pub fn residual_block(input: &Tensor, conv1: &ConvParams, conv2: &ConvParams) -> Result<Tensor> {
    if conv1.kernel != 1 {
        return Err(TensorError::InvalidParameter(format!(
            "residual reduction conv must be 1x1, got {}x{}",
            conv1.kernel, conv1.kernel
        )));
    }
    if conv2.kernel != 3 || conv2.pad != 1 {
        return Err(TensorError::InvalidParameter(format!(
            "residual expansion conv must be 3x3 with pad 1, got {}x{} pad {}",
            conv2.kernel, conv2.kernel, conv2.pad
        )));
    }
    let mapped = conv2d(&conv2d(input, conv1)?, conv2)?;
    mapped.add(input)
}

/// Cross-stage partial block.
///
/// The input channels are split into a leading part of
/// `channels · numerator / denominator` channels and the remainder. The
/// branch convolutions run on the remainder only; the leading part is
/// concatenated in front of the branch output and the transition
/// convolution is applied to the result.
pub fn csp_block(
    input: &Tensor,
    split: (usize, usize),
    branch: &[ConvParams],
    transition: &ConvParams,
) -> Result<Tensor> {
    let (num, den) = split;
    if den == 0 || num > den {
        return Err(TensorError::InvalidParameter(format!(
            "split fraction {num}/{den} outside [0, 1]"
        )));
    }
    let scaled = input.channels * num;
    if !scaled.is_multiple_of(den) {
        return Err(TensorError::InvalidParameter(format!(
            "{} channels cannot be split at {num}/{den}",
            input.channels
        )));
    }
    let head = scaled / den;
    let bypass = input.slice_channels(0, head)?;
    let mut routed = input.slice_channels(head, input.channels)?;
    for conv in branch {
        routed = conv2d(&routed, conv)?;
    }
    let merged = concat_channels(&bypass, &routed)?;
    conv2d(&merged, transition)
}

/// Per-channel window maximum; padded cells never win.
pub fn max_pool(input: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    if kernel == 0 || stride == 0 {
        return Err(TensorError::InvalidParameter(
            "pool kernel and stride must be positive".into(),
        ));
    }
    if pad >= kernel {
        return Err(TensorError::InvalidParameter(format!(
            "pool padding {pad} would allow windows entirely outside the input (kernel {kernel})"
        )));
    }
    let out_h = window_output("height", input.height, kernel, stride, pad)?;
    let out_w = window_output("width", input.width, kernel, stride, pad)?;
    let mut out = Tensor::zeros(out_h, out_w, input.channels);
    let (h, w) = (input.height as isize, input.width as isize);

    for oy in 0..out_h {
        for ox in 0..out_w {
            let y0 = (oy * stride) as isize - pad as isize;
            let x0 = (ox * stride) as isize - pad as isize;
            let ys = y0.max(0)..(y0 + kernel as isize).min(h);
            let xs = x0.max(0)..(x0 + kernel as isize).min(w);
            for c in 0..input.channels {
                let mut best = f64::NEG_INFINITY;
                for y in ys.clone() {
                    for x in xs.clone() {
                        best = best.max(input.get(y as usize, x as usize, c));
                    }
                }
                out.set(oy, ox, c, best);
            }
        }
    }
    Ok(out)
}

/// Canonical YOLOv4 spatial pyramid pooling sizes.
pub const DEFAULT_SPP_SIZES: [usize; 3] = [5, 9, 13];

/// Concatenates the input with stride-1, shape-preserving max pools of each
/// size, in list order.
pub fn spp_block(input: &Tensor, pool_sizes: &[usize]) -> Result<Tensor> {
    if let Some(&even) = pool_sizes.iter().find(|&&s| s % 2 == 0) {
        return Err(TensorError::InvalidParameter(format!(
            "SPP pool size {even} is even; sizes must be odd to preserve shape"
        )));
    }
    let mut out = input.clone();
    for &size in pool_sizes {
        let pooled = max_pool(input, size, 1, (size - 1) / 2)?;
        out = concat_channels(&out, &pooled)?;
    }
    Ok(out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_dim("height", a.height, b.height)?;
    check_dim("width", a.width, b.width)?;
    let channels = a.channels + b.channels;
    let mut values = Vec::with_capacity(a.height * a.width * channels);
    for i in 0..a.height * a.width {
        values.extend_from_slice(&a.values[i * a.channels..(i + 1) * a.channels]);
        values.extend_from_slice(&b.values[i * b.channels..(i + 1) * b.channels]);
    }
    Tensor::new(a.height, a.width, channels, values)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.height * 2, input.width * 2, input.channels, |r, c, ch| {
        input.get(r / 2, c / 2, ch)
    })
}
