//! Feed-forward conv/pool/dense network with hand-written backpropagation.
//!
//! Activations are stored batch-first: `[N, C, H, W]` for feature maps and
//! `[N, D]` after `Flatten`. Conv weights are `[out, in, kh, kw]` and dense
//! weights `[out, in]`, so the leading axis of every weight indexes the
//! output unit (one conv filter per leading-axis slice).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::model::{Gradients, Model, Params};
use crate::rng::SeededRng;
use crate::tensor::{gaussian_init, gemm_nn, gemm_nt, gemm_tn, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        Self::Conv {
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn pool(window: usize) -> Self {
        Self::MaxPool {
            window,
            stride: window,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::Dense { .. })
    }
}

/// Activation shape of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(d) => d,
        }
    }
}

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn next_shape(spec: &LayerSpec, shape: Shape) -> Result<Shape> {
    match (*spec, shape) {
        (
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            },
            Shape::Map { h, w, .. },
        ) => {
            let oh = out_len(h, kernel_h, stride, padding);
            let ow = out_len(w, kernel_w, stride, padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) if out_channels > 0 => Ok(Shape::Map {
                    c: out_channels,
                    h: oh,
                    w: ow,
                }),
                _ => dim_err(format!("conv {spec:?} does not fit input {shape:?}")),
            }
        }
        (LayerSpec::MaxPool { window, stride }, Shape::Map { c, h, w }) => {
            match (out_len(h, window, stride, 0), out_len(w, window, stride, 0)) {
                (Some(oh), Some(ow)) => Ok(Shape::Map { c, h: oh, w: ow }),
                _ => dim_err(format!("pool {spec:?} does not fit input {shape:?}")),
            }
        }
        (LayerSpec::Dense { in_dim, out_dim }, Shape::Flat(d)) => {
            if in_dim != d || out_dim == 0 {
                return dim_err(format!("dense expects {in_dim} inputs, got {d}"));
            }
            Ok(Shape::Flat(out_dim))
        }
        (LayerSpec::Relu, s) => Ok(s),
        (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.numel())),
        (spec, s) => dim_err(format!("layer {spec:?} cannot consume shape {s:?}")),
    }
}

/// Output shape of every layer (index `i` is the output of layer `i`).
pub fn infer_shapes(input: [usize; 3], specs: &[LayerSpec]) -> Result<Vec<Shape>> {
    let mut shape = Shape::Map {
        c: input[0],
        h: input[1],
        w: input[2],
    };
    specs
        .iter()
        .map(|spec| {
            shape = next_shape(spec, shape)?;
            Ok(shape)
        })
        .collect()
}

/// Parses the `-`-joined architecture notation, e.g.
/// `conv:5x5x5-pool:2-flatten-fc:10`.
///
/// Tokens: `conv:OUTxKHxKW` with optional `sS` / `pP` suffixes (stride,
/// padding), `pool:W` with optional `sS`, `flatten`, `fc:OUT`. A ReLU is
/// inserted after every conv and every fc except the last layer; dense
/// input sizes are inferred from `input`.
pub fn parse_arch(arch: &str, input: [usize; 3]) -> Result<Vec<LayerSpec>> {
    let bad = |tok: &str| Error::Argument(format!("bad architecture token `{tok}`"));
    let tokens: Vec<&str> = arch.split('-').map(str::trim).filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(Error::Argument("empty architecture".into()));
    }
    let mut specs = Vec::new();
    let mut shape = Shape::Map {
        c: input[0],
        h: input[1],
        w: input[2],
    };
    for (ti, tok) in tokens.iter().enumerate() {
        let last = ti + 1 == tokens.len();
        let (head, arg) = tok.split_once(':').unwrap_or((tok, ""));
        let spec = match head {
            "conv" => {
                let (dims, mods) = split_mods(arg);
                let d: Vec<usize> = dims
                    .split('x')
                    .map(|v| v.parse().map_err(|_| bad(tok)))
                    .collect::<Result<_>>()?;
                let (out_channels, kernel_h, kernel_w) = match d[..] {
                    [o, k] => (o, k, k),
                    [o, kh, kw] => (o, kh, kw),
                    _ => return Err(bad(tok)),
                };
                LayerSpec::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride: mod_value(mods, 's', 1).ok_or_else(|| bad(tok))?,
                    padding: mod_value(mods, 'p', 0).ok_or_else(|| bad(tok))?,
                }
            }
            "pool" => {
                let (dims, mods) = split_mods(arg);
                let window: usize = dims.parse().map_err(|_| bad(tok))?;
                LayerSpec::MaxPool {
                    window,
                    stride: mod_value(mods, 's', window).ok_or_else(|| bad(tok))?,
                }
            }
            "flatten" => LayerSpec::Flatten,
            "fc" => LayerSpec::Dense {
                in_dim: match shape {
                    Shape::Flat(d) => d,
                    Shape::Map { .. } => {
                        return Err(Error::Argument(format!("`{tok}` needs a preceding flatten")))
                    }
                },
                out_dim: arg.parse().map_err(|_| bad(tok))?,
            },
            _ => return Err(bad(tok)),
        };
        shape = next_shape(&spec, shape)?;
        specs.push(spec);
        if spec.is_parametric() && !last {
            specs.push(LayerSpec::Relu);
        }
    }
    match specs.last() {
        Some(LayerSpec::Dense { .. }) => Ok(specs),
        _ => Err(Error::Argument("architecture must end with an fc layer".into())),
    }
}

fn split_mods(arg: &str) -> (&str, &str) {
    match arg.find(['s', 'p']) {
        Some(i) => (&arg[..i], &arg[i..]),
        None => (arg, ""),
    }
}

fn mod_value(mods: &str, key: char, default: usize) -> Option<usize> {
    let mut rest = mods;
    let mut found = default;
    while !rest.is_empty() {
        let k = rest.chars().next()?;
        let end = rest[1..].find(|c: char| !c.is_ascii_digit()).map_or(rest.len(), |e| e + 1);
        let v: usize = rest[1..end].parse().ok()?;
        if k == key {
            found = v;
        } else if k != 's' && k != 'p' {
            return None;
        }
        rest = &rest[end..];
    }
    Some(found)
}

/// Inverse of [`parse_arch`] (implicit ReLUs are omitted).
pub fn format_arch(specs: &[LayerSpec]) -> String {
    specs
        .iter()
        .filter_map(|s| match *s {
            LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let mut t = format!("conv:{out_channels}x{kernel_h}x{kernel_w}");
                if stride != 1 {
                    t.push_str(&format!("s{stride}"));
                }
                if padding != 0 {
                    t.push_str(&format!("p{padding}"));
                }
                Some(t)
            }
            LayerSpec::MaxPool { window, stride } if stride == window => Some(format!("pool:{window}")),
            LayerSpec::MaxPool { window, stride } => Some(format!("pool:{window}s{stride}")),
            LayerSpec::Dense { out_dim, .. } => Some(format!("fc:{out_dim}")),
            LayerSpec::Flatten => Some("flatten".into()),
            LayerSpec::Relu => None,
        })
        .collect::<Vec<_>>()
        .join("-")
}

#[derive(Debug, Clone)]
pub struct Batch<T: Scalar = f64> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 4 {
            return dim_err(format!("batch inputs must be N×C×H×W, got {:?}", inputs.shape()));
        }
        if labels.len() != inputs.shape()[0] {
            return dim_err(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.shape()[0]
            ));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Layer<T: Scalar = f64> {
    pub spec: LayerSpec,
    pub params: Option<Params<T>>,
}

#[derive(Debug)]
enum Aux<T> {
    Cols(Vec<T>),
    Argmax(Vec<u32>),
    None,
}

#[derive(Debug)]
struct Cache<T: Scalar> {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
    probs: Vec<T>,
    labels: Vec<usize>,
}

/// Evaluation chunk size for cache-free forward passes.
const EVAL_CHUNK: usize = 250;

#[derive(Debug)]
pub struct Network<T: Scalar = f64> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
    shapes: Vec<Shape>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> Clone for Network<T> {
    // forward caches are per-owner scratch and are not carried over
    fn clone(&self) -> Self {
        Self {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            cache: None,
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-initialized weights and zero biases.
    pub fn new(input_shape: [usize; 3], specs: Vec<LayerSpec>, use_bias: bool, rng: &mut SeededRng) -> Result<Self> {
        let shapes = infer_shapes(input_shape, &specs)?;
        let mut in_shape = Shape::Map {
            c: input_shape[0],
            h: input_shape[1],
            w: input_shape[2],
        };
        let mut layers = Vec::with_capacity(specs.len());
        for (spec, out) in specs.into_iter().zip(&shapes) {
            let params = match spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    let c = match in_shape {
                        Shape::Map { c, .. } => c,
                        Shape::Flat(_) => unreachable!("checked by infer_shapes"),
                    };
                    let fan_in = c * kernel_h * kernel_w;
                    Some(Params {
                        weight: gaussian_init(rng, &[out_channels, c, kernel_h, kernel_w], fan_in)?,
                        bias: use_bias.then(|| Tensor::zeros(&[out_channels])),
                    })
                }
                LayerSpec::Dense { in_dim, out_dim } => Some(Params {
                    weight: gaussian_init(rng, &[out_dim, in_dim], in_dim)?,
                    bias: use_bias.then(|| Tensor::zeros(&[out_dim])),
                }),
                _ => None,
            };
            layers.push(Layer { spec, params });
            in_shape = *out;
        }
        Self::from_layers(input_shape, layers)
    }

    pub fn from_arch(arch: &str, input_shape: [usize; 3], use_bias: bool, rng: &mut SeededRng) -> Result<Self> {
        Self::new(input_shape, parse_arch(arch, input_shape)?, use_bias, rng)
    }

    /// Assembles a network from explicit layers, checking every parameter shape.
    pub fn from_layers(input_shape: [usize; 3], layers: Vec<Layer<T>>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        let shapes = infer_shapes(input_shape, &specs)?;
        if !matches!(specs.last(), Some(LayerSpec::Dense { .. })) {
            return Err(Error::Argument("network must end with a dense layer".into()));
        }
        let mut in_c = input_shape[0];
        for (i, layer) in layers.iter().enumerate() {
            let expected = match layer.spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => Some((vec![out_channels, in_c, kernel_h, kernel_w], out_channels)),
                LayerSpec::Dense { in_dim, out_dim } => Some((vec![out_dim, in_dim], out_dim)),
                _ => None,
            };
            match (expected, &layer.params) {
                (None, None) => {}
                (Some((wshape, out)), Some(p)) => {
                    if p.weight.shape() != wshape.as_slice() {
                        return dim_err(format!("layer {i}: weight {:?}, expected {wshape:?}", p.weight.shape()));
                    }
                    if let Some(b) = &p.bias {
                        if b.shape() != [out] {
                            return dim_err(format!("layer {i}: bias {:?}, expected [{out}]", b.shape()));
                        }
                    }
                }
                _ => return Err(Error::Argument(format!("layer {i}: parameters do not match spec"))),
            }
            if let Shape::Map { c, .. } = shapes[i] {
                in_c = c;
            }
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            cache: None,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn num_classes(&self) -> usize {
        match self.shapes.last() {
            Some(Shape::Flat(k)) => *k,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Output shape of layer `i` for a single sample.
    pub fn output_shape(&self, layer: usize) -> Shape {
        self.shapes[layer]
    }

    pub fn input_shape_of(&self, layer: usize) -> Shape {
        if layer == 0 {
            let [c, h, w] = self.input_shape;
            Shape::Map { c, h, w }
        } else {
            self.shapes[layer - 1]
        }
    }

    /// `conv1`, `conv2`, …, `fc1`, `fc2`, … in layer order.
    pub fn name_of(&self, layer: usize) -> String {
        let spec = &self.layers[layer].spec;
        let ordinal = self.layers[..=layer]
            .iter()
            .filter(|l| std::mem::discriminant(&l.spec) == std::mem::discriminant(spec))
            .count();
        match spec {
            LayerSpec::Conv { .. } => format!("conv{ordinal}"),
            LayerSpec::Dense { .. } => format!("fc{ordinal}"),
            LayerSpec::MaxPool { .. } => format!("pool{ordinal}"),
            LayerSpec::Relu => format!("relu{ordinal}"),
            LayerSpec::Flatten => format!("flatten{ordinal}"),
        }
    }

    pub fn layer_by_name(&self, name: &str) -> Option<usize> {
        (0..self.layers.len()).find(|&i| self.name_of(i) == name)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.params.as_ref()).map(Params::count).sum()
    }

    pub fn nonzero_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weight.count_nonzero() + p.bias.as_ref().map_or(0, Tensor::count_nonzero))
            .sum()
    }

    /// Next parametric layer after `layer`, if any.
    pub fn next_parametric(&self, layer: usize) -> Option<usize> {
        (layer + 1..self.layers.len()).find(|&i| self.layers[i].spec.is_parametric())
    }

    /// Forward pass that caches activations for [`Network::backward`].
    /// Returns the logits and the mean softmax cross-entropy.
    pub fn forward(&mut self, batch: &Batch<T>) -> Result<(Tensor<T>, f64)> {
        self.check_input(&batch.inputs)?;
        let k = self.num_classes();
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= k) {
            return Err(Error::Argument(format!("label {bad} out of range for {k} classes")));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut x = batch.inputs.clone();
        for layer in &self.layers {
            let (y, a) = layer_forward(layer, &x, true)?;
            acts.push(x);
            aux.push(a);
            x = y;
        }
        let (loss, probs) = softmax_xent(&x, &batch.labels);
        acts.push(x.clone());
        self.cache = Some(Cache {
            acts,
            aux,
            probs,
            labels: batch.labels.clone(),
        });
        Ok((x, loss))
    }

    /// Exact gradient of the cached forward pass's loss.
    pub fn backward(&mut self, batch: &Batch<T>) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        if cache.labels != batch.labels {
            return Err(Error::State("backward batch differs from the cached forward batch".into()));
        }
        let n = batch.len();
        let k = self.num_classes();
        let inv_n = T::of(1.0 / n as f64);
        let mut grad = cache.probs.clone();
        for (i, &y) in batch.labels.iter().enumerate() {
            grad[i * k + y] -= T::one();
        }
        grad.iter_mut().for_each(|g| *g *= inv_n);
        let mut dy = Tensor::new(vec![n, k], grad)?;

        let mut out: Vec<Option<Params<T>>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0;
            let (dx, dp) = layer_backward(layer, &cache.acts[i], &cache.acts[i + 1], &cache.aux[i], &dy, need_dx)?;
            out[i] = dp;
            match dx {
                Some(dx) => dy = dx,
                None => break,
            }
        }
        Ok(Gradients { layers: out })
    }

    /// Drops the forward cache.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Cache-free forward pass, evaluated in fixed-size chunks.
    pub fn logits(&self, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(inputs)?;
        let n = inputs.shape()[0];
        let per = inputs.row_len();
        let k = self.num_classes();
        let mut out = Vec::with_capacity(n * k);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(n);
            let [c, h, w] = self.input_shape;
            let mut x = Tensor::new(vec![end - start, c, h, w], inputs.data()[start * per..end * per].to_vec())?;
            for layer in &self.layers {
                x = layer_forward(layer, &x, false)?.0;
            }
            out.extend_from_slice(x.data());
        }
        Tensor::new(vec![n, k], out)
    }

    pub fn loss(&self, batch: &Batch<T>) -> Result<f64> {
        let logits = self.logits(&batch.inputs)?;
        Ok(softmax_xent(&logits, &batch.labels).0)
    }

    /// Fraction of samples whose arg-max logit equals the label.
    pub fn accuracy(&self, data: &Dataset<T>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Argument("accuracy of an empty dataset".into()));
        }
        let logits = self.logits(&data.images)?;
        let hits = argmax_rows(&logits)
            .iter()
            .zip(&data.labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / data.len() as f64)
    }

    pub fn params(&self, layer: usize) -> Option<&Params<T>> {
        self.layers.get(layer).and_then(|l| l.params.as_ref())
    }

    pub fn params_mut(&mut self, layer: usize) -> Option<&mut Params<T>> {
        self.cache = None;
        self.layers.get_mut(layer).and_then(|l| l.params.as_mut())
    }

    pub fn weight(&self, layer: usize) -> Result<&Tensor<T>> {
        self.params(layer)
            .map(|p| &p.weight)
            .ok_or_else(|| Error::Index(format!("layer {layer} has no weights")))
    }

    /// Grows conv layer `layer` to `new_out` filters.
    ///
    /// Existing filters are kept bit-for-bit; new filters are He-initialized
    /// with zero bias. The next parametric layer gains inputs for the new
    /// channels, appended at the end of each of its weight rows and
    /// initialized the same way. Returns how the downstream rows grew.
    pub fn resize_layer(&mut self, layer: usize, new_out: usize, rng: &mut SeededRng) -> Result<Resize> {
        let (old_out, c, kh, kw) = match self.layers.get(layer).map(|l| l.spec) {
            Some(LayerSpec::Conv {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            }) => {
                let c = self.weight(layer)?.shape()[1];
                (out_channels, c, kernel_h, kernel_w)
            }
            _ => return Err(Error::Argument(format!("layer {layer} is not a conv layer"))),
        };
        if new_out <= old_out {
            return Err(Error::Argument(format!(
                "resize_layer only grows layers ({old_out} -> {new_out}); prune to shrink"
            )));
        }
        let added = new_out - old_out;
        let fan_in = c * kh * kw;

        let next = self.next_parametric(layer);
        let downstream = match next {
            Some(j) => {
                if self.layers[layer + 1..j]
                    .iter()
                    .any(|l| !matches!(l.spec, LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Flatten))
                {
                    return Err(Error::Argument("unsupported layer between conv and its consumer".into()));
                }
                // per-channel width of the consumer's input rows
                let per_channel = match (self.layers[j].spec, self.input_shape_of(j)) {
                    (LayerSpec::Conv { kernel_h, kernel_w, .. }, _) => kernel_h * kernel_w,
                    (LayerSpec::Dense { in_dim, .. }, _) => in_dim / old_out,
                    _ => unreachable!(),
                };
                Some((j, per_channel))
            }
            None => None,
        };

        {
            let p = self.layers[layer].params.as_mut().expect("conv has params");
            let mut data = p.weight.data().to_vec();
            let fresh: Tensor<T> = gaussian_init(rng, &[added, c, kh, kw], fan_in)?;
            data.extend_from_slice(fresh.data());
            p.weight = Tensor::new(vec![new_out, c, kh, kw], data)?;
            if let Some(b) = &mut p.bias {
                let mut bd = b.data().to_vec();
                bd.resize(new_out, T::zero());
                *b = Tensor::new(vec![new_out], bd)?;
            }
        }
        if let LayerSpec::Conv { out_channels, .. } = &mut self.layers[layer].spec {
            *out_channels = new_out;
        }

        let mut resize = Resize {
            layer,
            old_out,
            new_out,
            downstream: None,
        };
        if let Some((j, per_channel)) = downstream {
            let p = self.layers[j].params.as_mut().expect("parametric");
            let rows = p.weight.shape()[0];
            let old_row = p.weight.row_len();
            let new_row = old_row + added * per_channel;
            let fresh: Tensor<T> = gaussian_init(rng, &[rows, added * per_channel], new_row)?;
            let mut data = Vec::with_capacity(rows * new_row);
            for r in 0..rows {
                data.extend_from_slice(&p.weight.data()[r * old_row..(r + 1) * old_row]);
                data.extend_from_slice(&fresh.data()[r * added * per_channel..(r + 1) * added * per_channel]);
            }
            let mut shape = p.weight.shape().to_vec();
            match &mut self.layers[j].spec {
                LayerSpec::Conv { .. } => shape[1] += added,
                LayerSpec::Dense { in_dim, .. } => {
                    *in_dim = new_row;
                    shape[1] = new_row;
                }
                _ => unreachable!(),
            }
            self.layers[j].params.as_mut().unwrap().weight = Tensor::new(shape, data)?;
            resize.downstream = Some(DownstreamResize {
                layer: j,
                old_row_len: old_row,
                new_row_len: new_row,
            });
        }
        let specs = self.specs();
        self.shapes = infer_shapes(self.input_shape, &specs)?;
        self.cache = None;
        Ok(resize)
    }

    fn check_input(&self, inputs: &Tensor<T>) -> Result<()> {
        let s = inputs.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return dim_err(format!("input {s:?} does not match network input {:?}", self.input_shape));
        }
        Ok(())
    }
}

/// Record of a [`Network::resize_layer`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resize {
    pub layer: usize,
    pub old_out: usize,
    pub new_out: usize,
    pub downstream: Option<DownstreamResize>,
}

/// The consumer layer's weight rows grew from `old_row_len` to
/// `new_row_len`, with the new entries appended at the end of each row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownstreamResize {
    pub layer: usize,
    pub old_row_len: usize,
    pub new_row_len: usize,
}

/// Re-lays a `[rows, old_row_len]`-shaped buffer into rows of `new_row_len`,
/// filling the appended tail of every row with `fill`.
pub fn widen_rows<T: Scalar>(t: &Tensor<T>, new_row_len: usize, fill: T) -> Result<Tensor<T>> {
    let rows = t.rows();
    let old = t.row_len();
    if new_row_len < old {
        return dim_err("widen_rows cannot shrink rows");
    }
    let mut data = Vec::with_capacity(rows * new_row_len);
    for r in 0..rows {
        data.extend_from_slice(&t.data()[r * old..(r + 1) * old]);
        data.extend(std::iter::repeat_n(fill, new_row_len - old));
    }
    let mut shape = t.shape().to_vec();
    let tail: usize = shape[2..].iter().product();
    shape[1] = new_row_len / tail;
    Tensor::new(shape, data)
}

/// Appends `extra` zero rows along the leading axis.
pub fn append_rows<T: Scalar>(t: &Tensor<T>, extra: usize) -> Result<Tensor<T>> {
    let mut shape = t.shape().to_vec();
    let row = t.row_len();
    shape[0] += extra;
    let mut data = t.data().to_vec();
    data.resize(data.len() + extra * row, T::zero());
    Tensor::new(shape, data)
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean softmax cross-entropy (max-subtracted) and the softmax probabilities.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (f64, Vec<T>) {
    let k = logits.shape()[1];
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = 0.0f64;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        total += (sum.ln() + m - row[y]).as_f64();
        probs.extend(exps.into_iter().map(|e| e / sum));
    }
    (total / labels.len() as f64, probs)
}

fn map_dims(t: &Tensor<impl Scalar>) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => dim_err(format!("expected N×C×H×W activations, got {s:?}")),
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw, stride, pad): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
    cols: &mut [T],
    row_stride: usize,
    col_offset: usize,
) {
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[r * row_stride + col_offset..r * row_stride + col_offset + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        dst[oy * ow + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            src[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw, stride, pad): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
    dst: &mut [T],
    row_stride: usize,
    col_offset: usize,
) {
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let r = (ci * kh + ki) * kw + kj;
                let src = &cols[r * row_stride + col_offset..r * row_stride + col_offset + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[(ci * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn layer_forward<T: Scalar>(layer: &Layer<T>, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Aux<T>)> {
    match layer.spec {
        LayerSpec::Conv {
            out_channels: oc,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        } => {
            let [n, c, h, w] = map_dims(x)?;
            let oh = out_len(h, kh, stride, padding).ok_or_else(|| Error::Dimension("conv input too small".into()))?;
            let ow = out_len(w, kw, stride, padding).ok_or_else(|| Error::Dimension("conv input too small".into()))?;
            let (p, ck) = (oh * ow, c * kh * kw);
            let np = n * p;
            let params = layer.params.as_ref().expect("conv has params");
            if params.weight.shape() != [oc, c, kh, kw] {
                return dim_err(format!("conv weight {:?} vs input channels {c}", params.weight.shape()));
            }
            let mut cols = vec![T::zero(); ck * np];
            let per = c * h * w;
            for s in 0..n {
                im2col(
                    &x.data()[s * per..(s + 1) * per],
                    (c, h, w),
                    (kh, kw, stride, padding),
                    (oh, ow),
                    &mut cols,
                    np,
                    s * p,
                );
            }
            let mut tmp = vec![T::zero(); oc * np];
            gemm_nn(oc, ck, np, params.weight.data(), &cols, &mut tmp);
            let mut out = vec![T::zero(); n * oc * p];
            for s in 0..n {
                for o in 0..oc {
                    let b = params.bias.as_ref().map_or(T::zero(), |b| b.data()[o]);
                    let src = &tmp[o * np + s * p..o * np + (s + 1) * p];
                    let dst = &mut out[(s * oc + o) * p..(s * oc + o + 1) * p];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
            let aux = if keep { Aux::Cols(cols) } else { Aux::None };
            Ok((Tensor::new(vec![n, oc, oh, ow], out)?, aux))
        }
        LayerSpec::MaxPool { window, stride } => {
            let [n, c, h, w] = map_dims(x)?;
            let oh = out_len(h, window, stride, 0).ok_or_else(|| Error::Dimension("pool input too small".into()))?;
            let ow = out_len(w, window, stride, 0).ok_or_else(|| Error::Dimension("pool input too small".into()))?;
            let mut out = Vec::with_capacity(n * c * oh * ow);
            let mut arg = Vec::with_capacity(if keep { n * c * oh * ow } else { 0 });
            let xd = x.data();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + (oy * stride) * w + ox * stride;
                        for ky in 0..window {
                            for kx in 0..window {
                                let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                                // strict comparison keeps the lowest flat index on ties
                                if xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(xd[best]);
                        if keep {
                            arg.push(best as u32);
                        }
                    }
                }
            }
            let aux = if keep { Aux::Argmax(arg) } else { Aux::None };
            Ok((Tensor::new(vec![n, c, oh, ow], out)?, aux))
        }
        LayerSpec::Dense { in_dim, out_dim } => {
            let shape = x.shape();
            if shape.len() != 2 || shape[1] != in_dim {
                return dim_err(format!("dense expects [N, {in_dim}], got {shape:?}"));
            }
            let n = shape[0];
            let params = layer.params.as_ref().expect("dense has params");
            let wd = params.weight.data();
            let mut wt = vec![T::zero(); in_dim * out_dim];
            for o in 0..out_dim {
                for i in 0..in_dim {
                    wt[i * out_dim + o] = wd[o * in_dim + i];
                }
            }
            let mut out = vec![T::zero(); n * out_dim];
            gemm_nn(n, in_dim, out_dim, x.data(), &wt, &mut out);
            if let Some(b) = &params.bias {
                for row in out.chunks_exact_mut(out_dim) {
                    for (v, &bv) in row.iter_mut().zip(b.data()) {
                        *v += bv;
                    }
                }
            }
            Ok((Tensor::new(vec![n, out_dim], out)?, Aux::None))
        }
        LayerSpec::Relu => Ok((x.map(|v| if v > T::zero() { v } else { T::zero() }), Aux::None)),
        LayerSpec::Flatten => {
            let n = x.shape()[0];
            let d = x.row_len();
            Ok((x.clone().reshape(&[n, d])?, Aux::None))
        }
    }
}

fn layer_backward<T: Scalar>(
    layer: &Layer<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    aux: &Aux<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Option<Params<T>>)> {
    match layer.spec {
        LayerSpec::Conv {
            out_channels: oc,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        } => {
            let [n, c, h, w] = map_dims(x)?;
            let [_, _, oh, ow] = map_dims(y)?;
            let (p, ck) = (oh * ow, c * kh * kw);
            let np = n * p;
            let cols = match aux {
                Aux::Cols(c) => c,
                _ => return Err(Error::State("conv cache missing".into())),
            };
            let params = layer.params.as_ref().expect("conv has params");
            let mut dyt = vec![T::zero(); oc * np];
            for s in 0..n {
                for o in 0..oc {
                    dyt[o * np + s * p..o * np + (s + 1) * p]
                        .copy_from_slice(&dy.data()[(s * oc + o) * p..(s * oc + o + 1) * p]);
                }
            }
            let mut dw = vec![T::zero(); oc * ck];
            gemm_nt(oc, np, ck, &dyt, cols, &mut dw);
            let db = params.bias.as_ref().map(|_| {
                let v = (0..oc)
                    .map(|o| dyt[o * np..(o + 1) * np].iter().fold(T::zero(), |a, &b| a + b))
                    .collect();
                Tensor::new(vec![oc], v).expect("bias shape")
            });
            let dx = if need_dx {
                let mut dcols = vec![T::zero(); ck * np];
                gemm_tn(ck, oc, np, params.weight.data(), &dyt, &mut dcols);
                let per = c * h * w;
                let mut dx = vec![T::zero(); n * per];
                for s in 0..n {
                    col2im(
                        &dcols,
                        (c, h, w),
                        (kh, kw, stride, padding),
                        (oh, ow),
                        &mut dx[s * per..(s + 1) * per],
                        np,
                        s * p,
                    );
                }
                Some(Tensor::new(x.shape().to_vec(), dx)?)
            } else {
                None
            };
            let grads = Params {
                weight: Tensor::new(params.weight.shape().to_vec(), dw)?,
                bias: db,
            };
            Ok((dx, Some(grads)))
        }
        LayerSpec::MaxPool { .. } => {
            let arg = match aux {
                Aux::Argmax(a) => a,
                _ => return Err(Error::State("pool cache missing".into())),
            };
            let mut dx = vec![T::zero(); x.len()];
            for (&j, &g) in arg.iter().zip(dy.data()) {
                dx[j as usize] += g;
            }
            Ok((Some(Tensor::new(x.shape().to_vec(), dx)?), None))
        }
        LayerSpec::Dense { in_dim, out_dim } => {
            let n = x.shape()[0];
            let params = layer.params.as_ref().expect("dense has params");
            let mut dw = vec![T::zero(); out_dim * in_dim];
            gemm_tn(out_dim, n, in_dim, dy.data(), x.data(), &mut dw);
            let db = params.bias.as_ref().map(|_| {
                let mut v = vec![T::zero(); out_dim];
                for row in dy.data().chunks_exact(out_dim) {
                    for (a, &b) in v.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                Tensor::new(vec![out_dim], v).expect("bias shape")
            });
            let dx = if need_dx {
                let mut dx = vec![T::zero(); n * in_dim];
                gemm_nn(n, out_dim, in_dim, dy.data(), params.weight.data(), &mut dx);
                Some(Tensor::new(vec![n, in_dim], dx)?)
            } else {
                None
            };
            let grads = Params {
                weight: Tensor::new(vec![out_dim, in_dim], dw)?,
                bias: db,
            };
            Ok((dx, Some(grads)))
        }
        LayerSpec::Relu => {
            let dx = y
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
                .collect();
            Ok((Some(Tensor::new(x.shape().to_vec(), dx)?), None))
        }
        LayerSpec::Flatten => Ok((Some(dy.clone().reshape(x.shape())?), None)),
    }
}

impl<T: Scalar> Model<T> for Network<T> {
    type Batch = Batch<T>;

    fn loss_and_grad(&mut self, batch: &Batch<T>) -> Result<(f64, Gradients<T>)> {
        let (_, loss) = self.forward(batch)?;
        let grads = self.backward(batch)?;
        self.cache = None;
        Ok((loss, grads))
    }

    fn loss(&mut self, batch: &Batch<T>) -> Result<f64> {
        Network::loss(self, batch)
    }

    fn params(&self, layer: usize) -> Option<&Params<T>> {
        Network::params(self, layer)
    }

    fn params_mut(&mut self, layer: usize) -> Option<&mut Params<T>> {
        Network::params_mut(self, layer)
    }

    fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].params.is_some()).collect()
    }

    fn layer_name(&self, layer: usize) -> String {
        self.name_of(layer)
    }
}
