//! Architecture builders and whole-model forward/backward execution: the
//! baseline generator, the variant generator with the extra upsample /
//! channel-expand / 1x1-mix head, and the discriminator (optionally a critic
//! without the final sigmoid, optionally with dropout before its last conv).
//!
//! A model is a flat list of layer specs. Parameters live outside the spec in
//! a ParamSet keyed "l{index}.{role}", so the same spec drives init, forward,
//! backward, checkpointing, and architecture inference from a manifest.

use crate::error::{Error, Result};
use crate::layers::{
    activation, activation_grad, batchnorm2d, batchnorm2d_grads, conv2d, conv2d_grads,
    conv2d_input_grad, convtranspose2d, convtranspose2d_grads, dropout, dropout_grad, Activation,
    BatchNormState, ConvGeometry, Mode,
};
use crate::rng::RngStream;
use crate::tensor::{randn, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(ConvGeometry),
    ConvTranspose(ConvGeometry),
    BatchNorm { channels: usize },
    Dropout { p: f64 },
    Activation(Activation),
}

/// An ordered layer list plus the per-sample input and output shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
}

impl ModelSpec {
    fn assemble(layers: Vec<LayerSpec>, input_shape: [usize; 3]) -> Result<ModelSpec> {
        let spec = ModelSpec {
            layers,
            input_shape,
            output_shape: input_shape,
        };
        let trace = spec.shape_trace()?;
        let last = trace.last().expect("trace includes the input shape");
        Ok(ModelSpec {
            output_shape: *last,
            ..spec
        })
    }

    /// Per-sample [C, H, W] after the input and after every layer; errors if
    /// any layer cannot consume its predecessor's shape.
    pub fn shape_trace(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = vec![self.input_shape];
        let mut cur = self.input_shape;
        for (index, layer) in self.layers.iter().enumerate() {
            let wrap = |source: Error| Error::Layer {
                index,
                source: Box::new(source),
            };
            cur = match layer {
                LayerSpec::Conv(g) => {
                    check_channels(cur[0], g.in_channels, "conv input").map_err(wrap)?;
                    [
                        g.out_channels,
                        g.conv_extent(cur[1]).map_err(wrap)?,
                        g.conv_extent(cur[2]).map_err(wrap)?,
                    ]
                }
                LayerSpec::ConvTranspose(g) => {
                    check_channels(cur[0], g.in_channels, "transposed conv input")
                        .map_err(wrap)?;
                    [
                        g.out_channels,
                        g.transposed_extent(cur[1]).map_err(wrap)?,
                        g.transposed_extent(cur[2]).map_err(wrap)?,
                    ]
                }
                LayerSpec::BatchNorm { channels } => {
                    check_channels(cur[0], *channels, "batchnorm input").map_err(wrap)?;
                    cur
                }
                LayerSpec::Dropout { .. } | LayerSpec::Activation(_) => cur,
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Every parameter and buffer the spec implies, in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv(g) => {
                    out.push((
                        format!("l{i}.weight"),
                        vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
                    ));
                    out.push((format!("l{i}.bias"), vec![g.out_channels]));
                }
                LayerSpec::ConvTranspose(g) => {
                    out.push((
                        format!("l{i}.weight"),
                        vec![g.in_channels, g.out_channels, g.kernel, g.kernel],
                    ));
                    out.push((format!("l{i}.bias"), vec![g.out_channels]));
                }
                LayerSpec::BatchNorm { channels } => {
                    out.push((format!("l{i}.gamma"), vec![*channels]));
                    out.push((format!("l{i}.beta"), vec![*channels]));
                    out.push((format!("l{i}.running_mean"), vec![*channels]));
                    out.push((format!("l{i}.running_var"), vec![*channels]));
                }
                LayerSpec::Dropout { .. } | LayerSpec::Activation(_) => {}
            }
        }
        out
    }
}

fn check_channels(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            context: format!("{what} has {got} channels, layer expects {want}"),
        });
    }
    Ok(())
}

/// Baseline generator: z [z_dim,1,1] through a transposed-conv stack
/// 4x4·8w → 8x8·4w → 16x16·2w → 32x32·w → 64x64·3, batchnorm and ReLU
/// between layers, tanh at the output.
pub fn build_dcgan_generator(z_dim: usize, base_width: usize) -> Result<ModelSpec> {
    check_builder_args(z_dim, base_width)?;
    let w = base_width;
    let mut layers = generator_trunk(z_dim, w)?;
    layers.push(LayerSpec::Activation(Activation::Tanh));
    ModelSpec::assemble(layers, [z_dim, 1, 1])
}

/// Variant generator: the baseline trunk (pre-tanh), then upsample to
/// 128x128·3, contract to 64x64·6, mix channels 6→3 with a 1x1 conv, tanh.
pub fn build_boolgan_generator(z_dim: usize, base_width: usize) -> Result<ModelSpec> {
    check_builder_args(z_dim, base_width)?;
    let w = base_width;
    let mut layers = generator_trunk(z_dim, w)?;
    layers.push(LayerSpec::ConvTranspose(ConvGeometry::new(4, 2, 1, 3, 3)?));
    layers.push(LayerSpec::BatchNorm { channels: 3 });
    layers.push(LayerSpec::Activation(Activation::Relu));
    layers.push(LayerSpec::Conv(ConvGeometry::new(4, 2, 1, 3, 6)?));
    layers.push(LayerSpec::BatchNorm { channels: 6 });
    layers.push(LayerSpec::Activation(Activation::Relu));
    layers.push(LayerSpec::Conv(ConvGeometry::new(1, 1, 0, 6, 3)?));
    layers.push(LayerSpec::Activation(Activation::Tanh));
    ModelSpec::assemble(layers, [z_dim, 1, 1])
}

/// The shared transposed-conv stack ending at 64x64·3, before any output
/// activation.
fn generator_trunk(z_dim: usize, w: usize) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let widths = [z_dim, 8 * w, 4 * w, 2 * w, w, 3];
    for i in 0..5 {
        let (stride, padding) = if i == 0 { (1, 0) } else { (2, 1) };
        layers.push(LayerSpec::ConvTranspose(ConvGeometry::new(
            4,
            stride,
            padding,
            widths[i],
            widths[i + 1],
        )?));
        if i < 4 {
            layers.push(LayerSpec::BatchNorm {
                channels: widths[i + 1],
            });
            layers.push(LayerSpec::Activation(Activation::Relu));
        }
    }
    Ok(layers)
}

/// Discriminator / critic: conv stack 64x64·3 → 32x32·w → 16x16·2w → 8x8·4w
/// → 4x4·8w → 1x1·1, LeakyReLU(0.2) throughout, batchnorm on every conv but
/// the first. With dropout_p > 0 a single dropout sits after the last
/// LeakyReLU, just before the final conv. critic_mode drops the sigmoid.
pub fn build_discriminator(
    critic_mode: bool,
    dropout_p: f64,
    base_width: usize,
) -> Result<ModelSpec> {
    if base_width < 8 {
        return Err(Error::InvalidArgument {
            context: format!("base_width {base_width} below minimum 8"),
        });
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::InvalidArgument {
            context: format!("dropout probability {dropout_p} outside [0, 1)"),
        });
    }
    let w = base_width;
    let widths = [3, w, 2 * w, 4 * w, 8 * w];
    let mut layers = Vec::new();
    for i in 0..4 {
        layers.push(LayerSpec::Conv(ConvGeometry::new(
            4,
            2,
            1,
            widths[i],
            widths[i + 1],
        )?));
        if i > 0 {
            layers.push(LayerSpec::BatchNorm {
                channels: widths[i + 1],
            });
        }
        layers.push(LayerSpec::Activation(Activation::LeakyRelu(0.2)));
    }
    if dropout_p > 0.0 {
        layers.push(LayerSpec::Dropout { p: dropout_p });
    }
    layers.push(LayerSpec::Conv(ConvGeometry::new(4, 1, 0, 8 * w, 1)?));
    if !critic_mode {
        layers.push(LayerSpec::Activation(Activation::Sigmoid));
    }
    ModelSpec::assemble(layers, [3, 64, 64])
}

fn check_builder_args(z_dim: usize, base_width: usize) -> Result<()> {
    if z_dim < 1 {
        return Err(Error::InvalidArgument {
            context: "z_dim must be at least 1".to_string(),
        });
    }
    if base_width < 8 {
        return Err(Error::InvalidArgument {
            context: format!("base_width {base_width} below minimum 8"),
        });
    }
    Ok(())
}

/// Insertion-ordered name → tensor map holding a model's parameters and
/// buffers (or, with the same keys, its gradients).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::InvalidArgument {
                context: format!("duplicate parameter name {name}"),
            });
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::InvalidArgument {
            context: format!("missing parameter {name}"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True for learned tensors, false for batchnorm running buffers.
    pub fn is_trainable(name: &str) -> bool {
        !name.ends_with(".running_mean") && !name.ends_with(".running_var")
    }

    /// Total element count over learned tensors only.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| Self::is_trainable(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast::<U>()))
                .collect(),
        }
    }
}

/// Draws fresh parameters for a spec: conv weights N(0, 0.02²), batchnorm
/// gamma N(1, 0.02²), biases and beta zero, running stats (0, 1). Draw order
/// is the declaration order, so equal rng states give bitwise-equal sets.
pub fn init_params<T: Scalar>(spec: &ModelSpec, rng: &mut RngStream) -> Result<ParamSet<T>> {
    let std = T::from_f64(0.02);
    let mut params = ParamSet::new();
    for (name, shape) in spec.param_shapes() {
        let tensor = if name.ends_with(".weight") {
            randn::<T>(&shape, rng).map(|v| v * std)
        } else if name.ends_with(".gamma") {
            randn::<T>(&shape, rng).map(|v| T::one() + v * std)
        } else if name.ends_with(".running_var") {
            Tensor::filled(&shape, T::one())
        } else {
            Tensor::zeros(&shape)
        };
        params.insert(name, tensor)?;
    }
    Ok(params)
}

/// Everything backward needs from a forward pass: the input each layer saw,
/// dropout masks, and the batchnorm running statistics the pass produced
/// (held here, not written into the ParamSet, so forward stays pure).
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    pub mode: Mode,
    inputs: Vec<Tensor<T>>,
    dropout_masks: Vec<Option<Tensor<T>>>,
    bn_updates: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

/// Runs the layer chain. Train mode uses batch statistics and live dropout;
/// eval mode makes each sample's output independent of the batch. The
/// returned cache feeds `backward` and `commit_bn_updates`.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    if x.shape().len() != 4 || x.shape()[1..] != spec.input_shape {
        return Err(Error::ShapeMismatch {
            context: format!(
                "model input shape {:?}, expected [N, {}, {}, {}]",
                x.shape(),
                spec.input_shape[0],
                spec.input_shape[1],
                spec.input_shape[2]
            ),
        });
    }
    let mut cache = ForwardCache {
        mode,
        inputs: Vec::with_capacity(spec.layers.len()),
        dropout_masks: vec![None; spec.layers.len()],
        bn_updates: vec![None; spec.layers.len()],
    };
    let mut cur = x.clone();
    for (index, layer) in spec.layers.iter().enumerate() {
        let wrap = |source: Error| Error::Layer {
            index,
            source: Box::new(source),
        };
        let next = match layer {
            LayerSpec::Conv(g) => {
                let w = params.expect(&format!("l{index}.weight")).map_err(wrap)?;
                let b = params.expect(&format!("l{index}.bias")).map_err(wrap)?;
                conv2d(&cur, w, b, g).map_err(wrap)?
            }
            LayerSpec::ConvTranspose(g) => {
                let w = params.expect(&format!("l{index}.weight")).map_err(wrap)?;
                let b = params.expect(&format!("l{index}.bias")).map_err(wrap)?;
                convtranspose2d(&cur, w, b, g).map_err(wrap)?
            }
            LayerSpec::BatchNorm { .. } => {
                let state = bn_state(params, index).map_err(wrap)?;
                let (y, updated) = batchnorm2d(&cur, &state, mode).map_err(wrap)?;
                if mode == Mode::Train {
                    cache.bn_updates[index] =
                        Some((updated.running_mean, updated.running_var));
                }
                y
            }
            LayerSpec::Dropout { p } => {
                let (y, mask) = dropout(&cur, *p, mode, rng).map_err(wrap)?;
                if mode == Mode::Train {
                    cache.dropout_masks[index] = Some(mask);
                }
                y
            }
            LayerSpec::Activation(kind) => activation(&cur, *kind),
        };
        cache.inputs.push(cur);
        cur = next;
    }
    Ok((cur, cache))
}

/// Writes the batch statistics collected by a train-mode forward into the
/// running buffers. Called once per optimization step, after the forward
/// whose statistics should stick.
pub fn commit_bn_updates<T: Scalar>(
    params: &mut ParamSet<T>,
    cache: &ForwardCache<T>,
) -> Result<()> {
    for (index, update) in cache.bn_updates.iter().enumerate() {
        if let Some((mean, var)) = update {
            *params
                .get_mut(&format!("l{index}.running_mean"))
                .ok_or_else(|| Error::InvalidArgument {
                    context: format!("missing buffer l{index}.running_mean"),
                })? = mean.clone();
            *params
                .get_mut(&format!("l{index}.running_var"))
                .ok_or_else(|| Error::InvalidArgument {
                    context: format!("missing buffer l{index}.running_var"),
                })? = var.clone();
        }
    }
    Ok(())
}

fn bn_state<T: Scalar>(params: &ParamSet<T>, index: usize) -> Result<BatchNormState<T>> {
    Ok(BatchNormState {
        gamma: params.expect(&format!("l{index}.gamma"))?.clone(),
        beta: params.expect(&format!("l{index}.beta"))?.clone(),
        running_mean: params.expect(&format!("l{index}.running_mean"))?.clone(),
        running_var: params.expect(&format!("l{index}.running_var"))?.clone(),
        momentum: 0.1,
        eps: 1e-5,
    })
}

/// Backpropagates `dy` through a cached train-mode forward. Returns the
/// gradient at the model input and, when `want_param_grads`, a gradient set
/// keyed like the trainable parameters.
pub fn backward<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamSet<T>,
    cache: &ForwardCache<T>,
    dy: &Tensor<T>,
    want_param_grads: bool,
) -> Result<(Tensor<T>, ParamSet<T>)> {
    if cache.inputs.len() != spec.layers.len() {
        return Err(Error::InvalidArgument {
            context: format!(
                "forward cache has {} layers, spec has {}",
                cache.inputs.len(),
                spec.layers.len()
            ),
        });
    }
    let mut grads = ParamSet::new();
    let mut cur = dy.clone();
    for (index, layer) in spec.layers.iter().enumerate().rev() {
        let wrap = |source: Error| Error::Layer {
            index,
            source: Box::new(source),
        };
        let x = &cache.inputs[index];
        cur = match layer {
            LayerSpec::Conv(g) => {
                let w = params.expect(&format!("l{index}.weight")).map_err(wrap)?;
                if want_param_grads {
                    let (dx, dw, db) = conv2d_grads(x, w, g, &cur).map_err(wrap)?;
                    grads.insert(format!("l{index}.weight"), dw)?;
                    grads.insert(format!("l{index}.bias"), db)?;
                    dx
                } else {
                    conv2d_input_grad(w, g, &cur, x.shape()[2], x.shape()[3]).map_err(wrap)?
                }
            }
            LayerSpec::ConvTranspose(g) => {
                let w = params.expect(&format!("l{index}.weight")).map_err(wrap)?;
                let (dx, dw, db) = convtranspose2d_grads(x, w, g, &cur).map_err(wrap)?;
                if want_param_grads {
                    grads.insert(format!("l{index}.weight"), dw)?;
                    grads.insert(format!("l{index}.bias"), db)?;
                }
                dx
            }
            LayerSpec::BatchNorm { .. } => {
                let state = bn_state(params, index).map_err(wrap)?;
                let (dx, dgamma, dbeta) = batchnorm2d_grads(x, &state, &cur).map_err(wrap)?;
                if want_param_grads {
                    grads.insert(format!("l{index}.gamma"), dgamma)?;
                    grads.insert(format!("l{index}.beta"), dbeta)?;
                }
                dx
            }
            LayerSpec::Dropout { .. } => match (&cache.dropout_masks[index], cache.mode) {
                (Some(mask), _) => dropout_grad(mask, &cur).map_err(wrap)?,
                (None, Mode::Eval) => cur,
                (None, Mode::Train) => {
                    return Err(Error::InvalidArgument {
                        context: format!("dropout mask missing for layer {index}"),
                    })
                }
            },
            LayerSpec::Activation(kind) => activation_grad(x, *kind, &cur),
        };
    }
    // Reverse-order inserts; flip to declaration order for stable iteration.
    let mut ordered = ParamSet::new();
    for (name, _) in spec.param_shapes() {
        if let Some(t) = grads.get(&name) {
            ordered.insert(name, t.clone())?;
        }
    }
    Ok((cur, ordered))
}

/// Reconstructs a generator spec from a checkpoint manifest: entry names and
/// shapes must match one of the two generator builders exactly.
pub fn infer_generator_spec(entries: &[(String, Vec<usize>)]) -> Result<ModelSpec> {
    let l0 = entries
        .iter()
        .find(|(n, _)| n == "l0.weight")
        .ok_or_else(|| Error::InvalidArgument {
            context: "manifest lacks l0.weight; not a generator checkpoint".to_string(),
        })?;
    let (z_dim, eight_w) = match l0.1.as_slice() {
        [z, c, 4, 4] if c % 8 == 0 && *c >= 64 => (*z, *c),
        other => {
            return Err(Error::InvalidArgument {
                context: format!("l0.weight shape {other:?} does not look like a generator"),
            })
        }
    };
    let base_width = eight_w / 8;
    for build in [build_dcgan_generator, build_boolgan_generator] {
        let spec = build(z_dim, base_width)?;
        let want = spec.param_shapes();
        if want.len() == entries.len()
            && want
                .iter()
                .all(|(n, s)| entries.iter().any(|(en, es)| en == n && es == s))
        {
            return Ok(spec);
        }
    }
    Err(Error::InvalidArgument {
        context: "manifest matches no known generator architecture".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;

    #[test]
    fn dcgan_generator_shape_trace() {
        let spec = build_dcgan_generator(100, 8).unwrap();
        let trace = spec.shape_trace().unwrap();
        assert_eq!(trace[0], [100, 1, 1]);
        let conv_shapes: Vec<[usize; 3]> = spec
            .layers
            .iter()
            .zip(trace.iter().skip(1))
            .filter(|(l, _)| matches!(l, LayerSpec::ConvTranspose(_)))
            .map(|(_, s)| *s)
            .collect();
        assert_eq!(
            conv_shapes,
            vec![[64, 4, 4], [32, 8, 8], [16, 16, 16], [8, 32, 32], [3, 64, 64]]
        );
        assert_eq!(spec.output_shape, [3, 64, 64]);
        assert!(matches!(
            spec.layers.last(),
            Some(LayerSpec::Activation(Activation::Tanh))
        ));
    }

    #[test]
    fn boolgan_generator_head_trace() {
        let spec = build_boolgan_generator(100, 8).unwrap();
        let trace = spec.shape_trace().unwrap();
        let tail: Vec<[usize; 3]> = trace.iter().rev().take(9).cloned().collect();
        // Walking backward: tanh, 1x1 conv to 3, BN+ReLU around 6 channels...
        assert!(trace.contains(&[3, 128, 128]));
        assert!(trace.contains(&[6, 64, 64]));
        assert_eq!(spec.output_shape, [3, 64, 64]);
        assert_eq!(tail[0], [3, 64, 64]);
        // The channel mixer is a 1x1 conv from 6 to 3.
        let mixer = spec
            .layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::Conv(g) if g.kernel == 1 => Some(*g),
                _ => None,
            })
            .expect("1x1 mixer present");
        assert_eq!(mixer.in_channels, 6);
        assert_eq!(mixer.out_channels, 3);
        // 128x128 comes before 6x64x64, which comes before the end.
        let pos128 = trace.iter().position(|s| *s == [3, 128, 128]).unwrap();
        let pos6 = trace.iter().position(|s| *s == [6, 64, 64]).unwrap();
        assert!(pos128 < pos6);
    }

    #[test]
    fn discriminator_shape_trace_and_variants() {
        let spec = build_discriminator(false, 0.0, 8).unwrap();
        let trace = spec.shape_trace().unwrap();
        let conv_shapes: Vec<[usize; 3]> = spec
            .layers
            .iter()
            .zip(trace.iter().skip(1))
            .filter(|(l, _)| matches!(l, LayerSpec::Conv(_)))
            .map(|(_, s)| *s)
            .collect();
        assert_eq!(
            conv_shapes,
            vec![[8, 32, 32], [16, 16, 16], [32, 8, 8], [64, 4, 4], [1, 1, 1]]
        );
        assert!(matches!(
            spec.layers.last(),
            Some(LayerSpec::Activation(Activation::Sigmoid))
        ));
        assert!(!spec
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. })));

        let critic = build_discriminator(true, 0.0, 8).unwrap();
        assert!(!critic
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Activation(Activation::Sigmoid))));

        // First conv has no batchnorm after it; later convs do.
        assert!(matches!(spec.layers[0], LayerSpec::Conv(_)));
        assert!(matches!(
            spec.layers[1],
            LayerSpec::Activation(Activation::LeakyRelu(_))
        ));
        assert!(matches!(spec.layers[3], LayerSpec::BatchNorm { .. }));
    }

    #[test]
    fn dropout_sits_before_final_conv() {
        let spec = build_discriminator(false, 0.2, 8).unwrap();
        let dropouts: Vec<usize> = spec
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                LayerSpec::Dropout { p } => {
                    assert_eq!(*p, 0.2);
                    Some(i)
                }
                _ => None,
            })
            .collect();
        assert_eq!(dropouts.len(), 1);
        assert!(matches!(spec.layers[dropouts[0] + 1], LayerSpec::Conv(_)));
        let last_conv = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv(_)))
            .unwrap();
        assert_eq!(dropouts[0] + 1, last_conv);
    }

    #[test]
    fn builder_rejects_bad_arguments() {
        assert!(build_dcgan_generator(0, 64).is_err());
        assert!(build_dcgan_generator(100, 4).is_err());
        assert!(build_discriminator(false, 1.0, 64).is_err());
        assert!(build_discriminator(false, -0.5, 64).is_err());
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        // Independent arithmetic over the documented layer list, written out
        // term by term rather than derived from param_shapes.
        let spec = build_dcgan_generator(100, 64).unwrap();
        let mut rng = RngStream::new(1, 0);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        let want_dcgan: usize = (100 * 512 * 16 + 512)
            + (512 + 512)
            + (512 * 256 * 16 + 256)
            + (256 + 256)
            + (256 * 128 * 16 + 128)
            + (128 + 128)
            + (128 * 64 * 16 + 64)
            + (64 + 64)
            + (64 * 3 * 16 + 3);
        assert_eq!(params.trainable_count(), want_dcgan);

        let spec_b = build_boolgan_generator(100, 64).unwrap();
        let params_b = init_params::<f32>(&spec_b, &mut rng).unwrap();
        let want_head: usize = (3 * 3 * 16 + 3)
            + (3 + 3)
            + (6 * 3 * 16 + 6)
            + (6 + 6)
            + (3 * 6 * 1 + 3);
        assert_eq!(params_b.trainable_count(), want_dcgan + want_head);
        assert!(params_b.trainable_count() > params.trainable_count());
    }

    #[test]
    fn init_is_deterministic_with_documented_statistics() {
        let spec = build_dcgan_generator(32, 16).unwrap();
        let mut r1 = RngStream::new(9, 0);
        let mut r2 = RngStream::new(9, 0);
        let a = init_params::<f32>(&spec, &mut r1).unwrap();
        let b = init_params::<f32>(&spec, &mut r2).unwrap();
        assert_eq!(a, b);

        // Largest weight tensor: std within 10% of 0.02, biases exactly zero.
        let w = a.get("l3.weight").unwrap();
        assert!(w.len() > 10_000);
        let mean: f64 = w.iter().map(|v| *v as f64).sum::<f64>() / w.len() as f64;
        let var: f64 =
            w.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let std = var.sqrt();
        assert!((std - 0.02).abs() < 0.002, "std {std}");
        for (name, t) in a.iter() {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                assert!(t.iter().all(|&v| v == 0.0), "{name} not zero");
            }
        }
    }

    #[test]
    fn zero_network_emits_exact_zeros() {
        let spec = build_dcgan_generator(4, 8).unwrap();
        let mut rng = RngStream::new(2, 0);
        let mut params = init_params::<f64>(&spec, &mut rng).unwrap();
        for (name, t) in params.iter_mut() {
            if name.ends_with(".weight") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let z = randn::<f64>(&[2, 4, 1, 1], &mut rng);
        let mut fwd_rng = RngStream::new(3, 1);
        let (y, _) = forward(&spec, &params, &z, Mode::Train, &mut fwd_rng).unwrap();
        assert_eq!(y.shape(), [2, 3, 64, 64]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_output_is_tanh_bounded() {
        let spec = build_dcgan_generator(8, 8).unwrap();
        let mut rng = RngStream::new(5, 0);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        let z = randn::<f32>(&[3, 8, 1, 1], &mut rng).map(|v| v * 3.0);
        let mut fwd_rng = RngStream::new(0, 9);
        let (y, _) = forward(&spec, &params, &z, Mode::Train, &mut fwd_rng).unwrap();
        assert_eq!(y.shape(), [3, 3, 64, 64]);
        assert!(y.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn full_width_generator_maps_latent_to_image() {
        let spec = build_dcgan_generator(100, 64).unwrap();
        let mut rng = RngStream::new(6, 0);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        let z = Tensor::<f32>::zeros(&[1, 100, 1, 1]);
        let mut fwd_rng = RngStream::new(0, 9);
        let (y, _) = forward(&spec, &params, &z, Mode::Eval, &mut fwd_rng).unwrap();
        assert_eq!(y.shape(), [1, 3, 64, 64]);
    }

    #[test]
    fn eval_mode_is_batch_independent() {
        let spec = build_discriminator(false, 0.3, 8).unwrap();
        let mut rng = RngStream::new(7, 0);
        let params = init_params::<f64>(&spec, &mut rng).unwrap();
        let batch = randn::<f64>(&[2, 3, 64, 64], &mut rng);
        let solo =
            Tensor::from_vec(&[1, 3, 64, 64], batch.data()[..3 * 64 * 64].to_vec()).unwrap();
        let mut r1 = RngStream::new(0, 9);
        let mut r2 = RngStream::new(0, 9);
        let (y_batch, _) = forward(&spec, &params, &batch, Mode::Eval, &mut r1).unwrap();
        let (y_solo, _) = forward(&spec, &params, &solo, Mode::Eval, &mut r2).unwrap();
        assert!((y_batch.data()[0] - y_solo.data()[0]).abs() < 1e-6);
    }

    #[test]
    fn probability_head_stays_in_unit_interval() {
        let spec = build_discriminator(false, 0.0, 8).unwrap();
        let mut rng = RngStream::new(10, 0);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        let x = randn::<f32>(&[4, 3, 64, 64], &mut rng);
        let mut fwd_rng = RngStream::new(0, 9);
        let (y, _) = forward(&spec, &params, &x, Mode::Train, &mut fwd_rng).unwrap();
        assert_eq!(y.shape(), [4, 1, 1, 1]);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn train_forward_with_fixed_rng_is_deterministic() {
        let spec = build_discriminator(true, 0.5, 8).unwrap();
        let mut rng = RngStream::new(12, 0);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        let x = randn::<f32>(&[2, 3, 64, 64], &mut rng);
        let mut r1 = RngStream::new(77, 3);
        let mut r2 = RngStream::new(77, 3);
        let (y1, _) = forward(&spec, &params, &x, Mode::Train, &mut r1).unwrap();
        let (y2, _) = forward(&spec, &params, &x, Mode::Train, &mut r2).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(r1.counter(), r2.counter());
    }

    #[test]
    fn forward_reports_layer_index_on_shape_error() {
        let spec = build_dcgan_generator(16, 8).unwrap();
        let mut rng = RngStream::new(13, 0);
        let params = init_params::<f32>(&spec, &mut rng).unwrap();
        let bad = Tensor::<f32>::zeros(&[1, 5, 1, 1]);
        let mut fwd_rng = RngStream::new(0, 9);
        let err = forward(&spec, &params, &bad, Mode::Eval, &mut fwd_rng).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));

        // A corrupted parameter shape surfaces with its layer index.
        let mut broken = params.clone();
        *broken.get_mut("l3.weight").unwrap() = Tensor::zeros(&[1, 1, 4, 4]);
        let z = Tensor::<f32>::zeros(&[1, 16, 1, 1]);
        let err = forward(&spec, &broken, &z, Mode::Eval, &mut fwd_rng).unwrap_err();
        match err {
            Error::Layer { index, .. } => assert_eq!(index, 3),
            other => panic!("expected layer error, got {other}"),
        }
    }

    #[test]
    fn bn_updates_apply_only_on_commit() {
        let spec = build_dcgan_generator(4, 8).unwrap();
        let mut rng = RngStream::new(14, 0);
        let mut params = init_params::<f64>(&spec, &mut rng).unwrap();
        let before = params.get("l1.running_mean").unwrap().clone();
        let z = randn::<f64>(&[2, 4, 1, 1], &mut rng);
        let mut fwd_rng = RngStream::new(0, 9);
        let (_, cache) = forward(&spec, &params, &z, Mode::Train, &mut fwd_rng).unwrap();
        assert_eq!(params.get("l1.running_mean").unwrap(), &before);
        commit_bn_updates(&mut params, &cache).unwrap();
        assert_ne!(params.get("l1.running_mean").unwrap(), &before);
    }

    #[test]
    fn backward_grads_cover_exactly_the_trainable_names() {
        let spec = build_discriminator(true, 0.2, 8).unwrap();
        let mut rng = RngStream::new(15, 0);
        let params = init_params::<f64>(&spec, &mut rng).unwrap();
        let x = randn::<f64>(&[2, 3, 64, 64], &mut rng);
        let mut fwd_rng = RngStream::new(1, 3);
        let (y, cache) = forward(&spec, &params, &x, Mode::Train, &mut fwd_rng).unwrap();
        let dy = Tensor::<f64>::filled(y.shape(), 1.0);
        let (dx, grads) = backward(&spec, &params, &cache, &dy, true).unwrap();
        assert_eq!(dx.shape(), x.shape());
        let want: Vec<String> = spec
            .param_shapes()
            .into_iter()
            .filter(|(n, _)| ParamSet::<f64>::is_trainable(n))
            .map(|(n, _)| n)
            .collect();
        let got: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(got, want);

        let (dx_only, empty) = backward(&spec, &params, &cache, &dy, false).unwrap();
        assert!(empty.is_empty());
        for (a, b) in dx.data().iter().zip(dx_only.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn whole_model_gradient_matches_finite_differences_on_a_probe() {
        // End-to-end spot check on a tiny critic; the dedicated gradient
        // check suite sweeps every architecture more thoroughly.
        let spec = build_discriminator(true, 0.0, 8).unwrap();
        let mut rng = RngStream::new(16, 0);
        let params = init_params::<f64>(&spec, &mut rng).unwrap();
        let x = randn::<f64>(&[2, 3, 64, 64], &mut rng);
        let mut fwd_rng = RngStream::new(1, 3);
        let (y, cache) = forward(&spec, &params, &x, Mode::Train, &mut fwd_rng).unwrap();
        let cot = randn::<f64>(y.shape(), &mut rng);
        let (_, grads) = backward(&spec, &params, &cache, &cot, true).unwrap();

        let name = "l11.weight";
        let analytic = grads.get(name).unwrap();
        let coords = [0usize, 7, 100];
        let mut f = |t: &Tensor<f64>| {
            let mut probe = params.clone();
            *probe.get_mut(name).unwrap() = t.clone();
            let mut r = RngStream::new(1, 3);
            let (out, _) = forward(&spec, &probe, &x, Mode::Train, &mut r)?;
            Ok(dot(&cot, &out))
        };
        let numeric =
            crate::finitediff::finite_diff_grad_at(&mut f, params.get(name).unwrap(), &coords, 1e-5)
                .unwrap();
        for (i, &c) in coords.iter().enumerate() {
            let a = analytic.data()[c];
            let n = numeric[i];
            assert!(
                (a - n).abs() / (1e-6 + a.abs().max(n.abs())) < 1e-4,
                "{name}[{c}]: {a} vs {n}"
            );
        }
    }

    #[test]
    fn generator_spec_inferred_from_manifest() {
        let builders: [(fn(usize, usize) -> Result<ModelSpec>, &str); 2] = [
            (build_dcgan_generator, "dcgan"),
            (build_boolgan_generator, "boolgan"),
        ];
        for (build, label) in builders {
            let spec = build(32, 16).unwrap();
            let manifest = spec.param_shapes();
            let inferred = infer_generator_spec(&manifest).unwrap();
            assert_eq!(inferred, spec, "{label}");
        }
        assert!(infer_generator_spec(&[("l9.bias".to_string(), vec![1])]).is_err());
    }
}
