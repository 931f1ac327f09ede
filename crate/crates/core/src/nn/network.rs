use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};

/// Role of a parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Whether the optimizer updates this buffer.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

/// A parameter buffer together with its gradient, if it has one.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub values: &'a mut Vec<T>,
    pub grad: Option<&'a mut Vec<T>>,
}

/// Sequential network; skip connections travel through an internal stack.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Runs every layer, failing at the first one that emits a non-finite value.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.run(x, mode, true)
    }

    /// Eval-mode forward that drops each layer's cache as soon as it is done.
    pub fn infer(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, Mode::Eval, false)
    }

    fn run(&mut self, x: Tensor<T>, mode: Mode, keep_cache: bool) -> Result<Tensor<T>> {
        if let Some(i) = x.first_non_finite() {
            return Err(Error::Numeric(format!("non-finite input at element {i}")));
        }
        let mut skips = Vec::new();
        let mut x = x;
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(x, mode, &mut skips);
            if !keep_cache {
                layer.clear_cache();
            }
            if let Some(i) = x.first_non_finite() {
                return Err(Error::Numeric(format!(
                    "layer {idx} ({}) produced a non-finite value at element {i}",
                    layer.name()
                )));
            }
        }
        debug_assert!(skips.is_empty(), "unbalanced skip connections");
        Ok(x)
    }

    /// Back-propagates `grad` (w.r.t. the last output), accumulating into the
    /// parameter gradients. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let mut skip_grads = Vec::new();
        let mut g = grad;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g, &mut skip_grads);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            if let Some(g) = p.grad {
                g.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Drops activations cached by the last forward pass.
    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Every parameter buffer, in a fixed order, named `<layer index>.<kind>`.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push(ParamMut {
                        name: format!("{idx}.weight"),
                        kind: ParamKind::Weight,
                        values: &mut c.weight,
                        grad: Some(&mut c.grad_weight),
                    });
                    out.push(ParamMut {
                        name: format!("{idx}.bias"),
                        kind: ParamKind::Bias,
                        values: &mut c.bias,
                        grad: Some(&mut c.grad_bias),
                    });
                }
                Layer::BatchNorm(b) => {
                    out.push(ParamMut {
                        name: format!("{idx}.gamma"),
                        kind: ParamKind::Gamma,
                        values: &mut b.gamma,
                        grad: Some(&mut b.grad_gamma),
                    });
                    out.push(ParamMut {
                        name: format!("{idx}.beta"),
                        kind: ParamKind::Beta,
                        values: &mut b.beta,
                        grad: Some(&mut b.grad_beta),
                    });
                    out.push(ParamMut {
                        name: format!("{idx}.running_mean"),
                        kind: ParamKind::RunningMean,
                        values: &mut b.running_mean,
                        grad: None,
                    });
                    out.push(ParamMut {
                        name: format!("{idx}.running_var"),
                        kind: ParamKind::RunningVar,
                        values: &mut b.running_var,
                        grad: None,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Counts conv weights and biases plus four values per batch-norm channel.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.param_count(),
                Layer::BatchNorm(b) => b.param_count(),
                _ => 0,
            })
            .sum()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect::<Vec<U>>()
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => {
                    let mut out = super::Conv2d::<U>::zeroed(c.in_channels, c.out_channels, c.kernel);
                    out.weight = conv(&c.weight);
                    out.bias = conv(&c.bias);
                    Layer::Conv(out)
                }
                Layer::BatchNorm(b) => {
                    let mut out = super::BatchNorm2d::<U>::new(b.channels);
                    out.gamma = conv(&b.gamma);
                    out.beta = conv(&b.beta);
                    out.running_mean = conv(&b.running_mean);
                    out.running_var = conv(&b.running_var);
                    Layer::BatchNorm(out)
                }
                Layer::Relu { .. } => Layer::relu(),
                Layer::MaxPool { .. } => Layer::max_pool(),
                Layer::Upsample { .. } => Layer::upsample(),
                Layer::SaveSkip => Layer::SaveSkip,
                Layer::ConcatSkip { skip_channels } => Layer::ConcatSkip {
                    skip_channels: *skip_channels,
                },
            })
            .collect();
        Network { layers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::check::{central_difference, max_relative_error};
    use crate::nn::{BatchNorm2d, Conv2d};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_unet(rng: &mut ChaCha8Rng) -> Network<f64> {
        Network::new(vec![
            Layer::Conv(Conv2d::new(1, 2, 3, rng)),
            Layer::BatchNorm(BatchNorm2d::new(2)),
            Layer::relu(),
            Layer::SaveSkip,
            Layer::max_pool(),
            Layer::Conv(Conv2d::new(2, 3, 3, rng)),
            Layer::relu(),
            Layer::upsample(),
            Layer::Conv(Conv2d::new(3, 2, 2, rng)),
            Layer::ConcatSkip { skip_channels: 2 },
            Layer::Conv(Conv2d::new(4, 2, 1, rng)),
        ])
    }

    #[test]
    fn end_to_end_gradients_with_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let template = tiny_unet(&mut rng);
        let shape = [2, 1, 4, 4];
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out_len = 2 * 2 * 16;
        let probe: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |net: &mut Network<f64>, input: &[f64]| -> f64 {
            let out = net
                .forward(Tensor::from_vec(shape, input.to_vec()), Mode::Train)
                .unwrap();
            out.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };

        let mut net = template.clone();
        let out = net.forward(Tensor::from_vec(shape, x.clone()), Mode::Train).unwrap();
        let dx = net.backward(Tensor::from_vec(out.shape(), probe.clone()));
        let numeric = central_difference(|v| objective(&mut template.clone(), v), &x, 1e-6);
        assert!(max_relative_error(dx.data(), &numeric) < 1e-5);

        // first conv weights, reached through both the skip and the main path
        let analytic = net.params_mut()[0].grad.as_ref().unwrap().to_vec();
        let w0 = net.params_mut()[0].values.clone();
        let numeric = central_difference(
            |w| {
                let mut n = template.clone();
                n.params_mut()[0].values.copy_from_slice(w);
                objective(&mut n, &x)
            },
            &w0,
            1e-6,
        );
        assert!(max_relative_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn param_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = tiny_unet(&mut rng);
        // conv: 1*2*9+2, bn: 4*2, conv: 2*3*9+3, conv: 3*2*4+2, conv: 4*2+2
        assert_eq!(net.param_count(), 20 + 8 + 57 + 26 + 10);
        let total: usize = net.params_mut().iter().map(|p| p.values.len()).sum();
        assert_eq!(total, net.param_count());
        let names: Vec<String> = net.params_mut().into_iter().map(|p| p.name).collect();
        assert_eq!(names[2], "1.gamma");
    }

    #[test]
    fn non_finite_is_reported_with_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = tiny_unet(&mut rng);
        if let Layer::Conv(c) = &mut net.layers_mut()[5] {
            c.weight[0] = f64::INFINITY;
        }
        let x = Tensor::from_vec([1, 1, 4, 4], (0..16).map(|i| i as f64 * 0.1 + 0.05).collect());
        let err = net.forward(x, Mode::Eval).unwrap_err().to_string();
        assert!(err.contains("layer 5"), "{err}");
    }

    #[test]
    fn cast_preserves_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = tiny_unet(&mut rng);
        let mut single = net.cast::<f32>();
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = net
            .forward(Tensor::from_vec([1, 1, 4, 4], x.clone()), Mode::Eval)
            .unwrap();
        let b = single
            .forward(
                Tensor::from_vec([1, 1, 4, 4], x.iter().map(|&v| v as f32).collect()),
                Mode::Eval,
            )
            .unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - *q as f64).abs() < 1e-4);
        }
    }
}
