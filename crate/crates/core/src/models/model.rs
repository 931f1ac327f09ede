use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::losses::ScoreMap;
use crate::mask_codec::ClassMap;
use crate::nn::{BatchNorm2d, Conv2d, Layer, Mode, Network, Scalar, Tensor};

/// Executable network built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    network: Network<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network with He-normal weights drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers()
            .into_iter()
            .map(|l| match l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => Layer::Conv(Conv2d::new(in_channels, out_channels, kernel, &mut rng)),
                LayerSpec::Relu => Layer::relu(),
                LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)),
                LayerSpec::MaxPool => Layer::max_pool(),
                LayerSpec::Upsample => Layer::upsample(),
                LayerSpec::SaveSkip => Layer::SaveSkip,
                LayerSpec::ConcatSkip { skip_channels } => Layer::ConcatSkip { skip_channels },
            })
            .collect();
        Ok(Self {
            spec,
            network: Network::new(layers),
        })
    }

    pub(crate) fn from_parts(spec: ModelSpec, network: Network<T>) -> Self {
        Self { spec, network }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.network
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    /// Zeroes the last convolution, so every pixel gets uniform class scores.
    pub fn zero_head(&mut self) {
        if let Some(Layer::Conv(conv)) = self
            .network
            .layers_mut()
            .iter_mut()
            .rev()
            .find(|l| matches!(l, Layer::Conv(_)))
        {
            conv.weight.iter_mut().for_each(|w| *w = T::zero());
            conv.bias.iter_mut().for_each(|b| *b = T::zero());
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let input = self.spec.input;
        if [c, h, w] != [input.channels, input.height, input.width] {
            return Err(Error::shape(format!(
                "{} expects {}x{}x{} input, got {h}x{w}x{c}",
                self.spec.name, input.height, input.width, input.channels
            )));
        }
        Ok(())
    }

    /// Logits, `N x num_classes x H x W`.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        self.network.forward(x, mode)
    }

    /// Inference-mode logits without keeping activations for backward.
    pub fn infer(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        self.network.infer(x)
    }

    /// Per-image argmax label maps.
    pub fn predict(&mut self, x: Tensor<T>) -> Result<Vec<ClassMap>> {
        let logits = self.infer(x)?;
        Ok(tensor_to_scoremaps(&logits).iter().map(ScoreMap::argmax).collect())
    }
}

/// `1 x 3 x H x W` tensor with channels scaled to [0, 1].
pub fn image_to_tensor<T: Scalar>(image: &RgbImage) -> Tensor<T> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, px) in image.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = T::from_f64_lossy(px.0[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec([1, 3, h, w], data)
}

/// Splits an NCHW batch into pixel-major score maps (one per image).
pub fn tensor_to_scoremaps<T: Scalar>(t: &Tensor<T>) -> Vec<ScoreMap> {
    let [n, c, h, w] = t.shape();
    let hw = h * w;
    (0..n)
        .map(|b| {
            let img = t.image(b);
            let mut data = vec![0.0; hw * c];
            for ch in 0..c {
                for (p, v) in img[ch * hw..(ch + 1) * hw].iter().enumerate() {
                    data[p * c + ch] = v.to_f64_lossy();
                }
            }
            ScoreMap::from_vec(w, h, c, data).expect("sizes agree")
        })
        .collect()
}

/// Inverse of [`tensor_to_scoremaps`].
pub fn scoremaps_to_tensor<T: Scalar>(maps: &[ScoreMap]) -> Tensor<T> {
    let first = &maps[0];
    let (w, h, c) = (first.width(), first.height(), first.channels());
    let hw = h * w;
    let mut out = Tensor::zeros([maps.len(), c, h, w]);
    for (b, map) in maps.iter().enumerate() {
        assert!(map.same_shape(first), "score maps must share a shape");
        let img = out.image_mut(b);
        for (p, px) in map.pixels().enumerate() {
            for (ch, v) in px.iter().enumerate() {
                img[ch * hw + p] = T::from_f64_lossy(*v);
            }
        }
    }
    out
}
