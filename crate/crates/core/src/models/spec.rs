use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parameter-counting convention used by [`ParamCountReport`].
pub const PARAM_CONVENTION: &str = "conv=(kh*kw*cin+1)*cout;batchnorm=4*c;pool=upsample=0";

/// Block families of the two encoder-decoder architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "Simple_Block")]
    SimpleBlock,
    #[serde(rename = "Complex_Block")]
    ComplexBlock,
    #[serde(rename = "Final_Block")]
    FinalBlock,
    #[serde(rename = "Simple_Block_Dec")]
    SimpleBlockDec,
    #[serde(rename = "Complex_Block_Dec")]
    ComplexBlockDec,
    #[serde(rename = "UpSampling")]
    UpSampling,
    /// Two 3x3 conv+ReLU, then the skip is saved and the map pooled.
    #[serde(rename = "UNet_Contract")]
    UnetContract,
    #[serde(rename = "UNet_Bridge")]
    UnetBridge,
    /// Upsample, 2x2 up-convolution, concatenate skip, two 3x3 conv+ReLU.
    #[serde(rename = "UNet_Expand")]
    UnetExpand,
    #[serde(rename = "UNet_Output")]
    UnetOutput,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::SimpleBlock => "Simple_Block",
            BlockKind::ComplexBlock => "Complex_Block",
            BlockKind::FinalBlock => "Final_Block",
            BlockKind::SimpleBlockDec => "Simple_Block_Dec",
            BlockKind::ComplexBlockDec => "Complex_Block_Dec",
            BlockKind::UpSampling => "UpSampling",
            BlockKind::UnetContract => "UNet_Contract",
            BlockKind::UnetBridge => "UNet_Bridge",
            BlockKind::UnetExpand => "UNet_Expand",
            BlockKind::UnetOutput => "UNet_Output",
        }
    }
}

/// Primitive layer a block expands into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    BatchNorm {
        channels: usize,
    },
    MaxPool,
    Upsample,
    SaveSkip,
    ConcatSkip {
        skip_channels: usize,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => (kernel * kernel * in_channels + 1) * out_channels,
            LayerSpec::BatchNorm { channels } => 4 * channels,
            _ => 0,
        }
    }
}

/// One row of an architecture table. Convolutions are 3x3, stride 1,
/// 'same' padding; pooling and upsampling windows are 2x2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    pub in_channels: usize,
    /// Feature maps of the block's 3x3 convolutions.
    pub filters: usize,
    /// Output channels of the closing 1x1 convolution (final blocks only).
    pub num_classes: Option<usize>,
}

impl BlockSpec {
    fn new(name: impl Into<String>, kind: BlockKind, in_channels: usize, filters: usize) -> Self {
        Self {
            name: name.into(),
            kind,
            in_channels,
            filters,
            num_classes: None,
        }
    }

    /// Primitive layers, in execution order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let f = self.filters;
        let conv = |i, o, k| LayerSpec::Conv {
            in_channels: i,
            out_channels: o,
            kernel: k,
        };
        let crb = |n: usize, first_in: usize| {
            (0..n)
                .flat_map(|i| {
                    [
                        conv(if i == 0 { first_in } else { f }, f, 3),
                        LayerSpec::Relu,
                        LayerSpec::BatchNorm { channels: f },
                    ]
                })
                .collect::<Vec<_>>()
        };
        let cr2 = |first_in: usize| vec![conv(first_in, f, 3), LayerSpec::Relu, conv(f, f, 3), LayerSpec::Relu];
        let mut layers = match self.kind {
            BlockKind::SimpleBlock => crb(2, self.in_channels),
            BlockKind::ComplexBlock => crb(3, self.in_channels),
            BlockKind::SimpleBlockDec => crb(2, self.in_channels),
            BlockKind::ComplexBlockDec => crb(3, self.in_channels),
            BlockKind::FinalBlock => crb(2, self.in_channels),
            BlockKind::UpSampling => vec![],
            BlockKind::UnetContract | BlockKind::UnetBridge => cr2(self.in_channels),
            BlockKind::UnetExpand => {
                let mut l = vec![
                    LayerSpec::Upsample,
                    conv(self.in_channels, f, 2),
                    LayerSpec::Relu,
                    LayerSpec::ConcatSkip { skip_channels: f },
                ];
                l.extend(cr2(2 * f));
                l
            }
            BlockKind::UnetOutput => vec![],
        };
        match self.kind {
            BlockKind::SimpleBlock | BlockKind::ComplexBlock => layers.push(LayerSpec::MaxPool),
            BlockKind::SimpleBlockDec | BlockKind::ComplexBlockDec | BlockKind::UpSampling => {
                layers.push(LayerSpec::Upsample)
            }
            BlockKind::UnetContract => layers.extend([LayerSpec::SaveSkip, LayerSpec::MaxPool]),
            BlockKind::FinalBlock => layers.push(conv(f, self.num_classes.unwrap_or(f), 1)),
            BlockKind::UnetOutput => layers.push(conv(self.in_channels, self.num_classes.unwrap_or(f), 1)),
            _ => {}
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }
}

/// Height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Ordered block list plus the input it is laid out for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: InputShape,
    pub num_classes: usize,
    pub blocks: Vec<BlockSpec>,
}

/// Parameter counts per block under [`PARAM_CONVENTION`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCountReport {
    pub convention: &'static str,
    pub per_block: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCountReport {
    pub fn block(&self, name: &str) -> Option<usize> {
        self.per_block.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

/// Block-by-block output shapes `(name, [height, width, channels])`.
pub type ShapeChain = Vec<(String, [usize; 3])>;

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::config(format!(
            "num_classes must be at least 2, got {num_classes}"
        )));
    }
    Ok(())
}

/// Resolves `segnet`, `segnet-w<d>`, `unet` or `unet-d<depth>-c<base>`.
pub fn build_by_name(name: &str, num_classes: usize) -> Result<ModelSpec> {
    let bad = || {
        Error::config(format!(
            "unknown model {name:?} (expected segnet, segnet-w<d>, unet or unet-d<n>-c<n>)"
        ))
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match name {
        "segnet" => build_segnet(num_classes),
        "unet" => build_unet(num_classes, 4, 64),
        _ => {
            if let Some(d) = name.strip_prefix("segnet-w") {
                build_segnet_scaled(num_classes, num(d)?)
            } else if let Some(rest) = name.strip_prefix("unet-d") {
                let (d, c) = rest.split_once("-c").ok_or_else(bad)?;
                build_unet(num_classes, num(d)?, num(c)?)
            } else {
                Err(bad())
            }
        }
    }
}

/// SegNet with the standard channel widths on a 256x256x3 input.
pub fn build_segnet(num_classes: usize) -> Result<ModelSpec> {
    build_segnet_scaled(num_classes, 1)
}

/// SegNet with every feature-map count divided by `width_divisor`.
pub fn build_segnet_scaled(num_classes: usize, width_divisor: usize) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    if width_divisor == 0 || 64 % width_divisor != 0 {
        return Err(Error::config(format!("width divisor {width_divisor} must divide 64")));
    }
    let c = |n: usize| n / width_divisor;
    use BlockKind::*;
    let mut blocks = vec![
        BlockSpec::new("Simple_Block_1", SimpleBlock, 3, c(64)),
        BlockSpec::new("Simple_Block_2", SimpleBlock, c(64), c(128)),
        BlockSpec::new("Complex_block_1", ComplexBlock, c(128), c(256)),
        BlockSpec::new("Complex_block_2", ComplexBlock, c(256), c(512)),
        BlockSpec::new("Complex_block_3", ComplexBlock, c(512), c(512)),
        BlockSpec::new("UpSampling", UpSampling, c(512), c(512)),
        BlockSpec::new("Complex_block_Dec_1", ComplexBlockDec, c(512), c(512)),
        BlockSpec::new("Complex_block_Dec_2", ComplexBlockDec, c(512), c(512)),
        BlockSpec::new("Complex_block_Dec_3", ComplexBlockDec, c(512), c(256)),
        BlockSpec::new("Simple_block_Dec_1", SimpleBlockDec, c(256), c(128)),
        BlockSpec::new("Final_Block", FinalBlock, c(128), c(64)),
    ];
    blocks.last_mut().unwrap().num_classes = Some(num_classes);
    let name = if width_divisor == 1 {
        "segnet".to_string()
    } else {
        format!("segnet-w{width_divisor}")
    };
    ModelSpec {
        name,
        input: InputShape {
            height: 256,
            width: 256,
            channels: 3,
        },
        num_classes,
        blocks,
    }
    .validated()
}

/// U-Net with `depth` poolings and `base_channels` at the top level, on a
/// 256x256x3 input.
pub fn build_unet(num_classes: usize, depth: usize, base_channels: usize) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    if depth == 0 {
        return Err(Error::config("U-Net depth must be at least 1"));
    }
    if base_channels == 0 {
        return Err(Error::config("U-Net base channels must be positive"));
    }
    let ch = |level: usize| base_channels << level;
    let mut blocks = Vec::new();
    for level in 0..depth {
        let input = if level == 0 { 3 } else { ch(level - 1) };
        blocks.push(BlockSpec::new(
            format!("Contract_{}", level + 1),
            BlockKind::UnetContract,
            input,
            ch(level),
        ));
    }
    blocks.push(BlockSpec::new(
        "Bridge",
        BlockKind::UnetBridge,
        ch(depth - 1),
        ch(depth),
    ));
    for level in (0..depth).rev() {
        blocks.push(BlockSpec::new(
            format!("Expand_{}", level + 1),
            BlockKind::UnetExpand,
            ch(level + 1),
            ch(level),
        ));
    }
    let mut out = BlockSpec::new("Output", BlockKind::UnetOutput, ch(0), ch(0));
    out.num_classes = Some(num_classes);
    blocks.push(out);
    ModelSpec {
        name: format!("unet-d{depth}-c{base_channels}"),
        input: InputShape {
            height: 256,
            width: 256,
            channels: 3,
        },
        num_classes,
        blocks,
    }
    .validated()
}

impl ModelSpec {
    fn validated(self) -> Result<Self> {
        self.shape_chain()?;
        Ok(self)
    }

    /// Same architecture laid out for a different spatial input size.
    pub fn with_input(mut self, height: usize, width: usize) -> Result<Self> {
        self.input.height = height;
        self.input.width = width;
        self.validated()
    }

    /// Number of 2x2 poolings on the longest path.
    pub fn downsampling_factor(&self) -> usize {
        let pools = self.layers().iter().filter(|l| matches!(l, LayerSpec::MaxPool)).count();
        1 << pools
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.blocks.iter().flat_map(BlockSpec::layers).collect()
    }

    /// Output shape after every block; fails on any channel or spatial
    /// incompatibility.
    pub fn shape_chain(&self) -> Result<ShapeChain> {
        let InputShape {
            mut height,
            mut width,
            mut channels,
        } = self.input;
        if height == 0 || width == 0 {
            return Err(Error::shape("input must be non-empty"));
        }
        let mut skips: Vec<[usize; 3]> = Vec::new();
        let mut chain = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            for layer in block.layers() {
                match layer {
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        ..
                    } => {
                        if in_channels != channels {
                            return Err(Error::shape(format!(
                                "{}: conv expects {in_channels} channels, got {channels}",
                                block.name
                            )));
                        }
                        channels = out_channels;
                    }
                    LayerSpec::BatchNorm { channels: c } if c != channels => {
                        return Err(Error::shape(format!(
                            "{}: batch norm over {c} channels, got {channels}",
                            block.name
                        )));
                    }
                    LayerSpec::MaxPool => {
                        if height % 2 != 0 || width % 2 != 0 {
                            return Err(Error::shape(format!(
                                "{}: cannot pool a {height}x{width} map; input {}x{} must be divisible by {}",
                                block.name,
                                self.input.height,
                                self.input.width,
                                self.downsampling_factor()
                            )));
                        }
                        height /= 2;
                        width /= 2;
                    }
                    LayerSpec::Upsample => {
                        height *= 2;
                        width *= 2;
                    }
                    LayerSpec::SaveSkip => skips.push([height, width, channels]),
                    LayerSpec::ConcatSkip { skip_channels } => {
                        let skip = skips
                            .pop()
                            .ok_or_else(|| Error::shape(format!("{}: no skip to concatenate", block.name)))?;
                        if skip != [height, width, skip_channels] {
                            return Err(Error::shape(format!(
                                "{}: skip {skip:?} does not match {height}x{width}x{skip_channels}",
                                block.name
                            )));
                        }
                        channels += skip_channels;
                    }
                    LayerSpec::Relu | LayerSpec::BatchNorm { .. } => {}
                }
            }
            chain.push((block.name.clone(), [height, width, channels]));
        }
        if !skips.is_empty() {
            return Err(Error::shape("unconsumed skip connections"));
        }
        if [height, width, channels] != [self.input.height, self.input.width, self.num_classes] {
            return Err(Error::shape(format!(
                "output {height}x{width}x{channels}, expected {}x{}x{}",
                self.input.height, self.input.width, self.num_classes
            )));
        }
        Ok(chain)
    }

    pub fn param_count(&self) -> ParamCountReport {
        let per_block: Vec<(String, usize)> = self.blocks.iter().map(|b| (b.name.clone(), b.param_count())).collect();
        let total = per_block.iter().map(|(_, c)| c).sum();
        ParamCountReport {
            convention: PARAM_CONVENTION,
            per_block,
            total,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// SHA-256 over the compact JSON form.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    /// Fixed-width text table: block, kind, output shape, parameters.
    pub fn describe(&self) -> Result<String> {
        let chain = self.shape_chain()?;
        let report = self.param_count();
        let mut out = format!(
            "{} ({}x{}x{} -> {} classes)\n{:<22} {:<18} {:>14} {:>10}\n",
            self.name,
            self.input.height,
            self.input.width,
            self.input.channels,
            self.num_classes,
            "block",
            "kind",
            "output",
            "params"
        );
        for ((block, (_, shape)), (_, params)) in self.blocks.iter().zip(&chain).zip(&report.per_block) {
            out.push_str(&format!(
                "{:<22} {:<18} {:>14} {:>10}\n",
                block.name,
                block.kind.as_str(),
                format!("{}x{}x{}", shape[0], shape[1], shape[2]),
                params
            ));
        }
        out.push_str(&format!("{:<22} {:<18} {:>14} {:>10}\n", "total", "", "", report.total));
        Ok(out)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
