//! Fully convolutional encoder: six convolutional blocks followed by four
//! depthwise-separable blocks. Any input size is accepted; outputs use
//! ceil-division extents.

use rand::Rng;

use super::{param, ModelError, ParamSpec, Result};
use crate::tensor::{conv_output_extent, Graph, Padding, ParamStore, Real, Var};

pub const BLOCKS: usize = 10;
const CONV_BLOCKS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Three 3×3 convolutions, the last one strided, then instance norm.
    Conv,
    /// Same shape with depthwise-separable convolutions and a residual path.
    DepthSep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub channels: usize,
    pub stride: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderPreset {
    Small,
    Base,
    Large,
    Desk,
}

impl EncoderPreset {
    pub fn channels(self) -> [usize; BLOCKS] {
        match self {
            EncoderPreset::Small => [16, 32, 64, 128, 128, 128, 128, 128, 256, 1024],
            EncoderPreset::Base => [32, 64, 128, 256, 512, 512, 512, 512, 512, 1024],
            EncoderPreset::Large => [32, 64, 128, 256, 512, 1024, 1024, 1024, 1024, 1024],
            EncoderPreset::Desk => [8, 16, 32, 64, 64, 64, 64, 64, 64, 128],
        }
    }
}

impl std::str::FromStr for EncoderPreset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "S" | "small" => EncoderPreset::Small,
            "base" => EncoderPreset::Base,
            "L" | "large" => EncoderPreset::Large,
            "desk" => EncoderPreset::Desk,
            other => return Err(ModelError::Config(format!("unknown encoder preset {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Output channels of the ten blocks.
    pub channels: Vec<usize>,
    /// Keeps full vertical resolution in block 5, halving the vertical downsampling.
    pub mpopp: bool,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn preset(preset: EncoderPreset, mpopp: bool) -> Self {
        Self { channels: preset.channels().to_vec(), mpopp, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != BLOCKS || self.channels.contains(&0) {
            return Err(ModelError::Config(format!(
                "encoder needs {BLOCKS} positive channel counts, got {:?}",
                self.channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("encoder dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &channels)| {
                let stride = match i + 1 {
                    2..=4 => (2, 2),
                    5 if self.mpopp => (1, 1),
                    5 | 6 => (2, 1),
                    _ => (1, 1),
                };
                let kind = if i < CONV_BLOCKS { BlockKind::Conv } else { BlockKind::DepthSep };
                BlockSpec { kind, channels, stride }
            })
            .collect()
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// Total vertical and horizontal downsampling, also the minimum input size.
    pub fn downsampling(&self) -> (usize, usize) {
        self.blocks().iter().fold((1, 1), |(h, w), b| (h * b.stride.0, w * b.stride.1))
    }

    /// Feature-map extents for an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (mh, mw) = self.downsampling();
        if h < mh || w < mw {
            return Err(ModelError::InputSize { height: h, width: w, min_height: mh, min_width: mw });
        }
        let mut e = (h, w);
        for b in self.blocks() {
            e = (
                conv_output_extent(e.0, 3, b.stride.0, Padding::Same).expect("same padding"),
                conv_output_extent(e.1, 3, b.stride.1, Padding::Same).expect("same padding"),
            );
        }
        Ok(e)
    }

    pub(super) fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        let mut cin = 1;
        for (i, b) in self.blocks().iter().enumerate() {
            let c = b.channels;
            let pre = format!("enc.{i}");
            for (j, ci) in [cin, c, c].into_iter().enumerate() {
                match b.kind {
                    BlockKind::Conv => {
                        out.push(ParamSpec::fan_in(format!("{pre}.conv{j}.w"), vec![c, ci, 3, 3], ci * 9));
                        out.push(ParamSpec::zeros(format!("{pre}.conv{j}.b"), vec![c]));
                    }
                    BlockKind::DepthSep => {
                        out.push(ParamSpec::fan_in(format!("{pre}.conv{j}.dw"), vec![ci, 1, 3, 3], 9));
                        out.push(ParamSpec::zeros(format!("{pre}.conv{j}.db"), vec![ci]));
                        out.push(ParamSpec::fan_in(format!("{pre}.conv{j}.pw"), vec![c, ci, 1, 1], ci));
                        out.push(ParamSpec::zeros(format!("{pre}.conv{j}.pb"), vec![c]));
                    }
                }
            }
            out.push(ParamSpec::ones(format!("{pre}.norm.g"), vec![c]));
            out.push(ParamSpec::zeros(format!("{pre}.norm.b"), vec![c]));
            cin = c;
        }
    }
}

/// `image: [1,1,H,W]` to `f2D: [1,C,H_f,W_f]`.
pub(super) fn forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    config: &EncoderConfig,
    image: Var,
    rng: &mut impl Rng,
) -> Result<Var> {
    let shape = g.shape(image).to_vec();
    config.output_extent(shape[2], shape[3])?;
    let mut x = image;
    let mut cin = 1;
    for (i, b) in config.blocks().iter().enumerate() {
        let pre = format!("enc.{i}");
        let input = x;
        for j in 0..3 {
            let stride = if j == 2 { b.stride } else { (1, 1) };
            x = match b.kind {
                BlockKind::Conv => {
                    let (w, bias) =
                        (param(g, store, &format!("{pre}.conv{j}.w"))?, param(g, store, &format!("{pre}.conv{j}.b"))?);
                    g.conv2d(x, w, Some(bias), stride, Padding::Same)?
                }
                BlockKind::DepthSep => {
                    let dw = param(g, store, &format!("{pre}.conv{j}.dw"))?;
                    let db = param(g, store, &format!("{pre}.conv{j}.db"))?;
                    let pw = param(g, store, &format!("{pre}.conv{j}.pw"))?;
                    let pb = param(g, store, &format!("{pre}.conv{j}.pb"))?;
                    g.depthwise_separable_conv2d(x, dw, Some(db), pw, Some(pb), stride, Padding::Same)?
                }
            };
            if j < 2 {
                x = g.relu(x)?;
            }
        }
        let (gamma, beta) = (param(g, store, &format!("{pre}.norm.g"))?, param(g, store, &format!("{pre}.norm.b"))?);
        x = g.instance_norm(x, gamma, beta)?;
        x = g.dropout(x, config.dropout, rng)?;
        if b.kind == BlockKind::DepthSep && cin == b.channels && b.stride == (1, 1) {
            x = g.add(x, input)?;
        }
        cin = b.channels;
    }
    Ok(x)
}
