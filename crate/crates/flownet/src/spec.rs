//! Network architecture description and the flat parameter layout.

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::ConvGeom;

pub const CONV3: ConvGeom = ConvGeom { k: 3, stride: 1, pad: 1 };
pub const CONV3_S2: ConvGeom = ConvGeom { k: 3, stride: 2, pad: 1 };
pub const DECONV4_S2: ConvGeom = ConvGeom { k: 4, stride: 2, pad: 1 };

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    /// `(width, height)`; both must be divisible by 16.
    pub input_size: (usize, usize),
    /// Base channel count `c`; the encoder runs `[c, c, 2c, 2c, 4c, 4c, 8c, 8c]`.
    pub base_channels: usize,
    /// One encoder applied to both inputs (pre-training) or one per input.
    pub share_encoders: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            input_size: (64, 64),
            base_channels: 16,
            share_encoders: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// Which sub-network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Source encoder (also the shared encoder).
    EncoderA,
    /// Target encoder; absent when encoders are shared.
    EncoderB,
    FlowDecoder,
    MatchDecoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDesc {
    pub branch: Branch,
    pub kind: LayerKind,
    pub geom: ConvGeom,
    pub cin: usize,
    pub cout: usize,
    pub relu: bool,
    /// Offset of the weights in the flat vector; the `cout` biases follow them.
    pub offset: usize,
    pub name: String,
}

impl LayerDesc {
    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.geom.k * self.geom.k
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % 16 != 0 || h % 16 != 0 {
            return Err(NetError::Spec(format!("input size {w}x{h} must be positive and divisible by 16")));
        }
        if self.base_channels == 0 {
            return Err(NetError::Spec("base_channels must be positive".into()));
        }
        Ok(())
    }

    fn encoder_channels(&self) -> [usize; 8] {
        let c = self.base_channels;
        [c, c, 2 * c, 2 * c, 4 * c, 4 * c, 8 * c, 8 * c]
    }

    /// Output channels of the four decoder triplets.
    fn decoder_channels(&self) -> [usize; 4] {
        let c = self.base_channels;
        [8 * c, 4 * c, 2 * c, c]
    }

    /// Every layer in execution order within its branch, with parameter offsets.
    pub fn layers(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |branch, kind, geom, cin, cout, relu, name: String| {
            let d = LayerDesc {
                branch,
                kind,
                geom,
                cin,
                cout,
                relu,
                offset,
                name,
            };
            offset += d.param_len();
            out.push(d);
        };
        let encoders: &[(Branch, &str)] = if self.share_encoders {
            &[(Branch::EncoderA, "enc")]
        } else {
            &[(Branch::EncoderA, "enc_src"), (Branch::EncoderB, "enc_tgt")]
        };
        for &(branch, tag) in encoders {
            let mut cin = 3;
            for (i, &cout) in self.encoder_channels().iter().enumerate() {
                let geom = if i % 2 == 1 { CONV3_S2 } else { CONV3 };
                push(branch, LayerKind::Conv, geom, cin, cout, true, format!("{tag}.conv{}", i + 1));
                cin = cout;
            }
        }
        for (branch, tag) in [(Branch::FlowDecoder, "flow"), (Branch::MatchDecoder, "match")] {
            let mut cin = 2 * 8 * self.base_channels;
            for (t, &ch) in self.decoder_channels().iter().enumerate() {
                push(branch, LayerKind::Conv, CONV3, cin, ch, true, format!("{tag}.t{}.conv1", t + 1));
                push(branch, LayerKind::Conv, CONV3, ch, ch, false, format!("{tag}.t{}.conv2", t + 1));
                push(branch, LayerKind::Deconv, DECONV4_S2, ch, ch, true, format!("{tag}.t{}.deconv", t + 1));
                cin = ch;
            }
            let c = self.base_channels;
            if branch == Branch::FlowDecoder {
                push(branch, LayerKind::Conv, CONV3, c, c, true, "flow.head1".into());
                push(branch, LayerKind::Conv, CONV3, c, c, true, "flow.head2".into());
                push(branch, LayerKind::Conv, CONV3, c, 2, false, "flow.out".into());
            } else {
                push(branch, LayerKind::Conv, CONV3, c, 2, false, "match.out".into());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerDesc::param_len).sum()
    }

    /// Same network with one encoder per input.
    pub fn unshared(&self) -> NetworkSpec {
        NetworkSpec {
            share_encoders: false,
            ..self.clone()
        }
    }
}
