//! Forward-only MobileNet-style network and the detector abstraction.
//!
//! Tensors are row-major with channels innermost (`[y][x][c]`). All
//! convolutions are cross-correlations with TensorFlow-style SAME zero
//! padding: the output side is `ceil(in / stride)` and any odd padding
//! pixel goes to the bottom/right edge.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{generate_anchors, AnchorConfig, AnchorSet, BoxOffsets, GeometryError, Variances};
use crate::multibox::{decode_detections, nms, Detection, MultiboxError, NmsConfig, RawPredictions};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SCRW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("tensor shape mismatch: {0}")]
    Shape(String),
    #[error("channel mismatch: expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("network does not fit anchor layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Multibox(#[from] MultiboxError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("i/o error reading weights: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"SCRW\"")]
    BadMagic([u8; 4]),
    #[error("unsupported weights version {0}, expected 1")]
    UnsupportedVersion(u32),
    #[error("weights file declares no layers")]
    EmptyNetwork,
    #[error("weights file truncated in header")]
    TruncatedHeader,
    #[error("weights file truncated in layer {layer}")]
    Truncated { layer: usize },
    #[error("layer {layer}: unknown layer kind {kind}")]
    UnknownKind { layer: usize, kind: u8 },
    #[error("layer {layer}: expects {found} input channels but the previous layer produces {expected}")]
    ChannelChain { layer: usize, expected: usize, found: usize },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("network has no detection heads")]
    NoHeads,
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
}

/// RGB image with intensities in `[0, 1]`, row-major, channel-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, BackboneError> {
        if width == 0 || height == 0 {
            return Err(BackboneError::InvalidImage("dimensions must be at least 1".into()));
        }
        if data.len() != width * height * 3 {
            return Err(BackboneError::InvalidImage(format!(
                "expected {} samples for {}x{} RGB, got {}",
                width * height * 3,
                width,
                height,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(BackboneError::InvalidImage("intensity outside [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data).expect("valid fill")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                let (p00, p01) = (self.pixel(x0, y0), self.pixel(x1, y0));
                let (p10, p11) = (self.pixel(x0, y1), self.pixel(x1, y1));
                for c in 0..3 {
                    let top = p00[c] + (p01[c] - p00[c]) * wx;
                    let bottom = p10[c] + (p11[c] - p10[c]) * wx;
                    data.push((top + (bottom - top) * wy).clamp(0.0, 1.0));
                }
            }
        }
        Image { width, height, data }
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.data.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, BackboneError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(BackboneError::Shape("dimensions must be at least 1".into()));
        }
        if data.len() != height * width * channels {
            return Err(BackboneError::Shape(format!(
                "{}x{}x{} needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BackboneError::Shape("non-finite value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Output side and leading pad for SAME padding.
pub fn same_padding(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2)
}

/// Full convolution weights laid out `[k][k][in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub k: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(k: usize, in_ch: usize, out_ch: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self, BackboneError> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(BackboneError::Shape(format!("kernel size must be odd, got {k}")));
        }
        if weights.len() != k * k * in_ch * out_ch || bias.len() != out_ch {
            return Err(BackboneError::Shape(format!(
                "conv {k}x{k} {in_ch}->{out_ch} needs {} weights and {out_ch} biases, got {} and {}",
                k * k * in_ch * out_ch,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            k,
            in_ch,
            out_ch,
            weights,
            bias,
        })
    }
}

/// Per-channel filters laid out `[k][k][ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseWeights {
    pub k: usize,
    pub channels: usize,
    pub weights: Vec<f32>,
}

impl DepthwiseWeights {
    pub fn new(k: usize, channels: usize, weights: Vec<f32>) -> Result<Self, BackboneError> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(BackboneError::Shape(format!("kernel size must be odd, got {k}")));
        }
        if weights.len() != k * k * channels {
            return Err(BackboneError::Shape(format!(
                "depthwise {k}x{k}x{channels} needs {} weights, got {}",
                k * k * channels,
                weights.len()
            )));
        }
        Ok(Self { k, channels, weights })
    }
}

/// 1×1 channel mix laid out `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseWeights {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl PointwiseWeights {
    pub fn new(in_ch: usize, out_ch: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self, BackboneError> {
        if weights.len() != in_ch * out_ch || bias.len() != out_ch {
            return Err(BackboneError::Shape(format!(
                "pointwise {in_ch}->{out_ch} needs {} weights and {out_ch} biases, got {} and {}",
                in_ch * out_ch,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_ch,
            out_ch,
            weights,
            bias,
        })
    }
}

pub fn conv2d(x: &Tensor3, w: &ConvWeights, stride: usize) -> Result<Tensor3, BackboneError> {
    if x.channels != w.in_ch {
        return Err(BackboneError::ChannelMismatch {
            expected: w.in_ch,
            got: x.channels,
        });
    }
    let stride = stride.max(1);
    let (oh, pad_y) = same_padding(x.height, w.k, stride);
    let (ow, pad_x) = same_padding(x.width, w.k, stride);
    let (cin, cout, k) = (w.in_ch, w.out_ch, w.k);
    let mut out = vec![0.0f32; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * cout..][..cout];
            acc.copy_from_slice(&w.bias);
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad_y as isize;
                if iy < 0 || iy >= x.height as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad_x as isize;
                    if ix < 0 || ix >= x.width as isize {
                        continue;
                    }
                    let px = &x.data[(iy as usize * x.width + ix as usize) * cin..][..cin];
                    let kbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        let wrow = &w.weights[kbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor3 {
        height: oh,
        width: ow,
        channels: cout,
        data: out,
    })
}

pub fn depthwise_conv2d(x: &Tensor3, w: &DepthwiseWeights, stride: usize) -> Result<Tensor3, BackboneError> {
    if x.channels != w.channels {
        return Err(BackboneError::ChannelMismatch {
            expected: w.channels,
            got: x.channels,
        });
    }
    let stride = stride.max(1);
    let (oh, pad_y) = same_padding(x.height, w.k, stride);
    let (ow, pad_x) = same_padding(x.width, w.k, stride);
    let (ch, k) = (w.channels, w.k);
    let mut out = vec![0.0f32; oh * ow * ch];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * ch..][..ch];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad_y as isize;
                if iy < 0 || iy >= x.height as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad_x as isize;
                    if ix < 0 || ix >= x.width as isize {
                        continue;
                    }
                    let px = &x.data[(iy as usize * x.width + ix as usize) * ch..][..ch];
                    let wrow = &w.weights[(ky * k + kx) * ch..][..ch];
                    for ((a, &v), &wv) in acc.iter_mut().zip(px).zip(wrow) {
                        *a += v * wv;
                    }
                }
            }
        }
    }
    Ok(Tensor3 {
        height: oh,
        width: ow,
        channels: ch,
        data: out,
    })
}

pub fn pointwise_conv(x: &Tensor3, w: &PointwiseWeights) -> Result<Tensor3, BackboneError> {
    if x.channels != w.in_ch {
        return Err(BackboneError::ChannelMismatch {
            expected: w.in_ch,
            got: x.channels,
        });
    }
    let (cin, cout) = (w.in_ch, w.out_ch);
    let pixels = x.height * x.width;
    let mut out = vec![0.0f32; pixels * cout];
    for (p, acc) in out.chunks_exact_mut(cout).enumerate() {
        acc.copy_from_slice(&w.bias);
        let px = &x.data[p * cin..][..cin];
        for (ci, &v) in px.iter().enumerate() {
            let wrow = &w.weights[ci * cout..][..cout];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += v * wv;
            }
        }
    }
    Ok(Tensor3 {
        height: x.height,
        width: x.width,
        channels: cout,
        data: out,
    })
}

pub fn relu(x: &Tensor3) -> Tensor3 {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

fn relu_in_place(x: &mut Tensor3) {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        stride: usize,
        weights: ConvWeights,
    },
    Depthwise {
        stride: usize,
        weights: DepthwiseWeights,
    },
    Pointwise(PointwiseWeights),
    Relu,
    /// Prediction head: a stride-1 conv over the current features whose
    /// output is collected; the trunk continues from its input.
    Head(ConvWeights),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv { .. } => LayerKind::Conv,
            Layer::Depthwise { .. } => LayerKind::Depthwise,
            Layer::Pointwise(_) => LayerKind::Pointwise,
            Layer::Relu => LayerKind::Relu,
            Layer::Head(_) => LayerKind::Head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerKind {
    Conv = 1,
    Depthwise = 2,
    Pointwise = 3,
    Relu = 4,
    Head = 5,
}

impl LayerKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => LayerKind::Conv,
            2 => LayerKind::Depthwise,
            3 => LayerKind::Pointwise,
            4 => LayerKind::Relu,
            5 => LayerKind::Head,
            _ => return None,
        })
    }
}

/// One layer's header record as stored in SCRW1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHeader {
    pub kind: LayerKind,
    pub k: u16,
    pub stride: u16,
    pub in_ch: u16,
    pub out_ch: u16,
}

/// A validated layer chain. Input is always 3-channel RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self, WeightsError> {
        if layers.is_empty() {
            return Err(WeightsError::EmptyNetwork);
        }
        let mut ch = 3usize;
        for (i, layer) in layers.iter().enumerate() {
            let expect_in = |found: usize| {
                if found == ch {
                    Ok(())
                } else {
                    Err(WeightsError::ChannelChain {
                        layer: i,
                        expected: ch,
                        found,
                    })
                }
            };
            match layer {
                Layer::Conv { stride, weights } => {
                    expect_in(weights.in_ch)?;
                    if *stride == 0 {
                        return Err(WeightsError::InvalidLayer {
                            layer: i,
                            reason: "stride must be positive".into(),
                        });
                    }
                    ch = weights.out_ch;
                }
                Layer::Depthwise { stride, weights } => {
                    expect_in(weights.channels)?;
                    if *stride == 0 {
                        return Err(WeightsError::InvalidLayer {
                            layer: i,
                            reason: "stride must be positive".into(),
                        });
                    }
                }
                Layer::Pointwise(w) => {
                    expect_in(w.in_ch)?;
                    ch = w.out_ch;
                }
                Layer::Relu => {}
                Layer::Head(w) => expect_in(w.in_ch)?,
            }
            if ch == 0 {
                return Err(WeightsError::InvalidLayer {
                    layer: i,
                    reason: "zero output channels".into(),
                });
            }
        }
        if !layers.iter().any(|l| matches!(l, Layer::Head(_))) {
            return Err(WeightsError::NoHeads);
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn headers(&self) -> Vec<LayerHeader> {
        let mut ch = 3usize;
        self.layers
            .iter()
            .map(|l| {
                let (k, stride, i, o) = match l {
                    Layer::Conv { stride, weights } => (weights.k, *stride, weights.in_ch, weights.out_ch),
                    Layer::Depthwise { stride, weights } => (weights.k, *stride, weights.channels, weights.channels),
                    Layer::Pointwise(w) => (1, 1, w.in_ch, w.out_ch),
                    Layer::Relu => (1, 1, ch, ch),
                    Layer::Head(w) => (w.k, 1, w.in_ch, w.out_ch),
                };
                if !matches!(l, Layer::Head(_)) {
                    ch = o;
                }
                LayerHeader {
                    kind: l.kind(),
                    k: k as u16,
                    stride: stride as u16,
                    in_ch: i as u16,
                    out_ch: o as u16,
                }
            })
            .collect()
    }

    /// Spatial size and channel count of every head for a square input.
    pub fn head_shapes(&self, input: usize) -> Vec<(usize, usize)> {
        let mut side = input;
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv { stride, .. } | Layer::Depthwise { stride, .. } => side = side.div_ceil(*stride),
                Layer::Head(w) => out.push((side, w.out_ch)),
                _ => {}
            }
        }
        out
    }

    /// Runs the chain and returns each head's output in order.
    pub fn forward(&self, input: &Tensor3) -> Result<Vec<Tensor3>, BackboneError> {
        let mut x = input.clone();
        let mut heads = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { stride, weights } => x = conv2d(&x, weights, *stride)?,
                Layer::Depthwise { stride, weights } => x = depthwise_conv2d(&x, weights, *stride)?,
                Layer::Pointwise(w) => x = pointwise_conv(&x, w)?,
                Layer::Relu => relu_in_place(&mut x),
                Layer::Head(w) => heads.push(conv2d(&x, w, 1)?),
            }
        }
        Ok(heads)
    }

    /// SCRW1 encoding. See `docs/scrw1.md`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (layer, h) in self.layers.iter().zip(self.headers()) {
            out.push(h.kind as u8);
            for v in [h.k, h.stride, h.in_ch, h.out_ch] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let (w, b): (&[f32], &[f32]) = match layer {
                Layer::Conv { weights, .. } | Layer::Head(weights) => (&weights.weights, &weights.bias),
                Layer::Depthwise { weights, .. } => (&weights.weights, &[]),
                Layer::Pointwise(p) => (&p.weights, &p.bias),
                Layer::Relu => (&[], &[]),
            };
            for v in w.iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_bytes())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4)?)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    }
}

/// Parses an SCRW1 image, validating the channel chain and exact length.
pub fn parse_weights(bytes: &[u8]) -> Result<Network, WeightsError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).ok_or(WeightsError::TruncatedHeader)?;
    if magic != WEIGHTS_MAGIC {
        let mut m = [0u8; 4];
        m.copy_from_slice(magic);
        return Err(WeightsError::BadMagic(m));
    }
    let version = r.u32().ok_or(WeightsError::TruncatedHeader)?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let count = r.u32().ok_or(WeightsError::TruncatedHeader)? as usize;
    if count == 0 {
        return Err(WeightsError::EmptyNetwork);
    }

    let mut layers = Vec::with_capacity(count.min(1024));
    for layer in 0..count {
        let truncated = WeightsError::Truncated { layer };
        let kind_byte = r.take(1).ok_or(WeightsError::Truncated { layer })?[0];
        let kind = LayerKind::from_u8(kind_byte).ok_or(WeightsError::UnknownKind { layer, kind: kind_byte })?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u16().ok_or(WeightsError::Truncated { layer })? as usize;
        }
        let [k, stride, in_ch, out_ch] = dims;
        let invalid = |reason: &str| WeightsError::InvalidLayer {
            layer,
            reason: reason.to_string(),
        };
        let odd_kernel = k % 2 == 1;
        let parsed = match kind {
            LayerKind::Conv | LayerKind::Head => {
                if !odd_kernel {
                    return Err(invalid("kernel size must be odd"));
                }
                if stride == 0 || (kind == LayerKind::Head && stride != 1) {
                    return Err(invalid("invalid stride"));
                }
                let weights = r.f32s(k * k * in_ch * out_ch).ok_or(truncated)?;
                let bias = r.f32s(out_ch).ok_or(WeightsError::Truncated { layer })?;
                let w = ConvWeights::new(k, in_ch, out_ch, weights, bias).map_err(|e| invalid(&e.to_string()))?;
                if kind == LayerKind::Head {
                    Layer::Head(w)
                } else {
                    Layer::Conv { stride, weights: w }
                }
            }
            LayerKind::Depthwise => {
                if !odd_kernel || stride == 0 {
                    return Err(invalid("depthwise needs an odd kernel and positive stride"));
                }
                if in_ch != out_ch {
                    return Err(invalid("depthwise input and output channels differ"));
                }
                let weights = r.f32s(k * k * in_ch).ok_or(truncated)?;
                Layer::Depthwise {
                    stride,
                    weights: DepthwiseWeights::new(k, in_ch, weights).map_err(|e| invalid(&e.to_string()))?,
                }
            }
            LayerKind::Pointwise => {
                if k != 1 || stride != 1 {
                    return Err(invalid("pointwise layers must have k = 1 and stride = 1"));
                }
                let weights = r.f32s(in_ch * out_ch).ok_or(truncated)?;
                let bias = r.f32s(out_ch).ok_or(WeightsError::Truncated { layer })?;
                Layer::Pointwise(PointwiseWeights::new(in_ch, out_ch, weights, bias).map_err(|e| invalid(&e.to_string()))?)
            }
            LayerKind::Relu => {
                if in_ch != out_ch {
                    return Err(invalid("relu input and output channels differ"));
                }
                Layer::Relu
            }
        };
        layers.push((parsed, in_ch));
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::TrailingBytes(bytes.len() - r.pos));
    }

    let mut ch = 3usize;
    for (i, (l, found)) in layers.iter().enumerate() {
        if *found != ch {
            return Err(WeightsError::ChannelChain {
                layer: i,
                expected: ch,
                found: *found,
            });
        }
        match l {
            Layer::Conv { weights, .. } => ch = weights.out_ch,
            Layer::Pointwise(w) => ch = w.out_ch,
            _ => {}
        }
    }
    Network::new(layers.into_iter().map(|(l, _)| l).collect())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network, WeightsError> {
    parse_weights(&fs::read(path)?)
}

/// Layout of the default desk-scale detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultNetSpec {
    pub boxes_per_location: [usize; 2],
    pub num_classes: usize,
}

/// Builds the default network (160×160 input, heads at 10×10 and 5×5) with
/// seeded random weights.
pub fn synthetic_network(spec: DefaultNetSpec, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, fan_in: usize| -> Vec<f32> {
        let limit = (3.0 / fan_in as f64).sqrt() as f32;
        (0..n).map(|_| rng.random_range(-limit..limit)).collect()
    };
    let mut layers = Vec::new();
    let conv = |k: usize, i: usize, o: usize, u: &mut dyn FnMut(usize, usize) -> Vec<f32>| {
        ConvWeights::new(k, i, o, u(k * k * i * o, k * k * i), u(o, k * k * i)).expect("consistent shape")
    };
    layers.push(Layer::Conv {
        stride: 2,
        weights: conv(3, 3, 16, &mut uniform),
    });
    layers.push(Layer::Relu);
    let block = |layers: &mut Vec<Layer>, stride: usize, i: usize, o: usize, u: &mut dyn FnMut(usize, usize) -> Vec<f32>| {
        layers.push(Layer::Depthwise {
            stride,
            weights: DepthwiseWeights::new(3, i, u(9 * i, 9)).expect("shape"),
        });
        layers.push(Layer::Relu);
        layers.push(Layer::Pointwise(
            PointwiseWeights::new(i, o, u(i * o, i), u(o, i)).expect("shape"),
        ));
        layers.push(Layer::Relu);
    };
    block(&mut layers, 2, 16, 32, &mut uniform);
    block(&mut layers, 2, 32, 64, &mut uniform);
    block(&mut layers, 2, 64, 64, &mut uniform);
    block(&mut layers, 1, 64, 64, &mut uniform);
    let per_anchor = 4 + spec.num_classes + 1;
    layers.push(Layer::Head(conv(
        3,
        64,
        spec.boxes_per_location[0] * per_anchor,
        &mut uniform,
    )));
    block(&mut layers, 2, 64, 64, &mut uniform);
    layers.push(Layer::Head(conv(
        3,
        64,
        spec.boxes_per_location[1] * per_anchor,
        &mut uniform,
    )));
    Network::new(layers).expect("default network chains")
}

/// A network bound to an anchor layout and class list.
#[derive(Debug, Clone)]
pub struct SsdModel {
    net: Network,
    anchor_cfg: AnchorConfig,
    anchors: AnchorSet,
    labels: Vec<String>,
}

impl SsdModel {
    /// Checks that each head sits on the matching feature map and emits
    /// `(4 + C + 1)·b` channels.
    pub fn new(net: Network, anchor_cfg: AnchorConfig, labels: Vec<String>) -> Result<Self, BackboneError> {
        let anchors = generate_anchors(&anchor_cfg)?;
        if labels.is_empty() {
            return Err(BackboneError::Layout("at least one class label is required".into()));
        }
        let shapes = net.head_shapes(anchor_cfg.image_size as usize);
        if shapes.len() != anchor_cfg.num_layers() {
            return Err(BackboneError::Layout(format!(
                "network has {} heads but the anchor config has {} feature maps",
                shapes.len(),
                anchor_cfg.num_layers()
            )));
        }
        let per_anchor = 4 + labels.len() + 1;
        for (k, ((side, ch), &f)) in shapes.iter().zip(&anchor_cfg.feature_map_sizes).enumerate() {
            if *side != f as usize {
                return Err(BackboneError::Layout(format!(
                    "head {k} runs on a {side}x{side} grid, anchors expect {f}x{f}"
                )));
            }
            let want = anchor_cfg.boxes_per_location(k) * per_anchor;
            if *ch != want {
                return Err(BackboneError::Layout(format!(
                    "head {k} emits {ch} channels, expected {want}"
                )));
            }
        }
        Ok(Self {
            net,
            anchor_cfg,
            anchors,
            labels,
        })
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn input_size(&self) -> usize {
        self.anchor_cfg.image_size as usize
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Runs the network on an image already at the input size and flattens
    /// the heads in anchor order.
    pub fn forward(&self, img: &Image) -> Result<RawPredictions, BackboneError> {
        let side = self.input_size();
        if img.width() != side || img.height() != side {
            return Err(BackboneError::InvalidImage(format!(
                "expected {side}x{side} input, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let heads = self.net.forward(&img.to_tensor())?;
        let scores = self.labels.len() + 1;
        let per_anchor = 4 + scores;
        let mut offsets = Vec::with_capacity(self.anchors.len());
        let mut logits = Vec::with_capacity(self.anchors.len() * scores);
        for (k, head) in heads.iter().enumerate() {
            let b = self.anchor_cfg.boxes_per_location(k);
            for cell in head.data().chunks_exact(b * per_anchor) {
                for a in cell.chunks_exact(per_anchor) {
                    offsets.push(BoxOffsets::new(a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64));
                    logits.extend(a[4..].iter().map(|&v| v as f64));
                }
            }
        }
        Ok(RawPredictions::new(offsets, logits, scores)?)
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

/// What the pipeline sees of a detector.
pub trait Detector: Send + Sync {
    fn detect(&self, frame_index: u64, image: &Image) -> Result<Vec<Detection>, DetectError>;

    /// Whether `detect` looks at pixels at all.
    fn needs_pixels(&self) -> bool {
        true
    }
}

/// Frame-indexed canned detections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorScript {
    /// When set, frame indices are taken modulo this period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
    #[serde(default)]
    pub frames: BTreeMap<u64, Vec<Detection>>,
}

impl DetectorScript {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let s: DetectorScript = serde_json::from_str(text).map_err(|e| e.to_string())?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.period == Some(0) {
            return Err("period must be positive".into());
        }
        for (frame, dets) in &self.frames {
            for d in dets {
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(format!("frame {frame}: score {} outside [0, 1]", d.score));
                }
                let b = d.bbox;
                if b.xmin() < 0.0 || b.ymin() < 0.0 || b.xmax() > 1.0 || b.ymax() > 1.0 {
                    return Err(format!("frame {frame}: box is not normalized"));
                }
            }
        }
        Ok(())
    }
}

pub fn stub_detect(script: &DetectorScript, frame_index: u64) -> Vec<Detection> {
    let key = match script.period {
        Some(p) => frame_index % p,
        None => frame_index,
    };
    script.frames.get(&key).cloned().unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct ScriptedDetector {
    script: DetectorScript,
}

impl ScriptedDetector {
    pub fn new(script: DetectorScript) -> Self {
        Self { script }
    }
}

impl Detector for ScriptedDetector {
    fn detect(&self, frame_index: u64, _image: &Image) -> Result<Vec<Detection>, DetectError> {
        Ok(stub_detect(&self.script, frame_index))
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

/// Resize, forward, decode and suppress.
#[derive(Debug, Clone)]
pub struct NetDetector {
    model: SsdModel,
    variances: Variances,
    score_threshold: f64,
    nms: NmsConfig,
}

impl NetDetector {
    pub fn new(model: SsdModel, variances: Variances, score_threshold: f64, nms: NmsConfig) -> Self {
        Self {
            model,
            variances,
            score_threshold,
            nms,
        }
    }

    pub fn model(&self) -> &SsdModel {
        &self.model
    }
}

impl Detector for NetDetector {
    fn detect(&self, _frame_index: u64, image: &Image) -> Result<Vec<Detection>, DetectError> {
        let side = self.model.input_size();
        let input = image.resize(side, side);
        let raw = self.model.forward(&input)?;
        let dets = decode_detections(
            &raw,
            self.model.anchors(),
            self.variances,
            self.model.labels(),
            self.score_threshold,
        )
        .map_err(BackboneError::from)?;
        Ok(nms(&dets, self.nms))
    }
}

/// Sleeps before delegating; used to simulate a detector slower than the
/// frame rate.
#[derive(Debug, Clone)]
pub struct DelayedDetector<D> {
    inner: D,
    delay: Duration,
}

impl<D> DelayedDetector<D> {
    pub fn new(inner: D, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<D: Detector> Detector for DelayedDetector<D> {
    fn detect(&self, frame_index: u64, image: &Image) -> Result<Vec<Detection>, DetectError> {
        thread::sleep(self.delay);
        self.inner.detect(frame_index, image)
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&self, frame_index: u64, image: &Image) -> Result<Vec<Detection>, DetectError> {
        (**self).detect(frame_index, image)
    }

    fn needs_pixels(&self) -> bool {
        (**self).needs_pixels()
    }
}

impl<D: Detector + ?Sized> Detector for std::sync::Arc<D> {
    fn detect(&self, frame_index: u64, image: &Image) -> Result<Vec<Detection>, DetectError> {
        (**self).detect(frame_index, image)
    }

    fn needs_pixels(&self) -> bool {
        (**self).needs_pixels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor3 {
        let data = (0..h * w * c).map(|i| ((i * 37 % 101) as f32) / 50.0 - 1.0).collect();
        Tensor3::new(h, w, c, data).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let x = ramp(5, 4, 3);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let k = ConvWeights::new(1, 3, 3, w, vec![0.0; 3]).unwrap();
        assert_eq!(conv2d(&x, &k, 1).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_nine() {
        let x = Tensor3::new(6, 6, 1, vec![0.25; 36]).unwrap();
        let k = ConvWeights::new(3, 1, 1, vec![1.0; 9], vec![0.0]).unwrap();
        let y = conv2d(&x, &k, 1).unwrap();
        assert_eq!(y.at(2, 3, 0), 2.25);
        assert_eq!(y.at(0, 0, 0), 1.0);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = ramp(4, 4, 2);
        let k = ConvWeights::new(1, 3, 1, vec![0.0; 3], vec![0.0]).unwrap();
        assert!(matches!(conv2d(&x, &k, 1), Err(BackboneError::ChannelMismatch { .. })));
        let d = DepthwiseWeights::new(3, 3, vec![0.0; 27]).unwrap();
        assert!(matches!(
            depthwise_conv2d(&x, &d, 1),
            Err(BackboneError::ChannelMismatch { .. })
        ));
        let p = PointwiseWeights::new(3, 1, vec![0.0; 3], vec![0.0]).unwrap();
        assert!(matches!(pointwise_conv(&x, &p), Err(BackboneError::ChannelMismatch { .. })));
        assert!(ConvWeights::new(2, 1, 1, vec![0.0; 4], vec![0.0]).is_err());
    }

    #[test]
    fn depthwise_identity_and_stride() {
        let x = ramp(8, 8, 2);
        let mut w = vec![0.0; 18];
        w[4 * 2] = 1.0;
        w[4 * 2 + 1] = 1.0;
        let k = DepthwiseWeights::new(3, 2, w).unwrap();
        assert_eq!(depthwise_conv2d(&x, &k, 1).unwrap(), x);
        let y = depthwise_conv2d(&x, &k, 2).unwrap();
        assert_eq!((y.height(), y.width()), (4, 4));
    }

    #[test]
    fn pointwise_fixtures() {
        let x = ramp(3, 3, 2);
        let id = PointwiseWeights::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(pointwise_conv(&x, &id).unwrap(), x);
        let zero = PointwiseWeights::new(2, 3, vec![0.0; 6], vec![0.5; 3]).unwrap();
        assert!(pointwise_conv(&x, &zero).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relu_fixtures() {
        let pos = Tensor3::new(1, 2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let neg = Tensor3::new(1, 2, 1, vec![-1.0, -3.0]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let mixed = Tensor3::new(1, 4, 1, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(relu(&mixed).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn same_padding_shapes() {
        assert_eq!(same_padding(160, 3, 2), (80, 0));
        assert_eq!(same_padding(5, 3, 2), (3, 1));
        assert_eq!(same_padding(8, 3, 1), (8, 1));
    }

    fn default_spec() -> DefaultNetSpec {
        DefaultNetSpec {
            boxes_per_location: [4, 4],
            num_classes: 3,
        }
    }

    fn labels() -> Vec<String> {
        ["lion", "cheetah", "cat"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_net_matches_default_anchors() {
        let net = synthetic_network(default_spec(), 42);
        assert_eq!(net.head_shapes(160), vec![(10, 32), (5, 32)]);
        let model = SsdModel::new(net, AnchorConfig::default(), labels()).unwrap();
        let raw = model.forward(&Image::filled(160, 160, [0.5, 0.4, 0.3])).unwrap();
        assert_eq!(raw.len(), 500);
        assert_eq!(raw.num_classes(), 3);
        assert!(model.forward(&Image::filled(80, 80, [0.5; 3])).is_err());
    }

    #[test]
    fn layout_mismatch_rejected() {
        let net = synthetic_network(default_spec(), 1);
        let cfg = AnchorConfig {
            feature_map_sizes: vec![10, 4],
            ..Default::default()
        };
        assert!(matches!(
            SsdModel::new(net.clone(), cfg, labels()),
            Err(BackboneError::Layout(_))
        ));
        assert!(matches!(
            SsdModel::new(net, AnchorConfig::default(), vec!["lion".into()]),
            Err(BackboneError::Layout(_))
        ));
    }

    #[test]
    fn zero_weights_give_zero_predictions() {
        let net = synthetic_network(default_spec(), 3);
        let zeroed: Vec<Layer> = net
            .layers()
            .iter()
            .cloned()
            .map(|l| match l {
                Layer::Conv { stride, mut weights } => {
                    weights.weights.iter_mut().for_each(|v| *v = 0.0);
                    weights.bias.iter_mut().for_each(|v| *v = 0.0);
                    Layer::Conv { stride, weights }
                }
                Layer::Head(mut w) => {
                    w.weights.iter_mut().for_each(|v| *v = 0.0);
                    w.bias.iter_mut().for_each(|v| *v = 0.0);
                    Layer::Head(w)
                }
                Layer::Depthwise { stride, mut weights } => {
                    weights.weights.iter_mut().for_each(|v| *v = 0.0);
                    Layer::Depthwise { stride, weights }
                }
                Layer::Pointwise(mut p) => {
                    p.weights.iter_mut().for_each(|v| *v = 0.0);
                    p.bias.iter_mut().for_each(|v| *v = 0.0);
                    Layer::Pointwise(p)
                }
                Layer::Relu => Layer::Relu,
            })
            .collect();
        let model = SsdModel::new(Network::new(zeroed).unwrap(), AnchorConfig::default(), labels()).unwrap();
        let raw = model.forward(&Image::filled(160, 160, [0.9, 0.1, 0.5])).unwrap();
        assert!(raw.all_logits().iter().all(|&v| v == 0.0));
        assert!(raw.offsets().iter().all(|o| *o == BoxOffsets::default()));
    }

    #[test]
    fn head_weight_probe_hits_anchor_zero_tx() {
        // 1x1 trunk and head on a 4x4 input that is dark except pixel (0, 0):
        // a head weight can then only influence grid cell (0, 0).
        let trunk = ConvWeights::new(1, 3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![0.0; 2]).unwrap();
        let head = |w0: f32| {
            let mut w: Vec<f32> = (0..12).map(|i| 0.1 * i as f32 - 0.3).collect();
            w[0] = w0;
            ConvWeights::new(1, 2, 6, w, vec![0.01; 6]).unwrap()
        };
        let cfg = AnchorConfig {
            image_size: 4,
            feature_map_sizes: vec![4],
            aspect_ratios: crate::geometry::AspectRatios::Shared(vec![1.0]),
            s_min: 0.5,
            s_max: 0.5,
            add_extra_scale_box: false,
        };
        let model = |w0: f32| {
            let net = Network::new(vec![
                Layer::Conv {
                    stride: 1,
                    weights: trunk.clone(),
                },
                Layer::Relu,
                Layer::Head(head(w0)),
            ])
            .unwrap();
            SsdModel::new(net, cfg.clone(), vec!["lion".into()]).unwrap()
        };
        let mut data = vec![0.0; 48];
        data[..3].copy_from_slice(&[0.8, 0.6, 0.4]);
        let img = Image::new(4, 4, data).unwrap();
        let base = model(-0.3).forward(&img).unwrap();
        let probed = model(0.7).forward(&img).unwrap();
        assert_eq!(base.all_logits(), probed.all_logits());
        assert!((probed.offsets()[0].tx - base.offsets()[0].tx - 0.8).abs() < 1e-6);
        assert_eq!(base.offsets()[0].ty, probed.offsets()[0].ty);
        assert_eq!(&base.offsets()[1..], &probed.offsets()[1..]);
    }

    #[test]
    fn weights_roundtrip_and_guards() {
        let net = synthetic_network(default_spec(), 5);
        let bytes = net.to_bytes();
        assert_eq!(parse_weights(&bytes).unwrap(), net);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_weights(&bad), Err(WeightsError::BadMagic(_))));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(parse_weights(&v2), Err(WeightsError::UnsupportedVersion(2))));

        let empty = [b"SCRW".as_slice(), &1u32.to_le_bytes(), &0u32.to_le_bytes()].concat();
        assert!(matches!(parse_weights(&empty), Err(WeightsError::EmptyNetwork)));

        // Cut inside the first layer's weights.
        assert!(matches!(
            parse_weights(&bytes[..40]),
            Err(WeightsError::Truncated { layer: 0 })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(parse_weights(&long), Err(WeightsError::TrailingBytes(1))));
    }

    #[test]
    fn broken_channel_chain_rejected() {
        let layers = vec![
            Layer::Conv {
                stride: 1,
                weights: ConvWeights::new(1, 3, 4, vec![0.0; 12], vec![0.0; 4]).unwrap(),
            },
            Layer::Pointwise(PointwiseWeights::new(5, 2, vec![0.0; 10], vec![0.0; 2]).unwrap()),
            Layer::Head(ConvWeights::new(1, 2, 6, vec![0.0; 12], vec![0.0; 6]).unwrap()),
        ];
        assert!(matches!(
            Network::new(layers.clone()),
            Err(WeightsError::ChannelChain {
                layer: 1,
                expected: 4,
                found: 5
            })
        ));
        // Same failure through the file parser.
        let ok = Network { layers: layers.clone() };
        assert!(matches!(
            parse_weights(&ok.to_bytes()),
            Err(WeightsError::ChannelChain {
                layer: 1,
                expected: 4,
                found: 5
            })
        ));
    }

    #[test]
    fn stub_fixtures() {
        let lion = Detection {
            label: "lion".into(),
            score: 0.9,
            bbox: BoundingBox::new(0.1, 0.1, 0.5, 0.5).unwrap(),
        };
        let mut script = DetectorScript::default();
        script.frames.insert(3, vec![lion.clone()]);
        assert!(stub_detect(&script, 2).is_empty());
        assert_eq!(stub_detect(&script, 3), vec![lion.clone()]);
        assert_eq!(stub_detect(&script, 3), stub_detect(&script, 3));
        script.period = Some(4);
        assert_eq!(stub_detect(&script, 7), vec![lion]);
    }

    #[test]
    fn script_json() {
        let s = DetectorScript::from_json(r#"{"frames":{"0":[{"class":"lion","score":0.8,"box":[0.1,0.2,0.3,0.4]}]}}"#).unwrap();
        assert_eq!(s.frames[&0][0].label, "lion");
        assert!(DetectorScript::from_json(r#"{"frames":{"0":[{"class":"lion","score":1.8,"box":[0.1,0.2,0.3,0.4]}]}}"#).is_err());
    }

    #[test]
    fn resize_constant_image() {
        let img = Image::filled(7, 5, [0.25, 0.5, 0.75]);
        let r = img.resize(3, 9);
        assert_eq!((r.width(), r.height()), (3, 9));
        assert!(r.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
    }
}
