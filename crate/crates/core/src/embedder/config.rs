use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Tdnn,
    Mscnn,
}

/// One frame-level layer. An `Mscnn` layer splits its `out_channels` into
/// `num_filter_sets` equal blocks; block `k` (from 1) uses dilation
/// `k * dilation`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub out_channels: usize,
    pub kernel_width: usize,
    pub dilation: usize,
    pub num_filter_sets: usize,
    /// Depthwise temporal filtering followed by a pointwise projection.
    pub separable: bool,
}

impl LayerSpec {
    pub fn tdnn(out_channels: usize, kernel_width: usize, dilation: usize) -> Self {
        Self { kind: LayerKind::Tdnn, out_channels, kernel_width, dilation, num_filter_sets: 1, separable: false }
    }

    pub fn mscnn(out_channels: usize, kernel_width: usize, dilation: usize, num_filter_sets: usize, separable: bool) -> Self {
        Self { kind: LayerKind::Mscnn, out_channels, kernel_width, dilation, num_filter_sets, separable }
    }

    /// Channels per filter set (`C / K`).
    pub fn block_size(&self) -> usize {
        self.out_channels / self.num_filter_sets
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.dilation == 0 || self.kernel_width % 2 == 0 || self.num_filter_sets == 0 {
            return Err(Error::InvalidArgument(format!("invalid layer {self:?}")));
        }
        if self.kind == LayerKind::Tdnn && (self.num_filter_sets != 1 || self.separable) {
            return Err(Error::InvalidArgument("a tdnn layer has one non-separable filter set".into()));
        }
        if self.out_channels % self.num_filter_sets != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} channels are not divisible into {} filter sets",
                self.out_channels, self.num_filter_sets
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingVariant {
    Stats,
    SelfAttention,
    IvectorAttention,
    BaumWelchAttention,
}

impl PoolingVariant {
    fn name(self) -> &'static str {
        match self {
            Self::Stats => "stats",
            Self::SelfAttention => "sa",
            Self::IvectorAttention => "ia",
            Self::BaumWelchAttention => "ba",
        }
    }
}

impl FromStr for PoolingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stats" => Ok(Self::Stats),
            "sa" => Ok(Self::SelfAttention),
            "ia" => Ok(Self::IvectorAttention),
            "ba" => Ok(Self::BaumWelchAttention),
            _ => Err(Error::InvalidArgument(format!("unknown pooling variant `{s}`"))),
        }
    }
}

/// Pooling layer; only the fields of the selected variant are meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolingSpec {
    pub variant: PoolingVariant,
    /// Hidden size `N_h` of the self-attention scorer.
    pub attention_hidden: usize,
    /// Number of trainable key rows appended to the statistics keys.
    pub num_keys: usize,
    /// Key and query dimension.
    pub key_dim: usize,
    /// Hidden size of the statistics transform.
    pub stats_hidden: usize,
    /// UBM component count and feature dimension of the statistics.
    pub stats_components: usize,
    pub stats_dim: usize,
    /// Dimension of the i-vectors fed to the i-vector attention.
    pub ivector_dim: usize,
}

impl PoolingSpec {
    pub fn stats() -> Self {
        Self {
            variant: PoolingVariant::Stats,
            attention_hidden: 0,
            num_keys: 0,
            key_dim: 0,
            stats_hidden: 0,
            stats_components: 0,
            stats_dim: 0,
            ivector_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.variant {
            PoolingVariant::Stats => true,
            PoolingVariant::SelfAttention => self.attention_hidden > 0,
            PoolingVariant::IvectorAttention => self.ivector_dim > 0,
            PoolingVariant::BaumWelchAttention => {
                self.key_dim > 0 && self.stats_hidden > 0 && self.stats_components > 0 && self.stats_dim > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("incomplete {} pooling settings", self.variant.name())))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Reduced channel counts that train in minutes on one core.
    Desk,
    /// Layer sizes as published.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Baseline,
    BaselineWide,
    SelfAttention,
    IvectorAttention,
    BaumWelchAttention,
    MultiScale1,
    MultiScale2,
    MultiScale3,
    MultiScale3Wide,
    BaumWelchMultiScale3,
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::Baseline,
        Preset::BaselineWide,
        Preset::SelfAttention,
        Preset::IvectorAttention,
        Preset::BaumWelchAttention,
        Preset::MultiScale1,
        Preset::MultiScale2,
        Preset::MultiScale3,
        Preset::MultiScale3Wide,
        Preset::BaumWelchMultiScale3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::BaselineWide => "x-vector*",
            Preset::SelfAttention => "SA",
            Preset::IvectorAttention => "IA",
            Preset::BaumWelchAttention => "BA",
            Preset::MultiScale1 => "MS-1L",
            Preset::MultiScale2 => "MS-2L",
            Preset::MultiScale3 => "MS-3L",
            Preset::MultiScale3Wide => "MS-3L*",
            Preset::BaumWelchMultiScale3 => "BA+MS-3L",
        }
    }

    pub fn pooling(self) -> PoolingVariant {
        match self {
            Preset::SelfAttention => PoolingVariant::SelfAttention,
            Preset::IvectorAttention => PoolingVariant::IvectorAttention,
            Preset::BaumWelchAttention | Preset::BaumWelchMultiScale3 => PoolingVariant::BaumWelchAttention,
            _ => PoolingVariant::Stats,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let found = match lower.as_str() {
            "x-vector" | "xvector" => Some(Preset::Baseline),
            _ => Preset::ALL.into_iter().find(|p| p.name().to_ascii_lowercase() == lower),
        };
        found.ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Complete network description.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderConfig {
    pub input_dim: usize,
    pub frame_layers: Vec<LayerSpec>,
    pub pooling: PoolingSpec,
    /// Sizes of the utterance-level layers; the first one is the embedding.
    pub utterance_dims: Vec<usize>,
    pub num_speakers: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

const BASE_KERNELS: [usize; 5] = [5, 3, 3, 1, 1];
const BASE_DILATIONS: [usize; 5] = [1, 2, 3, 1, 1];

impl EmbedderConfig {
    /// A preset at the given scale. Side-input sizes (UBM components,
    /// statistics dimension, i-vector dimension) and the speaker count are
    /// placeholders to be set for the data at hand.
    pub fn preset(preset: Preset, scale: Scale) -> Self {
        let (narrow, wide, last, utt, attn) = match scale {
            Scale::Desk => (64, 96, 192, 64, 64),
            Scale::Paper => (512, 756, 1500, 512, 512),
        };
        let (ms_layers, k, ms_channels) = match preset {
            Preset::MultiScale1 => (1, 2, narrow),
            Preset::MultiScale2 => (2, 2, narrow),
            Preset::MultiScale3 | Preset::BaumWelchMultiScale3 => (3, 2, narrow),
            Preset::MultiScale3Wide => (3, 3, wide),
            Preset::BaselineWide => (0, 1, wide),
            _ => (0, 1, narrow),
        };
        let frame_layers = (0..5)
            .map(|i| {
                let channels = match i {
                    0..=2 => ms_channels,
                    3 => narrow,
                    _ => last,
                };
                if i < ms_layers {
                    LayerSpec::mscnn(channels, BASE_KERNELS[i], BASE_DILATIONS[i], k, true)
                } else {
                    LayerSpec::tdnn(channels, BASE_KERNELS[i], BASE_DILATIONS[i])
                }
            })
            .collect();
        let mut pooling = PoolingSpec::stats();
        pooling.variant = preset.pooling();
        match pooling.variant {
            PoolingVariant::SelfAttention => pooling.attention_hidden = attn,
            PoolingVariant::IvectorAttention => pooling.ivector_dim = match scale {
                Scale::Desk => 100,
                Scale::Paper => 400,
            },
            PoolingVariant::BaumWelchAttention => {
                pooling.num_keys = 32;
                pooling.key_dim = attn;
                pooling.stats_hidden = attn;
                pooling.stats_components = match scale {
                    Scale::Desk => 64,
                    Scale::Paper => 512,
                };
                pooling.stats_dim = 60;
            }
            PoolingVariant::Stats => {}
        }
        Self {
            input_dim: 23,
            frame_layers,
            pooling,
            utterance_dims: vec![utt, utt],
            num_speakers: 2,
            dropout: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.95,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.utterance_dims[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.frame_layers.len() < 2 || self.utterance_dims.is_empty() {
            return Err(Error::InvalidArgument("a model needs an input, two frame layers and an utterance layer".into()));
        }
        if self.utterance_dims.contains(&0) {
            return Err(Error::InvalidArgument("utterance layer sizes must be positive".into()));
        }
        if self.num_speakers < 2 {
            return Err(Error::InvalidArgument(format!("{} speakers; at least 2 are needed", self.num_speakers)));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidArgument("dropout and batch-norm momentum must lie in [0, 1), epsilon > 0".into()));
        }
        for l in &self.frame_layers {
            l.validate()?;
        }
        self.pooling.validate()
    }

    /// Applies one `key = value` setting.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "input_dim" => self.input_dim = parse(key, value)?,
            "num_speakers" => self.num_speakers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "bn_eps" => self.bn_eps = parse(key, value)?,
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            "utterance_dims" => self.utterance_dims = parse_list(key, value)?,
            "channels" => {
                let channels: Vec<usize> = parse_list(key, value)?;
                if channels.len() != self.frame_layers.len() {
                    return Err(Error::InvalidArgument(format!(
                        "`channels` lists {} sizes for {} frame layers",
                        channels.len(),
                        self.frame_layers.len()
                    )));
                }
                for (l, c) in self.frame_layers.iter_mut().zip(channels) {
                    l.out_channels = c;
                }
            }
            "layer" => {
                self.frame_layers.clear();
                return self.push_layer(value);
            }
            "add_layer" => return self.push_layer(value),
            "pooling" => self.pooling.variant = value.parse()?,
            "attention_hidden" => self.pooling.attention_hidden = parse(key, value)?,
            "num_keys" => self.pooling.num_keys = parse(key, value)?,
            "key_dim" => self.pooling.key_dim = parse(key, value)?,
            "stats_hidden" => self.pooling.stats_hidden = parse(key, value)?,
            "stats_components" => self.pooling.stats_components = parse(key, value)?,
            "stats_dim" => self.pooling.stats_dim = parse(key, value)?,
            "ivector_dim" => self.pooling.ivector_dim = parse(key, value)?,
            other => return Err(Error::UnknownParameter(other.to_string())),
        }
        Ok(())
    }

    /// Layer syntax: `tdnn <C> <width> <dilation>` or
    /// `mscnn <C> <width> <dilation> <K> <separable|full>`.
    fn push_layer(&mut self, value: &str) -> Result<()> {
        let parts: Vec<&str> = value.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("cannot parse layer `{value}`"));
        let num = |i: usize| -> Result<usize> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let layer = match (parts.first().copied(), parts.len()) {
            (Some("tdnn"), 4) => LayerSpec::tdnn(num(1)?, num(2)?, num(3)?),
            (Some("mscnn"), 6) => {
                let separable = match parts[5] {
                    "separable" => true,
                    "full" => false,
                    _ => return Err(bad()),
                };
                LayerSpec::mscnn(num(1)?, num(2)?, num(3)?, num(4)?, separable)
            }
            _ => return Err(bad()),
        };
        self.frame_layers.push(layer);
        Ok(())
    }

    /// Serializes to `key = value` lines that [`EmbedderConfig::from_text`]
    /// reads back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.pooling;
        let _ = writeln!(s, "input_dim = {}", self.input_dim);
        for (i, l) in self.frame_layers.iter().enumerate() {
            let key = if i == 0 { "layer" } else { "add_layer" };
            let _ = match l.kind {
                LayerKind::Tdnn => writeln!(s, "{key} = tdnn {} {} {}", l.out_channels, l.kernel_width, l.dilation),
                LayerKind::Mscnn => writeln!(
                    s,
                    "{key} = mscnn {} {} {} {} {}",
                    l.out_channels,
                    l.kernel_width,
                    l.dilation,
                    l.num_filter_sets,
                    if l.separable { "separable" } else { "full" }
                ),
            };
        }
        let _ = writeln!(s, "pooling = {}", p.variant.name());
        let _ = writeln!(s, "attention_hidden = {}", p.attention_hidden);
        let _ = writeln!(s, "num_keys = {}", p.num_keys);
        let _ = writeln!(s, "key_dim = {}", p.key_dim);
        let _ = writeln!(s, "stats_hidden = {}", p.stats_hidden);
        let _ = writeln!(s, "stats_components = {}", p.stats_components);
        let _ = writeln!(s, "stats_dim = {}", p.stats_dim);
        let _ = writeln!(s, "ivector_dim = {}", p.ivector_dim);
        let dims: Vec<String> = self.utterance_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "utterance_dims = {}", dims.join(","));
        let _ = writeln!(s, "num_speakers = {}", self.num_speakers);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "bn_eps = {}", self.bn_eps);
        let _ = writeln!(s, "bn_momentum = {}", self.bn_momentum);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::preset(Preset::Baseline, Scale::Desk);
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected `key = value`, got `{line}`")))?;
            config.apply_override(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}
