//! Flat `key = value` pipeline configuration with `#` comments.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use xvecforge_core::autodiff::AdamConfig;
use xvecforge_core::backend::{AdaptConfig, BackendConfig, DcfParams};
use xvecforge_core::embedder::{EmbedderConfig, PoolingVariant, Preset, Scale, TrainConfig};
use xvecforge_core::features::VadConfig;
use xvecforge_core::gmm::{StatsNormalization, UbmConfig};
use xvecforge_core::ivector::TvConfig;
use xvecforge_core::synth::CorpusConfig;

use crate::error::{Error, Result};
use crate::text::read_text;

/// The embedding extractor under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum System {
    Ivector,
    Embedder(Preset),
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ivector => "i-vector",
            Self::Embedder(p) => p.name(),
        }
    }

    /// Whether the system needs the GMM-UBM and Baum-Welch statistics.
    pub fn needs_ubm(self) -> bool {
        match self {
            Self::Ivector => true,
            Self::Embedder(p) => matches!(p.pooling(), PoolingVariant::BaumWelchAttention | PoolingVariant::IvectorAttention),
        }
    }

    pub fn needs_ivectors(self) -> bool {
        match self {
            Self::Ivector => true,
            Self::Embedder(p) => p.pooling() == PoolingVariant::IvectorAttention,
        }
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i-vector" | "ivector" => Ok(Self::Ivector),
            _ => Ok(Self::Embedder(s.parse()?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub system: System,
    pub scale: Scale,
    pub seed: u64,
    pub threads: usize,
    /// Optional list of `<utt-id> <spk-id> <split> <wav-path>` lines; without
    /// it the corpus is synthetic.
    pub wav_list: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub num_target: Option<usize>,
    pub max_nontarget: usize,
    pub cmn_window: f64,
    pub vad: VadConfig,
    pub ivector_ceps: usize,
    pub ubm: UbmConfig,
    pub stats_normalization: StatsNormalization,
    pub tv: TvConfig,
    pub embedder_overrides: Vec<(String, String)>,
    pub train: TrainConfig,
    pub backend: BackendConfig,
    pub dcf: DcfParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("work"),
            system: System::Embedder(Preset::Baseline),
            scale: Scale::Desk,
            seed: 0,
            threads: 1,
            wav_list: None,
            corpus: CorpusConfig::default(),
            num_target: None,
            max_nontarget: 2000,
            cmn_window: 3.0,
            vad: VadConfig::default(),
            ivector_ceps: 20,
            ubm: UbmConfig { num_components: 64, ..UbmConfig::default() },
            stats_normalization: StatsNormalization::default(),
            tv: TvConfig { rank: 100, ..TvConfig::default() },
            embedder_overrides: Vec::new(),
            train: TrainConfig {
                epochs: 30,
                chunk_frames: 100,
                adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
                ..TrainConfig::default()
            },
            backend: BackendConfig::default(),
            dcf: DcfParams::default(),
        }
    }
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

impl PipelineConfig {
    /// Paper-scale model sizes: 512-component UBM and 400-dim i-vectors.
    pub fn paper() -> Self {
        let mut c = Self { scale: Scale::Paper, ..Self::default() };
        c.ubm.num_components = 512;
        c.tv.rank = 400;
        c.train = TrainConfig { chunk_frames: 1000, ..TrainConfig::default() };
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "workdir" => self.workdir = PathBuf::from(value),
            "system" => self.system = value.parse().map_err(|e: Error| e.to_string())?,
            "scale" => {
                self.scale = match value {
                    "desk" => Scale::Desk,
                    "paper" => Scale::Paper,
                    _ => return Err(format!("unknown scale `{value}` (desk or paper)")),
                }
            }
            "seed" => self.seed = parse(value)?,
            "threads" => {
                self.threads = parse(value)?;
                if self.threads == 0 {
                    return Err("threads must be at least 1".into());
                }
            }
            "corpus.wav_list" => self.wav_list = Some(PathBuf::from(value)),
            "corpus.num_speakers" => self.corpus.num_speakers = parse(value)?,
            "corpus.utts_per_speaker" => self.corpus.utts_per_speaker = parse(value)?,
            "corpus.frames_per_utt" => self.corpus.frames_per_utt = parse(value)?,
            "corpus.length_jitter" => self.corpus.length_jitter = parse(value)?,
            "corpus.eval_speakers" => self.corpus.eval_speakers = parse(value)?,
            "corpus.enroll_per_speaker" => self.corpus.enroll_per_speaker = parse(value)?,
            "corpus.test_per_speaker" => self.corpus.test_per_speaker = parse(value)?,
            "corpus.unlabeled_speakers" => self.corpus.unlabeled_speakers = parse(value)?,
            "corpus.unlabeled_per_speaker" => self.corpus.unlabeled_per_speaker = parse(value)?,
            "corpus.dim" => self.corpus.dim = parse(value)?,
            "corpus.num_components" => self.corpus.num_components = parse(value)?,
            "corpus.speaker_rank" => self.corpus.speaker_rank = parse(value)?,
            "corpus.speaker_scale" => self.corpus.speaker_scale = parse(value)?,
            "corpus.session_scale" => self.corpus.session_scale = parse(value)?,
            "trials.num_target" => self.num_target = Some(parse(value)?),
            "trials.max_nontarget" => self.max_nontarget = parse(value)?,
            "features.cmn_window" => self.cmn_window = parse(value)?,
            "features.vad_offset" => self.vad.relative_offset = parse(value)?,
            "features.vad_floor" => self.vad.absolute_floor = parse(value)?,
            "features.ivector_ceps" => self.ivector_ceps = parse(value)?,
            "ubm.components" => self.ubm.num_components = parse(value)?,
            "ubm.iterations" => self.ubm.iterations = parse(value)?,
            "ubm.variance_floor" => self.ubm.variance_floor_ratio = parse(value)?,
            "stats.normalization" => {
                self.stats_normalization = match value {
                    "frames" => StatsNormalization::FrameCount,
                    "occupancy" => StatsNormalization::Occupancy,
                    _ => return Err(format!("unknown normalization `{value}` (frames or occupancy)")),
                }
            }
            "tv.rank" => self.tv.rank = parse(value)?,
            "tv.iterations" => self.tv.iterations = parse(value)?,
            "train.epochs" => self.train.epochs = parse(value)?,
            "train.batch_size" => self.train.batch_size = parse(value)?,
            "train.chunk_frames" => self.train.chunk_frames = parse(value)?,
            "train.learning_rate" => self.train.adam.learning_rate = parse(value)?,
            "train.weight_decay" => self.train.adam.weight_decay = parse(value)?,
            "train.lr_decay" => self.train.lr_decay = parse(value)?,
            "train.patience" => self.train.patience = parse(value)?,
            "train.min_learning_rate" => self.train.min_learning_rate = parse(value)?,
            "train.validation_per_speaker" => self.train.validation_per_speaker = parse(value)?,
            "backend.lda_dim" => self.backend.lda_dim = parse(value)?,
            "backend.plda_iterations" => self.backend.plda_iterations = parse(value)?,
            "backend.adapt_alpha" => self.backend.adapt = AdaptConfig { alpha: parse(value)?, ..self.backend.adapt },
            "backend.within_share" => self.backend.adapt = AdaptConfig { within_share: parse(value)?, ..self.backend.adapt },
            "dcf.p_targets" => {
                self.dcf.p_targets = value.split(',').map(|v| parse(v.trim())).collect::<std::result::Result<_, _>>()?;
            }
            "dcf.c_miss" => self.dcf.c_miss = parse(value)?,
            "dcf.c_fa" => self.dcf.c_fa = parse(value)?,
            _ => match key.strip_prefix("embedder.") {
                Some(k) => {
                    let mut probe = EmbedderConfig::preset(Preset::Baseline, Scale::Desk);
                    if let Err(e) = probe.apply_override(k, value) {
                        if matches!(e, xvecforge_core::Error::UnknownParameter(_)) {
                            return Err(e.to_string());
                        }
                    }
                    self.embedder_overrides.push((k.to_string(), value.to_string()));
                }
                None => return Err(format!("unknown key `{key}`")),
            },
        }
        Ok(())
    }

    /// Parses config text. The `scale` key, if present, selects the defaults
    /// that the other keys then override.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_error = |message: String| Error::Parse { path: origin.to_string(), line: i + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| parse_error("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(parse_error("empty key or value".into()));
            }
            entries.push((i + 1, k, v));
        }
        let mut config = match entries.iter().rev().find(|(_, k, _)| *k == "scale") {
            Some((_, _, "paper")) => Self::paper(),
            _ => Self::default(),
        };
        for (line, k, v) in entries {
            config.set(k, v).map_err(|message| Error::Parse { path: origin.to_string(), line, message })?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    /// The network configuration: the system preset at this scale, input
    /// dimension from the corpus, then the `embedder.*` overrides.
    pub fn embedder_config(&self, num_speakers: usize) -> Result<EmbedderConfig> {
        let System::Embedder(preset) = self.system else {
            return Err(Error::Invalid("the i-vector system has no embedding network".into()));
        };
        let mut c = EmbedderConfig::preset(preset, self.scale);
        c.input_dim = self.corpus.dim;
        c.num_speakers = num_speakers;
        c.pooling.stats_components = self.ubm.num_components;
        c.pooling.stats_dim = self.ivector_ceps * 3;
        c.pooling.ivector_dim = self.tv.rank;
        for (k, v) in &self.embedder_overrides {
            c.apply_override(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn ubm_config(&self) -> UbmConfig {
        UbmConfig { seed: self.seed, ..self.ubm }
    }

    pub fn tv_config(&self) -> TvConfig {
        TvConfig { seed: self.seed, ..self.tv }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig { seed: self.seed, ..self.corpus }
    }
}
