//! Stage-by-stage experiment pipeline over a working directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use xvecforge_core::backend::{compute_eer, compute_mindcf, Backend, ScoreSet, TrialSet};
use xvecforge_core::embedder::{build_model, train_embedder, EmbedderModel, SideInput, TrainingUtterance};
use xvecforge_core::features::{add_deltas, sliding_cmn, vad_mask};
use xvecforge_core::gmm::{accumulate_bw_stats, train_ubm, BwStats, DiagGmm};
use xvecforge_core::ivector::{train_total_variability, IvectorExtractor, TvModel};
use xvecforge_core::synth::{all_trials, generate_corpus, generate_trials, CorpusManifest, Split, UtteranceRecord};
use xvecforge_core::FeatureMatrix;

use crate::codec::{validate_ids, Codec, FeatureArchive, StatsArchive, VectorArchive};
use crate::config::{PipelineConfig, System};
use crate::error::{Error, Result};
use crate::mfcc::{compute_mfcc, num_frames, MfccConfig};
use crate::text::{
    format_manifest, format_scores, format_trials, parse_manifest, parse_scores, parse_trials, read_text, write_text,
    ConditionMetrics, MetricsReport,
};
use crate::wav::read_wav;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenCorpus,
    Features,
    TrainUbm,
    BwStats,
    TrainTv,
    ExtractIvec,
    TrainEmbedder,
    ExtractXvec,
    TrainBackend,
    Score,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::GenCorpus,
        Stage::Features,
        Stage::TrainUbm,
        Stage::BwStats,
        Stage::TrainTv,
        Stage::ExtractIvec,
        Stage::TrainEmbedder,
        Stage::ExtractXvec,
        Stage::TrainBackend,
        Stage::Score,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Features => "features",
            Stage::TrainUbm => "train-ubm",
            Stage::BwStats => "bw-stats",
            Stage::TrainTv => "train-tv",
            Stage::ExtractIvec => "extract-ivec",
            Stage::TrainEmbedder => "train-embedder",
            Stage::ExtractXvec => "extract-xvec",
            Stage::TrainBackend => "train-backend",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
        }
    }

    /// The stages a system needs, in order.
    pub fn plan(system: System) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| match s {
                Stage::TrainUbm | Stage::BwStats => system.needs_ubm(),
                Stage::TrainTv | Stage::ExtractIvec => system.needs_ivectors(),
                Stage::TrainEmbedder | Stage::ExtractXvec => system != System::Ivector,
                _ => true,
            })
            .collect()
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::Invalid(format!("unknown stage `{s}`")))
    }
}

/// File-system tag of a system name.
pub fn system_tag(system: System) -> String {
    system.name().to_ascii_lowercase().replace('*', "-wide").replace('+', "-")
}

/// Runs `f` over `items` on up to `threads` scoped threads; results keep
/// the input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|part| scope.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>())).collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.workdir.join(name)
    }

    fn tagged(&self, stem: &str, ext: &str) -> PathBuf {
        self.path(&format!("{stem}-{}.{ext}", system_tag(self.config.system)))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path("manifest.txt")
    }
    pub fn trials_path(&self) -> PathBuf {
        self.path("trials.txt")
    }
    pub fn raw_features_path(&self) -> PathBuf {
        self.path("feats-raw.xvfa")
    }
    pub fn embed_features_path(&self) -> PathBuf {
        self.path("feats-embed.xvfa")
    }
    pub fn ivec_features_path(&self) -> PathBuf {
        self.path("feats-ivec.xvfa")
    }
    pub fn ubm_path(&self) -> PathBuf {
        self.path("ubm.xvfa")
    }
    pub fn stats_path(&self) -> PathBuf {
        self.path("stats.xvfa")
    }
    pub fn tv_path(&self) -> PathBuf {
        self.path("tv.xvfa")
    }
    pub fn ivectors_path(&self) -> PathBuf {
        self.path("ivectors.xvfa")
    }
    pub fn model_path(&self) -> PathBuf {
        self.tagged("embedder", "xvfa")
    }
    pub fn training_log_path(&self) -> PathBuf {
        self.tagged("train", "log")
    }
    pub fn embeddings_path(&self) -> PathBuf {
        match self.config.system {
            System::Ivector => self.ivectors_path(),
            _ => self.tagged("embeddings", "xvfa"),
        }
    }
    pub fn backend_path(&self) -> PathBuf {
        self.tagged("backend", "xvfa")
    }
    pub fn scores_path(&self) -> PathBuf {
        self.tagged("scores", "txt")
    }
    pub fn report_path(&self) -> PathBuf {
        self.tagged("report", "txt")
    }

    fn require(&self, stage: Stage, path: PathBuf, what: &'static str, producer: Stage) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { stage: stage.name(), what, path, producer: producer.name() })
        }
    }

    fn manifest(&self, stage: Stage) -> Result<CorpusManifest> {
        let p = self.require(stage, self.manifest_path(), "the corpus manifest", Stage::GenCorpus)?;
        parse_manifest(&read_text(&p)?, &p.display().to_string())
    }

    fn trials(&self, stage: Stage) -> Result<TrialSet> {
        let p = self.require(stage, self.trials_path(), "the trial list", Stage::GenCorpus)?;
        parse_trials(&read_text(&p)?, &p.display().to_string())
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::plan(self.config.system) {
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.config.workdir).map_err(crate::error::io_err(&self.config.workdir))?;
        info!("stage {} ({})", stage.name(), self.config.system.name());
        match stage {
            Stage::GenCorpus => self.gen_corpus(),
            Stage::Features => self.features(),
            Stage::TrainUbm => self.train_ubm(),
            Stage::BwStats => self.bw_stats(),
            Stage::TrainTv => self.train_tv(),
            Stage::ExtractIvec => self.extract_ivec(),
            Stage::TrainEmbedder => self.train_embedder(),
            Stage::ExtractXvec => self.extract_xvec(),
            Stage::TrainBackend => self.train_backend(),
            Stage::Score => self.score(),
            Stage::Evaluate => self.evaluate().map(|_| ()),
        }
    }

    fn wav_entries(&self, list: &Path) -> Result<Vec<(UtteranceRecord, PathBuf)>> {
        let text = read_text(list)?;
        let origin = list.display().to_string();
        let base = list.parent().unwrap_or(Path::new("."));
        let mfcc = MfccConfig { num_ceps: self.config.corpus.dim, ..MfccConfig::default() };
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| Error::Parse { path: origin.clone(), line: i + 1, message };
            if f.len() != 4 {
                return Err(err(format!("expected `<utt> <spk> <split> <wav>`, found {} fields", f.len())));
            }
            let split = f[2].parse().map_err(|_| err(format!("unknown split `{}`", f[2])))?;
            let path = base.join(f[3]);
            let spec = hound::WavReader::open(&path)?;
            let (sr, n) = (f64::from(spec.spec().sample_rate), spec.duration() as usize);
            let window = (mfcc.frame_length * sr).round() as usize;
            let shift = (mfcc.frame_shift * sr).round() as usize;
            let frames = num_frames(n, window, shift);
            out.push((UtteranceRecord { id: f[0].into(), speaker: f[1].into(), frames, split }, path));
        }
        Ok(out)
    }

    fn write_trials_for(&self, manifest: &CorpusManifest) -> Result<()> {
        let trials = match self.config.num_target {
            Some(n) => {
                let nontarget = self.config.max_nontarget;
                generate_trials(manifest, n, nontarget, self.config.seed)?
            }
            None => all_trials(manifest, self.config.max_nontarget, self.config.seed)?,
        };
        write_text(&self.trials_path(), &format_trials(&trials))
    }

    fn gen_corpus(&self) -> Result<()> {
        if let Some(list) = &self.config.wav_list {
            let entries = self.wav_entries(list)?;
            let manifest = CorpusManifest { records: entries.into_iter().map(|(r, _)| r).collect(), seed: self.config.seed };
            validate_ids(manifest.records.iter().map(|r| r.id.as_str()))?;
            write_text(&self.manifest_path(), &format_manifest(&manifest))?;
            return self.write_trials_for(&manifest);
        }
        let corpus = generate_corpus(&self.config.corpus_config())?;
        write_text(&self.manifest_path(), &format_manifest(&corpus.manifest))?;
        let archive = FeatureArchive {
            utterances: corpus.manifest.records.iter().map(|r| r.id.clone()).zip(corpus.features).collect(),
        };
        archive.save(&self.raw_features_path())?;
        self.write_trials_for(&corpus.manifest)
    }

    /// Raw features: sampled ones for a synthetic corpus, MFCCs otherwise.
    fn raw_features(&self) -> Result<FeatureArchive> {
        match &self.config.wav_list {
            Some(list) => {
                let entries = self.wav_entries(list)?;
                let mfcc = MfccConfig { num_ceps: self.config.corpus.dim, ..MfccConfig::default() };
                let feats = parallel_map(&entries, self.config.threads, |(_, path)| compute_mfcc(&read_wav(path)?, &mfcc))?;
                let archive = FeatureArchive { utterances: entries.into_iter().map(|(r, _)| r.id).zip(feats).collect() };
                archive.save(&self.raw_features_path())?;
                Ok(archive)
            }
            None => {
                let p = self.require(Stage::Features, self.raw_features_path(), "raw features", Stage::GenCorpus)?;
                FeatureArchive::load(&p)
            }
        }
    }

    fn features(&self) -> Result<()> {
        let raw = self.raw_features()?;
        let cfg = &self.config;
        let processed = parallel_map(&raw.utterances, cfg.threads, |(id, f)| {
            let keep = vad_mask(f, &cfg.vad)?;
            if !keep.iter().any(|&k| k) {
                return Err(Error::Invalid(format!("utterance `{id}` has no speech frames")));
            }
            let embed = sliding_cmn(f, cfg.cmn_window)?.select(&keep)?;
            let ivec = sliding_cmn(&add_deltas(&f.leading_dims(cfg.ivector_ceps)?, 2)?, cfg.cmn_window)?.select(&keep)?;
            Ok((embed, ivec))
        })?;
        let ids: Vec<String> = raw.utterances.iter().map(|(id, _)| id.clone()).collect();
        let (embed, ivec): (Vec<_>, Vec<_>) = processed.into_iter().unzip();
        FeatureArchive { utterances: ids.iter().cloned().zip(embed).collect() }.save(&self.embed_features_path())?;
        FeatureArchive { utterances: ids.into_iter().zip(ivec).collect() }.save(&self.ivec_features_path())
    }

    fn ivec_features(&self, stage: Stage) -> Result<FeatureArchive> {
        FeatureArchive::load(&self.require(stage, self.ivec_features_path(), "i-vector features", Stage::Features)?)
    }

    fn by_split<'a>(manifest: &'a CorpusManifest, splits: &[Split]) -> Vec<&'a UtteranceRecord> {
        manifest.records.iter().filter(|r| splits.contains(&r.split)).collect()
    }

    fn train_ubm(&self) -> Result<()> {
        let manifest = self.manifest(Stage::TrainUbm)?;
        let feats = self.ivec_features(Stage::TrainUbm)?;
        let mut chosen = Self::by_split(&manifest, &[Split::Unlabeled]);
        if chosen.is_empty() {
            warn!("no unlabeled utterances; training the UBM on the training split");
            chosen = Self::by_split(&manifest, &[Split::Train]);
        }
        let data: Vec<FeatureMatrix> = chosen.iter().map(|r| lookup(&feats, &r.id).cloned()).collect::<Result<_>>()?;
        let fit = train_ubm(&data, &self.config.ubm_config())?;
        info!("UBM log-likelihood {:?}", fit.log_likelihoods.last());
        fit.gmm.save(&self.ubm_path())
    }

    fn bw_stats(&self) -> Result<()> {
        let ubm = DiagGmm::load(&self.require(Stage::BwStats, self.ubm_path(), "the UBM", Stage::TrainUbm)?)?;
        let feats = self.ivec_features(Stage::BwStats)?;
        let norm = self.config.stats_normalization;
        let stats = parallel_map(&feats.utterances, self.config.threads, |(_, f)| Ok(accumulate_bw_stats(&ubm, f, norm)?))?;
        StatsArchive { utterances: feats.utterances.iter().map(|(id, _)| id.clone()).zip(stats).collect() }.save(&self.stats_path())
    }

    fn stats(&self, stage: Stage) -> Result<StatsArchive> {
        StatsArchive::load(&self.require(stage, self.stats_path(), "Baum-Welch statistics", Stage::BwStats)?)
    }

    fn train_tv(&self) -> Result<()> {
        let manifest = self.manifest(Stage::TrainTv)?;
        let ubm = DiagGmm::load(&self.require(Stage::TrainTv, self.ubm_path(), "the UBM", Stage::TrainUbm)?)?;
        let stats = self.stats(Stage::TrainTv)?;
        let index: HashMap<&str, &BwStats> = stats.utterances.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let chosen = Self::by_split(&manifest, &[Split::Train, Split::Unlabeled]);
        let data: Vec<BwStats> = chosen
            .iter()
            .map(|r| index.get(r.id.as_str()).map(|s| (*s).clone()).ok_or_else(|| Error::Invalid(format!("no statistics for `{}`", r.id))))
            .collect::<Result<_>>()?;
        let fit = train_total_variability(&ubm, &data, &self.config.tv_config())?;
        info!("TV objective {:?}", fit.objectives.last());
        fit.model.save(&self.tv_path())
    }

    fn extract_ivec(&self) -> Result<()> {
        let ubm = DiagGmm::load(&self.require(Stage::ExtractIvec, self.ubm_path(), "the UBM", Stage::TrainUbm)?)?;
        let tv = TvModel::load(&self.require(Stage::ExtractIvec, self.tv_path(), "the TV matrix", Stage::TrainTv)?)?;
        let stats = self.stats(Stage::ExtractIvec)?;
        let extractor = IvectorExtractor::new(&tv, &ubm)?;
        let vecs = parallel_map(&stats.utterances, self.config.threads, |(_, s)| Ok(extractor.extract(s)?))?;
        VectorArchive { entries: stats.utterances.iter().map(|(id, _)| id.clone()).zip(vecs).collect() }.save(&self.ivectors_path())
    }

    /// Side inputs the current system needs, keyed by utterance id.
    fn side_inputs(&self, stage: Stage) -> Result<(Option<StatsArchive>, Option<VectorArchive>)> {
        let System::Embedder(p) = self.config.system else { return Ok((None, None)) };
        use xvecforge_core::embedder::PoolingVariant as V;
        match p.pooling() {
            V::BaumWelchAttention => Ok((Some(self.stats(stage)?), None)),
            V::IvectorAttention => {
                let p = self.require(stage, self.ivectors_path(), "i-vectors", Stage::ExtractIvec)?;
                Ok((None, Some(VectorArchive::load(&p)?)))
            }
            _ => Ok((None, None)),
        }
    }

    fn train_embedder(&self) -> Result<()> {
        let stage = Stage::TrainEmbedder;
        let manifest = self.manifest(stage)?;
        let feats = FeatureArchive::load(&self.require(stage, self.embed_features_path(), "network features", Stage::Features)?)?;
        let (stats, ivecs) = self.side_inputs(stage)?;
        let stats_index: HashMap<&str, &BwStats> =
            stats.iter().flat_map(|s| s.utterances.iter().map(|(k, v)| (k.as_str(), v))).collect();
        let ivec_index = ivecs.as_ref().map(|v| v.index()).unwrap_or_default();
        let train = Self::by_split(&manifest, &[Split::Train]);
        let speakers: BTreeMap<&str, usize> = {
            let names = manifest.speakers(Split::Train);
            names.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
        };
        let mut data = Vec::with_capacity(train.len());
        for r in &train {
            data.push(TrainingUtterance {
                features: lookup(&feats, &r.id)?,
                speaker: speakers[r.speaker.as_str()],
                side: SideInput { stats: stats_index.get(r.id.as_str()).copied(), ivector: ivec_index.get(r.id.as_str()).copied() },
            });
        }
        let config = self.config.embedder_config(speakers.len())?;
        let model = build_model(&config, self.config.seed)?;
        let (model, report) = train_embedder(model, &data, &self.config.train_config())?;
        let mut log = format!("initial_loss={:.6}\n", report.initial_loss);
        for (i, loss) in report.train_loss.iter().enumerate() {
            let valid = report.validation_loss.get(i).map_or(String::from("-"), |v| format!("{v:.6}"));
            let _ = writeln!(log, "epoch={i} train_loss={loss:.6} validation_loss={valid} learning_rate={}", report.learning_rates[i]);
        }
        write_text(&self.training_log_path(), &log)?;
        model.save(&self.model_path())
    }

    fn extract_xvec(&self) -> Result<()> {
        let stage = Stage::ExtractXvec;
        if self.config.system == System::Ivector {
            return Err(Error::Invalid("the i-vector system uses `extract-ivec` instead".into()));
        }
        let model = EmbedderModel::load(&self.require(stage, self.model_path(), "the trained network", Stage::TrainEmbedder)?)?;
        let feats = FeatureArchive::load(&self.require(stage, self.embed_features_path(), "network features", Stage::Features)?)?;
        let (stats, ivecs) = self.side_inputs(stage)?;
        let stats_index: HashMap<&str, &BwStats> =
            stats.iter().flat_map(|s| s.utterances.iter().map(|(k, v)| (k.as_str(), v))).collect();
        let ivec_index = ivecs.as_ref().map(|v| v.index()).unwrap_or_default();
        let vecs = parallel_map(&feats.utterances, self.config.threads, |(id, f)| {
            let side = SideInput { stats: stats_index.get(id.as_str()).copied(), ivector: ivec_index.get(id.as_str()).copied() };
            Ok(model.extract_embedding(f, side)?)
        })?;
        VectorArchive { entries: feats.utterances.iter().map(|(id, _)| id.clone()).zip(vecs).collect() }.save(&self.embeddings_path())
    }

    fn embeddings(&self, stage: Stage) -> Result<VectorArchive> {
        let producer = if self.config.system == System::Ivector { Stage::ExtractIvec } else { Stage::ExtractXvec };
        VectorArchive::load(&self.require(stage, self.embeddings_path(), "embeddings", producer)?)
    }

    fn train_backend(&self) -> Result<()> {
        let stage = Stage::TrainBackend;
        let manifest = self.manifest(stage)?;
        let emb = self.embeddings(stage)?;
        let index = emb.index();
        let get = |id: &str| index.get(id).map(|v| v.to_vec()).ok_or_else(|| Error::Invalid(format!("no embedding for `{id}`")));
        let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
        for spk in manifest.speakers(Split::Train) {
            groups.push(manifest.split(Split::Train).filter(|r| r.speaker == spk).map(|r| get(&r.id)).collect::<Result<_>>()?);
        }
        let mut unlabeled: Vec<Vec<f64>> = manifest.split(Split::Unlabeled).map(|r| get(&r.id)).collect::<Result<_>>()?;
        if unlabeled.is_empty() {
            warn!("no unlabeled utterances; centering and adapting on the training split");
            unlabeled = groups.iter().flatten().cloned().collect();
        }
        Backend::fit(&groups, &unlabeled, &self.config.backend)?.save(&self.backend_path())
    }

    fn score(&self) -> Result<()> {
        let stage = Stage::Score;
        let trials = self.trials(stage)?;
        let emb = self.embeddings(stage)?;
        let backend = Backend::load(&self.require(stage, self.backend_path(), "the back end", Stage::TrainBackend)?)?;
        let scorer = backend.plda.scorer()?;
        let index = emb.index();
        let mut processed: HashMap<&str, Vec<f64>> = HashMap::new();
        for t in &trials.trials {
            for id in [t.enroll.as_str(), t.test.as_str()] {
                if !processed.contains_key(id) {
                    let v = index.get(id).ok_or_else(|| Error::Invalid(format!("trial refers to unknown utterance `{id}`")))?;
                    processed.insert(id, backend.transform(v)?);
                }
            }
        }
        let scores = parallel_map(&trials.trials, self.config.threads, |t| {
            Ok(scorer.score(&processed[t.enroll.as_str()], &processed[t.test.as_str()])?)
        })?;
        write_text(&self.scores_path(), &format_scores(&ScoreSet::new(trials, scores)?))
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        let stage = Stage::Evaluate;
        let trials = self.trials(stage)?;
        let p = self.require(stage, self.scores_path(), "scores", Stage::Score)?;
        let scores = parse_scores(&read_text(&p)?, &p.display().to_string(), &trials)?;
        let (t, n) = scores.split();
        let report = MetricsReport {
            system: self.config.system.name().to_string(),
            conditions: vec![ConditionMetrics {
                condition: "pooled".into(),
                eer: compute_eer(&scores)?,
                min_dcf: compute_mindcf(&scores, &self.config.dcf)?,
                num_target: t.len(),
                num_nontarget: n.len(),
            }],
        };
        let text = report.format();
        write_text(&self.report_path(), &text)?;
        print!("{text}");
        Ok(report)
    }
}

fn lookup<'a>(feats: &'a FeatureArchive, id: &str) -> Result<&'a FeatureMatrix> {
    feats.get(id).ok_or_else(|| Error::Invalid(format!("no features for utterance `{id}`")))
}
