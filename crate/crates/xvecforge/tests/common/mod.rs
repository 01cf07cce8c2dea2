#![allow(dead_code)]

use xvecforge::codec::{FeatureArchive, StatsArchive, VectorArchive};
use xvecforge_core::backend::{Backend, BackendConfig};
use xvecforge_core::embedder::{build_model, EmbedderConfig, EmbedderModel, Preset, Scale};
use xvecforge_core::gmm::{accumulate_bw_stats, train_ubm, DiagGmm, StatsNormalization, UbmConfig};
use xvecforge_core::ivector::{train_total_variability, IvectorExtractor, TvConfig, TvModel};
use xvecforge_core::rng;
use xvecforge_core::synth::{generate_corpus, CorpusConfig};

pub struct Artifacts {
    pub features: FeatureArchive,
    pub gmm: DiagGmm,
    pub stats: Vec<StatsArchive>,
    pub tv: TvModel,
    pub ivectors: VectorArchive,
    pub models: Vec<EmbedderModel>,
    pub backend: Backend,
}

pub const COMPONENTS: usize = 4;
pub const RANK: usize = 5;

pub fn small_corpus() -> CorpusConfig {
    CorpusConfig {
        num_speakers: 4,
        utts_per_speaker: 3,
        frames_per_utt: 60,
        eval_speakers: 2,
        enroll_per_speaker: 1,
        test_per_speaker: 2,
        unlabeled_speakers: 2,
        unlabeled_per_speaker: 2,
        seed: 5,
        ..CorpusConfig::default()
    }
}

pub fn model_config(preset: Preset) -> EmbedderConfig {
    let mut c = EmbedderConfig::preset(preset, Scale::Desk);
    c.input_dim = 23;
    c.pooling.stats_components = COMPONENTS;
    c.pooling.stats_dim = 23;
    c.pooling.ivector_dim = RANK;
    c.num_speakers = 4;
    c
}

pub fn artifacts() -> Artifacts {
    let corpus = generate_corpus(&small_corpus()).unwrap();
    let ids: Vec<String> = corpus.manifest.records.iter().map(|r| r.id.clone()).collect();
    let features = FeatureArchive { utterances: ids.iter().cloned().zip(corpus.features.iter().cloned()).collect() };
    let gmm = train_ubm(&corpus.features, &UbmConfig { num_components: COMPONENTS, iterations: 3, variance_floor_ratio: 1e-3, seed: 1 })
        .unwrap()
        .gmm;
    let stats: Vec<StatsArchive> = [StatsNormalization::FrameCount, StatsNormalization::Occupancy]
        .into_iter()
        .map(|norm| StatsArchive {
            utterances: features.utterances.iter().map(|(id, f)| (id.clone(), accumulate_bw_stats(&gmm, f, norm).unwrap())).collect(),
        })
        .collect();
    let all: Vec<_> = stats[0].utterances.iter().map(|(_, s)| s.clone()).collect();
    let tv = train_total_variability(&gmm, &all, &TvConfig { rank: RANK, iterations: 2, seed: 3 }).unwrap().model;
    let extractor = IvectorExtractor::new(&tv, &gmm).unwrap();
    let ivectors =
        VectorArchive { entries: stats[0].utterances.iter().map(|(id, s)| (id.clone(), extractor.extract(s).unwrap())).collect() };
    let models = Preset::ALL.iter().enumerate().map(|(i, &p)| build_model(&model_config(p), i as u64).unwrap()).collect();
    let mut r = rng::seeded(17);
    let by_speaker: Vec<Vec<Vec<f64>>> = (0..6)
        .map(|_| {
            let centre: Vec<f64> = (0..8).map(|_| 2.0 * rng::normal(&mut r)).collect();
            (0..4).map(|_| centre.iter().map(|c| c + rng::normal(&mut r)).collect()).collect()
        })
        .collect();
    let unlabeled: Vec<Vec<f64>> = (0..30).map(|_| (0..8).map(|_| 2.0 * rng::normal(&mut r)).collect()).collect();
    let backend = Backend::fit(&by_speaker, &unlabeled, &BackendConfig { lda_dim: 4, plda_iterations: 3, ..BackendConfig::default() }).unwrap();
    Artifacts { features, gmm, stats, tv, ivectors, models, backend }
}
