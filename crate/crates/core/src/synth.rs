//! Deterministic synthetic speaker corpora sampled directly in cepstral
//! feature space, trial-list generation, and a small test waveform.
//!
//! A shared base GMM plays the role of the speech population. Each speaker
//! shifts the component means by a low-rank speaker factor, and each session
//! adds a channel offset common to all frames. Coefficient 0 behaves like log
//! energy: one low-energy component stands in for silence and carries no
//! speaker information.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::backend::{Trial, TrialLabel, TrialSet};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::DiagGmm;
use crate::rng::{self, Prng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Enroll,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Enroll => "enroll",
            Self::Test => "test",
            Self::Unlabeled => "unlabeled",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "enroll" => Ok(Self::Enroll),
            "test" => Ok(Self::Test),
            "unlabeled" => Ok(Self::Unlabeled),
            _ => Err(Error::InvalidArgument(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub frames: usize,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
    pub seed: u64,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Distinct speakers of a split in order of first appearance.
    pub fn speakers(&self, split: Split) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in self.split(split) {
            if !out.contains(&r.speaker.as_str()) {
                out.push(&r.speaker);
            }
        }
        out
    }
}

/// A speaker's GMM: the base model with shifted component means.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub factor: Vec<f64>,
    pub gmm: DiagGmm,
    pub session_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusConfig {
    /// Training speakers.
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    /// Nominal utterance length; actual lengths vary by `length_jitter`.
    pub frames_per_utt: usize,
    /// Relative length variation, in `[0, 1)`.
    pub length_jitter: f64,
    /// Held-out evaluation speakers, each with enrollment and test sessions.
    pub eval_speakers: usize,
    pub enroll_per_speaker: usize,
    pub test_per_speaker: usize,
    /// Further held-out speakers whose labels are withheld.
    pub unlabeled_speakers: usize,
    pub unlabeled_per_speaker: usize,
    pub dim: usize,
    pub num_components: usize,
    pub speaker_rank: usize,
    /// Standard deviation of the speaker mean shift per coordinate.
    pub speaker_scale: f64,
    /// Standard deviation of the per-session channel offset.
    pub session_scale: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers: 20,
            utts_per_speaker: 20,
            frames_per_utt: 200,
            length_jitter: 0.2,
            eval_speakers: 10,
            enroll_per_speaker: 2,
            test_per_speaker: 4,
            unlabeled_speakers: 20,
            unlabeled_per_speaker: 4,
            dim: 23,
            num_components: 8,
            speaker_rank: 8,
            speaker_scale: 1.0,
            session_scale: 0.3,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_speakers < 2 {
            return bad("a corpus needs at least two training speakers");
        }
        if self.utts_per_speaker == 0 || self.frames_per_utt == 0 {
            return bad("utterance count and length must be positive");
        }
        if !(0.0..1.0).contains(&self.length_jitter) {
            return bad("length jitter must lie in [0, 1)");
        }
        if self.eval_speakers > 0 && (self.enroll_per_speaker == 0 || self.test_per_speaker == 0) {
            return bad("evaluation speakers need enrollment and test sessions");
        }
        if self.unlabeled_speakers > 0 && self.unlabeled_per_speaker == 0 {
            return bad("unlabeled speakers need sessions");
        }
        if self.dim == 0 || self.num_components < 2 || self.speaker_rank == 0 {
            return bad("dimension, rank and component count must be positive (at least two components)");
        }
        if !(self.speaker_scale >= 0.0 && self.session_scale >= 0.0) {
            return bad("variability scales must be nonnegative");
        }
        Ok(())
    }
}

/// Generated corpus: features in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub base: DiagGmm,
    pub speakers: Vec<SpeakerProfile>,
    pub manifest: CorpusManifest,
    pub features: Vec<FeatureMatrix>,
}

const SILENCE_ENERGY: f64 = -8.0;
const SILENCE_WEIGHT: f64 = 0.15;
const STREAM_BASE: u64 = 0;
const STREAM_SPEAKER: u64 = 1 << 32;
const STREAM_UTTERANCE: u64 = 2 << 32;

/// The speaker-independent model; component 0 is silence.
pub fn base_model(config: &CorpusConfig) -> Result<DiagGmm> {
    let mut r = rng::derived(config.seed, STREAM_BASE);
    let (m, d) = (config.num_components, config.dim);
    let mut weights: Vec<f64> = (1..m).map(|_| r.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= (1.0 - SILENCE_WEIGHT) / total);
    weights.insert(0, SILENCE_WEIGHT);
    let mut means = Vec::with_capacity(m * d);
    let mut variances = Vec::with_capacity(m * d);
    for c in 0..m {
        for k in 0..d {
            let mean = if c == 0 {
                if k == 0 { SILENCE_ENERGY } else { 0.0 }
            } else {
                2.0 * rng::normal(&mut r)
            };
            means.push(mean);
            variances.push(if c == 0 { 0.25 } else { r.random_range(0.5..1.5) });
        }
    }
    DiagGmm::new(weights, means, variances)
}

fn speaker_profile(config: &CorpusConfig, base: &DiagGmm, loading: &[f64], index: u64, id: String) -> Result<SpeakerProfile> {
    let mut r = rng::derived(config.seed, STREAM_SPEAKER + index);
    let rank = config.speaker_rank;
    let factor: Vec<f64> = (0..rank).map(|_| rng::normal(&mut r)).collect();
    let d = config.dim;
    let mut means = base.means().to_vec();
    // silence (component 0) is speaker independent
    for (i, mean) in means.iter_mut().enumerate().skip(d) {
        let row = &loading[i * rank..(i + 1) * rank];
        *mean += config.speaker_scale * row.iter().zip(&factor).map(|(a, b)| a * b).sum::<f64>();
    }
    let gmm = DiagGmm::new(base.weights().to_vec(), means, base.variances().to_vec())?;
    Ok(SpeakerProfile { id, factor, gmm, session_scale: config.session_scale })
}

/// Samples one session of a speaker.
pub fn sample_utterance(profile: &SpeakerProfile, frames: usize, rng: &mut Prng) -> Result<FeatureMatrix> {
    let gmm = &profile.gmm;
    let d = gmm.dim();
    let offset: Vec<f64> = (0..d).map(|_| profile.session_scale * rng::normal(rng)).collect();
    let mut cumulative = Vec::with_capacity(gmm.num_components());
    let mut acc = 0.0;
    for w in gmm.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let mut data = Vec::with_capacity(frames * d);
    for _ in 0..frames {
        let u: f64 = rng.random::<f64>() * acc;
        let c = cumulative.iter().position(|&v| u < v).unwrap_or(cumulative.len() - 1);
        let (mean, var) = (gmm.mean(c), gmm.variance(c));
        for k in 0..d {
            data.push(mean[k] + offset[k] + var[k].sqrt() * rng::normal(rng));
        }
    }
    FeatureMatrix::from_rows(frames, d, data)
}

/// Generates every split of the corpus. Speakers and utterances draw from
/// their own derived streams, so any utterance can be regenerated alone.
pub fn generate_corpus(config: &CorpusConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let base = base_model(config)?;
    let (m, d, rank) = (config.num_components, config.dim, config.speaker_rank);
    let mut lr = rng::derived(config.seed, STREAM_BASE + 1);
    let scale = 1.0 / (rank as f64).sqrt();
    let loading: Vec<f64> = (0..m * d * rank).map(|_| scale * rng::normal(&mut lr)).collect();

    let groups = [
        (Split::Train, "spk", config.num_speakers, vec![(Split::Train, config.utts_per_speaker)]),
        (
            Split::Enroll,
            "eval",
            config.eval_speakers,
            vec![(Split::Enroll, config.enroll_per_speaker), (Split::Test, config.test_per_speaker)],
        ),
        (Split::Unlabeled, "unl", config.unlabeled_speakers, vec![(Split::Unlabeled, config.unlabeled_per_speaker)]),
    ];
    let mut speakers = Vec::new();
    let mut manifest = CorpusManifest { records: Vec::new(), seed: config.seed };
    let mut features = Vec::new();
    for (_, prefix, count, sessions) in &groups {
        for s in 0..*count {
            let index = speakers.len() as u64;
            let profile = speaker_profile(config, &base, &loading, index, format!("{prefix}{s:04}"))?;
            let mut u = 0usize;
            for &(split, n) in sessions {
                for _ in 0..n {
                    let uid = features.len() as u64;
                    let mut r = rng::derived(config.seed, STREAM_UTTERANCE + uid);
                    let jitter = config.length_jitter * config.frames_per_utt as f64;
                    let delta = if jitter >= 1.0 { r.random_range(-jitter..=jitter).round() as i64 } else { 0 };
                    let frames = (config.frames_per_utt as i64 + delta).max(1) as usize;
                    features.push(sample_utterance(&profile, frames, &mut r)?);
                    manifest.records.push(UtteranceRecord {
                        id: format!("{}-{u:03}", profile.id),
                        speaker: profile.id.clone(),
                        frames,
                        split,
                    });
                    u += 1;
                }
            }
            speakers.push(profile);
        }
    }
    Ok(SynthCorpus { base, speakers, manifest, features })
}

/// Samples enrollment/test pairs without replacement: `num_target`
/// same-speaker and `num_nontarget` different-speaker trials, targets first.
pub fn generate_trials(manifest: &CorpusManifest, num_target: usize, num_nontarget: usize, seed: u64) -> Result<TrialSet> {
    let enroll: Vec<&UtteranceRecord> = manifest.split(Split::Enroll).collect();
    let test: Vec<&UtteranceRecord> = manifest.split(Split::Test).collect();
    if enroll.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("trials need nonempty enroll and test splits".into()));
    }
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for e in &enroll {
        for t in &test {
            if e.id == t.id {
                continue;
            }
            if e.speaker == t.speaker {
                targets.push((*e, *t));
            } else {
                nontargets.push((*e, *t));
            }
        }
    }
    if num_target > targets.len() || num_nontarget > nontargets.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {num_target} target / {num_nontarget} nontarget trials but only {} / {} pairs exist",
            targets.len(),
            nontargets.len()
        )));
    }
    let mut r = rng::seeded(seed);
    targets.shuffle(&mut r);
    nontargets.shuffle(&mut r);
    let make = |(e, t): (&UtteranceRecord, &UtteranceRecord), label| Trial { enroll: e.id.clone(), test: t.id.clone(), label };
    let mut trials: Vec<Trial> = targets.into_iter().take(num_target).map(|p| make(p, TrialLabel::Target)).collect();
    trials.extend(nontargets.into_iter().take(num_nontarget).map(|p| make(p, TrialLabel::Nontarget)));
    Ok(TrialSet { trials })
}

/// Every same-speaker pair plus as many different-speaker pairs as the
/// corpus allows, capped at `max_nontarget`.
pub fn all_trials(manifest: &CorpusManifest, max_nontarget: usize, seed: u64) -> Result<TrialSet> {
    let enroll: Vec<&UtteranceRecord> = manifest.split(Split::Enroll).collect();
    let test: Vec<&UtteranceRecord> = manifest.split(Split::Test).collect();
    let same = enroll.iter().map(|e| test.iter().filter(|t| t.speaker == e.speaker && t.id != e.id).count()).sum();
    let diff = enroll.iter().map(|e| test.iter().filter(|t| t.speaker != e.speaker).count()).sum::<usize>();
    generate_trials(manifest, same, diff.min(max_nontarget), seed)
}

/// A smoke-test signal: a sine tone in noise bursts separated by near
/// silence, alternating every `burst` seconds.
pub fn tone_bursts(seconds: f64, sample_rate: f64, burst: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let n = (seconds * sample_rate).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let loud = ((t / burst) as usize) % 2 == 0;
            let noise = rng::normal(&mut r);
            if loud {
                0.5 * (2.0 * core::f64::consts::PI * 440.0 * t).sin() + 0.05 * noise
            } else {
                1e-4 * noise
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig {
            num_speakers: 3,
            utts_per_speaker: 2,
            frames_per_utt: 40,
            eval_speakers: 3,
            enroll_per_speaker: 1,
            test_per_speaker: 2,
            unlabeled_speakers: 2,
            unlabeled_per_speaker: 1,
            dim: 5,
            seed,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small(3)).unwrap();
        let b = generate_corpus(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(4)).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn manifest_layout() {
        let c = generate_corpus(&small(1)).unwrap();
        let m = &c.manifest;
        assert_eq!(m.split(Split::Train).count(), 6);
        assert_eq!(m.split(Split::Enroll).count(), 3);
        assert_eq!(m.split(Split::Test).count(), 6);
        assert_eq!(m.split(Split::Unlabeled).count(), 2);
        assert_eq!(m.speakers(Split::Train).len(), 3);
        let mut ids: Vec<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), m.records.len());
        for (r, f) in m.records.iter().zip(&c.features) {
            assert_eq!(r.frames, f.num_frames());
            assert!((32..=48).contains(&r.frames));
        }
    }

    #[test]
    fn profiles_share_weights_and_variances() {
        let c = generate_corpus(&small(2)).unwrap();
        for p in &c.speakers {
            assert_eq!(p.gmm.weights(), c.base.weights());
            assert_eq!(p.gmm.variances(), c.base.variances());
            assert_eq!(p.gmm.mean(0), c.base.mean(0));
        }
    }

    #[test]
    fn frame_means_match_expectation_without_session_noise() {
        let cfg = CorpusConfig { session_scale: 0.0, dim: 6, ..small(5) };
        let base = base_model(&cfg).unwrap();
        let mut lr = rng::derived(cfg.seed, STREAM_BASE + 1);
        let rank = cfg.speaker_rank;
        let loading: Vec<f64> =
            (0..cfg.num_components * cfg.dim * rank).map(|_| rng::normal(&mut lr) / (rank as f64).sqrt()).collect();
        let p = speaker_profile(&cfg, &base, &loading, 0, "s".into()).unwrap();
        let g = &p.gmm;
        let d = g.dim();
        let expect: Vec<f64> = (0..d).map(|k| (0..g.num_components()).map(|c| g.weights()[c] * g.mean(c)[k]).sum()).collect();
        let var: Vec<f64> = (0..d)
            .map(|k| {
                let second: f64 =
                    (0..g.num_components()).map(|c| g.weights()[c] * (g.variance(c)[k] + g.mean(c)[k].powi(2))).sum();
                second - expect[k] * expect[k]
            })
            .collect();
        let t = 5000;
        for stream in 0..2 {
            let mut r = rng::derived(99, stream);
            let u = sample_utterance(&p, t, &mut r).unwrap();
            for k in 0..d {
                let mean = (0..t).map(|i| u.frame(i)[k]).sum::<f64>() / t as f64;
                assert!((mean - expect[k]).abs() <= 3.0 * (var[k] / t as f64).sqrt(), "dim {k}");
            }
        }
    }

    #[test]
    fn speakers_are_further_apart_than_sessions() {
        let cfg = CorpusConfig {
            num_speakers: 100,
            utts_per_speaker: 2,
            frames_per_utt: 500,
            eval_speakers: 0,
            unlabeled_speakers: 0,
            dim: 10,
            seed: 7,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let means: Vec<Vec<f64>> = c
            .features
            .iter()
            .map(|f| (0..f.dim()).map(|k| (0..f.num_frames()).map(|t| f.frame(t)[k]).sum::<f64>() / f.num_frames() as f64).collect())
            .collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let intra: f64 = (0..100).map(|s| dist(&means[2 * s], &means[2 * s + 1])).sum::<f64>() / 100.0;
        let inter: f64 = (0..100).map(|s| dist(&means[2 * s], &means[(2 * s + 2) % 200])).sum::<f64>() / 100.0;
        assert!(inter > 1.2 * intra, "{inter} vs {intra}");
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(generate_corpus(&CorpusConfig { num_speakers: 1, ..small(0) }).is_err());
        assert!(generate_corpus(&CorpusConfig { frames_per_utt: 0, ..small(0) }).is_err());
        assert!(generate_corpus(&CorpusConfig { num_components: 1, ..small(0) }).is_err());
    }

    #[test]
    fn trials_honor_counts_and_labels() {
        let c = generate_corpus(&small(8)).unwrap();
        let m = &c.manifest;
        let speaker_of = |id: &str| m.records.iter().find(|r| r.id == id).unwrap().speaker.clone();
        let set = generate_trials(m, 6, 9, 1).unwrap();
        assert_eq!(set.trials.iter().filter(|t| t.label == TrialLabel::Target).count(), 6);
        assert_eq!(set.trials.iter().filter(|t| t.label == TrialLabel::Nontarget).count(), 9);
        for t in &set.trials {
            assert_ne!(t.enroll, t.test);
            assert_eq!(t.label == TrialLabel::Target, speaker_of(&t.enroll) == speaker_of(&t.test));
        }
        let mut pairs: Vec<(String, String)> = set.trials.iter().map(|t| (t.enroll.clone(), t.test.clone())).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 15);
        let only = generate_trials(m, 4, 0, 2).unwrap();
        assert!(only.trials.iter().all(|t| t.label == TrialLabel::Target));
        assert_eq!(generate_trials(m, 4, 0, 2).unwrap(), only);
        assert!(generate_trials(m, 7, 0, 1).is_err());
        assert!(generate_trials(m, 0, 13, 1).is_err());
        assert_eq!(all_trials(m, 1000, 0).unwrap().trials.len(), 18);
    }

    #[test]
    fn tone_bursts_alternate() {
        let w = tone_bursts(1.0, 16000.0, 0.25, 0);
        assert_eq!(w.len(), 16000);
        let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        assert!(rms(&w[..4000]) > 100.0 * rms(&w[4000..8000]));
    }
}
