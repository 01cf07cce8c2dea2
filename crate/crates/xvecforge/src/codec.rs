//! Mapping of every model and data type onto the archive container.

use std::path::Path;

use xvecforge_core::autodiff::ParamStore;
use xvecforge_core::backend::{Backend, LdaTransform, PldaModel, Whitener};
use xvecforge_core::embedder::{EmbedderConfig, EmbedderModel};
use xvecforge_core::gmm::{BwStats, DiagGmm, StatsNormalization};
use xvecforge_core::ivector::TvModel;
use xvecforge_core::{FeatureMatrix, Tensor};

use crate::archive::{Archive, Value};
use crate::error::{Error, Result};

pub trait Codec: Sized {
    fn encode(&self) -> Archive;
    fn decode(archive: &Archive) -> Result<Self>;

    fn save(&self, path: &Path) -> Result<()> {
        self.encode().save(path)
    }

    fn load(path: &Path) -> Result<Self> {
        Self::decode(&Archive::load(path)?)
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.starts_with('.') || id.contains('/') || id.chars().any(char::is_whitespace) {
        return Err(Error::Invalid(format!("utterance id `{id}` must be nonempty, without whitespace or `/`, and not start with `.`")));
    }
    Ok(())
}

fn vector(archive: &Archive, name: &str) -> Result<Vec<f64>> {
    let t = archive.tensor(name)?;
    if t.rank() != 1 {
        return Err(Error::Format(format!("record `{name}` should be a vector")));
    }
    Ok(t.data().to_vec())
}

/// Per-utterance feature matrices sharing one frame timing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureArchive {
    pub utterances: Vec<(String, FeatureMatrix)>,
}

impl FeatureArchive {
    pub fn get(&self, id: &str) -> Option<&FeatureMatrix> {
        self.utterances.iter().find(|(u, _)| u == id).map(|(_, f)| f)
    }
}

const FRAME_TIMING: &str = ".frame_timing";

impl Codec for FeatureArchive {
    fn encode(&self) -> Archive {
        let mut a = Archive::new();
        let (shift, length) = self
            .utterances
            .first()
            .map(|(_, f)| (f.frame_shift, f.frame_length))
            .unwrap_or((xvecforge_core::features::DEFAULT_FRAME_SHIFT, xvecforge_core::features::DEFAULT_FRAME_LENGTH));
        a.push_vector(FRAME_TIMING, &[shift, length]);
        for (id, f) in &self.utterances {
            a.push_tensor(id.clone(), f.frames().clone());
        }
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        let timing = vector(archive, FRAME_TIMING)?;
        let [shift, length] = timing[..] else {
            return Err(Error::Format("frame timing needs shift and length".into()));
        };
        let mut utterances = Vec::new();
        for r in archive.records().iter().filter(|r| r.name != FRAME_TIMING) {
            let Value::F64(t) = &r.value else {
                return Err(Error::Format(format!("utterance `{}` is not a float matrix", r.name)));
            };
            utterances.push((r.name.clone(), FeatureMatrix::new(t.clone(), shift, length)?));
        }
        Ok(Self { utterances })
    }
}

impl FeatureArchive {
    /// Checks ids and that every utterance shares the first one's timing.
    pub fn validate(&self) -> Result<()> {
        let mut timing = None;
        for (id, f) in &self.utterances {
            check_id(id)?;
            let t = (f.frame_shift.to_bits(), f.frame_length.to_bits());
            if *timing.get_or_insert(t) != t {
                return Err(Error::Invalid(format!("utterance `{id}` has a different frame timing")));
            }
        }
        Ok(())
    }
}

impl Codec for DiagGmm {
    fn encode(&self) -> Archive {
        let (m, d) = (self.num_components(), self.dim());
        let mut a = Archive::new();
        a.push_vector("gmm.weights", self.weights());
        a.push_tensor("gmm.means", Tensor::new([m, d], self.means().to_vec()).expect("shape"));
        a.push_tensor("gmm.variances", Tensor::new([m, d], self.variances().to_vec()).expect("shape"));
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        let means = archive.tensor("gmm.means")?.data().to_vec();
        let variances = archive.tensor("gmm.variances")?.data().to_vec();
        Ok(DiagGmm::new(vector(archive, "gmm.weights")?, means, variances)?)
    }
}

/// Baum-Welch statistics keyed by utterance id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsArchive {
    pub utterances: Vec<(String, BwStats)>,
}

fn normalization_code(n: StatsNormalization) -> u64 {
    match n {
        StatsNormalization::FrameCount => 0,
        StatsNormalization::Occupancy => 1,
    }
}

impl Codec for StatsArchive {
    fn encode(&self) -> Archive {
        let mut a = Archive::new();
        for (id, s) in &self.utterances {
            a.push_vector(format!("{id}/occupancy"), s.occupancy());
            a.push_tensor(format!("{id}/first_order"), s.first_order_matrix());
            a.push_u64(
                format!("{id}/meta"),
                vec![s.frame_count() as u64, normalization_code(s.normalization()), s.ubm_fingerprint()],
            );
        }
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        let mut utterances = Vec::new();
        for r in archive.records() {
            let Some(id) = r.name.strip_suffix("/occupancy") else { continue };
            let occupancy = vector(archive, &r.name)?;
            let first = archive.tensor(&format!("{id}/first_order"))?.data().to_vec();
            let meta = archive.u64s(&format!("{id}/meta"))?;
            let [frames, norm, fingerprint] = meta[..] else {
                return Err(Error::Format(format!("statistics `{id}` have malformed metadata")));
            };
            let normalization = match norm {
                0 => StatsNormalization::FrameCount,
                1 => StatsNormalization::Occupancy,
                n => return Err(Error::Format(format!("unknown normalization code {n}"))),
            };
            utterances.push((id.to_string(), BwStats::from_parts(occupancy, first, frames as usize, normalization, fingerprint)?));
        }
        Ok(Self { utterances })
    }
}

impl Codec for TvModel {
    fn encode(&self) -> Archive {
        let mut a = Archive::new();
        a.push_tensor("tv.matrix", self.matrix());
        a.push_u64("tv.num_components", vec![self.num_components() as u64]);
        a.push_u64("tv.ubm_fingerprint", vec![self.ubm_fingerprint()]);
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        Ok(TvModel::from_matrix(
            archive.tensor("tv.matrix")?,
            archive.scalar_u64("tv.num_components")? as usize,
            archive.scalar_u64("tv.ubm_fingerprint")?,
        )?)
    }
}

const MODEL_CONFIG: &str = ".config";
const MODEL_TRAINABLE: &str = ".trainable";

impl Codec for EmbedderModel {
    fn encode(&self) -> Archive {
        let mut a = Archive::new();
        a.push_text(MODEL_CONFIG, &self.config().to_text());
        a.push_u64(MODEL_TRAINABLE, self.params().iter().map(|(_, p)| u64::from(p.trainable)).collect());
        for (_, p) in self.params().iter() {
            a.push_tensor(p.name.clone(), p.value.clone());
        }
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        let config = EmbedderConfig::from_text(archive.text(MODEL_CONFIG)?)?;
        let flags = archive.u64s(MODEL_TRAINABLE)?;
        let tensors: Vec<_> = archive.records().iter().filter(|r| !r.name.starts_with('.')).collect();
        if flags.len() != tensors.len() {
            return Err(Error::Format(format!("{} trainable flags for {} parameters", flags.len(), tensors.len())));
        }
        let mut store = ParamStore::new();
        for (r, &flag) in tensors.iter().zip(flags) {
            let Value::F64(t) = &r.value else {
                return Err(Error::Format(format!("parameter `{}` is not a float array", r.name)));
            };
            store.add(r.name.clone(), t.clone(), flag != 0)?;
        }
        Ok(EmbedderModel::from_parts(config, store)?)
    }
}

/// Fixed-length vectors (i-vectors or embeddings) keyed by utterance id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorArchive {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl VectorArchive {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.iter().find(|(u, _)| u == id).map(|(_, v)| v.as_slice())
    }

    pub fn index(&self) -> std::collections::HashMap<&str, &[f64]> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect()
    }
}

impl Codec for VectorArchive {
    fn encode(&self) -> Archive {
        let mut a = Archive::new();
        for (id, v) in &self.entries {
            a.push_vector(id.clone(), v);
        }
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        let entries = archive.records().iter().map(|r| Ok((r.name.clone(), vector(archive, &r.name)?))).collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

impl Codec for Backend {
    fn encode(&self) -> Archive {
        let mut a = Archive::new();
        a.push_vector("center", &self.center);
        a.push_tensor("lda.projection", self.lda.projection());
        a.push_vector("lda.mean", self.lda.mean());
        a.push_tensor("whiten.transform", self.whitener.transform());
        a.push_vector("whiten.mean", self.whitener.mean());
        a.push_vector("plda.mean", self.plda.mean());
        a.push_tensor("plda.between", self.plda.between());
        a.push_tensor("plda.within", self.plda.within());
        a
    }

    fn decode(archive: &Archive) -> Result<Self> {
        Ok(Backend {
            center: vector(archive, "center")?,
            lda: LdaTransform::from_parts(archive.tensor("lda.projection")?, &vector(archive, "lda.mean")?)?,
            whitener: Whitener::from_parts(archive.tensor("whiten.transform")?, &vector(archive, "whiten.mean")?)?,
            plda: PldaModel::new(&vector(archive, "plda.mean")?, archive.tensor("plda.between")?, archive.tensor("plda.within")?)?,
        })
    }
}

pub(crate) fn validate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    ids.into_iter().try_for_each(check_id)
}
