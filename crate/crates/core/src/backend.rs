//! Embedding post-processing (centering, LDA, whitening, length
//! normalization), two-covariance PLDA with unsupervised adaptation, and
//! EER / minDCF evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use log::warn;
use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{shape_err, Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    match *t.shape() {
        [r, c] => Ok(DMatrix::from_row_slice(r, c, t.data())),
        ref s => Err(shape_err("backend", format!("expected a matrix, got {s:?}"))),
    }
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn([m.nrows(), m.ncols()], |i| m[(i / m.ncols(), i % m.ncols())])
}

fn vectors(rows: &[Vec<f64>], dim: usize, op: &'static str) -> Result<Vec<DVector<f64>>> {
    rows.iter()
        .map(|r| {
            if r.len() != dim {
                return Err(shape_err(op, format!("vector of dim {} where {dim} is expected", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(op));
            }
            Ok(DVector::from_column_slice(r))
        })
        .collect()
}

fn first_dim(groups: &[Vec<Vec<f64>>], op: &'static str) -> Result<usize> {
    groups.iter().flat_map(|g| g.first()).map(|v| v.len()).next().ok_or(Error::Empty(op))
}

/// Linear discriminant projection with its centering mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaTransform {
    projection: DMatrix<f64>,
    mean: DVector<f64>,
}

impl LdaTransform {
    /// `projection` is `d_out x d_in`.
    pub fn from_parts(projection: &Tensor, mean: &[f64]) -> Result<Self> {
        let projection = to_matrix(projection)?;
        if projection.ncols() != mean.len() || projection.nrows() == 0 {
            return Err(shape_err("lda", format!("projection {:?} with mean of {}", projection.shape(), mean.len())));
        }
        Ok(Self { projection, mean: DVector::from_column_slice(mean) })
    }

    pub fn projection(&self) -> Tensor {
        to_tensor(&self.projection)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(shape_err("lda", format!("input of dim {} for a {}-dim transform", x.len(), self.input_dim())));
        }
        let y = &self.projection * (DVector::from_column_slice(x) - &self.mean);
        Ok(y.iter().copied().collect())
    }
}

/// Fits LDA on embeddings grouped by speaker. Output rows are ordered by
/// decreasing between/within scatter ratio and scaled to unit within-class
/// variance.
pub fn fit_lda(by_speaker: &[Vec<Vec<f64>>], d_out: usize) -> Result<LdaTransform> {
    const OP: &str = "fit_lda";
    let dim = first_dim(by_speaker, OP)?;
    let classes: Vec<Vec<DVector<f64>>> =
        by_speaker.iter().map(|g| vectors(g, dim, OP)).collect::<Result<_>>()?;
    if classes.len() < 2 || classes.iter().any(|c| c.len() < 2) {
        return Err(Error::InvalidArgument("LDA needs at least two speakers with two embeddings each".into()));
    }
    if d_out == 0 || d_out > classes.len() - 1 || d_out > dim {
        return Err(Error::InvalidArgument(format!(
            "LDA dimension {d_out} outside 1..={}",
            (classes.len() - 1).min(dim)
        )));
    }
    let all: Vec<DVector<f64>> = classes.iter().flatten().cloned().collect();
    let n = all.len() as f64;
    let mean = linalg::mean(&all);
    let mut within = DMatrix::zeros(dim, dim);
    let mut between = DMatrix::zeros(dim, dim);
    for c in &classes {
        let mu = linalg::mean(c);
        within += linalg::covariance(c, &mu) * c.len() as f64;
        let diff = &mu - &mean;
        between.ger(c.len() as f64, &diff, &diff, 1.0);
    }
    within /= n;
    between /= n;
    let chol = match linalg::cholesky(&within, OP) {
        Ok(c) => c,
        Err(_) => {
            warn!("within-class scatter is singular; adding a ridge");
            let ridge = 1e-6 * (within.trace() / dim as f64).max(1e-12);
            linalg::cholesky(&(within + DMatrix::identity(dim, dim) * ridge), OP)?
        }
    };
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or(Error::Numerical(OP))?;
    let m = &l_inv * between * l_inv.transpose();
    let (_, u) = linalg::sym_eigen_desc(&m);
    // columns of L^-T U are the generalized eigenvectors with V' Sw V = I
    let v = l_inv.transpose() * u.columns(0, d_out);
    Ok(LdaTransform { projection: v.transpose(), mean })
}

/// Centering followed by a symmetric (ZCA) whitening transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Whitener {
    mean: DVector<f64>,
    transform: DMatrix<f64>,
}

impl Whitener {
    pub fn identity(dim: usize) -> Self {
        Self { mean: DVector::zeros(dim), transform: DMatrix::identity(dim, dim) }
    }

    pub fn from_parts(transform: &Tensor, mean: &[f64]) -> Result<Self> {
        let transform = to_matrix(transform)?;
        if transform.nrows() != mean.len() || transform.ncols() != mean.len() {
            return Err(shape_err("whitener", format!("transform {:?} with mean of {}", transform.shape(), mean.len())));
        }
        Ok(Self { mean: DVector::from_column_slice(mean), transform })
    }

    pub fn transform(&self) -> Tensor {
        to_tensor(&self.transform)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(shape_err("whiten", format!("input of dim {} for a {}-dim whitener", x.len(), self.dim())));
        }
        let y = &self.transform * (DVector::from_column_slice(x) - &self.mean);
        Ok(y.iter().copied().collect())
    }
}

/// Fits `Sigma^{-1/2}` on a centering set. Eigenvalues below `1e-10` of
/// the largest are floored.
pub fn fit_whitener(data: &[Vec<f64>]) -> Result<Whitener> {
    const OP: &str = "fit_whitener";
    let dim = data.first().map(|v| v.len()).ok_or(Error::Empty(OP))?;
    let rows = vectors(data, dim, OP)?;
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("whitening needs at least two vectors".into()));
    }
    if rows.len() <= dim {
        warn!("whitening {dim}-dim data from only {} vectors", rows.len());
    }
    let mean = linalg::mean(&rows);
    let cov = linalg::covariance(&rows, &mean);
    let (values, vecs) = linalg::sym_eigen_desc(&cov);
    let floor = values[0].max(0.0) * 1e-10;
    if !(values[0] > 0.0) {
        return Err(Error::Numerical(OP));
    }
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(dim, values.iter().map(|&v| 1.0 / v.max(floor).sqrt())));
    let transform = &vecs * scale * vecs.transpose();
    Ok(Whitener { mean, transform })
}

/// Scales to unit Euclidean norm.
pub fn length_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("length_normalize"));
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite("length_normalize"));
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

pub fn whiten_and_length_norm(x: &[f64], whitener: &Whitener) -> Result<Vec<f64>> {
    length_normalize(&whitener.apply(x)?)
}

/// Two-covariance PLDA: `x = mean + y + e`, `y ~ N(0, between)`,
/// `e ~ N(0, within)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    mean: DVector<f64>,
    between: DMatrix<f64>,
    within: DMatrix<f64>,
}

impl PldaModel {
    pub fn new(mean: &[f64], between: &Tensor, within: &Tensor) -> Result<Self> {
        let between = to_matrix(between)?;
        let within = to_matrix(within)?;
        let d = mean.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(shape_err("plda", format!("covariances {:?}/{:?} for dim {d}", between.shape(), within.shape())));
        }
        linalg::cholesky(&within, "plda: within-class covariance must be positive definite")?;
        Ok(Self { mean: DVector::from_column_slice(mean), between, within })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn between(&self) -> Tensor {
        to_tensor(&self.between)
    }

    pub fn within(&self) -> Tensor {
        to_tensor(&self.within)
    }

    /// `between + within`.
    pub fn total(&self) -> Tensor {
        to_tensor(&(&self.between + &self.within))
    }

    /// Precomputes the quadratic forms of the verification log-likelihood
    /// ratio.
    pub fn scorer(&self) -> Result<PldaScorer> {
        const OP: &str = "plda_scorer";
        let total = &self.between + &self.within;
        let t_chol = linalg::cholesky(&total, OP)?;
        let t_inv = t_chol.inverse();
        let schur = &total - &self.between * &t_inv * &self.between;
        let s_chol = linalg::cholesky(&schur, OP)?;
        let a = s_chol.inverse();
        let mut q = &t_inv - &a;
        linalg::symmetrize(&mut q);
        let mut p = &t_inv * &self.between * &a;
        linalg::symmetrize(&mut p);
        let constant = 0.5 * linalg::log_det_chol(&t_chol) - 0.5 * linalg::log_det_chol(&s_chol);
        Ok(PldaScorer { mean: self.mean.clone(), q, p, constant })
    }
}

/// Precomputed PLDA verification scorer.
#[derive(Clone, Debug)]
pub struct PldaScorer {
    mean: DVector<f64>,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    constant: f64,
}

impl PldaScorer {
    /// Same-speaker versus different-speaker log-likelihood ratio.
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        let d = self.mean.len();
        if enroll.len() != d || test.len() != d {
            return Err(shape_err("score_plda", format!("inputs of dim {}/{} for a {d}-dim model", enroll.len(), test.len())));
        }
        let a = DVector::from_column_slice(enroll) - &self.mean;
        let b = DVector::from_column_slice(test) - &self.mean;
        let s = 0.5 * (a.dot(&(&self.q * &a)) + b.dot(&(&self.q * &b))) + a.dot(&(&self.p * &b)) + self.constant;
        if !s.is_finite() {
            return Err(Error::NonFinite("score_plda"));
        }
        Ok(s)
    }
}

pub fn score_plda(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    model.scorer()?.score(enroll, test)
}

/// A trained PLDA model with the average per-vector log-likelihood before
/// the first EM iteration and after each one.
#[derive(Clone, Debug)]
pub struct PldaTraining {
    pub model: PldaModel,
    pub log_likelihoods: Vec<f64>,
}

struct SpeakerStats {
    n: usize,
    mean: DVector<f64>,
    /// Scatter about the speaker mean.
    scatter: DMatrix<f64>,
}

/// Posterior of a speaker variable: covariance `B (B + W/n)^-1 (W/n)` and
/// mean `B (B + W/n)^-1 xbar`. Neither needs `B` to be invertible.
fn speaker_posterior(between: &DMatrix<f64>, within: &DMatrix<f64>, s: &SpeakerStats) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let wn = within / s.n as f64;
    let chol = linalg::cholesky(&(between + &wn), "plda_posterior")?;
    // gain = B (B + W/n)^-1 = ((B + W/n)^-1 B)'
    let gain = chol.solve(between).transpose();
    let mean = &gain * &s.mean;
    let mut cov = &gain * &wn;
    linalg::symmetrize(&mut cov);
    Ok((mean, cov))
}

fn plda_log_likelihood(between: &DMatrix<f64>, within: &DMatrix<f64>, speakers: &[SpeakerStats]) -> Result<f64> {
    let d = within.nrows() as f64;
    let w_chol = linalg::cholesky(within, "plda_log_likelihood")?;
    let w_logdet = linalg::log_det_chol(&w_chol);
    let w_inv = w_chol.inverse();
    let mut total = 0.0;
    let mut count = 0usize;
    for s in speakers {
        let n = s.n as f64;
        let marginal = linalg::cholesky(&(between + within / n), "plda_log_likelihood")?;
        let quad = s.mean.dot(&marginal.solve(&s.mean));
        total += -0.5 * (d * LOG_2PI + linalg::log_det_chol(&marginal) + quad);
        let trace = (&w_inv * &s.scatter).trace();
        total += -0.5 * ((n - 1.0) * (d * LOG_2PI + w_logdet) + d * n.ln() + trace);
        count += s.n;
    }
    Ok(total / count as f64)
}

/// EM training of a two-covariance PLDA model on embeddings grouped by
/// speaker. Speakers with a single embedding are skipped.
pub fn train_plda(by_speaker: &[Vec<Vec<f64>>], iterations: usize) -> Result<PldaTraining> {
    const OP: &str = "train_plda";
    let dim = first_dim(by_speaker, OP)?;
    let mut groups = Vec::new();
    let mut skipped = 0usize;
    for g in by_speaker {
        if g.len() < 2 {
            skipped += 1;
            continue;
        }
        groups.push(vectors(g, dim, OP)?);
    }
    if skipped > 0 {
        warn!("PLDA training skips {skipped} speaker(s) with fewer than two embeddings");
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("PLDA needs at least two speakers with two embeddings each".into()));
    }
    let all: Vec<DVector<f64>> = groups.iter().flatten().cloned().collect();
    let mean = linalg::mean(&all);
    let speakers: Vec<SpeakerStats> = groups
        .iter()
        .map(|g| {
            let mu = linalg::mean(g);
            SpeakerStats { n: g.len(), scatter: linalg::covariance(g, &mu) * g.len() as f64, mean: mu - &mean }
        })
        .collect();
    let total_n = all.len() as f64;

    // closed-form start: pooled within scatter, and speaker-mean scatter
    // corrected for within-class noise, projected onto the PSD cone
    let mut within = DMatrix::zeros(dim, dim);
    let mut mean_scatter = DMatrix::zeros(dim, dim);
    let mut inv_n = 0.0;
    for s in &speakers {
        within += &s.scatter;
        mean_scatter.ger(1.0, &s.mean, &s.mean, 1.0);
        inv_n += 1.0 / s.n as f64;
    }
    within /= total_n - speakers.len() as f64;
    mean_scatter /= speakers.len() as f64;
    inv_n /= speakers.len() as f64;
    if linalg::cholesky(&within, OP).is_err() {
        warn!("within-class scatter is singular; adding a ridge");
        let ridge = 1e-6 * (within.trace() / dim as f64).max(1e-12);
        within += DMatrix::identity(dim, dim) * ridge;
    }
    let mut between = psd_part(&(mean_scatter - &within * inv_n));

    let mut history = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        history.push(plda_log_likelihood(&between, &within, &speakers)?);
        let mut new_between = DMatrix::zeros(dim, dim);
        let mut new_within = DMatrix::zeros(dim, dim);
        for s in &speakers {
            let (m, c) = speaker_posterior(&between, &within, s)?;
            new_between += &c;
            new_between.ger(1.0, &m, &m, 1.0);
            // sum_j (x_j - m)(x_j - m)' + n C, with x_j - m = (x_j - xbar) + (xbar - m)
            let offset = &s.mean - &m;
            new_within += &s.scatter + &c * s.n as f64;
            new_within.ger(s.n as f64, &offset, &offset, 1.0);
        }
        between = new_between / speakers.len() as f64;
        within = new_within / total_n;
        linalg::symmetrize(&mut between);
        linalg::symmetrize(&mut within);
    }
    history.push(plda_log_likelihood(&between, &within, &speakers)?);
    Ok(PldaTraining { model: PldaModel { mean, between, within }, log_likelihoods: history })
}

fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vecs) = linalg::sym_eigen_desc(m);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|v| v.max(0.0))));
    let mut out = &vecs * d * vecs.transpose();
    linalg::symmetrize(&mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    /// Interpolation weight of the unlabeled covariance, in `[0, 1]`.
    pub alpha: f64,
    /// Share of the excess variance given to the within-class covariance;
    /// the rest goes to the between-class covariance.
    pub within_share: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { alpha: 1.0, within_share: 0.75 }
    }
}

/// Unsupervised adaptation: the target covariance
/// `(1 - alpha) T + alpha C` (with `T` the model total covariance and `C`
/// the unlabeled covariance about the model mean) is compared with `T` in
/// the coordinates where `T` is the identity, and variance in excess of `T`
/// is split between the within- and between-class covariances.
pub fn adapt_plda(model: &PldaModel, unlabeled: &[Vec<f64>], config: &AdaptConfig) -> Result<PldaModel> {
    const OP: &str = "adapt_plda";
    if !(0.0..=1.0).contains(&config.alpha) || !(0.0..=1.0).contains(&config.within_share) {
        return Err(Error::InvalidArgument(format!("alpha {} and within share {} must lie in [0, 1]", config.alpha, config.within_share)));
    }
    if config.alpha == 0.0 {
        return Ok(model.clone());
    }
    let d = model.dim();
    let rows = vectors(unlabeled, d, OP)?;
    if rows.is_empty() {
        return Err(Error::Empty(OP));
    }
    let total = &model.between + &model.within;
    let mut cov = linalg::covariance(&rows, &model.mean);
    if rows.len() < d {
        warn!("adapting a {d}-dim PLDA model with only {} vectors; regularizing", rows.len());
        cov = cov * (rows.len() as f64 / d as f64) + &total * (1.0 - rows.len() as f64 / d as f64);
    }
    let target = &total * (1.0 - config.alpha) + cov * config.alpha;
    let chol = linalg::cholesky(&total, OP)?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or(Error::Numerical(OP))?;
    let g = &l_inv * target * l_inv.transpose();
    let (values, u) = linalg::sym_eigen_desc(&g);
    let excess = DMatrix::from_diagonal(&DVector::from_iterator(d, values.iter().map(|v| (v - 1.0).max(0.0))));
    let mut extra = &l * &u * excess * u.transpose() * l.transpose();
    linalg::symmetrize(&mut extra);
    Ok(PldaModel {
        mean: model.mean.clone(),
        between: &model.between + &extra * (1.0 - config.within_share),
        within: &model.within + &extra * config.within_share,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    Nontarget,
    Unknown,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Target => "target",
            Self::Nontarget => "nontarget",
            Self::Unknown => "unknown",
        }
    }
}

impl core::str::FromStr for TrialLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Self::Target),
            "nontarget" => Ok(Self::Nontarget),
            "unknown" => Ok(Self::Unknown),
            _ => Err(Error::InvalidArgument(format!("unknown trial label `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

/// Scores aligned one-to-one with a trial list.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(trials: TrialSet, scores: Vec<f64>) -> Result<Self> {
        if trials.trials.len() != scores.len() {
            return Err(shape_err("score_set", format!("{} trials, {} scores", trials.trials.len(), scores.len())));
        }
        Ok(Self { trials: trials.trials, scores })
    }

    /// Target and nontarget scores; unlabelled trials are ignored.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut tgt = Vec::new();
        let mut non = Vec::new();
        for (t, &s) in self.trials.iter().zip(&self.scores) {
            match t.label {
                TrialLabel::Target => tgt.push(s),
                TrialLabel::Nontarget => non.push(s),
                TrialLabel::Unknown => {}
            }
        }
        (tgt, non)
    }
}

/// Miss and false-alarm rates at every distinct-score threshold (a trial
/// is accepted when its score is at least the threshold), followed by the
/// reject-all point. Tied scores form a single vertex.
pub fn roc_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<(f64, f64)>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs target and nontarget trials".into()));
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("roc_points"));
    }
    let mut all: Vec<(f64, bool)> = targets.iter().map(|&s| (s, true)).chain(nontargets.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    let mut points = Vec::with_capacity(all.len() + 1);
    let (mut misses, mut rejected_non) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        points.push((misses as f64 / nt, (nontargets.len() - rejected_non) as f64 / nn));
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                misses += 1;
            } else {
                rejected_non += 1;
            }
            i += 1;
        }
    }
    points.push((1.0, 0.0));
    Ok(points)
}

/// Equal error rate, interpolated linearly between ROC vertices.
pub fn eer(targets: &[f64], nontargets: &[f64]) -> Result<f64> {
    let points = roc_points(targets, nontargets)?;
    for w in points.windows(2) {
        let ((pm0, pf0), (pm1, pf1)) = (w[0], w[1]);
        if pm0 >= pf0 {
            return Ok(pm0);
        }
        if pm1 >= pf1 {
            let t = (pf0 - pm0) / ((pm1 - pm0) - (pf1 - pf0));
            return Ok(pm0 + t * (pm1 - pm0));
        }
    }
    Ok(1.0)
}

pub fn compute_eer(scores: &ScoreSet) -> Result<f64> {
    let (t, n) = scores.split();
    eer(&t, &n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcfParams {
    pub p_targets: Vec<f64>,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { p_targets: vec![0.01, 0.005], c_miss: 1.0, c_fa: 1.0 }
    }
}

/// Normalized minimum detection cost, averaged over the target priors.
pub fn min_dcf(targets: &[f64], nontargets: &[f64], params: &DcfParams) -> Result<f64> {
    if params.p_targets.is_empty() || params.p_targets.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidArgument("target priors must lie in (0, 1)".into()));
    }
    let points = roc_points(targets, nontargets)?;
    let mut total = 0.0;
    for &pt in &params.p_targets {
        let (wm, wf) = (params.c_miss * pt, params.c_fa * (1.0 - pt));
        let best = points.iter().map(|&(pm, pf)| wm * pm + wf * pf).fold(f64::INFINITY, f64::min);
        total += best / wm.min(wf);
    }
    Ok(total / params.p_targets.len() as f64)
}

pub fn compute_mindcf(scores: &ScoreSet, params: &DcfParams) -> Result<f64> {
    let (t, n) = scores.split();
    min_dcf(&t, &n, params)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackendConfig {
    pub lda_dim: usize,
    pub plda_iterations: usize,
    pub adapt: AdaptConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { lda_dim: 200, plda_iterations: 10, adapt: AdaptConfig::default() }
    }
}

/// The full scoring back end: centering on the unlabeled set, LDA,
/// whitening, length normalization and an adapted PLDA model.
#[derive(Clone, Debug, PartialEq)]
pub struct Backend {
    pub center: Vec<f64>,
    pub lda: LdaTransform,
    pub whitener: Whitener,
    pub plda: PldaModel,
}

impl Backend {
    /// Fits every stage. The LDA dimension is clamped to the number of
    /// training speakers minus one.
    pub fn fit(by_speaker: &[Vec<Vec<f64>>], unlabeled: &[Vec<f64>], config: &BackendConfig) -> Result<Self> {
        let dim = first_dim(by_speaker, "backend")?;
        let center_rows = vectors(unlabeled, dim, "backend")?;
        if center_rows.is_empty() {
            return Err(Error::Empty("backend: unlabeled set"));
        }
        let center: Vec<f64> = linalg::mean(&center_rows).iter().copied().collect();
        let sub = |x: &[f64]| -> Vec<f64> { x.iter().zip(&center).map(|(a, b)| a - b).collect() };
        let usable = by_speaker.iter().filter(|g| g.len() >= 2).count();
        let lda_dim = config.lda_dim.min(usable.saturating_sub(1)).min(dim);
        if lda_dim < config.lda_dim {
            warn!("LDA dimension reduced from {} to {lda_dim}", config.lda_dim);
        }
        let centered: Vec<Vec<Vec<f64>>> =
            by_speaker.iter().filter(|g| g.len() >= 2).map(|g| g.iter().map(|x| sub(x)).collect()).collect();
        let lda = fit_lda(&centered, lda_dim)?;
        let projected_unlabeled: Vec<Vec<f64>> = unlabeled.iter().map(|x| lda.apply(&sub(x))).collect::<Result<_>>()?;
        let whitener = fit_whitener(&projected_unlabeled)?;
        let process = |x: &[f64]| -> Result<Vec<f64>> { whiten_and_length_norm(&lda.apply(x)?, &whitener) };
        let train: Vec<Vec<Vec<f64>>> =
            centered.iter().map(|g| g.iter().map(|x| process(x)).collect::<Result<_>>()).collect::<Result<_>>()?;
        let plda = train_plda(&train, config.plda_iterations)?.model;
        let adapt_rows: Vec<Vec<f64>> =
            projected_unlabeled.iter().map(|x| whiten_and_length_norm(x, &whitener)).collect::<Result<_>>()?;
        let plda = adapt_plda(&plda, &adapt_rows, &config.adapt)?;
        Ok(Self { center, lda, whitener, plda })
    }

    /// Centering, LDA, whitening and length normalization of one embedding.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.center.len() {
            return Err(shape_err("backend", format!("embedding of dim {} for a {}-dim back end", x.len(), self.center.len())));
        }
        let c: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        whiten_and_length_norm(&self.lda.apply(&c)?, &self.whitener)
    }
}
