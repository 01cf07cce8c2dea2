//! Diagonal-covariance GMM-UBM training, frame posteriors and Baum-Welch
//! statistics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;
use crate::tensor::Tensor;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Occupancy below which a component is left untouched by the M-step.
const MIN_OCCUPANCY: f64 = 1e-10;

/// A mixture of `M` diagonal Gaussians in `d` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGmm {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
    log_consts: Vec<f64>,
    inv_vars: Vec<f64>,
}

impl DiagGmm {
    /// `means` and `variances` are row-major `M x d`. Weights must sum to one
    /// within 1e-10; variances must be positive.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::Empty("diag_gmm"));
        }
        if means.len() % m != 0 || means.len() != variances.len() || means.is_empty() {
            return Err(shape_err(
                "diag_gmm",
                format!("{m} weights, {} means, {} variances", means.len(), variances.len()),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("mixture weights must be a simplex, sum {sum}")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) || means.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("variances must be positive and means finite".into()));
        }
        let dim = means.len() / m;
        let mut gmm = Self { weights, means, variances, dim, log_consts: Vec::new(), inv_vars: Vec::new() };
        gmm.refresh();
        Ok(gmm)
    }

    fn refresh(&mut self) {
        let d = self.dim;
        self.inv_vars = self.variances.iter().map(|v| 1.0 / v).collect();
        self.log_consts = (0..self.weights.len())
            .map(|m| {
                let log_det: f64 = self.variances[m * d..(m + 1) * d].iter().map(|v| v.ln()).sum();
                self.weights[m].ln() - 0.5 * (d as f64 * LOG_2PI + log_det)
            })
            .collect();
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, m: usize) -> &[f64] {
        &self.means[m * self.dim..(m + 1) * self.dim]
    }

    pub fn variance(&self, m: usize) -> &[f64] {
        &self.variances[m * self.dim..(m + 1) * self.dim]
    }

    /// Stable 64-bit FNV-1a hash of the parameter bits; statistics and
    /// models derived from a UBM carry it so mismatches are detectable.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.weights.iter().chain(&self.means).chain(&self.variances) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn check_frame(&self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(shape_err("posteriors", format!("frame of dim {} for a {}-dim GMM", frame.len(), self.dim)));
        }
        Ok(())
    }

    /// Per-component joint log densities `log w_m + log N(x; mu_m, var_m)`.
    fn component_log_densities(&self, frame: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (m, o) in out.iter_mut().enumerate() {
            let mu = &self.means[m * d..(m + 1) * d];
            let iv = &self.inv_vars[m * d..(m + 1) * d];
            let mut q = 0.0;
            for ((x, u), w) in frame.iter().zip(mu).zip(iv) {
                let z = x - u;
                q += z * z * w;
            }
            *o = self.log_consts[m] - 0.5 * q;
        }
    }

    /// Component posteriors of one frame, computed in the log domain; also
    /// returns the frame log-likelihood.
    fn posteriors_into(&self, frame: &[f64], gamma: &mut [f64]) -> f64 {
        self.component_log_densities(frame, gamma);
        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - max).exp();
            sum += *g;
        }
        let inv = 1.0 / sum;
        gamma.iter_mut().for_each(|g| *g *= inv);
        max + sum.ln()
    }

    pub fn posteriors(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.check_frame(frame)?;
        let mut gamma = vec![0.0; self.num_components()];
        self.posteriors_into(frame, &mut gamma);
        Ok(gamma)
    }

    pub fn log_likelihood(&self, frame: &[f64]) -> Result<f64> {
        self.check_frame(frame)?;
        let mut scratch = vec![0.0; self.num_components()];
        Ok(self.posteriors_into(frame, &mut scratch))
    }

    /// Average per-frame log-likelihood over a collection of utterances.
    pub fn average_log_likelihood(&self, features: &[FeatureMatrix]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for f in features {
            for t in 0..f.num_frames() {
                total += self.log_likelihood(f.frame(t))?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("average_log_likelihood"));
        }
        Ok(total / n as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UbmConfig {
    pub num_components: usize,
    pub iterations: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor_ratio: f64,
    pub seed: u64,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self { num_components: 512, iterations: 20, variance_floor_ratio: 1e-3, seed: 0 }
    }
}

/// A trained UBM with the average per-frame log-likelihood before the first
/// iteration and after each one.
#[derive(Clone, Debug)]
pub struct UbmTraining {
    pub gmm: DiagGmm,
    pub log_likelihoods: Vec<f64>,
}

/// EM training of a diagonal GMM from k-means++-style seeds.
pub fn train_ubm(features: &[FeatureMatrix], config: &UbmConfig) -> Result<UbmTraining> {
    let m = config.num_components;
    if m == 0 {
        return Err(Error::InvalidArgument("a GMM needs at least one component".into()));
    }
    let dim = features.first().map(|f| f.dim()).ok_or(Error::Empty("train_ubm"))?;
    if features.iter().any(|f| f.dim() != dim) {
        return Err(shape_err("train_ubm", "utterances disagree on feature dimension".into()));
    }
    let frames: Vec<&[f64]> = features.iter().flat_map(|f| (0..f.num_frames()).map(move |t| f.frame(t))).collect();
    let n = frames.len();
    if n < m {
        return Err(Error::InvalidArgument(format!("{n} frames cannot train {m} components")));
    }

    let mut global_mean = vec![0.0; dim];
    for x in &frames {
        global_mean.iter_mut().zip(*x).for_each(|(g, v)| *g += v);
    }
    global_mean.iter_mut().for_each(|g| *g /= n as f64);
    let mut global_var = vec![0.0; dim];
    for x in &frames {
        for ((g, v), mu) in global_var.iter_mut().zip(*x).zip(&global_mean) {
            *g += (v - mu) * (v - mu);
        }
    }
    global_var.iter_mut().for_each(|g| *g /= n as f64);
    let floor: Vec<f64> = global_var.iter().map(|v| (v * config.variance_floor_ratio).max(f64::MIN_POSITIVE)).collect();

    let means = kmeanspp_seeds(&frames, m, dim, config.seed);
    let variances: Vec<f64> = (0..m).flat_map(|_| global_var.iter().zip(&floor).map(|(v, f)| v.max(*f))).collect();
    let mut gmm = DiagGmm::new(vec![1.0 / m as f64; m], means, variances)?;

    let mut history = Vec::with_capacity(config.iterations + 1);
    let mut gamma = vec![0.0; m];
    for _ in 0..config.iterations {
        let mut occ = vec![0.0; m];
        let mut first = vec![0.0; m * dim];
        let mut second = vec![0.0; m * dim];
        let mut ll = 0.0;
        for x in &frames {
            ll += gmm.posteriors_into(x, &mut gamma);
            for (c, &g) in gamma.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                occ[c] += g;
                let f = &mut first[c * dim..(c + 1) * dim];
                let s = &mut second[c * dim..(c + 1) * dim];
                for ((fi, si), &v) in f.iter_mut().zip(s.iter_mut()).zip(*x) {
                    *fi += g * v;
                    *si += g * v * v;
                }
            }
        }
        history.push(ll / n as f64);
        let mut weights = gmm.weights.clone();
        let mut means = gmm.means.clone();
        let mut vars = gmm.variances.clone();
        let total: f64 = occ.iter().sum();
        for c in 0..m {
            if occ[c] < MIN_OCCUPANCY {
                continue;
            }
            weights[c] = occ[c] / total;
            for j in 0..dim {
                let mu = first[c * dim + j] / occ[c];
                let var = second[c * dim + j] / occ[c] - mu * mu;
                means[c * dim + j] = mu;
                vars[c * dim + j] = var.max(floor[j]);
            }
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        gmm = DiagGmm::new(weights, means, vars)?;
    }
    history.push(gmm.average_log_likelihood(features)?);
    Ok(UbmTraining { gmm, log_likelihoods: history })
}

/// D^2-weighted seeding: the first centre is a uniformly drawn frame, each
/// further centre is drawn with probability proportional to its squared
/// distance from the nearest centre so far.
fn kmeanspp_seeds(frames: &[&[f64]], m: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    let mut centers = Vec::with_capacity(m * dim);
    let first = rng.random_range(0..frames.len());
    centers.extend_from_slice(frames[first]);
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut nearest: Vec<f64> = frames.iter().map(|x| dist2(x, frames[first])).collect();
    for _ in 1..m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = frames.len() - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..frames.len())
        };
        let c = frames[pick];
        centers.extend_from_slice(c);
        for (nd, x) in nearest.iter_mut().zip(frames) {
            *nd = nd.min(dist2(x, c));
        }
    }
    centers
}

/// How the first-order statistics are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StatsNormalization {
    /// `f_m = sum_t gamma_t(m) x_t / T`, averaged over the utterance length.
    #[default]
    FrameCount,
    /// `f_m = sum_t gamma_t(m) x_t / n_m`, the per-component posterior mean.
    Occupancy,
}

/// Zeroth- and first-order Baum-Welch statistics of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct BwStats {
    occupancy: Vec<f64>,
    first_order: Vec<f64>,
    frame_count: usize,
    dim: usize,
    normalization: StatsNormalization,
    ubm_fingerprint: u64,
}

impl BwStats {
    /// Reassembles statistics, e.g. after deserialization.
    pub fn from_parts(
        occupancy: Vec<f64>,
        first_order: Vec<f64>,
        frame_count: usize,
        normalization: StatsNormalization,
        ubm_fingerprint: u64,
    ) -> Result<Self> {
        let m = occupancy.len();
        if m == 0 || first_order.len() % m != 0 || first_order.is_empty() {
            return Err(shape_err("bw_stats", format!("{m} occupancies, {} first-order values", first_order.len())));
        }
        if frame_count == 0 {
            return Err(Error::Empty("bw_stats"));
        }
        let dim = first_order.len() / m;
        Ok(Self { occupancy, first_order, frame_count, dim, normalization, ubm_fingerprint })
    }

    pub fn num_components(&self) -> usize {
        self.occupancy.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    /// Normalized first-order statistics, row `m` is `f_m`.
    pub fn first_order(&self) -> &[f64] {
        &self.first_order
    }

    pub fn normalization(&self) -> StatsNormalization {
        self.normalization
    }

    pub fn ubm_fingerprint(&self) -> u64 {
        self.ubm_fingerprint
    }

    /// The matrix of normalized first-order statistics, `[M, d]`.
    pub fn first_order_matrix(&self) -> Tensor {
        Tensor::new([self.num_components(), self.dim], self.first_order.clone()).expect("consistent by construction")
    }

    /// Unnormalized sums `sum_t gamma_t(m) x_t`, row-major `M x d`.
    pub fn raw_first_order(&self) -> Vec<f64> {
        let d = self.dim;
        let mut raw = self.first_order.clone();
        for (m, row) in raw.chunks_exact_mut(d).enumerate() {
            let scale = match self.normalization {
                StatsNormalization::FrameCount => self.frame_count as f64,
                StatsNormalization::Occupancy => self.occupancy[m],
            };
            row.iter_mut().for_each(|v| *v *= scale);
        }
        raw
    }
}

/// Accumulates Baum-Welch statistics of `feats` against `gmm`.
pub fn accumulate_bw_stats(gmm: &DiagGmm, feats: &FeatureMatrix, normalization: StatsNormalization) -> Result<BwStats> {
    if feats.is_empty() {
        return Err(Error::Empty("accumulate_bw_stats"));
    }
    if feats.dim() != gmm.dim() {
        return Err(shape_err("accumulate_bw_stats", format!("{}-dim features for a {}-dim GMM", feats.dim(), gmm.dim())));
    }
    let (m, d) = (gmm.num_components(), gmm.dim());
    let mut occupancy = vec![0.0; m];
    let mut first_order = vec![0.0; m * d];
    let mut gamma = vec![0.0; m];
    for t in 0..feats.num_frames() {
        let x = feats.frame(t);
        gmm.posteriors_into(x, &mut gamma);
        for (c, &g) in gamma.iter().enumerate() {
            occupancy[c] += g;
            for (f, v) in first_order[c * d..(c + 1) * d].iter_mut().zip(x) {
                *f += g * v;
            }
        }
    }
    let frames = feats.num_frames() as f64;
    for (c, row) in first_order.chunks_exact_mut(d).enumerate() {
        match normalization {
            StatsNormalization::FrameCount => row.iter_mut().for_each(|v| *v /= frames),
            StatsNormalization::Occupancy => {
                let n = occupancy[c];
                row.iter_mut().for_each(|v| *v = if n > 0.0 { *v / n } else { 0.0 });
            }
        }
    }
    Ok(BwStats {
        occupancy,
        first_order,
        frame_count: feats.num_frames(),
        dim: d,
        normalization,
        ubm_fingerprint: gmm.fingerprint(),
    })
}
