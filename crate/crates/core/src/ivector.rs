//! Total-variability factor analysis: EM training of the loading matrix and
//! i-vector extraction as the posterior mean of the latent factor.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{shape_err, Error, Result};
use crate::gmm::{BwStats, DiagGmm};
use crate::linalg;
use crate::rng;
use crate::tensor::Tensor;

/// Scale of the random initial loadings relative to the UBM standard deviations.
const INIT_SCALE: f64 = 0.1;

/// Loading matrix `T` of shape `(M*d) x R`, stored as one `d x R` block per
/// UBM component.
#[derive(Clone, Debug, PartialEq)]
pub struct TvModel {
    blocks: Vec<DMatrix<f64>>,
    rank: usize,
    ubm_fingerprint: u64,
}

impl TvModel {
    /// Builds a model from a row-major `(M*d) x R` matrix.
    pub fn from_matrix(matrix: &Tensor, num_components: usize, ubm_fingerprint: u64) -> Result<Self> {
        if matrix.rank() != 2 || num_components == 0 || matrix.shape()[0] % num_components != 0 {
            return Err(shape_err(
                "tv_model",
                format!("matrix {:?} for {num_components} components", matrix.shape()),
            ));
        }
        let (rows, rank) = (matrix.shape()[0], matrix.shape()[1]);
        if rank == 0 || rows == 0 {
            return Err(Error::InvalidArgument("total-variability rank must be at least 1".into()));
        }
        matrix.ensure_finite("tv_model")?;
        let d = rows / num_components;
        let data = matrix.data();
        let blocks = (0..num_components)
            .map(|m| DMatrix::from_fn(d, rank, |j, r| data[(m * d + j) * rank + r]))
            .collect();
        Ok(Self { blocks, rank, ubm_fingerprint })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_components(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn ubm_fingerprint(&self) -> u64 {
        self.ubm_fingerprint
    }

    /// The row-major `(M*d) x R` loading matrix.
    pub fn matrix(&self) -> Tensor {
        let d = self.dim();
        let data = self.blocks.iter().flat_map(|b| (0..d).flat_map(move |j| b.row(j).iter().copied().collect::<Vec<_>>())).collect();
        Tensor::new([self.num_components() * d, self.rank], data).expect("consistent by construction")
    }

    fn check_ubm(&self, ubm: &DiagGmm) -> Result<()> {
        if ubm.fingerprint() != self.ubm_fingerprint || ubm.num_components() != self.num_components() || ubm.dim() != self.dim() {
            return Err(Error::ModelMismatch("total-variability model was trained on a different UBM".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvConfig {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self { rank: 400, iterations: 10, seed: 0 }
    }
}

/// A trained loading matrix with the average per-utterance EM objective
/// before the first iteration and after each one.
#[derive(Clone, Debug)]
pub struct TvTraining {
    pub model: TvModel,
    pub objectives: Vec<f64>,
}

/// Random initial loadings, scaled per dimension by the UBM standard deviation.
pub fn initialize_tv(ubm: &DiagGmm, rank: usize, seed: u64) -> Result<TvModel> {
    let (m, d) = (ubm.num_components(), ubm.dim());
    if rank == 0 || rank > m * d {
        return Err(Error::InvalidArgument(format!("rank {rank} outside 1..={} (supervector dimension)", m * d)));
    }
    let mut rng = rng::seeded(seed);
    let blocks = (0..m)
        .map(|c| {
            let var = ubm.variance(c);
            let mut b = DMatrix::zeros(d, rank);
            for j in 0..d {
                for r in 0..rank {
                    b[(j, r)] = INIT_SCALE * var[j].sqrt() * rng::normal(&mut rng);
                }
            }
            b
        })
        .collect();
    Ok(TvModel { blocks, rank, ubm_fingerprint: ubm.fingerprint() })
}

/// A loading matrix paired with its UBM, with the per-component products
/// `T_m' S_m^-1` and `T_m' S_m^-1 T_m` precomputed.
#[derive(Clone, Debug)]
pub struct IvectorExtractor<'a> {
    tv: &'a TvModel,
    ubm: &'a DiagGmm,
    weighted: Vec<DMatrix<f64>>,
    precisions: Vec<DMatrix<f64>>,
}

/// Posterior of the latent factor for one utterance.
struct Posterior {
    mean: DVector<f64>,
    precision_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    linear: DVector<f64>,
}

impl<'a> IvectorExtractor<'a> {
    pub fn new(tv: &'a TvModel, ubm: &'a DiagGmm) -> Result<Self> {
        tv.check_ubm(ubm)?;
        let weighted: Vec<DMatrix<f64>> = tv
            .blocks
            .iter()
            .enumerate()
            .map(|(m, b)| {
                let var = ubm.variance(m);
                let mut w = b.transpose();
                for (j, mut col) in w.column_iter_mut().enumerate() {
                    col /= var[j];
                }
                w
            })
            .collect();
        let precisions = weighted.iter().zip(&tv.blocks).map(|(w, b)| w * b).collect();
        Ok(Self { tv, ubm, weighted, precisions })
    }

    /// Occupancies and centered first-order sums `sum_t gamma_t(m) (x_t - mu_m)`.
    fn centered(&self, stats: &BwStats) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
        if stats.ubm_fingerprint() != self.tv.ubm_fingerprint {
            return Err(Error::ModelMismatch("statistics were accumulated against a different UBM".into()));
        }
        let d = self.tv.dim();
        let raw = stats.raw_first_order();
        let occ = stats.occupancy().to_vec();
        let centered = (0..self.tv.num_components())
            .map(|m| {
                let mu = self.ubm.mean(m);
                DVector::from_fn(d, |j, _| raw[m * d + j] - occ[m] * mu[j])
            })
            .collect();
        Ok((occ, centered))
    }

    fn posterior(&self, occ: &[f64], centered: &[DVector<f64>]) -> Result<Posterior> {
        let r = self.tv.rank;
        let mut precision = DMatrix::identity(r, r);
        let mut linear = DVector::zeros(r);
        for m in 0..occ.len() {
            if occ[m] != 0.0 {
                precision += &self.precisions[m] * occ[m];
            }
            linear.gemv(1.0, &self.weighted[m], &centered[m], 1.0);
        }
        let precision_chol = linalg::cholesky(&precision, "ivector_posterior")?;
        let mean = precision_chol.solve(&linear);
        Ok(Posterior { mean, precision_chol, linear })
    }

    pub fn extract(&self, stats: &BwStats) -> Result<Vec<f64>> {
        let (occ, centered) = self.centered(stats)?;
        let post = self.posterior(&occ, &centered)?;
        Ok(post.mean.iter().copied().collect())
    }
}

/// Posterior mean of the total-variability factor of one utterance.
pub fn extract_ivector(tv: &TvModel, ubm: &DiagGmm, stats: &BwStats) -> Result<Vec<f64>> {
    IvectorExtractor::new(tv, ubm)?.extract(stats)
}

/// EM training of the loading matrix. The tracked objective is the
/// marginal log-likelihood of the centered statistics up to a constant,
/// averaged over utterances.
pub fn train_total_variability(ubm: &DiagGmm, stats: &[BwStats], config: &TvConfig) -> Result<TvTraining> {
    if stats.is_empty() {
        return Err(Error::Empty("train_total_variability"));
    }
    let mut model = initialize_tv(ubm, config.rank, config.seed)?;
    let (m, d, r) = (ubm.num_components(), ubm.dim(), config.rank);
    let mut objectives = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let ex = IvectorExtractor::new(&model, ubm)?;
        let mut acc_a = alloc::vec![DMatrix::<f64>::zeros(r, r); m];
        let mut acc_c = alloc::vec![DMatrix::<f64>::zeros(d, r); m];
        let mut objective = 0.0;
        for s in stats {
            let (occ, centered) = ex.centered(s)?;
            let post = ex.posterior(&occ, &centered)?;
            objective += utterance_objective(&post);
            let mut second = post.precision_chol.inverse();
            second.ger(1.0, &post.mean, &post.mean, 1.0);
            for c in 0..m {
                if occ[c] != 0.0 {
                    acc_a[c] += &second * occ[c];
                }
                acc_c[c].ger(1.0, &centered[c], &post.mean, 1.0);
            }
        }
        objectives.push(objective / stats.len() as f64);
        let mut blocks = Vec::with_capacity(m);
        for c in 0..m {
            // T_m = C_m A_m^-1, solved as A_m T_m' = C_m'
            let chol = linalg::cholesky(&acc_a[c], "tv_m_step");
            let block = match chol {
                Ok(ch) => ch.solve(&acc_c[c].transpose()).transpose(),
                Err(_) => model.blocks[c].clone(),
            };
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("tv_m_step"));
            }
            blocks.push(block);
        }
        model.blocks = blocks;
    }
    let ex = IvectorExtractor::new(&model, ubm)?;
    let mut objective = 0.0;
    for s in stats {
        let (occ, centered) = ex.centered(s)?;
        objective += utterance_objective(&ex.posterior(&occ, &centered)?);
    }
    objectives.push(objective / stats.len() as f64);
    Ok(TvTraining { model, objectives })
}

fn utterance_objective(post: &Posterior) -> f64 {
    0.5 * post.linear.dot(&post.mean) - 0.5 * linalg::log_det_chol(&post.precision_chol)
}
