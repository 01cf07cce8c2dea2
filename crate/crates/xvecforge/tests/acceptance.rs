//! Acceptance suite: one pass/fail line per criterion; exits nonzero if any
//! criterion fails.

mod common;

use std::fmt::Debug;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xvecforge::archive::Archive;
use xvecforge::codec::Codec;
use xvecforge::{Pipeline, PipelineConfig, Stage, System};
use xvecforge_core::autodiff::{BatchNormMode, ConvMode, Graph, NodeId};
use xvecforge_core::backend::{compute_eer, compute_mindcf, train_plda, DcfParams, ScoreSet, Trial, TrialLabel, TrialSet};
use xvecforge_core::embedder::{
    batch_loss, build_model, EmbedderConfig, EmbedderModel, LayerSpec, PoolingSpec, PoolingVariant, Preset, Scale, SideInput,
    TrainingUtterance,
};
use xvecforge_core::gmm::{accumulate_bw_stats, train_ubm, BwStats, DiagGmm, StatsNormalization, UbmConfig};
use xvecforge_core::ivector::{train_total_variability, TvConfig};
use xvecforge_core::synth::{generate_corpus, CorpusConfig};
use xvecforge_core::{FeatureMatrix, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

// ---- 1: gradients ----

/// Central differences of a random projection of `build`'s output with
/// respect to every input element.
fn gradcheck(seed: u64, op: &str, inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId) -> Result<usize, String> {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
    let forward = |vals: &[Tensor], proj: Option<&Tensor>| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.variable(t.clone()).unwrap()).collect();
        let out = build(&mut g, &ids);
        let root = match proj {
            Some(p) => {
                let p = g.constant(p.clone()).unwrap();
                let m = g.mul(out, p).unwrap();
                g.sum(m).unwrap()
            }
            None => out,
        };
        (g.value(root).item().unwrap(), g, ids, root)
    };
    let shape = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone()).unwrap()).collect();
        let out = build(&mut g, &ids);
        g.value(out).shape().to_vec()
    };
    let proj = (!shape.is_empty()).then(|| random(&mut rng, &shape, 1.0));
    let (_, g, ids, root) = forward(inputs, proj.as_ref());
    let grads = g.backward(root).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id).ok_or(format!("{op}: no gradient for input {k}"))?;
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (forward(&plus, proj.as_ref()).0 - forward(&minus, proj.as_ref()).0) / (2.0 * H);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            ensure!(rel <= 1e-4, "{op} seed {seed} input {k}[{i}]: analytic {a}, numeric {numeric}");
            checked += 1;
        }
    }
    Ok(checked)
}

fn tiny_config(variant: PoolingVariant) -> EmbedderConfig {
    let mut c = EmbedderConfig::preset(Preset::Baseline, Scale::Desk);
    c.input_dim = 3;
    c.frame_layers = vec![LayerSpec::mscnn(4, 3, 1, 2, true), LayerSpec::mscnn(4, 3, 2, 2, false), LayerSpec::tdnn(5, 1, 1)];
    c.pooling = PoolingSpec {
        variant,
        attention_hidden: 3,
        num_keys: 2,
        key_dim: 3,
        stats_hidden: 3,
        stats_components: 2,
        stats_dim: 2,
        ivector_dim: 3,
    };
    c.utterance_dims = vec![5, 4];
    c.num_speakers = 3;
    c.dropout = 0.0;
    c
}

fn random_feats(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::from_rows(t, d, (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn random_stats(rng: &mut ChaCha8Rng, m: usize, d: usize) -> BwStats {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..5.0)).collect();
    let total: f64 = raw.iter().sum();
    let occ = raw.iter().map(|r| r / total * 10.0).collect();
    let first = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    BwStats::from_parts(occ, first, 10, StatsNormalization::FrameCount, 0).unwrap()
}

fn network_gradients(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_model(&tiny_config(PoolingVariant::BaumWelchAttention), seed).unwrap();
    model.params_mut().set("output.weight", random(&mut rng, &[3, 4], 0.5)).unwrap();
    let feats: Vec<FeatureMatrix> = (0..3).map(|_| random_feats(&mut rng, 6, 3)).collect();
    let stats: Vec<BwStats> = (0..3).map(|_| random_stats(&mut rng, 2, 2)).collect();
    let batch: Vec<TrainingUtterance<'_>> = (0..3)
        .map(|i| TrainingUtterance { features: &feats[i], speaker: [0, 2, 1][i], side: SideInput { stats: Some(&stats[i]), ivector: None } })
        .collect();
    let loss = |m: &EmbedderModel| {
        let (g, l) = batch_loss(m, &batch, seed).unwrap();
        g.value(l).item().unwrap()
    };
    let (g, root) = batch_loss(&model, &batch, seed).map_err(|e| e.to_string())?;
    let grads = g.backward(root).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut checked = 0;
    for (id, p) in model.params().iter() {
        if !p.trainable {
            continue;
        }
        let analytic = grads.param(id).ok_or(format!("parameter {} unused", p.name))?.to_vec();
        for i in 0..p.value.len() {
            let mut plus = model.clone();
            plus.params_mut().get_mut(id).value.data_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut().get_mut(id).value.data_mut()[i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-5);
            ensure!(rel <= 1e-4, "network seed {seed} {}[{i}]: analytic {}, numeric {numeric}", p.name, analytic[i]);
            checked += 1;
        }
    }
    Ok(checked)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut ops = 0;
    for seed in 0..10u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut r, &[2, 7, 3], 1.0);
        let mut cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>)> = Vec::new();
        let dil = 1 + seed as usize % 3;
        cases.push((
            "conv1d/full",
            vec![x.clone(), random(&mut r, &[3, 3, 2], 1.0), random(&mut r, &[2], 1.0)],
            Box::new(|g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, ConvMode::Full).unwrap()),
        ));
        cases.push((
            "conv1d/depthwise",
            vec![x.clone(), random(&mut r, &[5, 3], 1.0)],
            Box::new(move |g, v| g.conv1d(v[0], v[1], None, dil, ConvMode::Depthwise).unwrap()),
        ));
        cases.push((
            "conv1d/pointwise",
            vec![x.clone(), random(&mut r, &[1, 3, 4], 1.0), random(&mut r, &[4], 1.0)],
            Box::new(|g, v| g.conv1d(v[0], v[1], Some(v[2]), 1, ConvMode::Pointwise).unwrap()),
        ));
        cases.push((
            "affine",
            vec![random(&mut r, &[2, 3, 4], 1.0), random(&mut r, &[5, 4], 1.0), random(&mut r, &[5], 1.0)],
            Box::new(|g, v| g.affine(v[0], v[1], Some(v[2])).unwrap()),
        ));
        let off_zero = random(&mut r, &[4, 3], 1.0).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 });
        cases.push(("relu", vec![off_zero.clone()], Box::new(|g, v| g.relu(v[0]).unwrap())));
        cases.push(("tanh", vec![off_zero], Box::new(|g, v| g.tanh(v[0]).unwrap())));
        let (gamma, beta) = (random(&mut r, &[3], 1.0), random(&mut r, &[3], 1.0));
        cases.push((
            "batchnorm/training",
            vec![x.clone(), gamma.clone(), beta.clone()],
            Box::new(|g, v| g.batchnorm(v[0], v[1], v[2], BatchNormMode::Training, 1e-5).unwrap()),
        ));
        cases.push((
            "batchnorm/inference",
            vec![x.clone(), gamma, beta],
            Box::new(|g, v| {
                g.batchnorm(v[0], v[1], v[2], BatchNormMode::Inference { mean: &[0.1, -0.2, 0.3], var: &[0.5, 1.5, 2.0] }, 1e-5).unwrap()
            }),
        ));
        let labels = [seed as usize % 5, (seed as usize + 2) % 5, 4];
        cases.push((
            "softmax_cross_entropy",
            vec![random(&mut r, &[3, 5], 3.0)],
            Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap()),
        ));
        let a = random(&mut r, &[2, 3, 2], 1.0);
        cases.push(("sum", vec![a.clone()], Box::new(|g, v| g.sum(v[0]).unwrap())));
        cases.push(("add", vec![a.clone(), random(&mut r, &[2, 3, 2], 1.0)], Box::new(|g, v| g.add(v[0], v[1]).unwrap())));
        cases.push(("mul", vec![a.clone(), random(&mut r, &[2, 3, 2], 1.0)], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())));
        cases.push(("reshape", vec![a.clone()], Box::new(|g, v| g.reshape(v[0], &[6, 2]).unwrap())));
        let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect();
        cases.push(("mask", vec![a.clone()], Box::new(move |g, v| g.mask(v[0], mask.clone()).unwrap())));
        cases.push((
            "concat_last",
            vec![a.clone(), random(&mut r, &[2, 3, 3], 1.0)],
            Box::new(|g, v| g.concat_last(&[v[0], v[1], v[0]]).unwrap()),
        ));
        cases.push((
            "concat_keys",
            vec![random(&mut r, &[2, 3, 4], 1.0), random(&mut r, &[2, 4], 1.0)],
            Box::new(|g, v| g.concat_keys(v[0], v[1]).unwrap()),
        ));
        cases.push((
            "bmm_nt",
            vec![random(&mut r, &[2, 5, 4], 1.0), random(&mut r, &[2, 3, 4], 1.0)],
            Box::new(|g, v| g.bmm_nt(v[0], v[1]).unwrap()),
        ));
        cases.push(("add_bias", vec![a, random(&mut r, &[2], 1.0)], Box::new(|g, v| g.add_bias(v[0], v[1]).unwrap())));
        cases.push((
            "cosine_scores",
            vec![random(&mut r, &[2, 4, 3], 1.0), random(&mut r, &[2, 3], 1.0)],
            Box::new(|g, v| g.cosine_scores(v[0], v[1]).unwrap()),
        ));
        let h = random(&mut r, &[2, 6, 3], 1.0);
        cases.push((
            "attentive_pool/scored",
            vec![h.clone(), random(&mut r, &[2, 6], 1.0)],
            Box::new(|g, v| g.attentive_pool(v[0], Some(v[1])).unwrap()),
        ));
        cases.push(("attentive_pool/uniform", vec![h], Box::new(|g, v| g.attentive_pool(v[0], None).unwrap())));
        ops = cases.len() + 1;
        for (op, inputs, build) in &cases {
            checked += gradcheck(seed, op, inputs, build.as_ref())?;
        }
        checked += network_gradients(seed)?;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("{ops} ops incl. BA+MS network x 10 seeds, {checked} partials, {:.1}s", elapsed.as_secs_f64()))
}

// ---- 2: Baum-Welch statistics ----

fn naive_stats(gmm: &DiagGmm, frames: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let (m, d) = (gmm.num_components(), gmm.dim());
    let mut n = vec![0.0; m];
    let mut f = vec![0.0; m * d];
    for x in frames {
        let log_joint: Vec<f64> = (0..m)
            .map(|c| {
                let mut ll = gmm.weights()[c].ln();
                for j in 0..d {
                    let (mu, var) = (gmm.mean(c)[j], gmm.variance(c)[j]);
                    ll -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x[j] - mu) * (x[j] - mu) / var);
                }
                ll
            })
            .collect();
        let top = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = log_joint.iter().map(|l| (l - top).exp()).sum();
        for c in 0..m {
            let gamma = (log_joint[c] - top).exp() / z;
            n[c] += gamma;
            for j in 0..d {
                f[c * d + j] += gamma * x[j];
            }
        }
    }
    (n, f)
}

fn bw_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + case);
        let (t, m, d) = (r.random_range(1..=20), r.random_range(1..=8), r.random_range(1..=5));
        let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let gmm = DiagGmm::new(
            raw.iter().map(|w| w / s).collect(),
            (0..m * d).map(|_| r.random_range(-2.0..2.0)).collect(),
            (0..m * d).map(|_| r.random_range(0.3..2.0)).collect(),
        )
        .unwrap();
        let frames: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
        let feats = FeatureMatrix::from_rows(t, d, frames.concat()).unwrap();
        let (n, f) = naive_stats(&gmm, &frames);
        for norm in [StatsNormalization::FrameCount, StatsNormalization::Occupancy] {
            let stats = accumulate_bw_stats(&gmm, &feats, norm).map_err(|e| e.to_string())?;
            for c in 0..m {
                worst = worst.max((stats.occupancy()[c] - n[c]).abs());
                for j in 0..d {
                    let expect = match norm {
                        StatsNormalization::FrameCount => f[c * d + j] / t as f64,
                        StatsNormalization::Occupancy => f[c * d + j] / n[c],
                    };
                    worst = worst.max((stats.first_order()[c * d + j] - expect).abs());
                }
            }
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    Ok(format!("50 cases, max deviation {worst:.1e}"))
}

// ---- 3: EM monotonicity ----

fn monotone(name: &str, history: &[f64], iterations: usize) -> Result<(), String> {
    ensure!(history.len() == iterations + 1, "{name}: {} values for {iterations} iterations", history.len());
    for (i, w) in history.windows(2).enumerate() {
        ensure!(w[1] >= w[0] - 1e-8, "{name}: iteration {} decreased {} -> {}", i + 1, w[0], w[1]);
    }
    Ok(())
}

fn em_monotonicity() -> Outcome {
    let corpus = generate_corpus(&CorpusConfig { num_speakers: 10, utts_per_speaker: 4, frames_per_utt: 100, dim: 6, seed: 3, ..CorpusConfig::default() })
        .map_err(|e| e.to_string())?;
    let ubm = train_ubm(&corpus.features, &UbmConfig { num_components: 8, iterations: 20, variance_floor_ratio: 1e-3, seed: 4 })
        .map_err(|e| e.to_string())?;
    monotone("UBM", &ubm.log_likelihoods, 20)?;
    let stats: Vec<BwStats> = corpus.features.iter().map(|f| accumulate_bw_stats(&ubm.gmm, f, StatsNormalization::FrameCount).unwrap()).collect();
    let tv = train_total_variability(&ubm.gmm, &stats, &TvConfig { rank: 8, iterations: 20, seed: 5 }).map_err(|e| e.to_string())?;
    monotone("TV", &tv.objectives, 20)?;
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let by_speaker: Vec<Vec<Vec<f64>>> = (0..200)
        .map(|_| {
            let y: Vec<f64> = (0..5).map(|j| r.random_range(-2.0..2.0) * (1.0 + j as f64 * 0.3)).collect();
            (0..r.random_range(2..6)).map(|_| y.iter().map(|v| v + r.random_range(-1.0..1.0)).collect()).collect()
        })
        .collect();
    let plda = train_plda(&by_speaker, 20).map_err(|e| e.to_string())?;
    monotone("PLDA", &plda.log_likelihoods, 20)?;
    Ok(format!(
        "UBM {:.3} -> {:.3}, TV {:.3} -> {:.3}, PLDA {:.3} -> {:.3}",
        ubm.log_likelihoods[0], ubm.log_likelihoods[20], tv.objectives[0], tv.objectives[20], plda.log_likelihoods[0], plda.log_likelihoods[20]
    ))
}

// ---- 4: pooling invariants ----

fn pooling_invariants() -> Outcome {
    let variants =
        [PoolingVariant::Stats, PoolingVariant::SelfAttention, PoolingVariant::IvectorAttention, PoolingVariant::BaumWelchAttention];
    let mut cases = 0;
    for variant in variants {
        for seed in 0..25u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut model = build_model(&tiny_config(variant), seed).unwrap();
            model.params_mut().set("frame2.bn.mean", Tensor::full([5], 0.25)).unwrap();
            let t = r.random_range(2..15);
            let feats = random_feats(&mut r, t, 3);
            let stats = random_stats(&mut r, 2, 2);
            let ivec: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
            let side = match variant {
                PoolingVariant::BaumWelchAttention => SideInput { stats: Some(&stats), ivector: None },
                PoolingVariant::IvectorAttention => SideInput { stats: None, ivector: Some(&ivec) },
                _ => SideInput::default(),
            };
            let (last, prev) = model.frame_forward(&feats).map_err(|e| e.to_string())?;
            let (pooled, alphas) = model.pool(&last, &prev, side).map_err(|e| e.to_string())?;
            ensure!(alphas.iter().all(|&a| a >= 0.0), "{variant:?}: negative weight");
            let sum: f64 = alphas.iter().sum();
            ensure!((sum - 1.0).abs() <= 1e-6, "{variant:?}: weights sum to {sum}");
            let half = pooled.len() / 2;
            ensure!(pooled[half..].iter().all(|&s| s >= 0.0), "{variant:?}: negative sigma");
            let mut perm: Vec<usize> = (0..t).collect();
            for i in (1..t).rev() {
                perm.swap(i, r.random_range(0..=i));
            }
            let shuffle = |x: &Tensor| Tensor::from_rows(&perm.iter().map(|&i| x.row(i)).collect::<Vec<_>>()).unwrap();
            let (pooled2, _) = model.pool(&shuffle(&last), &shuffle(&prev), side).map_err(|e| e.to_string())?;
            for (a, b) in pooled.iter().zip(&pooled2) {
                ensure!((a - b).abs() <= 1e-6 * a.abs().max(1e-6), "{variant:?}: permutation moved {a} to {b}");
            }
            cases += 1;
        }
    }
    Ok(format!("4 variants, {cases} cases"))
}

// ---- 5: multi-scale structure ----

fn mscnn_structure() -> Outcome {
    let mut a = tiny_config(PoolingVariant::Stats);
    a.frame_layers[0] = LayerSpec::tdnn(4, 3, 2);
    let mut b = a.clone();
    b.frame_layers[0] = LayerSpec::mscnn(4, 3, 2, 1, false);
    let ma = build_model(&a, 5).unwrap();
    let mut mb = build_model(&b, 9).unwrap();
    for (_, p) in ma.params().iter() {
        let name = p.name.replace("frame0.kernel", "frame0.set0.kernel").replace("frame0.bias", "frame0.set0.bias");
        mb.params_mut().set(&name, p.value.clone()).map_err(|e| e.to_string())?;
    }
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let feats = random_feats(&mut r, 12, 3);
    ensure!(ma.frame_layer_outputs(&feats).unwrap() == mb.frame_layer_outputs(&feats).unwrap(), "K=1 differs from TDNN");
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    ensure!(
        bits(ma.extract_embedding(&feats, SideInput::default()).unwrap()) == bits(mb.extract_embedding(&feats, SideInput::default()).unwrap()),
        "K=1 embedding differs from TDNN"
    );
    let mut blocks = 0;
    for (separable, k) in [(true, 2), (false, 2), (true, 3), (false, 3)] {
        let mut c = tiny_config(PoolingVariant::Stats);
        c.frame_layers[1] = LayerSpec::mscnn(6, 3, 1, k, separable);
        let model = build_model(&c, 2).unwrap();
        let feats = random_feats(&mut r, 15, 3);
        let before = model.frame_layer_outputs(&feats).unwrap()[1].clone();
        for set in 0..k {
            let mut changed = model.clone();
            let prefix = format!("frame1.set{set}.");
            let names: Vec<String> = changed.params().iter().filter(|(_, p)| p.name.starts_with(&prefix)).map(|(_, p)| p.name.clone()).collect();
            for name in names {
                let id = changed.params().find(&name).unwrap();
                let mut noisy = changed.params().value(id).clone();
                noisy.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.5..0.5));
                changed.params_mut().set(&name, noisy).unwrap();
            }
            let after = &changed.frame_layer_outputs(&feats).unwrap()[1];
            let width = 6 / k;
            let mut moved = false;
            for t in 0..15 {
                for ch in 0..6 {
                    let diff = after.row(t)[ch] - before.row(t)[ch];
                    if ch / width == set {
                        moved |= diff != 0.0;
                    } else {
                        ensure!(diff == 0.0, "set {set} of {k} changed channel {ch} by {diff}");
                    }
                }
            }
            ensure!(moved, "set {set} of {k} changed nothing");
            blocks += 1;
        }
    }
    Ok(format!("K=1 bitwise equal, {blocks} filter-set perturbations block-local"))
}

// ---- 6: metrics ----

fn sweep(targets: &[f64], nontargets: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|&th| {
            let miss = targets.iter().filter(|&&s| s < th).count();
            let fa = nontargets.iter().filter(|&&s| s >= th).count();
            (miss as f64 / targets.len() as f64, fa as f64 / nontargets.len() as f64)
        })
        .collect()
}

fn sweep_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let p = sweep(targets, nontargets);
    let i = p.iter().position(|&(pm, pf)| pm >= pf).expect("the reject-all point has pm >= pf");
    if i == 0 {
        return p[0].0;
    }
    let ((pm0, pf0), (pm1, pf1)) = (p[i - 1], p[i]);
    let t = (pf0 - pm0) / ((pm1 - pm0) - (pf1 - pf0));
    pm0 + t * (pm1 - pm0)
}

fn sweep_dcf(targets: &[f64], nontargets: &[f64], params: &DcfParams) -> f64 {
    let p = sweep(targets, nontargets);
    let total: f64 = params
        .p_targets
        .iter()
        .map(|&pt| {
            let (wm, wf) = (params.c_miss * pt, params.c_fa * (1.0 - pt));
            p.iter().map(|&(pm, pf)| wm * pm + wf * pf).fold(f64::INFINITY, f64::min) / wm.min(wf)
        })
        .sum();
    total / params.p_targets.len() as f64
}

fn score_set(targets: &[f64], nontargets: &[f64]) -> ScoreSet {
    let label = |l| move |(i, &s): (usize, &f64)| (Trial { enroll: format!("e{i}"), test: format!("t{i}"), label: l }, s);
    let (trials, scores): (Vec<Trial>, Vec<f64>) =
        targets.iter().enumerate().map(label(TrialLabel::Target)).chain(nontargets.iter().enumerate().map(label(TrialLabel::Nontarget))).unzip();
    ScoreSet::new(TrialSet { trials }, scores).unwrap()
}

fn metrics_oracle() -> Outcome {
    let params = DcfParams::default();
    for case in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(500 + case);
        let nt = r.random_range(1..25);
        let nn = r.random_range(1..=50 - nt);
        let grid = case % 2 == 0;
        let mut draw = |shift: f64| {
            let v: f64 = shift + r.random_range(-2.0..2.0);
            if grid { (v * 2.0).round() / 2.0 } else { v }
        };
        let t: Vec<f64> = (0..nt).map(|_| draw(1.0)).collect();
        let n: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let set = score_set(&t, &n);
        let (eer, dcf) = (compute_eer(&set).unwrap(), compute_mindcf(&set, &params).unwrap());
        ensure!(eer == sweep_eer(&t, &n), "case {case}: EER {eer} vs oracle {}", sweep_eer(&t, &n));
        ensure!(dcf == sweep_dcf(&t, &n, &params), "case {case}: minDCF {dcf} vs oracle {}", sweep_dcf(&t, &n, &params));
    }
    let perfect = score_set(&[3.0, 4.5, 2.0], &[-1.0, 0.0, 1.9]);
    ensure!(compute_eer(&perfect).unwrap() == 0.0, "perfect EER nonzero");
    ensure!(compute_mindcf(&perfect, &params).unwrap() == 0.0, "perfect minDCF nonzero");
    Ok("100 random score sets match exactly; perfect separation gives 0, 0".into())
}

// ---- 7: end-to-end synthetic experiment ----

fn workdir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().starts_with("report"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn run_system(workdir: &Path, system: &str) -> Result<(f64, Duration), String> {
    let mut config = PipelineConfig::parse(&format!("system = {system}\nseed = 2024\nthreads = 1\n"), "acceptance").map_err(|e| e.to_string())?;
    config.workdir = workdir.to_path_buf();
    let pipeline = Pipeline::new(config);
    let start = Instant::now();
    for stage in Stage::plan(pipeline.config.system) {
        if stage == Stage::Evaluate {
            break;
        }
        pipeline.run(stage).map_err(|e| format!("{system} {}: {e}", stage.name()))?;
    }
    let elapsed = start.elapsed();
    let report = pipeline.evaluate().map_err(|e| e.to_string())?;
    Ok((report.conditions[0].eer, elapsed))
}

fn end_to_end() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    let work = root.path().join("a");
    for system in ["x-vector", "SA", "BA"] {
        let (eer, elapsed) = run_system(&work, system)?;
        let name = system.parse::<System>().unwrap().name();
        summary.push(format!("{name} EER {:.2}% in {:.0}s", 100.0 * eer, elapsed.as_secs_f64()));
        if eer >= 0.2 {
            failures.push(format!("{name} EER {eer}"));
        }
        if elapsed >= Duration::from_secs(600) {
            failures.push(format!("{name} took {elapsed:?}"));
        }
    }
    let first = workdir_snapshot(&work);
    let again = root.path().join("b");
    for system in ["x-vector", "SA", "BA"] {
        run_system(&again, system)?;
    }
    if workdir_snapshot(&again) != first {
        failures.push("rerun artifacts differ".into());
    } else {
        summary.push(format!("{} artifacts bit-identical on rerun", first.len()));
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(summary.join(", "))
}

// ---- 8: serialization ----

fn bit_exact<T: Codec + PartialEq + Debug>(value: &T) -> Result<(), String> {
    let bytes = value.encode().to_bytes();
    let back = T::decode(&Archive::from_bytes(&bytes).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(&back == value, "decoded value differs: {}", std::any::type_name::<T>());
    ensure!(back.encode().to_bytes() == bytes, "re-encoded bytes differ: {}", std::any::type_name::<T>());
    Ok(())
}

fn serialization() -> Outcome {
    let a = common::artifacts();
    bit_exact(&a.features)?;
    bit_exact(&a.gmm)?;
    for s in &a.stats {
        bit_exact(s)?;
    }
    bit_exact(&a.tv)?;
    bit_exact(&a.ivectors)?;
    for m in &a.models {
        bit_exact(m)?;
    }
    bit_exact(&a.backend)?;
    Ok(format!("features, UBM, 2 stats normalizations, TV, i-vectors, {} network presets, back end", a.models.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("Baum-Welch statistics oracle", bw_oracle),
        ("EM monotonicity", em_monotonicity),
        ("pooling invariants", pooling_invariants),
        ("multi-scale CNN structure", mscnn_structure),
        ("metrics oracle", metrics_oracle),
        ("end-to-end synthetic experiment", end_to_end),
        ("serialization round trip", serialization),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
