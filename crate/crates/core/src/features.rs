//! Frame-level feature matrices and the post-processing applied to them:
//! delta coefficients, sliding-window cepstral mean normalization and an
//! energy-gated voice activity detector.
//!
//! MFCC extraction itself needs an FFT and lives in the `xvecforge` crate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// `T x d` per-frame features with frame timing in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: Tensor,
    pub frame_shift: f64,
    pub frame_length: f64,
}

pub const DEFAULT_FRAME_SHIFT: f64 = 0.010;
pub const DEFAULT_FRAME_LENGTH: f64 = 0.025;

impl FeatureMatrix {
    pub fn new(frames: Tensor, frame_shift: f64, frame_length: f64) -> Result<Self> {
        if frames.rank() != 2 {
            return Err(shape_err("feature_matrix", format!("frames must be [T, d], got {:?}", frames.shape())));
        }
        if !(frame_shift > 0.0 && frame_length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frame shift/length must be positive, got {frame_shift}/{frame_length}"
            )));
        }
        frames.ensure_finite("feature_matrix")?;
        Ok(Self { frames, frame_shift, frame_length })
    }

    /// Features with the default 10 ms shift and 25 ms window.
    pub fn from_rows(num_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::new([num_frames, dim], data)?, DEFAULT_FRAME_SHIFT, DEFAULT_FRAME_LENGTH)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.num_frames() == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    fn with_frames(&self, frames: Tensor) -> Self {
        Self { frames, frame_shift: self.frame_shift, frame_length: self.frame_length }
    }

    /// Keeps the first `k` dimensions of every frame.
    pub fn leading_dims(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim() {
            return Err(shape_err("leading_dims", format!("cannot take {k} of {} dims", self.dim())));
        }
        let data = (0..self.num_frames()).flat_map(|t| self.frame(t)[..k].iter().copied()).collect();
        Ok(self.with_frames(Tensor::new([self.num_frames(), k], data)?))
    }

    /// Frames `start..end` (clamped to the utterance).
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let (t, d) = (self.num_frames(), self.dim());
        let (s, e) = (start.min(t), end.min(t).max(start.min(t)));
        let data = self.frames.data()[s * d..e * d].to_vec();
        self.with_frames(Tensor::new([e - s, d], data).expect("slice within bounds"))
    }

    /// Frames whose mask entry is true, in order.
    pub fn select(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.num_frames() {
            return Err(shape_err("select", format!("{} mask entries for {} frames", keep.len(), self.num_frames())));
        }
        let d = self.dim();
        let mut data = Vec::new();
        for (t, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            data.extend_from_slice(self.frame(t));
        }
        let n = data.len() / d.max(1);
        Ok(self.with_frames(Tensor::new([n, d], data)?))
    }
}

/// Regression half-width of the delta filter.
pub const DELTA_WINDOW: usize = 2;

/// Appends delta (and, for `order == 2`, delta-delta) coefficients using the
/// standard +/-2 frame regression with replicated edges.
pub fn add_deltas(feats: &FeatureMatrix, order: usize) -> Result<FeatureMatrix> {
    if feats.is_empty() {
        return Err(Error::Empty("add_deltas"));
    }
    if order == 0 || order > 2 {
        return Err(Error::InvalidArgument(format!("delta order must be 1 or 2, got {order}")));
    }
    let (t, d) = (feats.num_frames(), feats.dim());
    let mut blocks = vec![feats.frames.data().to_vec()];
    for _ in 0..order {
        let prev = blocks.last().unwrap();
        blocks.push(regression_deltas(prev, t, d));
    }
    let out_dim = d * (order + 1);
    let mut data = Vec::with_capacity(t * out_dim);
    for ti in 0..t {
        for b in &blocks {
            data.extend_from_slice(&b[ti * d..(ti + 1) * d]);
        }
    }
    Ok(feats.with_frames(Tensor::new([t, out_dim], data)?))
}

fn regression_deltas(x: &[f64], t: usize, d: usize) -> Vec<f64> {
    let n = DELTA_WINDOW as isize;
    let denom: f64 = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |i: isize| i.clamp(0, t as isize - 1) as usize;
    let mut out = vec![0.0; t * d];
    for ti in 0..t as isize {
        for k in 1..=n {
            let (fwd, back) = (clamp(ti + k), clamp(ti - k));
            for j in 0..d {
                out[ti as usize * d + j] += k as f64 * (x[fwd * d + j] - x[back * d + j]);
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= denom);
    out
}

/// Subtracts, per dimension, the mean of a window of `window` seconds
/// centred on each frame. The window shrinks at the utterance edges; a window
/// at least as long as the utterance subtracts the global mean.
pub fn sliding_cmn(feats: &FeatureMatrix, window: f64) -> Result<FeatureMatrix> {
    if feats.is_empty() {
        return Err(Error::Empty("sliding_cmn"));
    }
    if !(window > feats.frame_shift) {
        return Err(Error::InvalidArgument(format!(
            "CMN window {window}s must exceed the frame shift {}s",
            feats.frame_shift
        )));
    }
    let (t, d) = (feats.num_frames(), feats.dim());
    let window_frames = (window / feats.frame_shift).round() as usize;
    let x = feats.frames.data();
    let mut out = vec![0.0; t * d];
    let mut mean = vec![0.0; d];
    let half = window_frames / 2;
    for ti in 0..t {
        let (lo, hi) = if window_frames >= t {
            (0, t)
        } else {
            (ti.saturating_sub(half), (ti + half + 1).min(t))
        };
        if window_frames < t || ti == 0 {
            mean.iter_mut().for_each(|m| *m = 0.0);
            for s in lo..hi {
                for (m, v) in mean.iter_mut().zip(&x[s * d..(s + 1) * d]) {
                    *m += v;
                }
            }
            let n = (hi - lo) as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        for j in 0..d {
            out[ti * d + j] = x[ti * d + j] - mean[j];
        }
    }
    Ok(feats.with_frames(Tensor::new([t, d], out)?))
}

/// Energy gate: a frame is speech when its log-energy coefficient exceeds
/// both `utterance mean + relative_offset` and `absolute_floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VadConfig {
    pub energy_index: usize,
    pub relative_offset: f64,
    pub absolute_floor: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self { energy_index: 0, relative_offset: -1.0, absolute_floor: -23.0 }
    }
}

/// Per-frame speech decisions.
pub fn vad_mask(feats: &FeatureMatrix, config: &VadConfig) -> Result<Vec<bool>> {
    if feats.is_empty() {
        return Err(Error::Empty("energy_vad"));
    }
    if config.energy_index >= feats.dim() {
        return Err(shape_err(
            "energy_vad",
            format!("energy index {} outside {} dims", config.energy_index, feats.dim()),
        ));
    }
    let energy: Vec<f64> = (0..feats.num_frames()).map(|t| feats.frame(t)[config.energy_index]).collect();
    let mean = energy.iter().sum::<f64>() / energy.len() as f64;
    let threshold = (mean + config.relative_offset).max(config.absolute_floor);
    Ok(energy.iter().map(|&e| e > threshold).collect())
}

/// Drops non-speech frames; fails with [`Error::Empty`] if nothing is left.
pub fn energy_vad(feats: &FeatureMatrix, config: &VadConfig) -> Result<FeatureMatrix> {
    let keep = vad_mask(feats, config)?;
    if !keep.iter().any(|&k| k) {
        return Err(Error::Empty("energy_vad: no speech frames"));
    }
    feats.select(&keep)
}
