//! MFCC extraction: pre-emphasis, Hamming window, power spectrum, triangular
//! mel filterbank, log and DCT-II, with coefficient 0 replaced by the frame
//! log energy.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use xvecforge_core::{FeatureMatrix, Tensor};

use crate::error::{Error, Result};

/// Floor applied to frame and filterbank energies before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfccConfig {
    pub num_ceps: usize,
    pub num_filters: usize,
    /// Minimum FFT length; raised to the next power of two above the window.
    pub fft_size: usize,
    pub frame_length: f64,
    pub frame_shift: f64,
    pub preemphasis: f64,
    pub low_freq: f64,
    /// Upper filterbank edge in Hz; 0 means the Nyquist frequency.
    pub high_freq: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            num_ceps: 23,
            num_filters: 30,
            fft_size: 512,
            frame_length: 0.025,
            frame_shift: 0.010,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: 0.0,
        }
    }
}

fn mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

/// Triangular filters over FFT bins `0..=n_fft/2`, equally spaced in mel.
fn mel_filterbank(config: &MfccConfig, sample_rate: f64, n_fft: usize) -> Result<Vec<Vec<f64>>> {
    let nyquist = sample_rate / 2.0;
    let high = if config.high_freq > 0.0 { config.high_freq.min(nyquist) } else { nyquist };
    if !(config.low_freq >= 0.0 && config.low_freq < high) {
        return Err(Error::Invalid(format!("filterbank range {}..{high} Hz is empty", config.low_freq)));
    }
    let (lo, hi) = (mel(config.low_freq), mel(high));
    let step = (hi - lo) / (config.num_filters + 1) as f64;
    let bins = n_fft / 2 + 1;
    let bin_mel: Vec<f64> = (0..bins).map(|k| mel(k as f64 * sample_rate / n_fft as f64)).collect();
    Ok((0..config.num_filters)
        .map(|j| {
            let (left, centre, right) = (lo + j as f64 * step, lo + (j + 1) as f64 * step, lo + (j + 2) as f64 * step);
            bin_mel
                .iter()
                .map(|&m| {
                    if m > left && m < right {
                        if m <= centre { (m - left) / (centre - left) } else { (right - m) / (right - centre) }
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

pub fn num_frames(num_samples: usize, window: usize, shift: usize) -> usize {
    if num_samples < window { 0 } else { 1 + (num_samples - window) / shift }
}

pub fn compute_mfcc(wave: &Waveform, config: &MfccConfig) -> Result<FeatureMatrix> {
    if !(wave.sample_rate > 0.0) {
        return Err(Error::Invalid(format!("sample rate must be positive, got {}", wave.sample_rate)));
    }
    if config.num_ceps == 0 || config.num_ceps > config.num_filters {
        return Err(Error::Invalid(format!("{} cepstra from {} filters", config.num_ceps, config.num_filters)));
    }
    let window = (config.frame_length * wave.sample_rate).round() as usize;
    let shift = (config.frame_shift * wave.sample_rate).round() as usize;
    if window == 0 || shift == 0 {
        return Err(Error::Invalid("frame length and shift must cover at least one sample".into()));
    }
    let frames = num_frames(wave.samples.len(), window, shift);
    if frames == 0 {
        return Err(Error::Invalid(format!(
            "signal of {} samples is shorter than one {window}-sample window",
            wave.samples.len()
        )));
    }
    let n_fft = config.fft_size.max(window.next_power_of_two());
    let bank = mel_filterbank(config, wave.sample_rate, n_fft)?;
    let hamming: Vec<f64> = (0..window).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (window - 1).max(1) as f64).cos()).collect();
    let nf = config.num_filters;
    let dct: Vec<Vec<f64>> = (1..config.num_ceps)
        .map(|k| (0..nf).map(|n| (2.0 / nf as f64).sqrt() * (PI * k as f64 * (n as f64 + 0.5) / nf as f64).cos()).collect())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut data = Vec::with_capacity(frames * config.num_ceps);
    let mut log_mel = vec![0.0; nf];
    for t in 0..frames {
        let frame = &wave.samples[t * shift..t * shift + window];
        let energy: f64 = frame.iter().map(|s| s * s).sum();
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..window {
            let prev = if i > 0 { frame[i - 1] } else { frame[0] };
            buf[i].re = (frame[i] - config.preemphasis * prev) * hamming[i];
        }
        fft.process(&mut buf);
        for (lm, filt) in log_mel.iter_mut().zip(&bank) {
            let e: f64 = filt.iter().zip(&buf).map(|(w, c)| w * c.norm_sqr()).sum();
            *lm = e.max(ENERGY_FLOOR).ln();
        }
        data.push(energy.max(ENERGY_FLOOR).ln());
        for row in &dct {
            data.push(row.iter().zip(&log_mel).map(|(a, b)| a * b).sum());
        }
    }
    Ok(FeatureMatrix::new(
        Tensor::new([frames, config.num_ceps], data)?,
        shift as f64 / wave.sample_rate,
        window as f64 / wave.sample_rate,
    )?)
}
