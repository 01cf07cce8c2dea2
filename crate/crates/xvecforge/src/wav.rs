//! Mono PCM WAV input (16-bit integer or 32-bit float) and 16-bit output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::mfcc::Waveform;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Invalid(format!("{}: expected mono audio, found {} channels", path.display(), spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            reader.samples::<i16>().map(|s| s.map(|v| f64::from(v) / 32768.0)).collect::<std::result::Result<Vec<_>, _>>()?
        }
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<Vec<_>, _>>()?,
        (format, bits) => {
            return Err(Error::Invalid(format!("{}: unsupported sample format {format:?}/{bits} bits", path.display())))
        }
    };
    Waveform::new(samples, f64::from(spec.sample_rate))
}

/// Writes 16-bit PCM, clipping to `[-1, 1)`.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: wave.sample_rate.round() as u32, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
