//! Mono WAV I/O (PCM16 / float32) at the canonical 16 kHz rate.
//!
//! Resampling is deliberately not performed: files at any other rate are
//! rejected so geometry mismatches surface at the door.

use super::{Waveform, SAMPLE_RATE};
use crate::{Error, Result};
use std::path::Path;

/// On-disk sample encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Io(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Io(format!(
            "{}: sample rate {} Hz, expected {} Hz (resampling not supported)",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Io(format!(
                "{}: unsupported format {fmt:?}/{bits} bits (PCM16 or float32 only)",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, wave: &Waveform, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    match format {
        WavFormat::Pcm16 => {
            for &s in &wave.samples {
                let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0);
                writer
                    .write_sample(v as i16)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
        }
        WavFormat::Float32 => {
            for &s in &wave.samples {
                writer
                    .write_sample(s as f32)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
        }
    }
    writer.finalize().map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn float32_roundtrip_within_1e7() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let mut rng = crate::rng::stream(31, "wav-f32");
        let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wave = Waveform::new(samples, 16_000).unwrap();
        write_wav(&path, &wave, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), wave.len());
        for (a, b) in back.samples.iter().zip(&wave.samples) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn pcm16_roundtrip_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let mut rng = crate::rng::stream(37, "wav-pcm");
        let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wave = Waveform::new(samples, 16_000).unwrap();
        write_wav(&path, &wave, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in back.samples.iter().zip(&wave.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("8k.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("8000"), "{err}");
    }

    #[test]
    fn multichannel_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn malformed_header_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.wav");
        std::fs::write(&path, b"not a riff file at all").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
