//! 16 kHz mono 16-bit PCM input and output.

use std::io::{Cursor, Read};
use std::path::Path;

use anyhow::{bail, Context, Result};
use kws_core::frontend::{AudioChunk, SAMPLE_RATE_HZ};

fn read_wav_bytes(bytes: &[u8], name: &str) -> Result<AudioChunk> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).with_context(|| format!("{name}: not a WAV file"))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        bail!(
            "{name}: need mono 16-bit PCM, got {} channel(s) of {}-bit {:?}",
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        );
    }
    let samples = reader.samples::<i16>().collect::<Result<Vec<_>, _>>().with_context(|| format!("{name}: truncated audio"))?;
    AudioChunk::with_rate(samples, spec.sample_rate).with_context(|| format!("{name}: unsupported sample rate"))
}

/// Reads a WAV file, or standard input when `path` is `-`. Standard input
/// without a RIFF header is taken as raw little-endian 16-bit samples.
pub fn read_audio(path: &Path) -> Result<AudioChunk> {
    if path.as_os_str() == "-" {
        let mut bytes = Vec::new();
        std::io::stdin().read_to_end(&mut bytes).context("reading standard input")?;
        if bytes.starts_with(b"RIFF") {
            return read_wav_bytes(&bytes, "stdin");
        }
        if bytes.len() % 2 != 0 {
            bail!("stdin: odd number of bytes in raw 16-bit audio");
        }
        let samples = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
        return Ok(AudioChunk::new(samples));
    }
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_wav_bytes(&bytes, &path.display().to_string())
}

pub fn write_wav(path: &Path, samples: &[i16]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    for &s in samples {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}
