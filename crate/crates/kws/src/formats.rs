//! Binary and CSV layouts for features, posteriors and synthetic streams.
//! All integers and floats are little endian.

use std::fmt::Write as _;

use anyhow::{bail, ensure, Context, Result};
use kws_core::frontend::FeatureFrame;
use kws_core::inference::PosteriorFrame;
use kws_core::speaker::SpeakerSignature;

pub const FEATURES_MAGIC: &[u8; 4] = b"KWSF";
pub const POSTERIORS_MAGIC: &[u8; 4] = b"KWPS";
pub const STREAM_MAGIC: &[u8; 4] = b"KWST";
pub const FORMAT_VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("truncated at byte {} (need {n} more)", self.at);
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        ensure!(self.take(4)? == magic, "bad magic, expected {}", String::from_utf8_lossy(magic));
        let version = self.u16()?;
        ensure!(version == FORMAT_VERSION, "unsupported version {version}");
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).context("length overflow")?)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        ensure!(self.at == self.bytes.len(), "{} trailing bytes", self.bytes.len() - self.at);
        Ok(())
    }
}

fn header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// `KWSF`, version, channels (u16), hop ms (u16), reserved (u16), then one
/// row of f32 per frame.
pub fn write_features(frames: &[FeatureFrame], channels: usize, hop_ms: u32) -> Result<Vec<u8>> {
    ensure!(channels <= u16::MAX as usize && hop_ms <= u16::MAX as u32, "feature header field too large");
    let mut out = Vec::with_capacity(12 + frames.len() * channels * 4);
    header(&mut out, FEATURES_MAGIC);
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&(hop_ms as u16).to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for f in frames {
        ensure!(f.channels.len() == channels, "frame {} has {} channels", f.frame_index, f.channels.len());
        f.append_le_bytes(&mut out);
    }
    Ok(out)
}

pub fn read_features(bytes: &[u8]) -> Result<(u32, Vec<FeatureFrame>)> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURES_MAGIC)?;
    let channels = r.u16()? as usize;
    let hop = r.u16()? as u32;
    ensure!(r.u16()? == 0, "reserved field must be zero");
    ensure!(channels > 0, "zero channels");
    let body = bytes.len() - r.at;
    ensure!(body.is_multiple_of(channels * 4), "feature data is not a whole number of frames");
    let frames = (0..body / (channels * 4))
        .map(|i| {
            Ok(FeatureFrame {
                channels: r.f32s(channels)?,
                frame_index: i as u64,
                timestamp_ms: i as u64 * hop as u64,
            })
        })
        .collect::<Result<_>>()?;
    r.finish()?;
    Ok((hop, frames))
}

pub fn features_csv(frames: &[FeatureFrame]) -> String {
    let n = frames.first().map_or(0, |f| f.channels.len());
    let mut s = String::from("frame,timestamp_ms");
    for c in 0..n {
        let _ = write!(s, ",c{c}");
    }
    s.push('\n');
    for f in frames {
        let _ = write!(s, "{},{}", f.frame_index, f.timestamp_ms);
        for v in &f.channels {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn posterior_row(p: &PosteriorFrame, out: &mut Vec<u8>) {
    put_f32s(out, &p.keyword_posteriors);
    out.extend_from_slice(&p.filler_posterior.to_le_bytes());
}

/// `KWPS`, version, units M (u16), hop ms (u16), first frame (u32), then
/// M + 1 f32 per frame (keyword units, then filler).
pub fn write_posteriors(frames: &[PosteriorFrame], units: usize, hop_ms: u32) -> Result<Vec<u8>> {
    ensure!(units <= u16::MAX as usize && hop_ms <= u16::MAX as u32, "posterior header field too large");
    let first = frames.first().map_or(0, |f| f.frame_index);
    ensure!(first <= u32::MAX as u64, "first frame index too large");
    let mut out = Vec::with_capacity(14 + frames.len() * (units + 1) * 4);
    header(&mut out, POSTERIORS_MAGIC);
    out.extend_from_slice(&(units as u16).to_le_bytes());
    out.extend_from_slice(&(hop_ms as u16).to_le_bytes());
    out.extend_from_slice(&(first as u32).to_le_bytes());
    for (i, p) in frames.iter().enumerate() {
        ensure!(p.num_units() == units, "frame {} has {} units", p.frame_index, p.num_units());
        ensure!(p.frame_index == first + i as u64, "posterior frames must be consecutive");
        posterior_row(p, &mut out);
    }
    Ok(out)
}

fn posterior_frame(row: Vec<f32>, frame_index: u64) -> Result<PosteriorFrame> {
    ensure!(row.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)), "posterior outside [0, 1] at frame {frame_index}");
    let mut keyword_posteriors = row;
    let filler_posterior = keyword_posteriors.pop().context("empty posterior row")?;
    Ok(PosteriorFrame { keyword_posteriors, filler_posterior, frame_index })
}

pub fn read_posteriors(bytes: &[u8]) -> Result<(u32, Vec<PosteriorFrame>)> {
    let mut r = Reader::new(bytes);
    r.magic(POSTERIORS_MAGIC)?;
    let units = r.u16()? as usize;
    let hop = r.u16()? as u32;
    let first = r.u32()? as u64;
    ensure!(units > 0, "zero units");
    let row = (units + 1) * 4;
    let body = bytes.len() - r.at;
    ensure!(body.is_multiple_of(row), "posterior data is not a whole number of frames");
    let frames = (0..body / row)
        .map(|i| posterior_frame(r.f32s(units + 1)?, first + i as u64))
        .collect::<Result<_>>()?;
    r.finish()?;
    Ok((hop, frames))
}

pub fn posteriors_csv(frames: &[PosteriorFrame]) -> String {
    let m = frames.first().map_or(0, |f| f.num_units());
    let mut s = String::from("frame");
    for i in 1..=m {
        let _ = write!(s, ",y{i}");
    }
    s.push_str(",filler\n");
    for f in frames {
        let _ = write!(s, "{}", f.frame_index);
        for v in &f.keyword_posteriors {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", f.filler_posterior);
    }
    s
}

/// Parses the CSV written by [`posteriors_csv`]: a header, then
/// `frame,y1..yM,filler` rows.
pub fn parse_posteriors_csv(text: &str) -> Result<Vec<PosteriorFrame>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().context("empty posterior CSV")?;
    let cols = head.split(',').count();
    ensure!(cols >= 3 && head.starts_with("frame"), "posterior CSV header must be frame,y1..yM,filler");
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            ensure!(fields.len() == cols, "row {} has {} fields, expected {cols}", i + 2, fields.len());
            let frame: u64 = fields[0].parse().with_context(|| format!("row {}: bad frame index", i + 2))?;
            let row = fields[1..]
                .iter()
                .map(|v| v.parse::<f32>().with_context(|| format!("row {}: bad value `{v}`", i + 2)))
                .collect::<Result<Vec<_>>>()?;
            posterior_frame(row, frame)
        })
        .collect()
}

/// A synthetic evaluation stream: stage-1 and stage-2 posteriors over the
/// same frames plus planted speaker signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFile {
    pub hop_ms: u32,
    pub stage1: Vec<PosteriorFrame>,
    pub stage2: Vec<PosteriorFrame>,
    /// Empty when the stream carries no speaker data.
    pub background: Option<SpeakerSignature>,
    pub planted: Vec<(u64, SpeakerSignature)>,
}

/// `KWST`, version, hop ms (u16), stage-1 units (u16), stage-2 units (u16),
/// frames (u32), signature dim (u16, 0 = none), planted count (u32), stage-1
/// rows, stage-2 rows, background signature, then (time ms u32, signature)
/// per planted signature.
pub fn write_stream(s: &StreamFile) -> Result<Vec<u8>> {
    let m1 = s.stage1.first().map_or(0, |f| f.num_units());
    let m2 = s.stage2.first().map_or(0, |f| f.num_units());
    ensure!(s.stage1.len() == s.stage2.len(), "stage tracks differ in length");
    let dim = s.background.as_ref().map_or(0, |b| b.dim());
    ensure!(dim <= u16::MAX as usize && m1 <= u16::MAX as usize && m2 <= u16::MAX as usize, "header field too large");
    let mut out = Vec::new();
    header(&mut out, STREAM_MAGIC);
    out.extend_from_slice(&(s.hop_ms as u16).to_le_bytes());
    out.extend_from_slice(&(m1 as u16).to_le_bytes());
    out.extend_from_slice(&(m2 as u16).to_le_bytes());
    out.extend_from_slice(&u32::try_from(s.stage1.len())?.to_le_bytes());
    out.extend_from_slice(&(dim as u16).to_le_bytes());
    out.extend_from_slice(&u32::try_from(s.planted.len())?.to_le_bytes());
    for p in s.stage1.iter().chain(&s.stage2) {
        posterior_row(p, &mut out);
    }
    if let Some(b) = &s.background {
        put_f32s(&mut out, &b.vector);
    }
    for (t, sig) in &s.planted {
        ensure!(sig.dim() == dim, "planted signature dimension differs from background");
        out.extend_from_slice(&u32::try_from(*t)?.to_le_bytes());
        put_f32s(&mut out, &sig.vector);
    }
    Ok(out)
}

pub fn read_stream(bytes: &[u8]) -> Result<StreamFile> {
    let mut r = Reader::new(bytes);
    r.magic(STREAM_MAGIC)?;
    let hop_ms = r.u16()? as u32;
    let m1 = r.u16()? as usize;
    let m2 = r.u16()? as usize;
    let n = r.u32()? as usize;
    let dim = r.u16()? as usize;
    let planted_n = r.u32()? as usize;
    ensure!(m1 > 0 && m2 > 0, "zero units");
    let mut track = |m: usize| -> Result<Vec<PosteriorFrame>> {
        (0..n).map(|i| posterior_frame(r.f32s(m + 1)?, i as u64)).collect()
    };
    let stage1 = track(m1)?;
    let stage2 = track(m2)?;
    let background = if dim > 0 { Some(SpeakerSignature::new(r.f32s(dim)?)) } else { None };
    ensure!(dim > 0 || planted_n == 0, "planted signatures without a dimension");
    let planted = (0..planted_n)
        .map(|_| Ok((r.u32()? as u64, SpeakerSignature::new(r.f32s(dim)?))))
        .collect::<Result<_>>()?;
    r.finish()?;
    Ok(StreamFile { hop_ms, stage1, stage2, background, planted })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(i: u64) -> PosteriorFrame {
        PosteriorFrame { keyword_posteriors: vec![0.1, 0.2 + i as f32 * 0.01], filler_posterior: 0.5, frame_index: i }
    }

    #[test]
    fn features_round_trip() {
        let frames: Vec<FeatureFrame> = (0..5)
            .map(|i| FeatureFrame { channels: vec![i as f32, -1.5, 3.25], frame_index: i, timestamp_ms: i * 10 })
            .collect();
        let bytes = write_features(&frames, 3, 10).unwrap();
        assert_eq!(bytes.len(), 12 + 5 * 12);
        assert_eq!(read_features(&bytes).unwrap(), (10, frames));
        assert!(read_features(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn posteriors_round_trip_binary_and_csv() {
        let frames: Vec<_> = (3..9).map(post).collect();
        let bytes = write_posteriors(&frames, 2, 10).unwrap();
        assert_eq!(read_posteriors(&bytes).unwrap(), (10, frames.clone()));
        assert_eq!(parse_posteriors_csv(&posteriors_csv(&frames)).unwrap(), frames);
        assert!(parse_posteriors_csv("frame,y1,filler\n0,1.5,0\n").is_err());
    }

    #[test]
    fn stream_round_trip() {
        let s = StreamFile {
            hop_ms: 10,
            stage1: (0..4).map(post).collect(),
            stage2: (0..4).map(post).collect(),
            background: Some(SpeakerSignature::new(vec![1.0, 0.0, 0.5])),
            planted: vec![(1234, SpeakerSignature::new(vec![0.0, 1.0, 0.0]))],
        };
        let bytes = write_stream(&s).unwrap();
        assert_eq!(read_stream(&bytes).unwrap(), s);
        let plain = StreamFile { background: None, planted: vec![], ..s };
        assert_eq!(read_stream(&write_stream(&plain).unwrap()).unwrap(), plain);
    }
}
