//! WAV ingestion, resampling to 16 kHz and window extraction.
//!
//! Only RIFF PCM is in scope: 16-bit integer or 32-bit float, mono or
//! stereo. Anything else (MP3, OGG, extensible WAV) is expected to be
//! pre-converted with standard tooling before it reaches a manifest.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every model in the crate consumes audio at this rate.
pub const TARGET_RATE: u32 = 16_000;

/// 3 s at [`TARGET_RATE`], the window length models are built for.
pub const CHUNK_LEN: usize = 48_000;

/// Mono audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Waveform {
        Waveform { samples, rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of whole non-overlapping windows of `len` samples; the tail
    /// remainder is dropped.
    pub fn n_windows(&self, len: usize) -> usize {
        self.samples.len() / len
    }

    /// Copy of `samples[start .. start+len]` shaped (1, 1, len).
    pub fn window(&self, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.samples.len() {
            return Err(Error::Audio(format!(
                "window {}..{} past end of {}-sample clip",
                start,
                start + len,
                self.samples.len()
            )));
        }
        Tensor::from_vec(&[1, 1, len], self.samples[start..start + len].to_vec())
    }
}

/// One training window cut from a clip.
pub struct Chunk {
    /// Samples shaped (1, 1, len).
    pub tensor: Tensor,
    /// Start sample in the source clip (0 when the clip was padded).
    pub offset: usize,
    /// True when the clip was shorter than the window and got zero-padded
    /// at the tail.
    pub padded: bool,
}

/// Cut a window of `len` samples at a uniform random offset. Clips shorter
/// than `len` are zero-padded at the tail and flagged.
pub fn sample_chunk(w: &Waveform, len: usize, rng: &mut impl Rng) -> Chunk {
    let l = w.samples.len();
    if l <= len {
        let mut data = w.samples.clone();
        data.resize(len, 0.0);
        return Chunk {
            tensor: Tensor::from_vec(&[1, 1, len], data).expect("padded window"),
            offset: 0,
            padded: l < len,
        };
    }
    let offset = rng.random_range(0..=l - len);
    Chunk {
        tensor: w.window(offset, len).expect("offset in range"),
        offset,
        padded: false,
    }
}

fn wav_err(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

struct Fmt {
    format: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;

/// Read a PCM WAV file. 16-bit samples are normalized by 1/32768, 32-bit
/// float samples are clamped to [-1, 1]; stereo is downmixed by averaging.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes, path)
}

fn decode_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    let need = |off: usize, n: usize, field: &str| -> Result<&[u8]> {
        bytes
            .get(off..off + n)
            .ok_or_else(|| wav_err(path, off as u64, format!("truncated in {field}")))
    };
    if need(0, 4, "RIFF id")? != b"RIFF" {
        return Err(wav_err(path, 0, "missing RIFF id"));
    }
    if need(8, 4, "WAVE id")? != b"WAVE" {
        return Err(wav_err(path, 8, "missing WAVE id"));
    }

    let mut off = 12usize;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(usize, usize)> = None;
    while off < bytes.len() {
        let id: [u8; 4] = need(off, 4, "chunk id")?.try_into().unwrap();
        let size =
            u32::from_le_bytes(need(off + 4, 4, "chunk size")?.try_into().unwrap()) as usize;
        let body = off + 8;
        if body + size > bytes.len() {
            return Err(wav_err(
                path,
                (off + 4) as u64,
                format!(
                    "chunk '{}' of {} bytes runs past end of file",
                    String::from_utf8_lossy(&id),
                    size
                ),
            ));
        }
        match &id {
            b"fmt " => fmt = Some(parse_fmt(bytes, body, size, path)?),
            b"data" => data = Some((body, size)),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry one pad byte.
        off = body + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| wav_err(path, 12, "no fmt chunk"))?;
    let (body, size) = data.ok_or_else(|| wav_err(path, 12, "no data chunk"))?;

    let sample_bytes = usize::from(fmt.bits / 8);
    let frame = usize::from(fmt.channels) * sample_bytes;
    if size % frame != 0 {
        return Err(wav_err(
            path,
            (body - 4) as u64,
            format!("data size {size} is not a multiple of the {frame}-byte frame"),
        ));
    }
    let frames = size / frame;
    let mut samples = Vec::with_capacity(frames);
    let decode_one = |at: usize| -> f64 {
        match fmt.format {
            FORMAT_PCM => {
                let v = i16::from_le_bytes(bytes[at..at + 2].try_into().unwrap());
                f64::from(v) / 32768.0
            }
            _ => {
                let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
                f64::from(v).clamp(-1.0, 1.0)
            }
        }
    };
    for i in 0..frames {
        let at = body + i * frame;
        let s = if fmt.channels == 1 {
            decode_one(at)
        } else {
            0.5 * (decode_one(at) + decode_one(at + sample_bytes))
        };
        samples.push(s);
    }
    Ok(Waveform::new(samples, fmt.rate))
}

fn parse_fmt(bytes: &[u8], body: usize, size: usize, path: &Path) -> Result<Fmt> {
    if size < 16 {
        return Err(wav_err(
            path,
            (body - 4) as u64,
            format!("fmt chunk of {size} bytes, want at least 16"),
        ));
    }
    let u16_at = |at: usize| u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap());
    let format = u16_at(body);
    let channels = u16_at(body + 2);
    let rate = u32::from_le_bytes(bytes[body + 4..body + 8].try_into().unwrap());
    let bits = u16_at(body + 14);

    if format != FORMAT_PCM && format != FORMAT_FLOAT {
        return Err(wav_err(
            path,
            body as u64,
            format!("unsupported format code {format}, want PCM (1) or float (3)"),
        ));
    }
    if channels != 1 && channels != 2 {
        return Err(wav_err(
            path,
            (body + 2) as u64,
            format!("unsupported channel count {channels}, want mono or stereo"),
        ));
    }
    let want_bits = if format == FORMAT_PCM { 16 } else { 32 };
    if bits != want_bits {
        return Err(wav_err(
            path,
            (body + 14) as u64,
            format!("unsupported bit depth {bits} for format {format}, want {want_bits}"),
        ));
    }
    Ok(Fmt {
        format,
        channels,
        rate,
        bits,
    })
}

/// Write mono 16-bit PCM. Samples are clamped to [-1, 1] and rounded, so a
/// write/read round trip moves any sample by at most 1/32768.
pub fn write_wav_pcm16(path: impl AsRef<Path>, samples: &[f64], rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&u32::try_from(36 + data_len).unwrap().to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&u32::try_from(data_len).unwrap().to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Sinc zero crossings kept on each side of the kernel center.
const SINC_LOBES: f64 = 16.0;

/// 4-term Blackman-Harris window on u in [0, 1].
fn bh4(u: f64) -> f64 {
    const A0: f64 = 0.35875;
    const A1: f64 = 0.48829;
    const A2: f64 = 0.14128;
    const A3: f64 = 0.01168;
    let t = 2.0 * std::f64::consts::PI * u;
    A0 - A1 * t.cos() + A2 * (2.0 * t).cos() - A3 * (3.0 * t).cos()
}

/// Windowed-sinc tap at offset `x` (input samples) for cutoff `fc` (as a
/// fraction of the input Nyquist) and half-width `half`.
fn kernel(x: f64, fc: f64, half: f64) -> f64 {
    if x.abs() > half {
        return 0.0;
    }
    let sinc = if x == 0.0 {
        1.0
    } else {
        let p = std::f64::consts::PI * fc * x;
        p.sin() / p
    };
    fc * sinc * bh4((x + half) / (2.0 * half))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Polyphase windowed-sinc resampling to 16 kHz. 16 kHz input passes
/// through bit-exact; output length is floor(len * 16000 / rate). Each
/// phase's taps are normalized to unit DC gain.
pub fn resample_16k(w: &Waveform) -> Result<Waveform> {
    if !(8_000..=192_000).contains(&w.rate) {
        return Err(Error::Audio(format!(
            "sample rate {} outside supported range 8000..=192000",
            w.rate
        )));
    }
    if w.rate == TARGET_RATE {
        return Ok(w.clone());
    }

    let g = gcd(u64::from(w.rate), u64::from(TARGET_RATE));
    let up = (u64::from(TARGET_RATE) / g) as usize;
    let down = (u64::from(w.rate) / g) as usize;
    // Downsampling narrows the cutoff to the output Nyquist; upsampling
    // keeps the input band and only interpolates.
    let fc = (f64::from(TARGET_RATE) / f64::from(w.rate)).min(1.0);
    let half = SINC_LOBES / fc;

    // Output n sits at input position q + r/up with n*down == q*up + r.
    let mut phases: Vec<(isize, Vec<f64>)> = Vec::with_capacity(up);
    for r in 0..up {
        let frac = r as f64 / up as f64;
        let j_min = (frac - half).ceil() as isize;
        let j_max = (frac + half).floor() as isize;
        let mut taps: Vec<f64> = (j_min..=j_max)
            .map(|j| kernel(frac - j as f64, fc, half))
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        phases.push((j_min, taps));
    }

    let out_len = w.samples.len() * TARGET_RATE as usize / w.rate as usize;
    let x = &w.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let num = n * down;
        let q = (num / up) as isize;
        let (j_min, taps) = &phases[num % up];
        let mut acc = 0.0;
        for (i, t) in taps.iter().enumerate() {
            let k = q + j_min + i as isize;
            if k >= 0 && (k as usize) < x.len() {
                acc += t * x[k as usize];
            }
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    Ok(Waveform::new(out, TARGET_RATE))
}
