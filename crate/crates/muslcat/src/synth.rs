//! Synthetic band-tag datasets.
//!
//! Each 30 s clip is white noise plus one sine per active tag, with tag t
//! mapped to 200 * 2^t Hz. The sines share a 10 dB total SNR budget, so the
//! labels are decodable from band energy by construction and a matched
//! filter gives the performance ceiling a trained model is compared to.
//!
//! The band table caps at 8 tags. Note that at the 16 kHz output rate bands
//! 6 and 7 (12.8 and 25.6 kHz) fold back onto bands 4 and 5, so alias-free
//! decoding needs 6 tags or fewer; the shipped harnesses use 4.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::audio::{write_wav_pcm16, TARGET_RATE};
use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, Manifest, Split};

pub const CLIP_SECONDS: usize = 30;
pub const NOISE_SIGMA: f64 = 0.05;
pub const MAX_TAGS: usize = 8;

/// Center frequency of tag band `t`.
pub fn band_freq(t: usize) -> f64 {
    f64::from(200u32 << t)
}

/// Ten songs cycle through eight train, one valid, one test.
pub fn split_for(song: usize) -> Split {
    match song % 10 {
        8 => Split::Valid,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Goertzel power of the DFT projection at `freq`, normalized so a matched
/// unit-amplitude sine scores 0.25.
pub fn band_energy(samples: &[f64], freq: f64, rate: u32) -> f64 {
    let omega = 2.0 * std::f64::consts::PI * freq / f64::from(rate);
    let coeff = 2.0 * omega.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in samples {
        let s0 = x + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    let power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
    let n = samples.len() as f64;
    power / (n * n)
}

/// One 30 s clip at 16 kHz for a 0/1 tag vector: Gaussian noise plus a
/// random-phase sine per active tag. Sine amplitudes are sized so the summed
/// signal power sits 10 dB above the noise power regardless of how many
/// tags are active. The all-zero vector yields pure noise.
pub fn synth_clip(tags: &[u8], rng: &mut impl Rng) -> Vec<f64> {
    let n = CLIP_SECONDS * TARGET_RATE as usize;
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut samples: Vec<f64> = (0..n).map(|_| noise.sample(rng)).collect();

    let active: Vec<usize> = (0..tags.len()).filter(|&t| tags[t] == 1).collect();
    if !active.is_empty() {
        let amp = NOISE_SIGMA * (20.0 / active.len() as f64).sqrt();
        for &t in &active {
            let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let step = 2.0 * std::f64::consts::PI * band_freq(t) / f64::from(TARGET_RATE);
            for (i, s) in samples.iter_mut().enumerate() {
                *s += amp * (step * i as f64 + phase).sin();
            }
        }
    }

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.99 {
        let scale = 0.99 / peak;
        for s in &mut samples {
            *s *= scale;
        }
    }
    samples
}

/// Generate `n_songs` clips under `out_dir/clips/` plus a manifest, and
/// return the manifest path. The same seed reproduces every byte: tag
/// vectors come from the seed's stream 0 and song `i`'s audio from stream
/// `i + 1`, so clips can be rendered in parallel.
pub fn synth_dataset(
    out_dir: impl AsRef<Path>,
    n_songs: usize,
    n_tags: usize,
    seed: u64,
) -> Result<PathBuf> {
    if n_tags == 0 || n_tags > MAX_TAGS {
        return Err(Error::Config(format!(
            "n_tags {n_tags} outside 1..={MAX_TAGS}"
        )));
    }
    if n_songs == 0 {
        return Err(Error::Config("n_songs must be at least 1".into()));
    }
    let out_dir = out_dir.as_ref();
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", clip_dir.display())))?;

    let mut tag_rng = ChaCha8Rng::seed_from_u64(seed);
    let tag_table: Vec<Vec<u8>> = (0..n_songs)
        .map(|_| (0..n_tags).map(|_| u8::from(tag_rng.random::<f64>() < 0.5)).collect())
        .collect();

    let records: Vec<ClipRecord> = tag_table
        .par_iter()
        .enumerate()
        .map(|(i, tags)| -> Result<ClipRecord> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let samples = synth_clip(tags, &mut rng);
            let name = format!("s{i:04}");
            write_wav_pcm16(clip_dir.join(format!("{name}.wav")), &samples, TARGET_RATE)?;
            Ok(ClipRecord {
                path: PathBuf::from(format!("clips/{name}.wav")),
                song_id: name,
                split: split_for(i),
                tags: tags.clone(),
            })
        })
        .collect::<Result<Vec<ClipRecord>>>()?;

    let tag_names: Vec<String> = (0..n_tags)
        .map(|t| format!("band{}hz", 200u32 << t))
        .collect();
    let manifest_path = out_dir.join("manifest.jsonl");
    Manifest::save(&manifest_path, &tag_names, &records)?;
    Ok(manifest_path)
}
