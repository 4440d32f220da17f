//! Chunk-level training.
//!
//! Every step draws a batch of random 3 s windows from randomly chosen
//! training clips, minimizes binary cross-entropy with Nesterov SGD, and
//! once per epoch scores the validation split in eval mode. Validation
//! loss drives the plateau scheduler and best-validation checkpointing.
//!
//! Determinism is owned by the sampler: each epoch's full sampling plan
//! (clip picks and per-window seeds) is drawn up front from the run seed,
//! and the prefetch thread merely executes it. Queue depth therefore
//! cannot change what gets trained on.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample_16k, sample_chunk, Waveform};
use crate::error::{Error, Result};
use crate::layers::HasParams;
use crate::manifest::{ClipRecord, Manifest, Split};
use crate::model::{build_model, save_checkpoint, Model, ModelConfig};
use crate::optim::{bce_grad, bce_loss, NesterovSgd, PlateauScheduler, SchedulerDecision};
use crate::tensor::Tensor;

fn default_batch() -> usize {
    23
}
fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_patience() -> usize {
    3
}
fn default_stop() -> f64 {
    1.6e-5
}
fn default_prefetch() -> usize {
    4
}
fn default_max_epochs() -> usize {
    100
}

/// A full training run description, loadable from JSON. Only the model,
/// manifest paths and checkpoint directory are required; the optimizer
/// constants default to the standard recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub checkpoint_dir: PathBuf,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_stop")]
    pub stop_below: f64,
    #[serde(default = "default_prefetch")]
    pub prefetch_batches: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::Config(format!(
                "base_lr {} must be a positive real",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.prefetch_batches == 0 {
            return Err(Error::Config("prefetch_batches must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The scheduler drove the learning rate under its floor.
    LrFloor,
    /// `max_epochs` was reached first.
    EpochLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub epochs: Vec<EpochStats>,
    pub best_val_loss: f64,
    /// Epoch (1-based) whose weights live in the checkpoint.
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
    pub stopped: StopReason,
    pub wall_secs: f64,
}

/// Whole batches per epoch; the incomplete remainder is dropped.
pub fn steps_per_epoch(n_clips: usize, batch_size: usize) -> usize {
    n_clips / batch_size
}

struct Pick {
    clip: usize,
    chunk_seed: u64,
}

fn load_resampled(path: &Path) -> Result<Waveform> {
    resample_16k(&load_wav(path)?)
}

/// Check every referenced clip decodes before any training happens, and
/// surface failures as manifest problems naming the file.
fn eager_audio_check(manifest: &Manifest, records: &[&ClipRecord]) -> Result<()> {
    records.par_iter().try_for_each(|rec| {
        let path = manifest.resolve(rec);
        match load_resampled(&path) {
            Ok(_) => Ok(()),
            Err(e @ Error::Wav { .. }) => Err(e),
            Err(e) => Err(Error::Manifest(format!("{}: {e}", path.display()))),
        }
    })
}

fn build_batch(
    manifest: &Manifest,
    records: &[&ClipRecord],
    picks: &[Pick],
    chunk_len: usize,
    n_tags: usize,
) -> Result<(Tensor, Tensor)> {
    let mut windows = Vec::with_capacity(picks.len());
    let mut targets = Vec::with_capacity(picks.len() * n_tags);
    for pick in picks {
        let rec = records[pick.clip];
        let wave = load_resampled(&manifest.resolve(rec))?;
        let mut rng = ChaCha8Rng::seed_from_u64(pick.chunk_seed);
        windows.push(sample_chunk(&wave, chunk_len, &mut rng).tensor);
        targets.extend(rec.tags.iter().map(|&t| f64::from(t)));
    }
    let parts: Vec<&Tensor> = windows.iter().collect();
    let x = Tensor::concat(&parts, 0)?;
    let y = Tensor::from_vec(&[picks.len(), n_tags], targets)?;
    Ok((x, y))
}

/// Mean eval-mode BCE over all consecutive non-overlapping windows of the
/// validation clips.
fn validation_loss(
    model: &Model,
    manifest: &Manifest,
    records: &[&ClipRecord],
    chunk_len: usize,
) -> Result<f64> {
    let per_clip: Vec<Vec<f64>> = records
        .par_iter()
        .map(|rec| -> Result<Vec<f64>> {
            let wave = load_resampled(&manifest.resolve(rec))?;
            let y: Vec<f64> = rec.tags.iter().map(|&t| f64::from(t)).collect();
            let y = Tensor::from_vec(&[1, y.len()], y)?;
            let mut losses = Vec::new();
            for c in 0..wave.n_windows(chunk_len) {
                let x = wave.window(c * chunk_len, chunk_len)?;
                let probs = model.forward_eval(&x)?;
                losses.push(bce_loss(&probs, &y)?);
            }
            Ok(losses)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let all: Vec<f64> = per_clip.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::Train(
            "no validation clip is long enough for a single window".into(),
        ));
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

fn write_trace(path: &Path, rows: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load the manifests named in `cfg`, build the model from its seed, train,
/// and return the final model together with the run report.
pub fn run_train(cfg: &TrainConfig) -> Result<(Model, TrainRunReport)> {
    cfg.validate()?;
    let train_manifest = Manifest::load(&cfg.train_manifest)?;
    let val_manifest = Manifest::load(&cfg.val_manifest)?;
    let mut model = build_model(&cfg.model, cfg.seed)?;
    let report = train(&mut model, &train_manifest, &val_manifest, cfg)?;
    Ok((model, report))
}

pub fn train(
    model: &mut Model,
    train_manifest: &Manifest,
    val_manifest: &Manifest,
    cfg: &TrainConfig,
) -> Result<TrainRunReport> {
    cfg.validate()?;
    let n_tags = model.cfg.n_tags;
    let chunk_len = model.cfg.sample_len;
    if train_manifest.n_tags() != n_tags || val_manifest.n_tags() != n_tags {
        return Err(Error::Train(format!(
            "model expects {n_tags} tags, manifests have {} and {}",
            train_manifest.n_tags(),
            val_manifest.n_tags()
        )));
    }

    let train_records = train_manifest.split(Split::Train);
    let val_records = val_manifest.split(Split::Valid);
    if train_records.is_empty() {
        return Err(Error::Train("train split is empty".into()));
    }
    if val_records.is_empty() {
        return Err(Error::Train("valid split is empty".into()));
    }
    let steps = steps_per_epoch(train_records.len(), cfg.batch_size);
    if steps == 0 {
        return Err(Error::Train(format!(
            "{} training clips cannot fill a batch of {}",
            train_records.len(),
            cfg.batch_size
        )));
    }
    eager_audio_check(train_manifest, &train_records)?;
    eager_audio_check(val_manifest, &val_records)?;
    std::fs::create_dir_all(&cfg.checkpoint_dir)?;
    let ckpt_path = cfg.checkpoint_dir.join("best.ckpt");
    let trace_path = cfg.checkpoint_dir.join("trace.csv");

    let started = Instant::now();
    let mut opt = NesterovSgd::new(cfg.momentum)?;
    let mut sched = PlateauScheduler::new(cfg.base_lr, cfg.patience, cfg.stop_below)?;
    let mut plan_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut rows: Vec<EpochStats> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stopped = StopReason::EpochLimit;

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        let plan: Vec<Vec<Pick>> = (0..steps)
            .map(|_| {
                (0..cfg.batch_size)
                    .map(|_| Pick {
                        clip: plan_rng.random_range(0..train_records.len()),
                        chunk_seed: plan_rng.random::<u64>(),
                    })
                    .collect()
            })
            .collect();

        let plan_ref = &plan;
        let records_ref = &train_records;
        let losses: Vec<f64> = std::thread::scope(|scope| -> Result<Vec<f64>> {
            let (tx, rx) = mpsc::sync_channel(cfg.prefetch_batches);
            scope.spawn(move || {
                for picks in plan_ref {
                    let batch = build_batch(train_manifest, records_ref, picks, chunk_len, n_tags);
                    if tx.send(batch).is_err() {
                        return;
                    }
                }
            });
            let mut losses = Vec::with_capacity(steps);
            for _ in 0..steps {
                let (x, y) = rx
                    .recv()
                    .map_err(|_| Error::Train("prefetch queue closed early".into()))??;
                let probs = model.forward_train(&x, &mut dropout_rng)?;
                losses.push(bce_loss(&probs, &y)?);
                let grad = bce_grad(&probs, &y)?;
                model.zero_grads();
                model.backward(&grad)?;
                opt.step(model, lr)?;
            }
            Ok(losses)
        })?;
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;

        let val_loss = validation_loss(model, val_manifest, &val_records, chunk_len)?;
        eprintln!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}");
        rows.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        write_trace(&trace_path, &rows)?;

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            save_checkpoint(model, &ckpt_path)?;
        }
        if let SchedulerDecision::Stop(_) = sched.observe(val_loss) {
            stopped = StopReason::LrFloor;
            break;
        }
    }

    Ok(TrainRunReport {
        epochs: rows,
        best_val_loss: best_val,
        best_epoch,
        checkpoint: ckpt_path,
        stopped,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Repeated full-batch steps on one fixed (x, y) pair; returns the loss
/// measured before each update. The overfitting smoke check that training
/// plumbing is sound. When `stop_below` is set the loop exits as soon as a
/// measured loss drops under it, so the trace is a prefix of the full run.
#[allow(clippy::too_many_arguments)]
pub fn overfit_steps(
    model: &mut Model,
    x: &Tensor,
    y: &Tensor,
    lr: f64,
    momentum: f64,
    steps: usize,
    stop_below: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut opt = NesterovSgd::new(momentum)?;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let probs = model.forward_train(x, rng)?;
        let loss = bce_loss(&probs, y)?;
        losses.push(loss);
        if stop_below.is_some_and(|t| loss < t) {
            break;
        }
        let grad = bce_grad(&probs, y)?;
        model.zero_grads();
        model.backward(&grad)?;
        opt.step(model, lr)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::write_wav_pcm16;

    fn write_tiny_dataset(dir: &Path, n_train: usize, n_val: usize, len: usize) -> PathBuf {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut records = Vec::new();
        for i in 0..n_train + n_val {
            let samples: Vec<f64> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
            let name = format!("t{i}.wav");
            write_wav_pcm16(dir.join(&name), &samples, 16_000).unwrap();
            records.push(ClipRecord {
                path: PathBuf::from(&name),
                song_id: format!("t{i}"),
                split: if i < n_train { Split::Train } else { Split::Valid },
                tags: vec![u8::from(i % 2 == 0), u8::from(i % 3 == 0)],
            });
        }
        let path = dir.join("tiny.jsonl");
        Manifest::save(&path, &["a".to_string(), "b".to_string()], &records).unwrap();
        path
    }

    fn tiny_config(dir: &Path, manifest: &Path) -> TrainConfig {
        TrainConfig {
            model: ModelConfig::tiny_muslcan(2),
            seed: 5,
            train_manifest: manifest.to_path_buf(),
            val_manifest: manifest.to_path_buf(),
            checkpoint_dir: dir.join("ckpt"),
            batch_size: 2,
            base_lr: 0.01,
            momentum: 0.9,
            patience: 3,
            stop_below: 1.6e-5,
            prefetch_batches: 4,
            max_epochs: 2,
        }
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let json = r#"{
            "model": {MODEL},
            "train_manifest": "a.jsonl",
            "val_manifest": "b.jsonl",
            "checkpoint_dir": "out"
        }"#
        .replace("{MODEL}", &ModelConfig::tiny_muslcan(2).to_json().unwrap());
        let cfg: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.batch_size, 23);
        assert_eq!(cfg.base_lr, 0.01);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.patience, 3);
        assert_eq!(cfg.stop_below, 1.6e-5);
        assert_eq!(cfg.prefetch_batches, 4);
        assert_eq!(cfg.max_epochs, 100);
        assert_eq!(cfg.seed, 0);
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.momentum = 1.0;
        assert!(bad.validate().is_err());

        let parsed: TrainConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(parsed.batch_size, cfg.batch_size);
    }

    #[test]
    fn steps_per_epoch_drops_the_remainder() {
        assert_eq!(steps_per_epoch(100, 23), 4);
        assert_eq!(steps_per_epoch(23, 23), 1);
        assert_eq!(steps_per_epoch(22, 23), 0);
    }

    #[test]
    fn validation_happens_before_any_training() {
        let dir = tempfile::tempdir().unwrap();
        let len = ModelConfig::tiny_muslcan(2).sample_len + 10;
        let manifest_path = write_tiny_dataset(dir.path(), 4, 2, len);
        let cfg = tiny_config(dir.path(), &manifest_path);

        // Break one training clip by deleting its file.
        std::fs::remove_file(dir.path().join("t1.wav")).unwrap();
        let err = run_train(&cfg).unwrap_err().to_string();
        assert!(err.contains("t1.wav"), "{err}");
        assert!(
            !cfg.checkpoint_dir.exists(),
            "no checkpoint dir should appear when eager validation fails"
        );

        // Empty split: a manifest whose records are all validation.
        let all_val: Vec<ClipRecord> = (0..2)
            .map(|i| ClipRecord {
                path: PathBuf::from(format!("t{}.wav", i + 4)),
                song_id: format!("v{i}"),
                split: Split::Valid,
                tags: vec![1, 0],
            })
            .collect();
        let p2 = dir.path().join("allval.jsonl");
        Manifest::save(&p2, &["a".to_string(), "b".to_string()], &all_val).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.train_manifest = p2.clone();
        cfg2.val_manifest = p2;
        let err = run_train(&cfg2).unwrap_err().to_string();
        assert!(err.contains("train split is empty"), "{err}");
    }

    #[test]
    fn too_few_clips_for_one_batch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let len = ModelConfig::tiny_muslcan(2).sample_len + 10;
        let manifest_path = write_tiny_dataset(dir.path(), 2, 1, len);
        let mut cfg = tiny_config(dir.path(), &manifest_path);
        cfg.batch_size = 3;
        let err = run_train(&cfg).unwrap_err().to_string();
        assert!(err.contains("cannot fill a batch"), "{err}");
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let len = ModelConfig::tiny_muslcan(2).sample_len * 2 + 7;
        let manifest_path = write_tiny_dataset(dir.path(), 5, 2, len);

        let mut cfg = tiny_config(dir.path(), &manifest_path);
        cfg.checkpoint_dir = dir.path().join("run_a");
        let (_, a) = run_train(&cfg).unwrap();
        cfg.checkpoint_dir = dir.path().join("run_b");
        let (_, b) = run_train(&cfg).unwrap();

        assert_eq!(a.epochs.len(), b.epochs.len());
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.train_loss, eb.train_loss);
            assert_eq!(ea.val_loss, eb.val_loss);
            assert_eq!(ea.lr, eb.lr);
        }
        assert_eq!(
            std::fs::read(dir.path().join("run_a/trace.csv")).unwrap(),
            std::fs::read(dir.path().join("run_b/trace.csv")).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.checkpoint).unwrap(),
            std::fs::read(&b.checkpoint).unwrap(),
            "best checkpoints differ"
        );

        // A different seed must actually change the trace.
        cfg.checkpoint_dir = dir.path().join("run_c");
        cfg.seed = 6;
        let (_, c) = run_train(&cfg).unwrap();
        assert_ne!(a.epochs[0].train_loss, c.epochs[0].train_loss);
    }

    #[test]
    fn report_and_artifacts_are_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let len = ModelConfig::tiny_muslcan(2).sample_len + 100;
        let manifest_path = write_tiny_dataset(dir.path(), 4, 2, len);
        let cfg = tiny_config(dir.path(), &manifest_path);
        let (_, report) = run_train(&cfg).unwrap();

        assert_eq!(report.epochs.len(), 2);
        assert_eq!(report.stopped, StopReason::EpochLimit);
        assert!(report.checkpoint.is_file());
        assert!(report.best_epoch >= 1 && report.best_epoch <= 2);
        assert!(report.wall_secs > 0.0);
        for e in &report.epochs {
            assert_eq!(e.lr, 0.01, "no plateau can fire within two epochs");
            assert!(e.train_loss.is_finite() && e.val_loss.is_finite());
        }
        let best = report
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, best);

        let trace = std::fs::read_to_string(cfg.checkpoint_dir.join("trace.csv")).unwrap();
        let lines: Vec<&str> = trace.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,lr");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,"));

        let restored = crate::model::load_checkpoint(&report.checkpoint).unwrap();
        assert_eq!(restored.cfg.n_tags, 2);
    }

    #[test]
    fn fixed_batch_overfitting_descends() {
        let mut model = build_model(&ModelConfig::tiny_muslcan(2), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let len = model.cfg.sample_len;
        let x = Tensor::uniform(&[4, 1, len], -0.5, 0.5, &mut rng);
        let y = Tensor::from_vec(
            &[4, 2],
            (0..8).map(|_| f64::from(rng.random::<f64>() < 0.5)).collect(),
        )
        .unwrap();

        let losses = overfit_steps(&mut model, &x, &y, 0.01, 0.9, 10, None, &mut rng).unwrap();
        assert_eq!(losses.len(), 10);
        let violations = losses.windows(2).filter(|p| p[1] >= p[0]).count();
        assert!(
            violations <= 2,
            "{violations} non-decreasing steps in {losses:?}"
        );
    }
}
