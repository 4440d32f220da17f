//! Song-level aggregation and macro-averaged ranking metrics.
//!
//! Evaluation follows the chunk-then-average protocol: every clip is cut
//! into consecutive non-overlapping model-length windows (tail dropped),
//! window probabilities are averaged per song, and ROC-AUC / PR-AUC are
//! computed per tag on the song-level scores, then macro-averaged over the
//! tags that have both classes present.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample_16k};
use crate::error::{Error, Result};
use crate::manifest::{ClipRecord, Manifest, Split};
use crate::model::Model;

/// Elementwise mean over chunk probability rows.
pub fn aggregate_song(chunks: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = chunks
        .first()
        .ok_or_else(|| Error::Eval("cannot aggregate zero chunks".into()))?;
    let width = first.len();
    let mut mean = vec![0.0; width];
    for (i, row) in chunks.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Eval(format!(
                "chunk row {i} has {} entries, row 0 has {width}",
                row.len()
            )));
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = chunks.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// Mann-Whitney ROC-AUC: the probability that a random positive outranks a
/// random negative, ties counted half. `None` when labels are single-class.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels disagree");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Midranks: every member of a tie group gets the group's average
    // 1-based rank, which is what gives tied pairs half credit.
    let mut rank_sum_pos = 0.0;
    let mut at = 0;
    while at < order.len() {
        let mut end = at + 1;
        while end < order.len() && scores[order[end]] == scores[order[at]] {
            end += 1;
        }
        let rank = (at + end + 1) as f64 / 2.0;
        for &i in &order[at..end] {
            if labels[i] == 1 {
                rank_sum_pos += rank;
            }
        }
        at = end;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: mean over ranked positives of the precision at that
/// rank, scores sorted descending. Ties are broken by stable input order,
/// so among equal scores the earlier element ranks first. `None` when there
/// are no positives.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels disagree");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut hits = 0usize;
    let mut sum = 0.0;
    for (at, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (at + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagReport {
    pub tag: String,
    pub n_pos: usize,
    pub n_neg: usize,
    /// `None` when the tag was single-class in the evaluation set.
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Unweighted mean over tags with both classes present.
    pub macro_roc_auc: f64,
    pub macro_pr_auc: f64,
    pub per_tag: Vec<TagReport>,
    /// Tags excluded from the macro means for being single-class.
    pub skipped_tags: Vec<String>,
    pub n_songs: usize,
    pub n_chunks: usize,
    /// Clips that could not be read, with the reason.
    pub skipped_clips: Vec<String>,
}

/// Build a report from song-level scores. `scores[s]` and `labels[s]` are
/// the aggregated probabilities and 0/1 tags of song `s`.
pub fn report_from_scores(
    tags: &[String],
    scores: &[Vec<f64>],
    labels: &[Vec<u8>],
) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Eval("no songs to score".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Eval(format!(
            "{} score rows vs {} label rows",
            scores.len(),
            labels.len()
        )));
    }

    let mut per_tag = Vec::with_capacity(tags.len());
    let mut skipped_tags = Vec::new();
    let mut roc_sum = 0.0;
    let mut pr_sum = 0.0;
    let mut included = 0usize;
    for (t, tag) in tags.iter().enumerate() {
        let s: Vec<f64> = scores.iter().map(|row| row[t]).collect();
        let l: Vec<u8> = labels.iter().map(|row| row[t]).collect();
        let n_pos = l.iter().filter(|&&v| v == 1).count();
        let n_neg = l.len() - n_pos;
        let (roc, pr) = if n_pos > 0 && n_neg > 0 {
            let roc = roc_auc(&s, &l).expect("both classes present");
            let pr = pr_auc(&s, &l).expect("positives present");
            roc_sum += roc;
            pr_sum += pr;
            included += 1;
            (Some(roc), Some(pr))
        } else {
            skipped_tags.push(tag.clone());
            (None, None)
        };
        per_tag.push(TagReport {
            tag: tag.clone(),
            n_pos,
            n_neg,
            roc_auc: roc,
            pr_auc: pr,
        });
    }
    if included == 0 {
        return Err(Error::Eval(
            "every tag is single-class in the evaluation set".into(),
        ));
    }

    Ok(MetricsReport {
        macro_roc_auc: roc_sum / included as f64,
        macro_pr_auc: pr_sum / included as f64,
        per_tag,
        skipped_tags,
        n_songs: scores.len(),
        n_chunks: 0,
        skipped_clips: Vec::new(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-tag table as CSV; skipped tags get empty metric cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("tag,n_pos,n_neg,roc_auc,pr_auc\n");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for t in &self.per_tag {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.tag,
                t.n_pos,
                t.n_neg,
                cell(t.roc_auc),
                cell(t.pr_auc)
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} songs, {} chunks{}",
            self.n_songs,
            self.n_chunks,
            if self.skipped_clips.is_empty() {
                String::new()
            } else {
                format!(", {} clips skipped", self.skipped_clips.len())
            }
        )?;
        writeln!(f, "{:<24} {:>5} {:>5} {:>9} {:>9}", "tag", "pos", "neg", "roc_auc", "pr_auc")?;
        for t in &self.per_tag {
            let cell = |v: Option<f64>| {
                v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
            };
            writeln!(
                f,
                "{:<24} {:>5} {:>5} {:>9} {:>9}",
                t.tag,
                t.n_pos,
                t.n_neg,
                cell(t.roc_auc),
                cell(t.pr_auc)
            )?;
        }
        if !self.skipped_tags.is_empty() {
            writeln!(f, "skipped single-class tags: {}", self.skipped_tags.join(", "))?;
        }
        write!(
            f,
            "macro roc_auc {:.4}  macro pr_auc {:.4}",
            self.macro_roc_auc, self.macro_pr_auc
        )
    }
}

struct SongScores {
    scores: Option<Vec<f64>>,
    labels: Vec<u8>,
    n_chunks: usize,
    failed: Vec<String>,
}

/// Evaluate a model on one split of a manifest. Clips are decoded and
/// scored per song in parallel; unreadable clips are skipped with a
/// warning unless they exceed 10% of the split.
pub fn evaluate(model: &Model, manifest: &Manifest, split: Split) -> Result<MetricsReport> {
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(Error::Eval(format!("no clips in {split} split")));
    }
    if manifest.n_tags() != model.cfg.n_tags {
        return Err(Error::Eval(format!(
            "manifest has {} tags, model expects {}",
            manifest.n_tags(),
            model.cfg.n_tags
        )));
    }
    let chunk_len = model.cfg.sample_len;

    let mut songs: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
    for rec in &records {
        songs.entry(&rec.song_id).or_default().push(rec);
    }
    for (id, recs) in &songs {
        if recs.iter().any(|r| r.tags != recs[0].tags) {
            return Err(Error::Eval(format!("song '{id}' has conflicting tag vectors")));
        }
    }

    let song_list: Vec<&Vec<&ClipRecord>> = songs.values().collect();
    let outs: Vec<SongScores> = song_list
        .par_iter()
        .map(|recs| -> Result<SongScores> {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut failed = Vec::new();
            for rec in recs.iter() {
                let path = manifest.resolve(rec);
                let wave = match load_wav(&path).and_then(|w| resample_16k(&w)) {
                    Ok(w) => w,
                    Err(e) => {
                        failed.push(format!("{}: {e}", path.display()));
                        continue;
                    }
                };
                for c in 0..wave.n_windows(chunk_len) {
                    let x = wave.window(c * chunk_len, chunk_len)?;
                    let probs = model.forward_eval(&x)?;
                    rows.push(probs.data().to_vec());
                }
            }
            Ok(SongScores {
                scores: if rows.is_empty() {
                    None
                } else {
                    Some(aggregate_song(&rows)?)
                },
                labels: recs[0].tags.clone(),
                n_chunks: rows.len(),
                failed,
            })
        })
        .collect::<Result<Vec<SongScores>>>()?;

    let skipped_clips: Vec<String> = outs.iter().flat_map(|o| o.failed.iter().cloned()).collect();
    for s in &skipped_clips {
        eprintln!("warning: skipping unreadable clip {s}");
    }
    if skipped_clips.len() * 10 > records.len() {
        return Err(Error::Eval(format!(
            "{} of {} clips unreadable, more than 10%",
            skipped_clips.len(),
            records.len()
        )));
    }

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut n_chunks = 0usize;
    for out in &outs {
        n_chunks += out.n_chunks;
        if let Some(s) = &out.scores {
            scores.push(s.clone());
            labels.push(out.labels.clone());
        }
    }

    let mut report = report_from_scores(&manifest.tags, &scores, &labels)?;
    report.n_chunks = n_chunks;
    report.skipped_clips = skipped_clips;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aggregate_matches_the_loop_oracle() {
        assert_eq!(aggregate_song(&[vec![0.7, 0.1]]).unwrap(), vec![0.7, 0.1]);
        assert_eq!(aggregate_song(&[vec![0.2], vec![0.4]]).unwrap(), vec![(0.2 + 0.4) / 2.0]);
        assert_eq!(aggregate_song(&[vec![0.25], vec![0.75]]).unwrap(), vec![0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chunks: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let got = aggregate_song(&chunks).unwrap();
        for t in 0..3 {
            let mut sum = 0.0;
            for row in &chunks {
                sum += row[t];
            }
            assert_eq!(got[t], sum / 7.0);
        }
    }

    #[test]
    fn aggregate_rejects_empty_and_ragged_input() {
        assert!(aggregate_song(&[]).is_err());
        let err = aggregate_song(&[vec![0.1, 0.2], vec![0.3]]).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn roc_auc_frozen_examples() {
        let scores = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(roc_auc(&scores, &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(roc_auc(&scores, &[1, 0, 1, 0]), Some(0.75));
        assert_eq!(roc_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]), Some(0.5));
        assert_eq!(roc_auc(&scores, &[1, 1, 1, 1]), None);
        assert_eq!(roc_auc(&scores, &[0, 0, 0, 0]), None);
    }

    #[test]
    fn roc_auc_gives_ties_half_credit() {
        assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]), Some(0.5));
        // Pairs: 0.7>0.5, 0.7>0.1, 0.5=0.5 (half), 0.5>0.1 -> 3.5/4.
        assert_eq!(roc_auc(&[0.7, 0.5, 0.5, 0.1], &[1, 1, 0, 0]), Some(0.875));
    }

    #[test]
    fn pr_auc_frozen_examples() {
        assert_eq!(pr_auc(&[0.9, 0.1], &[1, 0]), Some(1.0));
        assert_eq!(pr_auc(&[0.9, 0.1], &[0, 1]), Some(0.5));
        assert_eq!(pr_auc(&[0.3, 0.6], &[1, 1]), Some(1.0));
        assert_eq!(pr_auc(&[0.3, 0.6], &[0, 0]), None);
    }

    #[test]
    fn pr_auc_breaks_ties_by_input_order() {
        // Equal scores: the earlier element ranks first, so the positive at
        // index 0 is rank 1 here ...
        assert_eq!(pr_auc(&[0.5, 0.5], &[1, 0]), Some(1.0));
        // ... and rank 2 when the negative comes first.
        assert_eq!(pr_auc(&[0.5, 0.5], &[0, 1]), Some(0.5));
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
        let n = rng.random_range(1..=64);
        let quantize = rng.random::<f64>() < 0.5;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if quantize {
                    f64::from(rng.random_range(0..10u32)) / 10.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        (scores, labels)
    }

    fn brute_roc(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        (pairs > 0.0).then(|| wins / pairs)
    }

    fn brute_pr(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let n_pos = labels.iter().filter(|&&l| l == 1).count();
        if n_pos == 0 {
            return None;
        }
        // 1-based rank under descending score with input-order tie-break,
        // computed by pair counting rather than sorting.
        let rank = |i: usize| {
            1 + scores
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > scores[i] || (s == scores[i] && j < i))
                .count()
        };
        let mut sum = 0.0;
        for i in 0..scores.len() {
            if labels[i] == 1 {
                let r = rank(i);
                let pos_at_or_above = (0..scores.len())
                    .filter(|&j| labels[j] == 1 && rank(j) <= r)
                    .count();
                sum += pos_at_or_above as f64 / r as f64;
            }
        }
        Some(sum / n_pos as f64)
    }

    #[test]
    fn both_metrics_match_quadratic_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..200 {
            let (scores, labels) = random_instance(&mut rng);
            match (roc_auc(&scores, &labels), brute_roc(&scores, &labels)) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-9, "case {case}: roc {a} vs oracle {b}")
                }
                (a, b) => assert_eq!(a, b, "case {case}"),
            }
            match (pr_auc(&scores, &labels), brute_pr(&scores, &labels)) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-9, "case {case}: pr {a} vs oracle {b}")
                }
                (a, b) => assert_eq!(a, b, "case {case}"),
            }
        }
    }

    #[test]
    fn roc_auc_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (scores, labels) = random_instance(&mut rng);
            let affine: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
            let cubic: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            assert_eq!(roc_auc(&scores, &labels), roc_auc(&affine, &labels));
            assert_eq!(roc_auc(&scores, &labels), roc_auc(&cubic, &labels));
            assert_eq!(pr_auc(&scores, &labels), pr_auc(&affine, &labels));
            assert_eq!(pr_auc(&scores, &labels), pr_auc(&cubic, &labels));
        }
    }

    #[test]
    fn complement_labels_mirror_roc_auc_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.random_range(2..=64);
            // Distinct scores by construction: a shuffled grid.
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                scores.swap(i, j);
            }
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
            labels[0] = 1;
            labels[n - 1] = 0;
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
            assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn perfect_ranking_gives_full_pr_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.random_range(2..=40);
            let n_pos = rng.random_range(1..n);
            let labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
            let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
            let pr = pr_auc(&scores, &labels).unwrap();
            assert_eq!(pr, 1.0);
            assert!(pr >= n_pos as f64 / n as f64);
        }
    }

    #[test]
    fn report_matches_hand_computed_toy_case() {
        let tags = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let scores = vec![vec![0.9, 0.2, 0.5], vec![0.4, 0.6, 0.5], vec![0.1, 0.3, 0.5]];
        let labels = vec![vec![1, 0, 1], vec![0, 1, 1], vec![0, 0, 1]];
        let r = report_from_scores(&tags, &scores, &labels).unwrap();
        // Tag a: pos {0.9} vs neg {0.4, 0.1} -> roc 1.0, ap 1.0.
        assert_eq!(r.per_tag[0].roc_auc, Some(1.0));
        assert_eq!(r.per_tag[0].pr_auc, Some(1.0));
        // Tag b: pos {0.6} vs neg {0.2, 0.3} -> roc 1.0, ap 1.0.
        assert_eq!(r.per_tag[1].roc_auc, Some(1.0));
        // Tag c is all-positive: skipped.
        assert_eq!(r.per_tag[2].roc_auc, None);
        assert_eq!(r.skipped_tags, vec!["c".to_string()]);
        assert_eq!(r.macro_roc_auc, 1.0);
        assert_eq!(r.macro_pr_auc, 1.0);
        assert_eq!(r.n_songs, 3);

        let all_single = report_from_scores(&tags, &scores, &vec![vec![1, 1, 1]; 3]);
        assert!(all_single.is_err());
    }

    #[test]
    fn evaluate_chunks_skips_and_stays_deterministic() {
        use crate::manifest::{ClipRecord, Manifest, Split};
        use crate::model::{build_model, ModelConfig};
        use std::path::PathBuf;

        let cfg = ModelConfig::tiny_muslcan(2);
        let model = build_model(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);

        // 11 readable clips and one missing file: 1/12 is under the 10%
        // abort threshold, so it must be skipped with a warning instead.
        let mut records = Vec::new();
        for i in 0..11 {
            // 3.2 windows of audio: the 0.2 tail is dropped.
            let n = cfg.sample_len * 3 + cfg.sample_len / 5;
            let samples: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let name = format!("c{i}.wav");
            crate::audio::write_wav_pcm16(dir.path().join(&name), &samples, 16_000).unwrap();
            records.push(ClipRecord {
                path: PathBuf::from(&name),
                song_id: format!("s{i}"),
                split: Split::Test,
                tags: vec![u8::from(i % 2 == 0), u8::from(i % 3 == 0)],
            });
        }
        records.push(ClipRecord {
            path: PathBuf::from("missing.wav"),
            song_id: "lost".into(),
            split: Split::Test,
            tags: vec![1, 0],
        });
        let mpath = dir.path().join("eval.jsonl");
        Manifest::save(&mpath, &["a".to_string(), "b".to_string()], &records).unwrap();
        let manifest = Manifest::load(&mpath).unwrap();

        let a = evaluate(&model, &manifest, Split::Test).unwrap();
        assert_eq!(a.n_songs, 11);
        assert_eq!(a.n_chunks, 33);
        assert_eq!(a.skipped_clips.len(), 1);
        assert!(a.skipped_clips[0].contains("missing.wav"));
        assert!(a.macro_roc_auc >= 0.0 && a.macro_roc_auc <= 1.0);

        let b = evaluate(&model, &manifest, Split::Test).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

        // No clips in the split at all.
        assert!(evaluate(&model, &manifest, Split::Train).is_err());

        // Three songs with one unreadable clip: 1/3 exceeds 10% and aborts.
        let few = records[..2].iter().chain(&records[11..]).cloned().collect::<Vec<_>>();
        Manifest::save(&mpath, &["a".to_string(), "b".to_string()], &few).unwrap();
        let err = evaluate(&model, &Manifest::load(&mpath).unwrap(), Split::Test)
            .unwrap_err()
            .to_string();
        assert!(err.contains("more than 10%"), "{err}");
    }

    #[test]
    fn csv_and_json_round_trip() {
        let tags = vec!["a".to_string(), "b".to_string()];
        let scores = vec![vec![0.9, 0.5], vec![0.1, 0.5]];
        let labels = vec![vec![1, 1], vec![0, 1]];
        let r = report_from_scores(&tags, &scores, &labels).unwrap();
        let parsed: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(parsed.macro_roc_auc, r.macro_roc_auc);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.csv");
        r.write_csv(&path).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "tag,n_pos,n_neg,roc_auc,pr_auc");
        assert!(lines[2].starts_with("b,2,0,,"), "{}", lines[2]);
    }
}
