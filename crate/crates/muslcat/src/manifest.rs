//! JSONL clip manifests.
//!
//! A manifest is a header line followed by one record per line:
//!
//! ```text
//! {"version":1,"tags":["rock","piano"]}
//! {"path":"clips/s000.wav","song_id":"s000","split":"train","tags":[1,0]}
//! ```
//!
//! Relative clip paths are resolved against the manifest's directory, so a
//! dataset directory can be moved as a unit.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split '{other}', expected train, valid or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    tags: Vec<String>,
}

/// One clip. `tags` is a 0/1 vector over the manifest's tag vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRecord {
    pub path: PathBuf,
    pub song_id: String,
    pub split: Split,
    pub tags: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub tags: Vec<String>,
    pub records: Vec<ClipRecord>,
    /// Directory relative clip paths resolve against.
    dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());

        let (_, header_line) = lines
            .next()
            .ok_or_else(|| Error::Manifest(format!("{}: empty file", path.display())))?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| Error::Manifest(format!("{}:1: bad header: {e}", path.display())))?;
        if header.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "{}: version {} unsupported, want {MANIFEST_VERSION}",
                path.display(),
                header.version
            )));
        }
        if header.tags.is_empty() {
            return Err(Error::Manifest(format!(
                "{}: header declares no tags",
                path.display()
            )));
        }

        let mut records = Vec::new();
        let mut split_of: HashMap<String, Split> = HashMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let rec: ClipRecord = serde_json::from_str(line).map_err(|e| {
                Error::Manifest(format!("{}:{lineno}: bad record: {e}", path.display()))
            })?;
            if rec.tags.len() != header.tags.len() {
                return Err(Error::Manifest(format!(
                    "{}:{lineno}: song '{}' has {} tags, vocabulary has {}",
                    path.display(),
                    rec.song_id,
                    rec.tags.len(),
                    header.tags.len()
                )));
            }
            if let Some(&bad) = rec.tags.iter().find(|&&t| t > 1) {
                return Err(Error::Manifest(format!(
                    "{}:{lineno}: song '{}' has tag value {bad}, want 0 or 1",
                    path.display(),
                    rec.song_id
                )));
            }
            match split_of.get(&rec.song_id) {
                Some(&seen) if seen != rec.split => {
                    return Err(Error::Manifest(format!(
                        "{}:{lineno}: song '{}' appears in both {seen} and {} splits",
                        path.display(),
                        rec.song_id,
                        rec.split
                    )));
                }
                _ => {
                    split_of.insert(rec.song_id.clone(), rec.split);
                }
            }
            records.push(rec);
        }

        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Manifest {
            tags: header.tags,
            records,
            dir,
        })
    }

    pub fn save(path: impl AsRef<Path>, tags: &[String], records: &[ClipRecord]) -> Result<()> {
        let header = Header {
            version: MANIFEST_VERSION,
            tags: tags.to_vec(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for rec in records {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    /// Absolute (or caller-relative) path of a record's audio file.
    pub fn resolve(&self, rec: &ClipRecord) -> PathBuf {
        if rec.path.is_absolute() {
            rec.path.clone()
        } else {
            self.dir.join(&rec.path)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ClipRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, split: Split, tags: Vec<u8>) -> ClipRecord {
        ClipRecord {
            path: PathBuf::from(format!("clips/{id}.wav")),
            song_id: id.to_string(),
            split,
            tags,
        }
    }

    fn vocab() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![
            record("s0", Split::Train, vec![1, 0]),
            record("s1", Split::Valid, vec![0, 1]),
            record("s2", Split::Test, vec![1, 1]),
        ];
        Manifest::save(&path, &vocab(), &records).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.tags, vocab());
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.records[1].song_id, "s1");
        assert_eq!(m.records[2].tags, vec![1, 1]);
        assert_eq!(m.split(Split::Train).len(), 1);
        assert_eq!(m.resolve(&m.records[0]), dir.path().join("clips/s0.wav"));
    }

    #[test]
    fn split_conflict_is_rejected_naming_the_song() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![
            record("dup", Split::Train, vec![1, 0]),
            record("s1", Split::Valid, vec![0, 1]),
            record("dup", Split::Test, vec![1, 0]),
        ];
        Manifest::save(&path, &vocab(), &records).unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("'dup'") && err.contains("train") && err.contains("test"), "{err}");
        // Same song twice in the same split is allowed (multiple clips).
        let records = vec![
            record("dup", Split::Train, vec![1, 0]),
            record("dup", Split::Train, vec![1, 0]),
        ];
        Manifest::save(&path, &vocab(), &records).unwrap();
        assert_eq!(Manifest::load(&path).unwrap().records.len(), 2);
    }

    #[test]
    fn tag_vector_must_match_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        Manifest::save(&path, &vocab(), &[record("s0", Split::Train, vec![1])]).unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("1 tags") && err.contains("vocabulary has 2"), "{err}");

        Manifest::save(&path, &vocab(), &[record("s0", Split::Train, vec![1, 2])]).unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("tag value 2"), "{err}");
    }

    #[test]
    fn bad_header_and_bad_lines_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");

        std::fs::write(&path, "").unwrap();
        assert!(Manifest::load(&path).unwrap_err().to_string().contains("empty"));

        std::fs::write(&path, "{\"version\":9,\"tags\":[\"a\"]}\n").unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        std::fs::write(&path, "{\"version\":1,\"tags\":[]}\n").unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("no tags"), "{err}");

        std::fs::write(
            &path,
            "{\"version\":1,\"tags\":[\"a\"]}\nnot json\n",
        )
        .unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn rejection_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![
            record("x", Split::Train, vec![1, 0]),
            record("x", Split::Valid, vec![1, 0]),
            record("y", Split::Valid, vec![1, 0]),
            record("y", Split::Test, vec![1, 0]),
        ];
        Manifest::save(&path, &vocab(), &records).unwrap();
        let a = Manifest::load(&path).unwrap_err().to_string();
        let b = Manifest::load(&path).unwrap_err().to_string();
        assert_eq!(a, b);
        assert!(a.contains("'x'"), "first conflict in file order wins: {a}");
    }

    #[test]
    fn absolute_paths_resolve_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut rec = record("s0", Split::Train, vec![1, 0]);
        rec.path = PathBuf::from("/tmp/elsewhere/s0.wav");
        Manifest::save(&path, &vocab(), &[rec]).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/tmp/elsewhere/s0.wav"));
    }
}
