//! Checkpoint container: an 8-byte magic, a little-endian u32 format
//! version, a JSON header (config echo plus a tensor table), then the raw
//! f64 payload. Parameters and buffers (batch norm running statistics) are
//! written in traversal order; loading rebuilds the model from the embedded
//! config and fills every tensor by name, rejecting files whose table does
//! not match the rebuilt model exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::HasParams;
use crate::model::config::ModelConfig;
use crate::model::{build_model, Model};

const MAGIC: &[u8; 8] = b"MUSLCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: String, // "param" or "buffer"
    /// Offset into the payload, in f64 units.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

fn collect_entries(model: &Model) -> (Vec<TensorEntry>, Vec<f64>) {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    model.visit("", &mut |name, p| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            kind: "param".to_string(),
            offset: payload.len(),
            len: p.value.numel(),
        });
        payload.extend_from_slice(p.value.data());
    });
    model.visit_buffers("", &mut |name, t| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            kind: "buffer".to_string(),
            offset: payload.len(),
            len: t.numel(),
        });
        payload.extend_from_slice(t.data());
    });
    (entries, payload)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let (tensors, payload) = collect_entries(model);
    let header = Header { version: VERSION, config: model.cfg.clone(), tensors };
    let header_json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", path.display(), msg.into()))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "file too short for the magic bytes"))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint (bad magic)"));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4).map_err(|_| bad(path, "missing format version"))?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(bad(path, format!("format version {version}, expected {VERSION}")));
    }
    let mut l8 = [0u8; 8];
    r.read_exact(&mut l8).map_err(|_| bad(path, "missing header length"))?;
    let header_len = u64::from_le_bytes(l8) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|_| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| bad(path, format!("header is not valid JSON: {e}")))?;
    if header.version != version {
        return Err(bad(path, "header version disagrees with container version"));
    }

    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(bad(path, format!("payload length {} is not a whole number of f64", raw.len())));
    }
    let payload: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)")))
        .collect();

    let mut model = build_model(&header.config, 0)?;
    let fill = |name: &str, kind: &str, data: &mut [f64], shape: &[usize]| -> Result<()> {
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == name && e.kind == kind)
            .ok_or_else(|| bad(path, format!("missing {kind} '{name}'")))?;
        if entry.shape != shape {
            return Err(bad(
                path,
                format!("{kind} '{name}' has shape {:?}, expected {:?}", entry.shape, shape),
            ));
        }
        let end = entry.offset + entry.len;
        if entry.len != data.len() || end > payload.len() {
            return Err(bad(path, format!("{kind} '{name}' table entry is inconsistent")));
        }
        data.copy_from_slice(&payload[entry.offset..end]);
        Ok(())
    };

    let mut first_err: Option<Error> = None;
    let mut seen = 0usize;
    model.visit_mut("", &mut |name, p| {
        seen += 1;
        let shape = p.value.shape().to_vec();
        if let Err(e) = fill(name, "param", p.value.data_mut(), &shape) {
            first_err.get_or_insert(e);
        }
    });
    model.visit_buffers_mut("", &mut |name, t| {
        seen += 1;
        let shape = t.shape().to_vec();
        if let Err(e) = fill(name, "buffer", t.data_mut(), &shape) {
            first_err.get_or_insert(e);
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    if seen != header.tensors.len() {
        return Err(bad(
            path,
            format!("file lists {} tensors, model has {seen}", header.tensors.len()),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn roundtrip_files() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn round_trip_preserves_outputs_bit_for_bit() {
        let dir = roundtrip_files();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::tiny_muslcat(4);
        let mut model = build_model(&cfg, 9).unwrap();
        // Warm the BN running stats so buffers carry non-default state.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::uniform(&[2, 1, 2048], -1.0, 1.0, &mut rng);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        model.forward_train(&x, &mut r).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let y0 = model.forward_eval(&x).unwrap();
        let y1 = loaded.forward_eval(&x).unwrap();
        assert_eq!(y0.data(), y1.data());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = roundtrip_files();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_config_tensor_mismatch() {
        // Save a tiny model, then doctor the header config to a different
        // architecture; the rebuilt model's tensors no longer match.
        let dir = roundtrip_files();
        let path = dir.path().join("m.ckpt");
        let model = build_model(&ModelConfig::tiny_muslcan(4), 1).unwrap();
        save_checkpoint(&model, &path).unwrap();

        let raw = std::fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(raw[12..20].try_into().unwrap()) as usize;
        let mut header: Header = serde_json::from_slice(&raw[20..20 + header_len]).unwrap();
        header.config = ModelConfig::tiny_muslcat(4);
        let new_json = serde_json::to_vec(&header).unwrap();
        let mut doctored = Vec::new();
        doctored.extend_from_slice(&raw[..12]);
        doctored.extend_from_slice(&(new_json.len() as u64).to_le_bytes());
        doctored.extend_from_slice(&new_json);
        doctored.extend_from_slice(&raw[20 + header_len..]);
        let path2 = dir.path().join("doctored.ckpt");
        std::fs::write(&path2, doctored).unwrap();

        let err = load_checkpoint(&path2).unwrap_err().to_string();
        assert!(err.contains("missing param") || err.contains("shape"), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = roundtrip_files();
        let path = dir.path().join("m.ckpt");
        let model = build_model(&ModelConfig::tiny_muslcan(4), 1).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let raw = std::fs::read(&path).unwrap();
        let cut = raw.len() - 16;
        std::fs::write(&path, &raw[..cut]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
