//! Binary checkpoints with a JSON sidecar.
//!
//! Layout of the binary file (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "KBRXCKPT"
//! version      u32      1
//! kind         u8       0 rotate-box, 1 rotate, 2 query2box
//! dim          u32
//! entity hash  32 bytes SHA-256 of entity names joined by '\n'
//! relation hash 32 bytes
//! tensors      u32      count, then per tensor:
//!   name_len u32, name (UTF-8), rows u32, cols u32, rows*cols f64
//! ```
//!
//! The sidecar `<file>.json` holds the hyperparameters, both vocabularies
//! and a free-form `extra` object (training configuration and so on).

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ModelError, ModelKind, ModelParams};
use crate::numeric::{ParamStore, RealMat};

pub const MAGIC: &[u8; 8] = b"KBRXCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {found}")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: sidecar is invalid: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("{which} vocabulary does not match the checkpoint")]
    VocabMismatch { which: &'static str },
}

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub model: ModelConfig,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub sidecar: Sidecar,
}

impl Checkpoint {
    /// Fails unless the vocabularies equal `entities` and `relations`.
    pub fn check_vocab(&self, entities: &[String], relations: &[String]) -> Result<(), CheckpointError> {
        if vocab_hash(entities) != vocab_hash(&self.sidecar.entities) {
            return Err(CheckpointError::VocabMismatch { which: "entity" });
        }
        if vocab_hash(relations) != vocab_hash(&self.sidecar.relations) {
            return Err(CheckpointError::VocabMismatch { which: "relation" });
        }
        Ok(())
    }
}

pub fn vocab_hash(names: &[String]) -> [u8; 32] {
    let mut h = Sha256::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(n.as_bytes());
    }
    h.finalize().into()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Encodes the binary part.
pub fn encode(params: &ModelParams, entities: &[String], relations: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(params.kind().to_code());
    out.extend_from_slice(&(params.config.dim as u32).to_le_bytes());
    out.extend_from_slice(&vocab_hash(entities));
    out.extend_from_slice(&vocab_hash(relations));
    out.extend_from_slice(&(params.store.len() as u32).to_le_bytes());
    for id in params.store.ids() {
        let name = params.store.name(id).as_bytes();
        let m = params.store.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Writes `path` and its sidecar.
pub fn save(
    path: &Path,
    params: &ModelParams,
    entities: &[String],
    relations: &[String],
    extra: serde_json::Value,
) -> Result<(), CheckpointError> {
    if entities.len() != params.num_entities() || relations.len() != params.num_relations() {
        return Err(CheckpointError::Sidecar {
            path: path.to_path_buf(),
            message: "vocabulary sizes differ from the parameter tables".into(),
        });
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&encode(params, entities, relations)).map_err(io_err(path))?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        model: params.config,
        entities: entities.to_vec(),
        relations: relations.to_vec(),
        extra,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side, text).map_err(io_err(&side))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Corrupt { path: self.path.to_path_buf(), message: "truncated file".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn corrupt(path: &Path, message: String) -> CheckpointError {
    CheckpointError::Corrupt { path: path.to_path_buf(), message }
}

/// Reads `path` and its sidecar, verifying the header against the sidecar.
pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| CheckpointError::Sidecar { path: side.clone(), message: e.to_string() })?;

    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic { path: path.to_path_buf() }.into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { path: path.to_path_buf(), found: version }.into());
    }
    let kind = ModelKind::from_code(r.take(1)?[0]).ok_or_else(|| corrupt(path, "unknown model kind".into()))?;
    let dim = r.u32()? as usize;
    if kind != sidecar.model.kind || dim != sidecar.model.dim {
        return Err(corrupt(path, "header disagrees with sidecar".into()).into());
    }
    let ent_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let rel_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    if ent_hash != vocab_hash(&sidecar.entities) {
        return Err(CheckpointError::VocabMismatch { which: "entity" }.into());
    }
    if rel_hash != vocab_hash(&sidecar.relations) {
        return Err(CheckpointError::VocabMismatch { which: "relation" }.into());
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt(path, "tensor name is not UTF-8".into()))?;
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let bytes = r.take(rows * cols * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.add(&name, RealMat::new(rows, cols, data)?);
    }
    if r.pos != buf.len() {
        return Err(corrupt(path, "trailing bytes".into()).into());
    }
    let params = ModelParams::from_store(sidecar.model, store, sidecar.entities.len(), sidecar.relations.len())?;
    Ok(Checkpoint { params, sidecar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let params = ModelParams::init(ModelConfig::new(kind, 4, 6.0, 0.2), 5, 3, &mut rng).unwrap();
            let path = dir.path().join(format!("{kind}.bin"));
            let (e, r) = (names("e", 5), names("r", 3));
            save(&path, &params, &e, &r, serde_json::json!({"seed": 3})).unwrap();
            let ck = load(&path).unwrap();
            assert_eq!(ck.params.config, params.config);
            assert_eq!(ck.sidecar.extra["seed"], 3);
            for id in params.store.ids() {
                assert_eq!(ck.params.store.name(id), params.store.name(id));
                let (a, b) = (ck.params.store.get(id).data(), params.store.get(id).data());
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            ck.check_vocab(&e, &r).unwrap();
            assert!(matches!(ck.check_vocab(&names("x", 5), &r), Err(CheckpointError::VocabMismatch { which: "entity" })));
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(ModelConfig::new(ModelKind::Rotate, 2, 6.0, 0.2), 3, 2, &mut rng).unwrap();
        let path = dir.path().join("m.bin");
        save(&path, &params, &names("e", 3), &names("r", 2), serde_json::Value::Null).unwrap();
        let good = fs::read(&path).unwrap();

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(ModelError::Checkpoint(CheckpointError::Corrupt { .. }))));

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(ModelError::Checkpoint(CheckpointError::BadMagic { .. }))));

        let mut bad = good.clone();
        bad[8] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(ModelError::Checkpoint(CheckpointError::Version { found: 9, .. }))));

        fs::write(&path, &good).unwrap();
        let side = sidecar_path(&path);
        let mut sc: Sidecar = serde_json::from_str(&fs::read_to_string(&side).unwrap()).unwrap();
        sc.relations.swap(0, 1);
        fs::write(&side, serde_json::to_string(&sc).unwrap()).unwrap();
        assert!(matches!(load(&path), Err(ModelError::Checkpoint(CheckpointError::VocabMismatch { which: "relation" }))));
    }
}
