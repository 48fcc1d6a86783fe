//! Versioned binary checkpoints for networks and optimizer state.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "CIDIFFCK" | version u32 | config_hash [u8;32]
//! meta_len u64 | meta bytes
//! activation u8 | n_sizes u32 | sizes u64...
//! n_params u64 | params f64...
//! opt_flag u8 | (step u64 | m f64... | v f64...)   -- iff opt_flag == 1
//! ```
//!
//! Parameters round-trip bit-exactly: loading a checkpoint and saving it
//! again produces identical bytes, and a resumed run continues from the
//! exact same state.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numkit::{Activation, AdamState, DenseNet};

const MAGIC: &[u8; 8] = b"CIDIFFCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
}

/// Everything needed to resume or reuse a trained network.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Hash of the run configuration that produced the network. Lets a
    /// loader refuse a checkpoint trained under different settings.
    pub config_hash: [u8; 32],
    /// Opaque caller metadata (e.g. serialized condition-encoding info).
    pub meta: Vec<u8>,
    pub net: DenseNet,
    pub optimizer: Option<AdamState>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&ckpt.config_hash)?;
    w.write_all(&(ckpt.meta.len() as u64).to_le_bytes())?;
    w.write_all(&ckpt.meta)?;
    w.write_all(&[ckpt.net.hidden_activation().tag()])?;
    let sizes = ckpt.net.sizes();
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    let params = ckpt.net.flat_params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in &params {
        w.write_all(&p.to_le_bytes())?;
    }
    match &ckpt.optimizer {
        None => w.write_all(&[0u8])?,
        Some(state) => {
            w.write_all(&[1u8])?;
            let (m, v, step) = state.flat();
            if m.len() != params.len() {
                return Err(CheckpointError::Corrupt(format!(
                    "optimizer state has {} moments for {} parameters",
                    m.len(),
                    params.len()
                )));
            }
            w.write_all(&step.to_le_bytes())?;
            for x in m.iter().chain(v.iter()) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic bytes".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let mut config_hash = [0u8; 32];
    read_exact(&mut r, &mut config_hash, "config hash")?;
    let meta_len = read_u64(&mut r, "meta length")? as usize;
    if meta_len > 1 << 30 {
        return Err(CheckpointError::Corrupt(format!(
            "implausible meta length {meta_len}"
        )));
    }
    let mut meta = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta, "meta")?;
    let mut act_tag = [0u8; 1];
    read_exact(&mut r, &mut act_tag, "activation")?;
    let act = Activation::from_tag(act_tag[0])
        .ok_or_else(|| CheckpointError::Corrupt(format!("unknown activation tag {}", act_tag[0])))?;
    let n_sizes = read_u32(&mut r, "layer count")? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(CheckpointError::Corrupt(format!(
            "implausible layer-size count {n_sizes}"
        )));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(read_u64(&mut r, "layer size")? as usize);
    }
    let mut net = DenseNet::zeros_with(&sizes, act)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let n_params = read_u64(&mut r, "parameter count")? as usize;
    if n_params != net.param_count() {
        return Err(CheckpointError::Corrupt(format!(
            "parameter count {n_params} does not match sizes {sizes:?} ({} expected)",
            net.param_count()
        )));
    }
    let params = read_f64s(&mut r, n_params, "parameters")?;
    net.set_flat_params(&params)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag, "optimizer flag")?;
    let optimizer = match flag[0] {
        0 => None,
        1 => {
            let step = read_u64(&mut r, "optimizer step")?;
            let m = read_f64s(&mut r, n_params, "first moments")?;
            let v = read_f64s(&mut r, n_params, "second moments")?;
            Some(
                AdamState::from_flat(&net, &m, &v, step)
                    .map_err(|e| CheckpointError::Corrupt(e.to_string()))?,
            )
        }
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "unknown optimizer flag {other}"
            )))
        }
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        config_hash,
        meta,
        net,
        optimizer,
    })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Corrupt(format!("truncated while reading {what}"))
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{AdamConfig, Prng};

    fn trained_pair(seed: u64) -> (DenseNet, AdamState) {
        let mut rng = Prng::seed(seed);
        let mut net = DenseNet::random(&[3, 5, 2], &mut rng).unwrap();
        let mut state = AdamState::for_net(&net);
        let cfg = AdamConfig::default();
        for _ in 0..7 {
            let x = rng.normal_matrix(4, 3);
            let (y, trace) = net.forward_traced(&x).unwrap();
            let grads = net.backward(&trace, &y.clone()).unwrap();
            state.update(&mut net, &grads, &cfg).unwrap();
        }
        (net, state)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let (net, state) = trained_pair(42);
        let ckpt = Checkpoint {
            config_hash: [7u8; 32],
            meta: b"cond-layout-v1".to_vec(),
            net,
            optimizer: Some(state),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config_hash, ckpt.config_hash);
        assert_eq!(loaded.meta, ckpt.meta);
        assert_eq!(loaded.net.sizes(), ckpt.net.sizes());
        let (a, b) = (ckpt.net.flat_params(), loaded.net.flat_params());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (m1, v1, s1) = ckpt.optimizer.as_ref().unwrap().flat();
        let (m2, v2, s2) = loaded.optimizer.as_ref().unwrap().flat();
        assert_eq!(s1, s2);
        assert!(m1.iter().zip(&m2).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(v1.iter().zip(&v2).all(|(x, y)| x.to_bits() == y.to_bits()));

        // Re-saving the loaded checkpoint reproduces the file byte for byte.
        let path2 = dir.path().join("net2.ckpt");
        save_checkpoint(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_without_optimizer_loads_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.ckpt");
        let (net, _) = trained_pair(1);
        save_checkpoint(
            &path,
            &Checkpoint {
                config_hash: [0u8; 32],
                meta: Vec::new(),
                net,
                optimizer: None,
            },
        )
        .unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.optimizer.is_none());
    }

    #[test]
    fn truncated_file_reports_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let (net, state) = trained_pair(9);
        save_checkpoint(
            &path,
            &Checkpoint {
                config_hash: [1u8; 32],
                meta: vec![1, 2, 3],
                net,
                optimizer: Some(state),
            },
        )
        .unwrap();
        let full = std::fs::read(&path).unwrap();
        for cut in [5, 40, full.len() / 2, full.len() - 3] {
            std::fs::write(&path, &full[..cut]).unwrap();
            assert!(
                matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt(_))),
                "cut at {cut} should be corrupt"
            );
        }
    }

    #[test]
    fn wrong_magic_and_future_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let (net, _) = trained_pair(3);
        save_checkpoint(
            &path,
            &Checkpoint {
                config_hash: [0u8; 32],
                meta: Vec::new(),
                net,
                optimizer: None,
            },
        )
        .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let orig = bytes.clone();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt(_))));

        bytes = orig;
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Version { found: 99 })
        ));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.ckpt");
        let (net, _) = trained_pair(4);
        save_checkpoint(
            &path,
            &Checkpoint {
                config_hash: [0u8; 32],
                meta: Vec::new(),
                net,
                optimizer: None,
            },
        )
        .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0xAB);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt(_))));
    }
}
