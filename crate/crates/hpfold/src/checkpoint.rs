//! HPQN checkpoint container: little-endian binary with a JSON descriptor
//! followed by named f64 records. Round-trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::networks::{build_network, NetworkConfig, NetworkError, QNetwork};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HPQN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint record {name}: {detail}")]
    BadRecord { name: String, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad descriptor: {0}")]
    BadDescriptor(#[from] serde_json::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("checkpoint is missing weight {0}")]
    MissingWeight(String),
}

/// Identifies the network (and the sequence it was trained on) so
/// evaluation can reconstruct everything from the file alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Descriptor {
    pub network: NetworkConfig,
    pub sequence_notation: String,
    pub sequence_id: Option<String>,
    /// Trainer state blob, present only in trainer checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Record {
    pub fn scalar(name: &str, v: f64) -> Self {
        Record { name: name.to_string(), dims: vec![1], data: vec![v] }
    }

    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        Record { name: name.to_string(), dims: t.shape().to_vec(), data: t.data().clone() }
    }

    /// Stores raw u64 words bit-cast into f64 slots (no arithmetic is ever
    /// performed on them, so the payload survives exactly).
    pub fn from_words(name: &str, words: &[u64]) -> Self {
        Record {
            name: name.to_string(),
            dims: vec![words.len()],
            data: words.iter().map(|w| f64::from_bits(*w)).collect(),
        }
    }

    pub fn to_words(&self) -> Vec<u64> {
        self.data.iter().map(|v| v.to_bits()).collect()
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub descriptor: Descriptor,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Rebuilds the network named by the descriptor and loads its weights.
    pub fn restore_network(&self) -> Result<Box<dyn QNetwork>, CheckpointError> {
        let net = build_network(&self.descriptor.network)?;
        for (name, tensor) in net.state_tensors() {
            let rec = self.get(&name).ok_or_else(|| CheckpointError::MissingWeight(name.clone()))?;
            if rec.dims != tensor.shape() {
                return Err(CheckpointError::BadRecord {
                    name,
                    detail: format!("dims {:?} vs expected {:?}", rec.dims, tensor.shape()),
                });
            }
            tensor.data_mut().copy_from_slice(&rec.data);
        }
        Ok(net)
    }
}

pub fn save(path: &Path, descriptor: &Descriptor, records: &[Record]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let desc = serde_json::to_vec(descriptor)?;
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(&desc)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for rec in records {
        let name = rec.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(rec.dims.len() as u32).to_le_bytes())?;
        for d in &rec.dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        debug_assert_eq!(rec.dims.iter().product::<usize>(), rec.data.len());
        for v in &rec.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadHeader(format!("magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let desc_len = read_u32(&mut r)? as usize;
    let mut desc = vec![0u8; desc_len];
    r.read_exact(&mut desc)?;
    let descriptor: Descriptor = serde_json::from_slice(&desc)?;
    let count = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| CheckpointError::BadHeader(format!("record name not utf-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        records.push(Record { name, dims, data });
    }
    Ok(Checkpoint { descriptor, records })
}

/// Saves a bare network (weights only, no trainer state).
pub fn save_network(
    path: &Path,
    net: &dyn QNetwork,
    sequence_notation: &str,
    sequence_id: Option<&str>,
) -> Result<(), CheckpointError> {
    let descriptor = Descriptor {
        network: net.config().clone(),
        sequence_notation: sequence_notation.to_string(),
        sequence_id: sequence_id.map(str::to_string),
        trainer: None,
    };
    let records: Vec<Record> = net
        .state_tensors()
        .iter()
        .map(|(name, t)| Record::from_tensor(name, t))
        .collect();
    save(path, &descriptor, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{ArchKind, NetworkConfig};
    use tempfile::tempdir;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.hpqn");
        let cfg = NetworkConfig::desk(ArchKind::FfnnR, 5, 21);
        let net = build_network(&cfg).unwrap();
        save_network(&path, net.as_ref(), "HPHPH", None).unwrap();
        let ck = load(&path).unwrap();
        let restored = ck.restore_network().unwrap();
        for ((na, ta), (nb, tb)) in net.state_tensors().iter().zip(restored.state_tensors().iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{na}");
        }
        assert_eq!(ck.descriptor.sequence_notation, "HPHPH");
    }

    #[test]
    fn word_records_preserve_all_bit_patterns() {
        let words = vec![0u64, u64::MAX, 0x7ff8_0000_0000_0001, 42];
        let rec = Record::from_words("rng/state", &words);
        assert_eq!(rec.to_words(), words);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.hpqn");
        std::fs::write(&path, b"NOPE rest of file").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadHeader(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.hpqn");
        let cfg = NetworkConfig::desk(ArchKind::Ffnn, 4, 1);
        let net = build_network(&cfg).unwrap();
        save_network(&path, net.as_ref(), "HPHH", None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Io(_))));
    }
}
