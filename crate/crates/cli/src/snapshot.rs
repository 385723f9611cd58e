//! Key-space snapshots: task keys with their boundaries plus the meta key
//! pool, as JSON or as a versioned little-endian binary file.
//!
//! Binary layout, all integers `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic      4 bytes  "DKEY"
//! version    u32      1
//! dim        u32      query dimension
//! tasks      u32      number of task keys
//! meta       u32      number of meta keys
//! select     u32      meta keys selected per query
//! per task:  task_id u32, has_boundary u32 (0 or 1), boundary f64, key dim x f64
//! per meta:  key dim x f64
//! ```
//!
//! A missing boundary is stored as `has_boundary = 0` with boundary `0.0`.

use std::io::{self, Read, Write};

use diana_core::keyspace::{MetaKeyPool, TaskKey};
use diana_core::learner::TrainedState;
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"DKEY";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySnapshot {
    pub version: u32,
    pub query_dim: usize,
    pub meta_select: usize,
    pub task_keys: Vec<TaskKey>,
    pub meta_keys: Vec<Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a key snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    values.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

impl KeySnapshot {
    pub fn new(keys: &[TaskKey], pool: &MetaKeyPool) -> Self {
        Self {
            version: VERSION,
            query_dim: pool.keys().first().map_or(0, Vec::len),
            meta_select: pool.select_size(),
            task_keys: keys.to_vec(),
            meta_keys: pool.keys().to_vec(),
        }
    }

    pub fn from_state(state: &TrainedState) -> Self {
        Self::new(&state.keys, &state.pool)
    }

    pub fn pool(&self) -> diana_core::Result<MetaKeyPool> {
        MetaKeyPool::new(self.meta_keys.clone(), self.meta_select)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        put_u32(&mut w, VERSION as usize)?;
        put_u32(&mut w, self.query_dim)?;
        put_u32(&mut w, self.task_keys.len())?;
        put_u32(&mut w, self.meta_keys.len())?;
        put_u32(&mut w, self.meta_select)?;
        for k in &self.task_keys {
            put_u32(&mut w, k.task_id)?;
            put_u32(&mut w, usize::from(k.boundary.is_some()))?;
            put_f64s(&mut w, &[k.boundary.unwrap_or(0.0)])?;
            put_f64s(&mut w, &k.key)?;
        }
        for k in &self.meta_keys {
            put_f64s(&mut w, k)?;
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, SnapshotError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(SnapshotError::Version(version));
        }
        let dim = get_u32(&mut r)? as usize;
        let tasks = get_u32(&mut r)? as usize;
        let meta = get_u32(&mut r)? as usize;
        let meta_select = get_u32(&mut r)? as usize;
        let mut task_keys = Vec::with_capacity(tasks);
        for _ in 0..tasks {
            let task_id = get_u32(&mut r)? as usize;
            let has = get_u32(&mut r)?;
            let boundary = get_f64(&mut r)?;
            let key = get_f64s(&mut r, dim)?;
            let boundary = match has {
                0 => None,
                1 => Some(boundary),
                x => return Err(SnapshotError::Malformed(format!("boundary flag {x}"))),
            };
            let mut k = TaskKey::new(task_id, key).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
            k.boundary = boundary;
            task_keys.push(k);
        }
        let meta_keys = (0..meta)
            .map(|_| get_f64s(&mut r, dim))
            .collect::<io::Result<Vec<_>>>()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(SnapshotError::Malformed(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            version,
            query_dim: dim,
            meta_select,
            task_keys,
            meta_keys,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KeySnapshot {
        let mut a = TaskKey::new(0, vec![0.5, -1.0, 2.0]).unwrap();
        a.boundary = Some(0.125);
        let b = TaskKey::new(1, vec![1.0, 0.0, f64::MIN_POSITIVE]).unwrap();
        let pool = MetaKeyPool::new(vec![vec![1.0, 2.0, 3.0], vec![-0.0, 1e-300, 7.0]], 1).unwrap();
        KeySnapshot::new(&[a, b], &pool)
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let s = sample();
        let mut bytes = Vec::new();
        s.write_binary(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 24 + 2 * (8 + 8 + 24) + 2 * 24);
        assert_eq!(&bytes[..4], b"DKEY");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let back = KeySnapshot::read_binary(&bytes[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.meta_keys[1][0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn json_round_trip() {
        let s = sample();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<KeySnapshot>(&text).unwrap(), s);
    }

    #[test]
    fn rejects_corrupt_input() {
        let mut bytes = Vec::new();
        sample().write_binary(&mut bytes).unwrap();
        assert!(matches!(KeySnapshot::read_binary(&b"NOPE"[..]), Err(SnapshotError::BadMagic)));
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(KeySnapshot::read_binary(&wrong_version[..]), Err(SnapshotError::Version(9))));
        assert!(KeySnapshot::read_binary(&bytes[..bytes.len() - 1]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(KeySnapshot::read_binary(&trailing[..]).is_err());
    }
}
