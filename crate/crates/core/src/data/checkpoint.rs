//! Bit-exact model persistence.
//!
//! Layout: magic `KSNC`, little-endian u32 version, u32 entry count; per
//! entry a u16 name length + UTF-8 name, a u8 dtype code (0 = f32), a u8
//! rank, rank x u64 dims, then raw little-endian f32 values; the file ends
//! with a u32 CRC-32 (IEEE) of all preceding bytes.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::params::Parameters;
use crate::numerics::tensor::{Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"KSNC";
const DTYPE_F32: u8 = 0;

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn crc32(bytes: &[u8]) -> u32 {
    // CRC-32/ISO-HDLC, the zlib/PNG polynomial.
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn encode(entries: &[CheckpointEntry]) -> Result<Vec<u8>> {
    let mut seen = std::collections::HashSet::new();
    for e in entries {
        if !seen.insert(&e.name) {
            return Err(Error::invalid(format!("duplicate checkpoint name {}", e.name)));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let numel: usize = e.shape.iter().product();
        if numel != e.values.len() {
            return Err(Error::shape(format!(
                "entry {}: shape {:?} vs {} values",
                e.name,
                e.shape,
                e.values.len()
            )));
        }
        if e.name.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("entry name too long: {}", e.name)));
        }
        if e.shape.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("entry rank too large: {}", e.name)));
        }
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(DTYPE_F32);
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Serialize entries to `path`. The write happens under an exclusive file
/// lock and lands in one pass, so concurrent writers cannot interleave.
pub fn save_checkpoint(entries: &[CheckpointEntry], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(entries)?;
    let mut file = std::fs::File::create(path.as_ref())?;
    file.lock()?;
    file.write_all(&bytes)?;
    file.flush()?;
    file.unlock()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<CheckpointEntry>> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < MAGIC.len() + 8 + 4 {
        return Err(Error::CorruptCheckpoint("file shorter than header".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(Error::CorruptCheckpoint(format!(
            "crc mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32_le()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32_le()? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = r.u16_le()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("entry name is not UTF-8".into()))?;
        if !seen.insert(name.clone()) {
            return Err(Error::CorruptCheckpoint(format!("duplicate entry {name}")));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::CorruptCheckpoint(format!(
                "unknown dtype code {dtype} for {name}"
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64_le()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after last entry",
            body.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Snapshot a parameter arena in insertion order.
pub fn params_to_entries<S: Scalar>(params: &Parameters<S>) -> Vec<CheckpointEntry> {
    params
        .iter()
        .map(|(_, p)| CheckpointEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.to_f32_vec(),
        })
        .collect()
}

/// Restore parameter values from entries. Every parameter must be present
/// with its exact shape and no entry may be left over; offenders are listed.
pub fn load_entries_into_params<S: Scalar>(
    entries: &[CheckpointEntry],
    params: &mut Parameters<S>,
) -> Result<()> {
    let mut by_name: std::collections::HashMap<&str, &CheckpointEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut missing = Vec::new();
    let ids: Vec<_> = params.ids().collect();
    for id in &ids {
        let name = params.get(*id).name.clone();
        match by_name.remove(name.as_str()) {
            Some(e) => {
                if e.shape != params.get(*id).value.shape() {
                    return Err(Error::shape(format!(
                        "checkpoint entry {name}: shape {:?} != parameter shape {:?}",
                        e.shape,
                        params.get(*id).value.shape()
                    )));
                }
            }
            None => missing.push(name),
        }
    }
    let extra: Vec<String> = by_name.keys().map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut extra = extra;
        extra.sort();
        return Err(Error::ParamNameMismatch { missing, extra });
    }
    // Validated; now write the values.
    let by_name: std::collections::HashMap<&str, &CheckpointEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for id in ids {
        let name = params.get(id).name.clone();
        let e = by_name[name.as_str()];
        let data: Vec<S> = e.values.iter().map(|&v| S::from_f64(v as f64)).collect();
        params.get_mut(id).value = Tensor::new(e.shape.clone(), data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeededRng;

    fn sample_entries() -> Vec<CheckpointEntry> {
        let mut rng = SeededRng::new(3);
        let mut v1 = vec![0.0f64; 12];
        let mut v2 = vec![0.0f64; 5];
        rng.fill_uniform(&mut v1, -2.0, 2.0);
        rng.fill_uniform(&mut v2, -2.0, 2.0);
        vec![
            CheckpointEntry {
                name: "encoder.conv1.w".into(),
                shape: vec![2, 2, 3],
                values: v1.iter().map(|&v| v as f32).collect(),
            },
            CheckpointEntry {
                name: "encoder.conv1.b".into(),
                shape: vec![5],
                values: v2.iter().map(|&v| v as f32).collect(),
            },
        ]
    }

    #[test]
    fn roundtrip_is_bitwise_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ksnc");
        let entries = sample_entries();
        save_checkpoint(&entries, &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(entries, loaded);
        for (a, b) in entries.iter().zip(&loaded) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // save -> load -> save is byte-identical
        let p2 = dir.path().join("m2.ksnc");
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ksnc");
        save_checkpoint(&sample_entries(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [1usize, 4, bytes.len() / 2, bytes.len() - 1] {
            let q = dir.path().join(format!("cut{cut}.ksnc"));
            std::fs::write(&q, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_checkpoint(&q), Err(Error::CorruptCheckpoint(_))),
                "cut at {cut} not detected"
            );
        }
    }

    #[test]
    fn corruption_and_version_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ksnc");
        save_checkpoint(&sample_entries(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // flip a payload byte
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(Error::CorruptCheckpoint(_))
        ));

        // bump the version field (and fix the crc so only the version trips)
        let mut bytes = {
            let entries = sample_entries();
            super::encode(&entries).unwrap()
        };
        bytes[4] = 9;
        let body_len = bytes.len() - 4;
        let crc = super::crc32(&bytes[..body_len]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));
    }

    #[test]
    fn mismatched_architecture_lists_offenders() {
        let mut params = Parameters::<f32>::new();
        params.add("a.w", Tensor::zeros(&[2])).unwrap();
        params.add("b.w", Tensor::zeros(&[3])).unwrap();
        let entries = vec![
            CheckpointEntry {
                name: "a.w".into(),
                shape: vec![2],
                values: vec![1.0, 2.0],
            },
            CheckpointEntry {
                name: "c.w".into(),
                shape: vec![1],
                values: vec![5.0],
            },
        ];
        match load_entries_into_params(&entries, &mut params) {
            Err(Error::ParamNameMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["b.w".to_string()]);
                assert_eq!(extra, vec!["c.w".to_string()]);
            }
            other => panic!("expected name mismatch, got {other:?}"),
        }
        // failed load must not have touched values
        let first = params.ids().next().unwrap();
        assert_eq!(params.get(first).value.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = Parameters::<f32>::new();
        params.add("a.w", Tensor::zeros(&[2])).unwrap();
        let entries = vec![CheckpointEntry {
            name: "a.w".into(),
            shape: vec![3],
            values: vec![0.0; 3],
        }];
        assert!(load_entries_into_params(&entries, &mut params).is_err());
    }
}
