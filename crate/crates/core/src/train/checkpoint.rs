//! Little-endian named-tensor container: `"VTI1"`, u32 version, u32 count,
//! then per tensor u16 name length, name, u8 rank, u32 dims and f32 data,
//! closed by the CRC-32 of everything before it.

use std::path::Path;

use vti_tensor::Tensor;

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"VTI1";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| CoreError::Format {
            offset: out.len(),
            detail: format!("tensor name of {} bytes", name.len()),
        })?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CoreError::Format {
                offset: self.pos,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CoreError::Format {
            offset: 0,
            detail: "bad magic, not a checkpoint".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(CoreError::Format {
            offset: bytes.len(),
            detail: "truncated header".into(),
        });
    }
    let payload = &bytes[..bytes.len() - 4];
    let mut r = Reader { bytes: payload, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CoreError::Format {
            offset: 4,
            detail: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let start = r.pos;
        let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CoreError::Format {
                offset: start + 2,
                detail: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CoreError::Format {
            offset: start,
            detail: format!("tensor {name:?}: {e}"),
        })?;
        tensors.push((name, t));
    }
    if r.pos != payload.len() {
        return Err(CoreError::Format {
            offset: r.pos,
            detail: "trailing bytes after last tensor".into(),
        });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if stored != crc32fast::hash(payload) {
        return Err(CoreError::Format {
            offset: payload.len(),
            detail: "CRC mismatch".into(),
        });
    }
    Ok(tensors)
}

pub fn save_tensors(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    std::fs::write(path, encode(tensors)?).map_err(|e| CoreError::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<NamedTensors> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode(&bytes)
}

/// Splits a u64 into four u16 pieces, each exact in f32.
pub fn u64_to_f32s(x: u64) -> [f32; 4] {
    [0, 16, 32, 48].map(|s| ((x >> s) & 0xffff) as f32)
}

pub fn f32s_to_u64(p: &[f32]) -> u64 {
    p.iter()
        .take(4)
        .enumerate()
        .fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        vec![
            (
                "a".into(),
                Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap(),
            ),
            ("b.c".into(), Tensor::new(vec![1], vec![7.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bitwise() {
        let back = decode(&encode(&sample()).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for ((na, ta), (nb, tb)) in back.iter().zip(&sample()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"VTI1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &1u16.to_le_bytes());
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes[15], 2);
    }

    #[test]
    fn rejects_bad_magic_version_truncation_and_corruption() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CoreError::Format { offset: 0, .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        let err = decode(&bad).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        let err = decode(&bytes[..30]).unwrap_err();
        match err {
            CoreError::Format { offset, detail } => {
                assert!(offset <= 30 && detail.contains("truncated"), "{offset} {detail}");
            }
            other => panic!("{other}"),
        }

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 1;
        assert!(decode(&bad).unwrap_err().to_string().contains("CRC"));
    }

    #[test]
    fn u64_pieces() {
        for x in [0u64, 1, 65535, 65536, u64::MAX, 0x1234_5678_9abc_def0] {
            assert_eq!(f32s_to_u64(&u64_to_f32s(x)), x);
        }
    }
}
