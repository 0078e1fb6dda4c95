//! SHA-256 helpers shared by every on-disk format.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First eight bytes of SHA-256, little endian. Used as the trailing
/// checksum of binary files.
pub fn digest64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

/// JSON with object keys sorted, independent of field or insertion order.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    // serde_json::Value uses a BTreeMap, so a round trip sorts every object.
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_vec(&v).expect("json value encodes")
}

pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&canonical_json(value))
}

/// Little-endian byte writer/reader used by the binary formats.
pub(crate) mod bin {
    use crate::error::{Error, Result};

    #[derive(Default)]
    pub struct Writer {
        pub buf: Vec<u8>,
    }

    impl Writer {
        pub fn bytes(&mut self, b: &[u8]) {
            self.buf.extend_from_slice(b);
        }
        pub fn u32(&mut self, v: u32) {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        pub fn u64(&mut self, v: u64) {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        pub fn f64s(&mut self, v: &[f64]) {
            self.buf.reserve(v.len() * 8);
            for x in v {
                self.buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        pub fn str(&mut self, s: &str) {
            self.u32(s.len() as u32);
            self.bytes(s.as_bytes());
        }
        /// Appends the trailing checksum and returns the finished file.
        pub fn finish(mut self) -> Vec<u8> {
            let d = super::digest64(&self.buf);
            self.u64(d);
            self.buf
        }
    }

    pub struct Reader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        /// Verifies the trailing checksum and returns a reader over the body.
        pub fn open(file: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
            if file.len() < 12 {
                return Err(Error::format("file truncated"));
            }
            if &file[..4] != magic {
                return Err(Error::format(format!(
                    "bad magic, expected {:?}",
                    String::from_utf8_lossy(magic)
                )));
            }
            let (body, tail) = file.split_at(file.len() - 8);
            let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
            let actual = super::digest64(body);
            if stored != actual {
                return Err(Error::DigestMismatch {
                    expected: format!("{stored:016x}"),
                    found: format!("{actual:016x}"),
                });
            }
            Ok(Self { buf: body, pos: 4 })
        }

        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self
                .pos
                .checked_add(n)
                .filter(|&e| e <= self.buf.len())
                .ok_or_else(|| Error::format("unexpected end of file"))?;
            let s = &self.buf[self.pos..end];
            self.pos = end;
            Ok(s)
        }
        pub fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
        }
        pub fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
        }
        pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
            let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("length overflow"))?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        }
        pub fn str(&mut self) -> Result<String> {
            let n = self.u32()? as usize;
            String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("invalid utf-8"))
        }
        pub fn finish(self) -> Result<()> {
            if self.pos != self.buf.len() {
                return Err(Error::format("trailing bytes after payload"));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_ignores_key_order() {
        let a = json!({"b": 1, "a": [1, 2], "c": {"y": 1, "x": 2}});
        let b: serde_json::Value =
            serde_json::from_str(r#"{"c": {"x": 2, "y": 1}, "a": [1, 2], "b": 1}"#).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(json_digest(&a), json_digest(&b));
    }

    #[test]
    fn binary_checksum_detects_corruption() {
        let mut w = bin::Writer::default();
        w.bytes(b"TEST");
        w.u64(42);
        let mut file = w.finish();
        let mut r = bin::Reader::open(&file, b"TEST").unwrap();
        assert_eq!(r.u64().unwrap(), 42);
        r.finish().unwrap();
        file[5] ^= 1;
        assert!(matches!(
            bin::Reader::open(&file, b"TEST"),
            Err(crate::Error::DigestMismatch { .. })
        ));
    }
}
