//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DVCKPT\0\0"  u32 version
//! u64 len, config JSON
//! u64 feature width
//! u64 count, then per vocabulary word: u64 len, UTF-8 bytes
//! u64 count, then per parameter in declaration order:
//!     u64 len, name; u64 rows; u64 cols; rows*cols f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::vocab::RESERVED;
use crate::ingest::Vocabulary;
use crate::numerics::Matrix;

use super::model::CaptionModel;
use super::ModelConfig;

pub const MAGIC: &[u8; 8] = b"DVCKPT\0\0";
pub const VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {v}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl CaptionModel {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_json());
        put_u64(&mut out, self.feature_dim as u64);
        put_u64(&mut out, self.vocab.len() as u64);
        for w in self.vocab.words() {
            put_str(&mut out, w);
        }
        put_u64(&mut out, self.store.len() as u64);
        for (_, name, m) in self.store.iter() {
            put_str(&mut out, name);
            put_u64(&mut out, m.rows() as u64);
            put_u64(&mut out, m.cols() as u64);
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Rebuilds the architecture from the stored config and overwrites every
    /// parameter; names and shapes must match the declaration order.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config: ModelConfig = serde_json::from_str(&r.string()?)?;
        let feature_dim = r.len()?;
        let n_words = r.len()?;
        let words = (0..n_words).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        if words.len() < RESERVED.len() {
            return Err(Error::Checkpoint("vocabulary lacks the reserved tokens".into()));
        }
        let vocab = Vocabulary::from_words(&words[RESERVED.len()..])?;
        if vocab.words() != words.as_slice() {
            return Err(Error::Checkpoint("vocabulary header mismatch".into()));
        }
        let mut model = CaptionModel::new(config, vocab, feature_dim)?;
        let count = r.len()?;
        if count != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{count} parameters stored, architecture declares {}",
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = r.string()?;
            let (rows, cols) = (r.len()?, r.len()?);
            let want = model.store.get(id).shape();
            if name != model.store.name(id) || (rows, cols) != want {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {rows}x{cols} does not match {} {}x{}",
                    model.store.name(id),
                    want.0,
                    want.1
                )));
            }
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *model.store.get_mut(id) = Matrix::new(rows, cols, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CaptionModel {
        let cfg = ModelConfig {
            t: 8,
            heads: 2,
            mmt_layers: 1,
            defum_layers: 1,
            seed: 3,
            ..ModelConfig::desk()
        };
        let vocab = Vocabulary::from_words(&["a", "b", "c"]).unwrap();
        let mut m = CaptionModel::new(cfg, vocab, 4).unwrap();
        let id = m.params.mmt.pointer_bias;
        *m.store.get_mut(id) = Matrix::scalar(0.1 + 0.2);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = m.to_checkpoint_bytes();
        let back = CaptionModel::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab, m.vocab);
        for ((_, na, a), (_, nb, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(na, nb);
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{na}");
        }
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = model().to_checkpoint_bytes();
        assert!(CaptionModel::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(CaptionModel::from_checkpoint_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(
            CaptionModel::from_checkpoint_bytes(&bad),
            Err(Error::Checkpoint(_))
        ));
    }
}
