//! Binary classifier files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PNCH1"            magic
//! u8                  activation (0 relu, 1 tanh)
//! u32                 patch size
//! u32                 channels
//! u32                 number of layer sizes L
//! u32 x L             layer sizes, input first, output (1) last
//! u64                 parameter count
//! f32 x count         parameters, layer by layer: weights (out x in,
//!                     row-major) then biases
//! ```

use std::fs;
use std::path::Path;

use super::mlp::{param_count_for, Activation, Classifier};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"PNCH1";

/// Serializes `classifier`. Parameters are narrowed to `f32`.
pub fn encode(classifier: &Classifier) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * classifier.params().len());
    out.extend_from_slice(MAGIC);
    out.push(classifier.activation().code());
    out.extend_from_slice(&(classifier.patch_size() as u32).to_le_bytes());
    out.extend_from_slice(&(classifier.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(classifier.layer_sizes().len() as u32).to_le_bytes());
    for &s in classifier.layer_sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(classifier.params().len() as u64).to_le_bytes());
    for &p in classifier.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data("classifier file is truncated"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Classifier> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::data("not a classifier file (bad magic)"));
    }
    let activation = Activation::from_code(r.take(1)?[0])?;
    let patch_size = r.u32()?;
    let channels = r.u32()?;
    let n_layers = r.u32()?;
    if n_layers > 64 {
        return Err(Error::data(format!("implausible layer count {n_layers}")));
    }
    let layer_sizes = (0..n_layers).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    if count != param_count_for(&layer_sizes) {
        return Err(Error::data(format!(
            "parameter count {count} does not match layer sizes {layer_sizes:?}"
        )));
    }
    let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::data("parameter count overflows"))?)?;
    if r.pos != bytes.len() {
        return Err(Error::data("trailing bytes after classifier parameters"));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Classifier::from_parts(patch_size, channels, layer_sizes, activation, params)
}

pub fn save(classifier: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(classifier)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Classifier> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassifierConfig;

    #[test]
    fn round_trip_through_f32() {
        let cfg = ClassifierConfig { hidden: vec![5, 3], activation: Activation::Tanh };
        let clf = Classifier::new(3, 2, &cfg, 4).unwrap();
        let bytes = encode(&clf);
        assert_eq!(&bytes[..5], b"PNCH1");
        assert_eq!(bytes[5], 1);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.layer_sizes(), clf.layer_sizes());
        for (a, b) in back.params().iter().zip(clf.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_corrupt_files() {
        let clf = Classifier::new(1, 2, &ClassifierConfig { hidden: vec![2], ..Default::default() }, 0).unwrap();
        let bytes = encode(&clf);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
