//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "EQNETCK\0"
//! version u32      1
//! count   u64      number of entries
//! entry*           sorted by key:
//!   key_len u32, key utf-8 bytes,
//!   ndim u32, dims u64 × ndim,
//!   data f64 × prod(dims)   (IEEE-754 bit patterns, so round-trips exactly)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EQNETCK\0";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, entries: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (key, t) in entries {
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor>> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(read_array(&mut r)?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let key_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut key = vec![0u8; key_len];
        r.read_exact(&mut key)
            .map_err(|e| Error::Checkpoint(format!("truncated key: {e}")))?;
        let key = String::from_utf8(key).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        out.insert(key, Tensor::new(shape, data)?);
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, entries: &BTreeMap<String, Tensor>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(values in proptest::collection::vec(any::<f64>(), 0..40), rows in 1usize..4) {
            let cols = values.len() / rows;
            let data = values[..rows * cols].to_vec();
            let mut map = BTreeMap::new();
            map.insert("feat.conv1.radial.w0".to_string(), Tensor::new(vec![rows, cols], data).unwrap());
            map.insert("scalar".to_string(), Tensor::scalar(values.first().copied().unwrap_or(0.0)));
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &map).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), map.len());
            for (k, t) in &map {
                let b = &back[k];
                prop_assert_eq!(b.shape(), t.shape());
                let same = b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"nonsense"[..]).is_err());
        let mut buf = Vec::new();
        let mut map = BTreeMap::new();
        map.insert("w".to_string(), Tensor::zeros(&[2, 2]));
        write_checkpoint(&mut buf, &map).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
