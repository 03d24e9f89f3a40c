//! `FTCP` checkpoint files: magic, u32 version, configuration text, then
//! every named tensor in lexicographic order as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::parse_config;
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::task::truncated;
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FTCP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| truncated(e, what))?;
    Ok(u32::from_le_bytes(b))
}

fn get_string<R: Read>(r: &mut R, len: usize, what: &str) -> Result<String> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() < len {
        return Err(Error::Length(format!("{what}: expected {len} bytes, found {}", buf.len())));
    }
    String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, cfg_text: &str, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u32(&mut w, cfg_text.len(), "config length")?;
    w.write_all(cfg_text.as_bytes())?;
    put_u32(&mut w, store.len(), "tensor count")?;
    for (name, t) in store.iter() {
        put_u32(&mut w, name.len(), "name length")?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.ndim(), "rank")?;
        for &d in t.shape() {
            put_u32(&mut w, d, "dimension")?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore, String)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| truncated(e, "magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = get_u32(&mut r, "version")?;
    if version > CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::Format("checkpoint version 0".into()));
    }
    let cfg_len = get_u32(&mut r, "config length")? as usize;
    let cfg = get_string(&mut r, cfg_len, "config text")?;
    let count = get_u32(&mut r, "tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let what = format!("tensor {i} of {count}");
        let name_len = get_u32(&mut r, &what)? as usize;
        let name = get_string(&mut r, name_len, &what)?;
        let ndim = get_u32(&mut r, &what)?;
        let shape: Vec<usize> = (0..ndim).map(|_| get_u32(&mut r, &what).map(|d| d as usize)).collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = Vec::new();
        (&mut r).take(numel as u64 * 8).read_to_end(&mut bytes)?;
        if bytes.len() < numel * 8 {
            return Err(Error::Length(format!("{what} (`{name}`): data ends after {} of {} bytes", bytes.len(), numel * 8)));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
        store.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok((store, cfg))
}

/// Rebuilds a model from stored shapes plus the head kind and ft flags of `cfg_text`.
pub fn model_from_checkpoint(store: &ParamStore, cfg_text: &str) -> Result<ModelState> {
    let cfg = parse_config(cfg_text)?;
    let flags = (!cfg.ft_blocks.is_empty()).then(|| cfg.ft_blocks.clone());
    let enc_cfg = EncoderState::infer_config(store, flags)?;
    ModelState::from_store(&enc_cfg, cfg.head, store)
}

pub fn save_checkpoint(model: &ModelState, cfg_text: &str, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&model.to_store(), cfg_text, f)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelState, String)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let (store, cfg) = read_checkpoint(f)?;
    Ok((model_from_checkpoint(&store, &cfg)?, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b", Tensor::vector(vec![1.0, -0.0, f64::MIN_POSITIVE])).unwrap();
        s.insert("a", Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 1e300]).unwrap()).unwrap();
        s.insert("c", Tensor::scalar(std::f64::consts::PI)).unwrap();
        s
    }

    #[test]
    fn round_trip_bits() {
        let mut buf = Vec::new();
        write_checkpoint(&sample_store(), "mode = ft\n", &mut buf).unwrap();
        let (s, cfg) = read_checkpoint(&buf[..]).unwrap();
        assert!(s.bit_eq(&sample_store()));
        assert_eq!(cfg, "mode = ft\n");
        // lexicographic order: "a" is written first
        assert_eq!(&buf[4 + 4 + 4 + 10 + 4 + 4..][..1], b"a");
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = Vec::new();
        write_checkpoint(&sample_store(), "", &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format(_))));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read_checkpoint(&v2[..]), Err(Error::Version { found: 2, supported: 1 })));
    }

    #[test]
    fn missing_tensor_is_length_error() {
        let mut buf = Vec::new();
        write_checkpoint(&sample_store(), "", &mut buf).unwrap();
        // claim 4 tensors where 3 are stored
        buf[12] = 4;
        assert!(matches!(read_checkpoint(&buf[..]), Err(Error::Length(_))));
        let mut buf2 = Vec::new();
        write_checkpoint(&sample_store(), "", &mut buf2).unwrap();
        buf2.truncate(buf2.len() - 3);
        assert!(matches!(read_checkpoint(&buf2[..]), Err(Error::Length(_))));
    }
}
