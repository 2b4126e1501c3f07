//! Binary checkpoint format for parameter sets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   5 bytes  "DRLM1"
//! V, K, H, Z       u32 each
//! variant tag      u8 (0 rnnlm, 1 dclm, 2 drlm, 3 drlm-model2)
//! tensor count     u32
//! per tensor:      name_len u32, name UTF-8, rows u32, cols u32,
//!                  rows*cols f64 row-major
//! ```
//!
//! Tensors are written in the parameter walk order and validated by
//! name and shape on load, so a checkpoint round-trips bit for bit.

use crate::error::{Error, Result};
use crate::model::{DrlmParams, ModelDims, ModelVariant};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"DRLM1";

fn ckpt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize, path: &Path, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ckpt_err(path, format!("{what} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save(params: &DrlmParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    let d = params.dims;
    for dim in [d.vocab, d.embed, d.hidden, d.relations] {
        write_u32(&mut w, dim, path, "dimension")?;
    }
    w.write_all(&[params.variant.tag()])?;
    let names = params.tensor_names();
    let tensors = params.tensors();
    write_u32(&mut w, tensors.len(), path, "tensor count")?;
    for (name, tensor) in names.iter().zip(tensors) {
        write_u32(&mut w, name.len(), path, "name length")?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, tensor.rows(), path, "rows")?;
        write_u32(&mut w, tensor.cols(), path, "cols")?;
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DrlmParams> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| ckpt_err(path, "file shorter than the magic header"))?;
    if &magic != MAGIC {
        return Err(ckpt_err(path, "bad magic, not a model checkpoint"));
    }
    let vocab = read_u32(&mut r)? as usize;
    let embed = read_u32(&mut r)? as usize;
    let hidden = read_u32(&mut r)? as usize;
    let relations = read_u32(&mut r)? as usize;
    let dims = ModelDims::new(vocab, embed, hidden, relations)
        .map_err(|e| ckpt_err(path, format!("bad dimensions: {e}")))?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let variant = ModelVariant::from_tag(tag[0]).map_err(|e| ckpt_err(path, e.to_string()))?;
    let count = read_u32(&mut r)? as usize;

    let template = DrlmParams::zeros(dims, variant)
        .map_err(|e| ckpt_err(path, format!("inconsistent header: {e}")))?;
    let expected_names = template.tensor_names();
    if count != expected_names.len() {
        return Err(ckpt_err(
            path,
            format!(
                "checkpoint stores {count} tensors, variant {} with Z={relations} needs {}",
                variant.name(),
                expected_names.len()
            ),
        ));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in &expected_names {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 256 {
            return Err(ckpt_err(path, "tensor name longer than 256 bytes"));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name =
            String::from_utf8(name_buf).map_err(|_| ckpt_err(path, "tensor name is not UTF-8"))?;
        if &name != expected {
            return Err(ckpt_err(
                path,
                format!("expected tensor {expected:?}, found {name:?}"),
            ));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| ckpt_err(path, "tensor size overflows"))?;
        let mut data = vec![0f64; len];
        for slot in &mut data {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|_| ckpt_err(path, format!("truncated data for tensor {name:?}")))?;
            *slot = f64::from_le_bytes(buf);
        }
        tensors.push(
            Tensor::from_vec(rows, cols, data).map_err(|e| {
                ckpt_err(path, format!("tensor {name:?} has inconsistent shape: {e}"))
            })?,
        );
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ckpt_err(path, "trailing bytes after the last tensor"));
    }
    DrlmParams::from_tensors(dims, variant, tensors)
        .map_err(|e| ckpt_err(path, format!("shape mismatch: {e}")))
}
