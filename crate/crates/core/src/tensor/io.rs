//! Binary tensor format and named-tensor checkpoints.
//!
//! A tensor blob is: magic `GBET`, version byte 1, a rank byte, `rank`
//! little-endian u32 dimensions, then the row-major f32 payload in little
//! endian. A checkpoint is the concatenation of such blobs plus a JSON
//! index file mapping tensor name to byte offset.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

pub const MAGIC: &[u8; 4] = b"GBET";
pub const VERSION: u8 = 1;

pub fn write_tensor(w: &mut impl Write, t: &Tensor<f32>) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::Usage(format!("tensor rank {} exceeds format limit", t.rank())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, t.rank() as u8])?;
    for &d in t.shape() {
        if d > u32::MAX as usize {
            return Err(Error::Usage(format!("dimension {d} exceeds format limit")));
        }
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one tensor blob. `label` names the source in corrupt-file errors.
pub fn read_tensor(r: &mut impl Read, label: &str) -> Result<Tensor<f32>> {
    let corrupt = |reason: String| Error::CorruptFile {
        path: label.to_string(),
        reason,
    };
    let mut head = [0u8; 6];
    r.read_exact(&mut head)
        .map_err(|e| corrupt(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(corrupt(format!("bad magic {:?}", &head[..4])));
    }
    if head[4] != VERSION {
        return Err(corrupt(format!("unsupported version {}", head[4])));
    }
    let rank = head[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut dim = [0u8; 4];
    for _ in 0..rank {
        r.read_exact(&mut dim)
            .map_err(|e| corrupt(format!("truncated dims: {e}")))?;
        shape.push(u32::from_le_bytes(dim) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)
        .map_err(|e| corrupt(format!("truncated payload: {e}")))?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
}

pub fn write_tensor_file(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r, &path.display().to_string())
}

/// Write named tensors as one concatenated blob file plus a JSON index
/// (name → byte offset) at `index_path`.
pub fn write_checkpoint(
    blob_path: &Path,
    index_path: &Path,
    named: &[(String, &Tensor<f32>)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(blob_path)?);
    let mut index: BTreeMap<String, u64> = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in named {
        index.insert(name.clone(), offset);
        write_tensor(&mut w, t)?;
        offset += (6 + 4 * t.rank() + 4 * t.numel()) as u64;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(&index).expect("string map serializes");
    std::fs::write(index_path, json)?;
    Ok(())
}

/// Read a checkpoint back as name → tensor, validating every blob.
pub fn read_checkpoint(blob_path: &Path, index_path: &Path) -> Result<BTreeMap<String, Tensor<f32>>> {
    let raw = std::fs::read_to_string(index_path)?;
    let index: BTreeMap<String, u64> = serde_json::from_str(&raw).map_err(|source| Error::Json {
        path: index_path.display().to_string(),
        source,
    })?;
    let mut file = File::open(blob_path)?;
    let mut out = BTreeMap::new();
    for (name, offset) in index {
        file.seek(SeekFrom::Start(offset))?;
        let mut r = BufReader::new(&mut file);
        let label = format!("{}#{}", blob_path.display(), name);
        out.insert(name, read_tensor(&mut r, &label)?);
    }
    Ok(out)
}
