//! Binary checkpoint format. Layout, all integers little-endian:
//!
//! ```text
//! magic  b"HSCT"
//! version u32 (= 1)
//! config_len u64, config JSON bytes (opaque echo of the run config)
//! tensor_count u64
//! per tensor: name_len u64, name bytes, dims 4×u64, data f32 × len
//! optim_flag u8
//! if 1: step u64, then per tensor (same order): m f32 × len, v f32 × len
//! ```
//!
//! Round trips are byte-exact: save(load(save(x))) = save(x).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};
use crate::train::optim::OptimState;

const MAGIC: &[u8; 4] = b"HSCT";
const VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    ps: &ParamStore<f32>,
    config_json: &str,
    optim: Option<&OptimState>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(config_json.as_bytes())?;
    w.write_all(&(ps.len() as u64).to_le_bytes())?;
    for p in ps.iter() {
        w.write_all(&(p.name.len() as u64).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        for d in p.value.shape().0 {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match optim {
        Some(state) => {
            w.write_all(&[1u8])?;
            w.write_all(&state.step.to_le_bytes())?;
            for p in ps.iter() {
                for v in &p.m {
                    w.write_all(&v.to_le_bytes())?;
                }
                for v in &p.v {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

pub struct CheckpointData {
    pub config_json: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optim_step: Option<u64>,
    pub moments: Option<Vec<(Vec<f32>, Vec<f32>)>>,
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{what}: {e}"))))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut version = [0u8; 4];
    read_exact(&mut r, &mut version, "version")?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_len = read_u64(&mut r, "config length")? as usize;
    let mut config = vec![0u8; config_len];
    read_exact(&mut r, &mut config, "config echo")?;
    let config_json = String::from_utf8(config)
        .map_err(|_| Error::Format("config echo is not valid UTF-8".into()))?;
    let count = read_u64(&mut r, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = read_u64(&mut r, "name length")? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, "tensor name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format(format!("tensor {i} name is not UTF-8")))?;
        let dims = [
            read_u64(&mut r, "dim")? as usize,
            read_u64(&mut r, "dim")? as usize,
            read_u64(&mut r, "dim")? as usize,
            read_u64(&mut r, "dim")? as usize,
        ];
        let shape = Shape(dims);
        let data = read_f32s(&mut r, shape.len(), &format!("tensor {name}"))?;
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag, "optimizer flag")?;
    let (optim_step, moments) = if flag[0] == 1 {
        let step = read_u64(&mut r, "optimizer step")?;
        let mut moments = Vec::with_capacity(count);
        for (name, t) in &tensors {
            let m = read_f32s(&mut r, t.len(), &format!("m of {name}"))?;
            let v = read_f32s(&mut r, t.len(), &format!("v of {name}"))?;
            moments.push((m, v));
        }
        (Some(step), Some(moments))
    } else {
        (None, None)
    };
    Ok(CheckpointData {
        config_json,
        tensors,
        optim_step,
        moments,
    })
}

/// Load tensor values (and moments when present) into an existing store.
/// The store must expose exactly the checkpoint's names with identical
/// shapes; any mismatch is a hard error naming the tensor.
pub fn apply_checkpoint(ps: &mut ParamStore<f32>, data: &CheckpointData) -> Result<()> {
    if data.tensors.len() != ps.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model has {}",
            data.tensors.len(),
            ps.len()
        )));
    }
    for (name, tensor) in &data.tensors {
        let id = ps
            .lookup(name)
            .ok_or_else(|| Error::Format(format!("checkpoint tensor {name} unknown to model")))?;
        if ps.value(id).shape() != tensor.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {name} has shape {}, model expects {}",
                tensor.shape(),
                ps.value(id).shape()
            )));
        }
        ps.set_value(id, tensor.clone());
    }
    if let Some(moments) = &data.moments {
        for ((name, _), (m, v)) in data.tensors.iter().zip(moments.iter()) {
            let id = ps.lookup(name).expect("checked above");
            let p = ps.get_mut(id);
            p.m = m.clone();
            p.v = v.clone();
        }
    }
    Ok(())
}

/// Build a standalone store from checkpoint contents (used for imports).
pub fn store_from_checkpoint(data: &CheckpointData) -> Result<ParamStore<f32>> {
    let mut ps = ParamStore::new();
    for (name, tensor) in &data.tensors {
        ps.register(name.clone(), tensor.clone(), true)?;
    }
    Ok(ps)
}
