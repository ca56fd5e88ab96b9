//! `BVCK` model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BVCK" | u32 version=1 | u32 k | u32 D | u32 D_t | u32 C | u32 hidden | u32 subsets
//! per order r = 2..=k:  u32 n | n * r u32 frame indices
//! u32 tensor count
//! per tensor:           u32 name len | name | u32 ndims | ndims * u32 extents
//! per tensor, in order: product(extents) f32 values
//! ```

use std::path::Path;

use crate::backbone::model::{ModelDims, RelationModule, RelationModuleBank, TemporalModel};
use crate::binio::{self, AccessLog, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, Mlp, ParamId, ParamStore};

const MAGIC: &[u8; 4] = b"BVCK";
const VERSION: u32 = 1;

pub fn encode(model: &TemporalModel<f32>) -> Vec<u8> {
    let d = model.dims();
    let mut w = Writer::new();
    w.raw(MAGIC)
        .u32(VERSION)
        .usize(d.frames)
        .usize(d.dim)
        .usize(d.clip_dim)
        .usize(d.classes)
        .usize(d.hidden)
        .usize(d.subsets);
    for m in model.bank().modules() {
        w.usize(m.subsets.len());
        for s in &m.subsets {
            for &j in s {
                w.usize(j);
            }
        }
    }
    let params = model.params();
    w.usize(params.len());
    for (name, t) in params.named() {
        w.string(name).usize(t.shape().len());
        for &e in t.shape() {
            w.usize(e);
        }
    }
    for t in params.iter() {
        w.f32s(t.data());
    }
    w.finish()
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TemporalModel<f32>> {
    let mut r = Reader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let dims = ModelDims {
        frames: r.usize("k")?,
        dim: r.usize("D")?,
        clip_dim: r.usize("D_t")?,
        classes: r.usize("C")?,
        hidden: r.usize("hidden width")?,
        subsets: r.usize("subsets per order")?,
    };
    if dims.frames < 3 || dims.frames > 4096 {
        return Err(r.fail(format!("implausible frame count {}", dims.frames)));
    }
    let mut subsets = Vec::with_capacity(dims.frames - 1);
    for order in 2..=dims.frames {
        let n = r.usize("subset count")?;
        let mut per = Vec::new();
        for _ in 0..n {
            let mut s = Vec::with_capacity(order);
            for _ in 0..order {
                s.push(r.usize("frame index")?);
            }
            per.push(s);
        }
        subsets.push(per);
    }
    let count = r.usize("tensor count")?;
    let mut manifest = Vec::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let nd = r.usize("ndims")?;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(r.usize("extent")?);
        }
        manifest.push((name, shape));
    }
    let mut params = ParamStore::new();
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let at = r.offset();
        let data = r.f32s(n, &name)?;
        let t = DenseTensor::new(shape, data).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: at as u64,
            msg: format!("tensor {name}: {e}"),
        })?;
        params.insert(name, t);
    }
    if !r.at_end() {
        return Err(r.fail("trailing bytes after checkpoint"));
    }

    let lookup = |prefix: &str| -> Result<Mlp> {
        let mut layers = Vec::new();
        for i in 0.. {
            let w = find(&params, &format!("{prefix}.{i}.weight"));
            let b = find(&params, &format!("{prefix}.{i}.bias"));
            match (w, b) {
                (Some(w), Some(b)) => layers.push((w, b)),
                _ => break,
            }
        }
        Mlp::from_params(layers, &params).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("{prefix}: {e}"),
        })
    };
    let mut modules = Vec::new();
    for (i, s) in subsets.into_iter().enumerate() {
        let order = i + 2;
        modules.push(RelationModule {
            order,
            subsets: s,
            mlp: lookup(&format!("relation{order}"))?,
        });
    }
    let head = lookup("head")?;
    let bank = RelationModuleBank::new(dims.frames, modules)?;
    TemporalModel::from_parts(dims, bank, head, params)
}

fn find(params: &ParamStore<f32>, name: &str) -> Option<ParamId> {
    params.ids().find(|&id| params.name(id) == name)
}

pub fn save(model: &TemporalModel<f32>, path: &Path) -> Result<()> {
    binio::write_file(path, &encode(model))
}

pub fn load(path: &Path, log: Option<&AccessLog>) -> Result<TemporalModel<f32>> {
    decode(&binio::read_file(path, log)?, path)
}
