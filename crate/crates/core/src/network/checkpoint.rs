//! Binary checkpoints: a versioned header, JSON metadata and named
//! little-endian `f64` arrays.
//!
//! Layout: magic `FRDCKPT\0`, `u32` version, `u64` metadata length, metadata
//! bytes, `u32` array count, then per array `u32` name length, name bytes,
//! `u32` rank, `u64` extents, `f64` data in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::field::{BoundaryEncoder, FieldModel};
use super::resnet::{ResNetConfig, ResNetParams};
use super::NetworkError;

const MAGIC: &[u8; 8] = b"FRDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub arrays: Vec<(String, Array2<f64>)>,
}

fn format_err(msg: impl Into<String>) -> NetworkError {
    NetworkError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NetworkError> {
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| format_err(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(meta.len() as u64)?;
        w.write_all(&meta)?;
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for (name, a) in &self.arrays {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(2)?;
            w.write_u64::<LittleEndian>(a.nrows() as u64)?;
            w.write_u64::<LittleEndian>(a.ncols() as u64)?;
            for v in a.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NetworkError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a checkpoint file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.read_u64::<LittleEndian>()? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| format_err(e.to_string()))?;
        let count = r.read_u32::<LittleEndian>()?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| format_err(e.to_string()))?;
            let rank = r.read_u32::<LittleEndian>()?;
            if rank != 2 {
                return Err(format_err(format!("array `{name}` has rank {rank}, expected 2")));
            }
            let rows = r.read_u64::<LittleEndian>()? as usize;
            let cols = r.read_u64::<LittleEndian>()? as usize;
            let mut data = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            let a = Array2::from_shape_vec((rows, cols), data).map_err(|e| format_err(e.to_string()))?;
            arrays.push((name, a));
        }
        Ok(Checkpoint { metadata, arrays })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenerationLayout {
    nets: Vec<ResNetConfig>,
}

/// Appends a model (all generations) under `prefix` and returns its layout.
pub fn store_model(ckpt: &mut Checkpoint, prefix: &str, model: &FieldModel) -> serde_json::Value {
    let mut layout = Vec::new();
    let mut gen = Some(model);
    let mut k = 0;
    while let Some(m) = gen {
        for (j, net) in m.nets.iter().enumerate() {
            for (name, t) in net.tensor_names().into_iter().zip(net.tensors()) {
                ckpt.arrays.push((format!("{prefix}.gen{k}.net{j}.{name}"), t.clone()));
            }
        }
        layout.push(GenerationLayout {
            nets: m.nets.iter().map(|n| n.config).collect(),
        });
        gen = m.frozen.as_deref();
        k += 1;
    }
    serde_json::to_value(layout).expect("layout serializes")
}

/// Rebuilds a model stored by [`store_model`], re-attaching `encoder`.
pub fn load_model(
    ckpt: &Checkpoint,
    prefix: &str,
    layout: &serde_json::Value,
    encoder: &BoundaryEncoder,
) -> Result<FieldModel, NetworkError> {
    let layout: Vec<GenerationLayout> =
        serde_json::from_value(layout.clone()).map_err(|e| format_err(e.to_string()))?;
    let mut model: Option<FieldModel> = None;
    for (k, gen) in layout.iter().enumerate().rev() {
        let mut nets = Vec::new();
        for (j, cfg) in gen.nets.iter().enumerate() {
            let names = ResNetParams::zeros(*cfg)?.tensor_names();
            let tensors = names
                .iter()
                .map(|n| {
                    let key = format!("{prefix}.gen{k}.net{j}.{n}");
                    ckpt.get(&key)
                        .cloned()
                        .ok_or_else(|| format_err(format!("missing array `{key}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            nets.push(ResNetParams::from_tensors(*cfg, tensors)?);
        }
        let mut m = FieldModel::new(nets, encoder.clone())?;
        m.frozen = model.map(Box::new);
        model = Some(m);
    }
    model.ok_or_else(|| format_err(format!("no generations stored for `{prefix}`")))
}
