//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PDEGNN1\n"
//! u32 config length, config bytes (UTF-8 key=value lines)
//! u32 parameter count
//! per parameter:
//!   u16 name length, name bytes
//!   u32 rows, u32 cols, u8 element width (4 or 8)
//!   rows·cols values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{Model, ModelConfig, NetworkError};
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDEGNN1\n";

/// Config echo plus named parameter tensors. Values are widened to `f64`
/// in memory; `width` records what is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Array2<f64>)>,
    pub width: u8,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Model<T>) -> Self {
        Self {
            config: model.config().clone(),
            params: model
                .params()
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.mapv(Real::as_f64)))
                .collect(),
            width: T::WIDTH,
        }
    }

    /// Input feature count and class count, read off `w_in` / `w_out`.
    pub fn io_dims(&self) -> Result<(usize, usize), NetworkError> {
        let find = |name: &str| {
            self.params
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.dim())
                .ok_or_else(|| NetworkError::Checkpoint(format!("missing {name}")))
        };
        Ok((find("w_in")?.0, find("w_out")?.1))
    }

    pub fn write(&self, path: &Path) -> Result<(), NetworkError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NetworkError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let cfg = self.config.to_kv();
        w.write_u32::<LittleEndian>(cfg.len() as u32)?;
        w.write_all(cfg.as_bytes())?;
        w.write_u32::<LittleEndian>(self.params.len() as u32)?;
        for (name, value) in &self.params {
            let name_len = u16::try_from(name.len())
                .map_err(|_| NetworkError::Checkpoint(format!("name too long: {name}")))?;
            w.write_u16::<LittleEndian>(name_len)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(value.nrows() as u32)?;
            w.write_u32::<LittleEndian>(value.ncols() as u32)?;
            w.write_u8(self.width)?;
            for &v in value.iter() {
                match self.width {
                    4 => w.write_f32::<LittleEndian>(v as f32)?,
                    _ => w.write_f64::<LittleEndian>(v)?,
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, NetworkError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NetworkError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NetworkError::Checkpoint("bad header, expected PDEGNN1".into()));
        }
        let cfg_len = r.read_u32::<LittleEndian>()? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let cfg = String::from_utf8(cfg).map_err(|_| NetworkError::Checkpoint("config is not UTF-8".into()))?;
        let config = ModelConfig::from_kv(&cfg)?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut params = Vec::with_capacity(count);
        let mut width = 8;
        for _ in 0..count {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| NetworkError::Checkpoint("name is not UTF-8".into()))?;
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            width = r.read_u8()?;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(match width {
                    4 => r.read_f32::<LittleEndian>()? as f64,
                    8 => r.read_f64::<LittleEndian>()?,
                    w => return Err(NetworkError::Checkpoint(format!("unsupported width {w}"))),
                });
            }
            let value = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
            params.push((name, value));
        }
        Ok(Self { config, params, width })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockKind;
    use crate::graph::Graph;
    use crate::network::init_model;

    fn graph() -> Graph {
        Graph::from_oriented(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn round_trip_restores_parameters() {
        let cfg = ModelConfig {
            block: BlockKind::MixAw,
            depth: 3,
            channels: 5,
            ..ModelConfig::default()
        };
        let model = init_model::<f32>(&cfg, graph(), 7, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"PDEGNN1\n"));
        let ckpt = Checkpoint::read(&path).unwrap();
        assert_eq!(ckpt.width, 4);
        let back = Model::<f32>::from_checkpoint(&ckpt, graph()).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.config(), model.config());
    }

    #[test]
    fn rejects_foreign_header_and_bad_shapes() {
        let mut bytes: &[u8] = b"NOTAMODEL";
        assert!(Checkpoint::read_from(&mut bytes).is_err());
        let model = init_model::<f64>(&ModelConfig::default(), graph(), 3, 2).unwrap();
        let mut ckpt = Checkpoint::from_model(&model);
        ckpt.params[1].1 = Array2::zeros((1, 1));
        assert!(Model::<f64>::from_checkpoint(&ckpt, graph()).is_err());
    }
}
