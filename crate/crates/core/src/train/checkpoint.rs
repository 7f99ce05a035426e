//! Single-file binary checkpoints: architecture, parameters, batch-norm
//! buffers, optimizer velocities and the epoch counter. Values round-trip
//! bit-exactly (f64 bit patterns, little endian).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{DualStreamModel, ModelConfig, ParamVisitor};
use crate::train::optim::SgdMomentum;

const MAGIC: &[u8; 8] = b"NSEGCKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: malformed checkpoint: {msg}")]
    Malformed { path: String, msg: String },
}

pub struct Checkpoint {
    pub model: DualStreamModel,
    pub optimizer: SgdMomentum,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

fn write_array(w: &mut impl Write, name: &str, kind: u8, data: &[f64]) -> std::io::Result<()> {
    w.write_u8(kind)?;
    w.write_u16::<LittleEndian>(name.len() as u16)?;
    w.write_all(name.as_bytes())?;
    w.write_u64::<LittleEndian>(data.len() as u64)?;
    for &v in data {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

fn read_array(r: &mut impl Read) -> std::io::Result<(u8, String, Vec<f64>)> {
    let kind = r.read_u8()?;
    let name_len = r.read_u16::<LittleEndian>()? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8_lossy(&name).into_owned();
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok((kind, name, data))
}

pub fn save_checkpoint(
    path: &Path,
    model: &mut DualStreamModel,
    optimizer: &SgdMomentum,
    epoch: usize,
    seed: u64,
) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let cfg = &model.cfg;
        w.write_u32::<LittleEndian>(cfg.in_channels as u32)?;
        w.write_u32::<LittleEndian>(cfg.num_classes as u32)?;
        w.write_u32::<LittleEndian>(cfg.widths.len() as u32)?;
        for &v in &cfg.widths {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        for &v in &cfg.strides {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        w.write_u32::<LittleEndian>(cfg.fusion_hidden as u32)?;
        w.write_u32::<LittleEndian>(cfg.fusion_kernel as u32)?;
        w.write_u8(u8::from(cfg.dual_stream))?;
        w.write_u64::<LittleEndian>(epoch as u64)?;
        w.write_u64::<LittleEndian>(seed)?;
        w.write_u64::<LittleEndian>(optimizer.momentum.to_bits())?;

        struct Collect(Vec<(u8, String, Vec<f64>)>);
        impl ParamVisitor for Collect {
            fn param(&mut self, name: &str, data: &mut [f64], _grad: &mut [f64]) {
                self.0.push((0, name.to_string(), data.to_vec()));
            }
            fn buffer(&mut self, name: &str, data: &mut [f64]) {
                self.0.push((1, name.to_string(), data.to_vec()));
            }
        }
        let mut entries = Collect(Vec::new());
        model.visit_params(&mut entries);
        w.write_u32::<LittleEndian>(entries.0.len() as u32)?;
        for (kind, name, data) in &entries.0 {
            write_array(&mut w, name, *kind, data)?;
        }
        let vel = optimizer.velocities();
        w.write_u32::<LittleEndian>(vel.len() as u32)?;
        for (name, data) in vel {
            write_array(&mut w, name, 2, data)?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path.display().to_string() });
    }
    let mut inner = || -> std::io::Result<Checkpoint> {
        let in_channels = r.read_u32::<LittleEndian>()? as usize;
        let num_classes = r.read_u32::<LittleEndian>()? as usize;
        let stages = r.read_u32::<LittleEndian>()? as usize;
        let mut widths = Vec::with_capacity(stages);
        for _ in 0..stages {
            widths.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let mut strides = Vec::with_capacity(stages);
        for _ in 0..stages {
            strides.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let fusion_hidden = r.read_u32::<LittleEndian>()? as usize;
        let fusion_kernel = r.read_u32::<LittleEndian>()? as usize;
        let dual_stream = r.read_u8()? != 0;
        let epoch = r.read_u64::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let momentum = f64::from_bits(r.read_u64::<LittleEndian>()?);

        let cfg = ModelConfig {
            in_channels,
            num_classes,
            widths,
            strides,
            fusion_hidden,
            fusion_kernel,
            dual_stream,
        };
        // Freshly initialized weights are overwritten entry by entry below.
        let mut model = DualStreamModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));

        let n_entries = r.read_u32::<LittleEndian>()? as usize;
        let mut entries = std::collections::HashMap::new();
        for _ in 0..n_entries {
            let (_kind, name, data) = read_array(&mut r)?;
            entries.insert(name, data);
        }
        struct Restore {
            entries: std::collections::HashMap<String, Vec<f64>>,
            missing: Vec<String>,
        }
        impl ParamVisitor for Restore {
            fn param(&mut self, name: &str, data: &mut [f64], _grad: &mut [f64]) {
                self.buffer(name, data);
            }
            fn buffer(&mut self, name: &str, data: &mut [f64]) {
                match self.entries.remove(name) {
                    Some(v) if v.len() == data.len() => data.copy_from_slice(&v),
                    _ => self.missing.push(name.to_string()),
                }
            }
        }
        let mut restore = Restore { entries, missing: Vec::new() };
        model.visit_params(&mut restore);
        if !restore.missing.is_empty() || !restore.entries.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!(
                    "missing arrays {:?}, unused arrays {:?}",
                    restore.missing,
                    restore.entries.keys().collect::<Vec<_>>()
                ),
            ));
        }

        let n_vel = r.read_u32::<LittleEndian>()? as usize;
        let mut velocities = Vec::with_capacity(n_vel);
        for _ in 0..n_vel {
            let (_kind, name, data) = read_array(&mut r)?;
            velocities.push((name, data));
        }
        let mut optimizer = SgdMomentum::new(momentum);
        optimizer.set_velocities(velocities);

        Ok(Checkpoint { model, optimizer, epoch, seed })
    };
    inner().map_err(|e| CheckpointError::Malformed { path: path.display().to_string(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor4;
    use crate::rng::{domain, stream_rng};

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            in_channels: 3,
            num_classes: 3,
            widths: vec![4, 8],
            strides: vec![2, 1],
            fusion_hidden: 8,
            fusion_kernel: 1,
            dual_stream: true,
        };
        let mut rng = stream_rng(3, domain::MODEL_INIT, 0);
        let mut model = DualStreamModel::new(cfg, &mut rng);
        let mut opt = SgdMomentum::new(0.9);

        // One training-ish step so velocities and running stats are nontrivial.
        let x = Tensor4::from_data(2, 3, 8, 8, (0..384).map(|i| (i % 97) as f64 / 97.0).collect());
        let fwd = model.forward_train(&x);
        let d_primary = Tensor4::from_data(2, 3, 8, 8, vec![1e-3; 384]);
        let d_noisy = Tensor4::from_data(2, 3, 8, 8, vec![2e-3; 384]);
        model.zero_grads();
        model.backward(&fwd.cache, &d_primary, Some(&d_noisy));
        opt.step(&mut model, 0.01);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &mut model, &opt, 7, 42).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.seed, 42);

        // Evaluation outputs must agree bitwise.
        let (a, an) = model.forward_eval(&x);
        let (b, bn) = loaded.model.forward_eval(&x);
        assert_eq!(a.data, b.data);
        assert_eq!(an.unwrap().data, bn.unwrap().data);

        // Saving the loaded model reproduces identical bytes.
        let path2 = dir.path().join("ck2.bin");
        let mut model2 = loaded.model;
        save_checkpoint(&path2, &mut model2, &loaded.optimizer, 7, 42).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
