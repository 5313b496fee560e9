//! Binary parameter snapshots.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic     4 bytes  "SLDE"
//! version   u32      1
//! layers    u32
//! per layer:
//!   width       u32
//!   fan_in      u32
//!   activation  u8   (0 = ReLU, 1 = softmax)
//!   weights     width * fan_in f32, row-major by neuron
//!   biases      width f32
//!   has_adam    u8   (0 or 1)
//!   if has_adam, per neuron:
//!     m  fan_in + 1 f32 (weights then bias)
//!     v  fan_in + 1 f32
//!     steps u32
//! ```
//!
//! Hash tables are not stored; they are rebuilt from the loaded weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::Ordering;

use super::{Activation, NetError, Network};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLDE";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> NetError {
    NetError::Checkpoint(e.to_string())
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s(w: &mut impl Write, vs: &[f32]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32, NetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u8(r: &mut impl Read) -> Result<u8, NetError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b[0])
}

fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>, NetError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(io_err)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Network {
    pub fn write_checkpoint<W: Write>(&self, w: &mut W, with_adam: bool) -> Result<(), NetError> {
        let run = |w: &mut W| -> std::io::Result<()> {
            w.write_all(CHECKPOINT_MAGIC)?;
            put_u32(w, CHECKPOINT_VERSION)?;
            put_u32(w, self.layers.len() as u32)?;
            for layer in &self.layers {
                put_u32(w, layer.width() as u32)?;
                put_u32(w, layer.fan_in as u32)?;
                w.write_all(&[match layer.activation {
                    Activation::Relu => 0,
                    Activation::Softmax => 1,
                }])?;
                for n in &layer.neurons {
                    put_f32s(w, &n.weights())?;
                }
                let biases: Vec<f32> = layer.neurons.iter().map(|n| n.bias()).collect();
                put_f32s(w, &biases)?;
                w.write_all(&[with_adam as u8])?;
                if with_adam {
                    for n in &layer.neurons {
                        let (m, v) = n.moments();
                        put_f32s(w, &m)?;
                        put_f32s(w, &v)?;
                        put_u32(w, n.steps())?;
                    }
                }
            }
            w.flush()
        };
        run(w).map_err(io_err)
    }

    pub fn save_checkpoint(&self, path: &Path, with_adam: bool) -> Result<(), NetError> {
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_checkpoint(&mut w, with_adam)
    }

    /// Loads parameters into this network, whose shape must match the
    /// snapshot, then rebuilds all hash tables. Nothing is modified if the
    /// snapshot is malformed.
    pub fn read_checkpoint<R: Read>(&mut self, r: &mut R) -> Result<(), NetError> {
        let bad = |msg: String| NetError::Checkpoint(msg);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n_layers = get_u32(r)? as usize;
        if n_layers != self.layers.len() {
            return Err(bad(format!("{n_layers} layers, network has {}", self.layers.len())));
        }
        struct Loaded {
            weights: Vec<f32>,
            biases: Vec<f32>,
            adam: Option<Vec<(Vec<f32>, Vec<f32>, u32)>>,
        }
        let mut loaded = Vec::with_capacity(n_layers);
        for (l, layer) in self.layers.iter().enumerate() {
            let width = get_u32(r)? as usize;
            let fan_in = get_u32(r)? as usize;
            if width != layer.width() || fan_in != layer.fan_in {
                return Err(bad(format!(
                    "layer {l} is {width}x{fan_in}, network has {}x{}",
                    layer.width(),
                    layer.fan_in
                )));
            }
            let act = get_u8(r)?;
            let expected = match layer.activation {
                Activation::Relu => 0,
                Activation::Softmax => 1,
            };
            if act != expected {
                return Err(bad(format!("layer {l} activation tag {act}")));
            }
            let weights = get_f32s(r, width * fan_in)?;
            let biases = get_f32s(r, width)?;
            let adam = match get_u8(r)? {
                0 => None,
                1 => Some(
                    (0..width)
                        .map(|_| Ok((get_f32s(r, fan_in + 1)?, get_f32s(r, fan_in + 1)?, get_u32(r)?)))
                        .collect::<Result<Vec<_>, NetError>>()?,
                ),
                t => return Err(bad(format!("layer {l} optimizer flag {t}"))),
            };
            loaded.push(Loaded { weights, biases, adam });
        }
        for (layer, data) in self.layers.iter().zip(&loaded) {
            let fan_in = layer.fan_in;
            for (j, n) in layer.neurons.iter().enumerate() {
                n.set_weights(&data.weights[j * fan_in..(j + 1) * fan_in]);
                n.set_bias(data.biases[j]);
                match &data.adam {
                    Some(states) => {
                        let (m, v, steps) = &states[j];
                        n.adam_m.copy_from(m);
                        n.adam_v.copy_from(v);
                        n.steps.store(*steps, Ordering::Relaxed);
                    }
                    None => {
                        n.adam_m.copy_from(&vec![0.0; fan_in + 1]);
                        n.adam_v.copy_from(&vec![0.0; fan_in + 1]);
                        n.steps.store(0, Ordering::Relaxed);
                    }
                }
            }
        }
        self.rebuild_tables()
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), NetError> {
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        self.read_checkpoint(&mut r)
    }
}
